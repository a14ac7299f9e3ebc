//! First-order (tangent) models anchored at a snapshot of an MLP, trained
//! with one JVP and one VJP per step and no materialized Jacobian, and the
//! relative change of the empirical kernel between two snapshots.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mlp::{argmax_agreement, ntk_gram, ntk_top_eig, sgd_train, Batch, ForwardCache, MlpModel, OptimizerCfg, TrainOpts};
use crate::numerics::linalg::norm;
use crate::numerics::{EigOptions, Matrix};
use crate::phase::PhaseCriteria;
use crate::trace::{TraceMeta, TrainTrace};

/// `f_lin(x) = f(x; theta0) + J(theta0, x) delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentModel {
    pub anchor: MlpModel,
    pub delta: Vec<f64>,
}

impl TangentModel {
    pub fn outputs(&self, x: &Matrix) -> Result<Matrix> {
        let cache = self.anchor.forward_cached(x)?;
        tangent_outputs(&self.anchor, &cache, &self.delta)
    }

    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        let f = self.outputs(&batch.x)?;
        Ok(residual_loss(&f, &batch.y)?.0)
    }

    /// Gradient of the tangent loss: `J^T (f_lin - y) / (k |B|)`.
    pub fn grad(&self, batch: &Batch) -> Result<Vec<f64>> {
        let cache = self.anchor.forward_cached(&batch.x)?;
        let f = tangent_outputs(&self.anchor, &cache, &self.delta)?;
        let (_, r) = residual_loss(&f, &batch.y)?;
        self.anchor.vjp_cached(&cache, &r)
    }

    pub fn accuracy(&self, batch: &Batch) -> Result<f64> {
        Ok(argmax_agreement(&self.outputs(&batch.x)?, &batch.y))
    }

    /// The network `theta0 + delta` (no longer linear in `delta`).
    pub fn nonlinear_model(&self) -> MlpModel {
        let mut m = self.anchor.clone();
        m.params.iter_mut().zip(&self.delta).for_each(|(p, d)| *p += d);
        m
    }
}

fn tangent_outputs(anchor: &MlpModel, cache: &ForwardCache, delta: &[f64]) -> Result<Matrix> {
    let mut f = anchor.jvp_cached(cache, delta)?;
    for (v, b) in f.as_mut_slice().iter_mut().zip(cache.output.as_slice()) {
        *v += b;
    }
    Ok(f)
}

/// Loss and the residual scaled by `1/(k |B|)`.
fn residual_loss(f: &Matrix, y: &Matrix) -> Result<(f64, Matrix)> {
    if f.rows() != y.rows() || f.cols() != y.cols() {
        return Err(Error::ShapeMismatch {
            what: "targets",
            expected: f.rows() * f.cols(),
            found: y.rows() * y.cols(),
        });
    }
    let denom = (f.rows() * f.cols()) as f64;
    let mut r = f.clone();
    let mut ss = 0.0;
    for (ri, yi) in r.as_mut_slice().iter_mut().zip(y.as_slice()) {
        *ri -= yi;
        ss += *ri * *ri;
        *ri /= denom;
    }
    Ok((ss / (2.0 * denom), r))
}

/// Tangent model at `model` with zero offset.
pub fn linearize_at(model: &MlpModel) -> TangentModel {
    TangentModel {
        anchor: model.clone(),
        delta: vec![0.0; model.num_params()],
    }
}

/// Full-batch gradient descent on the offset. The error on the training set
/// then obeys `f~_{t+1} = (I - eta Theta0) f~_t` with the anchor's kernel.
///
/// The trace records the loss every step and `lambda(Theta0)` at step 0;
/// it is flagged diverged once the loss exceeds `criteria.div_threshold`.
/// Trace aux columns: `grad_norm`.
pub fn train_tangent(
    tm: &TangentModel,
    data: &Batch,
    eta: f64,
    steps: u64,
    criteria: &PhaseCriteria,
) -> Result<(TangentModel, TrainTrace)> {
    let cache = tm.anchor.forward_cached(&data.x)?;
    let lambda0 = ntk_top_eig(&tm.anchor, &data.x, EigOptions::with_tol(1e-8))?.value;
    let mut trace = TrainTrace::new(
        TraceMeta {
            eta,
            seed: 0,
            model: format!("tangent of {}", tm.anchor.spec.describe()),
            lambda0,
        },
        &["grad_norm"],
    );
    let mut delta = tm.delta.clone();
    for step in 0..=steps {
        let f = tangent_outputs(&tm.anchor, &cache, &delta)?;
        let (loss, r) = residual_loss(&f, &data.y)?;
        if !(loss <= criteria.div_threshold) {
            trace.push(step, if loss.is_nan() { f64::INFINITY } else { loss }, None, vec![f64::NAN]);
            trace.diverged = true;
            break;
        }
        let g = tm.anchor.vjp_cached(&cache, &r)?;
        trace.push(step, loss, (step == 0).then_some(lambda0), vec![norm(&g)]);
        if step == steps {
            break;
        }
        delta.iter_mut().zip(&g).for_each(|(d, g)| *d -= eta * g);
    }
    Ok((
        TangentModel {
            anchor: tm.anchor.clone(),
            delta,
        },
        trace,
    ))
}

/// `|Theta_b - Theta_a|_F / |Theta_a|_F` for the normalized kernels of two snapshots on `x`.
pub fn kernel_change(a: &MlpModel, b: &MlpModel, x: &Matrix) -> Result<f64> {
    let ta = ntk_gram(a, x)?;
    let tb = ntk_gram(b, x)?;
    let mut diff = tb;
    for (d, v) in diff.as_mut_slice().iter_mut().zip(ta.as_slice()) {
        *d -= v;
    }
    let base = ta.frobenius();
    if base == 0.0 {
        return Err(Error::InvalidConfig("kernel at the reference snapshot is zero".into()));
    }
    Ok(diff.frobenius() / base)
}

/// Trains `model` for `t_end` steps with `cfg` (full batch) and returns the
/// kernel change between the snapshots at `t_lin` and `t_end`, measured on `x`.
pub fn kernel_change_during_training(
    model: &MlpModel,
    data: &Batch,
    cfg: &OptimizerCfg,
    t_lin: u64,
    t_end: u64,
    x: &Matrix,
) -> Result<f64> {
    if t_end < t_lin {
        return Err(Error::InvalidConfig("t_end must not precede t_lin".into()));
    }
    let advance = |m: &MlpModel, steps: u64| -> Result<MlpModel> {
        if steps == 0 {
            return Ok(m.clone());
        }
        let mut opts = TrainOpts::new(steps);
        opts.eig_every = 0;
        let (next, trace) = sgd_train(m, data, x, cfg, &opts, 0)?;
        if trace.diverged {
            return Err(Error::InvalidConfig(format!(
                "training diverged at eta = {} before the kernel snapshot",
                cfg.eta
            )));
        }
        Ok(next)
    };
    let at_lin = advance(model, t_lin)?;
    if t_end == t_lin {
        return Ok(0.0);
    }
    let at_end = advance(&at_lin, t_end - t_lin)?;
    kernel_change(&at_lin, &at_end, x)
}
