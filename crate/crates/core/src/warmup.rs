//! Single-sample one-hidden-layer linear network `f = n^{-1/2} v . u`
//! trained on `(x = 1, y = 0)` with loss `f^2 / 2`.
//!
//! Two equivalent simulators are provided: gradient descent on the weights
//! `(u, v)`, and the closed two-variable recursion on `(f, lambda)` where
//! `lambda = (|u|^2 + |v|^2) / n` is the (scalar) NTK. The recursion is exact,
//! so each simulator is an oracle for the other.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::linalg::{axpy, dot, normalize};
use crate::numerics::{gaussian_vector, Rng};
use crate::phase::{classify_converging, PhaseCriteria, PhaseReport};
use crate::trace::{TraceMeta, TrainTrace};

/// |f| above this is treated as numerical divergence.
pub const OVERFLOW_GUARD: f64 = 1e150;

/// Reduced state of the warmup model.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WarmupState {
    pub f: f64,
    pub lambda: f64,
    pub n: usize,
    pub step: u64,
}

impl WarmupState {
    pub fn loss(&self) -> f64 {
        0.5 * self.f * self.f
    }
}

/// Raw weights of the warmup model.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WarmupParams {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl WarmupParams {
    pub fn width(&self) -> usize {
        self.u.len()
    }

    pub fn output(&self) -> f64 {
        dot(&self.v, &self.u) / libm::sqrt(self.width() as f64)
    }

    pub fn kernel(&self) -> f64 {
        (dot(&self.v, &self.v) + dot(&self.u, &self.u)) / self.width() as f64
    }

    pub fn loss(&self) -> f64 {
        let f = self.output();
        0.5 * f * f
    }

    pub fn state(&self, step: u64) -> WarmupState {
        WarmupState {
            f: self.output(),
            lambda: self.kernel(),
            n: self.width(),
            step,
        }
    }
}

/// `u, v` i.i.d. standard normal. `u` is drawn first, then `v`, from one stream.
pub fn init_warmup(rng: &mut Rng, n: usize) -> Result<WarmupParams> {
    if n == 0 {
        return Err(Error::InvalidConfig("warmup width must be at least 1".into()));
    }
    let u = gaussian_vector(rng, n, 1.0);
    let v = gaussian_vector(rng, n, 1.0);
    Ok(WarmupParams { u, v })
}

/// One step of the exact function-space recursion
/// `f' = (1 - eta lambda + eta^2 f^2 / n) f`,
/// `lambda' = lambda + (eta f^2 / n)(eta lambda - 4)`.
pub fn step_reduced(state: &WarmupState, eta: f64) -> Result<WarmupState> {
    let n = state.n as f64;
    let f = state.f;
    let f2_n = f * f / n;
    let f_next = (1.0 - eta * state.lambda + eta * eta * f2_n) * f;
    let lambda_next = state.lambda + eta * f2_n * (eta * state.lambda - 4.0);
    let step = state.step + 1;
    if !(libm::fabs(f_next) <= OVERFLOW_GUARD) {
        return Err(Error::Overflow { step });
    }
    Ok(WarmupState {
        f: f_next,
        lambda: lambda_next,
        n: state.n,
        step,
    })
}

/// One gradient descent step on the weights:
/// `u' = u - eta n^{-1/2} f v`, `v' = v - eta n^{-1/2} f u`.
pub fn step_params(params: &WarmupParams, eta: f64) -> Result<WarmupParams> {
    let n = params.width();
    let c = eta / libm::sqrt(n as f64);
    let cg = c * params.output();
    let mut u = params.u.clone();
    let mut v = params.v.clone();
    axpy(-cg, &params.v, &mut u);
    axpy(-cg, &params.u, &mut v);
    let next = WarmupParams { u, v };
    if !(libm::fabs(next.output()) <= OVERFLOW_GUARD) {
        return Err(Error::Overflow { step: 0 });
    }
    Ok(next)
}

/// Simulates the reduced recursion from `params` until the loss drops below
/// `criteria.conv_tol`, exceeds `criteria.div_threshold`, overflows, or
/// `max_steps` is reached, and classifies the run.
///
/// Trace aux columns: `eta_lambda`, `f`.
pub fn run_warmup(
    params: &WarmupParams,
    eta: f64,
    max_steps: u64,
    criteria: &PhaseCriteria,
) -> (TrainTrace, PhaseReport) {
    let state = params.state(0);
    run_warmup_state(state, eta, max_steps, criteria, 0)
}

pub(crate) fn run_warmup_state(
    mut state: WarmupState,
    eta: f64,
    max_steps: u64,
    criteria: &PhaseCriteria,
    seed: u64,
) -> (TrainTrace, PhaseReport) {
    let lambda0 = state.lambda;
    let mut trace = TrainTrace::new(
        TraceMeta {
            eta,
            seed,
            model: format!("warmup n={}", state.n),
            lambda0,
        },
        &["eta_lambda", "f"],
    );
    let record = |trace: &mut TrainTrace, s: &WarmupState| {
        trace.push(s.step, s.loss(), Some(s.lambda), vec![eta * s.lambda, s.f]);
    };
    record(&mut trace, &state);
    while state.step < max_steps && state.loss() >= criteria.conv_tol {
        match step_reduced(&state, eta) {
            Ok(next) => {
                state = next;
                record(&mut trace, &state);
                if state.loss() > criteria.div_threshold {
                    trace.diverged = true;
                    break;
                }
            }
            Err(_) => {
                trace.push(state.step + 1, f64::INFINITY, Some(state.lambda), vec![eta * state.lambda, f64::INFINITY]);
                trace.diverged = true;
                break;
            }
        }
    }
    let report = classify_converging(&trace, lambda0, criteria);
    (trace, report)
}

/// Like [`run_warmup`] but records the seed in the trace metadata.
pub fn run_warmup_seeded(
    params: &WarmupParams,
    eta: f64,
    max_steps: u64,
    criteria: &PhaseCriteria,
    seed: u64,
) -> (TrainTrace, PhaseReport) {
    run_warmup_state(params.state(0), eta, max_steps, criteria, seed)
}

/// One axis of a rectangular grid: `count` evenly spaced values in `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl GridAxis {
    pub fn new(min: f64, max: f64, count: usize) -> Self {
        Self { min, max, count }
    }

    pub fn values(&self) -> Vec<f64> {
        match self.count {
            0 => Vec::new(),
            1 => vec![self.min],
            c => (0..c)
                .map(|i| self.min + (self.max - self.min) * i as f64 / (c - 1) as f64)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SurfacePoint {
    pub a: f64,
    pub b: f64,
    pub loss: f64,
    pub lambda: f64,
}

/// The 2D parameter subspace `u = a r + b s`, `v = a r - b s` with `r, s`
/// orthonormal. Gradient descent started in the subspace stays in it.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceBasis {
    pub r: Vec<f64>,
    pub s: Vec<f64>,
}

impl SliceBasis {
    /// `r` from stream 0 of `r_seed`, `s` from stream 1 of `s_seed`, then
    /// Gram-Schmidt (applied twice).
    pub fn new(n: usize, r_seed: u64, s_seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidConfig("surface slice needs width >= 2".into()));
        }
        let mut r = gaussian_vector(&mut Rng::with_stream(r_seed, 0), n, 1.0);
        let mut s = gaussian_vector(&mut Rng::with_stream(s_seed, 1), n, 1.0);
        normalize(&mut r);
        for _ in 0..2 {
            let c = dot(&r, &s);
            axpy(-c, &r, &mut s);
            normalize(&mut s);
        }
        Ok(Self { r, s })
    }

    pub fn params_at(&self, a: f64, b: f64) -> WarmupParams {
        let u = self.r.iter().zip(&self.s).map(|(r, s)| a * r + b * s).collect();
        let v = self.r.iter().zip(&self.s).map(|(r, s)| a * r - b * s).collect();
        WarmupParams { u, v }
    }

    /// Projects `params` onto the slice. Returns `(a, b, residual)`, where the
    /// residual is the norm of the parts of `(u, v)` outside the subspace.
    pub fn coordinates(&self, params: &WarmupParams) -> (f64, f64, f64) {
        let a = 0.5 * (dot(&params.u, &self.r) + dot(&params.v, &self.r));
        let b = 0.5 * (dot(&params.u, &self.s) - dot(&params.v, &self.s));
        let back = self.params_at(a, b);
        let mut res = 0.0;
        for (x, y) in params.u.iter().zip(&back.u).chain(params.v.iter().zip(&back.v)) {
            res += (x - y) * (x - y);
        }
        (a, b, libm::sqrt(res))
    }
}

/// Loss and kernel over an `(a, b)` grid in the slice subspace, a-major order.
pub fn surface_slice(
    n: usize,
    a_axis: GridAxis,
    b_axis: GridAxis,
    r_seed: u64,
    s_seed: u64,
) -> Result<(SliceBasis, Vec<SurfacePoint>)> {
    let basis = SliceBasis::new(n, r_seed, s_seed)?;
    let bs = b_axis.values();
    let mut points = Vec::with_capacity(a_axis.count * b_axis.count);
    for a in a_axis.values() {
        for &b in &bs {
            let p = basis.params_at(a, b);
            points.push(SurfacePoint {
                a,
                b,
                loss: p.loss(),
                lambda: p.kernel(),
            });
        }
    }
    Ok((basis, points))
}
