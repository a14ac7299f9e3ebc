//! One-hidden-layer linear network `f(x) = n^{-1/2} v^T u x` on `m` samples
//! in `d` dimensions, with loss `|f - y|^2 / (2m)`.
//!
//! The error/kernel recursion in function space is exact but needs two
//! contractions of the weights (`|v|^2` and `u^T u`) that it cannot evolve on
//! its own, so the parameters are co-evolved and the function-space update
//! is checked against them.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::linalg::{dot, matmul, norm, Op};
use crate::numerics::{gaussian_vector, sym_eigen, top_eig_lanczos, EigOptions, Matrix, Rng};
use crate::phase::{classify_converging, PhaseCriteria, PhaseReport};
use crate::trace::{TraceMeta, TrainTrace};
use crate::warmup::OVERFLOW_GUARD;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LinearNetParams {
    /// `n x d` first layer.
    pub u: Matrix,
    /// Length-`n` readout.
    pub v: Vec<f64>,
}

impl LinearNetParams {
    /// `u` then `v`, i.i.d. standard normal.
    pub fn init(rng: &mut Rng, n: usize, d: usize) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidConfig("linear model needs n >= 1 and d >= 1".into()));
        }
        let u = Matrix::from_vec(n, d, gaussian_vector(rng, n * d, 1.0))?;
        let v = gaussian_vector(rng, n, 1.0);
        Ok(Self { u, v })
    }

    pub fn width(&self) -> usize {
        self.v.len()
    }

    pub fn input_dim(&self) -> usize {
        self.u.cols()
    }

    /// Hidden activations `u x_alpha` as an `m x n` matrix.
    fn hidden(&self, x: &Matrix) -> Matrix {
        matmul(x, Op::N, &self.u, Op::T)
    }

    fn outputs_from_hidden(&self, hidden: &Matrix) -> Vec<f64> {
        let sqrt_n = libm::sqrt(self.width() as f64);
        (0..hidden.rows())
            .map(|a| dot(&self.v, hidden.row(a)) / sqrt_n)
            .collect()
    }

    pub fn outputs(&self, x: &Matrix) -> Vec<f64> {
        self.outputs_from_hidden(&self.hidden(x))
    }
}

/// Training inputs (rows of `x`) and scalar labels.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegressionSet {
    pub x: Matrix,
    pub y: Vec<f64>,
}

impl RegressionSet {
    pub fn new(x: Matrix, y: Vec<f64>) -> Result<Self> {
        if x.rows() == 0 || x.cols() == 0 {
            return Err(Error::InvalidConfig("regression set needs m >= 1 and d >= 1".into()));
        }
        if y.len() != x.rows() {
            return Err(Error::ShapeMismatch {
                what: "labels",
                expected: x.rows(),
                found: y.len(),
            });
        }
        if x.as_slice().iter().chain(&y).any(|v| v.is_nan()) {
            return Err(Error::InvalidConfig("regression set contains NaN".into()));
        }
        Ok(Self { x, y })
    }

    /// The single-sample warmup instance `x = 1, y = 0`.
    pub fn warmup() -> Self {
        Self {
            x: Matrix::from_fn(1, 1, |_, _| 1.0),
            y: vec![0.0],
        }
    }

    /// Rows i.i.d. `N(0, I/d)`, labels alternating `+1, -1`.
    pub fn gaussian(rng: &mut Rng, m: usize, d: usize) -> Result<Self> {
        let x = Matrix::from_vec(m, d, gaussian_vector(rng, m * d, 1.0 / libm::sqrt(d as f64)))?;
        let y = (0..m).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        Self::new(x, y)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    fn xx(&self, a: usize, b: usize) -> f64 {
        dot(self.x.row(a), self.x.row(b))
    }

    fn x_dot(&self, a: usize, z: &[f64]) -> f64 {
        dot(self.x.row(a), z)
    }

    /// `(1/m) sum_alpha e_alpha x_alpha`.
    fn zeta(&self, err: &[f64]) -> Vec<f64> {
        let m = self.len();
        let mut z = vec![0.0; self.dim()];
        for (a, e) in err.iter().enumerate() {
            for (zk, xk) in z.iter_mut().zip(self.x.row(a)) {
                *zk += xk * e;
            }
        }
        z.iter_mut().for_each(|zk| *zk /= m as f64);
        z
    }
}

/// Outputs, errors, kernel and input-weighted error on the training set.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FunctionState {
    pub f: Vec<f64>,
    pub f_tilde: Vec<f64>,
    /// `m x m`, normalized by `1/(n m)`.
    pub theta: Matrix,
    pub zeta: Vec<f64>,
}

impl FunctionState {
    pub fn loss(&self) -> f64 {
        let m = self.f_tilde.len() as f64;
        dot(&self.f_tilde, &self.f_tilde) / (2.0 * m)
    }

    pub fn top_eigenvalue(&self) -> Result<f64> {
        kernel_top(&self.theta).map(|(l, _)| l)
    }
}

/// The weight contractions the kernel recursion needs.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelAux {
    pub v_norm_sq: f64,
    /// `u^T u`, `d x d`.
    pub u_gram: Matrix,
}

impl KernelAux {
    pub fn from_params(params: &LinearNetParams) -> Self {
        Self {
            v_norm_sq: dot(&params.v, &params.v),
            u_gram: matmul(&params.u, Op::T, &params.u, Op::N),
        }
    }
}

fn check_shapes(params: &LinearNetParams, data: &RegressionSet) -> Result<()> {
    if params.input_dim() != data.dim() {
        return Err(Error::ShapeMismatch {
            what: "input dimension",
            expected: params.input_dim(),
            found: data.dim(),
        });
    }
    Ok(())
}

/// Evaluates outputs, errors, the normalized kernel
/// `Theta_ab = (|v|^2 x_a.x_b + x_a^T u^T u x_b) / (n m)` and `zeta`.
pub fn forward(params: &LinearNetParams, data: &RegressionSet) -> Result<FunctionState> {
    check_shapes(params, data)?;
    let n = params.width();
    let m = data.len();
    let hidden = params.hidden(&data.x);
    let f = params.outputs_from_hidden(&hidden);
    let f_tilde: Vec<f64> = f.iter().zip(&data.y).map(|(f, y)| f - y).collect();
    let v2 = dot(&params.v, &params.v);
    let norm = n as f64 * m as f64;
    let mut theta = Matrix::zeros(m, m);
    for a in 0..m {
        for b in 0..=a {
            let t = (v2 * data.xx(a, b) + dot(hidden.row(a), hidden.row(b))) / norm;
            theta[(a, b)] = t;
            theta[(b, a)] = t;
        }
    }
    let zeta = data.zeta(&f_tilde);
    Ok(FunctionState {
        f,
        f_tilde,
        theta,
        zeta,
    })
}

/// Gradient descent on `(u, v)`:
/// `u' = u - (eta / sqrt n) v zeta^T`, `v' = v - (eta / sqrt n) u zeta`.
pub fn step_params_full(
    params: &LinearNetParams,
    data: &RegressionSet,
    eta: f64,
) -> Result<LinearNetParams> {
    check_shapes(params, data)?;
    let f = params.outputs(&data.x);
    if f.iter().any(|fa| !(libm::fabs(*fa) <= OVERFLOW_GUARD)) {
        return Err(Error::Overflow { step: 0 });
    }
    let err: Vec<f64> = f.iter().zip(&data.y).map(|(f, y)| f - y).collect();
    let zeta = data.zeta(&err);
    let c = eta / libm::sqrt(params.width() as f64);
    let cz: Vec<f64> = zeta.iter().map(|z| c * z).collect();
    let mut u = params.u.clone();
    let mut v = params.v.clone();
    for i in 0..params.width() {
        let vi = params.v[i];
        let urow = params.u.row(i);
        let mut acc = 0.0;
        for (k, czk) in cz.iter().enumerate() {
            acc += czk * urow[k];
        }
        v[i] = vi - acc;
        for (unew, czk) in u.row_mut(i).iter_mut().zip(&cz) {
            *unew -= czk * vi;
        }
    }
    Ok(LinearNetParams { u, v })
}

/// The exact function-space update of errors and kernel:
///
/// `f~'_a = sum_b (delta_ab - eta Theta_ab) f~_b + eta^2/(n m) (x_a.zeta)(f.f~)`
///
/// `Theta'_ab = Theta_ab - eta/(n m) [(x_b.zeta) f_a + (x_a.zeta) f_b + (2/m)(x_a.x_b)(f~.f)]
///            + eta^2/(n^2 m) [|v|^2 (x_a.zeta)(x_b.zeta) + (zeta^T u^T u zeta)(x_a.x_b)]`
pub fn step_function_full(
    state: &FunctionState,
    aux: &KernelAux,
    data: &RegressionSet,
    eta: f64,
    n: usize,
) -> Result<FunctionState> {
    let m = data.len();
    let d = data.dim();
    if state.f.len() != m
        || state.f_tilde.len() != m
        || state.theta.rows() != m
        || state.theta.cols() != m
        || state.zeta.len() != d
    {
        return Err(Error::InconsistentState("function state does not match the data set"));
    }
    if aux.u_gram.rows() != d || aux.u_gram.cols() != d {
        return Err(Error::InconsistentState("u^T u contraction has the wrong dimension"));
    }
    let nf = n as f64;
    let mf = m as f64;
    let xz: Vec<f64> = (0..m).map(|a| data.x_dot(a, &state.zeta)).collect();
    let f_ft = dot(&state.f, &state.f_tilde);
    let mut g_zeta = vec![0.0; d];
    aux.u_gram.matvec(&state.zeta, &mut g_zeta);
    let zuuz = dot(&state.zeta, &g_zeta);

    let mut theta_ft = vec![0.0; m];
    state.theta.matvec(&state.f_tilde, &mut theta_ft);
    let second = eta * eta / (nf * mf) * f_ft;
    let f_tilde: Vec<f64> = (0..m)
        .map(|a| state.f_tilde[a] - eta * theta_ft[a] + second * xz[a])
        .collect();

    let c1 = eta / (nf * mf);
    let c2 = eta * eta / (nf * nf * mf);
    let mut theta = Matrix::zeros(m, m);
    for a in 0..m {
        for b in 0..=a {
            let xx = data.xx(a, b);
            let t = state.theta[(a, b)]
                - c1 * (xz[b] * state.f[a] + xz[a] * state.f[b] + 2.0 / mf * xx * f_ft)
                + c2 * (aux.v_norm_sq * xz[a] * xz[b] + zuuz * xx);
            theta[(a, b)] = t;
            theta[(b, a)] = t;
        }
    }
    let f = f_tilde.iter().zip(&data.y).map(|(e, y)| e + y).collect();
    let zeta = data.zeta(&f_tilde);
    Ok(FunctionState {
        f,
        f_tilde,
        theta,
        zeta,
    })
}

/// Right-hand side of the projected-kernel identity
/// `f~^T Theta' f~ - f~^T Theta f~ = (eta/n) |zeta|^2 (eta f~^T Theta f~ - 4 f.f~)`,
/// with `f~` held at the current step.
pub fn projected_kernel_increment(state: &FunctionState, eta: f64, n: usize) -> f64 {
    let q = quadratic_form(&state.theta, &state.f_tilde);
    eta / n as f64 * dot(&state.zeta, &state.zeta) * (eta * q - 4.0 * dot(&state.f, &state.f_tilde))
}

fn quadratic_form(a: &Matrix, x: &[f64]) -> f64 {
    let mut ax = vec![0.0; x.len()];
    a.matvec(x, &mut ax);
    dot(x, &ax)
}

/// Top eigenpair of a small kernel matrix, sign fixed so the largest entry is positive.
pub fn kernel_top(theta: &Matrix) -> Result<(f64, Vec<f64>)> {
    if theta.rows() <= 64 {
        Ok(sym_eigen(theta)?.top())
    } else {
        let top = top_eig_lanczos(theta, EigOptions::default(), &mut Rng::new(0))?;
        Ok((top.value, top.vector))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProjectedStep {
    /// Top kernel eigenvalue.
    pub lambda: f64,
    /// Rayleigh quotient `f~^T Theta f~ / |f~|^2`.
    pub lambda_hat: f64,
    /// Error component along the top eigenvector.
    pub fmax: f64,
}

pub fn project_state(state: &FunctionState) -> Result<ProjectedStep> {
    let e2 = dot(&state.f_tilde, &state.f_tilde);
    if e2 == 0.0 {
        return Err(Error::ZeroError);
    }
    let (lambda, e) = kernel_top(&state.theta)?;
    Ok(ProjectedStep {
        lambda,
        lambda_hat: quadratic_form(&state.theta, &state.f_tilde) / e2,
        fmax: dot(&e, &state.f_tilde),
    })
}

/// Rayleigh quotient of the error and its top-eigenvector component, per step.
pub fn projected_dynamics(states: &[FunctionState]) -> Result<Vec<ProjectedStep>> {
    states.iter().map(project_state).collect()
}

/// Gradient descent on the parameters until convergence, divergence or
/// `max_steps`, with the top kernel eigenvalue logged every step.
///
/// Trace aux columns: `eta_lambda`, `f_norm`, `lambda_hat`, `fmax`, `zeta_norm`.
pub fn run_linear(
    params: &LinearNetParams,
    data: &RegressionSet,
    eta: f64,
    max_steps: u64,
    criteria: &PhaseCriteria,
    seed: u64,
) -> Result<(TrainTrace, PhaseReport)> {
    let (_, trace) = train_linear(params, data, eta, max_steps, criteria, seed)?;
    let report = classify_converging(&trace, trace.meta.lambda0, criteria);
    Ok((trace, report))
}

/// The training loop behind [`run_linear`], also returning the final parameters
/// (meaningless once the trace is flagged diverged).
pub fn train_linear(
    params: &LinearNetParams,
    data: &RegressionSet,
    eta: f64,
    max_steps: u64,
    criteria: &PhaseCriteria,
    seed: u64,
) -> Result<(LinearNetParams, TrainTrace)> {
    let mut params = params.clone();
    let mut state = forward(&params, data)?;
    let lambda0 = state.top_eigenvalue()?;
    let mut trace = TrainTrace::new(
        TraceMeta {
            eta,
            seed,
            model: format!("linear n={} d={} m={}", params.width(), data.dim(), data.len()),
            lambda0,
        },
        &["eta_lambda", "f_norm", "lambda_hat", "fmax", "zeta_norm"],
    );
    let record = |trace: &mut TrainTrace, step: u64, s: &FunctionState| -> Result<()> {
        let p = project_state(s).unwrap_or(ProjectedStep {
            lambda: s.top_eigenvalue()?,
            lambda_hat: f64::NAN,
            fmax: 0.0,
        });
        trace.push(
            step,
            s.loss(),
            Some(p.lambda),
            vec![eta * p.lambda, norm(&s.f_tilde), p.lambda_hat, p.fmax, norm(&s.zeta)],
        );
        Ok(())
    };
    record(&mut trace, 0, &state)?;
    let mut step = 0;
    while step < max_steps && state.loss() >= criteria.conv_tol {
        step += 1;
        match step_params_full(&params, data, eta) {
            Ok(next) => params = next,
            Err(Error::Overflow { .. }) => {
                trace.diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
        state = forward(&params, data)?;
        if !state.loss().is_finite() || state.f.iter().any(|f| !(libm::fabs(*f) <= OVERFLOW_GUARD)) {
            trace.push(step, f64::INFINITY, None, vec![f64::NAN; 5]);
            trace.diverged = true;
            break;
        }
        record(&mut trace, step, &state)?;
        if state.loss() > criteria.div_threshold {
            trace.diverged = true;
            break;
        }
    }
    Ok((params, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warmup::{init_warmup, step_params, WarmupParams};

    fn instance(n: usize, d: usize, m: usize, seed: u64) -> (LinearNetParams, RegressionSet) {
        let mut rng = Rng::new(seed);
        let p = LinearNetParams::init(&mut rng, n, d).unwrap();
        let data = RegressionSet::gaussian(&mut Rng::with_stream(seed, 1), m, d).unwrap();
        (p, data)
    }

    fn from_warmup(w: &WarmupParams) -> LinearNetParams {
        LinearNetParams {
            u: Matrix::from_vec(w.width(), 1, w.u.clone()).unwrap(),
            v: w.v.clone(),
        }
    }

    #[test]
    fn warmup_instance_kernel_is_lambda() {
        let w = init_warmup(&mut Rng::new(4), 30).unwrap();
        let s = forward(&from_warmup(&w), &RegressionSet::warmup()).unwrap();
        assert_eq!(s.theta[(0, 0)], w.kernel());
        assert_eq!(s.f[0], w.output());
    }

    #[test]
    fn zero_first_layer() {
        let (mut p, data) = instance(16, 3, 5, 0);
        p.u = Matrix::zeros(16, 3);
        let s = forward(&p, &data).unwrap();
        assert!(s.f.iter().all(|&f| f == 0.0));
        assert_eq!(s.f_tilde, data.y.iter().map(|y| -y).collect::<Vec<_>>());
        // |v|^2 x.x term survives; only the u^T u part vanishes
        let p0 = LinearNetParams {
            u: Matrix::zeros(16, 3),
            v: vec![0.0; 16],
        };
        let s0 = forward(&p0, &data).unwrap();
        assert!(s0.theta.as_slice().iter().all(|&t| t == 0.0));
        assert!(s.theta.is_symmetric(0.0));
    }

    #[test]
    fn shape_mismatch() {
        let (p, _) = instance(8, 3, 4, 0);
        let data = RegressionSet::gaussian(&mut Rng::new(1), 4, 2).unwrap();
        assert!(matches!(forward(&p, &data), Err(Error::ShapeMismatch { .. })));
        assert!(RegressionSet::new(Matrix::zeros(3, 2), vec![0.0; 2]).is_err());
    }

    #[test]
    fn fixed_point_at_zero_error() {
        let (p, mut data) = instance(32, 4, 6, 2);
        data.y = p.outputs(&data.x);
        let next = step_params_full(&p, &data, 0.8).unwrap();
        assert_eq!(next, p);
        let s = forward(&p, &data).unwrap();
        let aux = KernelAux::from_params(&p);
        let s1 = step_function_full(&s, &aux, &data, 0.8, 32).unwrap();
        assert!(s1.f_tilde.iter().all(|&e| e == 0.0));
        assert_eq!(s1.theta, s.theta);
    }

    #[test]
    fn reduces_to_warmup_bit_for_bit() {
        let w0 = init_warmup(&mut Rng::new(9), 100).unwrap();
        let data = RegressionSet::warmup();
        let mut w = w0.clone();
        let mut l = from_warmup(&w0);
        let eta = 2.7 / w0.kernel();
        for _ in 0..60 {
            w = step_params(&w, eta).unwrap();
            l = step_params_full(&l, &data, eta).unwrap();
            assert_eq!(l.u.as_slice(), &w.u[..]);
            assert_eq!(l.v, w.v);
            let s = forward(&l, &data).unwrap();
            assert_eq!(s.f[0], w.output());
            assert_eq!(s.theta[(0, 0)], w.kernel());
        }
    }

    #[test]
    fn function_step_reduces_to_warmup_recursion() {
        let w = init_warmup(&mut Rng::new(1), 50).unwrap();
        let l = from_warmup(&w);
        let data = RegressionSet::warmup();
        let s = forward(&l, &data).unwrap();
        let eta = 1.7;
        let next = step_function_full(&s, &KernelAux::from_params(&l), &data, eta, 50).unwrap();
        let red = crate::warmup::step_reduced(&w.state(0), eta).unwrap();
        assert!((next.f[0] - red.f).abs() <= 1e-13 * red.f.abs().max(1.0));
        assert!((next.theta[(0, 0)] - red.lambda).abs() <= 1e-13 * red.lambda);
    }

    #[test]
    fn inconsistent_aux_is_rejected() {
        let (p, data) = instance(8, 3, 4, 0);
        let s = forward(&p, &data).unwrap();
        let aux = KernelAux {
            v_norm_sq: 1.0,
            u_gram: Matrix::zeros(2, 2),
        };
        assert!(matches!(
            step_function_full(&s, &aux, &data, 0.1, 8),
            Err(Error::InconsistentState(_))
        ));
    }

    #[test]
    fn kernel_matches_gradient_outer_products() {
        // Oracle: explicit per-parameter gradients of f_alpha.
        let (p, data) = instance(256, 4, 8, 3);
        let (n, d, m) = (256, 4, 8);
        let s = forward(&p, &data).unwrap();
        let sqrt_n = (n as f64).sqrt();
        let grads: Vec<Vec<f64>> = (0..m)
            .map(|a| {
                let x = data.x.row(a);
                let mut g = Vec::with_capacity(n * d + n);
                for i in 0..n {
                    for k in 0..d {
                        g.push(p.v[i] * x[k] / sqrt_n);
                    }
                }
                for i in 0..n {
                    g.push(dot(p.u.row(i), x) / sqrt_n);
                }
                g
            })
            .collect();
        for a in 0..m {
            for b in 0..m {
                let oracle = dot(&grads[a], &grads[b]) / m as f64;
                assert!((s.theta[(a, b)] - oracle).abs() <= 1e-10 * oracle.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn loss_decrease_matches_gradient_norm() {
        // dL/deta at eta = 0 equals -|grad L|^2; compare with a difference quotient.
        let (p, data) = instance(64, 3, 5, 7);
        let l0 = forward(&p, &data).unwrap().loss();
        let (n, m) = (64.0f64, 5.0);
        let s = forward(&p, &data).unwrap();
        // |grad_u|^2 = |v|^2 |zeta|^2 / n, |grad_v|^2 = |u zeta|^2 / n
        let mut uz = vec![0.0; 64];
        p.u.matvec(&s.zeta, &mut uz);
        let g2 = (dot(&p.v, &p.v) * dot(&s.zeta, &s.zeta) + dot(&uz, &uz)) / n;
        let h = 1e-6;
        let lp = forward(&step_params_full(&p, &data, h).unwrap(), &data).unwrap().loss();
        let lm = forward(&step_params_full(&p, &data, -h).unwrap(), &data).unwrap().loss();
        let slope = (lp - lm) / (2.0 * h);
        assert!((slope + g2).abs() <= 1e-6 * g2, "{slope} vs {}", -g2);
        assert!(lp < l0);
        let _ = m;
    }

    #[test]
    fn projection_of_eigenvectors() {
        let (p, data) = instance(64, 4, 6, 5);
        let mut s = forward(&p, &data).unwrap();
        let eig = sym_eigen(&s.theta).unwrap();
        s.f_tilde = eig.vectors.column(0);
        let top = project_state(&s).unwrap();
        assert!((top.lambda_hat - eig.values[0]).abs() < 1e-12 * eig.values[0]);
        assert!((top.fmax - 1.0).abs() < 1e-12);
        s.f_tilde = eig.vectors.column(5);
        let bottom = project_state(&s).unwrap();
        assert!((bottom.lambda_hat - eig.values[5]).abs() < 1e-10 * eig.values[0]);
        s.f_tilde = vec![0.0; 6];
        assert_eq!(project_state(&s), Err(Error::ZeroError));
    }
}
