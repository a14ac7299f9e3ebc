//! Fully-connected networks with hand-written reverse-mode (VJP) and
//! forward-mode (JVP) derivatives, minibatch SGD, and the empirical NTK.
//!
//! Loss: `L = 1/(2 k |B|) sum (f^i(x) - y^i)^2`.
//! Kernel: `Theta_ij(x, x') = 1/(k |B|) sum_p d_p f^i(x) d_p f^j(x')`.
//!
//! Parameters live in one flat vector: all weight matrices (each stored
//! `fan_out x fan_in`, row-major) in layer order, then all bias vectors.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::linalg::{dot, gemm, norm, Op};
use crate::numerics::{materialize, top_eig_lanczos, EigOptions, Matrix, Rng, SymmetricMatvec, TopEig};
use crate::phase::PhaseCriteria;
use crate::trace::{TraceMeta, TrainTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => libm::tanh(z),
            Activation::Identity => z,
        }
    }

    /// Derivative at `z`; the ReLU derivative at 0 is 0.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = libm::tanh(z);
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

impl core::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::InvalidConfig(format!("unknown activation {other:?}"))),
        }
    }
}

/// How the width enters the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Parameterization {
    /// `W ~ N(0, sigma_w^2 / fan_in)`, `b ~ N(0, sigma_b^2)`, no forward factors.
    Standard,
    /// `W, b ~ N(0, 1)` with forward factors `sigma_w / sqrt(fan_in)` and `sigma_b`.
    Ntk,
}

impl core::str::FromStr for Parameterization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Parameterization::Standard),
            "ntk" => Ok(Parameterization::Ntk),
            other => Err(Error::InvalidConfig(format!("unknown parameterization {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    /// Number of outputs `k`.
    pub output_dim: usize,
    pub activation: Activation,
    pub parameterization: Parameterization,
    pub sigma_w: f64,
    pub sigma_b: f64,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize, activation: Activation) -> Self {
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
            activation,
            parameterization: Parameterization::Ntk,
            sigma_w: 1.0,
            sigma_b: 0.0,
        }
    }

    pub fn with_parameterization(mut self, p: Parameterization) -> Self {
        self.parameterization = p;
        self
    }

    pub fn with_sigmas(mut self, sigma_w: f64, sigma_b: f64) -> Self {
        self.sigma_w = sigma_w;
        self.sigma_b = sigma_b;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        if !(self.sigma_w >= 0.0 && self.sigma_b >= 0.0) || !self.sigma_w.is_finite() || !self.sigma_b.is_finite() {
            return Err(Error::InvalidConfig("sigma_w and sigma_b must be finite and nonnegative".into()));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.output_dim);
        w
    }

    pub fn describe(&self) -> alloc::string::String {
        format!(
            "mlp {}-{:?}-{} {} {:?} sw={} sb={}",
            self.input_dim,
            self.hidden,
            self.output_dim,
            self.activation.as_str(),
            self.parameterization,
            self.sigma_w,
            self.sigma_b
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub w_offset: usize,
    pub b_offset: usize,
}

impl LayerShape {
    fn w_len(&self) -> usize {
        self.fan_in * self.fan_out
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MlpModel {
    pub spec: MlpSpec,
    pub layers: Vec<LayerShape>,
    pub params: Vec<f64>,
}

/// Inputs and targets; `x` is `|B| x d_in`, `y` is `|B| x k`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Batch {
    pub x: Matrix,
    pub y: Matrix,
}

impl Batch {
    pub fn new(x: Matrix, y: Matrix) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::InvalidConfig("batch must hold at least one sample".into()));
        }
        if y.rows() != x.rows() {
            return Err(Error::ShapeMismatch {
                what: "batch targets",
                expected: x.rows(),
                found: y.rows(),
            });
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    /// Rows `start, start+1, ...` (wrapping) as a new batch of `size` samples.
    pub fn rows_wrapping(&self, start: usize, size: usize) -> Batch {
        let n = self.len();
        let pick = |m: &Matrix| Matrix::from_fn(size, m.cols(), |i, j| m[((start + i) % n, j)]);
        Batch {
            x: pick(&self.x),
            y: pick(&self.y),
        }
    }

    /// The first `size` samples (all of them if `size >= len`).
    pub fn head(&self, size: usize) -> Batch {
        if size >= self.len() {
            return self.clone();
        }
        self.rows_wrapping(0, size)
    }
}

/// Activations saved by a forward pass for reuse by VJPs and JVPs.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` is the input to layer `l` (`inputs[0]` is the batch).
    inputs: Vec<Matrix>,
    /// Activation derivatives at each hidden layer's pre-activation.
    slopes: Vec<Matrix>,
    pub output: Matrix,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.output.rows()
    }
}

impl MlpModel {
    /// Draws all weight matrices in layer order, then all biases.
    pub fn init(spec: MlpSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let widths = spec.widths();
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut offset = 0;
        for w in widths.windows(2) {
            layers.push(LayerShape {
                fan_in: w[0],
                fan_out: w[1],
                w_offset: offset,
                b_offset: 0,
            });
            offset += w[0] * w[1];
        }
        for l in &mut layers {
            l.b_offset = offset;
            offset += l.fan_out;
        }
        let mut params = vec![0.0; offset];
        for l in &layers {
            let std = match spec.parameterization {
                Parameterization::Ntk => 1.0,
                Parameterization::Standard => spec.sigma_w / libm::sqrt(l.fan_in as f64),
            };
            rng.fill_normal(&mut params[l.w_offset..l.w_offset + l.w_len()], std);
        }
        for l in &layers {
            let std = match spec.parameterization {
                Parameterization::Ntk => 1.0,
                Parameterization::Standard => spec.sigma_b,
            };
            rng.fill_normal(&mut params[l.b_offset..l.b_offset + l.fan_out], std);
        }
        Ok(Self { spec, layers, params })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn weight(&self, l: usize) -> &[f64] {
        let s = self.layers[l];
        &self.params[s.w_offset..s.w_offset + s.w_len()]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let s = self.layers[l];
        &self.params[s.b_offset..s.b_offset + s.fan_out]
    }

    fn w_scale(&self, l: usize) -> f64 {
        match self.spec.parameterization {
            Parameterization::Ntk => self.spec.sigma_w / libm::sqrt(self.layers[l].fan_in as f64),
            Parameterization::Standard => 1.0,
        }
    }

    fn b_scale(&self) -> f64 {
        match self.spec.parameterization {
            Parameterization::Ntk => self.spec.sigma_b,
            Parameterization::Standard => 1.0,
        }
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.spec.input_dim {
            return Err(Error::ShapeMismatch {
                what: "input dimension",
                expected: self.spec.input_dim,
                found: x.cols(),
            });
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        self.check_input(&batch.x)?;
        if batch.y.cols() != self.output_dim() {
            return Err(Error::ShapeMismatch {
                what: "target dimension",
                expected: self.output_dim(),
                found: batch.y.cols(),
            });
        }
        Ok(())
    }

    fn check_params(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.num_params() {
            return Err(Error::ShapeMismatch {
                what: "parameter vector",
                expected: self.num_params(),
                found: v.len(),
            });
        }
        Ok(())
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<ForwardCache> {
        self.check_input(x)?;
        let b = x.rows();
        let depth = self.layers.len();
        let act = self.spec.activation;
        let mut inputs = Vec::with_capacity(depth);
        let mut slopes = Vec::with_capacity(depth - 1);
        let mut current = x.clone();
        for (l, s) in self.layers.iter().enumerate() {
            let mut z = Matrix::zeros(b, s.fan_out);
            gemm(
                self.w_scale(l),
                current.as_slice(),
                b,
                s.fan_in,
                Op::N,
                self.weight(l),
                s.fan_out,
                s.fan_in,
                Op::T,
                0.0,
                z.as_mut_slice(),
            );
            let sb = self.b_scale();
            if sb != 0.0 {
                let bias = self.bias(l);
                for r in 0..b {
                    for (zj, bj) in z.row_mut(r).iter_mut().zip(bias) {
                        *zj += sb * bj;
                    }
                }
            }
            inputs.push(current);
            if l + 1 == depth {
                return Ok(ForwardCache {
                    inputs,
                    slopes,
                    output: z,
                });
            }
            let mut slope = z.clone();
            slope.as_mut_slice().iter_mut().for_each(|v| *v = act.derivative(*v));
            z.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
            slopes.push(slope);
            current = z;
        }
        unreachable!("a network has at least one layer")
    }

    /// Network outputs, `|B| x k`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(x)?.output)
    }

    /// `J^T c`: gradient of `sum_{a,i} c_{ai} f^i(x_a)` with respect to the parameters.
    pub fn vjp_cached(&self, cache: &ForwardCache, cot: &Matrix) -> Result<Vec<f64>> {
        let b = cache.batch_size();
        if cot.rows() != b || cot.cols() != self.output_dim() {
            return Err(Error::ShapeMismatch {
                what: "cotangent",
                expected: b * self.output_dim(),
                found: cot.rows() * cot.cols(),
            });
        }
        let mut grad = vec![0.0; self.num_params()];
        let mut delta = cot.clone();
        let sb = self.b_scale();
        for l in (0..self.layers.len()).rev() {
            let s = self.layers[l];
            let sw = self.w_scale(l);
            let input = &cache.inputs[l];
            gemm(
                sw,
                delta.as_slice(),
                b,
                s.fan_out,
                Op::T,
                input.as_slice(),
                b,
                s.fan_in,
                Op::N,
                0.0,
                &mut grad[s.w_offset..s.w_offset + s.w_len()],
            );
            let gb = &mut grad[s.b_offset..s.b_offset + s.fan_out];
            if sb != 0.0 {
                for r in 0..b {
                    for (g, d) in gb.iter_mut().zip(delta.row(r)) {
                        *g += sb * d;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let mut prev = Matrix::zeros(b, s.fan_in);
            gemm(
                sw,
                delta.as_slice(),
                b,
                s.fan_out,
                Op::N,
                self.weight(l),
                s.fan_out,
                s.fan_in,
                Op::N,
                0.0,
                prev.as_mut_slice(),
            );
            for (p, d) in prev.as_mut_slice().iter_mut().zip(cache.slopes[l - 1].as_slice()) {
                *p *= d;
            }
            delta = prev;
        }
        Ok(grad)
    }

    /// `J t`: directional derivative of the outputs along parameter tangent `t`.
    pub fn jvp_cached(&self, cache: &ForwardCache, tangent: &[f64]) -> Result<Matrix> {
        self.check_params(tangent)?;
        let b = cache.batch_size();
        let sb = self.b_scale();
        let mut d_input: Option<Matrix> = None;
        for (l, s) in self.layers.iter().enumerate() {
            let sw = self.w_scale(l);
            let mut dz = Matrix::zeros(b, s.fan_out);
            gemm(
                sw,
                cache.inputs[l].as_slice(),
                b,
                s.fan_in,
                Op::N,
                &tangent[s.w_offset..s.w_offset + s.w_len()],
                s.fan_out,
                s.fan_in,
                Op::T,
                0.0,
                dz.as_mut_slice(),
            );
            if let Some(da) = &d_input {
                gemm(
                    sw,
                    da.as_slice(),
                    b,
                    s.fan_in,
                    Op::N,
                    self.weight(l),
                    s.fan_out,
                    s.fan_in,
                    Op::T,
                    1.0,
                    dz.as_mut_slice(),
                );
            }
            if sb != 0.0 {
                let db = &tangent[s.b_offset..s.b_offset + s.fan_out];
                for r in 0..b {
                    for (z, d) in dz.row_mut(r).iter_mut().zip(db) {
                        *z += sb * d;
                    }
                }
            }
            if l + 1 == self.layers.len() {
                return Ok(dz);
            }
            for (z, d) in dz.as_mut_slice().iter_mut().zip(cache.slopes[l].as_slice()) {
                *z *= d;
            }
            d_input = Some(dz);
        }
        unreachable!("a network has at least one layer")
    }

    pub fn vjp(&self, x: &Matrix, cot: &Matrix) -> Result<Vec<f64>> {
        self.vjp_cached(&self.forward_cached(x)?, cot)
    }

    pub fn jvp(&self, x: &Matrix, tangent: &[f64]) -> Result<Matrix> {
        self.jvp_cached(&self.forward_cached(x)?, tangent)
    }

    /// Loss and its gradient in one forward/backward pass.
    pub fn loss_and_grad(&self, batch: &Batch) -> Result<(f64, Vec<f64>)> {
        let (loss, grad, _) = self.loss_grad_output(batch)?;
        Ok((loss, grad))
    }

    /// Loss, gradient and the network outputs on the batch.
    pub(crate) fn loss_grad_output(&self, batch: &Batch) -> Result<(f64, Vec<f64>, Matrix)> {
        self.check_batch(batch)?;
        let cache = self.forward_cached(&batch.x)?;
        let (loss, mut residual) = mse(&cache.output, &batch.y);
        let denom = (self.output_dim() * batch.len()) as f64;
        residual.as_mut_slice().iter_mut().for_each(|r| *r /= denom);
        let grad = self.vjp_cached(&cache, &residual)?;
        Ok((loss, grad, cache.output))
    }

    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        self.check_params(&params)?;
        Ok(Self {
            spec: self.spec.clone(),
            layers: self.layers.clone(),
            params,
        })
    }
}

/// `1/(2 k |B|) |f - y|^2` and the raw residual `f - y`.
fn mse(f: &Matrix, y: &Matrix) -> (f64, Matrix) {
    let mut r = f.clone();
    for (ri, yi) in r.as_mut_slice().iter_mut().zip(y.as_slice()) {
        *ri -= yi;
    }
    let denom = 2.0 * (f.rows() * f.cols()) as f64;
    (dot(r.as_slice(), r.as_slice()) / denom, r)
}

pub fn mlp_loss(model: &MlpModel, batch: &Batch) -> Result<f64> {
    model.check_batch(batch)?;
    Ok(mse(&model.forward(&batch.x)?, &batch.y).0)
}

pub fn mlp_grad(model: &MlpModel, batch: &Batch) -> Result<Vec<f64>> {
    Ok(model.loss_and_grad(batch)?.1)
}

pub fn mlp_jvp(model: &MlpModel, batch: &Batch, tangent: &[f64]) -> Result<Matrix> {
    model.jvp(&batch.x, tangent)
}

/// The normalized NTK on a fixed set of inputs as a matrix-free operator on
/// vectors of length `|B| k` (sample-major), applied as one VJP and one JVP.
pub struct NtkOperator<'a> {
    model: &'a MlpModel,
    cache: ForwardCache,
    norm: f64,
}

impl<'a> NtkOperator<'a> {
    pub fn new(model: &'a MlpModel, x: &Matrix) -> Result<Self> {
        let cache = model.forward_cached(x)?;
        let norm = (x.rows() * model.output_dim()) as f64;
        Ok(Self { model, cache, norm })
    }

    pub fn outputs(&self) -> &Matrix {
        &self.cache.output
    }
}

impl SymmetricMatvec for NtkOperator<'_> {
    fn dim(&self) -> usize {
        self.cache.batch_size() * self.model.output_dim()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let cot = Matrix::from_vec(self.cache.batch_size(), self.model.output_dim(), x.to_vec())
            .expect("operator dimension");
        let g = self.model.vjp_cached(&self.cache, &cot).expect("cotangent shape");
        let jg = self.model.jvp_cached(&self.cache, &g).expect("tangent shape");
        for (o, v) in out.iter_mut().zip(jg.as_slice()) {
            *o = v / self.norm;
        }
    }
}

/// Top eigenpair of the normalized NTK on `x`, matrix-free (Lanczos, fixed start vector).
pub fn ntk_top_eig(model: &MlpModel, x: &Matrix, opts: EigOptions) -> Result<TopEig> {
    let op = NtkOperator::new(model, x)?;
    top_eig_lanczos(&op, opts, &mut Rng::new(0))
}

/// The normalized NTK on `x` as a dense `|B| k x |B| k` matrix, one column per operator application.
pub fn ntk_gram(model: &MlpModel, x: &Matrix) -> Result<Matrix> {
    Ok(materialize(&NtkOperator::new(model, x)?))
}

/// Per-output parameter gradients, one row per `(sample, output)` pair.
/// Memory is `|B| k x P`; meant for small checks.
pub fn jacobian(model: &MlpModel, x: &Matrix) -> Result<Matrix> {
    let cache = model.forward_cached(x)?;
    let (b, k) = (x.rows(), model.output_dim());
    let mut jac = Matrix::zeros(b * k, model.num_params());
    for a in 0..b {
        for i in 0..k {
            let mut cot = Matrix::zeros(b, k);
            cot[(a, i)] = 1.0;
            let row = model.vjp_cached(&cache, &cot)?;
            jac.row_mut(a * k + i).copy_from_slice(&row);
        }
    }
    Ok(jac)
}

/// Fraction of rows whose largest output matches the largest target.
pub fn accuracy(model: &MlpModel, batch: &Batch) -> Result<f64> {
    model.check_batch(batch)?;
    let f = model.forward(&batch.x)?;
    Ok(argmax_agreement(&f, &batch.y))
}

pub(crate) fn argmax_agreement(f: &Matrix, y: &Matrix) -> f64 {
    let argmax = |row: &[f64]| {
        row.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
            .0
    };
    let hits = (0..f.rows()).filter(|&r| argmax(f.row(r)) == argmax(y.row(r))).count();
    hits as f64 / f.rows() as f64
}

/// Fraction of hidden units whose activation derivative vanishes on every sample of `x`.
pub fn dead_fraction(model: &MlpModel, x: &Matrix) -> Result<f64> {
    let cache = model.forward_cached(x)?;
    let mut dead = 0usize;
    let mut total = 0usize;
    for s in &cache.slopes {
        for j in 0..s.cols() {
            total += 1;
            if (0..s.rows()).all(|r| s[(r, j)] == 0.0) {
                dead += 1;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { dead as f64 / total as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OptimizerCfg {
    pub eta: f64,
    /// Heavy-ball coefficient in `[0, 1)`.
    pub momentum: f64,
    pub l2: f64,
}

impl OptimizerCfg {
    pub fn sgd(eta: f64) -> Self {
        Self {
            eta,
            momentum: 0.0,
            l2: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be finite and nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::InvalidConfig("l2 must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Length, minibatching and eigenvalue cadence for [`sgd_train`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainOpts {
    pub steps: u64,
    /// `0` (or anything at least the dataset size) means full batch.
    pub batch_size: usize,
    /// Measure the top NTK eigenvalue every this many steps; `0` never
    /// (apart from step 0 and the steps in `eig_at`).
    pub eig_every: u64,
    pub eig_at: Vec<u64>,
    pub eig_tol: f64,
    pub criteria: PhaseCriteria,
    /// End training early once every sample of the current batch is
    /// classified correctly (argmax of output vs argmax of target).
    pub stop_at_full_accuracy: bool,
}

impl TrainOpts {
    pub fn new(steps: u64) -> Self {
        Self {
            steps,
            batch_size: 0,
            eig_every: 10,
            eig_at: Vec::new(),
            eig_tol: 1e-6,
            criteria: PhaseCriteria::default(),
            stop_at_full_accuracy: false,
        }
    }

    fn measures(&self, step: u64) -> bool {
        step == 0 || (self.eig_every > 0 && step % self.eig_every == 0) || self.eig_at.contains(&step)
    }
}

/// Minibatch SGD (in-order batches, wrapping) with optional heavy-ball momentum
/// and L2 penalty: `v <- gamma v + g + l2 theta`, `theta <- theta - eta v`.
///
/// Records the minibatch loss at every step (before the update) plus a final
/// record after the last update, and the top NTK eigenvalue on `measure` on the
/// steps selected by `opts`. Stops early, flagging the trace as diverged, once
/// the loss is non-finite or above `opts.criteria.div_threshold`.
///
/// Trace aux columns: `grad_norm`.
pub fn sgd_train(
    model: &MlpModel,
    data: &Batch,
    measure: &Matrix,
    cfg: &OptimizerCfg,
    opts: &TrainOpts,
    seed: u64,
) -> Result<(MlpModel, TrainTrace)> {
    cfg.validate()?;
    model.check_batch(data)?;
    let n = data.len();
    let bs = if opts.batch_size == 0 || opts.batch_size >= n { n } else { opts.batch_size };
    let eig = EigOptions::with_tol(opts.eig_tol);
    let lambda0 = ntk_top_eig(model, measure, eig)?.value;
    let mut trace = TrainTrace::new(
        TraceMeta {
            eta: cfg.eta,
            seed,
            model: model.spec.describe(),
            lambda0,
        },
        &["grad_norm"],
    );
    let mut theta = model.clone();
    let mut velocity = if cfg.momentum > 0.0 { vec![0.0; theta.num_params()] } else { Vec::new() };
    for step in 0..=opts.steps {
        let owned;
        let batch = if bs == n {
            data
        } else {
            owned = data.rows_wrapping(((step as u128 * bs as u128) % n as u128) as usize, bs);
            &owned
        };
        let (loss, mut grad, output) = theta.loss_grad_output(batch)?;
        let lambda = if step == 0 {
            Some(lambda0)
        } else if opts.measures(step) && loss.is_finite() {
            Some(ntk_top_eig(&theta, measure, eig)?.value)
        } else {
            None
        };
        if !(loss <= opts.criteria.div_threshold) {
            trace.push(step, if loss.is_nan() { f64::INFINITY } else { loss }, None, vec![f64::NAN]);
            trace.diverged = true;
            break;
        }
        let done = opts.stop_at_full_accuracy && argmax_agreement(&output, &batch.y) == 1.0;
        let lambda = match lambda {
            None if done => Some(ntk_top_eig(&theta, measure, eig)?.value),
            other => other,
        };
        trace.push(step, loss, lambda, vec![norm(&grad)]);
        if step == opts.steps || done {
            break;
        }
        if cfg.l2 > 0.0 {
            for (g, p) in grad.iter_mut().zip(&theta.params) {
                *g += cfg.l2 * p;
            }
        }
        if cfg.momentum > 0.0 {
            for (v, g) in velocity.iter_mut().zip(&grad) {
                *v = cfg.momentum * *v + g;
            }
            for (p, v) in theta.params.iter_mut().zip(&velocity) {
                *p -= cfg.eta * v;
            }
        } else {
            for (p, g) in theta.params.iter_mut().zip(&grad) {
                *p -= cfg.eta * g;
            }
        }
    }
    Ok((theta, trace))
}

/// The two-hidden-layer ReLU chain `f = u . relu(w . relu(v x))` trained on
/// the single sample `x = 1, y = 1` (NTK parameterization, no biases).
///
/// `eta_over_lambda0` is the learning rate in units of `1/lambda0`. Trace aux
/// columns: `grad_norm`, `f`, `dead_fraction`.
pub fn relu_simple_model(width: usize, eta_over_lambda0: f64, steps: u64, seed: u64) -> Result<TrainTrace> {
    let spec = MlpSpec::new(1, &[width, width], 1, Activation::Relu);
    let model = MlpModel::init(spec, &mut Rng::new(seed))?;
    let one = Matrix::from_fn(1, 1, |_, _| 1.0);
    let batch = Batch::new(one.clone(), one.clone())?;
    let lambda0 = ntk_top_eig(&model, &one, EigOptions::default())?.value;
    if lambda0 <= 0.0 {
        return Err(Error::InvalidConfig("initial network is dead (lambda0 = 0)".into()));
    }
    let eta = eta_over_lambda0 / lambda0;
    let mut opts = TrainOpts::new(steps);
    opts.eig_every = 1;
    opts.eig_tol = 1e-9;
    let mut theta = model;
    let mut trace = TrainTrace::new(
        TraceMeta {
            eta,
            seed,
            model: format!("relu chain width={width}"),
            lambda0,
        },
        &["grad_norm", "f", "dead_fraction"],
    );
    for step in 0..=steps {
        let (loss, grad) = theta.loss_and_grad(&batch)?;
        if !(loss <= opts.criteria.div_threshold) {
            trace.push(step, f64::INFINITY, None, vec![f64::NAN; 3]);
            trace.diverged = true;
            break;
        }
        let f = theta.forward(&one)?[(0, 0)];
        let lambda = ntk_top_eig(&theta, &one, EigOptions::default())?.value;
        trace.push(step, loss, Some(lambda), vec![norm(&grad), f, dead_fraction(&theta, &one)?]);
        if step == steps {
            break;
        }
        for (p, g) in theta.params.iter_mut().zip(&grad) {
            *p -= eta * g;
        }
    }
    Ok(trace)
}
