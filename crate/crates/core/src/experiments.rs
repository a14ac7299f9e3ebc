//! Experiment procedures shared by every model family: learning-rate sweeps
//! with a common stop rule, optional learning-rate decay, bisection for the
//! maximum trainable learning rate, and critical-exponent fits for the
//! warmup model.
//!
//! Models plug in through [`PhaseSystem`]. Sweeps are split into a plan
//! (initialization and `lambda0` once per seed) and independent jobs, so a
//! caller can run the jobs in parallel and still get the same output as the
//! sequential [`lr_sweep`].

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linear::{forward, train_linear, LinearNetParams, RegressionSet};
use crate::mlp::{accuracy, mlp_loss, ntk_top_eig, sgd_train, Batch, MlpModel, MlpSpec, OptimizerCfg, TrainOpts};
use crate::numerics::{fit_loglog_slope, EigOptions, Matrix, Rng};
use crate::phase::{classify_converging, classify_training, PhaseCriteria, PhaseReport};
use crate::trace::{trace_reduce, TrainTrace};
use crate::warmup::{init_warmup, run_warmup_state, WarmupState};

/// Learning rates of a sweep, either absolute or in units of `1/lambda0`
/// (then resolved per seed).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum EtaGrid {
    Absolute(Vec<f64>),
    Scaled(Vec<f64>),
}

impl EtaGrid {
    /// `count` log-spaced values from `lo` to `hi` inclusive.
    pub fn log_spaced(lo: f64, hi: f64, count: usize, scaled: bool) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && count >= 2) {
            return Err(Error::InvalidConfig(format!(
                "log-spaced grid needs 0 < lo < hi and at least two points (got {lo}, {hi}, {count})"
            )));
        }
        let (a, b) = (libm::log(lo), libm::log(hi));
        let values = (0..count)
            .map(|i| match i {
                0 => lo,
                i if i + 1 == count => hi,
                i => libm::exp(a + (b - a) * i as f64 / (count - 1) as f64),
            })
            .collect();
        Ok(if scaled { EtaGrid::Scaled(values) } else { EtaGrid::Absolute(values) })
    }

    pub fn values(&self) -> &[f64] {
        match self {
            EtaGrid::Absolute(v) | EtaGrid::Scaled(v) => v,
        }
    }

    pub fn is_scaled(&self) -> bool {
        matches!(self, EtaGrid::Scaled(_))
    }

    /// Converts a grid value to an absolute learning rate.
    pub fn resolve_one(&self, value: f64, lambda0: f64) -> f64 {
        if self.is_scaled() {
            value / lambda0
        } else {
            value
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.values();
        if v.is_empty() {
            return Err(Error::InvalidConfig("learning-rate grid is empty".into()));
        }
        if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::InvalidConfig("learning rates must be positive and finite".into()));
        }
        if v.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidConfig("learning-rate grid must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// A physical time, either `t * eta` or `t * eta * lambda0`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PhysTime {
    Absolute(f64),
    Scaled(f64),
}

impl PhysTime {
    /// The value of `t * eta` for a model with initial curvature `lambda0`.
    pub fn t_eta(self, lambda0: f64) -> f64 {
        match self {
            PhysTime::Absolute(t) => t,
            PhysTime::Scaled(t) => t / lambda0,
        }
    }
}

/// When a run (or its first phase, if a decay follows) ends.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum StopRule {
    FixedSteps(u64),
    /// `floor(t_eta / eta)` steps, so every learning rate gets the same `t * eta`.
    FixedPhysicalTime(PhysTime),
    /// Until the training batch is classified perfectly, at most `max_steps`.
    TrainAccuracyOne { max_steps: u64 },
}

impl StopRule {
    pub fn steps(self, eta: f64, lambda0: f64) -> Result<u64> {
        match self {
            StopRule::FixedSteps(t) => Ok(t),
            StopRule::TrainAccuracyOne { max_steps } => Ok(max_steps),
            StopRule::FixedPhysicalTime(t) => {
                let t = t.t_eta(lambda0);
                if !(t >= 0.0 && t.is_finite() && eta > 0.0) {
                    return Err(Error::InvalidConfig(format!("bad physical time {t} at eta = {eta}")));
                }
                let steps = libm::floor(t / eta * (1.0 + 1e-12));
                if steps > 1e15 {
                    return Err(Error::InvalidConfig(format!("physical time {t} needs {steps} steps at eta = {eta}")));
                }
                Ok(steps as u64)
            }
        }
    }

    /// The `t * eta` at which the sweep reads `lambda_at_stop`, if the rule fixes one.
    pub fn t_eta(self, lambda0: f64) -> Option<f64> {
        match self {
            StopRule::FixedPhysicalTime(t) => Some(t.t_eta(lambda0)),
            _ => None,
        }
    }
}

/// Continue training after the stop rule fires with `eta_final` (in the same
/// units as the sweep's grid) for `extra_steps` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Decay {
    pub eta_final: f64,
    pub extra_steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepCfg {
    pub eta_grid: EtaGrid,
    pub stop_rule: StopRule,
    pub decay: Option<Decay>,
    pub seeds: Vec<u64>,
}

impl SweepCfg {
    pub fn new(eta_grid: EtaGrid, stop_rule: StopRule) -> Self {
        Self {
            eta_grid,
            stop_rule,
            decay: None,
            seeds: vec![0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.eta_grid.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("a sweep needs at least one seed".into()));
        }
        if let Some(d) = self.decay {
            if !(d.eta_final > 0.0 && d.eta_final.is_finite()) {
                return Err(Error::InvalidConfig("decayed learning rate must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Quality of a trained model.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Metrics {
    pub train_loss: f64,
    pub train_accuracy: Option<f64>,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
}

impl Metrics {
    fn loss_only(train_loss: f64) -> Self {
        Self {
            train_loss,
            train_accuracy: None,
            test_loss: None,
            test_accuracy: None,
        }
    }
}

/// One training request issued by the experiment drivers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRequest {
    pub eta: f64,
    pub steps: u64,
    pub until_full_accuracy: bool,
    pub seed: u64,
}

/// A model family the experiment drivers can initialize, train and classify.
pub trait PhaseSystem {
    type Model: Clone;

    fn describe(&self) -> String;
    fn init(&self, seed: u64) -> Result<Self::Model>;
    fn lambda0(&self, model: &Self::Model) -> Result<f64>;
    /// Trains `req.steps` further steps from `model`. The final record of the
    /// trace carries an eigenvalue unless the run diverged.
    fn train(&self, model: &Self::Model, req: TrainRequest) -> Result<(Self::Model, TrainTrace)>;
    fn classify(&self, trace: &TrainTrace, lambda0: f64) -> PhaseReport;
    fn metrics(&self, model: &Self::Model) -> Result<Metrics>;
}

fn no_accuracy(req: &TrainRequest, what: &str) -> Result<()> {
    if req.until_full_accuracy {
        Err(Error::InvalidConfig(format!("{what} has no classification accuracy")))
    } else {
        Ok(())
    }
}

/// The warmup model `f = u.v / sqrt(n)` on one sample, run through its
/// reduced `(f, lambda)` recursion until convergence or the step budget.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmupSystem {
    pub n: usize,
    pub criteria: PhaseCriteria,
}

impl PhaseSystem for WarmupSystem {
    type Model = WarmupState;

    fn describe(&self) -> String {
        format!("warmup n={}", self.n)
    }

    fn init(&self, seed: u64) -> Result<WarmupState> {
        Ok(init_warmup(&mut Rng::new(seed), self.n)?.state(0))
    }

    fn lambda0(&self, model: &WarmupState) -> Result<f64> {
        Ok(model.lambda)
    }

    fn train(&self, model: &WarmupState, req: TrainRequest) -> Result<(WarmupState, TrainTrace)> {
        no_accuracy(&req, "the warmup model")?;
        let (trace, _) = run_warmup_state(model.clone(), req.eta, model.step + req.steps, &self.criteria, req.seed);
        let last = trace.last().ok_or(Error::InconsistentState("empty warmup trace"))?;
        let f_idx = trace.aux_index("f").ok_or(Error::InconsistentState("warmup trace without f"))?;
        let next = WarmupState {
            f: last.aux[f_idx],
            lambda: last.lambda.ok_or(Error::InconsistentState("warmup record without lambda"))?,
            n: model.n,
            step: last.step,
        };
        Ok((next, trace))
    }

    fn classify(&self, trace: &TrainTrace, lambda0: f64) -> PhaseReport {
        classify_converging(trace, lambda0, &self.criteria)
    }

    fn metrics(&self, model: &WarmupState) -> Result<Metrics> {
        Ok(Metrics::loss_only(model.loss()))
    }
}

/// The two-layer linear network on a regression set.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub n: usize,
    pub data: RegressionSet,
    pub criteria: PhaseCriteria,
}

impl PhaseSystem for LinearSystem {
    type Model = LinearNetParams;

    fn describe(&self) -> String {
        format!("linear n={} d={} m={}", self.n, self.data.dim(), self.data.len())
    }

    fn init(&self, seed: u64) -> Result<LinearNetParams> {
        LinearNetParams::init(&mut Rng::new(seed), self.n, self.data.dim())
    }

    fn lambda0(&self, model: &LinearNetParams) -> Result<f64> {
        forward(model, &self.data)?.top_eigenvalue()
    }

    fn train(&self, model: &LinearNetParams, req: TrainRequest) -> Result<(LinearNetParams, TrainTrace)> {
        no_accuracy(&req, "the linear model")?;
        train_linear(model, &self.data, req.eta, req.steps, &self.criteria, req.seed)
    }

    fn classify(&self, trace: &TrainTrace, lambda0: f64) -> PhaseReport {
        classify_converging(trace, lambda0, &self.criteria)
    }

    fn metrics(&self, model: &LinearNetParams) -> Result<Metrics> {
        Ok(Metrics::loss_only(forward(model, &self.data)?.loss()))
    }
}

/// A fully connected network trained with (minibatch) SGD. The NTK
/// eigenvalue is measured on `measure` (usually the training inputs).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSystem {
    pub spec: MlpSpec,
    pub train: Batch,
    pub test: Option<Batch>,
    pub measure: Matrix,
    pub momentum: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub eig_every: u64,
    pub eig_tol: f64,
    pub criteria: PhaseCriteria,
}

impl MlpSystem {
    /// Full-batch plain gradient descent with the kernel measured on the training inputs.
    pub fn new(spec: MlpSpec, train: Batch) -> Self {
        let measure = train.x.clone();
        Self {
            spec,
            train,
            test: None,
            measure,
            momentum: 0.0,
            l2: 0.0,
            batch_size: 0,
            eig_every: 10,
            eig_tol: 1e-6,
            criteria: PhaseCriteria::default(),
        }
    }

    pub fn optimizer(&self, eta: f64) -> OptimizerCfg {
        OptimizerCfg {
            eta,
            momentum: self.momentum,
            l2: self.l2,
        }
    }
}

impl PhaseSystem for MlpSystem {
    type Model = MlpModel;

    fn describe(&self) -> String {
        format!("{} on {} samples", self.spec.describe(), self.train.len())
    }

    fn init(&self, seed: u64) -> Result<MlpModel> {
        MlpModel::init(self.spec.clone(), &mut Rng::new(seed))
    }

    fn lambda0(&self, model: &MlpModel) -> Result<f64> {
        Ok(ntk_top_eig(model, &self.measure, EigOptions::with_tol(self.eig_tol))?.value)
    }

    fn train(&self, model: &MlpModel, req: TrainRequest) -> Result<(MlpModel, TrainTrace)> {
        let mut opts = TrainOpts::new(req.steps);
        opts.batch_size = self.batch_size;
        opts.eig_every = self.eig_every;
        opts.eig_at = vec![req.steps];
        opts.eig_tol = self.eig_tol;
        opts.criteria = self.criteria;
        opts.stop_at_full_accuracy = req.until_full_accuracy;
        sgd_train(model, &self.train, &self.measure, &self.optimizer(req.eta), &opts, req.seed)
    }

    fn classify(&self, trace: &TrainTrace, lambda0: f64) -> PhaseReport {
        classify_training(trace, lambda0, &self.criteria)
    }

    fn metrics(&self, model: &MlpModel) -> Result<Metrics> {
        let (test_loss, test_accuracy) = match &self.test {
            Some(t) => (Some(mlp_loss(model, t)?), Some(accuracy(model, t)?)),
            None => (None, None),
        };
        Ok(Metrics {
            train_loss: mlp_loss(model, &self.train)?,
            train_accuracy: Some(accuracy(model, &self.train)?),
            test_loss,
            test_accuracy,
        })
    }
}

/// Initialization shared by every learning rate of one seed.
#[derive(Debug, Clone)]
pub struct SeedInit<M> {
    pub seed: u64,
    pub init: core::result::Result<(M, f64), String>,
}

impl<M> SeedInit<M> {
    pub fn lambda0(&self) -> f64 {
        self.init.as_ref().map_or(f64::NAN, |(_, l)| *l)
    }
}

/// The jobs of a sweep: `(seed index, grid value)` pairs over the seeds' initializations.
#[derive(Debug, Clone)]
pub struct SweepPlan<M> {
    pub seeds: Vec<SeedInit<M>>,
    pub jobs: Vec<(usize, f64)>,
}

/// Outcome of one `(eta, seed)` job.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub report: PhaseReport,
    /// Trace of the run up to the stop rule (empty if the run failed to start).
    pub trace: Option<TrainTrace>,
    /// Metrics after the decay phase if any, else at the stop rule; `None`
    /// for diverged or failed runs.
    pub metrics: Option<Metrics>,
}

/// Initializes every seed and measures its `lambda0` once.
pub fn plan_sweep<S: PhaseSystem>(system: &S, cfg: &SweepCfg) -> Result<SweepPlan<S::Model>> {
    cfg.validate()?;
    let seeds: Vec<_> = cfg
        .seeds
        .iter()
        .map(|&seed| SeedInit {
            seed,
            init: system
                .init(seed)
                .and_then(|m| {
                    let l = system.lambda0(&m)?;
                    if l > 0.0 && l.is_finite() {
                        Ok((m, l))
                    } else {
                        Err(Error::InvalidConfig(format!("initial eigenvalue {l} is not positive")))
                    }
                })
                .map_err(|e| e.to_string()),
        })
        .collect();
    let jobs = (0..seeds.len())
        .flat_map(|s| cfg.eta_grid.values().iter().map(move |&v| (s, v)))
        .collect();
    Ok(SweepPlan { seeds, jobs })
}

/// Runs one job of a plan. Errors become a failed report.
pub fn run_job<S: PhaseSystem>(system: &S, cfg: &SweepCfg, init: &SeedInit<S::Model>, value: f64) -> SweepRun {
    let (model, lambda0) = match &init.init {
        Ok((m, l)) => (m, *l),
        Err(msg) => {
            let eta = if cfg.eta_grid.is_scaled() { f64::NAN } else { value };
            return failed_run(eta, init.seed, f64::NAN, format!("initialization failed: {msg}"));
        }
    };
    let eta = cfg.eta_grid.resolve_one(value, lambda0);
    match run_job_inner(system, cfg, model, lambda0, eta, init.seed) {
        Ok(run) => run,
        Err(e) => failed_run(eta, init.seed, lambda0, e.to_string()),
    }
}

fn failed_run(eta: f64, seed: u64, lambda0: f64, note: String) -> SweepRun {
    SweepRun {
        report: PhaseReport::failed(eta, seed, lambda0, note),
        trace: None,
        metrics: None,
    }
}

fn run_job_inner<S: PhaseSystem>(
    system: &S,
    cfg: &SweepCfg,
    model: &S::Model,
    lambda0: f64,
    eta: f64,
    seed: u64,
) -> Result<SweepRun> {
    let steps = cfg.stop_rule.steps(eta, lambda0)?;
    let req = TrainRequest {
        eta,
        steps,
        until_full_accuracy: matches!(cfg.stop_rule, StopRule::TrainAccuracyOne { .. }),
        seed,
    };
    let (trained, trace) = system.train(model, req)?;
    let mut report = system.classify(&trace, lambda0);
    report.lambda0 = lambda0;
    report.seed = seed;
    report.lambda_at_stop = match cfg.stop_rule.t_eta(lambda0) {
        Some(t) if !trace.diverged => trace_reduce(&trace, t)?.lambda,
        Some(_) => None,
        None => (!trace.diverged).then(|| trace.last_lambda()).flatten(),
    };
    let metrics = if report.diverged {
        None
    } else if let Some(d) = cfg.decay {
        let eta_final = cfg.eta_grid.resolve_one(d.eta_final, lambda0);
        let (after, decay_trace) = system.train(
            &trained,
            TrainRequest {
                eta: eta_final,
                steps: d.extra_steps,
                until_full_accuracy: false,
                seed,
            },
        )?;
        if decay_trace.diverged {
            None
        } else {
            Some(system.metrics(&after)?)
        }
    } else {
        Some(system.metrics(&trained)?)
    };
    Ok(SweepRun {
        report,
        trace: Some(trace),
        metrics,
    })
}

/// Orders runs by learning rate, then seed (failed runs with unknown `eta` last).
pub fn sort_runs(runs: &mut [SweepRun]) {
    runs.sort_by(|a, b| {
        let key = |r: &SweepRun| (r.report.eta.is_nan(), r.report.eta, r.report.seed);
        let (ka, kb) = (key(a), key(b));
        ka.0.cmp(&kb.0)
            .then(ka.1.partial_cmp(&kb.1).unwrap_or(core::cmp::Ordering::Equal))
            .then(ka.2.cmp(&kb.2))
    });
}

/// One report per `(eta, seed)`, sorted by learning rate. Individual run
/// failures are recorded in their reports and never abort the sweep.
pub fn lr_sweep<S: PhaseSystem>(system: &S, cfg: &SweepCfg) -> Result<Vec<SweepRun>> {
    let plan = plan_sweep(system, cfg)?;
    let mut runs: Vec<SweepRun> = plan
        .jobs
        .iter()
        .map(|&(s, v)| run_job(system, cfg, &plan.seeds[s], v))
        .collect();
    sort_runs(&mut runs);
    Ok(runs)
}

/// Final metrics of each run, trained to the same physical time and then
/// decayed, for comparing learning rates at equal `t * eta`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CompareRow {
    pub eta: f64,
    pub eta_lambda0: f64,
    pub seed: u64,
    pub phase: String,
    pub metrics: Option<Metrics>,
}

/// A sweep with a fixed-physical-time stop rule followed by a decay phase.
pub fn physical_time_compare<S: PhaseSystem>(system: &S, cfg: &SweepCfg) -> Result<Vec<CompareRow>> {
    if !matches!(cfg.stop_rule, StopRule::FixedPhysicalTime(_)) || cfg.decay.is_none() {
        return Err(Error::InvalidConfig(
            "physical-time comparison needs a fixed-physical-time stop rule and a decay".into(),
        ));
    }
    Ok(lr_sweep(system, cfg)?
        .into_iter()
        .map(|r| CompareRow {
            eta: r.report.eta,
            eta_lambda0: r.report.eta_lambda0(),
            seed: r.report.seed,
            phase: r.report.phase_name().into(),
            metrics: r.metrics,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BisectResult {
    pub eta_max: f64,
    pub lambda0: f64,
    /// `eta_max * lambda0`.
    pub c_act: f64,
    /// Every probe as `(eta, diverged)`, in evaluation order.
    pub probes: Vec<(f64, bool)>,
}

/// Bisects (geometrically) for the largest learning rate that does not
/// diverge within `probe_steps`, starting from `model`. The bracket is given
/// in units of `1/lambda0` and must be trainable at the low end and
/// divergent at the high end. Stops once the bracket is within `rel_tol`.
pub fn max_lr_bisect<S: PhaseSystem>(
    system: &S,
    model: &S::Model,
    lambda0: f64,
    probe_steps: u64,
    bracket: (f64, f64),
    rel_tol: f64,
    seed: u64,
) -> Result<BisectResult> {
    let (lo_s, hi_s) = bracket;
    if !(lo_s > 0.0 && hi_s > lo_s && rel_tol > 0.0 && lambda0 > 0.0) {
        return Err(Error::BracketInvalid { lo: lo_s, hi: hi_s });
    }
    let mut probes = Vec::new();
    let mut diverges = |eta: f64| -> Result<bool> {
        let (_, trace) = system.train(
            model,
            TrainRequest {
                eta,
                steps: probe_steps,
                until_full_accuracy: false,
                seed,
            },
        )?;
        let d = system.classify(&trace, lambda0).diverged;
        probes.push((eta, d));
        Ok(d)
    };
    let (mut lo, mut hi) = (lo_s / lambda0, hi_s / lambda0);
    if diverges(lo)? || !diverges(hi)? {
        return Err(Error::BracketInvalid { lo: lo_s, hi: hi_s });
    }
    while hi / lo - 1.0 > rel_tol {
        let mid = libm::sqrt(lo * hi);
        if diverges(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let eta_max = libm::sqrt(lo * hi);
    Ok(BisectResult {
        eta_max,
        lambda0,
        c_act: eta_max * lambda0,
        probes,
    })
}

/// Which side of `eta * lambda0 = 2` a critical-exponent scan probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Side {
    Below,
    Above,
}

impl core::str::FromStr for Side {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "below" => Ok(Side::Below),
            "above" => Ok(Side::Above),
            other => Err(Error::InvalidConfig(format!("unknown side `{other}` (expected below or above)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CritExpResult {
    pub slope: f64,
    pub intercept: f64,
    /// `(eps, t_star)` of the runs that converged.
    pub points: Vec<(f64, u64)>,
    /// `(eps, reason)` of the runs left out of the fit.
    pub excluded: Vec<(f64, String)>,
}

/// Convergence time `t*` of the warmup model at `eta * lambda0 = 2 -+ eps`
/// for each `eps`, and the least-squares slope of `ln t*` against `ln eps`.
pub fn critical_exponent(
    n: usize,
    seed: u64,
    eps_grid: &[f64],
    side: Side,
    max_steps: u64,
    criteria: &PhaseCriteria,
) -> Result<CritExpResult> {
    if let Some(e) = eps_grid.iter().find(|e| !(**e > 0.0 && **e < 2.0)) {
        return Err(Error::InvalidConfig(format!("eps must lie in (0, 2), got {e}")));
    }
    let state = init_warmup(&mut Rng::new(seed), n)?.state(0);
    let lambda0 = state.lambda;
    let mut points = Vec::new();
    let mut excluded = Vec::new();
    for &eps in eps_grid {
        let scaled = match side {
            Side::Below => 2.0 - eps,
            Side::Above => 2.0 + eps,
        };
        let (trace, report) = run_warmup_state(state.clone(), scaled / lambda0, max_steps, criteria, seed);
        match report.t_star {
            Some(t) if !trace.diverged && t > 0 => points.push((eps, t)),
            _ if trace.diverged => excluded.push((eps, "diverged".into())),
            _ => excluded.push((eps, format!("no convergence within {max_steps} steps"))),
        }
    }
    let fit = fit_loglog_slope(&points.iter().map(|&(e, t)| (e, t as f64)).collect::<Vec<_>>())?;
    Ok(CritExpResult {
        slope: fit.slope,
        intercept: fit.intercept,
        points,
        excluded,
    })
}
