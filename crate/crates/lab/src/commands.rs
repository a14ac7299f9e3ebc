//! One function per subcommand. Each writes its files under `--out` and
//! returns the one-line summary printed on stdout.

use catapult_core::experiments::{
    critical_exponent, max_lr_bisect, plan_sweep, run_job, sort_runs, EtaGrid, LinearSystem, Metrics, PhaseSystem,
    SweepCfg, SweepRun, TrainRequest, WarmupSystem,
};
use catapult_core::linear::RegressionSet;
use catapult_core::linearize::{kernel_change_during_training, linearize_at, train_tangent};
use catapult_core::mlp::{ntk_top_eig, sgd_train, OptimizerCfg, TrainOpts};
use catapult_core::numerics::{EigOptions, Rng};
use catapult_core::warmup::{init_warmup, run_warmup_seeded, surface_slice, GridAxis};
use catapult_core::{PhaseCriteria, PhaseLabel, PhaseReport, TrainTrace};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::cli::{
    Cli, Command, CritexpArgs, LinearizeArgs, MaxlrArgs, MlpRunArgs, ModelArgs, ModelKind, SurfaceArgs, SweepArgs,
    WarmupArgs,
};
use crate::datasets::{mlp_spec, mlp_system, prepare};
use crate::error::{LabError, LabResult};
use crate::output::{csv_bytes, fmt_f64, fmt_opt, json_bytes, trace_csv, HexTrace, Written};

/// What a subcommand reports back to `main`.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub summary: Value,
    /// The run diverged; the process exits with code 3.
    pub diverged: bool,
}

pub fn run(cli: &Cli) -> LabResult<Outcome> {
    match &cli.command {
        Command::Warmup(a) => cmd_warmup(cli, a),
        Command::Sweep(a) => cmd_sweep(cli, a),
        Command::Critexp(a) => cmd_critexp(cli, a),
        Command::Maxlr(a) => cmd_maxlr(cli, a),
        Command::Mlp(a) => cmd_mlp(cli, a),
        Command::Linearize(a) => cmd_linearize(cli, a),
        Command::Surface(a) => cmd_surface(cli, a),
    }
}

fn summary(name: &str, diverged: bool, fields: Value, written: &Written) -> Outcome {
    let mut s = json!({
        "subcommand": name,
        "status": if diverged { "diverged" } else { "ok" },
    });
    if let (Some(obj), Value::Object(extra)) = (s.as_object_mut(), fields) {
        obj.extend(extra);
        obj.insert("files".into(), json!(written.names()));
    }
    Outcome { summary: s, diverged }
}

fn criteria(conv_tol: f64) -> LabResult<PhaseCriteria> {
    if !(conv_tol > 0.0) {
        return Err(LabError::Config("--conv-tol must be positive".into()));
    }
    Ok(PhaseCriteria {
        conv_tol,
        ..Default::default()
    })
}

fn positive_eta(eta: f64) -> LabResult<()> {
    if eta >= 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(LabError::Config(format!("learning rate must be finite and nonnegative, got {eta}")))
    }
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    report: &'a PhaseReport,
    metrics: Option<Metrics>,
}

fn cmd_warmup(cli: &Cli, a: &WarmupArgs) -> LabResult<Outcome> {
    positive_eta(a.eta)?;
    let params = init_warmup(&mut Rng::new(a.seed), a.n)?;
    let (trace, report) = run_warmup_seeded(&params, a.eta, a.steps, &criteria(a.conv_tol)?, a.seed);
    let mut w = Written::default();
    w.write(a.out.join("trace.csv"), &trace_csv(cli, &trace, a.eig_every)?)?;
    w.write(a.out.join("trace.json"), &serde_json::to_vec(&HexTrace::new(cli, &trace)?)?)?;
    w.write(
        a.out.join("report.json"),
        &json_bytes(cli, &ReportDoc {
            report: &report,
            metrics: None,
        })?,
    )?;
    let diverged = report.phase == Some(PhaseLabel::Divergent);
    Ok(summary(
        "warmup",
        diverged,
        json!({"phase": report.phase_name(), "lambda0": report.lambda0, "eta_lambda0": report.eta_lambda0(),
               "peak_loss_ratio": report.peak_loss_ratio, "steps": report.steps}),
        &w,
    ))
}

fn sweep_grid(a: &SweepArgs) -> LabResult<EtaGrid> {
    let grid = match (a.eta.is_empty(), a.eta_log.as_slice()) {
        (false, []) => {
            if a.scaled {
                EtaGrid::Scaled(a.eta.clone())
            } else {
                EtaGrid::Absolute(a.eta.clone())
            }
        }
        (true, &[lo, hi, count]) => {
            if count.fract() != 0.0 || count < 2.0 {
                return Err(LabError::Config("--eta-log count must be an integer >= 2".into()));
            }
            EtaGrid::log_spaced(lo, hi, count as usize, a.scaled)?
        }
        _ => return Err(LabError::Config("give exactly one of --eta or --eta-log".into())),
    };
    grid.validate()?;
    Ok(grid)
}

/// Runs the jobs of a sweep on `jobs` threads; the result does not depend on `jobs`.
pub fn parallel_sweep<S>(system: &S, cfg: &SweepCfg, jobs: usize) -> LabResult<Vec<SweepRun>>
where
    S: PhaseSystem + Sync,
    S::Model: Send + Sync,
{
    let plan = plan_sweep(system, cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| LabError::Config(format!("thread pool: {e}")))?;
    let mut runs: Vec<SweepRun> = pool.install(|| {
        plan.jobs
            .par_iter()
            .map(|&(s, v)| run_job(system, cfg, &plan.seeds[s], v))
            .collect()
    });
    sort_runs(&mut runs);
    Ok(runs)
}

fn linear_system(m: &ModelArgs) -> LabResult<LinearSystem> {
    Ok(LinearSystem {
        n: m.n,
        data: RegressionSet::gaussian(&mut Rng::new(m.mlp.data_seed), m.m, m.d)?,
        criteria: criteria(m.conv_tol)?,
    })
}

fn warmup_system(m: &ModelArgs) -> LabResult<WarmupSystem> {
    Ok(WarmupSystem {
        n: m.n,
        criteria: criteria(m.conv_tol)?,
    })
}

pub const SWEEP_COLUMNS: [&str; 17] = [
    "eta",
    "eta_lambda0",
    "phase",
    "lambda0",
    "lambda_final",
    "t_star",
    "peak_loss_ratio",
    "loss_final",
    "diverged",
    "lambda_at_stop",
    "seed",
    "steps",
    "train_loss",
    "train_accuracy",
    "test_loss",
    "test_accuracy",
    "note",
];

fn sweep_row(r: &SweepRun) -> Vec<String> {
    let p = &r.report;
    let m = r.metrics;
    vec![
        fmt_f64(p.eta),
        fmt_f64(p.eta_lambda0()),
        p.phase_name().into(),
        fmt_f64(p.lambda0),
        fmt_f64(p.lambda_final),
        p.t_star.map(|t| t.to_string()).unwrap_or_default(),
        fmt_f64(p.peak_loss_ratio),
        fmt_f64(p.loss_final),
        p.diverged.to_string(),
        fmt_opt(p.lambda_at_stop),
        p.seed.to_string(),
        p.steps.to_string(),
        fmt_opt(m.map(|m| m.train_loss)),
        fmt_opt(m.and_then(|m| m.train_accuracy)),
        fmt_opt(m.and_then(|m| m.test_loss)),
        fmt_opt(m.and_then(|m| m.test_accuracy)),
        p.note.clone().unwrap_or_default(),
    ]
}

fn cmd_sweep(cli: &Cli, a: &SweepArgs) -> LabResult<Outcome> {
    let cfg = SweepCfg {
        eta_grid: sweep_grid(a)?,
        stop_rule: a.stop,
        decay: a.decay,
        seeds: a.seeds.clone(),
    };
    let runs = match a.model.model {
        ModelKind::Warmup => parallel_sweep(&warmup_system(&a.model)?, &cfg, a.jobs)?,
        ModelKind::Linear => parallel_sweep(&linear_system(&a.model)?, &cfg, a.jobs)?,
        ModelKind::Mlp => parallel_sweep(&mlp_system(&a.model.mlp, a.eig_every.unwrap_or(10))?, &cfg, a.jobs)?,
    };
    let mut w = Written::default();
    let rows: Vec<_> = runs.iter().map(sweep_row).collect();
    w.write(a.out.join("sweep.csv"), &csv_bytes(cli, &SWEEP_COLUMNS, &rows)?)?;
    let docs: Vec<_> = runs
        .iter()
        .map(|r| ReportDoc {
            report: &r.report,
            metrics: r.metrics,
        })
        .collect();
    w.write(a.out.join("reports.json"), &json_bytes(cli, &docs)?)?;
    if a.write_traces {
        let every = match a.model.model {
            ModelKind::Mlp => 1,
            _ => a.eig_every.unwrap_or(1),
        };
        for (i, r) in runs.iter().enumerate() {
            if let Some(t) = &r.trace {
                let name = format!("traces/run{i:03}_seed{}.csv", r.report.seed);
                w.write(a.out.join(name), &trace_csv(cli, t, every)?)?;
            }
        }
    }
    let count = |l: Option<PhaseLabel>| runs.iter().filter(|r| r.report.phase == l).count();
    Ok(summary(
        "sweep",
        false,
        json!({"runs": runs.len(), "lazy": count(Some(PhaseLabel::Lazy)), "catapult": count(Some(PhaseLabel::Catapult)),
               "divergent": count(Some(PhaseLabel::Divergent)), "unclassified": count(None)}),
        &w,
    ))
}

fn cmd_critexp(cli: &Cli, a: &CritexpArgs) -> LabResult<Outcome> {
    let crit = criteria(a.conv_tol)?;
    let mut rows = Vec::new();
    let mut results = Vec::new();
    let mut slopes = serde_json::Map::new();
    for side in a.side.sides() {
        let name = match side {
            catapult_core::experiments::Side::Below => "below",
            catapult_core::experiments::Side::Above => "above",
        };
        let r = critical_exponent(a.n, a.seed, &a.eps, side, a.max_steps, &crit)?;
        for (eps, t) in &r.points {
            rows.push(vec![name.into(), fmt_f64(*eps), t.to_string(), String::new()]);
        }
        for (eps, why) in &r.excluded {
            rows.push(vec![name.into(), fmt_f64(*eps), String::new(), why.clone()]);
        }
        slopes.insert(name.into(), json!(r.slope));
        results.push(json!({"side": name, "slope": r.slope, "intercept": r.intercept,
                            "points": r.points, "excluded": r.excluded}));
    }
    let mut w = Written::default();
    w.write(a.out.join("critexp.csv"), &csv_bytes(cli, &["side", "eps", "t_star", "excluded"], &rows)?)?;
    w.write(a.out.join("critexp.json"), &json_bytes(cli, &results)?)?;
    Ok(summary("critexp", false, json!({ "slope": slopes }), &w))
}

fn bisect<S: PhaseSystem>(system: &S, a: &MaxlrArgs) -> LabResult<catapult_core::experiments::BisectResult> {
    let &[lo, hi] = a.bracket.as_slice() else {
        return Err(LabError::Config("--bracket expects LO,HI".into()));
    };
    let model = system.init(a.seed)?;
    let lambda0 = system.lambda0(&model)?;
    Ok(max_lr_bisect(
        system,
        &model,
        lambda0,
        a.probe_steps,
        (lo, hi),
        a.rel_tol,
        a.seed,
    )?)
}

fn cmd_maxlr(cli: &Cli, a: &MaxlrArgs) -> LabResult<Outcome> {
    let r = match a.model.model {
        ModelKind::Warmup => bisect(&warmup_system(&a.model)?, a)?,
        ModelKind::Linear => bisect(&linear_system(&a.model)?, a)?,
        ModelKind::Mlp => bisect(&mlp_system(&a.model.mlp, 0)?, a)?,
    };
    let mut w = Written::default();
    w.write(a.out.join("maxlr.json"), &json_bytes(cli, &r)?)?;
    let rows: Vec<_> = r
        .probes
        .iter()
        .map(|(eta, d)| vec![fmt_f64(*eta), fmt_f64(eta * r.lambda0), d.to_string()])
        .collect();
    w.write(a.out.join("probes.csv"), &csv_bytes(cli, &["eta", "eta_lambda0", "diverged"], &rows)?)?;
    Ok(summary(
        "maxlr",
        false,
        json!({"eta_max": r.eta_max, "lambda0": r.lambda0, "c_act": r.c_act}),
        &w,
    ))
}

fn cmd_mlp(cli: &Cli, a: &MlpRunArgs) -> LabResult<Outcome> {
    let system = mlp_system(&a.mlp, a.eig_every)?;
    let model = system.init(a.seed)?;
    let lambda0 = system.lambda0(&model)?;
    let eta = a.eta.resolve(lambda0);
    positive_eta(eta)?;
    let (trained, trace) = system.train(
        &model,
        TrainRequest {
            eta,
            steps: a.steps,
            until_full_accuracy: false,
            seed: a.seed,
        },
    )?;
    let report = system.classify(&trace, lambda0);
    let metrics = if report.diverged { None } else { Some(system.metrics(&trained)?) };
    let mut w = Written::default();
    w.write(a.out.join("trace.csv"), &trace_csv(cli, &trace, 1)?)?;
    w.write(a.out.join("trace.json"), &serde_json::to_vec(&HexTrace::new(cli, &trace)?)?)?;
    w.write(
        a.out.join("report.json"),
        &json_bytes(cli, &ReportDoc {
            report: &report,
            metrics,
        })?,
    )?;
    Ok(summary(
        "mlp",
        report.diverged,
        json!({"phase": report.phase_name(), "lambda0": lambda0, "eta": eta, "lambda_final": report.lambda_final,
               "loss_final": report.loss_final}),
        &w,
    ))
}

#[derive(Serialize)]
struct LinearizeDoc {
    eta: f64,
    eta_lambda0: f64,
    lambda0: f64,
    lambda_at_t_lin: f64,
    t_lin: u64,
    steps: u64,
    nonlinear_diverged: bool,
    nonlinear: Option<Metrics>,
    linearized_diverged: bool,
    linearized: Option<Metrics>,
    linearized_at_zero_diverged: bool,
    kernel_change: Option<f64>,
}

fn trace_losses(t: &TrainTrace, offset: u64) -> impl Iterator<Item = (u64, f64)> + '_ {
    t.records.iter().map(move |r| (r.step + offset, r.loss))
}

fn cmd_linearize(cli: &Cli, a: &LinearizeArgs) -> LabResult<Outcome> {
    if a.t_lin > a.steps {
        return Err(LabError::Config("--t-lin must not exceed --steps".into()));
    }
    let data = prepare(&a.mlp)?;
    let spec = mlp_spec(&a.mlp, &data)?;
    let train = data.train.batch();
    let test = data.test.as_ref().map(|t| t.batch());
    let model = catapult_core::mlp::MlpModel::init(spec, &mut Rng::new(a.seed))?;
    let lambda0 = ntk_top_eig(&model, &train.x, EigOptions::with_tol(a.mlp.eig_tol))?.value;
    let eta = a.eta.resolve(lambda0);
    positive_eta(eta)?;
    let cfg = OptimizerCfg {
        eta,
        momentum: a.mlp.momentum,
        l2: a.mlp.l2,
    };
    let advance = |steps: u64| {
        let mut opts = TrainOpts::new(steps);
        opts.eig_every = 0;
        opts.batch_size = a.mlp.batch_size;
        opts.eig_tol = a.mlp.eig_tol;
        sgd_train(&model, &train, &train.x, &cfg, &opts, a.seed)
    };
    let crit = PhaseCriteria::default();
    let (nonlinear, nl_trace) = advance(a.steps)?;
    let (snapshot, _) = advance(a.t_lin)?;
    let (tangent, lin_trace) = train_tangent(&linearize_at(&snapshot), &train, eta, a.steps - a.t_lin, &crit)?;
    let (_, zero_trace) = train_tangent(&linearize_at(&model), &train, eta, a.steps, &crit)?;
    let nonlinear_metrics = if nl_trace.diverged {
        None
    } else {
        Some(Metrics {
            train_loss: catapult_core::mlp::mlp_loss(&nonlinear, &train)?,
            train_accuracy: Some(catapult_core::mlp::accuracy(&nonlinear, &train)?),
            test_loss: test.as_ref().map(|t| catapult_core::mlp::mlp_loss(&nonlinear, t)).transpose()?,
            test_accuracy: test.as_ref().map(|t| catapult_core::mlp::accuracy(&nonlinear, t)).transpose()?,
        })
    };
    let linear_metrics = if lin_trace.diverged {
        None
    } else {
        Some(Metrics {
            train_loss: tangent.loss(&train)?,
            train_accuracy: Some(tangent.accuracy(&train)?),
            test_loss: test.as_ref().map(|t| tangent.loss(t)).transpose()?,
            test_accuracy: test.as_ref().map(|t| tangent.accuracy(t)).transpose()?,
        })
    };
    let kernel_change = match a.kernel_t_end {
        Some(end) => Some(kernel_change_during_training(&model, &train, &cfg, a.t_lin, end, &train.x)?),
        None => None,
    };
    let doc = LinearizeDoc {
        eta,
        eta_lambda0: eta * lambda0,
        lambda0,
        lambda_at_t_lin: lin_trace.meta.lambda0,
        t_lin: a.t_lin,
        steps: a.steps,
        nonlinear_diverged: nl_trace.diverged,
        nonlinear: nonlinear_metrics,
        linearized_diverged: lin_trace.diverged,
        linearized: linear_metrics,
        linearized_at_zero_diverged: zero_trace.diverged,
        kernel_change,
    };
    let mut table: std::collections::BTreeMap<u64, [Option<f64>; 3]> = Default::default();
    for (col, iter) in [
        trace_losses(&nl_trace, 0).collect::<Vec<_>>(),
        trace_losses(&lin_trace, a.t_lin).collect(),
        trace_losses(&zero_trace, 0).collect(),
    ]
    .into_iter()
    .enumerate()
    {
        for (step, loss) in iter {
            table.entry(step).or_default()[col] = Some(loss);
        }
    }
    let rows: Vec<_> = table
        .iter()
        .map(|(s, v)| vec![s.to_string(), fmt_opt(v[0]), fmt_opt(v[1]), fmt_opt(v[2])])
        .collect();
    let mut w = Written::default();
    w.write(
        a.out.join("linearize.csv"),
        &csv_bytes(
            cli,
            &["step", "nonlinear_loss", "linearized_loss", "linearized_at_zero_loss"],
            &rows,
        )?,
    )?;
    w.write(a.out.join("linearize.json"), &json_bytes(cli, &doc)?)?;
    Ok(summary(
        "linearize",
        doc.nonlinear_diverged,
        json!({"eta_lambda0": doc.eta_lambda0, "nonlinear": doc.nonlinear, "linearized": doc.linearized,
               "linearized_at_zero_diverged": doc.linearized_at_zero_diverged, "kernel_change": doc.kernel_change}),
        &w,
    ))
}

fn axis(v: &[f64], name: &str) -> LabResult<GridAxis> {
    let &[min, max, count] = v else {
        return Err(LabError::Config(format!("--{name} expects MIN,MAX,COUNT")));
    };
    if !(count >= 1.0 && count.fract() == 0.0 && min.is_finite() && max.is_finite()) {
        return Err(LabError::Config(format!("--{name} expects MIN,MAX,COUNT with integer COUNT >= 1")));
    }
    Ok(GridAxis::new(min, max, count as usize))
}

fn cmd_surface(cli: &Cli, a: &SurfaceArgs) -> LabResult<Outcome> {
    let (_, points) = surface_slice(a.n, axis(&a.a, "a")?, axis(&a.b, "b")?, a.r_seed, a.s_seed)?;
    let rows: Vec<_> = points
        .iter()
        .map(|p| vec![fmt_f64(p.a), fmt_f64(p.b), fmt_f64(p.loss), fmt_f64(p.lambda)])
        .collect();
    let mut w = Written::default();
    w.write(a.out.join("surface.csv"), &csv_bytes(cli, &["a", "b", "loss", "lambda"], &rows)?)?;
    Ok(summary("surface", false, json!({ "rows": rows.len() }), &w))
}

