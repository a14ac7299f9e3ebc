//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Library-level checks call `catapult-core` directly; experiment-level checks
//! run the `catapult` binary, read the files it writes, and are replayed at the
//! end to confirm byte-identical output.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use catapult_core::linear::{forward, step_function_full, step_params_full, KernelAux, LinearNetParams, RegressionSet};
use catapult_core::mlp::{
    jacobian, mlp_grad, mlp_loss, ntk_top_eig, Activation, Batch, MlpModel, MlpSpec, Parameterization,
};
use catapult_core::numerics::{gaussian_vector, EigOptions, Matrix, Rng};
use catapult_core::warmup::{init_warmup, step_params, step_reduced};
use nalgebra::DMatrix;
use serde_json::Value;

/// Relative tolerance of the exactness theorems.
const EXACT_TOL: f64 = 1e-8;
/// Trajectories are compared until the output leaves this range.
const BLOWUP: f64 = 1e50;

struct Check {
    pass: bool,
    detail: String,
}

impl Check {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// One invocation of the binary, kept for the determinism replay.
struct Invocation {
    args: Vec<String>,
    out: PathBuf,
}

struct Harness {
    root: tempfile::TempDir,
    invocations: Vec<Invocation>,
    /// `(source, eta, lambda0, lambda_final)` of every Catapult-labeled report.
    catapults: Vec<(String, f64, f64, f64)>,
    lines: Vec<(bool, String)>,
}

impl Harness {
    fn new() -> Self {
        Self {
            root: tempfile::tempdir().expect("temporary directory"),
            invocations: Vec::new(),
            catapults: Vec::new(),
            lines: Vec::new(),
        }
    }

    fn criterion(&mut self, id: u32, name: &str, limit: Option<Duration>, f: impl FnOnce(&mut Self) -> Check) {
        let start = Instant::now();
        let mut check = f(self);
        let elapsed = start.elapsed();
        if let Some(limit) = limit {
            if elapsed > limit {
                check.pass = false;
                check.detail = format!("{}; exceeded the {} s limit", check.detail, limit.as_secs());
            }
        }
        let line = format!(
            "{} {:>2} {name}: {} [{:.1} s]",
            if check.pass { "PASS" } else { "FAIL" },
            id,
            check.detail,
            elapsed.as_secs_f64()
        );
        println!("{line}");
        self.lines.push((check.pass, line));
    }

    /// Runs `catapult <args> --out <dir>` and returns the printed summary.
    fn run(&mut self, label: &str, args: &[&str]) -> (Value, PathBuf) {
        let out = self.root.path().join(format!("{:02}-{label}", self.invocations.len()));
        let mut args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        args.push("--out".into());
        args.push(out.to_string_lossy().into_owned());
        let summary = invoke(&args);
        self.invocations.push(Invocation { args, out: out.clone() });
        (summary, out)
    }

    fn collect_catapults(&mut self, source: &str, rows: &[Row]) {
        for r in rows.iter().filter(|r| r.str("phase") == "Catapult") {
            self.catapults.push((source.into(), r.num("eta"), r.num("lambda0"), r.num("lambda_final")));
        }
    }
}

fn invoke(args: &[String]) -> Value {
    let output = Command::new(env!("CARGO_BIN_EXE_catapult"))
        .args(args)
        .output()
        .expect("failed to start catapult");
    let stdout = String::from_utf8_lossy(&output.stdout);
    let summary: Value = serde_json::from_str(stdout.trim()).unwrap_or(Value::Null);
    if summary["status"] == "error" || summary.is_null() {
        eprintln!("catapult {} failed: {}", args.join(" "), String::from_utf8_lossy(&output.stderr));
    }
    summary
}

struct Row(HashMap<String, String>);

impl Row {
    fn str(&self, key: &str) -> &str {
        self.0.get(key).map(String::as_str).unwrap_or("")
    }

    fn num(&self, key: &str) -> f64 {
        self.str(key).parse().unwrap_or(f64::NAN)
    }
}

fn read_csv(path: &Path) -> Vec<Row> {
    let Ok(mut reader) = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path) else {
        return Vec::new();
    };
    reader.deserialize().filter_map(|r| r.ok()).map(Row).collect()
}

fn read_result(path: &Path) -> Value {
    fs::read(path)
        .ok()
        .and_then(|b| serde_json::from_slice::<Value>(&b).ok())
        .map(|mut v| v["result"].take())
        .unwrap_or(Value::Null)
}

fn rel(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(f64::MIN_POSITIVE)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(",")
}

fn warmup_exactness() -> Check {
    let mut worst = 0.0f64;
    let mut runs = 0;
    for n in [8, 64, 1024] {
        for seed in 0..3 {
            let p0 = init_warmup(&mut Rng::new(seed), n).unwrap();
            let l0 = p0.kernel();
            let f_scale = p0.output().abs();
            for i in 0..20 {
                let eta = (0.1 + 0.2 * i as f64) / l0;
                let (mut p, mut s) = (p0.clone(), p0.state(0));
                for _ in 0..200 {
                    let (Ok(np), Ok(ns)) = (step_params(&p, eta), step_reduced(&s, eta)) else { break };
                    (p, s) = (np, ns);
                    let f = p.output();
                    if f.abs() > BLOWUP {
                        break;
                    }
                    worst = worst
                        .max(rel(f, s.f, f.abs().max(f_scale)))
                        .max(rel(p.kernel(), s.lambda, p.kernel()));
                }
                runs += 1;
            }
        }
    }
    Check::new(worst <= EXACT_TOL, format!("{runs} runs x 200 steps, max relative error {worst:.2e} (tol {EXACT_TOL:e})"))
}

fn linear_exactness() -> Check {
    let mut worst = 0.0f64;
    let mut runs = 0;
    for n in [64, 1024] {
        for m in [1, 8, 32] {
            for d in [1, 4, 16] {
                let p0 = LinearNetParams::init(&mut Rng::new(7), n, d).unwrap();
                let data = RegressionSet::gaussian(&mut Rng::with_stream(7, 1), m, d).unwrap();
                let s0 = forward(&p0, &data).unwrap();
                let l0 = s0.top_eigenvalue().unwrap();
                let f_scale = max_abs(&s0.f_tilde);
                for k in [0.5, 1.5, 2.5, 3.5] {
                    let eta = k / l0;
                    let (mut p, mut s) = (p0.clone(), s0.clone());
                    for _ in 0..200 {
                        let aux = KernelAux::from_params(&p);
                        s = step_function_full(&s, &aux, &data, eta, n).unwrap();
                        let Ok(np) = step_params_full(&p, &data, eta) else { break };
                        p = np;
                        let direct = forward(&p, &data).unwrap();
                        let scale = max_abs(&direct.f_tilde).max(f_scale);
                        if scale > BLOWUP {
                            break;
                        }
                        for (a, b) in direct.f_tilde.iter().zip(&s.f_tilde) {
                            worst = worst.max(rel(*a, *b, scale));
                        }
                        worst = worst.max(direct.theta.max_abs_diff(&s.theta) / max_abs(direct.theta.as_slice()));
                    }
                    runs += 1;
                }
            }
        }
    }
    Check::new(worst <= EXACT_TOL, format!("{runs} runs x 200 steps, max relative error {worst:.2e} (tol {EXACT_TOL:e})"))
}

fn warmup_figure(h: &mut Harness) -> Check {
    let long = ["sweep", "--model", "warmup", "--n", "1000", "--scaled", "--stop", "steps:100000"];
    let grid = "0.5,1,1.5,1.9,2.4,3,3.6,4.2,4.6,5";
    let (_, out) = h.run("warmup-phases", &[&long[..], &["--eta", grid]].concat());
    let phases = read_csv(&out.join("sweep.csv"));
    let (_, out) = h.run(
        "warmup-phys25",
        &["sweep", "--model", "warmup", "--n", "1000", "--scaled", "--stop", "phys:25", "--eta", grid],
    );
    let at25 = read_csv(&out.join("sweep.csv"));
    h.collect_catapults("warmup sweep", &phases);
    if phases.len() != 10 || at25.len() != 10 {
        return Check::new(false, "sweep output missing");
    }
    let mut bad = Vec::new();
    for r in &phases {
        let k = r.num("eta_lambda0");
        if [2.4, 3.0, 3.6].contains(&k) {
            let ok = r.num("peak_loss_ratio") > 1.0 && r.num("loss_final") < 1e-8 && r.str("diverged") == "false";
            if !ok {
                bad.push(format!("(a) {k}"));
            }
        }
        if k >= 4.2 && r.str("diverged") != "true" {
            bad.push(format!("(c) {k}"));
        }
    }
    let mut lam = Vec::new();
    for r in &at25 {
        let (k, eta, l0, l) = (r.num("eta_lambda0"), r.num("eta"), r.num("lambda0"), r.num("lambda_at_stop"));
        if k < 2.0 {
            lam.push(l / l0);
            if !((l - l0).abs() <= 0.05 * l0) {
                bad.push(format!("(b) lazy {k}"));
            }
        } else if k < 4.0 {
            lam.push(l * eta / 2.0);
            if !(l < 2.0 / eta) {
                bad.push(format!("(b) catapult {k}"));
            }
        }
    }
    Check::new(
        bad.is_empty(),
        format!(
            "lambda0 = {:.3}; lambda/lambda0 (lazy) then lambda*eta/2 (catapult) at t*eta = 25: {}{}",
            at25[0].num("lambda0"),
            fmt_list(&lam),
            if bad.is_empty() { String::new() } else { format!("; failing: {}", bad.join(", ")) }
        ),
    )
}

fn critical_exponents(h: &mut Harness) -> Check {
    let (_, out) = h.run("critexp", &["critexp", "--n", "16000", "--side", "both"]);
    let result = read_result(&out.join("critexp.json"));
    let mut slopes = Vec::new();
    for side in result.as_array().into_iter().flatten() {
        slopes.push((side["side"].as_str().unwrap_or("?").to_string(), side["slope"].as_f64().unwrap_or(f64::NAN)));
    }
    let pass = slopes.len() == 2 && slopes.iter().all(|(_, s)| (-1.15..=-0.85).contains(s));
    let text: Vec<String> = slopes.iter().map(|(side, s)| format!("{side} {s:.3}")).collect();
    Check::new(pass, format!("width 16000, slopes {} (band [-1.15, -0.85])", text.join(", ")))
}

fn gradient_check() -> Check {
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut coords = 0;
    for act in [Activation::Relu, Activation::Tanh, Activation::Identity] {
        for p in [Parameterization::Ntk, Parameterization::Standard] {
            let spec = MlpSpec::new(5, &[16, 16], 3, act).with_parameterization(p).with_sigmas(1.3, 0.4);
            let model = MlpModel::init(spec, &mut Rng::new(21)).unwrap();
            let mut rng = Rng::new(22);
            let x = Matrix::from_vec(8, 5, gaussian_vector(&mut rng, 40, 1.0)).unwrap();
            let y = Matrix::from_vec(8, 3, gaussian_vector(&mut rng, 24, 1.0)).unwrap();
            let b = Batch::new(x, y).unwrap();
            let g = mlp_grad(&model, &b).unwrap();
            let floor = 1e-4 * max_abs(&g);
            for i in 0..model.num_params() {
                let mut plus = model.clone();
                plus.params[i] += h;
                let mut minus = model.clone();
                minus.params[i] -= h;
                let fd = (mlp_loss(&plus, &b).unwrap() - mlp_loss(&minus, &b).unwrap()) / (2.0 * h);
                worst = worst.max((fd - g[i]).abs() / g[i].abs().max(floor));
                coords += 1;
            }
        }
    }
    Check::new(
        worst <= 1e-5,
        format!("{coords} coordinates (relu/tanh/identity, ntk/standard, width 16), max relative error {worst:.2e}"),
    )
}

fn ntk_oracle() -> Check {
    let mut worst = 0.0f64;
    for k in [1, 2, 10] {
        let spec = MlpSpec::new(12, &[64, 64], k, Activation::Relu).with_sigmas(2f64.sqrt(), 0.1);
        let model = MlpModel::init(spec, &mut Rng::new(k as u64)).unwrap();
        let x = Matrix::from_vec(32, 12, gaussian_vector(&mut Rng::new(99), 32 * 12, 1.0)).unwrap();
        let j = jacobian(&model, &x).unwrap();
        let jm = DMatrix::from_row_slice(j.rows(), j.cols(), j.as_slice());
        let dense = (&jm * jm.transpose() / j.rows() as f64).symmetric_eigenvalues().max();
        let lanczos = ntk_top_eig(&model, &x, EigOptions::default()).unwrap().value;
        worst = worst.max((lanczos - dense).abs() / dense);
    }
    Check::new(worst <= 1e-6, format!("width 64, |B| = 32, k in {{1,2,10}}: max relative error {worst:.2e}"))
}

fn bisect(h: &mut Harness, label: &str, args: &[&str]) -> Option<f64> {
    let (_, out) = h.run(label, &[&["maxlr", "--model", "mlp"], args].concat());
    read_result(&out.join("maxlr.json"))["c_act"].as_f64()
}

fn relu_phases(h: &mut Harness) -> Check {
    let grid = [0.5, 1.0, 1.5, 1.9, 2.2, 2.5, 3.0, 4.5, 6.0, 9.0, 12.0];
    let grid_arg = grid.map(|k| k.to_string()).join(",");
    let (_, out) = h.run(
        "relu-sweep",
        &["sweep", "--model", "mlp", "--eta", &grid_arg, "--scaled", "--stop", "phys-scaled:60", "--eig-every", "0"],
    );
    let rows = read_csv(&out.join("sweep.csv"));
    h.collect_catapults("relu sweep", &rows);
    let c_act = bisect(h, "relu-maxlr", &["--probe-steps", "40", "--bracket", "4,24"]).unwrap_or(f64::NAN);
    if rows.len() != grid.len() {
        return Check::new(false, "sweep output missing");
    }
    let mut bad = Vec::new();
    let mut ratios = Vec::new();
    for r in &rows {
        let (k, eta, l0, l) = (r.num("eta_lambda0"), r.num("eta"), r.num("lambda0"), r.num("lambda_at_stop"));
        ratios.push(l / l0);
        if k < 2.0 && !((l - l0).abs() <= 0.1 * l0) {
            bad.push(format!("lazy {k}"));
        }
        if k > 2.0 && k < c_act && !(l < 2.0 / eta) {
            bad.push(format!("catapult {k}"));
        }
    }
    let pass = bad.is_empty() && (9.0..=15.0).contains(&c_act);
    Check::new(
        pass,
        format!(
            "3x512 ReLU, 512 MNIST samples, t*eta = 60/lambda0: lambda/lambda0 at eta*lambda0 = {} -> {}; c_act = {c_act:.2} (band [9, 15]){}",
            fmt_list(&grid),
            fmt_list(&ratios),
            if bad.is_empty() { String::new() } else { format!("; failing: {}", bad.join(", ")) }
        ),
    )
}

fn tanh_boundary(h: &mut Harness) -> Check {
    let c_act = bisect(
        h,
        "tanh-maxlr",
        &[
            "--hidden", "512,512", "--activation", "tanh", "--param", "standard", "--sigma-w", "1", "--probe-steps",
            "100", "--bracket", "2,8",
        ],
    )
    .unwrap_or(f64::NAN);
    Check::new((3.0..=6.0).contains(&c_act), format!("2x512 tanh, standard init: c_act = {c_act:.2} (band [3, 6])"))
}

fn linearization(h: &mut Harness) -> Check {
    let mut bad = Vec::new();
    let mut parts = Vec::new();
    for (k, steps) in [(2.5, 80), (2.75, 72), (3.0, 66)] {
        let (k_s, steps_s) = (k.to_string(), steps.to_string());
        let (_, out) = h.run(
            "linearize",
            &[
                "linearize", "--hidden", "2048", "--test-size", "1000", "--eta-scaled", &k_s, "--steps", &steps_s,
                "--t-lin", "10",
            ],
        );
        let doc = read_result(&out.join("linearize.json"));
        let nl = &doc["nonlinear"];
        let lin = &doc["linearized"];
        let f = |v: &Value, key: &str| v[key].as_f64().unwrap_or(f64::NAN);
        let loss_gap = (f(lin, "train_loss") - f(nl, "train_loss")).abs() / f(nl, "train_loss");
        let acc_gap = (f(lin, "test_accuracy") - f(nl, "test_accuracy")).abs();
        let zero_div = doc["linearized_at_zero_diverged"].as_bool() == Some(true);
        parts.push(format!(
            "{k}: loss gap {:.1}%, test acc {:.3} vs {:.3}, step-0 tangent {}",
            100.0 * loss_gap,
            f(lin, "test_accuracy"),
            f(nl, "test_accuracy"),
            if zero_div { "diverged" } else { "did not diverge" }
        ));
        if !(loss_gap <= 0.1 && acc_gap <= 0.02 && zero_div) {
            bad.push(k.to_string());
        }
    }
    Check::new(
        bad.is_empty(),
        format!(
            "1x2048 ReLU, t*eta = 200/lambda0: {}{}",
            parts.join("; "),
            if bad.is_empty() { String::new() } else { format!("; failing: {}", bad.join(", ")) }
        ),
    )
}

fn kernel_scaling(h: &mut Harness) -> Check {
    let widths = [64, 128, 256, 512, 1024];
    let mut changes = Vec::new();
    for w in widths {
        let w_s = w.to_string();
        let (_, out) = h.run(
            "kernel",
            &[
                "linearize", "--classes", "0,1", "--train-size", "200", "--hidden", &w_s, "--eta-scaled", "0.5",
                "--steps", "50", "--t-lin", "50", "--kernel-t-end", "1000",
            ],
        );
        changes.push(read_result(&out.join("linearize.json"))["kernel_change"].as_f64().unwrap_or(f64::NAN));
    }
    let decreasing = changes.windows(2).filter(|p| p[1] < p[0]).count();
    Check::new(
        decreasing >= 3,
        format!(
            "2-class MNIST, eta*lambda0 = 0.5, change between steps 50 and 1000 at widths 64..1024: {} ({decreasing} of 4 doublings decrease)",
            changes.iter().map(|c| format!("{c:.4}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn catapult_endpoint(h: &mut Harness) -> Check {
    let mut bad = Vec::new();
    for (source, eta, l0, l) in &h.catapults {
        if !(*l <= 2.0 / eta + 1e-6 * l0) {
            bad.push(format!("{source} eta*lambda0 = {:.3}: lambda_final*eta = {:.4}", eta * l0, l * eta));
        }
    }
    Check::new(
        bad.is_empty() && !h.catapults.is_empty(),
        format!(
            "{} Catapult-labeled reports checked{}",
            h.catapults.len(),
            if bad.is_empty() { String::new() } else { format!("; violations: {}", bad.join(", ")) }
        ),
    )
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).into_iter().flatten().flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else if let Ok(bytes) = fs::read(&path) {
                files.insert(path, bytes);
            }
        }
    }
    files
}

fn determinism(h: &mut Harness) -> Check {
    let mut differing = Vec::new();
    let mut files = 0;
    for inv in &h.invocations {
        let before = snapshot(&inv.out);
        invoke(&inv.args);
        let after = snapshot(&inv.out);
        files += before.len();
        if before.is_empty() || before != after {
            differing.push(inv.args[0].clone() + " " + &inv.out.file_name().unwrap().to_string_lossy());
        }
    }
    Check::new(
        differing.is_empty(),
        format!(
            "{} commands rerun with identical flags, {files} files compared{}",
            h.invocations.len(),
            if differing.is_empty() { " byte-for-byte".into() } else { format!("; differing: {}", differing.join(", ")) }
        ),
    )
}

fn main() {
    let secs = Duration::from_secs;
    let mut h = Harness::new();
    h.criterion(1, "warmup exactness", Some(secs(10)), |_| warmup_exactness());
    h.criterion(2, "full-model exactness", Some(secs(30)), |_| linear_exactness());
    h.criterion(3, "warmup phase figure", Some(secs(10)), warmup_figure);
    h.criterion(4, "critical exponents", Some(secs(120)), critical_exponents);
    h.criterion(5, "MLP gradient", Some(secs(5)), |_| gradient_check());
    h.criterion(6, "NTK oracle", Some(secs(10)), |_| ntk_oracle());
    h.criterion(7, "ReLU phase structure", Some(secs(600)), relu_phases);
    h.criterion(8, "tanh boundary", Some(secs(300)), tanh_boundary);
    h.criterion(9, "linearization after catapult", Some(secs(900)), linearization);
    h.criterion(10, "kernel-change width scaling", Some(secs(600)), kernel_scaling);
    h.criterion(11, "catapult endpoint", None, catapult_endpoint);
    h.criterion(12, "determinism", None, determinism);

    let failed = h.lines.iter().filter(|(pass, _)| !pass).count();
    println!("\n{} of {} criteria passed", h.lines.len() - failed, h.lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
