//! Qualitative training dynamics: phases, alignment, critical slowing down,
//! physical-time scaling, the ReLU chain and kernel motion.

use catapult_core::experiments::{critical_exponent, physical_time_compare, PhaseSystem, Side, SweepCfg, WarmupSystem};
use catapult_core::experiments::{Decay, EtaGrid, PhysTime, StopRule};
use catapult_core::linear::{
    forward, project_state, projected_kernel_increment, run_linear, step_params_full, LinearNetParams, RegressionSet,
};
use catapult_core::linearize::kernel_change;
use catapult_core::mlp::{
    ntk_top_eig, relu_simple_model, sgd_train, Activation, Batch, MlpModel, MlpSpec, OptimizerCfg, TrainOpts,
};
use catapult_core::numerics::{gaussian_vector, linalg::dot, EigOptions, Matrix, Rng};
use catapult_core::phase::{PhaseCriteria, PhaseLabel};
use catapult_core::warmup::{init_warmup, run_warmup};

fn linear_instance(n: usize, d: usize, m: usize, seed: u64) -> (LinearNetParams, RegressionSet) {
    let p = LinearNetParams::init(&mut Rng::new(seed), n, d).unwrap();
    let data = RegressionSet::gaussian(&mut Rng::with_stream(seed, 1), m, d).unwrap();
    (p, data)
}

fn quadratic_form(a: &Matrix, x: &[f64]) -> f64 {
    let mut ax = vec![0.0; x.len()];
    a.matvec(x, &mut ax);
    dot(x, &ax)
}

#[test]
fn projected_kernel_identity_holds_every_step() {
    let (n, d, m) = (256, 4, 8);
    let (mut p, data) = linear_instance(n, d, m, 5);
    let l0 = forward(&p, &data).unwrap().top_eigenvalue().unwrap();
    let eta = 3.0 / l0;
    for t in 0..150 {
        let s = forward(&p, &data).unwrap();
        p = step_params_full(&p, &data, eta).unwrap();
        let next = forward(&p, &data).unwrap();
        let lhs = quadratic_form(&next.theta, &s.f_tilde) - quadratic_form(&s.theta, &s.f_tilde);
        let rhs = projected_kernel_increment(&s, eta, n);
        // Each quadratic form sums terms of size up to `lambda |f~|^2`, which
        // bounds the rounding error of their difference.
        let scale = s.top_eigenvalue().unwrap() * dot(&s.f_tilde, &s.f_tilde);
        assert!((lhs - rhs).abs() <= 1e-9 * scale, "t={t}: {lhs} vs {rhs}");
    }
}

#[test]
fn catapult_aligns_error_with_top_eigenvector() {
    let (n, d, m) = (4096, 8, 16);
    let (mut p, data) = linear_instance(n, d, m, 1);
    let s0 = forward(&p, &data).unwrap();
    let l0 = s0.top_eigenvalue().unwrap();
    let eta = 3.0 / l0;
    let mut best = f64::INFINITY;
    let mut prev_loss = s0.loss();
    for _ in 0..200 {
        p = step_params_full(&p, &data, eta).unwrap();
        let s = forward(&p, &data).unwrap();
        if s.loss() < prev_loss && best < 0.05 {
            break;
        }
        prev_loss = s.loss();
        let proj = project_state(&s).unwrap();
        best = best.min((proj.lambda_hat - proj.lambda).abs() / proj.lambda);
    }
    assert!(best < 0.05, "misalignment {best}");
}

#[test]
fn linear_model_phases() {
    let crit = PhaseCriteria::default();
    let n = 1000;
    let (p, data) = linear_instance(n, 16, 8, 2);
    let l0 = forward(&p, &data).unwrap().top_eigenvalue().unwrap();

    let (trace, lazy) = run_linear(&p, &data, 1.0 / l0, 100, &crit, 2).unwrap();
    let drift = trace.records.iter().filter_map(|r| r.lambda).map(|l| (l - l0).abs() / l0).fold(0.0, f64::max);
    assert!(drift <= 10.0 / n as f64, "drift {drift}");
    let (_, lazy) = (trace, lazy);
    let (_, full) = run_linear(&p, &data, 1.0 / l0, 100_000, &crit, 2).unwrap();
    assert_eq!(full.phase, Some(PhaseLabel::Lazy));
    assert!(lazy.lambda0 == l0);

    let eta = 3.0 / l0;
    let (_, cat) = run_linear(&p, &data, eta, 100_000, &crit, 2).unwrap();
    assert_eq!(cat.phase, Some(PhaseLabel::Catapult));
    assert!(cat.lambda_final < 2.0 / eta);

    let (_, div) = run_linear(&p, &data, 4.5 / l0, 100_000, &crit, 2).unwrap();
    assert_eq!(div.phase, Some(PhaseLabel::Divergent));
}

#[test]
fn halving_distance_to_critical_rate_doubles_convergence_time() {
    let crit = PhaseCriteria::default();
    for side in [Side::Below, Side::Above] {
        let r = critical_exponent(16_000, 0, &[0.04, 0.08, 0.16], side, 10_000_000, &crit).unwrap();
        assert!(r.excluded.is_empty(), "{:?}", r.excluded);
        for pair in r.points.windows(2) {
            let ratio = pair[0].1 as f64 / pair[1].1 as f64;
            assert!((1.7..=2.3).contains(&ratio), "{side:?} {pair:?}: {ratio}");
        }
    }
}

#[test]
fn small_rates_overlay_in_physical_time() {
    let crit = PhaseCriteria::default();
    let p = init_warmup(&mut Rng::new(3), 1000).unwrap();
    let l0 = p.kernel();
    let taus = [0.2, 0.4, 0.6, 0.8, 1.0];
    let curves: Vec<Vec<f64>> = [0.01, 0.02, 0.04]
        .iter()
        .map(|k| {
            let eta = k / l0;
            let (trace, _) = run_warmup(&p, eta, (1.0 / k) as u64 + 2, &crit);
            taus.iter()
                .map(|tau| {
                    let t = catapult_core::trace::trace_reduce(&trace, tau / l0).unwrap();
                    t.loss
                })
                .collect()
        })
        .collect();
    for c in &curves[1..] {
        for (a, b) in c.iter().zip(&curves[0]) {
            assert!((a - b).abs() <= 0.05 * b, "{a} vs {b}");
        }
    }
}

#[test]
fn one_point_compare_matches_plain_training() {
    let sys = WarmupSystem { n: 200, criteria: PhaseCriteria::default() };
    let mut cfg = SweepCfg::new(EtaGrid::Scaled(vec![3.0]), StopRule::FixedPhysicalTime(PhysTime::Scaled(30.0)));
    cfg.decay = Some(Decay { eta_final: 0.5, extra_steps: 40 });
    let rows = physical_time_compare(&sys, &cfg).unwrap();
    assert_eq!(rows.len(), 1);

    let model = sys.init(0).unwrap();
    let l0 = sys.lambda0(&model).unwrap();
    let mut state = model;
    let fast = catapult_core::experiments::TrainRequest { eta: 3.0 / l0, steps: 10, until_full_accuracy: false, seed: 0 };
    let (m1, _) = sys.train(&state, fast).unwrap();
    state = m1;
    let slow = catapult_core::experiments::TrainRequest { eta: 0.5 / l0, steps: 40, until_full_accuracy: false, seed: 0 };
    let (m2, _) = sys.train(&state, slow).unwrap();
    let metrics = sys.metrics(&m2).unwrap();
    assert_eq!(rows[0].metrics.as_ref().unwrap().train_loss, metrics.train_loss);
}

#[test]
fn relu_chain_behaviour() {
    let tiny = relu_simple_model(256, 0.05, 200, 0).unwrap();
    let l: Vec<f64> = tiny.losses().collect();
    assert!(l.windows(2).all(|w| w[1] <= w[0]));

    for k in [3.0, 6.0, 8.0] {
        let t = relu_simple_model(1024, k, 150, 0).unwrap();
        assert!(!t.diverged, "eta*l0={k}");
        assert!(t.last().unwrap().loss < 1e-3, "eta*l0={k}: {}", t.last().unwrap().loss);
    }

    for seed in 0..2 {
        let big = relu_simple_model(1024, 12.0, 150, seed).unwrap();
        assert!(!big.diverged);
        let last = big.last().unwrap();
        let f = last.aux[big.aux_index("f").unwrap()];
        assert_eq!(f, 0.0, "seed {seed}: expected the dead f = 0 endpoint");
        assert_eq!(last.lambda, Some(0.0));
    }
}

fn mlp_problem(width: usize) -> (MlpModel, Batch) {
    let spec = MlpSpec::new(10, &[width], 2, Activation::Relu).with_sigmas(2f64.sqrt(), 0.0);
    let model = MlpModel::init(spec, &mut Rng::new(0)).unwrap();
    let mut rng = Rng::new(1);
    let x = Matrix::from_vec(32, 10, gaussian_vector(&mut rng, 320, 1.0)).unwrap();
    let y = Matrix::from_vec(32, 2, gaussian_vector(&mut rng, 64, 1.0)).unwrap();
    (model, Batch::new(x, y).unwrap())
}

#[test]
fn catapult_moves_the_kernel_by_order_one() {
    let (model, b) = mlp_problem(512);
    let l0 = ntk_top_eig(&model, &b.x, EigOptions::default()).unwrap().value;
    let train = |m: &MlpModel, eta: f64, steps: u64| {
        let mut opts = TrainOpts::new(steps);
        opts.eig_every = 0;
        let (next, trace) = sgd_train(m, &b, &b.x, &OptimizerCfg::sgd(eta), &opts, 0).unwrap();
        assert!(!trace.diverged);
        next
    };
    let eta = 3.0 / l0;
    let after = train(&model, eta, 30);
    let later = train(&after, eta, 200);
    let across = kernel_change(&model, &after, &b.x).unwrap();
    let post = kernel_change(&after, &later, &b.x).unwrap();
    assert!(across > 0.3, "across {across}");
    assert!(across > post, "{across} vs {post}");

    let lazy = train(&model, 0.5 / l0, 230);
    assert!(kernel_change(&model, &lazy, &b.x).unwrap() < across / 3.0);
}

/// Largest `|lambda_t / lambda0 - 1|` over 60 steps of heavy-ball training at
/// `eta = 1 / lambda0` on a two-hidden-layer net.
fn momentum_kernel_drift(act: Activation, width: usize, momentum: f64) -> f64 {
    let mut rng = Rng::new(6);
    let x = Matrix::from_vec(16, 10, gaussian_vector(&mut rng, 160, 1.0)).unwrap();
    let y = Matrix::from_fn(16, 4, |r, c| if r % 4 == c { 1.0 } else { 0.0 });
    let b = Batch::new(x, y).unwrap();
    let spec = MlpSpec::new(10, &[width, width], 4, act).with_sigmas(2f64.sqrt(), 0.0);
    let model = MlpModel::init(spec, &mut Rng::new(4)).unwrap();
    let l0 = ntk_top_eig(&model, &b.x, EigOptions::default()).unwrap().value;
    let cfg = OptimizerCfg { eta: 1.0 / l0, momentum, l2: 0.0 };
    let mut opts = TrainOpts::new(60);
    opts.eig_every = 10;
    let (_, trace) = sgd_train(&model, &b, &b.x, &cfg, &opts, 0).unwrap();
    assert!(!trace.diverged);
    trace.records.iter().filter_map(|r| r.lambda).map(|l| (l / l0 - 1.0).abs()).fold(0.0, f64::max)
}

#[test]
fn momentum_kernel_drift_shrinks_with_width_for_smooth_activations() {
    for act in [Activation::Tanh, Activation::Identity] {
        let narrow = momentum_kernel_drift(act, 256, 0.9);
        let wide = momentum_kernel_drift(act, 1024, 0.9);
        assert!(wide <= 0.5 * narrow, "{act:?}: {narrow} -> {wide}");
        let plain = momentum_kernel_drift(act, 1024, 0.0);
        assert!(plain <= 0.02, "{act:?}: {plain}");
    }
}
