//! MLP derivatives and NTK eigenvalues against independent oracles:
//! central finite differences and dense diagonalization with nalgebra.

use catapult_core::mlp::{
    jacobian, mlp_grad, mlp_loss, ntk_top_eig, Activation, Batch, MlpModel, MlpSpec, Parameterization,
};
use catapult_core::numerics::{gaussian_vector, EigOptions, Matrix, Rng};
use nalgebra::DMatrix;

const ACTIVATIONS: [Activation; 3] = [Activation::Relu, Activation::Tanh, Activation::Identity];
const PARAMETERIZATIONS: [Parameterization; 2] = [Parameterization::Ntk, Parameterization::Standard];

fn batch(rng: &mut Rng, rows: usize, d: usize, k: usize) -> Batch {
    let x = Matrix::from_vec(rows, d, gaussian_vector(rng, rows * d, 1.0)).unwrap();
    let y = Matrix::from_vec(rows, k, gaussian_vector(rng, rows * k, 1.0)).unwrap();
    Batch::new(x, y).unwrap()
}

#[test]
fn every_gradient_coordinate_matches_central_differences() {
    let h = 1e-5;
    for act in ACTIVATIONS {
        for p in PARAMETERIZATIONS {
            let spec = MlpSpec::new(5, &[16, 16], 3, act)
                .with_parameterization(p)
                .with_sigmas(1.3, 0.4);
            let model = MlpModel::init(spec, &mut Rng::new(21)).unwrap();
            let b = batch(&mut Rng::new(22), 8, 5, 3);
            let g = mlp_grad(&model, &b).unwrap();
            let floor = 1e-4 * g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..model.num_params() {
                let mut plus = model.clone();
                plus.params[i] += h;
                let mut minus = model.clone();
                minus.params[i] -= h;
                let fd = (mlp_loss(&plus, &b).unwrap() - mlp_loss(&minus, &b).unwrap()) / (2.0 * h);
                let err = (fd - g[i]).abs() / g[i].abs().max(floor);
                assert!(err <= 1e-5, "{act:?} {p:?} coordinate {i}: {fd} vs {} ({err:e})", g[i]);
            }
        }
    }
}

/// Largest eigenvalue of `J J^T / (k |B|)` from a dense symmetric solver.
fn dense_top_eigenvalue(model: &MlpModel, x: &Matrix) -> f64 {
    let j = jacobian(model, x).unwrap();
    let (rows, cols) = (j.rows(), j.cols());
    let jm = DMatrix::from_row_slice(rows, cols, j.as_slice());
    let gram = &jm * jm.transpose() / rows as f64;
    gram.symmetric_eigenvalues().max()
}

#[test]
fn matrix_free_top_eigenvalue_matches_dense_gram() {
    for k in [1, 2, 10] {
        for act in ACTIVATIONS {
            let spec = MlpSpec::new(12, &[64, 64], k, act).with_sigmas(2f64.sqrt(), 0.1);
            let model = MlpModel::init(spec, &mut Rng::new(k as u64)).unwrap();
            let x = Matrix::from_vec(32, 12, gaussian_vector(&mut Rng::new(99), 32 * 12, 1.0)).unwrap();
            let dense = dense_top_eigenvalue(&model, &x);
            let lanczos = ntk_top_eig(&model, &x, EigOptions::with_tol(1e-10)).unwrap().value;
            let err = (lanczos - dense).abs() / dense;
            assert!(err <= 1e-6, "k={k} {act:?}: {lanczos} vs {dense} ({err:e})");
        }
    }
}

#[test]
fn standard_parameterization_eigenvalue_matches_dense_gram() {
    let spec = MlpSpec::new(12, &[64], 10, Activation::Tanh)
        .with_parameterization(Parameterization::Standard)
        .with_sigmas(1.0, 0.0);
    let model = MlpModel::init(spec, &mut Rng::new(4)).unwrap();
    let x = Matrix::from_vec(32, 12, gaussian_vector(&mut Rng::new(5), 32 * 12, 1.0)).unwrap();
    let dense = dense_top_eigenvalue(&model, &x);
    let lanczos = ntk_top_eig(&model, &x, EigOptions::default()).unwrap().value;
    assert!((lanczos - dense).abs() <= 1e-6 * dense);
}
