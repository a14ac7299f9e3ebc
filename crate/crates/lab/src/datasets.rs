//! Loading and preparing the datasets named on the command line.

use std::path::{Path, PathBuf};

use catapult_core::data::{
    balanced_subset, dataset_from_idx, gen_gaussian, parse_idx_images, parse_idx_labels, Dataset, LabelKind, Split,
};
use catapult_core::experiments::MlpSystem;
use catapult_core::mlp::MlpSpec;
use catapult_core::numerics::Rng;

use crate::cli::{DatasetKind, MlpArgs};
use crate::error::{LabError, LabResult};

pub const DATA_DIR_ENV: &str = "CATAPULT_DATA_DIR";
const MNIST_CLASSES: usize = 10;

/// `$CATAPULT_DATA_DIR`, else the subset shipped with the repository.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-5k"))
}

/// Pixels scaled to `[0, 1]`, one-hot targets.
pub fn load_mnist(dir: &Path, split: Split) -> LabResult<Dataset> {
    let (images, labels) = match split {
        Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    };
    let read = |name: &str| {
        let p = dir.join(name);
        std::fs::read(&p).map_err(|e| LabError::io(p, e))
    };
    let images = parse_idx_images(&read(images)?)?;
    let labels = parse_idx_labels(&read(labels)?, MNIST_CLASSES)?;
    Ok(dataset_from_idx(&images, &labels, MNIST_CLASSES, 1.0 / 255.0, split)?)
}

/// Training (and optional test) data after subsetting, preprocessing and label smoothing.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Option<Dataset>,
}

fn subset(ds: Dataset, classes: &[u8], size: usize, seed: u64) -> LabResult<Dataset> {
    let ds = if classes.is_empty() { ds } else { ds.restrict_classes(classes)? };
    let k = ds.output_dim();
    let labels = ds.labels.as_ref().ok_or_else(|| LabError::Config("dataset has no labels".into()))?;
    let idx = balanced_subset(labels, k, size, seed)?;
    Ok(ds.select(&idx))
}

pub fn prepare(args: &MlpArgs) -> LabResult<Prepared> {
    if args.train_size == 0 {
        return Err(LabError::Config("--train-size must be positive".into()));
    }
    let (train, test) = match args.dataset {
        DatasetKind::Mnist => {
            let dir = data_dir();
            let train = subset(load_mnist(&dir, Split::Train)?, &args.classes, args.train_size, args.data_seed)?;
            let test = if args.test_size > 0 {
                Some(subset(load_mnist(&dir, Split::Test)?, &args.classes, args.test_size, args.data_seed)?)
            } else {
                None
            };
            (train, test)
        }
        DatasetKind::Gaussian => {
            if !args.classes.is_empty() {
                return Err(LabError::Config("--classes applies to MNIST only".into()));
            }
            let kind = LabelKind::Classes(args.gaussian_classes);
            let mut rng = Rng::new(args.data_seed);
            let train = gen_gaussian(&mut rng, args.train_size, args.gaussian_dim, kind)?;
            let test = if args.test_size > 0 {
                let mut t = gen_gaussian(&mut rng, args.test_size, args.gaussian_dim, kind)?;
                t.split = Split::Test;
                Some(t)
            } else {
                None
            };
            (train, test)
        }
    };
    let map = args.preprocess.fit(&train)?;
    let smooth = |d: Dataset| {
        if args.label_smoothing != 0.0 {
            d.with_label_smoothing(args.label_smoothing)
        } else {
            d
        }
    };
    Ok(Prepared {
        train: smooth(map.apply(&train)?),
        test: test.map(|t| map.apply(&t).map(smooth)).transpose()?,
    })
}

pub fn mlp_spec(args: &MlpArgs, data: &Prepared) -> LabResult<MlpSpec> {
    let spec = MlpSpec::new(data.train.input_dim(), &args.hidden, data.train.output_dim(), args.activation)
        .with_parameterization(args.param)
        .with_sigmas(args.sigma_w, args.sigma_b);
    spec.validate()?;
    Ok(spec)
}

/// The experiment system for an MLP described by `args`.
pub fn mlp_system(args: &MlpArgs, eig_every: u64) -> LabResult<MlpSystem> {
    let data = prepare(args)?;
    let spec = mlp_spec(args, &data)?;
    let mut sys = MlpSystem::new(spec, data.train.batch());
    sys.test = data.test.map(|t| t.batch());
    sys.momentum = args.momentum;
    sys.l2 = args.l2;
    sys.batch_size = args.batch_size;
    sys.eig_every = eig_every;
    sys.eig_tol = args.eig_tol;
    Ok(sys)
}
