//! Accuracy against training-set size for rotatable and standard filters on
//! synthetic textures, through the softmax head and through descriptors with
//! a 1-NN classifier.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetSplit, SynthProblem};
use crate::error::{config_err, Result};
use crate::features::FeatureExtractor;
use crate::net::{Network, NetworkParams, PoolGrid};
use crate::rotconv::Arch;
use crate::shallowml::{accuracy, knn1_cityblock};
use crate::tensor::Tensor;
use crate::train::{augment_rotate_crop, init_network, train, TrainConfig, TrainHistory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchArm {
    pub name: String,
    pub train: TrainConfig,
    /// Orientations at extraction; ignored (1) for the standard arch.
    pub r_eval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub problem: SynthProblem,
    pub sizes: Vec<usize>,
    pub val_per_class: usize,
    pub arms: Vec<BenchArm>,
    pub grid: PoolGrid,
    /// Divide each descriptor dimension by its mean magnitude over the
    /// training features before 1-NN.
    pub rescale: bool,
}

/// Training settings shared by both arms of the default benchmark.
pub fn bench_train_config(arch: Arch, groups: usize, orientations: usize, size: usize, image: usize) -> TrainConfig {
    TrainConfig {
        arch,
        learning_rate: 0.01,
        phase2_epochs: 20,
        batch_size: 12,
        max_epochs: 150,
        patience: 10,
        orientations,
        groups,
        size,
        crop: image,
        ..TrainConfig::default()
    }
}

impl Default for BenchConfig {
    fn default() -> Self {
        let problem = SynthProblem::default();
        let image = problem.size;
        BenchConfig {
            sizes: vec![1, 5, 10],
            val_per_class: 2,
            arms: vec![
                BenchArm {
                    name: "rotatable".into(),
                    train: bench_train_config(Arch::Rotatable, 6, 16, 15, image),
                    r_eval: 32,
                },
                BenchArm {
                    name: "standard".into(),
                    train: bench_train_config(Arch::Standard, 6, 1, 15, image),
                    r_eval: 1,
                },
            ],
            grid: PoolGrid::new(4, 4),
            rescale: true,
            problem,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub arm: String,
    pub train_per_class: usize,
    pub softmax_acc: f64,
    pub nn_acc: f64,
    pub epochs: usize,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("arm,train_per_class,softmax_acc,nn_acc,epochs,best_epoch\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.arm, r.train_per_class, r.softmax_acc, r.nn_acc, r.epochs, r.best_epoch
            );
        }
        s
    }

    pub fn row(&self, arm: &str, size: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.arm == arm && r.train_per_class == size)
    }
}

/// Per-dimension mean magnitude of `rows`; all-zero dims get scale 1.
fn scale_fit(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    (0..rows[0].len())
        .map(|j| {
            let m = rows.iter().map(|r| r[j].abs()).sum::<f64>() / n;
            if m > 1e-300 {
                m
            } else {
                1.0
            }
        })
        .collect()
}

fn rescale(rows: &mut [Vec<f64>], scale: &[f64]) {
    for r in rows {
        for (v, s) in r.iter_mut().zip(scale) {
            *v /= s;
        }
    }
}

/// Descriptor + 1-NN accuracy of `params` trained on `train_split`.
pub fn descriptor_nn_accuracy(
    params: &NetworkParams,
    train_split: &DatasetSplit,
    test: &DatasetSplit,
    r_eval: usize,
    grid: PoolGrid,
    rescale_dims: bool,
) -> Result<f64> {
    let norm = params.normalization;
    let mut ex = FeatureExtractor::new(&params.bank, r_eval, grid)?;
    let prep = |s: &DatasetSplit| -> Vec<Tensor> { s.images.par_iter().map(|t| norm.apply(t)).collect() };
    let mut train_f: Vec<Vec<f64>> = ex.extract_batch(&prep(train_split))?.into_iter().map(|f| f.values).collect();
    let mut test_f: Vec<Vec<f64>> = ex.extract_batch(&prep(test))?.into_iter().map(|f| f.values).collect();
    if rescale_dims && !train_f.is_empty() {
        let s = scale_fit(&train_f);
        rescale(&mut train_f, &s);
        rescale(&mut test_f, &s);
    }
    let pred: Vec<usize> = test_f
        .par_iter()
        .map(|q| knn1_cityblock(&train_f, &train_split.labels, q))
        .collect::<Result<_>>()?;
    Ok(accuracy(&pred, &test.labels))
}

/// Softmax-head accuracy on center crops of `test`.
pub fn softmax_accuracy(params: &NetworkParams, test: &DatasetSplit, crop: usize) -> Result<f64> {
    let norm = params.normalization;
    let images: Vec<Tensor> = test
        .images
        .par_iter()
        .map(|t| augment_rotate_crop(&norm.apply(t), 0.0, crop))
        .collect::<Result<_>>()?;
    let net = Network::new(params.clone())?;
    let out = net.predict(&images)?;
    Ok(accuracy(&out.predictions(), &test.labels))
}

pub struct ArmResult {
    pub row: BenchRow,
    pub params: NetworkParams,
    pub history: TrainHistory,
}

pub fn run_arm(
    arm: &BenchArm,
    train_split: &DatasetSplit,
    val: &DatasetSplit,
    test: &DatasetSplit,
    grid: PoolGrid,
    rescale_dims: bool,
) -> Result<ArmResult> {
    let init = init_network(&arm.train, train_split.class_count)?;
    let (params, history) = train(init, train_split, val, &arm.train)?;
    let r_eval = match arm.train.arch {
        Arch::Rotatable => arm.r_eval,
        Arch::Standard => 1,
    };
    let softmax_acc = softmax_accuracy(&params, test, arm.train.crop)?;
    let nn_acc = descriptor_nn_accuracy(&params, train_split, test, r_eval, grid, rescale_dims)?;
    let per_class = train_split.class_counts().into_iter().max().unwrap_or(0);
    Ok(ArmResult {
        row: BenchRow {
            arm: arm.name.clone(),
            train_per_class: per_class,
            softmax_acc,
            nn_acc,
            epochs: history.records.len(),
            best_epoch: history.best_epoch,
        },
        params,
        history,
    })
}

/// Runs every arm at every training size. `log` receives progress lines.
pub fn run_bench(cfg: &BenchConfig, mut log: impl FnMut(&str)) -> Result<BenchReport> {
    if cfg.sizes.is_empty() || cfg.arms.is_empty() {
        return Err(config_err!("benchmark needs at least one size and one arm"));
    }
    if cfg.val_per_class == 0 {
        return Err(config_err!("benchmark needs validation images"));
    }
    let max_size = *cfg.sizes.iter().max().expect("non-empty");
    let problem = SynthProblem {
        train_per_class: max_size,
        ..cfg.problem.clone()
    };
    let (full_train, test) = problem.generate()?;
    let val = problem.generate_validation(cfg.val_per_class)?;
    let mut rows = Vec::new();
    for arm in &cfg.arms {
        for &size in &cfg.sizes {
            if size == 0 {
                return Err(config_err!("training size must be positive"));
            }
            let start = Instant::now();
            let subset = full_train.take_per_class(size);
            let res = run_arm(arm, &subset, &val, &test, cfg.grid, cfg.rescale)?;
            log(&format!(
                "{} size {}: softmax {:.4} 1-NN {:.4} ({} epochs, {:.1}s)",
                arm.name,
                size,
                res.row.softmax_acc,
                res.row.nn_acc,
                res.row.epochs,
                start.elapsed().as_secs_f64()
            ));
            rows.push(res.row);
        }
    }
    Ok(BenchReport { rows })
}
