//! The `rotex` command line.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bench::{run_bench, BenchConfig};
use crate::data::{encode_pgm, load_problem, write_problem, DatasetSplit, SynthProblem};
use crate::error::{config_err, Error, Result};
use crate::features::{Block, FeatureExtractor, DEFAULT_R_EVAL};
use crate::gradcheck::{self, GradCheckConfig};
use crate::io::{load_checkpoint, save_checkpoint, FeatureTable, ShallowModel, Classifier};
use crate::net::{Network, NetworkParams, PoolGrid};
use crate::rotation::{make_rotation_operator, orientation_angles, rotate_filter};
use crate::rotconv::Arch;
use crate::shallowml::{accuracy, lda_fit, pca_fit};
use crate::tensor::Tensor;
use crate::train::{augment_rotate_crop, holdout_split, init_network, train, TrainConfig};

pub const THREADS_ENV: &str = "ROTEX_THREADS";

/// Exit status for a failed gradient check.
pub const EXIT_GRADCHECK: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "rotex", version, about = "Rotation-invariant texture features from rotatable filter banks")]
pub struct Cli {
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and write a checkpoint, history and run manifest.
    Train(TrainArgs),
    /// Compute descriptors for every image of a dataset.
    Extract(ExtractArgs),
    /// Classify test descriptors (LDA or 1-NN) or images (softmax head).
    Classify(ClassifyArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Write canonical (and rotated) filters as PGM images.
    ExportFilters(ExportArgs),
    /// Accuracy against training-set size on synthetic textures.
    Bench(BenchArgs),
    /// Write a synthetic problem in the manifest + PGM layout.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Problem directory with train.txt, test.txt and images/.
    #[arg(long, conflicts_with = "synth")]
    pub data: Option<PathBuf>,
    /// Synthetic problem: `default` or a JSON spec file.
    #[arg(long)]
    pub synth: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchArg {
    Rotatable,
    Standard,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "rotatable")]
    pub arch: ArchArg,
    /// Rotation groups.
    #[arg(long = "M", default_value_t = 16)]
    pub groups: usize,
    /// Filter count for the standard arch (overrides --M).
    #[arg(long)]
    pub filters: Option<usize>,
    /// Rotations per group.
    #[arg(long = "R", default_value_t = 32)]
    pub orientations: usize,
    /// Filter side.
    #[arg(long = "n", default_value_t = 35)]
    pub size: usize,
    #[arg(long, default_value_t = 88)]
    pub crop: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.2)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0.1)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 100)]
    pub phase2_epochs: usize,
    #[arg(long, default_value_t = 24)]
    pub batch: usize,
    #[arg(long, default_value_t = 2000)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "2x2")]
    pub grid: PoolGrid,
    #[arg(long)]
    pub augment_rotations: bool,
    /// Fraction of each class held out for validation.
    #[arg(long, default_value_t = 0.02)]
    pub holdout: f64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExtractArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long = "R-eval", default_value_t = DEFAULT_R_EVAL)]
    pub r_eval: usize,
    #[arg(long, default_value = "4x4")]
    pub grid: PoolGrid,
    #[arg(long, default_value = "both")]
    pub block: Block,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ClfArg {
    Lda,
    #[value(name = "1nn")]
    #[serde(rename = "1nn")]
    Knn,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricArg {
    Cityblock,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ClassifyArgs {
    #[arg(long, value_enum, default_value = "lda")]
    pub clf: ClfArg,
    /// Training descriptors (.csv or .bin).
    #[arg(long)]
    pub train_features: Option<PathBuf>,
    /// Test descriptors (.csv or .bin).
    #[arg(long)]
    pub test_features: Option<PathBuf>,
    /// Reduce descriptors to this many principal components first.
    #[arg(long)]
    pub pca: Option<usize>,
    #[arg(long, value_enum, default_value = "cityblock")]
    pub metric: MetricArg,
    /// Checkpoint for `--clf softmax`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Crop side for `--clf softmax` (defaults to the full image).
    #[arg(long)]
    pub crop: Option<usize>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long = "M", default_value_t = 2)]
    pub groups: usize,
    #[arg(long = "R", default_value_t = 8)]
    pub orientations: usize,
    #[arg(long = "n", default_value_t = 9)]
    pub size: usize,
    #[arg(long = "C", default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 24)]
    pub image_size: usize,
    #[arg(long, default_value_t = 3)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scale the analytic filter gradient by 1.01 (negative control).
    #[arg(long, hide = true)]
    pub corrupt_backward: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Also write every rotated copy.
    #[arg(long)]
    pub rotations: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    /// JSON benchmark configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Per-class training sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    /// JSON spec file; the built-in problem when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

/// Provenance written next to every output.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub dataset_hash: Option<String>,
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    fn new(subcommand: &str, config: &impl Serialize, seed: Option<u64>) -> Result<Self> {
        Ok(RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            config: serde_json::to_value(config)?,
            seed,
            inputs: Vec::new(),
            dataset_hash: None,
            outputs: BTreeMap::new(),
        })
    }

    /// Writes `bytes` under `dir` and records its SHA-256.
    fn emit(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.record(name, bytes);
        Ok(())
    }

    fn record(&mut self, name: &str, bytes: &[u8]) {
        self.outputs.insert(name.into(), hex::encode(Sha256::digest(bytes)));
    }

    fn record_file(&mut self, dir: &Path, name: &str) -> Result<()> {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.record(name, &bytes);
        Ok(())
    }

    fn finish(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("manifest.json");
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        fs::write(&path, s).map_err(|e| Error::io(&path, e))
    }
}

/// Loaded dataset with provenance.
pub struct Problem {
    pub train: DatasetSplit,
    pub test: DatasetSplit,
    pub source: String,
    pub hash: String,
}

pub fn load_data(args: &DataArgs) -> Result<Problem> {
    let (train, test, source) = match (&args.data, &args.synth) {
        (Some(dir), None) => {
            let (a, b) = load_problem(dir)?;
            (a, b, dir.display().to_string())
        }
        (None, Some(spec)) => {
            let problem = if spec == "default" {
                SynthProblem::default()
            } else {
                SynthProblem::from_json_file(Path::new(spec))?
            };
            let (a, b) = problem.generate()?;
            (a, b, format!("synth:{}", spec))
        }
        _ => return Err(config_err!("exactly one of --data or --synth is required")),
    };
    let mut h = Sha256::new();
    h.update(train.content_hash().as_bytes());
    h.update(test.content_hash().as_bytes());
    Ok(Problem {
        hash: hex::encode(h.finalize()),
        train,
        test,
        source,
    })
}

fn train_config(a: &TrainArgs) -> TrainConfig {
    let arch = match a.arch {
        ArchArg::Rotatable => Arch::Rotatable,
        ArchArg::Standard => Arch::Standard,
    };
    let groups = match arch {
        Arch::Standard => a.filters.unwrap_or(a.groups),
        Arch::Rotatable => a.groups,
    };
    TrainConfig {
        arch,
        learning_rate: a.lr,
        momentum: a.momentum,
        dropout_rate: a.dropout,
        weight_decay_phase2: a.weight_decay,
        phase2_epochs: a.phase2_epochs,
        batch_size: a.batch,
        max_epochs: a.max_epochs,
        patience: a.patience,
        seed: a.seed,
        orientations: if arch == Arch::Standard { 1 } else { a.orientations },
        groups,
        size: a.size,
        crop: a.crop,
        grid: a.grid,
        augment_rotations: a.augment_rotations,
        init_std: 0.01,
    }
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = train_config(a);
    cfg.validate()?;
    let problem = load_data(&a.data)?;
    let (train_split, val) = holdout_split(&problem.train, a.holdout, cfg.seed)?;
    let init = init_network(&cfg, problem.train.class_count)?;
    let (params, history) = train(init, &train_split, &val, &cfg)?;
    let mut m = RunManifest::new("train", &cfg, Some(cfg.seed))?;
    m.inputs.push(problem.source.clone());
    m.dataset_hash = Some(problem.hash.clone());
    save_checkpoint(&a.out.join("checkpoint.bin"), &params)?;
    m.record_file(&a.out, "checkpoint.bin")?;
    m.record_file(&a.out, "checkpoint.bin.json")?;
    m.emit(&a.out, "history.csv", history.to_csv().as_bytes())?;
    m.finish(&a.out)?;
    let last = history.records.last().expect("at least one epoch");
    println!(
        "trained {} epochs (best {}), final train loss {:.6}, val acc {:.4}",
        history.records.len(),
        history.best_epoch,
        last.train_loss,
        last.val_acc
    );
    Ok(())
}

fn features_for(
    ex: &mut FeatureExtractor,
    params: &NetworkParams,
    split: &DatasetSplit,
    block: Block,
) -> Result<FeatureTable> {
    let norm = params.normalization;
    let images: Vec<Tensor> = split.images.iter().map(|t| norm.apply(t)).collect();
    let rows = ex
        .extract_batch(&images)?
        .into_iter()
        .map(|f| f.select(block))
        .collect();
    FeatureTable::new(split.names.clone(), split.labels.clone(), rows)
}

pub fn cmd_extract(a: &ExtractArgs) -> Result<()> {
    let params = load_checkpoint(&a.checkpoint)?;
    let problem = load_data(&a.data)?;
    let mut ex = FeatureExtractor::new(&params.bank, a.r_eval, a.grid)?;
    let mut m = RunManifest::new("extract", a, None)?;
    m.inputs = vec![a.checkpoint.display().to_string(), problem.source.clone()];
    m.dataset_hash = Some(problem.hash.clone());
    for (name, split) in [("train", &problem.train), ("test", &problem.test)] {
        let table = features_for(&mut ex, &params, split, a.block)?;
        m.emit(&a.out, &format!("features_{}.csv", name), table.to_csv().as_bytes())?;
        m.emit(&a.out, &format!("features_{}.bin", name), &table.encode_matrix())?;
        println!("{}: {} rows x {} features", name, table.len(), table.dim);
    }
    m.finish(&a.out)
}

#[derive(Debug, Serialize)]
struct ClassReport {
    class: usize,
    count: usize,
    accuracy: f64,
}

#[derive(Debug, Serialize)]
struct ClassifyReport {
    classifier: String,
    pca: Option<usize>,
    samples: usize,
    accuracy: f64,
    per_class: Vec<ClassReport>,
}

fn report(classifier: &str, pca: Option<usize>, pred: &[usize], truth: &[usize]) -> ClassifyReport {
    let classes = truth.iter().chain(pred).max().map_or(0, |m| m + 1);
    let per_class = (0..classes)
        .filter_map(|c| {
            let idx: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] == c).collect();
            if idx.is_empty() {
                return None;
            }
            let hits = idx.iter().filter(|&&i| pred[i] == c).count();
            Some(ClassReport {
                class: c,
                count: idx.len(),
                accuracy: hits as f64 / idx.len() as f64,
            })
        })
        .collect();
    ClassifyReport {
        classifier: classifier.into(),
        pca,
        samples: truth.len(),
        accuracy: accuracy(pred, truth),
        per_class,
    }
}

fn predictions_csv(names: &[String], truth: &[usize], pred: &[usize]) -> String {
    let mut s = String::from("path,label,predicted\n");
    for ((n, t), p) in names.iter().zip(truth).zip(pred) {
        s.push_str(&format!("{},{},{}\n", n, t, p));
    }
    s
}

pub fn cmd_classify(a: &ClassifyArgs) -> Result<()> {
    let mut m = RunManifest::new("classify", a, None)?;
    let (names, truth, pred, label) = match a.clf {
        ClfArg::Softmax => {
            let ckpt = a
                .checkpoint
                .as_ref()
                .ok_or_else(|| config_err!("--clf softmax needs --checkpoint"))?;
            let params = load_checkpoint(ckpt)?;
            let problem = load_data(&a.data)?;
            if problem.test.class_count > params.classes {
                return Err(config_err!(
                    "checkpoint has {} classes, dataset has {}",
                    params.classes,
                    problem.test.class_count
                ));
            }
            m.inputs = vec![ckpt.display().to_string(), problem.source.clone()];
            m.dataset_hash = Some(problem.hash.clone());
            let norm = params.normalization;
            let images: Vec<Tensor> = problem
                .test
                .images
                .iter()
                .map(|t| {
                    let crop = a.crop.unwrap_or(t.rows().min(t.cols()));
                    augment_rotate_crop(&norm.apply(t), 0.0, crop)
                })
                .collect::<Result<_>>()?;
            let pred = Network::new(params)?.predict(&images)?.predictions();
            (problem.test.names, problem.test.labels, pred, "softmax".to_string())
        }
        clf => {
            let (tr, te) = match (&a.train_features, &a.test_features) {
                (Some(tr), Some(te)) => (tr, te),
                _ => return Err(config_err!("--train-features and --test-features are required")),
            };
            let train_t = FeatureTable::load(tr)?;
            let test_t = FeatureTable::load(te)?;
            if train_t.dim != test_t.dim {
                return Err(config_err!(
                    "train features have {} columns, test features {}",
                    train_t.dim,
                    test_t.dim
                ));
            }
            m.inputs = vec![tr.display().to_string(), te.display().to_string()];
            let mut h = Sha256::new();
            h.update(train_t.encode_matrix());
            h.update(test_t.encode_matrix());
            m.dataset_hash = Some(hex::encode(h.finalize()));
            let train_rows = train_t.rows();
            let pca = match a.pca {
                Some(k) => Some(pca_fit(&train_rows, k)?),
                None => None,
            };
            let z = match &pca {
                Some(p) => p.transform_batch(&train_rows)?,
                None => train_rows,
            };
            let classifier = match clf {
                ClfArg::Lda => Classifier::Lda(lda_fit(&z, &train_t.labels).map_err(|e| match e {
                    Error::Degenerate(msg) => Error::Degenerate(format!(
                        "{}; reduce the dimension with a smaller --pca",
                        msg
                    )),
                    other => other,
                })?),
                _ => Classifier::Knn {
                    dim: z[0].len(),
                    rows: z.concat(),
                    labels: train_t.labels.clone(),
                },
            };
            let model = ShallowModel { pca, classifier };
            let pred = (0..test_t.len())
                .map(|i| model.predict(test_t.row(i)))
                .collect::<Result<Vec<_>>>()?;
            model.save(&a.out.join("model.bin"))?;
            m.record_file(&a.out, "model.bin")?;
            m.record_file(&a.out, "model.bin.json")?;
            let label = if clf == ClfArg::Lda { "lda" } else { "1nn" };
            (test_t.names, test_t.labels, pred, label.to_string())
        }
    };
    let rep = report(&label, a.pca, &pred, &truth);
    m.emit(&a.out, "predictions.csv", predictions_csv(&names, &truth, &pred).as_bytes())?;
    let mut json = serde_json::to_string_pretty(&rep)?;
    json.push('\n');
    m.emit(&a.out, "report.json", json.as_bytes())?;
    m.finish(&a.out)?;
    for c in &rep.per_class {
        println!("class {:>3}: {:.4} ({} samples)", c.class, c.accuracy, c.count);
    }
    println!("accuracy: {:.4} ({} samples)", rep.accuracy, rep.samples);
    Ok(())
}

/// Returns whether the check passed.
pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<bool> {
    let cfg = GradCheckConfig {
        groups: a.groups,
        orientations: a.orientations,
        size: a.size,
        classes: a.classes,
        image_size: a.image_size,
        batch: a.batch,
        grid: PoolGrid::new(2, 2),
        eps: a.eps,
        tolerance: a.tolerance,
        seed: a.seed,
        corrupt_backward: a.corrupt_backward,
    };
    let rep = gradcheck::run(&cfg)?;
    let mut m = RunManifest::new("gradcheck", a, Some(a.seed))?;
    let body = serde_json::json!({
        "parameters": rep.parameters,
        "max_relative_error": rep.max_relative_error,
        "worst_index": rep.worst_index,
        "tolerance": a.tolerance,
        "passed": rep.passed,
    });
    let mut s = serde_json::to_string_pretty(&body)?;
    s.push('\n');
    m.emit(&a.out, "gradcheck.json", s.as_bytes())?;
    m.finish(&a.out)?;
    println!(
        "{} parameters, max relative error {:.3e} (tolerance {:.0e}): {}",
        rep.parameters,
        rep.max_relative_error,
        a.tolerance,
        if rep.passed { "PASS" } else { "FAIL" }
    );
    Ok(rep.passed)
}

/// Per-filter min-max scaling to [0, 1]; constant filters map to 0.5.
pub fn minmax(t: &Tensor) -> Tensor {
    let lo = t.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        t.map(|_| 0.5)
    } else {
        t.map(|v| (v - lo) / (hi - lo))
    }
}

/// Tiles equally sized images on a near-square grid with 1-pixel black gaps.
pub fn contact_sheet(tiles: &[Tensor]) -> Tensor {
    let n = tiles[0].rows();
    let cols = (tiles.len() as f64).sqrt().ceil() as usize;
    let rows = tiles.len().div_ceil(cols);
    let (h, w) = (rows * (n + 1) - 1, cols * (n + 1) - 1);
    let mut sheet = Tensor::zeros(&[h, w]);
    for (i, t) in tiles.iter().enumerate() {
        let (r0, c0) = ((i / cols) * (n + 1), (i % cols) * (n + 1));
        for r in 0..n {
            for c in 0..n {
                sheet.set(r0 + r, c0 + c, t.at(r, c));
            }
        }
    }
    sheet
}

pub fn cmd_export_filters(a: &ExportArgs) -> Result<()> {
    let params = load_checkpoint(&a.checkpoint)?;
    let bank = &params.bank;
    let mut m = RunManifest::new("export-filters", a, None)?;
    m.inputs.push(a.checkpoint.display().to_string());
    let mut tiles = Vec::new();
    for g in 0..bank.groups {
        let img = minmax(&bank.canonical_tensor(g));
        m.emit(&a.out, &format!("filter_{:02}.pgm", g), &encode_pgm(&img)?)?;
        tiles.push(img);
    }
    m.emit(&a.out, "filters_sheet.pgm", &encode_pgm(&contact_sheet(&tiles))?)?;
    if a.rotations && bank.arch == Arch::Rotatable {
        let ops = orientation_angles(bank.orientations)
            .into_iter()
            .map(|t| make_rotation_operator(bank.size, t))
            .collect::<Result<Vec<_>>>()?;
        for g in 0..bank.groups {
            let canonical = bank.canonical_tensor(g);
            let mut rot_tiles = Vec::new();
            for (k, op) in ops.iter().enumerate() {
                let img = minmax(&rotate_filter(op, &canonical)?);
                m.emit(&a.out, &format!("filter_{:02}_rot_{:02}.pgm", g, k), &encode_pgm(&img)?)?;
                rot_tiles.push(img);
            }
            m.emit(
                &a.out,
                &format!("filter_{:02}_rotations.pgm", g),
                &encode_pgm(&contact_sheet(&rot_tiles))?,
            )?;
        }
    }
    m.finish(&a.out)?;
    println!("exported {} filters to {}", bank.groups, a.out.display());
    Ok(())
}

pub fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<BenchConfig>(&text)?
        }
        None => BenchConfig::default(),
    };
    if let Some(s) = &a.sizes {
        cfg.sizes = s.clone();
    }
    if let Some(seed) = a.seed {
        cfg.problem.seed = seed;
        cfg.arms.iter_mut().for_each(|arm| arm.train.seed = seed);
    }
    let report = run_bench(&cfg, |line| eprintln!("{}", line))?;
    let mut m = RunManifest::new("bench", &cfg, Some(cfg.problem.seed))?;
    m.inputs = a.config.iter().map(|p| p.display().to_string()).collect();
    m.emit(&a.out, "bench.csv", report.to_csv().as_bytes())?;
    m.finish(&a.out)?;
    print!("{}", report.to_csv());
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut problem = match &a.config {
        Some(p) => SynthProblem::from_json_file(p)?,
        None => SynthProblem::default(),
    };
    if let Some(seed) = a.seed {
        problem.seed = seed;
    }
    let (train_split, test) = problem.generate()?;
    write_problem(&a.out, &train_split, &test)?;
    let mut m = RunManifest::new("synth", &problem, Some(problem.seed))?;
    let mut h = Sha256::new();
    h.update(train_split.content_hash().as_bytes());
    h.update(test.content_hash().as_bytes());
    m.dataset_hash = Some(hex::encode(h.finalize()));
    m.record_file(&a.out, "train.txt")?;
    m.record_file(&a.out, "test.txt")?;
    m.finish(&a.out)?;
    println!("wrote {} training and {} test images to {}", train_split.len(), test.len(), a.out.display());
    Ok(())
}

/// Runs a parsed command line and returns the process exit status.
pub fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 2;
        }
        // Fails only if a pool already exists, which is harmless here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Gradcheck(a) => match cmd_gradcheck(a) {
            Ok(true) => Ok(()),
            Ok(false) => return EXIT_GRADCHECK,
            Err(e) => Err(e),
        },
        Command::ExportFilters(a) => cmd_export_filters(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}
