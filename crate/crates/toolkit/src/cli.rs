//! The `nmd` command line.
//!
//! Any subcommand accepts `--config FILE`: a `key=value` file whose keys are
//! long flag names. Its values are applied first, so flags given on the
//! command line win.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nmd_core::data::{block_permute, BlockPermutation, ImageDataset, Protocol, SplitSizes};
use nmd_core::detector::{DetectorSpec, LrConfig, MlpConfig};
use nmd_core::model::{train_classifier_with, ConvNet, ConvNetConfig, LrSchedule, TrainConfig};
use nmd_core::nmd::{avg_magnitude_score, compute_nmd, reference_from_bn, reference_from_dataset, VectorKind};
use nmd_core::pipeline::{example_stats, group_stats, run_experiment, ExperimentConfig, ExperimentData, Featurizer, EXTRACT_CHUNK};
use nmd_core::Tensor;

use crate::artifacts::*;
use crate::bench::{bench_inference, time_detector_training, BenchConfig};
use crate::config::KeyValues;
use crate::datasets::{load_dataset, LoadOptions};
use crate::error::{Error, Result};
use crate::reports::*;

#[derive(Debug, Parser)]
#[command(name = "nmd", version, about = "Out-of-distribution detection from neural mean discrepancies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the ConvNet classifier and write a checkpoint plus reference statistics.
    Train(TrainArgs),
    /// Score inputs with a trained detector or the averaged-magnitude score.
    Detect(DetectArgs),
    /// Run a detection protocol end to end and write evaluation reports.
    Experiment(ExperimentArgs),
    /// Measure single-example inference latency.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Schedule {
    Cosine,
    Constant,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    /// Training data: `synth:<preset>`, a CIFAR directory or batch file, or a dataset config.
    #[arg(long)]
    pub data: String,
    /// Number of examples (generated for synthetic data, a cap otherwise).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.02)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 5e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value_t = Schedule::Cosine)]
    pub schedule: Schedule,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Channels per conv layer.
    #[arg(long, default_value_t = 300)]
    pub width: usize,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Free-lunch reference statistics (batch-norm running means) output path.
    #[arg(long)]
    pub refs: PathBuf,
    /// Also traverse the training set and write exact reference statistics here.
    #[arg(long)]
    pub traversal_refs: Option<PathBuf>,
    /// Per-step training loss CSV.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreKind {
    Detector,
    AvgMagnitude,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct DetectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub refs: PathBuf,
    /// Detector file; required unless `--score avg-magnitude`.
    #[arg(long)]
    pub detector: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ScoreKind::Detector)]
    pub score: ScoreKind,
    /// Data to score, in the same source syntax as `train --data`.
    #[arg(long)]
    pub input: String,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    /// Examples per detection unit.
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    /// Scores CSV output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Write each unit's NMD vector as `unit_<i>.csv` into this directory.
    #[arg(long)]
    pub nmd_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Full,
    FewShot,
    ZeroShot,
    Transfer,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Full => Protocol::Full,
            ProtocolArg::FewShot => Protocol::FewShot,
            ProtocolArg::ZeroShot => Protocol::ZeroShot,
            ProtocolArg::Transfer => Protocol::Transfer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VectorArg {
    Nmd,
    Nvd,
    Concat,
}

impl From<VectorArg> for VectorKind {
    fn from(v: VectorArg) -> Self {
        match v {
            VectorArg::Nmd => VectorKind::Nmd,
            VectorArg::Nvd => VectorKind::Nvd,
            VectorArg::Concat => VectorKind::NmdConcatNvd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DetectorArg {
    Lr,
    Mlp,
}

#[derive(Debug, Args)]
pub struct DetectorOpts {
    #[arg(long, value_enum, default_value_t = DetectorArg::Lr)]
    pub detector: DetectorArg,
    /// Logistic regression L2 strength.
    #[arg(long, default_value_t = 1.0)]
    pub l2: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// MLP hidden width.
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0.001)]
    pub mlp_lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub mlp_momentum: f64,
    #[arg(long, default_value_t = 200)]
    pub mlp_epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub mlp_batch_size: usize,
}

impl DetectorOpts {
    pub fn spec(&self, seed: u64) -> DetectorSpec {
        match self.detector {
            DetectorArg::Lr => DetectorSpec::Lr(LrConfig { l2: self.l2, max_iter: self.max_iter, tol: self.tol }),
            DetectorArg::Mlp => DetectorSpec::Mlp(MlpConfig {
                hidden: self.hidden,
                dropout: self.dropout,
                lr: self.mlp_lr,
                momentum: self.mlp_momentum,
                epochs: self.mlp_epochs,
                batch_size: self.mlp_batch_size,
                seed,
            }),
        }
    }
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub refs: PathBuf,
    /// Held-out in-distribution data (not the classifier's training set).
    #[arg(long)]
    pub id: String,
    #[arg(long)]
    pub ood: String,
    /// Evaluation OOD data for the transfer protocol.
    #[arg(long)]
    pub ood_b: Option<String>,
    #[arg(long, value_enum, default_value_t = ProtocolArg::Full)]
    pub protocol: ProtocolArg,
    #[arg(long, value_enum, default_value_t = VectorArg::Nmd)]
    pub vector: VectorArg,
    #[command(flatten)]
    pub detector: DetectorOpts,
    /// Examples per detection unit.
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    /// Detector training examples per class (few-shot always uses 25).
    #[arg(long, default_value_t = 100)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 200)]
    pub eval_per_class: usize,
    /// Examples to load from each source (default: enough for the split).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub data_seed: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also retrain on the first k layers for every k.
    #[arg(long)]
    pub first_k: bool,
    /// Directory for report.csv, roc.csv, scores.csv, importance.csv and first_k.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub save_detector: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F64,
    F32,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub refs: PathBuf,
    #[arg(long)]
    pub detector: PathBuf,
    /// Examples to cycle through.
    #[arg(long, default_value = "synth:id")]
    pub input: String,
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub data_seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub repeats: usize,
    #[arg(long, default_value_t = 20)]
    pub warmup: usize,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Splices `--config FILE` values in front of the explicit flags.
pub fn expand_config(args: Vec<String>) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(args.len());
    let mut config = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            config = Some(it.next().ok_or_else(|| Error::Usage("--config needs a file".into()))?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            config = Some(p.to_string());
        } else {
            out.push(a);
        }
    }
    if let Some(path) = config {
        if out.len() < 2 {
            return Err(Error::Usage("--config must follow a subcommand".into()));
        }
        let kv = KeyValues::load(Path::new(&path)).map_err(|e| Error::Usage(e.to_string()))?;
        let tail = out.split_off(2);
        out.extend(kv.to_args());
        out.extend(tail);
    }
    Ok(out)
}

/// Parses and runs; returns the process exit code.
pub fn run(args: Vec<String>) -> i32 {
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { crate::error::EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(&a),
        Command::Detect(a) => cmd_detect(&a),
        Command::Experiment(a) => cmd_experiment(&a),
        Command::Bench(a) => cmd_bench(&a),
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    if a.batch_size == 0 || a.width == 0 {
        return Err(usage("--batch-size and --width must be >= 1"));
    }
    if !(a.lr > 0.0) || !(0.0..1.0).contains(&a.momentum) || a.weight_decay < 0.0 {
        return Err(usage("need --lr > 0, 0 <= --momentum < 1, --weight-decay >= 0"));
    }
    let data = load_dataset(&a.data, &LoadOptions { n: a.n, seed: a.data_seed, normalization: None })?;
    let classes = data.labels.iter().max().map_or(0, |m| m + 1).max(2);
    let mut config = ConvNetConfig::convnet4_with_width(classes, a.width);
    config.input_size = data.height();
    if data.height() != data.width() || data.channels() != config.in_channels {
        return Err(Error::Core(nmd_core::Error::Shape { op: "train", detail: format!("need square RGB images, got {:?}", &data.images.shape()[1..]) }));
    }
    let mut model = ConvNet::build(config, a.seed)?;
    let tc = TrainConfig {
        lr: a.lr,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        schedule: match a.schedule {
            Schedule::Cosine => LrSchedule::Cosine,
            Schedule::Constant => LrSchedule::Constant,
        },
    };
    let start = Instant::now();
    let quiet = a.quiet;
    let report = train_classifier_with(&mut model, &data.images, &data.labels, &tc, |e| {
        if !quiet {
            eprintln!("epoch {:>3}  loss {:.4}  train acc {:.3}  {:.1}s", e.epoch + 1, e.loss, e.accuracy, start.elapsed().as_secs_f64());
        }
    })?;
    let refs = reference_from_bn(&model)?;
    let traversal = match &a.traversal_refs {
        Some(_) => Some(reference_from_dataset(&model, &data.images, EXTRACT_CHUNK)?),
        None => None,
    };
    save_checkpoint(&Checkpoint { model, normalization: data.normalization.clone() }, &a.out)?;
    save_refs(&refs, &a.refs)?;
    if let (Some(p), Some(r)) = (&a.traversal_refs, &traversal) {
        save_refs(r, p)?;
    }
    if let Some(p) = &a.loss_csv {
        write_losses(p, &report)?;
    }
    println!(
        "trained on {} examples ({} classes) in {:.1}s; final loss {:.4}",
        data.len(),
        classes,
        start.elapsed().as_secs_f64(),
        report.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn load_model_and_refs(model: &Path, refs: &Path) -> Result<(Checkpoint, nmd_core::nmd::ReferenceStats)> {
    let ck = load_checkpoint(model)?;
    let r = load_refs(refs)?;
    if r.len() != ck.model.num_channels() {
        return Err(Error::Core(nmd_core::Error::Shape {
            op: "references",
            detail: format!("{} reference channels for a model with {}", r.len(), ck.model.num_channels()),
        }));
    }
    Ok((ck, r))
}

pub fn cmd_detect(a: &DetectArgs) -> Result<()> {
    if a.batch_size == 0 {
        return Err(usage("--batch-size must be >= 1"));
    }
    let (ck, reference) = load_model_and_refs(&a.model, &a.refs)?;
    let det = match (a.score, &a.detector) {
        (ScoreKind::Detector, None) => return Err(usage("--detector is required unless --score avg-magnitude")),
        (ScoreKind::Detector, Some(p)) => Some(load_detector(p)?),
        (ScoreKind::AvgMagnitude, _) => None,
    };
    let featurizer = match &det {
        Some(d) => d.featurizer(reference.clone())?,
        None => Featurizer::new(VectorKind::Nmd, reference.clone())?,
    };
    let data = load_dataset(&a.input, &LoadOptions { n: a.n, seed: a.data_seed, normalization: Some(ck.normalization.clone()) })?;
    let per = example_stats(&ck.model, &data.images, EXTRACT_CHUNK)?;
    let units = group_stats(&per, a.batch_size)?;
    let mut scores = Vec::with_capacity(units.len());
    for st in &units {
        let s = match &det {
            Some(d) => d.detector.score(&featurizer.vector(st)?.values)?,
            None => avg_magnitude_score(&compute_nmd(st, &reference)?)?,
        };
        scores.push(s);
    }
    if let Some(dir) = &a.nmd_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, st) in units.iter().enumerate() {
            write_nmd_vector(&dir.join(format!("unit_{i}.csv")), &compute_nmd(st, &reference)?)?;
        }
    }
    write_scores(&a.out, a.batch_size, &scores)?;
    println!("scored {} units of {} example(s) from {}", scores.len(), a.batch_size, data.name);
    Ok(())
}

pub fn cmd_experiment(a: &ExperimentArgs) -> Result<()> {
    let protocol: Protocol = a.protocol.into();
    if protocol == Protocol::Transfer && a.ood_b.is_none() {
        return Err(usage("the transfer protocol needs --ood-b"));
    }
    if a.batch_size == 0 {
        return Err(usage("--batch-size must be >= 1"));
    }
    let (ck, reference) = load_model_and_refs(&a.model, &a.refs)?;
    let train_n = if protocol == Protocol::FewShot { nmd_core::data::FEW_SHOT_PER_CLASS } else { a.train_per_class };
    let n = a.n.unwrap_or(train_n + a.eval_per_class);
    let opts = LoadOptions { n: Some(n), seed: a.data_seed, normalization: Some(ck.normalization.clone()) };
    let id = load_dataset(&a.id, &opts)?;
    let ood = load_dataset(&a.ood, &opts)?;
    let ood_b = a.ood_b.as_deref().map(|s| load_dataset(s, &opts)).transpose()?;
    let config = ExperimentConfig {
        protocol,
        seed: a.seed,
        sizes: SplitSizes { train_per_class: a.train_per_class, eval_per_class: a.eval_per_class },
        batch_size: a.batch_size,
        kind: a.vector.into(),
        detector: a.detector.spec(a.seed),
        first_k: a.first_k,
    };
    let start = Instant::now();
    let rep = run_experiment(&ck.model, &reference, ExperimentData { id: &id, ood: &ood, ood_b: ood_b.as_ref() }, &config)?;
    let dir = &a.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rows = report_rows(&rep.eval);
    rows.push(("input_dim".into(), rep.detector.input_dim() as f64));
    rows.push(("train_units".into(), rep.train_units as f64));
    write_metrics(&dir.join("report.csv"), &rows)?;
    write_roc(&dir.join("roc.csv"), &rep.eval.roc_points)?;
    write_labeled_scores(&dir.join("scores.csv"), &rep.scores.scores, &rep.scores.labels)?;
    if let Some(imp) = &rep.importance {
        write_importance(&dir.join("importance.csv"), imp)?;
    }
    if a.first_k {
        write_first_k(&dir.join("first_k.csv"), &rep.first_k)?;
    }
    if let Some(p) = &a.save_detector {
        save_detector(&DetectorFile::from_featurizer(rep.detector.clone(), &rep.featurizer), p)?;
    }
    println!(
        "{} / {} / {}: AUROC {:.4}  TNR95 {:.4}  ACC {:.4}  (input dim {}, {:.1}s)",
        protocol.name(),
        rep.featurizer.kind.name(),
        config.detector.name(),
        rep.eval.auroc,
        rep.eval.tnr95,
        rep.eval.acc,
        rep.detector.input_dim(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn singles(data: &ImageDataset) -> Vec<Tensor> {
    (0..data.len()).map(|i| data.images.select(&[i])).collect()
}

pub fn cmd_bench(a: &BenchArgs) -> Result<()> {
    if a.repeats == 0 {
        return Err(usage("--repeats must be >= 1"));
    }
    let (ck, reference) = load_model_and_refs(&a.model, &a.refs)?;
    let det = load_detector(&a.detector)?;
    let featurizer = det.featurizer(reference)?;
    let data = load_dataset(&a.input, &LoadOptions { n: Some(a.n.max(2)), seed: a.data_seed, normalization: Some(ck.normalization.clone()) })?;
    let bc = BenchConfig { repeats: a.repeats, warmup: a.warmup };
    let examples = singles(&data);
    let mut report = match a.precision {
        Precision::F64 => bench_inference(&ck.model, &featurizer, &det.detector, &examples, bc)?,
        Precision::F32 => {
            let m32 = ck.model.cast::<f32>();
            let ex32: Vec<Tensor<f32>> = examples.iter().map(|t| t.cast()).collect();
            bench_inference(&m32, &featurizer, &det.detector, &ex32, bc)?
        }
    };
    // Detector training time on ID vs block-permuted ID vectors.
    let crafted = block_permute(&data, 8, BlockPermutation::Random(a.data_seed))?;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (ds, label) in [(&data, 0u8), (&crafted, 1u8)] {
        for st in example_stats(&ck.model, &ds.images, EXTRACT_CHUNK)? {
            rows.push(featurizer.vector(&st)?.values);
            labels.push(label);
        }
    }
    let spec = match &det.detector {
        nmd_core::detector::Detector::Lr(_) => DetectorSpec::Lr(LrConfig::default()),
        nmd_core::detector::Detector::Mlp(m) => DetectorSpec::Mlp(m.config.clone()),
    };
    report.detector_train_s = Some(time_detector_training(&spec, &rows, &labels)?);
    if let Some(p) = &a.out {
        write_metrics(p, &report.rows())?;
    }
    println!(
        "{} x{}: forward {:.3} ms, forward+NMD {:.3} ms (ratio {:.3}), detector {:.4} ms, total {:.3} ms, detector training {:.3} s",
        report.precision,
        report.repeats,
        report.plain_forward_ms,
        report.nmd_extract_ms,
        report.nmd_extract_ms / report.plain_forward_ms,
        report.detector_ms,
        report.total_ms,
        report.detector_train_s.unwrap_or(f64::NAN)
    );
    Ok(())
}
