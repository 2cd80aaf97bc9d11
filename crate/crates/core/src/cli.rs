//! Command-line front end. Exit codes: 0 success, 1 invalid input or
//! configuration, 2 failure while running.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::datagen::{bias_amplify, generate, split, LabeledDataset};
use crate::fairmetrics::{calibration_curve, evaluate, Grouping};
use crate::pipeline::{
    ablate, ablation_csv, ablation_row, build_sensitive_space, calibration_csv, losses_csv,
    pretrain_sensitive, run_experiment, select_model, tradeoff_csv, train_target, CheckpointScore,
    EpochLosses, ExperimentConfig, RepNorm, SensitiveModel, SpaceMode, SweepParam, TargetModel,
};
use crate::subspace::SubspaceBasis;

/// Seed used when neither `--seed` nor the config file sets one.
pub const SEED_ENV: &str = "FCRO_SEED";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or input files (exit 1).
    Invalid(String),
    /// A stage failed while running (exit 2).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn runtime(stage: &str) -> impl Fn(crate::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{stage}: {e}"))
}

#[derive(Debug, Parser)]
#[command(
    name = "fcro",
    version,
    about = "Fair classification with column/row orthogonal representations"
)]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset and amplify its label-rate gaps.
    #[command(allow_negative_numbers = true)]
    Datagen(DatagenArgs),
    /// Pretrain the sensitive branch and build its subspace.
    #[command(allow_negative_numbers = true)]
    Pretrain(PretrainArgs),
    /// Train the target branch against a pretrained sensitive branch.
    #[command(allow_negative_numbers = true)]
    Train(TrainArgs),
    /// Score a trained target model on a dataset.
    #[command(allow_negative_numbers = true)]
    Evaluate(EvaluateArgs),
    /// Full k-fold experiment: generate, amplify, split, train, test.
    #[command(allow_negative_numbers = true)]
    Experiment(ExperimentArgs),
    /// One experiment per value of a swept hyperparameter.
    #[command(allow_negative_numbers = true)]
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON experiment config; flags override its fields.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Seed for data generation and training (falls back to FCRO_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct DataFlags {
    /// Samples before amplification (default: 4000)
    #[arg(long)]
    n: Option<usize>,
    /// Feature count (default: 32)
    #[arg(long)]
    p: Option<usize>,
    /// Sensitive attribute count (default: 3)
    #[arg(long)]
    m: Option<usize>,
    /// Target per-attribute positive-rate gap after amplification (default: 0.12)
    #[arg(long)]
    gap: Option<f64>,
    /// Feature noise standard deviation (default: 0.5)
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainFlags {
    /// Column-space orthogonality weight (default: 80)
    #[arg(long)]
    lambda_c: Option<f64>,
    /// Row-space orthogonality weight (default: 500)
    #[arg(long)]
    lambda_r: Option<f64>,
    /// Rank of the sensitive subspace (default: 3)
    #[arg(long)]
    k: Option<usize>,
    /// Target training epochs (default: 40)
    #[arg(long)]
    epochs: Option<usize>,
    /// Sensitive pretraining epochs (default: 100)
    #[arg(long)]
    sensitive_epochs: Option<usize>,
    /// Mini-batch size (default: 128)
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate (default: 1e-4)
    #[arg(long)]
    lr: Option<f64>,
    /// Adam weight decay (default: 4e-4)
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Representation dimension d (default: 16)
    #[arg(long)]
    rep_dim: Option<usize>,
    /// How the sensitive space is built (default: batch)
    #[arg(long, value_enum)]
    space_mode: Option<SpaceModeArg>,
    /// Passes over the data when accumulating the space (default: 3)
    #[arg(long)]
    accumulation_epochs: Option<usize>,
    /// Normalize representations before the losses (default: none)
    #[arg(long, value_enum)]
    rep_norm: Option<RepNormArg>,
    /// Disable the column-space loss
    #[arg(long)]
    no_corth: bool,
    /// Disable the row-space loss
    #[arg(long)]
    no_rorth: bool,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum SpaceModeArg {
    Batch,
    Accumulative,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum RepNormArg {
    None,
    Unit,
    Centered,
}

#[derive(Debug, Args)]
struct DatagenArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    data: DataFlags,
    /// Skip amplification and write the raw sample
    #[arg(long)]
    no_amplify: bool,
    /// Output CSV
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Where to write the run manifest (default: manifest.json next to --out)
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PretrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    train: TrainFlags,
    /// Dataset CSV as written by `datagen`
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Fraction held out for validation
    #[arg(long, default_value_t = 0.2)]
    validation_fraction: f64,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    train: TrainFlags,
    /// Dataset CSV as written by `datagen`
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Output directory of `pretrain`
    #[arg(long, value_name = "DIR")]
    sensitive: PathBuf,
    /// Fraction held out for validation and model selection
    #[arg(long, default_value_t = 0.2)]
    validation_fraction: f64,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset CSV to score
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Output directory of `train`
    #[arg(long, value_name = "DIR")]
    model: PathBuf,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    data: DataFlags,
    #[command(flatten)]
    train: TrainFlags,
    /// Cross-validation folds (default: 5)
    #[arg(long)]
    folds: Option<usize>,
    /// Folds trained concurrently; results are identical for any value (default: 1)
    #[arg(long)]
    parallel_folds: Option<usize>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    data: DataFlags,
    #[command(flatten)]
    train: TrainFlags,
    /// Cross-validation folds (default: 5)
    #[arg(long)]
    folds: Option<usize>,
    /// Folds trained concurrently (default: 1)
    #[arg(long)]
    parallel_folds: Option<usize>,
    /// Swept parameter: lambda_c, lambda_r or k
    #[arg(long)]
    param: String,
    /// Comma-separated sweep values
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    values: Vec<f64>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

/// Config after merging file, flags and seed fallbacks, plus which flag set
/// which field so violations can name the flag.
struct Resolved {
    config: ExperimentConfig,
    flags: Vec<(&'static str, &'static str)>,
}

fn load_config(args: &ConfigArgs) -> CliResult<(ExperimentConfig, bool)> {
    let Some(path) = &args.config else {
        return Ok((ExperimentConfig::default(), false));
    };
    if !path.exists() {
        return Err(CliError::Invalid(format!(
            "--config: file not found: {}",
            path.display()
        )));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Invalid(format!("--config: cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
        CliError::Invalid(format!(
            "--config: {} is not valid JSON: {e}",
            path.display()
        ))
    })?;
    let has_seed = ["train", "data"]
        .iter()
        .any(|section| value.get(section).and_then(|s| s.get("seed")).is_some());
    let config: ExperimentConfig = serde_json::from_value(value).map_err(|e| {
        CliError::Invalid(format!(
            "--config: {}: schema violation: {e}",
            path.display()
        ))
    })?;
    Ok((config, has_seed))
}

fn resolve(
    args: &ConfigArgs,
    data: Option<&DataFlags>,
    train: Option<&TrainFlags>,
) -> CliResult<Resolved> {
    let (mut config, file_has_seed) = load_config(args)?;
    let mut flags = Vec::new();

    macro_rules! set {
        ($opt:expr, $field:expr, $key:literal, $flag:literal) => {
            if let Some(v) = $opt {
                $field = v;
                flags.push(($key, $flag));
            }
        };
    }
    if let Some(d) = data {
        set!(d.n, config.data.n, "data.n", "--n");
        set!(d.p, config.data.p, "data.p", "--p");
        set!(d.m, config.data.m, "data.m", "--m");
        set!(d.gap, config.target_gap, "target_gap", "--gap");
        set!(
            d.noise,
            config.data.noise_sigma,
            "data.noise_sigma",
            "--noise"
        );
    }
    if let Some(t) = train {
        let c = &mut config.train;
        set!(t.lambda_c, c.lambda_c, "train.lambda_c", "--lambda-c");
        set!(t.lambda_r, c.lambda_r, "train.lambda_r", "--lambda-r");
        set!(t.k, c.k, "train.k", "--k");
        set!(t.epochs, c.epochs, "train.epochs", "--epochs");
        set!(
            t.sensitive_epochs,
            c.sensitive_epochs,
            "train.sensitive_epochs",
            "--sensitive-epochs"
        );
        set!(
            t.batch_size,
            c.batch_size,
            "train.batch_size",
            "--batch-size"
        );
        set!(t.lr, c.lr, "train.lr", "--lr");
        set!(
            t.weight_decay,
            c.weight_decay,
            "train.weight_decay",
            "--weight-decay"
        );
        set!(t.rep_dim, c.rep_dim, "train.rep_dim", "--rep-dim");
        set!(
            t.accumulation_epochs,
            c.accumulation_epochs,
            "train.accumulation_epochs",
            "--accumulation-epochs"
        );
        if let Some(mode) = t.space_mode {
            c.space_mode = match mode {
                SpaceModeArg::Batch => SpaceMode::Batch,
                SpaceModeArg::Accumulative => SpaceMode::Accumulative,
            };
        }
        if let Some(norm) = t.rep_norm {
            c.rep_norm = match norm {
                RepNormArg::None => RepNorm::None,
                RepNormArg::Unit => RepNorm::Unit,
                RepNormArg::Centered => RepNorm::Centered,
            };
        }
        if t.no_corth {
            c.enable_corth = false;
        }
        if t.no_rorth {
            c.enable_rorth = false;
        }
    }

    let seed = match args.seed {
        Some(s) => Some(s),
        None if file_has_seed => None,
        None => match std::env::var(SEED_ENV) {
            Ok(v) => Some(v.trim().parse::<u64>().map_err(|_| {
                CliError::Invalid(format!(
                    "{SEED_ENV}: expected an unsigned integer, got `{v}`"
                ))
            })?),
            Err(_) => None,
        },
    };
    if let Some(s) = seed {
        config.train.seed = s;
        config.data.seed = s;
    }
    Ok(Resolved { config, flags })
}

impl Resolved {
    fn check(&self) -> CliResult<()> {
        let violations = self.config.violations();
        if violations.is_empty() {
            return Ok(());
        }
        let lines: Vec<String> = violations
            .iter()
            .map(|v| {
                let field = v.split_whitespace().next().unwrap_or("");
                match self.flags.iter().find(|(key, _)| field == *key) {
                    Some((_, flag)) => format!("  {flag}: {v}"),
                    None => format!("  {v}"),
                }
            })
            .collect();
        Err(CliError::Invalid(format!(
            "invalid configuration:\n{}",
            lines.join("\n")
        )))
    }
}

fn read_dataset(flag: &str, path: &Path) -> CliResult<LabeledDataset> {
    if !path.exists() {
        return Err(CliError::Invalid(format!(
            "{flag}: file not found: {}",
            path.display()
        )));
    }
    LabeledDataset::read_csv(path).map_err(|e| CliError::Invalid(format!("{flag}: {e}")))
}

fn require_dir(flag: &str, path: &Path) -> CliResult<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Invalid(format!(
            "{flag}: directory not found: {}",
            path.display()
        )))
    }
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::Invalid(format!("--out: cannot create {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Runtime(format!("write {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("serialize: {e}")))?;
    write_text(path, &(text + "\n"))
}

/// Train/validation split of a whole dataset, stratified like the experiment split.
fn holdout(
    data: &LabeledDataset,
    fraction: f64,
    seed: u64,
) -> CliResult<(LabeledDataset, LabeledDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CliError::Invalid(format!(
            "--validation-fraction: must be in (0, 1), got {fraction}"
        )));
    }
    let plan = split(data, fraction, 2, seed).map_err(runtime("split"))?;
    let fold = &plan.folds[0];
    let mut train_idx: Vec<usize> = fold.train.iter().chain(&fold.validation).copied().collect();
    train_idx.sort_unstable();
    Ok((data.subset(&train_idx), data.subset(&plan.test)))
}

#[derive(Debug, Serialize)]
struct FileHash {
    path: String,
    sha256: String,
    bytes: u64,
}

#[derive(Debug, Serialize)]
struct Seeds {
    data: u64,
    train: u64,
    folds: Vec<u64>,
}

#[derive(Debug, Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    config: ExperimentConfig,
    seeds: Seeds,
    inputs: Vec<FileHash>,
    artifacts: Vec<FileHash>,
}

fn hash_file(path: &Path, shown: String) -> CliResult<FileHash> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Runtime(format!("hash {}: {e}", path.display())))?;
    Ok(FileHash {
        path: shown,
        sha256: hex::encode(Sha256::digest(&bytes)),
        bytes: bytes.len() as u64,
    })
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::Runtime(format!("list {}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry
            .map_err(|e| CliError::Runtime(format!("list {}: {e}", dir.display())))?
            .path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Hashes every file under `dir` except the manifest itself.
fn hash_dir(dir: &Path) -> CliResult<Vec<FileHash>> {
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    files.retain(|p| p != &dir.join("manifest.json"));
    files.sort();
    files
        .iter()
        .map(|p| {
            let rel = p.strip_prefix(dir).unwrap_or(p);
            hash_file(p, rel.to_string_lossy().replace('\\', "/"))
        })
        .collect()
}

fn write_manifest(
    path: &Path,
    command: &str,
    config: &ExperimentConfig,
    inputs: &[(&str, &Path)],
    artifacts: Vec<FileHash>,
) -> CliResult<()> {
    let folds = config.folds.max(1);
    let manifest = Manifest {
        tool: "fcro",
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        config: config.clone(),
        seeds: Seeds {
            data: config.data.seed,
            train: config.train.seed,
            folds: (0..folds as u64)
                .map(|f| config.train.seed.wrapping_add(f))
                .collect(),
        },
        inputs: inputs
            .iter()
            .map(|(name, p)| hash_file(p, format!("{name}={}", p.display())))
            .collect::<CliResult<_>>()?,
        artifacts,
    };
    write_json(path, &manifest)
}

fn cmd_datagen(args: &DatagenArgs) -> CliResult<()> {
    let resolved = resolve(&args.config, Some(&args.data), None)?;
    resolved.check()?;
    let config = &resolved.config;
    let raw = generate(&config.data).map_err(runtime("datagen"))?;
    let data = if args.no_amplify {
        raw
    } else {
        let amplified =
            bias_amplify(&raw, config.target_gap, config.data.seed).map_err(runtime("amplify"))?;
        log::info!(
            "amplified gaps {:?}, kept {} of {}",
            amplified.gaps,
            amplified.data.len(),
            raw.len()
        );
        amplified.data
    };
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    data.write_csv(&args.out).map_err(runtime("write"))?;
    let manifest = args.manifest.clone().unwrap_or_else(|| {
        args.out.parent().map_or_else(
            || PathBuf::from("manifest.json"),
            |p| p.join("manifest.json"),
        )
    });
    let name = args
        .out
        .file_name()
        .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    write_manifest(
        &manifest,
        "datagen",
        config,
        &[],
        vec![hash_file(&args.out, name)?],
    )?;
    println!("wrote {} samples to {}", data.len(), args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct PretrainSummary<'a> {
    sensitive_auc: &'a [f64],
    captured_variance: f64,
    warnings: Vec<String>,
}

fn cmd_pretrain(args: &PretrainArgs) -> CliResult<()> {
    let resolved = resolve(&args.config, None, Some(&args.train))?;
    resolved.check()?;
    let config = &resolved.config;
    let data = read_dataset("--data", &args.data)?;
    let (train, validation) = holdout(&data, args.validation_fraction, config.train.seed)?;
    let sensitive = pretrain_sensitive(&train, Some(&validation), &config.train)
        .map_err(runtime("pretrain"))?;
    let space =
        build_sensitive_space(&sensitive, &train, &config.train).map_err(runtime("build_space"))?;
    create_dir(&args.out)?;
    sensitive
        .save(args.out.join("sensitive"))
        .map_err(runtime("save"))?;
    space
        .basis
        .save(args.out.join("space.csv"))
        .map_err(runtime("save"))?;
    let mut warnings = sensitive.warnings.clone();
    warnings.extend(space.basis.warnings().iter().cloned());
    write_json(
        &args.out.join("pretrain.json"),
        &PretrainSummary {
            sensitive_auc: &sensitive.validation_auc,
            captured_variance: space.captured_variance,
            warnings,
        },
    )?;
    write_manifest(
        &args.out.join("manifest.json"),
        "pretrain",
        config,
        &[("data", &args.data)],
        hash_dir(&args.out)?,
    )?;
    println!(
        "sensitive AUC {:?}, captured variance {:.4}",
        sensitive.validation_auc, space.captured_variance
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    selected_epoch: usize,
    checkpoints: &'a [CheckpointScore],
    losses: &'a [EpochLosses],
}

fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let resolved = resolve(&args.config, None, Some(&args.train))?;
    resolved.check()?;
    let config = &resolved.config;
    let data = read_dataset("--data", &args.data)?;
    require_dir("--sensitive", &args.sensitive)?;
    let sensitive = SensitiveModel::load(args.sensitive.join("sensitive"))
        .map_err(|e| CliError::Invalid(format!("--sensitive: {e}")))?;
    let basis = SubspaceBasis::load(args.sensitive.join("space.csv"))
        .map_err(|e| CliError::Invalid(format!("--sensitive: {e}")))?;
    let (train, validation) = holdout(&data, args.validation_fraction, config.train.seed)?;
    let run = train_target(
        &train,
        Some(&validation),
        &sensitive,
        &basis,
        &config.train,
        |_| {},
    )
    .map_err(runtime("train"))?;
    let scores: Vec<CheckpointScore> = run.checkpoints.iter().map(CheckpointScore::from).collect();
    let (model, selected_epoch) = if scores.is_empty() {
        (&run.final_model, config.train.epochs)
    } else {
        let i = select_model(&scores, config.train.top_n).map_err(runtime("select"))?;
        (&run.checkpoints[i].model, scores[i].epoch)
    };
    create_dir(&args.out)?;
    model
        .save(args.out.join("target"))
        .map_err(runtime("save"))?;
    write_json(
        &args.out.join("train.json"),
        &TrainSummary {
            selected_epoch,
            checkpoints: &scores,
            losses: &run.losses,
        },
    )?;
    write_manifest(
        &args.out.join("manifest.json"),
        "train",
        config,
        &[("data", &args.data)],
        hash_dir(&args.out)?,
    )?;
    println!("selected epoch {selected_epoch}");
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let resolved = resolve(&args.config, None, None)?;
    resolved.check()?;
    let config = &resolved.config;
    let data = read_dataset("--data", &args.data)?;
    require_dir("--model", &args.model)?;
    let dir = if args.model.join("target").is_dir() {
        args.model.join("target")
    } else {
        args.model.clone()
    };
    let model = TargetModel::load(&dir).map_err(|e| CliError::Invalid(format!("--model: {e}")))?;
    let table = model.prediction_table(&data).map_err(runtime("evaluate"))?;
    let report = evaluate(&table, &config.train.metrics).map_err(runtime("evaluate"))?;
    let calibration = calibration_curve(&table, Grouping::Joint, config.calibration_bins)
        .map_err(runtime("calibration"))?;
    create_dir(&args.out)?;
    write_json(&args.out.join("report.json"), &report)?;
    table
        .write_csv(args.out.join("predictions.csv"))
        .map_err(runtime("write"))?;
    let mut csv = String::from("group,bin_center,fraction,count\n");
    for g in &calibration {
        for b in &g.bins {
            let fraction = b.fraction.map(|f| f.to_string()).unwrap_or_default();
            csv.push_str(&format!(
                "{},{},{},{}\n",
                g.group, b.center, fraction, b.count
            ));
        }
    }
    write_text(&args.out.join("calibration.csv"), &csv)?;
    write_manifest(
        &args.out.join("manifest.json"),
        "evaluate",
        config,
        &[("data", &args.data)],
        hash_dir(&args.out)?,
    )?;
    println!("auc {:.4}, joint ED {:.4}", report.auc, report.joint_ed);
    Ok(())
}

fn apply_fold_flags(
    config: &mut ExperimentConfig,
    flags: &mut Vec<(&'static str, &'static str)>,
    folds: Option<usize>,
    parallel: Option<usize>,
) {
    if let Some(f) = folds {
        config.folds = f;
        flags.push(("folds", "--folds"));
    }
    if let Some(p) = parallel {
        config.parallel_folds = p;
        flags.push(("parallel_folds", "--parallel-folds"));
    }
}

fn cmd_experiment(args: &ExperimentArgs) -> CliResult<()> {
    let mut resolved = resolve(&args.config, Some(&args.data), Some(&args.train))?;
    apply_fold_flags(
        &mut resolved.config,
        &mut resolved.flags,
        args.folds,
        args.parallel_folds,
    );
    resolved.check()?;
    let config = &resolved.config;
    let report = run_experiment(config).map_err(runtime("experiment"))?;
    create_dir(&args.out)?;
    write_json(&args.out.join("report.json"), &report)?;
    let row = ablation_row(SweepParam::LambdaC, config.train.lambda_c, &report);
    write_text(
        &args.out.join("ablation.csv"),
        &ablation_csv(std::slice::from_ref(&row)),
    )?;
    write_text(
        &args.out.join("tradeoff.csv"),
        &tradeoff_csv(std::slice::from_ref(&row)),
    )?;
    write_text(
        &args.out.join("calibration.csv"),
        &calibration_csv(&report.per_fold),
    )?;
    write_text(&args.out.join("losses.csv"), &losses_csv(&report.per_fold))?;
    let mut inputs = Vec::new();
    if let Some(p) = &args.config.config {
        inputs.push(("config", p.as_path()));
    }
    write_manifest(
        &args.out.join("manifest.json"),
        "experiment",
        config,
        &inputs,
        hash_dir(&args.out)?,
    )?;
    let a = &report.aggregate;
    println!(
        "auc {:.4} ± {:.4}, joint ED {:.4} ± {:.4} over {} folds",
        a.auc_mean,
        a.auc_std,
        a.joint_ed_mean,
        a.joint_ed_std,
        report.per_fold.len()
    );
    Ok(())
}

fn cmd_ablate(args: &AblateArgs) -> CliResult<()> {
    let mut resolved = resolve(&args.config, Some(&args.data), Some(&args.train))?;
    apply_fold_flags(
        &mut resolved.config,
        &mut resolved.flags,
        args.folds,
        args.parallel_folds,
    );
    resolved.check()?;
    let param: SweepParam = args
        .param
        .parse()
        .map_err(|e: crate::Error| CliError::Invalid(format!("--param: {e}")))?;
    for &v in &args.values {
        let mut probe = resolved.config.train.clone();
        param
            .apply(&mut probe, v)
            .map_err(|e| CliError::Invalid(format!("--values: {e}")))?;
        if let Some(problem) = probe.violations().first() {
            return Err(CliError::Invalid(format!("--values: {v}: {problem}")));
        }
    }
    let config = &resolved.config;
    let (rows, reports) = ablate(config, param, &args.values).map_err(runtime("ablate"))?;
    create_dir(&args.out)?;
    write_text(&args.out.join("ablation.csv"), &ablation_csv(&rows))?;
    write_text(&args.out.join("tradeoff.csv"), &tradeoff_csv(&rows))?;
    for (row, report) in rows.iter().zip(&reports) {
        let name = format!("calibration_{}_{}.csv", row.setting, row.value);
        write_text(&args.out.join(name), &calibration_csv(&report.per_fold))?;
    }
    write_json(&args.out.join("reports.json"), &reports)?;
    let mut inputs = Vec::new();
    if let Some(p) = &args.config.config {
        inputs.push(("config", p.as_path()));
    }
    write_manifest(
        &args.out.join("manifest.json"),
        "ablate",
        config,
        &inputs,
        hash_dir(&args.out)?,
    )?;
    print!("{}", ablation_csv(&rows));
    Ok(())
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .try_init();
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    let result = match &cli.command {
        Command::Datagen(a) => cmd_datagen(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Ablate(a) => cmd_ablate(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
