mod config;

use std::fs;
use std::io::{self, BufRead};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use secnn::gradcheck;
use secnn::model::checkpoint::Checkpoint;
use secnn::model::ModelConfig;
use secnn::text::{load_dataset, Dataset};
use secnn::training::{evaluate_dataset, predict, train, TrainOutcome};
use thiserror::Error;

use config::RunConfig;

/// Exit status 1: configuration, checkpoint or label-map problem.
/// 2: missing or malformed data. 3: numeric failure.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
    #[error(transparent)]
    Lib(#[from] secnn::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use secnn::Error as E;
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Lib(e) => match e {
                E::Config(_) | E::InvalidArgument(_) | E::Checkpoint(_) | E::LabelMismatch(_) => 1,
                E::Io { .. } | E::Parse { .. } | E::Data(_) => 2,
                _ => 3,
            },
        }
    }
}

#[derive(Parser)]
#[command(name = "secnn", version, about = "Squeeze-and-excitation CNN sentence classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set model.r=32` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed for splitting, initialization, shuffling and dropout
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes `<out>/checkpoint/` and `<out>/report.csv`
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy of a checkpoint on a labelled CSV
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Classify `--text`, or one sentence per stdin line
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        text: Option<String>,
    },
    /// Compare backprop gradients with finite differences on a small model
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Test hook: perturb the gradient of this tensor
        #[arg(long, hide = true)]
        corrupt_grad: Option<String>,
    },
    /// Train once per increasing ratio; writes `<out>/sweep_ratio.csv`
    SweepRatio {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32,64")]
        ratios: Vec<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train { common, dataset, out } => cmd_train(&common, dataset, out),
        Command::Eval { checkpoint, dataset } => cmd_eval(&checkpoint, &dataset),
        Command::Predict { checkpoint, text } => cmd_predict(&checkpoint, text),
        Command::Gradcheck { common, corrupt_grad } => cmd_gradcheck(&common, corrupt_grad),
        Command::SweepRatio {
            common,
            dataset,
            out,
            ratios,
        } => cmd_sweep_ratio(&common, dataset, out, ratios),
    }
}

fn load_config(common: &Common, defaults: ModelConfig) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(RunConfig::with_model(defaults), common.config.as_deref(), &common.set)?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
        cfg.gradcheck.seed = seed;
    }
    Ok(cfg)
}

/// Everything needed for a training run, checked before any output exists.
struct TrainSetup {
    cfg: RunConfig,
    data: Dataset,
    out: PathBuf,
}

fn prepare_training(common: &Common, dataset: Option<PathBuf>, out: Option<PathBuf>) -> Result<TrainSetup, CliError> {
    let mut cfg = load_config(common, ModelConfig::default())?;
    cfg.paths.dataset = dataset.or(cfg.paths.dataset);
    cfg.paths.out = out.or(cfg.paths.out);
    cfg.train.validate()?;
    let out = cfg
        .paths
        .out
        .clone()
        .ok_or_else(|| CliError::Config("no output directory (use --out or paths.out)".into()))?;
    let path = cfg
        .paths
        .dataset
        .clone()
        .ok_or_else(|| CliError::Config("no dataset (use --dataset or paths.dataset)".into()))?;
    if !path.is_file() {
        return Err(CliError::Data(format!("dataset not found: {}", path.display())));
    }
    if let Some(v) = &cfg.embeddings.vectors {
        if !v.is_file() {
            return Err(CliError::Data(format!("vector file not found: {}", v.display())));
        }
    }
    let data = load_dataset(&path)?;
    cfg.model.num_classes = data.num_classes();
    cfg.model.validate()?;
    Ok(TrainSetup { cfg, data, out })
}

fn fit(setup: &TrainSetup) -> Result<TrainOutcome<f64>, CliError> {
    Ok(train::<f64>(
        &setup.cfg.model,
        &setup.cfg.train,
        &setup.data,
        &setup.cfg.embeddings,
    )?)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

fn cmd_train(common: &Common, dataset: Option<PathBuf>, out: Option<PathBuf>) -> Result<(), CliError> {
    let setup = prepare_training(common, dataset, out)?;
    let test = match &setup.cfg.paths.test {
        Some(p) => Some(load_dataset(p)?),
        None => None,
    };
    let outcome = fit(&setup)?;
    let report = &outcome.report;

    create_dir(&setup.out)?;
    outcome.checkpoint.save(&setup.out.join("checkpoint"))?;
    report.write_csv(&setup.out.join("report.csv"))?;

    if let Some(cov) = report.coverage {
        println!(
            "vector_coverage={:.4} ({} found, {} missed)",
            cov.fraction(),
            cov.found,
            cov.missed
        );
    }
    println!("epochs={}", report.epochs.len());
    println!("best_epoch={}", report.best_epoch);
    println!("best_dev_accuracy={:.4}", report.best_dev_acc);
    if let Some(test) = test {
        let eval = evaluate_dataset(&outcome.checkpoint, &test)?;
        println!("test_accuracy={:.4}", eval.accuracy);
    }
    println!("wall_time_s={:.1}", report.wall_time.as_secs_f64());
    Ok(())
}

fn cmd_eval(checkpoint: &Path, dataset: &Path) -> Result<(), CliError> {
    let ck = Checkpoint::<f64>::load(checkpoint)?;
    let data = load_dataset(dataset)?;
    let eval = evaluate_dataset(&ck, &data)?;
    println!("accuracy={:.4}", eval.accuracy);
    Ok(())
}

fn cmd_predict(checkpoint: &Path, text: Option<String>) -> Result<(), CliError> {
    let ck = Checkpoint::<f64>::load(checkpoint)?;
    let show = |line: &str| -> Result<(), CliError> {
        let p = predict(&ck, line)?;
        let probs: Vec<String> = p.probabilities.iter().map(|v| format!("{v:.6}")).collect();
        println!("{}\t{}", p.label, probs.join(","));
        Ok(())
    };
    match text {
        Some(t) => show(&t),
        None => {
            for line in io::stdin().lock().lines() {
                let line = line.map_err(|e| CliError::Data(format!("stdin: {e}")))?;
                show(&line)?;
            }
            Ok(())
        }
    }
}

fn cmd_gradcheck(common: &Common, corrupt: Option<String>) -> Result<(), CliError> {
    let cfg = load_config(common, ModelConfig::gradcheck())?;
    let mut opts = cfg.gradcheck.clone();
    opts.corrupt = corrupt;
    // Models above the parameter limit come back as config errors (exit 1).
    let report = gradcheck::run(&cfg.model, &opts)?;
    for t in &report.tensors {
        println!(
            "{:<16} max_rel_error={:.3e} checked={}",
            t.name, t.max_rel_error, t.checked
        );
    }
    let worst = report.worst();
    if report.passed() {
        println!(
            "PASS worst={} max_rel_error={:.3e} tolerance={:.0e}",
            worst.name, worst.max_rel_error, report.tolerance
        );
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed: worst tensor {} has max_rel_error={:.3e} (tolerance {:.0e})",
            worst.name, worst.max_rel_error, report.tolerance
        )))
    }
}

fn cmd_sweep_ratio(
    common: &Common,
    dataset: Option<PathBuf>,
    out: Option<PathBuf>,
    mut ratios: Vec<usize>,
) -> Result<(), CliError> {
    let mut setup = prepare_training(common, dataset, out)?;
    ratios.sort_unstable();
    ratios.dedup();
    if ratios.is_empty() {
        return Err(CliError::Config("no ratios given".into()));
    }
    for &r in &ratios {
        ModelConfig {
            r,
            ..setup.cfg.model.clone()
        }
        .validate()?;
    }
    let mut csv = String::from("r,dev_accuracy\n");
    for &r in &ratios {
        setup.cfg.model.r = r;
        let outcome = fit(&setup)?;
        println!(
            "r={r} dev_accuracy={:.4} epochs={}",
            outcome.report.best_dev_acc,
            outcome.report.epochs.len()
        );
        csv.push_str(&format!("{r},{}\n", outcome.report.best_dev_acc));
    }
    create_dir(&setup.out)?;
    let path = setup.out.join("sweep_ratio.csv");
    fs::write(&path, csv).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}
