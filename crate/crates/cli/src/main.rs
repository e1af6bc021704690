//! `gad`: generate synthetic clips, train and evaluate the recurrent group
//! activity models, and check their gradients.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use srnn::config::KeyValues;
use srnn::data::synth::{generate, random_clip, ScenarioConfig};
use srnn::data::{read_dataset, split_train_val, write_dataset};
use srnn::model::{check_gradients, GroupsMode, ModelConfig, Variant};
use srnn::tensor::{checkpoint, GradCheckOptions};
use srnn::train::{evaluate, train, write_metrics_csv, EpochRecord, TrainConfig};
use srnn::Error;

const SEED_ENV: &str = "GAD_SEED";

#[derive(Parser)]
#[command(name = "gad", version, about = "Group activity recognition with structural RNNs")]
struct Cli {
    /// Worker threads for per-clip parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Suppress timing output so that stdout is reproducible.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset, or validate an existing one.
    GenData(GenDataArgs),
    /// Two-stage training; writes a checkpoint, its config and a metrics CSV.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Finite-difference check of the model gradients on a small random clip.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("mode").required(true).args(["out", "validate"]))]
struct GenDataArgs {
    /// Scenario config (key = value).
    #[arg(long, requires = "out")]
    config: Option<PathBuf>,
    /// Output dataset path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Check an existing dataset instead of generating one.
    #[arg(long, value_name = "DATA")]
    validate: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    model: Variant,
    /// 1 or 2 (default: config file, else 1).
    #[arg(long)]
    groups: Option<GroupsMode>,
    #[arg(long)]
    data: PathBuf,
    /// Model and training config (key = value).
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint path; `<out>.cfg` and `<out>.metrics.csv` are written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Feed both persons' node features to every edge RNN (maxnode only).
    #[arg(long)]
    deep_edge_features: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Metrics CSV path (default `<out>.metrics.csv`).
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: Variant,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Metrics CSV path (default `<ckpt>.eval.csv`).
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    model: Variant,
    #[arg(long, default_value = "1")]
    groups: GroupsMode,
    #[arg(long)]
    seed: Option<u64>,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Usage(_) | Error::Config(_) => 1,
        Error::Numeric(_) => 3,
        Error::Dimension(_)
        | Error::Parse { .. }
        | Error::Validation { .. }
        | Error::Checkpoint(_)
        | Error::Io(_) => 2,
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Flag, then config file, then `GAD_SEED`, then 0.
fn resolve_seed(flag: Option<u64>, kv: &KeyValues) -> srnn::Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(s) = kv.get_parsed("seed")? {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn gen_data(args: GenDataArgs) -> srnn::Result<()> {
    if let Some(path) = args.validate {
        let data = read_dataset(&path)?;
        let persons: usize = data.iter().map(|s| s.num_persons()).sum();
        println!("{}: {} clips, {persons} person tracks, all valid", path.display(), data.len());
        return Ok(());
    }
    let out = args.out.expect("clap requires --out without --validate");
    let kv = match &args.config {
        Some(p) => KeyValues::from_file(p)?,
        None => KeyValues::new(),
    };
    kv.check_known(ScenarioConfig::KEYS)?;
    let mut cfg = ScenarioConfig::default();
    cfg.apply(&kv)?;
    cfg.seed = resolve_seed(args.seed, &kv)?;
    let data = generate(&cfg)?;
    write_dataset(&data, &out)?;
    println!("wrote {} clips to {}", data.len(), out.display());
    Ok(())
}

fn run_train(args: TrainArgs, deterministic: bool) -> srnn::Result<()> {
    let start = Instant::now();
    let kv = KeyValues::from_file(&args.config)?;
    let known: Vec<&str> = ModelConfig::KEYS.iter().chain(TrainConfig::keys()).copied().collect();
    kv.check_known(&known)?;
    if let Some(m) = kv.get_parsed::<Variant>("model")? {
        if m != args.model {
            return Err(Error::Config(format!("config names model {m}, flag says {}", args.model)));
        }
    }

    let data = read_dataset(&args.data)?;
    if data.is_empty() {
        return Err(Error::Usage(format!("{} holds no clips", args.data.display())));
    }
    let mut cfg = ModelConfig::desk(args.model);
    cfg.node_feature_dim = data[0].feature_dim();
    cfg.apply(&kv)?;
    if let Some(g) = args.groups {
        cfg.groups = g;
    }
    cfg.deep_edge_features |= args.deep_edge_features;
    cfg.validate()?;

    let mut tc = TrainConfig::default();
    tc.apply(&kv)?;
    tc.seed = resolve_seed(args.seed, &kv)?;
    tc.validate()?;

    let (train_set, val) = if tc.val_fraction > 0.0 {
        split_train_val(&data, tc.val_fraction, tc.seed)
    } else {
        (data, Vec::new())
    };
    let val = (!val.is_empty()).then_some(val.as_slice());
    println!(
        "training {} on {} clips ({} validation), {} + {} epochs",
        cfg.variant,
        train_set.len(),
        val.map_or(0, <[_]>::len),
        tc.stage1_epochs,
        tc.stage2_epochs
    );
    let outcome = train(&tc, &cfg, &train_set, val)?;

    checkpoint::save(&outcome.params, &args.out)?;
    let mut sidecar = cfg.to_key_values();
    sidecar.set("seed", tc.seed.to_string());
    fs::write(with_suffix(&args.out, ".cfg"), sidecar.to_string())?;
    let metrics_path = args.metrics.unwrap_or_else(|| with_suffix(&args.out, ".metrics.csv"));
    write_metrics_csv(&metrics_path, &outcome.records)?;

    if let Some(e) = outcome.best_epoch {
        println!("best validation epoch: {e}");
    }
    let m = evaluate(&outcome.params, &cfg, &train_set)?;
    println!("train: {m}");
    if let Some(v) = val {
        println!("val:   {}", evaluate(&outcome.params, &cfg, v)?);
    }
    println!("checkpoint: {}", args.out.display());
    if !deterministic {
        println!("elapsed: {:.1}s", start.elapsed().as_secs_f64());
    }
    Ok(())
}

fn run_eval(args: EvalArgs) -> srnn::Result<()> {
    let sidecar = with_suffix(&args.ckpt, ".cfg");
    let kv = KeyValues::from_file(&sidecar)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", sidecar.display())))?;
    if kv.get_parsed::<Variant>("model")? != Some(args.model) {
        return Err(Error::Usage(format!(
            "{} holds a {} checkpoint, not {}",
            args.ckpt.display(),
            kv.get("model").unwrap_or("?"),
            args.model
        )));
    }
    let cfg = ModelConfig::from_key_values(&kv, args.model)?;
    let params = checkpoint::load(&args.ckpt)?;
    let data = read_dataset(&args.data)?;
    let m = evaluate(&params, &cfg, &data)?;
    println!("{m}");
    println!("group_accuracy: {:.4}", m.group_accuracy);
    println!("action_accuracy: {:.4}", m.action_accuracy);
    let path = args.metrics.unwrap_or_else(|| with_suffix(&args.ckpt, ".eval.csv"));
    let record = EpochRecord {
        epoch: 0,
        split: "eval".into(),
        loss: m.mean_loss,
        group_acc: Some(m.group_accuracy),
        action_acc: m.action_accuracy,
    };
    write_metrics_csv(path, &[record])?;
    Ok(())
}

fn run_gradcheck(args: GradcheckArgs) -> srnn::Result<bool> {
    let seed = resolve_seed(args.seed, &KeyValues::new())?;
    let cfg = ModelConfig {
        node_hidden: 6,
        edge_hidden: 4,
        group_hidden: 5,
        node_feature_dim: 5,
        groups: args.groups,
        ..ModelConfig::desk(args.model)
    };
    let persons = if args.groups == GroupsMode::Two { 4 } else { 3 };
    let sample = random_clip(seed, persons, 2, cfg.label_space())?;
    let params = cfg.init_params(seed)?;
    let report = check_gradients(&params, &cfg, &sample, GradCheckOptions::default())?;
    println!(
        "{}: checked {} scalars, max relative error {:.3e} (tolerance {:.0e})",
        cfg.variant, report.checked, report.max_rel_error, report.tol
    );
    for e in report.worst.iter().take(5) {
        println!(
            "  {}[{}]: analytic {:.6e}, numeric {:.6e}, rel {:.2e}",
            e.name, e.index, e.analytic, e.numeric, e.rel_error
        );
    }
    Ok(report.passed())
}

fn run(cli: Cli) -> srnn::Result<u8> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::GenData(a) => gen_data(a).map(|()| 0),
        Command::Train(a) => run_train(a, cli.deterministic).map(|()| 0),
        Command::Eval(a) => run_eval(a).map(|()| 0),
        Command::Gradcheck(a) => run_gradcheck(a).map(|ok| if ok { 0 } else { 3 }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("gad: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
