//! `intentlab`: dataset generation, pretraining, evaluation, ablations and
//! reports, all seeded and config-driven.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use intentlab::config::{read_manifest, write_dataset, EvalSetting, RunConfig, DEFAULT_OUT, OUT_ENV};
use intentlab::datamodel::{read_jsonl, read_pretrain_jsonl, Split};
use intentlab::evaluation::{evaluate, full_grid, run_ablation_matrix, AblationCell, EvalMetrics, Regime, Setting};
use intentlab::losses::LossMode;
use intentlab::nn::{Checkpoint, OptimKind};
use intentlab::report::{
    ablation_csv, ablation_markdown, metrics_markdown, write_report, TrainLogRow, ABLATION_CSV, ABLATION_FILE,
    METRICS_FILE, TRAIN_LOG_FILE,
};
use intentlab::sampling::NegativeScope;
use intentlab::synthgen::{split_file, Dataset, SplitCounts};
use intentlab::train::{init_params, pretrain, PretrainConfig};
use intentlab::{Error, Result};

const CHECKPOINT_FILE: &str = "checkpoint.bin";
const RESOLVED_CONFIG: &str = "config.toml";
const SUMMARY_FILE: &str = "summary.md";

#[derive(Parser, Debug)]
#[command(name = "intentlab", version, about = "Self-supervised temporal pretraining lab on synthetic clip sequences")]
struct Cli {
    /// Caps worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Root for default data and run directories.
    #[arg(long, global = true, env = OUT_ENV, default_value = DEFAULT_OUT)]
    out_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the three dataset splits and a manifest.
    GenerateData(GenerateArgs),
    /// Pretrain an encoder on the unlabeled split.
    Pretrain(PretrainArgs),
    /// Probe a checkpoint: classification, localization, anticipation.
    Evaluate(EvaluateArgs),
    /// Pretrain and probe every (scope, loss mode) cell for each seed.
    Ablate(AblateArgs),
    /// Render tables and charts from run logs.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// TOML run config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Existing output directory [default: <out-root>/data].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Total videos, split 3:1:1 into pretrain, labeled train, labeled test.
    #[arg(long, conflicts_with_all = ["pretrain", "labeled_train", "labeled_test"])]
    videos: Option<usize>,
    #[arg(long)]
    pretrain: Option<usize>,
    #[arg(long)]
    labeled_train: Option<usize>,
    #[arg(long)]
    labeled_test: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    d_in: Option<usize>,
    #[arg(long)]
    min_clips: Option<usize>,
    #[arg(long)]
    max_clips: Option<usize>,
    #[arg(long)]
    transition_lo: Option<f64>,
    #[arg(long)]
    transition_hi: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    regime_shift: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainFlags {
    #[arg(long)]
    steps: Option<usize>,
    /// Videos per batch (K).
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Contrastive temperature.
    #[arg(long)]
    tau: Option<f64>,
    /// sgd or adam.
    #[arg(long, value_parser = parse_optimizer)]
    optimizer: Option<OptimKind>,
}

impl TrainFlags {
    fn apply(&self, p: &mut PretrainConfig) {
        set(&mut p.steps, self.steps);
        set(&mut p.batch_size, self.batch_size);
        set(&mut p.lr, self.lr);
        set(&mut p.temperature, self.tau);
        set(&mut p.optimizer, self.optimizer);
    }
}

#[derive(Args, Debug)]
struct PretrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Dataset directory [default: <out-root>/data].
    #[arg(long)]
    data: Option<PathBuf>,
    /// Existing output directory [default: <out-root>/run].
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
    /// global or local.
    #[arg(long, value_parser = parse_scope)]
    scope: Option<NegativeScope>,
    /// temp_only, ord_only, combined or combined_permutation.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<LossMode>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalFlags {
    #[arg(long)]
    probe_steps: Option<usize>,
    #[arg(long)]
    probe_lr: Option<f64>,
    #[arg(long)]
    encoder_lr: Option<f64>,
    /// Anticipation horizon in seconds.
    #[arg(long)]
    horizon: Option<f64>,
}

impl EvalFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        let p = &mut cfg.eval.protocol;
        set(&mut p.probe_steps, self.probe_steps);
        set(&mut p.probe_lr, self.probe_lr);
        set(&mut p.encoder_lr, self.encoder_lr);
        set(&mut p.horizon, self.horizon);
    }
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    data: Option<PathBuf>,
    /// [default: <out>/checkpoint.bin]
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Existing output directory [default: <out-root>/run].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also evaluate the untrained encoder for the checkpoint's seed.
    #[arg(long)]
    with_scratch_baseline: bool,
    /// Evaluation seed [default: the checkpoint's seed].
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluate only this regime (with --labeled-fraction).
    #[arg(long, value_parser = parse_regime, requires = "labeled_fraction")]
    regime: Option<Regime>,
    #[arg(long, requires = "regime")]
    labeled_fraction: Option<f64>,
    #[command(flatten)]
    eval: EvalFlags,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Existing output directory [default: <out-root>/ablation].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
    seeds: Vec<u64>,
    /// Subset of scopes [default: all].
    #[arg(long, value_delimiter = ',', value_parser = parse_scope)]
    scopes: Vec<NegativeScope>,
    /// Subset of loss modes [default: all].
    #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
    modes: Vec<LossMode>,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    eval: EvalFlags,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Directory holding metrics/training/ablation logs [default: <out-root>/run].
    #[arg(long)]
    logs: Option<PathBuf>,
    /// Existing output directory [default: the logs directory].
    #[arg(long)]
    out: Option<PathBuf>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn parse_scope(s: &str) -> std::result::Result<NegativeScope, String> {
    NegativeScope::parse(s).ok_or_else(|| format!("unknown scope '{s}' (global, local)"))
}

fn parse_mode(s: &str) -> std::result::Result<LossMode, String> {
    LossMode::parse(s)
        .ok_or_else(|| format!("unknown loss mode '{s}' (temp_only, ord_only, combined, combined_permutation)"))
}

fn parse_regime(s: &str) -> std::result::Result<Regime, String> {
    Regime::parse(s).ok_or_else(|| format!("unknown regime '{s}' (frozen, finetuned)"))
}

fn parse_optimizer(s: &str) -> std::result::Result<OptimKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "sgd" => Ok(OptimKind::Sgd),
        "adam" => Ok(OptimKind::adam()),
        _ => Err(format!("unknown optimizer '{s}' (sgd, adam)")),
    }
}

/// An explicit directory must already exist; a default one under the
/// output root is created.
fn output_dir(explicit: Option<PathBuf>, root: &Path, sub: &str) -> Result<PathBuf> {
    match explicit {
        Some(p) if p.is_dir() => Ok(p),
        Some(p) => {
            Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist")))
        }
        None => {
            let p = root.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
            Ok(p)
        }
    }
}

fn data_dir(explicit: Option<PathBuf>, root: &Path) -> Result<PathBuf> {
    let dir = explicit.unwrap_or_else(|| root.join("data"));
    if dir.is_dir() {
        Ok(dir)
    } else {
        Err(Error::DatasetNotFound(dir))
    }
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn append_lines<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    for r in rows {
        let line = serde_json::to_string(r).expect("row serializes");
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Takes the generation settings recorded with the dataset.
fn adopt_dataset(cfg: &mut RunConfig, data: &Path) -> Result<()> {
    let manifest = read_manifest(data)?;
    cfg.gen = manifest.gen;
    cfg.counts = manifest.counts;
    cfg.pretrain.dims.d_in = cfg.gen.d_in;
    Ok(())
}

fn cmd_generate(a: GenerateArgs, root: &Path) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(n) = a.videos {
        let pretrain = n * 3 / 5;
        let labeled_train = n / 5;
        cfg.counts = SplitCounts { pretrain, labeled_train, labeled_test: n - pretrain - labeled_train };
    }
    set(&mut cfg.counts.pretrain, a.pretrain);
    set(&mut cfg.counts.labeled_train, a.labeled_train);
    set(&mut cfg.counts.labeled_test, a.labeled_test);
    let g = &mut cfg.gen;
    set(&mut g.seed, a.seed);
    set(&mut g.d_in, a.d_in);
    set(&mut g.n_range.0, a.min_clips);
    set(&mut g.n_range.1, a.max_clips);
    set(&mut g.transition_quantile_range.0, a.transition_lo);
    set(&mut g.transition_quantile_range.1, a.transition_hi);
    set(&mut g.noise_sigma, a.noise_sigma);
    set(&mut g.regime_shift, a.regime_shift);
    cfg.gen.validate()?;
    let out = output_dir(a.out, root, "data")?;
    let (dataset, manifest) = write_dataset(&cfg, &out)?;
    println!(
        "wrote {} videos to {} (digest {}, seed {}{})",
        dataset.len(),
        out.display(),
        manifest.config_digest,
        manifest.seed,
        if manifest.no_signal { ", no-signal" } else { "" }
    );
    Ok(())
}

fn cmd_pretrain(a: PretrainArgs, root: &Path) -> Result<()> {
    let mut cfg = a.config.load()?;
    let data = data_dir(a.data, root)?;
    adopt_dataset(&mut cfg, &data)?;
    a.train.apply(&mut cfg.pretrain);
    set(&mut cfg.pretrain.scope, a.scope);
    set(&mut cfg.pretrain.mode, a.mode);
    set(&mut cfg.seed, a.seed);
    cfg.validate()?;
    let out = output_dir(a.out, root, "run")?;
    cfg.out_dir = out.clone();

    let pretrain_file = data.join(split_file(Split::PretrainUnlabeled));
    if !pretrain_file.is_file() {
        return Err(Error::DatasetNotFound(pretrain_file));
    }
    let videos = read_pretrain_jsonl(&pretrain_file)?;
    let outcome = pretrain(&videos, &cfg.pretrain, cfg.seed)?;
    if outcome.skipped > 0 {
        eprintln!("warning: skipped {} of {} videos too short for a triplet", outcome.skipped, videos.len());
    }
    let digest = cfg.digest();
    Checkpoint { seed: cfg.seed, digest: digest.clone(), params: outcome.params }.save(&out.join(CHECKPOINT_FILE))?;
    let rows: Vec<TrainLogRow> = outcome
        .log
        .iter()
        .map(|s| TrainLogRow { step: s.clone(), seed: cfg.seed, config_digest: digest.clone() })
        .collect();
    let log_path = out.join(TRAIN_LOG_FILE);
    let body: String = rows.iter().map(|r| serde_json::to_string(r).expect("row serializes") + "\n").collect();
    write_file(&log_path, &body)?;
    write_file(&out.join(RESOLVED_CONFIG), &cfg.to_toml())?;
    let last = outcome.log.last().map_or(f64::NAN, |l| l.report.l_total);
    println!(
        "pretrained {} steps ({} / {}), final l_total {last:.6}; checkpoint {} (digest {digest})",
        outcome.log.len(),
        cfg.pretrain.scope.name(),
        cfg.pretrain.mode.name(),
        out.join(CHECKPOINT_FILE).display()
    );
    Ok(())
}

fn read_labeled(data: &Path, split: Split) -> Result<Vec<intentlab::datamodel::VideoRecord>> {
    let path = data.join(split_file(split));
    if !path.is_file() {
        return Err(Error::DatasetNotFound(path));
    }
    read_jsonl(&path)
}

fn cmd_evaluate(a: EvaluateArgs, root: &Path) -> Result<()> {
    let mut cfg = a.config.load()?;
    let data = data_dir(a.data, root)?;
    adopt_dataset(&mut cfg, &data)?;
    a.eval.apply(&mut cfg);
    if let (Some(regime), Some(labeled_fraction)) = (a.regime, a.labeled_fraction) {
        cfg.eval.settings = vec![EvalSetting { regime, labeled_fraction }];
    }
    let out = output_dir(a.out, root, "run")?;
    cfg.out_dir = out.clone();
    let ckpt_path = a.checkpoint.unwrap_or_else(|| out.join(CHECKPOINT_FILE));
    let ckpt = Checkpoint::load(&ckpt_path)?;
    cfg.pretrain.dims = ckpt.params.dims();
    cfg.pretrain.temperature = ckpt.params.temperature;
    cfg.seed = a.seed.unwrap_or(ckpt.seed);
    cfg.validate()?;

    let train = read_labeled(&data, Split::LabeledTrain)?;
    let test = read_labeled(&data, Split::LabeledTest)?;
    let mut reps = vec![("pretrained".to_string(), ckpt.params.clone())];
    if a.with_scratch_baseline {
        reps.push(("scratch".to_string(), init_params(&cfg.pretrain, ckpt.seed)?));
    }
    let digest = cfg.digest();
    let jobs: Vec<(usize, EvalSetting)> =
        (0..reps.len()).flat_map(|r| cfg.eval.settings.iter().map(move |s| (r, *s))).collect();
    let rows: Vec<EvalMetrics> = jobs
        .par_iter()
        .map(|&(r, s)| {
            let setting = Setting {
                representation: &reps[r].0,
                regime: s.regime,
                labeled_fraction: s.labeled_fraction,
                seed: cfg.seed,
                config_digest: &digest,
            };
            evaluate(&reps[r].1, &train, &test, &setting, &cfg.eval.protocol)
        })
        .collect::<Result<_>>()?;
    append_lines(&out.join(METRICS_FILE), &rows)?;
    let summary = format!(
        "# Evaluation\n\ncheckpoint: {} (seed {}, digest {})\n\n{}",
        ckpt_path.strip_prefix(&out).unwrap_or(&ckpt_path).display(),
        ckpt.seed,
        ckpt.digest,
        metrics_markdown(&rows)
    );
    write_file(&out.join(SUMMARY_FILE), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_ablate(a: AblateArgs, root: &Path) -> Result<()> {
    let mut cfg = a.config.load()?;
    let data = data_dir(a.data, root)?;
    adopt_dataset(&mut cfg, &data)?;
    a.train.apply(&mut cfg.pretrain);
    a.eval.apply(&mut cfg);
    cfg.validate()?;
    let out = output_dir(a.out, root, "ablation")?;
    cfg.out_dir = out.clone();
    let grid: Vec<AblationCell> = full_grid()
        .into_iter()
        .filter(|c| a.scopes.is_empty() || a.scopes.contains(&c.scope))
        .filter(|c| a.modes.is_empty() || a.modes.contains(&c.mode))
        .collect();
    let dataset = Dataset::load(&data)?;
    let digest = cfg.digest();
    let table = run_ablation_matrix(&dataset, &grid, &a.seeds, &cfg.pretrain, &cfg.eval.protocol, &digest)?;

    let json = serde_json::to_string_pretty(&table).expect("table serializes");
    write_file(&out.join(ABLATION_FILE), &(json + "\n"))?;
    write_file(&out.join(ABLATION_CSV), &ablation_csv(&table)?)?;
    let metrics: Vec<EvalMetrics> = table.rows.iter().filter_map(|r| r.metrics.clone()).collect();
    append_lines(&out.join(METRICS_FILE), &metrics)?;
    write_file(&out.join(RESOLVED_CONFIG), &cfg.to_toml())?;
    let summary = ablation_markdown(&table);
    write_file(&out.join(SUMMARY_FILE), &summary)?;
    print!("{summary}");
    let failed = table.rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!("warning: {failed} of {} ablation runs failed; see {ABLATION_FILE}", table.rows.len());
    }
    Ok(())
}

fn cmd_report(a: ReportArgs, root: &Path) -> Result<()> {
    let logs = a.logs.unwrap_or_else(|| root.join("run"));
    let out = match a.out {
        Some(p) => output_dir(Some(p), root, "")?,
        None => logs.clone(),
    };
    for path in write_report(&logs, &out)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    let root = cli.out_root;
    match cli.command {
        Command::GenerateData(a) => cmd_generate(a, &root),
        Command::Pretrain(a) => cmd_pretrain(a, &root),
        Command::Evaluate(a) => cmd_evaluate(a, &root),
        Command::Ablate(a) => cmd_ablate(a, &root),
        Command::Report(a) => cmd_report(a, &root),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
