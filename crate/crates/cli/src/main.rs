use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use sbfm::config::RunConfig;
use sbfm::field_model::{load_checkpoint, HeadKind};
use sbfm::objective::ObjectiveKind;
use sbfm::oracle_eval::suite::{run_suite, SuiteSettings};
use sbfm::oracle_eval::{evaluate_model, sample_model, write_pair_errors_csv};
use sbfm::simulate::write_trajectories_csv;
use sbfm::toy_data::{generate_dataset, Dataset, RemovalPair};
use sbfm::trainer::{train, RunManifest, TrainSpec, MANIFEST_FILE};

/// Environment variable capping internal parallelism; 0 is the
/// single-threaded deterministic mode.
const THREADS_ENV: &str = "SBFM_THREADS";

#[derive(Parser)]
#[command(name = "sbfm", version, about = "Bridge flow matching on a toy audio-visual removal task")]
struct Cli {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the toy removal dataset and its digest manifest.
    GenData(GenDataArgs),
    /// Train a field and write a run directory.
    Train(TrainArgs),
    /// Integrate a checkpoint from dataset sources and write latents and trajectories.
    Sample(SampleArgs),
    /// Run the identity and oracle suite; exits nonzero on any failure.
    Verify(VerifyArgs),
    /// Evaluate a checkpoint on the test split and write a metric report.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value = "data/toy.sbd")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    objects: Option<usize>,
    #[arg(long)]
    objects_per_scene: Option<usize>,
    #[arg(long)]
    t_a: Option<usize>,
    #[arg(long)]
    t_v: Option<usize>,
    #[arg(long)]
    c_v: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadsArg {
    Mlp,
    Linear,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Sbfm,
    Cfm,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum)]
    heads: Option<HeadsArg>,
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_peak: Option<f64>,
    #[arg(long)]
    warmup_steps: Option<u64>,
    /// Parent directory for the timestamped run directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Exact run directory, instead of a timestamped one under `out_dir`.
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    /// Number of test pairs to sample (all by default).
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value = "samples")]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the outcomes as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "metrics.json")]
    out: PathBuf,
    /// Optional per-pair error CSV.
    #[arg(long)]
    pairs_csv: Option<PathBuf>,
}

fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v.trim().parse().with_context(|| format!("{THREADS_ENV}={v} is not a count")),
        _ => Ok(0),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn read_dataset(path: &Path) -> Result<(Dataset, String)> {
    Dataset::read(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn cmd_gen_data(mut cfg: RunConfig, a: GenDataArgs) -> Result<()> {
    let d = &mut cfg.toy_data;
    d.seed = a.seed.unwrap_or(d.seed);
    d.n_pairs = a.pairs.unwrap_or(d.n_pairs);
    d.objects = a.objects.unwrap_or(d.objects);
    d.objects_per_scene = a.objects_per_scene.unwrap_or(d.objects_per_scene);
    d.t_a = a.t_a.unwrap_or(d.t_a);
    d.t_v = a.t_v.unwrap_or(d.t_v);
    d.c_v = a.c_v.unwrap_or(d.c_v);
    d.validate()?;
    let ds = generate_dataset(&cfg.toy_data)?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let manifest = ds.write(&a.out)?;
    println!("wrote {} ({} pairs, {} bytes)", a.out.display(), ds.pairs.len(), manifest.file_len);
    println!("sha256 {}", manifest.sha256);
    Ok(())
}

fn write_loss_csv(path: &Path, run: &str, manifest: &RunManifest) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "run,metric,step,value")?;
    for e in &manifest.epochs {
        for (metric, value) in [
            ("train_total", e.train.total),
            ("train_audio", e.train.audio_part),
            ("train_video", e.train.video_part),
            ("validation_total", e.validation.total),
            ("validation_audio", e.validation.audio_part),
            ("validation_video", e.validation.video_part),
        ] {
            writeln!(out, "{run},{metric},{},{value}", e.epoch)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_train(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    cfg.trainer.seed = a.seed.unwrap_or(cfg.trainer.seed);
    cfg.objective.lambda = a.lambda.unwrap_or(cfg.objective.lambda);
    if let Some(h) = a.heads {
        cfg.field_model.heads = match h {
            HeadsArg::Mlp => HeadKind::Mlp,
            HeadsArg::Linear => HeadKind::Linear,
        };
    }
    if let Some(o) = a.objective {
        cfg.objective.kind = match o {
            ObjectiveArg::Sbfm => ObjectiveKind::Sbfm,
            ObjectiveArg::Cfm => ObjectiveKind::Cfm,
        };
    }
    cfg.bridge.sigma = a.sigma.unwrap_or(cfg.bridge.sigma);
    cfg.trainer.max_epochs = a.epochs.unwrap_or(cfg.trainer.max_epochs);
    cfg.trainer.batch_size = a.batch_size.unwrap_or(cfg.trainer.batch_size);
    cfg.trainer.lr_peak = a.lr_peak.unwrap_or(cfg.trainer.lr_peak);
    cfg.trainer.warmup_steps = a.warmup_steps.unwrap_or(cfg.trainer.warmup_steps);
    cfg.run.out_dir = a.out_dir.unwrap_or(cfg.run.out_dir);
    let loss = cfg.loss()?;
    cfg.trainer.validate()?;
    let threads = threads_from_env()?;
    let (dataset, digest) = read_dataset(&a.data)?;
    cfg.toy_data = dataset.config.clone();

    let run_dir = a.run_dir.unwrap_or_else(|| {
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
        cfg.run.out_dir.join(format!("{stamp}-seed{}", cfg.trainer.seed))
    });
    fs::create_dir_all(&run_dir)?;
    fs::write(run_dir.join("config.toml"), cfg.to_toml())?;
    let spec = TrainSpec {
        dataset: &dataset,
        dataset_digest: digest,
        arch: cfg.field_model.clone(),
        loss,
        optim: cfg.trainer.clone(),
        threads,
        run_dir: Some(run_dir.clone()),
    };
    let outcome = train(&spec);
    let manifest = RunManifest::read(&run_dir.join(MANIFEST_FILE))?;
    let run_name = run_dir.file_name().map_or_else(|| "run".into(), |n| n.to_string_lossy().into_owned());
    write_loss_csv(&run_dir.join("losses.csv"), &run_name, &manifest)?;
    let outcome = outcome?;
    let m = &outcome.manifest;
    println!("run {}", run_dir.display());
    if let (Some(e), Some(v)) = (m.selected_epoch, m.selected_validation_total) {
        println!(
            "selected epoch {e}: validation loss {v:.6} (zero field {:.6}, ratio {:.1}x)",
            m.zero_field_baseline.total,
            m.zero_field_baseline.total / v
        );
    } else {
        println!("no epochs run; no checkpoint selected");
    }
    Ok(())
}

fn test_pairs(ds: &Dataset, limit: Option<usize>) -> &[RemovalPair] {
    let test = ds.test();
    &test[..limit.unwrap_or(test.len()).min(test.len())]
}

fn cmd_sample(mut cfg: RunConfig, a: SampleArgs) -> Result<()> {
    cfg.simulate.n_steps = a.steps.unwrap_or(cfg.simulate.n_steps);
    let params = load_checkpoint(&a.checkpoint).with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let (ds, _) = read_dataset(&a.data)?;
    let pairs = test_pairs(&ds, a.limit);
    let plan = cfg.plan(true)?;
    let paths = sample_model(&params, pairs, &plan)?;
    fs::create_dir_all(&a.out)?;
    let mut gen = BufWriter::new(File::create(a.out.join("generated.csv"))?);
    let dim = pairs.first().map_or(0, |p| p.x0.dim());
    write!(gen, "pair,removed_id")?;
    for k in 0..dim {
        write!(gen, ",coord_{k}")?;
    }
    writeln!(gen)?;
    let mut kept = Vec::new();
    let mut divergent = Vec::new();
    for (i, (p, path)) in pairs.iter().zip(paths).enumerate() {
        match path {
            Some(path) => {
                write!(gen, "{i},{}", p.removed_id)?;
                for v in path.last().as_slice() {
                    write!(gen, ",{v}")?;
                }
                writeln!(gen)?;
                kept.push(path);
            }
            None => divergent.push(i),
        }
    }
    gen.flush()?;
    let mut traj = BufWriter::new(File::create(a.out.join("trajectories.csv"))?);
    write_trajectories_csv(&mut traj, &kept)?;
    traj.flush()?;
    println!("sampled {} paths with {} steps into {}", kept.len(), plan.n_steps, a.out.display());
    if !divergent.is_empty() {
        eprintln!("divergent paths (excluded): {divergent:?}");
    }
    Ok(())
}

fn cmd_verify(mut cfg: RunConfig, a: VerifyArgs) -> Result<bool> {
    cfg.oracle_eval.seed = a.seed.unwrap_or(cfg.oracle_eval.seed);
    let o = &cfg.oracle_eval;
    let settings = SuiteSettings {
        seed: o.seed,
        chain_draws: o.chain_draws,
        transport_pairs: o.transport_pairs,
        sde_paths: o.sde_paths,
        permutations: o.permutations,
    };
    let outcomes = run_suite(&settings);
    let width = outcomes.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &outcomes {
        let mark = if c.passed { "PASS" } else { "FAIL" };
        println!("{mark}  {:width$}  {:>7.2}s  {}", c.name, c.seconds, c.detail);
    }
    if let Some(path) = &a.report {
        fs::write(path, serde_json::to_string_pretty(&outcomes)?)?;
    }
    let failed: Vec<&str> = outcomes.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if !failed.is_empty() {
        eprintln!("violated: {}", failed.join(", "));
    }
    Ok(failed.is_empty())
}

fn cmd_eval(mut cfg: RunConfig, a: EvalArgs) -> Result<()> {
    cfg.simulate.n_steps = a.steps.unwrap_or(cfg.simulate.n_steps);
    cfg.oracle_eval.seed = a.seed.unwrap_or(cfg.oracle_eval.seed);
    let params = load_checkpoint(&a.checkpoint).with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let (ds, _) = read_dataset(&a.data)?;
    let pairs = ds.test();
    let (report, outcomes) = evaluate_model(&params, pairs, &cfg.plan(false)?, &cfg.eval_settings())?;
    fs::write(&a.out, serde_json::to_string_pretty(&report)?)?;
    if let Some(csv) = &a.pairs_csv {
        let endpoints: Vec<_> = pairs.iter().map(RemovalPair::endpoints).collect();
        let mut w = BufWriter::new(File::create(csv)?);
        write_pair_errors_csv(&mut w, &endpoints, &outcomes)?;
        w.flush()?;
    }
    println!("block   paired_mse    baseline_mse  ratio      energy      threshold");
    for (name, b) in [("audio", report.audio), ("video", report.video), ("joint", report.joint)] {
        println!(
            "{name:6}  {:.6e}  {:.6e}  {:.3e}  {:+.4e}  {:.4e}",
            b.paired_mse,
            b.baseline_mse,
            b.mse_ratio(),
            b.energy_distance,
            b.energy_threshold
        );
    }
    println!("evaluated {} pairs, {} divergent", report.n_evaluated, report.divergent.len());
    println!("note: {}", report.note);
    Ok(())
}

fn cli_command() -> clap::Command {
    let defaults = RunConfig::default().to_toml();
    Cli::command().after_long_help(format!("Configuration keys and defaults (--config FILE):\n\n{defaults}"))
}

fn run() -> Result<bool> {
    let cli = Cli::from_arg_matches(&cli_command().get_matches()).unwrap_or_else(|e| e.exit());
    let cfg = load_config(cli.config.as_deref())?;
    cfg.validate().context("invalid configuration")?;
    match cli.command {
        Command::GenData(a) => cmd_gen_data(cfg, a).map(|()| true),
        Command::Train(a) => cmd_train(cfg, a).map(|()| true),
        Command::Sample(a) => cmd_sample(cfg, a).map(|()| true),
        Command::Verify(a) => cmd_verify(cfg, a),
        Command::Eval(a) => cmd_eval(cfg, a).map(|()| true),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

