//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Drives the `sbfm` binary the way a user would.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use sbfm::field_model::load_checkpoint;
use sbfm::oracle_eval::suite::CheckOutcome;
use sbfm::oracle_eval::MetricReport;
use sbfm::toy_data::Dataset;
use sbfm::trainer::{evaluate_loss, validation_points, RunManifest, BEST_CHECKPOINT, MANIFEST_FILE};

const TRAIN_BUDGET: Duration = Duration::from_secs(600);
const SHORT_EPOCHS: &str = "5";

struct Ctx {
    dir: PathBuf,
    data: PathBuf,
    verify: Option<Vec<CheckOutcome>>,
}

fn sbfm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbfm"))
        .args(args)
        .env("SBFM_THREADS", "0")
        .output()
        .expect("spawn sbfm")
}

fn ok(out: &Output) -> Result<(), String> {
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "exit {:?}: {}{}",
            out.status.code(),
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn train(ctx: &Ctx, run: &str, extra: &[&str]) -> Result<PathBuf, String> {
    let run_dir = ctx.dir.join(run);
    let mut args = vec!["train", "--data", p(&ctx.data), "--run-dir", p(&run_dir)];
    args.extend_from_slice(extra);
    ok(&sbfm(&args))?;
    Ok(run_dir)
}

fn manifest(run_dir: &Path) -> Result<RunManifest, String> {
    RunManifest::read(&run_dir.join(MANIFEST_FILE)).map_err(|e| e.to_string())
}

fn eval(ctx: &Ctx, run_dir: &Path) -> Result<MetricReport, String> {
    let out = run_dir.join("metrics.json");
    let ckpt = run_dir.join(BEST_CHECKPOINT);
    ok(&sbfm(&["eval", "--checkpoint", p(&ckpt), "--data", p(&ctx.data), "--out", p(&out)]))?;
    serde_json::from_str(&std::fs::read_to_string(&out).map_err(|e| e.to_string())?).map_err(|e| e.to_string())
}

fn verify_check(ctx: &mut Ctx, name: &str) -> Result<String, String> {
    if ctx.verify.is_none() {
        let report = ctx.dir.join("verify.json");
        let out = sbfm(&["verify", "--report", p(&report)]);
        let text = std::fs::read_to_string(&report).map_err(|e| format!("no verify report: {e}"))?;
        ctx.verify = Some(serde_json::from_str(&text).map_err(|e| e.to_string())?);
        if !out.status.success() {
            eprintln!("verify exited nonzero:\n{}", String::from_utf8_lossy(&out.stdout));
        }
    }
    let checks = ctx.verify.as_ref().expect("verify ran");
    let c = checks
        .iter()
        .find(|c| c.name == name)
        .ok_or_else(|| format!("check {name} missing from verify report"))?;
    let line = format!("{} ({:.2}s)", c.detail, c.seconds);
    if c.passed {
        Ok(line)
    } else {
        Err(line)
    }
}

fn end_to_end(ctx: &mut Ctx) -> Result<String, String> {
    let started = Instant::now();
    let run = train(ctx, "e2e", &[])?;
    let took = started.elapsed();
    if took > TRAIN_BUDGET {
        return Err(format!("training took {:.0}s (> 600s)", took.as_secs_f64()));
    }
    let m = manifest(&run)?;
    let selected = m.selected_validation_total.ok_or("no checkpoint selected")?;
    let r = eval(ctx, &run)?;
    let mut fails = Vec::new();
    for (name, b) in [("audio", r.audio), ("video", r.video)] {
        if b.paired_mse >= 0.1 * b.baseline_mse {
            fails.push(format!("{name} paired_mse {:.3e} >= 0.1 x {:.3e}", b.paired_mse, b.baseline_mse));
        }
    }
    for (name, b) in [("audio", r.audio), ("video", r.video), ("joint", r.joint)] {
        if !b.energy_within_null() {
            fails.push(format!("{name} energy {:.4} >= threshold {:.4}", b.energy_distance, b.energy_threshold));
        }
    }
    if !r.divergent.is_empty() {
        fails.push(format!("{} divergent paths", r.divergent.len()));
    }
    let detail = format!(
        "train {:.0}s; mse ratio audio {:.2e} video {:.2e}; energy joint {:+.4} vs {:.4}; validation {:.3} vs zero field {:.3} ({:.1}x)",
        took.as_secs_f64(),
        r.audio.mse_ratio(),
        r.video.mse_ratio(),
        r.joint.energy_distance,
        r.joint.energy_threshold,
        selected,
        m.zero_field_baseline.total,
        m.zero_field_baseline.total / selected
    );
    if fails.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", fails.join("; ")))
    }
}

fn lambda_ablation(ctx: &mut Ctx) -> Result<String, String> {
    let mut runs = Vec::new();
    for lambda in ["1", "3", "5"] {
        let run = train(ctx, &format!("lambda-{lambda}"), &["--lambda", lambda, "--epochs", SHORT_EPOCHS])?;
        let m = manifest(&run)?;
        if m.config.loss.lambda != lambda.parse::<f64>().expect("literal") {
            return Err(format!("manifest for lambda {lambda} records {}", m.config.loss.lambda));
        }
        let e = m.epochs.last().ok_or("empty loss series")?;
        for rep in [e.train, e.validation] {
            let recomposed = rep.audio_part + m.config.loss.lambda * rep.video_part;
            if !(rep.audio_part > 0.0 && rep.video_part > 0.0) || (recomposed - rep.total).abs() > 1e-9 * rep.total {
                return Err(format!("lambda {lambda}: per-modality parts inconsistent: {rep:?}"));
            }
        }
        runs.push(run);
    }
    // Frozen checkpoint, fixed residuals: only λ varies.
    let params = load_checkpoint(&runs[1].join(BEST_CHECKPOINT)).map_err(|e| e.to_string())?;
    let (ds, _) = Dataset::read(&ctx.data).map_err(|e| e.to_string())?;
    let m = manifest(&runs[1])?;
    let pts = validation_points(ds.validation(), &m.config.loss, m.seed).map_err(|e| e.to_string())?;
    let mut contrib = Vec::new();
    for lambda in [1.0, 3.0, 5.0] {
        let rep = evaluate_loss(&params, &pts, ds.validation(), lambda).map_err(|e| e.to_string())?;
        contrib.push(rep.weighted_video(lambda));
    }
    let detail = format!("three runs completed; weighted video term {:.4} < {:.4} < {:.4}", contrib[0], contrib[1], contrib[2]);
    if contrib[0] < contrib[1] && contrib[1] < contrib[2] {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn head_ablation(ctx: &mut Ctx) -> Result<String, String> {
    let mut lines = Vec::new();
    for heads in ["linear", "mlp"] {
        let run = train(ctx, &format!("heads-{heads}"), &["--heads", heads, "--epochs", SHORT_EPOCHS])?;
        let r = eval(ctx, &run)?;
        let vals = [r.audio, r.video, r.joint]
            .iter()
            .flat_map(|b| [b.paired_mse, b.baseline_mse, b.energy_distance, b.energy_threshold])
            .collect::<Vec<_>>();
        if vals.iter().any(|v| !v.is_finite()) || r.audio.paired_mse < 0.0 {
            return Err(format!("{heads}: non-finite metric report"));
        }
        lines.push(format!("{heads}: joint mse ratio {:.3}", r.joint.mse_ratio()));
    }
    Ok(lines.join("; "))
}

fn determinism(ctx: &mut Ctx) -> Result<String, String> {
    let a = manifest(&train(ctx, "det-a", &["--seed", "11", "--epochs", SHORT_EPOCHS])?)?;
    let b = manifest(&train(ctx, "det-b", &["--seed", "11", "--epochs", SHORT_EPOCHS])?)?;
    let bits = |m: &RunManifest| {
        m.epochs
            .iter()
            .flat_map(|e| [e.train.total, e.train.audio_part, e.train.video_part, e.validation.total])
            .map(f64::to_bits)
            .collect::<Vec<_>>()
    };
    if a.without_wall_clock() == b.without_wall_clock() && bits(&a) == bits(&b) {
        Ok(format!("{} epochs, loss series bitwise identical", a.epochs.len()))
    } else {
        Err("manifests differ".into())
    }
}

type Criterion = fn(&mut Ctx) -> Result<String, String>;

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let data = tmp.path().join("toy.sbd");
    let gen = sbfm(&["gen-data", "--out", p(&data)]);
    if let Err(e) = ok(&gen) {
        println!("FAIL  gen-data: {e}");
        std::process::exit(1);
    }
    let mut ctx = Ctx {
        dir: tmp.path().to_path_buf(),
        data,
        verify: None,
    };
    let criteria: [(&str, Criterion); 9] = [
        ("derivation-chain identities", |c| verify_check(c, "derivation-chain")),
        ("SDE marginal law", |c| verify_check(c, "sde-marginal-law")),
        ("sigma=0 degeneration", |c| verify_check(c, "sigma-zero-degeneration")),
        ("gradient oracle", |c| verify_check(c, "gradient-oracle")),
        ("Euler order", |c| verify_check(c, "euler-order")),
        ("end-to-end toy removal", end_to_end),
        ("lambda ablation structure", lambda_ablation),
        ("head ablation structure", head_ablation),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f(&mut ctx) {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
