use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::Context;
use audioseq::data::{load_manifest, Dataset, FoldAssignment};
use audioseq::frontend::SAMPLE_RATE;
use audioseq::kv::KeyValues;
use audioseq::model::{load_checkpoint, ModelConfig};
use audioseq::rng::substream;
use audioseq::training::{cross_validate, evaluate, TrainConfig, Trainer};
use audioseq::Real;
use clap::Args;
use rand::seq::SliceRandom;

use crate::settings::{set_opt, Settings, UsageError};

#[derive(Args)]
pub struct TrainArgs {
    /// CSV manifest with header `path,label,fold,speaker`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// pure_mamba, helix or pure_attention.
    #[arg(long)]
    variant: Option<String>,
    /// raw or spectrogram.
    #[arg(long)]
    frontend: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    /// Number of leading tokens pooled by the head, or `all`.
    #[arg(long)]
    pool_k: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Stop once held-out accuracy reaches this value.
    #[arg(long)]
    target_accuracy: Option<f64>,
    /// Stop after the first epoch ending past this many seconds.
    #[arg(long)]
    time_budget_s: Option<f64>,
    /// Hold out this manifest fold.
    #[arg(long, conflicts_with = "cv")]
    fold: Option<usize>,
    /// Train one model per manifest fold and report mean and std.
    #[arg(long)]
    cv: bool,
    /// Held-out share when no fold is chosen.
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Continue the run saved in the output directory.
    #[arg(long, conflicts_with = "cv")]
    resume: bool,
}

impl TrainArgs {
    pub fn flags(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        set_opt(
            &mut kv,
            "manifest",
            self.manifest.as_ref().map(|p| p.display()),
        );
        set_opt(&mut kv, "variant", self.variant.as_ref());
        set_opt(&mut kv, "frontend", self.frontend.as_ref());
        set_opt(&mut kv, "epochs", self.epochs);
        set_opt(&mut kv, "d_model", self.d_model);
        set_opt(&mut kv, "n_layers", self.layers);
        set_opt(&mut kv, "pool_k", self.pool_k.as_ref());
        set_opt(&mut kv, "batch_size", self.batch_size);
        set_opt(&mut kv, "lr", self.lr);
        set_opt(&mut kv, "target_accuracy", self.target_accuracy);
        set_opt(&mut kv, "time_budget_s", self.time_budget_s);
        set_opt(&mut kv, "fold", self.fold);
        set_opt(&mut kv, "test_fraction", self.test_fraction);
        kv
    }
}

fn manifest_path(s: &Settings) -> Result<PathBuf, UsageError> {
    s.kv()
        .get("manifest")
        .map(PathBuf::from)
        .ok_or_else(|| UsageError("no manifest: pass --manifest or set `manifest`".into()))
}

fn load_data(path: &Path) -> anyhow::Result<(Dataset, Option<FoldAssignment>)> {
    load_manifest(path, SAMPLE_RATE).with_context(|| format!("loading {}", path.display()))
}

/// Shuffled held-out split of `round(n * fraction)` clips, at least one on
/// each side.
fn holdout(n: usize, fraction: f64, seed: u64) -> anyhow::Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(UsageError(format!("test_fraction must be in (0, 1), got {fraction}")).into());
    }
    if n < 2 {
        anyhow::bail!("need at least 2 clips to hold some out, manifest has {n}");
    }
    let n_test = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, "data"));
    let test = idx.split_off(n - n_test);
    Ok((idx, test))
}

fn model_config(s: &Settings, data: &Dataset) -> anyhow::Result<ModelConfig> {
    let cfg = ModelConfig {
        n_classes: data.n_classes,
        ..ModelConfig::default()
    }
    .apply_kv(s.kv())?;
    if cfg.n_classes < data.n_classes {
        return Err(UsageError(format!(
            "n_classes = {} but the manifest has {} classes",
            cfg.n_classes, data.n_classes
        ))
        .into());
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(s: &Settings, a: &TrainArgs) -> anyhow::Result<ExitCode> {
    with_precision!(s, train_with(s, a))
}

fn train_with<T: Real>(s: &Settings, a: &TrainArgs) -> anyhow::Result<ExitCode> {
    let manifest = manifest_path(s)?;
    let (data, folds) = load_data(&manifest)?;
    let mcfg = model_config(s, &data)?;
    let tcfg = TrainConfig::from_kv(s.kv())?;
    let out = s.out_or("runs/train");
    let no_folds = || UsageError(format!("{} has no fold column", manifest.display()));

    if a.cv {
        let folds = folds.ok_or_else(no_folds)?;
        let cv = cross_validate::<T>(&mcfg, &tcfg, &data, &folds, Some(&out))?;
        for (k, acc) in cv.fold_accuracies.iter().enumerate() {
            println!("fold {k}: accuracy {acc:.4}");
        }
        println!(
            "{} {}: accuracy {:.4} +- {:.4} over {} folds",
            mcfg.variant,
            mcfg.frontend,
            cv.mean,
            cv.std,
            cv.fold_accuracies.len()
        );
        println!("wrote {}", out.join("cv_summary.json").display());
        return Ok(ExitCode::SUCCESS);
    }

    let (train_idx, test_idx) = match s.kv().get_parsed::<usize>("fold")? {
        Some(k) => {
            let folds = folds.ok_or_else(no_folds)?;
            if k >= folds.n_folds {
                return Err(UsageError(format!(
                    "fold {k} out of range, manifest has {} folds",
                    folds.n_folds
                ))
                .into());
            }
            folds.split(k)
        }
        None => {
            let fraction = s.kv().get_parsed("test_fraction")?.unwrap_or(0.2);
            holdout(data.len(), fraction, tcfg.seed)?
        }
    };
    let (train, test) = (data.subset(&train_idx), data.subset(&test_idx));

    let stop = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&stop);
    // A second registration in the same process fails; the first one wins.
    let _ = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst));

    let trainer = if a.resume {
        Trainer::<T>::resume(&out, tcfg, &train, &test)
            .with_context(|| format!("resuming from {}", out.display()))?
    } else {
        Trainer::<T>::new(&mcfg, tcfg, &train, &test)?.with_output(&out)?
    };
    let mut trainer = trainer.with_stop_flag(stop);
    let report = trainer.run()?;
    println!(
        "{} {}: best accuracy {:.4} at epoch {}, final accuracy {:.4}, {}/{} epochs ({})",
        mcfg.variant,
        mcfg.frontend,
        report.best_accuracy,
        report.best_epoch,
        report.final_accuracy,
        report.epochs_completed,
        report.epochs_planned,
        report.stop
    );
    println!("wrote {}", out.join("summary.json").display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint directory written by `train` (for example `runs/train/best`).
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

impl EvalArgs {
    pub fn flags(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        set_opt(
            &mut kv,
            "manifest",
            self.manifest.as_ref().map(|p| p.display()),
        );
        kv
    }
}

pub fn eval(s: &Settings, a: &EvalArgs) -> anyhow::Result<ExitCode> {
    with_precision!(s, eval_with(s, a))
}

fn eval_with<T: Real>(s: &Settings, a: &EvalArgs) -> anyhow::Result<ExitCode> {
    let model = load_checkpoint::<T>(&a.checkpoint)
        .with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let manifest = manifest_path(s)?;
    let (data, _) = load_data(&manifest)?;
    if data.n_classes > model.cfg.n_classes {
        anyhow::bail!(
            "{} has {} classes, the checkpoint predicts {}",
            manifest.display(),
            data.n_classes,
            model.cfg.n_classes
        );
    }
    let inputs = data
        .clips
        .iter()
        .map(|c| model.prepare(&c.waveform))
        .collect::<audioseq::Result<Vec<_>>>()?;
    let labels: Vec<usize> = data.clips.iter().map(|c| c.label).collect();
    let ev = evaluate(&model, &inputs, &labels)?;
    println!(
        "accuracy {:.4} loss {:.4} on {} clips",
        ev.accuracy,
        ev.loss,
        labels.len()
    );
    if let Some(out) = s.out() {
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        let path = out.join("eval.json");
        let summary = serde_json::json!({
            "checkpoint": a.checkpoint.display().to_string(),
            "manifest": manifest.display().to_string(),
            "clips": labels.len(),
            "accuracy": ev.accuracy,
            "loss": ev.loss,
            "peak_bytes": ev.peak_bytes,
        });
        fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holdout_rounds_and_partitions() {
        let (train, test) = holdout(10, 0.25, 3).unwrap();
        assert_eq!((train.len(), test.len()), (7, 3));
        let mut all = [train, test].concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(holdout(2, 0.01, 0).unwrap().1.len(), 1);
        assert!(holdout(10, 1.0, 0).is_err());
    }
}
