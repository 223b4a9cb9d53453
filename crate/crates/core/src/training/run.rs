//! The epoch loop, run directories and cross-validation.
//!
//! A run directory holds `metrics.jsonl` (one record per epoch and split),
//! `best/` (the checkpoint with the highest held-out accuracy so far),
//! `last/` (checkpoint, optimizer moments and loop state for resuming) and
//! `summary.json` once the run ends.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::augment::{
    augment, mix_inputs, mix_targets, mix_waveforms, mixup_lambda, mixup_pairing, one_hot,
};
use super::optim::{adamw_step, clip_grad_norm, cosine_lr, OptimizerState};
use super::{MixupDomain, TrainConfig};
use crate::autodiff::log_sum_exp;
use crate::autodiff::Tape;
use crate::data::{Dataset, FoldAssignment};
use crate::error::{Error, Result};
use crate::frontend::{FrontendInput, Waveform};
use crate::kv::KeyValues;
use crate::model::{
    argmax, load_checkpoint, read_tensors, save_checkpoint, write_tensors, Model, ModelConfig,
};
use crate::rng::indexed;
use crate::tensor::{Real, Tensor};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
const STATE_FILE: &str = "state.txt";
const OPT_BIN: &str = "optimizer.bin";
const OPT_MANIFEST: &str = "optimizer.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
    /// Mean pre-clip gradient norm over the epoch's steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_norm: Option<f64>,
    /// Seconds since the run started, resumed segments included.
    pub wall_s: f64,
    /// Largest activation footprint of a single example's tape.
    pub peak_bytes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    TargetAccuracy,
    TimeBudget,
    Interrupted,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::Completed => "completed",
            StopReason::TargetAccuracy => "target_accuracy",
            StopReason::TimeBudget => "time_budget",
            StopReason::Interrupted => "interrupted",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_planned: usize,
    pub epochs_completed: usize,
    pub best_accuracy: f64,
    pub best_epoch: usize,
    pub final_accuracy: f64,
    pub final_loss: f64,
    pub stop: StopReason,
    #[serde(skip)]
    pub records: Vec<MetricsRecord>,
}

/// Held-out loss and accuracy without gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub peak_bytes: usize,
}

pub fn evaluate<T: Real>(
    model: &Model<T>,
    inputs: &[FrontendInput],
    labels: &[usize],
) -> Result<Evaluation> {
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} inputs for {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    let (mut loss, mut hits, mut peak) = (0.0, 0, 0);
    for (x, &y) in inputs.iter().zip(labels) {
        let mut tape = Tape::new();
        let bind = model.store.bind(&mut tape);
        let z = model.forward(&mut tape, &bind, x)?;
        let logits: Vec<f64> = tape.value(z).data().iter().map(|v| v.f64()).collect();
        loss += log_sum_exp(&logits) - logits[y];
        hits += usize::from(argmax(&logits) == y);
        peak = peak.max(tape.memory().peak());
    }
    Ok(Evaluation {
        loss: loss / inputs.len() as f64,
        accuracy: hits as f64 / inputs.len() as f64,
        peak_bytes: peak,
    })
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn make_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Drives training of one model on one train/test split.
pub struct Trainer<'a, T: Real> {
    pub model: Model<T>,
    pub opt: OptimizerState<T>,
    pub cfg: TrainConfig,
    train: &'a Dataset,
    test_inputs: Vec<FrontendInput>,
    test_labels: Vec<usize>,
    /// Frontend inputs of the training set when augmentation is off.
    train_cache: Option<Vec<FrontendInput>>,
    out: Option<PathBuf>,
    next_epoch: usize,
    best: Option<(f64, usize)>,
    records: Vec<MetricsRecord>,
    stop_flag: Option<Arc<AtomicBool>>,
    started: Instant,
    elapsed_before: f64,
}

impl<'a, T: Real> Trainer<'a, T> {
    /// A fresh model initialized from the `init` stream of `cfg.seed`.
    pub fn new(
        model_cfg: &ModelConfig,
        cfg: TrainConfig,
        train: &'a Dataset,
        test: &Dataset,
    ) -> Result<Self> {
        let model = Model::build(model_cfg, cfg.seed)?;
        Self::with_model(model, cfg, train, test)
    }

    pub fn with_model(
        model: Model<T>,
        cfg: TrainConfig,
        train: &'a Dataset,
        test: &Dataset,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = model.cfg.n_classes;
        for (name, ds) in [("train", train), ("test", test)] {
            if ds.is_empty() {
                return Err(Error::Data(format!("{name} split is empty")));
            }
            if ds.n_classes > n {
                return Err(Error::Config(format!(
                    "{name} split has {} classes, model has {n}",
                    ds.n_classes
                )));
            }
        }
        let test_inputs = test
            .clips
            .iter()
            .map(|c| model.prepare(&c.waveform))
            .collect::<Result<_>>()?;
        let train_cache = if cfg.augment {
            None
        } else {
            Some(
                train
                    .clips
                    .iter()
                    .map(|c| model.prepare(&c.waveform))
                    .collect::<Result<_>>()?,
            )
        };
        Ok(Self {
            opt: OptimizerState::new(&model.store),
            model,
            cfg,
            train,
            test_inputs,
            test_labels: test.clips.iter().map(|c| c.label).collect(),
            train_cache,
            out: None,
            next_epoch: 0,
            best: None,
            records: Vec::new(),
            stop_flag: None,
            started: Instant::now(),
            elapsed_before: 0.0,
        })
    }

    /// Writes metrics and checkpoints under `dir`, replacing earlier metrics.
    pub fn with_output(mut self, dir: &Path) -> Result<Self> {
        make_dir(dir)?;
        let metrics = dir.join(METRICS_FILE);
        fs::write(&metrics, "").map_err(|e| Error::io(&metrics, e))?;
        let config = dir.join("train_config.txt");
        fs::write(&config, self.cfg.to_kv().to_text()).map_err(|e| Error::io(&config, e))?;
        self.out = Some(dir.to_path_buf());
        Ok(self)
    }

    /// Continues the run saved in `dir` from the epoch after its last
    /// completed one.
    pub fn resume(
        dir: &Path,
        cfg: TrainConfig,
        train: &'a Dataset,
        test: &Dataset,
    ) -> Result<Self> {
        let last = dir.join("last");
        let model = load_checkpoint::<T>(&last)?;
        let mut t = Self::with_model(model, cfg, train, test)?;
        let state_path = last.join(STATE_FILE);
        let state = KeyValues::parse(
            &fs::read_to_string(&state_path).map_err(|e| Error::io(&state_path, e))?,
        )?;
        let need = |key: &str| -> Result<String> {
            state.get(key).map(str::to_string).ok_or_else(|| {
                Error::Checkpoint(format!("{}: missing `{key}`", state_path.display()))
            })
        };
        let parse_err =
            |key: &str| Error::Checkpoint(format!("{}: bad `{key}`", state_path.display()));
        t.next_epoch = need("next_epoch")?
            .parse()
            .map_err(|_| parse_err("next_epoch"))?;
        t.opt.step = need("step")?.parse().map_err(|_| parse_err("step"))?;
        t.elapsed_before = need("elapsed_s")?
            .parse()
            .map_err(|_| parse_err("elapsed_s"))?;
        if let (Some(acc), Some(ep)) = (
            state.get_parsed::<f64>("best_accuracy")?,
            state.get_parsed("best_epoch")?,
        ) {
            t.best = Some((acc, ep));
        }
        let moments = read_tensors::<T>(&last.join(OPT_BIN), &last.join(OPT_MANIFEST))?;
        let n = t.model.store.len();
        if moments.len() != 2 * n {
            return Err(Error::Checkpoint(format!(
                "{} optimizer tensors for {n} parameters",
                moments.len()
            )));
        }
        let mut moments = moments.into_iter();
        for (slot, prefix) in [(&mut t.opt.m, "m."), (&mut t.opt.v, "v.")] {
            for (i, id) in t.model.store.ids().enumerate() {
                let (name, tensor) = moments.next().expect("counted above");
                let expect = format!("{prefix}{}", t.model.store.name(id));
                if name != expect || tensor.shape() != t.model.store.get(id).shape() {
                    return Err(Error::Checkpoint(format!(
                        "optimizer entry {name} does not match {expect}"
                    )));
                }
                slot[i] = tensor;
            }
        }
        let metrics = dir.join(METRICS_FILE);
        t.records = read_metrics(&metrics)?
            .into_iter()
            .filter(|r| r.epoch < t.next_epoch)
            .collect();
        t.out = Some(dir.to_path_buf());
        t.rewrite_metrics()?;
        Ok(t)
    }

    /// Checked between epochs; setting it ends the run early.
    pub fn with_stop_flag(mut self, flag: Arc<AtomicBool>) -> Self {
        self.stop_flag = Some(flag);
        self
    }

    pub fn next_epoch(&self) -> usize {
        self.next_epoch
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    fn elapsed(&self) -> f64 {
        self.elapsed_before + self.started.elapsed().as_secs_f64()
    }

    fn rewrite_metrics(&self) -> Result<()> {
        let Some(dir) = &self.out else { return Ok(()) };
        let path = dir.join(METRICS_FILE);
        let mut text = String::new();
        for r in &self.records {
            text.push_str(&serde_json::to_string(r).map_err(|e| Error::Data(e.to_string()))?);
            text.push('\n');
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn append_metrics(&self, recs: &[MetricsRecord]) -> Result<()> {
        let Some(dir) = &self.out else { return Ok(()) };
        let path = dir.join(METRICS_FILE);
        let mut f = fs::OpenOptions::new()
            .append(true)
            .create(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        for r in recs {
            let line = serde_json::to_string(r).map_err(|e| Error::Data(e.to_string()))?;
            writeln!(f, "{line}").map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    fn save_state(&self, dir: &Path) -> Result<()> {
        let tmp = dir.join("last.tmp");
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        save_checkpoint(&self.model, &tmp)?;
        let names: Vec<String> = self
            .model
            .store
            .ids()
            .map(|id| self.model.store.name(id).to_string())
            .collect();
        let m = names.iter().map(|n| format!("m.{n}")).zip(&self.opt.m);
        let v = names.iter().map(|n| format!("v.{n}")).zip(&self.opt.v);
        let entries: Vec<(String, &Tensor<T>)> = m.chain(v).collect();
        write_tensors(
            &tmp.join(OPT_BIN),
            &tmp.join(OPT_MANIFEST),
            entries.iter().map(|(n, t)| (n.as_str(), *t)),
        )?;
        let mut state = KeyValues::new();
        state.set("next_epoch", self.next_epoch);
        state.set("step", self.opt.step);
        state.set("elapsed_s", self.elapsed());
        if let Some((acc, ep)) = self.best {
            state.set("best_accuracy", acc);
            state.set("best_epoch", ep);
        }
        let path = tmp.join(STATE_FILE);
        fs::write(&path, state.to_text()).map_err(|e| Error::io(&path, e))?;
        let last = dir.join("last");
        if last.exists() {
            fs::remove_dir_all(&last).map_err(|e| Error::io(&last, e))?;
        }
        fs::rename(&tmp, &last).map_err(|e| Error::io(&last, e))
    }

    /// Frontend inputs and soft targets for one minibatch.
    fn make_batch(
        &self,
        batch: &[usize],
        aug_rng: &mut impl Rng,
        mix_rng: &mut impl Rng,
    ) -> Result<(Vec<FrontendInput>, Vec<Vec<f64>>)> {
        let n_classes = self.model.cfg.n_classes;
        let clips: Vec<_> = batch.iter().map(|&i| &self.train.clips[i]).collect();
        let mut targets: Vec<Vec<f64>> =
            clips.iter().map(|c| one_hot(c.label, n_classes)).collect();
        let mix = (self.cfg.mixup_alpha > 0.0 && batch.len() > 1)
            .then(|| -> Result<_> {
                Ok((
                    mixup_lambda(self.cfg.mixup_alpha, mix_rng)?,
                    mixup_pairing(batch.len(), mix_rng),
                ))
            })
            .transpose()?;
        let rate = |i: usize| clips[i].waveform.sample_rate;

        let inputs: Vec<FrontendInput> =
            match (&self.train_cache, mix.clone(), self.cfg.mixup_domain) {
                (Some(cache), None, _) => batch.iter().map(|&i| cache[i].clone()).collect(),
                (Some(cache), Some((lambda, perm)), MixupDomain::Input) => (0..batch.len())
                    .map(|i| mix_inputs(&cache[batch[i]], &cache[batch[perm[i]]], lambda))
                    .collect::<Result<_>>()?,
                (_, mix, domain) => {
                    let waves: Vec<Vec<f32>> = clips
                        .iter()
                        .map(|c| {
                            if self.cfg.augment {
                                augment(
                                    &c.waveform.samples,
                                    c.waveform.sample_rate,
                                    &self.cfg.aug,
                                    aug_rng,
                                )
                            } else {
                                c.waveform.samples.clone()
                            }
                        })
                        .collect();
                    let prepare =
                        |i: usize, s: Vec<f32>| self.model.prepare(&Waveform::new(s, rate(i))?);
                    match (mix, domain) {
                        (None, _) => waves
                            .into_iter()
                            .enumerate()
                            .map(|(i, s)| prepare(i, s))
                            .collect::<Result<_>>()?,
                        (Some((lambda, perm)), MixupDomain::Waveform) => (0..batch.len())
                            .map(|i| prepare(i, mix_waveforms(&waves[i], &waves[perm[i]], lambda)?))
                            .collect::<Result<_>>()?,
                        (Some((lambda, perm)), MixupDomain::Input) => {
                            let prepared: Vec<FrontendInput> = waves
                                .into_iter()
                                .enumerate()
                                .map(|(i, s)| prepare(i, s))
                                .collect::<Result<_>>()?;
                            (0..batch.len())
                                .map(|i| mix_inputs(&prepared[i], &prepared[perm[i]], lambda))
                                .collect::<Result<_>>()?
                        }
                    }
                }
            };
        if let Some((lambda, perm)) = mix {
            let one: Vec<Vec<f64>> = targets.clone();
            targets = (0..batch.len())
                .map(|i| mix_targets(&one[i], &one[perm[i]], lambda))
                .collect();
        }
        Ok((inputs, targets))
    }

    /// One optimizer step on the mean loss of a minibatch. Returns the summed
    /// loss, the number of examples whose argmax matches the target's, the
    /// pre-clip gradient norm and the largest per-example tape peak.
    fn step(
        &mut self,
        epoch: usize,
        inputs: &[FrontendInput],
        targets: &[Vec<f64>],
        lr: f64,
    ) -> Result<(f64, usize, f64, usize)> {
        let step = self.opt.step as usize + 1;
        let diverged = |e: Error| match e {
            Error::NonFinite { .. } => Error::Divergence { epoch, step },
            e => e,
        };
        let mut grads = self.model.store.zeros_like();
        let (mut loss_sum, mut hits, mut peak) = (0.0, 0, 0);
        for (x, t) in inputs.iter().zip(targets) {
            let target: Vec<T> = t.iter().map(|&p| T::of(p)).collect();
            let mut tape = Tape::new();
            let bind = self.model.store.bind(&mut tape);
            let logits = self.model.forward(&mut tape, &bind, x).map_err(diverged)?;
            let loss = tape.soft_cross_entropy(logits, &target).map_err(diverged)?;
            let value = tape.value(loss).data()[0].f64();
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, step });
            }
            loss_sum += value;
            hits += usize::from(argmax(tape.value(logits).data()) == argmax(t));
            let g = tape.backward(loss).map_err(diverged)?;
            peak = peak.max(tape.memory().peak());
            for (acc, g) in grads.iter_mut().zip(bind.collect(&self.model.store, g)) {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + *b;
                }
            }
        }
        let inv = T::of(1.0 / inputs.len() as f64);
        for g in &mut grads {
            for v in g.data_mut() {
                *v = *v * inv;
            }
        }
        let norm = clip_grad_norm(&mut grads, self.cfg.clip_norm)
            .map_err(|_| Error::Divergence { epoch, step })?;
        adamw_step(
            &mut self.model.store,
            &grads,
            &mut self.opt,
            lr,
            &self.cfg.optimizer(),
        )?;
        Ok((loss_sum, hits, norm, peak))
    }

    /// Trains one epoch, evaluates, records metrics and saves checkpoints.
    pub fn run_epoch(&mut self) -> Result<Evaluation> {
        let epoch = self.next_epoch;
        let lr = cosine_lr(epoch, self.cfg.epochs, self.cfg.lr, self.cfg.lr_min)?;
        let seed = self.cfg.seed;
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut indexed(seed, "data", epoch as u64));
        let mut aug_rng = indexed(seed, "augment", epoch as u64);
        let mut mix_rng = indexed(seed, "mixup", epoch as u64);

        let (mut loss, mut hits, mut norms, mut peak, mut steps) = (0.0, 0, 0.0, 0, 0);
        for batch in order.chunks(self.cfg.batch_size) {
            let (inputs, targets) = self.make_batch(batch, &mut aug_rng, &mut mix_rng)?;
            let (l, h, n, p) = self.step(epoch, &inputs, &targets, lr)?;
            loss += l;
            hits += h;
            norms += n;
            peak = peak.max(p);
            steps += 1;
        }
        let n = self.train.len() as f64;
        let eval = evaluate(&self.model, &self.test_inputs, &self.test_labels)?;
        let wall_s = self.elapsed();
        let recs = [
            MetricsRecord {
                epoch,
                split: Split::Train,
                loss: loss / n,
                accuracy: hits as f64 / n,
                lr,
                grad_norm: Some(norms / steps as f64),
                wall_s,
                peak_bytes: peak,
            },
            MetricsRecord {
                epoch,
                split: Split::Test,
                loss: eval.loss,
                accuracy: eval.accuracy,
                lr,
                grad_norm: None,
                wall_s,
                peak_bytes: eval.peak_bytes,
            },
        ];
        self.append_metrics(&recs)?;
        self.records.extend(recs);
        self.next_epoch += 1;
        let improved = self.best.is_none_or(|(acc, _)| eval.accuracy > acc);
        if improved {
            self.best = Some((eval.accuracy, epoch));
        }
        if let Some(dir) = self.out.clone() {
            if improved {
                let best = dir.join("best");
                if best.exists() {
                    fs::remove_dir_all(&best).map_err(|e| Error::io(&best, e))?;
                }
                save_checkpoint(&self.model, &best)?;
            }
            self.save_state(&dir)?;
        }
        Ok(eval)
    }

    /// Runs up to `max_epochs` more epochs, stopping at the end of the
    /// schedule or when a stop condition fires.
    pub fn run_epochs(&mut self, max_epochs: usize) -> Result<TrainReport> {
        let mut stop = StopReason::Completed;
        let mut ran = 0;
        while self.next_epoch < self.cfg.epochs && ran < max_epochs {
            let eval = self.run_epoch()?;
            ran += 1;
            if self.cfg.target_accuracy.is_some_and(|t| eval.accuracy >= t) {
                stop = StopReason::TargetAccuracy;
            } else if self.cfg.time_budget_s.is_some_and(|b| self.elapsed() >= b) {
                stop = StopReason::TimeBudget;
            } else if self
                .stop_flag
                .as_ref()
                .is_some_and(|f| f.load(Ordering::Relaxed))
            {
                stop = StopReason::Interrupted;
            }
            if stop != StopReason::Completed {
                break;
            }
        }
        let report = self.report(stop);
        if let Some(dir) = &self.out {
            write_json(&dir.join(SUMMARY_FILE), &report)?;
        }
        Ok(report)
    }

    pub fn run(&mut self) -> Result<TrainReport> {
        self.run_epochs(usize::MAX)
    }

    fn report(&self, stop: StopReason) -> TrainReport {
        let last_test = self.records.iter().rev().find(|r| r.split == Split::Test);
        let (best_accuracy, best_epoch) = self.best.unwrap_or((f64::NAN, 0));
        TrainReport {
            epochs_planned: self.cfg.epochs,
            epochs_completed: self.next_epoch,
            best_accuracy,
            best_epoch,
            final_accuracy: last_test.map_or(f64::NAN, |r| r.accuracy),
            final_loss: last_test.map_or(f64::NAN, |r| r.loss),
            stop,
            records: self.records.clone(),
        }
    }
}

/// Trains a fresh model and evaluates it on `test` after every epoch.
pub fn train_run<T: Real>(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    out: Option<&Path>,
) -> Result<TrainReport> {
    let mut t = Trainer::<T>::new(model_cfg, cfg.clone(), train, test)?;
    if let Some(dir) = out {
        t = t.with_output(dir)?;
    }
    t.run()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    /// Final-epoch held-out accuracy of each fold.
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation across folds.
    pub std: f64,
    pub folds: Vec<TrainReport>,
}

/// Mean and population standard deviation.
pub fn summarize_folds(acc: &[f64]) -> (f64, f64) {
    let n = acc.len() as f64;
    let mean = acc.iter().sum::<f64>() / n;
    let var = acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Trains one fresh model per fold, holding that fold out. Fold `k` writes
/// to `out/fold{k}` when `out` is given.
pub fn cross_validate<T: Real>(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    data: &Dataset,
    folds: &FoldAssignment,
    out: Option<&Path>,
) -> Result<CvReport> {
    if folds.folds.len() != data.len() {
        return Err(Error::Data(format!(
            "fold assignment covers {} clips, dataset has {}",
            folds.folds.len(),
            data.len()
        )));
    }
    if folds.n_folds < 2 {
        return Err(Error::Config(
            "cross-validation needs at least 2 folds".into(),
        ));
    }
    let mut reports = Vec::with_capacity(folds.n_folds);
    for k in 0..folds.n_folds {
        let (train_idx, test_idx) = folds.split(k);
        let (train, test) = (data.subset(&train_idx), data.subset(&test_idx));
        let dir = out.map(|o| o.join(format!("fold{k}")));
        reports.push(train_run::<T>(
            model_cfg,
            cfg,
            &train,
            &test,
            dir.as_deref(),
        )?);
    }
    let fold_accuracies: Vec<f64> = reports.iter().map(|r| r.final_accuracy).collect();
    let (mean, std) = summarize_folds(&fold_accuracies);
    let report = CvReport {
        fold_accuracies,
        mean,
        std,
        folds: reports,
    };
    if let Some(o) = out {
        write_json(&o.join("cv_summary.json"), &report)?;
    }
    Ok(report)
}
