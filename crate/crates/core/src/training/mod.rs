//! Optimization, augmentation, the epoch loop and cross-validation.

mod augment;
mod optim;
mod run;

pub use augment::{
    augment, mix_inputs, mix_targets, mix_waveforms, mixup_lambda, mixup_pairing, one_hot,
    shift_circular, AugmentConfig, MixupDomain,
};
pub use optim::{adamw_step, clip_grad_norm, cosine_lr, global_norm, AdamW, OptimizerState};
pub use run::{
    cross_validate, evaluate, read_metrics, summarize_folds, train_run, CvReport, Evaluation,
    MetricsRecord, Split, StopReason, TrainReport, Trainer,
};

use crate::error::{Error, Result};
use crate::kv::KeyValues;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// `0` disables mixup.
    pub mixup_alpha: f64,
    pub mixup_domain: MixupDomain,
    pub augment: bool,
    pub aug: AugmentConfig,
    /// Stop once held-out accuracy reaches this value.
    pub target_accuracy: Option<f64>,
    /// Stop after the first epoch that ends past this many seconds.
    pub time_budget_s: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            lr: 3e-4,
            lr_min: 1e-6,
            weight_decay: 0.05,
            clip_norm: 1.0,
            mixup_alpha: 0.3,
            mixup_domain: MixupDomain::Input,
            augment: true,
            aug: AugmentConfig::default(),
            target_accuracy: None,
            time_budget_s: None,
            seed: 0,
        }
    }
}

pub const TRAIN_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "lr",
    "lr_min",
    "weight_decay",
    "clip_norm",
    "mixup_alpha",
    "mixup_domain",
    "augment",
    "shift_s",
    "gain_min",
    "gain_max",
    "noise_std",
    "target_accuracy",
    "time_budget_s",
    "seed",
];

impl TrainConfig {
    pub fn optimizer(&self) -> AdamW {
        AdamW {
            weight_decay: self.weight_decay,
            ..AdamW::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr) {
            return bad(format!(
                "need 0 <= lr_min <= lr and lr > 0, got lr {} lr_min {}",
                self.lr, self.lr_min
            ));
        }
        if !(self.weight_decay >= 0.0 && self.clip_norm > 0.0 && self.mixup_alpha >= 0.0) {
            return bad(
                "weight_decay and mixup_alpha must be non-negative, clip_norm positive".into(),
            );
        }
        if self.aug.gain_min > self.aug.gain_max
            || self.aug.shift_s < 0.0
            || self.aug.noise_std < 0.0
        {
            return bad(format!("invalid augmentation settings {:?}", self.aug));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("lr", self.lr);
        kv.set("lr_min", self.lr_min);
        kv.set("weight_decay", self.weight_decay);
        kv.set("clip_norm", self.clip_norm);
        kv.set("mixup_alpha", self.mixup_alpha);
        kv.set("mixup_domain", self.mixup_domain);
        kv.set("augment", self.augment);
        kv.set("shift_s", self.aug.shift_s);
        kv.set("gain_min", self.aug.gain_min);
        kv.set("gain_max", self.aug.gain_max);
        kv.set("noise_std", self.aug.noise_std);
        if let Some(t) = self.target_accuracy {
            kv.set("target_accuracy", t);
        }
        if let Some(t) = self.time_budget_s {
            kv.set("time_budget_s", t);
        }
        kv.set("seed", self.seed);
        kv
    }

    /// Applies the training keys present in `kv` on top of `self`.
    pub fn apply_kv(mut self, kv: &KeyValues) -> Result<Self> {
        macro_rules! take {
            ($($field:ident).+, $key:literal) => {
                if let Some(v) = kv.get_parsed($key)? {
                    self.$($field).+ = v;
                }
            };
        }
        take!(epochs, "epochs");
        take!(batch_size, "batch_size");
        take!(lr, "lr");
        take!(lr_min, "lr_min");
        take!(weight_decay, "weight_decay");
        take!(clip_norm, "clip_norm");
        take!(mixup_alpha, "mixup_alpha");
        take!(mixup_domain, "mixup_domain");
        take!(augment, "augment");
        take!(aug.shift_s, "shift_s");
        take!(aug.gain_min, "gain_min");
        take!(aug.gain_max, "gain_max");
        take!(aug.noise_std, "noise_std");
        if let Some(v) = kv.get_parsed("target_accuracy")? {
            self.target_accuracy = Some(v);
        }
        if let Some(v) = kv.get_parsed("time_budget_s")? {
            self.time_budget_s = Some(v);
        }
        take!(seed, "seed");
        Ok(self)
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let cfg = TrainConfig::default().apply_kv(kv)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests;
