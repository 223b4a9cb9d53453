use std::fmt;
use std::str::FromStr;

use crate::backbone::{LayerKind, SSMConfig};
use crate::error::{Error, Result};
use crate::frontend::FrontendKind;
use crate::kv::KeyValues;

/// Backbone family. `Hybrid` is the mostly-SSM stack with a single
/// attention layer in the middle (accepted on the command line as `helix`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    PureMamba,
    Hybrid,
    PureAttention,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::PureMamba, Variant::Hybrid, Variant::PureAttention];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::PureMamba => "pure_mamba",
            Variant::Hybrid => "helix",
            Variant::PureAttention => "pure_attention",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pure_mamba" | "mamba" => Ok(Variant::PureMamba),
            "helix" | "hybrid" => Ok(Variant::Hybrid),
            "pure_attention" | "attention" | "transformer" => Ok(Variant::PureAttention),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (expected pure_mamba, helix or pure_attention)"
            ))),
        }
    }
}

/// How many leading tokens the classification head averages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolK {
    All,
    FirstK(usize),
}

impl PoolK {
    pub fn resolve(self, len: usize) -> Result<usize> {
        match self {
            PoolK::All => Ok(len),
            PoolK::FirstK(k) if k >= 1 && k <= len => Ok(k),
            PoolK::FirstK(k) => Err(Error::Pooling { k, len }),
        }
    }
}

impl fmt::Display for PoolK {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PoolK::All => f.write_str("all"),
            PoolK::FirstK(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for PoolK {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(PoolK::All);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(PoolK::FirstK(k)),
            _ => Err(Error::Config(format!(
                "pool_k must be `all` or a positive integer, got '{s}'"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub variant: Variant,
    /// Zero-based position of the attention layer in the hybrid stack.
    /// Defaults to `n_layers / 2`.
    pub attention_index: Option<usize>,
    pub frontend: FrontendKind,
    pub n_classes: usize,
    pub pool: PoolK,
    pub heads: usize,
    pub d_state: usize,
    pub d_conv: usize,
    pub expand: usize,
    pub positional_encoding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 6,
            d_model: 256,
            variant: Variant::Hybrid,
            attention_index: None,
            frontend: FrontendKind::Raw,
            n_classes: 50,
            pool: PoolK::All,
            heads: 4,
            d_state: 32,
            d_conv: 4,
            expand: 2,
            positional_encoding: false,
        }
    }
}

pub const MODEL_KEYS: [&str; 12] = [
    "n_layers",
    "d_model",
    "variant",
    "attention_index",
    "frontend",
    "n_classes",
    "pool_k",
    "heads",
    "d_state",
    "d_conv",
    "expand",
    "positional_encoding",
];

impl ModelConfig {
    pub fn ssm(&self) -> SSMConfig {
        SSMConfig {
            d_model: self.d_model,
            d_state: self.d_state,
            d_conv: self.d_conv,
            expand: self.expand,
        }
    }

    pub fn attention_index(&self) -> usize {
        self.attention_index.unwrap_or(self.n_layers / 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.d_model == 0 || self.n_classes == 0 {
            return Err(Error::Config(
                "n_layers, d_model and n_classes must be positive".into(),
            ));
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        self.ssm().validate()?;
        match (self.variant, self.attention_index) {
            (Variant::Hybrid, _) if self.attention_index() >= self.n_layers => {
                Err(Error::Config(format!(
                    "attention_index {} outside a {}-layer stack",
                    self.attention_index(),
                    self.n_layers
                )))
            }
            (Variant::PureMamba | Variant::PureAttention, Some(i)) => Err(Error::Config(format!(
                "attention_index {i} only applies to the helix variant"
            ))),
            _ => Ok(()),
        }
    }

    pub fn layout(&self) -> Vec<LayerKind> {
        (0..self.n_layers)
            .map(|i| match self.variant {
                Variant::PureMamba => LayerKind::Mamba,
                Variant::PureAttention => LayerKind::Attention,
                Variant::Hybrid if i == self.attention_index() => LayerKind::Attention,
                Variant::Hybrid => LayerKind::Mamba,
            })
            .collect()
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("n_layers", self.n_layers);
        kv.set("d_model", self.d_model);
        kv.set("variant", self.variant);
        if let Some(i) = self.attention_index {
            kv.set("attention_index", i);
        }
        kv.set("frontend", self.frontend);
        kv.set("n_classes", self.n_classes);
        kv.set("pool_k", self.pool);
        kv.set("heads", self.heads);
        kv.set("d_state", self.d_state);
        kv.set("d_conv", self.d_conv);
        kv.set("expand", self.expand);
        kv.set("positional_encoding", self.positional_encoding);
        kv
    }

    /// Applies the model keys present in `kv` on top of `self`.
    pub fn apply_kv(mut self, kv: &KeyValues) -> Result<Self> {
        macro_rules! take {
            ($field:ident, $key:literal) => {
                if let Some(v) = kv.get_parsed($key)? {
                    self.$field = v;
                }
            };
        }
        take!(n_layers, "n_layers");
        take!(d_model, "d_model");
        take!(variant, "variant");
        if let Some(i) = kv.get_parsed::<usize>("attention_index")? {
            self.attention_index = Some(i);
        }
        take!(frontend, "frontend");
        take!(n_classes, "n_classes");
        take!(pool, "pool_k");
        take!(heads, "heads");
        take!(d_state, "d_state");
        take!(d_conv, "d_conv");
        take!(expand, "expand");
        take!(positional_encoding, "positional_encoding");
        Ok(self)
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let cfg = ModelConfig::default().apply_kv(kv)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
