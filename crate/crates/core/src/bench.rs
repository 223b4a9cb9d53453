//! Sequence-length scaling: forward and backward time plus tracked peak
//! activation bytes of each variant as the token count grows.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::frontend::FrontendKind;
use crate::memory::MemoryTracker;
use crate::model::{Model, ModelConfig, Variant};
use crate::rng::indexed;
use crate::tensor::{Real, Tensor};

pub const GIB: usize = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    BudgetExceeded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingRecord {
    pub variant: Variant,
    pub frontend: FrontendKind,
    pub length: usize,
    /// Median over the timed repeats; `None` when the budget was exceeded.
    pub forward_ms: Option<f64>,
    pub backward_ms: Option<f64>,
    pub peak_bytes: Option<usize>,
    pub outcome: Outcome,
}

impl ScalingRecord {
    pub fn total_ms(&self) -> Option<f64> {
        Some(self.forward_ms? + self.backward_ms?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_classes: usize,
    pub frontend: FrontendKind,
    pub repeats: usize,
    pub warmup: usize,
    /// Logical activation budget per forward and backward pass.
    pub budget_bytes: Option<usize>,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            d_model: 256,
            n_layers: 6,
            n_classes: 50,
            frontend: FrontendKind::Raw,
            repeats: 5,
            warmup: 1,
            budget_bytes: Some(4 * GIB),
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn model_config(&self, variant: Variant) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            d_model: self.d_model,
            variant,
            n_classes: self.n_classes,
            frontend: self.frontend,
            ..ModelConfig::default()
        }
    }
}

/// One pass's measurements, or `None` if the budget was exceeded.
pub struct Measurement {
    pub forward_ms: f64,
    pub backward_ms: f64,
    pub tracker: MemoryTracker,
}

/// Random tokens `[L x d]` for length `l`; identical for every variant.
pub fn random_tokens<T: Real>(seed: u64, l: usize, d: usize) -> Tensor<T> {
    let mut rng = indexed(seed, "data", l as u64);
    Tensor::from_fn(vec![l, d], |_| T::of(StandardNormal.sample(&mut rng)))
}

/// One forward and backward pass over `tokens` with a cross-entropy loss
/// on class 0.
pub fn measure_once<T: Real>(
    model: &Model<T>,
    tokens: &Tensor<T>,
    budget: Option<usize>,
    log: bool,
) -> Result<Option<Measurement>> {
    let mut tracker = MemoryTracker::new(budget);
    if log {
        tracker = tracker.with_log();
    }
    let mut tape = Tape::with_tracker(tracker);
    let bind = model.store.bind(&mut tape);
    let mut target = vec![T::zero(); model.cfg.n_classes];
    target[0] = T::one();
    let t0 = Instant::now();
    let forward = (|| {
        let x = tape.constant(tokens.clone())?;
        let logits = model.forward_tokens(&mut tape, &bind, x)?;
        tape.soft_cross_entropy(logits, &target)
    })();
    let loss = match forward {
        Ok(loss) => loss,
        Err(Error::Feasibility { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let forward_ms = t0.elapsed().as_secs_f64() * 1e3;
    let t1 = Instant::now();
    match tape.backward(loss) {
        Ok(_) => {}
        Err(Error::Feasibility { .. }) => return Ok(None),
        Err(e) => return Err(e),
    }
    let backward_ms = t1.elapsed().as_secs_f64() * 1e3;
    Ok(Some(Measurement {
        forward_ms,
        backward_ms,
        tracker: tape.memory().clone(),
    }))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Measures `variant` at every length in `lengths` (ascending). Exceeding
/// the budget is recorded as an outcome, not returned as an error.
pub fn measure_scaling<T: Real>(
    variant: Variant,
    lengths: &[usize],
    cfg: &BenchConfig,
) -> Result<Vec<ScalingRecord>> {
    if lengths.windows(2).any(|w| w[0] > w[1]) || lengths.contains(&0) {
        return Err(Error::Config(format!(
            "lengths must be positive and ascending, got {lengths:?}"
        )));
    }
    if cfg.repeats == 0 {
        return Err(Error::Config("repeats must be positive".into()));
    }
    let model = Model::<T>::build(&cfg.model_config(variant), cfg.seed)?;
    let mut out = Vec::with_capacity(lengths.len());
    for &l in lengths {
        let tokens = random_tokens::<T>(cfg.seed, l, cfg.d_model);
        let mut record = ScalingRecord {
            variant,
            frontend: cfg.frontend,
            length: l,
            forward_ms: None,
            backward_ms: None,
            peak_bytes: None,
            outcome: Outcome::BudgetExceeded,
        };
        let (mut fwd, mut bwd) = (Vec::new(), Vec::new());
        for i in 0..cfg.warmup + cfg.repeats {
            let Some(m) = measure_once(&model, &tokens, cfg.budget_bytes, false)? else {
                break;
            };
            let peak = m.tracker.peak();
            if record.peak_bytes.is_some_and(|p| p != peak) {
                return Err(Error::Data(format!(
                    "peak bytes changed between repeats at L={l}"
                )));
            }
            record.peak_bytes = Some(peak);
            if i >= cfg.warmup {
                fwd.push(m.forward_ms);
                bwd.push(m.backward_ms);
            }
        }
        if record.peak_bytes.is_some() {
            record.forward_ms = Some(median(fwd));
            record.backward_ms = Some(median(bwd));
            record.outcome = Outcome::Ok;
        }
        out.push(record);
    }
    Ok(out)
}

/// Power law `bytes = exp(intercept) * L^exponent` fitted in log-log space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingFit {
    pub variant: Variant,
    pub frontend: FrontendKind,
    pub exponent: f64,
    pub intercept: f64,
    pub points: usize,
}

impl ScalingFit {
    pub fn project_bytes(&self, l: usize) -> f64 {
        (self.intercept + self.exponent * (l as f64).ln()).exp()
    }
}

/// Least-squares slope of `ln(peak_bytes)` against `ln(L)` over the `ok`
/// records of each (variant, frontend) pair, in first-seen order.
pub fn fit_scaling_exponent(records: &[ScalingRecord]) -> Result<Vec<ScalingFit>> {
    let mut keys: Vec<(Variant, FrontendKind)> = Vec::new();
    for r in records {
        if !keys.contains(&(r.variant, r.frontend)) {
            keys.push((r.variant, r.frontend));
        }
    }
    keys.into_iter()
        .map(|(variant, frontend)| {
            let pts: Vec<(f64, f64)> = records
                .iter()
                .filter(|r| {
                    r.variant == variant && r.frontend == frontend && r.outcome == Outcome::Ok
                })
                .filter_map(|r| Some(((r.length as f64).ln(), (r.peak_bytes? as f64).ln())))
                .collect();
            let mut distinct: Vec<f64> = pts.iter().map(|p| p.0).collect();
            distinct.dedup();
            if distinct.len() < 3 {
                return Err(Error::Data(format!(
                    "{variant}/{frontend}: need at least 3 ok records at distinct lengths, have {}",
                    distinct.len()
                )));
            }
            let n = pts.len() as f64;
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
            let exponent = sxy / sxx;
            Ok(ScalingFit {
                variant,
                frontend,
                exponent,
                intercept: my - exponent * mx,
                points: pts.len(),
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    variant: String,
    frontend: String,
    #[serde(rename = "L")]
    length: usize,
    forward_ms: Option<f64>,
    backward_ms: Option<f64>,
    peak_bytes: Option<usize>,
    outcome: Outcome,
}

/// Table cell of a record: `exceeded`, `slow` when forward plus backward
/// time is more than twice pure Mamba's at the same length and frontend,
/// otherwise `ok`.
pub fn feasibility_mark(r: &ScalingRecord, records: &[ScalingRecord]) -> &'static str {
    if r.outcome == Outcome::BudgetExceeded {
        return "exceeded";
    }
    let base = records
        .iter()
        .find(|b| {
            b.variant == Variant::PureMamba && b.frontend == r.frontend && b.length == r.length
        })
        .and_then(ScalingRecord::total_ms);
    match (r.total_ms(), base) {
        (Some(t), Some(b)) if t > 2.0 * b => "slow",
        _ => "ok",
    }
}

/// Text table with one row per (variant, frontend) and one column per L.
pub fn render_scaling_table(records: &[ScalingRecord]) -> String {
    let mut lengths: Vec<usize> = records.iter().map(|r| r.length).collect();
    lengths.sort_unstable();
    lengths.dedup();
    let mut rows: Vec<(Variant, FrontendKind)> = Vec::new();
    for r in records {
        if !rows.contains(&(r.variant, r.frontend)) {
            rows.push((r.variant, r.frontend));
        }
    }
    let mut s = format!("{:<28}", "variant/frontend");
    for l in &lengths {
        let _ = write!(s, "{:>10}", format!("L={l}"));
    }
    s.push('\n');
    for (v, f) in rows {
        let _ = write!(s, "{:<28}", format!("{v}/{f}"));
        for &l in &lengths {
            let cell = records
                .iter()
                .find(|r| r.variant == v && r.frontend == f && r.length == l)
                .map_or("-", |r| feasibility_mark(r, records));
            let _ = write!(s, "{cell:>10}");
        }
        s.push('\n');
    }
    s
}

/// Writes the CSV to `path` and the feasibility table next to it with a
/// `.txt` extension. Returns the table.
pub fn emit_scaling_report(records: &[ScalingRecord], path: &Path) -> Result<String> {
    let csv_err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            kind => Error::Data(format!("{}: {kind:?}", path.display())),
        })?;
    w.write_record([
        "variant",
        "frontend",
        "L",
        "forward_ms",
        "backward_ms",
        "peak_bytes",
        "outcome",
    ])
    .map_err(csv_err)?;
    for r in records {
        w.serialize(CsvRow {
            variant: r.variant.to_string(),
            frontend: r.frontend.to_string(),
            length: r.length,
            forward_ms: r.forward_ms,
            backward_ms: r.backward_ms,
            peak_bytes: r.peak_bytes,
            outcome: r.outcome,
        })
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let table = render_scaling_table(records);
    let txt = path.with_extension("txt");
    std::fs::write(&txt, &table).map_err(|e| Error::io(&txt, e))?;
    Ok(table)
}

pub fn read_scaling_csv(path: &Path) -> Result<Vec<ScalingRecord>> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    rdr.deserialize()
        .map(|row| {
            let row: CsvRow = row.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            Ok(ScalingRecord {
                variant: row.variant.parse()?,
                frontend: row.frontend.parse()?,
                length: row.length,
                forward_ms: row.forward_ms,
                backward_ms: row.backward_ms,
                peak_bytes: row.peak_bytes,
                outcome: row.outcome,
            })
        })
        .collect()
}
