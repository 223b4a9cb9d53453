use std::fmt::Write as _;
use std::fs;
use std::process::ExitCode;

use anyhow::Context;
use audioseq::backbone::{attention_params, bimamba_params, solve_ffn_width, LayerKind};
use audioseq::bench::{
    emit_scaling_report, fit_scaling_exponent, measure_scaling, BenchConfig, ScalingRecord, GIB,
};
use audioseq::frontend::FrontendKind;
use audioseq::gradcheck::{check_block, Block};
use audioseq::kv::KeyValues;
use audioseq::model::{Model, ModelConfig, Variant};
use audioseq::Real;
use clap::Args;

use crate::settings::{set_opt, Settings};

#[derive(Args)]
pub struct ParamReportArgs {
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    /// Print CSV instead of a table.
    #[arg(long)]
    csv: bool,
}

impl ParamReportArgs {
    pub fn flags(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        set_opt(&mut kv, "d_model", self.d_model);
        set_opt(&mut kv, "n_layers", self.layers);
        set_opt(&mut kv, "n_classes", self.classes);
        kv
    }
}

struct LayerRow {
    variant: Variant,
    frontend: FrontendKind,
    layer: usize,
    kind: LayerKind,
    params: usize,
    deficit: i64,
    total: usize,
}

fn kind_name(kind: LayerKind) -> &'static str {
    match kind {
        LayerKind::Mamba => "bimamba",
        LayerKind::Attention => "attention",
    }
}

/// `1234567` as `1,234,567`.
fn grouped(n: impl ToString) -> String {
    let s = n.to_string();
    let (sign, digits) = s.split_at(usize::from(s.starts_with('-')));
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    format!("{sign}{out}")
}

pub fn param_report(s: &Settings, a: &ParamReportArgs) -> anyhow::Result<ExitCode> {
    let base = ModelConfig::default().apply_kv(s.kv())?;
    let d = base.d_model;
    let p_mamba = bimamba_params(&base.ssm());
    let budget = solve_ffn_width(p_mamba, d)?;
    let p_attention = attention_params(d, budget.d_ffn);
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        for frontend in FrontendKind::ALL {
            let cfg = ModelConfig {
                variant,
                frontend,
                attention_index: base.attention_index.filter(|_| variant == Variant::Hybrid),
                ..base.clone()
            };
            let model = Model::<f32>::build(&cfg, s.seed()?)?;
            let total = model.total_params();
            for (layer, (kind, params)) in model
                .layout()
                .into_iter()
                .zip(model.layer_params())
                .enumerate()
            {
                let closed = match kind {
                    LayerKind::Mamba => p_mamba,
                    LayerKind::Attention => p_attention,
                };
                anyhow::ensure!(
                    params == closed,
                    "{variant}/{frontend} layer {layer} has {params} parameters, the closed form gives {closed}"
                );
                rows.push(LayerRow {
                    variant,
                    frontend,
                    layer,
                    kind,
                    params,
                    deficit: p_mamba as i64 - params as i64,
                    total,
                });
            }
        }
    }

    let mut text = String::new();
    if a.csv {
        text.push_str("variant,frontend,layer,kind,params,d_ffn,p_mha,p_norms,deficit,total\n");
        for r in &rows {
            let _ = writeln!(
                text,
                "{},{},{},{},{},{},{},{},{},{}",
                r.variant,
                r.frontend,
                r.layer,
                kind_name(r.kind),
                r.params,
                budget.d_ffn,
                budget.p_mha,
                budget.p_norms,
                r.deficit,
                r.total
            );
        }
    } else {
        let _ = writeln!(
            text,
            "d_model {d}, {} layers, {} classes",
            base.n_layers, base.n_classes
        );
        let _ = writeln!(text, "P_mamba  {:>12}", grouped(p_mamba));
        let _ = writeln!(text, "P_MHA    {:>12}", grouped(budget.p_mha));
        let _ = writeln!(text, "P_norms  {:>12}", grouped(budget.p_norms));
        let _ = writeln!(
            text,
            "d_ffn    {:>12}  (attention layer {}, deficit {}, bound {})",
            grouped(budget.d_ffn),
            grouped(p_attention),
            budget.deficit(d),
            3 * d + 1
        );
        let _ = writeln!(
            text,
            "\n{:<16}{:<13}{:>6}  {:<11}{:>12}{:>9}{:>12}",
            "variant", "frontend", "layer", "kind", "params", "deficit", "total"
        );
        for r in &rows {
            let _ = writeln!(
                text,
                "{:<16}{:<13}{:>6}  {:<11}{:>12}{:>9}{:>12}",
                r.variant.to_string(),
                r.frontend.to_string(),
                r.layer,
                kind_name(r.kind),
                grouped(r.params),
                r.deficit,
                grouped(r.total)
            );
        }
        let totals: Vec<usize> = rows.iter().map(|r| r.total).collect();
        let (lo, hi) = (totals.iter().min().copied(), totals.iter().max().copied());
        if let (Some(lo), Some(hi)) = (lo, hi) {
            let _ = writeln!(
                text,
                "\ntotals from {} to {} (spread {:.2}%)",
                grouped(lo),
                grouped(hi),
                100.0 * (hi - lo) as f64 / lo as f64
            );
        }
    }
    print!("{text}");
    if let Some(out) = s.out() {
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        let path = out.join(if a.csv {
            "param_report.csv"
        } else {
            "param_report.txt"
        });
        fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct BenchArgs {
    /// Ascending sequence lengths in tokens.
    #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048")]
    lengths: Vec<usize>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "pure_mamba,helix,pure_attention"
    )]
    variants: Vec<String>,
    /// Timed passes per length; the median is reported.
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    /// Logical activation budget; 0 disables it.
    #[arg(long, default_value_t = 4.0)]
    budget_gib: f64,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    frontend: Option<String>,
    /// Length at which to project the fitted memory curve.
    #[arg(long, default_value_t = 30_000)]
    project_to: usize,
}

impl BenchArgs {
    pub fn flags(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        set_opt(&mut kv, "d_model", self.d_model);
        set_opt(&mut kv, "n_layers", self.layers);
        set_opt(&mut kv, "frontend", self.frontend.as_ref());
        kv
    }
}

pub fn bench_scaling(s: &Settings, a: &BenchArgs) -> anyhow::Result<ExitCode> {
    with_precision!(s, bench_with(s, a))
}

fn bench_with<T: Real>(s: &Settings, a: &BenchArgs) -> anyhow::Result<ExitCode> {
    let kv = s.kv();
    let defaults = BenchConfig::default();
    let cfg = BenchConfig {
        d_model: kv.get_parsed("d_model")?.unwrap_or(defaults.d_model),
        n_layers: kv.get_parsed("n_layers")?.unwrap_or(defaults.n_layers),
        frontend: kv.get_parsed("frontend")?.unwrap_or(defaults.frontend),
        repeats: a.repeats,
        warmup: a.warmup,
        budget_bytes: (a.budget_gib > 0.0).then_some((a.budget_gib * GIB as f64) as usize),
        seed: s.seed()?,
        ..defaults
    };
    let variants = a
        .variants
        .iter()
        .map(|v| v.parse::<Variant>())
        .collect::<audioseq::Result<Vec<_>>>()?;
    let mut records: Vec<ScalingRecord> = Vec::new();
    for v in variants {
        eprintln!("measuring {v} at L = {:?}", a.lengths);
        records.extend(measure_scaling::<T>(v, &a.lengths, &cfg)?);
    }
    let out = s.out_or("bench");
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join("scaling.csv");
    let table = emit_scaling_report(&records, &path)?;
    print!("{table}");
    match fit_scaling_exponent(&records) {
        Ok(fits) => {
            for f in fits {
                println!(
                    "{}/{}: memory exponent {:.3}, projected {:.1} GiB at L={}",
                    f.variant,
                    f.frontend,
                    f.exponent,
                    f.project_bytes(a.project_to) / GIB as f64,
                    a.project_to
                );
            }
        }
        Err(e) => eprintln!("no exponent fit: {e}"),
    }
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct GradCheckArgs {
    /// Blocks to check (raw, spectrogram, bimamba, attention, model); all by default.
    #[arg(long, value_delimiter = ',')]
    block: Vec<String>,
    /// Sequence length in tokens.
    #[arg(long = "L", default_value_t = 8)]
    length: usize,
    /// Model width.
    #[arg(long, default_value_t = 16)]
    d: usize,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

pub fn grad_check(s: &Settings, a: &GradCheckArgs) -> anyhow::Result<ExitCode> {
    let blocks = if a.block.is_empty() || a.block.iter().any(|b| b == "all") {
        Block::ALL.to_vec()
    } else {
        a.block
            .iter()
            .map(|b| b.parse::<Block>())
            .collect::<audioseq::Result<Vec<_>>>()?
    };
    let mut failed = Vec::new();
    for block in blocks {
        let report = check_block(block, a.length, a.d, s.seed()?)?;
        let err = report.max_rel_error();
        let worst = report.worst().map_or("-", |t| t.name.as_str());
        let ok = err < a.tolerance;
        println!(
            "{block:<12} max rel error {err:.3e}  worst {worst}  {}",
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failed.push(block.to_string());
        }
    }
    if failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "gradient check failed for {} (tolerance {:e})",
            failed.join(", "),
            a.tolerance
        );
        Ok(ExitCode::FAILURE)
    }
}
