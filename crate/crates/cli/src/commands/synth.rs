use std::fs;
use std::process::ExitCode;

use anyhow::Context;
use audioseq::data::wav::save_wav;
use audioseq::data::{generate_synthetic, write_manifest, ManifestEntry, SyntheticSpec};
use audioseq::rng::substream;
use clap::Args;

use crate::settings::Settings;

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Clip length in seconds.
    #[arg(long, default_value_t = 1.0)]
    seconds: f64,
    /// Number of clips.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Round-robin folds written to the manifest; 0 leaves the column empty.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 20.0, conflicts_with = "clean")]
    snr_db: f64,
    /// No additive noise.
    #[arg(long)]
    clean: bool,
}

pub fn synth_data(s: &Settings, a: &SynthArgs) -> anyhow::Result<ExitCode> {
    let spec = SyntheticSpec {
        n_classes: a.classes,
        clip_seconds: a.seconds,
        snr_db: (!a.clean).then_some(a.snr_db),
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec, a.n, &mut substream(s.seed()?, "data"))?;
    let out = s.out_or("data");
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut entries = Vec::with_capacity(data.len());
    for (i, clip) in data.clips.iter().enumerate() {
        let name = format!("clip_{i:05}.wav");
        save_wav(&out.join(&name), &clip.waveform)?;
        entries.push(ManifestEntry {
            path: name,
            label: clip.label.to_string(),
            fold: (a.folds > 0).then_some(i % a.folds.max(1)),
            speaker: None,
        });
    }
    let manifest = out.join("manifest.csv");
    write_manifest(&manifest, &entries)?;
    println!(
        "wrote {} clips of {} classes and {}",
        entries.len(),
        a.classes,
        manifest.display()
    );
    Ok(ExitCode::SUCCESS)
}
