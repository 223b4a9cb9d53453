//! Long-sequence task constructions.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::AudioClip;
use crate::error::{Error, Result};
use crate::frontend::Waveform;

/// Concatenation task: `n_clips` clips in a row, labelled by the first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConcatTaskSpec {
    pub n_clips: usize,
    pub pool_k: usize,
}

impl Default for ConcatTaskSpec {
    fn default() -> Self {
        Self {
            n_clips: 10,
            pool_k: 100,
        }
    }
}

/// Concatenates `spec.n_clips` clips drawn uniformly with replacement from
/// `pool`; the label is that of the first drawn clip.
pub fn make_concat_example(
    pool: &[AudioClip],
    spec: &ConcatTaskSpec,
    rng: &mut impl Rng,
) -> Result<AudioClip> {
    if pool.is_empty() {
        return Err(Error::Data(
            "concat task needs a non-empty clip pool".into(),
        ));
    }
    if spec.n_clips == 0 {
        return Err(Error::Config("concat task needs at least one clip".into()));
    }
    let rate = pool[0].waveform.sample_rate;
    if let Some(c) = pool.iter().find(|c| c.waveform.sample_rate != rate) {
        return Err(Error::Data(format!(
            "clip {} is at {} Hz, pool is at {rate} Hz",
            c.source_id, c.waveform.sample_rate
        )));
    }
    let picks: Vec<&AudioClip> = (0..spec.n_clips)
        .map(|_| &pool[rng.random_range(0..pool.len())])
        .collect();
    let samples: Vec<f32> = picks
        .iter()
        .flat_map(|c| c.waveform.samples.iter().copied())
        .collect();
    let ids: Vec<&str> = picks.iter().map(|c| c.source_id.as_str()).collect();
    Ok(AudioClip {
        waveform: Waveform::new(samples, rate)?,
        label: picks[0].label,
        source_id: format!("concat[{}]", ids.join("+")),
        speaker_id: picks[0].speaker_id.clone(),
    })
}

/// Concatenates randomly drawn utterances of one speaker until the target
/// duration is reached, then truncates to exactly `target_seconds`.
pub fn stitch_speaker_clip(
    utterances: &[AudioClip],
    target_seconds: f64,
    rng: &mut impl Rng,
) -> Result<AudioClip> {
    let first = utterances
        .first()
        .ok_or_else(|| Error::Data("speaker has no utterances".into()))?;
    let speaker = first.speaker_id.clone();
    if let Some(c) = utterances.iter().find(|c| c.speaker_id != speaker) {
        return Err(Error::Data(format!(
            "utterance {} belongs to speaker {:?}, expected {:?}",
            c.source_id, c.speaker_id, speaker
        )));
    }
    let rate = first.waveform.sample_rate;
    let target = (target_seconds * rate as f64).round() as usize;
    if target == 0 {
        return Err(Error::Config("target duration must be positive".into()));
    }
    let mut samples = Vec::with_capacity(target);
    while samples.len() < target {
        let u = &utterances[rng.random_range(0..utterances.len())];
        samples.extend_from_slice(&u.waveform.samples);
    }
    samples.truncate(target);
    Ok(AudioClip {
        waveform: Waveform::new(samples, rate)?,
        label: first.label,
        source_id: format!("stitched[{}]", speaker.as_deref().unwrap_or("?")),
        speaker_id: speaker,
    })
}

/// Per-speaker split: each speaker's utterances are shuffled and
/// `round(train_fraction * n)` of them (clamped to `1..n`) go to train.
pub fn split_per_speaker(
    clips: &[AudioClip],
    train_fraction: f64,
    rng: &mut impl Rng,
) -> Result<(Vec<AudioClip>, Vec<AudioClip>)> {
    let mut by_speaker: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in clips.iter().enumerate() {
        let s = c
            .speaker_id
            .as_deref()
            .ok_or_else(|| Error::Data(format!("clip {} has no speaker id", c.source_id)))?;
        by_speaker.entry(s).or_default().push(i);
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (speaker, mut idx) in by_speaker {
        if idx.len() < 2 {
            return Err(Error::Data(format!(
                "speaker {speaker} has {} utterance(s); a split needs at least 2",
                idx.len()
            )));
        }
        idx.shuffle(rng);
        let n_train =
            ((train_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        train.extend(idx[..n_train].iter().map(|&i| clips[i].clone()));
        val.extend(idx[n_train..].iter().map(|&i| clips[i].clone()));
    }
    Ok((train, val))
}
