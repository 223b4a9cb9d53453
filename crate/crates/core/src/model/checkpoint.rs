//! Checkpoint directory layout:
//!
//! - `config.txt`: the model config as `key = value` lines,
//! - `manifest.txt`: one line per tensor, `name shape precision offset`,
//!   with the shape written as `AxBxC`,
//! - `params.bin`: the tensors' elements back to back, little-endian.

use std::fs;
use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::tensor::{Real, Tensor};

pub const CONFIG_FILE: &str = "config.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const PARAMS_FILE: &str = "params.bin";

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes named tensors to `bin` and their manifest to `manifest`.
pub fn write_tensors<'a, T: Real>(
    bin: &Path,
    manifest: &Path,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
) -> Result<()> {
    let mut bytes = Vec::new();
    let mut lines = String::new();
    for (name, t) in tensors {
        if name.contains(char::is_whitespace) {
            return Err(Error::Checkpoint(format!(
                "tensor name '{name}' contains whitespace"
            )));
        }
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        lines.push_str(&format!(
            "{name} {} {} {}\n",
            shape.join("x"),
            T::NAME,
            bytes.len()
        ));
        for &v in t.data() {
            v.write_le(&mut bytes);
        }
    }
    fs::write(bin, bytes).map_err(|e| Error::io(bin, e))?;
    fs::write(manifest, lines).map_err(|e| Error::io(manifest, e))
}

fn decode<S: Real, T: Real>(raw: &[u8]) -> Vec<T> {
    raw.chunks_exact(S::BYTES)
        .map(|c| T::of(S::read_le(c).f64()))
        .collect()
}

/// Reads tensors written by [`write_tensors`], converting to `T` if the
/// stored precision differs.
pub fn read_tensors<T: Real>(bin: &Path, manifest: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    let bytes = fs::read(bin).map_err(|e| Error::io(bin, e))?;
    let text = read_text(manifest)?;
    let mut out = Vec::new();
    for (no, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let bad =
            |msg: &str| Error::Checkpoint(format!("{}:{}: {msg}", manifest.display(), no + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [name, shape, precision, offset] = fields[..] else {
            return Err(bad("expected `name shape precision offset`"));
        };
        let shape: Vec<usize> = shape
            .split('x')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("malformed shape"))?;
        let offset: usize = offset.parse().map_err(|_| bad("malformed offset"))?;
        let width = match precision {
            "f32" => 4,
            "f64" => 8,
            _ => return Err(bad("precision must be f32 or f64")),
        };
        let numel: usize = shape.iter().product();
        let raw = bytes
            .get(offset..offset + numel * width)
            .ok_or_else(|| bad("tensor extends past the end of the data file"))?;
        let data = if width == 4 {
            decode::<f32, T>(raw)
        } else {
            decode::<f64, T>(raw)
        };
        out.push((name.to_string(), Tensor::new(shape, data)?));
    }
    Ok(out)
}

/// Writes `model` into directory `dir`, creating it if needed.
pub fn save_checkpoint<T: Real>(model: &Model<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut kv = model.cfg.to_kv();
    kv.set("precision", T::NAME);
    let cfg_path = dir.join(CONFIG_FILE);
    fs::write(&cfg_path, kv.to_text()).map_err(|e| Error::io(&cfg_path, e))?;
    write_tensors(
        &dir.join(PARAMS_FILE),
        &dir.join(MANIFEST_FILE),
        model.store.iter().map(|(_, name, t)| (name, t)),
    )
}

/// Rebuilds a model from a checkpoint directory. Every parameter of the
/// configured architecture must be present with a matching shape.
pub fn load_checkpoint<T: Real>(dir: &Path) -> Result<Model<T>> {
    let kv = KeyValues::parse(&read_text(&dir.join(CONFIG_FILE))?)?;
    let cfg = ModelConfig::from_kv(&kv)?;
    let mut model = Model::<T>::build(&cfg, 0)?;
    let tensors = read_tensors::<T>(&dir.join(PARAMS_FILE), &dir.join(MANIFEST_FILE))?;
    if tensors.len() != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} tensors, architecture has {}",
            tensors.len(),
            model.store.len()
        )));
    }
    for (name, t) in tensors {
        let id = model
            .store
            .find(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor '{name}'")))?;
        if model.store.get(id).shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor '{name}' has shape {:?}, architecture expects {:?}",
                t.shape(),
                model.store.get(id).shape()
            )));
        }
        *model.store.get_mut(id) = t;
    }
    Ok(model)
}
