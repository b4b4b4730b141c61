//! Self-describing text checkpoints.
//!
//! ```text
//! beamtrack-predictor <version>
//! <key> <value>...            one header line per scalar field
//! array <name> <rows> <cols>
//! <row-major values, one row per line>
//! ```
//! Floats are written in shortest round-trip form, so loading is bit-exact.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{NormStats, PredictorLayout, PredictorMode, PredictorModel};
use crate::neural::{NetworkShape, SequenceRegressor};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "beamtrack-predictor";

fn bad(field: &str, message: impl Into<String>) -> Error {
    Error::Checkpoint { field: field.to_owned(), message: message.into() }
}

fn push_array(out: &mut String, name: &str, rows: usize, cols: usize, data: &[f64]) {
    let _ = writeln!(out, "array {name} {rows} {cols}");
    for row in data.chunks(cols.max(1)) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
}

pub fn save_checkpoint(model: &PredictorModel, path: &Path) -> Result<()> {
    model.validate()?;
    let l = &model.layout;
    let s = model.network.shape();
    let mut out = format!("{MAGIC} {CHECKPOINT_VERSION}\n");
    let header = [
        ("mode", l.mode.name().to_owned()),
        ("window_len", l.window_len.to_string()),
        ("samples_per_cycle", l.samples_per_cycle.to_string()),
        ("sensor_channels", l.sensor_channels.to_string()),
        ("context_dim", l.context_dim.to_string()),
        ("cycle_slots", model.cycle_slots.to_string()),
        ("embed_dim", s.embed_dim.to_string()),
        ("hidden_dim", s.hidden_dim.to_string()),
        ("lstm_layers", s.lstm_layers.to_string()),
        ("head_dim", s.head_dim.to_string()),
    ];
    for (k, v) in header {
        let _ = writeln!(out, "{k} {v}");
    }
    let n = &model.norm;
    let f = l.step_features();
    let p = l.state_dim();
    push_array(&mut out, "residual_var", 1, p, &model.residual_var);
    push_array(&mut out, "norm.input_mean", 1, f, &n.input_mean);
    push_array(&mut out, "norm.input_std", 1, f, &n.input_std);
    push_array(&mut out, "norm.target_mean", 1, p, &n.target_mean);
    push_array(&mut out, "norm.target_std", 1, p, &n.target_std);
    for (name, t) in model.network.tensors() {
        push_array(&mut out, &name, t.rows, t.cols, t.data);
    }
    fs::write(path, out)?;
    Ok(())
}

struct Parsed {
    header: HashMap<String, String>,
    arrays: HashMap<String, (usize, usize, Vec<f64>)>,
}

impl Parsed {
    fn usize_field(&self, key: &str) -> Result<usize> {
        let v = self.header.get(key).ok_or_else(|| bad(key, "missing"))?;
        v.parse().map_err(|_| bad(key, format!("`{v}` is not a non-negative integer")))
    }

    fn take_array(&mut self, name: &str, rows: usize, cols: usize) -> Result<Vec<f64>> {
        let (r, c, data) = self.arrays.remove(name).ok_or_else(|| bad(name, "missing tensor"))?;
        if (r, c) != (rows, cols) {
            return Err(bad(name, format!("shape {r}x{c}, expected {rows}x{cols}")));
        }
        Ok(data)
    }
}

fn parse(text: &str) -> Result<Parsed> {
    let mut lines = text.lines();
    let first = lines.next().ok_or_else(|| bad("version", "empty file"))?;
    let mut it = first.split_whitespace();
    if it.next() != Some(MAGIC) {
        return Err(bad("version", format!("not a predictor checkpoint (expected `{MAGIC}`)")));
    }
    let version = it.next().ok_or_else(|| bad("version", "missing"))?;
    if version != CHECKPOINT_VERSION.to_string() {
        return Err(bad("version", format!("unsupported version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let mut header = HashMap::new();
    let mut arrays = HashMap::new();
    while let Some(line) = lines.next() {
        let mut parts = line.split_whitespace();
        let Some(key) = parts.next() else { continue };
        if key != "array" {
            let value = parts.next().ok_or_else(|| bad(key, "missing value"))?;
            header.insert(key.to_owned(), value.to_owned());
            continue;
        }
        let name = parts.next().ok_or_else(|| bad("array", "missing tensor name"))?.to_owned();
        let dim = |s: Option<&str>| -> Result<usize> {
            s.and_then(|v| v.parse().ok()).ok_or_else(|| bad(&name, "malformed shape"))
        };
        let rows = dim(parts.next())?;
        let cols = dim(parts.next())?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let row = lines.next().ok_or_else(|| bad(&name, "truncated values"))?;
            for tok in row.split_whitespace() {
                data.push(tok.parse::<f64>().map_err(|_| bad(&name, format!("bad number `{tok}`")))?);
            }
        }
        if data.len() != rows * cols {
            return Err(bad(&name, format!("{} values for shape {rows}x{cols}", data.len())));
        }
        arrays.insert(name, (rows, cols, data));
    }
    Ok(Parsed { header, arrays })
}

pub fn load_checkpoint(path: &Path) -> Result<PredictorModel> {
    let mut p = parse(&fs::read_to_string(path)?)?;
    let mode_name = p.header.get("mode").ok_or_else(|| bad("mode", "missing"))?;
    let mode = PredictorMode::from_name(mode_name).map_err(|e| bad("mode", e.to_string()))?;
    let layout = PredictorLayout {
        mode,
        window_len: p.usize_field("window_len")?,
        samples_per_cycle: p.usize_field("samples_per_cycle")?,
        sensor_channels: p.usize_field("sensor_channels")?,
        context_dim: p.usize_field("context_dim")?,
    };
    let shape = NetworkShape {
        input_dim: layout.step_features(),
        embed_dim: p.usize_field("embed_dim")?,
        hidden_dim: p.usize_field("hidden_dim")?,
        lstm_layers: p.usize_field("lstm_layers")?,
        head_dim: p.usize_field("head_dim")?,
        output_dim: layout.state_dim(),
    };
    let cycle_slots = p.usize_field("cycle_slots")?;
    let (f, s) = (layout.step_features(), layout.state_dim());
    let residual_var = p.take_array("residual_var", 1, s)?;
    let norm = NormStats {
        input_mean: p.take_array("norm.input_mean", 1, f)?,
        input_std: p.take_array("norm.input_std", 1, f)?,
        target_mean: p.take_array("norm.target_mean", 1, s)?,
        target_std: p.take_array("norm.target_std", 1, s)?,
    };
    // Build an architecture skeleton, then fill every tensor by name.
    let mut rng = crate::rng::stream(0, &[]);
    let mut network = SequenceRegressor::init(shape, &mut rng).map_err(|e| bad("network", e.to_string()))?;
    let specs: Vec<(String, usize, usize)> = network.tensors().into_iter().map(|(n, t)| (n, t.rows, t.cols)).collect();
    for ((name, rows, cols), dst) in specs.into_iter().zip(network.tensors_mut()) {
        dst.copy_from_slice(&p.take_array(&name, rows, cols)?);
    }
    if let Some(extra) = p.arrays.keys().next() {
        return Err(bad(extra, "unexpected tensor"));
    }
    let model = PredictorModel { layout, network, norm, cycle_slots, residual_var };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::super::tests::{layout, window};
    use super::super::StatePredictor;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> PredictorModel {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut m = PredictorModel::init(layout(3), 2, 80, &mut rng).unwrap();
        m.norm.input_mean = (0..10).map(|k| 0.1 * k as f64 + 1e-17).collect();
        m.norm.input_std = (0..10).map(|k| 1.0 / (k as f64 + 3.0)).collect();
        m.norm.target_std = vec![std::f64::consts::PI * 1e-3];
        m.residual_var = vec![1.2345678901234567e-9];
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = model();
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        let w = window(&[0.11, 0.13, 0.17], 0.4);
        assert_eq!(m.predict(&w).unwrap(), back.predict(&w).unwrap());
    }

    fn corrupt(edit: impl Fn(String) -> String) -> Error {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model(), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, edit(text)).unwrap();
        load_checkpoint(&path).unwrap_err()
    }

    #[test]
    fn missing_tensor_is_named() {
        let err = corrupt(|t| {
            let start = t.find("array lstm1.W_hf").unwrap();
            let end = t[start..].find("array lstm1.b_f").unwrap() + start;
            format!("{}{}", &t[..start], &t[end..])
        });
        match err {
            Error::Checkpoint { field, .. } => assert_eq!(field, "lstm1.W_hf"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let err = corrupt(|t| t.replacen("beamtrack-predictor 1", "beamtrack-predictor 99", 1));
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn bad_number_and_header_are_named() {
        let err = corrupt(|t| t.replacen("window_len 3", "window_len three", 1));
        assert!(matches!(err, Error::Checkpoint { ref field, .. } if field == "window_len"));
        let err = corrupt(|t| {
            let i = t.find("array head_out.bias").unwrap();
            let j = t[i..].find('\n').unwrap() + i + 1;
            format!("{}oops\n", &t[..j])
        });
        assert!(matches!(err, Error::Checkpoint { ref field, .. } if field == "head_out.bias"));
    }
}
