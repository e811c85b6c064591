//! Named parameter store and checkpoint I/O.
//!
//! Parameters are kept in a `BTreeMap` so iteration order (and therefore
//! optimizer updates and gradient accumulation) is deterministic. Checkpoint
//! files are line-oriented text: values are written as hex-encoded f64 bit
//! patterns, which round-trips exactly.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::matrix::Matrix;

/// Glorot/Xavier uniform initialization: U(+/- sqrt(6 / (fan_in + fan_out))).
pub fn xavier_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect())
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("checkpoint has no header; expected `{expected}`")]
    MissingHeader { expected: &'static str },
}

const HEADER: &str = "segmn-checkpoint 1";

/// All learnable weights of a model, addressable by name.
#[derive(Clone, Debug, Default)]
pub struct ModelParams {
    tensors: BTreeMap<String, Arc<Matrix>>,
    meta: BTreeMap<String, String>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        self.tensors.insert(name.into(), Arc::new(value));
    }

    pub fn get(&self, name: &str) -> &Arc<Matrix> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Arc<Matrix>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Matrix {
        let arc = self
            .tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        Arc::make_mut(arc)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Arc<Matrix>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(|m| m.len()).sum()
    }

    /// Model-level metadata carried inside the checkpoint (hyperparameters
    /// needed to rebuild the architecture around the weights).
    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.meta.insert(key.into(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(|s| s.as_str())
    }

    pub fn meta_entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.meta.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// FNV-1a over every value's bit pattern, in name order. Used to verify
    /// that evaluation does not mutate parameters.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (name, m) in &self.tensors {
            eat(name.as_bytes());
            for &v in m.data() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|m| m.all_finite())
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        writeln!(w, "{HEADER}")?;
        for (k, v) in &self.meta {
            writeln!(w, "!meta {k} {v}")?;
        }
        for (name, m) in &self.tensors {
            write!(w, "!param {name} {} {}", m.rows(), m.cols())?;
            for &v in m.data() {
                write!(w, " {:016x}", v.to_bits())?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let file = std::fs::File::open(path)?;
        let reader = BufReader::new(file);
        let mut params = ModelParams::new();
        let mut lines = reader.lines().enumerate();

        let Some((_, first)) = lines.next() else {
            return Err(CheckpointError::MissingHeader { expected: HEADER });
        };
        if first?.trim() != HEADER {
            return Err(CheckpointError::MissingHeader { expected: HEADER });
        }

        for (i, line) in lines {
            let line = line?;
            let lineno = i + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| CheckpointError::Parse { line: lineno, msg };
            let mut parts = line.split_ascii_whitespace();
            match parts.next() {
                Some("!meta") => {
                    let key = parts
                        .next()
                        .ok_or_else(|| err("missing meta key".into()))?
                        .to_string();
                    let value: Vec<&str> = parts.collect();
                    if value.is_empty() {
                        return Err(err(format!("meta `{key}` has no value")));
                    }
                    params.meta.insert(key, value.join(" "));
                }
                Some("!param") => {
                    let name = parts
                        .next()
                        .ok_or_else(|| err("missing parameter name".into()))?
                        .to_string();
                    let rows: usize = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| err(format!("bad row count for `{name}`")))?;
                    let cols: usize = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| err(format!("bad column count for `{name}`")))?;
                    let mut data = Vec::with_capacity(rows * cols);
                    for tok in parts {
                        let bits = u64::from_str_radix(tok, 16)
                            .map_err(|_| err(format!("bad value `{tok}` in `{name}`")))?;
                        data.push(f64::from_bits(bits));
                    }
                    if data.len() != rows * cols {
                        return Err(err(format!(
                            "`{name}`: expected {} values, found {}",
                            rows * cols,
                            data.len()
                        )));
                    }
                    params
                        .tensors
                        .insert(name, Arc::new(Matrix::from_vec(rows, cols, data)));
                }
                Some(other) => {
                    return Err(err(format!("unknown directive `{other}`")));
                }
                None => {}
            }
        }
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut p = ModelParams::new();
        p.insert(
            "enc.P_node",
            Matrix::from_vec(2, 3, vec![0.1, -2.5e-17, f64::MIN_POSITIVE, 3.0, -0.0, 1.0 / 3.0]),
        );
        p.insert("mlp.b2", Matrix::scalar(-7.25));
        p.set_meta("variant", "dual");
        p.set_meta("hidden", 64);

        let dir = std::env::temp_dir().join(format!("segmn-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.ckpt");
        p.save(&path).unwrap();
        let q = ModelParams::load(&path).unwrap();
        std::fs::remove_dir_all(&dir).ok();

        assert_eq!(p.checksum(), q.checksum());
        assert_eq!(q.meta("variant"), Some("dual"));
        assert_eq!(q.meta("hidden"), Some("64"));
        for (name, m) in p.iter() {
            let loaded = q.get(name);
            assert_eq!(m.shape(), loaded.shape());
            for (a, b) in m.data().iter().zip(loaded.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn load_rejects_garbage() {
        let dir = std::env::temp_dir().join(format!("segmn-ckpt-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.ckpt");
        std::fs::write(&path, "segmn-checkpoint 1\n!param w 2 2 00\n").unwrap();
        let err = ModelParams::load(&path).unwrap_err();
        std::fs::remove_dir_all(&dir).ok();
        assert!(matches!(err, CheckpointError::Parse { .. }));
    }

    #[test]
    fn checksum_changes_with_values() {
        let mut p = ModelParams::new();
        p.insert("w", Matrix::scalar(1.0));
        let c1 = p.checksum();
        p.get_mut("w").data_mut()[0] = 1.0 + f64::EPSILON;
        assert_ne!(c1, p.checksum());
    }
}
