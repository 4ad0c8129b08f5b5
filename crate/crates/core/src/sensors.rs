//! Simulated sensor bus.
//!
//! Gaussian signals draw from [`XorShift64Star`] seeded through splitmix64
//! and use the cosine branch of Box-Muller; `tools/prng_reference.py`
//! reproduces the same sequence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prng::{fnv1a, mix_seed, XorShift64Star};

#[derive(Debug, Error)]
pub enum SensorError {
    #[error("unknown signal {0:?}")]
    UnknownSignal(String),
    #[error("signal {signal:?} reached end of stream after {cursor} samples")]
    EndOfStream { signal: String, cursor: u64 },
    #[error("replay file {path}: {reason}")]
    Replay { path: PathBuf, reason: String },
    #[error("invalid catalog: {0}")]
    Catalog(String),
}

/// Generator kind and parameters of one signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Generator {
    Gaussian { mean: f64, stddev: f64 },
    Ramp { start: f64, step: f64 },
    /// One decimal value per line. Blank lines are ignored.
    Replay { file: PathBuf },
}

/// Signal name to generator mapping, loadable from a JSON file such as
/// `{"speed": {"kind": "gaussian", "mean": 80, "stddev": 15}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Catalog {
    signals: BTreeMap<String, Generator>,
}

impl Default for Catalog {
    fn default() -> Self {
        let mut signals = BTreeMap::new();
        let gaussian = |mean, stddev| Generator::Gaussian { mean, stddev };
        signals.insert("speed".into(), gaussian(80.0, 15.0));
        signals.insert("rpm".into(), gaussian(2500.0, 400.0));
        signals.insert("coolant_temp".into(), gaussian(90.0, 5.0));
        signals.insert("noise".into(), gaussian(0.0, 1.0));
        signals.insert("odometer".into(), Generator::Ramp { start: 0.0, step: 1.0 });
        signals.insert("zero".into(), Generator::Ramp { start: 0.0, step: 0.0 });
        Self { signals }
    }
}

impl Catalog {
    pub fn empty() -> Self {
        Self {
            signals: BTreeMap::new(),
        }
    }

    /// Reads a catalog file. Relative replay paths resolve against the
    /// catalog's directory.
    pub fn load(path: &Path) -> Result<Self, SensorError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SensorError::Catalog(format!("{}: {e}", path.display())))?;
        let mut catalog: Catalog = serde_json::from_str(&text)
            .map_err(|e| SensorError::Catalog(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for gen in catalog.signals.values_mut() {
            if let Generator::Replay { file } = gen {
                if file.is_relative() {
                    *file = base.join(&*file);
                }
            }
        }
        catalog.check()?;
        Ok(catalog)
    }

    fn check(&self) -> Result<(), SensorError> {
        for (name, gen) in &self.signals {
            let ok = match gen {
                Generator::Gaussian { mean, stddev } => {
                    mean.is_finite() && stddev.is_finite() && *stddev >= 0.0
                }
                Generator::Ramp { start, step } => start.is_finite() && step.is_finite(),
                Generator::Replay { .. } => true,
            };
            if !ok {
                return Err(SensorError::Catalog(format!("bad parameters for {name:?}")));
            }
        }
        Ok(())
    }

    pub fn insert(&mut self, name: impl Into<String>, generator: Generator) {
        self.signals.insert(name.into(), generator);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.signals.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.signals.keys().map(String::as_str)
    }

    /// Opens an independent stream with its cursor at 0.
    pub fn open_stream(&self, name: &str, seed: u64) -> Result<SignalStream, SensorError> {
        let gen = self
            .signals
            .get(name)
            .ok_or_else(|| SensorError::UnknownSignal(name.to_owned()))?;
        let source = match gen {
            Generator::Gaussian { mean, stddev } => Source::Gaussian {
                mean: *mean,
                stddev: *stddev,
                rng: XorShift64Star::new(seed),
            },
            Generator::Ramp { start, step } => Source::Ramp {
                start: *start,
                step: *step,
            },
            Generator::Replay { file } => Source::Replay(Arc::new(read_replay(file)?)),
        };
        Ok(SignalStream {
            name: name.to_owned(),
            seed,
            cursor: 0,
            source,
        })
    }
}

fn read_replay(path: &Path) -> Result<Vec<f64>, SensorError> {
    let err = |reason: String| SensorError::Replay {
        path: path.to_owned(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| err(format!("line {}: not a number: {line:?}", i + 1)))?;
        if !v.is_finite() {
            return Err(err(format!("line {}: non-finite value", i + 1)));
        }
        values.push(v);
    }
    Ok(values)
}

#[derive(Debug, Clone)]
enum Source {
    Gaussian {
        mean: f64,
        stddev: f64,
        rng: XorShift64Star,
    },
    Ramp {
        start: f64,
        step: f64,
    },
    Replay(Arc<Vec<f64>>),
}

#[derive(Debug, Clone)]
pub struct SignalStream {
    name: String,
    seed: u64,
    cursor: u64,
    source: Source,
}

impl SignalStream {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    pub fn next_sample(&mut self) -> Result<f64, SensorError> {
        let value = match &mut self.source {
            Source::Gaussian { mean, stddev, rng } => *mean + *stddev * rng.next_gaussian(),
            Source::Ramp { start, step } => *start + *step * self.cursor as f64,
            Source::Replay(values) => match values.get(self.cursor as usize) {
                Some(v) => *v,
                None => {
                    return Err(SensorError::EndOfStream {
                        signal: self.name.clone(),
                        cursor: self.cursor,
                    })
                }
            },
        };
        self.cursor += 1;
        Ok(value)
    }
}

/// Seed of the stream a client opens for one task. It depends on the client
/// seed, the signal and the iteration, but not on the assignment, so a task
/// sees the same data whether its assignment runs alone or next to others.
pub fn task_stream_seed(client_seed: u64, signal: &str, iteration: u32) -> u64 {
    mix_seed(&[client_seed, fnv1a(signal), u64::from(iteration)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn take(s: &mut SignalStream, n: usize) -> Vec<f64> {
        (0..n).map(|_| s.next_sample().unwrap()).collect()
    }

    #[test]
    fn equal_seeds_give_identical_streams() {
        let cat = Catalog::default();
        let mut a = cat.open_stream("speed", 7).unwrap();
        let mut b = cat.open_stream("speed", 7).unwrap();
        assert_eq!(take(&mut a, 1000), take(&mut b, 1000));
    }

    #[test]
    fn different_seeds_differ() {
        let cat = Catalog::default();
        let a = take(&mut cat.open_stream("speed", 7).unwrap(), 1000);
        let b = take(&mut cat.open_stream("speed", 8).unwrap(), 1000);
        let equal = a.iter().zip(&b).filter(|(x, y)| x == y).count();
        assert!(equal < 10, "{equal} coincident samples");
    }

    #[test]
    fn unknown_signal() {
        assert!(matches!(
            Catalog::default().open_stream("rpm2", 1),
            Err(SensorError::UnknownSignal(n)) if n == "rpm2"
        ));
    }

    #[test]
    fn ramps() {
        let mut cat = Catalog::empty();
        cat.insert("a", Generator::Ramp { start: 0.0, step: 1.0 });
        cat.insert("b", Generator::Ramp { start: 5.0, step: 2.0 });
        assert_eq!(take(&mut cat.open_stream("a", 0).unwrap(), 4), [0.0, 1.0, 2.0, 3.0]);
        assert_eq!(take(&mut cat.open_stream("b", 0).unwrap(), 3), [5.0, 7.0, 9.0]);
    }

    #[test]
    fn replay_ends() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("trace.txt");
        writeln!(std::fs::File::create(&data).unwrap(), "1.5\n2.5").unwrap();
        let cat_path = dir.path().join("catalog.json");
        std::fs::write(&cat_path, r#"{"trace": {"kind": "replay", "file": "trace.txt"}}"#).unwrap();
        let cat = Catalog::load(&cat_path).unwrap();
        let mut s = cat.open_stream("trace", 0).unwrap();
        assert_eq!(take(&mut s, 2), [1.5, 2.5]);
        assert!(matches!(s.next_sample(), Err(SensorError::EndOfStream { cursor: 2, .. })));
    }

    #[test]
    fn standard_gaussian_matches_reference_program() {
        let mut cat = Catalog::empty();
        cat.insert("g", Generator::Gaussian { mean: 0.0, stddev: 1.0 });
        let got = take(&mut cat.open_stream("g", 42).unwrap(), 3);
        assert_eq!(got, [-0.6067501071015717, -0.1525702928943948, -1.570047893489918]);
    }

    #[test]
    fn gaussian_sample_mean_is_within_four_standard_errors() {
        let n = 100_000;
        let mut s = Catalog::default().open_stream("speed", 2024).unwrap();
        let mean = take(&mut s, n).iter().sum::<f64>() / n as f64;
        let bound = 4.0 * 15.0 / (n as f64).sqrt();
        assert!((mean - 80.0).abs() < bound, "mean {mean}");
    }

    #[test]
    fn catalog_json_round_trip() {
        let cat = Catalog::default();
        let text = serde_json::to_string(&cat).unwrap();
        assert!(text.contains(r#""speed":{"kind":"gaussian","mean":80.0,"stddev":15.0}"#));
        assert_eq!(serde_json::from_str::<Catalog>(&text).unwrap(), cat);
    }
}
