//! Flat `key = value` experiment configs with `[model]`, `[train]`, and
//! `[data]` sections. `#` starts a comment; keys are unique per section.
//!
//! ```text
//! [model]
//! n = 2
//! m = 1
//! T = 1.0
//! L = 20
//! activation = tanh
//! A = random_orthogonal:7        # or inline row-major floats: "1.0 0.0"
//!
//! [train]
//! tau = 0.01
//! tau1 = 0.9
//! method = momentum              # sgd | momentum
//! batch_size = 128
//! max_epochs = 2000
//! eta_stop = 0.0                 # 0 disables the stopping rule
//! seed = 7
//! init = zeros                   # zeros | eps (1e-8 everywhere)
//!
//! [data]
//! task = binary                  # regression | binary | multiclass
//! dataset = circle               # sin | circle | mnist[:dir] | csv:path
//! split_fraction = 0.8           # mnist/csv only
//! limit = 10000                  # cap on loaded/generated training samples
//! ```

use odenet::activation::Activation;
use odenet::data::Task;
use odenet::error::{Error, Result};
use odenet::optimizer::Method;
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Clone, Debug)]
pub enum ReadoutSpec {
    /// Row-major m·n entries.
    Inline(Vec<f64>),
    /// Seeded matrix with orthonormal rows (rank m by construction).
    RandomOrthogonal(u64),
}

#[derive(Clone, Debug)]
pub struct ModelSection {
    pub n: usize,
    pub m: usize,
    pub t_horizon: f64,
    pub steps: usize,
    pub activation: Activation,
    pub readout: ReadoutSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    Zeros,
    /// Every parameter entry set to 1e-8.
    Eps,
}

#[derive(Clone, Debug)]
pub struct TrainSection {
    pub tau: f64,
    pub tau1: f64,
    pub method: Method,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub eta_stop: f64,
    pub seed: u64,
    pub init: InitKind,
}

#[derive(Clone, Debug)]
pub enum DatasetSpec {
    Sin,
    Circle,
    Mnist(Option<PathBuf>),
    Csv(PathBuf),
}

#[derive(Clone, Debug)]
pub struct DataSection {
    pub task: Task,
    pub dataset: DatasetSpec,
    pub split_fraction: Option<f64>,
    pub limit: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Config {
    pub model: ModelSection,
    pub train: TrainSection,
    pub data: DataSection,
}

fn config_err(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.into(),
        line,
        message: message.into(),
    }
}

struct Section {
    values: BTreeMap<String, (usize, String)>,
    name: &'static str,
    path: String,
}

impl Section {
    fn raw(&self, key: &str) -> Result<(usize, &str)> {
        match self.values.get(key) {
            Some((line, v)) => Ok((*line, v.as_str())),
            None => Err(config_err(
                &self.path,
                0,
                format!("missing key `{key}` in section [{}]", self.name),
            )),
        }
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<T> {
        let (line, v) = self.raw(key)?;
        v.parse().map_err(|_| {
            config_err(
                &self.path,
                line,
                format!("key `{key}`: expected {what}, got `{v}`"),
            )
        })
    }

    fn parse_or<T: std::str::FromStr>(&self, key: &str, what: &str, default: T) -> Result<T> {
        if self.values.contains_key(key) {
            self.parse(key, what)
        } else {
            Ok(default)
        }
    }

    fn optional<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Option<T>> {
        if self.values.contains_key(key) {
            Ok(Some(self.parse(key, what)?))
        } else {
            Ok(None)
        }
    }
}

pub fn parse_config(text: &str, path: &str) -> Result<Config> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim().to_string();
            if !["model", "train", "data"].contains(&name.as_str()) {
                return Err(config_err(path, line_no, format!("unknown section [{name}]")));
            }
            sections.entry(name.clone()).or_insert_with(|| Section {
                values: BTreeMap::new(),
                name: match name.as_str() {
                    "model" => "model",
                    "train" => "train",
                    _ => "data",
                },
                path: path.into(),
            });
            current = Some(name);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(config_err(
                path,
                line_no,
                format!("expected `key = value`, got `{line}`"),
            ));
        };
        let Some(section) = current.as_ref() else {
            return Err(config_err(
                path,
                line_no,
                "key/value before any [section] header",
            ));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        let section = sections.get_mut(section).expect("section registered");
        if section
            .values
            .insert(key.clone(), (line_no, value))
            .is_some()
        {
            return Err(config_err(path, line_no, format!("duplicate key `{key}`")));
        }
    }

    let need = |name: &str| -> Result<&Section> {
        sections
            .get(name)
            .ok_or_else(|| config_err(path, 0, format!("missing section [{name}]")))
    };

    let model = {
        let s = need("model")?;
        let n: usize = s.parse("n", "a positive integer")?;
        let m: usize = s.parse("m", "a positive integer")?;
        let (a_line, a_raw) = s.raw("A")?;
        let readout = if let Some(seed) = a_raw.strip_prefix("random_orthogonal:") {
            let seed: u64 = seed.trim().parse().map_err(|_| {
                config_err(path, a_line, format!("bad seed in `A = {a_raw}`"))
            })?;
            ReadoutSpec::RandomOrthogonal(seed)
        } else {
            let entries: Result<Vec<f64>> = a_raw
                .split_whitespace()
                .map(|t| {
                    t.parse()
                        .map_err(|_| config_err(path, a_line, format!("bad float `{t}` in A")))
                })
                .collect();
            let entries = entries?;
            if entries.len() != n * m {
                return Err(config_err(
                    path,
                    a_line,
                    format!("A has {} entries, expected m*n = {}", entries.len(), n * m),
                ));
            }
            ReadoutSpec::Inline(entries)
        };
        ModelSection {
            n,
            m,
            t_horizon: s.parse("T", "a positive real")?,
            steps: s.parse("L", "a positive integer")?,
            activation: s.parse("activation", "an activation name")?,
            readout,
        }
    };

    let train = {
        let s = need("train")?;
        let init = match s.parse_or::<String>("init", "zeros|eps", "zeros".into())?.as_str() {
            "zeros" => InitKind::Zeros,
            "eps" => InitKind::Eps,
            other => {
                return Err(config_err(
                    path,
                    0,
                    format!("key `init`: expected zeros|eps, got `{other}`"),
                ))
            }
        };
        TrainSection {
            tau: s.parse("tau", "a positive real")?,
            tau1: s.parse_or("tau1", "a real in [0,1)", 0.0)?,
            method: s.parse_or("method", "sgd|momentum", Method::Sgd)?,
            batch_size: s.parse("batch_size", "a positive integer")?,
            max_epochs: s.parse("max_epochs", "a positive integer")?,
            eta_stop: s.parse_or("eta_stop", "a nonnegative real", 0.0)?,
            seed: s.parse("seed", "an unsigned integer")?,
            init,
        }
    };

    let data = {
        let s = need("data")?;
        let (ds_line, ds_raw) = s.raw("dataset")?;
        let dataset = match ds_raw {
            "sin" => DatasetSpec::Sin,
            "circle" => DatasetSpec::Circle,
            "mnist" => DatasetSpec::Mnist(None),
            other => {
                if let Some(dir) = other.strip_prefix("mnist:") {
                    DatasetSpec::Mnist(Some(PathBuf::from(dir.trim())))
                } else if let Some(p) = other.strip_prefix("csv:") {
                    DatasetSpec::Csv(PathBuf::from(p.trim()))
                } else {
                    return Err(config_err(
                        path,
                        ds_line,
                        format!("dataset must be sin|circle|mnist[:dir]|csv:path, got `{other}`"),
                    ));
                }
            }
        };
        DataSection {
            task: s.parse("task", "regression|binary|multiclass")?,
            dataset,
            split_fraction: s.optional("split_fraction", "a real in (0,1)")?,
            limit: s.optional("limit", "a positive integer")?,
        }
    };

    Ok(Config { model, train, data })
}
