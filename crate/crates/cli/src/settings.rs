//! Resolved run settings. Defaults are overlaid by a `key = value` file and
//! then by command-line flags; the merged pairs are echoed into every
//! manifest so a manifest can be passed back as `--config`.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use sqz_core::config::KeyValues;
use sqz_core::data::{
    gen_moons, gen_regression, load_tabular, parse_tabular, split_tabular, MoonsTask, RegressionTask, TabularTask,
    TargetFn, IRIS_CSV,
};
use sqz_core::task::{Dataset, Task};
use sqz_core::trainer::{PretrainConfig, TrainConfig};
use sqz_core::{Error, Result};

/// Manifest keys under these prefixes are results, not settings.
const RESULT_PREFIXES: [&str; 3] = ["metric.", "artifact.", "run."];

const OWN_KEYS: [&str; 11] = [
    "data",
    "n",
    "dim",
    "noise",
    "header",
    "hidden",
    "samples",
    "pretrain_steps",
    "pretrain_batch_size",
    "pretrain_lr",
    "pretrain_weight_decay",
];

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Regression(TargetFn),
    Moons,
    Iris,
    Csv(PathBuf),
}

impl FromStr for DataSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "moons" => Self::Moons,
            "iris" => Self::Iris,
            "zero" | "sines" | "poly" | "teacher" => Self::Regression(s.parse()?),
            path if path.ends_with(".csv") => Self::Csv(PathBuf::from(path)),
            other => {
                return Err(Error::Config(format!(
                    "unknown data source '{other}' (expected zero, sines, poly, teacher, moons, iris or a .csv path)"
                )))
            }
        })
    }
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Regression(t) => write!(f, "{t}"),
            Self::Moons => f.write_str("moons"),
            Self::Iris => f.write_str("iris"),
            Self::Csv(p) => write!(f, "{}", p.display()),
        }
    }
}

/// Train/test split with the likelihood that fits it.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub task: Task,
}

impl Prepared {
    pub fn is_regression(&self) -> bool {
        matches!(self.task, Task::Regression { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub data: DataSource,
    pub n: usize,
    /// Input dimension of synthetic regression data.
    pub dim: usize,
    /// Regression noise level or moons jitter.
    pub noise: f64,
    /// Whether a CSV file starts with a header row.
    pub header: bool,
    pub hidden: Vec<usize>,
    /// Posterior draws for Bayesian averaging.
    pub samples: usize,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
}

impl Default for RunSettings {
    fn default() -> Self {
        let r = RegressionTask::default();
        Self {
            data: DataSource::Regression(r.f0),
            n: r.n,
            dim: r.p,
            noise: r.sigma_eps,
            header: true,
            hidden: vec![32, 32],
            samples: sqz_core::compressor::DEFAULT_SAMPLES,
            pretrain: PretrainConfig::default(),
            train: TrainConfig { steps: 2000, ..TrainConfig::default() },
        }
    }
}

/// Comma-separated values.
pub fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Config(format!("cannot parse '{s}' in '{key}'"))))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunSettings {
    /// Rejects keys that are neither settings nor manifest results.
    pub fn check_keys(kv: &KeyValues) -> Result<()> {
        let train_keys = TrainConfig::default().to_key_values();
        for (k, _) in kv.iter() {
            let known = OWN_KEYS.contains(&k)
                || train_keys.get(k).is_some()
                || RESULT_PREFIXES.iter().any(|p| k.starts_with(p));
            if !known {
                return Err(match kv.line_of(k) {
                    Some(line) if line > 0 => Error::Parse { line, msg: format!("unknown key '{k}'") },
                    _ => Error::Config(format!("unknown key '{k}'")),
                });
            }
        }
        Ok(())
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        Self::check_keys(kv)?;
        let mut s = Self::default();
        if let Some(v) = kv.get("data") {
            s.data = v.parse()?;
            if s.data == DataSource::Moons && kv.get("noise").is_none() {
                s.noise = MoonsTask::default().noise;
            }
        }
        if let Some(v) = kv.parsed("n")? {
            s.n = v;
        }
        if let Some(v) = kv.parsed("dim")? {
            s.dim = v;
        }
        if let Some(v) = kv.parsed("noise")? {
            s.noise = v;
        }
        if let Some(v) = kv.parsed("header")? {
            s.header = v;
        }
        if let Some(v) = kv.get("hidden") {
            s.hidden = parse_list("hidden", v)?;
        }
        if let Some(v) = kv.parsed("samples")? {
            s.samples = v;
        }
        if let Some(v) = kv.parsed("pretrain_steps")? {
            s.pretrain.steps = v;
        }
        if let Some(v) = kv.parsed("pretrain_batch_size")? {
            s.pretrain.batch_size = v;
        }
        if let Some(v) = kv.parsed("pretrain_lr")? {
            s.pretrain.lr = v;
        }
        if let Some(v) = kv.parsed("pretrain_weight_decay")? {
            s.pretrain.weight_decay = v;
        }
        s.train.apply(kv)?;
        s.pretrain.seed = s.train.seed;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be positive, got {}", self.noise)));
        }
        if self.samples == 0 {
            return Err(Error::Config("Bayesian averaging needs at least one sample".into()));
        }
        self.train.validate()
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = self.train.to_key_values();
        kv.set("data", &self.data);
        kv.set("n", self.n);
        kv.set("dim", self.dim);
        kv.set("noise", self.noise);
        kv.set("header", self.header);
        kv.set("hidden", join(&self.hidden));
        kv.set("samples", self.samples);
        kv.set("pretrain_steps", self.pretrain.steps);
        kv.set("pretrain_batch_size", self.pretrain.batch_size);
        kv.set("pretrain_lr", self.pretrain.lr);
        kv.set("pretrain_weight_decay", self.pretrain.weight_decay);
        kv
    }

    fn tabular(&self, t: &TabularTask) -> Result<Prepared> {
        let (train, test, _) = split_tabular(t, self.seed())?;
        Ok(Prepared { train, test, task: Task::Classification })
    }

    pub fn prepare(&self) -> Result<Prepared> {
        let seed = self.seed();
        match &self.data {
            DataSource::Regression(f0) => {
                let task = RegressionTask { f0: *f0, p: self.dim, n: self.n, sigma_eps: self.noise, seed };
                let (train, test) = gen_regression(&task)?;
                Ok(Prepared { train, test, task: Task::Regression { sigma_eps: self.noise } })
            }
            DataSource::Moons => {
                let (train, test) = gen_moons(&MoonsTask { n: self.n, noise: self.noise, seed })?;
                Ok(Prepared { train, test, task: Task::Classification })
            }
            DataSource::Iris => self.tabular(&parse_tabular(IRIS_CSV, true)?),
            DataSource::Csv(path) => self.tabular(&load_tabular(path, self.header)?),
        }
    }
}

/// Appends `key = value` result lines to the settings echo.
pub fn manifest_text(settings: &KeyValues, results: &[(String, String)]) -> String {
    let mut text = settings.to_text();
    for (k, v) in results {
        text.push_str(&format!("{k} = {v}\n"));
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut kv = KeyValues::default();
        kv.set("data", "moons");
        kv.set("hidden", "8,4");
        kv.set("k", 4);
        let s = RunSettings::from_key_values(&kv).unwrap();
        assert_eq!(s.noise, 0.2);
        let back = RunSettings::from_key_values(&KeyValues::parse(&s.to_key_values().to_text()).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn unknown_keys_and_results() {
        let kv = KeyValues::parse("k = 4\nmetric.test_mse = 0.1\n").unwrap();
        assert!(RunSettings::from_key_values(&kv).is_ok());
        let kv = KeyValues::parse("k = 4\nbogus = 1\n").unwrap();
        assert!(matches!(RunSettings::from_key_values(&kv), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn csv_sources() {
        assert_eq!("a/b.csv".parse::<DataSource>().unwrap(), DataSource::Csv("a/b.csv".into()));
        assert!("nope".parse::<DataSource>().is_err());
    }
}
