use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::accountant::{DpGuarantee, DEFAULT_ORDERS};
use crate::error::{Error, Result};
use crate::mechanisms::NoiseFamily;
use crate::models::SgdConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Nonprivate,
    Dpsgd,
    Pate,
    PateSingle,
    Psn,
    PsnSingle,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Nonprivate,
        Method::Dpsgd,
        Method::Pate,
        Method::PateSingle,
        Method::Psn,
        Method::PsnSingle,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Nonprivate => "nonprivate",
            Method::Dpsgd => "dpsgd",
            Method::Pate => "pate",
            Method::PateSingle => "pate_single",
            Method::Psn => "psn",
            Method::PsnSingle => "psn_single",
        }
    }

    /// Teacher count this method actually trains.
    pub fn teachers(&self, configured: usize) -> usize {
        match self {
            Method::Pate | Method::Psn => configured,
            Method::PateSingle | Method::PsnSingle => 1,
            Method::Nonprivate | Method::Dpsgd => 0,
        }
    }

    pub fn is_private(&self) -> bool {
        !matches!(self, Method::Nonprivate)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown method `{}`", s.trim())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSource {
    /// Blobs drawn from the shared class layout.
    Synthetic { n: usize },
    /// A `f1,…,fd,label` file.
    Csv { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub features: usize,
    pub classes: usize,
    /// Minimum distance between synthetic class means.
    pub separation: f64,
    pub private: DataSource,
    pub public: DataSource,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            features: 2,
            classes: 3,
            separation: 4.0,
            private: DataSource::Synthetic { n: 3000 },
            public: DataSource::Synthetic { n: 1000 },
        }
    }
}

/// A declarative experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub target: DpGuarantee,
    /// Poisson inclusion probability for PSN teachers.
    pub gamma: f64,
    pub num_teachers: usize,
    /// Public rows pseudo-labeled for the student; `None` labels every row
    /// not reserved for weight balancing.
    pub query_count: Option<usize>,
    /// Public rows spent on weighted-majority balancing (ensembles only).
    pub wma_queries: usize,
    pub wma_beta: f64,
    pub noise_family: NoiseFamily,
    pub seed: u64,
    pub orders: Vec<f64>,
    /// Share of the private data held out for evaluation.
    pub eval_fraction: f64,
    /// Independent train/eval splits; each is accounted separately.
    pub folds: usize,
    /// Teacher and student learner.
    pub learner: SgdConfig,
    /// DP-SGD learner; its noise multiplier is calibrated per run.
    pub dpsgd: SgdConfig,
    pub data: DataConfig,
    /// Adds per-method wall-clock times to the report (breaks byte-identical reruns).
    pub record_timings: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            target: DpGuarantee { epsilon: 8.0, delta: 0.02 },
            gamma: 0.25,
            num_teachers: 3,
            query_count: None,
            wma_queries: 0,
            wma_beta: 0.5,
            noise_family: NoiseFamily::Gaussian,
            seed: 0,
            orders: DEFAULT_ORDERS.to_vec(),
            eval_fraction: 0.3,
            folds: 1,
            learner: SgdConfig::default(),
            dpsgd: SgdConfig { epochs: 5, batch_size: 64, ..SgdConfig::default() },
            data: DataConfig::default(),
            record_timings: false,
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| cfg_err(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn sgd_keys(prefix: &str, cfg: &SgdConfig, out: &mut BTreeMap<String, String>) {
    out.insert(format!("{prefix}.learning_rate"), format!("{:?}", cfg.learning_rate));
    out.insert(format!("{prefix}.epochs"), cfg.epochs.to_string());
    out.insert(format!("{prefix}.batch_size"), cfg.batch_size.to_string());
    out.insert(format!("{prefix}.l2_penalty"), format!("{:?}", cfg.l2_penalty));
    out.insert(format!("{prefix}.clip_norm"), format!("{:?}", cfg.clip_norm));
    out.insert(format!("{prefix}.noise_multiplier"), format!("{:?}", cfg.noise_multiplier));
}

fn set_sgd(cfg: &mut SgdConfig, field: &str, key: &str, value: &str) -> Result<()> {
    match field {
        "learning_rate" => cfg.learning_rate = parse(key, value)?,
        "epochs" => cfg.epochs = parse(key, value)?,
        "batch_size" => cfg.batch_size = parse(key, value)?,
        "l2_penalty" => cfg.l2_penalty = parse(key, value)?,
        "clip_norm" => cfg.clip_norm = parse(key, value)?,
        "noise_multiplier" => cfg.noise_multiplier = parse(key, value)?,
        _ => return Err(cfg_err(format!("unknown key `{key}`"))),
    }
    Ok(())
}

fn source_keys(prefix: &str, src: &DataSource, out: &mut BTreeMap<String, String>) {
    match src {
        DataSource::Synthetic { n } => {
            out.insert(format!("{prefix}.source"), "synthetic".into());
            out.insert(format!("{prefix}.n"), n.to_string());
        }
        DataSource::Csv { path } => {
            out.insert(format!("{prefix}.source"), "csv".into());
            out.insert(format!("{prefix}.path"), path.clone());
        }
    }
}

fn source_from(prefix: &str, map: &BTreeMap<String, String>, default: &DataSource) -> Result<DataSource> {
    let key = |f: &str| format!("{prefix}.{f}");
    let kind = map.get(&key("source")).map(String::as_str);
    let n = map.get(&key("n"));
    let path = map.get(&key("path"));
    match (kind, n, path) {
        (Some("csv"), None, Some(p)) | (None, None, Some(p)) => Ok(DataSource::Csv { path: p.clone() }),
        (Some("synthetic"), Some(n), None) | (None, Some(n), None) => {
            Ok(DataSource::Synthetic { n: parse(&key("n"), n)? })
        }
        (Some("synthetic"), None, None) => match default {
            DataSource::Synthetic { n } => Ok(DataSource::Synthetic { n: *n }),
            DataSource::Csv { .. } => Err(cfg_err(format!("`{}` needs `{}`", key("source"), key("n")))),
        },
        (None, None, None) => Ok(default.clone()),
        (Some("csv"), _, None) => Err(cfg_err(format!("`{}` = csv needs `{}`", key("source"), key("path")))),
        (Some(other), _, _) if other != "csv" && other != "synthetic" => {
            Err(cfg_err(format!("`{}`: unknown source `{other}`", key("source"))))
        }
        _ => Err(cfg_err(format!("`{prefix}` mixes synthetic and csv keys"))),
    }
}

impl ExperimentConfig {
    /// Flat `key = value` form; [`Self::from_flat`] inverts it.
    pub fn to_flat(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("methods".into(), join(&self.methods));
        m.insert("target_epsilon".into(), format!("{:?}", self.target.epsilon));
        m.insert("target_delta".into(), format!("{:?}", self.target.delta));
        m.insert("gamma".into(), format!("{:?}", self.gamma));
        m.insert("num_teachers".into(), self.num_teachers.to_string());
        m.insert(
            "query_count".into(),
            self.query_count.map_or_else(|| "all".to_string(), |q| q.to_string()),
        );
        m.insert("wma_queries".into(), self.wma_queries.to_string());
        m.insert("wma_beta".into(), format!("{:?}", self.wma_beta));
        m.insert("noise_family".into(), self.noise_family.name().into());
        m.insert("seed".into(), self.seed.to_string());
        m.insert(
            "orders".into(),
            self.orders.iter().map(|o| format!("{o:?}")).collect::<Vec<_>>().join(","),
        );
        m.insert("eval_fraction".into(), format!("{:?}", self.eval_fraction));
        m.insert("folds".into(), self.folds.to_string());
        m.insert("record_timings".into(), self.record_timings.to_string());
        sgd_keys("learner", &self.learner, &mut m);
        sgd_keys("dpsgd", &self.dpsgd, &mut m);
        m.insert("data.features".into(), self.data.features.to_string());
        m.insert("data.classes".into(), self.data.classes.to_string());
        m.insert("data.separation".into(), format!("{:?}", self.data.separation));
        source_keys("private", &self.data.private, &mut m);
        source_keys("public", &self.data.public, &mut m);
        m
    }

    /// Builds a config from flat keys over the defaults. Unknown keys are errors.
    pub fn from_flat(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        for (key, value) in map {
            let v = value.as_str();
            match key.as_str() {
                "methods" => {
                    c.methods = parse_list(key, v)?;
                }
                "target_epsilon" => c.target.epsilon = parse(key, v)?,
                "target_delta" => c.target.delta = parse(key, v)?,
                "gamma" => c.gamma = parse(key, v)?,
                "num_teachers" => c.num_teachers = parse(key, v)?,
                "query_count" => {
                    c.query_count = if v.trim() == "all" { None } else { Some(parse(key, v)?) }
                }
                "wma_queries" => c.wma_queries = parse(key, v)?,
                "wma_beta" => c.wma_beta = parse(key, v)?,
                "noise_family" => c.noise_family = v.parse()?,
                "seed" => c.seed = parse(key, v)?,
                "orders" => c.orders = parse_list(key, v)?,
                "eval_fraction" => c.eval_fraction = parse(key, v)?,
                "folds" => c.folds = parse(key, v)?,
                "record_timings" => c.record_timings = parse(key, v)?,
                "data.features" => c.data.features = parse(key, v)?,
                "data.classes" => c.data.classes = parse(key, v)?,
                "data.separation" => c.data.separation = parse(key, v)?,
                k if k.starts_with("learner.") => set_sgd(&mut c.learner, &k[8..], k, v)?,
                k if k.starts_with("dpsgd.") => set_sgd(&mut c.dpsgd, &k[6..], k, v)?,
                k if k.starts_with("private.") || k.starts_with("public.") => {
                    let field = k.split_once('.').map(|(_, f)| f).unwrap_or_default();
                    if !matches!(field, "source" | "n" | "path") {
                        return Err(cfg_err(format!("unknown key `{k}`")));
                    }
                }
                k => return Err(cfg_err(format!("unknown key `{k}`"))),
            }
        }
        let defaults = DataConfig::default();
        c.data.private = source_from("private", map, &defaults.private)?;
        c.data.public = source_from("public", map, &defaults.public)?;
        c.validate()?;
        Ok(c)
    }

    /// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i as u64 + 1,
                msg: format!("expected `key = value`, found `{line}`"),
            })?;
            if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Parse { line: i as u64 + 1, msg: format!("duplicate key `{}`", k.trim()) });
            }
        }
        Self::from_flat(&map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_text(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        self.to_flat().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(cfg_err("no methods selected"));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(cfg_err("methods must not repeat"));
        }
        if !(self.target.epsilon > 0.0) {
            return Err(cfg_err(format!("target_epsilon must be > 0, got {}", self.target.epsilon)));
        }
        if !(self.target.delta > 0.0 && self.target.delta < 1.0) {
            return Err(cfg_err(format!("target_delta must lie in (0, 1), got {}", self.target.delta)));
        }
        let needs_gamma = self.methods.iter().any(|m| matches!(m, Method::Psn | Method::PsnSingle));
        if needs_gamma && !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(cfg_err(format!("psn needs gamma in (0, 1), got {}", self.gamma)));
        }
        if self.num_teachers == 0 {
            return Err(cfg_err("num_teachers must be >= 1"));
        }
        if !(self.wma_beta > 0.0 && self.wma_beta < 1.0) {
            return Err(cfg_err(format!("wma_beta must lie in (0, 1), got {}", self.wma_beta)));
        }
        if self.query_count == Some(0) {
            return Err(cfg_err("query_count must be >= 1"));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(cfg_err(format!("eval_fraction must lie in (0, 1), got {}", self.eval_fraction)));
        }
        if self.folds == 0 {
            return Err(cfg_err("folds must be >= 1"));
        }
        if self.orders.is_empty() {
            return Err(cfg_err("orders must not be empty"));
        }
        crate::accountant::RdpCurve::zero(&self.orders).map_err(|e| cfg_err(format!("orders: {e}")))?;
        self.learner.validate()?;
        self.dpsgd.validate()?;
        if self.data.classes < 2 || self.data.features == 0 {
            return Err(cfg_err("data needs >= 2 classes and >= 1 feature"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_protocol() {
        let c = ExperimentConfig::default();
        assert_eq!(c.target, DpGuarantee { epsilon: 8.0, delta: 0.02 });
        assert_eq!(c.gamma, 0.25);
        assert_eq!(c.num_teachers, 3);
        assert_eq!(c.orders, DEFAULT_ORDERS.to_vec());
        c.validate().unwrap();
    }

    #[test]
    fn flat_round_trip() {
        let mut c = ExperimentConfig::default();
        c.methods = vec![Method::Psn, Method::Pate];
        c.query_count = Some(40);
        c.noise_family = NoiseFamily::Laplace;
        c.data.public = DataSource::Csv { path: "pub.csv".into() };
        c.learner.learning_rate = 0.3;
        let back = ExperimentConfig::parse_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(ExperimentConfig::parse_text("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse_text("gamma"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(ExperimentConfig::parse_text("seed = 1\nseed = 2"), Err(Error::Parse { line: 2, .. })));
        assert!(ExperimentConfig::parse_text("methods = psn\ngamma = 1.0").is_err());
        assert!(ExperimentConfig::parse_text("methods = pate\ngamma = 1.0").is_ok());
        assert!(ExperimentConfig::parse_text("methods = magic").is_err());
        assert!(ExperimentConfig::parse_text("methods = pate,pate").is_err());
        assert!(ExperimentConfig::parse_text("learner.epochs = 0").is_err());
        assert!(ExperimentConfig::parse_text("learner.momentum = 0.9").is_err());
        assert!(ExperimentConfig::parse_text("private.source = csv").is_err());
        assert!(ExperimentConfig::parse_text("private.n = 10\nprivate.path = x.csv").is_err());
        assert!(ExperimentConfig::parse_text("orders = 2,1.5").is_err());
        assert!(ExperimentConfig::parse_text("target_delta = 0").is_err());
    }

    #[test]
    fn comments_and_sources() {
        let c = ExperimentConfig::parse_text(
            "# run\nseed = 9 # trailing\n\nprivate.path = a.csv\npublic.n = 50\nquery_count = all\n",
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.data.private, DataSource::Csv { path: "a.csv".into() });
        assert_eq!(c.data.public, DataSource::Synthetic { n: 50 });
        assert_eq!(c.query_count, None);
    }
}
