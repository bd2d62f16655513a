use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::gadmm::BitPolicy;
use crate::netsim::{LinkBudget, PowerFormula};
use crate::quantizer::Accounting;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Gadmm,
    Qgadmm,
    Sgadmm,
    Qsgadmm,
    Gd,
    Qgd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Gadmm,
        Algorithm::Qgadmm,
        Algorithm::Sgadmm,
        Algorithm::Qsgadmm,
        Algorithm::Gd,
        Algorithm::Qgd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Gadmm => "gadmm",
            Algorithm::Qgadmm => "qgadmm",
            Algorithm::Sgadmm => "sgadmm",
            Algorithm::Qsgadmm => "qsgadmm",
            Algorithm::Gd => "gd",
            Algorithm::Qgd => "qgd",
        }
    }

    pub fn is_decentralized(self) -> bool {
        !matches!(self, Algorithm::Gd | Algorithm::Qgd)
    }

    pub fn is_quantized(self) -> bool {
        matches!(self, Algorithm::Qgadmm | Algorithm::Qsgadmm | Algorithm::Qgd)
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, Algorithm::Sgadmm | Algorithm::Qsgadmm)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| HarnessError::Config(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Synthetic,
    Csv(PathBuf),
}

/// One experiment: an algorithm run over a list of seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub task: Task,
    pub n_workers: usize,
    pub rho: f64,
    /// Dual damping for the decentralized algorithms.
    pub alpha: f64,
    pub bit_policy: BitPolicy,
    pub accounting: Accounting,
    pub budget: LinkBudget,
    pub side: f64,
    pub seeds: Vec<u64>,
    pub max_iters: usize,
    /// Regression: objective gap. Classification: training loss.
    pub target_loss: f64,
    /// Classification only: when set, the target becomes this multiple of
    /// the centralized reference loss.
    pub target_ratio: Option<f64>,
    pub data: DataSource,
    pub samples: usize,
    pub dim: usize,
    pub noise: f64,
    pub condition: f64,
    pub separation: f64,
    /// Mini-batch size for the stochastic variants.
    pub minibatch: usize,
    pub inner_steps: usize,
    pub inner_lr: Option<f64>,
    /// Parameter-server step size; `None` picks `1/L`.
    pub eta: Option<f64>,
    pub early_stop_tol: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Qgadmm,
            task: Task::Regression,
            n_workers: 10,
            rho: 24.0,
            alpha: 1.0,
            bit_policy: BitPolicy::Fixed(2),
            accounting: Accounting::Experiment,
            budget: LinkBudget::default(),
            side: 250.0,
            seeds: vec![0],
            max_iters: 1000,
            target_loss: 1e-4,
            target_ratio: None,
            data: DataSource::Synthetic,
            samples: 1000,
            dim: 6,
            noise: 0.1,
            condition: 10.0,
            separation: 3.0,
            minibatch: 100,
            inner_steps: 10,
            inner_lr: None,
            eta: None,
            early_stop_tol: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value
        .trim()
        .parse()
        .map_err(|_| HarnessError::Config(format!("{key}: cannot parse {value:?}")))
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, HarnessError> {
    match value.trim() {
        "" | "none" | "auto" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

/// `0,3,7` or a half-open range `0..20`.
fn parse_seeds(value: &str) -> Result<Vec<u64>, HarnessError> {
    if let Some((a, b)) = value.split_once("..") {
        let (a, b): (u64, u64) = (parse("seeds", a)?, parse("seeds", b)?);
        return Ok((a..b).collect());
    }
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse("seeds", s))
        .collect()
}

/// `2` for a fixed width, `adaptive:<initial>:<floor>` for the adaptive rule.
fn parse_bits(value: &str) -> Result<BitPolicy, HarnessError> {
    let value = value.trim();
    match value.strip_prefix("adaptive") {
        Some(rest) => {
            let parts: Vec<&str> = rest.split(':').filter(|s| !s.is_empty()).collect();
            let initial = match parts.first() {
                Some(p) => parse("bits", p)?,
                None => 2,
            };
            let floor = match parts.get(1) {
                Some(p) => parse("bits", p)?,
                None => initial,
            };
            Ok(BitPolicy::Adaptive { initial, floor })
        }
        None => Ok(BitPolicy::Fixed(parse("bits", value)?)),
    }
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let key = key.trim();
        match key {
            "algorithm" | "algo" => self.algorithm = value.parse()?,
            "task" => {
                self.task = match value.trim() {
                    "regression" => Task::Regression,
                    "classification" => Task::Classification,
                    v => return Err(HarnessError::Config(format!("unknown task {v:?}"))),
                }
            }
            "n_workers" | "workers" => self.n_workers = parse(key, value)?,
            "rho" => self.rho = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "bits" => self.bit_policy = parse_bits(value)?,
            "accounting" => {
                self.accounting = match value.trim() {
                    "experiment" => Accounting::Experiment,
                    "full" => Accounting::Full,
                    v => return Err(HarnessError::Config(format!("unknown accounting {v:?}"))),
                }
            }
            "bandwidth" => self.budget.total_bandwidth = parse(key, value)?,
            "noise_density" | "n0" => self.budget.noise_density = parse(key, value)?,
            "slot_time" | "tau" => self.budget.slot_time = parse(key, value)?,
            "power_formula" => {
                self.budget.formula = match value.trim() {
                    "slot_scaled" => PowerFormula::SlotScaled,
                    "standard" => PowerFormula::Standard,
                    v => return Err(HarnessError::Config(format!("unknown power formula {v:?}"))),
                }
            }
            "side" | "grid_side" => self.side = parse(key, value)?,
            "seeds" | "seed" => self.seeds = parse_seeds(value)?,
            "max_iters" => self.max_iters = parse(key, value)?,
            "target_loss" => self.target_loss = parse(key, value)?,
            "target_ratio" => self.target_ratio = optional(key, value)?,
            "data" | "dataset" => {
                self.data = match value.trim() {
                    "synthetic" => DataSource::Synthetic,
                    path => DataSource::Csv(PathBuf::from(path)),
                }
            }
            "samples" => self.samples = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "noise" => self.noise = parse(key, value)?,
            "condition" => self.condition = parse(key, value)?,
            "separation" => self.separation = parse(key, value)?,
            "minibatch" => self.minibatch = parse(key, value)?,
            "inner_steps" => self.inner_steps = parse(key, value)?,
            "inner_lr" => self.inner_lr = optional(key, value)?,
            "eta" => self.eta = optional(key, value)?,
            "early_stop_tol" => self.early_stop_tol = optional(key, value)?,
            _ => return Err(HarnessError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses flat `key = value` text. Blank lines and `#` comments are
    /// ignored; keys not mentioned keep their defaults.
    pub fn parse_str(text: &str) -> Result<Self, HarnessError> {
        let mut config = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", lineno + 1)))?;
            config.set(key, value)?;
        }
        Ok(config)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse_str(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: &str| Err(HarnessError::Config(m.to_string()));
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if self.n_workers < 2 {
            return err("n_workers must be at least 2");
        }
        if self.seeds.is_empty() {
            return err("seeds must not be empty");
        }
        if self.max_iters == 0 {
            return err("max_iters must be at least 1");
        }
        if !positive(self.rho) || !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return err("rho must be positive and alpha in (0, 1]");
        }
        if ![
            self.budget.total_bandwidth,
            self.budget.noise_density,
            self.budget.slot_time,
            self.side,
            self.target_loss,
        ]
        .into_iter()
        .all(positive)
        {
            return err("physical quantities and target_loss must be positive");
        }
        if self.target_ratio.is_some_and(|r| !positive(r)) {
            return err("target_ratio must be positive");
        }
        if self.dim == 0 || self.samples < self.n_workers || self.minibatch == 0 || self.inner_steps == 0 {
            return err("dim, minibatch and inner_steps must be positive and samples at least n_workers");
        }
        if !(self.noise >= 0.0 && self.condition >= 1.0 && self.separation >= 0.0) {
            return err("noise and separation must be non-negative and condition at least 1");
        }
        if self.eta.is_some_and(|e| !positive(e)) || self.inner_lr.is_some_and(|e| !positive(e)) {
            return err("eta and inner_lr must be positive");
        }
        if self.algorithm.is_stochastic() && self.task != Task::Classification {
            return err("stochastic variants run on the classification task only");
        }
        let bits_ok = |b: u32| (1..=crate::quantizer::MAX_BITS).contains(&b);
        let policy_ok = match self.bit_policy {
            BitPolicy::Fixed(b) => bits_ok(b),
            BitPolicy::Adaptive { initial, floor } => bits_ok(initial) && bits_ok(floor),
        };
        if !policy_ok {
            return err("bit widths must lie in 1..=52");
        }
        if self.algorithm == Algorithm::Qgd && matches!(self.bit_policy, BitPolicy::Adaptive { .. }) {
            return err("qgd supports fixed bit widths only");
        }
        Ok(())
    }

    /// Bit width used when a fixed width is needed.
    pub fn fixed_bits(&self) -> u32 {
        match self.bit_policy {
            BitPolicy::Fixed(b) => b,
            BitPolicy::Adaptive { initial, .. } => initial,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_text_with_comments() {
        let text = "# demo\nalgorithm = gd\nseeds = 0..3\nbits = adaptive:2:1\nrho=12 # inline\npower_formula = standard\n";
        let cfg = ExperimentConfig::parse_str(text).unwrap();
        assert_eq!(cfg.algorithm, Algorithm::Gd);
        assert_eq!(cfg.seeds, vec![0, 1, 2]);
        assert_eq!(cfg.bit_policy, BitPolicy::Adaptive { initial: 2, floor: 1 });
        assert_eq!(cfg.rho, 12.0);
        assert_eq!(cfg.budget.formula, PowerFormula::Standard);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::parse_str("nonsense").is_err());
        assert!(ExperimentConfig::parse_str("colour = red").is_err());
        assert!(ExperimentConfig::parse_str("rho = fast").is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            algorithm: Algorithm::Sgadmm,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            budget: bandwidth_zero(),
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    fn bandwidth_zero() -> LinkBudget {
        LinkBudget {
            total_bandwidth: 0.0,
            ..LinkBudget::default()
        }
    }
}
