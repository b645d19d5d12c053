use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::dyadic::DyadicTime;

/// How to obtain the instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    /// Known `S = M + A` on a binary tree.
    GroundTruth,
    /// `W²` for a scaled sign walk on a binary tree.
    SquaredWalk,
    /// Known `S = M + A` on a random refining filtration.
    Random,
}

/// A stopping time given in the config.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StoppingSpec {
    /// `τ ≡ t`.
    Constant(DyadicTime),
    /// First master time with `S > c`.
    Hitting(f64),
}

/// A deliberate predictable jump of the ground-truth compensator.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpSpec {
    pub time: DyadicTime,
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Instance file; takes precedence over `generator`.
    pub instance: Option<PathBuf>,
    pub generator: Option<Generator>,
    pub seed: Option<u64>,
    /// Master depth of generated instances.
    pub depth: Option<u32>,
    /// Signs of a binary tree; defaults to `min(2^depth, 8)`.
    pub signs: Option<u32>,
    /// Atoms of a random tree.
    pub atoms: usize,
    /// Grid level on which a ground-truth compensator is predictable; defaults to the depth.
    pub predictable_level: Option<u32>,
    pub jump_scale: f64,
    pub jump: Option<JumpSpec>,
    /// Smallest and largest pipeline level; default `1..=depth`.
    pub min_level: Option<u32>,
    pub max_level: Option<u32>,
    pub thresholds: Vec<f64>,
    /// Probe times of the convergence curve.
    pub times: Vec<DyadicTime>,
    pub stopping_times: Vec<StoppingSpec>,
    pub tol: f64,
    pub recovery_tol: f64,
    pub jump_threshold: f64,
    pub predictability_tol: f64,
    /// Treat predictability-surrogate failures as invariant failures.
    pub check_predictability: bool,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            instance: None,
            generator: None,
            seed: None,
            depth: None,
            signs: None,
            atoms: 16,
            predictable_level: None,
            jump_scale: 1.0,
            jump: None,
            min_level: None,
            max_level: None,
            thresholds: vec![0.5, 1.0, 2.0, 4.0],
            times: vec![DyadicTime::ONE],
            stopping_times: Vec::new(),
            tol: crate::komlos::DEFAULT_TOL,
            recovery_tol: 1e-10,
            jump_threshold: crate::limit::JUMP_THRESHOLD,
            predictability_tol: 1e-9,
            check_predictability: false,
            out: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("config line {}, column {}: {e}", e.line(), e.column()))
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::from_json(&text)
    }

    /// Checks that do not need the instance.
    pub fn validate(&self) -> Result<(), String> {
        if self.instance.is_none() {
            let Some(generator) = self.generator else {
                return Err("either an instance file or a generator is required".into());
            };
            if self.seed.is_none() && generator != Generator::SquaredWalk {
                return Err("a seed is required when generating".into());
            }
            if self.depth.is_none() {
                return Err("a depth is required when generating".into());
            }
        }
        if let Some(&c) = self.thresholds.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
            return Err(format!("thresholds must be positive, got {c}"));
        }
        if self.thresholds.is_empty() {
            return Err("threshold grid is empty".into());
        }
        for (name, v) in [
            ("tol", self.tol),
            ("recovery_tol", self.recovery_tol),
            ("jump_threshold", self.jump_threshold),
            ("predictability_tol", self.predictability_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if let (Some(lo), Some(hi)) = (self.min_level, self.max_level) {
            if lo > hi {
                return Err(format!("min_level {lo} exceeds max_level {hi}"));
            }
        }
        Ok(())
    }

    /// Pipeline levels, checked against the master depth.
    pub fn levels(&self, depth: u32) -> Result<Vec<u32>, String> {
        let lo = self.min_level.unwrap_or(1);
        let hi = self.max_level.unwrap_or(depth);
        if hi > depth {
            return Err(format!("max_level {hi} exceeds the master depth {depth}"));
        }
        if lo > hi {
            return Err(format!("min_level {lo} exceeds max_level {hi}"));
        }
        Ok((lo..=hi).collect())
    }
}
