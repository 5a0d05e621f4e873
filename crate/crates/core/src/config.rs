//! Experiment configuration: one JSON document plus dotted-path overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::analysis::Entry;
use crate::cohort::{Behavior, CovariateSpec, GroundTruthDynamics};
use crate::error::{Error, Result};
use crate::mdp::ActionId;
use crate::ordinal::FitSettings;
use crate::policy::{Covariate, CovariateGrid, RewardParameters, REMISSION, TREATMENT};

/// Configuration bundled with the binary; reproduces the reference study.
pub const DEFAULT_CONFIG_JSON: &str = include_str!("../configs/default.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub g: f64,
    /// `costs[a-1]` is C_a.
    pub costs: Vec<f64>,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub settings: FitSettings,
    /// One model per `(s, a)` pooled over epochs when true.
    pub time_homogeneous: bool,
    /// Transition-model covariates, in column order.
    pub design: Vec<Covariate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ApproachConfig {
    NonAdaptive,
    Adaptive {
        /// Explicit grid; when absent, `grid_covariates` are cut at the
        /// training-cohort tertiles.
        #[serde(default)]
        grid: Option<CovariateGrid>,
        #[serde(default)]
        grid_covariates: Vec<Covariate>,
        smoothing: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub training_patients: usize,
    /// Initial stage law; uniform when absent.
    #[serde(default)]
    pub initial_distribution: Option<Vec<f64>>,
    pub behavior: Behavior,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityRequest {
    pub covariate: Covariate,
    pub entries: Vec<Entry>,
    /// Explicit grid; otherwise `points` values over mean ± 3 sd.
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub sensitivity: Vec<SensitivityRequest>,
    pub reps: usize,
    pub points: usize,
    pub level: f64,
    pub income_pairs: Vec<(f64, f64)>,
    pub group_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// number of stages J
    pub stages: usize,
    /// horizon N
    pub horizon: usize,
    pub covariates: CovariateSpec,
    pub ground_truth: GroundTruthDynamics,
    pub reward: RewardConfig,
    pub fit: FitConfig,
    pub approach: ApproachConfig,
    pub simulation: SimulationConfig,
    pub analysis: AnalysisConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let entries = vec![(4, 1), (3, 2), (2, 3), (5, 3)];
        let ground_truth = GroundTruthDynamics::reference();
        ExperimentConfig {
            seed: 20_240_501,
            output_dir: PathBuf::from("out"),
            stages: 3,
            horizon: 8,
            covariates: CovariateSpec::default(),
            fit: FitConfig {
                settings: FitSettings::default(),
                time_homogeneous: true,
                design: ground_truth.covariates.clone(),
            },
            ground_truth,
            reward: RewardConfig {
                g: 0.7,
                costs: vec![0.0, 5000.0],
                lambda: 1.2,
            },
            approach: ApproachConfig::NonAdaptive,
            simulation: SimulationConfig {
                training_patients: 500,
                initial_distribution: None,
                behavior: Behavior::UniformRandom,
            },
            analysis: AnalysisConfig {
                sensitivity: vec![
                    SensitivityRequest {
                        covariate: Covariate::Age,
                        entries: entries.clone(),
                        grid: None,
                    },
                    SensitivityRequest {
                        covariate: Covariate::BloodPressure,
                        entries,
                        grid: None,
                    },
                ],
                reps: 100,
                points: 21,
                level: 0.95,
                income_pairs: vec![(10_000.0, 80_000.0), (20_000.0, 70_000.0), (30_000.0, 50_000.0), (40_000.0, 45_000.0)],
                group_size: 100,
            },
        }
    }
}

/// Parses a JSON document, reporting the offending field path on failure.
pub fn from_value(value: Value) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path == "." { "<root>".into() } else { path }, e.into_inner().to_string())
    })?;
    config.validate()?;
    Ok(config)
}

/// Replaces the value at a dotted path such as `reward.lambda` or
/// `analysis.income_pairs.0.1`. The right-hand side is read as JSON and
/// falls back to a plain string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must have the form key=value"))?;
    let new_value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for part in key.split('.') {
        node = match node {
            Value::Object(map) => map
                .get_mut(part)
                .ok_or_else(|| Error::config(key, format!("unknown field `{part}`")))?,
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::config(key, format!("`{part}` is not an array index")))?;
                let len = items.len();
                items
                    .get_mut(idx)
                    .ok_or_else(|| Error::config(key, format!("index {idx} out of range for length {len}")))?
            }
            _ => return Err(Error::config(key, format!("cannot descend into `{part}`"))),
        };
    }
    *node = new_value;
    Ok(())
}

/// Loads `path` (or the bundled default) and applies overrides in order.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)?,
        None => DEFAULT_CONFIG_JSON.to_string(),
    };
    let mut value: Value = serde_json::from_str(&text)?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    from_value(value)
}

impl ExperimentConfig {
    pub fn actions(&self) -> Vec<ActionId> {
        (1..=self.reward.costs.len()).collect()
    }

    pub fn reward_parameters(&self) -> RewardParameters {
        RewardParameters {
            g: self.reward.g,
            costs: self.reward.costs.clone(),
            lambda: self.reward.lambda,
            horizon: self.horizon,
            num_states: self.stages,
        }
    }

    pub fn initial_distribution(&self) -> Vec<f64> {
        self.simulation
            .initial_distribution
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.stages as f64; self.stages])
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages < 2 {
            return Err(Error::config("stages", "must be at least 2"));
        }
        if self.horizon < 2 {
            return Err(Error::config("horizon", "must be at least 2"));
        }
        self.reward_parameters().validate()?;
        if self.reward.costs.len() < TREATMENT.max(REMISSION) {
            return Err(Error::config("reward.costs", "needs costs for remission and treatment"));
        }
        self.covariates.validate()?;
        let defined = |c: Covariate| match c {
            Covariate::Marker(k) => k < self.covariates.marker_probabilities.len(),
            _ => true,
        };
        for (field, list) in [("fit.design", &self.fit.design), ("ground_truth.covariates", &self.ground_truth.covariates)] {
            if let Some(c) = list.iter().find(|c| !defined(**c)) {
                return Err(Error::config(field, format!("covariate {c} is not defined")));
            }
        }
        if self.fit.design.is_empty() {
            return Err(Error::config("fit.design", "at least one covariate is required"));
        }
        if self.fit.settings.max_iterations == 0 {
            return Err(Error::config("fit.settings.max_iterations", "must be positive"));
        }
        self.ground_truth
            .to_models(self.stages, &self.actions())
            .map_err(|e| match e {
                Error::Config { .. } => e,
                other => Error::config("ground_truth", other.to_string()),
            })?;
        if let ApproachConfig::Adaptive { grid, grid_covariates, .. } = &self.approach {
            match grid {
                Some(g) => {
                    CovariateGrid::new(g.dimensions.clone())?;
                }
                None if grid_covariates.is_empty() => {
                    return Err(Error::config("approach.grid_covariates", "give a grid or covariates to bin"));
                }
                None => {}
            }
            let used = grid
                .as_ref()
                .map(|g| g.dimensions.iter().map(|d| d.covariate).collect())
                .unwrap_or_else(|| grid_covariates.clone());
            if let Some(c) = used.iter().find(|c| !defined(**c)) {
                return Err(Error::config("approach", format!("covariate {c} is not defined")));
            }
        }
        if self.simulation.training_patients == 0 {
            return Err(Error::config("simulation.training_patients", "must be positive"));
        }
        if let Some(d) = &self.simulation.initial_distribution {
            let total: f64 = d.iter().sum();
            if d.len() != self.stages || d.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::config(
                    "simulation.initial_distribution",
                    format!("must be a probability vector of length {}", self.stages),
                ));
            }
        }
        if let Behavior::Always(a) = self.simulation.behavior {
            if !self.actions().contains(&a) {
                return Err(Error::config("simulation.behavior", format!("action {a} is not defined")));
            }
        }
        let a = &self.analysis;
        if a.reps == 0 {
            return Err(Error::config("analysis.reps", "must be positive"));
        }
        if a.points < 2 {
            return Err(Error::config("analysis.points", "must be at least 2"));
        }
        if !(a.level > 0.0 && a.level < 1.0) {
            return Err(Error::config("analysis.level", "must lie in (0, 1)"));
        }
        if a.group_size == 0 {
            return Err(Error::config("analysis.group_size", "must be positive"));
        }
        for (k, req) in a.sensitivity.iter().enumerate() {
            if !defined(req.covariate) {
                return Err(Error::config(
                    format!("analysis.sensitivity[{k}].covariate"),
                    format!("covariate {} is not defined", req.covariate),
                ));
            }
            for &(t, s) in &req.entries {
                if !(1..self.horizon).contains(&t) || !(1..=self.stages).contains(&s) {
                    return Err(Error::config(
                        format!("analysis.sensitivity[{k}].entries"),
                        format!("entry ({t}, {s}) lies outside the {}×{} action matrix", self.horizon - 1, self.stages),
                    ));
                }
            }
            if let Some(g) = &req.grid {
                if g.is_empty() || g.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::config(
                        format!("analysis.sensitivity[{k}].grid"),
                        "must be non-empty and strictly increasing",
                    ));
                }
            }
        }
        for (k, &(lo, hi)) in a.income_pairs.iter().enumerate() {
            if !(lo > 0.0 && hi > 0.0 && lo < hi) {
                return Err(Error::config(
                    format!("analysis.income_pairs[{k}]"),
                    "needs positive incomes with low < high",
                ));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, excluding `output_dir`.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut value {
            map.remove("output_dir");
        }
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_config_matches_default() {
        let bundled = load(None, &[]).unwrap();
        assert_eq!(bundled, ExperimentConfig::default());
    }

    #[test]
    fn overrides_replace_nested_values() {
        let c = load(None, &["reward.lambda=0.5".into(), "analysis.income_pairs.0.1=90000".into()]).unwrap();
        assert_eq!(c.reward.lambda, 0.5);
        assert_eq!(c.analysis.income_pairs[0], (10_000.0, 90_000.0));
        let err = load(None, &["reward.lamda=1".into()]).unwrap_err();
        assert!(err.to_string().contains("reward.lamda"), "{err}");
    }

    #[test]
    fn invalid_values_name_their_field() {
        for (set, field) in [
            ("horizon=1", "horizon"),
            ("reward.costs=[1,2]", "reward.costs"),
            ("analysis.level=1.5", "analysis.level"),
            ("reward.g=\"high\"", "reward.g"),
            ("analysis.sensitivity.0.entries=[[8,1]]", "analysis.sensitivity[0].entries"),
        ] {
            let err = load(None, &[set.to_string()]).unwrap_err();
            assert!(err.to_string().contains(field), "{set}: {err}");
        }
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn seed_is_required() {
        let mut v: Value = serde_json::from_str(DEFAULT_CONFIG_JSON).unwrap();
        v.as_object_mut().unwrap().remove("seed");
        assert!(from_value(v).unwrap_err().to_string().contains("seed"));
    }
}
