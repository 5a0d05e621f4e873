//! Per-patient MDPs built from covariate-driven transition models.
//!
//! The non-adaptive build fixes the patient's covariates at diagnosis and
//! reads every kernel row off a fitted proportional-odds model. The adaptive
//! build discretizes covariates into a finite grid, augments the state space
//! with the grid cell and estimates transitions by relative frequency.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::mdp::{backward_induction, ActionId, FiniteHorizonMdp, PolicySolution};
use crate::ordinal::{FittedOrdinalModel, ModelContext};

/// Observational surveillance; carries no cost.
pub const REMISSION: ActionId = 1;
/// Chemotherapeutic treatment.
pub const TREATMENT: ActionId = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Covariate {
    Age,
    BloodPressure,
    Exposure,
    Hormone,
    Income,
    /// Optional binary marker-gene column, 0-based.
    Marker(usize),
}

impl Covariate {
    pub const STANDARD: [Covariate; 5] = [
        Covariate::Age,
        Covariate::BloodPressure,
        Covariate::Exposure,
        Covariate::Hormone,
        Covariate::Income,
    ];

    pub fn is_indicator(self) -> bool {
        matches!(self, Covariate::Exposure | Covariate::Marker(_))
    }
}

impl fmt::Display for Covariate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Covariate::Age => f.write_str("age"),
            Covariate::BloodPressure => f.write_str("blood_pressure"),
            Covariate::Exposure => f.write_str("exposure"),
            Covariate::Hormone => f.write_str("hormone"),
            Covariate::Income => f.write_str("income"),
            Covariate::Marker(k) => write!(f, "marker_{}", k + 1),
        }
    }
}

impl FromStr for Covariate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "age" => Covariate::Age,
            "blood_pressure" | "bp" => Covariate::BloodPressure,
            "exposure" => Covariate::Exposure,
            "hormone" => Covariate::Hormone,
            "income" => Covariate::Income,
            other => match other.strip_prefix("marker_").and_then(|k| k.parse::<usize>().ok()) {
                Some(k) if k >= 1 => Covariate::Marker(k - 1),
                _ => return Err(Error::Data(format!("unknown covariate `{other}`"))),
            },
        })
    }
}

impl Serialize for Covariate {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Covariate {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One patient's covariates at diagnosis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateProfile {
    /// years
    pub age: f64,
    /// systolic, mmHg
    pub blood_pressure: f64,
    /// radioactive-exposure indicator, 0 or 1
    pub exposure: f64,
    pub hormone: f64,
    /// θ, currency units
    pub income: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub markers: Vec<f64>,
}

impl CovariateProfile {
    pub fn get(&self, covariate: Covariate) -> Option<f64> {
        match covariate {
            Covariate::Age => Some(self.age),
            Covariate::BloodPressure => Some(self.blood_pressure),
            Covariate::Exposure => Some(self.exposure),
            Covariate::Hormone => Some(self.hormone),
            Covariate::Income => Some(self.income),
            Covariate::Marker(k) => self.markers.get(k).copied(),
        }
    }

    pub fn set(&mut self, covariate: Covariate, value: f64) {
        match covariate {
            Covariate::Age => self.age = value,
            Covariate::BloodPressure => self.blood_pressure = value,
            Covariate::Exposure => self.exposure = value,
            Covariate::Hormone => self.hormone = value,
            Covariate::Income => self.income = value,
            Covariate::Marker(k) => {
                if self.markers.len() <= k {
                    self.markers.resize(k + 1, 0.0);
                }
                self.markers[k] = value;
            }
        }
    }

    /// Covariate names present on this profile, in column order.
    pub fn columns(&self) -> Vec<Covariate> {
        let mut cols = Covariate::STANDARD.to_vec();
        cols.extend((0..self.markers.len()).map(Covariate::Marker));
        cols
    }

    pub fn validate(&self) -> Result<()> {
        for c in self.columns() {
            let v = self.get(c).unwrap_or(f64::NAN);
            if !v.is_finite() {
                return Err(Error::Data(format!("covariate {c} is not finite")));
            }
            if c.is_indicator() && v != 0.0 && v != 1.0 {
                return Err(Error::Data(format!("indicator {c} must be 0 or 1, got {v}")));
            }
        }
        if self.income <= 0.0 {
            return Err(Error::Data(format!("income must be positive, got {}", self.income)));
        }
        Ok(())
    }

    /// Values of `design` in order.
    pub fn design_vector(&self, design: &[Covariate]) -> Result<Vec<f64>> {
        design
            .iter()
            .map(|&c| {
                self.get(c)
                    .ok_or_else(|| Error::Data(format!("profile has no covariate {c}")))
            })
            .collect()
    }
}

/// Reward constants shared by every patient; income enters per patient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardParameters {
    /// geographic factor g
    pub g: f64,
    /// `costs[a-1]` is C_a; the remission cost must be zero
    pub costs: Vec<f64>,
    /// decay rate λ per epoch
    pub lambda: f64,
    /// horizon N
    pub horizon: usize,
    /// number of stages J
    pub num_states: usize,
}

impl RewardParameters {
    pub fn validate(&self) -> Result<()> {
        if !(self.g > 0.0 && self.g.is_finite()) {
            return Err(Error::config("reward.g", "must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("reward.lambda", "must be non-negative"));
        }
        if self.costs.is_empty() {
            return Err(Error::config("reward.costs", "at least one action cost is required"));
        }
        if self.costs[REMISSION - 1] != 0.0 {
            return Err(Error::config("reward.costs", "remission cost must be zero"));
        }
        if self.costs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::config("reward.costs", "costs must be finite and non-negative"));
        }
        if self.horizon < 2 {
            return Err(Error::config("horizon", "must be at least 2"));
        }
        if self.num_states < 1 {
            return Err(Error::config("stages", "must be at least 1"));
        }
        Ok(())
    }

    pub fn num_actions(&self) -> usize {
        self.costs.len()
    }

    pub fn cost(&self, a: ActionId) -> f64 {
        self.costs[a - 1]
    }
}

/// `g(i-j)/(t+1)^2 - (C_a/θ) e^{-λt}`.
pub fn stage_reward(i: usize, j: usize, a: ActionId, t: usize, params: &RewardParameters, income: f64) -> f64 {
    let gain = params.g * (i as f64 - j as f64) / ((t + 1) as f64).powi(2);
    let cost = params.cost(a);
    if cost == 0.0 {
        return gain;
    }
    gain - cost / income * (-params.lambda * t as f64).exp()
}

/// `g(J-j)/(N+1)^2`.
pub fn terminal_reward(j: usize, params: &RewardParameters) -> f64 {
    params.g * (params.num_states as f64 - j as f64) / ((params.horizon + 1) as f64).powi(2)
}

/// Transition models keyed by `(t?, s, a)` over a shared covariate design.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionModels {
    design: Vec<Covariate>,
    num_states: usize,
    actions: Vec<ActionId>,
    models: BTreeMap<ModelContext, FittedOrdinalModel<f64>>,
}

impl TransitionModels {
    /// Every state admits every action in `actions`.
    pub fn new(
        design: Vec<Covariate>,
        num_states: usize,
        actions: Vec<ActionId>,
        models: impl IntoIterator<Item = FittedOrdinalModel<f64>>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for m in models {
            if m.num_covariates() != design.len() {
                return Err(Error::DimensionMismatch {
                    expected: design.len(),
                    actual: m.num_covariates(),
                });
            }
            if m.num_categories() != num_states {
                return Err(Error::InvalidParameters(format!(
                    "model for state {} action {} has {} categories, expected {num_states}",
                    m.context.state,
                    m.context.action,
                    m.num_categories()
                )));
            }
            map.insert(m.context, m);
        }
        Ok(TransitionModels {
            design,
            num_states,
            actions,
            models: map,
        })
    }

    pub fn design(&self) -> &[Covariate] {
        &self.design
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn actions(&self) -> &[ActionId] {
        &self.actions
    }

    pub fn models(&self) -> impl Iterator<Item = &FittedOrdinalModel<f64>> {
        self.models.values()
    }

    /// Epoch-specific model if present, else the pooled one.
    pub fn get(&self, t: usize, s: usize, a: ActionId) -> Result<&FittedOrdinalModel<f64>> {
        let specific = ModelContext {
            state: s,
            action: a,
            epoch: Some(t),
        };
        self.models
            .get(&specific)
            .or_else(|| self.models.get(&ModelContext::pooled(s, a)))
            .ok_or(Error::MissingModel {
                state: s,
                action: a,
                epoch: Some(t),
            })
    }

    pub fn kernel_row(&self, t: usize, s: usize, a: ActionId, profile: &CovariateProfile) -> Result<Vec<f64>> {
        let x = profile.design_vector(&self.design)?;
        self.get(t, s, a)?.predict_row(&x)
    }
}

/// MDP for one patient with covariates fixed at diagnosis.
pub fn build_nonadaptive_mdp(
    models: &TransitionModels,
    profile: &CovariateProfile,
    params: &RewardParameters,
) -> Result<FiniteHorizonMdp<f64>> {
    let j_count = params.num_states;
    if models.num_states() != j_count {
        return Err(Error::config(
            "stages",
            format!("models describe {} states, rewards {j_count}", models.num_states()),
        ));
    }
    if let Some(&a) = models.actions().iter().find(|&&a| a == 0 || a > params.num_actions()) {
        return Err(Error::config("reward.costs", format!("no cost defined for action {a}")));
    }
    if !(profile.income > 0.0) {
        return Err(Error::Data(format!("income must be positive, got {}", profile.income)));
    }
    let x = profile.design_vector(models.design())?;
    let actions = models.actions().to_vec();
    let mut kernel = Vec::with_capacity(params.horizon - 1);
    let mut rewards = Vec::with_capacity(params.horizon - 1);
    // pooled models give the same row at every epoch
    let mut cache: BTreeMap<(usize, usize, ActionId), Vec<f64>> = BTreeMap::new();
    for t in 1..params.horizon {
        let mut k_t = Vec::with_capacity(j_count);
        let mut r_t = Vec::with_capacity(j_count);
        for i in 1..=j_count {
            let mut rows = Vec::with_capacity(actions.len());
            let mut rr = Vec::with_capacity(actions.len());
            for &a in &actions {
                let model = models.get(t, i, a)?;
                let key = (model.context.epoch.unwrap_or(0), i, a);
                let row = match cache.get(&key) {
                    Some(r) => r.clone(),
                    None => {
                        let r = model.predict_row(&x)?;
                        cache.insert(key, r.clone());
                        r
                    }
                };
                rows.push(row);
                rr.push(
                    (1..=j_count)
                        .map(|j| stage_reward(i, j, a, t, params, profile.income))
                        .collect(),
                );
            }
            k_t.push(rows);
            r_t.push(rr);
        }
        kernel.push(k_t);
        rewards.push(r_t);
    }
    let terminal = (1..=j_count).map(|j| terminal_reward(j, params)).collect();
    FiniteHorizonMdp::new(j_count, params.horizon, vec![actions; j_count], kernel, rewards, terminal)
}

/// Optimal action matrix and values for one MDP.
pub fn action_matrix(mdp: &FiniteHorizonMdp<f64>) -> PolicySolution<f64> {
    backward_induction(mdp)
}

/// Non-adaptive build followed by backward induction.
pub fn solve_profile(
    models: &TransitionModels,
    profile: &CovariateProfile,
    params: &RewardParameters,
) -> Result<PolicySolution<f64>> {
    Ok(action_matrix(&build_nonadaptive_mdp(models, profile, params)?))
}

/// Cut points of one grid dimension; a value's level is the number of cuts
/// at or below it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDimension {
    pub covariate: Covariate,
    pub cuts: Vec<f64>,
}

impl GridDimension {
    pub fn levels(&self) -> usize {
        self.cuts.len() + 1
    }

    pub fn level_of(&self, v: f64) -> usize {
        self.cuts.partition_point(|c| *c <= v)
    }
}

/// Finite covariate sample space Ω as a product of binned dimensions.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct CovariateGrid {
    pub dimensions: Vec<GridDimension>,
}

impl CovariateGrid {
    pub fn new(dimensions: Vec<GridDimension>) -> Result<Self> {
        for d in &dimensions {
            if d.cuts.iter().any(|c| !c.is_finite()) || d.cuts.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::config(
                    format!("grid.{}", d.covariate),
                    "cuts must be finite and strictly increasing",
                ));
            }
        }
        Ok(CovariateGrid { dimensions })
    }

    /// Continuous covariates cut at sample tertiles, indicators kept binary.
    pub fn tertiles(profiles: &[CovariateProfile], covariates: &[Covariate]) -> Result<Self> {
        let mut dims = Vec::with_capacity(covariates.len());
        for &c in covariates {
            if c.is_indicator() {
                dims.push(GridDimension {
                    covariate: c,
                    cuts: vec![0.5],
                });
                continue;
            }
            let mut values: Vec<f64> = profiles
                .iter()
                .map(|p| p.get(c).ok_or_else(|| Error::Data(format!("profile has no covariate {c}"))))
                .collect::<Result<_>>()?;
            if values.is_empty() {
                return Err(Error::InsufficientData("no profiles to bin".into()));
            }
            values.sort_by(f64::total_cmp);
            let mut cuts: Vec<f64> = [1.0 / 3.0, 2.0 / 3.0]
                .iter()
                .map(|q| quantile_sorted(&values, *q))
                .collect();
            cuts.dedup();
            dims.push(GridDimension { covariate: c, cuts });
        }
        Self::new(dims)
    }

    pub fn size(&self) -> usize {
        self.dimensions.iter().map(GridDimension::levels).product()
    }

    /// Cell index in `0..size()`, first dimension most significant.
    pub fn cell_of(&self, profile: &CovariateProfile) -> Result<usize> {
        let mut cell = 0;
        for d in &self.dimensions {
            let v = profile
                .get(d.covariate)
                .ok_or_else(|| Error::Data(format!("profile has no covariate {}", d.covariate)))?;
            cell = cell * d.levels() + d.level_of(v);
        }
        Ok(cell)
    }

    pub fn levels_of(&self, mut cell: usize) -> Vec<usize> {
        let mut levels = vec![0; self.dimensions.len()];
        for (k, d) in self.dimensions.iter().enumerate().rev() {
            levels[k] = cell % d.levels();
            cell /= d.levels();
        }
        levels
    }
}

/// Linear-interpolated quantile of sorted data.
fn quantile_sorted(values: &[f64], q: f64) -> f64 {
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
}

/// `S × Ω` with a bijection onto labels `1..=J·|Ω|`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedStateSpace {
    pub num_states: usize,
    pub num_cells: usize,
}

impl AugmentedStateSpace {
    pub fn new(num_states: usize, grid: &CovariateGrid) -> Self {
        AugmentedStateSpace {
            num_states,
            num_cells: grid.size(),
        }
    }

    pub fn size(&self) -> usize {
        self.num_states * self.num_cells
    }

    /// Label of `(stage, cell)`; stage is 1-based, cell 0-based.
    pub fn index(&self, stage: usize, cell: usize) -> usize {
        (stage - 1) * self.num_cells + cell + 1
    }

    pub fn decode(&self, label: usize) -> (usize, usize) {
        ((label - 1) / self.num_cells + 1, (label - 1) % self.num_cells)
    }
}

/// Transition counts over augmented states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionCounts {
    space: AugmentedStateSpace,
    actions: Vec<ActionId>,
    counts: Vec<Vec<Vec<u64>>>,
}

impl TransitionCounts {
    pub fn new(space: AugmentedStateSpace, actions: Vec<ActionId>) -> Self {
        let n = space.size();
        TransitionCounts {
            space,
            counts: vec![vec![vec![0; n]; actions.len()]; n],
            actions,
        }
    }

    pub fn space(&self) -> AugmentedStateSpace {
        self.space
    }

    pub fn actions(&self) -> &[ActionId] {
        &self.actions
    }

    /// Checks the count array against the declared space, e.g. after
    /// deserialization.
    pub fn check(&self) -> Result<()> {
        let n = self.space.size();
        let ok = n > 0
            && !self.actions.is_empty()
            && self.counts.len() == n
            && self
                .counts
                .iter()
                .all(|per_action| per_action.len() == self.actions.len() && per_action.iter().all(|row| row.len() == n));
        if ok {
            Ok(())
        } else {
            Err(Error::Data("transition counts do not match their augmented state space".into()))
        }
    }

    fn action_position(&self, a: ActionId) -> Result<usize> {
        self.actions.iter().position(|&x| x == a).ok_or(Error::OutOfRange {
            what: "action",
            value: a.to_string(),
        })
    }

    /// Records one transition between augmented labels.
    pub fn add(&mut self, from: usize, a: ActionId, to: usize, count: u64) -> Result<()> {
        let k = self.action_position(a)?;
        let n = self.space.size();
        for label in [from, to] {
            if !(1..=n).contains(&label) {
                return Err(Error::OutOfRange {
                    what: "augmented state",
                    value: label.to_string(),
                });
            }
        }
        self.counts[from - 1][k][to - 1] += count;
        Ok(())
    }

    pub fn row(&self, from: usize, a: ActionId) -> Result<&[u64]> {
        let k = self.action_position(a)?;
        Ok(&self.counts[from - 1][k])
    }

    /// Augmented `(state, action)` pairs without any observation.
    pub fn empty_rows(&self) -> Vec<(usize, ActionId)> {
        let mut out = Vec::new();
        for (i, per_action) in self.counts.iter().enumerate() {
            for (k, row) in per_action.iter().enumerate() {
                if row.iter().all(|&c| c == 0) {
                    out.push((i + 1, self.actions[k]));
                }
            }
        }
        out
    }
}

/// MDP over `S × Ω` with empirical kernels.
///
/// All-zero rows become uniform over augmented states when `smoothing` is
/// on. Rewards ignore the covariate cell of both endpoints. `income` is the
/// patient's θ, fixed over the horizon.
pub fn build_adaptive_mdp(
    counts: &TransitionCounts,
    grid: &CovariateGrid,
    params: &RewardParameters,
    income: f64,
    smoothing: bool,
) -> Result<FiniteHorizonMdp<f64>> {
    let space = counts.space();
    if space.num_cells != grid.size() || space.num_states != params.num_states {
        return Err(Error::DimensionMismatch {
            expected: params.num_states * grid.size(),
            actual: space.size(),
        });
    }
    if !(income > 0.0) {
        return Err(Error::Data(format!("income must be positive, got {income}")));
    }
    let n = space.size();
    let mut rows = BTreeMap::new();
    for from in 1..=n {
        for &a in &counts.actions {
            let row = counts.row(from, a)?;
            let total: u64 = row.iter().sum();
            let probs = if total == 0 {
                if !smoothing {
                    return Err(Error::UnestimableRow { state: from, action: a });
                }
                vec![1.0 / n as f64; n]
            } else {
                row.iter().map(|&c| c as f64 / total as f64).collect()
            };
            rows.insert((from, a), probs);
        }
    }
    let terminal = (1..=n)
        .map(|label| terminal_reward(space.decode(label).0, params))
        .collect();
    FiniteHorizonMdp::from_fn(
        n,
        params.horizon,
        vec![counts.actions.clone(); n],
        |_, i, a| rows[&(i, a)].clone(),
        |t, i, a, j| stage_reward(space.decode(i).0, space.decode(j).0, a, t, params, income),
        terminal,
    )
}

/// Optimal action per `(t, stage, cell)` of an adaptive solution,
/// indexed `[t-1][stage-1][cell]`.
pub fn project_adaptive(solution: &PolicySolution<f64>, space: AugmentedStateSpace) -> Vec<Vec<Vec<ActionId>>> {
    (1..=solution.policy.epochs())
        .map(|t| {
            (1..=space.num_states)
                .map(|stage| {
                    (0..space.num_cells)
                        .map(|cell| solution.policy.action(t, space.index(stage, cell)))
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Optimal action per `(t, stage)`, indexed `[t-1][stage-1]`.
pub type ActionMatrix = Vec<Vec<ActionId>>;

/// Anything that yields a patient's action matrix from the profile at
/// diagnosis.
pub trait PolicyModel: Sync {
    fn action_matrix(&self, profile: &CovariateProfile, params: &RewardParameters) -> Result<ActionMatrix>;

    /// Whether changing `covariate` can change the kernel.
    fn uses_covariate(&self, covariate: Covariate) -> bool;
}

fn matrix_of(solution: &PolicySolution<f64>, num_states: usize) -> ActionMatrix {
    (1..=solution.policy.epochs())
        .map(|t| (1..=num_states).map(|s| solution.policy.action(t, s)).collect())
        .collect()
}

impl PolicyModel for TransitionModels {
    fn action_matrix(&self, profile: &CovariateProfile, params: &RewardParameters) -> Result<ActionMatrix> {
        Ok(matrix_of(&solve_profile(self, profile, params)?, params.num_states))
    }

    fn uses_covariate(&self, covariate: Covariate) -> bool {
        self.design().contains(&covariate)
    }
}

/// Empirical augmented-state model of the adaptive approach.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveModel {
    pub counts: TransitionCounts,
    pub grid: CovariateGrid,
    pub smoothing: bool,
}

impl AdaptiveModel {
    pub fn solve(&self, income: f64, params: &RewardParameters) -> Result<PolicySolution<f64>> {
        Ok(action_matrix(&build_adaptive_mdp(&self.counts, &self.grid, params, income, self.smoothing)?))
    }
}

impl PolicyModel for AdaptiveModel {
    /// Rows of the patient's own covariate cell.
    fn action_matrix(&self, profile: &CovariateProfile, params: &RewardParameters) -> Result<ActionMatrix> {
        let cell = self.grid.cell_of(profile)?;
        let space = self.counts.space();
        let projected = project_adaptive(&self.solve(profile.income, params)?, space);
        Ok(projected
            .into_iter()
            .map(|per_stage| per_stage.into_iter().map(|cells| cells[cell]).collect())
            .collect())
    }

    fn uses_covariate(&self, covariate: Covariate) -> bool {
        self.grid.dimensions.iter().any(|d| d.covariate == covariate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_params() -> RewardParameters {
        RewardParameters {
            g: 0.7,
            costs: vec![0.0, 5000.0],
            lambda: 1.2,
            horizon: 8,
            num_states: 3,
        }
    }

    fn profile(income: f64) -> CovariateProfile {
        CovariateProfile {
            age: 50.0,
            blood_pressure: 110.0,
            exposure: 0.0,
            hormone: 700.0,
            income,
            markers: vec![],
        }
    }

    #[test]
    fn stage_reward_examples() {
        let p = default_params();
        for t in 1..8 {
            assert_eq!(stage_reward(2, 2, REMISSION, t, &p, 80000.0), 0.0);
        }
        let r = stage_reward(2, 1, TREATMENT, 1, &p, 80000.0);
        let want = 0.7 / 4.0 - 5000.0 / 80000.0 * (-1.2f64).exp();
        assert!((r - want).abs() < 1e-15);
        assert!((r - 0.1561754).abs() < 1e-6);
        assert!((stage_reward(1, 3, REMISSION, 2, &p, 80000.0) + 0.1555556).abs() < 1e-7);
    }

    #[test]
    fn terminal_reward_examples() {
        let p = default_params();
        assert_eq!(terminal_reward(3, &p), 0.0);
        assert!((terminal_reward(1, &p) - 0.0172840).abs() < 1e-7);
        assert!((terminal_reward(2, &p) - 0.0086420).abs() < 1e-7);
    }

    #[test]
    fn reward_validation() {
        let mut p = default_params();
        assert!(p.validate().is_ok());
        p.costs[0] = 1.0;
        assert!(p.validate().is_err());
        let mut p = default_params();
        p.g = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn covariate_names_round_trip() {
        for c in [Covariate::Age, Covariate::BloodPressure, Covariate::Marker(2), Covariate::Income] {
            assert_eq!(c.to_string().parse::<Covariate>().unwrap(), c);
        }
        assert!("weight".parse::<Covariate>().is_err());
        assert!("marker_0".parse::<Covariate>().is_err());
    }

    #[test]
    fn profile_validation() {
        assert!(profile(1.0).validate().is_ok());
        assert!(profile(0.0).validate().is_err());
        let mut p = profile(1.0);
        p.exposure = 0.5;
        assert!(p.validate().is_err());
    }

    fn flat_models(design: Vec<Covariate>) -> TransitionModels {
        let p = design.len();
        let mut models = Vec::new();
        for s in 1..=3 {
            for a in [REMISSION, TREATMENT] {
                let alpha = if a == TREATMENT { vec![0.5, 2.0] } else { vec![-0.5, 1.0] };
                models.push(
                    FittedOrdinalModel::from_parameters(alpha, vec![0.0; p], vec![0.0; p], ModelContext::pooled(s, a))
                        .unwrap(),
                );
            }
        }
        TransitionModels::new(design, 3, vec![REMISSION, TREATMENT], models).unwrap()
    }

    #[test]
    fn nonadaptive_dimensions_match_default_configuration() {
        let models = flat_models(vec![Covariate::Age, Covariate::BloodPressure]);
        let mdp = build_nonadaptive_mdp(&models, &profile(80000.0), &default_params()).unwrap();
        let sol = action_matrix(&mdp);
        assert_eq!(sol.policy.epochs(), 7);
        assert!(sol.policy.rules().iter().all(|r| r.len() == 3));
    }

    #[test]
    fn inert_covariates_give_identical_solutions() {
        let models = flat_models(vec![Covariate::Age, Covariate::Hormone]);
        let mut other = profile(30000.0);
        other.age = 71.0;
        other.hormone = 650.0;
        let a = solve_profile(&models, &profile(30000.0), &default_params()).unwrap();
        let b = solve_profile(&models, &other, &default_params()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn income_changes_only_cost_term() {
        let models = flat_models(vec![Covariate::Age]);
        let params = default_params();
        let lo = build_nonadaptive_mdp(&models, &profile(20000.0), &params).unwrap();
        let hi = build_nonadaptive_mdp(&models, &profile(40000.0), &params).unwrap();
        assert_eq!(lo.kernel(), hi.kernel());
        for t in 1..8 {
            for i in 1..=3 {
                assert_eq!(lo.stage_rewards(t, i, REMISSION), hi.stage_rewards(t, i, REMISSION));
                let (rl, rh) = (lo.stage_rewards(t, i, TREATMENT).unwrap(), hi.stage_rewards(t, i, TREATMENT).unwrap());
                for j in 0..3 {
                    let cost_lo = 5000.0 / 20000.0 * (-1.2 * t as f64).exp();
                    assert!(((rh[j] - rl[j]) - cost_lo / 2.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn missing_model_is_a_configuration_error() {
        let m = FittedOrdinalModel::from_parameters(vec![0.0, 1.0], vec![], vec![], ModelContext::pooled(1, 1)).unwrap();
        let models = TransitionModels::new(vec![], 3, vec![REMISSION, TREATMENT], [m]).unwrap();
        assert!(matches!(
            build_nonadaptive_mdp(&models, &profile(1e4), &default_params()),
            Err(Error::MissingModel { .. })
        ));
    }

    #[test]
    fn prohibitive_cost_never_treats() {
        let models = flat_models(vec![Covariate::Age]);
        let mut params = default_params();
        params.costs[1] = 1e12;
        let sol = solve_profile(&models, &profile(80000.0), &params).unwrap();
        assert!(sol.policy.rules().iter().flatten().all(|&a| a == REMISSION));
    }

    #[test]
    fn grid_cells_and_bijection() {
        let grid = CovariateGrid::new(vec![
            GridDimension {
                covariate: Covariate::Exposure,
                cuts: vec![0.5],
            },
            GridDimension {
                covariate: Covariate::Age,
                cuts: vec![45.0, 55.0],
            },
        ])
        .unwrap();
        assert_eq!(grid.size(), 6);
        let mut p = profile(1.0);
        p.exposure = 1.0;
        p.age = 55.0;
        let cell = grid.cell_of(&p).unwrap();
        assert_eq!(cell, 5);
        assert_eq!(grid.levels_of(cell), vec![1, 2]);

        let space = AugmentedStateSpace::new(3, &grid);
        assert_eq!(space.size(), 18);
        for label in 1..=space.size() {
            let (s, c) = space.decode(label);
            assert_eq!(space.index(s, c), label);
        }
        assert!(CovariateGrid::new(vec![GridDimension {
            covariate: Covariate::Age,
            cuts: vec![2.0, 1.0]
        }])
        .is_err());
    }

    #[test]
    fn tertile_grid_splits_sample() {
        let profiles: Vec<_> = (0..9)
            .map(|k| {
                let mut p = profile(1.0);
                p.age = k as f64;
                p.exposure = (k % 2) as f64;
                p
            })
            .collect();
        let grid = CovariateGrid::tertiles(&profiles, &[Covariate::Age, Covariate::Exposure]).unwrap();
        assert_eq!(grid.size(), 6);
        let mut per_level = [0; 3];
        for p in &profiles {
            per_level[grid.dimensions[0].level_of(p.age)] += 1;
        }
        assert_eq!(per_level, [3, 3, 3]);
    }

    #[test]
    fn adaptive_rows_are_relative_frequencies() {
        let grid = CovariateGrid::new(vec![GridDimension {
            covariate: Covariate::Exposure,
            cuts: vec![0.5],
        }])
        .unwrap();
        let space = AugmentedStateSpace::new(3, &grid);
        assert_eq!(space.size(), 6);
        let mut counts = TransitionCounts::new(space, vec![REMISSION, TREATMENT]);
        counts.add(1, REMISSION, 1, 2).unwrap();
        counts.add(1, REMISSION, 2, 1).unwrap();
        counts.add(1, REMISSION, 3, 1).unwrap();
        let params = default_params();
        let mdp = build_adaptive_mdp(&counts, &grid, &params, 50000.0, true).unwrap();
        assert_eq!(mdp.transition_row(1, 1, REMISSION).unwrap(), &[0.5, 0.25, 0.25, 0.0, 0.0, 0.0]);
        let smoothed = mdp.transition_row(3, 4, TREATMENT).unwrap();
        assert!(smoothed.iter().all(|p| (p - 1.0 / 6.0).abs() < 1e-15));
        assert!(matches!(
            build_adaptive_mdp(&counts, &grid, &params, 50000.0, false),
            Err(Error::UnestimableRow { .. })
        ));
    }

    #[test]
    fn adaptive_rewards_ignore_cells() {
        let grid = CovariateGrid::new(vec![GridDimension {
            covariate: Covariate::Age,
            cuts: vec![40.0, 60.0],
        }])
        .unwrap();
        let space = AugmentedStateSpace::new(3, &grid);
        let counts = TransitionCounts::new(space, vec![REMISSION, TREATMENT]);
        let params = default_params();
        let mdp = build_adaptive_mdp(&counts, &grid, &params, 25000.0, true).unwrap();
        for t in 1..8 {
            for i in 1..=3 {
                for a in [REMISSION, TREATMENT] {
                    for j in 1..=3 {
                        let want = stage_reward(i, j, a, t, &params, 25000.0);
                        for x in 0..3 {
                            let r = mdp.stage_rewards(t, space.index(i, x), a).unwrap();
                            for y in 0..3 {
                                assert_eq!(r[space.index(j, y) - 1], want);
                            }
                        }
                    }
                }
            }
        }
        for label in 1..=space.size() {
            assert_eq!(mdp.terminal_reward()[label - 1], terminal_reward(space.decode(label).0, &params));
        }
    }
}
