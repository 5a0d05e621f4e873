//! Synthetic cohorts and training trajectories.

use std::io::{Read, Write};

use rand::distributions::Distribution;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Normal, Pareto};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::ActionId;
use crate::ordinal::{FittedOrdinalModel, ModelContext, OrdinalDataset};
use crate::policy::{Covariate, CovariateProfile, TransitionModels, REMISSION, TREATMENT};

/// Independent random stream for `(seed, domain, index)`.
///
/// Each patient, replicate or grid point draws from its own stream, so
/// results do not depend on evaluation order.
pub fn stream_rng(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Seed for a derived experiment, independent of the master seed's other uses.
pub fn derive_seed(seed: u64, domain: u64) -> u64 {
    stream_rng(seed, domain, u64::MAX).next_u64()
}

pub(crate) mod domain {
    pub const COHORT: u64 = 1;
    pub const TRAJECTORY: u64 = 2;
    pub const SENSITIVITY: u64 = 3;
    pub const COMPARISON: u64 = 4;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalLaw {
    pub mean: f64,
    pub sd: f64,
}

/// `base + multiplier × Pareto(scale, shape)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncomeLaw {
    pub base: f64,
    pub multiplier: f64,
    pub pareto_scale: f64,
    pub pareto_shape: f64,
}

impl IncomeLaw {
    pub fn mean(&self) -> f64 {
        let a = self.pareto_shape;
        let m = if a > 1.0 { a * self.pareto_scale / (a - 1.0) } else { f64::INFINITY };
        self.base + self.multiplier * m
    }

    pub fn sd(&self) -> f64 {
        let a = self.pareto_shape;
        if a <= 2.0 {
            return f64::INFINITY;
        }
        let var = self.pareto_scale.powi(2) * a / ((a - 1.0).powi(2) * (a - 2.0));
        self.multiplier * var.sqrt()
    }

    pub fn minimum(&self) -> f64 {
        self.base + self.multiplier * self.pareto_scale
    }
}

/// Sampling laws of the training population.
///
/// Blood pressure is drawn conditionally on the drawn age:
/// `N(age + offset, sd)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub age: NormalLaw,
    pub blood_pressure_offset: f64,
    pub blood_pressure_sd: f64,
    pub exposure_probability: f64,
    pub hormone: NormalLaw,
    pub income: IncomeLaw,
    /// Optional extra binary marker columns, by success probability.
    #[serde(default)]
    pub marker_probabilities: Vec<f64>,
}

impl Default for CovariateSpec {
    fn default() -> Self {
        CovariateSpec {
            age: NormalLaw { mean: 50.0, sd: 3.0 },
            blood_pressure_offset: 60.0,
            blood_pressure_sd: 0.7,
            exposure_probability: 0.1,
            hormone: NormalLaw { mean: 700.0, sd: 20.0 },
            income: IncomeLaw {
                base: 10_000.0,
                multiplier: 1e6,
                pareto_scale: 100.0,
                pareto_shape: 10.0,
            },
            marker_probabilities: Vec::new(),
        }
    }
}

impl CovariateSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.age.sd) || !self.age.mean.is_finite() {
            return Err(Error::config("covariates.age", "needs finite mean and positive sd"));
        }
        if !positive(self.blood_pressure_sd) || !self.blood_pressure_offset.is_finite() {
            return Err(Error::config("covariates.blood_pressure_sd", "must be positive"));
        }
        if !positive(self.hormone.sd) || !self.hormone.mean.is_finite() {
            return Err(Error::config("covariates.hormone", "needs finite mean and positive sd"));
        }
        if !(0.0..=1.0).contains(&self.exposure_probability) {
            return Err(Error::config("covariates.exposure_probability", "must lie in [0, 1]"));
        }
        if let Some(k) = self.marker_probabilities.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::config(
                format!("covariates.marker_probabilities[{k}]"),
                "must lie in [0, 1]",
            ));
        }
        let inc = &self.income;
        if !(positive(inc.pareto_scale) && positive(inc.pareto_shape) && inc.multiplier >= 0.0 && inc.base >= 0.0) {
            return Err(Error::config("covariates.income", "needs positive Pareto scale/shape"));
        }
        if !(inc.minimum() > 0.0) {
            return Err(Error::config("covariates.income", "incomes must be positive"));
        }
        Ok(())
    }

    /// Mean and standard deviation of a covariate's marginal law.
    pub fn marginal(&self, covariate: Covariate) -> Option<(f64, f64)> {
        let bernoulli = |p: f64| (p, (p * (1.0 - p)).sqrt());
        Some(match covariate {
            Covariate::Age => (self.age.mean, self.age.sd),
            Covariate::BloodPressure => (
                self.age.mean + self.blood_pressure_offset,
                (self.age.sd.powi(2) + self.blood_pressure_sd.powi(2)).sqrt(),
            ),
            Covariate::Exposure => bernoulli(self.exposure_probability),
            Covariate::Hormone => (self.hormone.mean, self.hormone.sd),
            Covariate::Income => (self.income.mean(), self.income.sd()),
            Covariate::Marker(k) => bernoulli(*self.marker_probabilities.get(k)?),
        })
    }

    /// Draws one profile. A pinned covariate replaces its draw; a pinned age
    /// also conditions the blood-pressure draw. Every call consumes the same
    /// number of random values whatever is pinned.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, pin: Option<(Covariate, f64)>) -> CovariateProfile {
        let pinned = |c: Covariate| pin.filter(|(k, _)| *k == c).map(|(_, v)| v);
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

        let age_draw = self.age.mean + self.age.sd * std_normal.sample(rng);
        let age = pinned(Covariate::Age).unwrap_or(age_draw);
        let bp_draw = age + self.blood_pressure_offset + self.blood_pressure_sd * std_normal.sample(rng);
        let blood_pressure = pinned(Covariate::BloodPressure).unwrap_or(bp_draw);
        let exposure_draw = if rng.gen::<f64>() < self.exposure_probability { 1.0 } else { 0.0 };
        let exposure = pinned(Covariate::Exposure).unwrap_or(exposure_draw);
        let hormone_draw = self.hormone.mean + self.hormone.sd * std_normal.sample(rng);
        let hormone = pinned(Covariate::Hormone).unwrap_or(hormone_draw);
        let pareto = Pareto::new(self.income.pareto_scale, self.income.pareto_shape).expect("validated income law");
        let income_draw = self.income.base + self.income.multiplier * pareto.sample(rng);
        let income = pinned(Covariate::Income).unwrap_or(income_draw);
        let markers = self
            .marker_probabilities
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let draw = if Bernoulli::new(p).expect("validated probability").sample(rng) { 1.0 } else { 0.0 };
                pinned(Covariate::Marker(k)).unwrap_or(draw)
            })
            .collect();

        CovariateProfile {
            age,
            blood_pressure,
            exposure,
            hormone,
            income,
            markers,
        }
    }
}

/// `n` independent profiles; patient `k` draws from stream `k`.
pub fn sample_cohort(spec: &CovariateSpec, n: usize, seed: u64) -> Vec<CovariateProfile> {
    pinned_cohort(spec, None, n, seed)
}

/// Same draws as [`sample_cohort`] with every income set to `income`.
pub fn fixed_income_cohort(spec: &CovariateSpec, income: f64, n: usize, seed: u64) -> Vec<CovariateProfile> {
    pinned_cohort(spec, Some((Covariate::Income, income)), n, seed)
}

pub fn pinned_cohort(
    spec: &CovariateSpec,
    pin: Option<(Covariate, f64)>,
    n: usize,
    seed: u64,
) -> Vec<CovariateProfile> {
    (0..n)
        .map(|k| spec.sample(&mut stream_rng(seed, domain::COHORT, k as u64), pin))
        .collect()
}

/// One `(s, a)` law of the data-generating process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueTransitionLaw {
    pub state: usize,
    pub action: ActionId,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Proportional-odds laws used to simulate training data, with the linear
/// predictor evaluated at `x - center`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthDynamics {
    pub covariates: Vec<Covariate>,
    pub center: Vec<f64>,
    pub laws: Vec<TrueTransitionLaw>,
}

impl GroundTruthDynamics {
    /// Treatment shifts cut-points toward lower stages and remission drifts
    /// upward. Age and exposure raise severity under both actions. Relative
    /// to remission, treatment loses efficacy with blood pressure at every
    /// stage and with age at stages 1-2, and gains efficacy with age at
    /// stage 3.
    pub fn reference() -> Self {
        let covariates = vec![
            Covariate::Age,
            Covariate::BloodPressure,
            Covariate::Exposure,
            Covariate::Hormone,
        ];
        let center = vec![50.0, 110.0, 0.1, 700.0];
        let remission_beta = [-0.10, -0.10, -0.80, -0.01];
        let treatment_shift = |stage: usize| -> [f64; 4] {
            if stage < 3 {
                [-0.20, -0.80, -0.30, 0.0]
            } else {
                [1.60, -0.80, -0.30, 0.0]
            }
        };
        let alphas = [
            ([1.0, 3.0], [1.5, 3.5]),
            ([-1.0, 1.5], [0.0, 2.5]),
            ([-3.0, -1.0], [-2.0, 0.0]),
        ];
        let mut laws = Vec::new();
        for (s, (rem, treat)) in alphas.iter().enumerate() {
            let stage = s + 1;
            laws.push(TrueTransitionLaw {
                state: stage,
                action: REMISSION,
                alpha: rem.to_vec(),
                beta: remission_beta.to_vec(),
            });
            let shift = treatment_shift(stage);
            laws.push(TrueTransitionLaw {
                state: stage,
                action: TREATMENT,
                alpha: treat.to_vec(),
                beta: remission_beta.iter().zip(shift).map(|(b, d)| b + d).collect(),
            });
        }
        GroundTruthDynamics {
            covariates,
            center,
            laws,
        }
    }

    /// Checks coverage of every `(s, a)` and converts to prediction models.
    pub fn to_models(&self, num_states: usize, actions: &[ActionId]) -> Result<TransitionModels> {
        if self.center.len() != self.covariates.len() {
            return Err(Error::config("ground_truth.center", "must match covariates in length"));
        }
        for s in 1..=num_states {
            for &a in actions {
                if !self.laws.iter().any(|l| l.state == s && l.action == a) {
                    return Err(Error::config(
                        "ground_truth.laws",
                        format!("no law for state {s}, action {a}"),
                    ));
                }
            }
        }
        let models = self
            .laws
            .iter()
            .enumerate()
            .map(|(k, l)| {
                if l.alpha.len() + 1 != num_states {
                    return Err(Error::config(
                        format!("ground_truth.laws[{k}].alpha"),
                        format!("needs {} cut-points", num_states - 1),
                    ));
                }
                FittedOrdinalModel::from_parameters(
                    l.alpha.clone(),
                    l.beta.clone(),
                    self.center.clone(),
                    ModelContext::pooled(l.state, l.action),
                )
                .map_err(|e| Error::config(format!("ground_truth.laws[{k}]"), e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        TransitionModels::new(self.covariates.clone(), num_states, actions.to_vec(), models)
    }
}

/// How actions are assigned while generating training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    UniformRandom,
    Always(ActionId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub patient_id: u64,
    pub t: usize,
    pub state: usize,
    pub action: ActionId,
    pub next_state: usize,
    /// Aligned with [`TrajectoryDataset::covariates`].
    pub covariates: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    pub covariates: Vec<Covariate>,
    pub records: Vec<TrajectoryRecord>,
    pub num_states: usize,
    pub horizon: usize,
}

fn draw_category<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (j, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return j + 1;
        }
    }
    // u fell in the rounding gap above the last cumulative sum
    probs.iter().rposition(|p| *p > 0.0).map_or(probs.len(), |j| j + 1)
}

/// Simulates `N - 1` transitions per patient under `truth`.
pub fn simulate_trajectories(
    truth: &TransitionModels,
    cohort: &[CovariateProfile],
    behavior: &Behavior,
    initial_distribution: &[f64],
    horizon: usize,
    seed: u64,
) -> Result<TrajectoryDataset> {
    let j_count = truth.num_states();
    if initial_distribution.len() != j_count {
        return Err(Error::DimensionMismatch {
            expected: j_count,
            actual: initial_distribution.len(),
        });
    }
    let total: f64 = initial_distribution.iter().sum();
    if initial_distribution.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution("initial stage distribution".into()));
    }
    if let Behavior::Always(a) = behavior {
        if !truth.actions().contains(a) {
            return Err(Error::config("simulation.behavior", format!("action {a} is not admissible")));
        }
    }
    let columns = cohort.first().map(CovariateProfile::columns).unwrap_or_else(|| Covariate::STANDARD.to_vec());
    let mut records = Vec::with_capacity(cohort.len() * (horizon - 1));
    for (k, profile) in cohort.iter().enumerate() {
        let mut rng = stream_rng(seed, domain::TRAJECTORY, k as u64);
        let values = profile.design_vector(&columns)?;
        let mut state = draw_category(&mut rng, initial_distribution);
        for t in 1..horizon {
            let action = match behavior {
                Behavior::UniformRandom => truth.actions()[rng.gen_range(0..truth.actions().len())],
                Behavior::Always(a) => *a,
            };
            let row = truth.kernel_row(t, state, action, profile)?;
            let next_state = draw_category(&mut rng, &row);
            records.push(TrajectoryRecord {
                patient_id: k as u64 + 1,
                t,
                state,
                action,
                next_state,
                covariates: values.clone(),
            });
            state = next_state;
        }
    }
    Ok(TrajectoryDataset {
        covariates: columns,
        records,
        num_states: j_count,
        horizon,
    })
}

const FIXED_COLUMNS: [&str; 5] = ["patient_id", "t", "state", "action", "next_state"];

impl TrajectoryDataset {
    pub fn column_of(&self, covariate: Covariate) -> Result<usize> {
        self.covariates
            .iter()
            .position(|&c| c == covariate)
            .ok_or_else(|| Error::Data(format!("dataset has no column {covariate}")))
    }

    /// Rows for one `(state, action)` and optionally one epoch, with the
    /// design columns selected in order.
    pub fn ordinal_dataset(
        &self,
        state: usize,
        action: ActionId,
        epoch: Option<usize>,
        design: &[Covariate],
    ) -> Result<OrdinalDataset<f64>> {
        let cols = design.iter().map(|&c| self.column_of(c)).collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for r in &self.records {
            if r.state == state && r.action == action && epoch.is_none_or(|t| r.t == t) {
                rows.push(cols.iter().map(|&c| r.covariates[c]).collect());
                y.push(r.next_state);
            }
        }
        if rows.is_empty() {
            return Err(Error::InsufficientData(format!(
                "no transitions observed from state {state} under action {action}{}",
                epoch.map(|t| format!(" at epoch {t}")).unwrap_or_default()
            )));
        }
        OrdinalDataset::from_rows(
            &rows,
            y,
            self.num_states,
            ModelContext {
                state,
                action,
                epoch,
            },
        )
    }

    /// Writes the CSV with `#`-prefixed comment lines ahead of the header.
    pub fn write_csv<W: Write>(&self, mut out: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
        header.extend(self.covariates.iter().map(Covariate::to_string));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.patient_id.to_string(),
                r.t.to_string(),
                r.state.to_string(),
                r.action.to_string(),
                r.next_state.to_string(),
            ];
            row.extend(r.covariates.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV schema written by [`write_csv`](Self::write_csv).
    pub fn read_csv<R: Read>(input: R, num_states: usize, horizon: usize) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let header = reader.headers()?.clone();
        if header.len() < FIXED_COLUMNS.len() || header.iter().zip(FIXED_COLUMNS).any(|(h, want)| h != want) {
            return Err(Error::Data(format!(
                "trajectory header must start with {}",
                FIXED_COLUMNS.join(",")
            )));
        }
        let covariates = header
            .iter()
            .skip(FIXED_COLUMNS.len())
            .map(str::parse)
            .collect::<Result<Vec<Covariate>>>()?;
        let mut records = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec?;
            let field = |k: usize| -> Result<usize> {
                rec[k]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Data(format!("row {}: bad {} `{}`", line + 1, FIXED_COLUMNS[k], &rec[k])))
            };
            let record = TrajectoryRecord {
                patient_id: field(0)? as u64,
                t: field(1)?,
                state: field(2)?,
                action: field(3)?,
                next_state: field(4)?,
                covariates: (FIXED_COLUMNS.len()..rec.len())
                    .map(|k| {
                        rec[k]
                            .trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Data(format!("row {}: bad covariate `{}`", line + 1, &rec[k])))
                    })
                    .collect::<Result<_>>()?,
            };
            if !(1..=num_states).contains(&record.state) || !(1..=num_states).contains(&record.next_state) {
                return Err(Error::Data(format!("row {}: state outside 1..={num_states}", line + 1)));
            }
            if !(1..horizon).contains(&record.t) {
                return Err(Error::Data(format!("row {}: epoch outside 1..{horizon}", line + 1)));
            }
            records.push(record);
        }
        Ok(TrajectoryDataset {
            covariates,
            records,
            num_states,
            horizon,
        })
    }
}

/// Cohort CSV: `patient_id` then one column per covariate.
pub fn write_cohort_csv<W: Write>(mut out: W, cohort: &[CovariateProfile], comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let columns = cohort.first().map(CovariateProfile::columns).unwrap_or_else(|| Covariate::STANDARD.to_vec());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["patient_id".to_string()];
    header.extend(columns.iter().map(Covariate::to_string));
    w.write_record(&header)?;
    for (k, p) in cohort.iter().enumerate() {
        let mut row = vec![(k + 1).to_string()];
        row.extend(p.design_vector(&columns)?.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cohort_csv<R: Read>(input: R) -> Result<Vec<CovariateProfile>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let header = reader.headers()?.clone();
    if header.get(0) != Some("patient_id") {
        return Err(Error::Data("cohort header must start with patient_id".into()));
    }
    let columns = header.iter().skip(1).map(str::parse).collect::<Result<Vec<Covariate>>>()?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let mut p = CovariateProfile {
            age: f64::NAN,
            blood_pressure: f64::NAN,
            exposure: f64::NAN,
            hormone: f64::NAN,
            income: f64::NAN,
            markers: Vec::new(),
        };
        for (k, &c) in columns.iter().enumerate() {
            let v = rec[k + 1]
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("bad {c} value `{}`", &rec[k + 1])))?;
            p.set(c, v);
        }
        p.validate()?;
        out.push(p);
    }
    Ok(out)
}
