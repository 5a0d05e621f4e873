//! Covariate-sensitivity curves and income-group comparisons.
//!
//! Both analyses solve one MDP per simulated patient and report how often
//! the optimal action matrix prescribes treatment at given entries.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{derive_seed, domain, fixed_income_cohort, pinned_cohort, CovariateSpec};
use crate::error::{Error, Result};
use crate::ordinal::{confidence_band, Interval};
use crate::policy::{Covariate, PolicyModel, RewardParameters, TREATMENT};
use crate::svg::{Chart, Series, PALETTE};

/// Action-matrix entry `(t, stage)`, both 1-based.
pub type Entry = (usize, usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCurve {
    pub covariate: Covariate,
    pub epoch: usize,
    pub stage: usize,
    pub grid: Vec<f64>,
    /// Patients prescribed treatment at the entry, per grid point.
    pub treated: Vec<usize>,
    pub proportions: Vec<f64>,
    pub intervals: Vec<Interval>,
    pub reps: usize,
    pub level: f64,
}

impl SensitivityCurve {
    /// Ordinary least-squares slope of proportion on covariate value.
    pub fn slope(&self) -> f64 {
        least_squares_slope(&self.grid, &self.proportions)
    }
}

pub fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// `points` equally spaced values over mean ± 3 sd of the covariate's
/// training law; `{0, 1}` for indicators.
pub fn default_grid(spec: &CovariateSpec, covariate: Covariate, points: usize) -> Result<Vec<f64>> {
    if covariate.is_indicator() {
        return Ok(vec![0.0, 1.0]);
    }
    let (mean, sd) = spec
        .marginal(covariate)
        .filter(|(m, s)| m.is_finite() && s.is_finite())
        .ok_or_else(|| Error::config("analysis.sensitivity.covariate", format!("no finite law for {covariate}")))?;
    if points < 2 {
        return Err(Error::config("analysis.sensitivity.points", "need at least two grid points"));
    }
    let mut lo = mean - 3.0 * sd;
    let hi = mean + 3.0 * sd;
    if covariate == Covariate::Income {
        lo = lo.max(spec.income.minimum());
    }
    Ok((0..points)
        .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
        .collect())
}

fn check_entries(entries: &[Entry], params: &RewardParameters) -> Result<()> {
    for &(t, s) in entries {
        if !(1..params.horizon).contains(&t) || !(1..=params.num_states).contains(&s) {
            return Err(Error::OutOfRange {
                what: "action-matrix entry",
                value: format!("({t}, {s})"),
            });
        }
    }
    Ok(())
}

/// Sensitivity curves for several entries of the action matrix from one
/// set of simulated patients.
///
/// At each grid value `reps` profiles are drawn from the training law with
/// `covariate` pinned; the same random streams serve every grid value.
#[allow(clippy::too_many_arguments)]
pub fn sensitivity_curves<M: PolicyModel>(
    covariate: Covariate,
    grid: &[f64],
    entries: &[Entry],
    reps: usize,
    level: f64,
    models: &M,
    params: &RewardParameters,
    spec: &CovariateSpec,
    seed: u64,
) -> Result<Vec<SensitivityCurve>> {
    if !models.uses_covariate(covariate) && covariate != Covariate::Income {
        return Err(Error::config(
            "analysis.sensitivity.covariate",
            format!("{covariate} enters neither the transition model nor the reward"),
        ));
    }
    if reps == 0 {
        return Err(Error::config("analysis.sensitivity.reps", "must be at least 1"));
    }
    if grid.is_empty() || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::config("analysis.sensitivity.grid", "must be non-empty and strictly increasing"));
    }
    check_entries(entries, params)?;
    let stream_seed = derive_seed(seed, domain::SENSITIVITY);

    let counts: Vec<Vec<usize>> = grid
        .par_iter()
        .map(|&x| -> Result<Vec<usize>> {
            let cohort = pinned_cohort(spec, Some((covariate, x)), reps, stream_seed);
            let mut treated = vec![0; entries.len()];
            for profile in &cohort {
                let matrix = models.action_matrix(profile, params)?;
                for (c, &(t, s)) in treated.iter_mut().zip(entries) {
                    if matrix[t - 1][s - 1] == TREATMENT {
                        *c += 1;
                    }
                }
            }
            Ok(treated)
        })
        .collect::<Result<_>>()?;

    Ok(entries
        .iter()
        .enumerate()
        .map(|(e, &(t, s))| {
            let treated: Vec<usize> = counts.iter().map(|c| c[e]).collect();
            let proportions: Vec<f64> = treated.iter().map(|&k| k as f64 / reps as f64).collect();
            SensitivityCurve {
                covariate,
                epoch: t,
                stage: s,
                grid: grid.to_vec(),
                intervals: proportions.iter().map(|&p| confidence_band(p, reps, level)).collect(),
                treated,
                proportions,
                reps,
                level,
            }
        })
        .collect())
}

/// Single-entry form of [`sensitivity_curves`].
#[allow(clippy::too_many_arguments)]
pub fn sensitivity_curve<M: PolicyModel>(
    covariate: Covariate,
    grid: &[f64],
    entry: Entry,
    reps: usize,
    models: &M,
    params: &RewardParameters,
    spec: &CovariateSpec,
    seed: u64,
) -> Result<SensitivityCurve> {
    let mut curves = sensitivity_curves(covariate, grid, &[entry], reps, 0.95, models, params, spec, seed)?;
    Ok(curves.remove(0))
}

/// Treatment proportions per `(t, stage)` in two fixed-income groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncomeComparisonTable {
    pub theta_low: f64,
    pub theta_high: f64,
    pub group_size: usize,
    /// `low[t-1][stage-1]`
    pub low: Vec<Vec<f64>>,
    pub high: Vec<Vec<f64>>,
}

impl IncomeComparisonTable {
    pub fn from_proportions(
        theta_low: f64,
        theta_high: f64,
        group_size: usize,
        low: Vec<Vec<f64>>,
        high: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let shape = |m: &Vec<Vec<f64>>| (m.len(), m.first().map_or(0, Vec::len));
        if shape(&low) != shape(&high) || low.iter().chain(&high).any(|r| r.len() != shape(&low).1) {
            return Err(Error::Data("income tables must share one rectangular shape".into()));
        }
        if low.iter().chain(&high).flatten().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Data("proportions must lie in [0, 1]".into()));
        }
        Ok(IncomeComparisonTable {
            theta_low,
            theta_high,
            group_size,
            low,
            high,
        })
    }

    pub fn epochs(&self) -> usize {
        self.low.len()
    }

    pub fn stages(&self) -> usize {
        self.low.first().map_or(0, Vec::len)
    }

    /// Mean of `|high - low|` over all cells.
    pub fn mean_abs_gap(&self) -> f64 {
        let cells = (self.epochs() * self.stages()) as f64;
        self.low
            .iter()
            .flatten()
            .zip(self.high.iter().flatten())
            .map(|(l, h)| (h - l).abs())
            .sum::<f64>()
            / cells
    }

    /// Treatment proportion pooled over every cell, `(low, high)`.
    pub fn pooled(&self) -> (f64, f64) {
        let cells = (self.epochs() * self.stages()) as f64;
        let total = |m: &Vec<Vec<f64>>| m.iter().flatten().sum::<f64>() / cells;
        (total(&self.low), total(&self.high))
    }

    pub fn write_csv<W: Write>(&self, mut out: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["theta_low", "theta_high", "group_size", "t", "stage", "proportion_low", "proportion_high"])?;
        for (t, (lo, hi)) in self.low.iter().zip(&self.high).enumerate() {
            for (s, (l, h)) in lo.iter().zip(hi).enumerate() {
                w.write_record([
                    self.theta_low.to_string(),
                    self.theta_high.to_string(),
                    self.group_size.to_string(),
                    (t + 1).to_string(),
                    (s + 1).to_string(),
                    l.to_string(),
                    h.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// One chart per stage: proportion vs epoch for both income groups.
    pub fn charts(&self, note: Option<String>) -> Vec<Chart> {
        (1..=self.stages())
            .map(|s| {
                let series = [(self.theta_low, &self.low, PALETTE[0]), (self.theta_high, &self.high, PALETTE[1])]
                    .into_iter()
                    .map(|(theta, table, color)| {
                        let points: Vec<(f64, f64)> = (1..=self.epochs()).map(|t| (t as f64, table[t - 1][s - 1])).collect();
                        let band = points
                            .iter()
                            .map(|&(_, p)| {
                                let b = confidence_band(p, self.group_size, 0.95);
                                (b.lower, b.upper)
                            })
                            .collect();
                        Series {
                            label: format!("income {theta}"),
                            color: color.to_string(),
                            points,
                            band: Some(band),
                        }
                    })
                    .collect();
                Chart {
                    title: format!("Treatment proportion, stage {s}"),
                    x_label: "decision epoch t".into(),
                    y_label: "proportion of treatment".into(),
                    series,
                    note: note.clone(),
                }
            })
            .collect()
    }
}

/// Solves every patient of two fixed-income cohorts that share all other
/// covariates.
#[allow(clippy::too_many_arguments)]
pub fn income_comparison<M: PolicyModel>(
    theta_low: f64,
    theta_high: f64,
    group_size: usize,
    models: &M,
    params: &RewardParameters,
    spec: &CovariateSpec,
    seed: u64,
) -> Result<IncomeComparisonTable> {
    if !(theta_low > 0.0 && theta_high > 0.0) {
        return Err(Error::config("analysis.income_pairs", "incomes must be positive"));
    }
    if group_size == 0 {
        return Err(Error::config("analysis.group_size", "must be at least 1"));
    }
    let stream_seed = derive_seed(seed, domain::COMPARISON);
    let table = |theta: f64| -> Result<Vec<Vec<f64>>> {
        let cohort = fixed_income_cohort(spec, theta, group_size, stream_seed);
        let solutions = cohort
            .par_iter()
            .map(|p| models.action_matrix(p, params))
            .collect::<Result<Vec<_>>>()?;
        Ok((1..params.horizon)
            .map(|t| {
                (1..=params.num_states)
                    .map(|s| {
                        let k = solutions.iter().filter(|m| m[t - 1][s - 1] == TREATMENT).count();
                        k as f64 / group_size as f64
                    })
                    .collect()
            })
            .collect())
    };
    IncomeComparisonTable::from_proportions(theta_low, theta_high, group_size, table(theta_low)?, table(theta_high)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dominance {
    /// high ≥ low at every epoch, strictly somewhere
    High,
    /// low ≥ high at every epoch, strictly somewhere
    Low,
    Tied,
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageDominance {
    pub stage: usize,
    pub verdict: Dominance,
    /// High income weakly above low income at every epoch.
    pub high_weakly_dominates: bool,
    /// Consecutive nonzero-gap epochs `(t, t')` between which the sign of
    /// `high - low` flips.
    pub crossovers: Vec<(usize, usize)>,
}

pub fn dominance_summary(table: &IncomeComparisonTable) -> Vec<StageDominance> {
    (1..=table.stages())
        .map(|s| {
            let gaps: Vec<f64> = (0..table.epochs())
                .map(|t| table.high[t][s - 1] - table.low[t][s - 1])
                .collect();
            let any_pos = gaps.iter().any(|g| *g > 0.0);
            let any_neg = gaps.iter().any(|g| *g < 0.0);
            let verdict = match (any_pos, any_neg) {
                (false, false) => Dominance::Tied,
                (true, false) => Dominance::High,
                (false, true) => Dominance::Low,
                (true, true) => Dominance::Mixed,
            };
            let mut crossovers = Vec::new();
            let mut last: Option<(usize, f64)> = None;
            for (k, g) in gaps.iter().enumerate() {
                if *g == 0.0 {
                    continue;
                }
                if let Some((t, prev)) = last {
                    if prev.signum() != g.signum() {
                        crossovers.push((t + 1, k + 1));
                    }
                }
                last = Some((k, *g));
            }
            StageDominance {
                stage: s,
                verdict,
                high_weakly_dominates: !any_neg,
                crossovers,
            }
        })
        .collect()
}

/// One row per `(curve, grid point)`.
pub fn write_curves_csv<W: Write>(mut out: W, curves: &[SensitivityCurve], comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["covariate", "t", "stage", "value", "treated", "reps", "proportion", "lower", "upper"])?;
    for c in curves {
        for k in 0..c.grid.len() {
            w.write_record([
                c.covariate.to_string(),
                c.epoch.to_string(),
                c.stage.to_string(),
                c.grid[k].to_string(),
                c.treated[k].to_string(),
                c.reps.to_string(),
                c.proportions[k].to_string(),
                c.intervals[k].lower.to_string(),
                c.intervals[k].upper.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn curve_chart(curve: &SensitivityCurve, note: Option<String>) -> Chart {
    Chart {
        title: format!("Treatment at A({},{}) vs {}", curve.epoch, curve.stage, curve.covariate),
        x_label: curve.covariate.to_string(),
        y_label: "proportion of treatment".into(),
        series: vec![Series {
            label: format!("A({},{})", curve.epoch, curve.stage),
            color: PALETTE[2].into(),
            points: curve.grid.iter().copied().zip(curve.proportions.iter().copied()).collect(),
            band: Some(curve.intervals.iter().map(|i| (i.lower, i.upper)).collect()),
        }],
        note,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Proportions of treatment in the two lowest and highest income groups
    /// of the reference study.
    fn reference_table() -> IncomeComparisonTable {
        let low = vec![
            vec![0.00, 0.00, 0.00],
            vec![0.00, 0.00, 0.00],
            vec![0.01, 0.00, 0.00],
            vec![0.03, 0.04, 0.09],
            vec![0.06, 0.09, 0.43],
            vec![0.09, 0.12, 0.72],
            vec![0.01, 0.00, 0.00],
        ];
        let high = vec![
            vec![0.06, 0.18, 0.06],
            vec![0.07, 0.22, 0.19],
            vec![0.09, 0.30, 0.29],
            vec![0.12, 0.32, 0.42],
            vec![0.17, 0.36, 0.47],
            vec![0.18, 0.38, 0.48],
            vec![0.09, 0.29, 0.35],
        ];
        IncomeComparisonTable::from_proportions(10_000.0, 80_000.0, 100, low, high).unwrap()
    }

    #[test]
    fn reference_table_dominance() {
        let summary = dominance_summary(&reference_table());
        assert_eq!(summary[0].verdict, Dominance::High);
        assert_eq!(summary[1].verdict, Dominance::High);
        assert!(summary[0].high_weakly_dominates && summary[1].high_weakly_dominates);
        assert!(summary[0].crossovers.is_empty());
        assert_eq!(summary[2].verdict, Dominance::Mixed);
        assert_eq!(summary[2].crossovers, vec![(5, 6), (6, 7)]);
    }

    #[test]
    fn identical_groups_tie() {
        let t = reference_table();
        let same = IncomeComparisonTable::from_proportions(1.0, 1.0, 100, t.low.clone(), t.low.clone()).unwrap();
        assert!(dominance_summary(&same).iter().all(|d| d.verdict == Dominance::Tied && d.crossovers.is_empty()));
        assert_eq!(same.mean_abs_gap(), 0.0);
    }

    #[test]
    fn table_validation() {
        assert!(IncomeComparisonTable::from_proportions(1.0, 2.0, 1, vec![vec![0.5]], vec![vec![1.5]]).is_err());
        assert!(IncomeComparisonTable::from_proportions(1.0, 2.0, 1, vec![vec![0.5]], vec![vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn slope_of_line() {
        assert!((least_squares_slope(&[1.0, 2.0, 3.0], &[1.0, 0.5, 0.0]) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn grids() {
        let spec = CovariateSpec::default();
        let g = default_grid(&spec, Covariate::Age, 21).unwrap();
        assert_eq!(g.len(), 21);
        assert!((g[0] - 41.0).abs() < 1e-12 && (g[20] - 59.0).abs() < 1e-12);
        assert_eq!(default_grid(&spec, Covariate::Exposure, 21).unwrap(), vec![0.0, 1.0]);
        let inc = default_grid(&spec, Covariate::Income, 5).unwrap();
        assert!(inc[0] >= spec.income.minimum());
    }

    #[test]
    fn table_csv_layout() {
        let mut buf = Vec::new();
        reference_table().write_csv(&mut buf, &["seed=1".into()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2 + 21);
        assert_eq!(lines[2], "10000,80000,100,1,1,0,0.06");
    }
}
