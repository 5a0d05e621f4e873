//! Training-data to model steps shared by the CLI and tests.

use rayon::prelude::*;

use crate::cohort::TrajectoryDataset;
use crate::error::{Error, Result};
use crate::mdp::ActionId;
use crate::ordinal::{fit, FitSettings};
use crate::policy::{
    AugmentedStateSpace, Covariate, CovariateGrid, CovariateProfile, TransitionCounts, TransitionModels,
};

/// Fits one proportional-odds model per `(s, a)`, or per `(t, s, a)` when
/// `time_homogeneous` is false.
pub fn fit_transition_models(
    data: &TrajectoryDataset,
    design: &[Covariate],
    actions: &[ActionId],
    settings: &FitSettings,
    time_homogeneous: bool,
) -> Result<TransitionModels> {
    let epochs: Vec<Option<usize>> = if time_homogeneous {
        vec![None]
    } else {
        (1..data.horizon).map(Some).collect()
    };
    let mut jobs = Vec::new();
    for &t in &epochs {
        for s in 1..=data.num_states {
            for &a in actions {
                jobs.push((t, s, a));
            }
        }
    }
    let models = jobs
        .par_iter()
        .map(|&(t, s, a)| {
            let subset = data.ordinal_dataset(s, a, t, design)?;
            fit(&subset, settings).map_err(|e| match e {
                Error::DegenerateCategory { category } => Error::InsufficientData(format!(
                    "no transitions from state {s} under action {a}{} reach state {category}; \
                     simulate more patients or fit time-homogeneous models",
                    t.map(|t| format!(" at epoch {t}")).unwrap_or_default()
                )),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    TransitionModels::new(design.to_vec(), data.num_states, actions.to_vec(), models)
}

/// Profile of one trajectory record; covariates absent from the dataset
/// keep their default of zero.
pub fn record_profile(data: &TrajectoryDataset, values: &[f64]) -> CovariateProfile {
    let mut profile = CovariateProfile {
        age: 0.0,
        blood_pressure: 0.0,
        exposure: 0.0,
        hormone: 0.0,
        income: 0.0,
        markers: Vec::new(),
    };
    for (&c, &v) in data.covariates.iter().zip(values) {
        profile.set(c, v);
    }
    profile
}

/// Distinct patient profiles in first-appearance order.
pub fn patient_profiles(data: &TrajectoryDataset) -> Vec<CovariateProfile> {
    let mut seen = std::collections::BTreeSet::new();
    data.records
        .iter()
        .filter(|r| seen.insert(r.patient_id))
        .map(|r| record_profile(data, &r.covariates))
        .collect()
}

/// Counts augmented transitions. A patient's cell is fixed by the
/// covariates at diagnosis, so each move stays within one cell.
pub fn adaptive_counts(data: &TrajectoryDataset, grid: &CovariateGrid, actions: &[ActionId]) -> Result<TransitionCounts> {
    let space = AugmentedStateSpace::new(data.num_states, grid);
    let mut counts = TransitionCounts::new(space, actions.to_vec());
    for r in &data.records {
        let cell = grid.cell_of(&record_profile(data, &r.covariates))?;
        counts.add(space.index(r.state, cell), r.action, space.index(r.next_state, cell), 1)?;
    }
    Ok(counts)
}
