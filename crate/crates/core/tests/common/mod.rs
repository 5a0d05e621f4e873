//! Generators shared by the integration tests.
#![allow(dead_code)]

use dtr_core::mdp::{ActionId, FiniteHorizonMdp};
use dtr_core::ordinal::{ModelContext, OrdinalDataset};
use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Non-empty random subset of `1..=num_actions` per state.
pub fn random_actions<R: Rng>(rng: &mut R, num_states: usize, num_actions: usize) -> Vec<Vec<ActionId>> {
    (0..num_states)
        .map(|_| loop {
            let list: Vec<ActionId> = (1..=num_actions).filter(|_| rng.gen_bool(0.75)).collect();
            if !list.is_empty() {
                break list;
            }
        })
        .collect()
}

fn random_row<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

pub fn random_mdp<R: Rng>(rng: &mut R, num_states: usize, num_actions: usize, horizon: usize) -> FiniteHorizonMdp<f64> {
    let actions = random_actions(rng, num_states, num_actions);
    let mut kernel = Vec::new();
    let mut rewards = Vec::new();
    for _ in 1..horizon {
        let mut k_t = Vec::new();
        let mut r_t = Vec::new();
        for list in &actions {
            k_t.push(list.iter().map(|_| random_row(rng, num_states)).collect());
            r_t.push(
                list.iter()
                    .map(|_| (0..num_states).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect(),
            );
        }
        kernel.push(k_t);
        rewards.push(r_t);
    }
    let terminal = (0..num_states).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FiniteHorizonMdp::new(num_states, horizon, actions, kernel, rewards, terminal).unwrap()
}

/// Random MDP with small-denominator rational entries, for exact checks.
pub fn random_rational_mdp<R: Rng>(
    rng: &mut R,
    num_states: usize,
    num_actions: usize,
    horizon: usize,
) -> FiniteHorizonMdp<Rational64> {
    let actions = random_actions(rng, num_states, num_actions);
    let row = |rng: &mut R| {
        let w: Vec<i64> = (0..num_states).map(|_| rng.gen_range(0..4)).collect();
        let w = if w.iter().all(|v| *v == 0) { vec![1; num_states] } else { w };
        let total: i64 = w.iter().sum();
        w.into_iter().map(|v| Rational64::new(v, total)).collect::<Vec<_>>()
    };
    let mut kernel = Vec::new();
    let mut rewards = Vec::new();
    for _ in 1..horizon {
        let mut k_t = Vec::new();
        let mut r_t = Vec::new();
        for list in &actions {
            k_t.push(list.iter().map(|_| row(rng)).collect());
            r_t.push(
                list.iter()
                    .map(|_| (0..num_states).map(|_| Rational64::new(rng.gen_range(-6..=6), 3)).collect())
                    .collect(),
            );
        }
        kernel.push(k_t);
        rewards.push(r_t);
    }
    let terminal = (0..num_states).map(|_| Rational64::new(rng.gen_range(-6..=6), 2)).collect();
    FiniteHorizonMdp::new(num_states, horizon, actions, kernel, rewards, terminal).unwrap()
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Draws `n` responses from a proportional-odds law with standard-normal
/// covariates, inverting the cumulative distribution directly.
pub fn simulate_ordinal<R: Rng>(rng: &mut R, alpha: &[f64], beta: &[f64], n: usize) -> OrdinalDataset<f64> {
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = beta.iter().map(|_| rng.sample(StandardNormal)).collect();
        let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
        let u: f64 = rng.gen();
        let cat = alpha.iter().position(|a| u < logistic(a + eta)).map_or(alpha.len() + 1, |j| j + 1);
        rows.push(x);
        y.push(cat);
    }
    OrdinalDataset::from_rows(&rows, y, alpha.len() + 1, ModelContext::pooled(1, 1)).unwrap()
}
