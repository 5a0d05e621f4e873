//! Finite-horizon Markov decision processes and their exact solution.
//!
//! Decision epochs are `1..=N-1`; epoch `N` only observes the terminal
//! reward. States and epochs are addressed by their 1-based labels in the
//! public API. Actions are identified by integer ids and every state lists
//! its admissible ids in strictly increasing order, so the position of an id
//! in that list is also its position in the kernel and reward arrays.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, sum, Scalar};

pub type ActionId = usize;

/// Upper bound on the number of deterministic Markov policies the
/// enumeration oracle will visit.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// Kernel and reward arrays are indexed `[t-1][i-1][action position][j-1]`.
pub type StageArray<T> = Vec<Vec<Vec<Vec<T>>>>;

/// JSON shape of an MDP instance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MdpDocument<T> {
    #[serde(rename = "J")]
    pub num_states: usize,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub actions: Vec<Vec<ActionId>>,
    pub kernel: StageArray<T>,
    pub stage_reward: StageArray<T>,
    pub terminal_reward: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "MdpDocument<T>",
    into = "MdpDocument<T>",
    bound(
        serialize = "T: Scalar + Serialize",
        deserialize = "T: Scalar + Deserialize<'de>"
    )
)]
pub struct FiniteHorizonMdp<T> {
    num_states: usize,
    horizon: usize,
    actions: Vec<Vec<ActionId>>,
    kernel: StageArray<T>,
    stage_reward: StageArray<T>,
    terminal_reward: Vec<T>,
}

impl<T: Scalar> TryFrom<MdpDocument<T>> for FiniteHorizonMdp<T> {
    type Error = Error;

    fn try_from(doc: MdpDocument<T>) -> Result<Self> {
        FiniteHorizonMdp::new(
            doc.num_states,
            doc.horizon,
            doc.actions,
            doc.kernel,
            doc.stage_reward,
            doc.terminal_reward,
        )
    }
}

impl<T> From<FiniteHorizonMdp<T>> for MdpDocument<T> {
    fn from(mdp: FiniteHorizonMdp<T>) -> Self {
        MdpDocument {
            num_states: mdp.num_states,
            horizon: mdp.horizon,
            actions: mdp.actions,
            kernel: mdp.kernel,
            stage_reward: mdp.stage_reward,
            terminal_reward: mdp.terminal_reward,
        }
    }
}

impl<T: Scalar> FiniteHorizonMdp<T> {
    /// Validates every structural invariant and returns the instance.
    ///
    /// Rows whose sum misses one by less than [`Scalar::renormalize_limit`]
    /// are rescaled; larger deviations are rejected.
    pub fn new(
        num_states: usize,
        horizon: usize,
        actions: Vec<Vec<ActionId>>,
        mut kernel: StageArray<T>,
        stage_reward: StageArray<T>,
        terminal_reward: Vec<T>,
    ) -> Result<Self> {
        if num_states == 0 {
            return Err(Error::InvalidMdp("at least one state is required".into()));
        }
        if horizon < 2 {
            return Err(Error::InvalidMdp(format!("horizon must be at least 2, got {horizon}")));
        }
        if actions.len() != num_states {
            return Err(Error::InvalidMdp(format!(
                "expected action lists for {num_states} states, got {}",
                actions.len()
            )));
        }
        for (s, list) in actions.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::InvalidMdp(format!("state {} has no actions", s + 1)));
            }
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidMdp(format!(
                    "actions of state {} must be strictly increasing ids",
                    s + 1
                )));
            }
        }
        if terminal_reward.len() != num_states {
            return Err(Error::InvalidMdp(format!(
                "terminal reward has {} entries, expected {num_states}",
                terminal_reward.len()
            )));
        }
        if let Some(j) = terminal_reward.iter().position(|r| !r.is_finite_value()) {
            return Err(Error::InvalidMdp(format!("terminal reward of state {} is not finite", j + 1)));
        }
        check_shape("kernel", &kernel, num_states, horizon, &actions)?;
        check_shape("stage_reward", &stage_reward, num_states, horizon, &actions)?;

        for (t, per_state) in kernel.iter_mut().enumerate() {
            for (i, per_action) in per_state.iter_mut().enumerate() {
                for (k, row) in per_action.iter_mut().enumerate() {
                    normalize_row(row).map_err(|e| {
                        Error::InvalidDistribution(format!(
                            "kernel row (t={}, i={}, a={}): {e}",
                            t + 1,
                            i + 1,
                            actions[i][k]
                        ))
                    })?;
                }
            }
        }
        for (t, per_state) in stage_reward.iter().enumerate() {
            for (i, per_action) in per_state.iter().enumerate() {
                for (k, row) in per_action.iter().enumerate() {
                    if row.iter().any(|r| !r.is_finite_value()) {
                        return Err(Error::InvalidMdp(format!(
                            "stage reward (t={}, i={}, a={}) is not finite",
                            t + 1,
                            i + 1,
                            actions[i][k]
                        )));
                    }
                }
            }
        }

        Ok(FiniteHorizonMdp {
            num_states,
            horizon,
            actions,
            kernel,
            stage_reward,
            terminal_reward,
        })
    }

    /// Builds an instance from closures over 1-based labels.
    ///
    /// `transition(t, i, a)` returns the next-state row and
    /// `reward(t, i, a, j)` the stage reward of a single transition.
    pub fn from_fn<P, R>(
        num_states: usize,
        horizon: usize,
        actions: Vec<Vec<ActionId>>,
        mut transition: P,
        mut reward: R,
        terminal_reward: Vec<T>,
    ) -> Result<Self>
    where
        P: FnMut(usize, usize, ActionId) -> Vec<T>,
        R: FnMut(usize, usize, ActionId, usize) -> T,
    {
        let mut kernel = Vec::with_capacity(horizon.saturating_sub(1));
        let mut stage_reward = Vec::with_capacity(horizon.saturating_sub(1));
        for t in 1..horizon {
            let mut k_t = Vec::with_capacity(num_states);
            let mut r_t = Vec::with_capacity(num_states);
            for i in 1..=num_states {
                let list = actions.get(i - 1).cloned().unwrap_or_default();
                k_t.push(list.iter().map(|&a| transition(t, i, a)).collect());
                r_t.push(
                    list.iter()
                        .map(|&a| (1..=num_states).map(|j| reward(t, i, a, j)).collect())
                        .collect(),
                );
            }
            kernel.push(k_t);
            stage_reward.push(r_t);
        }
        Self::new(num_states, horizon, actions, kernel, stage_reward, terminal_reward)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Number of decision epochs, `N - 1`.
    pub fn epochs(&self) -> usize {
        self.horizon - 1
    }

    /// Admissible actions of state `s` (1-based).
    pub fn actions(&self, s: usize) -> &[ActionId] {
        &self.actions[s - 1]
    }

    pub fn action_lists(&self) -> &[Vec<ActionId>] {
        &self.actions
    }

    pub fn action_position(&self, s: usize, a: ActionId) -> Option<usize> {
        self.actions.get(s.wrapping_sub(1))?.binary_search(&a).ok()
    }

    /// Next-state distribution for `(t, i, a)`, or `None` if inadmissible.
    pub fn transition_row(&self, t: usize, i: usize, a: ActionId) -> Option<&[T]> {
        let k = self.action_position(i, a)?;
        self.kernel.get(t.wrapping_sub(1)).map(|rows| rows[i - 1][k].as_slice())
    }

    /// Stage rewards `r_t(a, i, ·)` for `(t, i, a)`.
    pub fn stage_rewards(&self, t: usize, i: usize, a: ActionId) -> Option<&[T]> {
        let k = self.action_position(i, a)?;
        self.stage_reward.get(t.wrapping_sub(1)).map(|rows| rows[i - 1][k].as_slice())
    }

    pub fn terminal_reward(&self) -> &[T] {
        &self.terminal_reward
    }

    pub fn kernel(&self) -> &StageArray<T> {
        &self.kernel
    }

    pub fn stage_reward_array(&self) -> &StageArray<T> {
        &self.stage_reward
    }

    /// Returns a copy with `shift` added to every terminal reward.
    pub fn with_terminal_shift(&self, shift: T) -> Self {
        let mut out = self.clone();
        for r in &mut out.terminal_reward {
            *r = r.clone() + shift.clone();
        }
        out
    }

    /// Expected one-step reward `Σ_j r_t(a,i,j) p_t(j|i,a)` by position.
    fn expected_reward_at(&self, t: usize, i: usize, k: usize) -> T {
        dot(&self.stage_reward[t - 1][i - 1][k], &self.kernel[t - 1][i - 1][k])
    }

    /// Expected one-step reward of an admissible `(t, i, a)`.
    pub fn expected_reward(&self, t: usize, i: usize, a: ActionId) -> Option<T> {
        let k = self.action_position(i, a)?;
        (1..self.horizon)
            .contains(&t)
            .then(|| self.expected_reward_at(t, i, k))
    }

    /// Number of deterministic Markov policies, saturating.
    pub fn policy_count(&self) -> u128 {
        let per_epoch = self
            .actions
            .iter()
            .fold(1u128, |acc, a| acc.saturating_mul(a.len() as u128));
        (0..self.epochs()).fold(1u128, |acc, _| acc.saturating_mul(per_epoch))
    }
}

fn check_shape<T>(
    name: &str,
    array: &StageArray<T>,
    num_states: usize,
    horizon: usize,
    actions: &[Vec<ActionId>],
) -> Result<()> {
    if array.len() != horizon - 1 {
        return Err(Error::InvalidMdp(format!(
            "{name} covers {} epochs, expected {}",
            array.len(),
            horizon - 1
        )));
    }
    for (t, per_state) in array.iter().enumerate() {
        if per_state.len() != num_states {
            return Err(Error::InvalidMdp(format!(
                "{name}[t={}] has {} states, expected {num_states}",
                t + 1,
                per_state.len()
            )));
        }
        for (i, per_action) in per_state.iter().enumerate() {
            if per_action.len() != actions[i].len() {
                return Err(Error::InvalidMdp(format!(
                    "{name}[t={}][i={}] has {} actions, expected {}",
                    t + 1,
                    i + 1,
                    per_action.len(),
                    actions[i].len()
                )));
            }
            if let Some(row) = per_action.iter().find(|row| row.len() != num_states) {
                return Err(Error::InvalidMdp(format!(
                    "{name}[t={}][i={}] row has {} entries, expected {num_states}",
                    t + 1,
                    i + 1,
                    row.len()
                )));
            }
        }
    }
    Ok(())
}

fn check_entries<T: Scalar>(row: &[T]) -> std::result::Result<T, String> {
    for (j, p) in row.iter().enumerate() {
        if !(p.is_finite_value() && *p >= T::zero() && *p <= T::one()) {
            return Err(format!("entry {} = {p:?} is not in [0, 1]", j + 1));
        }
    }
    Ok(sum(row))
}

fn normalize_row<T: Scalar>(row: &mut [T]) -> std::result::Result<(), String> {
    let total = check_entries(row)?;
    if total == T::one() {
        return Ok(());
    }
    if (total.clone() - T::one()).abs() < T::renormalize_limit() {
        for p in row.iter_mut() {
            *p = p.clone() / total.clone();
        }
        Ok(())
    } else {
        Err(format!("row sums to {total:?}"))
    }
}

/// Expected reward of one transition law: `Σ_j rewards[j] · row[j]`.
pub fn expected_stage_reward<T: Scalar>(rewards: &[T], row: &[T]) -> Result<T> {
    if rewards.len() != row.len() {
        return Err(Error::DimensionMismatch {
            expected: rewards.len(),
            actual: row.len(),
        });
    }
    let total = check_entries(row).map_err(Error::InvalidDistribution)?;
    if (total.clone() - T::one()).abs() > T::simplex_tolerance() {
        return Err(Error::InvalidDistribution(format!("row sums to {total:?}")));
    }
    Ok(dot(rewards, row))
}

/// Deterministic Markov policy: one decision rule per epoch.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Policy {
    rules: Vec<Vec<ActionId>>,
}

impl Policy {
    /// `rules[t-1][s-1]` is the action taken in state `s` at epoch `t`.
    pub fn new(rules: Vec<Vec<ActionId>>) -> Self {
        Policy { rules }
    }

    /// Policy taking action `a` everywhere.
    pub fn constant(epochs: usize, num_states: usize, a: ActionId) -> Self {
        Policy {
            rules: vec![vec![a; num_states]; epochs],
        }
    }

    pub fn action(&self, t: usize, s: usize) -> ActionId {
        self.rules[t - 1][s - 1]
    }

    pub fn epochs(&self) -> usize {
        self.rules.len()
    }

    pub fn rules(&self) -> &[Vec<ActionId>] {
        &self.rules
    }

    /// Checks shape and that every rule picks an admissible action.
    pub fn check_admissible<T: Scalar>(&self, mdp: &FiniteHorizonMdp<T>) -> Result<()> {
        if self.rules.len() != mdp.epochs() {
            return Err(Error::InvalidPolicy(format!(
                "policy covers {} epochs, MDP has {}",
                self.rules.len(),
                mdp.epochs()
            )));
        }
        for (t, rule) in self.rules.iter().enumerate() {
            if rule.len() != mdp.num_states() {
                return Err(Error::InvalidPolicy(format!(
                    "rule at epoch {} covers {} states, MDP has {}",
                    t + 1,
                    rule.len(),
                    mdp.num_states()
                )));
            }
            for (s, &a) in rule.iter().enumerate() {
                if mdp.action_position(s + 1, a).is_none() {
                    return Err(Error::InvalidPolicy(format!(
                        "action {a} is not admissible in state {} at epoch {}",
                        s + 1,
                        t + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Output of backward induction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySolution<T> {
    pub policy: Policy,
    /// `values[t-1][s-1] = u*_t(s)` for `t = 1..=N`.
    pub values: Vec<Vec<T>>,
    /// Every action within tie tolerance of the maximum, ascending.
    pub optimal_actions: Vec<Vec<Vec<ActionId>>>,
}

impl<T: Scalar> PolicySolution<T> {
    pub fn value(&self, t: usize, s: usize) -> &T {
        &self.values[t - 1][s - 1]
    }

    pub fn optimal_set(&self, t: usize, s: usize) -> &[ActionId] {
        &self.optimal_actions[t - 1][s - 1]
    }
}

/// Q-value of every admissible action of `(t, i)` given `u*_{t+1}`.
pub fn action_values<T: Scalar>(
    mdp: &FiniteHorizonMdp<T>,
    t: usize,
    i: usize,
    next_values: &[T],
) -> Vec<T> {
    (0..mdp.actions[i - 1].len())
        .map(|k| mdp.expected_reward_at(t, i, k) + dot(&mdp.kernel[t - 1][i - 1][k], next_values))
        .collect()
}

/// Exact solution by backward induction.
///
/// The reported action is the lowest id among those within
/// [`Scalar::tie_tolerance`] of the maximum; the full tie set is kept in
/// [`PolicySolution::optimal_actions`].
pub fn backward_induction<T: Scalar>(mdp: &FiniteHorizonMdp<T>) -> PolicySolution<T> {
    let n = mdp.horizon;
    let mut values = vec![Vec::new(); n];
    values[n - 1] = mdp.terminal_reward.clone();
    let mut rules = vec![Vec::with_capacity(mdp.num_states); n - 1];
    let mut optimal_actions = vec![Vec::with_capacity(mdp.num_states); n - 1];

    for t in (1..n).rev() {
        let mut u_t = Vec::with_capacity(mdp.num_states);
        for i in 1..=mdp.num_states {
            let q = action_values(mdp, t, i, &values[t]);
            let best = q
                .iter()
                .skip(1)
                .fold(q[0].clone(), |m, v| if *v > m { v.clone() } else { m });
            let tied: Vec<ActionId> = q
                .iter()
                .zip(&mdp.actions[i - 1])
                .filter(|(v, _)| best.clone() - (*v).clone() <= T::tie_tolerance())
                .map(|(_, &a)| a)
                .collect();
            rules[t - 1].push(tied[0]);
            optimal_actions[t - 1].push(tied);
            u_t.push(best);
        }
        values[t - 1] = u_t;
    }

    PolicySolution {
        policy: Policy { rules },
        values,
        optimal_actions,
    }
}

/// Expected total reward of `policy` from initial state `s`, computed by
/// propagating the exact state distribution forward.
pub fn evaluate_policy<T: Scalar>(mdp: &FiniteHorizonMdp<T>, policy: &Policy, s: usize) -> Result<T> {
    policy.check_admissible(mdp)?;
    if !(1..=mdp.num_states).contains(&s) {
        return Err(Error::OutOfRange {
            what: "initial state",
            value: s.to_string(),
        });
    }
    Ok(evaluate_unchecked(mdp, policy, s))
}

fn evaluate_unchecked<T: Scalar>(mdp: &FiniteHorizonMdp<T>, policy: &Policy, s: usize) -> T {
    let j_count = mdp.num_states;
    let mut dist = vec![T::zero(); j_count];
    dist[s - 1] = T::one();
    let mut total = T::zero();
    for t in 1..mdp.horizon {
        let mut next = vec![T::zero(); j_count];
        for i in 1..=j_count {
            let mass = &dist[i - 1];
            if mass.is_zero() {
                continue;
            }
            let k = mdp
                .action_position(i, policy.action(t, i))
                .expect("policy checked admissible");
            total = total + mass.clone() * mdp.expected_reward_at(t, i, k);
            for (acc, p) in next.iter_mut().zip(&mdp.kernel[t - 1][i - 1][k]) {
                *acc = acc.clone() + mass.clone() * p.clone();
            }
        }
        dist = next;
    }
    total + dot(&dist, &mdp.terminal_reward)
}

/// Best value per initial state found by exhaustive search.
#[derive(Clone, Debug, PartialEq)]
pub struct EnumeratedOptimum<T> {
    /// `values[s-1]` is `max_π v^π_N(s)`.
    pub values: Vec<T>,
    /// First policy (in enumeration order) attaining each maximum.
    pub policies: Vec<Policy>,
    pub policies_visited: u128,
}

/// Evaluates every deterministic Markov policy from every initial state.
///
/// Independent of [`backward_induction`]; meant as a test oracle.
pub fn enumerate_optimal<T: Scalar>(mdp: &FiniteHorizonMdp<T>) -> Result<EnumeratedOptimum<T>> {
    enumerate_optimal_with_limit(mdp, ENUMERATION_LIMIT)
}

pub fn enumerate_optimal_with_limit<T: Scalar>(
    mdp: &FiniteHorizonMdp<T>,
    limit: u128,
) -> Result<EnumeratedOptimum<T>> {
    let count = mdp.policy_count();
    if count > limit {
        return Err(Error::SizeLimit {
            policies: count,
            limit,
        });
    }
    let j_count = mdp.num_states;
    let epochs = mdp.epochs();
    // odometer over (t, s) slots, each digit an action position
    let radices: Vec<usize> = (0..epochs)
        .flat_map(|_| mdp.actions.iter().map(Vec::len))
        .collect();
    let mut digits = vec![0usize; radices.len()];
    let mut best: Vec<Option<(T, Policy)>> = vec![None; j_count];
    let mut visited = 0u128;

    loop {
        let rules: Vec<Vec<ActionId>> = (0..epochs)
            .map(|t| {
                (0..j_count)
                    .map(|s| mdp.actions[s][digits[t * j_count + s]])
                    .collect()
            })
            .collect();
        let policy = Policy { rules };
        for s in 1..=j_count {
            let v = evaluate_unchecked(mdp, &policy, s);
            let better = match &best[s - 1] {
                None => true,
                Some((b, _)) => v > *b,
            };
            if better {
                best[s - 1] = Some((v, policy.clone()));
            }
        }
        visited += 1;

        let mut pos = 0;
        loop {
            if pos == digits.len() {
                let (values, policies) = best.into_iter().map(|b| b.expect("at least one policy")).unzip();
                return Ok(EnumeratedOptimum {
                    values,
                    policies,
                    policies_visited: visited,
                });
            }
            digits[pos] += 1;
            if digits[pos] < radices[pos] {
                break;
            }
            digits[pos] = 0;
            pos += 1;
        }
    }
}
