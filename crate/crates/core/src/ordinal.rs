//! Proportional-odds cumulative logit model.
//!
//! `logit P(y <= j | x) = alpha_j + beta' x` for `j = 1..J-1`, with one slope
//! vector shared by every cut-point. Fitting is maximum likelihood by Fisher
//! scoring with step-halving; covariates are centered and scaled internally
//! and estimates are reported in both standardized and original units.

use nalgebra::{convert, DMatrix, DVector, RealField};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Which transition law a dataset or model describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModelContext {
    #[serde(rename = "s")]
    pub state: usize,
    #[serde(rename = "a")]
    pub action: usize,
    /// `None` for a model pooled over epochs.
    #[serde(rename = "t", default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
}

impl ModelContext {
    pub fn pooled(state: usize, action: usize) -> Self {
        ModelContext {
            state,
            action,
            epoch: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrdinalDataset<F: RealField> {
    x: DMatrix<F>,
    y: Vec<usize>,
    num_categories: usize,
    pub context: ModelContext,
}

impl<F: RealField + Copy> OrdinalDataset<F> {
    /// `x` is `n × p`; responses are category labels in `1..=num_categories`.
    pub fn new(x: DMatrix<F>, y: Vec<usize>, num_categories: usize, context: ModelContext) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::InsufficientData("dataset has no rows".into()));
        }
        if num_categories == 0 {
            return Err(Error::InvalidParameters("at least one category is required".into()));
        }
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: y.len(),
                actual: x.nrows(),
            });
        }
        if let Some(bad) = y.iter().find(|&&c| c == 0 || c > num_categories) {
            return Err(Error::OutOfRange {
                what: "response category",
                value: bad.to_string(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("design matrix contains a non-finite value".into()));
        }
        Ok(OrdinalDataset {
            x,
            y,
            num_categories,
            context,
        })
    }

    pub fn from_rows(rows: &[Vec<F>], y: Vec<usize>, num_categories: usize, context: ModelContext) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                actual: r.len(),
            });
        }
        let x = DMatrix::from_fn(rows.len(), p, |i, k| rows[i][k]);
        Self::new(x, y, num_categories, context)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn num_covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    pub fn design(&self) -> &DMatrix<F> {
        &self.x
    }

    pub fn responses(&self) -> &[usize] {
        &self.y
    }

    /// Observation count per category, index 0 holding category 1.
    pub fn category_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_categories];
        for &c in &self.y {
            counts[c - 1] += 1;
        }
        counts
    }

    /// Copy with `shift` added to covariate column `k`.
    pub fn with_shifted_column(&self, k: usize, shift: F) -> Self {
        let mut out = self.clone();
        for v in out.x.column_mut(k).iter_mut() {
            *v += shift;
        }
        out
    }
}

fn f<F: RealField + Copy>(v: f64) -> F {
    convert(v)
}

pub(crate) fn sigmoid<F: RealField + Copy>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Category probabilities for cumulative linear predictors `eta_1 < … < eta_{J-1}`.
///
/// Interior differences use `σ(a)σ(-b)(1 - e^{b-a})`, which avoids the
/// cancellation of `σ(a) - σ(b)` when both are close to one.
fn category_probabilities<F: RealField + Copy>(eta: &[F]) -> Vec<F> {
    let j_count = eta.len() + 1;
    if j_count == 1 {
        return vec![F::one()];
    }
    let mut probs = Vec::with_capacity(j_count);
    probs.push(sigmoid(eta[0]));
    for k in 1..eta.len() {
        let (a, b) = (eta[k], eta[k - 1]);
        let p = sigmoid(a) * sigmoid(-b) * (-(b - a).exp_m1());
        probs.push(if p > F::zero() { p } else { F::zero() });
    }
    probs.push(sigmoid(-eta[eta.len() - 1]));
    probs
}

/// Raw model parameters in the units of whatever design they are applied to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrdinalParams<F> {
    pub alpha: Vec<F>,
    pub beta: Vec<F>,
}

impl<F: RealField + Copy> OrdinalParams<F> {
    pub fn new(alpha: Vec<F>, beta: Vec<F>) -> Result<Self> {
        let params = OrdinalParams { alpha, beta };
        params.check()?;
        Ok(params)
    }

    fn check(&self) -> Result<()> {
        if self.alpha.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameters(format!(
                "cut-points must be strictly increasing: {:?}",
                self.alpha
            )));
        }
        if self.alpha.iter().chain(&self.beta).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameters("parameters must be finite".into()));
        }
        Ok(())
    }

    fn dimension(&self) -> usize {
        self.alpha.len() + self.beta.len()
    }

    fn as_vector(&self) -> DVector<F> {
        DVector::from_iterator(self.dimension(), self.alpha.iter().chain(&self.beta).copied())
    }

    fn from_vector(v: &DVector<F>, cuts: usize) -> Self {
        OrdinalParams {
            alpha: v.rows(0, cuts).iter().copied().collect(),
            beta: v.rows(cuts, v.len() - cuts).iter().copied().collect(),
        }
    }

    fn linear_predictors(&self, x: impl Iterator<Item = F>) -> Vec<F> {
        let shift = x.zip(&self.beta).fold(F::zero(), |acc, (xi, b)| acc + xi * *b);
        self.alpha.iter().map(|a| *a + shift).collect()
    }

    /// Category probabilities at a covariate vector in this parameter's units.
    pub fn probabilities(&self, x: &[F]) -> Result<Vec<F>> {
        if x.len() != self.beta.len() {
            return Err(Error::DimensionMismatch {
                expected: self.beta.len(),
                actual: x.len(),
            });
        }
        Ok(category_probabilities(&self.linear_predictors(x.iter().copied())))
    }

    fn check_against(&self, data: &OrdinalDataset<F>) -> Result<()> {
        self.check()?;
        if self.beta.len() != data.num_covariates() {
            return Err(Error::DimensionMismatch {
                expected: data.num_covariates(),
                actual: self.beta.len(),
            });
        }
        if self.alpha.len() + 1 != data.num_categories() {
            return Err(Error::DimensionMismatch {
                expected: data.num_categories() - 1,
                actual: self.alpha.len(),
            });
        }
        Ok(())
    }
}

/// `Σ_i ln π_{y_i}(x_i)`; negative infinity when some observed category has
/// probability zero.
pub fn log_likelihood<F: RealField + Copy>(params: &OrdinalParams<F>, data: &OrdinalDataset<F>) -> Result<F> {
    params.check_against(data)?;
    Ok(log_likelihood_unchecked(params, data))
}

fn log_likelihood_unchecked<F: RealField + Copy>(params: &OrdinalParams<F>, data: &OrdinalDataset<F>) -> F {
    let mut total = F::zero();
    for (i, &y) in data.y.iter().enumerate() {
        let eta = params.linear_predictors(data.x.row(i).iter().copied());
        let p = category_probabilities(&eta)[y - 1];
        if p <= F::zero() {
            return f(f64::NEG_INFINITY);
        }
        total += p.ln();
    }
    total
}

/// Gradients of every category probability with respect to `(alpha, beta)`.
fn probability_gradients<F: RealField + Copy>(
    params: &OrdinalParams<F>,
    x_row: &[F],
) -> (Vec<F>, Vec<DVector<F>>) {
    let cuts = params.alpha.len();
    let dim = params.dimension();
    let eta = params.linear_predictors(x_row.iter().copied());
    let probs = category_probabilities(&eta);
    // d gamma_j / d theta = w_j (e_j, x)
    let cumulative_grad = |j: usize| -> DVector<F> {
        let g = sigmoid(eta[j]);
        let w = g * (F::one() - g);
        let mut v = DVector::zeros(dim);
        v[j] = w;
        for (k, xk) in x_row.iter().enumerate() {
            v[cuts + k] = w * *xk;
        }
        v
    };
    let mut grads = Vec::with_capacity(cuts + 1);
    for k in 0..=cuts {
        let mut d = if k < cuts { cumulative_grad(k) } else { DVector::zeros(dim) };
        if k > 0 {
            d -= cumulative_grad(k - 1);
        }
        grads.push(d);
    }
    (probs, grads)
}

/// Analytic score vector `∂ℓ/∂(alpha, beta)`.
pub fn score<F: RealField + Copy>(params: &OrdinalParams<F>, data: &OrdinalDataset<F>) -> Result<DVector<F>> {
    params.check_against(data)?;
    Ok(score_and_information(params, data).0)
}

/// Expected (Fisher) information matrix.
pub fn fisher_information<F: RealField + Copy>(
    params: &OrdinalParams<F>,
    data: &OrdinalDataset<F>,
) -> Result<DMatrix<F>> {
    params.check_against(data)?;
    Ok(score_and_information(params, data).1)
}

fn score_and_information<F: RealField + Copy>(
    params: &OrdinalParams<F>,
    data: &OrdinalDataset<F>,
) -> (DVector<F>, DMatrix<F>) {
    let dim = params.dimension();
    let mut grad = DVector::zeros(dim);
    let mut info = DMatrix::zeros(dim, dim);
    let mut row = vec![F::zero(); data.num_covariates()];
    for (i, &y) in data.y.iter().enumerate() {
        for (dst, src) in row.iter_mut().zip(data.x.row(i).iter()) {
            *dst = *src;
        }
        let (probs, grads) = probability_gradients(params, &row);
        if probs[y - 1] > F::zero() {
            grad.axpy(F::one() / probs[y - 1], &grads[y - 1], F::one());
        }
        for (p, d) in probs.iter().zip(&grads) {
            if *p > F::zero() {
                info.ger(F::one() / *p, d, d, F::one());
            }
        }
    }
    (grad, info)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub max_step_halvings: usize,
    /// Standardized slopes beyond this magnitude are reported as separation.
    pub separation_bound: f64,
    pub standardize: bool,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            max_iterations: 100,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-10,
            max_step_halvings: 20,
            separation_bound: 30.0,
            standardize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitWarning {
    /// Slope of this covariate (0-based column) grew past the separation bound.
    Separation { covariate: usize },
    /// Step-halving could not find an admissible ascent step.
    StepHalvingExhausted,
    MaxIterations,
    SingularInformation,
}

/// Column centering and scaling applied before the linear predictor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization<F> {
    pub mean: Vec<F>,
    pub sd: Vec<F>,
}

impl<F: RealField + Copy> Standardization<F> {
    pub fn identity(p: usize) -> Self {
        Standardization {
            mean: vec![F::zero(); p],
            sd: vec![F::one(); p],
        }
    }

    fn of_columns(x: &DMatrix<F>) -> Result<Self> {
        let n = x.nrows();
        let mut mean = Vec::with_capacity(x.ncols());
        let mut sd = Vec::with_capacity(x.ncols());
        for (k, col) in x.column_iter().enumerate() {
            let m = col.sum() / f(n as f64);
            let ss = col.iter().fold(F::zero(), |acc, v| acc + (*v - m) * (*v - m));
            let s = if n > 1 { (ss / f((n - 1) as f64)).sqrt() } else { F::zero() };
            if !(s > F::zero()) {
                return Err(Error::InsufficientData(format!("covariate column {k} is constant")));
            }
            mean.push(m);
            sd.push(s);
        }
        Ok(Standardization { mean, sd })
    }

    pub fn apply(&self, x: &[F]) -> Vec<F> {
        x.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(v, (m, s))| (*v - *m) / *s)
            .collect()
    }

    /// Linear map taking standardized `(alpha, beta)` to original units.
    fn to_original_map(&self, cuts: usize) -> DMatrix<F> {
        let p = self.mean.len();
        let mut m = DMatrix::zeros(cuts + p, cuts + p);
        for j in 0..cuts {
            m[(j, j)] = F::one();
            for k in 0..p {
                m[(j, cuts + k)] = -self.mean[k] / self.sd[k];
            }
        }
        for k in 0..p {
            m[(cuts + k, cuts + k)] = F::one() / self.sd[k];
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardErrors<F> {
    pub alpha: Vec<F>,
    pub beta: Vec<F>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics<F> {
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: F,
    /// Log-likelihood at the start and after every accepted step.
    pub log_likelihood_trace: Vec<F>,
    pub standard_errors: Option<StandardErrors<F>>,
    pub original_standard_errors: Option<StandardErrors<F>>,
    pub warnings: Vec<FitWarning>,
    pub observations: usize,
}

/// A proportional-odds model ready for prediction.
///
/// `alpha`/`beta` act on standardized covariates; `alpha_original` and
/// `beta_original` are the same fit expressed on raw covariates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedOrdinalModel<F> {
    pub alpha: Vec<F>,
    pub beta: Vec<F>,
    pub standardization: Standardization<F>,
    pub context: ModelContext,
    pub alpha_original: Vec<F>,
    pub beta_original: Vec<F>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitDiagnostics<F>>,
}

impl<F: RealField + Copy> FittedOrdinalModel<F> {
    /// Model with the given parameters applied to `(x - center)`.
    pub fn from_parameters(alpha: Vec<F>, beta: Vec<F>, center: Vec<F>, context: ModelContext) -> Result<Self> {
        if center.len() != beta.len() {
            return Err(Error::DimensionMismatch {
                expected: beta.len(),
                actual: center.len(),
            });
        }
        let params = OrdinalParams::new(alpha, beta)?;
        let standardization = Standardization {
            sd: vec![F::one(); center.len()],
            mean: center,
        };
        Ok(Self::assemble(params, standardization, context, None))
    }

    fn assemble(
        params: OrdinalParams<F>,
        standardization: Standardization<F>,
        context: ModelContext,
        fit: Option<FitDiagnostics<F>>,
    ) -> Self {
        let cuts = params.alpha.len();
        let original = standardization.to_original_map(cuts) * params.as_vector();
        let original = OrdinalParams::from_vector(&original, cuts);
        FittedOrdinalModel {
            alpha: params.alpha,
            beta: params.beta,
            standardization,
            context,
            alpha_original: original.alpha,
            beta_original: original.beta,
            fit,
        }
    }

    pub fn num_categories(&self) -> usize {
        self.alpha.len() + 1
    }

    pub fn num_covariates(&self) -> usize {
        self.beta.len()
    }

    pub fn converged(&self) -> bool {
        self.fit.as_ref().is_none_or(|d| d.converged)
    }

    /// Standardized-scale parameters.
    pub fn params(&self) -> OrdinalParams<F> {
        OrdinalParams {
            alpha: self.alpha.clone(),
            beta: self.beta.clone(),
        }
    }

    /// Raw-scale parameters.
    pub fn original_params(&self) -> OrdinalParams<F> {
        OrdinalParams {
            alpha: self.alpha_original.clone(),
            beta: self.beta_original.clone(),
        }
    }

    /// Next-state distribution at a raw covariate vector.
    pub fn predict_row(&self, x: &[F]) -> Result<Vec<F>> {
        if x.len() != self.beta.len() {
            return Err(Error::DimensionMismatch {
                expected: self.beta.len(),
                actual: x.len(),
            });
        }
        let z = self.standardization.apply(x);
        Ok(category_probabilities(&self.params().linear_predictors(z.into_iter())))
    }

    /// `P(y <= j | x)` for `j = 1..J`.
    pub fn cumulative(&self, x: &[F]) -> Result<Vec<F>> {
        let probs = self.predict_row(x)?;
        let mut acc = F::zero();
        Ok(probs
            .into_iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect())
    }
}

/// Maximum-likelihood fit by Fisher scoring.
///
/// Returns a model flagged non-converged (rather than an error) when the
/// iteration budget or step-halving is exhausted.
pub fn fit<F: RealField + Copy>(data: &OrdinalDataset<F>, settings: &FitSettings) -> Result<FittedOrdinalModel<F>> {
    let j_count = data.num_categories();
    let p = data.num_covariates();
    let n = data.len();
    if j_count < 2 {
        return Err(Error::InsufficientData("at least two categories are required to fit".into()));
    }
    let counts = data.category_counts();
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::DegenerateCategory { category: empty + 1 });
    }
    if n < p + j_count {
        return Err(Error::InsufficientData(format!(
            "{n} observations cannot identify {} parameters",
            p + j_count - 1
        )));
    }

    let standardization = if settings.standardize {
        Standardization::of_columns(&data.x)?
    } else {
        Standardization::identity(p)
    };
    let z = DMatrix::from_fn(n, p, |i, k| (data.x[(i, k)] - standardization.mean[k]) / standardization.sd[k]);
    let work = OrdinalDataset {
        x: z,
        y: data.y.clone(),
        num_categories: j_count,
        context: data.context,
    };

    let cuts = j_count - 1;
    let mut alpha = Vec::with_capacity(cuts);
    let mut cumulative = 0usize;
    for &c in &counts[..cuts] {
        cumulative += c;
        let q: F = f(cumulative as f64 / n as f64);
        let a = (q / (F::one() - q)).ln();
        let floor = alpha.last().map(|prev: &F| *prev + f(1e-6));
        alpha.push(match floor {
            Some(fl) if a <= fl => fl,
            _ => a,
        });
    }
    let mut params = OrdinalParams {
        alpha,
        beta: vec![F::zero(); p],
    };

    let grad_tol: F = f(settings.gradient_tolerance);
    let step_tol: F = f(settings.step_tolerance);
    let bound: F = f(settings.separation_bound);
    let max_abs = |v: &DVector<F>| v.iter().fold(F::zero(), |m, x| m.max(x.abs()));

    let mut ll = log_likelihood_unchecked(&params, &work);
    let mut trace = vec![ll];
    let mut warnings = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < settings.max_iterations {
        let (grad, info) = score_and_information(&params, &work);
        if max_abs(&grad) < grad_tol {
            converged = true;
            break;
        }
        let direction = match info.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => match info.lu().solve(&grad) {
                Some(d) => d,
                None => {
                    warnings.push(FitWarning::SingularInformation);
                    break;
                }
            },
        };
        if max_abs(&direction) < step_tol {
            converged = true;
            break;
        }

        let current = params.as_vector();
        let mut step = F::one();
        let mut accepted = None;
        for _ in 0..=settings.max_step_halvings {
            let candidate = OrdinalParams::from_vector(&(&current + &direction * step), cuts);
            if candidate.check().is_ok() {
                let cand_ll = log_likelihood_unchecked(&candidate, &work);
                if cand_ll >= ll {
                    accepted = Some((candidate, cand_ll));
                    break;
                }
            }
            step *= f(0.5);
        }
        let Some((next, next_ll)) = accepted else {
            // ascent is exhausted only at numerical precision when the step is already negligible
            if max_abs(&direction) * step < step_tol {
                converged = true;
            } else {
                warnings.push(FitWarning::StepHalvingExhausted);
            }
            break;
        };
        let change = max_abs(&(next.as_vector() - &current));
        params = next;
        ll = next_ll;
        trace.push(ll);
        iterations += 1;

        if let Some(k) = params.beta.iter().position(|b| b.abs() > bound) {
            warnings.push(FitWarning::Separation { covariate: k });
            break;
        }
        if change < step_tol {
            converged = true;
            break;
        }
    }
    if !converged && iterations >= settings.max_iterations {
        warnings.push(FitWarning::MaxIterations);
    }

    let (_, info) = score_and_information(&params, &work);
    let (standard_errors, original_standard_errors) = match info.try_inverse() {
        Some(cov) => {
            let map = standardization.to_original_map(cuts);
            let cov_original = &map * &cov * map.transpose();
            let se = |c: &DMatrix<F>| {
                let diag: DVector<F> = DVector::from_iterator(c.nrows(), (0..c.nrows()).map(|i| c[(i, i)].max(F::zero()).sqrt()));
                let v = OrdinalParams::from_vector(&diag, cuts);
                StandardErrors {
                    alpha: v.alpha,
                    beta: v.beta,
                }
            };
            (Some(se(&cov)), Some(se(&cov_original)))
        }
        None => (None, None),
    };

    let diagnostics = FitDiagnostics {
        converged,
        iterations,
        log_likelihood: ll,
        log_likelihood_trace: trace,
        standard_errors,
        original_standard_errors,
        warnings,
        observations: n,
    };
    Ok(FittedOrdinalModel::assemble(params, standardization, data.context, Some(diagnostics)))
}

/// Closed interval `[lower, upper]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }

    pub fn half_width(&self) -> f64 {
        (self.upper - self.lower) / 2.0
    }
}

/// Two-sided standard-normal quantile for a confidence level (1.959964 at 0.95).
pub fn normal_critical_value(level: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    normal.inverse_cdf(1.0 - (1.0 - level) / 2.0)
}

/// Wald band `p̂ ± z sqrt(p̂(1-p̂)/n)` clamped to `[0, 1]`.
pub fn confidence_band(p_hat: f64, n: usize, level: f64) -> Interval {
    let z = normal_critical_value(level);
    let half = z * (p_hat * (1.0 - p_hat) / n.max(1) as f64).sqrt();
    Interval {
        lower: (p_hat - half).clamp(0.0, 1.0),
        upper: (p_hat + half).clamp(0.0, 1.0),
    }
}

/// Free-parameter totals of the pooled proportional-odds model and of a
/// per-epoch multinomial logit model: `(J(p+J-1)|A|, JT(J-1)(p+1)|A|)`.
pub fn parameter_counts(num_states: u64, num_covariates: u64, num_actions: u64, horizon: u64) -> (u64, u64) {
    let j = num_states;
    let proportional = j * (num_covariates + j - 1) * num_actions;
    let multinomial = j * horizon * (j - 1) * (num_covariates + 1) * num_actions;
    (proportional, multinomial)
}
