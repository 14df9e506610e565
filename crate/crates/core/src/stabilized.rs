//! Stabilized one-step estimation of the maximal indirect effect.
//!
//! After a random ordering of the rows, for each prefix length
//! `j = qₙ, …, n−1` the nuisances are refitted on the first `j` rows, the
//! mediator with the largest `|Ψₖ|` is selected, and its one-step estimate is
//! evaluated at the held-out row `j+1`. The held-out terms are combined with
//! inverse-σ̂ weights:
//!
//! ```text
//! S*ₙ = (n−qₙ)⁻¹ Σⱼ wₙⱼ·mⱼ·[Ψ_{kⱼ}(P̂ₙⱼ) + f*_{kⱼ}(O_{j+1} | P̂ₙⱼ)],
//! wₙⱼ = σ̄ₙ/σ̂ₙⱼ,   σ̄ₙ = {(n−qₙ)⁻¹ Σⱼ 1/σ̂ₙⱼ}⁻¹
//! ```
//!
//! and `√(n−qₙ)(S*ₙ − Ψ)/σ̄ₙ` is asymptotically standard normal.

use crate::dataset::{ordering_permutation, Dataset};
use crate::influence::influence_values;
use crate::nuisance::{AnalysisContext, NuisanceError, NuisanceOptions, NuisanceScope, NuisanceSet, PrefixMoments};
use crate::rng::{derive_seed, derive_seed2};
use crate::stats::{self, two_sided_p, two_sided_z};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Steps whose σ̂ falls below this abort the analysis.
pub const SIGMA_FLOOR: f64 = 1e-10;
pub const CHECKPOINTS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilizedError {
    #[error("q_n = {q_n} must satisfy 1 <= q_n < n = {n}")]
    InvalidQn { q_n: usize, n: usize },
    #[error("ordering has {got} entries, expected {n}")]
    InvalidOrder { got: usize, n: usize },
    #[error("prefix of {j} rows lacks exposure level {missing}; use another ordering or a larger q_n")]
    PrefixPositivity { j: usize, missing: u8 },
    #[error("step j = {j}: sigma_hat {sigma} for mediator {k} is below {SIGMA_FLOOR}")]
    DegenerateVariance { j: usize, k: usize, sigma: f64 },
    #[error("step j = {j}: {source}")]
    Step { j: usize, source: NuisanceError },
    #[error("alpha must lie in (0, 1), got {0}")]
    Alpha(f64),
    #[error("all {0} orderings failed")]
    AllOrderingsFailed(usize),
    #[error(transparent)]
    Nuisance(#[from] NuisanceError),
}

impl StabilizedError {
    fn at_step(j: usize, err: NuisanceError) -> Self {
        match err {
            NuisanceError::Positivity { j, missing } => StabilizedError::PrefixPositivity { j, missing },
            source => StabilizedError::Step { j, source },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilizedConfig {
    pub nuisance: NuisanceOptions,
    pub alpha: f64,
}

impl Default for StabilizedConfig {
    fn default() -> Self {
        Self {
            nuisance: NuisanceOptions::default(),
            alpha: 0.1,
        }
    }
}

/// One prefix step of the stabilized estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Prefix length.
    pub j: usize,
    /// Selected mediator (0-based).
    pub k: usize,
    pub m: i8,
    /// `Ψ_{kⱼ}(P̂ₙⱼ)`.
    pub psi: f64,
    /// `f*_{kⱼ}(O_{j+1} | P̂ₙⱼ)`.
    pub f_star_next: f64,
    pub sigma_hat: f64,
    pub weight: f64,
    /// `wₙⱼ·mⱼ·(psi + f_star_next)`.
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilizedEstimate {
    pub s_star: f64,
    pub sigma_bar: f64,
    pub q_n: usize,
    pub n: usize,
    pub alpha: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub trace: Vec<TraceStep>,
    pub ordering_seed: Option<u64>,
}

impl StabilizedEstimate {
    pub fn n_steps(&self) -> usize {
        self.n - self.q_n
    }

    /// `σ̄ₙ/√(n−qₙ)`.
    pub fn standard_error(&self) -> f64 {
        self.sigma_bar / (self.n_steps() as f64).sqrt()
    }

    /// `√(n−qₙ)(S*ₙ − ψ)/σ̄ₙ`.
    pub fn standardized(&self, psi: f64) -> f64 {
        (self.s_star - psi) / self.standard_error()
    }

    pub fn interval(&self, alpha: f64) -> (f64, f64) {
        ci_pvalue(self.s_star, self.sigma_bar, self.n_steps(), alpha).0
    }

    /// Selected mediators at five evenly spaced steps.
    pub fn checkpoint_selections(&self) -> Vec<(usize, usize)> {
        checkpoint_steps(self.q_n, self.n)
            .into_iter()
            .map(|j| (j, self.trace[j - self.q_n].k))
            .collect()
    }
}

/// Five evenly spaced prefix lengths in `{q_n, …, n−1}`.
pub fn checkpoint_steps(q_n: usize, n: usize) -> Vec<usize> {
    let span = (n - 1 - q_n) as f64;
    let mut steps: Vec<usize> = (0..CHECKPOINTS)
        .map(|c| q_n + (c as f64 * span / (CHECKPOINTS - 1) as f64).round() as usize)
        .collect();
    steps.dedup();
    steps
}

/// `argmaxₖ |Ψₖ|` (smallest index on ties) and the sign of the winner
/// (`+1` when it is exactly zero).
pub fn select_mediator(psi: &[f64]) -> (usize, i8) {
    let mut best = 0;
    let mut best_abs = f64::NEG_INFINITY;
    for (k, v) in psi.iter().enumerate() {
        if v.abs() > best_abs {
            best = k;
            best_abs = v.abs();
        }
    }
    let m = if psi[best] < 0.0 { -1 } else { 1 };
    (best, m)
}

/// Interval `S* ± z_{α/2}·σ̄/√(n−qₙ)` and two-sided p-value `2(1 − Φ(|√(n−qₙ)S*/σ̄|))`.
pub fn ci_pvalue(s_star: f64, sigma_bar: f64, n_steps: usize, alpha: f64) -> ((f64, f64), f64) {
    let se = sigma_bar / (n_steps as f64).sqrt();
    let half = two_sided_z(alpha) * se;
    ((s_star - half, s_star + half), two_sided_p(s_star / se))
}

/// Fill weights and contributions; returns `(S*ₙ, σ̄ₙ)`.
pub fn aggregate(steps: &mut [TraceStep]) -> (f64, f64) {
    let count = steps.len() as f64;
    let inv_mean = steps.iter().map(|s| 1.0 / s.sigma_hat).sum::<f64>() / count;
    let sigma_bar = 1.0 / inv_mean;
    let mut total = 0.0;
    for s in steps.iter_mut() {
        s.weight = sigma_bar / s.sigma_hat;
        s.contribution = s.weight * s.m as f64 * (s.psi + s.f_star_next);
        total += s.contribution;
    }
    (total / count, sigma_bar)
}

fn validate(n: usize, order: &[usize], q_n: usize, alpha: f64) -> Result<(), StabilizedError> {
    if order.len() != n {
        return Err(StabilizedError::InvalidOrder { got: order.len(), n });
    }
    if q_n == 0 || q_n >= n {
        return Err(StabilizedError::InvalidQn { q_n, n });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StabilizedError::Alpha(alpha));
    }
    Ok(())
}

fn step_from_values(
    j: usize,
    k: usize,
    m: i8,
    psi: f64,
    prefix_values: &[f64],
    next_value: f64,
) -> Result<TraceStep, StabilizedError> {
    let sigma_hat = stats::population_sd(prefix_values);
    if !(sigma_hat >= SIGMA_FLOOR) {
        return Err(StabilizedError::DegenerateVariance { j, k: k + 1, sigma: sigma_hat });
    }
    Ok(TraceStep {
        j,
        k,
        m,
        psi,
        f_star_next: next_value,
        sigma_hat,
        weight: f64::NAN,
        contribution: f64::NAN,
    })
}

/// Stabilized estimator on `d` with rows visited in `order`.
pub fn stabilized_one_step(
    d: &Dataset,
    order: &[usize],
    q_n: usize,
    config: &StabilizedConfig,
) -> Result<StabilizedEstimate, StabilizedError> {
    let ctx = AnalysisContext::new(d)?;
    stabilized_with_context(&ctx, order, q_n, config)
}

/// As [`stabilized_one_step`], reusing a prepared full-sample context.
pub fn stabilized_with_context(
    ctx: &AnalysisContext<'_>,
    order: &[usize],
    q_n: usize,
    config: &StabilizedConfig,
) -> Result<StabilizedEstimate, StabilizedError> {
    let d = ctx.data();
    let n = d.n();
    validate(n, order, q_n, config.alpha)?;
    let options = config.nuisance;
    let mut steps = Vec::with_capacity(n - q_n);

    match options.scope {
        NuisanceScope::Appendix => {
            let q = if options.adjust_for_z { d.q() } else { 0 };
            let mut moments = PrefixMoments::new(d.p(), q);
            for &i in &order[..q_n] {
                moments.push_row(ctx, i);
            }
            for j in q_n..n {
                let rows = &order[..j];
                let ns = NuisanceSet::from_moments(ctx, rows, &moments, options)
                    .map_err(|e| StabilizedError::at_step(j, e))?;
                let (k, m) = select_mediator(ns.psi());
                let mut eval_rows = rows.to_vec();
                eval_rows.push(order[j]);
                let values: Vec<f64> = influence_values(&ns, k, &eval_rows)
                    .map_err(|e| StabilizedError::at_step(j, e))?
                    .into_iter()
                    .map(|v| v.f_star)
                    .collect();
                steps.push(step_from_values(j, k, m, ns.psi()[k], &values[..j], values[j])?);
                moments.push_row(ctx, order[j]);
            }
        }
        NuisanceScope::Full => {
            let ns = NuisanceSet::full_sample(ctx, options).map_err(|e| StabilizedError::at_step(n, e))?;
            let (k, m) = select_mediator(ns.psi());
            let values: Vec<f64> = influence_values(&ns, k, order)
                .map_err(|e| StabilizedError::at_step(n, e))?
                .into_iter()
                .map(|v| v.f_star)
                .collect();
            for j in q_n..n {
                steps.push(step_from_values(j, k, m, ns.psi()[k], &values[..j], values[j])?);
            }
        }
    }

    let (s_star, sigma_bar) = aggregate(&mut steps);
    let ((ci_low, ci_high), p_value) = ci_pvalue(s_star, sigma_bar, n - q_n, config.alpha);
    Ok(StabilizedEstimate {
        s_star,
        sigma_bar,
        q_n,
        n,
        alpha: config.alpha,
        ci_low,
        ci_high,
        p_value,
        trace: steps,
        ordering_seed: None,
    })
}

/// Default burn-in `round(0.8·n)`.
pub fn default_q_n(n: usize) -> usize {
    qn_from_fraction(n, 0.8)
}

pub fn qn_from_fraction(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingResult {
    pub index: usize,
    pub seed: u64,
    pub estimate: StabilizedEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingFailure {
    pub index: usize,
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingEnsemble {
    pub orderings: usize,
    pub alpha: f64,
    pub results: Vec<OrderingResult>,
    pub failures: Vec<OrderingFailure>,
    /// `min(1, M·minₘ pₘ)`.
    pub combined_p: f64,
    /// Position in `results` of the ordering with the smallest p-value.
    pub reported: usize,
    /// Reported interval at level `α/M`.
    pub combined_ci: (f64, f64),
    /// `(j, k)` selections at the checkpoints of the reported ordering.
    pub checkpoints: Vec<(usize, usize)>,
}

impl OrderingEnsemble {
    pub fn reported(&self) -> &OrderingResult {
        &self.results[self.reported]
    }

    /// Mediators selected at the checkpoints with their counts, most frequent first.
    pub fn selection_frequency(&self) -> Vec<(usize, usize)> {
        let mut counts: Vec<(usize, usize)> = Vec::new();
        for &(_, k) in &self.checkpoints {
            match counts.iter_mut().find(|(kk, _)| *kk == k) {
                Some(entry) => entry.1 += 1,
                None => counts.push((k, 1)),
            }
        }
        counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        counts
    }
}

/// Seed of ordering `index` (attempt 0) or its retry (attempt 1).
pub fn ordering_seed(master: u64, index: usize, attempt: u64) -> u64 {
    if attempt == 0 {
        derive_seed(master, index as u64)
    } else {
        derive_seed2(master, index as u64, attempt)
    }
}

/// Run `orderings` seeded orderings in parallel and combine them by Bonferroni.
pub fn multi_ordering_analysis(
    d: &Dataset,
    orderings: usize,
    q_n: usize,
    seed: u64,
    config: &StabilizedConfig,
) -> Result<OrderingEnsemble, StabilizedError> {
    let ctx = AnalysisContext::new(d)?;
    multi_ordering_with_context(&ctx, orderings, q_n, seed, config)
}

pub fn multi_ordering_with_context(
    ctx: &AnalysisContext<'_>,
    orderings: usize,
    q_n: usize,
    seed: u64,
    config: &StabilizedConfig,
) -> Result<OrderingEnsemble, StabilizedError> {
    let n = ctx.data().n();
    let m = orderings.max(1);
    validate(n, &vec![0; n], q_n, config.alpha)?;
    let outcomes: Vec<Result<OrderingResult, OrderingFailure>> = (0..m)
        .into_par_iter()
        .map(|index| {
            let mut last = None;
            for attempt in 0..2 {
                let s = ordering_seed(seed, index, attempt);
                let order = ordering_permutation(n, s);
                match stabilized_with_context(ctx, &order, q_n, config) {
                    Ok(mut estimate) => {
                        estimate.ordering_seed = Some(s);
                        return Ok(OrderingResult { index, seed: s, estimate });
                    }
                    Err(e @ StabilizedError::PrefixPositivity { .. }) => last = Some((s, e)),
                    Err(e) => {
                        return Err(OrderingFailure {
                            index,
                            seed: s,
                            reason: e.to_string(),
                        })
                    }
                }
            }
            let (s, e) = last.expect("retry recorded");
            Err(OrderingFailure {
                index,
                seed: s,
                reason: e.to_string(),
            })
        })
        .collect();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => results.push(r),
            Err(f) => {
                log::warn!("ordering {} failed: {}", f.index, f.reason);
                failures.push(f);
            }
        }
    }
    if results.is_empty() {
        return Err(StabilizedError::AllOrderingsFailed(m));
    }
    let mut reported = 0;
    for (pos, r) in results.iter().enumerate() {
        if r.estimate.p_value < results[reported].estimate.p_value {
            reported = pos;
        }
    }
    let best = &results[reported].estimate;
    let combined_p = (m as f64 * best.p_value).min(1.0);
    let combined_ci = best.interval(config.alpha / m as f64);
    let checkpoints = best.checkpoint_selections();
    Ok(OrderingEnsemble {
        orderings: m,
        alpha: config.alpha,
        results,
        failures,
        combined_p,
        reported,
        combined_ci,
        checkpoints,
    })
}
