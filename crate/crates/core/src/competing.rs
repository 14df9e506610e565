//! Full-sample one-step competitors: Bonferroni-corrected, naive (uncorrected)
//! and oracle (mediator given in advance).
//!
//! All three report `m·(Ψₖ(P̂ₙ) + Pₙf*ₖ)` with `m = sign(Ψₖ(P̂ₙ))`, so that the
//! estimate targets `|Ψₖ|` and is comparable with the stabilized estimator.

use crate::dataset::Dataset;
use crate::influence::one_step_full;
use crate::nuisance::{AnalysisContext, NuisanceError, NuisanceOptions, NuisanceSet};
use crate::stabilized::select_mediator;
use crate::stats::{two_sided_p, two_sided_z};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompetitorMethod {
    Bonferroni,
    Naive,
    Oracle,
}

impl fmt::Display for CompetitorMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CompetitorMethod::Bonferroni => "bonferroni",
            CompetitorMethod::Naive => "naive",
            CompetitorMethod::Oracle => "oracle",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompetitorResult {
    pub method: CompetitorMethod,
    /// Mediator used (0-based).
    pub k_used: usize,
    pub m: i8,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Corrected by the factor `p` for Bonferroni.
    pub p_value: f64,
    pub raw_p: f64,
    /// Level of the reported interval.
    pub ci_alpha: f64,
    pub n: usize,
}

impl CompetitorResult {
    /// `(estimate − ψ)/se`.
    pub fn standardized(&self, psi: f64) -> f64 {
        (self.estimate - psi) / self.se
    }
}

fn finish(ns: &NuisanceSet<'_>, method: CompetitorMethod, k: usize, alpha: f64) -> Result<CompetitorResult, NuisanceError> {
    let os = one_step_full(ns, k)?;
    let m: i8 = if os.psi_plugin < 0.0 { -1 } else { 1 };
    let estimate = m as f64 * os.psi_onestep;
    let n = os.n_eval;
    let se = os.sigma_hat / (n as f64).sqrt();
    let raw_p = two_sided_p(estimate / se);
    let p = ns.p() as f64;
    let (p_value, ci_alpha) = match method {
        CompetitorMethod::Bonferroni => ((p * raw_p).min(1.0), alpha / p),
        _ => (raw_p, alpha),
    };
    let half = two_sided_z(ci_alpha) * se;
    Ok(CompetitorResult {
        method,
        k_used: k,
        m,
        estimate,
        se,
        ci_low: estimate - half,
        ci_high: estimate + half,
        p_value,
        raw_p,
        ci_alpha,
        n,
    })
}

/// Run `method` on an already fitted full-sample nuisance set. `oracle_k` is
/// only read by the oracle.
pub fn competitor_from_set(
    ns: &NuisanceSet<'_>,
    method: CompetitorMethod,
    oracle_k: usize,
    alpha: f64,
) -> Result<CompetitorResult, NuisanceError> {
    let k = match method {
        CompetitorMethod::Oracle => {
            if oracle_k >= ns.p() {
                return Err(NuisanceError::Index { k: oracle_k + 1, p: ns.p() });
            }
            oracle_k
        }
        _ => select_mediator(ns.psi()).0,
    };
    finish(ns, method, k, alpha)
}

fn run(d: &Dataset, method: CompetitorMethod, k: usize, alpha: f64, options: NuisanceOptions) -> Result<CompetitorResult, NuisanceError> {
    let ctx = AnalysisContext::new(d)?;
    let ns = NuisanceSet::full_sample(&ctx, options)?;
    competitor_from_set(&ns, method, k, alpha)
}

/// Largest full-sample `|Ψₖ|`, inference corrected for `p` comparisons.
pub fn bonferroni_one_step(d: &Dataset, alpha: f64, options: NuisanceOptions) -> Result<CompetitorResult, NuisanceError> {
    run(d, CompetitorMethod::Bonferroni, 0, alpha, options)
}

/// As [`bonferroni_one_step`] without the correction. Anti-conservative.
pub fn naive_one_step(d: &Dataset, alpha: f64, options: NuisanceOptions) -> Result<CompetitorResult, NuisanceError> {
    run(d, CompetitorMethod::Naive, 0, alpha, options)
}

/// One-step estimate for the given mediator `k` (0-based).
pub fn oracle_one_step(d: &Dataset, k: usize, alpha: f64, options: NuisanceOptions) -> Result<CompetitorResult, NuisanceError> {
    run(d, CompetitorMethod::Oracle, k, alpha, options)
}
