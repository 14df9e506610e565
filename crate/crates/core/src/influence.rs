//! Efficient influence function of the per-mediator indirect effect under
//! independent censoring, and the one-step estimator built from it.
//!
//! For `o = (a, δ, x, b)` with synthetic response `y`:
//!
//! ```text
//! f(o)     = −1(a=0)/ℚ(0)·[Ê(1,b) − β̂q̂(0)]
//!            + 1(a=1)/ℚ(1)·[y − β̂q̂(1) − Q̂(b)·ℚ(1)/ℚ(0)·(y − Ê(1,b))]
//! f_car(o) = −1(a=1)/ℚ(1)·[1 − Q̂(b)·ℚ(1)/ℚ(0)]·∫ Ê(1,b,s) M̂(ds)
//! f*(o)    = f(o) − f_car(o)
//! ```
//!
//! The one-step estimator averages `f*` over an evaluation measure: the whole
//! sample for the plain estimator, a single held-out row for each step of the
//! stabilized estimator. Both go through [`one_step`].

use crate::dataset::Observation;
use crate::nuisance::{MediatorFit, NuisanceError, NuisanceSet};
use crate::stats;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfluenceValue {
    pub f: f64,
    pub f_car: f64,
    pub f_star: f64,
}

impl InfluenceValue {
    fn new(f: f64, f_car: f64) -> Self {
        Self {
            f,
            f_car,
            f_star: f - f_car,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneStepEstimate {
    /// 0-based mediator index.
    pub k: usize,
    pub psi_plugin: f64,
    pub correction: f64,
    pub psi_onestep: f64,
    /// Standard deviation of the `f*` values with divisor `n_eval`.
    pub sigma_hat: f64,
    pub n_eval: usize,
}

fn f_value(ns: &NuisanceSet<'_>, fit: &MediatorFit, a: u8, b: f64, y: f64) -> f64 {
    let k = fit.k;
    let e = ns.exposure();
    let beta = ns.beta(k);
    let e1 = fit.outcome_mean[1].eval(b);
    if a == 0 {
        -(e1 - beta * ns.mediator_mean(0, k)) / e.p0
    } else {
        let odds = fit.reciprocal_odds.eval(b);
        (y - beta * ns.mediator_mean(1, k) - odds * (e.p1 / e.p0) * (y - e1)) / e.p1
    }
}

fn car_weight(ns: &NuisanceSet<'_>, fit: &MediatorFit, b: f64) -> f64 {
    let e = ns.exposure();
    -(1.0 - fit.reciprocal_odds.eval(b) * e.p1 / e.p0) / e.p1
}

/// `f*` at dataset row `i` with the fit for `k` already materialised.
fn row_value(ns: &NuisanceSet<'_>, fit: &MediatorFit, i: usize) -> Result<InfluenceValue, NuisanceError> {
    let ctx = ns.context();
    let d = ctx.data();
    let (a, b, y) = (d.exposure()[i], d.mediator(i, fit.k), ctx.y()[i]);
    let f = f_value(ns, fit, a, b, y);
    if a == 0 {
        return Ok(InfluenceValue::new(f, 0.0));
    }
    let (x, delta) = (d.x()[i], d.delta()[i]);
    let rank = ctx.jump_rank(i);
    let counting = if delta == 0 {
        let jumps = ctx.censoring().jump_times();
        if rank > 0 && jumps[rank - 1] == x {
            fit.risk_set[1][rank - 1].fit.eval(b)
        } else {
            ns.conditional_mean(1, b, Some(x), fit.k)?
        }
    } else {
        0.0
    };
    let integral = counting - fit.exposed_compensator(rank, b);
    Ok(InfluenceValue::new(f, car_weight(ns, fit, b) * integral))
}

pub fn eval_f(ns: &NuisanceSet<'_>, i: usize, k: usize) -> Result<f64, NuisanceError> {
    Ok(eval_f_star(ns, i, k)?.f)
}

pub fn eval_f_car(ns: &NuisanceSet<'_>, i: usize, k: usize) -> Result<f64, NuisanceError> {
    Ok(eval_f_star(ns, i, k)?.f_car)
}

/// `f`, `f_car` and `f*` for mediator `k` (0-based) at dataset row `i`.
pub fn eval_f_star(ns: &NuisanceSet<'_>, i: usize, k: usize) -> Result<InfluenceValue, NuisanceError> {
    let fit = ns.mediator_fit(k)?;
    row_value(ns, &fit, i)
}

/// Same functional for an arbitrary observation, integrating against the
/// censoring martingale through [`crate::censoring::CensoringModel::martingale_integral`].
pub fn eval_f_star_observation(
    ns: &NuisanceSet<'_>,
    obs: &Observation<'_>,
    y: f64,
    k: usize,
) -> Result<InfluenceValue, NuisanceError> {
    let fit = ns.mediator_fit(k)?;
    let b = obs.b[k];
    let f = f_value(ns, &fit, obs.a, b, y);
    if obs.a == 0 {
        return Ok(InfluenceValue::new(f, 0.0));
    }
    let mut failure = None;
    let integral = ns
        .context()
        .censoring()
        .martingale_integral(obs.x, obs.delta, |s| {
            ns.conditional_mean(1, b, Some(s), k).unwrap_or_else(|e| {
                failure = Some(e);
                f64::NAN
            })
        });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(InfluenceValue::new(f, car_weight(ns, &fit, b) * integral))
}

/// Influence values for mediator `k` at each of `rows`.
pub fn influence_values(
    ns: &NuisanceSet<'_>,
    k: usize,
    rows: &[usize],
) -> Result<Vec<InfluenceValue>, NuisanceError> {
    let fit = ns.mediator_fit(k)?;
    rows.iter().map(|&i| row_value(ns, &fit, i)).collect()
}

/// `Ψₖ(P̂) + mean of f*ₖ` over the empirical measure on `rows`.
pub fn one_step(ns: &NuisanceSet<'_>, k: usize, rows: &[usize]) -> Result<OneStepEstimate, NuisanceError> {
    let values: Vec<f64> = influence_values(ns, k, rows)?
        .into_iter()
        .map(|v| v.f_star)
        .collect();
    let psi_plugin = ns.psi()[k];
    let correction = stats::mean(&values);
    Ok(OneStepEstimate {
        k,
        psi_plugin,
        correction,
        psi_onestep: psi_plugin + correction,
        sigma_hat: stats::population_sd(&values),
        n_eval: values.len(),
    })
}

/// One-step estimator over the full sample the nuisance set was fitted on.
pub fn one_step_full(ns: &NuisanceSet<'_>, k: usize) -> Result<OneStepEstimate, NuisanceError> {
    let rows: Vec<usize> = (0..ns.context().data().n()).collect();
    one_step(ns, k, &rows)
}
