//! Simulation models, censoring calibration and coverage studies.
//!
//! Every row is drawn from its own ChaCha8 stream derived from the dataset
//! seed, and the confounder and censoring draws use separate families of
//! streams. A dataset is therefore reproducible bit for bit, does not depend on
//! thread scheduling, and a primed model with zero confounder coefficient
//! shares every `(x, δ, A, B)` value with its unprimed counterpart.

use crate::competing::{competitor_from_set, CompetitorMethod};
use crate::dataset::{ordering_permutation, Dataset, DatasetError, Standardization};
use crate::nuisance::{AnalysisContext, NuisanceOptions, NuisanceSet};
use crate::rng::{derive_seed, derive_seed2, rng_from_seed};
use crate::stabilized::{qn_from_fraction, stabilized_with_context, StabilizedConfig};
use crate::stats::{self, normal_quantile};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

const STREAM_ROWS: u64 = 1;
const STREAM_CONFOUNDER: u64 = 2;
const STREAM_CENSORING: u64 = 3;
const STREAM_CALIBRATION: u64 = 4;

/// Monte Carlo pairs per calibration evaluation.
pub const CALIBRATION_DRAWS: usize = 100_000;
pub const CALIBRATION_TOL: f64 = 0.005;
const CALIBRATION_MAX_ITER: usize = 200;

/// Exposure effect on `T`.
const GAMMA_M0: f64 = 0.2;
const GAMMA_M12: f64 = 0.4;
const RHO_M0: f64 = 0.5;
const RHO_TAIL: f64 = 0.1;
const Z_PROB: f64 = 0.4;
pub const DEFAULT_Z_COEF: f64 = -0.1;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid simulation spec: {0}")]
    Spec(String),
    #[error("censoring calibration failed: {0}")]
    Calibration(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Model {
    M0,
    M1,
    M2,
    M0p,
    M1p,
    M2p,
}

impl Model {
    pub const ALL: [Model; 6] = [Model::M0, Model::M1, Model::M2, Model::M0p, Model::M1p, Model::M2p];

    /// Carries the Bernoulli confounder.
    pub fn primed(self) -> bool {
        matches!(self, Model::M0p | Model::M1p | Model::M2p)
    }

    pub fn family(self) -> u8 {
        match self {
            Model::M0 | Model::M0p => 0,
            Model::M1 | Model::M1p => 1,
            Model::M2 | Model::M2p => 2,
        }
    }

    /// Unprimed model with the same outcome and mediator structure.
    pub fn unprimed(self) -> Model {
        match self.family() {
            0 => Model::M0,
            1 => Model::M1,
            _ => Model::M2,
        }
    }

    /// Maximal indirect effect `maxₖ |βₖζₖ|`.
    pub fn true_psi(self) -> f64 {
        if self.family() == 0 {
            0.0
        } else {
            0.2
        }
    }

    /// Outcome coefficient of `Bₖ` (0-based `k`).
    pub fn outcome_beta(self, k: usize) -> f64 {
        match (self.family(), k) {
            (1, 0) => 0.2,
            (2, 0..=4) => 0.2,
            (2, 5..=9) => -0.1,
            _ => 0.0,
        }
    }

    /// Exposure effect on mediator `k` (0-based).
    pub fn mediator_shift(self, k: usize) -> f64 {
        match (self.family(), k) {
            (0, _) => 0.0,
            (_, 0) => 1.0,
            (_, 1..=4) => 0.6,
            (_, 5..=9) => 0.3,
            _ => 0.0,
        }
    }

    fn min_p(self) -> usize {
        if self.family() == 0 {
            1
        } else {
            11
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::M0 => "M0",
            Model::M1 => "M1",
            Model::M2 => "M2",
            Model::M0p => "M0p",
            Model::M1p => "M1p",
            Model::M2p => "M2p",
        })
    }
}

impl FromStr for Model {
    type Err = SimulationError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase().replace('\'', "p");
        Ok(match t.as_str() {
            "m0" | "0" => Model::M0,
            "m1" | "1" => Model::M1,
            "m2" | "2" => Model::M2,
            "m0p" | "0p" => Model::M0p,
            "m1p" | "1p" => Model::M1p,
            "m2p" | "2p" => Model::M2p,
            _ => return Err(SimulationError::Spec(format!("unknown model `{s}` (expected M0, M1, M2, M0p, M1p or M2p)"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub model: Model,
    pub n: usize,
    pub p: usize,
    /// Target censored fraction.
    pub censor_target: f64,
    /// Coefficient of `Z` in `T` for primed models.
    pub z_coef: f64,
    /// Exponential rate of `exp(C)`; `None` until calibrated.
    pub censor_rate: Option<f64>,
}

impl SimulationSpec {
    pub fn new(model: Model, n: usize, p: usize) -> Self {
        Self {
            model,
            n,
            p,
            censor_target: 0.2,
            z_coef: DEFAULT_Z_COEF,
            censor_rate: None,
        }
    }

    pub fn true_psi(&self) -> f64 {
        self.model.true_psi()
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        if self.p < self.model.min_p() {
            return Err(SimulationError::Spec(format!(
                "model {} needs p >= {}, got {}",
                self.model,
                self.model.min_p(),
                self.p
            )));
        }
        if self.n < 2 {
            return Err(SimulationError::Spec(format!("n must be at least 2, got {}", self.n)));
        }
        if !(0.0..1.0).contains(&self.censor_target) {
            return Err(SimulationError::Spec(format!(
                "censor target must lie in [0, 1), got {}",
                self.censor_target
            )));
        }
        if !self.z_coef.is_finite() {
            return Err(SimulationError::Spec("z coefficient must be finite".into()));
        }
        Ok(())
    }

    /// Copy with the censoring rate calibrated (if not already set).
    pub fn calibrated(mut self, seed: u64) -> Result<Self, SimulationError> {
        if self.censor_rate.is_none() {
            self.censor_rate = Some(calibrate_censoring_rate(&self, self.censor_target, seed)?);
        }
        Ok(self)
    }
}

fn z_coef(spec: &SimulationSpec) -> f64 {
    if spec.model.primed() {
        spec.z_coef
    } else {
        0.0
    }
}

/// Mediators and log event time for one row; `b` receives `p` values.
fn draw_row<R: Rng>(model: Model, rng: &mut R, b: &mut [f64]) -> (u8, f64) {
    let a: u8 = rng.random_bool(0.5) as u8;
    let eps: f64 = StandardNormal.sample(rng);
    let af = a as f64;
    let p = b.len();
    let mut t;
    if model.family() == 0 {
        let w: f64 = StandardNormal.sample(rng);
        let (sw, sv) = (RHO_M0.sqrt() * w, (1.0 - RHO_M0).sqrt());
        for v in b.iter_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *v = sw + sv * e;
        }
        t = GAMMA_M0 * af + eps;
    } else {
        let active = p.min(10);
        t = GAMMA_M12 * af + eps;
        for (k, v) in b[..active].iter_mut().enumerate() {
            let e: f64 = StandardNormal.sample(rng);
            *v = model.mediator_shift(k) * af + e;
            t += model.outcome_beta(k) * *v;
        }
        if p > 10 {
            let w: f64 = StandardNormal.sample(rng);
            let (sw, sv) = (RHO_TAIL.sqrt() * w, (1.0 - RHO_TAIL).sqrt());
            for v in b[10..].iter_mut() {
                let e: f64 = StandardNormal.sample(rng);
                *v = sw + sv * e;
            }
        }
    }
    (a, t)
}

fn draw_confounder(seed: u64, i: usize) -> f64 {
    let mut rng = rng_from_seed(derive_seed2(seed, STREAM_CONFOUNDER, i as u64));
    rng.random_bool(Z_PROB) as u8 as f64
}

/// `log E` with `E ~ Exp(1)`; the censoring time is `log E − log(rate)`.
fn draw_log_exp(seed: u64, i: usize) -> f64 {
    let mut rng = rng_from_seed(derive_seed2(seed, STREAM_CENSORING, i as u64));
    let e: f64 = Exp1.sample(&mut rng);
    e.ln()
}

fn censoring_time(log_e: f64, rate: f64) -> f64 {
    if rate <= 0.0 {
        f64::INFINITY
    } else {
        log_e - rate.ln()
    }
}

/// Draw one dataset. The spec's censoring rate is calibrated with `seed` if it
/// has not been set.
pub fn generate(spec: &SimulationSpec, seed: u64) -> Result<Dataset, SimulationError> {
    spec.validate()?;
    let spec = spec.calibrated(seed)?;
    let rate = spec.censor_rate.unwrap_or(0.0);
    let (n, p) = (spec.n, spec.p);
    let gz = z_coef(&spec);
    let primed = spec.model.primed();
    let mut b = vec![0.0; n * p];
    let rows: Vec<(u8, f64, f64, u8, f64)> = b
        .par_chunks_mut(p)
        .enumerate()
        .map(|(i, brow)| {
            let mut rng = rng_from_seed(derive_seed2(seed, STREAM_ROWS, i as u64));
            let (a, t0) = draw_row(spec.model, &mut rng, brow);
            let z = if primed { draw_confounder(seed, i) } else { 0.0 };
            let t = t0 + gz * z;
            let c = censoring_time(draw_log_exp(seed, i), rate);
            let (x, delta) = if t <= c { (t, 1) } else { (c, 0) };
            (a, x, z, delta, t)
        })
        .collect();
    let x = rows.iter().map(|r| r.1).collect();
    let delta = rows.iter().map(|r| r.3).collect();
    let a = rows.iter().map(|r| r.0).collect();
    let (z, q) = if primed {
        (rows.iter().map(|r| r.2).collect(), 1)
    } else {
        (Vec::new(), 0)
    };
    let d = Dataset::new(x, delta, a, b, p, z, q)?;
    if primed {
        let labels = d.mediator_labels().to_vec();
        return Ok(d.with_labels(labels, vec!["Z".into()])?);
    }
    Ok(d)
}

fn censored_fraction(log_t_minus_log_e: &[f64], log_rate: f64) -> f64 {
    // T > C  <=>  log(rate) > log E − T
    let hits = log_t_minus_log_e.iter().filter(|&&v| log_rate > v).count();
    hits as f64 / log_t_minus_log_e.len() as f64
}

/// Rate of `exp(C) ~ Exp(rate)` giving `P(T > C) ≈ target`, found by bisection
/// on `log(rate)` with common random numbers.
pub fn calibrate_censoring_rate(spec: &SimulationSpec, target: f64, seed: u64) -> Result<f64, SimulationError> {
    if target == 0.0 {
        return Ok(0.0);
    }
    if !(target > 0.0 && target < 1.0) {
        return Err(SimulationError::Calibration(format!("target {target} outside (0, 1)")));
    }
    let base = derive_seed(seed, STREAM_CALIBRATION);
    let gz = z_coef(spec);
    let primed = spec.model.primed();
    let active = if spec.model.family() == 0 { 1 } else { 10 };
    let gap: Vec<f64> = (0..CALIBRATION_DRAWS)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed2(base, STREAM_ROWS, i as u64));
            let mut b = [0.0; 10];
            let (_, t0) = draw_row(spec.model, &mut rng, &mut b[..active]);
            let z = if primed { draw_confounder(base, i) } else { 0.0 };
            draw_log_exp(base, i) - (t0 + gz * z)
        })
        .collect();
    let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
    let mut expansions = 0;
    while censored_fraction(&gap, lo) > target {
        lo -= 2.0 * (hi - lo);
        expansions += 1;
        if expansions > 60 {
            return Err(SimulationError::Calibration("could not bracket target from below".into()));
        }
    }
    while censored_fraction(&gap, hi) < target {
        hi += 2.0 * (hi - lo);
        expansions += 1;
        if expansions > 60 {
            return Err(SimulationError::Calibration("could not bracket target from above".into()));
        }
    }
    for _ in 0..CALIBRATION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        let f = censored_fraction(&gap, mid);
        if (f - target).abs() < CALIBRATION_TOL {
            return Ok(mid.exp());
        }
        if f < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(SimulationError::Calibration(format!(
        "no rate within {CALIBRATION_TOL} of {target} after {CALIBRATION_MAX_ITER} bisections"
    )))
}

/// Estimators compared in a coverage study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Stabilized,
    Bonferroni,
    Naive,
    Oracle,
}

impl Method {
    fn competitor(self) -> Option<CompetitorMethod> {
        match self {
            Method::Stabilized => None,
            Method::Bonferroni => Some(CompetitorMethod::Bonferroni),
            Method::Naive => Some(CompetitorMethod::Naive),
            Method::Oracle => Some(CompetitorMethod::Oracle),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Stabilized => "stabilized",
            Method::Bonferroni => "bonferroni",
            Method::Naive => "naive",
            Method::Oracle => "oracle",
        })
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "stabilized" => Ok(Method::Stabilized),
            "bonferroni" => Ok(Method::Bonferroni),
            "naive" => Ok(Method::Naive),
            "oracle" => Ok(Method::Oracle),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub reps: usize,
    pub methods: Vec<Method>,
    /// Burn-in as a fraction of `n`, used when `q_n` is `None`.
    pub qn_fraction: f64,
    pub q_n: Option<usize>,
    pub alpha: f64,
    pub seed: u64,
    pub standardize: Standardization,
    pub nuisance: NuisanceOptions,
    /// Mediator given to the oracle (0-based).
    pub oracle_k: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            reps: 500,
            methods: vec![Method::Stabilized],
            qn_fraction: 0.8,
            q_n: None,
            alpha: 0.1,
            seed: 1,
            standardize: Standardization::NormalScore,
            nuisance: NuisanceOptions::default(),
            oracle_k: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub method: Method,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub covered: bool,
    /// `(estimate − Ψ)/se`; for the stabilized estimator `√(n−qₙ)(S*ₙ−Ψ)/σ̄ₙ`.
    pub standardized: f64,
    /// Selected (or given) mediator, 0-based; the last step's choice for the
    /// stabilized estimator.
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub rep: usize,
    pub method: Option<Method>,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub p: usize,
    pub reps: usize,
    pub failures: usize,
    pub coverage: f64,
    pub mean_width: f64,
    pub mean_estimate: f64,
    /// Fraction with `p_value < alpha`.
    pub rejection_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub model: Model,
    pub n: usize,
    pub p: usize,
    pub q_n: usize,
    pub alpha: f64,
    pub true_psi: f64,
    pub censor_rate: f64,
    pub summaries: Vec<MethodSummary>,
    pub replications: Vec<ReplicationRecord>,
    pub failures: Vec<ReplicationFailure>,
}

impl CoverageReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    /// Standardized statistics of `method` in replication order.
    pub fn standardized(&self, method: Method) -> Vec<f64> {
        self.replications
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.standardized)
            .collect()
    }

    /// Sorted statistics paired with Blom normal quantiles.
    pub fn qq_points(&self, method: Method) -> Vec<(f64, f64)> {
        let mut s = self.standardized(method);
        s.sort_by(f64::total_cmp);
        let m = s.len() as f64;
        s.into_iter()
            .enumerate()
            .map(|(i, v)| (normal_quantile((i as f64 + 1.0 - 0.375) / (m + 0.25)), v))
            .collect()
    }
}

fn replicate(
    spec: &SimulationSpec,
    config: &StudyConfig,
    q_n: usize,
    rep: usize,
) -> (Vec<ReplicationRecord>, Vec<ReplicationFailure>) {
    let data_seed = derive_seed2(config.seed, rep as u64, 0);
    let order_seed = derive_seed2(config.seed, rep as u64, 1);
    let psi = spec.true_psi();
    let fail = |method: Option<Method>, reason: String| ReplicationFailure { rep, method, reason };
    let d = match generate(spec, data_seed).and_then(|d| Ok(d.standardize_mediators(config.standardize)?)) {
        Ok(d) => d,
        Err(e) => return (Vec::new(), vec![fail(None, e.to_string())]),
    };
    let ctx = match AnalysisContext::new(&d) {
        Ok(c) => c,
        Err(e) => return (Vec::new(), vec![fail(None, e.to_string())]),
    };
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut full: Option<Result<NuisanceSet<'_>, String>> = None;
    for &method in &config.methods {
        match method.competitor() {
            None => {
                let order = ordering_permutation(d.n(), order_seed);
                let cfg = StabilizedConfig {
                    nuisance: config.nuisance,
                    alpha: config.alpha,
                };
                match stabilized_with_context(&ctx, &order, q_n, &cfg) {
                    Ok(est) => records.push(ReplicationRecord {
                        rep,
                        method,
                        estimate: est.s_star,
                        ci_low: est.ci_low,
                        ci_high: est.ci_high,
                        p_value: est.p_value,
                        covered: est.ci_low <= psi && psi <= est.ci_high,
                        standardized: est.standardized(psi),
                        k: est.trace.last().map_or(0, |s| s.k),
                    }),
                    Err(e) => failures.push(fail(Some(method), e.to_string())),
                }
            }
            Some(cm) => {
                let ns = full.get_or_insert_with(|| {
                    NuisanceSet::full_sample(&ctx, config.nuisance).map_err(|e| e.to_string())
                });
                let res = match ns {
                    Ok(ns) => competitor_from_set(ns, cm, config.oracle_k, config.alpha).map_err(|e| e.to_string()),
                    Err(e) => Err(e.clone()),
                };
                match res {
                    Ok(r) => records.push(ReplicationRecord {
                        rep,
                        method,
                        estimate: r.estimate,
                        ci_low: r.ci_low,
                        ci_high: r.ci_high,
                        p_value: r.p_value,
                        covered: r.ci_low <= psi && psi <= r.ci_high,
                        standardized: r.standardized(psi),
                        k: r.k_used,
                    }),
                    Err(e) => failures.push(fail(Some(method), e)),
                }
            }
        }
    }
    (records, failures)
}

/// Generate `config.reps` datasets, analyse each with every requested method
/// and summarise coverage, width and estimates against the true `Ψ`.
pub fn run_coverage_study(spec: &SimulationSpec, config: &StudyConfig) -> Result<CoverageReport, SimulationError> {
    spec.validate()?;
    if config.reps == 0 {
        return Err(SimulationError::Spec("reps must be at least 1".into()));
    }
    if config.methods.is_empty() {
        return Err(SimulationError::Spec("no methods requested".into()));
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(SimulationError::Spec(format!("alpha must lie in (0, 1), got {}", config.alpha)));
    }
    let spec = spec.calibrated(derive_seed(config.seed, u64::MAX))?;
    let q_n = config.q_n.unwrap_or_else(|| qn_from_fraction(spec.n, config.qn_fraction));
    if q_n == 0 || q_n >= spec.n {
        return Err(SimulationError::Spec(format!("q_n = {q_n} must lie in [1, n)")));
    }
    let per_rep: Vec<_> = (0..config.reps)
        .into_par_iter()
        .map(|rep| replicate(&spec, config, q_n, rep))
        .collect();
    let mut replications = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in per_rep {
        replications.extend(r);
        failures.extend(f);
    }
    let summaries = config
        .methods
        .iter()
        .map(|&method| {
            let rows: Vec<&ReplicationRecord> = replications.iter().filter(|r| r.method == method).collect();
            let count = rows.len();
            let frac = |f: &dyn Fn(&ReplicationRecord) -> bool| {
                if count == 0 {
                    f64::NAN
                } else {
                    rows.iter().filter(|r| f(r)).count() as f64 / count as f64
                }
            };
            let widths: Vec<f64> = rows.iter().map(|r| r.ci_high - r.ci_low).collect();
            let ests: Vec<f64> = rows.iter().map(|r| r.estimate).collect();
            MethodSummary {
                method,
                p: spec.p,
                reps: count,
                failures: config.reps - count,
                coverage: frac(&|r| r.covered),
                mean_width: stats::mean(&widths),
                mean_estimate: stats::mean(&ests),
                rejection_rate: frac(&|r| r.p_value < config.alpha),
            }
        })
        .collect();
    Ok(CoverageReport {
        model: spec.model,
        n: spec.n,
        p: spec.p,
        q_n,
        alpha: config.alpha,
        true_psi: spec.true_psi(),
        censor_rate: spec.censor_rate.unwrap_or(0.0),
        summaries,
        replications,
        failures,
    })
}

/// One-sample Kolmogorov–Smirnov statistic against the standard normal.
pub fn ks_statistic(sample: &[f64]) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = stats::normal_cdf(v);
            (f - i as f64 / n).max((i as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of the KS statistic `d` from `n` points, using the
/// Kolmogorov series with Stephens' finite-sample adjustment.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let t = (sn + 0.12 + 0.11 / sn) * d;
    if t < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=200 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * t * t).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
