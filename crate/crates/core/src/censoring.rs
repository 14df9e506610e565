//! Product-limit and Nelson–Aalen estimation for the censoring distribution,
//! inverse-probability-of-censoring synthetic responses, and integrals against
//! the censoring martingale `1(X ∈ ds, δ = 0) − 1(X ≥ s) dΛ̂(s)`.
//!
//! The censoring risk set at `s` is `{i : xᵢ ≥ s}`, so an event tied with a
//! censoring at `s` still counts as at risk for that censoring.

use thiserror::Error;

/// Survival below this level at an event time triggers weight truncation.
pub const G_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CensoringError {
    #[error("cannot fit a censoring model on an empty sample")]
    Empty,
    #[error("x and delta lengths differ ({0} vs {1})")]
    Length(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CensoringModel {
    jump_times: Vec<f64>,
    censored: Vec<usize>,
    at_risk: Vec<usize>,
    /// Ĝ just after each jump.
    survival: Vec<f64>,
    /// ΔΛ̂ at each jump.
    hazard_increments: Vec<f64>,
    /// Λ̂ just after each jump.
    cumulative_hazard: Vec<f64>,
    tau: f64,
}

impl CensoringModel {
    pub fn fit(x: &[f64], delta: &[u8]) -> Result<Self, CensoringError> {
        if x.len() != delta.len() {
            return Err(CensoringError::Length(x.len(), delta.len()));
        }
        if x.is_empty() {
            return Err(CensoringError::Empty);
        }
        let n = x.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
        let tau = x[idx[n - 1]];

        let mut model = CensoringModel {
            jump_times: Vec::new(),
            censored: Vec::new(),
            at_risk: Vec::new(),
            survival: Vec::new(),
            hazard_increments: Vec::new(),
            cumulative_hazard: Vec::new(),
            tau,
        };
        let (mut g, mut lambda) = (1.0, 0.0);
        let mut start = 0;
        while start < n {
            let t = x[idx[start]];
            let mut end = start;
            let mut d = 0;
            while end < n && x[idx[end]] == t {
                if delta[idx[end]] == 0 {
                    d += 1;
                }
                end += 1;
            }
            if d > 0 {
                let risk = n - start;
                let h = d as f64 / risk as f64;
                g *= 1.0 - h;
                lambda += h;
                model.jump_times.push(t);
                model.censored.push(d);
                model.at_risk.push(risk);
                model.survival.push(g);
                model.hazard_increments.push(h);
                model.cumulative_hazard.push(lambda);
            }
            start = end;
        }
        Ok(model)
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }
    pub fn hazard_increments(&self) -> &[f64] {
        &self.hazard_increments
    }
    pub fn censored_counts(&self) -> &[usize] {
        &self.censored
    }
    pub fn at_risk_counts(&self) -> &[usize] {
        &self.at_risk
    }
    pub fn n_jumps(&self) -> usize {
        self.jump_times.len()
    }
    /// End of follow-up: the largest observed time.
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Number of jump times `≤ s`.
    pub fn jumps_up_to(&self, s: f64) -> usize {
        self.jump_times.partition_point(|&t| t <= s)
    }

    /// Number of jump times `< s`.
    pub fn jumps_before(&self, s: f64) -> usize {
        self.jump_times.partition_point(|&t| t < s)
    }

    /// Right-continuous Ĝ(s).
    pub fn survival(&self, s: f64) -> f64 {
        match self.jumps_up_to(s) {
            0 => 1.0,
            m => self.survival[m - 1],
        }
    }

    /// Left limit Ĝ(s⁻).
    pub fn survival_left(&self, s: f64) -> f64 {
        match self.jumps_before(s) {
            0 => 1.0,
            m => self.survival[m - 1],
        }
    }

    /// Nelson–Aalen Λ̂(s), right-continuous.
    pub fn cumulative_hazard(&self, s: f64) -> f64 {
        match self.jumps_up_to(s) {
            0 => 0.0,
            m => self.cumulative_hazard[m - 1],
        }
    }

    /// `∫ g(s) M̂(ds)` for one observation:
    /// `(1 − δ)·g(x) − Σ_{sₘ ≤ x} g(sₘ)·ΔΛ̂(sₘ)`.
    pub fn martingale_integral(&self, x: f64, delta: u8, mut g: impl FnMut(f64) -> f64) -> f64 {
        let m = self.jumps_up_to(x);
        let compensator: f64 = self.jump_times[..m]
            .iter()
            .zip(&self.hazard_increments[..m])
            .map(|(&s, &dl)| g(s) * dl)
            .sum();
        let counting = if delta == 0 { g(x) } else { 0.0 };
        counting - compensator
    }
}

/// IPCW responses `yᵢ = δᵢ xᵢ / Ĝ(xᵢ⁻)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticResponses {
    pub y: Vec<f64>,
    /// Events whose weight hit the `1 / G_FLOOR` cap.
    pub truncated: usize,
}

pub fn synthetic_responses(x: &[f64], delta: &[u8], cm: &CensoringModel) -> SyntheticResponses {
    let mut truncated = 0;
    let y = x
        .iter()
        .zip(delta)
        .map(|(&xi, &di)| {
            if di == 0 {
                return 0.0;
            }
            let mut g = cm.survival_left(xi);
            if g < G_FLOOR {
                truncated += 1;
                g = G_FLOOR;
            }
            xi / g
        })
        .collect();
    if truncated > 0 {
        log::warn!("{truncated} event(s) had Ĝ(x⁻) below {G_FLOOR}; weights truncated");
    }
    SyntheticResponses { y, truncated }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn no_censoring() {
        let cm = CensoringModel::fit(&[1.0, 2.0, 3.0], &[1, 1, 1]).unwrap();
        assert_eq!(cm.n_jumps(), 0);
        for s in [-5.0, 1.0, 2.5, 3.0] {
            assert_eq!(cm.survival(s), 1.0);
            assert_eq!(cm.cumulative_hazard(s), 0.0);
        }
        assert_eq!(cm.tau(), 3.0);
    }

    #[test]
    fn single_censoring_in_middle() {
        let cm = CensoringModel::fit(&[1.0, 2.0, 3.0], &[1, 0, 1]).unwrap();
        assert_eq!(cm.survival(1.99), 1.0);
        assert_eq!(cm.survival(2.0), 0.5);
        assert_eq!(cm.survival(3.0), 0.5);
        assert_eq!(cm.survival_left(2.0), 1.0);
        assert_eq!(cm.survival_left(3.0), 0.5);
        assert_eq!(cm.hazard_increments(), &[0.5]);
        assert_eq!(cm.at_risk_counts(), &[2]);
    }

    #[test]
    fn single_censored_point() {
        let cm = CensoringModel::fit(&[1.0], &[0]).unwrap();
        assert_eq!(cm.survival(1.0), 0.0);
        assert_eq!(cm.cumulative_hazard(1.0), 1.0);
    }

    #[test]
    fn empty_is_error() {
        assert_eq!(CensoringModel::fit(&[], &[]), Err(CensoringError::Empty));
    }

    #[test]
    fn tied_censorings_aggregate() {
        let cm = CensoringModel::fit(&[1.0, 1.0, 1.0, 2.0], &[0, 0, 1, 1]).unwrap();
        assert_eq!(cm.censored_counts(), &[2]);
        assert_eq!(cm.at_risk_counts(), &[4]);
        assert_eq!(cm.survival(1.0), 0.5);
    }

    #[test]
    fn synthetic_examples() {
        let cm = CensoringModel::fit(&[1.0, 2.0, 3.0], &[1, 1, 1]).unwrap();
        let y = synthetic_responses(&[1.0, 2.0, 3.0], &[1, 1, 1], &cm);
        assert_eq!(y.y, vec![1.0, 2.0, 3.0]);

        let cm = CensoringModel::fit(&[1.0, 2.0, 3.0], &[1, 0, 1]).unwrap();
        let y = synthetic_responses(&[1.0, 2.0, 3.0], &[1, 0, 1], &cm);
        assert_eq!(y.y, vec![1.0, 0.0, 6.0]);

        let cm = CensoringModel::fit(&[1.0, 2.0], &[0, 0]).unwrap();
        assert_eq!(synthetic_responses(&[1.0, 2.0], &[0, 0], &cm).y, vec![0.0, 0.0]);
    }

    #[test]
    fn truncation_counts_events_beyond_support() {
        // censored at 1, event at 2 never has positive survival left
        let cm = CensoringModel::fit(&[1.0], &[0]).unwrap();
        let y = synthetic_responses(&[2.0], &[1], &cm);
        assert_eq!(y.truncated, 1);
        assert_eq!(y.y[0], 2.0 / G_FLOOR);
    }

    #[test]
    fn martingale_examples() {
        let cm = CensoringModel::fit(&[1.0, 2.0, 3.0], &[1, 0, 1]).unwrap();
        // censored at 2, g(s) = s: 1·2 − 2·(1/2) = 1
        assert_eq!(cm.martingale_integral(2.0, 0, |s| s), 1.0);
        let none = CensoringModel::fit(&[1.0, 2.0], &[1, 1]).unwrap();
        assert_eq!(none.martingale_integral(1.5, 1, |s| s * s + 3.0), 0.0);
        let total: f64 = [(1.0, 1), (2.0, 0), (3.0, 1)]
            .iter()
            .map(|&(x, d)| cm.martingale_integral(x, d, |_| 1.0))
            .sum();
        assert_eq!(total, 0.0);
    }

    fn sample() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        prop::collection::vec((0u32..40, 0u8..2), 1..60).prop_map(|v| {
            let x = v.iter().map(|&(t, _)| t as f64 * 0.25 - 3.0).collect();
            let d = v.iter().map(|&(_, d)| d).collect();
            (x, d)
        })
    }

    proptest! {
        #[test]
        fn km_monotone_and_martingale_sums_vanish((x, d) in sample(), levels in prop::collection::vec(-3.0f64..3.0, 41)) {
            let cm = CensoringModel::fit(&x, &d).unwrap();
            let mut prev = 1.0;
            for t in 0..45 {
                let s = t as f64 * 0.25 - 3.5;
                let g = cm.survival(s);
                prop_assert!((0.0..=1.0).contains(&g));
                prop_assert!(g <= prev);
                prev = g;
            }
            // step function constant between grid points
            let g = |s: f64| levels[((s + 3.0) / 0.25).round().clamp(0.0, 40.0) as usize];
            let total: f64 = x.iter().zip(&d).map(|(&xi, &di)| cm.martingale_integral(xi, di, g)).sum();
            prop_assert!(total.abs() < 1e-10, "sum {}", total);
        }

        #[test]
        fn synthetic_scale_equivariant(x in prop::collection::vec(0.1f64..10.0, 1..30), c in 0.1f64..5.0) {
            let d = vec![1u8; x.len()];
            let cm = CensoringModel::fit(&x, &d).unwrap();
            let y = synthetic_responses(&x, &d, &cm).y;
            let xs: Vec<f64> = x.iter().map(|v| v * c).collect();
            let cms = CensoringModel::fit(&xs, &d).unwrap();
            let ys = synthetic_responses(&xs, &d, &cms).y;
            for (a, b) in y.iter().zip(&ys) {
                prop_assert!((a * c - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }
}
