//! Shared test helpers: small data generators and a straight-from-the-formulas
//! reference implementation of the estimator that shares no code with the crate.
#![allow(dead_code)]

use hdmed::dataset::Dataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Plain columns, row-major mediators.
#[derive(Debug, Clone)]
pub struct Toy {
    pub x: Vec<f64>,
    pub delta: Vec<u8>,
    pub a: Vec<u8>,
    pub b: Vec<f64>,
    pub p: usize,
}

impl Toy {
    pub fn n(&self) -> usize {
        self.x.len()
    }
    pub fn b(&self, i: usize, k: usize) -> f64 {
        self.b[i * self.p + k]
    }
    pub fn dataset(&self) -> Dataset {
        Dataset::new(self.x.clone(), self.delta.clone(), self.a.clone(), self.b.clone(), self.p, Vec::new(), 0).unwrap()
    }
}

/// Mediator 0 carries an effect; the rest are noise. About `censor` of the
/// rows are censored.
pub fn toy(n: usize, p: usize, censor: f64, seed: u64) -> Toy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Toy {
        x: Vec::with_capacity(n),
        delta: Vec::with_capacity(n),
        a: Vec::with_capacity(n),
        b: Vec::with_capacity(n * p),
        p,
    };
    for i in 0..n {
        // alternate the first two rows so every prefix has both groups
        let a: u8 = if i < 2 { i as u8 } else { rng.random_bool(0.5) as u8 };
        let mut lin = 0.3 * a as f64;
        for k in 0..p {
            let e: f64 = StandardNormal.sample(&mut rng);
            let v = if k == 0 { 0.8 * a as f64 + e } else { e };
            if k == 0 {
                lin += 0.4 * v;
            }
            t.b.push(v);
        }
        let eps: f64 = StandardNormal.sample(&mut rng);
        let time = lin + eps;
        let cens = rng.random_bool(censor);
        let c = if cens { time - rng.random::<f64>() } else { f64::INFINITY };
        t.x.push(time.min(c));
        t.delta.push(u8::from(!cens));
        t.a.push(a);
    }
    t
}

/// Censoring product-limit estimate with the risk set `{x ≥ s}`.
pub struct RefCensoring {
    pub jumps: Vec<f64>,
    pub dl: Vec<f64>,
}

impl RefCensoring {
    pub fn fit(x: &[f64], delta: &[u8]) -> Self {
        let mut jumps: Vec<f64> = x.iter().zip(delta).filter(|(_, &d)| d == 0).map(|(&v, _)| v).collect();
        jumps.sort_by(f64::total_cmp);
        jumps.dedup();
        let dl = jumps
            .iter()
            .map(|&s| {
                let d = x.iter().zip(delta).filter(|(&v, &dd)| dd == 0 && v == s).count() as f64;
                let r = x.iter().filter(|&&v| v >= s).count() as f64;
                d / r
            })
            .collect();
        Self { jumps, dl }
    }

    /// `Ĝ(s⁻)`: product over jumps strictly before `s`.
    pub fn survival_left(&self, s: f64) -> f64 {
        self.jumps
            .iter()
            .zip(&self.dl)
            .filter(|(&t, _)| t < s)
            .map(|(_, &h)| 1.0 - h)
            .product()
    }

    pub fn y(&self, x: &[f64], delta: &[u8]) -> Vec<f64> {
        x.iter()
            .zip(delta)
            .map(|(&v, &d)| if d == 0 { 0.0 } else { v / self.survival_left(v).max(1e-6) })
            .collect()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn cov(u: &[f64], v: &[f64]) -> f64 {
    let (mu, mv) = (mean(u), mean(v));
    u.iter().zip(v).map(|(a, b)| (a - mu) * (b - mv)).sum::<f64>() / u.len() as f64
}

/// Plug-in quantities for one mediator on a set of rows.
#[derive(Debug, Clone, Copy)]
pub struct RefPlugin {
    pub p1: f64,
    pub q0: f64,
    pub q1: f64,
    pub beta: f64,
    pub psi: f64,
}

pub fn ref_plugin(t: &Toy, y: &[f64], rows: &[usize], k: usize) -> RefPlugin {
    let a: Vec<f64> = rows.iter().map(|&i| t.a[i] as f64).collect();
    let b: Vec<f64> = rows.iter().map(|&i| t.b(i, k)).collect();
    let yy: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    let p1 = mean(&a);
    let grp = |g: f64| {
        let v: Vec<f64> = b.iter().zip(&a).filter(|(_, &ai)| ai == g).map(|(&bi, _)| bi).collect();
        mean(&v)
    };
    let (q0, q1) = (grp(0.0), grp(1.0));
    let beta = (cov(&a, &a) * cov(&b, &yy) - cov(&a, &b) * cov(&a, &yy)) / (cov(&a, &a) * cov(&b, &b) - cov(&a, &b).powi(2));
    RefPlugin {
        p1,
        q0,
        q1,
        beta,
        psi: beta * (q1 - q0),
    }
}

/// Newton–Raphson for the logistic MLE of `a` on `(1, b)`, returning `(θ₀, θ₁)`.
pub fn ref_logistic(b: &[f64], a: &[f64]) -> (f64, f64) {
    let (mut t0, mut t1) = (0.0, 0.0);
    for _ in 0..200 {
        let mut g = [0.0; 2];
        let mut h = [[0.0; 2]; 2];
        for (&bi, &ai) in b.iter().zip(a) {
            let pr = 1.0 / (1.0 + (-(t0 + t1 * bi)).exp());
            g[0] += ai - pr;
            g[1] += (ai - pr) * bi;
            let w = pr * (1.0 - pr);
            h[0][0] += w;
            h[0][1] += w * bi;
            h[1][1] += w * bi * bi;
        }
        let det = h[0][0] * h[1][1] - h[0][1] * h[0][1];
        let d0 = (h[1][1] * g[0] - h[0][1] * g[1]) / det;
        let d1 = (h[0][0] * g[1] - h[0][1] * g[0]) / det;
        t0 += d0;
        t1 += d1;
        if d0.abs().max(d1.abs()) < 1e-15 {
            break;
        }
    }
    (t0, t1)
}

/// Indicator-masked least squares of `y` on `b` over `rows` for group `g` and
/// `x ≥ s`; `None` when fewer than two rows qualify.
pub fn ref_masked_line(t: &Toy, y: &[f64], rows: &[usize], k: usize, g: u8, s: f64) -> Option<(f64, f64)> {
    let keep = |i: usize| t.a[i] == g && t.x[i] >= s;
    if rows.iter().filter(|&&i| keep(i)).count() < 2 {
        return None;
    }
    let bm: Vec<f64> = rows.iter().map(|&i| if keep(i) { t.b(i, k) } else { 0.0 }).collect();
    let ym: Vec<f64> = rows.iter().map(|&i| if keep(i) { y[i] } else { 0.0 }).collect();
    let slope = cov(&bm, &ym) / cov(&bm, &bm);
    Some((mean(&ym) - slope * mean(&bm), slope))
}

/// `(f, f_car)` of mediator `k` at row `i` with nuisances fitted on `rows`.
pub fn ref_influence(t: &Toy, cens: &RefCensoring, y: &[f64], rows: &[usize], k: usize, i: usize) -> (f64, f64) {
    let pl = ref_plugin(t, y, rows, k);
    let (p1, p0) = (pl.p1, 1.0 - pl.p1);
    let b_rows: Vec<f64> = rows.iter().map(|&r| t.b(r, k)).collect();
    let a_rows: Vec<f64> = rows.iter().map(|&r| t.a[r] as f64).collect();
    let (t0, t1) = ref_logistic(&b_rows, &a_rows);
    let q_hat = |u: f64| (-(t0 + t1 * u)).exp();
    let base = ref_masked_line(t, y, rows, k, 1, f64::NEG_INFINITY).unwrap();
    let e1 = |u: f64, s: f64| {
        let (c0, c1) = ref_masked_line(t, y, rows, k, 1, s).unwrap_or(base);
        c0 + c1 * u
    };
    let u = t.b(i, k);
    let e_inf = base.0 + base.1 * u;
    if t.a[i] == 0 {
        let f = -(e_inf - pl.beta * pl.q0) / p0;
        return (f, 0.0);
    }
    let f = (y[i] - pl.beta * pl.q1 - q_hat(u) * (p1 / p0) * (y[i] - e_inf)) / p1;
    let mut integral = 0.0;
    if t.delta[i] == 0 {
        integral += e1(u, t.x[i]);
    }
    for (&s, &h) in cens.jumps.iter().zip(&cens.dl) {
        if s <= t.x[i] {
            integral -= e1(u, s) * h;
        }
    }
    let f_car = -(1.0 - q_hat(u) * p1 / p0) / p1 * integral;
    (f, f_car)
}

#[derive(Debug, Clone, Copy)]
pub struct RefStep {
    pub k: usize,
    pub m: f64,
    pub psi: f64,
    pub f_next: f64,
    pub sigma: f64,
    pub weight: f64,
    pub contribution: f64,
}

/// Stabilized estimator on rows in their stored order, burn-in `q_n`.
pub fn ref_stabilized(t: &Toy, q_n: usize) -> (Vec<RefStep>, f64, f64) {
    let n = t.n();
    let cens = RefCensoring::fit(&t.x, &t.delta);
    let y = cens.y(&t.x, &t.delta);
    let mut steps = Vec::new();
    for j in q_n..n {
        let rows: Vec<usize> = (0..j).collect();
        let psi: Vec<f64> = (0..t.p).map(|k| ref_plugin(t, &y, &rows, k).psi).collect();
        let mut k = 0;
        for kk in 1..t.p {
            if psi[kk].abs() > psi[k].abs() {
                k = kk;
            }
        }
        let m = if psi[k] < 0.0 { -1.0 } else { 1.0 };
        let fs: Vec<f64> = rows
            .iter()
            .map(|&i| {
                let (f, c) = ref_influence(t, &cens, &y, &rows, k, i);
                f - c
            })
            .collect();
        let mu = mean(&fs);
        let sigma = (fs.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / j as f64).sqrt();
        let (f, c) = ref_influence(t, &cens, &y, &rows, k, j);
        steps.push(RefStep {
            k,
            m,
            psi: psi[k],
            f_next: f - c,
            sigma,
            weight: f64::NAN,
            contribution: f64::NAN,
        });
    }
    let sigma_bar = 1.0 / mean(&steps.iter().map(|s| 1.0 / s.sigma).collect::<Vec<_>>());
    for s in &mut steps {
        s.weight = sigma_bar / s.sigma;
        s.contribution = s.weight * s.m * (s.psi + s.f_next);
    }
    let s_star = mean(&steps.iter().map(|s| s.contribution).collect::<Vec<_>>());
    (steps, s_star, sigma_bar)
}

/// Largest absolute difference between the crate's trace and the reference.
pub fn trace_discrepancy(est: &hdmed::stabilized::StabilizedEstimate, steps: &[RefStep], s_star: f64) -> (bool, f64) {
    let mut same_choice = est.trace.len() == steps.len();
    let mut worst = (est.s_star - s_star).abs();
    for (a, b) in est.trace.iter().zip(steps) {
        same_choice &= a.k == b.k && a.m as f64 == b.m;
        for (u, v) in [
            (a.psi, b.psi),
            (a.f_star_next, b.f_next),
            (a.sigma_hat, b.sigma),
            (a.weight, b.weight),
            (a.contribution, b.contribution),
        ] {
            worst = worst.max((u - v).abs());
        }
    }
    (same_choice, worst)
}
