//! Signal generators for the dilute and moderate regimes, and support diagnostics.

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::beltway::DifferenceProfile;
use crate::error::{MraError, Result};
use crate::ring::{self, residue, Signal};
use crate::rng::Rng;

pub const REJECTION_BUDGET: usize = 10_000;
const GREEDY_RESTARTS: usize = 10_000;

/// Multiset of ordered differences `i − j`, `i ≠ j`, reduced mod L.
pub fn difference_multiset(support: &[i64], l: usize) -> DifferenceProfile {
    let mut counts = vec![0usize; l];
    for &i in support {
        for &j in support {
            if i != j {
                counts[residue(i - j, l)] += 1;
            }
        }
    }
    DifferenceProfile::from_residue_counts(l, &counts)
}

/// True iff every nonzero cyclic difference occurs once.
pub fn is_collision_free(support: &[i64], l: usize) -> bool {
    let mut seen = vec![false; l];
    for (a, &i) in support.iter().enumerate() {
        for &j in &support[a + 1..] {
            for d in [residue(i - j, l), residue(j - i, l)] {
                if d == 0 || seen[d] {
                    return false;
                }
                seen[d] = true;
            }
        }
    }
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiluteClassSpec {
    #[serde(rename = "L")]
    pub l: usize,
    pub s: usize,
    pub m: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
    pub eps: f64,
}

impl DiluteClassSpec {
    /// Checks parameter sanity and the necessary condition `s(s−1) ≤ L−1`.
    pub fn validate(&self) -> Result<()> {
        if self.s == 0 || self.l < 2 {
            return Err(MraError::InvalidArgument("need s ≥ 1 and L ≥ 2".into()));
        }
        if !(self.m > 0.0 && self.big_m >= self.m && self.eps > 0.0) {
            return Err(MraError::InvalidArgument(format!(
                "need 0 < m ≤ M and ε > 0, got m={}, M={}, ε={}",
                self.m, self.big_m, self.eps
            )));
        }
        if self.s * (self.s - 1) > self.l - 1 {
            return Err(MraError::InvalidArgument(format!(
                "s(s−1) = {} exceeds L−1 = {}; no collision-free support exists",
                self.s * (self.s - 1),
                self.l - 1
            )));
        }
        Ok(())
    }

    /// `s ≥ (2+ε)M²/m²`.
    pub fn is_admissible(&self) -> bool {
        self.s as f64 >= (2.0 + self.eps) * (self.big_m / self.m).powi(2) * (1.0 - 1e-12)
    }

    /// Largest ε keeping the class admissible, `s·m²/M² − 2`.
    pub fn max_eps(s: usize, m: f64, big_m: f64) -> f64 {
        s as f64 * (m / big_m).powi(2) - 2.0
    }

    /// `sqrt(2ε/(2+ε))`, the dilute curvature constant.
    pub fn curvature_constant(&self) -> f64 {
        (2.0 * self.eps / (2.0 + self.eps)).sqrt()
    }

    /// Checks that `theta` lies in the class.
    pub fn check(&self, theta: &Signal) -> Result<()> {
        if theta.len() != self.l {
            return Err(MraError::ClassCheck(format!("length {} ≠ L = {}", theta.len(), self.l)));
        }
        let supp = theta.support();
        if supp.len() != self.s {
            return Err(MraError::ClassCheck(format!("|support| = {} ≠ s = {}", supp.len(), self.s)));
        }
        if !is_collision_free(&supp, self.l) {
            return Err(MraError::ClassCheck("support has a repeated difference".into()));
        }
        for &i in &supp {
            let a = theta.get(i).abs();
            if a < self.m || a > self.big_m {
                return Err(MraError::ClassCheck(format!("|θ({i})| = {a} outside [m, M]")));
            }
        }
        if !self.is_admissible() {
            return Err(MraError::ClassCheck(format!(
                "s = {} < (2+ε)M²/m² = {}",
                self.s,
                (2.0 + self.eps) * (self.big_m / self.m).powi(2)
            )));
        }
        Ok(())
    }
}

/// Which route produced a collision-free support.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SupportRoute {
    Rejection { attempts: usize },
    Greedy { restarts: usize },
}

/// A uniformly random s-subset of Z_L as standard labels.
pub fn random_support(l: usize, s: usize, rng: &mut Rng) -> Vec<i64> {
    let lo = ring::lo(l);
    let mut v: Vec<i64> = sample(rng, l, s).iter().map(|a| lo + a as i64).collect();
    v.sort_unstable();
    v
}

/// Draws a collision-free support of size `s`, by rejection and then greedy growth.
pub fn collision_free_support(l: usize, s: usize, rng: &mut Rng) -> Result<(Vec<i64>, SupportRoute)> {
    if s == 0 || s > l {
        return Err(MraError::InvalidArgument(format!("support size {s} not in 1..=L")));
    }
    for attempt in 1..=REJECTION_BUDGET {
        let supp = random_support(l, s, rng);
        if is_collision_free(&supp, l) {
            return Ok((supp, SupportRoute::Rejection { attempts: attempt }));
        }
    }
    log::warn!("rejection budget exhausted for L={l}, s={s}; falling back to greedy growth");
    for restart in 0..GREEDY_RESTARTS {
        if let Some(supp) = greedy_support(l, s, rng) {
            return Ok((supp, SupportRoute::Greedy { restarts: restart }));
        }
    }
    Err(MraError::RetryBudgetExhausted(REJECTION_BUDGET + GREEDY_RESTARTS))
}

fn greedy_support(l: usize, s: usize, rng: &mut Rng) -> Option<Vec<i64>> {
    let mut chosen: Vec<usize> = Vec::with_capacity(s);
    let mut used = vec![false; l];
    while chosen.len() < s {
        let candidates: Vec<usize> = (0..l).filter(|&x| extends(&chosen, &used, x, l)).collect();
        if candidates.is_empty() {
            return None;
        }
        let x = candidates[rng.random_range(0..candidates.len())];
        for &p in &chosen {
            used[(x + l - p) % l] = true;
            used[(p + l - x) % l] = true;
        }
        chosen.push(x);
    }
    let mut out: Vec<i64> = chosen.iter().map(|&x| ring::canon(x as i64, l)).collect();
    out.sort_unstable();
    Some(out)
}

fn extends(chosen: &[usize], used: &[bool], x: usize, l: usize) -> bool {
    let mut fresh: Vec<usize> = Vec::with_capacity(2 * chosen.len());
    for &p in chosen {
        if p == x {
            return false;
        }
        for d in [(x + l - p) % l, (p + l - x) % l] {
            if used[d] || fresh.contains(&d) {
                return false;
            }
            fresh.push(d);
        }
    }
    true
}

/// Dilute-class signal: collision-free support, magnitudes uniform on `[m, M]`, random signs.
pub fn gen_collision_free(spec: &DiluteClassSpec, rng: &mut Rng) -> Result<Signal> {
    spec.validate()?;
    if !spec.is_admissible() {
        log::warn!("dilute spec with s={} is not admissible for ε={}", spec.s, spec.eps);
    }
    let (supp, _) = collision_free_support(spec.l, spec.s, rng)?;
    let mut theta = Signal::zeros(spec.l);
    for i in supp {
        let mag = if spec.big_m > spec.m {
            rng.random_range(spec.m..=spec.big_m)
        } else {
            spec.m
        };
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        theta.set(i, sign * mag);
    }
    Ok(theta)
}

/// `Z_L⁺ = {0, …, ⌊(L−1)/2⌋}`.
pub fn positive_part(l: usize) -> std::ops::RangeInclusive<i64> {
    0..=((l as i64 - 1) / 2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricDraw {
    pub signal: Signal,
    /// Set when the Bernoulli draw selected no index.
    pub empty_support: bool,
}

/// Symmetric Bernoulli–Gaussian signal: each index of `Z_L⁺` is kept with
/// probability `s/L`, values `N(0, ζ²)`, then mirrored about the origin.
pub fn gen_symm_bernoulli_gaussian(l: usize, s: f64, zeta: f64, rng: &mut Rng) -> Result<SymmetricDraw> {
    if !(s >= 1.0 && s <= l as f64) || zeta <= 0.0 {
        return Err(MraError::InvalidArgument(format!("need 1 ≤ s ≤ L and ζ > 0, got s={s}, ζ={zeta}")));
    }
    let p = s / l as f64;
    let normal = Normal::new(0.0, zeta).expect("ζ > 0");
    let mut theta = Signal::zeros(l);
    for k in positive_part(l) {
        if rng.random::<f64>() < p {
            let x = normal.sample(rng);
            theta.set(k, x);
            theta.set(-k, x);
        }
    }
    let empty_support = theta.support().is_empty();
    if empty_support {
        log::warn!("symmetric Bernoulli-Gaussian draw has empty support (L={l}, s={s})");
    }
    Ok(SymmetricDraw { signal: theta, empty_support })
}

/// Symmetric Gaussian values on the interval support `[−s, s]`.
pub fn gen_symm_interval(l: usize, s: usize, zeta: f64, rng: &mut Rng) -> Result<Signal> {
    if 2 * s + 1 > l {
        return Err(MraError::InvalidArgument(format!("2s+1 = {} exceeds L = {l}", 2 * s + 1)));
    }
    if zeta <= 0.0 {
        return Err(MraError::InvalidArgument("ζ must be positive".into()));
    }
    let normal = Normal::new(0.0, zeta).expect("ζ > 0");
    let mut theta = Signal::zeros(l);
    for k in 0..=s as i64 {
        let mut x = normal.sample(rng);
        while x == 0.0 {
            x = normal.sample(rng);
        }
        theta.set(k, x);
        theta.set(-k, x);
    }
    Ok(theta)
}

/// Table of `cos²(2πr/L)` for `r ∈ 0..L`, symmetrized so that `r` and `L−r` agree bit for bit.
pub fn cos_sq_table(l: usize) -> Vec<f64> {
    (0..l)
        .map(|r| {
            let r = r.min(l - r);
            let c = (2.0 * std::f64::consts::PI * r as f64 / l as f64).cos();
            c * c
        })
        .collect()
}

/// `V(Ξ, a) = 1_{0∈Ξ} + 2 Σ_{k∈Ξ∖{0}} cos²(2πak/L)`.
pub fn cosine_functional(xi: &[i64], a: i64, l: usize) -> f64 {
    cosine_functional_with(&cos_sq_table(l), xi, a, l)
}

fn cosine_functional_with(table: &[f64], xi: &[i64], a: i64, l: usize) -> f64 {
    let mut v = 0.0;
    for &k in xi {
        if residue(k, l) == 0 {
            v += 1.0;
        } else {
            let r = (residue(a, l) as u128 * residue(k, l) as u128 % l as u128) as usize;
            v += 2.0 * table[r];
        }
    }
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CosineGenericity {
    pub generic: bool,
    pub argmin: i64,
    pub min_value: f64,
}

/// Minimum of the cosine functional over all `a ∈ Z_L`, compared against `gamma`.
pub fn check_cosine_generic(xi: &[i64], gamma: f64, l: usize) -> CosineGenericity {
    let table = cos_sq_table(l);
    let mut best = (0i64, f64::INFINITY);
    for a in ring::lo(l)..=ring::hi(l) {
        let v = cosine_functional_with(&table, xi, a, l);
        if v < best.1 {
            best = (a, v);
        }
    }
    CosineGenericity {
        generic: best.1 >= gamma,
        argmin: best.0,
        min_value: best.1,
    }
}

/// `αs ≤ |Ξ| ≤ βs`.
pub fn check_typically_sparse(xi: &[i64], s: f64, alpha: f64, beta: f64) -> bool {
    let n = xi.len() as f64;
    alpha * s <= n && n <= beta * s
}

/// JSON form of a signal: support and the values on it, in standard order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalRecord {
    #[serde(rename = "L")]
    pub l: usize,
    pub format: String,
    pub support: Vec<i64>,
    pub values: Vec<f64>,
}

pub const SIGNAL_FORMAT: &str = "standard-parametrization";

impl SignalRecord {
    pub fn from_signal(theta: &Signal) -> Self {
        let support = theta.support();
        let values = support.iter().map(|&i| theta.get(i)).collect();
        SignalRecord {
            l: theta.len(),
            format: SIGNAL_FORMAT.to_string(),
            support,
            values,
        }
    }

    pub fn to_signal(&self) -> Result<Signal> {
        if self.format != SIGNAL_FORMAT {
            return Err(MraError::Format(format!("unknown signal format {:?}", self.format)));
        }
        if self.support.len() != self.values.len() {
            return Err(MraError::Format("support and values differ in length".into()));
        }
        if self.l == 0 {
            return Err(MraError::Format("L must be positive".into()));
        }
        let (lo, hi) = (ring::lo(self.l), ring::hi(self.l));
        let mut theta = Signal::zeros(self.l);
        for (&i, &v) in self.support.iter().zip(&self.values) {
            if i < lo || i > hi {
                return Err(MraError::Format(format!("index {i} outside [{lo}, {hi}]")));
            }
            if !v.is_finite() {
                return Err(MraError::Format(format!("non-finite value at index {i}")));
            }
            theta.set(i, v);
        }
        Ok(theta)
    }

    pub fn to_json(theta: &Signal) -> String {
        serde_json::to_string_pretty(&SignalRecord::from_signal(theta)).expect("serializable")
    }

    pub fn parse(s: &str) -> Result<Signal> {
        serde_json::from_str::<SignalRecord>(s)?.to_signal()
    }
}
