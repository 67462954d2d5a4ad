//! Random frequency sets, their energy ratios on sparse vectors, the good set
//! of a random symmetric signal, and the resampled set used by the moderate
//! bound.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MraError, Result};
use crate::gensig::{check_cosine_generic, gen_symm_bernoulli_gaussian};
use crate::ring::{self, Signal};
use crate::rng::{self, Rng};
use crate::spectral;

/// Supports up to this size use the direct `Σ_d A(d)cos(2πξd/L)` route.
const DIRECT_SUPPORT: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencySet {
    #[serde(rename = "L")]
    pub l: usize,
    /// Standard frequency labels, ascending.
    pub lambda: Vec<i64>,
    /// Expected size used when sampling.
    pub a: f64,
    pub c1_hat: Option<f64>,
    pub c2_hat: Option<f64>,
    /// `min_Λ |θ̂|` for the signal the set was built for.
    pub floor: Option<f64>,
    /// Resampling rounds used by [`lambda_construct`].
    pub tries: Option<usize>,
}

impl FrequencySet {
    pub fn new(l: usize, mut lambda: Vec<i64>, a: f64) -> Result<Self> {
        if l == 0 {
            return Err(MraError::InvalidArgument("L must be positive".into()));
        }
        for x in lambda.iter_mut() {
            *x = ring::canon(*x, l);
        }
        lambda.sort_unstable();
        lambda.dedup();
        Ok(FrequencySet {
            l,
            lambda,
            a,
            c1_hat: None,
            c2_hat: None,
            floor: None,
            tries: None,
        })
    }

    pub fn full(l: usize) -> Self {
        FrequencySet::new(l, (ring::lo(l)..=ring::hi(l)).collect(), l as f64).expect("L > 0")
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    pub fn contains(&self, xi: i64) -> bool {
        self.lambda.binary_search(&ring::canon(xi, self.l)).is_ok()
    }

    /// Membership by standard-order slot.
    fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.l];
        for &xi in &self.lambda {
            m[ring::slot(xi, self.l)] = true;
        }
        m
    }
}

/// Each frequency is kept independently with probability `a/L`.
pub fn uup_sample(l: usize, a: f64, rng: &mut Rng) -> Result<FrequencySet> {
    if !(a > 0.0 && a <= l as f64) {
        return Err(MraError::InvalidArgument(format!("need 0 < a ≤ L, got a={a}, L={l}")));
    }
    let p = a / l as f64;
    let lambda = (ring::lo(l)..=ring::hi(l)).filter(|_| p >= 1.0 || rng.random::<f64>() < p).collect();
    FrequencySet::new(l, lambda, a)
}

/// `|ĥ(ξ)|²` in standard frequency order.
fn power(h: &Signal) -> Vec<f64> {
    let l = h.len();
    let supp = h.support();
    if supp.len() > DIRECT_SUPPORT {
        return spectral::power_spectrum(h);
    }
    let mut acf: Vec<(usize, f64)> = Vec::with_capacity(supp.len() * supp.len());
    for &j in &supp {
        for &k in &supp {
            acf.push((ring::residue(j - k, l), h.get(j) * h.get(k)));
        }
    }
    acf.sort_by_key(|p| p.0);
    let mut merged: Vec<(usize, f64)> = Vec::new();
    for (d, w) in acf {
        match merged.last_mut() {
            Some(last) if last.0 == d => last.1 += w,
            _ => merged.push((d, w)),
        }
    }
    let cos: Vec<f64> = (0..l)
        .map(|r| (2.0 * std::f64::consts::PI * r.min(l - r) as f64 / l as f64).cos())
        .collect();
    (ring::lo(l)..=ring::hi(l))
        .map(|xi| {
            let xr = ring::residue(xi, l) as u128;
            merged.iter().map(|&(d, w)| w * cos[(xr * d as u128 % l as u128) as usize]).sum()
        })
        .collect()
}

fn ratio_with_mask(mask: &[bool], count: usize, h: &Signal) -> f64 {
    let p = power(h);
    let mut inside = 0.0;
    let mut all = 0.0;
    for (v, &m) in p.iter().zip(mask) {
        if m {
            inside += v;
        }
        all += v;
    }
    (inside / count as f64) / (all / p.len() as f64)
}

/// `(1/|Λ|)Σ_Λ|ĥ|² / ((1/L)Σ_{Z_L}|ĥ|²)`.
pub fn uup_ratio(set: &FrequencySet, h: &Signal) -> Result<f64> {
    if set.is_empty() {
        return Err(MraError::Empty("frequency set"));
    }
    if h.len() != set.l {
        return Err(MraError::LengthMismatch(h.len(), set.l));
    }
    if h.norm_sq() == 0.0 {
        return Err(MraError::InvalidArgument("h must be nonzero".into()));
    }
    Ok(ratio_with_mask(&set.mask(), set.len(), h))
}

/// Sparse vectors the ratio is tested on. Values are Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub enum UupEnsemble {
    /// Uniformly random support of size `s`.
    Sparse { s: usize },
    /// Fixed support; with `symmetric`, `h(−k) = h(k)`.
    WithinSupport { support: Vec<i64>, symmetric: bool },
}

impl UupEnsemble {
    fn draw(&self, l: usize, rng: &mut Rng) -> Signal {
        loop {
            let mut h = Signal::zeros(l);
            match self {
                UupEnsemble::Sparse { s } => {
                    let lo = ring::lo(l);
                    for a in rand::seq::index::sample(rng, l, *s) {
                        let z: f64 = StandardNormal.sample(rng);
                        h.set(lo + a as i64, z);
                    }
                }
                UupEnsemble::WithinSupport { support, symmetric } => {
                    for &k in support {
                        if *symmetric && ring::residue(k, l) > ring::residue(-k, l) {
                            continue;
                        }
                        let z: f64 = StandardNormal.sample(rng);
                        h.set(k, z);
                        if *symmetric {
                            h.set(-k, z);
                        }
                    }
                }
            }
            // The ratio is scale invariant; max-abs scaling keeps spikes at exactly ±1.
            let n = h.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if n > 0.0 {
                return Signal::new(h.values().iter().map(|v| v / n).collect()).expect("nonempty");
            }
        }
    }
}

/// `(c1_hat, c2_hat)`: min and max of the ratio over `trials` random unit `s`-sparse vectors.
pub fn uup_check(set: &FrequencySet, s: usize, trials: usize, rng: &mut Rng) -> Result<(f64, f64)> {
    if s == 0 || s > set.l {
        return Err(MraError::InvalidArgument(format!("need 1 ≤ s ≤ L, got s={s}")));
    }
    uup_check_ensemble(set, &UupEnsemble::Sparse { s }, trials, rng)
}

pub fn uup_check_ensemble(set: &FrequencySet, ens: &UupEnsemble, trials: usize, rng: &mut Rng) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(MraError::Empty("frequency set"));
    }
    if trials == 0 {
        return Err(MraError::InvalidArgument("trials must be positive".into()));
    }
    if let UupEnsemble::WithinSupport { support, .. } = ens {
        if support.is_empty() {
            return Err(MraError::Empty("ensemble support"));
        }
    }
    let mask = set.mask();
    let base: u64 = rng.random();
    let ratios: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(base, t as u64);
            let h = ens.draw(set.l, &mut r);
            ratio_with_mask(&mask, set.len(), &h)
        })
        .collect();
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    Ok((lo, hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodSetParams {
    pub kappa: f64,
    pub eta: f64,
    pub tau: f64,
    pub zeta: f64,
}

impl GoodSetParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) {
            return Err(MraError::InvalidArgument("κ must be positive".into()));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(MraError::InvalidArgument("η must lie in (0, 1)".into()));
        }
        if !(self.zeta > 0.0) {
            return Err(MraError::InvalidArgument("ζ must be positive".into()));
        }
        Ok(())
    }
}

/// Constant in `E|Z|^{−η} ≤ C(1−η)^{−1}`. The supremum of
/// `(1−η)·E|Z|^{−η}` over `η ∈ (0,1)` is its value 1 at `η = 0`.
pub const NEG_MOMENT_C: f64 = 1.0;

/// `(1−η)·E|Z|^{−η} = (1−η)·2^{−η/2}Γ((1−η)/2)/√π` for standard normal `Z`.
pub fn neg_moment_constant(eta: f64) -> f64 {
    (1.0 - eta) * 2f64.powf(-eta / 2.0) * statrs::function::gamma::gamma((1.0 - eta) / 2.0) / std::f64::consts::PI.sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GoodSetReport {
    /// `{ξ : |f̂(ξ)| ≥ |Ξ|^{−κ}}`.
    pub set: Vec<i64>,
    pub threshold: f64,
    pub fraction: f64,
    /// `min_ξ V(Ξ, ξ)`.
    pub min_cosine: f64,
    /// `C(1−η)^{−1}ζ^{−η}(min V)^{−η/2}`.
    pub frak_a: f64,
    /// `1 − 𝔞·|Ξ|^{−κη/2}`.
    pub size_floor: f64,
    pub size_ok: bool,
}

pub fn good_set_report(f: &Signal, params: &GoodSetParams) -> Result<GoodSetReport> {
    params.validate()?;
    let xi = f.support();
    if xi.is_empty() {
        return Err(MraError::Empty("support of f"));
    }
    let l = f.len();
    let n_xi = xi.len() as f64;
    let threshold = n_xi.powf(-params.kappa);
    let spec = spectral::dft(f);
    let set: Vec<i64> = spec.frequencies().filter(|&k| spec.get(k).norm() >= threshold).collect();
    let fraction = set.len() as f64 / l as f64;
    let min_cosine = check_cosine_generic(&xi, 0.0, l).min_value;
    let frak_a = NEG_MOMENT_C / (1.0 - params.eta) * params.zeta.powf(-params.eta) * min_cosine.powf(-params.eta / 2.0);
    let size_floor = 1.0 - frak_a * n_xi.powf(-params.kappa * params.eta / 2.0);
    Ok(GoodSetReport {
        size_ok: fraction >= size_floor,
        set,
        threshold,
        fraction,
        min_cosine,
        frak_a,
        size_floor,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GoodSetTrials {
    pub draws: usize,
    pub empty_draws: usize,
    pub fractions: Vec<f64>,
    /// Share of draws whose set meets the size floor.
    pub meet_rate: f64,
    /// Mean over draws of the predicted probability floor `1 − 𝔞·|Ξ|^{−κη/2}`.
    pub promised_rate: f64,
}

/// Good-set sizes over symmetric Bernoulli–Gaussian draws with expected sparsity `s`.
pub fn good_set_trials(l: usize, s: f64, params: &GoodSetParams, draws: usize, rng: &mut Rng) -> Result<GoodSetTrials> {
    params.validate()?;
    let base: u64 = rng.random();
    let reports: Vec<Option<GoodSetReport>> = (0..draws)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(base, t as u64);
            let d = gen_symm_bernoulli_gaussian(l, s, params.zeta, &mut r)?;
            if d.empty_support {
                return Ok(None);
            }
            good_set_report(&d.signal, params).map(Some)
        })
        .collect::<Result<_>>()?;
    let ok: Vec<&GoodSetReport> = reports.iter().flatten().collect();
    let k = ok.len().max(1) as f64;
    Ok(GoodSetTrials {
        draws,
        empty_draws: draws - ok.len(),
        fractions: ok.iter().map(|r| r.fraction).collect(),
        meet_rate: ok.iter().filter(|r| r.size_ok).count() as f64 / k,
        promised_rate: ok.iter().map(|r| r.size_floor.max(0.0)).sum::<f64>() / k,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LambdaOptions {
    pub max_tries: usize,
    /// Defaults to `c·min{s^{τ−4}, 1}`.
    pub floor: Option<f64>,
    pub c: f64,
    pub tau: f64,
    pub uup_trials: usize,
    pub c1_min: f64,
    pub c2_max: f64,
}

impl Default for LambdaOptions {
    fn default() -> Self {
        LambdaOptions {
            max_tries: 50,
            floor: None,
            c: 1.0,
            tau: 1.0,
            uup_trials: 200,
            c1_min: 0.05,
            c2_max: 20.0,
        }
    }
}

impl LambdaOptions {
    pub fn floor_for(&self, s: usize) -> f64 {
        self.floor.unwrap_or_else(|| self.c * (s as f64).powf(self.tau - 4.0).min(1.0))
    }
}

/// Resamples `Λ ~ uup_sample(L, a)` until `min_Λ|θ̂| ≥ floor` and the ratio bounds hold
/// for symmetric vectors supported in `supp(θ)`.
pub fn lambda_construct(theta: &Signal, s: usize, a: f64, opts: &LambdaOptions, rng: &mut Rng) -> Result<FrequencySet> {
    let l = theta.len();
    if !theta.is_symmetric() {
        return Err(MraError::ClassCheck("Λ construction needs a symmetric signal".into()));
    }
    let support = theta.support();
    if support.is_empty() {
        return Err(MraError::Empty("support of θ"));
    }
    let floor = opts.floor_for(s);
    let spec = spectral::dft(theta);
    let ens = UupEnsemble::WithinSupport { support, symmetric: true };
    let mut best: Option<(bool, f64, f64, Vec<i64>)> = None;
    for t in 1..=opts.max_tries {
        let mut set = uup_sample(l, a, rng)?;
        if set.is_empty() {
            continue;
        }
        let set_floor = set.lambda.iter().map(|&xi| spec.get(xi).norm()).fold(f64::INFINITY, f64::min);
        let (c1, c2) = uup_check_ensemble(&set, &ens, opts.uup_trials, rng)?;
        let floor_ok = set_floor >= floor;
        if floor_ok && c1 >= opts.c1_min && c2 <= opts.c2_max {
            set.c1_hat = Some(c1);
            set.c2_hat = Some(c2);
            set.floor = Some(set_floor);
            set.tries = Some(t);
            return Ok(set);
        }
        let better = match &best {
            None => true,
            Some((f, _, bc1, _)) => (floor_ok, c1) > (*f, *bc1),
        };
        if better {
            best = Some((floor_ok, set_floor, c1, set.lambda));
        }
    }
    let (_, best_floor, best_c1, best) = best.unwrap_or((false, 0.0, 0.0, Vec::new()));
    Err(MraError::LambdaConstruction {
        tries: opts.max_tries,
        best_floor,
        best_c1,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn full_set_ratio_is_one() {
        let set = FrequencySet::full(33);
        let mut r = stream(3, 0);
        for s in [1, 2, 5, 20] {
            let (c1, c2) = uup_check(&set, s, 50, &mut r).unwrap();
            assert_eq!((c1, c2), (1.0, 1.0), "s={s}");
        }
    }

    #[test]
    fn spike_ratio_is_one() {
        let mut r = stream(5, 0);
        let set = uup_sample(64, 20.0, &mut r).unwrap();
        let (c1, c2) = uup_check(&set, 1, 100, &mut r).unwrap();
        assert_eq!((c1, c2), (1.0, 1.0));
    }

    #[test]
    fn direct_power_matches_fft() {
        let h = Signal::from_entries(40, &[(0, 0.3), (-7, 1.2), (11, -0.4), (19, 2.0)]).unwrap();
        let a = power(&h);
        let b = spectral::power_spectrum(&h);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn neg_moment_sup_is_at_zero() {
        assert!((neg_moment_constant(0.0) - 1.0).abs() < 1e-12);
        for k in 1..200 {
            let eta = k as f64 / 200.0;
            assert!(neg_moment_constant(eta) <= NEG_MOMENT_C + 1e-12, "η={eta}");
        }
    }

    #[test]
    fn spike_good_set() {
        let p = GoodSetParams { kappa: 0.5, eta: 0.5, tau: 1.0, zeta: 1.0 };
        let big = good_set_report(&Signal::delta(16, 0).scale(1.5), &p).unwrap();
        assert_eq!(big.set.len(), 16);
        let small = good_set_report(&Signal::delta(16, 0).scale(0.5), &p).unwrap();
        assert!(small.set.is_empty());
    }

    #[test]
    fn dead_frequency_excluded() {
        // θ = δ0 + (δ4 + δ−4)/2 on Z_16: θ̂(ξ) = 1 + cos(πξ/2) vanishes at ξ = ±2, ±6.
        let theta = Signal::from_entries(16, &[(0, 1.0), (4, 0.5), (-4, 0.5)]).unwrap();
        let opts = LambdaOptions { floor: Some(1e-6), max_tries: 500, ..Default::default() };
        let set = lambda_construct(&theta, 3, 8.0, &opts, &mut stream(9, 0)).unwrap();
        for xi in [-6, -2, 2, 6] {
            assert!(!set.contains(xi));
        }
        assert!(set.floor.unwrap() >= 1e-6);
    }
}
