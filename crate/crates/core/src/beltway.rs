//! Beltway recovery of supports from cyclic difference multisets, and sparse
//! signal recovery from a power spectrum.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{MraError, Result};
use crate::gensig::{difference_multiset, DiluteClassSpec};
use crate::ring::{self, residue, GroupConfig, Signal};
use crate::rng::Rng;
use crate::spectral::{self, Spectrum};

pub const DEFAULT_BUDGET: u64 = 50_000_000;
pub const MAX_COLLISION_FREE_GUARD: usize = 40;

/// Multiset of nonzero cyclic differences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DifferenceProfile {
    l: usize,
    counts: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ProfileRecord {
    #[serde(rename = "L")]
    l: usize,
    multiplicities: BTreeMap<i64, usize>,
}

impl Serialize for DifferenceProfile {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ProfileRecord {
            l: self.l,
            multiplicities: self.multiplicities(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DifferenceProfile {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = ProfileRecord::deserialize(d)?;
        DifferenceProfile::new(r.l, &r.multiplicities).map_err(serde::de::Error::custom)
    }
}

impl DifferenceProfile {
    /// Builds a profile from multiplicities keyed by any integer representative.
    pub fn new(l: usize, mult: &BTreeMap<i64, usize>) -> Result<Self> {
        if l == 0 {
            return Err(MraError::InvalidArgument("L must be positive".into()));
        }
        let mut counts = vec![0usize; l];
        for (&d, &c) in mult {
            counts[residue(d, l)] += c;
        }
        if counts[0] != 0 {
            return Err(MraError::InconsistentProfile("zero difference present".into()));
        }
        let p = DifferenceProfile { l, counts };
        if !p.is_symmetric() {
            return Err(MraError::InconsistentProfile("mult(d) ≠ mult(−d)".into()));
        }
        Ok(p)
    }

    pub(crate) fn from_residue_counts(l: usize, counts: &[usize]) -> Self {
        DifferenceProfile { l, counts: counts.to_vec() }
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn count(&self, d: i64) -> usize {
        self.counts[residue(d, self.l)]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    pub fn is_symmetric(&self) -> bool {
        (1..self.l).all(|d| self.counts[d] == self.counts[self.l - d])
    }

    /// Nonzero multiplicities keyed by standard label.
    pub fn multiplicities(&self) -> BTreeMap<i64, usize> {
        (1..self.l)
            .filter(|&d| self.counts[d] > 0)
            .map(|d| (ring::canon(d as i64, self.l), self.counts[d]))
            .collect()
    }

    /// The `s` with `s(s−1) = total`, if any.
    pub fn implied_size(&self) -> Option<usize> {
        let t = self.total();
        let s = ((1.0 + (1.0 + 4.0 * t as f64).sqrt()) / 2.0).round() as usize;
        (s * (s - 1) == t).then_some(s)
    }
}

/// Lexicographically smallest characteristic vector over rotations and
/// reflections, returned as sorted standard labels.
pub fn canonical_support(support: &[i64], l: usize) -> Vec<i64> {
    let res: Vec<usize> = support.iter().map(|&i| residue(i, l)).collect();
    let mut best: Option<Vec<bool>> = None;
    for flip in [false, true] {
        for r in 0..l {
            let mut ch = vec![false; l];
            for &x in &res {
                let y = if flip { (l - x) % l } else { x };
                ch[(y + r) % l] = true;
            }
            if best.as_ref().map_or(true, |b| ch < *b) {
                best = Some(ch);
            }
        }
    }
    let mut out: Vec<i64> = best
        .unwrap()
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(x, _)| ring::canon(x as i64, l))
        .collect();
    out.sort_unstable();
    out
}

struct Search<'a> {
    l: usize,
    s: usize,
    remaining: Vec<usize>,
    chosen: Vec<usize>,
    nodes: u64,
    budget: u64,
    found: &'a mut BTreeSet<Vec<i64>>,
}

impl Search<'_> {
    fn take(&mut self, x: usize) -> Option<Vec<usize>> {
        let l = self.l;
        let mut taken = Vec::with_capacity(2 * self.chosen.len());
        for k in 0..self.chosen.len() {
            let p = self.chosen[k];
            for d in [(x + l - p) % l, (p + l - x) % l] {
                if self.remaining[d] == 0 {
                    for &t in &taken {
                        self.remaining[t] += 1;
                    }
                    return None;
                }
                self.remaining[d] -= 1;
                taken.push(d);
            }
        }
        Some(taken)
    }

    fn run(&mut self) -> Result<()> {
        self.nodes += 1;
        if self.nodes > self.budget {
            return Err(MraError::BudgetExceeded(self.budget));
        }
        if self.chosen.len() == self.s {
            let supp: Vec<i64> = self.chosen.iter().map(|&x| x as i64).collect();
            self.found.insert(canonical_support(&supp, self.l));
            return Ok(());
        }
        let last = *self.chosen.last().unwrap();
        let need = self.s - self.chosen.len();
        let open: Vec<usize> = (last + 1..self.l).filter(|&x| self.remaining[x] > 0).collect();
        if open.len() < need {
            return Ok(());
        }
        for (k, &x) in open.iter().enumerate() {
            if open.len() - k < need {
                break;
            }
            if self.remaining[x] == 0 {
                continue;
            }
            if let Some(taken) = self.take(x) {
                self.chosen.push(x);
                let r = self.run();
                self.chosen.pop();
                for t in taken {
                    self.remaining[t] += 1;
                }
                r?;
            }
        }
        Ok(())
    }
}

/// All supports of size `s` whose difference multiset is `d`, one per
/// rotation/reflection orbit, in canonical form.
pub fn solve_beltway(d: &DifferenceProfile, s: usize, budget: u64) -> Result<Vec<Vec<i64>>> {
    if s == 0 {
        return Err(MraError::InvalidArgument("target size must be positive".into()));
    }
    if d.total() != s * (s - 1) {
        return Err(MraError::InvalidArgument(format!(
            "profile has {} differences, expected s(s−1) = {}",
            d.total(),
            s * (s - 1)
        )));
    }
    if s > d.l {
        return Ok(vec![]);
    }
    let mut found = BTreeSet::new();
    let mut search = Search {
        l: d.l,
        s,
        remaining: d.counts.clone(),
        chosen: vec![0],
        nodes: 0,
        budget,
        found: &mut found,
    };
    search.run()?;
    Ok(found.into_iter().collect())
}

/// Exact largest collision-free subset size of Z_L, by anchored branch and bound.
pub fn max_collision_free_size(l: usize) -> Result<usize> {
    if l > MAX_COLLISION_FREE_GUARD {
        return Err(MraError::SizeGuard {
            what: "L for exact collision-free search",
            got: l,
            limit: MAX_COLLISION_FREE_GUARD,
        });
    }
    if l == 0 {
        return Err(MraError::InvalidArgument("L must be positive".into()));
    }
    let mut k = 1;
    while k * (k + 1) <= l.saturating_sub(1) {
        k += 1;
    }
    while k > 1 {
        if collision_free_exists(l, k) {
            return Ok(k);
        }
        k -= 1;
    }
    Ok(1)
}

fn collision_free_exists(l: usize, k: usize) -> bool {
    fn go(l: usize, k: usize, chosen: &mut Vec<usize>, used: &mut Vec<bool>) -> bool {
        if chosen.len() == k {
            return true;
        }
        let last = *chosen.last().unwrap();
        for x in last + 1..l {
            if l - x < k - chosen.len() {
                break;
            }
            let mut fresh = Vec::new();
            let mut ok = true;
            for &p in chosen.iter() {
                for d in [(x + l - p) % l, (p + l - x) % l] {
                    if used[d] || fresh.contains(&d) {
                        ok = false;
                        break;
                    }
                    fresh.push(d);
                }
                if !ok {
                    break;
                }
            }
            if !ok {
                continue;
            }
            fresh.iter().for_each(|&d| used[d] = true);
            chosen.push(x);
            if go(l, k, chosen, used) {
                return true;
            }
            chosen.pop();
            fresh.iter().for_each(|&d| used[d] = false);
        }
        false
    }
    let mut used = vec![false; l];
    used[0] = true;
    go(l, k, &mut vec![0], &mut used)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOptions {
    /// Autocorrelation threshold; defaults to `m²/2`.
    pub threshold: Option<f64>,
    /// Maximum relative power-spectrum residual `‖P̂ − P‖/‖P‖`.
    pub tol: f64,
    pub budget: u64,
    pub max_refine_iters: usize,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        RecoveryOptions {
            threshold: None,
            tol: 1e-8,
            budget: DEFAULT_BUDGET,
            max_refine_iters: 200,
        }
    }
}

impl RecoveryOptions {
    /// For power spectra estimated from data: candidates are ranked later, so the
    /// residual filter only drops gross mismatches.
    pub fn estimated() -> Self {
        RecoveryOptions {
            tol: 0.5,
            ..RecoveryOptions::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct Candidate {
    pub signal: Signal,
    pub residual: f64,
}

/// Relative spectral residual `‖|θ̂|² − P‖/‖P‖`.
pub fn spectral_residual(theta: &Signal, p: &[f64]) -> f64 {
    let ps = spectral::power_spectrum(theta);
    let num: f64 = ps.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = p.iter().map(|b| b * b).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

/// Candidate signals whose power spectrum matches `p` (standard frequency order).
pub fn recover_from_power_spectrum(p: &[f64], hint: &DiluteClassSpec, opts: &RecoveryOptions) -> Result<Vec<Signal>> {
    Ok(recover_candidates(p, hint, opts)?.into_iter().map(|c| c.signal).collect())
}

pub fn recover_candidates(p: &[f64], hint: &DiluteClassSpec, opts: &RecoveryOptions) -> Result<Vec<Candidate>> {
    let l = p.len();
    if l != hint.l {
        return Err(MraError::LengthMismatch(l, hint.l));
    }
    let spec = Spectrum::new(p.iter().map(|&x| Complex64::new(x, 0.0)).collect())?;
    let a = spectral::idft(&spec);
    let thr = opts.threshold.unwrap_or(hint.m * hint.m / 2.0);
    let mut counts = vec![0usize; l];
    for lag in a.indices() {
        if lag != 0 && a.get(lag).abs() > thr {
            counts[residue(lag, l)] = 1;
        }
    }
    let profile = DifferenceProfile::from_residue_counts(l, &counts);
    if !profile.is_symmetric() {
        return Err(MraError::InconsistentProfile("thresholded lags are not symmetric".into()));
    }
    let s = profile.implied_size().ok_or_else(|| {
        MraError::InconsistentProfile(format!("{} lags above threshold is not of the form s(s−1)", profile.total()))
    })?;
    if s != hint.s {
        return Err(MraError::InconsistentProfile(format!(
            "thresholded profile implies s = {s}, class hint says {}",
            hint.s
        )));
    }
    let supports = if s == 1 { vec![vec![0]] } else { solve_beltway(&profile, s, opts.budget)? };
    let mut out = Vec::new();
    for supp in supports {
        let Some(init) = initial_values(&supp, &a, l) else {
            continue;
        };
        let refined = refine(&init, &supp, p, opts.max_refine_iters);
        let theta = canonical_sign(&refined);
        let residual = spectral_residual(&theta, p);
        if residual <= opts.tol {
            out.push(Candidate { signal: theta, residual });
        }
    }
    Ok(out)
}

fn initial_values(supp: &[i64], a: &Signal, l: usize) -> Option<Signal> {
    let s = supp.len();
    let a0 = a.get(0);
    let vals: Vec<f64> = match s {
        1 => vec![a0.max(0.0).sqrt()],
        2 => {
            let pr = a.get(supp[1] - supp[0]);
            let u = (a0 + 2.0 * pr).max(0.0).sqrt();
            let v = (a0 - 2.0 * pr).max(0.0).sqrt();
            vec![(u + v) / 2.0, (u - v) / 2.0]
        }
        _ => {
            let mut b = vec![vec![0.0; s]; s];
            for i in 0..s {
                for j in 0..s {
                    if i != j {
                        let x = a.get(supp[j] - supp[i]).abs();
                        if x == 0.0 {
                            return None;
                        }
                        b[i][j] = x.ln();
                    }
                }
            }
            let total: f64 = (0..s).flat_map(|i| (i + 1..s).map(move |j| (i, j))).map(|(i, j)| b[i][j]).sum();
            let big_x = total / (s as f64 - 1.0);
            (0..s)
                .map(|i| {
                    let bi: f64 = (0..s).filter(|&j| j != i).map(|j| b[i][j]).sum();
                    let mag = ((bi - big_x) / (s as f64 - 2.0)).exp();
                    let sign = if i == 0 { 1.0 } else { a.get(supp[i] - supp[0]).signum() };
                    sign * mag
                })
                .collect()
        }
    };
    let entries: Vec<(i64, f64)> = supp.iter().cloned().zip(vals).collect();
    Signal::from_entries(l, &entries).ok()
}

/// Levenberg–Marquardt on `‖|θ̂|² − P‖²` over the values on a fixed support.
fn refine(init: &Signal, supp: &[i64], p: &[f64], max_iters: usize) -> Signal {
    let l = init.len();
    let s = supp.len();
    let freqs: Vec<i64> = init.indices().collect();
    let phases: Vec<Vec<Complex64>> = freqs
        .iter()
        .map(|&xi| {
            supp.iter()
                .map(|&k| Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * (xi * k).rem_euclid(l as i64) as f64 / l as f64))
                .collect()
        })
        .collect();
    let eval = |v: &[f64]| -> (Vec<f64>, Vec<Complex64>) {
        let hat: Vec<Complex64> = phases.iter().map(|ph| ph.iter().zip(v).map(|(e, x)| e * x).sum()).collect();
        let r = hat.iter().zip(p).map(|(h, q)| h.norm_sqr() - q).collect();
        (r, hat)
    };
    let cost = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();
    let mut v: Vec<f64> = supp.iter().map(|&k| init.get(k)).collect();
    let (mut r, mut hat) = eval(&v);
    let mut c = cost(&r);
    let mut lambda = 1e-6;
    for _ in 0..max_iters {
        let jac = DMatrix::from_fn(l, s, |a, k| 2.0 * (hat[a].conj() * phases[a][k]).re);
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * DVector::from_vec(r.clone());
        let mut improved = false;
        for _ in 0..20 {
            let mut m = jtj.clone();
            for k in 0..s {
                m[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = m.cholesky().map(|ch| ch.solve(&g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = v.iter().zip(step.iter()).map(|(x, d)| x - d).collect();
            let (tr, th) = eval(&trial);
            let tc = cost(&tr);
            if tc < c {
                let rel = step.norm() / DVector::from_vec(v.clone()).norm().max(f64::MIN_POSITIVE);
                v = trial;
                r = tr;
                hat = th;
                c = tc;
                lambda = (lambda / 10.0).max(1e-15);
                improved = rel > 1e-15;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let entries: Vec<(i64, f64)> = supp.iter().cloned().zip(v).collect();
    Signal::from_entries(l, &entries).expect("valid length")
}

/// Flips the global sign so that the first nonzero value is positive.
pub fn canonical_sign(theta: &Signal) -> Signal {
    match theta.values().iter().find(|&&x| x != 0.0) {
        Some(&x) if x < 0.0 => theta.scale(-1.0),
        _ => theta.clone(),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LocalUniquenessReport {
    pub trials: usize,
    pub radius: f64,
    /// min over trials of `‖Δ₂(θ,θ0)‖_F / ρ(θ,θ0)`.
    pub min_ratio: f64,
    /// `m·sqrt(2ε/(2+ε))·√(s/L)`.
    pub predicted_floor: f64,
    pub max_varrho: f64,
}

/// Samples in-class perturbations with `0 < ϱ(θ, θ0) ≤ r` and reports the smallest
/// observed ratio of second-moment separation to orbit distance.
pub fn local_uniqueness_probe(
    theta0: &Signal,
    spec: &DiluteClassSpec,
    radius: f64,
    trials: usize,
    rng: &mut Rng,
) -> Result<LocalUniquenessReport> {
    spec.check(theta0)?;
    let l = theta0.len();
    let supp = theta0.support();
    let mut min_ratio = f64::INFINITY;
    let mut max_varrho: f64 = 0.0;
    let mut done = 0;
    while done < trials {
        let mut h = Signal::zeros(l);
        for &i in &supp {
            let z: f64 = StandardNormal.sample(rng);
            h.set(i, z);
        }
        let u: f64 = rand::Rng::random_range(rng, 0.05..=1.0);
        let target = u * radius * (l as f64).sqrt();
        if h.norm() == 0.0 {
            continue;
        }
        let h = h.scale(target / h.norm());
        let theta = theta0.add(&h)?;
        let rho = ring::rho(&theta, theta0, GroupConfig::cyclic())?.distance;
        if rho == 0.0 {
            continue;
        }
        let e = spectral::second_moment_difference_expansion(theta0, &h)?;
        min_ratio = min_ratio.min(e.total_norm() / rho);
        max_varrho = max_varrho.max(rho / (l as f64).sqrt());
        done += 1;
    }
    Ok(LocalUniquenessReport {
        trials,
        radius,
        min_ratio,
        predicted_floor: spec.m * spec.curvature_constant() * (spec.s as f64 / l as f64).sqrt(),
        max_varrho,
    })
}

/// Every `s`-subset of Z_L with the given profile, canonicalized. Exponential; test oracle.
pub fn brute_force_beltway(d: &DifferenceProfile, s: usize) -> Vec<Vec<i64>> {
    let l = d.l;
    let mut found = BTreeSet::new();
    let mut idx: Vec<usize> = (0..s).collect();
    if s > l {
        return vec![];
    }
    loop {
        let supp: Vec<i64> = idx.iter().map(|&x| x as i64).collect();
        if difference_multiset(&supp, l) == *d {
            found.insert(canonical_support(&supp, l));
        }
        let mut k = s;
        while k > 0 && idx[k - 1] == l - s + k - 1 {
            k -= 1;
        }
        if k == 0 {
            return found.into_iter().collect();
        }
        idx[k - 1] += 1;
        for j in k..s {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_difference_set_mod_7() {
        let d = difference_multiset(&[0, 1, 3], 7);
        let sols = solve_beltway(&d, 3, DEFAULT_BUDGET).unwrap();
        assert_eq!(sols, vec![canonical_support(&[0, 1, 3], 7)]);
        assert_eq!(sols, brute_force_beltway(&d, 3));
    }

    #[test]
    fn two_point_profile() {
        let d = difference_multiset(&[0, 4], 11);
        let sols = solve_beltway(&d, 2, DEFAULT_BUDGET).unwrap();
        assert_eq!(sols.len(), 1);
        assert_eq!(difference_multiset(&sols[0], 11), d);
    }

    #[test]
    fn infeasible_profile_gives_no_orbit() {
        let mut m = BTreeMap::new();
        m.insert(1, 1);
        m.insert(-1, 1);
        m.insert(2, 2);
        m.insert(-2, 2);
        let d = DifferenceProfile::new(9, &m).unwrap();
        assert!(solve_beltway(&d, 3, DEFAULT_BUDGET).unwrap().is_empty());
    }

    #[test]
    fn budget_is_enforced() {
        let d = difference_multiset(&[0, 1, 3, 9, 20, 31], 61);
        assert!(matches!(solve_beltway(&d, 6, 3), Err(MraError::BudgetExceeded(3))));
    }

    #[test]
    fn asymmetric_profile_rejected() {
        let mut m = BTreeMap::new();
        m.insert(1, 1);
        assert!(DifferenceProfile::new(7, &m).is_err());
    }

    #[test]
    fn exact_max_sizes() {
        assert_eq!(max_collision_free_size(2).unwrap(), 1);
        assert_eq!(max_collision_free_size(7).unwrap(), 3);
        assert_eq!(max_collision_free_size(13).unwrap(), 4);
        assert!(max_collision_free_size(41).is_err());
    }

    #[test]
    fn single_spike_recovery() {
        let theta = Signal::from_entries(9, &[(2, -1.7)]).unwrap();
        let p = spectral::power_spectrum(&theta);
        let spec = DiluteClassSpec { l: 9, s: 1, m: 1.0, big_m: 2.0, eps: 0.1 };
        let c = recover_from_power_spectrum(&p, &spec, &RecoveryOptions::default()).unwrap();
        assert_eq!(c.len(), 1);
        assert!((c[0].get(0) - 1.7).abs() < 1e-12);
    }

    #[test]
    fn two_spike_recovery() {
        let theta = Signal::from_entries(13, &[(-3, 1.2), (2, -0.8)]).unwrap();
        let p = spectral::power_spectrum(&theta);
        let spec = DiluteClassSpec { l: 13, s: 2, m: 0.5, big_m: 2.0, eps: 0.1 };
        let c = recover_from_power_spectrum(&p, &spec, &RecoveryOptions::default()).unwrap();
        assert_eq!(c.len(), 1);
        assert!(ring::rho_signed(&c[0], &theta, GroupConfig::dihedral()).unwrap() < 1e-10);
    }

    #[test]
    fn profile_json_round_trip() {
        let d = difference_multiset(&[0, 1, 3], 7);
        let js = serde_json::to_string(&d).unwrap();
        let back: DifferenceProfile = serde_json::from_str(&js).unwrap();
        assert_eq!(back, d);
    }
}
