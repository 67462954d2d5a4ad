//! Numerical checks of the curvature bounds: dilute lower bound, the adversarial
//! (degenerate) direction for full-support signals, the moderate-regime bound
//! on a frequency set, and the moment sandwich for KL.

mod uup;

pub use uup::{
    good_set_report, good_set_trials, lambda_construct, neg_moment_constant, uup_check, uup_check_ensemble, uup_ratio,
    uup_sample, FrequencySet, GoodSetParams, GoodSetReport, GoodSetTrials, LambdaOptions, UupEnsemble, NEG_MOMENT_C,
};

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{MraError, Result};
use crate::gensig::DiluteClassSpec;
use crate::mra::{kl_monte_carlo, KlOptions};
use crate::ring::{self, check_len, GroupConfig, Signal};
use crate::rng::{self, Rng};
use crate::spectral::{self, second_moment_difference_expansion, Spectrum};

/// How perturbation directions are drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Direction {
    /// Gaussian values on the support of `θ0`.
    SupportGaussian,
    /// Gaussian values on the support of `θ0`, antisymmetrized about the origin.
    SupportAntisymmetric,
    /// Gaussian values on the support of `θ0`, symmetrized about the origin.
    SupportSymmetric,
    /// A single support coordinate.
    Coordinate(i64),
}

/// A random direction of unit norm.
pub fn sample_direction(theta0: &Signal, dir: Direction, rng: &mut Rng) -> Signal {
    let l = theta0.len();
    let supp = theta0.support();
    loop {
        let mut h = Signal::zeros(l);
        match dir {
            Direction::Coordinate(i) => h.set(i, 1.0),
            _ => {
                for &i in &supp {
                    let z: f64 = StandardNormal.sample(rng);
                    h.set(i, z);
                }
            }
        }
        match dir {
            Direction::SupportAntisymmetric => h = h.sub(&ring::reflect(&h)).expect("same length"),
            Direction::SupportSymmetric => h = h.add(&ring::reflect(&h)).expect("same length"),
            _ => {}
        }
        let n = h.norm();
        if n > 0.0 {
            return h.scale(1.0 / n);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RatioStats {
    pub min: f64,
    pub max: f64,
    pub trials: usize,
}

/// `‖Δ₂(θ0+h, θ0)‖_F / (√(s/L)·‖h‖)` over `trials` directions at `‖h‖ = h_norm`.
pub fn normalized_ratio(theta0: &Signal, dir: Direction, trials: usize, h_norm: f64, rng: &mut Rng) -> Result<RatioStats> {
    let l = theta0.len() as f64;
    let s = theta0.support().len() as f64;
    let scale = (s / l).sqrt();
    let mut st = RatioStats {
        min: f64::INFINITY,
        max: 0.0,
        trials,
    };
    for _ in 0..trials {
        let h = sample_direction(theta0, dir, rng).scale(h_norm);
        let e = second_moment_difference_expansion(theta0, &h)?;
        let r = e.total_norm() / (scale * h.norm());
        st.min = st.min.min(r);
        st.max = st.max.max(r);
    }
    Ok(st)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiluteBoundReport {
    pub trials: usize,
    pub h_norm: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// `m·sqrt(2ε/(2+ε))`.
    pub bound: f64,
    pub slack: f64,
    pub pass: bool,
    /// `(‖h‖/m, min ratio)` for the sensitivity sweep.
    pub sensitivity: Vec<(f64, f64)>,
}

/// Samples in-support directions and compares the normalized second-moment
/// separation against the dilute curvature constant.
pub fn dilute_lower_bound_check(
    theta0: &Signal,
    spec: &DiluteClassSpec,
    trials: usize,
    h_norm: Option<f64>,
    slack: f64,
    rng: &mut Rng,
) -> Result<DiluteBoundReport> {
    spec.check(theta0)?;
    if trials == 0 {
        return Err(MraError::InvalidArgument("trials must be positive".into()));
    }
    let h_norm = h_norm.unwrap_or(1e-3 * spec.m);
    let st = normalized_ratio(theta0, Direction::SupportGaussian, trials, h_norm, rng)?;
    let sweep_trials = (trials / 10).max(20);
    let mut sensitivity = Vec::new();
    for f in [1e-2, 1e-3, 1e-4] {
        let s = normalized_ratio(theta0, Direction::SupportGaussian, sweep_trials, f * spec.m, rng)?;
        sensitivity.push((f, s.min));
    }
    let bound = spec.m * spec.curvature_constant();
    Ok(DiluteBoundReport {
        trials,
        h_norm,
        min_ratio: st.min,
        max_ratio: st.max,
        bound,
        slack,
        pass: st.min >= bound * (1.0 - slack),
        sensitivity,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialDirection {
    pub h: Signal,
    /// Frequencies where `θ̂0` vanished and `ĥ` was left at zero.
    pub skipped: Vec<i64>,
}

/// Relative size below which a Fourier coefficient counts as vanishing.
pub const VANISHING: f64 = 1e-12;

/// Direction `h` with `|ĥ(ξ)| = δ` whose phase is a quarter turn from `θ̂0(ξ)`, so the
/// part of `Δ₂(θ0+h, θ0)` linear in `h` cancels. `ĥ(0) = 0`, and `ĥ(L/2) = 0` for even `L`.
pub fn adversarial_direction(theta0: &Signal, delta: f64) -> Result<AdversarialDirection> {
    let l = theta0.len();
    if theta0.support().len() != l {
        return Err(MraError::ClassCheck("adversarial direction needs a full-support signal".into()));
    }
    if !(delta > 0.0) {
        return Err(MraError::InvalidArgument("δ must be positive".into()));
    }
    let th = dft(theta0);
    let scale = th.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut hh = vec![Complex64::new(0.0, 0.0); l];
    let mut skipped = Vec::new();
    for xi in 1..l.div_ceil(2) {
        let z = th[xi];
        if z.norm() <= VANISHING * scale {
            log::warn!("θ̂0 vanishes at ξ = {xi}; frequency skipped");
            skipped.push(xi as i64);
            skipped.push(-(xi as i64));
            continue;
        }
        let v = Complex64::new(0.0, delta) * z / z.norm();
        hh[xi] = v;
        hh[l - xi] = v.conj();
    }
    let mut g = hh.clone();
    spectral::ifft_in_place(&mut g);
    let re: Vec<f64> = g.iter().map(|z| z.re).collect();
    skipped.sort_unstable();
    Ok(AdversarialDirection {
        h: Signal::from_group_order(&re)?,
        skipped,
    })
}

fn dft(theta: &Signal) -> Vec<Complex64> {
    spectral::dft(theta).to_group_order()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdversarialReport {
    pub h_norm: f64,
    pub h_mean: f64,
    /// `‖M(θ0∗ȟ) + M(θ̌0∗h)‖_F / (√L‖θ0‖‖h‖)`.
    pub linear_relative: f64,
    pub delta2_norm: f64,
    /// `L‖h‖²`.
    pub quadratic_bound: f64,
    pub skipped: Vec<i64>,
    pub pass: bool,
}

/// Checks the three properties of the adversarial direction at once.
pub fn adversarial_check(theta0: &Signal, delta: f64, linear_tol: f64) -> Result<AdversarialReport> {
    let adv = adversarial_direction(theta0, delta)?;
    let h = &adv.h;
    let l = theta0.len() as f64;
    let e = second_moment_difference_expansion(theta0, h)?;
    // The expansion stores generators scaled by 1/L.
    let linear = e.linear_norm() * l;
    let linear_relative = linear / (l.sqrt() * theta0.norm() * h.norm());
    let delta2_norm = e.total_norm();
    let quadratic_bound = l * h.norm_sq();
    let h_mean = h.mean();
    Ok(AdversarialReport {
        h_norm: h.norm(),
        h_mean,
        linear_relative,
        delta2_norm,
        quadratic_bound,
        skipped: adv.skipped,
        pass: linear_relative <= linear_tol
            && h_mean.abs() <= 1e-14 * h.norm().max(f64::MIN_POSITIVE)
            && delta2_norm <= quadratic_bound * (1.0 + 1e-12),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModerateReport {
    pub trials: usize,
    pub h_norm: f64,
    /// `min_Λ |θ̂0|`.
    pub floor: f64,
    pub c1_hat: f64,
    pub c2_hat: f64,
    /// `c₃ = sqrt(c1_hat/c2_hat)`; also used as `c₄`.
    pub c3: f64,
    /// min over trials of `‖Δ₂‖_F·√L/(𝔪·ρ)`.
    pub min_ratio: f64,
    /// min over trials of `(1/L)Σ|θ̂ĥ|² / (c₃²𝔪²‖h‖²)`.
    pub chain_min: f64,
    pub slack: f64,
    pub pass: bool,
}

/// Moderate-regime bound `‖Δ₂‖_F ≥ c₄(𝔪/√L)ρ` for symmetric in-support perturbations.
pub fn moderate_curvature_check(
    theta0: &Signal,
    lambda: &FrequencySet,
    trials: usize,
    h_norm: f64,
    slack: f64,
    rng: &mut Rng,
) -> Result<ModerateReport> {
    if !theta0.is_symmetric() {
        return Err(MraError::ClassCheck("moderate check needs a symmetric signal".into()));
    }
    if theta0.len() != lambda.l {
        return Err(MraError::LengthMismatch(theta0.len(), lambda.l));
    }
    let (c1, c2) = match (lambda.c1_hat, lambda.c2_hat) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(MraError::InvalidArgument("frequency set carries no UUP constants".into())),
    };
    let l = theta0.len();
    let th = spectral::dft(theta0);
    let floor = lambda.lambda.iter().map(|&xi| th.get(xi).norm()).fold(f64::INFINITY, f64::min);
    let c3 = (c1 / c2).sqrt();
    let mut min_ratio = f64::INFINITY;
    let mut chain_min = f64::INFINITY;
    for _ in 0..trials {
        let h = sample_direction(theta0, Direction::SupportSymmetric, rng).scale(h_norm);
        let theta = theta0.add(&h)?;
        let rho = ring::rho(&theta, theta0, GroupConfig::cyclic())?.distance;
        if rho == 0.0 {
            continue;
        }
        let d2 = second_moment_difference_expansion(theta0, &h)?.total_norm();
        min_ratio = min_ratio.min(d2 * (l as f64).sqrt() / (floor * rho));
        let hh = spectral::dft(&h);
        let energy: f64 = th.values().iter().zip(hh.values()).map(|(a, b)| (a * b).norm_sqr()).sum::<f64>() / l as f64;
        chain_min = chain_min.min(energy / (c3 * c3 * floor * floor * h.norm_sq()));
    }
    Ok(ModerateReport {
        trials,
        h_norm,
        floor,
        c1_hat: c1,
        c2_hat: c2,
        c3,
        min_ratio,
        chain_min,
        slack,
        pass: min_ratio >= c3 * (1.0 - slack),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SandwichRow {
    pub sigma: f64,
    pub kl: f64,
    pub kl_se: f64,
    /// `‖Δ₁‖, ‖Δ₂‖, ‖Δ₃‖` (Frobenius).
    pub delta_norms: [f64; 3],
    /// `Σ_{m≤3} ‖Δ_m‖²/((√3σ)^{2m} m!)`.
    pub lower_series: f64,
    /// `2Σ_{m≤3} ‖Δ_m‖²/(σ^{2m} m!)`, without the remainder.
    pub upper_series: f64,
    pub ratio: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SandwichReport {
    pub rows: Vec<SandwichRow>,
    /// Smallest observed `KL / lower_series`.
    pub underline_c: f64,
    pub pass: bool,
}

pub const SANDWICH_MAX_L: usize = 16;

/// Monte-Carlo KL against the moment series on a σ grid, for centered signals.
pub fn moment_sandwich_probe(theta: &Signal, phi: &Signal, sigma_grid: &[f64], n_mc: usize, rng: &mut Rng) -> Result<SandwichReport> {
    check_len(theta, phi)?;
    let l = theta.len();
    if l > SANDWICH_MAX_L {
        return Err(MraError::SizeGuard {
            what: "L for moment sandwich",
            got: l,
            limit: SANDWICH_MAX_L,
        });
    }
    for (name, s) in [("θ", theta), ("φ", phi)] {
        if s.mean().abs() > 1e-12 * s.norm().max(1.0) {
            return Err(MraError::ClassCheck(format!("{name} is not centered (mean {:e})", s.mean())));
        }
    }
    let norms = [
        spectral::delta_m(theta, phi, 1)?.frobenius_norm(),
        spectral::delta_m(theta, phi, 2)?.frobenius_norm(),
        spectral::delta_m(theta, phi, 3)?.frobenius_norm(),
    ];
    let base: u64 = rand::Rng::random(rng);
    let mut rows = Vec::new();
    for (k, &sigma) in sigma_grid.iter().enumerate() {
        let mut r = rng::stream(base, k as u64);
        let est = kl_monte_carlo(theta, phi, sigma, n_mc, &mut r, &KlOptions::default())?;
        let (mut lower, mut upper, mut fact) = (0.0, 0.0, 1.0);
        for (m, d) in norms.iter().enumerate() {
            let m = m + 1;
            fact *= m as f64;
            lower += d * d / ((3.0 * sigma * sigma).powi(m as i32) * fact);
            upper += 2.0 * d * d / (sigma.powi(2 * m as i32) * fact);
        }
        let (ratio, pass) = if lower > 0.0 {
            let ratio = est.estimate / lower;
            (ratio, ratio >= 1.0 - 3.0 * est.std_error / lower)
        } else {
            (f64::NAN, est.estimate.abs() <= 3.0 * est.std_error + 1e-15)
        };
        rows.push(SandwichRow {
            sigma,
            kl: est.estimate,
            kl_se: est.std_error,
            delta_norms: norms,
            lower_series: lower,
            upper_series: upper,
            ratio,
            pass,
        });
    }
    let underline_c = rows.iter().map(|r| r.ratio).filter(|r| r.is_finite()).fold(f64::INFINITY, f64::min);
    let pass = rows.iter().all(|r| r.pass);
    Ok(SandwichReport { rows, underline_c, pass })
}

/// `spectrum` helper kept public for probes that work in frequency space.
pub fn spectrum_of(theta: &Signal) -> Spectrum {
    spectral::dft(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn coordinate_direction_meets_dilute_bound() {
        let theta0 = Signal::from_entries(31, &[(0, 1.0), (1, -1.2), (3, 1.1), (7, 1.1), (12, -1.05)]).unwrap();
        let spec = DiluteClassSpec { l: 31, s: 5, m: 1.0, big_m: 1.2, eps: DiluteClassSpec::max_eps(5, 1.0, 1.2) };
        spec.check(&theta0).unwrap();
        let bound = spec.m * spec.curvature_constant();
        for &i in &theta0.support() {
            let st = normalized_ratio(&theta0, Direction::Coordinate(i), 1, 1e-3, &mut stream(1, 0)).unwrap();
            assert!(st.min >= bound * 0.95, "coordinate {i}: {} < {bound}", st.min);
        }
    }

    #[test]
    fn adversarial_direction_is_real_and_mean_zero() {
        let theta0 = Signal::new(vec![1.0, -0.5, 0.7, 1.3, -0.9, 0.6, 1.1, -1.4]).unwrap();
        let r = adversarial_check(&theta0, 1e-3, 1e-8).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(adversarial_direction(&Signal::delta(8, 0), 1e-3).is_err());
    }

    #[test]
    fn dead_frequency_is_skipped() {
        // θ = 1 + cos(2π·2k/8)/2 + small odd part: θ̂(±1) = 0 and θ̂(±3) = 0 but full support.
        let l = 8;
        let v: Vec<f64> = (0..l).map(|k| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * 2.0 * k as f64 / l as f64).cos()).collect();
        let theta0 = Signal::from_group_order(&v).unwrap();
        let adv = adversarial_direction(&theta0, 1e-3).unwrap();
        assert_eq!(adv.skipped, vec![-3, -1, 1, 3]);
    }

    #[test]
    fn sandwich_rejects_uncentered() {
        let t = Signal::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(moment_sandwich_probe(&t, &t, &[1.0], 10, &mut stream(0, 0)).is_err());
        let c = t.centered();
        let r = moment_sandwich_probe(&c, &c, &[1.0], 100, &mut stream(0, 0)).unwrap();
        assert!(r.pass && r.rows[0].kl == 0.0);
    }
}
