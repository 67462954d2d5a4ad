//! The observation model `y = Gθ + σz`, its likelihood, Monte-Carlo KL estimates
//! and the restricted MLE via EM.

mod em;
pub mod io;

pub use em::{
    em_restricted_mle, pipeline_candidates, pipeline_init, power_spectrum_estimate, EmDiagnostics, EmFit,
    EmOptions, RestrictedClass,
};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MraError, Result};
use crate::ring::{self, check_len, GroupConfig, GroupElement, Signal};
use crate::rng::{self, Rng};
use crate::spectral::Correlator;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MraConfig {
    #[serde(rename = "L")]
    pub l: usize,
    pub sigma: f64,
    #[serde(default)]
    pub group: GroupConfig,
}

impl MraConfig {
    pub fn new(l: usize, sigma: f64, group: GroupConfig) -> Result<Self> {
        if l == 0 {
            return Err(MraError::InvalidArgument("L must be positive".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(MraError::InvalidArgument(format!("σ must be positive, got {sigma}")));
        }
        Ok(MraConfig { l, sigma, group })
    }
}

/// Ground truth kept alongside simulated data.
#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    pub theta0: Signal,
    pub latent: Vec<GroupElement>,
}

/// `n` observations stored row-major, each row in standard order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    config: MraConfig,
    observations: Vec<f64>,
    truth: Option<Truth>,
}

impl Dataset {
    pub fn new(config: MraConfig, observations: Vec<f64>) -> Result<Self> {
        if observations.len() % config.l != 0 {
            return Err(MraError::Format(format!(
                "{} values is not a multiple of L = {}",
                observations.len(),
                config.l
            )));
        }
        Ok(Dataset {
            config,
            observations,
            truth: None,
        })
    }

    pub fn config(&self) -> &MraConfig {
        &self.config
    }

    pub fn l(&self) -> usize {
        self.config.l
    }

    pub fn sigma(&self) -> f64 {
        self.config.sigma
    }

    pub fn n(&self) -> usize {
        self.observations.len() / self.config.l
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let l = self.l();
        &self.observations[i * l..(i + 1) * l]
    }

    pub fn truth(&self) -> Option<&Truth> {
        self.truth.as_ref()
    }

    /// Concatenation of two datasets with the same configuration.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.config != other.config {
            return Err(MraError::InvalidArgument("datasets have different configurations".into()));
        }
        let mut obs = self.observations.clone();
        obs.extend_from_slice(&other.observations);
        Dataset::new(self.config, obs)
    }

    pub fn with_truth(mut self, truth: Truth) -> Self {
        self.truth = Some(truth);
        self
    }
}

fn random_element(group: GroupConfig, l: usize, rng: &mut Rng) -> GroupElement {
    GroupElement {
        shift: rng.random_range(0..l),
        flip: group.dihedral && rng.random::<bool>(),
    }
}

/// Draws `n` observations `y_i = G_i θ0 + σ z_i` with uniform `G_i`.
pub fn simulate(theta0: &Signal, cfg: &MraConfig, n: usize, rng: &mut Rng) -> Result<Dataset> {
    simulate_with(theta0, cfg, n, rng, true)
}

/// As [`simulate`]; `keep_latent = false` skips storing the group elements.
pub fn simulate_with(theta0: &Signal, cfg: &MraConfig, n: usize, rng: &mut Rng, keep_latent: bool) -> Result<Dataset> {
    if theta0.len() != cfg.l {
        return Err(MraError::LengthMismatch(theta0.len(), cfg.l));
    }
    let l = cfg.l;
    let images: Vec<Vec<f64>> = cfg
        .group
        .elements(l)
        .iter()
        .map(|e| e.apply(theta0).into_values())
        .collect();
    let mut obs = Vec::with_capacity(n * l);
    let mut latent = Vec::with_capacity(if keep_latent { n } else { 0 });
    for _ in 0..n {
        let e = random_element(cfg.group, l, rng);
        let img = &images[e.shift + if e.flip { l } else { 0 }];
        for &v in img {
            let z: f64 = StandardNormal.sample(rng);
            obs.push(v + cfg.sigma * z);
        }
        if keep_latent {
            latent.push(e);
        }
    }
    let ds = Dataset::new(*cfg, obs)?;
    Ok(if keep_latent {
        ds.with_truth(Truth {
            theta0: theta0.clone(),
            latent,
        })
    } else {
        ds
    })
}

/// Permutation taking a standard-order row to group order: `g[perm[a]] = row[a]`.
pub(crate) fn group_perm(l: usize) -> Vec<usize> {
    let lo = ring::lo(l);
    (0..l).map(|a| ring::residue(lo + a as i64, l)).collect()
}

pub(crate) fn to_group(row: &[f64], perm: &[usize], out: &mut [f64]) {
    for (a, &v) in row.iter().enumerate() {
        out[perm[a]] = v;
    }
}

/// Log-sum-exp with max subtraction.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Orbit-averaged Gaussian log-density of one observation (standard order).
pub fn log_density(theta: &Signal, y: &[f64], sigma: f64, group: GroupConfig) -> Result<f64> {
    let l = theta.len();
    if y.len() != l {
        return Err(MraError::LengthMismatch(y.len(), l));
    }
    let corr = Correlator::new(&theta.to_group_order());
    let mut yg = vec![0.0; l];
    to_group(y, &group_perm(l), &mut yg);
    let mut c = corr.inner_products(&yg, group);
    Ok(density_from_products(&mut c, &yg, theta.norm_sq(), sigma))
}

fn density_from_products(c: &mut [f64], y: &[f64], theta_sq: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let l = y.len() as f64;
    let y_sq: f64 = y.iter().map(|v| v * v).sum();
    c.iter_mut().for_each(|v| *v /= s2);
    -0.5 * l * (2.0 * std::f64::consts::PI * s2).ln() - (y_sq + theta_sq) / (2.0 * s2) + log_sum_exp(c)
        - (c.len() as f64).ln()
}

/// `Σ_i log p_θ(y_i)`.
pub fn log_likelihood(theta: &Signal, data: &Dataset) -> Result<f64> {
    let l = data.l();
    if theta.len() != l {
        return Err(MraError::LengthMismatch(theta.len(), l));
    }
    let corr = Correlator::new(&theta.to_group_order());
    let perm = group_perm(l);
    let theta_sq = theta.norm_sq();
    let sigma = data.sigma();
    let group = data.config().group;
    let parts: Vec<f64> = data
        .observations()
        .par_chunks(4096 * l)
        .map(|chunk| {
            let mut yg = vec![0.0; l];
            let mut c = vec![0.0; group.order(l)];
            let mut acc = 0.0;
            for row in chunk.chunks_exact(l) {
                to_group(row, &perm, &mut yg);
                corr.inner_products_into(&yg, group, &mut c);
                acc += density_from_products(&mut c, &yg, theta_sq, sigma);
            }
            acc
        })
        .collect();
    Ok(parts.iter().sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlOptions {
    /// Add the exactly mean-zero score and second-order Bartlett terms to each sample.
    pub control_variates: bool,
    /// Samples per independently seeded block.
    pub block: usize,
    pub group: GroupConfig,
}

impl Default for KlOptions {
    fn default() -> Self {
        KlOptions {
            control_variates: true,
            block: 1 << 15,
            group: GroupConfig::cyclic(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KlEstimate {
    pub estimate: f64,
    /// Delete-one jackknife standard error (for a sample mean this is `sd/√n`).
    pub std_error: f64,
    pub n: usize,
    /// `estimate ≥ −3·SE`.
    pub sane: bool,
}

/// Monte-Carlo `KL(p_θ0 ‖ p_θ) = E_{Y∼p_θ0}[log p_θ0(Y) − log p_θ(Y)]`.
///
/// With control variates each sample is
/// `f + s·h + ½(s·h)² + ½hᵀHh`, where `s` and `H` are the score and Hessian of
/// `log p` at `θ0` and `h = θ − θ0`; the added terms have mean exactly zero.
pub fn kl_monte_carlo(theta0: &Signal, theta: &Signal, sigma: f64, n_mc: usize, rng: &mut Rng, opts: &KlOptions) -> Result<KlEstimate> {
    check_len(theta0, theta)?;
    if n_mc < 2 {
        return Err(MraError::InvalidArgument("need at least two Monte-Carlo samples".into()));
    }
    if !(sigma > 0.0) {
        return Err(MraError::InvalidArgument("σ must be positive".into()));
    }
    let l = theta0.len();
    let group = opts.group;
    let h = theta.sub(theta0)?;
    let c0 = Correlator::new(&theta0.to_group_order());
    let ch = Correlator::new(&h.to_group_order());
    let s2 = sigma * sigma;
    let t0h = theta0.dot(&h)?;
    let norm_shift = (2.0 * t0h + h.norm_sq()) / (2.0 * s2);
    let h_sq = h.norm_sq();
    let images: Vec<Vec<f64>> = group.elements(l).iter().map(|e| e.apply(theta0).to_group_order()).collect();
    let base: u64 = rng.random();
    let block = opts.block.max(1);
    let n_blocks = n_mc.div_ceil(block);
    let parts: Vec<(f64, f64)> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(base, b as u64);
            let count = block.min(n_mc - b * block);
            let g = group.order(l);
            let (mut y, mut a, mut d, mut w) = (vec![0.0; l], vec![0.0; g], vec![0.0; g], vec![0.0; g]);
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..count {
                let e = random_element(group, l, &mut r);
                let img = &images[e.shift + if e.flip { l } else { 0 }];
                for (yi, &v) in y.iter_mut().zip(img) {
                    let z: f64 = StandardNormal.sample(&mut r);
                    *yi = v + sigma * z;
                }
                c0.inner_products_into(&y, group, &mut a);
                ch.inner_products_into(&y, group, &mut d);
                let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for (wi, &ai) in w.iter_mut().zip(&a) {
                    *wi = ((ai - m) / s2).exp();
                    z += *wi;
                }
                let (mut e1, mut mean_d, mut mean_d2) = (0.0, 0.0, 0.0);
                for (wi, &di) in w.iter().zip(&d) {
                    let p = wi / z;
                    let delta = di / s2;
                    e1 += p * delta.exp_m1();
                    mean_d += p * delta;
                    mean_d2 += p * delta * delta;
                }
                let mut val = norm_shift - e1.ln_1p();
                if opts.control_variates {
                    let sh = mean_d - t0h / s2;
                    let hhh = -h_sq / s2 + (mean_d2 - mean_d * mean_d);
                    val += sh + 0.5 * sh * sh + 0.5 * hhh;
                }
                sum += val;
                sum_sq += val * val;
            }
            (sum, sum_sq)
        })
        .collect();
    let (sum, sum_sq) = parts.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let n = n_mc as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    let se = (var / n).sqrt();
    Ok(KlEstimate {
        estimate: mean,
        std_error: se,
        n: n_mc,
        sane: mean >= -3.0 * se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn single_point_group_is_a_gaussian() {
        let theta = Signal::new(vec![0.7]).unwrap();
        let y = [1.9];
        let got = log_density(&theta, &y, 0.5, GroupConfig::cyclic()).unwrap();
        let want = -0.5 * (2.0 * std::f64::consts::PI * 0.25).ln() - (1.9f64 - 0.7).powi(2) / 0.5;
        assert!((got - want).abs() < 1e-13);
    }

    #[test]
    fn two_component_closed_form() {
        let theta = Signal::new(vec![1.0, -1.0]).unwrap();
        let got = log_density(&theta, &[0.0, 0.0], 1.0, GroupConfig::cyclic()).unwrap();
        let n = |m: [f64; 2]| (-(m[0] * m[0] + m[1] * m[1]) / 2.0).exp() / (2.0 * std::f64::consts::PI);
        let want = (0.5 * (n([1.0, -1.0]) + n([-1.0, 1.0]))).ln();
        assert!((got - want).abs() < 1e-13);
    }

    #[test]
    fn noiseless_balanced_simulation_covers_orbit() {
        let theta = Signal::new(vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let cfg = MraConfig::new(5, 1e-300, GroupConfig::cyclic()).unwrap();
        let ds = simulate(&theta, &cfg, 200, &mut stream(1, 1)).unwrap();
        let truth = ds.truth().unwrap();
        for (i, e) in truth.latent.iter().enumerate() {
            let img = e.apply(&theta);
            for (a, b) in ds.row(i).iter().zip(img.values()) {
                assert!((a - b).abs() < 1e-250);
            }
        }
    }

    #[test]
    fn likelihood_is_additive() {
        let theta = Signal::new(vec![0.3, -1.0, 2.0, 0.0]).unwrap();
        let cfg = MraConfig::new(4, 0.8, GroupConfig::dihedral()).unwrap();
        let a = simulate(&theta, &cfg, 30, &mut stream(2, 0)).unwrap();
        let b = simulate(&theta, &cfg, 20, &mut stream(2, 1)).unwrap();
        let joint = log_likelihood(&theta, &a.concat(&b).unwrap()).unwrap();
        let sep = log_likelihood(&theta, &a).unwrap() + log_likelihood(&theta, &b).unwrap();
        assert!((joint - sep).abs() < 1e-10);
        let direct: f64 = (0..a.n()).map(|i| log_density(&theta, a.row(i), 0.8, cfg.group).unwrap()).sum();
        assert!((log_likelihood(&theta, &a).unwrap() - direct).abs() < 1e-10);
        let empty = Dataset::new(cfg, vec![]).unwrap();
        assert_eq!(log_likelihood(&theta, &empty).unwrap(), 0.0);
    }

    #[test]
    fn kl_of_identical_signals_is_zero() {
        let theta = Signal::new(vec![0.5, 1.0, -0.3, 0.8]).unwrap();
        let est = kl_monte_carlo(&theta, &theta, 1.0, 1000, &mut stream(3, 0), &KlOptions::default()).unwrap();
        assert_eq!(est.estimate, 0.0);
        let shifted = ring::shift(&theta, 3);
        let opts = KlOptions { control_variates: false, ..KlOptions::default() };
        let est = kl_monte_carlo(&theta, &shifted, 1.0, 20000, &mut stream(3, 1), &opts).unwrap();
        assert!(est.estimate.abs() <= 3.0 * est.std_error + 1e-12);
    }
}
