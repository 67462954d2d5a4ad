use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{group_perm, log_likelihood, to_group, Dataset};
use crate::beltway::{self, RecoveryOptions};
use crate::error::{MraError, Result};
use crate::gensig::DiluteClassSpec;
use crate::ring::{self, Signal};
use crate::spectral::{fft_in_place, Correlator};
use num_complex::Complex64;

/// Constraint set for the restricted MLE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RestrictedClass {
    None,
    SupportFixed {
        support: Vec<i64>,
    },
    SymmetricSupportFixed {
        support: Vec<i64>,
    },
    MagnitudeBand {
        m: f64,
        #[serde(rename = "M")]
        big_m: f64,
        #[serde(default)]
        support: Option<Vec<i64>>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub signal: Signal,
    pub clamp_active: bool,
}

impl RestrictedClass {
    pub fn validate(&self, l: usize) -> Result<()> {
        match self {
            RestrictedClass::SymmetricSupportFixed { support } => {
                let set: std::collections::BTreeSet<i64> = support.iter().map(|&i| ring::canon(i, l)).collect();
                if set.iter().any(|&i| !set.contains(&ring::canon(-i, l))) {
                    return Err(MraError::InvalidArgument("symmetric class needs a symmetric support".into()));
                }
            }
            RestrictedClass::MagnitudeBand { m, big_m, .. } => {
                if !(*m >= 0.0 && big_m >= m) {
                    return Err(MraError::InvalidArgument(format!("bad magnitude band [{m}, {big_m}]")));
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn support(&self) -> Option<&[i64]> {
        match self {
            RestrictedClass::None => None,
            RestrictedClass::SupportFixed { support } | RestrictedClass::SymmetricSupportFixed { support } => Some(support),
            RestrictedClass::MagnitudeBand { support, .. } => support.as_deref(),
        }
    }

    /// Support zeroing, then symmetrization, then magnitude clamp.
    pub fn project(&self, theta: &Signal) -> Projection {
        let l = theta.len();
        let mut out = match self.support() {
            Some(supp) => {
                let mut z = Signal::zeros(l);
                for &i in supp {
                    z.set(i, theta.get(i));
                }
                z
            }
            None => theta.clone(),
        };
        if let RestrictedClass::SymmetricSupportFixed { .. } = self {
            let src = out.clone();
            for i in src.indices() {
                out.set(i, (src.get(i) + src.get(-i)) / 2.0);
            }
        }
        let mut clamp_active = false;
        if let RestrictedClass::MagnitudeBand { m, big_m, support } = self {
            let idx: Vec<i64> = match support {
                Some(s) => s.clone(),
                None => out.indices().collect(),
            };
            for i in idx {
                let v = out.get(i);
                let a = v.abs();
                let c = a.clamp(*m, *big_m);
                if c != a {
                    clamp_active = true;
                    out.set(i, if v < 0.0 { -c } else { c });
                }
            }
        }
        Projection { signal: out, clamp_active }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub max_iters: usize,
    /// Stop once `ϱ(θ_t, θ_{t+1}) < tol`.
    pub tol: f64,
    /// Also evaluate the likelihood at the unprojected M-step output.
    #[serde(default)]
    pub check_monotone: bool,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iters: 500,
            tol: 1e-9,
            check_monotone: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub final_log_likelihood: f64,
    /// `ϱ(θ_t, θ_{t+1})` per iteration.
    pub rho_steps: Vec<f64>,
    /// Log-likelihood at each projected iterate, starting with the initial point.
    pub log_likelihood_trace: Vec<f64>,
    /// Log-likelihood at each unprojected M-step output (when requested).
    pub pre_projection_log_likelihood: Vec<f64>,
    pub clamp_activated: bool,
    pub init_policy: String,
}

#[derive(Clone, Debug)]
pub struct EmFit {
    pub theta: Signal,
    pub diagnostics: EmDiagnostics,
}

struct EStep {
    log_likelihood: f64,
    /// `Σ_i Σ_G w_i(G) G⁻¹y_i` in group order.
    pullback: Vec<f64>,
}

const CHUNK: usize = 2048;

fn e_step(theta: &Signal, data: &Dataset) -> EStep {
    let l = data.l();
    let group = data.config().group;
    let sigma = data.sigma();
    let s2 = sigma * sigma;
    let corr = Correlator::new(&theta.to_group_order());
    let perm = group_perm(l);
    let theta_sq = theta.norm_sq();
    let g = group.order(l);
    let constant = -0.5 * l as f64 * (2.0 * std::f64::consts::PI * s2).ln() - (g as f64).ln();
    let parts: Vec<(f64, Vec<f64>)> = data
        .observations()
        .par_chunks(CHUNK * l)
        .map(|chunk| {
            let (mut y, mut c, mut tmp) = (vec![0.0; l], vec![0.0; g], vec![0.0; l]);
            let mut acc = vec![0.0; l];
            let mut ll = 0.0;
            for row in chunk.chunks_exact(l) {
                to_group(row, &perm, &mut y);
                corr.inner_products_into(&y, group, &mut c);
                let m = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for v in c.iter_mut() {
                    *v = ((*v - m) / s2).exp();
                    z += *v;
                }
                let y_sq: f64 = y.iter().map(|v| v * v).sum();
                ll += constant - (y_sq + theta_sq) / (2.0 * s2) + m / s2 + z.ln();
                c.iter_mut().for_each(|v| *v /= z);
                corr.pullback_into(&y, &c, group, &mut tmp);
                acc.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
            }
            (ll, acc)
        })
        .collect();
    let mut pullback = vec![0.0; l];
    let mut ll = 0.0;
    for (p, a) in parts {
        ll += p;
        pullback.iter_mut().zip(&a).for_each(|(x, y)| *x += y);
    }
    EStep {
        log_likelihood: ll,
        pullback,
    }
}

/// Restricted maximum-likelihood estimate by projected EM.
pub fn em_restricted_mle(data: &Dataset, class: &RestrictedClass, init: &Signal, opts: &EmOptions) -> Result<EmFit> {
    em_with_policy(data, class, init, opts, "caller-supplied")
}

pub(crate) fn em_with_policy(
    data: &Dataset,
    class: &RestrictedClass,
    init: &Signal,
    opts: &EmOptions,
    policy: &str,
) -> Result<EmFit> {
    let l = data.l();
    if init.len() != l {
        return Err(MraError::LengthMismatch(init.len(), l));
    }
    let n = data.n();
    if n == 0 {
        return Err(MraError::Empty("dataset"));
    }
    class.validate(l)?;
    let group = data.config().group;
    let first = class.project(init);
    let mut clamp_activated = first.clamp_active;
    let mut theta = first.signal;
    let mut step = e_step(&theta, data);
    let mut diag = EmDiagnostics {
        iterations: 0,
        converged: false,
        final_log_likelihood: step.log_likelihood,
        rho_steps: vec![],
        log_likelihood_trace: vec![step.log_likelihood],
        pre_projection_log_likelihood: vec![],
        clamp_activated: false,
        init_policy: policy.to_string(),
    };
    let mut best = (step.log_likelihood, theta.clone());
    for it in 0..opts.max_iters {
        if !step.log_likelihood.is_finite() {
            return Err(MraError::NonFiniteLikelihood(it));
        }
        let unc: Vec<f64> = step.pullback.iter().map(|v| v / n as f64).collect();
        let unc = Signal::from_group_order(&unc)?;
        if opts.check_monotone {
            diag.pre_projection_log_likelihood.push(log_likelihood(&unc, data)?);
        }
        let proj = class.project(&unc);
        clamp_activated |= proj.clamp_active;
        let next = proj.signal;
        let next_step = e_step(&next, data);
        let moved = ring::varrho(&theta, &next, group)?;
        diag.rho_steps.push(moved);
        diag.log_likelihood_trace.push(next_step.log_likelihood);
        diag.iterations = it + 1;
        theta = next;
        step = next_step;
        if step.log_likelihood > best.0 {
            best = (step.log_likelihood, theta.clone());
        }
        if moved < opts.tol {
            diag.converged = true;
            break;
        }
    }
    if !step.log_likelihood.is_finite() {
        return Err(MraError::NonFiniteLikelihood(diag.iterations));
    }
    if !diag.converged {
        log::warn!("EM stopped at max_iters = {} without reaching tol = {}", opts.max_iters, opts.tol);
    }
    diag.final_log_likelihood = best.0;
    diag.clamp_activated = clamp_activated;
    Ok(EmFit {
        theta: best.1,
        diagnostics: diag,
    })
}

/// Debiased power-spectrum estimate `mean_i |ŷ_i|² − Lσ²`, standard frequency order.
pub fn power_spectrum_estimate(data: &Dataset) -> Result<Vec<f64>> {
    let l = data.l();
    let n = data.n();
    if n == 0 {
        return Err(MraError::Empty("dataset"));
    }
    let perm = group_perm(l);
    let parts: Vec<Vec<f64>> = data
        .observations()
        .par_chunks(CHUNK * l)
        .map(|chunk| {
            let mut acc = vec![0.0; l];
            let mut y = vec![0.0; l];
            let mut buf = vec![Complex64::new(0.0, 0.0); l];
            for row in chunk.chunks_exact(l) {
                to_group(row, &perm, &mut y);
                for (b, &v) in buf.iter_mut().zip(&y) {
                    *b = Complex64::new(v, 0.0);
                }
                fft_in_place(&mut buf);
                acc.iter_mut().zip(&buf).for_each(|(a, z)| *a += z.norm_sqr());
            }
            acc
        })
        .collect();
    let mut acc = vec![0.0; l];
    for p in parts {
        acc.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
    }
    let bias = l as f64 * data.sigma() * data.sigma();
    let g: Vec<f64> = acc.iter().map(|a| a / n as f64 - bias).collect();
    Ok(Signal::from_group_order(&g)?.into_values())
}

/// Candidate signals from the estimated power spectrum, expanded over reflection
/// and global sign (which the power spectrum cannot distinguish).
pub fn pipeline_candidates(data: &Dataset, hint: &DiluteClassSpec, opts: &RecoveryOptions) -> Result<Vec<Signal>> {
    let p = power_spectrum_estimate(data)?;
    let base = beltway::recover_from_power_spectrum(&p, hint, opts)?;
    let mut out = Vec::new();
    for c in base {
        let r = ring::reflect(&c);
        for v in [c.clone(), c.scale(-1.0), r.clone(), r.scale(-1.0)] {
            if !out.contains(&v) {
                out.push(v);
            }
        }
    }
    Ok(out)
}

/// The highest-likelihood phase-retrieval candidate, used to start EM in the dilute class.
pub fn pipeline_init(data: &Dataset, hint: &DiluteClassSpec, opts: &RecoveryOptions) -> Result<Signal> {
    let mut best: Option<(f64, Signal)> = None;
    for c in pipeline_candidates(data, hint, opts)? {
        let ll = log_likelihood(&c, data)?;
        if best.as_ref().map_or(true, |b| ll > b.0) {
            best = Some((ll, c));
        }
    }
    best.map(|b| b.1)
        .ok_or_else(|| MraError::InconsistentProfile("phase retrieval produced no candidate within tolerance".into()))
}

impl EmFit {
    /// Runs EM from the phase-retrieval initialization on the recovered support.
    pub fn from_pipeline(data: &Dataset, hint: &DiluteClassSpec, rec: &RecoveryOptions, opts: &EmOptions) -> Result<EmFit> {
        let init = pipeline_init(data, hint, rec)?;
        let class = RestrictedClass::SupportFixed { support: init.support() };
        em_with_policy(data, &class, &init, opts, "phase-retrieval pipeline")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_is_idempotent() {
        let t = Signal::new(vec![0.3, -2.5, 1.0, 0.01, -0.7, 4.0, 0.2]).unwrap();
        let classes = [
            RestrictedClass::None,
            RestrictedClass::SupportFixed { support: vec![-2, 0, 3] },
            RestrictedClass::SymmetricSupportFixed { support: vec![-2, 0, 2] },
            RestrictedClass::MagnitudeBand { m: 0.5, big_m: 2.0, support: None },
            RestrictedClass::MagnitudeBand { m: 0.5, big_m: 2.0, support: Some(vec![1, 2]) },
        ];
        for c in classes {
            let once = c.project(&t).signal;
            assert_eq!(c.project(&once).signal, once);
            assert!(!c.project(&once).clamp_active);
        }
    }

    #[test]
    fn asymmetric_support_rejected_for_symmetric_class() {
        let c = RestrictedClass::SymmetricSupportFixed { support: vec![1, 2, -1] };
        assert!(c.validate(7).is_err());
    }

    #[test]
    fn class_json() {
        let c: RestrictedClass = serde_json::from_str(r#"{"kind":"magnitude-band","m":0.5,"M":2.0}"#).unwrap();
        assert_eq!(c, RestrictedClass::MagnitudeBand { m: 0.5, big_m: 2.0, support: None });
        let c: RestrictedClass = serde_json::from_str(r#"{"kind":"support-fixed","support":[0,2]}"#).unwrap();
        assert_eq!(c, RestrictedClass::SupportFixed { support: vec![0, 2] });
    }
}
