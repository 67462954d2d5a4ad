//! Scan harness: σ-rate scans, sparsity scans, KL curvature scans and the
//! collision-free probability fit. Every record carries the seed and config hash.
//!
//! Config schema (version 1), JSON:
//!
//! ```json
//! {
//!   "schema": 1,
//!   "scenario": "dilute-rate | fullsupport-rate | sparsity-scan | kl-curvature-scan",
//!   "seed": 7,
//!   "trials": 20,
//!   "L": [21],
//!   "s": [5],
//!   "sigma": [1.0, 2.0, 4.0],
//!   "n_rule": {"kind": "sigma-power", "c": 40000.0, "power": 4.0},
//!   "signal": {"kind": "dilute", "m": 1.0, "M": 1.2, "support": [3, 6, 7, 12, 14]},
//!   "estimator": {"init": "pipeline"},
//!   "kl": {"n_mc": 1000000, "h_norm": 0.001, "direction": "in-class"},
//!   "window": [1.6, 2.6],
//!   "outputs": {"csv": "records.csv", "summary": "summary.json"}
//! }
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::beltway::{self, RecoveryOptions};
use crate::error::{MraError, Result};
use crate::gensig::{self, DiluteClassSpec, SignalRecord};
use crate::mra::{self, em_restricted_mle, kl_monte_carlo, EmFit, EmOptions, KlOptions, MraConfig, RestrictedClass};
use crate::probes::adversarial_direction;
use crate::ring::{self, GroupConfig, Signal};
use crate::rng::{self, Rng};
use crate::stats::{self, LineFit};

pub const SCHEMA: u32 = 1;
const SIGNAL_TAG: u64 = 0x5167;
const BOOT_TAG: u64 = 0xB007;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    DiluteRate,
    FullsupportRate,
    SparsityScan,
    KlCurvatureScan,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NRule {
    Fixed { n: usize },
    /// `n = ⌈c·σ^power⌉`.
    SigmaPower { c: f64, power: f64 },
}

impl NRule {
    pub fn n(&self, sigma: f64) -> usize {
        match *self {
            NRule::Fixed { n } => n,
            NRule::SigmaPower { c, power } => (c * sigma.powf(power)).ceil() as usize,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SignalSpec {
    /// One fixed signal; the `L` grid must hold its length only.
    Explicit { signal: SignalRecord },
    /// Collision-free support (random unless given), magnitudes on `[m, M]`, random signs.
    Dilute {
        m: f64,
        #[serde(rename = "M")]
        big_m: f64,
        #[serde(default)]
        eps: Option<f64>,
        #[serde(default)]
        support: Option<Vec<i64>>,
    },
    /// i.i.d. `N(0, ζ²)` on every index, optionally centered.
    FullSupport {
        zeta: f64,
        #[serde(default)]
        center: bool,
    },
    /// Symmetric Bernoulli–Gaussian with expected sparsity `s`.
    SymmetricBg { zeta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitPolicy {
    /// Start EM at the truth (local rate measurement).
    Truth,
    /// Phase retrieval from the estimated power spectrum (dilute signals only).
    Pipeline,
    /// Truth plus the degenerate direction scaled to `adv_scale·σ³/√n`.
    Adversarial,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub init: InitPolicy,
    #[serde(default)]
    pub em: EmOptions,
    #[serde(default = "one")]
    pub adv_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            init: InitPolicy::Truth,
            em: EmOptions::default(),
            adv_scale: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlDirection {
    /// Mean-zero Gaussian direction on the support of `θ0`.
    InClass,
    /// The degenerate direction of a full-support signal.
    Adversarial,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlScanConfig {
    pub n_mc: usize,
    pub h_norm: f64,
    pub direction: KlDirection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Outputs {
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub summary: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub scenario: Scenario,
    pub seed: u64,
    pub trials: usize,
    #[serde(rename = "L")]
    pub l: Vec<usize>,
    /// Sparsity grid; ignored by signals that fix their own support.
    #[serde(default)]
    pub s: Vec<usize>,
    pub sigma: Vec<f64>,
    #[serde(default = "default_n_rule")]
    pub n_rule: NRule,
    pub signal: SignalSpec,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub kl: Option<KlScanConfig>,
    #[serde(default)]
    pub group: GroupConfig,
    /// Acceptance window for every fitted slope; defaults depend on the scenario.
    #[serde(default)]
    pub window: Option<[f64; 2]>,
    #[serde(default = "default_max_failure")]
    pub max_failure_rate: f64,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    #[serde(default)]
    pub outputs: Outputs,
}

fn default_n_rule() -> NRule {
    NRule::SigmaPower { c: 4e4, power: 4.0 }
}

fn default_max_failure() -> f64 {
    0.1
}

fn default_bootstrap() -> usize {
    200
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(MraError::Format(format!("unsupported schema {}, expected {SCHEMA}", self.schema)));
        }
        if self.trials == 0 {
            return Err(MraError::InvalidArgument("trials must be ≥ 1".into()));
        }
        if self.l.is_empty() || self.sigma.is_empty() {
            return Err(MraError::InvalidArgument("L and σ grids must be nonempty".into()));
        }
        if self.sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(MraError::InvalidArgument("σ grid must be positive".into()));
        }
        if self.needs_s_grid() && self.s.is_empty() {
            return Err(MraError::InvalidArgument("this signal kind needs a nonempty s grid".into()));
        }
        if self.scenario == Scenario::KlCurvatureScan && self.kl.is_none() {
            return Err(MraError::InvalidArgument("kl-curvature-scan needs a \"kl\" block".into()));
        }
        if let SignalSpec::Explicit { signal } = &self.signal {
            if self.l != [signal.l] {
                return Err(MraError::InvalidArgument("explicit signal: L grid must be its length".into()));
            }
        }
        Ok(())
    }

    fn needs_s_grid(&self) -> bool {
        matches!(self.signal, SignalSpec::Dilute { support: None, .. } | SignalSpec::SymmetricBg { .. })
    }

    /// `s` values the scan iterates over; `0` when the signal fixes it.
    fn s_grid(&self) -> Vec<usize> {
        if self.needs_s_grid() {
            self.s.clone()
        } else {
            vec![0]
        }
    }

    /// Hex SHA-256 of the serialized config.
    pub fn hash(&self) -> String {
        hash_json(self)
    }

    /// Acceptance window for slopes.
    pub fn effective_window(&self) -> Option<[f64; 2]> {
        if self.window.is_some() {
            return self.window;
        }
        let moderate = matches!(self.signal, SignalSpec::SymmetricBg { .. });
        Some(match (self.scenario, self.kl.map(|k| k.direction)) {
            (Scenario::DiluteRate, _) => [1.6, 2.6],
            (Scenario::FullsupportRate, _) => [2.6, f64::INFINITY],
            (Scenario::SparsityScan, _) if moderate => [f64::NEG_INFINITY, 4.0],
            (Scenario::SparsityScan, _) => [-0.3, 0.3],
            (Scenario::KlCurvatureScan, Some(KlDirection::Adversarial)) => [-6.8, -5.2],
            (Scenario::KlCurvatureScan, _) => [-4.6, -3.4],
        })
    }
}

/// Hex SHA-256 of the compact JSON serialization.
pub fn hash_json<T: Serialize>(v: &T) -> String {
    let json = serde_json::to_string(v).expect("value serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// Builds `θ0` for one `(L, s)` slice.
pub fn make_signal(spec: &SignalSpec, l: usize, s: usize, rng: &mut Rng) -> Result<Signal> {
    match spec {
        SignalSpec::Explicit { signal } => signal.to_signal(),
        SignalSpec::Dilute { m, big_m, support, .. } => {
            let class = dilute_hint(spec, l, s).expect("dilute");
            match support {
                None => gensig::gen_collision_free(&class, rng),
                Some(supp) => {
                    if !gensig::is_collision_free(supp, l) {
                        return Err(MraError::ClassCheck("configured support has a repeated difference".into()));
                    }
                    let mut theta = Signal::zeros(l);
                    for &i in supp {
                        let mag = if big_m > m { rng.random_range(*m..=*big_m) } else { *m };
                        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                        theta.set(i, sign * mag);
                    }
                    Ok(theta)
                }
            }
        }
        SignalSpec::FullSupport { zeta, center } => {
            let v: Vec<f64> = (0..l)
                .map(|_| loop {
                    let z: f64 = StandardNormal.sample(rng);
                    if z != 0.0 {
                        break zeta * z;
                    }
                })
                .collect();
            let t = Signal::new(v)?;
            Ok(if *center { t.centered() } else { t })
        }
        SignalSpec::SymmetricBg { zeta } => {
            for _ in 0..gensig::REJECTION_BUDGET {
                let d = gensig::gen_symm_bernoulli_gaussian(l, s as f64, *zeta, rng)?;
                if !d.empty_support {
                    return Ok(d.signal);
                }
            }
            Err(MraError::RetryBudgetExhausted(gensig::REJECTION_BUDGET))
        }
    }
}

/// Dilute class description used as the phase-retrieval hint.
pub fn dilute_hint(spec: &SignalSpec, l: usize, s: usize) -> Option<DiluteClassSpec> {
    match spec {
        SignalSpec::Dilute { m, big_m, eps, support } => {
            let s = support.as_ref().map_or(s, |v| v.len());
            let eps = eps.unwrap_or_else(|| DiluteClassSpec::max_eps(s, *m, *big_m).max(f64::EPSILON));
            Some(DiluteClassSpec { l, s, m: *m, big_m: *big_m, eps })
        }
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub cell: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub s: usize,
    pub sigma: f64,
    pub n: usize,
    pub trial: usize,
    /// `√n·ϱ`, `√n·ϱ/σ²` or `KL/‖h‖²` depending on the scenario.
    pub value: f64,
    pub varrho: f64,
    pub std_error: f64,
    pub converged: bool,
    pub iterations: usize,
    pub wall_ms: f64,
    pub failed: String,
    pub seed: u64,
    pub config_hash: String,
}

impl Record {
    pub fn ok(&self) -> bool {
        self.failed.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub x: f64,
    pub median: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceFit {
    /// `"sigma"` or `"s"`.
    pub against: String,
    #[serde(rename = "L")]
    pub l: usize,
    /// Fixed `s` (σ fits) or fixed σ (s fits).
    pub fixed: f64,
    pub points: Vec<FitPoint>,
    /// `None` with fewer than two usable points.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r_squared: Option<f64>,
    pub ci: Option<[f64; 2]>,
    pub window: Option<[f64; 2]>,
    pub pass: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub scenario: Scenario,
    pub seed: u64,
    pub config_hash: String,
    pub records: Vec<Record>,
    pub fits: Vec<SliceFit>,
    pub failure_rate: f64,
    pub pass: bool,
}

impl ExperimentResult {
    /// Records with the wall-clock column cleared, for reproducibility comparisons.
    pub fn records_without_timing(&self) -> Vec<Record> {
        self.records.iter().cloned().map(|mut r| {
            r.wall_ms = 0.0;
            r
        }).collect()
    }

    /// The result without the record list.
    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            scenario: Scenario,
            seed: u64,
            config_hash: &'a str,
            n_records: usize,
            fits: &'a [SliceFit],
            failure_rate: f64,
            pass: bool,
        }
        Ok(serde_json::to_string_pretty(&Summary {
            scenario: self.scenario,
            seed: self.seed,
            config_hash: &self.config_hash,
            n_records: self.records.len(),
            fits: &self.fits,
            failure_rate: self.failure_rate,
            pass: self.pass,
        })?)
    }

    pub fn write_outputs(&self, out: &Outputs) -> Result<()> {
        if let Some(p) = &out.csv {
            write_records_csv(&self.records, p)?;
        }
        if let Some(p) = &out.summary {
            std::fs::write(p, self.summary_json()?)?;
        }
        Ok(())
    }
}

pub fn write_records_csv(records: &[Record], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv(path: &Path) -> Result<Vec<Record>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|x| x.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> MraError {
    MraError::Format(format!("csv: {e}"))
}

struct Job {
    cell: usize,
    l: usize,
    s: usize,
    sigma: f64,
    trial: usize,
}

fn jobs(cfg: &ExperimentConfig) -> Vec<Job> {
    let mut out = Vec::new();
    let mut cell = 0;
    for &l in &cfg.l {
        for &s in &cfg.s_grid() {
            for &sigma in &cfg.sigma {
                for trial in 0..cfg.trials {
                    out.push(Job { cell, l, s, sigma, trial });
                }
                cell += 1;
            }
        }
    }
    out
}

fn signals(cfg: &ExperimentConfig) -> Result<BTreeMap<(usize, usize), Signal>> {
    let mut out = BTreeMap::new();
    for &l in &cfg.l {
        for &s in &cfg.s_grid() {
            let mut r = rng::stream(cfg.seed, rng::mix(&[SIGNAL_TAG, l as u64, s as u64]));
            out.insert((l, s), make_signal(&cfg.signal, l, s, &mut r)?);
        }
    }
    Ok(out)
}

fn class_for(spec: &SignalSpec, theta0: &Signal) -> RestrictedClass {
    match spec {
        SignalSpec::Dilute { .. } => RestrictedClass::SupportFixed { support: theta0.support() },
        SignalSpec::SymmetricBg { .. } => RestrictedClass::SymmetricSupportFixed { support: theta0.support() },
        SignalSpec::Explicit { .. } | SignalSpec::FullSupport { .. } => {
            if theta0.support().len() < theta0.len() {
                RestrictedClass::SupportFixed { support: theta0.support() }
            } else {
                RestrictedClass::None
            }
        }
    }
}

struct Outcome {
    value: f64,
    varrho: f64,
    std_error: f64,
    converged: bool,
    iterations: usize,
}

fn rate_job(cfg: &ExperimentConfig, job: &Job, theta0: &Signal, rng: &mut Rng) -> Result<Outcome> {
    let n = cfg.n_rule.n(job.sigma);
    let mcfg = MraConfig::new(job.l, job.sigma, cfg.group)?;
    let data = mra::simulate(theta0, &mcfg, n, rng)?;
    let est = &cfg.estimator;
    let fit: EmFit = match est.init {
        InitPolicy::Pipeline => {
            let hint = dilute_hint(&cfg.signal, job.l, job.s)
                .ok_or_else(|| MraError::InvalidArgument("pipeline init needs a dilute signal".into()))?;
            EmFit::from_pipeline(&data, &hint, &RecoveryOptions::estimated(), &est.em)?
        }
        InitPolicy::Truth => em_restricted_mle(&data, &class_for(&cfg.signal, theta0), theta0, &est.em)?,
        InitPolicy::Adversarial => {
            let h = adversarial_direction(theta0, 1.0)?.h;
            let scale = est.adv_scale * job.sigma.powi(3) / (n as f64).sqrt() / h.norm();
            let init = theta0.add(&h.scale(scale))?;
            em_restricted_mle(&data, &RestrictedClass::None, &init, &est.em)?
        }
    };
    let varrho = ring::varrho(&fit.theta, theta0, cfg.group)?;
    let mut value = (n as f64).sqrt() * varrho;
    if cfg.scenario == Scenario::SparsityScan {
        value /= job.sigma * job.sigma;
    }
    Ok(Outcome {
        value,
        varrho,
        std_error: f64::NAN,
        converged: fit.diagnostics.converged,
        iterations: fit.diagnostics.iterations,
    })
}

/// Unit direction for the KL curvature scan.
pub fn kl_direction(theta0: &Signal, dir: KlDirection, rng: &mut Rng) -> Result<Signal> {
    let h = match dir {
        KlDirection::Adversarial => adversarial_direction(theta0, 1.0)?.h,
        KlDirection::InClass => {
            let supp = theta0.support();
            if supp.len() < 2 {
                return Err(MraError::InvalidArgument("a mean-zero in-support direction needs |supp| ≥ 2".into()));
            }
            let mut h = Signal::zeros(theta0.len());
            for &i in &supp {
                let z: f64 = StandardNormal.sample(rng);
                h.set(i, z);
            }
            let mean = h.values().iter().sum::<f64>() / supp.len() as f64;
            for &i in &supp {
                h.set(i, h.get(i) - mean);
            }
            h
        }
    };
    let n = h.norm();
    if n == 0.0 {
        return Err(MraError::InvalidArgument("direction vanished".into()));
    }
    Ok(h.scale(1.0 / n))
}

fn kl_job(cfg: &ExperimentConfig, job: &Job, theta0: &Signal, rng: &mut Rng) -> Result<Outcome> {
    let kl = cfg.kl.expect("validated");
    if !(kl.h_norm > 0.0) {
        return Err(MraError::InvalidArgument("h_norm must be positive".into()));
    }
    // One direction per (L, s, trial), shared across σ so the exponent fit sees one curve.
    let mut dr = rng::stream(cfg.seed, rng::mix(&[SIGNAL_TAG, job.l as u64, job.s as u64, job.trial as u64, 1]));
    let h = kl_direction(theta0, kl.direction, &mut dr)?.scale(kl.h_norm);
    let theta = theta0.add(&h)?;
    let opts = KlOptions { group: cfg.group, ..KlOptions::default() };
    let est = kl_monte_carlo(theta0, &theta, job.sigma, kl.n_mc, rng, &opts)?;
    let h2 = h.norm_sq();
    Ok(Outcome {
        value: est.estimate / h2,
        varrho: ring::varrho(&theta, theta0, cfg.group)?,
        std_error: est.std_error / h2,
        converged: est.sane,
        iterations: 0,
    })
}

/// Runs every `(L, s, σ, trial)` job and fits the slopes.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let hash = cfg.hash();
    let thetas = signals(cfg)?;
    let jobs = jobs(cfg);
    let records: Vec<Record> = jobs
        .par_iter()
        .map(|job| {
            let theta0 = &thetas[&(job.l, job.s)];
            let mut r = rng::stream(cfg.seed, rng::mix(&[job.cell as u64, job.trial as u64]));
            let start = Instant::now();
            let out = match cfg.scenario {
                Scenario::KlCurvatureScan => kl_job(cfg, job, theta0, &mut r),
                _ => rate_job(cfg, job, theta0, &mut r),
            };
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            let n = match cfg.scenario {
                Scenario::KlCurvatureScan => cfg.kl.expect("validated").n_mc,
                _ => cfg.n_rule.n(job.sigma),
            };
            let s = if job.s == 0 { theta0.support().len() } else { job.s };
            let base = Record {
                cell: job.cell,
                l: job.l,
                s,
                sigma: job.sigma,
                n,
                trial: job.trial,
                value: f64::NAN,
                varrho: f64::NAN,
                std_error: f64::NAN,
                converged: false,
                iterations: 0,
                wall_ms,
                failed: String::new(),
                seed: cfg.seed,
                config_hash: hash.clone(),
            };
            match out {
                Ok(o) => Record {
                    value: o.value,
                    varrho: o.varrho,
                    std_error: o.std_error,
                    converged: o.converged,
                    iterations: o.iterations,
                    ..base
                },
                Err(e) => {
                    log::warn!("cell {} trial {} failed: {e}", job.cell, job.trial);
                    Record { failed: e.to_string(), ..base }
                }
            }
        })
        .collect();
    Ok(finish(cfg, hash, records))
}

fn finish(cfg: &ExperimentConfig, hash: String, records: Vec<Record>) -> ExperimentResult {
    let failed = records.iter().filter(|r| !r.ok()).count();
    let failure_rate = failed as f64 / records.len().max(1) as f64;
    let fits = fit_from_records(&records, cfg);
    let pass = failure_rate <= cfg.max_failure_rate && fits.iter().all(|f| f.pass != Some(false));
    if failure_rate > cfg.max_failure_rate {
        log::error!("cell failure rate {failure_rate:.3} exceeds {}", cfg.max_failure_rate);
    }
    ExperimentResult {
        scenario: cfg.scenario,
        seed: cfg.seed,
        config_hash: hash,
        records,
        fits,
        failure_rate,
        pass,
    }
}

pub fn run_rate_scan(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    if !matches!(cfg.scenario, Scenario::DiluteRate | Scenario::FullsupportRate) {
        return Err(MraError::InvalidArgument("rate scan needs a *-rate scenario".into()));
    }
    run(cfg)
}

pub fn run_sparsity_scan(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    if cfg.scenario != Scenario::SparsityScan {
        return Err(MraError::InvalidArgument("scenario must be sparsity-scan".into()));
    }
    run(cfg)
}

pub fn run_kl_curvature_scan(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    if cfg.scenario != Scenario::KlCurvatureScan {
        return Err(MraError::InvalidArgument("scenario must be kl-curvature-scan".into()));
    }
    run(cfg)
}

/// Log-log fits of per-cell medians. σ is the regressor except in sparsity scans.
pub fn fit_from_records(records: &[Record], cfg: &ExperimentConfig) -> Vec<SliceFit> {
    let by_s = cfg.scenario == Scenario::SparsityScan;
    // slice key -> x -> values
    let mut slices: BTreeMap<(usize, u64), BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.ok() && r.value.is_finite() && r.value > 0.0) {
        let (fixed, x) = if by_s { (r.sigma, r.s as f64) } else { (r.s as f64, r.sigma) };
        slices
            .entry((r.l, fixed.to_bits()))
            .or_default()
            .entry(x.to_bits())
            .or_default()
            .push(r.value);
    }
    let window = cfg.effective_window();
    let mut out = Vec::new();
    for (k, ((l, fixed), cells)) in slices.into_iter().enumerate() {
        let mut cells: Vec<(f64, Vec<f64>)> = cells.into_iter().map(|(x, v)| (f64::from_bits(x), v)).collect();
        cells.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let points: Vec<FitPoint> = cells
            .iter()
            .map(|(x, v)| FitPoint {
                x: *x,
                median: stats::median(v).expect("nonempty"),
                count: v.len(),
            })
            .collect();
        let fit = loglog(&points.iter().map(|p| (p.x, p.median)).collect::<Vec<_>>());
        let ci = fit.and(bootstrap_ci(&cells, cfg.bootstrap, rng::stream(cfg.seed, rng::mix(&[BOOT_TAG, k as u64]))));
        let pass = match (fit, window) {
            (Some(f), Some([a, b])) => Some(f.slope >= a && f.slope <= b),
            _ => None,
        };
        out.push(SliceFit {
            against: if by_s { "s" } else { "sigma" }.into(),
            l,
            fixed: f64::from_bits(fixed),
            points,
            slope: fit.map(|f| f.slope),
            intercept: fit.map(|f| f.intercept),
            r_squared: fit.map(|f| f.r_squared),
            ci,
            window,
            pass,
        });
    }
    out
}

fn loglog(pts: &[(f64, f64)]) -> Option<LineFit> {
    let x: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    stats::ols(&x, &y)
}

/// Percentile interval of the slope, resampling trials within each cell.
fn bootstrap_ci(cells: &[(f64, Vec<f64>)], b: usize, mut rng: Rng) -> Option<[f64; 2]> {
    if b < 2 {
        return None;
    }
    let mut slopes = Vec::with_capacity(b);
    for _ in 0..b {
        let pts: Vec<(f64, f64)> = cells
            .iter()
            .map(|(x, v)| {
                let res: Vec<f64> = (0..v.len()).map(|_| v[rng.random_range(0..v.len())]).collect();
                (*x, stats::median(&res).expect("nonempty"))
            })
            .collect();
        if let Some(f) = loglog(&pts) {
            slopes.push(f.slope);
        }
    }
    if slopes.len() < 2 {
        return None;
    }
    slopes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some([stats::quantile_sorted(&slopes, 0.025), stats::quantile_sorted(&slopes, 0.975)])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CollisionFreeCell {
    #[serde(rename = "L")]
    pub l: usize,
    pub s: usize,
    pub trials: usize,
    pub hits: usize,
    pub p: f64,
    /// `s³/L`.
    pub x: f64,
}

/// Monte-Carlo probability that a uniform `s`-subset of `Z_L` is collision-free.
pub fn collision_free_probability(l: usize, s: usize, trials: usize, seed: u64) -> CollisionFreeCell {
    let chunk = 4096;
    let hits: usize = (0..trials.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(seed, rng::mix(&[l as u64, s as u64, c as u64]));
            let count = chunk.min(trials - c * chunk);
            (0..count).filter(|_| gensig::is_collision_free(&gensig::random_support(l, s, &mut r), l)).count()
        })
        .sum();
    CollisionFreeCell {
        l,
        s,
        trials,
        hits,
        p: hits as f64 / trials as f64,
        x: (s * s * s) as f64 / l as f64,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CollisionFreeFit {
    pub cells: Vec<CollisionFreeCell>,
    /// Cells with fewer than `min_hits` hits, left out of the fit.
    pub excluded: Vec<(usize, usize)>,
    /// `ln p` against `s³/L`.
    pub fit: Option<LineFit>,
    /// `ln p` against `s⁴/L`, for comparison.
    pub fit_quartic: Option<LineFit>,
    /// Exact maximal collision-free size for each small `L`.
    pub max_sizes: Vec<(usize, usize)>,
    /// Every exact size satisfies `s(s−1) ≤ L−1`.
    pub max_sizes_ok: bool,
}

/// Collision-free probabilities over a grid, the log-linear fit, and exact maximal sizes for `L ≤ max_exact_l`.
pub fn collision_free_scan(ls: &[usize], ss: &[usize], trials: usize, min_hits: usize, max_exact_l: usize, seed: u64) -> Result<CollisionFreeFit> {
    let mut cells = Vec::new();
    let mut excluded = Vec::new();
    for &l in ls {
        for &s in ss {
            if s > l {
                continue;
            }
            let c = collision_free_probability(l, s, trials, seed);
            if c.hits < min_hits {
                log::info!("L={l}, s={s}: {} hits in {trials}, excluded from fit", c.hits);
                excluded.push((l, s));
            }
            cells.push(c);
        }
    }
    let used: Vec<&CollisionFreeCell> = cells.iter().filter(|c| c.hits >= min_hits).collect();
    let y: Vec<f64> = used.iter().map(|c| c.p.ln()).collect();
    let fit = stats::ols(&used.iter().map(|c| c.x).collect::<Vec<_>>(), &y);
    let fit_quartic = stats::ols(&used.iter().map(|c| (c.s as f64).powi(4) / c.l as f64).collect::<Vec<_>>(), &y);
    let mut max_sizes = Vec::new();
    for l in 1..=max_exact_l {
        max_sizes.push((l, beltway::max_collision_free_size(l)?));
    }
    let max_sizes_ok = max_sizes.iter().all(|&(l, s)| s * s.saturating_sub(1) <= l - 1);
    Ok(CollisionFreeFit {
        cells,
        excluded,
        fit,
        fit_quartic,
        max_sizes,
        max_sizes_ok,
    })
}
