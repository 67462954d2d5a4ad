use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use mra_core::beltway::{self, DifferenceProfile, RecoveryOptions, DEFAULT_BUDGET};
use mra_core::experiments::{self, hash_json, ExperimentConfig, ExperimentResult, SignalSpec};
use mra_core::gensig::{self, DiluteClassSpec, SignalRecord};
use mra_core::mra::{self, io, EmFit, EmOptions, MraConfig, RestrictedClass};
use mra_core::probes::{self, FrequencySet, LambdaOptions};
use mra_core::ring::{self, GroupConfig, Signal};
use mra_core::rng::{self, Rng};

#[derive(Parser)]
#[command(name = "mra", version, about = "Multi-reference alignment laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Group {
    Cyclic,
    Dihedral,
}

impl From<Group> for GroupConfig {
    fn from(g: Group) -> Self {
        match g {
            Group::Cyclic => GroupConfig::cyclic(),
            Group::Dihedral => GroupConfig::dihedral(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DataFormat {
    Csv,
    Bin,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw n noisy, randomly transformed copies of a signal.
    Simulate {
        #[arg(long = "L")]
        l: Option<usize>,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        n: usize,
        /// Signal JSON record.
        #[arg(long)]
        signal: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "cyclic")]
        group: Group,
        #[arg(long, value_enum, default_value = "bin")]
        format: DataFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Restricted MLE by EM.
    Estimate {
        /// Dataset (binary or CSV, detected from the header).
        #[arg(long)]
        data: PathBuf,
        /// Group for binary datasets, which do not store it.
        #[arg(long, value_enum, default_value = "cyclic")]
        group: Group,
        /// Restricted class JSON, e.g. {"kind":"support-fixed","support":[0,1,3]}.
        #[arg(long)]
        class: Option<PathBuf>,
        /// Initial signal JSON record.
        #[arg(long, conflicts_with = "pipeline")]
        init: Option<PathBuf>,
        /// Dilute class JSON; initialize by phase retrieval from the data.
        #[arg(long)]
        pipeline: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// θ̂ as a signal JSON record (stdout if absent).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// All supports with a given difference profile, up to rotation and reflection.
    BeltwaySolve {
        #[arg(long)]
        profile: PathBuf,
        /// Support size; inferred from the profile when absent.
        #[arg(long)]
        s: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u64,
    },
    /// Dilute signals matching a power spectrum given as `index,value` CSV.
    PrRecover {
        #[arg(long)]
        power: PathBuf,
        /// Dilute class JSON ({"L","s","m","M","eps"}).
        #[arg(long)]
        hint: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Curvature and frequency-set probes; JSON config in, JSON report out.
    Probe {
        #[arg(value_enum)]
        which: ProbeKind,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// σ-exponent of √n·ϱ from EM fits over a σ grid.
    RateScan(ScanArgs),
    /// s-slope of √n·ϱ/σ² over an s grid.
    SparsityScan(ScanArgs),
    /// σ-exponent of KL/‖h‖² along a fixed direction.
    KlScan(ScanArgs),
}

#[derive(clap::Args)]
struct ScanArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `outputs.csv`.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Overrides `outputs.summary`.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProbeKind {
    DiluteLb,
    Adversarial,
    Uup,
    Lambda,
    ModerateLb,
    Sandwich,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(p: &Path) -> Result<T> {
    let s = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    serde_json::from_str(&s).with_context(|| format!("parsing {}", p.display()))
}

fn read_signal(p: &Path) -> Result<Signal> {
    Ok(SignalRecord::parse(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, format!("{text}\n")).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn read_dataset(p: &Path, group: GroupConfig) -> Result<mra::Dataset> {
    let mut f = BufReader::new(File::open(p).with_context(|| format!("opening {}", p.display()))?);
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    if bytes.starts_with(io::MAGIC) {
        Ok(io::read_binary(&bytes[..], group)?)
    } else {
        Ok(io::read_csv(&bytes[..])?)
    }
}

fn read_power_csv(p: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    let mut pairs = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (i, v) = line.split_once(',').with_context(|| format!("line {}: expected index,value", k + 1))?;
        match (i.trim().parse::<i64>(), v.trim().parse::<f64>()) {
            (Ok(i), Ok(v)) => pairs.push((i, v)),
            _ if k == 0 => continue,
            _ => bail!("line {}: cannot parse {line:?}", k + 1),
        }
    }
    let l = pairs.len();
    if l == 0 {
        bail!("empty power spectrum");
    }
    let mut p = vec![f64::NAN; l];
    for (i, v) in pairs {
        p[ring::slot(i, l)] = v;
    }
    if p.iter().any(|x| x.is_nan()) {
        bail!("power spectrum does not cover every frequency of Z_{l}");
    }
    Ok(p)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Simulate { l, sigma, n, signal, seed, group, format, out } => {
            let theta = read_signal(&signal)?;
            if let Some(l) = l {
                if l != theta.len() {
                    bail!("--L {l} does not match the signal length {}", theta.len());
                }
            }
            let cfg = MraConfig::new(theta.len(), sigma, group.into())?;
            let data = mra::simulate(&theta, &cfg, n, &mut rng::stream(seed, 0))?;
            let mut w = BufWriter::new(File::create(&out).with_context(|| format!("creating {}", out.display()))?);
            match format {
                DataFormat::Bin => io::write_binary(&data, &mut w)?,
                DataFormat::Csv => io::write_csv(&data, &mut w)?,
            }
            w.flush()?;
            Ok(true)
        }
        Cmd::Estimate { data, group, class, init, pipeline, max_iters, tol, out, diagnostics } => {
            let data = read_dataset(&data, group.into())?;
            let opts = EmOptions { max_iters, tol, check_monotone: false };
            let fit = match (init, pipeline) {
                (_, Some(hint)) => {
                    let hint: DiluteClassSpec = read_json(&hint)?;
                    EmFit::from_pipeline(&data, &hint, &RecoveryOptions::estimated(), &opts)?
                }
                (Some(init), None) => {
                    let init = read_signal(&init)?;
                    let class: RestrictedClass = match class {
                        Some(p) => read_json(&p)?,
                        None => RestrictedClass::None,
                    };
                    mra::em_restricted_mle(&data, &class, &init, &opts)?
                }
                (None, None) => bail!("give --init or --pipeline"),
            };
            emit(out.as_deref(), &SignalRecord::to_json(&fit.theta))?;
            let diag = serde_json::to_string_pretty(&fit.diagnostics)?;
            match diagnostics {
                Some(p) => emit(Some(&p), &diag)?,
                None => eprintln!("{diag}"),
            }
            Ok(true)
        }
        Cmd::BeltwaySolve { profile, s, budget } => {
            let d: DifferenceProfile = read_json(&profile)?;
            let s = match s.or_else(|| d.implied_size()) {
                Some(s) => s,
                None => bail!("profile total is not s(s−1) for any s; pass --s"),
            };
            let sols = beltway::solve_beltway(&d, s, budget)?;
            println!("{}", serde_json::to_string_pretty(&json!({ "L": d.l(), "s": s, "solutions": sols }))?);
            Ok(true)
        }
        Cmd::PrRecover { power, hint, tol, threshold } => {
            let p = read_power_csv(&power)?;
            let hint: DiluteClassSpec = read_json(&hint)?;
            let opts = RecoveryOptions { tol, threshold, ..RecoveryOptions::default() };
            let cands = beltway::recover_candidates(&p, &hint, &opts)?;
            let out: Vec<_> = cands
                .iter()
                .map(|c| json!({ "signal": SignalRecord::from_signal(&c.signal), "residual": c.residual }))
                .collect();
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(true)
        }
        Cmd::Probe { which, config, out } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let (report, pass) = run_probe(which, &text)?;
            emit(out.as_deref(), &serde_json::to_string_pretty(&report)?)?;
            Ok(pass)
        }
        Cmd::RateScan(a) => scan(a, experiments::run_rate_scan),
        Cmd::SparsityScan(a) => scan(a, experiments::run_sparsity_scan),
        Cmd::KlScan(a) => scan(a, experiments::run_kl_curvature_scan),
    }
}

fn scan(a: ScanArgs, f: fn(&ExperimentConfig) -> mra_core::Result<ExperimentResult>) -> Result<bool> {
    let text = fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    let res = f(&cfg)?;
    if a.csv.is_some() {
        cfg.outputs.csv = a.csv;
    }
    if a.summary.is_some() {
        cfg.outputs.summary = a.summary;
    }
    res.write_outputs(&cfg.outputs)?;
    if cfg.outputs.summary.is_none() {
        println!("{}", res.summary_json()?);
    }
    Ok(res.pass)
}

fn default_slack() -> f64 {
    0.05
}

fn default_linear_tol() -> f64 {
    1e-8
}

fn default_zeta() -> f64 {
    1.0
}

#[derive(Serialize, Deserialize)]
struct DiluteLbConfig {
    seed: u64,
    spec: DiluteClassSpec,
    #[serde(default)]
    signal: Option<SignalRecord>,
    trials: usize,
    #[serde(default)]
    h_norm: Option<f64>,
    #[serde(default = "default_slack")]
    slack: f64,
}

#[derive(Serialize, Deserialize)]
struct AdversarialConfig {
    seed: u64,
    /// Full-support signal; a Gaussian one of length `L` when absent.
    #[serde(default)]
    signal: Option<SignalRecord>,
    #[serde(default, rename = "L")]
    l: Option<usize>,
    delta: f64,
    #[serde(default = "default_linear_tol")]
    linear_tol: f64,
}

#[derive(Serialize, Deserialize)]
struct UupConfig {
    seed: u64,
    #[serde(rename = "L")]
    l: usize,
    a: f64,
    s: usize,
    trials: usize,
}

#[derive(Serialize, Deserialize)]
struct LambdaConfig {
    seed: u64,
    /// Symmetric signal; a symmetric Bernoulli–Gaussian draw of length `L` when absent.
    #[serde(default)]
    signal: Option<SignalRecord>,
    #[serde(default, rename = "L")]
    l: Option<usize>,
    s: usize,
    a: f64,
    #[serde(default = "default_zeta")]
    zeta: f64,
    #[serde(default)]
    max_tries: Option<usize>,
    #[serde(default)]
    floor: Option<f64>,
    #[serde(default)]
    uup_trials: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct ModerateConfig {
    #[serde(flatten)]
    lambda: LambdaConfig,
    trials: usize,
    h_norm: f64,
    #[serde(default = "default_slack")]
    slack: f64,
}

#[derive(Serialize, Deserialize)]
struct SandwichConfig {
    seed: u64,
    theta: SignalRecord,
    phi: SignalRecord,
    sigma: Vec<f64>,
    n_mc: usize,
}

fn parse<T: for<'de> Deserialize<'de> + Serialize>(text: &str) -> Result<(T, String)> {
    let cfg: T = serde_json::from_str(text).context("parsing probe config")?;
    let hash = hash_json(&cfg);
    Ok((cfg, hash))
}

fn lambda_signal(c: &LambdaConfig, r: &mut Rng) -> Result<Signal> {
    match (&c.signal, c.l) {
        (Some(rec), _) => Ok(rec.to_signal()?),
        (None, Some(l)) => Ok(experiments::make_signal(&SignalSpec::SymmetricBg { zeta: c.zeta }, l, c.s, r)?),
        (None, None) => bail!("give \"signal\" or \"L\""),
    }
}

fn lambda_options(c: &LambdaConfig) -> LambdaOptions {
    let d = LambdaOptions::default();
    LambdaOptions {
        max_tries: c.max_tries.unwrap_or(d.max_tries),
        floor: c.floor,
        uup_trials: c.uup_trials.unwrap_or(d.uup_trials),
        ..d
    }
}

fn wrap(name: &str, seed: u64, hash: String, report: serde_json::Value) -> serde_json::Value {
    json!({ "probe": name, "seed": seed, "config_hash": hash, "report": report })
}

fn run_probe(which: ProbeKind, text: &str) -> Result<(serde_json::Value, bool)> {
    Ok(match which {
        ProbeKind::DiluteLb => {
            let (c, hash) = parse::<DiluteLbConfig>(text)?;
            let mut r = rng::stream(c.seed, 0);
            let theta = match &c.signal {
                Some(rec) => rec.to_signal()?,
                None => gensig::gen_collision_free(&c.spec, &mut r)?,
            };
            let rep = probes::dilute_lower_bound_check(&theta, &c.spec, c.trials, c.h_norm, c.slack, &mut r)?;
            let pass = rep.pass;
            let mut v = serde_json::to_value(&rep)?;
            v["signal"] = serde_json::to_value(SignalRecord::from_signal(&theta))?;
            (wrap("dilute-lb", c.seed, hash, v), pass)
        }
        ProbeKind::Adversarial => {
            let (c, hash) = parse::<AdversarialConfig>(text)?;
            let mut r = rng::stream(c.seed, 0);
            let theta = match (&c.signal, c.l) {
                (Some(rec), _) => rec.to_signal()?,
                (None, Some(l)) => experiments::make_signal(&SignalSpec::FullSupport { zeta: 1.0, center: false }, l, 0, &mut r)?,
                (None, None) => bail!("give \"signal\" or \"L\""),
            };
            let rep = probes::adversarial_check(&theta, c.delta, c.linear_tol)?;
            let h = probes::adversarial_direction(&theta, c.delta)?.h;
            let pass = rep.pass;
            let mut v = serde_json::to_value(&rep)?;
            v["h"] = json!(h.values());
            (wrap("adversarial", c.seed, hash, v), pass)
        }
        ProbeKind::Uup => {
            let (c, hash) = parse::<UupConfig>(text)?;
            let mut r = rng::stream(c.seed, 0);
            let mut set = probes::uup_sample(c.l, c.a, &mut r)?;
            let (c1, c2) = probes::uup_check(&set, c.s, c.trials, &mut r)?;
            set.c1_hat = Some(c1);
            set.c2_hat = Some(c2);
            (wrap("uup", c.seed, hash, serde_json::to_value(&set)?), true)
        }
        ProbeKind::Lambda => {
            let (c, hash) = parse::<LambdaConfig>(text)?;
            let mut r = rng::stream(c.seed, 0);
            let theta = lambda_signal(&c, &mut r)?;
            match probes::lambda_construct(&theta, c.s, c.a, &lambda_options(&c), &mut r) {
                Ok(set) => (wrap("lambda", c.seed, hash, serde_json::to_value(&set)?), true),
                Err(e @ mra_core::MraError::LambdaConstruction { .. }) => {
                    (wrap("lambda", c.seed, hash, json!({ "error": e.to_string() })), false)
                }
                Err(e) => return Err(e.into()),
            }
        }
        ProbeKind::ModerateLb => {
            let (c, hash) = parse::<ModerateConfig>(text)?;
            let mut r = rng::stream(c.lambda.seed, 0);
            let theta = lambda_signal(&c.lambda, &mut r)?;
            let set: FrequencySet = probes::lambda_construct(&theta, c.lambda.s, c.lambda.a, &lambda_options(&c.lambda), &mut r)?;
            let rep = probes::moderate_curvature_check(&theta, &set, c.trials, c.h_norm, c.slack, &mut r)?;
            let pass = rep.pass;
            let v = json!({ "frequency_set": set, "check": rep });
            (wrap("moderate-lb", c.lambda.seed, hash, v), pass)
        }
        ProbeKind::Sandwich => {
            let (c, hash) = parse::<SandwichConfig>(text)?;
            let mut r = rng::stream(c.seed, 0);
            let rep = probes::moment_sandwich_probe(&c.theta.to_signal()?, &c.phi.to_signal()?, &c.sigma, c.n_mc, &mut r)?;
            let pass = rep.pass;
            (wrap("sandwich", c.seed, hash, serde_json::to_value(&rep)?), pass)
        }
    })
}
