//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line with the
//! measured quantity next to its pinned tolerance, then asserts.
//!
//! Run with `cargo test -p mra-core --test acceptance -- --nocapture` to see the lines.
//! Criterion 8 is long-running and ignored by default (`-- --ignored`).

use std::collections::BTreeSet;

use mra_core::beltway::{self, brute_force_beltway, canonical_support, solve_beltway, RecoveryOptions, DEFAULT_BUDGET};
use mra_core::experiments::{self, ExperimentConfig};
use mra_core::gensig::{self, difference_multiset, DiluteClassSpec};
use mra_core::probes::{self, FrequencySet};
use mra_core::ring::{self, GroupConfig, Signal};
use mra_core::rng::stream;
use mra_core::spectral;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn line(n: u32, pass: bool, what: &str) {
    println!("criterion {n}: {} {what}", if pass { "PASS" } else { "FAIL" });
}

fn gaussian(l: usize, r: &mut mra_core::rng::Rng) -> Signal {
    Signal::new((0..l).map(|_| StandardNormal.sample(r)).collect()).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// 8-sparse class on Z_101 used by criteria 3 and 7.
fn dilute_101() -> DiluteClassSpec {
    let (s, m, big_m) = (8, 1.0, 1.5);
    DiluteClassSpec { l: 101, s, m, big_m, eps: DiluteClassSpec::max_eps(s, m, big_m) }
}

#[test]
fn criterion_01_spectral_identities() {
    const TOL: f64 = 1e-10;
    let mut r = stream(101, 0);
    let mut worst: f64 = 0.0;
    for l in [4usize, 5, 16, 21, 64] {
        for _ in 0..20 {
            let (u, v) = (gaussian(l, &mut r), gaussian(l, &mut r));
            let (fu, fv) = (spectral::dft(&u), spectral::dft(&v));
            let parseval: f64 = fu.values().iter().map(|z| z.norm_sqr()).sum();
            worst = worst.max(rel(parseval, l as f64 * u.norm_sq()));
            // Oracle: direct O(L²) circular convolution in group order.
            let (ug, vg) = (u.to_group_order(), v.to_group_order());
            let direct: Vec<f64> = (0..l).map(|k| (0..l).map(|g| ug[g] * vg[(k + l - g) % l]).sum()).collect();
            let conv = Signal::from_group_order(&direct).unwrap();
            let fc = spectral::dft(&conv);
            let scale = fu.values().iter().zip(fv.values()).map(|(a, b)| (a * b).norm()).fold(0.0, f64::max);
            for ((c, a), b) in fc.values().iter().zip(fu.values()).zip(fv.values()) {
                worst = worst.max((c - a * b).norm() / scale);
            }
            let (mu, mv) = (spectral::toeplitz(&u), spectral::toeplitz(&v));
            worst = worst.max(rel(mu.norm(), (l as f64).sqrt() * u.norm()));
            let tr = (&mu * mv.transpose()).trace();
            worst = worst.max((tr - l as f64 * u.dot(&v).unwrap()).abs() / (l as f64 * u.norm() * v.norm()));
        }
    }
    let pass = worst <= TOL;
    line(1, pass, &format!("spectral identities, max relative error {worst:.2e} ≤ {TOL:.0e}"));
    assert!(pass);
}

#[test]
fn criterion_02_second_moment_oracle() {
    const TOL: f64 = 1e-12;
    let mut r = stream(102, 0);
    let mut worst: f64 = 0.0;
    for l in [4usize, 5, 16, 21, 64] {
        for _ in 0..100 {
            let t = gaussian(l, &mut r);
            let mut brute = DMatrix::<f64>::zeros(l, l);
            for g in 0..l as i64 {
                let s = ring::shift(&t, g);
                let v = nalgebra::DVector::from_column_slice(s.values());
                brute += &v * v.transpose();
            }
            brute /= l as f64;
            let analytic = spectral::second_moment(&t).to_dense().unwrap();
            worst = worst.max((analytic - &brute).norm() / brute.norm());
        }
    }
    let pass = worst <= TOL;
    line(2, pass, &format!("(1/L)M(θ∗θ̌) vs shift average, max relative error {worst:.2e} ≤ {TOL:.0e}"));
    assert!(pass);
}

#[test]
fn criterion_03_dilute_curvature_bound() {
    let spec = dilute_101();
    let mut r = stream(103, 0);
    let theta0 = gensig::gen_collision_free(&spec, &mut r).unwrap();
    let rep = probes::dilute_lower_bound_check(&theta0, &spec, 1000, None, 0.05, &mut r).unwrap();
    line(
        3,
        rep.pass,
        &format!(
            "dilute bound L=101 s=8 ε={:.3}: min ratio {:.4} ≥ 0.95·{:.4}; sensitivity {:?}",
            spec.eps, rep.min_ratio, rep.bound, rep.sensitivity
        ),
    );
    // Control: symmetric values on a support with repeated differences and an antisymmetric h.
    let ctrl = Signal::from_entries(101, &[(-2, 1.0), (-1, 1.0), (0, 1.0), (1, 1.0), (2, 1.0)]).unwrap();
    let st = probes::normalized_ratio(&ctrl, probes::Direction::SupportAntisymmetric, 200, 1e-3, &mut r).unwrap();
    println!("criterion 3 control: repeated-difference support, antisymmetric h, min ratio {:.2e}", st.min);
    assert!(st.min < rep.bound * 0.95);
    assert!(rep.pass);
}

#[test]
fn criterion_04_adversarial_direction() {
    let mut r = stream(104, 0);
    let mut worst_lin: f64 = 0.0;
    let mut all = true;
    let mut worst_mean: f64 = 0.0;
    for l in [8usize, 17, 64] {
        for _ in 0..100 {
            let t = gaussian(l, &mut r);
            let rep = probes::adversarial_check(&t, 1e-3, 1e-8).unwrap();
            worst_lin = worst_lin.max(rep.linear_relative);
            worst_mean = worst_mean.max(rep.h_mean.abs() / rep.h_norm);
            all &= rep.pass;
        }
    }
    line(
        4,
        all,
        &format!("adversarial h: linear term ≤ {worst_lin:.2e} (tol 1e-8), |h̄|/‖h‖ ≤ {worst_mean:.1e}, ‖Δ₂‖_F ≤ L‖h‖² in all 300 cases"),
    );
    assert!(all);
}

fn kl_scan(signal: &str, direction: &str) -> experiments::ExperimentResult {
    let cfg = ExperimentConfig::from_json(&format!(
        r#"{{"schema":1,"scenario":"kl-curvature-scan","seed":105,"trials":1,"L":[8],"sigma":[2.0,4.0,8.0],
            "signal":{signal},"kl":{{"n_mc":1000000,"h_norm":0.001,"direction":"{direction}"}}}}"#
    ))
    .unwrap();
    experiments::run_kl_curvature_scan(&cfg).unwrap()
}

#[test]
fn criterion_05_kl_sigma_dichotomy() {
    let dilute = kl_scan(
        r#"{"kind":"explicit","signal":{"L":8,"format":"standard-parametrization","support":[0,1,3],"values":[1.0,-1.1,1.15]}}"#,
        "in-class",
    );
    let adv = kl_scan(
        r#"{"kind":"explicit","signal":{"L":8,"format":"standard-parametrization","support":[-3,-2,-1,0,1,2,3,4],"values":[0.9,-1.3,0.4,1.7,-0.6,1.1,0.8,-1.5]}}"#,
        "adversarial",
    );
    let d = dilute.fits[0].slope.unwrap();
    let a = adv.fits[0].slope.unwrap();
    let pass_d = (-4.6..=-3.4).contains(&d);
    let pass_a = (-6.8..=-5.2).contains(&a);
    for (name, res) in [("in-class", &dilute), ("adversarial", &adv)] {
        for rec in &res.records {
            println!("criterion 5 {name}: σ={} KL/‖h‖²={:.4e} ± {:.1e}", rec.sigma, rec.value, rec.std_error);
        }
    }
    line(
        5,
        pass_d && pass_a,
        &format!("KL curvature exponents: in-class {d:.3} ∈ [−4.6, −3.4], adversarial {a:.3} ∈ [−6.8, −5.2]"),
    );
    assert!(pass_d && pass_a);
}

/// Translation classes of `s`-sets containing 0 inside `{0} ∪ D`, canonicalized.
fn anchored_oracle(support: &[i64], l: usize) -> BTreeSet<Vec<i64>> {
    let target = difference_multiset(support, l);
    let s = support.len();
    let mut diffs: BTreeSet<usize> = BTreeSet::new();
    for &a in support {
        for &b in support {
            if a != b {
                diffs.insert(ring::residue(a - b, l));
            }
        }
    }
    let pool: Vec<usize> = diffs.into_iter().collect();
    let mut out = BTreeSet::new();
    let k = s - 1;
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let mut cand: Vec<i64> = vec![0];
        cand.extend(idx.iter().map(|&i| pool[i] as i64));
        if difference_multiset(&cand, l) == target {
            out.insert(canonical_support(&cand, l));
        }
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] < pool.len() - k + i {
                break;
            }
            if i == 0 && idx[0] >= pool.len() - k {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[test]
fn criterion_06_beltway_solver() {
    let mut r = stream(106, 0);
    let mut agree = 0;
    for _ in 0..500 {
        let l = r.random_range(2..=16usize);
        let s = r.random_range(1..=4usize.min(l));
        let supp = gensig::random_support(l, s, &mut r);
        let d = difference_multiset(&supp, l);
        let fast = solve_beltway(&d, s, DEFAULT_BUDGET).unwrap();
        let slow = brute_force_beltway(&d, s);
        if fast == slow && fast.contains(&canonical_support(&supp, l)) {
            agree += 1;
        }
    }
    let max24 = beltway::max_collision_free_size(24).unwrap();
    println!("criterion 6: largest collision-free subset of Z_24 has size {max24}; s=7 at L=24 is vacuous");
    let l = 64;
    let mut unique = 0;
    let instances = 3;
    for _ in 0..instances {
        let (supp, _) = gensig::collision_free_support(l, 7, &mut r).unwrap();
        let d = difference_multiset(&supp, l);
        let fast: BTreeSet<Vec<i64>> = solve_beltway(&d, 7, DEFAULT_BUDGET).unwrap().into_iter().collect();
        let oracle = anchored_oracle(&supp, l);
        if fast.len() == 1 && fast == oracle && fast.contains(&canonical_support(&supp, l)) {
            unique += 1;
        }
    }
    let pass = agree == 500 && max24 < 7 && unique == instances;
    line(
        6,
        pass,
        &format!("beltway: {agree}/500 agree with exhaustive oracle (L≤16, s≤4); L=24 s=7 vacuous; L=64 s=7 unique orbit {unique}/{instances}"),
    );
    assert!(pass);
}

#[test]
fn criterion_07_phase_retrieval() {
    let spec = dilute_101();
    let mut r = stream(107, 0);
    let mut exact_ok = 0;
    let mut noisy_ok = 0;
    let mut worst_res: f64 = 0.0;
    let mut worst_noisy: f64 = 0.0;
    let noisy_opts = RecoveryOptions { tol: 1e-4, ..RecoveryOptions::default() };
    for _ in 0..200 {
        let theta = gensig::gen_collision_free(&spec, &mut r).unwrap();
        let p = spectral::power_spectrum(&theta);
        let cands = beltway::recover_candidates(&p, &spec, &RecoveryOptions::default()).unwrap();
        let hit = cands.iter().find(|c| ring::rho_signed(&c.signal, &theta, GroupConfig::dihedral()).unwrap() <= 1e-8 * theta.norm());
        if let Some(c) = hit {
            worst_res = worst_res.max(c.residual);
            if c.residual <= 1e-8 {
                exact_ok += 1;
            }
        }
        let pn: Vec<f64> = p.iter().map(|&x| { let z: f64 = StandardNormal.sample(&mut r); x * (1.0 + 1e-6 * z) }).collect();
        let best = beltway::recover_from_power_spectrum(&pn, &spec, &noisy_opts)
            .unwrap_or_default()
            .iter()
            .map(|c| ring::rho_signed(c, &theta, GroupConfig::dihedral()).unwrap() / (101f64).sqrt())
            .fold(f64::INFINITY, f64::min);
        worst_noisy = worst_noisy.max(best);
        if best <= 1e-4 {
            noisy_ok += 1;
        }
    }
    let pass = exact_ok == 200 && noisy_ok == 200;
    line(
        7,
        pass,
        &format!(
            "phase retrieval L=101 s=8: exact {exact_ok}/200 (max residual {worst_res:.1e} ≤ 1e-8); 1e-6 noise {noisy_ok}/200 (max ϱ {worst_noisy:.1e} ≤ 1e-4)"
        ),
    );
    assert!(pass);
}

#[test]
#[ignore = "long-running EM rate scan (tens of minutes to hours)"]
fn criterion_08_em_rate_scan() {
    let cfg = ExperimentConfig::from_json(
        r#"{"schema":1,"scenario":"dilute-rate","seed":108,"trials":20,"L":[21],"sigma":[1.0,2.0,4.0],
            "n_rule":{"kind":"sigma-power","c":40000.0,"power":4.0},
            "signal":{"kind":"dilute","m":1.0,"M":1.2,"support":[3,6,7,12,14]},
            "estimator":{"init":"pipeline"}}"#,
    )
    .unwrap();
    let res = experiments::run_rate_scan(&cfg).unwrap();
    let f = &res.fits[0];
    let slope = f.slope.unwrap();
    let pass = (1.6..=2.6).contains(&slope) && res.failure_rate <= 0.1;
    line(
        8,
        pass,
        &format!("EM rate scan L=21: σ-exponent {slope:.3} ∈ [1.6, 2.6], CI {:?}, failure rate {:.2}", f.ci, res.failure_rate),
    );
    assert!(pass);
}

#[test]
fn criterion_09_cosine_genericity() {
    let interval: Vec<i64> = (-32..=32).collect();
    let det = gensig::check_cosine_generic(&interval, 2.0, 4096);
    let mut r = stream(109, 0);
    let s = 64.0;
    let mut generic = 0;
    let mut draws = 0;
    for _ in 0..200 {
        let d = gensig::gen_symm_bernoulli_gaussian(4096, s, 1.0, &mut r).unwrap();
        let supp = d.signal.support();
        draws += 1;
        if !supp.is_empty() && gensig::check_cosine_generic(&supp, s / 32.0, 4096).generic {
            generic += 1;
        }
    }
    let rate = generic as f64 / draws as f64;
    let pass = det.generic && rate >= 0.95;
    line(
        9,
        pass,
        &format!("cosine functional: Ξ=[−32,32] min V = {:.4} ≥ 2; Bernoulli s=64 min V ≥ 2 in {:.1}% ≥ 95%", det.min_value, 100.0 * rate),
    );
    assert!(pass);
}

#[test]
fn criterion_10_uup() {
    let mut r = stream(110, 0);
    let mut exact = true;
    for l in [16usize, 64, 512] {
        for s in [1usize, 4, 8] {
            exact &= probes::uup_check(&FrequencySet::full(l), s, 200, &mut r).unwrap() == (1.0, 1.0);
        }
    }
    let set = probes::uup_sample(512, 256.0, &mut r).unwrap();
    let (c1, c2) = probes::uup_check(&set, 8, 10_000, &mut r).unwrap();
    let pass = exact && c1 >= 0.05 && c2 <= 20.0;
    line(
        10,
        pass,
        &format!("UUP: Λ=Z_L ratio ≡ 1 exactly: {exact}; L=512 a=256 |Λ|={} s=8: c1_hat {c1:.3} ≥ 0.05, c2_hat {c2:.3} ≤ 20", set.len()),
    );
    assert!(pass);
}

#[test]
fn criterion_11_collision_free_scaling() {
    let ss: Vec<usize> = (4..=12).collect();
    let rep = experiments::collision_free_scan(&[128, 256, 512], &ss, 200_000, 20, 20, 111).unwrap();
    let r2 = rep.fit.map_or(f64::NAN, |f| f.r_squared);
    let r2q = rep.fit_quartic.map_or(f64::NAN, |f| f.r_squared);
    let pass = r2 >= 0.9 && rep.max_sizes_ok;
    for c in &rep.cells {
        println!("criterion 11 cell: L={} s={} p={:.3e} ({} hits)", c.l, c.s, c.p, c.hits);
    }
    line(
        11,
        pass,
        &format!(
            "log P[collision-free] vs s³/L: R² {r2:.3} ≥ 0.9 over {} cells ({} excluded with < 20 hits; s⁴/L fit R² {r2q:.3}); exact max sizes L ≤ 20 obey s(s−1) ≤ L−1: {}",
            rep.cells.len() - rep.excluded.len(),
            rep.excluded.len(),
            rep.max_sizes_ok
        ),
    );
    assert!(pass);
}
