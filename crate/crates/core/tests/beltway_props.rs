use mra_core::beltway::{self, DifferenceProfile, RecoveryOptions};
use mra_core::gensig::{self, DiluteClassSpec};
use mra_core::ring::{self, GroupConfig};
use mra_core::rng::stream;
use mra_core::spectral;
use proptest::prelude::*;
use std::collections::BTreeSet;

/// Independent oracle: every s-subset of Z_L containing 0 with the right
/// profile, reduced to orbit representatives by brute-force minimization.
fn oracle(d: &DifferenceProfile, s: usize) -> BTreeSet<Vec<usize>> {
    let l = d.l();
    let mut out = BTreeSet::new();
    let mut cur = vec![0usize];
    fn rec(l: usize, s: usize, start: usize, cur: &mut Vec<usize>, d: &DifferenceProfile, out: &mut BTreeSet<Vec<usize>>) {
        if cur.len() == s {
            let labels: Vec<i64> = cur.iter().map(|&x| x as i64).collect();
            if gensig::difference_multiset(&labels, l) == *d {
                out.insert(orbit_min(cur, l));
            }
            return;
        }
        for x in start..l {
            cur.push(x);
            rec(l, s, x + 1, cur, d, out);
            cur.pop();
        }
    }
    rec(l, s, 1, &mut cur, d, &mut out);
    out
}

fn orbit_min(set: &[usize], l: usize) -> Vec<usize> {
    let mut best: Option<Vec<usize>> = None;
    for flip in [false, true] {
        for r in 0..l {
            let mut v: Vec<usize> = set.iter().map(|&x| ((if flip { l - x } else { x }) + r) % l).collect();
            v.sort_unstable();
            if best.as_ref().map_or(true, |b| v < *b) {
                best = Some(v);
            }
        }
    }
    best.unwrap()
}

fn solver_orbits(d: &DifferenceProfile, s: usize) -> BTreeSet<Vec<usize>> {
    let l = d.l();
    beltway::solve_beltway(d, s, beltway::DEFAULT_BUDGET)
        .unwrap()
        .into_iter()
        .map(|sol| orbit_min(&sol.iter().map(|&i| ring::residue(i, l)).collect::<Vec<_>>(), l))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solver_matches_exhaustive_search(l in 4usize..19, seed in any::<u64>(), s in 2usize..6) {
        prop_assume!(s < l);
        let supp = gensig::random_support(l, s, &mut stream(seed, 0));
        let d = gensig::difference_multiset(&supp, l);
        let got = solver_orbits(&d, s);
        prop_assert_eq!(&got, &oracle(&d, s));
        let own = orbit_min(&supp.iter().map(|&i| ring::residue(i, l)).collect::<Vec<_>>(), l);
        prop_assert!(got.contains(&own));
    }

    #[test]
    fn canonical_support_is_orbit_invariant(l in 3usize..40, seed in any::<u64>(), r in 0i64..80, flip: bool) {
        let s = (l / 3).max(1);
        let supp = gensig::random_support(l, s, &mut stream(seed, 1));
        let moved: Vec<i64> = supp.iter().map(|&i| ring::canon(if flip { -i } else { i } + r, l)).collect();
        prop_assert_eq!(beltway::canonical_support(&supp, l), beltway::canonical_support(&moved, l));
    }

    #[test]
    fn exact_recovery_from_power_spectrum(seed in any::<u64>(), l in 40usize..120, s in 2usize..5) {
        let spec = DiluteClassSpec { l, s, m: 1.0, big_m: 1.5, eps: 0.1 };
        let theta = gensig::gen_collision_free(&spec, &mut stream(seed, 2)).unwrap();
        let p = spectral::power_spectrum(&theta);
        let sols = beltway::recover_from_power_spectrum(&p, &spec, &RecoveryOptions::default()).unwrap();
        prop_assert!(!sols.is_empty());
        let best = sols.iter()
            .flat_map(|c| [c.clone(), c.scale(-1.0)])
            .map(|c| ring::rho(&c, &theta, GroupConfig::dihedral()).unwrap().distance)
            .fold(f64::INFINITY, f64::min);
        prop_assert!(best <= 1e-8 * theta.norm());
    }
}

#[test]
fn asymmetric_profile_is_rejected() {
    let mut m = std::collections::BTreeMap::new();
    m.insert(1, 1);
    assert!(DifferenceProfile::new(7, &m).is_err());
    m.insert(-1, 1);
    assert!(DifferenceProfile::new(7, &m).is_ok());
    m.insert(0, 1);
    assert!(DifferenceProfile::new(7, &m).is_err());
}
