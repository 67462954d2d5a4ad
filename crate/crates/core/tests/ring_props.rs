use mra_core::ring::{self, GroupConfig, GroupElement, Signal};
use proptest::prelude::*;

fn signal(max_l: usize) -> impl Strategy<Value = Signal> {
    prop::collection::vec(-5.0f64..5.0, 1..=max_l).prop_map(|v| Signal::new(v).unwrap())
}

fn pair(max_l: usize) -> impl Strategy<Value = (Signal, Signal)> {
    (1..=max_l).prop_flat_map(|l| {
        let v = prop::collection::vec(-5.0f64..5.0, l);
        (v.clone(), v).prop_map(|(a, b)| (Signal::new(a).unwrap(), Signal::new(b).unwrap()))
    })
}

fn group() -> impl Strategy<Value = GroupConfig> {
    prop_oneof![Just(GroupConfig::cyclic()), Just(GroupConfig::dihedral())]
}

/// Oracle: minimum over an explicit list of transformed copies.
fn brute_rho(t: &Signal, p: &Signal, g: GroupConfig) -> f64 {
    g.elements(t.len())
        .iter()
        .map(|e| t.sub(&e.apply(p)).unwrap().norm())
        .fold(f64::INFINITY, f64::min)
}

proptest! {
    #[test]
    fn index_round_trip(l in 1usize..200, i in -1000i64..1000) {
        let c = ring::canon(i, l);
        prop_assert!(ring::lo(l) <= c && c <= ring::hi(l));
        prop_assert_eq!(ring::residue(c, l), ring::residue(i, l));
        prop_assert_eq!(ring::hi(l) - ring::lo(l) + 1, l as i64);
    }

    #[test]
    fn group_order_round_trip(t in signal(40)) {
        let g = t.to_group_order();
        prop_assert_eq!(Signal::from_group_order(&g).unwrap(), t);
    }

    #[test]
    fn rho_matches_brute_force((t, p) in pair(24), g in group()) {
        let fast = ring::rho(&t, &p, g).unwrap().distance;
        let slow = brute_rho(&t, &p, g);
        prop_assert!((fast - slow).abs() <= 1e-9 * (1.0 + slow));
    }

    #[test]
    fn rho_symmetric_and_invariant((t, p) in pair(24), g in group(), k in 0usize..48, flip: bool) {
        let l = t.len();
        let e = GroupElement { shift: k % l, flip: flip && g.dihedral };
        let a = ring::rho(&t, &p, g).unwrap().distance;
        let b = ring::rho(&p, &t, g).unwrap().distance;
        let c = ring::rho(&e.apply(&t), &p, g).unwrap().distance;
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
        prop_assert!((a - c).abs() <= 1e-9 * (1.0 + a));
        prop_assert!(a <= t.sub(&p).unwrap().norm() + 1e-12);
        prop_assert!(ring::rho_signed(&t, &p, g).unwrap() <= a + 1e-12);
    }

    #[test]
    fn rho_of_own_orbit_is_zero(t in signal(30), k in 0usize..64, flip: bool) {
        let e = GroupElement { shift: k % t.len(), flip };
        let d = ring::rho(&e.apply(&t), &t, GroupConfig::dihedral()).unwrap().distance;
        prop_assert!(d <= 1e-9 * (1.0 + t.norm()));
    }

    #[test]
    fn triangle_inequality((a, b) in pair(16), seed in any::<u64>()) {
        let c = b.scale(0.5).add(&a.scale((seed % 7) as f64 / 7.0)).unwrap();
        let g = GroupConfig::cyclic();
        let ab = ring::rho(&a, &b, g).unwrap().distance;
        let bc = ring::rho(&b, &c, g).unwrap().distance;
        let ac = ring::rho(&a, &c, g).unwrap().distance;
        prop_assert!(ac <= ab + bc + 1e-9);
    }

    #[test]
    fn group_law(t in signal(20), s1 in 0usize..40, s2 in 0usize..40, f1: bool, f2: bool) {
        let l = t.len();
        let a = GroupElement { shift: s1 % l, flip: f1 };
        let b = GroupElement { shift: s2 % l, flip: f2 };
        prop_assert_eq!(a.compose(&b, l).apply(&t), a.apply(&b.apply(&t)));
        prop_assert_eq!(a.inverse(l).apply(&a.apply(&t)), t.clone());
        prop_assert_eq!(GroupElement::identity().apply(&t), t);
    }

    #[test]
    fn varrho_scaling((t, p) in pair(20)) {
        let g = GroupConfig::cyclic();
        let r = ring::rho(&t, &p, g).unwrap().distance;
        prop_assert!((ring::varrho(&t, &p, g).unwrap() - r / (t.len() as f64).sqrt()).abs() <= 1e-12 * (1.0 + r));
    }
}

#[test]
fn standard_parametrization_examples() {
    assert_eq!((ring::lo(4), ring::hi(4)), (-1, 2));
    assert_eq!((ring::lo(5), ring::hi(5)), (-2, 2));
    assert_eq!(ring::canon(7, 5), 2);
    assert_eq!(ring::canon(-3, 5), 2);
}

#[test]
fn length_mismatch_is_an_error() {
    let a = Signal::zeros(3);
    let b = Signal::zeros(4);
    assert!(ring::rho(&a, &b, GroupConfig::cyclic()).is_err());
    assert!(a.dot(&b).is_err());
}
