//! Index arithmetic on Z_L, the cyclic/dihedral group action and orbit distances.
//!
//! Signals are stored in the standard parametrization: position `a` of the
//! value vector holds index `lo(L) + a` with `lo(L) = -floor((L-1)/2)`.
//! Group order (`i mod L`) is used internally for transforms.

use serde::{Deserialize, Serialize};

use crate::error::{MraError, Result};
use crate::spectral::Correlator;

/// Smallest index of the standard parametrization.
pub fn lo(l: usize) -> i64 {
    -(((l as i64) - 1) / 2)
}

/// Largest index of the standard parametrization.
pub fn hi(l: usize) -> i64 {
    lo(l) + l as i64 - 1
}

/// Reduce any integer to its standard label in `[lo, hi]`.
pub fn canon(i: i64, l: usize) -> i64 {
    let lo = lo(l);
    (i - lo).rem_euclid(l as i64) + lo
}

/// Residue of `i` in `0..L`.
pub fn residue(i: i64, l: usize) -> usize {
    i.rem_euclid(l as i64) as usize
}

/// Position of index `i` in the standard-order value vector.
pub fn slot(i: i64, l: usize) -> usize {
    (i - lo(l)).rem_euclid(l as i64) as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    values: Vec<f64>,
}

impl Signal {
    /// Builds a signal from values listed in standard order.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(MraError::Empty("signal"));
        }
        Ok(Signal { values })
    }

    pub fn zeros(l: usize) -> Self {
        Signal {
            values: vec![0.0; l.max(1)],
        }
    }

    /// Builds a signal from values listed in group order (residues 0..L).
    pub fn from_group_order(g: &[f64]) -> Result<Self> {
        let l = g.len();
        if l == 0 {
            return Err(MraError::Empty("signal"));
        }
        let lo = lo(l);
        let values = (0..l).map(|a| g[residue(lo + a as i64, l)]).collect();
        Ok(Signal { values })
    }

    /// Builds a signal from `(index, value)` pairs; indices may be any integer.
    pub fn from_entries(l: usize, entries: &[(i64, f64)]) -> Result<Self> {
        if l == 0 {
            return Err(MraError::Empty("signal"));
        }
        let mut s = Signal::zeros(l);
        for &(i, v) in entries {
            s.values[slot(i, l)] = v;
        }
        Ok(s)
    }

    pub fn delta(l: usize, at: i64) -> Self {
        let mut s = Signal::zeros(l);
        s.values[slot(at, l)] = 1.0;
        s
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Standard labels in the order of `values()`.
    pub fn indices(&self) -> impl Iterator<Item = i64> {
        let lo = lo(self.len());
        (0..self.len() as i64).map(move |a| lo + a)
    }

    pub fn get(&self, i: i64) -> f64 {
        self.values[slot(i, self.len())]
    }

    pub fn set(&mut self, i: i64, v: f64) {
        let l = self.len();
        self.values[slot(i, l)] = v;
    }

    pub fn to_group_order(&self) -> Vec<f64> {
        let l = self.len();
        let mut g = vec![0.0; l];
        for (i, &v) in self.indices().zip(&self.values) {
            g[residue(i, l)] = v;
        }
        g
    }

    /// Indices with nonzero value, ascending in standard order.
    pub fn support(&self) -> Vec<i64> {
        self.indices()
            .zip(&self.values)
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    pub fn dot(&self, other: &Signal) -> Result<f64> {
        check_len(self, other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    pub fn add(&self, other: &Signal) -> Result<Signal> {
        check_len(self, other)?;
        Ok(Signal {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Signal) -> Result<Signal> {
        check_len(self, other)?;
        Ok(Signal {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn scale(&self, c: f64) -> Signal {
        Signal {
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    /// The signal minus its mean, θ̃ = θ − θ̄𝟙.
    pub fn centered(&self) -> Signal {
        let m = self.mean();
        Signal {
            values: self.values.iter().map(|v| v - m).collect(),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.indices().all(|i| self.get(i) == self.get(-i))
    }
}

pub(crate) fn check_len(a: &Signal, b: &Signal) -> Result<()> {
    if a.len() != b.len() {
        return Err(MraError::LengthMismatch(a.len(), b.len()));
    }
    Ok(())
}

/// `[g·v](i) = v(i+g)`.
pub fn shift(v: &Signal, g: i64) -> Signal {
    let l = v.len();
    let lo = lo(l);
    let values = (0..l as i64).map(|a| v.get(lo + a + g)).collect();
    Signal { values }
}

/// `output(i) = v(−i)`.
pub fn reflect(v: &Signal) -> Signal {
    let l = v.len();
    let lo = lo(l);
    let values = (0..l as i64).map(|a| v.get(-(lo + a))).collect();
    Signal { values }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupConfig {
    #[serde(default)]
    pub dihedral: bool,
}

impl GroupConfig {
    pub fn cyclic() -> Self {
        GroupConfig { dihedral: false }
    }

    pub fn dihedral() -> Self {
        GroupConfig { dihedral: true }
    }

    pub fn order(&self, l: usize) -> usize {
        if self.dihedral {
            2 * l
        } else {
            l
        }
    }

    /// All group elements, shifts first then (if enabled) reflected shifts.
    pub fn elements(&self, l: usize) -> Vec<GroupElement> {
        let mut out: Vec<GroupElement> = (0..l)
            .map(|g| GroupElement { shift: g, flip: false })
            .collect();
        if self.dihedral {
            out.extend((0..l).map(|g| GroupElement { shift: g, flip: true }));
        }
        out
    }

    pub fn element_at(&self, l: usize, k: usize) -> GroupElement {
        GroupElement {
            shift: k % l,
            flip: k >= l,
        }
    }
}

/// Acts as `v ↦ shift(flip? reflect(v) : v, shift)`, i.e. `(Gv)(i) = v(±(i+g))`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupElement {
    pub shift: usize,
    pub flip: bool,
}

impl GroupElement {
    pub fn identity() -> Self {
        GroupElement::default()
    }

    pub fn apply(&self, v: &Signal) -> Signal {
        if self.flip {
            shift(&reflect(v), self.shift as i64)
        } else {
            shift(v, self.shift as i64)
        }
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &GroupElement, l: usize) -> GroupElement {
        let s = if self.flip { -1 } else { 1 };
        let g = self.shift as i64 + s * other.shift as i64;
        GroupElement {
            shift: residue(g, l),
            flip: self.flip ^ other.flip,
        }
    }

    pub fn inverse(&self, l: usize) -> GroupElement {
        if self.flip {
            *self
        } else {
            GroupElement {
                shift: residue(-(self.shift as i64), l),
                flip: false,
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrbitMatch {
    pub distance: f64,
    pub element: GroupElement,
}

/// ρ(θ, φ) = min_G ‖θ − Gφ‖ together with the minimizing element.
pub fn rho(theta: &Signal, phi: &Signal, group: GroupConfig) -> Result<OrbitMatch> {
    check_len(theta, phi)?;
    let l = theta.len();
    let corr = Correlator::new(&phi.to_group_order());
    let y = theta.to_group_order();
    let c = corr.inner_products(&y, group);
    let cmax = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = theta.norm() * phi.norm();
    let tol = 1e-9 * scale.max(f64::MIN_POSITIVE);
    let mut best: Option<OrbitMatch> = None;
    for (k, &ck) in c.iter().enumerate() {
        if ck < cmax - tol {
            continue;
        }
        let element = group.element_at(l, k);
        let d = theta.sub(&element.apply(phi))?.norm();
        if best.map_or(true, |b| d < b.distance) {
            best = Some(OrbitMatch { distance: d, element });
        }
    }
    Ok(best.expect("group is nonempty"))
}

/// ϱ = ρ/√L.
pub fn varrho(theta: &Signal, phi: &Signal, group: GroupConfig) -> Result<f64> {
    Ok(rho(theta, phi, group)?.distance / (theta.len() as f64).sqrt())
}

/// ρ over the group extended by a global sign flip; the power spectrum cannot see sign.
pub fn rho_signed(theta: &Signal, phi: &Signal, group: GroupConfig) -> Result<f64> {
    let a = rho(theta, phi, group)?.distance;
    let b = rho(theta, &phi.scale(-1.0), group)?.distance;
    Ok(a.min(b))
}
