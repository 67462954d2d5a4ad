//! DFT on Z_L, convolution, Toeplitz lifting and group-averaged moment tensors.
//!
//! Forward transform is unnormalized, `θ̂(ξ) = Σ_k θ(k) e^{−2πiξk/L}`; the inverse
//! carries the `1/L`.

use std::cell::RefCell;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{MraError, Result};
use crate::mra::Dataset;
use crate::ring::{self, check_len, lo, residue, GroupConfig, Signal};

/// Above this length correlations go through the FFT; below it the O(L²) sum is cheaper.
pub const DIRECT_MAX: usize = 64;

/// Largest L for which the brute-force third moment is computed.
pub const THIRD_MOMENT_GUARD: usize = 64;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(l: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(l)
        } else {
            p.plan_fft_forward(l)
        }
    })
}

/// Forward FFT of a group-order buffer, in place.
pub fn fft_in_place(buf: &mut [Complex64]) {
    plan(buf.len(), false).process(buf);
}

/// Inverse FFT of a group-order buffer, in place, including the 1/L factor.
pub fn ifft_in_place(buf: &mut [Complex64]) {
    let l = buf.len();
    plan(l, true).process(buf);
    let inv = 1.0 / l as f64;
    for z in buf.iter_mut() {
        *z *= inv;
    }
}

fn fft_real(g: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = g.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft_in_place(&mut buf);
    buf
}

/// Complex vector on the frequency side, stored in standard order of ξ.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    values: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(values: Vec<Complex64>) -> Result<Self> {
        if values.is_empty() {
            return Err(MraError::Empty("spectrum"));
        }
        Ok(Spectrum { values })
    }

    pub fn from_group_order(g: &[Complex64]) -> Self {
        let l = g.len();
        let lo = lo(l);
        Spectrum {
            values: (0..l).map(|a| g[residue(lo + a as i64, l)]).collect(),
        }
    }

    pub fn to_group_order(&self) -> Vec<Complex64> {
        let l = self.len();
        let lo = lo(l);
        let mut g = vec![Complex64::new(0.0, 0.0); l];
        for (a, &z) in self.values.iter().enumerate() {
            g[residue(lo + a as i64, l)] = z;
        }
        g
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn get(&self, xi: i64) -> Complex64 {
        self.values[ring::slot(xi, self.len())]
    }

    /// Frequencies in the order of `values()`.
    pub fn frequencies(&self) -> impl Iterator<Item = i64> {
        let lo = lo(self.len());
        (0..self.len() as i64).map(move |a| lo + a)
    }
}

pub fn dft(v: &Signal) -> Spectrum {
    Spectrum::from_group_order(&fft_real(&v.to_group_order()))
}

/// Inverse transform keeping complex values, standard order.
pub fn idft_complex(s: &Spectrum) -> Vec<Complex64> {
    let mut g = s.to_group_order();
    ifft_in_place(&mut g);
    Spectrum::from_group_order(&g).values
}

/// Inverse transform; the imaginary part (zero for conjugate-symmetric input) is dropped.
pub fn idft(s: &Spectrum) -> Signal {
    let mut g = s.to_group_order();
    ifft_in_place(&mut g);
    let re: Vec<f64> = g.iter().map(|z| z.re).collect();
    Signal::from_group_order(&re).expect("nonempty")
}

/// `[u∗v](k) = Σ_g u(g) v(k−g)`.
pub fn convolve(u: &Signal, v: &Signal) -> Result<Signal> {
    check_len(u, v)?;
    let l = u.len();
    let (a, b) = (u.to_group_order(), v.to_group_order());
    let out = if l <= DIRECT_MAX {
        let mut out = vec![0.0; l];
        for (g, &ag) in a.iter().enumerate() {
            if ag == 0.0 {
                continue;
            }
            for (k, o) in out.iter_mut().enumerate() {
                *o += ag * b[(k + l - g) % l];
            }
        }
        out
    } else {
        let (fa, fb) = (fft_real(&a), fft_real(&b));
        let mut prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
        ifft_in_place(&mut prod);
        prod.iter().map(|z| z.re).collect()
    };
    Signal::from_group_order(&out)
}

/// Periodic autocorrelation `A(l) = Σ_i θ(i) θ(i+l)`, standard lag order.
pub fn autocorrelation(theta: &Signal) -> Signal {
    let g = theta.to_group_order();
    let c = Correlator::new(&g).inner_products(&g, GroupConfig::cyclic());
    Signal::from_group_order(&c).expect("nonempty")
}

/// `|θ̂(ξ)|²`, standard frequency order.
pub fn power_spectrum(theta: &Signal) -> Vec<f64> {
    dft(theta).values.iter().map(|z| z.norm_sqr()).collect()
}

/// `[M(v)]_{ij} = v(i−j)` with rows and columns in standard order.
pub fn toeplitz(v: &Signal) -> DMatrix<f64> {
    let l = v.len();
    let lo = lo(l);
    DMatrix::from_fn(l, l, |a, b| v.get((lo + a as i64) - (lo + b as i64)))
}

/// Inner products against every group image of a fixed signal, and the adjoint
/// (weighted pull-back) operation used by EM.
///
/// Group elements are ordered as in [`GroupConfig::elements`].
pub struct Correlator {
    phi: Vec<f64>,
    phi_hat: Option<Vec<Complex64>>,
}

impl Correlator {
    /// `phi` in group order.
    pub fn new(phi: &[f64]) -> Self {
        let phi_hat = (phi.len() > DIRECT_MAX).then(|| fft_real(phi));
        Correlator {
            phi: phi.to_vec(),
            phi_hat,
        }
    }

    /// Forces the direct O(L²) route regardless of length.
    pub fn direct(phi: &[f64]) -> Self {
        Correlator {
            phi: phi.to_vec(),
            phi_hat: None,
        }
    }

    /// Forces the FFT route regardless of length.
    pub fn fft(phi: &[f64]) -> Self {
        Correlator {
            phi: phi.to_vec(),
            phi_hat: Some(fft_real(phi)),
        }
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    /// `⟨y, Gφ⟩` for every group element; `y` in group order.
    pub fn inner_products(&self, y: &[f64], group: GroupConfig) -> Vec<f64> {
        let mut out = vec![0.0; group.order(self.len())];
        self.inner_products_into(y, group, &mut out);
        out
    }

    pub fn inner_products_into(&self, y: &[f64], group: GroupConfig, out: &mut [f64]) {
        let l = self.len();
        let phi = &self.phi;
        match &self.phi_hat {
            None => {
                for g in 0..l {
                    let mut acc = 0.0;
                    for i in 0..l {
                        let j = i + g;
                        acc += y[i] * phi[if j >= l { j - l } else { j }];
                    }
                    out[g] = acc;
                }
                if group.dihedral {
                    for g in 0..l {
                        let mut acc = 0.0;
                        for i in 0..l {
                            acc += y[i] * phi[(2 * l - i - g) % l];
                        }
                        out[l + g] = acc;
                    }
                }
            }
            Some(ph) => {
                let yh = fft_real(y);
                let mut buf: Vec<Complex64> = yh.iter().zip(ph).map(|(a, b)| a.conj() * b).collect();
                ifft_in_place(&mut buf);
                for (o, z) in out[..l].iter_mut().zip(&buf) {
                    *o = z.re;
                }
                if group.dihedral {
                    let mut buf: Vec<Complex64> =
                        yh.iter().zip(ph).map(|(a, b)| (a * b).conj()).collect();
                    ifft_in_place(&mut buf);
                    for (o, z) in out[l..].iter_mut().zip(&buf) {
                        *o = z.re;
                    }
                }
            }
        }
    }

    /// `Σ_G w_G G⁻¹y` in group order. Independent of the stored signal except for length and route.
    pub fn pullback_into(&self, y: &[f64], w: &[f64], group: GroupConfig, out: &mut [f64]) {
        let l = self.len();
        if self.phi_hat.is_none() {
            out.iter_mut().for_each(|o| *o = 0.0);
            for g in 0..l {
                let wg = w[g];
                if wg == 0.0 {
                    continue;
                }
                for j in 0..l {
                    out[j] += wg * y[(j + l - g) % l];
                }
            }
            if group.dihedral {
                for g in 0..l {
                    let wg = w[l + g];
                    if wg == 0.0 {
                        continue;
                    }
                    for j in 0..l {
                        out[j] += wg * y[(2 * l - j - g) % l];
                    }
                }
            }
        } else {
            let yh = fft_real(y);
            let wh = fft_real(&w[..l]);
            let mut buf: Vec<Complex64> = wh.iter().zip(&yh).map(|(a, b)| a * b).collect();
            if group.dihedral {
                let fh = fft_real(&w[l..2 * l]);
                for ((z, a), b) in buf.iter_mut().zip(&fh).zip(&yh) {
                    *z += (a * b).conj();
                }
            }
            ifft_in_place(&mut buf);
            for (o, z) in out.iter_mut().zip(&buf) {
                *o = z.re;
            }
        }
    }
}

/// Group-averaged moment tensors and their differences.
#[derive(Clone, Debug, PartialEq)]
pub enum MomentTensor {
    /// A length-L vector in standard order.
    First(Signal),
    /// Circulant second moment stored by its generator: `entry(i,j) = J(j−i)`.
    Second(Signal),
    /// A general L×L matrix (empirical moments), standard order.
    SecondDense(DMatrix<f64>),
    /// L×L×L array in standard order, flattened as `(a·L + b)·L + c`.
    Third { l: usize, data: Vec<f64> },
}

impl MomentTensor {
    pub fn order(&self) -> usize {
        match self {
            MomentTensor::First(_) => 1,
            MomentTensor::Second(_) | MomentTensor::SecondDense(_) => 2,
            MomentTensor::Third { .. } => 3,
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        match self {
            MomentTensor::First(v) => v.norm(),
            MomentTensor::Second(j) => (j.len() as f64 * j.norm_sq()).sqrt(),
            MomentTensor::SecondDense(m) => m.norm(),
            MomentTensor::Third { data, .. } => data.iter().map(|x| x * x).sum::<f64>().sqrt(),
        }
    }

    /// Dense matrix form of a second-order tensor.
    pub fn to_dense(&self) -> Option<DMatrix<f64>> {
        match self {
            MomentTensor::Second(j) => {
                let l = j.len();
                let lo = lo(l);
                Some(DMatrix::from_fn(l, l, |a, b| j.get((lo + b as i64) - (lo + a as i64))))
            }
            MomentTensor::SecondDense(m) => Some(m.clone()),
            _ => None,
        }
    }

    pub fn generator(&self) -> Option<&Signal> {
        match self {
            MomentTensor::Second(j) => Some(j),
            _ => None,
        }
    }
}

/// `(1/L)·M(θ∗θ̌)`, kept as its generator `A_θ/L`.
pub fn second_moment(theta: &Signal) -> MomentTensor {
    let l = theta.len() as f64;
    MomentTensor::Second(autocorrelation(theta).scale(1.0 / l))
}

/// Brute-force `E_G[(Gθ)^{⊗3}]`.
pub fn third_moment(theta: &Signal) -> Result<MomentTensor> {
    let l = theta.len();
    if l > THIRD_MOMENT_GUARD {
        return Err(MraError::SizeGuard {
            what: "L for third moment",
            got: l,
            limit: THIRD_MOMENT_GUARD,
        });
    }
    let v = theta.values();
    let mut data = vec![0.0; l * l * l];
    for g in 0..l {
        for a in 0..l {
            let x = v[(a + g) % l];
            if x == 0.0 {
                continue;
            }
            for b in 0..l {
                let xy = x * v[(b + g) % l];
                if xy == 0.0 {
                    continue;
                }
                let row = (a * l + b) * l;
                for c in 0..l {
                    data[row + c] += xy * v[(c + g) % l];
                }
            }
        }
    }
    let inv = 1.0 / l as f64;
    data.iter_mut().for_each(|x| *x *= inv);
    Ok(MomentTensor::Third { l, data })
}

/// `Δ_m(θ, φ) = E[(Gθ)^{⊗m}] − E[(Gφ)^{⊗m}]`.
pub fn delta_m(theta: &Signal, phi: &Signal, m: usize) -> Result<MomentTensor> {
    check_len(theta, phi)?;
    let l = theta.len();
    match m {
        1 => Ok(MomentTensor::First(Signal::new(vec![theta.mean() - phi.mean(); l])?)),
        2 => {
            let a = autocorrelation(theta);
            let b = autocorrelation(phi);
            Ok(MomentTensor::Second(a.sub(&b)?.scale(1.0 / l as f64)))
        }
        3 => {
            let (MomentTensor::Third { data: a, .. }, MomentTensor::Third { data: b, .. }) =
                (third_moment(theta)?, third_moment(phi)?)
            else {
                unreachable!()
            };
            let data = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            Ok(MomentTensor::Third { l, data })
        }
        _ => Err(MraError::InvalidArgument(format!("moment order {m} not in {{1,2,3}}"))),
    }
}

/// Split of `Δ₂(θ+h, θ)` into the part linear in `h` and the part quadratic in `h`.
///
/// Both parts are circulant; they are stored by their generators.
#[derive(Clone, Debug)]
pub struct SecondMomentExpansion {
    /// `(1/L)(θ∗ȟ + θ̌∗h)`.
    pub linear: Signal,
    /// `(1/L)(h∗ȟ)`.
    pub quadratic: Signal,
}

impl SecondMomentExpansion {
    pub fn linear_matrix(&self) -> DMatrix<f64> {
        MomentTensor::Second(self.linear.clone()).to_dense().unwrap()
    }

    pub fn quadratic_matrix(&self) -> DMatrix<f64> {
        MomentTensor::Second(self.quadratic.clone()).to_dense().unwrap()
    }

    pub fn linear_norm(&self) -> f64 {
        MomentTensor::Second(self.linear.clone()).frobenius_norm()
    }

    pub fn quadratic_norm(&self) -> f64 {
        MomentTensor::Second(self.quadratic.clone()).frobenius_norm()
    }

    /// `‖Δ₂(θ+h, θ)‖_F` without forming the difference of two large moments.
    pub fn total_norm(&self) -> f64 {
        let sum = self.linear.add(&self.quadratic).expect("same length");
        MomentTensor::Second(sum).frobenius_norm()
    }
}

pub fn second_moment_difference_expansion(theta: &Signal, h: &Signal) -> Result<SecondMomentExpansion> {
    check_len(theta, h)?;
    let inv = 1.0 / theta.len() as f64;
    let a = convolve(theta, &ring::reflect(h))?;
    let linear = a.add(&ring::reflect(&a))?.scale(inv);
    let quadratic = autocorrelation(h).scale(inv);
    Ok(SecondMomentExpansion { linear, quadratic })
}

const CHUNK: usize = 4096;

/// Sample moments of a dataset. Order 2 is bias-corrected by `σ²I`.
pub fn empirical_moments(data: &Dataset, m: usize, sigma: f64) -> Result<MomentTensor> {
    let n = data.n();
    let l = data.l();
    if n == 0 {
        return Err(MraError::Empty("dataset"));
    }
    let obs = data.observations();
    match m {
        1 => {
            let partial: Vec<Vec<f64>> = obs
                .par_chunks(CHUNK * l)
                .map(|c| {
                    let mut s = vec![0.0; l];
                    for y in c.chunks_exact(l) {
                        s.iter_mut().zip(y).for_each(|(a, b)| *a += b);
                    }
                    s
                })
                .collect();
            let mut s = vec![0.0; l];
            for p in partial {
                s.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
            }
            Ok(MomentTensor::First(Signal::new(s.iter().map(|x| x / n as f64).collect())?))
        }
        2 => {
            let partial: Vec<DMatrix<f64>> = obs
                .par_chunks(CHUNK * l)
                .map(|c| {
                    let mut s = DMatrix::<f64>::zeros(l, l);
                    for y in c.chunks_exact(l) {
                        for a in 0..l {
                            for b in 0..l {
                                s[(a, b)] += y[a] * y[b];
                            }
                        }
                    }
                    s
                })
                .collect();
            let mut s = DMatrix::<f64>::zeros(l, l);
            for p in partial {
                s += p;
            }
            s /= n as f64;
            for a in 0..l {
                s[(a, a)] -= sigma * sigma;
            }
            Ok(MomentTensor::SecondDense(s))
        }
        _ => Err(MraError::InvalidArgument(format!("empirical moment order {m} not in {{1,2}}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(v: &[f64]) -> Signal {
        Signal::new(v.to_vec()).unwrap()
    }

    fn pseudo(l: usize, seed: u64) -> Signal {
        let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let v = (0..l)
            .map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((x >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Signal::new(v).unwrap()
    }

    #[test]
    fn delta_and_constant_transforms() {
        let d = dft(&Signal::delta(6, 0));
        assert!(d.values().iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        let c = dft(&sig(&[1.0; 5]));
        for (xi, z) in c.frequencies().zip(c.values()) {
            let want = if xi == 0 { 5.0 } else { 0.0 };
            assert!((z - Complex64::new(want, 0.0)).norm() < 1e-12);
        }
        let ones = Spectrum::new(vec![Complex64::new(1.0, 0.0); 7]).unwrap();
        let back = idft(&ones);
        for (i, v) in back.indices().zip(back.values()) {
            assert!((v - if i == 0 { 1.0 } else { 0.0 }).abs() < 1e-15);
        }
    }

    #[test]
    fn convolve_small_case() {
        let u = sig(&[1.0, 0.0, 0.0, 0.0]);
        let v = sig(&[0.0, 1.0, 0.0, 0.0]);
        // u = δ_{-1}, v = δ_0, so u∗v = δ_{-1}.
        assert_eq!(convolve(&u, &v).unwrap(), Signal::delta(4, -1));
        let w = pseudo(9, 3);
        assert_eq!(convolve(&w, &Signal::delta(9, 0)).unwrap(), w);
    }

    #[test]
    fn correlator_routes_agree() {
        for l in [3usize, 8, 21, 70] {
            let phi = pseudo(l, 1).to_group_order();
            let y = pseudo(l, 2).to_group_order();
            let w: Vec<f64> = pseudo(2 * l, 3).values().iter().map(|x| x.abs()).collect();
            let (d, f) = (Correlator::direct(&phi), Correlator::fft(&phi));
            let a = d.inner_products(&y, GroupConfig::dihedral());
            let b = f.inner_products(&y, GroupConfig::dihedral());
            for (x, z) in a.iter().zip(&b) {
                assert!((x - z).abs() < 1e-12);
            }
            let (mut pa, mut pb) = (vec![0.0; l], vec![0.0; l]);
            d.pullback_into(&y, &w, GroupConfig::dihedral(), &mut pa);
            f.pullback_into(&y, &w, GroupConfig::dihedral(), &mut pb);
            for (x, z) in pa.iter().zip(&pb) {
                assert!((x - z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inner_products_match_group_images() {
        let l = 7;
        let phi = pseudo(l, 5);
        let y = pseudo(l, 6);
        let group = GroupConfig::dihedral();
        let c = Correlator::new(&phi.to_group_order()).inner_products(&y.to_group_order(), group);
        for (k, e) in group.elements(l).iter().enumerate() {
            let direct = y.dot(&e.apply(&phi)).unwrap();
            assert!((c[k] - direct).abs() < 1e-13);
        }
    }

    #[test]
    fn pullback_is_adjoint() {
        let l = 6;
        let y = pseudo(l, 8);
        let group = GroupConfig::dihedral();
        let w: Vec<f64> = (0..2 * l).map(|k| (k as f64 + 1.0) / 10.0).collect();
        let mut out = vec![0.0; l];
        Correlator::new(&y.to_group_order()).pullback_into(&y.to_group_order(), &w, group, &mut out);
        let mut want = Signal::zeros(l);
        for (k, e) in group.elements(l).iter().enumerate() {
            want = want.add(&e.inverse(l).apply(&y).scale(w[k])).unwrap();
        }
        let got = Signal::from_group_order(&out).unwrap();
        assert!(got.sub(&want).unwrap().norm() < 1e-13);
    }

    #[test]
    fn second_moment_of_constants_and_deltas() {
        let c = second_moment(&sig(&[1.0; 4])).to_dense().unwrap();
        assert!(c.iter().all(|x| (x - 1.0).abs() < 1e-15));
        let d = second_moment(&Signal::delta(5, 0)).to_dense().unwrap();
        assert!((d - DMatrix::<f64>::identity(5, 5) / 5.0).norm() < 1e-16);
    }

    #[test]
    fn toeplitz_of_delta_is_identity() {
        assert_eq!(toeplitz(&Signal::delta(6, 0)), DMatrix::<f64>::identity(6, 6));
    }

    #[test]
    fn third_moment_guard() {
        assert!(third_moment(&Signal::zeros(65)).is_err());
        assert!(delta_m(&Signal::zeros(4), &Signal::zeros(4), 4).is_err());
    }

    #[test]
    fn expansion_vanishes_for_zero_h() {
        let t = pseudo(11, 4);
        let e = second_moment_difference_expansion(&t, &Signal::zeros(11)).unwrap();
        assert_eq!(e.linear_norm(), 0.0);
        assert_eq!(e.quadratic_norm(), 0.0);
    }

    #[test]
    fn autocorrelation_of_delta() {
        assert_eq!(autocorrelation(&Signal::delta(5, 2)), Signal::delta(5, 0));
        let p = power_spectrum(&Signal::delta(5, 0));
        assert!(p.iter().all(|x| (x - 1.0).abs() < 1e-15));
    }
}
