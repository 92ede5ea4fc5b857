//! Steering vectors, the DFT conventions used by the sweep, the two domain
//! transforms and the two-bin off-grid estimator.
//!
//! Spatial directions are the unitless `θ ∈ [-1, 1]` (sine of the angle off
//! broadside, half-wavelength spacing). A steering vector of length `N` has
//! entries `exp(jπkθ)/√N` for `k = 0..N`.
//!
//! Two matrices fix every sign in the crate:
//!
//! * `F_M[k, m] = exp(+j2πkm/M)`, the unnormalised inverse DFT. Sweeping the
//!   RIS codebook and postmultiplying by `F_M` both land here.
//! * `W_N[k, n] = exp(-j2πkn/N)`, the unnormalised forward DFT.
//!
//! Both have unit-modulus entries, so `W_Nᵀ F_N = N·I`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Wrap a spatial direction onto the 2-periodic interval `[-1, 1)`.
pub fn wrap_direction(x: f64) -> f64 {
    (x + 1.0).rem_euclid(2.0) - 1.0
}

/// Distance between two spatial directions on the 2-periodic circle.
pub fn direction_distance(a: f64, b: f64) -> f64 {
    wrap_direction(a - b).abs()
}

/// Convert dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// `α(N, θ)`.
pub fn steering(n: usize, theta: f64) -> Result<Array1<Complex64>> {
    if n == 0 {
        return Err(Error::InvalidDimension("steering vector needs N >= 1".into()));
    }
    Ok(alpha(n, theta))
}

/// Unchecked steering vector; `n = 0` yields an empty vector.
pub(crate) fn alpha(n: usize, theta: f64) -> Array1<Complex64> {
    let scale = 1.0 / (n as f64).sqrt();
    Array1::from_shape_fn(n, |k| Complex64::from_polar(scale, PI * k as f64 * theta))
}

/// Dirichlet kernel `G_N(ψ) = exp(j(N-1)ψ/2)·sin(Nψ/2)/sin(ψ/2)`, which is
/// `Σ_{k<N} exp(jkψ)` in closed form.
pub fn dirichlet(n: usize, psi: f64) -> Complex64 {
    let nf = n as f64;
    let half = 0.5 * psi;
    let s = half.sin();
    let magnitude = if s.abs() < 1e-9 {
        // L'Hôpital at the removable singularity; error is O(s²).
        nf * (nf * half).cos() / half.cos()
    } else {
        (nf * half).sin() / s
    };
    Complex64::from_polar(1.0, (nf - 1.0) * half) * magnitude
}

/// `α(N, a)ᴴ α(N, b)`.
pub fn steering_inner(n: usize, a: f64, b: f64) -> Complex64 {
    dirichlet(n, PI * (b - a)) / n as f64
}

/// `α(N, a)ᵀ α(N, b)`, the bilinear (unconjugated) product.
pub fn steering_bilinear(n: usize, a: f64, b: f64) -> Complex64 {
    dirichlet(n, PI * (a + b)) / n as f64
}

/// Dense DFT matrices, kept as the reference the FFT path is tested against.
#[derive(Debug, Clone, PartialEq)]
pub struct DftMatrices {
    /// `F_M`, columns `√M·α(M, (2m-2)/M)`.
    pub f: Array2<Complex64>,
    /// `W_N`, columns `√N·α(N, (2-2n)/N)`.
    pub w: Array2<Complex64>,
}

impl DftMatrices {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidDimension("DFT size must be positive".into()));
        }
        Ok(Self { f: idft_matrix(m), w: dft_matrix(n) })
    }
}

/// `F_M`.
pub fn idft_matrix(m: usize) -> Array2<Complex64> {
    let mf = m as f64;
    Array2::from_shape_fn((m, m), |(k, c)| {
        Complex64::from_polar(1.0, 2.0 * PI * ((k * c) % m) as f64 / mf)
    })
}

/// `W_N`.
pub fn dft_matrix(n: usize) -> Array2<Complex64> {
    let nf = n as f64;
    Array2::from_shape_fn((n, n), |(k, c)| {
        Complex64::from_polar(1.0, -2.0 * PI * ((k * c) % n) as f64 / nf)
    })
}

/// One beam's images in both domains.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainMap {
    /// `Ỹ_n = Y_n F_M`.
    pub angle_delay: Array2<Complex64>,
    /// `Ȳ_n = W_Nᵀ Ỹ_n / √N`.
    pub doppler_delay: Array2<Complex64>,
}

/// FFT-backed implementation of the two transforms for fixed sizes.
#[derive(Clone)]
pub struct DomainTransform {
    n_ris: usize,
    m: usize,
    inverse_m: Arc<dyn Fft<f64>>,
    forward_n: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for DomainTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DomainTransform")
            .field("n_ris", &self.n_ris)
            .field("m", &self.m)
            .finish()
    }
}

impl DomainTransform {
    pub fn new(n_ris: usize, m: usize) -> Result<Self> {
        if n_ris == 0 || m == 0 {
            return Err(Error::InvalidDimension("transform sizes must be positive".into()));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            n_ris,
            m,
            inverse_m: planner.plan_fft_inverse(m),
            forward_n: planner.plan_fft_forward(n_ris),
        })
    }

    pub fn n_ris(&self) -> usize {
        self.n_ris
    }

    pub fn subcarriers(&self) -> usize {
        self.m
    }

    fn check(&self, y: &ArrayView2<Complex64>) -> Result<()> {
        if y.dim() != (self.n_ris, self.m) {
            return Err(Error::InvalidDimension(format!(
                "expected {}x{} matrix, got {}x{}",
                self.n_ris,
                self.m,
                y.nrows(),
                y.ncols()
            )));
        }
        Ok(())
    }

    /// `Y·F_M`. rustfft's inverse transform is unnormalised, which is exactly
    /// the row-wise product with `F_M`.
    pub fn angle_delay(&self, y: ArrayView2<Complex64>) -> Result<Array2<Complex64>> {
        self.check(&y)?;
        let mut out = y.as_standard_layout().into_owned();
        let mut scratch = vec![Complex64::default(); self.inverse_m.get_inplace_scratch_len()];
        for mut row in out.rows_mut() {
            let slice = row.as_slice_mut().expect("standard layout rows are contiguous");
            self.inverse_m.process_with_scratch(slice, &mut scratch);
        }
        Ok(out)
    }

    /// `W_Nᵀ Ỹ / √N`, a forward FFT down each column.
    pub fn doppler_delay(&self, y_tilde: ArrayView2<Complex64>) -> Result<Array2<Complex64>> {
        self.check(&y_tilde)?;
        let scale = 1.0 / (self.n_ris as f64).sqrt();
        let mut out = Array2::zeros((self.n_ris, self.m));
        let mut buf = vec![Complex64::default(); self.n_ris];
        let mut scratch = vec![Complex64::default(); self.forward_n.get_inplace_scratch_len()];
        for (col_in, mut col_out) in y_tilde.axis_iter(Axis(1)).zip(out.axis_iter_mut(Axis(1))) {
            buf.iter_mut().zip(col_in.iter()).for_each(|(b, v)| *b = *v);
            self.forward_n.process_with_scratch(&mut buf, &mut scratch);
            col_out.iter_mut().zip(buf.iter()).for_each(|(o, b)| *o = *b * scale);
        }
        Ok(out)
    }

    pub fn domain_map(&self, y: ArrayView2<Complex64>) -> Result<DomainMap> {
        let angle_delay = self.angle_delay(y)?;
        let doppler_delay = self.doppler_delay(angle_delay.view())?;
        Ok(DomainMap { angle_delay, doppler_delay })
    }
}

/// `Y·F_M` for a one-off matrix. Loops should hold a [`DomainTransform`].
pub fn to_angle_delay(y: ArrayView2<Complex64>) -> Result<Array2<Complex64>> {
    DomainTransform::new(y.nrows().max(1), y.ncols().max(1))?.angle_delay(y)
}

/// `W_Nᵀ Ỹ/√N` for a one-off matrix.
pub fn to_doppler_delay(y_tilde: ArrayView2<Complex64>) -> Result<Array2<Complex64>> {
    DomainTransform::new(y_tilde.nrows().max(1), y_tilde.ncols().max(1))?.doppler_delay(y_tilde)
}

/// Two-bin interpolation returning the centred reading: bin `g` (1-based)
/// maps to `-1 + 2g/N`. The result is unwrapped and lies in `[-1, 1 + 2/N]`.
///
/// The neighbour is the larger of the two cyclically adjacent bins; ties go
/// to the right-hand neighbour.
pub fn offgrid_centered(g: ArrayView1<Complex64>) -> Result<f64> {
    let n = g.len();
    if n < 2 {
        return Err(Error::InvalidDimension(format!("off-grid estimate needs N >= 2, got {n}")));
    }
    let mut peak = 0;
    let mut peak_power = -1.0;
    for (i, v) in g.iter().enumerate() {
        let p = v.norm_sqr();
        if p > peak_power {
            peak = i;
            peak_power = p;
        }
    }
    if peak_power <= 0.0 {
        return Err(Error::NoPeak);
    }
    let left = g[(peak + n - 1) % n].norm_sqr();
    let right = g[(peak + 1) % n].norm_sqr();
    let (neighbour_power, step) = if right >= left { (right, 1.0) } else { (left, -1.0) };

    let gamma = step * (peak_power - neighbour_power) / (peak_power + neighbour_power);
    let delta = PI / n as f64;
    let (sd, cd) = delta.sin_cos();
    let num = gamma * sd - gamma * (1.0 - gamma * gamma).max(0.0).sqrt() * sd * cd;
    let den = sd * sd + gamma * gamma * cd * cd;
    let nf = n as f64;
    Ok(-1.0 + (2.0 * (peak + 1) as f64 + step) / nf - (num / den).clamp(-1.0, 1.0).asin() / PI)
}

/// Direction `ϑ` of a vector dominated by `W_N·α(N, ϑ)`, wrapped into
/// `[-1, 1)`. On-grid input `W_N·α(N, (2k-2)/N)` returns `(2k-2)/N`.
///
/// Only magnitudes enter, so the conjugate image and the inverse-DFT image
/// `F_N·α(N, x)` are read as `ϑ` and `-x` respectively.
pub fn offgrid_estimate(g: ArrayView1<Complex64>) -> Result<f64> {
    let n = g.len() as f64;
    Ok(wrap_direction(offgrid_centered(g)? + 1.0 - 2.0 / n))
}

/// Golden-section maximisation of a unimodal function on `[lo, hi]`.
pub(crate) fn golden_max(mut lo: f64, mut hi: f64, steps: usize, f: impl Fn(f64) -> f64) -> f64 {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    for _ in 0..steps {
        if fa >= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = f(b);
        }
    }
    if fa >= fb {
        a
    } else {
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn steering_examples() {
        let v = steering(4, 0.0).unwrap();
        assert!(v.iter().all(|x| close(*x, Complex64::new(0.5, 0.0), 1e-15)));
        let v = steering(2, 1.0).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(v[0], Complex64::new(h, 0.0), 1e-15));
        assert!(close(v[1], Complex64::new(-h, 0.0), 1e-15));
        assert_eq!(steering(0, 0.3), Err(Error::InvalidDimension("steering vector needs N >= 1".into())));
    }

    #[test]
    fn steering_matches_per_entry_evaluation() {
        let v = steering(8, 0.37).unwrap();
        for (k, x) in v.iter().enumerate() {
            let want = Complex64::new(0.0, PI * k as f64 * 0.37).exp() / 8f64.sqrt();
            assert!(close(*x, want, 1e-14));
        }
        let norm: f64 = v.iter().map(|x| x.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < 1e-14);
    }

    #[test]
    fn dirichlet_examples() {
        assert!(close(dirichlet(8, 0.0), Complex64::new(8.0, 0.0), 1e-12));
        assert!(dirichlet(8, 2.0 * PI / 8.0).norm() < 1e-12);
        let direct: Complex64 = (0..16).map(|k| Complex64::new(0.0, 0.1 * k as f64).exp()).sum();
        assert!(close(dirichlet(16, 0.1), direct, 1e-12));
        // Removable singularity at every multiple of 2π.
        assert!(close(dirichlet(5, 4.0 * PI), Complex64::new(5.0, 0.0), 1e-9));
        assert!(close(dirichlet(6, 2.0 * PI), Complex64::new(6.0, 0.0), 1e-9));
    }

    #[test]
    fn dft_identity_with_true_normalisation() {
        for n in [4, 16, 128] {
            let d = DftMatrices::new(n, n).unwrap();
            let prod = d.w.t().dot(&d.f) / n as f64;
            for ((r, c), v) in prod.indexed_iter() {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!(close(*v, Complex64::new(want, 0.0), 1e-10), "N={n} ({r},{c})");
            }
            assert!(d.f.iter().chain(d.w.iter()).all(|v| (v.norm() - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn angle_delay_examples() {
        let m = 8;
        let eye = Array2::<Complex64>::eye(m);
        let out = to_angle_delay(eye.view()).unwrap();
        let f = idft_matrix(m);
        assert!(out.iter().zip(f.iter()).all(|(a, b)| close(*a, *b, 1e-12)));

        // Rows √M·α(M, -(2k-2)/M)ᵀ concentrate into column k.
        let k = 3;
        let row = alpha(m, -2.0 * (k as f64 - 1.0) / m as f64) * (m as f64).sqrt();
        let y = Array2::from_shape_fn((4, m), |(_, c)| row[c]);
        let out = to_angle_delay(y.view()).unwrap();
        for ((_, c), v) in out.indexed_iter() {
            let want = if c == k - 1 { m as f64 } else { 0.0 };
            assert!(close(*v, Complex64::new(want, 0.0), 1e-10));
        }
    }

    #[test]
    fn doppler_delay_examples() {
        let n = 16;
        let f = idft_matrix(n);
        let x = Array2::from_shape_fn((n, n), |(r, c)| Complex64::new(r as f64, c as f64 * 0.5));
        let out = to_doppler_delay(f.dot(&x).view()).unwrap();
        let want = &x * (n as f64).sqrt();
        assert!(out.iter().zip(want.iter()).all(|(a, b)| close(*a, *b, 1e-9)));

        let eye = Array2::<Complex64>::eye(n);
        let out = to_doppler_delay(eye.view()).unwrap();
        let want = dft_matrix(n).t().to_owned() / (n as f64).sqrt();
        assert!(out.iter().zip(want.iter()).all(|(a, b)| close(*a, *b, 1e-12)));
    }

    #[test]
    fn transforms_reject_wrong_shape() {
        let t = DomainTransform::new(4, 8).unwrap();
        let y = Array2::<Complex64>::zeros((4, 7));
        assert!(matches!(t.angle_delay(y.view()), Err(Error::InvalidDimension(_))));
        assert!(matches!(t.doppler_delay(y.view()), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn offgrid_on_grid_is_exact() {
        for n in [8usize, 16, 64] {
            let w = dft_matrix(n);
            for k in 1..=n {
                let theta = wrap_direction(2.0 * (k as f64 - 1.0) / n as f64);
                let g = w.dot(&alpha(n, theta));
                let est = offgrid_estimate(g.view()).unwrap();
                assert!(direction_distance(est, theta) < 1e-9, "n={n} k={k} est={est}");
            }
        }
    }

    #[test]
    fn offgrid_frozen_value() {
        let g = dft_matrix(16).dot(&alpha(16, 0.2037));
        assert!((offgrid_estimate(g.view()).unwrap() - 0.2037).abs() < 1e-6);
    }

    #[test]
    fn offgrid_reads_inverse_image_as_negated_direction() {
        let g = idft_matrix(32).dot(&alpha(32, 0.4113));
        let est = offgrid_estimate(g.view()).unwrap();
        assert!(direction_distance(est, -0.4113) < 1e-9);
    }

    #[test]
    fn offgrid_errors_and_ties() {
        assert_eq!(offgrid_estimate(array![Complex64::new(1.0, 0.0)].view()), Err(Error::InvalidDimension("off-grid estimate needs N >= 2, got 1".into())));
        assert_eq!(offgrid_estimate(Array1::<Complex64>::zeros(8).view()), Err(Error::NoPeak));
        // Equal magnitudes in bins 1 and 2 give the midpoint between them.
        let mut g = Array1::<Complex64>::zeros(8);
        g[1] = Complex64::new(1.0, 0.0);
        g[2] = Complex64::new(0.0, 1.0);
        let est = offgrid_estimate(g.view()).unwrap();
        assert!((est - 3.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn offgrid_noisy_within_two_bins() {
        let n = 16;
        let w = dft_matrix(n);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sigma = (0.01f64 / 2.0).sqrt(); // 20 dB below unit signal power
        let mut hits = 0;
        for _ in 0..1000 {
            let theta: f64 = rng.random_range(-1.0..1.0);
            let noisy = alpha(n, theta).mapv(|x| {
                x + Complex64::new(
                    sigma / (n as f64).sqrt() * gauss(&mut rng),
                    sigma / (n as f64).sqrt() * gauss(&mut rng),
                )
            });
            let est = offgrid_estimate(w.dot(&noisy).view()).unwrap();
            if direction_distance(est, theta) < 2.0 / n as f64 {
                hits += 1;
            }
        }
        assert!(hits >= 990, "{hits}");
    }

    fn gauss(rng: &mut ChaCha8Rng) -> f64 {
        use rand_distr::{Distribution, StandardNormal};
        StandardNormal.sample(rng)
    }

    #[test]
    fn golden_finds_parabola_peak() {
        let x = golden_max(-1.0, 2.0, 60, |x| -(x - 0.3) * (x - 0.3));
        assert!((x - 0.3).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn steering_unit_norm_and_kernel_inner(n in 1usize..64, a in -1.0f64..1.0, b in -1.0f64..1.0) {
            let va = alpha(n, a);
            let vb = alpha(n, b);
            let norm: f64 = va.iter().map(|x| x.norm_sqr()).sum();
            prop_assert!((norm - 1.0).abs() < 1e-12);
            let inner: Complex64 = va.iter().zip(vb.iter()).map(|(x, y)| x.conj() * y).sum();
            prop_assert!((inner.norm() - dirichlet(n, PI * (b - a)).norm() / n as f64).abs() < 1e-9);
            prop_assert!((inner - steering_inner(n, a, b)).norm() < 1e-9);
            let bil: Complex64 = va.iter().zip(vb.iter()).map(|(x, y)| x * y).sum();
            prop_assert!((bil - steering_bilinear(n, a, b)).norm() < 1e-9);
        }

        #[test]
        fn offgrid_exact_noiseless(theta in -1.0f64..1.0, big in any::<bool>()) {
            let n = if big { 128 } else { 16 };
            let g = dft_matrix(n).dot(&alpha(n, theta));
            let est = offgrid_estimate(g.view()).unwrap();
            prop_assert!(direction_distance(est, theta) < 1e-6);
        }

        #[test]
        fn wrap_stays_in_range(x in -50.0f64..50.0) {
            let w = wrap_direction(x);
            prop_assert!((-1.0..1.0).contains(&w));
            prop_assert!(((x - w) / 2.0 - ((x - w) / 2.0).round()).abs() < 1e-9);
        }
    }
}
