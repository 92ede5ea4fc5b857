//! DFT codebooks and per-subcarrier channel matrices.
//!
//! The dense matrices here are the reference model. The simulator never forms
//! them; it works from the factored per-path scalars in [`LinkFactors`].

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::math::alpha;
use crate::scene::{PathParams, Scene, SceneConfig};

/// The three DFT codebooks.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebooks {
    pub bs: Vec<Array1<Complex64>>,
    pub ris: Vec<Array1<Complex64>>,
    pub ut: Vec<Array1<Complex64>>,
}

/// Spatial direction of codeword `index` (0-based) in a size-`n` codebook.
pub fn codeword_direction(n: usize, index: usize) -> f64 {
    2.0 * index as f64 / n as f64
}

pub fn build_codebooks(n_t: usize, n_ris: usize, n_ut: usize) -> Result<Codebooks> {
    if n_t == 0 || n_ris == 0 || n_ut == 0 {
        return Err(Error::InvalidDimension("codebook sizes must be positive".into()));
    }
    let ris_scale = (n_ris as f64).sqrt();
    Ok(Codebooks {
        bs: (0..n_t).map(|n| alpha(n_t, codeword_direction(n_t, n))).collect(),
        ris: (0..n_ris).map(|s| alpha(n_ris, codeword_direction(n_ris, s)) * ris_scale).collect(),
        ut: (0..n_ut).map(|t| alpha(n_ut, codeword_direction(n_ut, t))).collect(),
    })
}

/// Channel matrices at one subcarrier and symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// BS to RIS, `N_RIS × N_T`.
    pub g_t: Array2<Complex64>,
    /// RIS to BS receiver, `N_R × N_RIS`.
    pub g_r: Array2<Complex64>,
    /// BS to UT, `N_UT × N_T`.
    pub h_c: Array2<Complex64>,
    /// RIS to UT, `N_UT × N_RIS`.
    pub h_c_ris: Array2<Complex64>,
    /// Target echoes, `N_R × N_T`.
    pub h_r: Array2<Complex64>,
}

/// `√(n_rx·n_tx)` when the config asks for array gain, else 1.
pub fn array_factor(cfg: &SceneConfig, n_rx: usize, n_tx: usize) -> f64 {
    if cfg.array_gain {
        ((n_rx * n_tx) as f64).sqrt()
    } else {
        1.0
    }
}

/// `g·exp(-j2π m τ Δf)`.
pub fn delayed_gain(gain: Complex64, delay_s: f64, m: usize, spacing_hz: f64) -> Complex64 {
    gain * Complex64::from_polar(1.0, -2.0 * PI * m as f64 * delay_s * spacing_hz)
}

fn outer(a: &Array1<Complex64>, b: &Array1<Complex64>) -> Array2<Complex64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

fn conj(v: Array1<Complex64>) -> Array1<Complex64> {
    v.mapv(|x| x.conj())
}

/// Evaluate every channel at 0-based subcarrier `m` and symbol `p`.
pub fn channels_at(scene: &Scene, m: usize, p: usize) -> Result<ChannelSet> {
    let cfg = &scene.config;
    if m >= cfg.subcarriers {
        return Err(Error::IndexOutOfRange(format!("subcarrier {m} of {}", cfg.subcarriers)));
    }
    let df = cfg.subcarrier_spacing_hz;
    let (n_t, n_r, n_ris, n_ut) = (cfg.n_t, cfg.n_r, cfg.n_ris, cfg.n_ut);

    let mut g_t = Array2::zeros((n_ris, n_t));
    let mut g_r = Array2::zeros((n_r, n_ris));
    for path in &scene.paths.bs_ris {
        let zeta = delayed_gain(path.gain, path.delay_s, m, df);
        g_t = g_t + outer(&alpha(n_ris, path.aoa), &conj(alpha(n_t, path.aod))) * zeta;
        g_r = g_r + outer(&alpha(n_r, path.aod), &alpha(n_ris, path.aoa)) * zeta;
    }
    let mut h_c = Array2::zeros((n_ut, n_t));
    for path in &scene.paths.bs_ut {
        let chi = delayed_gain(path.gain, path.delay_s, m, df);
        h_c = h_c + outer(&alpha(n_ut, path.aoa), &conj(alpha(n_t, path.aod))) * chi;
    }
    let mut h_c_ris = Array2::zeros((n_ut, n_ris));
    for path in &scene.paths.ris_ut {
        let chi = delayed_gain(path.gain, path.delay_s, m, df);
        h_c_ris = h_c_ris + outer(&alpha(n_ut, path.aoa), &alpha(n_ris, path.aod)) * chi;
    }
    let mut h_r = Array2::zeros((n_r, n_t));
    for t in &scene.paths.targets {
        let gamma = delayed_gain(t.gain, t.delay_s(), m, df)
            * Complex64::from_polar(1.0, 2.0 * PI * p as f64 * t.doppler_hz * cfg.symbol_duration_s);
        h_r = h_r + outer(&alpha(n_r, t.angle), &conj(alpha(n_t, t.angle))) * gamma;
    }
    Ok(ChannelSet {
        g_t: g_t * Complex64::from(array_factor(cfg, n_ris, n_t)),
        g_r: g_r * Complex64::from(array_factor(cfg, n_r, n_ris)),
        h_c: h_c * Complex64::from(array_factor(cfg, n_ut, n_t)),
        h_c_ris: h_c_ris * Complex64::from(array_factor(cfg, n_ut, n_ris)),
        h_r: h_r * Complex64::from(array_factor(cfg, n_r, n_t)),
    })
}

/// Per-subcarrier phasors `exp(-j2π m τ Δf)` for `m = 0..M`.
pub fn delay_phasors(delay_s: f64, subcarriers: usize, spacing_hz: f64) -> Vec<Complex64> {
    let step = Complex64::from_polar(1.0, -2.0 * PI * delay_s * spacing_hz);
    let mut out = Vec::with_capacity(subcarriers);
    let mut acc = Complex64::new(1.0, 0.0);
    for m in 0..subcarriers {
        // Re-anchor periodically so the running product does not drift.
        if m % 32 == 0 {
            acc = Complex64::from_polar(1.0, -2.0 * PI * m as f64 * delay_s * spacing_hz);
        }
        out.push(acc);
        acc *= step;
    }
    out
}

/// Array factors of the five channels for one scene, cached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkFactors {
    pub g_t: f64,
    pub g_r: f64,
    pub h_c: f64,
    pub h_c_ris: f64,
    pub h_r: f64,
}

impl LinkFactors {
    pub fn new(cfg: &SceneConfig) -> Self {
        Self {
            g_t: array_factor(cfg, cfg.n_ris, cfg.n_t),
            g_r: array_factor(cfg, cfg.n_r, cfg.n_ris),
            h_c: array_factor(cfg, cfg.n_ut, cfg.n_t),
            h_c_ris: array_factor(cfg, cfg.n_ut, cfg.n_ris),
            h_r: array_factor(cfg, cfg.n_r, cfg.n_t),
        }
    }
}

/// Index of the strongest path of a link.
pub fn dominant_path(paths: &[PathParams]) -> Option<usize> {
    paths
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.gain.norm().total_cmp(&b.1.gain.norm()))
        .map(|(i, _)| i)
}
