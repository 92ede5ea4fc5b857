//! Beam alignment of the BS-RIS-UT link, its training overhead, and the
//! beamforming gain it achieves.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::airlink::{complex_gaussian, LinkModel, Noise, ProbeAccess, ProbeKind};
use crate::channel::{codeword_direction, dominant_path};
use crate::error::{Error, Result};
use crate::math::{dbm_to_watts, golden_max};
use crate::scene::{cross, dot, norm, scale, sub, LinkCase, Point, Scene};

/// RIS-UT spatial directions `(θ_RU, φ_RU)` from the two poses.
///
/// `k` is the unit vector from the UT to the RIS; `θ = −([q]₂ − k₂kᵀq)/k₁`
/// with the RIS normal and `φ = ([q]₂ − k₂kᵀq)/k₁` with the UT normal. For
/// `|k₁| < 1e-9` the equivalent form `k × q` is used.
pub fn ru_angles(p_ris: Point, q_ris: Point, p_ut: Point, q_ut: Point) -> Result<(f64, f64)> {
    let d = sub(p_ris, p_ut);
    let n = norm(d);
    if !(n > 0.0) {
        return Err(Error::CoincidentPositions);
    }
    let k = scale(d, 1.0 / n);
    let project = |q: Point| {
        if k[0].abs() < 1e-9 {
            cross(k, q)
        } else {
            (q[1] - k[1] * dot(k, q)) / k[0]
        }
    };
    Ok((-project(q_ris), project(q_ut)))
}

/// Pick between the two LoS RIS orientations with two uplink probes.
///
/// Probe `i` reflects with `√N_RIS·α(N_RIS, −φ⁽ⁱ⁾ − θ⁽ⁱ⁾)`, the UT transmits
/// toward `ut_dir` and the BS combines toward `bs_dir`. Returns 0 when
/// `‖y₀‖ ≥ ‖y₁‖`, else 1.
pub fn resolve_los_ambiguity(
    phis: [f64; 2],
    thetas: [f64; 2],
    bs_dir: f64,
    ut_dir: f64,
    probe: &mut dyn ProbeAccess,
) -> Result<usize> {
    let mut energy = [0.0; 2];
    for i in 0..2 {
        let y = probe.probe(ProbeKind::Uplink { bs_dir, ris_dir: -phis[i] - thetas[i], ut_dir })?;
        energy[i] = y.iter().map(|v| v.norm_sqr()).sum::<f64>();
    }
    Ok(if energy[0] >= energy[1] { 0 } else { 1 })
}

/// Training symbols for `case`: `N_T·N_RIS`, plus 2 for the LoS-ambiguity
/// probes (cases 1, 5) or `N_RIS·N_UT` for the RIS-UT sweep (even cases).
pub fn overhead_for_case(case: u8, n_t: usize, n_ris: usize, n_ut: usize) -> Result<usize> {
    let c = LinkCase::new(case).map_err(|_| Error::InvalidCase(case))?;
    let base = n_t * n_ris;
    Ok(if !c.ris_ut_los() {
        base + n_ris * n_ut
    } else if c.bs_ris_los() {
        base + 2
    } else {
        base
    })
}

/// Steering-vector beamformers: `f = α(N_T, f_dir)`,
/// `Φ = diag(√N_RIS·α(N_RIS, ris_dir))`, `w = α(N_UT, w_dir)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beams {
    pub f_dir: f64,
    pub ris_dir: f64,
    pub w_dir: f64,
}

/// `max_ϖ |Σ_m e^{jmϖ} s_m|` by FFT peak and golden-section refinement.
pub fn coherent_peak(s: &[Complex64]) -> f64 {
    let m = s.len();
    if m == 0 {
        return 0.0;
    }
    let mut buf = s.to_vec();
    FftPlanner::new().plan_fft_inverse(m).process(&mut buf);
    let (k, _) = buf
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm_sqr().total_cmp(&b.1.norm_sqr()))
        .expect("nonempty");
    let eval = |w: f64| {
        s.iter()
            .enumerate()
            .map(|(i, v)| v * Complex64::from_polar(1.0, w * i as f64))
            .sum::<Complex64>()
            .norm()
    };
    let step = 2.0 * std::f64::consts::PI / m as f64;
    let centre = step * k as f64;
    let refined = golden_max(centre - step, centre + step, 30, eval);
    eval(refined).max(buf[k].norm())
}

/// Normalised beamforming gain of `beams` on the cascaded channel. Dividing
/// by `M·|g_BR|·|g_RU|` of the dominant paths makes perfect alignment on a
/// single-path scene read `√(N_T·N_UT)·N_RIS`.
pub fn beamforming_gain(scene: &Scene, beams: &Beams) -> f64 {
    gain_with(scene, &LinkModel::new(scene, false), beams)
}

fn gain_norm(scene: &Scene) -> f64 {
    let cfg = &scene.config;
    let (Some(br), Some(ru)) = (dominant_path(&scene.paths.bs_ris), dominant_path(&scene.paths.ris_ut)) else {
        return 0.0;
    };
    let g = scene.paths.bs_ris[br].gain.norm() * scene.paths.ris_ut[ru].gain.norm() * cfg.subcarriers as f64;
    let array = if cfg.array_gain { 1.0 } else { ((cfg.n_t * cfg.n_ut) as f64).sqrt() * cfg.n_ris as f64 };
    if g > 0.0 {
        array / g
    } else {
        0.0
    }
}

fn gain_with(scene: &Scene, model: &LinkModel, beams: &Beams) -> f64 {
    let mut out = vec![Complex64::default(); scene.config.subcarriers];
    model.downlink(beams.f_dir, beams.ris_dir, beams.w_dir, &mut out);
    coherent_peak(&out) * gain_norm(scene)
}

/// Alignment from the true dominant paths.
pub fn ideal_beams(scene: &Scene) -> Result<Beams> {
    let br = dominant_path(&scene.paths.bs_ris).ok_or(Error::NoSignal)?;
    let ru = dominant_path(&scene.paths.ris_ut).ok_or(Error::NoSignal)?;
    let (br, ru) = (scene.paths.bs_ris[br], scene.paths.ris_ut[ru]);
    Ok(Beams { f_dir: br.aod, ris_dir: -br.aoa - ru.aod, w_dir: ru.aoa })
}

/// Outcome of a codebook sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepResult {
    pub beams: Beams,
    /// Codeword indices `(n, s, t)`.
    pub indices: (usize, usize, usize),
    /// Noiseless gain of the chosen beams.
    pub gain: f64,
    /// Symbols spent.
    pub overhead: usize,
}

fn sweep(
    scene: &Scene,
    beams_n: &[usize],
    power_dbm: f64,
    noise: Noise,
    f_fixed: Option<f64>,
) -> Result<SweepResult> {
    let cfg = &scene.config;
    let model = LinkModel::new(scene, false);
    let amp = dbm_to_watts(power_dbm).sqrt();
    let std = dbm_to_watts(cfg.noise_power_dbm).sqrt();
    let (n_ris, n_ut, m) = (cfg.n_ris, cfg.n_ut, cfg.subcarriers);
    let fft = FftPlanner::new().plan_fft_inverse(m);
    let best = beams_n
        .par_iter()
        .map(|&n| {
            let mut rng = match noise {
                Noise::None => None,
                Noise::Awgn { seed } => {
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    r.set_stream(n as u64);
                    Some(r)
                }
            };
            let f_dir = f_fixed.unwrap_or_else(|| codeword_direction(cfg.n_t, n));
            let mut out = vec![Complex64::default(); m];
            let mut best = (f64::NEG_INFINITY, (n, 0, 0));
            for s in 0..n_ris {
                for t in 0..n_ut {
                    out.iter_mut().for_each(|v| *v = Complex64::default());
                    model.downlink(f_dir, codeword_direction(n_ris, s), codeword_direction(n_ut, t), &mut out);
                    for v in out.iter_mut() {
                        *v *= amp;
                        if let Some(r) = rng.as_mut() {
                            *v += complex_gaussian(r, std);
                        }
                    }
                    fft.process(&mut out);
                    let peak = out.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
                    if peak > best.0 {
                        best = (peak, (n, s, t));
                    }
                }
            }
            best
        })
        .reduce(|| (f64::NEG_INFINITY, (0, 0, 0)), |a, b| if b.0 > a.0 { b } else { a });
    let (n, s, t) = best.1;
    let beams = Beams {
        f_dir: f_fixed.unwrap_or_else(|| codeword_direction(cfg.n_t, n)),
        ris_dir: codeword_direction(n_ris, s),
        w_dir: codeword_direction(n_ut, t),
    };
    Ok(SweepResult {
        beams,
        indices: best.1,
        gain: gain_with(scene, &model, &beams),
        overhead: beams_n.len() * n_ris * n_ut,
    })
}

/// Exhaustive `N_T·N_RIS·N_UT` codebook search on noisy receptions.
pub fn beam_sweep_baseline(scene: &Scene, power_dbm: f64, noise: Noise) -> Result<SweepResult> {
    let beams: Vec<usize> = (0..scene.config.n_t).collect();
    sweep(scene, &beams, power_dbm, noise, None)
}

/// `N_RIS·N_UT` search over RIS and UT codewords with the BS beam fixed.
pub fn ris_ut_sweep(scene: &Scene, f_dir: f64, power_dbm: f64, noise: Noise) -> Result<SweepResult> {
    sweep(scene, &[0], power_dbm, noise, Some(f_dir))
}

/// Result of aligning one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentResult {
    pub theta_ru: f64,
    pub phi_ru: f64,
    /// RIS-side BS-RIS direction used for the reflection.
    pub phi_br: f64,
    pub q_ris: Point,
    pub beams: Beams,
    pub overhead: usize,
    pub case_id: u8,
}
