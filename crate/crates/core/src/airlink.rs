//! Observation synthesis: BS echo stacks, UT reception stacks and the few
//! extra probe symbols the estimators may request.
//!
//! Every beamformer the protocol uses is a steering vector, and every RIS
//! configuration is `√N_RIS·α(N_RIS, x)` for some direction `x` (codeword `s`
//! is `x = 2s/N_RIS`). Responses therefore reduce to products of
//! [`steering_inner`] and [`steering_bilinear`] per path.

use std::f64::consts::PI;
use std::io::{Read, Write};

use ndarray::Array3;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::channel::{codeword_direction, delay_phasors, LinkFactors};
use crate::error::{Error, Result};
use crate::math::{dbm_to_watts, steering_bilinear, steering_inner};
use crate::scene::{PathParams, Scene};

/// Additive noise setting for a simulation call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    None,
    /// Complex white Gaussian noise at the configured noise power.
    Awgn { seed: u64 },
}

/// The sweep observations.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationStacks {
    /// BS echoes indexed `[beam n, RIS codeword s, subcarrier m]`.
    pub y: Array3<Complex64>,
    /// UT receptions indexed `[beam n, UT codeword t, subcarrier m]`.
    pub z: Array3<Complex64>,
    /// Echo-receiver noise variance, W.
    pub sigma_r2: f64,
    /// UT noise variance, W.
    pub sigma_c2: f64,
}

fn noise_std(scene: &Scene, noise: Noise) -> f64 {
    match noise {
        Noise::None => 0.0,
        Noise::Awgn { .. } => dbm_to_watts(scene.config.noise_power_dbm).sqrt(),
    }
}

/// Per-row noise generator: stream `row` of the seed, so rows can be filled
/// in any order or in parallel.
fn row_rng(seed: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64);
    rng
}

pub(crate) fn complex_gaussian(rng: &mut impl Rng, std: f64) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * (std * std::f64::consts::FRAC_1_SQRT_2)
}

fn add_noise(rows: &mut [Complex64], seed: u64, row: usize, std: f64) {
    if std > 0.0 {
        let mut rng = row_rng(seed, row);
        rows.iter_mut().for_each(|v| *v += complex_gaussian(&mut rng, std));
    }
}

/// Both stacks for one scene. The UT stack draws noise from an independent
/// seed derived from the echo seed.
pub fn simulate_stacks(scene: &Scene, power_dbm: f64, noise: Noise) -> Result<ObservationStacks> {
    let ut_noise = match noise {
        Noise::None => Noise::None,
        Noise::Awgn { seed } => Noise::Awgn { seed: seed ^ 0x5554_5f53_5441_434b },
    };
    let sigma2 = dbm_to_watts(scene.config.noise_power_dbm);
    Ok(ObservationStacks {
        y: simulate_bs_stacks(scene, power_dbm, noise)?,
        z: simulate_ut_stacks(scene, power_dbm, ut_noise)?,
        sigma_r2: sigma2,
        sigma_c2: sigma2,
    })
}

/// BS echo stack `[N_T, N_RIS, M]`. Exact sum over every pair of BS-RIS paths
/// and every target.
pub fn simulate_bs_stacks(scene: &Scene, power_dbm: f64, noise: Noise) -> Result<Array3<Complex64>> {
    let cfg = &scene.config;
    cfg.validate()?;
    let (n_t, n_r, n_ris, m) = (cfg.n_t, cfg.n_r, cfg.n_ris, cfg.subcarriers);
    let amp = dbm_to_watts(power_dbm).sqrt();
    let fac = LinkFactors::new(cfg);
    let df = cfg.subcarrier_spacing_hz;
    let ts = cfg.symbol_duration_s;
    let std = noise_std(scene, noise);
    let seed = match noise {
        Noise::Awgn { seed } => seed,
        Noise::None => 0,
    };

    struct Term {
        gain: Complex64,
        rx: f64,
        tx: f64,
        ris: Vec<Complex64>,
        phasors: Vec<Complex64>,
        /// Per-beam Doppler advance `2π·N_RIS·f·T_s`.
        beam_phase: f64,
    }
    let ris_scale = amp * fac.g_t * fac.g_r;
    let mut terms = Vec::new();
    for r in &scene.paths.bs_ris {
        for u in &scene.paths.bs_ris {
            terms.push(Term {
                gain: r.gain * u.gain * ris_scale,
                rx: r.aod,
                tx: u.aod,
                ris: (0..n_ris)
                    .map(|s| steering_bilinear(n_ris, r.aoa, u.aoa + codeword_direction(n_ris, s)))
                    .collect(),
                phasors: delay_phasors(r.delay_s + u.delay_s, m, df),
                beam_phase: 0.0,
            });
        }
    }
    for t in &scene.paths.targets {
        let step = 2.0 * PI * t.doppler_hz * ts;
        terms.push(Term {
            gain: t.gain * amp * fac.h_r,
            rx: t.angle,
            tx: t.angle,
            ris: (0..n_ris).map(|s| Complex64::from_polar(1.0, step * s as f64)).collect(),
            phasors: delay_phasors(t.delay_s(), m, df),
            beam_phase: step * n_ris as f64,
        });
    }

    let mut y = Array3::<Complex64>::zeros((n_t, n_ris, m));
    let slab = y.as_slice_mut().expect("fresh array is contiguous");
    slab.par_chunks_mut(n_ris * m).enumerate().for_each(|(n, beam)| {
        let theta_b = codeword_direction(n_t, n);
        for term in &terms {
            let c = term.gain
                * steering_inner(n_r, theta_b, term.rx)
                * steering_inner(n_t, term.tx, theta_b)
                * Complex64::from_polar(1.0, term.beam_phase * n as f64);
            for (s, row) in beam.chunks_mut(m).enumerate() {
                let cs = c * term.ris[s];
                row.iter_mut().zip(&term.phasors).for_each(|(v, e)| *v += cs * e);
            }
        }
        for (s, row) in beam.chunks_mut(m).enumerate() {
            add_noise(row, seed, n * n_ris + s, std);
        }
    });
    Ok(y)
}

/// Precomputed BS-RIS-UT and BS-UT responses for steering-vector beamformers.
#[derive(Debug, Clone)]
pub struct LinkModel {
    n_t: usize,
    n_ris: usize,
    n_ut: usize,
    cascade: Vec<(PathParams, PathParams, Complex64, Vec<Complex64>)>,
    direct: Vec<(PathParams, Complex64, Vec<Complex64>)>,
}

impl LinkModel {
    /// `include_direct = false` keeps only the cascaded BS-RIS-UT channel.
    pub fn new(scene: &Scene, include_direct: bool) -> Self {
        let cfg = &scene.config;
        let fac = LinkFactors::new(cfg);
        let (m, df) = (cfg.subcarriers, cfg.subcarrier_spacing_hz);
        let mut cascade = Vec::new();
        for ru in &scene.paths.ris_ut {
            for br in &scene.paths.bs_ris {
                let g = ru.gain * br.gain * fac.h_c_ris * fac.g_t;
                cascade.push((*ru, *br, g, delay_phasors(ru.delay_s + br.delay_s, m, df)));
            }
        }
        let direct = if include_direct {
            scene
                .paths
                .bs_ut
                .iter()
                .map(|p| (*p, p.gain * fac.h_c, delay_phasors(p.delay_s, m, df)))
                .collect()
        } else {
            Vec::new()
        };
        Self { n_t: cfg.n_t, n_ris: cfg.n_ris, n_ut: cfg.n_ut, cascade, direct }
    }

    /// Noiseless downlink `wᴴ(H_c + H̃_c Φ G_T) f` per subcarrier for
    /// `f = α(N_T, f_dir)`, `Φ = diag(√N_RIS·α(N_RIS, ris_dir))`,
    /// `w = α(N_UT, w_dir)`, accumulated into `out`.
    pub fn downlink(&self, f_dir: f64, ris_dir: f64, w_dir: f64, out: &mut [Complex64]) {
        for (ru, br, g, ph) in &self.cascade {
            let c = g
                * steering_inner(self.n_ut, w_dir, ru.aoa)
                * steering_bilinear(self.n_ris, ru.aod, br.aoa + ris_dir)
                * steering_inner(self.n_t, br.aod, f_dir);
            out.iter_mut().zip(ph).for_each(|(o, e)| *o += c * e);
        }
        for (p, g, ph) in &self.direct {
            let c = g * steering_inner(self.n_ut, w_dir, p.aoa) * steering_inner(self.n_t, p.aod, f_dir);
            out.iter_mut().zip(ph).for_each(|(o, e)| *o += c * e);
        }
    }

    /// Noiseless uplink with the UT transmitting `α(N_UT, w_dir)` and the BS
    /// combining with `α(N_T, f_dir)`; the reciprocal of [`Self::downlink`].
    pub fn uplink(&self, f_dir: f64, ris_dir: f64, w_dir: f64, out: &mut [Complex64]) {
        for (ru, br, g, ph) in &self.cascade {
            let c = g
                * steering_inner(self.n_t, f_dir, br.aod)
                * steering_bilinear(self.n_ris, br.aoa, ru.aod + ris_dir)
                * steering_inner(self.n_ut, ru.aoa, w_dir);
            out.iter_mut().zip(ph).for_each(|(o, e)| *o += c * e);
        }
        for (p, g, ph) in &self.direct {
            let c = g * steering_inner(self.n_t, f_dir, p.aod) * steering_inner(self.n_ut, p.aoa, w_dir);
            out.iter_mut().zip(ph).for_each(|(o, e)| *o += c * e);
        }
    }
}

/// UT reception stack `[N_T, N_UT, M]`. Row `t` of beam `n` is received
/// during symbol `n·N_RIS + t`, so the RIS holds codeword `t`.
pub fn simulate_ut_stacks(scene: &Scene, power_dbm: f64, noise: Noise) -> Result<Array3<Complex64>> {
    let cfg = &scene.config;
    cfg.validate()?;
    let (n_t, n_ris, n_ut, m) = (cfg.n_t, cfg.n_ris, cfg.n_ut, cfg.subcarriers);
    let amp = dbm_to_watts(power_dbm).sqrt();
    let std = noise_std(scene, noise);
    let seed = match noise {
        Noise::Awgn { seed } => seed,
        Noise::None => 0,
    };
    let model = LinkModel::new(scene, true);
    let mut z = Array3::<Complex64>::zeros((n_t, n_ut, m));
    let slab = z.as_slice_mut().expect("fresh array is contiguous");
    slab.par_chunks_mut(n_ut * m).enumerate().for_each(|(n, beam)| {
        let f_dir = codeword_direction(n_t, n);
        for (t, row) in beam.chunks_mut(m).enumerate() {
            model.downlink(f_dir, codeword_direction(n_ris, t), codeword_direction(n_ut, t), row);
            row.iter_mut().for_each(|v| *v *= amp);
            add_noise(row, seed, n * n_ut + t, std);
        }
    });
    Ok(z)
}

/// The extra symbols the estimators can ask for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProbeKind {
    /// Downlink at the UT with BS beam `beam`, UT codeword `ut_codeword` and
    /// RIS codeword `ris_codeword`. These ride on training symbols that are
    /// transmitted anyway, so they cost nothing extra.
    ReflectedCheck { beam: usize, ut_codeword: usize, ris_codeword: usize },
    /// Uplink pilot from the UT beam `ut_dir` through the RIS configuration
    /// `√N_RIS·α(N_RIS, ris_dir)`, received on BS beam `bs_dir`.
    Uplink { bs_dir: f64, ris_dir: f64, ut_dir: f64 },
}

impl ProbeKind {
    /// Symbols this probe adds to the training overhead.
    pub fn overhead(&self) -> usize {
        match self {
            ProbeKind::ReflectedCheck { .. } => 0,
            ProbeKind::Uplink { .. } => 1,
        }
    }
}

/// Single-symbol reception for `kind` across all subcarriers.
pub fn probe_symbol(
    scene: &Scene,
    model: &LinkModel,
    power_dbm: f64,
    kind: ProbeKind,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec<Complex64>> {
    let cfg = &scene.config;
    let mut out = vec![Complex64::default(); cfg.subcarriers];
    match kind {
        ProbeKind::ReflectedCheck { beam, ut_codeword, ris_codeword } => {
            if beam >= cfg.n_t || ut_codeword >= cfg.n_ut || ris_codeword >= cfg.n_ris {
                return Err(Error::IndexOutOfRange(format!(
                    "probe ({beam}, {ut_codeword}, {ris_codeword}) outside ({}, {}, {})",
                    cfg.n_t, cfg.n_ut, cfg.n_ris
                )));
            }
            model.downlink(
                codeword_direction(cfg.n_t, beam),
                codeword_direction(cfg.n_ris, ris_codeword),
                codeword_direction(cfg.n_ut, ut_codeword),
                &mut out,
            );
        }
        ProbeKind::Uplink { bs_dir, ris_dir, ut_dir } => model.uplink(bs_dir, ris_dir, ut_dir, &mut out),
    }
    let amp = dbm_to_watts(power_dbm).sqrt();
    out.iter_mut().for_each(|v| *v *= amp);
    if let Some(rng) = rng {
        let std = dbm_to_watts(cfg.noise_power_dbm).sqrt();
        out.iter_mut().for_each(|v| *v += complex_gaussian(rng, std));
    }
    Ok(out)
}

/// Source of probe symbols for the estimators.
pub trait ProbeAccess {
    fn probe(&mut self, kind: ProbeKind) -> Result<Vec<Complex64>>;
    /// Extra symbols consumed so far.
    fn overhead(&self) -> usize;
}

/// Probes answered from a known scene, counting the overhead they add.
#[derive(Debug)]
pub struct SceneProbe<'a> {
    scene: &'a Scene,
    model: LinkModel,
    power_dbm: f64,
    rng: Option<ChaCha8Rng>,
    used: usize,
}

impl<'a> SceneProbe<'a> {
    pub fn new(scene: &'a Scene, power_dbm: f64, noise: Noise) -> Self {
        let rng = match noise {
            Noise::None => None,
            Noise::Awgn { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        };
        Self { scene, model: LinkModel::new(scene, true), power_dbm, rng, used: 0 }
    }
}

impl ProbeAccess for SceneProbe<'_> {
    fn probe(&mut self, kind: ProbeKind) -> Result<Vec<Complex64>> {
        let out = probe_symbol(self.scene, &self.model, self.power_dbm, kind, self.rng.as_mut())?;
        self.used += kind.overhead();
        Ok(out)
    }

    fn overhead(&self) -> usize {
        self.used
    }
}

/// Probe access that refuses every request.
#[derive(Debug, Default)]
pub struct NoProbe;

impl ProbeAccess for NoProbe {
    fn probe(&mut self, kind: ProbeKind) -> Result<Vec<Complex64>> {
        Err(Error::ProbeUnavailable(format!("{kind:?}")))
    }

    fn overhead(&self) -> usize {
        0
    }
}

const STACK_MAGIC: &[u8; 8] = b"RISACSTK";

/// Write a stack as: 8-byte magic, three little-endian `u64` dimensions, the
/// `u64` seed, then row-major `(re, im)` pairs of little-endian `f32`.
pub fn write_stack(mut w: impl Write, stack: &Array3<Complex64>, seed: u64) -> Result<()> {
    w.write_all(STACK_MAGIC)?;
    for d in stack.shape() {
        w.write_all(&(*d as u64).to_le_bytes())?;
    }
    w.write_all(&seed.to_le_bytes())?;
    for v in stack.iter() {
        w.write_all(&(v.re as f32).to_le_bytes())?;
        w.write_all(&(v.im as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Inverse of [`write_stack`]; returns the stack and its seed.
pub fn read_stack(mut r: impl Read) -> Result<(Array3<Complex64>, u64)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != STACK_MAGIC {
        return Err(Error::Io("not a stack file".into()));
    }
    let mut word = [0u8; 8];
    let mut dims = [0usize; 3];
    for d in &mut dims {
        r.read_exact(&mut word)?;
        *d = u64::from_le_bytes(word) as usize;
    }
    r.read_exact(&mut word)?;
    let seed = u64::from_le_bytes(word);
    let count = dims.iter().product::<usize>();
    let mut raw = vec![0u8; count * 8];
    r.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(re as f64, im as f64)
        })
        .collect();
    let stack = Array3::from_shape_vec((dims[0], dims[1], dims[2]), data)
        .map_err(|e| Error::InvalidDimension(e.to_string()))?;
    Ok((stack, seed))
}
