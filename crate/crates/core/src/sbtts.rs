//! Simultaneous beam training and target sensing.
//!
//! RIS echoes focus in the angle-delay domain `Ỹ_n = Y_n F_M`, moving targets
//! in the Doppler-delay domain `Ȳ_n = W_Nᵀ Ỹ_n/√N`. The iterative estimator
//! compares the two maxima, estimates whichever component is stronger,
//! subtracts its rank-1 model from every domain at once and repeats.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{s, Array3, ArrayView1};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::airlink::{ProbeAccess, ProbeKind};
use crate::channel::codeword_direction;
use crate::error::{Error, Result};
use crate::math::{
    golden_max, offgrid_centered, offgrid_estimate, steering_bilinear, steering_inner, wrap_direction,
    SPEED_OF_LIGHT,
};
use crate::scene::SceneConfig;

/// Sizes and physical constants the estimators need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepParams {
    pub n_t: usize,
    pub n_r: usize,
    pub n_ris: usize,
    pub n_ut: usize,
    pub subcarriers: usize,
    pub spacing_hz: f64,
    pub symbol_s: f64,
    pub wavelength_m: f64,
}

impl SweepParams {
    pub fn from_config(cfg: &SceneConfig) -> Self {
        Self {
            n_t: cfg.n_t,
            n_r: cfg.n_r,
            n_ris: cfg.n_ris,
            n_ut: cfg.n_ut,
            subcarriers: cfg.subcarriers,
            spacing_hz: cfg.subcarrier_spacing_hz,
            symbol_s: cfg.symbol_duration_s,
            wavelength_m: cfg.wavelength(),
        }
    }
}

/// One BS-RIS path recovered from the echoes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RisPathEstimate {
    /// BS-side direction.
    pub aod: f64,
    /// Sum of the two RIS-side directions, `2φ` wrapped.
    pub two_way_aoa: f64,
    /// The two RIS-side directions consistent with `two_way_aoa`.
    pub aoa_candidates: [f64; 2],
    pub range_m: f64,
    pub gain: Complex64,
    /// Peak `(n, s, m)` in the angle-delay domain.
    pub indices: (usize, usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetEstimate {
    pub angle: f64,
    pub range_m: f64,
    pub velocity_mps: f64,
    /// Normalised Doppler `2fT_s`.
    pub doppler: f64,
    pub gain: Complex64,
    pub indices: (usize, usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathClass {
    Direct,
    Reflected,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtPathEstimate {
    pub aod: f64,
    pub aoa: f64,
    pub range_m: f64,
    pub class: PathClass,
    pub rho: f64,
    /// False for a reflected pick that was excluded and replaced.
    pub kept: bool,
    pub gain: Complex64,
    /// Peak `(n, t, m)` in the UT angle-delay stack.
    pub indices: (usize, usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Ris,
    Target,
}

/// One line of the estimator trace.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub branch: Branch,
    pub indices: (usize, usize, usize),
    pub q_c: f64,
    pub q_r: f64,
    /// Set when estimation at this peak failed and the cell was masked.
    pub error: Option<Error>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensingOutput {
    pub ris: Vec<RisPathEstimate>,
    pub targets: Vec<TargetEstimate>,
    pub trace: Vec<IterationTrace>,
    /// `‖Y_residual‖_F / ‖Y‖_F`.
    pub residual_ratio: f64,
}

/// `{ϑ̃/2 + 1, ϑ̃/2}` for `ϑ̃ ≤ 0`, else `{ϑ̃/2 − 1, ϑ̃/2}`.
pub fn estimate_aoa_candidates(two_way: f64) -> [f64; 2] {
    let half = 0.5 * two_way;
    if two_way <= 0.0 {
        [half + 1.0, half]
    } else {
        [half - 1.0, half]
    }
}

/// Round-trip delay reading `(1 + ψ − 2/M)/(4Δf)` and the one-way range it
/// implies. `ψ` is wrapped into `[-1, 1)` first.
pub fn estimate_delay_range(psi: f64, subcarriers: usize, spacing_hz: f64) -> Result<(f64, f64)> {
    let tau = (1.0 + wrap_direction(psi) - 2.0 / subcarriers as f64) / (4.0 * spacing_hz);
    if tau < -1e-15 {
        return Err(Error::WrappedDelay);
    }
    let tau = tau.max(0.0);
    Ok((tau, tau * SPEED_OF_LIGHT))
}

/// Radial velocity from a Doppler-axis column `Ȳ[n, :, m]`.
pub fn estimate_doppler_velocity(column: ArrayView1<Complex64>, symbol_s: f64, wavelength_m: f64) -> Result<f64> {
    let nu = offgrid_estimate(column)?;
    doppler_to_velocity(nu, symbol_s, wavelength_m)
}

fn doppler_to_velocity(nu: f64, symbol_s: f64, wavelength_m: f64) -> Result<f64> {
    if nu.abs() >= 1.0 {
        return Err(Error::AliasedDoppler(nu));
    }
    Ok(nu / (2.0 * symbol_s) * wavelength_m / 2.0)
}

/// Grid points of the bounded 1-D search.
pub const AOD_SEARCH_GRID: usize = 512;
const AOD_GOLDEN_STEPS: usize = 20;

/// The three beams around `n_peak`, cyclic.
pub fn neighbour_beams(n_peak: usize, n_t: usize) -> [usize; 3] {
    [(n_peak + n_t - 1) % n_t, n_peak, (n_peak + 1) % n_t]
}

/// Monostatic beam response `v_nᴴα(N_R, θ)·α(N_T, θ)ᴴb_n`.
fn beam_response(n_t: usize, n_r: usize, beam: usize, theta: f64) -> Complex64 {
    let b = codeword_direction(n_t, beam);
    steering_inner(n_r, b, theta) * steering_inner(n_t, theta, b)
}

/// BS-side direction from the observations `y` at the three beams
/// [`neighbour_beams`]`(n_peak)`: maximise `|yᴴỹ(θ)|/‖ỹ(θ)‖` over
/// `θ ∈ [(2n−1)/N_T, (2n+1)/N_T]` (0-based `n`).
pub fn estimate_aod_ls(y: &[Complex64; 3], n_peak: usize, n_t: usize, n_r: usize) -> Result<f64> {
    if n_peak >= n_t {
        return Err(Error::IndexOutOfRange(format!("beam {n_peak} of {n_t}")));
    }
    if y.iter().all(|v| v.norm_sqr() == 0.0) {
        return Err(Error::NoSignal);
    }
    let beams = neighbour_beams(n_peak, n_t);
    // Unwrapped beam directions so the bracket is contiguous.
    let centre = codeword_direction(n_t, n_peak);
    let objective = |theta: f64| {
        let mut num = Complex64::default();
        let mut den = 0.0;
        for (yi, &b) in y.iter().zip(&beams) {
            let t = beam_response(n_t, n_r, b, theta);
            num += yi.conj() * t;
            den += t.norm_sqr();
        }
        if den > 0.0 {
            num.norm() / den.sqrt()
        } else {
            0.0
        }
    };
    let half = 1.0 / n_t as f64;
    let (lo, hi) = (centre - half, centre + half);
    let step = (hi - lo) / (AOD_SEARCH_GRID - 1) as f64;
    let mut best = (f64::NEG_INFINITY, 0);
    for i in 0..AOD_SEARCH_GRID {
        let v = objective(lo + step * i as f64);
        if v > best.0 {
            best = (v, i);
        }
    }
    let x = lo + step * best.1 as f64;
    let refined = golden_max((x - step).max(lo), (x + step).min(hi), AOD_GOLDEN_STEPS, objective);
    let theta = if objective(refined) >= best.0 { refined } else { x };
    Ok(wrap_direction(theta))
}

/// Separable rank-1 model `t_n·a_s·d_m` of one component in the raw stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub beam: Vec<Complex64>,
    pub row: Vec<Complex64>,
    pub delay: Vec<Complex64>,
}

impl Template {
    fn norm_sqr(&self) -> f64 {
        let n = |v: &[Complex64]| v.iter().map(|x| x.norm_sqr()).sum::<f64>();
        n(&self.beam) * n(&self.row) * n(&self.delay)
    }
}

/// A stack held in all three domains, kept consistent under subtraction.
#[derive(Clone)]
pub struct Workspace {
    /// Raw stack `[n, s, m]`.
    pub y: Array3<Complex64>,
    /// Angle-delay domain.
    pub angle_delay: Array3<Complex64>,
    /// Doppler-delay domain.
    pub doppler_delay: Array3<Complex64>,
    inverse_m: Arc<dyn Fft<f64>>,
    forward_n: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Workspace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workspace").field("dim", &self.y.dim()).finish()
    }
}

impl Workspace {
    pub fn new(y: Array3<Complex64>) -> Result<Self> {
        let (n_t, n, m) = y.dim();
        if n_t == 0 || n < 2 || m < 2 {
            return Err(Error::InvalidDimension(format!("stack of shape {n_t}x{n}x{m}")));
        }
        let mut planner = FftPlanner::new();
        let inverse_m = planner.plan_fft_inverse(m);
        let forward_n = planner.plan_fft_forward(n);
        let y = y.as_standard_layout().into_owned();
        let mut angle_delay = y.clone();
        for mut row in angle_delay.rows_mut() {
            let mut buf = row.to_vec();
            inverse_m.process(&mut buf);
            row.iter_mut().zip(buf).for_each(|(o, b)| *o = b);
        }
        let mut doppler_delay = angle_delay.clone();
        let scale = 1.0 / (n as f64).sqrt();
        for b in 0..n_t {
            for c in 0..m {
                let mut col: Vec<Complex64> = doppler_delay.slice(s![b, .., c]).to_vec();
                forward_n.process(&mut col);
                doppler_delay.slice_mut(s![b, .., c]).iter_mut().zip(col).for_each(|(o, v)| *o = v * scale);
            }
        }
        Ok(Self { y, angle_delay, doppler_delay, inverse_m, forward_n })
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.y.dim()
    }

    /// `‖Y‖_F`.
    pub fn energy(&self) -> f64 {
        self.y.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Least-squares coefficient `β = tᴴy/tᴴt` of `template` in the raw stack.
    pub fn project(&self, template: &Template) -> Result<Complex64> {
        let tt = template.norm_sqr();
        if !(tt > 0.0) {
            return Err(Error::DegenerateTemplate);
        }
        let mut acc = Complex64::default();
        for (n, tn) in template.beam.iter().enumerate() {
            if tn.norm_sqr() == 0.0 {
                continue;
            }
            let mut beam_acc = Complex64::default();
            for (s, a) in template.row.iter().enumerate() {
                let row = self.y.slice(s![n, s, ..]);
                let dot: Complex64 = row.iter().zip(&template.delay).map(|(v, d)| d.conj() * v).sum();
                beam_acc += a.conj() * dot;
            }
            acc += tn.conj() * beam_acc;
        }
        Ok(acc / tt)
    }

    /// Subtract `β·template` from all three domains.
    pub fn subtract(&mut self, template: &Template, beta: Complex64) {
        let mut d_tilde = template.delay.clone();
        self.inverse_m.process(&mut d_tilde);
        let mut a_bar = template.row.clone();
        self.forward_n.process(&mut a_bar);
        let scale = 1.0 / (a_bar.len() as f64).sqrt();
        a_bar.iter_mut().for_each(|v| *v *= scale);
        for (n, tn) in template.beam.iter().enumerate() {
            let c = beta * tn;
            if c.norm_sqr() == 0.0 {
                continue;
            }
            for s in 0..template.row.len() {
                let ca = c * template.row[s];
                let cb = c * a_bar[s];
                let (mut raw, mut ad, mut dd) = (
                    self.y.slice_mut(s![n, s, ..]),
                    self.angle_delay.slice(s![n, s, ..]).to_owned(),
                    self.doppler_delay.slice(s![n, s, ..]).to_owned(),
                );
                raw.iter_mut().zip(&template.delay).for_each(|(v, d)| *v -= ca * d);
                ad.iter_mut().zip(&d_tilde).for_each(|(v, d)| *v -= ca * d);
                dd.iter_mut().zip(&d_tilde).for_each(|(v, d)| *v -= cb * d);
                self.angle_delay.slice_mut(s![n, s, ..]).assign(&ad);
                self.doppler_delay.slice_mut(s![n, s, ..]).assign(&dd);
            }
        }
    }
}

/// `β` for `template`, then subtract it. Returns `β`.
pub fn remove_contribution(ws: &mut Workspace, template: &Template) -> Result<Complex64> {
    let beta = ws.project(template)?;
    ws.subtract(template, beta);
    Ok(beta)
}

/// Global maxima of both domains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainMaxima {
    pub q_c: f64,
    pub q_r: f64,
    pub at_c: (usize, usize, usize),
    pub at_r: (usize, usize, usize),
}

type Mask = HashSet<(usize, usize, usize)>;

fn argmax(stack: &Array3<Complex64>, mask: &Mask) -> (f64, (usize, usize, usize)) {
    let mut best = (0.0, (0, 0, 0));
    for (idx, v) in stack.indexed_iter() {
        let p = v.norm_sqr();
        if p > best.0 && !mask.contains(&idx) {
            best = (p, idx);
        }
    }
    (best.0.sqrt(), best.1)
}

pub fn domain_maxima(ws: &Workspace) -> DomainMaxima {
    masked_maxima(ws, &Mask::new(), &Mask::new())
}

fn masked_maxima(ws: &Workspace, mask_c: &Mask, mask_r: &Mask) -> DomainMaxima {
    let (q_c, at_c) = argmax(&ws.angle_delay, mask_c);
    let (q_r, at_r) = argmax(&ws.doppler_delay, mask_r);
    DomainMaxima { q_c, q_r, at_c, at_r }
}

fn gain_from_beta(beta: Complex64, subcarriers: usize) -> Complex64 {
    (beta / (subcarriers as f64).sqrt()).sqrt()
}

fn delay_vector(round_trip_s: f64, p: &SweepParams) -> Vec<Complex64> {
    (0..p.subcarriers)
        .map(|m| Complex64::from_polar(1.0, -2.0 * PI * m as f64 * round_trip_s * p.spacing_hz))
        .collect()
}

/// Estimate the RIS path whose angle-delay peak is at `at`.
pub fn estimate_ris_path(ws: &Workspace, at: (usize, usize, usize), p: &SweepParams) -> Result<(RisPathEstimate, Template)> {
    let (n, s, m) = at;
    let two_way = wrap_direction(-offgrid_estimate(ws.angle_delay.slice(s![n, .., m]))?);
    let psi = offgrid_centered(ws.angle_delay.slice(s![n, s, ..]))?;
    let (tau, range_m) = estimate_delay_range(psi, p.subcarriers, p.spacing_hz)?;
    let beams = neighbour_beams(n, p.n_t);
    let y3 = beams.map(|b| ws.angle_delay[[b, s, m]]);
    let aod = estimate_aod_ls(&y3, n, p.n_t, p.n_r)?;
    let template = Template {
        beam: (0..p.n_t).map(|b| beam_response(p.n_t, p.n_r, b, aod)).collect(),
        row: (0..p.n_ris).map(|r| steering_bilinear(p.n_ris, two_way, codeword_direction(p.n_ris, r))).collect(),
        delay: delay_vector(2.0 * tau, p),
    };
    let est = RisPathEstimate {
        aod,
        two_way_aoa: two_way,
        aoa_candidates: estimate_aoa_candidates(two_way),
        range_m,
        gain: Complex64::default(),
        indices: at,
    };
    Ok((est, template))
}

/// Estimate the target whose Doppler-delay peak is at `at`.
pub fn estimate_target(ws: &Workspace, at: (usize, usize, usize), p: &SweepParams) -> Result<(TargetEstimate, Template)> {
    let (n, s, m) = at;
    let nu = offgrid_estimate(ws.doppler_delay.slice(s![n, .., m]))?;
    let velocity_mps = doppler_to_velocity(nu, p.symbol_s, p.wavelength_m)?;
    let psi = offgrid_centered(ws.doppler_delay.slice(s![n, s, ..]))?;
    let (tau, range_m) = estimate_delay_range(psi, p.subcarriers, p.spacing_hz)?;
    let beam_phase = PI * nu * p.n_ris as f64;
    let beams = neighbour_beams(n, p.n_t);
    let y3 = beams.map(|b| ws.doppler_delay[[b, s, m]] * Complex64::from_polar(1.0, -beam_phase * b as f64));
    let angle = estimate_aod_ls(&y3, n, p.n_t, p.n_r)?;
    let template = Template {
        beam: (0..p.n_t)
            .map(|b| beam_response(p.n_t, p.n_r, b, angle) * Complex64::from_polar(1.0, beam_phase * b as f64))
            .collect(),
        row: (0..p.n_ris).map(|r| Complex64::from_polar(1.0, PI * nu * r as f64)).collect(),
        delay: delay_vector(2.0 * tau, p),
    };
    let est = TargetEstimate { angle, range_m, velocity_mps, doppler: nu, gain: Complex64::default(), indices: at };
    Ok((est, template))
}

fn check_stack(y: &Array3<Complex64>, p: &SweepParams) -> Result<()> {
    if y.dim() != (p.n_t, p.n_ris, p.subcarriers) {
        return Err(Error::InvalidDimension(format!(
            "echo stack {:?} does not match ({}, {}, {})",
            y.dim(),
            p.n_t,
            p.n_ris,
            p.subcarriers
        )));
    }
    Ok(())
}

/// Iterative estimation: at each step branch on the larger domain maximum
/// among the budgets not yet met, estimate, remove, repeat.
pub fn run_ipebtts(y: &Array3<Complex64>, p: &SweepParams, l_br: usize, targets: usize) -> Result<SensingOutput> {
    check_stack(y, p)?;
    let mut ws = Workspace::new(y.clone())?;
    let initial = ws.energy();
    let mut out = SensingOutput { ris: Vec::new(), targets: Vec::new(), trace: Vec::new(), residual_ratio: 1.0 };
    let (mut mask_c, mut mask_r) = (Mask::new(), Mask::new());
    let cap = l_br + targets + 5;
    while out.ris.len() < l_br || out.targets.len() < targets {
        if out.trace.len() >= cap {
            return Err(Error::ConvergenceFailure(cap));
        }
        let mx = masked_maxima(&ws, &mask_c, &mask_r);
        let ris_open = out.ris.len() < l_br;
        let tar_open = out.targets.len() < targets;
        let branch = if ris_open && (!tar_open || mx.q_c >= mx.q_r) { Branch::Ris } else { Branch::Target };
        let at = if branch == Branch::Ris { mx.at_c } else { mx.at_r };
        let mut line = IterationTrace { branch, indices: at, q_c: mx.q_c, q_r: mx.q_r, error: None };
        let step = match branch {
            Branch::Ris => estimate_ris_path(&ws, at, p).and_then(|(mut e, t)| {
                let beta = remove_contribution(&mut ws, &t)?;
                e.gain = gain_from_beta(beta, p.subcarriers);
                out.ris.push(e);
                Ok(())
            }),
            Branch::Target => estimate_target(&ws, at, p).and_then(|(mut e, t)| {
                let beta = remove_contribution(&mut ws, &t)?;
                e.gain = beta;
                out.targets.push(e);
                Ok(())
            }),
        };
        if let Err(e) = step {
            match branch {
                Branch::Ris => mask_c.insert(at),
                Branch::Target => mask_r.insert(at),
            };
            line.error = Some(e);
        }
        out.trace.push(line);
    }
    out.residual_ratio = if initial > 0.0 { ws.energy() / initial } else { 0.0 };
    Ok(out)
}

/// Baseline: RIS paths from the angle-delay domain and targets from the
/// Doppler-delay domain of the original stack, each with removal only of its
/// own kind.
pub fn run_spebtts(y: &Array3<Complex64>, p: &SweepParams, l_br: usize, targets: usize) -> Result<SensingOutput> {
    check_stack(y, p)?;
    let base = Workspace::new(y.clone())?;
    let initial = base.energy();
    let cap = l_br + targets + 5;
    let mut out = SensingOutput { ris: Vec::new(), targets: Vec::new(), trace: Vec::new(), residual_ratio: 1.0 };

    let mut ws = base.clone();
    let mut mask = Mask::new();
    while out.ris.len() < l_br {
        if out.trace.len() >= cap {
            return Err(Error::ConvergenceFailure(cap));
        }
        let (q_c, at) = argmax(&ws.angle_delay, &mask);
        let mut line = IterationTrace { branch: Branch::Ris, indices: at, q_c, q_r: 0.0, error: None };
        let step = estimate_ris_path(&ws, at, p).and_then(|(mut e, t)| {
            e.gain = gain_from_beta(remove_contribution(&mut ws, &t)?, p.subcarriers);
            out.ris.push(e);
            Ok(())
        });
        if let Err(e) = step {
            mask.insert(at);
            line.error = Some(e);
        }
        out.trace.push(line);
    }
    let ris_removed = initial * initial - ws.energy().powi(2);

    let mut ws = base;
    let mut mask = Mask::new();
    while out.targets.len() < targets {
        if out.trace.len() >= cap {
            return Err(Error::ConvergenceFailure(cap));
        }
        let (q_r, at) = argmax(&ws.doppler_delay, &mask);
        let mut line = IterationTrace { branch: Branch::Target, indices: at, q_c: 0.0, q_r, error: None };
        let step = estimate_target(&ws, at, p).and_then(|(mut e, t)| {
            e.gain = remove_contribution(&mut ws, &t)?;
            out.targets.push(e);
            Ok(())
        });
        if let Err(e) = step {
            mask.insert(at);
            line.error = Some(e);
        }
        out.trace.push(line);
    }
    let residual = (ws.energy().powi(2) - ris_removed).max(0.0).sqrt();
    out.residual_ratio = if initial > 0.0 { residual / initial } else { 0.0 };
    Ok(out)
}

/// Default direct/reflected threshold on `ρ`.
pub const RHO_THRESHOLD: f64 = 0.5;

fn cyclic_neighbourhood(at: (usize, usize, usize), dims: (usize, usize, usize)) -> impl Iterator<Item = (usize, usize, usize)> {
    let wrap = |i: usize, d: isize, n: usize| ((i as isize + d).rem_euclid(n as isize)) as usize;
    (-1..=1).flat_map(move |a| {
        (-1..=1).flat_map(move |b| {
            (-1..=1).map(move |c| (wrap(at.0, a, dims.0), wrap(at.1, b, dims.1), wrap(at.2, c, dims.2)))
        })
    })
}

fn mean_magnitude(v: impl IntoIterator<Item = Complex64>) -> f64 {
    let (sum, count) = v.into_iter().fold((0.0, 0usize), |(s, c), x| (s + x.norm(), c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// UT-side training on the reception stack `z[n, t, m]`.
///
/// Each round picks the angle-delay peak and computes
/// `ρ = mean|z^(p̂+2)| / mean|z^(p̂)|` from a probe with the RIS codeword
/// advanced by two. A peak with `ρ > rho_threshold` is a direct path; otherwise
/// it is recorded as reflected, its `±1` neighbourhood is excluded and the
/// next peak is kept whatever its `ρ`. Kept paths are estimated and removed.
pub fn run_ut_training(
    z: &Array3<Complex64>,
    p: &SweepParams,
    probe: &mut dyn ProbeAccess,
    l_bu: usize,
    rho_threshold: f64,
) -> Result<Vec<UtPathEstimate>> {
    if z.dim() != (p.n_t, p.n_ut, p.subcarriers) {
        return Err(Error::InvalidDimension(format!("UT stack {:?}", z.dim())));
    }
    if p.n_ris < p.n_ut + 2 {
        return Err(Error::InvalidConfig("n_ris >= n_ut + 2 is required".into()));
    }
    let mut ws = Workspace::new(z.clone())?;
    let dims = z.dim();
    let total = dims.0 * dims.1 * dims.2;
    let mut mask = Mask::new();
    let mut out = Vec::new();
    let mut kept = 0;

    let rho_at = |probe: &mut dyn ProbeAccess, (n, t, _): (usize, usize, usize)| -> Result<f64> {
        let shifted = probe.probe(ProbeKind::ReflectedCheck { beam: n, ut_codeword: t, ris_codeword: t + 2 })?;
        let base = mean_magnitude(z.slice(s![n, t, ..]).iter().copied());
        Ok(if base > 0.0 { mean_magnitude(shifted) / base } else { 0.0 })
    };

    while kept < l_bu {
        if mask.len() >= total {
            return Err(Error::DetectionExhausted);
        }
        let (peak, mut at) = argmax(&ws.angle_delay, &mask);
        if peak == 0.0 {
            return Err(Error::DetectionExhausted);
        }
        let mut rho = rho_at(probe, at)?;
        if rho <= rho_threshold {
            let mut rejected = ut_estimate(&ws, at, p, PathClass::Reflected, rho)?.0;
            rejected.kept = false;
            out.push(rejected);
            mask.extend(cyclic_neighbourhood(at, dims));
            if mask.len() >= total {
                return Err(Error::DetectionExhausted);
            }
            let (peak, next) = argmax(&ws.angle_delay, &mask);
            if peak == 0.0 {
                return Err(Error::DetectionExhausted);
            }
            at = next;
            rho = rho_at(probe, at)?;
        }
        let class = if rho > rho_threshold { PathClass::Direct } else { PathClass::Reflected };
        let (mut est, template) = ut_estimate(&ws, at, p, class, rho)?;
        est.gain = remove_contribution(&mut ws, &template)?;
        out.push(est);
        kept += 1;
    }
    Ok(out)
}

fn ut_estimate(
    ws: &Workspace,
    at: (usize, usize, usize),
    p: &SweepParams,
    class: PathClass,
    rho: f64,
) -> Result<(UtPathEstimate, Template)> {
    let (n, t, m) = at;
    let aoa = offgrid_estimate(ws.angle_delay.slice(s![n, .., m]))?;
    let aod = offgrid_estimate(ws.angle_delay.slice(s![.., t, m]))?;
    let psi = wrap_direction(offgrid_centered(ws.angle_delay.slice(s![n, t, ..]))?);
    let tau = (1.0 + psi - 2.0 / p.subcarriers as f64) / (2.0 * p.spacing_hz);
    if tau < -1e-15 {
        return Err(Error::WrappedDelay);
    }
    let tau = tau.max(0.0);
    let template = Template {
        beam: (0..p.n_t).map(|b| steering_inner(p.n_t, aod, codeword_direction(p.n_t, b))).collect(),
        row: (0..p.n_ut).map(|u| steering_inner(p.n_ut, codeword_direction(p.n_ut, u), aoa)).collect(),
        delay: delay_vector(tau, p),
    };
    let est = UtPathEstimate {
        aod,
        aoa,
        range_m: tau * SPEED_OF_LIGHT,
        class,
        rho,
        kept: true,
        gain: Complex64::default(),
        indices: at,
    };
    Ok((est, template))
}
