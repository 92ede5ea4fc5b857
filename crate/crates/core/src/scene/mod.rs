//! Scene construction: poses, per-path parameters derived from geometry, and
//! the random generator that draws complete scenes.
//!
//! The BS sits at the origin with its array normal along +y, so everything
//! it can see lies in the upper half-plane.

mod config;
mod geometry;

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{LinkCase, SceneConfig};
pub use geometry::*;

use crate::error::{Error, Result};
use crate::math::SPEED_OF_LIGHT;

/// Position and unit array normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Point,
    pub orientation: Point,
}

impl Pose {
    pub fn new(position: Point, orientation: Point) -> Result<Self> {
        let n = norm(orientation);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidDimension("orientation must be a nonzero vector".into()));
        }
        Ok(Self { position, orientation: scale(orientation, 1.0 / n) })
    }

    pub fn bs() -> Self {
        Self { position: [0.0, 0.0], orientation: [0.0, 1.0] }
    }

    /// Spatial direction at which this array sees `point`.
    pub fn direction_to(&self, point: Point) -> f64 {
        spatial_direction(sub(point, self.position), self.orientation)
    }
}

/// One propagation path of a communication link. `aod` is the spatial
/// direction at the transmitting end, `aoa` at the receiving end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    pub gain: Complex64,
    /// One-way delay, seconds.
    pub delay_s: f64,
    pub aod: f64,
    pub aoa: f64,
    /// Single-bounce scatterer; `None` for the LoS path.
    pub scatterer: Option<Point>,
}

impl PathParams {
    /// Total polyline length in metres.
    pub fn length_m(&self) -> f64 {
        self.delay_s * SPEED_OF_LIGHT
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetParams {
    pub gain: Complex64,
    pub range_m: f64,
    /// Radial velocity, positive towards the BS.
    pub velocity_mps: f64,
    /// BS-side spatial direction.
    pub angle: f64,
    pub doppler_hz: f64,
    pub rcs_dbsm: f64,
}

impl TargetParams {
    /// Round-trip delay `2r/c`.
    pub fn delay_s(&self) -> f64 {
        2.0 * self.range_m / SPEED_OF_LIGHT
    }

    pub fn position(&self) -> Point {
        point_at(self.range_m, self.angle)
    }
}

/// Generated path and target parameters. When a link has a LoS path it is
/// element 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenePaths {
    pub bs_ris: Vec<PathParams>,
    pub bs_ut: Vec<PathParams>,
    pub ris_ut: Vec<PathParams>,
    pub targets: Vec<TargetParams>,
}

/// A complete scene: configuration, ground-truth poses and paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub config: SceneConfig,
    pub ris: Pose,
    pub ut: Pose,
    pub paths: ScenePaths,
}

/// Parameters of a path from `tx` to `rx`, optionally bouncing off
/// `scatterer`.
pub fn link_path(tx: &Pose, rx: &Pose, scatterer: Option<Point>, gain: Complex64) -> PathParams {
    let first = scatterer.unwrap_or(rx.position);
    let last = scatterer.unwrap_or(tx.position);
    let length = distance(tx.position, first) + distance(first, rx.position);
    PathParams {
        gain,
        delay_s: length / SPEED_OF_LIGHT,
        aod: tx.direction_to(first),
        aoa: rx.direction_to(last),
        scatterer,
    }
}

/// Free-space amplitude `λ/(4πd)`.
pub fn free_space_amplitude(wavelength: f64, length: f64) -> f64 {
    wavelength / (4.0 * PI * length)
}

/// Radar-equation amplitude `√(λ²σ/((4π)³r⁴))`.
pub fn radar_amplitude(wavelength: f64, rcs_dbsm: f64, range: f64) -> f64 {
    let sigma = 10f64.powf(rcs_dbsm / 10.0);
    (wavelength * wavelength * sigma / ((4.0 * PI).powi(3) * range.powi(4))).sqrt()
}

const MAX_REDRAWS: usize = 1000;

/// Draw a scene from `cfg`, seeded by `cfg.seed`.
pub fn synthesize_scene(cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let case = cfg.case()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let max_sin = cfg.max_off_normal_deg.to_radians().sin();
    let max_az = cfg.max_off_normal_deg.to_radians();
    let lambda = cfg.wavelength();
    let bs = Pose::bs();

    for _ in 0..MAX_REDRAWS {
        let ris_pos = point_at(
            rng.random_range(cfg.ris_range_min_m..=cfg.ris_range_max_m),
            rng.random_range(-max_az..=max_az).sin(),
        );
        let ut_pos = point_at(
            rng.random_range(cfg.ut_range_min_m..=cfg.ut_range_max_m),
            rng.random_range(-max_az..=max_az).sin(),
        );
        if distance(ris_pos, ut_pos) < 5.0 {
            continue;
        }
        let Some(ris_q) = draw_orientation(&mut rng, ris_pos, &[bs.position, ut_pos], max_sin) else {
            continue;
        };
        let Some(ut_q) = draw_orientation(&mut rng, ut_pos, &[bs.position, ris_pos], max_sin) else {
            continue;
        };
        let ris = Pose { position: ris_pos, orientation: ris_q };
        let ut = Pose { position: ut_pos, orientation: ut_q };

        let links = LinkDraw { cfg, rng: &mut rng, max_sin, max_az, lambda };
        let Ok(paths) = links.all(&bs, &ris, &ut, case) else {
            continue;
        };
        let mut paths = paths;
        paths.targets = (0..cfg.targets).map(|_| draw_target(cfg, &mut rng, max_az, lambda)).collect();
        return Ok(Scene { config: cfg.clone(), ris, ut, paths });
    }
    Err(Error::Generation(format!("no feasible geometry after {MAX_REDRAWS} redraws")))
}

fn draw_target(cfg: &SceneConfig, rng: &mut ChaCha8Rng, max_az: f64, lambda: f64) -> TargetParams {
    let range_m = rng.random_range(cfg.target_range_min_m..=cfg.target_range_max_m);
    let angle = rng.random_range(-max_az..=max_az).sin();
    let velocity_mps = rng.random_range(cfg.target_speed_min_mps..=cfg.target_speed_max_mps);
    let rcs_dbsm = rng.random_range(cfg.rcs_min_dbsm..=cfg.rcs_max_dbsm);
    let phase = rng.random_range(0.0..2.0 * PI);
    TargetParams {
        gain: Complex64::from_polar(radar_amplitude(lambda, rcs_dbsm, range_m), phase),
        range_m,
        velocity_mps,
        angle,
        doppler_hz: 2.0 * velocity_mps / lambda,
        rcs_dbsm,
    }
}

/// Uniform orientation such that every point in `facing` is in front of the
/// array within the off-normal limit.
fn draw_orientation(rng: &mut ChaCha8Rng, at: Point, facing: &[Point], max_sin: f64) -> Option<Point> {
    for _ in 0..200 {
        let a = rng.random_range(0.0..2.0 * PI);
        let q = [a.cos(), a.sin()];
        let ok = facing.iter().all(|p| {
            let d = unit(sub(*p, at));
            dot(d, q) > 0.0 && spatial_direction(d, q).abs() <= max_sin
        });
        if ok {
            return Some(q);
        }
    }
    None
}

#[derive(Clone, Copy)]
struct Separation {
    direction: f64,
    direction_only: bool,
}

struct LinkDraw<'a> {
    cfg: &'a SceneConfig,
    rng: &'a mut ChaCha8Rng,
    max_sin: f64,
    max_az: f64,
    lambda: f64,
}

impl LinkDraw<'_> {
    fn all(mut self, bs_pose: &Pose, ris: &Pose, ut: &Pose, case: LinkCase) -> Result<ScenePaths> {
        let cfg = self.cfg;
        // BS-RIS paths are separated on the BS side by two echo-receive
        // beamwidths so the cross terms between them stay in sidelobes. Other
        // links need two bins of separation in delay or in transmit direction.
        let br = Separation { direction: 2.0 / cfg.n_r as f64, direction_only: true };
        let bs = Separation { direction: 2.0 / cfg.n_t as f64, direction_only: false };
        let ru = Separation { direction: 2.0 / cfg.n_ris as f64, direction_only: false };
        Ok(ScenePaths {
            bs_ris: self.link(bs_pose, ris, case.bs_ris_los(), cfg.l_br, br)?,
            bs_ut: self.link(bs_pose, ut, case.bs_ut_los(), cfg.l_bu, bs)?,
            ris_ut: self.link(ris, ut, case.ris_ut_los(), cfg.l_ru, ru)?,
            targets: Vec::new(),
        })
    }

    fn link(&mut self, tx: &Pose, rx: &Pose, los: bool, count: usize, sep: Separation) -> Result<Vec<PathParams>> {
        let cfg = self.cfg;
        let min_sep = 2.0 * cfg.range_cell_m();
        let direct = distance(tx.position, rx.position);
        let los_amp = free_space_amplitude(self.lambda, direct);
        let nlos_in_los = los_amp * 10f64.powf(-cfg.los_nlos_ratio_db / 20.0);
        let outer = 1.5 * norm(tx.position).max(norm(rx.position));

        let mut paths = Vec::with_capacity(count);
        if los {
            let phase = self.rng.random_range(0.0..2.0 * PI);
            paths.push(link_path(tx, rx, None, Complex64::from_polar(los_amp, phase)));
        }
        while paths.len() < count {
            let mut placed = false;
            for _ in 0..MAX_REDRAWS {
                let s = point_at(
                    self.rng.random_range(5.0..=outer.max(10.0)),
                    self.rng.random_range(-self.max_az..=self.max_az).sin(),
                );
                if distance(s, tx.position) < 2.0 || distance(s, rx.position) < 2.0 {
                    continue;
                }
                let candidate = link_path(tx, rx, Some(s), Complex64::new(1.0, 0.0));
                let facing = |pose: &Pose| {
                    let d = unit(sub(s, pose.position));
                    dot(d, pose.orientation) > 0.0 && spatial_direction(d, pose.orientation).abs() <= self.max_sin
                };
                if !facing(tx) || !facing(rx) {
                    continue;
                }
                let clash = paths.iter().any(|p| {
                    let near_delay = (p.length_m() - candidate.length_m()).abs() < min_sep;
                    let near_direction = crate::math::direction_distance(p.aod, candidate.aod) < sep.direction;
                    near_direction && (sep.direction_only || near_delay)
                });
                if clash {
                    continue;
                }
                let amp = if los { nlos_in_los } else { free_space_amplitude(self.lambda, candidate.length_m()) };
                let phase = self.rng.random_range(0.0..2.0 * PI);
                paths.push(PathParams { gain: Complex64::from_polar(amp, phase), ..candidate });
                placed = true;
                break;
            }
            if !placed {
                return Err(Error::Generation("could not place a separated scatterer".into()));
            }
        }
        Ok(paths)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn los_path_matches_geometry() {
        let cfg = SceneConfig { l_br: 1, seed: 3, ..SceneConfig::default() };
        let scene = synthesize_scene(&cfg).unwrap();
        let p = scene.paths.bs_ris[0];
        let r = norm(scene.ris.position);
        assert!((p.delay_s * SPEED_OF_LIGHT - r).abs() < 1e-9);
        assert!((p.aod - scene.ris.position[0] / r).abs() < 1e-12);
        let back = scene.ris.direction_to([0.0, 0.0]);
        assert!((p.aoa - back).abs() < 1e-12);
        assert!(p.scatterer.is_none());
    }

    #[test]
    fn determinism() {
        let cfg = SceneConfig { seed: 99, ..SceneConfig::default() };
        assert_eq!(synthesize_scene(&cfg).unwrap(), synthesize_scene(&cfg).unwrap());
        let other = SceneConfig { seed: 100, ..cfg.clone() };
        assert_ne!(synthesize_scene(&cfg).unwrap(), synthesize_scene(&other).unwrap());
    }

    #[test]
    fn target_doppler_hand_value() {
        let cfg = SceneConfig::default();
        let f = 2.0 * 20.0 / cfg.wavelength();
        assert!((f - 3535.5).abs() < 1.0, "{f}");
    }

    #[test]
    fn all_cases_generate_valid_scenes() {
        for case in 1..=8u8 {
            for seed in 0..5 {
                let cfg = SceneConfig { seed, ..SceneConfig::for_case(case).unwrap() };
                let scene = synthesize_scene(&cfg).unwrap();
                let c = cfg.case().unwrap();
                assert_eq!(scene.paths.bs_ris.len(), cfg.l_br);
                assert_eq!(scene.paths.bs_ris[0].scatterer.is_none(), c.bs_ris_los());
                assert_eq!(scene.paths.bs_ut[0].scatterer.is_none(), c.bs_ut_los());
                assert_eq!(scene.paths.ris_ut[0].scatterer.is_none(), c.ris_ut_los());
                check_geometry(&scene);
            }
        }
    }

    fn check_geometry(scene: &Scene) {
        let bs = Pose::bs();
        let links = [
            (&scene.paths.bs_ris, bs, scene.ris),
            (&scene.paths.bs_ut, bs, scene.ut),
            (&scene.paths.ris_ut, scene.ris, scene.ut),
        ];
        for (paths, tx, rx) in links {
            for p in paths.iter() {
                let hop = p.scatterer.unwrap_or(rx.position);
                let len = distance(tx.position, hop) + distance(hop, rx.position);
                assert!((p.length_m() - len).abs() < 1e-9);
                assert!((-1.0..=1.0).contains(&p.aod) && (-1.0..=1.0).contains(&p.aoa));
                assert!((p.aod - tx.direction_to(hop)).abs() < 1e-12);
                let back = p.scatterer.unwrap_or(tx.position);
                assert!((p.aoa - rx.direction_to(back)).abs() < 1e-12);
            }
        }
        for t in &scene.paths.targets {
            assert!((-1.0..=1.0).contains(&t.angle));
            assert!(t.range_m > 0.0);
        }
    }

    #[test]
    fn los_to_nlos_ratio_is_honoured() {
        let cfg = SceneConfig { seed: 5, ..SceneConfig::default() };
        let scene = synthesize_scene(&cfg).unwrap();
        let paths = &scene.paths.bs_ris;
        for p in &paths[1..] {
            let ratio_db = 20.0 * (paths[0].gain.norm() / p.gain.norm()).log10();
            assert!((ratio_db - 20.0).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = SceneConfig { n_ris: 10, n_ut: 16, ..SceneConfig::default() };
        assert!(matches!(synthesize_scene(&cfg), Err(Error::InvalidConfig(_))));
    }
}
