//! Positioning and array-orientation estimation.
//!
//! LoS links give the pose in closed form. Without a LoS path the RIS (or UT)
//! is found by a bracketed grid search over the BS-scatterer distances of the
//! two strongest paths; every other unknown follows geometrically per cell.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::{
    circle_circle_intersect, cross, dot, ellipse_line_intersect, norm, point_at, rotate_by_sine, scale, sub, unit,
    Point,
};
use crate::sbtts::{RisPathEstimate, UtPathEstimate};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    pub position: Point,
    /// Unit array normal.
    pub orientation: Point,
    pub cost: f64,
}

/// `r̄·(θ̄, √(1−θ̄²))`.
pub fn los_position(range_m: f64, theta: f64) -> Result<Point> {
    if !(range_m > 0.0) {
        return Err(Error::PositioningFailure(format!("LoS range {range_m} m is not positive")));
    }
    Ok(point_at(range_m, theta))
}

/// Pose of a node reached by a LoS path of length `range_m`, seen from the
/// BS at `theta` and seeing the BS at `phi`.
pub fn los_pose(range_m: f64, theta: f64, phi: f64) -> Result<PoseEstimate> {
    let position = los_position(range_m, theta)?;
    let back = unit(scale(position, -1.0));
    Ok(PoseEstimate { position, orientation: rotate_by_sine(back, phi), cost: 0.0 })
}

/// The two RIS poses consistent with a LoS two-way reading.
pub fn los_ris_candidates(est: &RisPathEstimate) -> Result<[PoseEstimate; 2]> {
    let [a, b] = est.aoa_candidates;
    Ok([los_pose(est.range_m, est.aod, a)?, los_pose(est.range_m, est.aod, b)?])
}

/// One estimated path as TDFS sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct PathObservation {
    /// BS-side direction.
    pub theta: f64,
    /// Candidate directions at the far node.
    pub phis: Vec<f64>,
    /// Polyline length BS-scatterer-node.
    pub range_m: f64,
    /// `|ḡ|²`.
    pub weight: f64,
}

impl From<&RisPathEstimate> for PathObservation {
    fn from(e: &RisPathEstimate) -> Self {
        Self { theta: e.aod, phis: e.aoa_candidates.to_vec(), range_m: e.range_m, weight: e.gain.norm_sqr() }
    }
}

impl From<&UtPathEstimate> for PathObservation {
    fn from(e: &UtPathEstimate) -> Self {
        Self { theta: e.aod, phis: vec![e.aoa], range_m: e.range_m, weight: e.gain.norm_sqr() }
    }
}

fn orientation_residual(anchors: &[Point], position: Point, phis: &[f64], weights: &[f64], q: Point) -> f64 {
    anchors
        .iter()
        .zip(phis)
        .zip(weights)
        .map(|((s, phi), w)| {
            let l = unit(sub(*s, position));
            w * (phi - cross(l, q)).powi(2)
        })
        .sum()
}

/// Array normal at `position` that sees the two anchor scatterers at `phis`.
///
/// Solves `[−l_y, l_x]·q = φ` for both anchors, `l` the unit vector from the
/// node to the anchor, normalises `q` and returns it with the weighted
/// residual `Σ w(φ − l×q̂)²`.
pub fn solve_ris_orientation(anchors: [Point; 2], position: Point, phis: [f64; 2], weights: [f64; 2]) -> Result<(Point, f64)> {
    let l1 = unit(sub(anchors[0], position));
    let l2 = unit(sub(anchors[1], position));
    let (a, b, c, d) = (-l1[1], l1[0], -l2[1], l2[0]);
    let det = a * d - b * c;
    if det.abs() < 1e-12 {
        return Err(Error::DegenerateAnchors);
    }
    let q = [(d * phis[0] - b * phis[1]) / det, (a * phis[1] - c * phis[0]) / det];
    let n = norm(q);
    if !(n > 0.0) {
        return Err(Error::DegenerateAnchors);
    }
    let q = scale(q, 1.0 / n);
    Ok((q, orientation_residual(&anchors, position, &phis, &weights, q)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdfsParams {
    /// Grid points per anchor and iteration, `B`.
    pub grid: usize,
    /// Iterations, `I`.
    pub iterations: usize,
    /// The next bracket spans grid indices `b* ± shrink`, clamped.
    pub shrink: usize,
}

impl Default for TdfsParams {
    fn default() -> Self {
        Self { grid: 100, iterations: 5, shrink: 10 }
    }
}

/// Search state after one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TdfsState {
    /// `[(R_L, R_R); 2]` searched in this iteration.
    pub brackets: [(f64, f64); 2],
    pub iteration: usize,
    /// Best cost over this iteration's grid.
    pub grid_best: f64,
    /// Best cost found so far.
    pub best_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdfsResult {
    pub pose: PoseEstimate,
    /// Scatterer of each path; `None` where the geometry has no solution.
    pub scatterers: Vec<Option<Point>>,
    /// Candidate tests evaluated.
    pub tests: u64,
    pub history: Vec<TdfsState>,
}

/// Penalty for a path that the candidate pose cannot explain: the largest
/// possible squared direction error.
const MISS_PENALTY: f64 = 4.0;

struct CellFit {
    cost: f64,
    position: Point,
    orientation: Point,
    scatterers: Vec<Option<Point>>,
}

/// A linear array only sees its front half-plane. Without this check every
/// cell has a mirrored twin, facing away from both anchors, that fits the
/// anchor directions equally well.
fn faces(position: Point, normal: Point, point: Point) -> bool {
    dot(sub(point, position), normal) > 0.0
}

/// Cost of the grid cell with anchor distances `psi`, with the number of
/// candidate tests it took. `None` when the anchor circles do not meet.
fn evaluate_cell(paths: &[PathObservation], psi: [f64; 2], keep: bool) -> (Option<CellFit>, u64) {
    let mut tests = 0;
    let anchors = [point_at(psi[0], paths[0].theta), point_at(psi[1], paths[1].theta)];
    let radii = [paths[0].range_m - psi[0], paths[1].range_m - psi[1]];
    if radii[0] <= 0.0 || radii[1] <= 0.0 {
        return (None, tests);
    }
    let Ok(points) = circle_circle_intersect(anchors[0], radii[0], anchors[1], radii[1]) else {
        return (None, tests);
    };
    if points.is_empty() {
        return (None, tests);
    }
    let weights = [paths[0].weight, paths[1].weight];
    let mut best: Option<(f64, Point, Point)> = None;
    for &p in &points {
        for &phi1 in &paths[0].phis {
            for &phi2 in &paths[1].phis {
                tests += 1;
                if let Ok((q, r)) = solve_ris_orientation(anchors, p, [phi1, phi2], weights) {
                    if !anchors.iter().all(|a| faces(p, q, *a)) {
                        continue;
                    }
                    if best.is_none_or(|b| r < b.0) {
                        best = Some((r, p, q));
                    }
                }
            }
        }
    }
    let Some((mut cost, position, orientation)) = best else {
        return (None, tests);
    };
    let mut scatterers = if keep { vec![Some(anchors[0]), Some(anchors[1])] } else { Vec::new() };
    for path in &paths[2..] {
        let dir = point_at(1.0, path.theta);
        let hits: Vec<Point> = ellipse_line_intersect([0.0, 0.0], position, path.range_m, dir)
            .map(|v| v.into_iter().filter(|s| dot(*s, dir) > 0.0).collect())
            .unwrap_or_default();
        let mut term = (MISS_PENALTY, None);
        for s in hits {
            if !faces(position, orientation, s) {
                continue;
            }
            let l = unit(sub(s, position));
            for &phi in &path.phis {
                tests += 1;
                let e = (phi - cross(l, orientation)).powi(2);
                if e < term.0 {
                    term = (e, Some(s));
                }
            }
        }
        cost += path.weight * term.0;
        if keep {
            scatterers.push(term.1);
        }
    }
    (Some(CellFit { cost, position, orientation, scatterers }), tests)
}

/// Cost of one anchor-distance pair; `+∞` when infeasible.
pub fn tdfs_cell_cost(paths: &[PathObservation], psi: [f64; 2]) -> Result<f64> {
    check_paths(paths)?;
    Ok(evaluate_cell(paths, psi, false).0.map_or(f64::INFINITY, |f| f.cost))
}

fn check_paths(paths: &[PathObservation]) -> Result<()> {
    if paths.len() < 2 {
        return Err(Error::PositioningFailure(format!("{} paths, at least two needed", paths.len())));
    }
    if paths.iter().any(|p| p.phis.is_empty() || !(p.range_m > 0.0)) {
        return Err(Error::PositioningFailure("path without direction candidates or range".into()));
    }
    Ok(())
}

/// Two-dimensional fast search. `paths[0]` and `paths[1]` are the anchors.
pub fn tdfs(paths: &[PathObservation], params: TdfsParams) -> Result<TdfsResult> {
    check_paths(paths)?;
    let b = params.grid;
    if b < 3 || params.iterations == 0 || params.shrink == 0 {
        return Err(Error::InvalidConfig(format!(
            "TDFS needs B >= 3, I >= 1 and a nonzero shrink, got B={b}, I={}, shrink={}",
            params.iterations, params.shrink
        )));
    }
    let k = params.shrink;
    let mut brackets = [(0.0, paths[0].range_m), (0.0, paths[1].range_m)];
    let mut best: Option<([f64; 2], f64)> = None;
    let mut history = Vec::with_capacity(params.iterations);
    let mut tests = 0u64;
    let grid = |(lo, hi): (f64, f64), i: usize| lo + i as f64 * (hi - lo) / (b - 1) as f64;

    for iteration in 0..params.iterations {
        let rows: Vec<(f64, usize, usize, u64)> = (0..b)
            .into_par_iter()
            .map(|i| {
                let mut row = (f64::INFINITY, i, 0, 0u64);
                for j in 0..b {
                    let (fit, n) = evaluate_cell(paths, [grid(brackets[0], i), grid(brackets[1], j)], false);
                    row.3 += n;
                    if let Some(f) = fit {
                        if f.cost < row.0 {
                            row.0 = f.cost;
                            row.2 = j;
                        }
                    }
                }
                row
            })
            .collect();
        tests += rows.iter().map(|r| r.3).sum::<u64>();
        let cell = rows.iter().filter(|r| r.0.is_finite()).min_by(|x, y| x.0.total_cmp(&y.0));
        let Some(&(cost, bi, bj, _)) = cell else {
            if best.is_some() {
                break;
            }
            return Err(Error::PositioningFailure("no grid cell has intersecting anchor circles".into()));
        };
        let psi = [grid(brackets[0], bi), grid(brackets[1], bj)];
        if best.is_none_or(|(_, c)| cost < c) {
            best = Some((psi, cost));
        }
        history.push(TdfsState { brackets, iteration, grid_best: cost, best_cost: best.map_or(cost, |b| b.1) });
        let shrink = |br: (f64, f64), c: usize| (grid(br, c.saturating_sub(k)), grid(br, (c + k).min(b - 1)));
        brackets = [shrink(brackets[0], bi), shrink(brackets[1], bj)];
    }

    let (psi, _) = best.expect("at least one feasible iteration");
    let fit = evaluate_cell(paths, psi, true).0.expect("best cell is feasible");
    Ok(TdfsResult {
        pose: PoseEstimate { position: fit.position, orientation: fit.orientation, cost: fit.cost },
        scatterers: fit.scatterers,
        tests,
        history,
    })
}
