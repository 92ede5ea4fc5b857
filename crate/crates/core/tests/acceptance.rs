//! Acceptance checks, one PASS/FAIL line each. Runs as a plain binary so the
//! lines always reach the test log. Criteria known not to hold are listed in
//! `EXPECTED_FAILURES` with the reason; any other failure fails the run.

use std::f64::consts::PI;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use risac::alignment::{beamforming_gain, ideal_beams, overhead_for_case};
use risac::harness::{balance_target_power, domain_peaks, run_trial, trial_seed, Experiment, TrialOptions};
use risac::math::{dft_matrix, direction_distance, idft_matrix, offgrid_estimate, wrap_direction, DomainTransform};
use risac::paoe::{tdfs, PathObservation, TdfsParams};
use risac::sbtts::estimate_aoa_candidates;
use risac::scene::{circle_circle_intersect, distance, ellipse_line_intersect, synthesize_scene, Point, SceneConfig};

/// Ids that fail by analysis, not by bug.
const EXPECTED_FAILURES: &[(&str, &str)] = &[
    (
        "transform-identity",
        "with unnormalised W and F the product W^T F is N*I, so W^T F/sqrt(N) = sqrt(N)*I; only W^T F/N is the identity",
    ),
    (
        "fig2-separation",
        "the sqrt(N_RIS/2) bound ignores grid offsets: an off-grid angle, Doppler or delay keeps as little as 2/pi of a peak, \
         and the two echoes' delays are off-grid independently, so the ratio reaches sqrt(N_RIS)*(2/pi)^2 = 13.2 dB",
    ),
];

struct Line {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn fig2_separation() -> Line {
    let start = Instant::now();
    let bound = 20.0 * (128.0f64 / 2.0).sqrt().log10();
    let mut pass = 0;
    let mut worst = f64::INFINITY;
    for seed in 0..50 {
        let cfg = SceneConfig { seed, ..SceneConfig::fig2() };
        let mut scene = synthesize_scene(&cfg).unwrap();
        balance_target_power(&mut scene).unwrap();
        let (ad, dd) = domain_peaks(&scene, 50.0).unwrap().separation_db();
        worst = worst.min(ad.min(dd));
        if ad >= 18.0 && dd >= 18.0 {
            pass += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Line {
        id: "fig2-separation",
        pass: pass >= 45 && secs < 120.0,
        detail: format!("{pass}/50 trials >= 18 dB both ways (need 45), worst {worst:.2} dB, bound {bound:.2} dB, {secs:.1} s"),
    }
}

fn discrimination_bound() -> Line {
    let root = (128.0f64 / 2.0).sqrt();
    let (mut violations, mut ris_side, mut worst) = (0, 0, f64::INFINITY);
    for seed in 0..100 {
        let cfg = SceneConfig { l_br: 1, l_bu: 1, l_ru: 1, targets: 1, seed, ..SceneConfig::default() };
        let scene = synthesize_scene(&cfg).unwrap();
        let q = domain_peaks(&scene, 50.0).unwrap();
        let ratio = if q.ris_ad >= q.target_dd {
            ris_side += 1;
            q.ris_ad / q.target_ad
        } else {
            q.target_dd / q.ris_dd
        };
        worst = worst.min(ratio);
        if ratio < root {
            violations += 1;
        }
    }
    Line {
        id: "discrimination-bound",
        pass: violations == 0,
        detail: format!("{violations} violations in 100 scenes ({ris_side} RIS-dominant), smallest ratio {worst:.2} vs {root:.2}"),
    }
}

fn dense_domain_map(y: &ndarray::Array2<Complex64>) -> (ndarray::Array2<Complex64>, ndarray::Array2<Complex64>) {
    let (n, m) = y.dim();
    let mut ad = ndarray::Array2::zeros((n, m));
    for s in 0..n {
        for k in 0..m {
            ad[[s, k]] = (0..m).map(|j| y[[s, j]] * Complex64::from_polar(1.0, 2.0 * PI * (j * k) as f64 / m as f64)).sum();
        }
    }
    let mut dd = ndarray::Array2::zeros((n, m));
    for r in 0..n {
        for k in 0..m {
            dd[[r, k]] = (0..n)
                .map(|s| ad[[s, k]] * Complex64::from_polar(1.0, -2.0 * PI * (s * r) as f64 / n as f64))
                .sum::<Complex64>()
                / (n as f64).sqrt();
        }
    }
    (ad, dd)
}

fn transform_identity() -> Line {
    let mut stated = 0.0f64;
    let mut scaled = 0.0f64;
    for n in [4usize, 16, 128] {
        let prod = dft_matrix(n).t().dot(&idft_matrix(n));
        for ((i, j), v) in prod.indexed_iter() {
            let eye = if i == j { 1.0 } else { 0.0 };
            stated = stated.max((v / (n as f64).sqrt() - eye).norm());
            scaled = scaled.max((v / n as f64 - eye).norm());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let tr = DomainTransform::new(32, 32).unwrap();
    let mut fft = 0.0f64;
    for _ in 0..20 {
        let y = ndarray::Array2::from_shape_fn((32, 32), |_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let map = tr.domain_map(y.view()).unwrap();
        let (ad, dd) = dense_domain_map(&y);
        fft = fft.max((&map.angle_delay - &ad).iter().map(|v| v.norm()).fold(0.0, f64::max));
        fft = fft.max((&map.doppler_delay - &dd).iter().map(|v| v.norm()).fold(0.0, f64::max));
    }
    Line {
        id: "transform-identity",
        pass: stated <= 1e-10 && fft <= 1e-9,
        detail: format!("max |W^T F/sqrt(N) - I| = {stated:.3e}; max |W^T F/N - I| = {scaled:.1e}; FFT vs dense {fft:.1e}"),
    }
}

fn offgrid_exactness() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for n in [16usize, 128] {
        let w = dft_matrix(n);
        for _ in 0..1000 {
            let theta: f64 = rng.random_range(-1.0..1.0);
            let a = ndarray::Array1::from_shape_fn(n, |k| Complex64::from_polar(1.0 / (n as f64).sqrt(), PI * k as f64 * theta));
            let est = offgrid_estimate(w.dot(&a).view()).unwrap();
            worst = worst.max(direction_distance(est, theta));
        }
    }
    Line { id: "offgrid-exactness", pass: worst < 1e-6, detail: format!("worst error {worst:.2e} over 2x1000 vectors") }
}

/// Roots of `f` on `[lo, hi)` by scanning at `step` and bisecting each sign
/// change.
fn scan_roots(lo: f64, hi: f64, step: f64, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut out = Vec::new();
    let steps = ((hi - lo) / step).ceil() as usize;
    let mut a = lo;
    let mut fa = f(a);
    for i in 1..=steps {
        let b = lo + i as f64 * step;
        let fb = f(b);
        if fa == 0.0 {
            out.push(a);
        } else if fa * fb < 0.0 {
            let (mut l, mut h, mut fl) = (a, b, fa);
            for _ in 0..100 {
                let mid = 0.5 * (l + h);
                let fm = f(mid);
                if fm * fl <= 0.0 {
                    h = mid;
                } else {
                    l = mid;
                    fl = fm;
                }
            }
            out.push(0.5 * (l + h));
        }
        a = b;
        fa = fb;
    }
    out
}

fn same_points(mut a: Vec<Point>, mut b: Vec<Point>, tol: f64) -> bool {
    let key = |p: &Point| (p[0], p[1]);
    a.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
    b.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
    a.len() == b.len() && a.iter().zip(&b).all(|(p, q)| distance(*p, *q) < tol)
}

fn geometry_oracles() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut cc_ok, mut el_ok) = (0, 0);
    let mut counts = [0usize; 3];
    let mut done = 0;
    while done < 200 {
        let c1 = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
        let c2 = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
        let (r1, r2): (f64, f64) = (rng.random_range(1.0..12.0), rng.random_range(1.0..12.0));
        let d = distance(c1, c2);
        if (d - (r1 + r2)).abs() < 1e-2 || (d - (r1 - r2).abs()).abs() < 1e-2 {
            continue;
        }
        done += 1;
        let got = circle_circle_intersect(c1, r1, c2, r2).unwrap();
        let on = |t: f64| [c1[0] + r1 * t.cos(), c1[1] + r1 * t.sin()];
        let roots = scan_roots(0.0, 2.0 * PI, 1e-4, |t| distance(on(t), c2) - r2);
        let want: Vec<Point> = roots.into_iter().map(on).collect();
        counts[want.len().min(2)] += 1;
        if same_points(got, want, 1e-6) {
            cc_ok += 1;
        }
    }
    done = 0;
    while done < 200 {
        let f1 = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
        let f2 = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
        let sum = distance(f1, f2) + rng.random_range(0.5..25.0);
        let ang: f64 = rng.random_range(0.0..2.0 * PI);
        let u = [ang.cos(), ang.sin()];
        let f = |t: f64| {
            let p = [t * u[0], t * u[1]];
            distance(p, f1) + distance(p, f2) - sum
        };
        let reach = 60.0;
        let min = (0..=1200).map(|i| f(-reach + i as f64 * 0.1)).fold(f64::INFINITY, f64::min);
        if min.abs() < 1e-2 {
            continue;
        }
        done += 1;
        let got = ellipse_line_intersect(f1, f2, sum, u).unwrap();
        let want: Vec<Point> = scan_roots(-reach, reach, 1e-4, f).into_iter().map(|t| [t * u[0], t * u[1]]).collect();
        if same_points(got, want, 1e-6) {
            el_ok += 1;
        }
    }
    Line {
        id: "geometry-oracles",
        pass: cc_ok == 200 && el_ok == 200,
        detail: format!(
            "circle-circle {cc_ok}/200 (0/1/2 roots: {}/{}/{}), ellipse-line {el_ok}/200",
            counts[0], counts[1], counts[2]
        ),
    }
}

fn end_to_end_noiseless() -> Line {
    let mut worst = [0.0f64; 4];
    let mut slowest = 0.0f64;
    let mut failures = Vec::new();
    for seed in 0..5 {
        let cfg = SceneConfig { l_br: 1, l_bu: 1, l_ru: 1, targets: 1, seed, ..SceneConfig::for_case(1).unwrap() };
        let start = Instant::now();
        let o = run_trial(&cfg, 50.0, &TrialOptions { noise: false, spebtts: false, ..Default::default() }).unwrap();
        slowest = slowest.max(start.elapsed().as_secs_f64());
        if let Some(e) = o.first_error() {
            failures.push(format!("seed {seed}: {e}"));
            continue;
        }
        let e = &o.ipebtts_errors;
        let ut = distance(o.ut_pose.as_ref().unwrap().position, o.scene.ut.position);
        let got = [e.ris_m.unwrap(), e.target_range_m.unwrap_or(f64::INFINITY), e.target_velocity_mps.unwrap_or(f64::INFINITY), ut];
        for (w, g) in worst.iter_mut().zip(got) {
            *w = w.max(g);
        }
    }
    let pass = failures.is_empty() && worst[0] < 0.1 && worst[1] < 0.1 && worst[2] < 0.5 && worst[3] < 0.1 && slowest < 60.0;
    Line {
        id: "end-to-end-noiseless",
        pass,
        detail: format!(
            "5 scenes, worst RIS {:.3e} m, target range {:.3e} m, velocity {:.3e} m/s, UT {:.3e} m, slowest {slowest:.1} s{}",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            if failures.is_empty() { String::new() } else { format!("; {failures:?}") }
        ),
    }
}

fn tdfs_recovery() -> Line {
    let params = TdfsParams::default();
    let (mut ok, mut worst, mut max_tests) = (0, 0.0f64, 0u64);
    for seed in 0..20 {
        let scene = synthesize_scene(&SceneConfig { seed, ..SceneConfig::for_case(3).unwrap() }).unwrap();
        let mut paths = scene.paths.bs_ris.clone();
        paths.sort_by(|a, b| b.gain.norm_sqr().total_cmp(&a.gain.norm_sqr()));
        let obs: Vec<PathObservation> = paths
            .iter()
            .map(|p| PathObservation {
                theta: p.aod,
                phis: estimate_aoa_candidates(wrap_direction(2.0 * p.aoa)).to_vec(),
                range_m: p.length_m(),
                weight: p.gain.norm_sqr(),
            })
            .collect();
        let out = tdfs(&obs, params).unwrap();
        let err = distance(out.pose.position, scene.ris.position);
        worst = worst.max(err);
        max_tests = max_tests.max(out.tests);
        if err < 0.5 {
            ok += 1;
        }
    }
    let cap = 4 * 5 * 100 * 100 * 6;
    Line {
        id: "tdfs-recovery",
        pass: ok == 20 && max_tests <= cap,
        detail: format!("{ok}/20 scenes < 0.5 m (worst {worst:.2e} m), max candidate tests {max_tests} <= {cap}"),
    }
}

fn overhead() -> Line {
    let got: Vec<usize> = (1..=8).map(|c| overhead_for_case(c, 64, 128, 16).unwrap()).collect();
    let want = [8194, 10240, 8192, 10240, 8194, 10240, 8192, 10240];
    Line { id: "overhead", pass: got == want, detail: format!("{got:?}") }
}

fn aligned_gain() -> Line {
    let mut ideal_worst = 0.0f64;
    for seed in 0..5 {
        let cfg = SceneConfig { l_br: 1, l_bu: 1, l_ru: 1, targets: 0, seed, ..SceneConfig::default() };
        let scene = synthesize_scene(&cfg).unwrap();
        let g = beamforming_gain(&scene, &ideal_beams(&scene).unwrap());
        ideal_worst = ideal_worst.max((g / 4096.0 - 1.0).abs());
    }
    let opts = TrialOptions { spebtts: false, sweep: true, ..Default::default() };
    let (mut proposed, mut sweep) = (Vec::new(), Vec::new());
    for t in 0..20 {
        let cfg = SceneConfig { seed: trial_seed(0, Experiment::GainLos, 1, 0, t), ..SceneConfig::for_case(1).unwrap() };
        let o = run_trial(&cfg, 50.0, &opts).unwrap();
        proposed.push(o.alignment.as_ref().map(|a| beamforming_gain(&o.scene, &a.beams)).unwrap_or(0.0));
        sweep.push(o.gain_sweep.and_then(|g| g.ok()).unwrap_or(0.0));
    }
    let (mp, ms) = (median(&mut proposed), median(&mut sweep));
    let shortfall = 20.0 * (4096.0 / mp).log10();
    Line {
        id: "aligned-gain",
        pass: ideal_worst < 1e-3 && shortfall <= 3.0 && mp >= ms,
        detail: format!(
            "ideal within {:.2e}; 20 trials at 50 dBm: median proposed {mp:.1} ({shortfall:.2} dB below 4096), median sweep {ms:.1}",
            ideal_worst
        ),
    }
}

fn estimator_ordering() -> Line {
    let opts = TrialOptions { spebtts: true, ..Default::default() };
    let (mut ri, mut rs, mut ti, mut ts) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let big = 1e3;
    for t in 0..100 {
        let cfg = SceneConfig { seed: trial_seed(0, Experiment::PosLos, 1, 0, t), ..SceneConfig::for_case(1).unwrap() };
        let o = run_trial(&cfg, 50.0, &opts).unwrap();
        ri.push(o.ipebtts_errors.ris_m.unwrap_or(big));
        ti.push(o.ipebtts_errors.target_m.unwrap_or(big));
        rs.push(o.spebtts_errors.ris_m.unwrap_or(big));
        ts.push(o.spebtts_errors.target_m.unwrap_or(big));
    }
    let (ri, rs, ti, ts) = (median(&mut ri), median(&mut rs), median(&mut ti), median(&mut ts));
    Line {
        id: "ipebtts-vs-spebtts",
        pass: ri <= rs && ti <= ts,
        detail: format!("100 paired trials, medians: RIS {ri:.3e} vs {rs:.3e} m, targets {ti:.3e} vs {ts:.3e} m"),
    }
}

fn main() {
    let checks: [fn() -> Line; 10] = [
        fig2_separation,
        discrimination_bound,
        transform_identity,
        offgrid_exactness,
        geometry_oracles,
        end_to_end_noiseless,
        tdfs_recovery,
        overhead,
        aligned_gain,
        estimator_ordering,
    ];
    let mut unexpected = Vec::new();
    for check in checks {
        let line = check();
        let expected = EXPECTED_FAILURES.iter().find(|(id, _)| *id == line.id);
        println!("{} {}: {}", if line.pass { "PASS" } else { "FAIL" }, line.id, line.detail);
        match (line.pass, expected) {
            (false, Some((_, why))) => println!("     known: {why}"),
            (false, None) => unexpected.push(line.id),
            (true, Some(_)) => println!("     (listed as an expected failure but passed)"),
            (true, None) => {}
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
