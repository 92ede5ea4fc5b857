//! Monte Carlo trials, experiment orchestration and CSV output.
//!
//! Trial seeds: `mix(x) = splitmix64(x)`, and for experiment `e`, case `c`,
//! power index `p` and trial index `t` the scene seed is
//! `mix(mix(mix(mix(master ^ e) ^ c) ^ p) ^ t)`. Echo and UT noise use
//! `mix(seed ^ 1)`, uplink and reflected-check probes `mix(seed ^ 2)`, and
//! the beam-sweep baseline `mix(seed ^ 3)`. Results depend only on these
//! numbers, never on scheduling.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{s, Array3};
use rayon::prelude::*;

use crate::airlink::{simulate_bs_stacks, simulate_stacks, Noise, ProbeAccess, SceneProbe};
use crate::alignment::{
    beam_sweep_baseline, beamforming_gain, resolve_los_ambiguity, ris_ut_sweep, ru_angles, AlignmentResult, Beams,
};
use crate::error::{Error, Result};
use crate::math::DomainTransform;
use crate::paoe::{los_pose, los_ris_candidates, tdfs, PathObservation, PoseEstimate, TdfsParams};
use crate::sbtts::{
    run_ipebtts, run_spebtts, run_ut_training, PathClass, SensingOutput, SweepParams, UtPathEstimate, RHO_THRESHOLD,
};
use crate::scene::{distance, point_at, spatial_direction, sub, LinkCase, Point, Scene, SceneConfig};

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Scene seed of one trial.
pub fn trial_seed(master: u64, experiment: Experiment, case_id: u8, power_index: usize, trial: usize) -> u64 {
    let mut h = splitmix64(master ^ experiment.index());
    h = splitmix64(h ^ case_id as u64);
    h = splitmix64(h ^ power_index as u64);
    splitmix64(h ^ trial as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Experiment {
    Fig2,
    PosLos,
    GainLos,
    PosNlos,
    GainNlos,
    GainCases35,
    GainCases2468,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Fig2,
        Experiment::PosLos,
        Experiment::GainLos,
        Experiment::PosNlos,
        Experiment::GainNlos,
        Experiment::GainCases35,
        Experiment::GainCases2468,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Fig2 => "fig2",
            Experiment::PosLos => "pos-los",
            Experiment::GainLos => "gain-los",
            Experiment::PosNlos => "pos-nlos",
            Experiment::GainNlos => "gain-nlos",
            Experiment::GainCases35 => "gain-cases35",
            Experiment::GainCases2468 => "gain-cases2468",
        }
    }

    fn index(self) -> u64 {
        Self::ALL.iter().position(|e| *e == self).expect("listed") as u64
    }

    pub fn cases(self) -> &'static [u8] {
        match self {
            Experiment::Fig2 | Experiment::PosLos | Experiment::GainLos => &[1],
            Experiment::PosNlos | Experiment::GainNlos => &[7],
            Experiment::GainCases35 => &[3, 5],
            Experiment::GainCases2468 => &[2, 4, 6, 8],
        }
    }

    /// Positioning experiments run both estimators; gain experiments run the
    /// beam-sweep baseline.
    pub fn compares_estimators(self) -> bool {
        matches!(self, Experiment::PosLos | Experiment::PosNlos)
    }

    pub fn runs_sweep(self) -> bool {
        matches!(self, Experiment::GainLos | Experiment::GainNlos | Experiment::GainCases35 | Experiment::GainCases2468)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown experiment `{s}`")))
    }
}

/// What to run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    pub powers_dbm: Vec<f64>,
    pub trials: usize,
    pub master_seed: u64,
    /// Config keys applied over each case's defaults.
    pub overrides: toml::Table,
    /// Add a `runtime_ms` column. Timings make the output nondeterministic.
    pub timing: bool,
}

impl ExperimentSpec {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            powers_dbm: vec![10.0, 20.0, 30.0, 40.0, 50.0],
            trials: 50,
            master_seed: 0,
            overrides: toml::Table::new(),
            timing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trial count must be at least 1".into()));
        }
        if self.powers_dbm.is_empty() || self.powers_dbm.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidConfig("power list must be nonempty and finite".into()));
        }
        for &c in self.experiment.cases() {
            case_config(c, &self.overrides)?;
        }
        Ok(())
    }
}

/// Config keys applied over a case's defaults.
pub type Overrides = toml::Table;

/// Config keys from a `key = value` file, kept as overrides.
pub fn overrides_from_str(text: &str) -> Result<Overrides> {
    text.parse::<toml::Table>().map_err(|e| Error::InvalidConfig(e.message().to_string()))
}

/// Apply one `key=value` assignment; the value is read as a TOML value, or
/// as a bare string when that fails.
pub fn apply_assignment(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (k, v) = assignment
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("expected key=value, got `{assignment}`")))?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() {
        return Err(Error::InvalidConfig(format!("empty key in `{assignment}`")));
    }
    let value = format!("x = {v}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("x"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    table.insert(k.to_string(), value);
    Ok(())
}

/// Defaults for `case_id` with `overrides` applied on top.
pub fn case_config(case_id: u8, overrides: &toml::Table) -> Result<SceneConfig> {
    let base = SceneConfig::for_case(case_id)?;
    let mut table = match toml::Value::try_from(&base) {
        Ok(toml::Value::Table(t)) => t,
        _ => unreachable!("config serialises to a table"),
    };
    for (k, v) in overrides {
        table.insert(k.clone(), v.clone());
    }
    table.insert("case_id".into(), toml::Value::Integer(case_id as i64));
    let cfg: SceneConfig =
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::InvalidConfig(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub experiment: Experiment,
    pub case_id: u8,
    pub power_dbm: f64,
    pub trial: usize,
    pub seed: u64,
    /// `ok`, or the first failure.
    pub status: String,
    pub ris_err_ipebtts_m: Option<f64>,
    pub target_err_ipebtts_m: Option<f64>,
    pub ris_err_spebtts_m: Option<f64>,
    pub target_err_spebtts_m: Option<f64>,
    pub ut_err_m: Option<f64>,
    pub gain_proposed: Option<f64>,
    pub gain_sweep: Option<f64>,
    pub overhead_proposed: Option<usize>,
    pub overhead_sweep: Option<usize>,
    pub runtime_ms: Option<f64>,
}

pub const CSV_COLUMNS: [&str; 15] = [
    "experiment",
    "case_id",
    "power_dbm",
    "trial",
    "seed",
    "status",
    "ris_err_ipebtts_m",
    "target_err_ipebtts_m",
    "ris_err_spebtts_m",
    "target_err_spebtts_m",
    "ut_err_m",
    "gain_proposed",
    "gain_sweep",
    "overhead_proposed",
    "overhead_sweep",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrialRecord {
    fn fields(&self, timing: bool) -> Vec<String> {
        let mut f = vec![
            self.experiment.to_string(),
            self.case_id.to_string(),
            self.power_dbm.to_string(),
            self.trial.to_string(),
            self.seed.to_string(),
            self.status.clone(),
            opt(self.ris_err_ipebtts_m),
            opt(self.target_err_ipebtts_m),
            opt(self.ris_err_spebtts_m),
            opt(self.target_err_spebtts_m),
            opt(self.ut_err_m),
            opt(self.gain_proposed),
            opt(self.gain_sweep),
            opt(self.overhead_proposed),
            opt(self.overhead_sweep),
        ];
        if timing {
            f.push(opt(self.runtime_ms));
        }
        f
    }
}

/// Knobs for a single trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOptions {
    pub noise: bool,
    pub spebtts: bool,
    pub sweep: bool,
    pub tdfs: TdfsParams,
}

impl Default for TrialOptions {
    fn default() -> Self {
        Self { noise: true, spebtts: true, sweep: false, tdfs: TdfsParams::default() }
    }
}

/// Errors of one estimator's output against the truth.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SensingErrors {
    pub ris_m: Option<f64>,
    /// Mean over matched targets.
    pub target_m: Option<f64>,
    pub target_range_m: Option<f64>,
    pub target_velocity_mps: Option<f64>,
    pub matched_targets: usize,
}

/// RIS pose hypotheses from one estimator output.
#[derive(Debug, Clone, PartialEq)]
pub struct RisFix {
    /// One pose, or the two LoS orientation candidates.
    pub candidates: Vec<PoseEstimate>,
    /// RIS-side direction of the dominant BS-RIS path, per candidate.
    pub phi_br: Vec<f64>,
    /// BS-side direction of the dominant BS-RIS path.
    pub theta_br: f64,
}

/// Everything a trial produced.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub scene: Scene,
    pub ipebtts: Result<SensingOutput>,
    pub spebtts: Option<Result<SensingOutput>>,
    pub ipebtts_errors: SensingErrors,
    pub spebtts_errors: SensingErrors,
    pub ris_fix: Result<RisFix>,
    pub ut_paths: Result<Vec<UtPathEstimate>>,
    pub ut_pose: Result<PoseEstimate>,
    pub alignment: Result<AlignmentResult>,
    pub gain_sweep: Option<Result<f64>>,
    pub overhead_sweep: Option<usize>,
}

impl TrialOutcome {
    pub fn first_error(&self) -> Option<&Error> {
        let sensing = [Some(&self.ipebtts), self.spebtts.as_ref()];
        sensing
            .into_iter()
            .flatten()
            .find_map(|r| r.as_ref().err())
            .or(self.ris_fix.as_ref().err())
            .or(self.ut_paths.as_ref().err())
            .or(self.ut_pose.as_ref().err())
            .or(self.alignment.as_ref().err())
            .or(self.gain_sweep.as_ref().and_then(|g| g.as_ref().err()))
    }
}

/// Greedy nearest-pair matching; returns `(true, estimate)` index pairs.
pub fn match_targets(truth: &[Point], est: &[Point]) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(f64, usize, usize)> = truth
        .iter()
        .enumerate()
        .flat_map(|(i, t)| est.iter().enumerate().map(move |(j, e)| (distance(*t, *e), i, j)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut used_t, mut used_e) = (vec![false; truth.len()], vec![false; est.len()]);
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if !used_t[i] && !used_e[j] {
            used_t[i] = true;
            used_e[j] = true;
            out.push((i, j));
        }
    }
    out.sort_unstable();
    out
}

/// Locate the RIS from one estimator output.
pub fn locate_ris(case: LinkCase, out: &SensingOutput, params: TdfsParams) -> Result<RisFix> {
    let first = out.ris.first().ok_or_else(|| Error::PositioningFailure("no RIS path estimated".into()))?;
    if case.bs_ris_los() {
        let cands = los_ris_candidates(first)?;
        return Ok(RisFix { candidates: cands.to_vec(), phi_br: first.aoa_candidates.to_vec(), theta_br: first.aod });
    }
    let obs: Vec<PathObservation> = out.ris.iter().map(PathObservation::from).collect();
    let r = tdfs(&obs, params)?;
    let anchor = r.scatterers[0].ok_or_else(|| Error::PositioningFailure("anchor scatterer unresolved".into()))?;
    let phi = spatial_direction(sub(anchor, r.pose.position), r.pose.orientation);
    Ok(RisFix { candidates: vec![r.pose], phi_br: vec![phi], theta_br: first.aod })
}

/// Locate the UT from its kept training paths.
pub fn locate_ut(case: LinkCase, paths: &[UtPathEstimate], params: TdfsParams) -> Result<PoseEstimate> {
    let kept: Vec<&UtPathEstimate> = paths.iter().filter(|p| p.kept).collect();
    if case.bs_ut_los() {
        let los = kept
            .iter()
            .find(|p| p.class == PathClass::Direct)
            .or(kept.first())
            .ok_or_else(|| Error::PositioningFailure("no UT path kept".into()))?;
        return los_pose(los.range_m, los.aod, los.aoa);
    }
    let obs: Vec<PathObservation> = kept.iter().map(|p| PathObservation::from(*p)).collect();
    Ok(tdfs(&obs, params)?.pose)
}

fn sensing_errors(scene: &Scene, out: &SensingOutput, ris: Option<&RisFix>) -> SensingErrors {
    let truth: Vec<Point> = scene.paths.targets.iter().map(|t| t.position()).collect();
    let est: Vec<Point> = out.targets.iter().map(|t| point_at(t.range_m, t.angle)).collect();
    let pairs = match_targets(&truth, &est);
    let mean = |f: &dyn Fn(usize, usize) -> f64| {
        (!pairs.is_empty()).then(|| pairs.iter().map(|&(i, j)| f(i, j)).sum::<f64>() / pairs.len() as f64)
    };
    SensingErrors {
        ris_m: ris.map(|r| distance(r.candidates[0].position, scene.ris.position)),
        target_m: mean(&|i, j| distance(truth[i], est[j])),
        target_range_m: mean(&|i, j| (scene.paths.targets[i].range_m - out.targets[j].range_m).abs()),
        target_velocity_mps: mean(&|i, j| (scene.paths.targets[i].velocity_mps - out.targets[j].velocity_mps).abs()),
        matched_targets: pairs.len(),
    }
}

/// Beams from the estimated geometry. Cases with a NLoS RIS-UT link finish
/// with an `N_RIS·N_UT` sweep at the estimated BS beam.
pub fn align(
    case: LinkCase,
    scene: &Scene,
    ris: &RisFix,
    ut: &PoseEstimate,
    power_dbm: f64,
    probe: &mut dyn ProbeAccess,
    sweep_noise: Noise,
) -> Result<AlignmentResult> {
    let cfg = &scene.config;
    let base = cfg.n_t * cfg.n_ris;
    if !case.ris_ut_los() {
        let r = ris_ut_sweep(scene, ris.theta_br, power_dbm, sweep_noise)?;
        return Ok(AlignmentResult {
            theta_ru: f64::NAN,
            phi_ru: r.beams.w_dir,
            phi_br: f64::NAN,
            q_ris: ris.candidates[0].orientation,
            beams: r.beams,
            overhead: base + probe.overhead() + r.overhead,
            case_id: case.id(),
        });
    }
    let angles: Vec<(f64, f64)> = ris
        .candidates
        .iter()
        .map(|c| ru_angles(c.position, c.orientation, ut.position, ut.orientation))
        .collect::<Result<_>>()?;
    let pick = if angles.len() == 2 {
        resolve_los_ambiguity(
            [ris.phi_br[0], ris.phi_br[1]],
            [angles[0].0, angles[1].0],
            ris.theta_br,
            angles[0].1,
            probe,
        )?
    } else {
        0
    };
    let (theta_ru, phi_ru) = angles[pick];
    let phi_br = ris.phi_br[pick];
    Ok(AlignmentResult {
        theta_ru,
        phi_ru,
        phi_br,
        q_ris: ris.candidates[pick].orientation,
        beams: Beams { f_dir: ris.theta_br, ris_dir: -phi_br - theta_ru, w_dir: phi_ru },
        overhead: base + probe.overhead(),
        case_id: case.id(),
    })
}

/// Run one trial on `cfg` (whose `seed` draws the scene) at `power_dbm`.
pub fn run_trial(cfg: &SceneConfig, power_dbm: f64, opts: &TrialOptions) -> Result<TrialOutcome> {
    let case = cfg.case()?;
    let scene = crate::scene::synthesize_scene(cfg)?;
    let seed = cfg.seed;
    let noise = |k: u64| if opts.noise { Noise::Awgn { seed: splitmix64(seed ^ k) } } else { Noise::None };
    let stacks = simulate_stacks(&scene, power_dbm, noise(1))?;
    let p = SweepParams::from_config(cfg);

    let ipebtts = run_ipebtts(&stacks.y, &p, cfg.l_br, cfg.targets);
    let spebtts = opts.spebtts.then(|| run_spebtts(&stacks.y, &p, cfg.l_br, cfg.targets));

    let ris_fix = match &ipebtts {
        Ok(out) => locate_ris(case, out, opts.tdfs),
        Err(e) => Err(e.clone()),
    };
    let ipebtts_errors = match &ipebtts {
        Ok(out) => sensing_errors(&scene, out, ris_fix.as_ref().ok()),
        Err(_) => SensingErrors::default(),
    };
    let spebtts_errors = match &spebtts {
        Some(Ok(out)) => {
            let fix = locate_ris(case, out, opts.tdfs).ok();
            sensing_errors(&scene, out, fix.as_ref())
        }
        _ => SensingErrors::default(),
    };

    let mut probe = SceneProbe::new(&scene, power_dbm, noise(2));
    let ut_paths = run_ut_training(&stacks.z, &p, &mut probe, cfg.l_bu, RHO_THRESHOLD);
    let ut_pose = match &ut_paths {
        Ok(paths) => locate_ut(case, paths, opts.tdfs),
        Err(e) => Err(e.clone()),
    };
    let alignment = match (&ris_fix, &ut_pose) {
        (Ok(r), Ok(u)) => align(case, &scene, r, u, power_dbm, &mut probe, noise(3)),
        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
    };
    let gain_sweep = opts.sweep.then(|| beam_sweep_baseline(&scene, power_dbm, noise(3)).map(|r| r.gain));
    let overhead_sweep = opts.sweep.then_some(cfg.n_t * cfg.n_ris * cfg.n_ut);

    Ok(TrialOutcome {
        scene,
        ipebtts,
        spebtts,
        ipebtts_errors,
        spebtts_errors,
        ris_fix,
        ut_paths,
        ut_pose,
        alignment,
        gain_sweep,
        overhead_sweep,
    })
}

fn record_from(
    experiment: Experiment,
    cfg: &SceneConfig,
    power_dbm: f64,
    trial: usize,
    outcome: Result<TrialOutcome>,
    runtime_ms: Option<f64>,
) -> TrialRecord {
    let mut rec = TrialRecord {
        experiment,
        case_id: cfg.case_id,
        power_dbm,
        trial,
        seed: cfg.seed,
        status: "ok".into(),
        ris_err_ipebtts_m: None,
        target_err_ipebtts_m: None,
        ris_err_spebtts_m: None,
        target_err_spebtts_m: None,
        ut_err_m: None,
        gain_proposed: None,
        gain_sweep: None,
        overhead_proposed: None,
        overhead_sweep: None,
        runtime_ms,
    };
    let o = match outcome {
        Ok(o) => o,
        Err(e) => {
            rec.status = status_text(&e);
            return rec;
        }
    };
    if let Some(e) = o.first_error() {
        rec.status = status_text(e);
    }
    rec.ris_err_ipebtts_m = o.ipebtts_errors.ris_m;
    rec.target_err_ipebtts_m = o.ipebtts_errors.target_m;
    if o.spebtts.is_some() {
        rec.ris_err_spebtts_m = o.spebtts_errors.ris_m;
        rec.target_err_spebtts_m = o.spebtts_errors.target_m;
    }
    rec.ut_err_m = o.ut_pose.as_ref().ok().map(|u| distance(u.position, o.scene.ut.position));
    if let Ok(a) = &o.alignment {
        rec.gain_proposed = Some(beamforming_gain(&o.scene, &a.beams));
        rec.overhead_proposed = Some(a.overhead);
    }
    rec.gain_sweep = o.gain_sweep.and_then(|g| g.ok());
    rec.overhead_sweep = o.overhead_sweep;
    rec
}

fn status_text(e: &Error) -> String {
    format!("error: {e}").replace(['\n', ','], " ")
}

/// All rows of a non-`fig2` experiment, in (case, power, trial) order.
pub fn run_records(spec: &ExperimentSpec) -> Result<Vec<TrialRecord>> {
    spec.validate()?;
    let exp = spec.experiment;
    let mut jobs = Vec::new();
    for &c in exp.cases() {
        let base = case_config(c, &spec.overrides)?;
        for (pi, &power) in spec.powers_dbm.iter().enumerate() {
            for t in 0..spec.trials {
                let mut cfg = base.clone();
                cfg.seed = trial_seed(spec.master_seed, exp, c, pi, t);
                cfg.transmit_power_dbm = power;
                jobs.push((cfg, power, t));
            }
        }
    }
    let opts = TrialOptions { noise: true, spebtts: exp.compares_estimators(), sweep: exp.runs_sweep(), ..Default::default() };
    Ok(jobs
        .into_par_iter()
        .map(|(cfg, power, t)| {
            let start = Instant::now();
            let outcome = run_trial(&cfg, power, &opts);
            let ms = spec.timing.then(|| start.elapsed().as_secs_f64() * 1e3);
            record_from(exp, &cfg, power, t, outcome, ms)
        })
        .collect())
}

/// Write records as CSV.
pub fn write_records(mut w: impl Write, records: &[TrialRecord], timing: bool) -> Result<()> {
    let mut csv = csv::Writer::from_writer(&mut w);
    let mut header: Vec<&str> = CSV_COLUMNS.to_vec();
    if timing {
        header.push("runtime_ms");
    }
    csv.write_record(&header).map_err(csv_err)?;
    for r in records {
        csv.write_record(r.fields(timing)).map_err(csv_err)?;
    }
    csv.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Run `spec` and write its CSV to `out`.
pub fn run_experiment(spec: &ExperimentSpec, out: impl Write) -> Result<()> {
    if spec.experiment == Experiment::Fig2 {
        spec.validate()?;
        let mut cfg = fig2_config(&spec.overrides)?;
        cfg.seed = trial_seed(spec.master_seed, Experiment::Fig2, 1, 0, 0);
        let power = spec.powers_dbm.last().copied().unwrap_or(cfg.transmit_power_dbm);
        return write_fig2(out, &cfg, power);
    }
    let records = run_records(spec)?;
    write_records(out, &records, spec.timing)
}

/// The two-domain illustration config with `overrides` applied.
pub fn fig2_config(overrides: &toml::Table) -> Result<SceneConfig> {
    let mut table = match toml::Value::try_from(SceneConfig::fig2()) {
        Ok(toml::Value::Table(t)) => t,
        _ => unreachable!("config serialises to a table"),
    };
    for (k, v) in overrides {
        table.insert(k.clone(), v.clone());
    }
    let cfg: SceneConfig =
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::InvalidConfig(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Scale the targets so their echo stack carries the same energy as the RIS
/// echo stack.
pub fn balance_target_power(scene: &mut Scene) -> Result<()> {
    let (ris, tar) = split_components(scene);
    let er = energy(&simulate_bs_stacks(&ris, 0.0, Noise::None)?);
    let et = energy(&simulate_bs_stacks(&tar, 0.0, Noise::None)?);
    if !(er > 0.0 && et > 0.0) {
        return Err(Error::NoSignal);
    }
    let k = (er / et).sqrt();
    scene.paths.targets.iter_mut().for_each(|t| t.gain *= k);
    Ok(())
}

fn energy(y: &Array3<num_complex::Complex64>) -> f64 {
    y.iter().map(|v| v.norm_sqr()).sum()
}

fn split_components(scene: &Scene) -> (Scene, Scene) {
    let mut ris = scene.clone();
    ris.paths.targets.clear();
    let mut tar = scene.clone();
    tar.paths.bs_ris.clear();
    (ris, tar)
}

/// Largest magnitudes of the RIS and target echo components in both
/// domains, each component simulated noiselessly on its own and maximised
/// over every beam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainPeaks {
    /// RIS in the angle-delay domain (accumulated).
    pub ris_ad: f64,
    /// RIS in the Doppler-delay domain (dispersed).
    pub ris_dd: f64,
    /// Target in the angle-delay domain (dispersed).
    pub target_ad: f64,
    /// Target in the Doppler-delay domain (accumulated).
    pub target_dd: f64,
}

impl DomainPeaks {
    /// `(RIS/target in angle-delay, target/RIS in Doppler-delay)` in dB.
    pub fn separation_db(&self) -> (f64, f64) {
        (20.0 * (self.ris_ad / self.target_ad).log10(), 20.0 * (self.target_dd / self.ris_dd).log10())
    }
}

pub fn domain_peaks(scene: &Scene, power_dbm: f64) -> Result<DomainPeaks> {
    let cfg = &scene.config;
    let tr = DomainTransform::new(cfg.n_ris, cfg.subcarriers)?;
    let (ris, tar) = split_components(scene);
    let peaks = |s: &Scene| -> Result<(f64, f64)> {
        let y = simulate_bs_stacks(s, power_dbm, Noise::None)?;
        let (mut ad, mut dd) = (0.0f64, 0.0f64);
        for n in 0..cfg.n_t {
            let map = tr.domain_map(y.slice(s![n, .., ..]))?;
            ad = map.angle_delay.iter().fold(ad, |a, v| a.max(v.norm()));
            dd = map.doppler_delay.iter().fold(dd, |a, v| a.max(v.norm()));
        }
        Ok((ad, dd))
    };
    let (ris_ad, ris_dd) = peaks(&ris)?;
    let (target_ad, target_dd) = peaks(&tar)?;
    Ok(DomainPeaks { ris_ad, ris_dd, target_ad, target_dd })
}

/// Long-format magnitude grids of both domains at the beam holding the
/// strongest echo: columns `domain, row, delay_bin, magnitude_db`.
pub fn write_fig2(out: impl Write, cfg: &SceneConfig, power_dbm: f64) -> Result<()> {
    let mut scene = crate::scene::synthesize_scene(cfg)?;
    balance_target_power(&mut scene)?;
    let y = simulate_bs_stacks(&scene, power_dbm, Noise::Awgn { seed: splitmix64(cfg.seed ^ 1) })?;
    let beam = (0..cfg.n_t)
        .max_by(|&a, &b| {
            let e = |n: usize| y.slice(s![n, .., ..]).iter().map(|v| v.norm_sqr()).sum::<f64>();
            e(a).total_cmp(&e(b))
        })
        .expect("at least one beam");
    let map = DomainTransform::new(cfg.n_ris, cfg.subcarriers)?.domain_map(y.slice(s![beam, .., ..]))?;
    let mut csv = csv::Writer::from_writer(out);
    csv.write_record(["domain", "beam", "row", "delay_bin", "magnitude_db"]).map_err(csv_err)?;
    for (name, grid) in [("angle-delay", &map.angle_delay), ("doppler-delay", &map.doppler_delay)] {
        for ((r, d), v) in grid.indexed_iter() {
            let db = 20.0 * v.norm().max(1e-300).log10();
            csv.write_record([name.to_string(), beam.to_string(), r.to_string(), d.to_string(), db.to_string()])
                .map_err(csv_err)?;
        }
    }
    csv.flush()?;
    Ok(())
}
