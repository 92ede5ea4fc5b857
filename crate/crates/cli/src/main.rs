use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use risac::harness::{
    apply_assignment, case_config, overrides_from_str, run_experiment, run_trial, Experiment, ExperimentSpec, Overrides,
    TrialOptions,
};
use risac::scene::{distance, point_at};
use risac::{Error, SceneConfig};

#[derive(Parser)]
#[command(name = "risac", version, about = "RIS-assisted ISAC beam training, sensing and alignment simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trial and print what every stage found.
    Simulate {
        /// Config file; keys override the case defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        case: u8,
        #[arg(long, default_value_t = 50.0, allow_hyphen_values = true)]
        power: f64,
        /// Scene seed.
        #[arg(long, env = "RISAC_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        noiseless: bool,
        /// Extra `key=value` config overrides, applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run a named experiment and write its CSV.
    Experiment {
        name: String,
        #[arg(long)]
        out: PathBuf,
        /// Master seed.
        #[arg(long, env = "RISAC_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// Comma-separated transmit powers in dBm.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "10,20,30,40,50")]
        powers: Vec<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Append a runtime_ms column (output is then not reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Check a config file and report the first violated constraint.
    ValidateConfig { path: PathBuf },
}

/// An unreadable config file.
#[derive(Debug)]
struct ConfigFile(String);

impl std::fmt::Display for ConfigFile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigFile {}

/// Errors a user can fix by changing the command line or config.
fn is_config_error(e: &anyhow::Error) -> bool {
    e.downcast_ref::<ConfigFile>().is_some()
        || matches!(e.downcast_ref::<Error>(), Some(Error::InvalidConfig(_) | Error::InvalidCase(_)))
}

fn read_config(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).map_err(|e| ConfigFile(format!("reading {}: {e}", path.display())).into())
}

fn load_overrides(path: Option<&Path>, set: &[String]) -> anyhow::Result<Overrides> {
    let mut table = match path {
        Some(p) => overrides_from_str(&read_config(p)?).with_context(|| format!("in {}", p.display()))?,
        None => Overrides::new(),
    };
    for a in set {
        apply_assignment(&mut table, a)?;
    }
    Ok(table)
}

fn simulate(config: Option<&Path>, case: u8, power: f64, seed: u64, noiseless: bool, set: &[String]) -> anyhow::Result<()> {
    let overrides = load_overrides(config, set)?;
    let mut cfg = case_config(case, &overrides)?;
    cfg.seed = seed;
    cfg.transmit_power_dbm = power;
    let opts = TrialOptions { noise: !noiseless, ..Default::default() };
    let o = run_trial(&cfg, power, &opts)?;
    let out = &mut std::io::stdout().lock();
    let s = &o.scene;
    writeln!(out, "case {} at {power} dBm, seed {seed}{}", cfg.case_id, if noiseless { ", noiseless" } else { "" })?;
    writeln!(out, "RIS  at ({:.3}, {:.3}) facing ({:.4}, {:.4})", s.ris.position[0], s.ris.position[1], s.ris.orientation[0], s.ris.orientation[1])?;
    writeln!(out, "UT   at ({:.3}, {:.3}) facing ({:.4}, {:.4})", s.ut.position[0], s.ut.position[1], s.ut.orientation[0], s.ut.orientation[1])?;
    for (i, t) in s.paths.targets.iter().enumerate() {
        writeln!(out, "target {i}: range {:.3} m, direction {:.5}, velocity {:.3} m/s, rcs {:.1} dBsm", t.range_m, t.angle, t.velocity_mps, t.rcs_dbsm)?;
    }
    for (name, res) in [("IPEBTTS", Some(&o.ipebtts)), ("SPEBTTS", o.spebtts.as_ref())] {
        let Some(res) = res else { continue };
        match res {
            Err(e) => writeln!(out, "{name}: failed: {e}")?,
            Ok(sense) => {
                writeln!(out, "{name}: {} iterations, residual {:.3e}", sense.trace.len(), sense.residual_ratio)?;
                for (k, tr) in sense.trace.iter().enumerate() {
                    let err = tr.error.as_ref().map(|e| format!(" ({e})")).unwrap_or_default();
                    writeln!(out, "  {k:>2} {:?} at {:?}: q_c {:.3e}, q_r {:.3e}{err}", tr.branch, tr.indices, tr.q_c, tr.q_r)?;
                }
                for r in &sense.ris {
                    writeln!(out, "  RIS path: aod {:.5}, range {:.3} m, aoa candidates {:.5} / {:.5}", r.aod, r.range_m, r.aoa_candidates[0], r.aoa_candidates[1])?;
                }
                for t in &sense.targets {
                    let p = point_at(t.range_m, t.angle);
                    writeln!(out, "  target: direction {:.5}, range {:.3} m, velocity {:.3} m/s at ({:.2}, {:.2})", t.angle, t.range_m, t.velocity_mps, p[0], p[1])?;
                }
            }
        }
    }
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4e} m")).unwrap_or_else(|| "-".into());
    writeln!(out, "RIS error: IPEBTTS {}, SPEBTTS {}", fmt(o.ipebtts_errors.ris_m), fmt(o.spebtts_errors.ris_m))?;
    writeln!(out, "target error: IPEBTTS {}, SPEBTTS {}", fmt(o.ipebtts_errors.target_m), fmt(o.spebtts_errors.target_m))?;
    match &o.ut_paths {
        Ok(paths) => {
            for p in paths {
                writeln!(out, "UT path: aod {:.5}, aoa {:.5}, range {:.3} m, {:?}, rho {:.3}, kept {}", p.aod, p.aoa, p.range_m, p.class, p.rho, p.kept)?;
            }
        }
        Err(e) => writeln!(out, "UT training failed: {e}")?,
    }
    match &o.ut_pose {
        Ok(u) => writeln!(out, "UT error: {:.4e} m", distance(u.position, s.ut.position))?,
        Err(e) => writeln!(out, "UT positioning failed: {e}")?,
    }
    match &o.alignment {
        Ok(a) => {
            let b = a.beams;
            writeln!(out, "beams: BS {:.5}, RIS {:.5}, UT {:.5}", b.f_dir, b.ris_dir, b.w_dir)?;
            writeln!(out, "gain {:.1} (bound {:.1}), overhead {}", risac::beamforming_gain(s, &b), bound(&cfg), a.overhead)?;
        }
        Err(e) => writeln!(out, "alignment failed: {e}")?,
    }
    Ok(())
}

fn bound(cfg: &SceneConfig) -> f64 {
    ((cfg.n_t * cfg.n_ut) as f64).sqrt() * cfg.n_ris as f64
}

#[allow(clippy::too_many_arguments)]
fn experiment(
    name: &str,
    out: &Path,
    seed: u64,
    trials: usize,
    powers: Vec<f64>,
    config: Option<&Path>,
    set: &[String],
    timing: bool,
) -> anyhow::Result<()> {
    let experiment: Experiment = name.parse()?;
    let spec = ExperimentSpec {
        experiment,
        powers_dbm: powers,
        trials,
        master_seed: seed,
        overrides: load_overrides(config, set)?,
        timing,
    };
    spec.validate()?;
    let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = BufWriter::new(file);
    run_experiment(&spec, &mut w)?;
    w.flush()?;
    Ok(())
}

fn validate(path: &Path) -> anyhow::Result<()> {
    let cfg = SceneConfig::from_toml_str(&read_config(path)?).with_context(|| format!("in {}", path.display()))?;
    cfg.validate().with_context(|| format!("in {}", path.display()))?;
    println!("{}: ok", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Simulate { config, case, power, seed, noiseless, set } => {
            simulate(config.as_deref(), *case, *power, *seed, *noiseless, set)
        }
        Command::Experiment { name, out, seed, trials, powers, config, set, timing } => {
            experiment(name, out, *seed, *trials, powers.clone(), config.as_deref(), set, *timing)
        }
        Command::ValidateConfig { path } => validate(path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_config_error(&e) { 2 } else { 1 })
        }
    }
}
