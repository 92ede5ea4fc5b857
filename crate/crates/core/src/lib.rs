//! Simulation and estimation for RIS-assisted integrated sensing and
//! communication: a BS sweeps its beams while the RIS sweeps its codebook,
//! and from the echoes and the UT receptions the crate recovers the RIS
//! paths, the moving targets, the RIS and UT poses, and the beams that align
//! the BS-RIS-UT link.

pub mod airlink;
pub mod alignment;
pub mod channel;
pub mod error;
pub mod harness;
pub mod math;
pub mod paoe;
pub mod sbtts;
pub mod scene;

pub use airlink::{simulate_stacks, Noise, ObservationStacks, ProbeAccess, ProbeKind, SceneProbe};
pub use alignment::{beamforming_gain, overhead_for_case, AlignmentResult, Beams};
pub use error::{Error, Result};
pub use harness::{run_experiment, run_trial, Experiment, ExperimentSpec, TrialOptions, TrialRecord};
pub use paoe::{PoseEstimate, TdfsParams};
pub use sbtts::{run_ipebtts, run_spebtts, SensingOutput, SweepParams};
pub use scene::{synthesize_scene, LinkCase, Point, Pose, Scene, SceneConfig};
