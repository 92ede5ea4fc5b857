//! Scene configuration and its flat key-value file format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::SPEED_OF_LIGHT;

/// Which of the three links carry a line-of-sight path, following the
/// eight-case taxonomy: case `k` has BS-UT LoS for `k ≤ 4`, BS-RIS LoS for
/// `k ∈ {1, 2, 5, 6}` and RIS-UT LoS for odd `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LinkCase(u8);

impl LinkCase {
    pub fn new(id: u8) -> Result<Self> {
        if (1..=8).contains(&id) {
            Ok(Self(id))
        } else {
            Err(Error::InvalidCase(id))
        }
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn bs_ut_los(self) -> bool {
        self.0 <= 4
    }

    pub fn bs_ris_los(self) -> bool {
        matches!(self.0, 1 | 2 | 5 | 6)
    }

    pub fn ris_ut_los(self) -> bool {
        self.0 % 2 == 1
    }
}

/// Everything needed to draw a random scene. Units are SI throughout; powers
/// in dBm, RCS in dBsm, angles limits in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub n_t: usize,
    pub n_r: usize,
    pub n_ris: usize,
    pub n_ut: usize,
    pub subcarriers: usize,
    pub subcarrier_spacing_hz: f64,
    pub carrier_hz: f64,
    pub symbol_duration_s: f64,
    pub transmit_power_dbm: f64,
    pub noise_power_dbm: f64,
    pub l_br: usize,
    pub l_bu: usize,
    pub l_ru: usize,
    pub targets: usize,
    pub ris_range_min_m: f64,
    pub ris_range_max_m: f64,
    pub ut_range_min_m: f64,
    pub ut_range_max_m: f64,
    pub target_range_min_m: f64,
    pub target_range_max_m: f64,
    pub target_speed_min_mps: f64,
    pub target_speed_max_mps: f64,
    pub rcs_min_dbsm: f64,
    pub rcs_max_dbsm: f64,
    pub los_nlos_ratio_db: f64,
    /// Largest angle off an array normal at which anything is placed.
    pub max_off_normal_deg: f64,
    pub case_id: u8,
    pub seed: u64,
    /// Include the `√(N_rx·N_tx)` array factor in every channel matrix.
    pub array_gain: bool,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_t: 64,
            n_r: 16,
            n_ris: 128,
            n_ut: 16,
            subcarriers: 128,
            subcarrier_spacing_hz: 120e3,
            carrier_hz: 26.5e9,
            symbol_duration_s: 1.0 / 120e3,
            transmit_power_dbm: 50.0,
            noise_power_dbm: -103.0,
            l_br: 3,
            l_bu: 3,
            l_ru: 3,
            targets: 6,
            ris_range_min_m: 20.0,
            ris_range_max_m: 40.0,
            ut_range_min_m: 50.0,
            ut_range_max_m: 150.0,
            target_range_min_m: 50.0,
            target_range_max_m: 150.0,
            target_speed_min_mps: 10.0,
            target_speed_max_mps: 30.0,
            rcs_min_dbsm: -15.0,
            rcs_max_dbsm: 10.0,
            los_nlos_ratio_db: 20.0,
            max_off_normal_deg: 60.0,
            case_id: 1,
            seed: 0,
            array_gain: true,
        }
    }
}

impl SceneConfig {
    /// Simulation defaults for one of the eight cases. Case 1 runs at
    /// 26.5 GHz with three paths per link; the others at 5 GHz with six paths
    /// on every NLoS link.
    pub fn for_case(id: u8) -> Result<Self> {
        let case = LinkCase::new(id)?;
        let mut cfg = Self { case_id: id, ..Self::default() };
        if id != 1 {
            cfg.carrier_hz = 5e9;
            cfg.rcs_min_dbsm = -20.0;
            cfg.l_bu = if case.bs_ut_los() { 3 } else { 6 };
            cfg.l_br = if case.bs_ris_los() { 3 } else { 6 };
            cfg.l_ru = if case.ris_ut_los() { 3 } else { 6 };
        }
        Ok(cfg)
    }

    /// The two-domain illustration: 32-element BS arrays, one RIS path and
    /// one target.
    pub fn fig2() -> Self {
        Self { n_t: 32, n_r: 32, l_br: 1, l_bu: 1, l_ru: 1, targets: 1, ..Self::default() }
    }

    pub fn case(&self) -> Result<LinkCase> {
        LinkCase::new(self.case_id)
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    /// Path-length separation of one echo delay bin, `c/(2MΔf)`.
    pub fn range_cell_m(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.subcarriers as f64 * self.subcarrier_spacing_hz)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let case = self.case()?;
        for (name, v) in [("n_t", self.n_t), ("n_r", self.n_r), ("n_ris", self.n_ris), ("n_ut", self.n_ut)] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.n_ris < self.n_ut + 2 {
            return bad(format!(
                "n_ris >= n_ut + 2 is required (n_ris = {}, n_ut = {})",
                self.n_ris, self.n_ut
            ));
        }
        if self.subcarriers < 2 {
            return bad("subcarriers must be at least 2".into());
        }
        for (name, v) in [("l_br", self.l_br), ("l_bu", self.l_bu), ("l_ru", self.l_ru)] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if !case.bs_ris_los() && self.l_br < 2 {
            return bad("an NLoS BS-RIS link needs l_br >= 2 for positioning".into());
        }
        if !case.bs_ut_los() && self.l_bu < 2 {
            return bad("an NLoS BS-UT link needs l_bu >= 2 for positioning".into());
        }
        for (name, v) in [
            ("subcarrier_spacing_hz", self.subcarrier_spacing_hz),
            ("carrier_hz", self.carrier_hz),
            ("symbol_duration_s", self.symbol_duration_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        for (name, v) in [
            ("transmit_power_dbm", self.transmit_power_dbm),
            ("noise_power_dbm", self.noise_power_dbm),
            ("rcs_min_dbsm", self.rcs_min_dbsm),
            ("rcs_max_dbsm", self.rcs_max_dbsm),
            ("los_nlos_ratio_db", self.los_nlos_ratio_db),
        ] {
            if v.is_nan() {
                return bad(format!("{name} must be a number"));
            }
        }
        for (name, lo, hi) in [
            ("ris_range", self.ris_range_min_m, self.ris_range_max_m),
            ("ut_range", self.ut_range_min_m, self.ut_range_max_m),
            ("target_range", self.target_range_min_m, self.target_range_max_m),
            ("target_speed", self.target_speed_min_mps, self.target_speed_max_mps),
        ] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad(format!("{name}: need 0 < min <= max, got [{lo}, {hi}]"));
            }
        }
        if self.rcs_min_dbsm > self.rcs_max_dbsm {
            return bad("rcs_min_dbsm exceeds rcs_max_dbsm".into());
        }
        if !(self.max_off_normal_deg > 0.0 && self.max_off_normal_deg < 90.0) {
            return bad("max_off_normal_deg must lie in (0, 90)".into());
        }
        let doppler = 2.0 * self.target_speed_max_mps / self.wavelength();
        if 2.0 * doppler * self.symbol_duration_s >= 1.0 {
            return bad(format!(
                "target_speed_max_mps = {} aliases: 2·f·T_s = {:.3} >= 1",
                self.target_speed_max_mps,
                2.0 * doppler * self.symbol_duration_s
            ));
        }
        let window = SPEED_OF_LIGHT / (2.0 * self.subcarrier_spacing_hz);
        if self.target_range_max_m >= window || self.ris_range_max_m >= window {
            return bad(format!("ranges must stay below the unambiguous window {window:.1} m"));
        }
        Ok(())
    }

    /// Parse the `key = value` file format. Unknown keys are rejected;
    /// missing keys keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat struct always serialises")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }
}
