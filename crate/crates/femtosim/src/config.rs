//! Scenario configuration. One TOML file drives every subcommand;
//! every key has a default, so an empty file is a valid scenario.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cac::{CacThresholds, TrafficClass};
use crate::neighbor::NclThresholds;
use crate::radio::{femto_path_loss_db, RadioParams};
use crate::signaling::SignalingTiming;
use crate::topology::ScenarioParams;
use crate::traffic::{split_arrival_rates, TrafficParams, DEFAULT_DENSITY_RATIO};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(ValidationReport),
}

/// Every violation found in one pass, not just the first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub problems: Vec<String>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} configuration problem(s):", self.problems.len())?;
        for p in &self.problems {
            writeln!(f, "  - {p}")?;
        }
        Ok(())
    }
}

/// Propagation constants plus the scan thresholds that slice
/// measurements into detectable, strong, and hidden sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioSection {
    pub femto_freq_mhz: f64,
    pub macro_freq_mhz: f64,
    pub indoor_loss_exponent: f64,
    pub floor_loss_db: f64,
    pub mobile_height_m: f64,
    pub shadow_sigma_db: f64,
    pub penetration_db: f64,
    pub noise_floor_dbm: f64,
    pub hata_hb_coefficient: f64,
    pub interference_range_m: f64,
    /// Detection threshold S_T0, dBm.
    pub detect_dbm: f64,
    /// Strong-signal threshold S_T1, dBm.
    pub strong_dbm: f64,
    /// Hidden candidates beyond this range are ignored, meters.
    pub hidden_max_distance_m: f64,
    pub hidden_excludes_cochannel: bool,
}

impl Default for RadioSection {
    fn default() -> Self {
        let r = RadioParams::default();
        let t = NclThresholds::default();
        RadioSection {
            femto_freq_mhz: r.femto_freq_mhz,
            macro_freq_mhz: r.macro_freq_mhz,
            indoor_loss_exponent: r.indoor_loss_exponent,
            floor_loss_db: r.floor_loss_db,
            mobile_height_m: r.mobile_height_m,
            shadow_sigma_db: r.shadow_sigma_db,
            penetration_db: r.penetration_db,
            noise_floor_dbm: r.noise_floor_dbm,
            hata_hb_coefficient: r.hata_hb_coefficient,
            interference_range_m: r.interference_range_m,
            detect_dbm: t.detect_dbm,
            strong_dbm: t.strong_dbm,
            hidden_max_distance_m: t.hidden_max_distance_m,
            hidden_excludes_cochannel: t.hidden_excludes_cochannel,
        }
    }
}

/// Offered load and mobility rates. Human units (mean seconds); the
/// solver and simulator consume the inverse rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficSection {
    /// Aggregate new-call rate over the whole macrocell, calls/s.
    pub lambda_total: f64,
    /// Arrival density under femto coverage relative to elsewhere.
    pub density_ratio: f64,
    pub mean_call_duration_s: f64,
    pub mean_femto_dwell_s: f64,
    pub mean_macro_dwell_s: f64,
    /// Fraction of femto-to-femto handovers that try the target
    /// femtocell before the macrocell.
    pub alpha: f64,
    /// Macrocell channels open to new calls.
    pub n_channels: u32,
    /// Extra channels reachable only by handover calls.
    pub s_channels: u32,
}

impl Default for TrafficSection {
    fn default() -> Self {
        TrafficSection {
            lambda_total: 2.0,
            density_ratio: DEFAULT_DENSITY_RATIO,
            mean_call_duration_s: 120.0,
            mean_femto_dwell_s: 360.0,
            mean_macro_dwell_s: 240.0,
            alpha: 0.5,
            n_channels: 100,
            s_channels: 23,
        }
    }
}

/// Admission thresholds and the service-class catalogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacSection {
    pub gamma1_db: f64,
    pub gamma2_db: f64,
    pub restore_qos: bool,
    pub macro_capacity_kbps: u32,
    /// Fraction of arrivals requesting the adaptive class.
    pub adaptive_share: f64,
    pub non_adaptive_rate_kbps: u32,
    pub adaptive_rate_kbps: u32,
    pub adaptive_min_kbps: u32,
}

impl Default for CacSection {
    fn default() -> Self {
        let t = CacThresholds::default();
        CacSection {
            gamma1_db: t.gamma1_db,
            gamma2_db: t.gamma2_db,
            restore_qos: t.restore_qos,
            macro_capacity_kbps: 6000,
            adaptive_share: 0.5,
            non_adaptive_rate_kbps: 64,
            adaptive_rate_kbps: 56,
            adaptive_min_kbps: 28,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub horizon_s: f64,
    /// Warm-up excluded from estimators; one tenth of the horizon
    /// when unset.
    pub warmup_s: Option<f64>,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            horizon_s: 1.0e5,
            warmup_s: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub topology: ScenarioParams,
    pub radio: RadioSection,
    pub traffic: TrafficSection,
    pub cac: CacSection,
    pub signaling: SignalingTiming,
    pub sim: SimSection,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            schema_version: SCHEMA_VERSION,
            topology: ScenarioParams::default(),
            radio: RadioSection::default(),
            traffic: TrafficSection::default(),
            cac: CacSection::default(),
            signaling: SignalingTiming::default(),
            sim: SimSection::default(),
        }
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ScenarioConfig::from_toml_str(&text)
}

impl ScenarioConfig {
    /// Parse and fully validate; the error lists every violation.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        let problems = cfg.validate();
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(ValidationReport { problems }))
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Cross-field checks; returns every violation found.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            problems.push(format!(
                "schema_version: only {SCHEMA_VERSION} is supported, got {}",
                self.schema_version
            ));
        }

        let t = &self.topology;
        if t.femto_radius_m <= 0.0 || t.macro_radius_m <= 0.0 {
            problems.push("topology: radii must be positive".into());
        } else if t.femto_radius_m >= t.macro_radius_m {
            problems.push(format!(
                "topology.femto_radius_m ({}) must be below topology.macro_radius_m ({})",
                t.femto_radius_m, t.macro_radius_m
            ));
        } else {
            let coverage = t.n_faps as f64 * (t.femto_radius_m / t.macro_radius_m).powi(2);
            if coverage > 1.0 {
                problems.push(format!(
                    "topology.n_faps ({}): femto coverage fraction {coverage:.3} exceeds 1; \
                     shrink topology.femto_radius_m or the count",
                    t.n_faps
                ));
            }
        }
        if t.fap_capacity_slots == 0 {
            problems.push("topology.fap_capacity_slots must be at least 1".into());
        }
        if t.channel_pool_size == 0 {
            problems.push("topology.channel_pool_size must be at least 1".into());
        }
        for (key, v) in [
            ("topology.open_access_fraction", t.open_access_fraction),
            ("topology.wall_cluster_prob", t.wall_cluster_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                problems.push(format!("{key} ({v}) must lie in [0, 1]"));
            }
        }
        if t.fap_tx_power_mw <= 0.0 || t.macro_tx_power_w <= 0.0 {
            problems.push("topology: transmit powers must be positive".into());
        }

        let r = &self.radio;
        if r.strong_dbm <= r.detect_dbm {
            problems.push(format!(
                "radio.strong_dbm ({}) must exceed radio.detect_dbm ({})",
                r.strong_dbm, r.detect_dbm
            ));
        }
        if r.hidden_max_distance_m <= 0.0 {
            problems.push(format!(
                "radio.hidden_max_distance_m ({}) must be positive",
                r.hidden_max_distance_m
            ));
        }
        if r.shadow_sigma_db < 0.0 {
            problems.push(format!(
                "radio.shadow_sigma_db ({}) must not be negative",
                r.shadow_sigma_db
            ));
        }
        if t.fap_tx_power_mw > 0.0 && t.femto_radius_m > 0.0 {
            // A femtocell must register as strong at its own edge, or
            // every list-construction rule built on strong_dbm is moot.
            let edge = 10.0 * t.fap_tx_power_mw.log10()
                - femto_path_loss_db(
                    r.femto_freq_mhz,
                    t.femto_radius_m,
                    r.indoor_loss_exponent,
                    r.floor_loss_db,
                );
            if edge < r.strong_dbm {
                problems.push(format!(
                    "radio.strong_dbm ({}): femto edge level {edge:.1} dBm at \
                     topology.femto_radius_m ({} m) falls below it",
                    r.strong_dbm, t.femto_radius_m
                ));
            }
        }

        let tr = &self.traffic;
        if tr.lambda_total < 0.0 {
            problems.push(format!(
                "traffic.lambda_total ({}) must not be negative",
                tr.lambda_total
            ));
        }
        if tr.density_ratio <= 0.0 {
            problems.push(format!(
                "traffic.density_ratio ({}) must be positive",
                tr.density_ratio
            ));
        }
        for (key, v) in [
            ("traffic.mean_call_duration_s", tr.mean_call_duration_s),
            ("traffic.mean_femto_dwell_s", tr.mean_femto_dwell_s),
            ("traffic.mean_macro_dwell_s", tr.mean_macro_dwell_s),
        ] {
            if v <= 0.0 || !v.is_finite() {
                problems.push(format!("{key} ({v}) must be a positive duration"));
            }
        }
        if !(0.0..=1.0).contains(&tr.alpha) {
            problems.push(format!("traffic.alpha ({}) must lie in [0, 1]", tr.alpha));
        }
        if tr.n_channels == 0 {
            problems.push("traffic.n_channels must be at least 1".into());
        }

        let c = &self.cac;
        if c.gamma2_db <= c.gamma1_db {
            problems.push(format!(
                "cac.gamma2_db ({}) must exceed cac.gamma1_db ({})",
                c.gamma2_db, c.gamma1_db
            ));
        }
        if !(0.0..=1.0).contains(&c.adaptive_share) {
            problems.push(format!(
                "cac.adaptive_share ({}) must lie in [0, 1]",
                c.adaptive_share
            ));
        }
        if c.non_adaptive_rate_kbps == 0 || c.adaptive_rate_kbps == 0 || c.adaptive_min_kbps == 0 {
            problems.push("cac: class rates must be positive".into());
        }
        if c.adaptive_min_kbps > c.adaptive_rate_kbps {
            problems.push(format!(
                "cac.adaptive_min_kbps ({}) must not exceed cac.adaptive_rate_kbps ({})",
                c.adaptive_min_kbps, c.adaptive_rate_kbps
            ));
        }
        let widest = c.non_adaptive_rate_kbps.max(c.adaptive_rate_kbps);
        if c.macro_capacity_kbps < widest {
            problems.push(format!(
                "cac.macro_capacity_kbps ({}) cannot admit the widest class ({widest} kbps)",
                c.macro_capacity_kbps
            ));
        }

        let s = &self.signaling;
        for (key, v) in [
            ("signaling.air_ms", s.air_ms),
            ("signaling.backhaul_ms", s.backhaul_ms),
            ("signaling.self_step_ms", s.self_step_ms),
        ] {
            if v < 0.0 || !v.is_finite() {
                problems.push(format!("{key} ({v}) must be a finite non-negative delay"));
            }
        }

        let sim = &self.sim;
        if sim.horizon_s <= 0.0 || !sim.horizon_s.is_finite() {
            problems.push(format!(
                "sim.horizon_s ({}) must be a positive duration",
                sim.horizon_s
            ));
        }
        if let Some(w) = sim.warmup_s {
            if w < 0.0 || w >= sim.horizon_s {
                problems.push(format!(
                    "sim.warmup_s ({w}) must lie in [0, sim.horizon_s = {})",
                    sim.horizon_s
                ));
            }
        }

        problems
    }

    pub fn topology_params(&self) -> ScenarioParams {
        self.topology.clone()
    }

    pub fn radio_params(&self) -> RadioParams {
        let r = &self.radio;
        RadioParams {
            femto_freq_mhz: r.femto_freq_mhz,
            macro_freq_mhz: r.macro_freq_mhz,
            indoor_loss_exponent: r.indoor_loss_exponent,
            floor_loss_db: r.floor_loss_db,
            mobile_height_m: r.mobile_height_m,
            shadow_sigma_db: r.shadow_sigma_db,
            penetration_db: r.penetration_db,
            noise_floor_dbm: r.noise_floor_dbm,
            hata_hb_coefficient: r.hata_hb_coefficient,
            interference_range_m: r.interference_range_m,
        }
    }

    pub fn ncl_thresholds(&self) -> NclThresholds {
        let r = &self.radio;
        NclThresholds {
            detect_dbm: r.detect_dbm,
            strong_dbm: r.strong_dbm,
            hidden_max_distance_m: r.hidden_max_distance_m,
            hidden_excludes_cochannel: r.hidden_excludes_cochannel,
        }
    }

    /// Analytic-solver parameters consistent with this scenario; the
    /// femtocell count, radii, and slot count come from the topology
    /// section so the two views cannot drift apart.
    pub fn traffic_params(&self) -> TrafficParams {
        let t = &self.topology;
        let tr = &self.traffic;
        let (lambda_f_o, lambda_m_o) = split_arrival_rates(
            tr.lambda_total,
            t.n_faps,
            t.femto_radius_m,
            t.macro_radius_m,
            tr.density_ratio,
        );
        TrafficParams {
            n: t.n_faps,
            r_f_m: t.femto_radius_m,
            r_m_m: t.macro_radius_m,
            mu: 1.0 / tr.mean_call_duration_s,
            eta_f: 1.0 / tr.mean_femto_dwell_s,
            eta_m: 1.0 / tr.mean_macro_dwell_s,
            lambda_f_o,
            lambda_m_o,
            k_femto: t.fap_capacity_slots,
            n_channels: tr.n_channels,
            s_channels: tr.s_channels,
            alpha: tr.alpha,
        }
    }

    pub fn cac_thresholds(&self) -> CacThresholds {
        CacThresholds {
            gamma1_db: self.cac.gamma1_db,
            gamma2_db: self.cac.gamma2_db,
            restore_qos: self.cac.restore_qos,
        }
    }

    pub fn non_adaptive_class(&self) -> TrafficClass {
        TrafficClass::non_adaptive(self.cac.non_adaptive_rate_kbps)
    }

    pub fn adaptive_class(&self) -> TrafficClass {
        TrafficClass::adaptive(self.cac.adaptive_rate_kbps, self.cac.adaptive_min_kbps)
    }

    pub fn signaling_timing(&self) -> SignalingTiming {
        self.signaling.clone()
    }

    pub fn warmup_s(&self) -> f64 {
        self.sim.warmup_s.unwrap_or(self.sim.horizon_s * 0.1)
    }
}
