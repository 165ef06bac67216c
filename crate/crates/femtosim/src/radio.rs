//! Propagation and link quality.
//!
//! Two path-loss models cover the two cell types:
//!
//! * **femtocell (indoor)**: `20 log10(f) + N log10(d) + L_floor - 28`,
//!   with `f` in MHz, `d` in meters clamped to >= 1, `N` the indoor
//!   loss exponent, plus the summed attenuation of every wall the ray
//!   crosses;
//! * **macrocell (urban)**: `36.55 + 26.16 log10(f) - k log10(h_b)
//!   - a(h_m) + (44.9 - 6.55 log10(h_b)) log10(d_km) + L_shadow + L_pen`,
//!   where `a(h_m)` is the mobile antenna height correction
//!   `(1.1 log10 f - 0.7) h_m - (1.56 log10 f - 0.8)` and `k` is the base
//!   station height coefficient (configurable; 3.82 by default).
//!
//! Shadow fading applies to the macrocell link only and is sampled once
//! per (evaluation epoch, cell) pair from a seeded hash, so a whole
//! measurement/decision sequence sees one consistent draw and reruns with
//! the same seed reproduce it exactly.

use crate::geometry::Point;
use crate::topology::{FapId, Topology};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A transmitter the mobile can measure or attach to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CellRef {
    Fap(FapId),
    Macro,
}

/// Propagation constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioParams {
    pub femto_freq_mhz: f64,
    pub macro_freq_mhz: f64,
    /// Indoor distance loss exponent (dB per decade).
    pub indoor_loss_exponent: f64,
    /// Extra indoor floor penetration term, dB.
    pub floor_loss_db: f64,
    /// Mobile antenna height, meters.
    pub mobile_height_m: f64,
    /// Lognormal shadow fading standard deviation on the macro link, dB.
    pub shadow_sigma_db: f64,
    /// Outdoor-to-indoor penetration loss on the macro link, dB.
    pub penetration_db: f64,
    pub noise_floor_dbm: f64,
    /// Base station height coefficient in the macro model.
    pub hata_hb_coefficient: f64,
    /// Same-channel interferers beyond this range are ignored, meters.
    pub interference_range_m: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            femto_freq_mhz: 1800.0,
            macro_freq_mhz: 1800.0,
            indoor_loss_exponent: 30.0,
            floor_loss_db: 0.0,
            mobile_height_m: 2.0,
            shadow_sigma_db: 8.0,
            penetration_db: 20.0,
            noise_floor_dbm: -104.0,
            hata_hb_coefficient: 3.82,
            interference_range_m: 600.0,
        }
    }
}

/// Indoor path loss, dB. Distances under one meter are clamped to one.
pub fn femto_path_loss_db(
    freq_mhz: f64,
    distance_m: f64,
    indoor_loss_exponent: f64,
    floor_loss_db: f64,
) -> f64 {
    let d = distance_m.max(1.0);
    20.0 * freq_mhz.log10() + indoor_loss_exponent * d.log10() + floor_loss_db - 28.0
}

/// Mobile antenna height correction `a(h_m)`, dB.
pub fn hata_mobile_correction_db(freq_mhz: f64, mobile_height_m: f64) -> f64 {
    (1.1 * freq_mhz.log10() - 0.7) * mobile_height_m - (1.56 * freq_mhz.log10() - 0.8)
}

/// Urban macrocell path loss, dB. `shadow_db` and `penetration_db` are
/// additive environment terms supplied by the caller.
#[allow(clippy::too_many_arguments)]
pub fn macro_path_loss_db(
    freq_mhz: f64,
    distance_km: f64,
    base_height_m: f64,
    mobile_height_m: f64,
    shadow_db: f64,
    penetration_db: f64,
    hb_coefficient: f64,
) -> f64 {
    let d = distance_km.max(1e-3);
    36.55 + 26.16 * freq_mhz.log10() - hb_coefficient * base_height_m.log10()
        - hata_mobile_correction_db(freq_mhz, mobile_height_m)
        + (44.9 - 6.55 * base_height_m.log10()) * d.log10()
        + shadow_db
        + penetration_db
}

/// Received signal strength, dBm.
pub fn rssi_dbm(tx_power_dbm: f64, path_loss_db: f64) -> f64 {
    tx_power_dbm - path_loss_db
}

fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Deterministic per-(epoch, cell) shadow fading draws.
#[derive(Debug, Clone)]
pub struct ShadowSampler {
    seed: u64,
    sigma_db: f64,
}

impl ShadowSampler {
    pub fn new(seed: u64, sigma_db: f64) -> Self {
        ShadowSampler { seed, sigma_db }
    }

    /// Normal(0, sigma) draw fixed by (epoch, cell key). Repeated calls
    /// with the same arguments return the same value.
    pub fn sample_db(&self, epoch: u64, cell_key: u64) -> f64 {
        if self.sigma_db == 0.0 {
            return 0.0;
        }
        // splitmix-style avalanche of the three inputs into one stream seed
        let mut z = self
            .seed
            .wrapping_add(epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15))
            .wrapping_add(cell_key.wrapping_mul(0xbf58_476d_1ce4_e5b9));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        let mut rng = ChaCha8Rng::seed_from_u64(z);
        // Box-Muller
        let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.gen::<f64>();
        let normal = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        normal * self.sigma_db
    }
}

const MACRO_CELL_KEY: u64 = u64::MAX;

/// Evaluates link budgets against one topology. Bundles the propagation
/// constants with the shadow sampler so a measurement epoch is coherent.
pub struct LinkBudget<'a> {
    pub topology: &'a Topology,
    pub params: &'a RadioParams,
    pub shadow: ShadowSampler,
}

impl<'a> LinkBudget<'a> {
    pub fn new(topology: &'a Topology, params: &'a RadioParams, shadow_seed: u64) -> Self {
        LinkBudget {
            topology,
            params,
            shadow: ShadowSampler::new(shadow_seed, params.shadow_sigma_db),
        }
    }

    /// RSSI of one FAP at the mobile, dBm, including wall crossings.
    pub fn fap_rssi_dbm(&self, ms: Point, fap_index: usize) -> f64 {
        let fap = &self.topology.faps[fap_index];
        let pl = femto_path_loss_db(
            self.params.femto_freq_mhz,
            fap.position.distance(&ms),
            self.params.indoor_loss_exponent,
            self.params.floor_loss_db,
        ) + self.topology.wall_attenuation_db(ms, fap.position);
        rssi_dbm(fap.tx_power_dbm(), pl)
    }

    /// RSSI of the macro BS at the mobile, dBm, shadowed per epoch.
    pub fn macro_rssi_dbm(&self, ms: Point, epoch: u64) -> f64 {
        let bs = &self.topology.macro_bs;
        let pl = macro_path_loss_db(
            self.params.macro_freq_mhz,
            bs.position.distance(&ms) / 1000.0,
            bs.height_m,
            self.params.mobile_height_m,
            self.shadow.sample_db(epoch, MACRO_CELL_KEY),
            self.params.penetration_db,
            self.params.hata_hb_coefficient,
        );
        rssi_dbm(bs.tx_power_dbm(), pl)
    }

    pub fn rssi_dbm(&self, ms: Point, cell: CellRef, epoch: u64) -> f64 {
        match cell {
            CellRef::Fap(id) => self.fap_rssi_dbm(ms, id.0 as usize),
            CellRef::Macro => self.macro_rssi_dbm(ms, epoch),
        }
    }

    /// Signal-to-noise-plus-interference ratio at the mobile, dB. For a
    /// femtocell target the interferers are every other FAP on the same
    /// channel within range; the macrocell is modeled interference-free.
    pub fn snir_db(&self, ms: Point, target: CellRef, epoch: u64) -> f64 {
        let signal_dbm = self.rssi_dbm(ms, target, epoch);
        let mut denom_mw = dbm_to_mw(self.params.noise_floor_dbm);
        if let CellRef::Fap(id) = target {
            let channel = self.topology.faps[id.0 as usize].frequency_channel;
            for j in self
                .topology
                .faps_within(ms, self.params.interference_range_m)
            {
                if j as u32 != id.0 && self.topology.faps[j].frequency_channel == channel {
                    denom_mw += dbm_to_mw(self.fap_rssi_dbm(ms, j));
                }
            }
        }
        signal_dbm - mw_to_dbm(denom_mw)
    }
}
