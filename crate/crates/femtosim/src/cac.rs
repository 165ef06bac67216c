//! Call admission control.
//!
//! Three policies share two SNIR thresholds `gamma1 < gamma2` and a
//! macrocell bandwidth ledger:
//!
//! * new originating calls prefer a covering femtocell when its SNIR
//!   clears `gamma2` and a call slot is free; otherwise the macrocell
//!   admits them only if the full requested bandwidth is available.
//!   New calls never trigger QoS degradation;
//! * macro-attached calls may offload to a femtocell when its SNIR
//!   clears `gamma2` outright or at least matches the current macro
//!   SNIR, and a slot is free. A refused offload keeps the call on the
//!   macrocell, it is never dropped;
//! * femto-attached calls losing their serving signal walk a three-way
//!   decision: a strong target FAP admits directly; a marginal one
//!   (between the thresholds) lets the macrocell take the call at full
//!   rate if capacity allows, falling back to the marginal FAP; anything
//!   else goes to the macrocell with QoS degradation, squeezing adaptive
//!   calls down toward their floor to make room, and drops only when
//!   even the minimum rate cannot be found.
//!
//! Femtocell admission is slot-based (a FAP serves a fixed number of
//! calls); only the macrocell tracks bandwidth in kbps.

use crate::topology::FapId;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Service class of a call: the rate it asks for and the floor it can
/// tolerate. Non-adaptive classes cannot be squeezed at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficClass {
    pub adaptive: bool,
    pub beta_r_kbps: u32,
    pub beta_min_kbps: u32,
}

impl TrafficClass {
    pub fn non_adaptive(rate_kbps: u32) -> Self {
        TrafficClass {
            adaptive: false,
            beta_r_kbps: rate_kbps,
            beta_min_kbps: rate_kbps,
        }
    }

    pub fn adaptive(beta_r_kbps: u32, beta_min_kbps: u32) -> Self {
        TrafficClass {
            adaptive: true,
            beta_r_kbps,
            beta_min_kbps,
        }
    }

    /// Stock non-adaptive class: 64 kbps, fixed.
    pub fn default_non_adaptive() -> Self {
        Self::non_adaptive(64)
    }

    /// Stock adaptive class: asks 56 kbps, tolerates 28.
    pub fn default_adaptive() -> Self {
        Self::adaptive(56, 28)
    }

    pub fn validate(&self) -> Result<(), CacError> {
        if self.beta_min_kbps > self.beta_r_kbps {
            return Err(CacError::InvalidClass(
                "minimum rate exceeds requested rate".into(),
            ));
        }
        if !self.adaptive && self.beta_min_kbps != self.beta_r_kbps {
            return Err(CacError::InvalidClass(
                "non-adaptive class must have equal rates".into(),
            ));
        }
        Ok(())
    }
}

/// SNIR thresholds and policy switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacThresholds {
    /// Lower SNIR threshold `gamma1`, dB.
    pub gamma1_db: f64,
    /// Upper SNIR threshold `gamma2`, dB.
    pub gamma2_db: f64,
    /// When set, departures re-inflate degraded adaptive calls from the
    /// freed capacity. Off by default: a degraded call keeps its reduced
    /// grant until it leaves.
    pub restore_qos: bool,
}

impl Default for CacThresholds {
    fn default() -> Self {
        CacThresholds {
            gamma1_db: 10.0,
            gamma2_db: 12.0,
            restore_qos: false,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CacError {
    #[error("unknown session {0}")]
    UnknownSession(u64),
    #[error("session {0} already in ledger")]
    DuplicateSession(u64),
    #[error("grant of {grant} kbps exceeds available {available} kbps")]
    CapacityExceeded { grant: u32, available: u32 },
    #[error("invalid traffic class: {0}")]
    InvalidClass(String),
}

/// One victim of QoS degradation: the session and its reduced grant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degradation {
    pub session_id: u64,
    pub new_grant_kbps: u32,
}

/// Outcome of an admission decision. Degradations ride only on macro
/// admissions of handover calls.
#[derive(Debug, Clone, PartialEq)]
pub enum CacDecision {
    AdmitFemto {
        fap: FapId,
    },
    AdmitMacro {
        granted_kbps: u32,
        degradations: Vec<Degradation>,
    },
    /// A refused macro-to-femto offload: the call keeps its macro link.
    StayMacro,
    /// A refused new call.
    Block,
    /// A handover call that found no admissible target.
    Drop,
}

impl CacDecision {
    pub fn kind(&self) -> &'static str {
        match self {
            CacDecision::AdmitFemto { .. } => "admit_femto",
            CacDecision::AdmitMacro { .. } => "admit_macro",
            CacDecision::StayMacro => "stay_macro",
            CacDecision::Block => "block",
            CacDecision::Drop => "drop",
        }
    }

    pub fn granted_kbps(&self) -> Option<u32> {
        match self {
            CacDecision::AdmitMacro { granted_kbps, .. } => Some(*granted_kbps),
            _ => None,
        }
    }

    pub fn degraded_count(&self) -> usize {
        match self {
            CacDecision::AdmitMacro { degradations, .. } => degradations.len(),
            _ => 0,
        }
    }

    pub fn is_admit(&self) -> bool {
        matches!(
            self,
            CacDecision::AdmitFemto { .. } | CacDecision::AdmitMacro { .. }
        )
    }
}

/// A candidate target FAP as seen by the deciding side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FapCandidate {
    pub fap: FapId,
    pub snir_db: f64,
    pub free_slots: u32,
}

impl FapCandidate {
    fn has_slot(&self) -> bool {
        self.free_slots > 0
    }
}

/// An admission request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CallRequest {
    pub session_id: u64,
    pub class: TrafficClass,
}

/// The macrocell's bandwidth accounting. Every attached call holds a
/// grant in `[beta_min, beta_r]` of its class; the sum never exceeds
/// capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroLedger {
    capacity_kbps: u32,
    calls: BTreeMap<u64, (TrafficClass, u32)>,
}

impl MacroLedger {
    pub fn new(capacity_kbps: u32) -> Self {
        MacroLedger {
            capacity_kbps,
            calls: BTreeMap::new(),
        }
    }

    pub fn capacity_kbps(&self) -> u32 {
        self.capacity_kbps
    }

    pub fn occupied_kbps(&self) -> u32 {
        self.calls.values().map(|(_, g)| g).sum()
    }

    pub fn available_kbps(&self) -> u32 {
        self.capacity_kbps - self.occupied_kbps()
    }

    /// Total bandwidth reclaimable by squeezing every adaptive call to
    /// its floor.
    pub fn releasable_kbps(&self) -> u32 {
        self.calls
            .values()
            .filter(|(c, _)| c.adaptive)
            .map(|(c, g)| g - c.beta_min_kbps)
            .sum()
    }

    pub fn call_count(&self) -> usize {
        self.calls.len()
    }

    pub fn grant_of(&self, session_id: u64) -> Option<u32> {
        self.calls.get(&session_id).map(|(_, g)| *g)
    }

    pub fn contains(&self, session_id: u64) -> bool {
        self.calls.contains_key(&session_id)
    }

    fn insert(&mut self, session_id: u64, class: TrafficClass, grant: u32) -> Result<(), CacError> {
        if self.calls.contains_key(&session_id) {
            return Err(CacError::DuplicateSession(session_id));
        }
        let available = self.available_kbps();
        if grant > available {
            return Err(CacError::CapacityExceeded {
                grant,
                available,
            });
        }
        debug_assert!(grant >= class.beta_min_kbps && grant <= class.beta_r_kbps);
        self.calls.insert(session_id, (class, grant));
        Ok(())
    }

    /// Removes a departing call and returns the grant it held.
    pub fn release(&mut self, session_id: u64) -> Result<u32, CacError> {
        self.calls
            .remove(&session_id)
            .map(|(_, g)| g)
            .ok_or(CacError::UnknownSession(session_id))
    }

    /// Re-inflates degraded adaptive calls from currently available
    /// capacity, deepest deficit first (ties by session id). Returns the
    /// upgrades applied. Only meaningful when the `restore_qos` switch
    /// is on; callers gate on it.
    pub fn restore_qos(&mut self) -> Vec<Degradation> {
        let mut budget = self.available_kbps();
        let mut order: Vec<(u32, u64)> = self
            .calls
            .iter()
            .filter(|(_, (c, g))| c.adaptive && *g < c.beta_r_kbps)
            .map(|(id, (c, g))| (c.beta_r_kbps - g, *id))
            .collect();
        order.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));

        let mut upgrades = Vec::new();
        for (deficit, id) in order {
            if budget == 0 {
                break;
            }
            let add = deficit.min(budget);
            let entry = self.calls.get_mut(&id).unwrap();
            entry.1 += add;
            budget -= add;
            upgrades.push(Degradation {
                session_id: id,
                new_grant_kbps: entry.1,
            });
        }
        upgrades
    }
}

/// Squeezes adaptive calls, largest slack first (ties by session id),
/// until exactly `need_kbps` is freed. The caller must have checked
/// `need_kbps <= releasable_kbps()`.
pub fn degrade_victims(ledger: &mut MacroLedger, need_kbps: u32) -> Vec<Degradation> {
    assert!(
        need_kbps <= ledger.releasable_kbps(),
        "degradation need exceeds releasable bandwidth"
    );
    let mut order: Vec<(u32, u64)> = ledger
        .calls
        .iter()
        .filter(|(_, (c, _))| c.adaptive)
        .map(|(id, (c, g))| (g - c.beta_min_kbps, *id))
        .collect();
    order.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut remaining = need_kbps;
    let mut out = Vec::new();
    for (slack, id) in order {
        if remaining == 0 {
            break;
        }
        let cut = slack.min(remaining);
        if cut == 0 {
            continue;
        }
        let entry = ledger.calls.get_mut(&id).unwrap();
        entry.1 -= cut;
        remaining -= cut;
        out.push(Degradation {
            session_id: id,
            new_grant_kbps: entry.1,
        });
    }
    debug_assert_eq!(remaining, 0);
    out
}

/// Policy for new originating calls. Degradation is never applied here:
/// if neither a covering FAP nor plain macro capacity can take the call,
/// it is blocked.
pub fn admit_new(
    call: CallRequest,
    femto: Option<FapCandidate>,
    ledger: &mut MacroLedger,
    t: &CacThresholds,
) -> CacDecision {
    if let Some(f) = femto {
        if f.snir_db >= t.gamma2_db && f.has_slot() {
            return CacDecision::AdmitFemto { fap: f.fap };
        }
    }
    let rate = call.class.beta_r_kbps;
    if ledger.available_kbps() >= rate {
        ledger
            .insert(call.session_id, call.class, rate)
            .expect("checked availability");
        CacDecision::AdmitMacro {
            granted_kbps: rate,
            degradations: Vec::new(),
        }
    } else {
        CacDecision::Block
    }
}

/// Policy for macro-attached calls entering a femtocell's coverage. The
/// offload happens when the FAP is strong outright or at least as good
/// as the current macro link, and has a slot. Otherwise the call simply
/// stays where it is.
pub fn admit_macro_originated(
    target: FapCandidate,
    current_macro_snir_db: f64,
    t: &CacThresholds,
) -> CacDecision {
    let wanted = target.snir_db >= t.gamma2_db || current_macro_snir_db <= target.snir_db;
    if wanted && target.has_slot() {
        CacDecision::AdmitFemto { fap: target.fap }
    } else {
        CacDecision::StayMacro
    }
}

/// Policy for femto-attached calls whose serving signal is failing.
pub fn admit_femto_originated(
    call: CallRequest,
    target: Option<FapCandidate>,
    ledger: &mut MacroLedger,
    t: &CacThresholds,
) -> CacDecision {
    let class = call.class;

    if let Some(f) = target {
        if f.snir_db >= t.gamma2_db && f.has_slot() {
            return CacDecision::AdmitFemto { fap: f.fap };
        }
        if f.snir_db >= t.gamma1_db && f.snir_db < t.gamma2_db {
            // Marginal target: the macrocell takes the call at full rate
            // if it can without squeezing anyone; else the marginal FAP
            // serves it; else fall through to degradation.
            if ledger.available_kbps() >= class.beta_r_kbps {
                ledger
                    .insert(call.session_id, class, class.beta_r_kbps)
                    .expect("checked availability");
                return CacDecision::AdmitMacro {
                    granted_kbps: class.beta_r_kbps,
                    degradations: Vec::new(),
                };
            }
            if f.has_slot() {
                return CacDecision::AdmitFemto { fap: f.fap };
            }
        }
    }

    // Macro with degradation: grant as much as available plus what
    // adaptive calls can give up, capped at the requested rate.
    let available = ledger.available_kbps();
    let grant = class
        .beta_r_kbps
        .min(available + ledger.releasable_kbps());
    if grant < class.beta_min_kbps {
        return CacDecision::Drop;
    }
    let need = grant.saturating_sub(available);
    let degradations = degrade_victims(ledger, need);
    ledger
        .insert(call.session_id, class, grant)
        .expect("freed exactly the shortfall");
    CacDecision::AdmitMacro {
        granted_kbps: grant,
        degradations,
    }
}
