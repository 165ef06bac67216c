//! Handover signaling flows.
//!
//! Three deterministic step-sequenced flows cover every handover kind:
//! femto-to-macro (33 steps), macro-to-femto (34 steps) and
//! femto-to-femto (29 steps). Each step is numbered, attributed to a
//! sending and receiving entity, and labeled. Purely internal actions
//! (a decision, an admission check) are self-steps with `from == to`;
//! they keep the step numbering stable but never count as messages.
//!
//! Flows abort at fixed gate steps: pre-authentication or admission for
//! femto-to-macro, authorization then admission plus interference for
//! macro-to-femto, authorization then admission for femto-to-femto. An
//! aborted trace ends exactly at its gate step; nothing later leaks out.

use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt;

use crate::topology::FapId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Ms,
    Fap,
    Fgw,
    Cn,
    Rnc,
    MacroBs,
}

impl EntityKind {
    pub fn name(&self) -> &'static str {
        match self {
            EntityKind::Ms => "ms",
            EntityKind::Fap => "fap",
            EntityKind::Fgw => "fgw",
            EntityKind::Cn => "cn",
            EntityKind::Rnc => "rnc",
            EntityKind::MacroBs => "macro_bs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Entity {
    pub kind: EntityKind,
    pub id: u32,
}

impl Entity {
    pub fn ms(id: u32) -> Self {
        Entity { kind: EntityKind::Ms, id }
    }
    pub fn fap(id: FapId) -> Self {
        Entity { kind: EntityKind::Fap, id: id.0 }
    }
    pub fn fgw() -> Self {
        Entity { kind: EntityKind::Fgw, id: 0 }
    }
    pub fn cn() -> Self {
        Entity { kind: EntityKind::Cn, id: 0 }
    }
    pub fn rnc() -> Self {
        Entity { kind: EntityKind::Rnc, id: 0 }
    }
    pub fn macro_bs() -> Self {
        Entity { kind: EntityKind::MacroBs, id: 0 }
    }
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            EntityKind::Ms | EntityKind::Fap => write!(f, "{}#{}", self.kind.name(), self.id),
            _ => f.write_str(self.kind.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignalingStep {
    /// 1-based position in the flow.
    pub index: u32,
    pub from: Entity,
    pub to: Entity,
    pub label: &'static str,
}

impl SignalingStep {
    /// Self-steps are internal actions, not messages.
    pub fn is_message(&self) -> bool {
        self.from != self.to
    }

    /// Whether the step crosses the air interface (mobile on one end).
    pub fn is_air(&self) -> bool {
        self.is_message()
            && (self.from.kind == EntityKind::Ms || self.to.kind == EntityKind::Ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    F2m,
    M2f,
    F2f,
}

impl FlowKind {
    pub fn name(&self) -> &'static str {
        match self {
            FlowKind::F2m => "f2m",
            FlowKind::M2f => "m2f",
            FlowKind::F2f => "f2f",
        }
    }

    /// Step count of the completed flow.
    pub fn full_length(&self) -> u32 {
        match self {
            FlowKind::F2m => 33,
            FlowKind::M2f => 34,
            FlowKind::F2f => 29,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortReason {
    /// Pre-authentication with the listed networks failed.
    Preauth,
    /// The target refused the user's authorization.
    Auth,
    /// Admission (or the interference check riding with it) refused the
    /// call.
    Cac,
}

impl AbortReason {
    pub fn name(&self) -> &'static str {
        match self {
            AbortReason::Preauth => "preauth",
            AbortReason::Auth => "auth",
            AbortReason::Cac => "cac",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceOutcome {
    Completed,
    Aborted { reason: AbortReason, at_step: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignalingTrace {
    pub flow: FlowKind,
    pub steps: Vec<SignalingStep>,
    pub outcome: TraceOutcome,
}

impl SignalingTrace {
    pub fn is_completed(&self) -> bool {
        self.outcome == TraceOutcome::Completed
    }

    pub fn message_count(&self) -> u32 {
        self.steps.iter().filter(|s| s.is_message()).count() as u32
    }

    /// Total elapsed time using per-leg delays.
    pub fn latency_ms(&self, timing: &SignalingTiming) -> f64 {
        self.steps
            .iter()
            .map(|s| {
                if !s.is_message() {
                    timing.self_step_ms
                } else if s.is_air() {
                    timing.air_ms
                } else {
                    timing.backhaul_ms
                }
            })
            .sum()
    }

    /// One line per step: `index,from,to,label` with entity kinds only,
    /// the format golden fixtures are stored in.
    pub fn render_csv(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&format!(
                "{},{},{},{}\n",
                s.index,
                s.from.kind.name(),
                s.to.kind.name(),
                s.label
            ));
        }
        out
    }
}

/// Per-leg delays. Self-steps are instantaneous by default; the flows'
/// over-the-air and wired legs carry distinct costs.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalingTiming {
    pub air_ms: f64,
    pub backhaul_ms: f64,
    pub self_step_ms: f64,
}

impl Default for SignalingTiming {
    fn default() -> Self {
        SignalingTiming {
            air_ms: 1.0,
            backhaul_ms: 5.0,
            self_step_ms: 0.0,
        }
    }
}

/// Message totals of a trace: overall and tallied per entity kind, where
/// an entity scores one for each message it sends or receives.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignalingCost {
    pub messages_total: u32,
    pub per_entity: BTreeMap<EntityKind, u32>,
}

pub fn signaling_cost(trace: &SignalingTrace) -> SignalingCost {
    let mut per_entity: BTreeMap<EntityKind, u32> = BTreeMap::new();
    let mut total = 0;
    for s in trace.steps.iter().filter(|s| s.is_message()) {
        total += 1;
        *per_entity.entry(s.from.kind).or_insert(0) += 1;
        *per_entity.entry(s.to.kind).or_insert(0) += 1;
    }
    SignalingCost {
        messages_total: total,
        per_entity,
    }
}

/// Measured signal levels carried in the femto-to-macro context for
/// audit; they do not alter the emitted steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignalReport {
    pub serving_rssi_dbm: f64,
    pub target_rssi_dbm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F2mContext {
    pub preauth_ok: bool,
    pub cac_ok: bool,
    pub signal_report: SignalReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct M2fContext {
    pub authorization_ok: bool,
    pub cac_ok: bool,
    pub interference_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F2fContext {
    pub authorization_ok: bool,
    pub cac_ok: bool,
}

struct StepBuilder {
    steps: Vec<SignalingStep>,
}

impl StepBuilder {
    fn new() -> Self {
        StepBuilder { steps: Vec::new() }
    }

    fn step(&mut self, from: Entity, to: Entity, label: &'static str) -> &mut Self {
        let index = self.steps.len() as u32 + 1;
        self.steps.push(SignalingStep {
            index,
            from,
            to,
            label,
        });
        self
    }

    fn internal(&mut self, at: Entity, label: &'static str) -> &mut Self {
        self.step(at, at, label)
    }
}

fn finish(flow: FlowKind, mut steps: Vec<SignalingStep>, gate: Option<(AbortReason, u32)>) -> SignalingTrace {
    debug_assert_eq!(steps.len() as u32, flow.full_length());
    debug_assert!(steps.iter().enumerate().all(|(i, s)| s.index == i as u32 + 1));
    let outcome = match gate {
        None => TraceOutcome::Completed,
        Some((reason, at_step)) => {
            steps.truncate(at_step as usize);
            TraceOutcome::Aborted { reason, at_step }
        }
    };
    SignalingTrace { flow, steps, outcome }
}

/// Femto-to-macro flow. The serving FAP drives the request through the
/// gateway and core toward the macro base station; the mobile ends
/// attached to the macrocell and the old femto link is torn down. Gates:
/// pre-authentication at step 6, admission at step 12.
pub fn run_f2m(ms_id: u32, s_fap: FapId, ctx: &F2mContext) -> SignalingTrace {
    let ms = Entity::ms(ms_id);
    let sf = Entity::fap(s_fap);
    let fgw = Entity::fgw();
    let cn = Entity::cn();
    let rnc = Entity::rnc();
    let mbs = Entity::macro_bs();

    let mut b = StepBuilder::new();
    b.internal(ms, "signal_measurement") // 1
        .step(ms, sf, "measurement_report") // 2
        .internal(ms, "neighbor_scan") // 3
        .step(sf, mbs, "son_configuration") // 4
        .step(sf, ms, "neighbor_cell_list") // 5
        .step(ms, mbs, "pre_authentication") // 6
        .internal(sf, "handover_decision") // 7
        .step(sf, fgw, "ho_request") // 8
        .step(fgw, cn, "ho_request") // 9
        .step(cn, rnc, "ho_request") // 10
        .step(rnc, mbs, "ho_request") // 11
        .internal(mbs, "cac_rrc") // 12
        .step(mbs, rnc, "ho_response") // 13
        .step(rnc, cn, "ho_response") // 14
        .step(cn, fgw, "ho_response") // 15
        .step(fgw, sf, "ho_response") // 16
        .step(rnc, mbs, "new_link_request") // 17
        .step(mbs, rnc, "new_link_ack") // 18
        .step(rnc, mbs, "bearer_setup") // 19
        .step(mbs, rnc, "bearer_setup_ack") // 20
        .step(rnc, mbs, "new_link_complete") // 21
        .step(sf, mbs, "data_forwarding") // 22
        .step(ms, mbs, "channel_reestablish") // 23
        .step(mbs, ms, "channel_reestablish_ack") // 24
        .step(ms, sf, "detach") // 25
        .step(sf, ms, "detach_ack") // 26
        .step(ms, mbs, "synchronization") // 27
        .step(ms, mbs, "ho_complete") // 28
        .step(mbs, cn, "ho_complete") // 29
        .step(cn, fgw, "ho_complete") // 30
        .step(sf, fgw, "link_delete_request") // 31
        .step(fgw, sf, "link_delete_ack") // 32
        .internal(sf, "link_delete_complete"); // 33

    let gate = if !ctx.preauth_ok {
        Some((AbortReason::Preauth, 6))
    } else if !ctx.cac_ok {
        Some((AbortReason::Cac, 12))
    } else {
        None
    };
    finish(FlowKind::F2m, b.steps, gate)
}

/// Macro-to-femto flow. The macro side pushes the request down through
/// the core and gateway to the target FAP, which checks authorization,
/// admission and interference before the path moves. Gates:
/// authorization at step 12, admission plus interference at step 13.
pub fn run_m2f(ms_id: u32, t_fap: FapId, ctx: &M2fContext) -> SignalingTrace {
    let ms = Entity::ms(ms_id);
    let tf = Entity::fap(t_fap);
    let fgw = Entity::fgw();
    let cn = Entity::cn();
    let rnc = Entity::rnc();
    let mbs = Entity::macro_bs();

    let mut b = StepBuilder::new();
    b.internal(ms, "signal_measurement") // 1
        .step(ms, mbs, "measurement_report") // 2
        .step(mbs, fgw, "son_configuration") // 3
        .step(mbs, ms, "neighbor_cell_list") // 4
        .step(ms, tf, "pre_authentication") // 5
        .internal(ms, "handover_decision") // 6
        .step(mbs, rnc, "ho_request") // 7
        .step(rnc, cn, "ho_request") // 8
        .step(cn, fgw, "ho_request") // 9
        .step(fgw, tf, "ho_request") // 10
        .step(tf, fgw, "authorization_request") // 11
        .step(fgw, tf, "authorization_ack") // 12
        .internal(tf, "cac_rrc_interference") // 13
        .step(tf, fgw, "ho_response") // 14
        .step(fgw, cn, "ho_response") // 15
        .step(cn, rnc, "ho_response") // 16
        .step(rnc, mbs, "ho_response") // 17
        .step(fgw, tf, "new_link_request") // 18
        .step(tf, fgw, "new_link_ack") // 19
        .step(fgw, tf, "bearer_setup") // 20
        .step(tf, fgw, "bearer_setup_ack") // 21
        .step(fgw, tf, "new_link_complete") // 22
        .step(mbs, tf, "data_forwarding") // 23
        .step(ms, tf, "channel_reestablish") // 24
        .step(tf, ms, "channel_reestablish_ack") // 25
        .step(ms, mbs, "detach") // 26
        .step(mbs, ms, "detach_ack") // 27
        .step(ms, tf, "synchronization") // 28
        .step(ms, tf, "ho_complete") // 29
        .step(tf, fgw, "ho_complete") // 30
        .step(fgw, rnc, "ho_complete") // 31
        .step(mbs, rnc, "link_delete_request") // 32
        .step(rnc, mbs, "link_delete_ack") // 33
        .internal(mbs, "link_delete_complete"); // 34

    let gate = if !ctx.authorization_ok {
        Some((AbortReason::Auth, 12))
    } else if !(ctx.cac_ok && ctx.interference_ok) {
        Some((AbortReason::Cac, 13))
    } else {
        None
    };
    finish(FlowKind::M2f, b.steps, gate)
}

/// Femto-to-femto flow. Source and target FAP talk through their shared
/// gateway only; neither the core nor the RNC is involved, which is why
/// this flow is the shortest. Gates: authorization at step 11, admission
/// at step 12.
pub fn run_f2f(ms_id: u32, s_fap: FapId, t_fap: FapId, ctx: &F2fContext) -> SignalingTrace {
    let ms = Entity::ms(ms_id);
    let sf = Entity::fap(s_fap);
    let tf = Entity::fap(t_fap);
    let fgw = Entity::fgw();
    let mbs = Entity::macro_bs();

    let mut b = StepBuilder::new();
    b.internal(ms, "signal_measurement") // 1
        .step(ms, sf, "measurement_report") // 2
        .internal(ms, "neighbor_scan") // 3
        .step(sf, mbs, "son_configuration") // 4
        .step(sf, ms, "neighbor_cell_list") // 5
        .step(ms, tf, "pre_authentication") // 6
        .internal(sf, "handover_decision") // 7
        .step(sf, fgw, "ho_request") // 8
        .step(fgw, tf, "ho_request") // 9
        .step(tf, fgw, "authorization_request") // 10
        .step(fgw, tf, "authorization_ack") // 11
        .internal(tf, "cac_rrc") // 12
        .step(tf, fgw, "ho_response") // 13
        .step(fgw, sf, "ho_response") // 14
        .step(fgw, tf, "new_link_request") // 15
        .step(tf, fgw, "new_link_ack") // 16
        .step(fgw, tf, "new_link_complete") // 17
        .step(sf, tf, "data_forwarding") // 18
        .step(ms, tf, "channel_reestablish") // 19
        .step(tf, ms, "channel_reestablish_ack") // 20
        .step(ms, sf, "detach") // 21
        .step(sf, ms, "detach_ack") // 22
        .step(ms, tf, "synchronization") // 23
        .step(ms, tf, "ho_complete") // 24
        .step(tf, fgw, "ho_complete") // 25
        .step(fgw, sf, "ho_complete") // 26
        .step(sf, fgw, "link_delete_request") // 27
        .step(fgw, sf, "link_delete_ack") // 28
        .internal(sf, "link_delete_complete"); // 29

    let gate = if !ctx.authorization_ok {
        Some((AbortReason::Auth, 11))
    } else if !ctx.cac_ok {
        Some((AbortReason::Cac, 12))
    } else {
        None
    };
    finish(FlowKind::F2f, b.steps, gate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ok_f2m() -> F2mContext {
        F2mContext {
            preauth_ok: true,
            cac_ok: true,
            signal_report: SignalReport {
                serving_rssi_dbm: -80.0,
                target_rssi_dbm: -70.0,
            },
        }
    }

    fn ok_m2f() -> M2fContext {
        M2fContext {
            authorization_ok: true,
            cac_ok: true,
            interference_ok: true,
        }
    }

    fn ok_f2f() -> F2fContext {
        F2fContext {
            authorization_ok: true,
            cac_ok: true,
        }
    }

    #[test]
    fn completed_lengths() {
        assert_eq!(run_f2m(1, FapId(2), &ok_f2m()).steps.len(), 33);
        assert_eq!(run_m2f(1, FapId(2), &ok_m2f()).steps.len(), 34);
        assert_eq!(run_f2f(1, FapId(2), FapId(3), &ok_f2f()).steps.len(), 29);
    }

    #[test]
    fn indices_strictly_increase_from_one() {
        for trace in [
            run_f2m(1, FapId(2), &ok_f2m()),
            run_m2f(1, FapId(2), &ok_m2f()),
            run_f2f(1, FapId(2), FapId(3), &ok_f2f()),
        ] {
            for (i, s) in trace.steps.iter().enumerate() {
                assert_eq!(s.index, i as u32 + 1);
            }
            assert!(trace.is_completed());
        }
    }

    #[test]
    fn message_counts_exclude_self_steps() {
        assert_eq!(run_f2m(1, FapId(2), &ok_f2m()).message_count(), 28);
        assert_eq!(run_m2f(1, FapId(2), &ok_m2f()).message_count(), 30);
        assert_eq!(run_f2f(1, FapId(2), FapId(3), &ok_f2f()).message_count(), 24);
    }

    #[test]
    fn f2m_costs_more_than_f2f() {
        // The core-network and RNC legs of the macro path add messages
        // that the gateway-local femto path never sends.
        let f2m = signaling_cost(&run_f2m(1, FapId(2), &ok_f2m()));
        let f2f = signaling_cost(&run_f2f(1, FapId(2), FapId(3), &ok_f2f()));
        assert!(f2m.messages_total > f2f.messages_total);
        assert!(!f2f.per_entity.contains_key(&EntityKind::Cn));
        assert!(!f2f.per_entity.contains_key(&EntityKind::Rnc));
    }

    #[test]
    fn per_entity_counts_tally_both_ends() {
        let trace = run_f2f(1, FapId(2), FapId(3), &ok_f2f());
        let cost = signaling_cost(&trace);
        let ends: u32 = cost.per_entity.values().sum();
        assert_eq!(ends, 2 * cost.messages_total);
    }

    #[test]
    fn f2m_aborts() {
        let preauth = run_f2m(
            1,
            FapId(2),
            &F2mContext {
                preauth_ok: false,
                ..ok_f2m()
            },
        );
        assert_eq!(
            preauth.outcome,
            TraceOutcome::Aborted {
                reason: AbortReason::Preauth,
                at_step: 6
            }
        );
        assert_eq!(preauth.steps.len(), 6);

        let cac = run_f2m(
            1,
            FapId(2),
            &F2mContext {
                cac_ok: false,
                ..ok_f2m()
            },
        );
        assert_eq!(
            cac.outcome,
            TraceOutcome::Aborted {
                reason: AbortReason::Cac,
                at_step: 12
            }
        );
        // No link-setup steps leak past the admission gate.
        assert!(cac.steps.iter().all(|s| !s.label.contains("link")));
    }

    #[test]
    fn m2f_aborts() {
        let auth = run_m2f(
            1,
            FapId(2),
            &M2fContext {
                authorization_ok: false,
                ..ok_m2f()
            },
        );
        assert_eq!(
            auth.outcome,
            TraceOutcome::Aborted {
                reason: AbortReason::Auth,
                at_step: 12
            }
        );

        let interference = run_m2f(
            1,
            FapId(2),
            &M2fContext {
                interference_ok: false,
                ..ok_m2f()
            },
        );
        assert_eq!(
            interference.outcome,
            TraceOutcome::Aborted {
                reason: AbortReason::Cac,
                at_step: 13
            }
        );
        assert!(interference.steps.iter().all(|s| s.label != "ho_response"));
    }

    #[test]
    fn f2f_aborts() {
        let auth = run_f2f(
            1,
            FapId(2),
            FapId(3),
            &F2fContext {
                authorization_ok: false,
                cac_ok: true,
            },
        );
        assert_eq!(
            auth.outcome,
            TraceOutcome::Aborted {
                reason: AbortReason::Auth,
                at_step: 11
            }
        );
        // The admission self-step never runs when authorization fails.
        assert!(auth.steps.iter().all(|s| s.label != "cac_rrc"));

        let cac = run_f2f(
            1,
            FapId(2),
            FapId(3),
            &F2fContext {
                authorization_ok: true,
                cac_ok: false,
            },
        );
        assert_eq!(
            cac.outcome,
            TraceOutcome::Aborted {
                reason: AbortReason::Cac,
                at_step: 12
            }
        );
    }

    #[test]
    fn authorization_precedes_admission_in_femto_targeted_flows() {
        for trace in [
            run_m2f(1, FapId(2), &ok_m2f()),
            run_f2f(1, FapId(2), FapId(3), &ok_f2f()),
        ] {
            let auth = trace
                .steps
                .iter()
                .position(|s| s.label == "authorization_ack")
                .unwrap();
            let cac = trace
                .steps
                .iter()
                .position(|s| s.label.starts_with("cac_rrc"))
                .unwrap();
            assert!(auth < cac);
        }
    }

    #[test]
    fn admission_precedes_link_setup_everywhere() {
        for trace in [
            run_f2m(1, FapId(2), &ok_f2m()),
            run_m2f(1, FapId(2), &ok_m2f()),
            run_f2f(1, FapId(2), FapId(3), &ok_f2f()),
        ] {
            let cac = trace
                .steps
                .iter()
                .position(|s| s.label.starts_with("cac_rrc"))
                .unwrap();
            let link = trace
                .steps
                .iter()
                .position(|s| s.label == "new_link_request")
                .unwrap();
            assert!(cac < link);
        }
    }

    #[test]
    fn teardown_follows_completion() {
        for trace in [
            run_f2m(1, FapId(2), &ok_f2m()),
            run_m2f(1, FapId(2), &ok_m2f()),
            run_f2f(1, FapId(2), FapId(3), &ok_f2f()),
        ] {
            let last_complete = trace
                .steps
                .iter()
                .rposition(|s| s.label == "ho_complete")
                .unwrap();
            let first_delete = trace
                .steps
                .iter()
                .position(|s| s.label.starts_with("link_delete"))
                .unwrap();
            assert!(last_complete < first_delete);
        }
    }

    #[test]
    fn default_latencies() {
        let timing = SignalingTiming::default();
        let f2m = run_f2m(1, FapId(2), &ok_f2m());
        let m2f = run_m2f(1, FapId(2), &ok_m2f());
        let f2f = run_f2f(1, FapId(2), FapId(3), &ok_f2f());
        assert_eq!(f2m.latency_ms(&timing), 104.0);
        assert_eq!(m2f.latency_ms(&timing), 114.0);
        assert_eq!(f2f.latency_ms(&timing), 84.0);
        // The gateway-local flow is the fastest.
        assert!(f2f.latency_ms(&timing) < f2m.latency_ms(&timing));
    }

    #[test]
    fn render_format() {
        let trace = run_f2f(1, FapId(2), FapId(3), &ok_f2f());
        let text = trace.render_csv();
        let first = text.lines().next().unwrap();
        assert_eq!(first, "1,ms,ms,signal_measurement");
        assert_eq!(text.lines().count(), 29);
    }
}
