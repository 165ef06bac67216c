//! Neighbor-cell-list construction.
//!
//! The list is assembled from four sets over the mobile's measurements:
//!
//! * `A` (detectable): accessible FAPs received at or above the detection
//!   threshold `S_T0`;
//! * `B` (strong): the subset of `A` at or above the stronger handover
//!   threshold `S_T1`;
//! * `C` (redundant): strong FAPs removed because of frequency layout.
//!   When the mobile is attached to a femtocell, these are the strong
//!   FAPs sharing the serving cell's channel. When it is attached to the
//!   macrocell, each channel used by two or more strong FAPs keeps only
//!   its nearest member and the rest go to `C`;
//! * `D` (hidden): accessible FAPs whose location the serving side knows
//!   through coordination, within `hidden_max_distance` of the mobile,
//!   that either measure below `S_T1` or fall under the same frequency
//!   rule as `C`. These are the FAPs a signal-only list would lose to
//!   wall attenuation.
//!
//! The final list is `(B \ C) union D`, reported with the bookkeeping
//! counts `N_1 = |B|`, `N_2 = |C|`, `M = |D|` and the size identity
//! `N_f = N_1 - N_2 + M`. A single-threshold baseline (`A` alone) is
//! provided for comparison benchmarks.

use crate::radio::LinkBudget;
use crate::topology::{FapId, Topology, UserId};
use crate::geometry::Point;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// One measured (or coordination-reported) neighbor FAP.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub fap: FapId,
    pub rssi_dbm: f64,
    pub channel: u16,
    /// Whether this mobile may attach (open access or authorized).
    pub accessible: bool,
    /// Distance to the FAP when its location is known through
    /// coordination; `None` when only the air signal is available.
    pub distance_m: Option<f64>,
}

/// Thresholds and switches for list construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NclThresholds {
    /// Detection threshold `S_T0`, dBm.
    pub detect_dbm: f64,
    /// Strong-neighbor threshold `S_T1`, dBm.
    pub strong_dbm: f64,
    /// Maximum distance for hidden-FAP inclusion, meters.
    pub hidden_max_distance_m: f64,
    /// When set, the hidden set admits only FAPs measuring below `S_T1`,
    /// dropping the same-frequency clause.
    pub hidden_excludes_cochannel: bool,
}

impl Default for NclThresholds {
    fn default() -> Self {
        NclThresholds {
            detect_dbm: -90.0,
            strong_dbm: -75.0,
            hidden_max_distance_m: 20.0,
            hidden_excludes_cochannel: false,
        }
    }
}

/// How an entry earned its place.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntryKind {
    /// Measured at or above `S_T1`.
    Strong,
    /// Recovered through coordination despite a weak or redundant signal.
    Hidden,
    /// Baseline list: measured at or above `S_T0`.
    Detected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NclEntry {
    pub fap: FapId,
    pub kind: EntryKind,
    pub rssi_dbm: f64,
    pub distance_m: Option<f64>,
}

/// A constructed neighbor cell list plus its set-size bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborCellList {
    /// Strong entries by descending RSSI, then hidden entries by
    /// ascending distance; a FAP appears at most once.
    pub entries: Vec<NclEntry>,
    /// Whether the overlaid macrocell was detected; it always remains the
    /// fallback handover target.
    pub includes_macro: bool,
    /// `|A|`.
    pub detectable_count: usize,
    /// `N_1 = |B|`.
    pub strong_count: usize,
    /// `N_2 = |C|`.
    pub redundant_count: usize,
    /// `M = |D|`, after dropping FAPs already kept as strong.
    pub hidden_count: usize,
    /// `N_f = N_1 - N_2 + M`.
    pub size: usize,
}

impl NeighborCellList {
    pub fn contains(&self, fap: FapId) -> bool {
        self.entries.iter().any(|e| e.fap == fap)
    }
}

fn detectable<'m>(measurements: &'m [Measurement], t: &NclThresholds) -> Vec<&'m Measurement> {
    measurements
        .iter()
        .filter(|m| m.accessible && m.rssi_dbm >= t.detect_dbm)
        .collect()
}

fn strong<'m>(detectable: &[&'m Measurement], t: &NclThresholds) -> Vec<&'m Measurement> {
    detectable
        .iter()
        .copied()
        .filter(|m| m.rssi_dbm >= t.strong_dbm)
        .collect()
}

/// Hidden-set membership test shared by both connected modes.
/// `cochannel` decides whether a FAP falls under the same-frequency rule.
fn hidden<'m>(
    measurements: &'m [Measurement],
    t: &NclThresholds,
    cochannel: impl Fn(&Measurement) -> bool,
) -> Vec<&'m Measurement> {
    measurements
        .iter()
        .filter(|m| {
            m.accessible
                && m.distance_m
                    .map_or(false, |d| d <= t.hidden_max_distance_m)
                && if t.hidden_excludes_cochannel {
                    m.rssi_dbm < t.strong_dbm
                } else {
                    m.rssi_dbm < t.strong_dbm || cochannel(m)
                }
        })
        .collect()
}

fn assemble(
    strong_kept: Vec<&Measurement>,
    hidden_set: Vec<&Measurement>,
    detectable_count: usize,
    strong_count: usize,
    redundant_count: usize,
    includes_macro: bool,
) -> NeighborCellList {
    let mut entries: Vec<NclEntry> = Vec::new();

    let mut strong_sorted = strong_kept;
    strong_sorted.sort_by(|a, b| {
        b.rssi_dbm
            .partial_cmp(&a.rssi_dbm)
            .unwrap()
            .then(a.fap.cmp(&b.fap))
    });
    for m in &strong_sorted {
        entries.push(NclEntry {
            fap: m.fap,
            kind: EntryKind::Strong,
            rssi_dbm: m.rssi_dbm,
            distance_m: m.distance_m,
        });
    }

    // A FAP kept in the strong part is not hidden; the hidden set only
    // readmits FAPs the signal rules left out.
    let listed: BTreeSet<FapId> = entries.iter().map(|e| e.fap).collect();
    let mut hidden_sorted: Vec<&Measurement> = hidden_set
        .iter()
        .copied()
        .filter(|m| !listed.contains(&m.fap))
        .collect();
    let hidden_count = hidden_sorted.len();
    hidden_sorted.sort_by(|a, b| {
        a.distance_m
            .unwrap()
            .partial_cmp(&b.distance_m.unwrap())
            .unwrap()
            .then(a.fap.cmp(&b.fap))
    });
    for m in hidden_sorted {
        entries.push(NclEntry {
            fap: m.fap,
            kind: EntryKind::Hidden,
            rssi_dbm: m.rssi_dbm,
            distance_m: m.distance_m,
        });
    }

    let size = strong_count - redundant_count + hidden_count;
    debug_assert_eq!(entries.len(), size);
    NeighborCellList {
        entries,
        includes_macro,
        detectable_count,
        strong_count,
        redundant_count,
        hidden_count,
        size,
    }
}

/// List for a femtocell-attached mobile. `measurements` must not contain
/// the serving FAP itself. Strong FAPs sharing `serving_channel` are
/// redundant; the hidden clause readmits them when their location is
/// known, since a same-channel neighbor cannot be measured apart from the
/// serving signal.
pub fn build_fap_connected(
    measurements: &[Measurement],
    serving_channel: u16,
    macro_detected: bool,
    t: &NclThresholds,
) -> NeighborCellList {
    let a = detectable(measurements, t);
    let b = strong(&a, t);
    let (kept, removed): (Vec<&Measurement>, Vec<&Measurement>) =
        b.iter().partition(|m| m.channel != serving_channel);
    let d = hidden(measurements, t, |m| m.channel == serving_channel);
    assemble(kept, d, a.len(), b.len(), removed.len(), macro_detected)
}

/// List for a macrocell-attached mobile. There is no serving channel;
/// instead, whenever two or more strong FAPs share one channel, only the
/// nearest (by known distance, falling back to strongest signal) is kept
/// and the rest are redundant. The hidden clause applies to every channel
/// that had such duplicates.
pub fn build_macro_connected(
    measurements: &[Measurement],
    macro_detected: bool,
    t: &NclThresholds,
) -> NeighborCellList {
    let a = detectable(measurements, t);
    let b = strong(&a, t);

    let mut by_channel: std::collections::BTreeMap<u16, Vec<&Measurement>> =
        std::collections::BTreeMap::new();
    for m in &b {
        by_channel.entry(m.channel).or_default().push(m);
    }

    let mut kept: Vec<&Measurement> = Vec::new();
    let mut removed_count = 0usize;
    let mut dup_channels: BTreeSet<u16> = BTreeSet::new();
    for (channel, group) in &by_channel {
        if group.len() < 2 {
            kept.extend(group.iter().copied());
            continue;
        }
        dup_channels.insert(*channel);
        // Nearest known distance wins; groups with no known distances
        // fall back to the strongest signal.
        let best = if group.iter().any(|m| m.distance_m.is_some()) {
            group
                .iter()
                .filter(|m| m.distance_m.is_some())
                .min_by(|a, b| {
                    a.distance_m
                        .unwrap()
                        .partial_cmp(&b.distance_m.unwrap())
                        .unwrap()
                        .then(a.fap.cmp(&b.fap))
                })
                .copied()
                .unwrap()
        } else {
            group
                .iter()
                .max_by(|a, b| {
                    a.rssi_dbm
                        .partial_cmp(&b.rssi_dbm)
                        .unwrap()
                        .then(b.fap.cmp(&a.fap))
                })
                .copied()
                .unwrap()
        };
        kept.push(best);
        removed_count += group.len() - 1;
    }

    let d = hidden(measurements, t, |m| dup_channels.contains(&m.channel));
    assemble(kept, d, a.len(), b.len(), removed_count, macro_detected)
}

/// Single-threshold baseline: every accessible FAP at or above `S_T0`,
/// strongest first. No frequency filtering, no hidden recovery.
pub fn build_traditional(
    measurements: &[Measurement],
    macro_detected: bool,
    t: &NclThresholds,
) -> NeighborCellList {
    let a = detectable(measurements, t);
    let mut sorted = a.clone();
    sorted.sort_by(|x, y| {
        y.rssi_dbm
            .partial_cmp(&x.rssi_dbm)
            .unwrap()
            .then(x.fap.cmp(&y.fap))
    });
    let entries: Vec<NclEntry> = sorted
        .iter()
        .map(|m| NclEntry {
            fap: m.fap,
            kind: EntryKind::Detected,
            rssi_dbm: m.rssi_dbm,
            distance_m: m.distance_m,
        })
        .collect();
    let n = a.len();
    NeighborCellList {
        entries,
        includes_macro: macro_detected,
        detectable_count: n,
        strong_count: n,
        redundant_count: 0,
        hidden_count: 0,
        size: n,
    }
}

/// Collects measurements around a mobile position from a topology: every
/// candidate FAP within wall-free detection reach, plus every
/// known-location FAP within the hidden-inclusion distance regardless of
/// signal. The serving FAP is excluded. Distances are attached only for
/// FAPs in `known_locations`.
pub fn collect_measurements(
    lb: &LinkBudget<'_>,
    ms: Point,
    serving: Option<FapId>,
    known_locations: &[FapId],
    user: Option<UserId>,
    t: &NclThresholds,
) -> Vec<Measurement> {
    let topo: &Topology = lb.topology;
    let reach = detection_reach_m(lb, t);
    let known: BTreeSet<FapId> = known_locations.iter().copied().collect();

    let mut indexes: BTreeSet<usize> = topo.faps_within(ms, reach).into_iter().collect();
    for idx in topo.faps_within(ms, t.hidden_max_distance_m) {
        if known.contains(&topo.faps[idx].id) {
            indexes.insert(idx);
        }
    }

    indexes
        .into_iter()
        .filter(|&i| Some(topo.faps[i].id) != serving)
        .map(|i| {
            let fap = &topo.faps[i];
            Measurement {
                fap: fap.id,
                rssi_dbm: lb.fap_rssi_dbm(ms, i),
                channel: fap.frequency_channel,
                accessible: fap.admits_user(user),
                distance_m: known
                    .contains(&fap.id)
                    .then(|| fap.position.distance(&ms)),
            }
        })
        .collect()
}

/// Distance at which a wall-free femto link drops to the detection
/// threshold. Walls only shorten the true reach, so this bounds the
/// candidate search.
pub fn detection_reach_m(lb: &LinkBudget<'_>, t: &NclThresholds) -> f64 {
    let p = lb.params;
    let max_tx_mw = lb
        .topology
        .faps
        .iter()
        .map(|f| f.tx_power_mw)
        .fold(1.0, f64::max);
    let tx_dbm = 10.0 * max_tx_mw.log10();
    let budget = tx_dbm - t.detect_dbm - 20.0 * p.femto_freq_mhz.log10() - p.floor_loss_db + 28.0;
    10f64.powf(budget / p.indoor_loss_exponent).max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t() -> NclThresholds {
        NclThresholds::default()
    }

    fn m(id: u32, rssi: f64, channel: u16) -> Measurement {
        Measurement {
            fap: FapId(id),
            rssi_dbm: rssi,
            channel,
            accessible: true,
            distance_m: None,
        }
    }

    fn m_known(id: u32, rssi: f64, channel: u16, d: f64) -> Measurement {
        Measurement {
            distance_m: Some(d),
            ..m(id, rssi, channel)
        }
    }

    #[test]
    fn femto_connected_hand_traced_case() {
        // Serving channel 3. FAP 1 strong on channel 1; FAP 2 detectable
        // only; FAP 3 strong but on the serving channel; FAP 4 below
        // detection yet known at 15 m.
        let ms = vec![
            m(1, -70.0, 1),
            m(2, -80.0, 2),
            m(3, -73.0, 3),
            m_known(4, -95.0, 2, 15.0),
        ];
        let list = build_fap_connected(&ms, 3, true, &t());
        assert_eq!(list.detectable_count, 3);
        assert_eq!(list.strong_count, 2);
        assert_eq!(list.redundant_count, 1);
        assert_eq!(list.hidden_count, 1);
        assert_eq!(list.size, 2);
        let ids: Vec<FapId> = list.entries.iter().map(|e| e.fap).collect();
        assert_eq!(ids, vec![FapId(1), FapId(4)]);
        assert_eq!(list.entries[0].kind, EntryKind::Strong);
        assert_eq!(list.entries[1].kind, EntryKind::Hidden);
        assert!(list.includes_macro);
    }

    #[test]
    fn size_identity_holds_with_readmitted_cochannel() {
        // A same-channel strong FAP with known location is removed as
        // redundant and readmitted as hidden: it appears once, and the
        // count identity N_f = N_1 - N_2 + M still holds.
        let ms = vec![m_known(7, -60.0, 3, 9.0), m(8, -66.0, 1)];
        let list = build_fap_connected(&ms, 3, true, &t());
        assert_eq!(list.strong_count, 2);
        assert_eq!(list.redundant_count, 1);
        assert_eq!(list.hidden_count, 1);
        assert_eq!(list.size, 2);
        assert_eq!(list.entries.len(), 2);
        assert!(list.contains(FapId(7)));
        let e7 = list.entries.iter().find(|e| e.fap == FapId(7)).unwrap();
        assert_eq!(e7.kind, EntryKind::Hidden);
    }

    #[test]
    fn strict_hidden_mode_drops_cochannel_clause() {
        let ms = vec![m_known(7, -60.0, 3, 9.0)];
        let mut strict = t();
        strict.hidden_excludes_cochannel = true;
        let list = build_fap_connected(&ms, 3, true, &strict);
        assert_eq!(list.hidden_count, 0);
        assert!(!list.contains(FapId(7)));
        // Weak FAPs are unaffected by the switch.
        let ms2 = vec![m_known(9, -80.0, 1, 9.0)];
        let list2 = build_fap_connected(&ms2, 3, true, &strict);
        assert!(list2.contains(FapId(9)));
    }

    #[test]
    fn hidden_requires_known_location_within_limit() {
        let unknown = vec![m(5, -95.0, 1)];
        assert!(!build_fap_connected(&unknown, 0, true, &t()).contains(FapId(5)));

        let at_limit = vec![m_known(5, -95.0, 1, 20.0)];
        assert!(build_fap_connected(&at_limit, 0, true, &t()).contains(FapId(5)));

        let beyond = vec![m_known(5, -95.0, 1, 20.01)];
        assert!(!build_fap_connected(&beyond, 0, true, &t()).contains(FapId(5)));
    }

    #[test]
    fn inaccessible_faps_never_appear() {
        let mut closed = m_known(6, -60.0, 1, 5.0);
        closed.accessible = false;
        let list = build_fap_connected(&[closed], 0, true, &t());
        assert_eq!(list.detectable_count, 0);
        assert_eq!(list.hidden_count, 0);
        assert!(list.entries.is_empty());
    }

    #[test]
    fn macro_connected_keeps_nearest_per_duplicated_channel() {
        // Channel 2 has three strong users; the nearest by known distance
        // stays, two are redundant. Channel 1 is unique and untouched.
        let ms = vec![
            m_known(1, -60.0, 2, 18.0),
            m_known(2, -58.0, 2, 12.0),
            m(3, -55.0, 2),
            m(4, -70.0, 1),
        ];
        let list = build_macro_connected(&ms, true, &t());
        assert_eq!(list.strong_count, 4);
        assert_eq!(list.redundant_count, 2);
        // FAP 2 is nearest on channel 2 even though FAP 3 is louder.
        let strong_ids: Vec<FapId> = list
            .entries
            .iter()
            .filter(|e| e.kind == EntryKind::Strong)
            .map(|e| e.fap)
            .collect();
        assert!(strong_ids.contains(&FapId(2)));
        assert!(strong_ids.contains(&FapId(4)));
        assert!(!strong_ids.contains(&FapId(3)));
        // FAP 1 sits on a duplicated channel with a known location within
        // range, so the hidden clause readmits it.
        assert!(list.contains(FapId(1)));
        assert_eq!(list.size, 4 - 2 + 1);
    }

    #[test]
    fn macro_connected_falls_back_to_rssi_without_distances() {
        let ms = vec![m(1, -60.0, 2), m(2, -58.0, 2)];
        let list = build_macro_connected(&ms, true, &t());
        let kept: Vec<FapId> = list
            .entries
            .iter()
            .filter(|e| e.kind == EntryKind::Strong)
            .map(|e| e.fap)
            .collect();
        assert_eq!(kept, vec![FapId(2)]);
    }

    #[test]
    fn traditional_is_detection_only() {
        let ms = vec![
            m(1, -70.0, 1),
            m(2, -89.9, 1),
            m(3, -90.1, 1),
            m_known(4, -95.0, 2, 5.0),
        ];
        let list = build_traditional(&ms, true, &t());
        let ids: Vec<FapId> = list.entries.iter().map(|e| e.fap).collect();
        assert_eq!(ids, vec![FapId(1), FapId(2)]);
        assert_eq!(list.size, 2);
        assert!(list.entries.iter().all(|e| e.kind == EntryKind::Detected));
    }

    #[test]
    fn ordering_strong_by_signal_then_hidden_by_distance() {
        let ms = vec![
            m(1, -72.0, 1),
            m(2, -60.0, 2),
            m_known(3, -91.0, 1, 14.0),
            m_known(4, -93.0, 2, 7.0),
        ];
        let list = build_fap_connected(&ms, 9, true, &t());
        let ids: Vec<FapId> = list.entries.iter().map(|e| e.fap).collect();
        assert_eq!(ids, vec![FapId(2), FapId(1), FapId(4), FapId(3)]);
    }

    #[test]
    fn macro_flag_follows_detection() {
        let list = build_fap_connected(&[], 0, false, &t());
        assert!(!list.includes_macro);
        assert_eq!(list.size, 0);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_measurement() -> impl Strategy<Value = Measurement> {
            (
                0u32..40,
                -110.0f64..-40.0,
                0u16..4,
                any::<bool>(),
                proptest::option::of(0.0f64..40.0),
            )
                .prop_map(|(id, rssi, ch, acc, d)| Measurement {
                    fap: FapId(id),
                    rssi_dbm: rssi,
                    channel: ch,
                    accessible: acc,
                    distance_m: d,
                })
        }

        proptest! {
            // Lowering the strong threshold can only grow the strong set.
            #[test]
            fn strong_set_monotone_in_threshold(
                ms in proptest::collection::vec(arb_measurement(), 0..30),
                serving in 0u16..4,
            ) {
                let mut ms = ms;
                ms.dedup_by_key(|m| m.fap);
                let loose = NclThresholds { strong_dbm: -80.0, ..NclThresholds::default() };
                let tight = NclThresholds { strong_dbm: -70.0, ..NclThresholds::default() };
                let a = build_fap_connected(&ms, serving, true, &loose);
                let b = build_fap_connected(&ms, serving, true, &tight);
                prop_assert!(a.strong_count >= b.strong_count);
            }

            // The size identity and entry bound hold for arbitrary inputs.
            #[test]
            fn count_identity(
                ms in proptest::collection::vec(arb_measurement(), 0..30),
                serving in 0u16..4,
            ) {
                let mut ms = ms;
                ms.sort_by_key(|m| m.fap);
                ms.dedup_by_key(|m| m.fap);
                for list in [
                    build_fap_connected(&ms, serving, true, &NclThresholds::default()),
                    build_macro_connected(&ms, true, &NclThresholds::default()),
                ] {
                    prop_assert_eq!(
                        list.size,
                        list.strong_count - list.redundant_count + list.hidden_count
                    );
                    prop_assert_eq!(list.entries.len(), list.size);
                    // No duplicates.
                    let mut ids: Vec<FapId> = list.entries.iter().map(|e| e.fap).collect();
                    ids.sort_unstable();
                    ids.dedup();
                    prop_assert_eq!(ids.len(), list.entries.len());
                }
            }
        }
    }
}
