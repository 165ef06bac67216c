//! Monte-Carlo comparison of the proposed and traditional neighbor
//! lists. Each trial walks a mobile along the final approach toward a
//! handover target femtocell and asks whether each list construction
//! found the target, and how long the lists were.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Point;
use crate::neighbor::{
    build_fap_connected, build_traditional, collect_measurements, Measurement, NclThresholds,
};
use crate::radio::{LinkBudget, RadioParams};
use crate::topology::{generate_topology, ScenarioParams};

/// One benchmark configuration at a fixed deployment density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchParams {
    pub trials_per_seed: u32,
    /// Serving-to-target separation window, meters.
    pub pair_min_m: f64,
    pub pair_max_m: f64,
    /// Mobile position on the serving-target segment, measured from
    /// the target.
    pub approach_m: f64,
    pub approach_jitter_m: f64,
    pub scenario: ScenarioParams,
    pub radio: RadioParams,
    pub thresholds: NclThresholds,
}

impl BenchParams {
    /// Walls must defeat the detection threshold outright for hidden
    /// cells to exist, so every cell gets a wall cluster and each
    /// crossing costs 20 dB. Every cell is open so list membership is
    /// a radio question, not an access-control one. Coordination
    /// reaches 40 m, short of the widest serving-target pairs, which
    /// leaves two-hop discovery as the recovery path that improves
    /// with density.
    pub fn for_density(n_faps: u32) -> Self {
        BenchParams {
            trials_per_seed: 1000,
            pair_min_m: 25.0,
            pair_max_m: 50.0,
            approach_m: 10.0,
            approach_jitter_m: 2.0,
            scenario: ScenarioParams {
                n_faps,
                open_access_fraction: 1.0,
                wall_cluster_prob: 1.0,
                wall_attenuation_db: 20.0,
                coordination_range_m: 40.0,
                channel_pool_size: 8,
                ..ScenarioParams::default()
            },
            radio: RadioParams {
                shadow_sigma_db: 0.0,
                ..RadioParams::default()
            },
            thresholds: NclThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRow {
    pub seed: u64,
    pub n: u32,
    pub traditional_size: usize,
    pub proposed_size: usize,
    pub target_in_proposed: bool,
    pub target_in_traditional: bool,
    /// Cells whose location coordination revealed, within recovery
    /// range and satisfying the hidden clause.
    pub hidden_eligible: u32,
    /// How many of those the proposed list actually carries.
    pub hidden_listed: u32,
}

/// Aggregates over every trial at one density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensitySummary {
    pub n: u32,
    pub trials: u64,
    pub missing_proposed: f64,
    pub missing_traditional: f64,
    pub mean_proposed_size: f64,
    pub mean_traditional_size: f64,
    /// Every hidden-eligible cell was listed in every trial.
    pub hidden_complete: bool,
    /// Trials where the traditional list had the target and the
    /// proposed list did not.
    pub dominance_violations: u64,
}

pub fn summarize(n: u32, rows: &[TrialRow]) -> DensitySummary {
    let trials = rows.len() as u64;
    let frac = |pred: &dyn Fn(&TrialRow) -> bool| {
        rows.iter().filter(|r| pred(r)).count() as f64 / trials.max(1) as f64
    };
    let mean = |f: &dyn Fn(&TrialRow) -> usize| {
        rows.iter().map(f).sum::<usize>() as f64 / trials.max(1) as f64
    };
    DensitySummary {
        n,
        trials,
        missing_proposed: frac(&|r| !r.target_in_proposed),
        missing_traditional: frac(&|r| !r.target_in_traditional),
        mean_proposed_size: mean(&|r| r.proposed_size),
        mean_traditional_size: mean(&|r| r.traditional_size),
        hidden_complete: rows.iter().all(|r| r.hidden_listed == r.hidden_eligible),
        dominance_violations: rows
            .iter()
            .filter(|r| r.target_in_traditional && !r.target_in_proposed)
            .count() as u64,
    }
}

fn approach_point(serving: Point, target: Point, from_target_m: f64) -> Point {
    let d = serving.distance(&target);
    let f = (from_target_m / d).clamp(0.0, 1.0);
    Point {
        x: target.x + (serving.x - target.x) * f,
        y: target.y + (serving.y - target.y) * f,
    }
}

fn hidden_eligible(m: &Measurement, serving_channel: u16, t: &NclThresholds) -> bool {
    m.accessible
        && m.distance_m
            .map_or(false, |d| d <= t.hidden_max_distance_m)
        && (m.rssi_dbm < t.strong_dbm
            || (!t.hidden_excludes_cochannel && m.channel == serving_channel))
}

/// Runs one seed's worth of trials at the configured density. Each
/// trial picks a serving cell with at least one other cell in the
/// separation window, aims the mobile at one such target, and builds
/// both lists from the same measurements.
pub fn run_trials(params: &BenchParams, seed: u64) -> Vec<TrialRow> {
    let topo = generate_topology(&params.scenario, seed);
    let lb = LinkBudget::new(&topo, &params.radio, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545F4914F6CDD1D).wrapping_add(7));
    let t = &params.thresholds;
    let mut rows = Vec::with_capacity(params.trials_per_seed as usize);

    if topo.faps.len() < 2 {
        return rows;
    }

    'trials: for _ in 0..params.trials_per_seed {
        let (serving_idx, target_idx) = {
            let mut found = None;
            for _ in 0..1000 {
                let s = rng.gen_range(0..topo.faps.len());
                let candidates: Vec<usize> = topo
                    .faps_within(topo.faps[s].position, params.pair_max_m)
                    .into_iter()
                    .filter(|&i| {
                        i != s
                            && topo.faps[i].position.distance(&topo.faps[s].position)
                                >= params.pair_min_m
                    })
                    .collect();
                if !candidates.is_empty() {
                    let pick = candidates[rng.gen_range(0..candidates.len())];
                    found = Some((s, pick));
                    break;
                }
            }
            match found {
                Some(pair) => pair,
                None => continue 'trials,
            }
        };

        let serving = &topo.faps[serving_idx];
        let target = &topo.faps[target_idx];
        let jitter = (rng.gen::<f64>() * 2.0 - 1.0) * params.approach_jitter_m;
        let ms = approach_point(
            serving.position,
            target.position,
            params.approach_m + jitter,
        );

        let known = topo
            .known_locations(serving.id)
            .expect("serving exists");
        let measurements = collect_measurements(&lb, ms, Some(serving.id), &known, None, t);
        let macro_detected = lb.macro_rssi_dbm(ms, seed) >= t.detect_dbm;
        let proposed =
            build_fap_connected(&measurements, serving.frequency_channel, macro_detected, t);
        let traditional = build_traditional(&measurements, macro_detected, t);

        let mut eligible = 0;
        let mut listed = 0;
        for m in &measurements {
            if hidden_eligible(m, serving.frequency_channel, t) {
                eligible += 1;
                listed += u32::from(proposed.contains(m.fap));
            }
        }

        rows.push(TrialRow {
            seed,
            n: params.scenario.n_faps,
            traditional_size: traditional.size,
            proposed_size: proposed.size,
            target_in_proposed: proposed.contains(target.id),
            target_in_traditional: traditional.contains(target.id),
            hidden_eligible: eligible,
            hidden_listed: listed,
        });
    }
    rows
}
