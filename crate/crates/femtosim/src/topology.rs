//! Deployment geometry: one macrocell base station overlaid by `n`
//! femtocell access points (FAPs) placed uniformly at random in the
//! macrocell disk, plus wall obstacles clustered at FAP sites.
//!
//! Besides placement this module owns two pieces of network structure:
//!
//! * **frequency allocation**: greedy coloring in FAP-id order such that
//!   FAPs with overlapping coverage disks never share a channel while the
//!   pool permits, preferring for each FAP the feasible channel whose
//!   nearest same-channel user is farthest away (frequency reuse only
//!   between well-separated FAPs);
//! * **coordination graph**: FAPs within `coordination_range` of each
//!   other exchange self-organization data. `known_locations` closes this
//!   graph to two hops: an access point learns the placement of its
//!   coordinators and of their coordinators. Walls never block
//!   coordination; it runs over the wired backhaul.

use crate::geometry::{sample_in_disk, segments_cross, Point, UniformGrid};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Identifier of a femtocell access point within one topology.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct FapId(pub u32);

/// Identifier of a subscriber for closed-access checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UserId(pub u32);

/// Who may attach to a FAP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessMode {
    Open,
    Closed { authorized_users: BTreeSet<UserId> },
}

/// One femtocell access point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FapDescriptor {
    pub id: FapId,
    pub position: Point,
    /// Antenna height, meters.
    pub height_m: f64,
    /// Transmit power, milliwatts.
    pub tx_power_mw: f64,
    pub frequency_channel: u16,
    /// Simultaneous calls the FAP can carry.
    pub capacity_slots: u32,
    pub access: AccessMode,
}

impl FapDescriptor {
    pub fn tx_power_dbm(&self) -> f64 {
        10.0 * self.tx_power_mw.log10()
    }

    pub fn is_open(&self) -> bool {
        matches!(self.access, AccessMode::Open)
    }

    /// Whether `user` may attach here.
    pub fn admits_user(&self, user: Option<UserId>) -> bool {
        match &self.access {
            AccessMode::Open => true,
            AccessMode::Closed { authorized_users } => {
                user.map_or(false, |u| authorized_users.contains(&u))
            }
        }
    }
}

/// A straight wall segment attenuating every radio ray that crosses it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub a: Point,
    pub b: Point,
    pub attenuation_db: f64,
}

/// The overlaid macrocell base station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroBs {
    pub position: Point,
    /// Antenna height, meters.
    pub height_m: f64,
    /// Transmit power, watts.
    pub tx_power_w: f64,
    /// Coverage radius, meters.
    pub radius_m: f64,
}

impl MacroBs {
    pub fn tx_power_dbm(&self) -> f64 {
        10.0 * (self.tx_power_w * 1000.0).log10()
    }
}

/// Parameters for random topology generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    /// Number of FAPs.
    pub n_faps: u32,
    /// Macrocell radius, meters.
    pub macro_radius_m: f64,
    /// Femtocell coverage radius, meters.
    pub femto_radius_m: f64,
    pub fap_height_m: f64,
    pub fap_tx_power_mw: f64,
    pub fap_capacity_slots: u32,
    pub macro_height_m: f64,
    pub macro_tx_power_w: f64,
    /// Number of distinct femtocell channels available.
    pub channel_pool_size: u16,
    /// Range within which two FAPs coordinate directly, meters.
    pub coordination_range_m: f64,
    /// Fraction of FAPs in open access mode; the rest are closed.
    pub open_access_fraction: f64,
    /// Probability that a FAP site gets a wall cluster around it.
    pub wall_cluster_prob: f64,
    /// Walls per cluster (parallel pair when 2).
    pub walls_per_cluster: u32,
    pub wall_length_m: f64,
    /// Spacing between parallel walls in a cluster, meters.
    pub wall_spacing_m: f64,
    /// Distance from the FAP to the cluster center, meters.
    pub wall_offset_m: f64,
    /// Attenuation per wall crossing, dB.
    pub wall_attenuation_db: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            n_faps: 1000,
            macro_radius_m: 1000.0,
            femto_radius_m: 10.0,
            fap_height_m: 2.0,
            fap_tx_power_mw: 10.0,
            fap_capacity_slots: 4,
            macro_height_m: 100.0,
            macro_tx_power_w: 1500.0,
            channel_pool_size: 4,
            coordination_range_m: 30.0,
            open_access_fraction: 0.8,
            wall_cluster_prob: 0.3,
            walls_per_cluster: 2,
            wall_length_m: 12.0,
            wall_spacing_m: 0.6,
            wall_offset_m: 2.5,
            wall_attenuation_db: 10.0,
        }
    }
}

/// A generated deployment. Construction-time caches (coordination
/// adjacency, spatial indexes) are rebuilt after deserialization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Topology {
    pub schema_version: u32,
    pub seed: u64,
    pub macro_bs: MacroBs,
    pub femto_radius_m: f64,
    pub coordination_range_m: f64,
    pub faps: Vec<FapDescriptor>,
    pub walls: Vec<Wall>,
    /// FAP pairs that overlap but share a channel because the pool ran out.
    pub frequency_conflicts: u32,
    #[serde(skip)]
    coord_adjacency: Vec<Vec<FapId>>,
    #[serde(skip)]
    fap_grid: Option<UniformGrid>,
    #[serde(skip)]
    wall_grid: Option<UniformGrid>,
}

#[derive(Debug, thiserror::Error)]
pub enum TopologyError {
    #[error("unknown FAP id {0:?}")]
    UnknownFap(FapId),
    #[error("topology fails invariant: {0}")]
    Invariant(String),
    #[error("topology deserialization failed: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Generates a deployment: FAP positions uniform over the macrocell disk,
/// channels allocated greedily, wall clusters seeded per FAP site.
/// Deterministic in `(params, seed)`.
pub fn generate_topology(params: &ScenarioParams, seed: u64) -> Topology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = Point::ORIGIN;
    let n = params.n_faps as usize;

    let positions: Vec<Point> = (0..n)
        .map(|_| sample_in_disk(&mut rng, center, params.macro_radius_m))
        .collect();

    let (channels, frequency_conflicts) = allocate_frequencies(
        &positions,
        params.femto_radius_m,
        params.channel_pool_size,
    );

    let mut faps = Vec::with_capacity(n);
    for i in 0..n {
        let open = rng.gen::<f64>() < params.open_access_fraction;
        let access = if open {
            AccessMode::Open
        } else {
            // Closed FAPs always authorize their own resident.
            let mut users = BTreeSet::new();
            users.insert(UserId(i as u32));
            AccessMode::Closed {
                authorized_users: users,
            }
        };
        faps.push(FapDescriptor {
            id: FapId(i as u32),
            position: positions[i],
            height_m: params.fap_height_m,
            tx_power_mw: params.fap_tx_power_mw,
            frequency_channel: channels[i],
            capacity_slots: params.fap_capacity_slots,
            access,
        });
    }

    let mut walls = Vec::new();
    for pos in &positions {
        if rng.gen::<f64>() >= params.wall_cluster_prob {
            continue;
        }
        // A cluster of parallel segments offset from the FAP site. Parallel
        // stacking means a ray that crosses the cluster crosses every
        // segment in it, which is what buries an indoor FAP's signal.
        let theta = rng.gen::<f64>() * std::f64::consts::TAU;
        let offset_dir = rng.gen::<f64>() * std::f64::consts::TAU;
        let cx = pos.x + params.wall_offset_m * offset_dir.cos();
        let cy = pos.y + params.wall_offset_m * offset_dir.sin();
        let (dx, dy) = (theta.cos(), theta.sin());
        let (nx, ny) = (-dy, dx);
        let half = params.wall_length_m / 2.0;
        for k in 0..params.walls_per_cluster {
            let shift = (k as f64 - (params.walls_per_cluster as f64 - 1.0) / 2.0)
                * params.wall_spacing_m;
            let mx = cx + nx * shift;
            let my = cy + ny * shift;
            walls.push(Wall {
                a: Point::new(mx - dx * half, my - dy * half),
                b: Point::new(mx + dx * half, my + dy * half),
                attenuation_db: params.wall_attenuation_db,
            });
        }
    }

    let mut topo = Topology {
        schema_version: 1,
        seed,
        macro_bs: MacroBs {
            position: center,
            height_m: params.macro_height_m,
            tx_power_w: params.macro_tx_power_w,
            radius_m: params.macro_radius_m,
        },
        femto_radius_m: params.femto_radius_m,
        coordination_range_m: params.coordination_range_m,
        faps,
        walls,
        frequency_conflicts,
        coord_adjacency: Vec::new(),
        fap_grid: None,
        wall_grid: None,
    };
    topo.rebuild_caches();
    topo
}

/// Greedy channel assignment in FAP-id order. Two FAPs whose coverage
/// disks overlap (separation < 2 * femto_radius) must differ while the
/// pool permits; among feasible channels the one whose nearest
/// same-channel FAP is farthest is chosen, so reuse happens only between
/// well-separated FAPs. Returns per-FAP channels and the number of
/// overlapping same-channel pairs forced by pool exhaustion.
pub fn allocate_frequencies(
    positions: &[Point],
    femto_radius_m: f64,
    channel_pool_size: u16,
) -> (Vec<u16>, u32) {
    let pool = channel_pool_size.max(1);
    let overlap_dist = 2.0 * femto_radius_m;
    let mut channels = vec![0u16; positions.len()];
    let mut conflicts = 0u32;
    // Per-channel list of assigned positions for nearest-reuse lookups.
    let mut assigned: Vec<Vec<Point>> = vec![Vec::new(); pool as usize];

    let mut grid = UniformGrid::new(overlap_dist.max(1.0));
    for (i, p) in positions.iter().enumerate() {
        let mut used_by_overlap = vec![false; pool as usize];
        for j in grid.query_radius(*p, overlap_dist) {
            if positions[j].distance(p) < overlap_dist {
                used_by_overlap[channels[j] as usize] = true;
            }
        }

        let feasible: Vec<u16> = (0..pool).filter(|&c| !used_by_overlap[c as usize]).collect();
        let chosen = if feasible.is_empty() {
            // Pool exhausted locally: take the channel with the fewest
            // overlapping users.
            let mut best = 0u16;
            let mut best_count = u32::MAX;
            for c in 0..pool {
                let count = grid
                    .query_radius(*p, overlap_dist)
                    .into_iter()
                    .filter(|&j| channels[j] == c && positions[j].distance(p) < overlap_dist)
                    .count() as u32;
                if count < best_count {
                    best_count = count;
                    best = c;
                }
            }
            conflicts += best_count;
            best
        } else {
            // Farthest nearest-same-channel wins; unused channels first.
            let mut best = feasible[0];
            let mut best_dist = -1.0f64;
            for &c in &feasible {
                let nearest = assigned[c as usize]
                    .iter()
                    .map(|q| q.distance(p))
                    .fold(f64::INFINITY, f64::min);
                if nearest > best_dist {
                    best_dist = nearest;
                    best = c;
                }
            }
            best
        };
        channels[i] = chosen;
        assigned[chosen as usize].push(*p);
        grid.insert_point(i, *p);
    }
    (channels, conflicts)
}

impl Topology {
    /// Rebuilds spatial indexes and the coordination adjacency. Must be
    /// called after manual edits or deserialization; `from_json` does it.
    pub fn rebuild_caches(&mut self) {
        let mut fap_grid = UniformGrid::new(self.coordination_range_m.max(25.0));
        for (i, f) in self.faps.iter().enumerate() {
            fap_grid.insert_point(i, f.position);
        }
        let mut adj = vec![Vec::new(); self.faps.len()];
        for (i, f) in self.faps.iter().enumerate() {
            for j in fap_grid.query_radius(f.position, self.coordination_range_m) {
                if j != i
                    && self.faps[j].position.distance(&f.position) <= self.coordination_range_m
                {
                    adj[i].push(self.faps[j].id);
                }
            }
            adj[i].sort_unstable();
        }
        self.coord_adjacency = adj;

        let mut wall_grid = UniformGrid::new(25.0);
        for (i, w) in self.walls.iter().enumerate() {
            wall_grid.insert_segment(i, w.a, w.b);
        }
        self.fap_grid = Some(fap_grid);
        self.wall_grid = Some(wall_grid);
    }

    pub fn fap(&self, id: FapId) -> Result<&FapDescriptor, TopologyError> {
        self.faps
            .get(id.0 as usize)
            .filter(|f| f.id == id)
            .ok_or(TopologyError::UnknownFap(id))
    }

    /// FAPs within coordination range of `id`, excluding `id`, ascending.
    /// Symmetric: `a in coordination_set(b)` iff `b in coordination_set(a)`.
    pub fn coordination_set(&self, id: FapId) -> Result<&[FapId], TopologyError> {
        self.fap(id)?;
        Ok(&self.coord_adjacency[id.0 as usize])
    }

    /// Locations learnable by `id` through coordination: its coordinators
    /// plus everything its coordinators coordinate with (two hops),
    /// excluding `id` itself. Sorted ascending.
    pub fn known_locations(&self, id: FapId) -> Result<Vec<FapId>, TopologyError> {
        let one_hop = self.coordination_set(id)?;
        let mut known: BTreeSet<FapId> = one_hop.iter().copied().collect();
        for &m in one_hop {
            known.extend(self.coord_adjacency[m.0 as usize].iter().copied());
        }
        known.remove(&id);
        Ok(known.into_iter().collect())
    }

    /// FAP indexes within `radius` of `p` (exact, ascending by id).
    pub fn faps_within(&self, p: Point, radius: f64) -> Vec<usize> {
        let grid = self.fap_grid.as_ref().expect("caches not built");
        grid.query_radius(p, radius)
            .into_iter()
            .filter(|&i| self.faps[i].position.distance(&p) <= radius)
            .collect()
    }

    /// Total wall attenuation along the ray `from` -> `to`, dB.
    pub fn wall_attenuation_db(&self, from: Point, to: Point) -> f64 {
        let grid = self.wall_grid.as_ref().expect("caches not built");
        grid.query_segment(from, to)
            .into_iter()
            .filter(|&i| segments_cross(from, to, self.walls[i].a, self.walls[i].b))
            .map(|i| self.walls[i].attenuation_db)
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }

    pub fn from_json(text: &str) -> Result<Topology, TopologyError> {
        let mut topo: Topology = serde_json::from_str(text)?;
        topo.check_invariants()?;
        topo.rebuild_caches();
        Ok(topo)
    }

    /// Structural invariants enforced on every deserialized topology.
    pub fn check_invariants(&self) -> Result<(), TopologyError> {
        let mut seen = BTreeSet::new();
        for f in &self.faps {
            if !seen.insert(f.id) {
                return Err(TopologyError::Invariant(format!(
                    "duplicate FAP id {:?}",
                    f.id
                )));
            }
            let d = f.position.distance(&self.macro_bs.position);
            if d > self.macro_bs.radius_m + 1e-9 {
                return Err(TopologyError::Invariant(format!(
                    "FAP {:?} lies {d:.1} m from the macro BS, outside its radius",
                    f.id
                )));
            }
            if let AccessMode::Closed { authorized_users } = &f.access {
                if authorized_users.is_empty() {
                    return Err(TopologyError::Invariant(format!(
                        "closed FAP {:?} authorizes nobody",
                        f.id
                    )));
                }
            }
        }
        Ok(())
    }
}
