//! Flow-level modeling toolkit for integrated femtocell/macrocell networks.
//!
//! The crate has two halves that answer the same questions by different
//! means, so that each can check the other:
//!
//! * an **analytical model** ([`traffic`]): Erlang-style loss formulas, a
//!   birth-death macrocell channel model with a handover reservation
//!   margin, and a fixed-point solver that couples the femtocell and
//!   macrocell layers through their handover flows;
//! * a **discrete-event simulator** ([`sim`]): Poisson call arrivals,
//!   exponential call durations and cell dwell times, geometric placement
//!   of access points, RSSI/SNIR evaluation, neighbor-cell-list
//!   construction, admission control, and per-handover signaling traces.
//!
//! Supporting subsystems:
//!
//! * [`topology`]: deployment geometry (one macrocell, `n` femtocell
//!   access points, wall obstacles), frequency allocation, and the
//!   coordination graph over which access points exchange location data.
//! * [`radio`]: indoor and outdoor path-loss models, RSSI and SNIR.
//! * [`neighbor`]: two-threshold neighbor-cell-list construction,
//!   including recovery of hidden access points whose signal is
//!   wall-attenuated but whose location is known through coordination.
//! * [`cac`]: call admission control with a QoS-degradation bandwidth
//!   ledger on the macrocell.
//! * [`signaling`]: message-by-message handover signaling flows with
//!   abort gates (pre-authentication, authorization, admission).
//! * [`bench`]: Monte-Carlo benchmark comparing the two-threshold
//!   neighbor list against a single-threshold baseline.
//! * [`config`]: scenario configuration file loading and validation.

pub mod bench;
pub mod cac;
pub mod config;
pub mod geometry;
pub mod neighbor;
pub mod radio;
pub mod signaling;
pub mod sim;
pub mod topology;
pub mod traffic;

mod guide;

pub use config::{load_config, ConfigError, ScenarioConfig};
pub use sim::{run, MetricsReport, SimError};
pub use topology::{generate_topology, ScenarioParams, Topology};
pub use traffic::{
    forced_termination, solve_fixed_point, ForcedTermination, TrafficParams, TrafficSolution,
};
