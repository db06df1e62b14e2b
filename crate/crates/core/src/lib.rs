//! Distributed dual-objective control of a flywheel energy storage matrix
//! system (FESMS).
//!
//! A fleet of heterogeneous flywheels exchanges information over a switching
//! directed network that is only jointly connected. Each unit runs a two-layer
//! adaptive distributed observer that recovers the reference generator and the
//! common state-of-energy (SOE) trajectory, plus a local feedback law. Together
//! the fleet tracks a reference power profile while balancing SOE.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the type aliases
//! below fix the scalar to `f64`, which is what the simulator and CLI use.

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod command;
pub mod controller;
pub mod graph;
pub mod linalg;
pub mod ode;
pub mod output;
pub mod plant;
pub mod scalar;
pub mod scenario;
pub mod sim;

pub use scalar::Scalar;

pub type Matrix = linalg::Matrix<f64>;
pub type Digraph = graph::WeightedDigraph<f64>;
pub type Schedule = graph::SwitchingSchedule<f64>;
pub type Flywheel = plant::FlywheelParams<f64>;
pub type GeneratorSpec = command::CommandGeneratorSpec<f64>;
pub type LeaderState = command::AugmentedCommandState<f64>;
pub type Observer = controller::ObserverState<f64>;
pub type Gains = controller::ControllerGains<f64>;
pub type Agent = controller::AgentState<f64>;
pub type Config = sim::SimConfig<f64>;
pub type Trace = sim::SimTrace<f64>;
pub type Metrics = analysis::MetricsReport<f64>;
pub type FesmsScenario = scenario::Scenario<f64>;

/// Single-precision variants, mostly useful for embedded targets.
pub type Flywheel32 = plant::FlywheelParams<f32>;
pub type Digraph32 = graph::WeightedDigraph<f32>;
pub type FesmsScenario32 = scenario::Scenario<f32>;
pub type Trace32 = sim::SimTrace<f32>;
