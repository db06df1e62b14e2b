//! Scenario files: the declarative description of one experiment.
//!
//! Scenarios are TOML documents. See the repository README for the full
//! grammar; in short:
//!
//! ```toml
//! name = "example"
//!
//! [[fleet]]
//! inertia_kgm2 = 0.8
//! friction_Nms = 1e-3
//! omega_max_rads = 1000
//!
//! [generator]
//! S0 = [[0.0, 0.1], [-0.1, 0.0]]
//! C0 = [1.0, 0.0]
//! eta0_init = [0.0, 2e4]
//! psi0_init = 0.88
//! reference_unit = "W"          # or "kW"; scales C0 on load
//!
//! [gains]
//! mu = 100                      # fills every mu_* not given explicitly
//! kappa = 1
//!
//! [initial]
//! phi = [0.85]
//! # psi, S, C, eta, alpha, beta: optional per-agent overrides
//! # observers = "zero" | "truth"
//!
//! [network]
//! nodes = 2
//! dwell_time_s = 1
//! cyclic = true
//! epsilon_s = 5                 # optional
//! enforce_connectivity = false  # optional
//! segments = [["G1", 1.0]]
//! [[network.graphs]]
//! name = "G1"
//! edges = [[0, 1, 1.0]]         # [from, to, weight]
//!
//! [sim]
//! dt = 1e-3
//! t_end = 400
//! record_every = 100
//! integrator = "rk4"
//!
//! [output]
//! dir = "out/example"
//! plots = true
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::command::{common_trajectory_coeffs, AugmentedCommandState, CommandError, CommandGeneratorSpec};
use crate::controller::{ControllerError, ControllerGains, ObserverState};
use crate::graph::{ConnectivityReport, GraphError, Segment, SwitchingSchedule, WeightedDigraph};
use crate::linalg::Matrix;
use crate::ode::Integrator;
use crate::plant::{FlywheelParams, PlantError};
use crate::sim::{segment_steps, SimConfig};
use crate::Scalar;

/// Largest `gain * dt` accepted when loading a scenario.
pub const MAX_GAIN_STEP: f64 = 0.2;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Field { path: String, message: String },
    #[error("fleet has {fleet} flywheels but the network has {nodes} nodes (expected {expected})")]
    NodeCountMismatch {
        fleet: usize,
        nodes: usize,
        expected: usize,
    },
}

impl ScenarioError {
    pub fn field(path: impl Into<String>, message: impl ToString) -> Self {
        Self::Field {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

impl From<GraphError> for ScenarioError {
    fn from(e: GraphError) -> Self {
        Self::field("network", e)
    }
}

impl From<CommandError> for ScenarioError {
    fn from(e: CommandError) -> Self {
        Self::field("generator", e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialConditions<T> {
    pub phi: Vec<T>,
    pub observers: Vec<ObserverState<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityOptions<T> {
    pub epsilon: Option<T>,
    pub enforce: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputOptions {
    pub dir: Option<String>,
    pub plots: bool,
}

/// A validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T> {
    pub name: String,
    pub fleet: Vec<FlywheelParams<T>>,
    pub generator: CommandGeneratorSpec<T>,
    pub psi0_init: T,
    pub gains: ControllerGains<T>,
    pub initial: InitialConditions<T>,
    pub network: SwitchingSchedule<T>,
    pub graph_names: Vec<String>,
    pub connectivity: ConnectivityOptions<T>,
    pub sim: SimConfig<T>,
    pub output: OutputOptions,
}

impl<T: Scalar> Scenario<T> {
    pub fn n_agents(&self) -> usize {
        self.fleet.len()
    }

    /// `(alpha0, beta0)` derived from the fleet.
    pub fn coefficients(&self) -> (T, T) {
        common_trajectory_coeffs(&self.fleet).expect("validated fleet is nonempty")
    }

    pub fn initial_leader(&self) -> AugmentedCommandState<T> {
        AugmentedCommandState::initial(&self.generator, &self.fleet, self.psi0_init)
            .expect("validated fleet is nonempty")
    }

    /// Replaces every observer initial value with the leader's initial state.
    pub fn with_exact_observers(mut self) -> Self {
        let leader = self.initial_leader();
        self.initial.observers = vec![ObserverState::truth(&leader, &self.generator); self.n_agents()];
        self
    }

    /// Structural consistency required before any integration.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let n = self.fleet.len();
        if n == 0 {
            return Err(ScenarioError::field("fleet", "must contain at least one flywheel"));
        }
        let nodes = self.network.n_nodes();
        if nodes != n + 1 {
            return Err(ScenarioError::NodeCountMismatch {
                fleet: n,
                nodes,
                expected: n + 1,
            });
        }
        if !self.psi0_init.is_finite() {
            return Err(ScenarioError::field("generator.psi0_init", "must be finite"));
        }
        let q = self.generator.dim();
        if self.initial.phi.len() != n {
            return Err(ScenarioError::field(
                "initial.phi",
                format!("has {} entries, expected {n}", self.initial.phi.len()),
            ));
        }
        if let Some(i) = self.initial.phi.iter().position(|v| !v.is_finite()) {
            return Err(ScenarioError::field(format!("initial.phi[{i}]"), "must be finite"));
        }
        if self.initial.observers.len() != n {
            return Err(ScenarioError::field(
                "initial",
                format!("has {} observers, expected {n}", self.initial.observers.len()),
            ));
        }
        for (i, o) in self.initial.observers.iter().enumerate() {
            if o.dim() != q || o.eta.len() != q || o.s.rows() != q || o.s.cols() != q {
                return Err(ScenarioError::field(
                    format!("initial.observer[{i}]"),
                    format!("dimensions do not match generator dimension {q}"),
                ));
            }
            let finite = o.s.as_slice().iter().chain(&o.c).chain(&o.eta).all(|v| v.is_finite())
                && [o.alpha, o.beta, o.psi].iter().all(|v| v.is_finite());
            if !finite {
                return Err(ScenarioError::field(format!("initial.observer[{i}]"), "must be finite"));
            }
        }
        self.sim.validate()?;
        segment_steps(&self.network, self.sim.dt)?;
        if let Some(eps) = self.connectivity.epsilon {
            if !(eps > T::zero()) {
                return Err(ScenarioError::field("network.epsilon_s", "must be positive"));
            }
        }
        Ok(())
    }

    /// Rejects step sizes too coarse for the consensus gains (`gain * dt > 0.2`).
    pub fn check_step_guidance(&self) -> Result<(), ScenarioError> {
        let product = self.gains.max_gain() * self.sim.dt;
        if product > T::lit(MAX_GAIN_STEP) {
            return Err(ScenarioError::field(
                "sim.dt",
                format!(
                    "largest gain {} times dt {} is {}, above the limit {MAX_GAIN_STEP}",
                    self.gains.max_gain(),
                    self.sim.dt,
                    product
                ),
            ));
        }
        Ok(())
    }

    /// Joint-connectivity verdict at the scenario's epsilon.
    pub fn connectivity_report(&self) -> Result<ConnectivityReport, ScenarioError> {
        let eps = self
            .connectivity
            .epsilon
            .ok_or_else(|| ScenarioError::field("network.epsilon_s", "required to check joint connectivity"))?;
        Ok(self.network.verify_jointly_connected(eps)?)
    }

    /// Serializes to the canonical form: SI units, every initial value explicit.
    pub fn to_canonical_toml(&self) -> String {
        toml::to_string(&self.to_file()).expect("scenario serializes")
    }

    fn to_file(&self) -> ScenarioFile {
        let f = |v: T| v.as_f64();
        let fv = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
        let obs = &self.initial.observers;
        ScenarioFile {
            name: Some(self.name.clone()),
            fleet: self
                .fleet
                .iter()
                .map(|p| FlywheelEntry {
                    inertia_kgm2: f(p.inertia()),
                    friction_nms: f(p.friction()),
                    omega_max_rads: f(p.omega_max()),
                })
                .collect(),
            generator: GeneratorEntry {
                s0: self.generator.s0().to_rows().iter().map(|r| fv(r)).collect(),
                c0: fv(self.generator.c0()),
                eta0_init: fv(self.generator.eta0_init()),
                psi0_init: f(self.psi0_init),
                reference_unit: PowerUnit::W,
            },
            gains: GainsEntry {
                mu: None,
                mu_s: Some(f(self.gains.mu_s)),
                mu_c: Some(f(self.gains.mu_c)),
                mu_eta: Some(f(self.gains.mu_eta)),
                mu_alpha: Some(f(self.gains.mu_alpha)),
                mu_beta: Some(f(self.gains.mu_beta)),
                mu_psi: Some(f(self.gains.mu_psi)),
                kappa: f(self.gains.kappa),
            },
            initial: InitialEntry {
                phi: fv(&self.initial.phi),
                observers: None,
                psi: Some(obs.iter().map(|o| f(o.psi)).collect()),
                s: Some(
                    obs.iter()
                        .map(|o| o.s.to_rows().iter().map(|r| fv(r)).collect())
                        .collect(),
                ),
                c: Some(obs.iter().map(|o| fv(&o.c)).collect()),
                eta: Some(obs.iter().map(|o| fv(&o.eta)).collect()),
                alpha: Some(obs.iter().map(|o| f(o.alpha)).collect()),
                beta: Some(obs.iter().map(|o| f(o.beta)).collect()),
            },
            network: NetworkEntry {
                nodes: self.network.n_nodes(),
                dwell_time_s: f(self.network.dwell_time()),
                cyclic: self.network.is_cyclic(),
                epsilon_s: self.connectivity.epsilon.map(f),
                enforce_connectivity: self.connectivity.enforce,
                segments: self
                    .network
                    .segments()
                    .iter()
                    .map(|s| (self.graph_names[s.graph].clone(), f(s.duration)))
                    .collect(),
                graphs: self
                    .network
                    .graphs()
                    .iter()
                    .zip(&self.graph_names)
                    .map(|(g, name)| GraphEntry {
                        name: name.clone(),
                        edges: g.edges().into_iter().map(|(a, b, w)| (a, b, f(w))).collect(),
                    })
                    .collect(),
            },
            sim: SimEntry {
                dt: f(self.sim.dt),
                t_end: f(self.sim.t_end),
                record_every: self.sim.record_every,
                integrator: self.sim.integrator,
            },
            output: OutputEntry {
                dir: self.output.dir.clone(),
                plots: self.output.plots,
            },
        }
    }
}

/// Reads, parses and validates a scenario file, including the step-size guidance.
pub fn load_scenario<T: Scalar>(path: impl AsRef<Path>) -> Result<Scenario<T>, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let scenario = parse_scenario(&text)?;
    scenario.check_step_guidance()?;
    Ok(scenario)
}

/// Parses and validates scenario text (no step-size guidance check).
pub fn parse_scenario<T: Scalar>(text: &str) -> Result<Scenario<T>, ScenarioError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    file.build()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
enum PowerUnit {
    #[default]
    W,
    #[serde(rename = "kW")]
    KW,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ObserverInit {
    Zero,
    Truth,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    fleet: Vec<FlywheelEntry>,
    generator: GeneratorEntry,
    gains: GainsEntry,
    initial: InitialEntry,
    network: NetworkEntry,
    sim: SimEntry,
    #[serde(default)]
    output: OutputEntry,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlywheelEntry {
    inertia_kgm2: f64,
    #[serde(rename = "friction_Nms")]
    friction_nms: f64,
    omega_max_rads: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorEntry {
    #[serde(rename = "S0")]
    s0: Vec<Vec<f64>>,
    #[serde(rename = "C0")]
    c0: Vec<f64>,
    eta0_init: Vec<f64>,
    psi0_init: f64,
    #[serde(default)]
    reference_unit: PowerUnit,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GainsEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mu: Option<f64>,
    #[serde(rename = "mu_S", default, skip_serializing_if = "Option::is_none")]
    mu_s: Option<f64>,
    #[serde(rename = "mu_C", default, skip_serializing_if = "Option::is_none")]
    mu_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mu_eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mu_alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mu_beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mu_psi: Option<f64>,
    kappa: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialEntry {
    phi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    observers: Option<ObserverInit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    psi: Option<Vec<f64>>,
    #[serde(rename = "S", default, skip_serializing_if = "Option::is_none")]
    s: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    c: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eta: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkEntry {
    nodes: usize,
    dwell_time_s: f64,
    cyclic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    epsilon_s: Option<f64>,
    #[serde(default)]
    enforce_connectivity: bool,
    segments: Vec<(String, f64)>,
    graphs: Vec<GraphEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphEntry {
    name: String,
    #[serde(default)]
    edges: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimEntry {
    dt: f64,
    t_end: f64,
    #[serde(default = "one")]
    record_every: usize,
    #[serde(default)]
    integrator: Integrator,
}

fn one() -> usize {
    1
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dir: Option<String>,
    #[serde(default = "yes")]
    plots: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputEntry {
    fn default() -> Self {
        Self { dir: None, plots: true }
    }
}

fn per_agent<V: Clone>(
    path: &str,
    values: Option<Vec<V>>,
    n: usize,
    default: impl Fn(usize) -> V,
) -> Result<Vec<V>, ScenarioError> {
    match values {
        None => Ok((0..n).map(default).collect()),
        Some(v) if v.len() == n => Ok(v),
        Some(v) => Err(ScenarioError::field(
            path,
            format!("has {} entries, expected {n}", v.len()),
        )),
    }
}

fn vec_len(path: String, v: &[f64], q: usize) -> Result<(), ScenarioError> {
    if v.len() == q {
        Ok(())
    } else {
        Err(ScenarioError::field(
            path,
            format!("has length {}, expected {q}", v.len()),
        ))
    }
}

fn matrix<T: Scalar>(path: &str, rows: &[Vec<f64>]) -> Result<Matrix<T>, ScenarioError> {
    Matrix::from_rows(rows)
        .map(|m| m.map(T::lit))
        .ok_or_else(|| ScenarioError::field(path, "rows have different lengths"))
}

impl ScenarioFile {
    fn build<T: Scalar>(self) -> Result<Scenario<T>, ScenarioError> {
        let lit = T::lit;
        let lits = |v: &[f64]| v.iter().map(|&x| lit(x)).collect::<Vec<T>>();

        if self.fleet.is_empty() {
            return Err(ScenarioError::field("fleet", "must contain at least one flywheel"));
        }
        let fleet = self
            .fleet
            .iter()
            .enumerate()
            .map(|(i, e)| {
                FlywheelParams::new(lit(e.inertia_kgm2), lit(e.friction_nms), lit(e.omega_max_rads)).map_err(|err| {
                    match err {
                        PlantError::NonPositive { field, value } => ScenarioError::field(
                            format!("fleet[{i}].{field}"),
                            format!("must be positive and finite (got {value})"),
                        ),
                        other => ScenarioError::field(format!("fleet[{i}]"), other),
                    }
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let n = fleet.len();

        let g = &self.generator;
        let scale = match g.reference_unit {
            PowerUnit::W => 1.0,
            PowerUnit::KW => 1e3,
        };
        let c0: Vec<f64> = g.c0.iter().map(|c| c * scale).collect();
        let generator = CommandGeneratorSpec::new(matrix("generator.S0", &g.s0)?, lits(&c0), lits(&g.eta0_init))?;
        let q = generator.dim();
        let psi0_init = lit(g.psi0_init);

        let gain = |name: &str, v: Option<f64>| {
            v.or(self.gains.mu)
                .map(lit)
                .ok_or_else(|| ScenarioError::field(format!("gains.{name}"), "missing (and no `mu` default)"))
        };
        let gains = ControllerGains::new(
            gain("mu_S", self.gains.mu_s)?,
            gain("mu_C", self.gains.mu_c)?,
            gain("mu_eta", self.gains.mu_eta)?,
            gain("mu_alpha", self.gains.mu_alpha)?,
            gain("mu_beta", self.gains.mu_beta)?,
            gain("mu_psi", self.gains.mu_psi)?,
            lit(self.gains.kappa),
        )
        .map_err(|e| match e {
            ControllerError::BadGain { name, value } => {
                ScenarioError::field(format!("gains.{name}"), format!("must be positive (got {value})"))
            }
            other => ScenarioError::field("gains", other),
        })?;

        let ini = self.initial;
        if ini.phi.len() != n {
            return Err(ScenarioError::field(
                "initial.phi",
                format!("has {} entries, expected {n}", ini.phi.len()),
            ));
        }
        let truth = ini.observers == Some(ObserverInit::Truth);
        let leader = AugmentedCommandState::initial(&generator, &fleet, psi0_init)?;
        let phi = lits(&ini.phi);
        let psi = per_agent("initial.psi", ini.psi.map(|v| lits(&v)), n, |i| {
            if truth {
                psi0_init
            } else {
                phi[i]
            }
        })?;
        let s = per_agent("initial.S", ini.s, n, |_| {
            if truth {
                generator
                    .s0()
                    .to_rows()
                    .iter()
                    .map(|r| r.iter().map(|v| v.as_f64()).collect())
                    .collect()
            } else {
                vec![vec![0.0; q]; q]
            }
        })?;
        let c = per_agent("initial.C", ini.c, n, |_| {
            if truth {
                generator.c0().iter().map(|v| v.as_f64()).collect()
            } else {
                vec![0.0; q]
            }
        })?;
        let eta = per_agent("initial.eta", ini.eta, n, |_| {
            if truth {
                generator.eta0_init().iter().map(|v| v.as_f64()).collect()
            } else {
                vec![0.0; q]
            }
        })?;
        let alpha = per_agent("initial.alpha", ini.alpha.map(|v| lits(&v)), n, |_| {
            if truth {
                leader.alpha0
            } else {
                T::zero()
            }
        })?;
        let beta = per_agent("initial.beta", ini.beta.map(|v| lits(&v)), n, |_| {
            if truth {
                leader.beta0
            } else {
                T::zero()
            }
        })?;
        let mut observers = Vec::with_capacity(n);
        for i in 0..n {
            let s_i = matrix(&format!("initial.S[{i}]"), &s[i])?;
            if s_i.rows() != q || s_i.cols() != q {
                return Err(ScenarioError::field(
                    format!("initial.S[{i}]"),
                    format!("must be {q}x{q}"),
                ));
            }
            vec_len(format!("initial.C[{i}]"), &c[i], q)?;
            vec_len(format!("initial.eta[{i}]"), &eta[i], q)?;
            observers.push(ObserverState {
                s: s_i,
                c: lits(&c[i]),
                eta: lits(&eta[i]),
                alpha: alpha[i],
                beta: beta[i],
                psi: psi[i],
            });
        }
        let net = self.network;
        let nodes = net.nodes;
        if nodes != n + 1 {
            return Err(ScenarioError::NodeCountMismatch {
                fleet: n,
                nodes,
                expected: n + 1,
            });
        }
        let mut graph_names = Vec::with_capacity(net.graphs.len());
        let mut graphs = Vec::with_capacity(net.graphs.len());
        for (k, ge) in net.graphs.iter().enumerate() {
            if graph_names.contains(&ge.name) {
                return Err(ScenarioError::field(
                    format!("network.graphs[{k}].name"),
                    "duplicate graph name",
                ));
            }
            let edges: Vec<_> = ge.edges.iter().map(|&(a, b, w)| (a, b, lit(w))).collect();
            let g = WeightedDigraph::from_edges(nodes, &edges)
                .map_err(|e| ScenarioError::field(format!("network.graphs[{k}] ({})", ge.name), e))?;
            graph_names.push(ge.name.clone());
            graphs.push(g);
        }
        let segments = net
            .segments
            .iter()
            .enumerate()
            .map(|(k, (name, d))| {
                graph_names
                    .iter()
                    .position(|g| g == name)
                    .map(|graph| Segment {
                        graph,
                        duration: lit(*d),
                    })
                    .ok_or_else(|| {
                        ScenarioError::field(format!("network.segments[{k}]"), format!("unknown graph `{name}`"))
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let network = SwitchingSchedule::new(graphs, segments, lit(net.dwell_time_s), net.cyclic)?;

        let scenario = Scenario {
            name: self.name.unwrap_or_default(),
            fleet,
            generator,
            psi0_init,
            gains,
            initial: InitialConditions { phi, observers },
            network,
            graph_names,
            connectivity: ConnectivityOptions {
                epsilon: net.epsilon_s.map(lit),
                enforce: net.enforce_connectivity,
            },
            sim: SimConfig {
                dt: lit(self.sim.dt),
                t_end: lit(self.sim.t_end),
                record_every: self.sim.record_every,
                integrator: self.sim.integrator,
            },
            output: OutputOptions {
                dir: self.output.dir,
                plots: self.output.plots,
            },
        };
        scenario.validate()?;
        Ok(scenario)
    }
}
