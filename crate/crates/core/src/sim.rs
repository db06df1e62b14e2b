//! Fixed-step simulation of the leader plus `N` controlled flywheels under a
//! switching network.
//!
//! The stacked state is a flat vector
//! `[eta0 (q), psi0, agent_1, ..., agent_N]` where each agent block is
//! `[phi, observer...]` in [`ObserverLayout`] order. Steps are aligned with
//! switching instants, so the active graph is constant within every step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::command::{augmented_rhs_into, common_trajectory_coeffs, ideal_dispatch, CommandError};
use crate::command::{AugmentedCommandState, CommandGeneratorSpec};
use crate::controller::{
    closed_loop_soe_rate, control_output, leader_view, observer_rhs_into, AgentState, ControllerGains, ErrorNorms,
    ObserverLayout, ObserverState, ObserverView,
};
use crate::graph::{ConnectivityReport, GraphError, SwitchingSchedule, WeightedDigraph};
use crate::linalg::dot;
use crate::ode::{Integrator, OdeSystem, Stepper};
use crate::plant::{is_physical_soe, FlywheelParams};
use crate::scenario::{Scenario, ScenarioError};
use crate::Scalar;

/// Slack (in units of `dt`) allowed when matching segment durations and the
/// horizon to a whole number of steps.
pub const ALIGNMENT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig<T> {
    pub dt: T,
    pub t_end: T,
    pub record_every: usize,
    pub integrator: Integrator,
}

impl<T: Scalar> SimConfig<T> {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.dt > T::zero() && self.dt.is_finite()) {
            return Err(ScenarioError::field(
                "sim.dt",
                format!("must be positive (got {})", self.dt),
            ));
        }
        if !(self.t_end > T::zero() && self.t_end.is_finite()) {
            return Err(ScenarioError::field(
                "sim.t_end",
                format!("must be positive (got {})", self.t_end),
            ));
        }
        if self.record_every == 0 {
            return Err(ScenarioError::field("sim.record_every", "must be at least 1"));
        }
        self.n_steps()?;
        Ok(())
    }

    /// Number of steps to reach `t_end`; errors if `dt` does not divide it.
    pub fn n_steps(&self) -> Result<usize, ScenarioError> {
        steps_for(self.t_end, self.dt).ok_or_else(|| {
            ScenarioError::field(
                "sim.t_end",
                format!("{} is not a whole number of steps of {}", self.t_end, self.dt),
            )
        })
    }
}

fn steps_for<T: Scalar>(duration: T, dt: T) -> Option<usize> {
    let ratio = duration / dt;
    let n = ratio.round();
    // Single precision cannot resolve 1e-9 of a step over long horizons, so
    // the slack grows with the rounding error of the ratio itself.
    let slack = T::lit(ALIGNMENT_TOL).max(T::lit(8.0) * T::epsilon() * n);
    (n >= T::one() && (ratio - n).abs() <= slack)
        .then(|| n.to_usize())
        .flatten()
}

/// Step counts of each segment of `schedule` at step size `dt`.
pub fn segment_steps<T: Scalar>(schedule: &SwitchingSchedule<T>, dt: T) -> Result<Vec<usize>, ScenarioError> {
    schedule
        .segments()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            steps_for(s.duration, dt).ok_or_else(|| {
                ScenarioError::field(
                    format!("network.segments[{i}]"),
                    format!("duration {} is not a multiple of dt = {}", s.duration, dt),
                )
            })
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Invalid(#[from] ScenarioError),
    #[error("network is not jointly connected")]
    NotJointlyConnected(Box<ConnectivityReport>),
    #[error("non-finite {field} at t = {time} (agent {agent:?})")]
    NonFinite {
        time: f64,
        agent: Option<usize>,
        field: String,
        partial: Box<SimTrace<f64>>,
    },
}

impl From<GraphError> for SimError {
    fn from(e: GraphError) -> Self {
        Self::Invalid(e.into())
    }
}

impl From<CommandError> for SimError {
    fn from(e: CommandError) -> Self {
        Self::Invalid(e.into())
    }
}

/// Structured snapshot of the full system.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState<T> {
    pub leader: AugmentedCommandState<T>,
    pub agents: Vec<AgentState<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SoeViolation<T> {
    pub agent: usize,
    pub time: T,
    pub phi: T,
}

/// Time series for one agent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AgentSeries<T> {
    pub phi: Vec<T>,
    pub p_out: Vec<T>,
    /// Local estimate `C_i eta_i` of the reference power.
    pub p_hat: Vec<T>,
    /// SOE rate from the closed-loop model at each sample.
    pub phi_dot: Vec<T>,
    /// Observer states, one [`ObserverLayout`] block per sample.
    pub observer: Vec<T>,
    pub errors: Vec<ErrorNorms<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace<T> {
    pub n_agents: usize,
    pub q: usize,
    pub dt: T,
    pub record_every: usize,
    pub integrator: Integrator,
    pub times: Vec<T>,
    pub p_ref: Vec<T>,
    pub psi0: Vec<T>,
    /// Generator state, `q` values per sample.
    pub eta0: Vec<T>,
    /// `sum_i P_out,i`, accumulated once when the sample is recorded.
    pub p_fesms: Vec<T>,
    pub agents: Vec<AgentSeries<T>>,
    pub violations: Vec<SoeViolation<T>>,
    pub switch_times: Vec<T>,
    /// Steps whose span contained a switching instant. Always zero when
    /// steps are aligned with the schedule.
    pub straddled_steps: usize,
}

impl<T: Scalar> SimTrace<T> {
    fn empty(n_agents: usize, q: usize, cfg: &SimConfig<T>) -> Self {
        Self {
            n_agents,
            q,
            dt: cfg.dt,
            record_every: cfg.record_every,
            integrator: cfg.integrator,
            times: Vec::new(),
            p_ref: Vec::new(),
            psi0: Vec::new(),
            eta0: Vec::new(),
            p_fesms: Vec::new(),
            agents: vec![AgentSeries::default(); n_agents],
            violations: Vec::new(),
            switch_times: Vec::new(),
            straddled_steps: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn layout(&self) -> ObserverLayout {
        ObserverLayout { q: self.q }
    }

    /// Observer of agent `i` at sample `k`.
    pub fn observer(&self, i: usize, k: usize) -> ObserverView<'_, T> {
        let len = self.layout().len();
        self.layout().view(&self.agents[i].observer[k * len..(k + 1) * len])
    }

    pub fn psi(&self, i: usize, k: usize) -> T {
        self.observer(i, k).psi
    }

    pub fn eta0_at(&self, k: usize) -> &[T] {
        &self.eta0[k * self.q..(k + 1) * self.q]
    }

    /// Copies the trace into `f64`.
    pub fn to_f64(&self) -> SimTrace<f64> {
        let c = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
        SimTrace {
            n_agents: self.n_agents,
            q: self.q,
            dt: self.dt.as_f64(),
            record_every: self.record_every,
            integrator: self.integrator,
            times: c(&self.times),
            p_ref: c(&self.p_ref),
            psi0: c(&self.psi0),
            eta0: c(&self.eta0),
            p_fesms: c(&self.p_fesms),
            agents: self
                .agents
                .iter()
                .map(|a| AgentSeries {
                    phi: c(&a.phi),
                    p_out: c(&a.p_out),
                    p_hat: c(&a.p_hat),
                    phi_dot: c(&a.phi_dot),
                    observer: c(&a.observer),
                    errors: a
                        .errors
                        .iter()
                        .map(|e| ErrorNorms::from_array(e.as_array().map(|v| v.as_f64())))
                        .collect(),
                })
                .collect(),
            violations: self
                .violations
                .iter()
                .map(|v| SoeViolation {
                    agent: v.agent,
                    time: v.time.as_f64(),
                    phi: v.phi.as_f64(),
                })
                .collect(),
            switch_times: c(&self.switch_times),
            straddled_steps: self.straddled_steps,
        }
    }
}

/// Closed-loop right-hand side with the graph frozen for the current step.
struct ClosedLoop<'a, T> {
    fleet: &'a [FlywheelParams<T>],
    spec: &'a CommandGeneratorSpec<T>,
    gains: &'a ControllerGains<T>,
    alpha0: T,
    beta0: T,
    graph: &'a WeightedDigraph<T>,
    layout: StateLayout,
}

#[derive(Debug, Clone, Copy)]
struct StateLayout {
    q: usize,
    n: usize,
}

impl StateLayout {
    fn observer(self) -> ObserverLayout {
        ObserverLayout { q: self.q }
    }

    fn agent_len(self) -> usize {
        1 + self.observer().len()
    }

    fn leader_len(self) -> usize {
        self.q + 1
    }

    fn agent(self, i: usize) -> usize {
        self.leader_len() + i * self.agent_len()
    }

    fn len(self) -> usize {
        self.agent(self.n)
    }
}

impl<T: Scalar> ClosedLoop<'_, T> {
    fn leader<'x>(&'x self, x: &'x [T]) -> ObserverView<'x, T> {
        let q = self.layout.q;
        leader_view(self.spec, &x[..q], x[q], self.alpha0, self.beta0)
    }

    fn agent<'x>(&self, x: &'x [T], i: usize) -> (T, ObserverView<'x, T>) {
        let off = self.layout.agent(i);
        (x[off], self.layout.observer().view(&x[off + 1..]))
    }
}

impl<T: Scalar> OdeSystem<T> for ClosedLoop<'_, T> {
    fn dim(&self) -> usize {
        self.layout.len()
    }

    fn rhs(&self, _t: T, x: &[T], dx: &mut [T]) {
        let q = self.layout.q;
        let (dlead, dagents) = dx.split_at_mut(self.layout.leader_len());
        let (deta0, dpsi0) = dlead.split_at_mut(q);
        dpsi0[0] = augmented_rhs_into(self.spec, self.alpha0, self.beta0, &x[..q], x[q], deta0);

        let leader = self.leader(x);
        for (i, dblock) in dagents.chunks_exact_mut(self.layout.agent_len()).enumerate() {
            let (phi, own) = self.agent(x, i);
            let row = self.graph.in_weights(i + 1);
            // Node j receives from j' only through a positive weight; node 0
            // supplies the leader truth.
            let neighbors = row.iter().enumerate().filter(|(_, &w)| w > T::zero()).map(|(j, &w)| {
                if j == 0 {
                    (w, leader)
                } else {
                    (w, self.agent(x, j - 1).1)
                }
            });
            observer_rhs_into(own, neighbors, self.gains, &mut dblock[1..]);
            let params = &self.fleet[i];
            let p_out = control_output(params, phi, &own, self.gains.kappa);
            dblock[0] = params.soe_derivative(phi, p_out);
        }
    }
}

/// Stepwise driver for the distributed closed loop.
pub struct Simulation<'a, T: Scalar> {
    scenario: &'a Scenario<T>,
    layout: StateLayout,
    alpha0: T,
    beta0: T,
    x: Vec<T>,
    step: usize,
    stepper: Stepper<T>,
    seg_steps: Vec<usize>,
    /// Current segment (index into the schedule's segments) and steps left in it.
    cursor: (usize, usize),
}

impl<'a, T: Scalar> Simulation<'a, T> {
    pub fn new(scenario: &'a Scenario<T>) -> Result<Self, SimError> {
        scenario.validate()?;
        let q = scenario.generator.dim();
        let n = scenario.fleet.len();
        let layout = StateLayout { q, n };
        let (alpha0, beta0) = common_trajectory_coeffs(&scenario.fleet)?;
        let mut x = vec![T::zero(); layout.len()];
        x[..q].copy_from_slice(scenario.generator.eta0_init());
        x[q] = scenario.psi0_init;
        for i in 0..n {
            let off = layout.agent(i);
            x[off] = scenario.initial.phi[i];
            scenario.initial.observers[i].write_flat(&mut x[off + 1..off + layout.agent_len()]);
        }
        let seg_steps = segment_steps(&scenario.network, scenario.sim.dt)?;
        Ok(Self {
            scenario,
            layout,
            alpha0,
            beta0,
            x,
            step: 0,
            stepper: Stepper::new(scenario.sim.integrator, layout.len()),
            cursor: (0, seg_steps[0]),
            seg_steps,
        })
    }

    pub fn coefficients(&self) -> (T, T) {
        (self.alpha0, self.beta0)
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> T {
        T::from_count(self.step) * self.scenario.sim.dt
    }

    /// Flat state vector (see module docs for the layout).
    pub fn raw_state(&self) -> &[T] {
        &self.x
    }

    pub fn state(&self) -> SystemState<T> {
        let q = self.layout.q;
        let ol = self.layout.observer();
        SystemState {
            leader: AugmentedCommandState {
                eta0: self.x[..q].to_vec(),
                psi0: self.x[q],
                alpha0: self.alpha0,
                beta0: self.beta0,
            },
            agents: (0..self.layout.n)
                .map(|i| {
                    let off = self.layout.agent(i);
                    AgentState {
                        phi: self.x[off],
                        observer: ol.view(&self.x[off + 1..]).to_owned(),
                    }
                })
                .collect(),
        }
    }

    /// Segment index driving the current step.
    pub fn active_segment(&self) -> usize {
        self.cursor.0
    }

    pub fn active_graph(&self) -> &'a WeightedDigraph<T> {
        let net = &self.scenario.network;
        &net.graphs()[net.segments()[self.cursor.0].graph]
    }

    /// Advances one step of size `dt`. Returns `Ok(true)` if a switch occurs
    /// at the end of the step.
    pub fn step(&mut self) -> Result<bool, SimError> {
        let sc = self.scenario;
        let sys = ClosedLoop {
            fleet: &sc.fleet,
            spec: &sc.generator,
            gains: &sc.gains,
            alpha0: self.alpha0,
            beta0: self.beta0,
            graph: self.active_graph(),
            layout: self.layout,
        };
        let t = self.time();
        self.stepper.step(&sys, t, &mut self.x, sc.sim.dt);
        self.step += 1;
        self.check_finite()?;

        self.cursor.1 -= 1;
        if self.cursor.1 == 0 {
            let m = self.seg_steps.len();
            let next = self.cursor.0 + 1;
            // A finite schedule holds its last graph; validation keeps t_end
            // within the schedule anyway.
            let next = if next < m {
                next
            } else if sc.network.is_cyclic() {
                0
            } else {
                m - 1
            };
            let switched = sc.network.segments()[next].graph != sc.network.segments()[self.cursor.0].graph
                || next != self.cursor.0;
            self.cursor = (next, self.seg_steps[next]);
            return Ok(switched);
        }
        Ok(false)
    }

    fn check_finite(&self) -> Result<(), SimError> {
        let Some(pos) = self.x.iter().position(|v| !v.is_finite()) else {
            return Ok(());
        };
        let q = self.layout.q;
        let (agent, field) = if pos < q {
            (None, format!("eta0[{pos}]"))
        } else if pos == q {
            (None, "psi0".to_string())
        } else {
            let i = (pos - self.layout.leader_len()) / self.layout.agent_len();
            let r = pos - self.layout.agent(i);
            let name = match r {
                0 => "phi".to_string(),
                r => observer_field_name(q, r - 1),
            };
            (Some(i), name)
        };
        Err(SimError::NonFinite {
            time: self.time().as_f64(),
            agent,
            field,
            partial: Box::new(SimTrace::empty(self.layout.n, q, &self.scenario.sim).to_f64()),
        })
    }

    fn record(&self, trace: &mut SimTrace<T>) {
        let sc = self.scenario;
        let q = self.layout.q;
        let sys = ClosedLoop {
            fleet: &sc.fleet,
            spec: &sc.generator,
            gains: &sc.gains,
            alpha0: self.alpha0,
            beta0: self.beta0,
            graph: self.active_graph(),
            layout: self.layout,
        };
        let leader = sys.leader(&self.x);
        let ol_len = self.layout.observer().len();
        trace.times.push(self.time());
        trace.p_ref.push(leader.p_ref_estimate());
        trace.psi0.push(self.x[q]);
        trace.eta0.extend_from_slice(&self.x[..q]);
        let mut total = T::zero();
        for (i, series) in trace.agents.iter_mut().enumerate() {
            let (phi, obs) = sys.agent(&self.x, i);
            let p_out = control_output(&sc.fleet[i], phi, &obs, sc.gains.kappa);
            total = total + p_out;
            series.phi.push(phi);
            series.p_out.push(p_out);
            series.p_hat.push(obs.p_ref_estimate());
            series.phi_dot.push(closed_loop_soe_rate(phi, &obs, sc.gains.kappa));
            let off = self.layout.agent(i) + 1;
            series.observer.extend_from_slice(&self.x[off..off + ol_len]);
            series.errors.push(ErrorNorms::compute(phi, &obs, &leader));
        }
        trace.p_fesms.push(total);
    }

    fn record_violations(&self, trace: &mut SimTrace<T>) {
        for i in 0..self.layout.n {
            let phi = self.x[self.layout.agent(i)];
            if !is_physical_soe(phi) {
                trace.violations.push(SoeViolation {
                    agent: i,
                    time: self.time(),
                    phi,
                });
            }
        }
    }
}

fn observer_field_name(q: usize, r: usize) -> String {
    let c = q * q;
    match r {
        r if r < c => format!("S[{}][{}]", r / q, r % q),
        r if r < c + q => format!("C[{}]", r - c),
        r if r < c + 2 * q => format!("eta[{}]", r - c - q),
        r if r == c + 2 * q => "alpha".into(),
        r if r == c + 2 * q + 1 => "beta".into(),
        _ => "psi".into(),
    }
}

/// Runs the distributed closed loop from `t = 0` to `t_end`.
pub fn run<T: Scalar>(scenario: &Scenario<T>) -> Result<SimTrace<T>, SimError> {
    if scenario.connectivity.enforce {
        let report = scenario.connectivity_report()?;
        if !report.holds() {
            return Err(SimError::NotJointlyConnected(Box::new(report)));
        }
    }
    let mut sim = Simulation::new(scenario)?;
    let n_steps = scenario.sim.n_steps()?;
    let every = scenario.sim.record_every;
    let mut trace = SimTrace::empty(scenario.fleet.len(), scenario.generator.dim(), &scenario.sim);
    sim.record(&mut trace);
    sim.record_violations(&mut trace);
    for k in 1..=n_steps {
        let switched = match sim.step() {
            Ok(s) => s,
            Err(SimError::NonFinite { time, agent, field, .. }) => {
                return Err(SimError::NonFinite {
                    time,
                    agent,
                    field,
                    partial: Box::new(trace.to_f64()),
                });
            }
            Err(e) => return Err(e),
        };
        if switched && k < n_steps {
            trace.switch_times.push(sim.time());
        }
        sim.record_violations(&mut trace);
        if k % every == 0 {
            sim.record(&mut trace);
        }
    }
    trace.straddled_steps = count_straddled_steps(scenario, n_steps);
    Ok(trace)
}

/// Independent audit of step/switch alignment: counts steps whose open
/// interval `(k dt, (k+1) dt)` contains a switching instant.
fn count_straddled_steps<T: Scalar>(scenario: &Scenario<T>, n_steps: usize) -> usize {
    let net = &scenario.network;
    let dt = scenario.sim.dt.as_f64();
    let t_end = dt * n_steps as f64;
    let mut count = 0;
    let mut t = 0.0;
    'outer: loop {
        for s in net.segments() {
            t += s.duration.as_f64();
            if t >= t_end {
                break 'outer;
            }
            let k = t / dt;
            if (k - k.round()).abs() > 1e-6 {
                count += 1;
            }
        }
        if !net.is_cyclic() {
            break;
        }
    }
    count
}

/// Centralized reference run: integrates the augmented generator and applies
/// the ideal dispatch open loop, with every SOE starting on `psi0(0)`.
///
/// The trace reports the leader truth as every agent's "observer", so error
/// coordinates reduce to `|phi_i - psi0|`.
pub fn run_dispatch_oracle<T: Scalar>(scenario: &Scenario<T>) -> Result<SimTrace<T>, SimError> {
    scenario.validate()?;
    let fleet = &scenario.fleet;
    let spec = &scenario.generator;
    let (alpha0, beta0) = common_trajectory_coeffs(fleet)?;
    let q = spec.dim();
    let n = fleet.len();
    let sys = (q + 1 + n, |_t: T, x: &[T], dx: &mut [T]| {
        let psi0 = x[q];
        dx[q] = augmented_rhs_into(spec, alpha0, beta0, &x[..q], psi0, &mut dx[..q]);
        let p_ref = dot(spec.c0(), &x[..q]);
        let dispatch = ideal_dispatch(fleet, psi0, p_ref).expect("nonempty fleet");
        for (i, p) in fleet.iter().enumerate() {
            dx[q + 1 + i] = p.soe_derivative(x[q + 1 + i], dispatch[i]);
        }
    });
    let mut x = vec![scenario.psi0_init; q + 1 + n];
    x[..q].copy_from_slice(spec.eta0_init());

    let mut trace = SimTrace::empty(n, q, &scenario.sim);
    let dt = scenario.sim.dt;
    let record = |x: &[T], t: T, trace: &mut SimTrace<T>| {
        let truth = AugmentedCommandState {
            eta0: x[..q].to_vec(),
            psi0: x[q],
            alpha0,
            beta0,
        };
        let truth_obs = ObserverState::truth(&truth, spec);
        let tv = truth_obs.view();
        let p_ref = tv.p_ref_estimate();
        let dispatch = ideal_dispatch(fleet, truth.psi0, p_ref).expect("nonempty fleet");
        let mut flat = vec![T::zero(); truth_obs.layout().len()];
        truth_obs.write_flat(&mut flat);
        trace.times.push(t);
        trace.p_ref.push(p_ref);
        trace.psi0.push(truth.psi0);
        trace.eta0.extend_from_slice(&truth.eta0);
        let mut total = T::zero();
        for (i, series) in trace.agents.iter_mut().enumerate() {
            let phi = x[q + 1 + i];
            total = total + dispatch[i];
            series.phi.push(phi);
            series.p_out.push(dispatch[i]);
            series.p_hat.push(p_ref);
            series.phi_dot.push(fleet[i].soe_derivative(phi, dispatch[i]));
            series.observer.extend_from_slice(&flat);
            series.errors.push(ErrorNorms::compute(phi, &tv, &tv));
        }
        trace.p_fesms.push(total);
    };

    let n_steps = scenario.sim.n_steps()?;
    let mut stepper = Stepper::new(scenario.sim.integrator, sys.dim());
    record(&x, T::zero(), &mut trace);
    for k in 1..=n_steps {
        let t = T::from_count(k - 1) * dt;
        stepper.step(&sys, t, &mut x, dt);
        let t = T::from_count(k) * dt;
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            let (agent, field) = if pos < q + 1 {
                (
                    None,
                    if pos == q {
                        "psi0".to_string()
                    } else {
                        format!("eta0[{pos}]")
                    },
                )
            } else {
                (Some(pos - q - 1), "phi".to_string())
            };
            return Err(SimError::NonFinite {
                time: t.as_f64(),
                agent,
                field,
                partial: Box::new(trace.to_f64()),
            });
        }
        for i in 0..n {
            if !is_physical_soe(x[q + 1 + i]) {
                trace.violations.push(SoeViolation {
                    agent: i,
                    time: t,
                    phi: x[q + 1 + i],
                });
            }
        }
        if k % scenario.sim.record_every == 0 {
            record(&x, t, &mut trace);
        }
    }
    Ok(trace)
}
