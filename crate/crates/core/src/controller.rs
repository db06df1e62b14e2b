//! Per-agent distributed control law.
//!
//! Each agent runs a two-layer adaptive distributed observer. Layer one
//! estimates the generator (`S_i`, `C_i`) and its state `eta_i`. Layer two
//! estimates the common trajectory (`alpha_i`, `beta_i`, `psi_i`). A local
//! feedback then drives the agent's SOE onto `psi_i`.
//!
//! Neighbor `j = 0` is the leader: its "observer" is the true augmented
//! generator state, see [`leader_view`].

use thiserror::Error;

use crate::command::{common_soe_rate, AugmentedCommandState, CommandGeneratorSpec};
use crate::linalg::{dist2, dot, Matrix};
use crate::plant::FlywheelParams;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("{what} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("negative coupling weight {0}")]
    NegativeWeight(f64),
    #[error("gain {name} must be positive and finite (got {value})")]
    BadGain { name: &'static str, value: f64 },
}

/// Offsets of the observer blocks inside a flat buffer:
/// `[S (q*q, row-major), C (q), eta (q), alpha, beta, psi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObserverLayout {
    pub q: usize,
}

impl ObserverLayout {
    pub fn len(self) -> usize {
        self.q * self.q + 2 * self.q + 3
    }

    pub fn is_empty(self) -> bool {
        false
    }

    fn c(self) -> usize {
        self.q * self.q
    }

    fn eta(self) -> usize {
        self.c() + self.q
    }

    fn alpha(self) -> usize {
        self.eta() + self.q
    }

    /// Borrows an observer stored at the start of `buf`.
    pub fn view<T: Scalar>(self, buf: &[T]) -> ObserverView<'_, T> {
        let a = self.alpha();
        ObserverView {
            s: &buf[..self.c()],
            c: &buf[self.c()..self.eta()],
            eta: &buf[self.eta()..a],
            alpha: buf[a],
            beta: buf[a + 1],
            psi: buf[a + 2],
        }
    }
}

/// Borrowed observer (or leader truth) as seen by a neighbor.
#[derive(Debug, Clone, Copy)]
pub struct ObserverView<'a, T> {
    pub s: &'a [T],
    pub c: &'a [T],
    pub eta: &'a [T],
    pub alpha: T,
    pub beta: T,
    pub psi: T,
}

impl<T: Scalar> ObserverView<'_, T> {
    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// Local estimate of the reference power, `C_i eta_i`.
    #[inline]
    pub fn p_ref_estimate(&self) -> T {
        dot(self.c, self.eta)
    }

    fn check(&self, q: usize) -> Result<(), ControllerError> {
        for (what, expected, found) in [
            ("S", q * q, self.s.len()),
            ("C", q, self.c.len()),
            ("eta", q, self.eta.len()),
        ] {
            if expected != found {
                return Err(ControllerError::DimensionMismatch { what, expected, found });
            }
        }
        Ok(())
    }

    pub fn to_owned(&self) -> ObserverState<T> {
        let q = self.dim();
        ObserverState {
            s: Matrix::from_row_major(q, q, self.s.to_vec()).expect("square S block"),
            c: self.c.to_vec(),
            eta: self.eta.to_vec(),
            alpha: self.alpha,
            beta: self.beta,
            psi: self.psi,
        }
    }
}

/// The leader as a neighbor: true `(S0, C0, eta0, alpha0, beta0, psi0)`.
pub fn leader_view<'a, T: Scalar>(
    spec: &'a CommandGeneratorSpec<T>,
    eta0: &'a [T],
    psi0: T,
    alpha0: T,
    beta0: T,
) -> ObserverView<'a, T> {
    ObserverView {
        s: spec.s0().as_slice(),
        c: spec.c0(),
        eta: eta0,
        alpha: alpha0,
        beta: beta0,
        psi: psi0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState<T> {
    pub s: Matrix<T>,
    pub c: Vec<T>,
    pub eta: Vec<T>,
    pub alpha: T,
    pub beta: T,
    pub psi: T,
}

impl<T: Scalar> ObserverState<T> {
    /// Everything zero except `psi`.
    pub fn zeros(q: usize, psi: T) -> Self {
        Self {
            s: Matrix::zeros(q, q),
            c: vec![T::zero(); q],
            eta: vec![T::zero(); q],
            alpha: T::zero(),
            beta: T::zero(),
            psi,
        }
    }

    /// An observer that already agrees with the leader.
    pub fn truth(leader: &AugmentedCommandState<T>, spec: &CommandGeneratorSpec<T>) -> Self {
        Self {
            s: spec.s0().clone(),
            c: spec.c0().to_vec(),
            eta: leader.eta0.clone(),
            alpha: leader.alpha0,
            beta: leader.beta0,
            psi: leader.psi0,
        }
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn layout(&self) -> ObserverLayout {
        ObserverLayout { q: self.dim() }
    }

    pub fn view(&self) -> ObserverView<'_, T> {
        ObserverView {
            s: self.s.as_slice(),
            c: &self.c,
            eta: &self.eta,
            alpha: self.alpha,
            beta: self.beta,
            psi: self.psi,
        }
    }

    /// Flattens into the [`ObserverLayout`] order.
    pub fn write_flat(&self, out: &mut [T]) {
        let layout = self.layout();
        out[..layout.c()].copy_from_slice(self.s.as_slice());
        out[layout.c()..layout.eta()].copy_from_slice(&self.c);
        out[layout.eta()..layout.alpha()].copy_from_slice(&self.eta);
        out[layout.alpha()] = self.alpha;
        out[layout.alpha() + 1] = self.beta;
        out[layout.alpha() + 2] = self.psi;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerGains<T> {
    pub mu_s: T,
    pub mu_c: T,
    pub mu_eta: T,
    pub mu_alpha: T,
    pub mu_beta: T,
    pub mu_psi: T,
    pub kappa: T,
}

impl<T: Scalar> ControllerGains<T> {
    pub fn new(
        mu_s: T,
        mu_c: T,
        mu_eta: T,
        mu_alpha: T,
        mu_beta: T,
        mu_psi: T,
        kappa: T,
    ) -> Result<Self, ControllerError> {
        let gains = Self {
            mu_s,
            mu_c,
            mu_eta,
            mu_alpha,
            mu_beta,
            mu_psi,
            kappa,
        };
        for (name, value) in gains.named() {
            if !(value > T::zero() && value.is_finite()) {
                return Err(ControllerError::BadGain {
                    name,
                    value: value.as_f64(),
                });
            }
        }
        Ok(gains)
    }

    /// Same consensus gain on all six observer blocks.
    pub fn uniform(mu: T, kappa: T) -> Result<Self, ControllerError> {
        Self::new(mu, mu, mu, mu, mu, mu, kappa)
    }

    pub fn named(&self) -> [(&'static str, T); 7] {
        [
            ("mu_S", self.mu_s),
            ("mu_C", self.mu_c),
            ("mu_eta", self.mu_eta),
            ("mu_alpha", self.mu_alpha),
            ("mu_beta", self.mu_beta),
            ("mu_psi", self.mu_psi),
            ("kappa", self.kappa),
        ]
    }

    pub fn max_gain(&self) -> T {
        self.named().iter().fold(T::zero(), |m, &(_, g)| m.max(g))
    }
}

/// One flywheel: plant SOE plus its observer.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState<T> {
    pub phi: T,
    pub observer: ObserverState<T>,
}

/// Observer right-hand side for one agent.
///
/// `neighbors` pairs each in-neighbor's current estimate with `a_ij`; pass the
/// leader (via [`leader_view`]) with weight `a_i0` when that edge is active.
pub fn observer_derivatives<T: Scalar>(
    own: ObserverView<'_, T>,
    neighbors: &[(T, ObserverView<'_, T>)],
    gains: &ControllerGains<T>,
) -> Result<ObserverState<T>, ControllerError> {
    let q = own.dim();
    own.check(q)?;
    for (w, nb) in neighbors {
        nb.check(q)?;
        if !(*w >= T::zero()) {
            return Err(ControllerError::NegativeWeight(w.as_f64()));
        }
    }
    let layout = ObserverLayout { q };
    let mut out = vec![T::zero(); layout.len()];
    observer_rhs_into(own, neighbors.iter().copied(), gains, &mut out);
    Ok(layout.view(&out).to_owned())
}

/// Unchecked, allocation-free form of [`observer_derivatives`] writing into a
/// flat buffer laid out per [`ObserverLayout`].
pub(crate) fn observer_rhs_into<'a, T: Scalar>(
    own: ObserverView<'_, T>,
    neighbors: impl Iterator<Item = (T, ObserverView<'a, T>)>,
    gains: &ControllerGains<T>,
    out: &mut [T],
) {
    let layout = ObserverLayout { q: own.dim() };
    let (q, ce, ee, ae) = (layout.q, layout.c(), layout.eta(), layout.alpha());
    out.iter_mut().for_each(|v| *v = T::zero());

    // Consensus sums first, into the output slots.
    for (w, nb) in neighbors {
        if w == T::zero() {
            continue;
        }
        for ((o, &sj), &si) in out[..q * q].iter_mut().zip(nb.s).zip(own.s) {
            *o = *o + w * (sj - si);
        }
        for k in 0..q {
            out[ce + k] = out[ce + k] + w * (nb.c[k] - own.c[k]);
            out[ee + k] = out[ee + k] + w * (nb.eta[k] - own.eta[k]);
        }
        out[ae] = out[ae] + w * (nb.alpha - own.alpha);
        out[ae + 1] = out[ae + 1] + w * (nb.beta - own.beta);
        out[ae + 2] = out[ae + 2] + w * (nb.psi - own.psi);
    }

    for v in &mut out[..ce] {
        *v = gains.mu_s * *v;
    }
    for v in &mut out[ce..ee] {
        *v = gains.mu_c * *v;
    }
    for r in 0..q {
        let drift = dot(&own.s[r * q..(r + 1) * q], own.eta);
        out[ee + r] = drift + gains.mu_eta * out[ee + r];
    }
    out[ae] = gains.mu_alpha * out[ae];
    out[ae + 1] = gains.mu_beta * out[ae + 1];
    let drift = common_soe_rate(own.alpha, own.beta, own.psi, own.p_ref_estimate());
    out[ae + 2] = drift + gains.mu_psi * out[ae + 2];
}

/// SOE rate the control law imposes:
/// `-alpha_i psi_i - beta_i P_hat_i - kappa (phi_i - psi_i)`.
#[inline]
pub fn closed_loop_soe_rate<T: Scalar>(phi: T, obs: &ObserverView<'_, T>, kappa: T) -> T {
    common_soe_rate(obs.alpha, obs.beta, obs.psi, obs.p_ref_estimate()) - kappa * (phi - obs.psi)
}

/// Output power commanded for one flywheel:
/// `P_out = -(I / 2 gamma) (-alpha psi - beta P_hat - kappa (phi - psi) + (2 B_v / I) phi)`.
#[inline]
pub fn control_output<T: Scalar>(params: &FlywheelParams<T>, phi: T, obs: &ObserverView<'_, T>, kappa: T) -> T {
    let two = T::lit(2.0);
    let target_rate = closed_loop_soe_rate(phi, obs, kappa);
    let friction_rate = two * params.friction() / params.inertia() * phi;
    -(params.inertia() / (two * params.gamma())) * (target_rate + friction_rate)
}

/// Norms of the estimation and tracking errors of one agent at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorNorms<T> {
    /// Frobenius norm of `S_i - S0`.
    pub s: T,
    pub c: T,
    pub eta: T,
    pub alpha: T,
    pub beta: T,
    pub psi: T,
    /// `|phi_i - psi0|`.
    pub phi: T,
    /// `|C_i eta_i - C0 eta0|`.
    pub p_ref: T,
}

impl<T: Scalar> ErrorNorms<T> {
    pub const FAMILIES: [&'static str; 8] = ["S", "C", "eta", "alpha", "beta", "psi", "phi", "P_REF"];

    pub fn as_array(&self) -> [T; 8] {
        [
            self.s, self.c, self.eta, self.alpha, self.beta, self.psi, self.phi, self.p_ref,
        ]
    }

    pub fn from_array(a: [T; 8]) -> Self {
        Self {
            s: a[0],
            c: a[1],
            eta: a[2],
            alpha: a[3],
            beta: a[4],
            psi: a[5],
            phi: a[6],
            p_ref: a[7],
        }
    }

    pub fn compute(phi: T, obs: &ObserverView<'_, T>, truth: &ObserverView<'_, T>) -> Self {
        Self {
            s: dist2(obs.s, truth.s),
            c: dist2(obs.c, truth.c),
            eta: dist2(obs.eta, truth.eta),
            alpha: (obs.alpha - truth.alpha).abs(),
            beta: (obs.beta - truth.beta).abs(),
            psi: (obs.psi - truth.psi).abs(),
            phi: (phi - truth.psi).abs(),
            p_ref: (obs.p_ref_estimate() - truth.p_ref_estimate()).abs(),
        }
    }
}

/// Error norms for every agent against the leader truth.
pub fn error_coordinates<T: Scalar>(
    agents: &[AgentState<T>],
    truth: &AugmentedCommandState<T>,
    spec: &CommandGeneratorSpec<T>,
) -> Vec<ErrorNorms<T>> {
    let leader = leader_view(spec, &truth.eta0, truth.psi0, truth.alpha0, truth.beta0);
    agents
        .iter()
        .map(|a| ErrorNorms::compute(a.phi, &a.observer.view(), &leader))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::command::{step_augmented, CommandGeneratorSpec};
    use approx::assert_relative_eq;

    fn spec() -> CommandGeneratorSpec<f64> {
        CommandGeneratorSpec::new(
            Matrix::from_rows(&[vec![0.0, 0.1], vec![-0.1, 0.0]]).unwrap(),
            vec![1.0, 0.0],
            vec![0.0, 2e4],
        )
        .unwrap()
    }

    fn leader() -> AugmentedCommandState<f64> {
        AugmentedCommandState {
            eta0: vec![3e3, 1.9e4],
            psi0: 0.88,
            alpha0: 1.8504e-3,
            beta0: 4.9286e-7,
        }
    }

    #[test]
    fn gains_must_be_positive() {
        assert!(matches!(
            ControllerGains::new(1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0),
            Err(ControllerError::BadGain { name: "mu_alpha", .. })
        ));
        assert!(ControllerGains::uniform(100.0, -1.0).is_err());
    }

    #[test]
    fn isolated_agent_only_drifts() {
        let mut obs = ObserverState::zeros(2, 0.7);
        obs.s = Matrix::from_rows(&[vec![0.0, 0.2], vec![-0.3, 0.0]]).unwrap();
        obs.c = vec![2.0, 1.0];
        obs.eta = vec![1.0, -2.0];
        obs.alpha = 0.01;
        obs.beta = 0.5;
        let gains = ControllerGains::uniform(100.0, 1.0).unwrap();
        let d = observer_derivatives(obs.view(), &[], &gains).unwrap();
        assert!(d.s.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(d.c, vec![0.0, 0.0]);
        assert_eq!((d.alpha, d.beta), (0.0, 0.0));
        assert_eq!(d.eta, obs.s.mul_vec(&obs.eta));
        assert_eq!(d.psi, -0.01 * 0.7 - 0.5 * (2.0 * 1.0 + 1.0 * -2.0));
    }

    #[test]
    fn exact_observer_follows_leader_derivative() {
        let (spec, leader) = (spec(), leader());
        let truth = ObserverState::truth(&leader, &spec);
        let gains = ControllerGains::uniform(100.0, 1.0).unwrap();
        let lv = leader_view(&spec, &leader.eta0, leader.psi0, leader.alpha0, leader.beta0);
        let peer = truth.clone();
        let d = observer_derivatives(truth.view(), &[(1.0, lv), (2.5, peer.view())], &gains).unwrap();
        let dl = step_augmented(&leader, &spec).unwrap();
        assert_eq!(d.eta, dl.eta0);
        assert_eq!(d.psi, dl.psi0);
        assert!(d.s.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!((d.alpha, d.beta), (0.0, 0.0));
    }

    #[test]
    fn rejects_negative_weight_and_bad_dims() {
        let obs = ObserverState::<f64>::zeros(2, 0.5);
        let gains = ControllerGains::uniform(1.0, 1.0).unwrap();
        let r = observer_derivatives(obs.view(), &[(-1.0, obs.view())], &gains);
        assert_eq!(r, Err(ControllerError::NegativeWeight(-1.0)));
        let small = ObserverState::<f64>::zeros(1, 0.5);
        let r = observer_derivatives(obs.view(), &[(1.0, small.view())], &gains);
        assert!(matches!(r, Err(ControllerError::DimensionMismatch { .. })));
    }

    #[test]
    fn control_output_with_zero_observer() {
        let p = FlywheelParams::new(0.8, 1e-3, 1000.0).unwrap();
        let obs = ObserverState::zeros(2, 0.0);
        let phi = 0.6;
        let expected = -(0.8 / (2.0 * p.gamma())) * (-phi + 2.0 * 1e-3 / 0.8 * phi);
        assert_relative_eq!(
            control_output(&p, phi, &obs.view(), 1.0),
            expected,
            max_relative = 1e-14
        );
    }

    #[test]
    fn control_output_cancels_friction() {
        let p = FlywheelParams::new(1.3, 0.9e-3, 1200.0).unwrap();
        let mut obs = ObserverState::zeros(2, 0.8);
        obs.c = vec![1.0, 0.0];
        obs.eta = vec![1.5e4, 0.0];
        obs.alpha = 2e-3;
        obs.beta = 5e-7;
        let phi = 0.83;
        let u = control_output(&p, phi, &obs.view(), 1.0);
        let rate = p.soe_derivative(phi, u);
        assert_relative_eq!(rate, -2e-3 * 0.8 - 5e-7 * 1.5e4 - (0.83 - 0.8), max_relative = 1e-10);
    }

    #[test]
    fn error_norms_at_zero_init() {
        let (spec, leader) = (spec(), leader());
        let agent = AgentState {
            phi: 0.85,
            observer: ObserverState::zeros(2, 0.85),
        };
        let e = error_coordinates(&[agent], &leader, &spec)[0];
        assert_relative_eq!(e.s, 0.1 * 2f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(e.phi - e.psi, 0.0, epsilon = 1e-15);
        assert_relative_eq!(e.p_ref, 3e3, max_relative = 1e-15);
        let exact = AgentState {
            phi: 0.88,
            observer: ObserverState::truth(&leader, &spec),
        };
        assert!(error_coordinates(&[exact], &leader, &spec)[0]
            .as_array()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn flat_layout_round_trip() {
        let (spec, leader) = (spec(), leader());
        let obs = ObserverState::truth(&leader, &spec);
        let mut buf = vec![0.0; obs.layout().len()];
        obs.write_flat(&mut buf);
        assert_eq!(obs.layout().view(&buf).to_owned(), obs);
    }
}
