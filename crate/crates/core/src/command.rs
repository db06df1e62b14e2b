//! Reference generator, common SOE trajectory and the centralized ideal dispatch.
//!
//! The reference power comes from an autonomous linear exosystem
//! `eta0' = S0 eta0`, `P_REF = C0 eta0`. Cascading it with
//! `psi0' = -alpha0 psi0 - beta0 P_REF` yields the augmented generator whose
//! state is the leader node every agent tries to reconstruct.

use thiserror::Error;

use crate::linalg::{dot, mat_vec_into, Matrix};
use crate::plant::FlywheelParams;
use crate::Scalar;

/// Slack on `Re(lambda) <= 0` when checking the generator matrix; rotation
/// generators sit exactly on the imaginary axis.
pub const DEFAULT_EIGTOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CommandError {
    #[error("fleet is empty")]
    EmptyFleet,
    #[error("S0 must be square and nonempty (got {rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("{what} has length {found}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("S0 has an eigenvalue {re}{im:+}i with positive real part")]
    Unstable { re: f64, im: f64 },
    #[error("eigenvalues of S0 could not be computed")]
    EigenFailure,
    #[error("{0} contains non-finite entries")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandGeneratorSpec<T> {
    s0: Matrix<T>,
    c0: Vec<T>,
    eta0_init: Vec<T>,
}

impl<T: Scalar> CommandGeneratorSpec<T> {
    pub fn new(s0: Matrix<T>, c0: Vec<T>, eta0_init: Vec<T>) -> Result<Self, CommandError> {
        Self::with_eigtol(s0, c0, eta0_init, DEFAULT_EIGTOL)
    }

    pub fn with_eigtol(s0: Matrix<T>, c0: Vec<T>, eta0_init: Vec<T>, eigtol: f64) -> Result<Self, CommandError> {
        if !s0.is_square() || s0.rows() == 0 {
            return Err(CommandError::NotSquare {
                rows: s0.rows(),
                cols: s0.cols(),
            });
        }
        let q = s0.rows();
        for (what, len) in [("C0", c0.len()), ("eta0_init", eta0_init.len())] {
            if len != q {
                return Err(CommandError::DimensionMismatch {
                    what,
                    expected: q,
                    found: len,
                });
            }
        }
        for (what, vals) in [("S0", s0.as_slice()), ("C0", &c0[..]), ("eta0_init", &eta0_init[..])] {
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(CommandError::NonFinite(what));
            }
        }
        let eig = s0.eigenvalues().ok_or(CommandError::EigenFailure)?;
        if let Some(&(re, im)) = eig.iter().find(|(re, _)| *re > eigtol) {
            return Err(CommandError::Unstable { re, im });
        }
        Ok(Self { s0, c0, eta0_init })
    }

    /// Dimension `q` of the generator state.
    pub fn dim(&self) -> usize {
        self.c0.len()
    }

    pub fn s0(&self) -> &Matrix<T> {
        &self.s0
    }

    pub fn c0(&self) -> &[T] {
        &self.c0
    }

    pub fn eta0_init(&self) -> &[T] {
        &self.eta0_init
    }

    pub fn p_ref(&self, eta0: &[T]) -> T {
        dot(&self.c0, eta0)
    }
}

/// `(alpha0, beta0)` of the common SOE trajectory:
/// `alpha0 = 2 sum(B_vi/gamma_i) / sum(I_i/gamma_i)`, `beta0 = 2 / sum(I_i/gamma_i)`.
pub fn common_trajectory_coeffs<T: Scalar>(fleet: &[FlywheelParams<T>]) -> Result<(T, T), CommandError> {
    if fleet.is_empty() {
        return Err(CommandError::EmptyFleet);
    }
    let capacity: T = fleet.iter().map(FlywheelParams::capacity_weight).sum();
    let friction: T = fleet.iter().map(FlywheelParams::friction_weight).sum();
    let two = T::lit(2.0);
    Ok((two * friction / capacity, two / capacity))
}

/// `(S0 eta0, C0 eta0)`.
pub fn step_reference<T: Scalar>(spec: &CommandGeneratorSpec<T>, eta0: &[T]) -> Result<(Vec<T>, T), CommandError> {
    check_dim("eta0", spec.dim(), eta0.len())?;
    Ok((spec.s0.mul_vec(eta0), spec.p_ref(eta0)))
}

/// Right-hand side of the common trajectory, `-alpha psi - beta p`.
///
/// Agents evaluate their own estimate with the very same expression, which
/// keeps a perfectly initialized observer bit-identical to the leader.
#[inline]
pub fn common_soe_rate<T: Scalar>(alpha: T, beta: T, psi: T, p_ref: T) -> T {
    -alpha * psi - beta * p_ref
}

/// Leader state: generator state plus the common SOE trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedCommandState<T> {
    pub eta0: Vec<T>,
    pub psi0: T,
    pub alpha0: T,
    pub beta0: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDerivative<T> {
    pub eta0: Vec<T>,
    pub psi0: T,
}

impl<T: Scalar> AugmentedCommandState<T> {
    /// Initial leader state; coefficients always come from the fleet.
    pub fn initial(spec: &CommandGeneratorSpec<T>, fleet: &[FlywheelParams<T>], psi0: T) -> Result<Self, CommandError> {
        let (alpha0, beta0) = common_trajectory_coeffs(fleet)?;
        Ok(Self {
            eta0: spec.eta0_init.clone(),
            psi0,
            alpha0,
            beta0,
        })
    }

    pub fn p_ref(&self, spec: &CommandGeneratorSpec<T>) -> T {
        spec.p_ref(&self.eta0)
    }
}

pub fn step_augmented<T: Scalar>(
    state: &AugmentedCommandState<T>,
    spec: &CommandGeneratorSpec<T>,
) -> Result<AugmentedDerivative<T>, CommandError> {
    check_dim("eta0", spec.dim(), state.eta0.len())?;
    let mut deta = vec![T::zero(); spec.dim()];
    let psi_rate = augmented_rhs_into(spec, state.alpha0, state.beta0, &state.eta0, state.psi0, &mut deta);
    Ok(AugmentedDerivative {
        eta0: deta,
        psi0: psi_rate,
    })
}

/// Writes `S0 eta0` into `deta` and returns `psi0'`.
#[inline]
pub(crate) fn augmented_rhs_into<T: Scalar>(
    spec: &CommandGeneratorSpec<T>,
    alpha0: T,
    beta0: T,
    eta0: &[T],
    psi0: T,
    deta: &mut [T],
) -> T {
    mat_vec_into(spec.s0.as_slice(), spec.dim(), eta0, deta);
    common_soe_rate(alpha0, beta0, psi0, dot(&spec.c0, eta0))
}

/// Per-agent output powers that keep every unit on the common trajectory
/// while summing to `p_ref`.
pub fn ideal_dispatch<T: Scalar>(fleet: &[FlywheelParams<T>], psi0: T, p_ref: T) -> Result<Vec<T>, CommandError> {
    if fleet.is_empty() {
        return Err(CommandError::EmptyFleet);
    }
    let capacity: T = fleet.iter().map(FlywheelParams::capacity_weight).sum();
    let friction: T = fleet.iter().map(FlywheelParams::friction_weight).sum();
    let shared = p_ref / capacity + (friction / capacity) * psi0;
    Ok(fleet
        .iter()
        .map(|p| p.capacity_weight() * (shared - (p.friction() / p.inertia()) * psi0))
        .collect())
}

fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<(), CommandError> {
    if expected == found {
        Ok(())
    } else {
        Err(CommandError::DimensionMismatch { what, expected, found })
    }
}
