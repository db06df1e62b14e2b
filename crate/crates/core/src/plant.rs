//! Flywheel rotor physics and state-of-energy (SOE) dynamics.
//!
//! The controlled state is the SOE `phi = gamma * omega^2` with
//! `gamma = 1 / omega_max^2`; the control input is the net output power
//! `P_out`. Negative `P_out` charges the flywheel.

use thiserror::Error;

use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("{field} must be positive and finite (got {value})")]
    NonPositive { field: &'static str, value: f64 },
    #[error("SOE must be nonnegative to invert (got {0})")]
    NegativeSoe(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlywheelParams<T> {
    inertia: T,
    friction: T,
    omega_max: T,
    gamma: T,
    energy_capacity: T,
}

impl<T: Scalar> FlywheelParams<T> {
    /// `inertia` in kg m^2, `friction` (B_v) in N m s/rad, `omega_max` in rad/s.
    pub fn new(inertia: T, friction: T, omega_max: T) -> Result<Self, PlantError> {
        for (field, value) in [
            ("inertia_kgm2", inertia),
            ("friction_Nms", friction),
            ("omega_max_rads", omega_max),
        ] {
            if !(value > T::zero() && value.is_finite()) {
                return Err(PlantError::NonPositive {
                    field,
                    value: value.as_f64(),
                });
            }
        }
        let omega_sq = omega_max * omega_max;
        Ok(Self {
            inertia,
            friction,
            omega_max,
            gamma: omega_sq.recip(),
            energy_capacity: T::lit(0.5) * inertia * omega_sq,
        })
    }

    pub fn inertia(&self) -> T {
        self.inertia
    }

    pub fn friction(&self) -> T {
        self.friction
    }

    pub fn omega_max(&self) -> T {
        self.omega_max
    }

    /// `1 / omega_max^2`.
    pub fn gamma(&self) -> T {
        self.gamma
    }

    /// `I omega_max^2 / 2`, in joules.
    pub fn energy_capacity(&self) -> T {
        self.energy_capacity
    }

    /// `I / gamma`: twice the energy capacity, the weight each unit carries in
    /// the fleet's common SOE trajectory.
    pub fn capacity_weight(&self) -> T {
        self.inertia / self.gamma
    }

    /// `B_v / gamma`: friction loss at full charge.
    pub fn friction_weight(&self) -> T {
        self.friction / self.gamma
    }

    pub fn soe_from_omega(&self, omega: T) -> T {
        self.gamma * omega * omega
    }

    /// Nonnegative rotor speed for a given SOE.
    pub fn omega_from_soe(&self, phi: T) -> Result<T, PlantError> {
        if phi < T::zero() {
            return Err(PlantError::NegativeSoe(phi.as_f64()));
        }
        Ok((phi / self.gamma).sqrt())
    }

    /// Returns `(P_loss, P_out) = (B_v omega^2, -T omega)`.
    pub fn power_decomposition(&self, omega: T, torque: T) -> (T, T) {
        (self.friction * omega * omega, -torque * omega)
    }

    /// `d(phi)/dt = -(2 B_v / I) phi - (2 gamma / I) P_out`.
    #[inline]
    pub fn soe_derivative(&self, phi: T, p_out: T) -> T {
        let two = T::lit(2.0);
        -(two * self.friction / self.inertia) * phi - (two * self.gamma / self.inertia) * p_out
    }

    /// `d(omega)/dt = (-B_v omega + T) / I`.
    pub fn rotor_derivative(&self, omega: T, torque: T) -> T {
        (-self.friction * omega + torque) / self.inertia
    }

    /// Stored kinetic energy `I omega^2 / 2`.
    pub fn kinetic_energy(&self, omega: T) -> T {
        T::lit(0.5) * self.inertia * omega * omega
    }
}

/// `0 <= phi <= 1`.
pub fn is_physical_soe<T: Scalar>(phi: T) -> bool {
    phi >= T::zero() && phi <= T::one()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reference(i: usize) -> FlywheelParams<f64> {
        let rows = [
            (0.8, 1.0e-3, 1000.0),
            (0.9, 0.95e-3, 800.0),
            (1.0, 1.05e-3, 900.0),
            (1.3, 0.9e-3, 1200.0),
        ];
        let (inertia, friction, omega_max) = rows[i - 1];
        FlywheelParams::new(inertia, friction, omega_max).unwrap()
    }

    #[test]
    fn rejects_nonpositive_fields() {
        let err = FlywheelParams::new(-1.0, 1e-3, 1000.0).unwrap_err();
        assert!(matches!(
            err,
            PlantError::NonPositive {
                field: "inertia_kgm2",
                ..
            }
        ));
        assert!(FlywheelParams::new(1.0, 0.0, 1000.0).is_err());
        assert!(FlywheelParams::new(1.0, 1e-3, f64::NAN).is_err());
    }

    #[test]
    fn derived_fields_consistent() {
        for i in 1..=4 {
            let p = reference(i);
            let w2 = p.omega_max() * p.omega_max();
            assert!((p.gamma() * w2 - 1.0).abs() <= 2.0 * f64::EPSILON);
            assert_relative_eq!(
                p.energy_capacity(),
                p.inertia() / (2.0 * p.gamma()),
                max_relative = 1e-15
            );
        }
    }

    #[test]
    fn soe_from_omega_examples() {
        let p = reference(1);
        assert_eq!(p.soe_from_omega(p.omega_max()), 1.0);
        assert_eq!(p.soe_from_omega(0.0), 0.0);
        assert_relative_eq!(p.soe_from_omega(500.0), 0.25, max_relative = 1e-15);
    }

    #[test]
    fn omega_from_soe_examples() {
        let p = reference(4);
        assert_relative_eq!(p.omega_from_soe(1.0).unwrap(), 1200.0, max_relative = 1e-15);
        assert_eq!(p.omega_from_soe(0.0).unwrap(), 0.0);
        assert_relative_eq!(
            p.omega_from_soe(0.87).unwrap(),
            0.87f64.sqrt() * 1200.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(p.omega_from_soe(0.87).unwrap(), 1119.285486, max_relative = 1e-8);
        assert!(matches!(p.omega_from_soe(-0.1), Err(PlantError::NegativeSoe(_))));
    }

    #[test]
    fn power_decomposition_examples() {
        let p = FlywheelParams::new(1.0, 1e-3, 1000.0).unwrap();
        let (loss, out) = p.power_decomposition(100.0, 0.0);
        assert_relative_eq!(loss, 10.0, max_relative = 1e-15);
        assert_eq!(out, 0.0);
        assert_eq!(p.power_decomposition(0.0, 3.0), (0.0, 0.0));
        assert_eq!(reference(1).power_decomposition(1000.0, 5.0), (1000.0, -5000.0));
    }

    #[test]
    fn soe_derivative_examples() {
        let p = reference(1);
        assert_eq!(p.soe_derivative(0.0, 0.0), 0.0);
        assert_relative_eq!(p.soe_derivative(1.0, 0.0), -2.5e-3, max_relative = 1e-14);
        assert_relative_eq!(p.soe_derivative(0.0, -4.0e5), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn rotor_derivative_examples() {
        let p = reference(2);
        assert_eq!(p.rotor_derivative(100.0, p.friction() * 100.0), 0.0);
        assert_relative_eq!(
            p.rotor_derivative(800.0, 0.0),
            -0.95e-3 * 800.0 / 0.9,
            max_relative = 1e-15
        );
        assert_relative_eq!(p.rotor_derivative(800.0, 0.0), -0.844444, max_relative = 1e-6);
        let unit = FlywheelParams::new(1.0, 0.5, 10.0).unwrap();
        assert_eq!(unit.rotor_derivative(0.0, 1.0), 1.0);
    }

    #[test]
    fn physical_soe_flag() {
        assert!(is_physical_soe(0.0) && is_physical_soe(1.0));
        assert!(!is_physical_soe(-1e-9) && !is_physical_soe(1.0 + 1e-9));
    }
}
