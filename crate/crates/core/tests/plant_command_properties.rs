mod common;

use approx::assert_relative_eq;
use proptest::prelude::*;

use common::{oracle_coeffs, reference_fleet, REFERENCE_FLEET};
use fesms::command::{
    common_trajectory_coeffs, ideal_dispatch, step_augmented, AugmentedCommandState, CommandGeneratorSpec,
};
use fesms::linalg::Matrix;
use fesms::plant::PlantError;
use fesms::Flywheel;

fn flywheel() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.05f64..20.0, 1e-5f64..1e-1, 50.0f64..1e4)
}

fn fleet() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec(flywheel(), 1..=10)
}

fn build(raw: &[(f64, f64, f64)]) -> Vec<Flywheel> {
    raw.iter().map(|&(i, b, w)| Flywheel::new(i, b, w).unwrap()).collect()
}

proptest! {
    #[test]
    fn soe_round_trips_through_speed((i, b, w) in flywheel(), frac in 0.0f64..1.0) {
        let p = Flywheel::new(i, b, w).unwrap();
        let omega = frac * w;
        let phi = p.soe_from_omega(omega);
        prop_assert!((0.0..=1.0).contains(&phi));
        prop_assert!((p.omega_from_soe(phi).unwrap() - omega).abs() <= 1e-12 * w);
        // SOE is the stored energy over capacity.
        prop_assert!((phi - p.kinetic_energy(omega) / p.energy_capacity()).abs() <= 1e-12);
    }

    #[test]
    fn soe_dynamics_match_rotor_dynamics((i, b, w) in flywheel(), frac in 0.01f64..1.0, torque in -50.0f64..50.0) {
        let p = Flywheel::new(i, b, w).unwrap();
        let omega = frac * w;
        let phi = p.soe_from_omega(omega);
        let (loss, out) = p.power_decomposition(omega, torque);
        // Chain rule: phi' = 2 gamma omega omega'.
        let chain = 2.0 * p.gamma() * omega * p.rotor_derivative(omega, torque);
        let scale = chain.abs().max(2.0 * p.gamma() * omega * (b * omega + torque.abs()) / i);
        prop_assert!((p.soe_derivative(phi, out) - chain).abs() <= 1e-12 * scale.max(1e-300));
        // Energy balance: dE/dt = -P_loss - P_out.
        let de = i * omega * p.rotor_derivative(omega, torque);
        prop_assert!((de + loss + out).abs() <= 1e-9 * (loss.abs() + out.abs()).max(1e-300));
    }

    #[test]
    fn coefficients_match_direct_sums(raw in fleet()) {
        let (a, b) = common_trajectory_coeffs(&build(&raw)).unwrap();
        let (ea, eb) = oracle_coeffs(&raw);
        prop_assert!((a - ea).abs() <= 1e-12 * ea);
        prop_assert!((b - eb).abs() <= 1e-12 * eb);
    }

    #[test]
    fn dispatch_sums_to_reference(raw in fleet(), psi0 in 0.0f64..1.0, p_ref in -1e6f64..1e6) {
        let p = ideal_dispatch(&build(&raw), psi0, p_ref).unwrap();
        prop_assert!((p.iter().sum::<f64>() - p_ref).abs() <= 1e-9 * p_ref.abs().max(1.0));
    }

    #[test]
    fn dispatch_keeps_every_unit_on_the_common_trajectory(raw in fleet(), psi0 in 0.0f64..1.0, p_ref in -1e6f64..1e6) {
        let fleet = build(&raw);
        let (a, b) = oracle_coeffs(&raw);
        let common = -a * psi0 - b * p_ref;
        let scale = (a * psi0).abs().max((b * p_ref).abs()).max(1e-12);
        for (f, pi) in fleet.iter().zip(ideal_dispatch(&fleet, psi0, p_ref).unwrap()) {
            prop_assert!((f.soe_derivative(psi0, pi) - common).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn dispatch_is_linear_in_reference(raw in fleet(), psi0 in 0.0f64..1.0, p1 in -1e5f64..1e5, p2 in -1e5f64..1e5) {
        let fleet = build(&raw);
        let d1 = ideal_dispatch(&fleet, psi0, p1).unwrap();
        let d2 = ideal_dispatch(&fleet, psi0, p2).unwrap();
        let d0 = ideal_dispatch(&fleet, psi0, 0.0).unwrap();
        let d12 = ideal_dispatch(&fleet, psi0, p1 + p2).unwrap();
        for k in 0..fleet.len() {
            let lin = d1[k] + d2[k] - d0[k];
            prop_assert!((d12[k] - lin).abs() <= 1e-9 * (d1[k].abs() + d2[k].abs() + d0[k].abs()).max(1.0));
        }
    }

    #[test]
    fn permuting_the_fleet_permutes_the_dispatch(raw in fleet(), psi0 in 0.0f64..1.0, p_ref in -1e6f64..1e6) {
        let fleet = build(&raw);
        let mut rev = fleet.clone();
        rev.reverse();
        let d = ideal_dispatch(&fleet, psi0, p_ref).unwrap();
        let mut dr = ideal_dispatch(&rev, psi0, p_ref).unwrap();
        dr.reverse();
        for (x, y) in d.iter().zip(&dr) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }
}

#[test]
fn reference_fleet_coefficients() {
    let (a, b) = common_trajectory_coeffs(&reference_fleet()).unwrap();
    let cap: f64 = REFERENCE_FLEET.iter().map(|&(i, _, w)| i * w * w).sum();
    let fric: f64 = REFERENCE_FLEET.iter().map(|&(_, b, w)| b * w * w).sum();
    assert_relative_eq!(cap, 4.058e6, max_relative = 1e-12);
    assert_relative_eq!(fric, 3754.5, max_relative = 1e-12);
    assert_relative_eq!(a, 1.8504e-3, max_relative = 1e-4);
    assert_relative_eq!(b, 4.9286e-7, max_relative = 1e-4);
}

#[test]
fn homogeneous_fleet_shares_power_equally() {
    let fleet = vec![Flywheel::new(1.0, 1e-3, 900.0).unwrap(); 5];
    let p = ideal_dispatch(&fleet, 0.4, 1e4).unwrap();
    for v in &p {
        assert_relative_eq!(*v, 2e3, max_relative = 1e-12);
    }
}

#[test]
fn invalid_parameters_name_the_field() {
    match Flywheel::new(-1.0, 1e-3, 900.0) {
        Err(PlantError::NonPositive { field, .. }) => assert_eq!(field, "inertia_kgm2"),
        other => panic!("unexpected {other:?}"),
    }
    assert!(Flywheel::new(1.0, 0.0, 900.0).is_err());
    assert!(Flywheel::new(1.0, 1e-3, f64::NAN).is_err());
}

#[test]
fn augmented_rates_match_direct_evaluation() {
    let spec = CommandGeneratorSpec::new(
        Matrix::from_rows(&[vec![0.0, 0.1], vec![-0.1, 0.0]]).unwrap(),
        vec![1.0, 0.0],
        vec![3e3, 2e4],
    )
    .unwrap();
    let leader = AugmentedCommandState::initial(&spec, &reference_fleet(), 0.6).unwrap();
    let d = step_augmented(&leader, &spec).unwrap();
    let (a, b) = oracle_coeffs(&REFERENCE_FLEET);
    assert_relative_eq!(d.eta0[0], 0.1 * 2e4, max_relative = 1e-15);
    assert_relative_eq!(d.eta0[1], -0.1 * 3e3, max_relative = 1e-15);
    assert_relative_eq!(d.psi0, -a * 0.6 - b * 3e3, max_relative = 1e-12);
}

#[test]
fn unstable_generator_is_rejected() {
    let s0 = Matrix::from_rows(&[vec![0.5, 0.0], vec![0.0, -0.1]]).unwrap();
    assert!(CommandGeneratorSpec::new(s0, vec![1.0, 0.0], vec![1.0, 1.0]).is_err());
}
