#![allow(dead_code)]

use std::path::PathBuf;

use fesms::scenario::parse_scenario;
use fesms::{FesmsScenario, Flywheel};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.scenario"))
}

/// Bundled scenario, parsed without the step-size guidance check.
pub fn bundled(name: &str) -> FesmsScenario {
    let text = std::fs::read_to_string(scenario_path(name)).expect("bundled scenario exists");
    parse_scenario(&text).expect("bundled scenario is valid")
}

/// The four flywheels of the reference fleet, `(I, B, omega_max)`.
pub const REFERENCE_FLEET: [(f64, f64, f64); 4] = [
    (0.8, 1.0e-3, 1000.0),
    (0.9, 0.95e-3, 800.0),
    (1.0, 1.05e-3, 900.0),
    (1.3, 0.9e-3, 1200.0),
];

pub fn reference_fleet() -> Vec<Flywheel> {
    REFERENCE_FLEET
        .iter()
        .map(|&(i, b, w)| Flywheel::new(i, b, w).unwrap())
        .collect()
}

/// Independent computation of the common-trajectory coefficients from raw
/// parameters: `gamma = 1/omega_max^2`, sums of `I/gamma` and `B/gamma`.
pub fn oracle_coeffs(params: &[(f64, f64, f64)]) -> (f64, f64) {
    let cap: f64 = params.iter().map(|&(i, _, w)| i * w * w).sum();
    let fric: f64 = params.iter().map(|&(_, b, w)| b * w * w).sum();
    (2.0 * fric / cap, 2.0 / cap)
}

/// Closed-form common trajectory for `P_REF = A sin(w t)`:
/// `psi0' = -alpha psi0 - beta A sin(w t)`.
pub fn psi0_closed_form(t: f64, psi_init: f64, alpha: f64, beta: f64, amp: f64, w: f64) -> f64 {
    let d = alpha * alpha + w * w;
    let forced = -beta * amp * (alpha * (w * t).sin() - w * (w * t).cos()) / d;
    let forced0 = beta * amp * w / d;
    (-alpha * t).exp() * (psi_init - forced0) + forced
}
