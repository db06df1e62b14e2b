mod common;

use common::{bundled, scenario_path, REFERENCE_FLEET};
use fesms::scenario::{load_scenario, parse_scenario, ScenarioError};
use fesms::sim::run;
use fesms::{FesmsScenario, FesmsScenario32};

fn section5_text() -> String {
    std::fs::read_to_string(scenario_path("section5")).unwrap()
}

fn parse(text: &str) -> Result<FesmsScenario, ScenarioError> {
    parse_scenario(text)
}

fn field_path(err: ScenarioError) -> String {
    match err {
        ScenarioError::Field { path, .. } => path,
        other => panic!("expected a field error, got {other}"),
    }
}

#[test]
fn bundled_scenario_matches_reference_setup() {
    let sc = load_scenario::<f64>(scenario_path("section5")).unwrap();
    assert_eq!(sc.n_agents(), 4);
    for (p, &(i, b, w)) in sc.fleet.iter().zip(&REFERENCE_FLEET) {
        assert_eq!((p.inertia(), p.friction(), p.omega_max()), (i, b, w));
    }
    assert_eq!(sc.psi0_init, 0.88);
    assert_eq!(sc.initial.phi, vec![0.85, 0.9, 0.88, 0.87]);
    for (o, &phi) in sc.initial.observers.iter().zip(&sc.initial.phi) {
        assert_eq!(o.psi, phi);
        assert!(o.s.as_slice().iter().chain(&o.c).chain(&o.eta).all(|&v| v == 0.0));
        assert_eq!((o.alpha, o.beta), (0.0, 0.0));
    }
    assert_eq!(sc.gains.max_gain(), 100.0);
    assert_eq!(sc.gains.kappa, 1.0);
    assert_eq!(sc.generator.eta0_init(), &[0.0, 2.0e4]);
    assert_eq!(sc.network.graphs().len(), 4);
    assert_eq!(sc.network.period(), 4.0);
    assert_eq!(sc.connectivity.epsilon, Some(5.0));
}

#[test]
fn canonical_dump_round_trips() {
    for name in ["section5", "section5_200kw", "isolated_agent3", "static_chain"] {
        let sc = bundled(name);
        let again = parse(&sc.to_canonical_toml()).unwrap();
        assert_eq!(again, sc, "{name}");
        assert_eq!(again.to_canonical_toml(), sc.to_canonical_toml());
    }
    let exact = bundled("section5").with_exact_observers();
    assert_eq!(parse(&exact.to_canonical_toml()).unwrap(), exact);
}

#[test]
fn kilowatt_reference_is_converted_to_watts() {
    let kw = bundled("section5_200kw");
    assert_eq!(kw.generator.c0(), &[1e3, 0.0]);
    let w = parse(&section5_text().replace("eta0_init = [0.0, 2.0e4]", "eta0_init = [0.0, 2.0e5]")).unwrap();
    let eta = kw.generator.eta0_init();
    assert_eq!(
        kw.generator.p_ref(&[eta[1], 0.0]),
        w.generator.p_ref(&[w.generator.eta0_init()[1], 0.0])
    );

    let mut a = kw.clone();
    let mut b = w.clone();
    for s in [&mut a, &mut b] {
        s.sim.t_end = 5.0;
    }
    let (ta, tb) = (run(&a).unwrap(), run(&b).unwrap());
    for (x, y) in ta.p_ref.iter().zip(&tb.p_ref) {
        assert!((x - y).abs() <= 1e-9 * y.abs().max(1.0));
    }
}

#[test]
fn node_count_mismatch_is_reported() {
    let text = section5_text().replace("nodes = 5", "nodes = 6");
    match parse(&text) {
        Err(ScenarioError::NodeCountMismatch { fleet, nodes, expected }) => {
            assert_eq!((fleet, nodes, expected), (4, 6, 5))
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn negative_inertia_names_the_field() {
    let text = section5_text().replacen("inertia_kgm2 = 0.9", "inertia_kgm2 = -0.9", 1);
    assert_eq!(field_path(parse(&text).unwrap_err()), "fleet[1].inertia_kgm2");
}

#[test]
fn field_level_errors() {
    let cases = [
        ("phi = [0.85, 0.9, 0.88, 0.87]", "phi = [0.85, 0.9]", "initial.phi"),
        ("kappa = 1", "kappa = -1", "gains.kappa"),
        ("dt = 1.0e-3", "dt = 3.0e-3", "sim.t_end"),
        ("t_end = 400", "t_end = -1", "sim.t_end"),
        ("record_every = 100", "record_every = 0", "sim.record_every"),
        ("[\"G4\", 1.0]]", "[\"G9\", 1.0]]", "network.segments[3]"),
        (
            "edges = [[3, 4, 1.0]]",
            "edges = [[3, 0, 1.0]]",
            "network.graphs[3] (G4)",
        ),
        (
            "edges = [[3, 4, 1.0]]",
            "edges = [[3, 3, 1.0]]",
            "network.graphs[3] (G4)",
        ),
        ("C0 = [1.0, 0.0]", "C0 = [1.0]", "generator"),
    ];
    for (from, to, path) in cases {
        let text = section5_text().replacen(from, to, 1);
        assert_ne!(text, section5_text(), "pattern {from} not found");
        assert_eq!(field_path(parse(&text).unwrap_err()), path, "{to}");
    }
}

#[test]
fn parse_errors_carry_line_information() {
    let text = section5_text().replacen("psi0_init = 0.88", "psi0_init = = 0.88", 1);
    let msg = parse(&text).unwrap_err().to_string();
    assert!(msg.contains("line"), "{msg}");
    let unknown = section5_text().replacen("kappa = 1", "kappa = 1\ngain_typo = 3", 1);
    assert!(matches!(parse(&unknown), Err(ScenarioError::Parse(m)) if m.contains("gain_typo")));
}

#[test]
fn step_guidance_is_checked_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("coarse.scenario");
    std::fs::write(&path, section5_text().replace("dt = 1.0e-3", "dt = 4.0e-3")).unwrap();
    assert_eq!(field_path(load_scenario::<f64>(&path).unwrap_err()), "sim.dt");
    assert!(parse(&section5_text().replace("dt = 1.0e-3", "dt = 4.0e-3")).is_ok());
    assert!(matches!(
        load_scenario::<f64>(dir.path().join("missing")),
        Err(ScenarioError::Io { .. })
    ));
}

#[test]
fn gains_can_be_set_individually() {
    let text = section5_text().replace("mu = 100", "mu = 100\nmu_psi = 50\nmu_S = 20");
    let sc = parse(&text).unwrap();
    assert_eq!((sc.gains.mu_s, sc.gains.mu_psi, sc.gains.mu_eta), (20.0, 50.0, 100.0));
    let missing = section5_text().replace("mu = 100", "mu_S = 1");
    assert_eq!(field_path(parse(&missing).unwrap_err()), "gains.mu_C");
}

#[test]
fn truth_observers_start_on_the_leader() {
    let sc = parse(&section5_text().replace("observers = \"zero\"", "observers = \"truth\"")).unwrap();
    assert_eq!(sc, bundled("section5").with_exact_observers());
}

#[test]
fn single_precision_scenario_loads() {
    let sc: FesmsScenario32 = load_scenario(scenario_path("section5")).unwrap();
    assert_eq!(sc.fleet[3].omega_max(), 1200.0f32);
    assert_eq!(sc.sim.n_steps().unwrap(), 400_000);
}
