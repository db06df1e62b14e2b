use proptest::prelude::*;

use fesms::graph::{union, Segment, SwitchingSchedule};
use fesms::Digraph;

/// Edges with dyadic weights, so sums are exact.
fn edges(n: usize) -> impl Strategy<Value = Vec<(usize, usize, f64)>> {
    prop::collection::vec((0..n, 1..n, 1u32..8), 0..3 * n).prop_map(|raw| {
        raw.into_iter()
            .filter(|(a, b, _)| a != b)
            .map(|(a, b, w)| (a, b, f64::from(w) / 4.0))
            .collect()
    })
}

fn graph(n: usize) -> impl Strategy<Value = Digraph> {
    edges(n).prop_map(move |e| Digraph::from_edges(n, &e).unwrap())
}

fn graphs() -> impl Strategy<Value = (usize, Vec<Digraph>)> {
    (2usize..8).prop_flat_map(|n| (Just(n), prop::collection::vec(graph(n), 1..6)))
}

proptest! {
    #[test]
    fn laplacian_rows_sum_to_zero(g in (2usize..9).prop_flat_map(graph)) {
        let l = g.laplacian(false);
        for i in 0..g.n_nodes() {
            prop_assert_eq!(l.row(i).iter().sum::<f64>(), 0.0);
        }
    }

    #[test]
    fn h_matrix_is_follower_laplacian_plus_leader_weights(g in (2usize..9).prop_flat_map(graph)) {
        let h = g.h_matrix();
        let lf = g.laplacian(true);
        let n = g.n_followers();
        for i in 0..n {
            for j in 0..n {
                let extra = if i == j { g.weight(i + 1, 0) } else { 0.0 };
                prop_assert_eq!(h[(i, j)], lf[(i, j)] + extra);
            }
        }
    }

    #[test]
    fn union_is_monotone((_, gs) in graphs()) {
        let all = union(&gs).unwrap();
        let reach = all.reachable_from_zero();
        for g in &gs {
            prop_assert!(g.edge_set().is_subset(&all.edge_set()));
            prop_assert!(g.reachable_from_zero().is_subset(&reach));
        }
        // Union weights add up.
        for i in 0..all.n_nodes() {
            for j in 0..all.n_nodes() {
                prop_assert_eq!(all.weight(i, j), gs.iter().map(|g| g.weight(i, j)).sum::<f64>());
            }
        }
    }

    #[test]
    fn reachability_is_closed_under_edges(g in (2usize..9).prop_flat_map(graph)) {
        let reach = g.reachable_from_zero();
        prop_assert!(!reach.contains(&0));
        for (from, to, _) in g.edges() {
            if from == 0 || reach.contains(&from) {
                prop_assert!(reach.contains(&to));
            }
        }
    }

    #[test]
    fn adding_edges_never_breaks_joint_connectivity(
        (n, gs) in graphs(),
        extra in (0usize..64, 0usize..64),
        eps in 1.5f64..8.0,
    ) {
        let segs: Vec<Segment<f64>> = (0..gs.len()).map(|g| Segment { graph: g, duration: 1.0 }).collect();
        let base = SwitchingSchedule::new(gs.clone(), segs.clone(), 1.0, true).unwrap();
        let before = base.verify_jointly_connected(eps).unwrap();

        let mut richer = gs.clone();
        let (from, to) = (extra.0 % n, 1 + extra.1 % (n - 1));
        if from != to {
            let k = extra.0 % richer.len();
            let mut e = richer[k].edges();
            e.push((from, to, 1.0));
            richer[k] = Digraph::from_edges(n, &e).unwrap();
        }
        let after = SwitchingSchedule::new(richer, segs, 1.0, true).unwrap().verify_jointly_connected(eps).unwrap();
        prop_assert!(!before.holds() || after.holds());
    }

    #[test]
    fn passing_windows_reach_every_follower((n, gs) in graphs(), eps in 1.5f64..8.0) {
        let segs: Vec<Segment<f64>> = (0..gs.len()).map(|g| Segment { graph: g, duration: 1.0 }).collect();
        let sched = SwitchingSchedule::new(gs.clone(), segs, 1.0, true).unwrap();
        let report = sched.verify_jointly_connected(eps).unwrap();
        for w in &report.windows {
            prop_assert!(w.duration < eps);
            let members: Vec<Digraph> = w.graphs.iter().map(|&g| gs[g].clone()).collect();
            let u = union(&members).unwrap();
            prop_assert_eq!(u.reachable_from_zero().len(), n - 1);
            prop_assert!(w.unreachable.is_empty());
        }
        if let Some((w, _)) = &report.failure {
            prop_assert!(!w.unreachable.is_empty());
        }
    }

    #[test]
    fn graph_at_is_periodic((_, gs) in graphs(), t in 0.0f64..50.0) {
        let segs: Vec<Segment<f64>> = (0..gs.len()).map(|g| Segment { graph: g, duration: 1.0 }).collect();
        let sched = SwitchingSchedule::new(gs, segs, 1.0, true).unwrap();
        let p = sched.period();
        prop_assert_eq!(sched.segment_at(t).unwrap(), sched.segment_at(t + p).unwrap());
    }
}

#[test]
fn finite_schedule_that_ends_disconnected_fails() {
    let g1 = Digraph::from_edges(3, &[(0, 1, 1.0)]).unwrap();
    let g2 = Digraph::from_edges(3, &[(1, 2, 1.0)]).unwrap();
    let segs = vec![
        Segment {
            graph: 0,
            duration: 1.0,
        },
        Segment {
            graph: 1,
            duration: 1.0,
        },
        Segment {
            graph: 0,
            duration: 1.0,
        },
    ];
    let sched = SwitchingSchedule::new(vec![g1, g2], segs, 1.0, false).unwrap();
    let report = sched.verify_jointly_connected(5.0).unwrap();
    assert!(!report.holds());
    assert_eq!(report.windows.len(), 1);
}
