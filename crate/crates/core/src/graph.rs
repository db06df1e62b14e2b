//! Weighted switching digraphs over the follower set plus the leader node 0.
//!
//! `weights[(i, j)]` is the weight `a_ij` with which node `i` receives from
//! node `j`. Node 0 is the command generator: it never receives, so row 0 is
//! identically zero.

use std::collections::{BTreeSet, HashSet, VecDeque};

use thiserror::Error;

use crate::linalg::Matrix;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("graph must contain node 0 and at least one follower (got {0} nodes)")]
    TooFewNodes(usize),
    #[error("edge {from} -> {to} references a node outside 0..{n_nodes}")]
    NodeOutOfRange { from: usize, to: usize, n_nodes: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("edge {from} -> 0 points into the leader node")]
    EdgeIntoLeader { from: usize },
    #[error("edge {from} -> {to} has negative or non-finite weight {weight}")]
    BadWeight { from: usize, to: usize, weight: f64 },
    #[error("weight matrix must be square")]
    NotSquare,
    #[error("node count mismatch: expected {expected}, found {found}")]
    NodeCountMismatch { expected: usize, found: usize },
    #[error("schedule needs at least one graph and one segment")]
    EmptySchedule,
    #[error("dwell time must be positive and finite (got {0})")]
    BadDwellTime(f64),
    #[error("segment {index} lasts {duration} s, shorter than the dwell time {dwell} s")]
    SegmentTooShort { index: usize, duration: f64, dwell: f64 },
    #[error("segment {segment} references graph {graph}, but only {n_graphs} graphs exist")]
    BadGraphIndex {
        segment: usize,
        graph: usize,
        n_graphs: usize,
    },
    #[error("epsilon must be positive (got {0})")]
    BadEpsilon(f64),
    #[error("time {t} is outside the schedule [0, {end})")]
    TimeOutOfRange { t: f64, end: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDigraph<T> {
    weights: Matrix<T>,
}

impl<T: Scalar> WeightedDigraph<T> {
    /// Graph with `n_nodes` nodes (leader included) and no edges.
    pub fn edgeless(n_nodes: usize) -> Result<Self, GraphError> {
        if n_nodes < 2 {
            return Err(GraphError::TooFewNodes(n_nodes));
        }
        Ok(Self {
            weights: Matrix::zeros(n_nodes, n_nodes),
        })
    }

    /// Builds a graph from `(from, to, weight)` triples. Repeated edges add up.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize, T)]) -> Result<Self, GraphError> {
        let mut g = Self::edgeless(n_nodes)?;
        for &(from, to, w) in edges {
            if from >= n_nodes || to >= n_nodes {
                return Err(GraphError::NodeOutOfRange { from, to, n_nodes });
            }
            if from == to {
                return Err(GraphError::SelfLoop(from));
            }
            if to == 0 {
                return Err(GraphError::EdgeIntoLeader { from });
            }
            if !(w.is_finite() && w >= T::zero()) {
                return Err(GraphError::BadWeight {
                    from,
                    to,
                    weight: w.as_f64(),
                });
            }
            g.weights[(to, from)] = g.weights[(to, from)] + w;
        }
        Ok(g)
    }

    /// Wraps a full `(N+1) x (N+1)` adjacency matrix after validating it.
    pub fn from_matrix(weights: Matrix<T>) -> Result<Self, GraphError> {
        if !weights.is_square() {
            return Err(GraphError::NotSquare);
        }
        let n = weights.rows();
        if n < 2 {
            return Err(GraphError::TooFewNodes(n));
        }
        for i in 0..n {
            for j in 0..n {
                let w = weights[(i, j)];
                if !(w.is_finite() && w >= T::zero()) {
                    return Err(GraphError::BadWeight {
                        from: j,
                        to: i,
                        weight: w.as_f64(),
                    });
                }
                if w > T::zero() && i == j {
                    return Err(GraphError::SelfLoop(i));
                }
                if w > T::zero() && i == 0 {
                    return Err(GraphError::EdgeIntoLeader { from: j });
                }
            }
        }
        Ok(Self { weights })
    }

    pub fn n_nodes(&self) -> usize {
        self.weights.rows()
    }

    pub fn n_followers(&self) -> usize {
        self.n_nodes() - 1
    }

    /// `a_ij`: weight with which `i` receives from `j`.
    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> T {
        self.weights[(i, j)]
    }

    /// Row `i` of the adjacency matrix, `a_i0` first.
    #[inline]
    pub fn in_weights(&self, i: usize) -> &[T] {
        self.weights.row(i)
    }

    pub fn adjacency(&self) -> &Matrix<T> {
        &self.weights
    }

    /// Edges as `(from, to, weight)` in row-major order of the receiver.
    pub fn edges(&self) -> Vec<(usize, usize, T)> {
        let n = self.n_nodes();
        let mut out = Vec::new();
        for to in 0..n {
            for from in 0..n {
                let w = self.weights[(to, from)];
                if w > T::zero() {
                    out.push((from, to, w));
                }
            }
        }
        out
    }

    pub fn edge_set(&self) -> BTreeSet<(usize, usize)> {
        self.edges().into_iter().map(|(f, t, _)| (f, t)).collect()
    }

    /// Graph Laplacian. With `restrict_to_followers` the leader is dropped and
    /// the result is the `N x N` Laplacian of the follower subgraph; otherwise
    /// the full `(N+1) x (N+1)` Laplacian is returned.
    pub fn laplacian(&self, restrict_to_followers: bool) -> Matrix<T> {
        let first = usize::from(restrict_to_followers);
        let n = self.n_nodes() - first;
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            let mut degree = T::zero();
            for j in 0..n {
                if i != j {
                    let a = self.weights[(i + first, j + first)];
                    l[(i, j)] = -a;
                    degree = degree + a;
                }
            }
            l[(i, i)] = degree;
        }
        l
    }

    /// Follower Laplacian plus the diagonal of leader-edge weights `a_i0`.
    pub fn h_matrix(&self) -> Matrix<T> {
        let pinning: Vec<T> = (1..self.n_nodes()).map(|i| self.weights[(i, 0)]).collect();
        self.laplacian(true).add(&Matrix::diag(&pinning))
    }

    /// Followers reachable from node 0 along directed paths (breadth-first).
    pub fn reachable_from_zero(&self) -> BTreeSet<usize> {
        let n = self.n_nodes();
        let mut seen = vec![false; n];
        seen[0] = true;
        let mut queue = VecDeque::from([0usize]);
        while let Some(j) = queue.pop_front() {
            for (i, seen_i) in seen.iter_mut().enumerate().skip(1) {
                if !*seen_i && self.weights[(i, j)] > T::zero() {
                    *seen_i = true;
                    queue.push_back(i);
                }
            }
        }
        (1..n).filter(|&i| seen[i]).collect()
    }

    pub fn all_followers_reachable(&self) -> bool {
        self.reachable_from_zero().len() == self.n_followers()
    }
}

/// Union of graphs over the same node set; weights of shared edges are summed.
pub fn union<T: Scalar>(graphs: &[WeightedDigraph<T>]) -> Result<WeightedDigraph<T>, GraphError> {
    let first = graphs.first().ok_or(GraphError::EmptySchedule)?;
    let n = first.n_nodes();
    let mut acc = WeightedDigraph::edgeless(n)?;
    for g in graphs {
        acc.absorb(g)?;
    }
    Ok(acc)
}

impl<T: Scalar> WeightedDigraph<T> {
    fn absorb(&mut self, other: &Self) -> Result<(), GraphError> {
        if other.n_nodes() != self.n_nodes() {
            return Err(GraphError::NodeCountMismatch {
                expected: self.n_nodes(),
                found: other.n_nodes(),
            });
        }
        for (a, &b) in self.weights.as_mut_slice().iter_mut().zip(other.weights.as_slice()) {
            *a = *a + b;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment<T> {
    pub graph: usize,
    pub duration: T,
}

/// Piecewise-constant switching signal over a fixed list of graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingSchedule<T> {
    graphs: Vec<WeightedDigraph<T>>,
    segments: Vec<Segment<T>>,
    dwell_time: T,
    cyclic: bool,
}

impl<T: Scalar> SwitchingSchedule<T> {
    pub fn new(
        graphs: Vec<WeightedDigraph<T>>,
        segments: Vec<Segment<T>>,
        dwell_time: T,
        cyclic: bool,
    ) -> Result<Self, GraphError> {
        if graphs.is_empty() || segments.is_empty() {
            return Err(GraphError::EmptySchedule);
        }
        if !(dwell_time > T::zero() && dwell_time.is_finite()) {
            return Err(GraphError::BadDwellTime(dwell_time.as_f64()));
        }
        let n = graphs[0].n_nodes();
        if let Some(g) = graphs.iter().find(|g| g.n_nodes() != n) {
            return Err(GraphError::NodeCountMismatch {
                expected: n,
                found: g.n_nodes(),
            });
        }
        for (index, s) in segments.iter().enumerate() {
            if s.graph >= graphs.len() {
                return Err(GraphError::BadGraphIndex {
                    segment: index,
                    graph: s.graph,
                    n_graphs: graphs.len(),
                });
            }
            if !(s.duration >= dwell_time && s.duration.is_finite()) {
                return Err(GraphError::SegmentTooShort {
                    index,
                    duration: s.duration.as_f64(),
                    dwell: dwell_time.as_f64(),
                });
            }
        }
        Ok(Self {
            graphs,
            segments,
            dwell_time,
            cyclic,
        })
    }

    /// A single graph held forever.
    pub fn constant(graph: WeightedDigraph<T>, dwell_time: T) -> Result<Self, GraphError> {
        Self::new(
            vec![graph],
            vec![Segment {
                graph: 0,
                duration: dwell_time,
            }],
            dwell_time,
            true,
        )
    }

    pub fn graphs(&self) -> &[WeightedDigraph<T>] {
        &self.graphs
    }

    pub fn segments(&self) -> &[Segment<T>] {
        &self.segments
    }

    pub fn dwell_time(&self) -> T {
        self.dwell_time
    }

    pub fn is_cyclic(&self) -> bool {
        self.cyclic
    }

    pub fn n_nodes(&self) -> usize {
        self.graphs[0].n_nodes()
    }

    /// Total duration of one pass through the segment list.
    pub fn period(&self) -> T {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Index into `segments()` active at `t` (right-continuous).
    pub fn segment_at(&self, t: T) -> Result<usize, GraphError> {
        let period = self.period();
        if !(t >= T::zero()) || (!self.cyclic && t >= period) {
            return Err(GraphError::TimeOutOfRange {
                t: t.as_f64(),
                end: period.as_f64(),
            });
        }
        let local = if self.cyclic { t % period } else { t };
        let mut start = T::zero();
        for (k, s) in self.segments.iter().enumerate() {
            let end = start + s.duration;
            if local < end {
                return Ok(k);
            }
            start = end;
        }
        // `local` can only reach here through rounding of the running sum.
        Ok(self.segments.len() - 1)
    }

    /// The graph driving the network at time `t`.
    pub fn graph_at(&self, t: T) -> Result<&WeightedDigraph<T>, GraphError> {
        let k = self.segment_at(t)?;
        Ok(&self.graphs[self.segments[k].graph])
    }

    /// Greedy check of joint connectivity: consecutive windows, each shorter
    /// than `epsilon`, whose union graph reaches every follower from node 0.
    pub fn verify_jointly_connected(&self, epsilon: T) -> Result<ConnectivityReport, GraphError> {
        if !(epsilon > T::zero()) {
            return Err(GraphError::BadEpsilon(epsilon.as_f64()));
        }
        let m = self.segments.len();
        let n = self.n_nodes();
        let followers: BTreeSet<usize> = (1..n).collect();
        let mut windows = Vec::new();
        let mut seen_starts = HashSet::new();
        let mut start = 0usize;
        let mut t_start = T::zero();

        loop {
            if self.cyclic {
                if !seen_starts.insert(start % m) {
                    break;
                }
            } else if start >= m {
                break;
            }
            let mut acc = WeightedDigraph::edgeless(n)?;
            let mut duration = T::zero();
            let mut k = start;
            let mut used = Vec::new();
            let failure = loop {
                if !self.cyclic && k >= m {
                    break Some(FailureCause::ScheduleEnded);
                }
                let seg = self.segments[k % m];
                if duration + seg.duration >= epsilon {
                    used.push(k % m);
                    duration = duration + seg.duration;
                    break Some(FailureCause::WindowTooLong);
                }
                acc.absorb(&self.graphs[seg.graph])?;
                duration = duration + seg.duration;
                used.push(k % m);
                k += 1;
                if acc.all_followers_reachable() {
                    break None;
                }
            };
            let reachable = acc.reachable_from_zero();
            let window = WindowReport {
                start: t_start.as_f64(),
                duration: duration.as_f64(),
                segments: used.clone(),
                graphs: used.iter().map(|&s| self.segments[s].graph).collect(),
                unreachable: followers.difference(&reachable).copied().collect(),
                reachable,
            };
            if let Some(cause) = failure {
                return Ok(ConnectivityReport {
                    epsilon: epsilon.as_f64(),
                    windows,
                    failure: Some((window, cause)),
                });
            }
            windows.push(window);
            t_start = t_start + duration;
            start = k;
        }
        Ok(ConnectivityReport {
            epsilon: epsilon.as_f64(),
            windows,
            failure: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureCause {
    /// Adding the next segment would make the window last `epsilon` or longer.
    WindowTooLong,
    /// A finite schedule ran out before the window's union became connected.
    ScheduleEnded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowReport {
    pub start: f64,
    pub duration: f64,
    /// Segment indices (modulo the segment list length) covered by the window.
    pub segments: Vec<usize>,
    pub graphs: Vec<usize>,
    pub reachable: BTreeSet<usize>,
    pub unreachable: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityReport {
    pub epsilon: f64,
    /// Windows that passed, in time order.
    pub windows: Vec<WindowReport>,
    pub failure: Option<(WindowReport, FailureCause)>,
}

impl ConnectivityReport {
    pub fn holds(&self) -> bool {
        self.failure.is_none()
    }
}
