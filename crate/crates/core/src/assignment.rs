//! Exact capacitated user-BS association.
//!
//! The sum-rate maximization over binary assignment variables (each user on
//! at most one BS, BS m serving at most d_m users) is a transportation
//! problem with a totally unimodular constraint matrix. It is solved here as
//! a min-cost max-flow on the bipartite graph source -> users -> BSs -> sink
//! with successive shortest-path augmentation, so integral optima come out
//! structurally. A brute-force enumerator doubles as the verification oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagation::NetworkConfig;
use crate::receiver::RateMatrix;

/// Binary user-BS assignment: each user is served by at most one BS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Association {
    /// serving[k] = Some(m) when user k is served by BS m.
    serving: Vec<Option<usize>>,
    n_bs: usize,
}

impl Association {
    pub fn new(serving: Vec<Option<usize>>, n_bs: usize) -> Result<Association> {
        if let Some(m) = serving.iter().flatten().find(|&&m| m >= n_bs) {
            return Err(Error::domain(format!("BS index {m} out of range")));
        }
        Ok(Association { serving, n_bs })
    }

    pub fn empty(n_users: usize, n_bs: usize) -> Association {
        Association { serving: vec![None; n_users], n_bs }
    }

    pub fn n_users(&self) -> usize {
        self.serving.len()
    }

    pub fn n_bs(&self) -> usize {
        self.n_bs
    }

    pub fn serving_bs(&self, k: usize) -> Option<usize> {
        self.serving[k]
    }

    pub fn serving(&self) -> &[Option<usize>] {
        &self.serving
    }

    /// rho[k][m] of the assignment matrix.
    pub fn rho(&self, k: usize, m: usize) -> bool {
        self.serving[k] == Some(m)
    }

    /// Users currently assigned to each BS.
    pub fn loads(&self) -> Vec<usize> {
        let mut loads = vec![0usize; self.n_bs];
        for m in self.serving.iter().flatten() {
            loads[*m] += 1;
        }
        loads
    }

    /// Row sums are at most 1 by construction; this checks the column
    /// (capacity) constraints.
    pub fn is_feasible(&self, capacities: &[usize]) -> bool {
        self.loads().iter().zip(capacities).all(|(l, d)| l <= d)
    }
}

/// Solver diagnostics for one association instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    /// Value of the selected-rate sum (bit/symbol, before prelog/bandwidth).
    pub objective: f64,
    /// True when every assignment variable is integral.
    pub integral: bool,
    /// Largest deviation of any assignment variable from {0, 1}.
    pub max_fractionality: f64,
    /// Number of augmenting paths (flow units) pushed.
    pub solver_iterations: usize,
}

struct FlowEdge {
    to: usize,
    residual: i64,
    cost: f64,
}

/// Min-cost max-flow by successive shortest paths; Bellman-Ford path search
/// keeps the float costs exact to evaluate and the behavior deterministic.
struct FlowNetwork {
    edges: Vec<FlowEdge>,
    adjacency: Vec<Vec<usize>>,
}

impl FlowNetwork {
    fn new(n_nodes: usize) -> FlowNetwork {
        FlowNetwork { edges: Vec::new(), adjacency: vec![Vec::new(); n_nodes] }
    }

    fn add_edge(&mut self, from: usize, to: usize, capacity: i64, cost: f64) -> usize {
        let id = self.edges.len();
        self.edges.push(FlowEdge { to, residual: capacity, cost });
        self.edges.push(FlowEdge { to: from, residual: 0, cost: -cost });
        self.adjacency[from].push(id);
        self.adjacency[to].push(id + 1);
        id
    }

    /// Shortest path by iterated relaxation (the graph carries negative arc
    /// costs). Returns per-node predecessor edges, or None when the sink is
    /// unreachable.
    fn shortest_path(&self, source: usize, sink: usize) -> Option<(Vec<usize>, f64)> {
        let n = self.adjacency.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut parent = vec![usize::MAX; n];
        let mut in_queue = vec![false; n];
        let mut queue = std::collections::VecDeque::new();
        dist[source] = 0.0;
        queue.push_back(source);
        in_queue[source] = true;
        while let Some(u) = queue.pop_front() {
            in_queue[u] = false;
            for &e in &self.adjacency[u] {
                let edge = &self.edges[e];
                if edge.residual > 0 {
                    let cand = dist[u] + edge.cost;
                    if cand < dist[edge.to] {
                        dist[edge.to] = cand;
                        parent[edge.to] = e;
                        if !in_queue[edge.to] {
                            queue.push_back(edge.to);
                            in_queue[edge.to] = true;
                        }
                    }
                }
            }
        }
        if parent[sink] == usize::MAX {
            None
        } else {
            Some((parent, dist[sink]))
        }
    }

    /// Pushes one unit along the predecessor path into the sink.
    fn augment_unit(&mut self, parent: &[usize], source: usize, sink: usize) {
        let mut node = sink;
        while node != source {
            let e = parent[node];
            self.edges[e].residual -= 1;
            self.edges[e ^ 1].residual += 1;
            node = self.edges[e ^ 1].to;
        }
    }
}

fn check_rates(r: &RateMatrix) -> Result<()> {
    for (k, row) in r.r.iter().enumerate() {
        for (m, &v) in row.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::domain(format!(
                    "rate r[{k}][{m}] = {v} must be finite and nonnegative"
                )));
            }
        }
    }
    Ok(())
}

/// Globally maximizes `sum_k sum_m rho[k][m] r[k][m]` subject to the
/// one-BS-per-user and capacity constraints.
///
/// When total capacity falls short of the user count the instance stays
/// solvable (users may remain unassigned); a warning is logged.
pub fn solve_association(
    r: &RateMatrix,
    capacities: &[usize],
) -> Result<(Association, SolveReport)> {
    check_rates(r)?;
    solve_association_unchecked(r, capacities)
}

/// Solver entry without the nonnegativity check, used by the self-test's
/// fault-injection hook to push a corrupted cost through the real flow path.
pub(crate) fn solve_association_unchecked(
    r: &RateMatrix,
    capacities: &[usize],
) -> Result<(Association, SolveReport)> {
    let k_users = r.n_users();
    let m_bs = r.n_bs();
    if capacities.len() != m_bs {
        return Err(Error::domain(format!(
            "expected {m_bs} capacities, got {}",
            capacities.len()
        )));
    }
    let total_capacity: usize = capacities.iter().sum();
    if total_capacity < k_users {
        log::warn!(
            "total capacity {total_capacity} below user count {k_users}; some users stay unassigned"
        );
    }

    // Node layout: source, users, BSs, sink.
    let source = 0;
    let user_node = |k: usize| 1 + k;
    let bs_node = |m: usize| 1 + k_users + m;
    let sink = 1 + k_users + m_bs;
    let mut net = FlowNetwork::new(sink + 1);
    for k in 0..k_users {
        net.add_edge(source, user_node(k), 1, 0.0);
    }
    let mut rate_edges = vec![vec![0usize; m_bs]; k_users];
    for (k, row) in rate_edges.iter_mut().enumerate() {
        for (m, slot) in row.iter_mut().enumerate() {
            *slot = net.add_edge(user_node(k), bs_node(m), 1, -r.r[k][m]);
        }
    }
    for (m, &d) in capacities.iter().enumerate() {
        net.add_edge(bs_node(m), sink, d as i64, 0.0);
    }

    let mut iterations = 0usize;
    while let Some((parent, path_cost)) = net.shortest_path(source, sink) {
        // Successive shortest paths see nondecreasing costs; with nonnegative
        // rates a positive-cost path would lower the objective, so stop there.
        if path_cost > 0.0 {
            break;
        }
        net.augment_unit(&parent, source, sink);
        iterations += 1;
    }

    let mut serving = vec![None; k_users];
    for (k, row) in rate_edges.iter().enumerate() {
        for (m, &e) in row.iter().enumerate() {
            if net.edges[e].residual == 0 {
                serving[k] = Some(m);
            }
        }
    }
    let assoc = Association { serving, n_bs: m_bs };
    let objective: f64 =
        assoc.serving.iter().enumerate().filter_map(|(k, m)| m.map(|m| r.r[k][m])).sum();

    // Unit augmentations keep every flow variable integral; report the
    // certificate rather than assuming it.
    let max_fractionality = rate_edges
        .iter()
        .flatten()
        .map(|&e| {
            let flow = 1 - net.edges[e].residual;
            (flow - flow.clamp(0, 1)).unsigned_abs() as f64
        })
        .fold(0.0, f64::max);

    Ok((
        assoc,
        SolveReport {
            objective,
            integral: max_fractionality <= 1e-6,
            max_fractionality,
            solver_iterations: iterations,
        },
    ))
}

/// Exhaustive maximizer over all capacity-feasible assignments. Users are
/// scanned in index order, per-user choices in BS order with "unassigned"
/// last, and only strict improvements replace the incumbent, so ties resolve
/// to the lowest (user, BS) indices.
pub fn brute_force_association(
    r: &RateMatrix,
    capacities: &[usize],
) -> Result<(Association, f64)> {
    check_rates(r)?;
    let k_users = r.n_users();
    let m_bs = r.n_bs();
    if capacities.len() != m_bs {
        return Err(Error::domain(format!(
            "expected {m_bs} capacities, got {}",
            capacities.len()
        )));
    }
    let combos = ((m_bs + 1) as f64).powi(k_users as i32);
    if combos > 1e7 {
        return Err(Error::size(format!(
            "{} assignments exceed the brute-force budget of 1e7",
            combos
        )));
    }

    struct Search<'a> {
        rates: &'a [Vec<f64>],
        residual: Vec<i64>,
        choice: Vec<Option<usize>>,
        best: Vec<Option<usize>>,
        best_value: f64,
    }

    fn recurse(s: &mut Search, k: usize, value: f64) {
        if k == s.choice.len() {
            if value > s.best_value {
                s.best_value = value;
                s.best.copy_from_slice(&s.choice);
            }
            return;
        }
        for m in 0..s.residual.len() {
            if s.residual[m] > 0 {
                s.residual[m] -= 1;
                s.choice[k] = Some(m);
                recurse(s, k + 1, value + s.rates[k][m]);
                s.residual[m] += 1;
            }
        }
        s.choice[k] = None;
        recurse(s, k + 1, value);
        s.choice[k] = None;
    }

    let mut search = Search {
        rates: &r.r,
        residual: capacities.iter().map(|&d| d as i64).collect(),
        choice: vec![None; k_users],
        best: vec![None; k_users],
        best_value: f64::NEG_INFINITY,
    };
    recurse(&mut search, 0, 0.0);

    let assoc = Association { serving: search.best, n_bs: m_bs };
    Ok((assoc, search.best_value.max(0.0)))
}

/// System sum-rate in bit/s: `B * (tau_u / tau_c) * sum of selected rates`.
pub fn sum_rate(assoc: &Association, r: &RateMatrix, cfg: &NetworkConfig) -> f64 {
    let selected: f64 =
        assoc.serving.iter().enumerate().filter_map(|(k, m)| m.map(|m| r.r[k][m])).sum();
    cfg.bandwidth_hz * (cfg.tau_u as f64 / cfg.tau_c as f64) * selected
}
