//! Radial feeder topology and the sensitivity pair (X, G = X⁻¹).
//!
//! `X` is the reduced bus reactance matrix restricted to the inverter
//! buses: for a radial network `X_ij` is the total line reactance shared by
//! the slack-to-`i` and slack-to-`j` paths. Its inverse `G` is sparse, with
//! off-diagonal support exactly on pairs of electrically neighboring
//! inverters, and that support is the communication graph of the agents.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{inverse_spd, symmetric_eigenvalues, Matrix};

pub type BusId = usize;

/// Entries of `G` below this fraction of `max|G|` are structural zeros.
pub const G_SPARSITY_THRESHOLD: f64 = 1e-9;

/// `X` is rejected as singular above this condition number.
pub const MAX_CONDITION_NUMBER: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("feeder has no buses")]
    Empty,
    #[error("bus ids must be dense from 0: found id {0} at position {1}")]
    NonDenseIds(BusId, usize),
    #[error("duplicate bus id {0}")]
    DuplicateBus(BusId),
    #[error("feeder has no slack bus")]
    NoSlack,
    #[error("feeder has more than one slack bus ({0} and {1})")]
    MultipleSlack(BusId, BusId),
    #[error("line {0} references unknown bus {1}")]
    UnknownBus(usize, BusId),
    #[error("line {0} has invalid impedance (R and X must be >= 0 and not both zero)")]
    InvalidImpedance(usize),
    #[error("line {0} closes a cycle")]
    Cycle(usize),
    #[error("bus {0} is not connected to the slack bus")]
    Disconnected(BusId),
    #[error("voltage limits must satisfy v_min < v_max")]
    InvalidVoltageLimits,
    #[error("feeder has no inverter buses")]
    NoInverters,
    #[error("reactance matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("reactance matrix is numerically singular (condition number {0:e})")]
    Singular(f64),
    #[error("matrix dimension {got} does not match {expected} inverters")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("explicit X and G disagree: max |G^-1 - X| = {0:e} ohm")]
    ExplicitMismatch(f64),
    #[error("no line between buses {0} and {1}")]
    NoSuchLine(BusId, BusId),
    #[error("inverter {0} is not on the radial path to inverter {1}")]
    NotOnPath(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Slack,
    Load,
    Inverter,
    Passive,
}

/// A bus with its nominal exogenous injection (generation positive).
#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: BusId,
    pub name: String,
    pub kind: BusKind,
    pub p_w: f64,
    pub q_var: f64,
}

impl Bus {
    pub fn new(id: BusId, name: impl Into<String>, kind: BusKind) -> Self {
        Self {
            id,
            name: name.into(),
            kind,
            p_w: 0.0,
            q_var: 0.0,
        }
    }

    pub fn with_injection(mut self, p_w: f64, q_var: f64) -> Self {
        self.p_w = p_w;
        self.q_var = q_var;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub from: BusId,
    pub to: BusId,
    pub r_ohm: f64,
    pub x_ohm: f64,
}

impl Line {
    pub fn new(from: BusId, to: BusId, r_ohm: f64, x_ohm: f64) -> Self {
        Self {
            from,
            to,
            r_ohm,
            x_ohm,
        }
    }
}

/// Orientation of the tree from the slack bus.
#[derive(Debug, Clone, PartialEq)]
struct Rooted {
    slack: BusId,
    /// `(parent bus, line index)` for every non-slack bus.
    parent: Vec<Option<(BusId, usize)>>,
    /// Breadth-first order starting at the slack bus.
    order: Vec<BusId>,
    depth: Vec<usize>,
}

/// A validated radial feeder.
#[derive(Debug, Clone, PartialEq)]
pub struct FeederModel {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    pub v_slack: f64,
    pub v_min: f64,
    pub v_max: f64,
    rooted: Rooted,
}

impl FeederModel {
    pub fn new(
        mut buses: Vec<Bus>,
        lines: Vec<Line>,
        v_slack: f64,
        v_min: f64,
        v_max: f64,
    ) -> Result<Self, GridError> {
        if buses.is_empty() {
            return Err(GridError::Empty);
        }
        if !(v_min < v_max) {
            return Err(GridError::InvalidVoltageLimits);
        }
        buses.sort_by_key(|b| b.id);
        for w in buses.windows(2) {
            if w[0].id == w[1].id {
                return Err(GridError::DuplicateBus(w[0].id));
            }
        }
        for (pos, b) in buses.iter().enumerate() {
            if b.id != pos {
                return Err(GridError::NonDenseIds(b.id, pos));
            }
        }
        let mut slack = None;
        for b in &buses {
            if b.kind == BusKind::Slack {
                if let Some(s) = slack {
                    return Err(GridError::MultipleSlack(s, b.id));
                }
                slack = Some(b.id);
            }
        }
        let slack = slack.ok_or(GridError::NoSlack)?;

        let n = buses.len();
        let mut uf: Vec<usize> = (0..n).collect();
        fn find(uf: &mut [usize], mut a: usize) -> usize {
            while uf[a] != a {
                uf[a] = uf[uf[a]];
                a = uf[a];
            }
            a
        }
        let mut adj: Vec<Vec<(BusId, usize)>> = vec![Vec::new(); n];
        for (k, l) in lines.iter().enumerate() {
            for b in [l.from, l.to] {
                if b >= n {
                    return Err(GridError::UnknownBus(k, b));
                }
            }
            let ok = l.r_ohm >= 0.0
                && l.x_ohm >= 0.0
                && l.r_ohm.is_finite()
                && l.x_ohm.is_finite()
                && (l.r_ohm > 0.0 || l.x_ohm > 0.0);
            if !ok || l.from == l.to {
                return Err(GridError::InvalidImpedance(k));
            }
            let (ra, rb) = (find(&mut uf, l.from), find(&mut uf, l.to));
            if ra == rb {
                return Err(GridError::Cycle(k));
            }
            uf[ra] = rb;
            adj[l.from].push((l.to, k));
            adj[l.to].push((l.from, k));
        }

        let mut parent = vec![None; n];
        let mut depth = vec![0; n];
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([slack]);
        seen[slack] = true;
        while let Some(b) = queue.pop_front() {
            order.push(b);
            for &(nb, k) in &adj[b] {
                if !seen[nb] {
                    seen[nb] = true;
                    parent[nb] = Some((b, k));
                    depth[nb] = depth[b] + 1;
                    queue.push_back(nb);
                }
            }
        }
        if let Some(b) = seen.iter().position(|s| !s) {
            return Err(GridError::Disconnected(b));
        }

        Ok(Self {
            buses,
            lines,
            v_slack,
            v_min,
            v_max,
            rooted: Rooted {
                slack,
                parent,
                order,
                depth,
            },
        })
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn slack(&self) -> BusId {
        self.rooted.slack
    }

    /// Parent bus and connecting line of a non-slack bus.
    pub fn parent(&self, bus: BusId) -> Option<(BusId, &Line)> {
        self.rooted.parent[bus].map(|(p, k)| (p, &self.lines[k]))
    }

    /// Buses in breadth-first order from the slack bus.
    pub fn bfs_order(&self) -> &[BusId] {
        &self.rooted.order
    }

    pub fn bus_by_name(&self, name: &str) -> Option<BusId> {
        self.buses.iter().find(|b| b.name == name).map(|b| b.id)
    }

    /// Inverter buses in ascending id order; this order indexes the agents.
    pub fn inverter_buses(&self) -> Vec<BusId> {
        self.buses
            .iter()
            .filter(|b| b.kind == BusKind::Inverter)
            .map(|b| b.id)
            .collect()
    }

    /// Sum of line reactances from the slack bus to every bus.
    fn path_reactance(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.buses.len()];
        for &b in &self.rooted.order {
            if let Some((p, line)) = self.parent(b) {
                x[b] = x[p] + line.x_ohm;
            }
        }
        x
    }

    fn lowest_common_ancestor(&self, mut a: BusId, mut b: BusId) -> BusId {
        let depth = &self.rooted.depth;
        while depth[a] > depth[b] {
            a = self.rooted.parent[a].unwrap().0;
        }
        while depth[b] > depth[a] {
            b = self.rooted.parent[b].unwrap().0;
        }
        while a != b {
            a = self.rooted.parent[a].unwrap().0;
            b = self.rooted.parent[b].unwrap().0;
        }
        a
    }

    /// Reduced reactance matrix over an arbitrary list of buses.
    pub fn reactance_matrix(&self, buses: &[BusId]) -> Matrix {
        let px = self.path_reactance();
        let n = buses.len();
        let mut x = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = px[self.lowest_common_ancestor(buses[i], buses[j])];
                x[(i, j)] = v;
                x[(j, i)] = v;
            }
        }
        x
    }

    /// Replaces the line between `a` and `b` with `segments` equal pieces,
    /// inserting `segments - 1` new buses of the given kind. New bus ids
    /// are appended in order from `a` to `b`.
    pub fn split_line(
        &self,
        a: BusId,
        b: BusId,
        segments: usize,
        kind: BusKind,
        name_prefix: &str,
    ) -> Result<(FeederModel, Vec<BusId>), GridError> {
        let k = self
            .lines
            .iter()
            .position(|l| (l.from == a && l.to == b) || (l.from == b && l.to == a))
            .ok_or(GridError::NoSuchLine(a, b))?;
        if segments <= 1 {
            return Ok((self.clone(), Vec::new()));
        }
        let line = self.lines[k];
        let (r, x) = (line.r_ohm / segments as f64, line.x_ohm / segments as f64);
        let mut buses = self.buses.clone();
        let mut lines: Vec<Line> = self
            .lines
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .map(|(_, l)| *l)
            .collect();
        let mut new_ids = Vec::with_capacity(segments - 1);
        let mut prev = a;
        for s in 1..segments {
            let id = buses.len();
            buses.push(Bus::new(id, alloc::format!("{name_prefix}{s}"), kind));
            lines.push(Line::new(prev, id, r, x));
            new_ids.push(id);
            prev = id;
        }
        lines.push(Line::new(prev, b, r, x));
        let f = FeederModel::new(buses, lines, self.v_slack, self.v_min, self.v_max)?;
        Ok((f, new_ids))
    }
}

/// Undirected communication graph over agent indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    adj: Vec<Vec<usize>>,
}

impl NeighborGraph {
    pub fn empty(n: usize) -> Self {
        Self {
            adj: vec![Vec::new(); n],
        }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut g = Self::empty(n);
        for &(a, b) in edges {
            g.add_edge(a, b);
        }
        g
    }

    pub fn add_edge(&mut self, a: usize, b: usize) {
        if a == b || self.adj[a].contains(&b) {
            return;
        }
        self.adj[a].push(b);
        self.adj[b].push(a);
        self.adj[a].sort_unstable();
        self.adj[b].sort_unstable();
    }

    /// Support of the off-diagonal entries of a symmetric matrix.
    pub fn from_sparsity(g: &Matrix) -> Self {
        let n = g.rows();
        let cut = G_SPARSITY_THRESHOLD * g.max_abs();
        let mut out = Self::empty(n);
        for i in 0..n {
            for j in (i + 1)..n {
                if g[(i, j)].abs() >= cut {
                    out.add_edge(i, j);
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    /// Neighbors of `i`, ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a].binary_search(&b).is_ok()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e = Vec::new();
        for (a, ns) in self.adj.iter().enumerate() {
            e.extend(ns.iter().filter(|&&b| b > a).map(|&b| (a, b)));
        }
        e
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }
}

/// The X matrix of the feeder's inverter buses.
pub fn compute_x_matrix(feeder: &FeederModel) -> Result<Matrix, GridError> {
    let inv = feeder.inverter_buses();
    if inv.is_empty() {
        return Err(GridError::NoInverters);
    }
    Ok(feeder.reactance_matrix(&inv))
}

/// `G = X⁻¹` for a symmetric positive definite `X`.
pub fn compute_g_matrix(x: &Matrix) -> Result<Matrix, GridError> {
    if !x.is_square() || x.rows() == 0 || x.asymmetry() > 1e-12 * x.max_abs() {
        return Err(GridError::NotPositiveDefinite);
    }
    let ev = symmetric_eigenvalues(x);
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    if !(lo > 0.0) {
        if lo.abs() <= hi / MAX_CONDITION_NUMBER {
            return Err(GridError::Singular(f64::INFINITY));
        }
        return Err(GridError::NotPositiveDefinite);
    }
    let cond = hi / lo;
    if cond > MAX_CONDITION_NUMBER {
        return Err(GridError::Singular(cond));
    }
    inverse_spd(x).ok_or(GridError::NotPositiveDefinite)
}

/// Two inverters are neighbors when the tree path between them crosses
/// neither a third inverter bus nor the slack bus.
pub fn neighbor_graph(feeder: &FeederModel) -> NeighborGraph {
    let inv = feeder.inverter_buses();
    let n_bus = feeder.bus_count();
    let mut index = vec![usize::MAX; n_bus];
    for (i, &b) in inv.iter().enumerate() {
        index[b] = i;
    }
    let mut adj: Vec<Vec<BusId>> = vec![Vec::new(); n_bus];
    for l in feeder.lines() {
        adj[l.from].push(l.to);
        adj[l.to].push(l.from);
    }
    let mut graph = NeighborGraph::empty(inv.len());
    let mut seen = vec![false; n_bus];
    for (i, &start) in inv.iter().enumerate() {
        seen.iter_mut().for_each(|s| *s = false);
        // the slack bus holds its voltage and decouples its branches
        seen[feeder.slack()] = true;
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(b) = stack.pop() {
            for &nb in &adj[b] {
                if seen[nb] {
                    continue;
                }
                seen[nb] = true;
                if index[nb] != usize::MAX {
                    graph.add_edge(i, index[nb]);
                } else {
                    stack.push(nb);
                }
            }
        }
    }
    graph
}

/// The controller's model knowledge: `X`, `G` and the neighbor graph over
/// the inverter agents.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityPair {
    pub inverter_buses: Vec<BusId>,
    pub x: Matrix,
    pub g: Matrix,
    pub neighbors: NeighborGraph,
}

impl SensitivityPair {
    pub fn from_feeder(feeder: &FeederModel) -> Result<Self, GridError> {
        let x = compute_x_matrix(feeder)?;
        let g = compute_g_matrix(&x)?;
        Ok(Self {
            inverter_buses: feeder.inverter_buses(),
            x,
            g,
            neighbors: neighbor_graph(feeder),
        })
    }

    /// Builds the pair from supplied matrices. When `G` is given it is
    /// authoritative and `X` is recomputed as its inverse; a supplied `X`
    /// must then agree entrywise within `x_tolerance` ohm.
    pub fn explicit(
        inverter_buses: Vec<BusId>,
        x: Option<Matrix>,
        g: Option<Matrix>,
        x_tolerance: f64,
    ) -> Result<Self, GridError> {
        let n = inverter_buses.len();
        if n == 0 {
            return Err(GridError::NoInverters);
        }
        for m in x.iter().chain(g.iter()) {
            if m.rows() != n || m.cols() != n {
                return Err(GridError::DimensionMismatch {
                    expected: n,
                    got: m.rows(),
                });
            }
        }
        let (x, g) = match (x, g) {
            (None, None) => return Err(GridError::NoInverters),
            (Some(x), None) => {
                let g = compute_g_matrix(&x)?;
                (x, g)
            }
            (given_x, Some(g)) => {
                let x = compute_g_matrix(&g)?;
                if let Some(gx) = given_x {
                    let worst = gx
                        .as_slice()
                        .iter()
                        .zip(x.as_slice())
                        .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
                    if worst > x_tolerance {
                        return Err(GridError::ExplicitMismatch(worst));
                    }
                }
                (x, g)
            }
        };
        let neighbors = NeighborGraph::from_sparsity(&g);
        Ok(Self {
            inverter_buses,
            x,
            g,
            neighbors,
        })
    }

    pub fn len(&self) -> usize {
        self.inverter_buses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inverter_buses.is_empty()
    }

    /// `G` entries for agent `i` and its neighbors, ascending by index.
    pub fn g_row(&self, i: usize) -> Vec<(usize, f64)> {
        let mut row: Vec<(usize, f64)> = self
            .neighbors
            .neighbors(i)
            .iter()
            .map(|&j| (j, self.g[(i, j)]))
            .collect();
        row.push((i, self.g[(i, i)]));
        row.sort_by_key(|e| e.0);
        row
    }

    /// Inserts `count` equally spaced agents on the electrical segment
    /// between neighboring agents `upstream` and `downstream`. The direct
    /// coupling `w = -G_ud` is replaced by a chain of `count + 1` segments
    /// of coupling `(count + 1) w`, whose Kron reduction is the original
    /// `G`. New agents are appended after the existing ones, ordered from
    /// `upstream` to `downstream`, so `X` restricted to the existing
    /// agents is unchanged.
    pub fn with_interpolated_agents(
        &self,
        upstream: usize,
        downstream: usize,
        count: usize,
        new_buses: &[BusId],
    ) -> Result<Self, GridError> {
        if count == 0 {
            return Ok(self.clone());
        }
        let n = self.len();
        if upstream >= n || downstream >= n || new_buses.len() != count {
            return Err(GridError::DimensionMismatch {
                expected: count,
                got: new_buses.len(),
            });
        }
        let w = -self.g[(upstream, downstream)];
        if !(w > 0.0) || !self.neighbors.has_edge(upstream, downstream) {
            return Err(GridError::NotOnPath(upstream, downstream));
        }
        let m = n + count;
        let seg = (count + 1) as f64 * w;
        let mut g = Matrix::zeros(m, m);
        for i in 0..n {
            for j in 0..n {
                g[(i, j)] = self.g[(i, j)];
            }
        }
        g[(upstream, downstream)] = 0.0;
        g[(downstream, upstream)] = 0.0;
        g[(upstream, upstream)] += seg - w;
        g[(downstream, downstream)] += seg - w;
        let chain: Vec<usize> = core::iter::once(upstream)
            .chain(n..m)
            .chain(core::iter::once(downstream))
            .collect();
        for pair in chain.windows(2) {
            g[(pair[0], pair[1])] = -seg;
            g[(pair[1], pair[0])] = -seg;
        }
        for d in n..m {
            g[(d, d)] = 2.0 * seg;
        }
        let x = compute_g_matrix(&g)?;
        let neighbors = NeighborGraph::from_sparsity(&g);
        let mut buses = self.inverter_buses.clone();
        buses.extend_from_slice(new_buses);
        Ok(Self {
            inverter_buses: buses,
            x,
            g,
            neighbors,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn chain(x1: f64, x2: f64) -> FeederModel {
        FeederModel::new(
            vec![
                Bus::new(0, "pcc", BusKind::Slack),
                Bus::new(1, "a", BusKind::Inverter),
                Bus::new(2, "b", BusKind::Inverter),
            ],
            vec![Line::new(0, 1, 0.1, x1), Line::new(1, 2, 0.1, x2)],
            1.0,
            0.95,
            1.05,
        )
        .unwrap()
    }

    #[test]
    fn single_bus_feeder_is_valid() {
        let f = FeederModel::new(vec![Bus::new(0, "pcc", BusKind::Slack)], vec![], 1.0, 0.95, 1.05)
            .unwrap();
        assert_eq!(f.bus_count(), 1);
        assert!(matches!(compute_x_matrix(&f), Err(GridError::NoInverters)));
    }

    #[test]
    fn cycle_is_rejected() {
        let err = FeederModel::new(
            vec![
                Bus::new(0, "pcc", BusKind::Slack),
                Bus::new(1, "a", BusKind::Load),
                Bus::new(2, "b", BusKind::Load),
            ],
            vec![
                Line::new(0, 1, 0.1, 0.1),
                Line::new(1, 2, 0.1, 0.1),
                Line::new(2, 0, 0.1, 0.1),
            ],
            1.0,
            0.95,
            1.05,
        )
        .unwrap_err();
        assert_eq!(err, GridError::Cycle(2));
    }

    #[test]
    fn structural_errors() {
        let slack = || Bus::new(0, "pcc", BusKind::Slack);
        assert_eq!(
            FeederModel::new(vec![Bus::new(0, "a", BusKind::Load)], vec![], 1.0, 0.9, 1.1)
                .unwrap_err(),
            GridError::NoSlack
        );
        assert_eq!(
            FeederModel::new(vec![slack(), slack()], vec![], 1.0, 0.9, 1.1).unwrap_err(),
            GridError::DuplicateBus(0)
        );
        assert_eq!(
            FeederModel::new(
                vec![slack(), Bus::new(1, "a", BusKind::Load)],
                vec![],
                1.0,
                0.9,
                1.1
            )
            .unwrap_err(),
            GridError::Disconnected(1)
        );
        assert_eq!(
            FeederModel::new(
                vec![slack(), Bus::new(1, "a", BusKind::Load)],
                vec![Line::new(0, 1, 0.0, 0.0)],
                1.0,
                0.9,
                1.1
            )
            .unwrap_err(),
            GridError::InvalidImpedance(0)
        );
        assert_eq!(
            FeederModel::new(vec![slack()], vec![], 1.0, 1.1, 0.9).unwrap_err(),
            GridError::InvalidVoltageLimits
        );
    }

    #[test]
    fn single_inverter_x_is_line_reactance() {
        let f = FeederModel::new(
            vec![Bus::new(0, "pcc", BusKind::Slack), Bus::new(1, "a", BusKind::Inverter)],
            vec![Line::new(0, 1, 0.2, 0.037)],
            1.0,
            0.95,
            1.05,
        )
        .unwrap();
        let x = compute_x_matrix(&f).unwrap();
        assert_eq!(x, Matrix::from_rows(&[[0.037]]));
        let g = compute_g_matrix(&x).unwrap();
        assert_relative_eq!(g[(0, 0)], 1.0 / 0.037, max_relative = 1e-12);
        assert_eq!(neighbor_graph(&f).edge_count(), 0);
    }

    #[test]
    fn chain_x_matches_common_path() {
        let x = compute_x_matrix(&chain(0.3, 0.5)).unwrap();
        assert_eq!(x, Matrix::from_rows(&[[0.3, 0.3], [0.3, 0.8]]));
    }

    #[test]
    fn singular_x_is_rejected() {
        let x = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]);
        assert!(matches!(compute_g_matrix(&x), Err(GridError::Singular(_))));
    }

    #[test]
    fn split_line_keeps_path_reactance() {
        let f = chain(0.3, 0.5);
        let (g, ids) = f.split_line(1, 2, 4, BusKind::Passive, "d").unwrap();
        assert_eq!(ids, vec![3, 4, 5]);
        let x = g.reactance_matrix(&[1, 2, 4]);
        assert_relative_eq!(x[(1, 1)], 0.8, epsilon = 1e-15);
        assert_relative_eq!(x[(2, 2)], 0.55, epsilon = 1e-15);
    }
}
