//! Delay-labeled network graphs, the min-plus delay matrix, and relay expansion.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Add;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::blockmat::{BlockMatrix, BlockPartition};
use crate::error::{Error, Result};
use crate::problem::{LqProblem, Stage};

/// A directed link `from -> to` whose information arrives `delay` steps later.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: u32,
    pub to: u32,
    pub delay: u32,
}

/// Shortest aggregate delay; `Infinite` when no directed path exists.
///
/// The derived order puts every finite delay below `Infinite`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Delay {
    Finite(u32),
    Infinite,
}

impl Delay {
    pub const ZERO: Delay = Delay::Finite(0);

    pub fn finite(self) -> Option<u32> {
        match self {
            Delay::Finite(d) => Some(d),
            Delay::Infinite => None,
        }
    }

    /// `self <= k`.
    pub fn within(self, k: u32) -> bool {
        matches!(self, Delay::Finite(d) if d <= k)
    }
}

impl Add for Delay {
    type Output = Delay;

    fn add(self, rhs: Delay) -> Delay {
        match (self, rhs) {
            (Delay::Finite(a), Delay::Finite(b)) => Delay::Finite(a.saturating_add(b)),
            _ => Delay::Infinite,
        }
    }
}

impl fmt::Display for Delay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Delay::Finite(d) => write!(f, "{d}"),
            Delay::Infinite => f.write_str("inf"),
        }
    }
}

/// Structural problems found by [`NetworkGraph::validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GraphViolation {
    Empty,
    DuplicateNode(u32),
    UnknownNode(u32),
    SelfEdge(u32),
    DuplicateEdge { from: u32, to: u32 },
    /// Node ids along a directed cycle whose delays sum to zero.
    ZeroDelayCycle(Vec<u32>),
}

impl fmt::Display for GraphViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphViolation::Empty => f.write_str("graph has no nodes"),
            GraphViolation::DuplicateNode(n) => write!(f, "node {n} listed twice"),
            GraphViolation::UnknownNode(n) => write!(f, "edge references unknown node {n}"),
            GraphViolation::SelfEdge(n) => write!(f, "self-edge on node {n}"),
            GraphViolation::DuplicateEdge { from, to } => {
                write!(f, "more than one edge {from}->{to}")
            }
            GraphViolation::ZeroDelayCycle(c) => write!(f, "zero-delay cycle {c:?}"),
        }
    }
}

impl From<GraphViolation> for Error {
    fn from(v: GraphViolation) -> Self {
        Error::InvalidGraph(v.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkGraph {
    nodes: Vec<u32>,
    edges: Vec<Edge>,
}

impl NetworkGraph {
    /// Node ids are sorted; positions in the sorted list index every matrix.
    pub fn new(mut nodes: Vec<u32>, edges: Vec<Edge>) -> Self {
        nodes.sort_unstable();
        NetworkGraph { nodes, edges }
    }

    pub fn nodes(&self) -> &[u32] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn position(&self, id: u32) -> Option<usize> {
        self.nodes.binary_search(&id).ok()
    }

    /// Edges as `(from_pos, to_pos, delay)`; assumes a validated graph.
    pub fn positional_edges(&self) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        self.edges.iter().map(move |e| {
            (
                self.position(e.from).expect("validated graph"),
                self.position(e.to).expect("validated graph"),
                e.delay,
            )
        })
    }

    pub fn validate(&self) -> Result<(), GraphViolation> {
        if self.nodes.is_empty() {
            return Err(GraphViolation::Empty);
        }
        if let Some(w) = self.nodes.windows(2).find(|w| w[0] == w[1]) {
            return Err(GraphViolation::DuplicateNode(w[0]));
        }
        let mut seen = BTreeMap::new();
        for e in &self.edges {
            for id in [e.from, e.to] {
                if self.position(id).is_none() {
                    return Err(GraphViolation::UnknownNode(id));
                }
            }
            if e.from == e.to {
                return Err(GraphViolation::SelfEdge(e.from));
            }
            if seen.insert((e.from, e.to), ()).is_some() {
                return Err(GraphViolation::DuplicateEdge {
                    from: e.from,
                    to: e.to,
                });
            }
        }
        match self.zero_delay_cycle() {
            Some(cycle) => Err(GraphViolation::ZeroDelayCycle(cycle)),
            None => Ok(()),
        }
    }

    /// Depth-first search over the zero-delay subgraph.
    fn zero_delay_cycle(&self) -> Option<Vec<u32>> {
        let n = self.nodes.len();
        let mut adj = vec![Vec::new(); n];
        for (f, t, d) in self.positional_edges() {
            if d == 0 {
                adj[f].push(t);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = vec![0u8; n];
        let mut stack: Vec<usize> = Vec::new();
        fn visit(
            v: usize,
            adj: &[Vec<usize>],
            state: &mut [u8],
            stack: &mut Vec<usize>,
        ) -> Option<Vec<usize>> {
            state[v] = 1;
            stack.push(v);
            for &w in &adj[v] {
                if state[w] == 1 {
                    let start = stack.iter().position(|&x| x == w).unwrap();
                    return Some(stack[start..].to_vec());
                }
                if state[w] == 0 {
                    if let Some(c) = visit(w, adj, state, stack) {
                        return Some(c);
                    }
                }
            }
            stack.pop();
            state[v] = 2;
            None
        }
        for v in 0..n {
            if state[v] == 0 {
                if let Some(c) = visit(v, &adj, &mut state, &mut stack) {
                    return Some(c.into_iter().map(|p| self.nodes[p]).collect());
                }
            }
        }
        None
    }

    pub fn max_delay(&self) -> u32 {
        self.edges.iter().map(|e| e.delay).max().unwrap_or(0)
    }
}

/// `D^{ij}`: shortest aggregate delay of a directed path from `j` to `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DelayMatrix {
    n: usize,
    entries: Vec<Delay>,
}

impl DelayMatrix {
    /// Row-major entries; row `i`, column `j` is the delay from `j` to `i`.
    pub fn from_entries(n: usize, entries: Vec<Delay>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::Dimension(format!(
                "delay matrix needs {} entries, got {}",
                n * n,
                entries.len()
            )));
        }
        Ok(DelayMatrix { n, entries })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Delay from `j` to `i`.
    pub fn get(&self, i: usize, j: usize) -> Delay {
        self.entries[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<Delay>> {
        self.entries.chunks(self.n).map(|r| r.to_vec()).collect()
    }
}

impl fmt::Display for DelayMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in self.entries.chunks(self.n) {
            let cells: Vec<String> = row.iter().map(|d| d.to_string()).collect();
            writeln!(f, "[{}]", cells.join(", "))?;
        }
        Ok(())
    }
}

/// Min-plus all-pairs closure of the edge delays.
pub fn delay_matrix(graph: &NetworkGraph) -> Result<DelayMatrix> {
    graph.validate()?;
    let n = graph.node_count();
    let mut d = vec![Delay::Infinite; n * n];
    for i in 0..n {
        d[i * n + i] = Delay::ZERO;
    }
    for (from, to, delay) in graph.positional_edges() {
        let cell = &mut d[to * n + from];
        *cell = (*cell).min(Delay::Finite(delay));
    }
    for k in 0..n {
        for i in 0..n {
            let ik = d[i * n + k];
            if ik == Delay::Infinite {
                continue;
            }
            for j in 0..n {
                let via = ik + d[k * n + j];
                if via < d[i * n + j] {
                    d[i * n + j] = via;
                }
            }
        }
    }
    DelayMatrix::from_entries(n, d)
}

/// Default weight on the one-dimensional dummy input carried by relay nodes.
pub const DEFAULT_RELAY_INPUT_WEIGHT: f64 = 1.0;

/// Replace every edge of delay `d >= 2` by a chain of `d - 1` relay nodes.
///
/// Relays copy the upstream state with a one-step lag, receive no noise, cost
/// nothing, and carry a scalar dummy input that has no effect on the plant.
pub fn expand_relays(graph: &NetworkGraph, problem: &LqProblem) -> Result<(NetworkGraph, LqProblem)> {
    expand_relays_with(graph, problem, DEFAULT_RELAY_INPUT_WEIGHT)
}

pub fn expand_relays_with(
    graph: &NetworkGraph,
    problem: &LqProblem,
    relay_input_weight: f64,
) -> Result<(NetworkGraph, LqProblem)> {
    graph.validate()?;
    if problem.partition().node_ids() != graph.nodes() {
        return Err(Error::Dimension(
            "problem partition and graph disagree on node ids".into(),
        ));
    }
    if relay_input_weight.is_nan() || relay_input_weight <= 0.0 {
        return Err(Error::Validation(
            "relay input weight must be strictly positive".into(),
        ));
    }
    if graph.max_delay() <= 1 {
        return Ok((graph.clone(), problem.clone()));
    }

    let part = problem.partition();
    let n0 = graph.node_count();
    let mut next_id = graph.nodes().iter().copied().max().unwrap_or(0) + 1;
    let mut ids = graph.nodes().to_vec();
    let mut state_dims = part.states().dims().to_vec();
    let mut input_dims = part.inputs().dims().to_vec();
    let mut edges = Vec::new();
    // (relay position, upstream position): relay copies upstream's state.
    let mut copies: Vec<(usize, usize)> = Vec::new();

    for e in graph.edges() {
        if e.delay <= 1 {
            edges.push(*e);
            continue;
        }
        let mut upstream_id = e.from;
        let mut upstream_pos = graph.position(e.from).unwrap();
        let source_dim = part.states().dim(upstream_pos);
        for _ in 0..e.delay - 1 {
            let relay_id = next_id;
            next_id += 1;
            let relay_pos = ids.len();
            ids.push(relay_id);
            state_dims.push(source_dim);
            input_dims.push(1);
            edges.push(Edge {
                from: upstream_id,
                to: relay_id,
                delay: 1,
            });
            copies.push((relay_pos, upstream_pos));
            upstream_id = relay_id;
            upstream_pos = relay_pos;
        }
        edges.push(Edge {
            from: upstream_id,
            to: e.to,
            delay: 1,
        });
    }

    let new_part = BlockPartition::new(ids.clone(), state_dims, input_dims)?;
    let xs = new_part.states().clone();
    let us = new_part.inputs().clone();
    let (nx0, nu0) = (part.states().total(), part.inputs().total());

    let pad = |m: &DMatrix<f64>, rows: usize, cols: usize| {
        let mut out = DMatrix::zeros(rows, cols);
        out.view_mut((0, 0), m.shape()).copy_from(m);
        out
    };

    let mut stages = Vec::with_capacity(problem.stage_count());
    for stage in problem.stages() {
        let mut a = BlockMatrix::new(
            xs.clone(),
            xs.clone(),
            pad(stage.a.entries(), xs.total(), xs.total()),
        )?;
        for &(relay, upstream) in &copies {
            let dim = xs.dim(relay);
            a.set_block(relay, upstream, &DMatrix::identity(dim, dim))?;
        }
        let b = pad(stage.b.entries(), xs.total(), us.total());
        let q = pad(stage.q.entries(), xs.total(), xs.total());
        let s = pad(stage.s.entries(), xs.total(), us.total());
        let mut r = pad(stage.r.entries(), us.total(), us.total());
        for k in nu0..us.total() {
            r[(k, k)] = relay_input_weight;
        }
        let mut w = stage.w.clone();
        for p in n0..ids.len() {
            w.push(DMatrix::zeros(xs.dim(p), xs.dim(p)));
        }
        stages.push(Stage::new(&new_part, a.into_entries(), b, q, r, s, w)?);
    }
    let qf = pad(problem.qf().entries(), xs.total(), xs.total());
    let mut sigma0 = problem.sigma0().to_vec();
    for p in n0..ids.len() {
        sigma0.push(DMatrix::zeros(xs.dim(p), xs.dim(p)));
    }
    debug_assert_eq!(nx0, part.states().total());
    let expanded = LqProblem::new(new_part, problem.horizon(), stages, qf, sigma0)?;
    Ok((NetworkGraph::new(ids, edges), expanded))
}
