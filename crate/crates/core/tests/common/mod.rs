#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use declqr::generate::{random_graph, random_problem};
use declqr::{Edge, LqProblem, NetworkGraph};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random graph and conforming problem at desk scale.
pub fn instance(seed: u64, max_nodes: usize, max_dim: usize, max_steps: usize) -> (NetworkGraph, LqProblem) {
    let mut rng = rng(seed);
    let n = rng.random_range(1..=max_nodes);
    let steps = rng.random_range(1..=max_steps);
    let g = random_graph(&mut rng, n, 0.6);
    let p = random_problem(&mut rng, &g, max_dim, steps).expect("generator output is valid");
    (g, p)
}

/// Random graph with delays up to `max_delay`; zero delays follow ascending ids.
pub fn graph_with_long_delays<R: Rng>(rng: &mut R, n: usize, max_delay: u32) -> NetworkGraph {
    let mut edges = Vec::new();
    for i in 1..=n as u32 {
        for j in 1..=n as u32 {
            if i != j && rng.random_bool(0.5) {
                let lo = if i < j { 0 } else { 1 };
                edges.push(Edge { from: i, to: j, delay: rng.random_range(lo..=max_delay) });
            }
        }
    }
    NetworkGraph::new((1..=n as u32).collect(), edges)
}

/// Shortest delays by repeated edge relaxation; `d[i][j]` is the delay from `j` to `i`.
pub fn relaxed_delays(g: &NetworkGraph) -> Vec<Vec<Option<u32>>> {
    let n = g.node_count();
    let mut d = vec![vec![None; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = Some(0);
    }
    for _ in 0..n {
        for e in g.edges() {
            let (from, to) = (g.position(e.from).unwrap(), g.position(e.to).unwrap());
            for src in 0..n {
                if let Some(a) = d[from][src] {
                    let cand = a + e.delay;
                    if d[to][src].is_none_or(|cur| cand < cur) {
                        d[to][src] = Some(cand);
                    }
                }
            }
        }
    }
    d
}

pub struct Lqr {
    pub p: Vec<DMatrix<f64>>,
    pub k: Vec<DMatrix<f64>>,
    pub cost: f64,
}

/// Textbook finite-horizon LQR with cross term, using explicit inverses.
#[allow(clippy::too_many_arguments)]
pub fn textbook_lqr(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    s: &DMatrix<f64>,
    qf: &DMatrix<f64>,
    w: &DMatrix<f64>,
    sigma0: &DMatrix<f64>,
    steps: usize,
) -> Lqr {
    let mut p = vec![qf.clone()];
    let mut k = Vec::new();
    for _ in 0..steps {
        let next = p.last().unwrap();
        let h = r + b.transpose() * next * b;
        let g = s.transpose() + b.transpose() * next * a;
        let hinv = h.try_inverse().expect("R + B'PB invertible");
        k.push(-&hinv * &g);
        p.push(q + a.transpose() * next * a - g.transpose() * hinv * g);
    }
    p.reverse();
    k.reverse();
    let cost = (&p[0] * sigma0).trace() + p[1..].iter().map(|m| (m * w).trace()).sum::<f64>();
    Lqr { p, k, cost }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}
