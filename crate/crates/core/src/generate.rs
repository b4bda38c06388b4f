//! Seeded random graphs and conforming problem instances for testing.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::blockmat::BlockPartition;
use crate::error::Result;
use crate::netgraph::{delay_matrix, Edge, NetworkGraph};
use crate::problem::{Horizon, LqProblem, Stage};

/// Random graph on ids `1..=n` whose zero-delay edges follow a random
/// permutation, so the zero-delay subgraph is acyclic.
pub fn random_graph<R: Rng + ?Sized>(rng: &mut R, n: usize, edge_prob: f64) -> NetworkGraph {
    let mut rank: Vec<usize> = (0..n).collect();
    rank.shuffle(rng);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j || !rng.random_bool(edge_prob) {
                continue;
            }
            let delay = if rank[i] < rank[j] && rng.random_bool(0.5) { 0 } else { 1 };
            edges.push(Edge {
                from: i as u32 + 1,
                to: j as u32 + 1,
                delay,
            });
        }
    }
    NetworkGraph::new((1..=n as u32).collect(), edges)
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// `C'C / dim + floor * I` for a random square `C`.
fn random_psd<R: Rng + ?Sized>(rng: &mut R, dim: usize, floor: f64) -> DMatrix<f64> {
    let c = gaussian(rng, dim, dim, 1.0);
    let m = c.transpose() * c / dim as f64 + DMatrix::identity(dim, dim) * floor;
    (&m + m.transpose()) * 0.5
}

/// Time-varying data with dimensions in `1..=max_dim`, conforming to the
/// graph's delay sparsity and satisfying the definiteness assumptions.
pub fn random_problem<R: Rng + ?Sized>(
    rng: &mut R,
    graph: &NetworkGraph,
    max_dim: usize,
    steps: usize,
) -> Result<LqProblem> {
    let d = delay_matrix(graph)?;
    let n = graph.node_count();
    let xd: Vec<usize> = (0..n).map(|_| rng.random_range(1..=max_dim)).collect();
    let ud: Vec<usize> = (0..n).map(|_| rng.random_range(1..=max_dim)).collect();
    let part = BlockPartition::new(graph.nodes().to_vec(), xd.clone(), ud.clone())?;
    let (nx, nu) = (part.states().total(), part.inputs().total());
    let mut stages = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut a = gaussian(rng, nx, nx, 0.5);
        let mut b = gaussian(rng, nx, nu, 0.5);
        for i in 0..n {
            for j in 0..n {
                if d.get(i, j).within(1) {
                    continue;
                }
                let (ri, cj, uj) = (part.states().range(i), part.states().range(j), part.inputs().range(j));
                a.view_mut((ri.start, cj.start), (ri.len(), cj.len())).fill(0.0);
                b.view_mut((ri.start, uj.start), (ri.len(), uj.len())).fill(0.0);
            }
        }
        let joint = random_psd(rng, nx + nu, 0.1);
        let q = joint.view((0, 0), (nx, nx)).into_owned();
        let s = joint.view((0, nx), (nx, nu)).into_owned();
        let r = joint.view((nx, nx), (nu, nu)).into_owned();
        let w = xd.iter().map(|&k| random_psd(rng, k, 0.05)).collect();
        stages.push(Stage::new(&part, a, b, q, r, s, w)?);
    }
    let qf = random_psd(rng, nx, 0.0);
    let sigma0 = xd.iter().map(|&k| random_psd(rng, k, 0.05)).collect();
    LqProblem::new(part, Horizon::Finite(steps), stages, qf, sigma0)
}
