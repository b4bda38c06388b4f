//! Reference instances: the three-node delay/sparsity example, the four-node
//! convergence example, and a two-node delay-2 link.

use nalgebra::DMatrix;

use crate::blockmat::BlockPartition;
use crate::netgraph::{Edge, NetworkGraph};
use crate::problem::{Horizon, LqProblem};

fn edge(from: u32, to: u32, delay: u32) -> Edge {
    Edge { from, to, delay }
}

fn identities(n: usize) -> Vec<DMatrix<f64>> {
    vec![DMatrix::identity(1, 1); n]
}

/// Nodes 1 and 2 exchange information with one step of delay; node 2 feeds
/// node 3 instantly.
pub fn example1_graph() -> NetworkGraph {
    NetworkGraph::new(
        vec![1, 2, 3],
        vec![edge(1, 2, 1), edge(2, 1, 1), edge(2, 3, 0)],
    )
}

/// Scalar nodes, horizon 3, unit noise and initial covariances.
pub fn example1_problem() -> LqProblem {
    let a = DMatrix::from_row_slice(3, 3, &[0.9, 0.3, 0.0, 0.2, 1.1, 0.0, 0.4, 0.5, 0.8]);
    let b = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.1, 1.0, 0.0, 0.3, 0.4, 1.0]);
    let q = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.2, 0.5, 2.0, 0.3, 0.2, 0.3, 2.0]);
    let s = DMatrix::from_row_slice(3, 3, &[0.1, 0.0, 0.05, 0.0, 0.1, 0.0, 0.05, 0.0, 0.1]);
    LqProblem::time_invariant(
        BlockPartition::scalar(3),
        Horizon::Finite(3),
        a,
        b,
        q.clone(),
        DMatrix::identity(3, 3),
        s,
        q,
        identities(3),
        identities(3),
    )
    .expect("fixture is well formed")
}

pub fn example8_graph() -> NetworkGraph {
    NetworkGraph::new(
        vec![1, 2, 3, 4],
        vec![
            edge(1, 2, 1),
            edge(1, 3, 1),
            edge(2, 4, 1),
            edge(3, 4, 1),
            edge(4, 3, 0),
        ],
    )
}

/// Time-invariant four-node data; the terminal weight equals `Q`.
pub fn example8_problem() -> LqProblem {
    let a = DMatrix::from_row_slice(
        4,
        4,
        &[3., 0., 0., 0., 2., 3., 0., 0., 1., 2., 2., 1., 0., 1., 3., 2.],
    );
    let b = DMatrix::from_row_slice(
        4,
        4,
        &[1., 0., 0., 0., 2., 3., 0., 0., 0., 1., 2., 2., 0., 0., 1., 3.],
    );
    let q = DMatrix::from_element(4, 4, -1.0) + DMatrix::identity(4, 4) * 9.0;
    let s = DMatrix::from_element(4, 4, -1.0);
    LqProblem::time_invariant(
        BlockPartition::scalar(4),
        Horizon::Infinite,
        a,
        b,
        q.clone(),
        q.clone(),
        s,
        q,
        identities(4),
        identities(4),
    )
    .expect("fixture is well formed")
}

/// Node 1 reaches node 2 only after two steps; the nodes couple through cost.
pub fn two_node_delay2() -> (NetworkGraph, LqProblem) {
    let g = NetworkGraph::new(vec![1, 2], vec![edge(1, 2, 2)]);
    let a = DMatrix::from_row_slice(2, 2, &[1.1, 0.0, 0.0, 0.9]);
    let b = DMatrix::identity(2, 2);
    let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.8, 0.8, 2.0]);
    let s = DMatrix::from_row_slice(2, 2, &[0.0, 0.3, 0.3, 0.0]);
    let p = LqProblem::time_invariant(
        BlockPartition::scalar(2),
        Horizon::Finite(4),
        a,
        b,
        q.clone(),
        DMatrix::identity(2, 2),
        s,
        q,
        identities(2),
        identities(2),
    )
    .expect("fixture is well formed");
    (g, p)
}
