//! JSON problem, graph and gain files; CSV exports.
//!
//! Matrices are dense, row-major nested arrays. Block order follows ascending
//! node id regardless of the order nodes are listed in the file.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::blockmat::{BlockPartition, NodeSet};
use crate::controller::{ControllerRealization, Trajectory};
use crate::error::{Error, Result};
use crate::infograph::InfoGraph;
use crate::netgraph::{Edge, NetworkGraph};
use crate::problem::{Horizon, LqProblem, Stage};
use crate::riccati::{csv_label, GainSchedule};

type Rows = Vec<Vec<f64>>;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeEntry {
    /// A scalar node given by id only.
    Id(u32),
    Spec {
        id: u32,
        #[serde(default = "one")]
        state_dim: usize,
        #[serde(default = "one")]
        input_dim: usize,
    },
}

fn one() -> usize {
    1
}

impl NodeEntry {
    fn parts(&self) -> (u32, usize, usize) {
        match *self {
            NodeEntry::Id(id) => (id, 1, 1),
            NodeEntry::Spec {
                id,
                state_dim,
                input_dim,
            } => (id, state_dim, input_dim),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HorizonField {
    Steps(usize),
    /// `"infinite"` for steady-state synthesis.
    Word(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageFile {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "Q")]
    pub q: Rows,
    #[serde(rename = "R")]
    pub r: Rows,
    #[serde(rename = "S", default, skip_serializing_if = "Option::is_none")]
    pub s: Option<Rows>,
    /// Per-node noise covariances.
    #[serde(rename = "W")]
    pub w: Vec<Rows>,
}

/// Self-describing problem: graph, dimensions, horizon and all matrices.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub nodes: Vec<NodeEntry>,
    #[serde(default)]
    pub edges: Vec<Edge>,
    pub horizon: HorizonField,
    /// Time-invariant data; ignored when `stages` is present.
    #[serde(flatten)]
    pub invariant: Option<StageFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<Vec<StageFile>>,
    #[serde(rename = "Qf")]
    pub qf: Rows,
    #[serde(rename = "Sigma0")]
    pub sigma0: Vec<Rows>,
    /// Only zero means are accepted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0_mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_mean: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphFile {
    pub nodes: Vec<NodeEntry>,
    #[serde(default)]
    pub edges: Vec<Edge>,
}

fn matrix(rows: &Rows, nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!(
            "{what} must be {nrows}x{ncols}"
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("{what} has non-finite entries")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Sorted ids and dims plus the permutation from file order to sorted order.
fn partition_of(nodes: &[NodeEntry]) -> Result<(BlockPartition, Vec<usize>)> {
    let mut parts: Vec<(u32, usize, usize, usize)> = nodes
        .iter()
        .enumerate()
        .map(|(k, n)| {
            let (id, x, u) = n.parts();
            (id, x, u, k)
        })
        .collect();
    parts.sort_by_key(|p| p.0);
    let part = BlockPartition::new(
        parts.iter().map(|p| p.0).collect(),
        parts.iter().map(|p| p.1).collect(),
        parts.iter().map(|p| p.2).collect(),
    )?;
    Ok((part, parts.iter().map(|p| p.3).collect()))
}

fn covariances(list: &[Rows], part: &BlockPartition, what: &str) -> Result<Vec<DMatrix<f64>>> {
    if list.len() != part.node_count() {
        return Err(Error::Dimension(format!(
            "{what} lists {} blocks for {} nodes",
            list.len(),
            part.node_count()
        )));
    }
    list.iter()
        .enumerate()
        .map(|(i, m)| {
            let d = part.states().dim(i);
            matrix(m, d, d, &format!("{what}[node {}]", part.node_ids()[i]))
        })
        .collect()
}

fn stage_of(sf: &StageFile, part: &BlockPartition) -> Result<Stage> {
    let (nx, nu) = (part.states().total(), part.inputs().total());
    let s = match &sf.s {
        Some(s) => matrix(s, nx, nu, "S")?,
        None => DMatrix::zeros(nx, nu),
    };
    Stage::new(
        part,
        matrix(&sf.a, nx, nx, "A")?,
        matrix(&sf.b, nx, nu, "B")?,
        matrix(&sf.q, nx, nx, "Q")?,
        matrix(&sf.r, nu, nu, "R")?,
        s,
        covariances(&sf.w, part, "W")?,
    )
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

pub fn parse_graph(text: &str) -> Result<NetworkGraph> {
    let file: GraphFile = parse_json(text)?;
    let ids = file.nodes.iter().map(|n| n.parts().0).collect();
    let g = NetworkGraph::new(ids, file.edges);
    g.validate()?;
    Ok(g)
}

pub fn parse_problem(text: &str) -> Result<(NetworkGraph, LqProblem)> {
    let file: ProblemFile = parse_json(text)?;
    problem_from_file(&file)
}

pub fn problem_from_file(file: &ProblemFile) -> Result<(NetworkGraph, LqProblem)> {
    for (what, mean) in [("x0_mean", &file.x0_mean), ("w_mean", &file.w_mean)] {
        if mean.as_ref().is_some_and(|m| m.iter().any(|&v| v != 0.0)) {
            return Err(Error::Validation(format!(
                "{what} is nonzero; disturbances must be zero-mean"
            )));
        }
    }
    let (part, _) = partition_of(&file.nodes)?;
    let graph = NetworkGraph::new(part.node_ids().to_vec(), file.edges.clone());
    graph.validate()?;
    let horizon = match &file.horizon {
        HorizonField::Steps(t) => Horizon::Finite(*t),
        HorizonField::Word(w) if w == "infinite" => Horizon::Infinite,
        HorizonField::Word(w) => {
            return Err(Error::Parse(format!(
                "horizon must be a positive integer or \"infinite\", got {w:?}"
            )))
        }
    };
    let stages = match (&file.stages, &file.invariant) {
        (Some(list), _) => list.iter().map(|s| stage_of(s, &part)).collect::<Result<Vec<_>>>()?,
        (None, Some(inv)) => vec![stage_of(inv, &part)?],
        (None, None) => return Err(Error::Parse("problem has no stage data".into())),
    };
    let nx = part.states().total();
    let qf = matrix(&file.qf, nx, nx, "Qf")?;
    let sigma0 = covariances(&file.sigma0, &part, "Sigma0")?;
    let problem = LqProblem::new(part, horizon, stages, qf, sigma0)?;
    Ok((graph, problem))
}

fn stage_file(st: &Stage) -> StageFile {
    StageFile {
        a: to_rows(st.a.entries()),
        b: to_rows(st.b.entries()),
        q: to_rows(st.q.entries()),
        r: to_rows(st.r.entries()),
        s: Some(to_rows(st.s.entries())),
        w: st.w.iter().map(to_rows).collect(),
    }
}

pub fn problem_to_file(graph: &NetworkGraph, problem: &LqProblem) -> ProblemFile {
    let part = problem.partition();
    let nodes = (0..part.node_count())
        .map(|i| NodeEntry::Spec {
            id: part.node_ids()[i],
            state_dim: part.states().dim(i),
            input_dim: part.inputs().dim(i),
        })
        .collect();
    let horizon = match problem.horizon() {
        Horizon::Finite(t) => HorizonField::Steps(t),
        Horizon::Infinite => HorizonField::Word("infinite".into()),
    };
    let (invariant, stages) = if problem.is_time_invariant() {
        (Some(stage_file(&problem.stages()[0])), None)
    } else {
        (None, Some(problem.stages().iter().map(stage_file).collect()))
    };
    ProblemFile {
        nodes,
        edges: graph.edges().to_vec(),
        horizon,
        invariant,
        stages,
        qf: to_rows(problem.qf().entries()),
        sigma0: problem.sigma0().iter().map(to_rows).collect(),
        x0_mean: None,
        w_mean: None,
    }
}

pub fn problem_to_json(graph: &NetworkGraph, problem: &LqProblem) -> String {
    serde_json::to_string_pretty(&problem_to_file(graph, problem)).expect("problem serializes")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GainEntry {
    /// Absent for steady-state gains.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    pub r: Vec<u32>,
    #[serde(rename = "K")]
    pub k: Rows,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GainsFile {
    pub steady_state: bool,
    pub info_nodes: Vec<Vec<u32>>,
    pub gains: Vec<GainEntry>,
}

pub fn gains_to_json(gains: &GainSchedule, ig: &InfoGraph, ids: &[u32], steady: bool) -> String {
    let to_ids = |s: &NodeSet| s.iter().map(|i| ids[i]).collect::<Vec<_>>();
    let mut entries = Vec::new();
    for (t, ks) in gains.k.iter().enumerate() {
        for (r, k) in ks.iter().enumerate() {
            entries.push(GainEntry {
                t: (!steady).then_some(t),
                r: to_ids(ig.node(r)),
                k: to_rows(k),
            });
        }
    }
    let file = GainsFile {
        steady_state: steady,
        info_nodes: ig.nodes().iter().map(to_ids).collect(),
        gains: entries,
    };
    serde_json::to_string_pretty(&file).expect("gains serialize")
}

/// Read gains keyed by `(t, r)` back into a schedule for `ig`.
pub fn parse_gains(text: &str, ig: &InfoGraph, problem: &LqProblem) -> Result<(GainSchedule, bool)> {
    let file: GainsFile = parse_json(text)?;
    let part = problem.partition();
    let steps = if file.steady_state {
        1
    } else {
        file.gains.iter().filter_map(|g| g.t).max().map_or(0, |t| t + 1)
    };
    let mut k: Vec<Vec<Option<DMatrix<f64>>>> = vec![vec![None; ig.len()]; steps];
    for entry in &file.gains {
        let positions = entry
            .r
            .iter()
            .map(|id| {
                part.position(*id)
                    .ok_or_else(|| Error::Parse(format!("gain refers to unknown node {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let set = NodeSet::new(positions);
        let r = ig
            .index_of(&set)
            .ok_or_else(|| Error::Parse(format!("{:?} is not an info node", entry.r)))?;
        let t = if file.steady_state {
            0
        } else {
            entry
                .t
                .ok_or_else(|| Error::Parse("finite-horizon gain without t".into()))?
        };
        let m = matrix(
            &entry.k,
            part.inputs().subset_dim(&set),
            part.states().subset_dim(&set),
            "K",
        )?;
        k[t][r] = Some(m);
    }
    let k = k
        .into_iter()
        .enumerate()
        .map(|(t, row)| {
            row.into_iter()
                .enumerate()
                .map(|(r, m)| {
                    m.ok_or_else(|| Error::Parse(format!("missing gain for t={t}, info node {r}")))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((GainSchedule { k }, file.steady_state))
}

/// Format with 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Columns: `t`, state blocks, input blocks, then every `ζ^s` block.
pub fn trajectory_csv(traj: &Trajectory, cr: &ControllerRealization) -> String {
    let part = cr.partition();
    let ids = part.node_ids();
    let ig = cr.info_graph();
    let mut out = String::from("t");
    for (i, id) in ids.iter().enumerate() {
        for k in 0..part.states().dim(i) {
            let _ = write!(out, ",x{id}_{k}");
        }
    }
    for (i, id) in ids.iter().enumerate() {
        for k in 0..part.inputs().dim(i) {
            let _ = write!(out, ",u{id}_{k}");
        }
    }
    for s in 0..ig.len() {
        for k in 0..cr.zeta_dim(s) {
            let _ = write!(out, ",zeta{}_{k}", csv_label(ig.node(s), ids));
        }
    }
    out.push_str(",stage_cost\n");
    let nu = part.inputs().total();
    for t in 0..traj.x.len() {
        let _ = write!(out, "{t}");
        for v in traj.x[t].iter() {
            let _ = write!(out, ",{}", fmt_float(*v));
        }
        for k in 0..nu {
            match traj.u.get(t) {
                Some(u) => {
                    let _ = write!(out, ",{}", fmt_float(u[k]));
                }
                None => out.push(','),
            }
        }
        for z in &traj.zeta[t] {
            for v in z.iter() {
                let _ = write!(out, ",{}", fmt_float(*v));
            }
        }
        let _ = writeln!(out, ",{}", fmt_float(traj.stage_costs[t]));
    }
    out
}
