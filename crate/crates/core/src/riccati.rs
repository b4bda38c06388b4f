//! Coupled Riccati recursions over the information graph.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{Complex, DMatrix};
use serde::Serialize;

use crate::blockmat::NodeSet;
use crate::error::{Error, Result};
use crate::infograph::InfoGraph;
use crate::problem::{LqProblem, Stage};

pub const DEFAULT_SS_TOL: f64 = 1e-9;
pub const DEFAULT_SS_MAX_ITER: usize = 10_000;
pub const DEFAULT_THETA_GRID: usize = 720;

/// Value matrices and cost offsets, indexed `[t][r]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueSchedule {
    /// `x[t][r]` for `t = 0..=T`.
    pub x: Vec<Vec<DMatrix<f64>>>,
    /// `omega[t][r]` for `t < T`.
    pub omega: Vec<Vec<DMatrix<f64>>>,
    /// `gamma[t][r]` for `t < T`.
    pub gamma: Vec<Vec<DMatrix<f64>>>,
    /// Accumulated noise cost, `c[T] = 0`.
    pub c: Vec<f64>,
}

/// Gains `k[t][r]`; steady-state schedules hold a single step.
#[derive(Clone, Debug, PartialEq)]
pub struct GainSchedule {
    pub k: Vec<Vec<DMatrix<f64>>>,
}

impl GainSchedule {
    pub fn steps(&self) -> usize {
        self.k.len()
    }

    pub fn gain(&self, t: usize, r: usize) -> &DMatrix<f64> {
        &self.k[t.min(self.k.len() - 1)][r]
    }
}

/// One backward step at info node `r`.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub omega: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Update `X^r` from the descendant's next-step value `X^s`.
pub fn backward_step(
    stage: &Stage,
    ig: &InfoGraph,
    r: usize,
    x_next: &DMatrix<f64>,
) -> Result<StepResult> {
    let rs = ig.node(r);
    let ss = ig.node(ig.descendant(r));
    let a = stage.a.submatrix(ss, rs)?;
    let b = stage.b.submatrix(ss, rs)?;
    let q = stage.q.submatrix(rs, rs)?;
    let rr = stage.r.submatrix(rs, rs)?;
    let s = stage.s.submatrix(rs, rs)?;

    let xb = x_next * &b;
    let omega = symmetrize(&(&rr + b.transpose() * &xb));
    let chol = omega.clone().cholesky().ok_or_else(|| {
        Error::Assumption(format!(
            "Omega at info node {r} is not positive definite"
        ))
    })?;
    let cross = &s + a.transpose() * &xb;
    let gain = -chol.solve(&cross.transpose());
    let x = symmetrize(&(&q + a.transpose() * x_next * &a - gain.transpose() * &omega * &gain));

    let (nx, nu) = (a.ncols(), b.ncols());
    let mut ab = DMatrix::zeros(a.nrows(), nx + nu);
    ab.view_mut((0, 0), a.shape()).copy_from(&a);
    ab.view_mut((0, nx), b.shape()).copy_from(&b);
    let mut weight = DMatrix::zeros(nx + nu, nx + nu);
    weight.view_mut((0, 0), (nx, nx)).copy_from(&q);
    weight.view_mut((0, nx), (nx, nu)).copy_from(&s);
    weight.view_mut((nx, 0), (nu, nx)).copy_from(&s.transpose());
    weight.view_mut((nx, nx), (nu, nu)).copy_from(&rr);
    let gamma = symmetrize(&(weight + ab.transpose() * x_next * &ab));
    Ok(StepResult {
        omega,
        gain,
        x,
        gamma,
    })
}

/// `Tr((X^s)^{ii} C)` where `s` is the root of node `i`.
fn root_trace(problem: &LqProblem, ig: &InfoGraph, xs: &[DMatrix<f64>], i: usize, c: &DMatrix<f64>) -> f64 {
    let states = problem.partition().states();
    let s = ig.root(i);
    let off = states
        .offset_within(ig.node(s), i)
        .expect("root contains its node");
    let d = states.dim(i);
    (xs[s].view((off, off), (d, d)) * c).trace()
}

pub fn finite_horizon(problem: &LqProblem, ig: &InfoGraph) -> Result<(ValueSchedule, GainSchedule)> {
    let steps = problem.steps()?;
    check_sizes(problem, ig)?;
    let m = ig.len();
    let terminal: Vec<DMatrix<f64>> = (0..m)
        .map(|r| problem.qf().submatrix(ig.node(r), ig.node(r)))
        .collect::<Result<_>>()?;
    let mut x = vec![Vec::new(); steps + 1];
    let mut omega = vec![Vec::new(); steps];
    let mut gamma = vec![Vec::new(); steps];
    let mut k = vec![Vec::new(); steps];
    let mut c = vec![0.0; steps + 1];
    x[steps] = terminal;
    for t in (0..steps).rev() {
        let stage = problem.stage(t);
        for r in 0..m {
            let res = backward_step(stage, ig, r, &x[t + 1][ig.descendant(r)])?;
            omega[t].push(res.omega);
            gamma[t].push(res.gamma);
            k[t].push(res.gain);
            x[t].push(res.x);
        }
        let noise: f64 = (0..ig.plant_nodes())
            .map(|i| root_trace(problem, ig, &x[t + 1], i, &stage.w[i]))
            .sum();
        c[t] = c[t + 1] + noise;
    }
    Ok((
        ValueSchedule { x, omega, gamma, c },
        GainSchedule { k },
    ))
}

fn check_sizes(problem: &LqProblem, ig: &InfoGraph) -> Result<()> {
    if ig.plant_nodes() != problem.partition().node_count() {
        return Err(Error::Dimension(format!(
            "info graph covers {} plant nodes, problem has {}",
            ig.plant_nodes(),
            problem.partition().node_count()
        )));
    }
    Ok(())
}

/// Optimal expected cost from a finite-horizon schedule.
pub fn optimal_cost(vs: &ValueSchedule, problem: &LqProblem, ig: &InfoGraph) -> f64 {
    let init: f64 = (0..ig.plant_nodes())
        .map(|i| root_trace(problem, ig, &vs.x[0], i, &problem.sigma0()[i]))
        .sum();
    init + vs.c[0]
}

/// Trace table of `X_t^r`: header `t` plus one column per info node.
pub fn trace_csv(vs: &ValueSchedule, ig: &InfoGraph, ids: &[u32]) -> String {
    let mut out = String::from("t");
    for s in ig.nodes() {
        let _ = write!(out, ",{}", csv_label(s, ids));
    }
    out.push('\n');
    for (t, xs) in vs.x.iter().enumerate() {
        let _ = write!(out, "{t}");
        for x in xs {
            let _ = write!(out, ",{:.16e}", x.trace());
        }
        out.push('\n');
    }
    out
}

/// Comma-free label for CSV headers, e.g. `{1-2-3}`.
pub fn csv_label(s: &NodeSet, ids: &[u32]) -> String {
    let parts: Vec<String> = s.iter().map(|i| ids[i].to_string()).collect();
    format!("{{{}}}", parts.join("-"))
}

/// Converged steady-state values.
#[derive(Clone, Debug, PartialEq)]
pub struct SteadyState {
    pub x: Vec<DMatrix<f64>>,
    pub k: Vec<DMatrix<f64>>,
    /// Iterations spent per self-loop node (zero for other nodes).
    pub iterations: Vec<usize>,
}

impl SteadyState {
    pub fn gains(&self) -> GainSchedule {
        GainSchedule {
            k: vec![self.k.clone()],
        }
    }
}

fn inf_norm_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

/// Iterate each self-loop recursion to its fixed point, then propagate back
/// along the descendant chains.
pub fn steady_state(problem: &LqProblem, ig: &InfoGraph, tol: f64, max_iter: usize) -> Result<SteadyState> {
    check_sizes(problem, ig)?;
    let ids = problem.partition().node_ids();
    let stage = problem.stage(0);
    let m = ig.len();
    let mut x: Vec<Option<DMatrix<f64>>> = vec![None; m];
    let mut k: Vec<Option<DMatrix<f64>>> = vec![None; m];
    let mut iterations = vec![0; m];
    for s in ig.self_loops() {
        let mut cur = problem.qf().submatrix(ig.node(s), ig.node(s))?;
        let mut change = f64::INFINITY;
        let mut iter = 0;
        while iter < max_iter {
            let res = backward_step(stage, ig, s, &cur)?;
            change = inf_norm_diff(&res.x, &cur);
            iter += 1;
            cur = res.x;
            if change < tol {
                k[s] = Some(res.gain);
                break;
            }
        }
        if k[s].is_none() {
            return Err(Error::Divergence {
                node: ig.node(s).label(ids),
                iterations: iter,
                last_change: change,
            });
        }
        iterations[s] = iter;
        x[s] = Some(cur);
    }
    // Non-self-loop nodes, nearest to their self-loop first.
    let depth = |mut r: usize| {
        let mut d = 0;
        while !ig.is_self_loop(r) {
            r = ig.descendant(r);
            d += 1;
        }
        d
    };
    let mut order: Vec<usize> = (0..m).filter(|&r| !ig.is_self_loop(r)).collect();
    order.sort_by_key(|&r| depth(r));
    for r in order {
        let xs = x[ig.descendant(r)].clone().expect("descendant processed first");
        let res = backward_step(stage, ig, r, &xs)?;
        x[r] = Some(res.x);
        k[r] = Some(res.gain);
    }
    Ok(SteadyState {
        x: x.into_iter().map(Option::unwrap).collect(),
        k: k.into_iter().map(Option::unwrap).collect(),
        iterations,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SelfLoopConditions {
    pub node: Vec<u32>,
    pub stabilizable: bool,
    /// Modes with `|λ| >= 1` that fail the PBH rank test.
    pub uncontrollable_unstable_modes: Vec<(f64, f64)>,
    pub full_column_rank: bool,
    /// Smallest `σ_min / σ_max` seen on the θ grid.
    pub min_rank_ratio: f64,
    pub worst_theta: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionReport {
    pub theta_grid: usize,
    pub rank_tol: f64,
    pub self_loops: Vec<SelfLoopConditions>,
}

impl ConditionReport {
    pub fn passed(&self) -> bool {
        self.self_loops
            .iter()
            .all(|c| c.stabilizable && c.full_column_rank)
    }
}

fn complexify(m: &DMatrix<f64>) -> DMatrix<Complex<f64>> {
    m.map(|v| Complex::new(v, 0.0))
}

/// Singular values of a complex matrix, descending.
fn singular_values(m: &DMatrix<Complex<f64>>) -> Vec<f64> {
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Rank of `m` relative to `tol * σ_max`; also returns `σ_min / σ_max`.
fn column_rank(m: &DMatrix<Complex<f64>>, tol: f64) -> (usize, f64) {
    if m.nrows() < m.ncols() {
        let sv = singular_values(m);
        let max = sv.first().copied().unwrap_or(0.0);
        let rank = sv.iter().filter(|&&v| v > tol * max).count();
        return (rank, 0.0);
    }
    let sv = singular_values(m);
    let max = sv.first().copied().unwrap_or(0.0);
    if max == 0.0 {
        return (0, 0.0);
    }
    let rank = sv.iter().filter(|&&v| v > tol * max).count();
    (rank, sv.last().unwrap() / max)
}

/// Stabilizability and the unit-circle rank condition for every self-loop.
pub fn check_ss_conditions(problem: &LqProblem, ig: &InfoGraph) -> Result<ConditionReport> {
    check_ss_conditions_with(problem, ig, DEFAULT_THETA_GRID)
}

pub fn check_ss_conditions_with(problem: &LqProblem, ig: &InfoGraph, grid: usize) -> Result<ConditionReport> {
    check_sizes(problem, ig)?;
    let rank_tol = 1e-8;
    let ids = problem.partition().node_ids();
    let stage = problem.stage(0);
    let mut out = Vec::new();
    for s in ig.self_loops() {
        let set = ig.node(s);
        let a = stage.a.submatrix(set, set)?;
        let b = stage.b.submatrix(set, set)?;
        let (nx, nu) = (a.nrows(), b.ncols());

        let mut bad_modes = Vec::new();
        let ac = complexify(&a);
        let bc = complexify(&b);
        for lambda in a.complex_eigenvalues().iter() {
            if lambda.norm() < 1.0 - 1e-12 {
                continue;
            }
            let mut pbh = DMatrix::zeros(nx, nx + nu);
            let shifted = &ac - DMatrix::identity(nx, nx) * *lambda;
            pbh.view_mut((0, 0), (nx, nx)).copy_from(&shifted);
            pbh.view_mut((0, nx), (nx, nu)).copy_from(&bc);
            let (rank, _) = column_rank(&pbh.transpose(), rank_tol);
            if rank < nx {
                bad_modes.push((lambda.re, lambda.im));
            }
        }

        // [C D] with [C D]'[C D] equal to the joint cost block.
        let q = stage.q.submatrix(set, set)?;
        let sm = stage.s.submatrix(set, set)?;
        let r = stage.r.submatrix(set, set)?;
        let mut joint = DMatrix::zeros(nx + nu, nx + nu);
        joint.view_mut((0, 0), (nx, nx)).copy_from(&q);
        joint.view_mut((0, nx), (nx, nu)).copy_from(&sm);
        joint.view_mut((nx, 0), (nu, nx)).copy_from(&sm.transpose());
        joint.view_mut((nx, nx), (nu, nu)).copy_from(&r);
        let eig = symmetrize(&joint).symmetric_eigen();
        let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let keep: Vec<usize> = (0..nx + nu)
            .filter(|&k| eig.eigenvalues[k] > 1e-12 * (1.0 + lmax))
            .collect();
        let mut cd = DMatrix::zeros(keep.len(), nx + nu);
        for (row, &k) in keep.iter().enumerate() {
            let scale = eig.eigenvalues[k].sqrt();
            for c in 0..nx + nu {
                cd[(row, c)] = scale * eig.eigenvectors[(c, k)];
            }
        }
        let cdc = complexify(&cd);
        let p = keep.len();
        let mut min_ratio = f64::INFINITY;
        let mut worst_theta = 0.0;
        let mut full = true;
        for g in 0..grid {
            let theta = 2.0 * PI * g as f64 / grid as f64;
            let z = Complex::from_polar(1.0, theta);
            let mut m = DMatrix::zeros(nx + p, nx + nu);
            m.view_mut((0, 0), (nx, nx))
                .copy_from(&(&ac - DMatrix::identity(nx, nx) * z));
            m.view_mut((0, nx), (nx, nu)).copy_from(&bc);
            m.view_mut((nx, 0), (p, nx + nu)).copy_from(&cdc);
            let (rank, ratio) = column_rank(&m, rank_tol);
            if rank < nx + nu {
                full = false;
            }
            if ratio < min_ratio {
                min_ratio = ratio;
                worst_theta = theta;
            }
        }
        out.push(SelfLoopConditions {
            node: set.iter().map(|i| ids[i]).collect(),
            stabilizable: bad_modes.is_empty(),
            uncontrollable_unstable_modes: bad_modes,
            full_column_rank: full,
            min_rank_ratio: min_ratio,
            worst_theta,
        });
    }
    Ok(ConditionReport {
        theta_grid: grid,
        rank_tol,
        self_loops: out,
    })
}
