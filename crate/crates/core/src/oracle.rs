//! Brute-force optimum over all linear disturbance-feedback policies that
//! respect the noise information sets, used to certify synthesized controllers.
//!
//! With `u_t^i = Σ_{p ∈ Î_t^i} Θ_{t,i,p} ξ_p` the trajectory is affine in `Θ`.
//! Because the primitive noises `ξ_p` are independent and zero-mean, the
//! expected cost splits into one quadratic per symbol `p`, and each is solved
//! exactly from its normal equations.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::controller::{noise_response, realize, response_cost, NoiseResponse};
use crate::error::{Error, Result};
use crate::infograph::{noise_info_sets, InfoGraph, SymbolSet};
use crate::netgraph::{delay_matrix, expand_relays, DelayMatrix, NetworkGraph};
use crate::problem::{LqProblem, NoiseBasis};
use crate::riccati::{finite_horizon, optimal_cost};

/// Largest number of scalar decision variables the oracle accepts.
pub const DEFAULT_DECISION_CAP: usize = 2000;

const PINV_RTOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct OracleSolution {
    pub cost: f64,
    pub basis: NoiseBasis,
    /// Noise-to-input maps `u[t]`, `nu x basis.dim()`.
    pub input_maps: Vec<DMatrix<f64>>,
    pub decision_dim: usize,
    /// Largest condition number over the per-symbol normal equations.
    pub condition: f64,
    /// Some normal-equation block was singular; the minimum-norm solution was used.
    pub rank_deficient: bool,
    /// Smallest Hessian eigenvalue seen, relative to the largest.
    pub min_hessian_eig: f64,
}

/// Count decision variables without solving.
pub fn decision_dim(problem: &LqProblem, delays: &DelayMatrix) -> Result<usize> {
    let steps = problem.steps()?;
    let part = problem.partition();
    let mut total = 0;
    for t in 0..steps {
        for (i, set) in noise_info_sets(delays, t).iter().enumerate() {
            let ud = part.inputs().dim(i);
            total += set.iter().map(|p| ud * part.states().dim(p.node)).sum::<usize>();
        }
    }
    Ok(total)
}

pub fn brute_force_solve(problem: &LqProblem, delays: &DelayMatrix) -> Result<OracleSolution> {
    brute_force_solve_with_cap(problem, delays, DEFAULT_DECISION_CAP)
}

pub fn brute_force_solve_with_cap(problem: &LqProblem, delays: &DelayMatrix, cap: usize) -> Result<OracleSolution> {
    let steps = problem.steps()?;
    let part = problem.partition();
    if delays.size() != part.node_count() {
        return Err(Error::Dimension("delay matrix does not match the problem".into()));
    }
    let dim = decision_dim(problem, delays)?;
    if dim > cap {
        return Err(Error::Guardrail { dim, cap });
    }
    let (xs, us) = (part.states(), part.inputs());
    let (nx, nu) = (xs.total(), us.total());
    let basis = NoiseBasis::new(xs, steps);
    let info: Vec<Vec<SymbolSet>> = (0..steps).map(|t| noise_info_sets(delays, t)).collect();

    // Stacked trajectory z = [x_0; u_0; ...; x_{T-1}; u_{T-1}; x_T].
    let stride = nx + nu;
    let zdim = steps * stride + nx;
    let xo = |t: usize| t * stride;
    let uo = |t: usize| t * stride + nx;
    let weight_mul = |z: &DMatrix<f64>| -> DMatrix<f64> {
        let mut out = DMatrix::zeros(z.nrows(), z.ncols());
        for t in 0..steps {
            let j = problem.stage(t).joint_weight();
            let blk = &j * z.rows(xo(t), stride);
            out.rows_mut(xo(t), stride).copy_from(&blk);
        }
        let fin = problem.qf().entries() * z.rows(xo(steps), nx);
        out.rows_mut(xo(steps), nx).copy_from(&fin);
        out
    };
    // Propagate a state perturbation entering at time `start` through open-loop dynamics.
    let propagate = |z: &mut DMatrix<f64>, start: usize| {
        for t in start..steps {
            let next = problem.stage(t).a.entries() * z.rows(xo(t), nx);
            z.rows_mut(xo(t + 1), nx).copy_from(&next);
        }
    };

    let mut input_maps = vec![DMatrix::zeros(nu, basis.dim()); steps];
    let mut cost = 0.0;
    let mut condition = 1.0f64;
    let mut rank_deficient = false;
    let mut min_hessian_eig = f64::INFINITY;

    for (k, sym) in basis.symbols().iter().enumerate() {
        let cols = basis.columns(k);
        let dp = cols.len();
        let sigma = basis.covariance(problem, k);
        let enter = (sym.step + 1) as usize;

        let mut z0 = DMatrix::zeros(zdim, dp);
        let r = xs.range(sym.node);
        for d in 0..dp {
            z0[(xo(enter) + r.start + d, d)] = 1.0;
        }
        propagate(&mut z0, enter);

        // Decision slots: (t, global input row) for every input that may use this symbol.
        let mut slots = Vec::new();
        for (t, sets) in info.iter().enumerate().skip(enter) {
            for (i, set) in sets.iter().enumerate() {
                if set.contains(sym) {
                    slots.extend(us.range(i).map(|g| (t, g)));
                }
            }
        }
        if slots.is_empty() {
            cost += (z0.transpose() * weight_mul(&z0) * sigma).trace();
            continue;
        }
        let mut v = DMatrix::zeros(zdim, slots.len());
        for (c, &(t, g)) in slots.iter().enumerate() {
            v[(uo(t) + g, c)] = 1.0;
            let col = problem.stage(t).b.entries().column(g).into_owned();
            let mut single = DMatrix::zeros(zdim, 1);
            single.rows_mut(xo(t + 1), nx).copy_from(&col);
            propagate(&mut single, t + 1);
            let mut dst = v.column_mut(c);
            dst += single.column(0);
        }
        let mv = weight_mul(&v);
        let g = {
            let g = v.transpose() * &mv;
            (&g + g.transpose()) * 0.5
        };
        let h = mv.transpose() * &z0;

        let geig = g.clone().symmetric_eigen();
        let gmax = geig.eigenvalues.amax();
        let gmin = geig.eigenvalues.min();
        min_hessian_eig = min_hessian_eig.min(if gmax > 0.0 { gmin / gmax } else { gmin });
        let keep = |l: f64| l > PINV_RTOL * gmax.max(f64::MIN_POSITIVE);
        let kept: Vec<f64> = geig.eigenvalues.iter().copied().filter(|&l| keep(l)).collect();
        if kept.len() < slots.len() {
            rank_deficient = true;
        }
        if let (Some(lo), Some(hi)) = (
            kept.iter().copied().reduce(f64::min),
            kept.iter().copied().reduce(f64::max),
        ) {
            condition = condition.max(hi / lo);
        }
        let inv = geig.eigenvalues.map(|l| if keep(l) { 1.0 / l } else { 0.0 });
        let pinv = &geig.eigenvectors * DMatrix::from_diagonal(&inv) * geig.eigenvectors.transpose();

        // Projector onto the support of this symbol's covariance.
        let seig = ((sigma + sigma.transpose()) * 0.5).symmetric_eigen();
        let smax = seig.eigenvalues.amax();
        let mask = seig
            .eigenvalues
            .map(|l| if l > PINV_RTOL * smax.max(f64::MIN_POSITIVE) { 1.0 } else { 0.0 });
        let proj = &seig.eigenvectors * DMatrix::from_diagonal(&mask) * seig.eigenvectors.transpose();

        let rhs = -(&h * &proj);
        let mut theta = &pinv * &rhs;
        // One step of iterative refinement.
        let resid = &rhs - &g * &theta;
        theta += &pinv * (resid * &proj);

        let z = &z0 + &v * &theta;
        cost += (z.transpose() * weight_mul(&z) * sigma).trace();
        for (c, &(t, gidx)) in slots.iter().enumerate() {
            let mut dst = input_maps[t].view_mut((gidx, cols.start), (1, dp));
            dst.copy_from(&theta.row(c));
        }
    }

    Ok(OracleSolution {
        cost,
        basis,
        input_maps,
        decision_dim: dim,
        condition,
        rank_deficient,
        min_hessian_eig,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Comparison {
    pub synthesized_cost: f64,
    pub oracle_cost: f64,
    pub abs_gap: f64,
    pub rel_gap: f64,
    /// Largest deviation between input maps, measured on the noise support.
    pub map_deviation: f64,
    pub condition: f64,
    pub rank_deficient: bool,
    pub decision_dim: usize,
}

/// Default pass threshold for both the cost gap and the map deviation.
pub const DEFAULT_TOL: f64 = 1e-6;

impl Comparison {
    pub fn passes(&self, tol: f64) -> bool {
        self.rel_gap <= tol && (self.rank_deficient || self.map_deviation <= tol)
    }
}

/// Compare a synthesized policy's cost and noise-to-input maps with the oracle.
pub fn compare(
    problem: &LqProblem,
    synthesized_cost: f64,
    synthesized_maps: &[DMatrix<f64>],
    oracle: &OracleSolution,
) -> Result<Comparison> {
    if synthesized_maps.len() != oracle.input_maps.len() {
        return Err(Error::Dimension("input maps cover different horizons".into()));
    }
    let mut dev = 0.0f64;
    for (s, o) in synthesized_maps.iter().zip(&oracle.input_maps) {
        if s.shape() != o.shape() {
            return Err(Error::Dimension("input maps have different shapes".into()));
        }
        let diff = s - o;
        for k in 0..oracle.basis.len() {
            let cols = oracle.basis.columns(k);
            let sigma = oracle.basis.covariance(problem, k);
            let eig = ((sigma + sigma.transpose()) * 0.5).symmetric_eigen();
            let root = &eig.eigenvectors
                * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
            dev = dev.max((diff.columns(cols.start, cols.len()) * root).amax());
        }
    }
    let abs_gap = (synthesized_cost - oracle.cost).abs();
    Ok(Comparison {
        synthesized_cost,
        oracle_cost: oracle.cost,
        abs_gap,
        rel_gap: abs_gap / oracle.cost.abs().max(1.0),
        map_deviation: dev,
        condition: oracle.condition,
        rank_deficient: oracle.rank_deficient,
        decision_dim: oracle.decision_dim,
    })
}

/// Restrict expanded-problem maps to the inputs and noise symbols of the first
/// `n` nodes, ordered as in `target`.
fn restrict_maps(resp: &NoiseResponse, n: usize, nu: usize, target: &NoiseBasis) -> Vec<DMatrix<f64>> {
    resp.u
        .iter()
        .map(|u| {
            let mut out = DMatrix::zeros(nu, target.dim());
            for (k, sym) in target.symbols().iter().enumerate() {
                debug_assert!(sym.node < n);
                let src = resp.basis.columns(resp.basis.index_of(*sym));
                let dst = target.columns(k);
                out.columns_mut(dst.start, dst.len())
                    .copy_from(&u.view((0, src.start), (nu, src.len())));
            }
            out
        })
        .collect()
}

/// Full certification report for one problem on its network graph.
#[derive(Clone, Debug, Serialize)]
pub struct Certificate {
    /// Optimal cost predicted by the Riccati solution.
    pub theorem_cost: f64,
    /// Exact cost of the realized controller.
    pub policy_cost: f64,
    pub relays_added: usize,
    pub comparison: Comparison,
}

/// Synthesize (expanding relays if needed), then compare against the oracle
/// solved on the original information structure.
pub fn certify(graph: &NetworkGraph, problem: &LqProblem) -> Result<Certificate> {
    certify_with_cap(graph, problem, DEFAULT_DECISION_CAP)
}

pub fn certify_with_cap(graph: &NetworkGraph, problem: &LqProblem, cap: usize) -> Result<Certificate> {
    let delays = delay_matrix(graph)?;
    let oracle = brute_force_solve_with_cap(problem, &delays, cap)?;
    let (g2, p2) = expand_relays(graph, problem)?;
    let ig = InfoGraph::build(&delay_matrix(&g2)?);
    let (vs, ks) = finite_horizon(&p2, &ig)?;
    let theorem_cost = optimal_cost(&vs, &p2, &ig);
    let cr = realize(&p2, &ig, &ks)?;
    let resp = noise_response(&cr, &p2)?;
    let policy_cost = response_cost(&resp, &p2);
    let part = problem.partition();
    let maps = restrict_maps(&resp, part.node_count(), part.inputs().total(), &oracle.basis);
    let comparison = compare(problem, theorem_cost, &maps, &oracle)?;
    Ok(Certificate {
        theorem_cost,
        policy_cost,
        relays_added: g2.node_count() - graph.node_count(),
        comparison,
    })
}

/// Compare an arbitrary realized policy (for instance loaded gains) with the oracle.
pub fn compare_policy(problem: &LqProblem, resp: &NoiseResponse, oracle: &OracleSolution) -> Result<Comparison> {
    let cost = response_cost(resp, problem);
    let part = problem.partition();
    let maps = restrict_maps(resp, part.node_count(), part.inputs().total(), &oracle.basis);
    compare(problem, cost, &maps, oracle)
}
