//! Controller realization over internal states `ζ^s`, closed-loop simulation,
//! costs, and exact noise-to-signal maps.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::blockmat::{embed_add, extract, BlockPartition};
use crate::error::{Error, Result};
use crate::infograph::{label_sets, noise_info_sets, InfoGraph};
use crate::netgraph::DelayMatrix;
use crate::problem::{Disturbances, LqProblem, NoiseBasis, NoiseSampler};
use crate::riccati::GainSchedule;

type UpdateMaps = Vec<Vec<(usize, DMatrix<f64>)>>;

/// Gains plus the closed-loop update maps `A^{sr} + B^{sr} K^r` for every edge `r -> s`.
#[derive(Clone, Debug)]
pub struct ControllerRealization {
    ig: InfoGraph,
    partition: BlockPartition,
    gains: Vec<Vec<DMatrix<f64>>>,
    updates: Vec<UpdateMaps>,
    steps: Option<usize>,
}

/// Finite-horizon realization; one gain set per step.
pub fn realize(problem: &LqProblem, ig: &InfoGraph, gains: &GainSchedule) -> Result<ControllerRealization> {
    let steps = problem.steps()?;
    if gains.steps() != steps {
        return Err(Error::Dimension(format!(
            "gain schedule has {} steps, horizon is {steps}",
            gains.steps()
        )));
    }
    build(problem, ig, gains, Some(steps))
}

/// Time-invariant realization from a single gain set.
pub fn realize_steady(problem: &LqProblem, ig: &InfoGraph, gains: &GainSchedule) -> Result<ControllerRealization> {
    if gains.steps() != 1 || !problem.is_time_invariant() {
        return Err(Error::Dimension(
            "steady realization needs one gain set and time-invariant data".into(),
        ));
    }
    build(problem, ig, gains, None)
}

fn build(
    problem: &LqProblem,
    ig: &InfoGraph,
    gains: &GainSchedule,
    steps: Option<usize>,
) -> Result<ControllerRealization> {
    let part = problem.partition();
    if ig.plant_nodes() != part.node_count() {
        return Err(Error::Dimension(
            "info graph and problem disagree on node count".into(),
        ));
    }
    let mut updates = Vec::with_capacity(gains.steps());
    for (t, ks) in gains.k.iter().enumerate() {
        if ks.len() != ig.len() {
            return Err(Error::Dimension(format!(
                "step {t} has {} gains for {} info nodes",
                ks.len(),
                ig.len()
            )));
        }
        let stage = problem.stage(t);
        let mut per_s = vec![Vec::new(); ig.len()];
        for (r, k) in ks.iter().enumerate() {
            let (rs, s) = (ig.node(r), ig.descendant(r));
            let want = (part.inputs().subset_dim(rs), part.states().subset_dim(rs));
            if k.shape() != want {
                return Err(Error::Dimension(format!(
                    "gain at step {t}, info node {r} is {}x{}, expected {}x{}",
                    k.nrows(),
                    k.ncols(),
                    want.0,
                    want.1
                )));
            }
            let a = stage.a.submatrix(ig.node(s), rs)?;
            let b = stage.b.submatrix(ig.node(s), rs)?;
            per_s[s].push((r, a + b * k));
        }
        updates.push(per_s);
    }
    Ok(ControllerRealization {
        ig: ig.clone(),
        partition: part.clone(),
        gains: gains.k.clone(),
        updates,
        steps,
    })
}

impl ControllerRealization {
    pub fn info_graph(&self) -> &InfoGraph {
        &self.ig
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    /// `None` for a time-invariant realization.
    pub fn steps(&self) -> Option<usize> {
        self.steps
    }

    fn slot(&self, t: usize) -> usize {
        t.min(self.gains.len() - 1)
    }

    pub fn gain(&self, t: usize, r: usize) -> &DMatrix<f64> {
        &self.gains[self.slot(t)][r]
    }

    /// `(r, A^{sr} + B^{sr} K^r)` for every `r -> s`.
    pub fn updates(&self, t: usize, s: usize) -> &[(usize, DMatrix<f64>)] {
        &self.updates[self.slot(t)][s]
    }

    pub fn zeta_dim(&self, s: usize) -> usize {
        self.partition.states().subset_dim(self.ig.node(s))
    }

    pub fn zeros(&self) -> Vec<DVector<f64>> {
        (0..self.ig.len()).map(|s| DVector::zeros(self.zeta_dim(s))).collect()
    }

    /// Place each node's noise block into the root that receives it.
    pub fn inject(&self, zetas: &mut [DVector<f64>], noise: &DVector<f64>) {
        let xs = self.partition.states();
        for i in 0..self.ig.plant_nodes() {
            let s = self.ig.root(i);
            let off = xs.offset_within(self.ig.node(s), i).unwrap();
            let r = xs.range(i);
            let mut block = zetas[s].rows_mut(off, r.len());
            block += noise.rows(r.start, r.len());
        }
    }

    pub fn initial(&self, x0: &DVector<f64>) -> Vec<DVector<f64>> {
        let mut z = self.zeros();
        self.inject(&mut z, x0);
        z
    }

    /// `ζ_{t+1}^s = Σ_{r→s} (A^{sr}+B^{sr}K_t^r) ζ_t^r + Σ_{w^i→s} I^{s,i} w_t^i`.
    pub fn advance(&self, t: usize, zetas: &[DVector<f64>], w: &DVector<f64>) -> Vec<DVector<f64>> {
        let mut next = self.zeros();
        for (s, acc) in next.iter_mut().enumerate() {
            for (r, m) in self.updates(t, s) {
                *acc += m * &zetas[*r];
            }
        }
        self.inject(&mut next, w);
        next
    }

    /// `u_t = Σ_r I^{V,r} K_t^r ζ_t^r`.
    pub fn input(&self, t: usize, zetas: &[DVector<f64>]) -> DVector<f64> {
        let us = self.partition.inputs();
        let mut u = DVector::zeros(us.total());
        for (r, z) in zetas.iter().enumerate() {
            let v = self.gain(t, r) * z;
            embed_add(&mut u, us, self.ig.node(r), &v).expect("gain rows match node inputs");
        }
        u
    }

    /// `Σ_s I^{V,s} ζ^s`.
    pub fn compose_state(&self, zetas: &[DVector<f64>]) -> DVector<f64> {
        let xs = self.partition.states();
        let mut x = DVector::zeros(xs.total());
        for (s, z) in zetas.iter().enumerate() {
            embed_add(&mut x, xs, self.ig.node(s), z).expect("zeta sized by its node");
        }
        x
    }

    /// Block matrix of all update maps over the stacked `ζ` vector.
    pub fn lifted_update(&self, t: usize) -> DMatrix<f64> {
        let dims: Vec<usize> = (0..self.ig.len()).map(|s| self.zeta_dim(s)).collect();
        let mut off = vec![0];
        for d in &dims {
            off.push(off.last().unwrap() + d);
        }
        let total = *off.last().unwrap();
        let mut m = DMatrix::zeros(total, total);
        for s in 0..self.ig.len() {
            for (r, blk) in self.updates(t, s) {
                m.view_mut((off[s], off[*r]), blk.shape()).copy_from(blk);
            }
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    /// `zeta[t][s]` for `t = 0..=T`.
    pub zeta: Vec<Vec<DVector<f64>>>,
    /// Stage costs followed by the terminal cost.
    pub stage_costs: Vec<f64>,
}

impl Trajectory {
    pub fn cost(&self) -> f64 {
        self.stage_costs.iter().sum()
    }

    /// `max_t |x_t - Σ_s I^{V,s} ζ_t^s|_∞`.
    pub fn decomposition_error(&self, cr: &ControllerRealization) -> f64 {
        self.x
            .iter()
            .zip(&self.zeta)
            .map(|(x, z)| (x - cr.compose_state(z)).amax())
            .fold(0.0, f64::max)
    }
}

fn check_disturbances(problem: &LqProblem, dist: &Disturbances) -> Result<usize> {
    let steps = problem.steps()?;
    let nx = problem.partition().states().total();
    if dist.steps() != steps || dist.x0.len() != nx || dist.w.iter().any(|w| w.len() != nx) {
        return Err(Error::Dimension(format!(
            "disturbances do not match horizon {steps} and state dimension {nx}"
        )));
    }
    Ok(steps)
}

/// Closed-loop rollout of plant and controller states.
pub fn simulate(cr: &ControllerRealization, problem: &LqProblem, dist: &Disturbances) -> Result<Trajectory> {
    let steps = check_disturbances(problem, dist)?;
    let mut x = vec![dist.x0.clone()];
    let mut u = Vec::with_capacity(steps);
    let mut zeta = vec![cr.initial(&dist.x0)];
    let mut stage_costs = Vec::with_capacity(steps + 1);
    for t in 0..steps {
        let st = problem.stage(t);
        let ut = cr.input(t, &zeta[t]);
        stage_costs.push(problem.stage_cost(t, &x[t], &ut));
        let next = st.a.entries() * &x[t] + st.b.entries() * &ut + &dist.w[t];
        zeta.push(cr.advance(t, &zeta[t], &dist.w[t]));
        x.push(next);
        u.push(ut);
    }
    let xt = &x[steps];
    stage_costs.push(xt.dot(&(problem.qf().entries() * xt)));
    Ok(Trajectory {
        x,
        u,
        zeta,
        stage_costs,
    })
}

/// Rollout in which the controller rebuilds its noise estimates from the
/// measured plant state, as the distributed agents do, rather than reading
/// `w` directly. Mathematically identical to [`simulate`]; numerically it keeps
/// `Σ_s I^{V,s} ζ^s` locked to `x` when the plant is open-loop unstable.
pub fn simulate_measured(
    cr: &ControllerRealization,
    problem: &LqProblem,
    dist: &Disturbances,
) -> Result<Trajectory> {
    let steps = check_disturbances(problem, dist)?;
    let mut x = vec![dist.x0.clone()];
    let mut u = Vec::with_capacity(steps);
    let mut zeta = vec![cr.initial(&dist.x0)];
    let mut stage_costs = Vec::with_capacity(steps + 1);
    let silent = DVector::zeros(dist.x0.len());
    for t in 0..steps {
        let st = problem.stage(t);
        let ut = cr.input(t, &zeta[t]);
        stage_costs.push(problem.stage_cost(t, &x[t], &ut));
        let next = st.a.entries() * &x[t] + st.b.entries() * &ut + &dist.w[t];
        let mut z = cr.advance(t, &zeta[t], &silent);
        let residual = &next - cr.compose_state(&z);
        cr.inject(&mut z, &residual);
        zeta.push(z);
        x.push(next);
        u.push(ut);
    }
    let xt = &x[steps];
    stage_costs.push(xt.dot(&(problem.qf().entries() * xt)));
    Ok(Trajectory {
        x,
        u,
        zeta,
        stage_costs,
    })
}

/// Realized quadratic cost of a trajectory.
pub fn evaluate_cost(traj: &Trajectory, problem: &LqProblem) -> Result<f64> {
    problem.trajectory_cost(&traj.x, &traj.u)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub rollouts: usize,
}

/// Mean realized cost over `n` rollouts drawn from one seeded stream.
pub fn monte_carlo_cost(
    cr: &ControllerRealization,
    problem: &LqProblem,
    n: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if n == 0 {
        return Err(Error::Validation("need at least one rollout".into()));
    }
    let sampler = NoiseSampler::new(problem)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut mean, mut m2) = (0.0, 0.0);
    for k in 0..n {
        let dist = sampler.sample(&mut rng);
        let c = simulate(cr, problem, &dist)?.cost();
        let delta = c - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (c - mean);
    }
    let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
    Ok(MonteCarloEstimate {
        mean,
        stderr: (var / n as f64).sqrt(),
        rollouts: n,
    })
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilityReport {
    /// `(self-loop node ids, spectral radius of A^{ss} + B^{ss} K^s)`.
    pub self_loops: Vec<(Vec<u32>, f64)>,
    pub lifted_radius: f64,
}

impl StabilityReport {
    pub fn stable(&self) -> bool {
        self.lifted_radius < 1.0 && self.self_loops.iter().all(|(_, r)| *r < 1.0)
    }
}

pub fn stability_check(cr: &ControllerRealization) -> StabilityReport {
    let ids = cr.partition.node_ids();
    let self_loops = cr
        .ig
        .self_loops()
        .into_iter()
        .map(|s| {
            let blk = cr
                .updates(0, s)
                .iter()
                .find(|(r, _)| *r == s)
                .map(|(_, m)| m.clone())
                .expect("self-loop feeds itself");
            let label = cr.ig.node(s).iter().map(|i| ids[i]).collect();
            (label, spectral_radius(&blk))
        })
        .collect();
    StabilityReport {
        self_loops,
        lifted_radius: spectral_radius(&cr.lifted_update(0)),
    }
}

/// Exact linear maps from the stacked noise basis to `ζ`, `x` and `u`.
#[derive(Clone, Debug)]
pub struct NoiseResponse {
    pub basis: NoiseBasis,
    /// `zeta[t][s]`, `t = 0..=T`.
    pub zeta: Vec<Vec<DMatrix<f64>>>,
    /// `x[t]`, `t = 0..=T`, propagated through the plant equations.
    pub x: Vec<DMatrix<f64>>,
    /// `u[t]`, `t < T`.
    pub u: Vec<DMatrix<f64>>,
}

/// Identity on the columns of symbol `(step, i)`, as a `total x basis` map.
fn symbol_injection(basis: &NoiseBasis, problem: &LqProblem, step: i64, i: usize) -> DMatrix<f64> {
    let xs = problem.partition().states();
    let k = basis.index_of(crate::infograph::NoiseSymbol { step, node: i });
    let cols = basis.columns(k);
    let r = xs.range(i);
    let mut m = DMatrix::zeros(xs.total(), basis.dim());
    for d in 0..r.len() {
        m[(r.start + d, cols.start + d)] = 1.0;
    }
    m
}

pub fn noise_response(cr: &ControllerRealization, problem: &LqProblem) -> Result<NoiseResponse> {
    let steps = problem.steps()?;
    let xs = problem.partition().states();
    let basis = NoiseBasis::new(xs, steps);
    let dim = basis.dim();
    let n = problem.partition().node_count();
    let inject_all = |step: i64| -> DMatrix<f64> {
        let mut m = DMatrix::zeros(xs.total(), dim);
        for i in 0..n {
            m += symbol_injection(&basis, problem, step, i);
        }
        m
    };
    let restrict = |full: &DMatrix<f64>, s: usize| -> DMatrix<f64> {
        let idx = xs.indices(cr.ig.node(s)).unwrap();
        full.select_rows(&idx)
    };
    let inj0 = inject_all(-1);
    let mut zeta = vec![(0..cr.ig.len())
        .map(|s| {
            let roots = cr.ig.rooted_at(s);
            let mut m = DMatrix::zeros(xs.total(), dim);
            for i in roots {
                m += symbol_injection(&basis, problem, -1, i);
            }
            restrict(&m, s)
        })
        .collect::<Vec<_>>()];
    let mut x = vec![inj0];
    let mut u = Vec::with_capacity(steps);
    let us = problem.partition().inputs();
    for t in 0..steps {
        let mut ut = DMatrix::zeros(us.total(), dim);
        for (r, z) in zeta[t].iter().enumerate() {
            let idx = us.indices(cr.ig.node(r))?;
            let v = cr.gain(t, r) * z;
            for (row, &g) in idx.iter().enumerate() {
                let mut dst = ut.row_mut(g);
                dst += v.row(row);
            }
        }
        let mut next = Vec::with_capacity(cr.ig.len());
        for s in 0..cr.ig.len() {
            let mut m = DMatrix::zeros(cr.zeta_dim(s), dim);
            for (r, blk) in cr.updates(t, s) {
                m += blk * &zeta[t][*r];
            }
            for i in cr.ig.rooted_at(s) {
                m += restrict(&symbol_injection(&basis, problem, t as i64, i), s);
            }
            next.push(m);
        }
        let st = problem.stage(t);
        let xn = st.a.entries() * &x[t] + st.b.entries() * &ut + inject_all(t as i64);
        zeta.push(next);
        x.push(xn);
        u.push(ut);
    }
    Ok(NoiseResponse { basis, zeta, x, u })
}

/// `E[ξ' M' W M ξ]` over the independent noise basis.
pub fn expected_quadratic(
    basis: &NoiseBasis,
    problem: &LqProblem,
    map: &DMatrix<f64>,
    weight: &DMatrix<f64>,
) -> f64 {
    (0..basis.len())
        .map(|k| {
            let cols = basis.columns(k);
            let c = map.columns(cols.start, cols.len());
            (c.transpose() * weight * c * basis.covariance(problem, k)).trace()
        })
        .sum()
}

/// Exact expected cost of an arbitrary structured linear policy.
pub fn policy_cost(cr: &ControllerRealization, problem: &LqProblem) -> Result<f64> {
    let resp = noise_response(cr, problem)?;
    Ok(response_cost(&resp, problem))
}

pub fn response_cost(resp: &NoiseResponse, problem: &LqProblem) -> f64 {
    let steps = resp.u.len();
    let mut total = 0.0;
    for t in 0..steps {
        let (xm, um) = (&resp.x[t], &resp.u[t]);
        let mut stacked = DMatrix::zeros(xm.nrows() + um.nrows(), xm.ncols());
        stacked.rows_mut(0, xm.nrows()).copy_from(xm);
        stacked.rows_mut(xm.nrows(), um.nrows()).copy_from(um);
        let joint = problem.stage(t).joint_weight();
        total += expected_quadratic(&resp.basis, problem, &stacked, &joint);
    }
    total + expected_quadratic(&resp.basis, problem, &resp.x[steps], problem.qf().entries())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FeasibilityReport {
    /// Largest entry of any `ζ_t^s` map outside the columns of `L_t^s`.
    pub zeta_outside_labels: f64,
    /// Largest entry of any `u_t^i` map outside the columns of `Î_t^i`.
    pub input_outside_info: f64,
}

impl FeasibilityReport {
    pub fn exact(&self) -> bool {
        self.zeta_outside_labels == 0.0 && self.input_outside_info == 0.0
    }
}

pub fn feasibility(resp: &NoiseResponse, ig: &InfoGraph, delays: &DelayMatrix, problem: &LqProblem) -> FeasibilityReport {
    let outside = |m: &DMatrix<f64>, allowed: &crate::infograph::SymbolSet| -> f64 {
        let mut worst = 0.0f64;
        for (k, sym) in resp.basis.symbols().iter().enumerate() {
            if allowed.contains(sym) {
                continue;
            }
            let cols = resp.basis.columns(k);
            worst = worst.max(m.columns(cols.start, cols.len()).amax());
        }
        worst
    };
    let us = problem.partition().inputs();
    let mut report = FeasibilityReport {
        zeta_outside_labels: 0.0,
        input_outside_info: 0.0,
    };
    for (t, zs) in resp.zeta.iter().enumerate() {
        let labels = label_sets(ig, t);
        for (s, z) in zs.iter().enumerate() {
            report.zeta_outside_labels = report.zeta_outside_labels.max(outside(z, &labels[s]));
        }
    }
    for (t, um) in resp.u.iter().enumerate() {
        let info = noise_info_sets(delays, t);
        for (i, set) in info.iter().enumerate() {
            let r = us.range(i);
            let rows = um.rows(r.start, r.len()).into_owned();
            report.input_outside_info = report.input_outside_info.max(outside(&rows, set));
        }
    }
    report
}

/// The input block of node `i` from a full input vector.
pub fn node_input(u: &DVector<f64>, partition: &BlockPartition, i: usize) -> DVector<f64> {
    extract(u, partition.inputs(), &crate::blockmat::NodeSet::singleton(i)).expect("node in range")
}
