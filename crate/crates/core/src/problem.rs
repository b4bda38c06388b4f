//! LQ problem data: dynamics, costs, noise covariances and their validation.

use std::fmt;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::blockmat::{BlockMatrix, BlockPartition, Blocking};
use crate::error::{Error, Result};
use crate::infograph::NoiseSymbol;
use crate::netgraph::DelayMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Horizon {
    Finite(usize),
    /// Time-invariant data used for steady-state synthesis.
    Infinite,
}

impl Horizon {
    pub fn steps(self) -> Option<usize> {
        match self {
            Horizon::Finite(t) => Some(t),
            Horizon::Infinite => None,
        }
    }
}

/// Data of one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub a: BlockMatrix,
    pub b: BlockMatrix,
    pub q: BlockMatrix,
    pub r: BlockMatrix,
    pub s: BlockMatrix,
    /// Per-node noise covariance `W_t^i`.
    pub w: Vec<DMatrix<f64>>,
}

impl Stage {
    pub fn new(
        partition: &BlockPartition,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        s: DMatrix<f64>,
        w: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let xs = partition.states().clone();
        let us = partition.inputs().clone();
        check_node_covariances("W", &w, &xs)?;
        Ok(Stage {
            a: BlockMatrix::new(xs.clone(), xs.clone(), a)?,
            b: BlockMatrix::new(xs.clone(), us.clone(), b)?,
            q: BlockMatrix::new(xs.clone(), xs.clone(), q)?,
            r: BlockMatrix::new(us.clone(), us.clone(), r)?,
            s: BlockMatrix::new(xs, us, s)?,
            w,
        })
    }

    /// The joint stage weight `[[Q, S], [S', R]]`.
    pub fn joint_weight(&self) -> DMatrix<f64> {
        let (nx, nu) = (self.q.entries().nrows(), self.r.entries().nrows());
        let mut m = DMatrix::zeros(nx + nu, nx + nu);
        m.view_mut((0, 0), (nx, nx)).copy_from(self.q.entries());
        m.view_mut((0, nx), (nx, nu)).copy_from(self.s.entries());
        m.view_mut((nx, 0), (nu, nx))
            .copy_from(&self.s.entries().transpose());
        m.view_mut((nx, nx), (nu, nu)).copy_from(self.r.entries());
        m
    }
}

fn check_node_covariances(what: &str, covs: &[DMatrix<f64>], xs: &Blocking) -> Result<()> {
    if covs.len() != xs.node_count() {
        return Err(Error::Dimension(format!(
            "{what} has {} node blocks, expected {}",
            covs.len(),
            xs.node_count()
        )));
    }
    for (i, c) in covs.iter().enumerate() {
        let d = xs.dim(i);
        if c.shape() != (d, d) {
            return Err(Error::Dimension(format!(
                "{what} block for node position {i} is {}x{}, expected {d}x{d}",
                c.nrows(),
                c.ncols()
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LqProblem {
    partition: BlockPartition,
    horizon: Horizon,
    stages: Vec<Stage>,
    qf: BlockMatrix,
    sigma0: Vec<DMatrix<f64>>,
}

impl LqProblem {
    /// A finite horizon needs one stage per step (or a single stage, which is
    /// replicated); an infinite horizon needs exactly one stage.
    pub fn new(
        partition: BlockPartition,
        horizon: Horizon,
        mut stages: Vec<Stage>,
        qf: DMatrix<f64>,
        sigma0: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        match horizon {
            Horizon::Finite(0) => return Err(Error::Horizon("horizon must be positive".into())),
            Horizon::Finite(t) if stages.len() == 1 && t > 1 => {
                let s = stages[0].clone();
                stages.resize(t, s);
            }
            Horizon::Finite(t) if stages.len() != t => {
                return Err(Error::Horizon(format!(
                    "horizon {t} but {} stages given",
                    stages.len()
                )))
            }
            Horizon::Infinite if stages.len() != 1 => {
                return Err(Error::Horizon(
                    "an infinite horizon takes exactly one time-invariant stage".into(),
                ))
            }
            _ => {}
        }
        let xs = partition.states().clone();
        for st in &stages {
            if st.a.rows() != &xs || st.b.cols() != partition.inputs() {
                return Err(Error::Dimension(
                    "stage blocking does not match the partition".into(),
                ));
            }
        }
        check_node_covariances("Sigma0", &sigma0, &xs)?;
        let qf = BlockMatrix::new(xs.clone(), xs, qf)?;
        Ok(LqProblem {
            partition,
            horizon,
            stages,
            qf,
            sigma0,
        })
    }

    /// Replicate one set of matrices across the horizon.
    #[allow(clippy::too_many_arguments)]
    pub fn time_invariant(
        partition: BlockPartition,
        horizon: Horizon,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        s: DMatrix<f64>,
        qf: DMatrix<f64>,
        w: Vec<DMatrix<f64>>,
        sigma0: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let stage = Stage::new(&partition, a, b, q, r, s, w)?;
        LqProblem::new(partition, horizon, vec![stage], qf, sigma0)
    }

    /// Zero dynamics, identity weights and covariances, no cross term.
    pub fn identity_cost(partition: BlockPartition, horizon: Horizon) -> Self {
        let (nx, nu) = (partition.states().total(), partition.inputs().total());
        let w: Vec<_> = partition
            .states()
            .dims()
            .iter()
            .map(|&d| DMatrix::identity(d, d))
            .collect();
        LqProblem::time_invariant(
            partition,
            horizon,
            DMatrix::zeros(nx, nx),
            DMatrix::zeros(nx, nu),
            DMatrix::identity(nx, nx),
            DMatrix::identity(nu, nu),
            DMatrix::zeros(nx, nu),
            DMatrix::identity(nx, nx),
            w.clone(),
            w,
        )
        .expect("identity problem is well formed")
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    /// Number of steps of a finite-horizon problem.
    pub fn steps(&self) -> Result<usize> {
        self.horizon
            .steps()
            .ok_or_else(|| Error::Horizon("operation needs a finite horizon".into()))
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    /// Stage data for step `t`; infinite-horizon problems return their only stage.
    pub fn stage(&self, t: usize) -> &Stage {
        match self.horizon {
            Horizon::Infinite => &self.stages[0],
            Horizon::Finite(_) => &self.stages[t],
        }
    }

    pub fn qf(&self) -> &BlockMatrix {
        &self.qf
    }

    pub fn sigma0(&self) -> &[DMatrix<f64>] {
        &self.sigma0
    }

    pub fn is_time_invariant(&self) -> bool {
        self.stages.windows(2).all(|w| w[0] == w[1])
    }

    /// The same time-invariant data over a finite horizon of `steps`.
    pub fn with_horizon(&self, steps: usize) -> Result<LqProblem> {
        if !self.is_time_invariant() {
            return Err(Error::Horizon(
                "only time-invariant problems can change horizon".into(),
            ));
        }
        LqProblem::new(
            self.partition.clone(),
            Horizon::Finite(steps),
            vec![self.stages[0].clone()],
            self.qf.entries().clone(),
            self.sigma0.clone(),
        )
    }

    /// Same data with a different terminal weight.
    pub fn with_terminal_weight(&self, qf: DMatrix<f64>) -> Result<LqProblem> {
        LqProblem::new(
            self.partition.clone(),
            self.horizon,
            self.stages.clone(),
            qf,
            self.sigma0.clone(),
        )
    }

    pub fn stages_mut(&mut self) -> &mut [Stage] {
        &mut self.stages
    }

    pub fn sigma0_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.sigma0
    }

    /// Quadratic cost of a realized trajectory.
    pub fn trajectory_cost(&self, x: &[DVector<f64>], u: &[DVector<f64>]) -> Result<f64> {
        let steps = self.steps()?;
        if x.len() != steps + 1 || u.len() != steps {
            return Err(Error::Dimension(format!(
                "trajectory has {} states and {} inputs for horizon {steps}",
                x.len(),
                u.len()
            )));
        }
        let mut total = 0.0;
        for t in 0..steps {
            total += self.stage_cost(t, &x[t], &u[t]);
        }
        total += x[steps].dot(&(self.qf.entries() * &x[steps]));
        Ok(total)
    }

    pub fn stage_cost(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let st = self.stage(t);
        x.dot(&(st.q.entries() * x))
            + 2.0 * x.dot(&(st.s.entries() * u))
            + u.dot(&(st.r.entries() * u))
    }

    /// Draw one disturbance trajectory with a seeded generator.
    pub fn sample_disturbances(&self, seed: u64) -> Result<Disturbances> {
        let sampler = NoiseSampler::new(self)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(sampler.sample(&mut rng))
    }
}

/// One problem-data defect found by [`validate`].
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    /// A nonzero block where the delay matrix demands zero.
    Sparsity {
        step: usize,
        matrix: &'static str,
        row_node: u32,
        col_node: u32,
        max_abs: f64,
    },
    NotSymmetric { what: String, asymmetry: f64 },
    NotPsd { what: String, min_eigenvalue: f64 },
    NotPd { what: String, min_eigenvalue: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Sparsity {
                step,
                matrix,
                row_node,
                col_node,
                max_abs,
            } => write!(
                f,
                "step {step}: {matrix}^{{{row_node},{col_node}}} must vanish (max |entry| {max_abs:e})"
            ),
            Violation::NotSymmetric { what, asymmetry } => {
                write!(f, "{what} is not symmetric (asymmetry {asymmetry:e})")
            }
            Violation::NotPsd { what, min_eigenvalue } => {
                write!(f, "{what} is not PSD (min eigenvalue {min_eigenvalue:e})")
            }
            Violation::NotPd { what, min_eigenvalue } => {
                write!(f, "{what} is not PD (min eigenvalue {min_eigenvalue:e})")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            return Ok(());
        }
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        Err(Error::Validation(msgs.join("; ")))
    }
}

/// Eigenvalues of the symmetric part, plus the asymmetry `max |M - M'|`.
fn sym_spectrum(m: &DMatrix<f64>) -> (DVector<f64>, f64) {
    let asym = (m - m.transpose()).abs().max();
    let sym = (m + m.transpose()) * 0.5;
    (sym.symmetric_eigenvalues(), asym)
}

fn tolerance(spectrum: &DVector<f64>) -> f64 {
    let norm = spectrum.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    1e-9 * (1.0 + norm)
}

/// Minimum eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    sym_spectrum(m).0.min()
}

/// `m` is PSD up to `1e-9 (1 + |m|)`.
pub fn is_psd(m: &DMatrix<f64>) -> bool {
    check_definite(m, "", false).is_none()
}

fn check_definite(m: &DMatrix<f64>, what: &str, strict: bool) -> Option<Violation> {
    if m.is_empty() {
        return None;
    }
    let (eigs, asym) = sym_spectrum(m);
    let tol = tolerance(&eigs);
    if asym > tol {
        return Some(Violation::NotSymmetric {
            what: what.to_string(),
            asymmetry: asym,
        });
    }
    let min = eigs.min();
    if strict && min < tol {
        Some(Violation::NotPd {
            what: what.to_string(),
            min_eigenvalue: min,
        })
    } else if !strict && min < -tol {
        Some(Violation::NotPsd {
            what: what.to_string(),
            min_eigenvalue: min,
        })
    } else {
        None
    }
}

/// Check sparsity conformance against `delays` and the definiteness assumptions.
pub fn validate(problem: &LqProblem, delays: &DelayMatrix) -> Result<ValidationReport> {
    let part = problem.partition();
    let n = part.node_count();
    if delays.size() != n {
        return Err(Error::Dimension(format!(
            "delay matrix is {0}x{0}, problem has {n} nodes",
            delays.size()
        )));
    }
    let ids = part.node_ids();
    let mut report = ValidationReport::default();
    for (t, st) in problem.stages().iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                if delays.get(i, j).within(1) {
                    continue;
                }
                for (name, m) in [("A", &st.a), ("B", &st.b)] {
                    let max_abs = m.block(i, j).abs().max();
                    if max_abs != 0.0 {
                        report.violations.push(Violation::Sparsity {
                            step: t,
                            matrix: name,
                            row_node: ids[i],
                            col_node: ids[j],
                            max_abs,
                        });
                    }
                }
            }
        }
        let checks = [
            (format!("step {t} [[Q,S],[S',R]]"), st.joint_weight(), false),
            (format!("step {t} R"), st.r.entries().clone(), true),
        ];
        for (what, m, strict) in checks {
            report.violations.extend(check_definite(&m, &what, strict));
        }
        for (i, w) in st.w.iter().enumerate() {
            let what = format!("step {t} W[node {}]", ids[i]);
            report.violations.extend(check_definite(w, &what, false));
        }
    }
    report
        .violations
        .extend(check_definite(problem.qf().entries(), "Qf", false));
    for (i, s0) in problem.sigma0().iter().enumerate() {
        let what = format!("Sigma0[node {}]", ids[i]);
        report.violations.extend(check_definite(s0, &what, false));
    }
    Ok(report)
}

/// Initial states and disturbances of one rollout, stacked over all nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Disturbances {
    pub x0: DVector<f64>,
    /// `w[t]` for `t = 0..T`.
    pub w: Vec<DVector<f64>>,
}

impl Disturbances {
    pub fn zeros(state_dim: usize, steps: usize) -> Self {
        Disturbances {
            x0: DVector::zeros(state_dim),
            w: vec![DVector::zeros(state_dim); steps],
        }
    }

    pub fn steps(&self) -> usize {
        self.w.len()
    }
}

/// A square root `L` with `L L' = cov` for a PSD matrix.
fn psd_factor(cov: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if let Some(v) = check_definite(cov, what, false) {
        return Err(Error::Validation(v.to_string()));
    }
    let eig = ((cov + cov.transpose()) * 0.5).symmetric_eigen();
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
}

/// Precomputed covariance factors for repeated sampling.
#[derive(Clone, Debug)]
pub struct NoiseSampler {
    states: Blocking,
    x0: Vec<DMatrix<f64>>,
    w: Vec<Vec<DMatrix<f64>>>,
}

impl NoiseSampler {
    pub fn new(problem: &LqProblem) -> Result<Self> {
        let steps = problem.steps()?;
        let x0 = problem
            .sigma0()
            .iter()
            .map(|c| psd_factor(c, "Sigma0"))
            .collect::<Result<Vec<_>>>()?;
        let mut w = Vec::with_capacity(steps);
        for t in 0..steps {
            w.push(
                problem
                    .stage(t)
                    .w
                    .iter()
                    .map(|c| psd_factor(c, "W"))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(NoiseSampler {
            states: problem.partition().states().clone(),
            x0,
            w,
        })
    }

    fn draw<R: Rng + ?Sized>(&self, factors: &[DMatrix<f64>], rng: &mut R) -> DVector<f64> {
        let mut out = DVector::zeros(self.states.total());
        for (i, f) in factors.iter().enumerate() {
            let z = DVector::from_fn(f.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
            out.rows_mut(self.states.range(i).start, f.nrows())
                .copy_from(&(f * z));
        }
        out
    }

    /// Independent zero-mean Gaussian draws for every node and step.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Disturbances {
        let x0 = self.draw(&self.x0, rng);
        let w = self.w.iter().map(|f| self.draw(f, rng)).collect();
        Disturbances { x0, w }
    }
}

/// Ordered basis of primitive random vectors `x0^i, w_0^i, ..., w_{T-1}^i`.
///
/// Symbols are ordered by step (`-1` for initial states) and then by node.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseBasis {
    symbols: Vec<NoiseSymbol>,
    offsets: Vec<usize>,
    nodes: usize,
}

impl NoiseBasis {
    pub fn new(states: &Blocking, steps: usize) -> Self {
        let n = states.node_count();
        let mut symbols = Vec::with_capacity(n * (steps + 1));
        let mut offsets = vec![0];
        for step in -1..steps as i64 {
            for node in 0..n {
                symbols.push(NoiseSymbol { step, node });
                offsets.push(offsets.last().unwrap() + states.dim(node));
            }
        }
        NoiseBasis {
            symbols,
            offsets,
            nodes: n,
        }
    }

    pub fn symbols(&self) -> &[NoiseSymbol] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Total scalar dimension.
    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn index_of(&self, sym: NoiseSymbol) -> usize {
        (sym.step + 1) as usize * self.nodes + sym.node
    }

    pub fn columns(&self, k: usize) -> Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    pub fn covariance<'a>(&self, problem: &'a LqProblem, k: usize) -> &'a DMatrix<f64> {
        let sym = self.symbols[k];
        if sym.step < 0 {
            &problem.sigma0()[sym.node]
        } else {
            &problem.stage(sym.step as usize).w[sym.node]
        }
    }

    /// Stack a disturbance trajectory into one vector in basis order.
    pub fn stack(&self, states: &Blocking, dist: &Disturbances) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for (k, sym) in self.symbols.iter().enumerate() {
            let src = if sym.step < 0 {
                &dist.x0
            } else {
                &dist.w[sym.step as usize]
            };
            let r = states.range(sym.node);
            out.rows_mut(self.offsets[k], r.len())
                .copy_from(&src.rows(r.start, r.len()));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::netgraph::delay_matrix;

    #[test]
    fn example8_data_conforms() {
        let p = fixtures::example8_problem();
        let d = delay_matrix(&fixtures::example8_graph()).unwrap();
        let report = validate(&p, &d).unwrap();
        assert!(report.is_ok(), "{:?}", report.violations);
    }

    #[test]
    fn example8_with_a14_set_is_flagged_at_block_1_4() {
        let mut p = fixtures::example8_problem();
        let d = delay_matrix(&fixtures::example8_graph()).unwrap();
        let mut a = p.stages()[0].a.clone();
        a.set_block(0, 3, &DMatrix::from_element(1, 1, 1.0)).unwrap();
        p.stages_mut()[0].a = a;
        let report = validate(&p, &d).unwrap();
        assert_eq!(
            report.violations,
            vec![Violation::Sparsity {
                step: 0,
                matrix: "A",
                row_node: 1,
                col_node: 4,
                max_abs: 1.0
            }]
        );
    }

    #[test]
    fn identity_weights_are_valid() {
        let p = LqProblem::identity_cost(BlockPartition::scalar(3), Horizon::Finite(2));
        let d = delay_matrix(&fixtures::example1_graph()).unwrap();
        assert!(validate(&p, &d).unwrap().is_ok());
    }

    #[test]
    fn negative_r_and_indefinite_joint_weight_are_reported() {
        let part = BlockPartition::scalar(1);
        let p = LqProblem::time_invariant(
            part,
            Horizon::Finite(1),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::from_element(1, 1, 1.0),
            vec![DMatrix::identity(1, 1)],
            vec![DMatrix::identity(1, 1)],
        )
        .unwrap();
        let d = DelayMatrix::from_entries(1, vec![crate::netgraph::Delay::ZERO]).unwrap();
        let report = validate(&p, &d).unwrap();
        assert!(matches!(report.violations[..], [Violation::NotPsd { .. }]));
    }

    #[test]
    fn dimension_mismatch_is_structural_error() {
        let p = LqProblem::identity_cost(BlockPartition::scalar(2), Horizon::Finite(1));
        let d = delay_matrix(&fixtures::example1_graph()).unwrap();
        assert!(matches!(validate(&p, &d), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_covariances_sample_exact_zeros() {
        let mut p = fixtures::example1_problem();
        for st in p.stages_mut() {
            for w in &mut st.w {
                w.fill(0.0);
            }
        }
        for s in p.sigma0_mut() {
            s.fill(0.0);
        }
        let d = p.sample_disturbances(7).unwrap();
        assert!(d.x0.iter().all(|&v| v == 0.0));
        assert!(d.w.iter().all(|w| w.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let p = fixtures::example1_problem();
        assert_eq!(p.sample_disturbances(3).unwrap(), p.sample_disturbances(3).unwrap());
        assert_ne!(p.sample_disturbances(3).unwrap(), p.sample_disturbances(4).unwrap());
    }

    #[test]
    fn sampled_moments_match_covariance() {
        // w_0 of a 2-dim node with a correlated covariance.
        let part = BlockPartition::new(vec![1, 2], vec![2, 1], vec![1, 1]).unwrap();
        let mut p = LqProblem::identity_cost(part, Horizon::Finite(1));
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        p.stages_mut()[0].w[0] = cov.clone();
        let sampler = NoiseSampler::new(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut mean = DVector::<f64>::zeros(3);
        let mut second = DMatrix::<f64>::zeros(3, 3);
        for _ in 0..n {
            let w = &sampler.sample(&mut rng).w[0];
            mean += w;
            second += w * w.transpose();
        }
        mean /= n as f64;
        second /= n as f64;
        // 4 sigma / sqrt(N) on each mean component
        for k in 0..2 {
            let sigma = cov[(k, k)].sqrt();
            assert!(mean[k].abs() < 4.0 * sigma / (n as f64).sqrt());
        }
        let est = second.view((0, 0), (2, 2)).into_owned();
        assert!((&est - &cov).norm() / cov.norm() < 0.05);
        // independent nodes: cross second moment near zero
        let cross = second.view((0, 2), (2, 1)).abs().max();
        assert!(cross < 4.0 * (2.0f64).sqrt() / (n as f64).sqrt());
    }

    #[test]
    fn noise_basis_orders_by_step_then_node() {
        let b = Blocking::new(vec![2, 1]);
        let basis = NoiseBasis::new(&b, 2);
        assert_eq!(basis.len(), 6);
        assert_eq!(basis.dim(), 9);
        assert_eq!(basis.symbols()[0], NoiseSymbol { step: -1, node: 0 });
        assert_eq!(basis.symbols()[3], NoiseSymbol { step: 0, node: 1 });
        assert_eq!(basis.index_of(NoiseSymbol { step: 1, node: 1 }), 5);
        assert_eq!(basis.columns(1), 2..3);
    }
}
