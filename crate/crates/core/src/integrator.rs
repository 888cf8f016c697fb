//! Forward GARK integration with stored stage data.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, BandLu, CsrMatrix};
use crate::mesh::TimeGrid;
use crate::system::SplitSystem;
use crate::tableau::{GarkTableau, StageId};

/// Linear solver for the stage systems `(I − h a J) x = r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinearSolver {
    /// Banded LU with partial pivoting.
    Direct,
    /// Conjugate gradients; the stage matrix must be symmetric positive
    /// definite.
    ConjugateGradient { tol: f64 },
}

/// When the Newton matrix is rebuilt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianPolicy {
    /// Full Newton.
    PerIteration,
    /// Evaluated at the initial guess of each stage.
    PerStage,
    /// Evaluated once per step and partition at `(t_n, y_n)`.
    PerStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSolverConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_iter: usize,
    pub linear_solver: LinearSolver,
    pub jacobian: JacobianPolicy,
}

impl Default for StageSolverConfig {
    fn default() -> Self {
        StageSolverConfig {
            rtol: 1e-10,
            atol: 1e-12,
            max_iter: 20,
            linear_solver: LinearSolver::Direct,
            jacobian: JacobianPolicy::PerStage,
        }
    }
}

impl StageSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::InvalidParameter("solver tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
        }
        if let LinearSolver::ConjugateGradient { tol } = self.linear_solver {
            if !(tol > 0.0) {
                return Err(Error::InvalidParameter("CG tolerance must be positive".into()));
            }
        }
        Ok(())
    }
}

/// A prepared stage matrix `I − s J`, solvable with and without transpose.
#[derive(Debug)]
pub enum StageOperator {
    Factored(BandLu),
    Iterative { matrix: CsrMatrix, tol: f64 },
}

impl StageOperator {
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        match self {
            StageOperator::Factored(lu) => Ok(lu.solve(rhs)),
            StageOperator::Iterative { matrix, tol } => conjugate_gradient(matrix, rhs, *tol, 10 * rhs.len() + 100),
        }
    }

    /// Solves with the transposed matrix.
    pub fn solve_transpose(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        match self {
            StageOperator::Factored(lu) => Ok(lu.solve_transpose(rhs)),
            // symmetric by construction
            StageOperator::Iterative { matrix, tol } => conjugate_gradient(matrix, rhs, *tol, 10 * rhs.len() + 100),
        }
    }
}

impl StageOperator {
    fn memory_bytes(&self) -> usize {
        match self {
            StageOperator::Factored(lu) => lu.memory_bytes(),
            StageOperator::Iterative { matrix, .. } => 16 * matrix.nnz() + 8 * matrix.nrows(),
        }
    }
}

struct CachedOperator {
    partition: usize,
    shift: f64,
    op: Arc<StageOperator>,
}

const CACHE_LIMIT: usize = 64;
/// Relative distance below which a cached shift is reused.
const SHIFT_MATCH: f64 = 1e-10;
const CACHE_BYTES: usize = 768 << 20;

/// A system, a method and a solver configuration bound together.
///
/// Holds a cache of stage matrices for partitions whose Jacobian is constant;
/// the adjoint sweep reuses it for its transposed solves.
pub struct GarkIntegrator {
    system: Arc<dyn SplitSystem>,
    tableau: GarkTableau,
    config: StageSolverConfig,
    cache: Mutex<Vec<CachedOperator>>,
}

/// Stage values, slopes and times of one step.
///
/// Indexed `[partition][stage]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub h: f64,
    pub stages: Vec<Vec<Vec<f64>>>,
    pub slopes: Vec<Vec<Vec<f64>>>,
    pub stage_times: Vec<Vec<f64>>,
}

/// Step solutions `y_0..y_N` and the stage records of every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrajectory {
    pub grid: TimeGrid,
    pub states: Vec<Vec<f64>>,
    pub steps: Vec<StepRecord>,
}

impl ForwardTrajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().unwrap()
    }

    /// JSON snapshot; stage data is dropped unless `with_stages`.
    pub fn to_json(&self, with_stages: bool) -> Result<String> {
        if with_stages {
            Ok(serde_json::to_string(self)?)
        } else {
            #[derive(Serialize)]
            struct States<'a> {
                grid: &'a TimeGrid,
                states: &'a [Vec<f64>],
            }
            Ok(serde_json::to_string(&States {
                grid: &self.grid,
                states: &self.states,
            })?)
        }
    }
}

fn converged(dy: &[f64], y: &[f64], cfg: &StageSolverConfig) -> bool {
    dy.iter().zip(y).all(|(d, v)| d.abs() <= cfg.atol + cfg.rtol * v.abs())
}

fn weighted_norm(dy: &[f64], y: &[f64], cfg: &StageSolverConfig) -> f64 {
    dy.iter()
        .zip(y)
        .map(|(d, v)| d.abs() / (cfg.atol + cfg.rtol * v.abs()))
        .fold(0.0, f64::max)
}

impl GarkIntegrator {
    /// Checks the tableau and the configuration and that the tableau has one
    /// partition per system partition.
    pub fn new(system: Arc<dyn SplitSystem>, tableau: GarkTableau, config: StageSolverConfig) -> Result<Self> {
        tableau.ensure_valid()?;
        config.validate()?;
        if tableau.num_partitions() != system.num_partitions() {
            return Err(Error::DimensionMismatch {
                expected: system.num_partitions(),
                got: tableau.num_partitions(),
            });
        }
        Ok(GarkIntegrator {
            system,
            tableau,
            config,
            cache: Mutex::new(Vec::new()),
        })
    }

    pub fn system(&self) -> &Arc<dyn SplitSystem> {
        &self.system
    }

    pub fn tableau(&self) -> &GarkTableau {
        &self.tableau
    }

    pub fn config(&self) -> &StageSolverConfig {
        &self.config
    }

    /// `I − s J` prepared for solves, and the shift it was built with.
    ///
    /// For linear partitions the operator is cached and may be reused for
    /// any shift within a relative `1e-10` of the one it was built for;
    /// callers correct for the difference.
    pub fn stage_operator(&self, q: usize, s: f64, jac: &CsrMatrix) -> Result<(Arc<StageOperator>, f64)> {
        let cacheable = self.system.is_linear(q);
        if cacheable {
            let cache = self.cache.lock().unwrap();
            if let Some(c) = cache
                .iter()
                .find(|c| c.partition == q && (c.shift - s).abs() <= SHIFT_MATCH * s.abs())
            {
                return Ok((c.op.clone(), c.shift));
            }
        }
        let m = jac.identity_minus(s);
        let op = Arc::new(match self.config.linear_solver {
            LinearSolver::Direct => StageOperator::Factored(BandLu::factor(&m)?),
            LinearSolver::ConjugateGradient { tol } => {
                if !m.is_symmetric(1e-12) {
                    return Err(Error::InvalidParameter(
                        "conjugate gradients need a symmetric stage matrix".into(),
                    ));
                }
                StageOperator::Iterative { matrix: m, tol }
            }
        });
        if cacheable {
            let mut cache = self.cache.lock().unwrap();
            let held: usize = cache.iter().map(|c| c.op.memory_bytes()).sum();
            if cache.len() >= CACHE_LIMIT || held + op.memory_bytes() > CACHE_BYTES {
                cache.clear();
            }
            cache.push(CachedOperator {
                partition: q,
                shift: s,
                op: op.clone(),
            });
        }
        Ok((op, s))
    }

    /// One step from `(t, y)` with step size `h`.
    pub fn step(&self, t: f64, h: f64, y: &[f64]) -> Result<(Vec<f64>, StepRecord)> {
        let tab = &self.tableau;
        let sys = &*self.system;
        let d = sys.dim();
        if y.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: y.len() });
        }
        let p = tab.num_partitions();
        let mut stages: Vec<Vec<Vec<f64>>> = (0..p).map(|q| vec![Vec::new(); tab.stage_count(q)]).collect();
        let mut slopes = stages.clone();
        let stage_times: Vec<Vec<f64>> = (0..p)
            .map(|q| {
                (0..tab.stage_count(q))
                    .map(|i| t + tab.stage_abscissa(StageId::new(q, i)) * h)
                    .collect()
            })
            .collect();
        let mut step_ops: HashMap<(usize, u64), (Arc<StageOperator>, f64)> = HashMap::new();

        for &s in tab.stage_schedule() {
            let (q, i) = (s.partition, s.stage);
            let ts = stage_times[q][i];
            let mut z = y.to_vec();
            for m in 0..p {
                for j in 0..tab.stage_count(m) {
                    let a = tab.a(q, m, i, j);
                    if a != 0.0 && (m, j) != (q, i) {
                        crate::linalg::axpy(h * a, &slopes[m][j], &mut z);
                    }
                }
            }
            let diag = tab.diagonal(s);
            let value = if diag == 0.0 {
                z
            } else {
                self.solve_stage(q, i, ts, h * diag, &z, y, t, &mut step_ops)?
            };
            let k = sys.eval_vec(q, ts, &value);
            if k.iter().any(|v| !v.is_finite()) {
                return Err(Error::StepFailure {
                    partition: q,
                    stage: i,
                    iterations: 0,
                    residual: f64::NAN,
                });
            }
            stages[q][i] = value;
            slopes[q][i] = k;
        }

        let mut next = y.to_vec();
        for q in 0..p {
            for i in 0..tab.stage_count(q) {
                crate::linalg::axpy(h * tab.b(q, i), &slopes[q][i], &mut next);
            }
        }
        Ok((
            next,
            StepRecord {
                t,
                h,
                stages,
                slopes,
                stage_times,
            },
        ))
    }

    /// Newton iteration for `Y = z + s f^{(q)}(T, Y)`.
    #[allow(clippy::too_many_arguments)]
    fn solve_stage(
        &self,
        q: usize,
        i: usize,
        ts: f64,
        s: f64,
        z: &[f64],
        yn: &[f64],
        tn: f64,
        step_ops: &mut HashMap<(usize, u64), (Arc<StageOperator>, f64)>,
    ) -> Result<Vec<f64>> {
        let sys = &*self.system;
        let cfg = &self.config;
        let linear = sys.is_linear(q);
        let mut yv = yn.to_vec();
        let mut op: Option<(Arc<StageOperator>, f64)> = None;
        if linear {
            op = Some(self.stage_operator(q, s, &sys.jacobian(q, ts, &yv))?);
        } else {
            match cfg.jacobian {
                JacobianPolicy::PerStage => op = Some(self.stage_operator(q, s, &sys.jacobian(q, ts, &yv))?),
                JacobianPolicy::PerStep => {
                    let key = (q, s.to_bits());
                    if !step_ops.contains_key(&key) {
                        let o = self.stage_operator(q, s, &sys.jacobian(q, tn, yn))?;
                        step_ops.insert(key, o);
                    }
                    op = step_ops.get(&key).cloned();
                }
                JacobianPolicy::PerIteration => {}
            }
        }
        let mut last = f64::INFINITY;
        for iter in 1..=cfg.max_iter {
            let f = sys.eval_vec(q, ts, &yv);
            let g: Vec<f64> = (0..yv.len()).map(|k| z[k] + s * f[k] - yv[k]).collect();
            let (current, shift) = match (&op, cfg.jacobian) {
                (Some(o), _) if linear || cfg.jacobian != JacobianPolicy::PerIteration => o.clone(),
                _ => self.stage_operator(q, s, &sys.jacobian(q, ts, &yv))?,
            };
            let dy = current.solve(&g)?;
            crate::linalg::axpy(1.0, &dy, &mut yv);
            if dy.iter().any(|v| !v.is_finite()) {
                break;
            }
            // one update with the exact matrix solves a linear stage
            if (linear && shift == s) || converged(&dy, &yv, cfg) {
                return Ok(yv);
            }
            last = weighted_norm(&dy, &yv, cfg);
            if iter == cfg.max_iter {
                return Err(Error::StepFailure {
                    partition: q,
                    stage: i,
                    iterations: iter,
                    residual: last,
                });
            }
        }
        Err(Error::StepFailure {
            partition: q,
            stage: i,
            iterations: cfg.max_iter,
            residual: last,
        })
    }

    /// Integrates over `grid` from `y0`, handing every step to `observe` as
    /// `(n, y_n, y_{n+1}, record)`.
    pub fn integrate_with<F>(&self, y0: &[f64], grid: &TimeGrid, mut observe: F) -> Result<Vec<f64>>
    where
        F: FnMut(usize, &[f64], &[f64], StepRecord) -> Result<()>,
    {
        let mut y = y0.to_vec();
        for n in 0..grid.num_steps() {
            let (next, rec) = self
                .step(grid.nodes()[n], grid.step(n), &y)
                .map_err(|e| e.at_step(n))?;
            observe(n, &y, &next, rec)?;
            y = next;
        }
        Ok(y)
    }

    /// Full trajectory with all stage data.
    pub fn integrate(&self, y0: &[f64], grid: &TimeGrid) -> Result<ForwardTrajectory> {
        let mut states = vec![y0.to_vec()];
        let mut steps = Vec::with_capacity(grid.num_steps());
        self.integrate_with(y0, grid, |_, _, next, rec| {
            states.push(next.to_vec());
            steps.push(rec);
            Ok(())
        })?;
        Ok(ForwardTrajectory {
            grid: grid.clone(),
            states,
            steps,
        })
    }

    /// Step solutions only.
    pub fn integrate_states(&self, y0: &[f64], grid: &TimeGrid) -> Result<Vec<Vec<f64>>> {
        let mut states = vec![y0.to_vec()];
        self.integrate_with(y0, grid, |_, _, next, _| {
            states.push(next.to_vec());
            Ok(())
        })?;
        Ok(states)
    }

    /// Final state only.
    pub fn integrate_final(&self, y0: &[f64], grid: &TimeGrid) -> Result<Vec<f64>> {
        self.integrate_with(y0, grid, |_, _, _, _| Ok(()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rel_err;
    use crate::system::{LinearSplitSystem, RandomSplitSystem, ZeroSystem};
    use crate::tableau::{build_imex22, default_gamma, default_imex22};

    fn integrator(sys: impl SplitSystem + 'static, tab: GarkTableau) -> GarkIntegrator {
        GarkIntegrator::new(Arc::new(sys), tab, StageSolverConfig::default()).unwrap()
    }

    #[test]
    fn zero_rhs_keeps_state() {
        let it = integrator(ZeroSystem::new(3, 2), default_imex22());
        let grid = TimeGrid::uniform(0.0, 1.0, 7).unwrap();
        let tr = it.integrate(&[1.0, -2.0, 3.0], &grid).unwrap();
        assert!(tr.states.iter().all(|s| s == &[1.0, -2.0, 3.0]));
    }

    #[test]
    fn explicit_scalar_stability_function() {
        let g = default_gamma();
        for alpha in [g, 0.5, 0.8] {
            let it = integrator(LinearSplitSystem::scalar(-1.3, 0, 2), build_imex22(g, alpha).unwrap());
            let (h, y0) = (0.2, 0.7);
            let (y1, _) = it.step(0.0, h, &[y0]).unwrap();
            let z: f64 = -1.3 * h;
            // Y1 = y0, Y2 = y0 + z y0/(2α), y1 = y0 + (1−α) z y0 + α z Y2
            let y2 = y0 + z * y0 / (2.0 * alpha);
            let hand = y0 + (1.0 - alpha) * z * y0 + alpha * z * y2;
            assert!((y1[0] - hand).abs() < 1e-15);
            assert!((y1[0] - (1.0 + z + z * z / 2.0) * y0).abs() < 1e-14);
        }
    }

    #[test]
    fn implicit_scalar_matches_sdirk_stability_function() {
        let g = default_gamma();
        let it = integrator(LinearSplitSystem::scalar(-4.0, 1, 2), default_imex22());
        for h in [0.01, 0.3, 2.0] {
            let z: f64 = -4.0 * h;
            // R(z) = 1 + z bᵀ(I − zA)⁻¹1 for A = [[γ,0],[1−γ,γ]]
            let k1 = 1.0 / (1.0 - z * g);
            let k2 = (1.0 + z * (1.0 - g) * k1) / (1.0 - z * g);
            let r = 1.0 + z * ((1.0 - g) * k1 + g * k2);
            let (y1, rec) = it.step(0.0, h, &[1.0]).unwrap();
            assert!((y1[0] - r).abs() < 1e-13);
            // stiff accuracy
            assert!((rec.stages[1][1][0] - y1[0]).abs() < 1e-13);
        }
    }

    #[test]
    fn step_invariants_on_random_nonlinear_systems() {
        let tab = default_imex22();
        for seed in 0..5 {
            let sys = RandomSplitSystem::new(seed, 6, 2);
            let y0 = RandomSplitSystem::initial_state(seed, 6);
            // tableau partition 1 is implicit: put the dissipative block there
            let it = integrator(sys, tab.clone());
            let h = 0.1;
            let (y1, rec) = it.step(0.3, h, &y0).unwrap();
            for s in tab.stage_schedule() {
                let (q, i) = (s.partition, s.stage);
                let mut expect = y0.clone();
                for m in 0..2 {
                    for j in 0..2 {
                        crate::linalg::axpy(h * tab.a(q, m, i, j), &rec.slopes[m][j], &mut expect);
                    }
                }
                assert!(rel_err(&rec.stages[q][i], &expect) < 1e-9);
            }
            assert!(rel_err(&rec.stages[1][1], &y1) < 1e-9);
        }
    }

    #[test]
    fn linear_scalar_global_order_two() {
        let mu = -1.5;
        let it = integrator(LinearSplitSystem::new(vec![
            crate::linalg::CsrMatrix::from_dense(&[vec![0.6 * mu]]),
            crate::linalg::CsrMatrix::from_dense(&[vec![0.4 * mu]]),
        ]), default_imex22());
        let errs: Vec<f64> = [10, 20, 40, 80]
            .iter()
            .map(|&n| {
                let g = TimeGrid::uniform(0.0, 1.0, n).unwrap();
                (it.integrate_final(&[1.0], &g).unwrap()[0] - mu.exp()).abs()
            })
            .collect();
        let slope = (errs[2] / errs[3]).log2();
        assert!((1.8..=2.2).contains(&slope), "slope {slope}");
    }

    #[test]
    fn integration_is_deterministic() {
        let it = integrator(RandomSplitSystem::new(3, 5, 2), default_imex22());
        let g = TimeGrid::uniform(0.0, 1.0, 10).unwrap();
        let y0 = RandomSplitSystem::initial_state(3, 5);
        assert_eq!(it.integrate(&y0, &g).unwrap(), it.integrate(&y0, &g).unwrap());
    }

    #[test]
    fn newton_failure_reports_step_and_stage() {
        let cfg = StageSolverConfig {
            max_iter: 1,
            jacobian: JacobianPolicy::PerStep,
            ..StageSolverConfig::default()
        };
        let it = GarkIntegrator::new(Arc::new(RandomSplitSystem::new(1, 4, 2)), default_imex22(), cfg).unwrap();
        let g = TimeGrid::uniform(0.0, 1.0, 2).unwrap();
        let err = it.integrate(&RandomSplitSystem::initial_state(1, 4), &g).unwrap_err();
        match err {
            Error::AtStep { step, source } => {
                assert_eq!(step, 0);
                assert!(matches!(*source, Error::StepFailure { partition: 1, stage: 0, iterations: 1, .. }));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn jacobian_policies_agree() {
        let g = TimeGrid::uniform(0.0, 1.0, 10).unwrap();
        let y0 = RandomSplitSystem::initial_state(2, 5);
        let results: Vec<Vec<f64>> = [JacobianPolicy::PerIteration, JacobianPolicy::PerStage, JacobianPolicy::PerStep]
            .into_iter()
            .map(|jacobian| {
                let cfg = StageSolverConfig {
                    jacobian,
                    ..StageSolverConfig::default()
                };
                GarkIntegrator::new(Arc::new(RandomSplitSystem::new(2, 5, 2)), default_imex22(), cfg)
                    .unwrap()
                    .integrate_final(&y0, &g)
                    .unwrap()
            })
            .collect();
        assert!(rel_err(&results[1], &results[0]) < 1e-9);
        assert!(rel_err(&results[2], &results[0]) < 1e-9);
    }

    #[test]
    fn conjugate_gradients_require_symmetry() {
        let sym = crate::linalg::CsrMatrix::from_dense(&[vec![-2.0, 1.0], vec![1.0, -2.0]]);
        let cfg = StageSolverConfig {
            linear_solver: LinearSolver::ConjugateGradient { tol: 1e-13 },
            ..StageSolverConfig::default()
        };
        let sys = LinearSplitSystem::new(vec![crate::linalg::CsrMatrix::zeros(2, 2), sym.clone()]);
        let cg = GarkIntegrator::new(Arc::new(sys.clone()), default_imex22(), cfg.clone()).unwrap();
        let lu = GarkIntegrator::new(Arc::new(sys), default_imex22(), StageSolverConfig::default()).unwrap();
        let g = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let a = cg.integrate_final(&[1.0, 0.5], &g).unwrap();
        let b = lu.integrate_final(&[1.0, 0.5], &g).unwrap();
        assert!(rel_err(&a, &b) < 1e-11);
        let skew = crate::linalg::CsrMatrix::from_dense(&[vec![0.0, 1.0], vec![-1.0, 0.0]]);
        let bad = LinearSplitSystem::new(vec![crate::linalg::CsrMatrix::zeros(2, 2), skew]);
        let it = GarkIntegrator::new(Arc::new(bad), default_imex22(), cfg).unwrap();
        assert!(it.step(0.0, 0.1, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn trajectory_json_round_trip() {
        let it = integrator(LinearSplitSystem::random(1, 3, 2), default_imex22());
        let g = TimeGrid::uniform(0.0, 1.0, 3).unwrap();
        let tr = it.integrate(&[1.0, 0.0, -1.0], &g).unwrap();
        let back: ForwardTrajectory = serde_json::from_str(&tr.to_json(true).unwrap()).unwrap();
        assert_eq!(back, tr);
        assert!(tr.to_json(false).unwrap().len() < tr.to_json(true).unwrap().len());
    }
}
