//! End-to-end runs on small instances of the problem library.

use gark::adaptivity::{run_campaign, RefinementConfig};
use gark::adjoint::sweep_mu;
use gark::estimate::{run_estimate, run_estimate_cached, ReferenceCache};
use gark::integrator::{GarkIntegrator, StageSolverConfig};
use gark::linalg::rel_err;
use gark::mesh::TimeGrid;
use gark::oracle::{dense_trajectory, fd_sensitivity};
use gark::problems::{imex_for_problems, ProblemSpec};
use gark::tableau::{default_gamma, GarkTableau};
use std::collections::HashMap;
use std::sync::Mutex;

fn tableau() -> GarkTableau {
    imex_for_problems(default_gamma(), default_gamma()).unwrap()
}

#[test]
fn forward_run_matches_the_dense_oracle_on_gray_scott() {
    let spec = ProblemSpec::gray_scott();
    let p = spec.instantiate(&spec.grid(3, 3).unwrap(), 0.0, 1.0).unwrap();
    let solver = StageSolverConfig {
        rtol: 1e-13,
        atol: 1e-15,
        ..StageSolverConfig::default()
    };
    let integ = GarkIntegrator::new(p.system.clone(), tableau(), solver).unwrap();
    let g = TimeGrid::uniform(0.0, 1.0, 5).unwrap();
    let traj = integ.integrate(&p.y0, &g).unwrap();
    let dense = dense_trajectory(p.system.as_ref(), &tableau(), &g, &p.y0).unwrap();
    for (a, b) in traj.states.iter().zip(&dense) {
        assert!(rel_err(a, b) < 1e-11);
    }

    // and its adjoint matches central differences of the goal
    let adj = sweep_mu(&integ, &traj, p.goal.as_ref()).unwrap();
    for j in [0, 5, 17] {
        let fd = fd_sensitivity(p.system.as_ref(), &tableau(), &g, &p.y0, p.goal.as_ref(), 0, j, 1e-6).unwrap();
        assert!((adj.lambda(0)[j] - fd).abs() <= 1e-7 * (1.0 + fd.abs()), "{j}");
    }
}

#[test]
fn replays_are_bit_identical() {
    let spec = ProblemSpec::Bsvd;
    let p = spec.instantiate(&spec.grid(8, 8).unwrap(), 0.0, 0.5).unwrap();
    let g = TimeGrid::with_step(0.0, 0.5, 0.05).unwrap();
    let run = || {
        let integ = GarkIntegrator::new(p.system.clone(), tableau(), StageSolverConfig::default()).unwrap();
        integ.integrate(&p.y0, &g).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn estimate_on_zero_problem_is_zero() {
    let spec = ProblemSpec::Zero;
    let p = spec.instantiate(&spec.grid(4, 4).unwrap(), 0.0, 1.0).unwrap();
    let est = run_estimate(&p, &tableau(), &StageSolverConfig::default(), &TimeGrid::uniform(0.0, 1.0, 4).unwrap()).unwrap();
    let r = est.report;
    assert_eq!(r.e_total, 0.0);
    assert_eq!(r.e_ref, Some(0.0));
    assert!(r.step_map.iter().all(|&v| v == 0.0));
}

#[derive(Default)]
struct MemoryCache(Mutex<HashMap<String, Vec<f64>>>);

impl ReferenceCache for MemoryCache {
    fn load(&self, key: &str) -> Option<Vec<f64>> {
        self.0.lock().unwrap().get(key).cloned()
    }
    fn store(&self, key: &str, state: &[f64]) {
        self.0.lock().unwrap().insert(key.to_string(), state.to_vec());
    }
}

#[test]
fn cached_reference_gives_the_same_report() {
    let spec = ProblemSpec::calvo();
    let p = spec.instantiate(&spec.grid(6, 4).unwrap(), 0.0, 0.6).unwrap();
    let g = TimeGrid::with_step(0.0, 0.6, 0.15).unwrap();
    let cache = MemoryCache::default();
    let solver = StageSolverConfig::default();
    let first = run_estimate_cached(&p, &tableau(), &solver, &g, Some(&cache)).unwrap();
    assert_eq!(cache.0.lock().unwrap().len(), 1);
    let second = run_estimate_cached(&p, &tableau(), &solver, &g, Some(&cache)).unwrap();
    assert_eq!(first.report, second.report);
    assert_eq!(first.report, run_estimate(&p, &tableau(), &solver, &g).unwrap().report);
}

#[test]
fn calvo_campaign_grows_grids_and_keeps_errors_finite() {
    let spec = ProblemSpec::calvo();
    let p = spec.instantiate(&spec.grid(6, 4).unwrap(), 0.0, 0.6).unwrap();
    let g = TimeGrid::with_step(0.0, 0.6, 0.15).unwrap();
    let cfg = RefinementConfig {
        stages: 2,
        ..RefinementConfig::default()
    };
    let logs = run_campaign(&p, &tableau(), &StageSolverConfig::default(), &g, &cfg, None).unwrap();
    assert_eq!(logs.len(), 3);
    for w in logs.windows(2) {
        assert!(w[0].grid.is_subgrid_of(&w[1].grid));
        assert!(w[1].grid.num_cells() > w[0].grid.num_cells());
        assert!(w[1].time.num_steps() > w[0].time.num_steps());
    }
    assert!(logs.iter().all(|l| l.e_ref().is_finite() && l.e_est().is_finite()));
}
