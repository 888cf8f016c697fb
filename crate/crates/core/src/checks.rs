//! Self-checks of a build against the dense oracles on seeded random split
//! systems: tableau identities, finite-difference sensitivities, dot-product
//! duality and agreement of the three adjoint forms.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adjoint::{adjoint_step_mu, sweep_with, AdjointForm};
use crate::error::Result;
use crate::integrator::{GarkIntegrator, StageSolverConfig};
use crate::linalg::{dot, norm2, rel_err};
use crate::mesh::TimeGrid;
use crate::oracle::{fd_sensitivity_at, propagator_for_record};
use crate::system::{GoalFunction, QuadraticGoal, RandomSplitSystem, SplitSystem};
use crate::tableau::GarkTableau;

/// One measured quantity and the bound it must stay within.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub suite: String,
    pub case: String,
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    fn new(suite: &str, case: String, value: f64, tolerance: f64) -> Self {
        Check {
            suite: suite.into(),
            case,
            value,
            tolerance,
        }
    }

    /// NaN fails.
    pub fn passed(&self) -> bool {
        self.value <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    pub seed: u64,
    pub systems: usize,
    pub max_dim: usize,
    pub steps: usize,
    pub t_final: f64,
    pub fd_tolerance: f64,
    pub duality_tolerance: f64,
    pub lambda_tolerance: f64,
    pub stage_tolerance: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            seed: 0,
            systems: 5,
            max_dim: 10,
            steps: 8,
            t_final: 1.0,
            fd_tolerance: 1e-5,
            duality_tolerance: 1e-10,
            lambda_tolerance: 1e-12,
            stage_tolerance: 1e-10,
        }
    }
}

/// Coefficient identities of the tableau and of its adjoint transform.
pub fn tableau_checks(tab: &GarkTableau) -> Result<Vec<Check>> {
    let report = tab.validate();
    let worst = report.violations.iter().map(|v| v.residual).fold(0.0, f64::max);
    let mut out = vec![Check::new("tableau", format!("{} order and structure", tab.name()), worst, 0.0)];
    let adj = match tab.adjoint_coefficients() {
        Ok(adj) => adj,
        Err(e) => {
            out.push(Check::new("tableau", format!("adjoint transform: {e}"), f64::INFINITY, 0.0));
            return Ok(out);
        }
    };
    let p = tab.num_partitions();
    let mut b_diff = 0.0f64;
    let mut a_diff = 0.0f64;
    for q in 0..p {
        for i in 0..tab.stage_count(q) {
            b_diff = b_diff.max((adj.b_bar(q, i) - tab.b(q, i)).abs());
            for m in 0..p {
                for j in 0..tab.stage_count(m) {
                    let expect = tab.b(m, j) * tab.a(m, q, j, i) / tab.b(q, i);
                    a_diff = a_diff.max((adj.a_bar(q, m, i, j) - expect).abs());
                }
            }
        }
    }
    out.push(Check::new("tableau", "adjoint weights equal forward weights".into(), b_diff, 0.0));
    out.push(Check::new("tableau", "adjoint coupling transform".into(), a_diff, 1e-14));
    let reversed: Vec<_> = tab.stage_schedule().iter().rev().copied().collect();
    let same = if adj.stage_schedule() == reversed.as_slice() { 0.0 } else { 1.0 };
    out.push(Check::new("tableau", "adjoint schedule is reversed".into(), same, 0.0));
    Ok(out)
}

fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Checks on one random system of dimension `d`.
fn system_checks(tab: &GarkTableau, cfg: &CheckConfig, seed: u64, d: usize) -> Result<Vec<Check>> {
    let sys = Arc::new(RandomSplitSystem::new(seed, d, tab.num_partitions()));
    let solver = StageSolverConfig {
        rtol: 1e-13,
        atol: 1e-15,
        ..StageSolverConfig::default()
    };
    let integ = GarkIntegrator::new(sys.clone(), tab.clone(), solver)?;
    let grid = TimeGrid::uniform(0.0, cfg.t_final, cfg.steps)?;
    let traj = integ.integrate(&RandomSplitSystem::initial_state(seed, d), &grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let goal = QuadraticGoal::new((0..d).map(|_| rng.gen_range(0.5..2.0)).collect());
    let label = |what: &str| format!("system {seed} (d = {d}) {what}");

    let mu = sweep_with(&integ, &traj, &goal, AdjointForm::Mu)?;
    let theta = sweep_with(&integ, &traj, &goal, AdjointForm::Theta)?;
    let ell = sweep_with(&integ, &traj, &goal, AdjointForm::Ell)?;
    let mut out = Vec::new();

    // finite differences re-integrate with the dense oracle from the
    // production states
    let mut fd_worst = 0.0f64;
    for n in [0, cfg.steps / 2, cfg.steps - 1] {
        let yn = &traj.states[n];
        let fd: Vec<f64> = (0..d)
            .map(|j| {
                let eps = 1e-6 * (1.0 + yn[j].abs());
                fd_sensitivity_at(sys.as_ref(), tab, &grid, yn, &goal as &dyn GoalFunction, n, j, eps)
            })
            .collect::<Result<_>>()?;
        fd_worst = fd_worst.max(rel_err(mu.lambda(n), &fd));
    }
    out.push(Check::new("fd-sensitivity", label("λ vs central differences"), fd_worst, cfg.fd_tolerance));

    let mut dual_worst = 0.0f64;
    for rec in &traj.steps {
        let phi = propagator_for_record(sys.as_ref(), tab, rec)?;
        let v = random_vec(&mut rng, d);
        let w = random_vec(&mut rng, d);
        let phi_v: Vec<f64> = (&phi * nalgebra::DVector::from_column_slice(&v)).iter().copied().collect();
        let (phi_t_w, _) = adjoint_step_mu(&integ, rec, &w)?;
        let scale = (norm2(&w) * norm2(&phi_v)).max(norm2(&phi_t_w) * norm2(&v));
        dual_worst = dual_worst.max((dot(&w, &phi_v) - dot(&phi_t_w, &v)).abs() / scale);
    }
    out.push(Check::new("duality", label("⟨w, Φv⟩ = ⟨Φᵀw, v⟩ per step"), dual_worst, cfg.duality_tolerance));

    let lam_worst = (0..=cfg.steps)
        .map(|n| rel_err(theta.lambda(n), mu.lambda(n)).max(rel_err(ell.lambda(n), mu.lambda(n))))
        .fold(0.0, f64::max);
    out.push(Check::new("forms", label("λ agreement of θ, μ, ℓ sweeps"), lam_worst, cfg.lambda_tolerance));

    let mut jt_worst = 0.0f64;
    let mut hb_worst = 0.0f64;
    for (n, rec) in traj.steps.iter().enumerate() {
        for q in 0..tab.num_partitions() {
            for i in 0..tab.stage_count(q) {
                let th = &theta.steps[n].theta[q][i];
                let jt = sys.jac_t_vec(q, rec.stage_times[q][i], &rec.stages[q][i], &mu.steps[n].mu[q][i]);
                jt_worst = jt_worst.max(rel_err(&jt, th));
                let hb: Vec<f64> = ell.steps[n].ell[q][i].iter().map(|v| rec.h * tab.b(q, i) * v).collect();
                hb_worst = hb_worst.max(rel_err(&hb, th));
            }
        }
    }
    out.push(Check::new("forms", label("θ = Jᵀμ on every stage"), jt_worst, cfg.stage_tolerance));
    out.push(Check::new("forms", label("θ = h b ℓ on every stage"), hb_worst, cfg.stage_tolerance));
    Ok(out)
}

/// All suites; systems use seeds `cfg.seed..cfg.seed + cfg.systems` and
/// dimensions cycling through `2..=cfg.max_dim`, starting at the largest.
pub fn oracle_checks(tab: &GarkTableau, cfg: &CheckConfig) -> Result<Vec<Check>> {
    let mut out = tableau_checks(tab)?;
    if !out.iter().all(Check::passed) {
        out.push(Check::new("systems", "skipped: invalid tableau".into(), f64::INFINITY, 0.0));
        return Ok(out);
    }
    for k in 0..cfg.systems {
        let span = cfg.max_dim.max(3) - 1;
        let d = 2 + (span - 1 + 3 * k) % span;
        out.extend(system_checks(tab, cfg, cfg.seed + k as u64, d)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tableau::{build_imex22, default_imex22};

    #[test]
    fn default_build_passes() {
        let checks = oracle_checks(&default_imex22(), &CheckConfig::default()).unwrap();
        assert_eq!(checks.len(), 4 + 5 * 5);
        for c in &checks {
            assert!(c.passed(), "{c:?}");
        }
        assert!(checks.iter().filter(|c| c.suite != "tableau").any(|c| c.case.contains("d = 10")));
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = CheckConfig {
            systems: 2,
            seed: 11,
            ..CheckConfig::default()
        };
        let a = oracle_checks(&default_imex22(), &cfg).unwrap();
        let b = oracle_checks(&default_imex22(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupted_tableau_is_reported() {
        let mut doc: serde_json::Value = serde_json::from_str(&default_imex22().to_json().unwrap()).unwrap();
        doc["weights"][0][0] = serde_json::json!(0.5);
        let tab = GarkTableau::from_json(&doc.to_string()).unwrap();
        let checks = oracle_checks(&tab, &CheckConfig::default()).unwrap();
        assert!(!checks[0].passed());
        assert_eq!(checks.last().unwrap().suite, "systems");
    }

    #[test]
    fn nan_fails() {
        assert!(!Check::new("x", "y".into(), f64::NAN, 1.0).passed());
    }

    #[test]
    fn other_gamma_also_passes() {
        let tab = build_imex22(1.0 + std::f64::consts::FRAC_1_SQRT_2, 0.5).unwrap();
        let cfg = CheckConfig {
            systems: 2,
            ..CheckConfig::default()
        };
        assert!(oracle_checks(&tab, &cfg).unwrap().iter().all(Check::passed));
    }
}
