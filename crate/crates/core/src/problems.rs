//! The built-in reaction–diffusion problems.
//!
//! Every problem is split as partition 0 = diffusion, partition 1 = reaction,
//! with a species-major state (all `u`, then all `v`).

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{BoundaryCondition, EdgeConditions, TensorGrid2D};
use crate::system::{
    all_edges, block_diagonal, diffusion_operator, GoalFunction, LinearGoal, PointReaction, ReactionDiffusion,
    SplitSystem, ZeroSystem,
};
use crate::tableau::{build_imex22, GarkTableau};

/// Which species the integral goal covers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GoalSpecies {
    #[default]
    First,
    All,
}

/// Problem identifier and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "problem", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// Manufactured reaction–diffusion problem with a known exact solution.
    Calvo {
        #[serde(default = "default_nu")]
        nu: f64,
    },
    GrayScott {
        #[serde(default = "gs_f")]
        f: f64,
        #[serde(default = "gs_k")]
        k: f64,
        #[serde(default = "gs_du")]
        du: f64,
        #[serde(default = "gs_dv")]
        dv: f64,
        #[serde(default)]
        goal: GoalSpecies,
    },
    Bsvd,
    /// Zero right-hand side on the unit square; the state stays constant.
    Zero,
}

fn default_nu() -> f64 {
    0.1
}
fn gs_f() -> f64 {
    0.024
}
fn gs_k() -> f64 {
    0.06
}
fn gs_du() -> f64 {
    8e-2
}
fn gs_dv() -> f64 {
    4e-2
}

/// Exact solution `u(t, x, y)` of a manufactured problem.
pub type ExactSolution = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

impl ProblemSpec {
    pub fn calvo() -> Self {
        ProblemSpec::Calvo { nu: default_nu() }
    }

    pub fn gray_scott() -> Self {
        ProblemSpec::GrayScott {
            f: gs_f(),
            k: gs_k(),
            du: gs_du(),
            dv: gs_dv(),
            goal: GoalSpecies::First,
        }
    }

    /// Looks a problem up by name with default parameters.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "calvo" => Ok(ProblemSpec::calvo()),
            "gray-scott" => Ok(ProblemSpec::gray_scott()),
            "bsvd" => Ok(ProblemSpec::Bsvd),
            "zero" => Ok(ProblemSpec::Zero),
            _ => Err(Error::InvalidParameter(format!(
                "unknown problem '{name}' (expected calvo, gray-scott, bsvd or zero)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProblemSpec::Calvo { .. } => "calvo",
            ProblemSpec::GrayScott { .. } => "gray-scott",
            ProblemSpec::Bsvd => "bsvd",
            ProblemSpec::Zero => "zero",
        }
    }

    pub fn domain(&self) -> ((f64, f64), (f64, f64)) {
        match self {
            ProblemSpec::Calvo { .. } => ((-1.0, 3.0), (-1.0, 1.0)),
            ProblemSpec::GrayScott { .. } => ((0.0, 2.0), (0.0, 2.0)),
            ProblemSpec::Bsvd | ProblemSpec::Zero => ((0.0, 1.0), (0.0, 1.0)),
        }
    }

    pub fn boundary(&self) -> EdgeConditions {
        match self {
            ProblemSpec::Calvo { .. } => EdgeConditions::all(BoundaryCondition::DirichletZero),
            _ => EdgeConditions::all(BoundaryCondition::NeumannZero),
        }
    }

    pub fn default_time_span(&self) -> (f64, f64) {
        match self {
            ProblemSpec::Calvo { .. } => (0.0, 1.5),
            ProblemSpec::GrayScott { .. } => (0.0, 50.0),
            ProblemSpec::Bsvd => (0.0, 7.0),
            ProblemSpec::Zero => (0.0, 1.0),
        }
    }

    pub fn default_cells(&self) -> (usize, usize) {
        match self {
            ProblemSpec::Calvo { .. } => (40, 20),
            ProblemSpec::GrayScott { .. } => (10, 10),
            ProblemSpec::Bsvd => (40, 40),
            ProblemSpec::Zero => (4, 4),
        }
    }

    pub fn species(&self) -> usize {
        match self {
            ProblemSpec::GrayScott { .. } => 2,
            _ => 1,
        }
    }

    /// Uniform `nx × ny` grid on the problem's domain.
    pub fn grid(&self, nx: usize, ny: usize) -> Result<TensorGrid2D> {
        let (x, y) = self.domain();
        TensorGrid2D::uniform(x, y, nx, ny, self.boundary())
    }

    fn check_params(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            ProblemSpec::Calvo { nu } => positive("nu", nu),
            ProblemSpec::GrayScott { f, k, du, dv, .. } => {
                positive("f", f)?;
                positive("k", k)?;
                positive("du", du)?;
                positive("dv", dv)
            }
            _ => Ok(()),
        }
    }

    /// Binds the problem to `grid` on `[t0, tf]`.
    pub fn instantiate(&self, grid: &TensorGrid2D, t0: f64, tf: f64) -> Result<ProblemInstance> {
        self.check_params()?;
        let ((x0, x1), (y0, y1)) = self.domain();
        let tol = 1e-12 * (1.0 + x1.abs().max(y1.abs()));
        let (gx, gy) = (grid.x_range(), grid.y_range());
        if (gx.0 - x0).abs() > tol || (gx.1 - x1).abs() > tol || (gy.0 - y0).abs() > tol || (gy.1 - y1).abs() > tol {
            return Err(Error::InvalidGrid(format!(
                "{} is posed on [{x0}, {x1}]×[{y0}, {y1}], grid covers [{}, {}]×[{}, {}]",
                self.name(),
                gx.0,
                gx.1,
                gy.0,
                gy.1
            )));
        }
        if grid.bc() != self.boundary() {
            return Err(Error::InvalidGrid(format!("{}: boundary conditions do not match", self.name())));
        }
        if !(tf > t0) {
            return Err(Error::InvalidParameter(format!("empty time span [{t0}, {tf}]")));
        }
        let coords = grid.unknown_coordinates();
        let n = coords.len();
        let (system, y0v, goal, exact): (Arc<dyn SplitSystem>, Vec<f64>, LinearGoal, Option<ExactSolution>) = match *self {
            ProblemSpec::Calvo { nu } => {
                debug_assert!(all_edges(grid, BoundaryCondition::DirichletZero));
                let diff = diffusion_operator(grid, &|_, _| nu);
                let sys = ReactionDiffusion::new(grid, diff, Box::new(CalvoReaction { nu }));
                let y0v = coords.iter().map(|&(x, y)| calvo_exact(t0, x, y)).collect();
                let exact: ExactSolution = Arc::new(calvo_exact);
                (Arc::new(sys), y0v, LinearGoal::integral(grid, 1, &[0]), Some(exact))
            }
            ProblemSpec::GrayScott { f, k, du, dv, goal } => {
                let diff = block_diagonal(&[
                    diffusion_operator(grid, &|_, _| du),
                    diffusion_operator(grid, &|_, _| dv),
                ]);
                let sys = ReactionDiffusion::new(grid, diff, Box::new(GrayScottReaction { f, k }));
                let mut y0v = vec![0.0; 2 * n];
                for (m, &(x, y)) in coords.iter().enumerate() {
                    let (u, v) = gray_scott_initial(x, y);
                    y0v[m] = u;
                    y0v[n + m] = v;
                }
                let included: &[usize] = match goal {
                    GoalSpecies::First => &[0],
                    GoalSpecies::All => &[0, 1],
                };
                (Arc::new(sys), y0v, LinearGoal::integral(grid, 2, included), None)
            }
            ProblemSpec::Bsvd => {
                let diff = diffusion_operator(grid, &bsvd_diffusivity);
                let sys = ReactionDiffusion::new(grid, diff, Box::new(BsvdReaction));
                let y0v = coords.iter().map(|&(x, y)| bsvd_initial(x, y)).collect();
                (Arc::new(sys), y0v, LinearGoal::integral(grid, 1, &[0]), None)
            }
            ProblemSpec::Zero => {
                let exact: ExactSolution = Arc::new(|_, _, _| 1.0);
                (
                    Arc::new(ZeroSystem::new(n, 2)),
                    vec![1.0; n],
                    LinearGoal::integral(grid, 1, &[0]),
                    Some(exact),
                )
            }
        };
        Ok(ProblemInstance {
            spec: self.clone(),
            grid: grid.clone(),
            system,
            y0: y0v,
            t0,
            tf,
            goal: Arc::new(goal),
            exact,
        })
    }
}

/// The two-stage IMEX method arranged for the problem library: diffusion
/// (partition 0) implicit, reaction (partition 1) explicit.
pub fn imex_for_problems(gamma: f64, alpha: f64) -> Result<GarkTableau> {
    build_imex22(gamma, alpha)?.with_partition_order(&[1, 0])
}

/// A problem bound to a grid and a time span.
#[derive(Clone)]
pub struct ProblemInstance {
    pub spec: ProblemSpec,
    pub grid: TensorGrid2D,
    pub system: Arc<dyn SplitSystem>,
    pub y0: Vec<f64>,
    pub t0: f64,
    pub tf: f64,
    pub goal: Arc<dyn GoalFunction>,
    pub exact: Option<ExactSolution>,
}

impl std::fmt::Debug for ProblemInstance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemInstance")
            .field("spec", &self.spec)
            .field("cells", &self.grid.cells())
            .field("dim", &self.system.dim())
            .field("t0", &self.t0)
            .field("tf", &self.tf)
            .finish()
    }
}

impl ProblemInstance {
    /// The same problem on another grid.
    pub fn on_grid(&self, grid: &TensorGrid2D) -> Result<ProblemInstance> {
        self.spec.instantiate(grid, self.t0, self.tf)
    }

    /// Exact solution sampled on the unknowns, if known.
    pub fn exact_state(&self, t: f64) -> Option<Vec<f64>> {
        self.exact
            .as_ref()
            .map(|u| self.grid.unknown_coordinates().iter().map(|&(x, y)| u(t, x, y)).collect())
    }
}

fn calvo_profile(x: f64) -> (f64, f64) {
    // (g, g'') of the piecewise quadratic x-profile; g'' is averaged at x = 2
    if (x - 2.0).abs() <= 1e-12 {
        ((x + 1.0) * (2.0 * x - 21.0 / 4.0), 1.0)
    } else if x < 2.0 {
        ((x + 1.0) * (2.0 * x - 21.0 / 4.0), 4.0)
    } else {
        ((3.0 - x) * (x - 23.0 / 4.0), -2.0)
    }
}

/// Exact solution of the manufactured problem.
pub fn calvo_exact(t: f64, x: f64, y: f64) -> f64 {
    (2.0 + (PI * t).cos()) / 30.0 * calvo_profile(x).0 * (y * y - 1.0)
}

/// Forcing that makes [`calvo_exact`] solve `u_t = νΔu + u − u³ + f`.
pub fn calvo_forcing(nu: f64, t: f64, x: f64, y: f64) -> f64 {
    let s = (2.0 + (PI * t).cos()) / 30.0;
    let ds = -PI * (PI * t).sin() / 30.0;
    let (g, g2) = calvo_profile(x);
    let h = y * y - 1.0;
    let u = s * g * h;
    let lap = s * (g2 * h + 2.0 * g);
    ds * g * h - nu * lap - u + u * u * u
}

struct CalvoReaction {
    nu: f64,
}

impl PointReaction for CalvoReaction {
    fn species(&self) -> usize {
        1
    }

    fn eval(&self, t: f64, x: f64, y: f64, u: &[f64], out: &mut [f64]) {
        out[0] = u[0] - u[0].powi(3) + calvo_forcing(self.nu, t, x, y);
    }

    fn jacobian(&self, _t: f64, _x: f64, _y: f64, u: &[f64], out: &mut [f64]) {
        out[0] = 1.0 - 3.0 * u[0] * u[0];
    }
}

struct GrayScottReaction {
    f: f64,
    k: f64,
}

impl PointReaction for GrayScottReaction {
    fn species(&self) -> usize {
        2
    }

    fn eval(&self, _t: f64, _x: f64, _y: f64, s: &[f64], out: &mut [f64]) {
        let (u, v) = (s[0], s[1]);
        let uv2 = u * v * v;
        out[0] = -uv2 + self.f * (1.0 - u);
        out[1] = uv2 - (self.f + self.k) * v;
    }

    fn jacobian(&self, _t: f64, _x: f64, _y: f64, s: &[f64], out: &mut [f64]) {
        let (u, v) = (s[0], s[1]);
        out[0] = -v * v - self.f;
        out[1] = -2.0 * u * v;
        out[2] = v * v;
        out[3] = 2.0 * u * v - (self.f + self.k);
    }
}

/// Initial `(u, v)` of the Gray–Scott problem.
pub fn gray_scott_initial(x: f64, y: f64) -> (f64, f64) {
    if (0.75..=1.25).contains(&x) {
        let v = 0.25 * (4.0 * PI * x).sin().powi(2) * (4.0 * PI * y).sin().powi(2);
        (1.0 - 2.0 * v, v)
    } else {
        (0.0, 1.0)
    }
}

struct BsvdReaction;

impl PointReaction for BsvdReaction {
    fn species(&self) -> usize {
        1
    }

    fn eval(&self, _t: f64, _x: f64, _y: f64, u: &[f64], out: &mut [f64]) {
        out[0] = bsvd_reaction(u[0]);
    }

    fn jacobian(&self, _t: f64, _x: f64, _y: f64, u: &[f64], out: &mut [f64]) {
        let u = u[0];
        // d/du of 10(1 - u²)(u + 0.6)
        out[0] = 10.0 * (1.0 - u * u - 2.0 * u * (u + 0.6));
    }
}

/// `10 (1 − u²)(u + 0.6)`
pub fn bsvd_reaction(u: f64) -> f64 {
    10.0 * (1.0 - u * u) * (u + 0.6)
}

/// Diffusion coefficient of the BSVD problem.
pub fn bsvd_diffusivity(x: f64, y: f64) -> f64 {
    0.1 * [0.6, 0.75, 0.9]
        .iter()
        .map(|yi| (-100.0 * ((x - 0.5).powi(2) + (y - yi).powi(2))).exp())
        .sum::<f64>()
}

pub fn bsvd_initial(x: f64, y: f64) -> f64 {
    2.0 * (-10.0 * ((x - 0.5).powi(2) + (y + 0.1).powi(2))).exp() - 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm_inf, rel_err};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn calvo_exact_examples() {
        for y in [-0.5, 0.0, 0.3] {
            assert_eq!(calvo_exact(0.0, -1.0, y), 0.0);
        }
        for t in [0.0, 0.4, 1.3] {
            for y in [-0.7, 0.2] {
                let expect = (2.0 + (PI * t).cos()) / 30.0 * (-15.0 / 4.0) * (y * y - 1.0);
                let left = (2.0 + (PI * t).cos()) / 30.0 * (3.0 * (4.0 - 21.0 / 4.0)) * (y * y - 1.0);
                let right = (2.0 + (PI * t).cos()) / 30.0 * ((3.0 - 2.0) * (2.0 - 23.0 / 4.0)) * (y * y - 1.0);
                assert!((left - expect).abs() < 1e-15);
                assert!((right - expect).abs() < 1e-15);
                assert!((calvo_exact(t, 2.0, y) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn calvo_forcing_cancels_the_pde_residual() {
        // residual of the continuous PDE on the exact solution, with derivatives
        // taken by differences of high order away from the kink
        let nu = 0.1;
        let u = calvo_exact;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let t: f64 = rng.gen_range(0.0..1.5);
            let mut x: f64 = rng.gen_range(-0.9..2.9);
            if (x - 2.0).abs() < 0.05 {
                x += 0.1;
            }
            let y: f64 = rng.gen_range(-0.9..0.9);
            let e = 1e-3;
            let ut = (u(t + e, x, y) - u(t - e, x, y)) / (2.0 * e);
            let uxx = (u(t, x + e, y) - 2.0 * u(t, x, y) + u(t, x - e, y)) / (e * e);
            let uyy = (u(t, x, y + e) - 2.0 * u(t, x, y) + u(t, x, y - e)) / (e * e);
            let v = u(t, x, y);
            let res = ut - (nu * (uxx + uyy) + v - v.powi(3) + calvo_forcing(nu, t, x, y));
            assert!(res.abs() < 1e-5, "residual {res} at ({t}, {x}, {y})");
        }
    }

    #[test]
    fn calvo_semi_discretization_is_exact_when_the_kink_is_a_node() {
        let spec = ProblemSpec::calvo();
        let grid = spec.grid(20, 10).unwrap();
        let p = spec.instantiate(&grid, 0.0, 1.5).unwrap();
        for t in [0.0, 0.7] {
            let y = p.exact_state(t).unwrap();
            let mut f = p.system.eval_vec(0, t, &y);
            let r = p.system.eval_vec(1, t, &y);
            for (a, b) in f.iter_mut().zip(&r) {
                *a += b;
            }
            let e = 1e-6;
            let ut: Vec<f64> = p
                .exact_state(t + e)
                .unwrap()
                .iter()
                .zip(p.exact_state(t - e).unwrap())
                .map(|(a, b)| (a - b) / (2.0 * e))
                .collect();
            assert!(rel_err(&f, &ut) < 1e-8, "{}", rel_err(&f, &ut));
        }
    }

    #[test]
    fn gray_scott_examples() {
        assert_eq!(gray_scott_initial(0.5, 0.5), (0.0, 1.0));
        let (u, v) = gray_scott_initial(1.0, 0.125);
        assert!((v - 0.0).abs() < 1e-15 && (u - 1.0).abs() < 1e-15);
        let r = GrayScottReaction { f: 0.024, k: 0.06 };
        let mut j = [0.0; 4];
        r.jacobian(0.0, 0.0, 0.0, &[1.0, 0.0], &mut j);
        assert_eq!(j[0], -0.024);
    }

    #[test]
    fn bsvd_examples() {
        let expect = 0.1 * (1.0 + (-2.25f64).exp() + (-9.0f64).exp());
        assert!((bsvd_diffusivity(0.5, 0.6) - expect).abs() < 1e-15);
        for u in [-1.0, 1.0, -0.6] {
            assert!(bsvd_reaction(u).abs() < 1e-14);
        }
        assert!((bsvd_initial(0.5, 0.0) - 0.80967).abs() < 1e-5);
    }

    #[test]
    fn jacobians_match_differences_on_every_problem() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for spec in [ProblemSpec::calvo(), ProblemSpec::gray_scott(), ProblemSpec::Bsvd] {
            let grid = spec.grid(6, 4).unwrap();
            let (t0, tf) = spec.default_time_span();
            let p = spec.instantiate(&grid, t0, tf).unwrap();
            let d = p.system.dim();
            for _ in 0..10 {
                let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                for q in 0..2 {
                    let jv = p.system.jac_vec(q, 0.3, &y, &v);
                    let eps = 1e-6 * (1.0 + norm_inf(&y));
                    let plus: Vec<f64> = y.iter().zip(&v).map(|(a, b)| a + eps * b).collect();
                    let minus: Vec<f64> = y.iter().zip(&v).map(|(a, b)| a - eps * b).collect();
                    let fd: Vec<f64> = p
                        .system
                        .eval_vec(q, 0.3, &plus)
                        .iter()
                        .zip(p.system.eval_vec(q, 0.3, &minus))
                        .map(|(a, b)| (a - b) / (2.0 * eps))
                        .collect();
                    assert!(rel_err(&jv, &fd) < 1e-5, "{} partition {q}", spec.name());
                }
            }
        }
    }

    #[test]
    fn instantiate_checks_domain_and_parameters() {
        let wrong = TensorGrid2D::uniform(
            (0.0, 1.0),
            (0.0, 1.0),
            4,
            4,
            EdgeConditions::all(BoundaryCondition::DirichletZero),
        )
        .unwrap();
        assert!(ProblemSpec::calvo().instantiate(&wrong, 0.0, 1.0).is_err());
        let g = ProblemSpec::calvo().grid(4, 4).unwrap();
        assert!(ProblemSpec::Calvo { nu: -1.0 }.instantiate(&g, 0.0, 1.0).is_err());
        assert!(ProblemSpec::by_name("heat").is_err());
    }

    #[test]
    fn spec_json_defaults() {
        let s: ProblemSpec = serde_json::from_str(r#"{"problem":"gray-scott","f":0.03}"#).unwrap();
        assert_eq!(
            s,
            ProblemSpec::GrayScott {
                f: 0.03,
                k: 0.06,
                du: 8e-2,
                dv: 4e-2,
                goal: GoalSpecies::First
            }
        );
        let c: ProblemSpec = serde_json::from_str(r#"{"problem":"calvo"}"#).unwrap();
        assert_eq!(c, ProblemSpec::calvo());
    }

    #[test]
    fn calvo_spatial_truncation_is_second_order_on_smooth_fields() {
        // the piecewise-quadratic exact solution is reproduced exactly, so the
        // order is checked on a smooth field instead
        let field = |x: f64, y: f64| (PI * (x + 1.0) / 4.0).sin() * (PI * (y + 1.0) / 2.0).sin();
        let lap = |x: f64, y: f64| -(PI * PI / 16.0 + PI * PI / 4.0) * field(x, y);
        let spec = ProblemSpec::calvo();
        let mut errs = Vec::new();
        let mut grid = spec.grid(8, 4).unwrap();
        for _ in 0..3 {
            let d = diffusion_operator(&grid, &|_, _| 1.0);
            let c = grid.unknown_coordinates();
            let u: Vec<f64> = c.iter().map(|&(x, y)| field(x, y)).collect();
            let l: Vec<f64> = c.iter().map(|&(x, y)| lap(x, y)).collect();
            errs.push(norm_inf(&crate::linalg::sub(&d.mul_vec(&u), &l)));
            grid = grid.refine_uniform();
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((1.9..2.1).contains(&order), "order {order}");
        }
    }
}
