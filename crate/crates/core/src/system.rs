//! Additively split ODE systems `y' = Σ_q f^{(q)}(t, y)`, goal functions and
//! the finite-difference building blocks of the problem library.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::CsrMatrix;
use crate::mesh::{BoundaryCondition, TensorGrid2D};

/// A semi-discrete system split into partitions.
///
/// Implementations must be deterministic and free of side effects so that
/// evaluations can be repeated and run concurrently.
pub trait SplitSystem: Send + Sync {
    fn dim(&self) -> usize;

    fn num_partitions(&self) -> usize;

    fn partition_name(&self, q: usize) -> String {
        format!("partition {q}")
    }

    /// Writes `f^{(q)}(t, y)` into `out`.
    fn eval(&self, q: usize, t: f64, y: &[f64], out: &mut [f64]);

    /// Assembled Jacobian `∂f^{(q)}/∂y` at `(t, y)`.
    fn jacobian(&self, q: usize, t: f64, y: &[f64]) -> Arc<CsrMatrix>;

    /// Whether `f^{(q)}` is affine in `y`, so its Jacobian never changes.
    fn is_linear(&self, _q: usize) -> bool {
        false
    }

    fn eval_vec(&self, q: usize, t: f64, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval(q, t, y, &mut out);
        out
    }

    /// `J^{(q)}(t, y) v`
    fn jac_vec(&self, q: usize, t: f64, y: &[f64], v: &[f64]) -> Vec<f64> {
        self.jacobian(q, t, y).mul_vec(v)
    }

    /// `J^{(q)}(t, y)ᵀ v`
    fn jac_t_vec(&self, q: usize, t: f64, y: &[f64], v: &[f64]) -> Vec<f64> {
        self.jacobian(q, t, y).mul_vec_t(v)
    }
}

/// Scalar goal `Q(y)` evaluated on the final state.
pub trait GoalFunction: Send + Sync {
    fn value(&self, y: &[f64]) -> f64;
    fn gradient(&self, y: &[f64]) -> Vec<f64>;
}

/// `Q(y) = wᵀy`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGoal {
    weights: Vec<f64>,
}

impl LinearGoal {
    pub fn new(weights: Vec<f64>) -> Self {
        LinearGoal { weights }
    }

    /// Trapezoidal integral over the domain of the listed species of a
    /// species-major state.
    pub fn integral(grid: &TensorGrid2D, species: usize, included: &[usize]) -> Self {
        let w = grid.quadrature_weights();
        let n = w.len();
        let mut weights = vec![0.0; n * species];
        for &s in included.iter().filter(|&&s| s < species) {
            weights[s * n..(s + 1) * n].copy_from_slice(&w);
        }
        LinearGoal { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl GoalFunction for LinearGoal {
    fn value(&self, y: &[f64]) -> f64 {
        crate::linalg::dot(&self.weights, y)
    }

    fn gradient(&self, _y: &[f64]) -> Vec<f64> {
        self.weights.clone()
    }
}

/// `Q(y) = ½ Σ w_k y_k²`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticGoal {
    weights: Vec<f64>,
}

impl QuadraticGoal {
    pub fn new(weights: Vec<f64>) -> Self {
        QuadraticGoal { weights }
    }
}

impl GoalFunction for QuadraticGoal {
    fn value(&self, y: &[f64]) -> f64 {
        0.5 * self.weights.iter().zip(y).map(|(w, v)| w * v * v).sum::<f64>()
    }

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        self.weights.iter().zip(y).map(|(w, v)| w * v).collect()
    }
}

/// Five-point discretization of `∇·(k ∇u)` on the unknowns of `grid`.
///
/// Flux form on non-uniform spacing with arithmetic averages of the nodal
/// coefficient on faces. Neumann edges use a mirrored ghost node, Dirichlet
/// nodes are eliminated.
pub fn diffusion_operator(grid: &TensorGrid2D, k: &dyn Fn(f64, f64) -> f64) -> CsrMatrix {
    let xs = grid.xs();
    let ys = grid.ys();
    let nodes = grid.unknown_nodes();
    let kn: Vec<Vec<f64>> = ys.iter().map(|&y| xs.iter().map(|&x| k(x, y)).collect()).collect();
    let mut t = Vec::with_capacity(5 * nodes.len());
    for (row, &(i, j)) in nodes.iter().enumerate() {
        let mut couple = |ni: usize, nj: usize, c: f64| {
            t.push((row, row, -c));
            if let Some(col) = grid.unknown_index(ni, nj) {
                t.push((row, col, c));
            }
        };
        // x direction
        let nx = xs.len() - 1;
        let (left, right) = (i.checked_sub(1), (i < nx).then_some(i + 1));
        match (left, right) {
            (Some(l), Some(r)) => {
                let (hl, hr) = (xs[i] - xs[l], xs[r] - xs[i]);
                let dc = 0.5 * (hl + hr);
                couple(l, j, 0.5 * (kn[j][l] + kn[j][i]) / (hl * dc));
                couple(r, j, 0.5 * (kn[j][r] + kn[j][i]) / (hr * dc));
            }
            (None, Some(r)) | (Some(r), None) => {
                let h = (xs[r] - xs[i]).abs();
                couple(r, j, (kn[j][r] + kn[j][i]) / (h * h));
            }
            (None, None) => unreachable!(),
        }
        let ny = ys.len() - 1;
        let (down, up) = (j.checked_sub(1), (j < ny).then_some(j + 1));
        match (down, up) {
            (Some(d), Some(u)) => {
                let (hd, hu) = (ys[j] - ys[d], ys[u] - ys[j]);
                let dc = 0.5 * (hd + hu);
                couple(i, d, 0.5 * (kn[d][i] + kn[j][i]) / (hd * dc));
                couple(i, u, 0.5 * (kn[u][i] + kn[j][i]) / (hu * dc));
            }
            (None, Some(u)) | (Some(u), None) => {
                let h = (ys[u] - ys[j]).abs();
                couple(i, u, (kn[u][i] + kn[j][i]) / (h * h));
            }
            (None, None) => unreachable!(),
        }
    }
    let n = nodes.len();
    CsrMatrix::from_triplets(n, n, &t)
}

/// Block-diagonal stacking of per-species operators.
pub fn block_diagonal(blocks: &[CsrMatrix]) -> CsrMatrix {
    let n: usize = blocks.iter().map(CsrMatrix::nrows).sum();
    let mut t = Vec::new();
    let mut off = 0;
    for b in blocks {
        t.extend(b.triplets().into_iter().map(|(i, j, v)| (i + off, j + off, v)));
        off += b.nrows();
    }
    CsrMatrix::from_triplets(n, n, &t)
}

/// A reaction acting pointwise on the species values at one node.
pub trait PointReaction: Send + Sync {
    fn species(&self) -> usize;

    fn is_linear(&self) -> bool {
        false
    }

    fn eval(&self, t: f64, x: f64, y: f64, u: &[f64], out: &mut [f64]);

    /// Row-major `species × species` Jacobian.
    fn jacobian(&self, t: f64, x: f64, y: f64, u: &[f64], out: &mut [f64]);
}

/// Partition 0: linear diffusion. Partition 1: pointwise reaction.
pub struct ReactionDiffusion {
    nodes: usize,
    coords: Vec<(f64, f64)>,
    diffusion: Arc<CsrMatrix>,
    reaction: Box<dyn PointReaction>,
}

impl ReactionDiffusion {
    /// `diffusion` acts on the full species-major state.
    pub fn new(grid: &TensorGrid2D, diffusion: CsrMatrix, reaction: Box<dyn PointReaction>) -> Self {
        let coords = grid.unknown_coordinates();
        assert_eq!(diffusion.nrows(), coords.len() * reaction.species());
        ReactionDiffusion {
            nodes: coords.len(),
            coords,
            diffusion: Arc::new(diffusion),
            reaction,
        }
    }

    pub fn diffusion(&self) -> &CsrMatrix {
        &self.diffusion
    }

    pub fn species(&self) -> usize {
        self.reaction.species()
    }
}

impl SplitSystem for ReactionDiffusion {
    fn dim(&self) -> usize {
        self.nodes * self.reaction.species()
    }

    fn num_partitions(&self) -> usize {
        2
    }

    fn partition_name(&self, q: usize) -> String {
        ["diffusion", "reaction"][q].to_string()
    }

    fn eval(&self, q: usize, t: f64, y: &[f64], out: &mut [f64]) {
        match q {
            0 => self.diffusion.matvec(y, out),
            _ => {
                let s = self.reaction.species();
                let n = self.nodes;
                let mut u = vec![0.0; s];
                let mut r = vec![0.0; s];
                for (k, &(x, yc)) in self.coords.iter().enumerate() {
                    for a in 0..s {
                        u[a] = y[a * n + k];
                    }
                    self.reaction.eval(t, x, yc, &u, &mut r);
                    for a in 0..s {
                        out[a * n + k] = r[a];
                    }
                }
            }
        }
    }

    fn jacobian(&self, q: usize, t: f64, y: &[f64]) -> Arc<CsrMatrix> {
        if q == 0 {
            return self.diffusion.clone();
        }
        let s = self.reaction.species();
        let n = self.nodes;
        let mut u = vec![0.0; s];
        let mut jac = vec![0.0; s * s];
        let mut t3 = Vec::with_capacity(n * s * s);
        for (k, &(x, yc)) in self.coords.iter().enumerate() {
            for a in 0..s {
                u[a] = y[a * n + k];
            }
            self.reaction.jacobian(t, x, yc, &u, &mut jac);
            for a in 0..s {
                for b in 0..s {
                    t3.push((a * n + k, b * n + k, jac[a * s + b]));
                }
            }
        }
        Arc::new(CsrMatrix::from_triplets(n * s, n * s, &t3))
    }

    fn is_linear(&self, q: usize) -> bool {
        q == 0 || self.reaction.is_linear()
    }
}

/// `f^{(q)}(t, y) = A_q y` with constant matrices.
#[derive(Debug, Clone)]
pub struct LinearSplitSystem {
    mats: Vec<Arc<CsrMatrix>>,
}

impl LinearSplitSystem {
    pub fn new(mats: Vec<CsrMatrix>) -> Self {
        assert!(!mats.is_empty());
        let d = mats[0].nrows();
        assert!(mats.iter().all(|m| m.nrows() == d && m.ncols() == d));
        LinearSplitSystem {
            mats: mats.into_iter().map(Arc::new).collect(),
        }
    }

    /// `y' = μ y` placed entirely in partition `q` of `p` partitions.
    pub fn scalar(mu: f64, q: usize, p: usize) -> Self {
        LinearSplitSystem::new(
            (0..p)
                .map(|m| CsrMatrix::from_dense(&[vec![if m == q { mu } else { 0.0 }]]))
                .collect(),
        )
    }

    /// Seeded random matrices; partition 0 is shifted to be strongly
    /// dissipative.
    pub fn random(seed: u64, d: usize, p: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LinearSplitSystem::new(
            (0..p)
                .map(|q| {
                    let rows: Vec<Vec<f64>> = (0..d)
                        .map(|i| {
                            (0..d)
                                .map(|j| {
                                    let v: f64 = rng.gen_range(-1.0..1.0);
                                    if q == 0 && i == j { v - 3.0 } else { v }
                                })
                                .collect()
                        })
                        .collect();
                    CsrMatrix::from_dense(&rows)
                })
                .collect(),
        )
    }

    pub fn matrix(&self, q: usize) -> &CsrMatrix {
        &self.mats[q]
    }
}

impl SplitSystem for LinearSplitSystem {
    fn dim(&self) -> usize {
        self.mats[0].nrows()
    }

    fn num_partitions(&self) -> usize {
        self.mats.len()
    }

    fn eval(&self, q: usize, _t: f64, y: &[f64], out: &mut [f64]) {
        self.mats[q].matvec(y, out);
    }

    fn jacobian(&self, q: usize, _t: f64, _y: &[f64]) -> Arc<CsrMatrix> {
        self.mats[q].clone()
    }

    fn is_linear(&self, _q: usize) -> bool {
        true
    }
}

/// All partitions identically zero.
#[derive(Debug, Clone)]
pub struct ZeroSystem {
    dim: usize,
    partitions: usize,
}

impl ZeroSystem {
    pub fn new(dim: usize, partitions: usize) -> Self {
        ZeroSystem { dim, partitions }
    }
}

impl SplitSystem for ZeroSystem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_partitions(&self) -> usize {
        self.partitions
    }

    fn eval(&self, _q: usize, _t: f64, _y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn jacobian(&self, _q: usize, _t: f64, _y: &[f64]) -> Arc<CsrMatrix> {
        Arc::new(CsrMatrix::zeros(self.dim, self.dim))
    }

    fn is_linear(&self, _q: usize) -> bool {
        true
    }
}

/// Seeded nonlinear system with dense partitions
/// `f^{(q)} = A_q y + c_q ⊙ tanh(B_q y) + s_q sin t`.
///
/// Partition 0 is shifted towards dissipation so that it suits the implicit
/// slot of an IMEX method.
#[derive(Debug, Clone)]
pub struct RandomSplitSystem {
    d: usize,
    a: Vec<Vec<Vec<f64>>>,
    b: Vec<Vec<Vec<f64>>>,
    c: Vec<Vec<f64>>,
    s: Vec<Vec<f64>>,
}

impl RandomSplitSystem {
    pub fn new(seed: u64, d: usize, p: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mat = |shift: f64, scale: f64| -> Vec<Vec<f64>> {
            (0..d)
                .map(|i| {
                    (0..d)
                        .map(|j| scale * rng.gen_range(-1.0..1.0) + if i == j { shift } else { 0.0 })
                        .collect()
                })
                .collect()
        };
        let a = (0..p).map(|q| mat(if q == 0 { -2.0 } else { 0.0 }, 0.5)).collect();
        let b = (0..p).map(|_| mat(0.0, 1.0)).collect();
        let mut vecs = |scale: f64| -> Vec<Vec<f64>> {
            (0..p)
                .map(|_| (0..d).map(|_| scale * rng.gen_range(-1.0..1.0)).collect())
                .collect()
        };
        let c = vecs(1.0);
        let s = vecs(0.5);
        RandomSplitSystem { d, a, b, c, s }
    }

    /// A seeded initial state with entries in `[-1, 1]`.
    pub fn initial_state(seed: u64, d: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }
}

fn dense_mul(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter().map(|r| crate::linalg::dot(r, x)).collect()
}

impl SplitSystem for RandomSplitSystem {
    fn dim(&self) -> usize {
        self.d
    }

    fn num_partitions(&self) -> usize {
        self.a.len()
    }

    fn eval(&self, q: usize, t: f64, y: &[f64], out: &mut [f64]) {
        let ay = dense_mul(&self.a[q], y);
        let by = dense_mul(&self.b[q], y);
        for i in 0..self.d {
            out[i] = ay[i] + self.c[q][i] * by[i].tanh() + self.s[q][i] * t.sin();
        }
    }

    fn jacobian(&self, q: usize, _t: f64, y: &[f64]) -> Arc<CsrMatrix> {
        let by = dense_mul(&self.b[q], y);
        let rows: Vec<Vec<f64>> = (0..self.d)
            .map(|i| {
                let sech2 = 1.0 - by[i].tanh().powi(2);
                (0..self.d)
                    .map(|j| self.a[q][i][j] + self.c[q][i] * sech2 * self.b[q][i][j])
                    .collect()
            })
            .collect();
        Arc::new(CsrMatrix::from_dense(&rows))
    }
}

/// Whether a grid's edges are all of the given kind.
pub(crate) fn all_edges(grid: &TensorGrid2D, bc: BoundaryCondition) -> bool {
    let e = grid.bc();
    [e.left, e.right, e.bottom, e.top].iter().all(|&b| b == bc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dot, rel_err};
    use crate::mesh::EdgeConditions;
    use std::collections::BTreeSet;

    fn neumann() -> EdgeConditions {
        EdgeConditions::all(BoundaryCondition::NeumannZero)
    }

    fn dirichlet() -> EdgeConditions {
        EdgeConditions::all(BoundaryCondition::DirichletZero)
    }

    #[test]
    fn uniform_stencil_is_five_point() {
        let g = TensorGrid2D::uniform((0.0, 1.0), (0.0, 1.0), 4, 4, dirichlet()).unwrap();
        let d = diffusion_operator(&g, &|_, _| 1.0);
        let row = g.unknown_index(2, 2).unwrap();
        let mut entries: Vec<(usize, f64)> = d.row(row).collect();
        entries.sort_by_key(|e| e.0);
        let h2 = 0.25f64 * 0.25;
        let expect = [
            (g.unknown_index(2, 1).unwrap(), 1.0 / h2),
            (g.unknown_index(1, 2).unwrap(), 1.0 / h2),
            (row, -4.0 / h2),
            (g.unknown_index(3, 2).unwrap(), 1.0 / h2),
            (g.unknown_index(2, 3).unwrap(), 1.0 / h2),
        ];
        assert_eq!(entries.len(), 5);
        for (a, b) in entries.iter().zip(expect.iter()) {
            assert_eq!(a.0, b.0);
            assert!((a.1 - b.1).abs() < 1e-12);
        }
    }

    #[test]
    fn laplacian_of_quadratic_is_exact_on_nonuniform_grids() {
        let g = TensorGrid2D::uniform((0.0, 1.0), (0.0, 1.0), 6, 5, neumann())
            .unwrap()
            .refine_marked(&BTreeSet::from([(1, 1), (4, 3)]));
        let d = diffusion_operator(&g, &|_, _| 1.0);
        let u: Vec<f64> = g.unknown_coordinates().iter().map(|(x, y)| x * x + y * y).collect();
        let lu = d.mul_vec(&u);
        for ((i, j), v) in g.unknown_nodes().into_iter().zip(lu) {
            let interior = i > 0 && j > 0 && i < g.xs().len() - 1 && j < g.ys().len() - 1;
            if interior {
                assert!((v - 4.0).abs() < 1e-9, "({i},{j}) -> {v}");
            }
        }
    }

    #[test]
    fn neumann_annihilates_constants_and_conserves_mass() {
        let g = TensorGrid2D::uniform((0.0, 2.0), (0.0, 1.0), 5, 7, neumann())
            .unwrap()
            .refine_marked(&BTreeSet::from([(0, 0), (2, 6)]));
        let k = |x: f64, y: f64| 0.1 + x * x + (3.0 * y).sin().abs();
        let d = diffusion_operator(&g, &k);
        let ones = vec![1.0; g.num_unknowns()];
        assert!(d.mul_vec(&ones).iter().all(|v| v.abs() < 1e-10));
        let w = g.quadrature_weights();
        let y: Vec<f64> = (0..g.num_unknowns()).map(|k| ((k * 37) % 11) as f64 - 5.0).collect();
        let dy = d.mul_vec(&y);
        let scale: f64 = w.iter().zip(&dy).map(|(a, b)| (a * b).abs()).sum();
        assert!(dot(&w, &dy).abs() <= 1e-10 * scale);
    }

    #[test]
    fn integral_goal_examples() {
        let g = TensorGrid2D::uniform((0.0, 1.0), (0.0, 1.0), 8, 8, neumann()).unwrap();
        let q = LinearGoal::integral(&g, 1, &[0]);
        assert!((q.value(&vec![1.0; g.num_unknowns()]) - 1.0).abs() < 1e-14);
        let x: Vec<f64> = g.unknown_coordinates().iter().map(|p| p.0).collect();
        assert!((q.value(&x) - 0.5).abs() < 1e-14);
        let two = LinearGoal::integral(&g, 2, &[0]);
        let mut y = vec![1.0; 2 * g.num_unknowns()];
        y[g.num_unknowns()..].fill(7.0);
        assert!((two.value(&y) - 1.0).abs() < 1e-14);
    }

    fn fd_jacobian_check(sys: &dyn SplitSystem, t: f64, y: &[f64], v: &[f64]) {
        for q in 0..sys.num_partitions() {
            let jv = sys.jac_vec(q, t, y, v);
            let eps = 1e-6 * (1.0 + crate::linalg::norm_inf(y));
            let yp: Vec<f64> = y.iter().zip(v).map(|(a, b)| a + eps * b).collect();
            let ym: Vec<f64> = y.iter().zip(v).map(|(a, b)| a - eps * b).collect();
            let fd: Vec<f64> = sys
                .eval_vec(q, t, &yp)
                .iter()
                .zip(sys.eval_vec(q, t, &ym))
                .map(|(a, b)| (a - b) / (2.0 * eps))
                .collect();
            assert!(rel_err(&jv, &fd) < 1e-5, "partition {q}: {}", rel_err(&jv, &fd));
            let u: Vec<f64> = (0..y.len()).map(|k| (k as f64 * 0.7).cos()).collect();
            let lhs = dot(&u, &jv);
            let rhs = dot(&sys.jac_t_vec(q, t, y, &u), v);
            assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn random_system_jacobians_match_differences() {
        for seed in 0..10 {
            let sys = RandomSplitSystem::new(seed, 6, 2);
            let y = RandomSplitSystem::initial_state(seed, 6);
            let v = RandomSplitSystem::initial_state(seed + 100, 6);
            fd_jacobian_check(&sys, 0.3, &y, &v);
        }
    }

    #[test]
    fn zero_and_linear_systems() {
        let z = ZeroSystem::new(3, 2);
        assert_eq!(z.eval_vec(1, 0.0, &[1.0, 2.0, 3.0]), vec![0.0; 3]);
        let s = LinearSplitSystem::scalar(-2.0, 1, 2);
        assert_eq!(s.eval_vec(0, 0.0, &[3.0]), vec![0.0]);
        assert_eq!(s.eval_vec(1, 0.0, &[3.0]), vec![-6.0]);
        let r = LinearSplitSystem::random(3, 4, 2);
        fd_jacobian_check(&r, 0.0, &[0.1, 0.2, -0.3, 0.4], &[1.0, -1.0, 0.5, 0.25]);
    }

    #[test]
    fn quadratic_goal_gradient_matches_differences() {
        let q = QuadraticGoal::new(vec![1.0, 2.0, 0.5]);
        let y = [0.3, -1.2, 2.0];
        let g = q.gradient(&y);
        for k in 0..3 {
            let mut p = y;
            let mut m = y;
            p[k] += 1e-6;
            m[k] -= 1e-6;
            let fd = (q.value(&p) - q.value(&m)) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-6 * (1.0 + g[k].abs()));
        }
    }
}
