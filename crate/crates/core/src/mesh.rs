//! Time grids, 2D tensor-product grids and transfers between nested grids.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing time nodes `t_0 < t_1 < … < t_N`, `N ≥ 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        TimeGrid::new(v)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(g: TimeGrid) -> Self {
        g.nodes
    }
}

impl TimeGrid {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidGrid("a time grid needs at least one step".into()));
        }
        if nodes.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid("non-finite time node".into()));
        }
        if let Some(k) = nodes.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "time nodes not strictly increasing at index {}",
                k + 1
            )));
        }
        Ok(TimeGrid { nodes })
    }

    /// `n` equal steps on `[t0, tf]`.
    pub fn uniform(t0: f64, tf: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGrid("zero steps".into()));
        }
        let h = (tf - t0) / n as f64;
        let mut nodes: Vec<f64> = (0..n).map(|k| t0 + k as f64 * h).collect();
        nodes.push(tf);
        TimeGrid::new(nodes)
    }

    /// Uniform grid with step `dt`; `(tf - t0) / dt` must be an integer up to
    /// round-off.
    pub fn with_step(t0: f64, tf: f64, dt: f64) -> Result<Self> {
        if dt <= 0.0 || !dt.is_finite() {
            return Err(Error::InvalidGrid(format!("step {dt} must be positive")));
        }
        let ratio = (tf - t0) / dt;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "step {dt} does not divide [{t0}, {tf}] evenly"
            )));
        }
        TimeGrid::uniform(t0, tf, n as usize)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn num_steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn t0(&self) -> f64 {
        self.nodes[0]
    }

    pub fn tf(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// `h_n = t_{n+1} - t_n`
    pub fn step(&self, n: usize) -> f64 {
        self.nodes[n + 1] - self.nodes[n]
    }

    pub fn steps(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn max_step(&self) -> f64 {
        self.steps().into_iter().fold(0.0, f64::max)
    }

    /// Inserts the midpoint `t_n + h_n/2` of every interval.
    pub fn halve_all_steps(&self) -> TimeGrid {
        let all: Vec<usize> = (0..self.num_steps()).collect();
        self.halve_steps(&all)
    }

    /// Bisects the listed intervals (interval `n` is `[t_n, t_{n+1}]`).
    /// Duplicates and out-of-range indices are ignored.
    pub fn halve_steps(&self, intervals: &[usize]) -> TimeGrid {
        let marked: BTreeSet<usize> = intervals.iter().copied().filter(|&n| n < self.num_steps()).collect();
        let mut nodes = Vec::with_capacity(self.nodes.len() + marked.len());
        for n in 0..self.num_steps() {
            nodes.push(self.nodes[n]);
            if marked.contains(&n) {
                nodes.push(self.nodes[n] + 0.5 * self.step(n));
            }
        }
        nodes.push(self.tf());
        TimeGrid { nodes }
    }

    /// For every node of `coarse`, its index in `self`; errors if a node is
    /// missing.
    pub fn embed(&self, coarse: &TimeGrid) -> Result<Vec<usize>> {
        let scale = self.tf().abs().max(self.t0().abs()).max(1.0);
        let mut out = Vec::with_capacity(coarse.nodes.len());
        let mut k = 0;
        for &t in &coarse.nodes {
            while k < self.nodes.len() && self.nodes[k] < t - 1e-12 * scale {
                k += 1;
            }
            if k == self.nodes.len() || (self.nodes[k] - t).abs() > 1e-12 * scale {
                return Err(Error::TimeGridMismatch(format!("node {t} missing from the finer grid")));
            }
            out.push(k);
        }
        Ok(out)
    }
}

/// Homogeneous boundary condition on one edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryCondition {
    DirichletZero,
    NeumannZero,
}

/// Boundary conditions of the four edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EdgeConditions {
    pub left: BoundaryCondition,
    pub right: BoundaryCondition,
    pub bottom: BoundaryCondition,
    pub top: BoundaryCondition,
}

impl EdgeConditions {
    pub const fn all(bc: BoundaryCondition) -> Self {
        EdgeConditions {
            left: bc,
            right: bc,
            bottom: bc,
            top: bc,
        }
    }
}

/// Tensor-product grid with node coordinates `xs × ys`.
///
/// Unknowns are the nodes not lying on a Dirichlet edge, ordered row-major
/// (x index fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridDocument", into = "GridDocument")]
pub struct TensorGrid2D {
    xs: Vec<f64>,
    ys: Vec<f64>,
    bc: EdgeConditions,
}

#[derive(Serialize, Deserialize)]
struct GridDocument {
    xs: Vec<f64>,
    ys: Vec<f64>,
    bc: EdgeConditions,
}

impl TryFrom<GridDocument> for TensorGrid2D {
    type Error = Error;
    fn try_from(d: GridDocument) -> Result<Self> {
        TensorGrid2D::new(d.xs, d.ys, d.bc)
    }
}

impl From<TensorGrid2D> for GridDocument {
    fn from(g: TensorGrid2D) -> Self {
        GridDocument {
            xs: g.xs,
            ys: g.ys,
            bc: g.bc,
        }
    }
}

fn check_axis(name: &str, v: &[f64]) -> Result<()> {
    if v.len() < 3 {
        return Err(Error::InvalidGrid(format!("{name}: at least 3 nodes required, got {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) || v.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid(format!("{name}: coordinates must be finite and strictly increasing")));
    }
    Ok(())
}

fn bisect_axis(v: &[f64], marked: &BTreeSet<usize>) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len() + marked.len());
    for k in 0..v.len() - 1 {
        out.push(v[k]);
        if marked.contains(&k) {
            out.push(v[k] + 0.5 * (v[k + 1] - v[k]));
        }
    }
    out.push(*v.last().unwrap());
    out
}

/// Trapezoidal weights of a 1D node set.
fn trapezoid(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { v[i] - v[i - 1] } else { 0.0 };
            let right = if i + 1 < n { v[i + 1] - v[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

/// Index `k` with `v[k] <= x <= v[k+1]`, clamped to the valid range.
fn locate(v: &[f64], x: f64) -> usize {
    match v.binary_search_by(|p| p.partial_cmp(&x).unwrap()) {
        Ok(k) => k.min(v.len() - 2),
        Err(k) => k.saturating_sub(1).min(v.len() - 2),
    }
}

impl TensorGrid2D {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, bc: EdgeConditions) -> Result<Self> {
        check_axis("x", &xs)?;
        check_axis("y", &ys)?;
        Ok(TensorGrid2D { xs, ys, bc })
    }

    /// `nx × ny` equal cells on `[x0, x1] × [y0, y1]`.
    pub fn uniform(x: (f64, f64), y: (f64, f64), nx: usize, ny: usize, bc: EdgeConditions) -> Result<Self> {
        let axis = |(a, b): (f64, f64), n: usize| -> Vec<f64> {
            let mut v: Vec<f64> = (0..n).map(|k| a + (b - a) * k as f64 / n as f64).collect();
            v.push(b);
            v
        };
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidGrid(format!("{nx}×{ny} cells: need at least 2 per direction")));
        }
        TensorGrid2D::new(axis(x, nx), axis(y, ny), bc)
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn bc(&self) -> EdgeConditions {
        self.bc
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().unwrap())
    }

    pub fn y_range(&self) -> (f64, f64) {
        (self.ys[0], *self.ys.last().unwrap())
    }

    /// Number of cells in x and y.
    pub fn cells(&self) -> (usize, usize) {
        (self.xs.len() - 1, self.ys.len() - 1)
    }

    pub fn num_cells(&self) -> usize {
        let (cx, cy) = self.cells();
        cx * cy
    }

    pub fn num_nodes(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    pub fn cell_area(&self, ci: usize, cj: usize) -> f64 {
        (self.xs[ci + 1] - self.xs[ci]) * (self.ys[cj + 1] - self.ys[cj])
    }

    pub fn cell_center(&self, ci: usize, cj: usize) -> (f64, f64) {
        (
            0.5 * (self.xs[ci] + self.xs[ci + 1]),
            0.5 * (self.ys[cj] + self.ys[cj + 1]),
        )
    }

    fn x_unknown_range(&self) -> (usize, usize) {
        let lo = usize::from(self.bc.left == BoundaryCondition::DirichletZero);
        let hi = self.xs.len() - 1 - usize::from(self.bc.right == BoundaryCondition::DirichletZero);
        (lo, hi)
    }

    fn y_unknown_range(&self) -> (usize, usize) {
        let lo = usize::from(self.bc.bottom == BoundaryCondition::DirichletZero);
        let hi = self.ys.len() - 1 - usize::from(self.bc.top == BoundaryCondition::DirichletZero);
        (lo, hi)
    }

    pub fn num_unknowns(&self) -> usize {
        let (xl, xh) = self.x_unknown_range();
        let (yl, yh) = self.y_unknown_range();
        (xh + 1 - xl) * (yh + 1 - yl)
    }

    /// Unknown index of node `(i, j)`, or `None` on a Dirichlet edge.
    pub fn unknown_index(&self, i: usize, j: usize) -> Option<usize> {
        let (xl, xh) = self.x_unknown_range();
        let (yl, yh) = self.y_unknown_range();
        if i < xl || i > xh || j < yl || j > yh {
            return None;
        }
        Some((j - yl) * (xh + 1 - xl) + (i - xl))
    }

    /// Node indices `(i, j)` of all unknowns, in unknown order.
    pub fn unknown_nodes(&self) -> Vec<(usize, usize)> {
        let (xl, xh) = self.x_unknown_range();
        let (yl, yh) = self.y_unknown_range();
        (yl..=yh).flat_map(|j| (xl..=xh).map(move |i| (i, j))).collect()
    }

    /// Coordinates of all unknowns, in unknown order.
    pub fn unknown_coordinates(&self) -> Vec<(f64, f64)> {
        self.unknown_nodes()
            .into_iter()
            .map(|(i, j)| (self.xs[i], self.ys[j]))
            .collect()
    }

    /// Trapezoidal quadrature weights on the unknowns. Dirichlet nodes carry
    /// zero values and are left out.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let wx = trapezoid(&self.xs);
        let wy = trapezoid(&self.ys);
        self.unknown_nodes().into_iter().map(|(i, j)| wx[i] * wy[j]).collect()
    }

    /// Bisects every interval in both directions.
    pub fn refine_uniform(&self) -> TensorGrid2D {
        let (cx, cy) = self.cells();
        TensorGrid2D {
            xs: bisect_axis(&self.xs, &(0..cx).collect()),
            ys: bisect_axis(&self.ys, &(0..cy).collect()),
            bc: self.bc,
        }
    }

    /// Bisects every x- and y-interval that carries a marked cell. Cells
    /// outside the grid are ignored.
    pub fn refine_marked(&self, marked: &BTreeSet<(usize, usize)>) -> TensorGrid2D {
        let (cx, cy) = self.cells();
        let xi: BTreeSet<usize> = marked.iter().filter(|c| c.0 < cx && c.1 < cy).map(|c| c.0).collect();
        let yi: BTreeSet<usize> = marked.iter().filter(|c| c.0 < cx && c.1 < cy).map(|c| c.1).collect();
        TensorGrid2D {
            xs: bisect_axis(&self.xs, &xi),
            ys: bisect_axis(&self.ys, &yi),
            bc: self.bc,
        }
    }

    /// Whether every node of `self` is a node of `other`.
    pub fn is_subgrid_of(&self, other: &TensorGrid2D) -> bool {
        let contains = |fine: &[f64], coarse: &[f64]| coarse.iter().all(|&c| match_node(fine, c).is_some());
        contains(&other.xs, &self.xs) && contains(&other.ys, &self.ys)
    }

    /// Cells touching node `(i, j)`.
    pub fn cells_of_node(&self, i: usize, j: usize) -> Vec<(usize, usize)> {
        let (cx, cy) = self.cells();
        let mut out = Vec::with_capacity(4);
        for ci in [i.checked_sub(1), (i < cx).then_some(i)].into_iter().flatten() {
            for cj in [j.checked_sub(1), (j < cy).then_some(j)].into_iter().flatten() {
                out.push((ci, cj));
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

fn match_node(axis: &[f64], x: f64) -> Option<usize> {
    let scale = axis[0].abs().max(axis[axis.len() - 1].abs()).max(1.0);
    let k = locate(axis, x);
    [k, k + 1]
        .into_iter()
        .find(|&c| (axis[c] - x).abs() <= 1e-12 * scale)
}

/// Injection and bilinear prolongation between a coarse grid and a finer grid
/// containing all of its nodes.
#[derive(Debug, Clone)]
pub struct GridTransfer {
    coarse: TensorGrid2D,
    fine: TensorGrid2D,
    injection: Vec<usize>,
}

impl GridTransfer {
    pub fn new(coarse: &TensorGrid2D, fine: &TensorGrid2D) -> Result<Self> {
        if coarse.bc != fine.bc {
            return Err(Error::Transfer("boundary conditions differ".into()));
        }
        let mut injection = Vec::with_capacity(coarse.num_unknowns());
        for (i, j) in coarse.unknown_nodes() {
            let (x, y) = (coarse.xs[i], coarse.ys[j]);
            let fi = match_node(&fine.xs, x)
                .ok_or_else(|| Error::Transfer(format!("x = {x} is not a node of the fine grid")))?;
            let fj = match_node(&fine.ys, y)
                .ok_or_else(|| Error::Transfer(format!("y = {y} is not a node of the fine grid")))?;
            let k = fine
                .unknown_index(fi, fj)
                .ok_or_else(|| Error::Transfer(format!("node ({x}, {y}) is not an unknown of the fine grid")))?;
            injection.push(k);
        }
        Ok(GridTransfer {
            coarse: coarse.clone(),
            fine: fine.clone(),
            injection,
        })
    }

    pub fn identity(grid: &TensorGrid2D) -> Self {
        GridTransfer {
            coarse: grid.clone(),
            fine: grid.clone(),
            injection: (0..grid.num_unknowns()).collect(),
        }
    }

    pub fn coarse(&self) -> &TensorGrid2D {
        &self.coarse
    }

    pub fn fine(&self) -> &TensorGrid2D {
        &self.fine
    }

    /// Coarse unknown index → fine unknown index.
    pub fn injection(&self) -> &[usize] {
        &self.injection
    }

    /// Restricts a species-major fine field to the coarse grid by injection.
    pub fn project(&self, fine: &[f64]) -> Vec<f64> {
        let nf = self.fine.num_unknowns();
        let nc = self.coarse.num_unknowns();
        assert_eq!(fine.len() % nf, 0, "field length is not a multiple of the fine unknown count");
        let species = fine.len() / nf;
        let mut out = Vec::with_capacity(species * nc);
        for s in 0..species {
            out.extend(self.injection.iter().map(|&k| fine[s * nf + k]));
        }
        out
    }

    /// Bilinear interpolation of a species-major coarse field to the fine
    /// grid. Dirichlet boundary values are zero.
    pub fn prolong(&self, coarse: &[f64]) -> Vec<f64> {
        let nc = self.coarse.num_unknowns();
        let nf = self.fine.num_unknowns();
        assert_eq!(coarse.len() % nc, 0, "field length is not a multiple of the coarse unknown count");
        let species = coarse.len() / nc;
        let g = &self.coarse;
        let nodal = |s: usize, i: usize, j: usize| g.unknown_index(i, j).map_or(0.0, |k| coarse[s * nc + k]);
        let mut out = Vec::with_capacity(species * nf);
        let fine_nodes = self.fine.unknown_nodes();
        for s in 0..species {
            for &(fi, fj) in &fine_nodes {
                let (x, y) = (self.fine.xs[fi], self.fine.ys[fj]);
                let i = locate(&g.xs, x);
                let j = locate(&g.ys, y);
                let tx = (x - g.xs[i]) / (g.xs[i + 1] - g.xs[i]);
                let ty = (y - g.ys[j]) / (g.ys[j + 1] - g.ys[j]);
                // exact at coincident nodes
                let v = |di: usize, dj: usize, w: f64| if w == 0.0 { 0.0 } else { w * nodal(s, i + di, j + dj) };
                out.push(
                    v(0, 0, (1.0 - tx) * (1.0 - ty))
                        + v(1, 0, tx * (1.0 - ty))
                        + v(0, 1, (1.0 - tx) * ty)
                        + v(1, 1, tx * ty),
                );
            }
        }
        out
    }
}

/// One entry of the refinement history (written as a JSON line).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRecord {
    pub stage: usize,
    pub marked_cells: Vec<(usize, usize)>,
    pub new_x_lines: Vec<f64>,
    pub new_y_lines: Vec<f64>,
}

impl RefinementRecord {
    pub fn new(stage: usize, before: &TensorGrid2D, after: &TensorGrid2D, marked: &BTreeSet<(usize, usize)>) -> Self {
        let added = |old: &[f64], new: &[f64]| -> Vec<f64> {
            new.iter().copied().filter(|&x| match_node(old, x).is_none()).collect()
        };
        RefinementRecord {
            stage,
            marked_cells: marked.iter().copied().collect(),
            new_x_lines: added(&before.xs, &after.xs),
            new_y_lines: added(&before.ys, &after.ys),
        }
    }
}
