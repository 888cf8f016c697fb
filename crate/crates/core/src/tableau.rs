//! GARK Butcher tableaux.
//!
//! A tableau with `P` partitions holds one coupling matrix `A^{q,m}` of shape
//! `s_q × s_m` for every ordered pair of partitions and one weight vector
//! `b^{(q)}` per partition. Stage `i` of partition `q` reads
//!
//! ```text
//! Y_i^{(q)} = y_n + h Σ_m Σ_j a^{q,m}_{ij} f^{(m)}(T_j, Y_j^{(m)})
//! ```
//!
//! Besides the coefficients a tableau carries an explicit stage schedule: the
//! order in which the forward sweep evaluates stages. Every stage may depend
//! on itself (an implicit stage) and on stages scheduled earlier, nothing
//! else. The adjoint sweep walks the same schedule backwards.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used for all coefficient identities.
pub const COEFFICIENT_TOL: f64 = 1e-12;

/// Identifies stage `stage` (0-based) of partition `partition` (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StageId {
    pub partition: usize,
    pub stage: usize,
}

impl StageId {
    pub const fn new(partition: usize, stage: usize) -> Self {
        StageId { partition, stage }
    }
}

impl fmt::Display for StageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.partition, self.stage)
    }
}

/// Coefficients and stage schedule of a GARK method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableauDocument", into = "TableauDocument")]
pub struct GarkTableau {
    name: String,
    partition_names: Vec<String>,
    coupling: Vec<Vec<Vec<Vec<f64>>>>,
    weights: Vec<Vec<f64>>,
    declared_order: u32,
    stage_schedule: Vec<StageId>,
    internally_consistent: bool,
    stiffly_accurate: bool,
}

/// On-disk form of a tableau. Derived fields (`num_partitions`,
/// `stage_counts`, `abscissae`, `implicit_flags`) are written for readers and
/// ignored on input.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TableauDocument {
    #[serde(default)]
    name: String,
    #[serde(default)]
    partition_names: Vec<String>,
    #[serde(default)]
    num_partitions: usize,
    #[serde(default)]
    stage_counts: Vec<usize>,
    coupling: Vec<Vec<Vec<Vec<f64>>>>,
    weights: Vec<Vec<f64>>,
    #[serde(default)]
    abscissae: Vec<Vec<Vec<f64>>>,
    declared_order: u32,
    stage_schedule: Vec<StageId>,
    #[serde(default)]
    implicit_flags: Vec<Vec<bool>>,
    #[serde(default)]
    internally_consistent: bool,
    #[serde(default)]
    stiffly_accurate: bool,
}

impl TryFrom<TableauDocument> for GarkTableau {
    type Error = Error;

    fn try_from(d: TableauDocument) -> Result<Self> {
        let names = if d.partition_names.is_empty() {
            (0..d.weights.len()).map(|q| format!("partition-{q}")).collect()
        } else {
            d.partition_names
        };
        GarkTableau::new(
            d.name,
            names,
            d.coupling,
            d.weights,
            d.declared_order,
            d.stage_schedule,
            d.internally_consistent,
            d.stiffly_accurate,
        )
    }
}

impl From<GarkTableau> for TableauDocument {
    fn from(t: GarkTableau) -> Self {
        let p = t.num_partitions();
        TableauDocument {
            num_partitions: p,
            stage_counts: t.stage_counts(),
            abscissae: (0..p)
                .map(|q| (0..p).map(|m| t.abscissae(q, m)).collect())
                .collect(),
            implicit_flags: (0..p)
                .map(|q| {
                    (0..t.stage_count(q))
                        .map(|i| t.is_implicit(StageId::new(q, i)))
                        .collect()
                })
                .collect(),
            name: t.name,
            partition_names: t.partition_names,
            coupling: t.coupling,
            weights: t.weights,
            declared_order: t.declared_order,
            stage_schedule: t.stage_schedule,
            internally_consistent: t.internally_consistent,
            stiffly_accurate: t.stiffly_accurate,
        }
    }
}

impl GarkTableau {
    /// Builds a tableau after checking shapes only. Order conditions, the
    /// schedule and the declared properties are checked by [`validate`].
    ///
    /// [`validate`]: GarkTableau::validate
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        partition_names: Vec<String>,
        coupling: Vec<Vec<Vec<Vec<f64>>>>,
        weights: Vec<Vec<f64>>,
        declared_order: u32,
        stage_schedule: Vec<StageId>,
        internally_consistent: bool,
        stiffly_accurate: bool,
    ) -> Result<Self> {
        let p = weights.len();
        if p == 0 {
            return Err(Error::InvalidTableau("no partitions".into()));
        }
        if partition_names.len() != p {
            return Err(Error::InvalidTableau(format!(
                "{} partition names for {p} partitions",
                partition_names.len()
            )));
        }
        if weights.iter().any(|b| b.is_empty()) {
            return Err(Error::InvalidTableau("partition with zero stages".into()));
        }
        if declared_order == 0 {
            return Err(Error::InvalidTableau("declared order must be positive".into()));
        }
        if coupling.len() != p {
            return Err(Error::InvalidTableau(format!(
                "coupling has {} row blocks, expected {p}",
                coupling.len()
            )));
        }
        for (q, blocks) in coupling.iter().enumerate() {
            if blocks.len() != p {
                return Err(Error::InvalidTableau(format!(
                    "coupling row block {q} has {} blocks, expected {p}",
                    blocks.len()
                )));
            }
            for (m, block) in blocks.iter().enumerate() {
                let (rows, cols) = (weights[q].len(), weights[m].len());
                if block.len() != rows || block.iter().any(|r| r.len() != cols) {
                    return Err(Error::InvalidTableau(format!(
                        "coupling block ({q}, {m}) must be {rows}×{cols}"
                    )));
                }
            }
        }
        if stage_schedule
            .iter()
            .any(|s| s.partition >= p || s.stage >= weights[s.partition].len())
        {
            return Err(Error::InvalidTableau("stage schedule references an unknown stage".into()));
        }
        Ok(GarkTableau {
            name: name.into(),
            partition_names,
            coupling,
            weights,
            declared_order,
            stage_schedule,
            internally_consistent,
            stiffly_accurate,
        })
    }

    /// A single-partition Runge–Kutta method with the natural stage order.
    pub fn from_butcher(name: &str, a: Vec<Vec<f64>>, b: Vec<f64>, order: u32) -> Result<Self> {
        let s = b.len();
        let stiff = a.last().is_some_and(|row| row == &b);
        GarkTableau::new(
            name,
            vec!["rhs".into()],
            vec![vec![a]],
            vec![b],
            order,
            (0..s).map(|i| StageId::new(0, i)).collect(),
            true,
            stiff,
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn partition_names(&self) -> &[String] {
        &self.partition_names
    }

    pub fn num_partitions(&self) -> usize {
        self.weights.len()
    }

    pub fn stage_count(&self, q: usize) -> usize {
        self.weights[q].len()
    }

    pub fn stage_counts(&self) -> Vec<usize> {
        self.weights.iter().map(Vec::len).collect()
    }

    pub fn total_stages(&self) -> usize {
        self.weights.iter().map(Vec::len).sum()
    }

    /// `a^{q,m}_{i,j}`
    #[inline]
    pub fn a(&self, q: usize, m: usize, i: usize, j: usize) -> f64 {
        self.coupling[q][m][i][j]
    }

    /// `b^{(q)}_i`
    #[inline]
    pub fn b(&self, q: usize, i: usize) -> f64 {
        self.weights[q][i]
    }

    pub fn coupling_block(&self, q: usize, m: usize) -> &[Vec<f64>] {
        &self.coupling[q][m]
    }

    pub fn weights(&self, q: usize) -> &[f64] {
        &self.weights[q]
    }

    /// `c^{(q,m)} = A^{q,m} 1`
    pub fn abscissae(&self, q: usize, m: usize) -> Vec<f64> {
        self.coupling[q][m].iter().map(|row| row.iter().sum()).collect()
    }

    /// Abscissa used for the stage time `T = t_n + c h`: `c^{(q,q)}_i`.
    pub fn stage_abscissa(&self, s: StageId) -> f64 {
        self.coupling[s.partition][s.partition][s.stage].iter().sum()
    }

    pub fn declared_order(&self) -> u32 {
        self.declared_order
    }

    pub fn stage_schedule(&self) -> &[StageId] {
        &self.stage_schedule
    }

    pub fn is_internally_consistent(&self) -> bool {
        self.internally_consistent
    }

    pub fn is_stiffly_accurate(&self) -> bool {
        self.stiffly_accurate
    }

    /// Whether `a^{q,q}_{ii} ≠ 0`.
    pub fn is_implicit(&self, s: StageId) -> bool {
        self.diagonal(s) != 0.0
    }

    pub fn diagonal(&self, s: StageId) -> f64 {
        self.coupling[s.partition][s.partition][s.stage][s.stage]
    }

    /// Stages whose rows coincide with the weights across every partition,
    /// i.e. stages equal to the step solution.
    pub fn stiffly_accurate_stages(&self) -> Vec<StageId> {
        let p = self.num_partitions();
        let mut out = Vec::new();
        for q in 0..p {
            for i in 0..self.stage_count(q) {
                let matches = (0..p).all(|m| {
                    self.coupling[q][m][i]
                        .iter()
                        .zip(&self.weights[m])
                        .all(|(a, b)| (a - b).abs() <= COEFFICIENT_TOL)
                });
                if matches {
                    out.push(StageId::new(q, i));
                }
            }
        }
        out
    }

    /// Reorders the partitions: partition `k` of the result is partition
    /// `order[k]` of `self`.
    pub fn with_partition_order(&self, order: &[usize]) -> Result<Self> {
        let p = self.num_partitions();
        let mut seen = vec![false; p];
        if order.len() != p || order.iter().any(|&q| q >= p || std::mem::replace(&mut seen[q], true)) {
            return Err(Error::InvalidParameter(format!(
                "{order:?} is not a permutation of 0..{p}"
            )));
        }
        let mut inverse = vec![0; p];
        for (k, &q) in order.iter().enumerate() {
            inverse[q] = k;
        }
        GarkTableau::new(
            self.name.clone(),
            order.iter().map(|&q| self.partition_names[q].clone()).collect(),
            order
                .iter()
                .map(|&q| order.iter().map(|&m| self.coupling[q][m].clone()).collect())
                .collect(),
            order.iter().map(|&q| self.weights[q].clone()).collect(),
            self.declared_order,
            self.stage_schedule
                .iter()
                .map(|s| StageId::new(inverse[s.partition], s.stage))
                .collect(),
            self.internally_consistent,
            self.stiffly_accurate,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Checks order conditions (up to order 2), internal consistency and
    /// stiff accuracy when declared, and the stage schedule.
    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        let p = self.num_partitions();

        for q in 0..p {
            let r = (self.weights[q].iter().sum::<f64>() - 1.0).abs();
            if r > COEFFICIENT_TOL {
                v.push(Violation {
                    kind: ViolationKind::OrderOne { partition: q },
                    residual: r,
                });
            }
        }
        if self.declared_order >= 2 {
            for q in 0..p {
                for m in 0..p {
                    let c = self.abscissae(q, m);
                    let s: f64 = self.weights[q].iter().zip(&c).map(|(b, c)| b * c).sum();
                    let r = (s - 0.5).abs();
                    if r > COEFFICIENT_TOL {
                        v.push(Violation {
                            kind: ViolationKind::OrderTwo { partition: q, coupled: m },
                            residual: r,
                        });
                    }
                }
            }
        }
        if self.declared_order >= 3 {
            log::warn!(
                "tableau {}: order conditions above 2 are not checked",
                self.name
            );
        }
        if self.internally_consistent {
            for q in 0..p {
                let reference = self.abscissae(q, q);
                for m in 0..p {
                    for (i, (c, r)) in self.abscissae(q, m).iter().zip(&reference).enumerate() {
                        let d = (c - r).abs();
                        if d > COEFFICIENT_TOL {
                            v.push(Violation {
                                kind: ViolationKind::InternalConsistency {
                                    stage: StageId::new(q, i),
                                    coupled: m,
                                },
                                residual: d,
                            });
                        }
                    }
                }
            }
        }
        if self.stiffly_accurate && self.stiffly_accurate_stages().is_empty() {
            let r = (0..p)
                .flat_map(|q| (0..self.stage_count(q)).map(move |i| (q, i)))
                .map(|(q, i)| {
                    (0..p)
                        .flat_map(|m| {
                            self.coupling[q][m][i]
                                .iter()
                                .zip(&self.weights[m])
                                .map(|(a, b)| (a - b).abs())
                        })
                        .fold(0.0, f64::max)
                })
                .fold(f64::INFINITY, f64::min);
            v.push(Violation {
                kind: ViolationKind::StiffAccuracy,
                residual: r,
            });
        }

        let mut position: HashMap<StageId, usize> = HashMap::new();
        let mut duplicate = false;
        for (k, s) in self.stage_schedule.iter().enumerate() {
            duplicate |= position.insert(*s, k).is_some();
        }
        if duplicate || position.len() != self.total_stages() {
            v.push(Violation {
                kind: ViolationKind::ScheduleNotPermutation,
                residual: (self.total_stages() as f64 - position.len() as f64).abs(),
            });
        } else {
            for (k, s) in self.stage_schedule.iter().enumerate() {
                for m in 0..p {
                    for j in 0..self.stage_count(m) {
                        let dep = StageId::new(m, j);
                        if dep == *s {
                            continue;
                        }
                        let a = self.a(s.partition, m, s.stage, j);
                        if a != 0.0 && position[&dep] > k {
                            v.push(Violation {
                                kind: ViolationKind::ScheduleDependency {
                                    stage: *s,
                                    depends_on: dep,
                                },
                                residual: a.abs(),
                            });
                        }
                    }
                }
            }
        }
        ValidationReport { violations: v }
    }

    /// Validates and turns any violation into an error.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidTableau(report.to_string()))
        }
    }

    /// Coefficients of the scaled (`ℓ`-form) adjoint method:
    /// `b̄ = b` and `ā^{q,m}_{ij} = b^{(m)}_j a^{m,q}_{ji} / b^{(q)}_i`.
    pub fn adjoint_coefficients(&self) -> Result<AdjointTableau> {
        let p = self.num_partitions();
        for q in 0..p {
            if let Some(i) = self.weights[q].iter().position(|&b| b == 0.0) {
                return Err(Error::UnsupportedTableau { partition: q, stage: i });
            }
        }
        let coupling = (0..p)
            .map(|q| {
                (0..p)
                    .map(|m| {
                        (0..self.stage_count(q))
                            .map(|i| {
                                (0..self.stage_count(m))
                                    .map(|j| self.b(m, j) * self.a(m, q, j, i) / self.b(q, i))
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(AdjointTableau {
            partition_names: self.partition_names.clone(),
            coupling,
            weights: self.weights.clone(),
            stage_schedule: self.stage_schedule.iter().rev().copied().collect(),
        })
    }
}

/// Build the two-stage IMEX GARK method with free parameter `alpha`.
///
/// Partition 0 is explicit, partition 1 implicit. Stages are evaluated in the
/// order `E1, I1, E2, I2`. The method is second order, internally consistent
/// and stiffly accurate (`y_{n+1} = Y^{(I)}_2`) for `gamma = 1 ± √2/2`; other
/// values of `gamma` are accepted with a warning.
pub fn build_imex22(gamma: f64, alpha: f64) -> Result<GarkTableau> {
    if alpha == 0.0 || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("alpha must be nonzero and finite, got {alpha}")));
    }
    if !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!("gamma must be finite, got {gamma}")));
    }
    let half_sqrt2 = std::f64::consts::SQRT_2 / 2.0;
    if (gamma - (1.0 - half_sqrt2)).abs() > 1e-12 && (gamma - (1.0 + half_sqrt2)).abs() > 1e-12 {
        log::warn!("imex22: gamma = {gamma} is neither 1 - √2/2 nor 1 + √2/2");
    }
    let c = 1.0 / (2.0 * alpha);
    let ee = vec![vec![0.0, 0.0], vec![c, 0.0]];
    let ei = vec![vec![0.0, 0.0], vec![c, 0.0]];
    let ie = vec![vec![gamma, 0.0], vec![1.0 - alpha, alpha]];
    let ii = vec![vec![gamma, 0.0], vec![1.0 - gamma, gamma]];
    GarkTableau::new(
        format!("imex22(gamma={gamma}, alpha={alpha})"),
        vec!["explicit".into(), "implicit".into()],
        vec![vec![ee, ei], vec![ie, ii]],
        vec![vec![1.0 - alpha, alpha], vec![1.0 - gamma, gamma]],
        2,
        vec![
            StageId::new(0, 0),
            StageId::new(1, 0),
            StageId::new(0, 1),
            StageId::new(1, 1),
        ],
        true,
        true,
    )
}

/// `γ = 1 − √2/2`, the branch used by default.
pub fn default_gamma() -> f64 {
    1.0 - std::f64::consts::SQRT_2 / 2.0
}

/// The default method: `imex22(γ, γ)` with `γ = 1 − √2/2`.
pub fn default_imex22() -> GarkTableau {
    let g = default_gamma();
    build_imex22(g, g).expect("default parameters are valid")
}

/// Coefficients `ā`, `b̄` of the scaled adjoint and its (reversed) schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointTableau {
    partition_names: Vec<String>,
    coupling: Vec<Vec<Vec<Vec<f64>>>>,
    weights: Vec<Vec<f64>>,
    stage_schedule: Vec<StageId>,
}

impl AdjointTableau {
    pub fn num_partitions(&self) -> usize {
        self.weights.len()
    }

    pub fn stage_count(&self, q: usize) -> usize {
        self.weights[q].len()
    }

    /// `ā^{q,m}_{i,j}`
    #[inline]
    pub fn a_bar(&self, q: usize, m: usize, i: usize, j: usize) -> f64 {
        self.coupling[q][m][i][j]
    }

    /// `b̄^{(q)}_i`
    #[inline]
    pub fn b_bar(&self, q: usize, i: usize) -> f64 {
        self.weights[q][i]
    }

    /// Evaluation order of the adjoint stages: the forward schedule reversed.
    pub fn stage_schedule(&self) -> &[StageId] {
        &self.stage_schedule
    }

    /// Views the transformed coefficients as a tableau (reversed schedule), so
    /// the transform can be applied again.
    pub fn as_tableau(&self) -> Result<GarkTableau> {
        GarkTableau::new(
            "adjoint",
            self.partition_names.clone(),
            self.coupling.clone(),
            self.weights.clone(),
            1,
            self.stage_schedule.clone(),
            false,
            false,
        )
    }
}

/// Kind of a tableau invariant violation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ViolationKind {
    OrderOne { partition: usize },
    OrderTwo { partition: usize, coupled: usize },
    InternalConsistency { stage: StageId, coupled: usize },
    StiffAccuracy,
    ScheduleNotPermutation,
    ScheduleDependency { stage: StageId, depends_on: StageId },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Magnitude of the violated identity.
    pub residual: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "no violations");
        }
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{:?} (residual {:e})", v.kind, v.residual)?;
        }
        Ok(())
    }
}
