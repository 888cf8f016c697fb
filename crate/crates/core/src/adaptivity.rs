//! Goal-oriented space–time refinement: estimate, mark by percentile,
//! refine, repeat.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{run_estimate_cached, ErrorReport, ReferenceCache};
use crate::integrator::StageSolverConfig;
use crate::mesh::{RefinementRecord, TensorGrid2D, TimeGrid};
use crate::problems::ProblemInstance;
use crate::tableau::GarkTableau;

/// Which spatial map the cell marks are taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarkingBasis {
    /// Sum over partitions.
    Total,
    /// A single partition's map.
    Partition(usize),
    /// Union of the sets marked on each partition's map.
    Union,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementConfig {
    pub space_pct: f64,
    pub time_pct: f64,
    pub stages: usize,
    pub basis: MarkingBasis,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            space_pct: 90.0,
            time_pct: 80.0,
            stages: 4,
            basis: MarkingBasis::Union,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("space", self.space_pct), ("time", self.time_pct)] {
            if !(p > 0.0 && p < 100.0) {
                return Err(Error::InvalidParameter(format!("{name} percentile {p} outside (0, 100)")));
            }
        }
        Ok(())
    }
}

/// Indices whose `|v|` reaches the nearest-rank `pct`-th percentile of all
/// `|v|`. Ties are included; exact zeros are never marked.
pub fn mark_percentile(values: &[f64], pct: f64) -> Vec<usize> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil().clamp(1.0, n as f64) as usize;
    let threshold = sorted[rank - 1];
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() >= threshold && v.abs() > 0.0)
        .map(|(k, _)| k)
        .collect()
}

/// One estimate of a campaign with the marks derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementStageLog {
    pub stage: usize,
    pub grid: TensorGrid2D,
    pub time: TimeGrid,
    pub reference_grid: TensorGrid2D,
    pub reference_time: TimeGrid,
    pub marked_cells: Vec<(usize, usize)>,
    pub marked_intervals: Vec<usize>,
    pub next_grid: TensorGrid2D,
    pub next_time: TimeGrid,
    pub refinement: RefinementRecord,
    pub report: ErrorReport,
}

impl RefinementStageLog {
    pub fn e_ref(&self) -> f64 {
        self.report.e_ref.unwrap_or(f64::NAN)
    }

    pub fn e_est(&self) -> f64 {
        self.report.e_total
    }

    pub fn accuracy(&self) -> f64 {
        self.report.accuracy.unwrap_or(f64::NAN)
    }

    pub fn psi_ref(&self) -> f64 {
        self.report.psi_ref.unwrap_or(f64::NAN)
    }
}

fn marked_cells(report: &ErrorReport, cfg: &RefinementConfig) -> Result<BTreeSet<(usize, usize)>> {
    let (cx, _) = report.cells;
    let to_cell = |k: usize| (k % cx, k / cx);
    let mut out = BTreeSet::new();
    match cfg.basis {
        MarkingBasis::Total => out.extend(mark_percentile(&report.total_cell_map(), cfg.space_pct).into_iter().map(to_cell)),
        MarkingBasis::Partition(q) => {
            let map = report.cell_maps.get(q).ok_or_else(|| {
                Error::InvalidParameter(format!("no partition {q} to mark on"))
            })?;
            out.extend(mark_percentile(map, cfg.space_pct).into_iter().map(to_cell));
        }
        MarkingBasis::Union => {
            for map in &report.cell_maps {
                out.extend(mark_percentile(map, cfg.space_pct).into_iter().map(to_cell));
            }
        }
    }
    Ok(out)
}

/// Runs the four solutions on `(problem.grid, time)`, marks cells and
/// intervals and returns the log with the refined grids.
pub fn refine_stage(
    problem: &ProblemInstance,
    tableau: &GarkTableau,
    solver: &StageSolverConfig,
    time: &TimeGrid,
    cfg: &RefinementConfig,
    stage: usize,
    cache: Option<&dyn ReferenceCache>,
) -> Result<RefinementStageLog> {
    cfg.validate()?;
    let est = run_estimate_cached(problem, tableau, solver, time, cache)?;
    let report = est.report;
    let cells = marked_cells(&report, cfg)?;
    let intervals = mark_percentile(&report.step_map, cfg.time_pct);
    let next_grid = problem.grid.refine_marked(&cells);
    let next_time = time.halve_steps(&intervals);
    log::info!(
        "stage {stage}: {}x{} cells, {} steps, E_ref {:e}, E {:e}; marked {} cells, {} intervals",
        report.cells.0,
        report.cells.1,
        time.num_steps(),
        report.e_ref.unwrap_or(f64::NAN),
        report.e_total,
        cells.len(),
        intervals.len()
    );
    Ok(RefinementStageLog {
        stage,
        grid: problem.grid.clone(),
        time: time.clone(),
        reference_grid: problem.grid.refine_uniform(),
        reference_time: time.halve_all_steps(),
        marked_cells: cells.iter().copied().collect(),
        marked_intervals: intervals,
        refinement: RefinementRecord::new(stage, &problem.grid, &next_grid, &cells),
        next_grid,
        next_time,
        report,
    })
}

/// `cfg.stages` refinement stages followed by a final estimate on the last
/// grids: `cfg.stages + 1` logs. On failure the completed logs are returned
/// with the error.
pub fn run_campaign(
    problem: &ProblemInstance,
    tableau: &GarkTableau,
    solver: &StageSolverConfig,
    time: &TimeGrid,
    cfg: &RefinementConfig,
    cache: Option<&dyn ReferenceCache>,
) -> std::result::Result<Vec<RefinementStageLog>, (Vec<RefinementStageLog>, Error)> {
    let mut logs = Vec::with_capacity(cfg.stages + 1);
    let mut current = problem.clone();
    let mut t = time.clone();
    for stage in 0..=cfg.stages {
        match refine_stage(&current, tableau, solver, &t, cfg, stage, cache) {
            Ok(log) => {
                if stage < cfg.stages {
                    current = match current.on_grid(&log.next_grid) {
                        Ok(p) => p,
                        Err(e) => {
                            logs.push(log);
                            return Err((logs, e));
                        }
                    };
                    t = log.next_time.clone();
                }
                logs.push(log);
            }
            Err(e) => return Err((logs, e)),
        }
    }
    Ok(logs)
}

/// Least-squares slope of `log2 y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(_, v)| v.is_finite() && **v > 0.0)
        .map(|(a, v)| (*a, v.log2()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// `−` slope of `log2 |E_ref|` against the stage index.
pub fn decay_order(logs: &[RefinementStageLog]) -> Option<f64> {
    let x: Vec<f64> = logs.iter().map(|l| l.stage as f64).collect();
    let y: Vec<f64> = logs.iter().map(|l| l.e_ref().abs()).collect();
    fit_slope(&x, &y).map(|s| -s)
}
