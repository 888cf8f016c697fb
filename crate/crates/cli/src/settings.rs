//! Flags, config files and the resolved experiment settings.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use gark::adaptivity::{MarkingBasis, RefinementConfig};
use gark::mesh::TimeGrid;
use gark::problems::{imex_for_problems, ProblemInstance, ProblemSpec};
use gark::tableau::{default_gamma, GarkTableau};
use serde::Deserialize;

/// Options shared by every subcommand. Values from `--config` take
/// precedence over flags.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Overrides {
    /// calvo, gray-scott, bsvd or zero
    #[arg(long)]
    pub problem: Option<String>,
    /// Cells in x.
    #[arg(long)]
    pub nx: Option<usize>,
    /// Cells in y.
    #[arg(long)]
    pub ny: Option<usize>,
    /// Time step (the coarsest one for `converge`).
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_final: Option<f64>,
    /// Implicit diagonal coefficient of the IMEX pair.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Explicit weight parameter of the IMEX pair.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Tableau JSON replacing the IMEX pair.
    #[arg(long)]
    pub tableau: Option<PathBuf>,
    /// Refinement stages.
    #[arg(long)]
    pub stages: Option<usize>,
    /// Spatial marking percentile.
    #[arg(long)]
    pub space_pct: Option<f64>,
    /// Temporal marking percentile.
    #[arg(long)]
    pub time_pct: Option<f64>,
    /// union, total, or a partition index
    #[arg(long)]
    pub basis: Option<String>,
    /// Halvings of the coarsest step in `converge`.
    #[arg(long)]
    pub levels: Option<usize>,
    /// Further halvings of the finest step for the `converge` reference.
    #[arg(long)]
    pub reference_levels: Option<usize>,
    /// Seed of the random systems in `oracle-check`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Random systems in `oracle-check`.
    #[arg(long)]
    pub systems: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory of cached reference solutions; `none` disables caching.
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

impl Overrides {
    /// Fields set in `other` replace those of `self`.
    fn merge(self, other: Overrides) -> Overrides {
        macro_rules! pick {
            ($($f:ident),*) => { Overrides { $($f: other.$f.or(self.$f)),* } };
        }
        pick!(
            problem, nx, ny, dt, t_final, gamma, alpha, tableau, stages, space_pct, time_pct, basis, levels,
            reference_levels, seed, systems, out, cache
        )
    }

    pub fn with_config(self, config: Option<&Path>) -> Result<Overrides> {
        let Some(path) = config else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: Overrides = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(self.merge(file))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Converge,
    Estimate,
    Refine,
    OracleCheck,
}

/// Everything a subcommand needs, with defaults filled in.
pub struct Settings {
    pub spec: ProblemSpec,
    pub cells: (usize, usize),
    pub dt: f64,
    pub t0: f64,
    pub tf: f64,
    pub tableau: GarkTableau,
    pub refinement: RefinementConfig,
    pub levels: usize,
    pub reference_levels: usize,
    pub seed: u64,
    pub systems: usize,
    pub out: PathBuf,
    pub cache: Option<PathBuf>,
}

fn default_dt(spec: &ProblemSpec, cmd: Command) -> f64 {
    match (spec, cmd) {
        (ProblemSpec::Calvo { .. }, _) => 0.15,
        (ProblemSpec::GrayScott { .. }, _) => 0.02,
        (ProblemSpec::Bsvd, Command::Refine) => 0.02,
        (ProblemSpec::Bsvd, _) => 0.01,
        (ProblemSpec::Zero, _) => 0.25,
    }
}

fn parse_basis(s: &str) -> Result<MarkingBasis> {
    Ok(match s {
        "union" => MarkingBasis::Union,
        "total" => MarkingBasis::Total,
        _ => match s.parse() {
            Ok(q) => MarkingBasis::Partition(q),
            Err(_) => bail!("unknown marking basis {s:?}; use union, total or a partition index"),
        },
    })
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if !(v.is_finite() && v > 0.0) {
        bail!("--{name} must be positive, got {v}");
    }
    Ok(v)
}

impl Settings {
    pub fn resolve(o: Overrides, cmd: Command) -> Result<Settings> {
        let spec = ProblemSpec::by_name(o.problem.as_deref().unwrap_or("calvo"))?;
        let refine_bsvd = cmd == Command::Refine && spec == ProblemSpec::Bsvd;
        let (dnx, dny) = if refine_bsvd { (20, 20) } else { spec.default_cells() };
        let (t0, default_tf) = spec.default_time_span();
        let tf = o.t_final.unwrap_or(if refine_bsvd { 4.0 } else { default_tf });
        if !(tf.is_finite() && tf > t0) {
            bail!("--t-final must exceed the start time {t0}, got {tf}");
        }
        let tableau = match &o.tableau {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                GarkTableau::from_json(&text)?
            }
            None => imex_for_problems(
                o.gamma.unwrap_or_else(default_gamma),
                o.alpha.unwrap_or_else(default_gamma),
            )?,
        };
        let defaults = RefinementConfig::default();
        let refinement = RefinementConfig {
            space_pct: o.space_pct.unwrap_or(defaults.space_pct),
            time_pct: o.time_pct.unwrap_or(defaults.time_pct),
            stages: o.stages.unwrap_or(defaults.stages),
            basis: o.basis.as_deref().map(parse_basis).transpose()?.unwrap_or(defaults.basis),
        };
        refinement.validate()?;
        let out = o.out.unwrap_or_else(|| PathBuf::from("out"));
        let cache = match o.cache {
            Some(p) if p.as_os_str() == "none" => None,
            Some(p) => Some(p),
            None => Some(out.join("reference-cache")),
        };
        Ok(Settings {
            dt: positive("dt", o.dt.unwrap_or_else(|| default_dt(&spec, cmd)))?,
            cells: (o.nx.unwrap_or(dnx), o.ny.unwrap_or(dny)),
            spec,
            t0,
            tf,
            tableau,
            refinement,
            levels: o.levels.unwrap_or(4),
            reference_levels: o.reference_levels.unwrap_or(3),
            seed: o.seed.unwrap_or(0),
            systems: o.systems.unwrap_or(5),
            out,
            cache,
        })
    }

    pub fn problem(&self) -> Result<ProblemInstance> {
        let grid = self.spec.grid(self.cells.0, self.cells.1)?;
        Ok(self.spec.instantiate(&grid, self.t0, self.tf)?)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        Ok(TimeGrid::with_step(self.t0, self.tf, self.dt)?)
    }
}
