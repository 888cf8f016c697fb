use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use gark::adaptivity::{decay_order, run_campaign, RefinementStageLog};
use gark::checks::{oracle_checks, CheckConfig};
use gark::estimate::{run_estimate_cached, ErrorReport, ReferenceCache};
use gark::experiments::{convergence_study, halving_sequence};
use gark::integrator::StageSolverConfig;
use gark::io::{campaign_csv, campaign_jsonl, convergence_csv, fmt5, report_csv, to_json_pretty};
use gark::mesh::{TensorGrid2D, TimeGrid};

use crate::cache::DiskCache;
use crate::settings::Settings;

/// Whether the run met its pass criterion.
pub type Verdict = bool;

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn csv_string(rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn open_cache(s: &Settings) -> Result<Option<DiskCache>> {
    s.cache
        .as_deref()
        .map(|dir| DiskCache::new(dir).with_context(|| format!("creating cache {}", dir.display())))
        .transpose()
}

fn in_order_range(x: f64) -> bool {
    (1.8..=2.2).contains(&x)
}

pub fn converge(s: &Settings) -> Result<Verdict> {
    let problem = s.problem()?;
    let dts = halving_sequence(s.dt, s.levels);
    let reference_dt = dts[0] / (1u64 << s.reference_levels) as f64;
    let study = convergence_study(&problem, &s.tableau, &StageSolverConfig::default(), &dts, reference_dt)?;
    write(&s.out, "convergence.csv", &convergence_csv(&study))?;
    write(&s.out, "convergence.json", &to_json_pretty(&study)?)?;
    for r in &study.rows {
        println!("dt {}  forward {}  adjoint {}", fmt5(r.dt), fmt5(r.forward_error), fmt5(r.adjoint_error));
    }
    match (study.forward_order, study.adjoint_order) {
        (Some(f), Some(a)) => {
            println!("forward order {f:.4}, adjoint order {a:.4}");
            Ok(in_order_range(f) && in_order_range(a))
        }
        _ => {
            log::warn!("no order fitted: fewer than two step sizes or vanishing errors");
            Ok(true)
        }
    }
}

fn step_map_csv(time: &TimeGrid, r: &ErrorReport) -> Result<String> {
    let mut rows = vec![vec!["step".into(), "t_start".into(), "t_end".into(), "time_error".into()]];
    for (n, e) in r.step_map.iter().enumerate() {
        rows.push(vec![n.to_string(), fmt5(time.nodes()[n]), fmt5(time.nodes()[n + 1]), fmt5(*e)]);
    }
    csv_string(rows)
}

fn cell_map_csv(grid: &TensorGrid2D, r: &ErrorReport) -> Result<String> {
    let mut header: Vec<String> = ["cell_x", "cell_y", "x", "y"].iter().map(|s| s.to_string()).collect();
    header.extend(r.partition_names.iter().map(|n| format!("space_error_{n}")));
    header.push("space_error".into());
    let total = r.total_cell_map();
    let (cx, cy) = grid.cells();
    let mut rows = vec![header];
    for j in 0..cy {
        for i in 0..cx {
            let k = j * cx + i;
            let (x, y) = grid.cell_center(i, j);
            let mut row = vec![i.to_string(), j.to_string(), fmt5(x), fmt5(y)];
            row.extend(r.cell_maps.iter().map(|m| fmt5(m[k])));
            row.push(fmt5(total[k]));
            rows.push(row);
        }
    }
    csv_string(rows)
}

pub fn estimate(s: &Settings) -> Result<Verdict> {
    let problem = s.problem()?;
    let time = s.time_grid()?;
    let cache = open_cache(s)?;
    let est = run_estimate_cached(
        &problem,
        &s.tableau,
        &StageSolverConfig::default(),
        &time,
        cache.as_ref().map(|c| c as &dyn ReferenceCache),
    )?;
    let r = &est.report;
    write(&s.out, "report.json", &to_json_pretty(r)?)?;
    write(&s.out, "report.csv", &report_csv(r))?;
    write(&s.out, "step_errors.csv", &step_map_csv(&time, r)?)?;
    write(&s.out, "cell_errors.csv", &cell_map_csv(&problem.grid, r)?)?;
    write(&s.out, "adjoint_initial.json", &gark::io::to_json(&est.adjoint_initial)?)?;
    println!("goal (numerical)   {}", fmt5(r.psi_num));
    if let Some(p) = r.psi_ref {
        println!("goal (reference)   {}", fmt5(p));
    }
    println!("reference error    {}", fmt5(r.e_ref.unwrap_or(f64::NAN)));
    println!("time error         {}", fmt5(r.e_time));
    for (name, e) in r.partition_names.iter().zip(&r.e_space) {
        println!("space error ({name}) {}", fmt5(*e));
    }
    println!("estimated error    {}", fmt5(r.e_total));
    println!("accuracy           {}", fmt5(r.accuracy.unwrap_or(f64::NAN)));
    println!("|λ_0|              {}", fmt5(gark::linalg::norm2(&est.adjoint_initial)));
    Ok(true)
}

fn write_campaign(s: &Settings, logs: &[RefinementStageLog]) -> Result<()> {
    write(&s.out, "campaign.jsonl", &campaign_jsonl(logs)?)?;
    write(&s.out, "campaign.csv", &campaign_csv(logs))?;
    for l in logs {
        write(&s.out, &format!("grids/stage-{}.json", l.stage), &l.grid.to_json()?)?;
    }
    Ok(())
}

pub fn refine(s: &Settings) -> Result<Verdict> {
    let problem = s.problem()?;
    let time = s.time_grid()?;
    let cache = open_cache(s)?;
    let result = run_campaign(
        &problem,
        &s.tableau,
        &StageSolverConfig::default(),
        &time,
        &s.refinement,
        cache.as_ref().map(|c| c as &dyn ReferenceCache),
    );
    let logs = match result {
        Ok(logs) => logs,
        Err((logs, e)) => {
            write_campaign(s, &logs)?;
            return Err(anyhow::Error::new(e).context(format!("campaign stopped after {} completed stages", logs.len())));
        }
    };
    write_campaign(s, &logs)?;
    for l in &logs {
        println!(
            "stage {}  cells {}x{}  steps {}  reference error {}  estimate {}  accuracy {}",
            l.stage,
            l.report.cells.0,
            l.report.cells.1,
            l.time.num_steps(),
            fmt5(l.e_ref()),
            fmt5(l.e_est()),
            fmt5(l.accuracy())
        );
    }
    match decay_order(&logs) {
        Some(o) => println!("decay order of the reference error {o:.4}"),
        None => println!("decay order of the reference error: not fitted"),
    }
    Ok(true)
}

pub fn oracle_check(s: &Settings) -> Result<Verdict> {
    let cfg = CheckConfig {
        seed: s.seed,
        systems: s.systems,
        ..CheckConfig::default()
    };
    let checks = oracle_checks(&s.tableau, &cfg)?;
    write(&s.out, "checks.json", &to_json_pretty(&checks)?)?;
    let failed: Vec<_> = checks.iter().filter(|c| !c.passed()).collect();
    for c in &failed {
        println!("FAIL [{}] {}: {} > {}", c.suite, c.case, fmt5(c.value), fmt5(c.tolerance));
    }
    println!("{} of {} checks pass", checks.len() - failed.len(), checks.len());
    Ok(failed.is_empty())
}
