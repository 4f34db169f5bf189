//! Radius sweeps with CSV and JSON artifacts.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::conic::ConicBackend;
use crate::error::{Error, Result};
use crate::instance::RunConfig;
use crate::parallel::{map_ordered, Execution};
use crate::problem::{Problem, KERNEL_CAVEAT};
use crate::reformulate::{build_mixture_program, solve_individual, solve_mixture_heuristic};
use crate::report::{SolveMode, SolveReport};
use crate::solve::{algorithm1, Algorithm1Config};

pub const CSV_NAME: &str = "repair_probabilities.csv";
pub const MANIFEST_NAME: &str = "manifest.json";

/// Outcome class of one sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    Solved,
    Infeasible,
    Numerical,
    InvalidInput,
}

impl PointStatus {
    pub fn of_error(err: &Error) -> Self {
        match err {
            Error::Infeasible(_) | Error::Range { .. } => PointStatus::Infeasible,
            Error::Numerical(_) => PointStatus::Numerical,
            _ => PointStatus::InvalidInput,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PointStatus::Solved => "solved",
            PointStatus::Infeasible => "infeasible",
            PointStatus::Numerical => "numerical",
            PointStatus::InvalidInput => "invalid_input",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub radius: f64,
    pub status: PointStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    pub wall_time_secs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<SolveReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepManifest {
    pub mode: SolveMode,
    pub radii: Vec<f64>,
    pub states: usize,
    pub config: RunConfig,
    pub kernel_caveat: String,
    pub total_wall_time_secs: f64,
    pub points: Vec<SweepPoint>,
}

impl SweepManifest {
    pub fn all_solved(&self) -> bool {
        self.points.iter().all(|p| p.status == PointStatus::Solved)
    }

    /// Status of the first failed point in radius order.
    pub fn first_failure(&self) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.status != PointStatus::Solved)
    }
}

/// Solves `problem` at one radius.
pub fn solve_at(
    problem: &Problem,
    mode: SolveMode,
    radius: f64,
    config: &RunConfig,
    backend: &dyn ConicBackend,
) -> Result<SolveReport> {
    let (specs, objective) = problem.instantiate(radius)?;
    match mode {
        SolveMode::Individual => solve_individual(&problem.mdp, &specs, &objective, backend),
        SolveMode::Joint => {
            let cfg = Algorithm1Config {
                joint_form: config.joint_form,
                ..config.algorithm1.clone()
            };
            algorithm1(
                &problem.mdp,
                &specs,
                &objective,
                problem.joint_confidence,
                &cfg,
                backend,
            )
        }
        SolveMode::Mixture => {
            let desc = build_mixture_program(
                &problem.mdp,
                &specs,
                &objective,
                problem.joint_confidence,
                config.joint_form,
            )?;
            Ok(solve_mixture_heuristic(&desc, &config.mixture, backend)?.report)
        }
    }
}

/// Solves every radius, up to `config.workers` at a time. A failed point is
/// recorded with its status and the sweep continues.
pub fn run_sweep(
    problem: &Problem,
    mode: SolveMode,
    radii: &[f64],
    config: &RunConfig,
    execution: Execution,
    backend: &dyn ConicBackend,
) -> SweepManifest {
    let started = Instant::now();
    let points = map_ordered(execution, config.workers, radii, |&radius| {
        let t = Instant::now();
        let outcome = solve_at(problem, mode, radius, config, backend);
        let wall_time_secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(report) => SweepPoint {
                radius,
                status: PointStatus::Solved,
                error: None,
                objective: Some(report.objective),
                wall_time_secs,
                report: Some(report),
            },
            Err(e) => {
                log::warn!("radius {radius}: {e}");
                SweepPoint {
                    radius,
                    status: PointStatus::of_error(&e),
                    error: Some(e.to_string()),
                    objective: None,
                    wall_time_secs,
                    report: None,
                }
            }
        }
    });
    SweepManifest {
        mode,
        radii: radii.to_vec(),
        states: problem.mdp.num_states(),
        config: config.clone(),
        kernel_caveat: KERNEL_CAVEAT.to_string(),
        total_wall_time_secs: started.elapsed().as_secs_f64(),
        points,
    }
}

#[derive(Debug, Serialize)]
struct CsvRow {
    radius: f64,
    state: usize,
    repair_probability: Option<f64>,
    status: &'static str,
    objective: Option<f64>,
}

/// One row per (radius, state) in radius order then state order; states are
/// numbered from 1. Failed points leave the probability empty.
pub fn write_csv<W: std::io::Write>(manifest: &SweepManifest, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in &manifest.points {
        for s in 0..manifest.states {
            w.serialize(CsvRow {
                radius: p.radius,
                state: s + 1,
                repair_probability: p.report.as_ref().map(|r| r.repair_probability(s)),
                status: p.status.as_str(),
                objective: p.objective,
            })
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes the CSV and the JSON manifest into `dir`, creating it if needed.
pub fn write_artifacts(manifest: &SweepManifest, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_csv(manifest, std::fs::File::create(dir.join(CSV_NAME))?)?;
    std::fs::write(
        dir.join(MANIFEST_NAME),
        serde_json::to_string_pretty(manifest)?,
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::ClarabelBackend;
    use crate::problem::build_benchmark;

    #[test]
    fn failed_points_keep_their_rows() {
        let problem = build_benchmark().unwrap();
        let backend = ClarabelBackend::default();
        // A negative radius is rejected per point; the sweep still covers both radii.
        let m = run_sweep(
            &problem,
            SolveMode::Individual,
            &[0.1, -1.0],
            &RunConfig::default(),
            Execution::Sequential,
            &backend,
        );
        assert_eq!(m.points[0].status, PointStatus::Solved);
        assert_eq!(m.points[1].status, PointStatus::InvalidInput);
        let mut buf = Vec::new();
        write_csv(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 10);
        assert!(text.lines().last().unwrap().contains("invalid_input"));
    }

    #[test]
    fn parallel_sweep_matches_sequential() {
        let problem = build_benchmark().unwrap();
        let backend = ClarabelBackend::default();
        let radii = [0.5, 0.2, 0.01];
        let cfg = RunConfig::default();
        let s = run_sweep(
            &problem,
            SolveMode::Individual,
            &radii,
            &cfg,
            Execution::Sequential,
            &backend,
        );
        let p = run_sweep(
            &problem,
            SolveMode::Individual,
            &radii,
            &cfg,
            Execution::Parallel,
            &backend,
        );
        for (a, b) in s.points.iter().zip(&p.points) {
            assert_eq!(a.radius, b.radius);
            assert_eq!(a.objective, b.objective);
        }
    }
}
