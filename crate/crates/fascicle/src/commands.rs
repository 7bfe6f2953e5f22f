//! Subcommand implementations. Each writes its data files plus a manifest
//! and returns the manifest path.

use std::fs;
use std::path::{Path, PathBuf};

use fascicle_core::conductivity::LawKind;
use fascicle_core::ergodics::{analytic_palm_masses, analytic_volume_fractions, radius_identity_from_samples, DensityEstimate, PalmEstimate};
use fascicle_core::geometry::{sample_realization, Rect};
use fascicle_core::macro_solver::MacroSolver;
use fascicle_core::micro_reference::convergence_report;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, LoadedConfig};
use crate::manifest::{RunManifest, Stages};
use crate::output::{self, CheckRow};
use crate::parallel;

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) => 1,
            CommandError::Solver(_) | CommandError::Io { .. } => 2,
        }
    }
}

fn io_err(context: &Path) -> impl FnOnce(std::io::Error) -> CommandError + '_ {
    move |source| CommandError::Io { context: context.display().to_string(), source }
}

fn solver<E: std::fmt::Display>(e: E) -> CommandError {
    CommandError::Solver(e.to_string())
}

/// Result of a subcommand: where its manifest went and whether its checks passed.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub manifest: PathBuf,
    pub passed: bool,
}

/// Shared context of every data-producing command.
pub struct Run<'a> {
    pub loaded: &'a LoadedConfig,
    pub threads: usize,
}

impl Run<'_> {
    fn manifest(&self, command: &str) -> Result<RunManifest, CommandError> {
        let mut m = RunManifest::new(command, &self.loaded.config, self.threads);
        if self.loaded.path.exists() {
            m.add_inputs(std::slice::from_ref(&self.loaded.path)).map_err(io_err(&self.loaded.path))?;
        }
        if let Some(t) = self.loaded.table_path() {
            if command == "run-macro" {
                m.add_inputs(std::slice::from_ref(&t)).map_err(io_err(&t))?;
            }
        }
        Ok(m)
    }
}

fn manifest_beside(out: &Path) -> PathBuf {
    let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{name}.manifest.json"))
}

fn ensure_dir(dir: &Path) -> Result<(), CommandError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn ensure_parent(file: &Path) -> Result<(), CommandError> {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

fn seal(mut m: RunManifest, stages: Stages, outputs: &[PathBuf], path: PathBuf) -> Result<PathBuf, CommandError> {
    m.add_outputs(outputs).map_err(io_err(&path))?;
    m.finish(stages, &path).map_err(io_err(&path))
}

pub fn sample_geometry(run: &Run, out: &Path) -> Result<Outcome, CommandError> {
    let cfg = &run.loaded.config;
    let model = run.loaded.model()?;
    let mut stages = Stages::default();
    let real = stages
        .time("sample", || sample_realization(&model, Rect::square(cfg.sampling.window), cfg.seed))
        .map_err(solver)?;
    ensure_parent(out)?;
    output::write_realization(out, &real).map_err(io_err(out))?;
    let manifest = seal(run.manifest("sample-geometry")?, stages, &[out.to_path_buf()], manifest_beside(out))?;
    Ok(Outcome { manifest, passed: true })
}

pub fn estimate_densities(run: &Run, out: &Path) -> Result<Outcome, CommandError> {
    let cfg = &run.loaded.config;
    let model = run.loaded.model()?;
    let mut stages = Stages::default();
    let stats = stages
        .time("sample", || parallel::collect_samples(&model, cfg.sampling.window, cfg.sampling.samples, cfg.seed))
        .map_err(solver)?;
    let lambda = DensityEstimate::from_samples(&stats, cfg.sampling.window);
    let mu = PalmEstimate::from_samples(&stats, cfg.sampling.window);
    log::info!("lambda_hat = {} +- {}", lambda.lambda_total, lambda.total_std_error);
    ensure_parent(out)?;
    output::write_densities(out, &model, &lambda, &mu).map_err(io_err(out))?;
    let manifest = seal(run.manifest("estimate-densities")?, stages, &[out.to_path_buf()], manifest_beside(out))?;
    Ok(Outcome { manifest, passed: true })
}

/// Class-wise density and Palm mass estimates against their closed forms,
/// plus the radius identity for random class-weight vectors.
pub fn identity_rows(run: &Run) -> Result<Vec<CheckRow>, CommandError> {
    let cfg = &run.loaded.config;
    let model = run.loaded.model()?;
    let stats = parallel::collect_samples(&model, cfg.sampling.window, cfg.sampling.samples, cfg.seed).map_err(solver)?;
    let lambda = DensityEstimate::from_samples(&stats, cfg.sampling.window);
    let mu = PalmEstimate::from_samples(&stats, cfg.sampling.window);
    let mut rows = Vec::new();
    let mut push = |check: &str, index: usize, lhs: f64, rhs: f64, se: f64| {
        let difference = lhs - rhs;
        let pass = difference.abs() <= fascicle_core::ergodics::PASS_SIGMAS * se + 1e-12;
        rows.push(CheckRow { check: check.into(), index, lhs, rhs, difference, combined_se: se, pass });
    };
    for (k, exact) in analytic_volume_fractions(&model).into_iter().enumerate() {
        push("volume_fraction", k + 1, lambda.lambda_by_class[k], exact, lambda.std_error[k]);
    }
    for (k, exact) in analytic_palm_masses(&model).into_iter().enumerate() {
        push("palm_mass", k + 1, mu.mu_by_class[k], exact, mu.std_error[k]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for i in 0..cfg.sampling.weight_vectors {
        let f: Vec<f64> = (0..model.n_classes()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = radius_identity_from_samples(&model, &f, &stats);
        rows.push(CheckRow {
            check: "radius_identity".into(),
            index: i + 1,
            lhs: r.lhs,
            rhs: r.rhs,
            difference: r.difference,
            combined_se: r.combined_se,
            pass: r.pass,
        });
    }
    Ok(rows)
}

pub fn check_identities(run: &Run, out: &Path) -> Result<Outcome, CommandError> {
    let mut stages = Stages::default();
    let rows = stages.time("estimate", || identity_rows(run))?;
    let passed = rows.iter().all(|r| r.pass);
    for r in rows.iter().filter(|r| !r.pass) {
        log::warn!("{} {} failed: {} vs {} (se {})", r.check, r.index, r.lhs, r.rhs, r.combined_se);
    }
    ensure_parent(out)?;
    output::write_checks(out, &rows).map_err(io_err(out))?;
    let manifest = seal(run.manifest("check-identities")?, stages, &[out.to_path_buf()], manifest_beside(out))?;
    Ok(Outcome { manifest, passed })
}

pub fn tabulate_sigma_hom(run: &Run, out: &Path) -> Result<Outcome, CommandError> {
    let model = run.loaded.model()?;
    let law = run.loaded.extracellular_law()?;
    let spec = run.loaded.table_spec()?;
    let mut stages = Stages::default();
    let table = stages.time("tabulate", || parallel::tabulate(&model, &law, &spec)).map_err(solver)?;
    ensure_dir(out)?;
    let (csv, json) = (out.join("table.csv"), out.join("table.json"));
    output::write_table(&csv, &json, &table).map_err(io_err(out))?;
    let manifest = seal(run.manifest("tabulate-sigma-hom")?, stages, &[csv, json], out.join("manifest.json"))?;
    Ok(Outcome { manifest, passed: true })
}

#[derive(Serialize)]
struct MacroDiagnostics<'a> {
    steps: usize,
    newton_iterations: usize,
    clamp_events: usize,
    max_residual: f64,
    lambda: f64,
    final_time: f64,
    diagnostics: &'a fascicle_core::macro_solver::EnergyDiagnostics,
    history: &'a [fascicle_core::macro_solver::EnergyDiagnostics],
    snapshot_times: Vec<f64>,
}

pub fn run_macro(run: &Run, out: &Path) -> Result<Outcome, CommandError> {
    let cfg = run.loaded.macro_config()?;
    let two_d = cfg.is_2d();
    let lambda = cfg.lambda_value();
    let solver_ = MacroSolver::new(cfg).map_err(solver)?;
    let mut stages = Stages::default();
    let series = stages.time("integrate", || solver_.run()).map_err(solver)?;
    ensure_dir(out)?;
    let mut outputs = Vec::new();
    for i in 0..series.snapshots.len() {
        let p = out.join(format!("snapshot_{i:05}.csv"));
        output::write_snapshot(&p, &series, i, two_d).map_err(io_err(&p))?;
        outputs.push(p);
    }
    let diag = MacroDiagnostics {
        steps: series.steps,
        newton_iterations: series.newton_iterations,
        clamp_events: series.clamp_events,
        max_residual: series.max_residual,
        lambda,
        final_time: series.final_state().t,
        diagnostics: &series.diagnostics,
        history: &series.diagnostics_history,
        snapshot_times: series.snapshots.iter().map(|s| s.t).collect(),
    };
    let p = out.join("diagnostics.json");
    let text = serde_json::to_string_pretty(&diag).map_err(|e| CommandError::Solver(e.to_string()))?;
    fs::write(&p, text + "\n").map_err(io_err(&p))?;
    outputs.push(p);
    let manifest = seal(run.manifest("run-macro")?, stages, &outputs, out.join("manifest.json"))?;
    Ok(Outcome { manifest, passed: true })
}

#[derive(Serialize)]
struct ConvergenceSummary<'a> {
    reference_energy: f64,
    sigma_eff: f64,
    sigma_eff_sd: f64,
    palm_mass: f64,
    samples: Vec<SampleRecord>,
    report: &'a fascicle_core::micro_reference::ConvergenceReport,
    pass: bool,
}

#[derive(Serialize)]
struct SampleRecord {
    epsilon: f64,
    realization: usize,
    energy: f64,
}

pub fn verify_cell_convergence(run: &Run, out: &Path) -> Result<Outcome, CommandError> {
    let model = run.loaded.model()?;
    let law = run.loaded.extracellular_law()?;
    if !matches!(law.kind(), LawKind::Constant { .. }) {
        return Err(run.loaded.invalid("conductivity.kind", "the convergence check needs a constant law").into());
    }
    let spec = run.loaded.micro_spec()?;
    let mut stages = Stages::default();
    let (samples, reference) = stages.time("sweep", || parallel::micro_sweep(&model, &law, &spec)).map_err(solver)?;
    let pairs: Vec<(f64, f64)> = samples.iter().map(|&(e, _, v)| (e, v)).collect();
    let report = convergence_report(&pairs, reference.energy).map_err(solver)?;
    ensure_dir(out)?;
    let csv = out.join("convergence_report.csv");
    output::write_convergence(&csv, &report).map_err(io_err(&csv))?;
    let summary = ConvergenceSummary {
        reference_energy: reference.energy,
        sigma_eff: reference.sigma_eff,
        sigma_eff_sd: reference.sigma_eff_sd,
        palm_mass: reference.mu,
        samples: samples.iter().map(|&(epsilon, realization, energy)| SampleRecord { epsilon, realization, energy }).collect(),
        report: &report,
        pass: report.pass,
    };
    let json = out.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| CommandError::Solver(e.to_string()))?;
    fs::write(&json, text + "\n").map_err(io_err(&json))?;
    let manifest = seal(run.manifest("verify-cell-convergence")?, stages, &[csv, json], out.join("manifest.json"))?;
    Ok(Outcome { manifest, passed: report.pass })
}
