use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use icmpr::estimator::FitOptions;
use icmpr::io::{self, Group, ReportBundle};
use icmpr::selection::{fit_model_grid, stepwise, CovariateStructure, Criterion};
use icmpr::turnbull::turnbull_fit;
use icmpr::{simulation, Error, ModelSpec, ModelType};

const EXIT_PARSE: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_NON_IDENTIFIABLE: u8 = 4;
const EXIT_VALIDATION: u8 = 5;

#[derive(Parser)]
#[command(name = "icmpr", version, about = "Interval-censored Weibull regression with gamma frailty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutDir {
    /// Output directory.
    #[arg(long, env = "ICMPR_OUT_DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    grad_tol: f64,
    /// Extra randomly perturbed starting points.
    #[arg(long, default_value_t = 0)]
    restarts: usize,
    /// Seed for the perturbed starting points.
    #[arg(long, default_value_t = 0)]
    restart_seed: u64,
}

impl FitArgs {
    fn options(&self) -> FitOptions {
        FitOptions {
            max_iter: self.max_iter,
            grad_tol: self.grad_tol,
            restarts: self.restarts,
            seed: self.restart_seed,
            ..FitOptions::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model and write a report bundle.
    Fit {
        data: PathBuf,
        #[arg(long = "type")]
        model_type: ModelType,
        /// Comma-separated scale covariates; `a:b` is an interaction.
        #[arg(long, value_delimiter = ',')]
        scale: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        shape: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        disp: Vec<String>,
        #[arg(long, default_value_t = 0.0)]
        time_offset: f64,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        out: OutDir,
    },
    /// Fit a grid of model types and covariate structures, optionally
    /// followed by stepwise selection.
    Select {
        data: PathBuf,
        /// `LABEL=cov,cov,...`; repeat for each structure.
        #[arg(long = "structure", required = true)]
        structures: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "PH,PHF,PHDM,MPR,MPRF,MPRDM")]
        types: Vec<ModelType>,
        #[arg(long, default_value = "AIC")]
        criterion: Criterion,
        /// `TYPE:LABEL` start for stepwise selection.
        #[arg(long)]
        stepwise_from: Option<String>,
        /// Stepwise candidates; defaults to every covariate in the structures.
        #[arg(long, value_delimiter = ',')]
        candidates: Vec<String>,
        #[arg(long, default_value_t = 0.0)]
        time_offset: f64,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        out: OutDir,
    },
    /// Nonparametric (Turnbull) survivor estimate.
    Npmle {
        data: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        time_offset: f64,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 10_000)]
        max_iter: usize,
        #[command(flatten)]
        out: OutDir,
    },
    /// Curves, hazard ratios and medians from a saved fit.
    Predict {
        bundle: PathBuf,
        /// `NAME:col=value,...`; repeat for each group.
        #[arg(long = "group", required = true)]
        groups: Vec<String>,
        /// Reference group for ratios; defaults to the first group.
        #[arg(long)]
        reference: Option<String>,
        /// `start:end:n` or a comma-separated list of positive times.
        #[arg(long)]
        grid: String,
        #[command(flatten)]
        out: OutDir,
    },
    /// Run a simulation study from a scenario file.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        out: OutDir,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. } | Error::Csv(_) | Error::Json(_) => EXIT_PARSE,
        Error::NonIdentifiable(_) => EXIT_NON_IDENTIFIABLE,
        Error::Io(_) => 1,
        _ => EXIT_VALIDATION,
    }
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), Error> {
    io::write_atomic(&dir.join(name), bytes)
}

fn interactions<'a>(lists: impl IntoIterator<Item = &'a String>) -> Vec<String> {
    lists.into_iter().filter(|s| s.contains(':')).cloned().collect()
}

fn non_empty(v: &[String]) -> Vec<String> {
    v.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

fn run_fit(
    data: &Path,
    model_type: ModelType,
    scale: &[String],
    shape: &[String],
    disp: &[String],
    offset: f64,
    opts: &FitOptions,
    out: &Path,
) -> Result<u8, Error> {
    let (scale, shape, disp) = (non_empty(scale), non_empty(shape), non_empty(disp));
    let data = io::read_data_file(data, offset, &interactions(scale.iter().chain(&shape).chain(&disp)))?;
    let spec = ModelSpec::new(
        model_type,
        io::resolve_columns(&data, &scale)?,
        io::resolve_columns(&data, &shape)?,
        io::resolve_columns(&data, &disp)?,
    )?
    .with_time_offset(offset);
    let fit = icmpr::fit(&spec, &data, opts)?;
    let report = ReportBundle::from_fit(&fit);
    write(out, "fit.json", &io::json_bytes(&report)?)?;
    write(out, "coefficients.csv", &report.coefficients_csv()?)?;
    println!(
        "{}  loglik {}  AIC {}  BIC {}  converged {}",
        report.label,
        io::fmt_num(fit.loglik),
        io::fmt_num(fit.aic()),
        io::fmt_num(fit.bic()),
        fit.converged
    );
    for c in &report.coefficients {
        println!(
            "  {:32} {:>12} {:>10}{}",
            c.name,
            io::fmt_num(c.estimate),
            c.se.map(io::fmt_num).unwrap_or_else(|| "NA".into()),
            if c.star { " *" } else { "" }
        );
    }
    Ok(if fit.converged { 0 } else { EXIT_NOT_CONVERGED })
}

fn parse_structure(s: &str) -> Result<(String, Vec<String>), Error> {
    let (label, covs) = s
        .split_once('=')
        .ok_or_else(|| Error::Input(format!("structure `{s}` must look like LABEL=cov,cov")))?;
    let covs = covs.split(',').map(str::trim).filter(|c| !c.is_empty()).map(String::from).collect();
    Ok((label.trim().to_string(), covs))
}

#[allow(clippy::too_many_arguments)]
fn run_select(
    data: &Path,
    structures: &[String],
    types: &[ModelType],
    criterion: Criterion,
    stepwise_from: Option<&str>,
    candidates: &[String],
    offset: f64,
    opts: &FitOptions,
    out: &Path,
) -> Result<u8, Error> {
    let parsed = structures.iter().map(|s| parse_structure(s)).collect::<Result<Vec<_>, _>>()?;
    let mut all_covs: Vec<String> = Vec::new();
    for c in parsed.iter().flat_map(|(_, c)| c).chain(candidates) {
        if !all_covs.contains(c) {
            all_covs.push(c.clone());
        }
    }
    let data = io::read_data_file(data, offset, &interactions(&all_covs))?;
    let structs = parsed
        .iter()
        .map(|(label, covs)| Ok(CovariateStructure::uniform(label.clone(), &io::resolve_columns(&data, covs)?)))
        .collect::<Result<Vec<_>, Error>>()?;
    let grid = fit_model_grid(&data, &structs, types, opts)?;
    write(out, "grid.json", &io::json_bytes(&grid)?)?;
    write(out, "grid.csv", &io::grid_csv(&grid)?)?;
    for r in &grid.rows {
        println!(
            "{:14} loglik {:>10}  k {:2}  AIC {:>10}  BIC {:>10}{}",
            r.label,
            io::fmt_num(r.loglik),
            r.k,
            io::fmt_num(r.aic),
            io::fmt_num(r.bic),
            if r.converged { "" } else { "  (not converged)" }
        );
    }
    for (c, name) in [(Criterion::Aic, "AIC"), (Criterion::Bic, "BIC")] {
        if let Some(best) = grid.best_by(c) {
            println!("min {name}: {}", best.label);
        }
    }

    if let Some(start) = stepwise_from {
        let (t, label) = start
            .split_once(':')
            .ok_or_else(|| Error::Input(format!("--stepwise-from `{start}` must look like TYPE:LABEL")))?;
        let t: ModelType = t.parse()?;
        let s = structs
            .iter()
            .find(|s| s.label == label)
            .ok_or_else(|| Error::Input(format!("no structure labelled `{label}`")))?;
        let cand_names = if candidates.is_empty() { &all_covs } else { candidates };
        let cand = io::resolve_columns(&data, cand_names)?;
        let result = stepwise(&s.spec_for(t).with_time_offset(offset), &data, &cand, criterion, opts)?;
        write(out, "stepwise.json", &io::json_bytes(&result)?)?;
        write(out, "stepwise.csv", &io::stepwise_csv(&result, data.column_names())?)?;
        let report = ReportBundle::from_fit(&result.best);
        write(out, "stepwise_fit.json", &io::json_bytes(&report)?)?;
        println!(
            "stepwise {}: {} -> {} ({})",
            criterion,
            io::fmt_num(result.start_value),
            io::fmt_num(result.best_value),
            report.label
        );
    }
    Ok(0)
}

fn run_npmle(data: &Path, offset: f64, tol: f64, max_iter: usize, out: &Path) -> Result<u8, Error> {
    let data = io::read_data_file(data, offset, &[])?;
    let est = turnbull_fit(&data, tol, max_iter)?;
    write(out, "npmle.json", &io::json_bytes(&est)?)?;
    write(out, "npmle.csv", &io::npmle_csv(&est.curve())?)?;
    println!(
        "{} support intervals, {} iterations, converged {}",
        est.support.len(),
        est.iterations,
        est.converged
    );
    Ok(0)
}

fn run_predict(bundle: &Path, groups: &[String], reference: Option<&str>, grid: &str, out: &Path) -> Result<u8, Error> {
    let report = ReportBundle::from_json(&std::fs::read_to_string(bundle)?)?;
    let groups = groups.iter().map(|g| Group::parse(g)).collect::<Result<Vec<_>, _>>()?;
    let reference = reference.unwrap_or(&groups[0].name);
    let pred = io::predict(&report.fit, &groups, &io::parse_grid(grid)?, reference)?;
    write(out, "prediction.json", &io::json_bytes(&pred)?)?;
    write(out, "curves.csv", &io::curves_csv(&pred)?)?;
    write(out, "medians.csv", &io::medians_csv(&pred)?)?;
    for m in &pred.medians {
        let ci = m
            .prediction
            .ci
            .map(|(l, h)| format!(" ({}, {})", io::fmt_num(l), io::fmt_num(h)))
            .unwrap_or_default();
        println!("{:20} median {}{}", m.group, io::fmt_num(m.prediction.median), ci);
    }
    Ok(0)
}

fn run_simulate(
    scenario: &Path,
    replicates: Option<usize>,
    seed: Option<u64>,
    opts: &FitOptions,
    out: &Path,
) -> Result<u8, Error> {
    let mut sc = io::read_scenario(scenario)?;
    if let Some(r) = replicates {
        sc.replicates = r;
    }
    if let Some(s) = seed {
        sc.seed = s;
    }
    let summary = simulation::run_study(&sc, opts)?;
    write(out, "study.json", &io::json_bytes(&summary)?)?;
    write(out, "study.csv", &io::study_csv(&summary)?)?;
    println!(
        "{}/{} replicates converged, realized censoring {}",
        summary.converged,
        summary.replicates,
        io::fmt_num(summary.realized_censoring)
    );
    Ok(0)
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Fit {
            data,
            model_type,
            scale,
            shape,
            disp,
            time_offset,
            fit,
            out,
        } => run_fit(&data, model_type, &scale, &shape, &disp, time_offset, &fit.options(), &out.out),
        Command::Select {
            data,
            structures,
            types,
            criterion,
            stepwise_from,
            candidates,
            time_offset,
            fit,
            out,
        } => run_select(
            &data,
            &structures,
            &types,
            criterion,
            stepwise_from.as_deref(),
            &candidates,
            time_offset,
            &fit.options(),
            &out.out,
        ),
        Command::Npmle {
            data,
            time_offset,
            tol,
            max_iter,
            out,
        } => run_npmle(&data, time_offset, tol, max_iter, &out.out),
        Command::Predict {
            bundle,
            groups,
            reference,
            grid,
            out,
        } => run_predict(&bundle, &groups, reference.as_deref(), &grid, &out.out),
        Command::Simulate {
            scenario,
            replicates,
            seed,
            fit,
            out,
        } => run_simulate(&scenario, replicates, seed, &fit.options(), &out.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
