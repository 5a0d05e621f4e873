//! `dtr` command line: simulate, fit, solve and analyze from one config.
//!
//! Every subcommand reads its inputs from the output directory written by
//! the previous step and stamps its outputs with the config hash and seed.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    curve_chart, default_grid, dominance_summary, income_comparison, sensitivity_curves, write_curves_csv,
    IncomeComparisonTable, SensitivityCurve,
};
use crate::cohort::{read_cohort_csv, sample_cohort, simulate_trajectories, write_cohort_csv, TrajectoryDataset};
use crate::config::{load, ApproachConfig, ExperimentConfig};
use crate::error::{Error, Result};
use crate::ordinal::FittedOrdinalModel;
use crate::pipeline::{adaptive_counts, fit_transition_models, patient_profiles};
use crate::policy::{AdaptiveModel, Covariate, CovariateGrid, CovariateProfile, PolicyModel, TransitionModels};

#[derive(Debug, Parser)]
#[command(name = "dtr", version, about = "Optimal dynamic treatment regimes from finite-horizon MDPs")]
pub struct Cli {
    /// Experiment configuration (JSON); the bundled default when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, replacing the configured one.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, replacing the configured one.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dotted-path override such as `reward.lambda=1.2`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample the training cohort and simulate its trajectories.
    Simulate,
    /// Fit transition models from the simulated trajectories.
    Fit,
    /// Write each patient's optimal action matrix.
    Solve {
        /// Solve only this patient of the cohort.
        #[arg(long)]
        patient: Option<usize>,
    },
    /// Covariate-sensitivity curves of the action matrix.
    Sensitivity,
    /// Treatment proportions of fixed-income groups.
    Compare,
    /// Run every step and write a manifest of the outputs.
    Report,
}

pub const COHORT_FILE: &str = "cohort.csv";
pub const TRAJECTORY_FILE: &str = "trajectories.csv";
pub const MODEL_DIR: &str = "models";
pub const ADAPTIVE_FILE: &str = "adaptive.json";
pub const ACTION_FILE: &str = "action_matrices.csv";
pub const SENSITIVITY_FILE: &str = "sensitivity.csv";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const DOMINANCE_FILE: &str = "dominance.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Resolved configuration plus the output directory.
pub struct Context {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub hash: String,
}

impl Context {
    pub fn from_cli(cli: &Cli) -> Result<Self> {
        let mut config = load(cli.config.as_deref(), &cli.overrides)?;
        if let Some(seed) = cli.seed {
            config.seed = seed;
        }
        if let Some(out) = &cli.out {
            config.output_dir = out.clone();
        }
        Ok(Context {
            out: config.output_dir.clone(),
            hash: config.hash(),
            config,
        })
    }

    fn stamp(&self) -> Vec<String> {
        vec![format!("config_hash={} seed={}", self.hash, self.config.seed)]
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.path(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        Ok(BufWriter::new(File::create(path)?))
    }

    fn open(&self, name: &str, prerequisite: &'static str) -> Result<BufReader<File>> {
        let path = self.path(name);
        File::open(&path)
            .map(BufReader::new)
            .map_err(|_| Error::MissingArtifact { path, prerequisite })
    }
}

/// Parses arguments, runs the subcommand and maps errors to exit code 1.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(written) => {
            for path in written {
                println!("wrote {}", path.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Runs one subcommand and returns the files it wrote.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let ctx = Context::from_cli(cli)?;
    match &cli.command {
        Command::Simulate => simulate(&ctx),
        Command::Fit => fit(&ctx),
        Command::Solve { patient } => solve(&ctx, *patient),
        Command::Sensitivity => sensitivity(&ctx),
        Command::Compare => compare(&ctx),
        Command::Report => report(&ctx),
    }
}

pub fn simulate(ctx: &Context) -> Result<Vec<PathBuf>> {
    let c = &ctx.config;
    let truth = c.ground_truth.to_models(c.stages, &c.actions())?;
    let cohort = sample_cohort(&c.covariates, c.simulation.training_patients, c.seed);
    let data = simulate_trajectories(
        &truth,
        &cohort,
        &c.simulation.behavior,
        &c.initial_distribution(),
        c.horizon,
        c.seed,
    )?;
    let mut w = ctx.create(COHORT_FILE)?;
    write_cohort_csv(&mut w, &cohort, &ctx.stamp())?;
    w.flush()?;
    let mut w = ctx.create(TRAJECTORY_FILE)?;
    data.write_csv(&mut w, &ctx.stamp())?;
    w.flush()?;
    Ok(vec![ctx.path(COHORT_FILE), ctx.path(TRAJECTORY_FILE)])
}

fn read_trajectories(ctx: &Context) -> Result<TrajectoryDataset> {
    TrajectoryDataset::read_csv(ctx.open(TRAJECTORY_FILE, "simulate")?, ctx.config.stages, ctx.config.horizon)
}

fn read_cohort(ctx: &Context) -> Result<Vec<CovariateProfile>> {
    read_cohort_csv(ctx.open(COHORT_FILE, "simulate")?)
}

/// Fitted model as stored on disk.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile<M> {
    pub config_hash: String,
    pub seed: u64,
    pub design: Vec<Covariate>,
    pub model: M,
}

fn model_file_name(model: &FittedOrdinalModel<f64>) -> String {
    let ctx = &model.context;
    match ctx.epoch {
        Some(t) => format!("{MODEL_DIR}/t{t}_s{}_a{}.json", ctx.state, ctx.action),
        None => format!("{MODEL_DIR}/s{}_a{}.json", ctx.state, ctx.action),
    }
}

fn write_json<T: Serialize>(ctx: &Context, name: &str, value: &T) -> Result<PathBuf> {
    let mut w = ctx.create(name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(ctx.path(name))
}

fn adaptive_grid(ctx: &Context, grid: &Option<CovariateGrid>, covariates: &[Covariate], data: &TrajectoryDataset) -> Result<CovariateGrid> {
    match grid {
        Some(g) => Ok(g.clone()),
        None => CovariateGrid::tertiles(&patient_profiles(data), covariates).map_err(|e| {
            Error::config("approach.grid_covariates", format!("{e} (output {})", ctx.out.display()))
        }),
    }
}

pub fn fit(ctx: &Context) -> Result<Vec<PathBuf>> {
    let c = &ctx.config;
    let data = read_trajectories(ctx)?;
    match &c.approach {
        ApproachConfig::NonAdaptive => {
            let models = fit_transition_models(&data, &c.fit.design, &c.actions(), &c.fit.settings, c.fit.time_homogeneous)?;
            models
                .models()
                .map(|m| {
                    let file = ModelFile {
                        config_hash: ctx.hash.clone(),
                        seed: c.seed,
                        design: models.design().to_vec(),
                        model: m,
                    };
                    write_json(ctx, &model_file_name(m), &file)
                })
                .collect()
        }
        ApproachConfig::Adaptive {
            grid,
            grid_covariates,
            smoothing,
        } => {
            let grid = adaptive_grid(ctx, grid, grid_covariates, &data)?;
            let counts = adaptive_counts(&data, &grid, &c.actions())?;
            let file = ModelFile {
                config_hash: ctx.hash.clone(),
                seed: c.seed,
                design: grid.dimensions.iter().map(|d| d.covariate).collect(),
                model: AdaptiveModel {
                    counts,
                    grid,
                    smoothing: *smoothing,
                },
            };
            Ok(vec![write_json(ctx, &format!("{MODEL_DIR}/{ADAPTIVE_FILE}"), &file)?])
        }
    }
}

/// The fitted model selected by the configured approach.
pub enum LoadedModel {
    NonAdaptive(TransitionModels),
    Adaptive(AdaptiveModel),
}

impl PolicyModel for LoadedModel {
    fn action_matrix(&self, profile: &CovariateProfile, params: &crate::policy::RewardParameters) -> Result<crate::policy::ActionMatrix> {
        match self {
            LoadedModel::NonAdaptive(m) => m.action_matrix(profile, params),
            LoadedModel::Adaptive(m) => m.action_matrix(profile, params),
        }
    }

    fn uses_covariate(&self, covariate: Covariate) -> bool {
        match self {
            LoadedModel::NonAdaptive(m) => m.uses_covariate(covariate),
            LoadedModel::Adaptive(m) => m.uses_covariate(covariate),
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(ctx: &Context, name: &str) -> Result<T> {
    let reader = ctx.open(name, "fit")?;
    serde_json::from_reader(reader).map_err(|e| Error::Data(format!("{}: {e}", ctx.path(name).display())))
}

pub fn load_model(ctx: &Context) -> Result<LoadedModel> {
    let c = &ctx.config;
    match &c.approach {
        ApproachConfig::NonAdaptive => {
            let epochs: Vec<Option<usize>> = if c.fit.time_homogeneous {
                vec![None]
            } else {
                (1..c.horizon).map(Some).collect()
            };
            let mut models = Vec::new();
            for t in epochs {
                for s in 1..=c.stages {
                    for a in c.actions() {
                        let name = match t {
                            Some(t) => format!("{MODEL_DIR}/t{t}_s{s}_a{a}.json"),
                            None => format!("{MODEL_DIR}/s{s}_a{a}.json"),
                        };
                        let file: ModelFile<FittedOrdinalModel<f64>> = read_json(ctx, &name)?;
                        if file.design != c.fit.design {
                            return Err(Error::Data(format!(
                                "{name} was fitted on a different design; rerun `dtr fit`"
                            )));
                        }
                        models.push(file.model);
                    }
                }
            }
            Ok(LoadedModel::NonAdaptive(TransitionModels::new(
                c.fit.design.clone(),
                c.stages,
                c.actions(),
                models,
            )?))
        }
        ApproachConfig::Adaptive { .. } => {
            let file: ModelFile<AdaptiveModel> = read_json(ctx, &format!("{MODEL_DIR}/{ADAPTIVE_FILE}"))?;
            file.model.counts.check()?;
            CovariateGrid::new(file.model.grid.dimensions.clone())?;
            Ok(LoadedModel::Adaptive(file.model))
        }
    }
}

pub fn solve(ctx: &Context, patient: Option<usize>) -> Result<Vec<PathBuf>> {
    let c = &ctx.config;
    let model = load_model(ctx)?;
    let cohort = read_cohort(ctx)?;
    let selected: Vec<usize> = match patient {
        Some(id) if (1..=cohort.len()).contains(&id) => vec![id],
        Some(id) => {
            return Err(Error::OutOfRange {
                what: "patient id",
                value: id.to_string(),
            })
        }
        None => (1..=cohort.len()).collect(),
    };
    let params = c.reward_parameters();
    use rayon::prelude::*;
    let matrices = selected
        .par_iter()
        .map(|&id| model.action_matrix(&cohort[id - 1], &params))
        .collect::<Result<Vec<_>>>()?;

    let mut out = ctx.create(ACTION_FILE)?;
    for line in ctx.stamp() {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["patient_id".to_string(), "t".to_string()];
    header.extend((1..=c.stages).map(|s| format!("stage_{s}")));
    w.write_record(&header)?;
    for (id, matrix) in selected.iter().zip(&matrices) {
        for (t, row) in matrix.iter().enumerate() {
            let mut rec = vec![id.to_string(), (t + 1).to_string()];
            rec.extend(row.iter().map(usize::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(vec![ctx.path(ACTION_FILE)])
}

pub fn sensitivity(ctx: &Context) -> Result<Vec<PathBuf>> {
    let c = &ctx.config;
    let model = load_model(ctx)?;
    let params = c.reward_parameters();
    let mut curves: Vec<SensitivityCurve> = Vec::new();
    for req in &c.analysis.sensitivity {
        let grid = match &req.grid {
            Some(g) => g.clone(),
            None => default_grid(&c.covariates, req.covariate, c.analysis.points)?,
        };
        curves.extend(sensitivity_curves(
            req.covariate,
            &grid,
            &req.entries,
            c.analysis.reps,
            c.analysis.level,
            &model,
            &params,
            &c.covariates,
            c.seed,
        )?);
    }
    let mut written = Vec::new();
    let mut w = ctx.create(SENSITIVITY_FILE)?;
    write_curves_csv(&mut w, &curves, &ctx.stamp())?;
    w.flush()?;
    written.push(ctx.path(SENSITIVITY_FILE));
    let note = ctx.stamp().join(" ");
    for curve in &curves {
        let name = format!("sensitivity_{}_t{}_s{}.svg", curve.covariate, curve.epoch, curve.stage);
        fs::write(ctx.path(&name), curve_chart(curve, Some(note.clone())).render())?;
        written.push(ctx.path(&name));
    }
    Ok(written)
}

pub fn compare(ctx: &Context) -> Result<Vec<PathBuf>> {
    let c = &ctx.config;
    let model = load_model(ctx)?;
    let params = c.reward_parameters();
    let tables = c
        .analysis
        .income_pairs
        .iter()
        .map(|&(lo, hi)| income_comparison(lo, hi, c.analysis.group_size, &model, &params, &c.covariates, c.seed))
        .collect::<Result<Vec<IncomeComparisonTable>>>()?;

    let mut written = Vec::new();
    let mut w = ctx.create(COMPARISON_FILE)?;
    for (k, table) in tables.iter().enumerate() {
        // one header block for the whole file
        let stamp = if k == 0 { ctx.stamp() } else { Vec::new() };
        let mut buf = Vec::new();
        table.write_csv(&mut buf, &stamp)?;
        let text = String::from_utf8(buf).expect("csv is utf-8");
        let body = if k == 0 {
            text.as_str()
        } else {
            text.split_once('\n').map_or("", |(_, rest)| rest)
        };
        w.write_all(body.as_bytes())?;
    }
    w.flush()?;
    written.push(ctx.path(COMPARISON_FILE));

    let mut out = ctx.create(DOMINANCE_FILE)?;
    for line in ctx.stamp() {
        writeln!(out, "# {line}")?;
    }
    let mut dw = csv::Writer::from_writer(out);
    dw.write_record([
        "theta_low",
        "theta_high",
        "stage",
        "verdict",
        "high_weakly_dominates",
        "crossovers",
        "mean_abs_gap",
    ])?;
    for table in &tables {
        for d in dominance_summary(table) {
            let crossovers: Vec<String> = d.crossovers.iter().map(|(a, b)| format!("{a}-{b}")).collect();
            dw.write_record([
                table.theta_low.to_string(),
                table.theta_high.to_string(),
                d.stage.to_string(),
                serde_json::to_value(d.verdict)?.as_str().unwrap_or_default().to_string(),
                d.high_weakly_dominates.to_string(),
                crossovers.join(" "),
                table.mean_abs_gap().to_string(),
            ])?;
        }
    }
    dw.flush()?;
    written.push(ctx.path(DOMINANCE_FILE));

    let note = ctx.stamp().join(" ");
    for table in &tables {
        for (s, chart) in table.charts(Some(note.clone())).iter().enumerate() {
            let name = format!("comparison_{}_{}_stage{}.svg", table.theta_low, table.theta_high, s + 1);
            fs::write(ctx.path(&name), chart.render())?;
            written.push(ctx.path(&name));
        }
    }
    Ok(written)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub config: ExperimentConfig,
    pub files: Vec<ManifestEntry>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn report(ctx: &Context) -> Result<Vec<PathBuf>> {
    let mut written = simulate(ctx)?;
    written.extend(fit(ctx)?);
    written.extend(solve(ctx, None)?);
    written.extend(sensitivity(ctx)?);
    written.extend(compare(ctx)?);
    let files = written
        .iter()
        .map(|p| {
            Ok(ManifestEntry {
                path: p.strip_prefix(&ctx.out).unwrap_or(p).to_string_lossy().replace('\\', "/"),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut config = ctx.config.clone();
    config.output_dir = PathBuf::from(".");
    let manifest = Manifest {
        config_hash: ctx.hash.clone(),
        seed: ctx.config.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        config,
        files,
    };
    written.push(write_json(ctx, MANIFEST_FILE, &manifest)?);
    Ok(written)
}
