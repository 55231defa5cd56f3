//! Command-line front end.
//!
//! Settings come from three layers, later ones winning: built-in defaults,
//! the optional `--config` TOML file, then command-line flags.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{read_dataset_file, write_dataset_csv, Dataset};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::predictive::{cell_field, log_predictive, CellField, GridSpec, PredictionRequest};
use crate::region::{branch_region, default_c_quick, hdr_region, Algorithm, CredibleRegion};
use crate::sampler::{fit, DrawStore, McmcConfig};
use crate::screening::{
    aggregate_replicates, dahl_best_configuration, evaluate_cohort, read_report, subject_field, summarize,
    write_report, Horizon, MetricsSummary, ReplicateAggregate, ReportRow, ScreenSpec,
};
use crate::simgen::{default_sim_scheme, simulate_study, split_train_test};

pub const DEFAULT_GRID: &str = "-16:16:2,-24:16:2";

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "ctscreen", version, about = "Latent-class joint trajectory model and predictive anomaly screening")]
pub struct Cli {
    /// Worker threads for screening and replicate simulation (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML file with default settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a study and write train.csv, test.csv and truth.csv.
    Simulate(SimulateArgs),
    /// Fit the model and write a draw store (NDJSON).
    Fit(FitArgs),
    /// Posterior predictive cell masses for one subject's next visit.
    Predict(PredictArgs),
    /// Build a credible region from a cell-field CSV.
    Region(RegionArgs),
    /// Screen a test cohort and write the report, metrics and flagged regions.
    Screen(ScreenArgs),
    /// Mean and SD of screening metrics over replicate reports.
    Metrics(MetricsArgs),
    /// Least-squares best cluster configuration of a draw store.
    BestConfig(BestConfigArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub sites: Option<usize>,
    /// Fraction of subjects in the training set.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Number of independent studies; above 1 each goes to rep_NNN/ with seed + r.
    #[arg(long)]
    pub replicates: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Training dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Output draw store.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub keep: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Random-walk step for the concentration parameter.
    #[arg(long)]
    pub alpha_step: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub draws: PathBuf,
    /// Dataset holding the subject; omit with --baseline for a new subject.
    #[arg(long, requires = "subject")]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub subject: Option<String>,
    /// Baseline pair `x,y` of a new subject.
    #[arg(long, conflicts_with = "data", value_parser = parse_pair, allow_hyphen_values = true)]
    pub baseline: Option<(f64, f64)>,
    /// Future visit time.
    #[arg(long)]
    pub time: f64,
    /// Grid `lo:hi:width,lo:hi:width` for x then y.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
    /// Also print the log predictive density at `x,y`.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    pub at: Option<(f64, f64)>,
    /// Output cell-field CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RegionArgs {
    /// Cell-field CSV from `predict`.
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long)]
    pub target: Option<f64>,
    /// hdr or branch.
    #[arg(long)]
    pub algorithm: Option<String>,
    #[arg(long)]
    pub c_quick: Option<f64>,
    /// Output region CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScreenArgs {
    #[arg(long)]
    pub draws: PathBuf,
    /// Test dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub target: Option<f64>,
    /// hdr, branch or both.
    #[arg(long)]
    pub algorithm: Option<String>,
    #[arg(long)]
    pub c_quick: Option<f64>,
    /// Grid `lo:hi:width,lo:hi:width` for x then y.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
    /// latest, next, or after:K (visit K+1 given the first K).
    #[arg(long)]
    pub horizon: Option<String>,
    /// Visit schedule for `--horizon next`, e.g. 2,4,6,8.
    #[arg(long, value_delimiter = ',')]
    pub schedule: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Report CSVs from `screen`, one per replicate.
    #[arg(long = "report", required = true)]
    pub reports: Vec<PathBuf>,
    /// Output JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BestConfigArgs {
    #[arg(long)]
    pub draws: PathBuf,
    /// Output `subject_id,class` CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Class-size summary file (default: next to --out with a .sizes.txt suffix).
    #[arg(long)]
    pub sizes: Option<PathBuf>,
}

/// Config file layout. Every table and key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub threads: Option<usize>,
    pub model: ModelConfig,
    pub mcmc: McmcConfig,
    pub simulate: SimulateConfig,
    pub screen: ScreenConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub seed: Option<u64>,
    pub subjects: Option<usize>,
    pub sites: Option<usize>,
    pub train_fraction: Option<f64>,
    pub replicates: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreenConfig {
    pub target: Option<f64>,
    pub algorithm: Option<String>,
    pub c_quick: Option<f64>,
    pub grid: Option<String>,
    pub horizon: Option<String>,
    pub schedule: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::arg(format!("config {}: {e}", path.display())))
    }
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected x,y, got '{s}'"))?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("'{v}': {e}"));
    Ok((p(a)?, p(b)?))
}

pub fn parse_algorithms(s: &str) -> Result<Vec<Algorithm>> {
    match s {
        "both" => Ok(vec![Algorithm::Branch, Algorithm::Hdr]),
        other => Ok(vec![other.parse()?]),
    }
}

pub fn parse_horizon(s: &str, schedule: Option<Vec<f64>>) -> Result<Horizon> {
    match s {
        "latest" => Ok(Horizon::Latest),
        "next" => {
            let schedule = schedule.ok_or_else(|| Error::arg("--horizon next needs --schedule"))?;
            Ok(Horizon::Next { schedule })
        }
        _ => {
            let k = s
                .strip_prefix("after:")
                .and_then(|k| k.parse().ok())
                .ok_or_else(|| Error::arg(format!("unknown horizon '{s}' (latest, next, after:K)")))?;
            Ok(Horizon::AfterFirst(k))
        }
    }
}

/// Writes through a temporary file in the destination directory, then renames.
pub fn write_atomic<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<&mut tempfile::NamedTempFile>) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(&mut tmp);
        f(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) => EXIT_USAGE,
        Error::Numeric(_) | Error::NonConvergence(_) => EXIT_NUMERIC,
        Error::Data(_) | Error::GridTooSmall { .. } | Error::Io(_) | Error::Json(_) => EXIT_DATA,
    }
}

/// Runs a parsed command line inside a pool of the requested size.
pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let threads = cli.threads.or(cfg.threads).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::arg(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli.command, &cfg))
}

fn dispatch(cmd: Command, cfg: &RunConfig) -> Result<()> {
    match cmd {
        Command::Simulate(a) => cmd_simulate(a, cfg),
        Command::Fit(a) => cmd_fit(a, cfg),
        Command::Predict(a) => cmd_predict(a, cfg),
        Command::Region(a) => cmd_region(a, cfg),
        Command::Screen(a) => cmd_screen(a, cfg),
        Command::Metrics(a) => cmd_metrics(a),
        Command::BestConfig(a) => cmd_best_config(a),
    }
}

fn write_dataset(path: &Path, d: &Dataset) -> Result<()> {
    write_atomic(path, |w| write_dataset_csv(d, w))
}

fn cmd_simulate(a: SimulateArgs, cfg: &RunConfig) -> Result<()> {
    let c = &cfg.simulate;
    let mut scheme = default_sim_scheme();
    if let Some(n) = a.subjects.or(c.subjects) {
        scheme.n_subjects = n;
    }
    if let Some(n) = a.sites.or(c.sites) {
        scheme.n_sites = n;
    }
    if let Some(f) = a.train_fraction.or(c.train_fraction) {
        scheme.train_fraction = f;
    }
    scheme.validate()?;
    let seed = a.seed.or(c.seed).unwrap_or(0);
    let replicates = a.replicates.or(c.replicates).unwrap_or(1);
    if replicates == 0 {
        return Err(Error::arg("replicates must be at least 1"));
    }

    let one = |dir: &Path, seed: u64| -> Result<()> {
        let (d, truth) = simulate_study(&scheme, seed)?;
        let (train, test, _, _) = split_train_test(&d, &truth, scheme.train_fraction, seed.wrapping_add(1))?;
        write_dataset(&dir.join("train.csv"), &train)?;
        write_dataset(&dir.join("test.csv"), &test)?;
        write_atomic(&dir.join("truth.csv"), |w| truth.write_csv(w))?;
        log::info!("{}: {} train, {} test subjects", dir.display(), train.len(), test.len());
        Ok(())
    };
    if replicates == 1 {
        one(&a.out, seed)
    } else {
        (0..replicates)
            .into_par_iter()
            .map(|r| one(&a.out.join(format!("rep_{:03}", r + 1)), seed.wrapping_add(r as u64)))
            .collect::<Result<Vec<()>>>()
            .map(|_| ())
    }
}

fn cmd_fit(a: FitArgs, cfg: &RunConfig) -> Result<()> {
    let mut mc = cfg.model.clone();
    if let Some(c) = a.classes {
        mc.classes = c;
    }
    let mut run = cfg.mcmc.clone();
    if let Some(v) = a.burnin {
        run.burn_in = v;
    }
    if let Some(v) = a.keep {
        run.keep = v;
    }
    if let Some(v) = a.thin {
        run.thin = v;
    }
    if let Some(v) = a.seed {
        run.seed = v;
    }
    if let Some(v) = a.alpha_step {
        run.alpha_step = v;
    }
    mc.validate()?;
    run.validate()?;
    let d = read_dataset_file(&a.data)?;
    let sweeps = run.burn_in + run.keep * run.thin;
    let start = std::time::Instant::now();
    let store = fit(&d, &mc, &run)?;
    let secs = start.elapsed().as_secs_f64();
    log::info!(
        "{sweeps} sweeps in {secs:.2} s ({:.3} ms/sweep); alpha acceptance {:.3}",
        1e3 * secs / sweeps.max(1) as f64,
        store.provenance.alpha_acceptance
    );
    write_atomic(&a.out, |w| store.write_ndjson(w))
}

fn grid_from(flag: Option<String>, file: &Option<String>) -> Result<GridSpec> {
    GridSpec::parse(flag.as_deref().or(file.as_deref()).unwrap_or(DEFAULT_GRID))
}

fn cmd_predict(a: PredictArgs, cfg: &RunConfig) -> Result<()> {
    let store = DrawStore::read_file(&a.draws)?;
    let grid = grid_from(a.grid, &cfg.screen.grid)?;
    let req = match (&a.data, &a.subject, a.baseline) {
        (Some(path), Some(id), None) => {
            let d = read_dataset_file(path)?;
            let rec = d.subject(id).ok_or_else(|| Error::arg(format!("subject '{id}' not in {}", path.display())))?;
            PredictionRequest::from_record(rec, vec![a.time])?
        }
        (None, None, Some((bx, by))) => PredictionRequest::new_subject(bx, by, vec![a.time]),
        _ => return Err(Error::arg("give either --data with --subject, or --baseline")),
    };
    let field = cell_field(&req, &grid, &store)?;
    if let Some((x, y)) = a.at {
        println!("log_density\t{}", log_predictive(&req, &[x], &[y], &store)?);
    }
    println!("grid_mass\t{}\noutside_mass\t{}", field.grid_mass(), field.outside_mass);
    write_atomic(&a.out, |w| field.write_csv(w))
}

fn build_region(field: &CellField, target: f64, alg: Algorithm, c_quick: Option<f64>) -> Result<CredibleRegion> {
    match alg {
        Algorithm::Hdr => hdr_region(field, target),
        Algorithm::Branch => branch_region(field, target, c_quick.unwrap_or_else(|| default_c_quick(target))),
    }
}

fn cmd_region(a: RegionArgs, cfg: &RunConfig) -> Result<()> {
    let field = CellField::read_csv(fs::File::open(&a.field)?)?;
    let target = a.target.or(cfg.screen.target).unwrap_or(0.8);
    let alg: Algorithm = a.algorithm.as_deref().or(cfg.screen.algorithm.as_deref()).unwrap_or("hdr").parse()?;
    let region = build_region(&field, target, alg, a.c_quick.or(cfg.screen.c_quick))?;
    println!("algorithm\t{alg}\ncells\t{}\np_sum\t{}", region.cells.len(), region.p_sum);
    write_atomic(&a.out, |w| region.write_csv(&field, w))
}

fn cmd_screen(a: ScreenArgs, cfg: &RunConfig) -> Result<()> {
    let c = &cfg.screen;
    let grid = grid_from(a.grid, &c.grid)?;
    let target = a.target.or(c.target).unwrap_or(0.8);
    let algorithms = parse_algorithms(a.algorithm.as_deref().or(c.algorithm.as_deref()).unwrap_or("both"))?;
    let horizon = parse_horizon(
        a.horizon.as_deref().or(c.horizon.as_deref()).unwrap_or("latest"),
        a.schedule.or_else(|| c.schedule.clone()),
    )?;
    let mut spec = ScreenSpec::new(grid, target, algorithms, horizon);
    spec.c_quick = a.c_quick.or(c.c_quick);

    let store = DrawStore::read_file(&a.draws)?;
    let test = read_dataset_file(&a.data)?;
    let (results, summary) = evaluate_cohort(&test, &store, &spec)?;
    let rows: Vec<ReportRow> = results.iter().map(ReportRow::from).collect();
    write_atomic(&a.out.join("report.csv"), |w| write_report(&rows, w))?;
    write_atomic(&a.out.join("metrics.json"), |w| summary.write_json(w))?;

    // Heatmaps for flagged subjects, one file per subject and algorithm.
    let flagged: Vec<_> = results.iter().filter(|r| r.verdict.is_anomaly()).collect();
    if !flagged.is_empty() {
        let dir = a.out.join("regions");
        let mut fields = std::collections::BTreeMap::new();
        for r in &flagged {
            if !fields.contains_key(&r.subject_id) {
                let rec = test.subject(&r.subject_id).expect("screened subject is in the dataset");
                let field = subject_field(rec, &store, &spec)?.expect("screened subject has a field");
                fields.insert(r.subject_id.clone(), field);
            }
            let field = &fields[&r.subject_id];
            let path = dir.join(format!("{}_{}.csv", r.subject_id, r.algorithm()));
            write_atomic(&path, |w| r.region.write_csv(field, w))?;
        }
    }
    for m in &summary.algorithms {
        println!(
            "{}\tsubjects {}\tcoverage {:.4}\tbias {:.4}\trmse {:.4}\tflagged {}",
            m.algorithm,
            m.n_subjects,
            m.coverage_proportion,
            m.bias,
            m.rmse,
            m.n_outside + m.n_off_grid
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct MetricsOutput {
    replicates: Vec<MetricsSummary>,
    aggregate: Vec<ReplicateAggregate>,
}

fn cmd_metrics(a: MetricsArgs) -> Result<()> {
    let summaries =
        a.reports.iter().map(|p| summarize(&read_report(fs::File::open(p)?)?)).collect::<Result<Vec<_>>>()?;
    let aggregate = aggregate_replicates(&summaries)?;
    println!("algorithm\treplicates\tcoverage mean (sd)\tbias mean (sd)\trmse mean (sd)");
    for g in &aggregate {
        println!(
            "{}\t{}\t{:.2}% ({:.3}%)\t{:.2}% ({:.3}%)\t{:.2}% ({:.3}%)",
            g.algorithm,
            g.replicates,
            100.0 * g.coverage_mean,
            100.0 * g.coverage_sd,
            100.0 * g.bias_mean,
            100.0 * g.bias_sd,
            100.0 * g.rmse_mean,
            100.0 * g.rmse_sd
        );
    }
    let out = MetricsOutput { replicates: summaries, aggregate };
    write_atomic(&a.out, |w| {
        serde_json::to_writer_pretty(&mut *w, &out)?;
        writeln!(w)?;
        Ok(())
    })
}

fn cmd_best_config(a: BestConfigArgs) -> Result<()> {
    let store = DrawStore::read_file(&a.draws)?;
    let best = dahl_best_configuration(&store)?;
    let ids = &store.provenance.subject_ids;
    if ids.len() != best.labels.len() {
        return Err(Error::data("draw store subject list does not match its labels"));
    }
    write_atomic(&a.out, |w| {
        writeln!(w, "subject_id,class")?;
        for (id, z) in ids.iter().zip(&best.labels) {
            writeln!(w, "{id},{z}")?;
        }
        Ok(())
    })?;
    let sizes = best.format_sizes();
    let sizes_path = a.sizes.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".sizes.txt");
        PathBuf::from(p)
    });
    write_atomic(&sizes_path, |w| {
        writeln!(w, "{sizes}")?;
        Ok(())
    })?;
    println!("draw {} loss {:.4}\n{sizes}", best.draw_index, best.loss);
    Ok(())
}
