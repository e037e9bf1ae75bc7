use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use fbnet::analysis::{write_analysis, Correction};
use fbnet::dataset::{generate_synthetic, load_cohort, read_json, save_cohort, write_json, Cohort, SyntheticConfig};
use fbnet::harness::config::{apply_overrides, flat_to_json, from_flat, read_flat, to_flat};
use fbnet::harness::rundir::{write_comparison_table, write_config, write_metrics, write_summary};
use fbnet::harness::{cross_validate, fit_full, read_graphs, run_ablation, run_graph_comparison, write_graphs, RunConfig, RunRecord};
use fbnet::selftest;
use fbnet::Error;

#[derive(Parser)]
#[command(name = "fbnet", version, about = "Learnable brain-network generation and graph classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat JSON config (dotted keys)
    #[arg(long)]
    config: Option<PathBuf>,
    /// key=value, applied after --config; repeatable
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed; replaces the `seed` key
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Cross-validate one configuration, then fit on the full cohort and export its graphs
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Concurrent fold-runs
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// CE, CE+GL, CE+SL and full objective on shared folds
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Learnable, Pearson and uniform graphs on shared folds
    CompareGraphs {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Heatmaps, edge t-tests and module scores from a train run's graphs
    Analyze {
        #[arg(long)]
        run: PathBuf,
        /// Cohort directory; defaults to the one recorded by `train`
        #[arg(long)]
        data: Option<PathBuf>,
        /// Defaults to <run>/analysis
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "none")]
        correction: Correction,
    },
    /// Gradient checks and loss-identity oracles
    Selftest {
        #[arg(long, default_value_t = fbnet::harness::DEFAULT_SEED)]
        seed: u64,
    },
}

/// Failure with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::NonFinite(_) | Error::NotPositiveDefinite(_) => 4,
            _ => 3,
        };
        Failure { code, message: e.to_string() }
    }
}

type CliResult<T> = Result<T, Failure>;

fn flat_config<T: serde::Serialize>(defaults: &T, common: &Common) -> CliResult<BTreeMap<String, Value>> {
    let mut flat = to_flat(defaults);
    if let Some(path) = &common.config {
        flat.extend(read_flat(path)?);
    }
    apply_overrides(&mut flat, &common.overrides)?;
    if let Some(seed) = common.seed {
        flat.insert("seed".into(), Value::from(seed));
    }
    Ok(flat)
}

fn run_config(common: &Common) -> CliResult<(RunConfig, BTreeMap<String, Value>)> {
    let flat = flat_config(&RunConfig::default(), common)?;
    let cfg = RunConfig::from_flat(&flat)?;
    cfg.validate()?;
    // echo the normalized form so every key is present
    Ok((cfg.clone(), cfg.to_flat()))
}

fn gen_data(out: &Path, common: &Common) -> CliResult<()> {
    let flat = flat_config(&SyntheticConfig::default(), common)?;
    let cfg: SyntheticConfig = from_flat(&flat)?;
    let flat = to_flat(&cfg);
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("config.json");
    fs::write(&path, flat_to_json(&flat)).map_err(|e| Error::io(&path, e))?;
    let cohort = generate_synthetic(&cfg)?;
    save_cohort(&cohort, out)?;
    log::info!("wrote {} samples ({}×{}) to {}", cohort.n(), cohort.v(), cohort.t(), out.display());
    Ok(())
}

#[derive(serde::Serialize, serde::Deserialize)]
struct RunInfo {
    data: PathBuf,
}

fn prepare(data: &Path, out: &Path, flat: &BTreeMap<String, Value>) -> CliResult<Cohort> {
    write_config(out, flat)?;
    let data = data.canonicalize().map_err(|e| Error::io(data, e))?;
    write_json(&out.join("run.json"), &RunInfo { data: data.clone() })?;
    Ok(load_cohort(&data)?)
}

fn report(record: &RunRecord) {
    println!("{:<16} mean AUROC {:.4} ± {:.4}", record.label, record.mean_auroc, record.std_auroc);
}

fn train(data: &Path, out: &Path, common: &Common, jobs: usize) -> CliResult<()> {
    let (cfg, flat) = run_config(common)?;
    let cohort = prepare(data, out, &flat)?;
    let record = cross_validate(&cohort, &cfg, jobs)?;
    write_metrics(out, &record)?;
    write_summary(out, std::slice::from_ref(&record))?;
    report(&record);
    let (model, _) = fit_full(&cohort, &cfg)?;
    let prepared = fbnet::model::PreparedCohort::new(&cohort, &cfg.model_config())?;
    let all: Vec<usize> = (0..cohort.n()).collect();
    if cfg.model == fbnet::model::ModelKind::Graph {
        write_graphs(out, &model.graphs(&prepared, &all)?, &cohort.labels())?;
    }
    model.save(&out.join("model"))?;
    Ok(())
}

fn variant_dir(label: &str) -> String {
    label.replace('+', "_")
}

fn sweep(
    data: &Path,
    out: &Path,
    common: &Common,
    jobs: usize,
    table: &str,
    run: impl Fn(&Cohort, &RunConfig, usize) -> fbnet::Result<Vec<RunRecord>>,
) -> CliResult<()> {
    let (cfg, flat) = run_config(common)?;
    let cohort = prepare(data, out, &flat)?;
    let records = run(&cohort, &cfg, jobs)?;
    for r in &records {
        let dir = out.join(variant_dir(&r.label));
        let mut vflat = flat.clone();
        vflat.insert("loss.alpha".into(), Value::from(r.weights.alpha));
        vflat.insert("loss.beta".into(), Value::from(r.weights.beta));
        vflat.insert("loss.gamma".into(), Value::from(r.weights.gamma));
        vflat.insert("variant".into(), Value::from(r.label.clone()));
        write_config(&dir, &vflat)?;
        write_metrics(&dir, r)?;
        write_summary(&dir, std::slice::from_ref(r))?;
        report(r);
    }
    write_summary(out, &records)?;
    write_comparison_table(&out.join(table), &records)?;
    Ok(())
}

fn analyze(run: &Path, data: Option<&Path>, out: Option<&Path>, correction: Correction) -> CliResult<()> {
    let data = match data {
        Some(d) => d.to_path_buf(),
        None => read_json::<RunInfo>(&run.join("run.json"))?.data,
    };
    let cohort = load_cohort(&data)?;
    let (graphs, labels) = read_graphs(run)?;
    if graphs.len() != cohort.n() {
        return Err(Error::Data(format!("run has {} graphs, cohort has {} samples", graphs.len(), cohort.n())).into());
    }
    let out = out.map_or_else(|| run.join("analysis"), Path::to_path_buf);
    let report = write_analysis(&out, &graphs, &labels, &cohort.class_names, &cohort.partition, correction)?;
    println!("significant edges: {}", report.significance.edges.len());
    for (rank, s) in report.top(3).iter().enumerate() {
        println!("{}. {} T_u = {:.4} (|M_u| = {})", rank + 1, s.name, s.score, s.size);
    }
    Ok(())
}

fn selftest(seed: u64) -> CliResult<()> {
    let results = selftest::run_all(seed)?;
    let mut failed = 0;
    for r in &results {
        let status = if r.passed() { "pass" } else { "FAIL" };
        println!("{status} {:<24} {:.3e} (< {:.0e})", r.name, r.error, r.tolerance);
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        return Err(Failure { code: 4, message: format!("{failed} of {} checks failed", results.len()) });
    }
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData { out, common } => gen_data(&out, &common),
        Command::Train { data, out, common, jobs } => train(&data, &out, &common, jobs),
        Command::Ablate { data, out, common, jobs } => sweep(&data, &out, &common, jobs, "ablation.csv", run_ablation),
        Command::CompareGraphs { data, out, common, jobs } => {
            sweep(&data, &out, &common, jobs, "comparison.csv", run_graph_comparison)
        }
        Command::Analyze { run, data, out, correction } => analyze(&run, data.as_deref(), out.as_deref(), correction),
        Command::Selftest { seed } => selftest(seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FBN_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
