// SPDX-License-Identifier: Apache-2.0

//! `axmul`: seed generation, characterization, obfuscation campaigns and
//! detector training/evaluation.
//!
//! Exit codes: 0 success, 1 other failure, 2 parse or usage error,
//! 3 constraint or feasibility failure, 4 I/O failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use axmul_core::campaign::{
    execute_run, metric_set_label, parse_metric_set, run_campaign, CampaignConfig, CampaignError, ConfigError, RunSpec,
};
use axmul_core::dataset::DatasetError;
use axmul_core::detect::DetectError;
use axmul_core::metrics::{
    error_metrics, heatmap, read_heatmap, render_heatmap, write_heatmap, HeatMap, Metric, MetricsError,
};
use axmul_core::netlist::{serialize_netlist, simulate_exhaustive};
use axmul_core::obfuscate::{ObfuscateError, ObfuscationConfig, TrajectoryError};
use axmul_core::pipeline::{self, PipelineConfig, PipelineError};
use axmul_core::seeds::{export_structural, gen_bam, import_structural, read_circuit, BamConfig, ReadCircuitError};

#[derive(Parser)]
#[command(name = "axmul", version, about = "Approximate multiplier obfuscation and IP-theft detection")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SeedKind {
    Exact,
    Bam,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    /// Gate-list document.
    Gl,
    /// Structural assign-style module.
    V,
}

#[derive(Args)]
struct WorkArgs {
    /// Campaign output directory (repeatable).
    #[arg(long = "campaign", required = true)]
    campaigns: Vec<PathBuf>,
    /// Directory for datasets, models and reports.
    #[arg(long)]
    work: PathBuf,
    #[arg(long, default_value_t = 0)]
    rng_seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an exact or broken-array multiplier.
    SeedGen {
        #[arg(long, value_enum, default_value = "bam")]
        kind: SeedKind,
        #[arg(long, default_value_t = 8)]
        width: u32,
        /// Dropped low columns.
        #[arg(long, default_value_t = 0)]
        v: u32,
        /// Dropped low rows.
        #[arg(long, default_value_t = 0)]
        h: u32,
        #[arg(long, value_enum, default_value = "gl")]
        format: OutFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a structural module into a gate-list document.
    Import {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print error metrics and write the heat map (binary and PGM).
    Characterize {
        netlist: PathBuf,
        /// Output prefix; writes PREFIX.obfx and PREFIX.pgm.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one constrained obfuscation search.
    Obfuscate {
        netlist: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        tau: f64,
        /// Constrained metrics, e.g. `wce,mae,ep`.
        #[arg(long, default_value = "wce,mae,ep")]
        metrics: String,
        #[arg(long, default_value_t = 15000)]
        gmax: u64,
        #[arg(long, default_value_t = 1)]
        lambda: usize,
        #[arg(long, default_value_t = 1)]
        h: usize,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
        /// Run directory for the trajectory and final netlist.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every (seed, tau, metric set, run) of a campaign file.
    Campaign {
        config: PathBuf,
        /// Overrides the configured worker count.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Build the baseline and swapped datasets and split them.
    Dataset {
        #[command(flatten)]
        work: WorkArgs,
        #[arg(long, default_value_t = 5)]
        negatives_per: usize,
        /// Train, test and validation fractions.
        #[arg(long, value_delimiter = ',', default_values_t = [0.634, 0.206, 0.160])]
        fractions: Vec<f64>,
    },
    /// Train threshold, tree and forest detectors on both datasets.
    Train {
        #[command(flatten)]
        work: WorkArgs,
        #[arg(long, default_value_t = 100)]
        trees: usize,
    },
    /// Evaluate saved detectors on the test splits, or score external predictions.
    Eval {
        #[command(flatten)]
        work: WorkArgs,
        /// `idx,score,label` predictions to score against `--index`.
        #[arg(long, requires = "index")]
        predictions: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Re-evaluate the tree and forest with partial response availability.
    Sweep {
        #[command(flatten)]
        work: WorkArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 0.9, 0.7, 0.5, 0.3, 0.2, 0.1])]
        fractions: Vec<f64>,
    },
    /// Write two-channel grayscale tensors for external models.
    ExportTensors {
        #[command(flatten)]
        work: WorkArgs,
    },
    /// Render a heat map (from a netlist or a `.obfx` file) as PGM.
    Render {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep only this fraction of cells; masked cells render mid-gray.
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
    },
}

/// An error with its exit-code category.
struct Failure {
    code: u8,
    msg: String,
}

const PARSE: u8 = 2;
const CONSTRAINT: u8 = 3;
const IO: u8 = 4;

impl Failure {
    fn new(code: u8, msg: impl ToString) -> Self {
        Self { code, msg: msg.to_string() }
    }
}

impl From<ReadCircuitError> for Failure {
    fn from(e: ReadCircuitError) -> Self {
        let code = if matches!(e, ReadCircuitError::Io { .. }) { IO } else { PARSE };
        Self::new(code, e)
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        let code = match e {
            MetricsError::Io(_) => IO,
            MetricsError::Format(_) | MetricsError::Fraction(_) => PARSE,
            _ => 1,
        };
        Self::new(code, e)
    }
}

impl From<ObfuscateError> for Failure {
    fn from(e: ObfuscateError) -> Self {
        Self::new(CONSTRAINT, e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let code = if matches!(e, ConfigError::Io { .. }) { IO } else { PARSE };
        Self::new(code, e)
    }
}

impl From<CampaignError> for Failure {
    fn from(e: CampaignError) -> Self {
        match e {
            CampaignError::Config(c) => c.into(),
            CampaignError::Obfuscate(o) => o.into(),
            CampaignError::Metrics(m) => m.into(),
            CampaignError::Io { .. } | CampaignError::Trajectory(TrajectoryError::Io(_)) => Self::new(IO, e),
            CampaignError::Trajectory(_) | CampaignError::Artifact { .. } => Self::new(PARSE, e),
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        let code = match e {
            DatasetError::Io(_) => IO,
            DatasetError::Format(_) => PARSE,
            DatasetError::TooFewSeeds { .. } | DatasetError::Fractions(_) | DatasetError::SplitInfeasible { .. } => {
                CONSTRAINT
            }
            _ => 1,
        };
        Self::new(code, e)
    }
}

impl From<DetectError> for Failure {
    fn from(e: DetectError) -> Self {
        match e {
            DetectError::Dataset(d) => d.into(),
            DetectError::Metrics(m) => m.into(),
            DetectError::Io(_) => Self::new(IO, e),
            DetectError::Model(_) | DetectError::Predictions { .. } | DetectError::UnknownIndex(_) => Self::new(PARSE, e),
            DetectError::SingleClass | DetectError::Empty => Self::new(CONSTRAINT, e),
            _ => Self::new(1, e),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Campaign(c) => c.into(),
            PipelineError::Dataset(d) => d.into(),
            PipelineError::Detect(d) => d.into(),
            PipelineError::Io { .. } => Self::new(IO, e),
            PipelineError::Artifact { .. } => Self::new(PARSE, e),
        }
    }
}

fn write_out(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::new(IO, format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::new(IO, format!("{}: {e}", path.display())))
}

fn load_map(path: &Path) -> Result<HeatMap, Failure> {
    if path.extension().is_some_and(|e| e == "obfx") {
        Ok(read_heatmap(path)?)
    } else {
        Ok(heatmap(&simulate_exhaustive(&read_circuit(path)?)))
    }
}

fn pipeline_config(rng_seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        rng_seed,
        ..Default::default()
    };
    cfg.forest.rng_seed = rng_seed;
    cfg.tree.rng_seed = rng_seed;
    cfg
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::SeedGen {
            kind,
            width,
            v,
            h,
            format,
            out,
        } => {
            let cfg = match kind {
                SeedKind::Exact => BamConfig::EXACT,
                SeedKind::Bam => BamConfig::new(v, h),
            };
            let g = gen_bam(width, cfg).map_err(|e| Failure::new(CONSTRAINT, e))?;
            let text = match format {
                OutFormat::Gl => serialize_netlist(&g),
                OutFormat::V => export_structural(&g, &cfg.id()),
            };
            write_out(&out, &text)?;
            println!("{}: {} gates", out.display(), g.active_gate_count());
        }
        Command::Import { input, out } => {
            let text = fs::read_to_string(&input).map_err(|e| Failure::new(IO, format!("{}: {e}", input.display())))?;
            let c = import_structural(&text).map_err(|e| Failure::new(PARSE, format!("{}: {e}", input.display())))?;
            write_out(&out, &serialize_netlist(&c.genome))?;
            println!("{}: module {}, {} gates", out.display(), c.module.as_deref().unwrap_or("-"), c.genome.active_gate_count());
        }
        Command::Characterize { netlist, out } => {
            let g = read_circuit(&netlist)?;
            let map = heatmap(&simulate_exhaustive(&g));
            let m = error_metrics(&map)?;
            println!("circuit  {}", netlist.display());
            println!("gates    {}", g.active_gate_count());
            println!("wce      {}", m.wce);
            println!("mae      {}", m.mae);
            println!("ep       {}", m.ep);
            if let Some(prefix) = out {
                if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir).map_err(|e| Failure::new(IO, e))?;
                }
                write_heatmap(&map, &prefix.with_extension("obfx"))?;
                render_heatmap(&map, &prefix.with_extension("pgm"))?;
            }
        }
        Command::Obfuscate {
            netlist,
            tau,
            metrics,
            gmax,
            lambda,
            h,
            rng_seed,
            out,
        } => {
            let seed = read_circuit(&netlist)?;
            let metrics: Vec<Metric> = parse_metric_set(&metrics).map_err(|e| Failure::new(PARSE, e))?;
            let spec = RunSpec {
                seed_index: 0,
                seed_id: netlist.file_stem().map_or("seed".into(), |s| s.to_string_lossy().into_owned()),
                family: "custom".into(),
                tau,
                metrics,
                run: 0,
                rng_seed,
            };
            let search = ObfuscationConfig {
                lambda,
                h,
                g_max: gmax,
                rng_seed,
            };
            let s = execute_run(&seed, &spec, &search, &out)?;
            println!(
                "{} steps, d = {}, wce {} mae {} ep {} (seed wce {} mae {} ep {}), unique {}, metrics {}",
                s.steps,
                s.final_d,
                s.final_metrics.wce,
                s.final_metrics.mae,
                s.final_metrics.ep,
                s.seed_metrics.wce,
                s.seed_metrics.mae,
                s.seed_metrics.ep,
                s.unique,
                metric_set_label(&spec.metrics)
            );
        }
        Command::Campaign { config, workers } => {
            let mut cfg = CampaignConfig::load(&config)?;
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let report = run_campaign(&cfg)?;
            println!(
                "{} runs: {} executed, {} already complete, {} failed",
                report.summaries.len() + report.failures.len(),
                report.executed,
                report.skipped,
                report.failures.len()
            );
            for u in report.uniqueness() {
                println!("uniqueness {:<8} {}/{} ({:.1}%)", u.family, u.unique, u.runs, 100.0 * u.rate);
            }
            for (dir, msg) in &report.failures {
                eprintln!("failed {dir}: {msg}");
            }
            if !report.failures.is_empty() {
                return Err(Failure::new(1, format!("{} runs failed", report.failures.len())));
            }
        }
        Command::Dataset {
            work,
            negatives_per,
            fractions,
        } => {
            let [train, test, val] = fractions[..] else {
                return Err(Failure::new(PARSE, "--fractions takes exactly three values"));
            };
            let lib = pipeline::load_library(&work.campaigns)?;
            let cfg = PipelineConfig {
                negatives_per,
                fractions: [train, test, val],
                ..pipeline_config(work.rng_seed)
            };
            let sets = pipeline::build_datasets(&lib, &cfg)?;
            pipeline::write_datasets(&work.work, &sets)?;
            println!("baseline {} samples, swapped {} samples", sets[0].len(), sets[1].len());
        }
        Command::Train { work, trees } => {
            let lib = pipeline::load_library(&work.campaigns)?;
            let mut cfg = pipeline_config(work.rng_seed);
            cfg.forest.n_trees = trees;
            pipeline::train_stage(&work.work, &lib, &cfg)?;
            println!("models written to {}", work.work.join("models").display());
        }
        Command::Eval {
            work,
            predictions,
            index,
        } => {
            if let (Some(p), Some(i)) = (predictions, index) {
                let r = pipeline::external_report(&p, &i, "external", "test")?;
                println!("{r}");
                let csv = format!("{}\n{}\n", axmul_core::detect::EvalReport::CSV_HEADER, r.csv_row());
                write_out(&work.work.join("reports").join("external.csv"), &csv)?;
            } else {
                let lib = pipeline::load_library(&work.campaigns)?;
                pipeline::eval_stage(&work.work, &lib)?;
                let table = work.work.join("reports").join("detection.txt");
                print!("{}", fs::read_to_string(&table).map_err(|e| Failure::new(IO, e))?);
            }
        }
        Command::Sweep { work, fractions } => {
            let lib = pipeline::load_library(&work.campaigns)?;
            let cfg = PipelineConfig {
                sweep_fractions: fractions,
                ..pipeline_config(work.rng_seed)
            };
            pipeline::sweep_stage(&work.work, &lib, &cfg)?;
            let txt = work.work.join("reports").join("sweep.txt");
            print!("{}", fs::read_to_string(&txt).map_err(|e| Failure::new(IO, e))?);
        }
        Command::ExportTensors { work } => {
            let lib = pipeline::load_library(&work.campaigns)?;
            for summary in pipeline::export_stage(&work.work, &lib)? {
                for (name, n, tensors, _) in &summary.files {
                    println!("{name}: {n} samples -> {}", tensors.display());
                }
            }
        }
        Command::Render {
            input,
            out,
            fraction,
            rng_seed,
        } => {
            let mut map = load_map(&input)?;
            if let Some(f) = fraction {
                map = map.subsample(f, rng_seed)?;
            }
            render_heatmap(&map, &out)?;
            println!("{}: {}x{}", out.display(), map.cols(), map.rows());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
