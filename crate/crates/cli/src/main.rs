use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use privgain::data::{load_csv, save_csv, RangePolicy, SchemaMetadata};
use privgain::experiment::{self, Level, RunOptions};
use privgain::games::outlier_scores;
use privgain::rng::rng_from_seed;
use privgain::sanitiser::{sanitise, SanitiserConfig};
use privgain::synth::{fit_sample, ExternalOptions, GeneratorSpec};

#[derive(Parser)]
#[command(name = "privgain", version, about = "Privacy gain and utility experiments on synthetic and sanitised data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write report.json, outcomes.csv, plotdata/ and provenance.json.
    Run(RunArgs),
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the targets a config resolves to, with their outlier scores.
    SelectTargets {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Apply a sanitiser config to a CSV file.
    Sanitise {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a generator on a CSV file and write m synthetic records.
    Synthesize {
        /// Generator spec (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Metadata given to the generator; defaults to the schema.
        #[arg(long)]
        metadata: Option<PathBuf>,
        #[arg(long)]
        keep_workdirs: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    keep_workdirs: bool,
    /// Output directory; overrides the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn fail(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(1)
}

fn run(args: RunArgs) -> ExitCode {
    let opts = RunOptions {
        jobs: args.jobs,
        keep_workdirs: args.keep_workdirs,
        seed: args.seed,
        output_dir: args.out,
    };
    let (output, checks, dir) = match experiment::run_experiment(&args.config, &opts) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    for (key, s) in &output.report.summary {
        println!(
            "{key}: {} mean {:.4} (se {:.4}) min {:.4} max {:.4} over {} cells ({} failed)",
            s.metric, s.mean, s.mean_se, s.min, s.max, s.cells, s.failed
        );
    }
    for (mech, a) in &output.report.aggregate_utility {
        if let Some(m) = &a.mean {
            println!("aggregate_utility|{mech}: accuracy raw {:.4} published {:.4}", m.accuracy_raw, m.accuracy_published);
        }
    }
    let mut code = output.exit_code();
    if let Some(checks) = checks {
        for c in &checks {
            let actual = c.actual.map_or_else(|| "missing".to_string(), |v| format!("{v:.6}"));
            println!(
                "{} {} {} {} (actual {actual})",
                if c.passed { "PASS" } else { "FAIL" },
                c.metric_path,
                c.comparator.symbol(),
                c.bound
            );
        }
        if code == 0 && checks.iter().any(|c| !c.passed) {
            code = 3;
        }
    }
    eprintln!("wrote {}", dir.display());
    ExitCode::from(code as u8)
}

fn validate(config: &Path) -> ExitCode {
    let diags = experiment::validate_config_file(config);
    for d in &diags {
        let level = match d.level {
            Level::Error => "error",
            Level::Warning => "warning",
        };
        println!("{level}: {}: {}", d.path, d.message);
    }
    if diags.iter().any(|d| d.level == Level::Error) {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn select_targets(config: &Path, seed: Option<u64>) -> ExitCode {
    let file = match experiment::load_experiment(config) {
        Ok(f) => f,
        Err(e) => return fail(e),
    };
    let mut cfg = file.config.clone();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let plan = match cfg.resolve(&file.base_dir) {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    let scores = outlier_scores(&plan.population);
    println!("index,group,outlier_score");
    for t in &plan.targets {
        println!("{},{},{}", t.index, t.group, scores[t.index]);
    }
    ExitCode::SUCCESS
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_schema(path: &Path) -> Result<Arc<SchemaMetadata>, String> {
    SchemaMetadata::from_json_file(path).map(Arc::new).map_err(|e| e.to_string())
}

fn sanitise_cmd(config: &Path, schema: &Path, input: &Path, out: &Path) -> Result<(), String> {
    let cfg: SanitiserConfig = read_json(config)?;
    let data = load_csv(input, load_schema(schema)?, RangePolicy::Reject).map_err(|e| e.to_string())?;
    let cleaned = sanitise(&data, &cfg).map_err(|e| e.to_string())?;
    save_csv(&cleaned, out).map_err(|e| e.to_string())?;
    eprintln!("kept {} of {} records", cleaned.len(), data.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn synthesize_cmd(
    config: &Path,
    schema: &Path,
    input: &Path,
    out: &Path,
    m: usize,
    seed: u64,
    metadata: Option<&Path>,
    keep_workdirs: bool,
) -> Result<(), String> {
    let spec: GeneratorSpec = read_json(config)?;
    spec.validate().map_err(|e| e.to_string())?;
    let schema = load_schema(schema)?;
    let metadata = match metadata {
        Some(p) => load_schema(p)?,
        None => schema.clone(),
    };
    let data = load_csv(input, schema, RangePolicy::Reject).map_err(|e| e.to_string())?;
    let external = ExternalOptions {
        keep_workdirs,
        workdir_root: None,
    };
    let synth = fit_sample(&spec, &data, &metadata, m, &mut rng_from_seed(seed), &external).map_err(|e| e.to_string())?;
    save_csv(&synth, out).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Validate { config } => validate(&config),
        Command::SelectTargets { config, seed } => select_targets(&config, seed),
        Command::Sanitise { config, schema, input, out } => sanitise_cmd(&config, &schema, &input, &out).map_or_else(fail, |()| ExitCode::SUCCESS),
        Command::Synthesize {
            config,
            schema,
            input,
            out,
            m,
            seed,
            metadata,
            keep_workdirs,
        } => synthesize_cmd(&config, &schema, &input, &out, m, seed, metadata.as_deref(), keep_workdirs).map_or_else(fail, |()| ExitCode::SUCCESS),
    }
}
