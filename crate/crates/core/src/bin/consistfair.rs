use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use consistfair::client::{compact, scan, Classifier};
use consistfair::harness::{
    build_report, emit_report, emit_sweep, run_experiment_with, sweep_perturbations, sweep_threshold, AuditRun,
    ConfigFiles, ExperimentConfig, FairnessReport, OutputFormat,
};
use consistfair::metrics::Metric;
use consistfair::{selftest, Error, Threshold};

#[derive(Parser)]
#[command(
    name = "consistfair",
    version,
    about = "Counterfactual consistency auditing for LLM classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify every record and its variants, then write the trail and report.
    Audit {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Consistency threshold, decimal or fraction.
        #[arg(long = "t", default_value = "0.9")]
        threshold: Threshold,
        /// Pick the plan prefix with exactly this many variants.
        #[arg(long)]
        variants: Option<u64>,
    },
    /// Re-apply the flip rule at several thresholds to a stored run.
    SweepT {
        #[arg(long)]
        audits: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.75,0.9,1")]
        thresholds: Vec<Threshold>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one audit per variant count.
    SweepN {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long = "t", default_value = "0.9")]
        threshold: Threshold,
        #[arg(long = "n", value_delimiter = ',', default_value = "2,4,8,16")]
        counts: Vec<u64>,
    },
    /// Rebuild report files from a stored run.
    Report {
        #[arg(long)]
        audits: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "json,csv,svg")]
        formats: Vec<OutputFormat>,
        /// Defaults to the audits directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inspect or maintain a response cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
    /// Print rendered prompts.
    Prompts {
        #[command(subcommand)]
        action: PromptsAction,
    },
    /// Replay the bundled fixture and compare against its golden report.
    Selftest {
        /// Regenerate fixture outputs with the synthetic backend into DIR.
        #[arg(long, hide = true)]
        record: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    prompts: Option<PathBuf>,
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long)]
    backend: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    jobs: usize,
    /// Fail on the first invalid row instead of skipping it.
    #[arg(long)]
    strict: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ExperimentArgs {
    fn config(&self, threshold: Threshold, variants: Option<u64>) -> Result<ExperimentConfig, Error> {
        let files = ConfigFiles {
            schema: self.schema.clone(),
            prompts: self.prompts.clone(),
            plan: self.plan.clone(),
            backend: self.backend.clone(),
        };
        let mut config = ExperimentConfig::load(&files, self.data.clone(), self.out.clone(), threshold, variants)?;
        config.cache = self.cache.clone();
        config.jobs = self.jobs;
        config.strict = self.strict;
        config.seed = self.seed;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum CacheAction {
    /// List entries.
    Ls {
        #[arg(long)]
        cache: PathBuf,
    },
    /// Recompute every key and report corrupt lines.
    Verify {
        #[arg(long)]
        cache: PathBuf,
    },
    /// Rewrite the file without corrupt or duplicate lines.
    Gc {
        #[arg(long)]
        cache: PathBuf,
    },
}

#[derive(Subcommand)]
enum PromptsAction {
    Show {
        #[arg(long)]
        prompts: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Only this prompt id.
        #[arg(long)]
        id: Option<String>,
    },
}

fn summarize(report: &FairnessReport) {
    for p in &report.prompts {
        println!(
            "{}: audited {} excluded {} flips {} D_sp {} -> {}",
            p.prompt_id,
            p.audited,
            p.excluded,
            p.flips,
            p.original.gaps.sp.display(),
            p.adjusted.gaps.sp.display()
        );
    }
    let sp = report.mean_gap(Metric::Sp);
    println!("mean D_sp {} -> {}", sp.original.display(), sp.adjusted.display());
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Audit {
            exp,
            threshold,
            variants,
        } => {
            let config = exp.config(threshold, variants)?;
            let classifier = Classifier::new(&config.backend, config.cache.as_deref())?;
            let report = run_experiment_with(&config, &classifier)?;
            summarize(&report);
            let stats = classifier.stats();
            println!("backend calls {} cache hits {}", stats.backend_calls, stats.cache_hits);
        }
        Command::SweepT {
            audits,
            thresholds,
            out,
        } => {
            let run = AuditRun::read(&audits)?;
            let sweep = sweep_threshold(&run, &thresholds)?;
            emit_sweep(&sweep, &sweep.rows, "threshold", &out)?;
            for row in &sweep.rows {
                println!("t={} flips {}", row.parameter, row.flips);
            }
        }
        Command::SweepN { exp, threshold, counts } => {
            let config = exp.config(threshold, None)?;
            let files_plan = ConfigFiles {
                schema: exp.schema.clone(),
                prompts: None,
                plan: exp.plan.clone(),
                backend: exp.backend.clone(),
            }
            .load_plan_config()?;
            let plans = counts
                .iter()
                .map(|&n| files_plan.plan_for_n(&config.schema, n))
                .collect::<Result<Vec<_>, _>>()?;
            let classifier = Classifier::new(&config.backend, config.cache.as_deref())?;
            let sweep = sweep_perturbations(&config, &plans, &classifier)?;
            emit_sweep(&sweep, &sweep.rows, "variants", &config.out_dir)?;
            for row in &sweep.rows {
                println!("N={} flips {}", row.parameter, row.flips);
            }
        }
        Command::Report { audits, formats, out } => {
            let run = AuditRun::read(&audits)?;
            let report = build_report(&run)?;
            emit_report(&report, &formats, out.as_deref().unwrap_or(&audits))?;
            summarize(&report);
        }
        Command::Cache { action } => return cache(action),
        Command::Prompts {
            action: PromptsAction::Show { prompts, schema, id },
        } => {
            let files = ConfigFiles {
                schema,
                prompts,
                ..Default::default()
            };
            let schema = files.load_schema()?;
            let set = files.load_prompts(&schema)?;
            for spec in set.prompts.iter().filter(|p| id.as_deref().is_none_or(|id| id == p.id)) {
                let text = consistfair::prompting::render_prompt(spec, "<record>")?;
                println!("=== {} ===\n{text}", spec.id);
            }
        }
        Command::Selftest { record: Some(dir) } => {
            let out = selftest::record(&dir)?;
            println!("recorded fixture outputs in {}", out.display());
        }
        Command::Selftest { record: None } => {
            let outcome = selftest::run()?;
            for d in &outcome.divergences {
                println!("{} differs at line {} column {}", d.file, d.line, d.column);
                println!("  expected: {}", d.expected);
                println!("  actual:   {}", d.actual);
            }
            if !outcome.passed() {
                return Ok(3);
            }
            println!(
                "selftest ok ({} files, {} backend calls)",
                outcome.checked.len(),
                outcome.backend_calls
            );
        }
    }
    Ok(0)
}

fn cache(action: CacheAction) -> Result<i32, Error> {
    match action {
        CacheAction::Ls { cache } => {
            let scanned = scan(&cache)?;
            for e in &scanned.entries {
                let verdict = e.verdict.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
                println!("{} {} {} {:?}", &e.key[..16], e.backend_id, verdict, e.raw);
            }
            println!("{} entries", scanned.entries.len());
        }
        CacheAction::Verify { cache } => {
            let scanned = scan(&cache)?;
            for issue in &scanned.issues {
                println!("line {}: {}", issue.line, issue.reason);
            }
            println!(
                "{} valid, {} invalid, {} duplicate",
                scanned.entries.len(),
                scanned.issues.len(),
                scanned.duplicates
            );
            if !scanned.issues.is_empty() {
                return Ok(3);
            }
        }
        CacheAction::Gc { cache } => {
            let (kept, dropped) = compact(&cache)?;
            println!("kept {kept}, dropped {dropped}");
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage errors are configuration errors; help and version are not errors.
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
