use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use fcil_core::geometry::build_etf;
use fcil_core::harness::output::{write_accuracy_csv, write_matrix_csv, write_partition_csv};
use fcil_core::harness::{ablation_configs, build_clients, run_experiment, ExperimentOutcome};
use fcil_core::{Error as CoreError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "fcil", version, about = "Federated class-incremental learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Dotted-path override applied after loading, e.g. `egc.enabled=false`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig::load(&self.config, &self.overrides)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment. Without --out the JSONL stream goes to stdout.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory for metrics.jsonl, summary.json, accuracy.csv and partition.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run replay-only, +gsa, +egc and +gsa+egc for each seed and print the seed means.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        /// Directory for one summary JSON per (variant, seed).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build an ETF and print its Gram matrix.
    EtfCheck {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        seed: u64,
        /// Also write etf.csv and gram.csv here.
        #[arg(long)]
        csv_dir: Option<PathBuf>,
    },
    /// Print the per-client per-class sample counts as CSV.
    Partition {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run an experiment and report correction diagnostics for the final model.
    Diagnose {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Emit one JSON object per test sample instead of the per-task summary.
        #[arg(long)]
        sample_dump: bool,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Bad command-line input that clap cannot catch; exits like a config error.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<io::Error>().is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe)
            || c.downcast_ref::<CoreError>()
                .is_some_and(|ce| matches!(ce, CoreError::Io(io) if io.kind() == io::ErrorKind::BrokenPipe))
    })
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let config = e.chain().any(|c| {
        c.downcast_ref::<CoreError>().is_some_and(CoreError::is_config_error) || c.is::<UsageError>()
    });
    if config {
        2
    } else {
        1
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { cfg, out } => run(&cfg.load()?, out.as_deref()),
        Command::Ablate { cfg, seeds, out } => ablate(&cfg.load()?, &seeds, out.as_deref()),
        Command::EtfCheck { classes, dim, seed, csv_dir } => etf_check(classes, dim, seed, csv_dir.as_deref()),
        Command::Partition { cfg } => partition(&cfg.load()?),
        Command::Diagnose { cfg, sample_dump, out } => diagnose(&cfg.load()?, sample_dump, out.as_deref()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn run(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<()> {
    let outcome = match out {
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            let o = run_experiment(cfg, &mut lock)?;
            lock.flush()?;
            o
        }
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
            let mut metrics = create(&dir.join("metrics.jsonl"))?;
            let o = run_experiment(cfg, &mut metrics)?;
            metrics.flush()?;
            write_outputs(dir, &o)?;
            o
        }
    };
    let s = &outcome.summary;
    for w in &s.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!(
        "{}: final average accuracy {:.4} over {} tasks",
        s.ablation.as_str(),
        s.final_average_accuracy,
        s.accuracy_matrix.tasks()
    );
    Ok(())
}

fn write_outputs(dir: &Path, o: &ExperimentOutcome) -> Result<()> {
    let mut f = create(&dir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut f, &o.summary)?;
    writeln!(f)?;
    f.flush()?;
    let mut f = create(&dir.join("accuracy.csv"))?;
    write_accuracy_csv(&mut f, &o.summary.accuracy_matrix)?;
    f.flush()?;
    let mut f = create(&dir.join("partition.csv"))?;
    write_partition_csv(&mut f, &o.partition_counts)?;
    f.flush()?;
    Ok(())
}

fn ablate(base: &ExperimentConfig, seeds: &[u64], out: Option<&Path>) -> Result<()> {
    if seeds.is_empty() {
        bail!(UsageError("--seeds needs at least one seed".into()));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let variants = ablation_configs(base);
    let mut means = vec![0.0; variants.len()];
    let mut stdout = io::stdout().lock();
    writeln!(stdout, "variant,seed,final_average_accuracy")?;
    for &s in seeds {
        for (i, v) in variants.iter().enumerate() {
            let mut c = v.clone();
            c.master_seed = s;
            let o = run_experiment(&c, &mut io::sink())?;
            let acc = o.summary.final_average_accuracy;
            means[i] += acc / seeds.len() as f64;
            writeln!(stdout, "{},{s},{acc:.16e}", c.ablation().as_str())?;
            if let Some(dir) = out {
                let mut f = create(&dir.join(format!("{}-seed{s}.json", c.ablation().as_str())))?;
                serde_json::to_writer_pretty(&mut f, &o.summary)?;
                writeln!(f)?;
                f.flush()?;
            }
        }
    }
    for (v, m) in variants.iter().zip(&means) {
        writeln!(stdout, "{},mean,{m:.16e}", v.ablation().as_str())?;
    }
    Ok(())
}

fn etf_check(classes: usize, dim: usize, seed: u64, csv_dir: Option<&Path>) -> Result<()> {
    if classes < 2 || classes > dim {
        bail!(UsageError(format!(
            "need 2 <= classes <= dim, got classes {classes}, dim {dim}"
        )));
    }
    let etf = build_etf(classes, dim, seed)?;
    let gram = etf.gram();
    let mut stdout = io::stdout().lock();
    writeln!(
        stdout,
        "classes {classes}, dim {dim}, seed {seed}: expected off-diagonal {:.6}, max deviation {:.3e}",
        -1.0 / (classes as f64 - 1.0),
        etf.gram_deviation()
    )?;
    for i in 0..classes {
        let row: Vec<String> = (0..classes).map(|j| format!("{:>9.6}", clean_zero(gram[(i, j)]))).collect();
        writeln!(stdout, "{}", row.join(" "))?;
    }
    if let Some(dir) = csv_dir {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        write_csv(&dir.join("etf.csv"), etf.matrix(), "class")?;
        write_csv(&dir.join("gram.csv"), &gram, "class")?;
    }
    Ok(())
}

/// Prints `-0.000000` as `0.000000`.
fn clean_zero(v: f64) -> f64 {
    if v.abs() < 5e-7 {
        0.0
    } else {
        v
    }
}

fn write_csv(path: &Path, m: &DMatrix<f64>, label: &str) -> Result<()> {
    let mut f = create(path)?;
    write_matrix_csv(&mut f, m, label)?;
    f.flush()?;
    Ok(())
}

fn partition(cfg: &ExperimentConfig) -> Result<()> {
    let setup = build_clients(cfg)?;
    for w in &setup.warnings {
        eprintln!("warning: {w}");
    }
    let mut stdout = io::stdout().lock();
    write_partition_csv(&mut stdout, &setup.partition_counts)?;
    Ok(())
}

fn diagnose(cfg: &ExperimentConfig, sample_dump: bool, out: Option<&Path>) -> Result<()> {
    let outcome = run_experiment(cfg, &mut io::sink())?;
    let mut sink: Box<dyn Write> = match out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    let diags = outcome.sample_diagnostics()?;
    if sample_dump {
        for d in &diags {
            serde_json::to_writer(&mut sink, d)?;
            writeln!(sink)?;
        }
    } else {
        let server = &outcome.server;
        let tasks = outcome.test_sets.len();
        let mut per_task = Vec::with_capacity(tasks);
        for t in 1..=tasks {
            let rows: Vec<_> = diags.iter().filter(|d| d.label_task == t).collect();
            let n = rows.len().max(1) as f64;
            per_task.push(serde_json::json!({
                "task": t,
                "samples": rows.len(),
                "accuracy": rows.iter().filter(|d| d.prediction.class == d.label).count() as f64 / n,
                "uncorrected_accuracy": rows
                    .iter()
                    .filter(|d| fcil_core::egc::argmax(&d.prediction.uncorrected_logits) == d.label)
                    .count() as f64 / n,
                "mean_gate": rows.iter().map(|d| d.prediction.gate).sum::<f64>() / n,
                "corrected_fraction": rows.iter().filter(|d| d.prediction.corrected).count() as f64 / n,
            }));
        }
        let report = serde_json::json!({
            "ablation": outcome.summary.ablation,
            "global_stats": server.global_stats,
            "ranks": server.projectors.as_ref().map(|p| p.rank_report()),
            "tasks": per_task,
        });
        serde_json::to_writer_pretty(&mut sink, &report)?;
        writeln!(sink)?;
    }
    sink.flush()?;
    Ok(())
}
