use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use emrp_core::evolution::{EvolutionConfig, Scheme};
use emrp_core::fitness::protocol::{serve, EchoWorker};
use emrp_core::genome::{decode_genome, encode_record, GeneRecord, Genome, GenomeLayout};
use emrp_core::message::to_architecture_message;
use emrp_core::phenotype::build_architecture;
use emrp_core::session::describe::describe;
use emrp_core::session::log::count_generations;
use emrp_core::session::{self, export_pareto, scatter_csv, EvaluatorKind, Report, SessionConfig};

#[derive(Parser)]
#[command(
    name = "emrp",
    version,
    about = "Evolutionary architecture search for multi-resolution pooling CNNs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Single,
    Multi,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Single => Scheme::Single,
            SchemeArg::Multi => Scheme::Multi,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EvaluatorArg {
    Surrogate,
    ComplexityOnly,
    Worker,
}

impl From<EvaluatorArg> for EvaluatorKind {
    fn from(e: EvaluatorArg) -> Self {
        match e {
            EvaluatorArg::Surrogate => EvaluatorKind::Surrogate,
            EvaluatorArg::ComplexityOnly => EvaluatorKind::ComplexityOnly,
            EvaluatorArg::Worker => EvaluatorKind::Worker,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DescribeFormat {
    /// Gene table, layer shapes and totals.
    Text,
    /// Decoded gene record as JSON.
    Record,
    /// Architecture message as sent to workers.
    Message,
}

#[derive(Subcommand)]
enum Command {
    /// Decode a genome and report its architecture.
    Describe {
        /// Genome text; `|` and whitespace are ignored. Defaults to the seed.
        genome: Option<String>,
        #[arg(long, value_enum, default_value = "text")]
        format: DescribeFormat,
    },
    /// Encode a gene record (JSON, `-` for stdin) into genome text.
    Encode { record: PathBuf },
    /// Start a new search.
    Evolve {
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
        /// TOML session config; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        evaluator: Option<EvaluatorArg>,
        #[arg(long)]
        run_dir: PathBuf,
        /// Genome text to start from instead of the built-in seed.
        #[arg(long)]
        seed_genome: Option<String>,
        #[arg(long)]
        rng_seed: Option<u64>,
        /// Maximum number of generations.
        #[arg(long)]
        generations: Option<usize>,
        /// Keep going this many generations after the stopping criterion.
        #[arg(long)]
        force_generations: Option<usize>,
        #[arg(long)]
        dataset: Option<String>,
        /// Concurrent evaluations (worker processes for the worker evaluator).
        #[arg(long)]
        parallelism: Option<usize>,
        /// Worker command line (split on whitespace), used with
        /// `--evaluator worker`.
        #[arg(long)]
        worker_cmd: Option<String>,
    },
    /// Continue a run from its last complete generation.
    Resume {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Write `generation,sdr_db,params,label` rows for every generation.
    ExportScatter {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Write the non-dominated survivors of one generation as JSON.
    ExportPareto {
        #[arg(long)]
        run_dir: PathBuf,
        /// Defaults to the last completed generation.
        #[arg(long)]
        generation: Option<usize>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Connect to a worker and perform the protocol handshake.
    WorkerCheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(num_args = 0.., allow_hyphen_values = true, trailing_var_arg = true)]
        command: Vec<String>,
    },
    /// Serve the protocol on stdin/stdout, scoring with the surrogate.
    #[command(hide = true)]
    EchoWorker,
}

fn read_input(path: &Path) -> Result<String> {
    if path == Path::new("-") {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn load_session_config(path: &Path) -> Result<SessionConfig> {
    let text = read_input(path)?;
    SessionConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
}

fn print_report(report: &Report) {
    println!(
        "{} scheme, {} generations, output generation {}",
        report.scheme, report.generations_completed, report.output_generation
    );
    if let Some(stop) = report.stop {
        println!(
            "stopping criterion met at generation {}",
            stop.stop_generation
        );
    }
    for e in &report.selected {
        println!(
            "{:<12} {:>10.4} dB {:>10} params",
            e.label, e.sdr_db, e.params
        );
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Err(e)
            if e.downcast_ref::<io::Error>()
                .is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) =>
        {
            Ok(())
        }
        other => other,
    }
}

fn execute(cli: Cli) -> Result<()> {
    let layout = GenomeLayout::default();
    match cli.command {
        Command::Describe { genome, format } => {
            let text = genome.unwrap_or_else(|| Genome::seed().to_string());
            match format {
                DescribeFormat::Text => write_output(None, &describe(&text, &layout)?)?,
                DescribeFormat::Record | DescribeFormat::Message => {
                    let record = decode_genome(&Genome::from_text(&text, &layout)?, &layout)?;
                    let out = match format {
                        DescribeFormat::Record => serde_json::to_string_pretty(&record)?,
                        _ => to_architecture_message(&build_architecture(&record)),
                    };
                    write_output(None, &(out + "\n"))?;
                }
            }
        }
        Command::Encode { record } => {
            let record: GeneRecord =
                serde_json::from_str(&read_input(&record)?).context("parsing gene record")?;
            let genome = encode_record(&record, &layout)?;
            write_output(None, &(genome.to_text(&layout)? + "\n"))?;
        }
        Command::Evolve {
            scheme,
            config,
            evaluator,
            run_dir,
            seed_genome,
            rng_seed,
            generations,
            force_generations,
            dataset,
            parallelism,
            worker_cmd,
        } => {
            let mut cfg = match &config {
                Some(path) => load_session_config(path)?,
                None => SessionConfig::new(EvolutionConfig::for_scheme(
                    scheme.map_or(Scheme::Single, Into::into),
                )),
            };
            if let Some(s) = scheme {
                if config.is_some() && cfg.evolution.scheme != s.into() {
                    bail!(
                        "--scheme {} conflicts with the config file's scheme {}",
                        Scheme::from(s),
                        cfg.evolution.scheme
                    );
                }
            }
            if let Some(e) = evaluator {
                cfg.evaluator = e.into();
            }
            if let Some(text) = seed_genome {
                cfg.seed_genome = Some(Genome::from_text(&text, &cfg.evolution.layout)?);
            }
            if let Some(s) = rng_seed {
                cfg.evolution.rng_seed = s;
            }
            if let Some(g) = generations {
                cfg.evolution.max_generations = g;
            }
            if let Some(f) = force_generations {
                cfg.force_generations = f;
            }
            if let Some(d) = dataset {
                cfg.dataset = d;
            }
            if let Some(p) = parallelism {
                cfg.parallelism = p;
            }
            if let Some(cmd) = worker_cmd {
                cfg.worker.command = cmd.split_whitespace().map(String::from).collect();
            }
            let report = session::run(&run_dir, cfg)?;
            print_report(&report);
        }
        Command::Resume { run_dir } => {
            let report = session::resume(&run_dir)?;
            print_report(&report);
        }
        Command::ExportScatter { run_dir, output } => {
            write_output(output.as_deref(), &scatter_csv(&run_dir)?)?;
        }
        Command::ExportPareto {
            run_dir,
            generation,
            output,
        } => {
            let generation = match generation {
                Some(g) => g,
                None => match count_generations(&run_dir)? {
                    0 => bail!("run directory has no completed generation"),
                    n => n - 1,
                },
            };
            let rows = export_pareto(&run_dir, generation)?;
            write_output(
                output.as_deref(),
                &(serde_json::to_string_pretty(&rows)? + "\n"),
            )?;
        }
        Command::WorkerCheck { config, command } => {
            let mut cfg = match &config {
                Some(path) => load_session_config(path)?,
                None => SessionConfig::new(EvolutionConfig::single()),
            };
            if !command.is_empty() {
                cfg.worker.command = command;
            }
            let evaluator = cfg.worker_evaluator()?;
            evaluator.check().context("worker handshake failed")?;
            println!("worker handshake ok");
        }
        Command::EchoWorker => {
            let stdin = io::stdin();
            serve(stdin.lock(), io::stdout().lock(), &mut EchoWorker::new())?;
        }
    }
    Ok(())
}
