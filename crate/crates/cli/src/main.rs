use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use gpuhammer_core::analysis::{parse_flip_log, row_flip_csv, summarize, summarize_flips};
use gpuhammer_core::campaign::{run_campaign_with, JsonLines, RunReport};
use gpuhammer_core::config::{parse_override, resolve_config, CampaignConfig, PRESETS};
use gpuhammer_core::oracle::{compare_with_engine, OracleOptions};
use gpuhammer_core::Error;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "gpuhammer",
    version,
    about = "Deterministic GPU Rowhammer campaign simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a campaign and write its flip log, report and summary.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory.
        #[arg(short, long, default_value = "out")]
        output: PathBuf,
    },
    /// Cross-check the engine against the brute-force reference model.
    Oracle {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, hide = true, default_value_t = 0, allow_negative_numbers = true)]
        perturb_threshold: i64,
    },
    /// Summarise a JSON-lines flip log.
    Analyze {
        log: PathBuf,
        /// Run report, enabling adjacency and reproduction figures.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Row size used for clustering when no report is given.
        #[arg(long, default_value_t = 8192)]
        row_size: u32,
        /// Directory for analysis.json and rows.csv; defaults to the log's.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print the fully resolved configuration as TOML.
    PrintConfig {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file.
    config: Option<PathBuf>,
    /// Named preset; overrides the file's `preset` key.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    preset: Option<String>,
    /// `key=value` override, by dotted path or unique leaf name. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Print the resolved config to stdout before doing anything else.
    #[arg(long)]
    print_config: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<CampaignConfig> {
        let text = match &self.config {
            Some(path) => Some(
                fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            ),
            None => None,
        };
        let mut overrides = self
            .overrides
            .iter()
            .map(|s| parse_override(s))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(seed) = self.seed {
            overrides.push(("campaign.master_seed".into(), seed.to_string()));
        }
        let config = resolve_config(text.as_deref(), self.preset.as_deref(), &overrides)?;
        if self.print_config {
            print!("{}", config.to_toml());
        }
        Ok(config)
    }
}

const EXIT_MISMATCH: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_config() => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)?;
    Ok(())
}

fn cmd_run(args: &ConfigArgs, out: &Path) -> Result<u8> {
    let config = args.resolve()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let log_path = out.join("flips.jsonl");
    let log =
        File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let outcome = run_campaign_with(&config, &mut JsonLines(BufWriter::new(log)))?;
    let report = &outcome.report;
    write_json(&out.join("report.json"), report)?;
    write_json(&out.join("summary.json"), &report.summary)?;
    fs::write(out.join("rounds.csv"), report.rounds_csv())?;
    fs::write(out.join("rows.csv"), row_flip_csv(&outcome.flips))?;
    println!(
        "rounds {}  raw {}  visible {}  corrected {}  reproduction rate {}",
        report.rounds.len(),
        report.totals.raw,
        report.totals.visible,
        report.totals.corrected,
        report
            .reproduction
            .rate
            .map_or("n/a".to_string(), |r| format!("{r:.4}")),
    );
    if let Some(s) = &report.summary {
        println!(
            "blocks {}  modal block rows {}  modal stride {}",
            s.clustering.blocks.len(),
            fmt_opt(s.clustering.modal_block_rows),
            fmt_opt(s.clustering.modal_stride),
        );
    }
    println!("wrote {}", out.display());
    Ok(0)
}

fn fmt_opt(v: Option<u64>) -> String {
    v.map_or("none".to_string(), |v| v.to_string())
}

fn cmd_oracle(args: &ConfigArgs, perturb: i64) -> Result<u8> {
    let config = args.resolve()?;
    let cmp = compare_with_engine(
        &config,
        &OracleOptions {
            threshold_delta: perturb,
        },
    )?;
    println!(
        "engine {} flips, oracle {} flips",
        cmp.engine_flips, cmp.oracle_flips
    );
    if cmp.agree() {
        println!("flip sets identical");
        return Ok(0);
    }
    for r in &cmp.only_engine {
        println!("engine only: {}", serde_json::to_string(r)?);
    }
    for r in &cmp.only_oracle {
        println!("oracle only: {}", serde_json::to_string(r)?);
    }
    Ok(EXIT_MISMATCH)
}

fn cmd_analyze(log: &Path, report: Option<&Path>, row_size: u32, out: Option<&Path>) -> Result<u8> {
    let file = File::open(log).map_err(|e| Error::Config(format!("{}: {e}", log.display())))?;
    let flips = parse_flip_log(BufReader::new(file))?;
    let summary = match report {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let report: RunReport = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            summarize(&report, &flips)?
        }
        None => summarize_flips(&flips, row_size),
    };
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => match log.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        },
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join("analysis.json"), &summary)?;
    fs::write(dir.join("rows.csv"), row_flip_csv(&flips))?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, output } => cmd_run(config, output),
        Command::Oracle {
            config,
            perturb_threshold,
        } => cmd_oracle(config, *perturb_threshold),
        Command::Analyze {
            log,
            report,
            row_size,
            output,
        } => cmd_analyze(log, report.as_deref(), *row_size, output.as_deref()),
        Command::PrintConfig { config } => config.resolve().map(|c| {
            if !config.print_config {
                print!("{}", c.to_toml());
            }
            0
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
