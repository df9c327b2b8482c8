mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use faultarb_core::arbiter::BackendKind;
use faultarb_core::harness::{ComparisonReport, RunConfig};
use faultarb_core::{Error, Result};

use workspace::Workspace;

#[derive(Debug, Parser)]
#[command(name = "faultarb", version, about = "Vibration fault diagnosis with arbitration, calibration and abstention")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for every artifact (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Arbiter backend: oracle or llm.
    #[arg(long, global = true)]
    backend: Option<BackendKind>,
    /// Samples per class.
    #[arg(long, global = true)]
    per_class: Option<usize>,
    /// Dataset re-syntheses for `experiment`.
    #[arg(long, global = true)]
    repeats: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize the labeled dataset: signal files plus manifest.
    Synth,
    /// Extract the feature table.
    Extract,
    /// Fit the rule engine on the training split.
    Train,
    /// Diagnose every sample with the rule engine.
    Diagnose,
    /// Render chart panels and obtain arbiter verdicts for val and test cases.
    Arbitrate,
    /// Fit the calibration bundle on the validation split.
    Calibrate,
    /// Score the three systems on the test split.
    Evaluate,
    /// Write the markdown report, SVG figures and threshold table.
    Report,
    /// Grid-search theta and delta on the validation split by AUACC.
    Sweep,
    /// Repeat the whole pipeline over several dataset seeds.
    Experiment,
    /// Print the effective configuration as TOML.
    Config,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Some(b) = cli.backend {
        cfg.arbitration.backend = b;
    }
    if let Some(n) = cli.per_class {
        cfg.dataset.per_class = n;
    }
    if let Some(r) = cli.repeats {
        cfg.repeats = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_table(rep: &ComparisonReport) {
    println!("{:<20} {:>16} {:>16} {:>16} {:>16} {:>16} {:>14}", "system", "accuracy (%)", "ECE", "NLL", "AURC", "AUACC", "abstain (%)");
    for s in &rep.summaries {
        println!(
            "{:<20} {:>16} {:>16} {:>16} {:>16} {:>16} {:>14}",
            s.system,
            s.accuracy.format(1, 100.0),
            s.ece.map_or_else(|| "n/a".into(), |e| e.format(3, 1.0)),
            s.nll.format(3, 1.0),
            s.aurc.format(3, 1.0),
            s.auacc.format(3, 1.0),
            s.abstention_rate.format(1, 100.0),
        );
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let ws = Workspace::new(cfg);
    match cli.command {
        Command::Synth => {
            ws.synth()?;
        }
        Command::Extract => {
            ws.extract()?;
        }
        Command::Train => {
            ws.train()?;
        }
        Command::Diagnose => {
            ws.diagnose()?;
        }
        Command::Arbitrate => {
            ws.arbitrate()?;
        }
        Command::Calibrate => {
            ws.calibrate()?;
        }
        Command::Evaluate => {
            let (rep, _) = ws.evaluate()?;
            print_table(&rep);
        }
        Command::Report => {
            let md = ws.report()?;
            println!("{}", md.display());
        }
        Command::Sweep => {
            let res = ws.sweep()?;
            println!(
                "best theta = {:.2}, delta = {:.2}: AUACC {:.4}, accuracy {:.1}%, abstention {:.1}%",
                res.best.theta,
                res.best.delta,
                res.best.auacc,
                100.0 * res.best.accuracy,
                100.0 * res.best.abstention_rate
            );
        }
        Command::Experiment => {
            let (rep, md) = ws.experiment()?;
            print_table(&rep);
            println!("{}", md.display());
        }
        Command::Config => print!("{}", ws.cfg.to_toml()),
    }
    Ok(())
}

/// Short machine-readable category and exit code per error.
fn classify(e: &Error) -> (&'static str, u8) {
    match e {
        Error::Config(_) => ("config", 2),
        Error::MissingInput { .. } => ("missing-input", 3),
        Error::ArbiterUnavailable(_) => ("arbiter-unavailable", 4),
        Error::Leakage(_) => ("leakage", 5),
        Error::Format { .. } | Error::Csv(_) | Error::Json(_) => ("format", 6),
        Error::Io { .. } => ("io", 7),
        _ => ("pipeline", 1),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = classify(&e);
            eprintln!("error[{kind}]: {e}");
            ExitCode::from(code)
        }
    }
}
