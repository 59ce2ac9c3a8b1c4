use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use beamgen::design::{check_orthonormal, robust_surrogate, DesignKind};
use beamgen::harness::{
    calibrate, evaluate, fixed_design, plot_rows, read_results_csv, sweep_alpha, write_manifest, write_plot_csv,
    write_results_csv, Evaluation, ResultRow,
};
use beamgen::io::MatrixFile;
use beamgen::link::Direction;
use beamgen::scenario::{Scenario, Target};
use beamgen::validate::{run_validation, ValidationConfig};

#[derive(Parser)]
#[command(name = "beamgen", version, about = "Fixed on-board beam generation for multibeam GEO satellites")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario TOML; built-in desk defaults when omitted
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, env = "BEAMGEN_OUT", default_value = "beamgen-out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Scenario override, key=value (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Comma-separated designs to evaluate
    #[arg(long, global = true, value_delimiter = ',')]
    designs: Option<Vec<Target>>,
    #[arg(long, global = true, value_enum)]
    direction: Option<DirectionArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Return,
    Forward,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Compute one fixed beam matrix and write it as a matrix file
    Design {
        #[arg(long, value_parser = parse_kind)]
        kind: DesignKind,
    },
    /// β sweep (return) and P_FL sweep (forward) for every design
    Simulate,
    /// Uncertainty-radius sweep for the robust designs
    Sweep,
    /// Run the invariant suite
    Validate {
        /// Scale every design by this factor before the orthonormality check
        #[arg(long)]
        fault_scale: Option<f64>,
    },
    /// Convert a results CSV to long-format plot data
    Export {
        /// Defaults to <out>/results.csv
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn parse_kind(s: &str) -> Result<DesignKind, String> {
    s.parse().map_err(|e: beamgen::BeamError| e.to_string())
}

impl Common {
    fn scenario(&self) -> Result<Scenario> {
        let mut s = Scenario::load_with_overrides(self.scenario.as_deref(), &self.set)?;
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(designs) = &self.designs {
            s.sim.designs = designs.clone();
        }
        if let Some(d) = self.direction {
            s.sim.directions = match d {
                DirectionArg::Return => vec![Direction::Return],
                DirectionArg::Forward => vec![Direction::Forward],
                DirectionArg::Both => vec![Direction::Return, Direction::Forward],
            };
        }
        s.validate()?;
        Ok(s)
    }
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn print_summary(rows: &[ResultRow]) {
    println!(
        "{:<20} {:<8} {:<6} {:>12} {:>12} {:>10} {:>10}",
        "design", "link", "sweep", "value", "throughput", "avail_%", "shannon"
    );
    for r in rows {
        println!(
            "{:<20} {:<8} {:<6} {:>12.4} {:>12.3} {:>10.1} {:>10.3}",
            r.design.as_str(),
            r.direction.as_str(),
            r.sweep_param.as_str(),
            r.sweep_value,
            r.mean_throughput,
            100.0 * r.availability,
            r.shannon_mean
        );
    }
}

fn report_failures(eval: &Evaluation) -> bool {
    for f in &eval.failures {
        eprintln!("design {} failed: {}", f.design.as_str(), f.message);
    }
    eval.failures.is_empty()
}

fn run_evaluation(out: &Path, scenario: &Scenario, file: &str, alpha: bool) -> Result<bool> {
    write_manifest(out, scenario, &command_line())?;
    let cal = calibrate(scenario)?;
    let eval = if alpha { sweep_alpha(scenario, &cal)? } else { evaluate(scenario, &cal)? };
    let path = out.join(file);
    write_results_csv(&path, &eval.records)?;
    let rows: Vec<ResultRow> = eval.records.iter().map(ResultRow::from).collect();
    print_summary(&rows);
    println!("wrote {}", path.display());
    Ok(report_failures(&eval))
}

fn run(cli: Cli) -> Result<bool> {
    let common = &cli.common;
    let out = common.out.as_path();
    match cli.command {
        Command::Design { kind } => {
            if kind == DesignKind::Adaptive {
                bail!("the adaptive design depends on a concrete channel draw; only reference, robust and perturbation_aware can be fixed from a scenario");
            }
            let scenario = common.scenario()?;
            write_manifest(out, &scenario, &command_line())?;
            let cal = calibrate(&scenario)?;
            let b = fixed_design(&scenario, &cal, kind)
                .with_context(|| format!("computing the {} design", kind.as_str()))?;
            let surrogate = robust_surrogate(&cal.nominal)?;
            let residual = check_orthonormal(&b);
            let file = MatrixFile::new(&b, surrogate.alpha_used, surrogate.epsilon_h, surrogate.alpha_clamped);
            let path = out.join(format!("{}.txt", kind.as_str()));
            file.write(&path)?;
            println!("design          {}", kind.as_str());
            println!("size            {} x {}", b.num_beams(), b.num_feeds());
            println!("alpha           {:.6e}", cal.nominal.alpha);
            println!("alpha_used      {:.6e}", surrogate.alpha_used);
            println!("alpha_clamped   {}", surrogate.alpha_clamped);
            println!("epsilon_h       {:.6e}", surrogate.epsilon_h);
            println!("orthonormality  {residual:.3e}");
            if b.fallback_to_robust {
                println!("note            degenerate spectrum, robust design used");
            }
            println!("wrote {}", path.display());
            Ok(true)
        }
        Command::Simulate => run_evaluation(out, &common.scenario()?, "results.csv", false),
        Command::Sweep => run_evaluation(out, &common.scenario()?, "alpha_sweep.csv", true),
        Command::Validate { fault_scale } => {
            let scenario = common.scenario()?;
            write_manifest(out, &scenario, &command_line())?;
            let cfg = ValidationConfig { fault_scale, ..ValidationConfig::default() };
            let report = run_validation(&scenario, &cfg)?;
            let path = out.join("validation.json");
            std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
            for p in &report.properties {
                let status = match (p.informational, p.passed) {
                    (true, _) => "INFO",
                    (false, true) => "PASS",
                    (false, false) => "FAIL",
                };
                println!("{status} {:<26} {:>7} checked {:>6} violations  {}", p.name, p.checked, p.violations, p.anchor);
                if !p.detail.is_empty() {
                    println!("     {}", p.detail);
                }
            }
            println!("wrote {}", path.display());
            Ok(report.passed)
        }
        Command::Export { input } => {
            let scenario = common.scenario()?;
            write_manifest(out, &scenario, &command_line())?;
            let input = input.unwrap_or_else(|| out.join("results.csv"));
            let rows = read_results_csv(&input).with_context(|| format!("reading {}", input.display()))?;
            let plot = plot_rows(&rows);
            let path = out.join("plot.csv");
            write_plot_csv(&path, &plot)?;
            println!("wrote {} rows to {}", plot.len(), path.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
