//! Command-line entry points: `simulate`, `sweep`, `validate` and
//! `print-config`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{ConfigFile, OVERRIDE_KEYS};
use crate::plot;
use crate::sim::{self, compute_metrics, Metrics, SimTrace};
use crate::trace_csv;

#[derive(Parser)]
#[command(
    name = "hopper-sim",
    version,
    about = "Hybrid dynamics simulator for a gantry-mounted hopping leg"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and report hop metrics.
    Simulate {
        /// TOML configuration; omitted sections fall back to defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the number of hops from the config.
        #[arg(long)]
        hops: Option<u32>,
        /// Scalar parameter overrides, e.g. --set controller.f_peak_z=90.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Write the full trace as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write one SVG per panel into this directory, plus a combined
        /// summary.svg.
        #[arg(long)]
        plots: Option<PathBuf>,
        /// Write stick-figure frames into this directory.
        #[arg(long)]
        frames: Option<PathBuf>,
        /// How many frames to write with --frames.
        #[arg(long, default_value_t = 12)]
        frame_count: usize,
    },
    /// Parse and validate a configuration file.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the fully resolved configuration as TOML.
    PrintConfig {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run one simulation per value of one parameter, in parallel.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dotted parameter key; see `--param help` for the list.
        #[arg(long)]
        param: String,
        /// Comma-separated numeric values.
        #[arg(long)]
        values: String,
        /// Write one metrics row per value as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

pub fn run() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = err.source();
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn dispatch(cli: Cli) -> CliResult {
    match cli.command {
        Command::Simulate {
            config,
            hops,
            set,
            csv,
            plots,
            frames,
            frame_count,
        } => simulate(config, hops, set, csv, plots, frames, frame_count),
        Command::Validate { config } => {
            ConfigFile::load(&config)?;
            println!("ok: {}", config.display());
            Ok(())
        }
        Command::PrintConfig { config } => {
            let cfg = load(config.as_deref())?;
            print!("{}", cfg.to_toml_string()?);
            Ok(())
        }
        Command::Sweep {
            config,
            param,
            values,
            csv,
        } => sweep(config, &param, &values, csv.as_deref()),
    }
}

fn load(path: Option<&Path>) -> Result<ConfigFile, crate::config::ConfigError> {
    match path {
        Some(p) => ConfigFile::load(p),
        None => Ok(ConfigFile::default()),
    }
}

fn apply_sets(cfg: &mut ConfigFile, sets: &[String]) -> CliResult {
    for entry in sets {
        let (key, value) = entry
            .split_once('=')
            .ok_or_else(|| format!("--set expects KEY=VALUE, got {entry:?}"))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|e| format!("--set {key}: {e}"))?;
        cfg.apply_override(key.trim(), value)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    config: Option<PathBuf>,
    hops: Option<u32>,
    set: Vec<String>,
    csv: Option<PathBuf>,
    plots: Option<PathBuf>,
    frames: Option<PathBuf>,
    frame_count: usize,
) -> CliResult {
    let mut cfg = load(config.as_deref())?;
    apply_sets(&mut cfg, &set)?;
    if let Some(n) = hops {
        cfg.sim.n_hops = n;
    }

    let outcome = sim::run(&cfg.model, &cfg.controller, &cfg.sim);
    let trace = match &outcome {
        Ok(trace) => trace,
        Err(failure) => &failure.trace,
    };
    if let Some(path) = &csv {
        trace_csv::write_trace_file(path, trace)?;
    }
    if let Some(dir) = &plots {
        plot::render_plots(&cfg.model, trace, dir)?;
        plot::render_summary(&cfg.model, trace, &dir.join("summary.svg"))?;
    }
    if let Some(dir) = &frames {
        plot::render_frames(&cfg.model, trace, dir, frame_count)?;
    }
    print_metrics(&compute_metrics(&cfg.model, trace), trace);

    match outcome {
        Ok(_) => Ok(()),
        Err(failure) => Err(format!("simulation aborted: {failure}").into()),
    }
}

fn print_metrics(m: &Metrics, trace: &SimTrace) {
    println!("touchdowns:         {}", m.touchdowns);
    println!("liftoffs:           {}", m.liftoffs);
    println!("simulated time [s]: {:.4}", trace.end_time());
    match m.mean_stance_duration {
        Some(d) => println!("mean stance [s]:    {d:.4}"),
        None => println!("mean stance [s]:    n/a"),
    }
    match m.steady_speed {
        Some(v) => println!("steady speed [m/s]: {v:.4}"),
        None => println!("steady speed [m/s]: n/a"),
    }
    println!("saturated fraction: {:.3}", m.saturation_fraction);
    println!("max |pitch| [rad]:  {:.4}", m.max_abs_pitch);
}

fn sweep(
    config: Option<PathBuf>,
    param: &str,
    values: &str,
    csv: Option<&Path>,
) -> CliResult {
    if param == "help" {
        println!("sweepable parameters:");
        for key in OVERRIDE_KEYS {
            println!("  {key}");
        }
        return Ok(());
    }
    let base = load(config.as_deref())?;
    let values: Vec<f64> = values
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("--values: {e}"))?;
    if values.is_empty() {
        return Err("--values needs at least one number".into());
    }
    // dry-run the override so a bad key fails before any simulation starts
    base.clone().apply_override(param, values[0])?;

    let results: Vec<Result<Metrics, String>> = values
        .par_iter()
        .map(|&v| {
            let mut cfg = base.clone();
            cfg.apply_override(param, v).map_err(|e| e.to_string())?;
            let trace = sim::run(&cfg.model, &cfg.controller, &cfg.sim)
                .map_err(|e| e.to_string())?;
            Ok(compute_metrics(&cfg.model, &trace))
        })
        .collect();

    println!(
        "{:>14}  {:>10} {:>8} {:>12} {:>12} {:>10}",
        param, "touchdowns", "liftoffs", "stance[s]", "speed[m/s]", "sat"
    );
    let mut rows = Vec::new();
    let mut failed = false;
    for (v, res) in values.iter().zip(&results) {
        match res {
            Ok(m) => {
                println!(
                    "{:>14.6}  {:>10} {:>8} {:>12} {:>12} {:>10.3}",
                    v,
                    m.touchdowns,
                    m.liftoffs,
                    m.mean_stance_duration
                        .map_or("n/a".into(), |d| format!("{d:.4}")),
                    m.steady_speed.map_or("n/a".into(), |s| format!("{s:.4}")),
                    m.saturation_fraction
                );
                rows.push((*v, m.clone()));
            }
            Err(e) => {
                failed = true;
                println!("{v:>14.6}  failed: {e}");
            }
        }
    }
    if let Some(path) = csv {
        write_sweep_csv(path, param, &rows)?;
    }
    if failed {
        return Err("at least one sweep point failed".into());
    }
    Ok(())
}

fn write_sweep_csv(path: &Path, param: &str, rows: &[(f64, Metrics)]) -> CliResult {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        param,
        "touchdowns",
        "liftoffs",
        "mean_stance_s",
        "steady_speed_mps",
        "saturation_fraction",
        "max_abs_pitch_rad",
    ])?;
    for (v, m) in rows {
        w.write_record([
            format!("{v:.16e}"),
            m.touchdowns.to_string(),
            m.liftoffs.to_string(),
            m.mean_stance_duration.map_or(String::new(), |d| format!("{d:.16e}")),
            m.steady_speed.map_or(String::new(), |s| format!("{s:.16e}")),
            format!("{:.16e}", m.saturation_fraction),
            format!("{:.16e}", m.max_abs_pitch),
        ])?;
    }
    w.flush()?;
    Ok(())
}
