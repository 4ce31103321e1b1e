//! Command-line front end: `run`, `compare`, `sweep` and `analyze`.
//!
//! Exit codes: 0 on success, 1 on a runtime failure (numerical abort, I/O),
//! 2 on an invalid configuration or usage.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::controller::ControllerMode;
use crate::error::{PfcError, Result};
use crate::metrics::{dc_trend, summarize, write_summary_csv, SummaryRow};
use crate::scenario::{standard_scenario, Scenario};
use crate::sim_engine::{run_pair, simulate, Trace};
use crate::steady_state::{
    lagging_boundary, linspace, minimum_current, ratio_sweep, write_sweep_csv, SWEEP_AMPLITUDE_BOUNDS,
    SWEEP_DELTA_RHO_BOUNDS,
};

#[derive(Debug, Parser)]
#[command(name = "pfc", version, about = "Sensorless PFC simulation and analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one scenario under one controller.
    Run(RunArgs),
    /// Simulate one scenario under both controllers.
    Compare(CommonArgs),
    /// Harmonic-ratio sweep over phase shift and source amplitude.
    Sweep(SweepArgs),
    /// Recompute metrics from a saved trace.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Scenario config file; the built-in standard scenario when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Override a parameter, e.g. `--set plant.r=0`. Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub overrides: Vec<String>,
    /// Integration step (s).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Line periods per steady-state window.
    #[arg(long, default_value_t = 2)]
    pub periods: usize,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// `im` or `ce`; overrides the scenario's mode.
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub overrides: Vec<String>,
    /// Grid points along Δρ.
    #[arg(long, default_value_t = 121)]
    pub n_rho: usize,
    /// Grid points along E.
    #[arg(long, default_value_t = 82)]
    pub n_amplitude: usize,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Trace CSV written by `run` or `compare`.
    #[arg(long)]
    pub trace: PathBuf,
    /// Scenario the trace came from (for window placement).
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, default_value_t = 2)]
    pub periods: usize,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<PfcError> for Failure {
    fn from(e: PfcError) -> Self {
        match e {
            PfcError::InvalidParameter(_)
            | PfcError::Config { .. }
            | PfcError::UnknownPath(_)
            | PfcError::Domain(_)
            | PfcError::WindowMisaligned { .. }
            | PfcError::WindowOutOfRange { .. } => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn load_scenario(path: Option<&Path>, overrides: &[String], dt: Option<f64>) -> Result<Scenario> {
    let mut sc = match path {
        Some(p) => Scenario::from_config_file(p)?,
        None => standard_scenario(),
    };
    for ov in overrides {
        let (k, v) = ov
            .split_once('=')
            .ok_or_else(|| PfcError::InvalidParameter(format!("override `{ov}` is not PATH=VALUE")))?;
        sc.set(k.trim(), v)?;
    }
    if let Some(dt) = dt {
        sc.dt = dt;
    }
    Ok(sc)
}

fn format_summary(rows: &[SummaryRow]) -> String {
    let mut s = String::new();
    let _ =
        writeln!(s, "{:<4} {:>8} {:>10} {:>8} {:>9} {:>9}", "ctl", "window", "disp(deg)", "THD(%)", "PF", "dc_err(V)");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<4} {:>8.3} {:>10.3} {:>8.3} {:>9.5} {:>9.3}",
            r.controller, r.window_start, r.displacement_deg, r.thd_pct, r.power_factor, r.dc_error_v
        );
    }
    s
}

fn trace_notes(trace: &Trace) -> String {
    let st = trace.stats;
    let mut s = format!(
        "{}: {} steps, duty clamped after {} steps, current limited after {} steps, low-voltage guard on {} steps, phase indeterminate on {} steps\n",
        trace.mode.label(),
        st.steps,
        st.saturation_steps,
        st.current_limit_steps,
        st.guard_steps,
        st.phase_indeterminate_steps
    );
    if let Ok(trend) = dc_trend(trace, 1) {
        if let (Some(first), Some(last)) = (trend.first(), trend.last()) {
            let _ = writeln!(s, "  mean v: first period {:.3} V, last period {:.3} V", first.1, last.1);
        }
    }
    s
}

fn write_report(out: &Path, scenario: &Scenario, summary: &[SummaryRow], notes: &str) -> std::io::Result<String> {
    let mut report = String::new();
    report.push_str("# effective configuration\n");
    report.push_str(&scenario.to_config_string());
    report.push_str("\n# steady-state windows\n");
    report.push_str(&format_summary(summary));
    report.push_str("\n# run statistics\n");
    report.push_str(notes);
    fs::write(out.join("report.txt"), &report)?;
    Ok(report)
}

/// Write a partial trace left by a numerical abort, then report the failure.
fn handle_sim(result: Result<Trace>, out: &Path, file: &str) -> std::result::Result<Trace, Failure> {
    match result {
        Ok(t) => Ok(t),
        Err(PfcError::NumericalAbort { time, partial }) => {
            partial.write_csv_file(&out.join(file))?;
            Err(Failure::Runtime(format!(
                "numerical abort at t = {time}; partial trace written to {}",
                out.join(file).display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_run(args: RunArgs) -> std::result::Result<String, Failure> {
    let c = &args.common;
    let mut sc = load_scenario(c.scenario.as_deref(), &c.overrides, c.dt)?;
    if let Some(m) = &args.mode {
        sc.mode = m.parse::<ControllerMode>()?;
    }
    sc.validate()?;
    fs::create_dir_all(&c.out)?;
    let trace = handle_sim(simulate(&sc), &c.out, "trace.csv")?;
    trace.write_csv_file(&c.out.join("trace.csv"))?;
    let summary = summarize(&trace, &sc, c.periods)?;
    write_summary_csv(fs::File::create(c.out.join("summary.csv"))?, &summary)?;
    Ok(write_report(&c.out, &sc, &summary, &trace_notes(&trace))?)
}

fn cmd_compare(c: CommonArgs) -> std::result::Result<String, Failure> {
    let sc = load_scenario(c.scenario.as_deref(), &c.overrides, c.dt)?;
    sc.validate()?;
    fs::create_dir_all(&c.out)?;
    let (im, ce) = run_pair(&sc);
    let im = handle_sim(im, &c.out, "trace_IM.csv")?;
    let ce = handle_sim(ce, &c.out, "trace_CE.csv")?;
    let mut summary = Vec::new();
    let mut notes = String::new();
    for tr in [&im, &ce] {
        tr.write_csv_file(&c.out.join(format!("trace_{}.csv", tr.mode.label())))?;
        summary.extend(summarize(tr, &sc, c.periods)?);
        notes.push_str(&trace_notes(tr));
    }
    write_summary_csv(fs::File::create(c.out.join("summary.csv"))?, &summary)?;
    Ok(write_report(&c.out, &sc, &summary, &notes)?)
}

fn cmd_sweep(args: SweepArgs) -> std::result::Result<String, Failure> {
    let sc = load_scenario(args.scenario.as_deref(), &args.overrides, None)?;
    sc.plant.validate()?;
    if args.n_rho < 2 || args.n_amplitude < 2 {
        return Err(Failure::Config("sweep grids need at least 2 points per axis".into()));
    }
    fs::create_dir_all(&args.out)?;
    let (r0, r1) = SWEEP_DELTA_RHO_BOUNDS;
    let (e0, e1) = SWEEP_AMPLITUDE_BOUNDS;
    let cells =
        ratio_sweep(&linspace(r0, r1, args.n_rho), &linspace(e0, e1, args.n_amplitude), &sc.plant, sc.reference.v_d)?;
    write_sweep_csv(fs::File::create(args.out.join("sweep.csv"))?, &cells)?;
    let mut report = String::from("# effective configuration\n");
    report.push_str(&sc.to_config_string());
    let _ = writeln!(report, "\n# sweep\ncells = {}", cells.len());
    let below = cells.iter().filter(|c| c.ratio < 1.0).count();
    let _ = writeln!(report, "cells with ratio < 1 = {below}");
    let _ = writeln!(
        report,
        "I0 at E = {} V: {:.6} A",
        sc.plant.source_amplitude,
        minimum_current(&sc.plant, sc.reference.v_d)
    );
    match lagging_boundary(&sc.plant, sc.reference.v_d, r1)? {
        Some(b) => {
            let _ = writeln!(report, "lagging band upper edge at E = {} V: {b:.9} rad", sc.plant.source_amplitude);
        }
        None => {
            let _ = writeln!(report, "no lagging band at E = {} V", sc.plant.source_amplitude);
        }
    }
    fs::write(args.out.join("report.txt"), &report)?;
    Ok(report)
}

fn cmd_analyze(args: AnalyzeArgs) -> std::result::Result<String, Failure> {
    let sc = load_scenario(args.scenario.as_deref(), &args.overrides, None)?;
    let trace = Trace::read_csv_file(&args.trace)?;
    if trace.aborted_at.is_some() {
        return Err(Failure::Runtime(format!("{} holds an aborted run", args.trace.display())));
    }
    fs::create_dir_all(&args.out)?;
    let summary = summarize(&trace, &sc, args.periods)?;
    write_summary_csv(fs::File::create(args.out.join("summary.csv"))?, &summary)?;
    let mut report = String::from("# effective configuration\n");
    report.push_str(&sc.to_config_string());
    report.push_str("\n# steady-state windows\n");
    report.push_str(&format_summary(&summary));
    fs::write(args.out.join("report.txt"), &report)?;
    Ok(report)
}

/// Parse arguments, run the command and return the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Analyze(a) => cmd_analyze(a),
    };
    match result {
        Ok(report) => {
            print!("{report}");
            0
        }
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            1
        }
    }
}
