//! `afc`: reproducible simulation runs for the spin-wave AFC memory.
//!
//! Exit codes: 0 success, 1 domain error (the originating module error is
//! named), 2 usage error.

mod config;

use afc_core::comb;
use afc_core::error::Result;
use afc_core::experiments::{self, ExperimentConfig, Overrides, Preset};
use afc_core::fit;
use afc_core::grid::SpectralGrid;
use afc_core::io;
use afc_core::prep;
use afc_core::propagation::{self, TransferFunction};
use afc_core::spinwave;
use clap::{Args, Parser, Subcommand};
use config::{load_config, save_config, RunConfig};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "afc",
    about = "Simulator and analysis toolkit for spin-wave atomic-frequency-comb optical memories",
    long_about = "Units: ordinary frequencies in MHz, times in us, powers in mW.\n\
                  All runs are deterministic for a given seed, independent of the worker count.",
    version
)]
struct Cli {
    /// Worker threads for data-parallel loops (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory (falls back to $AFC_OUTPUT_DIR, then ./out)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// JSON run configuration; built-in defaults when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the configured one
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Comb geometry, efficiency formulas, inference and design
    #[command(subcommand)]
    Comb(CombCommand),
    /// Burn the comb with the hole-burning sequence and export the spectrum
    Prepare,
    /// Propagate pulses through the comb
    #[command(subcommand)]
    Simulate(SimulateCommand),
    /// Run a named experiment preset (fig2a|fig2b|fig3|fig4|fig5)
    Experiment(ExperimentArgs),
    /// Estimators for decay, Rabi and fringe data
    #[command(subcommand)]
    Fit(FitCommand),
    /// Convert a trace into a photon-count histogram
    SamplePhotons(SamplePhotonsArgs),
    /// Write the documented defaults.json
    Defaults,
}

#[derive(Subcommand)]
enum CombCommand {
    /// Sample the optical-depth profile of the configured comb
    Build,
    /// Evaluate the forward echo efficiency formula
    Efficiency(EfficiencyArgs),
    /// Invert measured observables to comb depths at fixed finesse
    Infer(InferArgs),
    /// Maximise the echo efficiency over the finesse
    Optimize(OptimizeArgs),
    /// Plan a comb for multimode storage
    Plan(PlanArgs),
}

#[derive(Args)]
struct EfficiencyArgs {
    #[arg(long)]
    d: f64,
    #[arg(long)]
    finesse: f64,
    #[arg(long)]
    d0: f64,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    transmitted: f64,
    #[arg(long)]
    echo: f64,
    #[arg(long)]
    finesse: f64,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    d: f64,
    #[arg(long)]
    d0: f64,
    #[arg(long, default_value_t = 1.0)]
    f_min: f64,
    #[arg(long, default_value_t = 20.0)]
    f_max: f64,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    bandwidth: f64,
    #[arg(long)]
    min_tooth_fwhm: f64,
    #[arg(long)]
    mode_duration: f64,
    #[arg(long)]
    control_duration: f64,
    #[arg(long)]
    modes: usize,
    #[arg(long)]
    d: f64,
    #[arg(long)]
    d0: f64,
}

#[derive(Subcommand)]
enum SimulateCommand {
    /// Two-level AFC echo: reference, transmitted and output traces
    Afc,
    /// Full storage sequence: output trace plus the mode ledger
    Spinwave,
}

#[derive(Args)]
struct ExperimentArgs {
    /// fig2a | fig2b | fig3 | fig4 | fig5
    preset: String,
    /// Trials per phase point (interference presets)
    #[arg(long)]
    trials: Option<usize>,
    /// Phase points per fringe (interference presets)
    #[arg(long)]
    phases: Option<usize>,
    /// Laser linewidth override (MHz)
    #[arg(long)]
    linewidth_mhz: Option<f64>,
    /// Spin inhomogeneity override (MHz)
    #[arg(long)]
    gamma_is_mhz: Option<f64>,
}

#[derive(Subcommand)]
enum FitCommand {
    /// Gaussian spin-decay fit of `t_s_us,eta,sigma` data
    Decay(FitInputArgs),
    /// Simultaneous Rabi fit of `power_mw,afc_area,tle_eff` data
    Rabi(FitRabiArgs),
    /// Fringe fit of `phase_rad,area,sigma` data
    Fringe(FitInputArgs),
}

#[derive(Args)]
struct FitInputArgs {
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct FitRabiArgs {
    #[arg(long)]
    input: PathBuf,
    /// Control pulse duration (us)
    #[arg(long, default_value_t = 0.8)]
    duration: f64,
    /// Reference power for the reported Rabi frequency (mW)
    #[arg(long, default_value_t = 5.7)]
    power_ref: f64,
}

#[derive(Args)]
struct SamplePhotonsArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    photons: f64,
    #[arg(long)]
    od: f64,
    #[arg(long, default_value_t = 500)]
    trials: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // ignore "already initialised" (tests may share the process)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error[{}]: {err}", err.name());
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let out_dir = cli
        .out
        .clone()
        .or_else(|| std::env::var_os("AFC_OUTPUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut config = match &cli.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.output_dir = out_dir.clone();

    match cli.command {
        Command::Comb(command) => run_comb(command, &config, &out_dir),
        Command::Prepare => run_prepare(&config, &out_dir),
        Command::Simulate(command) => run_simulate(command, &config, &out_dir),
        Command::Experiment(args) => run_experiment(args, &config, &out_dir),
        Command::Fit(command) => run_fit(command, &out_dir),
        Command::SamplePhotons(args) => {
            let trace = io::read_trace_csv(&args.input)?;
            let histogram = propagation::poisson_sample(
                &trace,
                args.photons,
                args.od,
                args.trials,
                config.seed,
            )?;
            io::write_histogram_csv(&out_dir.join("histogram.csv"), &histogram)?;
            println!(
                "expected {:.4e} counts per trial; histogram.csv written",
                histogram.expected_total_per_trial
            );
            Ok(())
        }
        Command::Defaults => {
            let path = out_dir.join("defaults.json");
            save_config(&path, &RunConfig::default())?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn run_comb(command: CombCommand, config: &RunConfig, out_dir: &Path) -> Result<()> {
    match command {
        CombCommand::Build => {
            let comb = config.comb()?;
            let grid = SpectralGrid::conjugate_of(&config.time_grid());
            let profile = comb::build_comb_profile(&comb, &grid)?;
            io::write_profile_csv(&out_dir.join("comb_profile.csv"), &profile)?;
            println!(
                "profile with {} teeth over {:.2} MHz -> comb_profile.csv",
                comb.num_teeth,
                comb.bandwidth_mhz()
            );
            Ok(())
        }
        CombCommand::Efficiency(args) => {
            let eta = comb::afc_echo_efficiency(args.d, args.finesse, args.d0)?;
            println!("{eta:.4}");
            Ok(())
        }
        CombCommand::Infer(args) => {
            let (d, d0) = comb::infer_comb_params(args.transmitted, args.echo, args.finesse)?;
            println!("{}", serde_json::json!({ "d": d, "d0": d0 }));
            Ok(())
        }
        CombCommand::Optimize(args) => {
            let optimum = comb::optimize_finesse(args.d, args.d0, (args.f_min, args.f_max))?;
            println!(
                "{}",
                serde_json::json!({
                    "f_star": optimum.finesse,
                    "eta_star": optimum.efficiency,
                    "degenerate": optimum.degenerate,
                })
            );
            Ok(())
        }
        CombCommand::Plan(args) => {
            let design = comb::plan_multimode(
                args.bandwidth,
                args.min_tooth_fwhm,
                args.mode_duration,
                args.control_duration,
                args.modes,
                args.d,
                args.d0,
            )?;
            println!("{}", serde_json::to_string_pretty(&design).expect("serialisable"));
            Ok(())
        }
    }
}

fn run_prepare(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let table = config.transition_table();
    let seq = match &config.comb_source.prep {
        Some(seq) => seq.clone(),
        None => config.default_prep(),
    };
    let mut ensemble = prep::IonEnsemble::default_for(&table)?;
    prep::run_preparation(&mut ensemble, &seq, &table, &config.material.branching)?;
    let d_full = config.material.full_depth();
    let profile = prep::absorption_spectrum(&ensemble, &table, d_full, (-12.0, 12.0))?;
    io::write_profile_csv(&out_dir.join("prepared_profile.csv"), &profile)?;
    io::write_populations_csv(&out_dir.join("populations.csv"), &ensemble)?;
    io::write_json(
        &out_dir.join("prep_report.json"),
        &serde_json::json!({
            "sequence": seq,
            "d_full": d_full,
            "deposit_frequencies_mhz": seq.deposit_frequencies(&table),
        }),
    )?;
    println!("prepared spectrum -> prepared_profile.csv, populations.csv");
    Ok(())
}

fn run_simulate(command: SimulateCommand, config: &RunConfig, out_dir: &Path) -> Result<()> {
    match command {
        SimulateCommand::Afc => {
            let comb = config.comb()?;
            let grid = config.time_grid();
            let sgrid = SpectralGrid::conjugate_of(&grid);
            let profile = comb::build_comb_profile(&comb, &sgrid)?;
            let tf = propagation::transfer_function_from_depth(&profile)?;
            let input =
                propagation::FieldTrace::from_pulses(grid, &config.sequence.input_bins)?;
            let output = propagation::propagate(&input, &tf)?;
            let reference = propagation::propagate(&input, &TransferFunction::identity(&grid))?;
            let t0 = config.sequence.input_bins[0].arrival_time_us;
            let tau = comb.storage_time_us();
            let window = (2.4 * config.sequence.input_bins[0].fwhm_or_width_us).min(0.9 * tau);
            let report = propagation::detect_echoes(&output, &[t0, t0 + tau], window)?;
            let reference_report = propagation::detect_echoes(&reference, &[t0], window)?;
            let eta = propagation::echo_efficiency(&report, &reference_report)?;
            io::write_trace_csv(&out_dir.join("reference.csv"), &reference)?;
            io::write_trace_csv(&out_dir.join("output.csv"), &output)?;
            io::write_json(&out_dir.join("echo_report.json"), &report)?;
            println!("eta_afc = {eta:.4}; traces and echo_report.json written");
            Ok(())
        }
        SimulateCommand::Spinwave => {
            let seq = config.storage_sequence()?;
            let (trace, ledger) = spinwave::run_storage_sequence(&seq)?;
            io::write_trace_csv(&out_dir.join("output.csv"), &trace)?;
            io::write_json(&out_dir.join("ledger.json"), &ledger)?;
            let total: f64 = ledger.emissions.iter().map(|e| e.intensity_fraction).sum();
            println!("eta_3le = {total:.4}; output.csv and ledger.json written");
            Ok(())
        }
    }
}

fn run_experiment(args: ExperimentArgs, config: &RunConfig, out_dir: &Path) -> Result<()> {
    let preset: Preset = args.preset.parse()?;
    let cfg = ExperimentConfig {
        preset,
        seed: config.seed,
        material: config.material.clone(),
        overrides: Overrides {
            gamma_is_mhz: args.gamma_is_mhz,
            linewidth_mhz: args.linewidth_mhz,
            trials_per_phase: args.trials,
            num_phases: args.phases,
            poisson: None,
        },
    };
    match preset {
        Preset::Fig2a => {
            let run = experiments::exp_two_level_afc(&cfg)?;
            io::write_trace_csv(&out_dir.join("reference.csv"), &run.reference)?;
            io::write_trace_csv(&out_dir.join("output.csv"), &run.output)?;
            io::write_json(&out_dir.join("report.json"), &run)?;
            println!("eta_afc = {:.4} (formula {:.4})", run.eta_afc, run.eta_formula);
        }
        Preset::Fig2b => {
            let run = experiments::exp_spinwave_decay(&cfg)?;
            let mut csv = String::from("t_s_us,eta_3le\n");
            for (t, e) in run.ts_us.iter().zip(&run.eta_3le) {
                csv.push_str(&format!("{t},{e}\n"));
            }
            io::write_atomic(&out_dir.join("decay.csv"), csv.as_bytes())?;
            io::write_json(&out_dir.join("report.json"), &run)?;
            println!(
                "gamma_is = {:.4} kHz, eta(0) = {:.4}",
                1e3 * run.fit.value("gamma_is_mhz").unwrap_or(f64::NAN),
                run.fit.value("eta0").unwrap_or(f64::NAN)
            );
        }
        Preset::Fig3 => {
            let run = experiments::exp_rabi_sweep(&cfg)?;
            let mut csv = String::from("power_mw,sqrt_power,afc_area,tle_eff\n");
            for i in 0..run.powers_mw.len() {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    run.powers_mw[i], run.sqrt_powers[i], run.afc_areas[i], run.tle_effs[i]
                ));
            }
            io::write_atomic(&out_dir.join("rabi.csv"), csv.as_bytes())?;
            io::write_json(&out_dir.join("report.json"), &run)?;
            println!(
                "omega_bar = {:.4} MHz at {} mW",
                run.fit.value("omega_bar_mhz").unwrap_or(f64::NAN),
                config.material.power_ref_mw
            );
        }
        Preset::Fig4 => {
            let run = experiments::exp_timebin(&cfg)?;
            let mut csv = String::from("phase_rad,area,sigma\n");
            for i in 0..run.phases.len() {
                csv.push_str(&format!(
                    "{},{},{}\n",
                    run.phases[i], run.fringe_areas[i], run.fringe_sems[i]
                ));
            }
            io::write_atomic(&out_dir.join("fringe.csv"), csv.as_bytes())?;
            let mut vs = String::from("t_s_us,visibility,sigma,central_area\n");
            for p in &run.points {
                vs.push_str(&format!(
                    "{},{},{},{}\n",
                    p.t_s_us, p.visibility, p.sigma, p.central_area
                ));
            }
            io::write_atomic(&out_dir.join("visibility_vs_ts.csv"), vs.as_bytes())?;
            io::write_json(&out_dir.join("report.json"), &run)?;
            println!(
                "V = {:.3} +- {:.3}; mean over T_S = {:.3}; slope {:.2e} +- {:.2e} /us",
                run.visibility,
                run.visibility_sigma,
                run.mean_visibility,
                run.slope_per_us,
                run.slope_sigma
            );
        }
        Preset::Fig5 => {
            let run = experiments::exp_multimode(&cfg)?;
            io::write_trace_csv(&out_dir.join("input.csv"), &run.input)?;
            io::write_trace_csv(&out_dir.join("output.csv"), &run.output)?;
            let mut csv = String::from("center_us,area,crosstalk,contrast\n");
            for m in &run.modes {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    m.center_us, m.area, m.crosstalk, m.contrast
                ));
            }
            io::write_atomic(&out_dir.join("modes.csv"), csv.as_bytes())?;
            let mut eff = String::from("n_modes,efficiency\n");
            for (n, e) in &run.efficiency_vs_n {
                eff.push_str(&format!("{n},{e}\n"));
            }
            io::write_atomic(&out_dir.join("efficiency_vs_n.csv"), eff.as_bytes())?;
            if let Some(histogram) = &run.histogram {
                io::write_histogram_csv(&out_dir.join("histogram.csv"), histogram)?;
            }
            io::write_json(&out_dir.join("report.json"), &run)?;
            println!(
                "{} modes retrieved; worst crosstalk {:.3}",
                run.modes.len(),
                run.modes.iter().map(|m| m.crosstalk).fold(0.0, f64::max)
            );
        }
    }
    Ok(())
}

fn run_fit(command: FitCommand, out_dir: &Path) -> Result<()> {
    let (report, label) = match command {
        FitCommand::Decay(args) => {
            let cols = io::read_columns(&args.input, &["t_s_us", "eta", "sigma"])?;
            (fit::fit_gaussian_decay(&cols[0], &cols[1], &cols[2])?, "decay")
        }
        FitCommand::Rabi(args) => {
            let cols = io::read_columns(&args.input, &["power_mw", "afc_area", "tle_eff"])?;
            (
                fit::fit_rabi(&cols[0], &cols[1], &cols[2], args.duration, args.power_ref, None)?,
                "rabi",
            )
        }
        FitCommand::Fringe(args) => {
            let cols = io::read_columns(&args.input, &["phase_rad", "area", "sigma"])?;
            (fit::fit_fringe(&cols[0], &cols[1], &cols[2])?, "fringe")
        }
    };
    io::write_json(&out_dir.join(format!("fit_{label}.json")), &report)?;
    for name in &report.parameter_order {
        let estimate = &report.estimates[name];
        println!("{name} = {:.6} +- {:.6}", estimate.value, estimate.sigma);
    }
    Ok(())
}
