//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for configuration and usage problems, 3 when
//! training diverges, 4 when self-verification fails, 1 for anything else.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::checkpoint;
use crate::cmat::{CMat, C64};
use crate::config::{parse_config, parse_f64_list, FileConfig, Overrides, Settings};
use crate::lmmse::{heuristic_pilots, lmmse_mse_closed_form, lmmse_mse_monte_carlo};
use crate::mimo::SystemConfig;
use crate::output::{
    baseline_csv, config_hash, curves_csv, pilots_csv, sweep_csv, write_json, write_text,
    BaselineRow, Manifest,
};
use crate::rng::derive_seed;
use crate::trainer::{snr_sweep, snr_to_noise_variance, train, JointModel};
use crate::verify::{run_all, FaultInjection};
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "pilotnet",
    version,
    about = "Joint pilot design and channel estimation for the multiuser uplink"
)]
struct Cli {
    /// Configuration file; command-line flags override its values
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Base seed for every derived random stream
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Comma-separated operating points in dB
    #[arg(long, global = true, value_name = "LIST")]
    snr_list: Option<String>,

    /// Unit power budget for every user
    #[arg(long, global = true)]
    strict_paper: bool,

    /// Directory for generated files
    #[arg(long, global = true, default_value = "out", value_name = "DIR")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form and Monte Carlo error of the linear estimator per operating point
    Baseline {
        /// Scale the phase-pattern pilots onto the exact power budgets
        #[arg(long)]
        fair_baseline: bool,

        /// Monte Carlo draws per operating point
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Train the joint model; writes curves, pilots, report, and a checkpoint
    Train,
    /// Train at each operating point and tabulate against the linear baselines
    Sweep,
    /// Check the pipeline against independent oracles
    Verify {
        /// Corrupt the pilot expansion to demonstrate a failing check
        #[arg(long)]
        inject_fault: bool,
    },
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = err.exit_code();
            let _ = err.print();
            return if code == 0 { 0 } else { 2 };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::ConfigParse { .. }
        | Error::Dimension(_)
        | Error::Empty(_)
        | Error::UnsupportedPilotShape { .. } => 2,
        Error::Diverged { .. } => 3,
        Error::Verification(_) => 4,
        _ => 1,
    }
}

fn load_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

fn execute(cli: Cli) -> Result<i32> {
    let overrides = Overrides {
        seed: cli.seed,
        snr_list: cli.snr_list.as_deref().map(parse_f64_list).transpose()?,
        strict_paper: cli.strict_paper,
    };
    let file = cli.config.as_deref().map(load_config).transpose()?;
    let settings = Settings::resolve(file.as_ref(), &overrides)?;
    match cli.command {
        Command::Baseline {
            fair_baseline,
            samples,
        } => cmd_baseline(&settings, &cli.out, fair_baseline, samples),
        Command::Train => cmd_train(&settings, &cli.out),
        Command::Sweep => cmd_sweep(&settings, &cli.out),
        Command::Verify { inject_fault } => cmd_verify(&settings, inject_fault),
    }
}

fn system_at(base: &SystemConfig, snr_db: f64) -> SystemConfig {
    let mut system = base.clone();
    system.noise_variance = snr_to_noise_variance(snr_db, system.pilot_length);
    system
}

fn cmd_baseline(settings: &Settings, out: &Path, fair: bool, samples: usize) -> Result<i32> {
    let canonical = settings.canonical_string();
    let extras = [
        ("baseline.fair", fair.to_string()),
        ("baseline.samples", samples.to_string()),
    ];
    let hash = config_hash(&canonical, &extras);

    let mut rows = Vec::with_capacity(settings.snr_list.len());
    for (i, &snr_db) in settings.snr_list.iter().enumerate() {
        let system = system_at(&settings.system, snr_db);
        let pilots = heuristic_pilots(&system, fair)?;
        let covariances = system.iid_covariances();
        let noise_cov =
            CMat::identity(system.obs_dim()).scale(C64::new(system.noise_variance, 0.0));
        let closed = lmmse_mse_closed_form(&pilots, &covariances, &noise_cov)?;
        let mc = lmmse_mse_monte_carlo(
            &pilots,
            &covariances,
            &system,
            samples,
            derive_seed(settings.train.seed, &format!("baseline{i}")),
        )?;
        println!("{snr_db} dB: closed form {closed:.4}, monte carlo {mc:.4}");
        rows.push(BaselineRow {
            snr_db,
            mse_closed_form: closed,
            mse_monte_carlo: mc,
            normalized: fair,
            samples,
        });
    }

    write_text(&out.join("baseline.csv"), &baseline_csv(&hash, &rows))?;
    let manifest = Manifest::new("baseline", &canonical, &extras, &["baseline.csv"]);
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(0)
}

fn cmd_train(settings: &Settings, out: &Path) -> Result<i32> {
    let canonical = settings.canonical_string();
    let hash = config_hash(&canonical, &[]);
    let mut model = JointModel::new(&settings.system, &settings.train)?;
    let report = match train(&mut model, &settings.train) {
        Ok(report) => report,
        Err(Error::Diverged { epoch, report }) => {
            let path = out.join("report.json");
            let _ = write_json(&path, &*report);
            eprintln!("partial report written to {}", path.display());
            return Err(Error::Diverged { epoch, report });
        }
        Err(e) => return Err(e),
    };

    write_text(&out.join("curves.csv"), &curves_csv(&hash, &report))?;
    write_text(
        &out.join("pilots.csv"),
        &pilots_csv(&hash, &model.pilot_matrices()),
    )?;
    write_json(&out.join("report.json"), &report)?;
    checkpoint::save(&out.join("model.ckpt"), &model, settings.train.seed)?;
    let manifest = Manifest::new(
        "train",
        &canonical,
        &[],
        &["curves.csv", "pilots.csv", "report.json", "model.ckpt"],
    );
    write_json(&out.join("manifest.json"), &manifest)?;

    let last = report.test_mse.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {} epochs: test error {:.4} (started {:.4})",
        report.epochs_run, last, report.initial_test_mse
    );
    if let Some(fair) = report.baseline_fair {
        println!("budget-matched linear baseline: {fair:.4}");
    }
    println!("wall time {:.1}s", report.wall_seconds);
    Ok(0)
}

fn cmd_sweep(settings: &Settings, out: &Path) -> Result<i32> {
    let canonical = settings.canonical_string();
    let hash = config_hash(&canonical, &[]);
    let points = snr_sweep(&settings.system, &settings.train, &settings.snr_list)?;
    for p in &points {
        println!(
            "{} dB: proposed {:.4}, linear literal {:.4}, linear fair {:.4}",
            p.snr_db, p.mse_proposed, p.mse_lmmse_literal, p.mse_lmmse_fair
        );
    }
    write_text(&out.join("sweep.csv"), &sweep_csv(&hash, &points))?;
    let manifest = Manifest::new("sweep", &canonical, &[], &["sweep.csv"]);
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(0)
}

fn cmd_verify(settings: &Settings, inject_fault: bool) -> Result<i32> {
    let faults = FaultInjection {
        corrupt_expansion: inject_fault,
    };
    let report = run_all(settings.train.seed, &faults);
    for c in &report.checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        println!("{tag} {}: {}", c.name, c.detail);
    }
    if report.all_passed() {
        println!("all {} checks passed", report.checks.len());
        Ok(0)
    } else {
        let failed = report.checks.iter().filter(|c| !c.passed).count();
        Err(Error::Verification(format!(
            "{failed} of {} checks failed",
            report.checks.len()
        )))
    }
}
