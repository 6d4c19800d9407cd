//! `ellfit`: fit, sweep, diagnose and verify from the command line.
//!
//! Exit codes: 0 success, 1 usage / config / I/O error, 2 the construction
//! or certificate failed.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use ellipsoid_core::diagnostics::{
    diagnose, Cutoffs, DiagnoseOptions, DiagnosticsReport, MIN_TAIL_SAMPLES,
};
use ellipsoid_core::harness::{meta_path, RunOptions, CONJECTURED_THRESHOLD};
use ellipsoid_core::{
    fit_ellipsoid_detailed, run_sweep_with, sample_cloud, verify, CloudFile, QFile, SweepConfig,
};

const EXIT_USAGE: u8 = 1;
const EXIT_FAILED: u8 = 2;

#[derive(Parser)]
#[command(
    name = "ellfit",
    version,
    about = "Identity-perturbation ellipsoid fitting lab"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a Gaussian cloud, fit, and print the certificate summary.
    Fit {
        #[arg(short = 'd')]
        d: usize,
        #[arg(short = 'n')]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the fitted Q as JSON.
        #[arg(long, value_name = "PATH")]
        emit_q: Option<PathBuf>,
        /// Write the sampled cloud as JSON.
        #[arg(long, alias = "out", value_name = "PATH")]
        cloud_out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Run a phase sweep described by a JSON config.
    Sweep {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Overrides `output_path` from the config.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        /// Write 0 in the wall_time_ms column so the CSV is reproducible byte for byte.
        #[arg(long)]
        no_timing: bool,
    },
    /// Fit plus event checks and tail estimates.
    Diagnose {
        #[arg(short = 'd')]
        d: usize,
        #[arg(short = 'n')]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4.0)]
        c2: f64,
        #[arg(long, default_value_t = 4.0)]
        c3: f64,
        #[arg(long, default_value_t = MIN_TAIL_SAMPLES)]
        tail_samples: usize,
        #[arg(long)]
        json: bool,
    },
    /// Check a (cloud, Q) pair: constraint residuals and positive semidefiniteness.
    Verify {
        #[arg(long, value_name = "PATH")]
        cloud: PathBuf,
        #[arg(long, value_name = "PATH")]
        q: PathBuf,
    },
}

type CliResult = Result<ExitCode, String>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Fit {
            d,
            n,
            seed,
            emit_q,
            cloud_out,
            json,
        } => run_fit(d, n, seed, emit_q.as_deref(), cloud_out.as_deref(), json),
        Command::Sweep {
            config,
            out,
            no_timing,
        } => run_sweep_cmd(&config, out, no_timing),
        Command::Diagnose {
            d,
            n,
            seed,
            c2,
            c3,
            tail_samples,
            json,
        } => run_diagnose(d, n, seed, Cutoffs { c2, c3 }, tail_samples, json),
        Command::Verify { cloud, q } => run_verify(&cloud, &q),
    };
    outcome.unwrap_or_else(|msg| {
        eprintln!("error: {msg}");
        ExitCode::from(EXIT_USAGE)
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), String> {
    let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    fs::write(path, text + "\n").map_err(|e| format!("{}: {e}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

#[derive(Serialize)]
struct FitOutput {
    d: usize,
    n: usize,
    seed: u64,
    status: String,
    max_residual: f64,
    q_min_eig: f64,
    perturbation_norm: f64,
    m_min_eig: f64,
    delta_inf: Option<f64>,
}

fn run_fit(
    d: usize,
    n: usize,
    seed: u64,
    emit_q: Option<&Path>,
    cloud_out: Option<&Path>,
    json: bool,
) -> CliResult {
    let cloud = sample_cloud(d, n, seed).map_err(|e| e.to_string())?;
    let fit = fit_ellipsoid_detailed(&cloud).map_err(|e| e.to_string())?;
    let r = &fit.result;

    if let Some(path) = cloud_out {
        write_json(path, &cloud.to_file())?;
    }
    if let Some(path) = emit_q {
        match &fit.q {
            Some(q) => write_json(path, &QFile::from_matrix(q))?,
            None => eprintln!("warning: no Q to write (status {})", r.status),
        }
    }

    let out = FitOutput {
        d,
        n,
        seed,
        status: r.status.to_string(),
        max_residual: r.max_residual,
        q_min_eig: r.q_min_eig,
        perturbation_norm: r.perturbation_norm,
        m_min_eig: r.m_min_eig,
        delta_inf: (!r.delta.is_empty())
            .then(|| r.delta.iter().fold(0.0, |m: f64, v| m.max(v.abs()))),
    };
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&out).map_err(|e| e.to_string())?
        );
    } else {
        println!("d = {d}, n = {n}, seed = {seed}");
        println!("status             {}", out.status);
        println!("max_residual       {:.3e}", out.max_residual);
        println!("q_min_eig          {:.6}", out.q_min_eig);
        println!("perturbation_norm  {:.6}", out.perturbation_norm);
        println!("m_min_eig          {:.6}", out.m_min_eig);
    }
    Ok(if r.status.is_success() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAILED)
    })
}

fn run_sweep_cmd(config_path: &Path, out: Option<PathBuf>, no_timing: bool) -> CliResult {
    let mut config = SweepConfig::from_json_file(config_path).map_err(|e| e.to_string())?;
    config.apply_env_overrides().map_err(|e| e.to_string())?;
    if let Some(out) = out {
        config.output_path = out;
    }
    let opts = RunOptions {
        record_timing: !no_timing,
        ..RunOptions::default()
    };
    let result = run_sweep_with(&config, &opts).map_err(|e| e.to_string())?;

    println!(
        "{} trials in {} cells, {:.1} s",
        result.records.len(),
        result.cells.len(),
        result.wall_time_ms / 1e3
    );
    for c in &result.cells {
        println!(
            "d = {:>4}  fraction = {:.4}  n = {:>6}  success = {}/{}",
            c.d, c.n_fraction, c.n, c.successes, c.trials
        );
    }
    for (d, t) in &result.thresholds {
        match t {
            Some(t) => println!("threshold d = {d}: {t:.4} (conjectured {CONJECTURED_THRESHOLD})"),
            None => println!("threshold d = {d}: undefined (no crossing of 1/2)"),
        }
    }
    println!(
        "wrote {} and {}",
        config.output_path.display(),
        meta_path(&config.output_path).display()
    );
    Ok(ExitCode::SUCCESS)
}

fn print_report(r: &DiagnosticsReport) {
    let e = &r.events;
    let th = &e.thresholds_used;
    println!("d = {}, n = {}, seed = {}", r.d, r.n, r.seed);
    println!("fit status         {}", r.fit.status);
    println!(
        "E1  {:<5}  |M^-1| = {:.4} (<= {}), |M - EM| = {:.4}",
        e.e1_holds, e.m_inv_norm, th.m_inv_norm_max, e.m_dev_norm
    );
    println!(
        "E2  {:<5}  |eps|_inf = {:.4} (<= {:.4}, {} violations)",
        e.e2_holds, e.eps_inf, th.eps_inf_max, e.e2_violations
    );
    println!(
        "E3  {:<5}  |delta|_inf = {:.4} (<= {:.4})",
        e.e3_holds, e.delta_inf, th.delta_inf_max
    );
    let m = &r.epsilon_moments;
    println!(
        "eps mean {:.5} (expected {:.5}), variance {:.5} (expected {:.5})",
        m.sample_mean, m.expected_mean, m.sample_variance, m.expected_variance
    );
    println!(
        "split t0 = {:.4}: heavy support {}, light l2^2 = {:.4}",
        r.split.threshold_t0, r.split.heavy_support_size, r.split.light_norm_sq
    );
    let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "eps tail    psi1 = {}, psi2 = {}",
        fmt(r.epsilon_tail.fitted_psi1),
        fmt(r.epsilon_tail.fitted_psi2)
    );
    println!(
        "tensor tail psi1 * d = {}, max |stat| = {:.4}",
        fmt(r.tensor_tail.fitted_psi1_times_d),
        r.tensor_tail.max_abs_deviation
    );
}

fn run_diagnose(
    d: usize,
    n: usize,
    seed: u64,
    cutoffs: Cutoffs,
    tail_samples: usize,
    json: bool,
) -> CliResult {
    let opts = DiagnoseOptions {
        cutoffs,
        tail_samples,
    };
    let report = diagnose(d, n, seed, &opts).map_err(|e| e.to_string())?;
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?
        );
    } else {
        print_report(&report);
    }
    Ok(ExitCode::SUCCESS)
}

fn run_verify(cloud_path: &Path, q_path: &Path) -> CliResult {
    let cloud = read_json::<CloudFile>(cloud_path)?
        .into_cloud()
        .map_err(|e| format!("{}: {e}", cloud_path.display()))?;
    let q = read_json::<QFile>(q_path)?
        .into_matrix()
        .map_err(|e| format!("{}: {e}", q_path.display()))?;
    let cert = verify(&cloud, &q).map_err(|e| e.to_string())?;
    println!("max_residual  {:.3e}", cert.max_residual);
    println!("min_eig       {:.6}", cert.min_eig);
    Ok(if cert.passes() {
        println!("certificate   PASS");
        ExitCode::SUCCESS
    } else {
        println!("certificate   FAIL");
        ExitCode::from(EXIT_FAILED)
    })
}
