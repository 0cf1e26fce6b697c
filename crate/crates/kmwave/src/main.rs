//! Command-line driver: thresholds, critical speeds, front simulations,
//! parameter sweeps and sub-solution verification, all driven by one
//! JSON configuration document.
//!
//! Exit codes: 0 success, 2 configuration/argument error, 3 numerical
//! non-convergence, 4 precondition violated (e.g. R0 <= 1), 5 front
//! reached the domain boundary. On failure a machine-readable JSON
//! object `{"error": <class>, "exit_code": <n>, "message": <text>}` is
//! printed to stderr.
//!
//! Output files are written atomically (temp file + rename) into the
//! directory chosen by `--out`, the config's `output_dir`, the
//! `KMWAVE_OUT` environment variable, or the working directory, in that
//! order of precedence. CSV bodies are deterministic for a given
//! config; wall-clock timing appears only in the run manifest.
//!
//! CSV schemas:
//!   - `dispersion.csv` (cstar): `mu,c_of_mu`
//!   - `snapshot_NNNNN.csv` (simulate): `x,S,I`, one file per snapshot
//!   - `fronts.csv` (simulate): `t,front_x`
//!   - `sweep.csv` (sweep): `value,c_star,mu_star[,measured_speed]`

use clap::{Args, Parser, Subcommand};
use kmwave::config::{ExperimentConfig, SweepConfig, SweepParameter};
use kmwave::error::{KmError, Result};
use kmwave::pde_sim;
use kmwave::threshold;
use kmwave::wave_speed;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "kmwave", version, about = "Seasonal epidemic front toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (JSON); built-in desk-scale default if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: config `output_dir`, then $KMWAVE_OUT,
    /// then the working directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Reproduction number, perturbation bound and growth exponent.
    R0(Common),
    /// Critical front speed and the dispersion curve.
    Cstar(Common),
    /// Run the reaction-diffusion simulation and measure the front.
    Simulate(Common),
    /// Assemble and check the sub-solution certificate at a subcritical speed.
    VerifyProof {
        #[command(flatten)]
        common: Common,
        /// Wave speed as a fraction of c* (must be < 1).
        #[arg(long, default_value_t = 0.5)]
        c_fraction: f64,
    },
    /// Sweep a model parameter, computing c* per grid point.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Override: sweep the seasonal amplitude over `start:stop:count`.
        #[arg(long)]
        amplitude_range: Option<String>,
        /// Worker threads for the sweep (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let report = serde_json::json!({
                "error": e.kind(),
                "exit_code": e.exit_code(),
                "message": e.to_string(),
            });
            eprintln!("{report}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::R0(common) => cmd_r0(&common),
        Command::Cstar(common) => cmd_cstar(&common),
        Command::Simulate(common) => cmd_simulate(&common),
        Command::VerifyProof { common, c_fraction } => cmd_verify_proof(&common, c_fraction),
        Command::Sweep {
            common,
            amplitude_range,
            workers,
        } => cmd_sweep(&common, amplitude_range.as_deref(), workers),
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    match &common.config {
        Some(path) => ExperimentConfig::from_path(path),
        None => Ok(ExperimentConfig::desk_default(0.2)),
    }
}

fn output_dir(common: &Common, cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os("KMWAVE_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn cmd_r0(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let dir = output_dir(common, &cfg)?;
    let report = threshold::compute_r0_eps(&cfg.model, 0.0)?;
    let eps_sup = match threshold::epsilon_sup(&cfg.model) {
        Ok(v) => Some(v),
        Err(KmError::Precondition(_)) => None,
        Err(e) => return Err(e),
    };
    let out = serde_json::json!({
        "r0": report.r0_eps,
        "lambda0": report.lambda,
        "eps_sup": eps_sup,
    });
    let text = serde_json::to_string_pretty(&out)?;
    println!("{text}");
    write_atomic(&dir.join("r0.json"), text.as_bytes())?;
    Ok(())
}

fn cmd_cstar(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let dir = output_dir(common, &cfg)?;
    let cs = wave_speed::critical_speed(&cfg.model)?;
    let csv = wave_speed::dispersion_curve_csv(&cs);
    write_atomic(&dir.join("dispersion.csv"), csv.as_bytes())?;
    let out = serde_json::json!({
        "c_star": cs.c_star,
        "mu_star": cs.mu_star,
        "tolerance": cs.tolerance,
    });
    let text = serde_json::to_string_pretty(&out)?;
    println!("{text}");
    write_atomic(&dir.join("cstar.json"), text.as_bytes())?;
    Ok(())
}

fn snapshot_csv(snap: &pde_sim::Snapshot, x_min: f64, dx: f64) -> String {
    let mut csv = String::from("x,S,I\n");
    for (j, (s, i)) in snap.s.iter().zip(snap.i.iter()).enumerate() {
        csv.push_str(&format!(
            "{:.6},{:.12e},{:.12e}\n",
            x_min + j as f64 * dx,
            s,
            i
        ));
    }
    csv
}

fn cmd_simulate(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let dir = output_dir(common, &cfg)?;
    let started = std::time::Instant::now();
    let result = pde_sim::simulate(
        &cfg.model,
        cfg.domain,
        &cfg.seed,
        cfg.run.dt,
        cfg.run.horizon,
        cfg.run.snapshot_every,
    )?;
    let elapsed = started.elapsed().as_secs_f64();

    for (k, snap) in result.snapshots.iter().enumerate() {
        let csv = snapshot_csv(snap, result.x_min, result.dx);
        write_atomic(&dir.join(format!("snapshot_{k:05}.csv")), csv.as_bytes())?;
    }

    let threshold = cfg.run.front_threshold * cfg.model.s0;
    let speed = match pde_sim::spreading_speed(&result, threshold, cfg.model.period()) {
        Ok(est) => {
            let mut csv = String::from("t,front_x\n");
            for (t, x) in &est.front_positions {
                csv.push_str(&format!("{t:.6},{x:.9}\n"));
            }
            write_atomic(&dir.join("fronts.csv"), csv.as_bytes())?;
            Some(est)
        }
        Err(KmError::NoFront(_)) | Err(KmError::Argument(_)) => None,
        Err(e) => return Err(e),
    };

    let manifest = serde_json::json!({
        "model": cfg.model,
        "domain": cfg.domain,
        "seed": cfg.seed,
        "run": cfg.run,
        "n_snapshots": result.snapshots.len(),
        "s_inf": result.s_inf,
        "clamp_events": result.clamp_events,
        "speed_estimate": speed,
        "wall_seconds": elapsed,
    });
    let text = serde_json::to_string_pretty(&manifest)?;
    println!("{text}");
    write_atomic(&dir.join("manifest.json"), text.as_bytes())?;
    Ok(())
}

fn cmd_verify_proof(common: &Common, c_fraction: f64) -> Result<()> {
    if !(c_fraction > 0.0 && c_fraction < 1.0) {
        return Err(KmError::Argument(format!(
            "--c-fraction must lie in (0, 1), got {c_fraction}"
        )));
    }
    let cfg = load_config(common)?;
    let dir = output_dir(common, &cfg)?;
    let cs = wave_speed::critical_speed(&cfg.model)?;
    let gadget = wave_speed::proof_gadgets_with(
        &cfg.model,
        c_fraction * cs.c_star,
        wave_speed::DEFAULT_VARRHO,
        cs.c_star,
        wave_speed::KRateVariant::SquaredRate,
    )?;
    let sub = wave_speed::subsolution_residual(&gadget, 128 * gadget.m as usize, 128)?;
    let attractor = wave_speed::attractor_residual(&cfg.model, &gadget.u, gadget.eps_star)?;

    let m = gadget.m as f64;
    let checks = [
        ("c mu_c < m lambda_c", gadget.c * gadget.mu_c < m * gadget.lambda_c),
        (
            "rho in (c mu_c, m lambda_c)",
            gadget.rho_exp > gadget.c * gadget.mu_c && gadget.rho_exp < m * gadget.lambda_c,
        ),
        (
            "d2 pi^2 / l^2 < m lambda_c - rho",
            gadget.params.d2 * std::f64::consts::PI.powi(2) / (gadget.l * gadget.l)
                < m * gadget.lambda_c - gadget.rho_exp,
        ),
        ("max u < A - 1", gadget.max_u < gadget.a_big - 1.0),
        ("l > ell^2", gadget.l > gadget.ell * gadget.ell),
        ("sub-solution residual <= 1e-6", sub.max_residual <= 1e-6),
        (
            "attractor residual <= 1e-6",
            attractor.residual <= 1e-6 && !attractor.degenerate,
        ),
    ];
    let all_pass = checks.iter().all(|(_, ok)| *ok);
    let out = serde_json::json!({
        "gadget": gadget,
        "subsolution": sub,
        "attractor_residual": attractor.residual,
        "checks": checks
            .iter()
            .map(|(name, ok)| serde_json::json!({"check": name, "pass": ok}))
            .collect::<Vec<_>>(),
        "all_pass": all_pass,
    });
    let text = serde_json::to_string_pretty(&out)?;
    println!("{text}");
    write_atomic(&dir.join("verify_proof.json"), text.as_bytes())?;
    if !all_pass {
        return Err(KmError::GadgetInfeasible(
            "one or more certificate checks failed; see verify_proof.json".into(),
        ));
    }
    Ok(())
}

fn parse_range(text: &str) -> Result<SweepConfig> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(KmError::Argument(format!(
            "--amplitude-range expects start:stop:count, got {text:?}"
        )));
    }
    let start: f64 = parts[0]
        .parse()
        .map_err(|_| KmError::Argument(format!("bad range start {:?}", parts[0])))?;
    let stop: f64 = parts[1]
        .parse()
        .map_err(|_| KmError::Argument(format!("bad range stop {:?}", parts[1])))?;
    let count: usize = parts[2]
        .parse()
        .map_err(|_| KmError::Argument(format!("bad range count {:?}", parts[2])))?;
    Ok(SweepConfig {
        parameter: SweepParameter::Amplitude,
        start,
        stop,
        count,
        measure_speed: false,
    })
}

fn cmd_sweep(common: &Common, amplitude_range: Option<&str>, workers: Option<usize>) -> Result<()> {
    let cfg = load_config(common)?;
    let dir = output_dir(common, &cfg)?;
    let sweep = match amplitude_range {
        Some(text) => parse_range(text)?,
        None => cfg.sweep.clone().ok_or_else(|| {
            KmError::Config("config has no sweep block and no --amplitude-range given".into())
        })?,
    };
    if sweep.count == 0 {
        return Err(KmError::Argument("sweep count must be at least 1".into()));
    }

    let pool = {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = workers {
            builder = builder.num_threads(n.max(1));
        }
        builder
            .build()
            .map_err(|e| KmError::Config(format!("worker pool: {e}")))?
    };

    let values = sweep.values();
    let rows: Vec<Result<(f64, f64, f64, Option<f64>)>> = pool.install(|| {
        use rayon::prelude::*;
        values
            .par_iter()
            .map(|&v| {
                let model = sweep.apply(&cfg.model, v)?;
                let cs = wave_speed::critical_speed(&model)?;
                let measured = if sweep.measure_speed {
                    let result = pde_sim::simulate(
                        &model,
                        cfg.domain,
                        &cfg.seed,
                        cfg.run.dt,
                        cfg.run.horizon,
                        cfg.run.snapshot_every,
                    )?;
                    let thr = cfg.run.front_threshold * model.s0;
                    Some(pde_sim::spreading_speed(&result, thr, model.period())?.speed)
                } else {
                    None
                };
                Ok((v, cs.c_star, cs.mu_star, measured))
            })
            .collect()
    });

    let mut csv = if sweep.measure_speed {
        String::from("value,c_star,mu_star,measured_speed\n")
    } else {
        String::from("value,c_star,mu_star\n")
    };
    for row in rows {
        let (v, c_star, mu_star, measured) = row?;
        match measured {
            Some(s) => csv.push_str(&format!(
                "{v:.9},{c_star:.12e},{mu_star:.12e},{s:.12e}\n"
            )),
            None => csv.push_str(&format!("{v:.9},{c_star:.12e},{mu_star:.12e}\n")),
        }
    }
    print!("{csv}");
    write_atomic(&dir.join("sweep.csv"), csv.as_bytes())?;
    Ok(())
}
