//! Experiment configuration: a single JSON document describing the
//! model, grid, seed, run horizon and optional parameter sweep.
//!
//! Validation happens once at load time and enforces every structural
//! assumption the numerical modules rely on, so a config that loads
//! cleanly can be run without further checks. The documented rejection
//! classes are:
//!
//!  1. malformed JSON
//!  2. unknown or misspelled fields
//!  3. non-positive model scalars (diffusivities, delay, S0)
//!  4. a rate coefficient that is not strictly positive over its period
//!  5. coefficient periods that disagree
//!  6. delay/period ratio that is not a small rational
//!  7. dt that does not divide the delay exactly
//!  8. dt that does not divide the coefficient period exactly
//!  9. degenerate domain (width not a dx multiple, or x_max <= x_min)
//! 10. seed bump extending outside the domain (or nonpositive width)
//! 11. run block with nonpositive horizon or a snapshot cadence that is
//!     not a multiple of dt (or exceeds the horizon)
//! 12. sweep block with an empty or reversed range, or a sweep over the
//!     seasonal amplitude when beta is not in seasonal form

use crate::coefficients::{ModelParams, PeriodicForm};
use crate::delay_ode::commensurate_step;
use crate::error::{KmError, Result};
use crate::pde_sim::{Domain, InitialSeed};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Time step; must divide both the delay and the coefficient period.
    pub dt: f64,
    pub horizon: f64,
    /// Snapshot cadence (a multiple of dt, at most the horizon).
    pub snapshot_every: f64,
    /// Front-tracking threshold for the speed estimate, as a fraction
    /// of S0.
    #[serde(default = "default_front_threshold")]
    pub front_threshold: f64,
}

fn default_front_threshold() -> f64 {
    0.01
}

/// Model parameter swept by the `sweep` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Seasonal forcing amplitude of beta (beta must be in cosine form).
    Amplitude,
    /// The latency delay tau.
    Delay,
    /// The latent-stage diffusivity d_latent.
    LatentDiffusivity,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub start: f64,
    pub stop: f64,
    pub count: usize,
    /// Also run a full simulation per point and report the measured
    /// front speed next to the analytic one.
    #[serde(default)]
    pub measure_speed: bool,
}

impl SweepConfig {
    /// The swept grid values (inclusive endpoints).
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        (0..self.count)
            .map(|k| {
                self.start + (self.stop - self.start) * k as f64 / (self.count - 1) as f64
            })
            .collect()
    }

    /// A copy of the model with the swept parameter set to `value`.
    pub fn apply(&self, base: &ModelParams, value: f64) -> Result<ModelParams> {
        let mut p = base.clone();
        match self.parameter {
            SweepParameter::Amplitude => match &mut p.beta.form {
                PeriodicForm::Cosine { amplitude, .. } => *amplitude = value,
                _ => {
                    return Err(KmError::Config(
                        "amplitude sweep requires beta in seasonal (cosine) form".into(),
                    ))
                }
            },
            SweepParameter::Delay => p.tau = value,
            SweepParameter::LatentDiffusivity => p.d_latent = value,
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelParams,
    pub domain: Domain,
    pub seed: InitialSeed,
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn is_multiple(whole: f64, part: f64) -> bool {
    if !(part > 0.0) || !whole.is_finite() {
        return false;
    }
    let q = whole / part;
    q >= 0.5 && (q - q.round()).abs() <= 1e-9 * q.abs().max(1.0)
}

impl ExperimentConfig {
    /// Desk-scale default: seasonal amplitude `a` on the standard model,
    /// domain [-200, 200] at dx = 0.1, dt = 1/256.
    pub fn desk_default(amplitude: f64) -> Self {
        ExperimentConfig {
            model: ModelParams::desk_default(amplitude),
            domain: Domain {
                x_min: -200.0,
                x_max: 200.0,
                dx: 0.1,
            },
            seed: InitialSeed::Bump {
                center: 0.0,
                width: 2.0,
                amplitude: 0.1,
            },
            run: RunConfig {
                dt: 1.0 / 256.0,
                horizon: 120.0,
                snapshot_every: 0.25,
                front_threshold: 0.01,
            },
            sweep: None,
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| KmError::Config(format!("invalid configuration JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        // the stepper needs a common grid for the delay and the period
        commensurate_step(self.model.tau, self.model.period(), 4)
            .map_err(|e| KmError::Config(format!("delay/period mismatch: {e}")))?;

        let run = &self.run;
        if !(run.dt > 0.0) || !run.dt.is_finite() {
            return Err(KmError::Config(format!("dt must be positive, got {}", run.dt)));
        }
        if !is_multiple(self.model.tau, run.dt) {
            return Err(KmError::Config(format!(
                "dt = {} must divide the delay tau = {} exactly",
                run.dt, self.model.tau
            )));
        }
        if !is_multiple(self.model.period(), run.dt) {
            return Err(KmError::Config(format!(
                "dt = {} must divide the coefficient period T = {} exactly",
                run.dt,
                self.model.period()
            )));
        }
        if !(run.horizon > 0.0) || !is_multiple(run.horizon, run.dt) {
            return Err(KmError::Config(format!(
                "horizon must be a positive multiple of dt, got {}",
                run.horizon
            )));
        }
        if !is_multiple(run.snapshot_every, run.dt) || run.snapshot_every > run.horizon {
            return Err(KmError::Config(format!(
                "snapshot cadence {} must be a multiple of dt no larger than the horizon",
                run.snapshot_every
            )));
        }
        if !(run.front_threshold > 0.0 && run.front_threshold < 1.0) {
            return Err(KmError::Config(format!(
                "front threshold must lie in (0, 1), got {}",
                run.front_threshold
            )));
        }

        let d = &self.domain;
        if !(d.dx > 0.0) || !(d.x_max > d.x_min) || !is_multiple(d.x_max - d.x_min, d.dx) {
            return Err(KmError::Config(format!(
                "domain [{}, {}] with dx = {} is degenerate or not grid-aligned",
                d.x_min, d.x_max, d.dx
            )));
        }
        match self.seed {
            InitialSeed::Bump {
                center,
                width,
                amplitude,
            } => {
                if !(width > 0.0) || !(amplitude >= 0.0) {
                    return Err(KmError::Config(
                        "seed bump needs positive width and nonnegative amplitude".into(),
                    ));
                }
                if center - width < d.x_min || center + width > d.x_max {
                    return Err(KmError::Config(format!(
                        "seed bump [{}, {}] extends outside the domain",
                        center - width,
                        center + width
                    )));
                }
            }
            InitialSeed::Uniform { amplitude } => {
                if !(amplitude >= 0.0) {
                    return Err(KmError::Config(
                        "seed amplitude must be nonnegative".into(),
                    ));
                }
            }
        }

        if let Some(sweep) = &self.sweep {
            if sweep.count == 0 {
                return Err(KmError::Config("sweep count must be at least 1".into()));
            }
            if !(sweep.stop >= sweep.start) || !sweep.start.is_finite() || !sweep.stop.is_finite()
            {
                return Err(KmError::Config(format!(
                    "sweep range [{}, {}] is empty or reversed",
                    sweep.start, sweep.stop
                )));
            }
            // every grid point must itself produce a valid model
            for v in sweep.values() {
                sweep.apply(&self.model, v)?;
            }
        }
        Ok(())
    }
}
