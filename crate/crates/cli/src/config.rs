//! Run configuration: defaults, a flat `key = value` file, environment
//! overrides and command-line flags, applied in that order.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use esfem::{Experiment, StudyConfig, TimeGrid};

pub const ENV_SEED: &str = "ESFEM_SEED";
pub const ENV_WORKERS: &str = "ESFEM_WORKERS";
pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExperimentChoice {
    Ellipse2d,
    Ellipsoid3d,
    /// User-defined surface and data; only reachable through the library API.
    Custom,
}

impl FromStr for ExperimentChoice {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ellipse2d" => Ok(ExperimentChoice::Ellipse2d),
            "ellipsoid3d" => Ok(ExperimentChoice::Ellipsoid3d),
            "custom" => Ok(ExperimentChoice::Custom),
            other => bail!("unknown experiment `{other}` (expected ellipse2d, ellipsoid3d or custom)"),
        }
    }
}

impl fmt::Display for ExperimentChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentChoice::Ellipse2d => "ellipse2d",
            ExperimentChoice::Ellipsoid3d => "ellipsoid3d",
            ExperimentChoice::Custom => "custom",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentChoice,
    /// Finest mesh level; rows run over `0..=levels`.
    pub levels: usize,
    pub tau0: f64,
    /// `τ_l = τ₀ · tau_ratio^l`.
    pub tau_ratio: f64,
    pub m0: usize,
    /// `M_l = M₀ · m_ratio^l`.
    pub m_ratio: usize,
    pub replicates: usize,
    pub seed: u64,
    pub tol: f64,
    pub workers: usize,
    pub out_csv: Option<PathBuf>,
    pub out_md: Option<PathBuf>,
    /// Directory receiving one OFF file per level.
    pub mesh_dump: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: ExperimentChoice::Ellipse2d,
            levels: 3,
            tau0: 1.0,
            tau_ratio: 0.25,
            m0: 1,
            m_ratio: 16,
            replicates: 20,
            seed: DEFAULT_SEED,
            tol: 1e-8,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            out_csv: None,
            out_md: None,
            mesh_dump: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.trim().parse().map_err(|e| anyhow!("{key}: cannot parse `{}`: {e}", value.trim()))
}

impl RunConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match key {
            "experiment" => self.experiment = value.parse().context("experiment")?,
            "levels" => self.levels = parse(key, value)?,
            "tau0" => self.tau0 = parse(key, value)?,
            "tau_ratio" => self.tau_ratio = parse(key, value)?,
            "m0" => self.m0 = parse(key, value)?,
            "m_ratio" => self.m_ratio = parse(key, value)?,
            "replicates" => self.replicates = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "tol" => self.tol = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            "out_csv" => self.out_csv = Some(value.trim().into()),
            "out_md" => self.out_md = Some(value.trim().into()),
            "mesh_dump" => self.mesh_dump = Some(value.trim().into()),
            _ => bail!("unknown key `{key}`"),
        }
        Ok(())
    }

    /// Applies a config file: one `key = value` per line, `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{origin}:{}: expected `key = value`, found `{line}`", n + 1))?;
            self.set(key, value).with_context(|| format!("{origin}:{}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Seed and worker overrides from the environment.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(v) = lookup(ENV_SEED) {
            self.set("seed", &v).with_context(|| ENV_SEED)?;
        }
        if let Some(v) = lookup(ENV_WORKERS) {
            self.set("workers", &v).with_context(|| ENV_WORKERS)?;
        }
        Ok(())
    }

    pub fn experiment(&self) -> Result<Experiment> {
        match self.experiment {
            ExperimentChoice::Ellipse2d => Ok(Experiment::Ellipse2D),
            ExperimentChoice::Ellipsoid3d => Ok(Experiment::Ellipsoid3D),
            ExperimentChoice::Custom => {
                bail!("experiment: `custom` needs user callbacks for the surface, coefficient and solution; use the library API")
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let experiment = self.experiment()?;
        if !(self.tau0 > 0.0 && self.tau0.is_finite()) {
            bail!("tau0: must be positive, got {}", self.tau0);
        }
        if !(self.tau_ratio > 0.0 && self.tau_ratio <= 1.0) {
            bail!("tau_ratio: must lie in (0, 1], got {}", self.tau_ratio);
        }
        if self.m0 == 0 {
            bail!("m0: must be at least 1");
        }
        if self.m_ratio == 0 {
            bail!("m_ratio: must be at least 1");
        }
        if self.replicates == 0 {
            bail!("replicates: must be at least 1");
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            bail!("tol: must lie in (0, 1), got {}", self.tol);
        }
        if self.workers == 0 {
            bail!("workers: must be at least 1");
        }
        if self.m_ratio.checked_pow(self.levels as u32).and_then(|r| r.checked_mul(self.m0)).is_none() {
            bail!("m_ratio: sample count overflows at level {}", self.levels);
        }
        let study = self.study_unchecked(experiment);
        let horizon = experiment.surface().time_horizon;
        for (l, &tau) in study.taus.iter().enumerate() {
            TimeGrid::from_step(horizon, tau)
                .map_err(|_| anyhow!("tau0: level {l} step {tau} does not divide the final time {horizon}"))?;
        }
        Ok(())
    }

    fn study_unchecked(&self, experiment: Experiment) -> StudyConfig {
        StudyConfig::geometric(
            experiment,
            self.levels,
            self.tau0,
            self.tau_ratio,
            self.m0,
            self.m_ratio,
            self.replicates,
            self.seed,
            self.tol,
        )
    }

    pub fn study(&self) -> Result<StudyConfig> {
        self.validate()?;
        Ok(self.study_unchecked(self.experiment()?))
    }
}
