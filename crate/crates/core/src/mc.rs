//! Monte-Carlo estimation of the expected solution and convergence tables.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{AssembledLevel, FemSpace};
use crate::linalg::Vector;
use crate::manufactured::Experiment;
use crate::mesh::SurfaceMesh;
use crate::stepper::{initial_coefficients, precompute_time_levels, AffineSystem, PathSolver, SampleSystem, SolveStats, TimeGrid};
use crate::stochastic::{Sample, Sampler, SeededSampler};

/// Paths per work item. Each chunk sums its paths sequentially and chunk
/// sums are merged in index order, so the result does not depend on how
/// chunks are scheduled.
pub const CHUNK: usize = 16;
/// Chunks held in memory at once.
const BATCH: usize = 64;

pub type ExpectedFn<'a> = dyn Fn(&[f64], f64) -> f64 + Sync + 'a;
pub type InitialFn<'a> = dyn Fn(&[f64], &Sample) -> f64 + Sync + 'a;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub replicate: u64,
    pub samples: usize,
    /// Sample mean `Ū^k` for `k = 0..=K`.
    pub mean: Vec<Vector>,
    /// `‖E[u](t_k) − Ū^k‖` on the discrete surface at `t_k`.
    pub step_errors: Vec<f64>,
    /// Maximum of `step_errors`.
    pub error: f64,
    pub stats: SolveStats,
}

/// Everything needed to run replicates on one level: the space, the
/// precomputed system, and the reference mean.
pub struct MonteCarlo<'a, S: SampleSystem> {
    space: &'a FemSpace,
    solver: PathSolver<'a, S>,
    initial: &'a InitialFn<'a>,
    expected: &'a ExpectedFn<'a>,
}

impl<'a, S: SampleSystem> MonteCarlo<'a, S> {
    pub fn new(
        space: &'a FemSpace,
        system: &'a S,
        grid: &TimeGrid,
        tol: f64,
        initial: &'a InitialFn<'a>,
        expected: &'a ExpectedFn<'a>,
    ) -> Result<Self> {
        Ok(MonteCarlo { space, solver: PathSolver::new(system, grid, tol)?, initial, expected })
    }

    fn levels(&self) -> &[AssembledLevel] {
        self.solver.levels()
    }

    fn chunk_sum<P: Sampler>(&self, sampler: &P, replicate: u64, range: std::ops::Range<usize>) -> Result<(Vec<Vector>, SolveStats)> {
        let steps = self.levels().len();
        let n = self.space.dim();
        let mut sums = vec![vec![0.0; n]; steps];
        let mut stats = SolveStats::default();
        for i in range {
            let sample = sampler.sample(replicate, i as u64);
            let u0 = initial_coefficients(self.space.mesh(), |x| (self.initial)(x, &sample));
            let path_stats = self.solver.run(&u0, &sample, i, |k, u| {
                for (s, v) in sums[k].iter_mut().zip(u) {
                    *s += v;
                }
            })?;
            stats.merge(path_stats);
        }
        Ok((sums, stats))
    }

    /// Runs replicate `replicate` with `samples` paths drawn from `sampler`.
    pub fn run_replicate<P: Sampler>(&self, sampler: &P, replicate: u64, samples: usize) -> Result<ReplicateResult> {
        if samples == 0 {
            return Err(Error::invalid("a replicate needs at least one sample"));
        }
        let steps = self.levels().len();
        let mut total = vec![vec![0.0; self.space.dim()]; steps];
        let mut stats = SolveStats::default();
        let chunks = samples.div_ceil(CHUNK);
        for batch_start in (0..chunks).step_by(BATCH) {
            let batch: Vec<_> = (batch_start..chunks.min(batch_start + BATCH))
                .into_par_iter()
                .map(|c| self.chunk_sum(sampler, replicate, c * CHUNK..samples.min((c + 1) * CHUNK)))
                .collect();
            for part in batch {
                let (sums, s) = part?;
                stats.merge(s);
                for (t, p) in total.iter_mut().zip(&sums) {
                    for (a, b) in t.iter_mut().zip(p) {
                        *a += b;
                    }
                }
            }
        }

        let inv = 1.0 / samples as f64;
        for t in &mut total {
            for v in t.iter_mut() {
                *v *= inv;
            }
        }
        let step_errors: Vec<f64> = self
            .levels()
            .iter()
            .zip(&total)
            .map(|(level, mean)| self.space.l2_error(&level.geometry, mean, |x| (self.expected)(x, level.t)))
            .collect();
        let error = step_errors.iter().copied().fold(0.0, f64::max);
        Ok(ReplicateResult { replicate, samples, mean: total, step_errors, error, stats })
    }
}

impl<S: SampleSystem> MonteCarlo<'_, S> {
    /// `max_k ‖Ū^k − R^k‖` on the discrete surface at `t_k`, for mean fields
    /// `Ū` of `result` and a reference trajectory `R` (e.g. a high-`M` mean).
    pub fn distance(&self, result: &ReplicateResult, reference: &[Vector]) -> Result<f64> {
        if reference.len() != result.mean.len() {
            return Err(Error::DimensionMismatch { expected: result.mean.len(), found: reference.len() });
        }
        let mut worst = 0.0_f64;
        for ((level, mean), r) in self.levels().iter().zip(&result.mean).zip(reference) {
            let diff: Vec<f64> = mean.iter().zip(r).map(|(a, b)| a - b).collect();
            worst = worst.max(self.space.l2_norm_p1(&level.geometry, &diff));
        }
        Ok(worst)
    }
}

/// Root mean square of the replicate errors.
pub fn mc_error(replicates: &[ReplicateResult]) -> Result<f64> {
    rms(&replicates.iter().map(|r| r.error).collect::<Vec<_>>())
}

/// Plain mean of the replicate errors, reported alongside [`mc_error`].
pub fn mean_error(replicates: &[ReplicateResult]) -> Result<f64> {
    if replicates.is_empty() {
        return Err(Error::invalid("no replicates"));
    }
    Ok(replicates.iter().map(|r| r.error).sum::<f64>() / replicates.len() as f64)
}

pub fn rms(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("no replicates"));
    }
    Ok((values.iter().map(|e| e * e).sum::<f64>() / values.len() as f64).sqrt())
}

/// Experimental orders `ln(E_l/E_{l−1}) / ln(p_l/p_{l−1})`.
pub fn eoc(errors: &[f64], parameters: &[f64]) -> Result<Vec<f64>> {
    if errors.len() != parameters.len() {
        return Err(Error::DimensionMismatch { expected: errors.len(), found: parameters.len() });
    }
    if errors.len() < 2 {
        return Err(Error::invalid("eoc needs at least two entries"));
    }
    if let Some(v) = errors.iter().chain(parameters).find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid(format!("eoc inputs must be positive and finite, got {v}")));
    }
    errors
        .windows(2)
        .zip(parameters.windows(2))
        .map(|(e, p)| {
            if p[0] == p[1] {
                return Err(Error::invalid("eoc parameters must differ between consecutive entries"));
            }
            Ok((e[1] / e[0]).ln() / (p[1] / p[0]).ln())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub level: usize,
    pub h: f64,
    pub samples: usize,
    pub tau: f64,
    pub error: f64,
    pub eoc_h: Option<f64>,
    pub eoc_m: Option<f64>,
    pub eoc_tau: Option<f64>,
}

impl ConvergenceRow {
    /// The row as it reads back from CSV.
    pub fn rounded(&self) -> Self {
        ConvergenceRow {
            h: round_sig(self.h),
            tau: round_sig(self.tau),
            error: round_sig(self.error),
            eoc_h: self.eoc_h.map(round_sig),
            eoc_m: self.eoc_m.map(round_sig),
            eoc_tau: self.eoc_tau.map(round_sig),
            ..self.clone()
        }
    }
}

/// Parameters of a convergence study. Schedules are indexed by row.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub experiment: Experiment,
    pub levels: Vec<usize>,
    pub samples: Vec<usize>,
    pub taus: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub tol: f64,
}

impl StudyConfig {
    /// Geometric schedules `τ_l = τ₀ q_τ^l`, `M_l = M₀ q_M^l` over levels `0..=max_level`.
    #[allow(clippy::too_many_arguments)]
    pub fn geometric(
        experiment: Experiment,
        max_level: usize,
        tau0: f64,
        tau_ratio: f64,
        m0: usize,
        m_ratio: usize,
        replicates: usize,
        seed: u64,
        tol: f64,
    ) -> Self {
        let levels: Vec<usize> = (0..=max_level).collect();
        StudyConfig {
            experiment,
            samples: levels.iter().map(|&l| m0 * m_ratio.pow(l as u32)).collect(),
            taus: levels.iter().map(|&l| tau0 * tau_ratio.powi(l as i32)).collect(),
            levels,
            replicates,
            seed,
            tol,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.levels.len();
        if n == 0 {
            return Err(Error::invalid("levels: at least one level is required"));
        }
        if self.samples.len() != n || self.taus.len() != n {
            return Err(Error::invalid(format!(
                "schedules: {} levels but {} sample counts and {} time steps",
                n,
                self.samples.len(),
                self.taus.len()
            )));
        }
        if self.replicates == 0 {
            return Err(Error::invalid("replicates: must be at least 1"));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::invalid(format!("tol: must lie in (0, 1), got {}", self.tol)));
        }
        if let Some(m) = self.samples.iter().find(|&&m| m == 0) {
            return Err(Error::invalid(format!("M: must be at least 1, got {m}")));
        }
        if let Some(t) = self.taus.iter().find(|t| !(**t > 0.0)) {
            return Err(Error::invalid(format!("tau: must be positive, got {t}")));
        }
        Ok(())
    }
}

/// Per-level output of a study beyond the table row.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelReport {
    pub row: ConvergenceRow,
    pub replicate_errors: Vec<f64>,
    pub mean_error: f64,
    pub vertices: usize,
    pub steps: usize,
    pub stats: SolveStats,
}

/// Runs one row of a study: mesh, time levels, `R` replicates.
pub fn run_level(config: &StudyConfig, row: usize) -> Result<LevelReport> {
    let experiment = config.experiment;
    let surface = experiment.surface();
    let mesh = SurfaceMesh::initial_mesh(&surface, config.levels[row])?;
    let grid = TimeGrid::from_step(surface.time_horizon, config.taus[row])?;
    let h = mesh.mesh_size(&surface, &grid.times())?;
    let space = FemSpace::new(mesh)?;
    let levels = precompute_time_levels(&space, &surface, &grid)?;
    let system = AffineSystem::for_experiment(experiment, &space, &levels)?;
    let initial = move |x: &[f64], y: &Sample| experiment.exact_u(x, 0.0, y);
    let expected = move |x: &[f64], t: f64| experiment.expected_u(x, t);
    let mc = MonteCarlo::new(&space, &system, &grid, config.tol, &initial, &expected)?;
    let sampler = SeededSampler { master: config.seed, dim: experiment.sample_dim() };

    let mut results = Vec::with_capacity(config.replicates);
    let mut stats = SolveStats::default();
    for r in 0..config.replicates {
        let result = mc.run_replicate(&sampler, r as u64, config.samples[row])?;
        stats.merge(result.stats);
        results.push(result);
    }
    Ok(LevelReport {
        row: ConvergenceRow {
            level: config.levels[row],
            h,
            samples: config.samples[row],
            tau: grid.tau(),
            error: mc_error(&results)?,
            eoc_h: None,
            eoc_m: None,
            eoc_tau: None,
        },
        replicate_errors: results.iter().map(|r| r.error).collect(),
        mean_error: mean_error(&results)?,
        vertices: space.dim(),
        steps: grid.steps(),
        stats,
    })
}

/// Fills in the EOC columns from the rows' own error and parameter columns.
pub fn fill_eoc(rows: &mut [ConvergenceRow]) -> Result<()> {
    for l in 1..rows.len() {
        let (a, b) = (&rows[l - 1], &rows[l]);
        let pair = |pa: f64, pb: f64| -> Result<Option<f64>> {
            if pa == pb {
                Ok(None)
            } else {
                Ok(Some(eoc(&[a.error, b.error], &[pa, pb])?[0]))
            }
        };
        let eoc_h = pair(a.h, b.h)?;
        let eoc_m = pair(a.samples as f64, b.samples as f64)?;
        let eoc_tau = pair(a.tau, b.tau)?;
        rows[l].eoc_h = eoc_h;
        rows[l].eoc_m = eoc_m;
        rows[l].eoc_tau = eoc_tau;
    }
    Ok(())
}

/// Runs all rows, calling `progress` after each, and fills in the EOCs.
pub fn convergence_study_with(config: &StudyConfig, mut progress: impl FnMut(&LevelReport)) -> Result<Vec<LevelReport>> {
    config.validate()?;
    let mut reports = Vec::with_capacity(config.levels.len());
    for row in 0..config.levels.len() {
        let report = run_level(config, row)?;
        progress(&report);
        reports.push(report);
    }
    let mut rows: Vec<_> = reports.iter().map(|r| r.row.clone()).collect();
    fill_eoc(&mut rows)?;
    for (report, row) in reports.iter_mut().zip(rows) {
        report.row = row;
    }
    Ok(reports)
}

pub fn convergence_study(config: &StudyConfig) -> Result<Vec<ConvergenceRow>> {
    Ok(convergence_study_with(config, |_| {})?.into_iter().map(|r| r.row).collect())
}

/// Rounds to six significant digits.
pub fn round_sig(v: f64) -> f64 {
    format_sig(v).parse().expect("formatted float parses")
}

/// Six significant digits in scientific notation, e.g. `4.88096e-2`.
pub fn format_sig(v: f64) -> String {
    format!("{v:.5e}")
}

pub const CSV_HEADER: &str = "level,h,M,tau,error,eoc_h,eoc_M,eoc_tau";
const UNDEFINED: &str = "---";

fn format_opt(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), format_sig)
}

pub fn to_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.level,
            format_sig(r.h),
            r.samples,
            format_sig(r.tau),
            format_sig(r.error),
            format_opt(r.eoc_h),
            format_opt(r.eoc_m),
            format_opt(r.eoc_tau)
        );
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<ConvergenceRow>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim() == CSV_HEADER => {}
        _ => return Err(Error::invalid(format!("CSV must start with the header `{CSV_HEADER}`"))),
    }
    lines
        .map(|(n, line)| {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 8 {
                return Err(Error::invalid(format!("line {}: expected 8 fields, found {}", n + 1, fields.len())));
            }
            let bad = |name: &str| Error::invalid(format!("line {}: cannot parse {name}", n + 1));
            let float = |i: usize, name: &str| fields[i].parse::<f64>().map_err(|_| bad(name));
            let opt = |i: usize, name: &str| {
                if fields[i] == UNDEFINED {
                    Ok(None)
                } else {
                    float(i, name).map(Some)
                }
            };
            Ok(ConvergenceRow {
                level: fields[0].parse().map_err(|_| bad("level"))?,
                h: float(1, "h")?,
                samples: fields[2].parse().map_err(|_| bad("M"))?,
                tau: float(3, "tau")?,
                error: float(4, "error")?,
                eoc_h: opt(5, "eoc_h")?,
                eoc_m: opt(6, "eoc_M")?,
                eoc_tau: opt(7, "eoc_tau")?,
            })
        })
        .collect()
}

/// Aligned markdown table with the same columns as the CSV.
pub fn to_markdown(rows: &[ConvergenceRow]) -> String {
    let header: Vec<String> = CSV_HEADER.split(',').map(String::from).collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.level.to_string(),
                format_sig(r.h),
                r.samples.to_string(),
                format_sig(r.tau),
                format_sig(r.error),
                format_opt(r.eoc_h),
                format_opt(r.eoc_m),
                format_opt(r.eoc_tau),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| body.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(&header);
    out.push_str(&format!("|{}|\n", widths.iter().map(|w| format!("{}:", "-".repeat(w + 1))).collect::<Vec<_>>().join("|")));
    for r in &body {
        out.push_str(&line(r));
    }
    out
}
