//! The `run` subcommand: a full convergence study.

use std::fs;
use std::io::Write;
use std::time::Instant;

use anyhow::{Context, Result};
use esfem::mc::{convergence_study_with, to_csv, to_markdown, LevelReport};
use esfem::{ConvergenceRow, SurfaceMesh};

use crate::config::RunConfig;

pub struct RunOutput {
    pub reports: Vec<LevelReport>,
    pub csv: String,
    pub markdown: String,
}

impl RunOutput {
    pub fn rows(&self) -> Vec<ConvergenceRow> {
        self.reports.iter().map(|r| r.row.clone()).collect()
    }
}

fn dump_meshes(config: &RunConfig, log: &mut (dyn Write + Send)) -> Result<()> {
    let Some(dir) = &config.mesh_dump else { return Ok(()) };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let surface = config.experiment()?.surface();
    for level in 0..=config.levels {
        let mesh = SurfaceMesh::initial_mesh(&surface, level)?;
        let path = dir.join(format!("level{level}.off"));
        let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        mesh.write_off(mesh.reference_vertices(), std::io::BufWriter::new(file))?;
        writeln!(log, "wrote {}", path.display())?;
    }
    Ok(())
}

/// Runs the study described by `config`, logging progress to `log`, and
/// writes the requested CSV and markdown files.
pub fn run(config: &RunConfig, log: &mut (dyn Write + Send)) -> Result<RunOutput> {
    let study = config.study()?;
    dump_meshes(config, log)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(config.workers).build()?;
    writeln!(
        log,
        "{}: levels 0..={}, R = {}, seed = {}, tol = {:e}, {} worker(s)",
        config.experiment, config.levels, config.replicates, config.seed, config.tol, config.workers
    )?;

    let start = Instant::now();
    let mut level_start = Instant::now();
    let reports = pool.install(|| {
        convergence_study_with(&study, |r| {
            let s = r.stats;
            let _ = writeln!(
                log,
                "level {}: J = {}, K = {}, M = {}: error {:.5e} (mean {:.5e}), {} solves, {:.1} CG iterations per solve, max residual {:.2e}, {:.2} s",
                r.row.level,
                r.vertices,
                r.steps,
                r.row.samples,
                r.row.error,
                r.mean_error,
                s.solves,
                s.iterations as f64 / s.solves.max(1) as f64,
                s.max_residual,
                level_start.elapsed().as_secs_f64()
            );
            level_start = Instant::now();
        })
    })?;
    writeln!(log, "total wall-clock {:.2} s", start.elapsed().as_secs_f64())?;

    let rows: Vec<_> = reports.iter().map(|r| r.row.clone()).collect();
    let csv = to_csv(&rows);
    let markdown = to_markdown(&rows);
    if let Some(path) = &config.out_csv {
        fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &config.out_md {
        fs::write(path, &markdown).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(RunOutput { reports, csv, markdown })
}
