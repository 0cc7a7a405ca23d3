//! Backward Euler on the moving mesh.
//!
//! Thanks to the transport property of the moving nodal basis the scheme
//! needs no advection term:
//!
//! ```text
//! (M^k + τ S^k(Y)) U^k = M^{k−1} U^{k−1} + τ F^k(Y)
//! ```
//!
//! Geometry and mass matrices are sample independent and are computed once
//! per time level by [`precompute_time_levels`]. A [`SampleSystem`] supplies
//! the sample-dependent stiffness and load.

use crate::autodiff::AmbientField;
use crate::error::{Error, Result};
use crate::fem::{AssembledLevel, FemSpace};
use crate::geometry::EvolvingSurface;
use crate::linalg::{default_max_iter, pcg_solve_into, CgStats, CgWorkspace, SparseMatrix, Vector};
use crate::manufactured::{rhs_components, Experiment};
use crate::mesh::SurfaceMesh;
use crate::stochastic::{RandomCoefficient, Sample};

/// Uniform grid `t_k = kT/K`, `k = 0..=K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::invalid(format!("time grid needs K ≥ 1 and T > 0, got K = {steps}, T = {horizon}")));
        }
        Ok(TimeGrid { horizon, steps })
    }

    /// Grid with step `tau`; `T/τ` must be an integer to within 1e-12.
    pub fn from_step(horizon: f64, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::invalid(format!("time step must be positive, got {tau}")));
        }
        let steps = (horizon / tau).round();
        if steps < 1.0 || (steps * tau - horizon).abs() > 1e-12 * horizon.max(1.0) {
            return Err(Error::invalid(format!("T = {horizon} is not a multiple of τ = {tau}")));
        }
        TimeGrid::new(horizon, steps as usize)
    }

    pub fn tau(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            self.horizon * k as f64 / self.steps as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }
}

pub fn precompute_time_levels(space: &FemSpace, surface: &EvolvingSurface, grid: &TimeGrid) -> Result<Vec<AssembledLevel>> {
    (0..=grid.steps())
        .map(|k| {
            let t = grid.time(k);
            space.assemble_level(k, t, space.mesh().vertices_at(surface, t)?)
        })
        .collect()
}

/// Nodal interpolation of the initial value at the reference vertices.
pub fn initial_coefficients(mesh: &SurfaceMesh, u0: impl Fn(&[f64]) -> f64) -> Vector {
    mesh.reference_vertices().iter().map(u0).collect()
}

/// Sample-dependent part of the discrete system at time level `k ≥ 1`.
pub trait SampleSystem: Sync {
    fn levels(&self) -> &[AssembledLevel];

    /// Overwrites `stiffness` with `S^k(Y)` and `load` with `F^k(Y)`.
    fn assemble(&self, k: usize, sample: &Sample, stiffness: &mut SparseMatrix, load: &mut Vector) -> Result<()>;
}

pub type RhsFn<'a> = dyn Fn(&[f64], f64, &Sample) -> Result<f64> + Sync + 'a;

/// Assembles stiffness and load from scratch for every sample and step.
pub struct DirectSystem<'a> {
    pub space: &'a FemSpace,
    pub levels: &'a [AssembledLevel],
    pub coefficient: &'a RandomCoefficient,
    pub rhs: &'a RhsFn<'a>,
}

impl SampleSystem for DirectSystem<'_> {
    fn levels(&self) -> &[AssembledLevel] {
        self.levels
    }

    fn assemble(&self, k: usize, sample: &Sample, stiffness: &mut SparseMatrix, load: &mut Vector) -> Result<()> {
        let level = &self.levels[k];
        *stiffness = self.space.assemble_stiffness(&level.geometry, level.t, self.coefficient, sample)?;
        let mut first_error = None;
        *load = self.space.assemble_load(&level.geometry, |x| {
            (self.rhs)(x, level.t, sample).unwrap_or_else(|e| {
                first_error.get_or_insert(e);
                0.0
            })
        });
        first_error.map_or(Ok(()), Err)
    }
}

/// Problems whose coefficient and solution are affine in `Y`,
/// `α = α₀ + Σ Y_m α_m`, `u = u₀ + Σ Y_m u_m`. Then
/// `S(Y) = Σ_n ψ_n S_n` and `F(Y) = Σ_m ψ_m T_m − Σ_{m,n} ψ_m ψ_n D_mn`
/// with `ψ = (1, Y)`, and every piece is precomputed per time level.
pub struct AffineSystem<'a> {
    levels: &'a [AssembledLevel],
    stiffness_terms: Vec<Vec<Vec<f64>>>,
    transport_loads: Vec<Vec<Vector>>,
    diffusion_loads: Vec<Vec<Vec<Vector>>>,
}

impl<'a> AffineSystem<'a> {
    pub fn new<A: AmbientField, U: AmbientField>(
        space: &FemSpace,
        levels: &'a [AssembledLevel],
        surface: &EvolvingSurface,
        alpha_terms: &[A],
        u_terms: &[U],
    ) -> Result<Self> {
        let mut stiffness_terms = Vec::with_capacity(levels.len());
        let mut transport_loads = Vec::with_capacity(levels.len());
        let mut diffusion_loads = Vec::with_capacity(levels.len());
        for level in levels {
            let geom = &level.geometry;
            let t = level.t;
            // α(Y) > 0 on the open cube iff α₀ − Σ|α_m| ≥ 0 and α₀ > 0
            for x in geom.quadrature_points() {
                let a0 = alpha_terms[0].eval(x, t);
                let spread: f64 = alpha_terms[1..].iter().map(|a| a.eval(x, t).abs()).sum();
                if !(a0 > 0.0) || a0 - spread < 0.0 {
                    return Err(Error::Ellipticity { value: a0 - spread, point: x.to_vec(), t });
                }
            }
            stiffness_terms.push(
                alpha_terms
                    .iter()
                    .map(|a| {
                        let w = space.element_integrals(geom, |x| a.eval(x, t));
                        space.stiffness_from_element_weights(geom, &w).values().to_vec()
                    })
                    .collect(),
            );

            if level.k == 0 {
                transport_loads.push(Vec::new());
                diffusion_loads.push(Vec::new());
                continue;
            }
            let components = geom
                .quadrature_points()
                .map(|x| rhs_components(surface, alpha_terms, u_terms, x, t))
                .collect::<Result<Vec<_>>>()?;
            let load_of = |pick: &dyn Fn(&crate::manufactured::RhsComponents) -> f64| {
                let values: Vec<f64> = components.iter().map(pick).collect();
                space.load_from_point_values(geom, &values)
            };
            transport_loads.push((0..u_terms.len()).map(|m| load_of(&|c| c.transport[m])).collect());
            diffusion_loads.push(
                (0..u_terms.len())
                    .map(|m| (0..alpha_terms.len()).map(|n| load_of(&|c| c.diffusion[m][n])).collect())
                    .collect(),
            );
        }
        Ok(AffineSystem { levels, stiffness_terms, transport_loads, diffusion_loads })
    }

    pub fn for_experiment(experiment: Experiment, space: &FemSpace, levels: &'a [AssembledLevel]) -> Result<Self> {
        let alpha = experiment.coefficient().affine_terms().expect("experiment coefficients are affine");
        AffineSystem::new(space, levels, &experiment.surface(), &alpha, &experiment.solution_terms())
    }
}

impl SampleSystem for AffineSystem<'_> {
    fn levels(&self) -> &[AssembledLevel] {
        self.levels
    }

    fn assemble(&self, k: usize, sample: &Sample, stiffness: &mut SparseMatrix, load: &mut Vector) -> Result<()> {
        let psi = sample.affine_weights();
        let terms = &self.stiffness_terms[k];
        if psi.len() < terms.len() || psi.len() < self.transport_loads[k].len() {
            return Err(Error::DimensionMismatch { expected: terms.len() - 1, found: sample.dim() });
        }
        if !stiffness.same_pattern(&self.levels[k].mass) {
            *stiffness = SparseMatrix::zeros(self.levels[k].mass.pattern().clone());
        }
        let values = stiffness.values_mut();
        values.copy_from_slice(&terms[0]);
        for (term, &w) in terms.iter().zip(&psi).skip(1) {
            for (v, s) in values.iter_mut().zip(term) {
                *v += w * s;
            }
        }

        load.clear();
        load.resize(self.levels[k].mass.dim(), 0.0);
        for (m, transport) in self.transport_loads[k].iter().enumerate() {
            for (l, v) in load.iter_mut().zip(transport) {
                *l += psi[m] * v;
            }
            for (n, diffusion) in self.diffusion_loads[k][m].iter().enumerate() {
                let w = psi[m] * psi[n];
                for (l, v) in load.iter_mut().zip(diffusion) {
                    *l -= w * v;
                }
            }
        }
        Ok(())
    }
}

/// Per-path solver counters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolveStats {
    pub solves: usize,
    pub iterations: usize,
    pub max_residual: f64,
}

impl SolveStats {
    pub fn record(&mut self, cg: CgStats) {
        self.solves += 1;
        self.iterations += cg.iterations;
        self.max_residual = self.max_residual.max(cg.relative_residual);
    }

    pub fn merge(&mut self, other: SolveStats) {
        self.solves += other.solves;
        self.iterations += other.iterations;
        self.max_residual = self.max_residual.max(other.max_residual);
    }
}

/// Scratch space reused across the steps of a path.
#[derive(Debug, Clone)]
pub struct StepWorkspace {
    system: SparseMatrix,
    rhs: Vector,
    cg: CgWorkspace,
}

impl StepWorkspace {
    pub fn new(level: &AssembledLevel) -> Self {
        let n = level.mass.dim();
        StepWorkspace { system: level.mass.clone(), rhs: vec![0.0; n], cg: CgWorkspace::new(n) }
    }
}

/// Advances `u` from level `k−1` to level `k` in place: solves
/// `(M^k + τS^k) U^k = M^{k−1} U^{k−1} + τF^k`, warm-started from `U^{k−1}`.
#[allow(clippy::too_many_arguments)]
pub fn step_in_place(
    previous: &AssembledLevel,
    current: &AssembledLevel,
    stiffness: &SparseMatrix,
    load: &[f64],
    tau: f64,
    tol: f64,
    u: &mut [f64],
    ws: &mut StepWorkspace,
) -> Result<CgStats> {
    let n = current.mass.dim();
    if stiffness.dim() != n || load.len() != n || u.len() != n || previous.mass.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, found: u.len() });
    }
    if !current.mass.same_pattern(stiffness) {
        return Err(Error::invalid("stiffness and mass matrices must share a sparsity pattern"));
    }
    if !ws.system.same_pattern(&current.mass) || ws.rhs.len() != n {
        *ws = StepWorkspace::new(current);
    }
    for ((a, m), s) in ws.system.values_mut().iter_mut().zip(current.mass.values()).zip(stiffness.values()) {
        *a = m + tau * s;
    }
    previous.mass.spmv_into(u, &mut ws.rhs);
    for (r, f) in ws.rhs.iter_mut().zip(load) {
        *r += tau * f;
    }
    pcg_solve_into(&ws.system, &ws.rhs, u, tol, default_max_iter(n), &mut ws.cg)
}

/// One backward Euler step returning the new coefficient vector.
pub fn step(
    previous: &AssembledLevel,
    current: &AssembledLevel,
    stiffness: &SparseMatrix,
    load: &[f64],
    u_previous: &[f64],
    tau: f64,
    tol: f64,
) -> Result<Vector> {
    let mut u = u_previous.to_vec();
    let mut ws = StepWorkspace::new(current);
    step_in_place(previous, current, stiffness, load, tau, tol, &mut u, &mut ws)?;
    Ok(u)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathTrajectory {
    pub sample: Sample,
    /// `U^k` for `k = 0..=K`.
    pub coefficients: Vec<Vector>,
    pub stats: SolveStats,
}

/// Evolves single sample paths over a fixed set of precomputed levels.
pub struct PathSolver<'a, S: SampleSystem> {
    system: &'a S,
    tau: f64,
    tol: f64,
}

impl<'a, S: SampleSystem> PathSolver<'a, S> {
    pub fn new(system: &'a S, grid: &TimeGrid, tol: f64) -> Result<Self> {
        if system.levels().len() != grid.steps() + 1 {
            return Err(Error::DimensionMismatch { expected: grid.steps() + 1, found: system.levels().len() });
        }
        if !(tol > 0.0 && tol < 1.0) {
            return Err(Error::invalid(format!("solver tolerance must lie in (0, 1), got {tol}")));
        }
        Ok(PathSolver { system, tau: grid.tau(), tol })
    }

    pub fn levels(&self) -> &'a [AssembledLevel] {
        self.system.levels()
    }

    /// Runs one path, handing `U^k` to `on_step` for every `k = 0..=K`.
    /// Errors carry the failing step and `sample_index`.
    pub fn run(
        &self,
        u0: &[f64],
        sample: &Sample,
        sample_index: usize,
        mut on_step: impl FnMut(usize, &[f64]),
    ) -> Result<SolveStats> {
        let levels = self.system.levels();
        let mut u = u0.to_vec();
        let mut stats = SolveStats::default();
        let mut ws = StepWorkspace::new(&levels[0]);
        let mut stiffness = levels[0].mass.clone();
        let mut load = vec![0.0; u.len()];
        on_step(0, &u);
        for k in 1..levels.len() {
            let wrap = |e: Error| Error::Path { step: k, sample: sample_index, source: Box::new(e) };
            self.system.assemble(k, sample, &mut stiffness, &mut load).map_err(wrap)?;
            let cg = step_in_place(&levels[k - 1], &levels[k], &stiffness, &load, self.tau, self.tol, &mut u, &mut ws)
                .map_err(wrap)?;
            stats.record(cg);
            on_step(k, &u);
        }
        Ok(stats)
    }

    pub fn simulate(&self, u0: &[f64], sample: &Sample) -> Result<PathTrajectory> {
        let mut coefficients = Vec::with_capacity(self.system.levels().len());
        let stats = self.run(u0, sample, 0, |_, u| coefficients.push(u.to_vec()))?;
        Ok(PathTrajectory { sample: sample.clone(), coefficients, stats })
    }
}

/// Convenience driver: builds the finite element space and time levels,
/// assembles everything directly from the callbacks and evolves one path.
#[allow(clippy::too_many_arguments)]
pub fn simulate_path(
    mesh: &SurfaceMesh,
    surface: &EvolvingSurface,
    coefficient: &RandomCoefficient,
    rhs: &RhsFn<'_>,
    u0: impl Fn(&[f64]) -> f64,
    sample: &Sample,
    grid: &TimeGrid,
    tol: f64,
) -> Result<PathTrajectory> {
    let space = FemSpace::new(mesh.clone())?;
    let levels = precompute_time_levels(&space, surface, grid)?;
    let system = DirectSystem { space: &space, levels: &levels, coefficient, rhs };
    let solver = PathSolver::new(&system, grid, tol)?;
    solver.simulate(&initial_coefficients(mesh, u0), sample)
}
