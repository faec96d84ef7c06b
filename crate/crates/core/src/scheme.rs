//! The implicit time stepper for the extended model.
//!
//! One step advances `(phi^n, q^n)` to `(phi^{n+1}, q^{n+1})` through a
//! linear solve for the pair `(phi^{n+1}, mu*^{n+1/2})`:
//!
//! ```text
//! (phi' - phi)/dt = chi D_h(psi M, chi mu) - chi s3
//! mu = psi gbar q^{n+1/2} - K D_h(psi, phi^{n+1/2})
//!      + 1/2 sum_faces |D psi| A[ alpha (phi^{n+1/2} - h1) - h2
//!                                 + gamma_inv (phi' - phi)/dt ]
//! q' = q + gbar (phi' - phi)
//! ```
//!
//! with `phi^{n+1/2} = (phi' + phi)/2`, `q^{n+1/2} = q + gbar (phi' - phi)/2`,
//! and `gbar` the second-order extrapolation of `g` (first step falls back to
//! `g(phi^0)`). Eliminating `q'` leaves a 2N x 2N sparse system whose blocks
//! touch only face neighbors. The mirror ghost closure applies to `phi`,
//! `mu*`, and `psi` alike.
//!
//! Each step is audited: the solution satisfies a discrete energy law as an
//! algebraic identity, so the audit residual measures nothing but the linear
//! solve tolerance and round-off.

use crate::error::{Error, Result};
use crate::geometry::EmbeddingField;
use crate::grid::{CellField, GridSpec};
use crate::model::{
    boundary_flux_density, discrete_energy, discrete_volume, g_field, pumped_power, BoundaryData,
    PhysParams, SimState,
};
use crate::solver::{Csr, LinearSolver, SolverOptions};

/// Unknown vector layout: `x[0..N]` is `phi^{n+1}` and `x[N..2N]` is
/// `mu*^{n+1/2}`, both row-major with cell `(i, j)` at `j * nx + i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnknownLayout {
    pub nx: usize,
    pub ny: usize,
}

impl UnknownLayout {
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }
}

/// Assembled linear system for one step.
#[derive(Debug, Clone)]
pub struct StepSystem {
    pub matrix: Csr,
    pub rhs: Vec<f64>,
    pub layout: UnknownLayout,
}

/// Per-step solver and scheme statistics.
#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    pub residual: f64,
    pub iterations: usize,
    pub wall_seconds: f64,
    pub g_floor_activations: u64,
}

/// Energy bookkeeping for one completed step. The discrete energy law reads
/// `(f_next - f_prev)/dt = -(dissipation + gamma_dissipation + pumped_power)`
/// and `energy_residual` is the absolute defect of that identity.
#[derive(Debug, Clone, Copy)]
pub struct StepAudit {
    pub f_prev: f64,
    pub f_next: f64,
    pub dissipation: f64,
    pub gamma_dissipation: f64,
    pub pumped_power: f64,
    pub energy_residual: f64,
}

/// Second-order extrapolation of the scheme coefficients. Constants
/// extrapolate to themselves; `g` uses the two-branch rule.
pub struct Extrapolated {
    pub g_bar: CellField,
    pub m_bar: f64,
    pub gamma_inv_bar: f64,
    pub floor_count: u64,
}

pub fn extrapolate(state: &SimState, params: &PhysParams) -> Extrapolated {
    let mut floor_count = 0;
    let g_now = g_field(&state.phi, params, &mut floor_count);
    let g_bar = match (&state.phi_prev, state.n) {
        (Some(prev), n) if n >= 1 => {
            let g_prev = g_field(prev, params, &mut floor_count);
            let vals = g_now
                .as_slice()
                .iter()
                .zip(g_prev.as_slice())
                .map(|(now, old)| 1.5 * now - 0.5 * old)
                .collect();
            CellField::from_vec(&state.phi.grid, vals).unwrap()
        }
        _ => g_now,
    };
    Extrapolated {
        g_bar,
        m_bar: params.mobility,
        gamma_inv_bar: params.gamma_inv,
        floor_count,
    }
}

/// `q^{n+1} = q^n + gbar (phi^{n+1} - phi^n)`, with no re-initialization.
pub fn update_q(state: &SimState, phi_next: &CellField, g_bar: &CellField) -> CellField {
    let vals = state
        .q
        .as_slice()
        .iter()
        .zip(state.phi.as_slice())
        .zip(phi_next.as_slice())
        .zip(g_bar.as_slice())
        .map(|(((q, p), pn), g)| q + g * (pn - p))
        .collect();
    CellField::from_vec(&state.phi.grid, vals).unwrap()
}

// Neighbor offsets in column order for a row-major layout: down, left,
// right, up. Keeping them sorted lets assembly write values straight into
// the CSR arrays.
const NBR: [(isize, isize); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];

fn neighbor(grid: &GridSpec, i: usize, j: usize, d: (isize, isize)) -> Option<usize> {
    let ni = i as isize + d.0;
    let nj = j as isize + d.1;
    if ni >= 0 && ni < grid.nx as isize && nj >= 0 && nj < grid.ny as isize {
        Some(grid.idx(ni as usize, nj as usize))
    } else {
        None
    }
}

/// Build the fixed sparsity pattern of the coupled system.
fn build_pattern(grid: &GridSpec) -> StepSystem {
    let n = grid.n_cells();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(2 * n);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let c = grid.idx(i, j);
            let mut row = vec![(c, 0.0), (n + c, 0.0)];
            for d in NBR {
                if let Some(nb) = neighbor(grid, i, j, d) {
                    row.push((n + nb, 0.0));
                }
            }
            rows.push(row);
        }
    }
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let c = grid.idx(i, j);
            let mut row = vec![(c, 0.0), (n + c, 0.0)];
            for d in NBR {
                if let Some(nb) = neighbor(grid, i, j, d) {
                    row.push((nb, 0.0));
                }
            }
            rows.push(row);
        }
    }
    StepSystem {
        matrix: Csr::from_rows(2 * n, rows),
        rhs: vec![0.0; 2 * n],
        layout: UnknownLayout {
            nx: grid.nx,
            ny: grid.ny,
        },
    }
}

/// Write the step values into a system with the pattern from `build_pattern`.
#[allow(clippy::too_many_arguments)]
fn assemble_values(
    sys: &mut StepSystem,
    state: &SimState,
    params: &PhysParams,
    embedding: &EmbeddingField,
    bdata: &BoundaryData,
    dt: f64,
    ex: &Extrapolated,
) -> Result<()> {
    let grid = state.phi.grid;
    let n = grid.n_cells();
    let psi = embedding.psi.as_slice();
    let chi = embedding.chi.as_slice();
    let phi = state.phi.as_slice();
    let q = state.q.as_slice();
    let gbar = ex.g_bar.as_slice();
    let h1 = bdata.h1.as_slice();
    let h2 = bdata.h2.as_slice();
    let m_bar = ex.m_bar;
    let gamma_inv = ex.gamma_inv_bar;
    let alpha = params.alpha;
    let k = params.k;

    // E = alpha (phi^{n+1/2} - h1) - h2 + gamma_inv dphi/dt splits into
    // E_u * phi^{n+1} + E0 with a constant unknown coefficient.
    let e_u = 0.5 * alpha + gamma_inv / dt;
    let e0: Vec<f64> = (0..n)
        .map(|c| alpha * (0.5 * phi[c] - h1[c]) - h2[c] - gamma_inv * phi[c] / dt)
        .collect();

    let s3 = boundary_flux_density(&embedding.grad_psi_abs, &bdata.h3);
    let s3 = s3.as_slice();

    let inv = |d: (isize, isize)| if d.0 != 0 { grid.dx } else { grid.dy };

    let a = &mut sys.matrix;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let c = grid.idx(i, j);

            // ---- row block 1: transport ----
            let r1 = c;
            let base = a.indptr[r1];
            // entries sorted: [c, then m-cols ascending]
            let mut pos = base;
            debug_assert_eq!(a.indices[pos], c);
            a.vals[pos] = 1.0 / dt;
            pos += 1;

            // m-column entries in ascending order: N+(c-nx), N+(c-1), N+c, N+(c+1), N+(c+nx)
            let mut mdiag = 0.0;
            let write = |a: &mut Csr, pos: &mut usize, col: usize, v: f64| {
                debug_assert_eq!(a.indices[*pos], col);
                a.vals[*pos] = v;
                *pos += 1;
            };
            // gather in sorted order
            let mut entries: Vec<(usize, f64)> = Vec::with_capacity(5);
            for d in NBR {
                if let Some(nb) = neighbor(&grid, i, j, d) {
                    let delta = inv(d);
                    let w = m_bar * 0.5 * (psi[c] + psi[nb]) / (delta * delta);
                    entries.push((n + nb, -chi[c] * w * chi[nb]));
                    mdiag += chi[c] * w * chi[c];
                }
            }
            entries.push((n + c, mdiag));
            entries.sort_unstable_by_key(|e| e.0);
            for (col, v) in entries {
                write(a, &mut pos, col, v);
            }
            sys.rhs[r1] = phi[c] / dt - chi[c] * s3[c];

            // ---- row block 2: chemical potential ----
            let r2 = n + c;
            let base = a.indptr[r2];
            let mut pos = base;

            let mut udiag = -0.5 * psi[c] * gbar[c] * gbar[c];
            let mut entries: Vec<(usize, f64)> = Vec::with_capacity(5);
            let mut rhs2 = psi[c] * gbar[c] * q[c] - 0.5 * psi[c] * gbar[c] * gbar[c] * phi[c];
            for d in NBR {
                let delta = inv(d);
                if let Some(nb) = neighbor(&grid, i, j, d) {
                    let v = 0.5 * (psi[c] + psi[nb]) / (delta * delta);
                    let w = ((psi[nb] - psi[c]) / delta).abs();
                    entries.push((nb, 0.5 * k * v - 0.25 * e_u * w));
                    udiag += -0.5 * k * v - 0.25 * e_u * w;
                    // knowns: -(K/2) D_h(psi, phi^n) and the face average of E0
                    rhs2 += -0.5 * k * v * (phi[nb] - phi[c]);
                    rhs2 += 0.5 * w * 0.5 * (e0[c] + e0[nb]);
                }
            }
            entries.push((c, udiag));
            entries.push((n + c, 1.0));
            entries.sort_unstable_by_key(|e| e.0);
            for (col, v) in entries {
                write(a, &mut pos, col, v);
            }
            sys.rhs[r2] = rhs2;
        }
    }

    for (k_idx, v) in a.vals.iter().enumerate() {
        if !v.is_finite() {
            let row = a.indptr.partition_point(|p| *p <= k_idx) - 1;
            let cell = row % n;
            return Err(Error::NonFinite {
                what: "matrix coefficient",
                i: cell % grid.nx,
                j: cell / grid.nx,
            });
        }
    }
    if let Some(c) = sys.rhs.iter().position(|v| !v.is_finite()) {
        let cell = c % n;
        return Err(Error::NonFinite {
            what: "right-hand side",
            i: cell % grid.nx,
            j: cell / grid.nx,
        });
    }
    Ok(())
}

/// Assemble the coupled system for one step from scratch.
pub fn assemble(
    state: &SimState,
    params: &PhysParams,
    embedding: &EmbeddingField,
    bdata: &BoundaryData,
    dt: f64,
) -> Result<StepSystem> {
    if !(dt > 0.0) {
        return Err(Error::Param(format!("dt must be > 0 (got {dt})")));
    }
    params.validate()?;
    let ex = extrapolate(state, params);
    let mut sys = build_pattern(&state.phi.grid);
    assemble_values(&mut sys, state, params, embedding, bdata, dt, &ex)?;
    Ok(sys)
}

/// Unpack a solution vector into the field pair.
pub fn split_solution(x: &[f64], grid: &GridSpec) -> (CellField, CellField) {
    let n = grid.nx * grid.ny;
    let phi = CellField::from_vec(grid, x[..n].to_vec()).unwrap();
    let mu = CellField::from_vec(grid, x[n..].to_vec()).unwrap();
    (phi, mu)
}

/// Stepper for the extended model; owns the solver caches and the assembled
/// system so repeated steps only rewrite values.
pub struct Stepper {
    pub params: PhysParams,
    pub embedding: EmbeddingField,
    pub bdata: BoundaryData,
    pub dt: f64,
    solver: LinearSolver,
    sys: Option<StepSystem>,
    warm: Option<Vec<f64>>,
}

impl Stepper {
    pub fn new(
        params: PhysParams,
        embedding: EmbeddingField,
        bdata: BoundaryData,
        dt: f64,
        options: SolverOptions,
    ) -> Result<Self> {
        params.validate()?;
        if !(dt > 0.0) {
            return Err(Error::Param(format!("dt must be > 0 (got {dt})")));
        }
        Ok(Self {
            params,
            embedding,
            bdata,
            dt,
            solver: LinearSolver::new(options)?,
            sys: None,
            warm: None,
        })
    }

    /// Advance one step, returning the new state, solver statistics, and the
    /// energy-law audit.
    pub fn step(&mut self, state: &SimState) -> Result<(SimState, StepReport, StepAudit)> {
        let grid = state.phi.grid;
        let n = grid.n_cells();
        let ex = extrapolate(state, &self.params);
        if self.sys.is_none() {
            self.sys = Some(build_pattern(&grid));
        }
        let sys = self.sys.as_mut().unwrap();
        assemble_values(
            sys,
            state,
            &self.params,
            &self.embedding,
            &self.bdata,
            self.dt,
            &ex,
        )?;

        let warm = self.warm.get_or_insert_with(|| {
            let mut w = vec![0.0; 2 * n];
            w[..n].copy_from_slice(state.phi.as_slice());
            w
        });
        let (x, stats) = self
            .solver
            .solve_coupled(&sys.matrix, &sys.rhs, n, Some(warm))?;
        self.warm = Some(x.clone());

        let (phi_next, mu_half) = split_solution(&x, &grid);
        let q_next = update_q(state, &phi_next, &ex.g_bar);

        let audit = self.audit(state, &phi_next, &q_next, &mu_half);
        let next = SimState {
            n: state.n + 1,
            t: state.t + self.dt,
            phi: phi_next,
            q: q_next,
            phi_prev: Some(state.phi.clone()),
        };
        let report = StepReport {
            residual: stats.residual,
            iterations: stats.iterations,
            wall_seconds: stats.wall_seconds,
            g_floor_activations: ex.floor_count,
        };
        Ok((next, report, audit))
    }

    /// Evaluate the discrete energy law for the step `state -> next`.
    fn audit(
        &self,
        state: &SimState,
        phi_next: &CellField,
        q_next: &CellField,
        mu_half: &CellField,
    ) -> StepAudit {
        let grid = state.phi.grid;
        let f_prev = discrete_energy(
            &state.phi,
            &state.q,
            &self.embedding,
            &self.params,
            &self.bdata,
        );
        let f_next = discrete_energy(phi_next, q_next, &self.embedding, &self.params, &self.bdata);

        // mobility-weighted dissipation of chi mu over faces
        let chimu = CellField::from_vec(
            &grid,
            embedding_product(&self.embedding.chi, mu_half),
        )
        .unwrap();
        let apx = crate::grid::avg_x(&self.embedding.psi);
        let apy = crate::grid::avg_y(&self.embedding.psi);
        let dmx = crate::grid::diff_x(&chimu);
        let dmy = crate::grid::diff_y(&chimu);
        let mut diss = 0.0;
        for j in 0..grid.ny {
            for i in 0..=grid.nx {
                diss += self.params.mobility * apx.at(i, j) * dmx.at(i, j) * dmx.at(i, j);
            }
        }
        for j in 0..=grid.ny {
            for i in 0..grid.nx {
                diss += self.params.mobility * apy.at(i, j) * dmy.at(i, j) * dmy.at(i, j);
            }
        }
        diss *= grid.cell_area();

        // boundary relaxation dissipation: |D psi| gamma_inv (A dphi/dt)^2
        let mut gdiss = 0.0;
        if self.params.gamma_inv > 0.0 {
            let dphi = CellField::from_vec(
                &grid,
                phi_next
                    .as_slice()
                    .iter()
                    .zip(state.phi.as_slice())
                    .map(|(a, b)| (a - b) / self.dt)
                    .collect(),
            )
            .unwrap();
            let ax = crate::grid::avg_x(&dphi);
            let ay = crate::grid::avg_y(&dphi);
            let gpa = &self.embedding.grad_psi_abs;
            for j in 0..grid.ny {
                for i in 0..=grid.nx {
                    gdiss += gpa.x.at(i, j) * ax.at(i, j) * ax.at(i, j);
                }
            }
            for j in 0..=grid.ny {
                for i in 0..grid.nx {
                    gdiss += gpa.y.at(i, j) * ay.at(i, j) * ay.at(i, j);
                }
            }
            gdiss *= self.params.gamma_inv * grid.cell_area();
        }

        let pumped = pumped_power(
            mu_half,
            &self.embedding.chi,
            &self.embedding.grad_psi_abs,
            &self.bdata.h3,
        );

        let lhs = (f_next - f_prev) / self.dt;
        let energy_residual = (lhs + diss + gdiss + pumped).abs();
        StepAudit {
            f_prev,
            f_next,
            dissipation: diss,
            gamma_dissipation: gdiss,
            pumped_power: pumped,
            energy_residual,
        }
    }

    pub fn energy(&self, state: &SimState) -> f64 {
        discrete_energy(
            &state.phi,
            &state.q,
            &self.embedding,
            &self.params,
            &self.bdata,
        )
    }

    pub fn volume(&self, state: &SimState) -> Result<f64> {
        discrete_volume(&state.phi, &self.embedding.psi)
    }
}

fn embedding_product(a: &CellField, b: &CellField) -> Vec<f64> {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x * y)
        .collect()
}

/// Any model that can advance a state and report its invariants; lets the
/// diagnostics loop drive both the extended and the reference solvers.
pub trait TimeStepper {
    fn advance(&mut self, state: &SimState) -> Result<(SimState, StepReport, StepAudit)>;
    fn energy_of(&self, state: &SimState) -> f64;
    fn volume_of(&self, state: &SimState) -> f64;
}

impl TimeStepper for Stepper {
    fn advance(&mut self, state: &SimState) -> Result<(SimState, StepReport, StepAudit)> {
        self.step(state)
    }

    fn energy_of(&self, state: &SimState) -> f64 {
        self.energy(state)
    }

    fn volume_of(&self, state: &SimState) -> f64 {
        self.volume(state).expect("embedding bound to state grid")
    }
}

/// One diagnostics row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRecord {
    pub step: usize,
    pub t: f64,
    pub energy: f64,
    pub volume: f64,
    pub volume_drift: f64,
    pub energy_law_residual: f64,
    pub pumped_power: f64,
    pub solver_iterations: usize,
    pub solver_residual: f64,
}

/// Drive a stepper for `n_steps`, emitting a record every
/// `diagnostics_every` steps (and at step 0). The sink also receives the
/// state so callers can write snapshots.
pub fn run<S: TimeStepper>(
    stepper: &mut S,
    state0: SimState,
    n_steps: usize,
    diagnostics_every: usize,
    mut sink: impl FnMut(&DiagnosticsRecord, &SimState),
) -> Result<SimState> {
    let every = diagnostics_every.max(1);
    let volume0 = stepper.volume_of(&state0);
    let rec0 = DiagnosticsRecord {
        step: state0.n,
        t: state0.t,
        energy: stepper.energy_of(&state0),
        volume: volume0,
        volume_drift: 0.0,
        energy_law_residual: 0.0,
        pumped_power: 0.0,
        solver_iterations: 0,
        solver_residual: 0.0,
    };
    sink(&rec0, &state0);

    let mut state = state0;
    for _ in 0..n_steps {
        let (next, report, audit) = stepper.advance(&state)?;
        state = next;
        if state.n % every == 0 || state.n == rec0.step + n_steps {
            let volume = stepper.volume_of(&state);
            let rec = DiagnosticsRecord {
                step: state.n,
                t: state.t,
                energy: audit.f_next,
                volume,
                volume_drift: volume - volume0,
                energy_law_residual: audit.energy_residual,
                pumped_power: audit.pumped_power,
                solver_iterations: report.iterations,
                solver_residual: report.residual,
            };
            sink(&rec, &state);
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_chi, build_grad_psi_abs, psi_profile};
    use crate::model::{q_init, Potential};
    use crate::solver::SolverMethod;

    fn params() -> PhysParams {
        PhysParams {
            k: 1e-4,
            mobility: 0.01,
            gamma_inv: 0.0,
            alpha: 0.0,
            a_shift: 0.0,
            eps: 0.01,
            potential: Potential::QuarticDoubleWell,
        }
    }

    fn lcg(s: &mut u64) -> f64 {
        *s = s
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((*s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    fn rand_field(grid: &GridSpec, seed: u64) -> CellField {
        let mut s = seed;
        CellField::from_fn(grid, |_, _| lcg(&mut s))
    }

    fn embedding_from_psi(psi: CellField) -> EmbeddingField {
        EmbeddingField {
            chi: build_chi(&psi),
            grad_psi_abs: build_grad_psi_abs(&psi),
            psi,
        }
    }

    #[test]
    fn extrapolation_rules() {
        let g = GridSpec::centered(1.0, 1.0, 3, 3).unwrap();
        let p = params();
        // n = 0 falls back to g(phi^0)
        let phi = CellField::constant(&g, 0.5);
        let state = SimState::init(phi.clone(), &p).unwrap();
        let ex = extrapolate(&state, &p);
        let mut cnt = 0;
        let want = g_field(&phi, &p, &mut cnt);
        assert_eq!(ex.g_bar.as_slice(), want.as_slice());
        assert_eq!(ex.m_bar, p.mobility);

        // n = 1 with phi^n mapping to g = 2 and phi^{n-1} to g = 1 gives 2.5
        // (checked on the raw extrapolation arithmetic).
        let a = 1.5f64 * 2.0 - 0.5 * 1.0;
        assert_eq!(a, 2.5);
        let state1 = SimState {
            n: 1,
            t: 0.0,
            phi: CellField::constant(&g, 0.3),
            q: CellField::zeros(&g),
            phi_prev: Some(CellField::constant(&g, 0.3)),
        };
        let ex1 = extrapolate(&state1, &p);
        // constant history: extrapolation of a constant is that constant
        let (gv, _) = crate::model::g_eval(0.3, &p);
        for v in ex1.g_bar.as_slice() {
            assert!((v - gv).abs() < 1e-15);
        }
    }

    #[test]
    fn update_q_arithmetic() {
        let g = GridSpec::centered(1.0, 1.0, 2, 2).unwrap();
        let state = SimState {
            n: 0,
            t: 0.0,
            phi: CellField::constant(&g, 0.0),
            q: CellField::constant(&g, 1.0),
            phi_prev: None,
        };
        let phi_next = CellField::constant(&g, 0.1);
        let gbar = CellField::constant(&g, 2.0);
        let q = update_q(&state, &phi_next, &gbar);
        assert!(q.as_slice().iter().all(|v| (v - 1.2).abs() < 1e-15));
        // no motion or zero gbar leave q unchanged
        let q2 = update_q(&state, &state.phi.clone(), &gbar);
        assert_eq!(q2.as_slice(), state.q.as_slice());
    }

    #[test]
    fn pattern_is_five_point_per_block() {
        let g = GridSpec::centered(1.0, 1.0, 4, 3).unwrap();
        let sys = build_pattern(&g);
        let n = g.n_cells();
        assert_eq!(sys.matrix.nrows, 2 * n);
        for j in 0..g.ny {
            for i in 0..g.nx {
                let c = g.idx(i, j);
                let nbrs: Vec<usize> = NBR
                    .iter()
                    .filter_map(|d| neighbor(&g, i, j, *d))
                    .collect();
                // row block 1: u diagonal + m at c and neighbors
                let cols: Vec<usize> =
                    sys.matrix.indices[sys.matrix.indptr[c]..sys.matrix.indptr[c + 1]].to_vec();
                assert!(cols.contains(&c));
                assert!(cols.contains(&(n + c)));
                for nb in &nbrs {
                    assert!(cols.contains(&(n + nb)));
                }
                assert_eq!(cols.len(), 2 + nbrs.len());
                // row block 2: m diagonal + u at c and neighbors
                let r2 = n + c;
                let cols: Vec<usize> =
                    sys.matrix.indices[sys.matrix.indptr[r2]..sys.matrix.indptr[r2 + 1]].to_vec();
                assert!(cols.contains(&(n + c)));
                assert!(cols.contains(&c));
                assert_eq!(cols.len(), 2 + nbrs.len());
            }
        }
    }

    /// Dense assembly oracle: an independent, cell-by-cell translation of the
    /// update equations with clamped ghost indices, kept free of the solver
    /// code paths on purpose.
    fn dense_oracle(
        state: &SimState,
        p: &PhysParams,
        emb: &EmbeddingField,
        bd: &BoundaryData,
        dt: f64,
    ) -> (Vec<Vec<f64>>, Vec<f64>) {
        let g = state.phi.grid;
        let (nx, ny) = (g.nx as i64, g.ny as i64);
        let n = (nx * ny) as usize;
        let at = |f: &CellField, i: i64, j: i64| {
            f.at(i.clamp(0, nx - 1) as usize, j.clamp(0, ny - 1) as usize)
        };
        let idx = |i: i64, j: i64| (j * nx + i) as usize;
        let mut dense = vec![vec![0.0; 2 * n]; 2 * n];
        let mut rhs = vec![0.0; 2 * n];
        let mut cnt = 0;
        let gb = {
            let gnow = g_field(&state.phi, p, &mut cnt);
            match &state.phi_prev {
                Some(prev) if state.n >= 1 => {
                    let gold = g_field(prev, p, &mut cnt);
                    CellField::from_vec(
                        &g,
                        gnow.as_slice()
                            .iter()
                            .zip(gold.as_slice())
                            .map(|(a, b)| 1.5 * a - 0.5 * b)
                            .collect(),
                    )
                    .unwrap()
                }
                _ => gnow,
            }
        };
        let e_u = 0.5 * p.alpha + p.gamma_inv / dt;
        let dirs = [(-1i64, 0i64, g.dx), (1, 0, g.dx), (0, -1, g.dy), (0, 1, g.dy)];
        for j in 0..ny {
            for i in 0..nx {
                let c = idx(i, j);
                // transport row
                dense[c][c] += 1.0 / dt;
                let mut s3 = 0.0;
                for (di, dj, dd) in dirs {
                    let (ni, nj) = (i + di, j + dj);
                    let w_m = p.mobility * 0.5 * (at(&emb.psi, i, j) + at(&emb.psi, ni, nj))
                        / (dd * dd);
                    let in_range = ni >= 0 && ni < nx && nj >= 0 && nj < ny;
                    if in_range {
                        // flux coupling chi m between neighbor and cell
                        dense[c][n + idx(ni, nj)] -=
                            at(&emb.chi, i, j) * w_m * at(&emb.chi, ni, nj);
                        dense[c][n + c] += at(&emb.chi, i, j) * w_m * at(&emb.chi, i, j);
                    }
                    let wpsi = ((at(&emb.psi, ni, nj) - at(&emb.psi, i, j)) / dd).abs();
                    s3 += 0.5 * wpsi * 0.5 * (at(&bd.h3, ni, nj) + at(&bd.h3, i, j));
                }
                rhs[c] = at(&state.phi, i, j) / dt - at(&emb.chi, i, j) * s3;

                // potential row
                let r = n + c;
                dense[r][n + c] += 1.0;
                let gv = at(&gb, i, j);
                dense[r][c] += -0.5 * at(&emb.psi, i, j) * gv * gv;
                rhs[r] = at(&emb.psi, i, j) * gv * at(&state.q, i, j)
                    - 0.5 * at(&emb.psi, i, j) * gv * gv * at(&state.phi, i, j);
                for (di, dj, dd) in dirs {
                    let (ni, nj) = (i + di, j + dj);
                    let in_range = ni >= 0 && ni < nx && nj >= 0 && nj < ny;
                    if !in_range {
                        continue; // mirror ghosts: zero difference, zero |D psi|
                    }
                    let v = 0.5 * (at(&emb.psi, i, j) + at(&emb.psi, ni, nj)) / (dd * dd);
                    let w = ((at(&emb.psi, ni, nj) - at(&emb.psi, i, j)) / dd).abs();
                    dense[r][idx(ni, nj)] += 0.5 * p.k * v - 0.25 * e_u * w;
                    dense[r][c] += -0.5 * p.k * v - 0.25 * e_u * w;
                    rhs[r] += -0.5 * p.k * v * (at(&state.phi, ni, nj) - at(&state.phi, i, j));
                    let e0 = |ii: i64, jj: i64| {
                        p.alpha * (0.5 * at(&state.phi, ii, jj) - at(&bd.h1, ii, jj))
                            - at(&bd.h2, ii, jj)
                            - p.gamma_inv * at(&state.phi, ii, jj) / dt
                    };
                    rhs[r] += 0.5 * w * 0.5 * (e0(i, j) + e0(ni, nj));
                }
            }
        }
        (dense, rhs)
    }

    #[test]
    fn assembly_matches_dense_oracle() {
        let g = GridSpec::centered(1.0, 1.0, 4, 4).unwrap();
        let mut p = params();
        p.alpha = 0.8;
        p.gamma_inv = 0.1;
        p.a_shift = 0.2;
        let mut s = 5u64;
        let psi = CellField::from_fn(&g, |_, _| 0.05 + 0.9 * (0.5 + 0.5 * lcg(&mut s)));
        let emb = embedding_from_psi(psi);
        let phi = rand_field(&g, 6);
        let q = q_init(&phi, &p).unwrap();
        let bd = BoundaryData {
            h1: rand_field(&g, 7),
            h2: rand_field(&g, 8),
            h3: rand_field(&g, 9),
        };
        let state = SimState {
            n: 1,
            t: 0.0,
            phi: phi.clone(),
            q,
            phi_prev: Some(rand_field(&g, 10)),
        };
        let dt = 1e-3;
        let sys = assemble(&state, &p, &emb, &bd, dt).unwrap();
        let (dense, rhs) = dense_oracle(&state, &p, &emb, &bd, dt);
        let tot = 2 * g.n_cells();
        for r in 0..tot {
            for c in 0..tot {
                let got = sys.matrix.get(r, c);
                let want = dense[r][c];
                assert!(
                    (got - want).abs() <= 1e-9 * (1.0 + want.abs()),
                    "entry ({r},{c}): {got} vs {want}"
                );
            }
            assert!(
                (sys.rhs[r] - rhs[r]).abs() <= 1e-12 * (1.0 + rhs[r].abs()),
                "rhs {r}: {} vs {}",
                sys.rhs[r],
                rhs[r]
            );
        }
    }

    #[test]
    fn transport_rows_conserve_reciprocal_chi_weighted_content() {
        // Weighting row block 1 by 1/chi must kill every mu* column exactly
        // (discrete divergence theorem); with the regularized chi the psi
        // weighting does the same up to the 1e-6 floor.
        let g = GridSpec::centered(1.0, 1.0, 4, 4).unwrap();
        let p = params();
        let mut s = 15u64;
        let psi = CellField::from_fn(&g, |_, _| 0.01 + 0.98 * (0.5 + 0.5 * lcg(&mut s)));
        let emb = embedding_from_psi(psi);
        let phi = rand_field(&g, 16);
        let state = SimState::init(phi, &p).unwrap();
        let sys = assemble(&state, &p, &emb, &BoundaryData::zeros(&g), 1e-4).unwrap();
        let n = g.n_cells();
        let mut col_sums = vec![0.0; n];
        let mut scale = vec![0.0; n];
        for r in 0..n {
            let inv_chi = 1.0 / emb.chi.as_slice()[r];
            for k in sys.matrix.indptr[r]..sys.matrix.indptr[r + 1] {
                let c = sys.matrix.indices[k];
                if c >= n {
                    col_sums[c - n] += inv_chi * sys.matrix.vals[k];
                    scale[c - n] += (inv_chi * sys.matrix.vals[k]).abs();
                }
            }
        }
        for (cs, sc) in col_sums.iter().zip(&scale) {
            assert!(cs.abs() <= 1e-12 * (1.0 + sc), "column sum {cs} (scale {sc})");
        }
    }

    fn stepper(
        p: PhysParams,
        emb: EmbeddingField,
        bd: BoundaryData,
        dt: f64,
        method: SolverMethod,
    ) -> Stepper {
        Stepper::new(
            p,
            emb,
            bd,
            dt,
            SolverOptions {
                method,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn uniform_critical_point_is_stationary() {
        // phi = 0 with all boundary drivers off solves to phi' = 0, mu = 0.
        let g = GridSpec::centered(1.0, 1.0, 6, 6).unwrap();
        let p = params();
        let emb = EmbeddingField::uniform(&g);
        let bd = BoundaryData::zeros(&g);
        let state = SimState::init(CellField::zeros(&g), &p).unwrap();
        let sys = assemble(&state, &p, &emb, &bd, 1e-4).unwrap();
        // the zero vector solves it: rhs of row 1 is 0/dt = 0, row 2 is 0
        assert!(sys.rhs.iter().all(|v| v.abs() < 1e-14));

        let mut st = stepper(p, emb, bd, 1e-4, SolverMethod::Direct);
        let (next, _, _) = st.step(&state).unwrap();
        for v in next.phi.as_slice() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_equilibrium_stays_put() {
        let g = GridSpec::centered(1.0, 1.0, 6, 6).unwrap();
        let p = params();
        let psi = CellField::from_fn(&g, |x, _| psi_profile(x, 0.1));
        let emb = embedding_from_psi(psi);
        let bd = BoundaryData::zeros(&g);
        let state = SimState::init(CellField::constant(&g, 1.0), &p).unwrap();
        let mut st = stepper(p, emb, bd, 1e-3, SolverMethod::Direct);
        let (next, _, _) = st.step(&state).unwrap();
        for v in next.phi.as_slice() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn energy_decays_and_law_holds_on_embedded_coarsening_step() {
        let g = GridSpec::centered(1.25, 1.25, 16, 16).unwrap();
        let p = params();
        let shape = crate::geometry::ShapeSpec::FullRectangle(crate::geometry::Rect {
            x_min: -0.5,
            x_max: 0.5,
            y_min: -0.5,
            y_max: 0.5,
        });
        let emb = EmbeddingField::build(&shape, &g, 0.05).unwrap();
        let bd = BoundaryData::zeros(&g);
        let mut s = 77u64;
        let phi0 = CellField::from_vec(
            &g,
            emb.psi
                .as_slice()
                .iter()
                .map(|psi| 0.001 * lcg(&mut s) * psi)
                .collect(),
        )
        .unwrap();
        let state = SimState::init(phi0, &p).unwrap();
        let mut st = stepper(p, emb, bd, 1e-4, SolverMethod::Direct);
        let mut cur = state;
        let mut last_energy = st.energy(&cur);
        let vol0 = st.volume(&cur).unwrap();
        for _ in 0..5 {
            let (next, _, audit) = st.step(&cur).unwrap();
            assert!(
                audit.f_next <= last_energy + 1e-12,
                "energy rose: {} -> {}",
                last_energy,
                audit.f_next
            );
            assert!(
                audit.energy_residual <= 1e-7 * audit.f_prev.abs().max(1.0),
                "law residual {}",
                audit.energy_residual
            );
            last_energy = audit.f_next;
            cur = next;
        }
        let vol = st.volume(&cur).unwrap();
        assert!((vol - vol0).abs() < 1e-9, "volume drift {}", vol - vol0);
    }

    #[test]
    fn second_order_self_convergence() {
        // Richardson ratio on a smooth closed test: |phi_dt - phi_dt/2| over
        // |phi_dt/2 - phi_dt/4| should approach 4.
        let g = GridSpec::centered(1.0, 1.0, 16, 16).unwrap();
        let p = params();
        let emb = EmbeddingField::uniform(&g);
        let bd = BoundaryData::zeros(&g);
        let phi0 = CellField::from_fn(&g, |x, y| {
            0.1 * (std::f64::consts::TAU * x).cos() * (std::f64::consts::TAU * y).cos()
        });
        let t_final = 4e-3;
        let mut results = Vec::new();
        for steps in [4usize, 8, 16] {
            let dt = t_final / steps as f64;
            let mut st = stepper(p, emb.clone(), bd.clone(), dt, SolverMethod::Direct);
            let mut cur = SimState::init(phi0.clone(), &p).unwrap();
            for _ in 0..steps {
                let (next, _, _) = st.step(&cur).unwrap();
                cur = next;
            }
            results.push(cur.phi);
        }
        let d01: f64 = results[0]
            .as_slice()
            .iter()
            .zip(results[1].as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let d12: f64 = results[1]
            .as_slice()
            .iter()
            .zip(results[2].as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let ratio = d01 / d12;
        assert!((ratio - 4.0).abs() < 1.0, "Richardson ratio {ratio}");
    }

    #[test]
    fn krylov_and_direct_agree_on_a_step() {
        let g = GridSpec::centered(1.25, 1.25, 12, 12).unwrap();
        let p = params();
        let shape = crate::geometry::ShapeSpec::FullRectangle(crate::geometry::Rect {
            x_min: -0.4,
            x_max: 0.4,
            y_min: -0.4,
            y_max: 0.4,
        });
        let emb = EmbeddingField::build(&shape, &g, 0.08).unwrap();
        let bd = BoundaryData::zeros(&g);
        let mut s = 123u64;
        let phi0 = CellField::from_vec(
            &g,
            emb.psi.as_slice().iter().map(|psi| 0.3 * lcg(&mut s) * psi).collect(),
        )
        .unwrap();
        let state = SimState::init(phi0, &p).unwrap();
        let mut sd = stepper(p, emb.clone(), bd.clone(), 1e-4, SolverMethod::Direct);
        let mut sk = stepper(p, emb, bd, 1e-4, SolverMethod::Krylov);
        let (nd, _, _) = sd.step(&state).unwrap();
        let (nk, _, _) = sk.step(&state).unwrap();
        for (a, b) in nd.phi.as_slice().iter().zip(nk.phi.as_slice()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn run_emits_initial_record_for_zero_steps() {
        let g = GridSpec::centered(1.0, 1.0, 4, 4).unwrap();
        let p = params();
        let emb = EmbeddingField::uniform(&g);
        let bd = BoundaryData::zeros(&g);
        let state = SimState::init(CellField::zeros(&g), &p).unwrap();
        let mut st = stepper(p, emb, bd, 1e-4, SolverMethod::Direct);
        let mut records = Vec::new();
        run(&mut st, state, 0, 1, |rec, _| records.push(*rec)).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].step, 0);
        assert!((records[0].energy - 0.25).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_dt() {
        let g = GridSpec::centered(1.0, 1.0, 4, 4).unwrap();
        let p = params();
        let state = SimState::init(CellField::zeros(&g), &p).unwrap();
        let emb = EmbeddingField::uniform(&g);
        let bd = BoundaryData::zeros(&g);
        assert!(assemble(&state, &p, &emb, &bd, 0.0).is_err());
        assert!(assemble(&state, &p, &emb, &bd, -1.0).is_err());
    }
}
