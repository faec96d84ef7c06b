//! Physics layer: bulk potential, the quadratized auxiliary variable, the
//! discrete free energy and volume, and the boundary-flux power term.
//!
//! The auxiliary variable is `q = sqrt(2 f(phi) + 2 A)` with
//! `g = dq/dphi = f'(phi) / sqrt(2 f(phi) + 2 A)`, which renders the
//! potential quadratic and the time scheme linear.
//!
//! The discrete free energy implemented here is the quantity whose increment
//! telescopes exactly under the scheme's update equations:
//!
//! ```text
//! F^n = dx dy { sum_ij psi * q^2 / 2
//!             + K/2 [ sum_xfaces A_x(psi) (D_x phi)^2 + y-faces ]
//!             + sum_faces |D psi| [ alpha/2 (A phi - A h1)^2 - A h2 * A phi ] }
//! ```
//!
//! The `q^2 / 2` weight (rather than `q^2`) is forced by the update algebra:
//! pairing the q-update with `psi q^{n+1/2}` telescopes
//! `psi (q^{n+1})^2/2 - psi (q^n)^2/2` per step, and only this form makes the
//! discrete energy law an exact identity and the decay unconditionally
//! monotone. At initialization `q^2/2 = f + A`, so energy differences are
//! independent of the shift `A`.

use crate::error::{Error, Result};
use crate::geometry::EmbeddingField;
use crate::grid::{avg_x, avg_y, diff_x, diff_y, CellField, FaceField, GridSpec};

/// Denominator floor in `g`; with `A = 0` the denominator vanishes at the
/// potential minima.
pub const G_FLOOR: f64 = 1e-12;

/// Bulk free energy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Potential {
    /// `f(phi) = (phi^2 - 1)^2 / 4`
    QuarticDoubleWell,
}

impl Potential {
    #[inline]
    pub fn f(&self, phi: f64) -> f64 {
        match self {
            Potential::QuarticDoubleWell => {
                let s = phi * phi - 1.0;
                0.25 * s * s
            }
        }
    }

    #[inline]
    pub fn f_prime(&self, phi: f64) -> f64 {
        match self {
            Potential::QuarticDoubleWell => phi * phi * phi - phi,
        }
    }
}

/// Model constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysParams {
    /// Gradient-energy coefficient `K > 0`.
    pub k: f64,
    /// Bulk mobility `M > 0`.
    pub mobility: f64,
    /// Reciprocal boundary rate `1 / Gamma`; zero encodes instant relaxation.
    pub gamma_inv: f64,
    /// Boundary energy coefficient `alpha >= 0`.
    pub alpha: f64,
    /// Quadratization shift `A >= 0`.
    pub a_shift: f64,
    /// Interface width of the embedding profile.
    pub eps: f64,
    pub potential: Potential,
}

impl PhysParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) {
            return Err(Error::Param(format!("K must be > 0 (got {})", self.k)));
        }
        if !(self.mobility > 0.0) {
            return Err(Error::Param(format!("M must be > 0 (got {})", self.mobility)));
        }
        if !(self.gamma_inv >= 0.0) {
            return Err(Error::Param(format!(
                "gamma_inv must be >= 0 (got {})",
                self.gamma_inv
            )));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Param(format!("alpha must be >= 0 (got {})", self.alpha)));
        }
        if !(self.a_shift >= 0.0) {
            return Err(Error::Param(format!("A must be >= 0 (got {})", self.a_shift)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Param(format!("eps must be > 0 (got {})", self.eps)));
        }
        Ok(())
    }
}

/// Boundary data extended into the domain, constant along normals.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData {
    pub h1: CellField,
    pub h2: CellField,
    pub h3: CellField,
}

impl BoundaryData {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            h1: CellField::zeros(grid),
            h2: CellField::zeros(grid),
            h3: CellField::zeros(grid),
        }
    }

    pub fn all_zero_h3(&self) -> bool {
        self.h3.as_slice().iter().all(|v| *v == 0.0)
    }
}

/// Time level of the simulation: `phi_prev` is kept for the second-order
/// extrapolation and is present from the second step on.
#[derive(Debug, Clone)]
pub struct SimState {
    pub n: usize,
    pub t: f64,
    pub phi: CellField,
    pub q: CellField,
    pub phi_prev: Option<CellField>,
}

impl SimState {
    /// Initial state with `q` evaluated exactly from `phi`.
    pub fn init(phi: CellField, params: &PhysParams) -> Result<Self> {
        let q = q_init(&phi, params)?;
        Ok(Self {
            n: 0,
            t: 0.0,
            phi,
            q,
            phi_prev: None,
        })
    }
}

/// `q = sqrt(2 f(phi) + 2 A)` cell by cell.
pub fn q_init(phi: &CellField, params: &PhysParams) -> Result<CellField> {
    let g = phi.grid;
    let mut out = CellField::zeros(&g);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let rad = 2.0 * params.potential.f(phi.at(i, j)) + 2.0 * params.a_shift;
            if rad < 0.0 {
                return Err(Error::Param(format!(
                    "2f + 2A = {rad} < 0 at cell ({i}, {j}); increase A"
                )));
            }
            out.set(i, j, rad.sqrt());
        }
    }
    Ok(out)
}

/// `g = f'(phi) / sqrt(2 f + 2 A)` with the denominator floored at `G_FLOOR`.
/// Returns the value and whether the floor was active.
#[inline]
pub fn g_eval(phi: f64, params: &PhysParams) -> (f64, bool) {
    let rad = 2.0 * params.potential.f(phi) + 2.0 * params.a_shift;
    let den = rad.max(0.0).sqrt();
    if den < G_FLOOR {
        (params.potential.f_prime(phi) / G_FLOOR, true)
    } else {
        (params.potential.f_prime(phi) / den, false)
    }
}

/// Sample `g` over a field, counting floor activations.
pub fn g_field(phi: &CellField, params: &PhysParams, floor_count: &mut u64) -> CellField {
    let g = phi.grid;
    let mut out = CellField::zeros(&g);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let (v, floored) = g_eval(phi.at(i, j), params);
            if floored {
                *floor_count += 1;
            }
            out.set(i, j, v);
        }
    }
    out
}

/// The discrete free energy (see module docs for the exact formula and for
/// why the q-term carries the 1/2).
pub fn discrete_energy(
    phi: &CellField,
    q: &CellField,
    embedding: &EmbeddingField,
    params: &PhysParams,
    bdata: &BoundaryData,
) -> f64 {
    let g = phi.grid;
    let mut sum = 0.0;

    // psi q^2 / 2 over cells
    for (p, qv) in embedding.psi.as_slice().iter().zip(q.as_slice()) {
        sum += p * qv * qv * 0.5;
    }

    // K/2 * A(psi) (D phi)^2 over faces; boundary faces vanish (D phi = 0).
    let apx = avg_x(&embedding.psi);
    let apy = avg_y(&embedding.psi);
    let dpx = diff_x(phi);
    let dpy = diff_y(phi);
    let mut grad = 0.0;
    for j in 0..g.ny {
        for i in 0..=g.nx {
            grad += apx.at(i, j) * dpx.at(i, j) * dpx.at(i, j);
        }
    }
    for j in 0..=g.ny {
        for i in 0..g.nx {
            grad += apy.at(i, j) * dpy.at(i, j) * dpy.at(i, j);
        }
    }
    sum += 0.5 * params.k * grad;

    // |D psi| weighted boundary energy over faces, with the face values of
    // phi, h1, h2 given by the same averages the scheme uses.
    sum += boundary_energy_sum(phi, embedding, params, bdata);

    g.cell_area() * sum
}

fn boundary_energy_sum(
    phi: &CellField,
    embedding: &EmbeddingField,
    params: &PhysParams,
    bdata: &BoundaryData,
) -> f64 {
    let g = phi.grid;
    let gpa = &embedding.grad_psi_abs;
    let fx = avg_x(phi);
    let fy = avg_y(phi);
    let h1x = avg_x(&bdata.h1);
    let h1y = avg_y(&bdata.h1);
    let h2x = avg_x(&bdata.h2);
    let h2y = avg_y(&bdata.h2);
    let mut sum = 0.0;
    for j in 0..g.ny {
        for i in 0..=g.nx {
            let w = gpa.x.at(i, j);
            if w != 0.0 {
                let d = fx.at(i, j) - h1x.at(i, j);
                sum += w * (0.5 * params.alpha * d * d - h2x.at(i, j) * fx.at(i, j));
            }
        }
    }
    for j in 0..=g.ny {
        for i in 0..g.nx {
            let w = gpa.y.at(i, j);
            if w != 0.0 {
                let d = fy.at(i, j) - h1y.at(i, j);
                sum += w * (0.5 * params.alpha * d * d - h2y.at(i, j) * fy.at(i, j));
            }
        }
    }
    sum
}

/// `(psi phi, 1)`: the conserved content of the embedded domain.
pub fn discrete_volume(phi: &CellField, psi: &CellField) -> Result<f64> {
    if phi.grid.nx != psi.grid.nx || phi.grid.ny != psi.grid.ny {
        return Err(Error::GridMismatch {
            expected: (psi.grid.nx, psi.grid.ny),
            got: (phi.grid.nx, phi.grid.ny),
        });
    }
    let s: f64 = phi
        .as_slice()
        .iter()
        .zip(psi.as_slice())
        .map(|(a, b)| a * b)
        .sum();
    Ok(phi.grid.cell_area() * s)
}

/// The per-cell boundary-flux density: half the four-face sum of
/// `|D psi| * A(h3)`. The transport equation subtracts `chi` times this, and
/// the energy law charges `mu* chi` times it.
pub fn boundary_flux_density(grad_psi_abs: &FaceField, h3: &CellField) -> CellField {
    let g = h3.grid;
    let h3x = avg_x(h3);
    let h3y = avg_y(h3);
    let mut out = CellField::zeros(&g);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let s = grad_psi_abs.x.at(i, j) * h3x.at(i, j)
                + grad_psi_abs.x.at(i + 1, j) * h3x.at(i + 1, j)
                + grad_psi_abs.y.at(i, j) * h3y.at(i, j)
                + grad_psi_abs.y.at(i, j + 1) * h3y.at(i, j + 1);
            out.set(i, j, 0.5 * s);
        }
    }
    out
}

/// Rate at which free energy leaves through the prescribed normal flux:
/// `dx dy * sum_ij mu*_ij chi_ij * (four-face |D psi| A(h3) sum) / 2`.
pub fn pumped_power(
    mu_star: &CellField,
    chi: &CellField,
    grad_psi_abs: &FaceField,
    h3: &CellField,
) -> f64 {
    let flux = boundary_flux_density(grad_psi_abs, h3);
    let g = mu_star.grid;
    let mut sum = 0.0;
    for ((m, c), s) in mu_star
        .as_slice()
        .iter()
        .zip(chi.as_slice())
        .zip(flux.as_slice())
    {
        sum += m * c * s;
    }
    g.cell_area() * sum
}
