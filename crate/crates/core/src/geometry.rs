//! Embedded-domain geometry: signed distances for a catalogue of shapes,
//! the smooth characteristic function `psi`, its regularized reciprocal
//! `chi`, and the face-sampled `|D psi|` magnitudes that stand in for the
//! boundary delta function.
//!
//! `psi` is the logistic profile of the signed distance,
//!
//! ```text
//! psi(x) = 1 / (exp(6 r(x) / eps) + 1),     r < 0 inside the domain,
//! ```
//!
//! and `chi = 1 / (psi + (1 - psi) * 1e-6)`, bounded by 1e6 so that cells
//! far outside the embedded domain stay numerically benign.

use crate::error::{Error, Result};
use crate::grid::{diff_x, diff_y, CellField, FaceField, GridSpec, XFaceField, YFaceField};


/// Floor weight in the `chi` regularization.
pub const CHI_REG: f64 = 1e-6;

/// Axis-aligned rectangle given by its corner intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    /// Signed distance to the rectangle boundary, negative inside.
    /// Exact everywhere (including outside corners).
    pub fn signed_distance(&self, x: f64, y: f64) -> f64 {
        let cx = 0.5 * (self.x_min + self.x_max);
        let cy = 0.5 * (self.y_min + self.y_max);
        let hx = 0.5 * (self.x_max - self.x_min);
        let hy = 0.5 * (self.y_max - self.y_min);
        let qx = (x - cx).abs() - hx;
        let qy = (y - cy).abs() - hy;
        let ox = qx.max(0.0);
        let oy = qy.max(0.0);
        let outside = (ox * ox + oy * oy).sqrt();
        let inside = qx.max(qy).min(0.0);
        outside + inside
    }
}

/// Circle used as a subtracted hole in CSG shapes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl Circle {
    pub fn signed_distance(&self, x: f64, y: f64) -> f64 {
        ((x - self.cx).powi(2) + (y - self.cy).powi(2)).sqrt() - self.r
    }
}

/// Half plane `a x + b y <= c` (kept side), used as a corner cut.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPlane {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl HalfPlane {
    /// Signed distance, negative where `a x + b y < c`.
    pub fn signed_distance(&self, x: f64, y: f64) -> f64 {
        (self.a * x + self.b * y - self.c) / (self.a * self.a + self.b * self.b).sqrt()
    }
}

/// Embedded-domain shape catalogue.
#[derive(Debug, Clone, PartialEq)]
pub enum ShapeSpec {
    /// The rectangle itself is the physical domain.
    FullRectangle(Rect),
    /// Everything above the horizontal line `y = y0`.
    HalfPlaneSubstrate { y0: f64 },
    /// Everything above `y = y0 + amplitude * cos(2 pi (x - x_peak) / wavelength)`,
    /// with the vertical distance used as the signed distance.
    SinusoidalSubstrate {
        y0: f64,
        amplitude: f64,
        wavelength: f64,
        x_peak: f64,
    },
    /// Rectangle minus circular holes minus half-plane corner cuts.
    CsgPolygon {
        rect: Rect,
        holes: Vec<Circle>,
        cuts: Vec<HalfPlane>,
    },
}

impl ShapeSpec {
    /// Substrate height under the droplet experiments, where defined.
    pub fn substrate_height(&self, x: f64) -> Option<f64> {
        match self {
            ShapeSpec::HalfPlaneSubstrate { y0 } => Some(*y0),
            ShapeSpec::SinusoidalSubstrate {
                y0,
                amplitude,
                wavelength,
                x_peak,
            } => Some(y0 + amplitude * (std::f64::consts::TAU * (x - x_peak) / wavelength).cos()),
            ShapeSpec::FullRectangle(r) => Some(r.y_min),
            ShapeSpec::CsgPolygon { .. } => None,
        }
    }
}

/// Signed distance from `(x, y)` to the shape boundary: negative inside the
/// physical domain, positive outside. CSG variants compose primitive
/// distances with max; the result is exact whenever the nearest feature is a
/// single primitive and approximate near re-entrant corners.
pub fn signed_distance(shape: &ShapeSpec, x: f64, y: f64) -> f64 {
    match shape {
        ShapeSpec::FullRectangle(r) => r.signed_distance(x, y),
        ShapeSpec::HalfPlaneSubstrate { y0 } => y0 - y,
        ShapeSpec::SinusoidalSubstrate { .. } => shape.substrate_height(x).unwrap() - y,
        ShapeSpec::CsgPolygon { rect, holes, cuts } => {
            let mut d = rect.signed_distance(x, y);
            for h in holes {
                d = d.max(-h.signed_distance(x, y));
            }
            // A corner cut keeps the half plane, so it composes as an
            // intersection.
            for c in cuts {
                d = d.max(c.signed_distance(x, y));
            }
            d
        }
    }
}

/// Nearest point on the shape boundary, found by projecting onto the
/// primitive that is active in the CSG composition at `(x, y)`.
/// Approximate near seams where two primitives are equally close.
pub fn nearest_boundary_point(shape: &ShapeSpec, x: f64, y: f64) -> (f64, f64) {
    match shape {
        ShapeSpec::HalfPlaneSubstrate { y0 } => (x, *y0),
        ShapeSpec::SinusoidalSubstrate { .. } => (x, shape.substrate_height(x).unwrap()),
        ShapeSpec::FullRectangle(r) => project_rect(r, x, y),
        ShapeSpec::CsgPolygon { rect, holes, cuts } => {
            let mut best = project_rect(rect, x, y);
            let mut active = rect.signed_distance(x, y);
            for h in holes {
                let d = -h.signed_distance(x, y);
                if d > active {
                    active = d;
                    let len = ((x - h.cx).powi(2) + (y - h.cy).powi(2)).sqrt().max(1e-300);
                    best = (h.cx + (x - h.cx) * h.r / len, h.cy + (y - h.cy) * h.r / len);
                }
            }
            for c in cuts {
                let d = c.signed_distance(x, y);
                if d > active {
                    active = d;
                    let norm2 = c.a * c.a + c.b * c.b;
                    let t = (c.a * x + c.b * y - c.c) / norm2;
                    best = (x - t * c.a, y - t * c.b);
                }
            }
            best
        }
    }
}

fn project_rect(r: &Rect, x: f64, y: f64) -> (f64, f64) {
    let inside = x > r.x_min && x < r.x_max && y > r.y_min && y < r.y_max;
    if inside {
        // Snap to the closest of the four edges.
        let cands = [
            (x - r.x_min, (r.x_min, y)),
            (r.x_max - x, (r.x_max, y)),
            (y - r.y_min, (x, r.y_min)),
            (r.y_max - y, (x, r.y_max)),
        ];
        cands
            .into_iter()
            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
            .unwrap()
            .1
    } else {
        (x.clamp(r.x_min, r.x_max), y.clamp(r.y_min, r.y_max))
    }
}

/// Evaluate `psi(r) = 1 / (exp(6 r / eps) + 1)`, saturating instead of
/// overflowing for large `|r| / eps`.
pub fn psi_profile(r: f64, eps: f64) -> f64 {
    let arg = 6.0 * r / eps;
    if arg > 700.0 {
        // exp would overflow; the profile has saturated to its asymptote.
        f64::MIN_POSITIVE
    } else {
        let v = 1.0 / (arg.exp() + 1.0);
        if v <= 0.0 {
            f64::MIN_POSITIVE
        } else {
            v.min(1.0)
        }
    }
}

/// Sample the smooth characteristic function on the grid.
pub fn build_psi(shape: &ShapeSpec, grid: &GridSpec, eps: f64) -> Result<CellField> {
    if !(eps > 0.0) {
        return Err(Error::Param(format!("eps must be > 0 (got {eps})")));
    }
    Ok(CellField::from_fn(grid, |x, y| {
        psi_profile(signed_distance(shape, x, y), eps)
    }))
}

/// Regularized reciprocal `chi = 1 / (psi + (1 - psi) * 1e-6)`.
pub fn build_chi(psi: &CellField) -> CellField {
    let mut chi = psi.clone();
    for v in chi.as_mut_slice() {
        *v = 1.0 / (*v + (1.0 - *v) * CHI_REG);
    }
    chi
}

/// Face magnitudes `|D_x psi|`, `|D_y psi|` with the mirror ghost closure;
/// these are the only representation of the boundary delta layer the scheme
/// ever sees.
pub fn build_grad_psi_abs(psi: &CellField) -> FaceField {
    let mut x = diff_x(psi);
    let g = x.grid;
    for j in 0..g.ny {
        for i in 0..=g.nx {
            x.set(i, j, x.at(i, j).abs());
        }
    }
    let mut y = diff_y(psi);
    for j in 0..=g.ny {
        for i in 0..g.nx {
            y.set(i, j, y.at(i, j).abs());
        }
    }
    FaceField { x, y }
}

/// Everything the extended solver needs to know about the embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingField {
    pub psi: CellField,
    pub chi: CellField,
    pub grad_psi_abs: FaceField,
}

impl EmbeddingField {
    pub fn build(shape: &ShapeSpec, grid: &GridSpec, eps: f64) -> Result<Self> {
        let psi = build_psi(shape, grid, eps)?;
        let chi = build_chi(&psi);
        let grad_psi_abs = build_grad_psi_abs(&psi);
        Ok(Self {
            psi,
            chi,
            grad_psi_abs,
        })
    }

    /// Degenerate embedding `psi = 1` everywhere: the extended model then
    /// collapses to the standard scheme on the full rectangle.
    pub fn uniform(grid: &GridSpec) -> Self {
        let psi = CellField::constant(grid, 1.0);
        let chi = build_chi(&psi);
        Self {
            grad_psi_abs: FaceField {
                x: XFaceField::zeros(grid),
                y: YFaceField::zeros(grid),
            },
            psi,
            chi,
        }
    }
}

/// Boundary datum: a constant, or a function evaluated at the nearest
/// boundary point (the constant-in-normal extension).
pub enum HSpec<'a> {
    Constant(f64),
    OnBoundary(&'a dyn Fn(f64, f64) -> f64),
}

/// Extend boundary data into the whole grid, constant along normals.
pub fn boundary_data_field(hspec: &HSpec, shape: &ShapeSpec, grid: &GridSpec) -> CellField {
    match hspec {
        HSpec::Constant(c) => CellField::constant(grid, *c),
        HSpec::OnBoundary(f) => CellField::from_fn(grid, |x, y| {
            let (bx, by) = nearest_boundary_point(shape, x, y);
            f(bx, by)
        }),
    }
}
