//! Cell-centered rectangular mesh and its discrete calculus.
//!
//! Scalar unknowns live at cell centers `x_i = x0 + (i + 1/2) dx`. Face
//! quantities are produced by the averaging and differencing operators
//!
//! ```text
//! A_x(f)_{i+1/2,j} = (f_{i+1,j} + f_{i,j}) / 2
//! D_x(f)_{i+1/2,j} = (f_{i+1,j} - f_{i,j}) / dx
//! ```
//!
//! and the weighted divergence composes them into the five-point operator
//! `D_h(a, b) = D_x[A_x(a) D_x(b)] + D_y[A_y(a) D_y(b)]`. Boundary faces are
//! closed with mirror ghost cells (the ghost copies the adjacent interior
//! cell), which makes every boundary difference vanish: the discrete form of
//! a homogeneous Neumann / no-flux condition.
//!
//! Interior cells use 0-based indices `(i, j)` with `i` in `0..nx`; this is
//! the 1-based `(i, j), i = 1..Nx` cell numbering shifted down by one.

use crate::error::{Error, Result};

/// Uniform cell-centered rectangular mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    /// Lower-left corner of the domain.
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
}

impl GridSpec {
    /// Mesh over `[-lx/2, lx/2] x [-ly/2, ly/2]`.
    pub fn centered(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self> {
        Self::with_origin(-0.5 * lx, -0.5 * ly, lx, ly, nx, ny)
    }

    /// Mesh over `[x0, x0 + lx] x [y0, y0 + ly]`.
    pub fn with_origin(x0: f64, y0: f64, lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::Param(format!("nx, ny must be >= 2 (got {nx}, {ny})")));
        }
        if !(lx > 0.0) || !(ly > 0.0) {
            return Err(Error::Param(format!("lx, ly must be > 0 (got {lx}, {ly})")));
        }
        Ok(Self {
            nx,
            ny,
            lx,
            ly,
            x0,
            y0,
            dx: lx / nx as f64,
            dy: ly / ny as f64,
        })
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    /// Flat index of cell `(i, j)`, row-major in `i`.
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    /// x coordinate of the cell center in column `i`.
    #[inline]
    pub fn xc(&self, i: usize) -> f64 {
        self.x0 + (i as f64 + 0.5) * self.dx
    }

    /// y coordinate of the cell center in row `j`.
    #[inline]
    pub fn yc(&self, j: usize) -> f64 {
        self.y0 + (j as f64 + 0.5) * self.dy
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    fn same_as(&self, other: &GridSpec) -> Result<()> {
        if self.nx != other.nx || self.ny != other.ny {
            return Err(Error::GridMismatch {
                expected: (self.nx, self.ny),
                got: (other.nx, other.ny),
            });
        }
        Ok(())
    }
}

/// Scalar field sampled at cell centers, bound to its grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    pub grid: GridSpec,
    data: Vec<f64>,
}

impl CellField {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            grid: *grid,
            data: vec![0.0; grid.n_cells()],
        }
    }

    pub fn constant(grid: &GridSpec, c: f64) -> Self {
        Self {
            grid: *grid,
            data: vec![c; grid.n_cells()],
        }
    }

    /// Sample `f(x, y)` at every cell center.
    pub fn from_fn(grid: &GridSpec, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.n_cells());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                data.push(f(grid.xc(i), grid.yc(j)));
            }
        }
        Self { grid: *grid, data }
    }

    pub fn from_vec(grid: &GridSpec, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.n_cells() {
            return Err(Error::GridMismatch {
                expected: (grid.nx, grid.ny),
                got: (data.len(), 1),
            });
        }
        Ok(Self { grid: *grid, data })
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[self.grid.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.grid.idx(i, j);
        self.data[k] = v;
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Mirror-ghost view of the field (Neumann closure on all four sides).
    pub fn extend_ghost_neumann(&self) -> GhostExtended<'_> {
        GhostExtended { field: self }
    }
}

/// Read-only view of a cell field extended by one ring of mirror ghosts:
/// a ghost cell copies the adjacent interior cell, so any difference taken
/// across a boundary face is exactly zero.
#[derive(Clone, Copy)]
pub struct GhostExtended<'a> {
    field: &'a CellField,
}

impl GhostExtended<'_> {
    /// Value at `(i, j)` where indices in `-1..=nx` (resp. ny) are allowed.
    #[inline]
    pub fn at(&self, i: isize, j: isize) -> f64 {
        let g = &self.field.grid;
        let ic = i.clamp(0, g.nx as isize - 1) as usize;
        let jc = j.clamp(0, g.ny as isize - 1) as usize;
        self.field.at(ic, jc)
    }
}

/// Values on vertical faces: `(nx + 1) * ny` entries, face `(i - 1/2, j)`
/// stored at `(i, j)` with `i` in `0..=nx`.
#[derive(Debug, Clone, PartialEq)]
pub struct XFaceField {
    pub grid: GridSpec,
    data: Vec<f64>,
}

impl XFaceField {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            grid: *grid,
            data: vec![0.0; (grid.nx + 1) * grid.ny],
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i <= self.grid.nx && j < self.grid.ny);
        self.data[j * (self.grid.nx + 1) + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * (self.grid.nx + 1) + i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Values on horizontal faces: `nx * (ny + 1)` entries, face `(i, j - 1/2)`
/// stored at `(i, j)` with `j` in `0..=ny`.
#[derive(Debug, Clone, PartialEq)]
pub struct YFaceField {
    pub grid: GridSpec,
    data: Vec<f64>,
}

impl YFaceField {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            grid: *grid,
            data: vec![0.0; grid.nx * (grid.ny + 1)],
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.grid.nx && j <= self.grid.ny);
        self.data[j * self.grid.nx + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.grid.nx + i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Both face orientations together (e.g. the face-sampled `|D psi|` pair).
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    pub x: XFaceField,
    pub y: YFaceField,
}

/// `A_x(f)` on all vertical faces; boundary faces use mirror ghosts.
pub fn avg_x(f: &CellField) -> XFaceField {
    let g = f.grid;
    let e = f.extend_ghost_neumann();
    let mut out = XFaceField::zeros(&g);
    for j in 0..g.ny {
        for i in 0..=g.nx {
            let v = 0.5 * (e.at(i as isize, j as isize) + e.at(i as isize - 1, j as isize));
            out.set(i, j, v);
        }
    }
    out
}

/// `A_y(f)` on all horizontal faces.
pub fn avg_y(f: &CellField) -> YFaceField {
    let g = f.grid;
    let e = f.extend_ghost_neumann();
    let mut out = YFaceField::zeros(&g);
    for j in 0..=g.ny {
        for i in 0..g.nx {
            let v = 0.5 * (e.at(i as isize, j as isize) + e.at(i as isize, j as isize - 1));
            out.set(i, j, v);
        }
    }
    out
}

/// `D_x(f)` on all vertical faces; zero on boundary faces by the mirror rule.
pub fn diff_x(f: &CellField) -> XFaceField {
    let g = f.grid;
    let e = f.extend_ghost_neumann();
    let mut out = XFaceField::zeros(&g);
    for j in 0..g.ny {
        for i in 0..=g.nx {
            let v = (e.at(i as isize, j as isize) - e.at(i as isize - 1, j as isize)) / g.dx;
            out.set(i, j, v);
        }
    }
    out
}

/// `D_y(f)` on all horizontal faces.
pub fn diff_y(f: &CellField) -> YFaceField {
    let g = f.grid;
    let e = f.extend_ghost_neumann();
    let mut out = YFaceField::zeros(&g);
    for j in 0..=g.ny {
        for i in 0..g.nx {
            let v = (e.at(i as isize, j as isize) - e.at(i as isize, j as isize - 1)) / g.dy;
            out.set(i, j, v);
        }
    }
    out
}

/// Weighted divergence `D_h(a, b) = D_x[A_x(a) D_x(b)] + D_y[A_y(a) D_y(b)]`.
///
/// With `a = 1` this is the five-point Laplacian with homogeneous Neumann
/// closure. Boundary faces carry zero flux because `D(b)` vanishes there.
pub fn weighted_div(a: &CellField, b: &CellField) -> Result<CellField> {
    a.grid.same_as(&b.grid)?;
    let g = a.grid;
    let ax = avg_x(a);
    let ay = avg_y(a);
    let dxb = diff_x(b);
    let dyb = diff_y(b);
    let mut out = CellField::zeros(&g);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let fx = (ax.at(i + 1, j) * dxb.at(i + 1, j) - ax.at(i, j) * dxb.at(i, j)) / g.dx;
            let fy = (ay.at(i, j + 1) * dyb.at(i, j + 1) - ay.at(i, j) * dyb.at(i, j)) / g.dy;
            out.set(i, j, fx + fy);
        }
    }
    Ok(out)
}

/// Discrete weighted inner product `(u, v) = dx dy sum u_{ij} v_{ij}`.
pub fn inner(u: &CellField, v: &CellField) -> Result<f64> {
    u.grid.same_as(&v.grid)?;
    let s: f64 = u
        .as_slice()
        .iter()
        .zip(v.as_slice())
        .map(|(a, b)| a * b)
        .sum();
    Ok(u.grid.cell_area() * s)
}
