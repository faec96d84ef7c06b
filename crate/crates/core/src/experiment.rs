//! Initial data for the benchmark experiments.
//!
//! The coarsening runs start from small random noise. So that a reference
//! run on the physical domain and an extended run on the larger box see the
//! *same* sample at coinciding cells, the noise is addressed by lattice
//! coordinates relative to a shared anchor point (the physical domain's
//! lower-left corner) rather than by iteration order: cell -> (k, l) ->
//! counter-mode draw.

use crate::geometry::{signed_distance, ShapeSpec};
use crate::grid::{CellField, GridSpec};
use rand_core::{RngCore, SeedableRng};

fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

/// Uniform draw in [-1, 1] addressed by seed and lattice coordinates.
/// Identical (seed, k, l) gives the identical value on any grid.
pub fn lattice_uniform(seed: u64, k: i64, l: i64) -> f64 {
    use rand_chacha::ChaCha12Rng;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(zigzag(l).wrapping_add(1));
    rng.set_word_pos(zigzag(k) as u128 * 2);
    let v = rng.next_u64();
    ((v >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
}

/// Sample `amplitude * rand` on every cell, with lattice indices measured
/// from `anchor` (a physical point on the shared cell lattice).
pub fn random_lattice_field(
    grid: &GridSpec,
    anchor: (f64, f64),
    amplitude: f64,
    seed: u64,
) -> CellField {
    CellField::from_fn(grid, |x, y| {
        let k = ((x - anchor.0) / grid.dx - 0.5).round() as i64;
        let l = ((y - anchor.1) / grid.dy - 0.5).round() as i64;
        amplitude * lattice_uniform(seed, k, l)
    })
}

/// Droplet profile `tanh((r0 - |x - c|) / w)`.
pub fn droplet_profile(x: f64, y: f64, cx: f64, cy: f64, r0: f64, w: f64) -> f64 {
    ((r0 - ((x - cx).powi(2) + (y - cy).powi(2)).sqrt()) / w).tanh()
}

pub fn droplet_field(grid: &GridSpec, cx: f64, cy: f64, r0: f64, w: f64) -> CellField {
    CellField::from_fn(grid, |x, y| droplet_profile(x, y, cx, cy, r0, w))
}

/// Extended-model initial value: `psi * (raw inside the physical domain,
/// 0 outside)`.
pub fn embed_ic(raw: &CellField, psi: &CellField, shape: &ShapeSpec) -> CellField {
    let grid = raw.grid;
    let mut out = psi.clone();
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let inside = signed_distance(shape, grid.xc(i), grid.yc(j)) < 0.0;
            let v = if inside { raw.at(i, j) } else { 0.0 };
            out.set(i, j, psi.at(i, j) * v);
        }
    }
    out
}
