//! Verification harness: restricted L2 comparisons between extended and
//! reference runs, energy-law auditing, parameter sweeps, and the
//! contact-angle measurement.

use crate::error::{Error, Result};
use crate::grid::CellField;
use crate::scheme::StepAudit;

/// Which extended-grid cells enter the comparison norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskRule {
    /// `psi >= 1/2`, i.e. cells inside the physical domain.
    PsiHalf,
    /// Cells at least `3 eps` inside the boundary.
    Clearance3Eps,
}

impl MaskRule {
    /// Threshold on `psi` implementing the rule.
    pub fn psi_threshold(&self, eps: f64) -> f64 {
        match self {
            MaskRule::PsiHalf => 0.5,
            // psi(-3 eps) = 1 / (e^{-18} + 1)
            MaskRule::Clearance3Eps => {
                let _ = eps;
                1.0 / ((-18.0f64).exp() + 1.0)
            }
        }
    }
}

/// Errors of one extended-versus-reference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub times: Vec<f64>,
    pub l2_errors: Vec<f64>,
    pub eps: f64,
    pub config_digest: String,
}

/// FNV-1a of a canonical config rendering; ties a report to its inputs.
pub fn config_digest(canonical: &str) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in canonical.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

/// Map a reference-grid cell index to the coinciding extended-grid cell.
/// Fails unless spacings match and the offset is an integer number of cells.
pub fn grid_offset(ext: &CellField, reference: &CellField) -> Result<(usize, usize)> {
    let ge = ext.grid;
    let gr = reference.grid;
    let tol = 1e-9 * (ge.dx + ge.dy);
    if (ge.dx - gr.dx).abs() > tol || (ge.dy - gr.dy).abs() > tol {
        return Err(Error::Alignment(format!(
            "cell sizes differ: ({}, {}) vs ({}, {})",
            ge.dx, ge.dy, gr.dx, gr.dy
        )));
    }
    let fx = (gr.x0 - ge.x0) / ge.dx;
    let fy = (gr.y0 - ge.y0) / ge.dy;
    let ox = fx.round();
    let oy = fy.round();
    if (fx - ox).abs() > 1e-6 || (fy - oy).abs() > 1e-6 || ox < 0.0 || oy < 0.0 {
        return Err(Error::Alignment(format!(
            "grids are offset by a non-integer number of cells: ({fx}, {fy})"
        )));
    }
    let (ox, oy) = (ox as usize, oy as usize);
    if ox + gr.nx > ge.nx || oy + gr.ny > ge.ny {
        return Err(Error::Alignment(
            "reference grid does not fit inside the extended grid".into(),
        ));
    }
    Ok((ox, oy))
}

/// Restricted L2 error `sqrt(dx dy sum_masked (phi_ext - phi_ref)^2)` over
/// reference cells whose extended twin satisfies the mask.
pub fn l2_error_restricted(
    phi_ext: &CellField,
    phi_ref: &CellField,
    psi: &CellField,
    psi_threshold: f64,
) -> Result<f64> {
    if psi.grid != phi_ext.grid {
        return Err(Error::GridMismatch {
            expected: (phi_ext.grid.nx, phi_ext.grid.ny),
            got: (psi.grid.nx, psi.grid.ny),
        });
    }
    let (ox, oy) = grid_offset(phi_ext, phi_ref)?;
    let gr = phi_ref.grid;
    let mut sum = 0.0;
    for j in 0..gr.ny {
        for i in 0..gr.nx {
            if psi.at(i + ox, j + oy) >= psi_threshold {
                let d = phi_ext.at(i + ox, j + oy) - phi_ref.at(i, j);
                sum += d * d;
            }
        }
    }
    Ok((gr.cell_area() * sum).sqrt())
}

/// L2 distance between two fields on the same grid (used by self-convergence
/// sweeps).
pub fn l2_distance(a: &CellField, b: &CellField) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch {
            expected: (a.grid.nx, a.grid.ny),
            got: (b.grid.nx, b.grid.ny),
        });
    }
    let s: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok((a.grid.cell_area() * s).sqrt())
}

/// Defect of the discrete energy law for one completed step:
/// `|(F' - F)/dt + dissipation + boundary dissipation + pumped power|`.
pub fn energy_law_residual(audit: &StepAudit, dt: f64) -> f64 {
    ((audit.f_next - audit.f_prev) / dt
        + audit.dissipation
        + audit.gamma_dissipation
        + audit.pumped_power)
        .abs()
}

/// Run the comparison at each interface width; reports come back in input
/// order together with a flag telling whether the errors decreased
/// monotonically (per matching time) as `eps` decreased.
pub fn eps_sweep(
    eps_list: &[f64],
    mut runner: impl FnMut(f64) -> Result<ComparisonReport>,
) -> Result<(Vec<ComparisonReport>, bool)> {
    let mut reports = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        reports.push(runner(eps)?);
    }
    let mut monotone = true;
    for w in reports.windows(2) {
        let (coarse, fine) = (&w[0], &w[1]);
        if fine.eps < coarse.eps {
            for (a, b) in coarse.l2_errors.iter().zip(&fine.l2_errors) {
                if b > a {
                    monotone = false;
                }
            }
        }
    }
    Ok((reports, monotone))
}

/// Energy histories per boundary rate; `ordered` is true when a larger rate
/// never has higher energy than a smaller one at any shared sample time,
/// within the slack.
pub fn gamma_sweep(
    gammas: &[f64],
    slack: f64,
    mut runner: impl FnMut(f64) -> Result<Vec<(f64, f64)>>,
) -> Result<(Vec<Vec<(f64, f64)>>, bool)> {
    let mut curves = Vec::with_capacity(gammas.len());
    for &g in gammas {
        curves.push(runner(g)?);
    }
    let mut ordered = true;
    for a in 0..curves.len() {
        for b in 0..curves.len() {
            if gammas[a] < gammas[b] {
                // larger gamma (b) must decay at least as fast
                for ((ta, ea), (tb, eb)) in curves[a].iter().zip(&curves[b]) {
                    debug_assert!((ta - tb).abs() < 1e-12);
                    if *eb > *ea + slack {
                        ordered = false;
                    }
                }
            }
        }
    }
    Ok((curves, ordered))
}

/// Contact angle of the `phi = 0` contour against the substrate line
/// `y = substrate_y`, in degrees.
///
/// Contour points are found by linear interpolation along grid lines, kept
/// when their height above the substrate lies in `[2 eps, 0.1]`, and fitted
/// with a least-squares circle; the return value is the angle at which that
/// circle meets the substrate, measured inside the droplet.
pub fn contact_angle(phi: &CellField, substrate_y: f64, eps: f64) -> Result<f64> {
    let g = phi.grid;
    let mut pts: Vec<(f64, f64)> = Vec::new();
    let lo = substrate_y + (2.0 * eps).max(1.5 * g.dy.max(g.dx));
    let hi = substrate_y + 0.1;
    // Sign changes with a negligible jump are far-field round-off wiggles,
    // not the interface; require a genuine transition.
    let min_jump = 0.2;
    // crossings along x
    for j in 0..g.ny {
        let y = g.yc(j);
        if y < lo || y > hi {
            continue;
        }
        for i in 1..g.nx {
            let a = phi.at(i - 1, j);
            let b = phi.at(i, j);
            if a * b < 0.0 && (a - b).abs() >= min_jump {
                let s = a / (a - b);
                pts.push((g.xc(i - 1) + s * g.dx, y));
            }
        }
    }
    // crossings along y
    for i in 0..g.nx {
        let x = g.xc(i);
        for j in 1..g.ny {
            let a = phi.at(i, j - 1);
            let b = phi.at(i, j);
            if a * b < 0.0 && (a - b).abs() >= min_jump {
                let s = a / (a - b);
                let y = g.yc(j - 1) + s * g.dy;
                if y >= lo && y <= hi {
                    pts.push((x, y));
                }
            }
        }
    }
    if pts.len() < 3 {
        return Err(Error::Measurement(format!(
            "only {} contour points in the fit band",
            pts.len()
        )));
    }

    // Algebraic circle fit: minimize sum (x^2 + y^2 + D x + E y + F)^2.
    let mut m = [[0.0f64; 3]; 3];
    let mut rhs = [0.0f64; 3];
    for &(x, y) in &pts {
        let z = x * x + y * y;
        let row = [x, y, 1.0];
        for a in 0..3 {
            for b in 0..3 {
                m[a][b] += row[a] * row[b];
            }
            rhs[a] -= row[a] * z;
        }
    }
    let sol = solve3(m, rhs).ok_or_else(|| {
        Error::Measurement("degenerate circle fit (collinear contour points)".into())
    })?;
    let (d, e, f) = (sol[0], sol[1], sol[2]);
    let yc = -0.5 * e;
    let r2 = 0.25 * (d * d + e * e) - f;
    if r2 <= 0.0 {
        return Err(Error::Measurement("circle fit returned nonpositive radius".into()));
    }
    let r = r2.sqrt();
    let cosine = ((substrate_y - yc) / r).clamp(-1.0, 1.0);
    Ok(cosine.acos().to_degrees())
}

fn solve3(mut m: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for c in 0..3 {
        let p = (c..3).max_by(|&i, &j| m[i][c].abs().partial_cmp(&m[j][c].abs()).unwrap())?;
        m.swap(c, p);
        b.swap(c, p);
        if m[c][c].abs() < 1e-300 {
            return None;
        }
        for r in c + 1..3 {
            let f = m[r][c] / m[c][c];
            for k in c..3 {
                m[r][k] -= f * m[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let mut acc = b[r];
        for k in r + 1..3 {
            acc -= m[r][k] * x[k];
        }
        x[r] = acc / m[r][r];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn lcg(s: &mut u64) -> f64 {
        *s = s
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((*s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    #[test]
    fn identical_fields_have_zero_error() {
        let ext = GridSpec::with_origin(-0.75, -0.75, 1.5, 1.5, 12, 12).unwrap();
        let refg = GridSpec::with_origin(-0.5, -0.5, 1.0, 1.0, 8, 8).unwrap();
        let pe = CellField::from_fn(&ext, |x, y| x + y);
        let pr = CellField::from_fn(&refg, |x, y| x + y);
        let psi = CellField::constant(&ext, 1.0);
        let e = l2_error_restricted(&pe, &pr, &psi, 0.5).unwrap();
        assert!(e < 1e-14);
    }

    #[test]
    fn k_cells_differing_by_c() {
        let ext = GridSpec::with_origin(-0.5, -0.5, 1.0, 1.0, 8, 8).unwrap();
        let refg = ext;
        let pr = CellField::zeros(&refg);
        let mut pe = CellField::zeros(&ext);
        let c = -0.37;
        for (i, j) in [(0usize, 0usize), (3, 4), (7, 7), (5, 1)] {
            pe.set(i, j, c);
        }
        let psi = CellField::constant(&ext, 1.0);
        let e = l2_error_restricted(&pe, &pr, &psi, 0.5).unwrap();
        let want = (ext.cell_area() * 4.0).sqrt() * c.abs();
        assert!((e - want).abs() < 1e-14);
    }

    #[test]
    fn masked_error_matches_loop_oracle() {
        let ext = GridSpec::with_origin(-0.75, -0.75, 1.5, 1.5, 12, 12).unwrap();
        let refg = GridSpec::with_origin(-0.5, -0.5, 1.0, 1.0, 8, 8).unwrap();
        let mut s = 5u64;
        let pe = CellField::from_fn(&ext, |_, _| lcg(&mut s));
        let pr = CellField::from_fn(&refg, |_, _| lcg(&mut s));
        // half-plane mask: psi = 1 for x < 0, tiny otherwise
        let psi = CellField::from_fn(&ext, |x, _| if x < 0.0 { 1.0 } else { 1e-9 });
        let got = l2_error_restricted(&pe, &pr, &psi, 0.5).unwrap();
        let mut sum = 0.0;
        for j in 0..8 {
            for i in 0..8 {
                if psi.at(i + 2, j + 2) >= 0.5 {
                    let d = pe.at(i + 2, j + 2) - pr.at(i, j);
                    sum += d * d;
                }
            }
        }
        let want = (refg.cell_area() * sum).sqrt();
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn triangle_inequality_on_masked_norm() {
        let g = GridSpec::centered(1.0, 1.0, 6, 6).unwrap();
        let psi = CellField::constant(&g, 1.0);
        let mut s = 9u64;
        for _ in 0..20 {
            let a = CellField::from_fn(&g, |_, _| lcg(&mut s));
            let b = CellField::from_fn(&g, |_, _| lcg(&mut s));
            let c = CellField::from_fn(&g, |_, _| lcg(&mut s));
            let dab = l2_error_restricted(&a, &b, &psi, 0.5).unwrap();
            let dbc = l2_error_restricted(&b, &c, &psi, 0.5).unwrap();
            let dac = l2_error_restricted(&a, &c, &psi, 0.5).unwrap();
            assert!(dac <= dab + dbc + 1e-12);
        }
    }

    #[test]
    fn misaligned_grids_are_rejected() {
        let ext = GridSpec::with_origin(-0.75, -0.75, 1.5, 1.5, 12, 12).unwrap();
        let bad_dx = GridSpec::with_origin(-0.5, -0.5, 1.0, 1.0, 9, 8).unwrap();
        let shifted = GridSpec::with_origin(-0.47, -0.5, 1.0, 1.0, 8, 8).unwrap();
        let pe = CellField::zeros(&ext);
        let psi = CellField::constant(&ext, 1.0);
        assert!(matches!(
            l2_error_restricted(&pe, &CellField::zeros(&bad_dx), &psi, 0.5),
            Err(Error::Alignment(_))
        ));
        assert!(matches!(
            l2_error_restricted(&pe, &CellField::zeros(&shifted), &psi, 0.5),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn mask_thresholds() {
        assert_eq!(MaskRule::PsiHalf.psi_threshold(0.01), 0.5);
        let t = MaskRule::Clearance3Eps.psi_threshold(0.01);
        assert!(t > 0.9999999 && t < 1.0);
    }

    #[test]
    fn energy_residual_consistent_with_audit() {
        let audit = StepAudit {
            f_prev: 1.0,
            f_next: 0.9,
            dissipation: 9.0,
            gamma_dissipation: 0.5,
            pumped_power: 0.5,
            energy_residual: 0.0,
        };
        // (0.9 - 1.0)/0.01 = -10; dissipation total = 10 -> residual 0
        assert!(energy_law_residual(&audit, 0.01).abs() < 1e-12);
    }

    fn cap_field(g: &GridSpec, yc: f64, r: f64) -> CellField {
        CellField::from_fn(g, |x, y| {
            let d = ((x * x) + (y - yc) * (y - yc)).sqrt();
            ((r - d) / 0.02).tanh()
        })
    }

    #[test]
    fn semicircular_droplet_measures_ninety_degrees() {
        let g = GridSpec::with_origin(-0.5, 0.0, 1.0, 0.5, 128, 64).unwrap();
        let phi = cap_field(&g, 0.0, 0.2);
        let angle = contact_angle(&phi, 0.0, 2e-3).unwrap();
        assert!((angle - 90.0).abs() < 2.0, "angle {angle}");
    }

    #[test]
    fn spherical_cap_with_half_radius_apex() {
        // center below the substrate by r/2: apex height r/2, angle 60 deg
        let g = GridSpec::with_origin(-0.5, 0.0, 1.0, 0.5, 128, 64).unwrap();
        let phi = cap_field(&g, -0.1, 0.2);
        let angle = contact_angle(&phi, 0.0, 2e-3).unwrap();
        assert!((angle - 60.0).abs() < 2.0, "angle {angle}");

        // center above the substrate: obtuse angle acos(-d/r)
        let phi = cap_field(&g, 0.1, 0.2);
        let angle = contact_angle(&phi, 0.0, 2e-3).unwrap();
        assert!((angle - 120.0).abs() < 2.0, "angle {angle}");
    }

    #[test]
    fn no_contour_means_measurement_error() {
        let g = GridSpec::with_origin(-0.5, 0.0, 1.0, 0.5, 32, 16).unwrap();
        let phi = CellField::constant(&g, -1.0);
        assert!(matches!(
            contact_angle(&phi, 0.0, 2e-3),
            Err(Error::Measurement(_))
        ));
    }

    #[test]
    fn sweeps_report_ordering() {
        // eps sweep with decreasing errors is monotone
        let (reports, mono) = eps_sweep(&[1e-2, 2e-3], |eps| {
            Ok(ComparisonReport {
                times: vec![0.01],
                l2_errors: vec![eps * 0.1],
                eps,
                config_digest: config_digest("x"),
            })
        })
        .unwrap();
        assert_eq!(reports.len(), 2);
        assert!(mono);
        let (_, mono) = eps_sweep(&[1e-2, 2e-3], |eps| {
            Ok(ComparisonReport {
                times: vec![0.01],
                l2_errors: vec![if eps < 1e-2 { 1.0 } else { 0.1 }],
                eps,
                config_digest: String::new(),
            })
        })
        .unwrap();
        assert!(!mono);

        // gamma ordering: larger gamma decays faster
        let (curves, ordered) = gamma_sweep(&[10.0, 50.0], 1e-6, |g| {
            Ok(vec![(0.0, 1.0), (1.0, 1.0 / g)])
        })
        .unwrap();
        assert_eq!(curves.len(), 2);
        assert!(ordered);
        let (_, ordered) = gamma_sweep(&[10.0, 50.0], 1e-6, |g| {
            Ok(vec![(0.0, 1.0), (1.0, g)])
        })
        .unwrap();
        assert!(!ordered);
    }
}
