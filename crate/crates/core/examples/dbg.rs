// droplet ext-vs-ref error as a function of eps (resolution of the wall layer)
use chembed_core::geometry::*;
use chembed_core::grid::*;
use chembed_core::model::*;
use chembed_core::reference::*;
use chembed_core::scheme::*;
use chembed_core::solver::*;
use chembed_core::experiment::*;
use chembed_core::verify::*;

fn main() {
    let dt = 1e-3;
    let t_end = 2.0;
    let nsteps = (t_end / dt) as usize;
    let gamma_inv = 0.1;

    // shared sharp reference
    let p0 = PhysParams { k: 1e-4, mobility: 0.01, gamma_inv, alpha: 0.0,
        a_shift: 0.0, eps: 2e-3, potential: Potential::QuarticDoubleWell };
    let gr = GridSpec::with_origin(-0.5, 0.0, 1.0, 0.5, 64, 32).unwrap();
    let phi0r = droplet_field(&gr, 0.0, 0.2, 0.2, 0.01);
    let ghost0: Vec<f64> = (0..gr.nx).map(|i| droplet_profile(gr.xc(i), -0.5*gr.dy, 0.0, 0.2, 0.2, 0.01)).collect();
    let mut rf = RefStepper::new(p0, gr, dt, RefBoundary::DynamicSubstrate, Some(ghost0),
        SolverOptions { method: SolverMethod::Krylov, ..Default::default() }).unwrap();
    let mut sr = SimState::init(phi0r, &p0).unwrap();
    for _ in 0..nsteps { let (x,_,_) = rf.step(&sr).unwrap(); sr = x; }

    for eps in [2e-3, 7.8125e-3, 1.5625e-2, 2.34375e-2, 3.125e-2] {
        let mut p = p0; p.eps = eps;
        let ge = GridSpec::centered(1.25, 1.25, 80, 80).unwrap();
        let shape = ShapeSpec::FullRectangle(Rect { x_min: -0.5, x_max: 0.5, y_min: 0.0, y_max: 0.5 });
        let emb = EmbeddingField::build(&shape, &ge, eps).unwrap();
        let raw = droplet_field(&ge, 0.0, 0.2, 0.2, 0.01);
        let phi0e = embed_ic(&raw, &emb.psi, &shape);
        let mut ext = Stepper::new(p, emb.clone(), BoundaryData::zeros(&ge), dt,
            SolverOptions { method: SolverMethod::Krylov, ..Default::default() }).unwrap();
        let mut se = SimState::init(phi0e, &p).unwrap();
        for _ in 0..nsteps { let (x,_,_) = ext.step(&se).unwrap(); se = x; }
        // restrict further inside to exclude the fat layer: psi(-3eps) threshold
        let err_half = l2_error_restricted(&se.phi, &sr.phi, &emb.psi, 0.5).unwrap();
        let thr = 1.0 / ((-18.0f64).exp() + 1.0);
        let err_in = l2_error_restricted(&se.phi, &sr.phi, &emb.psi, thr).unwrap();
        eprintln!("eps {eps:9.3e} (eps/dx {:4.1}): err(psi>=1/2) {err_half:.3e}, err(3eps inside) {err_in:.3e}",
            eps / ge.dx);
    }
}
