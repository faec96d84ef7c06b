//! Run configuration: a sectioned key-value file (TOML) with per-experiment
//! defaults. Unknown keys are rejected; every run echoes its fully resolved
//! configuration next to its outputs so a run directory is self-describing.

use chembed_core::error::Error as CoreError;
use chembed_core::geometry::{Circle, HalfPlane, Rect, ShapeSpec};
use chembed_core::model::{PhysParams, Potential};
use chembed_core::solver::{SolverMethod, SolverOptions};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub enum ConfigError {
    Io(std::io::Error),
    Parse(String),
    Invalid(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(e) => write!(f, "cannot read config: {e}"),
            ConfigError::Parse(msg) => write!(f, "config parse error: {msg}"),
            ConfigError::Invalid(msg) => write!(f, "invalid config: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

impl From<CoreError> for ConfigError {
    fn from(e: CoreError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Coarsening,
    DropletFlat,
    DropletCurved,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Embedded model on the enclosing box.
    Extended,
    /// Original model on the physical rectangle.
    Reference,
}

/// Gamma accepts a number or the string "inf".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaSpec {
    Value(f64),
    Word(GammaWord),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaWord {
    Inf,
}

impl GammaSpec {
    pub fn gamma_inv(&self) -> Result<f64, ConfigError> {
        match self {
            GammaSpec::Word(GammaWord::Inf) => Ok(0.0),
            GammaSpec::Value(v) if *v > 0.0 => Ok(1.0 / v),
            GammaSpec::Value(v) => Err(ConfigError::Invalid(format!(
                "physics.gamma must be > 0 or \"inf\" (got {v})"
            ))),
        }
    }
}

// ---- raw (partial) file schema ----

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: RawExperiment,
    #[serde(default)]
    grid: RawGrid,
    #[serde(default)]
    physics: RawPhysics,
    #[serde(default)]
    boundary: RawBoundary,
    #[serde(default)]
    time: RawTime,
    #[serde(default)]
    shape: Option<RawShape>,
    #[serde(default)]
    initial: Option<RawInitial>,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    kind: Option<ExperimentKind>,
    model: Option<ModelKind>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    lx: Option<f64>,
    ly: Option<f64>,
    nx: Option<usize>,
    ny: Option<usize>,
    origin: Option<[f64; 2]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhysics {
    k: Option<f64>,
    m: Option<f64>,
    gamma: Option<GammaSpec>,
    alpha: Option<f64>,
    a: Option<f64>,
    eps: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBoundary {
    h1: Option<f64>,
    h2: Option<f64>,
    h3: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTime {
    dt: Option<f64>,
    t_final: Option<f64>,
    snapshot_every: Option<usize>,
    diagnostics_every: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum RawShape {
    Rectangle {
        x_min: f64,
        x_max: f64,
        y_min: f64,
        y_max: f64,
    },
    HalfPlane {
        y0: f64,
    },
    Sinusoidal {
        y0: f64,
        amplitude: f64,
        wavelength: f64,
        x_peak: f64,
    },
    Csg {
        x_min: f64,
        x_max: f64,
        y_min: f64,
        y_max: f64,
        #[serde(default)]
        holes: Vec<[f64; 3]>,
        #[serde(default)]
        cuts: Vec<[f64; 3]>,
    },
}

impl RawShape {
    pub fn to_shape(&self) -> ShapeSpec {
        match self {
            RawShape::Rectangle {
                x_min,
                x_max,
                y_min,
                y_max,
            } => ShapeSpec::FullRectangle(Rect {
                x_min: *x_min,
                x_max: *x_max,
                y_min: *y_min,
                y_max: *y_max,
            }),
            RawShape::HalfPlane { y0 } => ShapeSpec::HalfPlaneSubstrate { y0: *y0 },
            RawShape::Sinusoidal {
                y0,
                amplitude,
                wavelength,
                x_peak,
            } => ShapeSpec::SinusoidalSubstrate {
                y0: *y0,
                amplitude: *amplitude,
                wavelength: *wavelength,
                x_peak: *x_peak,
            },
            RawShape::Csg {
                x_min,
                x_max,
                y_min,
                y_max,
                holes,
                cuts,
            } => ShapeSpec::CsgPolygon {
                rect: Rect {
                    x_min: *x_min,
                    x_max: *x_max,
                    y_min: *y_min,
                    y_max: *y_max,
                },
                holes: holes
                    .iter()
                    .map(|h| Circle {
                        cx: h[0],
                        cy: h[1],
                        r: h[2],
                    })
                    .collect(),
                cuts: cuts
                    .iter()
                    .map(|c| HalfPlane {
                        a: c[0],
                        b: c[1],
                        c: c[2],
                    })
                    .collect(),
            },
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum RawInitial {
    /// `amplitude * rand` addressed on the physical domain's cell lattice.
    Random {
        amplitude: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// `tanh((radius - |x - c|)/width)`.
    Droplet {
        cx: f64,
        cy: f64,
        radius: f64,
        width: f64,
    },
    Uniform { value: f64 },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    method: Option<String>,
    rel_tol: Option<f64>,
    abs_tol: Option<f64>,
    max_iterations: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<String>,
}

// ---- resolved schema ----

/// Fully resolved run configuration; serializable so it can be echoed into
/// the output directory.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    pub model: ModelKind,
    pub grid_lx: f64,
    pub grid_ly: f64,
    pub grid_nx: usize,
    pub grid_ny: usize,
    pub grid_origin: [f64; 2],
    pub k: f64,
    pub m: f64,
    pub gamma_inv: f64,
    pub alpha: f64,
    pub a_shift: f64,
    pub eps: f64,
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    pub dt: f64,
    pub t_final: f64,
    pub snapshot_every: usize,
    pub diagnostics_every: usize,
    pub shape: RawShape,
    pub initial: RawInitial,
    pub rng_seed: u64,
    pub solver_method: String,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_iterations: usize,
    pub output_dir: String,
}

impl RunConfig {
    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn phys_params(&self) -> PhysParams {
        PhysParams {
            k: self.k,
            mobility: self.m,
            gamma_inv: self.gamma_inv,
            alpha: self.alpha,
            a_shift: self.a_shift,
            eps: self.eps,
            potential: Potential::QuarticDoubleWell,
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            max_iterations: self.max_iterations,
            method: if self.solver_method == "krylov" {
                SolverMethod::Krylov
            } else {
                SolverMethod::Direct
            },
            ..Default::default()
        }
    }

    pub fn shape_spec(&self) -> ShapeSpec {
        self.shape.to_shape()
    }

    /// Anchor for lattice-addressed random data: the physical domain's
    /// lower-left corner, shared between reference and extended grids.
    pub fn noise_anchor(&self) -> [f64; 2] {
        match &self.shape {
            RawShape::Rectangle { x_min, y_min, .. } | RawShape::Csg { x_min, y_min, .. } => {
                [*x_min, *y_min]
            }
            RawShape::HalfPlane { y0 } | RawShape::Sinusoidal { y0, .. } => {
                [self.grid_origin[0], *y0]
            }
        }
    }

    /// Output directory with the optional environment override applied.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os("CHEMBED_OUT_ROOT") {
            Some(root) => Path::new(&root).join(&self.output_dir),
            None => PathBuf::from(&self.output_dir),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("resolved config serializes")
    }

    pub fn digest(&self) -> String {
        chembed_core::verify::config_digest(&self.to_toml())
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(ConfigError::Io)?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    resolve(raw)
}

fn resolve(raw: RawConfig) -> Result<RunConfig, ConfigError> {
    let kind = raw
        .experiment
        .kind
        .ok_or_else(|| ConfigError::Invalid("experiment.kind is required".into()))?;
    let model = raw.experiment.model.unwrap_or(ModelKind::Extended);

    // Per-experiment defaults: grids follow the benchmark setups; anything
    // set in the file wins.
    struct Preset {
        grid: (f64, f64, usize, usize, [f64; 2]),
        eps: f64,
        gamma: GammaSpec,
        dt: f64,
        t_final: f64,
        shape: RawShape,
        initial: RawInitial,
    }
    let coarsening_shape = RawShape::Rectangle {
        x_min: -0.5,
        x_max: 0.5,
        y_min: -0.5,
        y_max: 0.5,
    };
    let droplet_shape = RawShape::Rectangle {
        x_min: -0.5,
        x_max: 0.5,
        y_min: 0.0,
        y_max: 0.5,
    };
    let droplet_initial = RawInitial::Droplet {
        cx: 0.0,
        cy: 0.2,
        radius: 0.2,
        width: 0.01,
    };
    let preset = match (kind, model) {
        (ExperimentKind::Coarsening, ModelKind::Extended) => Preset {
            grid: (1.25, 1.25, 160, 160, [-0.625, -0.625]),
            eps: 1e-2,
            gamma: GammaSpec::Word(GammaWord::Inf),
            dt: 1e-5,
            t_final: 0.1,
            shape: coarsening_shape,
            initial: RawInitial::Random {
                amplitude: 0.001,
                seed: None,
            },
        },
        (ExperimentKind::Coarsening, ModelKind::Reference) => Preset {
            grid: (1.0, 1.0, 128, 128, [-0.5, -0.5]),
            eps: 1e-2,
            gamma: GammaSpec::Word(GammaWord::Inf),
            dt: 1e-5,
            t_final: 0.1,
            shape: coarsening_shape,
            initial: RawInitial::Random {
                amplitude: 0.001,
                seed: None,
            },
        },
        (ExperimentKind::DropletFlat, ModelKind::Extended) => Preset {
            grid: (1.25, 1.25, 160, 160, [-0.625, -0.625]),
            eps: 2e-3,
            gamma: GammaSpec::Value(10.0),
            dt: 1e-3,
            t_final: 200.0,
            shape: droplet_shape.clone(),
            initial: droplet_initial.clone(),
        },
        (ExperimentKind::DropletFlat, ModelKind::Reference) => Preset {
            grid: (1.0, 0.5, 128, 64, [-0.5, 0.0]),
            eps: 2e-3,
            gamma: GammaSpec::Value(10.0),
            dt: 1e-3,
            t_final: 200.0,
            shape: droplet_shape,
            initial: droplet_initial.clone(),
        },
        (ExperimentKind::DropletCurved, ModelKind::Extended) => Preset {
            grid: (1.25, 1.25, 160, 160, [-0.625, -0.625]),
            eps: 2e-3,
            gamma: GammaSpec::Value(20.0),
            dt: 1e-3,
            t_final: 2000.0,
            shape: RawShape::Sinusoidal {
                y0: -0.02,
                amplitude: 0.08,
                wavelength: 1.25,
                x_peak: -0.1,
            },
            initial: droplet_initial,
        },
        (ExperimentKind::DropletCurved, ModelKind::Reference) => {
            return Err(ConfigError::Invalid(
                "droplet_curved has no reference solver (curved substrate)".into(),
            ));
        }
        (ExperimentKind::Custom, _) => Preset {
            grid: (1.0, 1.0, 64, 64, [-0.5, -0.5]),
            eps: 1e-2,
            gamma: GammaSpec::Word(GammaWord::Inf),
            dt: 1e-4,
            t_final: 0.01,
            shape: raw
                .shape
                .clone()
                .ok_or_else(|| ConfigError::Invalid("custom experiments need [shape]".into()))?,
            initial: raw.initial.clone().ok_or_else(|| {
                ConfigError::Invalid("custom experiments need [initial]".into())
            })?,
        },
    };

    let (dlx, dly, dnx, dny, dorigin) = preset.grid;
    let grid_nx = raw.grid.nx.unwrap_or(dnx);
    let grid_ny = raw.grid.ny.unwrap_or(dny);
    let grid_lx = raw.grid.lx.unwrap_or(dlx);
    let grid_ly = raw.grid.ly.unwrap_or(dly);
    let grid_origin = raw
        .grid
        .origin
        .unwrap_or(if raw.grid.lx.is_some() || raw.grid.ly.is_some() {
            [-0.5 * grid_lx, -0.5 * grid_ly]
        } else {
            dorigin
        });

    let gamma = raw.physics.gamma.unwrap_or(preset.gamma);
    let diagnostics_every = raw.time.diagnostics_every.unwrap_or(10).max(1);
    let snapshot_every = raw
        .time
        .snapshot_every
        .unwrap_or(diagnostics_every * 100)
        .max(1);

    let cfg = RunConfig {
        experiment: kind,
        model,
        grid_lx,
        grid_ly,
        grid_nx,
        grid_ny,
        grid_origin,
        k: raw.physics.k.unwrap_or(1e-4),
        m: raw.physics.m.unwrap_or(0.01),
        gamma_inv: gamma.gamma_inv()?,
        alpha: raw.physics.alpha.unwrap_or(0.0),
        a_shift: raw.physics.a.unwrap_or(0.0),
        eps: raw.physics.eps.unwrap_or(preset.eps),
        h1: raw.boundary.h1.unwrap_or(0.0),
        h2: raw.boundary.h2.unwrap_or(0.0),
        h3: raw.boundary.h3.unwrap_or(0.0),
        dt: raw.time.dt.unwrap_or(preset.dt),
        t_final: raw.time.t_final.unwrap_or(preset.t_final),
        snapshot_every,
        diagnostics_every,
        shape: raw.shape.unwrap_or(preset.shape),
        initial: raw.initial.unwrap_or(preset.initial),
        rng_seed: 0, // filled below from the initial datum
        solver_method: match raw.solver.method.as_deref() {
            None => "direct".to_string(),
            Some("direct") => "direct".to_string(),
            Some("krylov") => "krylov".to_string(),
            Some(other) => {
                return Err(ConfigError::Invalid(format!(
                    "solver.method must be \"direct\" or \"krylov\" (got \"{other}\")"
                )))
            }
        },
        rel_tol: raw.solver.rel_tol.unwrap_or(1e-10),
        abs_tol: raw.solver.abs_tol.unwrap_or(1e-13),
        max_iterations: raw.solver.max_iterations.unwrap_or(400),
        output_dir: raw.output.dir.unwrap_or_else(|| "runs/out".to_string()),
    };
    let mut cfg = cfg;
    cfg.rng_seed = match &cfg.initial {
        RawInitial::Random { seed, .. } => seed.unwrap_or(1),
        _ => 1,
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig) -> Result<(), ConfigError> {
    let named = |name: &str, ok: bool, msg: String| {
        if ok {
            Ok(())
        } else {
            Err(ConfigError::Invalid(format!("{name}: {msg}")))
        }
    };
    named("physics.k", cfg.k > 0.0, format!("must be > 0 (got {})", cfg.k))?;
    named("physics.m", cfg.m > 0.0, format!("must be > 0 (got {})", cfg.m))?;
    named(
        "physics.eps",
        cfg.eps > 0.0,
        format!("must be > 0 (got {})", cfg.eps),
    )?;
    named(
        "physics.alpha",
        cfg.alpha >= 0.0,
        format!("must be >= 0 (got {})", cfg.alpha),
    )?;
    named(
        "physics.a",
        cfg.a_shift >= 0.0,
        format!("must be >= 0 (got {})", cfg.a_shift),
    )?;
    named("time.dt", cfg.dt > 0.0, format!("must be > 0 (got {})", cfg.dt))?;
    named(
        "time.t_final",
        cfg.t_final >= 0.0,
        format!("must be >= 0 (got {})", cfg.t_final),
    )?;
    named(
        "grid.nx",
        cfg.grid_nx >= 2 && cfg.grid_ny >= 2,
        "grid must be at least 2x2".to_string(),
    )?;
    named(
        "time.snapshot_every",
        cfg.snapshot_every % cfg.diagnostics_every == 0,
        format!(
            "must be a multiple of diagnostics_every (got {} vs {})",
            cfg.snapshot_every, cfg.diagnostics_every
        ),
    )?;
    named(
        "solver.rel_tol",
        cfg.rel_tol > 0.0,
        format!("must be > 0 (got {})", cfg.rel_tol),
    )?;
    if cfg.model == ModelKind::Reference && cfg.alpha != 0.0 {
        return Err(ConfigError::Invalid(
            "model = \"reference\" supports alpha = 0 only".into(),
        ));
    }
    Ok(())
}
