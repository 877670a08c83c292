use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use latent_rom::bptt::{gradient_check, GradientMode};
use latent_rom::data::Series;
use latent_rom::forces::regular_polygon;
use latent_rom::io::{load_dataset, TOOL_VERSION};
use latent_rom::model::{CellKind, ModelParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::config::{load, Loaded};
use crate::error::{CliError, CliResult};
use crate::force::ForceSpec;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckFile {
    pub seed: u64,
    #[serde(default)]
    pub force: ForceSpec,
    #[serde(default)]
    pub check: CheckSection,
    /// Also write the report here.
    #[serde(default)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckSection {
    pub latent_dim: usize,
    /// Observed dimension when the force does not fix it.
    pub l: Option<usize>,
    pub n_series: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub cell: String,
    pub mode: String,
    pub use_z0: bool,
    pub fd_step: f64,
    /// Defaults to 1e-6 for linear forces and 1e-4 otherwise.
    pub tolerance: Option<f64>,
    /// Parameter entries are uniform in `±param_scale`.
    pub param_scale: f64,
    /// Data noise; defaults to 1 (0.1 around a ring).
    pub data_scale: Option<f64>,
    /// Use the first `n_series` of this dataset instead of random data.
    pub dataset: Option<PathBuf>,
}

impl Default for CheckSection {
    fn default() -> Self {
        Self {
            latent_dim: 4,
            l: None,
            n_series: 2,
            n_steps: 10,
            dt: 0.1,
            cell: CellKind::MidpointStable.to_string(),
            mode: GradientMode::Exact.as_str().into(),
            use_z0: false,
            fd_step: 1e-6,
            tolerance: None,
            param_scale: 0.5,
            data_scale: None,
            dataset: None,
        }
    }
}

pub fn run(config_path: &Path, sets: &[String]) -> CliResult<String> {
    let cfg: Loaded<GradcheckFile> = load(config_path, sets)?;
    let c = &cfg.value.check;
    let spec = &cfg.value.force;
    let cell: CellKind = c.cell.parse().map_err(|e| CliError::Config(format!("check.cell: {e}")))?;
    let mode: GradientMode = c.mode.parse().map_err(|e| CliError::Config(format!("check.mode: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.value.seed);

    let series: Vec<Series> = match &c.dataset {
        Some(p) => {
            let path = cfg.resolve(p);
            let ds = load_dataset(&path).map_err(|e| CliError::at(&path, e))?;
            ds.series.into_iter().take(c.n_series).collect()
        }
        None => {
            let l = spec.natural_dim().or(c.l).ok_or_else(|| {
                CliError::Config("check.l is required when the force does not fix the dimension".into())
            })?;
            let base = spec.ring_points().map_or_else(|| DVector::zeros(l), |n| regular_polygon(n, 1.0));
            let scale = c.data_scale.unwrap_or(if spec.ring_points().is_some() { 0.1 } else { 1.0 });
            (0..c.n_series)
                .map(|_| {
                    let xs = (0..=c.n_steps)
                        .map(|_| &base + DVector::from_fn(l, |_, _| scale * rng.random_range(-1.0..1.0)))
                        .collect();
                    Series::uniform(c.dt, xs)
                })
                .collect()
        }
    };
    let l = series.first().map(|s| s.initial().len()).ok_or_else(|| CliError::Config("no series to check".into()))?;
    let force = spec.build(l)?;
    let dt = series[0].t.get(1).map_or(c.dt, |t1| t1 - series[0].t[0]);

    let p = c.latent_dim;
    let s = c.param_scale;
    let mut uniform = |r: usize, k: usize| DMatrix::from_fn(r, k, |_, _| s * rng.random_range(-1.0..1.0));
    let theta = uniform(p, 1).column(0).into_owned();
    let (cm, r) = (uniform(p, p), uniform(p, l));
    let z0 = c.use_z0.then(|| uniform(p, 1).column(0).into_owned() * 0.2);
    let params = ModelParams::new(theta, cm, r, z0, dt, cell)?;

    let refs: Vec<&Series> = series.iter().collect();
    let horizon = (c.dataset.is_some()).then_some(c.n_steps);
    let report = gradient_check(&params, force.field.as_ref(), &refs, horizon, c.fd_step, mode)?;
    let tol = c.tolerance.unwrap_or(if force.stiffness.is_some() { 1e-6 } else { 1e-4 });
    let passed = report.passes(tol);

    let mut out = String::new();
    let _ = writeln!(out, "# latent-rom {TOOL_VERSION} gradcheck");
    let _ = writeln!(out, "config_hash {}", cfg.hash);
    let _ = writeln!(out, "seed {}", cfg.value.seed);
    let _ = writeln!(out, "force {}", spec.to_meta());
    let _ = writeln!(out, "cell {cell} mode {} p {p} l {l} series {} parameters {}", mode.as_str(), refs.len(), report.entries.len());
    let _ = writeln!(out, "max_rel_err {:.6e} tolerance {tol:.1e}", report.max_rel_err);
    let _ = writeln!(out, "name analytic finite_difference rel_err");
    for e in report.entries.iter().take(5) {
        let _ = writeln!(out, "{} {:.12e} {:.12e} {:.3e}", e.name, e.analytic, e.finite_difference, e.rel_err);
    }
    let verdict = if passed {
        "PASS"
    } else if mode == GradientMode::Approximate {
        "DISCREPANCY (not a failure: approximate mode drops the Jacobian derivative)"
    } else {
        "FAIL"
    };
    let _ = writeln!(out, "result {verdict}");
    if let Some(path) = &cfg.value.report {
        let path = cfg.resolve(path);
        std::fs::write(&path, &out).map_err(|e| CliError::io(&path, e))?;
    }
    if passed || mode == GradientMode::Approximate {
        Ok(out)
    } else {
        Err(CliError::Numeric(out))
    }
}
