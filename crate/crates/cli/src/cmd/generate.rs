use std::path::{Path, PathBuf};

use latent_rom::data::Dataset;
use latent_rom::datagen::{
    fom_dataset, jeffery_orbit, parse_fom_matrices, random_stable_fom, save_fom_matrices, Integrator, Jeffery,
    StableFomOptions,
};
use latent_rom::experiments::ellipse_points;
use latent_rom::io::{parse_matrices, save_dataset, TOOL_VERSION};
use latent_rom::model::FomSystem;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;

use super::Provenance;
use crate::config::{load, Loaded};
use crate::error::{CliError, CliResult};
use crate::force::ForceSpec;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub seed: u64,
    pub output: PathBuf,
    /// Also write the generated `W` and `L` (stable-fom only).
    #[serde(default)]
    pub matrices_output: Option<PathBuf>,
    pub generator: Generator,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Generator {
    StableFom(StableFomGen),
    Jeffery(JefferyGen),
    LoadMatrices(LoadMatricesGen),
}

fn one() -> f64 {
    1.0
}

fn ten() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegratorSpec {
    #[default]
    Exact,
    Rk4,
}

/// How the series are sampled from a full-order system.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StableFomGen {
    pub p_f: usize,
    pub l: usize,
    #[serde(default)]
    pub force: ForceSpec,
    #[serde(default = "one")]
    pub dissipation_scale: f64,
    #[serde(default = "one")]
    pub oscillation_scale: f64,
    #[serde(default = "one")]
    pub coupling_scale: f64,
    /// Build `L` from shuffled copies of one Gaussian vector.
    #[serde(default)]
    pub shuffled_base: bool,
    pub n_series: usize,
    pub n_steps: usize,
    pub dt: f64,
    /// `x(0)` is uniform in `center ± x0_range`.
    #[serde(default = "one")]
    pub x0_range: f64,
    /// Center `x(0)` on an ellipse with these semi-axes instead of zero.
    #[serde(default)]
    pub x0_ellipse: Option<[f64; 2]>,
    #[serde(default)]
    pub integrator: IntegratorSpec,
    #[serde(default = "ten")]
    pub rk4_substeps: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JefferyGen {
    pub a: f64,
    pub b: f64,
    pub r: f64,
    #[serde(default)]
    pub u0: f64,
    #[serde(default = "thirty_two")]
    pub n_points: usize,
    pub dt: f64,
    pub n_steps: usize,
}

fn thirty_two() -> usize {
    32
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadMatricesGen {
    pub path: PathBuf,
    #[serde(default)]
    pub force: ForceSpec,
    pub n_series: usize,
    pub n_steps: usize,
    pub dt: f64,
    #[serde(default = "one")]
    pub x0_range: f64,
    #[serde(default)]
    pub x0_ellipse: Option<[f64; 2]>,
    #[serde(default)]
    pub integrator: IntegratorSpec,
    #[serde(default = "ten")]
    pub rk4_substeps: usize,
}

fn integrator(spec: IntegratorSpec, substeps: usize) -> Integrator {
    match spec {
        IntegratorSpec::Exact => Integrator::ExactLinear,
        IntegratorSpec::Rk4 => Integrator::Rk4 { substeps },
    }
}

fn center(l: usize, ellipse: Option<[f64; 2]>) -> CliResult<DVector<f64>> {
    match ellipse {
        None => Ok(DVector::zeros(l)),
        Some([a, b]) if l % 2 == 0 => Ok(ellipse_points(l / 2, a, b)),
        Some(_) => Err(CliError::Config(format!("x0_ellipse needs an even dimension, got l = {l}"))),
    }
}

pub fn run(config_path: &Path, sets: &[String]) -> CliResult<String> {
    let cfg: Loaded<GenerateConfig> = load(config_path, sets)?;
    let c = &cfg.value;
    let prov = Provenance::new(&cfg.hash, c.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut fom: Option<FomSystem> = None;
    let (dataset, kind) = match &c.generator {
        Generator::StableFom(g) => {
            let force = g.force.build(g.l)?;
            let base = g
                .shuffled_base
                .then(|| DVector::from_fn(g.p_f, |_, _| StandardNormal.sample(&mut rng)));
            let opts = StableFomOptions {
                dissipation_scale: g.dissipation_scale,
                oscillation_scale: g.oscillation_scale,
                coupling_scale: g.coupling_scale,
                base,
            };
            let sys = random_stable_fom(g.p_f, force.field, &mut rng, &opts)?;
            let ds = fom_dataset(
                &sys,
                g.n_series,
                g.n_steps,
                g.dt,
                &center(g.l, g.x0_ellipse)?,
                g.x0_range,
                integrator(g.integrator, g.rk4_substeps),
                &mut rng,
            )?;
            fom = Some(sys);
            (ds, "stable-fom")
        }
        Generator::Jeffery(g) => {
            let params = Jeffery {
                a: g.a,
                b: g.b,
                r: g.r,
                u0: g.u0,
                n_points: g.n_points,
            };
            (Dataset::new(vec![jeffery_orbit(&params, g.dt, g.n_steps)?], g.dt)?, "jeffery")
        }
        Generator::LoadMatrices(g) => {
            let path = cfg.resolve(&g.path);
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            let l = parse_matrices(&text)
                .map_err(|e| CliError::at(&path, e))?
                .into_iter()
                .find(|(n, _)| n == "L" || n == "b")
                .map(|(_, m)| m.ncols())
                .ok_or_else(|| CliError::Config(format!("{}: no `L` (or `b`) block", path.display())))?;
            let force = g.force.build(l)?;
            let loaded = parse_fom_matrices(&text, force.field).map_err(|e| CliError::at(&path, e))?;
            if !loaded.stable {
                eprintln!(
                    "warning: {}: symmetric part of W has a positive eigenvalue ({:e})",
                    path.display(),
                    loaded.fom.max_symmetric_eigenvalue()
                );
            }
            let ds = fom_dataset(
                &loaded.fom,
                g.n_series,
                g.n_steps,
                g.dt,
                &center(l, g.x0_ellipse)?,
                g.x0_range,
                integrator(g.integrator, g.rk4_substeps),
                &mut rng,
            )?;
            (ds, "load-matrices")
        }
    };
    let mut dataset = dataset.with_provenance("generator", kind);
    for (k, v) in prov.entries() {
        dataset = dataset.with_provenance(k, v);
    }
    let out = cfg.resolve(&c.output);
    save_dataset(&dataset, &out).map_err(|e| CliError::at(&out, e))?;
    if let Some(m) = &c.matrices_output {
        let sys = fom.as_ref().ok_or_else(|| {
            CliError::Config("matrices_output is only available for the stable-fom generator".into())
        })?;
        let path = cfg.resolve(m);
        save_fom_matrices(sys, &prov.entries(), &path).map_err(|e| CliError::at(&path, e))?;
    }
    Ok(format!(
        "wrote {} series (l = {}, dt = {}) to {} [latent-rom {TOOL_VERSION}, config {}]\n",
        dataset.len(),
        dataset.l,
        dataset.dt,
        out.display(),
        &cfg.hash[..12]
    ))
}
