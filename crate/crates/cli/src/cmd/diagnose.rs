use std::fmt::Write as _;
use std::path::PathBuf;

use latent_rom::cell::{iteration_matrix, rollout, CellState};
use latent_rom::diagnostics::{continuous_eigs, lyapunov_series, max_increase, spectral_radius};
use latent_rom::io::{load_dataset, TOOL_VERSION};
use nalgebra::DVector;

use super::predict::{load_model_with_force, meta_value};
use crate::error::{CliError, CliResult};

pub struct DiagnoseArgs {
    pub model: PathBuf,
    /// The probe rollout starts from this dataset's first series.
    pub data: Option<PathBuf>,
    pub probe_steps: usize,
    pub out: Option<PathBuf>,
}

const TOL: f64 = 1e-10;

fn yes(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "NO"
    }
}

pub fn run(args: &DiagnoseArgs) -> CliResult<String> {
    let (params, meta, spec, force) = load_model_with_force(&args.model)?;
    let mut r = String::new();
    let _ = writeln!(r, "# latent-rom {TOOL_VERSION} diagnose {}", args.model.display());
    for k in ["config_hash", "seed"] {
        if let Some(v) = meta_value(&meta, k) {
            let _ = writeln!(r, "model_{k} {v}");
        }
    }
    let _ = writeln!(r, "cell {}", params.kind);
    let _ = writeln!(r, "p {} l {} dt {}", params.p(), params.l(), params.dt);
    let _ = writeln!(r, "z0 {}", params.z0.is_some());
    let _ = writeln!(r, "force {}", spec.to_meta());
    let d = params.diag();
    let _ = writeln!(r, "D_d range [{:.6e}, {:.6e}]", d.min(), d.max());
    let _ = writeln!(r, "D_d <= 0: {}", yes(d.max() <= 0.0));

    match &force.stiffness {
        Some(t) => {
            match iteration_matrix(&params, t).and_then(|a| spectral_radius(&a)) {
                Ok(rho) => {
                    let _ = writeln!(r, "spectral_radius {rho:.12}");
                    let _ = writeln!(r, "spectral_radius <= 1: {}", yes(rho <= 1.0 + TOL));
                    if rho > 1.0 + TOL {
                        let _ = writeln!(r, "WARNING spectral radius exceeds 1: the linear iteration grows");
                    }
                }
                Err(e) => {
                    let _ = writeln!(r, "spectral_radius unavailable: {e}");
                }
            }
            let eigs = continuous_eigs(&params, t)?;
            let max_re = eigs.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
            let max_abs_re = eigs.iter().map(|e| e.re.abs()).fold(0.0, f64::max);
            let max_im = eigs.iter().map(|e| e.im.abs()).fold(0.0, f64::max);
            let _ = writeln!(r, "continuous max_re {max_re:.6e} max_abs_re {max_abs_re:.6e} max_abs_im {max_im:.6e}");
            let _ = writeln!(r, "continuous max Re <= 0: {}", yes(max_re <= TOL));
        }
        None => {
            let _ = writeln!(r, "spectral_radius n/a (nonlinear force)");
        }
    }

    let x0 = match &args.data {
        Some(p) => {
            let ds = load_dataset(p).map_err(|e| CliError::at(p, e))?;
            if ds.l != params.l() {
                return Err(CliError::Config(format!(
                    "model has l = {} but {} has l = {}",
                    params.l(),
                    p.display(),
                    ds.l
                )));
            }
            ds.series[0].initial().clone()
        }
        None => DVector::from_fn(params.l(), |i, _| ((i + 1) as f64).sin()),
    };
    let z_init = DVector::zeros(params.p());
    // A constant latent offset drives the state, so the energy only has to
    // decrease for the undriven part of the model.
    let mut probe = params.clone();
    if probe.z0.take().is_some() {
        let _ = writeln!(r, "lyapunov probe runs without z0");
    }
    match rollout(&probe, force.field.as_ref(), &x0, &z_init, args.probe_steps) {
        Ok((states, _)) => {
            let mut all = vec![CellState::new(z_init, x0)];
            all.extend(states);
            match lyapunov_series(&all, force.field.as_ref()) {
                Ok(v) => {
                    let inc = max_increase(&v);
                    let _ = writeln!(
                        r,
                        "lyapunov probe {} steps: V0 {:.6e} V_end {:.6e} max_increase {inc:.3e}",
                        args.probe_steps,
                        v[0],
                        v[v.len() - 1]
                    );
                    let _ = writeln!(r, "lyapunov non-increasing: {}", yes(v.len() < 2 || inc <= TOL));
                }
                Err(_) => {
                    let _ = writeln!(r, "lyapunov n/a (force has no energy)");
                }
            }
        }
        Err(e) => {
            let _ = writeln!(r, "lyapunov probe failed: {e}");
        }
    }
    if let Some(out) = &args.out {
        std::fs::write(out, &r).map_err(|e| CliError::io(out, e))?;
    }
    Ok(r)
}
