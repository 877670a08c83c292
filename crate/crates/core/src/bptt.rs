//! Reverse-mode differentiation of the rollout loss.
//!
//! The loss of one series is `(1/N) Σ_j ‖x̃_j - x_{k_j}‖²` over its targeted
//! steps, and the loss of a slice is the mean over its series. Gradients are
//! derived by hand for the two cells. For the midpoint cell the step
//! `y = M⁻¹ b` is differentiated with the solve-adjoint rule
//! `b̄ = M⁻ᵀ ȳ`, `M̄ = -b̄ yᵀ`, reusing the forward factorization.
//!
//! `M` depends on `x_i` through `J_f(x_i)`. In [`GradientMode::Exact`] that
//! dependence is propagated with [`ForceField::jac_dot`];
//! [`GradientMode::Approximate`] drops it (a Gauss-Newton-like gradient).

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::cell::{rollout, RolloutCache};
use crate::data::Series;
use crate::error::{Error, Result};
use crate::forces::ForceField;
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMode {
    #[default]
    Exact,
    /// Drops the `∂J_f/∂x` term.
    Approximate,
}

impl GradientMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GradientMode::Exact => "exact",
            GradientMode::Approximate => "approximate",
        }
    }
}

impl fmt::Display for GradientMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GradientMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(GradientMode::Exact),
            "approximate" => Ok(GradientMode::Approximate),
            other => Err(Error::InvalidArgument(format!(
                "unknown gradient mode `{other}` (expected exact or approximate)"
            ))),
        }
    }
}

/// Gradient of the loss with respect to every trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub g_theta_d: DVector<f64>,
    pub g_c: DMatrix<f64>,
    pub g_r: DMatrix<f64>,
    pub g_z0: Option<DVector<f64>>,
}

impl GradientSet {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let (p, l) = (params.p(), params.l());
        Self {
            g_theta_d: DVector::zeros(p),
            g_c: DMatrix::zeros(p, p),
            g_r: DMatrix::zeros(p, l),
            g_z0: params.z0.as_ref().map(|_| DVector::zeros(p)),
        }
    }

    /// Same layout as [`ModelParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.g_theta_d.iter().copied().collect();
        out.extend(self.g_c.iter());
        out.extend(self.g_r.iter());
        if let Some(z0) = &self.g_z0 {
            out.extend(z0.iter());
        }
        out
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        self.g_theta_d += &other.g_theta_d;
        self.g_c += &other.g_c;
        self.g_r += &other.g_r;
        if let (Some(a), Some(b)) = (&mut self.g_z0, &other.g_z0) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.g_theta_d *= s;
        self.g_c *= s;
        self.g_r *= s;
        if let Some(z0) = &mut self.g_z0 {
            *z0 *= s;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.to_flat().iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

/// Targets of one series and the rollout length they need.
fn series_targets<'a>(
    series: &'a Series,
    dt: f64,
    horizon: Option<usize>,
    index: usize,
) -> Result<(Vec<(usize, &'a DVector<f64>)>, usize)> {
    let targets = series.targets(dt, horizon, index)?;
    let n_steps = targets.iter().map(|(k, _)| *k).max().unwrap_or(0);
    Ok((targets, n_steps))
}

fn series_loss(params: &ModelParams, force: &dyn ForceField, series: &Series, horizon: Option<usize>, index: usize) -> Result<f64> {
    let (targets, n_steps) = series_targets(series, params.dt, horizon, index)?;
    if targets.is_empty() {
        return Ok(0.0);
    }
    let (states, _) = rollout(params, force, series.initial(), &DVector::zeros(params.p()), n_steps)?;
    let sum: f64 = targets
        .iter()
        .map(|(k, xt)| (*xt - &states[k - 1].x).norm_squared())
        .sum();
    Ok(sum / targets.len() as f64)
}

/// Mean over series of `(1/N) Σ_j ‖x̃_j - x_{t_j/dt}‖²`, using at most
/// `horizon` observations of each series.
pub fn loss(
    params: &ModelParams,
    force: &dyn ForceField,
    series: &[&Series],
    horizon: Option<usize>,
) -> Result<f64> {
    if series.is_empty() {
        return Ok(0.0);
    }
    let losses: Vec<f64> = series
        .par_iter()
        .enumerate()
        .map(|(i, s)| series_loss(params, force, s, horizon, i))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / series.len() as f64)
}

/// Exact gradient of one series' loss `weight · Σ_j ‖x̃_j - x_{k_j}‖²`
/// from a forward cache.
pub fn backward(
    params: &ModelParams,
    force: &dyn ForceField,
    cache: &RolloutCache,
    targets: &[(usize, &DVector<f64>)],
    weight: f64,
    mode: GradientMode,
) -> Result<GradientSet> {
    let (p, l) = (params.p(), params.l());
    if cache.kind != params.kind {
        return Err(Error::CacheMismatch(format!(
            "cache from a {} cell, parameters for {}",
            cache.kind, params.kind
        )));
    }
    if let Some(&(k, _)) = targets.iter().find(|(k, _)| *k == 0 || *k > cache.len()) {
        return Err(Error::CacheMismatch(format!(
            "target step {k} outside a rollout of {} steps",
            cache.len()
        )));
    }
    let mut grads = GradientSet::zeros_like(params);
    if cache.is_empty() {
        return Ok(grads);
    }
    let mut seeds: Vec<Option<DVector<f64>>> = vec![None; cache.len() + 1];
    for (k, xt) in targets {
        let out = &cache.records[k - 1].state_out.x;
        let g = (out - *xt) * (2.0 * weight);
        match &mut seeds[*k] {
            Some(acc) => *acc += g,
            slot @ None => *slot = Some(g),
        }
    }

    let r = &params.r;
    let a = params.latent_matrix();
    let mut g_diag = DVector::<f64>::zeros(p);
    let mut g_skew = DMatrix::<f64>::zeros(p, p);
    let mut zbar = DVector::<f64>::zeros(p);
    let mut xbar = DVector::<f64>::zeros(l);

    for (i, rec) in cache.records.iter().enumerate().rev() {
        if let Some(seed) = &seeds[i + 1] {
            xbar += seed;
        }
        let z_in = &rec.state_in.z;
        let (zbar_in, xbar_in) = if params.kind.is_midpoint() {
            let (lu, y) = match (&rec.m_factorization, &rec.y) {
                (Some(lu), Some(y)) => (lu, y),
                _ => return Err(Error::CacheMismatch(format!("step {i} lacks its factorization"))),
            };
            // x' = x + ½ Rᵀ y + Rᵀ z₀
            let ybar = r * &xbar * 0.5 + &zbar;
            grads.g_r.ger(0.5, y, &xbar, 1.0);
            if let (Some(z0), Some(gz0)) = (&params.z0, &mut grads.g_z0) {
                grads.g_r.ger(1.0, z0, &xbar, 1.0);
                *gz0 += r * &xbar;
            }
            // y = M⁻¹ b, b = 2z + R f
            let bbar = lu.solve_transpose(&ybar);
            let zbar_in = &bbar * 2.0 - &zbar;
            grads.g_r.ger(1.0, &bbar, &rec.f_value, 1.0);
            let u = r.tr_mul(&bbar);
            let ju = rec.jac_value.tr_mul(&u);
            let mut xbar_in = &xbar + &ju;
            // M = I - ½(D + S) - ¼ R J Rᵀ with M̄ = -b̄ yᵀ
            for k in 0..p {
                g_diag[k] += 0.5 * bbar[k] * y[k];
            }
            g_skew.ger(0.5, &bbar, y, 1.0);
            let v = r.tr_mul(y);
            grads.g_r.ger(0.25, &bbar, &(&rec.jac_value * &v), 1.0);
            grads.g_r.ger(0.25, y, &ju, 1.0);
            if mode == GradientMode::Exact && !force.constant_jacobian() {
                xbar_in += force.jac_dot(&rec.state_in.x, &v, &u)? * 0.25;
            }
            (zbar_in, xbar_in)
        } else {
            // x' = x + Rᵀ(z + z₀)
            let mut drive = z_in.clone();
            if let Some(z0) = &params.z0 {
                drive += z0;
            }
            let rx = r * &xbar;
            grads.g_r.ger(1.0, &drive, &xbar, 1.0);
            if let Some(gz0) = &mut grads.g_z0 {
                *gz0 += &rx;
            }
            // z' = z + (D + S) z + R f
            let zbar_in = rx + &zbar + a.tr_mul(&zbar);
            for k in 0..p {
                g_diag[k] += zbar[k] * z_in[k];
            }
            g_skew.ger(1.0, &zbar, z_in, 1.0);
            grads.g_r.ger(1.0, &zbar, &rec.f_value, 1.0);
            let xbar_in = &xbar + rec.jac_value.tr_mul(&r.tr_mul(&zbar));
            (zbar_in, xbar_in)
        };
        zbar = zbar_in;
        xbar = xbar_in;
    }

    grads.g_theta_d = g_diag.component_mul(&params.diag_derivative());
    grads.g_c = &g_skew - g_skew.transpose();
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    Ok(grads)
}

/// Loss and gradient over a slice of series. Per-series passes run in
/// parallel; the reduction runs in series order so results are reproducible.
pub fn loss_and_gradient(
    params: &ModelParams,
    force: &dyn ForceField,
    series: &[&Series],
    horizon: Option<usize>,
    mode: GradientMode,
) -> Result<(f64, GradientSet)> {
    let mut total = GradientSet::zeros_like(params);
    if series.is_empty() {
        return Ok((0.0, total));
    }
    let per_series: Vec<(f64, GradientSet)> = series
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let (targets, n_steps) = series_targets(s, params.dt, horizon, i)?;
            if targets.is_empty() {
                return Ok((0.0, GradientSet::zeros_like(params)));
            }
            let (_, cache) = rollout(params, force, s.initial(), &DVector::zeros(params.p()), n_steps)?;
            let weight = 1.0 / (targets.len() * series.len()) as f64;
            let sum: f64 = targets
                .iter()
                .map(|(k, xt)| (*xt - &cache.records[k - 1].state_out.x).norm_squared())
                .sum();
            let grads = backward(params, force, &cache, &targets, weight, mode)?;
            Ok((sum * weight, grads))
        })
        .collect::<Result<_>>()?;
    let mut value = 0.0;
    for (l, g) in &per_series {
        value += l;
        total.add_assign(g);
    }
    Ok((value, total))
}

/// One row of a gradient check.
#[derive(Debug, Clone)]
pub struct GradientEntry {
    pub name: String,
    pub analytic: f64,
    pub finite_difference: f64,
    pub rel_err: f64,
}

/// Analytic-versus-finite-difference comparison over every scalar parameter.
#[derive(Debug, Clone)]
pub struct GradientCheckReport {
    pub mode: GradientMode,
    pub max_rel_err: f64,
    /// Sorted by decreasing relative error.
    pub entries: Vec<GradientEntry>,
    /// The approximate mode on a force with a state-dependent Jacobian is
    /// expected to disagree with finite differences.
    pub discrepancy_expected: bool,
}

impl GradientCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Relative error `|g - fd| / (|fd| + 1e-12)`.
pub fn relative_error(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / (fd.abs() + 1e-12)
}

/// Compares [`loss_and_gradient`] with central differences of [`loss`].
pub fn gradient_check(
    params: &ModelParams,
    force: &dyn ForceField,
    series: &[&Series],
    horizon: Option<usize>,
    fd_step: f64,
    mode: GradientMode,
) -> Result<GradientCheckReport> {
    if !(fd_step > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step {fd_step}")));
    }
    let (_, grads) = loss_and_gradient(params, force, series, horizon, mode)?;
    let analytic = grads.to_flat();
    let base = params.to_flat();
    let fd: Vec<f64> = (0..base.len())
        .into_par_iter()
        .map(|k| {
            let mut trial = params.clone();
            let mut flat = base.clone();
            flat[k] = base[k] + fd_step;
            trial.set_flat(&flat);
            let lp = loss(&trial, force, series, horizon)?;
            flat[k] = base[k] - fd_step;
            trial.set_flat(&flat);
            let lm = loss(&trial, force, series, horizon)?;
            Ok((lp - lm) / (2.0 * fd_step))
        })
        .collect::<Result<_>>()?;
    let mut entries: Vec<GradientEntry> = analytic
        .iter()
        .zip(&fd)
        .enumerate()
        .map(|(k, (&a, &f))| GradientEntry {
            name: params.flat_name(k),
            analytic: a,
            finite_difference: f,
            rel_err: relative_error(a, f),
        })
        .collect();
    entries.sort_by(|a, b| b.rel_err.total_cmp(&a.rel_err));
    Ok(GradientCheckReport {
        mode,
        max_rel_err: entries.first().map_or(0.0, |e| e.rel_err),
        entries,
        discrepancy_expected: mode == GradientMode::Approximate && !force.constant_jacobian(),
    })
}
