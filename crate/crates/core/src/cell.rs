//! Discrete-time forward dynamics.
//!
//! The recurrent cell linearizes the force about the current observed state,
//! so each step of the implicit midpoint rule reduces to one linear solve
//! with the `p×p` matrix
//!
//! ```text
//! M = I - ½(D_d + S_d) - ¼ R_d J_f(x_i) R_dᵀ
//! ```
//!
//! followed by
//!
//! ```text
//! z_{i+1} = M⁻¹(2 z_i + R_d f(x_i)) - z_i
//! x_{i+1} = x_i + ½ R_dᵀ (z_i + z_{i+1} + 2 z₀)
//! ```
//!
//! where the `z₀` offset is only present when the model carries one.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::forces::ForceField;
use crate::linalg::{max_abs, Lu};
use crate::model::{CellKind, ModelParams};

/// States whose entries exceed this magnitude abort a rollout.
pub const STATE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub z: DVector<f64>,
    pub x: DVector<f64>,
    pub step_index: usize,
}

impl CellState {
    pub fn new(z: DVector<f64>, x: DVector<f64>) -> Self {
        Self { z, x, step_index: 0 }
    }

    fn check(&self) -> Result<()> {
        let m = max_abs(&self.z).max(max_abs(&self.x));
        if m.is_finite() && m <= STATE_LIMIT {
            Ok(())
        } else {
            Err(Error::NonFiniteState {
                step: self.step_index,
                magnitude: if m.is_nan() { f64::NAN } else { m },
            })
        }
    }
}

/// Forward quantities of one step, retained for the reverse pass.
#[derive(Debug, Clone)]
pub struct StepRecord {
    /// Factorization of `M` (midpoint cells only).
    pub m_factorization: Option<Lu>,
    /// `y = M⁻¹(2 z_i + R_d f(x_i)) = z_i + z_{i+1}` (midpoint cells only).
    pub y: Option<DVector<f64>>,
    pub f_value: DVector<f64>,
    pub jac_value: DMatrix<f64>,
    pub state_in: CellState,
    pub state_out: CellState,
}

/// Everything a rollout needs to keep for backpropagation.
#[derive(Debug, Clone)]
pub struct RolloutCache {
    pub kind: CellKind,
    pub initial: CellState,
    pub records: Vec<StepRecord>,
}

impl RolloutCache {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of step-matrix factorizations held by the cache.
    pub fn factorizations(&self) -> usize {
        self.records.iter().filter(|r| r.m_factorization.is_some()).count()
    }

    /// Observed outputs `x_1, ..., x_n`.
    pub fn outputs(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.records.iter().map(|r| &r.state_out.x)
    }
}

fn check_dims(params: &ModelParams, force: &dyn ForceField, state: &CellState) -> Result<()> {
    if state.z.len() != params.p() || state.x.len() != params.l() || force.dim() != params.l() {
        return Err(Error::DimensionMismatch(format!(
            "model (p={}, l={}), force dim {}, state (z: {}, x: {})",
            params.p(),
            params.l(),
            force.dim(),
            state.z.len(),
            state.x.len()
        )));
    }
    Ok(())
}

/// `M = I - ½(D_d + S_d) - ¼ R_d J R_dᵀ`.
pub fn assemble_m(params: &ModelParams, jac: &DMatrix<f64>) -> DMatrix<f64> {
    let p = params.p();
    let rj = &params.r * jac;
    let mut m = rj * params.r.transpose() * -0.25;
    m -= params.latent_matrix() * 0.5;
    for k in 0..p {
        m[(k, k)] += 1.0;
    }
    m
}

/// One step of the linearized implicit midpoint cell.
pub fn step_midpoint_linearized(
    params: &ModelParams,
    force: &dyn ForceField,
    state: &CellState,
) -> Result<(CellState, StepRecord)> {
    check_dims(params, force, state)?;
    let step = state.step_index;
    let f = force.force(&state.x)?;
    let jac = force.jacobian(&state.x)?;
    let m = assemble_m(params, &jac);
    let lu = Lu::factor(m).ok_or(Error::SingularStep { step })?;
    let b = &state.z * 2.0 + &params.r * &f;
    let y = lu.solve(&b);
    let z_next = &y - &state.z;
    let mut x_next = &state.x + params.r.tr_mul(&y) * 0.5;
    if let Some(z0) = &params.z0 {
        x_next += params.r.tr_mul(z0);
    }
    let next = CellState {
        z: z_next,
        x: x_next,
        step_index: step + 1,
    };
    next.check()?;
    let record = StepRecord {
        m_factorization: Some(lu),
        y: Some(y),
        f_value: f,
        jac_value: jac,
        state_in: state.clone(),
        state_out: next.clone(),
    };
    Ok((next, record))
}

/// One forward-Euler step: `z' = z + (D_d + S_d) z + R_d f(x)`,
/// `x' = x + R_dᵀ (z + z₀)`.
pub fn step_euler(params: &ModelParams, force: &dyn ForceField, state: &CellState) -> Result<CellState> {
    euler_with_record(params, force, state).map(|(s, _)| s)
}

fn euler_with_record(
    params: &ModelParams,
    force: &dyn ForceField,
    state: &CellState,
) -> Result<(CellState, StepRecord)> {
    check_dims(params, force, state)?;
    let f = force.force(&state.x)?;
    let z_next = &state.z + params.latent_matrix() * &state.z + &params.r * &f;
    let mut drive = state.z.clone();
    if let Some(z0) = &params.z0 {
        drive += z0;
    }
    let x_next = &state.x + params.r.tr_mul(&drive);
    let next = CellState {
        z: z_next,
        x: x_next,
        step_index: state.step_index + 1,
    };
    next.check()?;
    let record = StepRecord {
        m_factorization: None,
        y: None,
        f_value: f,
        // Only needed by the reverse pass through f(x).
        jac_value: force.jacobian(&state.x)?,
        state_in: state.clone(),
        state_out: next.clone(),
    };
    Ok((next, record))
}

/// One step of whichever cell `params.kind` names.
pub fn step(
    params: &ModelParams,
    force: &dyn ForceField,
    state: &CellState,
) -> Result<(CellState, StepRecord)> {
    if params.kind.is_midpoint() {
        step_midpoint_linearized(params, force, state)
    } else {
        euler_with_record(params, force, state)
    }
}

/// Runs the cell `n_steps` times from `(z_init, x0)`.
///
/// Returns the states after each step (`x_1, ..., x_n`) and the cache for
/// the reverse pass.
pub fn rollout(
    params: &ModelParams,
    force: &dyn ForceField,
    x0: &DVector<f64>,
    z_init: &DVector<f64>,
    n_steps: usize,
) -> Result<(Vec<CellState>, RolloutCache)> {
    let initial = CellState::new(z_init.clone(), x0.clone());
    check_dims(params, force, &initial)?;
    let mut states = Vec::with_capacity(n_steps);
    let mut records = Vec::with_capacity(n_steps);
    let mut current = initial.clone();
    for _ in 0..n_steps {
        let (next, record) = step(params, force, &current)?;
        states.push(next.clone());
        records.push(record);
        current = next;
    }
    Ok((
        states,
        RolloutCache {
            kind: params.kind,
            initial,
            records,
        },
    ))
}

/// Rollout that keeps only the observed trajectory `x_0, x_1, ..., x_n`.
pub fn predict(
    params: &ModelParams,
    force: &dyn ForceField,
    x0: &DVector<f64>,
    n_steps: usize,
) -> Result<Vec<DVector<f64>>> {
    let mut current = CellState::new(DVector::zeros(params.p()), x0.clone());
    check_dims(params, force, &current)?;
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(x0.clone());
    for _ in 0..n_steps {
        current = step(params, force, &current)?.0;
        out.push(current.x.clone());
    }
    Ok(out)
}

/// Residual of the linearized implicit equations for a step `state → next`
/// (max-norm over both blocks). Models with `z₀` are not covered.
pub fn linearized_residual(
    params: &ModelParams,
    force: &dyn ForceField,
    state: &CellState,
    next: &CellState,
) -> Result<f64> {
    let f = force.force(&state.x)?;
    let jac = force.jacobian(&state.x)?;
    let zsum = &state.z + &next.z;
    let r1 = &next.z
        - &state.z
        - params.latent_matrix() * &zsum * 0.5
        - &params.r * (&jac * (&next.x - &state.x)) * 0.5
        - &params.r * &f;
    let r2 = &next.x - &state.x - params.r.tr_mul(&zsum) * 0.5;
    Ok(r1.amax().max(r2.amax()))
}

/// Settings for the reference Newton solve of the full midpoint rule.
#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-12,
        }
    }
}

/// One step of the full (non-linearized) implicit midpoint rule, solved by
/// Newton's method from the linearized step. Reference only.
pub fn step_midpoint_full(
    params: &ModelParams,
    force: &dyn ForceField,
    state: &CellState,
    newton: NewtonOptions,
) -> Result<CellState> {
    check_dims(params, force, state)?;
    let (p, l) = (params.p(), params.l());
    let a = params.latent_matrix();
    let offset = params
        .z0
        .as_ref()
        .map_or_else(|| DVector::zeros(l), |z0| params.r.tr_mul(z0));
    let (guess, _) = step_midpoint_linearized(params, force, state)?;
    let mut z = guess.z;
    let mut x = guess.x;

    let residual = |z: &DVector<f64>, x: &DVector<f64>| -> Result<(DVector<f64>, DVector<f64>)> {
        let mid = (&state.x + x) * 0.5;
        let zsum = &state.z + z;
        let r1 = z - &state.z - &a * &zsum * 0.5 - &params.r * force.force(&mid)?;
        let r2 = x - &state.x - params.r.tr_mul(&zsum) * 0.5 - &offset;
        Ok((r1, r2))
    };
    let scale = 1.0 + max_abs(&state.z).max(max_abs(&state.x));
    let mut res = f64::INFINITY;
    for _ in 0..=newton.max_iter {
        let (r1, r2) = residual(&z, &x)?;
        res = r1.amax().max(r2.amax());
        if res <= newton.tol * scale {
            let next = CellState {
                z,
                x,
                step_index: state.step_index + 1,
            };
            next.check()?;
            return Ok(next);
        }
        let mid = (&state.x + &x) * 0.5;
        let jac = force.jacobian(&mid)?;
        let mut big = DMatrix::zeros(p + l, p + l);
        big.view_mut((0, 0), (p, p)).copy_from(&(DMatrix::identity(p, p) - &a * 0.5));
        big.view_mut((0, p), (p, l)).copy_from(&(&params.r * &jac * -0.5));
        big.view_mut((p, 0), (l, p)).copy_from(&(params.r.transpose() * -0.5));
        big.view_mut((p, p), (l, l)).copy_from(&DMatrix::identity(l, l));
        let mut rhs = DVector::zeros(p + l);
        rhs.rows_mut(0, p).copy_from(&r1);
        rhs.rows_mut(p, l).copy_from(&r2);
        let delta = big
            .lu()
            .solve(&rhs)
            .ok_or(Error::SingularStep { step: state.step_index })?;
        z -= delta.rows(0, p);
        x -= delta.rows(p, l);
    }
    Err(Error::NewtonDiverged {
        iterations: newton.max_iter,
        residual: res,
    })
}

/// Exact one-step linear map of the cell for the force `f(x) = -T x`,
/// acting on the stacked state `(z, x)`. The `z₀` offset is affine and not
/// part of the matrix.
pub fn iteration_matrix(params: &ModelParams, t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (p, l) = (params.p(), params.l());
    if t.shape() != (l, l) {
        return Err(Error::DimensionMismatch(format!("T is {:?}, l = {l}", t.shape())));
    }
    let rt = &params.r * t;
    let mut a = DMatrix::zeros(p + l, p + l);
    if !params.kind.is_midpoint() {
        a.view_mut((0, 0), (p, p))
            .copy_from(&(DMatrix::identity(p, p) + params.latent_matrix()));
        a.view_mut((0, p), (p, l)).copy_from(&(-rt));
        a.view_mut((p, 0), (l, p)).copy_from(&params.r.transpose());
        a.view_mut((p, p), (l, l)).copy_from(&DMatrix::identity(l, l));
        return Ok(a);
    }
    let m = assemble_m(params, &(-t));
    let lu = Lu::factor(m).ok_or(Error::SingularStep { step: 0 })?;
    // Columns of M⁻¹ and M⁻¹ R T.
    let minv = DMatrix::from_columns(
        &(0..p)
            .map(|j| lu.solve(&DVector::from_fn(p, |i, _| if i == j { 1.0 } else { 0.0 })))
            .collect::<Vec<_>>(),
    );
    let minv_rt = &minv * &rt;
    let mut zz = &minv * 2.0;
    for k in 0..p {
        zz[(k, k)] -= 1.0;
    }
    a.view_mut((0, 0), (p, p)).copy_from(&zz);
    a.view_mut((0, p), (p, l)).copy_from(&(-&minv_rt));
    a.view_mut((p, 0), (l, p)).copy_from(&params.r.tr_mul(&minv));
    let mut xx = params.r.tr_mul(&minv_rt) * -0.5;
    for k in 0..l {
        xx[(k, k)] += 1.0;
    }
    a.view_mut((p, p), (l, l)).copy_from(&xx);
    Ok(a)
}
