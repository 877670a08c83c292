//! Model parameterization, canonical form, and continuous-level stability.
//!
//! The continuous model couples latent variables `z` and observed variables
//! `x` through
//!
//! ```text
//! ż = (D + S) z + R f(x)
//! ẋ = Rᵀ z
//! ```
//!
//! with `D` diagonal and `S` skew-symmetric. For a conservative force it is
//! Lyapunov stable whenever `D ⪯ 0`, with `V = ½‖z‖² + E(x)`.
//!
//! The trainable discrete parameters are unconstrained: the diagonal is
//! generated by `d = -θ²` and the skew part by `S = C - Cᵀ`, so every
//! parameter vector satisfies the stability constraints.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::forces::ForceField;

/// The discrete cell a parameter set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    /// Linearized implicit midpoint with `D_d ⪯ 0` enforced by `d = -θ²`.
    MidpointStable,
    /// Linearized implicit midpoint with a free diagonal `d = θ`.
    MidpointUnconstrained,
    /// Forward Euler with `D_d ⪯ 0`.
    Euler,
}

impl CellKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::MidpointStable => "midpoint-stable",
            CellKind::MidpointUnconstrained => "midpoint-unconstrained",
            CellKind::Euler => "euler",
        }
    }

    /// Whether the diagonal is generated by the non-positive map.
    pub fn constrained(self) -> bool {
        !matches!(self, CellKind::MidpointUnconstrained)
    }

    pub fn is_midpoint(self) -> bool {
        !matches!(self, CellKind::Euler)
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "midpoint-stable" => Ok(CellKind::MidpointStable),
            "midpoint-unconstrained" => Ok(CellKind::MidpointUnconstrained),
            "euler" => Ok(CellKind::Euler),
            other => Err(Error::InvalidArgument(format!(
                "unknown cell `{other}` (expected euler, midpoint-unconstrained or midpoint-stable)"
            ))),
        }
    }
}

/// `d_k = -θ_k²`: the non-positive diagonal of `D_d`.
pub fn diag_from(theta: &DVector<f64>) -> DVector<f64> {
    theta.map(|t| -t * t)
}

/// `S = C - Cᵀ`, antisymmetric bit for bit.
pub fn skew_from(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !c.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "skew generator is {}x{}",
            c.nrows(),
            c.ncols()
        )));
    }
    let n = c.nrows();
    Ok(DMatrix::from_fn(n, n, |i, j| c[(i, j)] - c[(j, i)]))
}

/// Trainable parameters of the discrete model.
///
/// `D_d`, `S_d` and `R_d` absorb the timestep; `dt` is kept only to recover
/// the continuous model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub theta_d: DVector<f64>,
    pub c: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub z0: Option<DVector<f64>>,
    pub dt: f64,
    pub kind: CellKind,
}

impl ModelParams {
    pub fn new(
        theta_d: DVector<f64>,
        c: DMatrix<f64>,
        r: DMatrix<f64>,
        z0: Option<DVector<f64>>,
        dt: f64,
        kind: CellKind,
    ) -> Result<Self> {
        let p = theta_d.len();
        if p == 0 || r.ncols() == 0 {
            return Err(Error::InvalidArgument("p and l must be at least 1".into()));
        }
        if c.shape() != (p, p) || r.nrows() != p {
            return Err(Error::DimensionMismatch(format!(
                "theta_d has length {p} but C is {:?} and R is {:?}",
                c.shape(),
                r.shape()
            )));
        }
        if let Some(z0) = &z0 {
            if z0.len() != p {
                return Err(Error::DimensionMismatch(format!("z0 has length {}, p = {p}", z0.len())));
            }
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        Ok(Self {
            theta_d,
            c,
            r,
            z0,
            dt,
            kind,
        })
    }

    /// All-zero parameters: the identity map.
    pub fn zeros(p: usize, l: usize, dt: f64, kind: CellKind) -> Self {
        Self {
            theta_d: DVector::zeros(p),
            c: DMatrix::zeros(p, p),
            r: DMatrix::zeros(p, l),
            z0: None,
            dt,
            kind,
        }
    }

    /// Latent dimension `p`.
    pub fn p(&self) -> usize {
        self.theta_d.len()
    }

    /// Observed dimension `l`.
    pub fn l(&self) -> usize {
        self.r.ncols()
    }

    /// Diagonal of `D_d`.
    pub fn diag(&self) -> DVector<f64> {
        if self.kind.constrained() {
            diag_from(&self.theta_d)
        } else {
            self.theta_d.clone()
        }
    }

    /// `∂d_k/∂θ_k`.
    pub fn diag_derivative(&self) -> DVector<f64> {
        if self.kind.constrained() {
            self.theta_d.map(|t| -2.0 * t)
        } else {
            DVector::from_element(self.p(), 1.0)
        }
    }

    /// `S_d = C - Cᵀ`.
    pub fn skew(&self) -> DMatrix<f64> {
        skew_from(&self.c).expect("C is square by construction")
    }

    /// `D_d + S_d`.
    pub fn latent_matrix(&self) -> DMatrix<f64> {
        let mut a = self.skew();
        for (k, d) in self.diag().iter().enumerate() {
            a[(k, k)] += d;
        }
        a
    }

    /// Number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        let p = self.p();
        p + p * p + p * self.l() + self.z0.as_ref().map_or(0, |_| p)
    }

    /// Flattens the parameters as `θ_d, C, R, z₀` (matrices column-major).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        out.extend(self.theta_d.iter());
        out.extend(self.c.iter());
        out.extend(self.r.iter());
        if let Some(z0) = &self.z0 {
            out.extend(z0.iter());
        }
        out
    }

    /// Inverse of [`ModelParams::to_flat`], keeping shapes and metadata.
    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_scalars(), "flat parameter length");
        let mut it = flat.iter().copied();
        for v in self.theta_d.iter_mut() {
            *v = it.next().unwrap();
        }
        for v in self.c.iter_mut() {
            *v = it.next().unwrap();
        }
        for v in self.r.iter_mut() {
            *v = it.next().unwrap();
        }
        if let Some(z0) = &mut self.z0 {
            for v in z0.iter_mut() {
                *v = it.next().unwrap();
            }
        }
    }

    /// Name of the `k`-th flat parameter, e.g. `C[2,0]`.
    pub fn flat_name(&self, k: usize) -> String {
        let p = self.p();
        let l = self.l();
        if k < p {
            return format!("theta_d[{k}]");
        }
        let k = k - p;
        if k < p * p {
            return format!("C[{},{}]", k % p, k / p);
        }
        let k = k - p * p;
        if k < p * l {
            return format!("R[{},{}]", k % p, k / p);
        }
        format!("z0[{}]", k - p * l)
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

/// A full-order system `u̇ = W u + L f(x)`, `ẋ = Lᵀ u`.
#[derive(Debug, Clone)]
pub struct FomSystem {
    pub w: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub force: Arc<dyn ForceField>,
}

/// Tolerance on the largest eigenvalue of `(W + Wᵀ)/2`.
pub const FOM_STABILITY_TOL: f64 = 1e-12;

impl FomSystem {
    pub fn new(w: DMatrix<f64>, l: DMatrix<f64>, force: Arc<dyn ForceField>) -> Result<Self> {
        if !w.is_square() || l.nrows() != w.nrows() || force.dim() != l.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "W {:?}, L {:?}, force dimension {}",
                w.shape(),
                l.shape(),
                force.dim()
            )));
        }
        Ok(Self { w, l, force })
    }

    /// Latent dimension.
    pub fn latent_dim(&self) -> usize {
        self.w.nrows()
    }

    /// Observed dimension.
    pub fn observed_dim(&self) -> usize {
        self.l.ncols()
    }

    /// Largest eigenvalue of the symmetric part of `W`.
    pub fn max_symmetric_eigenvalue(&self) -> f64 {
        let sym = (&self.w + self.w.transpose()) * 0.5;
        SymmetricEigen::new(sym).eigenvalues.max()
    }

    /// `W + Wᵀ ⪯ 0` to [`FOM_STABILITY_TOL`].
    pub fn is_stable(&self) -> bool {
        self.max_symmetric_eigenvalue() <= FOM_STABILITY_TOL
    }

    /// Right-hand side of the system at `(u, x)`.
    pub fn rhs(&self, u: &DVector<f64>, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let f = self.force.force(x)?;
        let du = &self.w * u + &self.l * f;
        let dx = self.l.tr_mul(u);
        Ok((du, dx))
    }

    /// `V = ½‖u‖² + E(x)` when the force has an energy.
    pub fn lyapunov(&self, u: &DVector<f64>, x: &DVector<f64>) -> Option<f64> {
        Some(0.5 * u.norm_squared() + self.force.energy(x)?)
    }
}

/// Canonical form of a full-order system.
#[derive(Debug, Clone)]
pub struct Canonical {
    /// Eigenvalues of `(W + Wᵀ)/2`, ascending.
    pub d: DVector<f64>,
    /// `Pᵀ (W - Wᵀ)/2 P`.
    pub s: DMatrix<f64>,
    /// `Pᵀ L`.
    pub r: DMatrix<f64>,
    /// Orthogonal change of latent basis, `z = Pᵀ u`.
    pub p: DMatrix<f64>,
}

impl Canonical {
    /// The canonical system as a full-order system with `W = D + S`.
    pub fn to_fom(&self, force: Arc<dyn ForceField>) -> Result<FomSystem> {
        let w = DMatrix::from_diagonal(&self.d) + &self.s;
        FomSystem::new(w, self.r.clone(), force)
    }

    /// Maps a latent state of the original system into canonical coordinates.
    pub fn to_canonical(&self, u: &DVector<f64>) -> DVector<f64> {
        self.p.tr_mul(u)
    }
}

/// Rotates a full-order system into canonical form.
pub fn canonicalize(fom: &FomSystem) -> Result<Canonical> {
    if fom.w.iter().chain(fom.l.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Eigen("non-finite entries in W or L".into()));
    }
    let n = fom.latent_dim();
    let wt = fom.w.transpose();
    let sym = (&fom.w + &wt) * 0.5;
    let anti = (&fom.w - &wt) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen("symmetric eigendecomposition did not converge".into()))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let d = DVector::from_fn(n, |k, _| eig.eigenvalues[order[k]]);
    let p = DMatrix::from_fn(n, n, |i, k| eig.eigenvectors[(i, order[k])]);

    let orth = (p.tr_mul(&p) - DMatrix::<f64>::identity(n, n)).amax();
    if orth > 1e-12 {
        return Err(Error::Eigen(format!("eigenvector basis lost orthogonality ({orth:e})")));
    }
    let s_raw = p.tr_mul(&anti) * &p;
    // Re-antisymmetrize: rounding in the similarity transform breaks it slightly.
    let s = DMatrix::from_fn(n, n, |i, j| 0.5 * (s_raw[(i, j)] - s_raw[(j, i)]));
    let r = p.tr_mul(&fom.l);
    Ok(Canonical { d, s, r, p })
}

/// `D ⪯ 0`: every diagonal entry is non-positive.
pub fn is_stable_continuous(d: &DVector<f64>) -> bool {
    d.iter().all(|&v| v <= 0.0)
}

/// Continuous-time model recovered from discrete parameters.
#[derive(Debug, Clone)]
pub struct ContinuousModel {
    pub d: DVector<f64>,
    pub s: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl ContinuousModel {
    pub fn to_fom(&self, force: Arc<dyn ForceField>) -> Result<FomSystem> {
        let w = DMatrix::from_diagonal(&self.d) + &self.s;
        FomSystem::new(w, self.r.clone(), force)
    }
}

/// `(D_d, S_d, R_d) / dt`.
pub fn continuous_from_discrete(params: &ModelParams) -> ContinuousModel {
    let inv = 1.0 / params.dt;
    ContinuousModel {
        d: params.diag() * inv,
        s: params.skew() * inv,
        r: &params.r * inv,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forces::LinearForce;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diag_examples() {
        let d = diag_from(&DVector::from_vec(vec![0.0, 0.0]));
        assert!(d.iter().all(|&v| v == 0.0));
        assert_eq!(diag_from(&DVector::from_vec(vec![1.0])), DVector::from_vec(vec![-1.0]));
        assert_eq!(
            diag_from(&DVector::from_vec(vec![2.0, -3.0])),
            DVector::from_vec(vec![-4.0, -9.0])
        );
    }

    #[test]
    fn skew_examples() {
        let s = skew_from(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(s, DMatrix::zeros(3, 3));
        let c = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let s = skew_from(&c).unwrap();
        assert_eq!(s, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
        assert!(skew_from(&DMatrix::zeros(2, 3)).is_err());
    }

    proptest! {
        #[test]
        fn diag_is_non_positive(theta in proptest::collection::vec(-1e3f64..1e3, 1..20)) {
            let d = diag_from(&DVector::from_vec(theta));
            prop_assert!(is_stable_continuous(&d));
        }

        #[test]
        fn skew_is_exactly_antisymmetric(vals in proptest::collection::vec(-1e6f64..1e6, 25)) {
            let c = DMatrix::from_vec(5, 5, vals);
            let s = skew_from(&c).unwrap();
            prop_assert_eq!(&s + s.transpose(), DMatrix::zeros(5, 5));
        }
    }

    #[test]
    fn stability_predicate() {
        assert!(is_stable_continuous(&DVector::from_vec(vec![0.0, 0.0])));
        assert!(is_stable_continuous(&DVector::from_vec(vec![-1e-9, -5.0])));
        assert!(!is_stable_continuous(&DVector::from_vec(vec![1e-6, -1.0])));
    }

    #[test]
    fn canonicalize_skew_w() {
        let w = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, -2.0, -1.0, 0.0, 0.5, 2.0, -0.5, 0.0]);
        let l = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let fom = FomSystem::new(w.clone(), l.clone(), Arc::new(LinearForce::identity(1))).unwrap();
        let can = canonicalize(&fom).unwrap();
        assert!(can.d.amax() < 1e-15);
        // Any orthogonal P is allowed; the invariants are S = Pᵀ W P and R = Pᵀ L.
        assert!((&can.s - can.p.tr_mul(&w) * &can.p).amax() < 1e-14);
        assert!((&can.r - can.p.tr_mul(&l)).amax() < 1e-14);
    }

    #[test]
    fn canonicalize_diagonal_w() {
        let w = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        let fom = FomSystem::new(w, DMatrix::identity(2, 2), Arc::new(LinearForce::identity(2))).unwrap();
        let can = canonicalize(&fom).unwrap();
        assert!((can.d[0] + 2.0).abs() < 1e-14 && (can.d[1] + 1.0).abs() < 1e-14);
        assert!(can.s.amax() < 1e-15);
        assert!((can.p.tr_mul(&can.p) - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn random_canonical_form_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 6;
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let k = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let w = (&k - k.transpose()) - &b * b.transpose();
        let l = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let fom = FomSystem::new(w.clone(), l, Arc::new(LinearForce::identity(2))).unwrap();
        assert!(fom.is_stable());
        let can = canonicalize(&fom).unwrap();
        assert!(is_stable_continuous(&can.d.map(|v| v - 1e-12)));
        assert_eq!(&can.s + can.s.transpose(), DMatrix::zeros(n, n));
        let rebuilt = &can.p * (DMatrix::from_diagonal(&can.d) + &can.s) * can.p.transpose();
        assert!((rebuilt - w).amax() < 1e-12);
        for k in 1..n {
            assert!(can.d[k - 1] <= can.d[k]);
        }
    }

    #[test]
    fn continuous_recovery_divides_by_dt() {
        let mut params = ModelParams::zeros(1, 1, 0.01, CellKind::MidpointStable);
        params.theta_d[0] = 0.1;
        let cont = continuous_from_discrete(&params);
        assert!((cont.d[0] + 1.0).abs() < 1e-12);

        let zero = continuous_from_discrete(&ModelParams::zeros(3, 2, 0.5, CellKind::MidpointStable));
        assert_eq!(zero.d.amax() + zero.s.amax() + zero.r.amax(), 0.0);
    }

    #[test]
    fn flat_round_trip_and_names() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ModelParams::zeros(3, 2, 0.1, CellKind::MidpointStable);
        params.z0 = Some(DVector::zeros(3));
        let flat: Vec<f64> = (0..params.num_scalars()).map(|_| rng.random()).collect();
        params.set_flat(&flat);
        assert_eq!(params.to_flat(), flat);
        assert_eq!(params.flat_name(0), "theta_d[0]");
        assert_eq!(params.flat_name(3 + 4), "C[1,1]");
        assert_eq!(params.flat_name(3 + 9 + 5), "R[2,1]");
        assert_eq!(params.flat_name(3 + 9 + 6 + 2), "z0[2]");
    }

    #[test]
    fn unconstrained_diag_is_identity_map() {
        let mut params = ModelParams::zeros(2, 1, 0.1, CellKind::MidpointUnconstrained);
        params.theta_d = DVector::from_vec(vec![0.5, -0.25]);
        assert_eq!(params.diag(), params.theta_d);
        params.kind = CellKind::MidpointStable;
        assert_eq!(params.diag(), DVector::from_vec(vec![-0.25, -0.0625]));
    }

    #[test]
    fn cell_kind_parsing() {
        for kind in [CellKind::Euler, CellKind::MidpointStable, CellKind::MidpointUnconstrained] {
            assert_eq!(kind.as_str().parse::<CellKind>().unwrap(), kind);
        }
        assert!("rk4".parse::<CellKind>().is_err());
    }
}
