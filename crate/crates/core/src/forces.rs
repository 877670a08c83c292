//! Force fields acting on the observed variables.
//!
//! Every force is a map `f: R^l -> R^l` together with its Jacobian `J_f`.
//! Conservative forces additionally expose the energy `E` with `f = -∇E`.
//! Ring-shaped structures store their points interleaved as
//! `(x_1, y_1, ..., x_m, y_m)`, so `l = 2m`.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector2};

use crate::error::{Error, Result};
use crate::linalg::asymmetry;

/// How a force produces its Jacobian.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacMode {
    Analytic,
    FiniteDifference,
}

/// Central-difference step used when a force has no analytic Jacobian.
pub fn default_fd_step(x: &DVector<f64>) -> f64 {
    1e-5 * (1.0 + x.amax())
}

/// A force on the observed state.
pub trait ForceField: Debug + Send + Sync {
    /// Dimension `l` of the observed state.
    fn dim(&self) -> usize;

    fn force(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    /// `J_f(x) = ∇f(x)`. Defaults to central finite differences.
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        fd_jacobian(self, x, default_fd_step(x))
    }

    fn jac_mode(&self) -> JacMode {
        JacMode::FiniteDifference
    }

    /// Energy `E(x) ≥ 0` with `f = -∇E`, for conservative forces.
    fn energy(&self, _x: &DVector<f64>) -> Option<f64> {
        None
    }

    /// Contraction `(∂J_f(x)/∂x · direction)ᵀ · left`, i.e. the gradient
    /// with respect to `x` of `leftᵀ J_f(x) direction`.
    ///
    /// The default differences two Jacobians along `direction`.
    fn jac_dot(
        &self,
        x: &DVector<f64>,
        direction: &DVector<f64>,
        left: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let dn = direction.amax();
        if dn == 0.0 {
            return Ok(DVector::zeros(self.dim()));
        }
        let eps = 1e-4 * (1.0 + x.amax()) / dn;
        let jp = self.jacobian(&(x + direction * eps))?;
        let jm = self.jacobian(&(x - direction * eps))?;
        Ok((jp - jm).transpose() * left / (2.0 * eps))
    }

    /// True when `J_f` does not depend on `x` (linear forces).
    fn constant_jacobian(&self) -> bool {
        false
    }
}

/// Central-difference Jacobian of `force` at `x` with step `h`.
pub fn fd_jacobian<F: ForceField + ?Sized>(
    force: &F,
    x: &DVector<f64>,
    h: f64,
) -> Result<DMatrix<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step {h}")));
    }
    let l = x.len();
    let mut jac = DMatrix::zeros(force.dim(), l);
    let mut xp = x.clone();
    for k in 0..l {
        let orig = xp[k];
        xp[k] = orig + h;
        let fp = force.force(&xp)?;
        xp[k] = orig - h;
        let fm = force.force(&xp)?;
        xp[k] = orig;
        jac.set_column(k, &((fp - fm) / (2.0 * h)));
    }
    Ok(jac)
}

/// Mixed second directional difference `∂_u ∂_v f(x)`. For a conservative
/// force this equals [`ForceField::jac_dot`]`(x, v, u)`, at the cost of four
/// force evaluations.
fn mixed_directional_difference<F: ForceField + ?Sized>(
    force: &F,
    x: &DVector<f64>,
    v: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (vn, un) = (v.amax(), u.amax());
    if vn == 0.0 || un == 0.0 {
        return Ok(DVector::zeros(force.dim()));
    }
    let scale = 1e-4 * (1.0 + x.amax());
    let (ev, eu) = (scale / vn, scale / un);
    let dv = v * ev;
    let du = u * eu;
    let fpp = force.force(&(x + &dv + &du))?;
    let fpm = force.force(&(x + &dv - &du))?;
    let fmp = force.force(&(x - &dv + &du))?;
    let fmm = force.force(&(x - &dv - &du))?;
    Ok((fpp - fpm - fmp + fmm) / (4.0 * ev * eu))
}

/// `f(x) = -T x` with `T` symmetric positive semi-definite.
#[derive(Debug, Clone)]
pub struct LinearForce {
    t: DMatrix<f64>,
}

impl LinearForce {
    pub fn new(t: DMatrix<f64>) -> Result<Self> {
        if !t.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "T is {}x{}",
                t.nrows(),
                t.ncols()
            )));
        }
        let asym = asymmetry(&t);
        if asym > 1e-10 {
            return Err(Error::AsymmetricT(asym));
        }
        Ok(Self { t })
    }

    /// `f(x) = -x`.
    pub fn identity(l: usize) -> Self {
        Self {
            t: DMatrix::identity(l, l),
        }
    }

    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.t
    }
}

impl ForceField for LinearForce {
    fn dim(&self) -> usize {
        self.t.nrows()
    }

    fn force(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(-(&self.t * x))
    }

    fn jacobian(&self, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(-&self.t)
    }

    fn jac_mode(&self) -> JacMode {
        JacMode::Analytic
    }

    fn energy(&self, x: &DVector<f64>) -> Option<f64> {
        Some(0.5 * x.dot(&(&self.t * x)))
    }

    fn jac_dot(
        &self,
        _x: &DVector<f64>,
        _direction: &DVector<f64>,
        _left: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        Ok(DVector::zeros(self.dim()))
    }

    fn constant_jacobian(&self) -> bool {
        true
    }
}

/// Closed ring of 2-D points, stored interleaved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RingTopology {
    n_points: usize,
}

impl RingTopology {
    pub fn new(n_points: usize) -> Result<Self> {
        if n_points < 3 {
            return Err(Error::InvalidArgument(format!(
                "a ring needs at least 3 points, got {n_points}"
            )));
        }
        Ok(Self { n_points })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    /// Observed dimension `l = 2·n_points`.
    pub fn dim(&self) -> usize {
        2 * self.n_points
    }

    pub fn next(&self, i: usize) -> usize {
        (i + 1) % self.n_points
    }

    pub fn prev(&self, i: usize) -> usize {
        (i + self.n_points - 1) % self.n_points
    }

    fn check(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "ring of {} points needs a vector of length {}, got {}",
                self.n_points,
                self.dim(),
                x.len()
            )));
        }
        Ok(())
    }
}

pub(crate) fn point(x: &DVector<f64>, i: usize) -> Vector2<f64> {
    Vector2::new(x[2 * i], x[2 * i + 1])
}

fn add_point(out: &mut DVector<f64>, i: usize, v: Vector2<f64>) {
    out[2 * i] += v.x;
    out[2 * i + 1] += v.y;
}

/// Hookean springs of stiffness `k_s` and rest length `R_L` between
/// neighbouring ring points.
#[derive(Debug, Clone)]
pub struct SpringRing {
    topology: RingTopology,
    k_s: f64,
    rest_length: f64,
}

/// Edge lengths below this make the spring force with `R_L > 0` an error.
pub const MIN_SPRING_LENGTH: f64 = 1e-8;

impl SpringRing {
    pub fn new(topology: RingTopology, k_s: f64, rest_length: f64) -> Result<Self> {
        if !(k_s > 0.0) || !(rest_length >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "spring ring needs k_s > 0 and R_L >= 0 (got {k_s}, {rest_length})"
            )));
        }
        Ok(Self {
            topology,
            k_s,
            rest_length,
        })
    }

    pub fn topology(&self) -> RingTopology {
        self.topology
    }

    pub fn rest_length(&self) -> f64 {
        self.rest_length
    }

    /// The constant stiffness `T` with `f(x) = -T x` that the springs
    /// reduce to when `R_L = 0`.
    pub fn zero_rest_stiffness(&self) -> DMatrix<f64> {
        let n = self.topology.n_points();
        let mut t = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            let j = self.topology.next(i);
            for c in 0..2 {
                let (a, b) = (2 * i + c, 2 * j + c);
                t[(a, a)] += self.k_s;
                t[(b, b)] += self.k_s;
                t[(a, b)] -= self.k_s;
                t[(b, a)] -= self.k_s;
            }
        }
        t
    }

    /// Edge vector `x_i - x_j`, its length, and the edge stiffness block
    /// `K = k_s (I - R_L/d (I - e eᵀ))`.
    fn edge(&self, x: &DVector<f64>, i: usize) -> Result<(Vector2<f64>, f64, nalgebra::Matrix2<f64>)> {
        let j = self.topology.next(i);
        let r = point(x, i) - point(x, j);
        let d = r.norm();
        let id = nalgebra::Matrix2::identity();
        if self.rest_length == 0.0 {
            return Ok((r, d, id * self.k_s));
        }
        if d < MIN_SPRING_LENGTH {
            return Err(Error::CoincidentPoints { i, j });
        }
        let e = r / d;
        let s = self.rest_length / d;
        Ok((r, d, (id - (id - e * e.transpose()) * s) * self.k_s))
    }
}

impl ForceField for SpringRing {
    fn dim(&self) -> usize {
        self.topology.dim()
    }

    fn force(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.topology.check(x)?;
        let mut f = DVector::zeros(self.dim());
        for i in 0..self.topology.n_points() {
            let j = self.topology.next(i);
            let r = point(x, i) - point(x, j);
            let d = r.norm();
            let coef = if self.rest_length == 0.0 {
                self.k_s
            } else {
                if d < MIN_SPRING_LENGTH {
                    return Err(Error::CoincidentPoints { i, j });
                }
                self.k_s * (1.0 - self.rest_length / d)
            };
            // Force on i pulls toward j and vice versa.
            add_point(&mut f, i, -r * coef);
            add_point(&mut f, j, r * coef);
        }
        Ok(f)
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.topology.check(x)?;
        let l = self.dim();
        let mut jac = DMatrix::zeros(l, l);
        for i in 0..self.topology.n_points() {
            let j = self.topology.next(i);
            let (_, _, k) = self.edge(x, i)?;
            for a in 0..2 {
                for b in 0..2 {
                    let v = k[(a, b)];
                    jac[(2 * i + a, 2 * i + b)] -= v;
                    jac[(2 * j + a, 2 * j + b)] -= v;
                    jac[(2 * i + a, 2 * j + b)] += v;
                    jac[(2 * j + a, 2 * i + b)] += v;
                }
            }
        }
        Ok(jac)
    }

    fn jac_mode(&self) -> JacMode {
        JacMode::Analytic
    }

    fn energy(&self, x: &DVector<f64>) -> Option<f64> {
        if x.len() != self.dim() {
            return None;
        }
        let mut e = 0.0;
        for i in 0..self.topology.n_points() {
            let j = self.topology.next(i);
            let d = (point(x, i) - point(x, j)).norm();
            e += 0.5 * self.k_s * (d - self.rest_length).powi(2);
        }
        Some(e)
    }

    fn jac_dot(
        &self,
        x: &DVector<f64>,
        direction: &DVector<f64>,
        left: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.topology.check(x)?;
        let mut out = DVector::zeros(self.dim());
        if self.rest_length == 0.0 {
            return Ok(out);
        }
        for i in 0..self.topology.n_points() {
            let j = self.topology.next(i);
            let (r, d, _) = self.edge(x, i)?;
            let e = r / d;
            let s = self.rest_length / d;
            let delta = point(direction, i) - point(direction, j);
            let ed = e.dot(&delta);
            let p = nalgebra::Matrix2::identity() - e * e.transpose();
            let pd = p * delta;
            // Directional derivative of the edge stiffness block along delta.
            let dk = (p * ed + pd * e.transpose() + e * pd.transpose()) * (self.k_s * s / d);
            let du = point(left, i) - point(left, j);
            let g = dk * du;
            add_point(&mut out, i, -g);
            add_point(&mut out, j, g);
        }
        Ok(out)
    }

    fn constant_jacobian(&self) -> bool {
        self.rest_length == 0.0
    }
}

/// Discrete bending energy `σ_b Σ (1 - cos(ω_i - ω_i⁰))` over the interior
/// angles of a ring.
#[derive(Debug, Clone)]
pub struct BendingRing {
    topology: RingTopology,
    sigma_b: f64,
    omega0: Vec<f64>,
}

/// Signed angle at point `i` between `x_{i-1} - x_i` and `x_{i+1} - x_i`.
fn bend_angle(topology: &RingTopology, x: &DVector<f64>, i: usize) -> Result<(f64, Vector2<f64>, Vector2<f64>)> {
    let c = point(x, i);
    let a = point(x, topology.prev(i)) - c;
    let b = point(x, topology.next(i)) - c;
    if a.norm_squared() == 0.0 || b.norm_squared() == 0.0 {
        return Err(Error::DegenerateEdge(i));
    }
    let cross = a.x * b.y - a.y * b.x;
    Ok((cross.atan2(a.dot(&b)), a, b))
}

/// Interior angles `ω_i` of every ring point.
pub fn ring_angles(topology: &RingTopology, x: &DVector<f64>) -> Result<Vec<f64>> {
    topology.check(x)?;
    (0..topology.n_points())
        .map(|i| bend_angle(topology, x, i).map(|(w, _, _)| w))
        .collect()
}

impl BendingRing {
    pub fn new(topology: RingTopology, sigma_b: f64, omega0: Vec<f64>) -> Result<Self> {
        if omega0.len() != topology.n_points() {
            return Err(Error::DimensionMismatch(format!(
                "{} reference angles for {} points",
                omega0.len(),
                topology.n_points()
            )));
        }
        Ok(Self {
            topology,
            sigma_b,
            omega0,
        })
    }

    /// Bending force whose reference angles are those of `x_ref`.
    pub fn from_reference(topology: RingTopology, sigma_b: f64, x_ref: &DVector<f64>) -> Result<Self> {
        let omega0 = ring_angles(&topology, x_ref)?;
        Self::new(topology, sigma_b, omega0)
    }

    pub fn reference_angles(&self) -> &[f64] {
        &self.omega0
    }
}

impl ForceField for BendingRing {
    fn dim(&self) -> usize {
        self.topology.dim()
    }

    fn force(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.topology.check(x)?;
        let mut f = DVector::zeros(self.dim());
        for i in 0..self.topology.n_points() {
            let (w, a, b) = bend_angle(&self.topology, x, i)?;
            let de_dw = self.sigma_b * (w - self.omega0[i]).sin();
            let dwda = Vector2::new(a.y, -a.x) / a.norm_squared();
            let dwdb = Vector2::new(-b.y, b.x) / b.norm_squared();
            add_point(&mut f, self.topology.prev(i), -dwda * de_dw);
            add_point(&mut f, self.topology.next(i), -dwdb * de_dw);
            add_point(&mut f, i, (dwda + dwdb) * de_dw);
        }
        Ok(f)
    }

    fn energy(&self, x: &DVector<f64>) -> Option<f64> {
        let w = ring_angles(&self.topology, x).ok()?;
        Some(
            w.iter()
                .zip(&self.omega0)
                .map(|(w, w0)| self.sigma_b * (1.0 - (w - w0).cos()))
                .sum(),
        )
    }

    fn jac_dot(
        &self,
        x: &DVector<f64>,
        direction: &DVector<f64>,
        left: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        mixed_directional_difference(self, x, direction, left)
    }
}

/// Sum of several forces on the same observed space.
#[derive(Debug, Clone)]
pub struct SumForce {
    parts: Vec<Arc<dyn ForceField>>,
}

impl SumForce {
    pub fn new(parts: Vec<Arc<dyn ForceField>>) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Err(Error::InvalidArgument("empty force sum".into()));
        };
        let l = first.dim();
        if parts.iter().any(|p| p.dim() != l) {
            return Err(Error::DimensionMismatch("force sum over different dimensions".into()));
        }
        Ok(Self { parts })
    }
}

impl ForceField for SumForce {
    fn dim(&self) -> usize {
        self.parts[0].dim()
    }

    fn force(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut acc = DVector::zeros(self.dim());
        for p in &self.parts {
            acc += p.force(x)?;
        }
        Ok(acc)
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let l = self.dim();
        let mut acc = DMatrix::zeros(l, l);
        for p in &self.parts {
            acc += p.jacobian(x)?;
        }
        Ok(acc)
    }

    fn jac_mode(&self) -> JacMode {
        if self.parts.iter().all(|p| p.jac_mode() == JacMode::Analytic) {
            JacMode::Analytic
        } else {
            JacMode::FiniteDifference
        }
    }

    fn energy(&self, x: &DVector<f64>) -> Option<f64> {
        self.parts.iter().map(|p| p.energy(x)).sum()
    }

    fn jac_dot(
        &self,
        x: &DVector<f64>,
        direction: &DVector<f64>,
        left: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let mut acc = DVector::zeros(self.dim());
        for p in &self.parts {
            acc += p.jac_dot(x, direction, left)?;
        }
        Ok(acc)
    }

    fn constant_jacobian(&self) -> bool {
        self.parts.iter().all(|p| p.constant_jacobian())
    }
}

/// Regular `n`-gon of circumradius `radius` centred at the origin.
pub fn regular_polygon(n: usize, radius: f64) -> DVector<f64> {
    let mut x = DVector::zeros(2 * n);
    for k in 0..n {
        let phi = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        x[2 * k] = radius * phi.cos();
        x[2 * k + 1] = radius * phi.sin();
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_vec(n: usize, rng: &mut ChaCha8Rng, scale: f64) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
    }

    /// A perturbed circle: well-separated points, no degenerate edges.
    fn wobbly_ring(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
        regular_polygon(n, 1.0) + random_vec(2 * n, rng, 0.05)
    }

    fn random_spd(l: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let b = DMatrix::from_fn(l, l, |_, _| rng.random_range(-1.0..1.0));
        &b * b.transpose()
    }

    fn unit_direction(l: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let d = random_vec(l, rng, 1.0);
        let n = d.norm();
        d / n
    }

    fn check_conservative(force: &dyn ForceField, x: &DVector<f64>, rng: &mut ChaCha8Rng) {
        let h = 1e-5;
        let f = force.force(x).unwrap();
        for _ in 0..5 {
            let d = unit_direction(x.len(), rng);
            let ep = force.energy(&(x + &d * h)).unwrap();
            let em = force.energy(&(x - &d * h)).unwrap();
            let fd = -(ep - em) / (2.0 * h);
            let scale = 1.0 + f.norm();
            assert!(
                (f.dot(&d) - fd).abs() <= 1e-5 * scale,
                "⟨f,d⟩ = {} vs {}",
                f.dot(&d),
                fd
            );
        }
    }

    #[test]
    fn identity_force_is_minus_x() {
        let f = LinearForce::identity(3);
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        assert_eq!(f.force(&x).unwrap(), -&x);
        let z = DVector::zeros(3);
        assert_eq!(f.force(&z).unwrap(), z);
        assert_eq!(f.energy(&z), Some(0.0));
    }

    #[test]
    fn linear_force_jacobian_is_negative_semidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_spd(5, &mut rng);
        let f = LinearForce::new(t).unwrap();
        let jac = f.jacobian(&DVector::zeros(5)).unwrap();
        for _ in 0..50 {
            let u = random_vec(5, &mut rng, 1.0);
            assert!(u.dot(&(&jac * &u)) <= 1e-12);
        }
        check_conservative(&f, &random_vec(5, &mut rng, 1.0), &mut rng);
    }

    #[test]
    fn asymmetric_stiffness_is_rejected() {
        let t = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(LinearForce::new(t), Err(Error::AsymmetricT(_))));
    }

    #[test]
    fn zero_rest_length_springs_are_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let topo = RingTopology::new(6).unwrap();
        let springs = SpringRing::new(topo, 3.0, 0.0).unwrap();
        let linear = LinearForce::new(springs.zero_rest_stiffness()).unwrap();
        for _ in 0..5 {
            let x = random_vec(12, &mut rng, 2.0);
            let diff = springs.force(&x).unwrap() - linear.force(&x).unwrap();
            assert!(diff.amax() <= 1e-12);
            let jd = springs.jacobian(&x).unwrap() - linear.jacobian(&x).unwrap();
            assert!(jd.amax() <= 1e-12);
        }
        // J ⪯ 0 everywhere.
        let jac = springs.jacobian(&DVector::zeros(12)).unwrap();
        let ev = nalgebra::SymmetricEigen::new(jac).eigenvalues;
        assert!(ev.max() <= 1e-10);
    }

    #[test]
    fn spring_equilibria() {
        // Middle point between two equidistant opposite neighbours.
        let topo = RingTopology::new(3).unwrap();
        let springs = SpringRing::new(topo, 1.0, 0.3).unwrap();
        let x = DVector::from_vec(vec![-1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let f = springs.force(&x).unwrap();
        assert!(f[2].abs() < 1e-15 && f[3].abs() < 1e-15);

        // Regular polygon whose edges all have the rest length.
        let n = 32;
        let radius = 1.7;
        let edge = 2.0 * radius * (PI / n as f64).sin();
        let springs = SpringRing::new(RingTopology::new(n).unwrap(), 2.5e4, edge).unwrap();
        let x = regular_polygon(n, radius);
        assert!(springs.force(&x).unwrap().amax() < 1e-9);
        assert!(springs.energy(&x).unwrap() < 1e-20);
    }

    #[test]
    fn coincident_points_with_rest_length_error() {
        let springs = SpringRing::new(RingTopology::new(3).unwrap(), 1.0, 0.5).unwrap();
        let x = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(matches!(springs.force(&x), Err(Error::CoincidentPoints { .. })));
    }

    #[test]
    fn spring_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let springs = SpringRing::new(RingTopology::new(8).unwrap(), 2.0, 0.4).unwrap();
        let x = wobbly_ring(8, &mut rng);
        let analytic = springs.jacobian(&x).unwrap();
        let fd = fd_jacobian(&springs, &x, 1e-6).unwrap();
        assert!((&analytic - &fd).amax() < 1e-5);
        assert!(asymmetry(&fd) < 1e-5);
        check_conservative(&springs, &x, &mut rng);
    }

    #[test]
    fn spring_jac_dot_matches_jacobian_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let springs = SpringRing::new(RingTopology::new(8).unwrap(), 2.0, 0.4).unwrap();
        let x = wobbly_ring(8, &mut rng);
        let v = random_vec(16, &mut rng, 1.0);
        let u = random_vec(16, &mut rng, 1.0);
        let analytic = springs.jac_dot(&x, &v, &u).unwrap();
        let h = 1e-6;
        let jp = springs.jacobian(&(&x + &v * h)).unwrap();
        let jm = springs.jacobian(&(&x - &v * h)).unwrap();
        let fd = (jp - jm).transpose() * &u / (2.0 * h);
        assert!((&analytic - &fd).amax() < 1e-6 * (1.0 + fd.amax()));
    }

    #[test]
    fn fd_jacobian_of_linear_force_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = random_spd(4, &mut rng);
        let f = LinearForce::new(t.clone()).unwrap();
        let jac = fd_jacobian(&f, &random_vec(4, &mut rng, 1.0), 1e-3).unwrap();
        assert!((jac + t).amax() < 1e-9);
    }

    #[test]
    fn bending_vanishes_on_reference_and_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let topo = RingTopology::new(8).unwrap();
        let x = wobbly_ring(8, &mut rng);
        let bend = BendingRing::from_reference(topo, 1.5, &x).unwrap();
        assert!(bend.energy(&x).unwrap().abs() < 1e-15);
        assert!(bend.force(&x).unwrap().amax() < 1e-14);

        let (c, s) = (0.7f64.cos(), 0.7f64.sin());
        let mut rotated = x.clone();
        for i in 0..8 {
            let (px, py) = (x[2 * i], x[2 * i + 1]);
            rotated[2 * i] = c * px - s * py + 0.3;
            rotated[2 * i + 1] = s * px + c * py - 1.1;
        }
        assert!(bend.energy(&rotated).unwrap().abs() < 1e-12);
        assert!(bend.force(&rotated).unwrap().amax() < 1e-12);
    }

    #[test]
    fn bending_force_is_minus_energy_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let topo = RingTopology::new(8).unwrap();
        let reference = wobbly_ring(8, &mut rng);
        let bend = BendingRing::from_reference(topo, 2.0, &reference).unwrap();
        let x = &reference + random_vec(16, &mut rng, 0.1);
        let f = bend.force(&x).unwrap();
        let h = 1e-6;
        let mut xp = x.clone();
        for k in 0..16 {
            let orig = xp[k];
            xp[k] = orig + h;
            let ep = bend.energy(&xp).unwrap();
            xp[k] = orig - h;
            let em = bend.energy(&xp).unwrap();
            xp[k] = orig;
            let grad = (ep - em) / (2.0 * h);
            assert!((f[k] + grad).abs() < 1e-5, "component {k}: {} vs {}", f[k], -grad);
        }
        check_conservative(&bend, &x, &mut rng);
        let fd = fd_jacobian(&bend, &x, 1e-5).unwrap();
        assert!(asymmetry(&fd) < 1e-5);
    }

    #[test]
    fn bending_jac_dot_matches_jacobian_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let topo = RingTopology::new(8).unwrap();
        let reference = wobbly_ring(8, &mut rng);
        let bend = BendingRing::from_reference(topo, 2.0, &reference).unwrap();
        let x = &reference + random_vec(16, &mut rng, 0.1);
        let v = random_vec(16, &mut rng, 1.0);
        let u = random_vec(16, &mut rng, 1.0);
        let mixed = bend.jac_dot(&x, &v, &u).unwrap();
        let h = 1e-4;
        let jp = fd_jacobian(&bend, &(&x + &v * h), 1e-5).unwrap();
        let jm = fd_jacobian(&bend, &(&x - &v * h), 1e-5).unwrap();
        let reference_dot = (jp - jm).transpose() * &u / (2.0 * h);
        assert!((&mixed - &reference_dot).amax() < 1e-4 * (1.0 + reference_dot.amax()));
    }

    #[test]
    fn degenerate_edge_is_reported() {
        let topo = RingTopology::new(3).unwrap();
        let x = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(matches!(ring_angles(&topo, &x), Err(Error::DegenerateEdge(_))));
    }

    #[test]
    fn sum_force_adds_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let topo = RingTopology::new(5).unwrap();
        let reference = wobbly_ring(5, &mut rng);
        let springs: Arc<dyn ForceField> = Arc::new(SpringRing::new(topo, 1.0, 0.0).unwrap());
        let bend: Arc<dyn ForceField> =
            Arc::new(BendingRing::from_reference(topo, 0.5, &reference).unwrap());
        let sum = SumForce::new(vec![springs.clone(), bend.clone()]).unwrap();
        let x = &reference + random_vec(10, &mut rng, 0.1);
        let expected = springs.force(&x).unwrap() + bend.force(&x).unwrap();
        assert!((sum.force(&x).unwrap() - expected).amax() < 1e-15);
        assert_eq!(sum.jac_mode(), JacMode::FiniteDifference);
        check_conservative(&sum, &x, &mut rng);
    }

    #[test]
    fn energies_are_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let topo = RingTopology::new(6).unwrap();
        let reference = wobbly_ring(6, &mut rng);
        let springs = SpringRing::new(topo, 1.0, 0.7).unwrap();
        let bend = BendingRing::from_reference(topo, 0.5, &reference).unwrap();
        for _ in 0..100 {
            let x = &reference + random_vec(12, &mut rng, 0.5);
            assert!(springs.energy(&x).unwrap() >= 0.0);
            assert!(bend.energy(&x).unwrap() >= 0.0);
        }
    }
}
