//! Ground-truth data: random stable full-order systems, their integration,
//! and the analytic Jeffery orbit of an ellipse in shear flow.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{Dataset, Series};
use crate::error::{Error, Result};
use crate::forces::ForceField;
use crate::io;
use crate::model::FomSystem;

pub use crate::io::{load_dataset, save_dataset};

#[derive(Debug, Clone, PartialEq)]
pub struct StableFomOptions {
    /// Scale of `B` in `W = S_w - B Bᵀ`.
    pub dissipation_scale: f64,
    /// Scale of the skew part `S_w`.
    pub oscillation_scale: f64,
    pub coupling_scale: f64,
    /// When set, each column of `L` is a random permutation of this vector
    /// (times `coupling_scale`) instead of Gaussian entries.
    pub base: Option<DVector<f64>>,
}

impl Default for StableFomOptions {
    fn default() -> Self {
        Self {
            dissipation_scale: 1.0,
            oscillation_scale: 1.0,
            coupling_scale: 1.0,
            base: None,
        }
    }
}

fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// `W = S_w - B Bᵀ` with Gaussian `S_w` (skew) and `B`, entries scaled by
/// `1/√p_f` so eigenvalues stay O(scale).
pub fn random_stable_fom(
    p_f: usize,
    force: Arc<dyn ForceField>,
    rng: &mut impl Rng,
    opts: &StableFomOptions,
) -> Result<FomSystem> {
    let l = force.dim();
    if p_f < l || l == 0 {
        return Err(Error::InvalidArgument(format!("need p_f >= l >= 1, got p_f={p_f}, l={l}")));
    }
    let norm = 1.0 / (p_f as f64).sqrt();
    let g = gaussian(p_f, p_f, opts.oscillation_scale * norm, rng);
    let s = (&g - g.transpose()) * 0.5;
    let b = gaussian(p_f, p_f, opts.dissipation_scale * norm, rng);
    let w = s - &b * b.transpose();
    let lmat = match &opts.base {
        None => gaussian(p_f, l, opts.coupling_scale, rng),
        Some(base) => {
            if base.len() != p_f {
                return Err(Error::DimensionMismatch(format!("base vector of length {} for p_f = {p_f}", base.len())));
            }
            let mut cols = Vec::with_capacity(l);
            for _ in 0..l {
                let mut v: Vec<f64> = base.iter().copied().collect();
                v.shuffle(rng);
                cols.push(DVector::from_vec(v) * opts.coupling_scale);
            }
            DMatrix::from_columns(&cols)
        }
    };
    FomSystem::new(w, lmat, force)
}

/// A full-order system read from a matrix file, with its stability flag.
#[derive(Debug, Clone)]
pub struct LoadedFom {
    pub fom: FomSystem,
    /// False when `(W + Wᵀ)/2` has an eigenvalue above the tolerance.
    pub stable: bool,
}

/// Reads `W` (or `A`) and `L` (or `b`) blocks.
pub fn load_fom_matrices(path: &Path, force: Arc<dyn ForceField>) -> Result<LoadedFom> {
    parse_fom_matrices(&std::fs::read_to_string(path)?, force)
}

pub fn parse_fom_matrices(text: &str, force: Arc<dyn ForceField>) -> Result<LoadedFom> {
    let blocks = io::parse_matrices(text)?;
    let find = |names: &[&str]| blocks.iter().find(|(n, _)| names.contains(&n.as_str())).map(|(_, m)| m.clone());
    let w = find(&["W", "A"]).ok_or_else(|| Error::parse(0, "no `W` (or `A`) block"))?;
    let l = find(&["L", "b"]).ok_or_else(|| Error::parse(0, "no `L` (or `b`) block"))?;
    if !w.is_square() || l.nrows() != w.nrows() || l.ncols() != force.dim() {
        return Err(Error::parse(
            0,
            format!("W is {:?}, L is {:?}, force dimension {}", w.shape(), l.shape(), force.dim()),
        ));
    }
    let fom = FomSystem::new(w, l, force)?;
    let stable = fom.is_stable();
    Ok(LoadedFom { fom, stable })
}

pub fn save_fom_matrices(fom: &FomSystem, meta: &[(String, String)], path: &Path) -> Result<()> {
    io::save_matrices(path, &[("W", &fom.w), ("L", &fom.l)], meta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    /// Classical RK4 with `substeps` internal steps per sample.
    Rk4 { substeps: usize },
    /// Matrix exponential of the coupled block system; needs a force with a
    /// constant Jacobian.
    ExactLinear,
}

fn rk4_step(fom: &FomSystem, u: &DVector<f64>, x: &DVector<f64>, h: f64) -> Result<(DVector<f64>, DVector<f64>)> {
    let (k1u, k1x) = fom.rhs(u, x)?;
    let (k2u, k2x) = fom.rhs(&(u + &k1u * (h / 2.0)), &(x + &k1x * (h / 2.0)))?;
    let (k3u, k3x) = fom.rhs(&(u + &k2u * (h / 2.0)), &(x + &k2x * (h / 2.0)))?;
    let (k4u, k4x) = fom.rhs(&(u + &k3u * h), &(x + &k3x * h))?;
    let u1 = u + (k1u + &k2u * 2.0 + &k3u * 2.0 + k4u) * (h / 6.0);
    let x1 = x + (k1x + &k2x * 2.0 + &k3x * 2.0 + k4x) * (h / 6.0);
    Ok((u1, x1))
}

/// Observed and latent samples at `t_j = j·dt`, `j = 0..=n_steps`.
#[derive(Debug, Clone)]
pub struct FomTrajectory {
    pub series: Series,
    pub latent: Vec<DVector<f64>>,
}

pub fn integrate_fom_full(
    fom: &FomSystem,
    x0: &DVector<f64>,
    u0: &DVector<f64>,
    dt: f64,
    n_steps: usize,
    method: Integrator,
) -> Result<FomTrajectory> {
    let (p, l) = (fom.latent_dim(), fom.observed_dim());
    if x0.len() != l || u0.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "initial state (u: {}, x: {}) for a system with p_f = {p}, l = {l}",
            u0.len(),
            x0.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let mut xs = vec![x0.clone()];
    let mut us = vec![u0.clone()];
    match method {
        Integrator::Rk4 { substeps } => {
            let n_sub = substeps.max(1);
            let h = dt / n_sub as f64;
            let (mut u, mut x) = (u0.clone(), x0.clone());
            for _ in 0..n_steps {
                for _ in 0..n_sub {
                    (u, x) = rk4_step(fom, &u, &x, h)?;
                }
                us.push(u.clone());
                xs.push(x.clone());
            }
        }
        Integrator::ExactLinear => {
            if !fom.force.constant_jacobian() {
                return Err(Error::InvalidArgument(
                    "exact-linear integration needs a force with a constant Jacobian".into(),
                ));
            }
            // d/dt (u, x, 1) = [[W, L J, L f(0)], [Lᵀ, 0, 0], [0, 0, 0]] (u, x, 1)
            let n = p + l + 1;
            let jac = fom.force.jacobian(&DVector::zeros(l))?;
            let f0 = fom.force.force(&DVector::zeros(l))?;
            let mut a = DMatrix::zeros(n, n);
            a.view_mut((0, 0), (p, p)).copy_from(&fom.w);
            a.view_mut((0, p), (p, l)).copy_from(&(&fom.l * jac));
            a.view_mut((0, p + l), (p, 1)).copy_from(&(&fom.l * f0));
            a.view_mut((p, 0), (l, p)).copy_from(&fom.l.transpose());
            let step = (a * dt).exp();
            let mut s = DVector::zeros(n);
            s.rows_mut(0, p).copy_from(u0);
            s.rows_mut(p, l).copy_from(x0);
            s[n - 1] = 1.0;
            for _ in 0..n_steps {
                s = &step * s;
                us.push(s.rows(0, p).into_owned());
                xs.push(s.rows(p, l).into_owned());
            }
        }
    }
    if xs.iter().chain(&us).any(|v| !v.iter().all(|e| e.is_finite())) {
        return Err(Error::NonFiniteState {
            step: n_steps,
            magnitude: f64::NAN,
        });
    }
    Ok(FomTrajectory {
        series: Series::uniform(dt, xs),
        latent: us,
    })
}

/// Observed trajectory of the full-order system.
pub fn integrate_fom(
    fom: &FomSystem,
    x0: &DVector<f64>,
    u0: &DVector<f64>,
    dt: f64,
    n_steps: usize,
    method: Integrator,
) -> Result<Series> {
    Ok(integrate_fom_full(fom, x0, u0, dt, n_steps, method)?.series)
}

/// `n_series` trajectories from `x(0)` uniform in `x0_range` around
/// `x_center` and `u(0) = 0`.
#[allow(clippy::too_many_arguments)]
pub fn fom_dataset(
    fom: &FomSystem,
    n_series: usize,
    n_steps: usize,
    dt: f64,
    x_center: &DVector<f64>,
    x0_range: f64,
    method: Integrator,
    rng: &mut impl Rng,
) -> Result<Dataset> {
    let l = fom.observed_dim();
    let u0 = DVector::zeros(fom.latent_dim());
    let mut series = Vec::with_capacity(n_series);
    for _ in 0..n_series {
        let x0 = x_center + DVector::from_fn(l, |_, _| rng.random_range(-x0_range..=x0_range));
        series.push(integrate_fom(fom, &x0, &u0, dt, n_steps, method)?);
    }
    Dataset::new(series, dt)
}

/// An ellipse with semi-axes `a > b` rotating in a shear flow of rate `r`
/// while drifting with speed `u0` along the x-axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jeffery {
    pub a: f64,
    pub b: f64,
    pub r: f64,
    pub u0: f64,
    pub n_points: usize,
}

impl Jeffery {
    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0 && self.a >= self.b && self.r > 0.0) || self.n_points < 3 {
            return Err(Error::InvalidArgument(format!(
                "Jeffery orbit needs a >= b > 0, r > 0 and at least 3 points (a={}, b={}, r={}, n={})",
                self.a, self.b, self.r, self.n_points
            )));
        }
        Ok(())
    }

    /// Angular frequency `ab r/(a² + b²)` of the inner tangent argument.
    pub fn omega(&self) -> f64 {
        self.a * self.b * self.r / (self.a * self.a + self.b * self.b)
    }

    /// Time of one full turn, `2π(a² + b²)/(ab r)`.
    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega()
    }

    /// Continuous inclination angle solving `tan θ = (a/b) tan(ωt)`.
    pub fn angle(&self, t: f64) -> f64 {
        let phi = self.omega() * t;
        let k = (phi / PI).round();
        let rem = phi - k * PI;
        (self.a * rem.sin()).atan2(self.b * rem.cos()) + k * PI
    }

    pub fn center(&self, t: f64) -> (f64, f64) {
        (self.u0 * t, 0.0)
    }

    /// Boundary points `(x₁, y₁, …)` at time `t`.
    pub fn boundary(&self, t: f64) -> DVector<f64> {
        let theta = self.angle(t);
        let (c, s) = (theta.cos(), theta.sin());
        let (cx, cy) = self.center(t);
        let mut x = DVector::zeros(2 * self.n_points);
        for k in 0..self.n_points {
            let phi = 2.0 * PI * k as f64 / self.n_points as f64;
            let (px, py) = (self.b * phi.cos(), self.a * phi.sin());
            x[2 * k] = cx + c * px - s * py;
            x[2 * k + 1] = cy + s * px + c * py;
        }
        x
    }
}

/// Boundary coordinates sampled at `t_j = j·dt`, `j = 0..=n_steps`.
pub fn jeffery_orbit(params: &Jeffery, dt: f64, n_steps: usize) -> Result<Series> {
    params.validate()?;
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    Ok(Series::uniform(
        dt,
        (0..=n_steps).map(|j| params.boundary(j as f64 * dt)).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forces::{LinearForce, RingTopology, SpringRing};
    use crate::linalg::eigenvalues;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_force(l: usize) -> Arc<dyn ForceField> {
        Arc::new(LinearForce::identity(l))
    }

    #[test]
    fn generated_systems_are_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p_f in [1, 3, 8, 20] {
            let fom = random_stable_fom(p_f, identity_force(1), &mut rng, &StableFomOptions::default()).unwrap();
            assert!(fom.max_symmetric_eigenvalue() <= 1e-12);
            let n = p_f + 1;
            let mut block = DMatrix::zeros(n, n);
            block.view_mut((0, 0), (p_f, p_f)).copy_from(&fom.w);
            block.view_mut((0, p_f), (p_f, 1)).copy_from(&(-&fom.l));
            block.view_mut((p_f, 0), (1, p_f)).copy_from(&fom.l.transpose());
            assert!(eigenvalues(&block).unwrap().iter().all(|e| e.re <= 1e-10));
        }
        let skew = StableFomOptions {
            dissipation_scale: 0.0,
            ..StableFomOptions::default()
        };
        let fom = random_stable_fom(6, identity_force(2), &mut rng, &skew).unwrap();
        assert_eq!(&fom.w + fom.w.transpose(), DMatrix::zeros(6, 6));
    }

    #[test]
    fn base_vector_is_shuffled_into_l() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = DVector::from_fn(7, |i, _| i as f64);
        let opts = StableFomOptions {
            base: Some(base.clone()),
            ..StableFomOptions::default()
        };
        let fom = random_stable_fom(7, identity_force(3), &mut rng, &opts).unwrap();
        for col in fom.l.column_iter() {
            let mut v: Vec<f64> = col.iter().copied().collect();
            v.sort_by(f64::total_cmp);
            assert_eq!(v, base.as_slice());
        }
    }

    #[test]
    fn matrix_file_round_trip_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fom = random_stable_fom(5, identity_force(1), &mut rng, &StableFomOptions::default()).unwrap();
        let text = io::matrices_to_string(&[("A", &fom.w), ("b", &fom.l)], &[]);
        let loaded = parse_fom_matrices(&text, identity_force(1)).unwrap();
        assert!(loaded.stable);
        assert_eq!(loaded.fom.w, fom.w);
        assert_eq!(loaded.fom.l, fom.l);

        let bad = io::matrices_to_string(&[("W", &fom.w), ("L", &DMatrix::zeros(4, 1))], &[]);
        assert!(matches!(parse_fom_matrices(&bad, identity_force(1)), Err(Error::Parse { .. })));

        let unstable = io::matrices_to_string(&[("W", &DMatrix::identity(2, 2)), ("L", &DMatrix::zeros(2, 1))], &[]);
        assert!(!parse_fom_matrices(&unstable, identity_force(1)).unwrap().stable);
    }

    #[test]
    fn rk4_agrees_with_matrix_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let fom = random_stable_fom(10, identity_force(3), &mut rng, &StableFomOptions::default()).unwrap();
        let x0 = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let u0 = DVector::zeros(10);
        let a = integrate_fom(&fom, &x0, &u0, 1e-3, 150, Integrator::Rk4 { substeps: 1 }).unwrap();
        let b = integrate_fom(&fom, &x0, &u0, 1e-3, 150, Integrator::ExactLinear).unwrap();
        let dev = a.x.iter().zip(&b.x).map(|(p, q)| (p - q).amax()).fold(0.0, f64::max);
        assert!(dev <= 1e-8, "{dev}");
    }

    #[test]
    fn zero_initial_condition_stays_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fom = random_stable_fom(4, identity_force(2), &mut rng, &StableFomOptions::default()).unwrap();
        let s = integrate_fom(&fom, &DVector::zeros(2), &DVector::zeros(4), 0.01, 20, Integrator::Rk4 { substeps: 2 }).unwrap();
        assert!(s.x.iter().all(|x| x.amax() == 0.0));
    }

    #[test]
    fn exact_linear_rejects_nonlinear_force() {
        let topo = RingTopology::new(3).unwrap();
        let force: Arc<dyn ForceField> = Arc::new(SpringRing::new(topo, 1.0, 0.5).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let fom = random_stable_fom(6, force, &mut rng, &StableFomOptions::default()).unwrap();
        let x0 = crate::forces::regular_polygon(3, 1.0);
        let r = integrate_fom(&fom, &x0, &DVector::zeros(6), 0.01, 2, Integrator::ExactLinear);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn lyapunov_decreases_along_fom_trajectories() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let fom = random_stable_fom(8, identity_force(2), &mut rng, &StableFomOptions::default()).unwrap();
        let x0 = DVector::from_vec(vec![0.7, -0.4]);
        let tr = integrate_fom_full(&fom, &x0, &DVector::zeros(8), 0.01, 300, Integrator::Rk4 { substeps: 1 }).unwrap();
        let v: Vec<f64> = tr.latent.iter().zip(&tr.series.x).map(|(u, x)| fom.lyapunov(u, x).unwrap()).collect();
        assert!(v.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn corpus_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let fom = random_stable_fom(6, identity_force(1), &mut rng, &StableFomOptions::default()).unwrap();
        let ds = fom_dataset(&fom, 80, 150, 1e-3, &DVector::zeros(1), 1.0, Integrator::ExactLinear, &mut rng).unwrap();
        assert_eq!(ds.len(), 80);
        assert!(ds.series.iter().all(|s| s.len() == 151 && s.x[0][0].abs() <= 1.0));
    }

    #[test]
    fn jeffery_examples() {
        let j = Jeffery {
            a: 2.0,
            b: 1.0,
            r: 1.0,
            u0: 0.0,
            n_points: 32,
        };
        assert_eq!(j.angle(0.0), 0.0);
        assert!((j.angle(j.period() / 4.0) - PI / 2.0).abs() < 1e-12);
        assert!((j.angle(j.period()) - 2.0 * PI).abs() < 1e-12);
        let x = j.boundary(0.0);
        // point k = 8 sits at φ = π/2: the tip of the semi-major axis on +y
        assert!((x[16]).abs() < 1e-15 && (x[17] - 2.0).abs() < 1e-15);

        let circle = Jeffery { a: 1.5, b: 1.5, ..j };
        for t in [0.3, 2.0, 7.7] {
            assert!((circle.angle(t) - 0.5 * t).abs() < 1e-12);
        }

        let s = jeffery_orbit(&j, 1e-2, 10).unwrap();
        assert_eq!(s.x[0].len(), 64);
    }

    #[test]
    fn jeffery_angle_is_continuous_and_monotone() {
        let j = Jeffery {
            a: 2.0,
            b: 1.0,
            r: 7.0,
            u0: 1.0,
            n_points: 8,
        };
        let dt = 1e-2;
        let bound = 2.0 * (j.a * j.b / (j.a * j.a + j.b * j.b)) * j.r * dt * (j.a / j.b);
        let angles: Vec<f64> = (0..2000).map(|k| j.angle(k as f64 * dt)).collect();
        for w in angles.windows(2) {
            assert!(w[1] > w[0]);
            assert!(w[1] - w[0] <= bound);
        }
    }
}
