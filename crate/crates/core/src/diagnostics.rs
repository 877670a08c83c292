//! Stability and accuracy analysis.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::cell::CellState;
use crate::error::{Error, Result};
use crate::forces::ForceField;
use crate::linalg::{eigenvalues, Complex64};
use crate::model::ModelParams;

pub use crate::io::export_plot_data;

/// `V_i = ½‖z_i‖² + E(x_i)` along a trajectory.
pub fn lyapunov_series(states: &[CellState], force: &dyn ForceField) -> Result<Vec<f64>> {
    states
        .iter()
        .map(|s| {
            force
                .energy(&s.x)
                .map(|e| 0.5 * s.z.norm_squared() + e)
                .ok_or_else(|| Error::InvalidArgument("force has no energy".into()))
        })
        .collect()
}

/// Largest increase `V_{i+1} - V_i` (negative when strictly decreasing).
pub fn max_increase(values: &[f64]) -> f64 {
    values
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!("spectral radius of a {:?} matrix", a.shape())));
    }
    Ok(eigenvalues(a)?.iter().map(|e| e.norm()).fold(0.0, f64::max))
}

/// Eigenvalues of the continuous model behind `params` with force `-T x`:
/// `[[(D_d + S_d)/dt, -(R_d/dt) T], [(R_d/dt)ᵀ, 0]]`.
pub fn continuous_eigs(params: &ModelParams, t: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let (p, l) = (params.p(), params.l());
    if t.shape() != (l, l) {
        return Err(Error::DimensionMismatch(format!("T is {:?}, l = {l}", t.shape())));
    }
    let r = &params.r / params.dt;
    let mut a = DMatrix::zeros(p + l, p + l);
    a.view_mut((0, 0), (p, p)).copy_from(&(params.latent_matrix() / params.dt));
    a.view_mut((0, p), (p, l)).copy_from(&(-(&r * t)));
    a.view_mut((p, 0), (l, p)).copy_from(&r.transpose());
    eigenvalues(&a)
}

/// Midpoint-rule image `(1 + dt λ/2)/(1 - dt λ/2)` of a continuous eigenvalue.
pub fn cayley_map(lambda_c: Complex64, dt: f64) -> Complex64 {
    let h = lambda_c * (0.5 * dt);
    (Complex64::new(1.0, 0.0) + h) / (Complex64::new(1.0, 0.0) - h)
}

/// Inverse of [`cayley_map`]: `(2/dt)(λ - 1)/(λ + 1)`.
pub fn inverse_cayley(lambda_d: Complex64, dt: f64) -> Result<Complex64> {
    let den = lambda_d + 1.0;
    if den.norm() <= 1e-300 {
        return Err(Error::PoleInput);
    }
    Ok((lambda_d - 1.0) / den * (2.0 / dt))
}

fn ring_points(points: &DVector<f64>) -> Result<usize> {
    if points.len() % 2 != 0 || points.len() < 6 {
        return Err(Error::InvalidArgument(format!(
            "ring coordinates need an even length of at least 6, got {}",
            points.len()
        )));
    }
    Ok(points.len() / 2)
}

/// Length of the closed polygon through the points.
pub fn perimeter(points: &DVector<f64>) -> Result<f64> {
    let n = ring_points(points)?;
    Ok((0..n)
        .map(|i| {
            let j = (i + 1) % n;
            (points[2 * j] - points[2 * i]).hypot(points[2 * j + 1] - points[2 * i + 1])
        })
        .sum())
}

/// `|P(a_j) - P(b_j)| / P(b_j)` frame by frame, `b` being the reference.
pub fn relative_perimeter_error(a: &[DVector<f64>], b: &[DVector<f64>]) -> Result<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let pb = perimeter(y)?;
            Ok((perimeter(x)? - pb).abs() / pb)
        })
        .collect()
}

/// Mean of the points.
pub fn center(points: &DVector<f64>) -> Result<(f64, f64)> {
    let n = ring_points(points)?;
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        cx += points[2 * i];
        cy += points[2 * i + 1];
    }
    Ok((cx / n as f64, cy / n as f64))
}

/// Angle of the principal axis measured from the y-axis, in `(-π/2, π/2]`.
pub fn inclination_angle(points: &DVector<f64>) -> Result<f64> {
    let n = ring_points(points)?;
    let (cx, cy) = center(points)?;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (points[2 * i] - cx, points[2 * i + 1] - cy);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let spread = (sxx - syy).hypot(2.0 * sxy);
    if spread <= 1e-12 * (sxx + syy) {
        return Err(Error::DegenerateShape);
    }
    // principal axis at angle α from the x-axis; from the y-axis it is α - π/2
    let alpha = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let mut theta = alpha - PI / 2.0;
    while theta <= -PI / 2.0 {
        theta += PI;
    }
    while theta > PI / 2.0 {
        theta -= PI;
    }
    Ok(theta)
}

/// Inclination angles of successive frames, each shifted by the multiple of
/// π closest to the previous angle.
pub fn inclination_angles(frames: &[DVector<f64>]) -> Result<Vec<f64>> {
    let mut out: Vec<f64> = Vec::with_capacity(frames.len());
    for f in frames {
        let raw = inclination_angle(f)?;
        let angle = match out.last() {
            Some(&prev) => raw + ((prev - raw) / PI).round() * PI,
            None => raw,
        };
        out.push(angle);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::rollout;
    use crate::forces::{regular_polygon, LinearForce};
    use crate::model::CellKind;
    use proptest::prelude::*;

    fn ellipse(a: f64, b: f64, n: usize, rot: f64, shift: (f64, f64)) -> DVector<f64> {
        let (c, s) = (rot.cos(), rot.sin());
        let mut x = DVector::zeros(2 * n);
        for k in 0..n {
            let phi = 2.0 * PI * k as f64 / n as f64;
            let (px, py) = (b * phi.cos(), a * phi.sin());
            x[2 * k] = shift.0 + c * px - s * py;
            x[2 * k + 1] = shift.1 + s * px + c * py;
        }
        x
    }

    #[test]
    fn lyapunov_of_period_four_system_is_constant() {
        let mut params = ModelParams::zeros(1, 1, 1.0, CellKind::MidpointStable);
        params.r[(0, 0)] = 2.0;
        let force = LinearForce::identity(1);
        let (states, _) = rollout(&params, &force, &DVector::from_element(1, 1.0), &DVector::zeros(1), 8).unwrap();
        let v = lyapunov_series(&states, &force).unwrap();
        assert!(v.iter().all(|&e| (e - 0.5).abs() < 1e-15));
        let zero = vec![CellState::new(DVector::zeros(1), DVector::zeros(1)); 3];
        assert_eq!(lyapunov_series(&zero, &force).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn spectral_radius_examples() {
        assert!((spectral_radius(&DMatrix::identity(3, 3)).unwrap() - 1.0).abs() < 1e-15);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!((spectral_radius(&rot).unwrap() - 1.0).abs() < 1e-15);
        let euler = DMatrix::from_row_slice(2, 2, &[1.0, -0.1, 0.1, 1.0]);
        assert!((spectral_radius(&euler).unwrap() - 1.01f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn cayley_examples() {
        let one = cayley_map(Complex64::new(0.0, 0.0), 0.3);
        assert_eq!(one, Complex64::new(1.0, 0.0));
        let d = cayley_map(Complex64::new(-1.0, 0.0), 0.1);
        assert!((d.re - 0.95 / 1.05).abs() < 1e-15 && d.im == 0.0);
        let back = inverse_cayley(d, 0.1).unwrap();
        assert!((back - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
        for w in [0.1, 3.0, 250.0] {
            assert!((cayley_map(Complex64::new(0.0, w), 0.01).norm() - 1.0).abs() < 1e-14);
        }
        assert!(matches!(inverse_cayley(Complex64::new(-1.0, 0.0), 0.1), Err(Error::PoleInput)));
    }

    #[test]
    fn zero_model_has_zero_continuous_eigenvalues() {
        let params = ModelParams::zeros(3, 2, 0.1, CellKind::MidpointStable);
        let eigs = continuous_eigs(&params, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(eigs.len(), 5);
        assert!(eigs.iter().all(|e| e.norm() < 1e-15));
    }

    #[test]
    fn perimeter_examples() {
        let square = DVector::from_vec(vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0]);
        assert!((perimeter(&square).unwrap() - 4.0).abs() < 1e-15);
        let poly = regular_polygon(32, 1.0);
        let exact = 32.0 * 2.0 * (PI / 32.0).sin();
        assert!((perimeter(&poly).unwrap() - exact).abs() < 1e-13);
        let frames = vec![poly.clone(), square.clone()];
        assert_eq!(relative_perimeter_error(&frames, &frames).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn inclination_examples() {
        let upright = ellipse(2.0, 1.0, 32, 0.0, (0.0, 0.0));
        assert!(inclination_angle(&upright).unwrap().abs() < 1e-12);
        let tilted = ellipse(2.0, 1.0, 32, 0.3, (5.0, -1.0));
        assert!((inclination_angle(&tilted).unwrap() - 0.3).abs() < 1e-10);
        assert!(matches!(
            inclination_angle(&regular_polygon(16, 1.0)),
            Err(Error::DegenerateShape)
        ));
        let (cx, cy) = center(&tilted).unwrap();
        assert!((cx - 5.0).abs() < 1e-12 && (cy + 1.0).abs() < 1e-12);
    }

    #[test]
    fn continued_angles_follow_a_full_turn() {
        let frames: Vec<DVector<f64>> = (0..=100)
            .map(|k| ellipse(2.0, 1.0, 24, 0.07 * k as f64, (0.0, 0.0)))
            .collect();
        let angles = inclination_angles(&frames).unwrap();
        for (k, a) in angles.iter().enumerate() {
            assert!((a - 0.07 * k as f64).abs() < 1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn cayley_inverse_is_identity(re in -50.0f64..0.0, im in -50.0f64..50.0, dt in 1e-3f64..0.5) {
            let l = Complex64::new(re, im);
            let back = inverse_cayley(cayley_map(l, dt), dt).unwrap();
            prop_assert!((back - l).norm() <= 1e-12 * (1.0 + l.norm()) / dt.min(1.0));
        }

        #[test]
        fn perimeter_is_rigid_motion_invariant(rot in -3.2f64..3.2, sx in -10.0f64..10.0, sy in -10.0f64..10.0) {
            let base = ellipse(1.7, 0.6, 20, 0.0, (0.0, 0.0));
            let moved = ellipse(1.7, 0.6, 20, rot, (sx, sy));
            prop_assert!((perimeter(&base).unwrap() - perimeter(&moved).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn inclination_is_rotation_equivariant(alpha in -1.5f64..1.5) {
            let base = ellipse(1.3, 1.0, 18, 0.0, (0.0, 0.0));
            let rotated = ellipse(1.3, 1.0, 18, alpha, (0.0, 0.0));
            let a = inclination_angles(&[base, rotated]).unwrap();
            prop_assert!((a[1] - a[0] - alpha).abs() <= 1e-10);
        }
    }
}
