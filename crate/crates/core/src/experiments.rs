//! Reproducible end-to-end runs: data generation, training and the
//! diagnostics each study reports.
//!
//! Every recipe is plain data with a `Default` holding the calibrated
//! setting, so callers can tweak one field and rerun.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cell::{iteration_matrix, predict};
use crate::data::{Dataset, Series};
use crate::datagen::{fom_dataset, integrate_fom, jeffery_orbit, random_stable_fom, Integrator, Jeffery, StableFomOptions};
use crate::diagnostics::{center, continuous_eigs, inclination_angles, relative_perimeter_error, spectral_radius};
use crate::error::{Error, Result};
use crate::forces::{ForceField, LinearForce, RingTopology, SpringRing};
use crate::model::{CellKind, FomSystem, ModelParams};
use crate::training::{
    evaluate, train, train_from, train_on, HistoryRecord, InitScheme, SplitIndices, TrainConfig, TrainOutcome,
};

/// Random stable linear full-order system with `f(x) = -x`, sampled with
/// `u(0) = 0` and `x(0)` uniform in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFomRecipe {
    pub p_f: usize,
    pub l: usize,
    pub n_series: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub options: StableFomOptions,
    /// Build `L` from shuffled copies of one Gaussian vector.
    pub shuffled_base: bool,
    pub seed: u64,
}

impl LinearFomRecipe {
    /// Single output, 80 series of 150 steps.
    pub fn single_output() -> Self {
        Self {
            p_f: 64,
            l: 1,
            n_series: 80,
            n_steps: 150,
            dt: 1.0,
            options: StableFomOptions {
                dissipation_scale: 0.15,
                oscillation_scale: 0.8,
                coupling_scale: 0.2,
                base: None,
            },
            shuffled_base: false,
            seed: 1,
        }
    }

    /// Sixteen outputs whose coupling columns are shuffled copies of one vector.
    pub fn multi_output() -> Self {
        Self {
            l: 16,
            options: StableFomOptions {
                dissipation_scale: 0.6,
                oscillation_scale: 0.8,
                coupling_scale: 0.02,
                base: None,
            },
            shuffled_base: true,
            ..Self::single_output()
        }
    }

    pub fn force(&self) -> LinearForce {
        LinearForce::identity(self.l)
    }

    pub fn generate(&self) -> Result<(FomSystem, Dataset)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let force: Arc<dyn ForceField> = Arc::new(self.force());
        let mut options = self.options.clone();
        if self.shuffled_base {
            options.base = Some(DVector::from_fn(self.p_f, |_, _| StandardNormal.sample(&mut rng)));
        }
        let fom = random_stable_fom(self.p_f, force, &mut rng, &options)?;
        let dataset = fom_dataset(
            &fom,
            self.n_series,
            self.n_steps,
            self.dt,
            &DVector::zeros(self.l),
            1.0,
            Integrator::ExactLinear,
            &mut rng,
        )?;
        Ok((fom, dataset))
    }
}

/// Result of fitting one cell kind and predicting the test split.
#[derive(Debug, Clone)]
pub struct CellReport {
    pub cell: CellKind,
    /// `None` when training itself diverged.
    pub outcome: Option<TrainOutcome>,
    pub error: Option<String>,
    /// Spectral radius of the iteration matrix of the fitted model.
    pub spectral_radius: Option<f64>,
    /// Largest absolute predicted value on the test split; infinite when
    /// the rollout overflowed.
    pub max_abs_prediction: f64,
    /// Largest absolute value in the test data.
    pub data_range: f64,
    /// Pooled relative L2 error over the prediction horizon, when finite.
    pub relative_l2: Option<f64>,
    pub seconds: f64,
}

impl CellReport {
    /// Output grew past `factor` times the data range, or overflowed.
    pub fn diverged(&self, factor: f64) -> bool {
        !(self.max_abs_prediction <= factor * self.data_range)
    }
}

/// Trains `config` on `dataset` and predicts `horizon` steps of every test series.
pub fn fit_and_test(
    config: &TrainConfig,
    dataset: &Dataset,
    force: &LinearForce,
    horizon: usize,
) -> Result<(CellReport, SplitIndices)> {
    let started = Instant::now();
    let split = crate::training::split_indices(
        dataset.len(),
        &config.split,
        &mut ChaCha8Rng::seed_from_u64(config.seed),
    )?;
    let test = dataset.subset(&split.test);
    let data_range = test.series.iter().flat_map(|s| &s.x).map(|x| x.amax()).fold(0.0, f64::max);
    let mut report = CellReport {
        cell: config.cell,
        outcome: None,
        error: None,
        spectral_radius: None,
        max_abs_prediction: f64::INFINITY,
        data_range,
        relative_l2: None,
        seconds: 0.0,
    };
    match train(config, dataset, force) {
        Err(e) if e.is_numeric() => report.error = Some(e.to_string()),
        Err(e) => return Err(e),
        Ok((outcome, _)) => {
            let params = &outcome.params;
            report.spectral_radius = Some(spectral_radius(&iteration_matrix(params, force.stiffness())?)?);
            let mut max_abs: f64 = 0.0;
            for s in &test.series {
                match predict(params, force, s.initial(), horizon.min(s.steps())) {
                    Ok(xs) => max_abs = xs.iter().fold(max_abs, |m, x| m.max(x.amax())),
                    Err(_) => max_abs = f64::INFINITY,
                }
            }
            report.max_abs_prediction = if max_abs.is_finite() { max_abs } else { f64::INFINITY };
            if let Ok(m) = evaluate(params, force, &test, horizon) {
                report.relative_l2 = Some(m.relative_l2).filter(|v| v.is_finite());
            }
            report.outcome = Some(outcome);
        }
    }
    report.seconds = started.elapsed().as_secs_f64();
    Ok((report, split))
}

/// Training setup shared by the linear studies.
pub fn linear_config(cell: CellKind) -> TrainConfig {
    TrainConfig {
        latent_dim: 16,
        learning_rate: 1e-2,
        max_iterations: 2000,
        seed: 1,
        train_steps: 15,
        init: InitScheme {
            theta: 0.1,
            glorot_gain: 0.1,
        },
        cell,
        ..TrainConfig::default()
    }
}

/// Training setup for [`LinearFomRecipe::multi_output`].
pub fn multi_output_config() -> TrainConfig {
    TrainConfig {
        latent_dim: 32,
        learning_rate: 3e-3,
        max_iterations: 4000,
        init: InitScheme {
            theta: 0.1,
            glorot_gain: 0.3,
        },
        ..linear_config(CellKind::MidpointStable)
    }
}

/// Fits the three cell kinds to the same data.
pub fn stability_comparison(recipe: &LinearFomRecipe, horizon: usize) -> Result<Vec<CellReport>> {
    let (_, dataset) = recipe.generate()?;
    let force = recipe.force();
    [CellKind::Euler, CellKind::MidpointUnconstrained, CellKind::MidpointStable]
        .into_iter()
        .map(|cell| fit_and_test(&linear_config(cell), &dataset, &force, horizon).map(|r| r.0))
        .collect()
}

/// Spring ring driven by a damped random latent block, relaxing from a
/// stretched ellipse.
#[derive(Debug, Clone, PartialEq)]
pub struct RubberBandRecipe {
    pub n_points: usize,
    pub p_f: usize,
    pub k_s: f64,
    pub rest_length: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub rk4_substeps: usize,
    /// Semi-axes of the initial ellipse.
    pub semi_axes: (f64, f64),
    pub options: StableFomOptions,
    pub seed: u64,
    /// Spring stiffness of the reduced model's force. Scaling the force by
    /// `k` is the same model family with `R` scaled by `√k`, so this only
    /// sets the size of the entries the optimizer has to find.
    pub rom_stiffness: f64,
}

impl Default for RubberBandRecipe {
    fn default() -> Self {
        Self {
            n_points: 32,
            p_f: 64,
            k_s: 2.5e4,
            rest_length: 0.0,
            dt: 1e-3,
            n_steps: 300,
            rk4_substeps: 10,
            semi_axes: (1.25, 0.8),
            options: StableFomOptions {
                dissipation_scale: 4.0,
                oscillation_scale: 40.0,
                coupling_scale: 0.06,
                base: None,
            },
            seed: 3,
            rom_stiffness: 1.0,
        }
    }
}

/// Points `(b cos φ_k, a sin φ_k)` with `φ_k = 2πk/n`.
pub fn ellipse_points(n: usize, a: f64, b: f64) -> DVector<f64> {
    let mut x = DVector::zeros(2 * n);
    for k in 0..n {
        let phi = 2.0 * PI * k as f64 / n as f64;
        x[2 * k] = b * phi.cos();
        x[2 * k + 1] = a * phi.sin();
    }
    x
}

impl RubberBandRecipe {
    pub fn force(&self) -> Result<SpringRing> {
        SpringRing::new(RingTopology::new(self.n_points)?, self.k_s, self.rest_length)
    }

    pub fn rom_force(&self) -> Result<SpringRing> {
        SpringRing::new(RingTopology::new(self.n_points)?, self.rom_stiffness, self.rest_length)
    }

    pub fn generate(&self) -> Result<(FomSystem, Series)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let force: Arc<dyn ForceField> = Arc::new(self.force()?);
        let fom = random_stable_fom(self.p_f, force, &mut rng, &self.options)?;
        let x0 = ellipse_points(self.n_points, self.semi_axes.0, self.semi_axes.1);
        let series = integrate_fom(
            &fom,
            &x0,
            &DVector::zeros(self.p_f),
            self.dt,
            self.n_steps,
            Integrator::Rk4 {
                substeps: self.rk4_substeps,
            },
        )?;
        Ok((fom, series))
    }
}

/// Training setup for the spring-ring study.
pub fn rubber_band_config() -> TrainConfig {
    TrainConfig {
        latent_dim: 64,
        learning_rate: 1e-3,
        max_iterations: 600,
        seed: 1,
        train_steps: 150,
        init: InitScheme {
            theta: 0.1,
            glorot_gain: 0.1,
        },
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone)]
pub struct SingleSeriesReport {
    pub outcome: TrainOutcome,
    pub truth: Series,
    pub prediction: Vec<DVector<f64>>,
    pub seconds: f64,
}

/// Fits one series on its first `config.train_steps` steps and predicts
/// the whole series.
pub fn fit_single_series(config: &TrainConfig, series: &Series, force: &dyn ForceField) -> Result<SingleSeriesReport> {
    let started = Instant::now();
    let dt = series.t.get(1).map_or(1.0, |t1| t1 - series.t[0]);
    let outcome = train_on(config, &[series], &[], dt, force)?;
    let prediction = predict(&outcome.params, force, series.initial(), series.steps())?;
    Ok(SingleSeriesReport {
        outcome,
        truth: series.clone(),
        prediction,
        seconds: started.elapsed().as_secs_f64(),
    })
}

impl SingleSeriesReport {
    /// Relative perimeter error at each sampled step.
    pub fn perimeter_errors(&self) -> Result<Vec<f64>> {
        relative_perimeter_error(&self.prediction, &self.truth.x)
    }

    /// Absolute inclination-angle error in degrees at each sampled step.
    pub fn angle_errors_degrees(&self) -> Result<Vec<f64>> {
        let p = inclination_angles(&self.prediction)?;
        let t = inclination_angles(&self.truth.x)?;
        Ok(p.iter().zip(&t).map(|(a, b)| (a - b).abs().to_degrees()).collect())
    }

    /// `‖c_pred(t_j) - c_true(t_j)‖ / ‖c_true(t_j) - c_true(0)‖` for steps
    /// `from..`, where `c` is the point mean.
    pub fn center_errors(&self, from: usize) -> Result<Vec<f64>> {
        let c0 = center(&self.truth.x[0])?;
        (from.max(1)..self.prediction.len())
            .map(|j| {
                let (px, py) = center(&self.prediction[j])?;
                let (tx, ty) = center(&self.truth.x[j])?;
                Ok((px - tx).hypot(py - ty) / (tx - c0.0).hypot(ty - c0.1))
            })
            .collect()
    }
}

/// Analytic Jeffery-orbit data for the ellipse studies.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipseRecipe {
    pub jeffery: Jeffery,
    pub dt: f64,
    pub n_steps: usize,
    /// Stiffness of the zero-rest-length springs used as the model force.
    pub stiffness: f64,
}

impl Default for EllipseRecipe {
    /// `a/b = 2`, one turn in 200 steps of `dt = 0.01`, 32 points.
    fn default() -> Self {
        let (a, b) = (2.0, 1.0);
        let period = 2.0;
        Self {
            jeffery: Jeffery {
                a,
                b,
                r: 2.0 * PI * (a * a + b * b) / (a * b * period),
                u0: 0.0,
                n_points: 32,
            },
            dt: 0.01,
            n_steps: 400,
            stiffness: 0.01,
        }
    }
}

impl EllipseRecipe {
    pub fn translating(u0: f64) -> Self {
        let mut r = Self::default();
        r.jeffery.u0 = u0;
        r
    }

    /// Zero-rest-length springs: linear, with the translations in the kernel.
    pub fn force(&self) -> Result<LinearForce> {
        let ring = SpringRing::new(RingTopology::new(self.jeffery.n_points)?, self.stiffness, 0.0)?;
        LinearForce::new(ring.zero_rest_stiffness())
    }

    pub fn generate(&self) -> Result<Series> {
        jeffery_orbit(&self.jeffery, self.dt, self.n_steps)
    }
}

/// Training setup for the ellipse studies; each entry of
/// [`ELLIPSE_STAGES`] gets `max_iterations`.
pub fn ellipse_config(use_z0: bool) -> TrainConfig {
    TrainConfig {
        latent_dim: 20,
        learning_rate: 1e-3,
        max_iterations: 1500,
        seed: 1,
        train_steps: 150,
        init: InitScheme {
            theta: 0.1,
            glorot_gain: 1.0,
        },
        convergence: crate::training::Convergence {
            patience: usize::MAX,
            ..Default::default()
        },
        use_z0,
        ..TrainConfig::default()
    }
}

/// Loss horizons for the ellipse fits. A rotation seen whole from a random
/// start lands in a poor minimum; growing the window does not.
pub const ELLIPSE_STAGES: [usize; 8] = [25, 50, 75, 100, 125, 150, 150, 150];

/// Trains on growing horizons, each stage starting from the previous
/// stage's best parameters. The history is concatenated.
pub fn fit_staged(
    config: &TrainConfig,
    stages: &[usize],
    series: &Series,
    force: &dyn ForceField,
) -> Result<SingleSeriesReport> {
    let started = Instant::now();
    let dt = series.t.get(1).map_or(1.0, |t1| t1 - series.t[0]);
    let mut outcome: Option<TrainOutcome> = None;
    let mut history = Vec::new();
    for &h in stages {
        let stage = TrainConfig {
            train_steps: h,
            ..config.clone()
        };
        let out = match outcome.take() {
            None => train_on(&stage, &[series], &[], dt, force)?,
            Some(prev) => train_from(&stage, prev.params, &[series], &[], force)?,
        };
        let offset = history.len();
        history.extend(out.history.iter().map(|r| HistoryRecord {
            iteration: r.iteration + offset,
            ..*r
        }));
        outcome = Some(out);
    }
    let mut outcome = outcome.ok_or_else(|| Error::InvalidArgument("no training stages".into()))?;
    outcome.best_iteration += history.len() - outcome.history.len();
    outcome.history = history;
    let prediction = predict(&outcome.params, force, series.initial(), series.steps())?;
    Ok(SingleSeriesReport {
        outcome,
        truth: series.clone(),
        prediction,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// `max |Re λ| / max |Im λ|` over the continuous eigenvalues of a model
/// with linear force `-T x`.
pub fn eigenvalue_ratio(params: &ModelParams, t: &DMatrix<f64>) -> Result<f64> {
    let eigs = continuous_eigs(params, t)?;
    let re = eigs.iter().map(|e| e.re.abs()).fold(0.0, f64::max);
    let im = eigs.iter().map(|e| e.im.abs()).fold(0.0, f64::max);
    if im == 0.0 {
        return Err(Error::InvalidArgument("no oscillatory eigenvalue".into()));
    }
    Ok(re / im)
}
