//! ADAM training loop, dataset splitting, initialization and metrics.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bptt::{loss, loss_and_gradient, GradientMode, GradientSet};
use crate::cell::predict;
use crate::data::{Dataset, Series};
use crate::error::{Error, Result};
use crate::forces::ForceField;
use crate::model::{is_stable_continuous, CellKind, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BatchMode {
    #[default]
    Full,
    /// One training series per iteration, visited in a seeded shuffled order.
    PerSeries,
}

impl BatchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BatchMode::Full => "full",
            BatchMode::PerSeries => "per-series",
        }
    }
}

impl std::str::FromStr for BatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(BatchMode::Full),
            "per-series" => Ok(BatchMode::PerSeries),
            other => Err(Error::InvalidArgument(format!(
                "unknown batch mode `{other}` (expected full or per-series)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, in the flat parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One bias-corrected ADAM update. `iteration` counts from 1.
pub fn adam_step(
    params: &ModelParams,
    grads: &GradientSet,
    moments: &AdamMoments,
    iteration: usize,
    learning_rate: f64,
    hyper: &AdamHyper,
) -> (ModelParams, AdamMoments) {
    let g = grads.to_flat();
    let mut flat = params.to_flat();
    assert_eq!(g.len(), flat.len(), "gradient and parameter layouts differ");
    let t = iteration.max(1) as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    let mut next = moments.clone();
    for k in 0..flat.len() {
        next.m[k] = hyper.beta1 * moments.m[k] + (1.0 - hyper.beta1) * g[k];
        next.v[k] = hyper.beta2 * moments.v[k] + (1.0 - hyper.beta2) * g[k] * g[k];
        let m_hat = next.m[k] / c1;
        let v_hat = next.v[k] / c2;
        flat[k] -= learning_rate * m_hat / (v_hat.sqrt() + hyper.eps);
    }
    let mut out = params.clone();
    out.set_flat(&flat);
    (out, next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.2,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !(0.0..=1.0).contains(r)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split ratios {}/{}/{} must be in [0, 1] and sum to 1",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }
}

/// Series indices of a train/validation/test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles series indices with `rng` and cuts them by `ratios`.
pub fn split_indices(n: usize, ratios: &SplitRatios, rng: &mut impl Rng) -> Result<SplitIndices> {
    ratios.validate()?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_train = ((n as f64) * ratios.train).round() as usize;
    let n_val = (((n as f64) * ratios.val).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let out = SplitIndices {
        train: idx[..n_train].to_vec(),
        val: idx[n_train..n_train + n_val].to_vec(),
        test: idx[n_train + n_val..].to_vec(),
    };
    for (name, ratio, part) in [
        ("train", ratios.train, &out.train),
        ("validation", ratios.val, &out.val),
        ("test", ratios.test, &out.test),
    ] {
        if ratio > 0.0 && part.is_empty() {
            return Err(Error::EmptySplit(name));
        }
    }
    Ok(out)
}

/// Disjoint train/validation/test datasets.
pub fn split(dataset: &Dataset, ratios: &SplitRatios, rng: &mut impl Rng) -> Result<(Dataset, Dataset, Dataset)> {
    let s = split_indices(dataset.len(), ratios, rng)?;
    Ok((dataset.subset(&s.train), dataset.subset(&s.val), dataset.subset(&s.test)))
}

/// Parameter initialization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitScheme {
    /// Starting `θ_d` entry, giving `D_d = -θ²`. Zero sits on the stability
    /// boundary, where `∂d/∂θ = 0` and the dissipation can never be learned.
    pub theta: f64,
    /// Scale on the Glorot bound for `C` and `R`.
    pub glorot_gain: f64,
}

impl Default for InitScheme {
    fn default() -> Self {
        Self {
            theta: 0.1,
            glorot_gain: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Convergence {
    pub patience: usize,
    pub min_delta: f64,
    /// Stop once the training loss drops below this value.
    pub target_loss: f64,
}

impl Default for Convergence {
    fn default() -> Self {
        Self {
            patience: 200,
            min_delta: 1e-10,
            target_loss: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub latent_dim: usize,
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub batch_mode: BatchMode,
    pub seed: u64,
    /// Steps per series used in the loss.
    pub train_steps: usize,
    pub split: SplitRatios,
    pub init: InitScheme,
    pub adam: AdamHyper,
    pub gradient_mode: GradientMode,
    pub convergence: Convergence,
    pub cell: CellKind,
    pub use_z0: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            learning_rate: 1e-2,
            max_iterations: 1000,
            batch_mode: BatchMode::Full,
            seed: 0,
            train_steps: 15,
            split: SplitRatios::default(),
            init: InitScheme::default(),
            adam: AdamHyper::default(),
            gradient_mode: GradientMode::Exact,
            convergence: Convergence::default(),
            cell: CellKind::MidpointStable,
            use_z0: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::InvalidArgument("latent_dim must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.train_steps == 0 {
            return Err(Error::InvalidArgument("train_steps must be at least 1".into()));
        }
        self.split.validate()
    }
}

fn glorot(rows: usize, cols: usize, gain: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let a = gain * (6.0 / (rows + cols) as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| if a > 0.0 { rng.random_range(-a..a) } else { 0.0 })
}

/// Glorot-uniform `C` and `R`, constant `θ_d`, zero `z₀`.
pub fn init_params(config: &TrainConfig, l: usize, dt: f64, rng: &mut impl Rng) -> Result<ModelParams> {
    let p = config.latent_dim;
    let theta = if config.cell.constrained() {
        config.init.theta
    } else {
        -config.init.theta * config.init.theta
    };
    let c = glorot(p, p, config.init.glorot_gain, rng);
    let r = glorot(p, l, config.init.glorot_gain, rng);
    ModelParams::new(
        DVector::from_element(p, theta),
        c,
        r,
        config.use_z0.then(|| DVector::zeros(p)),
        dt,
        config.cell,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRecord {
    pub iteration: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    Patience,
    TargetLoss,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest recorded validation loss.
    pub params: ModelParams,
    pub history: Vec<HistoryRecord>,
    pub best_iteration: usize,
    pub stop: StopReason,
}

fn diverged(iteration: usize, e: Error) -> Error {
    match e {
        Error::NonFiniteState { .. } | Error::NonFiniteGradient | Error::SingularStep { .. } => {
            Error::DivergedTraining {
                iteration,
                loss: f64::NAN,
            }
        }
        other => other,
    }
}

/// Trains on `train` and selects parameters on `val` (on `train` when `val`
/// is empty). Both losses use the first `train_steps` of every series.
pub fn train_on(
    config: &TrainConfig,
    train: &[&Series],
    val: &[&Series],
    dt: f64,
    force: &dyn ForceField,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    let l = train[0].initial().len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = init_params(config, l, dt, &mut rng)?;
    fit(config, params, rng, train, val, force)
}

/// Like [`train_on`], starting from `params` instead of a fresh
/// initialization (for staged or resumed fits).
pub fn train_from(
    config: &TrainConfig,
    params: ModelParams,
    train: &[&Series],
    val: &[&Series],
    force: &dyn ForceField,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if params.l() != train[0].initial().len() || params.p() != config.latent_dim || params.kind != config.cell || params.z0.is_some() != config.use_z0 {
        return Err(Error::DimensionMismatch(format!(
            "starting model (p = {}, l = {}, {}) does not match the config and data",
            params.p(),
            params.l(),
            params.kind
        )));
    }
    fit(config, params, ChaCha8Rng::seed_from_u64(config.seed), train, val, force)
}

fn fit(
    config: &TrainConfig,
    mut params: ModelParams,
    mut rng: ChaCha8Rng,
    train: &[&Series],
    val: &[&Series],
    force: &dyn ForceField,
) -> Result<TrainOutcome> {
    let mut moments = AdamMoments::zeros(params.num_scalars());
    let horizon = Some(config.train_steps);
    let started = Instant::now();

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut since_best = 0usize;
    let mut stop = StopReason::MaxIterations;

    for it in 1..=config.max_iterations {
        let (train_loss, grads) = match config.batch_mode {
            BatchMode::Full => loss_and_gradient(&params, force, train, horizon, config.gradient_mode),
            BatchMode::PerSeries => {
                let pos = (it - 1) % train.len();
                if pos == 0 {
                    order.shuffle(&mut rng);
                }
                loss_and_gradient(&params, force, &[train[order[pos]]], horizon, config.gradient_mode)
            }
        }
        .map_err(|e| diverged(it, e))?;
        if !train_loss.is_finite() {
            return Err(Error::DivergedTraining {
                iteration: it,
                loss: train_loss,
            });
        }
        let val_loss = if val.is_empty() {
            if config.batch_mode == BatchMode::Full {
                train_loss
            } else {
                loss(&params, force, train, horizon).map_err(|e| diverged(it, e))?
            }
        } else {
            loss(&params, force, val, horizon).map_err(|e| diverged(it, e))?
        };
        history.push(HistoryRecord {
            iteration: it,
            train_loss,
            val_loss,
            wall_time: started.elapsed().as_secs_f64(),
        });
        if val_loss < best.0 - config.convergence.min_delta {
            since_best = 0;
        } else {
            since_best += 1;
        }
        if val_loss < best.0 {
            best = (val_loss, params.clone(), it);
        }
        if train_loss <= config.convergence.target_loss {
            stop = StopReason::TargetLoss;
            break;
        }
        if since_best >= config.convergence.patience {
            stop = StopReason::Patience;
            break;
        }
        let (next, m) = adam_step(&params, &grads, &moments, it, config.learning_rate, &config.adam);
        debug_assert!(!config.cell.constrained() || is_stable_continuous(&next.diag()));
        params = next;
        moments = m;
    }
    Ok(TrainOutcome {
        params: best.1,
        history,
        best_iteration: best.2,
        stop,
    })
}

/// Splits `dataset` by the configured ratios and seed, then trains.
pub fn train(config: &TrainConfig, dataset: &Dataset, force: &dyn ForceField) -> Result<(TrainOutcome, SplitIndices)> {
    if dataset.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let parts = split_indices(dataset.len(), &config.split, &mut rng)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| &dataset.series[i]).collect::<Vec<_>>();
    let outcome = train_on(config, &pick(&parts.train), &pick(&parts.val), dataset.dt, force)?;
    Ok((outcome, parts))
}

/// Accuracy of predictions against held-out data.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// `‖error_j‖ / ‖truth_j‖` per step `j = 1..=horizon`, pooled over series.
    pub per_step_relative_l2: Vec<f64>,
    /// Pooled relative L2 error over the whole horizon.
    pub relative_l2: f64,
    pub rmse: f64,
    /// Mean over series of the relative error at the last compared step.
    pub final_state_error: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Metrics of `predictions[s][j]` against `truth[s][j]` for steps
/// `1..=horizon` (index 0 is the shared initial condition).
pub fn compare(predictions: &[Vec<DVector<f64>>], truth: &[&[DVector<f64>]], horizon: usize) -> Metrics {
    let mut err2 = vec![0.0; horizon];
    let mut ref2 = vec![0.0; horizon];
    let mut count = 0usize;
    let mut final_sum = 0.0;
    for (pred, tru) in predictions.iter().zip(truth) {
        let last = horizon.min(tru.len().saturating_sub(1)).min(pred.len().saturating_sub(1));
        for j in 1..=last {
            err2[j - 1] += (&pred[j] - &tru[j]).norm_squared();
            ref2[j - 1] += tru[j].norm_squared();
            count += tru[j].len();
        }
        if last >= 1 {
            final_sum += ratio((&pred[last] - &tru[last]).norm(), tru[last].norm());
        }
    }
    let total_err: f64 = err2.iter().sum();
    let total_ref: f64 = ref2.iter().sum();
    Metrics {
        per_step_relative_l2: err2.iter().zip(&ref2).map(|(e, r)| ratio(e.sqrt(), r.sqrt())).collect(),
        relative_l2: ratio(total_err.sqrt(), total_ref.sqrt()),
        rmse: if count > 0 { (total_err / count as f64).sqrt() } else { 0.0 },
        final_state_error: if predictions.is_empty() {
            0.0
        } else {
            final_sum / predictions.len() as f64
        },
    }
}

/// Rolls the model out from each series' initial state and compares the
/// first `horizon` steps.
pub fn evaluate(params: &ModelParams, force: &dyn ForceField, dataset: &Dataset, horizon: usize) -> Result<Metrics> {
    let preds: Vec<Vec<DVector<f64>>> = dataset
        .series
        .par_iter()
        .map(|s| predict(params, force, s.initial(), horizon.min(s.steps())))
        .collect::<Result<_>>()?;
    let truth: Vec<&[DVector<f64>]> = dataset.series.iter().map(|s| s.x.as_slice()).collect();
    Ok(compare(&preds, &truth, horizon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forces::LinearForce;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

    #[test]
    fn split_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = split_indices(80, &SplitRatios::default(), &mut rng).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (56, 16, 8));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..80).collect::<Vec<_>>());

        let every = SplitRatios {
            train: 1.0,
            val: 0.0,
            test: 0.0,
        };
        let s = split_indices(10, &every, &mut rng).unwrap();
        assert_eq!(s.train.len(), 10);

        let a = split_indices(30, &SplitRatios::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = split_indices(30, &SplitRatios::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_corpus_reports_empty_split() {
        let r = split_indices(2, &SplitRatios::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(Error::EmptySplit(_))));
    }

    #[test]
    fn init_examples() {
        let config = TrainConfig {
            latent_dim: 4,
            ..TrainConfig::default()
        };
        let a = init_params(&config, 4, 0.1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = init_params(&config, 4, 0.1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        let bound = (6.0f64 / 8.0).sqrt();
        assert!(a.c.iter().all(|v| v.abs() <= bound));
        assert!(a.r.iter().all(|v| v.abs() <= bound));

        let boundary = TrainConfig {
            init: InitScheme {
                theta: 0.0,
                glorot_gain: 1.0,
            },
            use_z0: true,
            ..config
        };
        let p = init_params(&boundary, 4, 0.1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(p.diag().iter().all(|&d| d == 0.0));
        assert_eq!(p.z0, Some(DVector::zeros(4)));
    }

    #[test]
    fn adam_examples() {
        let mut params = ModelParams::zeros(2, 1, 0.1, CellKind::MidpointStable);
        params.theta_d[0] = 0.3;
        let hyper = AdamHyper::default();
        let zero = GradientSet::zeros_like(&params);
        let mut moments = AdamMoments::zeros(params.num_scalars());
        moments.m[0] = 0.5;
        moments.v[0] = 0.25;
        let (same, m) = adam_step(&params, &zero, &moments, 3, 1e-2, &hyper);
        // Bias-corrected moments still move the parameter; the raw moments decay.
        assert!((m.m[0] - 0.45).abs() < 1e-15);
        assert!((m.v[0] - 0.24975).abs() < 1e-15);
        assert_eq!(same.c, params.c);

        let (p2, m2) = adam_step(&params, &zero, &AdamMoments::zeros(params.num_scalars()), 1, 1e-2, &hyper);
        assert_eq!(p2, params);
        assert!(m2.m.iter().all(|&v| v == 0.0));

        let mut g = GradientSet::zeros_like(&params);
        g.g_r[(1, 0)] = -3.7;
        g.g_theta_d[1] = 1e-3;
        let (p3, _) = adam_step(&params, &g, &AdamMoments::zeros(params.num_scalars()), 1, 1e-2, &hyper);
        assert!((p3.r[(1, 0)] - 1e-2).abs() < 1e-9);
        assert!((p3.theta_d[1] + 1e-2).abs() < 1e-6);
    }

    #[test]
    fn metrics_examples() {
        let truth = vec![DVector::from_element(2, 1.0); 4];
        let perfect = compare(&[truth.clone()], &[&truth], 3);
        assert_eq!(perfect.relative_l2, 0.0);
        assert_eq!(perfect.rmse, 0.0);
        assert_eq!(perfect.final_state_error, 0.0);
        let zeros = vec![DVector::zeros(2); 4];
        let m = compare(&[zeros], &[&truth], 3);
        assert!((m.relative_l2 - 1.0).abs() < 1e-15);
        assert!(m.per_step_relative_l2.iter().all(|&e| (e - 1.0).abs() < 1e-15));
    }

    #[test]
    fn self_identification_reaches_tiny_loss() {
        // The loss is not convex: some generators trap the fit in a minimum
        // with one over-damped mode. This one does not.
        let (p, l) = (2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let config = TrainConfig {
            latent_dim: p,
            learning_rate: 1e-2,
            max_iterations: 4000,
            train_steps: 20,
            split: SplitRatios {
                train: 1.0,
                val: 0.0,
                test: 0.0,
            },
            convergence: Convergence {
                patience: 4000,
                min_delta: 0.0,
                target_loss: 1e-9,
            },
            ..TrainConfig::default()
        };
        let truth = init_params(&config, l, 0.1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let force = LinearForce::identity(l);
        let series: Vec<Series> = (0..8)
            .map(|_| {
                let x0 = DVector::from_fn(l, |_, _| rng.random_range(-1.0..1.0));
                Series::uniform(0.1, predict(&truth, &force, &x0, 20).unwrap())
            })
            .collect();
        let refs: Vec<&Series> = series.iter().collect();
        let out = train_on(&config, &refs, &[], 0.1, &force).unwrap();
        let final_loss = loss(&out.params, &force, &refs, Some(20)).unwrap();
        assert!(final_loss <= 1e-8, "loss {final_loss} after {} iterations", out.history.len());
        assert_eq!(out.stop, StopReason::TargetLoss);
    }

    #[test]
    fn training_is_deterministic_and_keeps_the_best() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let force = LinearForce::identity(1);
        let series: Vec<Series> = (0..10)
            .map(|_| {
                let a = rng.random_range(0.5..1.0);
                Series::uniform(0.1, (0..12).map(|j| DVector::from_element(1, a * (0.3 * j as f64).cos())).collect())
            })
            .collect();
        let dataset = Dataset::new(series, 0.1).unwrap();
        let config = TrainConfig {
            latent_dim: 3,
            max_iterations: 60,
            train_steps: 10,
            ..TrainConfig::default()
        };
        let (a, sa) = train(&config, &dataset, &force).unwrap();
        let (b, sb) = train(&config, &dataset, &force).unwrap();
        assert_eq!(sa, sb);
        assert_eq!(a.params, b.params);
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
            assert_eq!(x.val_loss.to_bits(), y.val_loss.to_bits());
        }
        let min_val = a.history.iter().map(|h| h.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(a.history[a.best_iteration - 1].val_loss, min_val);
        assert!(a.history.windows(2).all(|w| w[0].wall_time <= w[1].wall_time));
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let force = LinearForce::identity(1);
        let r = train_on(&TrainConfig::default(), &[], &[], 0.1, &force);
        assert!(matches!(r, Err(Error::EmptySplit("train"))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn adam_never_breaks_the_constraint(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params = ModelParams::zeros(3, 2, 0.1, CellKind::MidpointStable);
            let mut moments = AdamMoments::zeros(params.num_scalars());
            let hyper = AdamHyper::default();
            for it in 1..=10_000 {
                let mut g = GradientSet::zeros_like(&params);
                g.g_theta_d = DVector::from_fn(3, |_, _| rng.random_range(-10.0..10.0));
                let (p, m) = adam_step(&params, &g, &moments, it, 0.1, &hyper);
                params = p;
                moments = m;
            }
            prop_assert!(is_stable_continuous(&params.diag()));
        }
    }
}
