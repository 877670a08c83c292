use std::path::{Path, PathBuf};

use latent_rom::bptt::GradientMode;
use latent_rom::data::Series;
use latent_rom::io::{load_dataset, save_history, save_model};
use latent_rom::model::CellKind;
use latent_rom::training::{
    split_indices, train_from, train_on, AdamHyper, BatchMode, Convergence, HistoryRecord, InitScheme, SplitRatios,
    TrainConfig, TrainOutcome,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::Provenance;
use crate::config::{load, Loaded};
use crate::error::{CliError, CliResult};
use crate::force::ForceSpec;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub seed: u64,
    pub dataset: PathBuf,
    pub model: PathBuf,
    #[serde(default)]
    pub history: Option<PathBuf>,
    #[serde(default)]
    pub force: ForceSpec,
    #[serde(default)]
    pub train: TrainSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub latent_dim: usize,
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub train_steps: usize,
    pub cell: String,
    pub batch: String,
    pub gradient: String,
    pub use_z0: bool,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub theta_init: f64,
    pub glorot_gain: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub target_loss: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Growing loss horizons, each trained for `max_iterations` from the
    /// previous stage's best parameters. Empty: one stage of `train_steps`.
    pub stages: Vec<usize>,
    /// Keep wall-clock times in the history (makes it non-reproducible).
    pub record_time: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            latent_dim: d.latent_dim,
            learning_rate: d.learning_rate,
            max_iterations: d.max_iterations,
            train_steps: d.train_steps,
            cell: d.cell.to_string(),
            batch: d.batch_mode.as_str().into(),
            gradient: d.gradient_mode.as_str().into(),
            use_z0: d.use_z0,
            split: [d.split.train, d.split.val, d.split.test],
            theta_init: d.init.theta,
            glorot_gain: d.init.glorot_gain,
            patience: d.convergence.patience,
            min_delta: d.convergence.min_delta,
            target_loss: d.convergence.target_loss,
            beta1: d.adam.beta1,
            beta2: d.adam.beta2,
            eps: d.adam.eps,
            stages: Vec::new(),
            record_time: false,
        }
    }
}

fn field<T: std::str::FromStr>(name: &str, v: &str) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| CliError::Config(format!("train.{name}: {e}")))
}

impl TrainSection {
    pub fn to_config(&self, seed: u64) -> CliResult<TrainConfig> {
        let config = TrainConfig {
            latent_dim: self.latent_dim,
            learning_rate: self.learning_rate,
            max_iterations: self.max_iterations,
            batch_mode: field::<BatchMode>("batch", &self.batch)?,
            seed,
            train_steps: self.train_steps,
            split: SplitRatios {
                train: self.split[0],
                val: self.split[1],
                test: self.split[2],
            },
            init: InitScheme {
                theta: self.theta_init,
                glorot_gain: self.glorot_gain,
            },
            adam: AdamHyper {
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            },
            gradient_mode: field::<GradientMode>("gradient", &self.gradient)?,
            convergence: Convergence {
                patience: self.patience,
                min_delta: self.min_delta,
                target_loss: self.target_loss,
            },
            cell: field::<CellKind>("cell", &self.cell)?,
            use_z0: self.use_z0,
        };
        config.validate().map_err(|e| CliError::Config(format!("[train]: {e}")))?;
        Ok(config)
    }
}

pub fn run(config_path: &Path, sets: &[String]) -> CliResult<String> {
    let cfg: Loaded<TrainFile> = load(config_path, sets)?;
    let c = &cfg.value;
    let config = c.train.to_config(c.seed)?;
    let data_path = cfg.resolve(&c.dataset);
    let dataset = load_dataset(&data_path).map_err(|e| CliError::at(&data_path, e))?;
    let force = c.force.build(dataset.l)?;

    let parts = split_indices(dataset.len(), &config.split, &mut ChaCha8Rng::seed_from_u64(config.seed))?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| &dataset.series[i]).collect::<Vec<&Series>>();
    let (train, val) = (pick(&parts.train), pick(&parts.val));
    let stages = if c.train.stages.is_empty() {
        vec![config.train_steps]
    } else {
        c.train.stages.clone()
    };
    let mut outcome: Option<TrainOutcome> = None;
    let mut history: Vec<HistoryRecord> = Vec::new();
    for &h in &stages {
        let stage = TrainConfig {
            train_steps: h,
            ..config.clone()
        };
        let out = match outcome.take() {
            None => train_on(&stage, &train, &val, dataset.dt, force.field.as_ref())?,
            Some(prev) => train_from(&stage, prev.params, &train, &val, force.field.as_ref())?,
        };
        let offset = history.len();
        history.extend(out.history.iter().map(|r| HistoryRecord {
            iteration: r.iteration + offset,
            ..*r
        }));
        outcome = Some(out);
    }
    let outcome = outcome.expect("at least one stage");
    if !c.train.record_time {
        history.iter_mut().for_each(|r| r.wall_time = 0.0);
    }
    let best = history.len() - outcome.history.len() + outcome.best_iteration;
    let final_loss = history.last().map_or(f64::NAN, |r| r.train_loss);

    let prov = Provenance::new(&cfg.hash, c.seed);
    let mut meta = prov.entries();
    let join = |v: &[usize]| v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
    meta.extend([
        ("force".to_string(), c.force.to_meta()),
        ("dataset".to_string(), c.dataset.display().to_string()),
        ("train_series".to_string(), join(&parts.train)),
        ("val_series".to_string(), join(&parts.val)),
        ("test_series".to_string(), join(&parts.test)),
        ("stop".to_string(), format!("{:?}", outcome.stop)),
        ("best_iteration".to_string(), best.to_string()),
    ]);
    let model_path = cfg.resolve(&c.model);
    save_model(&outcome.params, &meta, &model_path).map_err(|e| CliError::at(&model_path, e))?;
    if let Some(h) = &c.history {
        let path = cfg.resolve(h);
        save_history(&history, &prov.entries(), &path).map_err(|e| CliError::at(&path, e))?;
    }
    Ok(format!(
        "trained {} (p = {}, l = {}) for {} iterations, final train loss {final_loss:.6e}, best iteration {best}, stop {:?}; model written to {}\n",
        config.cell,
        config.latent_dim,
        dataset.l,
        history.len(),
        outcome.stop,
        model_path.display()
    ))
}
