use std::path::{Path, PathBuf};

use latent_rom::cell::predict;
use latent_rom::data::Dataset;
use latent_rom::io::{export_plot_data, fmt_f64, load_dataset, load_model, Metadata};
use latent_rom::model::ModelParams;
use latent_rom::training::compare;

use crate::error::{CliError, CliResult};
use crate::force::{Force, ForceSpec};

pub struct PredictArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    /// Steps to predict; defaults to the longest series.
    pub horizon: Option<usize>,
    pub out: PathBuf,
    /// Per-step errors; defaults to `<out>.metrics`.
    pub metrics: Option<PathBuf>,
    /// Use every series instead of the model's test split.
    pub all: bool,
}

/// Model parameters, header entries and the force recorded with them.
pub fn load_model_with_force(path: &Path) -> CliResult<(ModelParams, Metadata, ForceSpec, Force)> {
    let (params, meta) = load_model(path).map_err(|e| CliError::at(path, e))?;
    let spec = match meta_value(&meta, "force") {
        Some(s) => ForceSpec::from_meta(s).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        None => ForceSpec::default(),
    };
    let force = spec.build(params.l())?;
    Ok((params, meta, spec, force))
}

pub fn meta_value<'a>(meta: &'a Metadata, key: &str) -> Option<&'a str> {
    meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

fn selected(meta: &Metadata, dataset: &Dataset, all: bool) -> Vec<usize> {
    let recorded = meta_value(meta, "test_series").and_then(|s| {
        s.split_whitespace()
            .map(|t| t.parse::<usize>().ok().filter(|&i| i < dataset.len()))
            .collect::<Option<Vec<_>>>()
    });
    match recorded {
        Some(idx) if !all && !idx.is_empty() => idx,
        _ => (0..dataset.len()).collect(),
    }
}

pub fn run(args: &PredictArgs) -> CliResult<String> {
    let (params, meta, _, force) = load_model_with_force(&args.model)?;
    let dataset = load_dataset(&args.data).map_err(|e| CliError::at(&args.data, e))?;
    if dataset.l != params.l() {
        return Err(CliError::Config(format!(
            "model has l = {} but {} has l = {}",
            params.l(),
            args.data.display(),
            dataset.l
        )));
    }
    let series = selected(&meta, &dataset, args.all);
    let horizon = args
        .horizon
        .unwrap_or_else(|| series.iter().map(|&i| dataset.series[i].steps()).max().unwrap_or(0));

    let mut preds = Vec::with_capacity(series.len());
    for &i in &series {
        let s = &dataset.series[i];
        preds.push(predict(&params, force.field.as_ref(), s.initial(), horizon)?);
    }
    let truth: Vec<&[_]> = series.iter().map(|&i| dataset.series[i].x.as_slice()).collect();
    let metrics = compare(&preds, &truth, horizon);

    let t0 = series.first().map_or(0.0, |&i| dataset.series[i].t[0]);
    let t: Vec<f64> = (0..=horizon).map(|j| t0 + j as f64 * params.dt).collect();
    let mut names = vec!["t".to_string()];
    let mut cols: Vec<Vec<f64>> = vec![t];
    for (k, &i) in series.iter().enumerate() {
        for d in 0..dataset.l {
            names.push(format!("s{i}_pred_{d}"));
            cols.push(preds[k].iter().map(|x| x[d]).collect());
            names.push(format!("s{i}_true_{d}"));
            cols.push(dataset.series[i].x.iter().take(horizon + 1).map(|x| x[d]).collect());
        }
    }
    let mut header: Vec<(String, String)> = ["config_hash", "seed"]
        .iter()
        .filter_map(|k| meta_value(&meta, k).map(|v| (format!("model_{k}"), v.to_string())))
        .collect();
    header.extend([
        ("horizon".to_string(), horizon.to_string()),
        ("relative_l2".to_string(), fmt_f64(metrics.relative_l2)),
        ("rmse".to_string(), fmt_f64(metrics.rmse)),
        ("final_state_error".to_string(), fmt_f64(metrics.final_state_error)),
    ]);
    let columns: Vec<(&str, &[f64])> = names.iter().map(String::as_str).zip(cols.iter().map(Vec::as_slice)).collect();
    export_plot_data(&columns, &header, &args.out).map_err(|e| CliError::at(&args.out, e))?;

    let metrics_path = args
        .metrics
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.metrics", args.out.display())));
    let steps: Vec<f64> = (1..=metrics.per_step_relative_l2.len()).map(|j| j as f64).collect();
    export_plot_data(
        &[("step", &steps), ("relative_l2", &metrics.per_step_relative_l2)],
        &header,
        &metrics_path,
    )
    .map_err(|e| CliError::at(&metrics_path, e))?;

    Ok(format!(
        "predicted {} series for {horizon} steps: relative L2 {:.6e}, rmse {:.6e}, final-state error {:.6e}\n",
        series.len(),
        metrics.relative_l2,
        metrics.rmse,
        metrics.final_state_error
    ))
}
