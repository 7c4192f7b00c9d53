//! RMSE and empirical CDF evaluation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mfef::{BatchInput, Mode, Model};
use crate::preprocess::{image_to_tensor, ModelInput, PreprocessConfig};
use crate::sensors::Dataset;

use super::train::preprocess_config_for;

/// Which index list of the dataset to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn indices<'d>(&self, ds: &'d Dataset) -> &'d [usize] {
        match self {
            Split::Train => &ds.split.train,
            Split::Val => &ds.split.val,
            Split::Test => &ds.split.test,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Evaluation output: RMSE in dB, absolute errors, and their empirical CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub rmse_db: f64,
    pub per_sample_abs_err: Vec<f64>,
    pub cdf: Vec<(f64, f64)>,
}

/// Root mean square error of predictions against labels.
pub fn rmse(preds: &[f64], labels: &[f64]) -> Result<f64> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::Data(format!(
            "rmse needs matching nonempty vectors, got {} and {}",
            preds.len(),
            labels.len()
        )));
    }
    let sum: f64 = preds
        .iter()
        .zip(labels)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((sum / preds.len() as f64).sqrt())
}

/// Empirical CDF: sorted ascending, one point per distinct error, ending at 1.
pub fn empirical_cdf(abs_errors: &[f64]) -> Vec<(f64, f64)> {
    if abs_errors.is_empty() {
        return Vec::new();
    }
    let mut sorted = abs_errors.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
    let n = sorted.len() as f64;
    let mut cdf: Vec<(f64, f64)> = Vec::new();
    for (i, e) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match cdf.last_mut() {
            Some(last) if last.0 == *e => last.1 = frac,
            _ => cdf.push((*e, frac)),
        }
    }
    cdf
}

/// Batched eval-mode predictions in dB for prepared inputs.
pub(crate) fn predict_batch(model: &Model, inputs: &[&ModelInput]) -> Result<Vec<f64>> {
    let mask = model.config.modalities;
    let chunk = 64;
    let chunks: Vec<&[&ModelInput]> = inputs.chunks(chunk).collect();
    let results: Vec<Result<Vec<f64>>> = chunks
        .par_iter()
        .map(|part| {
            let batch = BatchInput::stack(part, mask)?;
            let mut tape = crate::engine::Tape::new();
            let fwd = model.forward(&mut tape, &batch, Mode::Eval)?;
            Ok(tape
                .value(fwd.pred)
                .data()
                .iter()
                .map(|v| v * model.label_std + model.label_mean)
                .collect())
        })
        .collect();
    let mut out = Vec::with_capacity(inputs.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Eval-mode metrics over a split. `night_alpha` darkens images only
/// (clouds and GPS untouched); an alpha of exactly 1 is the identity.
pub fn evaluate(
    model: &Model,
    ds: &Dataset,
    split: Split,
    night_alpha: Option<f64>,
) -> Result<Metrics> {
    let pre = preprocess_config_for(ds, &PreprocessConfig::default());
    evaluate_with(model, ds, split, night_alpha, &pre)
}

pub fn evaluate_with(
    model: &Model,
    ds: &Dataset,
    split: Split,
    night_alpha: Option<f64>,
    pre: &PreprocessConfig,
) -> Result<Metrics> {
    if let Some(a) = night_alpha {
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::Config(format!(
                "evaluation night alpha must lie in (0, 1], got {a}"
            )));
        }
    }
    let idx = split.indices(ds);
    if idx.is_empty() {
        return Err(Error::Data(format!("{} split is empty", split.name())));
    }
    let mask = model.config.modalities;
    let inputs: Vec<ModelInput> = idx
        .par_iter()
        .map(|&i| {
            let mut input = crate::preprocess::build_model_input(&ds.samples[i], pre, mask)?;
            if mask.image {
                input.image_tensor = image_to_tensor(&ds.samples[i].image, night_alpha)?;
            }
            Ok(input)
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&ModelInput> = inputs.iter().collect();
    let preds = predict_batch(model, &refs)?;
    let labels: Vec<f64> = idx.iter().map(|&i| ds.samples[i].label.pl_db).collect();
    metrics_from(&preds, &labels)
}

/// Metrics over already-preprocessed inputs; shared by the study runner.
pub(crate) fn evaluate_prepared(
    model: &Model,
    inputs: &[&ModelInput],
    labels: &[f64],
) -> Result<Metrics> {
    let preds = predict_batch(model, inputs)?;
    metrics_from(&preds, labels)
}

fn metrics_from(preds: &[f64], labels: &[f64]) -> Result<Metrics> {
    let rmse_db = rmse(preds, labels)?;
    let per_sample_abs_err: Vec<f64> = preds
        .iter()
        .zip(labels)
        .map(|(p, t)| (p - t).abs())
        .collect();
    let cdf = empirical_cdf(&per_sample_abs_err);
    Ok(Metrics {
        rmse_db,
        per_sample_abs_err,
        cdf,
    })
}
