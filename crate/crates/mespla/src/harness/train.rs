//! Training loop: seeded shuffling, mini-batch Adam on the MSE of
//! standardized labels, per-epoch train/val loss reporting.

use rayon::prelude::*;

use crate::config::KvConfig;
use crate::engine::{adam_step, AdamParams, OptimizerState, Tape, Tensor};
use crate::error::{Error, Result};
use crate::mfef::{init_model, BatchInput, Mode, Model, ModelConfig};
use crate::preprocess::{build_model_input, ModalityMask, ModelInput, PreprocessConfig};
use crate::seeds::{self, stream};
use crate::sensors::Dataset;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub modality_mask: ModalityMask,
    pub night_alpha_train: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            seed: 1,
            modality_mask: ModalityMask::ALL,
            night_alpha_train: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(
                "batch_size must be at least 2: batch normalization needs batch statistics in train mode"
                    .into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !self.modality_mask.any() {
            return Err(Error::Config(
                "modality_mask must enable at least one modality".into(),
            ));
        }
        if let Some(a) = self.night_alpha_train {
            crate::preprocess::NightConfig::new(a)?;
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(v) = kv.get_usize("epochs")? {
            cfg.epochs = v;
        }
        if let Some(v) = kv.get_usize("batch_size")? {
            cfg.batch_size = v;
        }
        if let Some(v) = kv.get_f64("lr")? {
            cfg.lr = v;
        }
        if let Some(v) = kv.get_u64("train_seed")? {
            cfg.seed = v;
        }
        if let Some(v) = kv.get_f64("night_alpha_train")? {
            cfg.night_alpha_train = Some(v);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-epoch mean squared error in raw dB units.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossHistory {
    pub train_mse_db2: Vec<f64>,
    pub val_mse_db2: Vec<f64>,
}

/// Fill dataset-derived fields (origin fix, scene diagonal, GPS window)
/// into a preprocessing config.
pub fn preprocess_config_for(ds: &Dataset, base: &PreprocessConfig) -> PreprocessConfig {
    let mut cfg = base.clone();
    cfg.origin = ds.meta.origin;
    cfg.scene_diagonal_m =
        (ds.meta.scene.street_length.powi(2) + ds.meta.scene.street_width.powi(2)).sqrt();
    cfg.gps_window = ds.meta.gps_window;
    cfg
}

/// All samples of a dataset preprocessed once (full modality mask).
pub struct PreparedData {
    pub inputs: Vec<ModelInput>,
    pub labels: Vec<f64>,
    pub pre: PreprocessConfig,
}

pub fn prepare(ds: &Dataset, base: &PreprocessConfig) -> Result<PreparedData> {
    let pre = preprocess_config_for(ds, base);
    let inputs: Vec<ModelInput> = ds
        .samples
        .par_iter()
        .map(|s| build_model_input(s, &pre, ModalityMask::ALL))
        .collect::<Result<Vec<_>>>()?;
    let labels = ds.samples.iter().map(|s| s.label.pl_db).collect();
    Ok(PreparedData {
        inputs,
        labels,
        pre,
    })
}

/// Standardization constants of the training labels.
fn label_stats(labels: &[f64], idx: &[usize]) -> (f64, f64) {
    let n = idx.len() as f64;
    let mean = idx.iter().map(|&i| labels[i]).sum::<f64>() / n;
    let var = idx.iter().map(|&i| (labels[i] - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt().max(1e-9))
}

/// Train a fresh model for the configured modality set on the prepared
/// dataset. Returns the model and the per-epoch loss history.
pub fn train_on_prepared(
    data: &PreparedData,
    ds: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(Model, LossHistory)> {
    train_cfg.validate()?;
    let train_idx = &ds.split.train;
    if train_idx.is_empty() {
        return Err(Error::Data("train split is empty".into()));
    }
    if train_cfg.batch_size > train_idx.len() {
        return Err(Error::Config(format!(
            "batch_size {} exceeds train split size {}",
            train_cfg.batch_size,
            train_idx.len()
        )));
    }
    let mask = train_cfg.modality_mask;
    let mut cfg = model_cfg.clone();
    cfg.modalities = mask;
    cfg.gps_window = ds.meta.gps_window;
    let mut model = init_model(&cfg)?;
    let (mean, std) = label_stats(&data.labels, train_idx);
    model.label_mean = mean;
    model.label_std = std;

    // Night-trained images when requested.
    let night_inputs: Option<Vec<ModelInput>> = match train_cfg.night_alpha_train {
        Some(alpha) if mask.image => {
            let imgs: Vec<ModelInput> = ds
                .samples
                .par_iter()
                .zip(data.inputs.par_iter())
                .map(|(s, inp)| {
                    let mut inp = inp.clone();
                    inp.image_tensor =
                        crate::preprocess::image_to_tensor(&s.image, Some(alpha))?;
                    Ok(inp)
                })
                .collect::<Result<Vec<_>>>()?;
            Some(imgs)
        }
        _ => None,
    };
    let inputs: &[ModelInput] = night_inputs.as_deref().unwrap_or(&data.inputs);

    let mut params = model.param_tensors();
    let mut opt = OptimizerState::new(
        &params,
        AdamParams {
            lr: train_cfg.lr,
            ..Default::default()
        },
    );
    let mut history = LossHistory::default();

    for epoch in 0..train_cfg.epochs {
        let mut order = train_idx.to_vec();
        use rand::seq::SliceRandom;
        let mut rng = seeds::rng(train_cfg.seed, stream::SHUFFLE, epoch as u64);
        order.shuffle(&mut rng);

        let mut epoch_sq_sum = 0.0f64;
        let mut epoch_count = 0usize;
        for chunk in order.chunks(train_cfg.batch_size) {
            if chunk.len() < 2 {
                continue; // batchnorm needs batch statistics
            }
            let batch_inputs: Vec<&ModelInput> = chunk.iter().map(|&i| &inputs[i]).collect();
            let batch = BatchInput::stack(&batch_inputs, mask)?;
            let targets = Tensor::new(
                vec![chunk.len(), 1],
                chunk
                    .iter()
                    .map(|&i| (data.labels[i] - mean) / std)
                    .collect(),
            )?;
            let mut tape = Tape::new();
            let fwd = model.forward(&mut tape, &batch, Mode::Train)?;
            let target_node = tape.constant(targets);
            let loss = tape.mse_loss(fwd.pred, target_node)?;
            tape.backward(loss)?;
            let grads: Vec<Vec<f64>> = fwd
                .param_nodes
                .iter()
                .map(|id| tape.grad_or_zeros(*id))
                .collect();
            adam_step(&mut params, &grads, &mut opt)?;
            model.set_params(params.clone())?;
            model.apply_bn_updates(&fwd.bn_updates);
            let batch_mse = tape.value(loss).item()?;
            epoch_sq_sum += batch_mse * chunk.len() as f64;
            epoch_count += chunk.len();
        }
        let train_mse_std = epoch_sq_sum / epoch_count.max(1) as f64;
        history.train_mse_db2.push(train_mse_std * std * std);

        // Validation loss in eval mode (skipped when the split is empty).
        if ds.split.val.is_empty() {
            history.val_mse_db2.push(f64::NAN);
        } else {
            let refs: Vec<&ModelInput> = ds.split.val.iter().map(|&i| &inputs[i]).collect();
            let preds = super::metrics::predict_batch(&model, &refs)?;
            let mse: f64 = ds
                .split
                .val
                .iter()
                .zip(preds.iter())
                .map(|(&i, p)| (p - data.labels[i]).powi(2))
                .sum::<f64>()
                / ds.split.val.len() as f64;
            history.val_mse_db2.push(mse);
        }
    }
    Ok((model, history))
}

/// Preprocess and train in one call.
pub fn train(
    ds: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(Model, LossHistory)> {
    let data = prepare(ds, &PreprocessConfig::default())?;
    train_on_prepared(&data, ds, model_cfg, train_cfg)
}

/// Full-batch optimization sanity probe: fit the given samples until the
/// training MSE (in dB^2) drops below `target_mse_db2` or `max_steps` runs
/// out. Returns the trained model, steps used, and the final MSE.
pub fn overfit_probe(
    inputs: &[ModelInput],
    labels: &[f64],
    model_cfg: &ModelConfig,
    lr: f64,
    max_steps: usize,
    target_mse_db2: f64,
) -> Result<(Model, usize, f64)> {
    if inputs.len() < 2 || inputs.len() != labels.len() {
        return Err(Error::Contract(
            "overfit probe needs at least two aligned samples".into(),
        ));
    }
    let mut model = init_model(model_cfg)?;
    let idx: Vec<usize> = (0..labels.len()).collect();
    let (mean, std) = label_stats(labels, &idx);
    model.label_mean = mean;
    model.label_std = std;
    let mask = model_cfg.modalities;
    let refs: Vec<&ModelInput> = inputs.iter().collect();
    let batch = BatchInput::stack(&refs, mask)?;
    let targets: Vec<f64> = labels.iter().map(|l| (l - mean) / std).collect();
    let mut params = model.param_tensors();
    let mut opt = OptimizerState::new(
        &params,
        AdamParams {
            lr,
            ..Default::default()
        },
    );
    let mut last_mse = f64::INFINITY;
    for step in 1..=max_steps {
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, &batch, Mode::Train)?;
        let t = tape.constant(Tensor::new(vec![labels.len(), 1], targets.clone())?);
        let loss = tape.mse_loss(fwd.pred, t)?;
        tape.backward(loss)?;
        let grads: Vec<Vec<f64>> = fwd
            .param_nodes
            .iter()
            .map(|id| tape.grad_or_zeros(*id))
            .collect();
        adam_step(&mut params, &grads, &mut opt)?;
        model.set_params(params.clone())?;
        model.apply_bn_updates(&fwd.bn_updates);
        last_mse = tape.value(loss).item()? * std * std;
        if last_mse < target_mse_db2 {
            return Ok((model, step, last_mse));
        }
    }
    Ok((model, max_steps, last_mse))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{build_scene, generate_routes, SceneConfig};
    use crate::sensors::{generate_dataset_with, CameraConfig, GenOptions, LidarConfig};

    fn small_dataset(n: usize) -> Dataset {
        let scene = build_scene(&SceneConfig::default()).unwrap();
        let routes = generate_routes(&scene, 4, 11).unwrap();
        let opts = GenOptions {
            camera: CameraConfig {
                width: 32,
                height: 32,
                ..Default::default()
            },
            lidar: LidarConfig {
                azimuth_steps: 120,
                elevation_steps: 6,
                ..Default::default()
            },
            ..Default::default()
        };
        generate_dataset_with(&scene, &routes, n, 4, 77, &opts).unwrap()
    }

    fn small_model_cfg() -> ModelConfig {
        ModelConfig {
            width_mult: 0.125,
            seed: 5,
            gps_window: 4,
            ..Default::default()
        }
    }

    #[test]
    fn batch_size_one_is_rejected_citing_batchnorm() {
        let cfg = TrainConfig {
            batch_size: 1,
            ..Default::default()
        };
        match cfg.validate() {
            Err(Error::Config(msg)) => {
                assert!(msg.to_lowercase().contains("batch normalization"), "{msg}")
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn training_is_deterministic_and_loss_history_repeats() {
        let ds = small_dataset(60);
        let mcfg = small_model_cfg();
        let tcfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            seed: 9,
            ..Default::default()
        };
        let mut pre = PreprocessConfig::default();
        pre.point_budget = 64;
        let data = prepare(&ds, &pre).unwrap();
        let (m1, h1) = train_on_prepared(&data, &ds, &mcfg, &tcfg).unwrap();
        let (m2, h2) = train_on_prepared(&data, &ds, &mcfg, &tcfg).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
        assert_eq!(h1.train_mse_db2.len(), 2);
        assert_eq!(h1.val_mse_db2.len(), 2);
        assert!(h1.train_mse_db2.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn empty_train_split_is_a_data_error() {
        let mut ds = small_dataset(20);
        ds.split.val.extend(ds.split.train.drain(..));
        ds.split.val.sort_unstable();
        let data = prepare(&ds, &PreprocessConfig::default()).unwrap();
        assert!(matches!(
            train_on_prepared(&data, &ds, &small_model_cfg(), &TrainConfig::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn oversized_batch_is_rejected() {
        let ds = small_dataset(20);
        let data = prepare(&ds, &PreprocessConfig::default()).unwrap();
        let tcfg = TrainConfig {
            batch_size: 100,
            ..Default::default()
        };
        assert!(matches!(
            train_on_prepared(&data, &ds, &small_model_cfg(), &tcfg),
            Err(Error::Config(_))
        ));
    }
}
