//! Multi-modal feature extraction and fusion network: a residual CNN image
//! encoder, a point encoder with a learned spatial transform and max pooling,
//! a GRU over the GPS track, attention-weighted fusion, and a regression
//! head predicting path loss in dB.

pub(crate) mod encoders;
mod fusion;

pub use fusion::FusionTrace;

use std::collections::BTreeMap;

use rand::Rng;

use crate::config::KvConfig;
use crate::engine::checkpoint;
use crate::engine::tape::{BnUpdate, NodeId, Tape};
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::preprocess::{ModalityMask, ModelInput};
use crate::seeds::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Architecture hyperparameters. `width_mult` scales the interior channel
/// counts and the per-modality feature widths (rounding up, minimum 1);
/// the fused width and head stay fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub width_mult: f64,
    pub d_img: usize,
    pub d_pc: usize,
    pub d_gps: usize,
    pub d_fused: usize,
    pub image_stage_channels: [usize; 4],
    pub pc_channels: [usize; 3],
    pub use_stn: bool,
    pub gps_window: usize,
    pub seed: u64,
    pub modalities: ModalityMask,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width_mult: 1.0,
            d_img: 512,
            d_pc: 1024,
            d_gps: 128,
            d_fused: 128,
            image_stage_channels: [16, 32, 64, 128],
            pc_channels: [64, 128, 1024],
            use_stn: true,
            gps_window: 8,
            seed: 0,
            modalities: ModalityMask::ALL,
        }
    }
}

/// Channel plan of the point-feature spatial transform at width 1.
const STN_BASE_CHANNELS: [usize; 2] = [16, 32];
/// Hidden width of the prediction head (fixed, not width-scaled).
pub const HEAD_HIDDEN: usize = 64;
pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

/// Width-scaled layer sizes derived from a [`ModelConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledDims {
    pub d_img: usize,
    pub d_pc: usize,
    pub d_gps: usize,
    pub d_fused: usize,
    pub stages: [usize; 4],
    pub pc: [usize; 3],
    pub stn: [usize; 2],
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.width_mult > 0.0 && self.width_mult <= 1.0) {
            return Err(Error::Config(format!(
                "width_mult must be in (0, 1], got {}",
                self.width_mult
            )));
        }
        for (name, v) in [
            ("d_img", self.d_img),
            ("d_pc", self.d_pc),
            ("d_gps", self.d_gps),
            ("d_fused", self.d_fused),
            ("gps_window", self.gps_window),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.image_stage_channels.iter().any(|&c| c == 0)
            || self.pc_channels.iter().any(|&c| c == 0)
        {
            return Err(Error::Config("channel counts must be at least 1".into()));
        }
        if self.d_pc != self.pc_channels[2] {
            return Err(Error::Config(format!(
                "d_pc ({}) must equal the last point-encoder channel count ({})",
                self.d_pc, self.pc_channels[2]
            )));
        }
        if !self.modalities.any() {
            return Err(Error::Config(
                "model must include at least one modality".into(),
            ));
        }
        Ok(())
    }

    pub fn scale(&self, d: usize) -> usize {
        ((d as f64 * self.width_mult).ceil() as usize).max(1)
    }

    pub fn scaled(&self) -> ScaledDims {
        ScaledDims {
            d_img: self.scale(self.d_img),
            d_pc: self.scale(self.d_pc),
            d_gps: self.scale(self.d_gps),
            d_fused: self.d_fused,
            stages: self.image_stage_channels.map(|c| self.scale(c)),
            pc: self.pc_channels.map(|c| self.scale(c)),
            stn: STN_BASE_CHANNELS.map(|c| self.scale(c)),
        }
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(v) = kv.get_f64("width_mult")? {
            cfg.width_mult = v;
        }
        if let Some(v) = kv.get_usize("d_img")? {
            cfg.d_img = v;
        }
        if let Some(v) = kv.get_usize("d_pc")? {
            cfg.d_pc = v;
        }
        if let Some(v) = kv.get_usize("d_gps")? {
            cfg.d_gps = v;
        }
        if let Some(v) = kv.get_usize("d_fused")? {
            cfg.d_fused = v;
        }
        if let Some(v) = kv.get_usize_list("image_stage_channels")? {
            if v.len() != 4 {
                return Err(Error::Config(
                    "image_stage_channels must list 4 values".into(),
                ));
            }
            cfg.image_stage_channels = [v[0], v[1], v[2], v[3]];
        }
        if let Some(v) = kv.get_usize_list("pc_channels")? {
            if v.len() != 3 {
                return Err(Error::Config("pc_channels must list 3 values".into()));
            }
            cfg.pc_channels = [v[0], v[1], v[2]];
        }
        if let Some(v) = kv.get_bool("use_stn")? {
            cfg.use_stn = v;
        }
        if let Some(v) = kv.get_usize("gps_window")? {
            cfg.gps_window = v;
        }
        if let Some(v) = kv.get_u64("model_seed")? {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Param {
    name: String,
    value: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
struct BnState {
    name: String,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
}

/// The parameter collection plus batchnorm running statistics and the label
/// standardization constants set by training.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    params: Vec<Param>,
    param_index: BTreeMap<String, usize>,
    bn: Vec<BnState>,
    bn_index: BTreeMap<String, usize>,
    pub label_mean: f64,
    pub label_std: f64,
}

/// Stacked batch ready for a forward pass. The GPS track is kept as one
/// tensor per timestep so the recurrence needs no slicing.
#[derive(Debug, Clone)]
pub struct BatchInput {
    pub image: Option<Tensor>,
    pub points: Option<Tensor>,
    pub gps: Option<Vec<Tensor>>,
    pub batch: usize,
    pub mask: ModalityMask,
}

impl BatchInput {
    /// Stack per-sample inputs; only the masked-in modalities are stacked.
    pub fn stack(inputs: &[&ModelInput], mask: ModalityMask) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Contract("cannot stack an empty batch".into()));
        }
        if !mask.any() {
            return Err(Error::Contract(
                "batch mask must include at least one modality".into(),
            ));
        }
        let b = inputs.len();
        let image = if mask.image {
            let s0 = inputs[0].image_tensor.shape().to_vec();
            let mut data = Vec::with_capacity(b * inputs[0].image_tensor.numel());
            for inp in inputs {
                if inp.image_tensor.shape() != s0 {
                    return Err(Error::Shape {
                        op: "stack_image",
                        lhs: s0.clone(),
                        rhs: inp.image_tensor.shape().to_vec(),
                    });
                }
                data.extend_from_slice(inp.image_tensor.data());
            }
            Some(Tensor::new(vec![b, s0[0], s0[1], s0[2]], data)?)
        } else {
            None
        };
        let points = if mask.cloud {
            let s0 = inputs[0].point_tensor.shape().to_vec();
            let mut data = Vec::with_capacity(b * inputs[0].point_tensor.numel());
            for inp in inputs {
                if inp.point_tensor.shape() != s0 {
                    return Err(Error::Shape {
                        op: "stack_points",
                        lhs: s0.clone(),
                        rhs: inp.point_tensor.shape().to_vec(),
                    });
                }
                data.extend_from_slice(inp.point_tensor.data());
            }
            Some(Tensor::new(vec![b, s0[0], s0[1]], data)?)
        } else {
            None
        };
        let gps = if mask.gps {
            let t_len = inputs[0].gps_tensor.shape()[0];
            let mut steps = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let mut data = Vec::with_capacity(b * 3);
                for inp in inputs {
                    if inp.gps_tensor.shape() != [t_len, 3] {
                        return Err(Error::Shape {
                            op: "stack_gps",
                            lhs: vec![t_len, 3],
                            rhs: inp.gps_tensor.shape().to_vec(),
                        });
                    }
                    data.extend_from_slice(&inp.gps_tensor.data()[t * 3..t * 3 + 3]);
                }
                steps.push(Tensor::new(vec![b, 3], data)?);
            }
            Some(steps)
        } else {
            None
        };
        Ok(Self {
            image,
            points,
            gps,
            batch: b,
            mask,
        })
    }
}

/// Handles into one forward pass on a tape.
#[derive(Debug)]
pub struct Forward {
    /// \[B, 1\] prediction in standardized label units.
    pub pred: NodeId,
    /// \[B, 3\] attention weights (masked entries exactly zero).
    pub weights: NodeId,
    /// Projected per-modality features, present where the mask is set.
    pub projected: [Option<NodeId>; 3],
    /// Tape leaves aligned with the model's parameter order.
    pub param_nodes: Vec<NodeId>,
    /// Deferred running-statistic updates from train-mode batchnorm.
    pub bn_updates: Vec<(usize, BnUpdate)>,
}

/// Builder used during init so parameter registration order is canonical.
struct ParamBuilder {
    rng: rand_chacha::ChaCha8Rng,
    params: Vec<Param>,
    bn: Vec<BnState>,
}

impl ParamBuilder {
    fn uniform(&mut self, name: &str, shape: Vec<usize>, fan_in: usize) -> Result<()> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| (self.rng.random::<f64>() * 2.0 - 1.0) * bound)
            .collect();
        self.params.push(Param {
            name: name.to_string(),
            value: Tensor::new(shape, data)?,
        });
        Ok(())
    }

    fn zeros(&mut self, name: &str, shape: Vec<usize>) {
        self.params.push(Param {
            name: name.to_string(),
            value: Tensor::zeros(shape),
        });
    }

    fn constant(&mut self, name: &str, shape: Vec<usize>, value: f64) {
        self.params.push(Param {
            name: name.to_string(),
            value: Tensor::full(shape, value),
        });
    }

    /// Batchnorm affine pair plus running statistics.
    fn bn(&mut self, name: &str, channels: usize) {
        self.constant(&format!("{name}.gamma"), vec![channels], 1.0);
        self.zeros(&format!("{name}.beta"), vec![channels]);
        self.bn.push(BnState {
            name: name.to_string(),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        });
    }
}

/// Deterministic parameter initialization from the config seed. The spatial
/// transform's final layer is zero-initialized so a fresh model applies the
/// identity transform.
pub fn init_model(config: &ModelConfig) -> Result<Model> {
    config.validate()?;
    let dims = config.scaled();
    let mut b = ParamBuilder {
        rng: seeds::rng(config.seed, stream::PARAM_INIT, 0),
        params: Vec::new(),
        bn: Vec::new(),
    };

    if config.modalities.image {
        let c1 = dims.stages[0];
        b.uniform("img.stem.w", vec![c1, 3, 3, 3], 3 * 9)?;
        b.bn("img.stem.bn", c1);
        let mut in_ch = c1;
        for (s, &ch) in dims.stages.iter().enumerate() {
            for blk in 0..2 {
                let stride = if s > 0 && blk == 0 { 2 } else { 1 };
                let prefix = format!("img.s{s}.b{blk}");
                b.uniform(&format!("{prefix}.conv1.w"), vec![ch, in_ch, 3, 3], in_ch * 9)?;
                b.bn(&format!("{prefix}.bn1"), ch);
                b.uniform(&format!("{prefix}.conv2.w"), vec![ch, ch, 3, 3], ch * 9)?;
                b.bn(&format!("{prefix}.bn2"), ch);
                if stride != 1 || in_ch != ch {
                    b.uniform(&format!("{prefix}.proj.w"), vec![ch, in_ch, 1, 1], in_ch)?;
                    b.bn(&format!("{prefix}.proj_bn"), ch);
                }
                in_ch = ch;
            }
        }
        b.uniform("img.fc.w", vec![dims.stages[3], dims.d_img], dims.stages[3])?;
        b.uniform("img.fc.b", vec![dims.d_img], dims.stages[3])?;
    }

    if config.modalities.cloud {
        if config.use_stn {
            let (a, c) = (dims.stn[0], dims.stn[1]);
            b.uniform("stn.conv1.w", vec![a, 3], 3)?;
            b.uniform("stn.conv1.b", vec![a], 3)?;
            b.uniform("stn.conv2.w", vec![c, a], a)?;
            b.uniform("stn.conv2.b", vec![c], a)?;
            b.zeros("stn.fc.w", vec![c, 9]);
            b.zeros("stn.fc.b", vec![9]);
        }
        let (p1, p2, p3) = (dims.pc[0], dims.pc[1], dims.pc[2]);
        b.uniform("pc.conv1.w", vec![p1, 3], 3)?;
        b.bn("pc.bn1", p1);
        b.uniform("pc.conv2.w", vec![p2, p1], p1)?;
        b.bn("pc.bn2", p2);
        b.uniform("pc.conv3.w", vec![p3, p2], p2)?;
        b.bn("pc.bn3", p3);
    }

    if config.modalities.gps {
        let dh = dims.d_gps;
        for gate in ["z", "r", "h"] {
            b.uniform(&format!("gps.w{gate}"), vec![3, dh], 3)?;
            b.uniform(&format!("gps.u{gate}"), vec![dh, dh], dh)?;
            b.uniform(&format!("gps.b{gate}"), vec![dh], dh)?;
        }
    }

    // Per-modality projections to the fused width.
    if config.modalities.image {
        b.uniform("fuse.proj_img.w", vec![dims.d_img, dims.d_fused], dims.d_img)?;
        b.uniform("fuse.proj_img.b", vec![dims.d_fused], dims.d_img)?;
    }
    if config.modalities.cloud {
        b.uniform("fuse.proj_pc.w", vec![dims.d_pc, dims.d_fused], dims.d_pc)?;
        b.uniform("fuse.proj_pc.b", vec![dims.d_fused], dims.d_pc)?;
    }
    if config.modalities.gps {
        b.uniform("fuse.proj_gps.w", vec![dims.d_gps, dims.d_fused], dims.d_gps)?;
        b.uniform("fuse.proj_gps.b", vec![dims.d_fused], dims.d_gps)?;
    }
    // Attention scorer over the concatenated projections (3 logits).
    b.uniform("fuse.score.w", vec![3 * dims.d_fused, 3], 3 * dims.d_fused)?;
    b.uniform("fuse.score.b", vec![3], 3 * dims.d_fused)?;
    // Prediction head.
    b.uniform("head.fc1.w", vec![dims.d_fused, HEAD_HIDDEN], dims.d_fused)?;
    b.uniform("head.fc1.b", vec![HEAD_HIDDEN], dims.d_fused)?;
    b.uniform("head.fc2.w", vec![HEAD_HIDDEN, 1], HEAD_HIDDEN)?;
    b.uniform("head.fc2.b", vec![1], HEAD_HIDDEN)?;

    let param_index = b
        .params
        .iter()
        .enumerate()
        .map(|(i, p)| (p.name.clone(), i))
        .collect();
    let bn_index = b
        .bn
        .iter()
        .enumerate()
        .map(|(i, s)| (s.name.clone(), i))
        .collect();
    Ok(Model {
        config: config.clone(),
        params: b.params,
        param_index,
        bn: b.bn,
        bn_index,
        label_mean: 0.0,
        label_std: 1.0,
    })
}

impl Model {
    pub fn param(&self, name: &str) -> Result<&Tensor> {
        self.param_index
            .get(name)
            .map(|&i| &self.params[i].value)
            .ok_or_else(|| Error::Contract(format!("no parameter named {name}")))
    }

    pub(crate) fn param_id(&self, name: &str) -> Result<usize> {
        self.param_index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("no parameter named {name}")))
    }

    pub(crate) fn bn_id(&self, name: &str) -> Result<usize> {
        self.bn_index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("no batchnorm state named {name}")))
    }

    pub(crate) fn bn_running(&self, id: usize) -> (&[f64], &[f64]) {
        (
            self.bn[id].running_mean.as_slice(),
            self.bn[id].running_var.as_slice(),
        )
    }

    pub fn param_names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn total_weights(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn bn_state(&self, name: &str) -> Result<(&[f64], &[f64])> {
        let id = self.bn_id(name)?;
        Ok(self.bn_running(id))
    }

    /// Parameter tensors in registration order, for the optimizer.
    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = self.param_id(name)?;
        if self.params[i].value.shape() != value.shape() {
            return Err(Error::Shape {
                op: "set_param",
                lhs: self.params[i].value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        self.params[i].value = value;
        Ok(())
    }

    pub fn set_params(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        if tensors.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                tensors.len()
            )));
        }
        for (p, t) in self.params.iter_mut().zip(tensors) {
            if p.value.shape() != t.shape() {
                return Err(Error::Shape {
                    op: "set_params",
                    lhs: p.value.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            p.value = t;
        }
        Ok(())
    }

    pub fn apply_bn_updates(&mut self, updates: &[(usize, BnUpdate)]) {
        for (i, u) in updates {
            self.bn[*i].running_mean = u.running_mean.clone();
            self.bn[*i].running_var = u.running_var.clone();
        }
    }

    /// Checkpoint entries in a canonical order; byte-stable.
    pub fn to_entries(&self) -> Vec<(String, Tensor)> {
        let c = &self.config;
        let mut entries = vec![
            ("cfg.width_mult".to_string(), Tensor::scalar(c.width_mult)),
            ("cfg.d_img".to_string(), Tensor::scalar(c.d_img as f64)),
            ("cfg.d_pc".to_string(), Tensor::scalar(c.d_pc as f64)),
            ("cfg.d_gps".to_string(), Tensor::scalar(c.d_gps as f64)),
            ("cfg.d_fused".to_string(), Tensor::scalar(c.d_fused as f64)),
            (
                "cfg.image_stage_channels".to_string(),
                Tensor::new(vec![4], c.image_stage_channels.map(|v| v as f64).to_vec())
                    .expect("static shape"),
            ),
            (
                "cfg.pc_channels".to_string(),
                Tensor::new(vec![3], c.pc_channels.map(|v| v as f64).to_vec())
                    .expect("static shape"),
            ),
            (
                "cfg.use_stn".to_string(),
                Tensor::scalar(if c.use_stn { 1.0 } else { 0.0 }),
            ),
            (
                "cfg.gps_window".to_string(),
                Tensor::scalar(c.gps_window as f64),
            ),
            // Bit-cast so 64-bit seeds survive the f64 payload exactly.
            (
                "cfg.seed".to_string(),
                Tensor::scalar(f64::from_le_bytes(c.seed.to_le_bytes())),
            ),
            (
                "cfg.modalities".to_string(),
                Tensor::new(
                    vec![3],
                    c.modalities
                        .as_array()
                        .map(|v| if v { 1.0 } else { 0.0 })
                        .to_vec(),
                )
                .expect("static shape"),
            ),
            ("label.mean".to_string(), Tensor::scalar(self.label_mean)),
            ("label.std".to_string(), Tensor::scalar(self.label_std)),
        ];
        for p in &self.params {
            entries.push((format!("param.{}", p.name), p.value.clone()));
        }
        for s in &self.bn {
            entries.push((
                format!("bn.{}.mean", s.name),
                Tensor::new(vec![s.running_mean.len()], s.running_mean.clone())
                    .expect("lengths agree"),
            ));
            entries.push((
                format!("bn.{}.var", s.name),
                Tensor::new(vec![s.running_var.len()], s.running_var.clone())
                    .expect("lengths agree"),
            ));
        }
        entries
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        checkpoint::save_checkpoint(&self.to_entries(), path)
    }

    pub fn from_entries(entries: &[(String, Tensor)]) -> Result<Model> {
        let map: BTreeMap<&str, &Tensor> =
            entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let scalar = |name: &str| -> Result<f64> {
            map.get(name)
                .ok_or_else(|| Error::Format(format!("checkpoint missing {name}")))?
                .item()
        };
        let vecf = |name: &str| -> Result<Vec<f64>> {
            Ok(map
                .get(name)
                .ok_or_else(|| Error::Format(format!("checkpoint missing {name}")))?
                .data()
                .to_vec())
        };
        let stage = vecf("cfg.image_stage_channels")?;
        let pcc = vecf("cfg.pc_channels")?;
        let mods = vecf("cfg.modalities")?;
        if stage.len() != 4 || pcc.len() != 3 || mods.len() != 3 {
            return Err(Error::Format("checkpoint config vectors malformed".into()));
        }
        let config = ModelConfig {
            width_mult: scalar("cfg.width_mult")?,
            d_img: scalar("cfg.d_img")? as usize,
            d_pc: scalar("cfg.d_pc")? as usize,
            d_gps: scalar("cfg.d_gps")? as usize,
            d_fused: scalar("cfg.d_fused")? as usize,
            image_stage_channels: [
                stage[0] as usize,
                stage[1] as usize,
                stage[2] as usize,
                stage[3] as usize,
            ],
            pc_channels: [pcc[0] as usize, pcc[1] as usize, pcc[2] as usize],
            use_stn: scalar("cfg.use_stn")? != 0.0,
            gps_window: scalar("cfg.gps_window")? as usize,
            seed: u64::from_le_bytes(scalar("cfg.seed")?.to_le_bytes()),
            modalities: ModalityMask::new(mods[0] != 0.0, mods[1] != 0.0, mods[2] != 0.0),
        };
        let mut model = init_model(&config)?;
        model.label_mean = scalar("label.mean")?;
        model.label_std = scalar("label.std")?;
        for p in &mut model.params {
            let key = format!("param.{}", p.name);
            let t = map
                .get(key.as_str())
                .ok_or_else(|| Error::Format(format!("checkpoint missing {key}")))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Format(format!(
                    "checkpoint {key} has shape {:?}, expected {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = (*t).clone();
        }
        for s in &mut model.bn {
            s.running_mean = vecf(&format!("bn.{}.mean", s.name))?;
            s.running_var = vecf(&format!("bn.{}.var", s.name))?;
        }
        Ok(model)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Model> {
        let entries = checkpoint::load_checkpoint(path)?;
        Model::from_entries(&entries)
    }

    /// Full forward pass on the given tape. Train mode uses batch statistics
    /// in the normalization layers and returns their running-stat updates.
    pub fn forward(&self, tape: &mut Tape, batch: &BatchInput, mode: Mode) -> Result<Forward> {
        encoders::forward(self, tape, batch, mode)
    }

    /// Forward pass using externally supplied parameter leaves, aligned with
    /// this model's parameter order. Gradient verification perturbs those
    /// leaves directly.
    pub fn forward_with_param_nodes(
        &self,
        tape: &mut Tape,
        param_nodes: Vec<NodeId>,
        batch: &BatchInput,
        mode: Mode,
    ) -> Result<Forward> {
        if param_nodes.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter nodes, got {}",
                self.params.len(),
                param_nodes.len()
            )));
        }
        let ctx = encoders::ForwardCtx {
            model: self,
            mode,
            param_nodes,
            bn_updates: Vec::new(),
        };
        encoders::forward_in(tape, ctx, batch)
    }

    /// Single-sample eval-mode prediction in dB plus the fusion trace.
    pub fn predict_pl(&self, input: &ModelInput) -> Result<(f64, FusionTrace)> {
        let batch = BatchInput::stack(&[input], input.mask)?;
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, &batch, Mode::Eval)?;
        let standardized = tape.value(fwd.pred).data()[0];
        let pl_db = standardized * self.label_std + self.label_mean;
        let trace = fusion::extract_trace(&tape, &fwd, 0);
        Ok((pl_db, trace))
    }

    /// The learned 3x3 point transform for a single cloud (identity on a
    /// fresh model).
    pub fn stn_transform(&self, points: &Tensor) -> Result<Tensor> {
        if !self.config.modalities.cloud || !self.config.use_stn {
            return Err(Error::Contract(
                "model has no spatial transform sub-network".into(),
            ));
        }
        let s = points.shape();
        if s.len() != 2 || s[1] != 3 || s[0] == 0 {
            return Err(Error::Contract(format!(
                "stn expects a nonempty N x 3 cloud, got {s:?}"
            )));
        }
        let mut tape = Tape::new();
        let pts = tape.constant(Tensor::new(vec![1, s[0], 3], points.data().to_vec())?);
        let t = encoders::stn_matrix(self, &mut tape, pts, 1)?;
        Tensor::new(vec![3, 3], tape.value(t).data().to_vec())
    }
}

#[cfg(test)]
mod tests;
