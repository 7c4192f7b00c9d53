//! Forward-pass construction for the three modality encoders and the head.

use super::{fusion, BatchInput, Forward, Mode, Model, BN_EPS, BN_MOMENTUM};
use crate::engine::gru::{gru_cell, GruParams};
use crate::engine::tape::{BnUpdate, NodeId, Tape};
use crate::engine::Tensor;
use crate::error::{Error, Result};

/// Per-pass context: parameter leaves (aligned with the model's parameter
/// order) and deferred batchnorm running-stat updates.
pub(crate) struct ForwardCtx<'m> {
    pub model: &'m Model,
    pub mode: Mode,
    pub param_nodes: Vec<NodeId>,
    pub bn_updates: Vec<(usize, BnUpdate)>,
}

impl<'m> ForwardCtx<'m> {
    pub fn new(model: &'m Model, tape: &mut Tape, mode: Mode, tracked: bool) -> Self {
        let param_nodes = model
            .params
            .iter()
            .map(|p| {
                if tracked {
                    tape.leaf(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect();
        Self {
            model,
            mode,
            param_nodes,
            bn_updates: Vec::new(),
        }
    }

    pub(crate) fn p(&self, name: &str) -> Result<NodeId> {
        Ok(self.param_nodes[self.model.param_id(name)?])
    }

    fn bn(&mut self, tape: &mut Tape, x: NodeId, name: &str) -> Result<NodeId> {
        let id = self.model.bn_id(name)?;
        let (rm, rv) = self.model.bn_running(id);
        let gamma = self.p(&format!("{name}.gamma"))?;
        let beta = self.p(&format!("{name}.beta"))?;
        let (y, update) = tape.batchnorm(
            x,
            gamma,
            beta,
            BN_EPS,
            self.mode == Mode::Train,
            rm,
            rv,
            BN_MOMENTUM,
        )?;
        if let Some(u) = update {
            self.bn_updates.push((id, u));
        }
        Ok(y)
    }
}

/// Residual CNN over [B, 3, H, W] (H, W >= 32): stem, four stages of two
/// basic blocks with stride-2 projection entries, global average pooling,
/// and a linear map to the image feature width.
pub(crate) fn image_feature(
    ctx: &mut ForwardCtx,
    tape: &mut Tape,
    x: NodeId,
) -> Result<NodeId> {
    let s = tape.value(x).shape().to_vec();
    if s.len() != 4 || s[2] < 32 || s[3] < 32 {
        return Err(Error::Shape {
            op: "image_encoder",
            lhs: s,
            rhs: vec![0, 3, 32, 32],
        });
    }
    let dims = ctx.model.config.scaled();
    let stem_w = ctx.p("img.stem.w")?;
    let mut h = tape.conv2d(x, stem_w, None, 1, 1)?;
    h = ctx.bn(tape, h, "img.stem.bn")?;
    h = tape.relu(h)?;

    let mut in_ch = dims.stages[0];
    for (si, &ch) in dims.stages.iter().enumerate() {
        for blk in 0..2 {
            let stride = if si > 0 && blk == 0 { 2 } else { 1 };
            let prefix = format!("img.s{si}.b{blk}");
            let w1 = ctx.p(&format!("{prefix}.conv1.w"))?;
            let mut y = tape.conv2d(h, w1, None, stride, 1)?;
            y = ctx.bn(tape, y, &format!("{prefix}.bn1"))?;
            y = tape.relu(y)?;
            let w2 = ctx.p(&format!("{prefix}.conv2.w"))?;
            y = tape.conv2d(y, w2, None, 1, 1)?;
            y = ctx.bn(tape, y, &format!("{prefix}.bn2"))?;
            let shortcut = if stride != 1 || in_ch != ch {
                let pw = ctx.p(&format!("{prefix}.proj.w"))?;
                let p = tape.conv2d(h, pw, None, stride, 0)?;
                ctx.bn(tape, p, &format!("{prefix}.proj_bn"))?
            } else {
                h
            };
            let summed = tape.add(y, shortcut)?;
            h = tape.relu(summed)?;
            in_ch = ch;
        }
    }
    // Global average pool over both spatial axes.
    let pooled_w = tape.mean_over_axis(h, 3)?;
    let pooled = tape.mean_over_axis(pooled_w, 2)?;
    tape.linear(pooled, ctx.p("img.fc.w")?, Some(ctx.p("img.fc.b")?))
}

/// The 3x3 transform predicted from pooled point features; identity at init
/// because the final layer starts at zero.
pub(crate) fn stn_with(
    ctx: &mut ForwardCtx,
    tape: &mut Tape,
    pts: NodeId,
    batch: usize,
) -> Result<NodeId> {
    let xt = tape.transpose12(pts)?; // [B, 3, N]
    let c1 = tape.pointwise_conv1d(xt, ctx.p("stn.conv1.w")?, Some(ctx.p("stn.conv1.b")?))?;
    let a1 = tape.relu(c1)?;
    let c2 = tape.pointwise_conv1d(a1, ctx.p("stn.conv2.w")?, Some(ctx.p("stn.conv2.b")?))?;
    let a2 = tape.relu(c2)?;
    let pooled = tape.max_over_points(a2)?;
    let nine = tape.linear(pooled, ctx.p("stn.fc.w")?, Some(ctx.p("stn.fc.b")?))?;
    let identity = tape.constant(Tensor::new(
        vec![batch, 9],
        (0..batch)
            .flat_map(|_| [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
            .collect(),
    )?);
    let shifted = tape.add(nine, identity)?;
    tape.reshape(shifted, vec![batch, 3, 3])
}

/// Standalone transform extraction used by [`Model::stn_transform`].
pub(crate) fn stn_matrix(
    model: &Model,
    tape: &mut Tape,
    pts: NodeId,
    batch: usize,
) -> Result<NodeId> {
    let mut ctx = ForwardCtx::new(model, tape, Mode::Eval, false);
    stn_with(&mut ctx, tape, pts, batch)
}

/// Point encoder over [B, N, 3]: optional learned transform, three shared
/// per-point convolutions with batchnorm and relu, then max pooling over
/// the point axis.
pub(crate) fn point_feature(
    ctx: &mut ForwardCtx,
    tape: &mut Tape,
    pts: NodeId,
) -> Result<NodeId> {
    let s = tape.value(pts).shape().to_vec();
    if s.len() != 3 || s[2] != 3 {
        return Err(Error::Shape {
            op: "point_encoder",
            lhs: s,
            rhs: vec![0, 0, 3],
        });
    }
    let batch = s[0];
    let aligned = if ctx.model.config.use_stn {
        let t = stn_with(ctx, tape, pts, batch)?;
        tape.point_transform(pts, t)?
    } else {
        pts
    };
    let xt = tape.transpose12(aligned)?; // [B, 3, N]
    let mut h = tape.pointwise_conv1d(xt, ctx.p("pc.conv1.w")?, None)?;
    h = ctx.bn(tape, h, "pc.bn1")?;
    h = tape.relu(h)?;
    h = tape.pointwise_conv1d(h, ctx.p("pc.conv2.w")?, None)?;
    h = ctx.bn(tape, h, "pc.bn2")?;
    h = tape.relu(h)?;
    h = tape.pointwise_conv1d(h, ctx.p("pc.conv3.w")?, None)?;
    h = ctx.bn(tape, h, "pc.bn3")?;
    h = tape.relu(h)?;
    tape.max_over_points(h)
}

/// GRU over the track, zero initial state; the last hidden state is the
/// GPS feature.
pub(crate) fn gps_feature(
    ctx: &mut ForwardCtx,
    tape: &mut Tape,
    steps: &[Tensor],
) -> Result<NodeId> {
    if steps.is_empty() {
        return Err(Error::Contract("gps track must have at least one step".into()));
    }
    let batch = steps[0].shape()[0];
    let dh = ctx.model.config.scaled().d_gps;
    let params = GruParams {
        wz: ctx.p("gps.wz")?,
        uz: ctx.p("gps.uz")?,
        bz: ctx.p("gps.bz")?,
        wr: ctx.p("gps.wr")?,
        ur: ctx.p("gps.ur")?,
        br: ctx.p("gps.br")?,
        wh: ctx.p("gps.wh")?,
        uh: ctx.p("gps.uh")?,
        bh: ctx.p("gps.bh")?,
    };
    let mut h = tape.constant(Tensor::zeros(vec![batch, dh]));
    for step in steps {
        let x = tape.constant(step.clone());
        h = gru_cell(tape, x, h, &params)?;
    }
    Ok(h)
}

pub(crate) fn forward(
    model: &Model,
    tape: &mut Tape,
    batch: &BatchInput,
    mode: Mode,
) -> Result<Forward> {
    let ctx = ForwardCtx::new(model, tape, mode, true);
    forward_in(tape, ctx, batch)
}

/// Forward pass against an existing context (parameter leaves already on
/// the tape), shared by normal passes and gradient verification.
pub(crate) fn forward_in(
    tape: &mut Tape,
    mut ctx: ForwardCtx,
    batch: &BatchInput,
) -> Result<Forward> {
    let model = ctx.model;
    let mask = batch.mask;
    if !mask.any() {
        return Err(Error::Contract(
            "forward requires at least one modality".into(),
        ));
    }
    let mods = model.config.modalities;
    if (mask.image && !mods.image) || (mask.cloud && !mods.cloud) || (mask.gps && !mods.gps) {
        return Err(Error::Contract(format!(
            "input mask {:?} requests a modality the model was built without {:?}",
            mask.as_array(),
            mods.as_array()
        )));
    }

    let img_feat = if mask.image {
        let x = tape.constant(
            batch
                .image
                .clone()
                .ok_or_else(|| Error::Contract("mask.image set but no image batch".into()))?,
        );
        Some(image_feature(&mut ctx, tape, x)?)
    } else {
        None
    };
    let pc_feat = if mask.cloud {
        let x = tape.constant(
            batch
                .points
                .clone()
                .ok_or_else(|| Error::Contract("mask.cloud set but no point batch".into()))?,
        );
        Some(point_feature(&mut ctx, tape, x)?)
    } else {
        None
    };
    let gps_feat = if mask.gps {
        let steps = batch
            .gps
            .as_ref()
            .ok_or_else(|| Error::Contract("mask.gps set but no gps batch".into()))?;
        Some(gps_feature(&mut ctx, tape, steps)?)
    } else {
        None
    };

    let (fused, weights, projected) = fusion::fuse(
        &mut ctx,
        tape,
        [img_feat, pc_feat, gps_feat],
        batch.batch,
    )?;

    let h1 = tape.linear(fused, ctx.p("head.fc1.w")?, Some(ctx.p("head.fc1.b")?))?;
    let h1a = tape.relu(h1)?;
    let pred = tape.linear(h1a, ctx.p("head.fc2.w")?, Some(ctx.p("head.fc2.b")?))?;

    Ok(Forward {
        pred,
        weights,
        projected,
        param_nodes: ctx.param_nodes,
        bn_updates: ctx.bn_updates,
    })
}
