//! Attention fusion: per-modality projections to a common width, a linear
//! scorer over their concatenation producing three logits, masked softmax,
//! and the weighted sum of the projections.

use super::encoders::ForwardCtx;
use super::{Forward, Mode, Model};
use crate::engine::tape::{NodeId, Tape};
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::preprocess::ModalityMask;

/// Attention weights and projected features recorded for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionTrace {
    /// Weights in modality order (image, cloud, gps); masked entries are 0.
    pub attention_weights: [f64; 3],
    /// Projected features per modality; masked entries are empty.
    pub projected: [Vec<f64>; 3],
}

pub(crate) fn fuse(
    ctx: &mut ForwardCtx,
    tape: &mut Tape,
    feats: [Option<NodeId>; 3],
    batch: usize,
) -> Result<(NodeId, NodeId, [Option<NodeId>; 3])> {
    let d = ctx.model.config.d_fused;
    let names = ["fuse.proj_img", "fuse.proj_pc", "fuse.proj_gps"];
    let mut projected: [Option<NodeId>; 3] = [None, None, None];
    let mut slots = [NodeId(0); 3];
    let mut mask = [false; 3];
    for (i, feat) in feats.iter().enumerate() {
        match feat {
            Some(f) => {
                let w = ctx.p(&format!("{}.w", names[i]))?;
                let b = ctx.p(&format!("{}.b", names[i]))?;
                let proj = tape.linear(*f, w, Some(b))?;
                projected[i] = Some(proj);
                slots[i] = proj;
                mask[i] = true;
            }
            None => {
                slots[i] = tape.constant(Tensor::zeros(vec![batch, d]));
            }
        }
    }
    if !mask.iter().any(|m| *m) {
        return Err(Error::Contract("fusion requires at least one feature".into()));
    }
    let concat = tape.concat(&slots, 1)?;
    let logits = tape.linear(
        concat,
        ctx.p("fuse.score.w")?,
        Some(ctx.p("fuse.score.b")?),
    )?;
    let weights = tape.masked_softmax_rows(logits, &mask)?;
    let fused = tape.weighted_sum(&slots, weights)?;
    Ok((fused, weights, projected))
}

/// Read the fusion trace of one batch row out of a finished forward pass.
pub(crate) fn extract_trace(tape: &Tape, fwd: &Forward, row: usize) -> FusionTrace {
    let w = tape.value(fwd.weights);
    let k = w.shape()[1];
    let mut attention_weights = [0.0; 3];
    for (i, slot) in attention_weights.iter_mut().enumerate().take(k) {
        *slot = w.data()[row * k + i];
    }
    let projected = fwd.projected.map(|p| match p {
        Some(id) => {
            let t = tape.value(id);
            let d = t.shape()[1];
            t.data()[row * d..(row + 1) * d].to_vec()
        }
        None => Vec::new(),
    });
    FusionTrace {
        attention_weights,
        projected,
    }
}

impl Model {
    /// Fuse externally computed per-modality feature vectors (one sample).
    /// Masked slots may be absent; their weights come out exactly zero.
    pub fn attention_fuse(
        &self,
        feats: [Option<&Tensor>; 3],
        mask: ModalityMask,
    ) -> Result<(Tensor, FusionTrace)> {
        if !mask.any() {
            return Err(Error::Contract(
                "attention_fuse requires at least one unmasked modality".into(),
            ));
        }
        let dims = self.config.scaled();
        let expected = [dims.d_img, dims.d_pc, dims.d_gps];
        let mask_arr = mask.as_array();
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx::new(self, &mut tape, Mode::Eval, false);
        let mut ids: [Option<NodeId>; 3] = [None, None, None];
        for i in 0..3 {
            if !mask_arr[i] {
                continue;
            }
            let f = feats[i].ok_or_else(|| {
                Error::Contract(format!("modality {i} unmasked but feature absent"))
            })?;
            if f.shape() != [expected[i]] {
                return Err(Error::Shape {
                    op: "attention_fuse",
                    lhs: vec![expected[i]],
                    rhs: f.shape().to_vec(),
                });
            }
            ids[i] = Some(tape.constant(Tensor::new(vec![1, expected[i]], f.data().to_vec())?));
        }
        let (fused, weights, projected) = fuse(&mut ctx, &mut tape, ids, 1)?;
        let fused_t = Tensor::new(
            vec![self.config.d_fused],
            tape.value(fused).data().to_vec(),
        )?;
        let w = tape.value(weights);
        let mut attention_weights = [0.0; 3];
        attention_weights.copy_from_slice(&w.data()[..3]);
        let projected = projected.map(|p| match p {
            Some(id) => tape.value(id).data().to_vec(),
            None => Vec::new(),
        });
        Ok((
            fused_t,
            FusionTrace {
                attention_weights,
                projected,
            },
        ))
    }
}
