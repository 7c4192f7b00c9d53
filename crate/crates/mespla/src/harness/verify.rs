//! Gradient gate: finite-difference verification of every engine operator
//! plus the full network forward-and-loss at a small width.

use rand::Rng;

use crate::engine::{grad_check, gradcheck_all_ops, GradCheckReport, Tensor};
use crate::error::Result;
use crate::mfef::{init_model, BatchInput, Mode, ModelConfig};
use crate::preprocess::ModalityMask;
use crate::seeds::{self, stream};

/// Operator-level checks; delegates to the engine suite.
pub fn gradcheck_ops(eps: f64, tol: f64) -> Result<Vec<(String, GradCheckReport)>> {
    gradcheck_all_ops(eps, tol)
}

/// Full forward-plus-loss check at width 0.125: every parameter of a
/// three-modality model against central finite differences (train mode,
/// batch of two so the batch-statistic path is exercised).
pub fn gradcheck_full_model(eps: f64, tol: f64) -> Result<GradCheckReport> {
    let cfg = ModelConfig {
        width_mult: 0.125,
        seed: 11,
        gps_window: 3,
        ..Default::default()
    };
    let model = init_model(&cfg)?;
    let mut rng = seeds::rng(77, stream::GRADCHECK, 900);
    let mut mk = |shape: Vec<usize>, scale: f64| {
        let numel: usize = shape.iter().product();
        Tensor::new(
            shape,
            (0..numel)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
                .collect(),
        )
        .expect("shape matches")
    };
    let batch = BatchInput {
        image: Some(mk(vec![2, 3, 32, 32], 0.5)),
        points: Some(mk(vec![2, 24, 3], 10.0)),
        gps: Some(vec![mk(vec![2, 3], 0.5), mk(vec![2, 3], 0.5), mk(vec![2, 3], 0.5)]),
        batch: 2,
        mask: ModalityMask::ALL,
    };
    let targets = mk(vec![2, 1], 1.0);

    let names: Vec<String> = model
        .param_names()
        .iter()
        .map(|s| s.to_string())
        .collect();
    let tensors = model.param_tensors();
    let inputs: Vec<(&str, Tensor)> = names
        .iter()
        .map(|n| n.as_str())
        .zip(tensors.into_iter())
        .collect();

    let f = |tape: &mut crate::engine::Tape,
             ids: &[crate::engine::NodeId]|
     -> Result<crate::engine::NodeId> {
        let fwd = model.forward_with_param_nodes(tape, ids.to_vec(), &batch, Mode::Train)?;
        let t = tape.constant(targets.clone());
        tape.mse_loss(fwd.pred, t)
    };
    grad_check(&f, &inputs, eps, tol, 64, 23)
}

