//! Minimal dense-tensor compute with reverse-mode automatic differentiation:
//! the operator set the fusion network needs, an Adam optimizer, checkpoint
//! serialization, and finite-difference gradient verification.

pub mod checkpoint;
pub mod gradcheck;
pub mod gru;
pub mod kernels;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use gru::{gru_cell, GruParams};
pub use optim::{adam_step, AdamParams, OptimizerState};
pub use tape::{BnUpdate, NodeId, Tape};
pub use tensor::Tensor;

use crate::error::Result;
use rand::Rng;

fn random_tensor(shape: Vec<usize>, seed: u64, scale: f64) -> Tensor {
    let mut rng = crate::seeds::rng(seed, crate::seeds::stream::GRADCHECK, 1000);
    let numel = shape.iter().product();
    Tensor::new(
        shape,
        (0..numel)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
            .collect(),
    )
    .expect("shape matches data")
}

/// Finite-difference check of every registered operator at randomized small
/// shapes. Behind both the `gradcheck` subcommand and the acceptance gate.
pub fn gradcheck_all_ops(eps: f64, tol: f64) -> Result<Vec<(String, GradCheckReport)>> {
    let mut out: Vec<(String, GradCheckReport)> = Vec::new();
    let mut run = |name: &str,
                   inputs: Vec<(&str, Tensor)>,
                   f: &dyn Fn(&mut Tape, &[NodeId]) -> Result<NodeId>|
     -> Result<()> {
        let report = grad_check(&f, &inputs, eps, tol, 64, 17)?;
        out.push((name.to_string(), report));
        Ok(())
    };

    run(
        "add",
        vec![
            ("a", random_tensor(vec![3, 4], 1, 1.0)),
            ("b", random_tensor(vec![3, 4], 2, 1.0)),
        ],
        &|t, ids| {
            let y = t.add(ids[0], ids[1])?;
            t.sum_all(y)
        },
    )?;
    run(
        "sub_mul",
        vec![
            ("a", random_tensor(vec![3, 4], 3, 1.0)),
            ("b", random_tensor(vec![3, 4], 4, 1.0)),
        ],
        &|t, ids| {
            let d = t.sub(ids[0], ids[1])?;
            let y = t.mul(d, ids[1])?;
            t.sum_all(y)
        },
    )?;
    run(
        "matmul",
        vec![
            ("a", random_tensor(vec![4, 5], 5, 1.0)),
            ("b", random_tensor(vec![5, 6], 6, 1.0)),
        ],
        &|t, ids| {
            let y = t.matmul(ids[0], ids[1])?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        },
    )?;
    run(
        "linear",
        vec![
            ("x", random_tensor(vec![3, 4], 7, 1.0)),
            ("w", random_tensor(vec![4, 5], 8, 1.0)),
            ("b", random_tensor(vec![5], 9, 1.0)),
        ],
        &|t, ids| {
            let y = t.linear(ids[0], ids[1], Some(ids[2]))?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        },
    )?;
    run(
        "conv2d_s1p1",
        vec![
            ("x", random_tensor(vec![2, 3, 6, 6], 10, 1.0)),
            ("w", random_tensor(vec![4, 3, 3, 3], 11, 0.5)),
            ("b", random_tensor(vec![4], 12, 0.5)),
        ],
        &|t, ids| {
            let y = t.conv2d(ids[0], ids[1], Some(ids[2]), 1, 1)?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        },
    )?;
    run(
        "conv2d_s2p1",
        vec![
            ("x", random_tensor(vec![2, 2, 8, 8], 13, 1.0)),
            ("w", random_tensor(vec![3, 2, 3, 3], 14, 0.5)),
        ],
        &|t, ids| {
            let y = t.conv2d(ids[0], ids[1], None, 2, 1)?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        },
    )?;
    run(
        "pointwise_conv1d",
        vec![
            ("x", random_tensor(vec![2, 3, 7], 15, 1.0)),
            ("w", random_tensor(vec![5, 3], 16, 0.5)),
            ("b", random_tensor(vec![5], 17, 0.5)),
        ],
        &|t, ids| {
            let y = t.pointwise_conv1d(ids[0], ids[1], Some(ids[2]))?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        },
    )?;
    run(
        "relu",
        vec![("x", random_tensor(vec![4, 5], 18, 1.0))],
        &|t, ids| {
            let y = t.relu(ids[0])?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        },
    )?;
    run(
        "sigmoid_tanh",
        vec![("x", random_tensor(vec![4, 5], 19, 1.5))],
        &|t, ids| {
            let s = t.sigmoid(ids[0])?;
            let y = t.tanh(s)?;
            t.sum_all(y)
        },
    )?;
    run(
        "batchnorm_train",
        vec![
            ("x", random_tensor(vec![4, 3, 5], 20, 1.0)),
            ("gamma", random_tensor(vec![3], 21, 0.5)),
            ("beta", random_tensor(vec![3], 22, 0.5)),
        ],
        &|t, ids| {
            let (y, _) = t.batchnorm(
                ids[0],
                ids[1],
                ids[2],
                1e-5,
                true,
                &[0.0; 3],
                &[1.0; 3],
                0.1,
            )?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        },
    )?;
    run(
        "batchnorm_eval",
        vec![
            ("x", random_tensor(vec![2, 3, 4], 23, 1.0)),
            ("gamma", random_tensor(vec![3], 24, 0.5)),
            ("beta", random_tensor(vec![3], 25, 0.5)),
        ],
        &|t, ids| {
            let (y, _) = t.batchnorm(
                ids[0],
                ids[1],
                ids[2],
                1e-5,
                false,
                &[0.1, -0.2, 0.3],
                &[1.1, 0.9, 1.3],
                0.1,
            )?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        },
    )?;
    run(
        "maxpool2d",
        vec![("x", random_tensor(vec![2, 2, 6, 6], 26, 1.0))],
        &|t, ids| {
            let y = t.maxpool2d(ids[0], 2, 2)?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        },
    )?;
    run(
        "max_over_points",
        vec![("x", random_tensor(vec![2, 4, 9], 27, 1.0))],
        &|t, ids| {
            let y = t.max_over_points(ids[0])?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        },
    )?;
    run(
        "mean_over_axis",
        vec![("x", random_tensor(vec![3, 4, 5], 28, 1.0))],
        &|t, ids| {
            let y = t.mean_over_axis(ids[0], 1)?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        },
    )?;
    run(
        "softmax",
        vec![("x", random_tensor(vec![3, 5], 29, 2.0))],
        &|t, ids| {
            let y = t.softmax(ids[0], 1)?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        },
    )?;
    run(
        "masked_softmax_rows",
        vec![("x", random_tensor(vec![4, 3], 30, 2.0))],
        &|t, ids| {
            let y = t.masked_softmax_rows(ids[0], &[true, false, true])?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        },
    )?;
    run(
        "concat",
        vec![
            ("a", random_tensor(vec![3, 2], 31, 1.0)),
            ("b", random_tensor(vec![3, 4], 32, 1.0)),
        ],
        &|t, ids| {
            let y = t.concat(&[ids[0], ids[1]], 1)?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        },
    )?;
    run(
        "weighted_sum",
        vec![
            ("f0", random_tensor(vec![3, 4], 33, 1.0)),
            ("f1", random_tensor(vec![3, 4], 34, 1.0)),
            ("f2", random_tensor(vec![3, 4], 35, 1.0)),
            ("w", random_tensor(vec![3, 3], 36, 1.0)),
        ],
        &|t, ids| {
            let y = t.weighted_sum(&[ids[0], ids[1], ids[2]], ids[3])?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        },
    )?;
    run(
        "point_transform",
        vec![
            ("pts", random_tensor(vec![2, 5, 3], 37, 1.0)),
            ("t", random_tensor(vec![2, 3, 3], 38, 1.0)),
        ],
        &|t, ids| {
            let y = t.point_transform(ids[0], ids[1])?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        },
    )?;
    run(
        "reshape",
        vec![("x", random_tensor(vec![3, 4], 39, 1.0))],
        &|t, ids| {
            let y = t.reshape(ids[0], vec![2, 6])?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        },
    )?;
    run(
        "transpose12",
        vec![
            ("x", random_tensor(vec![2, 3, 4], 53, 1.0)),
            ("w", random_tensor(vec![2, 4, 3], 54, 1.0)),
        ],
        &|t, ids| {
            let y = t.transpose12(ids[0])?;
            let prod = t.mul(y, ids[1])?;
            t.sum_all(prod)
        },
    )?;
    run(
        "mse_loss",
        vec![
            ("pred", random_tensor(vec![5], 40, 1.0)),
            ("target", random_tensor(vec![5], 41, 1.0)),
        ],
        &|t, ids| t.mse_loss(ids[0], ids[1]),
    )?;
    run(
        "gru_cell",
        vec![
            ("x", random_tensor(vec![2, 3], 42, 1.0)),
            ("h", random_tensor(vec![2, 4], 43, 1.0)),
            ("wz", random_tensor(vec![3, 4], 44, 0.5)),
            ("uz", random_tensor(vec![4, 4], 45, 0.5)),
            ("bz", random_tensor(vec![4], 46, 0.5)),
            ("wr", random_tensor(vec![3, 4], 47, 0.5)),
            ("ur", random_tensor(vec![4, 4], 48, 0.5)),
            ("br", random_tensor(vec![4], 49, 0.5)),
            ("wh", random_tensor(vec![3, 4], 50, 0.5)),
            ("uh", random_tensor(vec![4, 4], 51, 0.5)),
            ("bh", random_tensor(vec![4], 52, 0.5)),
        ],
        &|t, ids| {
            let p = GruParams {
                wz: ids[2],
                uz: ids[3],
                bz: ids[4],
                wr: ids[5],
                ur: ids[6],
                br: ids[7],
                wh: ids[8],
                uh: ids[9],
                bh: ids[10],
            };
            let h = gru_cell(t, ids[0], ids[1], &p)?;
            let sq = t.mul(h, h)?;
            t.sum_all(sq)
        },
    )?;
    Ok(out)
}
