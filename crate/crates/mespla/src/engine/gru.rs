//! Gated recurrent unit cell composed from tape primitives, so its backward
//! pass falls out of the existing operator gradients.

use crate::engine::tape::{NodeId, Tape};
use crate::engine::tensor::Tensor;
use crate::error::{Error, Result};

/// Parameter nodes of one GRU cell. Weight layout: x \[B, D_in\] multiplies
/// W \[D_in, D_h\]; the previous hidden state multiplies U \[D_h, D_h\].
#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub wz: NodeId,
    pub uz: NodeId,
    pub bz: NodeId,
    pub wr: NodeId,
    pub ur: NodeId,
    pub br: NodeId,
    pub wh: NodeId,
    pub uh: NodeId,
    pub bh: NodeId,
}

/// One step: z and r gates, candidate state, convex combination.
///
/// z = sigmoid(x Wz + h Uz + bz); r = sigmoid(x Wr + h Ur + br);
/// h~ = tanh(x Wh + (r . h) Uh + bh); h' = (1 - z) . h + z . h~
pub fn gru_cell(tape: &mut Tape, x: NodeId, h: NodeId, p: &GruParams) -> Result<NodeId> {
    let sx = tape.value(x).shape().to_vec();
    let sh = tape.value(h).shape().to_vec();
    if sx.len() != 2 || sh.len() != 2 || sx[0] != sh[0] {
        return Err(Error::Shape {
            op: "gru_cell",
            lhs: sx,
            rhs: sh,
        });
    }
    let batch = sh[0];
    let d_h = sh[1];

    let zx = tape.linear(x, p.wz, Some(p.bz))?;
    let zh = tape.matmul(h, p.uz)?;
    let z_pre = tape.add(zx, zh)?;
    let z = tape.sigmoid(z_pre)?;

    let rx = tape.linear(x, p.wr, Some(p.br))?;
    let rh = tape.matmul(h, p.ur)?;
    let r_pre = tape.add(rx, rh)?;
    let r = tape.sigmoid(r_pre)?;

    let rh_gated = tape.mul(r, h)?;
    let hx = tape.linear(x, p.wh, Some(p.bh))?;
    let hh = tape.matmul(rh_gated, p.uh)?;
    let h_pre = tape.add(hx, hh)?;
    let h_cand = tape.tanh(h_pre)?;

    let ones = tape.constant(Tensor::full(vec![batch, d_h], 1.0));
    let one_minus_z = tape.sub(ones, z)?;
    let keep = tape.mul(one_minus_z, h)?;
    let update = tape.mul(z, h_cand)?;
    tape.add(keep, update)
}
