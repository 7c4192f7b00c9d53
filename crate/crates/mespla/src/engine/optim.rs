//! Adam optimizer with bias-corrected moment estimates.

use crate::engine::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moment buffers plus the step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    pub hyper: AdamParams,
}

impl OptimizerState {
    pub fn new(params: &[Tensor], hyper: AdamParams) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            step: 0,
            hyper,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update over a parameter list; `grads` aligns with `params`.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Vec<f64>],
    state: &mut OptimizerState,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "adam_step: {} params, {} grads, {} state buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads.iter()).enumerate() {
        if p.numel() != g.len() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: vec![g.len()],
            });
        }
        if state.m[i].len() != p.numel() {
            return Err(Error::Shape {
                op: "adam_step_state",
                lhs: p.shape().to_vec(),
                rhs: vec![state.m[i].len()],
            });
        }
    }
    state.step += 1;
    let h = state.hyper;
    let bc1 = 1.0 - h.beta1.powi(state.step as i32);
    let bc2 = 1.0 - h.beta2.powi(state.step as i32);
    for (i, (p, g)) in params.iter_mut().zip(grads.iter()).enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for ((pv, &gv), (mv, vv)) in p
            .data_mut()
            .iter_mut()
            .zip(g.iter())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mv = h.beta1 * *mv + (1.0 - h.beta1) * gv;
            *vv = h.beta2 * *vv + (1.0 - h.beta2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_fresh_params_unchanged() {
        let mut params = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let before = params[0].clone();
        let mut state = OptimizerState::new(&params, AdamParams::default());
        adam_step(&mut params, &[vec![0.0; 3]], &mut state).unwrap();
        assert_eq!(params[0], before);
    }

    #[test]
    fn single_unit_gradient_step_matches_hand_value() {
        let mut params = vec![Tensor::new(vec![1], vec![0.0]).unwrap()];
        let mut state = OptimizerState::new(&params, AdamParams::default());
        adam_step(&mut params, &[vec![1.0]], &mut state).unwrap();
        // Delta = -lr * 1 / (1 + eps), computed independently.
        let expected = -0.000999999990000000099;
        assert!((params[0].data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn two_steps_match_scalar_reference() {
        let h = AdamParams::default();
        let g_seq = [0.7, -1.3];
        // Scalar-loop reference implementation.
        let (mut m, mut v, mut p_ref) = (0.0f64, 0.0f64, 0.25f64);
        for (t, &g) in g_seq.iter().enumerate() {
            m = h.beta1 * m + (1.0 - h.beta1) * g;
            v = h.beta2 * v + (1.0 - h.beta2) * g * g;
            let mh = m / (1.0 - h.beta1.powi(t as i32 + 1));
            let vh = v / (1.0 - h.beta2.powi(t as i32 + 1));
            p_ref -= h.lr * mh / (vh.sqrt() + h.eps);
        }
        let mut params = vec![Tensor::new(vec![1], vec![0.25]).unwrap()];
        let mut state = OptimizerState::new(&params, h);
        for &g in &g_seq {
            adam_step(&mut params, &[vec![g]], &mut state).unwrap();
        }
        assert!((params[0].data()[0] - p_ref).abs() < 1e-12);
        assert_eq!(state.step_count(), 2);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut params = vec![Tensor::zeros(vec![3])];
        let mut state = OptimizerState::new(&params, AdamParams::default());
        assert!(matches!(
            adam_step(&mut params, &[vec![0.0; 4]], &mut state),
            Err(Error::Shape { .. })
        ));
    }
}
