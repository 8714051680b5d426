use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// First/second moment estimates for one parameter group.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    /// Zero moments for `params` with beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. Entries whose gradient is `None` are
/// left untouched, moments included.
pub fn adam_step(params: &mut [Tensor], grads: &[Option<Tensor>], state: &mut AdamState, lr: f32) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dim(format!(
            "adam_step: {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if let Some(g) = g {
            if g.shape() != p.shape() || state.m[i].len() != p.numel() {
                return Err(Error::dim(format!(
                    "adam_step: gradient {:?} does not match parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - f64::from(b1).powi(t);
    let c2 = 1.0 - f64::from(b2).powi(t);
    let step_size = (f64::from(lr) / c1) as f32;
    let c2_sqrt = c2.sqrt() as f32;
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let Some(g) = g else { continue };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((w, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mj = b1 * *mj + (1.0 - b1) * gj;
            *vj = b2 * *vj + (1.0 - b2) * gj * gj;
            *w -= step_size * *mj / (vj.sqrt() / c2_sqrt + state.eps);
        }
    }
    Ok(())
}
