use std::collections::HashMap;

use super::params::{ParamId, ParamStore};

/// Adam with decoupled weight decay.
///
/// Parameters whose gradient is `None` (not reached by any backward pass)
/// are skipped entirely, including the decay.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    state: HashMap<ParamId, Moments>,
}

#[derive(Clone, Debug)]
struct Moments {
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(weight_decay: f64) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            state: HashMap::new(),
        }
    }

    /// One update of every parameter with a gradient, then clears gradients.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let Some(grad) = store.grad(id).map(|g| g.data().to_vec()) else {
                continue;
            };
            let st = self.state.entry(id).or_insert_with(|| Moments {
                step: 0,
                m: vec![0.0; grad.len()],
                v: vec![0.0; grad.len()],
            });
            adam_update(
                store.value_mut(id).data_mut(),
                &grad,
                st,
                lr,
                self.beta1,
                self.beta2,
                self.eps,
                self.weight_decay,
            );
        }
        store.zero_grad();
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update(
    theta: &mut [f64],
    grad: &[f64],
    st: &mut Moments,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
) {
    st.step += 1;
    let bc1 = 1.0 - beta1.powi(st.step as i32);
    let bc2 = 1.0 - beta2.powi(st.step as i32);
    let decay = 1.0 - lr * weight_decay;
    for i in 0..theta.len() {
        theta[i] *= decay;
        st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * grad[i];
        st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * grad[i] * grad[i];
        let m_hat = st.m[i] / bc1;
        let v_hat = st.v[i] / bc2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Cosine decay from `start` to `end` over `total` steps.
pub fn cosine_lr(start: f64, end: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return start;
    }
    let t = (step.min(total - 1)) as f64 / (total - 1) as f64;
    end + 0.5 * (start - end) * (1.0 + (std::f64::consts::PI * t).cos())
}
