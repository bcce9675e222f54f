use crate::params::{GradBuffer, ParamStore};
use crate::AutodiffError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut [f32],
    grads: &[f32],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), AutodiffError> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(AutodiffError::ShapeMismatch {
            op: "adam_step",
            left: vec![params.len()],
            right: vec![grads.len(), state.m.len()],
        });
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam over every parameter of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        Self {
            config,
            states: store.iter().map(|(_, _, t)| AdamState::new(t.len())).collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &GradBuffer) -> Result<(), AutodiffError> {
        for id in store.ids().collect::<Vec<_>>() {
            let state = &mut self.states[id.index()];
            adam_step(store.get_mut(id).data_mut(), grads.get(id), state, &self.config)?;
        }
        Ok(())
    }

    pub fn states(&self) -> &[AdamState] {
        &self.states
    }

    pub fn steps(&self) -> u64 {
        self.states.first().map_or(0, |s| s.t)
    }

    /// Restores saved moments; lengths must match the store.
    pub fn set_states(&mut self, states: Vec<AdamState>) -> Result<(), AutodiffError> {
        if states.len() != self.states.len()
            || states
                .iter()
                .zip(&self.states)
                .any(|(a, b)| a.m.len() != b.m.len() || a.v.len() != b.v.len())
        {
            return Err(AutodiffError::ShapeMismatch {
                op: "adam_state",
                left: self.states.iter().map(|s| s.m.len()).collect(),
                right: states.iter().map(|s| s.m.len()).collect(),
            });
        }
        self.states = states;
        Ok(())
    }
}
