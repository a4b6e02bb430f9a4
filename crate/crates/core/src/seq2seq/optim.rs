use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ModelParameters;
use super::tensor::Real;

/// Adam with linear warmup followed by inverse-square-root decay.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSettings {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// 0 means a constant learning rate.
    pub warmup_steps: u64,
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-9,
            warmup_steps: 100,
            clip_norm: Some(1.0),
        }
    }
}

/// Learning rate for 1-based `step`: `base * min(step/w, sqrt(w/step))`.
pub fn learning_rate(settings: &OptimizerSettings, step: u64) -> f64 {
    let w = settings.warmup_steps as f64;
    let s = step.max(1) as f64;
    if settings.warmup_steps == 0 {
        settings.learning_rate
    } else {
        settings.learning_rate * (s / w).min((w / s).sqrt())
    }
}

/// Everything besides the weights needed to continue a run exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    /// Completed optimizer updates.
    pub step: u64,
    pub first_moment: ModelParameters<f32>,
    pub second_moment: ModelParameters<f32>,
    pub rng: ChaCha8Rng,
    /// Current epoch's example order and the position inside it.
    pub order: Vec<u64>,
    pub cursor: u64,
}

impl TrainingState {
    pub fn new(params: &ModelParameters<f32>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // keep the training stream apart from the initialization stream
        rng.set_stream(1);
        Self {
            step: 0,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            rng,
            order: Vec::new(),
            cursor: 0,
        }
    }
}

pub(crate) fn global_norm<T: Real>(grads: &ModelParameters<T>) -> f64 {
    grads
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.data.iter())
        .map(|x| x.widen() * x.widen())
        .sum::<f64>()
        .sqrt()
}

/// One Adam update; advances `state.step`.
pub(crate) fn adam_step(
    params: &mut ModelParameters<f32>,
    grads: &ModelParameters<f32>,
    state: &mut TrainingState,
    settings: &OptimizerSettings,
) {
    state.step += 1;
    let t = state.step as f64;
    let lr = learning_rate(settings, state.step);
    let scale = match settings.clip_norm {
        Some(c) => {
            let n = global_norm(grads);
            if n > c {
                c / n
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    let (b1, b2) = (settings.beta1, settings.beta2);
    let bc1 = 1.0 - b1.powf(t);
    let bc2 = 1.0 - b2.powf(t);
    let step_size = (lr / bc1) as f32;
    let bc2_sqrt = bc2.sqrt() as f32;
    let (b1f, b2f, eps) = (b1 as f32, b2 as f32, settings.epsilon as f32);
    let scale = scale as f32;
    let p = params.tensors_mut();
    let g = grads.tensors();
    let m = state.first_moment.tensors_mut();
    let v = state.second_moment.tensors_mut();
    for (((p, g), m), v) in p.into_iter().zip(g).zip(m).zip(v) {
        for (((w, &gr), mm), vv) in p.1.data.iter_mut().zip(&g.1.data).zip(m.1.data.iter_mut()).zip(v.1.data.iter_mut()) {
            let gr = gr * scale;
            *mm = b1f * *mm + (1.0 - b1f) * gr;
            *vv = b2f * *vv + (1.0 - b2f) * gr * gr;
            *w -= step_size * *mm / (vv.sqrt() / bc2_sqrt + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let s = OptimizerSettings { learning_rate: 1.0, warmup_steps: 4, ..Default::default() };
        assert_eq!(learning_rate(&s, 1), 0.25);
        assert_eq!(learning_rate(&s, 4), 1.0);
        assert_eq!(learning_rate(&s, 16), 0.5);
        let c = OptimizerSettings { warmup_steps: 0, ..s };
        assert_eq!(learning_rate(&c, 1000), 1.0);
    }
}
