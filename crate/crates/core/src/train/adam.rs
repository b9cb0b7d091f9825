use crate::tensor::{ParamStore, Tensor};
use crate::train::TrainConfig;
use crate::{Error, Result};

/// First and second moment estimates, one pair per parameter, plus the
/// number of updates applied so far.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub step: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl OptimState {
    pub fn new(store: &ParamStore<f32>) -> Self {
        let zeros = |p: &crate::tensor::Parameter<f32>| Tensor::zeros(p.value.shape().to_vec());
        Self {
            step: 0,
            m: store.iter().map(zeros).collect(),
            v: store.iter().map(zeros).collect(),
        }
    }
}

/// One bias-corrected Adam update from the store's accumulated gradients.
pub fn adam_step(store: &mut ParamStore<f32>, state: &mut OptimState, cfg: &TrainConfig) -> Result<()> {
    if store.is_empty() || !store.has_grads() {
        return Err(Error::State("adam_step called without accumulated gradients".into()));
    }
    if state.m.len() != store.len() || state.v.len() != store.len() {
        return Err(Error::State(format!(
            "optimiser state holds {} moments for {} parameters",
            state.m.len(),
            store.len()
        )));
    }
    let t = state.step + 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let bc1 = 1.0 - b1.powf(t as f64);
    let bc2 = 1.0 - b2.powf(t as f64);
    let lr = cfg.learning_rate;
    for ((p, m), v) in store.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
            return Err(Error::State(format!("moment shape mismatch for {}", p.name)));
        }
        let grad = p.grad.data();
        let (ms, vs) = (m.data_mut(), v.data_mut());
        let values = p.value.data_mut();
        for i in 0..values.len() {
            let g = grad[i] as f64;
            let mi = b1 * ms[i] as f64 + (1.0 - b1) * g;
            let vi = b2 * vs[i] as f64 + (1.0 - b2) * g * g;
            ms[i] = mi as f32;
            vs[i] = vi as f32;
            let m_hat = ms[i] as f64 / bc1;
            let v_hat = vs[i] as f64 / bc2;
            let delta = (lr * m_hat / (v_hat.sqrt() + cfg.epsilon)) as f32;
            if delta != 0.0 {
                values[i] -= delta;
            }
        }
    }
    state.step = t;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(value: f32, grad: f32) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        let id = s.insert("theta", Tensor::scalar(value)).unwrap();
        s.accumulate(id, &Tensor::scalar(grad)).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store(0.0, 1.0);
        let mut st = OptimState::new(&s);
        adam_step(&mut s, &mut st, &TrainConfig::default()).unwrap();
        let theta = s.iter().next().unwrap().value.item().unwrap();
        let expected = -1e-4 / (1.0 + 1e-8);
        assert!((theta as f64 - expected).abs() < 1e-9, "{theta}");
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = store(0.25, 0.0);
        let mut st = OptimState::new(&s);
        adam_step(&mut s, &mut st, &TrainConfig::default()).unwrap();
        assert_eq!(s.iter().next().unwrap().value.item().unwrap(), 0.25);
    }

    #[test]
    fn empty_gradients_are_a_state_error() {
        let mut s = ParamStore::<f32>::new();
        s.insert("w", Tensor::scalar(1.0)).unwrap();
        let mut st = OptimState::new(&s);
        assert!(matches!(adam_step(&mut s, &mut st, &TrainConfig::default()), Err(Error::State(_))));
    }
}
