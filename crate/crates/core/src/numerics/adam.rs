use serde::{Deserialize, Serialize};

use super::{NumericsError, ParamStore};

/// Learning-rate schedule consulted once per optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant {
        rate: f64,
    },
    /// `initial * decay_rate^(step / decay_steps)` with a continuous exponent.
    ExponentialDecay {
        initial: f64,
        decay_rate: f64,
        decay_steps: u64,
    },
}

impl Schedule {
    pub fn rate(&self, step: u64) -> f64 {
        match *self {
            Schedule::Constant { rate } => rate,
            Schedule::ExponentialDecay { initial, decay_rate, decay_steps } => initial * decay_rate.powf(step as f64 / decay_steps as f64),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub schedule: Schedule,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(schedule: Schedule) -> Self {
        Self { schedule, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, step: 0, first: Vec::new(), second: Vec::new() }
    }

    /// Completed optimizer steps.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Rate that the next call to [`AdamState::step`] will use.
    pub fn current_rate(&self) -> f64 {
        self.schedule.rate(self.step)
    }

    /// One bias-corrected Adam update of every trainable parameter.
    ///
    /// Consumes the gradients; calling again without a fresh backward pass
    /// fails with [`NumericsError::MissingGradient`].
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), NumericsError> {
        if let Some(p) = store.iter().find(|p| !p.frozen && p.tensor.grad().is_none()) {
            return Err(NumericsError::MissingGradient { param: p.name.clone() });
        }
        if self.first.len() != store.len() {
            self.first = store.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
            self.second = self.first.clone();
        }
        let lr = self.current_rate();
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        for ((p, m), v) in store.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            if p.frozen {
                p.tensor.clear_grad();
                continue;
            }
            let g = p.tensor.take_grad().expect("checked above");
            for (((theta, g), m), v) in p.tensor.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn store_with(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("theta", Tensor::scalar(value), false);
        s
    }

    #[test]
    fn single_step_closed_form() {
        let mut s = store_with(0.0);
        s.iter_mut().next().unwrap().tensor.accumulate_grad(&[1.0]).unwrap();
        let mut adam = AdamState::new(Schedule::Constant { rate: 1e-4 });
        adam.step(&mut s).unwrap();
        let expected = -1e-4 * (1.0 / (1.0 + 1e-8));
        let got = s.iter().next().unwrap().tensor.data()[0];
        assert!((got - expected).abs() < 1e-18, "{got} vs {expected}");
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut s = store_with(0.7);
        s.iter_mut().next().unwrap().tensor.accumulate_grad(&[0.0]).unwrap();
        let mut adam = AdamState::new(Schedule::Constant { rate: 1e-4 });
        adam.step(&mut s).unwrap();
        assert_eq!(s.iter().next().unwrap().tensor.data()[0], 0.7);
    }

    #[test]
    fn step_without_backward_is_rejected() {
        let mut s = store_with(0.0);
        let mut adam = AdamState::new(Schedule::Constant { rate: 1e-4 });
        assert!(matches!(adam.step(&mut s), Err(NumericsError::MissingGradient { .. })));
        s.iter_mut().next().unwrap().tensor.accumulate_grad(&[1.0]).unwrap();
        adam.step(&mut s).unwrap();
        assert!(matches!(adam.step(&mut s), Err(NumericsError::MissingGradient { .. })));
    }

    #[test]
    fn exponential_schedule_at_decay_multiples() {
        let s = Schedule::ExponentialDecay { initial: 1e-4, decay_rate: 0.95, decay_steps: 10_000 };
        assert_eq!(s.rate(0), 1e-4);
        assert!((s.rate(10_000) - 1e-4 * 0.95).abs() < 1e-20);
        assert!((s.rate(20_000) - 1e-4 * 0.95 * 0.95).abs() < 1e-20);
    }

    #[test]
    fn frozen_parameters_are_untouched() {
        let mut s = store_with(1.0);
        s.add("other", Tensor::scalar(2.0), false);
        s.set_frozen("theta", true);
        s.get_mut(s.find("other").unwrap()).tensor.accumulate_grad(&[1.0]).unwrap();
        let mut adam = AdamState::new(Schedule::Constant { rate: 0.1 });
        adam.step(&mut s).unwrap();
        assert_eq!(s.get(s.find("theta").unwrap()).tensor.data()[0], 1.0);
        assert!(s.get(s.find("other").unwrap()).tensor.data()[0] < 2.0);
    }
}
