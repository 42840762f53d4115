use super::Tensor;
use crate::error::{Error, Result};

/// Adam with bias correction. One moment pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// Fresh state with β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(params: &[Tensor], lr: f64) -> Self {
        Self::with_betas(params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &[Tensor], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::dim(
                "adam_step",
                format!(
                    "{} parameters, {} gradients, state tracks {}",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.numel() != g.len() || p.numel() != self.first[i].len() {
                return Err(Error::dim(
                    "adam_step",
                    format!("parameter {} has {} values but gradient has {}", i, p.numel(), g.len()),
                ));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (((w, &gi), mi), vi) in p.values_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: Vec<f64>) -> Tensor {
        Tensor::from_vec(vec![values.len()], values).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = vec![param(vec![0.5, -1.0, 2.0])];
        let before = params.clone();
        let mut adam = AdamState::new(&params, 1e-3);
        adam.step(&mut params, &[vec![0.0; 3]]).unwrap();
        assert_eq!(params, before);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = vec![param(vec![1.0, 1.0])];
        let mut adam = AdamState::new(&params, 1e-3);
        adam.step(&mut params, &[vec![0.3, -7.0]]).unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g|+ε)
        assert!((params[0].values()[0] - (1.0 - 1e-3)).abs() < 1e-6);
        assert!((params[0].values()[1] - (1.0 + 1e-3)).abs() < 1e-6);
    }

    #[test]
    fn two_steps_match_sequential_oracle() {
        let g = 0.25;
        let (lr, b1, b2, eps) = (1e-2, 0.9, 0.999, 1e-8);
        let mut params = vec![param(vec![2.0])];
        let mut adam = AdamState::new(&params, lr);
        adam.step(&mut params, &[vec![g]]).unwrap();
        adam.step(&mut params, &[vec![g]]).unwrap();

        let mut w = 2.0_f64;
        let (mut m, mut v) = (0.0_f64, 0.0_f64);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        assert_eq!(params[0].values()[0], w);
    }

    #[test]
    fn shape_mismatch_is_a_dimension_error() {
        let mut params = vec![param(vec![1.0, 2.0])];
        let mut adam = AdamState::new(&params, 1e-3);
        let err = adam.step(&mut params, &[vec![1.0]]).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }
}
