use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adam hyperparameters. Defaults: lr 1e-3, β₁ 0.9, β₂ 0.999, ε 1e-8.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, one pair of buffers per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction, reading each parameter's gradient
/// from its `grad` buffer. Increments the step counter by 1.
pub fn adam_step(params: &mut [Tensor], state: &mut AdamState, hp: &AdamParams) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "adam state tracks {} tensors but {} were given",
            state.m.len(),
            params.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for (idx, p) in params.iter_mut().enumerate() {
        let grad = p.grad.as_ref().ok_or_else(|| {
            Error::Contract(format!("parameter {idx} has no gradient for adam_step"))
        })?;
        if grad.len() != p.len() || state.m[idx].len() != p.len() {
            return Err(Error::Dimension {
                context: format!("adam_step parameter {idx}"),
                lhs: vec![p.len()],
                rhs: vec![grad.len()],
            });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient in parameter {idx}"
            )));
        }
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        let grad = p.grad.as_ref().unwrap().clone();
        let data = p.data_mut();
        for i in 0..data.len() {
            let g = grad[i];
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(data: Vec<f64>) -> Tensor {
        let n = data.len();
        Tensor::param(vec![n], data).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = param(vec![1.0, -2.0, 3.5]);
        p.grad = Some(vec![0.0; 3]);
        let mut params = vec![p];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &mut state, &AdamParams::default()).unwrap();
        assert_eq!(params[0].data(), &[1.0, -2.0, 3.5]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn matches_hand_derived_recurrence() {
        // Single scalar, constant gradient 1 for two steps, lr = 0.1.
        let hp = AdamParams {
            lr: 0.1,
            ..AdamParams::default()
        };
        let mut p = param(vec![0.5]);
        p.grad = Some(vec![1.0]);
        let mut params = vec![p];
        let mut state = AdamState::new(&params);

        // Hand recurrence, written out independently of the implementation.
        let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
        let mut w = 0.5;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2u32 {
            m = b1 * m + (1.0 - b1) * 1.0;
            v = b2 * v + (1.0 - b2) * 1.0;
            let m_hat = m / (1.0 - b1.powi(t as i32));
            let v_hat: f64 = v / (1.0 - b2.powi(t as i32));
            w -= 0.1 * m_hat / (v_hat.sqrt() + eps);
        }

        adam_step(&mut params, &mut state, &hp).unwrap();
        params[0].grad = Some(vec![1.0]);
        adam_step(&mut params, &mut state, &hp).unwrap();
        assert!((params[0].data()[0] - w).abs() < 1e-15);
        assert_eq!(state.step_count(), 2);
    }

    #[test]
    fn disjoint_groups_update_independently() {
        let mut a = param(vec![1.0]);
        a.grad = Some(vec![0.5]);
        let mut b = param(vec![2.0]);
        b.grad = Some(vec![-0.25]);

        // Joint update.
        let mut joint = vec![a.clone(), b.clone()];
        let mut state = AdamState::new(&joint);
        adam_step(&mut joint, &mut state, &AdamParams::default()).unwrap();

        // Per-group updates.
        let mut ga = vec![a];
        let mut sa = AdamState::new(&ga);
        adam_step(&mut ga, &mut sa, &AdamParams::default()).unwrap();
        let mut gb = vec![b];
        let mut sb = AdamState::new(&gb);
        adam_step(&mut gb, &mut sb, &AdamParams::default()).unwrap();

        assert_eq!(joint[0].data(), ga[0].data());
        assert_eq!(joint[1].data(), gb[0].data());
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut p = param(vec![1.0]);
        p.grad = Some(vec![f64::NAN]);
        let mut params = vec![p];
        let mut state = AdamState::new(&params);
        assert!(matches!(
            adam_step(&mut params, &mut state, &AdamParams::default()),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut params = vec![param(vec![1.0])];
        let mut state = AdamState::new(&params);
        assert!(matches!(
            adam_step(&mut params, &mut state, &AdamParams::default()),
            Err(Error::Contract(_))
        ));
    }
}
