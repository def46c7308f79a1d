use super::{NumericsError, Parameter, Result, Tensor};

/// Per-parameter Adam moment buffers. `t` counts completed steps.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Tensor,
    v: Tensor,
    t: u64,
}

impl AdamState {
    pub fn new(shape: &[usize]) -> Self {
        AdamState {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One Adam update with bias correction. The parameter's gradient is
/// consumed: it is zeroed once the step has been applied.
pub fn adam_step(
    param: &mut Parameter,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if param.grad.shape() != state.m.shape() {
        return Err(NumericsError::ShapeMismatch {
            op: "adam_step",
            lhs: param.grad.shape().to_vec(),
            rhs: state.m.shape().to_vec(),
        });
    }
    if !param.grad.is_finite() {
        return Err(NumericsError::NonFiniteGrad {
            name: param.name.clone(),
        });
    }
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    let md = state.m.data_mut();
    let vd = state.v.data_mut();
    let gd = param.grad.data();
    let pd = param.value.data_mut();
    for i in 0..gd.len() {
        let g = gd[i];
        md[i] = beta1 * md[i] + (1.0 - beta1) * g;
        vd[i] = beta2 * vd[i] + (1.0 - beta2) * g * g;
        let mhat = md[i] / bc1;
        let vhat = vd[i] / bc2;
        pd[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
    param.zero_grad();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_steps_match_reference_trajectory() {
        let mut p = Parameter::new("p", Tensor::scalar(0.0));
        let mut st = AdamState::new(&[1]);

        p.grad = Tensor::scalar(1.0);
        adam_step(&mut p, &mut st, 0.1, 0.9, 0.999, 1e-8).unwrap();
        assert!((p.value.data()[0] - -0.09999999900000009).abs() < 1e-15);
        assert_eq!(p.grad.data()[0], 0.0);

        p.grad = Tensor::scalar(1.0);
        adam_step(&mut p, &mut st, 0.1, 0.9, 0.999, 1e-8).unwrap();
        assert!((p.value.data()[0] - -0.19999999799999946).abs() < 1e-14);
        assert_eq!(st.steps(), 2);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = Parameter::new("w", Tensor::scalar(0.0));
        let mut st = AdamState::new(&[1]);
        p.grad = Tensor::scalar(f64::NAN);
        let err = adam_step(&mut p, &mut st, 0.1, 0.9, 0.999, 1e-8).unwrap_err();
        assert!(matches!(err, NumericsError::NonFiniteGrad { .. }));
    }
}
