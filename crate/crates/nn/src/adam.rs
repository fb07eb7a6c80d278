use crate::element::Element;
use crate::error::{shape_err, NnError, Result};
use crate::tensor::Tensor;

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Element> AdamState<T> {
    /// Zero moments for parameters of the given lengths.
    pub fn new(lr: f64, lens: &[usize]) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(NnError::Invalid(format!("learning rate must be positive, got {lr}")));
        }
        Ok(AdamState {
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: lens.iter().map(|&n| vec![T::zero(); n]).collect(),
        })
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(shape_err(
                "adam",
                format!(
                    "state tracks {} tensors, got {} params and {} grads",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(shape_err(
                    "adam",
                    format!(
                        "tensor {i}: expected {} values, param {} grad {}",
                        self.m[i].len(),
                        p.len(),
                        g.len()
                    ),
                ));
            }
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pi, gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let gd = gi.f64();
                let mn = b1 * mi.f64() + (1.0 - b1) * gd;
                let vn = b2 * vi.f64() + (1.0 - b2) * gd * gd;
                *mi = T::of(mn);
                *vi = T::of(vn);
                let update = self.lr * (mn / c1) / ((vn / c2).sqrt() + self.eps);
                *pi = T::of(pi.f64() - update);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = vec![Tensor::new(vec![2], vec![1.0f64, -2.0]).unwrap()];
        let g = vec![Tensor::zeros(&[2])];
        let mut s = AdamState::new(1e-3, &[2]).unwrap();
        s.step(&mut p, &g).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_is_sign_times_lr() {
        let mut p = vec![Tensor::new(vec![2], vec![0.0f64, 0.0]).unwrap()];
        let g = vec![Tensor::new(vec![2], vec![3.0, -0.02]).unwrap()];
        let mut s = AdamState::new(0.1, &[2]).unwrap();
        s.step(&mut p, &g).unwrap();
        assert!((p[0].data()[0] + 0.1).abs() < 1e-8);
        assert!((p[0].data()[1] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn rejects_mismatch() {
        let mut s = AdamState::<f64>::new(0.1, &[2]).unwrap();
        let mut p = vec![Tensor::zeros(&[3])];
        assert!(s.step(&mut p, &[Tensor::zeros(&[3])]).is_err());
        assert!(AdamState::<f64>::new(0.0, &[1]).is_err());
    }
}
