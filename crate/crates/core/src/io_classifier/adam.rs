use super::network::Tensor;

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub(crate) struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Tensor], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|t| vec![0.0; t.data.len()]).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f64>]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p.data[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = vec![Tensor {
            name: "x".into(),
            shape: vec![2],
            data: vec![1.0, -1.0],
        }];
        let mut adam = Adam::new(&params, 0.1, 0.9, 0.999, 1e-8);
        adam.step(&mut params, &[vec![4.0, -0.5]]);
        assert!((params[0].data[0] - 0.9).abs() < 1e-8);
        assert!((params[0].data[1] + 0.9).abs() < 1e-8);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut params = vec![Tensor {
            name: "x".into(),
            shape: vec![1],
            data: vec![5.0],
        }];
        let mut adam = Adam::new(&params, 0.05, 0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            let g = 2.0 * (params[0].data[0] - 2.0);
            adam.step(&mut params, &[vec![g]]);
        }
        assert!((params[0].data[0] - 2.0).abs() < 1e-3);
    }
}
