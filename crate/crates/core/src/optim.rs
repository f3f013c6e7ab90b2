//! Adam with element-wise gradient value clipping.

use crate::autodiff::Mat;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Inclusive clipping range applied to every gradient entry.
    pub clip: (f64, f64),
}

impl AdamConfig {
    pub fn new(learning_rate: f64, clip: (f64, f64)) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip,
        }
    }
}

/// Clamps every entry of `grad` into `[lo, hi]`; NaN entries are left as-is.
pub fn clip_gradient(grad: &mut Mat, (lo, hi): (f64, f64)) {
    grad.mapv_inplace(|g| g.clamp(lo, hi));
}

#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    first: Vec<Mat>,
    second: Vec<Mat>,
    steps: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, shapes: &[(usize, usize)]) -> Self {
        Self {
            config,
            first: shapes.iter().map(|s| Mat::zeros(*s)).collect(),
            second: shapes.iter().map(|s| Mat::zeros(*s)).collect(),
            steps: 0,
        }
    }

    pub fn for_params(config: AdamConfig, params: &[&mut Mat]) -> Self {
        let shapes: Vec<_> = params.iter().map(|p| p.dim()).collect();
        Self::new(config, &shapes)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Clips `grads` in place and applies one update to `params`.
    pub fn step(&mut self, params: Vec<&mut Mat>, grads: &mut [Mat]) {
        assert_eq!(params.len(), self.first.len(), "parameter count changed");
        assert_eq!(grads.len(), self.first.len(), "gradient count mismatch");
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for (k, param) in params.into_iter().enumerate() {
            let grad = &mut grads[k];
            assert_eq!(param.dim(), grad.dim(), "gradient shape mismatch");
            clip_gradient(grad, c.clip);
            assert!(
                grad.iter().all(|g| g.is_nan() || (c.clip.0..=c.clip.1).contains(g)),
                "unclipped gradient component"
            );
            let m = &mut self.first[k];
            let v = &mut self.second[k];
            ndarray::Zip::from(&mut **param)
                .and(&*grad)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    let m_hat = *m / bias1;
                    let v_hat = *v / bias2;
                    *p -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
                });
        }
    }
}
