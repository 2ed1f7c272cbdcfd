use super::mlp::{Dense, Mlp, MlpGrads};

/// Adam with an exponentially decaying step size.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: MlpGrads,
    v: MlpGrads,
}

fn zeros_like(mlp: &Mlp) -> MlpGrads {
    mlp.layers
        .iter()
        .map(|l| Dense {
            weight: l.weight.map(|_| 0.0),
            bias: l.bias.map(|_| 0.0),
        })
        .collect()
}

impl Adam {
    pub fn new(mlp: &Mlp, learning_rate: f64, decay: f64) -> Self {
        Adam {
            learning_rate,
            decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros_like(mlp),
            v: zeros_like(mlp),
        }
    }

    /// Current step size: `lr * decay^t` after `t` updates.
    pub fn current_rate(&self) -> f64 {
        self.learning_rate * self.decay.powi(self.step)
    }

    pub fn update(&mut self, mlp: &mut Mlp, grads: &MlpGrads) {
        let lr = self.current_rate();
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let upd = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for ((layer, g), (m, v)) in mlp
            .layers
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..layer.weight.len() {
                upd(&mut layer.weight[i], g.weight[i], &mut m.weight[i], &mut v.weight[i]);
            }
            for i in 0..layer.bias.len() {
                upd(&mut layer.bias[i], g.bias[i], &mut m.bias[i], &mut v.bias[i]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn minimises_a_quadratic() {
        let mut mlp = Mlp {
            layers: vec![Dense {
                weight: DMatrix::from_element(1, 1, 3.0),
                bias: DVector::from_element(1, -2.0),
            }],
        };
        let mut opt = Adam::new(&mlp, 0.05, 1.0);
        for _ in 0..2000 {
            let g = vec![Dense {
                weight: mlp.layers[0].weight.map(|w| 2.0 * w),
                bias: mlp.layers[0].bias.map(|b| 2.0 * b),
            }];
            opt.update(&mut mlp, &g);
        }
        assert!(mlp.layers[0].weight[0].abs() < 1e-3);
        assert!(mlp.layers[0].bias[0].abs() < 1e-3);
    }

    #[test]
    fn rate_decays() {
        let mlp = Mlp { layers: vec![] };
        let mut opt = Adam::new(&mlp, 1e-3, 0.99);
        let mut m = mlp.clone();
        opt.update(&mut m, &vec![]);
        opt.update(&mut m, &vec![]);
        assert!((opt.current_rate() - 1e-3 * 0.99f64.powi(2)).abs() < 1e-18);
    }
}
