//! Dense tanh network with a linear head, batched column-wise.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out x in`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    fn zeros(out: usize, inp: usize) -> Self {
        Dense {
            weight: DMatrix::zeros(out, inp),
            bias: DVector::zeros(out),
        }
    }

    fn xavier(out: usize, inp: usize, rng: &mut ChaCha8Rng) -> Self {
        let a = (6.0 / (inp + out) as f64).sqrt();
        Dense {
            weight: DMatrix::from_fn(out, inp, |_, _| rng.random_range(-a..a)),
            bias: DVector::zeros(out),
        }
    }
}

/// Hidden layers use `tanh`; the last layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Gradients with the same layout as [`Mlp::layers`].
pub type MlpGrads = Vec<Dense>;

#[derive(Debug, Clone)]
pub struct Pass {
    pub outputs: DMatrix<f64>,
    pub grads: MlpGrads,
    pub input_grads: DMatrix<f64>,
}

impl Mlp {
    /// `depth` hidden layers of `width` units with Xavier-uniform weights and
    /// a zero-initialised head, so the untrained network outputs zero.
    pub fn new(input: usize, width: usize, depth: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::with_capacity(depth + 1);
        let mut prev = input;
        for _ in 0..depth {
            layers.push(Dense::xavier(width, prev, rng));
            prev = width;
        }
        layers.push(Dense::zeros(output, prev));
        Mlp { layers }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn affine(layer: &Dense, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(layer.weight.nrows(), x.ncols());
        z.gemm(1.0, &layer.weight, x, 0.0);
        for mut col in z.column_iter_mut() {
            col += &layer.bias;
        }
        z
    }

    /// Outputs for inputs laid out one column per sample.
    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = Self::affine(layer, &h);
            if i < last {
                h.apply(|v| *v = v.tanh());
            }
        }
        h
    }

    /// Forward pass that keeps the layer activations for [`Mlp::backward`].
    /// The last entry of the returned activations is the output.
    pub fn forward_cached(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Self::affine(layer, acts.last().expect("input"));
            if i < last {
                z.apply(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        acts
    }

    /// Reverse-mode gradients of `sum(out_grad .* output)` with respect to
    /// the parameters and the inputs.
    pub fn backward(&self, acts: &[DMatrix<f64>], out_grad: &DMatrix<f64>) -> (MlpGrads, DMatrix<f64>) {
        let mut delta = out_grad.clone();
        let mut grads = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts[i];
            let weight = &delta * input.transpose();
            let bias = delta.column_sum();
            grads.push(Dense { weight, bias });
            let mut back = DMatrix::zeros(layer.weight.ncols(), delta.ncols());
            back.gemm(1.0, &layer.weight.transpose(), &delta, 0.0);
            if i > 0 {
                // `input` is a tanh activation: d tanh = 1 - tanh^2.
                back.zip_apply(input, |b, h| *b *= 1.0 - h * h);
            }
            delta = back;
        }
        grads.reverse();
        (grads, delta)
    }

    /// Forward pass plus reverse-mode gradients for a given output gradient.
    pub fn forward_backward(&self, x: &DMatrix<f64>, out_grad: &DMatrix<f64>) -> Pass {
        let mut acts = self.forward_cached(x);
        let (grads, input_grads) = self.backward(&acts, out_grad);
        Pass {
            outputs: acts.pop().expect("output"),
            grads,
            input_grads,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_mlp(seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Mlp::new(6, 8, 2, 3, &mut rng);
        let head = m.layers.last_mut().unwrap();
        head.weight = DMatrix::from_fn(3, 8, |_, _| rng.random_range(-0.5..0.5));
        head.bias = DVector::from_fn(3, |_, _| rng.random_range(-0.5..0.5));
        m
    }

    fn objective(m: &Mlp, x: &DMatrix<f64>, dir: &DMatrix<f64>) -> f64 {
        m.forward(x).component_mul(dir).sum()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn zero_head_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Mlp::new(6, 16, 3, 3, &mut rng);
        let x = DMatrix::from_fn(6, 10, |_, _| rng.random_range(-5.0..5.0));
        assert!(m.forward(&x).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = random_mlp(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(6, 5, |_, _| rng.random_range(-1.0..1.0));
        let dir = DMatrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0));
        let pass = m.forward_backward(&x, &dir);
        assert_eq!(pass.outputs, m.forward(&x));
        let h = 1e-5;
        for (li, layer) in m.layers.iter().enumerate() {
            for idx in 0..layer.weight.len() {
                let mut p = m.clone();
                p.layers[li].weight[idx] += h;
                let mut q = m.clone();
                q.layers[li].weight[idx] -= h;
                let fd = (objective(&p, &x, &dir) - objective(&q, &x, &dir)) / (2.0 * h);
                let an = pass.grads[li].weight[idx];
                assert!(rel_err(fd, an) < 1e-4 || (fd - an).abs() < 1e-9, "w{li}[{idx}]: {fd} vs {an}");
            }
            for idx in 0..layer.bias.len() {
                let mut p = m.clone();
                p.layers[li].bias[idx] += h;
                let mut q = m.clone();
                q.layers[li].bias[idx] -= h;
                let fd = (objective(&p, &x, &dir) - objective(&q, &x, &dir)) / (2.0 * h);
                let an = pass.grads[li].bias[idx];
                assert!(rel_err(fd, an) < 1e-4 || (fd - an).abs() < 1e-9, "b{li}[{idx}]: {fd} vs {an}");
            }
        }
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xq = x.clone();
            xq[idx] -= h;
            let fd = (objective(&m, &xp, &dir) - objective(&m, &xq, &dir)) / (2.0 * h);
            assert!(rel_err(fd, pass.input_grads[idx]) < 1e-4);
        }
    }

    #[test]
    fn pure_function() {
        let m = random_mlp(4);
        let x = DMatrix::from_element(6, 3, 0.25);
        assert_eq!(m.forward(&x), m.forward(&x));
        let c = m.forward(&x);
        assert_eq!(c.column(0), c.column(2));
    }
}
