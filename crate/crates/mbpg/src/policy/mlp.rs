//! Fixed-architecture multilayer perceptron with hand-written reverse-mode
//! differentiation. Hidden layers use tanh; the output layer is linear.
//! Parameter counts stay in the hundreds, so a general autodiff framework
//! would buy nothing here.

use rand::Rng;

/// Layer sizes of a feedforward net. `hidden` may be empty, giving a plain
/// affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

/// Forward-pass intermediates kept for the backward pass: the input and each
/// hidden layer's post-tanh activation.
pub struct ForwardTrace {
    activations: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        MlpSpec {
            input_dim,
            hidden,
            output_dim,
        }
    }

    /// Sizes of consecutive layers, input first.
    fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.hidden.len() + 2);
        d.push(self.input_dim);
        d.extend_from_slice(&self.hidden);
        d.push(self.output_dim);
        d
    }

    /// Total parameter count: per layer a row-major weight block then biases.
    pub fn param_dim(&self) -> usize {
        let dims = self.dims();
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Weights draw uniform from [-1/sqrt(fan_in), 1/sqrt(fan_in)] in layer
    /// order, row-major; biases are zero. Consumes one draw per weight.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.param_dim());
        let dims = self.dims();
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                theta.push(rng.gen_range(-bound..bound));
            }
            theta.extend(std::iter::repeat_n(0.0, fan_out));
        }
        theta
    }

    pub fn forward(&self, theta: &[f64], input: &[f64]) -> ForwardTrace {
        debug_assert_eq!(theta.len(), self.param_dim());
        debug_assert_eq!(input.len(), self.input_dim);
        let dims = self.dims();
        let num_layers = dims.len() - 1;
        let mut activations = Vec::with_capacity(num_layers);
        let mut x = input.to_vec();
        let mut offset = 0;
        for (l, w) in dims.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &theta[offset..offset + n_in * n_out];
            let biases = &theta[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;

            let mut z = vec![0.0; n_out];
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &weights[o * n_in..(o + 1) * n_in];
                *zo = biases[o] + row.iter().zip(&x).map(|(w, xi)| w * xi).sum::<f64>();
            }
            let last = l == num_layers - 1;
            if !last {
                for zo in z.iter_mut() {
                    *zo = zo.tanh();
                }
            }
            activations.push(std::mem::replace(&mut x, z.clone()));
            if last {
                return ForwardTrace {
                    activations,
                    output: z,
                };
            }
        }
        unreachable!("network has at least one layer");
    }

    /// Accumulate `d(out_grad . output)/d(theta)` into `grad` (`+=`).
    pub fn backward(
        &self,
        theta: &[f64],
        trace: &ForwardTrace,
        out_grad: &[f64],
        grad: &mut [f64],
    ) {
        debug_assert_eq!(grad.len(), self.param_dim());
        debug_assert_eq!(out_grad.len(), self.output_dim);
        let dims = self.dims();
        let num_layers = dims.len() - 1;

        // Parameter offsets per layer for the reverse sweep.
        let mut offsets = Vec::with_capacity(num_layers);
        let mut offset = 0;
        for w in dims.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }

        let mut delta = out_grad.to_vec();
        for l in (0..num_layers).rev() {
            let (n_in, n_out) = (dims[l], dims[l + 1]);
            let base = offsets[l];
            let input = &trace.activations[l];
            for o in 0..n_out {
                let d = delta[o];
                let wrow = base + o * n_in;
                for i in 0..n_in {
                    grad[wrow + i] += d * input[i];
                }
                grad[base + n_in * n_out + o] += d;
            }
            if l == 0 {
                break;
            }
            // delta_{l-1} = W_l^T delta_l, gated by tanh'(z) = 1 - a^2.
            let mut prev = vec![0.0; n_in];
            let weights = &theta[base..base + n_in * n_out];
            for (o, d) in delta.iter().enumerate() {
                let row = &weights[o * n_in..(o + 1) * n_in];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += w * d;
                }
            }
            for (p, a) in prev.iter_mut().zip(input) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
    }
}
