use super::conv::Conv2d;
use super::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T = f32> {
    Conv(Conv2d<T>),
    LeakyRelu(T),
    /// Nearest-neighbour 2× spatial upsampling.
    Upsample2x,
    Sigmoid,
}

/// Per-parameter gradient buffers, ordered like [`Stack::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<T = f32> {
    pub slots: Vec<Vec<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn add_assign(&mut self, other: &Grads<T>) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = *x + *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for slot in &mut self.slots {
            for x in slot.iter_mut() {
                *x = *x * s;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.slots
            .iter()
            .flatten()
            .map(|v| v.to_f64().unwrap().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.slots.iter().flatten().all(|v| v.is_finite())
    }
}

/// Intermediate activations recorded by [`Stack::forward_trace`].
#[derive(Clone, Debug)]
pub struct Trace<T = f32> {
    inputs: Vec<Tensor<T>>,
    cols: Vec<Option<Vec<T>>>,
    pub output: Tensor<T>,
}

/// A feed-forward chain of layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Stack<T = f32> {
    pub layers: Vec<Layer<T>>,
}

fn upsample<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = x.shape();
    let mut y = Tensor::zeros(c, 2 * h, 2 * w);
    for ch in 0..c {
        for yy in 0..2 * h {
            for xx in 0..2 * w {
                y.data[(ch * 2 * h + yy) * 2 * w + xx] = x.at(ch, yy / 2, xx / 2);
            }
        }
    }
    y
}

fn upsample_backward<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = (g.channels, g.height / 2, g.width / 2);
    let mut out = Tensor::zeros(c, h, w);
    for ch in 0..c {
        for yy in 0..g.height {
            for xx in 0..g.width {
                let i = (ch * h + yy / 2) * w + xx / 2;
                out.data[i] = out.data[i] + g.at(ch, yy, xx);
            }
        }
    }
    out
}

fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

impl<T: Scalar> Stack<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn convs(&self) -> impl Iterator<Item = &Conv2d<T>> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            _ => None,
        })
    }

    /// Parameter slices in declaration order: (weight, bias) per convolution.
    pub fn params(&self) -> Vec<&[T]> {
        self.convs()
            .flat_map(|c| [c.weight.as_slice(), c.bias.as_slice()])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            if let Layer::Conv(c) = layer {
                out.push(c.weight.as_mut_slice());
                out.push(c.bias.as_mut_slice());
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads<T> {
        Grads {
            slots: self.params().iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = match layer {
                Layer::Conv(c) => c.forward(&cur).0,
                Layer::LeakyRelu(slope) => cur.map(|v| if v > T::zero() { v } else { v * *slope }),
                Layer::Upsample2x => upsample(&cur),
                Layer::Sigmoid => cur.map(sigmoid),
            };
        }
        cur
    }

    pub fn forward_trace(&self, x: &Tensor<T>) -> Trace<T> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cols = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (next, col) = match layer {
                Layer::Conv(c) => {
                    let (y, col) = c.forward(&cur);
                    (y, Some(col))
                }
                Layer::LeakyRelu(slope) => {
                    (cur.map(|v| if v > T::zero() { v } else { v * *slope }), None)
                }
                Layer::Upsample2x => (upsample(&cur), None),
                Layer::Sigmoid => (cur.map(sigmoid), None),
            };
            inputs.push(cur);
            cols.push(col);
            cur = next;
        }
        Trace {
            inputs,
            cols,
            output: cur,
        }
    }

    /// Backpropagates `grad_out` through the recorded trace, accumulating
    /// parameter gradients into `grads`. Returns the gradient with respect to
    /// the stack input when `need_input_grad`.
    pub fn backward(
        &self,
        trace: &Trace<T>,
        grad_out: Tensor<T>,
        grads: &mut Grads<T>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let mut slot = grads.slots.len();
        let mut g = grad_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.inputs[i];
            g = match layer {
                Layer::Conv(c) => {
                    slot -= 2;
                    let (gw, rest) = grads.slots[slot..].split_at_mut(1);
                    let needed = need_input_grad || i > 0;
                    c.backward(
                        (input.height, input.width),
                        trace.cols[i].as_ref().expect("conv trace"),
                        &g,
                        &mut gw[0],
                        &mut rest[0],
                        needed,
                    )?
                }
                Layer::LeakyRelu(slope) => {
                    let mut gx = g;
                    for (gv, &xv) in gx.data.iter_mut().zip(&input.data) {
                        if xv <= T::zero() {
                            *gv = *gv * *slope;
                        }
                    }
                    gx
                }
                Layer::Upsample2x => upsample_backward(&g),
                Layer::Sigmoid => {
                    // Sigmoid output is the next layer's input, or the trace output.
                    let out = trace.inputs.get(i + 1).unwrap_or(&trace.output);
                    let mut gx = g;
                    for (gv, &s) in gx.data.iter_mut().zip(&out.data) {
                        *gv = *gv * s * (T::one() - s);
                    }
                    gx
                }
            };
        }
        if need_input_grad {
            Some(g)
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn micro(rng: &mut impl Rng) -> Stack<f64> {
        Stack::new(vec![
            Layer::Conv(Conv2d::init(1, 3, 4, 2, 1, rng)),
            Layer::LeakyRelu(0.2),
            Layer::Upsample2x,
            Layer::Conv(Conv2d::init(3, 1, 3, 1, 1, rng)),
            Layer::Sigmoid,
        ])
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let net = micro(&mut rng);
        let x = Tensor::from_vec(1, 6, 6, (0..36).map(|_| rng.random_range(0.0..1.0)).collect());
        let loss = |t: &Tensor<f64>| net.forward(t).data.iter().map(|v| v * v).sum::<f64>() * 0.5;
        let trace = net.forward_trace(&x);
        let mut grads = net.zero_grads();
        let gx = net
            .backward(&trace, trace.output.clone(), &mut grads, true)
            .unwrap();
        let h = 1e-6;
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
            assert!((fd - gx.data[i]).abs() < 1e-7, "{i}: {fd} vs {}", gx.data[i]);
        }
    }

    #[test]
    fn trace_output_equals_plain_forward() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let net = micro(&mut rng);
        let x = Tensor::from_vec(1, 8, 8, (0..64).map(|_| rng.random_range(0.0..1.0)).collect());
        assert_eq!(net.forward(&x), net.forward_trace(&x).output);
    }
}
