use rand::Rng;

use super::tensor::{matmul, Scalar, Tensor};

/// 2-D convolution with square kernel, symmetric zero padding and stride.
///
/// Weights are stored `out_channels × (in_channels·kernel·kernel)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T = f32> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: vec![T::zero(); out_channels * in_channels * kernel * kernel],
            bias: vec![T::zero(); out_channels],
        }
    }

    /// Fan-in scaled uniform init, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and bias.
    pub fn init<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let mut conv = Self::zeros(in_channels, out_channels, kernel, stride, padding);
        let bound = 1.0 / ((in_channels * kernel * kernel) as f64).sqrt();
        for w in conv.weight.iter_mut().chain(conv.bias.iter_mut()) {
            *w = T::of(rng.random_range(-bound..bound));
        }
        conv
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn output_size(&self, height: usize, width: usize) -> (usize, usize) {
        let oh = (height + 2 * self.padding - self.kernel) / self.stride + 1;
        let ow = (width + 2 * self.padding - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    fn im2col(&self, x: &Tensor<T>, oh: usize, ow: usize) -> Vec<T> {
        let k = self.kernel;
        let p = oh * ow;
        let mut cols = vec![T::zero(); self.fan_in() * p];
        let (h, w) = (x.height as isize, x.width as isize);
        for c in 0..self.in_channels {
            let plane = x.channel(c);
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let src = &plane[iy as usize * x.width..(iy as usize + 1) * x.width];
                        let out = &mut dst[oy * ow..(oy + 1) * ow];
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < w {
                                *o = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], height: usize, width: usize, oh: usize, ow: usize) -> Tensor<T> {
        let k = self.kernel;
        let p = oh * ow;
        let mut grad = Tensor::zeros(self.in_channels, height, width);
        let (h, w) = (height as isize, width as isize);
        for c in 0..self.in_channels {
            let plane = &mut grad.data[c * height * width..(c + 1) * height * width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * width..(iy as usize + 1) * width];
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < w {
                                dst[ix as usize] = dst[ix as usize] + src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        grad
    }

    /// Forward pass; also returns the unfolded input needed by [`Conv2d::backward`].
    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
        assert_eq!(x.channels, self.in_channels, "conv input channels");
        let (oh, ow) = self.output_size(x.height, x.width);
        let p = oh * ow;
        let cols = self.im2col(x, oh, ow);
        let mut y = Tensor::zeros(self.out_channels, oh, ow);
        for (o, b) in self.bias.iter().enumerate() {
            y.data[o * p..(o + 1) * p].fill(*b);
        }
        matmul(
            self.out_channels,
            self.fan_in(),
            p,
            &self.weight,
            false,
            &cols,
            false,
            &mut y.data,
            true,
        );
        (y, cols)
    }

    /// Accumulates parameter gradients into `grad_weight`/`grad_bias` and
    /// returns the input gradient when `need_input_grad`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        input_hw: (usize, usize),
        cols: &[T],
        grad_out: &Tensor<T>,
        grad_weight: &mut [T],
        grad_bias: &mut [T],
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let (oh, ow) = (grad_out.height, grad_out.width);
        let p = oh * ow;
        let r = self.fan_in();
        matmul(
            self.out_channels,
            p,
            r,
            &grad_out.data,
            false,
            cols,
            true,
            grad_weight,
            true,
        );
        for (o, gb) in grad_bias.iter_mut().enumerate() {
            let s = grad_out.data[o * p..(o + 1) * p]
                .iter()
                .fold(T::zero(), |a, &v| a + v);
            *gb = *gb + s;
        }
        if !need_input_grad {
            return None;
        }
        let mut gcols = vec![T::zero(); r * p];
        matmul(
            r,
            self.out_channels,
            p,
            &self.weight,
            true,
            &grad_out.data,
            false,
            &mut gcols,
            false,
        );
        Some(self.col2im(&gcols, input_hw.0, input_hw.1, oh, ow))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(conv: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (oh, ow) = conv.output_size(x.height, x.width);
        let mut y = Tensor::zeros(conv.out_channels, oh, ow);
        let k = conv.kernel;
        for o in 0..conv.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = conv.bias[o];
                    for c in 0..conv.in_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * conv.stride + ky) as isize - conv.padding as isize;
                                let ix = (ox * conv.stride + kx) as isize - conv.padding as isize;
                                if iy < 0 || ix < 0 || iy >= x.height as isize || ix >= x.width as isize {
                                    continue;
                                }
                                let w = conv.weight[((o * conv.in_channels + c) * k + ky) * k + kx];
                                acc += w * x.at(c, iy as usize, ix as usize);
                            }
                        }
                    }
                    y.data[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn im2col_conv_matches_direct_loops() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        use rand::SeedableRng;
        for &(k, s, p) in &[(4, 2, 1), (3, 1, 1), (1, 1, 0)] {
            let conv = Conv2d::<f64>::init(3, 5, k, s, p, &mut rng);
            let data = (0..3 * 8 * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = Tensor::from_vec(3, 8, 8, data);
            let (y, _) = conv.forward(&x);
            let want = naive_conv(&conv, &x);
            assert_eq!(y.shape(), want.shape());
            for (a, b) in y.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stride_two_halves_the_side() {
        let conv = Conv2d::<f32>::zeros(1, 2, 4, 2, 1);
        assert_eq!(conv.output_size(64, 64), (32, 32));
        assert_eq!(conv.output_size(2, 2), (1, 1));
    }
}
