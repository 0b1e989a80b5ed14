use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use proxyad_core::memory::{init_bank, LatentFeature, StraightThrough};
use proxyad_core::networks::{Decoder, Encoder, EncoderSpec};
use proxyad_core::nn::{Conv2d, Layer, Stack, Tensor};
use proxyad_core::training::{mse, mse_grad};

/// Two-layer encoder-decoder in f64: stride-2 conv, leaky rectifier, upsample, conv, sigmoid.
fn micro(c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) -> Stack<f64> {
    Stack::new(vec![
        Layer::Conv(Conv2d::init(c_in, 4, 4, 2, 1, rng)),
        Layer::LeakyRelu(0.2),
        Layer::Upsample2x,
        Layer::Conv(Conv2d::init(4, c_out, 3, 1, 1, rng)),
        Layer::Sigmoid,
    ])
}

fn random(c: usize, side: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_vec(c, side, side, (0..c * side * side).map(|_| rng.random_range(0.0..1.0)).collect())
}

/// Compares backprop against central differences for every parameter of
/// `net` under `MSE(net(x), target)`.
fn check_mse_gradients(mut net: Stack<f64>, x: &Tensor<f64>, target: &Tensor<f64>) {
    let trace = net.forward_trace(x);
    let mut grads = net.zero_grads();
    let g = Tensor::from_vec(
        target.channels,
        target.height,
        target.width,
        mse_grad(&trace.output.data, &target.data, 1.0),
    );
    net.backward(&trace, g, &mut grads, false);

    let h = 1e-6;
    let mut checked = 0;
    for slot in 0..grads.slots.len() {
        for i in 0..grads.slots[slot].len() {
            let orig = net.params()[slot][i];
            net.params_mut()[slot][i] = orig + h;
            let up = mse(&net.forward(x).data, &target.data).unwrap();
            net.params_mut()[slot][i] = orig - h;
            let down = mse(&net.forward(x).data, &target.data).unwrap();
            net.params_mut()[slot][i] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grads.slots[slot][i];
            let scale = fd.abs().max(an.abs());
            assert!(
                (fd - an).abs() <= 1e-4 * scale + 1e-10,
                "slot {slot} index {i}: analytic {an}, numeric {fd}"
            );
            checked += 1;
        }
    }
    assert_eq!(checked, net.param_count());
}

#[test]
fn proxy_loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let net = micro(1, 1, &mut rng);
    let image = random(1, 8, &mut rng);
    let proxy = random(1, 8, &mut rng);
    check_mse_gradients(net, &image, &proxy);
}

#[test]
fn reconstruction_loss_gradients_match_finite_differences() {
    // Two-channel proxy in, image out; adversarial weight zero.
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let net = micro(2, 1, &mut rng);
    let proxy = random(2, 8, &mut rng);
    let image = random(1, 8, &mut rng);
    check_mse_gradients(net, &proxy, &image);
}

#[test]
fn encoder_receives_gradient_through_the_memory() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let spec = EncoderSpec {
        in_channels: 1,
        base_channels: 4,
        n_downsamples: 2,
        latent_dim: 8,
    };
    let enc = Encoder::new(spec, &mut rng);
    let dec = Decoder::new(spec.decoder(1), &mut rng);
    let x = Tensor::from_vec(1, 16, 16, (0..256).map(|_| rng.random_range(0.0..1.0)).collect());
    let target = Tensor::from_vec(1, 16, 16, vec![0.5f32; 256]);
    let bank = init_bank(4, 8, 0.99, 7, None).unwrap();

    let et = enc.net.forward_trace(&x);
    let z = LatentFeature::from_tensor(&et.output);
    let r = bank.retrieve(&z).unwrap();
    let dt = dec.net.forward_trace(&r.z_tilde.to_tensor());
    let g = Tensor::from_vec(1, 16, 16, mse_grad(&dt.output.data, &target.data, 1.0));
    let mut dgrads = dec.net.zero_grads();
    let gz = dec.net.backward(&dt, g, &mut dgrads, true).unwrap();
    let mut egrads = enc.net.zero_grads();
    enc.net.backward(&et, StraightThrough::backward_tensor(gz), &mut egrads, false);

    assert!(egrads.is_finite());
    assert!(egrads.l2_norm() > 0.0, "stage-1 encoder gradient vanished");
    assert!(dgrads.l2_norm() > 0.0);
}
