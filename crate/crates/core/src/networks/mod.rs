//! Encoder, decoder and patch discriminator, and the two composed modules:
//! proxy extraction (image → proxy, optionally through the memory) and image
//! reconstruction (proxy → image).

mod checkpoint;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    load_proxy_module, load_recon_module, save_proxy_module, save_recon_module, Metadata,
};

use crate::memory::{straight_through, LatentFeature, MemoryBank};
use crate::nn::{Conv2d, Layer, Stack, Tensor};
use crate::{Error, Result};

pub const LEAKY_SLOPE: f32 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub in_channels: usize,
    pub base_channels: usize,
    pub n_downsamples: usize,
    pub latent_dim: usize,
}

impl EncoderSpec {
    /// Output channels of each stride-2 block: `base·min(2^i, 2)`, last block `latent_dim`.
    pub fn block_channels(&self) -> Vec<usize> {
        (0..self.n_downsamples)
            .map(|i| {
                if i + 1 == self.n_downsamples {
                    self.latent_dim
                } else {
                    self.base_channels * if i == 0 { 1 } else { 2 }
                }
            })
            .collect()
    }

    pub fn reduction(&self) -> usize {
        1 << self.n_downsamples
    }

    pub fn decoder(&self, out_channels: usize) -> DecoderSpec {
        DecoderSpec {
            out_channels,
            base_channels: self.base_channels,
            n_upsamples: self.n_downsamples,
            latent_dim: self.latent_dim,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderSpec {
    pub out_channels: usize,
    pub base_channels: usize,
    pub n_upsamples: usize,
    pub latent_dim: usize,
}

impl DecoderSpec {
    /// Channel sequence `latent_dim → … → out_channels`, mirroring the encoder.
    pub fn channel_path(&self) -> Vec<usize> {
        let enc = EncoderSpec {
            in_channels: self.out_channels,
            base_channels: self.base_channels,
            n_downsamples: self.n_upsamples,
            latent_dim: self.latent_dim,
        }
        .block_channels();
        let mut path: Vec<usize> = enc.into_iter().rev().collect();
        path.push(self.out_channels);
        path
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub in_channels: usize,
    pub base_channels: usize,
    pub n_layers: usize,
}

fn check_side(h: usize, w: usize, reduction: usize) -> Result<()> {
    if !h.is_multiple_of(reduction) || !w.is_multiple_of(reduction) || h < reduction || w < reduction {
        return Err(Error::Config(format!(
            "image side {h}x{w} is not divisible by {reduction}"
        )));
    }
    Ok(())
}

/// Stride-2 convolution stack producing an h×w×d latent map.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub spec: EncoderSpec,
    pub net: Stack<f32>,
}

impl Encoder {
    pub fn new(spec: EncoderSpec, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::new();
        let mut c_in = spec.in_channels;
        for c_out in spec.block_channels() {
            layers.push(Layer::Conv(Conv2d::init(c_in, c_out, 4, 2, 1, rng)));
            layers.push(Layer::LeakyRelu(LEAKY_SLOPE));
            c_in = c_out;
        }
        Self {
            spec,
            net: Stack::new(layers),
        }
    }

    pub fn check_input(&self, x: &Tensor<f32>) -> Result<()> {
        if x.channels != self.spec.in_channels {
            return Err(Error::Config(format!(
                "encoder expects {} channels, got {}",
                self.spec.in_channels, x.channels
            )));
        }
        check_side(x.height, x.width, self.spec.reduction())
    }

    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_input(x)?;
        Ok(self.net.forward(x))
    }

    pub fn encode(&self, x: &Tensor<f32>) -> Result<LatentFeature> {
        Ok(LatentFeature::from_tensor(&self.forward(x)?))
    }
}

/// Nearest-upsample + 3×3 convolution stack, sigmoid output.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub spec: DecoderSpec,
    pub net: Stack<f32>,
}

impl Decoder {
    pub fn new(spec: DecoderSpec, rng: &mut impl Rng) -> Self {
        let path = spec.channel_path();
        let mut layers = Vec::new();
        for (i, pair) in path.windows(2).enumerate() {
            layers.push(Layer::Upsample2x);
            layers.push(Layer::Conv(Conv2d::init(pair[0], pair[1], 3, 1, 1, rng)));
            layers.push(if i + 2 == path.len() {
                Layer::Sigmoid
            } else {
                Layer::LeakyRelu(LEAKY_SLOPE)
            });
        }
        Self {
            spec,
            net: Stack::new(layers),
        }
    }

    pub fn check_input(&self, z: &Tensor<f32>) -> Result<()> {
        if z.channels != self.spec.latent_dim {
            return Err(Error::arg(format!(
                "decoder expects latent dim {}, got {}",
                self.spec.latent_dim, z.channels
            )));
        }
        Ok(())
    }

    pub fn forward(&self, z: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_input(z)?;
        Ok(self.net.forward(z))
    }

    pub fn decode(&self, z: &LatentFeature) -> Result<Tensor<f32>> {
        self.forward(&z.to_tensor())
    }
}

/// Patch discriminator: stride-2 blocks then a 1-channel 3×3 map.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub spec: DiscriminatorSpec,
    pub net: Stack<f32>,
}

impl Discriminator {
    pub fn new(spec: DiscriminatorSpec, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::new();
        let mut c_in = spec.in_channels;
        for i in 0..spec.n_layers {
            let c_out = spec.base_channels << i;
            layers.push(Layer::Conv(Conv2d::init(c_in, c_out, 4, 2, 1, rng)));
            layers.push(Layer::LeakyRelu(LEAKY_SLOPE));
            c_in = c_out;
        }
        layers.push(Layer::Conv(Conv2d::init(c_in, 1, 3, 1, 1, rng)));
        Self {
            spec,
            net: Stack::new(layers),
        }
    }

    /// Pre-sigmoid patch scores.
    pub fn logits(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        if x.channels != self.spec.in_channels {
            return Err(Error::arg("discriminator channel mismatch"));
        }
        check_side(x.height, x.width, 1 << self.spec.n_layers)?;
        Ok(self.net.forward(x))
    }

    /// Per-patch probabilities in (0, 1).
    pub fn discriminate(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(self.logits(x)?.map(|v| 1.0 / (1.0 + (-v).exp())))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProxyForward {
    pub proxy: Tensor<f32>,
    pub z: LatentFeature,
    pub z_tilde: LatentFeature,
    pub assignments: Option<Vec<usize>>,
}

/// Image → proxy: `Dec_p(G(Enc_p(I)))`, with `G` the memory lookup when enabled.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxyExtractionModule {
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub memory: Option<MemoryBank>,
}

impl ProxyExtractionModule {
    pub fn new(encoder: Encoder, decoder: Decoder, memory: Option<MemoryBank>) -> Result<Self> {
        if encoder.spec.latent_dim != decoder.spec.latent_dim {
            return Err(Error::Config("encoder/decoder latent dims differ".into()));
        }
        if let Some(m) = &memory {
            if m.d() != encoder.spec.latent_dim {
                return Err(Error::Config(format!(
                    "memory dimension {} does not match latent dimension {}",
                    m.d(),
                    encoder.spec.latent_dim
                )));
            }
        }
        Ok(Self {
            encoder,
            decoder,
            memory,
        })
    }

    pub fn use_memory(&self) -> bool {
        self.memory.is_some()
    }

    pub fn out_channels(&self) -> usize {
        self.decoder.spec.out_channels
    }

    /// Memory substitution of an encoder output (identity without memory).
    pub fn substitute(&self, z: &LatentFeature) -> Result<(LatentFeature, Option<Vec<usize>>)> {
        match &self.memory {
            Some(bank) => {
                let r = bank.retrieve(z)?;
                let st = straight_through(z, &r.z_tilde)?;
                Ok((st.value, Some(r.assignments)))
            }
            None => Ok((z.clone(), None)),
        }
    }

    pub fn forward(&self, image: &Tensor<f32>) -> Result<ProxyForward> {
        let z = self.encoder.encode(image)?;
        let (z_tilde, assignments) = self.substitute(&z)?;
        let proxy = self.decoder.decode(&z_tilde)?;
        Ok(ProxyForward {
            proxy,
            z,
            z_tilde,
            assignments,
        })
    }
}

/// Proxy → image: `Dec_g(Enc_g(P))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageReconstructionModule {
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl ImageReconstructionModule {
    pub fn new(encoder: Encoder, decoder: Decoder) -> Result<Self> {
        if encoder.spec.latent_dim != decoder.spec.latent_dim {
            return Err(Error::Config("encoder/decoder latent dims differ".into()));
        }
        Ok(Self { encoder, decoder })
    }

    pub fn in_channels(&self) -> usize {
        self.encoder.spec.in_channels
    }

    pub fn forward(&self, proxy: &Tensor<f32>) -> Result<Tensor<f32>> {
        if proxy.channels != self.in_channels() {
            return Err(Error::arg(format!(
                "reconstruction module expects {} proxy channels, got {}",
                self.in_channels(),
                proxy.channels
            )));
        }
        let z = self.encoder.forward(proxy)?;
        self.decoder.forward(&z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::init_bank;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(d: usize) -> EncoderSpec {
        EncoderSpec {
            in_channels: 1,
            base_channels: 8,
            n_downsamples: 4,
            latent_dim: d,
        }
    }

    fn input(side: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(1, side, side, (0..side * side).map(|_| rng.random_range(0.0..1.0)).collect())
    }

    #[test]
    fn channel_schedule() {
        let s = EncoderSpec {
            in_channels: 1,
            base_channels: 32,
            n_downsamples: 4,
            latent_dim: 64,
        };
        assert_eq!(s.block_channels(), vec![32, 64, 64, 64]);
        assert_eq!(s.decoder(1).channel_path(), vec![64, 64, 64, 32, 1]);
    }

    #[test]
    fn encode_decode_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = Encoder::new(spec(64), &mut rng);
        let dec = Decoder::new(spec(64).decoder(1), &mut rng);
        let z = enc.encode(&input(64, 1)).unwrap();
        assert_eq!((z.height, z.width, z.dim), (4, 4, 64));
        let out = dec.decode(&z).unwrap();
        assert_eq!(out.shape(), (1, 64, 64));
        assert!(out.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(out, dec.decode(&z).unwrap());
    }

    #[test]
    fn paper_scale_latent_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = Encoder::new(
            EncoderSpec {
                base_channels: 4,
                ..spec(64)
            },
            &mut rng,
        );
        let z = enc.encode(&input(256, 2)).unwrap();
        assert_eq!((z.height, z.width, z.dim), (16, 16, 64));
    }

    #[test]
    fn indivisible_side_is_a_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = Encoder::new(spec(16), &mut rng);
        assert!(matches!(enc.encode(&input(40, 0)), Err(Error::Config(_))));
    }

    #[test]
    fn zero_weights_give_constant_bias_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut enc = Encoder::new(spec(8), &mut rng);
        for p in enc.net.params_mut().into_iter().step_by(2) {
            p.fill(0.0);
        }
        let z = enc.forward(&input(32, 3)).unwrap();
        for c in 0..z.channels {
            let plane = z.channel(c);
            assert!(plane.iter().all(|&v| v == plane[0]));
        }
    }

    #[test]
    fn zeroed_discriminator_head_scores_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut d = Discriminator::new(
            DiscriminatorSpec {
                in_channels: 1,
                base_channels: 8,
                n_layers: 3,
            },
            &mut rng,
        );
        let mut params = d.net.params_mut();
        let n = params.len();
        params[n - 2].fill(0.0);
        params[n - 1].fill(0.0);
        let scores = d.discriminate(&input(32, 5)).unwrap();
        assert_eq!(scores.shape(), (1, 4, 4));
        assert!(scores.data.iter().all(|&v| v == 0.5));
        let mask: Vec<f32> = (0..32 * 32).map(|i| (i % 3 == 0) as u8 as f32).collect();
        assert!(d.discriminate(&input(32, 5).masked(&mask)).is_ok());
    }

    #[test]
    fn single_item_memory_makes_the_proxy_input_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let enc = Encoder::new(spec(16), &mut rng);
        let dec = Decoder::new(spec(16).decoder(1), &mut rng);
        let bank = init_bank(1, 16, 0.99, 1, None).unwrap();
        let pem = ProxyExtractionModule::new(enc, dec, Some(bank)).unwrap();
        let a = pem.forward(&input(32, 1)).unwrap();
        let b = pem.forward(&input(32, 2)).unwrap();
        assert_eq!(a.proxy, b.proxy);
    }

    #[test]
    fn warm_started_memory_has_zero_quantization_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let enc = Encoder::new(spec(16), &mut rng);
        let dec = Decoder::new(spec(16).decoder(1), &mut rng);
        let x = input(32, 7);
        let z = enc.encode(&x).unwrap();
        let bank = init_bank(z.rows(), 16, 0.99, 1, Some(&z)).unwrap();
        let pem = ProxyExtractionModule::new(enc, dec, Some(bank)).unwrap();
        let f = pem.forward(&x).unwrap();
        assert_eq!(f.z.frobenius_distance(&f.z_tilde).unwrap(), 0.0);
    }

    #[test]
    fn without_memory_the_module_is_a_plain_encoder_decoder() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let enc = Encoder::new(spec(16), &mut rng);
        let dec = Decoder::new(spec(16).decoder(1), &mut rng);
        let pem = ProxyExtractionModule::new(enc.clone(), dec.clone(), None).unwrap();
        let x = input(32, 8);
        let f = pem.forward(&x).unwrap();
        assert_eq!(f.z, f.z_tilde);
        assert_eq!(f.proxy, dec.forward(&enc.forward(&x).unwrap()).unwrap());
    }

    #[test]
    fn reconstruction_accepts_two_channel_proxies() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let s = EncoderSpec {
            in_channels: 2,
            ..spec(16)
        };
        let irm = ImageReconstructionModule::new(Encoder::new(s, &mut rng), Decoder::new(s.decoder(1), &mut rng)).unwrap();
        let p = Tensor::from_vec(2, 32, 32, vec![0.5; 2 * 32 * 32]);
        assert_eq!(irm.forward(&p).unwrap().shape(), (1, 32, 32));
        assert!(irm.forward(&input(32, 0)).is_err());
    }
}
