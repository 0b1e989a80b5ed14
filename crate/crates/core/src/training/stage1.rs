use rand::Rng;
use rayon::prelude::*;

use super::{
    adam_for, epoch_batches, mean_grads, stream, AblationConfig, EpochRecord, MemoryConfig,
    MemoryInit, NetworkConfig, TrainConfig, STREAM_INIT, STREAM_MEMORY,
};
use crate::imaging::GrayscaleImage;
use crate::memory::{init_bank, LatentFeature, StraightThrough};
use crate::networks::{Decoder, Encoder, EncoderSpec, ProxyExtractionModule};
use crate::nn::{Grads, Tensor};
use crate::superpixel::{ProxyParams, ProxyRegistry};
use crate::training::losses::{mse, mse_grad};
use crate::{Error, Result};

/// Inputs and regression targets of the proxy extraction module.
#[derive(Clone, Debug)]
pub struct Stage1Data {
    pub inputs: Vec<Tensor<f32>>,
    pub targets: Vec<Tensor<f32>>,
}

impl Stage1Data {
    pub fn new(inputs: Vec<Tensor<f32>>, targets: Vec<Tensor<f32>>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Dataset("no training images".into()));
        }
        if inputs.len() != targets.len() {
            return Err(Error::arg("inputs and targets differ in count"));
        }
        let (c0, h0, w0) = inputs[0].shape();
        let tc = targets[0].channels;
        for (x, t) in inputs.iter().zip(&targets) {
            if x.shape() != (c0, h0, w0) || t.shape() != (tc, h0, w0) {
                return Err(Error::Dataset("training images must share one size".into()));
            }
        }
        Ok(Self { inputs, targets })
    }

    /// Images paired with their proxies (or with themselves when the proxy
    /// bridge is disabled).
    pub fn from_images(
        images: &[GrayscaleImage],
        ablation: &AblationConfig,
        params: &ProxyParams,
    ) -> Result<Self> {
        let targets = proxy_targets(images, ablation, params)?;
        Self::new(images.iter().map(|i| i.to_tensor()).collect(), targets)
    }
}

/// Stage-1 regression targets: the configured proxy of each image, or the
/// image itself for self-reconstruction rows.
pub fn proxy_targets(
    images: &[GrayscaleImage],
    ablation: &AblationConfig,
    params: &ProxyParams,
) -> Result<Vec<Tensor<f32>>> {
    if !ablation.use_si_proxy {
        return Ok(images.iter().map(|i| i.to_tensor()).collect());
    }
    let builder = ProxyRegistry::standard().get(ablation.proxy_mode.name())?;
    images.par_iter().map(|img| builder.build(img, params)).collect()
}

#[derive(Clone, Debug)]
pub struct Stage1Outcome {
    pub module: ProxyExtractionModule,
    pub log: Vec<EpochRecord>,
}

struct SampleStep {
    enc: Grads<f32>,
    dec: Grads<f32>,
    loss: f64,
    z: LatentFeature,
    assignments: Option<Vec<usize>>,
}

fn sample_step(pem: &ProxyExtractionModule, x: &Tensor<f32>, target: &Tensor<f32>) -> Result<SampleStep> {
    pem.encoder.check_input(x)?;
    let enc_trace = pem.encoder.net.forward_trace(x);
    let z = LatentFeature::from_tensor(&enc_trace.output);
    let (dec_in, assignments) = match &pem.memory {
        Some(bank) => {
            let r = bank.retrieve(&z)?;
            (r.z_tilde.to_tensor(), Some(r.assignments))
        }
        None => (enc_trace.output.clone(), None),
    };
    let dec_trace = pem.decoder.net.forward_trace(&dec_in);
    let loss = mse(&dec_trace.output.data, &target.data)?;
    let grad = Tensor::from_vec(
        target.channels,
        target.height,
        target.width,
        mse_grad(&dec_trace.output.data, &target.data, 1.0),
    );
    let mut dec = pem.decoder.net.zero_grads();
    let mut enc = pem.encoder.net.zero_grads();
    let g_tilde = pem
        .decoder
        .net
        .backward(&dec_trace, grad, &mut dec, true)
        .expect("input gradient requested");
    let g_z = StraightThrough::backward_tensor(g_tilde);
    pem.encoder.net.backward(&enc_trace, g_z, &mut enc, false);
    Ok(SampleStep {
        enc,
        dec,
        loss,
        z,
        assignments,
    })
}

fn build_module(
    data: &Stage1Data,
    cfg: &TrainConfig,
    net: &NetworkConfig,
    mem: &MemoryConfig,
) -> Result<ProxyExtractionModule> {
    let spec = EncoderSpec {
        in_channels: data.inputs[0].channels,
        base_channels: net.base_channels,
        n_downsamples: net.n_downsamples,
        latent_dim: mem.dim,
    };
    let mut rng = stream(cfg.seed, STREAM_INIT, 0);
    let encoder = Encoder::new(spec, &mut rng);
    let decoder = Decoder::new(spec.decoder(data.targets[0].channels), &mut rng);
    encoder.check_input(&data.inputs[0])?;
    ProxyExtractionModule::new(encoder, decoder, None)
}

/// Trains the proxy extraction module on `data`.
///
/// Each batch takes one optimiser step on the mean proxy loss and then one EMA
/// update of the memory with the batch's pre-step assignments.
pub fn train_stage1_proxy(
    data: &Stage1Data,
    cfg: &TrainConfig,
    net: &NetworkConfig,
    mem: &MemoryConfig,
) -> Result<Stage1Outcome> {
    cfg.validate()?;
    net.validate()?;
    mem.validate()?;
    let mut pem = build_module(data, cfg, net, mem)?;
    let n = data.inputs.len();

    if cfg.ablation.use_memory {
        let warm = match mem.init {
            MemoryInit::Warmup => {
                let first = &epoch_batches(n, cfg.batch_size, cfg.seed, 1, 0)[0];
                let feats = first
                    .iter()
                    .map(|&i| pem.encoder.encode(&data.inputs[i]))
                    .collect::<Result<Vec<_>>>()?;
                Some(LatentFeature::stack(&feats)?)
            }
            MemoryInit::Uniform => None,
        };
        let seed: u64 = stream(cfg.seed, STREAM_MEMORY, 0).random();
        pem.memory = Some(init_bank(mem.size, mem.dim, mem.gamma, seed, warm.as_ref())?);
    }

    let mut enc_opt = adam_for(&pem.encoder.net, cfg);
    let mut dec_opt = adam_for(&pem.decoder.net, cfg);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        for (b, batch) in epoch_batches(n, cfg.batch_size, cfg.seed, 1, epoch).iter().enumerate() {
            let steps = batch
                .par_iter()
                .map(|&i| sample_step(&pem, &data.inputs[i], &data.targets[i]))
                .collect::<Result<Vec<_>>>()?;
            let batch_loss: f64 = steps.iter().map(|s| s.loss).sum();
            let g_enc = mean_grads(steps.iter().map(|s| &s.enc), pem.encoder.net.zero_grads(), steps.len());
            let g_dec = mean_grads(steps.iter().map(|s| &s.dec), pem.decoder.net.zero_grads(), steps.len());
            if !batch_loss.is_finite() || !g_enc.is_finite() || !g_dec.is_finite() {
                return Err(Error::Divergence {
                    stage: "proxy",
                    epoch,
                    batch: b,
                    detail: format!("non-finite loss or gradient (loss sum {batch_loss})"),
                });
            }
            enc_opt.step(pem.encoder.net.params_mut(), &g_enc);
            dec_opt.step(pem.decoder.net.params_mut(), &g_dec);
            if let Some(bank) = pem.memory.as_mut() {
                let zs: Vec<LatentFeature> = steps.iter().map(|s| s.z.clone()).collect();
                let assignments: Vec<usize> = steps
                    .iter()
                    .flat_map(|s| s.assignments.iter().flatten().copied())
                    .collect();
                bank.ema_update(&LatentFeature::stack(&zs)?, &assignments)?;
            }
            loss_sum += batch_loss;
        }
        let record = EpochRecord {
            epoch,
            main: loss_sum / n as f64,
            global: None,
            local: None,
            disc: None,
        };
        log::info!("proxy epoch {epoch}: loss_proxy {:.6}", record.main);
        log.push(record);
    }
    Ok(Stage1Outcome { module: pem, log })
}
