use rand::Rng;
use rayon::prelude::*;

use super::losses::{bce_with_logits, mse, mse_grad};
use super::{
    adam_for, epoch_batches, mean_grads, pair_backward, pair_forward, stream, EpochRecord,
    MemoryConfig, NetworkConfig, PairTrace, PapcSource, ReconTrainInput, TrainConfig, STREAM_INIT,
    STREAM_PAPC,
};
use crate::imaging::GrayscaleImage;
use crate::networks::{
    Decoder, Discriminator, DiscriminatorSpec, Encoder, EncoderSpec, ImageReconstructionModule,
    ProxyExtractionModule,
};
use crate::nn::{Grads, Tensor};
use crate::papc::construct_pseudo_proxy;
use crate::superpixel::{ProxyParams, ProxyRegistry};
use crate::{Error, Result};

/// Cached per-image tensors for reconstruction training.
#[derive(Clone, Debug)]
pub struct Stage2Data {
    pub ids: Vec<String>,
    pub images: Vec<Tensor<f32>>,
    /// Training-input proxy of each image.
    pub proxies: Vec<Tensor<f32>>,
    /// What a pseudo-anomaly copies from each image when it is the patch source.
    pub paste: Vec<Tensor<f32>>,
}

impl Stage2Data {
    /// Computes the training proxies once, from the frozen stage-1 module or
    /// directly from the images, depending on `cfg.recon_train_input`.
    pub fn prepare(
        ids: &[String],
        images: &[GrayscaleImage],
        pem: &ProxyExtractionModule,
        cfg: &TrainConfig,
        params: &ProxyParams,
    ) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Dataset("no training images".into()));
        }
        if ids.len() != images.len() {
            return Err(Error::arg("ids and images differ in count"));
        }
        let builder = ProxyRegistry::standard().get(cfg.ablation.proxy_mode.name())?;
        let per_image = images
            .par_iter()
            .map(|img| {
                let x = img.to_tensor();
                let proxy = match cfg.recon_train_input {
                    ReconTrainInput::Predicted => pem.forward(&x)?.proxy,
                    ReconTrainInput::Slic => builder.build(img, params)?,
                };
                let paste = builder.paste_content(img, params)?;
                Ok((x, proxy, paste))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut data = Self {
            ids: ids.to_vec(),
            images: Vec::with_capacity(images.len()),
            proxies: Vec::with_capacity(images.len()),
            paste: Vec::with_capacity(images.len()),
        };
        for (x, p, s) in per_image {
            data.images.push(x);
            data.proxies.push(p);
            data.paste.push(s);
        }
        Ok(data)
    }

    fn check(&self) -> Result<()> {
        let n = self.images.len();
        if n == 0 {
            return Err(Error::Dataset("no training images".into()));
        }
        if self.proxies.len() != n || self.paste.len() != n || self.ids.len() != n {
            return Err(Error::arg("stage-2 data columns differ in length"));
        }
        let img_shape = self.images[0].shape();
        let proxy_shape = self.proxies[0].shape();
        for i in 0..n {
            if self.images[i].shape() != img_shape
                || self.proxies[i].shape() != proxy_shape
                || self.paste[i].shape() != proxy_shape
            {
                return Err(Error::Dataset("training images must share one size".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Stage2Outcome {
    pub module: ImageReconstructionModule,
    pub discriminator: Discriminator,
    pub log: Vec<EpochRecord>,
}

struct Pseudo {
    trace: PairTrace,
    mask: Vec<f32>,
}

struct GenForward {
    rec: PairTrace,
    pseudo: Option<Pseudo>,
}

struct DiscStep {
    grads: Grads<f32>,
    loss: f64,
    correct: usize,
    total: usize,
}

struct GenStep {
    enc: Grads<f32>,
    dec: Grads<f32>,
    rec: f64,
    global: f64,
    local: f64,
}

fn disc_term(d: &Discriminator, x: &Tensor<f32>, real: bool, grads: &mut Grads<f32>, step: &mut DiscStep) {
    let t = d.net.forward_trace(x);
    let (v, g) = bce_with_logits(&t.output, real, 1.0);
    step.correct += t.output.data.iter().filter(|&&l| (l > 0.0) == real).count();
    step.total += t.output.data.len();
    d.net.backward(&t, g, grads, false);
    step.loss += v;
}

/// `(E[-log D(x)], ∂/∂x)` scaled by `weight`.
fn adversarial_input_grad(d: &Discriminator, x: &Tensor<f32>, weight: f64) -> (f64, Tensor<f32>) {
    let t = d.net.forward_trace(x);
    let (v, g) = bce_with_logits(&t.output, true, weight);
    let mut scratch = d.net.zero_grads();
    let gx = d.net.backward(&t, g, &mut scratch, true).expect("input gradient requested");
    (v, gx)
}

fn axpy(acc: &mut Tensor<f32>, a: f32, x: &Tensor<f32>) {
    for (o, &v) in acc.data.iter_mut().zip(&x.data) {
        *o += a * v;
    }
}

fn like(t: &Tensor<f32>, data: Vec<f32>) -> Tensor<f32> {
    Tensor::from_vec(t.channels, t.height, t.width, data)
}

/// Trains the reconstruction module and its discriminator on proxies from
/// the frozen stage-1 module.
///
/// Every batch takes one discriminator step and then one generator step on
/// `L_rec` plus, with repairing, `λ_global·L_global + λ_local·L_local`.
pub fn train_stage2_recon(
    data: &Stage2Data,
    frozen_pem: &ProxyExtractionModule,
    cfg: &TrainConfig,
    net: &NetworkConfig,
    mem: &MemoryConfig,
) -> Result<Stage2Outcome> {
    cfg.validate()?;
    net.validate()?;
    mem.validate()?;
    data.check()?;
    if !cfg.ablation.use_si_proxy {
        return Err(Error::Config(
            "reconstruction training needs the proxy bridge (use_si_proxy)".into(),
        ));
    }
    let proxy_channels = data.proxies[0].channels;
    if cfg.recon_train_input == ReconTrainInput::Predicted && frozen_pem.out_channels() != proxy_channels {
        return Err(Error::Config("proxy module output does not match the proxy channels".into()));
    }

    let spec = EncoderSpec {
        in_channels: proxy_channels,
        base_channels: net.base_channels,
        n_downsamples: net.n_downsamples,
        latent_dim: mem.dim,
    };
    let mut rng = stream(cfg.seed, STREAM_INIT, 1);
    let encoder = Encoder::new(spec, &mut rng);
    let decoder = Decoder::new(spec.decoder(data.images[0].channels), &mut rng);
    let mut irm = ImageReconstructionModule::new(encoder, decoder)?;
    let mut disc = Discriminator::new(
        DiscriminatorSpec {
            in_channels: data.images[0].channels,
            base_channels: net.disc_base_channels,
            n_layers: net.disc_layers,
        },
        &mut rng,
    );
    irm.encoder.check_input(&data.proxies[0])?;
    disc.logits(&data.images[0])?;

    let w = cfg.weights;
    let repairing = cfg.ablation.use_repairing;
    let adversarial = w.lambda_g > 0.0;
    let n = data.images.len();
    let mut enc_opt = adam_for(&irm.encoder.net, cfg);
    let mut dec_opt = adam_for(&irm.decoder.net, cfg);
    let mut disc_opt = adam_for(&disc.net, cfg);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let (mut rec_sum, mut global_sum, mut local_sum, mut d_sum) = (0.0, 0.0, 0.0, 0.0);
        let (mut d_correct, mut d_total) = (0usize, 0usize);
        for (b, batch) in epoch_batches(n, cfg.batch_size, cfg.seed, 2, epoch).iter().enumerate() {
            let pseudo_inputs = if repairing {
                batch
                    .iter()
                    .map(|&i| {
                        let mut r = stream(cfg.seed, STREAM_PAPC, ((epoch as u64) << 32) | i as u64);
                        let j = match cfg.papc_source {
                            PapcSource::Itself => i,
                            PapcSource::Other if n == 1 => i,
                            PapcSource::Other => {
                                let j = r.random_range(0..n - 1);
                                if j >= i {
                                    j + 1
                                } else {
                                    j
                                }
                            }
                        };
                        construct_pseudo_proxy(&data.proxies[i], &data.paste[j], &data.ids[j], &mut r)
                            .map(Some)
                    })
                    .collect::<Result<Vec<_>>>()?
            } else {
                vec![None; batch.len()]
            };

            let forwards: Vec<GenForward> = batch
                .par_iter()
                .zip(pseudo_inputs.par_iter())
                .map(|(&i, pp)| GenForward {
                    rec: pair_forward(&irm.encoder.net, &irm.decoder.net, &data.proxies[i]),
                    pseudo: pp.as_ref().map(|p| Pseudo {
                        trace: pair_forward(&irm.encoder.net, &irm.decoder.net, &p.proxy),
                        mask: p.mask.clone(),
                    }),
                })
                .collect();

            if adversarial {
                let steps: Vec<DiscStep> = batch
                    .par_iter()
                    .zip(forwards.par_iter())
                    .map(|(&i, f)| {
                        let image = &data.images[i];
                        let mut grads = disc.net.zero_grads();
                        let mut step = DiscStep {
                            grads: disc.net.zero_grads(),
                            loss: 0.0,
                            correct: 0,
                            total: 0,
                        };
                        disc_term(&disc, image, true, &mut grads, &mut step);
                        disc_term(&disc, &f.rec.dec.output, false, &mut grads, &mut step);
                        if let Some(p) = &f.pseudo {
                            disc_term(&disc, &p.trace.dec.output, false, &mut grads, &mut step);
                            disc_term(&disc, &image.masked(&p.mask), true, &mut grads, &mut step);
                            disc_term(&disc, &p.trace.dec.output.masked(&p.mask), false, &mut grads, &mut step);
                        }
                        step.grads = grads;
                        step
                    })
                    .collect();
                let g = mean_grads(steps.iter().map(|s| &s.grads), disc.net.zero_grads(), steps.len());
                let loss: f64 = steps.iter().map(|s| s.loss).sum();
                if !loss.is_finite() || !g.is_finite() {
                    return Err(Error::Divergence {
                        stage: "recon",
                        epoch,
                        batch: b,
                        detail: format!("non-finite discriminator loss or gradient ({loss})"),
                    });
                }
                disc_opt.step(disc.net.params_mut(), &g);
                d_sum += loss;
                d_correct += steps.iter().map(|s| s.correct).sum::<usize>();
                d_total += steps.iter().map(|s| s.total).sum::<usize>();
            }

            let steps: Vec<GenStep> = batch
                .par_iter()
                .zip(forwards.par_iter())
                .map(|(&i, f)| -> Result<GenStep> {
                    let image = &data.images[i];
                    let mut enc = irm.encoder.net.zero_grads();
                    let mut dec = irm.decoder.net.zero_grads();

                    let out = &f.rec.dec.output;
                    let mut rec = mse(&out.data, &image.data)?;
                    let mut grad = like(out, mse_grad(&out.data, &image.data, 1.0));
                    if adversarial {
                        let (v, g) = adversarial_input_grad(&disc, out, w.lambda_g);
                        rec += w.lambda_g * v;
                        axpy(&mut grad, 1.0, &g);
                    }
                    pair_backward(&irm.encoder.net, &irm.decoder.net, &f.rec, grad, &mut enc, &mut dec);

                    let (mut global, mut local) = (0.0, 0.0);
                    if let Some(p) = &f.pseudo {
                        let out = &p.trace.dec.output;
                        global = mse(&out.data, &image.data)?;
                        let mut g_global = like(out, mse_grad(&out.data, &image.data, 1.0));
                        let masked_out = out.masked(&p.mask);
                        let masked_img = image.masked(&p.mask);
                        local = mse(&masked_out.data, &masked_img.data)?;
                        let mut g_local = like(out, mse_grad(&masked_out.data, &masked_img.data, 1.0));
                        if adversarial {
                            let (v, g) = adversarial_input_grad(&disc, out, w.lambda_g);
                            global += w.lambda_g * v;
                            axpy(&mut g_global, 1.0, &g);
                            let (v, g) = adversarial_input_grad(&disc, &masked_out, w.lambda_g);
                            local += w.lambda_g * v;
                            axpy(&mut g_local, 1.0, &g);
                        }
                        let g_local = g_local.masked(&p.mask);
                        let mut grad = g_global.map(|v| v * w.lambda_global as f32);
                        axpy(&mut grad, w.lambda_local as f32, &g_local);
                        pair_backward(&irm.encoder.net, &irm.decoder.net, &p.trace, grad, &mut enc, &mut dec);
                    }
                    Ok(GenStep {
                        enc,
                        dec,
                        rec,
                        global,
                        local,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let g_enc = mean_grads(steps.iter().map(|s| &s.enc), irm.encoder.net.zero_grads(), steps.len());
            let g_dec = mean_grads(steps.iter().map(|s| &s.dec), irm.decoder.net.zero_grads(), steps.len());
            let rec: f64 = steps.iter().map(|s| s.rec).sum();
            let global: f64 = steps.iter().map(|s| s.global).sum();
            let local: f64 = steps.iter().map(|s| s.local).sum();
            if ![rec, global, local].iter().all(|v| v.is_finite()) || !g_enc.is_finite() || !g_dec.is_finite() {
                return Err(Error::Divergence {
                    stage: "recon",
                    epoch,
                    batch: b,
                    detail: format!("non-finite generator loss or gradient (rec {rec})"),
                });
            }
            enc_opt.step(irm.encoder.net.params_mut(), &g_enc);
            dec_opt.step(irm.decoder.net.params_mut(), &g_dec);
            rec_sum += rec;
            global_sum += global;
            local_sum += local;
        }
        let nf = n as f64;
        let record = EpochRecord {
            epoch,
            main: rec_sum / nf,
            global: repairing.then_some(global_sum / nf),
            local: repairing.then_some(local_sum / nf),
            disc: adversarial.then_some(d_sum / nf),
        };
        if adversarial {
            log::info!(
                "recon epoch {epoch}: loss_rec {:.6} loss_d {:.6} d_acc {:.3}",
                record.main,
                d_sum / nf,
                d_correct as f64 / d_total.max(1) as f64
            );
        } else {
            log::info!("recon epoch {epoch}: loss_rec {:.6}", record.main);
        }
        log.push(record);
    }
    Ok(Stage2Outcome {
        module: irm,
        discriminator: disc,
        log,
    })
}
