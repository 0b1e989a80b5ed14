//! Objectives and the two-stage optimisation protocol.
//!
//! Stage 1 fits the proxy extraction module (image → proxy) with the memory
//! updated by EMA after every gradient step. Stage 2 freezes it and fits the
//! reconstruction module (proxy → image) against a patch discriminator, with
//! optional repairing of cut-paste pseudo-anomalies.

mod config;
mod losses;
mod stage1;
mod stage2;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{
    AblationConfig, MemoryConfig, MemoryInit, NetworkConfig, PapcSource, ReconTrainInput, Stage,
    TrainConfig, ABLATION_ROWS,
};
pub use losses::{
    bce_with_logits, discriminator_loss, generator_adversarial, loss_proxy, loss_rec,
    loss_repairing, masked_mse, mse, mse_grad, softplus, LossWeights, RepairingLoss,
};
pub use stage1::{proxy_targets, train_stage1_proxy, Stage1Data, Stage1Outcome};
pub use stage2::{train_stage2_recon, Stage2Data, Stage2Outcome};

use crate::nn::{Adam, Grads, Stack, Tensor, Trace};
use crate::{Error, Result};

/// Mean losses of one epoch. Stage 1 fills only `main` (the proxy loss).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub main: f64,
    pub global: Option<f64>,
    pub local: Option<f64>,
    pub disc: Option<f64>,
}

impl EpochRecord {
    /// Objective that the generator side minimises.
    pub fn total(&self, weights: &LossWeights) -> f64 {
        self.main
            + weights.lambda_global * self.global.unwrap_or(0.0)
            + weights.lambda_local * self.local.unwrap_or(0.0)
    }
}

/// Writes `epoch,<main>,loss_global,loss_local,loss_d` rows; absent values are empty.
pub fn write_loss_csv(path: &Path, main_name: &str, records: &[EpochRecord]) -> Result<()> {
    let err = |e: csv::Error| Error::Io(std::io::Error::other(format!("{}: {e}", path.display())));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["epoch", main_name, "loss_global", "loss_local", "loss_d"]).map_err(err)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        w.write_record([r.epoch.to_string(), r.main.to_string(), opt(r.global), opt(r.local), opt(r.disc)])
            .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

const STREAM_INIT: u64 = 1;
const STREAM_MEMORY: u64 = 2;
const STREAM_ORDER: u64 = 3;
const STREAM_PAPC: u64 = 4;

/// Independent generator for (`seed`, purpose, index).
pub(crate) fn stream(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

/// Encoder + decoder pair trace for one sample.
pub(crate) struct PairTrace {
    pub enc: Trace<f32>,
    pub dec: Trace<f32>,
}

pub(crate) fn pair_forward(enc: &Stack<f32>, dec: &Stack<f32>, x: &Tensor<f32>) -> PairTrace {
    let enc_t = enc.forward_trace(x);
    let dec_t = dec.forward_trace(&enc_t.output);
    PairTrace { enc: enc_t, dec: dec_t }
}

pub(crate) fn pair_backward(
    enc: &Stack<f32>,
    dec: &Stack<f32>,
    trace: &PairTrace,
    grad_out: Tensor<f32>,
    enc_grads: &mut Grads<f32>,
    dec_grads: &mut Grads<f32>,
) {
    let gz = dec
        .backward(&trace.dec, grad_out, dec_grads, true)
        .expect("input gradient requested");
    enc.backward(&trace.enc, gz, enc_grads, false);
}

pub(crate) fn adam_for(net: &Stack<f32>, cfg: &TrainConfig) -> Adam<f32> {
    Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2, &net.params())
}

/// Batches of a seeded permutation of `0..n` for one epoch.
pub(crate) fn epoch_batches(n: usize, batch: usize, seed: u64, stage_tag: u64, epoch: usize) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, STREAM_ORDER + (stage_tag << 8), epoch as u64));
    order.chunks(batch).map(|c| c.to_vec()).collect()
}

/// Folds per-sample gradients in order and averages them.
pub(crate) fn mean_grads<'a>(mut iter: impl Iterator<Item = &'a Grads<f32>>, zero: Grads<f32>, n: usize) -> Grads<f32> {
    let mut acc = zero;
    for g in iter.by_ref() {
        acc.add_assign(g);
    }
    acc.scale(1.0 / n as f32);
    acc
}
