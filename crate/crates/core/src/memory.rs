//! Nearest-item memory with exponential-moving-average item updates and the
//! straight-through gradient rule used to train through the lookup.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::Tensor;
use crate::{Error, Result};

/// Floor applied to item counts before dividing.
pub const COUNT_EPS: f64 = 1e-5;

/// An h×w×d latent map, stored as `s = h·w` rows of length `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentFeature {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl LatentFeature {
    pub fn new(height: usize, width: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width * dim {
            return Err(Error::arg("latent feature length does not match its shape"));
        }
        Ok(Self {
            height,
            width,
            dim,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.height * self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// From a channel-major encoder output (d × h × w).
    pub fn from_tensor(t: &Tensor<f32>) -> Self {
        let (d, s) = (t.channels, t.plane());
        let mut values = vec![0.0; s * d];
        for c in 0..d {
            for p in 0..s {
                values[p * d + c] = t.data[c * s + p] as f64;
            }
        }
        Self {
            height: t.height,
            width: t.width,
            dim: d,
            values,
        }
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        let (d, s) = (self.dim, self.rows());
        let mut data = vec![0.0f32; s * d];
        for p in 0..s {
            for c in 0..d {
                data[c * s + p] = self.values[p * d + c] as f32;
            }
        }
        Tensor::from_vec(d, self.height, self.width, data)
    }

    /// Concatenates rows of several features (e.g. a batch) into one `s·n × 1` map.
    pub fn stack(features: &[LatentFeature]) -> Result<Self> {
        let dim = features.first().map(|f| f.dim).unwrap_or(0);
        if features.iter().any(|f| f.dim != dim) {
            return Err(Error::arg("cannot stack latents of different dimension"));
        }
        let values: Vec<f64> = features.iter().flat_map(|f| f.values.iter().copied()).collect();
        let rows = values.len() / dim.max(1);
        Self::new(rows, 1, dim, values)
    }

    pub fn frobenius_distance(&self, other: &LatentFeature) -> Result<f64> {
        if self.values.len() != other.values.len() {
            return Err(Error::arg("latent shapes differ"));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Retrieval {
    pub z_tilde: LatentFeature,
    /// Selected item per row.
    pub assignments: Vec<usize>,
    /// Squared distance from each row to its item.
    pub distances: Vec<f64>,
}

/// `k` items of dimension `d` with EMA counts `N` and accumulators `e`.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    k: usize,
    d: usize,
    gamma: f64,
    items: Vec<f64>,
    counts: Vec<f64>,
    sums: Vec<f64>,
}

impl MemoryBank {
    /// Assembles a bank from raw state; items are recomputed as `e / max(N, ε)`.
    pub fn from_state(k: usize, d: usize, gamma: f64, counts: Vec<f64>, sums: Vec<f64>) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(Error::arg("memory needs k >= 1 and d >= 1"));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::arg(format!("gamma must be in (0, 1), got {gamma}")));
        }
        if counts.len() != k || sums.len() != k * d {
            return Err(Error::arg("memory state has the wrong length"));
        }
        if counts.iter().chain(&sums).any(|v| !v.is_finite()) || counts.iter().any(|&n| n < 0.0) {
            return Err(Error::arg("memory state must be finite with non-negative counts"));
        }
        let mut bank = Self {
            k,
            d,
            gamma,
            items: vec![0.0; k * d],
            counts,
            sums,
        };
        bank.refresh_items();
        Ok(bank)
    }

    fn refresh_items(&mut self) {
        for i in 0..self.k {
            let n = self.counts[i].max(COUNT_EPS);
            for j in 0..self.d {
                self.items[i * self.d + j] = self.sums[i * self.d + j] / n;
            }
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn items(&self) -> &[f64] {
        &self.items
    }

    pub fn item(&self, i: usize) -> &[f64] {
        &self.items[i * self.d..(i + 1) * self.d]
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn sums(&self) -> &[f64] {
        &self.sums
    }

    /// Nearest item (squared Euclidean) for one query; ties go to the lowest index.
    pub fn nearest(&self, query: &[f64]) -> (usize, f64) {
        let mut best = (0usize, f64::INFINITY);
        for j in 0..self.k {
            let d2: f64 = self
                .item(j)
                .iter()
                .zip(query)
                .map(|(m, q)| (q - m) * (q - m))
                .sum();
            if d2 < best.1 {
                best = (j, d2);
            }
        }
        best
    }

    /// Replaces every row of `z` by its nearest item.
    pub fn retrieve(&self, z: &LatentFeature) -> Result<Retrieval> {
        if z.dim != self.d {
            return Err(Error::arg(format!(
                "latent dimension {} does not match memory dimension {}",
                z.dim, self.d
            )));
        }
        let s = z.rows();
        let mut values = Vec::with_capacity(s * self.d);
        let mut assignments = Vec::with_capacity(s);
        let mut distances = Vec::with_capacity(s);
        for i in 0..s {
            let (j, d2) = self.nearest(z.row(i));
            values.extend_from_slice(self.item(j));
            assignments.push(j);
            distances.push(d2);
        }
        Ok(Retrieval {
            z_tilde: LatentFeature::new(z.height, z.width, self.d, values)?,
            assignments,
            distances,
        })
    }

    /// One EMA step:
    /// `N_i ← γ·N_i + (1-γ)·n_i`, `e_i ← γ·e_i + (1-γ)·Σ z`, `m_i = e_i / max(N_i, ε)`.
    pub fn ema_update(&mut self, z: &LatentFeature, assignments: &[usize]) -> Result<()> {
        if z.dim != self.d {
            return Err(Error::arg("latent dimension does not match memory"));
        }
        if assignments.len() != z.rows() {
            return Err(Error::arg(format!(
                "stale assignments: {} entries for {} rows",
                assignments.len(),
                z.rows()
            )));
        }
        if let Some(&bad) = assignments.iter().find(|&&j| j >= self.k) {
            return Err(Error::arg(format!("assignment {bad} out of range")));
        }
        let mut n = vec![0.0f64; self.k];
        let mut total = vec![0.0f64; self.k * self.d];
        for (row, &j) in assignments.iter().enumerate() {
            n[j] += 1.0;
            for (t, v) in total[j * self.d..(j + 1) * self.d].iter_mut().zip(z.row(row)) {
                *t += v;
            }
        }
        let g = self.gamma;
        for i in 0..self.k {
            self.counts[i] = self.counts[i] * g + n[i] * (1.0 - g);
        }
        for (e, t) in self.sums.iter_mut().zip(&total) {
            *e = *e * g + t * (1.0 - g);
        }
        self.refresh_items();
        Ok(())
    }

    /// Squared-distance quantization error of a retrieval, summed over rows.
    pub fn quantization_error(r: &Retrieval) -> f64 {
        r.distances.iter().sum()
    }
}

/// Builds a bank of `k` items of dimension `d`.
///
/// With warm-up rows, items are `k` rows sampled without replacement (with
/// replacement when fewer than `k` rows exist) and `N_i = 1`, `e_i = m_i`;
/// otherwise items are drawn from `U(-1/√d, 1/√d)`.
pub fn init_bank(
    k: usize,
    d: usize,
    gamma: f64,
    seed: u64,
    warmup: Option<&LatentFeature>,
) -> Result<MemoryBank> {
    if k == 0 || d == 0 {
        return Err(Error::arg("memory needs k >= 1 and d >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sums = match warmup {
        Some(z) if z.rows() > 0 => {
            if z.dim != d {
                return Err(Error::arg("warm-up features have the wrong dimension"));
            }
            let s = z.rows();
            let picks: Vec<usize> = if s >= k {
                sample(&mut rng, s, k).into_vec()
            } else {
                (0..k).map(|_| rng.random_range(0..s)).collect()
            };
            picks.iter().flat_map(|&r| z.row(r).iter().copied()).collect()
        }
        _ => {
            let b = 1.0 / (d as f64).sqrt();
            (0..k * d).map(|_| rng.random_range(-b..b)).collect()
        }
    };
    MemoryBank::from_state(k, d, gamma, vec![1.0; k], sums)
}

/// Output of the straight-through substitution `z + stopgrad(z̃ − z)`.
///
/// The forward value is exactly `z̃`; the backward pass hands the downstream
/// gradient to `z` unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct StraightThrough {
    pub value: LatentFeature,
}

impl StraightThrough {
    pub fn backward(&self, grad_output: &[f64]) -> Vec<f64> {
        grad_output.to_vec()
    }

    /// Same rule on a channel-major network gradient.
    pub fn backward_tensor(grad_output: Tensor<f32>) -> Tensor<f32> {
        grad_output
    }
}

pub fn straight_through(z: &LatentFeature, z_tilde: &LatentFeature) -> Result<StraightThrough> {
    if z.height != z_tilde.height || z.width != z_tilde.width || z.dim != z_tilde.dim {
        return Err(Error::arg("straight-through operands differ in shape"));
    }
    Ok(StraightThrough {
        value: z_tilde.clone(),
    })
}
