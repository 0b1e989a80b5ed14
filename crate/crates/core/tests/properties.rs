use std::collections::HashMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use proxyad_core::imaging::{GrayscaleImage, Label};
use proxyad_core::memory::{straight_through, LatentFeature, MemoryBank, COUNT_EPS};
use proxyad_core::nn::Tensor;
use proxyad_core::papc::{construct_pseudo_proxy, patch_side_range};
use proxyad_core::scoring::{compute_auc, score_image_latent, score_pixel};
use proxyad_core::superpixel::{render_superpixel_image, slic_segment, SuperpixelLabels};
use proxyad_core::training::{loss_repairing, loss_rec, mse, LossWeights};

/// Smooth banded field plus noise, so SLIC has real structure to follow.
fn random_image(h: usize, w: usize, seed: u64) -> GrayscaleImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let freq = rng.random_range(0.05..0.4);
    let phase = rng.random_range(0.0..6.3);
    let noise = rng.random_range(0.0..0.2);
    let px = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            let v = 0.5 + 0.3 * (freq * y + 0.3 * freq * x + phase).sin() + rng.random_range(-noise..=noise);
            v as f32
        })
        .collect();
    GrayscaleImage::from_clamped(h, w, px).unwrap()
}

fn oracle_means(image: &GrayscaleImage, labels: &SuperpixelLabels) -> HashMap<u32, f64> {
    let mut acc: HashMap<u32, (f64, usize)> = HashMap::new();
    for (&l, &v) in labels.labels().iter().zip(image.pixels()) {
        let e = acc.entry(l).or_default();
        e.0 += v as f64;
        e.1 += 1;
    }
    acc.into_iter().map(|(l, (s, n))| (l, s / n as f64)).collect()
}

fn components(labels: &SuperpixelLabels) -> HashMap<u32, usize> {
    let (h, w) = (labels.height(), labels.width());
    let mut seen = vec![false; h * w];
    let mut count: HashMap<u32, usize> = HashMap::new();
    for start in 0..h * w {
        if seen[start] {
            continue;
        }
        let l = labels.labels()[start];
        *count.entry(l).or_default() += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(p) = stack.pop() {
            let (y, x) = (p / w, p % w);
            let mut visit = |q: usize| {
                if !seen[q] && labels.labels()[q] == l {
                    seen[q] = true;
                    stack.push(q);
                }
            };
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
        }
    }
    count
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn superpixel_image_conserves_segment_means(
        seed in any::<u64>(),
        side in prop::sample::select(vec![16usize, 32, 48]),
        n in 4usize..80,
    ) {
        let img = random_image(side, side + 16, seed);
        let labels = slic_segment(&img, n, 10.0, 10).unwrap();
        let si = render_superpixel_image(&img, &labels).unwrap();
        let means = oracle_means(&img, &labels);
        let si_means = oracle_means(&si.pixels, &labels);
        for (l, m) in &means {
            prop_assert!((si_means[l] - m).abs() <= 1e-6, "segment {l}: {} vs {m}", si_means[l]);
        }
        let again = render_superpixel_image(&si.pixels, &labels).unwrap();
        prop_assert_eq!(&again.pixels, &si.pixels);
    }

    #[test]
    fn slic_segments_are_connected_and_deterministic(seed in any::<u64>(), n in 2usize..60) {
        let img = random_image(32, 32, seed);
        let a = slic_segment(&img, n, 10.0, 10).unwrap();
        let b = slic_segment(&img, n, 10.0, 10).unwrap();
        prop_assert_eq!(&a, &b);
        let comps = components(&a);
        prop_assert_eq!(comps.len(), a.n_segments());
        prop_assert!(comps.values().all(|&c| c == 1));
    }
}

fn bank_from(k: usize, d: usize, gamma: f64, rng: &mut ChaCha8Rng, grid: bool) -> MemoryBank {
    let counts: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..3.0)).collect();
    let items: Vec<f64> = (0..k * d)
        .map(|_| {
            if grid {
                rng.random_range(-2i32..=2) as f64
            } else {
                rng.random_range(-1.0..1.0)
            }
        })
        .collect();
    let sums = items
        .iter()
        .enumerate()
        .map(|(i, m)| m * counts[i / d])
        .collect();
    MemoryBank::from_state(k, d, gamma, counts, sums).unwrap()
}

fn exhaustive_nearest(bank: &MemoryBank, q: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for j in 0..bank.k() {
        let d: f64 = bank.item(j).iter().zip(q).map(|(m, v)| (m - v).powi(2)).sum();
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn retrieval_matches_exhaustive_search(
        seed in any::<u64>(),
        k in 1usize..=16,
        d in 1usize..=8,
        rows in 1usize..10,
        grid in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Integer-grid banks collide often, which exercises the tie-break.
        let bank = bank_from(k, d, 0.9, &mut rng, grid);
        let values: Vec<f64> = (0..rows * d)
            .map(|_| if grid { rng.random_range(-2i32..=2) as f64 } else { rng.random_range(-1.5..1.5) })
            .collect();
        let z = LatentFeature::new(rows, 1, d, values).unwrap();
        let r = bank.retrieve(&z).unwrap();
        for i in 0..rows {
            let j = exhaustive_nearest(&bank, z.row(i));
            prop_assert_eq!(r.assignments[i], j);
            prop_assert_eq!(r.z_tilde.row(i), bank.item(j));
        }
    }

    #[test]
    fn ema_step_matches_hand_formula(
        seed in any::<u64>(),
        k in 1usize..=16,
        d in 1usize..=8,
        rows in 1usize..12,
        gamma in 0.5f64..0.999,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bank = bank_from(k, d, gamma, &mut rng, false);
        let before = bank.clone();
        let values: Vec<f64> = (0..rows * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z = LatentFeature::new(rows, 1, d, values).unwrap();
        let assign = bank.retrieve(&z).unwrap().assignments;
        bank.ema_update(&z, &assign).unwrap();
        for i in 0..k {
            let members: Vec<usize> = (0..rows).filter(|&r| assign[r] == i).collect();
            let n = gamma * before.counts()[i] + (1.0 - gamma) * members.len() as f64;
            prop_assert!((bank.counts()[i] - n).abs() <= 1e-9);
            for c in 0..d {
                let s: f64 = members.iter().map(|&r| z.row(r)[c]).sum();
                let e = gamma * before.sums()[i * d + c] + (1.0 - gamma) * s;
                let m = e / n.max(COUNT_EPS);
                prop_assert!((bank.sums()[i * d + c] - e).abs() <= 1e-9);
                prop_assert!((bank.item(i)[c] - m).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn straight_through_is_exact_forward_and_identity_backward(
        seed in any::<u64>(),
        k in 1usize..=16,
        d in 1usize..=8,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bank = bank_from(k, d, 0.9, &mut rng, false);
        let z = LatentFeature::new(2, 2, d, (0..4 * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let r = bank.retrieve(&z).unwrap();
        let st = straight_through(&z, &r.z_tilde).unwrap();
        prop_assert_eq!(&st.value, &r.z_tilde);
        // Loss ½‖out‖² has gradient out = z̃ at the output.
        let out_grad: Vec<f64> = (0..4).flat_map(|i| st.value.row(i).to_vec()).collect();
        let dz = st.backward(&out_grad);
        for (g, t) in dz.iter().zip(&out_grad) {
            prop_assert!((g - t).abs() <= 1e-6);
        }
    }
}

fn brute_auc(scores: &[(f64, Label)]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for &(a, la) in scores {
        for &(n, ln) in scores {
            if la == Label::Abnormal && ln == Label::Normal {
                pairs += 1.0;
                num += if a > n { 1.0 } else if a == n { 0.5 } else { 0.0 };
            }
        }
    }
    num / pairs
}

fn labelled(values: &[i32], abnormal: &[bool]) -> Vec<(f64, Label)> {
    values
        .iter()
        .zip(abnormal)
        .map(|(&v, &a)| (v as f64 / 7.0, if a { Label::Abnormal } else { Label::Normal }))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rank_auc_equals_pair_counting(
        mut values in prop::collection::vec(-20i32..20, 2..=50),
        mut abnormal in prop::collection::vec(any::<bool>(), 2..=50),
    ) {
        let n = values.len().min(abnormal.len());
        values.truncate(n);
        abnormal.truncate(n);
        abnormal[0] = false;
        abnormal[1] = true;
        let s = labelled(&values, &abnormal);
        prop_assert_eq!(compute_auc(&s).unwrap(), brute_auc(&s));
    }

    #[test]
    fn auc_is_invariant_under_increasing_maps(
        values in prop::collection::vec(-20i32..20, 10),
        abnormal in prop::collection::vec(any::<bool>(), 10),
        scale in 0.01f64..100.0,
        shift in -5.0f64..5.0,
    ) {
        let mut abnormal = abnormal;
        abnormal[0] = false;
        abnormal[1] = true;
        let s = labelled(&values, &abnormal);
        let maps: [Box<dyn Fn(f64) -> f64>; 3] = [
            Box::new(|v| scale * v + shift),
            Box::new(|v| v.exp()),
            Box::new(|v| v * v * v + v),
        ];
        let base = compute_auc(&s).unwrap();
        for f in &maps {
            let t: Vec<(f64, Label)> = s.iter().map(|&(v, l)| (f(v), l)).collect();
            prop_assert_eq!(compute_auc(&t).unwrap(), base);
        }
    }
}

fn rand_tensor(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(0.0..1.0)).collect())
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_match_elementwise_recomputation(seed in any::<u64>(), lambda_g in 0.0f64..0.1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (16, 16);
        let rec = rand_tensor(1, h, w, &mut rng);
        let img = rand_tensor(1, h, w, &mut rng);
        let mask: Vec<f32> = (0..h * w).map(|_| (rng.random_range(0..3) == 0) as u8 as f32).collect();
        let dg: Vec<f64> = (0..16).map(|_| rng.random_range(0.01..0.99)).collect();
        let dl: Vec<f64> = (0..16).map(|_| rng.random_range(0.01..0.99)).collect();

        let mut sq = 0.0;
        let mut msq = 0.0;
        for i in 0..h * w {
            let d = rec.data[i] as f64 - img.data[i] as f64;
            sq += d * d;
            let md = (rec.data[i] * mask[i]) as f64 - (img.data[i] * mask[i]) as f64;
            msq += md * md;
        }
        let n = (h * w) as f64;
        let adv = |d: &[f64]| d.iter().map(|p| -p.ln()).sum::<f64>() / d.len() as f64;

        prop_assert!(rel_close(mse(&rec.data, &img.data).unwrap(), sq / n, 1e-6));
        let want_rec = sq / n + lambda_g * adv(&dg);
        prop_assert!(rel_close(loss_rec(&rec, &img, &dg, lambda_g).unwrap(), want_rec, 1e-6));

        let weights = LossWeights { lambda_g, ..LossWeights::default() };
        let r = loss_repairing(&rec, &img, &mask, &dg, &dl, &weights).unwrap();
        let global = sq / n + lambda_g * adv(&dg);
        let local = msq / n + lambda_g * adv(&dl);
        prop_assert!(rel_close(r.global, global, 1e-6));
        prop_assert!(rel_close(r.local, local, 1e-6));
        prop_assert!(rel_close(r.total, 0.25 * global + 0.5 * local, 1e-6));
    }

    #[test]
    fn pseudo_proxy_copies_inside_and_preserves_outside(seed in any::<u64>(), side in 16usize..64, two in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = if two { 2 } else { 1 };
        let base = rand_tensor(c, side, side, &mut rng);
        let src = rand_tensor(c, side, side, &mut rng);
        let p = construct_pseudo_proxy(&base, &src, "src", &mut rng).unwrap();
        let (lo, hi) = patch_side_range(side);
        prop_assert!(p.rect.height >= lo && p.rect.height <= hi);
        prop_assert!(p.rect.width >= lo && p.rect.width <= hi);
        for ch in 0..c {
            for y in 0..side {
                for x in 0..side {
                    let i = (ch * side + y) * side + x;
                    let inside = p.rect.contains(y, x);
                    prop_assert_eq!(p.mask[y * side + x], inside as u8 as f32);
                    let want = if inside { src.data[i] } else { base.data[i] };
                    prop_assert_eq!(p.proxy.data[i].to_bits(), want.to_bits());
                }
            }
        }
        prop_assert!(p.proxy.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn pixel_scores_are_symmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_tensor(1, 16, 16, &mut rng);
        let b = rand_tensor(1, 16, 16, &mut rng);
        prop_assert_eq!(score_pixel(&a, &b).unwrap(), score_pixel(&b, &a).unwrap());
    }
}

#[test]
fn latent_score_of_identical_reconstruction_is_zero() {
    use proxyad_core::networks::{Decoder, Encoder, EncoderSpec, ProxyExtractionModule};
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = EncoderSpec {
        in_channels: 1,
        base_channels: 4,
        n_downsamples: 2,
        latent_dim: 8,
    };
    let enc = Encoder::new(spec, &mut rng);
    let dec = Decoder::new(spec.decoder(1), &mut rng);
    let pem = ProxyExtractionModule::new(enc, dec, None).unwrap();
    let img = rand_tensor(1, 16, 16, &mut rng);
    assert_eq!(score_image_latent(&pem, &img, &img).unwrap(), 0.0);
}
