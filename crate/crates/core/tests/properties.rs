//! Randomized invariants.

use std::collections::HashSet;

use proptest::prelude::*;

use mmht_core::attention::{
    macro_partition, macro_unpartition, micro_partition, micro_unpartition, spatial_attention, window_positions,
    AttentionWeights, WindowKind,
};
use mmht_core::losses::{gamma_negatives, loss_cr, loss_total, FeatureExtractor, LossConfig, NegativeSet};
use mmht_core::metrics::{colorfulness, delta_cf, psnr, ssim};
use mmht_core::model::{init_mmht, mmht_forward, ModelConfig, RestorerKind, StageOutputs};
use mmht_core::numeric::flops;
use mmht_core::pyramid::{gaussian_pyramid, laplacian_decompose, laplacian_reconstruct};
use mmht_core::rng::SplitMix64;
use mmht_core::{Graph, Tensor};

fn image(h: usize, w: usize, seed: u64) -> Tensor<f64> {
    Tensor::uniform(&[3, h, w], 0.0, 1.0, &mut SplitMix64::new(seed))
}

fn divisors(n: usize) -> Vec<usize> {
    (1..=n).filter(|d| n.is_multiple_of(*d)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pyramid_round_trip(levels in 2usize..=4, hm in 2usize..=8, wm in 2usize..=8, seed in any::<u64>()) {
        let m = 1 << (levels - 1);
        let (h, w) = (hm * m, wm * m);
        let img: Tensor<f32> = image(h, w, seed).cast();
        let back = laplacian_reconstruct(&laplacian_decompose(&img, levels).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&img).unwrap() <= 1e-5);
    }

    #[test]
    fn partitions_cover_once_and_invert(hi in 0usize..3, wi in 0usize..3, seed in any::<u64>()) {
        let (h, w) = ([4, 8, 16][hi], [4, 8, 16][wi]);
        let x: Tensor<f64> = Tensor::uniform(&[2, h, w], -1.0, 1.0, &mut SplitMix64::new(seed));
        let common: Vec<usize> = divisors(h).into_iter().filter(|d| w % d == 0).collect();
        for &s in &common {
            for kind in [WindowKind::Micro, WindowKind::Macro] {
                let windows = window_positions(kind, h, w, s).unwrap();
                let seen: HashSet<(usize, usize)> = windows.iter().flatten().copied().collect();
                prop_assert_eq!(seen.len(), h * w);
                prop_assert_eq!(windows.iter().map(Vec::len).sum::<usize>(), h * w);
                let g = Graph::new();
                let xv = g.constant(x.clone());
                let back = match kind {
                    WindowKind::Micro => micro_unpartition(&micro_partition(xv, s).unwrap()).unwrap(),
                    WindowKind::Macro => macro_unpartition(&macro_partition(xv, s).unwrap()).unwrap(),
                };
                let back = back.value();
                prop_assert_eq!(back.as_ref(), &x);
            }
        }
    }

    #[test]
    fn attention_is_equivariant_to_patch_order(seed in any::<u64>(), macro_kind in any::<bool>()) {
        let mut rng = SplitMix64::new(seed);
        let (c, h, w) = (4, 4, 4);
        let x = Tensor::uniform(&[c, h, w], -1.0, 1.0, &mut rng);
        let ws: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::uniform(&[c, c], -1.0, 1.0, &mut rng)).collect();
        let g = Graph::new();
        let set = if macro_kind {
            macro_partition(g.constant(x), 2).unwrap()
        } else {
            micro_partition(g.constant(x), 2).unwrap()
        };
        let aw = AttentionWeights {
            wq: g.constant(ws[0].clone()),
            wk: g.constant(ws[1].clone()),
            wv: g.constant(ws[2].clone()),
            wo: None,
            head_dim: 2,
        };
        let base = spatial_attention(&set, &aw).unwrap().windows.value();
        // Reverse the patch order inside every window.
        let (nw, p) = (set.num_windows(), set.patches_per_window());
        let perm: Vec<usize> = (0..nw * p * c)
            .map(|i| {
                let (j, q, ch) = (i / (p * c), (i / c) % p, i % c);
                (j * p + (p - 1 - q)) * c + ch
            })
            .collect();
        let permuted = set.windows.gather(perm.clone().into(), &[nw, p, c]).unwrap();
        let moved = mmht_core::attention::WindowSet { windows: permuted, ..set };
        let out = spatial_attention(&moved, &aw).unwrap().windows.value();
        let expect: Vec<f64> = perm.iter().map(|&i| base.data()[i]).collect();
        for (a, b) in out.data().iter().zip(&expect) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn losses_nonnegative(seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let y: Tensor<f64> = Tensor::uniform(&[3, 16, 16], -0.2, 1.2, &mut rng);
        let t = Tensor::uniform(&[3, 16, 16], 0.0, 1.0, &mut rng);
        let negs = gamma_negatives(&t, 3, 0.3, 2.8, &mut rng).unwrap();
        let fx = FeatureExtractor::new();
        let g = Graph::new();
        let pyr = gaussian_pyramid(&y, 2).unwrap();
        let stages = StageOutputs { images: vec![g.constant(pyr.level(2).clone()), g.constant(y.clone())] };
        let cfg = LossConfig { k: 3, ..LossConfig::default() };
        let terms = loss_total(&g, &stages, &t, &negs, &fx, &cfg).unwrap();
        prop_assert!(terms.mae.item() >= 0.0 && terms.dec.item() >= 0.0 && terms.cr.item() >= 0.0);
        prop_assert!(terms.total.item() >= 0.0);
        let cr_t = loss_cr(&g, g.constant(t.clone()), &t, &negs, &fx, 4).unwrap();
        prop_assert_eq!(cr_t.item(), 0.0);
    }

    #[test]
    fn negatives_monotone_in_gamma(seed in any::<u64>(), a in 0.3f64..2.8, b in 0.3f64..2.8) {
        let t: Tensor<f64> = Tensor::uniform(&[3, 4, 4], 0.01, 0.99, &mut SplitMix64::new(seed));
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let n = NegativeSet::from_gammas(&t, vec![lo, hi]).unwrap();
        for (x, y) in n.images[0].data().iter().zip(n.images[1].data()) {
            prop_assert!(x >= y);
        }
    }

    #[test]
    fn metric_symmetries(seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let y: Tensor<f64> = Tensor::uniform(&[3, 16, 8], 0.0, 1.0, &mut rng);
        let t = Tensor::uniform(&[3, 16, 8], 0.0, 1.0, &mut rng);
        prop_assert_eq!(ssim(&y, &t).unwrap(), ssim(&t, &y).unwrap());
        prop_assert!(ssim(&y, &t).unwrap() <= 1.0 + 1e-9);
        prop_assert_eq!(psnr(&y, &t).unwrap(), psnr(&t, &y).unwrap());
        prop_assert_eq!(delta_cf(&y, &t).unwrap(), delta_cf(&t, &y).unwrap());
        // Shuffle pixels consistently across channels.
        let plane = 16 * 8;
        let mut order: Vec<usize> = (0..plane).collect();
        for i in (1..plane).rev() {
            order.swap(i, rng.below(i + 1));
        }
        let shuffled = Tensor::from_fn(&[3, 16, 8], |i| y.data()[(i / plane) * plane + order[i % plane]]);
        prop_assert!((colorfulness(&shuffled).unwrap() - colorfulness(&y).unwrap()).abs() <= 1e-9);
    }
}

#[test]
fn psnr_decreases_with_noise() {
    let img = image(16, 16, 3);
    let mut rng = SplitMix64::new(4);
    let noise: Vec<f64> = (0..img.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let scores: Vec<f64> = [0.01, 0.05, 0.1]
        .iter()
        .map(|&a| {
            let noisy = Tensor::from_fn(img.shape(), |i| img.data()[i] + a * noise[i]);
            psnr(&noisy, &img).unwrap()
        })
        .collect();
    assert!(scores[0] > scores[1] && scores[1] > scores[2], "{scores:?}");
}

#[test]
fn forward_is_finite_on_extreme_inputs() {
    let cfg = ModelConfig { channels: 8, head_dim: 4, levels: 2, arrangement: vec![RestorerKind::Mmt, RestorerKind::Unet], ..ModelConfig::default() };
    let mut store = init_mmht::<f32>(&cfg, 0).unwrap();
    for (name, p) in store.iter_mut() {
        if name.ends_with("proj.w") {
            p.value = p.value.map(|_| 0.05);
        }
    }
    let mut rng = SplitMix64::new(8);
    for case in 0..12 {
        let img: Tensor<f32> = match case % 3 {
            0 => Tensor::zeros(&[3, 16, 16]),
            1 => Tensor::ones(&[3, 16, 16]),
            _ => Tensor::uniform(&[3, 16, 16], 0.0, 1.0, &mut rng),
        };
        let g = Graph::new();
        let out = mmht_forward(&g, &store, &cfg, &img).unwrap();
        assert!(out.images.iter().all(|v| v.value().is_finite()));
    }
}

/// Attention cost per pixel is constant in both window schemes, so total
/// multiply-accumulates grow linearly with area.
#[test]
fn attention_cost_is_linear_in_area() {
    let cfg = ModelConfig { channels: 8, head_dim: 4, levels: 2, arrangement: vec![RestorerKind::Mmt; 2], ..ModelConfig::default() };
    let store = init_mmht::<f32>(&cfg, 0).unwrap();
    let mut per_pixel = Vec::new();
    for side in [32usize, 64, 128] {
        let img: Tensor<f32> = image(side, side, 1).cast();
        flops::reset();
        let g = Graph::new();
        mmht_forward(&g, &store, &cfg, &img).unwrap();
        per_pixel.push(flops::count() as f64 / (side * side) as f64);
    }
    for w in per_pixel.windows(2) {
        assert!((w[1] / w[0] - 1.0).abs() < 0.05, "{per_pixel:?}");
    }
}
