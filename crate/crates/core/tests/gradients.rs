//! Reverse-mode gradients against central differences in f64.

use std::rc::Rc;

use mmht_core::attention::{init_mmt_block, mmt_block_forward, BlockConfig, WindowKind};
use mmht_core::losses::{gamma_negatives, loss_dec, loss_mae, loss_total, FeatureExtractor, LossConfig};
use mmht_core::model::{init_mmht, init_restorer, mmht_forward, mmt_restorer_forward, ModelConfig, RestorerKind, StageOutputs};
use mmht_core::numeric::{grad_check, GradCheck};
use mmht_core::rng::SplitMix64;
use mmht_core::{Graph, ParamStore, Result, Tensor, Var};

const PRIMITIVE_TOL: f64 = 1e-6;
const COMPOSITE_TOL: f64 = 1e-3;

/// Random inputs drawn from `[lo, hi]` with `|x| >= gap` so that kinked ops
/// are probed away from their kinks.
fn inputs(shapes: &[&[usize]], lo: f64, hi: f64, gap: f64, seed: u64) -> ParamStore<f64> {
    let mut rng = SplitMix64::new(seed);
    let mut store = ParamStore::new(seed);
    for (i, shape) in shapes.iter().enumerate() {
        let t = Tensor::from_fn(shape, |_| loop {
            let v = rng.uniform(lo, hi);
            if v.abs() >= gap {
                break v;
            }
        });
        store.insert(format!("x{i}"), t).unwrap();
    }
    store
}

fn vars<'g>(g: &'g Graph<f64>, s: &ParamStore<f64>) -> Vec<Var<'g, f64>> {
    (0..s.len()).map(|i| g.param(s, &format!("x{i}")).unwrap()).collect()
}

/// Checks `sum(w ∘ f(x...))` for a fixed random `w`.
fn check<F>(store: &ParamStore<f64>, f: F) -> f64
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let probe = Graph::new();
    let out_shape = f(&probe, &vars(&probe, store)).unwrap().shape();
    let w = Tensor::uniform(&out_shape, -1.0, 1.0, &mut SplitMix64::new(99));
    let opts = GradCheck { eps: 1e-5, ..GradCheck::default() };
    grad_check(
        store,
        |g, s| {
            let y = f(g, &vars(g, s))?;
            Ok(y.mul(g.constant(w.clone()))?.sum())
        },
        &opts,
    )
    .unwrap()
}

macro_rules! primitive {
    ($name:ident, $shapes:expr, ($lo:expr, $hi:expr, $gap:expr), |$x:ident| $body:expr) => {
        #[test]
        fn $name() {
            let store = inputs($shapes, $lo, $hi, $gap, stringify!($name).len() as u64);
            let err = check(&store, |_g, $x| $body);
            assert!(err <= PRIMITIVE_TOL, "{}: relative error {err:e}", stringify!($name));
        }
    };
}

primitive!(add, &[&[2, 3], &[2, 3]], (-1.0, 1.0, 0.0), |x| x[0].add(x[1]));
primitive!(sub, &[&[4], &[4]], (-1.0, 1.0, 0.0), |x| x[0].sub(x[1]));
primitive!(mul, &[&[3, 2], &[3, 2]], (-1.0, 1.0, 0.0), |x| x[0].mul(x[1]));
primitive!(div, &[&[5], &[5]], (0.5, 2.0, 0.0), |x| x[0].div(x[1]));
primitive!(add_scalar_and_scale, &[&[2, 2]], (-1.0, 1.0, 0.0), |x| Ok(x[0].add_scalar(0.3).scale(-1.7)));
primitive!(pow, &[&[6]], (0.2, 2.0, 0.0), |x| x[0].pow(2.3));
primitive!(abs, &[&[8]], (-1.0, 1.0, 0.1), |x| Ok(x[0].abs()));
primitive!(relu, &[&[8]], (-1.0, 1.0, 0.1), |x| Ok(x[0].relu()));
primitive!(gelu, &[&[10]], (-3.0, 3.0, 0.0), |x| Ok(x[0].gelu()));
primitive!(clip01, &[&[8]], (-0.4, 0.4, 0.1), |x| Ok(x[0].add_scalar(0.5).scale(2.0).add_scalar(-0.5).clip01()));
primitive!(sum_and_mean, &[&[3, 4]], (-1.0, 1.0, 0.0), |x| x[0].sum().add(x[0].mean()));
primitive!(matmul, &[&[3, 4], &[4, 2]], (-1.0, 1.0, 0.0), |x| x[0].matmul(x[1]));
primitive!(matmul_batched, &[&[2, 3, 4], &[2, 4, 5]], (-1.0, 1.0, 0.0), |x| x[0].matmul(x[1]));
primitive!(matmul_t, &[&[2, 3, 4], &[2, 5, 4]], (-1.0, 1.0, 0.0), |x| x[0].matmul_t(x[1]));
primitive!(softmax_last, &[&[2, 3, 4]], (-2.0, 2.0, 0.0), |x| x[0].softmax(2));
primitive!(softmax_middle, &[&[2, 3, 4]], (-2.0, 2.0, 0.0), |x| x[0].softmax(1));
primitive!(conv1x1, &[&[3, 4, 4], &[5, 3, 1, 1], &[5]], (-1.0, 1.0, 0.0), |x| x[0].conv2d(x[1], Some(x[2])));
primitive!(conv3x3, &[&[2, 5, 4], &[3, 2, 3, 3], &[3]], (-1.0, 1.0, 0.0), |x| x[0].conv2d(x[1], Some(x[2])));
primitive!(conv3x3_no_bias, &[&[2, 3, 3], &[2, 2, 3, 3]], (-1.0, 1.0, 0.0), |x| x[0].conv2d(x[1], None));
primitive!(avg_pool2, &[&[2, 4, 6]], (-1.0, 1.0, 0.0), |x| x[0].avg_pool2());
primitive!(resize_up, &[&[2, 3, 4]], (-1.0, 1.0, 0.0), |x| x[0].resize(6, 8));
primitive!(resize_down, &[&[2, 8, 6]], (-1.0, 1.0, 0.0), |x| x[0].resize(4, 3));
primitive!(layer_norm, &[&[4, 3, 2], &[4], &[4]], (-1.0, 1.0, 0.0), |x| x[0].layer_norm(x[1], x[2]));
primitive!(concat, &[&[2, 2, 3], &[1, 2, 3]], (-1.0, 1.0, 0.0), |x| x[0].concat(x[1]));
primitive!(reshape_permute, &[&[2, 3, 4]], (-1.0, 1.0, 0.0), |x| x[0].reshape(&[6, 4])?.permute(&[1, 0]));
primitive!(pixel_shuffle, &[&[8, 2, 3]], (-1.0, 1.0, 0.0), |x| x[0].pixel_shuffle());
primitive!(pixel_unshuffle, &[&[2, 4, 6]], (-1.0, 1.0, 0.0), |x| x[0].pixel_unshuffle());
primitive!(gather_with_repeats, &[&[5]], (-1.0, 1.0, 0.0), |x| x[0].gather(Rc::new(vec![4, 0, 0, 2, 4, 4]), &[2, 3]));
primitive!(shared_input, &[&[3, 3]], (-1.0, 1.0, 0.0), |x| x[0].mul(x[0])?.add(x[0].matmul(x[0])?));

#[test]
fn mmt_block_both_window_kinds() {
    for (kind, window) in [(WindowKind::Micro, 4), (WindowKind::Macro, 2)] {
        let mut rng = SplitMix64::new(5);
        let mut store = ParamStore::new(5);
        init_mmt_block(&mut store, "b", 8, true, &mut rng).unwrap();
        // Move the norm affines off their trivial init.
        for (name, p) in store.iter_mut() {
            if name.contains("norm") || name.ends_with(".b1") || name.ends_with(".b2") {
                let old = p.value.clone();
                p.value = Tensor::from_fn(old.shape(), |i| old.data()[i] + rng.uniform(-0.2, 0.2));
            }
        }
        store.insert("x", Tensor::uniform(&[8, 8, 8], -1.0, 1.0, &mut rng)).unwrap();
        let cfg = BlockConfig { kind, window, head_dim: 4, output_projection: true };
        let w = Tensor::uniform(&[8, 8, 8], -1.0, 1.0, &mut rng);
        let err = grad_check(
            &store,
            |g, s| {
                let y = mmt_block_forward(g, s, "b", g.param(s, "x")?, &cfg)?;
                Ok(y.mul(g.constant(w.clone()))?.sum())
            },
            &GradCheck { eps: 1e-5, ..GradCheck::default() },
        )
        .unwrap();
        assert!(err <= COMPOSITE_TOL, "{kind:?} block: relative error {err:e}");
    }
}

#[test]
fn mmt_restorer_through_total_loss() {
    let cfg = ModelConfig {
        channels: 8,
        head_dim: 4,
        depths: [1, 1, 1],
        ..ModelConfig::default()
    };
    let mut rng = SplitMix64::new(11);
    let mut store = ParamStore::new(11);
    init_restorer(&mut store, "r", RestorerKind::Mmt, &cfg, &mut rng).unwrap();
    let proj = Tensor::uniform(&[3, 8, 3, 3], -0.1, 0.1, &mut rng);
    *store.get_mut("r.proj.w").unwrap() = proj;
    let input = Tensor::uniform(&[3, 16, 16], 0.0, 1.0, &mut rng);
    let target = Tensor::uniform(&[3, 16, 16], 0.0, 1.0, &mut rng);
    let negs = gamma_negatives(&target, 2, 0.3, 2.8, &mut rng).unwrap();
    let fx = FeatureExtractor::new();
    let lcfg = LossConfig { k: 2, ..LossConfig::default() };
    let err = grad_check(
        &store,
        |g, s| {
            let y = mmt_restorer_forward(g, s, "r", &cfg, g.constant(input.clone()))?;
            let stages = StageOutputs { images: vec![y] };
            Ok(loss_total(g, &stages, &target, &negs, &fx, &lcfg)?.total)
        },
        &GradCheck { eps: 1e-5, max_coords_per_param: Some(2), seed: 3 },
    )
    .unwrap();
    assert!(err <= COMPOSITE_TOL, "restorer: relative error {err:e}");
}

#[test]
fn piecewise_linear_losses_away_from_kinks() {
    let mut rng = SplitMix64::new(21);
    let target = Tensor::uniform(&[3, 8, 8], 0.0, 1.0, &mut rng);
    let mut store = ParamStore::new(0);
    let y = Tensor::from_fn(target.shape(), |i| {
        let offset = rng.uniform(0.01, 0.5);
        if rng.next_f64() < 0.5 {
            target.data()[i] + offset
        } else {
            target.data()[i] - offset
        }
    });
    store.insert("y", y).unwrap();
    let err = grad_check(
        &store,
        |g, s| loss_mae(g.param(s, "y")?, g.constant(target.clone())),
        &GradCheck::default(),
    )
    .unwrap();
    assert!(err <= COMPOSITE_TOL);

    let cfg = ModelConfig { channels: 4, head_dim: 4, levels: 2, arrangement: vec![RestorerKind::Unet; 2], ..ModelConfig::default() };
    let mut params = init_mmht::<f64>(&cfg, 2).unwrap();
    for (name, p) in params.iter_mut() {
        if name.ends_with("proj.w") {
            p.value = Tensor::from_fn(p.value.shape(), |_| rng.uniform(-0.05, 0.05));
        }
    }
    let img = Tensor::uniform(&[3, 16, 16], 0.0, 1.0, &mut rng);
    let err = grad_check(
        &params,
        |g, s| {
            let stages = mmht_forward(g, s, &cfg, &img)?;
            loss_dec(g, &stages, &target_for(&img), 2)
        },
        &GradCheck { eps: 1e-6, max_coords_per_param: Some(2), seed: 1 },
    )
    .unwrap();
    assert!(err <= COMPOSITE_TOL, "loss_dec: relative error {err:e}");
}

fn target_for(img: &Tensor<f64>) -> Tensor<f64> {
    img.map(|v| (1.0 - v) * 0.8 + 0.1)
}
