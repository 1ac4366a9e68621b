//! Encoder/bottleneck/decoder restorers.
//!
//! Both restorer kinds share one topology:
//!
//! ```text
//! embed 3x3 (3 -> C)
//! enc1 @ C      -> pool + 1x1 (C -> 2C)
//! enc2 @ 2C     -> pool + 1x1 (2C -> 4C)
//! enc3 @ 4C
//! bottle @ 4C
//! dec3: concat enc3, 1x1 (8C -> 4C), blocks
//! dec2: 1x1 (4C -> 8C), pixel shuffle -> 2C, concat enc2, 1x1 (4C -> 2C), blocks
//! dec1: 1x1 (2C -> 4C), pixel shuffle -> C,  concat enc1, 1x1 (2C -> C),  blocks
//! projection 3x3 (C -> 3), added to the input image
//! ```
//!
//! The MMT restorer's unit is a pair of transformer blocks; the U-Net
//! restorer replaces each pair with a residual `[3x3 conv, GELU, 3x3 conv,
//! GELU]` unit.

use crate::attention::{init_mmt_block, mmt_block_forward, BlockConfig};
use crate::error::{Error, Result};
use crate::model::config::{fit_window, ModelConfig, RestorerKind};
use crate::numeric::{Graph, ParamStore, Tensor, Var};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

/// Feature maps captured during a restorer forward pass.
#[derive(Debug, Clone, Default)]
pub struct RestorerTrace<T> {
    /// Output of the first unit of encoder stage 1.
    pub first_encoder_block: Option<Tensor<T>>,
    /// Output of the last unit of decoder stage 1 (the final decoder stage).
    pub last_decoder_block: Option<Tensor<T>>,
}

fn insert_conv<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
    rng: &mut SplitMix64,
) -> Result<()> {
    store.insert_glorot(format!("{name}.w"), &[cout, cin, k, k], cin * k * k, cout * k * k, rng)?;
    store.insert(format!("{name}.b"), Tensor::zeros(&[cout]))
}

fn conv<'g, T: Scalar>(graph: &'g Graph<T>, store: &ParamStore<T>, name: &str, x: Var<'g, T>) -> Result<Var<'g, T>> {
    x.conv2d(
        graph.param(store, &format!("{name}.w"))?,
        Some(graph.param(store, &format!("{name}.b"))?),
    )
}

/// Hidden width of the convolutional unit.
fn unet_hidden(channels: usize) -> usize {
    (channels / 2).max(1)
}

fn init_unit<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    kind: RestorerKind,
    channels: usize,
    cfg: &ModelConfig,
    rng: &mut SplitMix64,
) -> Result<()> {
    match kind {
        RestorerKind::Mmt => {
            for b in 0..2 {
                init_mmt_block(store, &format!("{name}.blk{b}"), channels, cfg.output_projection, rng)?;
            }
            Ok(())
        }
        RestorerKind::Unet => {
            let hidden = unet_hidden(channels);
            insert_conv(store, &format!("{name}.conv1"), channels, hidden, 3, rng)?;
            insert_conv(store, &format!("{name}.conv2"), hidden, channels, 3, rng)
        }
    }
}

fn unit_forward<'g, T: Scalar>(
    graph: &'g Graph<T>,
    store: &ParamStore<T>,
    name: &str,
    kind: RestorerKind,
    cfg: &ModelConfig,
    x: Var<'g, T>,
) -> Result<Var<'g, T>> {
    match kind {
        RestorerKind::Mmt => {
            let (_, h, w) = x.value().chw()?;
            let mut y = x;
            for (b, window_kind) in cfg.order.kinds().into_iter().enumerate() {
                let size = match window_kind {
                    crate::attention::WindowKind::Micro => cfg.micro_window,
                    crate::attention::WindowKind::Macro => cfg.macro_grid,
                };
                let block = BlockConfig {
                    kind: window_kind,
                    window: fit_window(size, h, w),
                    head_dim: cfg.head_dim,
                    output_projection: cfg.output_projection,
                };
                y = mmt_block_forward(graph, store, &format!("{name}.blk{b}"), y, &block)?;
            }
            Ok(y)
        }
        RestorerKind::Unet => {
            let h = conv(graph, store, &format!("{name}.conv1"), x)?.gelu();
            let h = conv(graph, store, &format!("{name}.conv2"), h)?.gelu();
            x.add(h)
        }
    }
}

/// Adds the parameters of one restorer under `prefix`. The projection is
/// zero-initialized, so a fresh restorer is the identity map.
pub fn init_restorer<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    kind: RestorerKind,
    cfg: &ModelConfig,
    rng: &mut SplitMix64,
) -> Result<()> {
    let c = cfg.channels;
    let widths = [c, 2 * c, 4 * c];
    insert_conv(store, &format!("{prefix}.embed"), 3, c, 3, rng)?;
    for (i, &ch) in widths.iter().enumerate() {
        for j in 0..cfg.depths[i] {
            init_unit(store, &format!("{prefix}.enc{}.u{j}", i + 1), kind, ch, cfg, rng)?;
        }
        if i < 2 {
            insert_conv(store, &format!("{prefix}.down{}", i + 1), ch, 2 * ch, 1, rng)?;
        }
    }
    init_unit(store, &format!("{prefix}.bottle.u0"), kind, 4 * c, cfg, rng)?;
    for i in (0..3).rev() {
        let ch = widths[i];
        if i < 2 {
            insert_conv(store, &format!("{prefix}.up{}", i + 1), 2 * ch, 4 * ch, 1, rng)?;
        }
        insert_conv(store, &format!("{prefix}.dec{}.reduce", i + 1), 2 * ch, ch, 1, rng)?;
        for j in 0..cfg.depths[i] {
            init_unit(store, &format!("{prefix}.dec{}.u{j}", i + 1), kind, ch, cfg, rng)?;
        }
    }
    store.insert(format!("{prefix}.proj.w"), Tensor::zeros(&[3, c, 3, 3]))?;
    store.insert(format!("{prefix}.proj.b"), Tensor::zeros(&[3]))
}

/// Runs one restorer on a `[3,h,w]` image; `h` and `w` must be multiples of 4.
pub fn restorer_forward<'g, T: Scalar>(
    graph: &'g Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
    kind: RestorerKind,
    cfg: &ModelConfig,
    img: Var<'g, T>,
    mut trace: Option<&mut RestorerTrace<T>>,
) -> Result<Var<'g, T>> {
    let (ch, h, w) = img.value().chw()?;
    if ch != 3 {
        return Err(Error::dim("restorer", format!("expected 3 channels, got {ch}")));
    }
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::dim("restorer", format!("{h}x{w} is not a multiple of 4")));
    }
    let mut x = conv(graph, store, &format!("{prefix}.embed"), img)?;
    let mut skips = Vec::with_capacity(3);
    for i in 0..3 {
        for j in 0..cfg.depths[i] {
            x = unit_forward(graph, store, &format!("{prefix}.enc{}.u{j}", i + 1), kind, cfg, x)?;
            if i == 0 && j == 0 {
                if let Some(t) = trace.as_deref_mut() {
                    t.first_encoder_block = Some((*x.value()).clone());
                }
            }
        }
        skips.push(x);
        if i < 2 {
            x = conv(graph, store, &format!("{prefix}.down{}", i + 1), x.avg_pool2()?)?;
        }
    }
    x = unit_forward(graph, store, &format!("{prefix}.bottle.u0"), kind, cfg, x)?;
    for i in (0..3).rev() {
        if i < 2 {
            x = conv(graph, store, &format!("{prefix}.up{}", i + 1), x)?.pixel_shuffle()?;
        }
        x = conv(graph, store, &format!("{prefix}.dec{}.reduce", i + 1), x.concat(skips[i])?)?;
        for j in 0..cfg.depths[i] {
            x = unit_forward(graph, store, &format!("{prefix}.dec{}.u{j}", i + 1), kind, cfg, x)?;
        }
    }
    if let Some(t) = trace {
        t.last_decoder_block = Some((*x.value()).clone());
    }
    let proj = conv(graph, store, &format!("{prefix}.proj"), x)?;
    img.add(proj)
}

pub fn mmt_restorer_forward<'g, T: Scalar>(
    graph: &'g Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
    cfg: &ModelConfig,
    img: Var<'g, T>,
) -> Result<Var<'g, T>> {
    restorer_forward(graph, store, prefix, RestorerKind::Mmt, cfg, img, None)
}

pub fn unet_restorer_forward<'g, T: Scalar>(
    graph: &'g Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
    cfg: &ModelConfig,
    img: Var<'g, T>,
) -> Result<Var<'g, T>> {
    restorer_forward(graph, store, prefix, RestorerKind::Unet, cfg, img, None)
}
