//! Window partitions, multi-head spatial attention and the macro-micro
//! transformer block.
//!
//! Feature maps are `[C, H, W]` variables; one patch is one pixel. A
//! partition gathers the map into `[windows, patches, C]` token sets:
//!
//! * micro windows are contiguous `D×D` tiles in row-major tile order;
//! * macro windows are dilated: window `(a, b)` collects the `G×G` pixels
//!   `(a + p·H/G, b + q·W/G)`, so the `HW/G²` windows tile the map without
//!   overlap while each one spans the whole image.
//!
//! Attention has no positional term, so it is equivariant to permutations of
//! the patches inside a window.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numeric::{Graph, ParamStore, Var};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WindowKind {
    Micro,
    Macro,
}

/// Partitioned feature map: `windows` has shape `[HW/s², s², C]` where `s`
/// is the window size `D` (micro) or grid `G` (macro).
#[derive(Debug, Clone, Copy)]
pub struct WindowSet<'g, T> {
    pub kind: WindowKind,
    pub windows: Var<'g, T>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub size: usize,
}

impl<T: Scalar> WindowSet<'_, T> {
    pub fn num_windows(&self) -> usize {
        self.height * self.width / (self.size * self.size)
    }

    pub fn patches_per_window(&self) -> usize {
        self.size * self.size
    }
}

/// Source pixel `(y, x)` of patch `p` in window `j`.
fn patch_position(kind: WindowKind, h: usize, w: usize, s: usize, j: usize, p: usize) -> (usize, usize) {
    let (py, px) = (p / s, p % s);
    match kind {
        WindowKind::Micro => {
            let tiles_x = w / s;
            ((j / tiles_x) * s + py, (j % tiles_x) * s + px)
        }
        WindowKind::Macro => {
            let (sy, sx) = (h / s, w / s);
            (j / sx + py * sy, j % sx + px * sx)
        }
    }
}

/// Pixel coordinates of every window, in window then patch order.
pub fn window_positions(kind: WindowKind, h: usize, w: usize, s: usize) -> Result<Vec<Vec<(usize, usize)>>> {
    check_divisible(kind, h, w, s)?;
    let per = s * s;
    Ok((0..h * w / per)
        .map(|j| (0..per).map(|p| patch_position(kind, h, w, s, j, p)).collect())
        .collect())
}

fn check_divisible(kind: WindowKind, h: usize, w: usize, s: usize) -> Result<()> {
    if s == 0 || !h.is_multiple_of(s) || !w.is_multiple_of(s) {
        let op = match kind {
            WindowKind::Micro => "micro_partition",
            WindowKind::Macro => "macro_partition",
        };
        return Err(Error::dim(op, format!("window {s} does not divide {h}x{w}")));
    }
    Ok(())
}

/// `index[i]` is the `[C,H,W]` offset feeding element `i` of the partitioned
/// `[windows, patches, C]` layout.
pub fn partition_index(kind: WindowKind, c: usize, h: usize, w: usize, s: usize) -> Result<Vec<usize>> {
    check_divisible(kind, h, w, s)?;
    let per = s * s;
    let mut index = Vec::with_capacity(c * h * w);
    for j in 0..h * w / per {
        for p in 0..per {
            let (y, x) = patch_position(kind, h, w, s, j, p);
            for ch in 0..c {
                index.push((ch * h + y) * w + x);
            }
        }
    }
    Ok(index)
}

fn partition<'g, T: Scalar>(x: Var<'g, T>, kind: WindowKind, s: usize) -> Result<WindowSet<'g, T>> {
    let (c, h, w) = x.value().chw()?;
    let index = partition_index(kind, c, h, w, s)?;
    let windows = x.gather(Rc::new(index), &[h * w / (s * s), s * s, c])?;
    Ok(WindowSet {
        kind,
        windows,
        channels: c,
        height: h,
        width: w,
        size: s,
    })
}

fn unpartition<'g, T: Scalar>(ws: &WindowSet<'g, T>, kind: WindowKind) -> Result<Var<'g, T>> {
    if ws.kind != kind {
        return Err(Error::Contract(format!(
            "unpartition: expected {kind:?} windows, got {:?}",
            ws.kind
        )));
    }
    let expected = [ws.num_windows(), ws.patches_per_window(), ws.channels];
    if ws.windows.shape() != expected {
        return Err(Error::shapes("unpartition", &ws.windows.shape(), &expected));
    }
    let fwd = partition_index(kind, ws.channels, ws.height, ws.width, ws.size)?;
    let mut inv = vec![0; fwd.len()];
    for (dst, &src) in fwd.iter().enumerate() {
        inv[src] = dst;
    }
    ws.windows
        .gather(Rc::new(inv), &[ws.channels, ws.height, ws.width])
}

/// Contiguous `D×D` windows.
pub fn micro_partition<'g, T: Scalar>(x: Var<'g, T>, d: usize) -> Result<WindowSet<'g, T>> {
    partition(x, WindowKind::Micro, d)
}

pub fn micro_unpartition<'g, T: Scalar>(ws: &WindowSet<'g, T>) -> Result<Var<'g, T>> {
    unpartition(ws, WindowKind::Micro)
}

/// Dilated windows of `G×G` pixels with strides `H/G` and `W/G`.
pub fn macro_partition<'g, T: Scalar>(x: Var<'g, T>, g: usize) -> Result<WindowSet<'g, T>> {
    partition(x, WindowKind::Macro, g)
}

pub fn macro_unpartition<'g, T: Scalar>(ws: &WindowSet<'g, T>) -> Result<Var<'g, T>> {
    unpartition(ws, WindowKind::Macro)
}

/// Query/key/value projections, each `[C, C]`: the columns
/// `i·H_d..(i+1)·H_d` form head `i`'s `C×H_d` matrix. `wo` mixes the
/// concatenated heads.
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights<'g, T> {
    pub wq: Var<'g, T>,
    pub wk: Var<'g, T>,
    pub wv: Var<'g, T>,
    pub wo: Option<Var<'g, T>>,
    pub head_dim: usize,
}

impl<'g, T: Scalar> AttentionWeights<'g, T> {
    pub fn from_store(
        graph: &'g Graph<T>,
        store: &ParamStore<T>,
        prefix: &str,
        head_dim: usize,
        output_projection: bool,
    ) -> Result<Self> {
        let p = |n: &str| graph.param(store, &format!("{prefix}.{n}"));
        Ok(Self {
            wq: p("wq")?,
            wk: p("wk")?,
            wv: p("wv")?,
            wo: if output_projection { Some(p("wo")?) } else { None },
            head_dim,
        })
    }
}

pub fn init_attention<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    channels: usize,
    output_projection: bool,
    rng: &mut SplitMix64,
) -> Result<()> {
    for n in ["wq", "wk", "wv"] {
        store.insert_glorot(format!("{prefix}.{n}"), &[channels, channels], channels, channels, rng)?;
    }
    if output_projection {
        store.insert_glorot(format!("{prefix}.wo"), &[channels, channels], channels, channels, rng)?;
    }
    Ok(())
}

/// Multi-head attention inside every window, with weights shared across
/// windows. Returns the attended windows and the `[windows·heads, P, P]`
/// score matrix.
pub fn spatial_attention_with_scores<'g, T: Scalar>(
    ws: &WindowSet<'g, T>,
    aw: &AttentionWeights<'g, T>,
) -> Result<(WindowSet<'g, T>, Var<'g, T>)> {
    let c = ws.channels;
    if aw.head_dim == 0 || !c.is_multiple_of(aw.head_dim) {
        return Err(Error::dim(
            "spatial_attention",
            format!("{c} channels not divisible by head dim {}", aw.head_dim),
        ));
    }
    let heads = c / aw.head_dim;
    let (nw, p, hd) = (ws.num_windows(), ws.patches_per_window(), aw.head_dim);
    let tokens = ws.windows.reshape(&[nw * p, c])?;
    let split_heads = |v: Var<'g, T>| -> Result<Var<'g, T>> {
        v.reshape(&[nw, p, heads, hd])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[nw * heads, p, hd])
    };
    let q = split_heads(tokens.matmul(aw.wq)?)?;
    let k = split_heads(tokens.matmul(aw.wk)?)?;
    let v = split_heads(tokens.matmul(aw.wv)?)?;
    let scale = T::one() / T::lit(hd as f64).sqrt();
    let scores = q.matmul_t(k)?.scale(scale).softmax(2)?;
    let heads_out = scores.matmul(v)?;
    let mut merged = heads_out
        .reshape(&[nw, heads, p, hd])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[nw * p, c])?;
    if let Some(wo) = aw.wo {
        merged = merged.matmul(wo)?;
    }
    let windows = merged.reshape(&[nw, p, c])?;
    Ok((WindowSet { windows, ..*ws }, scores))
}

pub fn spatial_attention<'g, T: Scalar>(
    ws: &WindowSet<'g, T>,
    aw: &AttentionWeights<'g, T>,
) -> Result<WindowSet<'g, T>> {
    spatial_attention_with_scores(ws, aw).map(|(out, _)| out)
}

/// Hyperparameters of one transformer block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockConfig {
    pub kind: WindowKind,
    /// `D` for micro blocks, `G` for macro blocks.
    pub window: usize,
    pub head_dim: usize,
    pub output_projection: bool,
}

pub const FFN_EXPANSION: usize = 2;

pub fn init_mmt_block<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    channels: usize,
    output_projection: bool,
    rng: &mut SplitMix64,
) -> Result<()> {
    let c = channels;
    let hidden = FFN_EXPANSION * c;
    for norm in ["norm1", "norm2"] {
        store.insert(format!("{prefix}.{norm}.gamma"), crate::numeric::Tensor::ones(&[c]))?;
        store.insert(format!("{prefix}.{norm}.beta"), crate::numeric::Tensor::zeros(&[c]))?;
    }
    init_attention(store, &format!("{prefix}.attn"), c, output_projection, rng)?;
    store.insert_glorot(format!("{prefix}.ffn.w1"), &[hidden, c, 1, 1], c, hidden, rng)?;
    store.insert(format!("{prefix}.ffn.b1"), crate::numeric::Tensor::zeros(&[hidden]))?;
    store.insert_glorot(format!("{prefix}.ffn.w2"), &[c, hidden, 1, 1], hidden, c, rng)?;
    store.insert(format!("{prefix}.ffn.b2"), crate::numeric::Tensor::zeros(&[c]))?;
    Ok(())
}

/// Pre-norm transformer block:
/// `y1 = x + unpartition(attn(partition(LN(x))))`,
/// `y  = y1 + W2·GELU(W1·LN(y1))`.
pub fn mmt_block_forward<'g, T: Scalar>(
    graph: &'g Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
    x: Var<'g, T>,
    cfg: &BlockConfig,
) -> Result<Var<'g, T>> {
    let p = |n: &str| graph.param(store, &format!("{prefix}.{n}"));
    let normed = x.layer_norm(p("norm1.gamma")?, p("norm1.beta")?)?;
    let windows = match cfg.kind {
        WindowKind::Micro => micro_partition(normed, cfg.window)?,
        WindowKind::Macro => macro_partition(normed, cfg.window)?,
    };
    let aw = AttentionWeights::from_store(graph, store, &format!("{prefix}.attn"), cfg.head_dim, cfg.output_projection)?;
    let attended = spatial_attention(&windows, &aw)?;
    let y1 = x.add(unpartition(&attended, cfg.kind)?)?;
    let hidden = y1
        .layer_norm(p("norm2.gamma")?, p("norm2.beta")?)?
        .conv2d(p("ffn.w1")?, Some(p("ffn.b1")?))?
        .gelu();
    let ffn = hidden.conv2d(p("ffn.w2")?, Some(p("ffn.b2")?))?;
    y1.add(ffn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tensor;
    use std::collections::HashSet;

    fn random_map(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        Tensor::uniform(&[c, h, w], -1.0, 1.0, &mut SplitMix64::new(seed))
    }

    #[test]
    fn micro_window_zero_is_top_left_tile() {
        let pos = window_positions(WindowKind::Micro, 4, 4, 2).unwrap();
        assert_eq!(pos.len(), 4);
        assert_eq!(pos[0], vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn macro_window_zero_is_dilated() {
        let pos = window_positions(WindowKind::Macro, 4, 4, 2).unwrap();
        assert_eq!(pos.len(), 4);
        let set: HashSet<_> = pos[0].iter().copied().collect();
        assert_eq!(set, HashSet::from([(0, 0), (0, 2), (2, 0), (2, 2)]));
    }

    #[test]
    fn full_size_windows_are_global() {
        for kind in [WindowKind::Micro, WindowKind::Macro] {
            let pos = window_positions(kind, 4, 4, 4).unwrap();
            assert_eq!(pos.len(), 1);
            assert_eq!(pos[0].len(), 16);
        }
    }

    #[test]
    fn partition_matches_enumeration_oracle() {
        let x = random_map(2, 8, 8, 5);
        let g = Graph::new();
        let ws = micro_partition(g.constant(x.clone()), 4).unwrap();
        assert_eq!(ws.windows.shape(), vec![4, 16, 2]);
        let vals = ws.windows.value();
        // Brute force: window (ty, tx), patch (dy, dx), channel ch.
        let mut i = 0;
        for ty in 0..2 {
            for tx in 0..2 {
                for dy in 0..4 {
                    for dx in 0..4 {
                        for ch in 0..2 {
                            let src = (ch * 8 + ty * 4 + dy) * 8 + tx * 4 + dx;
                            assert_eq!(vals.data()[i], x.data()[src]);
                            i += 1;
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn round_trips_are_exact() {
        let x = random_map(3, 8, 12, 11);
        let g = Graph::new();
        let v = g.constant(x.clone());
        let micro = micro_partition(v, 4).unwrap();
        assert_eq!(*micro_unpartition(&micro).unwrap().value(), x);
        let mac = macro_partition(v, 2).unwrap();
        assert_eq!(*macro_unpartition(&mac).unwrap().value(), x);
        let mut a: Vec<f64> = mac.windows.value().data().to_vec();
        let mut b: Vec<f64> = x.data().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
    }

    #[test]
    fn unpartition_kind_mismatch() {
        let g = Graph::new();
        let ws = micro_partition(g.constant(random_map(1, 4, 4, 1)), 2).unwrap();
        assert!(matches!(macro_unpartition(&ws), Err(Error::Contract(_))));
    }

    #[test]
    fn divisibility_errors() {
        let g = Graph::new();
        let v = g.constant(random_map(1, 6, 6, 1));
        assert!(matches!(micro_partition(v, 4), Err(Error::Dimension { .. })));
        assert!(matches!(macro_partition(v, 4), Err(Error::Dimension { .. })));
    }

    fn identity(c: usize) -> Tensor<f64> {
        Tensor::from_fn(&[c, c], |i| if i / c == i % c { 1.0 } else { 0.0 })
    }

    #[test]
    fn single_patch_windows_pass_values_through_identity_weights() {
        let x = random_map(4, 2, 2, 8);
        let g = Graph::new();
        let ws = micro_partition(g.constant(x.clone()), 1).unwrap();
        let rand = Tensor::uniform(&[4, 4], -1.0, 1.0, &mut SplitMix64::new(1));
        let aw = AttentionWeights {
            wq: g.constant(rand.clone()),
            wk: g.constant(rand),
            wv: g.constant(identity(4)),
            wo: Some(g.constant(identity(4))),
            head_dim: 2,
        };
        let out = micro_unpartition(&spatial_attention(&ws, &aw).unwrap()).unwrap();
        assert!(out.value().max_abs_diff(&x).unwrap() < 1e-15);
    }

    #[test]
    fn head_count_and_divisibility() {
        let g = Graph::new();
        let ws = micro_partition(g.constant(random_map(64, 2, 2, 3)), 2).unwrap();
        let w = || g.constant(Tensor::uniform(&[64, 64], -0.1, 0.1, &mut SplitMix64::new(2)));
        let aw = AttentionWeights { wq: w(), wk: w(), wv: w(), wo: None, head_dim: 16 };
        let (_, scores) = spatial_attention_with_scores(&ws, &aw).unwrap();
        // 1 window × 4 heads, 4 patches.
        assert_eq!(scores.shape(), vec![4, 4, 4]);
        for row in scores.value().data().chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let bad = AttentionWeights { head_dim: 24, ..aw };
        assert!(matches!(spatial_attention(&ws, &bad), Err(Error::Dimension { .. })));
    }

    #[test]
    fn block_with_zero_output_projections_is_identity() {
        let mut store = ParamStore::<f64>::new(1);
        init_mmt_block(&mut store, "b", 8, true, &mut SplitMix64::new(1)).unwrap();
        store.zero_where(|n| n.ends_with("attn.wo") || n.ends_with("ffn.w2") || n.ends_with("ffn.b2"));
        let x = random_map(8, 4, 4, 6);
        let g = Graph::new();
        let cfg = BlockConfig { kind: WindowKind::Macro, window: 2, head_dim: 4, output_projection: true };
        let y = mmt_block_forward(&g, &store, "b", g.constant(x.clone()), &cfg).unwrap();
        assert_eq!(*y.value(), x);
    }
}
