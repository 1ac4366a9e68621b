//! Coarse-to-fine pipeline over a Laplacian pyramid.
//!
//! Stage 1 restores the low-pass residual `L_N`. Each later stage receives
//! the previous output upsampled 2x plus the matching band-pass level, so
//! with identity restorers the pipeline reproduces the pyramid synthesis and
//! returns its input.

use crate::error::Result;
use crate::model::config::ModelConfig;
use crate::model::restorer::{init_restorer, restorer_forward, RestorerTrace};
use crate::numeric::{ops, Graph, ParamStore, Var};
use crate::pyramid::laplacian_decompose;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::ImageRgb;

/// Parameter-name prefix of stage `s` (1-based).
pub fn stage_prefix(s: usize) -> String {
    format!("s{s}")
}

/// Fresh parameters for every stage, drawn from `seed`.
pub fn init_mmht<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    use crate::config::KvSection;
    cfg.validate()?;
    let mut rng = SplitMix64::new(seed);
    let mut store = ParamStore::new(seed);
    for (s, &kind) in cfg.arrangement.iter().enumerate() {
        init_restorer(&mut store, &stage_prefix(s + 1), kind, cfg, &mut rng)?;
    }
    Ok(store)
}

/// Per-stage outputs, coarsest first: `Y_(N), ..., Y_(1)`. Values are not
/// clipped.
#[derive(Debug, Clone)]
pub struct StageOutputs<'g, T> {
    pub images: Vec<Var<'g, T>>,
}

impl<'g, T: Scalar> StageOutputs<'g, T> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Output matching Gaussian level `i` (1 = full resolution).
    pub fn level(&self, i: usize) -> Var<'g, T> {
        self.images[self.images.len() - i]
    }

    /// The full-resolution output `Y_(1)`.
    pub fn final_output(&self) -> Var<'g, T> {
        *self.images.last().expect("at least one stage")
    }
}

pub fn mmht_forward<'g, T: Scalar>(
    graph: &'g Graph<T>,
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    img: &ImageRgb<T>,
) -> Result<StageOutputs<'g, T>> {
    mmht_forward_traced(graph, store, cfg, img, None)
}

/// Like [`mmht_forward`], optionally capturing each stage's feature taps.
pub fn mmht_forward_traced<'g, T: Scalar>(
    graph: &'g Graph<T>,
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    img: &ImageRgb<T>,
    mut traces: Option<&mut Vec<RestorerTrace<T>>>,
) -> Result<StageOutputs<'g, T>> {
    let (_, h, w) = img.chw()?;
    cfg.check_input(h, w)?;
    let n = cfg.levels;
    let pyr = if cfg.laplacian {
        Some(laplacian_decompose(img, n)?)
    } else {
        None
    };
    let (ch, cw) = cfg.stage_size(1, h, w);
    let mut x: Var<'g, T> = match &pyr {
        Some(p) => graph.constant(p.level(n).clone()),
        None => graph.constant(ops::bilinear_resize(img, ch, cw)?),
    };
    let mut images = Vec::with_capacity(n);
    for s in 1..=n {
        let mut trace = RestorerTrace::default();
        let y = restorer_forward(
            graph,
            store,
            &stage_prefix(s),
            cfg.arrangement[s - 1],
            cfg,
            x,
            traces.as_ref().map(|_| &mut trace),
        )?;
        if let Some(t) = traces.as_deref_mut() {
            t.push(trace);
        }
        images.push(y);
        if s < n {
            let (nh, nw) = cfg.stage_size(s + 1, h, w);
            let up = y.resize(nh, nw)?;
            x = match &pyr {
                Some(p) => up.add(graph.constant(p.level(n - s).clone()))?,
                None => up,
            };
        }
    }
    Ok(StageOutputs { images })
}
