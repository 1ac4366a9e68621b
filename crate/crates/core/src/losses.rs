//! Training objective: L1 reconstruction, per-level pyramid supervision and
//! a contrastive ratio against gamma-corrupted negatives.

use std::path::Path;

use crate::config::{parse_value, unknown_key, KvSection};
use crate::error::{Error, Result};
use crate::model::checkpoint::Checkpoint;
use crate::model::StageOutputs;
use crate::numeric::{Graph, ParamStore, Tensor, Var};
use crate::pyramid::gaussian_pyramid;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::ImageRgb;

/// Added to the contrastive denominator.
pub const CR_EPS: f64 = 1e-6;

/// Seed of the frozen feature extractor weights.
pub const EXTRACTOR_SEED: u64 = 0x5EED;

const EXTRACTOR_CHANNELS: [usize; 5] = [3, 16, 32, 64, 64];

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Negatives per step.
    pub k: usize,
    pub g1: f64,
    pub g2: f64,
    /// Feature scales used by the contrastive term.
    pub s: usize,
    /// Resample negatives every step; when false they are drawn once per epoch.
    pub dynamic_negatives: bool,
    /// Optional checkpoint holding `fx.*` extractor weights.
    pub extractor_ckpt: Option<String>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 0.6,
            k: 6,
            g1: 0.3,
            g2: 2.8,
            s: 4,
            dynamic_negatives: true,
            extractor_ckpt: None,
        }
    }
}

impl KvSection for LossConfig {
    const PREFIX: &'static str = "loss";

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lambda1" => self.lambda1 = parse_value(key, value)?,
            "lambda2" => self.lambda2 = parse_value(key, value)?,
            "lambda3" => self.lambda3 = parse_value(key, value)?,
            "K" => self.k = parse_value(key, value)?,
            "G1" => self.g1 = parse_value(key, value)?,
            "G2" => self.g2 = parse_value(key, value)?,
            "S" => self.s = parse_value(key, value)?,
            "dynamic_negatives" => self.dynamic_negatives = parse_value(key, value)?,
            "extractor_ckpt" => {
                self.extractor_ckpt = if value.is_empty() { None } else { Some(value.to_string()) }
            }
            _ => return Err(unknown_key(Self::PREFIX, key)),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(String, String)> {
        vec![
            ("lambda1".into(), self.lambda1.to_string()),
            ("lambda2".into(), self.lambda2.to_string()),
            ("lambda3".into(), self.lambda3.to_string()),
            ("K".into(), self.k.to_string()),
            ("G1".into(), self.g1.to_string()),
            ("G2".into(), self.g2.to_string()),
            ("S".into(), self.s.to_string()),
            ("dynamic_negatives".into(), self.dynamic_negatives.to_string()),
            ("extractor_ckpt".into(), self.extractor_ckpt.clone().unwrap_or_default()),
        ]
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("loss.{name} = {v} must be a finite non-negative number"));
            }
        }
        if !(self.g1 > 0.0 && self.g1 < self.g2 && self.g2.is_finite()) {
            return bad(format!("need 0 < loss.G1 < loss.G2, got {} and {}", self.g1, self.g2));
        }
        if self.k == 0 {
            return bad("loss.K must be >= 1".into());
        }
        if self.s == 0 || self.s > EXTRACTOR_CHANNELS.len() - 1 {
            return bad(format!("loss.S = {} must be in 1..={}", self.s, EXTRACTOR_CHANNELS.len() - 1));
        }
        Ok(())
    }
}

/// Frozen `[3x3 conv, GELU, avg_pool2]` stack emitting one feature map per
/// block. Pooling is skipped on maps with an odd side.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor<T> {
    params: ParamStore<T>,
}

impl<T: Scalar> FeatureExtractor<T> {
    pub fn new() -> Self {
        let mut rng = SplitMix64::new(EXTRACTOR_SEED);
        let mut params = ParamStore::new(EXTRACTOR_SEED);
        for (i, pair) in EXTRACTOR_CHANNELS.windows(2).enumerate() {
            let (cin, cout) = (pair[0], pair[1]);
            params
                .insert_glorot(format!("fx.b{i}.w"), &[cout, cin, 3, 3], cin * 9, cout * 9, &mut rng)
                .expect("fresh names");
            params.insert(format!("fx.b{i}.b"), Tensor::zeros(&[cout])).expect("fresh names");
        }
        Self { params }
    }

    /// Takes the `fx.*` entries of `store`; names and shapes must match a
    /// freshly built extractor.
    pub fn from_store(store: &ParamStore<T>) -> Result<Self> {
        let mut fresh = Self::new();
        for (name, p) in fresh.params.iter_mut() {
            let src = store
                .get(name)
                .ok_or_else(|| Error::Config(format!("extractor weights lack `{name}`")))?;
            if src.shape() != p.value.shape() {
                return Err(Error::shapes("feature_extractor", src.shape(), p.value.shape()));
            }
            p.value = src.clone();
        }
        Ok(fresh)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_store(&Checkpoint::load(path)?.params.cast())
    }

    pub fn from_config(cfg: &LossConfig) -> Result<Self> {
        match &cfg.extractor_ckpt {
            Some(path) => Self::load(path),
            None => Ok(Self::new()),
        }
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn weights<'g>(&self, graph: &'g Graph<T>) -> Vec<(Var<'g, T>, Var<'g, T>)> {
        (0..EXTRACTOR_CHANNELS.len() - 1)
            .map(|i| {
                let get = |n: &str| graph.constant(self.params.get(&format!("fx.b{i}.{n}")).expect("built").clone());
                (get("w"), get("b"))
            })
            .collect()
    }

    fn run<'g>(&self, weights: &[(Var<'g, T>, Var<'g, T>)], x: Var<'g, T>, s: usize) -> Result<Vec<Var<'g, T>>> {
        let mut out = Vec::with_capacity(s);
        let mut h = x;
        for &(w, b) in weights.iter().take(s) {
            h = h.conv2d(w, Some(b))?.gelu();
            let (_, hh, ww) = h.value().chw()?;
            if hh % 2 == 0 && ww % 2 == 0 {
                h = h.avg_pool2()?;
            }
            out.push(h);
        }
        Ok(out)
    }

    /// The first `s` feature maps of `x`.
    pub fn features<'g>(&self, graph: &'g Graph<T>, x: Var<'g, T>, s: usize) -> Result<Vec<Var<'g, T>>> {
        self.run(&self.weights(graph), x, s)
    }
}

impl<T: Scalar> Default for FeatureExtractor<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gamma-corrupted copies of a ground-truth image.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSet<T> {
    pub images: Vec<ImageRgb<T>>,
    pub gammas: Vec<f64>,
}

impl<T: Scalar> NegativeSet<T> {
    /// `clip01(target^γ)` for each given exponent.
    pub fn from_gammas(target: &ImageRgb<T>, gammas: Vec<f64>) -> Result<Self> {
        target.chw()?;
        if let Some(v) = target.data().iter().find(|&&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::Contract(format!("negative generator needs values in [0,1], found {v}")));
        }
        let images = gammas
            .iter()
            .map(|&g| {
                let g = T::lit(g);
                target.map(|v| v.powf(g).max(T::zero()).min(T::one()))
            })
            .collect();
        Ok(Self { images, gammas })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Draws `k` exponents from `U[g1, g2]` and applies them to `target`.
pub fn gamma_negatives<T: Scalar>(
    target: &ImageRgb<T>,
    k: usize,
    g1: f64,
    g2: f64,
    rng: &mut SplitMix64,
) -> Result<NegativeSet<T>> {
    if k == 0 || g1.partial_cmp(&g2).is_none_or(|o| o.is_gt()) {
        return Err(Error::Contract(format!("gamma_negatives: need k >= 1 and g1 <= g2, got k={k}, [{g1}, {g2}]")));
    }
    let gammas = (0..k).map(|_| rng.uniform(g1, g2)).collect();
    NegativeSet::from_gammas(target, gammas)
}

fn same_shape<T: Scalar>(op: &'static str, a: Var<'_, T>, b: Var<'_, T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shapes(op, &a.shape(), &b.shape()));
    }
    Ok(())
}

/// `Σ_p |Y(p) − T(p)|`.
pub fn loss_mae<'g, T: Scalar>(y: Var<'g, T>, target: Var<'g, T>) -> Result<Var<'g, T>> {
    same_shape("loss_mae", y, target)?;
    Ok(y.sub(target)?.abs().sum())
}

/// `Σ_{i=2}^{N} 2^{i−2} Σ_p |Y_(i)(p) − T_(i)(p)|` against the Gaussian
/// pyramid of `target`.
pub fn loss_dec<'g, T: Scalar>(
    graph: &'g Graph<T>,
    stages: &StageOutputs<'g, T>,
    target: &ImageRgb<T>,
    n: usize,
) -> Result<Var<'g, T>> {
    if stages.len() != n {
        return Err(Error::dim("loss_dec", format!("{} stage outputs for {n} levels", stages.len())));
    }
    let pyr = gaussian_pyramid(target, n)?;
    let mut total = graph.constant(Tensor::scalar(T::zero()));
    for i in 2..=n {
        let t = graph.constant(pyr.level(i).clone());
        let y = stages.level(i);
        same_shape("loss_dec", y, t)?;
        let weight = T::lit((1u64 << (i - 2)) as f64);
        total = total.add(y.sub(t)?.abs().sum().scale(weight))?;
    }
    Ok(total)
}

/// Feature-space ratio: distance to the target over summed distance to the
/// negatives. Only `y` receives gradients.
pub fn loss_cr<'g, T: Scalar>(
    graph: &'g Graph<T>,
    y: Var<'g, T>,
    target: &ImageRgb<T>,
    negs: &NegativeSet<T>,
    extractor: &FeatureExtractor<T>,
    s: usize,
) -> Result<Var<'g, T>> {
    if negs.is_empty() {
        return Err(Error::Contract("loss_cr needs at least one negative".into()));
    }
    let t = graph.constant(target.clone());
    same_shape("loss_cr", y, t)?;
    let weights = extractor.weights(graph);
    let fy = extractor.run(&weights, y, s)?;
    let distance = |other: Var<'g, T>| -> Result<Var<'g, T>> {
        let fo = extractor.run(&weights, other, s)?;
        let mut d = graph.constant(Tensor::scalar(T::zero()));
        for (a, b) in fy.iter().zip(&fo) {
            d = d.add(a.sub(*b)?.abs().sum())?;
        }
        Ok(d)
    };
    let num = distance(t)?;
    let mut den = graph.constant(Tensor::scalar(T::zero()));
    for img in &negs.images {
        let f = graph.constant(img.clone());
        same_shape("loss_cr", y, f)?;
        den = den.add(distance(f)?)?;
    }
    num.div(den.add_scalar(T::lit(CR_EPS)))
}

/// The weighted total and its unweighted components.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms<'g, T> {
    pub total: Var<'g, T>,
    pub mae: Var<'g, T>,
    pub dec: Var<'g, T>,
    pub cr: Var<'g, T>,
}

/// `λ1·MAE + λ2·DEC + λ3·CR`. The contrastive term is skipped (reported as
/// zero) when `λ3 = 0`.
pub fn loss_total<'g, T: Scalar>(
    graph: &'g Graph<T>,
    stages: &StageOutputs<'g, T>,
    target: &ImageRgb<T>,
    negs: &NegativeSet<T>,
    extractor: &FeatureExtractor<T>,
    cfg: &LossConfig,
) -> Result<LossTerms<'g, T>> {
    let y = stages.final_output();
    let mae = loss_mae(y, graph.constant(target.clone()))?;
    let dec = loss_dec(graph, stages, target, stages.len())?;
    let cr = if cfg.lambda3 > 0.0 {
        loss_cr(graph, y, target, negs, extractor, cfg.s)?
    } else {
        graph.constant(Tensor::scalar(T::zero()))
    };
    let total = mae
        .scale(T::lit(cfg.lambda1))
        .add(dec.scale(T::lit(cfg.lambda2)))?
        .add(cr.scale(T::lit(cfg.lambda3)))?;
    Ok(LossTerms { total, mae, dec, cr })
}
