//! Running a trained checkpoint on arbitrary-size images.

use std::path::{Path, PathBuf};

use mmht_core::model::{mmht_forward_traced, Checkpoint, ModelConfig, RestorerTrace};
use mmht_core::numeric::ops::{clip01, crop, pad_reflect};
use mmht_core::{Graph, ImageRgb, ParamStore, Tensor};

use crate::error::{CliError, Result};
use crate::imageio::{read_image, write_gray, write_image};

/// Stage whose last decoder block is the second heatmap tap.
pub const LATE_TAP_STAGE: usize = 3;

pub const HEATMAP_FILES: [&str; 2] = ["stage1_enc1_first.png", "late_dec1_last.png"];

/// A loaded model ready to correct images of any size.
#[derive(Debug, Clone)]
pub struct Corrector {
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
}

/// A corrected image plus the two feature heatmaps when requested.
#[derive(Debug, Clone)]
pub struct Correction {
    pub image: ImageRgb<f32>,
    /// `(plane, h, w)` for each tap, values in `[0, 1]`.
    pub heatmaps: Option<[(Vec<f32>, usize, usize); 2]>,
}

/// Channel mean of a `[C,H,W]` map, min-max normalized to `[0, 1]`.
pub fn heatmap(features: &Tensor<f32>) -> Result<(Vec<f32>, usize, usize)> {
    let (c, h, w) = features.chw()?;
    let plane = h * w;
    let mut mean = vec![0.0f32; plane];
    for ci in 0..c {
        for (m, v) in mean.iter_mut().zip(&features.data()[ci * plane..(ci + 1) * plane]) {
            *m += v / c as f32;
        }
    }
    let lo = mean.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = mean.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = hi - lo;
    for m in &mut mean {
        *m = if span > 0.0 { (*m - lo) / span } else { 0.0 };
    }
    Ok((mean, h, w))
}

impl Corrector {
    pub fn new(config: ModelConfig, params: ParamStore<f32>) -> Self {
        Self { config, params }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::load(path).map_err(|e| CliError::at(path, e))?;
        Ok(Self::new(ckpt.config, ckpt.params))
    }

    /// Pads to the nearest accepted size, runs the network, crops back and
    /// clips to `[0, 1]`.
    pub fn correct_full(&self, img: &ImageRgb<f32>, dump_features: bool) -> Result<Correction> {
        let (_, h, w) = img.chw()?;
        let (ph, pw) = self.config.padded_size(h, w);
        let padded = pad_reflect(img, ph, pw)?;
        let g = Graph::new();
        let mut traces: Vec<RestorerTrace<f32>> = Vec::new();
        let stages = mmht_forward_traced(&g, &self.params, &self.config, &padded, dump_features.then_some(&mut traces))?;
        let image = clip01(&crop(&stages.final_output().value(), 0, 0, h, w)?);
        let heatmaps = if dump_features {
            let late = LATE_TAP_STAGE.min(self.config.levels) - 1;
            let missing = || CliError::runtime("forward pass did not record feature taps");
            let first = traces[0].first_encoder_block.as_ref().ok_or_else(missing)?;
            let last = traces[late].last_decoder_block.as_ref().ok_or_else(missing)?;
            Some([heatmap(first)?, heatmap(last)?])
        } else {
            None
        };
        Ok(Correction { image, heatmaps })
    }

    pub fn correct(&self, img: &ImageRgb<f32>) -> Result<ImageRgb<f32>> {
        Ok(self.correct_full(img, false)?.image)
    }
}

/// `mmht infer`. Returns the heatmap paths written, if any.
pub fn run(ckpt: &Path, input: &Path, output: &Path, dump_features: Option<&Path>) -> Result<Vec<PathBuf>> {
    let model = Corrector::load(ckpt)?;
    let img = read_image(input)?;
    let result = model
        .correct_full(&img, dump_features.is_some())
        .map_err(|e| match e {
            CliError::Core(inner) => CliError::at(input, inner),
            other => other,
        })?;
    write_image(output, &result.image)?;
    let mut written = Vec::new();
    if let (Some(dir), Some(maps)) = (dump_features, result.heatmaps) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::at(dir, e))?;
        for (name, (plane, h, w)) in HEATMAP_FILES.iter().zip(maps) {
            let path = dir.join(name);
            write_gray(&path, &plane, h, w)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mmht_core::model::{init_mmht, RestorerKind};
    use mmht_core::rng::SplitMix64;

    fn small() -> ModelConfig {
        ModelConfig {
            channels: 8,
            head_dim: 4,
            levels: 3,
            arrangement: vec![RestorerKind::Mmt, RestorerKind::Mmt, RestorerKind::Unet],
            ..ModelConfig::default()
        }
    }

    #[test]
    fn identity_model_preserves_odd_sized_inputs() {
        let cfg = small();
        let model = Corrector::new(cfg.clone(), init_mmht(&cfg, 0).unwrap());
        let img = Tensor::uniform(&[3, 21, 37], 0.0, 1.0, &mut SplitMix64::new(1));
        let out = model.correct(&img).unwrap();
        assert_eq!(out.shape(), img.shape());
        assert!(out.max_abs_diff(&img).unwrap() < 1e-5);
    }

    #[test]
    fn pad_then_crop_is_lossless_for_valid_sizes() {
        let cfg = small();
        let (h, w) = cfg.padded_size(32, 64);
        assert_eq!((h, w), (32, 64));
        let img: Tensor<f32> = Tensor::uniform(&[3, h, w], 0.0, 1.0, &mut SplitMix64::new(2));
        assert_eq!(crop(&pad_reflect(&img, h, w).unwrap(), 0, 0, h, w).unwrap(), img);
    }

    #[test]
    fn two_normalized_heatmaps() {
        let cfg = small();
        let mut params = init_mmht::<f32>(&cfg, 3).unwrap();
        for (name, p) in params.iter_mut() {
            if name.ends_with("proj.w") {
                p.value = p.value.map(|_| 0.01);
            }
        }
        let model = Corrector::new(cfg, params);
        let img = Tensor::uniform(&[3, 32, 32], 0.0, 1.0, &mut SplitMix64::new(4));
        let maps = model.correct_full(&img, true).unwrap().heatmaps.unwrap();
        assert_eq!((maps[0].1, maps[0].2), (8, 8));
        assert_eq!((maps[1].1, maps[1].2), (32, 32));
        for (plane, _, _) in &maps {
            assert!(plane.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn heatmap_of_constant_map_is_zero() {
        let (plane, h, w) = heatmap(&Tensor::full(&[4, 2, 3], 0.7)).unwrap();
        assert_eq!((h, w), (2, 3));
        assert!(plane.iter().all(|&v| v == 0.0));
    }
}
