//! Scoring a corrector on a multi-exposure dataset.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mmht_core::metrics::MetricReport;
use mmht_core::ImageRgb;
use rayon::prelude::*;

use crate::dataset::{ExposureSet, Manifest};
use crate::error::{CliError, Result};
use crate::imageio::read_image;
use crate::infer::Corrector;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub path: PathBuf,
    pub metrics: MetricReport,
}

/// Mean pairwise L1 among the renditions of one scene, before and after
/// correction.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConsistency {
    pub scene: String,
    pub output: f64,
    pub input: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub images: Vec<ImageScore>,
    pub scenes: Vec<SceneConsistency>,
    /// Files that could not be read; the remaining images are still scored.
    pub missing: Vec<PathBuf>,
}

impl EvalReport {
    pub fn mean(&self) -> Option<MetricReport> {
        MetricReport::mean(&self.images.iter().map(|s| s.metrics).collect::<Vec<_>>())
    }

    pub fn mean_consistency(&self) -> Option<(f64, f64)> {
        if self.scenes.is_empty() {
            return None;
        }
        let n = self.scenes.len() as f64;
        let out = self.scenes.iter().map(|s| s.output).sum::<f64>() / n;
        let inp = self.scenes.iter().map(|s| s.input).sum::<f64>() / n;
        Some((out, inp))
    }

    /// One row per scored image plus a trailing `mean` row.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("path,psnr,ssim,cf,delta_cf\n");
        let mut row = |name: &str, m: &MetricReport| {
            writeln!(out, "{name},{},{},{},{}", m.psnr, m.ssim, m.cf, m.delta_cf).unwrap();
        };
        for s in &self.images {
            row(&s.path.to_string_lossy(), &s.metrics);
        }
        if let Some(m) = self.mean() {
            row("mean", &m);
        }
        out
    }

    pub fn consistency_csv(&self) -> String {
        let mut out = String::from("scene,output_consistency,input_consistency\n");
        for s in &self.scenes {
            writeln!(out, "{},{},{}", s.scene, s.output, s.input).unwrap();
        }
        if let Some((o, i)) = self.mean_consistency() {
            writeln!(out, "mean,{o},{i}").unwrap();
        }
        out
    }
}

/// Mean over all pairs of the per-scalar mean absolute difference.
pub fn consistency(images: &[ImageRgb<f32>]) -> Result<f64> {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..images.len() {
        for j in i + 1..images.len() {
            let (a, b) = (&images[i], &images[j]);
            if a.shape() != b.shape() {
                return Err(CliError::input(format!("rendition shapes differ: {:?} vs {:?}", a.shape(), b.shape())));
            }
            let l1: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() as f64).sum();
            total += l1 / a.len() as f64;
            pairs += 1;
        }
    }
    Ok(if pairs == 0 { 0.0 } else { total / pairs as f64 })
}

struct SceneResult {
    images: Vec<ImageScore>,
    consistency: Option<SceneConsistency>,
    missing: Vec<PathBuf>,
}

fn eval_scene<F>(set: &ExposureSet, correct: &F) -> Result<SceneResult>
where
    F: Fn(&ImageRgb<f32>) -> Result<ImageRgb<f32>> + Sync,
{
    let mut missing = Vec::new();
    let gt = match read_image(&set.gt) {
        Ok(img) => img,
        Err(_) => {
            missing.push(set.gt.clone());
            missing.extend(set.renditions.iter().map(|r| r.path.clone()));
            return Ok(SceneResult { images: Vec::new(), consistency: None, missing });
        }
    };
    let (mut inputs, mut outputs, mut images) = (Vec::new(), Vec::new(), Vec::new());
    for r in &set.renditions {
        let Ok(input) = read_image(&r.path) else {
            missing.push(r.path.clone());
            continue;
        };
        let output = correct(&input)?;
        let metrics = MetricReport::compute(&output, &gt).map_err(|e| CliError::at(&r.path, e))?;
        images.push(ImageScore { path: r.path.clone(), metrics });
        inputs.push(input);
        outputs.push(output);
    }
    let consistency = (outputs.len() >= 2)
        .then(|| -> Result<_> {
            Ok(SceneConsistency {
                scene: set.scene.clone(),
                output: consistency(&outputs)?,
                input: consistency(&inputs)?,
            })
        })
        .transpose()?;
    Ok(SceneResult { images, consistency, missing })
}

/// Corrects every rendition with `correct` and scores it against the scene's
/// ground truth. Scenes run in parallel; results keep manifest order.
pub fn evaluate<F>(manifest: &Manifest, correct: F) -> Result<EvalReport>
where
    F: Fn(&ImageRgb<f32>) -> Result<ImageRgb<f32>> + Sync,
{
    let results = manifest
        .sets
        .par_iter()
        .map(|set| eval_scene(set, &correct))
        .collect::<Result<Vec<_>>>()?;
    let mut report = EvalReport::default();
    for r in results {
        report.images.extend(r.images);
        report.scenes.extend(r.consistency);
        report.missing.extend(r.missing);
    }
    Ok(report)
}

/// Path of the per-scene consistency table written next to `out`.
pub fn consistency_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("eval");
    out.with_file_name(format!("{stem}_consistency.csv"))
}

/// `mmht eval`.
pub fn run(ckpt: &Path, data: &Path, out: &Path) -> Result<EvalReport> {
    let model = Corrector::load(ckpt)?;
    let manifest = Manifest::load(data)?;
    let report = evaluate(&manifest, |img| model.correct(img))?;
    for path in &report.missing {
        eprintln!("missing: {}", path.display());
    }
    if report.images.is_empty() {
        return Err(CliError::input(format!("{}: no readable renditions", data.display())));
    }
    let write = |path: &Path, text: String| {
        std::fs::write(path, text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
    };
    write(out, report.metrics_csv())?;
    write(&consistency_path(out), report.consistency_csv())?;
    Ok(report)
}
