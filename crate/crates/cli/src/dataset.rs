//! Multi-exposure datasets: synthesis from well-exposed sources, the manifest
//! format, and a procedural scene generator for tests and demos.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! manifest.csv              scene,ev,gamma,input,gt
//! <scene>/gt.png
//! <scene>/ev-1.5.png ... <scene>/ev+1.5.png
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mmht_core::rng::SplitMix64;
use mmht_core::{ImageRgb, Tensor};
use rayon::prelude::*;

use crate::error::{CliError, Result};
use crate::imageio::{is_image_path, read_image, write_image};

pub const EVS: [f64; 5] = [-1.5, -1.0, 0.0, 1.0, 1.5];
pub const GAMMA_JITTER: (f64, f64) = (0.9, 1.1);
pub const MANIFEST: &str = "manifest.csv";

/// File stem of the rendition at `ev`: `ev-1.5`, `ev0`, `ev+1`, ...
pub fn ev_label(ev: f64) -> String {
    if ev == 0.0 {
        "ev0".into()
    } else {
        format!("ev{ev:+}")
    }
}

/// `clip01(src · 2^ev)^gamma`.
pub fn render_exposure(src: &ImageRgb<f32>, ev: f64, gamma: f64) -> ImageRgb<f32> {
    let gain = 2f32.powf(ev as f32);
    let g = gamma as f32;
    src.map(|v| (v * gain).clamp(0.0, 1.0).powf(g))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendition {
    pub ev: f64,
    pub gamma: f64,
    pub path: PathBuf,
}

/// One scene: its ground truth and the five exposure renditions.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureSet {
    pub scene: String,
    pub gt: PathBuf,
    pub renditions: Vec<Rendition>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub sets: Vec<ExposureSet>,
}

impl Manifest {
    pub fn path(dir: &Path) -> PathBuf {
        dir.join(MANIFEST)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scene,ev,gamma,input,gt\n");
        for set in &self.sets {
            for r in &set.renditions {
                let rel = |p: &Path| p.strip_prefix(&self.root).unwrap_or(p).to_string_lossy().into_owned();
                writeln!(out, "{},{},{},{},{}", set.scene, r.ev, r.gamma, rel(&r.path), rel(&set.gt)).unwrap();
            }
        }
        out
    }

    pub fn save(&self) -> Result<()> {
        let path = Self::path(&self.root);
        std::fs::write(&path, self.to_csv()).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
    }

    /// Reads `<dir>/manifest.csv`. Scenes keep their first-seen order.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = Self::path(dir);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::at(&path, e))?;
        let mut sets: Vec<ExposureSet> = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let bad = |what: &str| CliError::at(&path, format!("line {}: {what}", n + 1));
            if f.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            let ev: f64 = f[1].parse().map_err(|_| bad("bad ev"))?;
            let gamma: f64 = f[2].parse().map_err(|_| bad("bad gamma"))?;
            let rendition = Rendition { ev, gamma, path: dir.join(f[3]) };
            match sets.iter_mut().find(|s| s.scene == f[0]) {
                Some(set) => set.renditions.push(rendition),
                None => sets.push(ExposureSet {
                    scene: f[0].to_string(),
                    gt: dir.join(f[4]),
                    renditions: vec![rendition],
                }),
            }
        }
        if sets.is_empty() {
            return Err(CliError::at(&path, "manifest lists no scenes"));
        }
        Ok(Self { root: dir.to_path_buf(), sets })
    }
}

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::at(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_path(p))
        .collect();
    files.sort();
    Ok(files)
}

fn scene_rng(seed: u64, index: usize) -> SplitMix64 {
    SplitMix64::new(seed).fork(index as u64)
}

/// Writes the ground truth and five renditions of every source image.
pub fn synth_data(src_dir: &Path, out_dir: &Path, seed: u64) -> Result<Manifest> {
    let sources = list_images(src_dir)?;
    if sources.is_empty() {
        return Err(CliError::at(src_dir, "no source images (png/ppm)"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::at(out_dir, e))?;
    let sets = sources
        .par_iter()
        .enumerate()
        .map(|(i, src)| {
            let img = read_image(src)?;
            let scene = src.file_stem().and_then(|s| s.to_str()).unwrap_or("scene").to_string();
            let dir = out_dir.join(&scene);
            std::fs::create_dir_all(&dir).map_err(|e| CliError::at(&dir, e))?;
            let gt = dir.join("gt.png");
            write_image(&gt, &img)?;
            let mut rng = scene_rng(seed, i);
            let renditions = EVS
                .iter()
                .map(|&ev| {
                    let gamma = rng.uniform(GAMMA_JITTER.0, GAMMA_JITTER.1);
                    let path = dir.join(format!("{}.png", ev_label(ev)));
                    write_image(&path, &render_exposure(&img, ev, gamma))?;
                    Ok(Rendition { ev, gamma, path })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ExposureSet { scene, gt, renditions })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest { root: out_dir.to_path_buf(), sets };
    manifest.save()?;
    Ok(manifest)
}

/// A smooth, well-exposed synthetic scene: a two-color gradient sky, a few
/// flat-colored discs and boxes, and low-amplitude texture.
pub fn procedural_scene(h: usize, w: usize, seed: u64) -> ImageRgb<f32> {
    let mut rng = SplitMix64::new(seed);
    let mut color = |lo: f64, hi: f64| [0; 3].map(|_| rng.uniform(lo, hi) as f32);
    let top = color(0.35, 0.8);
    let bottom = color(0.15, 0.6);
    let mut shapes = Vec::new();
    let count = 3 + (rng.below(3));
    for _ in 0..count {
        let cy = rng.uniform(0.0, h as f64) as f32;
        let cx = rng.uniform(0.0, w as f64) as f32;
        let r = rng.uniform(0.1, 0.3) as f32 * h.min(w) as f32;
        let is_disc = rng.next_f64() < 0.5;
        let c = [0; 3].map(|_| rng.uniform(0.1, 0.9) as f32);
        shapes.push((cy, cx, r, is_disc, c));
    }
    let (fy, fx, phase) = (rng.uniform(0.1, 0.5) as f32, rng.uniform(0.1, 0.5) as f32, rng.uniform(0.0, std::f64::consts::TAU) as f32);
    let mut out = Tensor::zeros(&[3, h, w]);
    let plane = h * w;
    for y in 0..h {
        let t = y as f32 / (h.max(2) - 1) as f32;
        for x in 0..w {
            let mut px = [0; 3].map(|_| 0.0f32);
            for c in 0..3 {
                px[c] = top[c] * (1.0 - t) + bottom[c] * t;
            }
            for &(cy, cx, r, is_disc, c) in &shapes {
                let (dy, dx) = (y as f32 - cy, x as f32 - cx);
                let inside = if is_disc { dy * dy + dx * dx <= r * r } else { dy.abs() <= r && dx.abs() <= r * 0.7 };
                if inside {
                    px = c;
                }
            }
            let tex = 0.03 * (fy * y as f32 + phase).sin() * (fx * x as f32).cos();
            for (c, v) in px.iter().enumerate() {
                out.data_mut()[c * plane + y * w + x] = (v + tex).clamp(0.02, 0.98);
            }
        }
    }
    out
}

/// Writes `count` procedural scenes `scene_NNN.png` into `dir`.
pub fn write_procedural_sources(dir: &Path, count: usize, size: usize, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::at(dir, e))?;
    (0..count)
        .map(|i| {
            let path = dir.join(format!("scene_{i:03}.png"));
            write_image(&path, &procedural_scene(size, size, seed.wrapping_add(i as u64)))?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels() {
        let labels: Vec<String> = EVS.iter().map(|&e| ev_label(e)).collect();
        assert_eq!(labels, ["ev-1.5", "ev-1", "ev0", "ev+1", "ev+1.5"]);
    }

    #[test]
    fn exposure_rendering_anchors() {
        let src = Tensor::<f32>::from_fn(&[3, 2, 2], |i| [0.6, 0.2, 0.05, 0.9][i % 4]);
        assert_eq!(render_exposure(&src, 0.0, 1.0), src);
        let up = render_exposure(&src, 1.0, 1.0);
        assert_eq!(up.data()[0], 1.0);
        assert!((up.data()[1] - 0.4).abs() < 1e-7);
        // Darkening composition: negative EV and gamma > 1 never brighten.
        let dark = render_exposure(&src, -1.0, 1.05);
        assert!(dark.data().iter().zip(src.data()).all(|(d, s)| d <= s));
    }

    #[test]
    fn synth_layout_and_manifest_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let src = tmp.path().join("src");
        write_procedural_sources(&src, 2, 16, 1).unwrap();
        let out = tmp.path().join("out");
        let m = synth_data(&src, &out, 7).unwrap();
        assert_eq!(m.sets.len(), 2);
        for set in &m.sets {
            assert!(set.gt.is_file());
            assert_eq!(set.renditions.len(), 5);
            for r in &set.renditions {
                assert!(r.path.is_file());
                assert!((GAMMA_JITTER.0..=GAMMA_JITTER.1).contains(&r.gamma));
            }
        }
        assert_eq!(Manifest::load(&out).unwrap(), m);
        let again = synth_data(&src, &tmp.path().join("again"), 7).unwrap();
        assert_eq!(again.to_csv(), m.to_csv());
    }

    #[test]
    fn empty_source_dir_is_input_error() {
        let tmp = tempfile::tempdir().unwrap();
        let err = synth_data(tmp.path(), &tmp.path().join("o"), 0).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn procedural_scenes_are_deterministic_and_in_range() {
        let a = procedural_scene(32, 32, 5);
        assert_eq!(a, procedural_scene(32, 32, 5));
        assert_ne!(a, procedural_scene(32, 32, 6));
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
