//! The training loop: ADAM over (rendition, ground truth) pairs with freshly
//! drawn gamma negatives, per-epoch CSV logging and checkpoints.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mmht_core::losses::{gamma_negatives, loss_total, FeatureExtractor, NegativeSet};
use mmht_core::model::{init_mmht, mmht_forward, Checkpoint};
use mmht_core::numeric::ops::{bilinear_resize, flip_horizontal};
use mmht_core::rng::SplitMix64;
use mmht_core::{AdamState, Graph, ImageRgb, ParamStore};
use rayon::prelude::*;

use crate::dataset::Manifest;
use crate::error::{CliError, Result};
use crate::imageio::read_image;
use crate::run_config::RunConfig;

pub const LOSS_LOG: &str = "loss_log.csv";
pub const FINAL_CKPT: &str = "model.ckpt";
pub const LAST_CKPT: &str = "last.ckpt";
pub const RUN_CONFIG: &str = "config.cfg";

#[derive(Debug, Clone)]
pub struct TrainPair {
    pub input: ImageRgb<f32>,
    pub target: ImageRgb<f32>,
}

fn fit(img: ImageRgb<f32>, size: usize) -> Result<ImageRgb<f32>> {
    let (_, h, w) = img.chw()?;
    if h == size && w == size {
        Ok(img)
    } else {
        Ok(bilinear_resize(&img, size, size)?)
    }
}

/// Every rendition of every scene paired with its ground truth, resized to
/// `size x size`.
pub fn load_pairs(manifest: &Manifest, size: usize) -> Result<Vec<TrainPair>> {
    manifest
        .sets
        .par_iter()
        .map(|set| {
            let target = fit(read_image(&set.gt)?, size)?;
            set.renditions
                .iter()
                .map(|r| {
                    Ok(TrainPair {
                        input: fit(read_image(&r.path)?, size)?,
                        target: target.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().flatten().collect())
}

/// Mean loss components over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub mae: f64,
    pub dec: f64,
    pub cr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamStore<f32>,
    pub epochs: Vec<EpochLog>,
    /// Batch-mean total loss of every optimizer step.
    pub step_losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn steps(&self) -> usize {
        self.step_losses.len()
    }
}

pub fn loss_log_csv(epochs: &[EpochLog]) -> String {
    let mut out = String::from("epoch,loss,mae,dec,cr\n");
    for e in epochs {
        writeln!(out, "{},{},{},{},{}", e.epoch, e.loss, e.mae, e.dec, e.cr).unwrap();
    }
    out
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn save_ckpt(cfg: &RunConfig, params: &ParamStore<f32>, step: usize, path: &Path) -> Result<()> {
    Checkpoint::new(cfg.model.clone(), params, step as u64)
        .save(path)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn non_finite(component: &str, value: f64, epoch: usize, step: usize) -> CliError {
    CliError::runtime(format!(
        "loss component `{component}` became {value} at epoch {epoch}, step {step}; lower train.lr or check the inputs"
    ))
}

/// Trains from scratch on `pairs`. With `out_dir`, writes the loss log and
/// checkpoints there after every epoch.
pub fn train_pairs(cfg: &RunConfig, pairs: &[TrainPair], out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(CliError::input("training set is empty"));
    }
    let t = &cfg.train;
    let mut params = init_mmht::<f32>(&cfg.model, t.seed)?;
    let mut adam = AdamState::new(&params);
    let extractor = FeatureExtractor::<f32>::from_config(&cfg.loss)?;
    let mut rng = SplitMix64::new(t.seed).fork(1);
    let mut epochs = Vec::new();
    let mut step_losses = Vec::new();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let inv_batch = 1.0 / t.batch_size as f32;
    let limit = t.max_steps.unwrap_or(usize::MAX);

    'epochs: for epoch in 1..=t.epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.below(i + 1));
        }
        let epoch_gammas: Vec<f64> = (0..cfg.loss.k).map(|_| rng.uniform(cfg.loss.g1, cfg.loss.g2)).collect();
        let mut sums = [0.0f64; 4];
        let mut seen = 0usize;
        for batch in order.chunks(t.batch_size) {
            if step_losses.len() >= limit {
                break;
            }
            params.zero_grads();
            let mut batch_loss = 0.0;
            for &idx in batch {
                let pair = &pairs[idx];
                let (input, target) = if rng.next_f64() < 0.5 {
                    (flip_horizontal(&pair.input)?, flip_horizontal(&pair.target)?)
                } else {
                    (pair.input.clone(), pair.target.clone())
                };
                let negs = if cfg.loss.dynamic_negatives {
                    gamma_negatives(&target, cfg.loss.k, cfg.loss.g1, cfg.loss.g2, &mut rng)?
                } else {
                    NegativeSet::from_gammas(&target, epoch_gammas.clone())?
                };
                let g = Graph::new();
                let stages = mmht_forward(&g, &params, &cfg.model, &input)?;
                let terms = loss_total(&g, &stages, &target, &negs, &extractor, &cfg.loss)?;
                let parts = [terms.total, terms.mae, terms.dec, terms.cr].map(|v| v.item() as f64);
                for (name, v) in ["total", "mae", "dec", "cr"].iter().zip(parts) {
                    if !v.is_finite() {
                        return Err(non_finite(name, v, epoch, step_losses.len() + 1));
                    }
                }
                g.backward_accumulate(terms.total.scale(inv_batch), &mut params)?;
                for (s, v) in sums.iter_mut().zip(parts) {
                    *s += v;
                }
                batch_loss += parts[0];
                seen += 1;
            }
            adam.step(&mut params, t.lr)?;
            step_losses.push(batch_loss / batch.len() as f64);
        }
        if seen == 0 {
            break 'epochs;
        }
        let n = seen as f64;
        let log = EpochLog { epoch, loss: sums[0] / n, mae: sums[1] / n, dec: sums[2] / n, cr: sums[3] / n };
        if let Some(dir) = out_dir {
            eprintln!("epoch {epoch}/{}: loss {:.4} (mae {:.4}, dec {:.4}, cr {:.4})", t.epochs, log.loss, log.mae, log.dec, log.cr);
            epochs.push(log);
            write(&dir.join(LOSS_LOG), &loss_log_csv(&epochs))?;
            let name = if t.keep_epoch_checkpoints { format!("epoch_{epoch:03}.ckpt") } else { LAST_CKPT.into() };
            save_ckpt(cfg, &params, step_losses.len(), &dir.join(name))?;
        } else {
            epochs.push(log);
        }
        if step_losses.len() >= limit {
            break;
        }
    }
    if let Some(dir) = out_dir {
        save_ckpt(cfg, &params, step_losses.len(), &dir.join(FINAL_CKPT))?;
    }
    Ok(TrainOutcome { params, epochs, step_losses })
}

/// `mmht train`: loads the dataset named in the config and trains into
/// `train.out_dir`. Returns the final checkpoint path.
pub fn run(cfg: &RunConfig) -> Result<PathBuf> {
    let manifest = Manifest::load(&cfg.train.dataset_dir)?;
    let pairs = load_pairs(&manifest, cfg.train.image_size)?;
    if let Some(p) = &cfg.loss.extractor_ckpt {
        FeatureExtractor::<f32>::load(p).map_err(|e| CliError::input(format!("{p}: {e}")))?;
    }
    let out = &cfg.train.out_dir;
    std::fs::create_dir_all(out).map_err(|e| CliError::at(out, e))?;
    write(&out.join(RUN_CONFIG), &cfg.to_text())?;
    train_pairs(cfg, &pairs, Some(out))?;
    Ok(out.join(FINAL_CKPT))
}
