//! The `model.*`, `loss.*`, `train.*` and `ablate.*` sections of a run file.

use std::path::{Path, PathBuf};

use mmht_core::config::{parse_kv, parse_value, render_kv, KvSection};
use mmht_core::losses::LossConfig;
use mmht_core::model::ModelConfig;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Training images are resized to `image_size x image_size`.
    pub image_size: usize,
    pub dataset_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Stops after this many optimizer steps when set.
    pub max_steps: Option<usize>,
    /// Keeps `epoch_NNN.ckpt` files instead of overwriting `last.ckpt`.
    pub keep_epoch_checkpoints: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 150,
            batch_size: 1,
            seed: 0,
            image_size: 64,
            dataset_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
            max_steps: None,
            keep_epoch_checkpoints: false,
        }
    }
}

fn path_string(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

impl KvSection for TrainConfig {
    const PREFIX: &'static str = "train";

    fn set(&mut self, key: &str, value: &str) -> mmht_core::Result<()> {
        match key {
            "lr" => self.lr = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "image_size" => self.image_size = parse_value(key, value)?,
            "dataset_dir" => self.dataset_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "max_steps" => {
                self.max_steps = match value {
                    "" | "none" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "keep_epoch_checkpoints" => self.keep_epoch_checkpoints = parse_value(key, value)?,
            _ => return Err(mmht_core::Error::Config(format!("unknown key `train.{key}`"))),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(String, String)> {
        vec![
            ("lr".into(), self.lr.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("image_size".into(), self.image_size.to_string()),
            ("dataset_dir".into(), path_string(&self.dataset_dir)),
            ("out_dir".into(), path_string(&self.out_dir)),
            ("max_steps".into(), self.max_steps.map_or("none".into(), |s| s.to_string())),
            ("keep_epoch_checkpoints".into(), self.keep_epoch_checkpoints.to_string()),
        ]
    }

    fn validate(&self) -> mmht_core::Result<()> {
        let bad = |m: String| Err(mmht_core::Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("train.lr = {} must be positive", self.lr));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.image_size == 0 {
            return bad("train.epochs, train.batch_size and train.image_size must be >= 1".into());
        }
        if self.max_steps == Some(0) {
            return bad("train.max_steps must be >= 1".into());
        }
        Ok(())
    }
}

/// Which ablation rows to run and where to score them.
#[derive(Debug, Clone, PartialEq)]
pub struct AblateConfig {
    /// Held-out dataset for scoring; defaults to `train.dataset_dir`.
    pub eval_dir: Option<PathBuf>,
    /// `all`, `arrangement`, `attention`, or row ids.
    pub rows: Vec<String>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            eval_dir: None,
            rows: vec!["all".into()],
        }
    }
}

impl KvSection for AblateConfig {
    const PREFIX: &'static str = "ablate";

    fn set(&mut self, key: &str, value: &str) -> mmht_core::Result<()> {
        match key {
            "eval_dir" => self.eval_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
            "rows" => self.rows = value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
            _ => return Err(mmht_core::Error::Config(format!("unknown key `ablate.{key}`"))),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(String, String)> {
        vec![
            ("eval_dir".into(), self.eval_dir.as_deref().map(path_string).unwrap_or_default()),
            ("rows".into(), self.rows.join(",")),
        ]
    }

    fn validate(&self) -> mmht_core::Result<()> {
        if self.rows.is_empty() {
            return Err(mmht_core::Error::Config("ablate.rows is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub ablate: AblateConfig,
}

impl RunConfig {
    /// Parses run-file text. Relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let rest = cfg.model.apply(parse_kv(text)?)?;
        let rest = cfg.loss.apply(rest)?;
        let rest = cfg.train.apply(rest)?;
        let rest = cfg.ablate.apply(rest)?;
        if let Some((k, _)) = rest.first() {
            return Err(CliError::input(format!("unknown key `{k}`")));
        }
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.train.dataset_dir);
        resolve(&mut cfg.train.out_dir);
        if let Some(p) = cfg.ablate.eval_dir.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.loss.extractor_ckpt.take() {
            let mut p = PathBuf::from(p);
            resolve(&mut p);
            cfg.loss.extractor_ckpt = Some(path_string(&p));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::at(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| CliError::at(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.ablate.validate()?;
        let s = self.train.image_size;
        self.model
            .check_input(s, s)
            .map_err(|e| CliError::input(format!("train.image_size = {s} does not fit the model: {e}")))
    }

    pub fn to_text(&self) -> String {
        let mut kv = self.model.to_kv();
        kv.extend(self.loss.to_kv());
        kv.extend(self.train.to_kv());
        kv.extend(self.ablate.to_kv());
        render_kv(&kv)
    }
}
