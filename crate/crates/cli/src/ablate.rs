//! The ablation matrix: restorer arrangement and pyramid on/off, then
//! attention order with and without the contrastive term. Each row trains a
//! fresh model and scores it on a held-out set.

use std::fmt::Write as _;
use std::path::Path;

use mmht_core::losses::LossConfig;
use mmht_core::metrics::MetricReport;
use mmht_core::model::{AttentionOrder, RestorerKind};

use crate::dataset::Manifest;
use crate::error::{CliError, Result};
use crate::eval::evaluate;
use crate::infer::Corrector;
use crate::run_config::RunConfig;
use crate::train::{load_pairs, train_pairs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Table {
    Arrangement,
    Attention,
}

impl Table {
    fn label(self) -> &'static str {
        match self {
            Table::Arrangement => "arrangement",
            Table::Attention => "attention",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub id: String,
    pub table: Table,
    pub config: RunConfig,
}

fn arrangement_code(arr: &[RestorerKind]) -> String {
    arr.iter().map(|k| if *k == RestorerKind::Mmt { 'M' } else { 'U' }).collect()
}

/// Pyramid disabled with the base arrangement, then `k` leading MMT stages
/// for `k = 0..=N`.
pub fn arrangement_rows(base: &RunConfig) -> Vec<AblationRow> {
    let n = base.model.levels;
    let mut no_lpls = base.clone();
    no_lpls.model.laplacian = false;
    let mut rows = vec![AblationRow { id: "nolpls".into(), table: Table::Arrangement, config: no_lpls }];
    for k in 0..=n {
        let mut cfg = base.clone();
        cfg.model.laplacian = true;
        cfg.model.arrangement = (0..n).map(|s| if s < k { RestorerKind::Mmt } else { RestorerKind::Unet }).collect();
        rows.push(AblationRow { id: arrangement_code(&cfg.model.arrangement), table: Table::Arrangement, config: cfg });
    }
    rows
}

/// Every attention order, first without and then with the contrastive term.
pub fn attention_rows(base: &RunConfig) -> Vec<AblationRow> {
    let cr_weight = if base.loss.lambda3 > 0.0 { base.loss.lambda3 } else { LossConfig::default().lambda3 };
    let mut rows = Vec::new();
    for with_cr in [false, true] {
        for order in AttentionOrder::ALL {
            let mut cfg = base.clone();
            cfg.model.order = order;
            cfg.loss.lambda3 = if with_cr { cr_weight } else { 0.0 };
            let id = format!("{order}-{}", if with_cr { "cr" } else { "nocr" });
            rows.push(AblationRow { id, table: Table::Attention, config: cfg });
        }
    }
    rows
}

/// Resolves `ablate.rows`: `all`, `arrangement`, `attention`, or individual row ids.
pub fn select_rows(base: &RunConfig) -> Result<Vec<AblationRow>> {
    let mut all = arrangement_rows(base);
    all.extend(attention_rows(base));
    let mut picked: Vec<AblationRow> = Vec::new();
    for sel in &base.ablate.rows {
        let matches: Vec<&AblationRow> = match sel.as_str() {
            "all" => all.iter().collect(),
            "arrangement" => all.iter().filter(|r| r.table == Table::Arrangement).collect(),
            "attention" => all.iter().filter(|r| r.table == Table::Attention).collect(),
            id => all.iter().filter(|r| r.id.eq_ignore_ascii_case(id)).collect(),
        };
        if matches.is_empty() {
            let ids: Vec<&str> = all.iter().map(|r| r.id.as_str()).collect();
            return Err(CliError::input(format!("unknown ablation row `{sel}`; known: {}", ids.join(", "))));
        }
        for r in matches {
            if !picked.iter().any(|p| p.id == r.id) {
                picked.push(r.clone());
            }
        }
    }
    Ok(picked)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowResult {
    pub row: AblationRow,
    pub steps: usize,
    pub final_loss: f64,
    pub metrics: Option<MetricReport>,
    pub consistency: Option<f64>,
    /// `ok` or the failure message.
    pub status: String,
}

impl RowResult {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

fn run_row(row: &AblationRow, train: &Manifest, eval: &Manifest) -> Result<RowResult> {
    row.config.validate()?;
    let pairs = load_pairs(train, row.config.train.image_size)?;
    let outcome = train_pairs(&row.config, &pairs, None)?;
    let model = Corrector::new(row.config.model.clone(), outcome.params);
    let report = evaluate(eval, |img| model.correct(img))?;
    let metrics = report.mean();
    if metrics.is_some_and(|m| !m.psnr.is_finite()) {
        return Err(CliError::runtime("non-finite PSNR"));
    }
    Ok(RowResult {
        row: row.clone(),
        steps: outcome.step_losses.len(),
        final_loss: outcome.step_losses.last().copied().unwrap_or(f64::NAN),
        metrics,
        consistency: report.mean_consistency().map(|c| c.0),
        status: "ok".into(),
    })
}

/// Runs every row; a failing row is recorded and the rest continue. Results
/// are ranked by PSNR with failures last.
pub fn run_rows(rows: &[AblationRow], train: &Manifest, eval: &Manifest) -> Vec<RowResult> {
    let mut results: Vec<RowResult> = rows
        .iter()
        .map(|row| {
            eprintln!("ablation row {} ({})", row.id, row.table.label());
            run_row(row, train, eval).unwrap_or_else(|e| {
                eprintln!("ablation row {} failed: {e}", row.id);
                RowResult {
                    row: row.clone(),
                    steps: 0,
                    final_loss: f64::NAN,
                    metrics: None,
                    consistency: None,
                    status: format!("failed: {}", e.to_string().replace([',', '\n'], ";")),
                }
            })
        })
        .collect();
    let key = |r: &RowResult| r.metrics.filter(|_| r.ok()).map_or(f64::NEG_INFINITY, |m| m.psnr);
    results.sort_by(|a, b| key(b).total_cmp(&key(a)));
    results
}

pub fn results_csv(results: &[RowResult]) -> String {
    let mut out = String::from(
        "rank,row,table,arrangement,laplacian,order,lambda3,steps,final_loss,psnr,ssim,cf,delta_cf,consistency,status\n",
    );
    for (i, r) in results.iter().enumerate() {
        let m = &r.row.config.model;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            i + 1,
            r.row.id,
            r.row.table.label(),
            arrangement_code(&m.arrangement),
            m.laplacian,
            m.order,
            r.row.config.loss.lambda3,
            r.steps,
            r.final_loss,
            opt(r.metrics.map(|m| m.psnr)),
            opt(r.metrics.map(|m| m.ssim)),
            opt(r.metrics.map(|m| m.cf)),
            opt(r.metrics.map(|m| m.delta_cf)),
            opt(r.consistency),
            r.status,
        )
        .unwrap();
    }
    out
}

/// `mmht ablate`.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<Vec<RowResult>> {
    let rows = select_rows(cfg)?;
    let train = Manifest::load(&cfg.train.dataset_dir)?;
    let eval = match &cfg.ablate.eval_dir {
        Some(dir) => Manifest::load(dir)?,
        None => train.clone(),
    };
    let results = run_rows(&rows, &train, &eval);
    std::fs::write(out, results_csv(&results)).map_err(|e| CliError::runtime(format!("{}: {e}", out.display())))?;
    if results.iter().all(|r| !r.ok()) {
        return Err(CliError::runtime("every ablation row failed"));
    }
    Ok(results)
}
