//! Test-split evaluation: per-case MAE/PSNR/SSIM and a dataset-level Fréchet
//! distance, written as CSV and JSON.

use std::fs;
use std::path::Path;

use diff2ct_core::metrics::{frechet_distance, mae, psnr, ssim3d, CaseMetrics, EvalReport, FeatureExtractor, RandomConvExtractor, Summary};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::format::{read_volume, write_bytes};
use crate::manifest::{base_dir, load_case, Manifest, Split};
use crate::parallel::map_ordered;
use crate::sample::prediction_path;

pub const CSV_FILE: &str = "metrics.csv";
pub const JSON_FILE: &str = "summary.json";
pub const DEFAULT_FEATURE_SEED: u64 = 2024;

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    /// Test cases without a reconstruction; they are left out of the report.
    pub missing: Vec<String>,
    pub feature_seed: u64,
}

/// One CSV row; `psnr` is written as `inf` for identical volumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub case_id: String,
    pub mae: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
}

pub fn evaluate_dataset(manifest_path: &Path, pred_dir: &Path, feature_seed: u64, threads: usize) -> Result<Evaluation> {
    let manifest = Manifest::load(manifest_path)?;
    let base = base_dir(manifest_path);
    let extractor = RandomConvExtractor::new(feature_seed);
    let tests: Vec<_> = manifest.split(Split::Test).cloned().collect();
    // Per case: metrics plus ground-truth and prediction features, or None when missing.
    type Scored = Option<(CaseMetrics, Vec<f64>, Vec<f64>)>;
    let results = map_ordered(&tests, threads, |rec| -> Result<Scored> {
        let path = prediction_path(pred_dir, &rec.case_id);
        if !path.exists() {
            return Ok(None);
        }
        let gt = load_case(&base, rec)?.ct;
        let pred = read_volume(&path)?;
        let ctx = format!("case `{}`", rec.case_id);
        let row = CaseMetrics {
            case_id: rec.case_id.clone(),
            mae: mae(&gt, &pred).map_err(Error::core(ctx.clone()))?,
            psnr: psnr(&gt, &pred).map_err(Error::core(ctx.clone()))?,
            ssim: ssim3d(&gt, &pred).map_err(Error::core(ctx.clone()))?,
            original_spacing: rec.original_spacing,
        };
        let fg = extractor.extract(gt.grid()).map_err(Error::core(ctx.clone()))?;
        let fp = extractor.extract(pred.grid()).map_err(Error::core(ctx))?;
        Ok(Some((row, fg, fp)))
    });
    let mut rows = Vec::new();
    let mut real = Vec::new();
    let mut generated = Vec::new();
    let mut missing = Vec::new();
    for (rec, r) in tests.iter().zip(results) {
        match r? {
            Some((row, fg, fp)) => {
                rows.push(row);
                real.push(fg);
                generated.push(fp);
            }
            None => missing.push(rec.case_id.clone()),
        }
    }
    let frechet = if rows.len() >= 2 { Some(frechet_distance(&real, &generated).map_err(Error::core("Fréchet distance"))?) } else { None };
    Ok(Evaluation { report: EvalReport::from_rows(rows, frechet), missing, feature_seed })
}

fn number(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(format!("{x}"))
    }
}

fn summary(s: &Summary) -> Value {
    json!({ "mean": number(s.mean), "std": number(s.std) })
}

pub fn summary_json(e: &Evaluation) -> Value {
    let r = &e.report;
    json!({
        "cases": r.rows.len(),
        "missing": e.missing,
        "mae": summary(&r.mae),
        "psnr": summary(&r.psnr),
        "ssim": summary(&r.ssim),
        "frechet": r.frechet.map(number),
        "feature_seed": e.feature_seed,
    })
}

pub fn write_report(e: &Evaluation, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let csv_path = dir.join(CSV_FILE);
    let mut w = csv::Writer::from_path(&csv_path).map_err(Error::csv(&csv_path))?;
    for r in &e.report.rows {
        let [sx, sy, sz] = r.original_spacing;
        w.serialize(CsvRow { case_id: r.case_id.clone(), mae: r.mae, psnr: r.psnr, ssim: r.ssim, sx, sy, sz }).map_err(Error::csv(&csv_path))?;
    }
    w.flush().map_err(Error::io(&csv_path))?;
    let mut text = serde_json::to_string_pretty(&summary_json(e)).expect("summary serializes");
    text.push('\n');
    write_bytes(&dir.join(JSON_FILE), text.as_bytes())
}

pub fn read_report_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path).map_err(Error::csv(path))?;
    r.deserialize().collect::<std::result::Result<Vec<CsvRow>, _>>().map_err(Error::csv(path))
}
