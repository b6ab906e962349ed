//! Repeated evaluation along one axis: gallery size, λ, or the IoU
//! threshold that admits detections as training crops.

use std::fmt::Write as _;

use ps_data::{sample_protocol, Dataset};
use serde::{Deserialize, Serialize};

use crate::search::{evaluate, EvalSummary, Embedder, GalleryIndex, SearchConfig};
use crate::{EvalError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    GallerySize,
    Lambda,
    IouThreshold,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::GallerySize => "gallery_size",
            SweepAxis::Lambda => "lambda",
            SweepAxis::IouThreshold => "iou_threshold",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gallery_size" => Ok(SweepAxis::GallerySize),
            "lambda" => Ok(SweepAxis::Lambda),
            "iou_threshold" => Ok(SweepAxis::IouThreshold),
            other => Err(EvalError::Config(format!("unknown sweep axis {other:?}"))),
        }
    }

    /// Rejects values outside the axis's domain.
    pub fn check(self, v: f64) -> Result<()> {
        let ok = match self {
            SweepAxis::GallerySize => v >= 1.0 && v.fract() == 0.0,
            SweepAxis::Lambda => v > 0.0 && v <= 1.0,
            SweepAxis::IouThreshold => v > 0.0 && v < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(EvalError::Config(format!("{} value {v} out of range", self.name())))
        }
    }

    /// The λ grid {0.2, 0.3, ..., 1.0}.
    pub fn lambda_grid() -> Vec<f64> {
        (2..=10).map(|i| i as f64 / 10.0).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub repetition: usize,
    pub summary: EvalSummary,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub repetitions: usize,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

pub const CSV_HEADER: &str = "axis,value,repetition,mAP,top1,top5,top10,n_queries,n_unevaluable,seed";

/// Seed of repetition `rep`, shared by every axis value so that values are
/// compared on the same draws.
pub fn repetition_seed(seed: u64, rep: usize) -> u64 {
    seed.wrapping_add(rep as u64 * 1_000_003)
}

impl SweepReport {
    /// Calls `point(value, repetition, seed)` for every cell of the grid.
    pub fn run(
        axis: SweepAxis,
        values: &[f64],
        repetitions: usize,
        seed: u64,
        mut point: impl FnMut(f64, usize, u64) -> Result<EvalSummary>,
    ) -> Result<Self> {
        if values.is_empty() || repetitions == 0 {
            return Err(EvalError::Config("sweep needs at least one value and one repetition".into()));
        }
        for &v in values {
            axis.check(v)?;
        }
        let mut rows = Vec::with_capacity(values.len() * repetitions);
        for &value in values {
            for repetition in 0..repetitions {
                let s = repetition_seed(seed, repetition);
                rows.push(SweepRow { value, repetition, summary: point(value, repetition, s)?, seed: s });
            }
        }
        Ok(SweepReport { axis, values: values.to_vec(), repetitions, seed, rows })
    }

    /// Mean `(mAP, top1)` per axis value, in axis order.
    pub fn means(&self) -> Vec<(f64, f64, f64)> {
        self.values
            .iter()
            .map(|&v| {
                let rows: Vec<&SweepRow> = self.rows.iter().filter(|r| r.value == v).collect();
                let n = rows.len().max(1) as f64;
                (v, rows.iter().map(|r| r.summary.map).sum::<f64>() / n, rows.iter().map(|r| r.summary.top1).sum::<f64>() / n)
            })
            .collect()
    }

    /// Axis value with the highest mean mAP; the first one on ties.
    pub fn argmax(&self) -> Option<f64> {
        self.means().into_iter().fold(None, |best: Option<(f64, f64)>, (v, m, _)| match best {
            Some((_, bm)) if bm >= m => best,
            _ => Some((v, m)),
        }).map(|(v, _)| v)
    }

    /// CSV text with [`CSV_HEADER`]; metrics printed with six decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let s = &r.summary;
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{},{},{}",
                self.axis.name(),
                r.value,
                r.repetition,
                s.map,
                s.top1,
                s.top5,
                s.top10,
                s.n_queries,
                s.n_unevaluable,
                r.seed
            );
        }
        out
    }

    /// Parses [`SweepReport::to_csv`] output back into rows.
    pub fn rows_from_csv(text: &str) -> Result<Vec<(String, SweepRow)>> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.join(",") != CSV_HEADER {
            return Err(EvalError::Config(format!("unexpected sweep header {:?}", header.join(","))));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let f = |i: usize| -> Result<f64> { rec[i].parse().map_err(|_| EvalError::Config(format!("bad number {:?}", &rec[i]))) };
            let u = |i: usize| -> Result<u64> { rec[i].parse().map_err(|_| EvalError::Config(format!("bad integer {:?}", &rec[i]))) };
            let summary = EvalSummary { map: f(3)?, top1: f(4)?, top5: f(5)?, top10: f(6)?, n_queries: u(7)? as usize, n_unevaluable: u(8)? as usize };
            rows.push((rec[0].to_string(), SweepRow { value: f(1)?, repetition: u(2)? as usize, summary, seed: u(9)? }));
        }
        Ok(rows)
    }
}

/// Gallery-size sweep over a fixed model: every repetition redraws the
/// protocol from the held-out frames with its own seed.
pub fn gallery_sweep(
    dataset: &Dataset,
    index: &GalleryIndex,
    embedder: &dyn Embedder,
    cfg: &SearchConfig,
    sizes: &[usize],
    n_queries: usize,
    repetitions: usize,
    seed: u64,
) -> Result<SweepReport> {
    let test_ids: Vec<String> = dataset.test_frame_ids().into_iter().map(str::to_string).collect();
    let values: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    SweepReport::run(SweepAxis::GallerySize, &values, repetitions, seed, |v, _, s| {
        let protocol = sample_protocol(&dataset.frames, &test_ids, v as usize, n_queries, s)?;
        Ok(evaluate(dataset, &protocol, index, embedder, cfg)?.summary)
    })
}
