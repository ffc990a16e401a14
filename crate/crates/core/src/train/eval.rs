use std::fmt::Write as _;

use rayon::prelude::*;

use crate::imaging::{degrade, psnr, DegradationSpec, Image};
use crate::model::{ForwardOptions, Model};
use crate::rng::{derive_seed, Rng};

use super::TrainError;

pub const CSV_HEADER: &str = "blur_r,noise_sigma,jpeg_q,psnr,baseline_psnr,distance";

/// Noise seed for evaluation image `index` under `spec`; independent of the
/// model so reports from different models see identical inputs.
pub fn eval_seed(spec: &DegradationSpec, index: usize) -> u64 {
    let s = derive_seed(spec.blur.to_bits(), spec.noise.to_bits());
    let s = derive_seed(s, spec.jpeg.map_or(0, |q| q as u64 + 1));
    derive_seed(s, index as u64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub spec: DegradationSpec,
    /// Mean PSNR of the restored images.
    pub psnr: f64,
    /// Mean PSNR of the degraded inputs.
    pub input_psnr: f64,
    pub baseline_psnr: Option<f64>,
    /// `baseline_psnr - psnr`.
    pub distance: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

fn fmt_f(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

impl EvalReport {
    /// Fills baseline PSNR and distance from rows of `baseline` with the same spec.
    pub fn with_baseline(mut self, baseline: &EvalReport) -> Self {
        for row in &mut self.rows {
            if let Some(b) = baseline.rows.iter().find(|b| b.spec == row.spec) {
                row.baseline_psnr = Some(b.psnr);
                row.distance = Some(b.psnr - row.psnr);
            }
        }
        self
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let jpeg = r.spec.jpeg.map_or("none".to_string(), |q| q.to_string());
            let opt = |v: Option<f64>| v.map(fmt_f).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.spec.blur,
                r.spec.noise,
                jpeg,
                fmt_f(r.psnr),
                opt(r.baseline_psnr),
                opt(r.distance)
            )
            .expect("write to string");
        }
        out
    }
}

/// Degrades every image under every spec (seeded by [`eval_seed`]), restores it
/// with the matching condition vector and averages PSNR against the clean image.
pub fn evaluate(model: &Model<f32>, dataset: &[Image], specs: &[DegradationSpec]) -> Result<EvalReport, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        model.space.check(spec)?;
        let z = model.space.encode(spec)?;
        let scores = dataset
            .par_iter()
            .enumerate()
            .map(|(i, clean)| -> Result<(f64, f64), TrainError> {
                let degraded = degrade(clean, spec, &mut Rng::new(eval_seed(spec, i)))?;
                let restored = model.restore(&degraded, &z, ForwardOptions::default())?;
                Ok((psnr(&restored, clean)?, psnr(&degraded, clean)?))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let n = scores.len() as f64;
        rows.push(EvalRow {
            spec: *spec,
            psnr: scores.iter().map(|s| s.0).sum::<f64>() / n,
            input_psnr: scores.iter().map(|s| s.1).sum::<f64>() / n,
            baseline_psnr: None,
            distance: None,
        });
    }
    Ok(EvalReport { rows })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepFrame {
    pub z: Vec<f64>,
    pub image: Image,
    pub psnr: Option<f64>,
}

/// Restores `degraded` with `z[dim]` stepped linearly over `[0, 1]` and the other
/// entries taken from `fixed`. With `clean`, each frame carries its PSNR.
pub fn modulation_sweep(
    model: &Model<f32>,
    degraded: &Image,
    clean: Option<&Image>,
    dim: usize,
    steps: usize,
    fixed: &[f64],
    opts: ForwardOptions,
) -> Result<Vec<SweepFrame>, TrainError> {
    let n = model.arch.condition_dim;
    if dim >= n {
        return Err(TrainError::Config(format!("dimension {dim} out of range for {n}-dimensional condition")));
    }
    if steps < 2 {
        return Err(TrainError::Config(format!("steps must be at least 2, got {steps}")));
    }
    if fixed.len() != n {
        return Err(TrainError::Config(format!("fixed condition has {} entries, expected {n}", fixed.len())));
    }
    (0..steps)
        .into_par_iter()
        .map(|k| {
            let mut z = fixed.to_vec();
            z[dim] = k as f64 / (steps - 1) as f64;
            let image = model.restore(degraded, &z, opts)?;
            let psnr = clean.map(|c| psnr(&image, c)).transpose()?;
            Ok(SweepFrame { z, image, psnr })
        })
        .collect()
}
