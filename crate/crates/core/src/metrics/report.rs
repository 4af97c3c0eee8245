//! The full metric suite over aligned predicted / ground-truth frame lists.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::frame::Frame;
use crate::error::{ensure, Result};
use crate::metrics::feasibility::{feasibility, HandDetector};
use crate::metrics::features::{perceptual_distance, FeatureExtractor, RandomProjection};
use crate::metrics::fid::fid;
use crate::metrics::pixel::{psnr, ssim};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub split: String,
    pub frames: usize,
    pub ssim: f64,
    pub psnr: f64,
    /// Absent when either set has fewer than two frames.
    pub fid: Option<f64>,
    /// Mean perceptual distance per registered extractor.
    pub perceptual: BTreeMap<String, f64>,
    /// Absent when no detector is registered.
    pub feasibility: Option<f64>,
}

/// Feature and detector backends used by [`evaluate`].
pub struct Backends {
    pub extractors: Vec<Box<dyn FeatureExtractor>>,
    /// Embeds frames for FID.
    pub fid_extractor: Box<dyn FeatureExtractor>,
    pub detector: Option<Box<dyn HandDetector>>,
}

impl Backends {
    /// One seeded random-projection extractor for both perceptual distance and FID, no detector.
    pub fn standard(seed: u64) -> Self {
        Self {
            extractors: vec![Box::new(RandomProjection::standard(seed))],
            fid_extractor: Box::new(RandomProjection::standard(seed)),
            detector: None,
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn evaluate(predicted: &[Frame], ground_truth: &[Frame], backends: &Backends) -> Result<MetricReport> {
    ensure!(
        predicted.len() == ground_truth.len(),
        InvalidInput,
        "{} predicted frames vs {} ground-truth frames",
        predicted.len(),
        ground_truth.len()
    );
    ensure!(!predicted.is_empty(), InvalidInput, "nothing to evaluate");
    let pairs: Vec<(f64, f64)> = predicted
        .par_iter()
        .zip(ground_truth)
        .map(|(p, g)| Ok((ssim(p, g)?, psnr(p, g)?)))
        .collect::<Result<_>>()?;
    let ssims: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let psnrs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut perceptual = BTreeMap::new();
    for ex in &backends.extractors {
        let d: Vec<f64> = predicted
            .par_iter()
            .zip(ground_truth)
            .map(|(p, g)| perceptual_distance(p, g, ex.as_ref()))
            .collect::<Result<_>>()?;
        perceptual.insert(ex.name().to_string(), mean(&d));
    }
    let fid = if predicted.len() >= 2 {
        Some(fid(predicted, ground_truth, backends.fid_extractor.as_ref())?)
    } else {
        None
    };
    let feasibility = match &backends.detector {
        Some(d) => Some(feasibility(predicted, d.as_ref())?),
        None => None,
    };
    Ok(MetricReport {
        dataset: String::new(),
        split: String::new(),
        frames: predicted.len(),
        ssim: mean(&ssims),
        psnr: mean(&psnrs),
        fid,
        perceptual,
        feasibility,
    })
}

impl MetricReport {
    pub fn with_labels(mut self, dataset: impl Into<String>, split: impl Into<String>) -> Self {
        self.dataset = dataset.into();
        self.split = split.into();
        self
    }

    /// True when every reported value is finite.
    pub fn is_finite(&self) -> bool {
        self.ssim.is_finite()
            && self.psnr.is_finite()
            && self.fid.is_none_or(f64::is_finite)
            && self.perceptual.values().all(|v| v.is_finite())
            && self.feasibility.is_none_or(f64::is_finite)
    }

    /// Column names and formatted values, in table order.
    pub fn columns(&self) -> Vec<(String, String)> {
        let opt = |v: Option<f64>, p: usize| v.map_or_else(|| "-".to_string(), |v| format!("{v:.p$}"));
        let mut cols = vec![
            ("SSIM".to_string(), format!("{:.4}", self.ssim)),
            ("PSNR".to_string(), format!("{:.3}", self.psnr)),
            ("FID".to_string(), opt(self.fid, 2)),
        ];
        for (name, v) in &self.perceptual {
            cols.push((format!("P_{name}"), format!("{v:.4}")));
        }
        cols.push(("Feasi".to_string(), opt(self.feasibility, 4)));
        cols
    }

    /// Aligned two-line text table preceded by dataset, split and frame count.
    pub fn to_table(&self) -> String {
        let mut head = vec![("dataset".to_string(), self.dataset.clone()), ("split".to_string(), self.split.clone())];
        head.push(("frames".to_string(), self.frames.to_string()));
        head.extend(self.columns());
        let widths: Vec<usize> = head.iter().map(|(k, v)| k.len().max(v.len())).collect();
        let mut out = String::new();
        for (i, (k, _)) in head.iter().enumerate() {
            let _ = write!(out, "{}{:>w$}", if i > 0 { "  " } else { "" }, k, w = widths[i]);
        }
        out.push('\n');
        for (i, (_, v)) in head.iter().enumerate() {
            let _ = write!(out, "{}{:>w$}", if i > 0 { "  " } else { "" }, v, w = widths[i]);
        }
        out.push('\n');
        out
    }
}
