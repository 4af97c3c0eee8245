//! Hand-plausibility score from an external hand detector.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::frame::Frame;
use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// `[x0, y0, x1, y1]` in pixels.
    pub bbox: [f64; 4],
    pub confidence: f64,
}

pub trait HandDetector: Send + Sync {
    fn name(&self) -> &str;
    fn detect(&self, frame: &Frame) -> Result<Vec<Detection>>;
}

/// Reports one full-frame detection with a fixed confidence.
#[derive(Clone, Copy, Debug)]
pub struct ConstantDetector(pub f64);

impl HandDetector for ConstantDetector {
    fn name(&self) -> &str {
        "constant"
    }

    fn detect(&self, frame: &Frame) -> Result<Vec<Detection>> {
        Ok(vec![Detection {
            bbox: [0.0, 0.0, frame.width() as f64, frame.height() as f64],
            confidence: self.0,
        }])
    }
}

/// Never detects anything.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullDetector;

impl HandDetector for NullDetector {
    fn name(&self) -> &str {
        "null"
    }

    fn detect(&self, _frame: &Frame) -> Result<Vec<Detection>> {
        Ok(Vec::new())
    }
}

/// Highest detection confidence, or 0 when nothing is detected.
pub fn frame_confidence(detections: &[Detection]) -> f64 {
    detections.iter().map(|d| d.confidence.clamp(0.0, 1.0)).fold(0.0, f64::max)
}

/// Mean over frames of the per-frame best confidence.
pub fn feasibility(frames: &[Frame], detector: &dyn HandDetector) -> Result<f64> {
    ensure!(!frames.is_empty(), InvalidInput, "feasibility needs at least one frame");
    let per: Vec<f64> = frames
        .par_iter()
        .map(|f| detector.detect(f).map(|d| frame_confidence(&d)))
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Confidence read from the top-left pixel; none when it is black.
    struct PixelDetector;

    impl HandDetector for PixelDetector {
        fn name(&self) -> &str {
            "pixel"
        }

        fn detect(&self, frame: &Frame) -> Result<Vec<Detection>> {
            let c = f64::from(frame.get(0, 0, 0));
            Ok(if c == 0.0 {
                vec![]
            } else {
                vec![
                    Detection {
                        bbox: [0.0, 0.0, 1.0, 1.0],
                        confidence: c / 2.0,
                    },
                    Detection {
                        bbox: [0.0, 0.0, 1.0, 1.0],
                        confidence: c,
                    },
                ]
            })
        }
    }

    fn frames(values: &[f32]) -> Vec<Frame> {
        values.iter().map(|&v| Frame::filled(4, 4, 3, v)).collect()
    }

    #[test]
    fn constant_detector_gives_its_confidence() {
        assert!((feasibility(&frames(&[0.1, 0.9, 0.4]), &ConstantDetector(0.7)).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn no_detections_score_zero() {
        assert_eq!(feasibility(&frames(&[0.3, 0.6]), &NullDetector).unwrap(), 0.0);
    }

    #[test]
    fn max_per_frame_then_mean() {
        let v = feasibility(&frames(&[1.0, 0.5, 0.0]), &PixelDetector).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn order_does_not_matter_and_empty_is_an_error() {
        let a = feasibility(&frames(&[0.2, 0.8, 0.5, 0.0]), &PixelDetector).unwrap();
        let b = feasibility(&frames(&[0.0, 0.5, 0.8, 0.2]), &PixelDetector).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(feasibility(&[], &NullDetector).is_err());
    }
}
