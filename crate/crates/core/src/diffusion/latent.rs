use serde::{Deserialize, Serialize};

use crate::data::frame::Frame;
use crate::error::{ensure, Result};

/// A real-valued `height x width x channels` array in HWC order.
#[derive(Clone, Debug, PartialEq)]
pub struct Latent {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Latent {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == height * width * channels,
            InvalidInput,
            "latent data has {} values, expected {height}x{width}x{channels}",
            data.len()
        );
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn same_shape(&self, other: &Latent) -> bool {
        self.shape() == other.shape()
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Channel-wise concatenation of same-size latents.
    pub fn concat_channels(parts: &[&Latent]) -> Result<Latent> {
        ensure!(!parts.is_empty(), InvalidInput, "nothing to concatenate");
        let (h, w) = (parts[0].height, parts[0].width);
        ensure!(
            parts.iter().all(|p| p.height == h && p.width == w),
            InvalidInput,
            "latents differ in spatial size"
        );
        let channels: usize = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(h * w * channels);
        for i in 0..h * w {
            for p in parts {
                data.extend_from_slice(&p.data[i * p.channels..(i + 1) * p.channels]);
            }
        }
        Latent::new(h, w, channels, data)
    }

    pub fn mse(&self, other: &Latent) -> Result<f64> {
        ensure!(
            self.same_shape(other),
            InvalidInput,
            "latent shapes {:?} and {:?} differ",
            self.shape(),
            other.shape()
        );
        let sum: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(sum / self.data.len() as f64)
    }
}

/// Conditioning signal: encoded exo frame and encoded ego layout render,
/// concatenated channel-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct Condition(pub Latent);

impl Condition {
    pub fn build(codec: &dyn LatentCodec, exo_frame: &Frame, ego_layout_render: &Frame) -> Result<Self> {
        let a = codec.encode(exo_frame)?;
        let b = codec.encode(ego_layout_render)?;
        Ok(Condition(Latent::concat_channels(&[&a, &b])?))
    }

    pub fn latent(&self) -> &Latent {
        &self.0
    }
}

/// Maps frames to latents and back.
pub trait LatentCodec: Send + Sync {
    fn name(&self) -> &'static str;
    /// Spatial downsampling factor.
    fn factor(&self) -> usize;
    fn encode(&self, frame: &Frame) -> Result<Latent>;
    /// Decodes and clamps into a valid frame.
    fn decode(&self, latent: &Latent) -> Result<Frame>;
}

/// Pixels are the latent.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityCodec;

impl LatentCodec for IdentityCodec {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn factor(&self) -> usize {
        1
    }

    fn encode(&self, frame: &Frame) -> Result<Latent> {
        Latent::new(
            frame.height(),
            frame.width(),
            frame.channels(),
            frame.data().iter().map(|&v| f64::from(v)).collect(),
        )
    }

    fn decode(&self, latent: &Latent) -> Result<Frame> {
        Frame::new(
            latent.height,
            latent.width,
            latent.channels,
            latent.data.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect(),
        )
    }
}

/// Block-average downsampling by `factor`, nearest-neighbour upsampling back.
#[derive(Clone, Copy, Debug)]
pub struct AvgPoolCodec {
    pub factor: usize,
}

impl LatentCodec for AvgPoolCodec {
    fn name(&self) -> &'static str {
        "avg_pool"
    }

    fn factor(&self) -> usize {
        self.factor
    }

    fn encode(&self, frame: &Frame) -> Result<Latent> {
        let f = self.factor;
        let (h, w, c) = (frame.height(), frame.width(), frame.channels());
        ensure!(
            f >= 1 && h % f == 0 && w % f == 0,
            InvalidInput,
            "frame {h}x{w} is not divisible by codec factor {f}"
        );
        let (lh, lw) = (h / f, w / f);
        let inv = 1.0 / (f * f) as f64;
        let mut data = vec![0.0; lh * lw * c];
        for y in 0..h {
            for x in 0..w {
                let base = ((y / f) * lw + x / f) * c;
                for ch in 0..c {
                    data[base + ch] += f64::from(frame.get(y, x, ch)) * inv;
                }
            }
        }
        Latent::new(lh, lw, c, data)
    }

    fn decode(&self, latent: &Latent) -> Result<Frame> {
        let f = self.factor;
        let (h, w, c) = (latent.height * f, latent.width * f, latent.channels);
        Ok(Frame::from_fn(h, w, c, |y, x, ch| latent.get(y / f, x / f, ch) as f32))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecKind {
    #[default]
    Identity,
    /// 4x average-pool / nearest-upsample stub.
    AvgPool4,
}

impl CodecKind {
    pub fn build(self) -> Box<dyn LatentCodec> {
        match self {
            CodecKind::Identity => Box::new(IdentityCodec),
            CodecKind::AvgPool4 => Box::new(AvgPoolCodec { factor: 4 }),
        }
    }

    pub fn factor(self) -> usize {
        match self {
            CodecKind::Identity => 1,
            CodecKind::AvgPool4 => 4,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(h: usize, w: usize) -> Frame {
        Frame::from_fn(h, w, 3, |y, x, c| ((y * 31 + x * 17 + c * 7) % 256) as f32 / 255.0)
    }

    #[test]
    fn identity_round_trip_is_exact() {
        let f = textured(32, 32);
        let codec = IdentityCodec;
        let z = codec.encode(&f).unwrap();
        assert_eq!(z.shape(), (32, 32, 3));
        assert_eq!(codec.decode(&z).unwrap(), f);
    }

    #[test]
    fn avg_pool_shapes_and_means() {
        let f = textured(32, 16);
        let codec = AvgPoolCodec { factor: 4 };
        let z = codec.encode(&f).unwrap();
        assert_eq!(z.shape(), (8, 4, 3));
        let mut want = 0.0;
        for y in 4..8 {
            for x in 8..12 {
                want += f64::from(f.get(y, x, 1));
            }
        }
        assert!((z.get(1, 2, 1) - want / 16.0).abs() < 1e-12);
        let back = codec.decode(&z).unwrap();
        assert_eq!((back.height(), back.width()), (32, 16));
        assert_eq!(back.get(5, 9, 1), z.get(1, 2, 1) as f32);
        assert!(codec.encode(&textured(30, 32)).is_err());
        let flat = Frame::filled(8, 8, 3, 0.25);
        assert_eq!(codec.decode(&codec.encode(&flat).unwrap()).unwrap(), flat);
    }

    #[test]
    fn condition_stacks_frame_then_layout() {
        let exo = textured(8, 8);
        let layout = Frame::filled(8, 8, 3, 1.0);
        let d = Condition::build(&IdentityCodec, &exo, &layout).unwrap();
        assert_eq!(d.latent().shape(), (8, 8, 6));
        assert_eq!(d.latent().get(2, 3, 1), f64::from(exo.get(2, 3, 1)));
        assert_eq!(d.latent().get(2, 3, 4), 1.0);
    }
}
