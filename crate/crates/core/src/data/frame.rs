use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{ensure, Error, Result};

/// A raster image with values in `[0, 1]`, stored row-major with
/// interleaved channels (`H × W × C`).
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

/// Pixel rectangle `[x, x + width) × [y, y + height)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn full(frame: &Frame) -> Self {
        Self {
            x: 0,
            y: 0,
            width: frame.width(),
            height: frame.height(),
        }
    }
}

impl Frame {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        ensure!(
            height >= 1 && width >= 1 && channels >= 1,
            InvalidInput,
            "frame dimensions must be positive, got {height}x{width}x{channels}"
        );
        ensure!(
            data.len() == height * width * channels,
            InvalidInput,
            "frame data length {} does not match {height}x{width}x{channels}",
            data.len()
        );
        ensure!(
            data.iter().all(|v| (0.0..=1.0).contains(v)),
            InvalidInput,
            "frame values must lie in [0, 1]"
        );
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        assert!(height >= 1 && width >= 1 && channels >= 1);
        assert!((0.0..=1.0).contains(&value));
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    /// Builds a frame from a per-pixel function; results are clamped to `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c).clamp(0.0, 1.0));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Sets a pixel channel; the value is clamped to `[0, 1]`.
    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v.clamp(0.0, 1.0);
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Luma (BT.601 weights) for 3-channel frames; 1-channel frames pass through.
    pub fn to_gray(&self) -> Vec<f64> {
        match self.channels {
            1 => self.data.iter().map(|&v| f64::from(v)).collect(),
            3 => self
                .data
                .chunks_exact(3)
                .map(|p| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
                .collect(),
            c => self
                .data
                .chunks_exact(c)
                .map(|p| p.iter().map(|&v| f64::from(v)).sum::<f64>() / c as f64)
                .collect(),
        }
    }

    /// Channel-wise concatenation of frames sharing `H × W`.
    pub fn concat_channels(frames: &[&Frame]) -> Result<Frame> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidInput("no frames to concatenate".into()))?;
        let (h, w) = (first.height, first.width);
        ensure!(
            frames.iter().all(|f| f.height == h && f.width == w),
            InvalidInput,
            "channel concatenation needs matching spatial size"
        );
        let channels: usize = frames.iter().map(|f| f.channels).sum();
        let mut data = Vec::with_capacity(h * w * channels);
        for i in 0..h * w {
            for f in frames {
                data.extend_from_slice(&f.data[i * f.channels..(i + 1) * f.channels]);
            }
        }
        Ok(Frame {
            height: h,
            width: w,
            channels,
            data,
        })
    }

    /// Reads an 8-bit PNG; values are divided by 255. Grayscale images load
    /// as one channel, everything else as RGB.
    pub fn load_png(path: &Path) -> Result<Frame> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let (channels, raw) = match img.color().channel_count() {
            1 | 2 => (1, img.to_luma8().into_raw()),
            _ => (3, img.to_rgb8().into_raw()),
        };
        let (width, height) = (img.width() as usize, img.height() as usize);
        let data = raw.iter().map(|&b| f32::from(b) / 255.0).collect();
        Frame::new(height, width, channels, data)
    }

    /// Quantizes to 8 bits (round to nearest) and writes a PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.to_u8();
        let (w, h) = (self.width as u32, self.height as u32);
        let res = match self.channels {
            1 => ImageBuffer::<Luma<u8>, _>::from_raw(w, h, bytes)
                .expect("buffer size matches")
                .save(path),
            3 => ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, bytes)
                .expect("buffer size matches")
                .save(path),
            c => {
                return Err(Error::InvalidInput(format!(
                    "cannot write a {c}-channel frame as PNG"
                )))
            }
        };
        res.map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v * 255.0).round() as u8).collect()
    }

    /// The frame after an 8-bit round trip.
    pub fn quantized(&self) -> Frame {
        Frame {
            data: self.to_u8().into_iter().map(|b| f32::from(b) / 255.0).collect(),
            ..self.clone()
        }
    }
}

/// Crops `roi` and resizes it to `target × target` with bilinear
/// interpolation (half-pixel centers, edge clamped).
pub fn crop_resize(frame: &Frame, roi: Rect, target: usize) -> Result<Frame> {
    ensure!(target >= 1, InvalidInput, "target size must be at least 1");
    ensure!(
        roi.width >= 1
            && roi.height >= 1
            && roi.x + roi.width <= frame.width
            && roi.y + roi.height <= frame.height,
        InvalidInput,
        "roi {roi:?} outside {}x{} frame",
        frame.width,
        frame.height
    );
    let c = frame.channels;
    let sx = roi.width as f64 / target as f64;
    let sy = roi.height as f64 / target as f64;
    let sample_axis = |dst: usize, scale: f64, len: usize| -> (usize, usize, f64) {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, src - i0 as f64)
    };
    let mut data = Vec::with_capacity(target * target * c);
    for ty in 0..target {
        let (y0, y1, fy) = sample_axis(ty, sy, roi.height);
        for tx in 0..target {
            let (x0, x1, fx) = sample_axis(tx, sx, roi.width);
            for ch in 0..c {
                let p = |y: usize, x: usize| f64::from(frame.get(roi.y + y, roi.x + x, ch));
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                data.push((v as f32).clamp(0.0, 1.0));
            }
        }
    }
    Ok(Frame {
        height: target,
        width: target,
        channels: c,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_frame_stays_constant() {
        let f = Frame::filled(40, 60, 3, 0.5);
        let out = crop_resize(&f, Rect { x: 5, y: 3, width: 30, height: 20 }, 256).unwrap();
        assert_eq!(out.height(), 256);
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn halving_is_a_two_by_two_box_average() {
        let f = Frame::from_fn(512, 512, 1, |y, x, _| ((y * 7 + x * 13) % 256) as f32 / 255.0);
        let out = crop_resize(&f, Rect::full(&f), 256).unwrap();
        for (y, x) in [(0, 0), (17, 200), (255, 255), (128, 3)] {
            let want = (f.get(2 * y, 2 * x, 0)
                + f.get(2 * y, 2 * x + 1, 0)
                + f.get(2 * y + 1, 2 * x, 0)
                + f.get(2 * y + 1, 2 * x + 1, 0))
                / 4.0;
            assert!((out.get(y, x, 0) - want).abs() < 1e-6);
        }
    }

    #[test]
    fn checkerboard_matches_bilinear_oracle() {
        let f = Frame::from_fn(4, 4, 1, |y, x, _| ((x + y) % 2) as f32);
        let out = crop_resize(&f, Rect::full(&f), 2).unwrap();
        // Oracle: target pixel t samples source coordinate 2t + 0.5, i.e. the
        // midpoint of source pixels 2t and 2t + 1 along each axis.
        for ty in 0..2 {
            for tx in 0..2 {
                let mut acc = 0.0f32;
                for dy in 0..2 {
                    for dx in 0..2 {
                        acc += 0.25 * f.get(2 * ty + dy, 2 * tx + dx, 0);
                    }
                }
                assert!((out.get(ty, tx, 0) - acc).abs() < 1e-7);
                assert!((out.get(ty, tx, 0) - 0.5).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn roi_outside_frame_is_rejected() {
        let f = Frame::zeros(10, 10, 3);
        let err = crop_resize(&f, Rect { x: 5, y: 0, width: 6, height: 4 }, 8);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
        assert!(crop_resize(&f, Rect::full(&f), 0).is_err());
    }

    #[test]
    fn png_round_trip_preserves_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let f = Frame::from_fn(5, 7, 3, |y, x, c| ((y * 31 + x * 17 + c * 5) % 256) as f32 / 255.0);
        let path = dir.path().join("f.png");
        f.save_png(&path).unwrap();
        assert_eq!(Frame::load_png(&path).unwrap(), f);
        let m = Frame::from_fn(3, 3, 1, |y, x, _| ((x + y) % 2) as f32);
        m.save_png(&path).unwrap();
        assert_eq!(Frame::load_png(&path).unwrap(), m);
    }

    proptest! {
        #[test]
        fn same_size_full_roi_is_identity(h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
            let side = h.max(w);
            let f = Frame::from_fn(side, side, 3, |y, x, c| {
                let v = seed.wrapping_mul(6364136223846793005).wrapping_add((y * 131 + x * 17 + c) as u64);
                (v >> 40) as f32 / (1u64 << 24) as f32
            });
            let out = crop_resize(&f, Rect::full(&f), side).unwrap();
            let max = out.data().iter().zip(f.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
            prop_assert!(max < 1e-6);
        }

        #[test]
        fn output_stays_in_unit_range(seed in any::<u64>(), target in 1usize..20) {
            let f = Frame::from_fn(9, 13, 1, |y, x, _| ((seed >> ((x + y) % 60)) & 1) as f32);
            let out = crop_resize(&f, Rect { x: 1, y: 2, width: 11, height: 6 }, target).unwrap();
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
