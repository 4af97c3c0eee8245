//! Hand layouts: normalized 2-D joint sets and binary masks, plus their
//! rasterization into layout images.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::frame::Frame;
use crate::error::{ensure, Error, Result};

/// Joints per hand in the standard hand-pose convention.
pub const JOINTS_PER_HAND: usize = 21;
pub const MAX_HANDS: usize = 2;
/// Channels of a rendered layout image.
pub const LAYOUT_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hand {
    /// Normalized `(u, v)` image coordinates; `u` runs along the width.
    pub joints: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
}

impl Hand {
    pub fn all_visible(joints: Vec<[f64; 2]>) -> Self {
        let visible = vec![true; joints.len()];
        Self { joints, visible }
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseLayout {
    pub hands: Vec<Hand>,
}

impl PoseLayout {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.hands.len() <= MAX_HANDS,
            InvalidInput,
            "a pose layout holds at most {MAX_HANDS} hands, got {}",
            self.hands.len()
        );
        for (h, hand) in self.hands.iter().enumerate() {
            ensure!(
                hand.joints.len() == hand.visible.len(),
                InvalidInput,
                "hand {h}: {} joints but {} visibility flags",
                hand.joints.len(),
                hand.visible.len()
            );
            for (j, (p, &vis)) in hand.joints.iter().zip(&hand.visible).enumerate() {
                if vis {
                    ensure!(
                        p.iter().all(|c| c.is_finite() && (0.0..=1.0).contains(c)),
                        InvalidInput,
                        "hand {h} joint {j}: visible joint {p:?} outside [0,1]^2"
                    );
                }
            }
        }
        Ok(())
    }

    pub fn visible_count(&self) -> usize {
        self.hands.iter().map(Hand::visible_count).sum()
    }

    /// Visible joints as `(flat index, [u, v])`, where the flat index is
    /// `hand * joints_per_hand + joint`.
    pub fn visible_joints(&self, joints_per_hand: usize) -> Vec<(usize, [f64; 2])> {
        let mut out = Vec::new();
        for (h, hand) in self.hands.iter().enumerate() {
            for (j, (p, &vis)) in hand.joints.iter().zip(&hand.visible).enumerate() {
                if vis {
                    out.push((h * joints_per_hand + j, *p));
                }
            }
        }
        out
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let layout: PoseLayout = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("pose layout serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Binary hand mask, `1` marking hand pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskLayout {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl MaskLayout {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        ensure!(
            data.len() == height * width,
            InvalidInput,
            "mask data length {} does not match {height}x{width}",
            data.len()
        );
        ensure!(data.iter().all(|&v| v <= 1), InvalidInput, "mask values must be 0 or 1");
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Thresholds a frame's first channel at 0.5.
    pub fn from_frame(frame: &Frame) -> Self {
        let c = frame.channels();
        let data = frame.data().chunks_exact(c).map(|p| u8::from(p[0] >= 0.5)).collect();
        Self {
            height: frame.height(),
            width: frame.width(),
            data,
        }
    }

    /// One-channel 0/1 frame.
    pub fn to_frame(&self) -> Frame {
        Frame::from_fn(self.height, self.width, 1, |y, x, _| f32::from(self.get(y, x)))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        Ok(Self::from_frame(&Frame::load_png(path)?))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_frame().save_png(path)
    }
}

/// Either kind of per-frame hand layout.
#[derive(Clone, Debug, PartialEq)]
pub enum Layout {
    Pose(PoseLayout),
    Mask(MaskLayout),
}

impl Layout {
    /// `.json` files hold pose layouts, `.png` files masks.
    pub fn load(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Ok(Layout::Pose(PoseLayout::load_json(path)?)),
            Some("png") => Ok(Layout::Mask(MaskLayout::load_png(path)?)),
            _ => Err(Error::InvalidInput(format!(
                "{}: layout files must be .json (pose) or .png (mask)",
                path.display()
            ))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match self {
            Layout::Pose(p) => p.save_json(path),
            Layout::Mask(m) => m.save_png(path),
        }
    }

    pub fn as_pose(&self) -> Option<&PoseLayout> {
        match self {
            Layout::Pose(p) => Some(p),
            Layout::Mask(_) => None,
        }
    }

    pub fn as_mask(&self) -> Option<&MaskLayout> {
        match self {
            Layout::Mask(m) => Some(m),
            Layout::Pose(_) => None,
        }
    }

    /// Renders to a [`LAYOUT_CHANNELS`]-channel image.
    pub fn render(&self, height: usize, width: usize) -> Result<Frame> {
        match self {
            Layout::Pose(p) => render_pose_layout(p, height, width),
            Layout::Mask(m) => render_mask_layout(m, height, width),
        }
    }
}

/// Joint connectivity used when drawing a hand.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skeleton {
    pub joints: usize,
    pub edges: Vec<(usize, usize)>,
}

impl Skeleton {
    /// Wrist (0) plus four joints per finger, thumb first.
    pub fn hand21() -> Self {
        let mut edges = Vec::with_capacity(20);
        for finger in 0..5 {
            let base = 1 + 4 * finger;
            edges.push((0, base));
            for k in 0..3 {
                edges.push((base + k, base + k + 1));
            }
        }
        Self { joints: 21, edges }
    }

    /// Consecutive joints connected in a chain; the fallback for non-standard joint counts.
    pub fn chain(joints: usize) -> Self {
        Self {
            joints,
            edges: (1..joints).map(|j| (j - 1, j)).collect(),
        }
    }

    pub fn for_joint_count(joints: usize) -> Self {
        if joints == JOINTS_PER_HAND {
            Self::hand21()
        } else {
            Self::chain(joints)
        }
    }
}

/// Stroke sizes in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderStyle {
    pub radius: f64,
    pub half_width: f64,
}

impl RenderStyle {
    /// Radius 3 px and 1 px lines at 256 px, scaled with the shorter side
    /// and floored at a 1 px radius and 1 px line so small frames still draw
    /// connected skeletons.
    pub fn for_size(height: usize, width: usize) -> Self {
        let s = height.min(width) as f64 / 256.0;
        Self {
            radius: (3.0 * s).max(1.0),
            half_width: (0.5 * s).max(0.5),
        }
    }
}

/// Pixel-space position of a normalized coordinate; pixel `(x, y)` is centered at `(x, y)`.
#[inline]
fn to_pixel(p: [f64; 2], height: usize, width: usize) -> (f64, f64) {
    (p[0] * width as f64, p[1] * height as f64)
}

/// Distance from `(px, py)` to the segment `a`–`b`.
pub(crate) fn segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Renders with the default skeleton for the layout's joint count and the
/// default stroke sizes for `height × width`.
pub fn render_pose_layout(layout: &PoseLayout, height: usize, width: usize) -> Result<Frame> {
    let joints = layout.hands.first().map_or(JOINTS_PER_HAND, |h| h.joints.len());
    render_pose_layout_with(
        layout,
        height,
        width,
        &Skeleton::for_joint_count(joints),
        RenderStyle::for_size(height, width),
    )
}

/// Rasterizes a pose layout into a 3-channel image.
///
/// Hand `h` is drawn into channel `h` (joint disks and bones at 1.0);
/// channel 2 carries both hands' joints at 1.0 and bones at 0.5.
/// Overlaps combine with `max`, so drawing order never matters.
pub fn render_pose_layout_with(
    layout: &PoseLayout,
    height: usize,
    width: usize,
    skeleton: &Skeleton,
    style: RenderStyle,
) -> Result<Frame> {
    ensure!(height >= 1 && width >= 1, InvalidInput, "render size must be positive");
    layout.validate()?;
    let mut frame = Frame::zeros(height, width, LAYOUT_CHANNELS);
    let mut paint = |y: usize, x: usize, c: usize, v: f32| {
        if frame.get(y, x, c) < v {
            frame.set(y, x, c, v);
        }
    };
    let bbox = |lo: f64, hi: f64, len: usize| -> Option<(usize, usize)> {
        let a = lo.ceil().max(0.0);
        let b = hi.floor().min(len as f64 - 1.0);
        (a <= b).then_some((a as usize, b as usize))
    };
    for (h, hand) in layout.hands.iter().enumerate() {
        let pts: Vec<(f64, f64)> = hand.joints.iter().map(|&p| to_pixel(p, height, width)).collect();
        for &(a, b) in &skeleton.edges {
            if a >= pts.len() || b >= pts.len() || !hand.visible[a] || !hand.visible[b] {
                continue;
            }
            let (pa, pb) = (pts[a], pts[b]);
            let r = style.half_width;
            let (Some((x0, x1)), Some((y0, y1))) = (
                bbox(pa.0.min(pb.0) - r, pa.0.max(pb.0) + r, width),
                bbox(pa.1.min(pb.1) - r, pa.1.max(pb.1) + r, height),
            ) else {
                continue;
            };
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if segment_distance(x as f64, y as f64, pa, pb) <= r {
                        paint(y, x, h, 1.0);
                        paint(y, x, 2, 0.5);
                    }
                }
            }
        }
        for (p, &vis) in pts.iter().zip(&hand.visible) {
            if !vis {
                continue;
            }
            let r = style.radius;
            let (Some((x0, x1)), Some((y0, y1))) =
                (bbox(p.0 - r, p.0 + r, width), bbox(p.1 - r, p.1 + r, height))
            else {
                continue;
            };
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let d2 = (x as f64 - p.0).powi(2) + (y as f64 - p.1).powi(2);
                    if d2 <= r * r {
                        paint(y, x, h, 1.0);
                        paint(y, x, 2, 1.0);
                    }
                }
            }
        }
    }
    Ok(frame)
}

/// A mask rendered as a 3-channel image (the mask replicated), resized by
/// nearest neighbour when the target size differs.
pub fn render_mask_layout(mask: &MaskLayout, height: usize, width: usize) -> Result<Frame> {
    ensure!(height >= 1 && width >= 1, InvalidInput, "render size must be positive");
    Ok(Frame::from_fn(height, width, LAYOUT_CHANNELS, |y, x, _| {
        let sy = y * mask.height / height;
        let sx = x * mask.width / width;
        f32::from(mask.get(sy, sx))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_layout_renders_black() {
        let f = render_pose_layout(&PoseLayout::empty(), 64, 48).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
        assert_eq!(f.channels(), LAYOUT_CHANNELS);
    }

    #[test]
    fn centered_joint_lands_on_center_pixel() {
        let layout = PoseLayout {
            hands: vec![Hand::all_visible(vec![[0.5, 0.5]])],
        };
        let style = RenderStyle::for_size(256, 256);
        assert_eq!(style.radius, 3.0);
        let f = render_pose_layout(&layout, 256, 256).unwrap();
        assert!(f.get(128, 128, 0) > 0.0);
        assert_eq!(f.get(128, 131, 0), 1.0);
        assert_eq!(f.get(128, 132, 0), 0.0);
        assert_eq!(f.get(0, 0, 0), 0.0);
        // second hand channel untouched
        assert!(f.data().chunks(3).all(|p| p[1] == 0.0));
    }

    /// Brute-force oracle: every pixel tested against every disk and every
    /// bone with an independently written point/segment distance.
    fn oracle(layout: &PoseLayout, h: usize, w: usize, sk: &Skeleton, st: RenderStyle) -> Vec<f32> {
        fn dist_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
            let ab = (b.0 - a.0, b.1 - a.1);
            let ap = (p.0 - a.0, p.1 - a.1);
            let denom = ab.0 * ab.0 + ab.1 * ab.1;
            if denom == 0.0 {
                return ap.0.hypot(ap.1);
            }
            let t = (ap.0 * ab.0 + ap.1 * ab.1) / denom;
            if t <= 0.0 {
                ap.0.hypot(ap.1)
            } else if t >= 1.0 {
                (p.0 - b.0).hypot(p.1 - b.1)
            } else {
                (ab.0 * ap.1 - ab.1 * ap.0).abs() / denom.sqrt()
            }
        }
        let mut out = vec![0.0f32; h * w * 3];
        for y in 0..h {
            for x in 0..w {
                let p = (x as f64, y as f64);
                for (hi, hand) in layout.hands.iter().enumerate() {
                    let px: Vec<(f64, f64)> = hand.joints.iter().map(|j| (j[0] * w as f64, j[1] * h as f64)).collect();
                    for &(a, b) in &sk.edges {
                        if hand.visible[a] && hand.visible[b] && dist_to_segment(p, px[a], px[b]) <= st.half_width {
                            let i = (y * w + x) * 3;
                            out[i + hi] = 1.0;
                            out[i + 2] = out[i + 2].max(0.5);
                        }
                    }
                    for (j, q) in px.iter().enumerate() {
                        if hand.visible[j] && (p.0 - q.0).hypot(p.1 - q.1) <= st.radius {
                            let i = (y * w + x) * 3;
                            out[i + hi] = 1.0;
                            out[i + 2] = 1.0;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn two_joint_hand_matches_brute_force_oracle() {
        let layout = PoseLayout {
            hands: vec![Hand::all_visible(vec![[0.21, 0.33], [0.74, 0.61]])],
        };
        let sk = Skeleton::chain(2);
        for (h, w) in [(32, 32), (64, 48), (256, 256)] {
            let st = RenderStyle::for_size(h, w);
            let got = render_pose_layout_with(&layout, h, w, &sk, st).unwrap();
            let want = oracle(&layout, h, w, &sk, st);
            let diff = got.data().iter().zip(&want).filter(|(a, b)| a != b).count();
            assert_eq!(diff, 0, "{h}x{w}: {diff} pixels differ");
        }
    }

    #[test]
    fn invisible_joints_and_their_bones_are_skipped() {
        let hand = Hand {
            joints: vec![[0.2, 0.2], [0.8, 0.8], [1.7, -0.3]],
            visible: vec![true, false, false],
        };
        let layout = PoseLayout { hands: vec![hand] };
        let f = render_pose_layout_with(&layout, 32, 32, &Skeleton::chain(3), RenderStyle::for_size(32, 32)).unwrap();
        assert!(f.get(25, 25, 0) == 0.0 && f.get(16, 16, 0) == 0.0);
        assert!(f.get(6, 6, 0) > 0.0);
    }

    #[test]
    fn visible_joint_outside_unit_square_is_invalid() {
        let layout = PoseLayout {
            hands: vec![Hand::all_visible(vec![[1.2, 0.5]])],
        };
        assert!(render_pose_layout(&layout, 8, 8).is_err());
        let three = PoseLayout {
            hands: vec![Hand::all_visible(vec![]); 3],
        };
        assert!(three.validate().is_err());
    }

    #[test]
    fn mask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = MaskLayout::new(4, 5, (0..20).map(|i| (i % 3 == 0) as u8).collect()).unwrap();
        let p = dir.path().join("m.png");
        m.save_png(&p).unwrap();
        assert_eq!(MaskLayout::load_png(&p).unwrap(), m);
        match Layout::load(&p).unwrap() {
            Layout::Mask(back) => assert_eq!(back, m),
            other => panic!("expected mask, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn render_is_invariant_to_joint_order(
            coords in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 21),
            perm_seed in any::<u64>(),
        ) {
            let joints: Vec<[f64; 2]> = coords.iter().map(|&(u, v)| [u, v]).collect();
            let sk = Skeleton::hand21();
            let mut order: Vec<usize> = (0..21).collect();
            let mut s = perm_seed;
            for i in (1..21).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                order.swap(i, (s >> 33) as usize % (i + 1));
            }
            // new position of old joint j is pos[j]
            let mut pos = [0; 21];
            for (new, &old) in order.iter().enumerate() {
                pos[old] = new;
            }
            let permuted = Hand::all_visible(order.iter().map(|&o| joints[o]).collect());
            let sk2 = Skeleton { joints: 21, edges: sk.edges.iter().map(|&(a, b)| (pos[a], pos[b])).collect() };
            let st = RenderStyle::for_size(40, 40);
            let a = render_pose_layout_with(&PoseLayout { hands: vec![Hand::all_visible(joints)] }, 40, 40, &sk, st).unwrap();
            let b = render_pose_layout_with(&PoseLayout { hands: vec![permuted] }, 40, 40, &sk2, st).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
