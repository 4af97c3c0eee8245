//! Pinhole projection of 3-D hand joints into normalized 2-D pose layouts.

use serde::{Deserialize, Serialize};

use crate::data::layout::{Hand, PoseLayout};
use crate::error::{ensure, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    /// World-to-camera translation.
    pub translation: [f64; 3],
    /// Image width and height in pixels, used to normalize projections.
    pub image_size: [usize; 2],
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, image_size: [usize; 2]) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
            image_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.fx > 0.0 && self.fy > 0.0,
            Config,
            "focal lengths must be positive (fx={}, fy={})",
            self.fx,
            self.fy
        );
        ensure!(
            self.image_size[0] >= 1 && self.image_size[1] >= 1,
            Config,
            "image size must be positive"
        );
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                ensure!(
                    (dot - want).abs() <= 1e-6,
                    Config,
                    "rotation is not orthonormal (row {i}·row {j} = {dot})"
                );
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        ensure!((det - 1.0).abs() <= 1e-6, Config, "rotation determinant {det} is not +1");
        Ok(())
    }

    pub fn world_to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }

    /// Pixel coordinates of a world point, or `None` behind the camera.
    pub fn project_pixel(&self, p: [f64; 3]) -> Option<[f64; 2]> {
        let c = self.world_to_camera(p);
        (c[2] > 0.0).then(|| [self.fx * c[0] / c[2] + self.cx, self.fy * c[1] / c[2] + self.cy])
    }

    /// Inverse of the projection: the world point at camera depth `depth`
    /// behind normalized coordinate `uv`.
    pub fn unproject(&self, uv: [f64; 2], depth: f64) -> [f64; 3] {
        let u = uv[0] * self.image_size[0] as f64;
        let v = uv[1] * self.image_size[1] as f64;
        let c = [
            (u - self.cx) / self.fx * depth,
            (v - self.cy) / self.fy * depth,
            depth,
        ];
        // world = R^T (c - t)
        let d = [
            c[0] - self.translation[0],
            c[1] - self.translation[1],
            c[2] - self.translation[2],
        ];
        let r = &self.rotation;
        [
            r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
            r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
            r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
        ]
    }
}

/// Placeholder coordinate for joints with non-positive camera depth.
pub const BEHIND_CAMERA: [f64; 2] = [-1.0, -1.0];

/// Projects per-hand 3-D joints (world meters) into a normalized pose
/// layout. Joints behind the camera or outside the image are kept with
/// `visible = false`.
pub fn project_3d_to_2d(hands: &[Vec<[f64; 3]>], camera: &CameraModel) -> Result<PoseLayout> {
    camera.validate()?;
    ensure!(
        hands.len() <= crate::data::layout::MAX_HANDS,
        InvalidInput,
        "at most two hands can be projected"
    );
    let (w, h) = (camera.image_size[0] as f64, camera.image_size[1] as f64);
    let hands = hands
        .iter()
        .map(|joints| {
            let mut out = Vec::with_capacity(joints.len());
            let mut visible = Vec::with_capacity(joints.len());
            for &p in joints {
                match camera.project_pixel(p) {
                    Some([u, v]) => {
                        let n = [u / w, v / h];
                        visible.push(n.iter().all(|c| (0.0..=1.0).contains(c)));
                        out.push(n);
                    }
                    None => {
                        visible.push(false);
                        out.push(BEHIND_CAMERA);
                    }
                }
            }
            Hand {
                joints: out,
                visible,
            }
        })
        .collect();
    Ok(PoseLayout { hands })
}
