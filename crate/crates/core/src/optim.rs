//! Adam with global gradient-norm clipping.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::params::{NamedArray, ParamSet};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Clip the global L2 norm of the gradient to this value; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

/// First and second moment estimates, stored at parameter precision so
/// they round-trip through checkpoints exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = || {
            params
                .arrays()
                .iter()
                .map(|a| vec![0.0f32; a.data.len()])
                .collect()
        };
        Self {
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Moments as named arrays (`adam.m.<param>`, `adam.v.<param>`).
    pub fn to_named(&self, params: &ParamSet) -> Vec<NamedArray> {
        let mut out = Vec::with_capacity(2 * params.len());
        for (kind, moments) in [("m", &self.m), ("v", &self.v)] {
            for (a, data) in params.arrays().iter().zip(moments) {
                out.push(NamedArray {
                    name: format!("adam.{kind}.{}", a.name),
                    rows: a.rows,
                    cols: a.cols,
                    data: data.clone(),
                });
            }
        }
        out
    }

    pub fn from_named(params: &ParamSet, t: u64, arrays: &[NamedArray]) -> Result<Self> {
        let n = params.len();
        ensure!(
            arrays.len() == 2 * n,
            Checkpoint,
            "expected {} optimizer arrays, found {}",
            2 * n,
            arrays.len()
        );
        let mut state = Self::new(params);
        state.t = t;
        for (i, a) in params.arrays().iter().enumerate() {
            for (kind, slot, src) in [("m", &mut state.m[i], &arrays[i]), ("v", &mut state.v[i], &arrays[n + i])] {
                let want = format!("adam.{kind}.{}", a.name);
                ensure!(
                    src.name == want && src.data.len() == a.data.len(),
                    Checkpoint,
                    "optimizer array mismatch: expected {want}, found {}",
                    src.name
                );
                slot.clone_from(&src.data);
            }
        }
        Ok(state)
    }
}

/// Global L2 norm over a list of gradients.
pub fn global_norm(grads: &[Matrix]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Applies one Adam update in place. Returns the pre-clipping gradient norm.
pub fn adam_step(
    config: &AdamConfig,
    params: &mut ParamSet,
    state: &mut AdamState,
    grads: &[Matrix],
) -> f64 {
    assert_eq!(grads.len(), params.len(), "one gradient per parameter");
    let norm = global_norm(grads);
    let clip = match config.clip_norm {
        Some(max) if norm > max && norm > 0.0 => max / norm,
        _ => 1.0,
    };
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for (i, id) in ids.into_iter().enumerate() {
        let p = &mut params.get_mut(id).data;
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, &g) in grads[i].data().iter().enumerate() {
            let g = g * clip;
            let mj = config.beta1 * f64::from(m[j]) + (1.0 - config.beta1) * g;
            let vj = config.beta2 * f64::from(v[j]) + (1.0 - config.beta2) * g * g;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let update = config.lr * (mj / bc1) / ((vj / bc2).sqrt() + config.eps);
            if update != 0.0 {
                p[j] = (f64::from(p[j]) - update) as f32;
            }
        }
    }
    norm
}
