use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::checkpoint::Checkpoint;
use crate::diffusion::latent::{CodecKind, Condition, Latent};
use crate::diffusion::sampler::Denoise;
use crate::diffusion::schedule::{build_schedule, forward_diffuse, NoiseSchedule, ScheduleConfig};
use crate::error::{ensure, Error, Result};
use crate::nn::{Linear, Mlp, MultiHeadAttention};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::params::{Bound, Init, ParamBuilder, ParamSet};
use crate::tensor::Matrix;

pub const CHECKPOINT_KIND: &str = "denoiser";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub latent_height: usize,
    pub latent_width: usize,
    pub latent_channels: usize,
    pub cond_channels: usize,
    pub patch_size: usize,
    pub dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Width of the sinusoidal timestep features.
    pub freq_dim: usize,
    /// Zero-initialize every modulation and the output layer.
    pub adaln_zero: bool,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            latent_height: 32,
            latent_width: 32,
            latent_channels: 3,
            cond_channels: 6,
            patch_size: 2,
            dim: 64,
            blocks: 4,
            heads: 4,
            mlp_ratio: 4,
            freq_dim: 64,
            adaln_zero: true,
            seed: 0,
        }
    }
}

impl DenoiserConfig {
    pub fn num_tokens(&self) -> usize {
        (self.latent_height / self.patch_size) * (self.latent_width / self.patch_size)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.patch_size;
        ensure!(
            p >= 1 && self.latent_height % p == 0 && self.latent_width % p == 0 && self.latent_height >= p,
            Config,
            "latent {}x{} is not divisible into {p}x{p} patches",
            self.latent_height,
            self.latent_width
        );
        ensure!(
            self.dim >= 4 && self.dim % 4 == 0 && self.dim % self.heads.max(1) == 0 && self.heads >= 1,
            Config,
            "dim {} must be a multiple of 4 and of heads {}",
            self.dim,
            self.heads
        );
        ensure!(self.freq_dim >= 2 && self.freq_dim % 2 == 0, Config, "freq_dim must be even");
        ensure!(self.latent_channels >= 1 && self.mlp_ratio >= 1, Config, "channels and mlp_ratio must be positive");
        Ok(())
    }
}

/// Everything a denoiser checkpoint records: network, schedule and codec.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    pub denoiser: DenoiserConfig,
    pub schedule: ScheduleConfig,
    pub codec: CodecKind,
}

#[derive(Clone, Debug)]
struct DitBlock {
    attn: MultiHeadAttention,
    mlp: Mlp,
    /// `c -> [shift1, scale1, gate1, shift2, scale2, gate2]`.
    ada: Linear,
}

#[derive(Clone, Debug)]
struct Modules {
    x_embed: Linear,
    t_fc1: Linear,
    t_fc2: Linear,
    blocks: Vec<DitBlock>,
    final_ada: Linear,
    final_out: Linear,
}

/// Diffusion transformer predicting the clean latent from
/// `(noisy latent ⊕ condition, step)`, with adaptive layer-norm conditioning
/// on the step.
#[derive(Clone, Debug)]
pub struct Denoiser {
    config: DenoiserConfig,
    params: ParamSet,
    modules: Modules,
    pos: Matrix,
}

/// Sinusoidal features `[cos(t f_i), sin(t f_i)]` with geometric frequencies.
pub fn timestep_features(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (t * freq).cos();
        out[half + i] = (t * freq).sin();
    }
    out
}

/// Fixed 2-D sine-cosine position table `[gh * gw, dim]`: the first half of
/// each row encodes the row index, the second half the column index.
pub fn sincos_position_table(gh: usize, gw: usize, dim: usize) -> Matrix {
    let quarter = dim / 4;
    let encode = |pos: f64, out: &mut [f64]| {
        for i in 0..quarter {
            let omega = 1.0 / 10_000f64.powf(i as f64 / quarter as f64);
            out[i] = (pos * omega).sin();
            out[quarter + i] = (pos * omega).cos();
        }
    };
    let mut m = Matrix::zeros(gh * gw, dim);
    for y in 0..gh {
        for x in 0..gw {
            let row = m.row_mut(y * gw + x);
            encode(y as f64, &mut row[..2 * quarter]);
            encode(x as f64, &mut row[2 * quarter..4 * quarter]);
        }
    }
    m
}

/// Splits a latent into `p x p` patches in row-major order, each flattened
/// as `(py, px, channel)`.
pub fn patchify_latent(z: &Latent, p: usize) -> Matrix {
    let (gh, gw, c) = (z.height / p, z.width / p, z.channels);
    let mut out = Matrix::zeros(gh * gw, p * p * c);
    for gy in 0..gh {
        for gx in 0..gw {
            let row = out.row_mut(gy * gw + gx);
            for py in 0..p {
                let src = ((gy * p + py) * z.width + gx * p) * c;
                row[py * p * c..(py + 1) * p * c].copy_from_slice(&z.data[src..src + p * c]);
            }
        }
    }
    out
}

/// Inverse of [`patchify_latent`].
pub fn unpatchify_latent(tokens: &Matrix, height: usize, width: usize, channels: usize, p: usize) -> Latent {
    let gw = width / p;
    let mut z = Latent::zeros(height, width, channels);
    for t in 0..tokens.rows() {
        let (gy, gx) = (t / gw, t % gw);
        let row = tokens.row(t);
        for py in 0..p {
            let dst = ((gy * p + py) * width + gx * p) * channels;
            z.data[dst..dst + p * channels].copy_from_slice(&row[py * p * channels..(py + 1) * p * channels]);
        }
    }
    z
}

impl Denoiser {
    pub fn new(config: DenoiserConfig) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let p = config.patch_size;
        let in_width = p * p * (config.latent_channels + config.cond_channels);
        let out_width = p * p * config.latent_channels;
        let zero_or = |init| if config.adaln_zero { Init::Zeros } else { init };
        let mut pb = ParamBuilder::new(config.seed);
        let modules = Modules {
            x_embed: Linear::new(&mut pb, "x_embed", in_width, d),
            t_fc1: Linear::with_init(&mut pb, "t_embed.fc1", config.freq_dim, d, Init::Normal(0.02)),
            t_fc2: Linear::with_init(&mut pb, "t_embed.fc2", d, d, Init::Normal(0.02)),
            blocks: (0..config.blocks)
                .map(|i| {
                    pb.scoped(format!("blocks.{i}"), |pb| DitBlock {
                        attn: MultiHeadAttention::new(pb, "attn", d, config.heads),
                        mlp: Mlp::new(pb, "mlp", d, d * config.mlp_ratio),
                        ada: Linear::with_init(pb, "ada", d, 6 * d, zero_or(Init::Normal(0.02))),
                    })
                })
                .collect(),
            final_ada: Linear::with_init(&mut pb, "final.ada", d, 2 * d, zero_or(Init::Normal(0.02))),
            final_out: Linear::with_init(&mut pb, "final.out", d, out_width, zero_or(Init::Xavier)),
        };
        let pos = sincos_position_table(config.latent_height / p, config.latent_width / p, d);
        Ok(Self {
            config,
            params: pb.finish(),
            modules,
            pos,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn check(&self, z: &Latent, d: &Condition) -> Result<()> {
        let c = &self.config;
        ensure!(
            z.shape() == (c.latent_height, c.latent_width, c.latent_channels),
            InvalidInput,
            "latent {:?} does not match denoiser ({}, {}, {})",
            z.shape(),
            c.latent_height,
            c.latent_width,
            c.latent_channels
        );
        ensure!(
            d.latent().shape() == (c.latent_height, c.latent_width, c.cond_channels),
            InvalidInput,
            "condition {:?} does not match denoiser ({}, {}, {})",
            d.latent().shape(),
            c.latent_height,
            c.latent_width,
            c.cond_channels
        );
        Ok(())
    }

    /// Patch tokens of `z_n ⊕ d`.
    fn input_tokens(&self, z_n: &Latent, d: &Condition) -> Result<Matrix> {
        self.check(z_n, d)?;
        let x = Latent::concat_channels(&[z_n, d.latent()])?;
        Ok(patchify_latent(&x, self.config.patch_size))
    }

    /// Output tokens `[batch * T, p*p*c]` for stacked input tokens and one step per example.
    fn forward_graph(&self, g: &mut Graph, p: &Bound, tokens: Matrix, steps: &[usize]) -> Var {
        let b = steps.len();
        let t = self.config.num_tokens();
        let d = self.config.dim;
        let x = g.constant(tokens);
        let x = self.modules.x_embed.forward(g, p, x);
        let pos = g.constant(self.pos.clone());
        let pos = g.tile(pos, b);
        let mut x = g.add(x, pos);

        let mut feats = Vec::with_capacity(b * self.config.freq_dim);
        for &n in steps {
            feats.extend(timestep_features(n as f64, self.config.freq_dim));
        }
        let tf = g.constant(Matrix::from_vec(b, self.config.freq_dim, feats));
        let c = self.modules.t_fc1.forward(g, p, tf);
        let c = g.silu(c);
        let c = self.modules.t_fc2.forward(g, p, c);
        let c = g.silu(c);

        let modulate = |g: &mut Graph, h: Var, shift: Var, scale: Var| {
            let hs = g.mul(h, scale);
            let h = g.add(h, hs);
            g.add(h, shift)
        };
        for block in &self.modules.blocks {
            let mods = block.ada.forward(g, p, c);
            let chunk: Vec<Var> = (0..6)
                .map(|k| {
                    let s = g.slice_cols(mods, k * d, d);
                    g.repeat_rows(s, t)
                })
                .collect();
            let h = g.layer_norm(x, None, None);
            let h = modulate(g, h, chunk[0], chunk[1]);
            let a = block.attn.forward(g, p, h, h, b, t, t);
            let a = g.mul(a, chunk[2]);
            x = g.add(x, a);
            let h = g.layer_norm(x, None, None);
            let h = modulate(g, h, chunk[3], chunk[4]);
            let m = block.mlp.forward(g, p, h);
            let m = g.mul(m, chunk[5]);
            x = g.add(x, m);
        }
        let mods = self.modules.final_ada.forward(g, p, c);
        let shift = g.slice_cols(mods, 0, d);
        let shift = g.repeat_rows(shift, t);
        let scale = g.slice_cols(mods, d, d);
        let scale = g.repeat_rows(scale, t);
        let h = g.layer_norm(x, None, None);
        let h = modulate(g, h, shift, scale);
        self.modules.final_out.forward(g, p, h)
    }

    /// Predicted clean latent for one noisy latent, condition and step.
    pub fn denoise_predict(&self, z_n: &Latent, d: &Condition, n: usize) -> Result<Latent> {
        let tokens = self.input_tokens(z_n, d)?;
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let out = self.forward_graph(&mut g, &p, tokens, &[n]);
        let c = &self.config;
        Ok(unpatchify_latent(
            g.value(out),
            c.latent_height,
            c.latent_width,
            c.latent_channels,
            c.patch_size,
        ))
    }
}

/// A clean latent and its condition.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionExample {
    pub z: Latent,
    pub d: Condition,
}

/// Step and noise drawn for one example of a training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub n: usize,
    pub eps: Latent,
}

/// Trainable stage-2 state.
#[derive(Clone, Debug)]
pub struct DenoiserState {
    pub model: Denoiser,
    pub config: DiffusionConfig,
    pub schedule: NoiseSchedule,
    pub step: u64,
    pub adam: AdamState,
}

impl DenoiserState {
    pub fn new(config: DiffusionConfig) -> Result<Self> {
        let model = Denoiser::new(config.denoiser.clone())?;
        let schedule = build_schedule(&config.schedule)?;
        let adam = AdamState::new(&model.params);
        Ok(Self {
            model,
            config,
            schedule,
            step: 0,
            adam,
        })
    }

    /// Uniform step in `[1, N]` and unit Gaussian noise for each example.
    pub fn draw_noise<R: Rng>(&self, batch: &[&DiffusionExample], rng: &mut R) -> Vec<NoiseDraw> {
        batch
            .iter()
            .map(|ex| {
                let n = rng.random_range(1..=self.schedule.steps());
                let data = (0..ex.z.data.len()).map(|_| StandardNormal.sample(rng)).collect();
                NoiseDraw {
                    n,
                    eps: Latent { data, ..ex.z.clone() },
                }
            })
            .collect()
    }

    fn loss_graph(
        &self,
        g: &mut Graph,
        p: &Bound,
        batch: &[&DiffusionExample],
        noise: &[NoiseDraw],
    ) -> Result<Var> {
        ensure!(!batch.is_empty(), InvalidInput, "training batch is empty");
        ensure!(batch.len() == noise.len(), InvalidInput, "one noise draw per example required");
        let c = &self.model.config;
        let t = c.num_tokens();
        let in_width = c.patch_size * c.patch_size * (c.latent_channels + c.cond_channels);
        let out_width = c.patch_size * c.patch_size * c.latent_channels;
        let mut inputs = Vec::with_capacity(batch.len() * t * in_width);
        let mut targets = Vec::with_capacity(batch.len() * t * out_width);
        for (ex, draw) in batch.iter().zip(noise) {
            let z_n = forward_diffuse(&ex.z, draw.n, &draw.eps, &self.schedule)?;
            inputs.extend_from_slice(self.model.input_tokens(&z_n, &ex.d)?.data());
            targets.extend_from_slice(patchify_latent(&ex.z, c.patch_size).data());
        }
        let steps: Vec<usize> = noise.iter().map(|d| d.n).collect();
        let b = batch.len();
        let out = self
            .model
            .forward_graph(g, p, Matrix::from_vec(b * t, in_width, inputs), &steps);
        let target = g.constant(Matrix::from_vec(b * t, out_width, targets));
        let diff = g.sub(out, target);
        let sq = g.square(diff);
        Ok(g.mean_all(sq))
    }

    /// Loss and gradients at explicit parameter values.
    pub fn loss_at(&self, values: &[Matrix], batch: &[&DiffusionExample], noise: &[NoiseDraw]) -> Result<(f64, Vec<Matrix>)> {
        ensure!(values.len() == self.model.params.len(), InvalidInput, "wrong parameter count");
        let mut g = Graph::new();
        let p = Bound::from_values(&mut g, values);
        let loss = self.loss_graph(&mut g, &p, batch, noise)?;
        let mut grads = g.backward(loss);
        Ok((g.value(loss).get(0, 0), p.gradients(&g, &mut grads)))
    }

    /// Batch loss at the current parameters, without gradients.
    pub fn loss_value(&self, batch: &[&DiffusionExample], noise: &[NoiseDraw]) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.model.params.bind_frozen(&mut g);
        let loss = self.loss_graph(&mut g, &p, batch, noise)?;
        Ok(g.value(loss).get(0, 0))
    }

    /// Loss at explicit parameter values, without gradients.
    pub fn loss_value_at(&self, values: &[Matrix], batch: &[&DiffusionExample], noise: &[NoiseDraw]) -> Result<f64> {
        let mut g = Graph::new();
        let p = Bound::from_values(&mut g, values);
        let loss = self.loss_graph(&mut g, &p, batch, noise)?;
        Ok(g.value(loss).get(0, 0))
    }

    /// One optimizer step with explicit noise. Returns the loss before the update.
    pub fn train_step_with(&mut self, batch: &[&DiffusionExample], noise: &[NoiseDraw], optim: &AdamConfig) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.model.params.bind(&mut g);
        let loss = self.loss_graph(&mut g, &p, batch, noise)?;
        let value = g.value(loss).get(0, 0);
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                loss: value,
            });
        }
        let mut grads = g.backward(loss);
        let grads = p.gradients(&g, &mut grads);
        adam_step(optim, &mut self.model.params, &mut self.adam, &grads);
        self.step += 1;
        Ok(value)
    }

    /// One optimizer step, drawing steps and noise from `rng`.
    pub fn train_step<R: Rng>(&mut self, batch: &[&DiffusionExample], optim: &AdamConfig, rng: &mut R) -> Result<f64> {
        let noise = self.draw_noise(batch, rng);
        self.train_step_with(batch, &noise, optim)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut arrays = self.model.params.arrays().to_vec();
        arrays.extend(self.adam.to_named(&self.model.params));
        Checkpoint {
            kind: CHECKPOINT_KIND.into(),
            step: self.step,
            config: serde_json::to_string(&self.config).expect("config serializes"),
            arrays,
        }
    }

    pub fn from_checkpoint(mut ckpt: Checkpoint) -> Result<Self> {
        ensure!(
            ckpt.kind == CHECKPOINT_KIND,
            Checkpoint,
            "expected a {CHECKPOINT_KIND} checkpoint, found {}",
            ckpt.kind
        );
        let config: DiffusionConfig = serde_json::from_str(&ckpt.config)
            .map_err(|e| Error::Checkpoint(format!("bad diffusion config: {e}")))?;
        let mut state = Self::new(config)?;
        let adam = ckpt.take_prefixed("adam.");
        state.model.params.assign_from(&ckpt.arrays)?;
        state.adam = AdamState::from_named(&state.model.params, ckpt.step, &adam)?;
        state.step = ckpt.step;
        Ok(state)
    }
}

impl Denoise for Denoiser {
    fn predict(&self, z_n: &Latent, d: &Condition, n: usize) -> Result<Latent> {
        self.denoise_predict(z_n, d, n)
    }
}

impl Denoise for DenoiserState {
    fn predict(&self, z_n: &Latent, d: &Condition, n: usize) -> Result<Latent> {
        self.model.denoise_predict(z_n, d, n)
    }
}

#[cfg(test)]
#[path = "denoiser_tests.rs"]
mod tests;
