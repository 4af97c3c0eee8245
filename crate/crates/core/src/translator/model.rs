use crate::autodiff::{Graph, Var};
use crate::checkpoint::Checkpoint;
use crate::data::frame::Frame;
use crate::data::layout::{Hand, Layout, MaskLayout, PoseLayout, LAYOUT_CHANNELS, MAX_HANDS};
use crate::error::{ensure, Error, Result};
use crate::nn::{DecoderBlock, EncoderBlock, LayerNorm, Linear};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::params::{Bound, Init, NamedArray, ParamBuilder, ParamId, ParamSet};
use crate::tensor::Matrix;

use super::config::{LayoutMode, TranslatorConfig};
use super::matching::{hungarian, l1_cost_matrix, Match};

pub const CHECKPOINT_KIND: &str = "translator";
const ROLE_COUNTS: &str = "roles.counts";

#[derive(Clone, Debug)]
struct Modules {
    patch_embed: Linear,
    pos: ParamId,
    encoder: Vec<EncoderBlock>,
    context_norm: LayerNorm,
    queries: ParamId,
    decoder: Vec<DecoderBlock>,
    out_norm: LayerNorm,
    head: Linear,
}

/// Stage-1 network: ViT-style encoder over `(frame ⊕ layout render)` patches
/// and a query decoder with cross-attention.
#[derive(Clone, Debug)]
pub struct Translator {
    config: TranslatorConfig,
    params: ParamSet,
    modules: Modules,
}

/// Cuts `frame ⊕ render` into non-overlapping `p x p` patches in row-major
/// patch order. Each row flattens one patch as `(py, px, channel)`, frame
/// channels before render channels.
pub fn extract_patches(frame: &Frame, render: &Frame, p: usize) -> Result<Matrix> {
    ensure!(
        frame.height() == render.height() && frame.width() == render.width(),
        InvalidInput,
        "frame {}x{} and layout render {}x{} differ in size",
        frame.height(),
        frame.width(),
        render.height(),
        render.width()
    );
    let (h, w) = (frame.height(), frame.width());
    ensure!(
        p >= 1 && h % p == 0 && w % p == 0,
        InvalidInput,
        "frame {h}x{w} is not divisible into {p}x{p} patches"
    );
    let (c1, c2) = (frame.channels(), render.channels());
    let c = c1 + c2;
    let (gh, gw) = (h / p, w / p);
    let mut out = Matrix::zeros(gh * gw, p * p * c);
    for gy in 0..gh {
        for gx in 0..gw {
            let row = out.row_mut(gy * gw + gx);
            for py in 0..p {
                for px in 0..p {
                    let (y, x) = (gy * p + py, gx * p + px);
                    let base = (py * p + px) * c;
                    for ch in 0..c1 {
                        row[base + ch] = f64::from(frame.get(y, x, ch));
                    }
                    for ch in 0..c2 {
                        row[base + c1 + ch] = f64::from(render.get(y, x, ch));
                    }
                }
            }
        }
    }
    Ok(out)
}

impl Translator {
    pub fn new(config: TranslatorConfig) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let hidden = d * config.mlp_ratio;
        let out_width = match config.mode {
            LayoutMode::Pose => 2,
            LayoutMode::Mask => config.patch_size * config.patch_size * 2,
        };
        let mut pb = ParamBuilder::new(config.seed);
        let modules = Modules {
            patch_embed: Linear::new(&mut pb, "patch_embed", config.patch_len(), d),
            pos: pb.add("pos_embed", config.num_patches(), d, Init::Normal(0.02)),
            encoder: (0..config.encoder_blocks)
                .map(|i| EncoderBlock::new(&mut pb, &format!("encoder.{i}"), d, config.heads, hidden))
                .collect(),
            context_norm: LayerNorm::new(&mut pb, "context_norm", d),
            queries: pb.add("queries", config.num_queries(), d, Init::Normal(1.0)),
            decoder: (0..config.decoder_blocks)
                .map(|i| DecoderBlock::new(&mut pb, &format!("decoder.{i}"), d, config.heads, hidden))
                .collect(),
            out_norm: LayerNorm::new(&mut pb, "out_norm", d),
            head: Linear::new(&mut pb, "head", d, out_width),
        };
        Ok(Self {
            config,
            params: pb.finish(),
            modules,
        })
    }

    pub fn config(&self) -> &TranslatorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn check_input(&self, frame: &Frame) -> Result<()> {
        let c = &self.config;
        ensure!(
            frame.height() == c.height && frame.width() == c.width,
            InvalidInput,
            "frame is {}x{}, translator expects {}x{}",
            frame.height(),
            frame.width(),
            c.height,
            c.width
        );
        ensure!(
            frame.channels() + LAYOUT_CHANNELS == c.input_channels,
            InvalidInput,
            "frame has {} channels, translator expects {}",
            frame.channels(),
            c.input_channels - LAYOUT_CHANNELS
        );
        Ok(())
    }

    /// Raw patches of a frame and its input layout.
    pub fn input_patches(&self, frame: &Frame, layout: &Layout) -> Result<Matrix> {
        self.check_input(frame)?;
        let render = layout.render(self.config.height, self.config.width)?;
        extract_patches(frame, &render, self.config.patch_size)
    }

    // ---- graph construction ----

    fn embed_graph(&self, g: &mut Graph, p: &Bound, patches: Var, batch: usize) -> Var {
        let x = self.modules.patch_embed.forward(g, p, patches);
        let pos = g.tile(p.var(self.modules.pos), batch);
        g.add(x, pos)
    }

    fn encode_graph(&self, g: &mut Graph, p: &Bound, mut x: Var, batch: usize) -> Var {
        let m = self.config.num_patches();
        for block in &self.modules.encoder {
            x = block.forward(g, p, x, batch, m);
        }
        x
    }

    /// Head output before squashing, `[batch * queries, out]`.
    fn decode_graph(&self, g: &mut Graph, p: &Bound, context: Var, batch: usize) -> Var {
        let (m, e) = (self.config.num_patches(), self.config.num_queries());
        let ctx = self.modules.context_norm.forward(g, p, context);
        let mut q = g.tile(p.var(self.modules.queries), batch);
        for block in &self.modules.decoder {
            q = block.forward(g, p, q, ctx, batch, e, m);
        }
        let q = self.modules.out_norm.forward(g, p, q);
        self.modules.head.forward(g, p, q)
    }

    fn frozen(&self) -> (Graph, Bound) {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        (g, p)
    }

    // ---- value-level operations ----

    /// Embeds a frame and its rendered layout: `M x D` tokens including position embedding.
    pub fn patchify(&self, frame: &Frame, layout_render: &Frame) -> Result<Matrix> {
        self.check_input(frame)?;
        ensure!(
            layout_render.channels() == LAYOUT_CHANNELS,
            InvalidInput,
            "layout render has {} channels, expected {LAYOUT_CHANNELS}",
            layout_render.channels()
        );
        let patches = extract_patches(frame, layout_render, self.config.patch_size)?;
        let (mut g, p) = self.frozen();
        let x = g.constant(patches);
        let out = self.embed_graph(&mut g, &p, x, 1);
        Ok(g.value(out).clone())
    }

    pub fn num_encoder_blocks(&self) -> usize {
        self.modules.encoder.len()
    }

    /// Applies encoder block `index` to a token sequence of any length.
    pub fn encoder_block(&self, index: usize, tokens: &Matrix) -> Result<Matrix> {
        ensure!(index < self.modules.encoder.len(), InvalidInput, "no encoder block {index}");
        self.check_tokens(tokens)?;
        let (mut g, p) = self.frozen();
        let x = g.constant(tokens.clone());
        let out = self.modules.encoder[index].forward(&mut g, &p, x, 1, tokens.rows());
        Ok(g.value(out).clone())
    }

    /// Runs all encoder blocks; the identity when there are none.
    pub fn encode(&self, tokens: &Matrix) -> Result<Matrix> {
        self.check_tokens(tokens)?;
        let (mut g, p) = self.frozen();
        let mut x = g.constant(tokens.clone());
        for block in &self.modules.encoder {
            x = block.forward(&mut g, &p, x, 1, tokens.rows());
        }
        Ok(g.value(x).clone())
    }

    fn check_tokens(&self, tokens: &Matrix) -> Result<()> {
        ensure!(
            tokens.cols() == self.config.dim && tokens.rows() >= 1,
            InvalidInput,
            "tokens must be [n, {}], got {:?}",
            self.config.dim,
            tokens.shape()
        );
        Ok(())
    }

    fn decode_values(&self, context: &Matrix) -> Result<Matrix> {
        self.check_tokens(context)?;
        let (mut g, p) = self.frozen();
        let ctx = g.constant(context.clone());
        let (e, m) = (self.config.num_queries(), context.rows());
        let c = self.modules.context_norm.forward(&mut g, &p, ctx);
        let mut q = p.var(self.modules.queries);
        for block in &self.modules.decoder {
            q = block.forward(&mut g, &p, q, c, 1, e, m);
        }
        let q = self.modules.out_norm.forward(&mut g, &p, q);
        let out = self.modules.head.forward(&mut g, &p, q);
        Ok(g.value(out).clone())
    }

    /// Predicted joints `[E, 2]` in `[0,1]^2` from contextual tokens.
    pub fn decode_pose(&self, context: &Matrix) -> Result<Matrix> {
        ensure!(self.config.mode == LayoutMode::Pose, Config, "translator is configured for mask layouts");
        Ok(self.decode_values(context)?.map(crate::autodiff::sigmoid))
    }

    /// Per-pixel `(non-hand, hand)` logits as `[H * W, 2]` in raster order.
    pub fn decode_mask(&self, context: &Matrix) -> Result<Matrix> {
        ensure!(self.config.mode == LayoutMode::Mask, Config, "translator is configured for pose layouts");
        ensure!(
            context.rows() == self.config.num_patches(),
            InvalidInput,
            "mask decoding needs {} contextual tokens, got {}",
            self.config.num_patches(),
            context.rows()
        );
        let tiles = self.decode_values(context)?;
        Ok(tiles_to_raster(&tiles, &self.config))
    }

    /// Full forward pass to raw decoder output for one input.
    fn forward_values(&self, frame: &Frame, layout: &Layout) -> Result<Matrix> {
        let patches = self.input_patches(frame, layout)?;
        let (mut g, p) = self.frozen();
        let x = g.constant(patches);
        let tokens = self.embed_graph(&mut g, &p, x, 1);
        let ctx = self.encode_graph(&mut g, &p, tokens, 1);
        let out = self.decode_graph(&mut g, &p, ctx, 1);
        Ok(g.value(out).clone())
    }

    /// Joint predictions `[E, 2]` for an exo frame and its exo layout.
    pub fn predict_joints(&self, frame: &Frame, layout: &Layout) -> Result<Matrix> {
        ensure!(self.config.mode == LayoutMode::Pose, Config, "translator is configured for mask layouts");
        Ok(self.forward_values(frame, layout)?.map(crate::autodiff::sigmoid))
    }

    /// Mask logits `[H * W, 2]` for an exo frame and its exo layout.
    pub fn predict_mask_logits(&self, frame: &Frame, layout: &Layout) -> Result<Matrix> {
        ensure!(self.config.mode == LayoutMode::Mask, Config, "translator is configured for pose layouts");
        Ok(tiles_to_raster(&self.forward_values(frame, layout)?, &self.config))
    }
}

/// Rearranges per-patch `p x p x 2` logit tiles into raster-order pixels.
fn tiles_to_raster(tiles: &Matrix, config: &TranslatorConfig) -> Matrix {
    let p = config.patch_size;
    let gw = config.width / p;
    let mut out = Matrix::zeros(config.height * config.width, 2);
    for (t, tile) in (0..tiles.rows()).map(|t| (t, tiles.row(t))) {
        let (gy, gx) = (t / gw, t % gw);
        for py in 0..p {
            for px in 0..p {
                let pixel = (gy * p + py) * config.width + gx * p + px;
                let src = (py * p + px) * 2;
                out.row_mut(pixel).copy_from_slice(&tile[src..src + 2]);
            }
        }
    }
    out
}

/// Supervision for one training example.
#[derive(Clone, Debug, PartialEq)]
pub enum LayoutTarget {
    /// Visible ego joints as `(hand * J + joint, [u, v])`.
    Pose(Vec<(usize, [f64; 2])>),
    /// Class per pixel in patch-tile order (patch, py, px), matching the head layout.
    Mask(Vec<usize>),
}

/// A preprocessed training example: input patches plus target.
#[derive(Clone, Debug, PartialEq)]
pub struct LayoutExample {
    pub patches: Matrix,
    pub target: LayoutTarget,
}

/// Loss, gradients (one per parameter array) and the matches used.
#[derive(Clone, Debug)]
pub struct LossEval {
    pub loss: f64,
    pub grads: Vec<Matrix>,
    pub matches: Vec<Vec<Match>>,
}

/// Trainable stage-1 state: network, optimizer moments, step counter and
/// the query-to-joint role statistics used to label predictions.
#[derive(Clone, Debug)]
pub struct TranslatorState {
    pub model: Translator,
    pub step: u64,
    pub adam: AdamState,
    /// `[queries, MAX_HANDS * J]` count of how often each query matched each joint slot.
    pub role_counts: Matrix,
}

impl TranslatorState {
    pub fn new(config: TranslatorConfig) -> Result<Self> {
        let model = Translator::new(config)?;
        let adam = AdamState::new(&model.params);
        let slots = MAX_HANDS * model.config.joints_per_hand;
        let role_counts = Matrix::zeros(model.config.num_queries(), slots);
        Ok(Self {
            model,
            step: 0,
            adam,
            role_counts,
        })
    }

    pub fn config(&self) -> &TranslatorConfig {
        &self.model.config
    }

    /// Builds a training example from an exo frame, its exo layout and the ego target layout.
    pub fn prepare(&self, exo_frame: &Frame, exo_layout: &Layout, ego_layout: &Layout) -> Result<LayoutExample> {
        let c = &self.model.config;
        let patches = self.model.input_patches(exo_frame, exo_layout)?;
        let target = match (c.mode, ego_layout) {
            (LayoutMode::Pose, Layout::Pose(pose)) => {
                pose.validate()?;
                for (h, hand) in pose.hands.iter().enumerate() {
                    ensure!(
                        hand.joints.len() == c.joints_per_hand,
                        InvalidInput,
                        "hand {h} has {} joints, translator expects {}",
                        hand.joints.len(),
                        c.joints_per_hand
                    );
                }
                LayoutTarget::Pose(pose.visible_joints(c.joints_per_hand))
            }
            (LayoutMode::Mask, Layout::Mask(mask)) => LayoutTarget::Mask(mask_labels(mask, c)?),
            (LayoutMode::Pose, Layout::Mask(_)) => {
                return Err(Error::InvalidInput("pose translator given a mask target".into()))
            }
            (LayoutMode::Mask, Layout::Pose(_)) => {
                return Err(Error::InvalidInput("mask translator given a pose target".into()))
            }
        };
        Ok(LayoutExample { patches, target })
    }

    /// Builds the batch loss on `g`. With `frozen`, those matches are used
    /// instead of solving the assignment from the current predictions.
    fn loss_graph(
        &self,
        g: &mut Graph,
        p: &Bound,
        batch: &[&LayoutExample],
        frozen: Option<&[Vec<Match>]>,
    ) -> Result<(Var, Vec<Vec<Match>>)> {
        let c = &self.model.config;
        ensure!(!batch.is_empty(), InvalidInput, "training batch is empty");
        let b = batch.len();
        let (m, e) = (c.num_patches(), c.num_queries());
        let mut stacked = Vec::with_capacity(b * m * c.patch_len());
        for ex in batch {
            ensure!(
                ex.patches.shape() == (m, c.patch_len()),
                InvalidInput,
                "example patches are {:?}, expected ({m}, {})",
                ex.patches.shape(),
                c.patch_len()
            );
            stacked.extend_from_slice(ex.patches.data());
        }
        let x = g.constant(Matrix::from_vec(b * m, c.patch_len(), stacked));
        let tokens = self.model.embed_graph(g, p, x, b);
        let ctx = self.model.encode_graph(g, p, tokens, b);
        let out = self.model.decode_graph(g, p, ctx, b);
        match c.mode {
            LayoutMode::Pose => {
                let pred = g.sigmoid(out);
                let mut all_matches = Vec::with_capacity(b);
                for (i, ex) in batch.iter().enumerate() {
                    let LayoutTarget::Pose(joints) = &ex.target else {
                        return Err(Error::InvalidInput("mask target in a pose batch".into()));
                    };
                    ensure!(joints.len() <= e, InvalidInput, "{} joints exceed {e} queries", joints.len());
                    let matches = match frozen {
                        Some(f) => f[i].clone(),
                        None => {
                            let values = g.value(pred);
                            let local = Matrix::from_fn(e, 2, |r, col| values.get(i * e + r, col));
                            let assignment = hungarian(&l1_cost_matrix(&local, joints))?;
                            joints
                                .iter()
                                .zip(assignment)
                                .map(|(&(gt_index, gt), pred)| Match { gt_index, gt, pred })
                                .collect()
                        }
                    };
                    all_matches.push(matches);
                }
                let mut index = Vec::new();
                let mut target = Vec::new();
                let mut weight = Vec::new();
                for (i, matches) in all_matches.iter().enumerate() {
                    let w = 1.0 / (b * matches.len().max(1)) as f64;
                    for mt in matches {
                        index.push(i * e + mt.pred);
                        target.extend_from_slice(&mt.gt);
                        weight.extend_from_slice(&[w, w]);
                    }
                }
                let n = index.len();
                let chosen = g.gather_rows(pred, index);
                let target = g.constant(Matrix::from_vec(n, 2, target));
                let diff = g.sub(chosen, target);
                let abs = g.abs(diff);
                let weight = g.constant(Matrix::from_vec(n, 2, weight));
                let weighted = g.mul(abs, weight);
                Ok((g.sum_all(weighted), all_matches))
            }
            LayoutMode::Mask => {
                let pixels = c.patch_size * c.patch_size;
                let mut labels = Vec::with_capacity(b * m * pixels);
                for ex in batch {
                    let LayoutTarget::Mask(l) = &ex.target else {
                        return Err(Error::InvalidInput("pose target in a mask batch".into()));
                    };
                    ensure!(l.len() == m * pixels, InvalidInput, "mask target has {} labels", l.len());
                    labels.extend_from_slice(l);
                }
                let logits = g.reshape(out, b * m * pixels, 2);
                Ok((g.softmax_cross_entropy(logits, labels), vec![Vec::new(); b]))
            }
        }
    }

    /// Loss and gradients at explicit parameter values (same order as the
    /// parameter set).
    pub fn loss_at(
        &self,
        values: &[Matrix],
        batch: &[&LayoutExample],
        frozen: Option<&[Vec<Match>]>,
    ) -> Result<LossEval> {
        ensure!(values.len() == self.model.params.len(), InvalidInput, "wrong parameter count");
        let mut g = Graph::new();
        let p = Bound::from_values(&mut g, values);
        let (loss, matches) = self.loss_graph(&mut g, &p, batch, frozen)?;
        let mut grads = g.backward(loss);
        Ok(LossEval {
            loss: g.value(loss).get(0, 0),
            grads: p.gradients(&g, &mut grads),
            matches,
        })
    }

    /// Loss only, without a backward pass.
    pub fn loss_value(&self, values: &[Matrix], batch: &[&LayoutExample], frozen: Option<&[Vec<Match>]>) -> Result<f64> {
        let mut g = Graph::new();
        let p = Bound::from_values(&mut g, values);
        let (loss, _) = self.loss_graph(&mut g, &p, batch, frozen)?;
        Ok(g.value(loss).get(0, 0))
    }

    /// One optimizer step. Returns the batch loss before the update.
    pub fn train_step(&mut self, batch: &[&LayoutExample], optim: &AdamConfig) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.model.params.bind(&mut g);
        let (loss, matches) = self.loss_graph(&mut g, &p, batch, None)?;
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
        for mt in matches.iter().flatten() {
            if mt.gt_index < self.role_counts.cols() {
                let cur = self.role_counts.get(mt.pred, mt.gt_index);
                self.role_counts.set(mt.pred, mt.gt_index, cur + 1.0);
            }
        }
        self.step += 1;
        Ok(value)
    }

    /// Which query stands for each joint slot, from the training match
    /// statistics (a max-count assignment), and whether the slot was ever matched.
    pub fn roles(&self) -> Result<Vec<(usize, bool)>> {
        let counts = &self.role_counts;
        let slots = counts.cols();
        let cost = Matrix::from_fn(slots, counts.rows(), |s, q| -counts.get(q, s));
        let assignment = hungarian(&cost)?;
        Ok(assignment
            .into_iter()
            .enumerate()
            .map(|(s, q)| (q, (0..counts.rows()).any(|r| counts.get(r, s) > 0.0)))
            .collect())
    }

    /// Labels raw joint predictions `[E, 2]` with joint identities.
    ///
    /// Hands are emitted up to the last hand seen during training; slots
    /// never matched are kept but marked invisible.
    pub fn joints_to_layout(&self, joints: &Matrix) -> Result<PoseLayout> {
        let jph = self.model.config.joints_per_hand;
        let roles = self.roles()?;
        let hands = roles.iter().rposition(|r| r.1).map_or(0, |last| last / jph + 1);
        let hands = roles[..hands * jph]
            .chunks(jph)
            .map(|slots| Hand {
                joints: slots.iter().map(|&(q, _)| [joints.get(q, 0), joints.get(q, 1)]).collect(),
                visible: slots.iter().map(|&(_, seen)| seen).collect(),
            })
            .collect();
        Ok(PoseLayout { hands })
    }

    /// Predicts the ego layout for an exo frame and its exo layout.
    pub fn predict_layout(&self, frame: &Frame, layout: &Layout) -> Result<Layout> {
        match self.model.config.mode {
            LayoutMode::Pose => {
                let joints = self.model.predict_joints(frame, layout)?;
                Ok(Layout::Pose(self.joints_to_layout(&joints)?))
            }
            LayoutMode::Mask => {
                let logits = self.model.predict_mask_logits(frame, layout)?;
                let c = &self.model.config;
                let data = (0..logits.rows())
                    .map(|r| u8::from(logits.get(r, 1) > logits.get(r, 0)))
                    .collect();
                Ok(Layout::Mask(MaskLayout::new(c.height, c.width, data)?))
            }
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut arrays = self.model.params.arrays().to_vec();
        arrays.extend(self.adam.to_named(&self.model.params));
        arrays.push(NamedArray {
            name: ROLE_COUNTS.into(),
            rows: self.role_counts.rows(),
            cols: self.role_counts.cols(),
            data: self.role_counts.data().iter().map(|&x| x as f32).collect(),
        });
        Checkpoint {
            kind: CHECKPOINT_KIND.into(),
            step: self.step,
            config: serde_json::to_string(&self.model.config).expect("config serializes"),
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
        let config: TranslatorConfig = serde_json::from_str(&ckpt.config)
            .map_err(|e| Error::Checkpoint(format!("bad translator config: {e}")))?;
        let mut state = Self::new(config)?;
        let adam = ckpt.take_prefixed("adam.");
        let roles = ckpt.take_prefixed("roles.");
        state.model.params.assign_from(&ckpt.arrays)?;
        state.adam = AdamState::from_named(&state.model.params, ckpt.step, &adam)?;
        let [counts] = roles.as_slice() else {
            return Err(Error::Checkpoint("missing role statistics".into()));
        };
        ensure!(
            counts.name == ROLE_COUNTS && (counts.rows, counts.cols) == state.role_counts.shape(),
            Checkpoint,
            "role statistics have the wrong shape"
        );
        state.role_counts = counts.to_matrix();
        state.step = ckpt.step;
        Ok(state)
    }
}

/// Mask pixels as class labels in (patch, py, px) order.
fn mask_labels(mask: &MaskLayout, c: &TranslatorConfig) -> Result<Vec<usize>> {
    ensure!(
        mask.height() == c.height && mask.width() == c.width,
        InvalidInput,
        "mask is {}x{}, translator expects {}x{}",
        mask.height(),
        mask.width(),
        c.height,
        c.width
    );
    let p = c.patch_size;
    let (gh, gw) = (c.height / p, c.width / p);
    let mut out = Vec::with_capacity(c.height * c.width);
    for gy in 0..gh {
        for gx in 0..gw {
            for py in 0..p {
                for px in 0..p {
                    out.push(usize::from(mask.get(gy * p + py, gx * p + px)));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
#[path = "model_tests.rs"]
mod tests;
