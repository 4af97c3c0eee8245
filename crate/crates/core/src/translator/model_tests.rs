use super::*;
use crate::data::layout::{render_pose_layout, Hand};
use crate::nn::DecoderBlock;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(encoder_blocks: usize, decoder_blocks: usize) -> TranslatorConfig {
    TranslatorConfig {
        height: 32,
        width: 32,
        patch_size: 8,
        dim: 16,
        encoder_blocks,
        decoder_blocks,
        heads: 2,
        mlp_ratio: 2,
        seed: 3,
        ..TranslatorConfig::default()
    }
}

fn random_frame(rng: &mut ChaCha8Rng, c: usize) -> Frame {
    Frame::from_fn(32, 32, c, |_, _, _| rng.random::<f32>())
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn pose(rng: &mut ChaCha8Rng, hands: usize, jph: usize) -> PoseLayout {
    PoseLayout {
        hands: (0..hands)
            .map(|_| Hand::all_visible((0..jph).map(|_| [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)]).collect()))
            .collect(),
    }
}

fn zero(params: &mut ParamSet, name: &str) {
    let id = params.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    params.get_mut(id).data.fill(0.0);
}

fn param(params: &ParamSet, name: &str) -> Matrix {
    params.get(params.find(name).unwrap()).to_matrix()
}

// ---- scalar oracles ----

fn oracle_ln(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mean) / (var + 1e-6).sqrt() * g[i] + b[i])
        .collect()
}

fn oracle_affine(x: &[f64], w: &Matrix, b: &Matrix) -> Vec<f64> {
    (0..w.cols())
        .map(|j| b.get(0, j) + (0..x.len()).map(|i| x[i] * w.get(i, j)).sum::<f64>())
        .collect()
}

#[test]
fn token_count_follows_patch_grid() {
    let c = TranslatorConfig::default();
    assert_eq!(c.num_patches(), 256);
    assert_eq!(TranslatorConfig::desk().num_patches(), 16);
}

#[test]
fn zero_input_embeds_to_bias_plus_position() {
    let t = Translator::new(tiny(1, 1)).unwrap();
    let tokens = t.patchify(&Frame::zeros(32, 32, 3), &Frame::zeros(32, 32, 3)).unwrap();
    let bias = param(t.params(), "patch_embed.b");
    let pos = param(t.params(), "pos_embed");
    for k in 0..16 {
        for d in 0..16 {
            assert_eq!(tokens.get(k, d), bias.get(0, d) + pos.get(k, d));
        }
    }
}

#[test]
fn patch_embedding_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let t = Translator::new(tiny(1, 1)).unwrap();
    let frame = random_frame(&mut rng, 3);
    let render = random_frame(&mut rng, 3);
    let tokens = t.patchify(&frame, &render).unwrap();
    let w = param(t.params(), "patch_embed.w");
    let b = param(t.params(), "patch_embed.b");
    let pos = param(t.params(), "pos_embed");
    for k in 0..16 {
        let (gy, gx) = (k / 4, k % 4);
        let mut flat = Vec::new();
        for py in 0..8 {
            for px in 0..8 {
                for ch in 0..6 {
                    let src = if ch < 3 { &frame } else { &render };
                    flat.push(f64::from(src.get(gy * 8 + py, gx * 8 + px, ch % 3)));
                }
            }
        }
        let want = oracle_affine(&flat, &w, &b);
        for d in 0..16 {
            assert!((tokens.get(k, d) - want[d] - pos.get(k, d)).abs() < 1e-12);
        }
    }
}

#[test]
fn patchify_rejects_mismatched_inputs() {
    let t = Translator::new(tiny(1, 1)).unwrap();
    assert!(t.patchify(&Frame::zeros(32, 32, 3), &Frame::zeros(16, 32, 3)).is_err());
    assert!(t.patchify(&Frame::zeros(32, 32, 1), &Frame::zeros(32, 32, 3)).is_err());
    assert!(t.patchify(&Frame::zeros(30, 30, 3), &Frame::zeros(30, 30, 3)).is_err());
}

#[test]
fn single_token_block_matches_closed_form() {
    // One key: the softmax weight is 1 and attention reduces to the value path.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut t = Translator::new(tiny(1, 0)).unwrap();
    zero(t.params_mut(), "encoder.0.mlp.fc2.w");
    zero(t.params_mut(), "encoder.0.mlp.fc2.b");
    let x = random_matrix(&mut rng, 1, 16);
    let got = t.encoder_block(0, &x).unwrap();
    let p = t.params();
    let g = param(p, "encoder.0.norm1.g");
    let bn = param(p, "encoder.0.norm1.b");
    let h = oracle_ln(x.row(0), g.data(), bn.data());
    let v = oracle_affine(&h, &param(p, "encoder.0.attn.v.w"), &param(p, "encoder.0.attn.v.b"));
    let a = oracle_affine(&v, &param(p, "encoder.0.attn.out.w"), &param(p, "encoder.0.attn.out.b"));
    for d in 0..16 {
        assert!((got.get(0, d) - x.get(0, d) - a[d]).abs() < 1e-12);
    }
}

#[test]
fn zeroed_output_projections_make_encode_the_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut t = Translator::new(tiny(3, 1)).unwrap();
    for i in 0..3 {
        for name in ["attn.out.w", "attn.out.b", "mlp.fc2.w", "mlp.fc2.b"] {
            zero(t.params_mut(), &format!("encoder.{i}.{name}"));
        }
    }
    let x = random_matrix(&mut rng, 16, 16);
    assert_eq!(t.encode(&x).unwrap(), x);
}

#[test]
fn encoder_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = Translator::new(tiny(2, 1)).unwrap();
    let x = random_matrix(&mut rng, 7, 16);
    let perm = [3, 0, 6, 1, 5, 2, 4];
    let xp = Matrix::from_fn(7, 16, |r, c| x.get(perm[r], c));
    let y = t.encode(&x).unwrap();
    let yp = t.encode(&xp).unwrap();
    for r in 0..7 {
        for c in 0..16 {
            assert!((yp.get(r, c) - y.get(perm[r], c)).abs() < 1e-12);
        }
    }
}

#[test]
fn encode_composes_blocks_and_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_matrix(&mut rng, 16, 16);
    let none = Translator::new(tiny(0, 1)).unwrap();
    assert_eq!(none.encode(&x).unwrap(), x);
    let two = Translator::new(tiny(2, 1)).unwrap();
    let step = two.encoder_block(1, &two.encoder_block(0, &x).unwrap()).unwrap();
    let full = two.encode(&x).unwrap();
    assert_eq!(full, step);
    assert_eq!(full, two.encode(&x).unwrap());
}

#[test]
fn decoded_joints_stay_in_unit_square() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let t = Translator::new(TranslatorConfig {
        dim: 8,
        heads: 2,
        ..tiny(0, 1)
    })
    .unwrap();
    for trial in 0..10_000 {
        let scale = if trial % 10 == 0 { 1e3 } else { 3.0 };
        let ctx = Matrix::from_fn(2, 8, |_, _| rng.random_range(-scale..scale));
        let out = t.decode_pose(&ctx).unwrap();
        assert_eq!(out.shape(), (42, 2));
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn no_decoder_and_zero_head_give_centered_joints() {
    let mut t = Translator::new(tiny(1, 0)).unwrap();
    zero(t.params_mut(), "head.w");
    let out = t.decode_pose(&Matrix::filled(16, 16, 0.3)).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.5));
}

#[test]
fn single_context_token_cross_attention_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut pb = ParamBuilder::new(1);
    let block = DecoderBlock::new(&mut pb, "dec", 16, 2, 32);
    let mut params = pb.finish();
    for name in ["dec.self_attn.out.w", "dec.self_attn.out.b", "dec.mlp.fc2.w", "dec.mlp.fc2.b"] {
        zero(&mut params, name);
    }
    let queries = random_matrix(&mut rng, 5, 16);
    let context = random_matrix(&mut rng, 1, 16);
    let mut g = Graph::new();
    let p = params.bind_frozen(&mut g);
    let q = g.constant(queries.clone());
    let c = g.constant(context.clone());
    let out = block.forward(&mut g, &p, q, c, 1, 5, 1);
    let v = oracle_affine(context.row(0), &param(&params, "dec.cross_attn.v.w"), &param(&params, "dec.cross_attn.v.b"));
    let a = oracle_affine(&v, &param(&params, "dec.cross_attn.out.w"), &param(&params, "dec.cross_attn.out.b"));
    for r in 0..5 {
        for d in 0..16 {
            assert!((g.value(out).get(r, d) - queries.get(r, d) - a[d]).abs() < 1e-12);
        }
    }
}

fn pose_examples(state: &TranslatorState, n: usize, seed: u64) -> Vec<LayoutExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let frame = random_frame(&mut rng, 3);
            let exo = Layout::Pose(pose(&mut rng, 2, 21));
            let ego = Layout::Pose(pose(&mut rng, 2, 21));
            state.prepare(&frame, &exo, &ego).unwrap()
        })
        .collect()
}

/// Central differences on a sample of entries from every parameter array.
fn check_gradients(state: &TranslatorState, batch: &[&LayoutExample]) {
    let values = state.model.params().to_matrices();
    let eval = state.loss_at(&values, batch, None).unwrap();
    let frozen = eval.matches.clone();
    let h = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for (i, a) in state.model.params().arrays().iter().enumerate() {
        let n = a.data.len();
        let picks: Vec<usize> = if n <= 4 { (0..n).collect() } else { (0..4).map(|_| rng.random_range(0..n)).collect() };
        for k in picks {
            let mut plus = values.clone();
            plus[i].data_mut()[k] += h;
            let mut minus = values.clone();
            minus[i].data_mut()[k] -= h;
            let fd = (state.loss_value(&plus, batch, Some(&frozen)).unwrap()
                - state.loss_value(&minus, batch, Some(&frozen)).unwrap())
                / (2.0 * h);
            let an = eval.grads[i].data()[k];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-5);
            assert!(rel < 1e-3, "{}[{k}]: analytic {an} vs numeric {fd} (rel {rel})", a.name);
        }
    }
}

#[test]
fn pose_loss_gradients_match_finite_differences() {
    let state = TranslatorState::new(tiny(2, 2)).unwrap();
    let ex = pose_examples(&state, 2, 21);
    check_gradients(&state, &[&ex[0], &ex[1]]);
}

#[test]
fn mask_loss_gradients_match_finite_differences() {
    let state = TranslatorState::new(TranslatorConfig {
        mode: LayoutMode::Mask,
        ..tiny(1, 1)
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let frame = random_frame(&mut rng, 3);
    let exo = Layout::Pose(pose(&mut rng, 1, 21));
    let mask = MaskLayout::new(32, 32, (0..1024).map(|_| rng.random_range(0..2u8)).collect()).unwrap();
    let ex = state.prepare(&frame, &exo, &Layout::Mask(mask)).unwrap();
    check_gradients(&state, &[&ex]);
}

#[test]
fn frozen_matches_reproduce_the_matched_loss() {
    let state = TranslatorState::new(tiny(1, 1)).unwrap();
    let ex = pose_examples(&state, 1, 5);
    let values = state.model.params().to_matrices();
    let eval = state.loss_at(&values, &[&ex[0]], None).unwrap();
    let LayoutTarget::Pose(joints) = &ex[0].target else { unreachable!() };
    // value-level matching on the same predictions gives the same loss
    let mut g = Graph::new();
    let p = state.model.params().bind_frozen(&mut g);
    let x = g.constant(ex[0].patches.clone());
    let tok = state.model.embed_graph(&mut g, &p, x, 1);
    let ctx = state.model.encode_graph(&mut g, &p, tok, 1);
    let out = state.model.decode_graph(&mut g, &p, ctx, 1);
    let joints_pred = g.value(out).map(crate::autodiff::sigmoid);
    let layout = PoseLayout {
        hands: joints
            .chunks(21)
            .map(|c| Hand::all_visible(c.iter().map(|j| j.1).collect()))
            .collect(),
    };
    let (loss, _) = super::super::matching::bipartite_match_loss(&joints_pred, &layout, 21).unwrap();
    assert!((loss - eval.loss).abs() < 1e-12);
}

#[test]
fn single_example_overfits() {
    let mut state = TranslatorState::new(tiny(1, 1)).unwrap();
    let ex = pose_examples(&state, 1, 8);
    let optim = AdamConfig {
        lr: 3e-3,
        ..AdamConfig::default()
    };
    let losses: Vec<f64> = (0..500).map(|_| state.train_step(&[&ex[0]], &optim).unwrap()).collect();
    assert!(losses[499] < 0.1 * losses[0], "{} -> {}", losses[0], losses[499]);
    assert_eq!(state.step, 500);
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let mut state = TranslatorState::new(tiny(1, 1)).unwrap();
    let ex = pose_examples(&state, 2, 9);
    let before = state.model.params().clone();
    let optim = AdamConfig {
        lr: 0.0,
        ..AdamConfig::default()
    };
    for _ in 0..3 {
        state.train_step(&[&ex[0], &ex[1]], &optim).unwrap();
    }
    assert_eq!(state.model.params(), &before);
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let mut state = TranslatorState::new(tiny(1, 1)).unwrap();
        let ex = pose_examples(&state, 2, 10);
        (0..20)
            .map(|_| state.train_step(&[&ex[0], &ex[1]], &AdamConfig::default()).unwrap().to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut state = TranslatorState::new(tiny(1, 1)).unwrap();
    let ex = pose_examples(&state, 1, 12);
    for _ in 0..3 {
        state.train_step(&[&ex[0]], &AdamConfig::default()).unwrap();
    }
    let bytes = state.to_checkpoint().to_bytes();
    let back = TranslatorState::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back.model.params(), state.model.params());
    assert_eq!(back.adam, state.adam);
    assert_eq!(back.role_counts, state.role_counts);
    assert_eq!(back.step, 3);
    assert_eq!(back.to_checkpoint().to_bytes(), bytes);
    let mut a = state.clone();
    let mut b = back;
    assert_eq!(
        a.train_step(&[&ex[0]], &AdamConfig::default()).unwrap().to_bits(),
        b.train_step(&[&ex[0]], &AdamConfig::default()).unwrap().to_bits()
    );
    assert_eq!(a.model.params(), b.model.params());
}

#[test]
fn roles_label_predictions_by_match_history() {
    let mut state = TranslatorState::new(TranslatorConfig {
        joints_per_hand: 2,
        queries: 4,
        ..tiny(1, 1)
    })
    .unwrap();
    // query 3 always played slot 0 (hand 0, joint 0), query 1 slot 1
    state.role_counts.set(3, 0, 5.0);
    state.role_counts.set(1, 1, 4.0);
    state.role_counts.set(0, 1, 1.0);
    let joints = Matrix::from_rows(&[vec![0.1, 0.1], vec![0.2, 0.2], vec![0.3, 0.3], vec![0.4, 0.4]]);
    let layout = state.joints_to_layout(&joints).unwrap();
    assert_eq!(layout.hands.len(), 1);
    assert_eq!(layout.hands[0].joints, vec![[0.4, 0.4], [0.2, 0.2]]);
    assert_eq!(layout.hands[0].visible, vec![true, true]);
}

#[test]
fn mask_mode_decodes_full_resolution_logits() {
    let t = Translator::new(TranslatorConfig {
        mode: LayoutMode::Mask,
        ..tiny(1, 1)
    })
    .unwrap();
    let ctx = Matrix::filled(16, 16, 0.1);
    let logits = t.decode_mask(&ctx).unwrap();
    assert_eq!(logits.shape(), (1024, 2));
    assert!(t.decode_pose(&ctx).is_err());
    let probs = super::super::mask::mask_probabilities(&logits);
    assert!((0..1024).all(|r| (probs.get(r, 0) + probs.get(r, 1) - 1.0).abs() < 1e-6));
}

#[test]
fn mask_labels_follow_patch_tiles() {
    let c = tiny(1, 1);
    let mask = MaskLayout::new(32, 32, (0..1024).map(|i| u8::from(i % 3 == 0)).collect()).unwrap();
    let labels = mask_labels(&mask, &c).unwrap();
    // round trip through the tile-to-raster permutation
    let tiles = Matrix::from_fn(16, 128, |t, k| if k % 2 == 1 { labels[t * 64 + k / 2] as f64 } else { 0.0 });
    let raster = tiles_to_raster(&tiles, &c);
    for (i, &m) in mask.data().iter().enumerate() {
        assert_eq!(raster.get(i, 1), f64::from(m));
    }
}

#[test]
fn prediction_renders_to_a_layout() {
    let state = TranslatorState::new(tiny(1, 1)).unwrap();
    let layout = state
        .predict_layout(&Frame::zeros(32, 32, 3), &Layout::Pose(PoseLayout::empty()))
        .unwrap();
    // untrained: no role statistics, so no hands are emitted
    assert_eq!(layout, Layout::Pose(PoseLayout::empty()));
    assert!(render_pose_layout(layout.as_pose().unwrap(), 32, 32).is_ok());
}
