use patchformer::model::{checkpoint, chunked_graphs, param_count, stages, Ablation, ModelConfig, TokenLayout};
use patchformer::numerics::{Mode, Rng, Tape, Tensor};
use patchformer::{Error, Model32, Model64};
use proptest::prelude::*;

fn random_input(rng: &mut Rng, b: usize, c: &ModelConfig) -> Tensor<f32> {
    let n = b * c.c * c.l;
    Tensor::new(&[b, 1, c.c, c.l], (0..n).map(|_| rng.uniform(-1.0, 1.0) as f32).collect()).unwrap()
}

#[test]
fn paper_default_intermediate_shapes() {
    let cfg = ModelConfig::paper();
    let mut rng = Rng::new(1);
    let mut model = Model32::build(&cfg, &mut rng).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(random_input(&mut rng, 2, &cfg));
    let tr = model.forward(&mut tape, x, Mode::Train, &mut rng).unwrap();
    assert_eq!(tape.shape(tr.temporal), &[2, 32, 28, 250]);
    assert_eq!(tape.shape(tr.enhanced), &[2, 32, 28, 125]);
    assert_eq!(tape.shape(tr.spatial), &[2, 12, 32, 125]);
    assert_eq!(tape.shape(tr.tokens), &[2, 264, 32]);
    assert_eq!(tape.shape(tr.encoded), &[2, 264, 32]);
    assert_eq!(tape.shape(tr.logits), &[2, 2]);
    let p = model.predict_proba(random_input(&mut rng, 2, &cfg)).unwrap();
    for row in p.data().chunks(2) {
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn param_count_matches_allocation_and_derived_pieces() {
    let cfg = ModelConfig::paper();
    let model = Model32::build(&cfg, &mut Rng::new(0)).unwrap();
    assert_eq!(param_count(&cfg), model.params.num_scalars());
    let size = |name: &str| model.params.get(model.params.id(name).unwrap()).value.len();
    assert_eq!(size("tpm.lp.W") + size("tpm.lp.b"), 20512);
    assert_eq!(size("spm.local.W"), 112000);
    assert_eq!(size("spm.local.b"), 112000);
    for a in [Ablation::NoFem, Ablation::NoSpm, Ablation::NoOverlap] {
        let c = cfg.with_ablation(a);
        let m = Model32::build(&c, &mut Rng::new(0)).unwrap();
        assert_eq!(param_count(&c), m.params.num_scalars(), "{a:?}");
    }
    // no_spm: 28 patches x 22 windows; no_overlap: 12 x 6
    assert_eq!(cfg.with_ablation(Ablation::NoSpm).n_tokens(), 616);
    assert_eq!(cfg.with_ablation(Ablation::NoOverlap).n_tokens(), 72);
}

#[test]
fn ablation_token_and_param_deltas() {
    let cfg = ModelConfig::paper();
    let full = param_count(&cfg);
    let k = cfg.k;
    // no_fem drops the 1x1 block but doubles the patch time length (l/4):
    // local filter 2*c*k*T, 47 windows per patch, larger embedding and head
    let no_fem = cfg.with_ablation(Ablation::NoFem);
    assert_eq!(no_fem.t_patch(), 250);
    assert_eq!(no_fem.n_tokens(), 12 * 47);
    let fem_block = k * k + k + 2 * k;
    let grown = 2 * 28 * k * (250 - 125) + (564 - 264) * 32 + (564 - 264) * 32 * 2;
    assert_eq!(param_count(&no_fem) + fem_block, full + grown);
    assert_ne!(param_count(&no_fem), full);
    // no_spm: local filter and global block removed, 28 patches of 22 windows
    let no_spm = cfg.with_ablation(Ablation::NoSpm);
    let spm_block = 2 * 28 * k * 125 + (k * k * 28 + k + 2 * k);
    assert_eq!(param_count(&no_spm) + spm_block, full + (616 - 264) * 32 * 3);
    // no_overlap shrinks the positional embedding and the head
    let d = full - param_count(&cfg.with_ablation(Ablation::NoOverlap));
    assert_eq!(d, (264 - 72) * 32 + (264 - 72) * 32 * 2);
}

#[test]
fn seeded_build_and_eval_forward_are_deterministic() {
    let cfg = ModelConfig::toy();
    let a = Model32::build(&cfg, &mut Rng::new(99)).unwrap();
    let b = Model32::build(&cfg, &mut Rng::new(99)).unwrap();
    let c = Model32::build(&cfg, &mut Rng::new(100)).unwrap();
    assert_eq!(checkpoint::encode(&a).unwrap(), checkpoint::encode(&b).unwrap());
    assert_ne!(checkpoint::encode(&a).unwrap(), checkpoint::encode(&c).unwrap());
    let x = random_input(&mut Rng::new(5), 3, &cfg);
    let p1 = a.predict_proba(x.clone()).unwrap();
    let p2 = a.predict_proba(x).unwrap();
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&p1), bits(&p2));
}

#[test]
fn train_forward_replays_under_same_seed() {
    let cfg = ModelConfig::toy();
    let x = random_input(&mut Rng::new(5), 4, &cfg);
    let run = || {
        let mut m = Model32::build(&cfg, &mut Rng::new(3)).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let tr = m.forward(&mut tape, xv, Mode::Train, &mut Rng::new(8)).unwrap();
        tape.value(tr.logits).clone()
    };
    assert_eq!(run(), run());
}

fn random_config(rng: &mut Rng) -> ModelConfig {
    let pick = |rng: &mut Rng, lo: usize, hi: usize| lo + (rng.next_u64() % (hi - lo + 1) as u64) as usize;
    let c = pick(rng, 2, 6);
    let l = 8 * pick(rng, 4, 12);
    let t = l / 8;
    let l_t = pick(rng, 1, t);
    let n_head = pick(rng, 1, 3);
    ModelConfig {
        c,
        l,
        f_s: 16,
        k: pick(rng, 1, 4),
        temporal_kernel_len: pick(rng, 1, 9),
        local_graphs: chunked_graphs(c, pick(rng, 1, c)),
        l_t,
        l_step: pick(rng, 1, 4),
        l_token: n_head * pick(rng, 1, 3),
        n_head,
        n_layers: pick(rng, 1, 2),
        ffn_mult: pick(rng, 1, 4),
        dropout_p: 0.25,
        n_classes: 2,
        positional_embedding: rng.bernoulli(0.5),
        ablation: [Ablation::Full, Ablation::NoFem, Ablation::NoSpm, Ablation::NoOverlap][pick(rng, 0, 3)],
        leaky_slope: 0.01,
        token_layout: TokenLayout::PatchWindow,
    }
    .with_ablation(Ablation::Full)
}

#[test]
fn pipeline_shape_law_on_random_configs() {
    let mut rng = Rng::new(2718);
    for trial in 0..16 {
        let mut cfg = random_config(&mut rng);
        cfg = cfg.with_ablation([Ablation::Full, Ablation::NoFem, Ablation::NoSpm, Ablation::NoOverlap][trial % 4]);
        cfg.validate().unwrap();
        let mut model = Model32::build(&cfg, &mut rng).unwrap();
        assert_eq!(param_count(&cfg), model.params.num_scalars());
        let b = 2;
        let mut tape = Tape::new();
        let x = tape.constant(random_input(&mut rng, b, &cfg));
        let tr = model.forward(&mut tape, x, Mode::Train, &mut rng.fork("fwd")).unwrap();
        let (k, c, l) = (cfg.k, cfg.c, cfg.l);
        let t8 = if cfg.ablation == Ablation::NoFem { l / 4 } else { l / 8 };
        let p = if cfg.ablation == Ablation::NoSpm { c } else { cfg.local_graphs.len() + 1 };
        let step = if cfg.ablation == Ablation::NoOverlap { cfg.l_t } else { cfg.l_step };
        let q = p * ((t8 - cfg.l_t) / step + 1);
        assert_eq!(tape.shape(tr.temporal), &[b, k, c, l / 4], "{cfg:?}");
        assert_eq!(tape.shape(tr.enhanced), &[b, k, c, t8]);
        assert_eq!(tape.shape(tr.spatial), &[b, p, k, t8]);
        assert_eq!(tape.shape(tr.tokens), &[b, q, cfg.l_token]);
        assert_eq!(tape.shape(tr.logits), &[b, cfg.n_classes]);
    }
}

#[test]
fn aggregate_matches_loop_oracle_exactly() {
    let mut rng = Rng::new(31);
    for _ in 0..25 {
        let (b, c, d) =
            (1 + rng.next_u64() as usize % 3, 2 + rng.next_u64() as usize % 6, 1 + rng.next_u64() as usize % 7);
        let n_regions = 1 + rng.next_u64() as usize % c;
        let mut regions: Vec<Vec<usize>> = vec![Vec::new(); n_regions];
        for ch in 0..c {
            regions[if ch < n_regions { ch } else { rng.next_u64() as usize % n_regions }].push(ch);
        }
        let z: Vec<f64> = (0..b * c * d).map(|_| rng.uniform(-5.0, 5.0)).collect();
        let mut tape = Tape::<f64>::new();
        let zv = tape.constant(Tensor::new(&[b, c, d], z.clone()).unwrap());
        let out = stages::aggregate(&mut tape, zv, &regions).unwrap();
        let got = tape.value(out);
        assert_eq!(got.shape(), &[b, n_regions, d]);
        for bi in 0..b {
            for (r, region) in regions.iter().enumerate() {
                for j in 0..d {
                    let mut acc = 0.0;
                    for &ch in region {
                        acc += z[(bi * c + ch) * d + j];
                    }
                    let want = acc / region.len() as f64;
                    assert_eq!(got.data()[(bi * n_regions + r) * d + j], want);
                }
            }
        }
    }
}

#[test]
fn swapping_local_graphs_permutes_token_blocks() {
    let mut cfg = ModelConfig::toy();
    cfg.c = 6;
    cfg.local_graphs = chunked_graphs(6, 2);
    cfg.positional_embedding = false;
    let mut swapped = cfg.clone();
    swapped.local_graphs.swap(0, 2);
    let x = random_input(&mut Rng::new(4), 2, &cfg);
    let tokens = |cfg: &ModelConfig| {
        let mut m = Model32::build(cfg, &mut Rng::new(12)).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let tr = m.forward(&mut tape, xv, Mode::Eval, &mut Rng::new(0)).unwrap();
        tape.value(tr.tokens).clone()
    };
    let (a, b) = (tokens(&cfg), tokens(&swapped));
    let n_w = cfg.n_windows();
    let q = cfg.n_tokens();
    let block = n_w * cfg.l_token;
    let perm = [2usize, 1, 0, 3];
    for bi in 0..2 {
        for (dst, &src) in perm.iter().enumerate() {
            let base = bi * q * cfg.l_token;
            assert_eq!(
                &b.data()[base + dst * block..base + (dst + 1) * block],
                &a.data()[base + src * block..base + (src + 1) * block]
            );
        }
    }
    let mut sa: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
    let mut sb: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
    sa.sort_unstable();
    sb.sort_unstable();
    assert_eq!(sa, sb);
}

#[test]
fn window_across_patches_layout_runs() {
    let cfg = ModelConfig { token_layout: TokenLayout::WindowAcrossPatches, ..ModelConfig::toy() };
    let mut m = Model32::build(&cfg, &mut Rng::new(1)).unwrap();
    assert_eq!(param_count(&cfg), m.params.num_scalars());
    let mut tape = Tape::new();
    let x = tape.constant(random_input(&mut Rng::new(2), 2, &cfg));
    let tr = m.forward(&mut tape, x, Mode::Train, &mut Rng::new(3)).unwrap();
    assert_eq!(tape.shape(tr.tokens), &[2, cfg.n_windows(), cfg.l_token]);
}

#[test]
fn input_shape_mismatch_is_dimension_error() {
    let cfg = ModelConfig::toy();
    let m = Model32::build(&cfg, &mut Rng::new(1)).unwrap();
    let err = m.predict_proba(Tensor::zeros(&[1, 1, 3, 64])).unwrap_err();
    assert!(matches!(err, Error::Dimension(_)), "{err}");
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let cfg = ModelConfig::toy();
    let mut m = Model32::build(&cfg, &mut Rng::new(21)).unwrap();
    let mut tape = Tape::new();
    let x = random_input(&mut Rng::new(22), 4, &cfg);
    let xv = tape.constant(x.clone());
    m.forward(&mut tape, xv, Mode::Train, &mut Rng::new(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&m, &path).unwrap();
    let back: Model32 = checkpoint::load(&path).unwrap();
    assert_eq!(back.config(), m.config());
    assert_eq!(back.buffers, m.buffers);
    for (p, q) in m.params.iter().zip(back.params.iter()) {
        assert_eq!(p.name, q.name);
        assert_eq!(p.value, q.value);
    }
    assert_eq!(m.predict_proba(x.clone()).unwrap(), back.predict_proba(x).unwrap());
    let wide: Model64 = checkpoint::load(&path).unwrap();
    assert_eq!(wide.params.num_scalars(), m.params.num_scalars());
}

#[test]
fn corrupted_checkpoints_are_rejected_with_offsets() {
    let m = Model32::build(&ModelConfig::toy(), &mut Rng::new(21)).unwrap();
    let bytes = checkpoint::encode(&m).unwrap();
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x40;
    assert!(matches!(checkpoint::decode::<f32>(&flipped), Err(Error::Format { .. })));
    assert!(matches!(checkpoint::decode::<f32>(&bytes[..bytes.len() - 9]), Err(Error::Format { .. })));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    match checkpoint::decode::<f32>(&magic) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
        other => panic!("unexpected {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn token_count_formula(p in 1usize..20, t in 1usize..200, l_t in 1usize..200, step in 1usize..30) {
        prop_assume!(l_t <= t);
        let n_w = patchformer::model::pooled_len(t, l_t, step);
        prop_assert_eq!(n_w, (t - l_t) / step + 1);
        prop_assert!(p * n_w >= p);
    }
}
