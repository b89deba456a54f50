use patchformer::data::{synth_generate, SynthSpec};
use patchformer::experiment::*;
use patchformer::model::Ablation;
use patchformer::numerics::{Tape, Tensor};
use patchformer::{Error, Model32, ModelConfig, Rng};
use proptest::prelude::*;

fn auc_pair_oracle(scores: &[f64], labels: &[usize]) -> f64 {
    let (mut good, mut ties, mut pairs) = (0.0, 0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if si > sj {
                    good += 1.0;
                } else if si == sj {
                    ties += 1.0;
                }
            }
        }
    }
    (good + 0.5 * ties) / pairs
}

fn f1_oracle(preds: &[usize], labels: &[usize], k: usize) -> f64 {
    let mut sum = 0.0;
    for c in 0..k {
        let tp = preds.iter().zip(labels).filter(|(p, l)| **p == c && **l == c).count() as f64;
        let pp = preds.iter().filter(|p| **p == c).count() as f64;
        let ap = labels.iter().filter(|l| **l == c).count() as f64;
        let precision = if pp > 0.0 { tp / pp } else { 0.0 };
        let recall = if ap > 0.0 { tp / ap } else { 0.0 };
        if precision + recall > 0.0 {
            sum += 2.0 * tp / (pp + ap);
        }
    }
    100.0 * sum / k as f64
}

fn scored_case() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
    (2usize..=50).prop_flat_map(|n| {
        (proptest::collection::vec(0u8..6, n), proptest::collection::vec(0usize..2, n)).prop_map(|(s, mut y)| {
            y[0] = 0;
            y[1] = 1;
            (s.into_iter().map(|v| v as f64 / 5.0).collect(), y)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn auc_equals_pair_count((scores, labels) in scored_case()) {
        prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), auc_pair_oracle(&scores, &labels));
    }

    #[test]
    fn auc_invariant_under_monotone_transform((scores, labels) in scored_case()) {
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), roc_auc(&warped, &labels).unwrap());
    }

    #[test]
    fn f1_and_accuracy_match_definitions(
        pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..=50)
    ) {
        let (p, y): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let want_acc = 100.0 * p.iter().zip(&y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64;
        prop_assert_eq!(accuracy(&p, &y).unwrap(), want_acc);
        let got = macro_f1(&p, &y, 3).unwrap();
        prop_assert!((got - f1_oracle(&p, &y, 3)).abs() < 1e-12);
    }

    #[test]
    fn f1_symmetric_under_relabeling(pairs in proptest::collection::vec((0usize..2, 0usize..2), 1..=50)) {
        let (p, y): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let flip = |v: &[usize]| v.iter().map(|x| 1 - x).collect::<Vec<_>>();
        prop_assert!((macro_f1(&p, &y, 2).unwrap() - macro_f1(&flip(&p), &flip(&y), 2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_shift_invariant(
        logits in proptest::collection::vec(-20.0f64..20.0, 6),
        shift in -100.0f64..100.0,
    ) {
        let labels = [0usize, 2];
        let ce = |z: Vec<f64>| {
            let mut tape = Tape::<f64>::new();
            let v = tape.constant(Tensor::new(&[2, 3], z).unwrap());
            let l = cross_entropy(&mut tape, v, &labels).unwrap();
            tape.value(l).item().unwrap()
        };
        let base = ce(logits.clone());
        let moved = ce(logits.iter().map(|v| v + shift).collect());
        prop_assert!((base - moved).abs() < 1e-9);
    }
}

#[test]
fn cross_entropy_examples() {
    let ce = |z: &[f64], k: usize, y: usize| {
        let mut tape = Tape::<f64>::new();
        let v = tape.constant(Tensor::from_f64(&[1, k], z).unwrap());
        let l = cross_entropy(&mut tape, v, &[y]).unwrap();
        tape.value(l).item().unwrap()
    };
    assert!((ce(&[0.0, 0.0], 2, 0) - 2f64.ln()).abs() < 1e-12);
    assert!(ce(&[1000.0, 0.0], 2, 0).abs() < 1e-12);
    assert!((ce(&[0.3; 5], 5, 4) - 5f64.ln()).abs() < 1e-12);
    let mut tape = Tape::<f64>::new();
    let v = tape.constant(Tensor::zeros(&[1, 2]));
    assert!(matches!(cross_entropy(&mut tape, v, &[2]), Err(Error::Parameter(_))));
}

fn tiny_set() -> patchformer::data::SegmentSet {
    synth_generate(&SynthSpec { n_subjects: 1, segs_per_class: 4, ..Default::default() }, &mut Rng::new(1)).unwrap()
}

#[test]
fn tiny_overfit_reaches_full_train_accuracy() {
    let ds = tiny_set();
    let mut m = Model32::build(&ModelConfig::toy(), &mut Rng::new(2)).unwrap();
    let tc = TrainConfig { epochs: 300, batch_size: 8, ..Default::default() };
    let out = fit(&mut m, &ds, &ds.empty_like(), &tc, &mut Rng::new(3), &mut |_| {}).unwrap();
    assert_eq!(out.history.last().unwrap().steps, 300);
    let y: Vec<usize> = ds.y.iter().map(|&v| v as usize).collect();
    assert_eq!(accuracy(&predict(&out.best, &ds, 8).unwrap().preds, &y).unwrap(), 100.0);
}

#[test]
fn zero_learning_rate_only_moves_running_stats() {
    let ds = tiny_set();
    let mut m = Model32::build(&ModelConfig::toy(), &mut Rng::new(2)).unwrap();
    let before = m.clone();
    // lr0 must be positive; this one rounds to exactly 0 in f32
    let tc = TrainConfig { epochs: 2, batch_size: 4, lr0: f64::MIN_POSITIVE, weight_decay: 0.0, ..Default::default() };
    assert_eq!(f64::MIN_POSITIVE as f32, 0.0);
    fit(&mut m, &ds, &ds, &tc, &mut Rng::new(3), &mut |_| {}).unwrap();
    for (a, b) in before.params.iter().zip(m.params.iter()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
    assert_ne!(before.buffers, m.buffers);
}

#[test]
fn single_epoch_selects_epoch_one_and_history_replays() {
    let ds = tiny_set();
    let run = |epochs| {
        let mut m = Model32::build(&ModelConfig::toy(), &mut Rng::new(2)).unwrap();
        let tc = TrainConfig { epochs, batch_size: 3, ..Default::default() };
        fit(&mut m, &ds, &ds.subset(&[0, 1, 2, 3]), &tc, &mut Rng::new(3), &mut |_| {}).unwrap()
    };
    assert_eq!(run(1).best_epoch, 1);
    let (a, b) = (run(4), run(4));
    assert_eq!(a.history, b.history);
    let best = a.history.iter().map(|r| r.val_acc.unwrap()).fold(f64::MIN, f64::max);
    let first = a.history.iter().find(|r| r.val_acc.unwrap() == best).unwrap().epoch;
    assert_eq!(a.best_epoch, first);
}

#[test]
fn empty_training_set_and_non_finite_input_are_reported() {
    let ds = tiny_set();
    let mut m = Model32::build(&ModelConfig::toy(), &mut Rng::new(2)).unwrap();
    let tc = TrainConfig { epochs: 1, ..Default::default() };
    let err = fit(&mut m, &ds.empty_like(), &ds, &tc, &mut Rng::new(3), &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::Parameter(_)));
    let mut bad = ds.clone();
    bad.x[5] = f32::NAN;
    let err = fit(&mut m, &bad, &ds.empty_like(), &tc, &mut Rng::new(3), &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::Divergence { epoch: 1, .. }), "{err}");
}

fn small_loso_set(subjects: usize) -> patchformer::data::SegmentSet {
    synth_generate(&SynthSpec { n_subjects: subjects, segs_per_class: 6, ..Default::default() }, &mut Rng::new(5))
        .unwrap()
}

#[test]
fn loso_report_structure_and_reproducibility() {
    let ds = small_loso_set(3);
    let tc = TrainConfig { epochs: 3, batch_size: 8, seed: 4, ..Default::default() };
    let mc = ModelConfig::toy();
    let a = run_loso(&ds, &mc, &tc, &LosoOptions::default()).unwrap();
    assert_eq!(a.rows.len(), 3);
    let csv = a.to_csv().unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().last().unwrap().starts_with("mean±std,"));
    let mean = a.rows.iter().map(|r| r.acc).sum::<f64>() / 3.0;
    assert!((a.aggregate.acc.mean - mean).abs() < 1e-9);
    let b = run_loso(&ds, &mc, &tc, &LosoOptions { parallel_folds: 3, ..Default::default() }).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
}

#[test]
fn loso_rejects_mismatched_config_before_training() {
    let ds = small_loso_set(2);
    let mc = ModelConfig { l: 128, ..ModelConfig::toy() };
    let err = run_loso(&ds, &mc, &TrainConfig::default(), &LosoOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn ablations_label_reports_and_change_counts() {
    let ds = small_loso_set(2);
    let tc = TrainConfig { epochs: 1, batch_size: 8, ..Default::default() };
    let mc = ModelConfig::toy();
    let full = run_loso(&ds, &mc, &tc, &LosoOptions::default()).unwrap();
    for v in [Ablation::NoFem, Ablation::NoSpm, Ablation::NoOverlap] {
        let r = ablate(&ds, &mc, &tc, v, &LosoOptions::default()).unwrap();
        assert_eq!(r.label, v.name());
        assert_eq!(r.rows.len(), 2);
        assert_ne!(r.param_count, full.param_count);
    }
    assert!(Ablation::parse("no_tpm").is_err());
}

#[test]
fn sweep_rejects_lengths_beyond_patch_time() {
    let ds = small_loso_set(2);
    let err = sweep_patch_length(&ds, &ModelConfig::toy(), &TrainConfig::default(), &[2, 9], &LosoOptions::default())
        .unwrap_err();
    assert!(err.to_string().contains("patch length 9"), "{err}");
}

#[test]
fn sweep_emits_one_row_per_length() {
    let mc = ModelConfig::toy();
    let ds = small_loso_set(2);
    let tc = TrainConfig { epochs: 1, batch_size: 8, ..Default::default() };
    let reports = sweep_patch_length(&ds, &mc, &tc, &[2, 4, 6], &LosoOptions::default()).unwrap();
    let table = summary_table("l_t", &reports).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "l_t,ACC (%),AUC,F1-macro (%)");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("2,"));
}
