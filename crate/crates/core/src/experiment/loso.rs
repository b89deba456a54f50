use std::path::PathBuf;

use rayon::prelude::*;

use super::metrics::{accuracy, macro_f1, roc_auc};
use super::report::{ExperimentReport, FoldHistory, SubjectRow};
use super::train::{fit, predict, EpochRecord, TrainConfig};
use crate::data::{loso_split, SegmentSet};
use crate::error::{Error, Result};
use crate::model::{checkpoint, Ablation, ModelConfig, PatchFormerModel};
use crate::numerics::Rng;

/// Patch lengths of the temporal-patching sweep.
pub const SWEEP_LENGTHS: [usize; 5] = [10, 20, 30, 40, 50];

pub type EpochObserver<'a> = &'a (dyn Fn(&str, &EpochRecord) + Sync);

#[derive(Default, Clone)]
pub struct LosoOptions<'a> {
    /// Worker threads for folds; 0 or 1 runs them in order on this thread.
    pub parallel_folds: usize,
    /// Writes the selected model of each fold as `fold_<subject>.ckpt`.
    pub checkpoint_dir: Option<PathBuf>,
    pub on_epoch: Option<EpochObserver<'a>>,
}

fn check_inputs(ds: &SegmentSet, mc: &ModelConfig, tc: &TrainConfig) -> Result<()> {
    mc.validate()?;
    tc.validate()?;
    if ds.c != mc.c || ds.l != mc.l {
        return Err(Error::Config(format!(
            "segments are {}x{} but the model expects c = {}, l = {}",
            ds.c, ds.l, mc.c, mc.l
        )));
    }
    if ds.subjects().len() < 2 {
        return Err(Error::Parameter("leave-one-subject-out needs at least two subjects".into()));
    }
    Ok(())
}

fn run_fold(
    ds: &SegmentSet,
    mc: &ModelConfig,
    tc: &TrainConfig,
    subject: &str,
    opts: &LosoOptions,
) -> Result<(SubjectRow, FoldHistory)> {
    let root = Rng::new(tc.seed).fork(&format!("fold:{subject}"));
    let fold = loso_split(ds, subject, tc.val_frac, &mut root.fork("split"))?;
    let mut model = PatchFormerModel::<f32>::build(mc, &mut root.fork("init"))?;
    let mut observe = |rec: &EpochRecord| {
        if let Some(f) = opts.on_epoch {
            f(subject, rec);
        }
    };
    let out = fit(&mut model, &fold.train, &fold.val, tc, &mut root.fork("train"), &mut observe)?;
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
        checkpoint::save(&out.best, dir.join(format!("fold_{subject}.ckpt")))?;
    }
    let p = predict(&out.best, &fold.test, tc.batch_size)?;
    let labels: Vec<usize> = fold.test.y.iter().map(|&v| v as usize).collect();
    let row = SubjectRow {
        subject: subject.to_string(),
        acc: accuracy(&p.preds, &labels)?,
        auc: roc_auc(&p.scores, &labels)?,
        macro_f1: macro_f1(&p.preds, &labels, mc.n_classes)?,
        n_test: labels.len(),
        best_epoch: out.best_epoch,
        best_val_acc: out.best_val_acc,
    };
    Ok((row, FoldHistory { subject: subject.to_string(), history: out.history }))
}

fn run_labeled(
    ds: &SegmentSet,
    mc: &ModelConfig,
    tc: &TrainConfig,
    label: &str,
    opts: &LosoOptions,
) -> Result<ExperimentReport> {
    check_inputs(ds, mc, tc)?;
    let subjects = ds.subjects();
    let one =
        |s: &String| run_fold(ds, mc, tc, s, opts).map_err(|e| Error::Fold { subject: s.clone(), source: Box::new(e) });
    let results: Vec<Result<(SubjectRow, FoldHistory)>> = if opts.parallel_folds > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.parallel_folds)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| subjects.par_iter().map(one).collect())
    } else {
        subjects.iter().map(one).collect()
    };
    let (rows, histories): (Vec<_>, Vec<_>) = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    ExperimentReport::new(label, mc, tc, rows, histories)
}

/// Leave-one-subject-out over every subject in `ds`, in sorted subject order.
/// Each fold's split, initialization and batching draw from streams forked
/// from `(tc.seed, subject)`, so results do not depend on fold scheduling.
pub fn run_loso(ds: &SegmentSet, mc: &ModelConfig, tc: &TrainConfig, opts: &LosoOptions) -> Result<ExperimentReport> {
    run_labeled(ds, mc, tc, mc.ablation.name(), opts)
}

pub fn ablate(
    ds: &SegmentSet,
    mc: &ModelConfig,
    tc: &TrainConfig,
    variant: Ablation,
    opts: &LosoOptions,
) -> Result<ExperimentReport> {
    run_loso(ds, &mc.with_ablation(variant), tc, opts)
}

/// One report per temporal patch length, labeled by the length.
pub fn sweep_patch_length(
    ds: &SegmentSet,
    mc: &ModelConfig,
    tc: &TrainConfig,
    lengths: &[usize],
    opts: &LosoOptions,
) -> Result<Vec<ExperimentReport>> {
    let t = mc.t_patch();
    let configs = lengths
        .iter()
        .map(|&l_t| {
            if l_t == 0 || l_t > t {
                return Err(Error::Parameter(format!("patch length {l_t} outside 1..={t} (post-CNN time length)")));
            }
            let mut c = mc.clone();
            c.l_t = l_t;
            if c.ablation == Ablation::NoOverlap {
                c.l_step = l_t;
            }
            c.validate().map_err(|e| Error::Parameter(format!("patch length {l_t}: {e}")))?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    configs.iter().map(|c| run_labeled(ds, c, tc, &c.l_t.to_string(), opts)).collect()
}
