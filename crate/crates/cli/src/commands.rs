use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use patchformer::codec::canonical_json;
use patchformer::data::{
    downsample, import_csv, load_segments, loso_split, read_segments, save_segments, segment, stratified_split,
    synth_generate, Recording, SegmentSet, SynthSpec,
};
use patchformer::experiment::{
    ablate, accuracy, fit, macro_f1, predict, roc_auc, run_loso, summary_table, sweep_patch_length, EpochRecord,
    ExperimentReport, LosoOptions, TrainConfig, SWEEP_LENGTHS,
};
use patchformer::model::{checkpoint, param_count, verify, Ablation};
use patchformer::{Error, Model32, ModelConfig, Result, Rng};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::{parse_lengths, ModelArgs, TrainArgs};
use crate::manifest::RunManifest;
use crate::Command;

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SynthCmd {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub subjects: usize,
    #[arg(long, default_value_t = 40)]
    pub per_class: usize,
    #[arg(long, default_value_t = 4)]
    pub channels: usize,
    /// Segment length in samples.
    #[arg(long, default_value_t = 64)]
    pub length: usize,
    #[arg(long, default_value_t = 32)]
    pub fs: u32,
    #[arg(long, default_value_t = 2.0)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 10.0)]
    pub freq: f64,
    #[arg(long, default_value_t = 0.2)]
    pub gain_jitter: f64,
    /// Comma-separated channel indices carrying the oscillation.
    #[arg(long)]
    pub effect_channels: Option<String>,
    #[arg(long, env = "PATCHFORMER_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessCmd {
    /// Segment files whose segments are whole task periods.
    #[arg(long)]
    pub input: Vec<PathBuf>,
    /// CSV recording as FILE:SUBJECT:LABEL (header row of channel names).
    #[arg(long)]
    pub csv: Vec<String>,
    /// Sampling rate of the CSV recordings.
    #[arg(long, default_value_t = 1000)]
    pub csv_fs: u32,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 250)]
    pub target_fs: u32,
    /// Window length in seconds.
    #[arg(long, default_value_t = 4.0)]
    pub win: f64,
    #[arg(long, default_value_t = 0.5)]
    pub overlap: f64,
    /// Seconds kept from the start of each task period.
    #[arg(long, default_value_t = 20.0)]
    pub keep: f64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TrainCmd {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Hold this subject out and report its test metrics.
    #[arg(long)]
    pub test_subject: Option<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EvalCmd {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Score only this subject's segments.
    #[arg(long)]
    pub subject: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct LosoCmd {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Worker threads for folds.
    #[arg(long, default_value_t = 1)]
    pub parallel_folds: usize,
    /// Keep the selected model of every fold.
    #[arg(long)]
    pub save_checkpoints: bool,
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct AblateCmd {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Comma-separated variants.
    #[arg(long, default_value = "no_fem,no_spm,no_overlap")]
    pub variants: String,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, default_value_t = 1)]
    pub parallel_folds: usize,
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SweepCmd {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Comma-separated temporal patch lengths.
    #[arg(long, default_value = "10,20,30,40,50")]
    pub lengths: String,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, default_value_t = 1)]
    pub parallel_folds: usize,
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct GradcheckCmd {
    /// Random instances per kernel.
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    #[arg(long, env = "PATCHFORMER_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ReplayCmd {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded locations.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Absolute bound on the relative gradient error accepted by `gradcheck`.
const GRAD_TOLERANCE: f64 = 1e-5;

fn emit(v: serde_json::Value) {
    println!("{v}");
}

fn epoch_logger(label: &str) -> impl Fn(&str, &EpochRecord) + Sync + '_ {
    move |subject, r| {
        emit(json!({
            "event": "epoch",
            "label": label,
            "subject": subject,
            "epoch": r.epoch,
            "lr": r.lr,
            "train_loss": r.train_loss,
            "train_acc": r.train_acc,
            "val_acc": r.val_acc,
        }))
    }
}

fn resolved(mc: &ModelConfig, tc: &TrainConfig) -> serde_json::Value {
    json!({ "model": mc, "train": tc })
}

fn print_config(mc: &ModelConfig, tc: &TrainConfig) -> Result<()> {
    println!("{}", canonical_json(&resolved(mc, tc))?);
    Ok(())
}

struct Run {
    manifest: RunManifest,
    path: PathBuf,
    start: Instant,
}

impl Run {
    fn begin(
        cmd: &Command,
        path: PathBuf,
        resolved: serde_json::Value,
        seed: Option<u64>,
        artifacts: Vec<PathBuf>,
    ) -> Result<Self> {
        let manifest = RunManifest::new(cmd, resolved, seed, artifacts);
        manifest.write(&path)?;
        Ok(Self { manifest, path, start: Instant::now() })
    }

    fn finish(mut self) -> Result<()> {
        self.manifest.wall_clock_s = Some(self.start.elapsed().as_secs_f64());
        self.manifest.write(&self.path)
    }
}

fn manifest_beside(file: &Path) -> PathBuf {
    let mut name = file.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    file.with_file_name(name)
}

pub fn run(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Synth(c) => synth(cmd, c),
        Command::Preprocess(c) => preprocess(cmd, c),
        Command::Train(c) => train(cmd, c),
        Command::Eval(c) => eval(cmd, c),
        Command::Loso(c) => loso(cmd, c),
        Command::Ablate(c) => ablation(cmd, c),
        Command::Sweep(c) => sweep(cmd, c),
        Command::Gradcheck(c) => gradcheck(cmd, c),
        Command::Replay(c) => replay(c),
    }
}

fn synth(cmd: &Command, c: &SynthCmd) -> Result<()> {
    let channels = match &c.effect_channels {
        Some(s) => s
            .split(',')
            .map(|v| v.trim().parse().map_err(|_| Error::Parameter(format!("bad channel index {v:?}"))))
            .collect::<Result<Vec<usize>>>()?,
        None => Vec::new(),
    };
    let spec = SynthSpec {
        n_subjects: c.subjects,
        segs_per_class: c.per_class,
        c: c.channels,
        l: c.length,
        f_s: c.fs,
        amplitude: c.amplitude,
        freq_hz: c.freq,
        channels,
        gain_jitter: c.gain_jitter,
    };
    let run = Run::begin(cmd, manifest_beside(&c.out), json!({ "synth": spec }), Some(c.seed), vec![c.out.clone()])?;
    let ds = synth_generate(&spec, &mut Rng::new(c.seed))?;
    save_segments(&ds, &c.out)?;
    emit(json!({ "event": "done", "command": "synth", "n": ds.len(), "out": c.out, "null": spec.amplitude == 0.0 }));
    run.finish()
}

fn parse_csv_spec(s: &str) -> Result<(PathBuf, String, u8)> {
    let parts: Vec<&str> = s.rsplitn(3, ':').collect();
    if parts.len() != 3 {
        return Err(Error::Parameter(format!("--csv {s:?} is not FILE:SUBJECT:LABEL")));
    }
    let label = parts[0].parse::<u8>().map_err(|_| Error::Parameter(format!("bad label in {s:?}")))?;
    Ok((PathBuf::from(parts[2]), parts[1].to_string(), label))
}

fn preprocess(cmd: &Command, c: &PreprocessCmd) -> Result<()> {
    let run = Run::begin(
        cmd,
        manifest_beside(&c.out),
        json!({ "target_fs": c.target_fs, "win_s": c.win, "overlap": c.overlap, "keep_s": c.keep }),
        None,
        vec![c.out.clone()],
    )?;
    let mut recordings: Vec<Recording> = Vec::new();
    for spec in &c.csv {
        let (path, subject, label) = parse_csv_spec(spec)?;
        recordings.push(import_csv(&path, c.csv_fs, &subject, label)?);
    }
    for path in &c.input {
        let ds = read_segments(&std::fs::read(path)?)?;
        for i in 0..ds.len() {
            recordings.push(Recording::new(
                &ds.subject_ids[i],
                ds.channel_names.clone(),
                ds.segment(i).to_vec(),
                ds.f_s,
                ds.y[i],
            )?);
        }
    }
    let first = recordings.first().ok_or_else(|| Error::Parameter("no input recordings".into()))?;
    let mut parts = Vec::with_capacity(recordings.len());
    let mut warnings = Vec::new();
    for r in &recordings {
        if r.channels != first.channels {
            return Err(Error::Dimension(format!("subject {} has a different channel list", r.subject_id)));
        }
        let out = segment(&downsample(r, c.target_fs)?, c.win, c.overlap, c.keep)?;
        warnings.extend(out.warning);
        parts.push(out.segments);
    }
    let mut ds = SegmentSet::concat(&parts)?;
    ds.generator_metadata = json!({
        "preprocess": { "target_fs": c.target_fs, "win_s": c.win, "overlap": c.overlap, "keep_s": c.keep },
        "recordings": recordings.len(),
    });
    save_segments(&ds, &c.out)?;
    emit(json!({ "event": "done", "command": "preprocess", "n": ds.len(), "l": ds.l, "warnings": warnings }));
    run.finish()
}

fn labels(ds: &SegmentSet) -> Vec<usize> {
    ds.y.iter().map(|&v| v as usize).collect()
}

fn scores(model: &Model32, ds: &SegmentSet, batch: usize) -> Result<serde_json::Value> {
    let p = predict(model, ds, batch)?;
    let y = labels(ds);
    let auc = match roc_auc(&p.scores, &y) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(json!({
        "n": ds.len(),
        "acc": accuracy(&p.preds, &y)?,
        "auc": auc,
        "macro_f1": macro_f1(&p.preds, &y, model.config().n_classes)?,
    }))
}

fn train(cmd: &Command, c: &TrainCmd) -> Result<()> {
    let ds = load_segments(&c.data)?;
    let mc = c.model.resolve(Some(&ds))?;
    let tc = c.train.resolve()?;
    if c.print_config {
        return print_config(&mc, &tc);
    }
    let ckpt = c.out_dir.join("model.ckpt");
    let run = Run::begin(cmd, c.out_dir.join("manifest.json"), resolved(&mc, &tc), Some(tc.seed), vec![ckpt.clone()])?;
    let root = Rng::new(tc.seed).fork("train-command");
    let (train_set, val_set, test_set) = match &c.test_subject {
        Some(s) => {
            let f = loso_split(&ds, s, tc.val_frac, &mut root.fork("split"))?;
            (f.train, f.val, Some(f.test))
        }
        None => {
            let all: Vec<usize> = (0..ds.len()).collect();
            let (tr, va) = stratified_split(&ds, &all, tc.val_frac, &mut root.fork("split"))?;
            (ds.subset(&tr), ds.subset(&va), None)
        }
    };
    let mut model = Model32::build(&mc, &mut root.fork("init"))?;
    let log = epoch_logger("train");
    let subject = c.test_subject.clone().unwrap_or_default();
    let out = fit(&mut model, &train_set, &val_set, &tc, &mut root.fork("train"), &mut |r| log(&subject, r))?;
    checkpoint::save(&out.best, &ckpt)?;
    std::fs::write(c.out_dir.join("history.json"), canonical_json(&out.history)?)?;
    let test = test_set.map(|t| scores(&out.best, &t, tc.batch_size)).transpose()?;
    if let Some(t) = &test {
        std::fs::write(c.out_dir.join("test_metrics.json"), canonical_json(t)?)?;
    }
    emit(
        json!({ "event": "done", "command": "train", "best_epoch": out.best_epoch, "best_val_acc": out.best_val_acc, "test": test }),
    );
    run.finish()
}

fn eval(cmd: &Command, c: &EvalCmd) -> Result<()> {
    let run = match &c.out_dir {
        Some(d) => Some(Run::begin(cmd, d.join("manifest.json"), json!({}), None, vec![d.join("eval.json")])?),
        None => None,
    };
    let model: Model32 = checkpoint::load(&c.checkpoint)?;
    let mut ds = load_segments(&c.data)?;
    if let Some(s) = &c.subject {
        let idx: Vec<usize> = (0..ds.len()).filter(|&i| &ds.subject_ids[i] == s).collect();
        if idx.is_empty() {
            return Err(Error::Parameter(format!("unknown subject {s:?}")));
        }
        ds = ds.subset(&idx);
    }
    let metrics = scores(&model, &ds, 64)?;
    emit(json!({ "event": "eval", "metrics": metrics }));
    if let (Some(d), Some(run)) = (&c.out_dir, run) {
        std::fs::write(d.join("eval.json"), canonical_json(&metrics)?)?;
        run.finish()?;
    }
    Ok(())
}

fn report_done(command: &str, r: &ExperimentReport) {
    emit(json!({
        "event": "done",
        "command": command,
        "label": r.label,
        "rows": r.rows.len(),
        "acc": r.aggregate.acc,
        "auc": r.aggregate.auc,
        "macro_f1": r.aggregate.macro_f1,
        "param_count": r.param_count,
        "n_tokens": r.n_tokens,
    }));
}

fn loso(cmd: &Command, c: &LosoCmd) -> Result<()> {
    let ds = load_segments(&c.data)?;
    let mc = c.model.resolve(Some(&ds))?;
    let tc = c.train.resolve()?;
    if c.print_config {
        return print_config(&mc, &tc);
    }
    let artifacts = vec![c.out_dir.join("report.csv"), c.out_dir.join("report.json")];
    let run = Run::begin(cmd, c.out_dir.join("manifest.json"), resolved(&mc, &tc), Some(tc.seed), artifacts)?;
    let log = epoch_logger(mc.ablation.name());
    let opts = LosoOptions {
        parallel_folds: c.parallel_folds,
        checkpoint_dir: c.save_checkpoints.then(|| c.out_dir.join("checkpoints")),
        on_epoch: Some(&log),
    };
    let report = run_loso(&ds, &mc, &tc, &opts)?;
    report.save(&c.out_dir, "report")?;
    report_done("loso", &report);
    run.finish()
}

fn ablation(cmd: &Command, c: &AblateCmd) -> Result<()> {
    let ds = load_segments(&c.data)?;
    let mc = c.model.resolve(Some(&ds))?;
    let tc = c.train.resolve()?;
    let variants = c.variants.split(',').map(|v| Ablation::parse(v.trim())).collect::<Result<Vec<_>>>()?;
    for v in &variants {
        mc.with_ablation(*v).validate()?;
    }
    if c.print_config {
        return print_config(&mc, &tc);
    }
    let mut artifacts: Vec<PathBuf> = variants.iter().map(|v| c.out_dir.join(format!("{}.json", v.name()))).collect();
    artifacts.push(c.out_dir.join("ablation.csv"));
    let mut res = resolved(&mc, &tc);
    res["variants"] = json!(variants
        .iter()
        .map(|v| {
            let vc = mc.with_ablation(*v);
            json!({ "variant": v.name(), "param_count": param_count(&vc), "n_tokens": vc.n_tokens() })
        })
        .collect::<Vec<_>>());
    let run = Run::begin(cmd, c.out_dir.join("manifest.json"), res, Some(tc.seed), artifacts)?;
    let mut reports = Vec::new();
    for v in variants {
        let log = epoch_logger(v.name());
        let opts = LosoOptions { parallel_folds: c.parallel_folds, checkpoint_dir: None, on_epoch: Some(&log) };
        let r = ablate(&ds, &mc, &tc, v, &opts)?;
        r.save(&c.out_dir, v.name())?;
        report_done("ablate", &r);
        reports.push(r);
    }
    std::fs::write(c.out_dir.join("ablation.csv"), summary_table("variant", &reports)?)?;
    run.finish()
}

fn sweep(cmd: &Command, c: &SweepCmd) -> Result<()> {
    let ds = load_segments(&c.data)?;
    let mc = c.model.resolve(Some(&ds))?;
    let tc = c.train.resolve()?;
    let lengths = parse_lengths(&c.lengths)?;
    if c.print_config {
        return print_config(&mc, &tc);
    }
    let mut res = resolved(&mc, &tc);
    res["lengths"] = json!(lengths);
    res["paper_lengths"] = json!(SWEEP_LENGTHS);
    let run = Run::begin(cmd, c.out_dir.join("manifest.json"), res, Some(tc.seed), vec![c.out_dir.join("sweep.csv")])?;
    let log = epoch_logger("sweep");
    let opts = LosoOptions { parallel_folds: c.parallel_folds, checkpoint_dir: None, on_epoch: Some(&log) };
    let reports = sweep_patch_length(&ds, &mc, &tc, &lengths, &opts)?;
    for r in &reports {
        r.save(&c.out_dir, &format!("lt_{}", r.label))?;
        report_done("sweep", r);
    }
    std::fs::write(c.out_dir.join("sweep.csv"), summary_table("l_t", &reports)?)?;
    run.finish()
}

fn gradcheck(cmd: &Command, c: &GradcheckCmd) -> Result<()> {
    let mc = verify::grad_check_config();
    let run = match &c.out_dir {
        Some(d) => Some(Run::begin(
            cmd,
            d.join("manifest.json"),
            json!({ "model": mc }),
            Some(c.seed),
            vec![d.join("gradcheck.json")],
        )?),
        None => None,
    };
    let mut worst = 0.0f64;
    let mut records = Vec::new();
    for op in verify::op_suite(c.trials, c.seed)? {
        worst = worst.max(op.max_rel_error);
        let r = json!({ "event": "gradcheck", "op": op.op, "trials": op.trials, "max_rel_error": op.max_rel_error });
        emit(r.clone());
        records.push(r);
    }
    let full = verify::full_model(&mc, c.batch, c.seed)?;
    worst = worst.max(full.max_rel_error);
    let r = json!({
        "event": "gradcheck",
        "op": "full_model",
        "elements": full.elements_checked,
        "max_rel_error": full.max_rel_error,
    });
    emit(r.clone());
    records.push(r);
    emit(json!({ "event": "done", "command": "gradcheck", "max_rel_error": worst, "tolerance": GRAD_TOLERANCE }));
    if let (Some(d), Some(run)) = (&c.out_dir, run) {
        std::fs::write(d.join("gradcheck.json"), canonical_json(&records)?)?;
        run.finish()?;
    }
    if worst >= GRAD_TOLERANCE {
        return Err(Error::Contract(format!("max relative gradient error {worst:e} exceeds {GRAD_TOLERANCE:e}")));
    }
    Ok(())
}

fn replay(c: &ReplayCmd) -> Result<()> {
    let manifest = RunManifest::read(&c.manifest)?;
    let mut cmd = manifest.invocation;
    if let Command::Replay(_) = cmd {
        return Err(Error::Parameter("manifest records a replay".into()));
    }
    if let Some(dir) = &c.out_dir {
        cmd.redirect(dir.clone());
    }
    run(&cmd)
}
