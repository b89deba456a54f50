use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SegmentSet;
use crate::error::{Error, Result};

/// One continuous multi-channel recording with a single labeled task period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub subject_id: String,
    pub channels: Vec<String>,
    /// Channel-major `[c, n_samples]`, microvolts.
    pub samples: Vec<f32>,
    pub f_s: u32,
    pub task_label: u8,
    pub task_onset: usize,
    pub task_offset: usize,
}

impl Recording {
    pub fn new(subject_id: &str, channels: Vec<String>, samples: Vec<f32>, f_s: u32, task_label: u8) -> Result<Self> {
        let c = channels.len();
        if c == 0 || samples.len() % c != 0 {
            return Err(Error::Dimension(format!("{} samples do not split into {c} channels", samples.len())));
        }
        let n = samples.len() / c;
        let r =
            Self { subject_id: subject_id.into(), channels, samples, f_s, task_label, task_onset: 0, task_offset: n };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels.len();
        if c == 0 || self.samples.len() % c != 0 {
            return Err(Error::Dimension(format!("{} samples do not split into {c} channels", self.samples.len())));
        }
        if self.task_onset > self.task_offset || self.task_offset > self.n_samples() {
            return Err(Error::Parameter(format!(
                "task period {}..{} outside recording of {} samples",
                self.task_onset,
                self.task_offset,
                self.n_samples()
            )));
        }
        if self.task_label > 1 {
            return Err(Error::Parameter(format!("task label {} is not 0 or 1", self.task_label)));
        }
        if self.f_s == 0 {
            return Err(Error::Parameter("sampling rate must be positive".into()));
        }
        Ok(())
    }

    pub fn c(&self) -> usize {
        self.channels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len().checked_div(self.channels.len()).unwrap_or(0)
    }

    pub fn channel(&self, i: usize) -> &[f32] {
        let n = self.n_samples();
        &self.samples[i * n..(i + 1) * n]
    }
}

/// Integer decimation to `target_fs`, each output sample the mean of its
/// `factor`-sample block (moving-average anti-alias then keep every
/// `factor`-th value). Trailing samples that do not fill a block are dropped.
pub fn downsample(r: &Recording, target_fs: u32) -> Result<Recording> {
    if target_fs == 0 || r.f_s % target_fs != 0 {
        return Err(Error::Parameter(format!("cannot decimate {} Hz to {} Hz by an integer factor", r.f_s, target_fs)));
    }
    let factor = (r.f_s / target_fs) as usize;
    if factor == 1 {
        return Ok(r.clone());
    }
    let n_out = r.n_samples() / factor;
    let mut samples = Vec::with_capacity(r.c() * n_out);
    for ch in 0..r.c() {
        let x = r.channel(ch);
        samples
            .extend(x.chunks_exact(factor).map(|b| (b.iter().map(|&v| v as f64).sum::<f64>() / factor as f64) as f32));
    }
    Ok(Recording {
        samples,
        f_s: target_fs,
        task_onset: (r.task_onset / factor).min(n_out),
        task_offset: (r.task_offset / factor).min(n_out),
        ..r.clone()
    })
}

/// Output of [`segment`]; `warning` is set when nothing could be cut.
#[derive(Debug, Clone)]
pub struct Segmented {
    pub segments: SegmentSet,
    pub warning: Option<String>,
}

fn whole_samples(x: f64, what: &str) -> Result<usize> {
    let r = x.round();
    if (x - r).abs() > 1e-9 || r < 0.0 {
        return Err(Error::Parameter(format!("{what} = {x} is not a whole number of samples")));
    }
    Ok(r as usize)
}

/// Sliding windows of `win_s` seconds over the first `keep_s` seconds of
/// the task period. Adjacent windows share `overlap` of their length.
pub fn segment(r: &Recording, win_s: f64, overlap: f64, keep_s: f64) -> Result<Segmented> {
    r.validate()?;
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Parameter(format!("overlap {overlap} outside [0, 1)")));
    }
    let f = r.f_s as f64;
    let l = whole_samples(win_s * f, "window length")?;
    if l == 0 {
        return Err(Error::Parameter("window length must be positive".into()));
    }
    let step = whole_samples(l as f64 * (1.0 - overlap), "window step")?.max(1);
    let keep = whole_samples(keep_s * f, "keep length")?;
    let start = r.task_onset;
    let end = r.task_offset.min(start + keep);
    let span = end - start;
    let count = if span >= l { (span - l) / step + 1 } else { 0 };
    let mut set = SegmentSet::new(Vec::new(), Vec::new(), Vec::new(), r.f_s, r.channels.clone(), l)?;
    set.x.reserve(count * r.c() * l);
    for w in 0..count {
        let s = start + w * step;
        for ch in 0..r.c() {
            set.x.extend_from_slice(&r.channel(ch)[s..s + l]);
        }
        set.y.push(r.task_label);
        set.subject_ids.push(r.subject_id.clone());
    }
    let warning = (count == 0).then(|| {
        let msg = format!(
            "subject {}: {} samples kept, shorter than the {} sample window; no segments",
            r.subject_id, span, l
        );
        log::warn!("{msg}");
        msg
    });
    Ok(Segmented { segments: set, warning })
}

/// Reads a CSV with a header row of channel names and one row per sample.
/// The whole file is treated as one task period.
pub fn import_csv(path: impl AsRef<Path>, f_s: u32, subject_id: &str, task_label: u8) -> Result<Recording> {
    let mut rdr = csv::Reader::from_path(path)?;
    let channels: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let c = channels.len();
    let mut rows: Vec<Vec<f32>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != c {
            return Err(Error::Format {
                offset: (i + 2) as u64,
                message: format!("row has {} fields, expected {c}", rec.len()),
            });
        }
        let row = rec
            .iter()
            .map(|v| v.trim().parse::<f32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format { offset: (i + 2) as u64, message: format!("bad number: {e}") })?;
        rows.push(row);
    }
    let n = rows.len();
    let mut samples = vec![0.0f32; c * n];
    for (t, row) in rows.iter().enumerate() {
        for (ch, &v) in row.iter().enumerate() {
            samples[ch * n + t] = v;
        }
    }
    Recording::new(subject_id, channels, samples, f_s, task_label)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(f_s: u32, seconds: usize, value: impl Fn(usize) -> f32) -> Recording {
        let n = f_s as usize * seconds;
        let samples = (0..2 * n).map(|i| value(i % n)).collect();
        Recording::new("s1", vec!["Cz".into(), "Pz".into()], samples, f_s, 1).unwrap()
    }

    #[test]
    fn downsample_by_four() {
        let r = rec(1000, 4, |t| t as f32);
        let d = downsample(&r, 250).unwrap();
        assert_eq!(d.n_samples(), 1000);
        assert_eq!(d.f_s, 250);
        assert_eq!(d.channel(0)[0], 1.5);
    }

    #[test]
    fn downsample_identity_and_dc() {
        let r = rec(250, 2, |t| (t as f32).sin());
        assert_eq!(downsample(&r, 250).unwrap(), r);
        let dc = downsample(&rec(1000, 1, |_| 3.25), 250).unwrap();
        assert!(dc.samples.iter().all(|&v| v == 3.25));
    }

    #[test]
    fn non_integer_factor_rejected() {
        assert!(matches!(downsample(&rec(1000, 1, |_| 0.0), 300), Err(Error::Parameter(_))));
    }

    #[test]
    fn twenty_seconds_four_second_windows() {
        let r = rec(250, 20, |t| t as f32);
        let s = segment(&r, 4.0, 0.5, 20.0).unwrap();
        assert_eq!(s.segments.len(), 9);
        assert_eq!(s.segments.l, 1000);
        assert!(s.warning.is_none());
        // adjacent windows share half their samples
        assert_eq!(s.segments.segment(1)[0], 500.0);
        assert_eq!(segment(&r, 4.0, 0.0, 20.0).unwrap().segments.len(), 5);
    }

    #[test]
    fn keep_window_limits_extraction() {
        let r = rec(250, 40, |t| t as f32);
        assert_eq!(segment(&r, 4.0, 0.5, 20.0).unwrap().segments.len(), 9);
    }

    #[test]
    fn short_recording_yields_warning() {
        let s = segment(&rec(250, 3, |_| 0.0), 4.0, 0.5, 20.0).unwrap();
        assert_eq!(s.segments.len(), 0);
        assert!(s.warning.is_some());
    }

    #[test]
    fn csv_import_transposes_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        std::fs::write(&p, "Cz,Pz\n1,10\n2,20\n3,30\n").unwrap();
        let r = import_csv(&p, 250, "s9", 0).unwrap();
        assert_eq!(r.channel(1), &[10.0, 20.0, 30.0]);
        std::fs::write(&p, "Cz,Pz\n1,x\n").unwrap();
        assert!(matches!(import_csv(&p, 250, "s9", 0), Err(Error::Format { offset: 2, .. })));
    }
}
