use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::SegmentSet;
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Parameters of the synthetic attention dataset. Class-1 segments carry a
/// sinusoid of `amplitude` at `freq_hz` on `channels`; every segment has
/// unit-scale 1/f noise, and each subject scales its signals by a gain drawn
/// from `1 ± gain_jitter`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub segs_per_class: usize,
    pub c: usize,
    pub l: usize,
    pub f_s: u32,
    pub amplitude: f64,
    pub freq_hz: f64,
    /// Channels carrying the oscillation; empty means the first half.
    pub channels: Vec<usize>,
    pub gain_jitter: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_subjects: 6,
            segs_per_class: 40,
            c: 4,
            l: 64,
            f_s: 32,
            amplitude: 2.0,
            freq_hz: 10.0,
            channels: Vec::new(),
            gain_jitter: 0.2,
        }
    }
}

impl SynthSpec {
    pub fn effect_channels(&self) -> Vec<usize> {
        if self.channels.is_empty() {
            (0..self.c.div_ceil(2)).collect()
        } else {
            self.channels.clone()
        }
    }
}

/// Paul Kellet's pink filter applied to white Gaussian noise.
struct Pink {
    b: [f64; 7],
}

impl Pink {
    fn new() -> Self {
        Self { b: [0.0; 7] }
    }

    fn next(&mut self, white: f64) -> f64 {
        let b = &mut self.b;
        b[0] = 0.99886 * b[0] + white * 0.0555179;
        b[1] = 0.99332 * b[1] + white * 0.0750759;
        b[2] = 0.96900 * b[2] + white * 0.1538520;
        b[3] = 0.86650 * b[3] + white * 0.3104856;
        b[4] = 0.55000 * b[4] + white * 0.5329522;
        b[5] = -0.7616 * b[5] - white * 0.0168980;
        let out = b[0] + b[1] + b[2] + b[3] + b[4] + b[5] + b[6] + white * 0.5362;
        b[6] = white * 0.115926;
        out * 0.25
    }
}

const PINK_WARMUP: usize = 256;

pub fn synth_generate(spec: &SynthSpec, rng: &mut Rng) -> Result<SegmentSet> {
    if spec.n_subjects == 0 || spec.c == 0 || spec.l == 0 || spec.f_s == 0 {
        return Err(Error::Parameter("synthetic sizes must be positive".into()));
    }
    let channels = spec.effect_channels();
    if let Some(&bad) = channels.iter().find(|&&ch| ch >= spec.c) {
        return Err(Error::Parameter(format!("effect channel {bad} out of range for c = {}", spec.c)));
    }
    let seed = rng.seed();
    let n = spec.n_subjects * spec.segs_per_class * 2;
    let mut x = Vec::with_capacity(n * spec.c * spec.l);
    let mut y = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    let width = spec.n_subjects.to_string().len().max(2);
    for s in 0..spec.n_subjects {
        let id = format!("S{:0width$}", s + 1);
        let mut sr = rng.fork(&id);
        let gain = 1.0 + spec.gain_jitter * sr.uniform(-1.0, 1.0);
        for _ in 0..spec.segs_per_class {
            for label in [0u8, 1] {
                let phase = sr.uniform(0.0, TAU);
                for ch in 0..spec.c {
                    let mut pink = Pink::new();
                    for _ in 0..PINK_WARMUP {
                        pink.next(sr.normal());
                    }
                    let osc = label == 1 && channels.contains(&ch);
                    for t in 0..spec.l {
                        let mut v = pink.next(sr.normal());
                        if osc {
                            v += spec.amplitude * (TAU * spec.freq_hz * t as f64 / spec.f_s as f64 + phase).sin();
                        }
                        x.push((gain * v) as f32);
                    }
                }
                y.push(label);
                ids.push(id.clone());
            }
        }
    }
    let names = (0..spec.c).map(|i| format!("ch{i}")).collect();
    let mut ds = SegmentSet::new(x, y, ids, spec.f_s, names, spec.l)?;
    let mut meta = serde_json::to_value(spec)?;
    let obj = meta.as_object_mut().expect("spec serializes to an object");
    obj.insert("channels".into(), serde_json::json!(channels));
    obj.insert("generator".into(), "synthetic_oscillation".into());
    obj.insert("noise".into(), "pink_kellet".into());
    obj.insert("null".into(), (spec.amplitude == 0.0).into());
    obj.insert("seed".into(), seed.into());
    ds.generator_metadata = meta;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_balance() {
        let spec = SynthSpec { segs_per_class: 40, ..Default::default() };
        let ds = synth_generate(&spec, &mut Rng::new(1)).unwrap();
        assert_eq!(ds.len(), 480);
        assert_eq!(ds.class_counts(), [240, 240]);
        assert_eq!(ds.subjects().len(), 6);
    }

    #[test]
    fn metadata_flags_null_dataset() {
        let spec = SynthSpec { amplitude: 0.0, n_subjects: 2, segs_per_class: 1, ..Default::default() };
        let ds = synth_generate(&spec, &mut Rng::new(1)).unwrap();
        assert_eq!(ds.generator_metadata["null"], true);
        assert_eq!(ds.generator_metadata["seed"], 1);
    }

    #[test]
    fn same_seed_same_data() {
        let spec = SynthSpec { n_subjects: 2, segs_per_class: 3, ..Default::default() };
        let a = synth_generate(&spec, &mut Rng::new(4)).unwrap();
        let b = synth_generate(&spec, &mut Rng::new(4)).unwrap();
        let c = synth_generate(&spec, &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn pink_noise_has_unit_order_scale() {
        let mut rng = Rng::new(3);
        let mut p = Pink::new();
        let v: Vec<f64> = (0..20000).map(|_| p.next(rng.normal())).collect();
        let var = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        assert!(var > 0.1 && var < 10.0, "{var}");
    }
}
