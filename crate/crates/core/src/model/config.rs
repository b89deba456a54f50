use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture variant used by the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// Feature enhancement module bypassed.
    NoFem,
    /// Spatial patching bypassed; every channel becomes a patch.
    NoSpm,
    /// Temporal windows do not overlap (`l_step = l_t`).
    NoOverlap,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoFem => "no_fem",
            Ablation::NoSpm => "no_spm",
            Ablation::NoOverlap => "no_overlap",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "no_fem" => Ok(Ablation::NoFem),
            "no_spm" => Ok(Ablation::NoSpm),
            "no_overlap" => Ok(Ablation::NoOverlap),
            other => Err(Error::Parameter(format!(
                "unknown ablation variant {other:?} (expected full, no_fem, no_spm or no_overlap)"
            ))),
        }
    }
}

/// How temporal windows are turned into tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TokenLayout {
    /// One token per (spatial patch, window) pair, patch-major: `q = p * n_w`.
    #[default]
    PatchWindow,
    /// Experimental: one token per window spanning all patches, `q = n_w`.
    WindowAcrossPatches,
}

/// One group of channels covering a scalp region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalGraphSpec {
    /// 1-based group id.
    pub index: usize,
    pub channels: Vec<String>,
    /// Row indices into the channel axis, parallel to `channels`.
    pub indices: Vec<usize>,
}

impl LocalGraphSpec {
    pub fn c_n(&self) -> usize {
        self.indices.len()
    }
}

/// The 28-channel regional grouping used for the attention dataset.
pub const TABLE_ONE: [&[&str]; 11] = [
    &["Fp1", "Fp2"],
    &["AFF5", "AFz", "AFF6"],
    &["F1", "F2"],
    &["FC5", "FC1", "FC2", "FC6"],
    &["C3", "Cz", "C4"],
    &["CP5", "CP1", "CP2", "CP6"],
    &["P7", "P3", "Pz", "P4", "P8"],
    &["POz"],
    &["O1", "O2"],
    &["T7"],
    &["T8"],
];

/// Default channel order: the grouping above, flattened.
pub fn default_montage() -> Vec<String> {
    TABLE_ONE.iter().flat_map(|g| g.iter().map(|s| s.to_string())).collect()
}

/// The 11 regional groups resolved against [`default_montage`].
pub fn table_one_graphs() -> Vec<LocalGraphSpec> {
    graphs_for_montage(&default_montage()).expect("default montage covers every group")
}

/// Resolves the regional groups by channel name against a montage.
pub fn graphs_for_montage(montage: &[String]) -> Result<Vec<LocalGraphSpec>> {
    TABLE_ONE
        .iter()
        .enumerate()
        .map(|(n, names)| {
            let indices = names
                .iter()
                .map(|name| {
                    montage
                        .iter()
                        .position(|m| m.eq_ignore_ascii_case(name))
                        .ok_or_else(|| Error::Config(format!("channel {name} of local graph {} not in montage", n + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(LocalGraphSpec { index: n + 1, channels: names.iter().map(|s| s.to_string()).collect(), indices })
        })
        .collect()
}

/// Groups of `size` consecutive channels; the last group may be smaller.
pub fn chunked_graphs(c: usize, size: usize) -> Vec<LocalGraphSpec> {
    (0..c)
        .collect::<Vec<_>>()
        .chunks(size.max(1))
        .enumerate()
        .map(|(n, idx)| LocalGraphSpec {
            index: n + 1,
            channels: idx.iter().map(|i| format!("ch{i}")).collect(),
            indices: idx.to_vec(),
        })
        .collect()
}

/// Every architecture hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// EEG channels.
    pub c: usize,
    /// Segment length in samples.
    pub l: usize,
    /// Sampling rate in Hz.
    pub f_s: u32,
    /// CNN kernel count.
    pub k: usize,
    pub temporal_kernel_len: usize,
    pub local_graphs: Vec<LocalGraphSpec>,
    pub l_t: usize,
    pub l_step: usize,
    pub l_token: usize,
    pub n_head: usize,
    pub n_layers: usize,
    pub ffn_mult: usize,
    pub dropout_p: f64,
    pub n_classes: usize,
    pub positional_embedding: bool,
    pub ablation: Ablation,
    pub leaky_slope: f64,
    pub token_layout: TokenLayout,
}

/// `round(0.5 * f_s)`.
pub fn half_second_kernel(f_s: u32) -> usize {
    (0.5 * f_s as f64).round() as usize
}

impl ModelConfig {
    /// Recipe for 28-channel, 4 s segments at 250 Hz.
    pub fn paper() -> Self {
        Self {
            c: 28,
            l: 1000,
            f_s: 250,
            k: 32,
            temporal_kernel_len: half_second_kernel(250),
            local_graphs: table_one_graphs(),
            l_t: 20,
            l_step: 5,
            l_token: 32,
            n_head: 32,
            n_layers: 4,
            ffn_mult: 4,
            dropout_p: 0.5,
            n_classes: 2,
            positional_embedding: true,
            ablation: Ablation::Full,
            leaky_slope: 0.01,
            token_layout: TokenLayout::PatchWindow,
        }
    }

    /// [`ModelConfig::paper`] with the `(1, 100)` temporal kernel.
    pub fn paper_kernel_100() -> Self {
        Self { temporal_kernel_len: 100, ..Self::paper() }
    }

    /// Small configuration used for gradient checks and desk-scale runs:
    /// 4 channels, 64 samples at 32 Hz, 4 kernels, 8-wide tokens, 2 heads,
    /// one encoder layer.
    pub fn toy() -> Self {
        Self {
            c: 4,
            l: 64,
            f_s: 32,
            k: 4,
            temporal_kernel_len: half_second_kernel(32),
            local_graphs: chunked_graphs(4, 2),
            l_t: 4,
            l_step: 2,
            l_token: 8,
            n_head: 2,
            n_layers: 1,
            ffn_mult: 4,
            dropout_p: 0.5,
            n_classes: 2,
            positional_embedding: true,
            ablation: Ablation::Full,
            leaky_slope: 0.01,
            token_layout: TokenLayout::PatchWindow,
        }
    }

    /// [`ModelConfig::toy`] stretched to 512 samples at 128 Hz so the patch
    /// time length is 64 and patch lengths up to 50 fit.
    pub fn toy_long() -> Self {
        Self { l: 512, f_s: 128, temporal_kernel_len: half_second_kernel(128), ..Self::toy() }
    }

    pub const PRESETS: [&'static str; 4] = ["paper", "paper_kernel_100", "toy", "toy_long"];

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "paper_kernel_100" => Ok(Self::paper_kernel_100()),
            "toy" => Ok(Self::toy()),
            "toy_long" => Ok(Self::toy_long()),
            other => Err(Error::Parameter(format!(
                "unknown preset {other:?} (expected one of {})",
                Self::PRESETS.join(", ")
            ))),
        }
    }

    /// Copy with the given ablation applied; `NoOverlap` also sets `l_step = l_t`.
    pub fn with_ablation(&self, ablation: Ablation) -> Self {
        let mut c = self.clone();
        c.ablation = ablation;
        if ablation == Ablation::NoOverlap {
            c.l_step = c.l_t;
        }
        c
    }

    pub fn uses_fem(&self) -> bool {
        self.ablation != Ablation::NoFem
    }

    pub fn uses_spm(&self) -> bool {
        self.ablation != Ablation::NoSpm
    }

    /// Time length after the temporal CNN (`l / 4`).
    pub fn t_temporal(&self) -> usize {
        pooled_len(self.l, 4, 4)
    }

    /// Time length of the spatial patches (`l / 8`, or `l / 4` without FEM).
    pub fn t_patch(&self) -> usize {
        let t = self.t_temporal();
        if self.uses_fem() {
            pooled_len(t, 2, 2)
        } else {
            t
        }
    }

    /// Spatial patch count `p`.
    pub fn n_patches(&self) -> usize {
        if self.uses_spm() {
            self.local_graphs.len() + 1
        } else {
            self.c
        }
    }

    pub fn effective_step(&self) -> usize {
        if self.ablation == Ablation::NoOverlap {
            self.l_t
        } else {
            self.l_step
        }
    }

    /// Windows per spatial patch, `floor((T - l_t) / step) + 1`.
    pub fn n_windows(&self) -> usize {
        pooled_len(self.t_patch(), self.l_t, self.effective_step())
    }

    /// Token count `q`.
    pub fn n_tokens(&self) -> usize {
        match self.token_layout {
            TokenLayout::PatchWindow => self.n_patches() * self.n_windows(),
            TokenLayout::WindowAcrossPatches => self.n_windows(),
        }
    }

    /// Flattened token width before the linear projection.
    pub fn token_raw_dim(&self) -> usize {
        match self.token_layout {
            TokenLayout::PatchWindow => self.k * self.l_t,
            TokenLayout::WindowAcrossPatches => self.n_patches() * self.k * self.l_t,
        }
    }

    /// Checks every constraint; the error lists all that failed.
    pub fn validate(&self) -> Result<()> {
        let mut failed = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                failed.push(msg);
            }
        };
        check(self.c >= 1, "c >= 1".into());
        check(self.l >= 4 && self.l % 4 == 0, format!("l divisible by 4 (l = {})", self.l));
        check(self.f_s >= 1, "f_s >= 1".into());
        check(self.k >= 1, "k >= 1".into());
        check(self.temporal_kernel_len >= 1, "temporal_kernel_len >= 1".into());
        check(self.n_head >= 1, "n_head >= 1".into());
        check(
            self.n_head >= 1 && self.l_token % self.n_head == 0,
            format!("l_token % n_head == 0 ({} % {})", self.l_token, self.n_head),
        );
        check(self.l_token >= 1, "l_token >= 1".into());
        check(self.l_step >= 1, "l_step >= 1".into());
        check(self.ffn_mult >= 1, "ffn_mult >= 1".into());
        check(self.n_classes >= 2, "n_classes >= 2".into());
        check((0.0..1.0).contains(&self.dropout_p), format!("dropout_p in [0, 1) ({})", self.dropout_p));
        check(
            self.leaky_slope > 0.0 && self.leaky_slope < 1.0,
            format!("leaky_slope in (0, 1) ({})", self.leaky_slope),
        );
        if self.l >= 4 && self.uses_fem() {
            check(self.t_temporal() >= 2, "l / 4 >= 2 for feature enhancement pooling".into());
        }
        let t = if self.l >= 8 || !self.uses_fem() { self.t_patch() } else { 0 };
        check(self.l_t >= 1 && self.l_t <= t, format!("1 <= l_t <= post-CNN time length ({} vs {t})", self.l_t));
        if self.uses_spm() {
            check(!self.local_graphs.is_empty(), "at least one local graph".into());
            let mut seen = vec![false; self.c];
            for g in &self.local_graphs {
                check(!g.indices.is_empty(), format!("local graph {} is empty", g.index));
                check(
                    g.channels.len() == g.indices.len(),
                    format!("local graph {} lists {} names for {} indices", g.index, g.channels.len(), g.indices.len()),
                );
                for &i in &g.indices {
                    if i >= self.c {
                        check(false, format!("local graph {} channel index {i} >= c = {}", g.index, self.c));
                    } else if std::mem::replace(&mut seen[i], true) {
                        check(false, format!("channel {i} appears in more than one local graph"));
                    }
                }
            }
        }
        if failed.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(failed.join("; ")))
        }
    }
}

/// `floor((n - len) / step) + 1`, or 0 when `len > n`.
pub fn pooled_len(n: usize, len: usize, step: usize) -> usize {
    if len > n || step == 0 {
        0
    } else {
        (n - len) / step + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_one_sizes() {
        let g = table_one_graphs();
        let sizes: Vec<usize> = g.iter().map(|g| g.c_n()).collect();
        assert_eq!(sizes, vec![2, 3, 2, 4, 3, 4, 5, 1, 2, 1, 1]);
        assert_eq!(sizes.iter().sum::<usize>(), 28);
        assert_eq!(g[7].channels, vec!["POz".to_string()]);
    }

    #[test]
    fn paper_config_derivations() {
        let c = ModelConfig::paper();
        c.validate().unwrap();
        assert_eq!(c.temporal_kernel_len, 125);
        assert_eq!(ModelConfig::paper_kernel_100().temporal_kernel_len, 100);
        assert_eq!(c.t_temporal(), 250);
        assert_eq!(c.t_patch(), 125);
        assert_eq!(c.n_patches(), 12);
        assert_eq!(c.n_windows(), 22);
        assert_eq!(c.n_tokens(), 264);
        assert_eq!(c.token_raw_dim(), 640);
        let no = c.with_ablation(Ablation::NoOverlap);
        assert_eq!((no.n_windows(), no.n_tokens()), (6, 72));
        assert_eq!(c.with_ablation(Ablation::NoSpm).n_patches(), 28);
        assert_eq!(c.with_ablation(Ablation::NoFem).t_patch(), 250);
        let t10 = ModelConfig { l_t: 10, ..c.clone() };
        assert_eq!((t10.n_windows(), t10.n_tokens()), (24, 288));
        let whole = ModelConfig { l_t: 125, l_step: 7, ..c };
        assert_eq!(whole.n_tokens(), 12);
    }

    #[test]
    fn out_of_range_channel_rejected() {
        let mut c = ModelConfig::paper();
        c.local_graphs[10].indices = vec![28];
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("channel index 28"), "{err}");
    }

    #[test]
    fn overlapping_graphs_and_bad_heads_rejected() {
        let mut c = ModelConfig::toy();
        c.local_graphs[1].indices = vec![1, 2];
        c.n_head = 3;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("more than one local graph"), "{err}");
        assert!(err.contains("l_token % n_head"), "{err}");
    }

    #[test]
    fn patch_too_long_rejected() {
        let c = ModelConfig { l_t: 126, ..ModelConfig::paper() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn montage_resolution_is_by_name() {
        let mut m = default_montage();
        m.reverse();
        let g = graphs_for_montage(&m).unwrap();
        assert_eq!(g[0].indices, vec![27, 26]);
        assert!(graphs_for_montage(&m[1..]).is_err());
    }
}
