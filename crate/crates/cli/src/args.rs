use std::path::PathBuf;

use clap::Args;
use patchformer::data::SegmentSet;
use patchformer::experiment::{AdamConfig, TrainConfig};
use patchformer::model::{chunked_graphs, graphs_for_montage, half_second_kernel, Ablation, TokenLayout};
use patchformer::{Error, ModelConfig, Result};
use serde::{Deserialize, Serialize};

/// Architecture flags; unset values come from the preset.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct ModelArgs {
    /// paper, paper_kernel_100, toy or toy_long.
    #[arg(long, default_value = "paper")]
    pub preset: String,
    /// CNN kernel count.
    #[arg(long)]
    pub k: Option<usize>,
    /// Temporal patch length.
    #[arg(long)]
    pub lt: Option<usize>,
    /// Temporal patch step.
    #[arg(long)]
    pub lstep: Option<usize>,
    /// Token dimension.
    #[arg(long)]
    pub ltoken: Option<usize>,
    #[arg(long)]
    pub nhead: Option<usize>,
    /// Transformer layers.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub kernel_len: Option<usize>,
    #[arg(long)]
    pub ffn_mult: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub leaky_slope: Option<f64>,
    /// full, no_fem, no_spm or no_overlap.
    #[arg(long)]
    pub ablation: Option<String>,
    #[arg(long)]
    pub no_pos_emb: bool,
    /// Use one token per window across all patches.
    #[arg(long)]
    pub window_tokens: bool,
    /// Group channels into consecutive local graphs of this size instead of
    /// the regional grouping.
    #[arg(long)]
    pub graph_size: Option<usize>,
}

impl ModelArgs {
    pub fn preset(preset: &str) -> Self {
        Self { preset: preset.into(), ..Default::default() }
    }

    /// Preset plus overrides, with `c`, `l`, `f_s` and the channel grouping
    /// taken from the data when given.
    pub fn resolve(&self, data: Option<&SegmentSet>) -> Result<ModelConfig> {
        let mut mc = ModelConfig::preset(&self.preset)?;
        if let Some(ds) = data {
            mc.c = ds.c;
            mc.l = ds.l;
            if ds.f_s != mc.f_s {
                mc.f_s = ds.f_s;
                mc.temporal_kernel_len = half_second_kernel(ds.f_s);
            }
            if let Ok(g) = graphs_for_montage(&ds.channel_names) {
                mc.local_graphs = g;
            }
        }
        if let Some(size) = self.graph_size {
            mc.local_graphs = chunked_graphs(mc.c, size);
        }
        let set = |dst: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut mc.k, self.k);
        set(&mut mc.l_t, self.lt);
        set(&mut mc.l_step, self.lstep);
        set(&mut mc.l_token, self.ltoken);
        set(&mut mc.n_head, self.nhead);
        set(&mut mc.n_layers, self.layers);
        set(&mut mc.temporal_kernel_len, self.kernel_len);
        set(&mut mc.ffn_mult, self.ffn_mult);
        if let Some(p) = self.dropout {
            mc.dropout_p = p;
        }
        if let Some(s) = self.leaky_slope {
            mc.leaky_slope = s;
        }
        if self.no_pos_emb {
            mc.positional_embedding = false;
        }
        if self.window_tokens {
            mc.token_layout = TokenLayout::WindowAcrossPatches;
        }
        if let Some(a) = &self.ablation {
            mc = mc.with_ablation(Ablation::parse(a)?);
        }
        mc.validate()?;
        Ok(mc)
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.2)]
    pub val_frac: f64,
    /// Decay weights directly instead of through the gradient.
    #[arg(long)]
    pub decoupled_wd: bool,
    #[arg(long, env = "PATCHFORMER_SEED", default_value_t = 0)]
    pub seed: u64,
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let tc = TrainConfig {
            lr0: self.lr,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            eta_min: 0.0,
            adam: AdamConfig { decoupled_weight_decay: self.decoupled_wd, ..AdamConfig::default() },
            seed: self.seed,
            val_frac: self.val_frac,
        };
        tc.validate()?;
        Ok(tc)
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct DataArg {
    /// Segment file.
    #[arg(long)]
    pub data: PathBuf,
}

pub fn parse_lengths(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|_| Error::Parameter(format!("bad patch length {v:?}"))))
        .collect()
}
