use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::stages::{self, ConvBnVars, EncoderLayerVars};
use crate::error::{dim_err, Result};
use crate::numerics::{AttentionParams, BatchNormStats, InitSpec, Mode, ParamId, ParamStore, Rng, Scalar, Tape, Var};

/// Parameter ids of a convolution followed by batch norm.
#[derive(Debug, Clone, Copy)]
struct ConvBnIds {
    kernels: ParamId,
    bias: ParamId,
    gamma: ParamId,
    beta: ParamId,
}

impl ConvBnIds {
    fn bind(&self, v: &[Var]) -> ConvBnVars {
        ConvBnVars { kernels: v[self.kernels.0], bias: v[self.bias.0], gamma: v[self.gamma.0], beta: v[self.beta.0] }
    }
}

#[derive(Debug, Clone, Copy)]
struct EncoderLayerIds {
    attn: [ParamId; 8],
    ln1: (ParamId, ParamId),
    ffn: [ParamId; 4],
    ln2: (ParamId, ParamId),
}

impl EncoderLayerIds {
    fn bind(&self, v: &[Var]) -> EncoderLayerVars {
        let a = self.attn.map(|id| v[id.0]);
        let f = self.ffn.map(|id| v[id.0]);
        EncoderLayerVars {
            attn: AttentionParams { wq: a[0], bq: a[1], wk: a[2], bk: a[3], wv: a[4], bv: a[5], wo: a[6], bo: a[7] },
            ln1_gamma: v[self.ln1.0 .0],
            ln1_beta: v[self.ln1.1 .0],
            ffn_w1: f[0],
            ffn_b1: f[1],
            ffn_w2: f[2],
            ffn_b2: f[3],
            ln2_gamma: v[self.ln2.0 .0],
            ln2_beta: v[self.ln2.1 .0],
        }
    }
}

#[derive(Debug, Clone)]
struct ParamIds {
    tcnn: ConvBnIds,
    fem: Option<ConvBnIds>,
    local: Option<(ParamId, ParamId)>,
    global: Option<ConvBnIds>,
    lp_w: ParamId,
    lp_b: ParamId,
    pos: Option<ParamId>,
    layers: Vec<EncoderLayerIds>,
    head_w: ParamId,
    head_b: ParamId,
}

/// Running statistics of the three batch-norm layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnBuffers<T> {
    pub tcnn: BatchNormStats<T>,
    pub fem: Option<BatchNormStats<T>>,
    pub global: Option<BatchNormStats<T>>,
}

impl<T: Scalar> BnBuffers<T> {
    /// `(name, stats)` pairs in a stable order.
    pub fn named(&self) -> Vec<(&'static str, &BatchNormStats<T>)> {
        let mut v = vec![("tcnn.bn", &self.tcnn)];
        if let Some(s) = &self.fem {
            v.push(("fem.bn", s));
        }
        if let Some(s) = &self.global {
            v.push(("spm.global.bn", s));
        }
        v
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut BatchNormStats<T>)> {
        let mut v = vec![("tcnn.bn", &mut self.tcnn)];
        if let Some(s) = &mut self.fem {
            v.push(("fem.bn", s));
        }
        if let Some(s) = &mut self.global {
            v.push(("spm.global.bn", s));
        }
        v
    }
}

/// Handles of every intermediate of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardTrace {
    /// `[B, k, c, l/4]`
    pub temporal: Var,
    /// `[B, k, c, l/8]` (same as `temporal` without FEM)
    pub enhanced: Var,
    /// `[B, p, k, T]`
    pub spatial: Var,
    /// `[B, q, l_token]`
    pub tokens: Var,
    pub encoded: Var,
    /// `[B, n_classes]`
    pub logits: Var,
}

/// Parameters and batch-norm buffers of one network instance.
#[derive(Debug, Clone)]
pub struct PatchFormerModel<T: Scalar> {
    config: ModelConfig,
    pub params: ParamStore<T>,
    pub buffers: BnBuffers<T>,
    ids: ParamIds,
}

fn conv_bn<T: Scalar>(
    s: &mut ParamStore<T>,
    prefix: &str,
    kernel_shape: [usize; 4],
    rng: &mut Rng,
) -> Result<ConvBnIds> {
    let [fo, fi, kh, kw] = kernel_shape;
    let init = InitSpec::fan_in(fi * kh * kw);
    Ok(ConvBnIds {
        kernels: s.add(&format!("{prefix}.conv.W"), init.clone(), &kernel_shape, rng)?,
        bias: s.add(&format!("{prefix}.conv.b"), init, &[fo], rng)?,
        gamma: s.add(&format!("{prefix}.bn.gamma"), InitSpec::Constant { value: 1.0 }, &[fo], rng)?,
        beta: s.add(&format!("{prefix}.bn.beta"), InitSpec::Constant { value: 0.0 }, &[fo], rng)?,
    })
}

fn dense<T: Scalar>(
    s: &mut ParamStore<T>,
    name: &str,
    din: usize,
    dout: usize,
    rng: &mut Rng,
) -> Result<(ParamId, ParamId)> {
    let init = InitSpec::fan_in(din);
    Ok((
        s.add(&format!("{name}.W"), init.clone(), &[din, dout], rng)?,
        s.add(&format!("{name}.b"), init, &[dout], rng)?,
    ))
}

fn norm<T: Scalar>(s: &mut ParamStore<T>, name: &str, d: usize, rng: &mut Rng) -> Result<(ParamId, ParamId)> {
    Ok((
        s.add(&format!("{name}.gamma"), InitSpec::Constant { value: 1.0 }, &[d], rng)?,
        s.add(&format!("{name}.beta"), InitSpec::Constant { value: 0.0 }, &[d], rng)?,
    ))
}

/// Scale of the uniform initializer of the positional embedding.
const POS_EMB_BOUND: f64 = 0.02;

impl<T: Scalar> PatchFormerModel<T> {
    /// Allocates and initializes every parameter.
    pub fn build(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let c = config;
        let mut s = ParamStore::new();
        let tcnn = conv_bn(&mut s, "tcnn", [c.k, 1, 1, c.temporal_kernel_len], rng)?;
        let fem = c.uses_fem().then(|| conv_bn(&mut s, "fem", [c.k, c.k, 1, 1], rng)).transpose()?;
        let t = c.t_patch();
        let (local, global) = if c.uses_spm() {
            let w = s.add("spm.local.W", InitSpec::Constant { value: 1.0 }, &[c.c, c.k * t], rng)?;
            let b = s.add("spm.local.b", InitSpec::Constant { value: 0.0 }, &[c.c, c.k * t], rng)?;
            let g = conv_bn(&mut s, "spm.global", [c.k, c.k, c.c, 1], rng)?;
            (Some((w, b)), Some(g))
        } else {
            (None, None)
        };
        let (lp_w, lp_b) = dense(&mut s, "tpm.lp", c.token_raw_dim(), c.l_token, rng)?;
        let q = c.n_tokens();
        let pos = c
            .positional_embedding
            .then(|| s.add("tpm.pos", InitSpec::Uniform { bound: POS_EMB_BOUND }, &[q, c.l_token], rng))
            .transpose()?;
        let d = c.l_token;
        let hidden = c.ffn_mult * d;
        let mut layers = Vec::with_capacity(c.n_layers);
        for i in 0..c.n_layers {
            let p = format!("encoder.{i}");
            let (wq, bq) = dense(&mut s, &format!("{p}.attn.q"), d, d, rng)?;
            let (wk, bk) = dense(&mut s, &format!("{p}.attn.k"), d, d, rng)?;
            let (wv, bv) = dense(&mut s, &format!("{p}.attn.v"), d, d, rng)?;
            let (wo, bo) = dense(&mut s, &format!("{p}.attn.out"), d, d, rng)?;
            let ln1 = norm(&mut s, &format!("{p}.ln1"), d, rng)?;
            let (w1, b1) = dense(&mut s, &format!("{p}.ffn.1"), d, hidden, rng)?;
            let (w2, b2) = dense(&mut s, &format!("{p}.ffn.2"), hidden, d, rng)?;
            let ln2 = norm(&mut s, &format!("{p}.ln2"), d, rng)?;
            layers.push(EncoderLayerIds { attn: [wq, bq, wk, bk, wv, bv, wo, bo], ln1, ffn: [w1, b1, w2, b2], ln2 });
        }
        let (head_w, head_b) = dense(&mut s, "head", q * d, c.n_classes, rng)?;
        let buffers = BnBuffers {
            tcnn: BatchNormStats::new(c.k),
            fem: fem.map(|_| BatchNormStats::new(c.k)),
            global: global.map(|_| BatchNormStats::new(c.k)),
        };
        Ok(Self {
            config: config.clone(),
            params: s,
            buffers,
            ids: ParamIds { tcnn, fem, local, global, lp_w, lp_b, pos, layers, head_w, head_b },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Forward pass recording every parameter on `tape`. Train mode updates
    /// the batch-norm running statistics.
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode, rng: &mut Rng) -> Result<ForwardTrace> {
        let vars = self.params.bind(tape);
        let mut buffers = self.buffers.clone();
        let trace = self.forward_with(tape, &vars, &mut buffers, x, mode, rng)?;
        self.buffers = buffers;
        Ok(trace)
    }

    /// Forward pass against externally bound parameter handles (one per
    /// parameter, in id order) and explicit batch-norm buffers.
    pub fn forward_with(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        buffers: &mut BnBuffers<T>,
        x: Var,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<ForwardTrace> {
        let c = &self.config;
        let ids = &self.ids;
        if vars.len() != self.params.len() {
            return Err(dim_err!("{} parameter handles for {} parameters", vars.len(), self.params.len()));
        }
        let xs = tape.shape(x);
        if xs.len() != 4 || xs[1] != 1 || xs[2] != c.c || xs[3] != c.l {
            return Err(dim_err!("model input {:?} does not match [B, 1, {}, {}]", xs, c.c, c.l));
        }
        let b = xs[0];
        let slope = c.leaky_slope;
        let temporal = stages::temporal_cnn(tape, x, &ids.tcnn.bind(vars), &mut buffers.tcnn, mode, slope)?;
        let enhanced = match (&ids.fem, &mut buffers.fem) {
            (Some(f), Some(stats)) => stages::feature_enhance(tape, temporal, &f.bind(vars), stats, mode, slope)?,
            _ => temporal,
        };
        let spatial = match (ids.local, &ids.global, &mut buffers.global) {
            (Some((w, bl)), Some(g), Some(stats)) => {
                let regions: Vec<Vec<usize>> = c.local_graphs.iter().map(|g| g.indices.clone()).collect();
                stages::spm(tape, enhanced, vars[w.0], vars[bl.0], &regions, &g.bind(vars), stats, mode, slope)?
            }
            _ => stages::channels_as_patches(tape, enhanced)?,
        };
        let tokens = stages::tpm(
            tape,
            spatial,
            c.l_t,
            c.effective_step(),
            c.token_layout,
            vars[ids.lp_w.0],
            vars[ids.lp_b.0],
            ids.pos.map(|p| vars[p.0]),
        )?;
        let layers: Vec<EncoderLayerVars> = ids.layers.iter().map(|l| l.bind(vars)).collect();
        let encoded = stages::transformer_encode(tape, tokens, &layers, c.n_head, c.dropout_p, rng, mode)?;
        let q_d = tape.value(encoded).len() / b;
        let flat = tape.reshape(encoded, &[b, q_d])?;
        let flat = tape.dropout(flat, c.dropout_p, rng, mode)?;
        let logits = tape.linear(flat, vars[ids.head_w.0], vars[ids.head_b.0])?;
        Ok(ForwardTrace { temporal, enhanced, spatial, tokens, encoded, logits })
    }

    /// Eval-mode class probabilities for a batch `[B, 1, c, l]`.
    pub fn predict_proba(&self, x: crate::numerics::Tensor<T>) -> Result<crate::numerics::Tensor<T>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|p| tape.constant(p.value.clone())).collect();
        let xv = tape.constant(x);
        let mut buffers = self.buffers.clone();
        let trace = self.forward_with(&mut tape, &vars, &mut buffers, xv, Mode::Eval, &mut Rng::new(0))?;
        let p = tape.softmax(trace.logits, 1)?;
        Ok(tape.value(p).clone())
    }
}

/// Exact trainable scalar count for a configuration, from shape arithmetic.
pub fn param_count(c: &ModelConfig) -> usize {
    let conv_bn = |fo: usize, fan: usize| fo * fan + fo + 2 * fo;
    let dense = |i: usize, o: usize| i * o + o;
    let mut n = conv_bn(c.k, c.temporal_kernel_len);
    if c.uses_fem() {
        n += conv_bn(c.k, c.k);
    }
    if c.uses_spm() {
        n += 2 * c.c * c.k * c.t_patch();
        n += conv_bn(c.k, c.k * c.c);
    }
    n += dense(c.token_raw_dim(), c.l_token);
    if c.positional_embedding {
        n += c.n_tokens() * c.l_token;
    }
    let d = c.l_token;
    let h = c.ffn_mult * d;
    n += c.n_layers * (4 * dense(d, d) + dense(d, h) + dense(h, d) + 4 * d);
    n + dense(c.n_tokens() * d, c.n_classes)
}
