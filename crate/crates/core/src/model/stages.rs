//! The five pipeline stages, written against tape handles so they can be
//! exercised with hand-built weights as well as a bound model.

use crate::error::{dim_err, Error, Result};
use crate::numerics::{AttentionParams, BatchNormStats, Mode, Rng, Scalar, Tape, Tensor, Var};

use super::config::TokenLayout;

/// Convolution weights plus the batch-norm affine pair that follows them.
#[derive(Debug, Clone, Copy)]
pub struct ConvBnVars {
    pub kernels: Var,
    pub bias: Var,
    pub gamma: Var,
    pub beta: Var,
}

/// One post-norm encoder layer.
#[derive(Debug, Clone, Copy)]
pub struct EncoderLayerVars {
    pub attn: AttentionParams,
    pub ln1_gamma: Var,
    pub ln1_beta: Var,
    pub ffn_w1: Var,
    pub ffn_b1: Var,
    pub ffn_w2: Var,
    pub ffn_b2: Var,
    pub ln2_gamma: Var,
    pub ln2_beta: Var,
}

fn expect_rank4<T: Scalar>(tape: &Tape<T>, x: Var, what: &str) -> Result<[usize; 4]> {
    match *tape.shape(x) {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(dim_err!("{what} expects a rank-4 input, got {:?}", tape.shape(x))),
    }
}

/// Conv -> BN -> LeakyReLU -> AvgPool, the order shared by the three conv blocks.
#[allow(clippy::too_many_arguments)]
fn conv_block<T: Scalar>(
    tape: &mut Tape<T>,
    conv: Var,
    p: &ConvBnVars,
    stats: &mut BatchNormStats<T>,
    mode: Mode,
    slope: f64,
    pool: usize,
) -> Result<Var> {
    let y = tape.batch_norm(conv, p.gamma, p.beta, stats, mode)?;
    let y = tape.leaky_relu(y, T::of(slope))?;
    tape.avg_pool_time(y, pool, pool)
}

/// `[B, 1, c, l] -> [B, k, c, l/4]`.
pub fn temporal_cnn<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    p: &ConvBnVars,
    stats: &mut BatchNormStats<T>,
    mode: Mode,
    slope: f64,
) -> Result<Var> {
    expect_rank4(tape, x, "temporal_cnn")?;
    let y = tape.conv_temporal(x, p.kernels, p.bias)?;
    conv_block(tape, y, p, stats, mode, slope, 4)
}

/// Pointwise (1x1) feature mixing: `[B, k, c, T] -> [B, k, c, T/2]`.
pub fn feature_enhance<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    p: &ConvBnVars,
    stats: &mut BatchNormStats<T>,
    mode: Mode,
    slope: f64,
) -> Result<Var> {
    expect_rank4(tape, x, "feature_enhance")?;
    let y = tape.conv_temporal(x, p.kernels, p.bias)?;
    conv_block(tape, y, p, stats, mode, slope, 2)
}

/// Rearranges `[B, k, c, T]` to `[B, c, k*T]` and applies
/// `ReLU(W ⊙ Z - b)` with `W`, `b` of shape `[c, k*T]`.
pub fn spm_local_filter<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let [bs, k, c, t] = expect_rank4(tape, x, "spm_local_filter")?;
    for (name, v) in [("W_local", w), ("b_local", b)] {
        if tape.shape(v) != [c, k * t] {
            return Err(dim_err!("{name} has shape {:?}, expected [{c}, {}]", tape.shape(v), k * t));
        }
    }
    let z = tape.permute(x, &[0, 2, 1, 3])?;
    let z = tape.reshape(z, &[bs, c, k * t])?;
    let z = tape.mul(z, w)?;
    let z = tape.sub(z, b)?;
    tape.relu(z)
}

/// Mean over the channels of each region: `[B, c, D] -> [B, n_regions, D]`,
/// regions stacked in the given order.
pub fn aggregate<T: Scalar>(tape: &mut Tape<T>, z: Var, regions: &[Vec<usize>]) -> Result<Var> {
    let (b, c, d) = match *tape.shape(z) {
        [b, c, d] => (b, c, d),
        _ => return Err(dim_err!("aggregate expects [B, c, D], got {:?}", tape.shape(z))),
    };
    for (i, r) in regions.iter().enumerate() {
        if r.is_empty() {
            return Err(Error::Config(format!("region {} is empty", i + 1)));
        }
        if let Some(&bad) = r.iter().find(|&&ch| ch >= c) {
            return Err(Error::Config(format!("region {} references channel {bad} of {c}", i + 1)));
        }
    }
    let n = regions.len();
    let zd = tape.value(z).data();
    let mut out = vec![T::zero(); b * n * d];
    for bi in 0..b {
        for (ri, r) in regions.iter().enumerate() {
            let count = T::of_usize(r.len());
            let orow = &mut out[(bi * n + ri) * d..][..d];
            for &ch in r {
                orow.iter_mut().zip(&zd[(bi * c + ch) * d..][..d]).for_each(|(o, &v)| *o += v);
            }
            orow.iter_mut().for_each(|o| *o /= count);
        }
    }
    let value = Tensor::new(&[b, n, d], out)?;
    let regions = regions.to_vec();
    tape.push(
        "aggregate",
        value,
        &[z],
        Box::new(move |g, _, _, _| {
            let mut gz = vec![T::zero(); b * c * d];
            for bi in 0..b {
                for (ri, r) in regions.iter().enumerate() {
                    let inv = T::one() / T::of_usize(r.len());
                    let grow = &g[(bi * n + ri) * d..][..d];
                    for &ch in r {
                        gz[(bi * c + ch) * d..][..d].iter_mut().zip(grow).for_each(|(a, &v)| *a += v * inv);
                    }
                }
            }
            vec![Some(gz)]
        }),
    )
}

/// Global spatial learner: `(c, 1)` convolution over all channels, BN,
/// LeakyReLU and a unit pool. `[B, k, c, T] -> [B, 1, k, T]`.
pub fn spm_global<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    p: &ConvBnVars,
    stats: &mut BatchNormStats<T>,
    mode: Mode,
    slope: f64,
) -> Result<Var> {
    let [b, _, _, t] = expect_rank4(tape, x, "spm_global")?;
    let y = tape.conv_spatial(x, p.kernels, p.bias)?;
    let y = conv_block(tape, y, p, stats, mode, slope, 1)?;
    let k = tape.shape(y)[1];
    tape.reshape(y, &[b, 1, k, t])
}

/// Spatial patching: local regions followed by the global patch,
/// `[B, k, c, T] -> [B, n_regions + 1, k, T]`.
#[allow(clippy::too_many_arguments)]
pub fn spm<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    w_local: Var,
    b_local: Var,
    regions: &[Vec<usize>],
    global: &ConvBnVars,
    stats: &mut BatchNormStats<T>,
    mode: Mode,
    slope: f64,
) -> Result<Var> {
    let [b, k, _, t] = expect_rank4(tape, x, "spm")?;
    let filtered = spm_local_filter(tape, x, w_local, b_local)?;
    let local = aggregate(tape, filtered, regions)?;
    let local = tape.reshape(local, &[b, regions.len(), k, t])?;
    let global = spm_global(tape, x, global, stats, mode, slope)?;
    if tape.shape(global)[3] != t {
        return Err(Error::Contract("local and global branches disagree on time length".into()));
    }
    tape.concat(&[local, global], 1)
}

/// Channel-as-patch rearrangement used when spatial patching is ablated:
/// `[B, k, c, T] -> [B, c, k, T]`.
pub fn channels_as_patches<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    expect_rank4(tape, x, "channels_as_patches")?;
    tape.permute(x, &[0, 2, 1, 3])
}

/// Temporal patching: sliding windows over every spatial patch, flattened
/// and projected to tokens, `[B, p, k, T] -> [B, q, l_token]`.
#[allow(clippy::too_many_arguments)]
pub fn tpm<T: Scalar>(
    tape: &mut Tape<T>,
    z_s: Var,
    l_t: usize,
    l_step: usize,
    layout: TokenLayout,
    w_lp: Var,
    b_lp: Var,
    pos_emb: Option<Var>,
) -> Result<Var> {
    let [b, p, k, t] = expect_rank4(tape, z_s, "tpm")?;
    if l_t > t || l_t == 0 {
        return Err(Error::Config(format!("patch length {l_t} exceeds time length {t}")));
    }
    let windows = tape.unfold_time(z_s, l_t, l_step)?; // [B, p, k, n_w, l_t]
    let n_w = tape.shape(windows)[3];
    let flat = match layout {
        TokenLayout::PatchWindow => {
            let w = tape.permute(windows, &[0, 1, 3, 2, 4])?;
            tape.reshape(w, &[b, p * n_w, k * l_t])?
        }
        TokenLayout::WindowAcrossPatches => {
            let w = tape.permute(windows, &[0, 3, 1, 2, 4])?;
            tape.reshape(w, &[b, n_w, p * k * l_t])?
        }
    };
    let tokens = tape.linear(flat, w_lp, b_lp)?;
    match pos_emb {
        Some(pe) => tape.add(tokens, pe),
        None => Ok(tokens),
    }
}

/// Stack of post-norm encoder layers; shape preserving.
pub fn transformer_encode<T: Scalar>(
    tape: &mut Tape<T>,
    tokens: Var,
    layers: &[EncoderLayerVars],
    heads: usize,
    dropout_p: f64,
    rng: &mut Rng,
    mode: Mode,
) -> Result<Var> {
    let mut x = tokens;
    for layer in layers {
        let attn = tape.multi_head_attention(x, heads, &layer.attn, dropout_p, rng, mode)?;
        let h = tape.add(x, attn.output)?;
        let h = tape.layer_norm(h, layer.ln1_gamma, layer.ln1_beta)?;
        let f = tape.linear(h, layer.ffn_w1, layer.ffn_b1)?;
        let f = tape.relu(f)?;
        let f = tape.linear(f, layer.ffn_w2, layer.ffn_b2)?;
        let f = tape.dropout(f, dropout_p, rng, mode)?;
        let y = tape.add(h, f)?;
        x = tape.layer_norm(y, layer.ln2_gamma, layer.ln2_beta)?;
    }
    Ok(x)
}
