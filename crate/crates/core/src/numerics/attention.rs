use super::ops::Mode;
use super::{Rng, Scalar, Tape, Var};
use crate::error::{dim_err, Error, Result};

/// Projection weights of one multi-head self-attention block. Each `w*` is
/// `[D, D]` and each `b*` is `[D]`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

pub struct AttentionOutput {
    /// Same shape as the input.
    pub output: Var,
    /// Softmax weights, `[B * heads, S, S]`; each row sums to 1.
    pub weights: Var,
}

impl<T: Scalar> Tape<T> {
    /// Unmasked scaled dot-product self-attention over `[B, S, D]` (or
    /// `[S, D]`) with `heads` heads of width `D / heads`. `dropout_p` is
    /// applied to the attention weights in train mode.
    pub fn multi_head_attention(
        &mut self,
        x: Var,
        heads: usize,
        p: &AttentionParams,
        dropout_p: f64,
        rng: &mut Rng,
        mode: Mode,
    ) -> Result<AttentionOutput> {
        let in_shape = self.shape(x).to_vec();
        let (b, s, d) = match *in_shape.as_slice() {
            [s, d] => (1, s, d),
            [b, s, d] => (b, s, d),
            _ => return Err(dim_err!("attention input must be [S, D] or [B, S, D], got {:?}", in_shape)),
        };
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("model width {d} not divisible by {heads} heads")));
        }
        let dh = d / heads;
        let x3 = self.reshape(x, &[b, s, d])?;
        let split = |tape: &mut Tape<T>, w: Var, bias: Var| -> Result<Var> {
            let y = tape.linear(x3, w, bias)?;
            let y = tape.reshape(y, &[b, s, heads, dh])?;
            let y = tape.permute(y, &[0, 2, 1, 3])?;
            tape.reshape(y, &[b * heads, s, dh])
        };
        let q = split(self, p.wq, p.bq)?;
        let k = split(self, p.wk, p.bk)?;
        let v = split(self, p.wv, p.bv)?;
        let kt = self.permute(k, &[0, 2, 1])?;
        let scores = self.bmm(q, kt)?;
        let scores = self.scale(scores, T::one() / T::of_usize(dh).sqrt())?;
        let weights = self.softmax(scores, 2)?;
        let dropped = self.dropout(weights, dropout_p, rng, mode)?;
        let ctx = self.bmm(dropped, v)?;
        let ctx = self.reshape(ctx, &[b, heads, s, dh])?;
        let ctx = self.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = self.reshape(ctx, &[b, s, d])?;
        let out = self.linear(ctx, p.wo, p.bo)?;
        let output = self.reshape(out, &in_shape)?;
        Ok(AttentionOutput { output, weights })
    }
}
