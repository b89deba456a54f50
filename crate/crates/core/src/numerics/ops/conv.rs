use crate::error::{dim_err, Result};
use crate::numerics::{Scalar, Tape, Tensor, Var};

fn rank4(shape: &[usize], what: &str) -> Result<[usize; 4]> {
    match *shape {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(dim_err!("{what} must be rank 4, got {:?}", shape)),
    }
}

/// Leading / trailing zero padding that keeps the output length equal to
/// the input length for a kernel of length `k`.
pub fn same_padding(k: usize) -> (usize, usize) {
    ((k - 1) / 2, k / 2)
}

impl<T: Scalar> Tape<T> {
    /// Convolution along the time axis with a `(1, K)` kernel and same padding.
    ///
    /// `x`: `[B, F_in, C, T]`, `kernels`: `[F_out, F_in, 1, K]`, `bias`: `[F_out]`.
    /// Output: `[B, F_out, C, T]`. Cross-correlation convention.
    pub fn conv_temporal(&mut self, x: Var, kernels: Var, bias: Var) -> Result<Var> {
        let [b, fi, c, t] = rank4(self.shape(x), "conv_temporal input")?;
        let [fo, fi_k, one, k] = rank4(self.shape(kernels), "conv_temporal kernels")?;
        if fi_k != fi || one != 1 || k == 0 {
            return Err(dim_err!(
                "conv_temporal kernels {:?} incompatible with input {:?}",
                self.shape(kernels),
                self.shape(x)
            ));
        }
        if self.shape(bias) != [fo] {
            return Err(dim_err!("conv_temporal bias {:?}, expected [{fo}]", self.shape(bias)));
        }
        let (pad_l, _) = same_padding(k);
        let (xd, wd, bd) = (self.value(x).data(), self.value(kernels).data(), self.value(bias).data());
        let mut out = vec![T::zero(); b * fo * c * t];
        // Valid kernel taps for output position `tt`:
        // input index tt + kk - pad_l must lie in [0, t).
        let tap_range = move |tt: usize| {
            let lo = pad_l.saturating_sub(tt);
            let hi = (t + pad_l - tt).min(k);
            lo..hi
        };
        for bi in 0..b {
            for o in 0..fo {
                for ch in 0..c {
                    let orow = &mut out[((bi * fo + o) * c + ch) * t..][..t];
                    orow.iter_mut().for_each(|v| *v = bd[o]);
                    for i in 0..fi {
                        let xrow = &xd[((bi * fi + i) * c + ch) * t..][..t];
                        let w = &wd[(o * fi + i) * k..][..k];
                        for (tt, ov) in orow.iter_mut().enumerate() {
                            let mut acc = T::zero();
                            for kk in tap_range(tt) {
                                acc += w[kk] * xrow[tt + kk - pad_l];
                            }
                            *ov += acc;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(&[b, fo, c, t], out)?;
        self.push(
            "conv_temporal",
            value,
            &[x, kernels, bias],
            Box::new(move |g, inputs, _, needs| {
                let (xd, wd) = (inputs[0].data(), inputs[1].data());
                let mut gx = needs[0].then(|| vec![T::zero(); xd.len()]);
                let mut gw = needs[1].then(|| vec![T::zero(); wd.len()]);
                let mut gb = needs[2].then(|| vec![T::zero(); fo]);
                for bi in 0..b {
                    for o in 0..fo {
                        for ch in 0..c {
                            let grow = &g[((bi * fo + o) * c + ch) * t..][..t];
                            if let Some(gb) = gb.as_mut() {
                                gb[o] += grow.iter().copied().sum::<T>();
                            }
                            for i in 0..fi {
                                let xoff = ((bi * fi + i) * c + ch) * t;
                                let woff = (o * fi + i) * k;
                                for (tt, &gt) in grow.iter().enumerate() {
                                    for kk in tap_range(tt) {
                                        let xi = xoff + tt + kk - pad_l;
                                        if let Some(gx) = gx.as_mut() {
                                            gx[xi] += gt * wd[woff + kk];
                                        }
                                        if let Some(gw) = gw.as_mut() {
                                            gw[woff + kk] += gt * xd[xi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                vec![gx, gw, gb]
            }),
        )
    }

    /// Convolution with a `(C, 1)` kernel spanning every channel, no padding.
    ///
    /// `x`: `[B, F_in, C, T]`, `kernels`: `[F_out, F_in, C, 1]`, `bias`: `[F_out]`.
    /// Output: `[B, F_out, 1, T]`.
    pub fn conv_spatial(&mut self, x: Var, kernels: Var, bias: Var) -> Result<Var> {
        let [b, fi, c, t] = rank4(self.shape(x), "conv_spatial input")?;
        let [fo, fi_k, ck, one] = rank4(self.shape(kernels), "conv_spatial kernels")?;
        if fi_k != fi || ck != c || one != 1 {
            return Err(dim_err!(
                "conv_spatial kernels {:?} incompatible with input {:?} (kernel height must equal C)",
                self.shape(kernels),
                self.shape(x)
            ));
        }
        if self.shape(bias) != [fo] {
            return Err(dim_err!("conv_spatial bias {:?}, expected [{fo}]", self.shape(bias)));
        }
        let (xd, wd, bd) = (self.value(x).data(), self.value(kernels).data(), self.value(bias).data());
        let mut out = vec![T::zero(); b * fo * t];
        for bi in 0..b {
            for o in 0..fo {
                let orow = &mut out[(bi * fo + o) * t..][..t];
                orow.iter_mut().for_each(|v| *v = bd[o]);
                for i in 0..fi {
                    for ch in 0..c {
                        let w = wd[(o * fi + i) * c + ch];
                        let xrow = &xd[((bi * fi + i) * c + ch) * t..][..t];
                        orow.iter_mut().zip(xrow).for_each(|(ov, &xv)| *ov += w * xv);
                    }
                }
            }
        }
        let value = Tensor::new(&[b, fo, 1, t], out)?;
        self.push(
            "conv_spatial",
            value,
            &[x, kernels, bias],
            Box::new(move |g, inputs, _, needs| {
                let (xd, wd) = (inputs[0].data(), inputs[1].data());
                let mut gx = needs[0].then(|| vec![T::zero(); xd.len()]);
                let mut gw = needs[1].then(|| vec![T::zero(); wd.len()]);
                let mut gb = needs[2].then(|| vec![T::zero(); fo]);
                for bi in 0..b {
                    for o in 0..fo {
                        let grow = &g[(bi * fo + o) * t..][..t];
                        if let Some(gb) = gb.as_mut() {
                            gb[o] += grow.iter().copied().sum::<T>();
                        }
                        for i in 0..fi {
                            for ch in 0..c {
                                let widx = (o * fi + i) * c + ch;
                                let xoff = ((bi * fi + i) * c + ch) * t;
                                if let Some(gw) = gw.as_mut() {
                                    let xrow = &xd[xoff..][..t];
                                    gw[widx] += grow.iter().zip(xrow).map(|(&a, &b)| a * b).sum::<T>();
                                }
                                if let Some(gx) = gx.as_mut() {
                                    let w = wd[widx];
                                    gx[xoff..][..t].iter_mut().zip(grow).for_each(|(gv, &gt)| *gv += w * gt);
                                }
                            }
                        }
                    }
                }
                vec![gx, gw, gb]
            }),
        )
    }

    /// Average pooling over the last axis; trailing samples that do not fill
    /// a window are dropped.
    pub fn avg_pool_time(&mut self, x: Var, len: usize, step: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let Some(&t) = shape.last() else {
            return Err(dim_err!("avg_pool_time on a scalar"));
        };
        if len == 0 || step == 0 {
            return Err(dim_err!("avg_pool_time needs len >= 1 and step >= 1"));
        }
        if len > t {
            return Err(dim_err!("pool length {len} exceeds time length {t}"));
        }
        let t_out = (t - len) / step + 1;
        let rows = self.value(x).len() / t;
        let inv = T::one() / T::of_usize(len);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(rows * t_out);
        for r in 0..rows {
            let row = &xd[r * t..][..t];
            for j in 0..t_out {
                out.push(row[j * step..j * step + len].iter().copied().sum::<T>() * inv);
            }
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = t_out;
        let value = Tensor::new(&out_shape, out)?;
        self.push(
            "avg_pool_time",
            value,
            &[x],
            Box::new(move |g, _, _, _| {
                let mut gx = vec![T::zero(); rows * t];
                for r in 0..rows {
                    for j in 0..t_out {
                        let gj = g[r * t_out + j] * inv;
                        gx[r * t + j * step..][..len].iter_mut().for_each(|v| *v += gj);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }
}
