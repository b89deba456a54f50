use serde::{Deserialize, Serialize};

use super::Mode;
use crate::error::{dim_err, Error, Result};
use crate::numerics::{Scalar, Tape, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LN_EPS: f64 = 1e-5;

/// Running mean / variance of a batch-norm layer (not trainable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BatchNormStats<T> {
    pub fn new(features: usize) -> Self {
        Self { mean: vec![T::zero(); features], var: vec![T::one(); features] }
    }
}

impl<T: Scalar> Tape<T> {
    /// Batch normalization of `[B, F, C, T]` per feature map `F` over the
    /// `(B, C, T)` axes. Train mode normalizes with biased batch statistics
    /// and moves `stats` toward them (unbiased variance) by `BN_MOMENTUM`;
    /// eval mode uses `stats`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats<T>,
        mode: Mode,
    ) -> Result<Var> {
        let (b, f, c, t) = match *self.shape(x) {
            [b, f, c, t] => (b, f, c, t),
            _ => return Err(dim_err!("batch_norm input must be rank 4, got {:?}", self.shape(x))),
        };
        if self.shape(gamma) != [f] || self.shape(beta) != [f] || stats.mean.len() != f {
            return Err(dim_err!("batch_norm affine parameters must have shape [{f}]"));
        }
        let n = b * c * t;
        let ct = c * t;
        if mode == Mode::Train && n < 2 {
            return Err(Error::InsufficientStatistics(format!("batch_norm in train mode needs B*C*T >= 2, got {n}")));
        }
        let eps = T::of(BN_EPS);
        let xd = self.value(x).data();
        // Per-feature mean and inverse std used for normalization.
        let mut mean = vec![T::zero(); f];
        let mut istd = vec![T::zero(); f];
        match mode {
            Mode::Train => {
                let nf = T::of_usize(n);
                let m = T::of(BN_MOMENTUM);
                for fi in 0..f {
                    let mut s = T::zero();
                    for bi in 0..b {
                        s += xd[(bi * f + fi) * ct..][..ct].iter().copied().sum::<T>();
                    }
                    let mu = s / nf;
                    let mut ss = T::zero();
                    for bi in 0..b {
                        ss += xd[(bi * f + fi) * ct..][..ct].iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
                    }
                    let var = ss / nf;
                    mean[fi] = mu;
                    istd[fi] = T::one() / (var + eps).sqrt();
                    let unbiased = ss / T::of_usize(n - 1);
                    stats.mean[fi] = (T::one() - m) * stats.mean[fi] + m * mu;
                    stats.var[fi] = (T::one() - m) * stats.var[fi] + m * unbiased;
                }
            }
            Mode::Eval => {
                for fi in 0..f {
                    mean[fi] = stats.mean[fi];
                    istd[fi] = T::one() / (stats.var[fi] + eps).sqrt();
                }
            }
        }
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for bi in 0..b {
            for fi in 0..f {
                let off = (bi * f + fi) * ct;
                for j in off..off + ct {
                    xhat[j] = (xd[j] - mean[fi]) * istd[fi];
                    out[j] = gd[fi] * xhat[j] + bd[fi];
                }
            }
        }
        let value = Tensor::new(&[b, f, c, t], out)?;
        self.push(
            "batch_norm",
            value,
            &[x, gamma, beta],
            Box::new(move |g, inputs, _, needs| {
                let gd = inputs[1].data();
                let mut sum_g = vec![T::zero(); f];
                let mut sum_gx = vec![T::zero(); f];
                for bi in 0..b {
                    for fi in 0..f {
                        let off = (bi * f + fi) * ct;
                        for j in off..off + ct {
                            sum_g[fi] += g[j];
                            sum_gx[fi] += g[j] * xhat[j];
                        }
                    }
                }
                let gx = needs[0].then(|| {
                    let mut gx = vec![T::zero(); g.len()];
                    let nf = T::of_usize(n);
                    for bi in 0..b {
                        for fi in 0..f {
                            let off = (bi * f + fi) * ct;
                            let scale = gd[fi] * istd[fi];
                            for j in off..off + ct {
                                gx[j] = match mode {
                                    Mode::Eval => scale * g[j],
                                    Mode::Train => scale * (g[j] - sum_g[fi] / nf - xhat[j] * sum_gx[fi] / nf),
                                };
                            }
                        }
                    }
                    gx
                });
                vec![gx, needs[1].then_some(sum_gx), needs[2].then_some(sum_g)]
            }),
        )
    }

    /// Layer normalization over the last axis followed by `gamma * x + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = match shape.last() {
            Some(&d) if d >= 1 => d,
            _ => return Err(dim_err!("layer_norm needs a last axis of length >= 1")),
        };
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(dim_err!("layer_norm affine parameters must have shape [{d}]"));
        }
        let rows = self.value(x).len() / d;
        let eps = T::of(LN_EPS);
        let df = T::of_usize(d);
        let (xd, gd, bd) = (self.value(x).data(), self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xd.len()];
        let mut istd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xd.len()];
        for r in 0..rows {
            let row = &xd[r * d..][..d];
            let mu = row.iter().copied().sum::<T>() / df;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / df;
            istd[r] = T::one() / (var + eps).sqrt();
            for j in 0..d {
                let h = (row[j] - mu) * istd[r];
                xhat[r * d + j] = h;
                out[r * d + j] = gd[j] * h + bd[j];
            }
        }
        let value = Tensor::new(&shape, out)?;
        self.push(
            "layer_norm",
            value,
            &[x, gamma, beta],
            Box::new(move |g, inputs, _, needs| {
                let gd = inputs[1].data();
                let mut ggamma = vec![T::zero(); d];
                let mut gbeta = vec![T::zero(); d];
                let mut gx = vec![T::zero(); g.len()];
                for r in 0..rows {
                    let mut s1 = T::zero();
                    let mut s2 = T::zero();
                    for j in 0..d {
                        let idx = r * d + j;
                        ggamma[j] += g[idx] * xhat[idx];
                        gbeta[j] += g[idx];
                        let gh = g[idx] * gd[j];
                        s1 += gh;
                        s2 += gh * xhat[idx];
                    }
                    for j in 0..d {
                        let idx = r * d + j;
                        let gh = g[idx] * gd[j];
                        gx[idx] = istd[r] * (gh - s1 / df - xhat[idx] * s2 / df);
                    }
                }
                vec![needs[0].then_some(gx), needs[1].then_some(ggamma), needs[2].then_some(gbeta)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine(tape: &mut Tape<f64>, f: usize, g: f64, b: f64) -> (Var, Var) {
        (tape.constant(Tensor::full(&[f], g)), tape.constant(Tensor::full(&[f], b)))
    }

    #[test]
    fn constant_feature_maps_normalize_to_zero() {
        let mut tape = Tape::new();
        // feature 0 is constant 3, feature 1 constant -7
        let data: Vec<f64> = (0..48).map(|i| if (i / 12) % 2 == 0 { 3.0 } else { -7.0 }).collect();
        let x = tape.constant(Tensor::new(&[2, 2, 3, 4], data).unwrap());
        let (g, b) = affine(&mut tape, 2, 1.0, 0.0);
        let mut stats = BatchNormStats::new(2);
        let y = tape.batch_norm(x, g, b, &mut stats, Mode::Train).unwrap();
        assert!(tape.value(y).data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn train_output_has_unit_moments_and_affine_law() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..2 * 3 * 2 * 5).map(|i| ((i * 37) % 11) as f64 * 0.7 - 2.0).collect();
        let x = tape.constant(Tensor::new(&[2, 3, 2, 5], data).unwrap());
        let (g, b) = affine(&mut tape, 3, 1.0, 0.0);
        let mut stats = BatchNormStats::new(3);
        let y = tape.batch_norm(x, g, b, &mut stats, Mode::Train).unwrap();
        let yv = tape.value(y).clone();
        for f in 0..3 {
            let vals: Vec<f64> = (0..2).flat_map(|bi| yv.data()[(bi * 3 + f) * 10..][..10].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / 20.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 20.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-4);
        }
        let (g2, b2) = affine(&mut tape, 3, 2.0, 3.0);
        let mut stats2 = BatchNormStats::new(3);
        let y2 = tape.batch_norm(x, g2, b2, &mut stats2, Mode::Train).unwrap();
        for (a, z) in tape.value(y2).data().iter().zip(yv.data()) {
            assert!((a - (2.0 * z + 3.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_converges_to_train_on_repeated_batch() {
        let data: Vec<f64> = (0..1 * 2 * 3 * 8).map(|i| ((i * 13) % 7) as f64 - 1.5).collect();
        let mut stats = BatchNormStats::new(2);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(&[1, 2, 3, 8], data).unwrap());
        let (g, b) = affine(&mut tape, 2, 1.0, 0.0);
        let mut train = None;
        for _ in 0..200 {
            train = Some(tape.batch_norm(x, g, b, &mut stats, Mode::Train).unwrap());
        }
        let eval = tape.batch_norm(x, g, b, &mut stats, Mode::Eval).unwrap();
        // Running variance is unbiased, train uses biased: ratio sqrt(n/(n-1)).
        let n = 24.0_f64;
        let tol = 1.0 - ((n - 1.0) / n).sqrt() + 1e-6;
        let diff = tape.value(train.unwrap()).max_abs_diff(tape.value(eval));
        assert!(diff < tol * 3.0, "diff {diff}");
    }

    #[test]
    fn insufficient_statistics() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[1, 1, 1, 1]));
        let (g, b) = affine(&mut tape, 1, 1.0, 0.0);
        let mut stats = BatchNormStats::new(1);
        assert!(matches!(tape.batch_norm(x, g, b, &mut stats, Mode::Train), Err(Error::InsufficientStatistics(_))));
        assert!(tape.batch_norm(x, g, b, &mut stats, Mode::Eval).is_ok());
    }

    #[test]
    fn layer_norm_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[2, 4], 3.0));
        let (g, b) = affine(&mut tape, 4, 1.0, 0.0);
        let y = tape.layer_norm(x, g, b).unwrap();
        assert!(tape.value(y).data().iter().all(|v| v.abs() < 1e-12));
        let (g, b5) = affine(&mut tape, 4, 1.0, 5.0);
        let y = tape.layer_norm(x, g, b5).unwrap();
        assert!(tape.value(y).data().iter().all(|v| (v - 5.0).abs() < 1e-12));

        let x = tape.constant(Tensor::from_f64(&[1, 4], &[1.0, -2.0, 4.0, 0.5]).unwrap());
        let (g, b) = affine(&mut tape, 4, 1.0, 0.0);
        let y = tape.layer_norm(x, g, b).unwrap();
        let v = tape.value(y).data();
        let mean = v.iter().sum::<f64>() / 4.0;
        let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-4);
    }
}
