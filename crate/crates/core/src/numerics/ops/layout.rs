use crate::error::{dim_err, Result};
use crate::numerics::tensor::strides;
use crate::numerics::{Scalar, Tape, Tensor, Var};

/// Moves axis `axes[i]` of the input to position `i` of the output.
fn permute_data<T: Scalar>(data: &[T], shape: &[usize], axes: &[usize]) -> (Vec<T>, Vec<usize>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..n {
        out.push(data[src]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out, out_shape)
}

impl<T: Scalar> Tape<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        self.push("reshape", value, &[x], Box::new(|g, _, _, _| vec![Some(g.to_vec())]))
    }

    /// General axis permutation.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true))
        {
            return Err(dim_err!("invalid permutation {:?} for rank {}", axes, shape.len()));
        }
        let (data, out_shape) = permute_data(self.value(x).data(), &shape, axes);
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let value = Tensor::new(&out_shape, data)?;
        self.push(
            "permute",
            value,
            &[x],
            Box::new(move |g, _, _, _| vec![Some(permute_data(g, &out_shape, &inverse).0)]),
        )
    }

    /// Concatenation along `axis`; all other axes must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| dim_err!("concat of nothing"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(dim_err!("concat axis {axis} out of range for rank {}", base.len()));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(dim_err!("concat: shape {:?} does not match {:?} off axis {axis}", s, base));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let widths: Vec<usize> = xs.iter().map(|&v| self.shape(v)[axis] * inner).collect();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(v).data()[o * w..][..w]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(&shape, out)?;
        let row = total * inner;
        self.push(
            "concat",
            value,
            xs,
            Box::new(move |g, _, _, needs| {
                let mut offset = 0;
                widths
                    .iter()
                    .zip(needs)
                    .map(|(&w, &need)| {
                        let part =
                            need.then(|| (0..outer).flat_map(|o| g[o * row + offset..][..w].iter().copied()).collect());
                        offset += w;
                        part
                    })
                    .collect()
            }),
        )
    }
}

impl<T: Scalar> Tape<T> {
    /// Sliding windows over the last axis: `[..., T] -> [..., n_w, len]`
    /// with `n_w = floor((T - len) / step) + 1`.
    pub fn unfold_time(&mut self, x: Var, len: usize, step: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let Some(&t) = shape.last() else {
            return Err(dim_err!("unfold_time on a scalar"));
        };
        if len == 0 || step == 0 || len > t {
            return Err(dim_err!("window length {len} / step {step} invalid for time length {t}"));
        }
        let n_w = (t - len) / step + 1;
        let rows = self.value(x).len() / t;
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(rows * n_w * len);
        for r in 0..rows {
            for w in 0..n_w {
                out.extend_from_slice(&xd[r * t + w * step..][..len]);
            }
        }
        let mut out_shape = shape[..shape.len() - 1].to_vec();
        out_shape.extend([n_w, len]);
        let value = Tensor::new(&out_shape, out)?;
        self.push(
            "unfold_time",
            value,
            &[x],
            Box::new(move |g, _, _, _| {
                let mut gx = vec![T::zero(); rows * t];
                for r in 0..rows {
                    for w in 0..n_w {
                        let src = &g[(r * n_w + w) * len..][..len];
                        gx[r * t + w * step..][..len].iter_mut().zip(src).for_each(|(a, &b)| *a += b);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }
}
