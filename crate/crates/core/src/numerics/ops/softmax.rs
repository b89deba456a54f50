use crate::error::{dim_err, Error, Result};
use crate::numerics::{Scalar, Tape, Tensor, Var};

impl<T: Scalar> Tape<T> {
    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(dim_err!("softmax axis {axis} out of range for {:?}", shape));
        }
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| xd[at(j)]).fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for j in 0..len {
                    let e = (xd[at(j)] - max).exp();
                    out[at(j)] = e;
                    z += e;
                }
                for j in 0..len {
                    out[at(j)] /= z;
                }
            }
        }
        let value = Tensor::new(&shape, out)?;
        self.push(
            "softmax",
            value,
            &[x],
            Box::new(move |g, _, y, _| {
                let yd = y.data();
                let mut gx = vec![T::zero(); g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let dot: T = (0..len).map(|j| g[at(j)] * yd[at(j)]).sum();
                        for j in 0..len {
                            gx[at(j)] = yd[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Mean over the batch of `-log softmax(logits)[label]` for `[B, K]`
    /// logits, via log-sum-exp.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, k) = match *self.shape(logits) {
            [b, k] => (b, k),
            _ => return Err(dim_err!("cross entropy expects [B, K] logits, got {:?}", self.shape(logits))),
        };
        if labels.len() != b {
            return Err(dim_err!("{} labels for a batch of {b}", labels.len()));
        }
        if b == 0 {
            return Err(dim_err!("cross entropy of an empty batch"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Parameter(format!("label {bad} out of range for {k} classes")));
        }
        let xd = self.value(logits).data();
        let mut probs = vec![T::zero(); b * k];
        let mut loss = T::zero();
        for (r, &y) in labels.iter().enumerate() {
            let row = &xd[r * k..][..k];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + z.ln();
            loss += lse - row[y];
            for j in 0..k {
                probs[r * k + j] = (row[j] - lse).exp();
            }
        }
        let bf = T::of_usize(b);
        let value = Tensor::scalar(loss / bf);
        let labels = labels.to_vec();
        self.push(
            "softmax_cross_entropy",
            value,
            &[logits],
            Box::new(move |g, _, _, _| {
                let mut gx = probs.clone();
                for (r, &y) in labels.iter().enumerate() {
                    gx[r * k + y] -= T::one();
                }
                let s = g[0] / bf;
                gx.iter_mut().for_each(|v| *v *= s);
                vec![Some(gx)]
            }),
        )
    }
}
