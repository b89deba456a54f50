use crate::error::{dim_err, Result};
use crate::numerics::{Scalar, Tape, Tensor, Var};

/// `out[m, p] += a[m, k] * b[k, p]` for row-major slices.
fn gemm_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, p: usize) {
    for i in 0..m {
        let orow = &mut out[i * p..][..p];
        for (kk, &av) in a[i * k..][..k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            orow.iter_mut().zip(&b[kk * p..][..p]).for_each(|(o, &bv)| *o += av * bv);
        }
    }
}

/// `out[m, k] += g[m, p] * b[k, p]^T`.
fn gemm_nt_acc<T: Scalar>(g: &[T], b: &[T], out: &mut [T], m: usize, k: usize, p: usize) {
    for i in 0..m {
        let grow = &g[i * p..][..p];
        for kk in 0..k {
            out[i * k + kk] += grow.iter().zip(&b[kk * p..][..p]).map(|(&x, &y)| x * y).sum::<T>();
        }
    }
}

/// `out[k, p] += a[m, k]^T * g[m, p]`.
fn gemm_tn_acc<T: Scalar>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, p: usize) {
    for i in 0..m {
        let grow = &g[i * p..][..p];
        for (kk, &av) in a[i * k..][..k].iter().enumerate() {
            out[kk * p..][..p].iter_mut().zip(grow).for_each(|(o, &gv)| *o += av * gv);
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// `x W + b` along the last axis. `x`: `[..., D_in]`, `w`: `[D_in, D_out]`,
    /// `b`: `[D_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (din, dout) = match *self.shape(w) {
            [i, o] => (i, o),
            _ => return Err(dim_err!("linear weight must be rank 2, got {:?}", self.shape(w))),
        };
        if xs.last() != Some(&din) {
            return Err(dim_err!("linear input {:?} does not end in D_in = {din}", xs));
        }
        if self.shape(b) != [dout] {
            return Err(dim_err!("linear bias {:?}, expected [{dout}]", self.shape(b)));
        }
        let m = self.value(x).len() / din;
        let bd = self.value(b).data();
        let mut out: Vec<T> = (0..m).flat_map(|_| bd.iter().copied()).collect();
        gemm_acc(self.value(x).data(), self.value(w).data(), &mut out, m, din, dout);
        let mut os = xs;
        *os.last_mut().unwrap() = dout;
        let value = Tensor::new(&os, out)?;
        self.push(
            "linear",
            value,
            &[x, w, b],
            Box::new(move |g, inputs, _, needs| {
                let (xd, wd) = (inputs[0].data(), inputs[1].data());
                let gx = needs[0].then(|| {
                    let mut gx = vec![T::zero(); m * din];
                    gemm_nt_acc(g, wd, &mut gx, m, din, dout);
                    gx
                });
                let gw = needs[1].then(|| {
                    let mut gw = vec![T::zero(); din * dout];
                    gemm_tn_acc(xd, g, &mut gw, m, din, dout);
                    gw
                });
                let gb = needs[2].then(|| {
                    let mut gb = vec![T::zero(); dout];
                    for row in g.chunks_exact(dout) {
                        gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                    }
                    gb
                });
                vec![gx, gw, gb]
            }),
        )
    }

    /// Batched matrix product `[N, M, K] x [N, K, P] -> [N, M, P]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, m, k, p) = match (self.shape(a), self.shape(b)) {
            (&[n, m, k], &[n2, k2, p]) if n == n2 && k == k2 => (n, m, k, p),
            (sa, sb) => return Err(dim_err!("bmm shapes {:?} x {:?} incompatible", sa, sb)),
        };
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); n * m * p];
        for i in 0..n {
            gemm_acc(&ad[i * m * k..][..m * k], &bd[i * k * p..][..k * p], &mut out[i * m * p..][..m * p], m, k, p);
        }
        let value = Tensor::new(&[n, m, p], out)?;
        self.push(
            "bmm",
            value,
            &[a, b],
            Box::new(move |g, inputs, _, needs| {
                let (ad, bd) = (inputs[0].data(), inputs[1].data());
                let ga = needs[0].then(|| {
                    let mut ga = vec![T::zero(); n * m * k];
                    for i in 0..n {
                        gemm_nt_acc(
                            &g[i * m * p..][..m * p],
                            &bd[i * k * p..][..k * p],
                            &mut ga[i * m * k..][..m * k],
                            m,
                            k,
                            p,
                        );
                    }
                    ga
                });
                let gb = needs[1].then(|| {
                    let mut gb = vec![T::zero(); n * k * p];
                    for i in 0..n {
                        gemm_tn_acc(
                            &ad[i * m * k..][..m * k],
                            &g[i * m * p..][..m * p],
                            &mut gb[i * k * p..][..k * p],
                            m,
                            k,
                            p,
                        );
                    }
                    gb
                });
                vec![ga, gb]
            }),
        )
    }
}
