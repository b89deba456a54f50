use crate::error::{dim_err, Error, Result};
use crate::numerics::{Rng, Scalar, Tape, Tensor, Var};

use super::Mode;

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
}

impl<T: Scalar> Tape<T> {
    /// `a + b`, where `b`'s shape equals `a`'s or a trailing suffix of it.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", BinOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", BinOp::Sub, a, b)
    }

    /// Element-wise (Hadamard) product with suffix broadcasting of `b`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", BinOp::Mul, a, b)
    }

    fn binary(&mut self, name: &'static str, op: BinOp, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(dim_err!("{name}: shape {:?} does not broadcast onto {:?}", sb, sa));
        }
        let nb = self.value(b).len();
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let out: Vec<T> = xa
            .iter()
            .enumerate()
            .map(|(i, &u)| {
                let v = xb[i % nb];
                match op {
                    BinOp::Add => u + v,
                    BinOp::Sub => u - v,
                    BinOp::Mul => u * v,
                }
            })
            .collect();
        let value = Tensor::new(self.shape(a), out)?;
        self.push(
            name,
            value,
            &[a, b],
            Box::new(move |g, inputs, _, needs| {
                let (xa, xb) = (inputs[0].data(), inputs[1].data());
                let nb = xb.len();
                let ga = needs[0].then(|| match op {
                    BinOp::Add | BinOp::Sub => g.to_vec(),
                    BinOp::Mul => g.iter().enumerate().map(|(i, &gi)| gi * xb[i % nb]).collect(),
                });
                let gb = needs[1].then(|| {
                    let mut gb = vec![T::zero(); nb];
                    for (i, &gi) in g.iter().enumerate() {
                        gb[i % nb] += match op {
                            BinOp::Add => gi,
                            BinOp::Sub => -gi,
                            BinOp::Mul => gi * xa[i],
                        };
                    }
                    gb
                });
                vec![ga, gb]
            }),
        )
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let value = self.value(x).map(|v| v * c);
        self.push("scale", value, &[x], Box::new(move |g, _, _, _| vec![Some(g.iter().map(|&gi| gi * c).collect())]))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.leaky_relu(x, T::zero())
    }

    /// `x` for `x >= 0`, `slope * x` otherwise.
    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var> {
        let value = self.value(x).map(|v| if v >= T::zero() { v } else { slope * v });
        let name = if slope == T::zero() { "relu" } else { "leaky_relu" };
        self.push(
            name,
            value,
            &[x],
            Box::new(move |g, inputs, _, _| {
                let x = inputs[0].data();
                vec![Some(g.iter().zip(x).map(|(&gi, &xi)| if xi >= T::zero() { gi } else { slope * gi }).collect())]
            }),
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push("sum", value, &[x], Box::new(|g, inputs, _, _| vec![Some(vec![g[0]; inputs[0].len()])]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(dim_err!("mean of empty tensor"));
        }
        let s = self.sum(x)?;
        self.scale(s, T::one() / T::of_usize(n))
    }

    /// Inverted dropout. Identity in eval mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut Rng, mode: Mode) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!("dropout probability {p} not in [0, 1)")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).len()).map(|_| if rng.bernoulli(p) { T::zero() } else { keep }).collect();
        let data = self.value(x).data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(self.shape(x), data)?;
        self.push(
            "dropout",
            value,
            &[x],
            Box::new(move |g, _, _, _| vec![Some(g.iter().zip(&mask).map(|(&a, &m)| a * m).collect())]),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval1(f: impl Fn(&mut Tape<f64>, Var) -> Result<Var>, x: f64) -> f64 {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::scalar(x));
        let y = f(&mut tape, v).unwrap();
        tape.value(y).item().unwrap()
    }

    #[test]
    fn leaky_relu_examples() {
        let f = |t: &mut Tape<f64>, v| t.leaky_relu(v, 0.01);
        assert_eq!(eval1(f, 2.0), 2.0);
        assert_eq!(eval1(f, -1.0), -0.01);
        assert_eq!(eval1(f, 0.0), 0.0);
    }

    #[test]
    fn relu_examples() {
        let f = |t: &mut Tape<f64>, v| t.relu(v);
        assert_eq!(eval1(f, 3.0), 3.0);
        assert_eq!(eval1(f, -3.0), 0.0);
        assert_eq!(eval1(f, 0.0), 0.0);
    }

    #[test]
    fn broadcast_requires_suffix_shape() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::ones(&[2, 3]));
        let b = tape.constant(Tensor::ones(&[3]));
        let c = tape.constant(Tensor::ones(&[2]));
        let s = tape.add(a, b).unwrap();
        assert_eq!(tape.shape(s), &[2, 3]);
        assert!(tape.add(a, c).is_err());
    }

    #[test]
    fn dropout_identity_cases() {
        let mut tape = Tape::<f32>::new();
        let mut rng = Rng::new(0);
        let x = tape.constant(Tensor::ones(&[100]));
        assert_eq!(tape.dropout(x, 0.0, &mut rng, Mode::Train).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.5, &mut rng, Mode::Eval).unwrap(), x);
        assert!(matches!(tape.dropout(x, 1.0, &mut rng, Mode::Train), Err(Error::Parameter(_))));
    }

    #[test]
    fn dropout_preserves_mean() {
        let mut tape = Tape::<f64>::new();
        let mut rng = Rng::new(11);
        let x = tape.constant(Tensor::ones(&[100_000]));
        let y = tape.dropout(x, 0.5, &mut rng, Mode::Train).unwrap();
        let mean = tape.value(y).sum() / 100_000.0;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        let zeros = tape.value(y).data().iter().filter(|v| **v == 0.0).count();
        assert!((zeros as f64 / 1e5 - 0.5).abs() < 0.01);
    }

    #[test]
    fn dropout_masks_replay_with_seed() {
        let run = || {
            let mut tape = Tape::<f32>::new();
            let mut rng = Rng::new(5);
            let x = tape.constant(Tensor::ones(&[64]));
            let y = tape.dropout(x, 0.5, &mut rng, Mode::Train).unwrap();
            tape.value(y).clone()
        };
        assert_eq!(run(), run());
    }
}
