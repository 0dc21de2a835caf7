//! Tensor operations. Each one computes its value eagerly and, when any
//! operand is tape-linked, records itself for the backward sweep.

use std::sync::Arc;

use super::kernels::gemm;
use super::tape::{split_axis, Op, Unary};
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn record(
    inputs: &[&Tensor],
    shape: Vec<usize>,
    value: Vec<f64>,
    op: impl FnOnce(&[usize]) -> Op,
) -> Result<Tensor> {
    let value = Arc::new(value);
    let Some(tape) = inputs.iter().find_map(|t| t.tape()).cloned() else {
        return Ok(Tensor::from_parts(shape, value));
    };
    let ids = inputs
        .iter()
        .map(|t| tape.lift(t))
        .collect::<Result<Vec<_>>>()?;
    let id = tape.push(op(&ids), shape.clone(), Arc::clone(&value));
    let mut out = Tensor::from_parts(shape, value);
    out.node = Some(super::tape::NodeRef { tape, id });
    Ok(out)
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        }
    }
}

impl Tensor {
    fn binary(&self, rhs: &Tensor, kind: BinOp) -> Result<Tensor> {
        let (la, lb) = (self.numel(), rhs.numel());
        let shape = if self.shape == rhs.shape || lb == 1 {
            self.shape.clone()
        } else if la == 1 {
            rhs.shape.clone()
        } else {
            return Err(Error::shape(kind.name(), &self.shape, &rhs.shape));
        };
        if matches!(kind, BinOp::Div) && rhs.data.contains(&0.0) {
            return Err(Error::DivisionByZero("div"));
        }
        let n = shape.iter().product::<usize>();
        let (a, b) = (&self.data, &rhs.data);
        let at = |i: usize| a[if la == 1 { 0 } else { i }];
        let bt = |i: usize| b[if lb == 1 { 0 } else { i }];
        let value: Vec<f64> = match kind {
            BinOp::Add => (0..n).map(|i| at(i) + bt(i)).collect(),
            BinOp::Sub => (0..n).map(|i| at(i) - bt(i)).collect(),
            BinOp::Mul => (0..n).map(|i| at(i) * bt(i)).collect(),
            BinOp::Div => (0..n).map(|i| at(i) / bt(i)).collect(),
        };
        record(&[self, rhs], shape, value, |ids| match kind {
            BinOp::Add => Op::Add(ids[0], ids[1]),
            BinOp::Sub => Op::Sub(ids[0], ids[1]),
            BinOp::Mul => Op::Mul(ids[0], ids[1]),
            BinOp::Div => Op::Div(ids[0], ids[1]),
        })
    }

    /// Elementwise sum. Shapes must match, or one side must hold one value.
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, BinOp::Add)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, BinOp::Sub)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, BinOp::Mul)
    }

    /// Elementwise quotient; any zero in `rhs` is an error.
    pub fn div(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, BinOp::Div)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let value = self.data.iter().map(|v| c * v).collect();
        record(&[self], self.shape.clone(), value, |ids| Op::Scale(ids[0], c))
    }

    /// `self + c` for a constant `c`.
    pub fn offset(&self, c: f64) -> Result<Tensor> {
        let value = self.data.iter().map(|v| v + c).collect();
        record(&[self], self.shape.clone(), value, |ids| Op::Offset(ids[0]))
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.scale(-1.0)
    }

    /// `[m×k] · [k×n] → [m×n]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let ((m, k), (k2, n)) = match (self.dims2(), rhs.dims2()) {
            (Ok(a), Ok(b)) => (a, b),
            _ => return Err(Error::shape("matmul", &self.shape, &rhs.shape)),
        };
        if k != k2 {
            return Err(Error::shape("matmul", &self.shape, &rhs.shape));
        }
        let mut value = vec![0.0; m * n];
        gemm(m, k, n, &self.data, (k, 1), &rhs.data, (n, 1), &mut value, 0.0);
        record(&[self, rhs], vec![m, n], value, |ids| {
            Op::MatMul(ids[0], ids[1])
        })
    }

    pub fn map(&self, u: Unary) -> Result<Tensor> {
        let value = self.data.iter().map(|&v| u.apply(v)).collect();
        record(&[self], self.shape.clone(), value, |ids| Op::Map(ids[0], u))
    }

    pub fn relu(&self) -> Result<Tensor> {
        self.map(Unary::Relu)
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.map(Unary::Sigmoid)
    }

    pub fn silu(&self) -> Result<Tensor> {
        self.map(Unary::Silu)
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&self) -> Result<Tensor> {
        self.map(Unary::Gelu)
    }

    pub fn sin(&self) -> Result<Tensor> {
        self.map(Unary::Sin)
    }

    pub fn cos(&self) -> Result<Tensor> {
        self.map(Unary::Cos)
    }

    pub fn square(&self) -> Result<Tensor> {
        self.map(Unary::Square)
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.map(Unary::Exp)
    }

    pub fn tanh(&self) -> Result<Tensor> {
        self.map(Unary::Tanh)
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Result<Tensor> {
        let s = self.data.iter().sum();
        record(&[self], Vec::new(), vec![s], |ids| Op::Sum(ids[0]))
    }

    /// Arithmetic mean of all elements, as a rank-0 tensor.
    pub fn mean(&self) -> Result<Tensor> {
        if self.numel() == 0 {
            return Err(Error::Empty("mean"));
        }
        let s = self.data.iter().sum::<f64>() / self.numel() as f64;
        record(&[self], Vec::new(), vec![s], |ids| Op::Mean(ids[0]))
    }

    fn axis_reduce(&self, axis: usize, mean: bool) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::shape("reduce axis", &self.shape, &[axis]));
        }
        let (outer, len, inner) = split_axis(&self.shape, axis);
        if mean && len == 0 {
            return Err(Error::Empty("mean"));
        }
        let mut value = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut value[o * inner..(o + 1) * inner];
            for l in 0..len {
                let src = &self.data[(o * len + l) * inner..(o * len + l + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
        }
        if mean {
            let inv = 1.0 / len as f64;
            value.iter_mut().for_each(|v| *v *= inv);
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        record(&[self], shape, value, |ids| {
            if mean {
                Op::MeanAxis(ids[0], axis)
            } else {
                Op::SumAxis(ids[0], axis)
            }
        })
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        self.axis_reduce(axis, false)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        self.axis_reduce(axis, true)
    }

    /// Mean over one axis, or over everything when `axis` is `None`.
    pub fn reduce_mean(&self, axis: Option<usize>) -> Result<Tensor> {
        match axis {
            Some(a) => self.mean_axis(a),
            None => self.mean(),
        }
    }

    fn check_row(&self, row: &Tensor, op: &'static str) -> Result<usize> {
        let (_, cols) = self.dims2().map_err(|_| Error::shape(op, &self.shape, &row.shape))?;
        if row.shape != [cols] {
            return Err(Error::shape(op, &self.shape, &row.shape));
        }
        Ok(cols)
    }

    /// Adds a length-`n` vector to every row of a `[b×n]` matrix.
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        let cols = self.check_row(row, "add_row")?;
        let mut value = self.to_vec();
        for chunk in value.chunks_exact_mut(cols.max(1)) {
            chunk.iter_mut().zip(row.data.iter()).for_each(|(v, r)| *v += r);
        }
        record(&[self, row], self.shape.clone(), value, |ids| {
            Op::AddRow(ids[0], ids[1])
        })
    }

    /// Multiplies every row of a `[b×n]` matrix elementwise by a length-`n` vector.
    pub fn mul_row(&self, row: &Tensor) -> Result<Tensor> {
        let cols = self.check_row(row, "mul_row")?;
        let mut value = self.to_vec();
        for chunk in value.chunks_exact_mut(cols.max(1)) {
            chunk.iter_mut().zip(row.data.iter()).for_each(|(v, r)| *v *= r);
        }
        record(&[self, row], self.shape.clone(), value, |ids| {
            Op::MulRow(ids[0], ids[1])
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        record(&[self], shape.to_vec(), self.to_vec(), |ids| Op::Reshape(ids[0]))
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input was inside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        let value = self.data.iter().map(|v| v.clamp(lo, hi)).collect();
        record(&[self], self.shape.clone(), value, |ids| {
            Op::Clamp(ids[0], lo, hi)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::tape::{backward, Tape};
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::vector(v)
    }

    #[test]
    fn elementwise_values() {
        assert_eq!(t(&[1.0, 2.0]).add(&t(&[3.0, 4.0])).unwrap().data(), &[4.0, 6.0]);
        let x = t(&[0.5, -3.0, 7.25]);
        assert_eq!(x.mul(&Tensor::scalar(1.0)).unwrap(), x);
        assert_eq!(x.mul(&t(&[1.0, 1.0, 1.0])).unwrap(), x);
        assert_eq!(t(&[1.0, 2.0]).sub(&t(&[3.0, 5.0])).unwrap().data(), &[-2.0, -3.0]);
        assert_eq!(Tensor::scalar(6.0).div(&t(&[2.0, 3.0])).unwrap().data(), &[3.0, 2.0]);
        assert_eq!(t(&[1.0, 2.0]).scale(3.0).unwrap().data(), &[3.0, 6.0]);
    }

    #[test]
    fn division_by_zero_rejected() {
        let err = t(&[1.0, 2.0]).div(&t(&[1.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::DivisionByZero(_)));
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let err = t(&[1.0, 2.0]).add(&t(&[1.0, 2.0, 3.0])).unwrap_err();
        match err {
            Error::ShapeMismatch { lhs, rhs, .. } => {
                assert_eq!(lhs, vec![2]);
                assert_eq!(rhs, vec![3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn matmul_cases() {
        let x = Tensor::new(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(Tensor::eye(3).matmul(&x).unwrap(), x);
        let a = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(&[2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
        assert!(matches!(
            a.matmul(&a),
            Err(Error::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn nonlinearity_values() {
        assert_eq!(t(&[-1.0, 2.0]).relu().unwrap().data(), &[0.0, 2.0]);
        assert_eq!(Tensor::scalar(0.0).sigmoid().unwrap().data(), &[0.5]);
        assert_eq!(Tensor::scalar(0.0).gelu().unwrap().data(), &[0.0]);
        assert_eq!(Tensor::scalar(3.0).square().unwrap().data(), &[9.0]);
    }

    #[test]
    fn means() {
        assert_eq!(t(&[1.0, 2.0, 3.0]).mean().unwrap().item().unwrap(), 2.0);
        assert_eq!(Tensor::full(&[4, 5], 2.5).mean().unwrap().item().unwrap(), 2.5);
        assert!(matches!(Tensor::zeros(&[0]).mean(), Err(Error::Empty(_))));
        let m = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m.reduce_mean(Some(0)).unwrap().data(), &[2.5, 3.5, 4.5]);
        assert_eq!(m.reduce_mean(Some(1)).unwrap().data(), &[2.0, 5.0]);
    }

    #[test]
    fn mean_backward_is_uniform() {
        let tape = Tape::new();
        let x = tape.var(&t(&[3.0, -1.0, 4.0, 1.5]));
        let g = backward(&x.mean().unwrap()).unwrap();
        assert_eq!(g.wrt(&x).data(), &[0.25; 4]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::new();
        let x = tape.var(&t(&[1.0, 2.0]));
        let loss = x.square().unwrap().sum().unwrap();
        assert_eq!(backward(&loss).unwrap().wrt(&x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn independent_parameter_gets_zero() {
        let tape = Tape::new();
        let x = tape.var(&t(&[1.0, 2.0]));
        let p = tape.var(&t(&[5.0]));
        let loss = x.sum().unwrap();
        assert_eq!(backward(&loss).unwrap().wrt(&p).data(), &[0.0]);
    }

    #[test]
    fn stop_gradient_severs_one_factor() {
        // d/dx [sg(x) · x] = x, not 2x
        let tape = Tape::new();
        let x = tape.var(&t(&[1.5, -2.0, 3.0]));
        let loss = x.stop_gradient().mul(&x).unwrap().sum().unwrap();
        let g = backward(&loss).unwrap().wrt(&x);
        assert_eq!(g.data(), x.data());
    }

    #[test]
    fn loss_built_only_from_stopped_values_has_zero_gradient() {
        let tape = Tape::new();
        let phi = tape.var(&t(&[0.3, -0.7]));
        let v = phi.sigmoid().unwrap().stop_gradient();
        let loss = v.square().unwrap().mean().unwrap();
        let g = backward(&loss).unwrap().wrt(&phi);
        assert!(g.data().iter().all(|&v| v.to_bits() == 0));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let x = tape.var(&t(&[1.0, 2.0]));
        assert!(matches!(backward(&x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn mixing_tapes_rejected() {
        let (a, b) = (Tape::new(), Tape::new());
        let x = a.var(&t(&[1.0]));
        let y = b.var(&t(&[1.0]));
        assert!(matches!(x.add(&y), Err(Error::TapeMismatch)));
    }

    #[test]
    fn row_broadcast_gradients() {
        let tape = Tape::new();
        let m = tape.var(&Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let r = tape.var(&t(&[10.0, 20.0]));
        let loss = m.mul_row(&r).unwrap().add_row(&r).unwrap().sum().unwrap();
        let g = backward(&loss).unwrap();
        assert_eq!(g.wrt(&m).data(), &[10.0, 20.0, 10.0, 20.0]);
        // column sums of m, plus one per row from add_row
        assert_eq!(g.wrt(&r).data(), &[1.0 + 3.0 + 2.0, 2.0 + 4.0 + 2.0]);
    }
}
