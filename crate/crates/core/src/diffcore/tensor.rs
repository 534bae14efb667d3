use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major tensor of `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::dim(format!("shape {shape:?} must be non-empty with positive sizes")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(!shape.is_empty() && shape.iter().all(|&d| d > 0), "invalid shape {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            debug_assert!(i < d, "index {index:?} out of range for {:?}", self.shape);
            off = off * d + i;
        }
        off
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    pub fn expect_shape(&self, shape: &[usize], what: &str) -> Result<()> {
        if self.shape != shape {
            return Err(Error::dim(format!(
                "{what}: expected shape {shape:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += alpha * other`; shapes must match.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale_in_place(&mut self, alpha: f64) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }

    pub fn transpose2(&self) -> Result<Tensor> {
        if self.ndim() != 2 {
            return Err(Error::dim(format!("transpose needs a matrix, got {:?}", self.shape)));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        Ok(Tensor::from_fn(&[n, m], |i| self.data[(i % m) * n + i / m]))
    }
}

/// Matrix product of `a[m,k]` and `b[k,n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::dim(format!(
            "matmul of {:?} and {:?}",
            a.shape, b.shape
        )));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Returns `(cot · bᵀ, aᵀ · cot)`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, cot: &Tensor) -> Result<(Tensor, Tensor)> {
    let da = matmul(cot, &b.transpose2()?)?;
    let db = matmul(&a.transpose2()?, cot)?;
    Ok((da, db))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementwiseKind {
    Add,
    Mul,
    Tanh,
    Relu,
    Exp,
    Scale(f64),
}

impl ElementwiseKind {
    fn arity(self) -> usize {
        match self {
            ElementwiseKind::Add | ElementwiseKind::Mul => 2,
            _ => 1,
        }
    }
}

fn broadcast_pair<'a>(a: &'a Tensor, b: &'a Tensor) -> Result<()> {
    if a.shape == b.shape || a.len() == 1 || b.len() == 1 {
        Ok(())
    } else {
        Err(Error::dim(format!(
            "elementwise operands {:?} and {:?}",
            a.shape, b.shape
        )))
    }
}

fn get_b(t: &Tensor, i: usize) -> f64 {
    if t.len() == 1 {
        t.data[0]
    } else {
        t.data[i]
    }
}

/// Pointwise operation; binary ops accept a single-element operand as a
/// scalar broadcast.
pub fn elementwise(kind: ElementwiseKind, args: &[&Tensor]) -> Result<Tensor> {
    if args.len() != kind.arity() {
        return Err(Error::Invalid(format!(
            "{kind:?} takes {} operands, got {}",
            kind.arity(),
            args.len()
        )));
    }
    let x = args[0];
    Ok(match kind {
        ElementwiseKind::Add | ElementwiseKind::Mul => {
            let y = args[1];
            broadcast_pair(x, y)?;
            let shape = if x.len() >= y.len() { x.shape() } else { y.shape() };
            let add = matches!(kind, ElementwiseKind::Add);
            Tensor::from_fn(shape, |i| {
                let (a, b) = (get_b(x, i), get_b(y, i));
                if add {
                    a + b
                } else {
                    a * b
                }
            })
        }
        ElementwiseKind::Tanh => x.map(f64::tanh),
        ElementwiseKind::Relu => x.map(|v| v.max(0.0)),
        ElementwiseKind::Exp => x.map(f64::exp),
        ElementwiseKind::Scale(c) => x.map(|v| v * c),
    })
}

/// Input cotangents for [`elementwise`]. `out` is the forward result.
pub fn elementwise_backward(
    kind: ElementwiseKind,
    args: &[&Tensor],
    out: &Tensor,
    cot: &Tensor,
) -> Result<Vec<Tensor>> {
    cot.expect_shape(out.shape(), "elementwise cotangent")?;
    let x = args[0];
    Ok(match kind {
        ElementwiseKind::Add | ElementwiseKind::Mul => {
            let y = args[1];
            let mul = matches!(kind, ElementwiseKind::Mul);
            let reduce = |t: &Tensor, partner: &Tensor| -> Tensor {
                if t.len() == 1 && cot.len() > 1 {
                    let s: f64 = (0..cot.len())
                        .map(|i| cot.data[i] * if mul { get_b(partner, i) } else { 1.0 })
                        .sum();
                    Tensor::from_fn(t.shape(), |_| s)
                } else {
                    Tensor::from_fn(t.shape(), |i| {
                        cot.data[i] * if mul { get_b(partner, i) } else { 1.0 }
                    })
                }
            };
            vec![reduce(x, y), reduce(y, x)]
        }
        ElementwiseKind::Tanh => vec![Tensor::from_fn(x.shape(), |i| {
            cot.data[i] * (1.0 - out.data[i] * out.data[i])
        })],
        ElementwiseKind::Relu => vec![Tensor::from_fn(x.shape(), |i| {
            if x.data[i] > 0.0 {
                cot.data[i]
            } else {
                0.0
            }
        })],
        ElementwiseKind::Exp => vec![Tensor::from_fn(x.shape(), |i| cot.data[i] * out.data[i])],
        ElementwiseKind::Scale(c) => vec![cot.map(|v| v * c)],
    })
}
