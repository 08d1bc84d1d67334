use serde::{Deserialize, Serialize};

use super::DiffError;

/// Dense row-major `f64` tensor. A zero-dimensional shape (`[]`) is a scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, DiffError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(DiffError::BadTensor(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// One-dimensional tensor holding `data`.
    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Row-major matrix from rows of equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DiffError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(DiffError::BadTensor("ragged rows".into()));
        }
        Ok(Tensor {
            shape: vec![rows.len(), cols],
            data: rows.iter().flatten().copied().collect(),
        })
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

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self, DiffError> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(DiffError::BadTensor(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self += other` for equal shapes.
    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// NumPy-style broadcast of two shapes (aligned on trailing dimensions).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` when viewed as `out` (0 on broadcast dimensions).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let o = i + rank - shape.len();
        strides[o] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Calls `f(out_start, a_offset, b_offset, len)` for every run of `len`
/// consecutive elements along the last dimension of `out`.
fn for_each_run(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n: usize = out.iter().product();
    if n == 0 {
        return;
    }
    let rank = out.len();
    let len = out[rank - 1];
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut flat = 0;
    while flat < n {
        f(flat, oa, ob);
        flat += len;
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

/// Elementwise binary map with broadcasting.
pub(crate) fn zip_broadcast(
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor, String> {
    if a.shape == b.shape {
        return Ok(Tensor {
            shape: a.shape.clone(),
            data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        });
    }
    let out = broadcast_shape(&a.shape, &b.shape)
        .ok_or_else(|| format!("cannot broadcast {:?} with {:?}", a.shape, b.shape))?;
    if b.data.len() == 1 && out == a.shape {
        let y = b.data[0];
        return Ok(a.map(|x| f(x, y)));
    }
    if a.data.len() == 1 && out == b.shape {
        let x = a.data[0];
        return Ok(b.map(|y| f(x, y)));
    }
    let sa = broadcast_strides(&a.shape, &out);
    let sb = broadcast_strides(&b.shape, &out);
    let last = out.len() - 1;
    let len = out[last];
    let mut data = vec![0.0; out.iter().product()];
    for_each_run(&out, &sa, &sb, |o, ia, ib| {
        let dst = &mut data[o..o + len];
        match (sa[last], sb[last]) {
            (0, 0) => dst.fill(f(a.data[ia], b.data[ib])),
            (0, _) => {
                let x = a.data[ia];
                for (d, &y) in dst.iter_mut().zip(&b.data[ib..ib + len]) {
                    *d = f(x, y);
                }
            }
            (_, 0) => {
                let y = b.data[ib];
                for (d, &x) in dst.iter_mut().zip(&a.data[ia..ia + len]) {
                    *d = f(x, y);
                }
            }
            _ => {
                for ((d, &x), &y) in dst.iter_mut().zip(&a.data[ia..ia + len]).zip(&b.data[ib..ib + len]) {
                    *d = f(x, y);
                }
            }
        }
    });
    Ok(Tensor { shape: out, data })
}

/// Sums a gradient of the broadcast shape back down to `target`.
pub(crate) fn unbroadcast(grad: Tensor, target: &[usize]) -> Tensor {
    if grad.shape == target {
        return grad;
    }
    let mut out = Tensor::zeros(target);
    if out.data.len() == 1 {
        out.data[0] = grad.sum();
        return out;
    }
    let st = broadcast_strides(target, &grad.shape);
    let zero = vec![0; grad.shape.len()];
    let last = grad.shape.len() - 1;
    let len = grad.shape[last];
    for_each_run(&grad.shape, &st, &zero, |o, it, _| {
        let src = &grad.data[o..o + len];
        if st[last] == 0 {
            out.data[it] += src.iter().sum::<f64>();
        } else {
            for (d, g) in out.data[it..it + len].iter_mut().zip(src) {
                *d += g;
            }
        }
    });
    out
}

/// Splits `shape` around `axis` into (outer, axis length, inner).
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
