//! Data reorganization: pure index remapping on row-major tensors.

use crate::error::{Error, Result};
use crate::qcore::{FixedTensor, RealTensor};

/// Reshape, permute, split, concatenate, transpose and window partition.
/// Element values are never touched.
pub trait Reorg: Sized {
    fn shape(&self) -> &[usize];

    fn reshape(&self, shape: &[usize]) -> Result<Self>;

    /// Output axis `i` is input axis `axes[i]`.
    fn permute(&self, axes: &[usize]) -> Result<Self>;

    /// Splits `axis` into consecutive parts of the given sizes.
    fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Self>>;

    /// Joins tensors along `axis`; all other extents must agree.
    fn concatenate(parts: &[Self], axis: usize) -> Result<Self>;

    /// Swaps the two axes of a matrix.
    fn transpose(&self) -> Result<Self> {
        if self.shape().len() != 2 {
            return Err(Error::InvalidParams(format!("transpose needs a matrix, got {:?}", self.shape())));
        }
        self.permute(&[1, 0])
    }

    /// `H x W x C` into `(H/w * W/w) x w x w x C` windows, row-major over windows.
    fn window_partition(&self, window: usize) -> Result<Self> {
        let &[h, w, c] = self.shape() else {
            return Err(Error::InvalidParams(format!("window partition needs H x W x C, got {:?}", self.shape())));
        };
        if window == 0 || h % window != 0 || w % window != 0 {
            return Err(Error::InvalidParams(format!("window {window} does not tile {h} x {w}")));
        }
        let (nh, nw) = (h / window, w / window);
        self.reshape(&[nh, window, nw, window, c])?
            .permute(&[0, 2, 1, 3, 4])?
            .reshape(&[nh * nw, window, window, c])
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn reshape_check(shape: &[usize], new: &[usize]) -> Result<()> {
    if shape.iter().product::<usize>() != new.iter().product::<usize>() {
        return Err(Error::ShapeMismatch {
            expected: shape.to_vec(),
            got: new.to_vec(),
        });
    }
    Ok(())
}

fn permute_data<E: Copy>(shape: &[usize], data: &[E], axes: &[usize]) -> Result<(Vec<usize>, Vec<E>)> {
    let rank = shape.len();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
        return Err(Error::InvalidParams(format!("{axes:?} is not a permutation of {rank} axes")));
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    // Input stride for each output axis.
    let step: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    for _ in 0..data.len() {
        let src: usize = idx.iter().zip(&step).map(|(i, s)| i * s).sum();
        out.push(data[src]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Ok((out_shape, out))
}

fn split_data<E: Copy>(shape: &[usize], data: &[E], axis: usize, sizes: &[usize]) -> Result<Vec<(Vec<usize>, Vec<E>)>> {
    if axis >= shape.len() || sizes.iter().sum::<usize>() != shape[axis] {
        return Err(Error::InvalidParams(format!(
            "split sizes {sizes:?} do not cover axis {axis} of {shape:?}"
        )));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut parts = Vec::with_capacity(sizes.len());
    let mut offset = 0;
    for &len in sizes {
        let mut part = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let start = (o * shape[axis] + offset) * inner;
            part.extend_from_slice(&data[start..start + len * inner]);
        }
        let mut s = shape.to_vec();
        s[axis] = len;
        parts.push((s, part));
        offset += len;
    }
    Ok(parts)
}

fn concat_data<E: Copy>(parts: &[(&[usize], &[E])], axis: usize) -> Result<(Vec<usize>, Vec<E>)> {
    let (first, _) = parts.first().ok_or(Error::EmptyInput)?;
    if axis >= first.len() {
        return Err(Error::InvalidParams(format!("axis {axis} out of range for {first:?}")));
    }
    for (s, _) in parts {
        let same_rank = s.len() == first.len();
        if !same_rank || s.iter().zip(first.iter()).enumerate().any(|(i, (a, b))| i != axis && a != b) {
            return Err(Error::ShapeMismatch {
                expected: first.to_vec(),
                got: s.to_vec(),
            });
        }
    }
    let outer: usize = first[..axis].iter().product();
    let inner: usize = first[axis + 1..].iter().product();
    let mut out = Vec::with_capacity(parts.iter().map(|(_, d)| d.len()).sum());
    for o in 0..outer {
        for (s, d) in parts {
            let chunk = s[axis] * inner;
            out.extend_from_slice(&d[o * chunk..(o + 1) * chunk]);
        }
    }
    let mut shape = first.to_vec();
    shape[axis] = parts.iter().map(|(s, _)| s[axis]).sum();
    Ok((shape, out))
}

impl Reorg for RealTensor {
    fn shape(&self) -> &[usize] {
        RealTensor::shape(self)
    }

    fn reshape(&self, shape: &[usize]) -> Result<Self> {
        reshape_check(self.shape(), shape)?;
        self.clone().reshaped(shape.to_vec())
    }

    fn permute(&self, axes: &[usize]) -> Result<Self> {
        let (s, d) = permute_data(self.shape(), self.values(), axes)?;
        RealTensor::new(s, d)
    }

    fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Self>> {
        split_data(self.shape(), self.values(), axis, sizes)?
            .into_iter()
            .map(|(s, d)| RealTensor::new(s, d))
            .collect()
    }

    fn concatenate(parts: &[Self], axis: usize) -> Result<Self> {
        let views: Vec<_> = parts.iter().map(|p| (p.shape(), p.values())).collect();
        let (s, d) = concat_data(&views, axis)?;
        RealTensor::new(s, d)
    }
}

impl Reorg for FixedTensor {
    fn shape(&self) -> &[usize] {
        FixedTensor::shape(self)
    }

    fn reshape(&self, shape: &[usize]) -> Result<Self> {
        reshape_check(self.shape(), shape)?;
        self.clone().reshaped(shape.to_vec())
    }

    fn permute(&self, axes: &[usize]) -> Result<Self> {
        let (s, d) = permute_data(self.shape(), self.raw(), axes)?;
        FixedTensor::new(s, self.format(), self.params(), d)
    }

    fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Self>> {
        split_data(self.shape(), self.raw(), axis, sizes)?
            .into_iter()
            .map(|(s, d)| FixedTensor::new(s, self.format(), self.params(), d))
            .collect()
    }

    fn concatenate(parts: &[Self], axis: usize) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyInput)?;
        if parts.iter().any(|p| p.format() != first.format() || p.params() != first.params()) {
            return Err(Error::InvalidParams("concatenated tensors must share format and parameters".into()));
        }
        let views: Vec<_> = parts.iter().map(|p| (p.shape(), p.raw())).collect();
        let (s, d) = concat_data(&views, axis)?;
        FixedTensor::new(s, first.format(), first.params(), d)
    }
}
