use crate::element::Element;
use crate::error::{config_err, shape_err, Result};
use crate::tensor::Tensor;

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Gather `src` (shape `shape`) into the layout obtained by permuting axes.
fn permute_data<T: Element>(src: &[T], shape: &[usize], axes: &[usize]) -> Vec<T> {
    let rank = shape.len();
    let in_strides = strides_of(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = src.len();
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return out;
    }
    if rank == 0 {
        out.push(src[0]);
        return out;
    }
    let inner = out_shape[rank - 1];
    let inner_stride = src_strides[rank - 1];
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    while out.len() < total {
        out.extend((0..inner).map(|j| src[base + j * inner_stride]));
        let mut d = rank - 1;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            base += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            base -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}

impl<T: Element> Tensor<T> {
    /// Same values, new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(shape_err("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            "reshape",
            vec![self.clone()],
            Box::new(|g| vec![Some(g.to_vec())]),
        ))
    }

    /// Reorder axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(config_err("permute", format!("{axes:?} is not a permutation of rank {rank}")));
        }
        let shape: Vec<usize> = axes.iter().map(|&a| self.shape()[a]).collect();
        let data = permute_data(&self.data(), self.shape(), axes);
        let mut inverse = vec![0; rank];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let out_shape = shape.clone();
        Ok(Tensor::from_op(
            data,
            shape,
            "permute",
            vec![self.clone()],
            Box::new(move |g| vec![Some(permute_data(g, &out_shape, &inverse))]),
        ))
    }

    /// Swap the last two axes.
    pub fn transpose_last(&self) -> Result<Tensor<T>> {
        let r = self.rank();
        if r < 2 {
            return Err(config_err("transpose_last", format!("rank {r} < 2")));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| config_err("concat", "no tensors given"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(config_err("concat", format!("axis {axis} out of range for rank {rank}")));
        }
        for p in parts {
            let ok = p.rank() == rank
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(shape_err("concat", first.shape(), p.shape()));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total_axis: usize = sizes.iter().sum();
        let mut shape = first.shape().to_vec();
        shape[axis] = total_axis;
        let mut data = Vec::with_capacity(outer * total_axis * inner);
        {
            let guards: Vec<_> = parts.iter().map(|p| p.data()).collect();
            for o in 0..outer {
                for (g, &s) in guards.iter().zip(&sizes) {
                    data.extend_from_slice(&g[o * s * inner..(o + 1) * s * inner]);
                }
            }
        }
        Ok(Tensor::from_op(
            data,
            shape,
            "concat",
            parts.to_vec(),
            Box::new(move |g| {
                let mut grads: Vec<Vec<T>> = sizes.iter().map(|&s| Vec::with_capacity(outer * s * inner)).collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (gr, &s) in grads.iter_mut().zip(&sizes) {
                        gr.extend_from_slice(&g[off..off + s * inner]);
                        off += s * inner;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        ))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let rank = self.rank();
        if axis >= rank || start + len > self.shape()[axis] {
            return Err(config_err(
                "narrow",
                format!("range {start}..{} on axis {axis} of {:?}", start + len, self.shape()),
            ));
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let full = self.shape()[axis];
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        {
            let d = self.data();
            for o in 0..outer {
                let base = (o * full + start) * inner;
                data.extend_from_slice(&d[base..base + len * inner]);
            }
        }
        let numel = self.numel();
        Ok(Tensor::from_op(
            data,
            shape,
            "narrow",
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![T::zero(); numel];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Split along `axis` into `n` equal chunks.
    pub fn chunk(&self, n: usize, axis: usize) -> Result<Vec<Tensor<T>>> {
        let size = self.shape().get(axis).copied().unwrap_or(0);
        if n == 0 || size % n != 0 {
            return Err(config_err("chunk", format!("cannot split {size} into {n} equal parts")));
        }
        let step = size / n;
        (0..n).map(|i| self.narrow(axis, i * step, step)).collect()
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Tensor<T> {
        let s = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(
            vec![s],
            Vec::new(),
            "sum",
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0]; n])]),
        )
    }

    /// Mean of all elements, as a rank-0 tensor.
    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel().max(1);
        self.sum().scale(1.0 / n as f64)
    }
}
