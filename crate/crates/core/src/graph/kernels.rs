use super::tensor::{argmax, axis_layout, Tensor};
use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn check_axis(op: &'static str, x: &Tensor, axis: usize) -> Result<()> {
    if axis >= x.rank() {
        return Err(Error::shape(
            op,
            format!("axis {axis} out of range for shape {:?}", x.shape()),
        ));
    }
    Ok(())
}

fn without_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    shape
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != axis)
        .map(|(_, &d)| d)
        .collect()
}

pub(crate) fn add_row(a: &Tensor, row: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || row.rank() != 1 || a.shape()[1] != row.shape()[0] {
        return Err(Error::shape(
            "add_row",
            format!("{:?} + {:?}", a.shape(), row.shape()),
        ));
    }
    let cols = row.len();
    let mut out = a.clone();
    for chunk in out.data_mut().chunks_mut(cols.max(1)) {
        for (o, r) in chunk.iter_mut().zip(row.data()) {
            *o += r;
        }
    }
    Ok(out)
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::shape(
            "matmul",
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in ad[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            for (o, &bpj) in orow.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o += aip * bpj;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `g · bᵀ` for `g: [m, n]`, `b: [k, n]`.
pub(crate) fn matmul_nt(g: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, n) = (g.shape()[0], g.shape()[1]);
    let k = b.shape()[0];
    let mut out = vec![0.0; m * k];
    let (gd, bd) = (g.data(), b.data());
    for i in 0..m {
        let grow = &gd[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &bd[p * n..(p + 1) * n];
            out[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::new(vec![m, k], out)
}

/// `aᵀ · g` for `a: [m, k]`, `g: [m, n]`.
pub(crate) fn matmul_tn(a: &Tensor, g: &Tensor) -> Result<Tensor> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = g.shape()[1];
    let mut out = vec![0.0; k * n];
    let (ad, gd) = (a.data(), g.data());
    for i in 0..m {
        let grow = &gd[i * n..(i + 1) * n];
        for (p, &aip) in ad[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            for (o, &gij) in out[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *o += aip * gij;
            }
        }
    }
    Tensor::new(vec![k, n], out)
}

/// Sum over `axis` (removed from the shape), scaled by `scale`.
pub(crate) fn reduce_sum(x: &Tensor, axis: usize, scale: f64) -> Result<Tensor> {
    check_axis("sum", x, axis)?;
    let (outer, n, inner) = axis_layout(x.shape(), axis);
    let mut out = vec![0.0; outer * inner];
    let d = x.data();
    for o in 0..outer {
        for j in 0..n {
            let base = (o * n + j) * inner;
            for i in 0..inner {
                out[o * inner + i] += d[base + i];
            }
        }
    }
    if scale != 1.0 {
        out.iter_mut().for_each(|v| *v *= scale);
    }
    Tensor::new(without_axis(x.shape(), axis), out)
}

/// Inverse of [`reduce_sum`]: repeats `g` along `axis` of `shape`.
pub(crate) fn broadcast_axis(g: &Tensor, shape: &[usize], axis: usize, scale: f64) -> Tensor {
    let (outer, n, inner) = axis_layout(shape, axis);
    let gd = g.data();
    let mut out = vec![0.0; outer * n * inner];
    for o in 0..outer {
        for j in 0..n {
            let base = (o * n + j) * inner;
            for i in 0..inner {
                out[base + i] = gd[o * inner + i] * scale;
            }
        }
    }
    Tensor::new(shape.to_vec(), out).expect("broadcast shape")
}

/// Calls `f(lane)` for every 1-D lane along `axis`, in row-major order of
/// the remaining axes.
fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(Lane)) {
    let (outer, n, inner) = axis_layout(shape, axis);
    for o in 0..outer {
        for i in 0..inner {
            f(Lane {
                base: o * n * inner + i,
                stride: inner,
                n,
            });
        }
    }
}

#[derive(Clone, Copy)]
struct Lane {
    base: usize,
    stride: usize,
    n: usize,
}

impl Lane {
    #[inline]
    fn at(self, j: usize) -> usize {
        self.base + j * self.stride
    }
}

pub(crate) fn log_sum_exp(x: &Tensor, axis: usize) -> Result<Tensor> {
    check_axis("log_sum_exp", x, axis)?;
    let d = x.data();
    let mut out = Vec::new();
    for_each_lane(x.shape(), axis, |lane| {
        let m = (0..lane.n).map(|j| d[lane.at(j)]).fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            out.push(f64::NEG_INFINITY);
            return;
        }
        let s: f64 = (0..lane.n).map(|j| (d[lane.at(j)] - m).exp()).sum();
        out.push(m + s.ln());
    });
    Tensor::new(without_axis(x.shape(), axis), out)
}

pub(crate) fn log_sum_exp_backward(x: &Tensor, y: &Tensor, g: &Tensor, axis: usize) -> Tensor {
    let (xd, yd, gd) = (x.data(), y.data(), g.data());
    let mut out = vec![0.0; x.len()];
    let mut li = 0;
    for_each_lane(x.shape(), axis, |lane| {
        for j in 0..lane.n {
            let k = lane.at(j);
            out[k] = gd[li] * (xd[k] - yd[li]).exp();
        }
        li += 1;
    });
    Tensor::new(x.shape().to_vec(), out).expect("lse backward shape")
}

/// `softmax(x / tau)` along `axis`, computed with max subtraction.
pub(crate) fn softmax(x: &Tensor, axis: usize, tau: f64) -> Result<Tensor> {
    check_axis("softmax", x, axis)?;
    let d = x.data();
    let mut out = vec![0.0; x.len()];
    let mut err = None;
    for_each_lane(x.shape(), axis, |lane| {
        let m = (0..lane.n).map(|j| d[lane.at(j)]).fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            err = Some(m);
            return;
        }
        let mut s = 0.0;
        for j in 0..lane.n {
            let e = ((d[lane.at(j)] - m) / tau).exp();
            out[lane.at(j)] = e;
            s += e;
        }
        for j in 0..lane.n {
            out[lane.at(j)] /= s;
        }
    });
    if let Some(m) = err {
        return Err(Error::domain("softmax", format!("lane maximum is {m}")));
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub(crate) fn softmax_backward(y: &Tensor, g: &Tensor, axis: usize, tau: f64) -> Tensor {
    let (yd, gd) = (y.data(), g.data());
    let mut out = vec![0.0; y.len()];
    for_each_lane(y.shape(), axis, |lane| {
        let dot: f64 = (0..lane.n).map(|j| yd[lane.at(j)] * gd[lane.at(j)]).sum();
        for j in 0..lane.n {
            let k = lane.at(j);
            out[k] = yd[k] * (gd[k] - dot) / tau;
        }
    });
    Tensor::new(y.shape().to_vec(), out).expect("softmax backward shape")
}

pub(crate) fn log_softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    check_axis("log_softmax", x, axis)?;
    let d = x.data();
    let mut out = vec![0.0; x.len()];
    let mut err = None;
    for_each_lane(x.shape(), axis, |lane| {
        let m = (0..lane.n).map(|j| d[lane.at(j)]).fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            err = Some(m);
            return;
        }
        let lse = m + (0..lane.n).map(|j| (d[lane.at(j)] - m).exp()).sum::<f64>().ln();
        for j in 0..lane.n {
            out[lane.at(j)] = d[lane.at(j)] - lse;
        }
    });
    if let Some(m) = err {
        return Err(Error::domain("log_softmax", format!("lane maximum is {m}")));
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub(crate) fn log_softmax_backward(y: &Tensor, g: &Tensor, axis: usize) -> Tensor {
    let (yd, gd) = (y.data(), g.data());
    let mut out = vec![0.0; y.len()];
    for_each_lane(y.shape(), axis, |lane| {
        let total: f64 = (0..lane.n).map(|j| gd[lane.at(j)]).sum();
        for j in 0..lane.n {
            let k = lane.at(j);
            out[k] = gd[k] - yd[k].exp() * total;
        }
    });
    Tensor::new(y.shape().to_vec(), out).expect("log_softmax backward shape")
}

pub(crate) fn argmax_one_hot(x: &Tensor, axis: usize) -> Result<Tensor> {
    check_axis("argmax_one_hot", x, axis)?;
    let d = x.data();
    let mut out = vec![0.0; x.len()];
    let mut buf = Vec::new();
    for_each_lane(x.shape(), axis, |lane| {
        buf.clear();
        buf.extend((0..lane.n).map(|j| d[lane.at(j)]));
        if lane.n > 0 {
            out[lane.at(argmax(&buf))] = 1.0;
        }
    });
    Tensor::new(x.shape().to_vec(), out)
}

pub(crate) fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts[0];
    check_axis("concat", first, axis)?;
    for p in parts {
        let ok = p.rank() == first.rank()
            && p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(Error::shape(
                "concat",
                format!("{:?} vs {:?} along axis {axis}", p.shape(), first.shape()),
            ));
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
    let (outer, _, inner) = axis_layout(first.shape(), axis);
    let mut out = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for p in parts {
            let block = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * block..(o + 1) * block]);
        }
    }
    Tensor::new(shape, out)
}

pub(crate) fn slice(x: &Tensor, axis: usize, start: usize, end: usize) -> Result<Tensor> {
    check_axis("slice", x, axis)?;
    if start > end || end > x.shape()[axis] {
        return Err(Error::shape(
            "slice",
            format!("range {start}..{end} on axis of length {}", x.shape()[axis]),
        ));
    }
    let (outer, n, inner) = axis_layout(x.shape(), axis);
    let mut shape = x.shape().to_vec();
    shape[axis] = end - start;
    let mut out = Vec::with_capacity(outer * (end - start) * inner);
    for o in 0..outer {
        out.extend_from_slice(&x.data()[(o * n + start) * inner..(o * n + end) * inner]);
    }
    Tensor::new(shape, out)
}

pub(crate) fn slice_backward(g: &Tensor, shape: &[usize], axis: usize, start: usize) -> Tensor {
    let (outer, n, inner) = axis_layout(shape, axis);
    let len = g.shape()[axis];
    let mut out = vec![0.0; outer * n * inner];
    for o in 0..outer {
        let src = &g.data()[o * len * inner..(o + 1) * len * inner];
        out[(o * n + start) * inner..(o * n + start + len) * inner].copy_from_slice(src);
    }
    Tensor::new(shape.to_vec(), out).expect("slice backward shape")
}
