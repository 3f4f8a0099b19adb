//! Forward builders. Each records one node and returns its handle.

use rand::Rng as _;

use crate::error::{Error, Result};

use super::graph::{AffineIndex, Op};
use super::kernels;
use super::real::{gemm, MatRef};
use super::tensor::split_at_axis;
use super::{Graph, Real, Tensor, Var};

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch { op, lhs: a.to_vec(), rhs: b.to_vec() }
}

fn bad(op: &'static str, shape: &[usize], reason: impl Into<String>) -> Error {
    Error::BadShape { op, shape: shape.to_vec(), reason: reason.into() }
}

impl<T: Real> Graph<T> {
    fn unary_rg(&self, a: Var) -> bool {
        self.rg(a)
    }

    /// `[.., k] x [k, n] -> [.., n]`; leading axes of `a` are flattened into rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let (k, n) = (sb[0], sb[1]);
        let rows = self.value(a).len() / k.max(1);
        let mut out = vec![T::zero(); rows * n];
        gemm(T::one(), MatRef::new(self.value(a).data(), rows, k), MatRef::new(self.value(b).data(), k, n), T::zero(), &mut out);
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = n;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a, b, rows, k, n }, rg))
    }

    /// Batched product over matching leading axes: `[.., m, k] x [.., k, n]`,
    /// or `[.., m, k] x [.., n, k]^T` when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let r = sa.len();
        if r < 2 || sb.len() != r || sa[..r - 2] != sb[..r - 2] {
            return Err(mismatch("bmm", &sa, &sb));
        }
        let (m, k) = (sa[r - 2], sa[r - 1]);
        let (kb, n) = if trans_b { (sb[r - 1], sb[r - 2]) } else { (sb[r - 2], sb[r - 1]) };
        if kb != k {
            return Err(mismatch("bmm", &sa, &sb));
        }
        let batch: usize = sa[..r - 2].iter().product();
        let mut out = vec![T::zero(); batch * m * n];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            for s in 0..batch {
                let am = MatRef::new(&av[s * m * k..(s + 1) * m * k], m, k);
                let bs = &bv[s * k * n..(s + 1) * k * n];
                let bm = if trans_b { MatRef::new(bs, n, k).t() } else { MatRef::new(bs, k, n) };
                gemm(T::one(), am, bm, T::zero(), &mut out[s * m * n..(s + 1) * m * n]);
            }
        }
        let mut shape = sa[..r - 2].to_vec();
        shape.extend([m, n]);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::BatchMatMul { a, b, batch, m, k, n, trans_b }, rg))
    }

    /// `x W + b` over the last axis of `x`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x).to_vec(), self.shape(w).to_vec(), self.shape(b).to_vec());
        if sx.is_empty() || sw.len() != 2 || sx[sx.len() - 1] != sw[0] {
            return Err(mismatch("affine", &sx, &sw));
        }
        let (k, n) = (sw[0], sw[1]);
        if sb != [n] {
            return Err(mismatch("affine bias", &sw, &sb));
        }
        let rows = self.value(x).len() / k.max(1);
        let mut out = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            out.extend_from_slice(self.value(b).data());
        }
        gemm(T::one(), MatRef::new(self.value(x).data(), rows, k), MatRef::new(self.value(w).data(), k, n), T::one(), &mut out);
        let mut shape = sx;
        *shape.last_mut().unwrap() = n;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Affine { x, w, b, rows, k, n }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("add", self.shape(a), self.shape(b)));
        }
        let out: Vec<T> = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(self.shape(a).to_vec(), out)?, Op::Add { a, b }, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("mul", self.shape(a), self.shape(b)));
        }
        let out: Vec<T> = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(self.shape(a).to_vec(), out)?, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out: Vec<T> = self.value(a).data().iter().map(|&x| x * c).collect();
        let t = Tensor::new(self.shape(a).to_vec(), out).expect("same length");
        let rg = self.unary_rg(a);
        self.push(t, Op::Scale { a, c }, rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape.to_vec())?;
        let rg = self.unary_rg(a);
        Ok(self.push(t, Op::Reshape { a }, rg))
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat_lastdim(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::EmptyInput("concat_lastdim"))?;
        let lead = self.shape(*first)[..self.shape(*first).len().saturating_sub(1)].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(mismatch("concat_lastdim", self.shape(*first), s));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = parts.iter().any(|&p| self.rg(p));
        let parts = parts.iter().copied().zip(widths).collect();
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat { parts, rows, total }, rg))
    }

    /// `[b, n, d] -> [b, heads, n, d / heads]`.
    pub fn split_heads(&mut self, a: Var, heads: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 || heads == 0 || !s[2].is_multiple_of(heads) {
            return Err(bad("split_heads", &s, format!("expected [batch, seq, d] with d divisible by {heads}")));
        }
        let (batch, seq, dh) = (s[0], s[1], s[2] / heads);
        let mut out = vec![T::zero(); self.value(a).len()];
        kernels::split_heads_acc(self.value(a).data(), &mut out, batch, seq, heads, dh);
        let rg = self.unary_rg(a);
        Ok(self.push(Tensor::new(vec![batch, heads, seq, dh], out)?, Op::SplitHeads { a, batch, seq, heads, dh }, rg))
    }

    /// `[b, heads, n, dh] -> [b, n, heads * dh]`.
    pub fn merge_heads(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 {
            return Err(bad("merge_heads", &s, "expected [batch, heads, seq, dh]"));
        }
        let (batch, heads, seq, dh) = (s[0], s[1], s[2], s[3]);
        let mut out = vec![T::zero(); self.value(a).len()];
        kernels::merge_heads_acc(self.value(a).data(), &mut out, batch, seq, heads, dh);
        let rg = self.unary_rg(a);
        Ok(self.push(Tensor::new(vec![batch, seq, heads * dh], out)?, Op::MergeHeads { a, batch, seq, heads, dh }, rg))
    }

    pub fn transpose_last2(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(bad("transpose_last2", &s, "rank must be at least 2"));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let outer = self.value(a).len() / (r * c).max(1);
        let mut out = vec![T::zero(); self.value(a).len()];
        kernels::transpose_acc(self.value(a).data(), &mut out, outer, r, c);
        let mut shape = s;
        let l = shape.len();
        shape.swap(l - 2, l - 1);
        let rg = self.unary_rg(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::TransposeLast2 { a, outer, r, c }, rg))
    }

    fn reduce_parts(&self, a: Var, axis: usize, op: &'static str) -> Result<(Vec<usize>, usize, usize, usize)> {
        let s = self.shape(a);
        if axis >= s.len() {
            return Err(bad(op, s, format!("axis {axis} out of range")));
        }
        if s[axis] == 0 {
            return Err(Error::EmptyInput(op));
        }
        let (outer, extent, inner) = split_at_axis(s, axis);
        let mut shape = s.to_vec();
        shape.remove(axis);
        Ok((shape, outer, extent, inner))
    }

    pub fn reduce_sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (shape, outer, extent, inner) = self.reduce_parts(a, axis, "reduce_sum")?;
        let x = self.value(a).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for e in 0..extent {
                let base = (o * extent + e) * inner;
                for j in 0..inner {
                    out[o * inner + j] = out[o * inner + j] + x[base + j];
                }
            }
        }
        let rg = self.unary_rg(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::ReduceSum { a, outer, extent, inner }, rg))
    }

    pub fn reduce_mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (shape, outer, extent, inner) = self.reduce_parts(a, axis, "reduce_mean")?;
        let x = self.value(a).data();
        let s = T::one() / T::from_f64(extent as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for e in 0..extent {
                let base = (o * extent + e) * inner;
                for j in 0..inner {
                    out[o * inner + j] = out[o * inner + j] + x[base + j];
                }
            }
        }
        for v in out.iter_mut() {
            *v = *v * s;
        }
        let rg = self.unary_rg(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::ReduceMean { a, outer, extent, inner }, rg))
    }

    /// Maximum along `axis`; ties resolve to the first maximal index.
    pub fn reduce_max(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (shape, outer, extent, inner) = self.reduce_parts(a, axis, "reduce_max")?;
        let x = self.value(a).data();
        let mut out = vec![T::zero(); outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            out[o * inner..(o + 1) * inner].copy_from_slice(&x[o * extent * inner..o * extent * inner + inner]);
            for e in 1..extent {
                let base = (o * extent + e) * inner;
                for j in 0..inner {
                    if x[base + j] > out[o * inner + j] {
                        out[o * inner + j] = x[base + j];
                        argmax[o * inner + j] = e;
                    }
                }
            }
        }
        let rg = self.unary_rg(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::ReduceMax { a, outer, extent, inner, argmax }, rg))
    }

    /// Inserts a new axis of size `extent` at `axis`, repeating `v` along it.
    pub fn broadcast_over_axis(&mut self, v: Var, axis: usize, extent: usize) -> Result<Var> {
        let s = self.shape(v).to_vec();
        if axis > s.len() {
            return Err(bad("broadcast_over_axis", &s, format!("axis {axis} out of range")));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis..].iter().product();
        let x = self.value(v).data();
        let mut out = Vec::with_capacity(outer * extent * inner);
        for o in 0..outer {
            for _ in 0..extent {
                out.extend_from_slice(&x[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = s;
        shape.insert(axis, extent);
        let rg = self.unary_rg(v);
        Ok(self.push(Tensor::new(shape, out)?, Op::Broadcast { a: v, outer, extent, inner }, rg))
    }

    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() || t.rank() == 0 {
            return Err(Error::EmptyInput("softmax_lastdim"));
        }
        let width = t.last_dim();
        let mut out = vec![T::zero(); t.len()];
        kernels::softmax_rows(t.data(), width, &mut out);
        let shape = t.shape().to_vec();
        let rg = self.unary_rg(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { a, width }, rg))
    }

    fn normalize(&mut self, op: &'static str, a: Var, gain: Var, bias: Var, eps: T, index: AffineIndex) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() || t.rank() == 0 {
            return Err(Error::EmptyInput(op));
        }
        let width = t.last_dim();
        let mut xhat = vec![T::zero(); t.len()];
        let mut out = vec![T::zero(); t.len()];
        let inv = kernels::normalize_rows(
            t.data(),
            width,
            eps,
            self.value(gain).data(),
            self.value(bias).data(),
            index,
            &mut xhat,
            &mut out,
        );
        let shape = t.shape().to_vec();
        let rg = self.rg(a) || self.rg(gain) || self.rg(bias);
        Ok(self.push(Tensor::new(shape, out)?, Op::Normalize { a, gain, bias, width, index, xhat, inv }, rg))
    }

    /// Per-row standardization over the last axis with elementwise gain/bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let d = self.value(x).last_dim();
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(Error::config(format!(
                    "layer_norm: parameter shape {:?} does not match feature extent {d}",
                    self.shape(p)
                )));
            }
        }
        self.normalize("layer_norm", x, gain, bias, eps, AffineIndex::PerColumn)
    }

    /// Standardization along the last axis with scalar gain `g` and bias `b`
    /// (each of shape `[1]`) broadcast over the whole axis.
    pub fn seq_normalize(&mut self, x: Var, g: Var, b: Var, eps: T) -> Result<Var> {
        for p in [g, b] {
            if self.value(p).len() != 1 {
                return Err(mismatch("seq_normalize", self.shape(x), self.shape(p)));
            }
        }
        self.normalize("seq_normalize", x, g, b, eps, AffineIndex::PerGroup { rows_per_group: 1, groups: 1 })
    }

    /// [`Graph::seq_normalize`] with one scalar pair per index of `group_axis`
    /// (which must precede the normalized last axis). `g` and `b` have shape
    /// `[x.shape[group_axis]]`.
    pub fn seq_normalize_grouped(&mut self, x: Var, g: Var, b: Var, eps: T, group_axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if group_axis + 1 >= s.len() {
            return Err(bad("seq_normalize_grouped", &s, format!("group axis {group_axis} must precede the last axis")));
        }
        let groups = s[group_axis];
        for p in [g, b] {
            if self.shape(p) != [groups] {
                return Err(mismatch("seq_normalize_grouped", &s, self.shape(p)));
            }
        }
        let rows_per_group = s[group_axis + 1..s.len() - 1].iter().product();
        self.normalize("seq_normalize", x, g, b, eps, AffineIndex::PerGroup { rows_per_group, groups })
    }

    /// Exact (error-function) GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let x = self.value(a).data();
        let cdf: Vec<T> = x.iter().map(|&v| kernels::normal_cdf(v)).collect();
        let out: Vec<T> = x.iter().zip(&cdf).map(|(&v, &c)| v * c).collect();
        let t = Tensor::new(self.shape(a).to_vec(), out).expect("same length");
        let rg = self.unary_rg(a);
        // the cdf is only needed for the backward pass
        let cdf = if rg { cdf } else { Vec::new() };
        self.push(t, Op::Gelu { a, cdf }, rg)
    }

    /// Inverted dropout: zeroes with probability `rate`, scales survivors by `1/(1-rate)`.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: &mut crate::rng::Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = T::from_f64(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(a).len())
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let out: Vec<T> = self.value(a).data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        let rg = self.unary_rg(a);
        Ok(self.push(t, Op::Dropout { a, mask }, rg))
    }

    /// Rows of `table` (`[rows, width]`) selected by `ids`: `[ids.len(), width]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(bad("gather_rows", &s, "table must be rank 2"));
        }
        let (rows, width) = (s[0], s[1]);
        let data = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            if id >= rows {
                return Err(Error::OutOfRange { what: "row id", value: id, limit: rows });
            }
            out.extend_from_slice(&data[id * width..(id + 1) * width]);
        }
        let rg = self.unary_rg(table);
        Ok(self.push(Tensor::new(vec![ids.len(), width], out)?, Op::Gather { table, ids: ids.to_vec(), width }, rg))
    }

    /// Slice at `index` along `axis`, removing the axis.
    pub fn select_index(&mut self, a: Var, axis: usize, index: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return Err(bad("select_index", &s, format!("axis {axis} out of range")));
        }
        if index >= s[axis] {
            return Err(Error::OutOfRange { what: "index", value: index, limit: s[axis] });
        }
        let (outer, extent, inner) = split_at_axis(&s, axis);
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = (o * extent + index) * inner;
            out.extend_from_slice(&x[base..base + inner]);
        }
        let mut shape = s;
        shape.remove(axis);
        let rg = self.unary_rg(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::SelectIndex { a, outer, extent, inner, index }, rg))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice_lastdim(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let width = *s.last().ok_or_else(|| bad("slice_lastdim", &s, "rank 0"))?;
        if start > end || end > width {
            return Err(bad("slice_lastdim", &s, format!("range {start}..{end}")));
        }
        let rows = self.value(a).len() / width.max(1);
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&x[r * width + start..r * width + end]);
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = end - start;
        let rg = self.unary_rg(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::SliceLast { a, rows, width, start, end }, rg))
    }

    /// Mean over rows of `-log softmax(logits)[target]`; `logits` is `[.., classes]`.
    pub fn cross_entropy_from_logits(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        if t.is_empty() || t.rank() == 0 {
            return Err(Error::EmptyInput("cross_entropy_from_logits"));
        }
        let classes = t.last_dim();
        let rows = t.len() / classes;
        if targets.len() != rows {
            return Err(mismatch("cross_entropy_from_logits", t.shape(), &[targets.len()]));
        }
        if let Some(&bad_t) = targets.iter().find(|&&v| v >= classes) {
            return Err(Error::OutOfRange { what: "target index", value: bad_t, limit: classes });
        }
        let mut probs = vec![T::zero(); t.len()];
        kernels::softmax_rows(t.data(), classes, &mut probs);
        let mut loss = T::zero();
        for (r, &tg) in targets.iter().enumerate() {
            let row = &t.data()[r * classes..(r + 1) * classes];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            loss = loss + (lse - row[tg]);
        }
        loss = loss / T::from_f64(rows as f64);
        let rg = self.unary_rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs, classes },
            rg,
        ))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        let rg = self.unary_rg(a);
        self.push(Tensor::scalar(s), Op::SumAll { a }, rg)
    }
}
