use crate::error::{Error, Result};

use super::kernels;
use super::real::{gemm, MatRef};
use super::{Real, Tensor};

/// Handle to a node recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// How a normalization op looks up its gain/bias for element `(row, col)`.
#[derive(Clone, Copy, Debug)]
pub(crate) enum AffineIndex {
    /// Layer norm: one gain per feature column.
    PerColumn,
    /// Sequence normalization: one scalar per group; `row / rows_per_group % groups`.
    PerGroup { rows_per_group: usize, groups: usize },
}

impl AffineIndex {
    #[inline]
    pub(crate) fn index(self, row: usize, col: usize) -> usize {
        match self {
            AffineIndex::PerColumn => col,
            AffineIndex::PerGroup { rows_per_group, groups } => (row / rows_per_group) % groups,
        }
    }
}

pub(crate) enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, rows: usize, k: usize, n: usize },
    BatchMatMul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize, trans_b: bool },
    Affine { x: Var, w: Var, b: Var, rows: usize, k: usize, n: usize },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: T },
    Reshape { a: Var },
    Concat { parts: Vec<(Var, usize)>, rows: usize, total: usize },
    SplitHeads { a: Var, batch: usize, seq: usize, heads: usize, dh: usize },
    MergeHeads { a: Var, batch: usize, seq: usize, heads: usize, dh: usize },
    TransposeLast2 { a: Var, outer: usize, r: usize, c: usize },
    ReduceSum { a: Var, outer: usize, extent: usize, inner: usize },
    ReduceMean { a: Var, outer: usize, extent: usize, inner: usize },
    ReduceMax { a: Var, outer: usize, extent: usize, inner: usize, argmax: Vec<usize> },
    Broadcast { a: Var, outer: usize, extent: usize, inner: usize },
    Softmax { a: Var, width: usize },
    Normalize { a: Var, gain: Var, bias: Var, width: usize, index: AffineIndex, xhat: Vec<T>, inv: Vec<T> },
    Gelu { a: Var, cdf: Vec<T> },
    Dropout { a: Var, mask: Vec<T> },
    Gather { table: Var, ids: Vec<usize>, width: usize },
    SelectIndex { a: Var, outer: usize, extent: usize, inner: usize, index: usize },
    SliceLast { a: Var, rows: usize, width: usize, start: usize, end: usize },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T>, classes: usize },
    SumAll { a: Var },
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Record of tensor operations in execution order, differentiated in reverse.
///
/// Nodes are append-only: an op's inputs always precede it, and recorded
/// values are never mutated afterwards.
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new() }
    }

    /// Leaf that receives a gradient (parameters, probed inputs).
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Gradient of the last `backward` root with respect to `v`, if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Order-sensitive digest of every recorded value (bit patterns).
    pub fn checksum(&self) -> u64 {
        let words: Vec<u64> = self
            .nodes
            .iter()
            .flat_map(|n| n.value.data().iter().map(|v| v.as_f64().to_bits()))
            .collect();
        crate::rng::hash64(&words)
    }

    /// Reverse-mode sweep from a single-element `root`.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::BadShape {
                op: "backward",
                shape: self.shape(root).to_vec(),
                reason: "root must hold exactly one value".into(),
            });
        }
        self.grads.clear();
        self.grads.resize_with(self.nodes.len(), || None);
        self.grads[root.0] = Some(vec![T::one()]);
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        for i in (0..=root.0).rev() {
            if !nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backprop(nodes, grads, i, &g);
            grads[i] = Some(g);
        }
        Ok(())
    }
}

/// Runs `f` on the gradient buffer of `v`, allocating zeros on first touch.
/// Does nothing for nodes that do not require a gradient.
fn with_grad<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]);
    f(buf);
}

/// Removes the gradient buffer of `v` (zeros if untouched) for exclusive use;
/// callers put it back.
fn take_grad<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], v: Var) -> Vec<T> {
    grads[v.0].take().unwrap_or_else(|| vec![T::zero(); nodes[v.0].value.len()])
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}

fn backprop<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], i: usize, g: &[T]) {
    let val = |v: Var| nodes[v.0].value.data();
    match &nodes[i].op {
        Op::Leaf => {}
        &Op::MatMul { a, b, rows, k, n } => {
            let gm = MatRef::new(g, rows, n);
            with_grad(nodes, grads, a, |da| gemm(T::one(), gm, MatRef::new(val(b), k, n).t(), T::one(), da));
            with_grad(nodes, grads, b, |db| gemm(T::one(), MatRef::new(val(a), rows, k).t(), gm, T::one(), db));
        }
        &Op::BatchMatMul { a, b, batch, m, k, n, trans_b } => {
            let (av, bv) = (val(a), val(b));
            with_grad(nodes, grads, a, |da| {
                for s in 0..batch {
                    let gs = MatRef::new(&g[s * m * n..(s + 1) * m * n], m, n);
                    let bs = &bv[s * k * n..(s + 1) * k * n];
                    // dA = dC * B^T, or dC * B when B entered transposed
                    let bt = if trans_b { MatRef::new(bs, n, k) } else { MatRef::new(bs, k, n).t() };
                    gemm(T::one(), gs, bt, T::one(), &mut da[s * m * k..(s + 1) * m * k]);
                }
            });
            with_grad(nodes, grads, b, |db| {
                for s in 0..batch {
                    let gs = MatRef::new(&g[s * m * n..(s + 1) * m * n], m, n);
                    let as_ = MatRef::new(&av[s * m * k..(s + 1) * m * k], m, k);
                    let out = &mut db[s * k * n..(s + 1) * k * n];
                    if trans_b {
                        gemm(T::one(), gs.t(), as_, T::one(), out);
                    } else {
                        gemm(T::one(), as_.t(), gs, T::one(), out);
                    }
                }
            });
        }
        &Op::Affine { x, w, b, rows, k, n } => {
            let gm = MatRef::new(g, rows, n);
            with_grad(nodes, grads, x, |dx| gemm(T::one(), gm, MatRef::new(val(w), k, n).t(), T::one(), dx));
            with_grad(nodes, grads, w, |dw| gemm(T::one(), MatRef::new(val(x), rows, k).t(), gm, T::one(), dw));
            with_grad(nodes, grads, b, |db| {
                for row in g.chunks_exact(n) {
                    add_into(db, row);
                }
            });
        }
        &Op::Add { a, b } => {
            with_grad(nodes, grads, a, |da| add_into(da, g));
            with_grad(nodes, grads, b, |db| add_into(db, g));
        }
        &Op::Mul { a, b } => {
            let (av, bv) = (val(a), val(b));
            with_grad(nodes, grads, a, |da| {
                for j in 0..g.len() {
                    da[j] = da[j] + g[j] * bv[j];
                }
            });
            with_grad(nodes, grads, b, |db| {
                for j in 0..g.len() {
                    db[j] = db[j] + g[j] * av[j];
                }
            });
        }
        &Op::Scale { a, c } => with_grad(nodes, grads, a, |da| {
            for (d, &gv) in da.iter_mut().zip(g) {
                *d = *d + c * gv;
            }
        }),
        &Op::Reshape { a } => with_grad(nodes, grads, a, |da| add_into(da, g)),
        Op::Concat { parts, rows, total } => {
            let mut offset = 0;
            for &(p, w) in parts {
                with_grad(nodes, grads, p, |dp| {
                    for r in 0..*rows {
                        add_into(&mut dp[r * w..(r + 1) * w], &g[r * total + offset..r * total + offset + w]);
                    }
                });
                offset += w;
            }
        }
        &Op::SplitHeads { a, batch, seq, heads, dh } => with_grad(nodes, grads, a, |da| {
            kernels::merge_heads_acc(g, da, batch, seq, heads, dh);
        }),
        &Op::MergeHeads { a, batch, seq, heads, dh } => with_grad(nodes, grads, a, |da| {
            kernels::split_heads_acc(g, da, batch, seq, heads, dh);
        }),
        &Op::TransposeLast2 { a, outer, r, c } => with_grad(nodes, grads, a, |da| {
            // g is [outer, c, r]; transpose back into [outer, r, c]
            kernels::transpose_acc(g, da, outer, c, r);
        }),
        &Op::ReduceSum { a, outer, extent, inner } => with_grad(nodes, grads, a, |da| {
            for o in 0..outer {
                for e in 0..extent {
                    let base = (o * extent + e) * inner;
                    add_into(&mut da[base..base + inner], &g[o * inner..(o + 1) * inner]);
                }
            }
        }),
        &Op::ReduceMean { a, outer, extent, inner } => with_grad(nodes, grads, a, |da| {
            let s = T::one() / T::from_f64(extent as f64);
            for o in 0..outer {
                for e in 0..extent {
                    let base = (o * extent + e) * inner;
                    for j in 0..inner {
                        da[base + j] = da[base + j] + s * g[o * inner + j];
                    }
                }
            }
        }),
        Op::ReduceMax { a, outer, extent, inner, argmax } => with_grad(nodes, grads, *a, |da| {
            for o in 0..*outer {
                for j in 0..*inner {
                    let e = argmax[o * inner + j];
                    let idx = (o * extent + e) * inner + j;
                    da[idx] = da[idx] + g[o * inner + j];
                }
            }
        }),
        &Op::Broadcast { a, outer, extent, inner } => with_grad(nodes, grads, a, |da| {
            for o in 0..outer {
                for e in 0..extent {
                    let base = (o * extent + e) * inner;
                    add_into(&mut da[o * inner..(o + 1) * inner], &g[base..base + inner]);
                }
            }
        }),
        &Op::Softmax { a, width } => {
            let y = nodes[i].value.data();
            with_grad(nodes, grads, a, |da| kernels::softmax_backward_acc(y, g, da, width));
        }
        Op::Normalize { a, gain, bias, width, index, xhat, inv } => {
            let (width, index) = (*width, *index);
            with_grad(nodes, grads, *a, |da| {
                kernels::normalize_backward_input(g, xhat, inv, val(*gain), index, width, da)
            });
            // gain and bias are distinct nodes, so both buffers can be borrowed at once
            let mut dg = nodes[gain.0].requires_grad.then(|| take_grad(nodes, grads, *gain));
            let mut db = nodes[bias.0].requires_grad.then(|| take_grad(nodes, grads, *bias));
            kernels::normalize_backward_affine(g, xhat, index, width, dg.as_deref_mut(), db.as_deref_mut());
            if let Some(v) = dg {
                grads[gain.0] = Some(v);
            }
            if let Some(v) = db {
                grads[bias.0] = Some(v);
            }
        }
        Op::Gelu { a, cdf } => {
            let x = val(*a);
            with_grad(nodes, grads, *a, |da| {
                for j in 0..g.len() {
                    da[j] = da[j] + g[j] * kernels::gelu_grad_from_cdf(x[j], cdf[j]);
                }
            });
        }
        Op::Dropout { a, mask } => with_grad(nodes, grads, *a, |da| {
            for j in 0..g.len() {
                da[j] = da[j] + g[j] * mask[j];
            }
        }),
        Op::Gather { table, ids, width } => with_grad(nodes, grads, *table, |dt| {
            for (r, &id) in ids.iter().enumerate() {
                add_into(&mut dt[id * width..(id + 1) * width], &g[r * width..(r + 1) * width]);
            }
        }),
        &Op::SelectIndex { a, outer, extent, inner, index } => with_grad(nodes, grads, a, |da| {
            for o in 0..outer {
                let base = (o * extent + index) * inner;
                add_into(&mut da[base..base + inner], &g[o * inner..(o + 1) * inner]);
            }
        }),
        &Op::SliceLast { a, rows, width, start, end } => with_grad(nodes, grads, a, |da| {
            let w = end - start;
            for r in 0..rows {
                add_into(&mut da[r * width + start..r * width + end], &g[r * w..(r + 1) * w]);
            }
        }),
        Op::CrossEntropy { logits, targets, probs, classes } => {
            let scale = g[0] / T::from_f64(targets.len() as f64);
            with_grad(nodes, grads, *logits, |dl| {
                for (r, &t) in targets.iter().enumerate() {
                    for c in 0..*classes {
                        let idx = r * classes + c;
                        let onehot = if c == t { T::one() } else { T::zero() };
                        dl[idx] = dl[idx] + scale * (probs[idx] - onehot);
                    }
                }
            });
        }
        &Op::SumAll { a } => with_grad(nodes, grads, a, |da| {
            for d in da.iter_mut() {
                *d = *d + g[0];
            }
        }),
    }
}
