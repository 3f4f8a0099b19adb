use crate::error::{Error, Result};
use crate::gradcore::{Graph, Real, Tensor, Var, NORM_EPS};
use crate::rng::Rng;

use super::config::{ArchKind, HeadKind};
use super::model::Model;

/// Scaled dot products `<q_i, k_j> / sqrt(d_h)` for `q`, `k` of shape
/// `[.., N, d_h]`; result is `[.., N, N]`.
pub fn attention_logits<T: Real>(g: &mut Graph<T>, q: Var, k: Var) -> Result<Var> {
    if g.shape(q) != g.shape(k) {
        return Err(Error::ShapeMismatch { op: "attention_logits", lhs: g.shape(q).to_vec(), rhs: g.shape(k).to_vec() });
    }
    let dh = g.value(q).last_dim();
    let l = g.bmm(q, k, true)?;
    Ok(g.scale(l, T::from_f64(1.0 / (dh as f64).sqrt())))
}

/// Sequence pooling of one layer.
///
/// For attention kinds `values` is `[.., N, d_h]` and `logits` is
/// `[.., N, N]`; for NAP `nap` carries the per-head gain and bias (shape
/// `[M]`, grouped over axis 1 of the logits). For SUM/MAX `values` is the
/// layer input `[B, N, d]` and the pooled vector is broadcast to every
/// position.
pub fn pool<T: Real>(
    g: &mut Graph<T>,
    kind: ArchKind,
    logits: Option<Var>,
    values: Var,
    nap: Option<(Var, Var)>,
) -> Result<Var> {
    let vs = g.shape(values).to_vec();
    if vs.len() < 2 || vs[vs.len() - 2] == 0 {
        return Err(Error::EmptyInput("pool"));
    }
    let n = vs[vs.len() - 2];
    let need_logits = || Error::Runtime(format!("{} pooling needs attention logits", kind.name()));
    match kind {
        ArchKind::Bert | ArchKind::Mte => {
            let w = g.softmax_lastdim(logits.ok_or_else(need_logits)?)?;
            g.bmm(w, values, false)
        }
        ArchKind::Nap => {
            let (gain, bias) = nap.ok_or_else(|| Error::Runtime("nap pooling needs gain and bias".into()))?;
            let l = logits.ok_or_else(need_logits)?;
            let group_axis = g.shape(l).len().checked_sub(3).ok_or_else(|| Error::BadShape {
                op: "pool",
                shape: g.shape(l).to_vec(),
                reason: "nap logits need a head axis".into(),
            })?;
            let w = g.seq_normalize_grouped(l, gain, bias, T::from_f64(NORM_EPS), group_axis)?;
            g.bmm(w, values, false)
        }
        ArchKind::Non => {
            let o = g.bmm(logits.ok_or_else(need_logits)?, values, false)?;
            let o = g.scale(o, T::from_f64(1.0 / (n as f64).sqrt()));
            Ok(g.gelu(o))
        }
        ArchKind::Sum | ArchKind::Max => {
            let axis = vs.len() - 2;
            let r = if kind == ArchKind::Sum { g.reduce_sum(values, axis)? } else { g.reduce_max(values, axis)? };
            g.broadcast_over_axis(r, axis, n)
        }
    }
}

/// Forward context: bound parameter handles plus the dropout stream (present
/// only in training mode).
pub struct Ctx<'a, T: Real> {
    pub model: &'a Model<T>,
    pub vars: &'a [Var],
    pub dropout: Option<&'a mut Rng>,
}

impl<T: Real> Ctx<'_, T> {
    fn p(&self, name: &str) -> Result<Var> {
        self.model.var(self.vars, name)
    }

    fn affine(&self, g: &mut Graph<T>, x: Var, name: &str) -> Result<Var> {
        g.affine(x, self.p(&format!("{name}.w"))?, self.p(&format!("{name}.b"))?)
    }

    fn norm(&self, g: &mut Graph<T>, x: Var, name: &str) -> Result<Var> {
        g.layer_norm(x, self.p(&format!("{name}.gain"))?, self.p(&format!("{name}.bias"))?, T::from_f64(NORM_EPS))
    }

    fn drop(&mut self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let rate = self.model.config().dropout;
        match self.dropout.as_deref_mut() {
            Some(rng) if rate > 0.0 => g.dropout(x, rate, rng),
            _ => Ok(x),
        }
    }
}

/// Attention (or reduce-broadcast) output before mixing, `[B, N, d]`.
fn pooled<T: Real>(ctx: &Ctx<'_, T>, g: &mut Graph<T>, x: Var, l: usize) -> Result<Var> {
    let c = ctx.model.config();
    let kind = c.arch.kind;
    if !kind.is_attention() {
        return pool(g, kind, None, x, None);
    }
    let p = format!("layer{l}.attn");
    let mut heads = [x; 3];
    for (h, proj) in heads.iter_mut().zip(["query", "key", "value"]) {
        let y = ctx.affine(g, x, &format!("{p}.{proj}"))?;
        *h = g.split_heads(y, c.heads)?;
    }
    let [q, k, v] = heads;
    let logits = attention_logits(g, q, k)?;
    let nap = if kind == ArchKind::Nap {
        Some((ctx.p(&format!("{p}.nap.gain"))?, ctx.p(&format!("{p}.nap.bias"))?))
    } else {
        None
    };
    let o = pool(g, kind, Some(logits), v, nap)?;
    g.merge_heads(o)
}

/// One encoder layer on `x` of shape `[B, N, d]`.
pub fn transformer_block<T: Real>(ctx: &mut Ctx<'_, T>, g: &mut Graph<T>, x: Var, l: usize) -> Result<Var> {
    let arch = ctx.model.config().arch;
    let (a, f) = (format!("layer{l}.attn"), format!("layer{l}.ffn"));
    let o = pooled(ctx, g, x, l)?;
    if arch.pre_residual_norm {
        let mut o = o;
        if ctx.model.has(&format!("{a}.pool_norm.gain")) {
            o = ctx.norm(g, o, &format!("{a}.pool_norm"))?;
        }
        if arch.extra_gelu && arch.kind != ArchKind::Non {
            o = g.gelu(o);
        }
        if arch.kind.is_attention() {
            o = ctx.affine(g, o, &format!("{a}.mix"))?;
        }
        let o = ctx.norm(g, o, &format!("{a}.out_norm"))?;
        let o = ctx.drop(g, o)?;
        let u = g.add(x, o)?;

        let h = ctx.affine(g, u, &format!("{f}.in"))?;
        let h = ctx.norm(g, h, &format!("{f}.hidden_norm"))?;
        let h = g.gelu(h);
        let h = ctx.affine(g, h, &format!("{f}.out"))?;
        let h = ctx.norm(g, h, &format!("{f}.out_norm"))?;
        let h = ctx.drop(g, h)?;
        g.add(u, h)
    } else {
        let o = if arch.extra_gelu { g.gelu(o) } else { o };
        let m = ctx.affine(g, o, &format!("{a}.mix"))?;
        let m = ctx.drop(g, m)?;
        let s = g.add(x, m)?;
        let u = ctx.norm(g, s, &format!("{a}.norm"))?;

        let h = ctx.affine(g, u, &format!("{f}.in"))?;
        let h = g.gelu(h);
        let h = ctx.affine(g, h, &format!("{f}.out"))?;
        let h = ctx.drop(g, h)?;
        let s = g.add(u, h)?;
        ctx.norm(g, s, &format!("{f}.norm"))
    }
}

/// Checks a `[batch, n]` token array against the model's vocabulary and
/// maximum length.
fn check_tokens<T: Real>(model: &Model<T>, tokens: &[usize], batch: usize, n: usize) -> Result<()> {
    let c = model.config();
    if n == 0 || batch == 0 {
        return Err(Error::EmptyInput("forward"));
    }
    if tokens.len() != batch * n {
        return Err(Error::ShapeMismatch { op: "forward", lhs: vec![tokens.len()], rhs: vec![batch, n] });
    }
    if n > c.n_max {
        return Err(Error::OutOfRange { what: "sequence length", value: n, limit: c.n_max });
    }
    if let Some(&t) = tokens.iter().find(|&&t| t >= c.vocab) {
        return Err(Error::OutOfRange { what: "token id", value: t, limit: c.vocab });
    }
    Ok(())
}

/// Embedding, encoder stack and head. `tokens` is row-major `[batch, n]`.
/// Returns logits `[batch, n]` for per-token and first-token heads and
/// `[batch, vocab]` for the mode head.
pub fn forward<T: Real>(
    ctx: &mut Ctx<'_, T>,
    g: &mut Graph<T>,
    tokens: &[usize],
    batch: usize,
    n: usize,
) -> Result<Var> {
    check_tokens(ctx.model, tokens, batch, n)?;
    let c = ctx.model.config().clone();
    let e = g.gather_rows(ctx.p("embed.token")?, tokens)?;
    let mut x = g.reshape(e, &[batch, n, c.d])?;
    if c.positional {
        let positions: Vec<usize> = (0..n).collect();
        let pe = g.gather_rows(ctx.p("embed.position")?, &positions)?;
        let pe = g.broadcast_over_axis(pe, 0, batch)?;
        x = g.add(x, pe)?;
    }
    x = ctx.norm(g, x, "embed.norm")?;
    x = ctx.drop(g, x)?;
    for l in 0..c.layers {
        x = transformer_block(ctx, g, x, l)?;
    }
    match c.head {
        HeadKind::PerToken => {
            let y = ctx.affine(g, x, "head")?;
            g.reshape(y, &[batch, n])
        }
        HeadKind::FirstToken => {
            let x0 = g.select_index(x, 1, 0)?;
            let y = ctx.affine(g, x0, "head")?;
            g.slice_lastdim(y, 0, n)
        }
        HeadKind::Mode => {
            let x0 = g.select_index(x, 1, 0)?;
            ctx.affine(g, x0, "head")
        }
    }
}

impl<T: Real> Model<T> {
    /// Eval-mode logits for a `[batch, n]` token array.
    pub fn logits(&self, tokens: &[usize], batch: usize, n: usize) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let mut ctx = Ctx { model: self, vars: &vars, dropout: None };
        let y = forward(&mut ctx, &mut g, tokens, batch, n)?;
        Ok(g.value(y).clone())
    }

    /// Eval-mode argmax prediction per example (first maximum on ties).
    pub fn predict(&self, tokens: &[usize], batch: usize, n: usize) -> Result<Vec<usize>> {
        let y = self.logits(tokens, batch, n)?;
        Ok(argmax_rows(y.data(), y.last_dim()))
    }
}

/// Index of the first maximum of each `width`-long row.
pub fn argmax_rows<T: Real>(x: &[T], width: usize) -> Vec<usize> {
    x.chunks_exact(width)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
