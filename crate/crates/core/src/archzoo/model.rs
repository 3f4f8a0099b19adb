use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::gradcore::{truncated_normal_init, Graph, Real, Tensor, Var};
use crate::rng::Rng;

use super::config::{ArchKind, HeadKind, ModelConfig};

/// Standard deviation of the truncated-normal initializer.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Materialized parameters of one encoder, stored as named blocks in a fixed
/// order.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Real> {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

/// Parameter layout for `config`: `(name, shape, init)` in registration order.
fn layout(c: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, h) = (c.d, c.ffn_hidden());
    let mut out = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| out.push((name, shape, init));
    push("embed.token".into(), vec![c.vocab, d], Init::Normal);
    if c.positional {
        push("embed.position".into(), vec![c.n_max, d], Init::Normal);
    }
    push("embed.norm.gain".into(), vec![d], Init::Ones);
    push("embed.norm.bias".into(), vec![d], Init::Zeros);
    let affine = |push: &mut dyn FnMut(String, Vec<usize>, Init), name: String, i: usize, o: usize| {
        push(format!("{name}.w"), vec![i, o], Init::Normal);
        push(format!("{name}.b"), vec![o], Init::Zeros);
    };
    let norm = |push: &mut dyn FnMut(String, Vec<usize>, Init), name: String, n: usize| {
        push(format!("{name}.gain"), vec![n], Init::Ones);
        push(format!("{name}.bias"), vec![n], Init::Zeros);
    };
    let kind = c.arch.kind;
    for l in 0..c.layers {
        let p = format!("layer{l}");
        if kind.is_attention() {
            for proj in ["query", "key", "value", "mix"] {
                affine(&mut push, format!("{p}.attn.{proj}"), d, d);
            }
        }
        if kind == ArchKind::Nap {
            push(format!("{p}.attn.nap.gain"), vec![c.heads], Init::Ones);
            push(format!("{p}.attn.nap.bias"), vec![c.heads], Init::Zeros);
        }
        if c.arch.pre_residual_norm {
            if kind != ArchKind::Non {
                norm(&mut push, format!("{p}.attn.pool_norm"), d);
            }
            norm(&mut push, format!("{p}.attn.out_norm"), d);
        } else {
            norm(&mut push, format!("{p}.attn.norm"), d);
        }
        affine(&mut push, format!("{p}.ffn.in"), d, h);
        affine(&mut push, format!("{p}.ffn.out"), h, d);
        if c.arch.pre_residual_norm {
            norm(&mut push, format!("{p}.ffn.hidden_norm"), h);
            norm(&mut push, format!("{p}.ffn.out_norm"), d);
        } else {
            norm(&mut push, format!("{p}.ffn.norm"), d);
        }
    }
    let width = match c.head {
        HeadKind::PerToken => 1,
        HeadKind::FirstToken => c.n_max,
        HeadKind::Mode => c.vocab,
    };
    affine(&mut push, "head".into(), d, width);
    out
}

impl<T: Real> Model<T> {
    /// Builds a freshly initialized model. Weight matrices and embedding
    /// tables are drawn from a truncated normal with std 0.02; biases are
    /// zero, normalization gains one.
    pub fn build(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape, init) in layout(config) {
            let t = match init {
                Init::Normal => truncated_normal_init(&shape, INIT_STD, rng)?,
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::full(&shape, T::one()),
            };
            names.push(name);
            params.push(t);
        }
        Ok(Self::assemble(config.clone(), names, params))
    }

    fn assemble(config: ModelConfig, names: Vec<String>, params: Vec<Tensor<T>>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Model { config, names, params, index }
    }

    /// Rebuilds a model from named blocks, checking them against the layout
    /// implied by `config`.
    pub fn from_params(config: &ModelConfig, blocks: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let expected = layout(config);
        if expected.len() != blocks.len() {
            return Err(Error::config(format!(
                "expected {} parameter blocks, got {}",
                expected.len(),
                blocks.len()
            )));
        }
        let mut names = Vec::with_capacity(blocks.len());
        let mut params = Vec::with_capacity(blocks.len());
        for ((name, shape, _), (got_name, t)) in expected.into_iter().zip(blocks) {
            if name != got_name || shape != t.shape() {
                return Err(Error::config(format!(
                    "parameter block {got_name} {:?} does not match expected {name} {shape:?}",
                    t.shape()
                )));
            }
            names.push(name);
            params.push(t);
        }
        Ok(Self::assemble(config.clone(), names, params))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Records every parameter block in `g`, as trainable leaves or as
    /// constants, in registration order.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect()
    }

    /// Handle of the block called `name` among bound `vars`.
    pub(crate) fn var(&self, vars: &[Var], name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| vars[i])
            .ok_or_else(|| Error::Runtime(format!("model has no parameter block {name}")))
    }

    pub(crate) fn has(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Same model at another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }
}
