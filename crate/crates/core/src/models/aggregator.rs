use rand::Rng;

use super::attention::AttentionBlock;
use super::{normal_tensor, CLS_INIT_STD};
use crate::error::{EmoError, Result};
use crate::numcore::{BoundParams, GradSet, Graph, ParamSet, Var};

pub const CLS_AGG: &str = "agg.cls";

/// Learned combination of the current gradient with retrieved gradients.
///
/// For every layer `l` the flattened gradients are projected to width
/// `d_agg` by `agg.in.{l}`, a shared attention block runs over
/// `[cls_g, g_t, V¹, …, V^M]`, and the `cls_g` output is projected back by
/// `agg.out.{l}`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionAggregator {
    pub schema: Vec<(String, Vec<usize>)>,
    pub d_agg: usize,
    pub block: AttentionBlock,
    pub out_init_std: f64,
}

impl AttentionAggregator {
    pub fn new(schema: Vec<(String, Vec<usize>)>, d_agg: usize, ffn_hidden: usize) -> Result<Self> {
        if d_agg == 0 || ffn_hidden == 0 || schema.is_empty() {
            return Err(EmoError::Config("aggregator needs d_agg >= 1 and a non-empty schema".into()));
        }
        Ok(Self { schema, d_agg, block: AttentionBlock::new("agg.blk", d_agg, ffn_hidden), out_init_std: 0.1 })
    }

    pub fn init(&self, rng: &mut impl Rng) -> Result<ParamSet> {
        let mut set = ParamSet::new();
        set.insert(CLS_AGG, normal_tensor(&[self.d_agg], CLS_INIT_STD, rng))?;
        for (name, shape) in &self.schema {
            let n: usize = shape.iter().product();
            set.insert(format!("agg.in.{name}"), normal_tensor(&[n, self.d_agg], 1.0 / (n as f64).sqrt(), rng))?;
            set.insert(
                format!("agg.out.{name}"),
                normal_tensor(&[self.d_agg, n], self.out_init_std / (self.d_agg as f64).sqrt(), rng),
            )?;
        }
        self.block.init_into(&mut set, rng)?;
        Ok(set)
    }

    /// `g_t[l]` and `memory[i][l]` follow the schema order. With no memory
    /// the input gradient vars are returned as they are.
    pub fn forward(&self, g: &mut Graph, p: &BoundParams, g_t: &[Var], memory: &[Vec<Var>]) -> Result<Vec<Var>> {
        if g_t.len() != self.schema.len() {
            return Err(EmoError::Shape(format!("{} gradient layers, schema has {}", g_t.len(), self.schema.len())));
        }
        for (l, (name, shape)) in self.schema.iter().enumerate() {
            if g.shape(g_t[l]) != shape.as_slice() {
                return Err(EmoError::Shape(format!("layer `{name}`: gradient shape {:?} != {shape:?}", g.shape(g_t[l]))));
            }
            for (i, m) in memory.iter().enumerate() {
                if m.len() != self.schema.len() || g.shape(m[l]) != shape.as_slice() {
                    return Err(EmoError::Shape(format!("memory token {i} does not match layer `{name}`")));
                }
            }
        }
        if memory.is_empty() {
            return Ok(g_t.to_vec());
        }
        let cls = p.get(CLS_AGG)?;
        let cls = g.reshape(cls, &[1, self.d_agg])?;
        let mut out = Vec::with_capacity(self.schema.len());
        for (l, (name, shape)) in self.schema.iter().enumerate() {
            let n: usize = shape.iter().product();
            let w_in = p.get(&format!("agg.in.{name}"))?;
            let w_out = p.get(&format!("agg.out.{name}"))?;
            let mut rows = Vec::with_capacity(memory.len() + 1);
            for v in std::iter::once(g_t[l]).chain(memory.iter().map(|m| m[l])) {
                rows.push(g.reshape(v, &[1, n])?);
            }
            let flat = g.concat_rows(&rows)?;
            let tokens = g.matmul(flat, w_in)?;
            let x = g.concat_rows(&[cls, tokens])?;
            let h = self.block.forward(g, p, x)?;
            let first = g.slice_rows(h, 0, 1)?;
            let back = g.matmul(first, w_out)?;
            out.push(g.reshape(back, shape)?);
        }
        Ok(out)
    }

    /// Value-level convenience wrapper around [`forward`](Self::forward).
    pub fn aggregate(&self, params: &ParamSet, g_t: &GradSet, memory: &[GradSet]) -> Result<GradSet> {
        let mut g = Graph::new();
        let p = params.bind_const(&mut g);
        let gt = g_t.bind_const(&mut g);
        let mem: Vec<Vec<Var>> = memory.iter().map(|m| m.bind_const(&mut g).vars().to_vec()).collect();
        let out = self.forward(&mut g, &p, gt.vars(), &mem)?;
        let names = g_t.names().map(String::from).collect();
        Ok(crate::numcore::BoundParams::new(names, out).values(&g))
    }
}
