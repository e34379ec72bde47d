use rand::Rng;

use super::normal_tensor;
use crate::error::Result;
use crate::numcore::{BoundParams, Graph, ParamSet, Tensor, Var};

pub const LN_EPS: f64 = 1e-5;

/// Pre-norm single-head self-attention with a two-layer tanh feed-forward:
///
/// ```text
/// H   = X + softmax(LN(X)Wq (LN(X)Wk)ᵀ / √d) LN(X)Wv Wo
/// out = H + tanh(LN(H) W1 + b1) W2 + b2
/// ```
///
/// No positional encoding, so the output rows are permutation-equivariant.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBlock {
    pub prefix: String,
    pub width: usize,
    pub ffn_hidden: usize,
}

impl AttentionBlock {
    pub fn new(prefix: impl Into<String>, width: usize, ffn_hidden: usize) -> Self {
        Self { prefix: prefix.into(), width, ffn_hidden }
    }

    fn name(&self, p: &str) -> String {
        format!("{}.{p}", self.prefix)
    }

    pub fn init_into(&self, set: &mut ParamSet, rng: &mut impl Rng) -> Result<()> {
        let d = self.width;
        let h = self.ffn_hidden;
        let sd = 1.0 / (d as f64).sqrt();
        for w in ["wq", "wk", "wv", "wo"] {
            set.insert(self.name(w), normal_tensor(&[d, d], sd, rng))?;
        }
        set.insert(self.name("w1"), normal_tensor(&[d, h], sd, rng))?;
        set.insert(self.name("b1"), Tensor::zeros(&[h]))?;
        set.insert(self.name("w2"), normal_tensor(&[h, d], 1.0 / (h as f64).sqrt(), rng))?;
        set.insert(self.name("b2"), Tensor::zeros(&[d]))?;
        Ok(())
    }

    /// `x` has shape `[n, width]`; the output has the same shape.
    pub fn forward(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Result<Var> {
        let xn = g.layer_norm(x, LN_EPS)?;
        let wq = p.get(&self.name("wq"))?;
        let wk = p.get(&self.name("wk"))?;
        let wv = p.get(&self.name("wv"))?;
        let wo = p.get(&self.name("wo"))?;
        let q = g.matmul(xn, wq)?;
        let k = g.matmul(xn, wk)?;
        let v = g.matmul(xn, wv)?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, 1.0 / (self.width as f64).sqrt());
        let attn = g.softmax(scores)?;
        let mixed = g.matmul(attn, v)?;
        let proj = g.matmul(mixed, wo)?;
        let h = g.add(x, proj)?;

        let hn = g.layer_norm(h, LN_EPS)?;
        let f = g.linear(hn, p.get(&self.name("w1"))?, p.get(&self.name("b1"))?)?;
        let f = g.tanh(f);
        let f = g.linear(f, p.get(&self.name("w2"))?, p.get(&self.name("b2"))?)?;
        g.add(h, f)
    }
}
