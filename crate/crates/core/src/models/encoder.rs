use std::cmp::Ordering;

use rand::Rng;

use super::attention::AttentionBlock;
use super::mlp::{Activation, Mlp};
use super::{normal_tensor, CLS_INIT_STD};
use crate::error::{EmoError, Result};
use crate::numcore::{BoundParams, Graph, ParamSet, Tensor, Var};
use crate::taskgen::{Example, Target};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub input_dim: usize,
    /// Width of the label encoding: `N` one-hot slots, or 1 for regression.
    pub label_dim: usize,
    pub hidden: Vec<usize>,
    pub d_e: usize,
    pub d_key: usize,
    pub blocks: usize,
    pub ffn_hidden: usize,
    /// Weight gain of the pair encoder; larger values make the embedding of
    /// an `(x, y)` pair less linear.
    pub init_gain: f64,
}

impl EncoderConfig {
    pub fn new(input_dim: usize, label_dim: usize) -> Self {
        Self { input_dim, label_dim, hidden: vec![64], d_e: 64, d_key: 64, blocks: 1, ffn_hidden: 64, init_gain: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.label_dim == 0 || self.d_e == 0 || self.d_key == 0 || self.ffn_hidden == 0 {
            return Err(EmoError::Config("encoder dims must be >= 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(EmoError::Config("encoder hidden widths must be >= 1".into()));
        }
        if self.d_e != self.d_key {
            return Err(EmoError::Config(format!(
                "embedding dim {} must equal key dim {} (the cls output is the key)",
                self.d_e, self.d_key
            )));
        }
        if self.blocks == 0 {
            return Err(EmoError::Config("encoder needs at least one attention block".into()));
        }
        Ok(())
    }
}

/// Embeds each support pair `x ⊕ enc(y)` with a tanh MLP, then attends over
/// `[cls, e_1, …, e_n]` and returns the output at the `cls` position.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyEncoder {
    pub cfg: EncoderConfig,
    pub pair: Mlp,
    pub blocks: Vec<AttentionBlock>,
}

pub const CLS_KEY: &str = "key.cls";

impl KeyEncoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut dims = vec![cfg.input_dim + cfg.label_dim];
        dims.extend_from_slice(&cfg.hidden);
        dims.push(cfg.d_e);
        let pair = Mlp::new("key.pair", dims, Activation::Tanh, true)?;
        let blocks = (0..cfg.blocks).map(|i| AttentionBlock::new(format!("key.blk{i}"), cfg.d_key, cfg.ffn_hidden)).collect();
        Ok(Self { cfg, pair, blocks })
    }

    pub fn init(&self, rng: &mut impl Rng) -> Result<ParamSet> {
        let mut set = ParamSet::new();
        set.insert(CLS_KEY, normal_tensor(&[self.cfg.d_key], CLS_INIT_STD, rng))?;
        self.pair.init_into(&mut set, self.cfg.init_gain, rng)?;
        for b in &self.blocks {
            b.init_into(&mut set, rng)?;
        }
        Ok(set)
    }

    pub fn pair_features(&self, e: &Example) -> Result<Vec<f64>> {
        if e.x.len() != self.cfg.input_dim {
            return Err(EmoError::Shape(format!("example has {} features, expected {}", e.x.len(), self.cfg.input_dim)));
        }
        let mut f = e.x.clone();
        match e.y {
            Target::Class(c) if c < self.cfg.label_dim => {
                f.extend((0..self.cfg.label_dim).map(|j| if j == c { 1.0 } else { 0.0 }));
            }
            Target::Value(v) if self.cfg.label_dim == 1 => f.push(v),
            other => return Err(EmoError::Shape(format!("target {other:?} does not fit label_dim {}", self.cfg.label_dim))),
        }
        Ok(f)
    }

    /// Embeddings `[n, d_e]` of a non-empty support set.
    pub fn encode_support_var(&self, g: &mut Graph, p: &BoundParams, support: &[Example]) -> Result<Var> {
        if support.is_empty() {
            return Err(EmoError::Empty("support set".into()));
        }
        let width = self.cfg.input_dim + self.cfg.label_dim;
        let mut data = Vec::with_capacity(support.len() * width);
        for e in support {
            data.extend(self.pair_features(e)?);
        }
        let x = g.constant(Tensor::new(vec![support.len(), width], data)?);
        self.pair.forward(g, p, x)
    }

    pub fn encode_support(&self, params: &ParamSet, support: &[Example]) -> Result<Vec<Vec<f64>>> {
        if support.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let p = params.bind_const(&mut g);
        let e = self.encode_support_var(&mut g, &p, support)?;
        let t = g.value(e);
        Ok(t.data().chunks(self.cfg.d_e).map(<[f64]>::to_vec).collect())
    }

    /// Key `[d_key]` from embeddings `[n, d_e]`. Rows are put in a canonical
    /// order first so the result is bit-identical under any permutation.
    pub fn task_key_var(&self, g: &mut Graph, p: &BoundParams, emb: Var) -> Result<Var> {
        let shape = g.shape(emb).to_vec();
        if shape.len() != 2 || shape[1] != self.cfg.d_e || shape[0] == 0 {
            return Err(EmoError::Shape(format!("embeddings must be [n >= 1, {}], got {shape:?}", self.cfg.d_e)));
        }
        let vals = g.value(emb).data();
        let d = shape[1];
        let mut order: Vec<usize> = (0..shape[0]).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (&vals[a * d..(a + 1) * d], &vals[b * d..(b + 1) * d]);
            ra.iter().zip(rb).map(|(x, y)| x.total_cmp(y)).find(|o| *o != Ordering::Equal).unwrap_or(Ordering::Equal)
        });
        let sorted = g.select_rows(emb, &order)?;
        let cls = p.get(CLS_KEY)?;
        let cls = g.reshape(cls, &[1, self.cfg.d_key])?;
        let mut h = g.concat_rows(&[cls, sorted])?;
        for b in &self.blocks {
            h = b.forward(g, p, h)?;
        }
        let first = g.slice_rows(h, 0, 1)?;
        g.reshape(first, &[self.cfg.d_key])
    }

    pub fn task_key(&self, params: &ParamSet, embeddings: &[Vec<f64>]) -> Result<Vec<f64>> {
        if embeddings.is_empty() {
            return Err(EmoError::Empty("task_key needs at least one embedding".into()));
        }
        if let Some(e) = embeddings.iter().find(|e| e.len() != self.cfg.d_e) {
            return Err(EmoError::Shape(format!("embedding dim {} != d_e {}", e.len(), self.cfg.d_e)));
        }
        let mut g = Graph::new();
        let p = params.bind_const(&mut g);
        let e = g.constant(Tensor::from_rows(embeddings)?);
        let k = self.task_key_var(&mut g, &p, e)?;
        Ok(g.value(k).data().to_vec())
    }

    /// Support set straight to key.
    pub fn key(&self, params: &ParamSet, support: &[Example]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = params.bind_const(&mut g);
        let e = self.encode_support_var(&mut g, &p, support)?;
        let k = self.task_key_var(&mut g, &p, e)?;
        Ok(g.value(k).data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::super::attention::oracle;
    use super::*;
    use crate::numcore::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> KeyEncoder {
        let cfg = EncoderConfig { hidden: vec![6], d_e: 4, d_key: 4, ffn_hidden: 5, ..EncoderConfig::new(3, 2) };
        KeyEncoder::new(cfg).unwrap()
    }

    fn support(n: usize) -> Vec<Example> {
        (0..n)
            .map(|i| Example { x: (0..3).map(|j| ((i * 3 + j) as f64 * 0.7).cos()).collect(), y: Target::Class(i % 2) })
            .collect()
    }

    #[test]
    fn empty_support_gives_no_embeddings() {
        let enc = small();
        let p = enc.init(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(enc.encode_support(&p, &[]).unwrap().is_empty());
    }

    #[test]
    fn zero_weights_embed_to_zero() {
        let enc = small();
        let p = enc.init(&mut ChaCha8Rng::seed_from_u64(0)).unwrap().zeros_like();
        let e = enc.encode_support(&p, &support(1)).unwrap();
        assert_eq!(e, vec![vec![0.0; 4]]);
    }

    #[test]
    fn embeddings_match_straight_line_oracle() {
        let enc = small();
        let p = enc.init(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let s = support(5);
        let got = enc.encode_support(&p, &s).unwrap();
        assert_eq!(got.len(), 5);
        let w0 = p.get("key.pair.l0.w").unwrap().data();
        let b0 = p.get("key.pair.l0.b").unwrap().data();
        let w1 = p.get("key.pair.l1.w").unwrap().data();
        let b1 = p.get("key.pair.l1.b").unwrap().data();
        for (e, row) in s.iter().zip(&got) {
            let f = enc.pair_features(e).unwrap();
            let h: Vec<f64> = (0..6).map(|j| (b0[j] + (0..5).map(|i| f[i] * w0[i * 6 + j]).sum::<f64>()).tanh()).collect();
            for j in 0..4 {
                let want = (b1[j] + (0..6).map(|i| h[i] * w1[i * 4 + j]).sum::<f64>()).tanh();
                assert!((row[j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn key_is_permutation_invariant() {
        let enc = small();
        let p = enc.init(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let s = support(5);
        let mut r = s.clone();
        r.reverse();
        r.swap(0, 2);
        assert_eq!(enc.key(&p, &s).unwrap(), enc.key(&p, &r).unwrap());
    }

    #[test]
    fn zero_attention_key_is_cls() {
        let enc = small();
        let mut p = enc.init(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let cls = p.get(CLS_KEY).unwrap().clone();
        for i in 0..p.len() {
            if p.name(i).starts_with("key.blk") {
                let shape = p.tensor(i).shape().to_vec();
                *p.tensor_mut(i) = Tensor::zeros(&shape);
            }
        }
        let k = enc.task_key(&p, &vec![vec![0.0; 4]; 3]).unwrap();
        assert_eq!(k, cls.data());
    }

    #[test]
    fn key_matches_naive_attention() {
        let enc = small();
        let p = enc.init(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let emb: Vec<Vec<f64>> = (0..5).map(|i| (0..4).map(|j| ((i * 5 + j) as f64).sin()).collect()).collect();
        let got = enc.task_key(&p, &emb).unwrap();
        let mut sorted = emb.clone();
        sorted.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal));
        let mut tokens = vec![p.get(CLS_KEY).unwrap().data().to_vec()];
        tokens.extend(sorted);
        let out = oracle::block(&p, "key.blk0", &tokens);
        for (a, b) in got.iter().zip(&out[0]) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_wrong_embedding_dim() {
        let enc = small();
        let p = enc.init(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(enc.task_key(&p, &[vec![0.0; 3]]).is_err());
        assert!(KeyEncoder::new(EncoderConfig { d_e: 8, ..EncoderConfig::new(3, 2) }).is_err());
    }

    #[test]
    fn finite_differences() {
        let enc = small();
        let p = enc.init(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let s = support(4);
        let r = finite_diff_check(
            |g, b| {
                let e = enc.encode_support_var(g, b, &s)?;
                let k = enc.task_key_var(g, b, e)?;
                let k2 = g.mul(k, k)?;
                Ok(g.sum(k2))
            },
            &p,
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-5, "{r:?}");
    }
}
