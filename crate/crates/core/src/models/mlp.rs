use rand::Rng;

use super::normal_tensor;
use crate::error::{EmoError, Result};
use crate::numcore::{BoundParams, Graph, ParamSet, Tensor, Var};
use crate::taskgen::{Example, Target};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

/// Fully connected network. Layer `i` owns parameters `{name}.w` of shape
/// `[in, out]` and `{name}.b` of shape `[out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layer_names: Vec<String>,
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub activate_output: bool,
}

impl Mlp {
    pub fn new(prefix: &str, dims: Vec<usize>, activation: Activation, activate_output: bool) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(EmoError::Config(format!("mlp dims must have >= 2 positive entries, got {dims:?}")));
        }
        let layer_names = (0..dims.len() - 1).map(|i| format!("{prefix}.l{i}")).collect();
        Ok(Self { layer_names, dims, activation, activate_output })
    }

    /// Learner layout: hidden layers `l0, l1, …` and a final layer `head`.
    pub fn learner(input_dim: usize, hidden: &[usize], output_dim: usize, activation: Activation) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        if dims.contains(&0) {
            return Err(EmoError::Config(format!("mlp dims must be positive, got {dims:?}")));
        }
        let mut layer_names: Vec<String> = (0..hidden.len()).map(|i| format!("l{i}")).collect();
        layer_names.push("head".into());
        Ok(Self { layer_names, dims, activation, activate_output: false })
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.layer_names.iter().flat_map(|l| [format!("{l}.w"), format!("{l}.b")]).collect()
    }

    /// Parameters of the final layer.
    pub fn head_param_names(&self) -> Vec<String> {
        let l = self.layer_names.last().unwrap();
        vec![format!("{l}.w"), format!("{l}.b")]
    }

    /// Weights `N(0, gain² / fan_in)`, zero biases.
    pub fn init_into(&self, set: &mut ParamSet, gain: f64, rng: &mut impl Rng) -> Result<()> {
        for (i, l) in self.layer_names.iter().enumerate() {
            let (fan_in, fan_out) = (self.dims[i], self.dims[i + 1]);
            set.insert(format!("{l}.w"), normal_tensor(&[fan_in, fan_out], gain / (fan_in as f64).sqrt(), rng))?;
            set.insert(format!("{l}.b"), Tensor::zeros(&[fan_out]))?;
        }
        Ok(())
    }

    pub fn init(&self, gain: f64, rng: &mut impl Rng) -> Result<ParamSet> {
        let mut set = ParamSet::new();
        self.init_into(&mut set, gain, rng)?;
        Ok(set)
    }

    /// `x` has shape `[n, input_dim]`.
    pub fn forward(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layer_names.len() - 1;
        for (i, l) in self.layer_names.iter().enumerate() {
            let w = p.get(&format!("{l}.w"))?;
            let b = p.get(&format!("{l}.b"))?;
            h = g.linear(h, w, b)?;
            if i < last || self.activate_output {
                h = match self.activation {
                    Activation::Tanh => g.tanh(h),
                    Activation::Relu => g.relu(h),
                };
            }
        }
        Ok(h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

/// An [`Mlp`] paired with its task loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Learner {
    pub net: Mlp,
    pub loss: LossKind,
}

pub(crate) fn inputs_tensor(examples: &[Example], input_dim: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(examples.len() * input_dim);
    for e in examples {
        if e.x.len() != input_dim {
            return Err(EmoError::Shape(format!("example has {} features, expected {input_dim}", e.x.len())));
        }
        data.extend_from_slice(&e.x);
    }
    Tensor::new(vec![examples.len(), input_dim], data)
}

impl Learner {
    pub fn new(net: Mlp, loss: LossKind) -> Self {
        Self { net, loss }
    }

    pub fn logits(&self, g: &mut Graph, p: &BoundParams, examples: &[Example]) -> Result<Var> {
        let x = g.constant(inputs_tensor(examples, self.net.input_dim())?);
        self.net.forward(g, p, x)
    }

    /// Mean loss over `examples`.
    pub fn loss(&self, g: &mut Graph, p: &BoundParams, examples: &[Example]) -> Result<Var> {
        if examples.is_empty() {
            return Err(EmoError::Empty("loss over an empty example set".into()));
        }
        let out = self.logits(g, p, examples)?;
        match self.loss {
            LossKind::CrossEntropy => {
                let labels = examples
                    .iter()
                    .map(|e| match e.y {
                        Target::Class(c) if c < self.net.output_dim() => Ok(c),
                        other => Err(EmoError::Shape(format!("bad classification target {other:?}"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                g.cross_entropy(out, &labels)
            }
            LossKind::Mse => {
                let targets = examples
                    .iter()
                    .map(|e| e.y.value().ok_or_else(|| EmoError::Shape(format!("bad regression target {:?}", e.y))))
                    .collect::<Result<Vec<_>>>()?;
                let t = g.constant(Tensor::new(vec![examples.len(), 1], targets)?);
                g.mse(out, t)
            }
        }
    }

    /// `(mean loss, accuracy or mse)` without recording gradients.
    pub fn evaluate(&self, params: &ParamSet, examples: &[Example]) -> Result<(f64, f64)> {
        let mut g = Graph::new();
        let p = params.bind_const(&mut g);
        let l = self.loss(&mut g, &p, examples)?;
        let loss = g.value(l).item();
        let metric = match self.loss {
            LossKind::Mse => loss,
            LossKind::CrossEntropy => {
                let out = self.logits(&mut g, &p, examples)?;
                let logits = g.value(out);
                let m = logits.shape()[1];
                let hits = examples
                    .iter()
                    .enumerate()
                    .filter(|(i, e)| {
                        let row = &logits.data()[i * m..(i + 1) * m];
                        let arg = (0..m).fold(0, |best, j| if row[j] > row[best] { j } else { best });
                        Some(arg) == e.y.class()
                    })
                    .count();
                hits as f64 / examples.len() as f64
            }
        };
        Ok((loss, metric))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_matches_straight_line_oracle() {
        let net = Mlp::learner(3, &[4], 2, Activation::Tanh).unwrap();
        let params = net.init(1.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x = [0.5, -1.0, 2.0];
        let (w0, b0) = (params.get("l0.w").unwrap().data(), params.get("l0.b").unwrap().data());
        let (w1, b1) = (params.get("head.w").unwrap().data(), params.get("head.b").unwrap().data());
        let mut h = [0.0; 4];
        for j in 0..4 {
            let mut s = b0[j];
            for i in 0..3 {
                s += x[i] * w0[i * 4 + j];
            }
            h[j] = s.tanh();
        }
        let mut out = [0.0; 2];
        for j in 0..2 {
            out[j] = b1[j] + (0..4).map(|i| h[i] * w1[i * 2 + j]).sum::<f64>();
        }
        let mut g = Graph::new();
        let p = params.bind_const(&mut g);
        let xv = g.constant(Tensor::matrix(1, 3, x.to_vec()).unwrap());
        let y = net.forward(&mut g, &p, xv).unwrap();
        for (a, b) in g.value(y).data().iter().zip(out) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_layer_tanh_matches_finite_differences() {
        let net = Mlp::learner(3, &[5], 2, Activation::Tanh).unwrap();
        let learner = Learner::new(net.clone(), LossKind::CrossEntropy);
        let params = net.init(1.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let examples = vec![
            Example { x: vec![0.1, 0.2, -0.3], y: Target::Class(0) },
            Example { x: vec![-1.0, 0.4, 0.9], y: Target::Class(1) },
        ];
        let r = finite_diff_check(|g, p| learner.loss(g, p, &examples), &params, 1e-6).unwrap();
        assert!(r.max_rel_err < 1e-5, "{r:?}");
    }

    #[test]
    fn head_names_and_accuracy() {
        let net = Mlp::learner(2, &[3], 2, Activation::Relu).unwrap();
        assert_eq!(net.head_param_names(), vec!["head.w".to_string(), "head.b".to_string()]);
        let mut params = net.init(1.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        // constant logits favouring class 1
        *params.get_mut("head.w").unwrap() = Tensor::zeros(&[3, 2]);
        *params.get_mut("head.b").unwrap() = Tensor::vector(vec![0.0, 1.0]);
        let learner = Learner::new(net, LossKind::CrossEntropy);
        let ex = vec![
            Example { x: vec![0.0, 0.0], y: Target::Class(1) },
            Example { x: vec![1.0, 0.0], y: Target::Class(0) },
        ];
        let (_, acc) = learner.evaluate(&params, &ex).unwrap();
        assert_eq!(acc, 0.5);
    }
}
