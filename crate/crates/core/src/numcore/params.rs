use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{EmoError, Result};

/// Ordered collection of named tensors. Layer order is fixed at
/// construction and defines the layer index used throughout the crate.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TensorSet {
    entries: Vec<(String, Tensor)>,
}

/// Named model parameters.
pub type ParamSet = TensorSet;
/// Gradients congruent with a [`ParamSet`].
pub type GradSet = TensorSet;

impl TensorSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Result<Self> {
        let mut s = Self::new();
        for (name, t) in entries {
            s.insert(name, t)?;
        }
        Ok(s)
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(EmoError::Config(format!("duplicate layer name `{name}`")));
        }
        self.entries.push((name, t));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.entries[i].1
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].1
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    /// Layer names paired with shapes.
    pub fn schema(&self) -> Vec<(String, Vec<usize>)> {
        self.entries.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect()
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Same names and shapes, in the same order.
    pub fn is_congruent(&self, other: &TensorSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((n1, t1), (n2, t2))| n1 == n2 && t1.shape() == t2.shape())
    }

    pub fn expect_congruent(&self, other: &TensorSet) -> Result<()> {
        if self.is_congruent(other) {
            Ok(())
        } else {
            Err(EmoError::Shape(format!(
                "tensor sets are not congruent: {:?} vs {:?}",
                self.schema(),
                other.schema()
            )))
        }
    }

    pub fn zeros_like(&self) -> TensorSet {
        TensorSet {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), Tensor::zeros(t.shape()))).collect(),
        }
    }

    /// The sub-set containing only `names`, in this set's order.
    pub fn subset(&self, names: &[String]) -> Result<TensorSet> {
        let mut out = TensorSet::new();
        for n in names {
            let t = self.get(n).ok_or_else(|| EmoError::Config(format!("unknown layer `{n}`")))?;
            out.insert(n.clone(), t.clone())?;
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(&Tensor) -> Tensor) -> TensorSet {
        TensorSet { entries: self.entries.iter().map(|(n, t)| (n.clone(), f(t))).collect() }
    }

    pub fn zip_map(&self, other: &TensorSet, f: impl Fn(&Tensor, &Tensor) -> Result<Tensor>) -> Result<TensorSet> {
        self.expect_congruent(other)?;
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|((n, a), (_, b))| Ok((n.clone(), f(a, b)?)))
            .collect::<Result<_>>()?;
        Ok(TensorSet { entries })
    }

    pub fn add(&self, other: &TensorSet) -> Result<TensorSet> {
        self.zip_map(other, Tensor::add)
    }

    pub fn scale(&self, c: f64) -> TensorSet {
        self.map(|t| t.scale(c))
    }

    pub fn axpy(&mut self, c: f64, other: &TensorSet) -> Result<()> {
        self.expect_congruent(other)?;
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(&other.entries) {
            a.axpy(c, b)?;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &TensorSet) -> Result<f64> {
        self.expect_congruent(other)?;
        let mut m: f64 = 0.0;
        for ((_, a), (_, b)) in self.entries.iter().zip(&other.entries) {
            m = m.max(a.max_abs_diff(b)?);
        }
        Ok(m)
    }

    /// Name of the first layer holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.entries.iter().find(|(_, t)| !t.is_finite()).map(|(n, _)| n.as_str())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }

    /// Registers every tensor as a differentiable leaf on `g`.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        let vars = self.entries.iter().map(|(_, t)| g.leaf(t.clone())).collect();
        BoundParams { names: self.entries.iter().map(|(n, _)| n.clone()).collect(), vars }
    }

    /// Registers every tensor as a constant on `g`.
    pub fn bind_const(&self, g: &mut Graph) -> BoundParams {
        let vars = self.entries.iter().map(|(_, t)| g.constant(t.clone())).collect();
        BoundParams { names: self.entries.iter().map(|(n, _)| n.clone()).collect(), vars }
    }
}

/// A [`TensorSet`]'s layers as graph nodes.
#[derive(Clone, Debug)]
pub struct BoundParams {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn new(names: Vec<String>, vars: Vec<Var>) -> Self {
        assert_eq!(names.len(), vars.len());
        Self { names, vars }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| EmoError::Config(format!("parameter `{name}` is not bound")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn replace(&mut self, name: &str, v: Var) -> Result<()> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| EmoError::Config(format!("parameter `{name}` is not bound")))?;
        self.vars[i] = v;
        Ok(())
    }

    /// Reads the current values back into a [`TensorSet`].
    pub fn values(&self, g: &Graph) -> TensorSet {
        TensorSet {
            entries: self.names.iter().cloned().zip(self.vars.iter().map(|&v| g.value(v).clone())).collect(),
        }
    }
}

/// Gradient of the scalar `loss` with respect to every bound parameter.
pub fn grad(g: &mut Graph, loss: Var, params: &BoundParams) -> Result<GradSet> {
    let gs = g.gradients(loss, params.vars())?;
    Ok(TensorSet {
        entries: params.names.iter().cloned().zip(gs.iter().map(|&v| g.value(v).clone())).collect(),
    })
}
