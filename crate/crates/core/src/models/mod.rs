//! Learner networks, the attention task-key encoder and the attention
//! gradient aggregator.

mod aggregator;
mod attention;
mod encoder;
mod mlp;

pub use aggregator::AttentionAggregator;
pub use attention::AttentionBlock;
pub use encoder::{EncoderConfig, KeyEncoder};
pub use mlp::{Activation, Learner, LossKind, Mlp};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::numcore::Tensor;

/// Standard deviation of the learned `cls` tokens at initialisation.
pub const CLS_INIT_STD: f64 = 0.02;

pub(crate) fn normal_tensor(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    if std == 0.0 {
        return Tensor::zeros(shape);
    }
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape matches data")
}
