use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SPLIT_WIDTH: u64 = 1 << 61;

/// Which partition of the task stream space a draw belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    /// First ChaCha stream id of the partition. Partitions are `2^61` wide.
    pub fn offset(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Validation => SPLIT_WIDTH,
            Split::Test => 2 * SPLIT_WIDTH,
        }
    }
}

/// Independent per-task generators: task `i` of a split always sees the same
/// random numbers, regardless of evaluation order or thread.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaskStream {
    pub seed: u64,
    pub split: Split,
}

impl TaskStream {
    pub fn new(seed: u64, split: Split) -> Self {
        Self { seed, split }
    }

    pub fn stream_id(&self, index: u64) -> u64 {
        assert!(index < SPLIT_WIDTH, "task index {index} outside its split");
        self.split.offset() + index
    }

    pub fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.stream_id(index));
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn splits_never_share_a_stream() {
        let train = TaskStream::new(7, Split::Train);
        let val = TaskStream::new(7, Split::Validation);
        let test = TaskStream::new(7, Split::Test);
        for i in [0u64, 1, 1000, SPLIT_WIDTH - 1] {
            for j in [0u64, 1, 1000, SPLIT_WIDTH - 1] {
                assert_ne!(train.stream_id(i), test.stream_id(j));
                assert_ne!(train.stream_id(i), val.stream_id(j));
                assert_ne!(val.stream_id(i), test.stream_id(j));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for s in [train, val, test] {
            for i in 0..200 {
                assert!(seen.insert(s.rng(i).next_u64()));
            }
        }
    }

    #[test]
    fn same_index_same_numbers() {
        let s = TaskStream::new(3, Split::Train);
        assert_eq!(s.rng(5).next_u64(), s.rng(5).next_u64());
        assert_ne!(s.rng(5).next_u64(), s.rng(6).next_u64());
    }
}
