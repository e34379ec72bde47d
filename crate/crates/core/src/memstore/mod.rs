//! Episodic gradient memory: task keys paired with per-layer gradients,
//! Euclidean kNN retrieval and FIFO / LRU / CLOCK replacement.

pub(crate) mod snapshot;

pub use snapshot::{SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

use crate::error::{EmoError, Result};
use crate::numcore::TensorSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ControllerKind {
    Fifo,
    Lru,
    Clock,
}

impl ControllerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::Fifo => "fifo",
            ControllerKind::Lru => "lru",
            ControllerKind::Clock => "clock",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fifo" => Ok(ControllerKind::Fifo),
            "lru" => Ok(ControllerKind::Lru),
            "clock" => Ok(ControllerKind::Clock),
            other => Err(EmoError::Config(format!("unknown controller `{other}` (fifo, lru, clock)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemorySlot {
    pub key: Vec<f64>,
    pub values: TensorSet,
    pub insert_tick: u64,
    pub last_access_tick: u64,
    pub ref_bit: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WriteOutcome {
    Appended(usize),
    Replaced(usize),
    /// Frozen store or zero capacity.
    Ignored,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryStore {
    capacity: usize,
    d_key: usize,
    schema: Vec<(String, Vec<usize>)>,
    controller: ControllerKind,
    slots: Vec<MemorySlot>,
    clock_hand: usize,
    global_tick: u64,
    frozen: bool,
}

impl MemoryStore {
    pub fn new(capacity: usize, d_key: usize, schema: Vec<(String, Vec<usize>)>, controller: ControllerKind) -> Result<Self> {
        if d_key == 0 {
            return Err(EmoError::Config("key dimension must be >= 1".into()));
        }
        Ok(Self { capacity, d_key, schema, controller, slots: Vec::new(), clock_hand: 0, global_tick: 0, frozen: false })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn d_key(&self) -> usize {
        self.d_key
    }

    pub fn schema(&self) -> &[(String, Vec<usize>)] {
        &self.schema
    }

    pub fn controller(&self) -> ControllerKind {
        self.controller
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[MemorySlot] {
        &self.slots
    }

    pub fn slot(&self, i: usize) -> &MemorySlot {
        &self.slots[i]
    }

    pub fn clock_hand(&self) -> usize {
        self.clock_hand
    }

    pub fn global_tick(&self) -> u64 {
        self.global_tick
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Frozen stores ignore writes and keep access metadata untouched.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn key_norms(&self) -> Vec<f64> {
        self.slots.iter().map(|s| s.key.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
    }

    fn check_key(&self, key: &[f64]) -> Result<()> {
        if key.len() != self.d_key {
            return Err(EmoError::Shape(format!("key has {} entries, store expects {}", key.len(), self.d_key)));
        }
        if key.iter().any(|v| !v.is_finite()) {
            return Err(EmoError::NonFinite("memory key".into()));
        }
        Ok(())
    }

    /// Indices of the `min(k, len)` nearest keys, nearest first, ties broken
    /// by the lower slot index. Does not touch any metadata.
    pub fn lookup(&self, query: &[f64], k: usize) -> Result<Vec<usize>> {
        if k == 0 {
            return Err(EmoError::Config("retrieval count k must be >= 1".into()));
        }
        self.check_key(query)?;
        let mut scored: Vec<(f64, usize)> = self
            .slots
            .iter()
            .enumerate()
            .map(|(i, s)| (s.key.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scored.truncate(k);
        Ok(scored.into_iter().map(|(_, i)| i).collect())
    }

    /// Records an access to each slot in `hits`, in order: a fresh tick for
    /// LRU and the reference bit for CLOCK. No-op when frozen.
    pub fn touch(&mut self, hits: &[usize]) {
        if self.frozen {
            return;
        }
        for &i in hits {
            self.global_tick += 1;
            let s = &mut self.slots[i];
            s.last_access_tick = self.global_tick;
            s.ref_bit = true;
        }
    }

    /// [`lookup`](Self::lookup) followed by [`touch`](Self::touch).
    pub fn retrieve(&mut self, query: &[f64], k: usize) -> Result<Vec<(usize, TensorSet)>> {
        let hits = self.lookup(query, k)?;
        self.touch(&hits);
        Ok(hits.into_iter().map(|i| (i, self.slots[i].values.clone())).collect())
    }

    fn check_values(&self, values: &TensorSet) -> Result<()> {
        if values.schema() != self.schema {
            return Err(EmoError::Shape(format!(
                "memory values {:?} do not match store schema {:?}",
                values.schema(),
                self.schema
            )));
        }
        if let Some(l) = values.first_non_finite() {
            return Err(EmoError::NonFinite(format!("memory value layer `{l}`")));
        }
        Ok(())
    }

    /// Slot the controller would overwrite next. Advances the CLOCK hand and
    /// clears the reference bits it sweeps past.
    fn select_victim(&mut self) -> usize {
        match self.controller {
            ControllerKind::Fifo => self.oldest_by(|s| s.insert_tick),
            ControllerKind::Lru => self.oldest_by(|s| s.last_access_tick),
            ControllerKind::Clock => self.clock_victim(),
        }
    }

    fn oldest_by(&self, f: impl Fn(&MemorySlot) -> u64) -> usize {
        (0..self.slots.len()).min_by_key(|&i| (f(&self.slots[i]), i)).expect("store is full")
    }

    /// Round-robin second-chance sweep starting at the hand.
    pub fn clock_victim(&mut self) -> usize {
        let n = self.slots.len();
        assert!(n > 0, "clock_victim on an empty store");
        loop {
            let h = self.clock_hand;
            self.clock_hand = (h + 1) % n;
            if self.slots[h].ref_bit {
                self.slots[h].ref_bit = false;
            } else {
                return h;
            }
        }
    }

    /// Appends while below capacity, otherwise overwrites the controller's
    /// victim in place. New slots start with a clear reference bit.
    pub fn write(&mut self, key: Vec<f64>, values: TensorSet) -> Result<WriteOutcome> {
        self.check_key(&key)?;
        self.check_values(&values)?;
        if self.frozen || self.capacity == 0 {
            return Ok(WriteOutcome::Ignored);
        }
        self.global_tick += 1;
        let slot = MemorySlot { key, values, insert_tick: self.global_tick, last_access_tick: self.global_tick, ref_bit: false };
        if self.slots.len() < self.capacity {
            self.slots.push(slot);
            Ok(WriteOutcome::Appended(self.slots.len() - 1))
        } else {
            let v = self.select_victim();
            self.slots[v] = slot;
            Ok(WriteOutcome::Replaced(v))
        }
    }

    pub fn snapshot(&self) -> Vec<u8> {
        snapshot::encode(self)
    }

    pub fn load(bytes: &[u8]) -> Result<Self> {
        snapshot::decode(bytes)
    }
}

#[cfg(test)]
mod tests;
