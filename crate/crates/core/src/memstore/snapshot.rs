use super::{ControllerKind, MemorySlot, MemoryStore};
use crate::error::{EmoError, Result, SnapshotError};
use crate::numcore::{Tensor, TensorSet};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"EMO1";
pub const SNAPSHOT_VERSION: u32 = 1;

pub(crate) fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("size fits u32").to_le_bytes());
}

pub(super) fn encode(s: &MemoryStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    put_u32(&mut out, s.d_key);
    put_u32(&mut out, s.schema.len());
    for (name, shape) in &s.schema {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, shape.len());
        for &d in shape {
            put_u32(&mut out, d);
        }
    }
    put_u32(&mut out, s.capacity);
    let kind = match s.controller {
        ControllerKind::Fifo => 0,
        ControllerKind::Lru => 1,
        ControllerKind::Clock => 2,
    };
    put_u32(&mut out, kind);
    put_u32(&mut out, s.slots.len());
    for slot in &s.slots {
        for v in slot.key.iter().chain(slot.values.tensors().flat_map(|t| t.data().iter())) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for slot in &s.slots {
        out.extend_from_slice(&slot.insert_tick.to_le_bytes());
        out.extend_from_slice(&slot.last_access_tick.to_le_bytes());
        out.push(slot.ref_bit as u8);
    }
    put_u32(&mut out, s.clock_hand);
    out.extend_from_slice(&s.global_tick.to_le_bytes());
    out.push(s.frozen as u8);
    out
}

/// Little-endian cursor over a snapshot payload.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(SnapshotError::Truncated(self.pos).into());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| SnapshotError::Malformed("layer name is not utf-8".into()).into())
    }

    pub(crate) fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(SnapshotError::Malformed(format!("flag byte {b}")).into()),
        }
    }

    pub(crate) fn magic(&mut self, magic: &[u8; 4], version: u32) -> Result<()> {
        if self.bytes.len() < 4 || &self.bytes[..4] != magic {
            return Err(SnapshotError::BadMagic.into());
        }
        self.pos = 4;
        let found = self.u32()? as u32;
        if found != version {
            return Err(SnapshotError::Version { found, expected: version }.into());
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(SnapshotError::Trailing(self.bytes.len() - self.pos).into());
        }
        Ok(())
    }
}

pub(super) fn decode(bytes: &[u8]) -> Result<MemoryStore> {
    let mut r = Reader::new(bytes);
    r.magic(SNAPSHOT_MAGIC, SNAPSHOT_VERSION)?;
    let d_key = r.u32()?;
    let layers = r.u32()?;
    let mut schema = Vec::with_capacity(layers.min(1024));
    for _ in 0..layers {
        let name = r.string()?;
        let rank = r.u32()?;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32()?);
        }
        schema.push((name, shape));
    }
    let capacity = r.u32()?;
    let controller = match r.u32()? {
        0 => ControllerKind::Fifo,
        1 => ControllerKind::Lru,
        2 => ControllerKind::Clock,
        k => return Err(SnapshotError::Malformed(format!("controller kind {k}")).into()),
    };
    let n = r.u32()?;
    if n > capacity {
        return Err(SnapshotError::Malformed(format!("{n} slots exceed capacity {capacity}")).into());
    }
    let mut slots = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let key = (0..d_key).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let mut values = TensorSet::new();
        for (name, shape) in &schema {
            let len = shape.iter().product();
            let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            values
                .insert(name.clone(), Tensor::new(shape.clone(), data)?)
                .map_err(|e| EmoError::from(SnapshotError::Malformed(e.to_string())))?;
        }
        slots.push(MemorySlot { key, values, insert_tick: 0, last_access_tick: 0, ref_bit: false });
    }
    for s in slots.iter_mut() {
        s.insert_tick = r.u64()?;
        s.last_access_tick = r.u64()?;
        s.ref_bit = r.bool()?;
    }
    let clock_hand = r.u32()?;
    if clock_hand >= n.max(1) {
        return Err(SnapshotError::Malformed(format!("clock hand {clock_hand} outside {n} slots")).into());
    }
    let global_tick = r.u64()?;
    let frozen = r.bool()?;
    r.finish()?;
    if d_key == 0 {
        return Err(SnapshotError::Malformed("key dimension 0".into()).into());
    }
    Ok(MemoryStore { capacity, d_key, schema, controller, slots, clock_hand, global_tick, frozen })
}
