//! Binary run state: both branches, the head, the exemplar store and the
//! metrics so far.
//!
//! Layout, little-endian throughout: the bytes `GMCK`, a `u32` version,
//! then `u64` integers and `f64` arrays in the order written by
//! [`encode`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{GmError, Result};
use crate::kernel::{Metric, Vec64};
use crate::memory::{ClassMemory, Exemplar, ExemplarStore, Prototype};
use crate::metrics::{MetricsLedger, TimestepRecord};
use crate::model::{BranchPair, ClusterHead, Encoder, Layer};

pub const MAGIC: &[u8; 4] = b"GMCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    /// Last completed stage.
    pub timestep: usize,
    pub pair: BranchPair,
    pub store: ExemplarStore,
    pub ledger: MetricsLedger,
    /// Novel-class counts used at stages `1..=timestep`.
    pub novel_counts: Vec<usize>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }
    fn raw_u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn floats(&mut self, v: &[f64]) {
        self.u64(v.len());
        v.iter().for_each(|x| self.f64(*x));
    }
    fn layer(&mut self, l: &Layer) {
        self.u64(l.in_dim);
        self.u64(l.out_dim);
        self.floats(&l.weight);
        self.floats(&l.bias);
    }
    fn encoder(&mut self, e: &Encoder) {
        self.u64(e.layers.len());
        e.layers.iter().for_each(|l| self.layer(l));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| GmError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn raw_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn u64(&mut self) -> Result<usize> {
        usize::try_from(self.raw_u64()?).map_err(|_| GmError::Checkpoint("integer out of range".into()))
    }
    /// A length that cannot exceed the bytes left, so corrupt counts fail
    /// before allocating.
    fn len(&mut self, unit: usize) -> Result<usize> {
        let n = self.u64()?;
        if n.saturating_mul(unit) > self.buf.len() - self.pos {
            return Err(GmError::Checkpoint(format!("length {n} at byte {} exceeds file size", self.pos - 8)));
        }
        Ok(n)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn floats(&mut self) -> Result<Vec64> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn layer(&mut self) -> Result<Layer> {
        let in_dim = self.u64()?;
        let out_dim = self.u64()?;
        let weight = self.floats()?;
        let bias = self.floats()?;
        if weight.len() != in_dim.saturating_mul(out_dim) || bias.len() != out_dim {
            return Err(GmError::Checkpoint("layer arrays disagree with their dimensions".into()));
        }
        Ok(Layer { in_dim, out_dim, weight, bias })
    }
    fn encoder(&mut self) -> Result<Encoder> {
        let n = self.len(8)?;
        let layers = (0..n).map(|_| self.layer()).collect::<Result<_>>()?;
        Encoder::from_layers(layers).map_err(|e| GmError::Checkpoint(e.to_string()))
    }
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.0.extend_from_slice(&VERSION.to_le_bytes());
    w.raw_u64(ckpt.seed);
    w.u64(ckpt.timestep);
    w.encoder(&ckpt.pair.static_branch);
    w.encoder(&ckpt.pair.dynamic_branch);
    w.layer(&ckpt.pair.head.linear);

    let store = &ckpt.store;
    w.u64(store.budget());
    w.u64(match store.metric() {
        Metric::SquaredEuclidean => 0,
        Metric::Cosine => 1,
    });
    w.u64(store.num_classes());
    for (id, class) in store.classes() {
        w.u64(id);
        w.u64(class.exemplars.len());
        for e in &class.exemplars {
            w.u64(e.label);
            w.u64(e.source_timestep);
            w.floats(&e.sample);
        }
        match &class.prototype {
            None => w.u64(0),
            Some(p) => {
                w.u64(1);
                w.u64(p.class_id);
                w.u64(p.support);
                w.floats(&p.mu);
            }
        }
    }

    w.u64(ckpt.ledger.records.len());
    for r in &ckpt.ledger.records {
        w.u64(r.t);
        w.f64(r.acc_known);
        match r.acc_novel {
            None => w.u64(0),
            Some(a) => {
                w.u64(1);
                w.f64(a);
            }
        }
    }
    w.u64(ckpt.novel_counts.len());
    ckpt.novel_counts.iter().for_each(|&k| w.u64(k));
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4).map_err(|_| GmError::Checkpoint("file too short for magic \"GMCK\"".into()))?;
    if magic != MAGIC {
        return Err(GmError::Checkpoint(format!("bad magic {magic:?}, expected \"GMCK\"")));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(GmError::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
    }
    let seed = r.raw_u64()?;
    let timestep = r.u64()?;
    let static_branch = r.encoder()?;
    let dynamic_branch = r.encoder()?;
    let head = ClusterHead { linear: r.layer()? };

    let budget = r.u64()?;
    let metric = match r.u64()? {
        0 => Metric::SquaredEuclidean,
        1 => Metric::Cosine,
        m => return Err(GmError::Checkpoint(format!("unknown metric tag {m}"))),
    };
    let mut classes = BTreeMap::new();
    for _ in 0..r.len(8)? {
        let id = r.u64()?;
        let mut exemplars = Vec::new();
        for _ in 0..r.len(24)? {
            let label = r.u64()?;
            let source_timestep = r.u64()?;
            exemplars.push(Exemplar { sample: r.floats()?, label, source_timestep });
        }
        let prototype = match r.u64()? {
            0 => None,
            1 => {
                let class_id = r.u64()?;
                let support = r.u64()?;
                Some(Prototype { class_id, support, mu: r.floats()? })
            }
            f => return Err(GmError::Checkpoint(format!("bad prototype flag {f}"))),
        };
        classes.insert(id, ClassMemory { exemplars, prototype });
    }
    let store = ExemplarStore::from_classes(budget, metric, classes)?;

    let mut ledger = MetricsLedger::default();
    for _ in 0..r.len(24)? {
        let t = r.u64()?;
        let acc_known = r.f64()?;
        let acc_novel = match r.u64()? {
            0 => None,
            1 => Some(r.f64()?),
            f => return Err(GmError::Checkpoint(format!("bad accuracy flag {f}"))),
        };
        ledger.records.push(TimestepRecord { t, acc_known, acc_novel });
    }
    let novel_counts = (0..r.len(8)?).map(|_| r.u64()).collect::<Result<_>>()?;
    if r.pos != bytes.len() {
        return Err(GmError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        seed,
        timestep,
        pair: BranchPair { static_branch, dynamic_branch, head },
        store,
        ledger,
        novel_counts,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, encode(ckpt))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}
