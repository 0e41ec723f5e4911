//! Named parameter storage with a gradient shadow, plus the checkpoint
//! container format.
//!
//! Checkpoint layout: UTF-8 header lines terminated by a line reading `end`,
//! followed by every entry's values as little-endian `f64`, in entry order.
//!
//! ```text
//! DVAE-CKPT 1
//! kind dvae
//! seed 7
//! meta o=75 p=125 n=8 dt=0.04
//! entries 2
//! encoder.head.weight 6,18
//! encoder.head.bias 6
//! end
//! <binary payload>
//! ```

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAGIC: &str = "DVAE-CKPT 1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
    rng_seed: u64,
    rng: ChaCha8Rng,
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.rng_seed == other.rng_seed && self.entries == other.entries
    }
}

impl ParamStore {
    pub fn new(rng_seed: u64) -> Self {
        ParamStore { entries: Vec::new(), index: HashMap::new(), rng_seed, rng: ChaCha8Rng::seed_from_u64(rng_seed) }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Registers a parameter initialized uniformly in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn add_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let len: usize = shape.iter().product();
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let values = (0..len).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        self.insert(name, shape, values)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let len: usize = shape.iter().product();
        self.insert(name, shape, vec![0.0; len])
    }

    pub fn insert(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let len: usize = shape.iter().product();
        if values.len() != len {
            return Err(Error::Config(format!("parameter {name:?}: {} values for shape {shape:?}", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("parameter {name:?}: non-finite value at {i}")));
        }
        let id = self.entries.len();
        self.entries.push(ParamEntry { name: name.to_string(), shape: shape.to_vec(), grads: vec![0.0; len], values });
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    /// Looks up `name` and checks its shape.
    pub fn require(&self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let id = self.id(name).ok_or_else(|| Error::Config(format!("missing parameter {name:?}")))?;
        let found = &self.entries[id.0].shape;
        if found != shape {
            return Err(Error::Config(format!("parameter {name:?} has shape {found:?}, expected {shape:?}")));
        }
        Ok(id)
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry {
        &mut self.entries[id.0]
    }

    pub fn values(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].values
    }

    pub fn grads(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].grads
    }

    pub(crate) fn grads_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.entries[id.0].grads
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.entries.iter().map(ParamEntry::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grads.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Elementwise clamp of every gradient to `[-limit, limit]`.
    pub fn clip_grads(&mut self, limit: f64) {
        for e in &mut self.entries {
            for g in &mut e.grads {
                *g = g.clamp(-limit, limit);
            }
        }
    }

    pub fn write_checkpoint<W: Write>(&self, out: &mut W, kind: &str, meta: &str) -> Result<()> {
        let mut header = String::new();
        header.push_str(MAGIC);
        header.push('\n');
        header.push_str(&format!("kind {kind}\n"));
        header.push_str(&format!("seed {}\n", self.rng_seed));
        header.push_str(&format!("meta {meta}\n"));
        header.push_str(&format!("entries {}\n", self.entries.len()));
        for e in &self.entries {
            let dims: Vec<String> = e.shape.iter().map(usize::to_string).collect();
            header.push_str(&format!("{} {}\n", e.name, dims.join(",")));
        }
        header.push_str("end\n");
        let io = |e| Error::io("<checkpoint>", e);
        out.write_all(header.as_bytes()).map_err(io)?;
        for e in &self.entries {
            for v in &e.values {
                out.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn checkpoint_bytes(&self, kind: &str, meta: &str) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf, kind, meta).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_checkpoint<R: BufRead>(input: &mut R) -> Result<Checkpoint> {
        let mut line = String::new();
        let mut next_line = |input: &mut R| -> Result<String> {
            line.clear();
            let n = input.read_line(&mut line).map_err(|e| Error::io("<checkpoint>", e))?;
            if n == 0 {
                return Err(Error::Data("checkpoint: unexpected end of header".into()));
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        if next_line(input)? != MAGIC {
            return Err(Error::Data("checkpoint: bad magic line".into()));
        }
        let kind = field(&next_line(input)?, "kind")?;
        let seed: u64 =
            field(&next_line(input)?, "seed")?.parse().map_err(|_| Error::Data("checkpoint: bad seed".into()))?;
        let meta = field(&next_line(input)?, "meta")?;
        let count: usize = field(&next_line(input)?, "entries")?
            .parse()
            .map_err(|_| Error::Data("checkpoint: bad entry count".into()))?;
        let mut specs = Vec::with_capacity(count);
        for _ in 0..count {
            let l = next_line(input)?;
            let (name, dims) =
                l.rsplit_once(' ').ok_or_else(|| Error::Data(format!("checkpoint: bad entry line {l:?}")))?;
            let shape = dims
                .split(',')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::Data(format!("checkpoint: bad shape in {l:?}")))?;
            specs.push((name.to_string(), shape));
        }
        if next_line(input)? != "end" {
            return Err(Error::Data("checkpoint: missing end marker".into()));
        }
        let mut store = ParamStore::new(seed);
        let mut buf = [0u8; 8];
        for (name, shape) in specs {
            let len: usize = shape.iter().product();
            let mut values = Vec::with_capacity(len);
            for _ in 0..len {
                input
                    .read_exact(&mut buf)
                    .map_err(|_| Error::Data(format!("checkpoint: truncated data for {name}")))?;
                values.push(f64::from_le_bytes(buf));
            }
            store.insert(&name, &shape, values)?;
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest).map_err(|e| Error::io("<checkpoint>", e))?;
        if !rest.is_empty() {
            return Err(Error::Data(format!("checkpoint: {} trailing bytes", rest.len())));
        }
        Ok(Checkpoint { kind, meta, store })
    }
}

fn field(line: &str, key: &str) -> Result<String> {
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .map(str::to_string)
        .ok_or_else(|| Error::Data(format!("checkpoint: expected `{key}` line, got {line:?}")))
}

#[derive(Debug)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: String,
    pub store: ParamStore,
}
