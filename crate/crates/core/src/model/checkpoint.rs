//! Little-endian tensor checkpoint.
//!
//! ```text
//! "RDSN" | version u32 | record count u32 |
//!   per record: name len u32 | UTF-8 name | rank u32 | dims u32[rank] | f32[Π dims]
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"RDSN";
pub const VERSION: u32 = 1;
pub const MOMENTUM_PREFIX: &str = "opt.";
pub const ITERATION_RECORD: &str = "meta.iteration";

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub tensor: Tensor,
}

pub fn encode_records(records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.extend_from_slice(&(r.tensor.rank() as u32).to_le_bytes());
        for &d in r.tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in r.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_records(bytes: &[u8], path: &Path) -> Result<Vec<Record>> {
    let fail = |msg: String| Error::format(path, msg);
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(fail)? != MAGIC {
        return Err(fail("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32().map_err(fail)?;
    if version != VERSION {
        return Err(Error::Version {
            what: "checkpoint",
            found: version,
            expected: VERSION,
        });
    }
    let count = r.u32().map_err(fail)?;
    let mut records = Vec::with_capacity(count.min(4096) as usize);
    for _ in 0..count {
        let len = r.u32().map_err(fail)? as usize;
        let name = std::str::from_utf8(r.take(len).map_err(fail)?)
            .map_err(|e| fail(format!("record name: {e}")))?
            .to_owned();
        let rank = r.u32().map_err(fail)? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(fail)?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4).map_err(fail)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| fail(format!("record `{name}`: {e}")))?;
        records.push(Record { name, tensor });
    }
    if r.pos != bytes.len() {
        return Err(fail(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(records)
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    let bytes = encode_records(records);
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_records(&bytes, path)
}

/// Parameter values, momentum buffers and the iteration counter.
pub fn store_records(store: &ParamStore, iteration: u64) -> Vec<Record> {
    let mut out: Vec<Record> = store
        .iter()
        .map(|p| Record {
            name: p.name.clone(),
            tensor: p.value.clone(),
        })
        .collect();
    out.extend(store.iter().map(|p| Record {
        name: format!("{MOMENTUM_PREFIX}{}", p.name),
        tensor: p.momentum.clone(),
    }));
    out.push(Record {
        name: ITERATION_RECORD.into(),
        tensor: Tensor::full(&[1], iteration as f32),
    });
    out
}

/// Copies parameters (and momentum buffers when present) from `records` into
/// `store`, verifying every shape first. Returns the stored iteration count.
pub fn load_into_store(store: &mut ParamStore, records: &[Record]) -> Result<u64> {
    let find = |name: &str| records.iter().find(|r| r.name == name);
    let mut problems = Vec::new();
    for p in store.iter() {
        match find(&p.name) {
            None => problems.push(format!("  missing `{}` {:?}", p.name, p.value.shape())),
            Some(r) if r.tensor.shape() != p.value.shape() => problems.push(format!(
                "  `{}`: checkpoint {:?} vs model {:?}",
                p.name,
                r.tensor.shape(),
                p.value.shape()
            )),
            _ => {}
        }
    }
    if !problems.is_empty() {
        return Err(Error::CheckpointMismatch(problems.join("\n")));
    }
    for p in store.iter_mut() {
        p.value = find(&p.name).expect("checked").tensor.clone();
        let mom = find(&format!("{MOMENTUM_PREFIX}{}", p.name));
        p.momentum = match mom {
            Some(r) if r.tensor.shape() == p.value.shape() => r.tensor.clone(),
            _ => Tensor::zeros(p.value.shape()),
        };
        p.grad = Tensor::zeros(p.value.shape());
    }
    Ok(find(ITERATION_RECORD).map_or(0, |r| r.tensor.data()[0] as u64))
}
