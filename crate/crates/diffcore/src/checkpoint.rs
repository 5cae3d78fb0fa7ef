//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "DCKP"
//! version    u32      1
//! flags      u8       bit 0: Adam moments included
//! count      u32      number of records
//! record*    kind u8 (0 parameter, 1 buffer)
//!            name_len u32, name (UTF-8)
//!            dtype u8 (0 f64, 1 f32)
//!            rank u32, extents u64 * rank
//!            values (dtype) * product(extents)
//!            [parameters only, when flag bit 0 is set:
//!             step_count u64, adam_m values, adam_v values]
//! ```

use std::io::{Read, Write};

use crate::error::{DiffError, Result};
use crate::{ParamStore, Real, Tensor, REAL_DTYPE};

const MAGIC: &[u8; 4] = b"DCKP";
const VERSION: u32 = 1;
const FLAG_MOMENTS: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordKind {
    Parameter,
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointRecord {
    pub kind: RecordKind,
    pub name: String,
    pub tensor: Tensor,
    /// `(step_count, adam_m, adam_v)` when moments were saved.
    pub moments: Option<(u64, Tensor, Tensor)>,
}

pub fn write_checkpoint<W: Write>(mut w: W, store: &ParamStore, with_moments: bool) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[if with_moments { FLAG_MOMENTS } else { 0 }])?;
    let count = (store.params().len() + store.buffers().len()) as u32;
    w.write_all(&count.to_le_bytes())?;
    for p in store.params() {
        write_header(&mut w, 0, &p.name, &p.tensor)?;
        write_values(&mut w, &p.tensor)?;
        if with_moments {
            w.write_all(&p.step_count.to_le_bytes())?;
            write_values(&mut w, &p.adam_m)?;
            write_values(&mut w, &p.adam_v)?;
        }
    }
    for b in store.buffers() {
        write_header(&mut w, 1, &b.name, &b.tensor)?;
        write_values(&mut w, &b.tensor)?;
    }
    Ok(())
}

fn write_header<W: Write>(w: &mut W, kind: u8, name: &str, t: &Tensor) -> Result<()> {
    w.write_all(&[kind])?;
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&[REAL_DTYPE])?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    Ok(())
}

fn write_values<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    let mut buf = Vec::with_capacity(t.numel() * std::mem::size_of::<Real>());
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Reader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => DiffError::Format {
                offset: self.offset,
                detail: format!("truncated, wanted {n} more bytes"),
            },
            _ => DiffError::Io(e),
        })?;
        self.offset += n as u64;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn err<T>(&self, detail: impl Into<String>) -> Result<T> {
        Err(DiffError::Format {
            offset: self.offset,
            detail: detail.into(),
        })
    }

    fn values(&mut self, dtype: u8, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data: Vec<Real> = match dtype {
            0 => self
                .bytes(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as Real)
                .collect(),
            1 => self
                .bytes(n * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as Real)
                .collect(),
            t => return self.err(format!("unknown dtype tag {t}")),
        };
        Tensor::new(shape.to_vec(), data)
    }
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<Vec<CheckpointRecord>> {
    let mut r = Reader { inner: r, offset: 0 };
    if r.bytes(4)? != MAGIC {
        return r.err("bad magic");
    }
    let version = r.u32()?;
    if version != VERSION {
        return r.err(format!("unsupported version {version}"));
    }
    let flags = r.u8()?;
    let count = r.u32()?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let kind = match r.u8()? {
            0 => RecordKind::Parameter,
            1 => RecordKind::Buffer,
            k => return r.err(format!("unknown record kind {k}")),
        };
        let len = r.u32()? as usize;
        let name = match String::from_utf8(r.bytes(len)?) {
            Ok(s) => s,
            Err(_) => return r.err("name is not UTF-8"),
        };
        let dtype = r.u8()?;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let tensor = r.values(dtype, &shape)?;
        let moments = if kind == RecordKind::Parameter && flags & FLAG_MOMENTS != 0 {
            let step = r.u64()?;
            let m = r.values(dtype, &shape)?;
            let v = r.values(dtype, &shape)?;
            Some((step, m, v))
        } else {
            None
        };
        out.push(CheckpointRecord {
            kind,
            name,
            tensor,
            moments,
        });
    }
    Ok(out)
}

impl ParamStore {
    /// Copies checkpoint records into same-named, same-shaped entries.
    /// Every parameter and buffer of the store must be present.
    pub fn load_records(&mut self, records: &[CheckpointRecord]) -> Result<()> {
        let mut seen = 0usize;
        for rec in records {
            let target = match rec.kind {
                RecordKind::Parameter => self.find_param(&rec.name).map(|id| {
                    let p = self.param_mut(id);
                    if let Some((step, m, v)) = &rec.moments {
                        p.step_count = *step;
                        p.adam_m = m.clone();
                        p.adam_v = v.clone();
                    }
                    &mut p.tensor
                }),
                RecordKind::Buffer => self.find_buffer(&rec.name).map(|id| &mut self.buffer_mut(id).tensor),
            };
            let Some(t) = target else {
                return Err(DiffError::UnknownName(rec.name.clone()));
            };
            if t.shape() != rec.tensor.shape() {
                return Err(DiffError::Dimension {
                    op: "load_records",
                    detail: format!("`{}`: {:?} vs {:?}", rec.name, t.shape(), rec.tensor.shape()),
                });
            }
            *t = rec.tensor.clone();
            seen += 1;
        }
        let expected = self.params().len() + self.buffers().len();
        if seen != expected {
            return Err(DiffError::Dimension {
                op: "load_records",
                detail: format!("checkpoint has {seen} of {expected} entries"),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        let id = s
            .add_param("w", Tensor::new([2, 3], vec![1.0, -2.0, 3.5, 0.25, 1e-300, -0.0]).unwrap())
            .unwrap();
        s.param_mut(id).step_count = 7;
        s.param_mut(id).adam_m = Tensor::full([2, 3], 0.5);
        s.add_buffer("bn.running_var", Tensor::full([3], 1.0)).unwrap();
        s
    }

    #[test]
    fn round_trip_with_moments() {
        let s = store();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &s, true).unwrap();
        let recs = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(recs.len(), 2);
        let (step, m, _) = recs[0].moments.clone().unwrap();
        assert_eq!(step, 7);
        assert_eq!(m, Tensor::full([2, 3], 0.5));

        let mut fresh = ParamStore::new();
        fresh.add_param("w", Tensor::zeros([2, 3])).unwrap();
        fresh.add_buffer("bn.running_var", Tensor::zeros([3])).unwrap();
        fresh.load_records(&recs).unwrap();
        assert_eq!(fresh.params()[0].tensor, s.params()[0].tensor);
        assert_eq!(fresh.buffers()[0].tensor, s.buffers()[0].tensor);
        assert_eq!(fresh.params()[0].step_count, 7);
    }

    #[test]
    fn truncated_file_reports_offset() {
        let s = store();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &s, false).unwrap();
        bytes.truncate(bytes.len() - 3);
        match read_checkpoint(bytes.as_slice()) {
            Err(DiffError::Format { offset, .. }) => assert!(offset > 13),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let s = store();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &s, false).unwrap();
        let recs = read_checkpoint(bytes.as_slice()).unwrap();
        let mut other = ParamStore::new();
        other.add_param("w", Tensor::zeros([3, 2])).unwrap();
        other.add_buffer("bn.running_var", Tensor::zeros([3])).unwrap();
        assert!(other.load_records(&recs).is_err());
    }
}
