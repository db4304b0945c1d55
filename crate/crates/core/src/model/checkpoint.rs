use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ndgraph::Tensor;

use super::encoder::{Encoder, EncoderConfig};
use super::optim::Adam;

pub const MAGIC: &[u8; 4] = b"PWRC";
pub const VERSION: u32 = 1;

/// Parameters, Adam moments and step counter of a training run.
///
/// File layout (little endian): magic `PWRC`, `u32` version, `u32` tensor
/// count, then per tensor `u16` name length, UTF-8 name, `u8` rank,
/// `u32` dims and `f32` payload. Parameters come first, followed by their
/// first and second moments named `<param>.m` and `<param>.v`. A trailing
/// `u64` holds the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub step: u64,
}

impl Checkpoint {
    pub fn from_state(enc: &Encoder, opt: &Adam, step: u64) -> Self {
        let mut tensors = enc.params.clone();
        for (suffix, moments) in [(".m", &opt.m), (".v", &opt.v)] {
            for ((name, _), t) in enc.params.iter().zip(moments.iter()) {
                tensors.push((format!("{name}{suffix}"), t.clone()));
            }
        }
        Checkpoint { tensors, step }
    }

    fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Rebuilds the encoder and optimizer state for `cfg`, checking every
    /// tensor against the expected shape table.
    pub fn restore(&self, cfg: &EncoderConfig, opt: &mut Adam) -> Result<Encoder> {
        let expected = Encoder::expected_shapes(cfg);
        let mut params = Vec::new();
        let (mut m, mut v) = (Vec::new(), Vec::new());
        for (name, shape) in &expected {
            for (suffix, dst) in [("", &mut params), (".m", &mut m), (".v", &mut v)] {
                let full = format!("{name}{suffix}");
                let t = self
                    .get(&full)
                    .ok_or_else(|| Error::Config(format!("checkpoint lacks tensor `{full}`")))?;
                if t.shape() != shape.as_slice() {
                    return Err(Error::Shape {
                        name: full,
                        expected: shape.clone(),
                        found: t.shape().to_vec(),
                    });
                }
                dst.push(t.clone());
            }
        }
        if self.tensors.len() != 3 * expected.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} tensors, configuration expects {}",
                self.tensors.len(),
                3 * expected.len()
            )));
        }
        opt.m = m;
        opt.v = v;
        Ok(Encoder {
            cfg: cfg.clone(),
            params: expected.into_iter().map(|(n, _)| n).zip(params).collect(),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let nb = name.as_bytes();
            if nb.len() > u16::MAX as usize || t.rank() > u8::MAX as usize {
                return Err(Error::Parameter(format!("tensor `{name}` cannot be serialized")));
            }
            out.extend_from_slice(&(nb.len() as u16).to_le_bytes());
            out.extend_from_slice(nb);
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format(0, "bad magic, expected PWRC"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let at = r.pos as u64;
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format(at, "tensor name is not UTF-8"))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            if rank == 0 || n == 0 {
                return Err(Error::format(at, format!("tensor `{name}` has an empty shape")));
            }
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::format(at, "tensor too large"))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        let step = r.u64()?;
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos as u64, "trailing bytes after step counter"));
        }
        Ok(Checkpoint { tensors, step })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(e) => {
                let s = &self.bytes[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(Error::format(
                self.pos as u64,
                format!("truncated: need {n} bytes, {} left", self.bytes.len() - self.pos),
            )),
        }
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}
