//! `SPAV` container: magic, `u32` version, `u32` section count, then sections of
//! `(u32 name length, name bytes, u8 dtype, u32 ndim, u64 dims..., payload)`, all little-endian.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::mlp::{Mlp, MlpSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SPAV";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    U8 = 0,
    U32 = 1,
    F32 = 2,
    F64 = 3,
}

impl DType {
    fn size(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::U32 | DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => DType::U8,
            1 => DType::U32,
            2 => DType::F32,
            3 => DType::F64,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<u64>,
    pub payload: Vec<u8>,
}

/// Ordered named sections; insertion order is preserved on disk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    sections: Vec<Section>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    pub fn contains(&self, name: &str) -> bool {
        self.sections.iter().any(|s| s.name == name)
    }

    fn put(&mut self, name: &str, dtype: DType, shape: &[usize], payload: Vec<u8>) {
        let section = Section {
            name: name.to_string(),
            dtype,
            shape: shape.iter().map(|&d| d as u64).collect(),
            payload,
        };
        match self.sections.iter_mut().find(|s| s.name == name) {
            Some(s) => *s = section,
            None => self.sections.push(section),
        }
    }

    fn get(&self, name: &str, dtype: DType) -> Result<&Section> {
        let s = self
            .sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| bad(format!("missing section '{name}'")))?;
        if s.dtype != dtype {
            return Err(bad(format!("section '{name}' has dtype {:?}, expected {dtype:?}", s.dtype)));
        }
        Ok(s)
    }

    pub fn put_f64(&mut self, name: &str, shape: &[usize], data: &[f64]) {
        self.put(name, DType::F64, shape, data.iter().flat_map(|v| v.to_le_bytes()).collect());
    }

    pub fn put_f32(&mut self, name: &str, shape: &[usize], data: &[f32]) {
        self.put(name, DType::F32, shape, data.iter().flat_map(|v| v.to_le_bytes()).collect());
    }

    pub fn put_u32(&mut self, name: &str, shape: &[usize], data: &[u32]) {
        self.put(name, DType::U32, shape, data.iter().flat_map(|v| v.to_le_bytes()).collect());
    }

    pub fn put_u8(&mut self, name: &str, data: &[u8]) {
        self.put(name, DType::U8, &[data.len()], data.to_vec());
    }

    pub fn put_json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.put_u8(name, &serde_json::to_vec(value)?);
        Ok(())
    }

    pub fn put_tensor(&mut self, name: &str, t: &Tensor) {
        self.put_f64(name, t.shape(), t.data());
    }

    pub fn get_f64(&self, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let s = self.get(name, DType::F64)?;
        let data = s.payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok((s.shape.iter().map(|&d| d as usize).collect(), data))
    }

    pub fn get_f32(&self, name: &str) -> Result<(Vec<usize>, Vec<f32>)> {
        let s = self.get(name, DType::F32)?;
        let data = s.payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok((s.shape.iter().map(|&d| d as usize).collect(), data))
    }

    pub fn get_u32(&self, name: &str) -> Result<(Vec<usize>, Vec<u32>)> {
        let s = self.get(name, DType::U32)?;
        let data = s.payload.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok((s.shape.iter().map(|&d| d as usize).collect(), data))
    }

    pub fn get_u8(&self, name: &str) -> Result<&[u8]> {
        Ok(&self.get(name, DType::U8)?.payload)
    }

    pub fn get_json<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<T> {
        Ok(serde_json::from_slice(self.get_u8(name)?)?)
    }

    pub fn get_tensor(&self, name: &str) -> Result<Tensor> {
        let (shape, data) = self.get_f64(name)?;
        Tensor::new(shape, data)
    }

    /// Stores the spec as JSON under `prefix.spec` and parameters as `prefix.{i}`.
    pub fn put_mlp(&mut self, prefix: &str, mlp: &Mlp) -> Result<()> {
        self.put_json(&format!("{prefix}.spec"), &mlp.spec)?;
        for (i, p) in mlp.params.iter().enumerate() {
            self.put_tensor(&format!("{prefix}.{i}"), p);
        }
        Ok(())
    }

    pub fn get_mlp(&self, prefix: &str) -> Result<Mlp> {
        let spec: MlpSpec = self.get_json(&format!("{prefix}.spec"))?;
        let params = (0..2 * spec.depth)
            .map(|i| self.get_tensor(&format!("{prefix}.{i}")))
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_params(spec, params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for s in &self.sections {
            out.extend_from_slice(&(s.name.len() as u32).to_le_bytes());
            out.extend_from_slice(s.name.as_bytes());
            out.push(s.dtype as u8);
            out.extend_from_slice(&(s.shape.len() as u32).to_le_bytes());
            for d in &s.shape {
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.extend_from_slice(&s.payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(bad("not a SPAV checkpoint"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut sections = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| bad("section name is not utf-8"))?;
            let dtype = DType::from_u8(r.take(1)?[0]).ok_or_else(|| bad(format!("unknown dtype in '{name}'")))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
            let numel: u64 = shape.iter().product();
            let payload = r.take(numel as usize * dtype.size())?.to_vec();
            sections.push(Section {
                name,
                dtype,
                shape,
                payload,
            });
        }
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { sections })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::file(path, e))?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(bad(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// SHA-256 over shapes and values; used to assert parameters stay frozen.
pub fn parameter_digest(params: &[Tensor]) -> String {
    let mut h = Sha256::new();
    for p in params {
        for d in p.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in p.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::MlpSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mlp_round_trip_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mlp = Mlp::new(MlpSpec::new(3, 2, 3, 7).with_skip(1), &mut rng).unwrap();
        let mut ck = Checkpoint::new();
        ck.put_mlp("net", &mlp).unwrap();
        ck.put_u32("ids", &[3], &[1, 2, 3]);
        ck.put_f32("pts", &[1, 3], &[0.5, -1.0, 2.0]);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let loaded = back.get_mlp("net").unwrap();
        let x = Tensor::from_rows(&[[0.1, 0.2, 0.3]]).unwrap();
        assert_eq!(mlp.forward(&x).unwrap().data(), loaded.forward(&x).unwrap().data());
        assert_eq!(back.get_u32("ids").unwrap().1, vec![1, 2, 3]);
    }

    #[test]
    fn rejects_corrupt_input() {
        let mut ck = Checkpoint::new();
        ck.put_f64("a", &[2], &[1.0, 2.0]);
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong).is_err());
        assert!(ck.get_u32("a").is_err());
        assert!(ck.get_f64("b").is_err());
    }

    #[test]
    fn digest_tracks_values() {
        let a = vec![Tensor::scalar(1.0)];
        let b = vec![Tensor::scalar(1.0 + 1e-15)];
        assert_eq!(parameter_digest(&a), parameter_digest(&a.clone()));
        assert_ne!(parameter_digest(&a), parameter_digest(&b));
    }
}
