//! Named parameter storage and the on-disk parameter file.
//!
//! File layout (little endian):
//!
//! ```text
//! magic    8 bytes  "DFSGPAR1"
//! dtype    u8       1 = f32, 2 = f64
//! count    u32
//! count × { name_len u32, name utf-8, ndim u32, dims u64 × ndim, data }
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{NnError, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"DFSGPAR1";

/// Ordered map from parameter name to tensor. Iteration order is the
/// lexicographic name order, which makes hashing and saving deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name).ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Parameters whose name starts with `prefix`, with the prefix stripped.
    pub fn subset(&self, prefix: &str) -> ParamStore<T> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    /// Inserts every tensor of `other` under `prefix`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamStore<T>) {
        for (k, v) in &other.tensors {
            self.tensors.insert(format!("{prefix}{k}"), v.clone());
        }
    }

    /// Serialized parameter file bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.numel() * T::DTYPE.width());
        out.extend_from_slice(MAGIC);
        out.push(T::DTYPE.tag());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    /// SHA-256 of the serialized parameter file, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|source| NnError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads a parameter file of either dtype, converting elements to `T`.
    /// Conversion is bit-exact when the stored dtype is `T`'s.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| NnError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes).map_err(|reason| NnError::Format {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err("bad magic".into());
        }
        let dtype = DType::from_tag(r.take(1)?[0]).ok_or("unknown dtype tag")?;
        let count = r.u32()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| "non utf-8 name")?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * dtype.width())?;
            let data: Vec<T> = match dtype {
                DType::F32 => convert::<f32, T>(raw),
                DType::F64 => convert::<f64, T>(raw),
            };
            let t = Tensor::new(shape, data).map_err(|e| e.to_string())?;
            tensors.insert(name, t);
        }
        if r.pos != bytes.len() {
            return Err("trailing bytes".into());
        }
        Ok(Self { tensors })
    }

    /// Copies parameters from `source` into this store, which defines the
    /// expected names and shapes. Only names starting with `prefix` are
    /// considered. A three-channel source tensor is folded to one channel by
    /// averaging over the mismatching axis (axis 1 for input stems, axis 0
    /// for output heads).
    ///
    /// Fails on the first name that is missing from `source` or whose shape
    /// cannot be reconciled.
    pub fn load_compatible(&mut self, source: &ParamStore<T>, prefix: &str) -> Result<usize> {
        let mut loaded = 0;
        let mut updates = Vec::new();
        for (name, expected) in self.tensors.iter().filter(|(k, _)| k.starts_with(prefix)) {
            let found = source.get(name).ok_or_else(|| NnError::MissingParam(name.clone()))?;
            let value = if found.shape() == expected.shape() {
                found.clone()
            } else {
                fold_channels(found, expected.shape()).ok_or_else(|| NnError::Incompatible {
                    name: name.clone(),
                    expected: expected.shape().to_vec(),
                    found: found.shape().to_vec(),
                })?
            };
            updates.push((name.clone(), value));
            loaded += 1;
        }
        for (name, value) in updates {
            self.tensors.insert(name, value);
        }
        Ok(loaded)
    }
}

fn convert<S: Scalar, T: Scalar>(raw: &[u8]) -> Vec<T> {
    let w = S::DTYPE.width();
    raw.chunks_exact(w)
        .map(|c| {
            let v = S::read_le(c);
            if S::DTYPE == T::DTYPE {
                // same width: reinterpret through the byte encoding
                let mut buf = Vec::with_capacity(w);
                v.write_le(&mut buf);
                T::read_le(&buf)
            } else {
                T::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or(T::nan())
            }
        })
        .collect()
}

/// Averages a tensor over the single axis where it has 3 and `target` has 1.
pub fn fold_channels<T: Scalar>(t: &Tensor<T>, target: &[usize]) -> Option<Tensor<T>> {
    let shape = t.shape();
    if shape.len() != target.len() {
        return None;
    }
    let mismatched: Vec<usize> = (0..shape.len()).filter(|&i| shape[i] != target[i]).collect();
    let [axis] = mismatched[..] else {
        return None;
    };
    if shape[axis] != 3 || target[axis] != 1 {
        return None;
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let third = T::one() / T::lit(3.0);
    let src = t.data();
    let mut out = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let base = o * 3 * inner + i;
            out.push((src[base] + src[base + inner] + src[base + 2 * inner]) * third);
        }
    }
    Tensor::new(target.to_vec(), out).ok()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err("truncated".into()),
        }
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.insert(
            "b.weight",
            Tensor::new(vec![2, 3, 1, 1], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap(),
        );
        s.insert("a.bias", Tensor::new(vec![2], vec![-1.0, f32::MIN_POSITIVE]).unwrap());
        s
    }

    #[test]
    fn bytes_round_trip_bit_exact() {
        let s = store();
        let back = ParamStore::<f32>::from_bytes(&s.to_bytes()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.content_hash(), s.content_hash());
    }

    #[test]
    fn loads_across_dtypes() {
        let s = store();
        let wide = ParamStore::<f64>::from_bytes(&s.to_bytes()).unwrap();
        assert_eq!(wide.get("a.bias").unwrap().data()[0], -1.0);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = store().to_bytes();
        assert!(ParamStore::<f32>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn fold_stem_is_channel_mean() {
        // [cout=1, cin=3, 1, 2]
        let k = Tensor::new(vec![1, 3, 1, 2], vec![1.0f64, 2.0, 4.0, 8.0, 7.0, 5.0]).unwrap();
        let f = fold_channels(&k, &[1, 1, 1, 2]).unwrap();
        assert_eq!(f.data(), &[4.0, 5.0]);
    }

    #[test]
    fn load_compatible_names_first_mismatch() {
        let mut target = ParamStore::<f32>::new();
        target.insert("a.bias", Tensor::zeros(&[5]));
        let err = target.load_compatible(&store(), "").unwrap_err();
        assert!(err.to_string().contains("a.bias"));
    }
}
