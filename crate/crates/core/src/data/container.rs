//! Binary tensor container.
//!
//! Layout:
//!
//! ```text
//! "CCLDATA1"                 8-byte magic
//! u32 little-endian          header length in bytes
//! UTF-8 JSON header          {"version": 1, "arrays": [{name, shape, offset, dtype}], ...}
//! payload                    little-endian row-major arrays
//! ```
//!
//! Offsets are byte offsets from the start of the payload. The arrays must
//! tile the payload exactly: no gaps, no overlap, no trailing bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CCLDATA1";
pub const VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I32(Vec<i32>),
    U8(Vec<u8>),
}

impl ArrayData {
    pub fn dtype(&self) -> &'static str {
        match self {
            ArrayData::F32(_) => "f32",
            ArrayData::F64(_) => "f64",
            ArrayData::I32(_) => "i32",
            ArrayData::U8(_) => "u8",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::I32(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::U8(v) => out.extend_from_slice(v),
        }
    }
}

fn dtype_size(dtype: &str) -> Result<usize> {
    match dtype {
        "f32" | "i32" => Ok(4),
        "f64" => Ok(8),
        "u8" => Ok(1),
        other => Err(Error::Format(format!("unknown dtype {other:?}"))),
    }
}

fn decode(dtype: &str, bytes: &[u8]) -> Result<ArrayData> {
    Ok(match dtype {
        "f32" => ArrayData::F32(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect(),
        ),
        "f64" => ArrayData::F64(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect(),
        ),
        "i32" => ArrayData::I32(
            bytes
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect(),
        ),
        "u8" => ArrayData::U8(bytes.to_vec()),
        other => return Err(Error::Format(format!("unknown dtype {other:?}"))),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: ArrayData) -> Result<Self> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "array {name:?}: shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { name, shape, data })
    }
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    dtype: String,
}

/// Header metadata plus named arrays.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    /// Extra header fields; `version` and `arrays` are managed by the codec.
    pub meta: Map<String, Value>,
    pub arrays: Vec<NamedArray>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn push(&mut self, array: NamedArray) {
        self.arrays.push(array);
    }

    pub fn array(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Format(format!("missing array {name:?}")))
    }

    pub fn meta_u64(&self, key: &str) -> Result<u64> {
        self.meta
            .get(key)
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Format(format!("header field {key:?} missing or not an integer")))
    }

    pub fn meta_str(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Format(format!("header field {key:?} missing or not a string")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = self.meta.clone();
        header.insert("version".into(), VERSION.into());
        let mut entries = Vec::with_capacity(self.arrays.len());
        let mut payload = Vec::new();
        for a in &self.arrays {
            if entries.iter().any(|e: &ArrayEntry| e.name == a.name) {
                return Err(Error::Format(format!("duplicate array {:?}", a.name)));
            }
            entries.push(ArrayEntry {
                name: a.name.clone(),
                shape: a.shape.clone(),
                offset: payload.len(),
                dtype: a.data.dtype().into(),
            });
            a.data.write_le(&mut payload);
        }
        header.insert(
            "arrays".into(),
            serde_json::to_value(&entries).expect("entries serialize"),
        );
        let json = serde_json::to_vec(&Value::Object(header)).expect("header serializes");
        let len = u32::try_from(json.len())
            .map_err(|_| Error::Format("header longer than 4 GiB".into()))?;
        let mut out = Vec::with_capacity(12 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let header_end = 12usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Format("header length exceeds file size".into()))?;
        let header: Value = serde_json::from_slice(&bytes[12..header_end])
            .map_err(|e| Error::Format(format!("header is not valid JSON: {e}")))?;
        let Value::Object(mut meta) = header else {
            return Err(Error::Format("header is not a JSON object".into()));
        };
        match meta.remove("version").and_then(|v| v.as_u64()) {
            Some(VERSION) => {}
            Some(v) => return Err(Error::Format(format!("unknown version {v}"))),
            None => return Err(Error::Format("header has no version".into())),
        }
        let entries: Vec<ArrayEntry> = meta
            .remove("arrays")
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| Error::Format(format!("bad array table: {e}")))?
            .ok_or_else(|| Error::Format("header has no array table".into()))?;

        let payload = &bytes[header_end..];
        let mut spans = Vec::with_capacity(entries.len());
        for e in &entries {
            let count = e
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("array {:?} is too large", e.name)))?;
            let size = count
                .checked_mul(dtype_size(&e.dtype)?)
                .ok_or_else(|| Error::Format(format!("array {:?} is too large", e.name)))?;
            let end = e
                .offset
                .checked_add(size)
                .filter(|&end| end <= payload.len())
                .ok_or_else(|| {
                    Error::Format(format!(
                        "array {:?} runs past the payload ({} bytes)",
                        e.name,
                        payload.len()
                    ))
                })?;
            spans.push((e.offset, end));
        }
        let mut sorted = spans.clone();
        sorted.sort_unstable();
        let mut cursor = 0;
        for (start, end) in &sorted {
            if *start != cursor {
                return Err(Error::Format("array table has gaps or overlaps".into()));
            }
            cursor = *end;
        }
        if cursor != payload.len() {
            return Err(Error::Format(format!(
                "payload is {} bytes but arrays cover {cursor}",
                payload.len()
            )));
        }

        let mut arrays = Vec::with_capacity(entries.len());
        for (e, (start, end)) in entries.into_iter().zip(spans) {
            if arrays.iter().any(|a: &NamedArray| a.name == e.name) {
                return Err(Error::Format(format!("duplicate array {:?}", e.name)));
            }
            let data = decode(&e.dtype, &payload[start..end])?;
            arrays.push(NamedArray {
                name: e.name,
                shape: e.shape,
                data,
            });
        }
        Ok(Self { meta, arrays })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new().with_meta("kind", "test");
        c.push(NamedArray::new("a", vec![2, 2], ArrayData::F32(vec![1.0, 2.0, 3.0, 4.5])).unwrap());
        c.push(NamedArray::new("b", vec![3], ArrayData::I32(vec![-1, 0, 7])).unwrap());
        c.push(NamedArray::new("c", vec![1], ArrayData::F64(vec![0.1])).unwrap());
        c.push(NamedArray::new("d", vec![2], ArrayData::U8(vec![0, 1])).unwrap());
        c
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(Container::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn truncated_payload_is_format_error() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [1, 3, 9] {
            let r = Container::from_bytes(&bytes[..bytes.len() - cut]);
            assert!(matches!(r, Err(Error::Format(_))), "cut {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(Container::from_bytes(&long), Err(Error::Format(_))));
    }

    #[test]
    fn unknown_version_is_format_error() {
        let bytes = sample().to_bytes().unwrap();
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[12..12 + hlen]).unwrap();
        let patched = header.replace("\"version\":1", "\"version\":9");
        assert_eq!(patched.len(), header.len());
        let mut out = bytes[..12].to_vec();
        out.extend_from_slice(patched.as_bytes());
        out.extend_from_slice(&bytes[12 + hlen..]);
        let err = Container::from_bytes(&out).unwrap_err();
        assert!(err.to_string().contains("unknown version"), "{err}");
    }

    #[test]
    fn bad_magic_and_garbage() {
        assert!(Container::from_bytes(b"").is_err());
        assert!(Container::from_bytes(b"CCLDATA2\0\0\0\0").is_err());
        let mut b = MAGIC.to_vec();
        b.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(Container::from_bytes(&b).is_err());
    }

    #[test]
    fn oversized_shape_rejected_without_allocation() {
        let header = r#"{"version":1,"arrays":[{"name":"x","shape":[18446744073709551615,2],"offset":0,"dtype":"f64"}]}"#;
        let mut b = MAGIC.to_vec();
        b.extend_from_slice(&(header.len() as u32).to_le_bytes());
        b.extend_from_slice(header.as_bytes());
        assert!(matches!(Container::from_bytes(&b), Err(Error::Format(_))));
    }
}
