//! Tensor files: a short text header followed by a little-endian `f32`
//! payload in row-major order.
//!
//! ```text
//! ESMT 1
//! dtype: f32le
//! shape: 90 180 6
//! channels: phi theta depth r g b
//! meta.frame_id: 12
//! end
//! <4 * prod(shape) bytes>
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, Array3};

use super::IoError;

const MAGIC: &str = "ESMT 1";
const DTYPE: &str = "f32le";
const END: &str = "end";

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub shape: Vec<usize>,
    /// Names for the last axis; may be empty.
    pub channels: Vec<String>,
    pub meta: BTreeMap<String, String>,
    pub data: Vec<f32>,
}

impl TensorFile {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            channels: Vec::new(),
            meta: BTreeMap::new(),
            data,
        }
    }

    pub fn from_array3(a: &Array3<f64>) -> Self {
        Self::new(a.shape().to_vec(), a.iter().map(|v| *v as f32).collect())
    }

    pub fn from_array2(a: &Array2<f64>) -> Self {
        Self::new(a.shape().to_vec(), a.iter().map(|v| *v as f32).collect())
    }

    pub fn with_channels<S: Into<String>>(mut self, names: impl IntoIterator<Item = S>) -> Self {
        self.channels = names.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    /// As `h x w x c`; a 2-D tensor gains a trailing unit axis.
    pub fn to_array3(&self) -> Result<Array3<f64>, IoError> {
        let shape = match self.shape.as_slice() {
            [h, w] => (*h, *w, 1),
            [h, w, c] => (*h, *w, *c),
            other => {
                return Err(IoError::ShapeMismatch {
                    what: "tensor rank".into(),
                    expected: vec![0, 0, 0],
                    found: other.to_vec(),
                })
            }
        };
        Ok(
            Array3::from_shape_vec(shape, self.data.iter().map(|v| *v as f64).collect())
                .expect("length checked on read"),
        )
    }

    pub fn to_array2(&self) -> Result<Array2<f64>, IoError> {
        let shape = match self.shape.as_slice() {
            [h, w] | [h, w, 1] => (*h, *w),
            other => {
                return Err(IoError::ShapeMismatch {
                    what: "tensor rank".into(),
                    expected: vec![0, 0],
                    found: other.to_vec(),
                })
            }
        };
        Ok(
            Array2::from_shape_vec(shape, self.data.iter().map(|v| *v as f64).collect())
                .expect("length checked on read"),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("{MAGIC}\ndtype: {DTYPE}\nshape:");
        for s in &self.shape {
            header.push_str(&format!(" {s}"));
        }
        header.push_str("\nchannels:");
        for c in &self.channels {
            header.push(' ');
            header.push_str(c);
        }
        header.push('\n');
        for (k, v) in &self.meta {
            header.push_str(&format!("meta.{k}: {v}\n"));
        }
        header.push_str(END);
        header.push('\n');
        let mut out = header.into_bytes();
        out.reserve(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self, IoError> {
        let bad = |reason: &str| IoError::BadHeader {
            path: origin.to_string(),
            reason: reason.to_string(),
        };
        let mut pos = 0;
        let mut lines = Vec::new();
        loop {
            let rest = &bytes[pos..];
            let nl = rest
                .iter()
                .position(|b| *b == b'\n')
                .ok_or_else(|| bad("header is not terminated"))?;
            let line = std::str::from_utf8(&rest[..nl]).map_err(|_| bad("header is not UTF-8"))?;
            pos += nl + 1;
            if line == END {
                break;
            }
            lines.push(line.to_string());
            if lines.len() > 4096 {
                return Err(bad("header too long"));
            }
        }
        let mut it = lines.iter();
        if it.next().map(String::as_str) != Some(MAGIC) {
            return Err(bad("missing magic line"));
        }
        let mut shape = None;
        let mut dtype = None;
        let mut channels = Vec::new();
        let mut meta = BTreeMap::new();
        for line in it {
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| bad("expected 'key: value'"))?;
            let value = value.trim();
            match key {
                "dtype" => dtype = Some(value.to_string()),
                "shape" => {
                    let dims: Result<Vec<usize>, _> =
                        value.split_whitespace().map(str::parse).collect();
                    shape = Some(dims.map_err(|_| bad("shape must be unsigned integers"))?);
                }
                "channels" => channels = value.split_whitespace().map(String::from).collect(),
                k if k.starts_with("meta.") => {
                    meta.insert(k["meta.".len()..].to_string(), value.to_string());
                }
                _ => return Err(bad(&format!("unknown header key '{key}'"))),
            }
        }
        if dtype.as_deref() != Some(DTYPE) {
            return Err(bad("dtype must be f32le"));
        }
        let shape = shape.ok_or_else(|| bad("missing shape"))?;
        if !channels.is_empty() && shape.last() != Some(&channels.len()) {
            return Err(bad("channel names do not match the last axis"));
        }
        let payload = &bytes[pos..];
        let expected = shape.iter().product::<usize>() * 4;
        if payload.len() != expected {
            return Err(IoError::PayloadLength {
                path: origin.to_string(),
                expected,
                found: payload.len(),
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self {
            shape,
            channels,
            meta,
            data,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| IoError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = TensorFile::new(vec![1, 2], vec![1.0, -2.5])
            .with_channels(["a", "b"])
            .with_meta("k", 3);
        let bytes = t.to_bytes();
        let text = String::from_utf8_lossy(&bytes[..bytes.len() - 8]);
        assert_eq!(
            text,
            "ESMT 1\ndtype: f32le\nshape: 1 2\nchannels: a b\nmeta.k: 3\nend\n"
        );
        assert_eq!(&bytes[bytes.len() - 4..], &(-2.5f32).to_le_bytes());
    }

    #[test]
    fn rejects_truncated_payload() {
        let mut bytes = TensorFile::new(vec![2, 2], vec![0.0; 4]).to_bytes();
        bytes.pop();
        assert!(matches!(
            TensorFile::from_bytes(&bytes, "x"),
            Err(IoError::PayloadLength {
                expected: 16,
                found: 15,
                ..
            })
        ));
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(TensorFile::from_bytes(b"nope\nend\n", "x").is_err());
        assert!(TensorFile::from_bytes(
            b"ESMT 1\ndtype: f64\nshape: 1\nend\n\0\0\0\0\0\0\0\0",
            "x"
        )
        .is_err());
        assert!(TensorFile::from_bytes(
            b"ESMT 1\ndtype: f32le\nshape: 1 2\nchannels: a\nend\n",
            "x"
        )
        .is_err());
        assert!(TensorFile::from_bytes(b"ESMT 1\ndtype: f32le\nshape: 1", "x").is_err());
    }

    proptest! {
        #[test]
        fn bytes_round_trip_bit_exact(
            h in 1usize..6, w in 1usize..6, c in 1usize..4,
            seed in any::<u32>(),
        ) {
            let n = h * w * c;
            let data: Vec<f32> = (0..n)
                .map(|k| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(k as u32 * 40503)))
                .collect();
            let t = TensorFile::new(vec![h, w, c], data)
                .with_channels((0..c).map(|k| format!("c{k}")))
                .with_meta("note", "x y");
            let back = TensorFile::from_bytes(&t.to_bytes(), "mem").unwrap();
            prop_assert_eq!(back.shape, t.shape);
            prop_assert_eq!(back.channels, t.channels);
            prop_assert_eq!(back.meta, t.meta);
            let a: Vec<u32> = back.data.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = t.data.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
