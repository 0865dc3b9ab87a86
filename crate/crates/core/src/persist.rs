//! Self-describing binary container for fitted models.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! header line      ASCII, e.g. "MIXB2DPPCA/1", terminated by '\n'
//! u32              metadata entry count; each entry: str key, str value
//! u32              dimension count;      each entry: str name, u64 value
//! u32              array count;          each entry: str name, u64 rows, u64 cols,
//!                                        rows·cols f64 values in row-major order
//! ```
//!
//! where `str` is a u32 byte length followed by UTF-8 bytes.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unexpected header {found:?} (expected {expected:?})")]
    WrongHeader { found: String, expected: String },
    #[error("container truncated at byte {0}")]
    Truncated(usize),
    #[error("invalid UTF-8 in container string at byte {0}")]
    BadString(usize),
    #[error("missing {kind} {name:?}")]
    Missing { kind: &'static str, name: String },
    #[error("array {name:?} has shape {actual:?}, expected {expected:?}")]
    BadShape {
        name: String,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("{0} trailing bytes after container")]
    Trailing(usize),
}

type Result<T> = std::result::Result<T, PersistError>;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub header: String,
    pub meta: Vec<(String, String)>,
    pub dims: Vec<(String, u64)>,
    pub arrays: Vec<NamedArray>,
}

impl Container {
    pub fn new(header: impl Into<String>) -> Self {
        Self {
            header: header.into(),
            ..Default::default()
        }
    }

    pub fn push_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.push((key.into(), value.into()));
    }

    pub fn push_dim(&mut self, name: impl Into<String>, value: usize) {
        self.dims.push((name.into(), value as u64));
    }

    pub fn push_matrix(&mut self, name: impl Into<String>, m: &Matrix) {
        self.arrays.push(NamedArray {
            name: name.into(),
            rows: m.rows(),
            cols: m.cols(),
            data: m.as_slice().to_vec(),
        });
    }

    pub fn push_scalar(&mut self, name: impl Into<String>, v: f64) {
        self.arrays.push(NamedArray {
            name: name.into(),
            rows: 1,
            cols: 1,
            data: vec![v],
        });
    }

    pub fn expect_header(&self, expected: &str) -> Result<()> {
        if self.header != expected {
            return Err(PersistError::WrongHeader {
                found: self.header.clone(),
                expected: expected.to_string(),
            });
        }
        Ok(())
    }

    pub fn dim(&self, name: &str) -> Result<usize> {
        self.dims
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, v)| v as usize)
            .ok_or_else(|| PersistError::Missing {
                kind: "dimension",
                name: name.to_string(),
            })
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn array(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| PersistError::Missing {
                kind: "array",
                name: name.to_string(),
            })
    }

    /// Fetches an array and checks its shape.
    pub fn matrix(&self, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
        let a = self.array(name)?;
        if (a.rows, a.cols) != (rows, cols) {
            return Err(PersistError::BadShape {
                name: name.to_string(),
                expected: (rows, cols),
                actual: (a.rows, a.cols),
            });
        }
        Matrix::new(rows, cols, a.data.clone()).map_err(|e| PersistError::Invalid(e.to_string()))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        Ok(self.matrix(name, 1, 1)?.as_slice()[0])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(self.header.as_bytes());
        out.push(b'\n');
        put_u32(&mut out, self.meta.len() as u32);
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        put_u32(&mut out, self.dims.len() as u32);
        for (name, v) in &self.dims {
            put_str(&mut out, name);
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_u32(&mut out, self.arrays.len() as u32);
        for a in &self.arrays {
            put_str(&mut out, &a.name);
            out.extend_from_slice(&(a.rows as u64).to_le_bytes());
            out.extend_from_slice(&(a.cols as u64).to_le_bytes());
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or(PersistError::Truncated(bytes.len()))?;
        let header = std::str::from_utf8(&bytes[..nl])
            .map_err(|_| PersistError::BadString(0))?
            .to_string();
        r.pos = nl + 1;
        let mut c = Container::new(header);
        for _ in 0..r.u32()? {
            let k = r.str()?;
            let v = r.str()?;
            c.meta.push((k, v));
        }
        for _ in 0..r.u32()? {
            let name = r.str()?;
            let v = r.u64()?;
            c.dims.push((name, v));
        }
        for _ in 0..r.u32()? {
            let name = r.str()?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let n = rows
                .checked_mul(cols)
                .filter(|n| n.saturating_mul(8) <= bytes.len())
                .ok_or(PersistError::Truncated(r.pos))?;
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
            }
            c.arrays.push(NamedArray {
                name,
                rows,
                cols,
                data,
            });
        }
        if r.pos != bytes.len() {
            return Err(PersistError::Trailing(bytes.len() - r.pos));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|source| PersistError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| PersistError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(PersistError::Truncated(self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let at = self.pos;
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| PersistError::BadString(at))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new("TEST/1");
        c.push_meta("seed", "7");
        c.push_dim("p", 3);
        c.push_matrix(
            "m",
            &Matrix::from_rows(&[&[1.0, -0.0], &[f64::MIN_POSITIVE, 2.5]]),
        );
        c.push_scalar("s", std::f64::consts::PI);
        c
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        assert!(bytes.starts_with(b"TEST/1\n"));
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.dim("p").unwrap(), 3);
        assert_eq!(back.meta_value("seed"), Some("7"));
        assert_eq!(back.scalar("s").unwrap(), std::f64::consts::PI);
        assert!(matches!(
            back.matrix("m", 1, 4),
            Err(PersistError::BadShape { .. })
        ));
    }

    #[test]
    fn rejects_damage() {
        let bytes = sample().to_bytes();
        assert!(matches!(
            Container::from_bytes(&bytes[..bytes.len() - 3]),
            Err(PersistError::Truncated(_))
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            Container::from_bytes(&extra),
            Err(PersistError::Trailing(1))
        ));
        let c = Container::from_bytes(&bytes).unwrap();
        assert!(c.expect_header("OTHER/1").is_err());
    }
}
