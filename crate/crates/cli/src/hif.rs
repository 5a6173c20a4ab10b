//! `HIF1` array container: little-endian header followed by a flat row-major payload.
//!
//! ```text
//! bytes 0..4   magic "HIF1"
//! u32          version (1)
//! u32          ndims
//! ndims x u64  dims
//! u8           dtype   0 = float64, 1 = complex128 (re, im interleaved)
//! u8           layout  0 = row-major
//! payload      product(dims) values
//! ```

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"HIF1";
pub const VERSION: u32 = 1;
const ROW_MAJOR: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl Payload {
    fn len(&self) -> usize {
        match self {
            Payload::Real(v) => v.len(),
            Payload::Complex(v) => v.len(),
        }
    }

    fn dtype(&self) -> u8 {
        match self {
            Payload::Real(_) => 0,
            Payload::Complex(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HifArray {
    pub dims: Vec<u64>,
    pub payload: Payload,
}

impl HifArray {
    pub fn real(dims: Vec<u64>, data: Vec<f64>) -> CliResult<Self> {
        Self::new(dims, Payload::Real(data))
    }

    pub fn complex(dims: Vec<u64>, data: Vec<Complex64>) -> CliResult<Self> {
        Self::new(dims, Payload::Complex(data))
    }

    fn new(dims: Vec<u64>, payload: Payload) -> CliResult<Self> {
        let expected = element_count(&dims)?;
        if expected != payload.len() as u64 {
            return Err(CliError::Format(format!("dims {dims:?} hold {expected} values, payload has {}", payload.len())));
        }
        Ok(HifArray { dims, payload })
    }

    pub fn dtype_name(&self) -> &'static str {
        match self.payload {
            Payload::Real(_) => "float64",
            Payload::Complex(_) => "complex128",
        }
    }

    pub fn into_real(self) -> CliResult<Vec<f64>> {
        match self.payload {
            Payload::Real(v) => Ok(v),
            Payload::Complex(_) => Err(CliError::Format("expected a float64 array, found complex128".into())),
        }
    }

    pub fn into_complex(self) -> CliResult<Vec<Complex64>> {
        match self.payload {
            Payload::Complex(v) => Ok(v),
            Payload::Real(_) => Err(CliError::Format("expected a complex128 array, found float64".into())),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(14 + 8 * self.dims.len() + 16 * self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.push(self.payload.dtype());
        out.push(ROW_MAJOR);
        match &self.payload {
            Payload::Real(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::Complex(v) => v.iter().for_each(|z| {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(CliError::Format("missing HIF1 magic".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(CliError::Format(format!("unsupported HIF version {version}")));
        }
        let ndims = cur.u32()? as usize;
        let dims = (0..ndims).map(|_| cur.u64()).collect::<CliResult<Vec<_>>>()?;
        let dtype = cur.take(1)?[0];
        let layout = cur.take(1)?[0];
        if layout != ROW_MAJOR {
            return Err(CliError::Format(format!("unsupported layout flag {layout}")));
        }
        let count = element_count(&dims)? as usize;
        let width = match dtype {
            0 => 8,
            1 => 16,
            other => return Err(CliError::Format(format!("unknown dtype {other}"))),
        };
        let rest = bytes.len() - cur.pos;
        if count.checked_mul(width) != Some(rest) {
            return Err(CliError::Format(format!(
                "payload is {rest} bytes, dims {dims:?} need {}",
                count.saturating_mul(width)
            )));
        }
        let f = |i: usize| f64::from_le_bytes(bytes[cur.pos + 8 * i..cur.pos + 8 * i + 8].try_into().unwrap());
        let payload = if dtype == 0 {
            Payload::Real((0..count).map(f).collect())
        } else {
            Payload::Complex((0..count).map(|i| Complex64::new(f(2 * i), f(2 * i + 1))).collect())
        };
        Ok(HifArray { dims, payload })
    }

    pub fn write(&self, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = self.to_bytes();
        let mut file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
        file.write_all(&bytes).map_err(|e| CliError::io(path, e))?;
        Ok(bytes)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            CliError::Format(msg) => CliError::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

fn element_count(dims: &[u64]) -> CliResult<u64> {
    dims.iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| CliError::Format(format!("dims {dims:?} overflow")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CliError::Format("truncated header".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> CliResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> CliResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let data = vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, f64::NAN, 3.0];
        let a = HifArray::real(vec![2, 3], data).unwrap();
        let b = HifArray::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = HifArray::complex(vec![2], vec![Complex64::new(1.5, -2.5), Complex64::new(0.0, 1e-310)]).unwrap();
        assert_eq!(HifArray::from_bytes(&c.to_bytes()).unwrap(), c);
    }

    #[test]
    fn header_layout() {
        let a = HifArray::real(vec![1], vec![2.0]).unwrap();
        let bytes = a.to_bytes();
        assert_eq!(&bytes[0..4], b"HIF1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 1);
        assert_eq!(bytes[20], 0);
        assert_eq!(bytes[21], 0);
        assert_eq!(bytes.len(), 30);
    }

    #[test]
    fn rejects_bad_payloads() {
        let mut bytes = HifArray::real(vec![2], vec![1.0, 2.0]).unwrap().to_bytes();
        bytes.pop();
        assert!(HifArray::from_bytes(&bytes).is_err());
        assert!(HifArray::real(vec![3], vec![1.0]).is_err());
        let mut bad = HifArray::real(vec![1], vec![1.0]).unwrap().to_bytes();
        bad[0] = b'X';
        assert!(HifArray::from_bytes(&bad).is_err());
        let mut dtype = HifArray::real(vec![1], vec![1.0]).unwrap().to_bytes();
        dtype[20] = 7;
        assert!(HifArray::from_bytes(&dtype).is_err());
    }
}
