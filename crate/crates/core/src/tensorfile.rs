//! Flat binary tensor container shared by checkpoints and dataset clips.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   b"VDDI"
//! version u32 (= 1)
//! count   u32
//! count x { name_len u32, name utf-8, rank u32, dims u64 x rank, values f32 x prod(dims) }
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VDDI";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

impl NamedTensor {
    pub fn from_f64(name: impl Into<String>, dims: &[usize], values: impl IntoIterator<Item = f64>) -> Self {
        Self { name: name.into(), dims: dims.to_vec(), values: values.into_iter().map(|v| v as f32).collect() }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }
}

pub fn write_tensors<W: Write>(mut out: W, tensors: &[NamedTensor]) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        let expected: usize = t.dims.iter().product();
        if expected != t.values.len() {
            return Err(Error::Shape(format!("tensor `{}` has {} values for dims {:?}", t.name, t.values.len(), t.dims)));
        }
        out.write_all(&(t.name.len() as u32).to_le_bytes())?;
        out.write_all(t.name.as_bytes())?;
        out.write_all(&(t.dims.len() as u32).to_le_bytes())?;
        for &d in &t.dims {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.values.len() * 4);
        for v in &t.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_tensors<R: Read>(mut r: R, origin: &Path) -> Result<Vec<NamedTensor>> {
    let bad = |message: String| Error::Format { path: origin.to_path_buf(), message };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| bad(format!("missing header: {e}")))?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| bad(format!("tensor name is not utf-8: {e}")))?;
        let rank = read_u32(&mut r)? as usize;
        let dims = (0..rank).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<std::io::Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw).map_err(|e| bad(format!("truncated payload for `{name}`: {e}")))?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        tensors.push(NamedTensor { name, dims, values });
    }
    Ok(tensors)
}

pub fn save(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_tensors(&mut w, tensors)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<NamedTensor>> {
    let file = std::fs::File::open(path)?;
    read_tensors(std::io::BufReader::new(file), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop, prop_assert_eq, proptest};

    #[test]
    fn header_bytes() {
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[NamedTensor { name: "w".into(), dims: vec![2], values: vec![1.0, -2.0] }]).unwrap();
        assert_eq!(&buf[..4], b"VDDI");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..16], &1u32.to_le_bytes());
        assert_eq!(buf[16], b'w');
        assert_eq!(&buf[17..21], &1u32.to_le_bytes());
        assert_eq!(&buf[21..29], &2u64.to_le_bytes());
        assert_eq!(&buf[29..33], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 37);
    }

    #[test]
    fn rejects_corruption() {
        let p = Path::new("mem");
        assert!(read_tensors(&b"NOPE"[..], p).is_err());
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[NamedTensor { name: "w".into(), dims: vec![3], values: vec![0.0; 3] }]).unwrap();
        assert!(read_tensors(&buf[..buf.len() - 1], p).is_err());
        assert!(write_tensors(Vec::new(), &[NamedTensor { name: "x".into(), dims: vec![2], values: vec![0.0] }]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(names in prop::collection::vec("[a-z.0-9]{1,12}", 0..4), seed in any::<u32>()) {
            let tensors: Vec<NamedTensor> = names
                .iter()
                .enumerate()
                .map(|(i, n)| {
                    let dims = vec![i + 1, (seed as usize % 3) + 1];
                    let len = dims.iter().product();
                    NamedTensor { name: n.clone(), dims, values: (0..len).map(|k| (k as f32) * 0.5 - seed as f32).collect() }
                })
                .collect();
            let mut buf = Vec::new();
            write_tensors(&mut buf, &tensors).unwrap();
            prop_assert_eq!(read_tensors(&buf[..], Path::new("mem")).unwrap(), tensors);
        }
    }
}
