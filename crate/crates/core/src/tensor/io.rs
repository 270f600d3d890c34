//! `.ten` array files and named-tensor checkpoints.
//!
//! `.ten`: the magic `UDVDTEN1`, a little-endian `u32` rank, `rank` `u32`
//! dims, then the values as little-endian `f32`.
//!
//! Checkpoint: `u32` entry count, then per entry a `u16` name length, the
//! UTF-8 name and an embedded `.ten` payload.

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const TEN_MAGIC: &[u8; 8] = b"UDVDTEN1";

/// An array of any rank as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct TenArray {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl TenArray {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(Error::shape(format!("dims {dims:?} need {len} values, got {}", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn from_tensor(t: &Tensor<f32>) -> Self {
        Self {
            dims: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }

    /// Rank-4 view; lower ranks are padded with leading ones.
    pub fn to_tensor(&self) -> Result<Tensor<f32>> {
        if self.dims.len() > 4 {
            return Err(Error::shape(format!("rank {} does not fit a 4-D tensor", self.dims.len())));
        }
        let mut shape = [1usize; 4];
        let off = 4 - self.dims.len();
        shape[off..].copy_from_slice(&self.dims);
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(TEN_MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.reserve(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode(&mut out);
        out
    }

    /// Decodes one array from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != TEN_MAGIC {
            return Err(Error::Format("missing UDVDTEN1 magic".into()));
        }
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("implausible rank {rank}")));
        }
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("dims overflow".into()))?;
        let raw = r.take(len.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok((Self { dims, data }, r.pos))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format("unexpected end of data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
}

pub fn write_ten(path: impl AsRef<Path>, array: &TenArray) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, array.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_ten(path: impl AsRef<Path>) -> Result<TenArray> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (array, used) = TenArray::decode(&bytes)?;
    if used != bytes.len() {
        return Err(Error::Format(format!("{}: trailing bytes after array", path.display())));
    }
    Ok(array)
}

pub fn encode_checkpoint(entries: &[(String, TenArray)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, array) in entries {
        let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        array.encode(&mut out);
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, TenArray)>> {
    let mut r = Reader { bytes, pos: 0 };
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("entry name is not UTF-8".into()))?
            .to_owned();
        let (array, used) = TenArray::decode(&bytes[r.pos..])?;
        r.pos += used;
        entries.push((name, array));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(entries)
}

pub fn write_checkpoint(path: impl AsRef<Path>, entries: &[(String, TenArray)]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(entries)?).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, TenArray)>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let a = TenArray::new(vec![2, 1], vec![1.0, -2.5]).unwrap();
        let b = a.to_bytes();
        assert_eq!(&b[..8], b"UDVDTEN1");
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..16], &2u32.to_le_bytes());
        assert_eq!(&b[16..20], &1u32.to_le_bytes());
        assert_eq!(&b[20..24], &1.0f32.to_le_bytes());
        assert_eq!(&b[24..28], &(-2.5f32).to_le_bytes());
        assert_eq!(b.len(), 28);
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(TenArray::decode(b"NOTMAGIC\0\0\0\0").is_err());
        let mut b = TenArray::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap().to_bytes();
        b.truncate(b.len() - 1);
        assert!(TenArray::decode(&b).is_err());
        assert!(decode_checkpoint(&[1, 0, 0, 0, 5, 0]).is_err());
    }

    #[test]
    fn lower_rank_pads_leading_axes() {
        let a = TenArray::new(vec![16, 2, 3], vec![0.0; 96]).unwrap();
        assert_eq!(a.to_tensor().unwrap().shape(), [1, 16, 2, 3]);
    }

    proptest! {
        #[test]
        fn checkpoint_round_trip(
            names in proptest::collection::vec("[a-z.0-9]{1,12}", 0..5),
            seed in any::<u32>(),
        ) {
            let entries: Vec<(String, TenArray)> = names
                .iter()
                .enumerate()
                .map(|(i, n)| {
                    let dims = vec![i + 1, 2];
                    let data = (0..2 * (i + 1)).map(|j| (seed as f32) * 1e-3 - j as f32).collect();
                    (n.clone(), TenArray::new(dims, data).unwrap())
                })
                .collect();
            let bytes = encode_checkpoint(&entries).unwrap();
            prop_assert_eq!(decode_checkpoint(&bytes).unwrap(), entries);
        }
    }
}
