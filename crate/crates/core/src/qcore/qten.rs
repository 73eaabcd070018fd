//! `QTEN` binary tensor files.
//!
//! Little-endian layout:
//!
//! ```text
//! magic      b"QTEN"
//! version    u16 (= 1)
//! dtype      u8  (0 = raw i32 + Q-format, 1 = real f64)
//! rank       u8
//! dims       rank x u32
//! -- dtype 0 only --
//! fmt_len    u8, followed by fmt_len bytes of Q-format text ("S6.9")
//! scale      f64
//! zero_point i64
//! -- payload --
//! dtype 0: i32 per element; dtype 1: f64 per element, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::format::QFormat;
use super::quant::QuantParams;
use super::tensor::{FixedTensor, RealTensor};

pub const MAGIC: &[u8; 4] = b"QTEN";
pub const VERSION: u16 = 1;
const DTYPE_FIXED: u8 = 0;
const DTYPE_REAL: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Fixed(FixedTensor),
    Real(RealTensor),
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            Tensor::Fixed(t) => t.shape(),
            Tensor::Real(t) => t.shape(),
        }
    }
}

fn write_header(w: &mut impl Write, dtype: u8, shape: &[usize]) -> Result<()> {
    if shape.len() > u8::MAX as usize {
        return Err(Error::Decode(format!("rank {} too large", shape.len())));
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[dtype, shape.len() as u8])?;
    for &d in shape {
        let d = u32::try_from(d).map_err(|_| Error::Decode(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_fixed(w: &mut impl Write, t: &FixedTensor) -> Result<()> {
    write_header(w, DTYPE_FIXED, t.shape())?;
    let fmt = t.format().to_string();
    w.write_all(&[fmt.len() as u8])?;
    w.write_all(fmt.as_bytes())?;
    w.write_all(&t.params().scale().to_le_bytes())?;
    w.write_all(&t.params().zero_point().to_le_bytes())?;
    let mut buf = Vec::with_capacity(t.len() * 4);
    for &r in t.raw() {
        // Every format is at most 32 bits wide; unsigned 32-bit raws keep their bit pattern.
        buf.extend_from_slice(&(r as i32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn write_real(w: &mut impl Write, t: &RealTensor) -> Result<()> {
    write_header(w, DTYPE_REAL, t.shape())?;
    let mut buf = Vec::with_capacity(t.len() * 8);
    for &v in t.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn write(w: &mut impl Write, t: &Tensor) -> Result<()> {
    match t {
        Tensor::Fixed(f) => write_fixed(w, f),
        Tensor::Real(r) => write_real(w, r),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Decode(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Decode("bad magic".into()));
    }
    let version = u16::from_le_bytes(c.array()?);
    if version != VERSION {
        return Err(Error::Decode(format!("unsupported version {version}")));
    }
    let [dtype, rank] = c.array::<2>()?;
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        shape.push(u32::from_le_bytes(c.array()?) as usize);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Decode("element count overflows".into()))?;
    let tensor = match dtype {
        DTYPE_FIXED => {
            let [len] = c.array::<1>()?;
            let text = std::str::from_utf8(c.take(len as usize)?)
                .map_err(|_| Error::Decode("format string is not UTF-8".into()))?;
            let format: QFormat = text.parse()?;
            let scale = f64::from_le_bytes(c.array()?);
            let zero_point = i64::from_le_bytes(c.array()?);
            let params = QuantParams::new(scale, zero_point)?;
            let payload = c.take(count.checked_mul(4).ok_or_else(|| Error::Decode("payload too large".into()))?)?;
            let raw = payload
                .chunks_exact(4)
                .map(|b| {
                    let v = i32::from_le_bytes(b.try_into().expect("chunk of 4"));
                    if format.is_signed() {
                        v as i64
                    } else {
                        v as u32 as i64
                    }
                })
                .collect();
            Tensor::Fixed(FixedTensor::new(shape, format, params, raw)?)
        }
        DTYPE_REAL => {
            let payload = c.take(count.checked_mul(8).ok_or_else(|| Error::Decode("payload too large".into()))?)?;
            let values = payload
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
                .collect();
            Tensor::Real(RealTensor::new(shape, values)?)
        }
        other => return Err(Error::Decode(format!("unknown dtype tag {other}"))),
    };
    if c.pos != bytes.len() {
        return Err(Error::Decode(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(tensor)
}

pub fn read(r: &mut impl Read) -> Result<Tensor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
    decode(&std::fs::read(path)?)
}

pub fn save(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut buf = Vec::new();
    write(&mut buf, t)?;
    std::fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::format::q;
    use proptest::prelude::*;

    #[test]
    fn header_bytes() {
        let t = RealTensor::new(vec![2], vec![1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_real(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"QTEN");
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(buf[6], 1);
        assert_eq!(buf[7], 1);
        assert_eq!(&buf[8..12], &[2, 0, 0, 0]);
        assert_eq!(buf.len(), 12 + 16);
        assert_eq!(&buf[12..20], &1.0f64.to_le_bytes());
    }

    #[test]
    fn fixed_layout() {
        let fmt = q("S6.9");
        let params = QuantParams::new(0.5, -3).unwrap();
        let t = FixedTensor::new(vec![1, 2], fmt, params, vec![-1, 768]).unwrap();
        let mut buf = Vec::new();
        write_fixed(&mut buf, &t).unwrap();
        // magic+version+dtype+rank, two dims, fmt len + "S6.9", scale, zp, payload
        assert_eq!(buf.len(), 8 + 8 + 1 + 4 + 8 + 8 + 8);
        assert_eq!(buf[6], 0);
        assert_eq!(buf[16], 4);
        assert_eq!(&buf[17..21], b"S6.9");
        assert_eq!(&buf[buf.len() - 8..buf.len() - 4], &(-1i32).to_le_bytes());
    }

    #[test]
    fn rejects_corruption() {
        let t = Tensor::Real(RealTensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let mut buf = Vec::new();
        write(&mut buf, &t).unwrap();
        assert!(decode(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut magic = buf.clone();
        magic[0] = b'X';
        assert!(decode(&magic).is_err());
        let mut dtype = buf;
        dtype[6] = 9;
        assert!(decode(&dtype).is_err());
    }

    #[test]
    fn unsigned_32bit_raw_survives() {
        let fmt = q("U16.16");
        let t = FixedTensor::with_format(vec![1], fmt, vec![fmt.max_raw()]).unwrap();
        let mut buf = Vec::new();
        write_fixed(&mut buf, &t).unwrap();
        assert_eq!(decode(&buf).unwrap(), Tensor::Fixed(t));
    }

    proptest! {
        #[test]
        fn fixed_round_trip(raw in proptest::collection::vec(-32768i64..32768, 1..40), zp in -100i64..100) {
            let fmt = q("S6.9");
            let params = QuantParams::new(0.03125, zp).unwrap();
            let t = Tensor::Fixed(FixedTensor::new(vec![raw.len()], fmt, params, raw).unwrap());
            let mut buf = Vec::new();
            write(&mut buf, &t).unwrap();
            prop_assert_eq!(decode(&buf).unwrap(), t);
        }

        #[test]
        fn real_round_trip(v in proptest::collection::vec(-1e6f64..1e6, 0..40)) {
            let t = Tensor::Real(RealTensor::new(vec![1, v.len()], v).unwrap());
            let mut buf = Vec::new();
            write(&mut buf, &t).unwrap();
            prop_assert_eq!(decode(&buf).unwrap(), t);
        }
    }
}
