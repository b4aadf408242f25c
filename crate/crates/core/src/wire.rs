//! Canonical byte encoding for protocol messages.
//!
//! Every message that crosses the simulated network is encoded with the
//! helpers here: fixed field order, big-endian integers, length-prefixed
//! byte fields. Decoders never panic on malformed input; they return
//! [`WireError`] so hostile bytes cannot crash a protocol loop.

use num_bigint::BigUint;
use thiserror::Error;

/// Hard cap on any single length-prefixed field. Keeps hostile length
/// prefixes from forcing large allocations.
pub const MAX_FIELD_LEN: usize = 1 << 20;

/// Hard cap on decoded vector lengths.
pub const MAX_VEC_LEN: usize = 1 << 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("unexpected end of input at byte {0}")]
    Truncated(usize),
    #[error("field length {0} exceeds limit")]
    FieldTooLong(usize),
    #[error("vector length {0} exceeds limit")]
    VecTooLong(usize),
    #[error("trailing bytes after message")]
    TrailingBytes,
    #[error("invalid discriminant {0} for {1}")]
    BadDiscriminant(u8, &'static str),
    #[error("invalid value: {0}")]
    Invalid(&'static str),
}

/// Append-only encoder.
#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u8(u8::from(v))
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        debug_assert!(v.len() <= MAX_FIELD_LEN);
        self.u32(v.len() as u32);
        self.buf.extend_from_slice(v);
        self
    }

    pub fn str(&mut self, v: &str) -> &mut Self {
        self.bytes(v.as_bytes())
    }

    pub fn biguint(&mut self, v: &BigUint) -> &mut Self {
        self.bytes(&v.to_bytes_be())
    }

    /// Raw bytes with no length prefix (fixed-size fields).
    pub fn raw(&mut self, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(v);
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Cursor-based decoder over a byte slice.
pub struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.data.len() - self.pos < n {
            return Err(WireError::Truncated(self.pos));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, WireError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_be_bytes(a))
    }

    pub fn bool(&mut self) -> Result<bool, WireError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            d => Err(WireError::BadDiscriminant(d, "bool")),
        }
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], WireError> {
        let len = self.u32()? as usize;
        if len > MAX_FIELD_LEN {
            return Err(WireError::FieldTooLong(len));
        }
        self.take(len)
    }

    pub fn str(&mut self) -> Result<&'a str, WireError> {
        std::str::from_utf8(self.bytes()?).map_err(|_| WireError::Invalid("utf-8"))
    }

    pub fn biguint(&mut self) -> Result<BigUint, WireError> {
        Ok(BigUint::from_bytes_be(self.bytes()?))
    }

    pub fn raw(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        self.take(n)
    }

    /// Length prefix for a vector of structured items.
    pub fn vec_len(&mut self) -> Result<usize, WireError> {
        let len = self.u32()? as usize;
        if len > MAX_VEC_LEN {
            return Err(WireError::VecTooLong(len));
        }
        Ok(len)
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    /// Succeeds only if the whole input was consumed.
    pub fn finish(self) -> Result<(), WireError> {
        if self.remaining() == 0 {
            Ok(())
        } else {
            Err(WireError::TrailingBytes)
        }
    }
}

/// Types with a canonical wire form.
pub trait Encode {
    fn encode_into(&self, w: &mut Writer);

    fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_into(&mut w);
        w.finish()
    }
}

pub trait Decode: Sized {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, WireError>;

    fn decode(data: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(data);
        let v = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_primitives() {
        let mut w = Writer::new();
        w.u8(7).u32(40_000).u64(1 << 40).bool(true).bytes(b"hello").str("wf");
        w.biguint(&BigUint::from(123_456_789_u64));
        let buf = w.finish();

        let mut r = Reader::new(&buf);
        assert_eq!(r.u8().unwrap(), 7);
        assert_eq!(r.u32().unwrap(), 40_000);
        assert_eq!(r.u64().unwrap(), 1 << 40);
        assert!(r.bool().unwrap());
        assert_eq!(r.bytes().unwrap(), b"hello");
        assert_eq!(r.str().unwrap(), "wf");
        assert_eq!(r.biguint().unwrap(), BigUint::from(123_456_789_u64));
        r.finish().unwrap();
    }

    #[test]
    fn truncated_input_is_an_error() {
        let mut w = Writer::new();
        w.bytes(b"abcdef");
        let buf = w.finish();
        let mut r = Reader::new(&buf[..buf.len() - 1]);
        assert!(matches!(r.bytes(), Err(WireError::Truncated(_))));
    }

    #[test]
    fn hostile_length_prefix_rejected() {
        let mut buf = Vec::new();
        buf.extend_from_slice(&u32::MAX.to_be_bytes());
        let mut r = Reader::new(&buf);
        assert!(matches!(r.bytes(), Err(WireError::FieldTooLong(_))));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let buf = [0u8, 1, 2];
        let mut r = Reader::new(&buf);
        let _ = r.u8().unwrap();
        assert!(matches!(r.finish(), Err(WireError::TrailingBytes)));
    }
}
