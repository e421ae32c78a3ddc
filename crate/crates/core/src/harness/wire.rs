//! Binary message format shared by every transport.
//!
//! ```text
//! frame   = len:u32be body                (len = byte length of body)
//! body    = version:u8 kind:u8 tag:u64be field*
//! field   = len:u32be magnitude           (big-endian unsigned, no leading zeros)
//! point   = field(flag) [field(x) field(y)]   flag 0 = infinity, 1 = affine
//! ```
//!
//! Fields run to the end of the body. Payload layouts per kind:
//!
//! | kind        | fields                          |
//! |-------------|---------------------------------|
//! | `SM_Q1`     | N, a, b, point P, c1, r1, r2    |
//! | `SM_Q2`     | N, a, b, point P, c2            |
//! | `SM_RESP`   | point Q1, point Q3 (from U1) or point Q2 (from U2) |
//! | `PAIR_Q`    | point left, point right         |
//! | `PAIR_RESP` | c0, c1                          |
//! | `ERROR`     | code                            |

use std::io::{self, Read, Write};

use num_bigint::BigUint;
use num_traits::Zero;
use thiserror::Error;

use crate::algebra::{Fp2Element, Modulus};
use crate::curve::Point;
use crate::pairing::GtElement;

pub const WIRE_VERSION: u8 = 1;

/// Largest accepted body. Generous for 512-bit parameters.
pub const MAX_BODY_LEN: u32 = 1 << 20;

const HEADER_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Kind {
    SmQ1 = 1,
    SmQ2 = 2,
    SmResp = 3,
    PairQ = 4,
    PairResp = 5,
    Error = 6,
}

impl Kind {
    pub fn from_byte(b: u8) -> Option<Kind> {
        Some(match b {
            1 => Kind::SmQ1,
            2 => Kind::SmQ2,
            3 => Kind::SmResp,
            4 => Kind::PairQ,
            5 => Kind::PairResp,
            6 => Kind::Error,
            _ => return None,
        })
    }
}

/// Codes carried by `ERROR` replies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ErrorCode {
    Malformed = 1,
    ComputationFailed = 2,
    UnsupportedVersion = 3,
    UnexpectedKind = 4,
}

impl ErrorCode {
    pub fn from_u64(v: u64) -> Option<ErrorCode> {
        Some(match v {
            1 => ErrorCode::Malformed,
            2 => ErrorCode::ComputationFailed,
            3 => ErrorCode::UnsupportedVersion,
            4 => ErrorCode::UnexpectedKind,
            _ => return None,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated message")]
    Truncated,
    #[error("length prefix {declared} does not match body of {actual} bytes")]
    LengthMismatch { declared: u32, actual: usize },
    #[error("body of {0} bytes exceeds the limit")]
    TooLarge(u32),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown kind {0}")]
    UnknownKind(u8),
    #[error("non-canonical integer encoding")]
    NonCanonical,
    #[error("bad point flag {0}")]
    BadPointFlag(u8),
    #[error("value out of range for field {0}")]
    OutOfRange(&'static str),
    #[error("expected {expected} fields, got {got}")]
    FieldCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub version: u8,
    pub kind: Kind,
    pub tag: u64,
    pub fields: Vec<Vec<u8>>,
}

impl WireMessage {
    pub fn new(kind: Kind, tag: u64) -> WireMessage {
        WireMessage {
            version: WIRE_VERSION,
            kind,
            tag,
            fields: Vec::new(),
        }
    }

    pub fn error(tag: u64, code: ErrorCode) -> WireMessage {
        WireMessage::new(Kind::Error, tag).with_uint(&BigUint::from(code as u8))
    }

    pub fn with_uint(mut self, v: &BigUint) -> WireMessage {
        self.push_uint(v);
        self
    }

    pub fn push_uint(&mut self, v: &BigUint) {
        self.fields.push(if v.is_zero() { Vec::new() } else { v.to_bytes_be() });
    }

    pub fn push_point(&mut self, p: &Point) {
        match p {
            Point::Infinity => self.push_uint(&BigUint::zero()),
            Point::Affine { x, y } => {
                self.push_uint(&BigUint::from(1u8));
                self.push_uint(x.residue());
                self.push_uint(y.residue());
            }
        }
    }

    pub fn with_point(mut self, p: &Point) -> WireMessage {
        self.push_point(p);
        self
    }

    pub fn push_gt(&mut self, v: &GtElement) {
        self.push_uint(v.value().c0_uint());
        self.push_uint(v.value().c1_uint());
    }

    /// Body with its 4-byte length prefix.
    pub fn encode(&self) -> Vec<u8> {
        let body_len = HEADER_LEN + self.fields.iter().map(|f| 4 + f.len()).sum::<usize>();
        let mut out = Vec::with_capacity(4 + body_len);
        out.extend_from_slice(&(body_len as u32).to_be_bytes());
        out.push(self.version);
        out.push(self.kind as u8);
        out.extend_from_slice(&self.tag.to_be_bytes());
        for f in &self.fields {
            out.extend_from_slice(&(f.len() as u32).to_be_bytes());
            out.extend_from_slice(f);
        }
        out
    }

    /// Parses a complete frame, length prefix included.
    pub fn decode(frame: &[u8]) -> Result<WireMessage, WireError> {
        if frame.len() < 4 {
            return Err(WireError::Truncated);
        }
        let declared = u32::from_be_bytes(frame[..4].try_into().unwrap());
        let body = &frame[4..];
        if declared as usize != body.len() {
            return Err(WireError::LengthMismatch {
                declared,
                actual: body.len(),
            });
        }
        WireMessage::decode_body(body)
    }

    pub fn decode_body(body: &[u8]) -> Result<WireMessage, WireError> {
        if body.len() > MAX_BODY_LEN as usize {
            return Err(WireError::TooLarge(body.len() as u32));
        }
        if body.len() < HEADER_LEN {
            return Err(WireError::Truncated);
        }
        if body[0] != WIRE_VERSION {
            return Err(WireError::UnsupportedVersion(body[0]));
        }
        let kind = Kind::from_byte(body[1]).ok_or(WireError::UnknownKind(body[1]))?;
        let tag = u64::from_be_bytes(body[2..10].try_into().unwrap());
        let mut rest = &body[HEADER_LEN..];
        let mut fields = Vec::new();
        while !rest.is_empty() {
            if rest.len() < 4 {
                return Err(WireError::Truncated);
            }
            let len = u32::from_be_bytes(rest[..4].try_into().unwrap()) as usize;
            rest = &rest[4..];
            if rest.len() < len {
                return Err(WireError::Truncated);
            }
            let bytes = &rest[..len];
            if bytes.first() == Some(&0) {
                return Err(WireError::NonCanonical);
            }
            fields.push(bytes.to_vec());
            rest = &rest[len..];
        }
        Ok(WireMessage {
            version: body[0],
            kind,
            tag,
            fields,
        })
    }

    pub fn reader(&self) -> FieldReader<'_> {
        FieldReader {
            fields: &self.fields,
            pos: 0,
        }
    }

    /// The tag of a frame, readable even when the rest does not parse.
    pub fn peek_tag(frame: &[u8]) -> u64 {
        frame
            .get(6..14)
            .map(|b| u64::from_be_bytes(b.try_into().unwrap()))
            .unwrap_or(0)
    }
}

/// Sequential typed access to a message's fields.
pub struct FieldReader<'a> {
    fields: &'a [Vec<u8>],
    pos: usize,
}

impl FieldReader<'_> {
    fn next_raw(&mut self) -> Result<&[u8], WireError> {
        let f = self.fields.get(self.pos).ok_or(WireError::FieldCount {
            expected: self.pos + 1,
            got: self.fields.len(),
        })?;
        self.pos += 1;
        Ok(f)
    }

    pub fn uint(&mut self) -> Result<BigUint, WireError> {
        Ok(BigUint::from_bytes_be(self.next_raw()?))
    }

    /// An integer that must be reduced modulo `m`.
    pub fn residue(&mut self, m: &Modulus, name: &'static str) -> Result<BigUint, WireError> {
        let v = self.uint()?;
        if &v >= m.value() {
            return Err(WireError::OutOfRange(name));
        }
        Ok(v)
    }

    /// A point with coordinates in `Z_m`. Curve membership is not checked.
    pub fn point(&mut self, m: &Modulus) -> Result<Point, WireError> {
        let flag = self.uint()?;
        if flag.is_zero() {
            return Ok(Point::Infinity);
        }
        if flag != BigUint::from(1u8) {
            let byte = flag.to_bytes_be().last().copied().unwrap_or(0xff);
            return Err(WireError::BadPointFlag(byte));
        }
        let x = m.element(self.residue(m, "x")?).expect("checked range");
        let y = m.element(self.residue(m, "y")?).expect("checked range");
        Ok(Point::affine(x, y).expect("same ring"))
    }

    pub fn gt(&mut self, p: &Modulus) -> Result<GtElement, WireError> {
        let c0 = self.residue(p, "c0")?;
        let c1 = self.residue(p, "c1")?;
        Ok(GtElement::from_fp2(Fp2Element::from_parts(p, c0, c1).expect("checked range")))
    }

    pub fn finish(&self) -> Result<(), WireError> {
        if self.pos != self.fields.len() {
            return Err(WireError::FieldCount {
                expected: self.pos,
                got: self.fields.len(),
            });
        }
        Ok(())
    }
}

/// Reads one frame, length prefix included. `Ok(None)` on clean EOF.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let n = u32::from_be_bytes(len);
    if n > MAX_BODY_LEN {
        return Err(io::Error::new(io::ErrorKind::InvalidData, WireError::TooLarge(n)));
    }
    let mut frame = vec![0u8; 4 + n as usize];
    frame[..4].copy_from_slice(&len);
    r.read_exact(&mut frame[4..])?;
    Ok(Some(frame))
}

pub fn write_frame<W: Write>(w: &mut W, frame: &[u8]) -> io::Result<()> {
    w.write_all(frame)?;
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_encoding() {
        let m = WireMessage::new(Kind::PairResp, 0x0102030405060708)
            .with_uint(&BigUint::from(0x01ffu32))
            .with_uint(&BigUint::zero());
        let bytes = m.encode();
        assert_eq!(
            bytes,
            vec![
                0, 0, 0, 20, // length
                1, 5, // version, kind
                1, 2, 3, 4, 5, 6, 7, 8, // tag
                0, 0, 0, 2, 0x01, 0xff, // 0x01ff
                0, 0, 0, 0, // zero
            ]
        );
        assert_eq!(WireMessage::decode(&bytes).unwrap(), m);
    }

    #[test]
    fn points_encode_with_flag() {
        let md = Modulus::composite(BigUint::from(1000u32)).unwrap();
        let p = Point::affine(md.from_u64(3), md.from_u64(256)).unwrap();
        let m = WireMessage::new(Kind::SmResp, 1).with_point(&Point::Infinity).with_point(&p);
        let enc = m.encode();
        assert_eq!(&enc[14..], &[0, 0, 0, 0, 0, 0, 0, 1, 1, 0, 0, 0, 1, 3, 0, 0, 0, 2, 1, 0]);
        let back = WireMessage::decode(&enc).unwrap();
        let mut rd = back.reader();
        assert_eq!(rd.point(&md).unwrap(), Point::Infinity);
        assert_eq!(rd.point(&md).unwrap(), p);
        rd.finish().unwrap();
    }

    #[test]
    fn rejects_bad_frames() {
        let good = WireMessage::new(Kind::SmQ1, 9).with_uint(&BigUint::from(7u8)).encode();
        let mut v2 = good.clone();
        v2[4] = 2;
        assert_eq!(WireMessage::decode(&v2), Err(WireError::UnsupportedVersion(2)));
        let mut kind = good.clone();
        kind[5] = 99;
        assert_eq!(WireMessage::decode(&kind), Err(WireError::UnknownKind(99)));
        let mut short = good.clone();
        short.pop();
        assert!(matches!(WireMessage::decode(&short), Err(WireError::LengthMismatch { .. })));
        let mut padded = good.clone();
        padded[3] += 1;
        padded.push(0);
        // field length 1 now followed by a stray byte
        assert!(WireMessage::decode(&padded).is_err());
        let lead_zero = [&[0u8, 0, 0, 15][..], &[1, 1], &[0; 8], &[0, 0, 0, 1, 0]].concat();
        assert_eq!(WireMessage::decode(&lead_zero), Err(WireError::NonCanonical));
        assert_eq!(WireMessage::decode(&[0, 0]), Err(WireError::Truncated));
        assert_eq!(WireMessage::peek_tag(&good), 9);
    }

    #[test]
    fn reader_range_checks() {
        let md = Modulus::composite(BigUint::from(100u32)).unwrap();
        let m = WireMessage::new(Kind::SmResp, 0)
            .with_uint(&BigUint::from(1u8))
            .with_uint(&BigUint::from(100u8))
            .with_uint(&BigUint::from(1u8));
        assert_eq!(m.reader().point(&md), Err(WireError::OutOfRange("x")));
        let m = WireMessage::new(Kind::SmResp, 0).with_uint(&BigUint::from(2u8));
        assert_eq!(m.reader().point(&md), Err(WireError::BadPointFlag(2)));
        let m = WireMessage::new(Kind::SmResp, 0).with_uint(&BigUint::from(1u8));
        assert!(matches!(m.reader().point(&md), Err(WireError::FieldCount { .. })));
    }

    #[test]
    fn frames_over_a_stream() {
        let a = WireMessage::new(Kind::PairQ, 1).with_uint(&BigUint::from(5u8)).encode();
        let b = WireMessage::error(2, ErrorCode::Malformed).encode();
        let stream = [a.clone(), b.clone()].concat();
        let mut cur = io::Cursor::new(stream);
        assert_eq!(read_frame(&mut cur).unwrap(), Some(a));
        assert_eq!(read_frame(&mut cur).unwrap(), Some(b));
        assert_eq!(read_frame(&mut cur).unwrap(), None);
    }

    proptest! {
        #[test]
        fn round_trip(kind in 1u8..=6, tag in any::<u64>(), values in proptest::collection::vec(any::<Vec<u8>>(), 0..8)) {
            let mut m = WireMessage::new(Kind::from_byte(kind).unwrap(), tag);
            for v in &values {
                m.push_uint(&BigUint::from_bytes_be(v));
            }
            let enc = m.encode();
            prop_assert_eq!(u32::from_be_bytes(enc[..4].try_into().unwrap()) as usize, enc.len() - 4);
            let back = WireMessage::decode(&enc).unwrap();
            prop_assert_eq!(&back, &m);
            for (f, v) in back.fields.iter().zip(&values) {
                prop_assert_eq!(BigUint::from_bytes_be(f), BigUint::from_bytes_be(v));
            }
            prop_assert_eq!(back.encode(), enc);
        }

        #[test]
        fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let _ = WireMessage::decode(&bytes);
        }
    }
}
