//! TCP framing: a 16-byte little-endian header `[src][dst][tag][len]`
//! followed by `len` payload bytes.

use std::io::{self, Read, Write};

use super::Tag;
use crate::error::{Error, Result};

pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub src: u32,
    pub dst: u32,
    pub tag: Tag,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn header(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0..4].copy_from_slice(&self.src.to_le_bytes());
        h[4..8].copy_from_slice(&self.dst.to_le_bytes());
        h[8..12].copy_from_slice(&self.tag.to_le_bytes());
        h[12..16].copy_from_slice(&(self.payload.len() as u32).to_le_bytes());
        h
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.header());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::MalformedPayload("frame shorter than header".into()));
        }
        let (src, dst, tag, len) = parse_header(bytes[..HEADER_LEN].try_into().unwrap());
        let body = &bytes[HEADER_LEN..];
        if body.len() != len {
            return Err(Error::MalformedPayload(format!(
                "frame declares {len} payload bytes, has {}",
                body.len()
            )));
        }
        Ok(Self {
            src,
            dst,
            tag,
            payload: body.to_vec(),
        })
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(&self.encode())
    }

    /// Reads one frame. `Ok(None)` on a clean end of stream.
    pub fn read_from(r: &mut impl Read) -> io::Result<Option<Self>> {
        let mut header = [0u8; HEADER_LEN];
        match r.read_exact(&mut header) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e),
        }
        let (src, dst, tag, len) = parse_header(&header);
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload)?;
        Ok(Some(Self {
            src,
            dst,
            tag,
            payload,
        }))
    }
}

fn parse_header(h: &[u8; HEADER_LEN]) -> (u32, u32, Tag, usize) {
    let word = |i: usize| u32::from_le_bytes(h[i..i + 4].try_into().unwrap());
    (word(0), word(4), word(8), word(12) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_bit_exact() {
        let m = Message {
            src: 1,
            dst: 2,
            tag: 0x0102_0304,
            payload: vec![9, 8, 7],
        };
        assert_eq!(
            m.encode(),
            vec![1, 0, 0, 0, 2, 0, 0, 0, 4, 3, 2, 1, 3, 0, 0, 0, 9, 8, 7]
        );
        assert_eq!(Message::decode(&m.encode()).unwrap(), m);
    }

    #[test]
    fn stream_roundtrip_and_eof() {
        let a = Message {
            src: 0,
            dst: 3,
            tag: 7,
            payload: vec![],
        };
        let b = Message {
            src: 3,
            dst: 0,
            tag: 8,
            payload: vec![1; 40],
        };
        let mut buf = Vec::new();
        a.write_to(&mut buf).unwrap();
        b.write_to(&mut buf).unwrap();
        let mut r = &buf[..];
        assert_eq!(Message::read_from(&mut r).unwrap(), Some(a));
        assert_eq!(Message::read_from(&mut r).unwrap(), Some(b));
        assert_eq!(Message::read_from(&mut r).unwrap(), None);
    }

    #[test]
    fn truncated_frame_is_rejected() {
        assert!(Message::decode(&[0; 10]).is_err());
        let mut bytes = Message {
            src: 0,
            dst: 0,
            tag: 0,
            payload: vec![1, 2],
        }
        .encode();
        bytes.pop();
        assert!(Message::decode(&bytes).is_err());
    }
}
