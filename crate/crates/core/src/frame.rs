//! Length-prefixed pub/sub frame codec.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MDTF" | version: u8 = 1 | topic_len: u16 | topic (UTF-8)
//!        | publish_timestamp_ns: u64 | payload_len: u32 | payload
//! ```

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"MDTF";
pub const VERSION: u8 = 1;
pub const MAX_TOPIC_LEN: usize = 255;
pub const MAX_PAYLOAD_LEN: usize = 16 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported frame version {0}")]
    BadVersion(u8),
    #[error("topic length {0} outside 1..=255")]
    BadTopicLength(usize),
    #[error("topic is not valid UTF-8")]
    BadTopicEncoding,
    #[error("payload length {0} exceeds limit")]
    PayloadTooLarge(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub topic: String,
    pub publish_timestamp_ns: u64,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(topic: impl Into<String>, publish_timestamp_ns: u64, payload: Vec<u8>) -> Result<Self, FrameError> {
        let topic = topic.into();
        check_topic(&topic)?;
        if payload.len() > MAX_PAYLOAD_LEN {
            return Err(FrameError::PayloadTooLarge(payload.len()));
        }
        Ok(Self {
            topic,
            publish_timestamp_ns,
            payload,
        })
    }

    pub fn encoded_len(&self) -> usize {
        4 + 1 + 2 + self.topic.len() + 8 + 4 + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.topic.len() as u16).to_le_bytes());
        out.extend_from_slice(self.topic.as_bytes());
        out.extend_from_slice(&self.publish_timestamp_ns.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
    }

    /// Decode one frame from the front of `buf`.
    ///
    /// `Ok(None)` means more bytes are needed; `Ok(Some((frame, n)))`
    /// consumed `n` bytes. Header fields are validated as soon as they are
    /// available, so garbage is rejected without waiting for a full frame.
    pub fn decode(buf: &[u8]) -> Result<Option<(Frame, usize)>, FrameError> {
        if buf.len() >= 4 && buf[..4] != MAGIC {
            return Err(FrameError::BadMagic([buf[0], buf[1], buf[2], buf[3]]));
        }
        if buf.len() < 5 {
            return Ok(None);
        }
        if buf[4] != VERSION {
            return Err(FrameError::BadVersion(buf[4]));
        }
        if buf.len() < 7 {
            return Ok(None);
        }
        let topic_len = usize::from(u16::from_le_bytes([buf[5], buf[6]]));
        if topic_len == 0 || topic_len > MAX_TOPIC_LEN {
            return Err(FrameError::BadTopicLength(topic_len));
        }
        let ts_at = 7 + topic_len;
        let len_at = ts_at + 8;
        let payload_at = len_at + 4;
        if buf.len() < payload_at {
            return Ok(None);
        }
        let topic = core::str::from_utf8(&buf[7..ts_at]).map_err(|_| FrameError::BadTopicEncoding)?;
        let ts = u64::from_le_bytes(buf[ts_at..len_at].try_into().expect("8 bytes"));
        let payload_len = u32::from_le_bytes(buf[len_at..payload_at].try_into().expect("4 bytes")) as usize;
        if payload_len > MAX_PAYLOAD_LEN {
            return Err(FrameError::PayloadTooLarge(payload_len));
        }
        let end = payload_at + payload_len;
        if buf.len() < end {
            return Ok(None);
        }
        let frame = Frame {
            topic: String::from(topic),
            publish_timestamp_ns: ts,
            payload: buf[payload_at..end].to_vec(),
        };
        Ok(Some((frame, end)))
    }
}

fn check_topic(topic: &str) -> Result<(), FrameError> {
    if topic.is_empty() || topic.len() > MAX_TOPIC_LEN {
        return Err(FrameError::BadTopicLength(topic.len()));
    }
    Ok(())
}

/// Incremental decoder for a byte stream carrying back-to-back frames.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    failed: Option<FrameError>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete frame, `Ok(None)` if more bytes are needed. After an
    /// error the decoder stays failed; the connection must be closed.
    pub fn next_frame(&mut self) -> Result<Option<Frame>, FrameError> {
        if let Some(e) = &self.failed {
            return Err(e.clone());
        }
        match Frame::decode(&self.buf) {
            Ok(Some((frame, used))) => {
                self.buf.drain(..used);
                Ok(Some(frame))
            }
            Ok(None) => Ok(None),
            Err(e) => {
                self.failed = Some(e.clone());
                Err(e)
            }
        }
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn known_layout() {
        let f = Frame::new("ab", 0x0102, vec![9, 8]).unwrap();
        assert_eq!(
            f.encode(),
            vec![b'M', b'D', b'T', b'F', 1, 2, 0, b'a', b'b', 2, 1, 0, 0, 0, 0, 0, 0, 2, 0, 0, 0, 9, 8]
        );
    }

    #[test]
    fn every_prefix_needs_more() {
        let bytes = Frame::new("dt/prediction", 42, vec![1, 2, 3, 4]).unwrap().encode();
        for cut in 0..bytes.len() {
            assert_eq!(Frame::decode(&bytes[..cut]), Ok(None), "cut at {cut}");
        }
        let (f, used) = Frame::decode(&bytes).unwrap().unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(f.topic, "dt/prediction");
    }

    #[test]
    fn oversized_topic_length_is_protocol_error() {
        let mut bytes = Frame::new("t", 0, vec![]).unwrap().encode();
        bytes[5..7].copy_from_slice(&300u16.to_le_bytes());
        assert_eq!(Frame::decode(&bytes), Err(FrameError::BadTopicLength(300)));
        bytes[5..7].copy_from_slice(&0u16.to_le_bytes());
        assert_eq!(Frame::decode(&bytes), Err(FrameError::BadTopicLength(0)));
    }

    #[test]
    fn bad_magic_and_version() {
        assert!(matches!(Frame::decode(b"XXXX\x01"), Err(FrameError::BadMagic(_))));
        assert_eq!(Frame::decode(b"MDTF\x02"), Err(FrameError::BadVersion(2)));
    }

    #[test]
    fn topic_validation_on_construction() {
        assert!(Frame::new("", 0, vec![]).is_err());
        assert!(Frame::new("x".repeat(256), 0, vec![]).is_err());
        assert!(Frame::new("x".repeat(255), 0, vec![]).is_ok());
    }

    #[test]
    fn decoder_handles_split_stream() {
        let a = Frame::new("ae/samples", 1, vec![7; 100]).unwrap();
        let b = Frame::new("mc/commands", 2, b"F50.0".to_vec()).unwrap();
        let mut bytes = a.encode();
        bytes.extend(b.encode());
        let mut dec = FrameDecoder::new();
        let mut got = Vec::new();
        for chunk in bytes.chunks(3) {
            dec.feed(chunk);
            while let Some(f) = dec.next_frame().unwrap() {
                got.push(f);
            }
        }
        assert_eq!(got, vec![a, b]);
        assert_eq!(dec.buffered(), 0);
    }
}
