//! Wire framing and transcript serialization.
//!
//! Frame layout: payload length as a big-endian `u32`, one kind byte, then
//! the payload. An authentication tag field is reserved between the kind and
//! the payload for future versions; in version 1 it is empty (the classical
//! channel is assumed authenticated). Multi-byte integers inside payloads
//! are little-endian and bit fields are packed LSB-first within bytes.
//!
//! Transcript files start with the magic bytes `QKDT` and a big-endian `u16`
//! version, followed by the exchanged messages in order, each prefixed with
//! one direction byte (0 = Alice to Bob, 1 = Bob to Alice).

use std::io::{Read, Write};

use super::SessionError;

pub const TRANSCRIPT_MAGIC: [u8; 4] = *b"QKDT";
pub const PROTOCOL_VERSION: u16 = 1;

/// Classical message types of the post-processing session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageKind {
    BasisAnnounce = 1,
    TestReveal = 2,
    TestVerdict = 3,
    PairingSeed = 4,
    PairParity = 5,
    KeepMask = 6,
    PecGrouping = 7,
    CodewordMask = 8,
    Abort = 9,
    Done = 10,
}

impl MessageKind {
    pub fn from_u8(byte: u8) -> Option<Self> {
        Some(match byte {
            1 => MessageKind::BasisAnnounce,
            2 => MessageKind::TestReveal,
            3 => MessageKind::TestVerdict,
            4 => MessageKind::PairingSeed,
            5 => MessageKind::PairParity,
            6 => MessageKind::KeepMask,
            7 => MessageKind::PecGrouping,
            8 => MessageKind::CodewordMask,
            9 => MessageKind::Abort,
            10 => MessageKind::Done,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            MessageKind::BasisAnnounce => "BASIS_ANNOUNCE",
            MessageKind::TestReveal => "TEST_REVEAL",
            MessageKind::TestVerdict => "TEST_VERDICT",
            MessageKind::PairingSeed => "PAIRING_SEED",
            MessageKind::PairParity => "PAIR_PARITY",
            MessageKind::KeepMask => "KEEP_MASK",
            MessageKind::PecGrouping => "PEC_GROUPING",
            MessageKind::CodewordMask => "CODEWORD_MASK",
            MessageKind::Abort => "ABORT",
            MessageKind::Done => "DONE",
        }
    }
}

/// One framed message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub kind: MessageKind,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn new(kind: MessageKind, payload: Vec<u8>) -> Self {
        assert!(payload.len() < u32::MAX as usize, "payload too large to frame");
        Self { kind, payload }
    }
}

/// Who sent a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Direction {
    AliceToBob = 0,
    BobToAlice = 1,
}

/// Ordered, byte-exact record of a session.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SessionTranscript {
    pub entries: Vec<(Direction, Message)>,
}

pub fn write_message<W: Write>(writer: &mut W, message: &Message) -> std::io::Result<()> {
    writer.write_all(&(message.payload.len() as u32).to_be_bytes())?;
    writer.write_all(&[message.kind as u8])?;
    writer.write_all(&message.payload)?;
    Ok(())
}

pub fn read_message<R: Read>(reader: &mut R) -> Result<Message, SessionError> {
    let mut header = [0u8; 5];
    reader.read_exact(&mut header).map_err(|_| SessionError::Truncated)?;
    let len = u32::from_be_bytes([header[0], header[1], header[2], header[3]]) as usize;
    let kind = MessageKind::from_u8(header[4])
        .ok_or_else(|| SessionError::MalformedFrame(format!("unknown kind byte {}", header[4])))?;
    let mut payload = vec![0u8; len];
    reader.read_exact(&mut payload).map_err(|_| SessionError::Truncated)?;
    Ok(Message { kind, payload })
}

impl SessionTranscript {
    pub fn write_to<W: Write>(&self, writer: &mut W) -> std::io::Result<()> {
        writer.write_all(&TRANSCRIPT_MAGIC)?;
        writer.write_all(&PROTOCOL_VERSION.to_be_bytes())?;
        for (direction, message) in &self.entries {
            writer.write_all(&[*direction as u8])?;
            write_message(writer, message)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(reader: &mut R) -> Result<Self, SessionError> {
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic).map_err(|_| SessionError::Truncated)?;
        if magic != TRANSCRIPT_MAGIC {
            return Err(SessionError::MalformedFrame("bad transcript magic".to_string()));
        }
        let mut version = [0u8; 2];
        reader.read_exact(&mut version).map_err(|_| SessionError::Truncated)?;
        let version = u16::from_be_bytes(version);
        if version != PROTOCOL_VERSION {
            return Err(SessionError::VersionMismatch(version));
        }
        let mut entries = Vec::new();
        loop {
            let mut direction = [0u8; 1];
            match reader.read(&mut direction) {
                Ok(0) => break,
                Ok(1) => {}
                Ok(_) => unreachable!(),
                Err(e) => return Err(SessionError::Io(e.to_string())),
            }
            let direction = match direction[0] {
                0 => Direction::AliceToBob,
                1 => Direction::BobToAlice,
                other => {
                    return Err(SessionError::MalformedFrame(format!(
                        "bad direction byte {other}"
                    )))
                }
            };
            entries.push((direction, read_message(reader)?));
        }
        Ok(Self { entries })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SessionError> {
        Self::read_from(&mut std::io::Cursor::new(bytes))
    }
}

// ---- payload helpers ------------------------------------------------------

/// Pack bits LSB-first within bytes.
pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &bit) in bits.iter().enumerate() {
        if bit {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub fn unpack_bits(bytes: &[u8], count: usize) -> Result<Vec<bool>, SessionError> {
    if bytes.len() != count.div_ceil(8) {
        return Err(SessionError::MalformedFrame(format!(
            "bit field length {} does not hold {count} bits",
            bytes.len()
        )));
    }
    Ok((0..count).map(|i| bytes[i / 8] & (1 << (i % 8)) != 0).collect())
}

/// `u32` count prefix followed by packed bits.
pub fn encode_bit_field(bits: &[bool]) -> Vec<u8> {
    let mut payload = (bits.len() as u32).to_le_bytes().to_vec();
    payload.extend(pack_bits(bits));
    payload
}

pub fn decode_bit_field(payload: &[u8]) -> Result<Vec<bool>, SessionError> {
    if payload.len() < 4 {
        return Err(SessionError::MalformedFrame("bit field missing count".to_string()));
    }
    let count = u32::from_le_bytes([payload[0], payload[1], payload[2], payload[3]]) as usize;
    unpack_bits(&payload[4..], count)
}

/// `u32` count prefix followed by 2-bit values packed LSB-first.
pub fn encode_two_bit_field(values: &[u8]) -> Vec<u8> {
    let mut payload = (values.len() as u32).to_le_bytes().to_vec();
    let mut packed = vec![0u8; values.len().div_ceil(4)];
    for (i, &v) in values.iter().enumerate() {
        debug_assert!(v < 4);
        packed[i / 4] |= (v & 0b11) << ((i % 4) * 2);
    }
    payload.extend(packed);
    payload
}

pub fn decode_two_bit_field(payload: &[u8]) -> Result<Vec<u8>, SessionError> {
    if payload.len() < 4 {
        return Err(SessionError::MalformedFrame("2-bit field missing count".to_string()));
    }
    let count = u32::from_le_bytes([payload[0], payload[1], payload[2], payload[3]]) as usize;
    let body = &payload[4..];
    if body.len() != count.div_ceil(4) {
        return Err(SessionError::MalformedFrame(format!(
            "2-bit field length {} does not hold {count} values",
            body.len()
        )));
    }
    Ok((0..count).map(|i| (body[i / 4] >> ((i % 4) * 2)) & 0b11).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_roundtrip() {
        let message = Message::new(MessageKind::PairParity, vec![1, 2, 3, 255]);
        let mut buf = Vec::new();
        write_message(&mut buf, &message).unwrap();
        assert_eq!(buf.len(), 4 + 1 + 4);
        assert_eq!(&buf[..4], &4u32.to_be_bytes());
        let parsed = read_message(&mut std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(parsed, message);
    }

    #[test]
    fn rejects_unknown_kind() {
        let mut buf = Vec::new();
        buf.extend(0u32.to_be_bytes());
        buf.push(99);
        assert!(matches!(
            read_message(&mut std::io::Cursor::new(&buf)),
            Err(SessionError::MalformedFrame(_))
        ));
    }

    #[test]
    fn truncated_payload() {
        let mut buf = Vec::new();
        buf.extend(8u32.to_be_bytes());
        buf.push(MessageKind::Done as u8);
        buf.extend([1, 2, 3]); // three of eight bytes
        assert!(matches!(
            read_message(&mut std::io::Cursor::new(&buf)),
            Err(SessionError::Truncated)
        ));
    }

    #[test]
    fn transcript_roundtrip() {
        let transcript = SessionTranscript {
            entries: vec![
                (
                    Direction::AliceToBob,
                    Message::new(MessageKind::PairingSeed, 7u64.to_le_bytes().to_vec()),
                ),
                (
                    Direction::BobToAlice,
                    Message::new(MessageKind::Done, 3u32.to_le_bytes().to_vec()),
                ),
            ],
        };
        let bytes = transcript.to_bytes();
        assert_eq!(&bytes[..4], b"QKDT");
        let parsed = SessionTranscript::from_bytes(&bytes).unwrap();
        assert_eq!(parsed, transcript);
    }

    #[test]
    fn bit_fields_roundtrip() {
        let bits: Vec<bool> = (0..19).map(|i| i % 3 == 0).collect();
        let decoded = decode_bit_field(&encode_bit_field(&bits)).unwrap();
        assert_eq!(decoded, bits);

        let values: Vec<u8> = (0..13).map(|i| (i % 4) as u8).collect();
        let decoded = decode_two_bit_field(&encode_two_bit_field(&values)).unwrap();
        assert_eq!(decoded, values);
    }
}
