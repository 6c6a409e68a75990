//! Length-prefixed frames and payload layouts.
//!
//! Frame: `len: u32 BE | version: u8 | kind: u8 | payload[len] | crc32(payload): u32 BE`.
//! An empty payload gives a 10-byte frame.
//!
//! Signature payload, all integers and floats little-endian:
//!
//! ```text
//! site_id_len: u16 | site_id: utf8
//! task: u8 (0 regression, 1 classification) | n_classes: u32
//! transform: u8 (0 kmeans, 1 kdtree, 2 rptree) | transform_param: u64
//! rng_seed: u64 | rng_stream: u64
//! d: u32 | rep_count: u32
//! rep_count × { centroid: d × f64 | response: f64 | weight: u64 }
//! ```
//!
//! Hello payload: `site_id_len: u16 | site_id | d: u32 | task: u8 | n_classes: u32 | n: u64`.
//! ModelPush payload: the model artifact JSON. Error payload: a UTF-8 message.

use thiserror::Error;

use crate::dml::{Rep, Signature, TransformDescriptor};
use crate::numerics::{RngHandle, Task};

pub const WIRE_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 6;
pub const TRAILER_LEN: usize = 4;
pub const MAX_PAYLOAD: usize = 1 << 30;

/// Kind codes sit at pairwise Hamming distance 4, so up to three flipped
/// bits in the kind byte never turn one valid kind into another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageKind {
    Hello = 0x11,
    SignaturePush = 0x22,
    ModelPush = 0x44,
    Ack = 0x88,
    Error = 0xF0,
}

impl MessageKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0x11 => Self::Hello,
            0x22 => Self::SignaturePush,
            0x44 => Self::ModelPush,
            0x88 => Self::Ack,
            0xF0 => Self::Error,
            _ => return None,
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("checksum mismatch: frame says {expected:08x}, payload hashes to {found:08x}")]
    Crc { expected: u32, found: u32 },
    #[error("unsupported wire version {0}")]
    Version(u8),
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("payload of {0} bytes exceeds the frame limit")]
    TooLarge(usize),
    #[error("malformed payload: {0}")]
    Payload(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub version: u8,
    pub kind: MessageKind,
    pub payload: Vec<u8>,
}

impl WireMessage {
    pub fn new(kind: MessageKind, payload: Vec<u8>) -> Self {
        Self {
            version: WIRE_VERSION,
            kind,
            payload,
        }
    }

    pub fn checksum(&self) -> u32 {
        crc32fast::hash(&self.payload)
    }

    pub fn frame_len(&self) -> usize {
        HEADER_LEN + self.payload.len() + TRAILER_LEN
    }
}

pub fn encode(msg: &WireMessage) -> Result<Vec<u8>, WireError> {
    if msg.payload.len() > MAX_PAYLOAD {
        return Err(WireError::TooLarge(msg.payload.len()));
    }
    let mut out = Vec::with_capacity(msg.frame_len());
    out.extend_from_slice(&(msg.payload.len() as u32).to_be_bytes());
    out.push(msg.version);
    out.push(msg.kind as u8);
    out.extend_from_slice(&msg.payload);
    out.extend_from_slice(&msg.checksum().to_be_bytes());
    Ok(out)
}

/// Total frame length announced by a frame's first four bytes.
pub fn announced_len(prefix: &[u8; 4]) -> Result<usize, WireError> {
    let len = u32::from_be_bytes(*prefix) as usize;
    if len > MAX_PAYLOAD {
        return Err(WireError::TooLarge(len));
    }
    Ok(HEADER_LEN + len + TRAILER_LEN)
}

/// Decodes one frame from the front of `bytes`, returning the message and
/// the number of bytes consumed.
pub fn decode(bytes: &[u8]) -> Result<(WireMessage, usize), WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::Truncated {
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    let total = announced_len(&[bytes[0], bytes[1], bytes[2], bytes[3]])?;
    if bytes.len() < total {
        return Err(WireError::Truncated {
            needed: total,
            available: bytes.len(),
        });
    }
    let version = bytes[4];
    if version != WIRE_VERSION {
        return Err(WireError::Version(version));
    }
    let kind = MessageKind::from_byte(bytes[5]).ok_or(WireError::UnknownKind(bytes[5]))?;
    let payload = &bytes[HEADER_LEN..total - TRAILER_LEN];
    let expected = u32::from_be_bytes(bytes[total - 4..total].try_into().unwrap());
    let found = crc32fast::hash(payload);
    if expected != found {
        return Err(WireError::Crc { expected, found });
    }
    Ok((
        WireMessage {
            version,
            kind,
            payload: payload.to_vec(),
        },
        total,
    ))
}

/// Decodes a buffer that must hold exactly one frame.
pub fn decode_exact(bytes: &[u8]) -> Result<WireMessage, WireError> {
    let (msg, used) = decode(bytes)?;
    if used != bytes.len() {
        return Err(WireError::Payload(format!("{} trailing bytes after frame", bytes.len() - used)));
    }
    Ok(msg)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hello {
    pub site_id: String,
    pub dim: usize,
    pub task: Task,
    pub n: u64,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            WireError::Payload(format!("payload ends at byte {}, wanted {} more", self.buf.len(), n))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String, WireError> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| WireError::Payload("site id is not utf-8".into()))
    }
    fn finish(&self) -> Result<(), WireError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(WireError::Payload(format!("{} unread payload bytes", self.buf.len() - self.pos)))
        }
    }
}

fn put_string(out: &mut Vec<u8>, s: &str) -> Result<(), WireError> {
    let len = u16::try_from(s.len()).map_err(|_| WireError::Payload("site id longer than 65535 bytes".into()))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_task(out: &mut Vec<u8>, task: Task) {
    match task {
        Task::Regression => {
            out.push(0);
            out.extend_from_slice(&0u32.to_le_bytes());
        }
        Task::Classification { n_classes } => {
            out.push(1);
            out.extend_from_slice(&(n_classes as u32).to_le_bytes());
        }
    }
}

fn get_task(r: &mut Reader) -> Result<Task, WireError> {
    let tag = r.u8()?;
    let c = r.u32()? as usize;
    match tag {
        0 => Ok(Task::Regression),
        1 => Ok(Task::Classification { n_classes: c }),
        t => Err(WireError::Payload(format!("unknown task tag {t}"))),
    }
}

pub fn encode_hello(h: &Hello) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::new();
    put_string(&mut out, &h.site_id)?;
    out.extend_from_slice(&(h.dim as u32).to_le_bytes());
    put_task(&mut out, h.task);
    out.extend_from_slice(&h.n.to_le_bytes());
    Ok(out)
}

pub fn decode_hello(payload: &[u8]) -> Result<Hello, WireError> {
    let mut r = Reader { buf: payload, pos: 0 };
    let site_id = r.string()?;
    let dim = r.u32()? as usize;
    let task = get_task(&mut r)?;
    let n = r.u64()?;
    r.finish()?;
    Ok(Hello { site_id, dim, task, n })
}

/// Bytes of the signature payload for `reps` reps of dimension `d` and a
/// site id of `id_len` bytes.
pub fn signature_payload_len(reps: usize, d: usize, id_len: usize) -> usize {
    2 + id_len + 5 + 9 + 16 + 8 + reps * (d + 2) * 8
}

pub fn encode_signature(sig: &Signature) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::with_capacity(signature_payload_len(sig.reps.len(), sig.dim, sig.site_id.len()));
    put_string(&mut out, &sig.site_id)?;
    put_task(&mut out, sig.task);
    let (tag, param) = match sig.transform {
        TransformDescriptor::KMeans { k } => (0u8, k),
        TransformDescriptor::KdTree { max_leaf } => (1, max_leaf),
        TransformDescriptor::RpTree { max_leaf } => (2, max_leaf),
    };
    out.push(tag);
    out.extend_from_slice(&(param as u64).to_le_bytes());
    out.extend_from_slice(&sig.rng.seed.to_le_bytes());
    out.extend_from_slice(&sig.rng.stream.to_le_bytes());
    out.extend_from_slice(&(sig.dim as u32).to_le_bytes());
    out.extend_from_slice(&(sig.reps.len() as u32).to_le_bytes());
    for r in &sig.reps {
        if r.centroid.len() != sig.dim {
            return Err(WireError::Payload("rep dimension differs from signature dimension".into()));
        }
        for v in &r.centroid {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&r.response.to_le_bytes());
        out.extend_from_slice(&r.weight.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_signature(payload: &[u8]) -> Result<Signature, WireError> {
    let mut r = Reader { buf: payload, pos: 0 };
    let site_id = r.string()?;
    let task = get_task(&mut r)?;
    let tag = r.u8()?;
    let param = r.u64()? as usize;
    let transform = match tag {
        0 => TransformDescriptor::KMeans { k: param },
        1 => TransformDescriptor::KdTree { max_leaf: param },
        2 => TransformDescriptor::RpTree { max_leaf: param },
        t => return Err(WireError::Payload(format!("unknown transform tag {t}"))),
    };
    let rng = RngHandle::with_stream(r.u64()?, r.u64()?);
    let dim = r.u32()? as usize;
    let count = r.u32()? as usize;
    let need = count.saturating_mul(dim + 2).saturating_mul(8);
    if payload.len() - r.pos != need {
        return Err(WireError::Payload(format!(
            "{count} reps of dimension {dim} need {need} bytes, {} remain",
            payload.len() - r.pos
        )));
    }
    let mut reps = Vec::with_capacity(count);
    for _ in 0..count {
        let centroid = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        let response = r.f64()?;
        let weight = r.u64()?;
        reps.push(Rep {
            centroid,
            response,
            weight,
        });
    }
    r.finish()?;
    Ok(Signature {
        site_id,
        dim,
        task,
        transform,
        rng,
        reps,
        assignment: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny() -> Signature {
        Signature {
            site_id: "s1".into(),
            dim: 2,
            task: Task::Regression,
            transform: TransformDescriptor::KMeans { k: 2 },
            rng: RngHandle::with_stream(7, 9),
            reps: vec![
                Rep {
                    centroid: vec![1.0, -2.0],
                    response: 0.5,
                    weight: 3,
                },
                Rep {
                    centroid: vec![0.0, 4.0],
                    response: 2.0,
                    weight: 1,
                },
            ],
            assignment: Some(vec![0, 0, 0, 1]),
        }
    }

    #[test]
    fn empty_ack_is_ten_bytes() {
        let m = WireMessage::new(MessageKind::Ack, Vec::new());
        let f = encode(&m).unwrap();
        assert_eq!(f.len(), 10);
        assert_eq!(f, [0, 0, 0, 0, 1, 0x88, 0, 0, 0, 0]);
        assert_eq!(decode_exact(&f).unwrap(), m);
    }

    #[test]
    fn tiny_signature_golden_bytes() {
        let hex = concat!(
            "0200", "7331", // site id
            "00", "00000000", // regression
            "00", "0200000000000000", // kmeans k=2
            "0700000000000000", "0900000000000000", // rng
            "02000000", "02000000", // d, reps
            "000000000000f03f", "00000000000000c0", "000000000000e03f", "0300000000000000",
            "0000000000000000", "0000000000001040", "0000000000000040", "0100000000000000",
        );
        let golden: Vec<u8> = (0..hex.len()).step_by(2).map(|i| u8::from_str_radix(&hex[i..i + 2], 16).unwrap()).collect();
        let payload = encode_signature(&tiny()).unwrap();
        assert_eq!(payload, golden);
        assert_eq!(payload.len(), signature_payload_len(2, 2, 2));
        let back = decode_signature(&payload).unwrap();
        assert_eq!(back.reps, tiny().reps);
        assert_eq!(back.assignment, None);
    }

    #[test]
    fn distinct_errors() {
        let f = encode(&WireMessage::new(MessageKind::SignaturePush, vec![1, 2, 3, 4])).unwrap();
        assert!(matches!(decode(&f[..f.len() - 1]), Err(WireError::Truncated { .. })));
        assert!(matches!(decode(&f[..3]), Err(WireError::Truncated { .. })));
        let mut bad = f.clone();
        bad[7] ^= 0x10;
        assert!(matches!(decode(&bad), Err(WireError::Crc { .. })));
        let mut v = f.clone();
        v[4] = 2;
        assert_eq!(decode(&v), Err(WireError::Version(2)));
        let mut k = f.clone();
        k[5] = 0x23;
        assert_eq!(decode(&k), Err(WireError::UnknownKind(0x23)));
    }

    #[test]
    fn hello_round_trip() {
        let h = Hello {
            site_id: "site-β".into(),
            dim: 100,
            task: Task::Classification { n_classes: 4 },
            n: 1600,
        };
        assert_eq!(decode_hello(&encode_hello(&h).unwrap()).unwrap(), h);
        assert!(decode_hello(&[1, 0]).is_err());
    }

    #[test]
    fn signature_length_is_checked() {
        let mut p = encode_signature(&tiny()).unwrap();
        p.pop();
        assert!(decode_signature(&p).is_err());
    }

    proptest! {
        #[test]
        fn frames_round_trip(kind in 0usize..5, payload in proptest::collection::vec(any::<u8>(), 0..512)) {
            let kinds = [MessageKind::Hello, MessageKind::SignaturePush, MessageKind::ModelPush, MessageKind::Ack, MessageKind::Error];
            let m = WireMessage::new(kinds[kind], payload);
            let f = encode(&m).unwrap();
            prop_assert_eq!(f.len(), m.frame_len());
            prop_assert_eq!(decode_exact(&f).unwrap(), m);
        }

        #[test]
        fn up_to_three_flipped_bits_are_rejected(
            payload in proptest::collection::vec(any::<u8>(), 0..256),
            flips in proptest::collection::vec(any::<prop::sample::Index>(), 1..4),
        ) {
            let f = encode(&WireMessage::new(MessageKind::ModelPush, payload)).unwrap();
            let bits = f.len() * 8;
            let mut g = f.clone();
            let positions: std::collections::BTreeSet<usize> = flips.iter().map(|ix| ix.index(bits)).collect();
            for b in positions {
                g[b / 8] ^= 1 << (b % 8);
            }
            prop_assume!(g != f);
            prop_assert!(decode_exact(&g).is_err());
        }
    }
}
