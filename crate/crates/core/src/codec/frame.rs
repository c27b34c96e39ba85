use serde::{Deserialize, Serialize};

use super::{CodecError, MsgKind, Profile, TlvLayout};

pub const MAGIC: [u8; 4] = *b"OCSC";
/// Size of the fixed header, and the only header length profile v1 accepts.
pub const HEADER_LEN: usize = 0x26;
pub const HEADER_LEN_OFFSET: usize = 4;
pub const BODY_LEN_OFFSET: usize = 6;
pub const MSG_TYPE_OFFSET: usize = 0x24;
pub const MSG_ID_OFFSET: usize = 0x25;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IpcHeader {
    pub magic: [u8; 4],
    pub header_len: u16,
    pub body_len: u16,
    /// Opaque; the captured traffic shows all-ones here.
    pub response_handle: [u8; 8],
    pub reserved_a: [u8; 8],
    pub reserved_b: [u8; 4],
    pub return_object: [u8; 8],
    pub msg_type: u8,
    pub msg_id: u8,
}

impl IpcHeader {
    pub fn new(kind: MsgKind) -> Self {
        IpcHeader {
            magic: MAGIC,
            header_len: HEADER_LEN as u16,
            body_len: 0,
            response_handle: [0; 8],
            reserved_a: [0; 8],
            reserved_b: [0; 4],
            return_object: [0; 8],
            msg_type: kind.msg_type,
            msg_id: kind.msg_id,
        }
    }

    pub fn kind(&self) -> MsgKind {
        MsgKind::new(self.msg_type, self.msg_id)
    }

    /// Reads the header fields without validating any of them.
    pub fn decode(raw: &[u8]) -> Result<Self, CodecError> {
        if raw.len() < HEADER_LEN {
            return Err(CodecError::TooShort { len: raw.len() });
        }
        let arr = |range: std::ops::Range<usize>| raw[range].to_vec();
        Ok(IpcHeader {
            magic: arr(0..4).try_into().unwrap(),
            header_len: u16::from_le_bytes([raw[4], raw[5]]),
            body_len: u16::from_le_bytes([raw[6], raw[7]]),
            response_handle: arr(0x08..0x10).try_into().unwrap(),
            reserved_a: arr(0x10..0x18).try_into().unwrap(),
            reserved_b: arr(0x18..0x1c).try_into().unwrap(),
            return_object: arr(0x1c..0x24).try_into().unwrap(),
            msg_type: raw[MSG_TYPE_OFFSET],
            msg_id: raw[MSG_ID_OFFSET],
        })
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&self.header_len.to_le_bytes());
        out.extend_from_slice(&self.body_len.to_le_bytes());
        out.extend_from_slice(&self.response_handle);
        out.extend_from_slice(&self.reserved_a);
        out.extend_from_slice(&self.reserved_b);
        out.extend_from_slice(&self.return_object);
        out.push(self.msg_type);
        out.push(self.msg_id);
    }

    pub fn has_valid_prefix(&self) -> bool {
        self.magic == MAGIC && self.header_len as usize == HEADER_LEN
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TlvField {
    pub type_code: u32,
    pub value: Vec<u8>,
}

impl TlvField {
    pub fn new(type_code: u32, value: impl Into<Vec<u8>>) -> Self {
        TlvField {
            type_code,
            value: value.into(),
        }
    }

    /// A string value with the trailing NUL the agent expects.
    pub fn string(type_code: u32, text: &str) -> Self {
        let mut value = text.as_bytes().to_vec();
        value.push(0);
        TlvField { type_code, value }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn encoded_len(&self, layout: TlvLayout) -> usize {
        layout.header_width() + self.value.len()
    }

    /// The value with one trailing NUL stripped, if present.
    pub fn value_str(&self) -> Option<&str> {
        let v = self.value.strip_suffix(&[0]).unwrap_or(&self.value);
        std::str::from_utf8(v).ok()
    }

    fn encode_into(&self, layout: TlvLayout, out: &mut Vec<u8>) -> Result<(), CodecError> {
        let max = layout.max_field();
        if self.type_code as u64 > max {
            return Err(CodecError::FieldOverflow {
                field: "type",
                value: self.type_code as u64,
            });
        }
        if self.value.len() as u64 > max {
            return Err(CodecError::FieldOverflow {
                field: "length",
                value: self.value.len() as u64,
            });
        }
        layout.write_field(self.type_code, out);
        layout.write_field(self.value.len() as u32, out);
        out.extend_from_slice(&self.value);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IpcMessage {
    pub header: IpcHeader,
    pub tlvs: Vec<TlvField>,
    pub trailer: Vec<u8>,
}

impl IpcMessage {
    pub fn new(kind: MsgKind, tlvs: Vec<TlvField>) -> Self {
        IpcMessage {
            header: IpcHeader::new(kind),
            tlvs,
            trailer: Vec::new(),
        }
    }

    pub fn kind(&self) -> MsgKind {
        self.header.kind()
    }

    pub fn tlv(&self, type_code: u32) -> Option<&TlvField> {
        self.tlvs.iter().find(|t| t.type_code == type_code)
    }

    /// Serializes with the default profile and sets `header.body_len` to match.
    pub fn to_bytes(&self) -> Result<Vec<u8>, CodecError> {
        serialize(self)
    }

    /// Like [`to_bytes`](Self::to_bytes) but also refreshes the stored header.
    pub fn finalize(mut self) -> Result<Self, CodecError> {
        let bytes = serialize(&self)?;
        self.header.body_len = (bytes.len() - HEADER_LEN) as u16;
        Ok(self)
    }
}

pub fn parse_frame(raw: &[u8]) -> Result<IpcMessage, CodecError> {
    parse_frame_with(raw, &Profile::default())
}

pub fn parse_frame_with(raw: &[u8], profile: &Profile) -> Result<IpcMessage, CodecError> {
    if raw.len() >= 4 && raw[..4] != MAGIC {
        return Err(CodecError::MagicMismatch {
            found: raw[..4].try_into().unwrap(),
        });
    }
    let header = IpcHeader::decode(raw)?;
    if header.header_len as usize != HEADER_LEN {
        return Err(CodecError::HeaderLenUnsupported(header.header_len));
    }
    let available = raw.len() - HEADER_LEN;
    if header.body_len as usize != available {
        return Err(CodecError::BodyLenMismatch {
            declared: header.body_len as usize,
            available,
        });
    }
    let (tlvs, trailer) = parse_tlvs(&raw[HEADER_LEN..], profile.tlv_layout);
    Ok(IpcMessage {
        header,
        tlvs,
        trailer,
    })
}

/// Greedy left-to-right TLV reader. Everything from the first position where
/// no well-formed TLV starts is returned as the trailer, so nothing is lost.
pub fn parse_tlvs(body: &[u8], layout: TlvLayout) -> (Vec<TlvField>, Vec<u8>) {
    let width = layout.field_width();
    let mut tlvs = Vec::new();
    let mut pos = 0;
    while body.len() - pos >= 2 * width {
        let type_code = layout.read_field(&body[pos..]);
        let len = layout.read_field(&body[pos + width..]) as usize;
        let start = pos + 2 * width;
        if type_code & layout.reserved_type_bit() != 0 || len > body.len() - start {
            break;
        }
        tlvs.push(TlvField::new(type_code, &body[start..start + len]));
        pos = start + len;
    }
    (tlvs, body[pos..].to_vec())
}

pub fn serialize(msg: &IpcMessage) -> Result<Vec<u8>, CodecError> {
    serialize_with(msg, &Profile::default())
}

pub fn serialize_with(msg: &IpcMessage, profile: &Profile) -> Result<Vec<u8>, CodecError> {
    let mut body = Vec::new();
    for tlv in &msg.tlvs {
        tlv.encode_into(profile.tlv_layout, &mut body)?;
    }
    body.extend_from_slice(&msg.trailer);
    if body.len() > u16::MAX as usize {
        return Err(CodecError::BodyTooLarge(body.len()));
    }
    let header = IpcHeader {
        body_len: body.len() as u16,
        ..msg.header.clone()
    };
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    header.encode_into(&mut out);
    out.extend_from_slice(&body);
    Ok(out)
}

/// A frame read the way a lenient receiver would: the declared body (clipped
/// to what is present) plus whatever follows it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitFrame<'a> {
    pub header: IpcHeader,
    pub body: &'a [u8],
    pub excess: &'a [u8],
    /// Bytes the header promised but the input does not have.
    pub missing: usize,
}

pub fn split_frame(raw: &[u8]) -> Result<SplitFrame<'_>, CodecError> {
    let header = IpcHeader::decode(raw)?;
    let rest = &raw[HEADER_LEN..];
    let declared = header.body_len as usize;
    let take = declared.min(rest.len());
    Ok(SplitFrame {
        header,
        body: &rest[..take],
        excess: &rest[take..],
        missing: declared - take,
    })
}
