use serde::{Deserialize, Serialize};

/// Width of the TLV type and length fields. Both are big-endian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum TlvLayout {
    /// 16-bit type, 16-bit length. Matches the captured script deployment frame.
    #[default]
    Narrow,
    /// 32-bit type, 32-bit length, the alternative reading of the format table.
    Wide,
}

impl TlvLayout {
    pub fn field_width(self) -> usize {
        match self {
            TlvLayout::Narrow => 2,
            TlvLayout::Wide => 4,
        }
    }

    pub fn header_width(self) -> usize {
        2 * self.field_width()
    }

    pub fn max_field(self) -> u64 {
        match self {
            TlvLayout::Narrow => u16::MAX as u64,
            TlvLayout::Wide => u32::MAX as u64,
        }
    }

    /// Type codes with the top bit set are not decoded as TLVs.
    pub fn reserved_type_bit(self) -> u32 {
        match self {
            TlvLayout::Narrow => 0x8000,
            TlvLayout::Wide => 0x8000_0000,
        }
    }

    pub(crate) fn read_field(self, bytes: &[u8]) -> u32 {
        match self {
            TlvLayout::Narrow => u16::from_be_bytes([bytes[0], bytes[1]]) as u32,
            TlvLayout::Wide => u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]),
        }
    }

    pub(crate) fn write_field(self, value: u32, out: &mut Vec<u8>) {
        match self {
            TlvLayout::Narrow => out.extend_from_slice(&(value as u16).to_be_bytes()),
            TlvLayout::Wide => out.extend_from_slice(&value.to_be_bytes()),
        }
    }
}

/// A (message type, message id) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MsgKind {
    pub msg_type: u8,
    pub msg_id: u8,
}

impl MsgKind {
    pub const fn new(msg_type: u8, msg_id: u8) -> Self {
        MsgKind { msg_type, msg_id }
    }

    /// Whether the agent's IPC depot hands this message to its registered handlers:
    /// type > 0 and id not in {0x00, 0x0d}.
    pub fn is_dispatchable(self) -> bool {
        self.msg_type > 0 && self.msg_id != 0x00 && self.msg_id != 0x0d
    }
}

/// Protocol profile v1: TLV layout plus the message kinds whose encodings
/// are not pinned down by captured traffic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub tlv_layout: TlvLayout,
    pub script_move: MsgKind,
    pub disconnect: MsgKind,
    pub reconnect: MsgKind,
    pub progress_status: MsgKind,
    pub keepalive: MsgKind,
    pub ack: MsgKind,
}

impl Default for Profile {
    fn default() -> Self {
        Profile {
            tlv_layout: TlvLayout::Narrow,
            script_move: MsgKind::new(0x01, 0x02),
            disconnect: MsgKind::new(0x03, 0x01),
            reconnect: MsgKind::new(0x03, 0x02),
            // Forwarded to the UI rather than dispatched, hence id 0x0d.
            progress_status: MsgKind::new(0x01, 0x0d),
            keepalive: MsgKind::new(0x00, 0x00),
            ack: MsgKind::new(0x01, 0x82),
        }
    }
}
