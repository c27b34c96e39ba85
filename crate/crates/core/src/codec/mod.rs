//! OCSC IPC wire format.
//!
//! Every frame is a fixed 38-byte header followed by a body of TLV fields and
//! an opaque trailer holding whatever the TLV reader could not consume.
//!
//! ```text
//! 00-03  magic "OCSC"
//! 04-05  header length (LE, 0x0026)
//! 06-07  body length (LE)
//! 08-0f  response handle
//! 10-17  reserved
//! 18-1b  reserved
//! 1c-23  return object
//! 24     message type
//! 25     message id
//! 26-..  body: TLV* trailer
//! ```

mod builders;
mod digest;
mod frame;
mod profile;
pub mod reference;

pub use builders::{
    build_disconnect, build_keepalive, build_progress_status, build_reconnect, build_script_move,
    DeployCommand, DEPLOY_COMMAND_TLV, TARGET_PATH_TLV,
};
pub use digest::{compute_digest, DigestAlgo};
pub use frame::{
    parse_frame, parse_frame_with, parse_tlvs, serialize, serialize_with, split_frame, IpcHeader,
    IpcMessage, SplitFrame, TlvField, BODY_LEN_OFFSET, HEADER_LEN, HEADER_LEN_OFFSET, MAGIC,
    MSG_ID_OFFSET, MSG_TYPE_OFFSET,
};
pub use profile::{MsgKind, Profile, TlvLayout};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("frame too short: {len} bytes, need at least 38")]
    TooShort { len: usize },
    #[error("bad magic {found:02x?}, expected \"OCSC\"")]
    MagicMismatch { found: [u8; 4] },
    #[error("unsupported header length 0x{0:04x}")]
    HeaderLenUnsupported(u16),
    #[error("declared body length {declared} does not match {available} available bytes")]
    BodyLenMismatch { declared: usize, available: usize },
    #[error("body of {0} bytes does not fit the 16-bit length field")]
    BodyTooLarge(usize),
    #[error("TLV {field} value 0x{value:x} does not fit the profile's field width")]
    FieldOverflow { field: &'static str, value: u64 },
    #[error("invalid deploy command: {0}")]
    InvalidCommand(String),
    #[error("unsupported digest algorithm {0:?}")]
    UnsupportedAlgo(String),
}
