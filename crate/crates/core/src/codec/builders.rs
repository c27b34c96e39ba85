use serde::{Deserialize, Serialize};

use super::{CodecError, DigestAlgo, IpcMessage, Profile, TlvField};

/// TLV carrying the path of the binary that should perform the move.
pub const TARGET_PATH_TLV: u32 = 0x0001;
/// TLV carrying the quoted, TAB-separated deploy command.
pub const DEPLOY_COMMAND_TLV: u32 = 0x0002;

/// Arguments of a CAC-move style deployment request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeployCommand {
    pub command: String,
    pub reply_port: u16,
    pub src_path: String,
    pub dst_path: String,
    pub digest_hex: String,
    pub digest_algo: String,
    /// `'1'` stores the file executable (0755), `'0'` read-only (0644).
    pub mode_flag: char,
}

impl DeployCommand {
    pub fn validate(&self) -> Result<(), CodecError> {
        let fields = [
            ("command", &self.command),
            ("source path", &self.src_path),
            ("destination path", &self.dst_path),
            ("digest", &self.digest_hex),
            ("digest algorithm", &self.digest_algo),
        ];
        for (name, value) in fields {
            if value.is_empty() {
                return Err(CodecError::InvalidCommand(format!("empty {name}")));
            }
            if value.contains(['\t', '"', '\0']) {
                return Err(CodecError::InvalidCommand(format!(
                    "{name} contains a delimiter: {value:?}"
                )));
            }
        }
        let algo: DigestAlgo = self.digest_algo.parse()?;
        if self.digest_hex.len() != algo.hex_len()
            || !self.digest_hex.bytes().all(|b| b.is_ascii_hexdigit())
        {
            return Err(CodecError::InvalidCommand(format!(
                "digest {:?} is not {} hex characters",
                self.digest_hex,
                algo.hex_len()
            )));
        }
        if !matches!(self.mode_flag, '0' | '1') {
            return Err(CodecError::InvalidCommand(format!(
                "mode flag {:?} is not 0 or 1",
                self.mode_flag
            )));
        }
        Ok(())
    }

    /// `"<cmd>\t-ipc=<port>\t<src>\t<dst>\t<DIGEST>\t<algo>\t<flag>"` followed by NUL.
    pub fn to_payload(&self) -> Result<Vec<u8>, CodecError> {
        self.validate()?;
        let text = format!(
            "\"{}\t-ipc={}\t{}\t{}\t{}\t{}\t{}\"",
            self.command,
            self.reply_port,
            self.src_path,
            self.dst_path,
            self.digest_hex.to_ascii_uppercase(),
            self.digest_algo,
            self.mode_flag
        );
        let mut out = text.into_bytes();
        out.push(0);
        Ok(out)
    }

    pub fn parse_payload(value: &[u8]) -> Result<Self, CodecError> {
        let bad = |why: &str| CodecError::InvalidCommand(why.to_string());
        let value = value.strip_suffix(&[0]).unwrap_or(value);
        let text = std::str::from_utf8(value).map_err(|_| bad("payload is not UTF-8"))?;
        let inner = text
            .strip_prefix('"')
            .and_then(|t| t.strip_suffix('"'))
            .ok_or_else(|| bad("payload is not quoted"))?;
        let parts: Vec<&str> = inner.split('\t').collect();
        let [command, ipc, src, dst, digest, algo, flag] = parts[..] else {
            return Err(bad("expected 7 TAB-separated fields"));
        };
        let reply_port = ipc
            .strip_prefix("-ipc=")
            .and_then(|p| p.parse().ok())
            .ok_or_else(|| bad("malformed -ipc= field"))?;
        let mut flag_chars = flag.chars();
        let mode_flag = match (flag_chars.next(), flag_chars.next()) {
            (Some(c), None) => c,
            _ => return Err(bad("mode flag must be one character")),
        };
        let cmd = DeployCommand {
            command: command.to_string(),
            reply_port,
            src_path: src.to_string(),
            dst_path: dst.to_string(),
            digest_hex: digest.to_string(),
            digest_algo: algo.to_string(),
            mode_flag,
        };
        cmd.validate()?;
        Ok(cmd)
    }

    pub fn from_message(msg: &IpcMessage) -> Result<Self, CodecError> {
        let tlv = msg
            .tlv(DEPLOY_COMMAND_TLV)
            .ok_or_else(|| CodecError::InvalidCommand("no command TLV".into()))?;
        Self::parse_payload(&tlv.value)
    }
}

pub fn build_script_move(
    cmd: &DeployCommand,
    target_binary_path: &str,
    profile: &Profile,
) -> Result<IpcMessage, CodecError> {
    let tlvs = vec![
        TlvField::string(TARGET_PATH_TLV, target_binary_path),
        TlvField::new(DEPLOY_COMMAND_TLV, cmd.to_payload()?),
    ];
    IpcMessage::new(profile.script_move, tlvs).finalize()
}

pub fn build_disconnect(reply_port: u16, profile: &Profile) -> Result<IpcMessage, CodecError> {
    let tlvs = vec![TlvField::string(
        DEPLOY_COMMAND_TLV,
        &format!("-ipc={reply_port}"),
    )];
    IpcMessage::new(profile.disconnect, tlvs).finalize()
}

pub fn build_reconnect(reply_port: u16, profile: &Profile) -> Result<IpcMessage, CodecError> {
    let tlvs = vec![TlvField::string(
        DEPLOY_COMMAND_TLV,
        &format!("-ipc={reply_port}"),
    )];
    IpcMessage::new(profile.reconnect, tlvs).finalize()
}

/// Header-only no-op frame.
pub fn build_keepalive(profile: &Profile) -> IpcMessage {
    IpcMessage::new(profile.keepalive, Vec::new())
}

/// Download progress notification. The 4-byte first TLV places the display
/// string TLV at frame offset 0x2e under the narrow layout.
pub fn build_progress_status(
    percent_tlv_value: [u8; 4],
    display_text: &str,
    profile: &Profile,
) -> Result<IpcMessage, CodecError> {
    if display_text.is_empty() {
        return Err(CodecError::InvalidCommand("empty display text".into()));
    }
    let tlvs = vec![
        TlvField::new(0x0001, percent_tlv_value.to_vec()),
        TlvField::string(0x0002, display_text),
    ];
    IpcMessage::new(profile.progress_status, tlvs).finalize()
}
