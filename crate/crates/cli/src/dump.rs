//! Text form of a frame for `decode` and `encode`.
//!
//! Unindented lines carry the data and are read back by [`parse`]; indented
//! lines are annotations for humans and are skipped.

use std::fmt::Write as _;

use ocsc_core::codec::{
    serialize, DeployCommand, IpcHeader, IpcMessage, Profile, TlvField, BODY_LEN_OFFSET,
};

pub fn render(msg: &IpcMessage, profile: &Profile) -> String {
    let h = &msg.header;
    let mut out = String::new();
    let magic = String::from_utf8_lossy(&h.magic);
    let _ = writeln!(out, "magic            {magic}");
    let _ = writeln!(out, "header_len       0x{:04x}", h.header_len);
    let _ = writeln!(out, "body_len         {}", h.body_len);
    let _ = writeln!(out, "response_handle  {}", hex::encode(h.response_handle));
    let _ = writeln!(out, "reserved_a       {}", hex::encode(h.reserved_a));
    let _ = writeln!(out, "reserved_b       {}", hex::encode(h.reserved_b));
    let _ = writeln!(out, "return_object    {}", hex::encode(h.return_object));
    let _ = writeln!(out, "msg_type         0x{:02x}", h.msg_type);
    let _ = writeln!(out, "msg_id           0x{:02x}", h.msg_id);
    if let Some(name) = kind_name(msg, profile) {
        let _ = writeln!(out, "    kind         {name}");
    }
    for tlv in &msg.tlvs {
        let _ = writeln!(
            out,
            "tlv 0x{:04x} {} {}",
            tlv.type_code,
            tlv.len(),
            hex_or_dash(&tlv.value)
        );
        hexdump(&mut out, &tlv.value);
        if let Ok(cmd) = DeployCommand::parse_payload(&tlv.value) {
            let mode = if cmd.mode_flag == '1' { "0755" } else { "0644" };
            let _ = writeln!(out, "    command      {}", cmd.command);
            let _ = writeln!(out, "    reply_port   {}", cmd.reply_port);
            let _ = writeln!(out, "    src          {}", cmd.src_path);
            let _ = writeln!(out, "    dst          {}", cmd.dst_path);
            let _ = writeln!(
                out,
                "    digest       {} {}",
                cmd.digest_algo, cmd.digest_hex
            );
            let _ = writeln!(out, "    mode         {} ({mode})", cmd.mode_flag);
        } else if let Some(text) = tlv.value_str() {
            let _ = writeln!(out, "    text         {text}");
        }
    }
    let _ = writeln!(
        out,
        "trailer {} {}",
        msg.trailer.len(),
        hex_or_dash(&msg.trailer)
    );
    hexdump(&mut out, &msg.trailer);
    out
}

fn kind_name(msg: &IpcMessage, p: &Profile) -> Option<&'static str> {
    let k = msg.kind();
    let named = [
        (p.script_move, "script_move"),
        (p.disconnect, "disconnect"),
        (p.reconnect, "reconnect"),
        (p.progress_status, "progress_status"),
        (p.keepalive, "keepalive"),
        (p.ack, "ack"),
    ];
    named
        .iter()
        .find(|(kind, _)| *kind == k)
        .map(|(_, name)| *name)
}

fn hex_or_dash(bytes: &[u8]) -> String {
    if bytes.is_empty() {
        "-".into()
    } else {
        hex::encode(bytes)
    }
}

fn hexdump(out: &mut String, bytes: &[u8]) {
    for (row, chunk) in bytes.chunks(16).enumerate() {
        let hex: Vec<String> = chunk.iter().map(|b| format!("{b:02x}")).collect();
        let ascii: String = chunk
            .iter()
            .map(|&b| {
                if b.is_ascii_graphic() || b == b' ' {
                    b as char
                } else {
                    '.'
                }
            })
            .collect();
        let _ = writeln!(
            out,
            "    {:04x}  {:<47}  |{ascii}|",
            row * 16,
            hex.join(" ")
        );
    }
}

/// Rebuilds the frame bytes from a dump. A `body_len` that differs from the
/// real body is written as declared, so tampered frames can be authored.
pub fn parse(text: &str) -> Result<Vec<u8>, String> {
    let mut header = IpcHeader::decode(&[0; 0x26]).expect("zeroed header");
    let mut declared = None;
    let mut tlvs = Vec::new();
    let mut trailer = None;
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with(char::is_whitespace) || line.starts_with('#') {
            continue;
        }
        let err = |what: &str| format!("line {}: {what}", n + 1);
        let mut words = line.split_whitespace();
        let key = words.next().unwrap_or_default();
        let args: Vec<&str> = words.collect();
        let first = || args.first().copied().ok_or_else(|| err("missing value"));
        match key {
            "magic" => {
                header.magic = first()?
                    .as_bytes()
                    .try_into()
                    .map_err(|_| err("magic must be 4 characters"))?
            }
            "header_len" => header.header_len = int(first()?).ok_or_else(|| err("bad number"))?,
            "body_len" => declared = Some(int(first()?).ok_or_else(|| err("bad number"))?),
            "response_handle" => {
                header.response_handle = fixed(first()?).ok_or_else(|| err("need 8 hex bytes"))?
            }
            "reserved_a" => {
                header.reserved_a = fixed(first()?).ok_or_else(|| err("need 8 hex bytes"))?
            }
            "reserved_b" => {
                header.reserved_b = fixed(first()?).ok_or_else(|| err("need 4 hex bytes"))?
            }
            "return_object" => {
                header.return_object = fixed(first()?).ok_or_else(|| err("need 8 hex bytes"))?
            }
            "msg_type" => header.msg_type = int(first()?).ok_or_else(|| err("bad number"))?,
            "msg_id" => header.msg_id = int(first()?).ok_or_else(|| err("bad number"))?,
            "tlv" => {
                let [ty, len, value] = args[..] else {
                    return Err(err("expected: tlv <type> <len> <hex>"));
                };
                let ty: u32 = int(ty).ok_or_else(|| err("bad TLV type"))?;
                let value = bytes(value).ok_or_else(|| err("bad TLV hex"))?;
                if int::<usize>(len) != Some(value.len()) {
                    return Err(err("TLV length does not match its value"));
                }
                tlvs.push(TlvField::new(ty, value));
            }
            "trailer" => {
                let [len, value] = args[..] else {
                    return Err(err("expected: trailer <len> <hex>"));
                };
                let value = bytes(value).ok_or_else(|| err("bad trailer hex"))?;
                if int::<usize>(len) != Some(value.len()) {
                    return Err(err("trailer length does not match its bytes"));
                }
                trailer = Some(value);
            }
            other => return Err(err(&format!("unknown field {other:?}"))),
        }
    }
    let msg = IpcMessage {
        header,
        tlvs,
        trailer: trailer.unwrap_or_default(),
    };
    let mut raw = serialize(&msg).map_err(|e| e.to_string())?;
    if let Some(len) = declared {
        raw[BODY_LEN_OFFSET..BODY_LEN_OFFSET + 2].copy_from_slice(&u16::to_le_bytes(len));
    }
    Ok(raw)
}

fn int<T: TryFrom<u64>>(s: &str) -> Option<T> {
    let v = match s.strip_prefix("0x") {
        Some(h) => u64::from_str_radix(h, 16).ok()?,
        None => s.parse().ok()?,
    };
    T::try_from(v).ok()
}

fn bytes(s: &str) -> Option<Vec<u8>> {
    if s == "-" {
        Some(Vec::new())
    } else {
        hex::decode(s).ok()
    }
}

fn fixed<const N: usize>(s: &str) -> Option<[u8; N]> {
    bytes(s)?.try_into().ok()
}
