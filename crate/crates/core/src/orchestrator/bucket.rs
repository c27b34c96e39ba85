use sha1::{Digest, Sha1};

use super::CrashReport;
use crate::codec::{split_frame, HEADER_LEN, HEADER_LEN_OFFSET, MAGIC};

/// Which header fields of a frame are off, as a short stable token.
pub fn frame_fingerprint(frame: &[u8]) -> String {
    let magic = if frame.starts_with(&MAGIC) { 'm' } else { 'M' };
    let header_len = match frame.get(HEADER_LEN_OFFSET..HEADER_LEN_OFFSET + 2) {
        Some(b) if u16::from_le_bytes([b[0], b[1]]) as usize == HEADER_LEN => 'h',
        Some(_) => 'H',
        None => '-',
    };
    let body = match split_frame(frame) {
        Err(_) => "trunc",
        Ok(s) if s.header.body_len == 0 && !s.excess.is_empty() => "zero",
        Ok(s) if !s.excess.is_empty() => "short",
        Ok(s) if s.missing > 0 => "over",
        Ok(_) => "exact",
    };
    format!("{magic}{header_len}:{body}")
}

/// Bucket key: the target's own bug id when it reported one, otherwise a
/// hash of detection class and sequence shape.
pub fn bucket(report: &CrashReport) -> String {
    if let Some(id) = &report.bug_id {
        return format!("bug-{id}");
    }
    let seq = &report.sequence;
    let mut shape = format!(
        "{}|{}|{}",
        report.detection,
        seq.steps.len(),
        if seq.parallel { seq.lanes() } else { 1 }
    );
    for s in &seq.steps {
        shape.push('|');
        shape.push_str(&frame_fingerprint(&s.frame));
    }
    let digest = Sha1::digest(shape.as_bytes());
    format!("{}-{}", report.detection, &hex::encode(digest)[..12])
}
