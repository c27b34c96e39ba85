//! Frame extraction from a byte stream.
//!
//! The agent trusts the declared body length. Anything after the declared
//! body and before the next magic is handed to the handler as `excess`.

use crate::codec::{BODY_LEN_OFFSET, HEADER_LEN, HEADER_LEN_OFFSET, MAGIC};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extract {
    pub frame: Vec<u8>,
    pub excess: Vec<u8>,
}

fn find_magic(buf: &[u8]) -> Option<usize> {
    buf.windows(MAGIC.len()).position(|w| w == MAGIC)
}

fn u16_le(buf: &[u8], at: usize) -> usize {
    u16::from_le_bytes([buf[at], buf[at + 1]]) as usize
}

/// Pulls the next frame out of `buf`. With `flush` unset, returns `None`
/// whenever more input could still change the result.
pub fn next_frame(buf: &mut Vec<u8>, flush: bool) -> Option<Extract> {
    loop {
        let Some(start) = find_magic(buf) else {
            if flush {
                buf.clear();
            } else {
                // keep a possible partial magic
                let keep = buf.len().min(MAGIC.len() - 1);
                buf.drain(..buf.len() - keep);
            }
            return None;
        };
        buf.drain(..start);

        if buf.len() < HEADER_LEN {
            if flush {
                buf.clear();
            }
            return None;
        }
        if u16_le(buf, HEADER_LEN_OFFSET) != HEADER_LEN {
            buf.drain(..MAGIC.len());
            continue;
        }
        let end = HEADER_LEN + u16_le(buf, BODY_LEN_OFFSET);
        if buf.len() < end {
            if !flush {
                return None;
            }
            // truncated frame: resync past its magic
            buf.drain(..MAGIC.len());
            continue;
        }
        let excess_len = match find_magic(&buf[end..]) {
            Some(n) => n,
            None if flush => buf.len() - end,
            None => return None,
        };
        let frame = buf[..end].to_vec();
        let excess = buf[end..end + excess_len].to_vec();
        buf.drain(..end + excess_len);
        return Some(Extract { frame, excess });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{build_keepalive, reference, serialize, Profile};

    fn drain_all(mut buf: Vec<u8>) -> Vec<Extract> {
        let mut out = Vec::new();
        while let Some(e) = next_frame(&mut buf, true) {
            out.push(e);
        }
        assert!(buf.is_empty());
        out
    }

    #[test]
    fn golden_frame_has_no_excess() {
        let golden = reference::script_deploy_frame();
        let out = drain_all(golden.clone());
        assert_eq!(
            out,
            vec![Extract {
                frame: golden,
                excess: vec![]
            }]
        );
    }

    #[test]
    fn zero_body_len_leaves_body_as_excess() {
        let mut raw = reference::script_deploy_frame();
        raw[6..8].copy_from_slice(&[0, 0]);
        let out = drain_all(raw.clone());
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].frame, raw[..38]);
        assert_eq!(out[0].excess.len(), 244);
    }

    #[test]
    fn waits_until_excess_is_bounded() {
        let mut raw = reference::script_deploy_frame();
        raw[6..8].copy_from_slice(&[0, 0]);
        let mut buf = raw.clone();
        assert_eq!(next_frame(&mut buf, false), None);
        let ka = serialize(&build_keepalive(&Profile::default())).unwrap();
        buf.extend_from_slice(&ka);
        let first = next_frame(&mut buf, false).unwrap();
        assert_eq!(first.excess.len(), 244);
        assert_eq!(next_frame(&mut buf, false), None);
        assert_eq!(next_frame(&mut buf, true).unwrap().frame, ka);
    }

    #[test]
    fn resyncs_on_garbage_and_bad_header_len() {
        let ka = serialize(&build_keepalive(&Profile::default())).unwrap();
        let mut bad = ka.clone();
        bad[4] = 0x27;
        let mut raw = b"junk".to_vec();
        raw.extend_from_slice(&bad);
        raw.extend_from_slice(&ka);
        let out = drain_all(raw);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].frame, ka);
    }

    #[test]
    fn truncated_frame_is_dropped_at_flush() {
        let golden = reference::script_deploy_frame();
        assert!(drain_all(golden[..100].to_vec()).is_empty());
        assert!(drain_all(golden[..20].to_vec()).is_empty());
    }
}
