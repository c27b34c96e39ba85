use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{
    serialize_with, IpcMessage, Profile, TlvLayout, BODY_LEN_OFFSET, HEADER_LEN, HEADER_LEN_OFFSET,
    MSG_ID_OFFSET, MSG_TYPE_OFFSET,
};

const TYPE_SWEEP: [u8; 5] = [0x00, 0x01, 0x0d, 0x7f, 0xff];
const ID_SWEEP: [u8; 2] = [0x00, 0x0d];
/// Header field boundaries: magic, lengths, handle, reserved, reserved, return object, type.
const HEADER_BOUNDARIES: [usize; 8] = [4, 6, 8, 0x10, 0x18, 0x1c, 0x24, 0x25];

/// Single-field tamperings of `msg`, duplicate-free and excluding the
/// untouched frame. Covers header length fields, every TLV length, truncation
/// at every field boundary and a type/id sweep.
pub fn structural_candidates(msg: &IpcMessage, profile: &Profile) -> Vec<Vec<u8>> {
    let Ok(base) = serialize_with(msg, profile) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let mut seen = HashSet::from([base.clone()]);
    let mut push = |bytes: Vec<u8>| {
        if !bytes.is_empty() && seen.insert(bytes.clone()) {
            out.push(bytes);
        }
    };
    let with = |pos: usize, bytes: &[u8]| {
        let mut v = base.clone();
        v[pos..pos + bytes.len()].copy_from_slice(bytes);
        v
    };

    for body_len in [0x0000u16, 0x0006, 0xffff] {
        push(with(BODY_LEN_OFFSET, &body_len.to_le_bytes()));
    }
    let header_len = msg.header.header_len;
    for hl in [header_len.wrapping_add(1), header_len.wrapping_sub(1)] {
        push(with(HEADER_LEN_OFFSET, &hl.to_le_bytes()));
    }

    let layout = profile.tlv_layout;
    let width = layout.field_width();
    let mut boundaries: Vec<usize> = HEADER_BOUNDARIES.to_vec();
    let mut pos = HEADER_LEN;
    boundaries.push(pos);
    for tlv in &msg.tlvs {
        let len_at = pos + width;
        let len = tlv.len() as u64;
        for value in [len.wrapping_add(1), len.wrapping_sub(1), 0] {
            let value = value & layout.max_field();
            let bytes = match layout {
                TlvLayout::Narrow => (value as u16).to_be_bytes().to_vec(),
                TlvLayout::Wide => (value as u32).to_be_bytes().to_vec(),
            };
            push(with(len_at, &bytes));
        }
        boundaries.extend([len_at, len_at + width]);
        pos = len_at + width + tlv.len();
        boundaries.push(pos);
    }
    for cut in boundaries {
        if cut > 0 && cut < base.len() {
            push(base[..cut].to_vec());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(&base));
    for &ty in &TYPE_SWEEP {
        let random_id: u8 = rng.gen();
        for id in ID_SWEEP.into_iter().chain([random_id]) {
            let mut v = base.clone();
            v[MSG_TYPE_OFFSET] = ty;
            v[MSG_ID_OFFSET] = id;
            push(v);
        }
    }
    out
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}
