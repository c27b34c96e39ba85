//! Deterministic byte-level and structure-aware mutators.
//!
//! Every mutator is a pure function of its input and a [`MutationRecipe`]:
//! parameters left unset are drawn from a ChaCha stream seeded with the
//! recipe's `rng_seed`, so a logged recipe always replays to the same bytes.

mod corpus;
mod structural;

pub use corpus::{CorpusEntry, CorpusError, Origin, SeedCorpus};
pub use structural::structural_candidates;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{
    BODY_LEN_OFFSET, HEADER_LEN, HEADER_LEN_OFFSET, MAGIC, MSG_ID_OFFSET, MSG_TYPE_OFFSET,
};

/// Outputs never grow beyond this multiple of the input length.
pub const MAX_GROWTH: usize = 4;

const INTERESTING_BYTES: [u8; 8] = [0x00, 0x01, 0x02, 0x0d, 0x26, 0x7f, 0x80, 0xff];
const INTERESTING_U16: [u16; 11] = [
    0x0000, 0x0001, 0x0006, 0x0026, 0x007f, 0x0080, 0x00ff, 0x0100, 0x7fff, 0x8000, 0xffff,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationKind {
    BitFlip,
    ByteSet,
    ByteInsert,
    ByteDelete,
    BlockDuplicate,
    BlockShuffle,
    Splice,
    /// 16-bit little-endian write into a header length field.
    LengthFieldSet,
    /// 16-bit big-endian write into a TLV length field.
    TlvLengthSet,
    Truncate,
    HavocStack,
}

impl MutationKind {
    pub const ALL: [MutationKind; 11] = [
        MutationKind::BitFlip,
        MutationKind::ByteSet,
        MutationKind::ByteInsert,
        MutationKind::ByteDelete,
        MutationKind::BlockDuplicate,
        MutationKind::BlockShuffle,
        MutationKind::Splice,
        MutationKind::LengthFieldSet,
        MutationKind::TlvLengthSet,
        MutationKind::Truncate,
        MutationKind::HavocStack,
    ];

    /// Relative weight when havoc picks a kind. HavocStack never nests.
    fn havoc_weight(self) -> u32 {
        match self {
            MutationKind::ByteSet | MutationKind::LengthFieldSet => 3,
            MutationKind::BitFlip | MutationKind::TlvLengthSet => 2,
            MutationKind::HavocStack => 0,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MutationRecipe {
    pub kind: MutationKind,
    pub offset: Option<usize>,
    pub value: Option<u64>,
    pub count: Option<usize>,
    pub rng_seed: u64,
}

impl MutationRecipe {
    pub fn new(kind: MutationKind, rng_seed: u64) -> Self {
        MutationRecipe {
            kind,
            offset: None,
            value: None,
            count: None,
            rng_seed,
        }
    }

    pub fn offset(mut self, offset: usize) -> Self {
        self.offset = Some(offset);
        self
    }

    pub fn value(mut self, value: u64) -> Self {
        self.value = Some(value);
        self
    }

    pub fn count(mut self, count: usize) -> Self {
        self.count = Some(count);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MutateError {
    #[error("{0:?} needs a non-empty input")]
    EmptyInput(MutationKind),
}

pub fn mutate(input: &[u8], recipe: &MutationRecipe) -> Result<Vec<u8>, MutateError> {
    mutate_with_donor(input, None, recipe)
}

/// `donor` feeds [`MutationKind::Splice`]; without one the input splices with itself.
pub fn mutate_with_donor(
    input: &[u8],
    donor: Option<&[u8]>,
    recipe: &MutationRecipe,
) -> Result<Vec<u8>, MutateError> {
    if input.is_empty() {
        return Err(MutateError::EmptyInput(recipe.kind));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.rng_seed);
    let mut out = input.to_vec();
    let len = input.len();
    let at = |rng: &mut ChaCha8Rng, bound: usize| {
        recipe
            .offset
            .unwrap_or_else(|| rng.gen_range(0..bound))
            .min(bound - 1)
    };

    match recipe.kind {
        MutationKind::BitFlip => {
            let pos = at(&mut rng, len);
            let bit = recipe
                .value
                .map(|v| (v % 8) as u8)
                .unwrap_or_else(|| rng.gen_range(0..8));
            out[pos] ^= 1 << bit;
        }
        MutationKind::ByteSet => {
            let pos = match recipe.offset {
                Some(o) => o.min(len - 1),
                None if len > MSG_ID_OFFSET && rng.gen_bool(0.5) => {
                    *[MSG_TYPE_OFFSET, MSG_ID_OFFSET].choose(&mut rng).unwrap()
                }
                None => rng.gen_range(0..len),
            };
            out[pos] = recipe
                .value
                .map(|v| v as u8)
                .unwrap_or_else(|| interesting_byte(&mut rng));
        }
        MutationKind::ByteInsert => {
            let pos = recipe
                .offset
                .unwrap_or_else(|| rng.gen_range(0..=len))
                .min(len);
            let count = recipe.count.unwrap_or_else(|| rng.gen_range(1..=16)).max(1);
            let fill: Vec<u8> = match recipe.value {
                Some(v) => vec![v as u8; count],
                None => (0..count).map(|_| rng.gen()).collect(),
            };
            out.splice(pos..pos, fill);
        }
        MutationKind::ByteDelete => {
            let pos = at(&mut rng, len);
            let count = recipe.count.unwrap_or_else(|| rng.gen_range(1..=16)).max(1);
            let end = (pos + count).min(len);
            out.drain(pos..end);
        }
        MutationKind::BlockDuplicate => {
            let pos = at(&mut rng, len);
            let count = recipe.count.unwrap_or_else(|| rng.gen_range(1..=64)).max(1);
            let end = (pos + count).min(len);
            let block = out[pos..end].to_vec();
            let reps = recipe.value.unwrap_or(1).clamp(1, 8) as usize;
            for _ in 0..reps {
                out.splice(end..end, block.iter().copied());
            }
        }
        MutationKind::BlockShuffle => {
            let pos = at(&mut rng, len);
            let count = recipe.count.unwrap_or_else(|| rng.gen_range(2..=32)).max(1);
            let end = (pos + count).min(len);
            out[pos..end].shuffle(&mut rng);
        }
        MutationKind::Splice => {
            let donor = donor.filter(|d| !d.is_empty()).unwrap_or(input);
            let cut = at(&mut rng, len);
            let from = rng.gen_range(0..donor.len());
            out.truncate(cut);
            out.extend_from_slice(&donor[from..]);
        }
        MutationKind::LengthFieldSet => {
            let pos = recipe.offset.unwrap_or_else(|| {
                if rng.gen_ratio(3, 4) {
                    BODY_LEN_OFFSET
                } else {
                    HEADER_LEN_OFFSET
                }
            });
            let value = recipe.value.map(|v| v as u16).unwrap_or_else(|| {
                let actual = len.saturating_sub(HEADER_LEN) as u16;
                interesting_u16(&mut rng, actual)
            });
            write_bytes(&mut out, pos, &value.to_le_bytes());
        }
        MutationKind::TlvLengthSet => {
            let (pos, current) = match recipe.offset {
                Some(o) => (o, 0),
                None => {
                    let fields = tlv_length_offsets(input);
                    match fields.choose(&mut rng) {
                        Some(&(o, l)) => (o, l),
                        None => (rng.gen_range(HEADER_LEN.min(len - 1)..len), 0),
                    }
                }
            };
            let value = recipe
                .value
                .map(|v| v as u16)
                .unwrap_or_else(|| interesting_u16(&mut rng, current));
            write_bytes(&mut out, pos, &value.to_be_bytes());
        }
        MutationKind::Truncate => {
            let keep = recipe.offset.unwrap_or_else(|| rng.gen_range(1..=len));
            out.truncate(keep.max(1));
        }
        MutationKind::HavocStack => {
            let depth = recipe.count.unwrap_or_else(|| rng.gen_range(1..=4)).max(1);
            out = havoc(input, recipe.rng_seed, depth);
        }
    }

    out.truncate(len * MAX_GROWTH);
    if out.is_empty() {
        out.push(input[0]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HavocOptions {
    /// Re-pin bytes 0-3 to "OCSC" after the stack is applied.
    pub preserve_magic: bool,
}

/// The recipes [`havoc`] applies for a given seed and depth.
pub fn havoc_recipes(rng_seed: u64, depth: usize) -> Vec<MutationRecipe> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed ^ 0x6a09_e667_f3bc_c908);
    let total: u32 = MutationKind::ALL.iter().map(|k| k.havoc_weight()).sum();
    (0..depth)
        .map(|_| {
            let mut roll = rng.gen_range(0..total);
            let kind = *MutationKind::ALL
                .iter()
                .find(|k| {
                    let w = k.havoc_weight();
                    if roll < w {
                        true
                    } else {
                        roll -= w;
                        false
                    }
                })
                .unwrap();
            MutationRecipe::new(kind, rng.gen())
        })
        .collect()
}

pub fn havoc(input: &[u8], rng_seed: u64, stack_depth: usize) -> Vec<u8> {
    havoc_with(input, None, rng_seed, stack_depth, HavocOptions::default())
}

pub fn havoc_with(
    input: &[u8],
    donor: Option<&[u8]>,
    rng_seed: u64,
    stack_depth: usize,
    opts: HavocOptions,
) -> Vec<u8> {
    let cap = input.len() * MAX_GROWTH;
    let mut out = input.to_vec();
    for recipe in havoc_recipes(rng_seed, stack_depth) {
        if let Ok(next) = mutate_with_donor(&out, donor, &recipe) {
            out = next;
        }
        out.truncate(cap);
    }
    if opts.preserve_magic && !input.is_empty() {
        let n = out.len().min(MAGIC.len());
        out[..n].copy_from_slice(&MAGIC[..n]);
        out.extend_from_slice(&MAGIC[n..]);
        out.truncate(cap.max(MAGIC.len()));
    }
    out
}

fn interesting_byte(rng: &mut ChaCha8Rng) -> u8 {
    if rng.gen_bool(0.75) {
        *INTERESTING_BYTES.choose(rng).unwrap()
    } else {
        rng.gen()
    }
}

fn interesting_u16(rng: &mut ChaCha8Rng, actual: u16) -> u16 {
    match rng.gen_range(0..8) {
        0 => actual.wrapping_add(1),
        1 => actual.wrapping_sub(1),
        2 => rng.gen(),
        _ => *INTERESTING_U16.choose(rng).unwrap(),
    }
}

fn write_bytes(out: &mut Vec<u8>, pos: usize, bytes: &[u8]) {
    if out.len() < bytes.len() {
        out.resize(bytes.len(), 0);
    }
    let pos = pos.min(out.len() - bytes.len());
    out[pos..pos + bytes.len()].copy_from_slice(bytes);
}

/// (absolute offset of the length field, current length) for each narrow
/// TLV reachable in the frame's body.
pub(crate) fn tlv_length_offsets(frame: &[u8]) -> Vec<(usize, u16)> {
    let mut out = Vec::new();
    if frame.len() <= HEADER_LEN {
        return out;
    }
    let body = &frame[HEADER_LEN..];
    let mut pos = 0;
    while body.len() - pos >= 4 {
        let ty = u16::from_be_bytes([body[pos], body[pos + 1]]);
        let len = u16::from_be_bytes([body[pos + 2], body[pos + 3]]);
        if ty & 0x8000 != 0 || len as usize > body.len() - pos - 4 {
            break;
        }
        out.push((HEADER_LEN + pos + 2, len));
        pos += 4 + len as usize;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{build_progress_status, reference, serialize, Profile};

    fn golden() -> Vec<u8> {
        reference::script_deploy_frame()
    }

    #[test]
    fn body_len_zero_only_touches_bytes_6_7() {
        let input = golden();
        let recipe = MutationRecipe::new(MutationKind::LengthFieldSet, 1)
            .offset(BODY_LEN_OFFSET)
            .value(0);
        let out = mutate(&input, &recipe).unwrap();
        assert_eq!(&out[6..8], &[0, 0]);
        assert_eq!(out[..6], input[..6]);
        assert_eq!(out[8..], input[8..]);
    }

    #[test]
    fn body_len_six_on_status_frame() {
        let input =
            serialize(&build_progress_status([0, 0, 0, 0x32], "50%", &Profile::default()).unwrap())
                .unwrap();
        let recipe = MutationRecipe::new(MutationKind::LengthFieldSet, 9)
            .offset(BODY_LEN_OFFSET)
            .value(6);
        let out = mutate(&input, &recipe).unwrap();
        assert_eq!(&out[6..8], &[0x06, 0x00]);
        let diffs = (0..input.len()).filter(|&i| input[i] != out[i]).count();
        assert_eq!(diffs, 1);
    }

    #[test]
    fn every_kind_is_deterministic_and_bounded() {
        let input = golden();
        for kind in MutationKind::ALL {
            for seed in 0..50 {
                let recipe = MutationRecipe::new(kind, seed);
                let a = mutate(&input, &recipe).unwrap();
                let b = mutate(&input, &recipe).unwrap();
                assert_eq!(a, b, "{kind:?} seed {seed}");
                assert!(!a.is_empty() && a.len() <= input.len() * MAX_GROWTH);
            }
        }
    }

    #[test]
    fn empty_input_is_rejected() {
        for kind in MutationKind::ALL {
            assert_eq!(
                mutate(&[], &MutationRecipe::new(kind, 0)),
                Err(MutateError::EmptyInput(kind))
            );
        }
    }

    #[test]
    fn tiny_inputs_stay_in_bounds() {
        for kind in MutationKind::ALL {
            for seed in 0..20 {
                let out = mutate(&[0x41], &MutationRecipe::new(kind, seed)).unwrap();
                assert!((1..=4).contains(&out.len()), "{kind:?} -> {}", out.len());
            }
        }
    }

    #[test]
    fn havoc_depth_one_is_a_single_mutate() {
        let input = golden();
        for seed in 0..100 {
            let recipe = &havoc_recipes(seed, 1)[0];
            assert_eq!(havoc(&input, seed, 1), mutate(&input, recipe).unwrap());
        }
    }

    #[test]
    fn havoc_replays_and_pins_magic() {
        let input = golden();
        let opts = HavocOptions {
            preserve_magic: true,
        };
        for seed in 0..300 {
            let a = havoc_with(&input, None, seed, 4, opts);
            let b = havoc_with(&input, None, seed, 4, opts);
            assert_eq!(a, b);
            assert_eq!(&a[..4], b"OCSC");
        }
    }

    #[test]
    fn tlv_length_offsets_on_golden() {
        assert_eq!(tlv_length_offsets(&golden()), vec![(40, 40), (84, 148)]);
    }

    #[test]
    fn splice_uses_donor() {
        let recipe = MutationRecipe::new(MutationKind::Splice, 3).offset(2);
        let out = mutate_with_donor(b"AAAA", Some(b"BBBBBBBB"), &recipe).unwrap();
        assert!(out.starts_with(b"AA"));
        assert!(out[2..].iter().all(|&b| b == b'B'));
    }
}
