use std::fmt;
use std::str::FromStr;

use sha1::{Digest, Sha1};

use super::CodecError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DigestAlgo {
    Sha1,
}

impl DigestAlgo {
    pub fn hex_len(self) -> usize {
        match self {
            DigestAlgo::Sha1 => 40,
        }
    }

    pub fn digest_upper_hex(self, data: &[u8]) -> String {
        match self {
            DigestAlgo::Sha1 => hex::encode_upper(Sha1::digest(data)),
        }
    }
}

impl FromStr for DigestAlgo {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sha1" => Ok(DigestAlgo::Sha1),
            other => Err(CodecError::UnsupportedAlgo(other.to_string())),
        }
    }
}

impl fmt::Display for DigestAlgo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DigestAlgo::Sha1 => f.write_str("sha1"),
        }
    }
}

/// Uppercase hex digest, the form carried in CAC-move commands.
pub fn compute_digest(data: &[u8], algo: &str) -> Result<String, CodecError> {
    Ok(algo.parse::<DigestAlgo>()?.digest_upper_hex(data))
}
