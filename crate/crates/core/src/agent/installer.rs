use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::DigestAlgo;

/// Stand-in for the vendor signing key. Not a real signature scheme.
pub const TEST_KEY: &[u8] = b"ocsc-mock-vendor-test-key";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstallerPackage {
    pub version: String,
    pub payload: Vec<u8>,
    pub digest_hex: String,
    pub signature: Option<String>,
}

impl InstallerPackage {
    /// A package whose digest and signature both check out.
    pub fn signed(version: &str, payload: &[u8]) -> Self {
        let digest_hex = DigestAlgo::Sha1.digest_upper_hex(payload);
        InstallerPackage {
            version: version.to_string(),
            payload: payload.to_vec(),
            signature: Some(sign_payload_digest(&digest_hex)),
            digest_hex,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstallerVerdict {
    Accept,
    BadDigest,
    BadSignature,
    Downgrade,
}

impl InstallerVerdict {
    pub fn accepted(self) -> bool {
        self == InstallerVerdict::Accept
    }
}

impl fmt::Display for InstallerVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InstallerVerdict::Accept => "accept",
            InstallerVerdict::BadDigest => "reject(bad_digest)",
            InstallerVerdict::BadSignature => "reject(bad_signature)",
            InstallerVerdict::Downgrade => "reject(downgrade)",
        })
    }
}

pub fn sign_payload_digest(digest_hex: &str) -> String {
    let mut material = TEST_KEY.to_vec();
    material.extend_from_slice(digest_hex.to_ascii_uppercase().as_bytes());
    DigestAlgo::Sha1.digest_upper_hex(&material)
}

/// Digest and signature are checked. The version is only compared when
/// `enforce_version_order` is set, which the stock agent does not do.
pub fn check_installer(
    pkg: &InstallerPackage,
    installed_version: &str,
    enforce_version_order: bool,
) -> InstallerVerdict {
    let actual = DigestAlgo::Sha1.digest_upper_hex(&pkg.payload);
    if !actual.eq_ignore_ascii_case(&pkg.digest_hex) {
        return InstallerVerdict::BadDigest;
    }
    match &pkg.signature {
        Some(sig) if sig.eq_ignore_ascii_case(&sign_payload_digest(&pkg.digest_hex)) => {}
        _ => return InstallerVerdict::BadSignature,
    }
    if enforce_version_order && compare_versions(&pkg.version, installed_version) == Ordering::Less
    {
        return InstallerVerdict::Downgrade;
    }
    InstallerVerdict::Accept
}

/// Dotted numeric comparison; missing components count as zero.
pub fn compare_versions(a: &str, b: &str) -> Ordering {
    let parts = |s: &str| -> Vec<u64> {
        s.split('.')
            .map(|p| p.trim().parse::<u64>().unwrap_or(0))
            .collect()
    };
    let (a, b) = (parts(a), parts(b));
    for i in 0..a.len().max(b.len()) {
        let ord = a.get(i).unwrap_or(&0).cmp(b.get(i).unwrap_or(&0));
        if ord != Ordering::Equal {
            return ord;
        }
    }
    Ordering::Equal
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downgrade_is_accepted_by_default() {
        let pkg = InstallerPackage::signed("4.8", b"installer bits");
        assert_eq!(
            check_installer(&pkg, "4.9", false),
            InstallerVerdict::Accept
        );
        assert_eq!(
            check_installer(&pkg, "4.9", true),
            InstallerVerdict::Downgrade
        );
        let newer = InstallerPackage::signed("4.10.1", b"x");
        assert_eq!(
            check_installer(&newer, "4.9.00086", true),
            InstallerVerdict::Accept
        );
    }

    #[test]
    fn corrupted_payload_and_unsigned_are_rejected() {
        let mut pkg = InstallerPackage::signed("4.8", b"installer bits");
        pkg.payload[0] ^= 1;
        assert_eq!(
            check_installer(&pkg, "4.9", false),
            InstallerVerdict::BadDigest
        );

        let mut unsigned = InstallerPackage::signed("4.8", b"installer bits");
        unsigned.signature = None;
        assert_eq!(
            check_installer(&unsigned, "4.9", false),
            InstallerVerdict::BadSignature
        );
        unsigned.signature = Some("00".repeat(20));
        assert_eq!(
            check_installer(&unsigned, "4.9", false),
            InstallerVerdict::BadSignature
        );
    }

    #[test]
    fn version_ordering() {
        assert_eq!(compare_versions("4.8", "4.9.00086"), Ordering::Less);
        assert_eq!(compare_versions("4.10", "4.9"), Ordering::Greater);
        assert_eq!(compare_versions("4.9.0", "4.9"), Ordering::Equal);
    }
}
