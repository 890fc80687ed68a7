use std::fmt;

use sha3::{Digest as _, Sha3_256};

/// Length in bytes of every content identifier on the chain.
pub const DIGEST_LEN: usize = 32;

/// Fixed 32-byte content identifier: TX hashes, Merkle nodes, block links and
/// account addresses all share this type.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        <[u8; DIGEST_LEN]>::try_from(bytes).ok().map(Digest)
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        hex::decode(s).ok().and_then(|b| Self::from_slice(&b))
    }

    /// Number of leading zero bits, used for the proof-of-work target.
    pub fn leading_zero_bits(&self) -> u32 {
        let mut bits = 0;
        for byte in self.0 {
            if byte == 0 {
                bits += 8;
            } else {
                bits += byte.leading_zeros();
                break;
            }
        }
        bits
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl AsRef<[u8]> for Digest {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

/// The single digest primitive used everywhere (SHA3-256).
pub fn inner_hash(data: &[u8]) -> Digest {
    Digest(Sha3_256::digest(data).into())
}

/// Hash of several byte slices concatenated, without materializing the buffer.
pub fn inner_hash_parts(parts: &[&[u8]]) -> Digest {
    let mut hasher = Sha3_256::new();
    for part in parts {
        hasher.update(part);
    }
    Digest(hasher.finalize().into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_matches_known_sha3() {
        assert_eq!(
            inner_hash(b"").to_hex(),
            "a7ffc6f8bf1ed76651c14756a061d662f580ff4de43b49fa82d80a4b80f8434a"
        );
    }

    #[test]
    fn parts_equal_concatenation() {
        assert_eq!(inner_hash_parts(&[b"ab", b"cd"]), inner_hash(b"abcd"));
    }

    #[test]
    fn leading_zeros() {
        let mut d = Digest::ZERO;
        assert_eq!(d.leading_zero_bits(), 256);
        d.0[1] = 0b0001_0000;
        assert_eq!(d.leading_zero_bits(), 11);
    }

    #[test]
    fn hex_round_trip() {
        let d = inner_hash(b"x");
        assert_eq!(Digest::from_hex(&d.to_hex()), Some(d));
        assert_eq!(Digest::from_hex("abcd"), None);
    }
}
