//! Client key material: an ed25519 signing key plus the owner's chameleon
//! parameters (with trapdoor).

use ed25519_dalek::{SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore};

use crate::chf::{ChameleonParameters, ChfError};
use crate::codec::{DecodeError, Reader, Writer};
use crate::digest::{inner_hash, Digest};

/// 32-byte account address: the hash of the signing public key.
pub type Address = Digest;

pub fn address_of(public_key: &VerifyingKey) -> Address {
    inner_hash(public_key.as_bytes())
}

#[derive(Clone, Debug)]
pub struct ClientKeys {
    pub signing: SigningKey,
    pub chf: ChameleonParameters,
}

impl ClientKeys {
    pub fn generate<R: RngCore + CryptoRng>(security_bits: u64, rng: &mut R) -> Result<Self, ChfError> {
        let signing = SigningKey::generate(rng);
        let chf = ChameleonParameters::generate(security_bits, rng)?;
        Ok(Self { signing, chf })
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.signing.verifying_key()
    }

    pub fn address(&self) -> Address {
        address_of(&self.verifying_key())
    }

    /// Secret key file contents: signing seed followed by the parameters
    /// including `tk`.
    pub fn encode_secret(&self) -> Result<Vec<u8>, ChfError> {
        let mut w = Writer::new();
        w.bytes(self.signing.as_bytes()).bytes(&self.chf.encode_secret()?);
        Ok(w.into_bytes())
    }

    pub fn decode_secret(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let seed: [u8; 32] = r
            .fixed_field(32, "signing key")?
            .try_into()
            .expect("length checked");
        let chf = ChameleonParameters::decode_secret(r.bytes("chf parameters")?)?;
        r.finish()?;
        Ok(Self {
            signing: SigningKey::from_bytes(&seed),
            chf,
        })
    }
}
