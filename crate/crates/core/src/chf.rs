//! Discrete-log chameleon hash over the prime-order subgroup of a safe-prime
//! group.
//!
//! With public parameters `(g, p, q, hk = g^tk)` and check string `(r, s)`:
//!
//! ```text
//! e  = H(m || enc(r)) mod q
//! ch = (r - (hk^e * g^s mod p)) mod q
//! digest = H(ch as fixed-width big-endian)
//! ```
//!
//! The trapdoor holder rewrites `(r, s)` for a new message by picking a fresh
//! `k`, setting `r' = ch + (g^k mod p)` and solving `s' = k - e' * tk`, so that
//! `hk^e' * g^s' = g^k` and the same `ch` falls out.

use std::fmt;

use num_bigint::{BigUint, RandBigInt};
use num_traits::{One, Zero};
use rand::RngCore;
use thiserror::Error;

use crate::codec::{biguint_magnitude, DecodeError, Reader, Writer};
use crate::digest::{inner_hash, Digest};
use crate::prime::{is_probable_prime, random_safe_prime};

/// Smallest accepted modulus size for generated parameters.
pub const MIN_SECURITY_BITS: u64 = 16;
/// Modulus size used for real accounts.
pub const DEFAULT_SECURITY_BITS: u64 = 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChfError {
    #[error("security parameter of {bits} bits is below the minimum of {min}")]
    InsecureSize { bits: u64, min: u64 },
    #[error("trapdoor key missing: collisions can only be found by the key owner")]
    MissingTrapdoor,
    #[error("check string component {0} is not in [0, q)")]
    CheckStringOutOfRange(&'static str),
    #[error("invalid chameleon parameters: {0}")]
    InvalidParameters(&'static str),
}

/// Per-account chameleon hash keying material. `tk` only ever exists on the
/// owner's machine; everything published is [`sanitize`](Self::sanitize)d.
#[derive(Clone, PartialEq, Eq)]
pub struct ChameleonParameters {
    pub g: BigUint,
    pub p: BigUint,
    pub q: BigUint,
    pub hk: BigUint,
    pub tk: Option<BigUint>,
}

impl fmt::Debug for ChameleonParameters {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChameleonParameters")
            .field("g", &self.g)
            .field("p", &self.p)
            .field("q", &self.q)
            .field("hk", &self.hk)
            .field("tk", &self.tk.as_ref().map(|_| "<secret>"))
            .finish()
    }
}

/// The `(r, s)` randomizer that travels with every chameleon hash.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct CheckString {
    pub r: BigUint,
    pub s: BigUint,
}

impl ChameleonParameters {
    /// Key generation: a fresh safe-prime group of `security_bits` bits, a
    /// random generator of the order-q subgroup, and a random trapdoor.
    pub fn generate(security_bits: u64, rng: &mut impl RngCore) -> Result<Self, ChfError> {
        if security_bits < MIN_SECURITY_BITS {
            return Err(ChfError::InsecureSize {
                bits: security_bits,
                min: MIN_SECURITY_BITS,
            });
        }
        let (p, q) = random_safe_prime(security_bits, rng);
        Ok(Self::generate_in_group(p, q, rng))
    }

    /// Fresh generator and trapdoor inside an existing safe-prime group.
    /// `p` and `q` are trusted to satisfy `p = 2q + 1` with both prime.
    pub fn generate_in_group(p: BigUint, q: BigUint, rng: &mut impl RngCore) -> Self {
        let two = BigUint::from(2u8);
        let g = loop {
            // Squares generate the quadratic residues, which for a safe prime
            // are exactly the order-q subgroup.
            let h = rng.gen_biguint_range(&two, &(&p - 1u8));
            let g = h.modpow(&two, &p);
            if !g.is_one() {
                break g;
            }
        };
        let tk = random_scalar(&q, rng);
        let hk = g.modpow(&tk, &p);
        Self {
            g,
            p,
            q,
            hk,
            tk: Some(tk),
        }
    }

    /// Builds parameters from explicit values, deriving `hk = g^tk mod p`.
    pub fn from_trapdoor(g: BigUint, p: BigUint, q: BigUint, tk: BigUint) -> Result<Self, ChfError> {
        let hk = g.modpow(&tk, &p);
        let params = Self {
            g,
            p,
            q,
            hk,
            tk: Some(tk),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn has_trapdoor(&self) -> bool {
        self.tk.is_some()
    }

    /// Copy with the trapdoor removed, ready for publication.
    pub fn sanitize(&self) -> Self {
        Self {
            tk: None,
            ..self.clone()
        }
    }

    /// Checks every structural invariant, including primality of `p` and `q`.
    pub fn validate(&self) -> Result<(), ChfError> {
        let bad = ChfError::InvalidParameters;
        if self.p != &self.q * 2u8 + 1u8 {
            return Err(bad("p != 2q + 1"));
        }
        // Primality checks use a fixed-seed generator so validation stays a
        // pure function of the parameters.
        let mut rng = <rand_chacha::ChaCha20Rng as rand::SeedableRng>::seed_from_u64(0);
        if !is_probable_prime(&self.q, &mut rng) || !is_probable_prime(&self.p, &mut rng) {
            return Err(bad("p or q not prime"));
        }
        if self.g <= BigUint::one() || self.g >= self.p {
            return Err(bad("generator out of range"));
        }
        if !self.g.modpow(&self.q, &self.p).is_one() {
            return Err(bad("generator order is not q"));
        }
        if self.hk <= BigUint::one() || self.hk >= self.p || !self.hk.modpow(&self.q, &self.p).is_one() {
            return Err(bad("hash key not in the order-q subgroup"));
        }
        if let Some(tk) = &self.tk {
            if tk.is_zero() || tk >= &self.q {
                return Err(bad("trapdoor out of range"));
            }
            if self.g.modpow(tk, &self.p) != self.hk {
                return Err(bad("hk != g^tk"));
            }
        }
        Ok(())
    }

    /// Bytes needed to hold any residue mod q.
    pub fn scalar_width(&self) -> usize {
        (self.q.bits() as usize).div_ceil(8)
    }

    /// Public wire form: g, p, q, hk. The trapdoor is never written.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write_public(&mut w);
        w.into_bytes()
    }

    fn write_public(&self, w: &mut Writer) {
        w.biguint(&self.g).biguint(&self.p).biguint(&self.q).biguint(&self.hk);
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let params = Self::read_public(&mut r)?;
        r.finish()?;
        Ok(params)
    }

    fn read_public(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            g: r.biguint("g")?,
            p: r.biguint("p")?,
            q: r.biguint("q")?,
            hk: r.biguint("hk")?,
            tk: None,
        })
    }

    /// Owner-side form for the local key file: public fields then tk.
    pub fn encode_secret(&self) -> Result<Vec<u8>, ChfError> {
        let tk = self.tk.as_ref().ok_or(ChfError::MissingTrapdoor)?;
        let mut w = Writer::new();
        self.write_public(&mut w);
        w.biguint(tk);
        Ok(w.into_bytes())
    }

    pub fn decode_secret(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let mut params = Self::read_public(&mut r)?;
        params.tk = Some(r.biguint("tk")?);
        r.finish()?;
        Ok(params)
    }
}

impl CheckString {
    /// Both components uniform in [1, q-1].
    pub fn random(params: &ChameleonParameters, rng: &mut impl RngCore) -> Self {
        Self {
            r: random_scalar(&params.q, rng),
            s: random_scalar(&params.q, rng),
        }
    }

    pub fn in_range(&self, q: &BigUint) -> bool {
        &self.r < q && &self.s < q
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.biguint(&self.r).biguint(&self.s);
        w.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut rd = Reader::new(bytes);
        let cs = Self {
            r: rd.biguint("r")?,
            s: rd.biguint("s")?,
        };
        rd.finish()?;
        Ok(cs)
    }
}

fn check_range(check: &CheckString, q: &BigUint) -> Result<(), ChfError> {
    if &check.r >= q {
        return Err(ChfError::CheckStringOutOfRange("r"));
    }
    if &check.s >= q {
        return Err(ChfError::CheckStringOutOfRange("s"));
    }
    Ok(())
}

fn random_scalar(q: &BigUint, rng: &mut impl RngCore) -> BigUint {
    rng.gen_biguint_range(&BigUint::one(), q)
}

/// `e = H(m || len(r) || r) mod q`
fn challenge(q: &BigUint, message: &[u8], r: &BigUint) -> BigUint {
    let mut w = Writer::new();
    w.raw(message).biguint(r);
    BigUint::from_bytes_be(inner_hash(w.as_slice()).as_bytes()) % q
}

/// `(a - b) mod q` for `a < q`, any `b`.
fn sub_mod(a: &BigUint, b: &BigUint, q: &BigUint) -> BigUint {
    let b = b % q;
    if a >= &b {
        a - &b
    } else {
        a + q - &b
    }
}

/// The group element `ch` before it is folded into a digest.
fn raw_hash(params: &ChameleonParameters, check: &CheckString, message: &[u8]) -> BigUint {
    let e = challenge(&params.q, message, &check.r);
    let t = params.hk.modpow(&e, &params.p) * params.g.modpow(&check.s, &params.p) % &params.p;
    sub_mod(&check.r, &t, &params.q)
}

fn fold(params: &ChameleonParameters, ch: &BigUint) -> Digest {
    let width = params.scalar_width();
    let mag = biguint_magnitude(ch);
    let mut buf = vec![0u8; width - mag.len()];
    buf.extend_from_slice(&mag);
    inner_hash(&buf)
}

/// Hashes `message` under `params` with randomizer `check`. Never reads `tk`.
pub fn chameleon_hash(
    params: &ChameleonParameters,
    check: &CheckString,
    message: &[u8],
) -> Result<Digest, ChfError> {
    check_range(check, &params.q)?;
    Ok(fold(params, &raw_hash(params, check, message)))
}

/// Recompute-and-compare verification. Malformed input is simply `false`.
pub fn verify(params: &ChameleonParameters, message: &[u8], digest: &Digest, check: &CheckString) -> bool {
    matches!(chameleon_hash(params, check, message), Ok(d) if &d == digest)
}

/// Trapdoor collision: a new check string under which `new_message` hashes
/// to the same digest `old_message` had under `old_check`.
pub fn find_collision(
    params: &ChameleonParameters,
    old_message: &[u8],
    old_check: &CheckString,
    new_message: &[u8],
    rng: &mut impl RngCore,
) -> Result<CheckString, ChfError> {
    let tk = params.tk.as_ref().ok_or(ChfError::MissingTrapdoor)?;
    check_range(old_check, &params.q)?;
    let q = &params.q;
    let ch = raw_hash(params, old_check, old_message);
    let k = random_scalar(q, rng);
    let r = (ch + params.g.modpow(&k, &params.p)) % q;
    let e = challenge(q, new_message, &r);
    let s = sub_mod(&k, &(e * tk), q);
    Ok(CheckString { r, s })
}
