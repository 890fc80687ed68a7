//! Brute-force reference for the discrete-log chameleon hash in groups small
//! enough for `u64` arithmetic. Written from the formulas alone; shares no
//! code with the library.

use sha3::{Digest as _, Sha3_256};

#[derive(Clone, Copy, Debug)]
pub struct TinyGroup {
    pub g: u64,
    pub p: u64,
    pub q: u64,
    pub tk: u64,
}

pub fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1 % m;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * base % m;
        }
        base = base * base % m;
        exp >>= 1;
    }
    acc
}

fn minimal_be(v: u64) -> Vec<u8> {
    v.to_be_bytes().into_iter().skip_while(|b| *b == 0).collect()
}

impl TinyGroup {
    pub fn hk(&self) -> u64 {
        pow_mod(self.g, self.tk, self.p)
    }

    /// `SHA3(m || be32(len r) || r)` read as a big-endian integer mod q.
    pub fn challenge(&self, message: &[u8], r: u64) -> u64 {
        let r_bytes = minimal_be(r);
        let mut h = Sha3_256::new();
        h.update(message);
        h.update((r_bytes.len() as u32).to_be_bytes());
        h.update(&r_bytes);
        h.finalize().iter().fold(0u64, |acc, b| (acc * 256 + u64::from(*b)) % self.q)
    }

    pub fn raw(&self, message: &[u8], r: u64, s: u64) -> u64 {
        let e = self.challenge(message, r);
        let t = pow_mod(self.hk(), e, self.p) * pow_mod(self.g, s, self.p) % self.p;
        (r + self.q - t % self.q) % self.q
    }

    pub fn digest(&self, message: &[u8], r: u64, s: u64) -> [u8; 32] {
        let width = (64 - self.q.leading_zeros() as usize).div_ceil(8);
        let ch = self.raw(message, r, s).to_be_bytes();
        Sha3_256::digest(&ch[8 - width..]).into()
    }

    /// Every check string the collision procedure can output when run with
    /// this group's trapdoor, one per nonce `k` in `[1, q-1]`.
    pub fn collision_outputs(&self, old: &[u8], old_r: u64, old_s: u64, new: &[u8]) -> Vec<(u64, u64)> {
        let ch = self.raw(old, old_r, old_s);
        (1..self.q)
            .map(|k| {
                let r = (ch + pow_mod(self.g, k, self.p)) % self.q;
                let e = self.challenge(new, r);
                let s = (k + self.q * self.q - e * self.tk % self.q) % self.q;
                (r, s)
            })
            .collect()
    }
}
