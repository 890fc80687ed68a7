//! Primality testing and safe-prime search for chameleon hash groups.

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use rand::RngCore;

/// Bases that make Miller-Rabin deterministic below 3.3 * 10^24.
const DETERMINISTIC_BASES: [u32; 13] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41];

/// Random Miller-Rabin rounds used on top of the fixed bases for large inputs.
const RANDOM_ROUNDS: usize = 24;

const SIEVE_LIMIT: u32 = 1 << 14;
const SIEVE_WINDOW: usize = 1 << 13;

fn small_primes() -> Vec<u32> {
    let limit = SIEVE_LIMIT as usize;
    let mut composite = vec![false; limit + 1];
    let mut out = Vec::new();
    for n in 2..=limit {
        if !composite[n] {
            out.push(n as u32);
            let mut m = n * n;
            while m <= limit {
                composite[m] = true;
                m += n;
            }
        }
    }
    out
}

fn miller_rabin_round(n: &BigUint, n_minus_one: &BigUint, d: &BigUint, s: u64, base: &BigUint) -> bool {
    let mut x = base.modpow(d, n);
    if x.is_one() || &x == n_minus_one {
        return true;
    }
    for _ in 1..s {
        x = x.modpow(&BigUint::from(2u8), n);
        if &x == n_minus_one {
            return true;
        }
        if x.is_one() {
            return false;
        }
    }
    false
}

/// Miller-Rabin. Deterministic for n < 3.3e24, probabilistic (error below
/// 2^-48 on top of the fixed bases) above that.
pub fn is_probable_prime(n: &BigUint, rng: &mut impl RngCore) -> bool {
    let two = BigUint::from(2u8);
    if n < &two {
        return false;
    }
    if let Some(small) = n.to_u64() {
        if small < 4 {
            return true;
        }
    }
    if n.is_even() {
        return false;
    }
    for &p in &DETERMINISTIC_BASES {
        let p = BigUint::from(p);
        if n == &p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }

    let n_minus_one = n - 1u8;
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;

    for &b in &DETERMINISTIC_BASES {
        if !miller_rabin_round(n, &n_minus_one, &d, s, &BigUint::from(b)) {
            return false;
        }
    }
    if n.bits() > 80 {
        for _ in 0..RANDOM_ROUNDS {
            let base = rng.gen_biguint_range(&two, &n_minus_one);
            if !miller_rabin_round(n, &n_minus_one, &d, s, &base) {
                return false;
            }
        }
    }
    true
}

/// Finds a safe prime `p = 2q + 1` whose bit length is exactly `bits`.
/// Returns `(p, q)`. `bits` must be at least 4.
pub fn random_safe_prime(bits: u64, rng: &mut impl RngCore) -> (BigUint, BigUint) {
    assert!(bits >= 4, "safe prime needs at least 4 bits");
    let q_bits = bits - 1;
    let q_low = BigUint::one() << (q_bits - 1);
    let q_high = BigUint::one() << q_bits;
    let primes = small_primes();

    loop {
        let mut q0 = rng.gen_biguint_range(&q_low, &q_high);
        q0 |= BigUint::one();

        let mut marked = vec![false; SIEVE_WINDOW];
        for &sp in primes.iter().skip(1) {
            let sp_big = BigUint::from(sp);
            if q0 <= sp_big {
                continue;
            }
            let sp64 = sp as u64;
            let r = (&q0 % &sp_big).to_u64().unwrap();
            let inv2 = (sp64 + 1) / 2;
            let inv4 = inv2 * inv2 % sp64;
            // q0 + 2k = 0 (mod sp)
            let k_q = (sp64 - r) % sp64 * inv2 % sp64;
            // 2(q0 + 2k) + 1 = 0 (mod sp)
            let k_p = (sp64 - (2 * r + 1) % sp64) % sp64 * inv4 % sp64;
            for start in [k_q, k_p] {
                let mut k = start as usize;
                while k < SIEVE_WINDOW {
                    marked[k] = true;
                    k += sp as usize;
                }
            }
        }

        let two = BigUint::from(2u8);
        for (k, &skip) in marked.iter().enumerate() {
            if skip {
                continue;
            }
            let q = &q0 + BigUint::from(2 * k as u64);
            if q >= q_high {
                break;
            }
            let p: BigUint = (&q << 1) + 1u8;
            // Cheap Fermat filter on p before the full tests.
            if !two.modpow(&(&p - 1u8), &p).is_one() {
                continue;
            }
            if is_probable_prime(&q, rng) && is_probable_prime(&p, rng) {
                return (p, q);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn trial_division(n: u64) -> bool {
        if n < 2 {
            return false;
        }
        let mut d = 2;
        while d * d <= n {
            if n % d == 0 {
                return false;
            }
            d += 1;
        }
        true
    }

    #[test]
    fn agrees_with_trial_division_below_20000() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for n in 0u64..20_000 {
            assert_eq!(
                is_probable_prime(&BigUint::from(n), &mut rng),
                trial_division(n),
                "n = {n}"
            );
        }
    }

    #[test]
    fn carmichael_numbers_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for n in [561u64, 1105, 1729, 2465, 2821, 6601, 8911, 3_215_031_751] {
            assert!(!is_probable_prime(&BigUint::from(n), &mut rng));
        }
    }

    #[test]
    fn known_large_prime() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        // 2^127 - 1
        let m127 = (BigUint::one() << 127u32) - 1u8;
        assert!(is_probable_prime(&m127, &mut rng));
        assert!(!is_probable_prime(&(&m127 + 2u8), &mut rng));
    }

    #[test]
    fn safe_prime_16_bits() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for _ in 0..10 {
            let (p, q) = random_safe_prime(16, &mut rng);
            assert_eq!(p.bits(), 16);
            assert_eq!(p, &q * 2u8 + 1u8);
            assert!(trial_division(p.to_u64().unwrap()));
            assert!(trial_division(q.to_u64().unwrap()));
        }
    }

    #[test]
    fn safe_prime_small_sizes() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for bits in 4..=24u64 {
            let (p, q) = random_safe_prime(bits, &mut rng);
            assert_eq!(p.bits(), bits);
            assert!(trial_division(q.to_u64().unwrap()), "bits {bits}");
            assert!(trial_division(p.to_u64().unwrap()), "bits {bits}");
        }
    }
}
