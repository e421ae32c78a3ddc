//! Word-sized fast paths and a Lehmer inverse.
//!
//! Everything here computes exactly what the generic `BigUint` code would;
//! the tests pin that down.

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};

#[inline]
pub(crate) fn add_mod(a: u64, b: u64, n: u64) -> u64 {
    let (s, overflow) = a.overflowing_add(b);
    if overflow || s >= n {
        s.wrapping_sub(n)
    } else {
        s
    }
}

#[inline]
pub(crate) fn sub_mod(a: u64, b: u64, n: u64) -> u64 {
    if a >= b {
        a - b
    } else {
        a.wrapping_sub(b).wrapping_add(n)
    }
}

#[inline]
pub(crate) fn mul_mod(a: u64, b: u64, n: u64) -> u64 {
    ((a as u128 * b as u128) % n as u128) as u64
}

fn pow_mod(mut b: u64, mut e: u64, n: u64) -> u64 {
    let mut acc = 1 % n;
    b %= n;
    while e > 0 {
        if e & 1 == 1 {
            acc = mul_mod(acc, b, n);
        }
        b = mul_mod(b, b, n);
        e >>= 1;
    }
    acc
}

/// Inverse of `a` modulo `n`, or `Err(gcd(a, n))`.
pub(crate) fn inv_u64(a: u64, n: u64) -> Result<u64, u64> {
    // Cofactor magnitudes only; their signs alternate with each step.
    let (mut r0, mut r1) = (n, a % n);
    let (mut t0, mut t1) = (0u64, 1u64);
    let mut steps = 0u32;
    while r1 != 0 {
        let q = r0 / r1;
        (r0, r1) = (r1, r0 - q * r1);
        (t0, t1) = (t1, t0 + q * t1);
        steps += 1;
    }
    if r0 != 1 {
        return Err(r0);
    }
    Ok(if steps % 2 == 1 { t0 } else { n - t0 })
}

// Bases that make Miller-Rabin exact below 2^64.
const MR_BASES_64: [u64; 7] = [2, 325, 9375, 28178, 450775, 9780504, 1795265022];

/// Deterministic primality for word-sized integers.
pub(crate) fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n % p == 0 {
            return n == p;
        }
    }
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    'base: for &a in MR_BASES_64.iter() {
        let a = a % n;
        if a == 0 {
            continue;
        }
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'base;
            }
        }
        return false;
    }
    true
}

/// Modular inverse by Lehmer's extended gcd. Falls back to word arithmetic
/// for moduli that fit in 64 bits.
pub(crate) fn mod_inv(a: &BigUint, m: &BigUint) -> Option<BigUint> {
    if let (Some(a), Some(m)) = (a.to_u64(), m.to_u64()) {
        if m == 0 {
            return None;
        }
        return inv_u64(a, m).ok().map(BigUint::from);
    }
    let mut u = m.clone();
    let mut v = a % m;
    // u = su * a and v = sv * a (mod m)
    let mut su = BigInt::zero();
    let mut sv = BigInt::one();
    while !v.is_zero() {
        // With 62-bit leading chunks every sum and product below fits an i64.
        let shift = u.bits().saturating_sub(62);
        let mut x = (&u >> shift).to_i64().unwrap_or(0);
        let mut y = (&v >> shift).to_i64().unwrap_or(0);
        let (mut ca, mut cb, mut cc, mut cd) = (1i64, 0i64, 0i64, 1i64);
        while y + cc > 0 && y + cd > 0 {
            let q = (x + ca) / (y + cc);
            if q != (x + cb) / (y + cd) {
                break;
            }
            let (Some(qc), Some(qd)) = (q.checked_mul(cc), q.checked_mul(cd)) else {
                break;
            };
            (ca, cc) = (cc, ca - qc);
            (cb, cd) = (cd, cb - qd);
            (x, y) = (y, x - q * y);
        }
        if cb == 0 {
            let (q, r) = u.div_rem(&v);
            let next = &su - BigInt::from_biguint(Sign::Plus, q) * &sv;
            (u, v) = (v, r);
            (su, sv) = (sv, next);
        } else {
            let ui = BigInt::from_biguint(Sign::Plus, u);
            let vi = BigInt::from_biguint(Sign::Plus, v);
            u = (&ui * ca + &vi * cb).to_biguint()?;
            v = (&ui * cc + &vi * cd).to_biguint()?;
            let next_u = &su * ca + &sv * cb;
            sv = &su * cc + &sv * cd;
            su = next_u;
        }
    }
    if !u.is_one() {
        return None;
    }
    let m_int = BigInt::from_biguint(Sign::Plus, m.clone());
    su.mod_floor(&m_int).to_biguint()
}

/// Affine point over a word-sized ring, `None` being the identity.
pub(crate) type SmallPoint = Option<(u64, u64)>;

/// Ring operations spent by small-curve arithmetic, tallied locally and
/// flushed to the counters once.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct SmallTally {
    pub ring_add: u64,
    pub ring_mul: u64,
    pub ring_inv: u64,
    pub point_add: u64,
    pub point_double: u64,
}

/// Tangent-chord arithmetic over Z_n with n < 2^64, mirroring the generic
/// affine formulas step for step, including the ring operations counted
/// before a failed inversion.
pub(crate) struct SmallCurve {
    pub n: u64,
    pub a: u64,
    pub tally: SmallTally,
}

impl SmallCurve {
    pub fn double(&mut self, p: SmallPoint) -> Result<SmallPoint, u64> {
        let Some((x, y)) = p else { return Ok(None) };
        if y == 0 {
            return Ok(None);
        }
        let n = self.n;
        let t = &mut self.tally;
        t.point_double += 1;
        t.ring_inv += 1;
        t.ring_mul += 2;
        t.ring_add += 2;
        let num = add_mod(mul_mod(mul_mod(x, x, n), 3, n), self.a, n);
        let d = inv_u64(add_mod(y, y, n), n)?;
        t.ring_mul += 3;
        t.ring_add += 4;
        let slope = mul_mod(num, d, n);
        let x3 = sub_mod(mul_mod(slope, slope, n), add_mod(x, x, n), n);
        let y3 = sub_mod(mul_mod(slope, sub_mod(x, x3, n), n), y, n);
        Ok(Some((x3, y3)))
    }

    pub fn add(&mut self, p: SmallPoint, q: SmallPoint) -> Result<SmallPoint, u64> {
        let (x1, y1, x2, y2) = match (p, q) {
            (None, _) => return Ok(q),
            (_, None) => return Ok(p),
            (Some((x1, y1)), Some((x2, y2))) => (x1, y1, x2, y2),
        };
        let n = self.n;
        if x1 == x2 {
            if y1 == y2 {
                return self.double(p);
            }
            self.tally.ring_add += 1;
            if add_mod(y1, y2, n) == 0 {
                return Ok(None);
            }
        }
        let t = &mut self.tally;
        t.point_add += 1;
        t.ring_inv += 1;
        t.ring_add += 2;
        let d = inv_u64(sub_mod(x2, x1, n), n)?;
        t.ring_mul += 3;
        t.ring_add += 4;
        let slope = mul_mod(sub_mod(y2, y1, n), d, n);
        let x3 = sub_mod(sub_mod(mul_mod(slope, slope, n), x1, n), x2, n);
        let y3 = sub_mod(mul_mod(slope, sub_mod(x1, x3, n), n), y1, n);
        Ok(Some((x3, y3)))
    }

    pub fn scalar_mul(&mut self, p: SmallPoint, k: &BigUint) -> Result<SmallPoint, u64> {
        let mut acc = None;
        for i in (0..k.bits()).rev() {
            acc = self.double(acc)?;
            if k.bit(i) {
                acc = self.add(acc, p)?;
            }
        }
        Ok(acc)
    }
}
