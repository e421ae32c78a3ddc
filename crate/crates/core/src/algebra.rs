//! Modular arithmetic over F_p, the composite ring Z_N and F_p[i]/(i^2 + 1).

use std::fmt;
use std::sync::Arc;

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use rand::{CryptoRng, Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counters;

/// Miller-Rabin rounds used for every primality decision in the crate.
pub const MR_ROUNDS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AlgebraError {
    #[error("operands live in different rings ({0} vs {1})")]
    ModulusMismatch(BigUint, BigUint),
    #[error("element is not invertible (gcd with modulus = {gcd})")]
    NotInvertible { gcd: BigUint },
    #[error("{0} is not a valid modulus")]
    InvalidModulus(BigUint),
    #[error("{0} is not prime")]
    NotPrime(BigUint),
    #[error("residue {residue} is not reduced modulo {modulus}")]
    Unreduced { residue: BigUint, modulus: BigUint },
    #[error("prime size must be at least 16 bits, got {0}")]
    PrimeTooSmall(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModulusKind {
    Prime,
    Composite,
}

#[derive(Debug)]
struct ModulusInner {
    value: BigUint,
    kind: ModulusKind,
}

/// A ring modulus. Cloning is cheap; elements keep a handle to it.
#[derive(Clone)]
pub struct Modulus(Arc<ModulusInner>);

impl Modulus {
    /// Validates `value` with [`MR_ROUNDS`] rounds of Miller-Rabin.
    pub fn prime(value: BigUint) -> Result<Modulus, AlgebraError> {
        if value < BigUint::from(2u8) {
            return Err(AlgebraError::InvalidModulus(value));
        }
        if !is_probable_prime(&value, MR_ROUNDS) {
            return Err(AlgebraError::NotPrime(value));
        }
        Ok(Modulus::new_unchecked(value, ModulusKind::Prime))
    }

    pub fn composite(value: BigUint) -> Result<Modulus, AlgebraError> {
        if value < BigUint::from(2u8) {
            return Err(AlgebraError::InvalidModulus(value));
        }
        Ok(Modulus::new_unchecked(value, ModulusKind::Composite))
    }

    pub(crate) fn new_unchecked(value: BigUint, kind: ModulusKind) -> Modulus {
        Modulus(Arc::new(ModulusInner { value, kind }))
    }

    pub fn value(&self) -> &BigUint {
        &self.0.value
    }

    pub fn kind(&self) -> ModulusKind {
        self.0.kind
    }

    pub fn bits(&self) -> u64 {
        self.0.value.bits()
    }

    /// Builds an element, rejecting residues that are not fully reduced.
    pub fn element(&self, residue: BigUint) -> Result<RingElement, AlgebraError> {
        if residue >= self.0.value {
            return Err(AlgebraError::Unreduced {
                residue,
                modulus: self.0.value.clone(),
            });
        }
        Ok(RingElement {
            residue,
            modulus: self.clone(),
        })
    }

    /// Builds an element from any integer by reducing it.
    pub fn reduce(&self, value: &BigUint) -> RingElement {
        RingElement {
            residue: value % &self.0.value,
            modulus: self.clone(),
        }
    }

    pub fn from_u64(&self, value: u64) -> RingElement {
        self.reduce(&BigUint::from(value))
    }

    pub fn zero(&self) -> RingElement {
        RingElement {
            residue: BigUint::zero(),
            modulus: self.clone(),
        }
    }

    pub fn one(&self) -> RingElement {
        self.from_u64(1)
    }

    /// Uniform element of the ring.
    pub fn random<R: RngCore + ?Sized>(&self, rng: &mut R) -> RingElement {
        let residue = rng.gen_biguint_below(&self.0.value);
        RingElement {
            residue,
            modulus: self.clone(),
        }
    }
}

impl PartialEq for Modulus {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0.value == other.0.value
    }
}

impl Eq for Modulus {}

impl fmt::Debug for Modulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Modulus({:?}, {})", self.0.kind, self.0.value)
    }
}

/// A fully reduced residue together with its modulus.
#[derive(Clone, PartialEq, Eq)]
pub struct RingElement {
    residue: BigUint,
    modulus: Modulus,
}

impl fmt::Debug for RingElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (mod {})", self.residue, self.modulus.value())
    }
}

impl RingElement {
    pub fn residue(&self) -> &BigUint {
        &self.residue
    }

    pub fn modulus(&self) -> &Modulus {
        &self.modulus
    }

    pub fn is_zero(&self) -> bool {
        self.residue.is_zero()
    }

    fn check(&self, other: &RingElement) -> Result<(), AlgebraError> {
        if self.modulus == other.modulus {
            Ok(())
        } else {
            Err(AlgebraError::ModulusMismatch(
                self.modulus.value().clone(),
                other.modulus.value().clone(),
            ))
        }
    }

    fn with(&self, residue: BigUint) -> RingElement {
        RingElement {
            residue,
            modulus: self.modulus.clone(),
        }
    }

    pub fn add(&self, other: &RingElement) -> Result<RingElement, AlgebraError> {
        self.check(other)?;
        counters::record(|c| c.ring_add += 1);
        let mut sum = &self.residue + &other.residue;
        if &sum >= self.modulus.value() {
            sum -= self.modulus.value();
        }
        Ok(self.with(sum))
    }

    pub fn sub(&self, other: &RingElement) -> Result<RingElement, AlgebraError> {
        self.check(other)?;
        counters::record(|c| c.ring_add += 1);
        let diff = if self.residue >= other.residue {
            &self.residue - &other.residue
        } else {
            self.modulus.value() - (&other.residue - &self.residue)
        };
        Ok(self.with(diff))
    }

    pub fn mul(&self, other: &RingElement) -> Result<RingElement, AlgebraError> {
        self.check(other)?;
        counters::record(|c| c.ring_mul += 1);
        Ok(self.with((&self.residue * &other.residue) % self.modulus.value()))
    }

    pub fn square(&self) -> RingElement {
        counters::record(|c| c.ring_mul += 1);
        self.with((&self.residue * &self.residue) % self.modulus.value())
    }

    pub fn neg(&self) -> RingElement {
        if self.residue.is_zero() {
            self.clone()
        } else {
            self.with(self.modulus.value() - &self.residue)
        }
    }

    /// Multiplies by a small constant.
    pub fn mul_u64(&self, k: u64) -> RingElement {
        counters::record(|c| c.ring_mul += 1);
        self.with((&self.residue * k) % self.modulus.value())
    }

    /// Multiplicative inverse. Over a composite modulus a failure exposes a
    /// nontrivial factor through `gcd`.
    pub fn inv(&self) -> Result<RingElement, AlgebraError> {
        counters::record(|c| c.ring_inv += 1);
        match crate::fast::mod_inv(&self.residue, self.modulus.value()) {
            Some(inv) => Ok(self.with(inv)),
            None => Err(AlgebraError::NotInvertible {
                gcd: self.residue.gcd(self.modulus.value()),
            }),
        }
    }

    pub fn pow(&self, exp: &BigUint) -> RingElement {
        self.with(self.residue.modpow(exp, self.modulus.value()))
    }

    /// Reinterprets the residue in another ring by reduction. When the target
    /// modulus divides this one the map is a ring homomorphism.
    pub fn reduce_to(&self, target: &Modulus) -> RingElement {
        target.reduce(&self.residue)
    }
}

/// Element `c0 + c1*i` of F_p[i]/(i^2 + 1), for p = 3 (mod 4).
#[derive(Clone, PartialEq, Eq)]
pub struct Fp2Element {
    c0: BigUint,
    c1: BigUint,
    p: Modulus,
}

impl fmt::Debug for Fp2Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} + {}*i)", self.c0, self.c1)
    }
}

impl Fp2Element {
    /// Builds an element; coordinates must already be reduced.
    pub fn new(c0: RingElement, c1: RingElement) -> Fp2Element {
        assert!(c0.modulus == c1.modulus, "coordinates over different fields");
        Fp2Element {
            c0: c0.residue,
            c1: c1.residue,
            p: c0.modulus,
        }
    }

    pub fn from_parts(p: &Modulus, c0: BigUint, c1: BigUint) -> Result<Fp2Element, AlgebraError> {
        let c0 = p.element(c0)?;
        let c1 = p.element(c1)?;
        Ok(Fp2Element::new(c0, c1))
    }

    pub fn from_base(a: RingElement) -> Fp2Element {
        let zero = a.modulus.zero();
        Fp2Element::new(a, zero)
    }

    pub fn one(p: &Modulus) -> Fp2Element {
        Fp2Element::new(p.one(), p.zero())
    }

    pub fn zero(p: &Modulus) -> Fp2Element {
        Fp2Element::new(p.zero(), p.zero())
    }

    /// The imaginary unit.
    pub fn i(p: &Modulus) -> Fp2Element {
        Fp2Element::new(p.zero(), p.one())
    }

    pub fn random<R: RngCore + ?Sized>(p: &Modulus, rng: &mut R) -> Fp2Element {
        Fp2Element::new(p.random(rng), p.random(rng))
    }

    pub fn c0(&self) -> RingElement {
        self.p.reduce(&self.c0)
    }

    pub fn c1(&self) -> RingElement {
        self.p.reduce(&self.c1)
    }

    pub fn c0_uint(&self) -> &BigUint {
        &self.c0
    }

    pub fn c1_uint(&self) -> &BigUint {
        &self.c1
    }

    pub fn modulus(&self) -> &Modulus {
        &self.p
    }

    pub fn is_one(&self) -> bool {
        self.c0.is_one() && self.c1.is_zero()
    }

    pub fn is_zero(&self) -> bool {
        self.c0.is_zero() && self.c1.is_zero()
    }

    fn modp(&self) -> &BigUint {
        self.p.value()
    }

    fn sub_mod(&self, a: &BigUint, b: &BigUint) -> BigUint {
        if a >= b {
            a - b
        } else {
            self.modp() - (b - a)
        }
    }

    fn assert_same_field(&self, other: &Fp2Element) {
        assert!(self.p == other.p, "F_p^2 elements over different primes");
    }

    pub fn add(&self, other: &Fp2Element) -> Fp2Element {
        self.assert_same_field(other);
        let p = self.modp();
        Fp2Element {
            c0: (&self.c0 + &other.c0) % p,
            c1: (&self.c1 + &other.c1) % p,
            p: self.p.clone(),
        }
    }

    pub fn sub(&self, other: &Fp2Element) -> Fp2Element {
        self.assert_same_field(other);
        Fp2Element {
            c0: self.sub_mod(&self.c0, &other.c0),
            c1: self.sub_mod(&self.c1, &other.c1),
            p: self.p.clone(),
        }
    }

    /// (a0 + a1 i)(b0 + b1 i) with three base-field products.
    pub fn mul(&self, other: &Fp2Element) -> Fp2Element {
        self.assert_same_field(other);
        let p = self.modp();
        let v0 = &self.c0 * &other.c0;
        let v1 = &self.c1 * &other.c1;
        let cross = (&self.c0 + &self.c1) * (&other.c0 + &other.c1);
        let c1 = (cross - &v0 - &v1) % p;
        let v0 = v0 % p;
        let v1 = v1 % p;
        Fp2Element {
            c0: self.sub_mod(&v0, &v1),
            c1,
            p: self.p.clone(),
        }
    }

    pub fn square(&self) -> Fp2Element {
        // (a + bi)^2 = (a + b)(a - b) + 2ab i
        let p = self.modp();
        let sum = &self.c0 + &self.c1;
        let diff = self.sub_mod(&self.c0, &self.c1);
        let c0 = (sum * diff) % p;
        let c1 = ((&self.c0 * &self.c1) << 1u8) % p;
        Fp2Element {
            c0,
            c1,
            p: self.p.clone(),
        }
    }

    /// Multiplies both coordinates by a base-field element.
    pub fn scale(&self, k: &RingElement) -> Fp2Element {
        assert!(self.p == *k.modulus(), "scalar over a different field");
        let p = self.modp();
        Fp2Element {
            c0: (&self.c0 * k.residue()) % p,
            c1: (&self.c1 * k.residue()) % p,
            p: self.p.clone(),
        }
    }

    pub fn conj(&self) -> Fp2Element {
        Fp2Element {
            c0: self.c0.clone(),
            c1: self.sub_mod(&BigUint::zero(), &self.c1),
            p: self.p.clone(),
        }
    }

    pub fn neg(&self) -> Fp2Element {
        let zero = BigUint::zero();
        Fp2Element {
            c0: self.sub_mod(&zero, &self.c0),
            c1: self.sub_mod(&zero, &self.c1),
            p: self.p.clone(),
        }
    }

    /// The norm a0^2 + a1^2, an element of F_p.
    pub fn norm(&self) -> RingElement {
        self.p
            .reduce(&(&self.c0 * &self.c0 + &self.c1 * &self.c1))
    }

    pub fn inv(&self) -> Result<Fp2Element, AlgebraError> {
        let n_inv = self.norm().inv()?;
        Ok(self.conj().scale(&n_inv))
    }

    /// Left-to-right square-and-multiply; `a^0 = 1`.
    pub fn pow(&self, exp: &BigUint) -> Fp2Element {
        let mut acc = Fp2Element::one(&self.p);
        for i in (0..exp.bits()).rev() {
            acc = acc.square();
            if exp.bit(i) {
                acc = acc.mul(self);
            }
        }
        acc
    }
}

const SMALL_PRIMES: [u32; 167] = [
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
    101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193,
    197, 199, 211, 223, 227, 229, 233, 239, 241, 251, 257, 263, 269, 271, 277, 281, 283, 293, 307,
    311, 313, 317, 331, 337, 347, 349, 353, 359, 367, 373, 379, 383, 389, 397, 401, 409, 419, 421,
    431, 433, 439, 443, 449, 457, 461, 463, 467, 479, 487, 491, 499, 503, 509, 521, 523, 541, 547,
    557, 563, 569, 571, 577, 587, 593, 599, 601, 607, 613, 617, 619, 631, 641, 643, 647, 653, 659,
    661, 673, 677, 683, 691, 701, 709, 719, 727, 733, 739, 743, 751, 757, 761, 769, 773, 787, 797,
    809, 811, 821, 823, 827, 829, 839, 853, 857, 859, 863, 877, 881, 883, 887, 907, 911, 919, 929,
    937, 941, 947, 953, 967, 971, 977, 983, 991, 997,
];

/// Returns `Some(verdict)` when trial division by small primes settles it.
fn small_prime_verdict(n: &BigUint) -> Option<bool> {
    if n < &BigUint::from(2u8) {
        return Some(false);
    }
    if n.is_even() {
        return Some(n == &BigUint::from(2u8));
    }
    for &sp in SMALL_PRIMES.iter() {
        let sp_big = BigUint::from(sp);
        if n == &sp_big {
            return Some(true);
        }
        if (n % sp).is_zero() {
            return Some(false);
        }
    }
    if n < &BigUint::from(997u32 * 997) {
        return Some(true);
    }
    None
}

/// Miller-Rabin with `rounds` random bases, after trial division.
///
/// Bases are drawn from a generator seeded by `n` itself, so the verdict is
/// a pure function of its inputs. Word-sized `n` is decided exactly.
pub fn is_probable_prime(n: &BigUint, rounds: usize) -> bool {
    if let Some(w) = n.to_u64() {
        return crate::fast::is_prime_u64(w);
    }
    if let Some(v) = small_prime_verdict(n) {
        return v;
    }
    let mut seed = [0u8; 32];
    for (dst, src) in seed.iter_mut().zip(n.to_bytes_le()) {
        *dst = src;
    }
    let mut rng = ChaCha20Rng::from_seed(seed);
    miller_rabin(n, rounds, &mut rng)
}

fn miller_rabin<R: Rng + ?Sized>(n: &BigUint, rounds: usize, rng: &mut R) -> bool {
    let one = BigUint::one();
    let two = BigUint::from(2u8);
    let n_minus_one = n - &one;
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;
    'witness: for _ in 0..rounds {
        let a = rng.gen_biguint_range(&two, &n_minus_one);
        let mut x = a.modpow(&d, n);
        if x == one || x == n_minus_one {
            continue;
        }
        for _ in 1..s {
            x = (&x * &x) % n;
            if x == n_minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Uniform probable prime of exactly `bits` bits.
pub fn rand_prime<R: RngCore + CryptoRng + ?Sized>(
    bits: u64,
    rng: &mut R,
) -> Result<Modulus, AlgebraError> {
    if bits < 16 {
        return Err(AlgebraError::PrimeTooSmall(bits));
    }
    counters::record(|c| c.prime_gen += 1);
    loop {
        let mut candidate = rng.gen_biguint(bits);
        candidate.set_bit(bits - 1, true);
        candidate.set_bit(0, true);
        if let Some(w) = candidate.to_u64() {
            if crate::fast::is_prime_u64(w) {
                return Ok(Modulus::new_unchecked(candidate, ModulusKind::Prime));
            }
            continue;
        }
        match small_prime_verdict(&candidate) {
            Some(false) => continue,
            Some(true) => return Ok(Modulus::new_unchecked(candidate, ModulusKind::Prime)),
            None => {}
        }
        // One cheap round filters composites before the full battery.
        if !miller_rabin(&candidate, 1, rng) {
            continue;
        }
        if miller_rabin(&candidate, MR_ROUNDS, rng) {
            return Ok(Modulus::new_unchecked(candidate, ModulusKind::Prime));
        }
    }
}
