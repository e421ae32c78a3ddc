//! Short Weierstrass curves `y^2 = x^3 + a x + b` in affine coordinates.
//!
//! The group law is written once over an arbitrary coefficient ring. Over a
//! prime field it is the usual group; over Z_N it is plain formula
//! application, which is exactly what a server sees when it works on blinded
//! coordinates. Any slope denominator that fails to invert over Z_N surfaces
//! as [`CurveError::NotInvertible`] and the caller must drop the session.

use num_bigint::{BigUint, RandBigInt};
use num_traits::{One, ToPrimitive, Zero};
use rand::RngCore;
use thiserror::Error;

use crate::algebra::{is_probable_prime, AlgebraError, Modulus, ModulusKind, RingElement, MR_ROUNDS};
use crate::counters;
use crate::fast::SmallCurve;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CurveError {
    #[error("slope denominator not invertible (gcd with modulus = {gcd})")]
    NotInvertible { gcd: BigUint },
    #[error("x^3 + ax + b is not a square for x = {0}")]
    NonResidue(BigUint),
    #[error("curve is singular")]
    Singular,
    #[error("point is not on the curve")]
    NotOnCurve,
    #[error("invalid subgroup: {0}")]
    InvalidSubgroup(&'static str),
    #[error("operation requires a prime-field curve")]
    NotPrimeField,
    #[error(transparent)]
    Algebra(AlgebraError),
}

impl From<AlgebraError> for CurveError {
    fn from(e: AlgebraError) -> Self {
        match e {
            AlgebraError::NotInvertible { gcd } => CurveError::NotInvertible { gcd },
            other => CurveError::Algebra(other),
        }
    }
}

/// A curve point, either the identity or an affine pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Point {
    Infinity,
    Affine { x: RingElement, y: RingElement },
}

impl Point {
    pub fn affine(x: RingElement, y: RingElement) -> Result<Point, CurveError> {
        if x.modulus() != y.modulus() {
            return Err(AlgebraError::ModulusMismatch(
                x.modulus().value().clone(),
                y.modulus().value().clone(),
            )
            .into());
        }
        Ok(Point::Affine { x, y })
    }

    pub fn is_infinity(&self) -> bool {
        matches!(self, Point::Infinity)
    }

    pub fn x(&self) -> Option<&RingElement> {
        match self {
            Point::Infinity => None,
            Point::Affine { x, .. } => Some(x),
        }
    }

    pub fn y(&self) -> Option<&RingElement> {
        match self {
            Point::Infinity => None,
            Point::Affine { y, .. } => Some(y),
        }
    }

    pub fn neg(&self) -> Point {
        match self {
            Point::Infinity => Point::Infinity,
            Point::Affine { x, y } => Point::Affine {
                x: x.clone(),
                y: y.neg(),
            },
        }
    }

    /// Coordinate-wise reduction into another ring.
    pub fn reduce_to(&self, target: &Modulus) -> Point {
        match self {
            Point::Infinity => Point::Infinity,
            Point::Affine { x, y } => Point::Affine {
                x: x.reduce_to(target),
                y: y.reduce_to(target),
            },
        }
    }
}

/// Prime-order subgroup data, present only for prime-field curves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subgroup {
    pub order: BigUint,
    pub cofactor: BigUint,
    pub generator: Point,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurveParams {
    a: RingElement,
    b: RingElement,
    modulus: Modulus,
    subgroup: Option<Subgroup>,
}

impl CurveParams {
    /// A curve over a prime field without subgroup data. Rejects singular
    /// curves.
    pub fn over_prime_field(a: &BigUint, b: &BigUint, p: &Modulus) -> Result<CurveParams, CurveError> {
        if p.kind() != ModulusKind::Prime {
            return Err(CurveError::NotPrimeField);
        }
        let a = p.reduce(a);
        let b = p.reduce(b);
        // 4a^3 + 27b^2
        let disc = a.square().mul(&a)?.mul_u64(4).add(&b.square().mul_u64(27))?;
        if disc.is_zero() {
            return Err(CurveError::Singular);
        }
        Ok(CurveParams {
            a,
            b,
            modulus: p.clone(),
            subgroup: None,
        })
    }

    /// Attaches and validates an order-`order` subgroup generated by `generator`.
    pub fn with_subgroup(
        mut self,
        order: BigUint,
        cofactor: BigUint,
        generator: Point,
    ) -> Result<CurveParams, CurveError> {
        if !is_probable_prime(&order, MR_ROUNDS) {
            return Err(CurveError::InvalidSubgroup("order is not prime"));
        }
        if generator.is_infinity() {
            return Err(CurveError::InvalidSubgroup("generator is the identity"));
        }
        if !self.is_on_curve(&generator) {
            return Err(CurveError::NotOnCurve);
        }
        if !scalar_mul(&generator, &order, &self)?.is_infinity() {
            return Err(CurveError::InvalidSubgroup("order does not annihilate generator"));
        }
        self.subgroup = Some(Subgroup {
            order,
            cofactor,
            generator,
        });
        Ok(self)
    }

    /// The server-side arena: coefficients over Z_N with no structure
    /// attached.
    pub fn blinded(a: RingElement, b: RingElement) -> Result<CurveParams, CurveError> {
        if a.modulus() != b.modulus() {
            return Err(AlgebraError::ModulusMismatch(
                a.modulus().value().clone(),
                b.modulus().value().clone(),
            )
            .into());
        }
        let modulus = a.modulus().clone();
        Ok(CurveParams {
            a,
            b,
            modulus,
            subgroup: None,
        })
    }

    pub fn a(&self) -> &RingElement {
        &self.a
    }

    pub fn b(&self) -> &RingElement {
        &self.b
    }

    pub fn modulus(&self) -> &Modulus {
        &self.modulus
    }

    pub fn subgroup(&self) -> Option<&Subgroup> {
        self.subgroup.as_ref()
    }

    pub fn order(&self) -> Option<&BigUint> {
        self.subgroup.as_ref().map(|s| &s.order)
    }

    pub fn generator(&self) -> Option<&Point> {
        self.subgroup.as_ref().map(|s| &s.generator)
    }

    pub fn point(&self, x: u64, y: u64) -> Point {
        Point::Affine {
            x: self.modulus.from_u64(x),
            y: self.modulus.from_u64(y),
        }
    }

    /// Right-hand side `x^3 + a x + b`.
    pub fn rhs(&self, x: &RingElement) -> Result<RingElement, CurveError> {
        Ok(x.square().add(&self.a)?.mul(x)?.add(&self.b)?)
    }

    pub fn is_on_curve(&self, p: &Point) -> bool {
        match p {
            Point::Infinity => true,
            Point::Affine { x, y } => {
                if x.modulus() != &self.modulus || y.modulus() != &self.modulus {
                    return false;
                }
                match self.rhs(x) {
                    Ok(rhs) => y.square() == rhs,
                    Err(_) => false,
                }
            }
        }
    }

    /// Maps `x` to a point of the prime-order subgroup: square root of the
    /// right-hand side, then cofactor clearing.
    pub fn lift(&self, x: &BigUint) -> Result<Point, CurveError> {
        if self.modulus.kind() != ModulusKind::Prime {
            return Err(CurveError::NotPrimeField);
        }
        let x = self.modulus.reduce(x);
        let rhs = self.rhs(&x)?;
        let y = sqrt_mod_prime(&rhs).ok_or_else(|| CurveError::NonResidue(x.residue().clone()))?;
        let point = Point::Affine { x, y };
        match &self.subgroup {
            Some(sg) => scalar_mul(&point, &sg.cofactor, self),
            None => Ok(point),
        }
    }

    /// A uniformly chosen non-identity point of the prime-order subgroup.
    pub fn random_subgroup_point<R: RngCore + ?Sized>(&self, rng: &mut R) -> Result<Point, CurveError> {
        if self.subgroup.is_none() {
            return Err(CurveError::InvalidSubgroup("curve carries no subgroup"));
        }
        loop {
            let x = rng.gen_biguint_below(self.modulus.value());
            match self.lift(&x) {
                Ok(Point::Infinity) | Err(CurveError::NonResidue(_)) => continue,
                other => return other,
            }
        }
    }
}

/// Square root modulo a prime by Tonelli-Shanks, with the `(p+1)/4` shortcut
/// for `p = 3 (mod 4)`.
pub fn sqrt_mod_prime(a: &RingElement) -> Option<RingElement> {
    let p = a.modulus().value();
    if a.is_zero() {
        return Some(a.clone());
    }
    let one = BigUint::one();
    let p_minus_one = p - &one;
    let legendre = a.pow(&(&p_minus_one >> 1u8));
    if !legendre.residue().is_one() {
        return None;
    }
    if p.bit(0) && p.bit(1) {
        let root = a.pow(&((p + &one) >> 2u8));
        return Some(root);
    }
    let s = p_minus_one.trailing_zeros()?;
    let q = &p_minus_one >> s;
    let modulus = a.modulus();
    let mut z = BigUint::from(2u8);
    while modulus.reduce(&z).pow(&(&p_minus_one >> 1u8)).residue().is_one() {
        z += 1u8;
    }
    let mut m = s;
    let mut c = modulus.reduce(&z).pow(&q);
    let mut t = a.pow(&q);
    let mut r = a.pow(&((&q + &one) >> 1u8));
    while !t.residue().is_one() {
        let mut i = 0;
        let mut t2 = t.clone();
        while !t2.residue().is_one() {
            t2 = t2.square();
            i += 1;
        }
        let mut b = c.clone();
        for _ in 0..(m - i - 1) {
            b = b.square();
        }
        m = i;
        c = b.square();
        t = t.mul(&c).ok()?;
        r = r.mul(&b).ok()?;
    }
    Some(r)
}

fn check_ring(p: &Point, params: &CurveParams) -> Result<(), CurveError> {
    if let Point::Affine { x, .. } = p {
        if x.modulus() != params.modulus() {
            return Err(AlgebraError::ModulusMismatch(
                x.modulus().value().clone(),
                params.modulus().value().clone(),
            )
            .into());
        }
    }
    Ok(())
}

/// Chord rule. `P + P` is delegated to [`point_double`].
pub fn point_add(p: &Point, q: &Point, params: &CurveParams) -> Result<Point, CurveError> {
    check_ring(p, params)?;
    check_ring(q, params)?;
    let (x1, y1, x2, y2) = match (p, q) {
        (Point::Infinity, _) => return Ok(q.clone()),
        (_, Point::Infinity) => return Ok(p.clone()),
        (Point::Affine { x: x1, y: y1 }, Point::Affine { x: x2, y: y2 }) => (x1, y1, x2, y2),
    };
    if x1 == x2 {
        if y1 == y2 {
            return point_double(p, params);
        }
        if y1.add(y2)?.is_zero() {
            return Ok(Point::Infinity);
        }
    }
    counters::record(|c| c.point_add += 1);
    let slope = y2.sub(y1)?.mul(&x2.sub(x1)?.inv()?)?;
    let x3 = slope.square().sub(x1)?.sub(x2)?;
    let y3 = slope.mul(&x1.sub(&x3)?)?.sub(y1)?;
    Ok(Point::Affine { x: x3, y: y3 })
}

/// Tangent rule with slope `(3x^2 + a) / 2y`; 2-torsion points double to
/// the identity.
pub fn point_double(p: &Point, params: &CurveParams) -> Result<Point, CurveError> {
    check_ring(p, params)?;
    let (x, y) = match p {
        Point::Infinity => return Ok(Point::Infinity),
        Point::Affine { x, y } => (x, y),
    };
    if y.is_zero() {
        return Ok(Point::Infinity);
    }
    counters::record(|c| c.point_double += 1);
    let num = x.square().mul_u64(3).add(params.a())?;
    let slope = num.mul(&y.add(y)?.inv()?)?;
    let x3 = slope.square().sub(&x.add(x)?)?;
    let y3 = slope.mul(&x.sub(&x3)?)?.sub(y)?;
    Ok(Point::Affine { x: x3, y: y3 })
}

/// `n * P` by left-to-right double-and-add.
pub fn scalar_mul(p: &Point, n: &BigUint, params: &CurveParams) -> Result<Point, CurveError> {
    check_ring(p, params)?;
    counters::record(|c| c.scalar_mul += 1);
    if n.is_zero() || p.is_infinity() {
        return Ok(Point::Infinity);
    }
    if let Some(out) = scalar_mul_word(p, n, params) {
        return out;
    }
    scalar_mul_generic(p, n, params)
}

fn scalar_mul_word(p: &Point, n: &BigUint, params: &CurveParams) -> Option<Result<Point, CurveError>> {
    let modulus = params.modulus();
    let mut curve = SmallCurve {
        n: modulus.value().to_u64()?,
        a: params.a().residue().to_u64()?,
        tally: Default::default(),
    };
    let start = match p {
        Point::Infinity => None,
        Point::Affine { x, y } => Some((x.residue().to_u64()?, y.residue().to_u64()?)),
    };
    let out = curve.scalar_mul(start, n);
    let t = curve.tally;
    counters::record(|c| {
        c.ring_add += t.ring_add;
        c.ring_mul += t.ring_mul;
        c.ring_inv += t.ring_inv;
        c.point_add += t.point_add;
        c.point_double += t.point_double;
    });
    Some(match out {
        Ok(None) => Ok(Point::Infinity),
        Ok(Some((x, y))) => Ok(Point::Affine {
            x: modulus.from_u64(x),
            y: modulus.from_u64(y),
        }),
        Err(gcd) => Err(AlgebraError::NotInvertible { gcd: BigUint::from(gcd) }.into()),
    })
}

pub(crate) fn scalar_mul_generic(p: &Point, n: &BigUint, params: &CurveParams) -> Result<Point, CurveError> {
    let mut acc = Point::Infinity;
    for i in (0..n.bits()).rev() {
        acc = point_double(&acc, params)?;
        if n.bit(i) {
            acc = point_add(&acc, p, params)?;
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    // Brute-force model of a curve over a small prime field with plain u64
    // arithmetic, independent of the ring types.
    #[derive(Clone, Copy, Debug, PartialEq, Eq)]
    enum P2 {
        O,
        A(u64, u64),
    }

    struct Toy {
        p: u64,
        a: u64,
        b: u64,
    }

    impl Toy {
        fn inv(&self, v: u64) -> u64 {
            (1..self.p).find(|w| v * w % self.p == 1).unwrap()
        }
        fn points(&self) -> Vec<P2> {
            let mut out = vec![P2::O];
            for x in 0..self.p {
                for y in 0..self.p {
                    if (y * y) % self.p == (x * x % self.p * x + self.a * x + self.b) % self.p {
                        out.push(P2::A(x, y));
                    }
                }
            }
            out
        }
        // Third intersection of the chord/tangent, reflected.
        fn add(&self, u: P2, v: P2) -> P2 {
            let p = self.p;
            match (u, v) {
                (P2::O, w) | (w, P2::O) => w,
                (P2::A(x1, y1), P2::A(x2, y2)) => {
                    if x1 == x2 && (y1 + y2) % p == 0 {
                        return P2::O;
                    }
                    let l = if x1 == x2 {
                        (3 * x1 * x1 + self.a) % p * self.inv(2 * y1 % p) % p
                    } else {
                        (y2 + p - y1) % p * self.inv((x2 + p - x1) % p) % p
                    };
                    let x3 = (l * l % p + 2 * p - x1 - x2) % p;
                    let y3 = (l * ((x1 + p - x3) % p) % p + p - y1) % p;
                    P2::A(x3, y3)
                }
            }
        }
    }

    fn to_point(c: &CurveParams, q: P2) -> Point {
        match q {
            P2::O => Point::Infinity,
            P2::A(x, y) => c.point(x, y),
        }
    }

    fn toy_curve(p: u64, a: u64, b: u64) -> (Toy, CurveParams) {
        let m = Modulus::prime(BigUint::from(p)).unwrap();
        let c = CurveParams::over_prime_field(&BigUint::from(a), &BigUint::from(b), &m).unwrap();
        (Toy { p, a, b }, c)
    }

    #[test]
    fn exhaustive_addition_table() {
        for (p, a, b) in [(97u64, 2u64, 3u64), (83, 0, 7), (43, 1, 0)] {
            let (toy, curve) = toy_curve(p, a, b);
            let pts = toy.points();
            for &u in &pts {
                assert!(curve.is_on_curve(&to_point(&curve, u)));
                for &v in &pts {
                    let expect = to_point(&curve, toy.add(u, v));
                    let got = point_add(&to_point(&curve, u), &to_point(&curve, v), &curve).unwrap();
                    assert_eq!(got, expect, "{u:?} + {v:?} on p={p}");
                }
                let dbl = point_double(&to_point(&curve, u), &curve).unwrap();
                assert_eq!(dbl, to_point(&curve, toy.add(u, u)));
            }
        }
    }

    #[test]
    fn identity_inverse_and_two_torsion() {
        let (_, curve) = toy_curve(43, 1, 0);
        let p = curve.point(0, 0);
        assert!(curve.is_on_curve(&p));
        assert_eq!(point_double(&p, &curve).unwrap(), Point::Infinity);
        assert_eq!(point_double(&Point::Infinity, &curve).unwrap(), Point::Infinity);
        let (toy, curve) = toy_curve(97, 2, 3);
        let q = to_point(&curve, toy.points()[5]);
        assert_eq!(point_add(&q, &Point::Infinity, &curve).unwrap(), q);
        assert_eq!(point_add(&q, &q.neg(), &curve).unwrap(), Point::Infinity);
    }

    #[test]
    fn scalar_mul_matches_repeated_addition() {
        let (toy, curve) = toy_curve(97, 2, 3);
        for &base in toy.points().iter().skip(1).take(6) {
            let mut expect = P2::O;
            for n in 0u64..=64 {
                let got = scalar_mul(&to_point(&curve, base), &BigUint::from(n), &curve).unwrap();
                assert_eq!(got, to_point(&curve, expect), "{n} * {base:?}");
                expect = toy.add(expect, base);
            }
        }
    }

    #[test]
    fn singular_curves_rejected() {
        let m = Modulus::prime(BigUint::from(97u8)).unwrap();
        let zero = BigUint::zero();
        assert_eq!(
            CurveParams::over_prime_field(&zero, &zero, &m),
            Err(CurveError::Singular)
        );
    }

    #[test]
    fn origin_not_on_curve_when_b_nonzero() {
        let (_, curve) = toy_curve(97, 2, 3);
        assert!(!curve.is_on_curve(&curve.point(0, 0)));
    }

    #[test]
    fn tonelli_shanks_for_p_one_mod_four() {
        let m = Modulus::prime(BigUint::from(97u8)).unwrap();
        for v in 1u64..97 {
            let a = m.from_u64(v);
            match sqrt_mod_prime(&a) {
                Some(r) => assert_eq!(r.square(), a),
                None => assert!((1u64..97).all(|w| w * w % 97 != v)),
            }
        }
    }

    /// y^2 = x^3 + x over p = 547, #E = 548 = 4 * 137.
    fn subgroup_curve() -> CurveParams {
        let m = Modulus::prime(BigUint::from(547u32)).unwrap();
        let c = CurveParams::over_prime_field(&BigUint::one(), &BigUint::zero(), &m).unwrap();
        let g = (2u64..)
            .find_map(|x| {
                let lifted = c.lift(&BigUint::from(x)).ok()?;
                let g = scalar_mul(&lifted, &BigUint::from(4u8), &c).ok()?;
                (!g.is_infinity()).then_some(g)
            })
            .unwrap();
        c.with_subgroup(BigUint::from(137u32), BigUint::from(4u8), g).unwrap()
    }

    #[test]
    fn lifted_points_lie_in_subgroup() {
        let c = subgroup_curve();
        assert!(c.is_on_curve(c.generator().unwrap()));
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let r = c.order().unwrap().clone();
        let mut lifted = 0;
        while lifted < 100 {
            let x = rng.gen_biguint_below(c.modulus().value());
            match c.lift(&x) {
                Ok(pt) => {
                    lifted += 1;
                    assert!(c.is_on_curve(&pt));
                    assert!(scalar_mul(&pt, &r, &c).unwrap().is_infinity());
                }
                Err(CurveError::NonResidue(_)) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn bad_subgroups_rejected() {
        let c = subgroup_curve();
        let g = c.generator().unwrap().clone();
        let base = CurveParams::over_prime_field(&BigUint::one(), &BigUint::zero(), c.modulus()).unwrap();
        assert!(base.clone().with_subgroup(BigUint::from(138u32), BigUint::from(4u8), g.clone()).is_err());
        assert!(base.clone().with_subgroup(BigUint::from(131u32), BigUint::from(4u8), g).is_err());
        assert!(base
            .with_subgroup(BigUint::from(137u32), BigUint::from(4u8), Point::Infinity)
            .is_err());
    }

    const P: u64 = 1_000_003; // = 3 mod 4
    const Q: u64 = 999_983;

    fn big_curve() -> CurveParams {
        let m = Modulus::prime(BigUint::from(P)).unwrap();
        CurveParams::over_prime_field(&BigUint::from(5u8), &BigUint::from(11u8), &m).unwrap()
    }

    fn random_point(c: &CurveParams, seed: u64) -> Point {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        loop {
            if let Ok(p) = c.lift(&rng.gen_biguint_below(c.modulus().value())) {
                return p;
            }
        }
    }

    #[derive(Debug, Clone)]
    enum Step {
        Add(usize, usize),
        Double(usize),
        Mul(usize, u64),
    }

    fn chain() -> impl Strategy<Value = Vec<Step>> {
        prop::collection::vec(
            prop_oneof![
                (0usize..8, 0usize..8).prop_map(|(i, j)| Step::Add(i, j)),
                (0usize..8).prop_map(Step::Double),
                (0usize..8, any::<u64>()).prop_map(|(i, k)| Step::Mul(i, k)),
            ],
            1..12,
        )
    }

    fn run_chain(start: &[Point], steps: &[Step], c: &CurveParams) -> Result<Vec<Point>, CurveError> {
        let mut regs = start.to_vec();
        for s in steps {
            let n = regs.len();
            let next = match *s {
                Step::Add(i, j) => point_add(&regs[i % n], &regs[j % n], c)?,
                Step::Double(i) => point_double(&regs[i % n], c)?,
                Step::Mul(i, k) => scalar_mul(&regs[i % n], &BigUint::from(k), c)?,
            };
            regs.push(next);
        }
        Ok(regs)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn group_laws(s1 in any::<u64>(), s2 in any::<u64>(), s3 in any::<u64>()) {
            let c = big_curve();
            let (a, b, d) = (random_point(&c, s1), random_point(&c, s2), random_point(&c, s3));
            prop_assert_eq!(point_add(&a, &b, &c).unwrap(), point_add(&b, &a, &c).unwrap());
            let left = point_add(&point_add(&a, &b, &c).unwrap(), &d, &c).unwrap();
            let right = point_add(&a, &point_add(&b, &d, &c).unwrap(), &c).unwrap();
            prop_assert_eq!(left, right);
        }

        #[test]
        fn scalar_reduces_mod_subgroup_order(n in any::<u64>(), seed in any::<u64>()) {
            let c = subgroup_curve();
            let pt = c.random_subgroup_point(&mut ChaCha20Rng::seed_from_u64(seed)).unwrap();
            let n = BigUint::from(n);
            let reduced = &n % c.order().unwrap();
            prop_assert_eq!(scalar_mul(&pt, &n, &c).unwrap(), scalar_mul(&pt, &reduced, &c).unwrap());
        }

        #[test]
        fn reduction_compatibility(steps in chain(), seed in any::<u64>(), masks in any::<[u64; 5]>()) {
            let fp = big_curve();
            let p = fp.modulus().clone();
            let n = Modulus::composite(BigUint::from(P) * BigUint::from(Q)).unwrap();
            let bump = |v: &RingElement, k: u64| n.reduce(&(v.residue() + BigUint::from(k) * BigUint::from(P)));
            let a_n = bump(fp.a(), masks[0]);
            let b_n = bump(fp.b(), masks[1]);
            let zn = CurveParams::blinded(a_n, b_n).unwrap();
            let start_p: Vec<Point> = (0..3).map(|i| random_point(&fp, seed.wrapping_add(i))).collect();
            let start_n: Vec<Point> = start_p
                .iter()
                .zip(masks[2..].iter())
                .map(|(pt, &k)| match pt {
                    Point::Infinity => Point::Infinity,
                    Point::Affine { x, y } => Point::Affine { x: bump(x, k), y: bump(y, k ^ 0x5555) },
                })
                .collect();
            if let Ok(out_n) = run_chain(&start_n, &steps, &zn) {
                let out_p = run_chain(&start_p, &steps, &fp).unwrap();
                for (u, v) in out_n.iter().zip(out_p.iter()) {
                    prop_assert_eq!(&u.reduce_to(&p), v);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn word_path_matches_generic(
            p_seed in 0usize..4, q_seed in 0usize..4, x in any::<u64>(), a in any::<u64>(), k in any::<u128>()
        ) {
            // composite moduli so that non-invertible denominators do occur
            let ps = [1_000_003u64, 65_537, 4_294_967_291, 97];
            let qs = [1_000_033u64, 101, 4_294_967_279, 3];
            let n = Modulus::composite(BigUint::from(ps[p_seed]) * qs[q_seed]).unwrap();
            let nv = n.value().to_u64().unwrap();
            let curve = CurveParams::blinded(n.from_u64(a % nv), n.from_u64(1)).unwrap();
            let pt = Point::affine(n.from_u64(x % nv), n.from_u64((x >> 7) % nv)).unwrap();
            let k = BigUint::from(k);
            let (fast, fast_ops) = counters::measure(|| scalar_mul(&pt, &k, &curve));
            let (slow, slow_ops) = counters::measure(|| scalar_mul_generic(&pt, &k, &curve));
            prop_assert_eq!(fast, slow);
            prop_assert_eq!(fast_ops.ring_add, slow_ops.ring_add);
            prop_assert_eq!(fast_ops.ring_mul, slow_ops.ring_mul);
            prop_assert_eq!(fast_ops.ring_inv, slow_ops.ring_inv);
            prop_assert_eq!(fast_ops.point_add, slow_ops.point_add);
            prop_assert_eq!(fast_ops.point_double, slow_ops.point_double);
        }
    }
}
