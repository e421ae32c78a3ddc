//! Reduced Tate pairing on the supersingular curve `y^2 = x^3 + x` over F_p,
//! `p = 3 (mod 4)`, embedding degree 2.
//!
//! Both arguments come from the same order-r subgroup of E(F_p); the second
//! one is moved into E(F_p^2) by the distortion map `(x, y) -> (-x, i*y)` so
//! that the pairing is non-degenerate. Vertical-line denominators lie in F_p
//! and are wiped out by the final exponentiation, so the Miller loop skips
//! them.

use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use thiserror::Error;

use crate::algebra::{AlgebraError, Fp2Element, Modulus, RingElement};
use crate::counters;
use crate::curve::{CurveError, CurveParams, Point};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PairingError {
    #[error("a Miller line function vanished at the evaluation point")]
    ZeroEvaluation,
    #[error("pairing input is not on the curve")]
    NotOnCurve,
    #[error("invalid pairing parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

/// Public pairing arena: the curve, its subgroup order `r` and the final
/// exponent `(p^2 - 1) / r`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairingParams {
    curve: CurveParams,
    final_exp: BigUint,
}

impl PairingParams {
    pub fn new(curve: CurveParams) -> Result<PairingParams, PairingError> {
        let bad = |m: &str| Err(PairingError::InvalidParams(m.to_string()));
        let p = curve.modulus().value().clone();
        if !(p.bit(0) && p.bit(1)) {
            return bad("p must be 3 mod 4");
        }
        if !curve.a().residue().is_one() || !curve.b().is_zero() {
            return bad("curve must be y^2 = x^3 + x");
        }
        let Some(sg) = curve.subgroup() else {
            return bad("curve carries no prime-order subgroup");
        };
        let r = &sg.order;
        if !((&p + 1u8) % r).is_zero() {
            return bad("r does not divide p + 1");
        }
        if &sg.cofactor * r != &p + 1u8 {
            return bad("cofactor * r != p + 1");
        }
        let final_exp = (&p * &p - 1u8) / r;
        Ok(PairingParams { curve, final_exp })
    }

    pub fn curve(&self) -> &CurveParams {
        &self.curve
    }

    pub fn p(&self) -> &Modulus {
        self.curve.modulus()
    }

    pub fn r(&self) -> &BigUint {
        &self.curve.subgroup().expect("validated on construction").order
    }

    pub fn generator(&self) -> &Point {
        &self.curve.subgroup().expect("validated on construction").generator
    }

    pub fn cofactor(&self) -> &BigUint {
        &self.curve.subgroup().expect("validated on construction").cofactor
    }

    pub fn final_exp(&self) -> &BigUint {
        &self.final_exp
    }
}

/// Element of the order-r subgroup of F_p^2*, or at least claimed to be:
/// values decoded from the wire are not checked for membership.
#[derive(Clone, PartialEq, Eq)]
pub struct GtElement(Fp2Element);

impl fmt::Debug for GtElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Gt{:?}", self.0)
    }
}

impl GtElement {
    pub fn one(p: &Modulus) -> GtElement {
        GtElement(Fp2Element::one(p))
    }

    pub fn from_fp2(value: Fp2Element) -> GtElement {
        GtElement(value)
    }

    pub fn value(&self) -> &Fp2Element {
        &self.0
    }

    pub fn is_one(&self) -> bool {
        self.0.is_one()
    }

    pub fn mul(&self, other: &GtElement) -> GtElement {
        counters::record(|c| c.gt_mul += 1);
        GtElement(self.0.mul(&other.0))
    }

    pub fn pow(&self, exp: &BigUint) -> GtElement {
        counters::record(|c| c.gt_exp += 1);
        GtElement(self.0.pow(exp))
    }

    /// Whether the value has order dividing `r`.
    pub fn in_subgroup(&self, r: &BigUint) -> bool {
        !self.0.is_zero() && self.0.pow(r).is_one()
    }
}

/// A point of E(F_p^2).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExtPoint {
    Infinity,
    Affine { x: Fp2Element, y: Fp2Element },
}

impl ExtPoint {
    pub fn is_on_curve(&self) -> bool {
        match self {
            ExtPoint::Infinity => true,
            ExtPoint::Affine { x, y } => y.square() == x.square().mul(x).add(x),
        }
    }
}

/// `(x, y) -> (-x, i*y)`.
pub fn distortion(point: &Point) -> ExtPoint {
    match point {
        Point::Infinity => ExtPoint::Infinity,
        Point::Affine { x, y } => {
            let zero = x.modulus().zero();
            ExtPoint::Affine {
                x: Fp2Element::new(x.neg(), zero.clone()),
                y: Fp2Element::new(zero, y.clone()),
            }
        }
    }
}

// l(Q) = yQ - yT - slope * (xQ - xT)
fn line_value(
    slope: &RingElement,
    xt: &RingElement,
    yt: &RingElement,
    xq: &Fp2Element,
    yq: &Fp2Element,
) -> Result<Fp2Element, PairingError> {
    let dx = xq.sub(&Fp2Element::from_base(xt.clone()));
    let l = yq.sub(&Fp2Element::from_base(yt.clone())).sub(&dx.scale(slope));
    if l.is_zero() {
        return Err(PairingError::ZeroEvaluation);
    }
    Ok(l)
}

fn vertical_value(xt: &RingElement, xq: &Fp2Element) -> Result<Fp2Element, PairingError> {
    let v = xq.sub(&Fp2Element::from_base(xt.clone()));
    if v.is_zero() {
        return Err(PairingError::ZeroEvaluation);
    }
    Ok(v)
}

/// Miller accumulation of `f_{r,P}` evaluated at `Q`, without vertical-line
/// denominators.
pub fn miller_loop(p: &Point, q: &ExtPoint, r: &BigUint, curve: &CurveParams) -> Result<Fp2Element, PairingError> {
    let modulus = curve.modulus();
    let (xp, yp) = match p {
        Point::Infinity => return Ok(Fp2Element::one(modulus)),
        Point::Affine { x, y } => (x, y),
    };
    let (xq, yq) = match q {
        ExtPoint::Infinity => return Ok(Fp2Element::one(modulus)),
        ExtPoint::Affine { x, y } => (x, y),
    };
    let a = curve.a();
    let mut f = Fp2Element::one(modulus);
    // T = None stands for the identity.
    let mut t: Option<(RingElement, RingElement)> = Some((xp.clone(), yp.clone()));
    for i in (0..r.bits().saturating_sub(1)).rev() {
        f = f.square();
        if let Some((xt, yt)) = t.take() {
            if yt.is_zero() {
                f = f.mul(&vertical_value(&xt, xq)?);
            } else {
                let slope = xt.square().mul_u64(3).add(a)?.mul(&yt.add(&yt)?.inv()?)?;
                f = f.mul(&line_value(&slope, &xt, &yt, xq, yq)?);
                let x3 = slope.square().sub(&xt.add(&xt)?)?;
                let y3 = slope.mul(&xt.sub(&x3)?)?.sub(&yt)?;
                t = Some((x3, y3));
            }
        }
        if r.bit(i) {
            t = match t.take() {
                None => Some((xp.clone(), yp.clone())),
                Some((xt, yt)) if &xt == xp => {
                    if &yt == yp {
                        // T == P only when r is tiny; tangent at P.
                        let slope = xt.square().mul_u64(3).add(a)?.mul(&yt.add(&yt)?.inv()?)?;
                        f = f.mul(&line_value(&slope, &xt, &yt, xq, yq)?);
                        let x3 = slope.square().sub(&xt.add(&xt)?)?;
                        let y3 = slope.mul(&xt.sub(&x3)?)?.sub(&yt)?;
                        Some((x3, y3))
                    } else {
                        f = f.mul(&vertical_value(&xt, xq)?);
                        None
                    }
                }
                Some((xt, yt)) => {
                    let slope = yp.sub(&yt)?.mul(&xp.sub(&xt)?.inv()?)?;
                    f = f.mul(&line_value(&slope, &xt, &yt, xq, yq)?);
                    let x3 = slope.square().sub(&xt)?.sub(xp)?;
                    let y3 = slope.mul(&xt.sub(&x3)?)?.sub(&yt)?;
                    Some((x3, y3))
                }
            };
        }
    }
    Ok(f)
}

/// `e(A, B) = miller_loop(A, distortion(B))^((p^2 - 1) / r)`.
pub fn tate_pairing(a: &Point, b: &Point, pp: &PairingParams) -> Result<GtElement, PairingError> {
    counters::record(|c| c.pairing += 1);
    let curve = pp.curve();
    if !curve.is_on_curve(a) || !curve.is_on_curve(b) {
        return Err(PairingError::NotOnCurve);
    }
    if a.is_infinity() || b.is_infinity() {
        return Ok(GtElement::one(pp.p()));
    }
    let f = miller_loop(a, &distortion(b), pp.r(), curve)?;
    Ok(GtElement(f.pow(pp.final_exp())))
}
