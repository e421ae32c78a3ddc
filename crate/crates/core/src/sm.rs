//! Two-server outsourcing of one scalar multiplication `c * P`.
//!
//! The client moves the problem into Z_N, N = p*q for a fresh random prime
//! q: coordinates and curve coefficients are shifted by random multiples of
//! p, scalars by random multiples of the subgroup order r. U1 evaluates
//! `Q1 = c1 P'` and `Q3 = r1 Q1 + r2 P'`, U2 evaluates `Q2 = c2 P'` with
//! `c2 = r1 c + r2 (mod r)`. Reducing mod p brings everything back into
//! E(F_p), where an honest run has `Q3 = Q2` and `Q1 = c P`.

use num_bigint::{BigUint, RandBigInt};
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::algebra::{rand_prime, AlgebraError, Modulus, ModulusKind, RingElement};
use crate::curve::{point_add, scalar_mul, CurveError, CurveParams, Point};

/// Fresh transforms attempted when honest servers hit a non-invertible
/// denominator over Z_N.
pub const MAX_SM_ATTEMPTS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SmError {
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
    #[error("server computation failed")]
    ComputationFailed,
    #[error("verification failed")]
    VerificationFailed,
    #[error("gave up after {0} aborted sessions")]
    Aborted(usize),
    #[error("transport: {0}")]
    Transport(String),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

/// Everything U1 receives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmQueryU1 {
    pub point: Point,
    pub c1: BigUint,
    pub r1: BigUint,
    pub r2: BigUint,
    pub a: RingElement,
    pub b: RingElement,
}

/// Everything U2 receives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmQueryU2 {
    pub point: Point,
    pub c2: BigUint,
    pub a: RingElement,
    pub b: RingElement,
}

impl SmQueryU1 {
    pub fn modulus(&self) -> &Modulus {
        self.a.modulus()
    }
}

impl SmQueryU2 {
    pub fn modulus(&self) -> &Modulus {
        self.a.modulus()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmResponseU1 {
    pub q1: Point,
    pub q3: Point,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmResponseU2 {
    pub q2: Point,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmResponse {
    pub u1: SmResponseU1,
    pub u2: SmResponseU2,
}

/// Client-side blinding state for one session.
#[derive(Debug, Clone)]
pub struct SmSecret {
    pub p: Modulus,
    pub q: Modulus,
    pub n: Modulus,
    /// r1..r6, each uniform in [1, N).
    pub masks: [BigUint; 6],
    pub t1: BigUint,
    pub t2: BigUint,
    pub point: Point,
    pub scalar: BigUint,
    curve: CurveParams,
}

impl SmSecret {
    pub fn curve(&self) -> &CurveParams {
        &self.curve
    }
}

/// Builds the blinded queries for `c * P`.
///
/// `P` must be an affine point of the prime-order subgroup and `c` must lie
/// in `[0, r)`.
pub fn sm_transform<R: RngCore + CryptoRng + ?Sized>(
    point: &Point,
    c: &BigUint,
    curve: &CurveParams,
    rng: &mut R,
) -> Result<(SmQueryU1, SmQueryU2, SmSecret), SmError> {
    let r = curve
        .order()
        .ok_or(SmError::InvalidInput("curve has no subgroup"))?
        .clone();
    if c >= &r {
        return Err(SmError::InvalidInput("scalar outside [0, r)"));
    }
    let (x, y) = match point {
        Point::Infinity => return Err(SmError::InvalidInput("point at infinity cannot be blinded")),
        Point::Affine { x, y } => (x, y),
    };
    if !curve.is_on_curve(point) {
        return Err(SmError::InvalidInput("point not on curve"));
    }
    let p = curve.modulus().clone();
    let q = loop {
        let q = rand_prime(p.bits(), rng)?;
        if q != p {
            break q;
        }
    };
    let n = Modulus::new_unchecked(p.value() * q.value(), ModulusKind::Composite);
    let one = BigUint::one();
    let masks: [BigUint; 6] = std::array::from_fn(|_| rng.gen_biguint_range(&one, n.value()));
    let pv = p.value();
    let shift = |v: &BigUint, k: &BigUint| n.reduce(&(v + k * pv));

    let blinded = Point::Affine {
        x: shift(x.residue(), &masks[0]),
        y: shift(y.residue(), &masks[1]),
    };
    let a = shift(curve.a().residue(), &masks[2]);
    let b = shift(curve.b().residue(), &masks[3]);
    let t1 = masks[0].clone();
    let t2 = masks[1].clone();
    let c1 = c + &masks[4] * &r;
    let c2 = &t1 * c + &t2 + &masks[5] * &r;

    let u1 = SmQueryU1 {
        point: blinded.clone(),
        c1,
        r1: masks[0].clone(),
        r2: masks[1].clone(),
        a: a.clone(),
        b: b.clone(),
    };
    let u2 = SmQueryU2 { point: blinded, c2, a, b };
    let secret = SmSecret {
        p,
        q,
        n,
        masks,
        t1,
        t2,
        point: point.clone(),
        scalar: c.clone(),
        curve: curve.clone(),
    };
    Ok((u1, u2, secret))
}

fn arena(a: &RingElement, b: &RingElement, point: &Point) -> Result<CurveParams, SmError> {
    if let Point::Affine { x, .. } = point {
        if x.modulus() != a.modulus() {
            return Err(SmError::InvalidInput("point and coefficients in different rings"));
        }
    }
    Ok(CurveParams::blinded(a.clone(), b.clone())?)
}

fn server_failure(e: SmError) -> SmError {
    match e {
        SmError::Curve(_) | SmError::Algebra(_) => SmError::ComputationFailed,
        other => other,
    }
}

/// U1: `Q1 = c1 P'` and `Q3 = r1 Q1 + r2 P'` over Z_N.
pub fn sm_server_u1(q: &SmQueryU1) -> Result<SmResponseU1, SmError> {
    let run = || -> Result<SmResponseU1, SmError> {
        let curve = arena(&q.a, &q.b, &q.point)?;
        let q1 = scalar_mul(&q.point, &q.c1, &curve)?;
        let left = scalar_mul(&q1, &q.r1, &curve)?;
        let right = scalar_mul(&q.point, &q.r2, &curve)?;
        let q3 = point_add(&left, &right, &curve)?;
        Ok(SmResponseU1 { q1, q3 })
    };
    run().map_err(server_failure)
}

/// U2: `Q2 = c2 P'` over Z_N.
pub fn sm_server_u2(q: &SmQueryU2) -> Result<SmResponseU2, SmError> {
    let run = || -> Result<SmResponseU2, SmError> {
        let curve = arena(&q.a, &q.b, &q.point)?;
        let q2 = scalar_mul(&q.point, &q.c2, &curve)?;
        Ok(SmResponseU2 { q2 })
    };
    run().map_err(server_failure)
}

fn in_ring(point: &Point, n: &Modulus) -> bool {
    match point {
        Point::Infinity => true,
        Point::Affine { x, y } => x.modulus() == n && y.modulus() == n,
    }
}

/// Accepts iff `Q3 = Q2 (mod p)` and `Q1 mod p` lies on E(F_p).
pub fn sm_verify(resp: &SmResponse, secret: &SmSecret) -> bool {
    let (q1, q2, q3) = (&resp.u1.q1, &resp.u2.q2, &resp.u1.q3);
    if ![q1, q2, q3].iter().all(|pt| in_ring(pt, &secret.n)) {
        return false;
    }
    let p = &secret.p;
    q3.reduce_to(p) == q2.reduce_to(p) && secret.curve.is_on_curve(&q1.reduce_to(p))
}

/// `R = Q1 mod p`, gated on [`sm_verify`].
pub fn sm_recover(resp: &SmResponse, secret: &SmSecret) -> Result<Point, SmError> {
    if !sm_verify(resp, secret) {
        return Err(SmError::VerificationFailed);
    }
    Ok(resp.u1.q1.reduce_to(&secret.p))
}

/// Why a server call produced no usable answer.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DispatchError {
    /// The server answered with an error reply.
    #[error("server reported a failed computation")]
    ComputationFailed,
    /// The server answered, but the answer does not decode.
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("transport: {0}")]
    Transport(String),
}

/// Access to the two servers for the SM sub-protocol.
pub trait SmServers {
    fn query_u1(&mut self, q: &SmQueryU1) -> Result<SmResponseU1, DispatchError>;
    fn query_u2(&mut self, q: &SmQueryU2) -> Result<SmResponseU2, DispatchError>;
}

fn dispatch_failure(e: SmError) -> DispatchError {
    match e {
        SmError::ComputationFailed => DispatchError::ComputationFailed,
        other => DispatchError::Malformed(other.to_string()),
    }
}

/// Both servers evaluated in-line, without transport. Handy for tests.
#[derive(Debug, Default, Clone, Copy)]
pub struct DirectServers;

impl SmServers for DirectServers {
    fn query_u1(&mut self, q: &SmQueryU1) -> Result<SmResponseU1, DispatchError> {
        crate::counters::as_server(|| sm_server_u1(q)).0.map_err(dispatch_failure)
    }

    fn query_u2(&mut self, q: &SmQueryU2) -> Result<SmResponseU2, DispatchError> {
        crate::counters::as_server(|| sm_server_u2(q)).0.map_err(dispatch_failure)
    }
}

/// Full client run: transform, query, verify, recover.
///
/// The identity and the zero scalar are answered locally. A server that
/// reports a failed computation triggers a fresh transform, up to
/// [`MAX_SM_ATTEMPTS`]; a response that fails verification or does not
/// decode is final.
pub fn sm_outsource<S, R>(
    point: &Point,
    c: &BigUint,
    curve: &CurveParams,
    servers: &mut S,
    rng: &mut R,
) -> Result<Point, SmError>
where
    S: SmServers + ?Sized,
    R: RngCore + CryptoRng + ?Sized,
{
    if point.is_infinity() || c.is_zero() {
        if let Some(r) = curve.order() {
            if c >= r {
                return Err(SmError::InvalidInput("scalar outside [0, r)"));
            }
        }
        return Ok(Point::Infinity);
    }
    for _ in 0..MAX_SM_ATTEMPTS {
        let (q1, q2, secret) = sm_transform(point, c, curve, rng)?;
        let u1 = servers.query_u1(&q1);
        let u2 = servers.query_u2(&q2);
        let (u1, u2) = match (u1, u2) {
            (Ok(u1), Ok(u2)) => (u1, u2),
            (Err(DispatchError::Transport(t)), _) | (_, Err(DispatchError::Transport(t))) => {
                return Err(SmError::Transport(t))
            }
            (Err(DispatchError::Malformed(_)), _) | (_, Err(DispatchError::Malformed(_))) => {
                return Err(SmError::VerificationFailed)
            }
            _ => continue,
        };
        return sm_recover(&SmResponse { u1, u2 }, &secret);
    }
    Err(SmError::Aborted(MAX_SM_ATTEMPTS))
}
