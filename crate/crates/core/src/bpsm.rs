//! Two-server outsourcing of the pairing `e(A, B)`.
//!
//! The client splits the exponent 1 as `a1 a2 + b1 b2 (mod r)`, obtains the
//! six blinded multiples `a1 A, b1 A, a2 B, b2 B, x b1 A, x a2 B` through the
//! SM sub-protocol and asks
//!
//! ```text
//! U1: H1 = e(a1 A, a2 B)     L1 = e(x b1 A, b2 B)
//! U2: H2 = e(b1 A, b2 B)     L2 = e(a1 A, x a2 B)
//! ```
//!
//! each server's pair in random order. It accepts iff
//! `L1 L2 = (H1 H2)^x` and returns `H1 H2 = e(A, B)`.

use std::time::{Duration, Instant};

use num_bigint::{BigUint, RandBigInt};
use num_traits::{One, Zero};
use rand::{CryptoRng, Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counters::{snapshot, OpCounts, Party};
use crate::curve::Point;
use crate::pairing::{tate_pairing, GtElement, PairingError, PairingParams};
use crate::sm::{sm_outsource, DispatchError, SmError, SmServers};

/// Default bit size of the check exponent x.
pub const DEFAULT_CHECK_BITS: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ServerId {
    U1,
    U2,
}

impl ServerId {
    pub fn index(self) -> usize {
        match self {
            ServerId::U1 => 0,
            ServerId::U2 => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    Sm,
    Pairing,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Sm => "SM stage",
            Stage::Pairing => "pairing stage",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BpsmError {
    #[error("REJECTED at {stage}")]
    VerificationFailed { stage: Stage },
    #[error("computation failed at {stage}")]
    ComputationFailed { stage: Stage },
    #[error("SM sub-session gave up after repeated aborts")]
    Aborted,
    #[error("transport: {0}")]
    Transport(String),
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
    #[error("verification has not passed")]
    NotVerified,
}

impl BpsmError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            BpsmError::VerificationFailed { stage } | BpsmError::ComputationFailed { stage } => Some(*stage),
            _ => None,
        }
    }
}

fn from_sm(e: SmError) -> BpsmError {
    match e {
        SmError::VerificationFailed => BpsmError::VerificationFailed { stage: Stage::Sm },
        SmError::Transport(t) => BpsmError::Transport(t),
        SmError::InvalidInput(m) => BpsmError::InvalidInput(m),
        SmError::Aborted(_) => BpsmError::Aborted,
        _ => BpsmError::ComputationFailed { stage: Stage::Sm },
    }
}

/// Blinding coefficients and check exponent for one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpsmSecret {
    pub a1: BigUint,
    pub a2: BigUint,
    pub b1: BigUint,
    pub b2: BigUint,
    pub x: BigUint,
    pub m: u32,
}

/// Draws a1, a2, b1 uniformly from [1, r) and solves
/// `b2 = (1 - a1 a2) / b1 (mod r)`, resampling when b2 = 0.
/// x is uniform in [2, 2^m).
pub fn gen_coeffs<R: RngCore + ?Sized>(r: &BigUint, m: u32, rng: &mut R) -> BpsmSecret {
    assert!(m >= 2, "check exponent needs at least 2 bits");
    let one = BigUint::one();
    loop {
        let a1 = rng.gen_biguint_range(&one, r);
        let a2 = rng.gen_biguint_range(&one, r);
        let b1 = rng.gen_biguint_range(&one, r);
        if let Some(secret) = complete_coeffs(r, a1, a2, b1, m, rng) {
            return secret;
        }
    }
}

fn complete_coeffs<R: RngCore + ?Sized>(
    r: &BigUint,
    a1: BigUint,
    a2: BigUint,
    b1: BigUint,
    m: u32,
    rng: &mut R,
) -> Option<BpsmSecret> {
    let prod = (&a1 * &a2) % r;
    let rest = (r + 1u8 - prod) % r;
    let b1_inv = b1.modinv(r)?;
    let b2 = (rest * b1_inv) % r;
    if b2.is_zero() {
        return None;
    }
    let x = rng.gen_biguint_range(&BigUint::from(2u8), &(BigUint::one() << m));
    Some(BpsmSecret { a1, a2, b1, b2, x, m })
}

/// One pairing query. The tag is chosen by the client and echoed back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairQuery {
    pub left: Point,
    pub right: Point,
    pub tag: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairResponse {
    pub tag: u64,
    pub value: GtElement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    H1,
    L1,
    H2,
    L2,
}

/// The four queries, already in submission order per server.
#[derive(Debug, Clone)]
pub struct PreparedQueries {
    pub u1: [PairQuery; 2],
    pub u2: [PairQuery; 2],
    pub roles: [(u64, Role); 4],
    /// Whether each server's pair was swapped from the canonical (H, L) order.
    pub swapped: [bool; 2],
}

impl PreparedQueries {
    pub fn role_of(&self, tag: u64) -> Option<Role> {
        self.roles.iter().find(|(t, _)| *t == tag).map(|(_, r)| *r)
    }
}

/// The six blinded multiples obtained through SM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlindedPoints {
    pub a1a: Point,
    pub b1a: Point,
    pub a2b: Point,
    pub b2b: Point,
    pub xb1a: Point,
    pub xa2b: Point,
}

/// Runs the six SM sessions.
pub fn bpsm_blind<S, R>(
    a: &Point,
    b: &Point,
    secret: &BpsmSecret,
    pp: &PairingParams,
    servers: &mut S,
    rng: &mut R,
) -> Result<BlindedPoints, BpsmError>
where
    S: SmServers + ?Sized,
    R: RngCore + CryptoRng + ?Sized,
{
    let curve = pp.curve();
    let mut sm = |c: &BigUint, pt: &Point, rng: &mut R| sm_outsource(pt, c, curve, servers, rng).map_err(from_sm);
    let a1a = sm(&secret.a1, a, rng)?;
    let b1a = sm(&secret.b1, a, rng)?;
    let a2b = sm(&secret.a2, b, rng)?;
    let b2b = sm(&secret.b2, b, rng)?;
    let x = &secret.x % pp.r();
    let xb1a = sm(&x, &b1a, rng)?;
    let xa2b = sm(&x, &a2b, rng)?;
    Ok(BlindedPoints { a1a, b1a, a2b, b2b, xb1a, xa2b })
}

/// Tags the four pairing queries and shuffles each server's pair.
pub fn bpsm_assemble<R: RngCore + ?Sized>(pts: &BlindedPoints, rng: &mut R) -> PreparedQueries {
    let mut tags = [0u64; 4];
    for i in 0..4 {
        tags[i] = loop {
            let t = rng.next_u64();
            if !tags[..i].contains(&t) {
                break t;
            }
        };
    }
    let query = |left: &Point, right: &Point, tag: u64| PairQuery {
        left: left.clone(),
        right: right.clone(),
        tag,
    };
    let h1 = query(&pts.a1a, &pts.a2b, tags[0]);
    let l1 = query(&pts.xb1a, &pts.b2b, tags[1]);
    let h2 = query(&pts.b1a, &pts.b2b, tags[2]);
    let l2 = query(&pts.a1a, &pts.xa2b, tags[3]);
    let swapped = [rng.gen_bool(0.5), rng.gen_bool(0.5)];
    let order = |h: PairQuery, l: PairQuery, swap: bool| if swap { [l, h] } else { [h, l] };
    PreparedQueries {
        u1: order(h1, l1, swapped[0]),
        u2: order(h2, l2, swapped[1]),
        roles: [
            (tags[0], Role::H1),
            (tags[1], Role::L1),
            (tags[2], Role::H2),
            (tags[3], Role::L2),
        ],
        swapped,
    }
}

/// Runs the six SM sessions and assembles the shuffled pairing queries.
pub fn bpsm_prepare<S, R>(
    a: &Point,
    b: &Point,
    secret: &BpsmSecret,
    pp: &PairingParams,
    servers: &mut S,
    rng: &mut R,
) -> Result<PreparedQueries, BpsmError>
where
    S: SmServers + ?Sized,
    R: RngCore + CryptoRng + ?Sized,
{
    let pts = bpsm_blind(a, b, secret, pp, servers, rng)?;
    Ok(bpsm_assemble(&pts, rng))
}

/// Honest pairing server.
pub fn bpsm_server_pair(q: &PairQuery, pp: &PairingParams) -> Result<PairResponse, PairingError> {
    let value = tate_pairing(&q.left, &q.right, pp)?;
    Ok(PairResponse { tag: q.tag, value })
}

/// Outcome of the multiplicative check. Keeps `H1 H2` for recovery.
#[derive(Debug, Clone)]
pub struct PairingCheck {
    product: GtElement,
    passed: bool,
}

impl PairingCheck {
    pub fn passed(&self) -> bool {
        self.passed
    }
}

/// `L1 L2 == (H1 H2)^x`: two multiplications and one exponentiation in G_T.
pub fn bpsm_verify(h1: &GtElement, h2: &GtElement, l1: &GtElement, l2: &GtElement, x: &BigUint) -> PairingCheck {
    let product = h1.mul(h2);
    let lhs = l1.mul(l2);
    let passed = lhs == product.pow(x);
    PairingCheck { product, passed }
}

/// `e(A, B) = H1 H2`, reusing the product computed by [`bpsm_verify`].
pub fn bpsm_recover(check: &PairingCheck) -> Result<GtElement, BpsmError> {
    if !check.passed {
        return Err(BpsmError::NotVerified);
    }
    Ok(check.product.clone())
}

/// Both servers, able to serve SM queries and pairing queries.
pub trait Servers: SmServers {
    fn query_pair(&mut self, server: ServerId, q: &PairQuery) -> Result<PairResponse, DispatchError>;
}

/// In-line honest servers without transport.
#[derive(Debug, Clone)]
pub struct DirectPairServers {
    pub params: PairingParams,
}

impl SmServers for DirectPairServers {
    fn query_u1(&mut self, q: &crate::sm::SmQueryU1) -> Result<crate::sm::SmResponseU1, DispatchError> {
        crate::sm::DirectServers.query_u1(q)
    }

    fn query_u2(&mut self, q: &crate::sm::SmQueryU2) -> Result<crate::sm::SmResponseU2, DispatchError> {
        crate::sm::DirectServers.query_u2(q)
    }
}

impl Servers for DirectPairServers {
    fn query_pair(&mut self, _server: ServerId, q: &PairQuery) -> Result<PairResponse, DispatchError> {
        crate::counters::as_server(|| bpsm_server_pair(q, &self.params))
            .0
            .map_err(|_| DispatchError::ComputationFailed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BpsmConfig {
    /// Bit size m of the check exponent.
    pub check_bits: u32,
}

impl Default for BpsmConfig {
    fn default() -> Self {
        BpsmConfig {
            check_bits: DEFAULT_CHECK_BITS,
        }
    }
}

/// Wall time of each client phase of one run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimings {
    /// Coefficient generation and query assembly, excluding the SM sessions.
    pub transform: Duration,
    /// The six SM sessions end to end (client and server work).
    pub sm_total: Duration,
    /// Dispatch of the four pairing queries.
    pub pair_queries: Duration,
    pub verify: Duration,
    pub recover: Duration,
}

impl PhaseTimings {
    /// Client-side BPSM work: blinding, verification and recovery.
    pub fn client_total(&self) -> Duration {
        self.transform + self.verify + self.recover
    }
}

#[derive(Debug)]
struct Session {
    secret: BpsmSecret,
    queries: Option<PreparedQueries>,
}

/// Client for pairing delegation. Holds no state between runs: nothing is
/// precomputed before the inputs arrive and nothing survives a run.
#[derive(Debug, Default)]
pub struct BpsmClient {
    config: BpsmConfig,
    session: Option<Session>,
}

/// Operations spent in a phase, by party. Server work is only visible here
/// when the servers run on the client's thread.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartyOps {
    pub client: OpCounts,
    pub server: OpCounts,
}

impl std::ops::AddAssign for PartyOps {
    fn add_assign(&mut self, rhs: PartyOps) {
        self.client += rhs.client;
        self.server += rhs.server;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseOps {
    pub transform: PartyOps,
    pub sm_total: PartyOps,
    pub pair_queries: PartyOps,
    pub verify: PartyOps,
    pub recover: PartyOps,
}

/// Extra observations from a run, used by tests and benchmarks.
#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    pub timings: PhaseTimings,
    pub ops: PhaseOps,
    pub swapped: Option<[bool; 2]>,
}

struct Lap {
    started: Instant,
    client: OpCounts,
    server: OpCounts,
}

impl Lap {
    fn start() -> Lap {
        Lap {
            started: Instant::now(),
            client: snapshot(Party::Client),
            server: snapshot(Party::Server),
        }
    }

    fn stop(self) -> (Duration, PartyOps) {
        let elapsed = self.started.elapsed();
        let ops = PartyOps {
            client: snapshot(Party::Client) - self.client,
            server: snapshot(Party::Server) - self.server,
        };
        (elapsed, ops)
    }
}

impl BpsmClient {
    pub fn new(config: BpsmConfig) -> BpsmClient {
        BpsmClient { config, session: None }
    }

    pub fn config(&self) -> BpsmConfig {
        self.config
    }

    /// True when the client holds no session material.
    pub fn is_empty(&self) -> bool {
        self.session.is_none()
    }

    /// Delegates `e(A, B)` to the two servers.
    pub fn outsource<S, R>(
        &mut self,
        a: &Point,
        b: &Point,
        pp: &PairingParams,
        servers: &mut S,
        rng: &mut R,
    ) -> Result<GtElement, BpsmError>
    where
        S: Servers + ?Sized,
        R: RngCore + CryptoRng + ?Sized,
    {
        self.outsource_traced(a, b, pp, servers, rng).0
    }

    pub fn outsource_traced<S, R>(
        &mut self,
        a: &Point,
        b: &Point,
        pp: &PairingParams,
        servers: &mut S,
        rng: &mut R,
    ) -> (Result<GtElement, BpsmError>, RunTrace)
    where
        S: Servers + ?Sized,
        R: RngCore + CryptoRng + ?Sized,
    {
        let mut trace = RunTrace::default();
        let out = self.run(a, b, pp, servers, rng, &mut trace);
        self.session = None;
        (out, trace)
    }

    fn run<S, R>(
        &mut self,
        a: &Point,
        b: &Point,
        pp: &PairingParams,
        servers: &mut S,
        rng: &mut R,
        trace: &mut RunTrace,
    ) -> Result<GtElement, BpsmError>
    where
        S: Servers + ?Sized,
        R: RngCore + CryptoRng + ?Sized,
    {
        let curve = pp.curve();
        if !curve.is_on_curve(a) || !curve.is_on_curve(b) {
            return Err(BpsmError::InvalidInput("input point not on curve"));
        }
        let lap = Lap::start();
        let secret = gen_coeffs(pp.r(), self.config.check_bits, rng);
        let (mut transform, mut transform_ops) = lap.stop();

        let lap = Lap::start();
        let blinded = bpsm_blind(a, b, &secret, pp, servers, rng);
        (trace.timings.sm_total, trace.ops.sm_total) = lap.stop();
        let blinded = blinded?;

        let lap = Lap::start();
        let prepared = bpsm_assemble(&blinded, rng);
        let (t, o) = lap.stop();
        transform += t;
        transform_ops += o;
        trace.timings.transform = transform;
        trace.ops.transform = transform_ops;
        trace.swapped = Some(prepared.swapped);
        let session = self.session.insert(Session {
            secret,
            queries: Some(prepared),
        });

        let lap = Lap::start();
        let queries = session.queries.as_ref().expect("just inserted");
        let mut values: [Option<GtElement>; 4] = Default::default();
        for (server, pair) in [(ServerId::U1, &queries.u1), (ServerId::U2, &queries.u2)] {
            for q in pair.iter() {
                let resp = servers.query_pair(server, q).map_err(|e| match e {
                    DispatchError::ComputationFailed => BpsmError::ComputationFailed { stage: Stage::Pairing },
                    DispatchError::Malformed(_) => BpsmError::VerificationFailed { stage: Stage::Pairing },
                    DispatchError::Transport(t) => BpsmError::Transport(t),
                })?;
                // A response must echo one of this server's own tags.
                if !pair.iter().any(|own| own.tag == resp.tag) {
                    return Err(BpsmError::VerificationFailed { stage: Stage::Pairing });
                }
                let slot = match queries.role_of(resp.tag) {
                    Some(Role::H1) => 0,
                    Some(Role::L1) => 1,
                    Some(Role::H2) => 2,
                    Some(Role::L2) => 3,
                    None => return Err(BpsmError::VerificationFailed { stage: Stage::Pairing }),
                };
                if values[slot].replace(resp.value).is_some() {
                    return Err(BpsmError::VerificationFailed { stage: Stage::Pairing });
                }
                if values[slot].as_ref().map(|v| v.value().modulus() != pp.p()).unwrap_or(false) {
                    return Err(BpsmError::VerificationFailed { stage: Stage::Pairing });
                }
            }
        }
        (trace.timings.pair_queries, trace.ops.pair_queries) = lap.stop();
        let [Some(h1), Some(l1), Some(h2), Some(l2)] = values else {
            return Err(BpsmError::VerificationFailed { stage: Stage::Pairing });
        };

        let lap = Lap::start();
        let check = bpsm_verify(&h1, &h2, &l1, &l2, &session.secret.x);
        (trace.timings.verify, trace.ops.verify) = lap.stop();
        if !check.passed() {
            return Err(BpsmError::VerificationFailed { stage: Stage::Pairing });
        }
        let lap = Lap::start();
        let out = bpsm_recover(&check);
        (trace.timings.recover, trace.ops.recover) = lap.stop();
        out
    }
}

/// One-shot convenience wrapper around [`BpsmClient`].
pub fn bpsm_outsource<S, R>(
    a: &Point,
    b: &Point,
    pp: &PairingParams,
    servers: &mut S,
    rng: &mut R,
) -> Result<GtElement, BpsmError>
where
    S: Servers + ?Sized,
    R: RngCore + CryptoRng + ?Sized,
{
    BpsmClient::new(BpsmConfig::default()).outsource(a, b, pp, servers, rng)
}
