//! Server side of the harness: request handling and scripted misbehavior.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use num_bigint::{BigUint, RandBigInt};
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::wire::{ErrorCode, FieldReader, Kind, WireError, WireMessage};
use crate::algebra::{Fp2Element, Modulus};
use crate::bpsm::{bpsm_server_pair, PairQuery};
use crate::counters::{self, OpCounts};
use crate::curve::{scalar_mul, CurveParams, Point};
use crate::pairing::{GtElement, PairingParams};
use crate::sm::{sm_server_u1, sm_server_u2, SmQueryU1, SmQueryU2};

/// Which bit a [`ServerBehavior::BitFlip`] server flips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BitPolicy {
    Low,
    High,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ServerBehavior {
    Honest,
    /// Uniformly random values of the right shape.
    RandomOutput,
    /// One bit of the first coordinate of every returned value.
    BitFlip { policy: BitPolicy },
    /// The identity of the output group.
    IdentityOutput,
    /// Points multiplied by `factor`, pairing values by the unit `factor + i`.
    ScaleOutput { factor: u64 },
    /// Skips the work: SM answers echo the query point, pairing answers
    /// replay the first value given on the connection.
    Lazy,
    /// Multiplies the first pairing answer by a unit `u` of G_T and the second
    /// by `u^x'` for a guessed `x'` in `[2, 2^m)`. Honest on SM queries.
    ScaleConsistent { m: u32 },
}

impl ServerBehavior {
    /// Every misbehaving strategy, in a fixed order.
    pub fn adversaries() -> Vec<ServerBehavior> {
        vec![
            ServerBehavior::RandomOutput,
            ServerBehavior::BitFlip { policy: BitPolicy::Random },
            ServerBehavior::IdentityOutput,
            ServerBehavior::ScaleOutput { factor: 2 },
            ServerBehavior::Lazy,
            ServerBehavior::ScaleConsistent { m: 64 },
        ]
    }

    pub fn is_honest(&self) -> bool {
        matches!(self, ServerBehavior::Honest)
    }
}

/// Which queries a misbehaving server tampers with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Scope {
    All,
    Sm,
    #[default]
    Pairing,
}

impl Scope {
    fn covers_sm(self) -> bool {
        matches!(self, Scope::All | Scope::Sm)
    }

    fn covers_pairing(self) -> bool {
        matches!(self, Scope::All | Scope::Pairing)
    }
}

/// Behavior, scope and the seed driving the server's own randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ServerSpec {
    pub behavior: ServerBehavior,
    pub scope: Scope,
    pub seed: u64,
}

impl ServerSpec {
    pub fn honest() -> ServerSpec {
        ServerSpec::new(ServerBehavior::Honest, Scope::All)
    }

    pub fn new(behavior: ServerBehavior, scope: Scope) -> ServerSpec {
        ServerSpec { behavior, scope, seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> ServerSpec {
        self.seed = seed;
        self
    }
}

impl fmt::Display for ServerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.behavior {
            ServerBehavior::Honest => return f.write_str("honest"),
            ServerBehavior::RandomOutput => f.write_str("random")?,
            ServerBehavior::BitFlip { policy } => {
                let p = match policy {
                    BitPolicy::Low => "low",
                    BitPolicy::High => "high",
                    BitPolicy::Random => "random",
                };
                write!(f, "bitflip:{p}")?
            }
            ServerBehavior::IdentityOutput => f.write_str("identity")?,
            ServerBehavior::ScaleOutput { factor } => write!(f, "scale:{factor}")?,
            ServerBehavior::Lazy => f.write_str("lazy")?,
            ServerBehavior::ScaleConsistent { m } => write!(f, "scale-consistent:{m}")?,
        }
        let scope = match self.scope {
            Scope::All => "all",
            Scope::Sm => "sm",
            Scope::Pairing => "pairing",
        };
        write!(f, "@{scope}")
    }
}

/// `name[:arg][@scope]`, e.g. `bitflip`, `scale:3@sm`, `scale-consistent:16`.
/// The scope defaults to the pairing stage.
impl FromStr for ServerSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<ServerSpec, String> {
        let (body, scope) = match s.split_once('@') {
            Some((b, "all")) => (b, Scope::All),
            Some((b, "sm")) => (b, Scope::Sm),
            Some((b, "pairing")) => (b, Scope::Pairing),
            Some((_, other)) => return Err(format!("unknown scope `{other}`")),
            None => (s, Scope::default()),
        };
        let (name, arg) = match body.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (body, None),
        };
        let num = |what: &str| -> Result<u64, String> {
            arg.ok_or(format!("`{name}` needs {what}"))?
                .parse()
                .map_err(|_| format!("bad {what} for `{name}`"))
        };
        let behavior = match (name, arg) {
            ("honest", None) => return Ok(ServerSpec::honest()),
            ("random", None) => ServerBehavior::RandomOutput,
            ("bitflip", None) | ("bitflip", Some("random")) => ServerBehavior::BitFlip { policy: BitPolicy::Random },
            ("bitflip", Some("low")) => ServerBehavior::BitFlip { policy: BitPolicy::Low },
            ("bitflip", Some("high")) => ServerBehavior::BitFlip { policy: BitPolicy::High },
            ("identity", None) => ServerBehavior::IdentityOutput,
            ("scale", _) => ServerBehavior::ScaleOutput { factor: num("a factor")? },
            ("lazy", None) => ServerBehavior::Lazy,
            ("scale-consistent", None) => ServerBehavior::ScaleConsistent { m: 64 },
            ("scale-consistent", Some(_)) => {
                let m = num("a bit size")?;
                if !(2..=4096).contains(&m) {
                    return Err("bit size out of range".into());
                }
                ServerBehavior::ScaleConsistent { m: m as u32 }
            }
            _ => return Err(format!("unknown behavior `{body}`")),
        };
        Ok(ServerSpec::new(behavior, scope))
    }
}

/// State shared by every connection of one server.
#[derive(Debug)]
pub struct ServerState {
    spec: ServerSpec,
    params: PairingParams,
    totals: Mutex<OpCounts>,
}

impl ServerState {
    pub fn new(spec: ServerSpec, params: PairingParams) -> Arc<ServerState> {
        Arc::new(ServerState {
            spec,
            params,
            totals: Mutex::new(OpCounts::default()),
        })
    }

    pub fn spec(&self) -> ServerSpec {
        self.spec
    }

    pub fn params(&self) -> &PairingParams {
        &self.params
    }

    /// Operations spent answering every query so far.
    pub fn totals(&self) -> OpCounts {
        *self.totals.lock().unwrap()
    }

    pub fn session(self: &Arc<Self>) -> Session {
        Session {
            state: Arc::clone(self),
            pair_cache: None,
            pending_scale: None,
        }
    }
}

type RawPoint = Option<(BigUint, BigUint)>;

/// One connection. Requests are handled in arrival order.
#[derive(Debug)]
pub struct Session {
    state: Arc<ServerState>,
    pair_cache: Option<Vec<Vec<u8>>>,
    pending_scale: Option<(GtElement, BigUint)>,
}

enum Failure {
    Wire,
    Code(ErrorCode),
}

impl From<WireError> for Failure {
    fn from(_: WireError) -> Failure {
        Failure::Wire
    }
}

impl Session {
    /// Answers one frame. Never fails: problems become `ERROR` replies.
    pub fn handle(&mut self, frame: &[u8]) -> Vec<u8> {
        let (reply, spent) = counters::as_server(|| self.respond(frame));
        *self.state.totals.lock().unwrap() += spent;
        reply.encode()
    }

    fn respond(&mut self, frame: &[u8]) -> WireMessage {
        let tag = WireMessage::peek_tag(frame);
        let msg = match WireMessage::decode(frame) {
            Ok(m) => m,
            Err(WireError::UnsupportedVersion(_)) => return WireMessage::error(tag, ErrorCode::UnsupportedVersion),
            Err(_) => return WireMessage::error(tag, ErrorCode::Malformed),
        };
        let mut rng = adversary_rng(self.state.spec.seed, frame);
        let out = match msg.kind {
            Kind::SmQ1 => self.answer_sm_q1(&msg, &mut rng),
            Kind::SmQ2 => self.answer_sm_q2(&msg, &mut rng),
            Kind::PairQ => self.answer_pair(&msg, &mut rng),
            _ => Err(Failure::Code(ErrorCode::UnexpectedKind)),
        };
        match out {
            Ok(reply) => reply,
            Err(Failure::Wire) => WireMessage::error(tag, ErrorCode::Malformed),
            Err(Failure::Code(c)) => WireMessage::error(tag, c),
        }
    }

    fn answer_sm_q1(&mut self, msg: &WireMessage, rng: &mut ChaCha20Rng) -> Result<WireMessage, Failure> {
        let mut rd = msg.reader();
        let (n, a, b, point) = read_sm_header(&mut rd)?;
        let c1 = rd.uint()?;
        let r1 = rd.uint()?;
        let r2 = rd.uint()?;
        rd.finish()?;
        let curve = CurveParams::blinded(a.clone(), b.clone()).map_err(|_| Failure::Code(ErrorCode::Malformed))?;
        if self.lazy_sm() {
            return Ok(reply(Kind::SmResp, msg.tag, point_fields(&[raw(&point), raw(&point)])));
        }
        let q = SmQueryU1 { point, c1, r1, r2, a, b };
        let resp = sm_server_u1(&q).map_err(|_| Failure::Code(ErrorCode::ComputationFailed))?;
        let honest = vec![raw(&resp.q1), raw(&resp.q3)];
        let fields = self.tamper_sm(honest, &n, &curve, rng)?;
        Ok(reply(Kind::SmResp, msg.tag, fields))
    }

    fn answer_sm_q2(&mut self, msg: &WireMessage, rng: &mut ChaCha20Rng) -> Result<WireMessage, Failure> {
        let mut rd = msg.reader();
        let (n, a, b, point) = read_sm_header(&mut rd)?;
        let c2 = rd.uint()?;
        rd.finish()?;
        let curve = CurveParams::blinded(a.clone(), b.clone()).map_err(|_| Failure::Code(ErrorCode::Malformed))?;
        if self.lazy_sm() {
            return Ok(reply(Kind::SmResp, msg.tag, point_fields(&[raw(&point)])));
        }
        let q = SmQueryU2 { point, c2, a, b };
        let resp = sm_server_u2(&q).map_err(|_| Failure::Code(ErrorCode::ComputationFailed))?;
        let fields = self.tamper_sm(vec![raw(&resp.q2)], &n, &curve, rng)?;
        Ok(reply(Kind::SmResp, msg.tag, fields))
    }

    fn answer_pair(&mut self, msg: &WireMessage, rng: &mut ChaCha20Rng) -> Result<WireMessage, Failure> {
        let pp = self.state.params.clone();
        let mut rd = msg.reader();
        let left = rd.point(pp.p())?;
        let right = rd.point(pp.p())?;
        rd.finish()?;
        if !pp.curve().is_on_curve(&left) || !pp.curve().is_on_curve(&right) {
            return Err(Failure::Code(ErrorCode::Malformed));
        }
        let q = PairQuery { left, right, tag: msg.tag };
        let value = bpsm_server_pair(&q, &pp)
            .map_err(|_| Failure::Code(ErrorCode::ComputationFailed))?
            .value;
        let spec = self.state.spec;
        let fields = if spec.scope.covers_pairing() {
            self.tamper_pair(value, &pp, rng)
        } else {
            gt_fields(&value)
        };
        Ok(reply(Kind::PairResp, msg.tag, fields))
    }

    fn lazy_sm(&self) -> bool {
        let spec = self.state.spec;
        spec.behavior == ServerBehavior::Lazy && spec.scope.covers_sm()
    }

    fn tamper_sm(
        &mut self,
        honest: Vec<RawPoint>,
        n: &Modulus,
        curve: &CurveParams,
        rng: &mut ChaCha20Rng,
    ) -> Result<Vec<Vec<u8>>, Failure> {
        let spec = self.state.spec;
        if !spec.scope.covers_sm() {
            return Ok(point_fields(&honest));
        }
        let out: Vec<RawPoint> = match spec.behavior {
            ServerBehavior::Honest | ServerBehavior::ScaleConsistent { .. } | ServerBehavior::Lazy => honest,
            ServerBehavior::RandomOutput => honest
                .iter()
                .map(|_| Some((rng.gen_biguint_below(n.value()), rng.gen_biguint_below(n.value()))))
                .collect(),
            ServerBehavior::BitFlip { policy } => honest
                .into_iter()
                .map(|p| {
                    let (mut x, y) = p.unwrap_or_default();
                    let bit = pick_bit(policy, n.value().bits(), rng);
                    x.set_bit(bit, !x.bit(bit));
                    Some((x, y))
                })
                .collect(),
            ServerBehavior::IdentityOutput => honest.iter().map(|_| None).collect(),
            ServerBehavior::ScaleOutput { factor } => {
                let k = BigUint::from(factor);
                let mut out = Vec::with_capacity(honest.len());
                for p in &honest {
                    let pt = match p {
                        None => Point::Infinity,
                        Some((x, y)) => Point::affine(n.reduce(x), n.reduce(y)).expect("same ring"),
                    };
                    let scaled = scalar_mul(&pt, &k, curve).map_err(|_| Failure::Code(ErrorCode::ComputationFailed))?;
                    out.push(raw(&scaled));
                }
                out
            }
        };
        Ok(point_fields(&out))
    }

    fn tamper_pair(&mut self, honest: GtElement, pp: &PairingParams, rng: &mut ChaCha20Rng) -> Vec<Vec<u8>> {
        let p = pp.p();
        match self.state.spec.behavior {
            ServerBehavior::Honest => gt_fields(&honest),
            ServerBehavior::RandomOutput => {
                let v = Fp2Element::random(p, rng);
                fields_of(&[v.c0_uint().clone(), v.c1_uint().clone()])
            }
            ServerBehavior::BitFlip { policy } => {
                let mut c0 = honest.value().c0_uint().clone();
                let bit = pick_bit(policy, p.bits(), rng);
                c0.set_bit(bit, !c0.bit(bit));
                fields_of(&[c0, honest.value().c1_uint().clone()])
            }
            ServerBehavior::IdentityOutput => gt_fields(&GtElement::one(p)),
            ServerBehavior::ScaleOutput { factor } => {
                let unit = Fp2Element::from_parts(p, BigUint::from(factor) % p.value(), BigUint::one())
                    .expect("reduced");
                gt_fields(&GtElement::from_fp2(honest.value().mul(&unit)))
            }
            ServerBehavior::Lazy => self.pair_cache.get_or_insert_with(|| gt_fields(&honest)).clone(),
            ServerBehavior::ScaleConsistent { m } => match self.pending_scale.take() {
                None => {
                    let unit = loop {
                        let u = Fp2Element::random(p, rng).pow(pp.final_exp());
                        if !u.is_one() && !u.is_zero() {
                            break GtElement::from_fp2(u);
                        }
                    };
                    let guess = rng.gen_biguint_range(&BigUint::from(2u8), &(BigUint::one() << m));
                    let out = honest.mul(&unit);
                    self.pending_scale = Some((unit, guess));
                    gt_fields(&out)
                }
                Some((unit, guess)) => gt_fields(&honest.mul(&unit.pow(&guess))),
            },
        }
    }
}

fn adversary_rng(seed: u64, frame: &[u8]) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(seed.to_be_bytes());
    h.update(frame);
    ChaCha20Rng::from_seed(h.finalize().into())
}

fn pick_bit(policy: BitPolicy, bits: u64, rng: &mut ChaCha20Rng) -> u64 {
    match policy {
        BitPolicy::Low => 0,
        BitPolicy::High => bits.saturating_sub(1),
        BitPolicy::Random => rng.gen_range(0..bits.max(1)),
    }
}

fn read_sm_header(
    rd: &mut FieldReader<'_>,
) -> Result<(Modulus, crate::algebra::RingElement, crate::algebra::RingElement, Point), Failure> {
    let n = Modulus::composite(rd.uint()?).map_err(|_| Failure::Code(ErrorCode::Malformed))?;
    let a = n.element(rd.residue(&n, "a")?).expect("checked range");
    let b = n.element(rd.residue(&n, "b")?).expect("checked range");
    let point = rd.point(&n)?;
    Ok((n, a, b, point))
}

fn raw(p: &Point) -> RawPoint {
    match p {
        Point::Infinity => None,
        Point::Affine { x, y } => Some((x.residue().clone(), y.residue().clone())),
    }
}

fn fields_of(values: &[BigUint]) -> Vec<Vec<u8>> {
    let mut m = WireMessage::new(Kind::SmResp, 0);
    for v in values {
        m.push_uint(v);
    }
    m.fields
}

fn point_fields(points: &[RawPoint]) -> Vec<Vec<u8>> {
    let mut values = Vec::new();
    for p in points {
        match p {
            None => values.push(BigUint::zero()),
            Some((x, y)) => values.extend([BigUint::one(), x.clone(), y.clone()]),
        }
    }
    fields_of(&values)
}

fn gt_fields(v: &GtElement) -> Vec<Vec<u8>> {
    fields_of(&[v.value().c0_uint().clone(), v.value().c1_uint().clone()])
}

fn reply(kind: Kind, tag: u64, fields: Vec<Vec<u8>>) -> WireMessage {
    let mut m = WireMessage::new(kind, tag);
    m.fields = fields;
    m
}
