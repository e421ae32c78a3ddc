//! In-process and TCP transports, and the client-side server handle.

use std::collections::HashMap;
use std::fmt;
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use thiserror::Error;

use super::server::{ServerSpec, ServerState, Session};
use super::wire::{read_frame, write_frame, ErrorCode, Kind, WireError, WireMessage};
use crate::bpsm::{PairQuery, PairResponse, ServerId, Servers};
use crate::counters::OpCounts;
use crate::pairing::PairingParams;
use crate::sm::{DispatchError, SmQueryU1, SmQueryU2, SmResponseU1, SmResponseU2, SmServers};

const IO_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("no in-process server registered as `{0}`")]
    UnknownEndpoint(String),
    #[error("endpoint `{0}` is already in use")]
    EndpointInUse(String),
    #[error("connection closed by peer")]
    Closed,
    #[error("i/o: {0}")]
    Io(String),
}

impl From<io::Error> for TransportError {
    fn from(e: io::Error) -> TransportError {
        TransportError::Io(e.to_string())
    }
}

/// `mem:<key>` for the in-process registry, otherwise a TCP `host:port`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Endpoint {
    InProcess(String),
    Tcp(String),
}

impl FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Endpoint, String> {
        if let Some(key) = s.strip_prefix("mem:") {
            if key.is_empty() {
                return Err("empty in-process key".into());
            }
            return Ok(Endpoint::InProcess(key.to_string()));
        }
        match s.rsplit_once(':') {
            Some((host, port)) if !host.is_empty() && port.parse::<u16>().is_ok() => Ok(Endpoint::Tcp(s.to_string())),
            _ => Err(format!("`{s}` is neither mem:<key> nor host:port")),
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::InProcess(k) => write!(f, "mem:{k}"),
            Endpoint::Tcp(a) => f.write_str(a),
        }
    }
}

/// A request/response channel to one server.
pub trait Connection: Send {
    fn roundtrip(&mut self, frame: &[u8]) -> Result<Vec<u8>, TransportError>;
}

struct InProcessConnection {
    session: Session,
}

impl Connection for InProcessConnection {
    fn roundtrip(&mut self, frame: &[u8]) -> Result<Vec<u8>, TransportError> {
        Ok(self.session.handle(frame))
    }
}

struct TcpConnection {
    stream: TcpStream,
}

impl Connection for TcpConnection {
    fn roundtrip(&mut self, frame: &[u8]) -> Result<Vec<u8>, TransportError> {
        write_frame(&mut self.stream, frame)?;
        read_frame(&mut self.stream)?.ok_or(TransportError::Closed)
    }
}

fn registry() -> &'static Mutex<HashMap<String, Arc<ServerState>>> {
    static REGISTRY: OnceLock<Mutex<HashMap<String, Arc<ServerState>>>> = OnceLock::new();
    REGISTRY.get_or_init(Default::default)
}

pub fn connect(endpoint: &Endpoint) -> Result<Box<dyn Connection>, TransportError> {
    match endpoint {
        Endpoint::InProcess(key) => {
            let state = registry()
                .lock()
                .unwrap()
                .get(key)
                .cloned()
                .ok_or_else(|| TransportError::UnknownEndpoint(key.clone()))?;
            Ok(Box::new(InProcessConnection {
                session: state.session(),
            }))
        }
        Endpoint::Tcp(addr) => {
            let addrs: Vec<SocketAddr> = std::net::ToSocketAddrs::to_socket_addrs(addr.as_str())?.collect();
            let mut last = TransportError::Io(format!("`{addr}` resolved to nothing"));
            for a in addrs {
                match TcpStream::connect_timeout(&a, IO_TIMEOUT) {
                    Ok(stream) => {
                        stream.set_nodelay(true)?;
                        stream.set_read_timeout(Some(IO_TIMEOUT))?;
                        stream.set_write_timeout(Some(IO_TIMEOUT))?;
                        return Ok(Box::new(TcpConnection { stream }));
                    }
                    Err(e) => last = e.into(),
                }
            }
            Err(last)
        }
    }
}

/// A running server. Dropping it stops the server.
pub struct ServerHandle {
    endpoint: Endpoint,
    state: Arc<ServerState>,
    tcp: Option<TcpRunner>,
}

struct TcpRunner {
    stop: Arc<AtomicBool>,
    local: SocketAddr,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    /// Operations spent by this server on all connections so far.
    pub fn totals(&self) -> OpCounts {
        self.state.totals()
    }

    /// Blocks until the server stops. TCP servers only stop from another
    /// thread; in-process servers return immediately.
    pub fn wait(mut self) {
        if let Some(h) = self.tcp.as_mut().and_then(|t| t.accept.take()) {
            let _ = h.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        match &mut self.tcp {
            None => {
                if let Endpoint::InProcess(key) = &self.endpoint {
                    registry().lock().unwrap().remove(key);
                }
            }
            Some(t) => {
                t.stop.store(true, Ordering::SeqCst);
                // wake the blocking accept
                let _ = TcpStream::connect_timeout(&t.local, Duration::from_secs(1));
                if let Some(h) = t.accept.take() {
                    let _ = h.join();
                }
            }
        }
    }
}

/// Starts a server. A TCP port of 0 picks a free port; see
/// [`ServerHandle::endpoint`] for the bound address.
pub fn serve(endpoint: &Endpoint, spec: ServerSpec, params: PairingParams) -> Result<ServerHandle, TransportError> {
    let state = ServerState::new(spec, params);
    match endpoint {
        Endpoint::InProcess(key) => {
            let mut reg = registry().lock().unwrap();
            if reg.contains_key(key) {
                return Err(TransportError::EndpointInUse(key.clone()));
            }
            reg.insert(key.clone(), Arc::clone(&state));
            Ok(ServerHandle {
                endpoint: endpoint.clone(),
                state,
                tcp: None,
            })
        }
        Endpoint::Tcp(addr) => {
            let listener = TcpListener::bind(addr.as_str())?;
            let local = listener.local_addr()?;
            let stop = Arc::new(AtomicBool::new(false));
            let accept = {
                let stop = Arc::clone(&stop);
                let state = Arc::clone(&state);
                thread::spawn(move || accept_loop(listener, state, stop))
            };
            Ok(ServerHandle {
                endpoint: Endpoint::Tcp(local.to_string()),
                state,
                tcp: Some(TcpRunner {
                    stop,
                    local,
                    accept: Some(accept),
                }),
            })
        }
    }
}

fn accept_loop(listener: TcpListener, state: Arc<ServerState>, stop: Arc<AtomicBool>) {
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let session = state.session();
        thread::spawn(move || serve_connection(stream, session));
    }
}

fn serve_connection(mut stream: TcpStream, mut session: Session) {
    let _ = stream.set_nodelay(true);
    loop {
        match read_frame(&mut stream) {
            Ok(Some(frame)) => {
                let reply = session.handle(&frame);
                if write_frame(&mut stream, &reply).is_err() {
                    return;
                }
            }
            Ok(None) => return,
            Err(e) => {
                // an oversized length prefix leaves the stream unframed
                if e.kind() == io::ErrorKind::InvalidData {
                    let _ = write_frame(&mut stream, &WireMessage::error(0, ErrorCode::Malformed).encode());
                }
                return;
            }
        }
    }
}

/// Both servers as seen by the client, over any transport.
pub struct RemoteServers {
    u1: Box<dyn Connection>,
    u2: Box<dyn Connection>,
    params: PairingParams,
    next_tag: u64,
}

impl RemoteServers {
    pub fn connect(u1: &Endpoint, u2: &Endpoint, params: PairingParams) -> Result<RemoteServers, TransportError> {
        Ok(RemoteServers {
            u1: connect(u1)?,
            u2: connect(u2)?,
            params,
            next_tag: 1,
        })
    }

    fn exchange(&mut self, server: ServerId, msg: &WireMessage, expect: Kind) -> Result<WireMessage, DispatchError> {
        let conn = match server {
            ServerId::U1 => &mut self.u1,
            ServerId::U2 => &mut self.u2,
        };
        let frame = conn
            .roundtrip(&msg.encode())
            .map_err(|e| DispatchError::Transport(e.to_string()))?;
        let reply = WireMessage::decode(&frame).map_err(malformed)?;
        if reply.tag != msg.tag {
            return Err(DispatchError::Malformed("tag mismatch".into()));
        }
        match reply.kind {
            k if k == expect => Ok(reply),
            Kind::Error => {
                let code = reply.reader().uint().ok().and_then(|c| u64::try_from(c).ok());
                match code.and_then(ErrorCode::from_u64) {
                    Some(ErrorCode::ComputationFailed) => Err(DispatchError::ComputationFailed),
                    other => Err(DispatchError::Malformed(format!("server error {other:?}"))),
                }
            }
            other => Err(DispatchError::Malformed(format!("unexpected {other:?} reply"))),
        }
    }

    fn fresh_tag(&mut self) -> u64 {
        let t = self.next_tag;
        self.next_tag += 1;
        t
    }
}

fn malformed(e: WireError) -> DispatchError {
    DispatchError::Malformed(e.to_string())
}

impl SmServers for RemoteServers {
    fn query_u1(&mut self, q: &SmQueryU1) -> Result<SmResponseU1, DispatchError> {
        let mut msg = WireMessage::new(Kind::SmQ1, self.fresh_tag());
        msg.push_uint(q.modulus().value());
        msg.push_uint(q.a.residue());
        msg.push_uint(q.b.residue());
        msg.push_point(&q.point);
        for v in [&q.c1, &q.r1, &q.r2] {
            msg.push_uint(v);
        }
        let reply = self.exchange(ServerId::U1, &msg, Kind::SmResp)?;
        let n = q.modulus();
        let mut rd = reply.reader();
        let q1 = rd.point(n).map_err(malformed)?;
        let q3 = rd.point(n).map_err(malformed)?;
        rd.finish().map_err(malformed)?;
        Ok(SmResponseU1 { q1, q3 })
    }

    fn query_u2(&mut self, q: &SmQueryU2) -> Result<SmResponseU2, DispatchError> {
        let mut msg = WireMessage::new(Kind::SmQ2, self.fresh_tag());
        msg.push_uint(q.modulus().value());
        msg.push_uint(q.a.residue());
        msg.push_uint(q.b.residue());
        msg.push_point(&q.point);
        msg.push_uint(&q.c2);
        let reply = self.exchange(ServerId::U2, &msg, Kind::SmResp)?;
        let mut rd = reply.reader();
        let q2 = rd.point(q.modulus()).map_err(malformed)?;
        rd.finish().map_err(malformed)?;
        Ok(SmResponseU2 { q2 })
    }
}

impl Servers for RemoteServers {
    fn query_pair(&mut self, server: ServerId, q: &PairQuery) -> Result<PairResponse, DispatchError> {
        let msg = WireMessage::new(Kind::PairQ, q.tag).with_point(&q.left).with_point(&q.right);
        let reply = self.exchange(server, &msg, Kind::PairResp)?;
        let mut rd = reply.reader();
        let value = rd.gt(self.params.p()).map_err(malformed)?;
        rd.finish().map_err(malformed)?;
        Ok(PairResponse { tag: reply.tag, value })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bpsm::bpsm_outsource;
    use crate::harness::server::{ServerBehavior, Scope};
    use crate::pairing::tate_pairing;
    use crate::params::preset;
    use num_bigint::BigUint;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn pair_of(spec2: ServerSpec, tcp: bool, key: &str) -> (ServerHandle, ServerHandle) {
        let pp = preset("toy-32").unwrap();
        let ep = |i: u8| {
            if tcp {
                Endpoint::Tcp("127.0.0.1:0".into())
            } else {
                Endpoint::InProcess(format!("{key}-{i}"))
            }
        };
        (
            serve(&ep(1), ServerSpec::honest(), pp.clone()).unwrap(),
            serve(&ep(2), spec2, pp).unwrap(),
        )
    }

    #[test]
    fn endpoint_parsing() {
        assert_eq!("mem:a".parse(), Ok(Endpoint::InProcess("a".into())));
        assert_eq!("127.0.0.1:80".parse(), Ok(Endpoint::Tcp("127.0.0.1:80".into())));
        assert!("mem:".parse::<Endpoint>().is_err());
        assert!("localhost".parse::<Endpoint>().is_err());
        assert!("host:99999".parse::<Endpoint>().is_err());
    }

    #[test]
    fn honest_run_over_both_transports() {
        for tcp in [false, true] {
            let (h1, h2) = pair_of(ServerSpec::honest(), tcp, "t-honest");
            let pp = preset("toy-32").unwrap();
            let mut rng = ChaCha20Rng::seed_from_u64(1);
            let mut servers = RemoteServers::connect(h1.endpoint(), h2.endpoint(), pp.clone()).unwrap();
            for _ in 0..5 {
                let a = pp.curve().random_subgroup_point(&mut rng).unwrap();
                let b = pp.curve().random_subgroup_point(&mut rng).unwrap();
                let got = bpsm_outsource(&a, &b, &pp, &mut servers, &mut rng).unwrap();
                assert_eq!(got, tate_pairing(&a, &b, &pp).unwrap());
            }
            assert!(h1.totals().pairing > 0 && h2.totals().pairing > 0);
            assert!(h1.totals().scalar_mul > 0);
        }
    }

    #[test]
    fn duplicate_and_unknown_in_process_keys() {
        let (h1, _h2) = pair_of(ServerSpec::honest(), false, "t-dup");
        let pp = preset("toy-32").unwrap();
        assert_eq!(
            serve(h1.endpoint(), ServerSpec::honest(), pp).err(),
            Some(TransportError::EndpointInUse("t-dup-1".into()))
        );
        assert!(connect(&Endpoint::InProcess("t-nobody".into())).is_err());
        drop(h1);
        assert!(connect(&Endpoint::InProcess("t-dup-1".into())).is_err());
    }

    #[test]
    fn malformed_input_gets_error_reply_and_connection_survives() {
        for tcp in [false, true] {
            let (h1, _h2) = pair_of(ServerSpec::honest(), tcp, "t-malformed");
            let mut conn = connect(h1.endpoint()).unwrap();
            let mut bad_version = WireMessage::new(Kind::PairQ, 5).encode();
            bad_version[4] = 9;
            let reply = WireMessage::decode(&conn.roundtrip(&bad_version).unwrap()).unwrap();
            assert_eq!(reply.kind, Kind::Error);
            assert_eq!(reply.tag, 5);
            assert_eq!(reply.reader().uint().unwrap(), BigUint::from(ErrorCode::UnsupportedVersion as u8));

            let garbage = WireMessage::new(Kind::PairQ, 6).with_uint(&BigUint::from(7u8)).encode();
            let reply = WireMessage::decode(&conn.roundtrip(&garbage).unwrap()).unwrap();
            assert_eq!((reply.kind, reply.tag), (Kind::Error, 6));
            assert_eq!(reply.reader().uint().unwrap(), BigUint::from(ErrorCode::Malformed as u8));

            let wrong_kind = WireMessage::new(Kind::PairResp, 7).encode();
            let reply = WireMessage::decode(&conn.roundtrip(&wrong_kind).unwrap()).unwrap();
            assert_eq!(reply.reader().uint().unwrap(), BigUint::from(ErrorCode::UnexpectedKind as u8));

            // still usable afterwards
            let pp = preset("toy-32").unwrap();
            let g = pp.generator().clone();
            let ok = WireMessage::new(Kind::PairQ, 8).with_point(&g).with_point(&g).encode();
            let reply = WireMessage::decode(&conn.roundtrip(&ok).unwrap()).unwrap();
            assert_eq!((reply.kind, reply.tag), (Kind::PairResp, 8));
        }
    }

    #[test]
    fn bitflip_pairing_server_is_rejected() {
        let spec = ServerSpec::new(ServerBehavior::BitFlip { policy: crate::harness::server::BitPolicy::Random }, Scope::Pairing);
        let (h1, h2) = pair_of(spec, false, "t-bitflip");
        let pp = preset("toy-32").unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut servers = RemoteServers::connect(h1.endpoint(), h2.endpoint(), pp.clone()).unwrap();
        let g = pp.generator().clone();
        let err = bpsm_outsource(&g, &g, &pp, &mut servers, &mut rng).unwrap_err();
        assert_eq!(err.stage(), Some(crate::bpsm::Stage::Pairing));
    }

    #[test]
    fn dead_endpoint_is_a_transport_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        assert!(matches!(
            connect(&Endpoint::Tcp(addr.to_string())),
            Err(TransportError::Io(_))
        ));
    }

    #[test]
    fn server_closing_mid_run_is_a_transport_error() {
        let (h1, h2) = pair_of(ServerSpec::honest(), true, "t-close");
        let pp = preset("toy-32").unwrap();
        let mut servers = RemoteServers::connect(h1.endpoint(), h2.endpoint(), pp.clone()).unwrap();
        // swap U2's connection for one whose peer hangs up immediately
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let closer = thread::spawn(move || drop(listener.accept()));
        servers.u2 = connect(&Endpoint::Tcp(addr.to_string())).unwrap();
        closer.join().unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let g = pp.generator().clone();
        let err = bpsm_outsource(&g, &g, &pp, &mut servers, &mut rng).unwrap_err();
        assert!(matches!(err, crate::bpsm::BpsmError::Transport(_)), "{err:?}");
    }
}
