//! Reproducible scenario runs: fixed server behaviors, seeded inputs,
//! per-trial outcomes checked against local oracles.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use num_bigint::{BigUint, RandBigInt};
use num_traits::One;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::server::{Scope, ServerBehavior, ServerSpec};
use super::transport::{serve, Endpoint, RemoteServers, ServerHandle, TransportError};
use crate::bpsm::{BpsmClient, BpsmConfig, BpsmError, Stage, DEFAULT_CHECK_BITS};
use crate::counters::{self, OpCounts};
use crate::curve::scalar_mul;
use crate::pairing::{tate_pairing, PairingParams};
use crate::params::{preset, ParamsError};
use crate::sm::{sm_outsource, SmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// One scalar multiplication.
    Sm,
    /// One pairing, including its six SM sub-sessions.
    Bpsm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportKind {
    InProcess,
    Tcp,
}

/// How trials are scheduled. `Parallel` needs the `parallel` feature and
/// silently runs sequentially without it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub protocol: Protocol,
    pub preset: String,
    pub u1: ServerSpec,
    pub u2: ServerSpec,
    pub trials: usize,
    pub seed: u64,
    /// Bit size of the BPSM check exponent.
    pub check_bits: u32,
}

impl ScenarioConfig {
    pub fn new(name: &str, protocol: Protocol, preset: &str, u1: ServerSpec, u2: ServerSpec) -> ScenarioConfig {
        ScenarioConfig {
            name: name.to_string(),
            protocol,
            preset: preset.to_string(),
            u1,
            u2,
            trials: 100,
            seed: 0,
            check_bits: DEFAULT_CHECK_BITS,
        }
    }

    pub fn trials(mut self, n: usize) -> ScenarioConfig {
        self.trials = n;
        self
    }

    pub fn seed(mut self, seed: u64) -> ScenarioConfig {
        self.seed = seed;
        self
    }

    pub fn check_bits(mut self, m: u32) -> ScenarioConfig {
        self.check_bits = m;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    AcceptedCorrect,
    Rejected,
    AcceptedWrong,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    VerificationSm,
    VerificationPairing,
    ComputationSm,
    ComputationPairing,
    Aborted,
    Transport,
    InvalidInput,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub outcome: Outcome,
    pub reason: Option<RejectReason>,
    pub client_ops: OpCounts,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub accepted_correct: usize,
    pub rejected: usize,
    pub accepted_wrong: usize,
}

/// Everything a run produces except timing. Two runs with the same config
/// have equal bodies whatever the transport or scheduling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportBody {
    pub config: ScenarioConfig,
    pub tally: Tally,
    pub client_ops: OpCounts,
    pub server_ops: [OpCounts; 2],
    pub trials: Vec<TrialRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub body: ReportBody,
    pub transport: TransportKind,
    pub wall_ms: f64,
    pub trial_micros: Vec<u64>,
}

impl ScenarioReport {
    pub fn tally(&self) -> Tally {
        self.body.tally
    }

    /// No wrong value was ever accepted.
    pub fn passed(&self) -> bool {
        self.body.tally.accepted_wrong == 0
    }

    /// Equal up to timing and transport.
    pub fn same_as(&self, other: &ScenarioReport) -> bool {
        self.body == other.body
    }

    pub fn summary_line(&self) -> String {
        let c = &self.body.config;
        let t = self.body.tally;
        format!(
            "{:<40} u1={:<24} u2={:<24} trials={:<6} correct={:<6} rejected={:<6} wrong={:<3} {}",
            c.name,
            c.u1.to_string(),
            c.u2.to_string(),
            c.trials,
            t.accepted_correct,
            t.rejected,
            t.accepted_wrong,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

pub fn run_scenario(config: &ScenarioConfig, transport: TransportKind) -> Result<ScenarioReport, ScenarioError> {
    run_scenario_with(config, transport, Execution::default())
}

pub fn run_scenario_with(
    config: &ScenarioConfig,
    transport: TransportKind,
    execution: Execution,
) -> Result<ScenarioReport, ScenarioError> {
    if !config.u1.behavior.is_honest() && !config.u2.behavior.is_honest() {
        return Err(ScenarioError::InvalidConfig("at most one server may misbehave".into()));
    }
    if config.check_bits < 2 {
        return Err(ScenarioError::InvalidConfig("check exponent needs at least 2 bits".into()));
    }
    let pp = preset(&config.preset)?;
    let (h1, h2) = start_servers(config, transport, &pp)?;
    let started = Instant::now();
    let run = |i: usize| run_trial(config, &pp, h1.endpoint(), h2.endpoint(), i);
    let results: Vec<(TrialRecord, u64)> = match execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..config.trials).into_par_iter().map(run).collect()
        }
        _ => (0..config.trials).map(run).collect(),
    };
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;
    let mut tally = Tally::default();
    let mut client_ops = OpCounts::default();
    let mut trials = Vec::with_capacity(results.len());
    let mut trial_micros = Vec::with_capacity(results.len());
    for (rec, micros) in results {
        match rec.outcome {
            Outcome::AcceptedCorrect => tally.accepted_correct += 1,
            Outcome::Rejected => tally.rejected += 1,
            Outcome::AcceptedWrong => tally.accepted_wrong += 1,
        }
        client_ops += rec.client_ops;
        trials.push(rec);
        trial_micros.push(micros);
    }
    Ok(ScenarioReport {
        body: ReportBody {
            config: config.clone(),
            tally,
            client_ops,
            server_ops: [h1.totals(), h2.totals()],
            trials,
        },
        transport,
        wall_ms,
        trial_micros,
    })
}

fn start_servers(
    config: &ScenarioConfig,
    transport: TransportKind,
    pp: &PairingParams,
) -> Result<(ServerHandle, ServerHandle), ScenarioError> {
    static NEXT: AtomicU64 = AtomicU64::new(0);
    let id = NEXT.fetch_add(1, Ordering::Relaxed);
    let endpoint = |which: u8| match transport {
        TransportKind::InProcess => Endpoint::InProcess(format!("scenario-{id}-u{which}")),
        TransportKind::Tcp => Endpoint::Tcp("127.0.0.1:0".into()),
    };
    let seeded = |spec: ServerSpec, which: u8| spec.with_seed(derive_seed(config.seed, b"server", which as u64));
    let h1 = serve(&endpoint(1), seeded(config.u1, 1), pp.clone())?;
    let h2 = serve(&endpoint(2), seeded(config.u2, 2), pp.clone())?;
    Ok((h1, h2))
}

fn derive_seed(seed: u64, label: &[u8], index: u64) -> u64 {
    let d = derive(seed, label, index);
    u64::from_be_bytes(d[..8].try_into().unwrap())
}

fn derive(seed: u64, label: &[u8], index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_be_bytes());
    h.update(label);
    h.update(index.to_be_bytes());
    h.finalize().into()
}

/// The generator driving trial `index`: inputs and client randomness.
pub fn trial_rng(seed: u64, index: usize) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(derive(seed, b"trial", index as u64))
}

fn run_trial(cfg: &ScenarioConfig, pp: &PairingParams, ep1: &Endpoint, ep2: &Endpoint, index: usize) -> (TrialRecord, u64) {
    let started = Instant::now();
    let mut rng = trial_rng(cfg.seed, index);
    let record = |outcome, reason, client_ops| TrialRecord {
        index,
        outcome,
        reason,
        client_ops,
    };
    let mut servers = match RemoteServers::connect(ep1, ep2, pp.clone()) {
        Ok(s) => s,
        Err(_) => {
            let rec = record(Outcome::Rejected, Some(RejectReason::Transport), OpCounts::default());
            return (rec, started.elapsed().as_micros() as u64);
        }
    };
    let curve = pp.curve();
    let rec = match cfg.protocol {
        Protocol::Bpsm => {
            let a = curve.random_subgroup_point(&mut rng).expect("subgroup present");
            let b = curve.random_subgroup_point(&mut rng).expect("subgroup present");
            let expected = tate_pairing(&a, &b, pp).expect("valid inputs");
            let mut client = BpsmClient::new(BpsmConfig {
                check_bits: cfg.check_bits,
            });
            let (out, ops) = counters::measure(|| client.outsource(&a, &b, pp, &mut servers, &mut rng));
            match out {
                Ok(v) if v == expected => record(Outcome::AcceptedCorrect, None, ops),
                Ok(_) => record(Outcome::AcceptedWrong, None, ops),
                Err(e) => record(Outcome::Rejected, Some(bpsm_reason(&e)), ops),
            }
        }
        Protocol::Sm => {
            let p = curve.random_subgroup_point(&mut rng).expect("subgroup present");
            let c = rng.gen_biguint_range(&BigUint::one(), pp.r());
            let expected = scalar_mul(&p, &c, curve).expect("prime field");
            let (out, ops) = counters::measure(|| sm_outsource(&p, &c, curve, &mut servers, &mut rng));
            match out {
                Ok(v) if v == expected => record(Outcome::AcceptedCorrect, None, ops),
                Ok(_) => record(Outcome::AcceptedWrong, None, ops),
                Err(e) => record(Outcome::Rejected, Some(sm_reason(&e)), ops),
            }
        }
    };
    (rec, started.elapsed().as_micros() as u64)
}

fn sm_reason(e: &SmError) -> RejectReason {
    match e {
        SmError::VerificationFailed => RejectReason::VerificationSm,
        SmError::Aborted(_) => RejectReason::Aborted,
        SmError::Transport(_) => RejectReason::Transport,
        SmError::InvalidInput(_) => RejectReason::InvalidInput,
        _ => RejectReason::ComputationSm,
    }
}

fn bpsm_reason(e: &BpsmError) -> RejectReason {
    match e {
        BpsmError::VerificationFailed { stage: Stage::Sm } => RejectReason::VerificationSm,
        BpsmError::VerificationFailed { stage: Stage::Pairing } | BpsmError::NotVerified => {
            RejectReason::VerificationPairing
        }
        BpsmError::ComputationFailed { stage: Stage::Sm } => RejectReason::ComputationSm,
        BpsmError::ComputationFailed { stage: Stage::Pairing } => RejectReason::ComputationPairing,
        BpsmError::Aborted => RejectReason::Aborted,
        BpsmError::Transport(_) => RejectReason::Transport,
        BpsmError::InvalidInput(_) => RejectReason::InvalidInput,
    }
}

pub const SUITES: [&str; 3] = ["honest", "one-malicious", "weak-check"];

/// Named scenario collections.
///
/// * `honest`: both servers honest, SM and BPSM.
/// * `one-malicious`: every adversary on each server in turn. SM runs attack
///   the SM queries; BPSM runs attack the pairing stage and, separately,
///   every stage.
/// * `weak-check`: the scale-consistent adversary against a 16-bit check
///   exponent.
pub fn suite(name: &str, preset: &str, trials: usize, seed: u64) -> Option<Vec<ScenarioConfig>> {
    let honest = ServerSpec::honest();
    let mut out = Vec::new();
    match name {
        "honest" => {
            for protocol in [Protocol::Sm, Protocol::Bpsm] {
                let label = format!("honest/{protocol:?}").to_lowercase();
                out.push(ScenarioConfig::new(&label, protocol, preset, honest, honest));
            }
        }
        "one-malicious" => {
            let runs = [(Protocol::Sm, Scope::Sm), (Protocol::Bpsm, Scope::Pairing), (Protocol::Bpsm, Scope::All)];
            for (protocol, scope) in runs {
                for behavior in ServerBehavior::adversaries() {
                    // the scale-consistent server only deviates on pairings
                    if matches!(behavior, ServerBehavior::ScaleConsistent { .. }) && scope == Scope::All {
                        continue;
                    }
                    let bad = ServerSpec::new(behavior, scope);
                    for (which, u1, u2) in [("u1", bad, honest), ("u2", honest, bad)] {
                        let label = format!("{protocol:?}/{which}/{bad}").to_lowercase();
                        out.push(ScenarioConfig::new(&label, protocol, preset, u1, u2));
                    }
                }
            }
        }
        "weak-check" => {
            let bad = ServerSpec::new(ServerBehavior::ScaleConsistent { m: 16 }, Scope::Pairing);
            for (which, u1, u2) in [("u1", bad, honest), ("u2", honest, bad)] {
                let label = format!("weak-check/{which}");
                out.push(ScenarioConfig::new(&label, Protocol::Bpsm, preset, u1, u2).check_bits(16));
            }
        }
        _ => return None,
    }
    for (i, c) in out.iter_mut().enumerate() {
        c.trials = trials;
        c.seed = derive_seed(seed, name.as_bytes(), i as u64);
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(u1: ServerSpec, u2: ServerSpec, protocol: Protocol, trials: usize) -> ScenarioConfig {
        ScenarioConfig::new("t", protocol, "toy-32", u1, u2).trials(trials).seed(42)
    }

    #[test]
    fn honest_servers_always_accepted_correct() {
        for protocol in [Protocol::Sm, Protocol::Bpsm] {
            let r = run_scenario(&cfg(ServerSpec::honest(), ServerSpec::honest(), protocol, 100), TransportKind::InProcess)
                .unwrap();
            assert_eq!(r.tally().accepted_correct, 100, "{protocol:?}");
            assert!(r.body.server_ops[0].scalar_mul > 0);
            assert_eq!(r.body.client_ops.pairing, 0);
            assert_eq!(r.body.client_ops.scalar_mul, 0);
        }
    }

    #[test]
    fn rerun_is_identical() {
        let bad = ServerSpec::new(ServerBehavior::RandomOutput, Scope::All);
        let c = cfg(ServerSpec::honest(), bad, Protocol::Bpsm, 30);
        let a = run_scenario(&c, TransportKind::InProcess).unwrap();
        let b = run_scenario_with(&c, TransportKind::InProcess, Execution::Sequential).unwrap();
        assert!(a.same_as(&b));
        assert_eq!(a.tally().accepted_wrong, 0);
        assert_eq!(a.tally().rejected, 30);
    }

    #[test]
    fn different_seeds_differ() {
        let c = cfg(ServerSpec::honest(), ServerSpec::honest(), Protocol::Sm, 5);
        let a = run_scenario(&c, TransportKind::InProcess).unwrap();
        let b = run_scenario(&c.clone().seed(43), TransportKind::InProcess).unwrap();
        assert!(!a.same_as(&b));
    }

    #[test]
    fn two_bad_servers_refused() {
        let bad = ServerSpec::new(ServerBehavior::Lazy, Scope::All);
        let err = run_scenario(&cfg(bad, bad, Protocol::Sm, 1), TransportKind::InProcess).unwrap_err();
        assert!(matches!(err, ScenarioError::InvalidConfig(_)));
    }

    #[test]
    fn stages_are_attributed() {
        let sm_bad = ServerSpec::new(ServerBehavior::IdentityOutput, Scope::Sm);
        let r = run_scenario(&cfg(sm_bad, ServerSpec::honest(), Protocol::Bpsm, 10), TransportKind::InProcess).unwrap();
        assert!(r.body.trials.iter().all(|t| t.reason == Some(RejectReason::VerificationSm)));
        let pair_bad = ServerSpec::new(ServerBehavior::IdentityOutput, Scope::Pairing);
        let r = run_scenario(&cfg(ServerSpec::honest(), pair_bad, Protocol::Bpsm, 10), TransportKind::InProcess).unwrap();
        assert!(r.body.trials.iter().all(|t| t.reason == Some(RejectReason::VerificationPairing)));
        // a pairing-scoped adversary leaves SM runs alone
        let r = run_scenario(&cfg(ServerSpec::honest(), pair_bad, Protocol::Sm, 10), TransportKind::InProcess).unwrap();
        assert_eq!(r.tally().accepted_correct, 10);
    }

    #[test]
    fn suites_are_well_formed() {
        for name in SUITES {
            let s = suite(name, "toy-32", 3, 1).unwrap();
            assert!(!s.is_empty());
            for c in &s {
                assert!(c.u1.behavior.is_honest() || c.u2.behavior.is_honest());
                assert_eq!(c.trials, 3);
            }
        }
        assert_eq!(suite("one-malicious", "toy-32", 1, 0).unwrap().len(), 2 * (6 + 6 + 5));
        assert!(suite("nope", "toy-32", 1, 0).is_none());
    }
}
