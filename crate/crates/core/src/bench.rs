//! Phase timings of delegated pairings against a local pairing, as CSV.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::bpsm::{BpsmClient, BpsmConfig, BpsmError, DirectPairServers, PartyOps};
use crate::counters::{measure, OpCounts};
use crate::pairing::{tate_pairing, PairingError, PairingParams};

pub const PHASES: [&str; 7] = [
    "transform",
    "sm_total",
    "pair_queries",
    "verify",
    "recover",
    "client_total",
    "local_pairing",
];

const OP_NAMES: [&str; 10] = [
    "ring_add",
    "ring_mul",
    "ring_inv",
    "point_add",
    "point_double",
    "scalar_mul",
    "pairing",
    "gt_mul",
    "gt_exp",
    "prime_gen",
];

fn op_values(c: &OpCounts) -> [u64; 10] {
    [
        c.ring_add,
        c.ring_mul,
        c.ring_inv,
        c.point_add,
        c.point_double,
        c.scalar_mul,
        c.pairing,
        c.gt_mul,
        c.gt_exp,
        c.prime_gen,
    ]
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("need at least one trial")]
    NoTrials,
    #[error("delegated run failed: {0}")]
    Run(#[from] BpsmError),
    #[error("local pairing failed: {0}")]
    Pairing(#[from] PairingError),
    #[error("delegated result differs from the local pairing")]
    Mismatch,
}

/// One CSV row. Operation counts are totals over all trials.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub curve: String,
    pub phase: &'static str,
    pub mean_ms: f64,
    pub stddev_ms: f64,
    pub trials: usize,
    pub ops: PartyOps,
}

impl BenchRow {
    fn new(curve: &str, phase: &'static str, samples: &[Duration], ops: PartyOps) -> BenchRow {
        let ms: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        let n = ms.len() as f64;
        let mean = ms.iter().sum::<f64>() / n;
        let var = if ms.len() > 1 {
            ms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        BenchRow {
            curve: curve.to_string(),
            phase,
            mean_ms: mean,
            stddev_ms: var.sqrt(),
            trials: ms.len(),
            ops,
        }
    }

    /// Per-trial mean operation counts.
    pub fn mean_ops(&self) -> ([f64; 10], [f64; 10]) {
        let n = self.trials as f64;
        let avg = |c: &OpCounts| op_values(c).map(|v| v as f64 / n);
        (avg(&self.ops.client), avg(&self.ops.server))
    }
}

/// Times `trials` delegated pairings of random subgroup points on `pp`,
/// followed by the same pairings computed locally.
pub fn bench_curve(
    curve: &str,
    pp: &PairingParams,
    trials: usize,
    seed: u64,
    config: BpsmConfig,
) -> Result<Vec<BenchRow>, BenchError> {
    if trials == 0 {
        return Err(BenchError::NoTrials);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut servers = DirectPairServers { params: pp.clone() };
    let mut samples: [Vec<Duration>; 7] = Default::default();
    let mut ops = [PartyOps::default(); 7];
    for _ in 0..trials {
        let a = pp.curve().random_subgroup_point(&mut rng).map_err(PairingError::from)?;
        let b = pp.curve().random_subgroup_point(&mut rng).map_err(PairingError::from)?;
        let mut client = BpsmClient::new(config);
        let (out, trace) = client.outsource_traced(&a, &b, pp, &mut servers, &mut rng);
        let out = out?;

        let t = trace.timings;
        let o = trace.ops;
        let phases = [
            (t.transform, o.transform),
            (t.sm_total, o.sm_total),
            (t.pair_queries, o.pair_queries),
            (t.verify, o.verify),
            (t.recover, o.recover),
        ];
        let mut client_ops = PartyOps::default();
        for (i, (d, p)) in phases.into_iter().enumerate() {
            samples[i].push(d);
            ops[i] += p;
        }
        for p in [o.transform, o.verify, o.recover] {
            client_ops += p;
        }
        samples[5].push(t.client_total());
        ops[5] += client_ops;

        let started = Instant::now();
        let (local, spent) = measure(|| tate_pairing(&a, &b, pp));
        samples[6].push(started.elapsed());
        ops[6] += PartyOps {
            client: spent,
            server: OpCounts::default(),
        };
        if local? != out {
            return Err(BenchError::Mismatch);
        }
    }
    Ok(PHASES
        .iter()
        .zip(samples.iter().zip(ops))
        .map(|(phase, (s, o))| BenchRow::new(curve, phase, s, o))
        .collect())
}

pub fn csv_header() -> Vec<String> {
    let mut h: Vec<String> = ["curve", "phase", "mean_ms", "stddev_ms", "trials"].map(String::from).into();
    for party in ["client", "server"] {
        h.extend(OP_NAMES.iter().map(|op| format!("{party}_{op}")));
    }
    h
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(csv_header()).expect("in-memory write");
    for r in rows {
        let (client, server) = r.mean_ops();
        let mut rec = vec![
            r.curve.clone(),
            r.phase.to_string(),
            format!("{:.6}", r.mean_ms),
            format!("{:.6}", r.stddev_ms),
            r.trials.to_string(),
        ];
        rec.extend(client.iter().chain(server.iter()).map(|v| format!("{v:.2}")));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Mean milliseconds of `phase` for `curve`.
pub fn mean_of(rows: &[BenchRow], curve: &str, phase: &str) -> Option<f64> {
    rows.iter()
        .find(|r| r.curve == curve && r.phase == phase)
        .map(|r| r.mean_ms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::preset;

    #[test]
    fn rows_cover_phases() {
        let pp = preset("toy-32").unwrap();
        let rows = bench_curve("toy-32", &pp, 3, 1, BpsmConfig::default()).unwrap();
        assert_eq!(rows.len(), PHASES.len());
        for (row, phase) in rows.iter().zip(PHASES) {
            assert_eq!(row.phase, phase);
            assert_eq!(row.trials, 3);
            assert!(row.mean_ms >= 0.0 && row.stddev_ms >= 0.0);
        }
        let verify = &rows[3].ops.client;
        assert_eq!((verify.gt_exp, verify.gt_mul), (3, 6));
        assert_eq!(rows[6].ops.client.pairing, 3);
        assert_eq!(rows[2].ops.server.pairing, 12);
        assert_eq!(rows[5].ops.client.pairing, 0);
        assert_eq!(rows[5].ops.client.scalar_mul, 0);
    }

    #[test]
    fn csv_shape() {
        let pp = preset("toy-32").unwrap();
        let rows = bench_curve("toy-32", &pp, 2, 1, BpsmConfig::default()).unwrap();
        let text = to_csv(&rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + PHASES.len());
        let width = lines[0].split(',').count();
        assert_eq!(width, 5 + 20);
        assert!(lines.iter().all(|l| l.split(',').count() == width));
        assert!(lines[1].starts_with("toy-32,transform,"));
    }

    #[test]
    fn zero_trials_refused() {
        let pp = preset("toy-32").unwrap();
        assert!(matches!(
            bench_curve("toy-32", &pp, 0, 1, BpsmConfig::default()),
            Err(BenchError::NoTrials)
        ));
    }
}
