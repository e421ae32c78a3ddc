use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::process::{Child, Command, Output, Stdio};

use pairsource::params::ParamsFile;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pairsource"));
    cmd.env_remove("PAIRSOURCE_SEED");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pairsource-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn gen_is_deterministic_and_valid() {
    let a = scratch("a.json");
    let b = scratch("b.json");
    for out in [&a, &b] {
        let o = run(&["gen", "--bits", "64", "--seed", "7", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let pf = ParamsFile::from_json(&text).unwrap();
    pf.to_params().unwrap();
    let p: u128 = pf.p.parse().unwrap();
    let r: u128 = pf.r.parse().unwrap();
    assert_eq!((p + 1) % r, 0);
    assert_eq!(p % 4, 3);
}

#[test]
fn seed_falls_back_to_environment() {
    let flag = run(&["gen", "--bits", "40", "--seed", "9"]);
    let env = bin().args(["gen", "--bits", "40"]).env("PAIRSOURCE_SEED", "9").output().unwrap();
    let other = run(&["gen", "--bits", "40", "--seed", "10"]);
    assert!(flag.status.success() && env.status.success());
    assert_eq!(stdout(&flag), stdout(&env));
    assert_ne!(stdout(&flag), stdout(&other));
}

#[test]
fn gen_rejects_unsupported_sizes() {
    let o = run(&["gen", "--bits", "100"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn demo_honest_matches() {
    for transport in ["mem", "tcp"] {
        let o = run(&["demo", "--transport", transport]);
        assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
        let out = stdout(&o);
        assert!(out.lines().any(|l| l == "MATCH"), "{out}");
        for phase in ["transform", "sm sessions", "pair queries", "verify", "recover"] {
            assert!(out.contains(phase), "{phase} missing from {out}");
        }
    }
}

#[test]
fn demo_from_params_file() {
    let file = scratch("demo.json");
    let o = run(&["gen", "--bits", "48", "--seed", "3", "--out", file.to_str().unwrap()]);
    assert!(o.status.success());
    let o = run(&["demo", "--params", file.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("MATCH"));
}

#[test]
fn demo_bitflip_rejected_at_pairing_stage() {
    let o = run(&["demo", "--u2", "bitflip"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("REJECTED at pairing stage"), "{}", stdout(&o));
    assert!(!stdout(&o).contains("MATCH"));

    let o = run(&["demo", "--u1", "random@sm"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("REJECTED at SM stage"), "{}", stdout(&o));
}

#[test]
fn demo_refuses_two_bad_servers() {
    let o = run(&["demo", "--u1", "bitflip", "--u2", "random"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn demo_bad_endpoint_is_transport_failure() {
    let o = run(&["demo", "--u1-endpoint", "127.0.0.1:1", "--u2-endpoint", "127.0.0.1:1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("transport error"), "{}", stderr(&o));
}

struct Server(Child, String);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start_server(behavior: &str) -> Server {
    let mut child = bin()
        .args(["serve", "--endpoint", "127.0.0.1:0", "--behavior", behavior])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line
        .strip_prefix("listening on ")
        .and_then(|rest| rest.split_whitespace().next())
        .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
        .to_string();
    Server(child, addr)
}

#[test]
fn demo_against_served_processes() {
    let u1 = start_server("honest");
    let u2 = start_server("honest");
    let o = run(&["demo", "--u1-endpoint", &u1.1, "--u2-endpoint", &u2.1]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("MATCH"));

    let bad = start_server("identity");
    let o = run(&["demo", "--u1-endpoint", &u1.1, "--u2-endpoint", &bad.1]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("REJECTED at pairing stage"));
}

#[test]
fn serve_needs_a_socket_address() {
    let o = run(&["serve", "--endpoint", "mem:x"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn bench_writes_one_row_per_curve_and_phase() {
    let out = scratch("bench.csv");
    let o = run(&["bench", "--preset", "toy-32", "toy-64", "--trials", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 2 * 7);
    assert!(lines[0].starts_with("curve,phase,mean_ms,stddev_ms,trials,client_ring_add"));
    let phases: Vec<&str> = lines[1..8].iter().map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(
        phases,
        ["transform", "sm_total", "pair_queries", "verify", "recover", "client_total", "local_pairing"]
    );
    assert!(lines[8].starts_with("toy-64,transform,"));
}

#[test]
fn bench_from_params_file() {
    let file = scratch("bench.json");
    assert!(run(&["gen", "--bits", "32", "--seed", "5", "--out", file.to_str().unwrap()]).status.success());
    let o = run(&["bench", "--params", file.to_str().unwrap(), "--trials", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 8);
}

#[test]
fn scenarios_suites() {
    let o = run(&["scenarios", "--suite", "honest", "--trials", "10"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("0 accepted-wrong"));

    let o = run(&["scenarios", "--suite", "one-malicious", "--trials", "5", "--transport", "tcp"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.ends_with("PASS")).count(), 34);

    let o = run(&["scenarios", "--suite", "nope"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn usage_errors_exit_4() {
    assert_eq!(run(&[]).status.code(), Some(4));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(4));
    assert_eq!(run(&["demo", "--u1", "nonsense"]).status.code(), Some(4));
    assert_eq!(run(&["demo", "--preset", "p9000"]).status.code(), Some(4));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}
