use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use pairsource::bench::{bench_curve, to_csv};
use pairsource::bpsm::{BpsmClient, BpsmConfig, BpsmError, DEFAULT_CHECK_BITS};
use pairsource::curve::Point;
use pairsource::harness::scenario::{suite, SUITES};
use pairsource::harness::{run_scenario, serve, Endpoint, RemoteServers, ServerHandle, ServerSpec, TransportKind};
use pairsource::pairing::{tate_pairing, GtElement, PairingParams};
use pairsource::params::{default_r_bits, generate, preset, ParamsFile, PRESETS};

const EXIT_VERIFICATION: u8 = 2;
const EXIT_TRANSPORT: u8 = 3;
const EXIT_USAGE: u8 = 4;

#[derive(Parser)]
#[command(name = "pairsource", version, about = "Verifiable two-server pairing delegation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a pairing parameter file.
    Gen(GenArgs),
    /// Delegate one pairing and compare it with a local computation.
    Demo(DemoArgs),
    /// Host one server until interrupted.
    Serve(ServeArgs),
    /// Time each protocol phase against a local pairing and write CSV.
    Bench(BenchArgs),
    /// Run a scenario suite and report accepted-wrong outcomes.
    Scenarios(ScenarioArgs),
}

#[derive(Args)]
struct SeedArg {
    #[arg(long, env = "PAIRSOURCE_SEED", default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct ParamsArg {
    /// Parameter file written by `gen`.
    #[arg(long, conflicts_with = "preset")]
    params: Option<PathBuf>,
    /// Named parameter set.
    #[arg(long, default_value = "toy-32")]
    preset: String,
}

impl ParamsArg {
    fn load(&self) -> Result<(String, PairingParams), Failure> {
        load_params(self.params.as_ref(), &self.preset)
    }
}

fn load_params(file: Option<&PathBuf>, name: &str) -> Result<(String, PairingParams), Failure> {
    match file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            let pf = ParamsFile::from_json(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            let pp = pf.to_params().map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            Ok((pf.name, pp))
        }
        None => {
            let pp = preset(name).map_err(|e| Failure::usage(e.to_string()))?;
            Ok((name.to_string(), pp))
        }
    }
}

#[derive(Args)]
struct GenArgs {
    /// Size of p: 32 to 64 for toy curves, or 160, 256, 512.
    #[arg(long)]
    bits: u64,
    /// Size of r; defaults to a size matched to `bits`.
    #[arg(long)]
    r_bits: Option<u64>,
    #[command(flatten)]
    seed: SeedArg,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Mem,
    Tcp,
}

#[derive(Args)]
struct DemoArgs {
    #[command(flatten)]
    params: ParamsArg,
    #[arg(long, value_enum, default_value = "mem")]
    transport: TransportArg,
    /// Behavior of the first server, e.g. `honest`, `bitflip`, `scale:3@sm`.
    #[arg(long, default_value = "honest")]
    u1: ServerSpec,
    #[arg(long, default_value = "honest")]
    u2: ServerSpec,
    /// Use an already running first server instead of starting one.
    #[arg(long)]
    u1_endpoint: Option<Endpoint>,
    #[arg(long)]
    u2_endpoint: Option<Endpoint>,
    #[arg(long, default_value_t = DEFAULT_CHECK_BITS)]
    check_bits: u32,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct ServeArgs {
    /// `host:port` to listen on.
    #[arg(long)]
    endpoint: Endpoint,
    #[arg(long, default_value = "honest")]
    behavior: ServerSpec,
    #[command(flatten)]
    params: ParamsArg,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct BenchArgs {
    /// Parameter files, one CSV block each.
    #[arg(long, num_args = 1..)]
    params: Vec<PathBuf>,
    /// Named parameter sets, used when no files are given.
    #[arg(long, num_args = 1.., default_values_t = ["toy-64".to_string(), "p160".to_string()])]
    preset: Vec<String>,
    #[arg(long, default_value_t = 500)]
    trials: usize,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Suite name, or `all`.
    #[arg(long)]
    suite: String,
    #[arg(long, default_value = "toy-32")]
    preset: String,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, value_enum, default_value = "mem")]
    transport: TransportArg,
    #[command(flatten)]
    seed: SeedArg,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Failure {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn transport(message: impl Into<String>) -> Failure {
        Failure {
            code: EXIT_TRANSPORT,
            message: format!("transport error: {}", message.into()),
        }
    }

    fn other(message: impl Into<String>) -> Failure {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Demo(a) => cmd_demo(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Scenarios(a) => cmd_scenarios(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn write_output(out: Option<&PathBuf>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::other(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_gen(a: GenArgs) -> Result<(), Failure> {
    if !((32..=64).contains(&a.bits) || [160, 256, 512].contains(&a.bits)) {
        return Err(Failure::usage(format!("--bits {} not supported: use 32-64, 160, 256 or 512", a.bits)));
    }
    let r_bits = a.r_bits.unwrap_or_else(|| default_r_bits(a.bits));
    let mut rng = ChaCha20Rng::seed_from_u64(a.seed.seed);
    let pp = generate(a.bits, r_bits, &mut rng).map_err(|e| match e {
        pairsource::params::ParamsError::BadSizes { .. } => Failure::usage(e.to_string()),
        other => Failure::other(other.to_string()),
    })?;
    let name = PRESETS
        .iter()
        .find(|p| p.p_bits == a.bits && p.r_bits == r_bits && p.seed == a.seed.seed)
        .map(|p| p.name.to_string())
        .unwrap_or_else(|| format!("p{}-r{}-s{}", a.bits, r_bits, a.seed.seed));
    let mut json = ParamsFile::from_params(&name, &pp).to_json();
    json.push('\n');
    write_output(a.out.as_ref(), &json)
}

fn fmt_point(p: &Point) -> String {
    match (p.x(), p.y()) {
        (Some(x), Some(y)) => format!("({}, {})", x.residue(), y.residue()),
        _ => "O".into(),
    }
}

fn fmt_gt(v: &GtElement) -> String {
    format!("{} + {}*i", v.value().c0_uint(), v.value().c1_uint())
}

fn start_server(kind: TransportArg, key: &str, spec: ServerSpec, pp: &PairingParams) -> Result<ServerHandle, Failure> {
    let endpoint = match kind {
        TransportArg::Mem => Endpoint::InProcess(format!("demo-{key}")),
        TransportArg::Tcp => Endpoint::Tcp("127.0.0.1:0".into()),
    };
    serve(&endpoint, spec, pp.clone()).map_err(|e| Failure::transport(e.to_string()))
}

fn cmd_demo(a: DemoArgs) -> Result<(), Failure> {
    if a.check_bits < 2 {
        return Err(Failure::usage("--check-bits must be at least 2"));
    }
    if !a.u1.behavior.is_honest() && !a.u2.behavior.is_honest() {
        return Err(Failure::usage("at most one server may misbehave"));
    }
    let (name, pp) = a.params.load()?;
    println!("params    {name}: p {} bits, r {} bits", pp.p().bits(), pp.r().bits());
    let mut handles = Vec::new();
    let mut endpoint = |given: Option<Endpoint>, key: &str, spec: ServerSpec| -> Result<Endpoint, Failure> {
        if let Some(ep) = given {
            println!("server    {key} at {ep}");
            return Ok(ep);
        }
        let h = start_server(a.transport, key, spec.with_seed(a.seed.seed), &pp)?;
        let ep = h.endpoint().clone();
        println!("server    {key} at {ep} behaving {spec}");
        handles.push(h);
        Ok(ep)
    };
    let ep1 = endpoint(a.u1_endpoint.clone(), "u1", a.u1)?;
    let ep2 = endpoint(a.u2_endpoint.clone(), "u2", a.u2)?;
    let mut servers = RemoteServers::connect(&ep1, &ep2, pp.clone()).map_err(|e| Failure::transport(e.to_string()))?;

    let mut rng = ChaCha20Rng::seed_from_u64(a.seed.seed);
    let pa = pp.curve().random_subgroup_point(&mut rng).map_err(|e| Failure::other(e.to_string()))?;
    let pb = pp.curve().random_subgroup_point(&mut rng).map_err(|e| Failure::other(e.to_string()))?;
    println!("input     A = {}", fmt_point(&pa));
    println!("input     B = {}", fmt_point(&pb));

    let mut client = BpsmClient::new(BpsmConfig { check_bits: a.check_bits });
    let (out, trace) = client.outsource_traced(&pa, &pb, &pp, &mut servers, &mut rng);
    let t = trace.timings;
    let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
    println!("phase     transform     {:>10.3} ms", ms(t.transform));
    println!("phase     sm sessions   {:>10.3} ms", ms(t.sm_total));
    let value = match out {
        Ok(v) => v,
        Err(e) => {
            println!("verdict   {e}");
            return Err(match e {
                BpsmError::Transport(m) => Failure::transport(m),
                BpsmError::InvalidInput(m) => Failure::other(m),
                other => Failure {
                    code: EXIT_VERIFICATION,
                    message: other.to_string(),
                },
            });
        }
    };
    println!("phase     pair queries  {:>10.3} ms", ms(t.pair_queries));
    println!("phase     verify        {:>10.3} ms", ms(t.verify));
    println!("phase     recover       {:>10.3} ms", ms(t.recover));
    println!("verdict   SM stage verified, pairing check passed");
    println!("output    e(A, B) = {}", fmt_gt(&value));
    let started = Instant::now();
    let local = tate_pairing(&pa, &pb, &pp).map_err(|e| Failure::other(e.to_string()))?;
    println!("local     e(A, B) = {} ({:.3} ms)", fmt_gt(&local), ms(started.elapsed()));
    if local != value {
        println!("MISMATCH");
        return Err(Failure {
            code: EXIT_VERIFICATION,
            message: "delegated value differs from the local pairing".into(),
        });
    }
    println!("MATCH");
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<(), Failure> {
    if matches!(a.endpoint, Endpoint::InProcess(_)) {
        return Err(Failure::usage("serve needs a host:port endpoint"));
    }
    let (name, pp) = a.params.load()?;
    let handle = serve(&a.endpoint, a.behavior.with_seed(a.seed.seed), pp).map_err(|e| Failure::transport(e.to_string()))?;
    println!("listening on {} ({name}, {})", handle.endpoint(), a.behavior);
    handle.wait();
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<(), Failure> {
    if a.trials == 0 {
        return Err(Failure::usage("--trials must be positive"));
    }
    let curves: Vec<(String, PairingParams)> = if a.params.is_empty() {
        a.preset.iter().map(|n| load_params(None, n)).collect::<Result<_, _>>()?
    } else {
        a.params.iter().map(|f| load_params(Some(f), "")).collect::<Result<_, _>>()?
    };
    let mut rows = Vec::new();
    for (name, pp) in &curves {
        eprintln!("bench     {name}: {} trials", a.trials);
        let r = bench_curve(name, pp, a.trials, a.seed.seed, BpsmConfig::default())
            .map_err(|e| Failure::other(format!("{name}: {e}")))?;
        rows.extend(r);
    }
    write_output(a.out.as_ref(), &to_csv(&rows))
}

fn cmd_scenarios(a: ScenarioArgs) -> Result<(), Failure> {
    let names: Vec<&str> = if a.suite == "all" {
        SUITES.to_vec()
    } else if SUITES.contains(&a.suite.as_str()) {
        vec![a.suite.as_str()]
    } else {
        return Err(Failure::usage(format!("unknown suite `{}`; choose from {} or all", a.suite, SUITES.join(", "))));
    };
    preset(&a.preset).map_err(|e| Failure::usage(e.to_string()))?;
    let transport = match a.transport {
        TransportArg::Mem => TransportKind::InProcess,
        TransportArg::Tcp => TransportKind::Tcp,
    };
    let mut wrong = 0;
    let mut count = 0;
    for name in names {
        for cfg in suite(name, &a.preset, a.trials, a.seed.seed).expect("listed suite") {
            let report = run_scenario(&cfg, transport).map_err(|e| match e {
                pairsource::harness::scenario::ScenarioError::Transport(t) => Failure::transport(t.to_string()),
                other => Failure::other(other.to_string()),
            })?;
            println!("{}", report.summary_line());
            wrong += report.tally().accepted_wrong;
            count += 1;
        }
    }
    println!("{count} scenarios, {wrong} accepted-wrong outcomes");
    if wrong > 0 {
        return Err(Failure {
            code: EXIT_VERIFICATION,
            message: format!("{wrong} wrong results were accepted"),
        });
    }
    Ok(())
}
