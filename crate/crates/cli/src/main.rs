//! qflow: scenario runner and key ceremony tool.
//!
//! Exit codes are stable across subcommands: 0 = pass, 1 = invariant
//! violation, 2 = usage or validation error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{RngCore, SeedableRng};

use qflow_core::ceremony::{ceremony, CeremonyError};
use qflow_core::group::Profile;
use qflow_core::invariant::{check_trace, InvariantReport};
use qflow_core::scenario::{run as run_scenario, validate, BuiltScenario, ScenarioDoc};
use qflow_core::sharing::SharingPolicy;
use qflow_core::trace;

#[derive(Parser)]
#[command(name = "qflow", version, about = "decentralized workflow protocol simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Deal key material: per-participant share files plus the public
    /// verification document. Dealer secrets are never written.
    Ceremony(CeremonyArgs),
    /// Execute a scenario and check its invariants.
    Run(RunArgs),
    /// Re-check the invariants of an existing trace file.
    VerifyTrace(VerifyArgs),
}

#[derive(Args)]
struct CeremonyArgs {
    /// number of participants (ignored when --weights is given)
    #[arg(long)]
    parties: Option<u32>,
    /// reconstruction threshold k
    #[arg(long)]
    threshold: u32,
    /// comma-separated share multiplicities, e.g. 3,2,2,1,1,1
    #[arg(long)]
    weights: Option<String>,
    #[arg(long, default_value = "toy")]
    profile: String,
    /// output directory for the documents
    #[arg(long, default_value = "ceremony-out", env = "QFLOW_OUT_DIR")]
    out: PathBuf,
    /// dealer randomness seed; omitted = fresh entropy
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "dealing-1")]
    dealing_id: String,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// single seed to run
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// inclusive seed range a..b, overrides --seed
    #[arg(long)]
    seeds: Option<String>,
    /// trace output file (single seed) or directory (seed range)
    #[arg(long)]
    trace: Option<PathBuf>,
    /// worker threads for seed ranges
    #[arg(long, default_value_t = 4)]
    workers: usize,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    trace: PathBuf,
    /// only check invariants whose name starts with this prefix
    #[arg(long)]
    suite: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Ceremony(args) => run_ceremony(args),
        Command::Run(args) => run_cmd(args),
        Command::VerifyTrace(args) => verify_cmd(args),
    }
}

fn run_ceremony(args: CeremonyArgs) -> ExitCode {
    let policy = match &args.weights {
        Some(spec) => {
            let mut weights = BTreeMap::new();
            for (i, field) in spec.split(',').enumerate() {
                let Ok(w) = field.trim().parse::<u32>() else {
                    eprintln!("error: bad weight {field:?}");
                    return ExitCode::from(2);
                };
                weights.insert(format!("p{}", i + 1), w);
            }
            SharingPolicy::weighted(args.threshold, weights)
        }
        None => {
            let Some(n) = args.parties else {
                eprintln!("error: --parties or --weights required");
                return ExitCode::from(2);
            };
            SharingPolicy::simple(args.threshold, n)
        }
    };
    if let Err(e) = policy.validate() {
        eprintln!("error: invalid policy: {e}");
        return ExitCode::from(2);
    }
    let Some(profile) = Profile::parse(&args.profile) else {
        eprintln!("error: unknown profile {}", args.profile);
        return ExitCode::from(2);
    };
    let seed = args.seed.unwrap_or_else(|| rand::rngs::OsRng.next_u64());
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let (public, shares) = match ceremony(&policy, profile, &mut rng, &args.dealing_id) {
        Ok(out) => out,
        Err(CeremonyError::Invalid(e)) | Err(CeremonyError::Parse(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = std::fs::create_dir_all(&args.out) {
        eprintln!("error: cannot create {}: {e}", args.out.display());
        return ExitCode::from(2);
    }
    let public_path = args.out.join("public.toml");
    if std::fs::write(&public_path, public.to_toml()).is_err() {
        eprintln!("error: cannot write {}", public_path.display());
        return ExitCode::from(2);
    }
    for share in &shares {
        let path = args.out.join(format!("share-{}.toml", share.participant));
        if std::fs::write(&path, share.to_toml()).is_err() {
            eprintln!("error: cannot write {}", path.display());
            return ExitCode::from(2);
        }
    }
    println!(
        "ceremony dealing_id={} participants={} shares={} public={}",
        args.dealing_id,
        shares.len(),
        public.share_count,
        public_path.display()
    );
    ExitCode::SUCCESS
}

fn load_scenario(path: &Path) -> Result<BuiltScenario, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let doc = ScenarioDoc::from_toml_str(&text).map_err(|e| e.to_string())?;
    validate(doc).map_err(|e| e.to_string())
}

fn print_reports(seed: u64, reports: &[InvariantReport]) -> bool {
    let mut all_pass = true;
    for r in reports {
        println!(
            "invariant seed={seed} name={} result={} checks={} detail={}",
            r.name,
            if r.passed { "pass" } else { "fail" },
            r.checks,
            r.detail
        );
        all_pass &= r.passed;
    }
    all_pass
}

fn run_one(
    built: &BuiltScenario,
    seed: u64,
    trace_path: Option<&Path>,
) -> Result<(Vec<InvariantReport>, bool), String> {
    let outcome = run_scenario(built, seed).map_err(|e| e.to_string())?;
    let text = trace::to_text(&outcome.trace);
    if let Some(path) = trace_path {
        std::fs::write(path, &text).map_err(|e| format!("cannot write trace: {e}"))?;
    }
    let reports = check_trace(&outcome.trace).map_err(|e| e.to_string())?;
    Ok((reports, outcome.timed_out))
}

fn run_cmd(args: RunArgs) -> ExitCode {
    let built = match load_scenario(&args.scenario) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let seeds: Vec<u64> = match &args.seeds {
        None => vec![args.seed],
        Some(range) => {
            let Some((a, b)) = range.split_once("..") else {
                eprintln!("error: --seeds wants a..b");
                return ExitCode::from(2);
            };
            let (Ok(a), Ok(b)) = (a.parse::<u64>(), b.parse::<u64>()) else {
                eprintln!("error: bad seed range");
                return ExitCode::from(2);
            };
            if a > b {
                eprintln!("error: empty seed range");
                return ExitCode::from(2);
            }
            (a..=b).collect()
        }
    };

    if seeds.len() > 1 {
        if let Some(dir) = &args.trace {
            if std::fs::create_dir_all(dir).is_err() {
                eprintln!("error: cannot create {}", dir.display());
                return ExitCode::from(2);
            }
        }
    }

    let mut failures = 0u64;
    let mut timeouts = 0u64;
    let mut totals: BTreeMap<String, (u64, u64)> = BTreeMap::new();

    // fan seeds out over worker threads; runs share nothing mutable
    let chunks: Vec<Vec<u64>> = seeds
        .chunks(seeds.len().div_ceil(args.workers.max(1)))
        .map(|c| c.to_vec())
        .collect();
    let mut results: Vec<(u64, Result<(Vec<InvariantReport>, bool), String>)> =
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for chunk in &chunks {
                let built_ref = &built;
                let trace_arg = args.trace.clone();
                let many = seeds.len() > 1;
                handles.push(scope.spawn(move || {
                    let mut out = Vec::new();
                    for &seed in chunk {
                        let trace_path: Option<PathBuf> = match (&trace_arg, many) {
                            (None, _) => None,
                            (Some(dir), true) => Some(dir.join(format!("seed-{seed}.trace"))),
                            (Some(file), false) => Some(file.clone()),
                        };
                        out.push((seed, run_one(built_ref, seed, trace_path.as_deref())));
                    }
                    out
                }));
            }
            let mut all = Vec::new();
            for h in handles {
                all.extend(h.join().expect("worker"));
            }
            all
        });

    results.sort_by_key(|(seed, _)| *seed);
    for (seed, result) in results {
        match result {
            Err(e) => {
                eprintln!("error: seed {seed}: {e}");
                return ExitCode::from(2);
            }
            Ok((reports, timed_out)) => {
                if timed_out {
                    timeouts += 1;
                    println!(
                        "invariant seed={seed} name=tick-limit result=fail checks=1 detail=timeout"
                    );
                }
                let pass = print_reports(seed, &reports);
                if !pass || timed_out {
                    failures += 1;
                }
                for r in reports {
                    let entry = totals.entry(r.name).or_insert((0, 0));
                    entry.1 += 1;
                    if r.passed {
                        entry.0 += 1;
                    }
                }
            }
        }
    }

    println!();
    println!("{:<24} {:>8} {:>8}", "invariant", "pass", "runs");
    for (name, (pass, runs)) in &totals {
        println!("{name:<24} {pass:>8} {runs:>8}");
    }
    println!("seeds={} failures={failures} timeouts={timeouts}", seeds.len());
    if failures > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn verify_cmd(args: VerifyArgs) -> ExitCode {
    let text = match std::fs::read_to_string(&args.trace) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.trace.display());
            return ExitCode::from(2);
        }
    };
    let records = match trace::parse_text(&text) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: trace parse failed: {e}");
            return ExitCode::from(2);
        }
    };
    let reports = match check_trace(&records) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let filtered: Vec<InvariantReport> = match &args.suite {
        None => reports,
        Some(prefix) => reports
            .into_iter()
            .filter(|r| r.name.starts_with(prefix.as_str()))
            .collect(),
    };
    let pass = print_reports(0, &filtered);
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
