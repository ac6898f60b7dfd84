//! Thin command-line front end over the library's harness entry points.
//!
//! Exit codes: 0 when every reported check passes, 1 when any invariant or
//! oracle finds a violation, 2 for unusable input (bad flags, unreadable or
//! malformed scenario files, unknown oracle names).

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cobalt::harness::{analyze, run_checked, sweep};
use cobalt::oracles::run_oracle;
use cobalt::scenario::ScenarioScript;

/// Print without panicking when the reader closed the pipe early.
fn out(s: impl AsRef<str>) {
    let _ = std::io::stdout().write_all(s.as_ref().as_bytes());
}

fn err(s: impl AsRef<str>) {
    let _ = std::io::stderr().write_all(s.as_ref().as_bytes());
}

#[derive(Parser)]
#[command(name = "cobalt", version, about = "Agreement stack simulator and checker")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate a scenario's trust topology: classification, linkage,
    /// connectivity, and flat-list overlap under its declared faults
    Analyze {
        /// Scenario file (TOML)
        config: PathBuf,
    },
    /// Execute one seeded run and check every invariant against the record
    Run {
        /// Scenario file (TOML)
        scenario: PathBuf,
        /// Seed override; defaults to the seed in the scenario file
        #[arg(long)]
        seed: Option<u64>,
        /// Output form
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Run a seed range in parallel and aggregate outcomes
    Sweep {
        /// Scenario file (TOML)
        scenario: PathBuf,
        /// Half-open seed range, e.g. 0..200
        #[arg(long, value_parser = parse_range)]
        seeds: SeedRange,
    },
    /// Exhaustive brute-force checks: params, support, overlap, rbc, or all
    Oracle {
        /// Oracle name
        instance: String,
    },
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    /// Verdict lines, one per checked invariant
    Text,
    /// The full run record, one line per event, replayable byte-for-byte
    Records,
}

#[derive(Clone)]
struct SeedRange {
    start: u64,
    end: u64,
}

fn parse_range(s: &str) -> Result<SeedRange, String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected A..B, got {s:?}"))?;
    let start: u64 = a.trim().parse().map_err(|_| format!("bad range start {a:?}"))?;
    let end: u64 = b.trim().parse().map_err(|_| format!("bad range end {b:?}"))?;
    if end <= start {
        return Err(format!("empty range {s:?}"));
    }
    Ok(SeedRange { start, end })
}

fn load(path: &PathBuf) -> Result<ScenarioScript, ExitCode> {
    ScenarioScript::load(path).map_err(|e| {
        err(format!("cobalt: {}: {e}\n", path.display()));
        ExitCode::from(2)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Analyze { config } => {
            let script = match load(&config) {
                Ok(s) => s,
                Err(code) => return code,
            };
            match analyze(&script) {
                Ok(report) => {
                    out(&report.text);
                    if report.clean {
                        out("analysis: clean\n");
                        ExitCode::SUCCESS
                    } else {
                        out("analysis: healthy pair without linkage\n");
                        ExitCode::from(1)
                    }
                }
                Err(e) => {
                    // Structural law violations are findings, not usage errors.
                    out(format!("violation: {e}\n"));
                    ExitCode::from(1)
                }
            }
        }
        Cmd::Run { scenario, seed, format } => {
            let script = match load(&scenario) {
                Ok(s) => s,
                Err(code) => return code,
            };
            let seed = seed.unwrap_or(script.seed);
            match run_checked(&script, seed) {
                Ok((result, verdict)) => {
                    match format {
                        Format::Text => {
                            out(format!(
                                "seed={seed} terminated={} goal={} delivered={} ticks={}\n",
                                result.outcome.terminated,
                                result.outcome.goal,
                                result.outcome.delivered,
                                result.outcome.ticks
                            ));
                            out(verdict.render());
                        }
                        Format::Records => {
                            out(result.record.render());
                            err(verdict.render());
                        }
                    }
                    if verdict.ok() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => {
                    err(format!("cobalt: {e}\n"));
                    ExitCode::from(2)
                }
            }
        }
        Cmd::Sweep { scenario, seeds } => {
            let script = match load(&scenario) {
                Ok(s) => s,
                Err(code) => return code,
            };
            match sweep(&script, seeds.start..seeds.end) {
                Ok(report) => {
                    out(report.render());
                    if report.all_ok() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => {
                    err(format!("cobalt: {e}\n"));
                    ExitCode::from(2)
                }
            }
        }
        Cmd::Oracle { instance } => match run_oracle(&instance) {
            Ok(reports) => {
                let mut ok = true;
                for r in &reports {
                    out(r.render());
                    ok &= r.pass();
                }
                if ok {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(1)
                }
            }
            Err(e) => {
                err(format!("cobalt: {e}\n"));
                ExitCode::from(2)
            }
        },
    }
}
