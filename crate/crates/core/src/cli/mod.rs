//! Command-line front end for the `tro` binary.
//!
//! Exit codes: 0 every mandatory check passed, 1 a check failed, 2 invalid
//! input (unreadable or ill-formed file, bad flags).

pub mod commands;
pub mod file;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Read as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub use commands::{run_command, Command, Outcome, Settings};
pub use file::{InstanceFile, LoadedInstance, Overrides};

use crate::error::{Error, Result};
use crate::expectation::assemble_expectation;
use crate::gen::{self, DegenerateKind, Instance};
use crate::report::CheckRecord;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "tro", version, about = "Checks and constructions for finite-dimensional TROs")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Args)]
struct Flags {
    /// Residual tolerance (overrides the file).
    #[arg(long, global = true)]
    tol_residual: Option<f64>,
    /// Relative rank cut (overrides the file).
    #[arg(long, global = true)]
    tol_rank: Option<f64>,
    /// Highest matrix amplification level for cb-norm probes.
    #[arg(long, global = true, default_value_t = 4)]
    amp_level: usize,
    /// Random restarts for the module-norm supremum.
    #[arg(long, global = true, default_value_t = 200)]
    restarts: usize,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the JSON report (for `gen`: the instance file) here.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Check that T_basis spans a TRO.
    CheckTro(Input),
    /// Ternary closure of span T_basis.
    Closure(Input),
    /// Linking algebras and the module-norm identity.
    Linking(Input),
    /// Nondegeneracy of X inside T.
    CheckSubtro(Input),
    /// Check P as a TRO conditional expectation.
    CheckProjection(Input),
    /// Build E on the linking algebra from P and verify it.
    Extend(Input),
    /// Verify E_blocks (or the E assembled from P).
    Verify(Input),
    /// Compare E_blocks with the E forced by P.
    Uniqueness(Input),
    /// Finite-dimensional von Neumann reduction checks.
    Wstar(Input),
    /// Generate an instance file.
    Gen(GenArgs),
}

#[derive(Debug, Args)]
struct Input {
    /// Instance file, or `-` for standard input.
    input: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Family {
    Corner,
    Group,
    Random,
    Degenerate,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    family: Family,
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 2)]
    n: usize,
    /// Rank of the left corner projection (default m).
    #[arg(long)]
    rank_e: Option<usize>,
    /// Rank of the right corner projection (default n).
    #[arg(long)]
    rank_f: Option<usize>,
    /// Group order for the group-average family.
    #[arg(long, default_value_t = 2)]
    order: usize,
    /// Degenerate kind: missing_nondegeneracy, noncontractive_P, non_tro_X.
    #[arg(long)]
    kind: Option<DegenerateKind>,
}

impl Sub {
    fn split(&self) -> Option<(Command, &str)> {
        let (c, i) = match self {
            Sub::CheckTro(i) => (Command::CheckTro, i),
            Sub::Closure(i) => (Command::Closure, i),
            Sub::Linking(i) => (Command::Linking, i),
            Sub::CheckSubtro(i) => (Command::CheckSubtro, i),
            Sub::CheckProjection(i) => (Command::CheckProjection, i),
            Sub::Extend(i) => (Command::Extend, i),
            Sub::Verify(i) => (Command::Verify, i),
            Sub::Uniqueness(i) => (Command::Uniqueness, i),
            Sub::Wstar(i) => (Command::Wstar, i),
            Sub::Gen(_) => return None,
        };
        Some((c, &i.input))
    }
}

pub fn input_digest(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

fn residual_json(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(if x > 0.0 { "inf" } else { "nan" })
    }
}

fn check_json(c: &CheckRecord) -> Value {
    json!({
        "name": c.name,
        "pass": c.pass,
        "residual": residual_json(c.residual),
        "details": c.details,
        "mandatory": c.mandatory,
    })
}

/// Structured report. Keys are sorted, so output is deterministic.
pub fn report_json(outcome: &Outcome, digest: &str) -> Value {
    json!({
        "tool": "tro",
        "version": env!("CARGO_PKG_VERSION"),
        "command": outcome.command,
        "input_digest": digest,
        "verdict": if outcome.pass() { "PASS" } else { "FAIL" },
        "checks": outcome.checks.iter().map(check_json).collect::<Vec<_>>(),
        "data": Value::Object(outcome.data.clone()),
    })
}

pub fn text_report(outcome: &Outcome) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "tro {}: {}", env!("CARGO_PKG_VERSION"), outcome.command);
    for c in &outcome.checks {
        let tag = match (c.pass, c.mandatory) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "info",
        };
        let _ = writeln!(s, "{tag} {}  residual {:.3e}  {}", c.name, c.residual, c.details);
    }
    for n in &outcome.notes {
        let _ = writeln!(s, "{n}");
    }
    if let Some(f) = outcome.first_failure() {
        let _ = writeln!(s, "first failing check: {}", f.name);
    }
    let _ = writeln!(s, "verdict: {}", if outcome.pass() { "PASS" } else { "FAIL" });
    s
}

pub fn exit_code(outcome: &Outcome) -> i32 {
    if outcome.pass() {
        EXIT_PASS
    } else {
        EXIT_FAIL
    }
}

/// Errors other than invalid input mean a mathematical step could not go
/// through; they are reported as a failing check.
pub fn outcome_from_error(cmd: Command, err: &Error) -> Option<Outcome> {
    if matches!(err, Error::InvalidInput(_)) {
        return None;
    }
    let mut out = Outcome {
        command: cmd.as_str().to_string(),
        checks: Vec::new(),
        data: Default::default(),
        notes: Vec::new(),
    };
    out.checks.push(CheckRecord::new("error", false, f64::INFINITY, err.to_string()));
    Some(out)
}

fn read_input(path: &str) -> std::result::Result<Vec<u8>, String> {
    if path == "-" {
        let mut buf = Vec::new();
        std::io::stdin().read_to_end(&mut buf).map_err(|e| format!("stdin: {e}"))?;
        Ok(buf)
    } else {
        std::fs::read(path).map_err(|e| format!("{path}: {e}"))
    }
}

fn write_file(path: &Path, text: &str) -> std::result::Result<(), String> {
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn run_file_command(cmd: Command, path: &str, flags: &Flags) -> i32 {
    let bytes = match read_input(path) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: cannot read {e}");
            return EXIT_INVALID;
        }
    };
    let digest = input_digest(&bytes);
    let loaded = std::str::from_utf8(&bytes)
        .map_err(|e| crate::error::invalid(format!("instance file is not UTF-8: {e}")))
        .and_then(InstanceFile::parse)
        .and_then(|f| {
            f.load(Overrides {
                tol_residual: flags.tol_residual,
                tol_rank: flags.tol_rank,
                seed: flags.seed,
            })
        });
    let loaded = match loaded {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let settings = Settings {
        amp_level: flags.amp_level,
        restarts: flags.restarts,
        ..Settings::default()
    };
    let outcome = match run_command(cmd, &loaded, settings) {
        Ok(o) => o,
        Err(e) => match outcome_from_error(cmd, &e) {
            Some(o) => o,
            None => {
                eprintln!("error: {e}");
                return EXIT_INVALID;
            }
        },
    };
    print!("{}", text_report(&outcome));
    if let Some(out) = &flags.out {
        let text = serde_json::to_string_pretty(&report_json(&outcome, &digest)).expect("report serializes");
        if let Err(e) = write_file(out, &(text + "\n")) {
            eprintln!("error: cannot write {e}");
            return EXIT_INVALID;
        }
    }
    exit_code(&outcome)
}

/// Parameters for [`generate`]. `family` is `corner`, `group`, `random` or
/// `degenerate`; unused fields are ignored by the chosen family.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenSpec {
    pub family: String,
    pub m: usize,
    pub n: usize,
    /// Corner projection ranks; `None` means full rank.
    pub rank_e: Option<usize>,
    pub rank_f: Option<usize>,
    pub order: usize,
    pub kind: Option<DegenerateKind>,
    pub seed: u64,
}

/// Generates an instance; nondegenerate instances carry their assembled E.
pub fn generate(spec: &GenSpec) -> Result<InstanceFile> {
    let GenSpec { m, n, order, seed, .. } = *spec;
    let inst: Instance = match spec.family.as_str() {
        "corner" => gen::corner_instance(m, n, spec.rank_e.unwrap_or(m), spec.rank_f.unwrap_or(n), seed)?,
        "group" => gen::group_average_instance(m, n, order, seed)?,
        "random" => gen::random_instance(seed)?,
        "degenerate" => {
            let kind = spec.kind.ok_or_else(|| crate::error::invalid("the degenerate family needs a kind"))?;
            gen::degenerate_instance(kind, seed)?
        }
        other => return Err(crate::error::invalid(format!("unknown family {other:?}"))),
    };
    let e = if inst.nondegenerate && inst.kind.is_none() {
        let x = inst.x_tro()?;
        assemble_expectation(&inst.p, &x, &inst.t).ok()
    } else {
        None
    };
    Ok(InstanceFile::from_instance(&inst, e.as_ref()))
}

fn run_gen(args: &GenArgs, flags: &Flags) -> i32 {
    let family = match args.family {
        Family::Corner => "corner",
        Family::Group => "group",
        Family::Random => "random",
        Family::Degenerate => "degenerate",
    };
    let spec = GenSpec {
        family: family.to_string(),
        m: args.m,
        n: args.n,
        rank_e: args.rank_e,
        rank_f: args.rank_f,
        order: args.order,
        kind: args.kind,
        seed: flags.seed.unwrap_or(0),
    };
    let file = match generate(&spec) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let text = file.to_json();
    match &flags.out {
        Some(path) => {
            if let Err(e) = write_file(path, &text) {
                eprintln!("error: cannot write {e}");
                return EXIT_INVALID;
            }
            println!(
                "wrote {} instance (dim T {}, dim X {}) to {}",
                family,
                file.t_basis.len(),
                file.x_basis.as_ref().map_or(0, Vec::len),
                path.display()
            );
        }
        None => print!("{text}"),
    }
    EXIT_PASS
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_PASS };
        }
    };
    match cli.command.split() {
        Some((cmd, path)) => run_file_command(cmd, path, &cli.flags),
        None => match &cli.command {
            Sub::Gen(g) => run_gen(g, &cli.flags),
            _ => unreachable!(),
        },
    }
}
