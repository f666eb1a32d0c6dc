//! Command-line harness: configuration, dispatch, and output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

use config::{common_keys, Resolved};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("acceptance check failed: {0}")]
    Assert(String),
    #[error("resource guard: {0}")]
    Resource(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Assert(_) => 3,
            CliError::Resource(_) => 4,
            CliError::Io(_) | CliError::Runtime(_) => 1,
        }
    }
}

pub fn usage() -> String {
    let mut s = String::from(
        "usage: bbm <subcommand> [--config PATH] [--seed N] [--threads N] [--out DIR] [--assert] [--KEY VALUE ...]\n\nsubcommands:\n",
    );
    for c in commands::SUBCOMMANDS {
        s.push_str(&format!("  {c}\n"));
    }
    s.push_str("\n`bbm <subcommand> --help` lists the keys of a subcommand.\n");
    s
}

fn help(cmd: &str) -> String {
    let mut s = format!("keys of `{cmd}` (set in a config file as `key = value` or as `--key value`):\n");
    for k in common_keys()
        .into_iter()
        .chain(commands::schema(cmd).unwrap_or_default())
    {
        s.push_str(&format!("  {:<14} default `{}`  {}\n", k.name, k.default, k.help));
    }
    s
}

/// Parsed command line: subcommand, optional config path, and flag overrides.
struct Invocation {
    cmd: String,
    config: Option<PathBuf>,
    flags: Vec<(String, String)>,
    help: bool,
}

fn parse_args(args: &[String]) -> Result<Invocation, CliError> {
    let cmd = args
        .first()
        .ok_or_else(|| CliError::Usage("missing subcommand".into()))?
        .clone();
    let mut inv = Invocation {
        cmd,
        config: None,
        flags: Vec::new(),
        help: false,
    };
    let mut i = 1;
    while i < args.len() {
        let a = &args[i];
        let name = a
            .strip_prefix("--")
            .ok_or_else(|| CliError::Usage(format!("unexpected argument `{a}`")))?;
        i += 1;
        if name == "help" {
            inv.help = true;
            continue;
        }
        if name == "assert" {
            inv.flags.push(("assert".into(), "true".into()));
            continue;
        }
        let (key, value) = match name.split_once('=') {
            Some((k, v)) => (k.to_owned(), v.to_owned()),
            None => {
                let v = args
                    .get(i)
                    .ok_or_else(|| CliError::Config(format!("flag --{name} needs a value")))?
                    .clone();
                i += 1;
                (name.to_owned(), v)
            }
        };
        if key == "config" {
            inv.config = Some(PathBuf::from(value));
        } else {
            inv.flags.push((key, value));
        }
    }
    Ok(inv)
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// Runs the command line and returns the process exit code. `out_root` is
/// the default output root (normally `BBM_OUT_DIR`).
pub fn main_with(args: &[String], out_root: Option<PathBuf>) -> i32 {
    if args.is_empty() || args[0] == "--help" || args[0] == "help" {
        eprint!("{}", usage());
        return if args.is_empty() { 2 } else { 0 };
    }
    match execute(args, out_root) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Usage(_) = e {
                eprint!("{}", usage());
            }
            e.exit_code()
        }
    }
}

fn execute(args: &[String], out_root: Option<PathBuf>) -> Result<(), CliError> {
    let inv = parse_args(args)?;
    let schema =
        commands::schema(&inv.cmd).ok_or_else(|| CliError::Usage(format!("unknown subcommand `{}`", inv.cmd)))?;
    if inv.help {
        print!("{}", help(&inv.cmd));
        return Ok(());
    }
    let keys: Vec<_> = common_keys().into_iter().chain(schema).collect();
    let cfg = Resolved::build(&keys, inv.config.as_deref(), &inv.flags)?;
    for w in &cfg.warnings {
        eprintln!("{w}");
    }
    let threads = cfg.usize("threads");
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start thread pool: {e}")))?;
    let started = unix_now();
    let report = pool.install(|| commands::run(&inv.cmd, &cfg))?;
    let finished = unix_now();

    let dir = match cfg.opt_text("out") {
        Some(d) => PathBuf::from(d),
        None => out_root.unwrap_or_else(|| PathBuf::from("bbm-out")).join(&inv.cmd),
    };
    let mut manifest = vec![
        ("subcommand".to_owned(), inv.cmd.clone()),
        ("version".to_owned(), env!("CARGO_PKG_VERSION").to_owned()),
        ("seed".to_owned(), cfg.int("seed").to_string()),
        ("threads".to_owned(), pool.current_num_threads().to_string()),
        ("started_unix".to_owned(), format!("{started:.3}")),
        ("finished_unix".to_owned(), format!("{finished:.3}")),
    ];
    for (k, v) in cfg.entries() {
        manifest.push((format!("config.{k}"), v.to_owned()));
    }
    let written = output::write_outputs(&dir, &report, &manifest)?;
    for p in &written {
        println!("wrote {}", p.display());
    }
    for n in &report.notes {
        println!("note: {n}");
    }
    if let Some(v) = &report.verdict {
        println!("{}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if cfg.flag("assert") && !v.pass {
            return Err(CliError::Assert(v.detail.clone()));
        }
    }
    Ok(())
}
