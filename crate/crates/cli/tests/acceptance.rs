//! One line per acceptance criterion, written straight to stderr so it shows
//! up in the test log whether or not the criterion passes.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use bbm_core::lab::bkr::{bkr_campaign, BkrCampaign};
use bbm_core::lab::decorrelation::{exp_decorrelation, DecorrelationConfig};
use bbm_core::lab::early::{exp_early_branching, EarlyConfig};
use bbm_core::lab::ergodic::{exp_ergodic, ErgodicConfig};
use bbm_core::lab::localization::{exp_localization, LocalizationConfig};
use bbm_core::lab::oracles::{bridge_check, moment_battery, BridgeCheckConfig, MomentBatteryConfig};
use bbm_core::lab::subsequence::{subsequence_campaign, SubsequenceCampaign};
use bbm_core::lab::tags;
use bbm_core::lab::tail::{exp_right_tail, TailConfig};
use bbm_core::RngStreamKey;

const SEED: u64 = 20240611;

fn stream(tag: u64) -> RngStreamKey {
    RngStreamKey::root(SEED).derive(tag)
}

fn line(n: u32, name: &str, pass: bool, detail: &str, started: Instant) {
    let mut err = std::io::stderr().lock();
    writeln!(
        err,
        "criterion {n:>2} {name}: {} ({detail}) [{:.1}s]",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    )
    .unwrap();
}

#[test]
fn c01_moment_identities() {
    let t = Instant::now();
    let cfg = MomentBatteryConfig::default();
    let rows = moment_battery(&cfg, stream(tags::MOMENTS)).unwrap();
    let targets = [std::f64::consts::E, 0.8364, 32.782];
    let mut pass = true;
    let mut detail = Vec::new();
    for ((name, m), target) in rows.iter().zip(targets) {
        pass &= m.z.abs() <= 5.0 && (m.rhs - target).abs() < 5e-4 * target;
        detail.push(format!("{name}: lhs {:.5} rhs {:.5} z {:.2}", m.lhs, m.rhs, m.z));
    }
    line(
        1,
        "moment identities, |z| <= 5 at 1e5 trials",
        pass,
        &detail.join("; "),
        t,
    );
    assert!(pass, "{detail:?}");
}

#[test]
fn c02_c04_bridge_closed_forms_and_line_bound() {
    let t = Instant::now();
    let cfg = BridgeCheckConfig::default();
    let r = bridge_check(&cfg, stream(tags::BRIDGE)).unwrap();
    let (a, b) = (r.closed_form_verdict(), r.line_bound_verdict());
    let exact_ok =
        (r.closed_forms[0].exact - 0.632121).abs() < 1e-6 && (r.closed_forms[1].exact - 0.52050).abs() < 1e-5;
    line(
        2,
        "bridge closed forms vs grid MC (1e5 paths, 1e3 steps)",
        a.pass && exact_ok,
        &a.detail,
        t,
    );
    line(4, "line bound dominance over 50 tuples", b.pass, &b.detail, t);
    assert!(a.pass && exact_ok && b.pass);
}

#[test]
fn c03_bkr_exactness() {
    let t = Instant::now();
    let rep = bkr_campaign(&BkrCampaign::default(), stream(tags::BKR)).unwrap();
    let v = rep.verdict.unwrap();
    line(3, "BKR cross-union inequality, 1e3 instances", v.pass, &v.detail, t);
    assert!(v.pass);
}

#[test]
fn c05_right_tail_slope() {
    let t = Instant::now();
    let cfg = TailConfig::default();
    let r = exp_right_tail(&cfg, stream(tags::TAIL)).unwrap();
    let v = r.verdict(&cfg);
    line(5, "right-tail log slope within 0.35 of -sqrt2", v.pass, &v.detail, t);
    assert!(v.pass);
}

#[test]
fn c06_early_branching() {
    let t = Instant::now();
    let cfg = EarlyConfig::default();
    let r = exp_early_branching(&cfg, stream(tags::EARLY)).unwrap();
    let v = r.verdict();
    line(6, "early branching decays in R", v.pass, &v.detail, t);
    assert!(v.pass);
}

#[test]
fn c07_localization() {
    let t = Instant::now();
    let cfg = LocalizationConfig::default();
    let r = exp_localization(&cfg, stream(tags::LOCALIZATION)).unwrap();
    let v = r.verdict();
    line(7, "localization failure nonincreasing in r", v.pass, &v.detail, t);
    assert!(v.pass);
}

#[test]
fn c08_decorrelation() {
    let t = Instant::now();
    let cfg = DecorrelationConfig::default();
    let r = exp_decorrelation(&cfg, stream(tags::DECORRELATION)).unwrap();
    let v = r.verdict(&cfg);
    line(8, "conditional decorrelation, 200 x 500", v.pass, &v.detail, t);
    assert!(v.pass);
}

#[test]
fn c09_ergodic_functional_form() {
    let t = Instant::now();
    let cfg = ErgodicConfig::default();
    let r = exp_ergodic(&cfg, stream(tags::ERGODIC)).unwrap();
    let v = r.verdicts(&cfg);
    let pass = v.form.pass && v.correlation.pass && v.sensitivity.pass;
    let detail = format!("{}; {}; {}", v.form.detail, v.correlation.detail, v.sensitivity.detail);
    line(
        9,
        "ergodic functional form, Z dependence, gap sensitivity",
        pass,
        &detail,
        t,
    );
    assert!(pass, "{detail}");
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn c10_thread_count_determinism() {
    let t = Instant::now();
    let runs: [&[&str]; 9] = [
        &[
            "simulate",
            "--T",
            "8",
            "--prune",
            "gap",
            "--L",
            "4",
            "--genealogy",
            "true",
        ],
        &["ergodic", "--T", "15", "--seeds", "3", "--t0", "3", "--L", "5"],
        &["early-branching", "--s", "3", "--t", "6", "--trials", "300"],
        &["localization", "--t", "4", "--r", "0.5,1", "--trials", "40"],
        &[
            "decorrelate",
            "--R",
            "1",
            "--s",
            "2",
            "--t",
            "3",
            "--outer",
            "6",
            "--inner",
            "40",
        ],
        &["bkr-check", "--instances", "200"],
        &[
            "bridge-check",
            "--paths",
            "2000",
            "--steps",
            "100",
            "--tuples",
            "5",
            "--tuple_paths",
            "500",
        ],
        &["moment-check", "--trials", "500", "--nodes", "64"],
        &["tail", "--t", "4", "--trials", "400"],
    ];
    let mut mismatched = Vec::new();
    let mut files = 0;
    for args in runs {
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for (threads, dir) in ["1", "8"].iter().zip(&dirs) {
            let o = Command::new(env!("CARGO_BIN_EXE_bbm"))
                .args(args)
                .args([
                    "--seed",
                    "99",
                    "--threads",
                    threads,
                    "--out",
                    dir.path().to_str().unwrap(),
                ])
                .output()
                .unwrap();
            assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        }
        let (a, b) = (csvs(dirs[0].path()), csvs(dirs[1].path()));
        files += a.len();
        if a.is_empty() || a != b {
            mismatched.push(args[0]);
        }
    }
    let pass = mismatched.is_empty();
    let detail = format!("{files} CSVs over 9 subcommands, mismatched: {mismatched:?}");
    line(10, "threads 1 vs 8 byte-identical CSVs", pass, &detail, t);
    assert!(pass, "{detail}");
}

#[test]
fn c11_subsequence_bound() {
    let t = Instant::now();
    let rep = subsequence_campaign(&SubsequenceCampaign::default(), stream(tags::SUBSEQUENCE)).unwrap();
    let v = rep.verdict.unwrap();
    line(11, "subsequence average bound, 100 signals", v.pass, &v.detail, t);
    assert!(v.pass);
}
