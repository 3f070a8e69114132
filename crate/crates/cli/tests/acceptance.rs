//! Acceptance suite: one PASS/FAIL line per criterion at full scale, plus CLI
//! integration checks. Exits nonzero on any failure not listed in
//! `KNOWN_FAILURES`, and on a known failure that unexpectedly passes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use fp_audit_core::validation::{CheckResult, Scale, Validator, CRITERIA};
use fp_audit_core::Runner;

const SEED: u64 = 42;

/// Checks that fail for a reason outside the implementation. Each is still
/// reported as FAIL.
const KNOWN_FAILURES: &[(&str, &str)] = &[(
    "prior tail P(||S||_op >= e^3) (d=10)",
    "the closed-form bound (e^2/x)^(d/2) undershoots the true tail at x = e^3, d = 10 \
     (MC 0.0166 +/- 0.0004 vs 0.0067; independent numpy oracle agrees); the unsimplified \
     bound (m/sqrt(x))^(m-d+1)/(m-d+1)! holds and is checked in the supplementary set",
)];

#[derive(Default)]
struct Tally {
    unexpected: Vec<String>,
}

impl Tally {
    fn criterion(&mut self, label: &str, checks: &[CheckResult]) {
        let mut known = Vec::new();
        let mut unknown = Vec::new();
        for c in checks.iter().filter(|c| !c.pass) {
            match KNOWN_FAILURES.iter().find(|(name, _)| *name == c.name) {
                Some((_, why)) => known.push((c, *why)),
                None => unknown.push(c),
            }
        }
        for (name, _) in KNOWN_FAILURES {
            if let Some(c) = checks.iter().find(|c| c.name == *name && c.pass) {
                self.unexpected.push(format!("{label}: known failure now passes (XPASS): {}", c.name));
            }
        }
        let pass = known.is_empty() && unknown.is_empty();
        println!("{} {label} ({} checks)", if pass { "PASS" } else { "FAIL" }, checks.len());
        for c in checks {
            println!("    {}", fp_audit_cli::commands::check_line(c));
        }
        for (c, why) in &known {
            println!("    known failure: {}: {why}", c.name);
        }
        for c in unknown {
            self.unexpected.push(format!("{label}: {}", c.name));
        }
    }

    fn simple(&mut self, label: &str, result: std::result::Result<(), String>) {
        match result {
            Ok(()) => println!("PASS {label}"),
            Err(e) => {
                println!("FAIL {label}: {e}");
                self.unexpected.push(format!("{label}: {e}"));
            }
        }
    }
}

fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_fp-audit"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn fp_audit(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn fp-audit")
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, json).unwrap();
    p.display().to_string()
}

/// Quick-scale `validate` twice at one worker count and once at another;
/// all validation.json files must be byte-identical.
fn determinism(tmp: &Path) -> std::result::Result<(), String> {
    let cfg = configs().join("validate-quick.json").display().to_string();
    let mut outputs = Vec::new();
    for (run, workers) in [("a", "1"), ("b", "1"), ("c", "4")] {
        let out = tmp.join(format!("det-{run}"));
        let o = fp_audit(&["validate", "--config", &cfg, "--seed", "42", "--workers", workers, "--out", &out.display().to_string()]);
        if !matches!(o.status.code(), Some(0 | 1)) {
            return Err(format!("validate exited with {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)));
        }
        for f in ["validation.json", "validation.csv"] {
            outputs.push((run, workers, f, std::fs::read(out.join(f)).map_err(|e| e.to_string())?));
        }
    }
    for (run, workers, f, bytes) in &outputs[2..] {
        let (_, _, _, first) = outputs.iter().find(|o| o.2 == *f).unwrap();
        if bytes != first {
            return Err(format!("{f} from run {run} ({workers} workers) differs from run a"));
        }
    }
    Ok(())
}

fn cli_exit_codes(tmp: &Path) -> std::result::Result<(), String> {
    let expect = |what: &str, o: Output, code: i32| -> std::result::Result<(), String> {
        if o.status.code() == Some(code) {
            Ok(())
        } else {
            Err(format!("{what}: exit {:?}, expected {code}; stderr: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)))
        }
    };
    let out = tmp.join("cli").display().to_string();
    let neg = write_config(tmp, "neg.json", r#"{"command": "attack-sweep", "trials": -5, "epsilons": [1.0]}"#);
    expect("negative trials", fp_audit(&["attack-sweep", "--config", &neg, "--out", &out]), 2)?;
    let unknown = write_config(tmp, "unknown.json", r#"{"command": "tails", "trails": 10}"#);
    expect("unknown field", fp_audit(&["tails", "--config", &unknown, "--out", &out]), 2)?;
    let mech = write_config(tmp, "mech.json", r#"{"command": "attack-sweep", "mechanism": "laplace", "epsilons": [1.0]}"#);
    expect("unknown mechanism", fp_audit(&["attack-sweep", "--config", &mech, "--out", &out]), 2)?;
    let phase = configs().join("phase-diagram.json").display().to_string();
    expect("command mismatch", fp_audit(&["tails", "--config", &phase, "--out", &out]), 2)?;
    expect("missing config", fp_audit(&["tails", "--config", "/nonexistent/x.json"]), 2)?;
    expect("bad subcommand", fp_audit(&["frobnicate", "--config", &phase]), 2)?;

    expect("phase diagram", fp_audit(&["phase-diagram", "--config", &phase, "--out", &out, "--svg"]), 0)?;
    for f in ["phase_diagram.csv", "phase_diagram.svg", "metadata.json"] {
        if !Path::new(&out).join(f).exists() {
            return Err(format!("phase-diagram did not write {f}"));
        }
    }
    // A failing check maps to exit status 1.
    let c5 = write_config(tmp, "c5.json", r#"{"command": "validate", "scale": "full", "criteria": [5]}"#);
    expect("failing validation", fp_audit(&["validate", "--config", &c5, "--out", &out]), 1)?;
    let c6 = write_config(tmp, "c6.json", r#"{"command": "validate", "scale": "quick", "criteria": [6]}"#);
    expect("passing validation", fp_audit(&["validate", "--config", &c6, "--out", &out]), 0)?;
    Ok(())
}

fn main() {
    // The libtest flags cargo passes (e.g. --quiet, filters) are ignored;
    // `--list` must print nothing for test discovery.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let runner = Runner::with_available_cores();
    let validator = Validator::new(SEED, Scale::Full, &runner);
    let mut tally = Tally::default();
    println!("acceptance suite: seed {SEED}, {} workers", runner.workers());
    for (k, name) in CRITERIA {
        let t = Instant::now();
        let label = format!("criterion {k}: {name}");
        match validator.criterion(k) {
            Ok(checks) => tally.criterion(&label, &checks),
            Err(e) => tally.simple(&label, Err(e.to_string())),
        }
        println!("    [{:.1}s]", t.elapsed().as_secs_f64());
    }
    let tmp = tempfile::tempdir().expect("temp dir");
    let t = Instant::now();
    tally.simple("criterion 10: determinism (seed 42 twice; 1 vs 4 workers)", determinism(tmp.path()));
    println!("    [{:.1}s]", t.elapsed().as_secs_f64());
    match validator.criterion(0) {
        Ok(checks) => tally.criterion("supplementary checks", &checks),
        Err(e) => tally.simple("supplementary checks", Err(e.to_string())),
    }
    tally.simple("cli exit codes and outputs", cli_exit_codes(tmp.path()));

    if tally.unexpected.is_empty() {
        println!("acceptance: no unexpected failures ({} known)", KNOWN_FAILURES.len());
    } else {
        println!("acceptance: {} unexpected failure(s):", tally.unexpected.len());
        for u in &tally.unexpected {
            println!("    {u}");
        }
        std::process::exit(1);
    }
}
