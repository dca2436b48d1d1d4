use std::fs;
use std::process::{Command, Output};

use owncash::crypto;

fn owncash(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_owncash")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn list_prints_eight_names() {
    let o = owncash(&["--list"]);
    assert_eq!(o.status.code(), Some(0));
    let names: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    assert_eq!(
        names,
        [
            "honest_issue_and_pay",
            "double_spend",
            "bank_accomplice",
            "theft_without_key",
            "replay_old_certificate",
            "key_rotation",
            "over_issuance_audit",
            "quorum_check_payment"
        ]
    );
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for i in 0..2 {
        let report = dir.path().join(format!("r{i}.txt"));
        let trace = dir.path().join(format!("t{i}.txt"));
        let o = owncash(&[
            "--scenario",
            "double_spend",
            "--seed",
            "7",
            "--report",
            report.to_str().unwrap(),
            "--trace",
            trace.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).is_empty());
        reports.push((fs::read(&report).unwrap(), fs::read(&trace).unwrap()));
    }
    assert_eq!(reports[0], reports[1]);
    let other = owncash(&["--scenario", "double_spend", "--seed", "8"]);
    assert_ne!(other.stdout, reports[0].0);
}

#[test]
fn report_and_trace_formats() {
    let o = owncash(&["--scenario", "honest_issue_and_pay", "--seed", "2"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut lines = text.lines().peekable();
    let mut verdicts = 0;
    while let Some(l) = lines.next_if(|l| !l.starts_with("OWNERS ")) {
        assert!(l.starts_with("PASS "), "{l}");
        assert!(l.split(' ').count() >= 3, "{l}");
        verdicts += 1;
    }
    assert!(verdicts > 0);
    for node in 0..5 {
        assert_eq!(lines.next(), Some(format!("OWNERS {node}").as_str()));
        assert_eq!(lines.next(), Some("OWNCASHDB v1"));
        while lines.next_if(|l| !l.starts_with("OWNERS ")).is_some() {}
    }
    assert_eq!(lines.next(), None);

    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace");
    let o = owncash(&["--scenario", "honest_issue_and_pay", "--seed", "2", "--trace", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let trace = fs::read_to_string(trace).unwrap();
    for line in trace.lines() {
        let f: Vec<&str> = line.split(' ').collect();
        assert_eq!(f.len(), 8, "{line}");
        for numeric in [0, 1, 2, 3, 5, 6] {
            assert!(f[numeric].parse::<u64>().is_ok(), "{line}");
        }
        assert!(["cert", "issue", "pay", "script", "local"].contains(&f[4]), "{line}");
    }
}

#[test]
fn report_never_contains_secret_seeds() {
    let o = owncash(&["--scenario", "bank_accomplice", "--seed", "4"]);
    let text = stdout(&o);
    let issuer_seed = crypto::derive_seed("owncash/scenario-issuer", &4u64.to_be_bytes());
    assert!(!text.contains(&hex::encode(issuer_seed)));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(owncash(&[]).status.code(), Some(2));
    assert_eq!(owncash(&["--scenario", "no_such_thing"]).status.code(), Some(2));
    assert_eq!(owncash(&["--scenario", "double_spend", "--seed", "x"]).status.code(), Some(2));
    assert_eq!(owncash(&["--scenario", "double_spend", "--policy", "nope=1"]).status.code(), Some(2));
    assert_eq!(owncash(&["--scenario", "double_spend", "--policy", "retain_history"]).status.code(), Some(2));
    assert_eq!(owncash(&["--list", "--all"]).status.code(), Some(2));
}

#[test]
fn failing_verdict_exits_1() {
    let o = owncash(&["--scenario", "quorum_check_payment", "--policy", "quorum_threshold=0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).lines().any(|l| l.starts_with("FAIL merchant_refused_via_quorum ")));
}

#[test]
fn policy_overrides_reach_the_databases() {
    let o = owncash(&["--scenario", "replay_old_certificate", "--policy", "retain_history=true"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    // Full history: epochs 0, 1 and 2 are all exported.
    assert!(text.contains(" EPOCH=1 "));
    assert!(text.lines().any(|l| l.starts_with("PASS history_replay_matches ")));
    let plain = stdout(&owncash(&["--scenario", "replay_old_certificate"]));
    assert!(!plain.contains(" EPOCH=1 "));
}

#[test]
fn all_writes_directories_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let reports = dir.path().join("reports");
    let traces = dir.path().join("traces");
    let o = owncash(&["--all", "--report", reports.to_str().unwrap(), "--trace", traces.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let lines: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 80);
    assert!(lines.iter().all(|l| l.starts_with("PASS ")));
    assert_eq!(fs::read_dir(&reports).unwrap().count(), 80);
    assert_eq!(fs::read_dir(&traces).unwrap().count(), 80);
    let single = owncash(&["--scenario", "key_rotation", "--seed", "9"]);
    assert_eq!(fs::read(reports.join("key_rotation-seed9.report")).unwrap(), single.stdout);
}
