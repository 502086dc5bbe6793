//! Runs the `gmv` binary end to end on small inputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;

fn gmv(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_gmv"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "gmv {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn gmv_err(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_gmv"))
        .args(args)
        .output()
        .unwrap();
    assert!(!out.status.success(), "gmv {args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap()
}

/// Parses a CSV with header into (header, rows).
fn table(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(text: &str, name: &str) -> Vec<String> {
    let (header, rows) = table(text);
    let i = header.iter().position(|h| h == name).unwrap();
    rows.into_iter().map(|mut r| r.swap_remove(i)).collect()
}

#[test]
fn gen_enroll_verify_roc_round_trip() {
    let dir = TempDir::new().unwrap();
    let (sig, noisy, fresh) = (
        path(&dir, "sig.csv"),
        path(&dir, "noisy.csv"),
        path(&dir, "fresh.csv"),
    );
    let (reps, pos, neg, roc) = (
        path(&dir, "reps.csv"),
        path(&dir, "pos.csv"),
        path(&dir, "neg.csv"),
        path(&dir, "roc.csv"),
    );
    let assign = path(&dir, "assign.csv");

    gmv(&[
        "gen",
        "--n",
        "40",
        "--d",
        "64",
        "--seed",
        "1",
        "--out",
        s(&sig),
    ]);
    gmv(&[
        "gen",
        "--from",
        s(&sig),
        "--sigma-n",
        "0.1",
        "--seed",
        "2",
        "--out",
        s(&noisy),
    ]);
    gmv(&[
        "gen",
        "--n",
        "40",
        "--d",
        "64",
        "--seed",
        "3",
        "--out",
        s(&fresh),
    ]);
    let (header, rows) = table(&read(&sig));
    assert_eq!(header.len(), 65);
    assert_eq!(header[0], "index");
    assert_eq!(rows.len(), 40);

    gmv(&[
        "enroll",
        "--signatures",
        s(&sig),
        "--scheme",
        "hoa-pinv",
        "--sparsity",
        "0.6",
        "--m",
        "4",
        "--partitioner",
        "kmeans",
        "--assignment",
        s(&assign),
        "--seed",
        "9",
        "--out",
        s(&reps),
    ]);
    assert_eq!(table(&read(&reps)).1.len(), 4);
    assert_eq!(table(&read(&assign)).1.len(), 40);

    gmv(&[
        "verify",
        "--reps",
        s(&reps),
        "--queries",
        s(&noisy),
        "--out",
        s(&pos),
    ]);
    gmv(&[
        "verify",
        "--reps",
        s(&reps),
        "--queries",
        s(&fresh),
        "--out",
        s(&neg),
    ]);
    assert_eq!(table(&read(&pos)).0, ["index", "score", "group", "accept"]);

    // every noisy copy is scored against its own group's representative
    let groups = column(&read(&assign), "group_id");
    let matched = column(&read(&pos), "group")
        .iter()
        .zip(&groups)
        .filter(|(a, b)| a == b)
        .count();
    assert!(matched >= 30, "{matched} of 40 queries matched their group");

    gmv(&["roc", "--pos", s(&pos), "--neg", s(&neg), "--out", s(&roc)]);
    let text = read(&roc);
    assert!(text.starts_with("tau,p_fp,p_fn\n"));
    let auc: f64 = text
        .lines()
        .last()
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!(auc > 0.75, "auc {auc}");
}

#[test]
fn verify_threshold_controls_acceptance() {
    let dir = TempDir::new().unwrap();
    let (sig, reps) = (path(&dir, "sig.csv"), path(&dir, "reps.csv"));
    gmv(&["gen", "--n", "8", "--d", "32", "--out", s(&sig)]);
    gmv(&[
        "enroll",
        "--signatures",
        s(&sig),
        "--scheme",
        "aoh-sign-sum",
        "--out",
        s(&reps),
    ]);
    let all = gmv(&["verify", "--reps", s(&reps), "--queries", s(&sig)]);
    assert!(column(&all, "accept").iter().all(|a| a == "true"));
    let none = gmv(&[
        "verify",
        "--reps",
        s(&reps),
        "--queries",
        s(&sig),
        "--tau",
        "0",
    ]);
    assert!(column(&none, "accept").iter().all(|a| a == "false"));
}

#[test]
fn attack_reports_every_scheme() {
    let dir = TempDir::new().unwrap();
    let sig = path(&dir, "sig.csv");
    gmv(&["gen", "--n", "16", "--d", "64", "--out", s(&sig)]);
    let out = gmv(&["attack", "--signatures", s(&sig), "--sparsity", "0.6"]);
    let (_, rows) = table(&out);
    assert_eq!(rows.len(), 4);
    let one = gmv(&["attack", "--signatures", s(&sig), "--schemes", "hoa-sum"]);
    assert_eq!(table(&one).1.len(), 1);
}

#[test]
fn bloom_tune_prints_the_tuned_parameters() {
    let out = gmv(&["bloom-tune", "--n", "128", "--p-fp", "0.01"]);
    let (header, rows) = table(&out);
    assert_eq!(header.join(","), "lambda,l,l_b,k,H,pi0,pi");
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][2], "1227");
    let err = gmv_err(&["bloom-tune", "--n", "128", "--p-fp", "0.01", "--l-max", "9"]);
    assert!(err.contains("no (lambda, l)"), "{err}");
}

#[test]
fn custom_experiment_is_deterministic_and_scalable() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "run.cfg");
    fs::write(
        &cfg,
        "# small run\nd = 64\nn = 32\nm = 2\nsparsity_grid = 0.2, 0.6\n\
         schemes = hoa-pinv, aoh-sign-sum\ntrials_pos = 200\ntrials_neg = 200\n",
    )
    .unwrap();
    let run = |seed: &str, extra: &[&str]| {
        let mut args = vec!["experiment", "custom", "--config", s(&cfg), "--seed", seed];
        args.extend_from_slice(extra);
        gmv(&args)
    };
    let a = run("4", &[]);
    assert_eq!(a, run("4", &["--sequential"]));
    assert_ne!(a, run("5", &[]));
    let (header, rows) = table(&a);
    assert_eq!(header[0], "scheme");
    assert_eq!(rows.len(), 4);

    let out = path(&dir, "res.csv");
    run("4", &["--scale", "0.5", "--out", s(&out)]);
    assert_eq!(table(&read(&out)).1.len(), 4);
}

#[test]
fn preset_accepts_config_overrides() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "o.cfg");
    fs::write(
        &cfg,
        "d = 64\nsparsity_grid = 0.5\nschemes = hoa-pinv\nbloom = false\n",
    )
    .unwrap();
    let out = gmv(&[
        "experiment",
        "fig-compare",
        "--scale",
        "0.05",
        "--config",
        s(&cfg),
    ]);
    let (_, rows) = table(&out);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "hoa-pinv");
}

#[test]
fn bad_input_is_reported() {
    assert!(gmv_err(&["experiment", "custom"]).contains("--config"));
    assert!(gmv_err(&["experiment", "fig-9"]).contains("unknown preset"));
    let dir = TempDir::new().unwrap();
    let bad = path(&dir, "bad.csv");
    fs::write(&bad, "index,x0\n0,abc\n").unwrap();
    assert!(gmv_err(&["attack", "--signatures", s(&bad)]).contains("bad value"));
}
