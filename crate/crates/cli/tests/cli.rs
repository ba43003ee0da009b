use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const HEADER: &str = "seed,scheme,M,b,outer_iters,sum_rate,user_id,rate,sinr_db,jam_power_dbm,tau_dbm,converged,wall_ms";

fn omnibeam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_omnibeam")).args(args).env("OMNIBEAM_THREADS", "2").output().unwrap()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.json");
    std::fs::write(
        &path,
        r#"{"scenario": {"elements": 3, "bits": 2, "users_r": 1, "users_t": 1},
            "algorithm": {"outer_max_iters": 3, "sca_max_iters": 5, "randomization_trials": 20},
            "run": {"schemes": ["ios", "no_ris"], "trials": 2, "seed": 5}}"#,
    )
    .unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn lines(p: &Path) -> Vec<String> {
    std::fs::read_to_string(p).unwrap().lines().map(String::from).collect()
}

fn error_line(out: &Output) -> String {
    let err = String::from_utf8_lossy(&out.stderr);
    err.lines().find(|l| l.starts_with("error kind=")).unwrap_or_else(|| panic!("no error line in {err:?}")).to_string()
}

fn without_wall_ms(rows: &[String]) -> Vec<String> {
    rows.iter().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
}

#[test]
fn run_writes_one_row_per_trial_scheme_and_user() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let csv = dir.path().join("out.csv");
    let out = omnibeam(&["run", "--config", s(&cfg), "--scheme", "all", "--trials", "3", "--out", s(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = lines(&csv);
    assert_eq!(rows[0], HEADER);
    // 3 trials, 4 schemes, 2 users
    assert_eq!(rows.len() - 1, 24);
    let stdout = String::from_utf8_lossy(&out.stdout);
    for name in ["ios", "irs_signal", "irs_jam", "no_ris"] {
        assert!(stdout.contains(name));
    }
}

#[test]
fn reruns_match_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert!(omnibeam(&["run", "--config", s(&cfg), "--seed", "11", "--out", s(&a)]).status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_omnibeam"))
        .args(["run", "--config", s(&cfg), "--seed", "11", "--out", s(&b)])
        .env("OMNIBEAM_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(without_wall_ms(&lines(&a)), without_wall_ms(&lines(&b)));
}

#[test]
fn sweeps_label_rows_with_the_swept_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let m_csv = dir.path().join("m.csv");
    let out = omnibeam(&["sweep", "--param", "M", "--values", "2,4", "--config", s(&cfg), "--out", s(&m_csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ms: Vec<String> = lines(&m_csv)[1..].iter().map(|l| l.split(',').nth(2).unwrap().to_string()).collect();
    assert_eq!(ms.len(), 2 * 2 * 2 * 2);
    assert!(ms[..8].iter().all(|m| m == "2") && ms[8..].iter().all(|m| m == "4"));

    let b_csv = dir.path().join("b.csv");
    let out = omnibeam(&["sweep", "--param", "b", "--values", "1,c", "--config", s(&cfg), "--out", s(&b_csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let bs: Vec<String> = lines(&b_csv)[1..].iter().map(|l| l.split(',').nth(3).unwrap().to_string()).collect();
    assert!(bs[..8].iter().all(|b| b == "1") && bs[8..].iter().all(|b| b == "0"));
}

#[test]
fn cdf_ends_at_one_for_every_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (csv, cdf) = (dir.path().join("r.csv"), dir.path().join("cdf.csv"));
    assert!(omnibeam(&["run", "--config", s(&cfg), "--out", s(&csv)]).status.success());
    let out = omnibeam(&["cdf", "--in", s(&csv), "--column", "jamming_power", "--out", s(&cdf)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = lines(&cdf);
    assert_eq!(rows[0], "scheme,value,fraction");
    for scheme in ["ios", "no_ris"] {
        let mine: Vec<(f64, f64)> = rows[1..]
            .iter()
            .filter(|l| l.starts_with(&format!("{scheme},")))
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                (f[1].parse().unwrap(), f[2].parse().unwrap())
            })
            .collect();
        assert_eq!(mine.len(), 4);
        assert!(mine.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 < w[1].1));
        assert_eq!(mine.last().unwrap().1, 1.0);
    }
}

#[test]
fn failures_exit_nonzero_with_a_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let bad_json = dir.path().join("bad.json");
    std::fs::write(&bad_json, r#"{"scenario": {"elements": 0}}"#).unwrap();
    let typo = dir.path().join("typo.json");
    std::fs::write(&typo, r#"{"scenario": {"elemnts": 4}}"#).unwrap();
    let empty_csv = dir.path().join("empty.csv");
    std::fs::write(&empty_csv, format!("{HEADER}\n")).unwrap();
    let missing = dir.path().join("missing.json");
    let out_csv = dir.path().join("o.csv");

    let cases: Vec<(Vec<&str>, &str)> = vec![
        (vec!["run", "--config", s(&missing)], "io"),
        (vec!["run", "--config", s(&bad_json)], "config"),
        (vec!["run", "--config", s(&typo)], "config"),
        (vec!["run", "--config", s(&cfg), "--scheme", "ios,mirror"], "unknown_scheme"),
        (vec!["run", "--config", s(&cfg), "--trials", "0"], "config"),
        (vec!["sweep", "--param", "M", "--values", "4,x", "--config", s(&cfg), "--out", s(&out_csv)], "config"),
        (vec!["cdf", "--in", s(&empty_csv), "--out", s(&out_csv)], "empty"),
        (vec!["cdf", "--in", s(&cfg), "--column", "tau", "--out", s(&out_csv)], "config"),
    ];
    for (args, kind) in cases {
        let out = omnibeam(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let line = error_line(&out);
        assert!(line.starts_with(&format!("error kind={kind} message=")), "{args:?}: {line}");
    }

    let out = omnibeam(&["run"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out).starts_with("error kind=usage"));
    assert!(omnibeam(&["--help"]).status.success());
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_omnibeam")).args(["run", "--config", s(&cfg)]).env("OMNIBEAM_THREADS", "0").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(error_line(&out).starts_with("error kind=config"));
}
