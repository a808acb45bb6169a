use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use slowenv::output::{read_csv, read_json_lines, ResultRow};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_slowenv"));
    c.env_remove("SLOWENV_SEED").env_remove("RUST_LOG");
    c
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn rows(path: &Path) -> Vec<ResultRow> {
    read_csv(fs::File::open(path).unwrap()).unwrap()
}

const PIECEWISE_RUN: &str = r#"{"version":1,"subcommand":"lyapunov",
  "noise":{"kind":"piecewise","m":4,"law":"rademacher","sigma":1.0},
  "tau":0.5,"n":64,"n_periods":400,"replicas":3,"scheme":"eigen","seed":7}"#;

#[test]
fn zero_noise_run_writes_one_zero_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.csv");
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"subcommand":"lyapunov","n_periods":200,"tau":0.5}"#,
    );
    let o = run(bin().arg("--config").arg(&cfg).arg("--out").arg(&out));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = rows(&out);
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].row_kind, "estimate");
    assert!(r[0].lambda_hat.unwrap().abs() < 1e-10);
    assert_eq!(r[0].stderr, Some(0.0));
    assert_eq!(r[0].n_grid, Some(256));
}

#[test]
fn output_is_bytewise_deterministic_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", PIECEWISE_RUN);
    let mut outputs = Vec::new();
    for (i, workers) in ["1", "1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("out{i}.csv"));
        let o = run(bin().arg("--config").arg(&cfg).arg("--out").arg(&out).args(["--workers", workers]));
        assert_eq!(o.status.code(), Some(0));
        outputs.push(fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn config_file_is_left_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", PIECEWISE_RUN);
    let before = fs::read(&cfg).unwrap();
    let o = run(bin().arg("--config").arg(&cfg).arg("--out").arg(dir.path().join("o.csv")));
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read(&cfg).unwrap(), before);
}

#[test]
fn configuration_errors_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| run(bin().args(args)).status.code();
    let path = |name: &str, json: &str| write_config(dir.path(), name, json).display().to_string();

    assert_eq!(code(&["--config", "/nonexistent/c.json"]), Some(2));
    assert_eq!(code(&["--config", &path("bad.json", "{\"subcommand\": ")]), Some(3));
    assert_eq!(code(&["--config", &path("type.json", r#"{"subcommand":"lyapunov","tau":"big"}"#)]), Some(3));
    assert_eq!(code(&["--config", &path("kapa.json", r#"{"subcommand":"lyapunov","kapa":1}"#)]), Some(4));
    assert_eq!(code(&["--config", &path("n1.json", r#"{"subcommand":"lyapunov","n":1}"#)]), Some(5));
    assert_eq!(code(&["--config", &path("none.json", r#"{"tau":1.0}"#)]), Some(3));
    assert_eq!(code(&["lyapunov", "--no-such-flag"]), Some(4));
    assert_eq!(code(&["lyapunov", "--tau=-0.5"]), Some(5));
    assert_eq!(code(&["lyapunov", "--scheme", "rk4"]), Some(5));
    assert_eq!(code(&["lyapunov", "--noise", r#"{"kind":"piecewise","m":4}"#]), Some(3));
    assert_eq!(code(&["lyapunov", "--noise", r#"{"kind":"zero","sigma":1}"#]), Some(4));
}

#[test]
fn numerical_breakdown_exits_one_with_a_diagnostics_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o.csv");
    // A potential of size 1e300 would need ~1e301 splitting sub-steps.
    let o = run(bin().args([
        "lyapunov",
        "--noise",
        r#"{"kind":"constant","law":"rademacher","sigma":1e300}"#,
        "--n-periods",
        "200",
        "--grid-n",
        "16",
        "--out",
    ])
    .arg(&out));
    assert_eq!(o.status.code(), Some(1));
    let r = rows(&out);
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].row_kind, "diagnostics");
    assert_eq!(r[0].status, "error");
    assert!(r[0].detail.contains("sub-steps"), "{}", r[0].detail);
}

#[test]
fn validate_reports_scheme_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v.csv");
    let o = run(bin().args(["validate", "--out"]).arg(&out));
    assert_eq!(o.status.code(), Some(0));
    let r = rows(&out);
    let by_scheme = |s: &str| r.iter().find(|row| row.scheme == s).unwrap();
    for s in ["strang_split", "crank_nicolson"] {
        let row = by_scheme(s);
        let delta: f64 = row.detail_value("delta").unwrap().parse().unwrap();
        assert!(delta <= 1e-6, "{s}: {delta}");
        assert_eq!(row.status, "ok");
    }
    let fk = by_scheme("feynman_kac");
    let sigmas: f64 = fk.detail_value("sigmas").unwrap().parse().unwrap();
    assert!(sigmas <= 3.0);
    assert_eq!(by_scheme("eigen_exact").value, by_scheme("strang_split").target);
}

#[test]
fn every_subcommand_emits_parseable_rows() {
    let dir = tempfile::tempdir().unwrap();
    let piecewise = r#"{"kind":"piecewise","m":4,"law":"rademacher","sigma":1.0}"#;
    let cases: Vec<(&str, Vec<&str>)> = vec![
        ("furstenberg", vec!["--noise", piecewise, "--grid-n", "32", "--scheme", "eigen", "--tau", "0.5"]),
        ("sweep", vec!["--grid-n", "32", "--taus", "0.1,1", "--n-periods", "200"]),
        ("spectrum", vec!["--noise", piecewise, "--grid-n", "32"]),
        ("bounds", vec!["--noise", piecewise, "--grid-n", "32", "--scheme", "eigen", "--tau", "5", "--n-periods", "200"]),
        ("sync", vec!["--noise", piecewise, "--grid-n", "32", "--tau", "0.5", "--replicas", "4", "--n-periods", "50"]),
        ("birkhoff", vec!["--noise", piecewise, "--grid-n", "32", "--tau", "0.1"]),
        ("chaos-const", vec!["--tau", "0.01"]),
    ];
    for (sub, args) in cases {
        let out = dir.path().join(format!("{sub}.csv"));
        let o = run(bin().arg(sub).args(&args).arg("--out").arg(&out));
        assert_eq!(o.status.code(), Some(0), "{sub}: {}", String::from_utf8_lossy(&o.stderr));
        let text = fs::read_to_string(&out).unwrap();
        assert!(!text.contains('"') && !text.contains('\r'), "{sub}");
        let r = rows(&out);
        assert!(!r.is_empty(), "{sub}");
        assert!(r.iter().all(|row| row.subcommand == sub && row.schema_version == 1));
        // Re-encoding the parsed rows reproduces the file exactly.
        let mut again = Vec::new();
        slowenv::output::write_csv(&mut again, &r).unwrap();
        assert_eq!(again, text.as_bytes(), "{sub}");
    }
}

#[test]
fn json_lines_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o.jsonl");
    let o = run(bin().args(["lyapunov", "--n-periods", "200", "--format", "json", "--out"]).arg(&out));
    assert_eq!(o.status.code(), Some(0));
    let r = read_json_lines(fs::File::open(&out).unwrap()).unwrap();
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].lambda_hat, Some(0.0));
}

#[test]
fn seed_comes_from_the_environment_only_when_unset() {
    let dir = tempfile::tempdir().unwrap();
    let no_seed = write_config(
        dir.path(),
        "a.json",
        r#"{"subcommand":"birkhoff","noise":{"kind":"piecewise","m":4,"law":"uniform","sigma":1.0},"n":32,"tau":0.1}"#,
    );
    let with_seed = write_config(
        dir.path(),
        "b.json",
        r#"{"subcommand":"birkhoff","noise":{"kind":"piecewise","m":4,"law":"uniform","sigma":1.0},"n":32,"tau":0.1,"seed":5}"#,
    );
    let seed_of = |cfg: &Path, env: Option<&str>| {
        let out = dir.path().join("s.csv");
        let mut c = bin();
        if let Some(v) = env {
            c.env("SLOWENV_SEED", v);
        }
        assert_eq!(run(c.arg("--config").arg(cfg).arg("--out").arg(&out)).status.code(), Some(0));
        let r = rows(&out);
        (r[0].seed, r[0].mu_hat_birkhoff)
    };
    assert_eq!(seed_of(&no_seed, None).0, Some(0));
    let from_env = seed_of(&no_seed, Some("5"));
    assert_eq!(from_env.0, Some(5));
    assert_eq!(seed_of(&with_seed, Some("9")), from_env);
    let flag = run(bin().arg("--config").arg(&with_seed).args(["--seed", "9"])).stdout;
    assert!(String::from_utf8(flag).unwrap().contains(",9,"));
}

#[test]
fn white_noise_grid_rule() {
    let o = run(bin().args(["sqrtlaw", "--noise", r#"{"kind":"white"}"#, "--grid-n", "128"]));
    assert_eq!(o.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&o.stderr).contains("use n >="));

    let o = run(bin().args([
        "lyapunov",
        "--noise",
        r#"{"kind":"white"}"#,
        "--grid-n",
        "32",
        "--tau",
        "0.01",
        "--n-periods",
        "200",
    ]));
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid too coarse"));
}
