use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dslda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dslda")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn solve(matrix: &str, vector: &str, lambda: &str) -> (Output, serde_json::Value) {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.txt", matrix);
    let b = write(dir.path(), "b.txt", vector);
    let out = dslda(&["solve", "--matrix", &a, "--vector", &b, "--lambda", lambda]);
    let json = serde_json::from_str(&stdout(&out)).unwrap_or(serde_json::Value::Null);
    (out, json)
}

#[test]
fn solve_soft_thresholds_on_identity() {
    let (out, json) = solve("1 0 0\n0 1 0\n0 0 1\n", "1, -0.2, 0", "0.5");
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json["status"], "Optimal");
    let beta: Vec<f64> = serde_json::from_value(json["beta"].clone()).unwrap();
    for (got, want) in beta.iter().zip([0.5, 0.0, 0.0]) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn solve_large_lambda_gives_zero() {
    let (out, json) = solve("2,1\n1,2\n", "0.3,-0.4", "0.4");
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json["status"], "Optimal");
    assert_eq!(json["beta"], serde_json::json!([0.0, 0.0]));
}

#[test]
fn solve_reports_infeasibility() {
    let (out, json) = solve("1 1\n1 1\n", "1 0", "0");
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json["status"], "Infeasible");
}

#[test]
fn exit_codes_for_bad_input() {
    let missing = dslda(&["solve", "--matrix", "/nonexistent/a", "--vector", "/nonexistent/b", "--lambda", "1"]);
    assert_eq!(missing.status.code(), Some(3));
    assert_eq!(dslda(&["solve", "--bogus"]).status.code(), Some(1));
    assert_eq!(dslda(&[]).status.code(), Some(1));
    assert_eq!(dslda(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.txt", "1 x\n");
    let b = write(dir.path(), "b.txt", "1\n");
    let bad = dslda(&["solve", "--matrix", &a, "--vector", &b, "--lambda", "1"]);
    assert_eq!(bad.status.code(), Some(3));
    let a = write(dir.path(), "a2.txt", "1\n");
    let neg = dslda(&["solve", "--matrix", &a, "--vector", &b, "--lambda", "-1"]);
    assert_eq!(neg.status.code(), Some(1));
}

fn strip_timing(csv: &str) -> String {
    csv.lines()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            f[..f.len() - 5].join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn simulate(threads: &str, extra: &[&str]) -> String {
    let mut args = vec![
        "--threads", threads, "simulate", "--d", "20", "--N", "400", "--seed", "5",
        "--test-per-class", "20",
    ];
    args.extend_from_slice(extra);
    let out = dslda(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    stdout(&out)
}

#[test]
fn simulate_is_reproducible_across_thread_counts() {
    let sweep = ["--m", "1,2,4", "--reps", "2"];
    let a = simulate("1", &sweep);
    let b = simulate("3", &sweep);
    let c = simulate("1", &sweep);
    assert_eq!(a.lines().count(), 1 + 3 * 2 * 3);
    assert_eq!(strip_timing(&a), strip_timing(&b));
    assert_eq!(strip_timing(&a), strip_timing(&c));
    assert!(a.lines().next().unwrap().starts_with("method,m,N,d,rep,err_l1,err_l2,err_linf,f1,"));
}

#[test]
fn fixed_n_mode_scales_total() {
    let csv = simulate("0", &["--mode", "fixed_n", "--n", "200", "--m", "5", "--reps", "1"]);
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[col("N")], "1000");
        assert_eq!(f[col("n")], "200");
        assert_eq!(f[col("status")], "ok");
    }
}

#[test]
fn simulate_writes_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("runs.csv");
    let out = dslda(&[
        "simulate", "--d", "15", "--N", "200", "--m", "1", "--out", path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 4);
}

#[test]
fn bench_has_one_row_per_m() {
    let out = dslda(&["bench", "--d", "20", "--N", "800", "--m", "1,2,4"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "m,time_ms");
    let ms: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ms, ["1", "2", "4"]);
}

fn site_csv(seed: u64, rows: usize) -> String {
    let mut s = String::from("a,b,g,y\n");
    let mut state = seed;
    for i in 0..rows {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let u = (state >> 11) as f64 / (1u64 << 53) as f64;
        let class = if i % 2 == 0 { 1 } else { 2 };
        let shift = if class == 1 { 1.0 } else { -1.0 };
        let b = if i % 7 == 0 { "?".to_string() } else { format!("{:.3}", u * 2.0 - shift) };
        let g = ["x", "y", "z"][i % 3];
        s.push_str(&format!("{:.3},{b},{g},{class}\n", u + shift));
    }
    s
}

#[test]
fn real_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let schema = write(
        dir.path(),
        "schema.json",
        r#"[{"name":"a","kind":"numeric"},{"name":"b","kind":"numeric"},
            {"name":"g","kind":"categorical","categories":["x","y","z"]},{"name":"y","kind":"label"}]"#,
    );
    let s1 = write(dir.path(), "s1.csv", &site_csv(1, 60));
    let s2 = write(dir.path(), "s2.csv", &site_csv(2, 60));
    let data = format!("{s1},{s2}");
    let run = || {
        let out = dslda(&["real", "--data", &data, "--schema", &schema, "--reps", "1", "--folds", "3", "--seed", "4"]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        stdout(&out)
    };
    let first = run();
    assert_eq!(first, run());
    assert_eq!(first.lines().count(), 4);
    assert!(first.starts_with("method,mean,sd\ndistributed,"));

    let bad = write(dir.path(), "bad.csv", "a,b,g,y\n1,2,w,1\n");
    let out = dslda(&["real", "--data", &bad, "--schema", &schema, "--reps", "1"]);
    assert_eq!(out.status.code(), Some(3));
}
