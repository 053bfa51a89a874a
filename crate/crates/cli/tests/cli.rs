use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lbnpmle::io::Table;
use tempfile::TempDir;

const EXP_EXP: &str = r#"{"family":"exponential","params":{"rate":1.0}}"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lbnpmle"));
    c.env_remove("LBNPMLE_OUT_DIR");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin().current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn put(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn scenario(k: usize, scheme: &str, seed: u64) -> String {
    format!(r#"{{"lifetime":{EXP_EXP},"censoring":{EXP_EXP},"k":{k},"scheme":{scheme},"seed":{seed}}}"#)
}

fn stdout_value(out: &Output, key: &str) -> String {
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")).map(str::to_string))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
}

fn study_medians(path: &Path) -> Vec<(f64, f64, f64)> {
    let t = Table::read(path).unwrap();
    t.rows.iter().map(|r| (r[1], r[2], r[5])).collect()
}

#[test]
fn simulate_writes_a_seeded_cohort() {
    let dir = TempDir::new().unwrap();
    put(dir.path(), "s.json", &scenario(10, r#"{"type":"i"}"#, 5));
    run(dir.path(), &["simulate", "--scenario", "s.json", "--out", "a.csv"]);
    run(dir.path(), &["simulate", "--scenario", "s.json", "--out", "b.csv"]);
    let a = fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, fs::read_to_string(dir.path().join("b.csv")).unwrap());
    let t = Table::parse(&a).unwrap();
    assert_eq!(t.header, ["a", "v", "delta"]);
    assert_eq!(t.rows.len(), 10);
    assert_eq!(t.seed(), Some(5));
    run(dir.path(), &["simulate", "--scenario", "s.json", "--out", "c.csv", "--seed", "6"]);
    assert_ne!(a, fs::read_to_string(dir.path().join("c.csv")).unwrap());
}

#[test]
fn scheme_iii_with_all_censored_has_zero_residuals() {
    let dir = TempDir::new().unwrap();
    put(dir.path(), "s.json", &scenario(25, r#"{"type":"iii","m":0,"n":25}"#, 1));
    run(dir.path(), &["simulate", "--scenario", "s.json", "--out", "c.csv"]);
    let t = Table::read(dir.path().join("c.csv")).unwrap();
    assert_eq!(t.rows.len(), 25);
    assert!(t.rows.iter().all(|r| r[1] == 0.0 && r[2] == 0.0));
}

#[test]
fn uncensored_fit_is_the_empirical_distribution() {
    let dir = TempDir::new().unwrap();
    put(dir.path(), "c.csv", "a,v,delta\n0.5,0.5,1\n1,1,1\n0.25,1.75,1\n1.5,1.5,1\n");
    run(dir.path(), &["fit", "--in", "c.csv", "--out", "f.csv"]);
    let t = Table::read(dir.path().join("f.csv")).unwrap();
    assert_eq!(t.header, ["t", "mass_G", "G", "S_U"]);
    assert_eq!(t.column("t").unwrap(), [1.0, 2.0, 3.0]);
    let m = t.column("mass_G").unwrap();
    for (got, want) in m.iter().zip([0.25, 0.5, 0.25]) {
        assert!((got - want).abs() < 1e-10, "{m:?}");
    }
    let round = Table::parse(&fs::read_to_string(dir.path().join("f.csv")).unwrap()).unwrap();
    assert_eq!(round.to_csv_string().unwrap(), fs::read_to_string(dir.path().join("f.csv")).unwrap());
}

#[test]
fn fit_then_band_round_trip() {
    let dir = TempDir::new().unwrap();
    put(dir.path(), "s.json", &scenario(200, r#"{"type":"i"}"#, 3));
    run(dir.path(), &["simulate", "--scenario", "s.json", "--out", "c.csv"]);
    run(dir.path(), &["fit", "--in", "c.csv", "--out", "f.csv"]);
    let fit = fs::read_to_string(dir.path().join("f.csv")).unwrap();
    assert!(fit.starts_with("# seed=3\n"));
    run(dir.path(), &["band", "--in", "c.csv", "--fit", "f.csv", "--paths", "200", "--out", "b.csv"]);
    run(
        dir.path(),
        &["band", "--in", "c.csv", "--fit", "f.csv", "--mode", "oracle", "--scenario", "s.json", "--paths", "200", "--out", "o.csv"],
    );
    for name in ["b.csv", "o.csv"] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        let t = Table::parse(&text).unwrap();
        assert_eq!(t.to_csv_string().unwrap(), text);
        for r in &t.rows {
            assert!(r[3] <= r[1] && r[1] <= r[4] && r[6] <= r[5] && r[5] <= r[7]);
        }
    }
}

#[test]
fn check_master_is_tiny() {
    let dir = TempDir::new().unwrap();
    put(dir.path(), "s.json", &scenario(100, r#"{"type":"i"}"#, 0));
    let out = run(dir.path(), &["check-master", "--scenario", "s.json", "--k", "200", "--reps", "5"]);
    let r: f64 = stdout_value(&out, "max_residual").parse().unwrap();
    assert!(r <= 1e-8, "{r}");
}

#[test]
fn diag_reports_membership() {
    let dir = TempDir::new().unwrap();
    put(
        dir.path(),
        "c.json",
        r#"{"family":"zero_atom","params":{"beta":0.01,"base":{"family":"uniform","params":{"upper":1.0}}}}"#,
    );
    // F_C(t) = 0.01 + 0.99 t = 0.98 at t = 0.97/0.99
    let out = run(dir.path(), &["diag", "--cens", "c.json", "--t", &(0.97 / 0.99).to_string()]);
    assert_eq!(stdout_value(&out, "in_J"), "true");
    assert_eq!(stdout_value(&out, "beta"), "0.01");
    let lambda: f64 = stdout_value(&out, "lambda").parse().unwrap();
    assert!(lambda.is_finite() && lambda > 0.0);
}

#[test]
fn oracle_compare_agrees_on_tiny_cohorts() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["oracle-compare", "--reps", "10", "--seed", "2"]);
    let d: f64 = stdout_value(&out, "max_sup_distance").parse().unwrap();
    assert!(d <= 2e-3, "{d}");
}

fn study_spec(ks: &str, reps: usize, metric: &str) -> String {
    format!(r#"{{"scenarios":[{}],"ks":[{ks}],"replicates":{reps},"seed":11,"metrics":["{metric}"]}}"#, scenario(100, r#"{"type":"i"}"#, 0))
}

#[test]
fn sup_error_study_decreases_with_k() {
    let dir = TempDir::new().unwrap();
    put(dir.path(), "spec.json", &study_spec("100,400,1600", 60, "sup-error"));
    run(dir.path(), &["study", "--spec", "spec.json", "--out", "study.csv"]);
    let rows = study_medians(&dir.path().join("study.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.1 == 0.0));
    assert!(rows[0].2 > rows[1].2 && rows[1].2 > rows[2].2, "{rows:?}");
}

#[test]
fn coverage_study_is_near_nominal() {
    let dir = TempDir::new().unwrap();
    put(dir.path(), "spec.json", &study_spec("1000", 1000, "coverage"));
    run(dir.path(), &["study", "--spec", "spec.json", "--out", "study.csv"]);
    let t = Table::read(dir.path().join("study.csv")).unwrap();
    let mean = t.column("mean").unwrap()[0];
    assert!((0.92..=0.98).contains(&mean), "{mean}");
}

#[test]
fn naive_product_limit_median_is_biased_upward() {
    let dir = TempDir::new().unwrap();
    put(dir.path(), "spec.json", &study_spec("500", 40, "median-ratio"));
    run(dir.path(), &["study", "--spec", "spec.json", "--out", "study.csv"]);
    let median = study_medians(&dir.path().join("study.csv"))[0].2;
    assert!(median >= 1.5, "{median}");
}

#[test]
fn study_output_ignores_thread_count_and_honors_out_dir() {
    let dir = TempDir::new().unwrap();
    put(dir.path(), "spec.json", &study_spec("50,100", 12, "sup-error"));
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let env_dir = dir.path().join(format!("t{threads}"));
        let out = bin()
            .current_dir(dir.path())
            .env("RAYON_NUM_THREADS", threads)
            .env("LBNPMLE_OUT_DIR", &env_dir)
            .args(["study", "--spec", "spec.json"])
            .output()
            .unwrap();
        assert!(out.status.success());
        outputs.push(fs::read_to_string(env_dir.join("study.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert!(outputs[0].starts_with("# seed=11\n"));
}

#[test]
fn failures_exit_nonzero() {
    let dir = TempDir::new().unwrap();
    let missing = bin().current_dir(dir.path()).args(["fit", "--in", "nope.csv"]).output().unwrap();
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error:"));

    put(dir.path(), "bad.csv", "a,v,delta\n1,1,2\n");
    assert!(!bin().current_dir(dir.path()).args(["fit", "--in", "bad.csv"]).output().unwrap().status.success());

    put(dir.path(), "s.json", &scenario(300, r#"{"type":"i"}"#, 8));
    run(dir.path(), &["simulate", "--scenario", "s.json", "--out", "c.csv"]);
    let slow = bin()
        .current_dir(dir.path())
        .args(["fit", "--in", "c.csv", "--out", "f.csv", "--max-iter", "1"])
        .output()
        .unwrap();
    assert_eq!(slow.status.code(), Some(2));

    let band = bin()
        .current_dir(dir.path())
        .args(["band", "--in", "c.csv", "--fit", "f.csv", "--mode", "oracle"])
        .output()
        .unwrap();
    assert!(!band.status.success());
}
