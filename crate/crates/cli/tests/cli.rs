use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

const PLATEN: &str = "
[model]
name = platen
alpha = 1
beta = 1
sigma = 1
xi = 0.05
lambda = 1
eta = 0.000314
y0 = 0.1

[quantizer]
levels = 23, 7, 3, 2

[scheme]
method = fq
steps = 100

[market]
s0 = 2
rate = 0.03
horizon = 1
";

const GUYON: &str = "
[model]
name = guyon
beta0 = 0.05
beta1 = 0.1
beta2 = 0.5
lambda1 = 2
lambda2 = 6
r10 = 0
r20 = 0.04

[quantizer]
budget = 96

[scheme]
method = fq
steps = 50

[market]
horizon = 1
";

const BLANC: &str = "
[model]
name = blanc
beta0 = 0.04
beta1 = 0.1
beta2 = 0.5
alpha = 0.1
lambda1 = 2
lambda2 = 1
r10 = 0.3
r20 = 0.04

[quantizer]
budget = 32

[scheme]
method = rmq
steps = 50

[market]
horizon = 1
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pathquant"));
    c.env_remove("PATHQUANT_CACHE");
    c
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.ini");
    fs::write(&path, text).unwrap();
    path
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files_matching(dir: &Path, prefix: &str) -> usize {
    fs::read_dir(dir).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with(prefix)).count()
}

#[test]
fn grids_are_cached() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("grids");
    let first = run(bin().args(["grids", "--levels", "1..32", "--out"]).arg(&dir));
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    assert_eq!(files_matching(&dir, "quantizer1d_"), 32);
    assert!(stderr(&first).contains("32 computed"));
    let second = run(bin().args(["grids", "--levels", "1..32", "--out"]).arg(&dir));
    assert_eq!(code(&second), 0);
    assert!(stderr(&second).contains("0 computed, 32 cached"), "{}", stderr(&second));

    let env = tmp.path().join("env");
    let o = run(bin().args(["grids", "--levels", "3"]).env("PATHQUANT_CACHE", &env));
    assert_eq!(code(&o), 0);
    assert_eq!(files_matching(&env, "quantizer1d_0003"), 1);
}

#[test]
fn grids_into_unwritable_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("plain");
    fs::write(&file, "x").unwrap();
    let o = run(bin().args(["grids", "--levels", "1..2", "--out"]).arg(file.join("sub")));
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).starts_with("error:"));
}

#[test]
fn quantize_platen_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), PLATEN);
    let out = tmp.path().join("out");
    let cache = tmp.path().join("cache");
    let o = run(bin().arg("quantize").arg("--config").arg(&cfg).arg("--out").arg(&out).env("PATHQUANT_CACHE", &cache));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(out.join("bundle.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config-hash: "));
    assert_eq!(lines.next().unwrap(), "t,index,weight,y,y_g1,y_g2,y_h");
    let mut indices: Vec<usize> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(indices.len(), 966 * 101);
    indices.dedup();
    assert_eq!(indices.len(), 966);
    assert_eq!(files_matching(&cache, "quantizer1d_"), 4);
    assert!(!out.join(".pathquant.lock").exists());
}

#[test]
fn guyon_outside_positivity_condition_warns() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), GUYON);
    let o = run(bin().arg("quantize").arg("--config").arg(&cfg).arg("--out").arg(tmp.path().join("out")));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("warning: lambda2"), "{}", stderr(&o));
}

#[test]
fn missing_parameter_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &PLATEN.replace("xi = 0.05\n", ""));
    let o = run(bin().arg("quantize").arg("--config").arg(&cfg).arg("--out").arg(tmp.path().join("out")));
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("model.xi"), "{}", stderr(&o));

    let o = run(bin().arg("price").arg("--config").arg(tmp.path().join("absent.ini")));
    assert_eq!(code(&o), 2);
}

#[test]
fn feller_violation_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &PLATEN.replace("alpha = 1", "alpha = 0.1"));
    let o = run(bin().arg("quantize").arg("--config").arg(&cfg).arg("--out").arg(tmp.path().join("out")));
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn table_sweep_prices() {
    let tmp = tempfile::tempdir().unwrap();
    let text = PLATEN.replace("lambda = 1", "lambda = 1, 2, 3").replace("horizon = 1", "horizon = 0.5, 1").replace(
        "method = fq",
        "method = fq, mc\npaths = 2000\nseed = 5",
    );
    let cfg = write_config(tmp.path(), &text);
    let price = |out: &str| {
        let o = run(bin().arg("price").arg("--config").arg(&cfg).arg("--out").arg(tmp.path().join(out)));
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read(tmp.path().join(out).join("prices.csv")).unwrap()
    };
    let a = price("a");
    let text = String::from_utf8(a.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[1], "method,lambda,T,N,n,value,ci_low,ci_high,runtime_s");
    let rows = &lines[2..];
    assert_eq!(rows.len(), 12);
    assert_eq!(rows.iter().filter(|r| r.starts_with("fq,")).count(), 6);
    assert_eq!(rows.iter().filter(|r| r.starts_with("mc,")).count(), 6);
    for r in rows {
        let value: f64 = r.split(',').nth(5).unwrap().parse().unwrap();
        assert!((0.85..1.05).contains(&value), "{r}");
    }
    assert_eq!(files_matching(&tmp.path().join("a"), "terminal_"), 6);
    assert_eq!(price("b"), a);

    let o = run(bin().arg("price").arg("--config").arg(&cfg).arg("--out").arg(tmp.path().join("c")).args(["--seed", "6"]));
    assert_eq!(code(&o), 0);
    assert_ne!(fs::read(tmp.path().join("c").join("prices.csv")).unwrap(), a);
}

#[test]
fn fq_price_runs_quickly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), PLATEN);
    let start = Instant::now();
    let o = run(bin().arg("price").arg("--config").arg(&cfg).arg("--out").arg(tmp.path().join("out")));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(start.elapsed() < Duration::from_secs(60));
}

#[test]
fn busy_output_dir_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), PLATEN);
    let out = tmp.path().join("out");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".pathquant.lock"), "1").unwrap();
    let o = run(bin().arg("price").arg("--config").arg(&cfg).arg("--out").arg(&out));
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("in use"));
}

#[test]
fn rmq_grids_and_expectation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), BLANC);
    let out = tmp.path().join("out");
    let o = run(bin().arg("rmq").arg("--config").arg(&cfg).arg("--out").arg(&out).args(["--expect", "y", "--at", "0"]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(files_matching(&out, "rmq_grid_"), 51);
    let y0: f64 = String::from_utf8(o.stdout).unwrap().trim().parse().unwrap();
    assert!((y0 - (0.04 + 0.1 * 0.04 + 0.5 * 0.04)).abs() < 1e-15);
    let last = fs::read_to_string(out.join("rmq_grid_050.csv")).unwrap();
    assert_eq!(last.lines().count(), 2 + 32);
    assert_eq!(last.lines().nth(1), Some("k,j,weight,y,y_g1,y_g2,y_h1,y_h2"));
    assert!(last.lines().nth(2).unwrap().starts_with("50,0,"));
    let transitions = fs::read_to_string(out.join("rmq_transitions.csv")).unwrap();
    assert_eq!(transitions.lines().nth(1), Some("k,from,to,prob"));
}

#[test]
fn rmq_rejects_nonpositive_floor() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &BLANC.replace("beta0 = 0.04", "beta0 = 0").replace("r20 = 0.04", "r20 = 0"));
    let o = run(bin().arg("rmq").arg("--config").arg(&cfg).arg("--out").arg(tmp.path().join("out")));
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}
