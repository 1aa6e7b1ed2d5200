use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"{"grid":{"n1":8,"n2":8},"n":30,"l":10}"#;

fn basmu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_basmu"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = basmu(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    basmu(args).status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Work {
    _tmp: TempDir,
    root: PathBuf,
}

impl Work {
    fn new() -> Self {
        let tmp = TempDir::new().unwrap();
        let root = tmp.path().to_path_buf();
        fs::write(root.join("small.json"), SMALL).unwrap();
        Work { _tmp: tmp, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn simulate(&self, case: &str, seed: &str) -> PathBuf {
        let dir = self.path(&format!("data{case}_{seed}"));
        let cfg = self.path("small.json");
        ok(&["simulate", "--case", case, "--seed", seed, "--config", s(&cfg), "--out", s(&dir)]);
        dir
    }
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_writes_every_artifact() {
    let w = Work::new();
    let dir = w.simulate("1", "4");
    for f in ["m.csv", "x.csv", "c.csv", "y.csv", "truth.json", "basis.kbas", "config.json"] {
        assert!(dir.join(f).exists(), "{f} missing");
    }
    let m = fs::read_to_string(dir.join("m.csv")).unwrap();
    assert_eq!(m.lines().count(), 30);
    assert_eq!(m.lines().next().unwrap().split(',').count(), 64);
    let cfg = json(&dir.join("config.json"));
    assert_eq!(cfg["l"], 10);
    assert_eq!(cfg["seed"], 4);
}

#[test]
fn simulate_is_reproducible_by_seed() {
    let w = Work::new();
    let a = w.simulate("2", "9");
    let b = w.path("again");
    ok(&["simulate", "--case", "2", "--seed", "9", "--config", s(&w.path("small.json")), "--out", s(&b)]);
    for f in ["m.csv", "y.csv", "truth.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = w.simulate("2", "10");
    assert_ne!(fs::read(a.join("y.csv")).unwrap(), fs::read(c.join("y.csv")).unwrap());
}

#[test]
fn basis_subcommand_matches_simulated_basis() {
    let w = Work::new();
    let dir = w.simulate("1", "0");
    let out = w.path("b.kbas");
    let text = ok(&["basis", "--config", s(&w.path("small.json")), "--out", s(&out)]);
    assert!(text.contains("p = 64, L = 10"), "{text}");
    assert_eq!(fs::read(out).unwrap(), fs::read(dir.join("basis.kbas")).unwrap());
}

#[test]
fn full_pipeline_runs_end_to_end() {
    let w = Work::new();
    let data = w.simulate("1", "3");
    let basis = data.join("basis.kbas");
    let med = w.path("med");
    ok(&["fit-mediator", "--data", s(&data), "--basis", s(&basis), "--iters", "200", "--seed", "1", "--out", s(&med)]);
    let etahat = med.join("etahat.csv");
    let eta = fs::read_to_string(&etahat).unwrap();
    assert_eq!(eta.lines().count(), 30);
    assert_eq!(eta.lines().next().unwrap().split(',').count(), 64);

    let bima = w.path("bima");
    ok(&["fit-outcome", "--model", "bima", "--data", s(&data), "--basis", s(&basis), "--iters", "300", "--out", s(&bima)]);
    let basmu_dir = w.path("basmu");
    ok(&[
        "fit-outcome", "--model", "basmu", "--data", s(&data), "--basis", s(&basis), "--etahat", s(&etahat),
        "--iters", "300", "--out", s(&basmu_dir),
    ]);

    for (name, outc) in [("eb", &bima), ("es", &basmu_dir)] {
        let eff = w.path(name);
        let text = ok(&[
            "effects", "--med", s(&med), "--outcome", s(outc), "--basis", s(&basis), "--level", "0.9", "--out", s(&eff),
        ]);
        assert!(text.starts_with("NIE"), "{text}");
        let v = json(&eff.join("effects.json"));
        let lo = v["scalar_nie_lower"].as_f64().unwrap();
        let hi = v["scalar_nie_upper"].as_f64().unwrap();
        let mean = v["scalar_nie_mean"].as_f64().unwrap();
        assert!(lo <= mean && mean <= hi);
        assert_eq!(v["level"].as_f64().unwrap(), 0.9);
        assert!(eff.join("effects.csv").exists());
    }

    let report = w.path("bias.json");
    ok(&[
        "bias-limit", "--truth", s(&data.join("truth.json")), "--basis", s(&basis), "--etahat", s(&etahat),
        "--outcome", s(&basmu_dir), "--out", s(&report),
    ]);
    let v = json(&report);
    assert_eq!(v["limit_vector"].as_array().unwrap().len(), 10);
    assert_eq!(v["basmu_limit_vector"].as_array().unwrap().len(), 10);
    let shrink = v["shrinkage_factor"].as_f64().unwrap();
    assert!(shrink > 0.0 && shrink <= 1.0);
    assert!(v["empirical_bias_by_n"].as_array().unwrap().is_empty());
}

#[test]
fn bias_limit_runs_the_empirical_trend() {
    let w = Work::new();
    let data = w.simulate("3", "0");
    let report = w.path("bias.json");
    ok(&[
        "bias-limit", "--truth", s(&data.join("truth.json")), "--basis", s(&data.join("basis.kbas")),
        "--ns", "20,40", "--reps", "2", "--iters", "200", "--case", "3", "--config", s(&w.path("small.json")),
        "--out", s(&report),
    ]);
    let v = json(&report);
    let rows = v["empirical_bias_by_n"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(v["basmu_limit_vector"].is_null());
}

#[test]
fn bench_is_deterministic_and_summarizes() {
    let w = Work::new();
    let cfg = w.path("small.json");
    let run = |name: &str, jobs: &str| {
        let out = w.path(name);
        ok(&[
            "bench", "--case", "1", "--config", s(&cfg), "--reps", "2", "--jobs", jobs, "--seed", "7",
            "--mediator-iters", "100", "--outcome-iters", "150", "--out", s(&out),
        ]);
        out
    };
    let a = run("a.json", "1");
    let b = run("b.json", "2");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let mut timings = a.clone().into_os_string();
    timings.push(".timings.json");
    assert!(Path::new(&timings).exists());

    let v = json(&a);
    assert_eq!(v["completed"], 2);
    assert_eq!(v["methods"].as_array().unwrap().len(), 2);

    let csv = w.path("table.csv");
    let text = ok(&["summarize", s(&a), "--effect", "nde", "--out", s(&csv)]);
    assert!(text.contains("bima") && text.contains("basmu"), "{text}");
    let rows = fs::read_to_string(csv).unwrap();
    assert!(rows.lines().count() >= 3, "{rows}");
}

#[test]
fn argument_errors_exit_with_two() {
    let w = Work::new();
    let missing = w.path("nowhere");
    assert_eq!(code(&["simulate", "--case", "9", "--out", s(&w.path("x"))]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["fit-outcome", "--model", "ols", "--data", "d", "--basis", "b", "--out", "o"]), 2);

    let bad = w.path("bad.json");
    fs::write(&bad, r#"{"sigma_q": 1.0}"#).unwrap();
    assert_eq!(code(&["simulate", "--config", s(&bad), "--out", s(&w.path("y"))]), 2);
    fs::write(&bad, r#"{"sigma_m": -1.0}"#).unwrap();
    assert_eq!(code(&["simulate", "--config", s(&bad), "--out", s(&w.path("y"))]), 2);

    assert_eq!(
        code(&["fit-mediator", "--data", s(&missing), "--basis", s(&missing.join("b")), "--out", s(&w.path("m"))]),
        2
    );

    let data = w.simulate("1", "0");
    assert_eq!(
        code(&[
            "fit-outcome", "--model", "basmu", "--data", s(&data), "--basis", s(&data.join("basis.kbas")),
            "--out", s(&w.path("o")),
        ]),
        2
    );
    assert_eq!(code(&["summarize", s(&data.join("truth.json")), "--effect", "total"]), 2);
}

#[test]
fn fit_errors_exit_with_three() {
    let w = Work::new();
    let data = w.simulate("1", "0");
    let one = w.path("one");
    fs::create_dir_all(&one).unwrap();
    for f in ["m.csv", "x.csv", "c.csv", "y.csv"] {
        let text = fs::read_to_string(data.join(f)).unwrap();
        fs::write(one.join(f), format!("{}\n", text.lines().next().unwrap())).unwrap();
    }
    let out = basmu(&[
        "fit-mediator", "--data", s(&one), "--basis", s(&data.join("basis.kbas")), "--iters", "10",
        "--out", s(&w.path("m")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fit error"));
}
