use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_missfit"));
    c.env_remove("MISSFIT_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn missfit")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn generate_censoring_reports_half_missing_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let args = ["generate", "--mechanism", "censoring", "--p", "0.5", "--n", "1000", "--seed", "1", "--out"];
    let out = bin().args(args).arg(&a).output().unwrap();
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("n = 1000, d = 10"), "{stdout}");
    let fractions: Vec<f64> = stdout
        .lines()
        .filter(|l| l.starts_with("  x"))
        .filter_map(|l| l.split("missing ").nth(1))
        .map(|v| v.trim().parse().unwrap())
        .collect();
    assert_eq!(fractions.len(), 10);
    assert!(fractions.iter().all(|f| (f - 0.5).abs() < 0.01), "{fractions:?}");
    assert!(bin().args(args).arg(&b).status().unwrap().success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read(a.with_extension("json")).unwrap(), std::fs::read(b.with_extension("json")).unwrap());
    let sidecar: serde_json::Value = serde_json::from_slice(&std::fs::read(a.with_extension("json")).unwrap()).unwrap();
    assert_eq!(sidecar["generator"]["mechanism"]["kind"], "censoring");
    assert_eq!(sidecar["thresholds"].as_array().unwrap().len(), 10);
}

#[test]
fn environment_seed_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a.csv"), dir.path().join("b.csv"), dir.path().join("c.csv"));
    assert!(run(&["generate", "--n", "50", "--seed", "9", "--out", p(&a)]).status.success());
    let s = bin().args(["generate", "--n", "50", "--seed", "1", "--out", p(&b)]).env("MISSFIT_SEED", "9").status().unwrap();
    assert!(s.success());
    assert!(run(&["generate", "--n", "50", "--seed", "1", "--out", p(&c)]).status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    let bad = bin().args(["generate", "--n", "50", "--out", p(&c)]).env("MISSFIT_SEED", "x").output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_2_and_name_the_flag() {
    let out = run(&["generate", "--p", "1.5", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("--p"), "{}", text(&out.stderr));
    let out = run(&["generate", "--k", "11", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("--k"));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn fit_errors() {
    let out = run(&["fit", "--data", "/nonexistent/d.csv", "--method", "static", "--out", "m.json"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["fit", "--data", "d.csv", "--method", "magic", "--out", "m.json"]);
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    assert!(err.contains("joint_linear") && err.contains("cart_mia") && err.contains("affine_intercept"), "{err}");
}

#[test]
fn fit_predict_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    assert!(run(&["generate", "--n", "120", "--d", "4", "--r", "2", "--k", "3", "--seed", "5", "--out", p(&data)]).status.success());

    let model = dir.path().join("static.json");
    let out = run(&["fit", "--data", p(&data), "--method", "static", "--out", p(&model)]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("training R^2"));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&model).unwrap()).unwrap();
    assert_eq!(json["model"]["kind"], "adaptive");
    assert_eq!(json["model"]["expansion_size"], 4);

    let joint = dir.path().join("joint.json");
    assert!(run(&["fit", "--data", p(&data), "--method", "joint_linear", "--out", p(&joint)]).status.success());
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&joint).unwrap()).unwrap();
    assert_eq!(json["model"]["mu"].as_array().unwrap().len(), 4);

    let preds = dir.path().join("p.csv");
    let out = run(&["predict", "--model", p(&joint), "--data", p(&data), "--out", p(&preds)]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let body = std::fs::read_to_string(&preds).unwrap();
    assert_eq!(body.lines().next(), Some("prediction"));
    assert_eq!(body.lines().count(), 121);

    let out = run(&["inspect", "--model", p(&joint)]);
    assert!(out.status.success() && text(&out.stdout).contains("joint_linear"));
    let out = run(&["inspect", "--data", p(&data), "--target", "y"]);
    assert!(out.status.success() && text(&out.stdout).contains("distinct missingness patterns"));

    let oracle = dir.path().join("o.json");
    assert_eq!(run(&["fit", "--data", p(&data), "--method", "oracle", "--out", p(&oracle)]).status.code(), Some(2));
}

fn write_config(dir: &Path, name: &str, methods: &str, reps: usize) -> PathBuf {
    let path = dir.join(format!("{name}.json"));
    let cfg = format!(
        r#"{{"name":"{name}","source":{{"type":"synthetic","n":300,"d":5,"r":2,"k":3,"mechanism":{{"kind":"censoring","p":0.3}}}},
            "methods":[{methods}],"replications":{reps},"folds":3,"seed":11}}"#
    );
    std::fs::write(&path, cfg).unwrap();
    path
}

#[test]
fn shipped_config_row_count_and_dry_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = workspace().join("configs/censoring_linear.json");
    let cfg: serde_json::Value = serde_json::from_slice(&std::fs::read(&config).unwrap()).unwrap();
    let methods = cfg["methods"].as_array().unwrap().len();
    let reps = cfg["replications"].as_u64().unwrap() as usize;

    let out_csv = dir.path().join("plan.csv");
    let out = run(&["bench", "--config", p(&config), "--out", p(&out_csv), "--dry-run"]);
    assert!(out.status.success());
    assert!(text(&out.stdout).contains(&format!("tasks {}", methods * reps)), "{}", text(&out.stdout));
    assert!(!out_csv.exists());

    let results = dir.path().join("r.csv");
    let out = run(&["bench", "--config", p(&config), "--out", p(&results)]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let body = std::fs::read_to_string(&results).unwrap();
    assert_eq!(body.lines().next(), Some("dataset,method,setting,replication,metric,value,seconds"));
    assert_eq!(body.lines().count() - 1, methods * reps * 2);
}

#[test]
fn malformed_config_reports_json_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, r#"{"name":"x","source":{"type":"synthetic","n":100,"mechanism":{"kind":"mcar","p":0.5}},"methods":["static"],"folds":"five"}"#).unwrap();
    let out = run(&["bench", "--config", p(&path), "--dry-run"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("folds"), "{}", text(&out.stderr));
    std::fs::write(&path, r#"{"name":"x","source":{"type":"synthetic","n":-3,"mechanism":{"kind":"mcar","p":0.5}},"methods":["static"]}"#).unwrap();
    let out = run(&["bench", "--config", p(&path), "--dry-run"]);
    assert!(text(&out.stderr).contains("source.n"), "{}", text(&out.stderr));
}

#[test]
fn timings_fill_the_seconds_column() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "timed", r#""static""#, 2);
    let results = dir.path().join("r.csv");
    assert!(run(&["bench", "--config", p(&config), "--out", p(&results), "--timings"]).status.success());
    let body = std::fs::read_to_string(&results).unwrap();
    assert!(body.lines().skip(1).all(|l| !l.ends_with(',')), "{body}");
}

#[test]
fn interrupted_bench_resumes_to_identical_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "resume", r#""joint_linear","mean_linear","affine","cart_mia""#, 6);
    let fresh = dir.path().join("fresh.csv");
    assert!(run(&["bench", "--config", p(&config), "--out", p(&fresh), "--jobs", "2"]).status.success());
    let expected = std::fs::read(&fresh).unwrap();

    // kill a run once a few tasks have been written
    let partial = dir.path().join("partial.csv");
    let mut child = bin()
        .args(["bench", "--config", p(&config), "--out", p(&partial), "--jobs", "1"])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let start = Instant::now();
    loop {
        let lines = std::fs::read_to_string(&partial).map(|s| s.lines().count()).unwrap_or(0);
        if lines >= 5 || start.elapsed() > Duration::from_secs(120) || child.try_wait().unwrap().is_some() {
            break;
        }
        std::thread::sleep(Duration::from_millis(5));
    }
    let _ = child.kill();
    let _ = child.wait();
    let out = run(&["bench", "--config", p(&config), "--out", p(&partial), "--resume"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert_eq!(std::fs::read(&partial).unwrap(), expected);

    // a results file cut mid-line, as left by a crash during a write
    let cut = dir.path().join("cut.csv");
    let keep = expected.len() * 2 / 5;
    std::fs::write(&cut, &expected[..keep]).unwrap();
    let out = run(&["bench", "--config", p(&config), "--out", p(&cut), "--resume"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("resumed"), "{}", text(&out.stdout));
    assert_eq!(std::fs::read(&cut).unwrap(), expected);
}

#[test]
fn semisynthetic_generation() {
    let dir = tempfile::tempdir().unwrap();
    let (masked, full) = (dir.path().join("m.csv"), dir.path().join("f.csv"));
    let mut m = String::from("a,b,c,d,label\n");
    let mut f = m.clone();
    for i in 0..60 {
        let v: Vec<f64> = (0..4).map(|j| ((i * 7 + j * 13) % 11) as f64 - 5.0).collect();
        let hide_a = i % 3 == 0;
        let hide_b = v[1] > 2.0;
        let cell = |x: f64, h: bool| if h { String::new() } else { x.to_string() };
        m.push_str(&format!("{},{},{},{},1\n", cell(v[0], hide_a), cell(v[1], hide_b), v[2], v[3]));
        f.push_str(&format!("{},{},{},{},1\n", v[0], v[1], v[2], v[3]));
    }
    std::fs::write(&masked, m).unwrap();
    std::fs::write(&full, f).unwrap();
    for setting in ["mar", "nmar", "am"] {
        let out = dir.path().join(format!("{setting}.csv"));
        let o = run(&["generate", "--from", p(&masked), "--full", p(&full), "--drop", "label", "--setting", setting, "--k-missing", "1", "--seed", "3", "--out", p(&out)]);
        assert!(o.status.success(), "{setting}: {}", text(&o.stderr));
        let sidecar: serde_json::Value = serde_json::from_slice(&std::fs::read(out.with_extension("json")).unwrap()).unwrap();
        assert_eq!(sidecar["semisynthetic"]["setting"], setting);
        assert_eq!(sidecar["permutation_objective"].is_number(), setting == "am");
        assert_eq!(std::fs::read_to_string(&out).unwrap().lines().next(), Some("a,b,c,d,y"));
    }
    let o = run(&["generate", "--from", p(&masked), "--full", p(&full), "--drop", "label", "--setting", "mar", "--k-missing", "3", "--out", "x.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("--k-missing"), "{}", text(&o.stderr));
    let o = run(&["generate", "--from", p(&masked), "--out", "x.csv"]);
    assert_eq!(o.status.code(), Some(2));
}
