use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn medexplore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_medexplore")).args(args).output().unwrap()
}

fn explore_config(dir: &Path, name: &str, cycles: usize) -> String {
    let path = dir.join(name);
    fs::write(
        &path,
        format!(
            "schema_version = 1\n[campaign]\nseed = 3\ncycles = {cycles}\n[campaign.problem]\nkind = \"toy2d\"\n\
             [campaign.med]\nn = 8\nk = 2\n"
        ),
    )
    .unwrap();
    path.display().to_string()
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    assert_eq!(medexplore(&["design", "--n", "5"]).status.code(), Some(2));
    assert_eq!(medexplore(&["bench", "--p", "2", "--n", "10", "--out", &out]).status.code(), Some(2));
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "schema_version = 1\n[campaign]\nseeed = 1\n[campaign.problem]\nkind = \"toy2d\"\n").unwrap();
    let res = medexplore(&["explore", bad.to_str().unwrap(), "--out", &out]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("seeed"));
    assert_eq!(medexplore(&["explore", "/nonexistent/x.toml", "--out", &out]).status.code(), Some(2));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let full = d.join("full").display().to_string();
    let part = d.join("part").display().to_string();
    let three = explore_config(d, "three.toml", 3);
    let one = explore_config(d, "one.toml", 1);
    assert!(medexplore(&["explore", &three, "--out", &full]).status.success());
    assert!(medexplore(&["explore", &one, "--out", &part]).status.success());
    let ckpt = d.join("ckpt.json");
    fs::copy(d.join("part/checkpoint.json"), &ckpt).unwrap();
    assert!(medexplore(&["explore", &three, "--resume", ckpt.to_str().unwrap(), "--out", &part]).status.success());
    for f in ["evaluations.csv", "checkpoint.json", "report.json"] {
        assert_eq!(fs::read(d.join("full").join(f)).unwrap(), fs::read(d.join("part").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn bench_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    assert!(medexplore(&["bench", "--p", "4,5", "--n", "10,20", "--out", &out]).status.success());
    let mut rdr = csv::Reader::from_path(dir.path().join("timing.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[3].parse::<f64>().unwrap() >= 0.0));
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn compare_summary_rates_are_fractions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cmp.toml");
    fs::write(
        &cfg,
        "schema_version = 1\n[compare]\nreps = 3\n[compare.problem]\nkind = \"dtlz2_mod\"\np = 4\n\
         [compare.initial]\nn = 20\n[compare.med]\nn = 20\nk = 1\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    assert!(medexplore(&["compare", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.success());
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    let mut seen = 0;
    for (k, v) in summary.as_object().unwrap() {
        if k.ends_with("win_rate") {
            let r = v.as_f64().unwrap();
            assert!((0.0..=1.0).contains(&r), "{k} = {r}");
            seen += 1;
        }
    }
    assert_eq!(seen, 3);
    let rows = csv::Reader::from_path(out.join("comparison.csv")).unwrap().records().count();
    assert_eq!(rows, 3);
}
