use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_searchmatch"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn two_firm_even_split_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(
        tmp.path(),
        &[
            "two-firm",
            "--out",
            "o",
            "-s",
            "mode=constant",
            "-s",
            "p_a=0.5",
            "-s",
            "r_f=1",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(tmp.path().join("o/two_firm.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "s_a").unwrap();
    let row = rdr.records().next().unwrap().unwrap();
    assert_eq!(row[col].parse::<f64>().unwrap(), 0.5);
    let m = manifest(&tmp.path().join("o"));
    assert_eq!(m["status"], "ok");
    assert_eq!(m["command"], "two-firm");
    assert_eq!(m["params"]["p_a"], "0.5");
}

#[test]
fn invalid_input_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let unknown = run(tmp.path(), &["two-firm", "--out", "o", "-s", "nonsense=1"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("nonsense"));

    let mismatch = run(tmp.path(), &["continuum", "--out", "o", "--preset", "fig1"]);
    assert_eq!(mismatch.status.code(), Some(2));

    let bad_value = run(tmp.path(), &["continuum", "--out", "o", "-s", "ell=block:0.6,0.4,2"]);
    assert_eq!(bad_value.status.code(), Some(2));

    std::fs::write(tmp.path().join("run.cfg"), "n = 64\nbogus = 3\n").unwrap();
    let cfg = run(tmp.path(), &["continuum", "--out", "o", "--config", "run.cfg"]);
    assert_eq!(cfg.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&cfg.stderr).contains("line 2"));
}

#[test]
fn overrides_apply_after_config_and_preset() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("run.cfg"), "# coarse\nn = 64\nr_f = 0.5\n").unwrap();
    let out = run(
        tmp.path(),
        &[
            "continuum",
            "--out",
            "o",
            "--preset",
            "fig7a",
            "--config",
            "run.cfg",
            "-s",
            "r_f=1,2",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&tmp.path().join("o"));
    assert_eq!(m["preset"], "fig7a");
    assert_eq!(m["params"]["alpha"], "0.8");
    assert_eq!(m["params"]["n"], "64");
    assert_eq!(m["params"]["r_f"], "1,2");
}

#[test]
fn simulation_is_reproducible_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let args = |o: &'static str, seed: &'static str| {
        vec![
            "simulate",
            "--out",
            o,
            "--seed",
            seed,
            "-s",
            "agents=2000",
            "-s",
            "burn_in=5",
            "-s",
            "horizon=15",
            "-s",
            "compare=false",
        ]
    };
    for (o, seed) in [("a", "7"), ("b", "7"), ("c", "8")] {
        let out = run(tmp.path(), &args(o, seed));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let read = |o: &str| std::fs::read_to_string(tmp.path().join(o).join("shares.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn synthetic_panel_round_trips_through_estimate() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = run(
        tmp.path(),
        &[
            "synth-panel",
            "--out",
            "p",
            "-s",
            "markets=4",
            "-s",
            "buyers=3000",
            "-s",
            "years=3",
        ],
    );
    assert!(synth.status.success(), "{}", String::from_utf8_lossy(&synth.stderr));
    let est = run(tmp.path(), &["estimate", "p/transactions.csv", "--out", "e"]);
    assert!(est.status.success(), "{}", String::from_utf8_lossy(&est.stderr));
    for f in [
        "alpha_by_market.csv",
        "alpha_by_year.csv",
        "diagnostics.json",
        "manifest.json",
    ] {
        assert!(tmp.path().join("e").join(f).exists(), "{f}");
    }
    let missing = run(tmp.path(), &["estimate", "nowhere.csv", "--out", "e2"]);
    assert_ne!(missing.status.code(), Some(0));
}

#[test]
fn presets_are_listed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["presets"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for name in ["fig1", "fig7c", "eff-a", "fig9", "fig10"] {
        assert!(text.contains(name), "{name}");
    }
}
