use std::fs;
use std::path::Path;

use qtraj::cli::{dispatch, CONFIG_FILE, MANIFEST_FILE};
use qtraj::instrument::builtin;
use serde_json::Value;

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["qtraj"];
    argv.extend_from_slice(args);
    dispatch(argv)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn validate_reports_zero_defect() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("ad.json");
    builtin("AD", &[0.36]).unwrap().save(&file).unwrap();
    let before = fs::read(&file).unwrap();
    let out = dir.path().join("out");
    assert_eq!(run(&["validate", "--instrument", file.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
    let v = json(&out.join("validate.json"));
    assert!(v["report"]["stochasticity_defect"].as_f64().unwrap() < 1e-15);
    assert_eq!(fs::read(&file).unwrap(), before);
    let manifest = json(&out.join(MANIFEST_FILE));
    let inputs = manifest["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 1);
    assert_eq!(inputs[0]["sha256"].as_str().unwrap(), qtraj::cli::sha256_hex(&before));
    assert!(out.join(CONFIG_FILE).exists());
}

#[test]
fn non_stochastic_instrument_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.json");
    fs::write(
        &file,
        r#"{"label":"half","dim":2,"atoms":[{"weight":0.5,"matrix":[[[1,0],[0,0]],[[0,0],[1,0]]]}]}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    assert_eq!(run(&["validate", "--instrument", file.to_str().unwrap(), "--out", out.to_str().unwrap()]), 2);
}

#[test]
fn ndm_is_not_ergodic() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("ndm.json");
    builtin("NDM", &[0.3]).unwrap().save(&file).unwrap();
    let out = dir.path().join("out");
    assert_eq!(run(&["analyze-channel", "--instrument", file.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
    let v = json(&out.join("channel.json"));
    assert_eq!(v["erg"]["holds"], Value::Bool(false));
    assert!(v["period"].is_null());
}

#[test]
fn pndm_cycles_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(run(&["analyze-channel", "--builtin", "PNDM:0.3", "--out", out.to_str().unwrap()]), 0);
    let v = json(&out.join("channel.json"));
    assert_eq!(v["period"], 2);
    assert_eq!(v["cycles"].as_array().unwrap().len(), 2);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["simulate", "--no-such-flag"]), 1);
    assert_eq!(run(&["no-such-command"]), 1);
    assert_eq!(run(&["validate"]), 1);
    assert_eq!(run(&["replay", "/nonexistent/config.json"]), 1);
}

#[test]
fn replay_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    let args = [
        "--seed", "42", "simulate", "--builtin", "DR:0.3,1.0", "--steps", "200", "--traj", "50",
        "--track-product", "--observable", "diag:1,-1", "--out",
    ];
    let mut first: Vec<&str> = args.to_vec();
    first.push(a.to_str().unwrap());
    assert_eq!(run(&first), 0);
    let cfg = a.join(CONFIG_FILE);
    assert_eq!(run(&["replay", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()]), 0);
    let original = fs::read(a.join("trajectories.csv")).unwrap();
    assert_eq!(original, fs::read(b.join("trajectories.csv")).unwrap());
    assert_eq!(fs::read(a.join("summary.json")).unwrap(), fs::read(b.join("summary.json")).unwrap());

    let mut edited = json(&cfg);
    edited["global"]["seed"] = Value::from(43);
    let edited_path = dir.path().join("edited.json");
    fs::write(&edited_path, serde_json::to_string(&edited).unwrap()).unwrap();
    assert_eq!(run(&["replay", edited_path.to_str().unwrap(), "--out", c.to_str().unwrap()]), 0);
    let changed = fs::read_to_string(c.join("trajectories.csv")).unwrap();
    let original = String::from_utf8(original).unwrap();
    assert_eq!(changed.lines().next(), original.lines().next());
    assert_eq!(changed.lines().count(), original.lines().count());
    assert_ne!(changed, original);
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for t in ["1", "3"] {
        let out = dir.path().join(t);
        assert_eq!(
            run(&["--threads", t, "simulate", "--builtin", "NDM", "--steps", "100", "--traj", "40", "--out", out.to_str().unwrap()]),
            0
        );
        outputs.push(fs::read(out.join("trajectories.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn verdict_commands_write_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("coin");
    assert_eq!(
        run(&["berry-esseen", "--mode", "coin", "--n-list", "100,400", "--traj", "2000", "--out", out.to_str().unwrap()]),
        0
    );
    assert_eq!(json(&out.join("verdict.json"))["pass"], Value::Bool(true));

    let out = dir.path().join("uni");
    assert_eq!(
        run(&["berry-esseen", "--builtin", "UNI", "--observable", "const:0.4", "--n-list", "10,20", "--traj", "100", "--out", out.to_str().unwrap()]),
        2
    );
    assert_eq!(json(&out.join("verdict.json"))["details"]["degenerate"], Value::Bool(true));

    let out = dir.path().join("pur");
    assert_eq!(run(&["purification", "--builtin", "UNI", "--nmax", "6", "--mc-samples", "200", "--out", out.to_str().unwrap()]), 2);
    let csv = fs::read_to_string(out.join("purification.csv")).unwrap();
    assert!(csv.starts_with("n,g_exact,g_mc,stderr\n"));
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn scgf_and_rate_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    assert_eq!(
        run(&["scgf", "--builtin", "DR", "--mesh-size", "300", "--grid=-1:1:0.25", "--out", out.to_str().unwrap()]),
        0
    );
    let curve = fs::read_to_string(out.join("scgf.csv")).unwrap();
    assert_eq!(curve.lines().count(), 10);
    let rate = fs::read_to_string(out.join("rate.csv")).unwrap();
    for line in rate.lines().skip(1) {
        let v: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(v >= 0.0);
    }
    let out = dir.path().join("lyap");
    assert_eq!(
        run(&["scgf", "--builtin", "UNI", "--tilt", "lyap", "--mesh-size", "100", "--grid=-1:9:1", "--out", out.to_str().unwrap()]),
        1
    );
}

#[test]
fn degenerate_ldp_target_is_outside_the_domain() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ldp");
    assert_eq!(
        run(&[
            "ldp", "--builtin", "DR", "--observable", "const:0.4", "--mesh-size", "200", "--n-list", "20",
            "--traj", "200", "--out", out.to_str().unwrap(),
        ]),
        2
    );
    let v = json(&out.join("verdict.json"));
    let report = &v["details"]["report"];
    assert_eq!(report["in_domain"], Value::Bool(false));
    assert!(report["rate"].is_null());
    assert!((v["details"]["derivatives"]["d1"].as_f64().unwrap() - 0.4).abs() < 1e-8);
    let csv = fs::read_to_string(out.join("ldp.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().ends_with("true"));
}
