use std::path::Path;
use std::process::{Command, Output};

fn auxtde(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_auxtde"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn delay_of(csv: &str, channel: usize) -> f64 {
    let line = csv.lines().nth(channel + 1).unwrap();
    line.split(',').nth(1).unwrap().parse().unwrap()
}

#[test]
fn estimates_simulated_five_sample_delay() {
    let dir = tempfile::tempdir().unwrap();
    let sim = auxtde(dir.path(), &["simulate", "--delays", "0,5", "--snr", "20", "--seed", "1", "--output", "two_ch.wav"]);
    assert!(sim.status.success(), "{}", stderr(&sim));
    let truth: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("two_ch.wav.truth.json")).unwrap()).unwrap();
    assert!((truth["truth_samples"][1].as_f64().unwrap() - 5.0).abs() < 1e-9);

    let est = auxtde(dir.path(), &["estimate", "--input", "two_ch.wav", "--method", "auxtde", "--amp-mode", "unit"]);
    assert!(est.status.success(), "{}", stderr(&est));
    let out = stdout(&est);
    assert!(out.starts_with("channel,tau_samples,tau_seconds\n"));
    assert!((delay_of(&out, 1) - 5.0).abs() <= 0.01, "{out}");
}

#[test]
fn every_method_and_format() {
    let dir = tempfile::tempdir().unwrap();
    let sim = auxtde(dir.path(), &["simulate", "--delays", "0,2.5,-3.25", "--snr", "30", "--duration", "2", "--f64", "--output", "three.wav"]);
    assert!(sim.status.success(), "{}", stderr(&sim));
    for method in ["gcc", "parafit", "pw-auxtde", "auxtde"] {
        let o = auxtde(dir.path(), &["estimate", "--input", "three.wav", "--method", method, "--format", "json", "--ref", "1"]);
        assert!(o.status.success(), "{method}: {}", stderr(&o));
        let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        let tau = v["tau_samples"].as_array().unwrap();
        // Parafit on a white source carries a bias of about 0.1 sample at quarter-sample offsets.
        let tol = match method {
            "gcc" => 0.5,
            "parafit" => 0.15,
            _ => 0.05,
        };
        assert!((tau[0].as_f64().unwrap() + 2.5).abs() <= tol, "{method}: {v}");
        assert!((tau[2].as_f64().unwrap() + 5.75).abs() <= tol, "{method}: {v}");
        assert_eq!(v["reference"], 1);
    }
    for mode in ["freq", "shared"] {
        let o = auxtde(dir.path(), &["estimate", "--input", "three.wav", "--amp-mode", mode]);
        assert!(o.status.success(), "{mode}: {}", stderr(&o));
        assert!((delay_of(&stdout(&o), 1) - 2.5).abs() < 0.05);
    }
}

#[test]
fn csv_input_with_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let sim = auxtde(dir.path(), &["simulate", "--delays", "0,4", "--snr", "inf", "--duration", "1", "--output", "sig.csv"]);
    assert!(sim.status.success(), "{}", stderr(&sim));
    std::fs::write(dir.path().join("run.cfg"), "# pairwise baseline\nmethod = gcc\nframe = 1024\nhop = 512\n").unwrap();
    let o = auxtde(dir.path(), &["estimate", "--input", "sig.csv", "--config", "run.cfg"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(delay_of(&stdout(&o), 1), 4.0);

    // Flags win over the file.
    let o = auxtde(dir.path(), &["estimate", "--input", "sig.csv", "--config", "run.cfg", "--method", "pw-auxtde", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["method"], "PW-AuxTDE");
}

#[test]
fn one_channel_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("mono.csv"), "x\n0.1\n0.2\n0.3\n").unwrap();
    let o = auxtde(dir.path(), &["estimate", "--input", "mono.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("at least 2 channels required"), "{}", stderr(&o));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(auxtde(dir.path(), &["estimate", "--input", "missing.wav"]).status.code(), Some(2));
    assert_eq!(auxtde(dir.path(), &["estimate", "--method", "music"]).status.code(), Some(1));
    assert_eq!(auxtde(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(auxtde(dir.path(), &["--help"]).status.code(), Some(0));
    std::fs::write(dir.path().join("bad.cfg"), "iters_td = many\n").unwrap();
    std::fs::write(dir.path().join("x.csv"), "1,2\n3,4\n").unwrap();
    let o = auxtde(dir.path(), &["estimate", "--input", "x.csv", "--config", "bad.cfg"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("iters-td"));
    std::fs::write(dir.path().join("junk.wav"), "definitely not audio").unwrap();
    let o = auxtde(dir.path(), &["estimate", "--input", "junk.wav"]);
    assert_eq!(o.status.code(), Some(2));
    // Too short for one 4096-sample frame.
    let o = auxtde(dir.path(), &["estimate", "--input", "x.csv"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn bench_is_deterministic_across_runs_and_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &str, jobs: &str| {
        let o = auxtde(dir.path(), &["bench", "--preset", "smoke", "--trials", "3", "--seed", "7", "--jobs", jobs, "--output", out]);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(dir.path().join(out)).unwrap()
    };
    let a = run("a.csv", "1");
    let b = run("b.csv", "1");
    let c = run("c.csv", "2");
    assert_eq!(a, b);
    assert_eq!(a, c);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("method,M,snr_db,trials,rmse_samples,mid_samples,gross_errors\n"));
    assert_eq!(text.lines().count(), 7);
    assert!(text.contains("AuxTDE_unitAmp,4,20.000,3,"));
}

#[test]
fn trace_emits_iterations() {
    let dir = tempfile::tempdir().unwrap();
    auxtde(dir.path(), &["simulate", "--delays", "0,2.0996", "--snr", "10", "--output", "pair.wav"]);
    let o = auxtde(dir.path(), &["trace", "--input", "pair.wav", "--init-tau", "0,5", "--iters-outer", "1", "--iters-td", "40"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().next(), Some("iteration,objective,max_abs_delta_tau"));
    assert!(text.lines().count() > 3);

    // Noise updates change the objective itself; every other step must not lower it.
    let o = auxtde(dir.path(), &["trace", "--input", "pair.wav", "--init-tau", "0,5", "--format", "json"]);
    let entries: Vec<serde_json::Value> = serde_json::from_str(&stdout(&o)).unwrap();
    for w in entries.windows(2) {
        if w[1]["stage"] == "delay" || w[1]["stage"] == "amplitude" {
            let (a, b) = (w[0]["objective"].as_f64().unwrap(), w[1]["objective"].as_f64().unwrap());
            assert!(b >= a - 1e-10 * a.abs(), "{a} -> {b}");
        }
    }
}

#[test]
fn replay_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = auxtde(dir.path(), &["simulate", "--mics", "3", "--snr", "15", "--duration", "1", "--seed", "4", "--output", "room.wav"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = auxtde(dir.path(), &["estimate", "--input", "room.wav", "--output", "est.csv", "--format", "csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("est.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "estimate");
    assert_eq!(manifest["config"]["solver"]["frame"], 4096);
    assert_eq!(manifest["inputs"][0]["path"], "room.wav");

    let before = std::fs::read(dir.path().join("est.csv")).unwrap();
    std::fs::remove_file(dir.path().join("est.csv")).unwrap();
    let o = auxtde(dir.path(), &["replay", "--manifest", "est.csv.manifest.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(dir.path().join("est.csv")).unwrap(), before);

    let o = auxtde(dir.path(), &["replay", "--manifest", "room.wav.manifest.json"]);
    assert!(o.status.success(), "{}", stderr(&o));

    // A changed input is refused.
    let o = auxtde(dir.path(), &["simulate", "--mics", "3", "--snr", "15", "--duration", "1", "--seed", "5", "--output", "room.wav"]);
    assert!(o.status.success());
    let o = auxtde(dir.path(), &["replay", "--manifest", "est.csv.manifest.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("changed"));
}
