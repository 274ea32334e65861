use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use snnkit::Network;
use snnkit_cli::io::{checkpoint_files, read_params, read_raster, RasterHeader};
use snnkit_cli::RunConfig;

fn run(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_snnkit"));
    cmd.args(args).env_remove("SNNKIT_OUT").env_remove("SNNKIT_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn config(dir: &Path, json: serde_json::Value) -> String {
    let path = dir.join("cfg.json");
    fs::write(&path, json.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn small() -> serde_json::Value {
    serde_json::json!({"randman": {"classes": 3, "samples_per_class": 6, "timesteps": 12, "units": 5}})
}

#[test]
fn randman_gen_exports_and_echoes_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        tmp.path(),
        serde_json::json!({"dataset": {"randman": {"classes": 2, "samples_per_class": 5, "manifold_seed": 7, "sample_seed": 8}}}),
    );
    let out = tmp.path().join("raster");
    let o = run(&["randman-gen", "--config", &cfg, "--out", p(&out)], &[]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("\"manifold\": 7") && text.contains("\"sample\": 8"), "{text}");
    assert!(text.contains("verify: 10/10 samples"));
    let (header, raster): (RasterHeader, _) = read_raster(&out).unwrap();
    assert_eq!((header.C, header.M, header.T, header.count), (2, 20, 50, 10));
    assert_eq!(fs::metadata(out.join("raster.bin")).unwrap().len(), 10 * 50 * 20);
    assert_eq!(raster.labels.len(), 10);
    assert_eq!(fs::read_to_string(out.join("labels.csv")).unwrap().lines().count(), 11);
}

#[test]
fn training_on_an_exported_raster() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let gen_cfg = config(tmp.path(), serde_json::json!({"dataset": small()}));
    assert!(run(&["randman-gen", "--config", &gen_cfg, "--out", p(&data)], &[]).status.success());
    let cfg = config(
        tmp.path(),
        serde_json::json!({"dataset": {"raster": p(&data)}, "run": {"epochs": 2, "batch_size": 4}}),
    );
    let out = tmp.path().join("run");
    let o = run(&["train", "--config", &cfg, "--out", p(&out)], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 3);
    for (e, l) in lines.lines().enumerate() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert_eq!(v["epoch"], e);
        for key in ["loss", "accuracy", "wall_ms"] {
            assert!(v.get(key).is_some());
        }
    }
    assert_eq!(checkpoint_files(&out.join("checkpoints")).unwrap().len(), 3);
    let run_json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run_json["provenance"]["tool"], "snnkit");
    assert_eq!(run_json["provenance"]["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn online_bptt_is_rejected_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), serde_json::json!({"learning": {"mode": "online", "loss": "online"}}));
    let out = tmp.path().join("run");
    let o = run(&["train", "--config", &cfg, "--out", p(&out)], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("BPTT is not an online estimator"));
    assert!(!out.exists());
}

#[test]
fn topology_and_loss_mismatches_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        tmp.path(),
        serde_json::json!({"learning": {"estimator": "rtrl", "mode": "deferred"}, "dataset": small()}),
    );
    assert_eq!(run(&["train", "--config", &cfg, "--out", p(tmp.path())], &[]).status.code(), Some(2));
    let cfg = config(
        tmp.path(),
        serde_json::json!({
            "network": {"layers": [{"type": "affine", "out_features": 4}, {"type": "lif"},
                                   {"type": "affine", "out_features": 3}, {"type": "lif"}],
                        "cat": {"2": [0]}},
            "learning": {"estimator": "ostl", "mode": "online", "loss": "online"},
            "dataset": small()
        }),
    );
    let o = run(&["train", "--config", &cfg, "--out", p(tmp.path())], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("OSTL requires a layer chain"));
}

#[test]
fn config_and_io_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), serde_json::json!({"run": {"epochz": 1}}));
    assert_eq!(run(&["train", "--config", &cfg], &[]).status.code(), Some(2));
    let missing = tmp.path().join("nope.json");
    assert_eq!(run(&["train", "--config", p(&missing)], &[]).status.code(), Some(3));
    let cfg = config(tmp.path(), serde_json::json!({"dataset": {"raster": p(&tmp.path().join("absent"))}}));
    assert_eq!(run(&["eval", "--config", &cfg, "--out", p(tmp.path())], &[]).status.code(), Some(3));
    let cfg = config(tmp.path(), serde_json::json!({"dataset": small()}));
    let o = run(&["landscape", "--config", &cfg, "--out", p(tmp.path()), "--resolution", "4"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_epochs_writes_initial_params_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), serde_json::json!({"dataset": small(), "run": {"epochs": 0, "seed": 3}}));
    let out = tmp.path().join("run");
    assert!(run(&["train", "--config", &cfg, "--out", p(&out)], &[]).status.success());
    let c = RunConfig::load(Path::new(&cfg)).unwrap();
    let net = Network::new(c.network.clone(), 5).unwrap();
    let (header, params) = read_params(&out.join("params.bin"), &net).unwrap();
    assert_eq!(header.epoch, Some(0));
    assert_eq!(params, net.init_params(3));
    assert_eq!(fs::read_to_string(out.join("metrics.jsonl")).unwrap().lines().count(), 1);
}

#[test]
fn divergence_exits_4_and_keeps_last_good() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        tmp.path(),
        // A near-unit leak integrates the first huge bias step past f64::MAX.
        serde_json::json!({
            "network": {"layers": [{"type": "affine", "out_features": 8}, {"type": "lif", "config": {"tau_init": 30.0}},
                                   {"type": "affine", "out_features": 3}, {"type": "lif", "config": {"tau_init": 30.0}}]},
            "optimizer": {"kind": "sgd", "lr": 1e308},
            "dataset": {"randman": {"classes": 3, "samples_per_class": 6, "units": 5}},
            "run": {"epochs": 3, "batch_size": 1}
        }),
    );
    let out = tmp.path().join("run");
    let o = run(&["train", "--config", &cfg, "--out", p(&out)], &[]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    let c = RunConfig::load(Path::new(&cfg)).unwrap();
    let net = Network::new(c.network.clone(), 5).unwrap();
    let (_, good) = read_params(&out.join("checkpoints").join("last_good.bin"), &net).unwrap();
    assert!(good.all_finite());
    assert!(!out.join("params.bin").exists());
}

#[test]
fn output_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), serde_json::json!({"dataset": small(), "run": {"epochs": 0}}));
    let env_out = tmp.path().join("from_env");
    assert!(run(&["train", "--config", &cfg], &[("SNNKIT_OUT", p(&env_out))]).status.success());
    assert!(env_out.join("params.bin").is_file());
    let flag_out = tmp.path().join("from_flag");
    assert!(run(&["train", "--config", &cfg, "--out", p(&flag_out)], &[("SNNKIT_OUT", p(&env_out))])
        .status
        .success());
    assert!(flag_out.join("params.bin").is_file());
}

#[test]
fn landscape_grid_only_without_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), serde_json::json!({"dataset": small()}));
    let out = tmp.path().join("ls");
    let o = run(&["landscape", "--config", &cfg, "--out", p(&out), "--resolution", "5"], &[]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("warning: no checkpoints"));
    let csv = fs::read_to_string(out.join("landscape.csv")).unwrap();
    assert_eq!(csv.lines().count(), 26);
    assert_eq!(csv.lines().next(), Some("x,y,loss"));
    let names: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert!(!names.iter().any(|n| n.to_string_lossy().starts_with("trajectory_")));
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("landscape.json")).unwrap()).unwrap();
    assert_eq!(side["resolution"], 5);
    assert_eq!(side["provenance"]["tool"], "snnkit");
}

#[test]
fn landscape_projects_each_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), serde_json::json!({"dataset": small(), "run": {"epochs": 2}}));
    let run_a = tmp.path().join("root").join("a");
    let run_b = tmp.path().join("root").join("b");
    for d in [&run_a, &run_b] {
        assert!(run(&["train", "--config", &cfg, "--out", p(d)], &[]).status.success());
    }
    let ckpts = tmp.path().join("ckpts");
    fs::create_dir_all(&ckpts).unwrap();
    fs::rename(run_a.join("checkpoints"), ckpts.join("adam")).unwrap();
    fs::rename(run_b.join("checkpoints"), ckpts.join("other")).unwrap();
    let out = tmp.path().join("ls");
    let o = run(
        &[
            "landscape", "--config", &cfg, "--out", p(&out), "--params", p(&run_a.join("params.bin")),
            "--checkpoints", p(&ckpts), "--resolution", "3",
        ],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["adam", "other"] {
        let csv = fs::read_to_string(out.join(format!("trajectory_{name}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 4);
    }
    // The final checkpoint of the centred run projects onto the origin.
    let last = fs::read_to_string(out.join("trajectory_adam.csv")).unwrap();
    let fields: Vec<&str> = last.lines().last().unwrap().split(',').collect();
    assert_eq!((fields[2], fields[3]), ("0", "0"));
}

#[test]
fn compare_grads_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), serde_json::json!({"dataset": small()}));
    let out = tmp.path().join("cmp");
    let o = run(
        &["compare-grads", "--config", &cfg, "--out", p(&out), "--a", "bptt", "--b", "ostl", "--loss", "online"],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("grad_report.json")).unwrap()).unwrap();
    let groups = r["report"]["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 2);
    assert!((groups[1]["cosine"].as_f64().unwrap() - 1.0).abs() < 1e-10);
    assert_eq!(r["report"]["estimators"], serde_json::json!(["bptt", "ostl"]));
    // Online estimators with the offline loss are a config error.
    let o = run(&["compare-grads", "--config", &cfg, "--out", p(&out), "--b", "rtrl", "--loss", "offline"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_single_repeat_has_zero_sigma() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(
        &["bench", "--layers", "2", "--width", "8", "--time", "10", "--batch", "2", "--repeats", "1", "--out", p(tmp.path())],
        &[],
    );
    assert!(o.status.success());
    assert!(stdout(&o).contains("std 0.000000 s"), "{}", stdout(&o));
    let b: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("bench.json")).unwrap()).unwrap();
    assert_eq!(b["result"]["std_s"], 0.0);
    assert!(b["result"]["mean_s"].as_f64().unwrap() > 0.0);
}

#[test]
fn eval_writes_metric_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), serde_json::json!({"dataset": small()}));
    let out = tmp.path().join("ev");
    let o = run(&["eval", "--config", &cfg, "--out", p(&out), "--samples", "4"], &[]);
    assert!(o.status.success());
    let e: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("eval.json")).unwrap()).unwrap();
    assert_eq!(e["samples"], 4);
    // 60 LIF neurons × 12 steps × 4 samples.
    assert_eq!(e["metrics"]["neuron_updates"], 60 * 12 * 4);
}
