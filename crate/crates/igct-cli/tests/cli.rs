//! End-to-end command tests against the compiled binary: pipeline plumbing,
//! exit codes, determinism, and output formats. Training runs here are tiny;
//! statistical quality lives in the acceptance suite.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_igct"));
    c.env_remove("IGCT_OUTPUT_DIR");
    c
}

fn write_config(dir: &Path, extra_train: &str) -> PathBuf {
    let path = dir.join("cfg.json");
    let out_dir = dir.join("out");
    let body = format!(
        r#"{{
  "schedule": {{
    "p_mean": -1.1, "p_std": 2.0, "t_min": 0.002, "t_max": 80.0,
    "d": 60, "t_low": 11.0, "t_high": 14.3, "w_min": 1.0, "w_max": 15.0
  }},
  "world": {{
    "dims": 1,
    "components": [
      {{ "class_id": 0, "mean": [-2.0], "std": 0.2, "weight": 0.5 }},
      {{ "class_id": 1, "mean": [2.0], "std": 0.2, "weight": 0.5 }}
    ]
  }},
  "train": {{ "batch_size": 8, "total_iters": 120, "log_every": 30, "lr": 0.001{extra_train} }},
  "net": {{ "hidden_width": 8, "hidden_layers": 2, "time_features": 8,
           "class_features": 4, "guidance_features": 4 }},
  "eval": {{ "n_samples": 200, "held_out": 50, "knn_k": 3 }},
  "seed": 7,
  "output_dir": "{}"
}}"#,
        out_dir.display()
    );
    std::fs::write(&path, body).unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(cmd: &mut Command) -> i32 {
    cmd.output().unwrap().status.code().unwrap()
}

#[test]
fn full_pipeline_produces_all_artifacts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("out");
    run_ok(bin().args(["train", "--config"]).arg(&cfg).args(["--algorithm", "igct"]));

    let ckpt = out.join("ckpt-igct.json");
    assert!(ckpt.exists());
    assert!(out.join("run-igct.csv").exists());

    let samples = dir.path().join("samples.csv");
    run_ok(
        bin()
            .args(["sample", "--checkpoint"])
            .arg(&ckpt)
            .args(["--class", "1", "--w", "13", "--nfe", "1", "--count", "40", "--seed", "3", "--out"])
            .arg(&samples),
    );
    let latents = dir.path().join("latents.csv");
    run_ok(
        bin()
            .args(["invert", "--checkpoint"])
            .arg(&ckpt)
            .args(["--input"])
            .arg(&samples)
            .args(["--method", "igct", "--out"])
            .arg(&latents),
    );
    let edits = dir.path().join("edits.csv");
    run_ok(
        bin()
            .args(["edit", "--checkpoint"])
            .arg(&ckpt)
            .args(["--input"])
            .arg(&samples)
            .args(["--class-tar", "0", "--w", "7", "--method", "igct", "--out"])
            .arg(&edits),
    );
    run_ok(
        bin()
            .args(["eval", "--checkpoint"])
            .arg(&ckpt)
            .args(["--w", "1,7,13", "--count", "200", "--seed", "5", "--out-dir"])
            .arg(&out),
    );

    // One report row per guidance strength.
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 4, "{report}");
    for w in ["igct,1,", "igct,7,", "igct,13,"] {
        assert!(report.contains(w), "missing row for {w}: {report}");
    }
    assert!(out.join("summary-ckpt-igct.json").exists());

    let svg = dir.path().join("hist.svg");
    run_ok(
        bin()
            .args(["plot", "--kind", "histogram", "--input"])
            .arg(&samples)
            .arg(&edits)
            .args(["--out"])
            .arg(&svg),
    );
    let svg_text = std::fs::read_to_string(&svg).unwrap();
    assert_eq!(svg_text.matches("<polyline").count(), 2);
}

#[test]
fn rerun_with_same_seed_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("out");
    run_ok(bin().args(["train", "--config"]).arg(&cfg).args(["--algorithm", "cfg-edm"]));
    let ckpt_a = std::fs::read(out.join("ckpt-cfg-edm.json")).unwrap();
    let run_a = std::fs::read_to_string(out.join("run-cfg-edm.csv")).unwrap();

    run_ok(bin().args(["train", "--config"]).arg(&cfg).args(["--algorithm", "cfg-edm"]));
    let ckpt_b = std::fs::read(out.join("ckpt-cfg-edm.json")).unwrap();
    let run_b = std::fs::read_to_string(out.join("run-cfg-edm.csv")).unwrap();

    assert_eq!(ckpt_a, ckpt_b, "checkpoints differ across reruns");
    // Run records match except the wall-clock column.
    let strip = |s: &str| {
        s.lines()
            .map(|l| l.rsplit_once(',').map(|(head, _)| head.to_string()).unwrap_or_default())
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&run_a), strip(&run_b));

    // Sampling and eval outputs are fully byte-identical.
    let s1 = dir.path().join("s1.csv");
    let s2 = dir.path().join("s2.csv");
    for s in [&s1, &s2] {
        run_ok(
            bin()
                .args(["sample", "--checkpoint"])
                .arg(out.join("ckpt-cfg-edm.json"))
                .args(["--class", "0", "--w", "7", "--count", "30", "--seed", "11", "--out"])
                .arg(s),
        );
    }
    assert_eq!(std::fs::read(&s1).unwrap(), std::fs::read(&s2).unwrap());
}

#[test]
fn missing_schedule_field_exits_2_and_names_it() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    let text = std::fs::read_to_string(&cfg).unwrap().replace(r#""t_max": 80.0,"#, "");
    std::fs::write(&cfg, text).unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--algorithm", "igct"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("t_max"), "{stderr}");
}

#[test]
fn schema_mismatch_exits_4() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    run_ok(bin().args(["train", "--config"]).arg(&cfg).args(["--algorithm", "guided-cd"]));
    let ckpt = dir.path().join("out/ckpt-guided-cd.json");
    let mut text = std::fs::read_to_string(&ckpt).unwrap();
    text = text.replace("\"schema_version\": 1", "\"schema_version\": 42");
    std::fs::write(&ckpt, text).unwrap();
    let code = exit_code(
        bin()
            .args(["sample", "--checkpoint"])
            .arg(&ckpt)
            .args(["--count", "5", "--out"])
            .arg(dir.path().join("x.csv")),
    );
    assert_eq!(code, 4);
}

#[test]
fn diverging_run_exits_3_and_keeps_periodic_checkpoint() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), r#", "checkpoint_every": 1"#);
    let text = std::fs::read_to_string(&cfg).unwrap().replace("\"lr\": 0.001", "\"lr\": 1e300");
    std::fs::write(&cfg, text).unwrap();
    let code = exit_code(bin().args(["train", "--config"]).arg(&cfg).args(["--algorithm", "igct"]));
    assert_eq!(code, 3);
    // The last checkpoint written before the abort stays on disk, along with
    // the diagnostic run record.
    assert!(dir.path().join("out/ckpt-igct-1.json").exists());
    let record = std::fs::read_to_string(dir.path().join("out/run-igct.csv")).unwrap();
    assert!(record.lines().count() >= 2, "{record}");
}

#[test]
fn unknown_class_exits_2() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    run_ok(bin().args(["train", "--config"]).arg(&cfg).args(["--algorithm", "igct"]));
    let code = exit_code(
        bin()
            .args(["sample", "--checkpoint"])
            .arg(dir.path().join("out/ckpt-igct.json"))
            .args(["--class", "9", "--count", "5", "--out"])
            .arg(dir.path().join("x.csv")),
    );
    assert_eq!(code, 2);
}

#[test]
fn output_dir_env_var_wins() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    let override_dir = dir.path().join("elsewhere");
    let mut cmd = bin();
    cmd.env("IGCT_OUTPUT_DIR", &override_dir);
    run_ok(cmd.args(["train", "--config"]).arg(&cfg).args(["--algorithm", "cfg-edm"]));
    assert!(override_dir.join("ckpt-cfg-edm.json").exists());
    assert!(!dir.path().join("out/ckpt-cfg-edm.json").exists());
}

#[test]
fn cfg_edm_sampling_defaults_to_18_heun_steps() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    run_ok(bin().args(["train", "--config"]).arg(&cfg).args(["--algorithm", "cfg-edm"]));
    let traj = dir.path().join("traj.csv");
    run_ok(
        bin()
            .args(["sample", "--checkpoint"])
            .arg(dir.path().join("out/ckpt-cfg-edm.json"))
            .args(["--class", "1", "--count", "3", "--out"])
            .arg(dir.path().join("s.csv"))
            .args(["--trajectories"])
            .arg(&traj),
    );
    // 18 Heun steps = 19 grid levels per trajectory.
    let text = std::fs::read_to_string(&traj).unwrap();
    let rows_for_first: usize = text
        .lines()
        .skip(1)
        .filter(|l| l.starts_with("0,"))
        .count();
    assert_eq!(rows_for_first, 19);
}

#[test]
fn oracle_source_samples_and_plots_trajectories() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    let traj = dir.path().join("traj.csv");
    run_ok(
        bin()
            .args(["sample", "--oracle", "--config"])
            .arg(&cfg)
            .args(["--class", "1", "--w", "13", "--count", "10", "--seed", "2", "--out"])
            .arg(dir.path().join("oracle.csv"))
            .args(["--trajectories"])
            .arg(&traj),
    );
    let svg = dir.path().join("traj.svg");
    run_ok(
        bin()
            .args(["plot", "--kind", "trajectory", "--input"])
            .arg(&traj)
            .args(["--out"])
            .arg(&svg),
    );
    assert!(std::fs::read_to_string(&svg).unwrap().contains("log10 t"));
}

#[test]
fn plot_of_empty_series_fails_without_writing() {
    let dir = TempDir::new().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "index,class,w,x0\n").unwrap();
    let svg = dir.path().join("never.svg");
    let code = exit_code(
        bin()
            .args(["plot", "--kind", "histogram", "--input"])
            .arg(&empty)
            .args(["--out"])
            .arg(&svg),
    );
    assert_eq!(code, 2);
    assert!(!svg.exists());
}

#[test]
fn three_series_overlay_renders_with_legend() {
    let dir = TempDir::new().unwrap();
    for (name, center) in [("data", 0.0f64), ("cfg", 2.5), ("igct", -2.0)] {
        let mut body = String::from("index,class,w,x0\n");
        for i in 0..50 {
            body.push_str(&format!("{i},1,1,{}\n", center + 0.01 * i as f64));
        }
        std::fs::write(dir.path().join(format!("{name}.csv")), body).unwrap();
    }
    let svg = dir.path().join("overlay.svg");
    run_ok(
        bin()
            .args(["plot", "--kind", "histogram", "--input"])
            .arg(dir.path().join("data.csv"))
            .arg(dir.path().join("cfg.csv"))
            .arg(dir.path().join("igct.csv"))
            .args(["--out"])
            .arg(&svg),
    );
    let text = std::fs::read_to_string(&svg).unwrap();
    assert_eq!(text.matches("<polyline").count(), 3);
    for label in [">data</text>", ">cfg</text>", ">igct</text>"] {
        assert!(text.contains(label), "missing legend {label}");
    }
}
