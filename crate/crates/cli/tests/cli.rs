use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMOKE: &str = "[phantom]\nimage_size = 32\nn_train_normal = 3\nn_test_normal = 3\nn_test_abnormal = 3\n\
lesion_radius_range = [2.0, 4.0]\n\
[network]\nbase_channels = 4\nn_downsamples = 3\ndisc_base_channels = 4\n\
[memory]\nsize = 8\ndim = 8\n[train]\nepochs = 1\nbatch_size = 2\n[output]\nheatmaps = true\n";

fn proxyad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_proxyad"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn smoke_config(dir: &Path) -> String {
    let p = dir.join("smoke.toml");
    fs::write(&p, SMOKE).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn dumped_defaults_pass_the_checker() {
    let out = proxyad(&["config", "--dump-defaults"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("[memory]") && text.contains("size = 128"));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("defaults.toml");
    fs::write(&p, &text).unwrap();
    assert!(proxyad(&["config", "--check", p.to_str().unwrap()]).status.success());
}

#[test]
fn errors_map_to_documented_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[memory]\nsize = 0\n").unwrap();
    let out = proxyad(&["train-proxy", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let unknown = dir.path().join("unknown.toml");
    fs::write(&unknown, "[memory]\nsise = 3\n").unwrap();
    assert_eq!(proxyad(&["config", "--check", unknown.to_str().unwrap()]).status.code(), Some(2));

    let missing = dir.path().join("missing.toml");
    fs::write(&missing, format!("[data]\nsource = \"directory\"\nroot = \"{}\"\n", dir.path().join("nope").display())).unwrap();
    let out = proxyad(&["train-proxy", "--config", missing.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn ablate_smoke_emits_seven_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path());
    let out_dir = dir.path().join("ablate");
    let out = proxyad(&["ablate", "--config", &cfg, "--out-dir", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 7);
    let ids: Vec<&str> = rows.iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids, ["1", "3", "4", "5", "6", "7", "8"]);
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path());
    let out = dir.path().join("run");
    let o = out.to_str().unwrap();
    let data = dir.path().join("phantoms");
    let g = proxyad(&["phantom-gen", "--config", &cfg, "--out", data.to_str().unwrap()]);
    assert!(g.status.success(), "{}", String::from_utf8_lossy(&g.stderr));
    assert!(data.join("train/normal").is_dir() && data.join("test/abnormal").is_dir());
    for cmd in ["prepare", "train-proxy", "train-recon", "score"] {
        let r = proxyad(&[cmd, "--config", &cfg, "--out-dir", o]);
        assert!(r.status.success(), "{cmd}: {}", String::from_utf8_lossy(&r.stderr));
    }
    let scores = out.join("scores.csv");
    let r = proxyad(&["eval", "--scores", scores.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    for f in [
        "proxy.ckpt",
        "recon.ckpt",
        "proxy_loss.csv",
        "recon_loss.csv",
        "scores.csv",
        "scores.manifest",
        "recon_grid.png",
        "hist_latent.png",
        "report.txt",
        "report.kv",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let report = fs::read_to_string(out.join("report.kv")).unwrap();
    assert!(report.contains("auc"));
    assert_eq!(fs::read_dir(out.join("heatmaps")).unwrap().count(), 6);
}

#[test]
fn recon_training_is_refused_without_the_proxy_bridge() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ae.toml");
    fs::write(&p, format!("{SMOKE}[ablation]\nuse_si_proxy = false\nuse_memory = false\nuse_repairing = false\nscore_in_latent = false\n")).unwrap();
    let o = dir.path().join("ae");
    let o = o.to_str().unwrap();
    let cfg = p.to_str().unwrap();
    assert!(proxyad(&["train-proxy", "--config", cfg, "--out-dir", o]).status.success());
    assert_eq!(proxyad(&["train-recon", "--config", cfg, "--out-dir", o]).status.code(), Some(2));
    // Self-reconstruction rows score straight from the proxy checkpoint.
    assert!(proxyad(&["score", "--config", cfg, "--out-dir", o]).status.success());
}
