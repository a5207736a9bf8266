#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

pub fn alqa(home: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_alqa"));
    cmd.env("ALQA_HOME", home).env("RUST_LOG", "warn");
    cmd
}

pub fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

/// 80 exterior-rear renders at 128 px, a third defective.
pub fn tiny_dataset(home: &Path) -> PathBuf {
    let dir = home.join("data");
    ok(alqa(home)
        .args(["generate-data", "--n", "80", "--defect-fraction", "0.33", "--seed", "3"])
        .args(["--perspective", "exterior_rear", "--resolution", "128", "--out"])
        .arg(&dir)
        .output()
        .unwrap());
    dir
}

/// Two seeds, initial 10, batch 10, two rounds, a fast small CNN.
pub fn tiny_config(home: &Path, name: &str, strategy: &str, data: &Path, extra: Value) -> PathBuf {
    let mut cfg = json!({
        "perspective": "exterior_rear",
        "strategy": { "kind": strategy, "batch_size": 10 },
        "initial_size": 10,
        "rounds": 2,
        "model": { "architecture": "small_cnn", "max_epochs": 2, "patience": 1, "learning_rate": 0.003 },
        "seeds": [0, 1],
        "data": { "dir": data, "train_count": 50, "val_fraction": 0.1, "split_seed": 1 }
    });
    if let (Some(c), Some(e)) = (cfg.as_object_mut(), extra.as_object()) {
        for (k, v) in e {
            c.insert(k.clone(), v.clone());
        }
    }
    let path = home.join(format!("{name}.json"));
    fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path
}

/// Writes a curves file from per-seed F2 lists on a 100 + 100·r grid.
pub fn write_curves(dir: &Path, strategy: &str, seeds: &[Vec<f64>]) {
    fs::create_dir_all(dir).unwrap();
    let mut s = String::from("strategy,seed,round,labeled_count,f2,precision,recall\n");
    for (seed, f2s) in seeds.iter().enumerate() {
        for (r, f) in f2s.iter().enumerate() {
            s.push_str(&format!("{strategy},{seed},{r},{},{f},,\n", 100 + 100 * r));
        }
    }
    fs::write(dir.join("curves.csv"), s).unwrap();
}
