#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use polarfield::io::{sha256_file, write_pfm};
use polarfield::relight::EnvironmentMap;
use polarfield::{RadianceImage, Vec3};

/// Three coloured Gaussian blobs over a dim ambient term.
pub fn three_blob_env(width: usize, height: usize) -> EnvironmentMap {
    let probe = EnvironmentMap::new(RadianceImage::new(width, height, [0.0; 3]).unwrap());
    let blobs = [
        (Vec3::new(0.3, 0.2, 0.93), [6.0, 4.5, 3.0], 0.02),
        (Vec3::new(-0.7, 0.4, 0.59), [0.8, 2.0, 5.0], 0.05),
        (Vec3::new(0.1, -0.8, 0.2), [3.0, 3.0, 1.0], 0.1),
    ]
    .map(|(d, c, width)| (d.try_normalize().unwrap(), c, width));
    let image = RadianceImage::from_fn(width, height, |u, v| {
        let dir = probe.texel_direction(u, v);
        let mut px = [0.05f32; 3];
        for (d, c, w) in &blobs {
            let g = ((dir.dot(*d) - 1.0) / w).exp();
            for ch in 0..3 {
                px[ch] += (c[ch] * g) as f32;
            }
        }
        px
    })
    .unwrap();
    EnvironmentMap::new(image)
}

/// SHA-256 of every file below `root`, keyed by relative path.
pub fn hash_tree(root: &Path, skip: &[&str]) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            if !skip.contains(&rel.as_str()) {
                out.insert(rel, sha256_file(&path).unwrap());
            }
        }
    }
    out
}

/// Scene, rig, environment and run config for a small synthetic run.
pub fn write_fixture(dir: &Path, size: usize, lights: usize) {
    fs::write(
        dir.join("scene.json"),
        format!(r#"{{"version":1,"type":"sphere","size":{size}}}"#),
    )
    .unwrap();
    fs::write(
        dir.join("rig.json"),
        format!(r#"{{"version":1,"spiral":{{"count":{lights}}}}}"#),
    )
    .unwrap();
    write_pfm(three_blob_env(64, 32).image(), dir.join("env.pfm")).unwrap();
}

pub fn run_config(out: &str, size: usize) -> String {
    let p = size / 2 - 4;
    format!(
        r#"{{"version":1,"out":"{out}","rig":"rig.json","scene":"scene.json","noise":0.01,
"environments":["env.pfm"],"calibration":{{"patch":[{p},{p},8,8],"reference":0.3}}}}"#
    )
}

pub fn polarfield(workdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polarfield"))
        .arg("--workdir")
        .arg(workdir)
        .args(args)
        .output()
        .expect("failed to launch polarfield")
}

pub fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}
