#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Small enough that every command finishes in seconds.
pub const TINY: &str = r#"
window = [16, 8, 8]

[grid]
origin = [-6.0, -4.2, -4.2]
spacing = [0.7, 0.7, 0.7]
dims = [24, 13, 13]

[sampling]
count = 8
r_a = [0.5, 1.0]
r_b = [0.5, 1.0]
L = [2.0, 4.0]

[unet]
channels = [4, 8]
attention_channels = 4

[train]
batch_size = 2
learning_rate = 3e-3
epochs = 2

[optimize]
x0 = [1.0, 1.0, 4.0, 0.0, 0.0, 0.3]
lower = [0.5, 0.5, 2.0, 0.0, 0.0, -0.3]
upper = [1.0, 1.0, 4.0, 0.0, 0.0, 0.3]
max_iters = 4

[gradcheck]
designs = 2
probes = 20

[ablation]
count = 8
window = [8, 4, 4]
epochs = 1
"#;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shapeflow"))
}

/// Writes the tiny config into `dir` and returns its path.
pub fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, TINY).unwrap();
    path
}

/// Runs `shapeflow --config <tiny> --out <dir>/out <args>`.
pub fn run(dir: &Path, args: &[&str]) -> Output {
    let config = tiny_config(dir);
    let out = dir.join("out");
    bin()
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .args(args)
        .output()
        .unwrap()
}

pub fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

pub fn read(path: impl AsRef<Path>) -> String {
    let path = path.as_ref();
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
