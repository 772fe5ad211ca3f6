#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Write CIFAR-10-format batch files whose classes differ by colour and by
/// the orientation of a stripe pattern, so a small network can learn them.
pub fn write_synthetic_cifar(dir: &Path, per_file: usize, files: usize, test: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = |n: usize, rng: &mut ChaCha8Rng| {
        let mut bytes = Vec::with_capacity(n * 3073);
        for _ in 0..n {
            let label: u8 = rng.random_range(0..10);
            bytes.push(label);
            let k = label as f64;
            let (fy, fx) = ((k % 3.0) * 0.35, (k / 3.0).floor() * 0.3);
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            for ch in 0..3 {
                let tint = 0.25 + 0.5 * (((label as usize + ch * 3) % 10) as f64 / 9.0);
                for y in 0..32 {
                    for x in 0..32 {
                        let stripe = (fy * y as f64 + fx * x as f64 + phase).sin();
                        let noise: f64 = rng.random_range(-0.15..0.15);
                        let v = (tint + 0.25 * stripe + noise).clamp(0.0, 1.0);
                        bytes.push((v * 255.0).round() as u8);
                    }
                }
            }
        }
        bytes
    };
    fs::create_dir_all(dir).unwrap();
    for i in 1..=files {
        fs::write(dir.join(format!("data_batch_{i}.bin")), batch(per_file, &mut rng)).unwrap();
    }
    fs::write(dir.join("test_batch.bin"), batch(test, &mut rng)).unwrap();
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_entprune")
}

pub fn entprune(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn entprune")
}

/// Run a command that must succeed and return its run directory (the one
/// whose name starts with `command` and is newest under `out`).
pub fn run_ok(args: &[&str], out: &Path) -> PathBuf {
    let before: Vec<PathBuf> = list_dirs(out);
    let o = entprune(args);
    assert!(
        o.status.success(),
        "entprune {args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    let after = list_dirs(out);
    let new: Vec<PathBuf> = after.into_iter().filter(|d| !before.contains(d)).collect();
    assert_eq!(new.len(), 1, "expected exactly one new run directory");
    new.into_iter().next().unwrap()
}

pub fn list_dirs(out: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(out)
        .map(|rd| rd.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()).collect())
        .unwrap_or_default();
    v.sort();
    v
}

pub fn summary_value(run: &Path, key: &str) -> String {
    let text = fs::read_to_string(run.join("summary.txt")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")).map(str::to_string))
        .unwrap_or_else(|| panic!("no `{key}` in summary"))
}

/// A small config that keeps every command a few seconds long.
pub fn small_config(dir: &Path, data: &Path, out: &Path) -> PathBuf {
    let text = format!(
        "[run]\narch = tinyvgg6\ndata_dir = {}\nout = {}\nseed = 3\n\n\
         [data]\ntrain = 160\nmini = 40\ntest = 80\ncalibration = 16\n\n\
         [train]\nepochs = 1\nbatch_size = 32\n\n\
         [search]\nepisodes = 4\nflops_target = 0.5\npositions_per_sample = 4\n\n\
         [agent]\nhidden = 32\nbatch_size = 8\nwarmup_episodes = 2\n",
        data.display(),
        out.display()
    );
    let p = dir.join("small.ini");
    fs::write(&p, text).unwrap();
    p
}
