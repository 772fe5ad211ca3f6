use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::info;

use entprune::data::{load_cifar10, locate_cifar10, subset, Splits, Standardization, IMAGE_SHAPE};
use entprune::entropy::network_entropy;
use entprune::env::{episodes_csv, search, RewardInputs, RewardRegistry};
use entprune::graph::{load_checkpoint, preserved_ratio, save_checkpoint, ModelGraph, PresetRegistry};
use entprune::pruner::{build_calibration_cache, prune_network, read_plan, write_plan};
use entprune::trainer::{evaluate, fine_tune, train, train_from_scratch};

use crate::config::{ConfigMap, RunConfig};
use crate::Command;

/// A fresh per-run output directory plus the manifest extras collected while
/// the command runs.
struct Run {
    dir: PathBuf,
    extras: ConfigMap,
    artifacts: Vec<String>,
}

impl Run {
    fn create(command: Command, rc: &RunConfig) -> Result<Self> {
        let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
        let base = rc.out.join(format!("{}-{stamp}-s{}", command.name(), rc.seed));
        let mut dir = base.clone();
        let mut n = 1;
        while dir.exists() {
            n += 1;
            dir = PathBuf::from(format!("{}-{n}", base.display()));
        }
        fs::create_dir_all(&dir).with_context(|| format!("creating run directory {}", dir.display()))?;
        Ok(Self {
            dir,
            extras: ConfigMap::default(),
            artifacts: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
    }

    fn note(&mut self, key: &str, value: impl std::fmt::Display) {
        self.extras.set(&format!("manifest.{key}"), value);
    }
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str, hint: &str) -> Result<&'a Path> {
    match path {
        Some(p) if p.exists() => Ok(p),
        Some(p) => bail!("{what} {} does not exist; {hint}", p.display()),
        None => bail!("missing {what}; {hint}"),
    }
}

const BASELINE_HINT: &str = "run `entprune train` first and pass --checkpoint <run-dir>/baseline.ckpt";
const PLAN_HINT: &str = "run `entprune search` first and pass --plan <run-dir>/best_plan.txt";
const PRUNED_HINT: &str =
    "run `entprune search` or `entprune prune` first and pass --checkpoint <run-dir>/pruned.ckpt";

fn load_data(rc: &RunConfig, run: &mut Run) -> Result<Splits> {
    let dir = require(
        &rc.data_dir,
        "data directory",
        "pass --data-dir pointing at the CIFAR-10 binary batches (data_batch_*.bin, test_batch.bin)",
    )?;
    let (train_paths, test_path) = locate_cifar10(dir)?;
    let pool = load_cifar10(&train_paths)?;
    let test_pool = load_cifar10(&[test_path])?;
    let mut splits = subset(&pool, &test_pool, rc.sizes, rc.seed)?;
    let norm = Standardization::fit(&splits.train)?;
    for d in [&mut splits.train, &mut splits.mini, &mut splits.test, &mut splits.calibration] {
        norm.apply(d)?;
    }
    let fmt = |v: [f32; 3]| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(",");
    run.note("standardization_mean", fmt(norm.mean));
    run.note("standardization_std", fmt(norm.std));
    run.note("train_images", splits.train.len());
    run.note("test_images", splits.test.len());
    Ok(splits)
}

fn load_graph(path: &Path) -> Result<ModelGraph> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Run one command in a fresh run directory and return that directory.
pub fn run_command(command: Command, rc: &RunConfig) -> Result<PathBuf> {
    let start = Instant::now();
    // prerequisites are checked before anything is written
    match command {
        Command::Train => {}
        Command::Finetune => {
            require(&rc.checkpoint, "pruned checkpoint", PRUNED_HINT)?;
        }
        Command::Prune | Command::Scratch => {
            require(&rc.checkpoint, "baseline checkpoint", BASELINE_HINT)?;
            require(&rc.plan, "sparsity plan", PLAN_HINT)?;
        }
        _ => {
            require(&rc.checkpoint, "checkpoint", BASELINE_HINT)?;
        }
    }
    let mut run = Run::create(command, rc)?;
    info!("{} → {}", command.name(), run.dir.display());
    let summary = match command {
        Command::Train => cmd_train(rc, &mut run)?,
        Command::Search => cmd_search(rc, &mut run)?,
        Command::Prune => cmd_prune(rc, &mut run)?,
        Command::Finetune => cmd_finetune(rc, &mut run)?,
        Command::Scratch => cmd_scratch(rc, &mut run)?,
        Command::Eval => cmd_eval(rc, &mut run)?,
        Command::EntropyReport => cmd_entropy_report(rc, &mut run)?,
    };
    let mut text = String::new();
    for (k, v) in &summary {
        println!("{k} = {v}");
        text.push_str(&format!("{k} = {v}\n"));
    }
    run.write("summary.txt", &text)?;

    run.note("command", command.name());
    run.note("seed", rc.seed);
    run.note("entprune_version", env!("CARGO_PKG_VERSION"));
    run.note("artifacts", run.artifacts.join(","));
    run.note("wall_time_secs", format!("{:.3}", start.elapsed().as_secs_f64()));
    let mut manifest = rc.to_map().to_text();
    manifest.push('\n');
    manifest.push_str(&run.extras.to_text());
    fs::write(run.dir.join("manifest.ini"), manifest)?;
    Ok(run.dir)
}

type Summary = Vec<(&'static str, String)>;

fn cmd_train(rc: &RunConfig, run: &mut Run) -> Result<Summary> {
    let data = load_data(rc, run)?;
    let graph = PresetRegistry::default().build(&rc.arch, IMAGE_SHAPE, 10, rc.seed)?;
    let (trained, history) = train(&graph, &data.train, &data.test, &rc.train)?;
    save_checkpoint(&trained, &run.path("baseline.ckpt"))?;
    run.write("history.csv", &history.to_csv())?;
    let acc = history.epochs.last().map_or(f64::NAN, |e| e.test_acc);
    Ok(vec![
        ("test_accuracy", format!("{acc:.6}")),
        ("parameters", trained.parameter_count().to_string()),
        ("flops", trained.total_flops().to_string()),
    ])
}

fn cmd_search(rc: &RunConfig, run: &mut Run) -> Result<Summary> {
    let graph = load_graph(rc.checkpoint.as_deref().unwrap())?;
    let data = load_data(rc, run)?;
    let cache = build_calibration_cache(&graph, &data.calibration.images, rc.search.positions_per_sample, rc.seed)?;
    let inputs = RewardInputs {
        calibration: &data.calibration.images,
        mini: Some(&data.mini),
        entropy: rc.entropy,
        seed: rc.seed.wrapping_add(1),
    };
    let mut reward = RewardRegistry::default().build(&rc.search.reward, &inputs)?;
    let outcome = search(&rc.search, &graph, &cache, reward.as_mut())?;
    write_plan(&outcome.best.plan, &run.path("best_plan.txt"))?;
    run.write("episodes.csv", &episodes_csv(&outcome.log))?;
    outcome.agent.to_archive().write(&run.path("agent.ckpt"))?;
    let pruned = prune_network(&graph, &outcome.best.plan, &cache, rc.search.ridge)?;
    save_checkpoint(&pruned.graph, &run.path("pruned.ckpt"))?;
    Ok(vec![
        ("best_episode", outcome.best_episode.to_string()),
        ("best_reward", format!("{:.6}", outcome.best.reward)),
        ("preserved_ratio", format!("{:.6}", outcome.best.preserved_ratio)),
        ("infeasible_episodes", outcome.infeasible.to_string()),
        ("plan", outcome.best.plan.compact()),
        ("pruned_test_accuracy", format!("{:.6}", evaluate(&pruned.graph, &data.test)?)),
    ])
}

fn prune_with_plan(rc: &RunConfig, graph: &ModelGraph, data: &Splits) -> Result<ModelGraph> {
    let plan = read_plan(rc.plan.as_deref().unwrap())?;
    let cache = build_calibration_cache(graph, &data.calibration.images, rc.search.positions_per_sample, rc.seed)?;
    Ok(prune_network(graph, &plan, &cache, rc.search.ridge)?.graph)
}

fn cmd_prune(rc: &RunConfig, run: &mut Run) -> Result<Summary> {
    let graph = load_graph(rc.checkpoint.as_deref().unwrap())?;
    let data = load_data(rc, run)?;
    let pruned = prune_with_plan(rc, &graph, &data)?;
    save_checkpoint(&pruned, &run.path("pruned.ckpt"))?;
    Ok(vec![
        ("preserved_ratio", format!("{:.6}", preserved_ratio(&pruned, &graph)?)),
        ("test_accuracy", format!("{:.6}", evaluate(&pruned, &data.test)?)),
    ])
}

fn cmd_finetune(rc: &RunConfig, run: &mut Run) -> Result<Summary> {
    let mut graph = load_graph(rc.checkpoint.as_deref().unwrap())?;
    let data = load_data(rc, run)?;
    if rc.plan.is_some() {
        require(&rc.plan, "sparsity plan", PLAN_HINT)?;
        graph = prune_with_plan(rc, &graph, &data)?;
    }
    let before = evaluate(&graph, &data.test)?;
    let (tuned, history) = fine_tune(&graph, &data.train, &data.test, &rc.train)?;
    save_checkpoint(&tuned, &run.path("finetuned.ckpt"))?;
    run.write("history.csv", &history.to_csv())?;
    Ok(vec![
        ("test_accuracy_before", format!("{before:.6}")),
        ("test_accuracy", format!("{:.6}", evaluate(&tuned, &data.test)?)),
    ])
}

fn cmd_scratch(rc: &RunConfig, run: &mut Run) -> Result<Summary> {
    let original = load_graph(rc.checkpoint.as_deref().unwrap())?;
    let plan = read_plan(rc.plan.as_deref().unwrap())?;
    let data = load_data(rc, run)?;
    let (trained, history) = train_from_scratch(&plan, &original, &data.train, &data.test, &rc.train, rc.seed)?;
    save_checkpoint(&trained, &run.path("scratch.ckpt"))?;
    run.write("history.csv", &history.to_csv())?;
    Ok(vec![
        ("test_accuracy", format!("{:.6}", evaluate(&trained, &data.test)?)),
        ("parameters", trained.parameter_count().to_string()),
    ])
}

fn cmd_eval(rc: &RunConfig, run: &mut Run) -> Result<Summary> {
    let graph = load_graph(rc.checkpoint.as_deref().unwrap())?;
    let data = load_data(rc, run)?;
    Ok(vec![
        ("test_accuracy", format!("{:.6}", evaluate(&graph, &data.test)?)),
        ("parameters", graph.parameter_count().to_string()),
        ("flops", graph.total_flops().to_string()),
    ])
}

fn cmd_entropy_report(rc: &RunConfig, run: &mut Run) -> Result<Summary> {
    let graph = load_graph(rc.checkpoint.as_deref().unwrap())?;
    let data = load_data(rc, run)?;
    let report = network_entropy(&graph, &data.calibration.images, &rc.entropy, None)?;
    run.write("entropy_report.csv", &report.to_csv())?;
    Ok(vec![
        ("network_mean_ame", format!("{:.6}", report.network_mean)),
        ("bins", report.bins.to_string()),
        ("samples", report.samples.to_string()),
    ])
}
