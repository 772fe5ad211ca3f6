//! `key = value` configuration with `[section]` headers.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use entprune::agent::AgentConfig;
use entprune::data::SplitSizes;
use entprune::entropy::EntropyConfig;
use entprune::env::{SearchConfig, STATE_DIM};
use entprune::trainer::TrainConfig;

/// Flat `section.key → value` map in file order of first appearance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        let mut offset = 0usize;
        for (lineno, raw) in text.split_inclusive('\n').enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            let here = || format!("{}:{} (byte offset {offset})", path.display(), lineno + 1);
            if line.is_empty() {
            } else if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| anyhow!("{}: unterminated section header", here()))?
                    .trim();
                if name.is_empty() {
                    bail!("{}: empty section name", here());
                }
                section = name.to_string();
            } else {
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| anyhow!("{}: expected `key = value`, got {line:?}", here()))?;
                let k = k.trim();
                if k.is_empty() {
                    bail!("{}: missing key", here());
                }
                let key = if section.is_empty() {
                    k.to_string()
                } else {
                    format!("{section}.{k}")
                };
                values.insert(key, v.trim().to_string());
            }
            offset += raw.len();
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text, path)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.values.keys()
    }

    fn read<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: Display,
    {
        if let Some(v) = self.get(key) {
            *slot = v.parse().map_err(|e| anyhow!("config key `{key}`: cannot parse {v:?}: {e}"))?;
        }
        Ok(())
    }

    /// Render as a config file, one section per key prefix.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut current: Option<&str> = None;
        for (k, v) in &self.values {
            let (sec, key) = k.split_once('.').unwrap_or(("", k));
            if current != Some(sec) {
                if !sec.is_empty() {
                    if !out.is_empty() {
                        out.push('\n');
                    }
                    out.push_str(&format!("[{sec}]\n"));
                }
                current = Some(sec);
            }
            out.push_str(&format!("{key} = {v}\n"));
        }
        out
    }
}

/// Everything one command needs, resolved from defaults, the config file
/// and command-line flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub arch: String,
    pub data_dir: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub plan: Option<PathBuf>,
    pub search: SearchConfig,
    pub train: TrainConfig,
    pub entropy: EntropyConfig,
    pub sizes: SplitSizes,
}

pub const KNOWN_KEYS: &[&str] = &[
    "run.arch",
    "run.data_dir",
    "run.out",
    "run.seed",
    "run.checkpoint",
    "run.plan",
    "search.reward",
    "search.flops_target",
    "search.episodes",
    "search.a_max",
    "search.calibration_samples",
    "search.positions_per_sample",
    "search.ridge",
    "agent.hidden",
    "agent.lr_actor",
    "agent.lr_critic",
    "agent.tau",
    "agent.gamma",
    "agent.batch_size",
    "agent.buffer_capacity",
    "agent.sigma0",
    "agent.sigma_decay",
    "agent.baseline_decay",
    "agent.warmup_episodes",
    "agent.optimizer",
    "entropy.bins",
    "train.epochs",
    "train.lr0",
    "train.momentum",
    "train.batch_size",
    "train.augment",
    "data.train",
    "data.mini",
    "data.test",
    "data.calibration",
];

impl RunConfig {
    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        for k in map.keys() {
            if !k.starts_with("manifest.") && !KNOWN_KEYS.contains(&k.as_str()) {
                bail!("unknown config key `{k}` (known: {})", KNOWN_KEYS.join(", "));
            }
        }
        let mut arch = "tinyvgg6".to_string();
        let mut seed = 0u64;
        let mut out = PathBuf::from("runs");
        map.read("run.arch", &mut arch)?;
        map.read("run.seed", &mut seed)?;
        map.read("run.out", &mut out)?;
        let path_of = |k: &str| map.get(k).map(PathBuf::from);

        let mut agent = AgentConfig::new(STATE_DIM);
        map.read("agent.hidden", &mut agent.hidden)?;
        map.read("agent.lr_actor", &mut agent.lr_actor)?;
        map.read("agent.lr_critic", &mut agent.lr_critic)?;
        map.read("agent.tau", &mut agent.tau)?;
        map.read("agent.gamma", &mut agent.gamma)?;
        map.read("agent.batch_size", &mut agent.batch_size)?;
        map.read("agent.buffer_capacity", &mut agent.buffer_capacity)?;
        map.read("agent.sigma0", &mut agent.sigma0)?;
        map.read("agent.sigma_decay", &mut agent.sigma_decay)?;
        map.read("agent.baseline_decay", &mut agent.baseline_decay)?;
        map.read("agent.warmup_episodes", &mut agent.warmup_episodes)?;
        map.read("agent.optimizer", &mut agent.optimizer)?;

        let mut search = SearchConfig {
            seed,
            agent,
            ..SearchConfig::default()
        };
        map.read("search.reward", &mut search.reward)?;
        map.read("search.flops_target", &mut search.flops_target)?;
        map.read("search.episodes", &mut search.episodes)?;
        map.read("search.a_max", &mut search.a_max)?;
        map.read("search.calibration_samples", &mut search.calibration_samples)?;
        map.read("search.positions_per_sample", &mut search.positions_per_sample)?;
        map.read("search.ridge", &mut search.ridge)?;
        map.read("entropy.bins", &mut search.bins)?;
        let entropy = EntropyConfig::new(search.bins)?;

        let mut train = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        map.read("train.epochs", &mut train.epochs)?;
        map.read("train.lr0", &mut train.lr0)?;
        map.read("train.momentum", &mut train.momentum)?;
        map.read("train.batch_size", &mut train.batch_size)?;
        map.read("train.augment", &mut train.augment)?;

        let mut sizes = SplitSizes {
            calibration: search.calibration_samples,
            ..SplitSizes::default()
        };
        map.read("data.train", &mut sizes.train)?;
        map.read("data.mini", &mut sizes.mini)?;
        map.read("data.test", &mut sizes.test)?;
        map.read("data.calibration", &mut sizes.calibration)?;
        search.calibration_samples = sizes.calibration;

        Ok(Self {
            arch,
            data_dir: path_of("run.data_dir"),
            out,
            seed,
            checkpoint: path_of("run.checkpoint"),
            plan: path_of("run.plan"),
            search,
            train,
            entropy,
            sizes,
        })
    }

    /// The fully resolved configuration as a map, for the manifest.
    pub fn to_map(&self) -> ConfigMap {
        let mut m = ConfigMap::default();
        m.set("run.arch", &self.arch);
        if let Some(d) = &self.data_dir {
            m.set("run.data_dir", d.display());
        }
        m.set("run.out", self.out.display());
        m.set("run.seed", self.seed);
        if let Some(c) = &self.checkpoint {
            m.set("run.checkpoint", c.display());
        }
        if let Some(p) = &self.plan {
            m.set("run.plan", p.display());
        }
        let s = &self.search;
        m.set("search.reward", &s.reward);
        m.set("search.flops_target", s.flops_target);
        m.set("search.episodes", s.episodes);
        m.set("search.a_max", s.a_max);
        m.set("search.calibration_samples", s.calibration_samples);
        m.set("search.positions_per_sample", s.positions_per_sample);
        m.set("search.ridge", s.ridge);
        let a = &s.agent;
        m.set("agent.hidden", a.hidden);
        m.set("agent.lr_actor", a.lr_actor);
        m.set("agent.lr_critic", a.lr_critic);
        m.set("agent.tau", a.tau);
        m.set("agent.gamma", a.gamma);
        m.set("agent.batch_size", a.batch_size);
        m.set("agent.buffer_capacity", a.buffer_capacity);
        m.set("agent.sigma0", a.sigma0);
        m.set("agent.sigma_decay", a.sigma_decay);
        m.set("agent.baseline_decay", a.baseline_decay);
        m.set("agent.warmup_episodes", a.warmup_episodes);
        m.set("agent.optimizer", &a.optimizer);
        m.set("entropy.bins", self.entropy.bins());
        let t = &self.train;
        m.set("train.epochs", t.epochs);
        m.set("train.lr0", t.lr0);
        m.set("train.momentum", t.momentum);
        m.set("train.batch_size", t.batch_size);
        m.set("train.augment", t.augment);
        m.set("data.train", self.sizes.train);
        m.set("data.mini", self.sizes.mini);
        m.set("data.test", self.sizes.test);
        m.set("data.calibration", self.sizes.calibration);
        m
    }
}
