//! Run configuration: a sectioned `key = value` file overlaid by flags.
//!
//! ```text
//! # comment
//! [flow]
//! steps = 8
//! schedule = 3-3
//! [train]
//! epochs = 20
//! ```
//!
//! Keys before the first section header belong to `[run]`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use flowad_core::features::ToyExtractorConfig;
use flowad_core::flow::KernelSchedule;
use flowad_core::scoring::{ScoreAggregation, ScoringConfig};
use flowad_core::train::TrainConfig;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Latent perturbation for `generate`.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSpec {
    pub image_id: Option<String>,
    pub scale: usize,
    /// Latent cell `(h, w)`; `None` means the center.
    pub at: Option<(usize, usize)>,
    pub magnitude: f64,
    pub radius: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub out: PathBuf,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub threads: usize,
    pub train: TrainConfig,
    pub scoring: ScoringConfig,
    pub image_size: usize,
    pub toy: ToyExtractorConfig,
    pub category: Option<String>,
    pub split: Split,
    pub generate: GenerateSpec,
    pub bench_repetitions: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out: PathBuf::from("runs"),
            dataset: None,
            checkpoint: None,
            threads: 1,
            train: TrainConfig::default(),
            scoring: ScoringConfig::default(),
            image_size: 64,
            toy: ToyExtractorConfig::default(),
            category: None,
            split: Split::Test,
            generate: GenerateSpec {
                image_id: None,
                scale: 0,
                at: None,
                magnitude: 1.0,
                radius: 0,
            },
            bench_repetitions: 10,
        }
    }
}

/// Every accepted `(section, key)` pair.
pub const KEYS: &[(&str, &str)] = &[
    ("run", "out"),
    ("run", "dataset"),
    ("run", "checkpoint"),
    ("run", "threads"),
    ("run", "seed"),
    ("flow", "steps"),
    ("flow", "schedule"),
    ("flow", "hidden_ratio"),
    ("flow", "clamp"),
    ("train", "epochs"),
    ("train", "batch_size"),
    ("train", "lr"),
    ("train", "weight_decay"),
    ("train", "decoupled_weight_decay"),
    ("train", "augment"),
    ("train", "p_hflip"),
    ("train", "p_vflip"),
    ("train", "p_rot"),
    ("train", "max_rotation_deg"),
    ("score", "aggregation"),
    ("score", "include_logdet"),
    ("score", "split"),
    ("data", "image_size"),
    ("data", "toy_channels"),
    ("data", "toy_strides"),
    ("data", "toy_seed"),
    ("data", "category"),
    ("generate", "image_id"),
    ("generate", "scale"),
    ("generate", "at"),
    ("generate", "magnitude"),
    ("generate", "radius"),
    ("bench", "repetitions"),
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("{key}: cannot parse {value:?}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(format!("{key}: expected on/off, got {value:?}")),
    }
}

fn parse_pair(key: &str, value: &str) -> Result<(usize, usize), String> {
    let (a, b) = value
        .split_once(',')
        .ok_or_else(|| format!("{key}: expected \"h,w\", got {value:?}"))?;
    Ok((parse(key, a.trim())?, parse(key, b.trim())?))
}

impl RunConfig {
    /// Applies one setting; unknown keys are rejected.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), String> {
        let name = format!("{section}.{key}");
        let v = value.trim();
        let n = &name;
        match (section, key) {
            ("run", "out") => self.out = PathBuf::from(v),
            ("run", "dataset") => self.dataset = Some(PathBuf::from(v)),
            ("run", "checkpoint") => self.checkpoint = Some(PathBuf::from(v)),
            ("run", "threads") => self.threads = parse(n, v)?,
            ("run", "seed") => self.train.seed = parse(n, v)?,
            ("flow", "steps") => self.train.steps = parse(n, v)?,
            ("flow", "schedule") => self.train.schedule = v.parse::<KernelSchedule>().map_err(|e| e.to_string())?,
            ("flow", "hidden_ratio") => self.train.hidden_ratio = parse(n, v)?,
            ("flow", "clamp") => self.train.clamp = parse(n, v)?,
            ("train", "epochs") => self.train.epochs = parse(n, v)?,
            ("train", "batch_size") => self.train.batch_size = parse(n, v)?,
            ("train", "lr") => self.train.adam.lr = parse(n, v)?,
            ("train", "weight_decay") => self.train.adam.weight_decay = parse(n, v)?,
            ("train", "decoupled_weight_decay") => self.train.adam.decoupled_weight_decay = parse_bool(n, v)?,
            ("train", "augment") => self.train.augment.enabled = parse_bool(n, v)?,
            ("train", "p_hflip") => self.train.augment.p_hflip = parse(n, v)?,
            ("train", "p_vflip") => self.train.augment.p_vflip = parse(n, v)?,
            ("train", "p_rot") => self.train.augment.p_rot = parse(n, v)?,
            ("train", "max_rotation_deg") => self.train.augment.max_rotation_deg = parse(n, v)?,
            ("score", "aggregation") => {
                self.scoring.aggregation = v.parse::<ScoreAggregation>().map_err(|e| e.to_string())?
            }
            ("score", "include_logdet") => self.scoring.include_logdet = parse_bool(n, v)?,
            ("score", "split") => {
                self.split = match v {
                    "train" => Split::Train,
                    "test" => Split::Test,
                    "all" => Split::All,
                    _ => return Err(format!("{n}: expected train, test or all, got {v:?}")),
                }
            }
            ("data", "image_size") => self.image_size = parse(n, v)?,
            ("data", "toy_channels") => self.toy.channels = parse(n, v)?,
            ("data", "toy_strides") => {
                self.toy.strides = v
                    .split(',')
                    .map(|s| parse(n, s.trim()))
                    .collect::<Result<_, _>>()?
            }
            ("data", "toy_seed") => self.toy.seed = parse(n, v)?,
            ("data", "category") => self.category = Some(v.to_string()),
            ("generate", "image_id") => self.generate.image_id = Some(v.to_string()),
            ("generate", "scale") => self.generate.scale = parse(n, v)?,
            ("generate", "at") => self.generate.at = Some(parse_pair(n, v)?),
            ("generate", "magnitude") => self.generate.magnitude = parse(n, v)?,
            ("generate", "radius") => self.generate.radius = parse(n, v)?,
            ("bench", "repetitions") => self.bench_repetitions = parse(n, v)?,
            _ => return Err(format!("unknown config key {name}")),
        }
        Ok(())
    }

    /// Parses config file text into `self`.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), String> {
        let mut section = String::from("run");
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| format!("{origin}:{}: {msg}", i + 1);
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| at(format!("malformed section header {line:?}")))?
                    .trim();
                if !KEYS.iter().any(|(s, _)| *s == name) {
                    return Err(at(format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected key = value, got {line:?}")))?;
            self.set(&section, key.trim(), value).map_err(at)?;
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
            .map_err(CliError::usage)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(|e| CliError::usage(e.to_string()))?;
        self.scoring
            .aggregation
            .validate()
            .map_err(|e| CliError::usage(e.to_string()))?;
        if self.threads == 0 {
            return Err(CliError::usage("threads must be >= 1"));
        }
        if self.image_size < 16 {
            return Err(CliError::usage(format!("data.image_size must be >= 16, got {}", self.image_size)));
        }
        flowad_core::features::ToyExtractor::new(self.toy.clone()).map_err(|e| CliError::usage(e.to_string()))?;
        if self.bench_repetitions == 0 {
            return Err(CliError::usage("bench.repetitions must be >= 1"));
        }
        if !self.generate.magnitude.is_finite() {
            return Err(CliError::usage("generate.magnitude must be finite"));
        }
        Ok(())
    }

    /// Sorted `section.key = value` lines of every resolved setting except
    /// the output root; hashed to name run directories.
    pub fn canonical(&self) -> String {
        let t = &self.train;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let strides: Vec<String> = self.toy.strides.iter().map(|s| s.to_string()).collect();
        let rows = [
            ("data.category", self.category.clone().unwrap_or_default()),
            ("data.image_size", self.image_size.to_string()),
            ("data.toy_channels", self.toy.channels.to_string()),
            ("data.toy_seed", self.toy.seed.to_string()),
            ("data.toy_strides", strides.join(",")),
            ("flow.clamp", t.clamp.to_string()),
            ("flow.hidden_ratio", t.hidden_ratio.to_string()),
            ("flow.schedule", t.schedule.to_string()),
            ("flow.steps", t.steps.to_string()),
            ("generate.at", self.generate.at.map(|(h, w)| format!("{h},{w}")).unwrap_or_default()),
            ("generate.image_id", self.generate.image_id.clone().unwrap_or_default()),
            ("generate.magnitude", self.generate.magnitude.to_string()),
            ("generate.radius", self.generate.radius.to_string()),
            ("generate.scale", self.generate.scale.to_string()),
            ("bench.repetitions", self.bench_repetitions.to_string()),
            ("run.checkpoint", path(&self.checkpoint)),
            ("run.dataset", path(&self.dataset)),
            ("run.seed", t.seed.to_string()),
            ("run.threads", self.threads.to_string()),
            ("score.aggregation", self.scoring.aggregation.to_string()),
            ("score.include_logdet", self.scoring.include_logdet.to_string()),
            ("score.split", format!("{:?}", self.split).to_lowercase()),
            ("train.augment", t.augment.enabled.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.decoupled_weight_decay", t.adam.decoupled_weight_decay.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.lr", t.adam.lr.to_string()),
            ("train.max_rotation_deg", t.augment.max_rotation_deg.to_string()),
            ("train.p_hflip", t.augment.p_hflip.to_string()),
            ("train.p_rot", t.augment.p_rot.to_string()),
            ("train.p_vflip", t.augment.p_vflip.to_string()),
            ("train.weight_decay", t.adam.weight_decay.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            writeln!(out, "{k} = {v}").expect("string write");
        }
        out
    }

    pub fn hash8(&self, command: &str) -> String {
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update(b"\n");
        h.update(self.canonical().as_bytes());
        h.finalize().iter().take(4).map(|b| format!("{b:02x}")).collect()
    }
}
