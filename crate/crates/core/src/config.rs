//! Run configuration: a flat `section.key = value` text format, typed
//! resolution with defaults, and a deterministic echo of the fully-resolved
//! state so every result directory records exactly what produced it.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::loss::LpVariant;
use crate::memory::UpdateMode;
use crate::pli::{DirectionKind, ScheduleKind};
use crate::synth::ScenarioConfig;

/// Training regime: bare InfoNCE on centroids, or the full support-sample
/// method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Baseline,
    Ise,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "BASELINE" => Ok(TrainMode::Baseline),
            "ISE" => Ok(TrainMode::Ise),
            _ => Err(Error::Config(format!(
                "unknown mode {s:?} (expected BASELINE or ISE)"
            ))),
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainMode::Baseline => "BASELINE",
            TrainMode::Ise => "ISE",
        })
    }
}

/// `cluster.*` keys.
#[derive(Debug, Clone, Copy)]
pub struct ClusterSettings {
    pub eps: f64,
    pub min_points: usize,
}

/// `memory.*` keys.
#[derive(Debug, Clone, Copy)]
pub struct MemorySettings {
    pub mu: f64,
    pub update_mode: UpdateMode,
}

/// `pli.*` keys.
#[derive(Debug, Clone, Copy)]
pub struct PliSettings {
    pub lambda0: f64,
    pub schedule: ScheduleKind,
    pub direction: DirectionKind,
    pub k: usize,
}

/// `loss.*` keys.
#[derive(Debug, Clone, Copy)]
pub struct LossSettings {
    pub beta: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub lp_variant: LpVariant,
}

/// Everything the trainer needs for one run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub instances_per_cluster: usize,
    pub learning_rate: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub seed: u64,
    pub cluster: ClusterSettings,
    pub memory: MemorySettings,
    pub pli: PliSettings,
    pub loss: LossSettings,
}

/// A training config plus the synthetic scenario it runs on.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub train: TrainConfig,
    pub scenario: ScenarioConfig,
}

/// Raw key/value settings, last write wins.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn new() -> Self {
        Settings::default()
    }

    /// Parses config text: one `key = value` per line, `#` comments, blank
    /// lines ignored. Errors carry 1-based line numbers.
    pub fn parse(text: &str) -> Result<Self> {
        let mut settings = Settings::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped.split_once('=').ok_or_else(|| Error::Parse {
                line,
                msg: format!("expected `key = value`, got {stripped:?}"),
            })?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() || value.is_empty() {
                return Err(Error::Parse {
                    line,
                    msg: format!("empty key or value in {stripped:?}"),
                });
            }
            settings.values.insert(key.to_string(), value.to_string());
        }
        Ok(settings)
    }

    /// Applies one `key=value` override (the CLI `--set` form).
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            Error::Config(format!("override must look like key=value, got {pair:?}"))
        })?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || value.is_empty() {
            return Err(Error::Config(format!(
                "override must look like key=value, got {pair:?}"
            )));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    /// Overlays `other` on top of `self`.
    pub fn merge(&mut self, other: &Settings) {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), v.clone());
        }
    }
}

/// Every key `resolve` understands, in echo order.
pub const KNOWN_KEYS: &[&str] = &[
    "mode",
    "epochs",
    "batch_size",
    "instances_per_cluster",
    "learning_rate",
    "lr_decay_epochs",
    "lr_decay_factor",
    "seed",
    "cluster.eps",
    "cluster.min_points",
    "memory.mu",
    "memory.update_mode",
    "pli.lambda0",
    "pli.schedule",
    "pli.direction",
    "pli.k",
    "loss.beta",
    "loss.tau1",
    "loss.tau2",
    "loss.lp_variant",
    "scenario.n_identities",
    "scenario.samples_per_identity",
    "scenario.d",
    "scenario.intra_spread",
    "scenario.split_fraction",
    "scenario.split_gap",
    "scenario.overlap_pairs",
    "scenario.overlap_gap",
    "scenario.train_fraction",
    "scenario.query_fraction",
];

fn typed<T: std::str::FromStr>(settings: &Settings, key: &str, default: T) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    match settings.get(key) {
        None => Ok(default),
        Some(raw) => raw.parse().map_err(|e| {
            Error::Config(format!("bad value for {key}: {raw:?} ({e})"))
        }),
    }
}

fn typed_list(settings: &Settings, key: &str, default: &[usize]) -> Result<Vec<usize>> {
    match settings.get(key) {
        None => Ok(default.to_vec()),
        Some(raw) => raw
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|e| {
                    Error::Config(format!("bad value for {key}: {s:?} ({e})"))
                })
            })
            .collect(),
    }
}

/// Resolves raw settings into typed configuration, applying defaults and
/// validating cross-field invariants. Unknown keys are an error.
pub fn resolve(settings: &Settings) -> Result<ResolvedConfig> {
    for key in settings.values.keys() {
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
    }

    let seed: u64 = typed(settings, "seed", 0)?;
    let train = TrainConfig {
        mode: typed(settings, "mode", TrainMode::Ise)?,
        epochs: typed(settings, "epochs", 30)?,
        batch_size: typed(settings, "batch_size", 64)?,
        instances_per_cluster: typed(settings, "instances_per_cluster", 4)?,
        learning_rate: typed(settings, "learning_rate", 0.1)?,
        lr_decay_epochs: typed_list(settings, "lr_decay_epochs", &[20])?,
        lr_decay_factor: typed(settings, "lr_decay_factor", 0.1)?,
        seed,
        cluster: ClusterSettings {
            eps: typed(settings, "cluster.eps", 0.4)?,
            min_points: typed(settings, "cluster.min_points", 4)?,
        },
        memory: MemorySettings {
            mu: typed(settings, "memory.mu", 0.2)?,
            update_mode: typed(settings, "memory.update_mode", UpdateMode::Hardest)?,
        },
        pli: PliSettings {
            lambda0: typed(settings, "pli.lambda0", 1.0)?,
            schedule: typed(settings, "pli.schedule", ScheduleKind::Logarithm)?,
            direction: typed(settings, "pli.direction", DirectionKind::Nearest)?,
            k: typed(settings, "pli.k", 1)?,
        },
        loss: LossSettings {
            beta: typed(settings, "loss.beta", 0.1)?,
            tau1: typed(settings, "loss.tau1", 0.05)?,
            tau2: typed(settings, "loss.tau2", 0.6)?,
            lp_variant: typed(settings, "loss.lp_variant", LpVariant::Support)?,
        },
    };
    let default_scenario = ScenarioConfig::default();
    let scenario = ScenarioConfig {
        n_identities: typed(settings, "scenario.n_identities", default_scenario.n_identities)?,
        samples_per_identity: typed(
            settings,
            "scenario.samples_per_identity",
            default_scenario.samples_per_identity,
        )?,
        d: typed(settings, "scenario.d", default_scenario.d)?,
        intra_spread: typed(settings, "scenario.intra_spread", default_scenario.intra_spread)?,
        split_fraction: typed(
            settings,
            "scenario.split_fraction",
            default_scenario.split_fraction,
        )?,
        split_gap: typed(settings, "scenario.split_gap", default_scenario.split_gap)?,
        overlap_pairs: typed(
            settings,
            "scenario.overlap_pairs",
            default_scenario.overlap_pairs,
        )?,
        overlap_gap: typed(settings, "scenario.overlap_gap", default_scenario.overlap_gap)?,
        train_fraction: typed(
            settings,
            "scenario.train_fraction",
            default_scenario.train_fraction,
        )?,
        query_fraction: typed(
            settings,
            "scenario.query_fraction",
            default_scenario.query_fraction,
        )?,
        seed,
    };

    validate(&train)?;
    Ok(ResolvedConfig { train, scenario })
}

fn validate(train: &TrainConfig) -> Result<()> {
    if train.epochs == 0 {
        return Err(Error::Config("epochs must be >= 1".into()));
    }
    if train.batch_size == 0 || train.instances_per_cluster == 0 {
        return Err(Error::Config(
            "batch_size and instances_per_cluster must be >= 1".into(),
        ));
    }
    if train.batch_size % train.instances_per_cluster != 0 {
        return Err(Error::Config(format!(
            "batch_size {} must be divisible by instances_per_cluster {}",
            train.batch_size, train.instances_per_cluster
        )));
    }
    if !(train.learning_rate > 0.0) {
        return Err(Error::Config(format!(
            "learning_rate must be > 0, got {}",
            train.learning_rate
        )));
    }
    if !(train.lr_decay_factor > 0.0) {
        return Err(Error::Config(format!(
            "lr_decay_factor must be > 0, got {}",
            train.lr_decay_factor
        )));
    }
    if !(train.cluster.eps > 0.0) {
        return Err(Error::Config(format!(
            "cluster.eps must be > 0, got {}",
            train.cluster.eps
        )));
    }
    if train.cluster.min_points == 0 {
        return Err(Error::Config("cluster.min_points must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&train.memory.mu) {
        return Err(Error::Config(format!(
            "memory.mu must lie in [0, 1], got {}",
            train.memory.mu
        )));
    }
    if !(train.pli.lambda0.is_finite() && train.pli.lambda0 >= 0.0) {
        return Err(Error::Config(format!(
            "pli.lambda0 must be finite and >= 0, got {}",
            train.pli.lambda0
        )));
    }
    if train.pli.k == 0 {
        return Err(Error::Config("pli.k must be >= 1".into()));
    }
    if train.loss.tau1 <= 0.0 || train.loss.tau2 <= 0.0 {
        return Err(Error::Config(
            "loss.tau1 and loss.tau2 must be > 0".into(),
        ));
    }
    if train.loss.beta < 0.0 {
        return Err(Error::Config(format!(
            "loss.beta must be >= 0, got {}",
            train.loss.beta
        )));
    }
    if train.mode == TrainMode::Baseline
        && train.loss.beta > 0.0
        && train.loss.lp_variant == LpVariant::Support
    {
        return Err(Error::Config(
            "BASELINE mode generates no support samples; loss.beta > 0 requires \
             loss.lp_variant = ACTUAL"
                .into(),
        ));
    }
    Ok(())
}

/// Deterministic full listing of the resolved configuration, one
/// `key = value` per line in [`KNOWN_KEYS`] order. Feeding the echo back
/// through [`Settings::parse`] and [`resolve`] reproduces the same config.
pub fn echo(config: &ResolvedConfig) -> String {
    let t = &config.train;
    let s = &config.scenario;
    let decay: Vec<String> = t.lr_decay_epochs.iter().map(|e| e.to_string()).collect();
    let pairs: Vec<(&str, String)> = vec![
        ("mode", t.mode.to_string()),
        ("epochs", t.epochs.to_string()),
        ("batch_size", t.batch_size.to_string()),
        ("instances_per_cluster", t.instances_per_cluster.to_string()),
        ("learning_rate", format!("{:?}", t.learning_rate)),
        ("lr_decay_epochs", decay.join(",")),
        ("lr_decay_factor", format!("{:?}", t.lr_decay_factor)),
        ("seed", t.seed.to_string()),
        ("cluster.eps", format!("{:?}", t.cluster.eps)),
        ("cluster.min_points", t.cluster.min_points.to_string()),
        ("memory.mu", format!("{:?}", t.memory.mu)),
        ("memory.update_mode", t.memory.update_mode.to_string()),
        ("pli.lambda0", format!("{:?}", t.pli.lambda0)),
        ("pli.schedule", t.pli.schedule.to_string()),
        ("pli.direction", t.pli.direction.to_string()),
        ("pli.k", t.pli.k.to_string()),
        ("loss.beta", format!("{:?}", t.loss.beta)),
        ("loss.tau1", format!("{:?}", t.loss.tau1)),
        ("loss.tau2", format!("{:?}", t.loss.tau2)),
        ("loss.lp_variant", t.loss.lp_variant.to_string()),
        ("scenario.n_identities", s.n_identities.to_string()),
        (
            "scenario.samples_per_identity",
            s.samples_per_identity.to_string(),
        ),
        ("scenario.d", s.d.to_string()),
        ("scenario.intra_spread", format!("{:?}", s.intra_spread)),
        ("scenario.split_fraction", format!("{:?}", s.split_fraction)),
        ("scenario.split_gap", format!("{:?}", s.split_gap)),
        ("scenario.overlap_pairs", s.overlap_pairs.to_string()),
        ("scenario.overlap_gap", format!("{:?}", s.overlap_gap)),
        ("scenario.train_fraction", format!("{:?}", s.train_fraction)),
        ("scenario.query_fraction", format!("{:?}", s.query_fraction)),
    ];
    debug_assert_eq!(pairs.len(), KNOWN_KEYS.len());
    let mut out = String::new();
    for (key, value) in pairs {
        out.push_str(&format!("{key} = {value}\n"));
    }
    out
}
