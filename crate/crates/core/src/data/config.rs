//! Experiment configuration: a TOML file with sections, layered under
//! `key=value` overrides. Missing keys take the documented defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::dataset::{gen_blobs, Dataset};
use super::idx::load_idx;
use crate::error::{Error, Result};
use crate::fedsim::{Aggregator, FlSetup, PartitionScheme, DEFAULT_MU};
use crate::nn::{ModelSpec, SgdHyper};
use crate::rng::{self, RunSeeds};
use crate::sampler::{SamplingStrategy, TrainRunConfig, DEFAULT_EPSILON};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    task: Option<String>,
    seed: Option<u64>,
    output: Option<PathBuf>,
    #[serde(default)]
    model: RawModel,
    #[serde(default)]
    data: RawData,
    #[serde(default)]
    train: RawTrain,
    #[serde(default)]
    strategy: RawStrategy,
    #[serde(default)]
    fedsim: RawFedsim,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    hidden: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    source: Option<String>,
    n: Option<usize>,
    dim: Option<usize>,
    classes: Option<usize>,
    spread: Option<f64>,
    val_fraction: Option<f64>,
    images: Option<PathBuf>,
    labels: Option<PathBuf>,
    path: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    eta: Option<f64>,
    momentum: Option<f64>,
    weight_decay: Option<f64>,
    epsilon: Option<f64>,
    dump_errors: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStrategy {
    kind: Option<String>,
    period: Option<usize>,
    p: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFedsim {
    clients: Option<usize>,
    selected: Option<usize>,
    rounds: Option<usize>,
    local_epochs: Option<usize>,
    aggregator: Option<String>,
    mu: Option<f64>,
    partition: Option<String>,
    weights: Option<Vec<f64>>,
}

/// Every accepted `(section, key)`; the empty section is the top level.
const KNOWN_KEYS: &[(&str, &str)] = &[
    ("", "task"),
    ("", "seed"),
    ("", "output"),
    ("model", "hidden"),
    ("data", "source"),
    ("data", "n"),
    ("data", "dim"),
    ("data", "classes"),
    ("data", "spread"),
    ("data", "val_fraction"),
    ("data", "images"),
    ("data", "labels"),
    ("data", "path"),
    ("train", "epochs"),
    ("train", "batch_size"),
    ("train", "eta"),
    ("train", "momentum"),
    ("train", "weight_decay"),
    ("train", "epsilon"),
    ("train", "dump_errors"),
    ("strategy", "kind"),
    ("strategy", "period"),
    ("strategy", "p"),
    ("fedsim", "clients"),
    ("fedsim", "selected"),
    ("fedsim", "rounds"),
    ("fedsim", "local_epochs"),
    ("fedsim", "aggregator"),
    ("fedsim", "mu"),
    ("fedsim", "partition"),
    ("fedsim", "weights"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Train,
    Fedsim,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        n: usize,
        dim: usize,
        classes: usize,
        spread: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    Csv {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub seed: u64,
    pub output: PathBuf,
    pub hidden: Vec<usize>,
    pub data: DataSource,
    pub val_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hyper: SgdHyper,
    pub epsilon: f64,
    pub dump_errors: Vec<usize>,
    pub strategy: SamplingStrategy,
    pub clients: usize,
    pub selected: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub aggregator: Aggregator,
    pub partition: PartitionScheme,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        from_raw(RawConfig::default(), Path::new(".")).expect("defaults are valid")
    }
}

fn resolve_key(key: &str) -> Result<(&'static str, &'static str)> {
    let (section, name) = match key.split_once('.') {
        Some((s, n)) => (Some(s), n),
        None => (None, key),
    };
    if section.is_none() && name == "strategy" {
        return Ok(("strategy", "kind"));
    }
    let matches: Vec<_> = KNOWN_KEYS
        .iter()
        .filter(|(s, n)| *n == name && section.is_none_or(|want| want == *s))
        .collect();
    match matches.as_slice() {
        [one] => Ok(**one),
        [] => Err(Error::Config(format!("unknown key `{key}`"))),
        _ => Err(Error::Config(format!(
            "ambiguous key `{key}`; qualify it with its section"
        ))),
    }
}

/// Parses an override value as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `key=value` overrides to a parsed table.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
        let (section, name) = resolve_key(key.trim())?;
        let value = parse_value(value.trim());
        let target = if section.is_empty() {
            &mut *table
        } else {
            let entry = table
                .entry(section)
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            entry
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{section}` must be a section")))?
        };
        target.insert(name.to_string(), value);
    }
    Ok(())
}

/// Parses config text (paths resolve against `base_dir`) with overrides applied.
pub fn parse_config(text: &str, base_dir: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    apply_overrides(&mut table, overrides)?;
    let raw: RawConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    from_raw(raw, base_dir)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base, overrides).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn parse_strategy(raw: &RawStrategy) -> Result<SamplingStrategy> {
    let period = || {
        raw.period.ok_or_else(|| {
            Error::Config("strategy.period is required for periodic strategies".into())
        })
    };
    let p = || {
        raw.p
            .ok_or_else(|| Error::Config("strategy.p is required for random strategies".into()))
    };
    let strategy = match raw.kind.as_deref().unwrap_or("never") {
        "never" | "none" => SamplingStrategy::Never,
        "periodic" | "pe" => SamplingStrategy::Periodic { period: period()? },
        "probabilistic" | "pr" => SamplingStrategy::Probabilistic { p: p()? },
        "delayed-periodic" | "dp" => SamplingStrategy::DelayedPeriodic { period: period()? },
        "delayed-random" | "dr" => SamplingStrategy::DelayedRandom { p: p()? },
        other => {
            return Err(Error::Config(format!(
                "strategy.kind: unknown strategy `{other}`"
            )))
        }
    };
    strategy
        .validate()
        .map_err(|e| Error::Config(format!("strategy: {e}")))?;
    Ok(strategy)
}

fn from_raw(raw: RawConfig, base_dir: &Path) -> Result<ExperimentConfig> {
    let cfg_err = |m: String| Error::Config(m);
    let resolve = |p: PathBuf| if p.is_absolute() { p } else { base_dir.join(p) };
    let existing = |key: &str, p: Option<PathBuf>| -> Result<PathBuf> {
        let p = resolve(p.ok_or_else(|| cfg_err(format!("data.{key} is required")))?);
        if !p.exists() {
            return Err(cfg_err(format!(
                "data.{key}: {} does not exist",
                p.display()
            )));
        }
        Ok(p)
    };

    let task = match raw.task.as_deref().unwrap_or("train") {
        "train" => Task::Train,
        "fedsim" => Task::Fedsim,
        other => return Err(cfg_err(format!("task: unknown task `{other}`"))),
    };
    let d = raw.data;
    let data = match d.source.as_deref().unwrap_or("synthetic") {
        "synthetic" => DataSource::Synthetic {
            n: d.n.unwrap_or(3000),
            dim: d.dim.unwrap_or(2),
            classes: d.classes.unwrap_or(3),
            spread: d.spread.unwrap_or(0.35),
        },
        "idx" => DataSource::Idx {
            images: existing("images", d.images)?,
            labels: existing("labels", d.labels)?,
        },
        "csv" => DataSource::Csv {
            path: existing("path", d.path)?,
        },
        other => return Err(cfg_err(format!("data.source: unknown source `{other}`"))),
    };
    let t = raw.train;
    let hyper = SgdHyper {
        eta: t.eta.unwrap_or(0.001),
        momentum: t.momentum.unwrap_or(0.9),
        weight_decay: t.weight_decay.unwrap_or(0.001),
    };
    hyper
        .validate()
        .map_err(|e| cfg_err(format!("train: {e}")))?;
    let f = raw.fedsim;
    let aggregator = match f.aggregator.as_deref().unwrap_or("fedavg") {
        "fedavg" => Aggregator::FedAvg,
        "fedprox" => Aggregator::FedProx {
            mu: f.mu.unwrap_or(DEFAULT_MU),
        },
        other => {
            return Err(cfg_err(format!(
                "fedsim.aggregator: unknown aggregator `{other}`"
            )))
        }
    };
    let partition = match f.partition.as_deref().unwrap_or("iid-equal") {
        "iid-equal" => PartitionScheme::IidEqual,
        "iid-weighted" => PartitionScheme::IidWeighted {
            weights: f
                .weights
                .ok_or_else(|| cfg_err("fedsim.weights is required for iid-weighted".into()))?,
        },
        other => {
            return Err(cfg_err(format!(
                "fedsim.partition: unknown scheme `{other}`"
            )))
        }
    };

    let cfg = ExperimentConfig {
        task,
        seed: raw.seed.unwrap_or(0),
        output: resolve(raw.output.unwrap_or_else(|| PathBuf::from("runs"))),
        hidden: raw.model.hidden.unwrap_or_else(|| vec![64]),
        data,
        val_fraction: d.val_fraction.unwrap_or(0.2),
        epochs: t.epochs.unwrap_or(100),
        batch_size: t.batch_size.unwrap_or(32),
        hyper,
        epsilon: t.epsilon.unwrap_or(DEFAULT_EPSILON),
        dump_errors: t.dump_errors.unwrap_or_default(),
        strategy: parse_strategy(&raw.strategy)?,
        clients: f.clients.unwrap_or(5),
        selected: f.selected.unwrap_or(2),
        rounds: f.rounds.unwrap_or(20),
        local_epochs: f.local_epochs.unwrap_or(5),
        aggregator,
        partition,
    };
    match cfg.task {
        Task::Train => cfg
            .train_run_config()
            .validate()
            .map_err(|e| cfg_err(format!("train: {e}")))?,
        Task::Fedsim => cfg
            .fl_setup()
            .validate()
            .map_err(|e| cfg_err(format!("fedsim: {e}")))?,
    }
    if !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(cfg_err(format!(
            "data.val_fraction must lie in [0, 1), got {}",
            cfg.val_fraction
        )));
    }
    Ok(cfg)
}

fn load_csv_dataset(path: &Path) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, e.to_string()))?
        .clone();
    let label_col = headers
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| Error::parse(path, "missing `label` column"))?;
    let dim = headers.len() - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, e.to_string()))?;
        for (i, v) in rec.iter().enumerate() {
            let bad = || Error::parse(path, format!("row {}: bad value `{v}`", line + 2));
            if i == label_col {
                labels.push(v.trim().parse::<usize>().map_err(|_| bad())?);
            } else {
                features.push(v.trim().parse::<f64>().map_err(|_| bad())?);
            }
        }
    }
    let classes = labels.iter().max().map_or(2, |m| (m + 1).max(2));
    Dataset::new(features, dim, labels, classes)
}

impl ExperimentConfig {
    /// Loads or generates the dataset and splits off the validation rows.
    pub fn load_datasets(&self) -> Result<(Dataset, Dataset)> {
        let full = match &self.data {
            DataSource::Synthetic {
                n,
                dim,
                classes,
                spread,
            } => gen_blobs(
                *n,
                *dim,
                *classes,
                *spread,
                rng::derive_seed(self.seed, "data"),
            )?,
            DataSource::Idx { images, labels } => load_idx(images, labels)?,
            DataSource::Csv { path } => load_csv_dataset(path)?,
        };
        full.split(self.val_fraction, rng::derive_seed(self.seed, "split"))
    }

    pub fn model_spec(&self, input: usize, classes: usize) -> Result<ModelSpec> {
        ModelSpec::mlp(input, &self.hidden, classes)
    }

    pub fn train_run_config(&self) -> TrainRunConfig {
        TrainRunConfig {
            epochs: self.epochs,
            strategy: self.strategy,
            hyper: self.hyper,
            batch_size: self.batch_size,
            epsilon: self.epsilon,
            seeds: RunSeeds::from_master(self.seed),
            capture_errors: self.dump_errors.clone(),
        }
    }

    pub fn fl_setup(&self) -> FlSetup {
        FlSetup {
            total_clients: self.clients,
            selected_per_round: self.selected,
            rounds: self.rounds,
            local_epochs: self.local_epochs,
            aggregator: self.aggregator,
            round_strategy: self.strategy,
            partition: self.partition.clone(),
            hyper: self.hyper,
            batch_size: self.batch_size,
            epsilon: self.epsilon,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, overrides: &[&str]) -> Result<ExperimentConfig> {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        parse_config(text, Path::new("/tmp"), &o)
    }

    #[test]
    fn defaults_follow_training_recipe() {
        let cfg = parse("", &[]).unwrap();
        assert_eq!(
            cfg.hyper,
            SgdHyper {
                eta: 0.001,
                momentum: 0.9,
                weight_decay: 0.001
            }
        );
        assert_eq!(cfg.epsilon, 0.001);
        assert_eq!(cfg.strategy, SamplingStrategy::Never);
        assert_eq!(
            parse("task = \"fedsim\"\n[fedsim]\naggregator = \"fedprox\"", &[])
                .unwrap()
                .aggregator,
            Aggregator::FedProx { mu: 0.2 }
        );
    }

    #[test]
    fn empty_strategy_section_is_never() {
        assert_eq!(
            parse("[strategy]\n", &[]).unwrap().strategy,
            SamplingStrategy::Never
        );
    }

    #[test]
    fn periodic_mapping_and_validation() {
        let cfg = parse("[strategy]\nkind = \"periodic\"\nperiod = 5\n", &[]).unwrap();
        assert_eq!(cfg.strategy, SamplingStrategy::Periodic { period: 5 });
        let cfg = parse("", &["strategy=periodic", "period=5"]).unwrap();
        assert_eq!(cfg.strategy, SamplingStrategy::Periodic { period: 5 });
        let err = parse("", &["strategy=periodic", "period=1"]).unwrap_err();
        assert!(err.to_string().contains("period"), "{err}");
    }

    #[test]
    fn overrides_take_precedence() {
        let cfg = parse(
            "[train]\nepochs = 10\n",
            &["epochs=12", "train.eta=0.01", "hidden=[8, 4]"],
        )
        .unwrap();
        assert_eq!(cfg.epochs, 12);
        assert_eq!(cfg.hyper.eta, 0.01);
        assert_eq!(cfg.hidden, vec![8, 4]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse("[train]\nepochz = 3\n", &[]).unwrap_err();
        assert!(err.to_string().contains("epochz"), "{err}");
        let err = parse("", &["bogus=1"]).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        assert!(parse("", &["noequals"]).is_err());
    }

    #[test]
    fn missing_data_files_are_config_errors() {
        let err = parse(
            "[data]\nsource = \"idx\"\nimages = \"nope.idx\"\nlabels = \"nope.idx\"\n",
            &[],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn csv_source_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(
            &path,
            "x,y,label\n0.0,1.0,0\n1.0,0.0,1\n0.5,0.5,1\n0.1,0.9,0\n0.9,0.1,1\n",
        )
        .unwrap();
        let cfg = parse_config(
            "[data]\nsource = \"csv\"\npath = \"d.csv\"\nval_fraction = 0.2\n",
            dir.path(),
            &[],
        )
        .unwrap();
        let (train, val) = cfg.load_datasets().unwrap();
        assert_eq!(
            (train.len(), val.len(), train.dim(), train.classes()),
            (4, 1, 2, 2)
        );
    }
}
