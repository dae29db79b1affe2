//! Run specification: defaults, then a `key=value` config file, then flags.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use iea_core::SgdConfig;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Train,
    Eval,
    SweepM,
    Ensemble,
    Analyze,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Eval => "eval",
            Command::SweepM => "sweep-m",
            Command::Ensemble => "ensemble",
            Command::Analyze => "analyze",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    Idx,
    Amat,
    Synth,
}

impl FromStr for DataFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "idx" => Ok(DataFormat::Idx),
            "amat" => Ok(DataFormat::Amat),
            "synth" => Ok(DataFormat::Synth),
            _ => Err("expected idx, amat or synth".into()),
        }
    }
}

impl fmt::Display for DataFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataFormat::Idx => "idx",
            DataFormat::Amat => "amat",
            DataFormat::Synth => "synth",
        })
    }
}

/// Every key accepted in a config file, in `runspec.txt` order.
pub const KEYS: &[&str] = &[
    "command",
    "format",
    "data",
    "amat_split",
    "transpose",
    "limit_train",
    "limit_test",
    "synth_train",
    "synth_test",
    "synth_classes",
    "data_seed",
    "depth",
    "m",
    "m_list",
    "channels",
    "head_grid",
    "seeds",
    "lr0",
    "momentum",
    "weight_decay",
    "lr_drop_factor",
    "lr_drop_every",
    "epochs",
    "batch_size",
    "checkpoints",
    "layer",
    "probe_index",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub command: Command,
    pub format: DataFormat,
    pub data: Option<PathBuf>,
    pub amat_split: (usize, usize),
    pub transpose: bool,
    /// `None` keeps the whole split.
    pub limit_train: Option<usize>,
    pub limit_test: Option<usize>,
    pub synth_train: usize,
    pub synth_test: usize,
    pub synth_classes: usize,
    pub data_seed: u64,
    pub depth: usize,
    pub m: usize,
    pub m_list: Vec<usize>,
    /// One width per layer; `None` uses the default widths.
    pub channels: Option<Vec<usize>>,
    pub head_grid: usize,
    pub seeds: Vec<u64>,
    pub sgd: SgdConfig,
    pub checkpoints: Vec<PathBuf>,
    pub layer: usize,
    pub probe_index: usize,
    pub out: PathBuf,
}

/// Parses a config file: one `key = value` per line, `#` starts a comment.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Spec(format!("config line {}: expected key=value", i + 1)))?;
        let key = key.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::Spec(format!("config line {}: unknown key {key:?}", i + 1)));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

fn parse<T: FromStr>(map: &BTreeMap<String, String>, key: &str, default: T) -> Result<T, CliError>
where
    T::Err: fmt::Display,
{
    match map.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|e| CliError::Spec(format!("{key}: cannot parse {v:?}: {e}"))),
    }
}

fn parse_list<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<Vec<T>>, CliError>
where
    T::Err: fmt::Display,
{
    let Some(v) = map.get(key) else {
        return Ok(None);
    };
    if v.is_empty() {
        return Ok(Some(Vec::new()));
    }
    v.split(',')
        .map(|item| {
            item.trim()
                .parse()
                .map_err(|e| CliError::Spec(format!("{key}: cannot parse {item:?}: {e}")))
        })
        .collect::<Result<Vec<T>, _>>()
        .map(Some)
}

fn parse_limit(map: &BTreeMap<String, String>, key: &str, default: usize) -> Result<Option<usize>, CliError> {
    match map.get(key).map(String::as_str) {
        Some("all") => Ok(None),
        _ => parse(map, key, default).map(Some),
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunSpec {
    /// Builds a spec from resolved settings; unset keys take their defaults.
    pub fn from_map(command: Command, map: &BTreeMap<String, String>, out: PathBuf) -> Result<Self, CliError> {
        if let Some(c) = map.get("command") {
            if c != command.name() {
                return Err(CliError::Spec(format!(
                    "command: config is for {c:?} but {:?} was run",
                    command.name()
                )));
            }
        }
        let d = SgdConfig::default();
        let amat_split = parse_list::<usize>(map, "amat_split")?.unwrap_or_else(|| vec![50000, 12000]);
        let [amat_train, amat_test] = amat_split[..] else {
            return Err(CliError::Spec("amat_split: expected TRAIN,TEST".into()));
        };
        let m = parse(map, "m", 1usize)?;
        let spec = RunSpec {
            command,
            format: parse(map, "format", DataFormat::Idx)?,
            data: map.get("data").map(PathBuf::from),
            amat_split: (amat_train, amat_test),
            transpose: parse(map, "transpose", false)?,
            limit_train: parse_limit(map, "limit_train", 5000)?,
            limit_test: parse_limit(map, "limit_test", 1000)?,
            synth_train: parse(map, "synth_train", 200)?,
            synth_test: parse(map, "synth_test", 100)?,
            synth_classes: parse(map, "synth_classes", 4)?,
            data_seed: parse(map, "data_seed", 0)?,
            depth: parse(map, "depth", 1)?,
            m,
            m_list: parse_list(map, "m_list")?.unwrap_or_else(|| vec![m]),
            channels: parse_list(map, "channels")?,
            head_grid: parse(map, "head_grid", 2)?,
            seeds: parse_list(map, "seeds")?.unwrap_or_else(|| vec![0]),
            sgd: SgdConfig {
                lr0: parse(map, "lr0", d.lr0)?,
                momentum: parse(map, "momentum", d.momentum)?,
                weight_decay: parse(map, "weight_decay", d.weight_decay)?,
                lr_drop_factor: parse(map, "lr_drop_factor", d.lr_drop_factor)?,
                lr_drop_every: parse(map, "lr_drop_every", d.lr_drop_every)?,
                epochs: parse(map, "epochs", d.epochs)?,
                batch_size: parse(map, "batch_size", d.batch_size)?,
            },
            checkpoints: parse_list::<String>(map, "checkpoints")?
                .unwrap_or_default()
                .into_iter()
                .map(PathBuf::from)
                .collect(),
            layer: parse(map, "layer", 0)?,
            probe_index: parse(map, "probe_index", 0)?,
            out,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Spec(msg));
        if self.m == 0 {
            return bad("m: must be at least 1, got 0".into());
        }
        if self.m_list.is_empty() || self.m_list.contains(&0) {
            return bad(format!(
                "m_list: values must be at least 1, got [{}]",
                join(&self.m_list)
            ));
        }
        if self.depth == 0 {
            return bad("depth: must be at least 1, got 0".into());
        }
        if let Some(ch) = &self.channels {
            if ch.len() != self.depth || ch.contains(&0) {
                return bad(format!(
                    "channels: expected {} positive widths, got [{}]",
                    self.depth,
                    join(ch)
                ));
            }
        }
        if self.head_grid == 0 {
            return bad("head_grid: must be at least 1, got 0".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds: at least one seed is required".into());
        }
        if self.format != DataFormat::Synth && self.data.is_none() {
            return bad(format!("data: a path is required for format {}", self.format));
        }
        self.sgd.validate().map_err(|e| CliError::Spec(e.to_string()))
    }

    /// `key=value` text that reproduces this spec through `--config`.
    pub fn to_text(&self) -> String {
        let limit = |l: Option<usize>| l.map_or_else(|| "all".to_string(), |n| n.to_string());
        let paths = |ps: &[PathBuf]| ps.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        writeln!(
            s,
            "# iea {} --config runspec.txt --out {} --force",
            self.command.name(),
            self.out.display()
        )
        .unwrap();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").unwrap();
        kv("command", self.command.name().into());
        kv("format", self.format.to_string());
        if let Some(d) = &self.data {
            kv("data", d.display().to_string());
        }
        kv("amat_split", format!("{},{}", self.amat_split.0, self.amat_split.1));
        kv("transpose", self.transpose.to_string());
        kv("limit_train", limit(self.limit_train));
        kv("limit_test", limit(self.limit_test));
        kv("synth_train", self.synth_train.to_string());
        kv("synth_test", self.synth_test.to_string());
        kv("synth_classes", self.synth_classes.to_string());
        kv("data_seed", self.data_seed.to_string());
        kv("depth", self.depth.to_string());
        kv("m", self.m.to_string());
        kv("m_list", join(&self.m_list));
        if let Some(ch) = &self.channels {
            kv("channels", join(ch));
        }
        kv("head_grid", self.head_grid.to_string());
        kv("seeds", join(&self.seeds));
        kv("lr0", format!("{:?}", self.sgd.lr0));
        kv("momentum", format!("{:?}", self.sgd.momentum));
        kv("weight_decay", format!("{:?}", self.sgd.weight_decay));
        kv("lr_drop_factor", format!("{:?}", self.sgd.lr_drop_factor));
        kv("lr_drop_every", self.sgd.lr_drop_every.to_string());
        kv("epochs", self.sgd.epochs.to_string());
        kv("batch_size", self.sgd.batch_size.to_string());
        kv("checkpoints", paths(&self.checkpoints));
        kv("layer", self.layer.to_string());
        kv("probe_index", self.probe_index.to_string());
        s
    }
}
