//! `iea`: train, evaluate, sweep, ensemble and analyze IEA models.

mod commands;
mod error;
mod spec;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;
use crate::spec::{parse_config, Command, RunSpec};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser, Debug)]
#[command(name = "iea", version, about = "Inner ensemble average CNN experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train one model per seed; writes checkpoints and metrics CSVs.
    Train(Flags),
    /// Test error of each checkpoint.
    Eval(Flags),
    /// Train every (m, seed) pair and aggregate test error per m.
    SweepM(Flags),
    /// Average the class probabilities of several checkpoints.
    Ensemble(Flags),
    /// Export one layer's feature maps for a probe sample and score them.
    Analyze(Flags),
}

/// Flags override values from `--config`. Lists are comma-separated.
#[derive(Args, Debug)]
struct Flags {
    /// Output directory; must be empty or absent unless --force.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
    /// File of key=value lines using the flag names (dashes or underscores).
    #[arg(long)]
    config: Option<PathBuf>,

    /// idx, amat or synth.
    #[arg(long)]
    format: Option<String>,
    /// IDX directory or amat file.
    #[arg(long)]
    data: Option<String>,
    /// TRAIN,TEST row counts taken from an amat file.
    #[arg(long)]
    amat_split: Option<String>,
    /// amat pixels are stored column-major.
    #[arg(long)]
    transpose: bool,
    /// Training samples kept (a count or "all").
    #[arg(long)]
    limit_train: Option<String>,
    /// Test samples kept (a count or "all").
    #[arg(long)]
    limit_test: Option<String>,
    #[arg(long)]
    synth_train: Option<String>,
    #[arg(long)]
    synth_test: Option<String>,
    #[arg(long)]
    synth_classes: Option<String>,
    #[arg(long)]
    data_seed: Option<String>,

    #[arg(long)]
    depth: Option<String>,
    /// Inner ensemble members per layer.
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    m_list: Option<String>,
    /// Output width of each layer.
    #[arg(long)]
    channels: Option<String>,
    /// Side of the average-pool grid before the classifier.
    #[arg(long)]
    head_grid: Option<String>,
    #[arg(long)]
    seeds: Option<String>,

    #[arg(long)]
    lr0: Option<String>,
    #[arg(long)]
    momentum: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    lr_drop_factor: Option<String>,
    #[arg(long)]
    lr_drop_every: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,

    /// Checkpoint file; repeat for several.
    #[arg(long = "checkpoint")]
    checkpoints: Vec<String>,
    /// Layer whose feature maps are analyzed.
    #[arg(long)]
    layer: Option<String>,
    /// Test sample fed through the model for analysis.
    #[arg(long)]
    probe_index: Option<String>,
}

impl Flags {
    fn overrides(&self) -> Vec<(&'static str, Option<String>)> {
        let flag = |b: bool| b.then(|| "true".to_string());
        let list = |v: &[String]| (!v.is_empty()).then(|| v.join(","));
        vec![
            ("format", self.format.clone()),
            ("data", self.data.clone()),
            ("amat_split", self.amat_split.clone()),
            ("transpose", flag(self.transpose)),
            ("limit_train", self.limit_train.clone()),
            ("limit_test", self.limit_test.clone()),
            ("synth_train", self.synth_train.clone()),
            ("synth_test", self.synth_test.clone()),
            ("synth_classes", self.synth_classes.clone()),
            ("data_seed", self.data_seed.clone()),
            ("depth", self.depth.clone()),
            ("m", self.m.clone()),
            ("m_list", self.m_list.clone()),
            ("channels", self.channels.clone()),
            ("head_grid", self.head_grid.clone()),
            ("seeds", self.seeds.clone()),
            ("lr0", self.lr0.clone()),
            ("momentum", self.momentum.clone()),
            ("weight_decay", self.weight_decay.clone()),
            ("lr_drop_factor", self.lr_drop_factor.clone()),
            ("lr_drop_every", self.lr_drop_every.clone()),
            ("epochs", self.epochs.clone()),
            ("batch_size", self.batch_size.clone()),
            ("checkpoints", list(&self.checkpoints)),
            ("layer", self.layer.clone()),
            ("probe_index", self.probe_index.clone()),
        ]
    }

    fn resolve(&self, command: Command) -> Result<RunSpec, CliError> {
        let mut map = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.clone(), e))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        for (key, value) in self.overrides() {
            if let Some(v) = value {
                map.insert(key.to_string(), v);
            }
        }
        RunSpec::from_map(command, &map, self.out.clone())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (command, flags) = match &cli.command {
        Cmd::Train(f) => (Command::Train, f),
        Cmd::Eval(f) => (Command::Eval, f),
        Cmd::SweepM(f) => (Command::SweepM, f),
        Cmd::Ensemble(f) => (Command::Ensemble, f),
        Cmd::Analyze(f) => (Command::Analyze, f),
    };
    let spec = flags.resolve(command)?;
    commands::prepare_out(&spec, flags.force)?;
    match command {
        Command::Train => commands::train(&spec),
        Command::Eval => commands::eval(&spec),
        Command::SweepM => commands::sweep_m(&spec),
        Command::Ensemble => commands::ensemble(&spec),
        Command::Analyze => commands::analyze(&spec),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
