use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod manifest;

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] poivre_core::Error),
    #[error(transparent)]
    Vlm(#[from] poivre_vlm::VlmError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use poivre_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Vlm(poivre_vlm::VlmError::Config(_)) => 2,
            CliError::Vlm(_) => 4,
            CliError::Core(e) => match e {
                E::InvalidInput(_) => 2,
                E::Endpoint(_) | E::Parse(_) => 4,
                E::Numeric(_) => 5,
                _ => 3,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "poivre", version, about = "Point, visualize, refine: multi-turn visual pointing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the toy Gaussian policy with GRPO.
    Train(Flags),
    /// Evaluate a toy checkpoint or a remote model.
    Eval(Flags),
    /// Run one trajectory and save every marked image.
    Infer(Flags),
    /// Evaluate at several turn counts.
    Sweep(Flags),
    /// Print both forms of the process reward for a distance sequence.
    Reward(Flags),
    /// Re-run a previous run from its manifest.
    Replay {
        /// Path to a manifest.json written by an earlier run.
        manifest: PathBuf,
        /// Output directory; defaults to the original one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Flags shared by the subcommands. Unset flags leave the config value.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML config file, applied before the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub turns: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub kl_beta: Option<f64>,
    #[arg(long)]
    pub clip_eps: Option<f64>,
    /// process_reward, outcome_reward or vanilla_single_turn.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_tasks: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Dataset JSONL for eval and sweep.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Number of synthetic held-out tasks when no dataset is given.
    #[arg(long)]
    pub toy_tasks: Option<usize>,
    /// Toy checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Base URL of an OpenAI-compatible endpoint.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Turn counts for `sweep`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub t_values: Option<Vec<usize>>,
    /// any_point_in_mask or first_point_in_mask.
    #[arg(long)]
    pub rule: Option<String>,
    /// json or csv.
    #[arg(long)]
    pub format: Option<String>,
    /// Image for `infer`; a synthetic scene is used otherwise.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub query: Option<String>,
    /// Scene seed for `infer` without an image.
    #[arg(long)]
    pub toy_seed: Option<u64>,
    /// Distances for `reward`, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub distances: Option<Vec<f64>>,
    /// File of distances for `reward`, separated by commas or whitespace.
    #[arg(long)]
    pub distances_file: Option<PathBuf>,
}

impl Flags {
    /// Defaults, then the config file, then these flags.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => config::load_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        let t = &mut cfg.train;
        if let Some(v) = &self.mode {
            t.mode = v.parse()?;
        }
        if let Some(v) = self.turns {
            t.reward.turns = v;
            t.rollout.turns = v;
            cfg.eval.turns = v;
        }
        if let Some(v) = self.gamma {
            t.reward.gamma = v;
        }
        if let Some(v) = self.sigma {
            t.reward.sigma = v;
        }
        if let Some(v) = self.group_size {
            t.grpo.group_size = v;
        }
        if let Some(v) = self.kl_beta {
            t.grpo.kl_beta = v;
        }
        if let Some(v) = self.clip_eps {
            t.grpo.clip_epsilon = v;
        }
        if let Some(v) = self.iterations {
            t.grpo.iterations = v;
        }
        if let Some(v) = self.batch_tasks {
            t.grpo.batch_tasks = v;
        }
        if let Some(v) = self.lr {
            t.grpo.learning_rate = v;
        }
        t.grpo.seed = cfg.seed;

        let e = &mut cfg.eval;
        if let Some(v) = &self.dataset {
            e.dataset = Some(v.clone());
        }
        if let Some(v) = self.toy_tasks {
            e.toy_tasks = v;
        }
        if let Some(v) = &self.checkpoint {
            e.checkpoint = Some(v.clone());
        }
        if let Some(v) = &self.t_values {
            e.t_values = v.clone();
        }
        if let Some(v) = &self.rule {
            e.rule = v.parse()?;
        }
        if let Some(v) = &self.format {
            e.format = v.clone();
        }
        if self.endpoint.is_some() || self.model.is_some() {
            let ep = cfg.endpoint.get_or_insert_with(Default::default);
            if let Some(v) = &self.endpoint {
                ep.base_url = v.clone();
            }
            if let Some(v) = &self.model {
                ep.model = v.clone();
            }
        }
        let i = &mut cfg.infer;
        if let Some(v) = &self.image {
            i.image = Some(v.clone());
        }
        if let Some(v) = &self.query {
            i.query = Some(v.clone());
        }
        if let Some(v) = self.toy_seed {
            i.toy_seed = v;
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(f) => commands::train(&f),
        Command::Eval(f) => commands::eval(&f),
        Command::Infer(f) => commands::infer(&f),
        Command::Sweep(f) => commands::sweep(&f),
        Command::Reward(f) => commands::reward(&f),
        Command::Replay { manifest, out } => commands::replay(&manifest, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
