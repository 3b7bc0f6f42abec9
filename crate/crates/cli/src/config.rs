//! Run configuration: a TOML file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use dcdcsr::data::RatingScale;
use dcdcsr::dnnmap::MapTrainConfig;
use dcdcsr::eval::{ExperimentConfig, Method};
use dcdcsr::mf::{MfConfig, MfKind};
use dcdcsr::{PipelineConfig, Task};
use serde::{Deserialize, Serialize};

/// Everything one experiment needs. Only the two dataset paths lack a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    /// Run directory. Not written to the snapshot, so two run directories
    /// from the same config hold identical files.
    #[serde(skip_serializing)]
    pub output: Option<PathBuf>,
    pub scale: RatingScale,
    /// Fraction of target ratings, earliest first, used for training.
    pub split: f64,
    pub k_neighbors: usize,
    pub d_layers: usize,
    pub top_n: usize,
    pub seeds: Vec<u64>,
    /// Defaults to the standard comparison set for `mf.model`.
    pub methods: Option<Vec<Method>>,
    pub mf: MfConfig,
    pub map: MapTrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::new(Task::Cdr, MfKind::Pmf);
        Self {
            task: p.task,
            source: None,
            target: None,
            output: None,
            scale: RatingScale::default(),
            split: 0.8,
            k_neighbors: p.k_neighbors,
            d_layers: p.d_layers,
            top_n: p.top_n,
            seeds: vec![1, 2, 3, 4, 5],
            methods: None,
            mf: p.mf,
            map: p.map,
        }
    }
}

/// Flags shared by every subcommand that reads a configuration.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML configuration file. Without it, a run directory's saved
    /// configuration is used when `--output` points at one.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Run directory
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Source-domain rating file
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Target-domain rating file
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// CDR (shared users) or CSR (shared items)
    #[arg(long)]
    pub task: Option<Task>,
    /// PMF, MMMF or BPR
    #[arg(long)]
    pub model: Option<MfKind>,
    /// Latent dimension K
    #[arg(long)]
    pub dim: Option<usize>,
    /// Factorization epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mapping-network epochs
    #[arg(long)]
    pub map_epochs: Option<usize>,
    /// Comma-separated seed list
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Comma-separated method names, e.g. PMF_DCDCSR,PMF
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    /// Training fraction of the chronological split
    #[arg(long)]
    pub split: Option<f64>,
}

pub const SNAPSHOT: &str = "config.toml";

impl RunConfig {
    /// Parses a config file; relative dataset paths are taken relative to
    /// the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.source, &mut cfg.target, &mut cfg.output].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Applies flag > file > default precedence.
    pub fn resolve(args: &ConfigArgs) -> Result<Self> {
        let file = match (&args.config, &args.output) {
            (Some(c), _) => Some(c.clone()),
            (None, Some(dir)) if dir.join(SNAPSHOT).is_file() => Some(dir.join(SNAPSHOT)),
            _ => None,
        };
        let mut cfg = match file {
            Some(f) => Self::from_file(&f)?,
            None => Self::default(),
        };
        macro_rules! set {
            ($flag:expr => $field:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        set!(args.task => cfg.task);
        set!(args.model => cfg.mf.model);
        set!(args.dim => cfg.mf.dim);
        set!(args.epochs => cfg.mf.epochs);
        set!(args.map_epochs => cfg.map.max_epochs);
        set!(args.seeds => cfg.seeds);
        set!(args.split => cfg.split);
        if args.methods.is_some() {
            cfg.methods = args.methods.clone();
        }
        if args.source.is_some() {
            cfg.source = args.source.clone();
        }
        if args.target.is_some() {
            cfg.target = args.target.clone();
        }
        if args.output.is_some() {
            cfg.output = args.output.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.source.is_none() || self.target.is_none() {
            bail!("config: both `source` and `target` dataset paths are required");
        }
        if self.output.is_none() {
            bail!("config: no run directory; set `output` or pass --output");
        }
        if self.seeds.is_empty() {
            bail!("config: `seeds` must list at least one seed");
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            bail!("config: `split` must lie strictly between 0 and 1, got {}", self.split);
        }
        if matches!(&self.methods, Some(m) if m.is_empty()) {
            bail!("config: `methods` must not be empty");
        }
        Ok(())
    }

    pub fn source(&self) -> &Path {
        self.source.as_deref().expect("validated")
    }

    pub fn target(&self) -> &Path {
        self.target.as_deref().expect("validated")
    }

    pub fn output(&self) -> &Path {
        self.output.as_deref().expect("validated")
    }

    pub fn pipeline(&self, seed: u64) -> PipelineConfig {
        PipelineConfig {
            task: self.task,
            mf: self.mf.clone(),
            k_neighbors: self.k_neighbors,
            map: self.map.clone(),
            d_layers: self.d_layers,
            top_n: self.top_n,
            seed,
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            pipeline: self.pipeline(0),
            methods: self.methods.clone().unwrap_or_else(|| Method::standard(self.mf.model)),
            seeds: self.seeds.clone(),
        }
    }

    /// Snapshot stored in the run directory, with absolute dataset paths.
    pub fn snapshot(&self) -> Result<String> {
        let mut c = self.clone();
        for p in [&mut c.source, &mut c.target].into_iter().flatten() {
            *p = std::path::absolute(&*p).with_context(|| format!("cannot resolve {}", p.display()))?;
        }
        Ok(toml::to_string(&c)?)
    }
}
