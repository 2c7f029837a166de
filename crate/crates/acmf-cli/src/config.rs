//! Run configuration: defaults, optional TOML file, flag overrides.
//!
//! Precedence is flags over file values over built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use acmf::coupling::{CouplingConfig, Metric};
use acmf::dataset::RatingScale;
use acmf::factorization::{TrainConfig, VisitOrder};

/// Optional values loaded from a TOML config file. Field names match the
/// command-line flags.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub ratings: Option<PathBuf>,
    pub attributes: Option<PathBuf>,
    pub similarity: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub metric: Option<String>,
    pub neighbors: Option<usize>,
    pub normalize: Option<bool>,
    pub k: Option<usize>,
    pub beta: Option<f64>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub eta: Option<f64>,
    pub epochs: Option<usize>,
    pub epsilon: Option<f64>,
    pub folds: Option<usize>,
    pub seed: Option<u64>,
    pub scale_min: Option<f64>,
    pub scale_max: Option<f64>,
    pub visit_order: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))
    }
}

/// Flag values shared by every subcommand; `None` means "not given".
#[derive(Debug, Clone, Default, clap::Args)]
pub struct CommonOpts {
    /// Ratings TSV (MovieLens u.data or generic user<TAB>item<TAB>rating)
    #[arg(long)]
    pub ratings: Option<PathBuf>,
    /// Item attribute file (canonical TSV or MovieLens u.item)
    #[arg(long)]
    pub attributes: Option<PathBuf>,
    /// Similarity cache file
    #[arg(long)]
    pub similarity: Option<PathBuf>,
    /// Output directory for this run
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Similarity metric: cos or sms
    #[arg(long)]
    pub metric: Option<String>,
    /// Neighbors kept per item when sparsifying the similarity graph
    #[arg(long)]
    pub neighbors: Option<usize>,
    /// Latent dimension K
    #[arg(long)]
    pub k: Option<usize>,
    /// Item-relationship regularization weight
    #[arg(long)]
    pub beta: Option<f64>,
    /// User regularization weight
    #[arg(long)]
    pub lambda1: Option<f64>,
    /// Item regularization weight
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// SGD learning rate
    #[arg(long)]
    pub eta: Option<f64>,
    /// Epoch cap
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Convergence threshold on the per-epoch objective decrease
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Cross-validation fold count
    #[arg(long)]
    pub folds: Option<usize>,
    /// Seed for splits, initialization and shuffling
    #[arg(long)]
    pub seed: Option<u64>,
    /// Lower end of the rating scale
    #[arg(long)]
    pub scale_min: Option<f64>,
    /// Upper end of the rating scale
    #[arg(long)]
    pub scale_max: Option<f64>,
    /// Rating visit order: user-major, file or shuffle
    #[arg(long)]
    pub visit_order: Option<String>,
    /// Compute raw COS sums instead of dividing by the attribute count
    #[arg(long)]
    pub no_normalize: bool,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub ratings: Option<PathBuf>,
    pub attributes: Option<PathBuf>,
    pub similarity: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub metric: Metric,
    pub neighbors: usize,
    pub normalize: bool,
    pub k: usize,
    pub beta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub eta: f64,
    pub epochs: usize,
    pub epsilon: f64,
    pub folds: usize,
    pub seed: u64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub visit_order: VisitOrder,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            ratings: None,
            attributes: None,
            similarity: None,
            out: None,
            metric: Metric::Cos,
            neighbors: 40,
            normalize: true,
            k: 10,
            beta: 0.1,
            lambda1: 0.1,
            lambda2: 0.1,
            eta: 0.005,
            epochs: 200,
            epsilon: 1e-4,
            folds: 5,
            seed: 42,
            scale_min: 1.0,
            scale_max: 5.0,
            visit_order: VisitOrder::UserMajor,
        }
    }
}

impl RunConfig {
    /// Layers the optional config file and the flags over the defaults.
    pub fn resolve(file: Option<&FileConfig>, flags: &CommonOpts) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(f) = file {
            cfg.ratings = f.ratings.clone().or(cfg.ratings);
            cfg.attributes = f.attributes.clone().or(cfg.attributes);
            cfg.similarity = f.similarity.clone().or(cfg.similarity);
            cfg.out = f.out.clone().or(cfg.out);
            if let Some(m) = &f.metric {
                cfg.metric = m.parse()?;
            }
            set(&mut cfg.neighbors, f.neighbors);
            set(&mut cfg.normalize, f.normalize);
            set(&mut cfg.k, f.k);
            set(&mut cfg.beta, f.beta);
            set(&mut cfg.lambda1, f.lambda1);
            set(&mut cfg.lambda2, f.lambda2);
            set(&mut cfg.eta, f.eta);
            set(&mut cfg.epochs, f.epochs);
            set(&mut cfg.epsilon, f.epsilon);
            set(&mut cfg.folds, f.folds);
            set(&mut cfg.seed, f.seed);
            set(&mut cfg.scale_min, f.scale_min);
            set(&mut cfg.scale_max, f.scale_max);
            if let Some(v) = &f.visit_order {
                cfg.visit_order = v.parse()?;
            }
        }
        cfg.ratings = flags.ratings.clone().or(cfg.ratings);
        cfg.attributes = flags.attributes.clone().or(cfg.attributes);
        cfg.similarity = flags.similarity.clone().or(cfg.similarity);
        cfg.out = flags.out.clone().or(cfg.out);
        if let Some(m) = &flags.metric {
            cfg.metric = m.parse()?;
        }
        set(&mut cfg.neighbors, flags.neighbors);
        set(&mut cfg.k, flags.k);
        set(&mut cfg.beta, flags.beta);
        set(&mut cfg.lambda1, flags.lambda1);
        set(&mut cfg.lambda2, flags.lambda2);
        set(&mut cfg.eta, flags.eta);
        set(&mut cfg.epochs, flags.epochs);
        set(&mut cfg.epsilon, flags.epsilon);
        set(&mut cfg.folds, flags.folds);
        set(&mut cfg.seed, flags.seed);
        set(&mut cfg.scale_min, flags.scale_min);
        set(&mut cfg.scale_max, flags.scale_max);
        if let Some(v) = &flags.visit_order {
            cfg.visit_order = v.parse()?;
        }
        if flags.no_normalize {
            cfg.normalize = false;
        }
        if cfg.scale_min >= cfg.scale_max {
            bail!(
                "scale-min ({}) must be below scale-max ({})",
                cfg.scale_min,
                cfg.scale_max
            );
        }
        Ok(cfg)
    }

    pub fn scale(&self) -> RatingScale {
        RatingScale::new(self.scale_min, self.scale_max)
    }

    pub fn coupling(&self) -> CouplingConfig {
        CouplingConfig {
            metric: self.metric,
            neighborhood_size: self.neighbors,
            normalize: self.normalize,
            weights: None,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            beta: self.beta,
            eta: self.eta,
            latent_dim: self.k,
            max_epochs: self.epochs,
            epsilon: self.epsilon,
            seed: self.seed,
            visit_order: self.visit_order,
        }
    }
}

fn set<T: Copy>(dst: &mut T, src: Option<T>) {
    if let Some(v) = src {
        *dst = v;
    }
}
