//! Run configuration: defaults, a flat `key = value` TOML file, the
//! `COSD_SEED` environment variable and `--key value` flags, applied in that
//! order.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use cosd::corpus::{load_generic, load_semeval, load_ukp, Dataset, DatasetKind};
use cosd::inference::{Mode, ScoreNorm};
use cosd::topics::LdaParams;
use cosd::training::{load_embeddings, EncoderStore, TrainConfig, ENCODER_DIM};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "COSD_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub data: PathBuf,
    pub embeddings: PathBuf,
    /// Width of every vector in the embedding file.
    pub embedding_dim: usize,
    pub topics: usize,
    /// Hop count; unset means 2 for UKP and 3 otherwise.
    pub hops: Option<usize>,
    pub hidden_dim: usize,
    /// Doc–topic prior; unset means `50 / topics`.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub sweeps: usize,
    pub fold_in_sweeps: usize,
    pub lr_cpa: f64,
    pub lr_embed: f64,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub trials: usize,
    pub joint: bool,
    pub mode: Mode,
    pub score_norm: ScoreNorm,
    pub parallel_trials: bool,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            dataset: DatasetKind::Semeval,
            data: PathBuf::from("data/semeval2016"),
            embeddings: PathBuf::from("data/embeddings.emb1"),
            embedding_dim: ENCODER_DIM,
            topics: t.lda.topics,
            hops: None,
            hidden_dim: t.hidden_dim,
            alpha: None,
            beta: t.lda.beta,
            sweeps: t.lda.sweeps,
            fold_in_sweeps: t.lda.fold_in_sweeps,
            lr_cpa: t.lr_cpa,
            lr_embed: t.lr_embed,
            dropout: t.dropout,
            leaky_slope: t.leaky_slope,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: t.seed,
            trials: t.trials,
            joint: false,
            mode: Mode::Full,
            score_norm: ScoreNorm::Raw,
            parallel_trials: false,
            out_dir: PathBuf::from("runs"),
        }
    }
}

/// Every configuration key as an optional flag.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Flat TOML file of `key = value` settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// semeval, ukp, synthetic or generic.
    #[arg(long)]
    pub dataset: Option<DatasetKind>,
    /// Dataset directory or TSV file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// EMB1 embedding file.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    /// Topics per stance subset (H).
    #[arg(long)]
    pub topics: Option<usize>,
    #[arg(long)]
    pub hops: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub sweeps: Option<usize>,
    #[arg(long)]
    pub fold_in_sweeps: Option<usize>,
    #[arg(long)]
    pub lr_cpa: Option<f64>,
    #[arg(long)]
    pub lr_embed: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub leaky_slope: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Train one model over all targets.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub joint: Option<bool>,
    /// full, no_sem or no_dis.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// raw or zscore.
    #[arg(long)]
    pub score_norm: Option<ScoreNorm>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub parallel_trials: Option<bool>,
    /// Parent directory for run directories.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(base) = path.parent() {
            for p in [&mut cfg.data, &mut cfg.embeddings, &mut cfg.out_dir] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Copy with every path made absolute against the working directory.
    pub fn absolute(&self) -> Result<Self> {
        let mut cfg = self.clone();
        for p in [&mut cfg.data, &mut cfg.embeddings, &mut cfg.out_dir] {
            *p = std::path::absolute(&*p).with_context(|| format!("resolving {}", p.display()))?;
        }
        Ok(cfg)
    }

    /// Defaults, then the file, then `COSD_SEED`, then flags.
    pub fn resolve(args: &ConfigArgs, env_seed: Option<&str>) -> Result<Self> {
        let mut cfg = match &args.config {
            Some(path) => Self::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(s) = env_seed {
            cfg.seed = s
                .trim()
                .parse()
                .with_context(|| format!("{SEED_ENV} must be an unsigned integer, got {s:?}"))?;
        }
        cfg.apply(args);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, a: &ConfigArgs) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = &a.$field { self.$field = v.clone(); })*
            };
        }
        set!(
            dataset, data, embeddings, embedding_dim, topics, hidden_dim, beta, sweeps, fold_in_sweeps, lr_cpa, lr_embed, dropout,
            leaky_slope, batch_size, epochs, seed, trials, joint, mode, score_norm, parallel_trials, out_dir
        );
        if a.hops.is_some() {
            self.hops = a.hops;
        }
        if a.alpha.is_some() {
            self.alpha = a.alpha;
        }
    }

    pub fn hops(&self) -> usize {
        self.hops.unwrap_or(match self.dataset {
            DatasetKind::Ukp => 2,
            _ => 3,
        })
    }

    pub fn lda_params(&self) -> LdaParams {
        LdaParams {
            topics: self.topics,
            alpha: self.alpha,
            beta: self.beta,
            sweeps: self.sweeps,
            fold_in_sweeps: self.fold_in_sweeps,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr_cpa: self.lr_cpa,
            lr_embed: self.lr_embed,
            dropout: self.dropout,
            hops: self.hops(),
            hidden_dim: self.hidden_dim,
            leaky_slope: self.leaky_slope,
            seed: self.seed,
            trials: self.trials,
            joint: self.joint,
            score_norm: self.score_norm,
            parallel_trials: self.parallel_trials,
            lda: self.lda_params(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            bail!("invalid configuration: embedding_dim must be positive");
        }
        if let Err(e) = self.train_config().validate() {
            bail!("invalid configuration: {e}");
        }
        Ok(())
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let ds = match self.dataset {
            DatasetKind::Semeval => load_semeval(&self.data, self.seed),
            DatasetKind::Ukp => load_ukp(&self.data),
            kind => load_generic(&self.data, kind),
        };
        ds.with_context(|| format!("loading {:?} dataset from {}", self.dataset, self.data.display()))
    }

    pub fn load_embeddings(&self) -> Result<EncoderStore> {
        Ok(load_embeddings(&self.embeddings, self.embedding_dim)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}
