use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bavd::{BavdConfig, MaskMode, SignConvention};
use crate::error::{Error, Result};
use crate::nn::Architecture;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Mupfl,
    Fedavg,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mupfl" => Ok(Algorithm::Mupfl),
            "fedavg" => Ok(Algorithm::Fedavg),
            other => Err(Error::Config(format!("unknown algorithm {other:?} (mupfl | fedavg)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Tinyconv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    pub classes: usize,
    /// Synthetic sample width. With `model = "tinyconv"` it must be a square.
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub spread: f64,
    pub dirichlet_alpha: f64,
    pub imbalance_factor: f64,
    /// Head-class count for the long-tail profile. Defaults to the largest
    /// class for synthetic data and the smallest class for IDX files.
    pub head_count: Option<usize>,
    /// Fraction of classes, counted from the rarest, reported as "tail".
    pub tail_fraction: f64,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            classes: 10,
            dim: 20,
            train_per_class: 200,
            test_per_class: 50,
            spread: 1.0,
            dirichlet_alpha: 0.5,
            imbalance_factor: 10.0,
            head_count: None,
            tail_fraction: 0.5,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMode {
    /// Silhouette-selected cluster count.
    Adaptive,
    /// All participants in one cluster.
    Single,
    /// Every participant alone (no pre-aggregation).
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcmuConfig {
    pub mode: ClusterMode,
    pub sim_mix: f64,
    pub kappa_min: usize,
    pub kappa_max: usize,
}

impl Default for AcmuConfig {
    fn default() -> Self {
        Self {
            mode: ClusterMode::Adaptive,
            sim_mix: 0.5,
            kappa_min: 2,
            kappa_max: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PkcfConfig {
    pub enabled: bool,
    /// Synthetic features per class.
    pub m: usize,
    /// Classifier pre-training epochs on the bank.
    pub tau: usize,
    pub steps: usize,
    pub lr: f64,
    /// Classifier pre-training step size; the local `lr` when unset.
    pub fine_tune_lr: Option<f64>,
    pub sample_cap: usize,
}

impl Default for PkcfConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            m: 20,
            tau: 30,
            steps: 200,
            lr: 0.1,
            fine_tune_lr: None,
            sample_cap: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskModeName {
    MeanThreshold,
    TopK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BavdSection {
    pub enabled: bool,
    pub sign_convention: SignConvention,
    pub mode: MaskModeName,
    pub top_k: Option<usize>,
    pub reset_each_round: bool,
}

impl Default for BavdSection {
    fn default() -> Self {
        Self {
            enabled: true,
            sign_convention: SignConvention::AsWritten,
            mode: MaskModeName::MeanThreshold,
            top_k: None,
            reset_each_round: true,
        }
    }
}

impl BavdSection {
    pub fn to_config(&self) -> BavdConfig {
        BavdConfig {
            enabled: self.enabled,
            sign_convention: self.sign_convention,
            mode: match (self.mode, self.top_k) {
                (MaskModeName::TopK, Some(k)) => MaskMode::TopK(k),
                _ => MaskMode::MeanThreshold,
            },
            reset_each_round: self.reset_each_round,
        }
    }
}

/// Everything a run needs. Parsed from TOML; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub algorithm: Algorithm,
    pub model: ModelKind,
    pub rounds: usize,
    pub clients: usize,
    /// Fraction of clients selected per round.
    pub fraction: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplicative decay `lr *= 1 - rate` every `lr_decay_every` local epochs.
    pub lr_decay_rate: f64,
    pub lr_decay_every: usize,
    pub hidden: usize,
    pub conv1: usize,
    pub conv2: usize,
    /// Selected clients keep their personalised model between rounds instead
    /// of re-syncing to the global model.
    pub persistent_clients: bool,
    /// Record wall-clock seconds in metrics. Off by default so artifacts are
    /// byte-reproducible.
    pub timing: bool,
    /// Also checkpoint every this many rounds (0: final checkpoint only).
    pub checkpoint_every: usize,
    pub data: DataConfig,
    pub acmu: AcmuConfig,
    pub pkcf: PkcfConfig,
    pub bavd: BavdSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            algorithm: Algorithm::Mupfl,
            model: ModelKind::Mlp,
            rounds: 20,
            clients: 10,
            fraction: 0.5,
            local_epochs: 5,
            batch_size: 32,
            lr: 0.01,
            lr_decay_rate: 0.005,
            lr_decay_every: 3,
            hidden: 32,
            conv1: 4,
            conv2: 8,
            persistent_clients: false,
            timing: false,
            checkpoint_every: 0,
            data: DataConfig::default(),
            acmu: AcmuConfig::default(),
            pkcf: PkcfConfig::default(),
            bavd: BavdSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Clients selected per round, `ceil(fraction * N)`.
    pub fn clients_per_round(&self) -> usize {
        ((self.fraction * self.clients as f64 - 1e-9).ceil() as usize).clamp(1, self.clients.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return bad(format!("fraction must lie in (0, 1], got {}", self.fraction));
        }
        if self.rounds == 0 || self.clients == 0 || self.batch_size == 0 {
            return bad("rounds, clients and batch_size must be >= 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.lr_decay_rate) || self.lr_decay_every == 0 {
            return bad("lr_decay_rate must lie in [0, 1) and lr_decay_every >= 1".into());
        }
        if self.data.classes < 2 {
            return bad("need at least 2 classes".into());
        }
        let alpha_ok = self.data.dirichlet_alpha > 0.0;
        let factor_ok = self.data.imbalance_factor >= 1.0;
        if !alpha_ok || !factor_ok {
            return bad("dirichlet_alpha must be > 0 and imbalance_factor >= 1".into());
        }
        if !(self.data.tail_fraction > 0.0 && self.data.tail_fraction <= 1.0) {
            return bad("tail_fraction must lie in (0, 1]".into());
        }
        if self.data.source == DataSource::Idx
            && [&self.data.train_images, &self.data.train_labels, &self.data.test_images, &self.data.test_labels]
                .iter()
                .any(|p| p.is_none())
        {
            return bad("idx source needs train_images, train_labels, test_images and test_labels".into());
        }
        let a = &self.acmu;
        if !(0.0..=1.0).contains(&a.sim_mix) {
            return bad(format!("acmu.sim_mix must lie in [0, 1], got {}", a.sim_mix));
        }
        if a.kappa_min < 2 || a.kappa_min > a.kappa_max {
            return bad(format!("need 2 <= kappa_min <= kappa_max, got [{}, {}]", a.kappa_min, a.kappa_max));
        }
        if self.pkcf.enabled && (self.pkcf.m == 0 || self.pkcf.sample_cap == 0) {
            return bad("pkcf.m and pkcf.sample_cap must be >= 1".into());
        }
        match (self.bavd.mode, self.bavd.top_k) {
            (MaskModeName::TopK, None) => return bad("bavd.mode = \"top-k\" needs bavd.top_k".into()),
            (MaskModeName::MeanThreshold, Some(_)) => {
                return bad("bavd.top_k is only valid with mode = \"top-k\"".into())
            }
            _ => {}
        }
        Ok(())
    }

    /// Network for inputs of the given per-sample shape.
    pub fn architecture(&self, sample_shape: &[usize]) -> Result<Architecture> {
        let classes = self.data.classes;
        let arch = match self.model {
            ModelKind::Mlp => Architecture::Mlp {
                input: sample_shape.iter().product(),
                hidden: self.hidden,
                classes,
            },
            ModelKind::Tinyconv => {
                let (channels, height, width) = match *sample_shape {
                    [c, h, w] => (c, h, w),
                    [h, w] => (1, h, w),
                    [n] => {
                        let side = (n as f64).sqrt().round() as usize;
                        if side * side != n {
                            return Err(Error::Config(format!("tinyconv needs square inputs, got width {n}")));
                        }
                        (1, side, side)
                    }
                    _ => return Err(Error::Config(format!("unsupported sample shape {sample_shape:?}"))),
                };
                Architecture::TinyConv {
                    channels,
                    height,
                    width,
                    conv1: self.conv1,
                    conv2: self.conv2,
                    classes,
                }
            }
        };
        arch.validate()?;
        Ok(arch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections() {
        let cfg = RunConfig::from_toml_str(
            r#"
            seed = 3
            algorithm = "fedavg"
            rounds = 4
            [data]
            classes = 5
            imbalance_factor = 100.0
            [acmu]
            mode = "single"
            [bavd]
            sign_convention = "negated"
            mode = "top-k"
            top_k = 4
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.algorithm, Algorithm::Fedavg);
        assert_eq!(cfg.data.classes, 5);
        assert_eq!(cfg.acmu.mode, ClusterMode::Single);
        assert_eq!(cfg.bavd.to_config().mode, MaskMode::TopK(4));
        assert_eq!(cfg.bavd.sign_convention, SignConvention::Negated);
        assert_eq!(cfg.local_epochs, 5);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml_str("bogus = 1").is_err());
        assert!(RunConfig::from_toml_str("[pkcf]\nmm = 3").is_err());
    }

    #[test]
    fn invariants_checked() {
        assert!(RunConfig::from_toml_str("fraction = 0.0").is_err());
        assert!(RunConfig::from_toml_str("rounds = 0").is_err());
        assert!(RunConfig::from_toml_str("[acmu]\nkappa_min = 4\nkappa_max = 3").is_err());
        assert!(RunConfig::from_toml_str("[bavd]\nmode = \"top-k\"").is_err());
        assert!(RunConfig::from_toml_str("[data]\nsource = \"idx\"").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }

    #[test]
    fn participation_count() {
        let mut cfg = RunConfig {
            clients: 50,
            fraction: 0.2,
            ..RunConfig::default()
        };
        assert_eq!(cfg.clients_per_round(), 10);
        cfg.fraction = 1.0;
        assert_eq!(cfg.clients_per_round(), 50);
        cfg.fraction = 0.01;
        assert_eq!(cfg.clients_per_round(), 1);
    }
}
