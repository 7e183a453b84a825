use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::AttackConfig;
use crate::data::{BatchRule, MissingPolicy};
use crate::error::{Error, Result};
use crate::optim::OptimizerConfig;
use crate::transfer::KernelChoice;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Paradigm {
    Model,
    Mapping,
    Parameter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Membership,
    Property,
    BatchProperty,
}

impl Paradigm {
    /// The only attack that can consume this paradigm's leakage trace.
    pub fn attack(self) -> AttackKind {
        match self {
            Paradigm::Model => AttackKind::Membership,
            Paradigm::Mapping => AttackKind::Property,
            Paradigm::Parameter => AttackKind::BatchProperty,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Paradigm::Model => "model",
            Paradigm::Mapping => "mapping",
            Paradigm::Parameter => "parameter",
        }
    }

    fn default_batch_size(self) -> usize {
        match self {
            Paradigm::Model | Paradigm::Mapping => 64,
            Paradigm::Parameter => 8,
        }
    }
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Membership => "membership",
            AttackKind::Property => "property",
            AttackKind::BatchProperty => "batch-property",
        }
    }

    fn default_hidden(self) -> Vec<usize> {
        match self {
            AttackKind::Property => vec![64, 8],
            AttackKind::Membership | AttackKind::BatchProperty => vec![16, 8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    #[serde(default)]
    pub missing: MissingPolicy,
    /// Attribute removed from the features and used as the property label.
    #[serde(default)]
    pub property_attr: Option<String>,
    #[serde(default)]
    pub positive_value: Option<String>,
    #[serde(default)]
    pub batch_rule: Option<BatchRule>,
    /// Cap on the source train rows used for training (sampled by seed).
    #[serde(default)]
    pub source_train_limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 8]
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden: default_hidden(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    pub paradigm: Paradigm,
    pub epochs: usize,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default = "default_mmd_weight")]
    pub mmd_weight: f64,
    #[serde(default)]
    pub kernel: KernelChoice,
    #[serde(default)]
    pub alignment_layer: Option<usize>,
    /// Mapping only: both parties start from one agreed initialization.
    #[serde(default)]
    pub shared_init: bool,
    /// Target fine-tuning epochs after source training (model-based only).
    #[serde(default)]
    pub fine_tune_epochs: Option<usize>,
}

fn default_mmd_weight() -> f64 {
    1.0
}

impl TransferSection {
    pub fn batch_size(&self) -> usize {
        self.batch_size.unwrap_or(self.paradigm.default_batch_size())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseSection {
    /// Row label in reports; derived from the settings when absent.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub dropout: f64,
}

impl Default for DefenseSection {
    fn default() -> Self {
        DefenseSection {
            label: None,
            optimizer: OptimizerConfig::default(),
            dropout: 0.0,
        }
    }
}

impl DefenseSection {
    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        match (&self.optimizer, self.dropout) {
            (OptimizerConfig::Adam(_), 0.0) => "original".into(),
            (OptimizerConfig::Adam(_), d) => format!("dropout-{d}"),
            (opt, 0.0) => opt.name().into(),
            (opt, d) => format!("{}+dropout-{d}", opt.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub kind: AttackKind,
    /// Attack classifier hidden layers; defaults depend on the attack.
    #[serde(default)]
    pub hidden: Option<Vec<usize>>,
    #[serde(default = "default_n_shadow")]
    pub n_shadow: usize,
    /// Rows drawn from the held-out source pool for shadow training.
    #[serde(default)]
    pub shadow_pool_size: Option<usize>,
    #[serde(default = "default_l")]
    pub l_prop: usize,
    #[serde(default = "default_l")]
    pub l_nonprop: usize,
    /// Epoch whose first iteration the attacker trains at (1-based);
    /// defaults to the final epoch.
    #[serde(default)]
    pub at_epoch: Option<usize>,
    #[serde(default = "default_attack_lr")]
    pub lr: f64,
    #[serde(default = "default_attack_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_attack_batch")]
    pub batch_size: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_val")]
    pub val_fraction: f64,
}

fn default_n_shadow() -> usize {
    3
}
fn default_l() -> usize {
    256
}
fn default_attack_lr() -> f64 {
    0.001
}
fn default_attack_epochs() -> usize {
    100
}
fn default_attack_batch() -> usize {
    64
}
fn default_patience() -> usize {
    10
}
fn default_val() -> f64 {
    0.2
}

impl AttackSection {
    pub fn attack_config(&self, seed: u64) -> AttackConfig {
        AttackConfig {
            hidden: self.hidden.clone().unwrap_or_else(|| self.kind.default_hidden()),
            lr: self.lr,
            max_epochs: self.max_epochs,
            batch_size: self.batch_size,
            val_fraction: self.val_fraction,
            patience: self.patience,
            seed,
        }
    }
}

/// One experiment cell: data, models, paradigm, defense and attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    pub transfer: TransferSection,
    #[serde(default)]
    pub defense: DefenseSection,
    pub attack: AttackSection,
}

fn default_seed() -> u64 {
    1
}
fn default_replicates() -> usize {
    5
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Makes relative dataset paths relative to `base`. Note that the
    /// fingerprint covers the paths as written.
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.dataset.train_path, &mut self.dataset.test_path] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks everything that can be checked without touching data,
    /// including the paradigm/attack pairing.
    pub fn validate(&self) -> Result<()> {
        let t = &self.transfer;
        if t.paradigm.attack() != self.attack.kind {
            return Err(Error::Config(format!(
                "{} attack cannot run against the {} paradigm (expects {})",
                self.attack.kind.name(),
                t.paradigm.name(),
                t.paradigm.attack().name()
            )));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if t.batch_size() == 0 {
            return Err(Error::Config("transfer.batch_size must be at least 1".into()));
        }
        if !(t.mmd_weight >= 0.0) {
            return Err(Error::Config("transfer.mmd_weight must be >= 0".into()));
        }
        if self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return Err(Error::Config("model.hidden must be non-empty positive widths".into()));
        }
        if let Some(l) = t.alignment_layer {
            if l >= self.model.hidden.len() {
                return Err(Error::Config(format!("alignment_layer {l} out of range")));
            }
        }
        if !(0.0..1.0).contains(&self.defense.dropout) {
            return Err(Error::Config("defense.dropout must be in [0, 1)".into()));
        }
        self.defense.optimizer.validate()?;
        self.attack.attack_config(0).validate()?;
        if let Some(e) = self.attack.at_epoch {
            if e == 0 || e > t.epochs {
                return Err(Error::Config(format!("attack.at_epoch {e} outside 1..={}", t.epochs)));
            }
        }
        match self.attack.kind {
            AttackKind::Property => {
                if self.dataset.property_attr.is_none() || self.dataset.positive_value.is_none() {
                    return Err(Error::Config(
                        "property attack needs dataset.property_attr and dataset.positive_value"
                            .into(),
                    ));
                }
            }
            AttackKind::BatchProperty => {
                if self.dataset.batch_rule.is_none() {
                    return Err(Error::Config("batch-property attack needs dataset.batch_rule".into()));
                }
                if self.attack.l_prop == 0 || self.attack.l_nonprop == 0 {
                    return Err(Error::Config("l_prop and l_nonprop must be at least 1".into()));
                }
            }
            AttackKind::Membership => {
                if self.attack.n_shadow == 0 {
                    return Err(Error::Config("n_shadow must be at least 1".into()));
                }
            }
        }
        if t.epochs == 0 {
            return Err(Error::Config("transfer.epochs must be at least 1".into()));
        }
        Ok(())
    }

    /// Canonical JSON: the serde value tree with object keys sorted.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config is always serializable");
        serde_json::to_string(&value).expect("json value is always serializable")
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Report grouping value for a key (`defense`, `property`, ...).
    pub fn group_value(&self, key: &str) -> Option<String> {
        Some(match key {
            "name" => self.name.clone().unwrap_or_default(),
            "paradigm" => self.transfer.paradigm.name().into(),
            "attack" => self.attack.kind.name().into(),
            "defense" => self.defense.label(),
            "property" => match (&self.dataset.property_attr, &self.dataset.batch_rule) {
                (Some(a), _) => a.clone(),
                (None, Some(r)) => r.attribute().into(),
                (None, None) => "-".into(),
            },
            "epochs" => self.transfer.epochs.to_string(),
            "fingerprint" => self.fingerprint(),
            _ => return None,
        })
    }
}
