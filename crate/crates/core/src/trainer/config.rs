use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::augment::{AugConfig, EdaProbs};
use crate::corpus::{SplitRatios, SyntheticSpec, TokenizerMode};
use crate::diffcore::ModelConfig;
use crate::error::{Error, Result};
use crate::losses::{AttackConfig, AttackMethod, Consistency, NormScope, Tsa, UdaConfig, Weights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AttackChoice {
    #[default]
    Pgd,
    Fgm,
    None,
}

impl AttackChoice {
    pub fn method(self) -> Option<AttackMethod> {
        match self {
            AttackChoice::Pgd => Some(AttackMethod::Pgd),
            AttackChoice::Fgm => Some(AttackMethod::Fgm),
            AttackChoice::None => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UdaAugment {
    #[default]
    Tfidf,
    Eda,
    BackTranslate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub eda: EdaProbs,
    pub tfidf_replace_p: f64,
    pub neg_sim_threshold: f64,
    pub lexicon: Option<PathBuf>,
    /// Shell command used as the back-translation provider.
    pub back_translate_command: Option<String>,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let base = AugConfig::default();
        Self {
            eda: base.eda,
            tfidf_replace_p: base.tfidf_replace_p,
            neg_sim_threshold: base.neg_sim_threshold,
            lexicon: None,
            back_translate_command: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub labeled: Option<PathBuf>,
    pub unlabeled: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    pub ratios: SplitRatios,
    pub split_seed: u64,
    pub mode: TokenizerMode,
    pub min_freq: u64,
    pub max_vocab: usize,
    pub max_len: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            labeled: None,
            unlabeled: None,
            synthetic: None,
            ratios: SplitRatios::default(),
            split_seed: 0,
            mode: TokenizerMode::Word,
            min_freq: 2,
            max_vocab: 20_000,
            max_len: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustnessConfig {
    pub epsilon: f64,
    pub steps: usize,
    /// PGD step size; `2.5·epsilon/steps` when unset.
    pub step_size: Option<f64>,
    pub sample_size: usize,
    /// Defense the model was trained with; taken from `attack` when unset.
    pub defense: Option<AttackChoice>,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            epsilon: 2.57e-3,
            steps: 10,
            step_size: None,
            sample_size: 1000,
            defense: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub omega: f64,
    pub tau: f64,
    pub gamma: f64,
    pub queue_m: usize,
    pub attack: AttackChoice,
    pub eps: f64,
    pub eta: f64,
    pub k_steps: usize,
    pub sigma2: f64,
    pub norm_scope: NormScope,
    pub grad_accumulate_inner: bool,
    pub beta_conf: f64,
    pub sharpen_t: f64,
    pub tsa: Tsa,
    pub consistency: Consistency,
    pub uda_augment: UdaAugment,
    pub dup_rate: f64,
    pub use_hard_negatives: bool,
    pub batch_labeled: usize,
    pub batch_uda: usize,
    pub batch_contrastive: usize,
    pub total_steps: u64,
    pub teacher_refresh_every: u64,
    pub seed: u64,
    pub eval_every: u64,
    pub checkpoint_every: u64,
    /// Two updates per step (consistency side, then contrastive side) instead of one joint update.
    pub alternate: bool,
    pub optimizer: OptimizerConfig,
    pub model: ModelConfig,
    pub augment: AugmentSection,
    pub data: DataConfig,
    pub robustness: RobustnessConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            alpha: 1.0,
            omega: 0.5,
            tau: 0.05,
            gamma: 0.995,
            queue_m: 160,
            attack: AttackChoice::Pgd,
            eps: 1e-2,
            eta: 1e-2 / 3.0,
            k_steps: 3,
            sigma2: 1e-6,
            norm_scope: NormScope::PerExample,
            grad_accumulate_inner: false,
            beta_conf: 0.8,
            sharpen_t: 1.0,
            tsa: Tsa::None,
            consistency: Consistency::Kl,
            uda_augment: UdaAugment::Tfidf,
            dup_rate: 0.32,
            use_hard_negatives: false,
            batch_labeled: 24,
            batch_uda: 24,
            batch_contrastive: 24,
            total_steps: 1000,
            teacher_refresh_every: 1,
            seed: 0,
            eval_every: 0,
            checkpoint_every: 0,
            alternate: false,
            optimizer: OptimizerConfig::default(),
            model: ModelConfig::default(),
            augment: AugmentSection::default(),
            data: DataConfig::default(),
            robustness: RobustnessConfig::default(),
        }
    }
}

fn require(ok: bool, path: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(path, message))
    }
}

fn probability(v: f64, path: &str) -> Result<()> {
    require((0.0..=1.0).contains(&v), path, "must be in [0, 1]")
}

impl TrainConfig {
    /// Parses and validates a config document. Errors name the offending key path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: TrainConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "<root>".to_string() } else { path };
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64, p: &str| require(v.is_finite(), p, "must be finite");
        finite(self.lambda, "lambda")?;
        require(self.lambda >= 0.0, "lambda", "must be >= 0")?;
        finite(self.alpha, "alpha")?;
        require(self.alpha >= 0.0, "alpha", "must be >= 0")?;
        probability(self.omega, "omega")?;
        require(self.tau > 0.0 && self.tau.is_finite(), "tau", "must be > 0")?;
        require((0.0..1.0).contains(&self.gamma), "gamma", "must be in [0, 1)")?;
        require(self.eps >= 0.0 && self.eps.is_finite(), "eps", "must be >= 0")?;
        if self.attack == AttackChoice::Pgd {
            require(self.eta > 0.0 && self.eta.is_finite(), "eta", "must be > 0")?;
            require(self.k_steps >= 1, "k_steps", "must be >= 1")?;
        }
        require(self.sigma2 >= 0.0 && self.sigma2.is_finite(), "sigma2", "must be >= 0")?;
        probability(self.beta_conf, "beta_conf")?;
        require(self.sharpen_t > 0.0 && self.sharpen_t.is_finite(), "sharpen_t", "must be > 0")?;
        probability(self.dup_rate, "dup_rate")?;
        require(self.batch_labeled >= 1, "batch_labeled", "must be >= 1")?;
        require(self.batch_uda >= 1, "batch_uda", "must be >= 1")?;
        require(self.batch_contrastive >= 1, "batch_contrastive", "must be >= 1")?;
        require(self.teacher_refresh_every >= 1, "teacher_refresh_every", "must be >= 1")?;

        let o = &self.optimizer;
        require(o.lr > 0.0 && o.lr.is_finite(), "optimizer.lr", "must be > 0")?;
        require((0.0..1.0).contains(&o.beta1), "optimizer.beta1", "must be in [0, 1)")?;
        require((0.0..1.0).contains(&o.beta2), "optimizer.beta2", "must be in [0, 1)")?;
        require(o.eps > 0.0, "optimizer.eps", "must be > 0")?;
        require(o.weight_decay >= 0.0, "optimizer.weight_decay", "must be >= 0")?;

        let m = &self.model;
        require(m.d >= 1, "model.d", "must be >= 1")?;
        require(m.d_proj >= 1, "model.d_proj", "must be >= 1")?;
        require(m.hidden >= 1, "model.hidden", "must be >= 1")?;
        require((0.0..1.0).contains(&m.dropout), "model.dropout", "must be in [0, 1)")?;
        require(m.init_scale >= 0.0 && m.init_scale.is_finite(), "model.init_scale", "must be >= 0")?;

        let a = &self.augment;
        probability(a.eda.p_insert, "augment.eda.p_insert")?;
        probability(a.eda.p_delete, "augment.eda.p_delete")?;
        probability(a.eda.p_replace, "augment.eda.p_replace")?;
        probability(a.tfidf_replace_p, "augment.tfidf_replace_p")?;
        probability(a.neg_sim_threshold, "augment.neg_sim_threshold")?;
        if a.eda.p_replace > 0.0 && (self.use_hard_negatives || self.uda_augment == UdaAugment::Eda) {
            require(a.lexicon.is_some(), "augment.lexicon", "required when augment.eda.p_replace > 0")?;
        }

        let d = &self.data;
        require(d.max_len >= 1, "data.max_len", "must be >= 1")?;
        require(d.max_vocab >= 3, "data.max_vocab", "must be >= 3")?;
        require(d.min_freq >= 1, "data.min_freq", "must be >= 1")?;
        let r = d.ratios;
        for (v, p) in [
            (r.train, "data.ratios.train"),
            (r.test, "data.ratios.test"),
            (r.uda, "data.ratios.uda"),
            (r.contrastive, "data.ratios.contrastive"),
        ] {
            require(v > 0.0 && v < 1.0, p, "must be in (0, 1)")?;
        }
        require((r.train + r.test - 1.0).abs() <= 1e-9, "data.ratios.test", "train + test must equal 1")?;
        require(
            (r.uda + r.contrastive - 1.0).abs() <= 1e-9,
            "data.ratios.contrastive",
            "uda + contrastive must equal 1",
        )?;
        if let Some(s) = &d.synthetic {
            s.validate()?;
        }

        let rb = &self.robustness;
        require(rb.epsilon >= 0.0 && rb.epsilon.is_finite(), "robustness.epsilon", "must be >= 0")?;
        require(rb.steps >= 1, "robustness.steps", "must be >= 1")?;
        if let Some(s) = rb.step_size {
            require(s > 0.0 && s.is_finite(), "robustness.step_size", "must be > 0")?;
        }
        require(rb.sample_size >= 1, "robustness.sample_size", "must be >= 1")?;
        Ok(())
    }

    pub fn weights(&self) -> Weights {
        Weights {
            lambda: self.lambda,
            alpha: self.alpha,
            omega: self.omega,
        }
    }

    pub fn uda_config(&self) -> UdaConfig {
        UdaConfig {
            lambda: self.lambda,
            sharpen_t: self.sharpen_t,
            beta: self.beta_conf,
            tsa: self.tsa,
            total_steps: self.total_steps,
            consistency: self.consistency,
        }
    }

    pub fn attack_config(&self) -> Option<AttackConfig> {
        self.attack.method().map(|method| AttackConfig {
            method,
            eps: self.eps,
            eta: self.eta,
            k: self.k_steps,
            sigma2: self.sigma2,
            norm: self.norm_scope,
            grad_accumulate_inner: self.grad_accumulate_inner,
        })
    }

    pub fn aug_config(&self) -> AugConfig {
        AugConfig {
            dup_rate: self.dup_rate,
            eda: self.augment.eda,
            tfidf_replace_p: self.augment.tfidf_replace_p,
            neg_sim_threshold: self.augment.neg_sim_threshold,
            lexicon: self.augment.lexicon.clone(),
            negatives: self.use_hard_negatives,
        }
    }

    /// Whether each loss term contributes; zero-weight terms are never evaluated.
    pub fn active(&self) -> ActiveTerms {
        let w = self.weights();
        ActiveTerms {
            sup: w.sup() != 0.0,
            unsup: w.unsup() != 0.0,
            adv: w.adv() != 0.0 && self.attack != AttackChoice::None,
            con: w.con() != 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveTerms {
    pub sup: bool,
    pub unsup: bool,
    pub adv: bool,
    pub con: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config_error(text: &str) -> String {
        match TrainConfig::from_json(text) {
            Err(Error::Config { path, .. }) => path,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        let back = TrainConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(TrainConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_key() {
        assert_eq!(config_error(r#"{"gamma": 1.0}"#), "gamma");
        assert_eq!(config_error(r#"{"omega": 1.5}"#), "omega");
        assert_eq!(config_error(r#"{"tau": 0}"#), "tau");
        assert_eq!(config_error(r#"{"model": {"dropout": 1.0}}"#), "model.dropout");
        assert_eq!(config_error(r#"{"model": {"width": 3}}"#), "model.width");
        assert_eq!(config_error(r#"{"optimizer": {"lr": "fast"}}"#), "optimizer.lr");
        assert_eq!(config_error(r#"{"batch_uda": 0}"#), "batch_uda");
        assert_eq!(config_error(r#"{"attack": "vat"}"#), "attack");
        let unknown = TrainConfig::from_json(r#"{"lamda": 1}"#).unwrap_err().to_string();
        assert!(unknown.contains("lamda"), "{unknown}");
    }

    #[test]
    fn active_terms_follow_weights() {
        let cfg = TrainConfig {
            omega: 1.0,
            lambda: 0.0,
            alpha: 0.0,
            ..TrainConfig::default()
        };
        let a = cfg.active();
        assert!(a.sup && !a.unsup && !a.adv && !a.con);
        let none = TrainConfig {
            attack: AttackChoice::None,
            ..TrainConfig::default()
        };
        assert!(!none.active().adv);
    }
}
