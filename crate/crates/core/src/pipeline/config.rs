use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::critics::CriticConfig;
use crate::decoding::DecodeConfig;
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::recommender::RecommenderConfig;

/// Which components are trained and how explanations are decoded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// All five stages, constrained decoding.
    #[default]
    Saer,
    /// All five stages, plain top-k decoding.
    RegTopk,
    /// Stages 1 to 4, plain top-k decoding.
    Topk,
}

impl Mode {
    pub fn last_stage(self) -> u8 {
        match self {
            Mode::Topk => 4,
            _ => 5,
        }
    }

    pub fn searches(self) -> bool {
        self == Mode::Saer
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Saer => "saer",
            Mode::RegTopk => "reg_topk",
            Mode::Topk => "topk",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "saer" => Ok(Mode::Saer),
            "reg_topk" => Ok(Mode::RegTopk),
            "topk" => Ok(Mode::Topk),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// Every knob of a training run. Loaded from JSON; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_r: f64,
    pub lambda_x: f64,
    pub lambda_a: f64,
    pub lambda_c: f64,
    pub lambda_n: f64,
    pub lambda_h: f64,
    pub lambda_g: f64,
    pub beta: f64,

    pub d_r: usize,
    pub d_rs: usize,
    pub encoder_hidden: Vec<usize>,
    pub regressor_hidden: Vec<usize>,
    pub d_x: usize,
    pub d_xh: usize,
    pub d_xv: usize,
    pub compress: bool,
    /// Forces `c_t = 0` (attribute-gate ablation).
    pub copy_disabled: bool,
    pub d_w: usize,
    pub d_h: usize,
    pub d_att: usize,
    pub critic_hidden: Vec<usize>,

    pub tau: f64,
    pub tau_anneal: bool,
    /// Per-epoch multiplier when annealing, floored at `tau_min`.
    pub tau_decay: f64,
    pub tau_min: f64,
    pub samples_per_pair: usize,
    pub label_smoothing: f64,
    /// Discriminator steps per generator step in stage 5.
    pub disc_steps: usize,

    /// Maximum epochs of stages 1 to 5.
    pub stage_epochs: [usize; 5],
    pub stage_lr: [f64; 5],
    pub patience: usize,
    pub batch_size: usize,
    /// Train pairs per stage-5 generator step.
    pub align_batch: usize,
    /// Generator steps per stage-5 epoch.
    pub align_steps: usize,
    /// Valid pairs decoded to score each stage-5 epoch.
    pub align_probe: usize,
    pub pairs_per_user: usize,
    pub max_len: usize,
    /// Chunk size for parallel gradient evaluation.
    pub chunk: usize,

    pub decode: DecodeConfig,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_r: 1.0,
            lambda_x: 1.0,
            lambda_a: 0.5,
            lambda_c: 0.1,
            lambda_n: 1e-5,
            lambda_h: 0.5,
            lambda_g: 0.05,
            beta: 0.3,
            d_r: 32,
            d_rs: 32,
            encoder_hidden: vec![32],
            regressor_hidden: vec![16],
            d_x: 32,
            d_xh: 128,
            d_xv: 64,
            compress: false,
            copy_disabled: false,
            d_w: 32,
            d_h: 32,
            d_att: 32,
            critic_hidden: vec![32],
            tau: 0.5,
            tau_anneal: false,
            tau_decay: 0.9,
            tau_min: 0.1,
            samples_per_pair: 1,
            label_smoothing: 0.1,
            disc_steps: 1,
            stage_epochs: [50, 50, 50, 50, 20],
            stage_lr: [1e-3, 1e-3, 1e-3, 1e-3, 1e-4],
            patience: 5,
            batch_size: 64,
            align_batch: 16,
            align_steps: 20,
            align_probe: 100,
            pairs_per_user: 4,
            max_len: 50,
            chunk: 8,
            decode: DecodeConfig::default(),
            seed: 0,
            mode: Mode::Saer,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            ("lambda_r", self.lambda_r),
            ("lambda_x", self.lambda_x),
            ("lambda_a", self.lambda_a),
            ("lambda_c", self.lambda_c),
            ("lambda_n", self.lambda_n),
            ("lambda_h", self.lambda_h),
            ("lambda_g", self.lambda_g),
            ("beta", self.beta),
            ("label_smoothing", self.label_smoothing),
        ];
        for (name, v) in lambdas {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.stage_lr.iter().any(|lr| !(*lr > 0.0)) {
            return Err(Error::Config("stage learning rates must be > 0".into()));
        }
        if !(self.tau > 0.0 && self.tau_min > 0.0 && self.tau_decay > 0.0) {
            return Err(Error::Config("Gumbel temperatures must be > 0".into()));
        }
        let sizes = [
            ("d_r", self.d_r),
            ("d_rs", self.d_rs),
            ("d_x", self.d_x),
            ("d_xh", self.d_xh),
            ("d_xv", self.d_xv),
            ("d_w", self.d_w),
            ("d_h", self.d_h),
            ("d_att", self.d_att),
            ("batch_size", self.batch_size),
            ("max_len", self.max_len),
            ("samples_per_pair", self.samples_per_pair),
            ("chunk", self.chunk),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        self.decode.validate()
    }

    pub fn recommender(&self) -> RecommenderConfig {
        RecommenderConfig {
            d_r: self.d_r,
            d_rs: self.d_rs,
            encoder_hidden: self.encoder_hidden.clone(),
            regressor_hidden: self.regressor_hidden.clone(),
            beta: self.beta,
            lambda_h: self.lambda_h,
            pairs_per_user: self.pairs_per_user,
        }
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            d_x: self.d_x,
            d_xh: self.d_xh,
            d_xv: self.d_xv,
            lambda_g: self.lambda_g,
            max_len: self.max_len,
            compress: self.compress,
            copy_disabled: self.copy_disabled,
        }
    }

    pub fn critic(&self) -> CriticConfig {
        CriticConfig {
            d_w: self.d_w,
            d_h: self.d_h,
            d_att: self.d_att,
            hidden: self.critic_hidden.clone(),
            label_smoothing: self.label_smoothing,
            patience: self.patience,
            max_epochs: self.stage_epochs[0],
            batch_size: self.batch_size,
            lr: self.stage_lr[0],
        }
    }

    /// Gumbel temperature for a stage-5 epoch (0-based).
    pub fn tau_at(&self, epoch: usize) -> f64 {
        if self.tau_anneal {
            (self.tau * self.tau_decay.powi(epoch as i32)).max(self.tau_min)
        } else {
            self.tau
        }
    }
}
