//! Experiment configuration (JSON).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binfmt;
use crate::correction::CorrectionConfig;
use crate::encoder::{EncoderConfig, MaskMode};
use crate::error::{json_err, Error, Result};
use crate::eval::EvalConfig;
use crate::head::{CostWeights, HeadConfig, LossWeights};
use crate::lift::BevConfig;
use crate::recon::{PvrKind, ReconConfig};
use crate::scene::{CameraRig, RigPreset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Decay the learning rate to zero along a half cosine over all steps.
    pub cosine_schedule: bool,
    /// Weight of the reconstruction loss.
    pub lambda_rec: f64,
    pub correction: CorrectionConfig,
    pub mask: MaskMode,
    /// Expected rig; `None` accepts whatever rig the dataset was rendered with.
    pub rig: Option<RigPreset>,
    pub encoder: EncoderConfig,
    pub recon: ReconConfig,
    pub bev: BevConfig,
    pub head: HeadConfig,
    pub loss: LossWeights,
    pub cost: CostWeights,
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 30,
            batch_size: 4,
            lr: 4.2e-4,
            weight_decay: 0.01,
            cosine_schedule: false,
            lambda_rec: 0.05,
            correction: CorrectionConfig::default(),
            mask: MaskMode::default(),
            rig: None,
            encoder: EncoderConfig::default(),
            recon: ReconConfig::default(),
            bev: BevConfig::default(),
            head: HeadConfig::default(),
            loss: LossWeights::default(),
            cost: CostWeights::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Plain model trained on complete views only: no masking, no
    /// reconstruction, no correction.
    pub fn baseline() -> Self {
        let mut c = Self { mask: MaskMode::Complete, lambda_rec: 0.0, ..Self::default() };
        c.recon.kind = PvrKind::None;
        c.correction.weight = 0.0;
        c
    }

    pub fn validate(&self, rig: &CameraRig) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be at least 1".into());
        }
        if !(self.lambda_rec >= 0.0) || !(self.correction.weight >= 0.0) {
            return bad("loss weights λ must be non-negative".into());
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning rate must be positive and weight decay non-negative".into());
        }
        if let Some(expected) = self.rig {
            if CameraRig::preset(expected).len() != rig.len() || CameraRig::preset(expected) != *rig {
                return bad(format!("config expects rig {expected:?} but the dataset uses a {}-camera rig", rig.len()));
            }
        }
        self.mask.validate(rig.len()).map_err(|e| Error::Config(e.to_string()))?;
        self.eval.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = binfmt::read_file(path)?;
        serde_json::from_slice(&bytes).map_err(json_err(path))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_vec_pretty(self).map_err(json_err(path))?;
        binfmt::write_file(path, &text)
    }
}
