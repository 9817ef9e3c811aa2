//! Loss terms with hand-derived gradients.
//!
//! Every term returns its scalar value together with the gradient of that
//! scalar with respect to its inputs. [`total_loss`] combines them and
//! reports gradients for features, centers, classifiers and the feature
//! normalizer.

mod center;
mod contrastive;
mod identity;
mod query;
mod total;

pub use center::{center_loss_stacked, loss_center, CenterBank, CenterOutput};
pub use contrastive::{loss_mc, loss_mtc, loss_mtc_from, loss_neg, loss_pos, DistanceLoss, MtcDistances, MtcOutput};
pub use identity::{
    consistency_targets, cross_entropy_hard, cross_entropy_soft, loss_id, loss_id_fixed_targets, loss_id_given_targets,
    normalize_features, BatchNorm, ClassifierGrads, ClassifierSet, IdLossOutput, NormCache, NormGrads, NormOutput,
};
pub use query::{loss_mqr, MqrOutput, MQR_PAIRS};
pub use total::{
    total_loss, total_loss_fixed_targets, total_loss_given_targets, LossConfig, LossReport, TermFlags, TermValues,
};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the positive term inside each modality constraint.
    pub lambda1: f64,
    /// Weight of the negative term inside each modality constraint.
    pub lambda2: f64,
    /// Weight of the modality-transition contrastive loss.
    pub alpha: f64,
    /// Weight of the center loss.
    pub beta: f64,
    /// Weight of the modality-query regularization.
    pub gamma: f64,
    /// Guard added to identity distances in the negative term.
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.1,
            alpha: 1.0,
            beta: 0.005,
            gamma: 1.0,
            epsilon: 1e-6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !v.is_finite() {
                return Err(invalid(format!("loss.{name}"), "must be finite"));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(invalid("loss.epsilon", "must be positive and finite"));
        }
        Ok(())
    }
}
