//! Small trainable encoder, projector and predictor.
//!
//! The encoder applies an MLP to every frame independently, mean-pools the
//! per-frame activations over time and maps the pooled vector to the
//! feature space. Projector and predictor are plain MLPs on top.

mod network;
mod optim;
mod params;
mod train;

pub use network::{backward, forward, Stage, Tape};
pub use optim::{ema_update, lr_at, sgd_step, tau_at, trust_ratio, OptimConfig, OptimState};
pub use params::ParamSet;
pub use train::{build_views, loss_and_grads, train, StepLog, TrainOutcome, Trainer};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::Objective;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Normalization applied to projector/predictor hidden layers. `Layer`
/// standardizes each row over its features, so no statistic couples
/// different batch items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HiddenNorm {
    None,
    Layer,
}

/// Architecture of the online network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub encoder_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub projector_hidden: Vec<usize>,
    pub projector_out: usize,
    pub predictor_hidden: Vec<usize>,
    pub activation: Activation,
    pub norm: HiddenNorm,
}

/// User-facing architecture knobs; input dims come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub encoder_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub projector_hidden_dim: usize,
    pub projector_out: usize,
    pub predictor_hidden_dim: usize,
    pub activation: Activation,
    pub norm: HiddenNorm,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            encoder_hidden: vec![64, 64],
            feature_dim: 32,
            projector_hidden_dim: 64,
            projector_out: 32,
            predictor_hidden_dim: 64,
            activation: Activation::Relu,
            norm: HiddenNorm::Layer,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::Config { field: format!("net.{field}"), message: msg.into() });
        if self.encoder_hidden.contains(&0) {
            return bad("encoder_hidden", "layer widths must be positive");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim", "must be positive");
        }
        if self.projector_hidden_dim == 0 || self.projector_out == 0 {
            return bad("projector_out", "projector dims must be positive");
        }
        if self.predictor_hidden_dim == 0 {
            return bad("predictor_hidden_dim", "must be positive");
        }
        Ok(())
    }

    /// Projector depth follows the objective: two linear layers for BYOL,
    /// three for SimCLR and VICReg. Only BYOL gets a predictor.
    pub fn spec_for(&self, objective: Objective, channels: usize, height: usize, width: usize) -> NetSpec {
        let (projector_hidden, predictor_hidden) = match objective {
            Objective::Byol => (vec![self.projector_hidden_dim], vec![self.predictor_hidden_dim]),
            Objective::Simclr | Objective::Vicreg => (vec![self.projector_hidden_dim; 2], vec![]),
        };
        NetSpec {
            channels,
            height,
            width,
            encoder_hidden: self.encoder_hidden.clone(),
            feature_dim: self.feature_dim,
            projector_hidden,
            projector_out: self.projector_out,
            predictor_hidden,
            activation: self.activation,
            norm: self.norm,
        }
    }
}

impl NetSpec {
    pub fn input_dim(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn has_predictor(&self) -> bool {
        !self.predictor_hidden.is_empty()
    }

    /// `(name prefix, fan_in, fan_out)` for every linear layer, in order.
    pub(crate) fn layers(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let push_mlp = |prefix: &str, input: usize, hidden: &[usize], output: usize, out: &mut Vec<_>| {
            let mut fan_in = input;
            for (i, &w) in hidden.iter().enumerate() {
                out.push((format!("{prefix}.{i}"), fan_in, w));
                fan_in = w;
            }
            out.push((format!("{prefix}.out"), fan_in, output));
        };
        push_mlp("encoder", self.input_dim(), &self.encoder_hidden, self.feature_dim, &mut out);
        push_mlp("projector", self.feature_dim, &self.projector_hidden, self.projector_out, &mut out);
        if self.has_predictor() {
            push_mlp("predictor", self.projector_out, &self.predictor_hidden, self.projector_out, &mut out);
        }
        out
    }
}
