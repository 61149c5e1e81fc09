//! Training objectives.
//!
//! The reconstruction objective family, per output element with error
//! `e = x - mu` and variance `s = sigma^2`:
//!
//! ```text
//! nll(e, s)        = e^2 / s + log s
//! hybrid(e, s, a)  = e^2 / s + log s + a / s        0 <= a <= 1
//! ```
//!
//! With `a = 0` the hybrid is exactly the Gaussian negative log-likelihood;
//! with `a = 1` it is (up to an affine shift) twice the KL divergence from a
//! unit-variance Gaussian centred on the target. For fixed `e^2` the hybrid
//! is minimised at `s = e^2 + a`, so learned variances can never collapse
//! below `a`: the regulariser buys stability at a bounded confidence cost.
//!
//! All reductions are means over every element, so values are comparable
//! across resolutions. Every loss here is a pure function; the gradient
//! paths run through [`crate::autodiff`] and are verified against central
//! finite differences in the test suite.

use ndarray::{Array3, ArrayD};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};

/// Bounds for the log-variance channel.
pub const LOG_VARIANCE_MIN: f64 = -7.0;
pub const LOG_VARIANCE_MAX: f64 = 7.0;

/// Per-pixel Gaussian prediction: mean in `[0,1]`, log-variance in
/// `[LOG_VARIANCE_MIN, LOG_VARIANCE_MAX]`, both shaped C x H x W.
#[derive(Clone, Debug)]
pub struct GaussianImage {
    mean: Array3<f64>,
    log_variance: Array3<f64>,
}

impl GaussianImage {
    pub fn new(mean: Array3<f64>, log_variance: Array3<f64>) -> Result<Self> {
        if mean.shape() != log_variance.shape() {
            return Err(Error::invalid(format!(
                "mean shape {:?} != log_variance shape {:?}",
                mean.shape(),
                log_variance.shape()
            )));
        }
        if mean.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("mean entries must lie in [0,1]"));
        }
        if log_variance
            .iter()
            .any(|v| !(LOG_VARIANCE_MIN..=LOG_VARIANCE_MAX).contains(v))
        {
            return Err(Error::invalid(format!(
                "log_variance entries must lie in [{LOG_VARIANCE_MIN},{LOG_VARIANCE_MAX}]"
            )));
        }
        Ok(GaussianImage { mean, log_variance })
    }

    pub fn mean(&self) -> &Array3<f64> {
        &self.mean
    }

    pub fn log_variance(&self) -> &Array3<f64> {
        &self.log_variance
    }

    /// Elementwise `exp(log_variance)`; strictly positive by construction.
    pub fn variance(&self) -> Array3<f64> {
        self.log_variance.mapv(f64::exp)
    }
}

/// Weights combining the loss terms, plus the confidence regulariser
/// strength `alpha`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub reconstruction_weight: f64,
    pub perceptual_weight: f64,
    pub latent_kl_weight: f64,
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            reconstruction_weight: 1.0,
            perceptual_weight: 1.0,
            latent_kl_weight: 1e-4,
            alpha: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!(
                "alpha must lie in [0,1], got {}",
                self.alpha
            )));
        }
        for (name, w) in [
            ("reconstruction_weight", self.reconstruction_weight),
            ("perceptual_weight", self.perceptual_weight),
            ("latent_kl_weight", self.latent_kl_weight),
        ] {
            if !(w >= 0.0) {
                return Err(Error::invalid(format!("{name} must be >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

/// Ordered multi-layer feature maps from a convolutional backbone,
/// shallow to deep.
#[derive(Clone, Debug)]
pub struct FeatureStack {
    layers: Vec<(String, Array3<f64>)>,
}

impl FeatureStack {
    pub fn new(layers: Vec<(String, Array3<f64>)>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("feature stack must be nonempty"));
        }
        for i in 1..layers.len() {
            if layers[..i].iter().any(|(id, _)| id == &layers[i].0) {
                return Err(Error::invalid(format!(
                    "duplicate layer id {:?} in feature stack",
                    layers[i].0
                )));
            }
        }
        Ok(FeatureStack { layers })
    }

    pub fn layers(&self) -> &[(String, Array3<f64>)] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

fn check_same_shape(a: &[usize], b: &[usize], what: &str) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!(
            "{what}: shape {a:?} does not match {b:?}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Graph builders. These are the implementation; the scalar functions below
// wrap them so that values and gradients always come from one code path.
// ---------------------------------------------------------------------------

/// Per-element `(x-mu)^2/s + log s + alpha/s`, averaged over all elements.
/// With `alpha == 0` the regulariser is skipped entirely, making the result
/// bit-identical to the plain negative log-likelihood.
pub fn kl_uncertainty_node(
    g: &mut Graph,
    mean: NodeId,
    log_variance: NodeId,
    target: NodeId,
    alpha: f64,
) -> NodeId {
    let diff = g.sub(target, mean);
    let sq = g.mul(diff, diff);
    let neg_lv = g.mul_scalar(log_variance, -1.0);
    let inv_var = g.exp(neg_lv);
    let scaled = g.mul(sq, inv_var);
    let mut term = g.add(scaled, log_variance);
    if alpha != 0.0 {
        let reg = g.mul_scalar(inv_var, alpha);
        term = g.add(term, reg);
    }
    g.mean_all(term)
}

/// Gaussian negative log-likelihood: the `alpha = 0` case.
pub fn gaussian_nll_node(
    g: &mut Graph,
    mean: NodeId,
    log_variance: NodeId,
    target: NodeId,
) -> NodeId {
    kl_uncertainty_node(g, mean, log_variance, target, 0.0)
}

/// Mean over layers of the per-layer feature MSE.
pub fn perceptual_loss_node(
    g: &mut Graph,
    pred_layers: &[NodeId],
    target_layers: &[NodeId],
) -> NodeId {
    assert_eq!(pred_layers.len(), target_layers.len());
    assert!(!pred_layers.is_empty());
    let mut acc: Option<NodeId> = None;
    for (&p, &t) in pred_layers.iter().zip(target_layers) {
        let diff = g.sub(p, t);
        let sq = g.mul(diff, diff);
        let mse = g.mean_all(sq);
        acc = Some(match acc {
            Some(a) => g.add(a, mse),
            None => mse,
        });
    }
    g.mul_scalar(acc.unwrap(), 1.0 / pred_layers.len() as f64)
}

/// KL from the latent posterior N(mu, sigma^2) to the standard normal,
/// averaged over elements: mean(0.5 * (mu^2 + sigma^2 - log sigma^2 - 1)).
pub fn latent_kl_node(g: &mut Graph, mean: NodeId, log_variance: NodeId) -> NodeId {
    let mu_sq = g.mul(mean, mean);
    let var = g.exp(log_variance);
    let s = g.add(mu_sq, var);
    let s = g.sub(s, log_variance);
    let s = g.add_scalar(s, -1.0);
    let s = g.mul_scalar(s, 0.5);
    g.mean_all(s)
}

// ---------------------------------------------------------------------------
// Scalar entry points.
// ---------------------------------------------------------------------------

/// Gaussian NLL: `(1/CHW) sum[(x-mu)^2/sigma^2 + log sigma^2]`.
pub fn gaussian_nll(pred: &GaussianImage, target: &Array3<f64>) -> Result<f64> {
    kl_uncertainty_loss(pred, target, 0.0)
}

/// Stabilised reconstruction loss:
/// `(1/CHW) sum[(x-mu)^2/sigma^2 + log sigma^2 + alpha/sigma^2]`.
pub fn kl_uncertainty_loss(pred: &GaussianImage, target: &Array3<f64>, alpha: f64) -> Result<f64> {
    check_same_shape(pred.mean().shape(), target.shape(), "prediction vs target")?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!(
            "alpha must lie in [0,1], got {alpha}"
        )));
    }
    let mut g = Graph::new();
    let mean = g.leaf(pred.mean().clone().into_dyn());
    let logvar = g.leaf(pred.log_variance().clone().into_dyn());
    let tgt = g.leaf(target.clone().into_dyn());
    let loss = kl_uncertainty_node(&mut g, mean, logvar, tgt, alpha);
    Ok(g.scalar_value(loss))
}

/// Elementwise KL divergence between two Gaussian fields:
/// `log(sigma2/sigma1) + (sigma1^2 + (mu1-mu2)^2) / (2 sigma2^2) - 1/2`.
pub fn kl_gaussians(
    mu1: &ArrayD<f64>,
    var1: &ArrayD<f64>,
    mu2: &ArrayD<f64>,
    var2: &ArrayD<f64>,
) -> Result<ArrayD<f64>> {
    check_same_shape(mu1.shape(), var1.shape(), "mu1 vs var1")?;
    check_same_shape(mu1.shape(), mu2.shape(), "mu1 vs mu2")?;
    check_same_shape(mu1.shape(), var2.shape(), "mu1 vs var2")?;
    if var1.iter().any(|v| *v <= 0.0) || var2.iter().any(|v| *v <= 0.0) {
        return Err(Error::invalid("variances must be strictly positive"));
    }
    let mut out = ArrayD::zeros(mu1.raw_dim());
    for ((((o, m1), v1), m2), v2) in out
        .iter_mut()
        .zip(mu1.iter())
        .zip(var1.iter())
        .zip(mu2.iter())
        .zip(var2.iter())
    {
        let d = m1 - m2;
        *o = 0.5 * (v2 / v1).ln() + (v1 + d * d) / (2.0 * v2) - 0.5;
    }
    Ok(out)
}

/// Mean over layers of per-layer feature MSE; zero iff the stacks are
/// identical.
pub fn deep_perceptual_loss(pred: &FeatureStack, target: &FeatureStack) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::invalid(format!(
            "feature stacks have {} vs {} layers",
            pred.len(),
            target.len()
        )));
    }
    let mut total = 0.0;
    for ((pid, pf), (tid, tf)) in pred.layers().iter().zip(target.layers()) {
        if pid != tid {
            return Err(Error::invalid(format!(
                "layer id mismatch: {pid:?} vs {tid:?}"
            )));
        }
        check_same_shape(pf.shape(), tf.shape(), &format!("layer {pid}"))?;
        let mut sum = 0.0;
        for (a, b) in pf.iter().zip(tf.iter()) {
            let d = a - b;
            sum += d * d;
        }
        total += sum / pf.len() as f64;
    }
    Ok(total / pred.len() as f64)
}

/// Per-term values of one combined loss evaluation. Each term is reported
/// before weighting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub reconstruction: f64,
    pub perceptual: f64,
    pub latent_kl: f64,
}

/// Weighted combination of the three training terms.
pub fn total_loss(
    pred: &GaussianImage,
    target: &Array3<f64>,
    pred_features: &FeatureStack,
    target_features: &FeatureStack,
    latent_kl: f64,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let reconstruction = kl_uncertainty_loss(pred, target, weights.alpha)?;
    let perceptual = deep_perceptual_loss(pred_features, target_features)?;
    let total = weights.reconstruction_weight * reconstruction
        + weights.perceptual_weight * perceptual
        + weights.latent_kl_weight * latent_kl;
    Ok(LossBreakdown {
        total,
        reconstruction,
        perceptual,
        latent_kl,
    })
}
