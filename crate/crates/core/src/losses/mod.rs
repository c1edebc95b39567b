//! GAN objectives as differentiable functions of discriminator outputs.
//!
//! Discriminator objectives are returned as the quantity D ascends; generator
//! objectives as the quantity G descends. Probabilities are always formed in
//! log space from raw scores.

mod taylor;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Graph, Var};
use crate::Scalar;

pub use taylor::{adv_loss_taylor_gap, ScoreModel, TaylorGap};

type Res = Result<Var, AutodiffError>;

/// Graph handles for a batch through a two-headed discriminator:
/// `adv_score: [n, 1]` raw scores, `class_logits: [n, C]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiscriminatorOutput {
    pub adv_score: Var,
    pub class_logits: Var,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassificationTerm {
    /// `log P(y | x)`, the cross-entropy form.
    #[default]
    LogProb,
    /// `P(y | x)` without the log.
    RawProb,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossCoefficients {
    pub alpha_c_f: f64,
    pub alpha_c_g: f64,
    /// KL-to-uniform term on fake class posteriors in the discriminator loss.
    pub kl_enabled: bool,
    /// Classification term in the generator loss.
    pub g_class_enabled: bool,
    pub classification_term: ClassificationTerm,
}

impl Default for LossCoefficients {
    fn default() -> Self {
        Self {
            alpha_c_f: 1.0,
            alpha_c_g: 1.0,
            kl_enabled: true,
            g_class_enabled: true,
            classification_term: ClassificationTerm::LogProb,
        }
    }
}

impl LossCoefficients {
    pub fn validate(&self) -> Result<(), AutodiffError> {
        for (name, alpha, on) in [
            ("alpha_c_f", self.alpha_c_f, self.kl_enabled),
            ("alpha_c_g", self.alpha_c_g, self.g_class_enabled),
        ] {
            if on && !(alpha > 0.0 && alpha <= 1.0) {
                return Err(AutodiffError::Contract(format!("{name} must lie in (0, 1], got {alpha}")));
            }
        }
        Ok(())
    }
}

fn check_batch<T: Scalar>(g: &Graph<T>, out: DiscriminatorOutput, labels: Option<&[usize]>) -> Result<usize, AutodiffError> {
    let n = g.shape(out.adv_score)[0];
    if g.shape(out.adv_score) != [n, 1] || g.shape(out.class_logits).len() != 2 || g.shape(out.class_logits)[0] != n {
        return Err(AutodiffError::ShapeMismatch {
            op: "discriminator output",
            lhs: g.shape(out.adv_score).to_vec(),
            rhs: g.shape(out.class_logits).to_vec(),
        });
    }
    if let Some(labels) = labels {
        if labels.len() != n {
            return Err(AutodiffError::Contract(format!("{} labels for a batch of {n}", labels.len())));
        }
    }
    Ok(n)
}

/// Per-sample `log P(y_i | logits_i)` as `[n, 1]`.
pub fn label_log_prob<T: Scalar>(g: &mut Graph<T>, logits: Var, labels: &[usize]) -> Res {
    let classes = g.shape(logits)[1];
    let lsm = g.log_softmax(logits)?;
    let oh = g.one_hot(labels, classes)?;
    let picked = g.mul(lsm, oh)?;
    g.sum_cols(picked)
}

/// Per-sample `KL(softmax(logits_i) || U)` as `[n, 1]`.
pub fn kl_to_uniform_rows<T: Scalar>(g: &mut Graph<T>, logits: Var) -> Res {
    let classes = g.shape(logits)[1];
    let p = g.softmax(logits)?;
    let lp = g.log_softmax(logits)?;
    let plp = g.mul(p, lp)?;
    let neg_h = g.sum_cols(plp)?;
    g.add_scalar(neg_h, T::lit((classes as f64).ln()))
}

fn log_d_real<T: Scalar>(g: &mut Graph<T>, scores: Var) -> Res {
    g.log_sigmoid(scores)
}

/// `log(1 - sigmoid(s)) = log_sigmoid(-s)`
fn log_d_fake<T: Scalar>(g: &mut Graph<T>, scores: Var) -> Res {
    let neg = g.neg(scores)?;
    g.log_sigmoid(neg)
}

/// `mean log D(x_r) + mean log(1 - D(x_f))`
pub fn gan_loss_original<T: Scalar>(g: &mut Graph<T>, scores_real: Var, scores_fake: Var) -> Res {
    let a = log_d_real(g, scores_real)?;
    let a = g.mean(a)?;
    let b = gan_fake_term(g, scores_fake)?;
    g.add(a, b)
}

/// `mean log(1 - D(x_f))`, the fake half of [`gan_loss_original`].
pub fn gan_fake_term<T: Scalar>(g: &mut Graph<T>, scores_fake: Var) -> Res {
    let b = log_d_fake(g, scores_fake)?;
    g.mean(b)
}

/// `mean -log D(x_f)`
pub fn gan_loss_nonsaturating<T: Scalar>(g: &mut Graph<T>, scores_fake: Var) -> Res {
    let l = log_d_real(g, scores_fake)?;
    let m = g.mean(l)?;
    g.neg(m)
}

/// Real half of the ACGAN objective: `mean[log P(real|x_r) + log P(y_r|x_r)]`.
pub fn acgan_d_real<T: Scalar>(g: &mut Graph<T>, out: DiscriminatorOutput, labels: &[usize]) -> Res {
    check_batch(g, out, Some(labels))?;
    let adv = log_d_real(g, out.adv_score)?;
    let cls = label_log_prob(g, out.class_logits, labels)?;
    let s = g.add(adv, cls)?;
    g.mean(s)
}

/// Fake half of the ACGAN objective: `mean[log P(fake|x_f) + log P(y_f|x_f)]`.
pub fn acgan_d_fake<T: Scalar>(g: &mut Graph<T>, out: DiscriminatorOutput, labels: &[usize]) -> Res {
    check_batch(g, out, Some(labels))?;
    let adv = log_d_fake(g, out.adv_score)?;
    let cls = label_log_prob(g, out.class_logits, labels)?;
    let s = g.add(adv, cls)?;
    g.mean(s)
}

pub fn acgan_d_loss<T: Scalar>(
    g: &mut Graph<T>,
    out_real: DiscriminatorOutput,
    y_real: &[usize],
    out_fake: DiscriminatorOutput,
    y_fake: &[usize],
) -> Res {
    let r = acgan_d_real(g, out_real, y_real)?;
    let f = acgan_d_fake(g, out_fake, y_fake)?;
    g.add(r, f)
}

/// `mean log P(fake | x_f)`; the class head is ignored on fakes.
pub fn robgan_fake_loss<T: Scalar>(g: &mut Graph<T>, out_fake: DiscriminatorOutput) -> Res {
    check_batch(g, out_fake, None)?;
    gan_fake_term(g, out_fake.adv_score)
}

fn hinge_real<T: Scalar>(g: &mut Graph<T>, scores: Var) -> Res {
    // -max(0, 1 - s)
    let neg = g.neg(scores)?;
    let m = g.add_scalar(neg, T::one())?;
    let r = g.relu(m)?;
    g.neg(r)
}

fn hinge_fake<T: Scalar>(g: &mut Graph<T>, scores: Var) -> Res {
    // -max(0, 1 + s)
    let m = g.add_scalar(scores, T::one())?;
    let r = g.relu(m)?;
    g.neg(r)
}

/// `mean[-max(0, 1 - s_r) + cls(y_r | x_r)]` with `cls` the log or raw class probability.
pub fn fastgan_d_real<T: Scalar>(
    g: &mut Graph<T>,
    out: DiscriminatorOutput,
    labels: &[usize],
    coeffs: &LossCoefficients,
) -> Res {
    check_batch(g, out, Some(labels))?;
    let h = hinge_real(g, out.adv_score)?;
    let lp = label_log_prob(g, out.class_logits, labels)?;
    let cls = match coeffs.classification_term {
        ClassificationTerm::LogProb => lp,
        ClassificationTerm::RawProb => g.exp(lp)?,
    };
    let s = g.add(h, cls)?;
    g.mean(s)
}

/// `mean[-max(0, 1 + s_f)] - alpha_c_f * mean KL(P(y|x_f) || U)`
pub fn fastgan_d_fake<T: Scalar>(g: &mut Graph<T>, out: DiscriminatorOutput, coeffs: &LossCoefficients) -> Res {
    check_batch(g, out, None)?;
    let h = hinge_fake(g, out.adv_score)?;
    let h = g.mean(h)?;
    if !coeffs.kl_enabled {
        return Ok(h);
    }
    let kl = kl_to_uniform_rows(g, out.class_logits)?;
    let kl = g.mean(kl)?;
    let kl = g.scale(kl, T::lit(coeffs.alpha_c_f))?;
    g.sub(h, kl)
}

pub fn fastgan_d_loss<T: Scalar>(
    g: &mut Graph<T>,
    out_real: DiscriminatorOutput,
    y_real: &[usize],
    out_fake: DiscriminatorOutput,
    coeffs: &LossCoefficients,
) -> Res {
    let r = fastgan_d_real(g, out_real, y_real, coeffs)?;
    let f = fastgan_d_fake(g, out_fake, coeffs)?;
    g.add(r, f)
}

/// `mean[-s_f - alpha_c_g * log P(y_f | x_f)]`
pub fn fastgan_g_loss<T: Scalar>(
    g: &mut Graph<T>,
    out_fake: DiscriminatorOutput,
    y_fake: &[usize],
    coeffs: &LossCoefficients,
) -> Res {
    check_batch(g, out_fake, Some(y_fake))?;
    let adv = g.mean(out_fake.adv_score)?;
    let adv = g.neg(adv)?;
    if !coeffs.g_class_enabled {
        return Ok(adv);
    }
    let lp = label_log_prob(g, out_fake.class_logits, y_fake)?;
    let lp = g.mean(lp)?;
    let lp = g.scale(lp, T::lit(coeffs.alpha_c_g))?;
    g.sub(adv, lp)
}

/// ACGAN generator objective: `mean[-log D(x_f) - log P(y_f | x_f)]`.
pub fn acgan_g_loss<T: Scalar>(g: &mut Graph<T>, out_fake: DiscriminatorOutput, y_fake: &[usize]) -> Res {
    check_batch(g, out_fake, Some(y_fake))?;
    let adv = gan_loss_nonsaturating(g, out_fake.adv_score)?;
    let lp = label_log_prob(g, out_fake.class_logits, y_fake)?;
    let lp = g.mean(lp)?;
    g.sub(adv, lp)
}

/// `sum p_i log(p_i C)`, with `0 log 0 = 0`.
pub fn kl_to_uniform<T: Scalar>(probs: &[T]) -> Result<T, AutodiffError> {
    if probs.is_empty() {
        return Err(AutodiffError::Contract("empty distribution".into()));
    }
    let total: f64 = probs.iter().map(|p| p.as_f64()).sum();
    if probs.iter().any(|p| !(p.as_f64() >= 0.0)) || (total - 1.0).abs() > 1e-8 {
        return Err(AutodiffError::Contract(format!("not a probability vector (sum {total})")));
    }
    let c = T::from_usize(probs.len()).unwrap();
    Ok(probs.iter().filter(|p| **p > T::zero()).map(|&p| p * (p * c).ln()).sum())
}

/// Generator objectives paired with each discriminator loss family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Original,
    Nonsaturating,
    Acgan,
    Robgan,
    Fastgan,
}

impl LossKind {
    /// Real-batch part of the discriminator objective (ascended).
    pub fn d_real<T: Scalar>(
        self,
        g: &mut Graph<T>,
        out: DiscriminatorOutput,
        labels: &[usize],
        coeffs: &LossCoefficients,
    ) -> Res {
        match self {
            LossKind::Original | LossKind::Nonsaturating => {
                let l = log_d_real(g, out.adv_score)?;
                g.mean(l)
            }
            LossKind::Acgan | LossKind::Robgan => acgan_d_real(g, out, labels),
            LossKind::Fastgan => fastgan_d_real(g, out, labels, coeffs),
        }
    }

    /// Fake-batch part of the discriminator objective (ascended).
    pub fn d_fake<T: Scalar>(
        self,
        g: &mut Graph<T>,
        out: DiscriminatorOutput,
        labels: &[usize],
        coeffs: &LossCoefficients,
    ) -> Res {
        match self {
            LossKind::Original | LossKind::Nonsaturating => gan_fake_term(g, out.adv_score),
            LossKind::Acgan => acgan_d_fake(g, out, labels),
            LossKind::Robgan => robgan_fake_loss(g, out),
            LossKind::Fastgan => fastgan_d_fake(g, out, coeffs),
        }
    }

    /// Generator objective (descended).
    pub fn g_loss<T: Scalar>(
        self,
        g: &mut Graph<T>,
        out: DiscriminatorOutput,
        labels: &[usize],
        coeffs: &LossCoefficients,
    ) -> Res {
        match self {
            LossKind::Original => {
                let f = gan_fake_term(g, out.adv_score)?;
                Ok(f)
            }
            LossKind::Nonsaturating => gan_loss_nonsaturating(g, out.adv_score),
            LossKind::Acgan | LossKind::Robgan => acgan_g_loss(g, out, labels),
            LossKind::Fastgan => fastgan_g_loss(g, out, labels, coeffs),
        }
    }
}
