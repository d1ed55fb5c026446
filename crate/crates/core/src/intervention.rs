// SPDX-License-Identifier: MIT OR Apache-2.0

//! Value-vector scaling on a single attention head.
//!
//! The scale is applied to the head's value stream (after `W_V`, before the
//! attention-weighted mix) at every position and in every forward pass of a
//! generation loop. Attention weights do not depend on values, so the head's
//! output `z` scales by exactly `alpha`. Under grouped-query attention the
//! per-query-head copy of the shared value stream is scaled, leaving the
//! other query heads of the group untouched.

use serde::{Deserialize, Serialize};

use crate::config::{HeadRef, ModelConfig};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::suite::{evaluate, EvalOptions, EvalResult, PromptItem};
use crate::tensor::Tensor2D;
use crate::tokenizer::Vocab;

/// Activation site the scale is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Site {
    #[default]
    Value,
}

/// Sequence positions the scale is applied at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Positions {
    #[default]
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub target: HeadRef,
    #[serde(default)]
    pub site: Site,
    pub alpha: f32,
    #[serde(default)]
    pub positions: Positions,
}

impl InterventionSpec {
    pub fn scale_value(target: HeadRef, alpha: f32) -> Self {
        Self {
            target,
            site: Site::Value,
            alpha,
            positions: Positions::All,
        }
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        self.target.check(cfg)?;
        if !self.alpha.is_finite() {
            return Err(Error::InvalidIntervention(format!(
                "alpha must be finite, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn targets(&self, layer: usize, head: usize) -> bool {
        self.target.layer == layer && self.target.head == head
    }
}

/// Multiplies a head's value vectors (`positions × d_head`) by `alpha`.
pub fn apply_scaling(spec: &InterventionSpec, values: &Tensor2D) -> Tensor2D {
    let Site::Value = spec.site;
    let Positions::All = spec.positions;
    let data = values.data().iter().map(|v| v * spec.alpha).collect();
    Tensor2D::new(values.rows(), values.cols(), data).expect("same shape")
}

/// Suite evaluations for one target head across a list of scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub target: HeadRef,
    pub baseline: EvalResult,
    /// One result per requested alpha, in request order.
    pub runs: Vec<EvalResult>,
}

impl SweepResult {
    /// `(alpha, p_instrument, p_attribute, p_other)` rows, baseline first
    /// with `alpha = None`.
    pub fn curve(&self) -> Vec<(Option<f32>, f64, f64, f64)> {
        std::iter::once(&self.baseline)
            .chain(&self.runs)
            .map(|r| {
                (
                    r.alpha,
                    r.proportions.instrument,
                    r.proportions.attribute,
                    r.proportions.other,
                )
            })
            .collect()
    }

    pub fn curve_csv(&self) -> String {
        let mut out = String::from("alpha,p_instrument,p_attribute,p_other\n");
        for (alpha, i, a, o) in self.curve() {
            let alpha = alpha.map(|a| a.to_string()).unwrap_or_default();
            out.push_str(&format!("{alpha},{i},{a},{o}\n"));
        }
        out
    }
}

/// Evaluates the suite once without intervention and once per alpha with
/// `target`'s value vectors scaled.
pub fn sweep(
    model: &Model,
    vocab: &Vocab,
    suite: &[PromptItem],
    target: HeadRef,
    alphas: &[f32],
    opts: &EvalOptions,
) -> Result<SweepResult> {
    if alphas.is_empty() {
        return Err(Error::InvalidIntervention("empty alpha list".into()));
    }
    for &alpha in alphas {
        InterventionSpec::scale_value(target, alpha).validate(model.config())?;
    }
    let baseline = evaluate(model, vocab, suite, &[], opts)?;
    let runs = alphas
        .iter()
        .map(|&alpha| {
            let spec = InterventionSpec::scale_value(target, alpha);
            let mut r = evaluate(model, vocab, suite, &[spec], opts)?;
            r.alpha = Some(alpha);
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        target,
        baseline,
        runs,
    })
}
