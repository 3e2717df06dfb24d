//! On-device screening: governor decision, preprocessing, core-budgeted
//! inference and a thresholded verdict.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::image::preprocess;
use crate::eqo::{decide, working_set_estimate, DeviceState, GovernorPolicy, Mode};
use crate::error::{Error, Result};
use crate::ptq::QuantModel;
use crate::runtime::parallel_forward;
use crate::tensor::{argmax, FloatTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub tau_pos: f64,
    pub tau_margin: f64,
    /// Label treated as the positive finding; the first class label when
    /// unset.
    pub positive_label: Option<String>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            tau_pos: 0.5,
            tau_margin: 0.1,
            positive_label: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Positive,
    Negative,
    Uncertain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningResult {
    pub class_probabilities: Vec<f32>,
    pub verdict: Verdict,
    pub top_label: String,
    pub confidence: f32,
    pub latency_ms: f64,
    pub mode_used: Mode,
    pub core_budget_used: u32,
}

/// Labels of `m`, or class indices when the model carries none.
pub fn labels_of(m: &QuantModel, classes: usize) -> Vec<String> {
    if m.class_labels().is_empty() {
        (0..classes).map(|i| i.to_string()).collect()
    } else {
        m.class_labels().to_vec()
    }
}

/// Positive when the top class is the positive label, other classes
/// negative; uncertain unless the top probability reaches `tau_pos` and
/// leads the runner-up by at least `tau_margin`.
pub fn verdict(probs: &[f32], positive: usize, t: &Thresholds) -> Verdict {
    let top = argmax(probs);
    let runner_up = probs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, &p)| p)
        .fold(0.0f32, f32::max);
    let p = probs[top] as f64;
    if p < t.tau_pos || p - (runner_up as f64) < t.tau_margin {
        Verdict::Uncertain
    } else if top == positive {
        Verdict::Positive
    } else {
        Verdict::Negative
    }
}

pub fn screen(
    m: &QuantModel,
    img: &FloatTensor,
    state: &DeviceState,
    policy: &GovernorPolicy,
    thresholds: &Thresholds,
) -> Result<ScreeningResult> {
    state.validate()?;
    policy.validate()?;
    if !m.ends_in_softmax() {
        return Err(Error::NoSoftmax);
    }
    let classes = m.validate()?.last().map_or(0, |s| s.element_count());
    let labels = labels_of(m, classes);
    let positive = match &thresholds.positive_label {
        None => 0,
        Some(name) => labels
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| Error::UnknownPositiveLabel(name.clone()))?,
    };
    let decision = decide(policy, state, working_set_estimate(m));
    let start = Instant::now();
    let x = preprocess(img, m.input_shape())?;
    let probs = parallel_forward(m, &x, decision.core_budget as usize)?.into_data();
    let latency_ms = start.elapsed().as_secs_f64() * 1e3;
    let top = argmax(&probs);
    Ok(ScreeningResult {
        verdict: verdict(&probs, positive, thresholds),
        top_label: labels[top].clone(),
        confidence: probs[top],
        class_probabilities: probs,
        latency_ms,
        mode_used: decision.mode,
        core_budget_used: decision.core_budget,
    })
}
