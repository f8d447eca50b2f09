//! Evaluation metrics: threshold accuracy and accuracy-vs-threshold
//! curves, the Gaussian perplexity metric, and the discretized-action
//! classification view.

use std::path::Path;

use crate::data::DrivingBehavior;
use crate::error::{Error, Result};

/// Which regression target a metric refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Angle,
    Speed,
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Target::Angle => write!(f, "angle"),
            Target::Speed => write!(f, "speed"),
        }
    }
}

/// Fraction of samples whose absolute error is strictly below `tol`
/// (same units as the inputs).
pub fn threshold_accuracy(preds: &[f64], truths: &[f64], tol: f64) -> Result<f64> {
    if preds.is_empty() || preds.len() != truths.len() {
        return Err(Error::Contract(format!(
            "threshold_accuracy needs equal nonempty lists, got {} and {}",
            preds.len(),
            truths.len()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Contract(format!("tolerance must be > 0, got {tol}")));
    }
    let hits = preds
        .iter()
        .zip(truths)
        .filter(|(p, t)| (*p - *t).abs() < tol)
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Accuracy at each of an ascending list of thresholds. Nondecreasing by
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyCurve {
    pub target: Target,
    pub thresholds: Vec<f64>,
    pub accuracies: Vec<f64>,
}

pub fn accuracy_curve(
    preds: &[f64],
    truths: &[f64],
    thresholds: &[f64],
    target: Target,
) -> Result<AccuracyCurve> {
    if thresholds.is_empty() {
        return Err(Error::Contract("accuracy_curve needs thresholds".into()));
    }
    for w in thresholds.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Contract(format!(
                "thresholds must be strictly ascending ({} then {})",
                w[0], w[1]
            )));
        }
    }
    let accuracies = thresholds
        .iter()
        .map(|&t| threshold_accuracy(preds, truths, t))
        .collect::<Result<Vec<f64>>>()?;
    Ok(AccuracyCurve {
        target,
        thresholds: thresholds.to_vec(),
        accuracies,
    })
}

/// CSV rows `threshold,accuracy,target,model` for one or more curves.
pub fn curves_to_csv(curves: &[AccuracyCurve], model: &str) -> String {
    let mut out = String::from("threshold,accuracy,target,model\n");
    for curve in curves {
        for (t, a) in curve.thresholds.iter().zip(&curve.accuracies) {
            out.push_str(&format!("{},{},{},{}\n", t, a, curve.target, model));
        }
    }
    out
}

pub fn save_curves_csv(curves: &[AccuracyCurve], model: &str, path: &Path) -> Result<()> {
    std::fs::write(path, curves_to_csv(curves, model)).map_err(|e| Error::io(path, e))
}

/// Exponentiated mean Gaussian negative log-likelihood of the truths under
/// predictions, per target; `combined` is the geometric mean of the two.
#[derive(Debug, Clone, PartialEq)]
pub struct PerplexityReport {
    pub angle_perplexity: f64,
    pub speed_perplexity: f64,
    pub combined: f64,
    pub sigma_angle: f64,
    pub sigma_speed: f64,
    pub count: usize,
}

/// exp((1/T)·Σₜ −log N(truthₜ | predₜ, σ²)) for one target.
pub fn perplexity(preds: &[f64], truths: &[f64], sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Contract(format!("sigma must be > 0, got {sigma}")));
    }
    if preds.is_empty() || preds.len() != truths.len() {
        return Err(Error::Contract(
            "perplexity needs equal nonempty lists".into(),
        ));
    }
    let log_norm = (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let mut nll_sum = 0.0;
    for (p, t) in preds.iter().zip(truths) {
        let e = p - t;
        nll_sum += e * e / (2.0 * sigma * sigma) + log_norm;
    }
    Ok((nll_sum / preds.len() as f64).exp())
}

pub fn perplexity_report(
    angle_preds: &[f64],
    angle_truths: &[f64],
    speed_preds: &[f64],
    speed_truths: &[f64],
    sigma_angle: f64,
    sigma_speed: f64,
) -> Result<PerplexityReport> {
    let angle_perplexity = perplexity(angle_preds, angle_truths, sigma_angle)?;
    let speed_perplexity = perplexity(speed_preds, speed_truths, sigma_speed)?;
    Ok(PerplexityReport {
        angle_perplexity,
        speed_perplexity,
        combined: (angle_perplexity * speed_perplexity).sqrt(),
        sigma_angle,
        sigma_speed,
        count: angle_preds.len(),
    })
}

/// Discrete driving actions for the classification-task view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionClass {
    Straight,
    Stop,
    TurnLeft,
    TurnRight,
}

impl std::fmt::Display for ActionClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ActionClass::Straight => write!(f, "straight"),
            ActionClass::Stop => write!(f, "stop"),
            ActionClass::TurnLeft => write!(f, "turn_left"),
            ActionClass::TurnRight => write!(f, "turn_right"),
        }
    }
}

/// Total classification of a behavior: stopping dominates, then strict
/// angle cuts decide turns, else straight. `speed` is compared in the
/// same units as `stop_cut`.
pub fn discretize_action(angle_rad: f64, speed: f64, angle_cut: f64, stop_cut: f64) -> ActionClass {
    if speed < stop_cut {
        ActionClass::Stop
    } else if angle_rad > angle_cut {
        ActionClass::TurnLeft
    } else if angle_rad < -angle_cut {
        ActionClass::TurnRight
    } else {
        ActionClass::Straight
    }
}

pub fn discretize_behavior(
    behavior: &DrivingBehavior,
    max_speed_kmh: f64,
    angle_cut: f64,
    stop_cut: f64,
) -> ActionClass {
    discretize_action(
        behavior.angle_rad,
        behavior.speed_norm(max_speed_kmh),
        angle_cut,
        stop_cut,
    )
}

/// Fraction of aligned (angle, speed) pairs whose discretized classes
/// match.
pub fn classification_accuracy(
    preds: &[(f64, f64)],
    truths: &[(f64, f64)],
    angle_cut: f64,
    stop_cut: f64,
) -> Result<f64> {
    if preds.is_empty() || preds.len() != truths.len() {
        return Err(Error::Contract(
            "classification_accuracy needs equal nonempty lists".into(),
        ));
    }
    let hits = preds
        .iter()
        .zip(truths)
        .filter(|((pa, ps), (ta, ts))| {
            discretize_action(*pa, *ps, angle_cut, stop_cut)
                == discretize_action(*ta, *ts, angle_cut, stop_cut)
        })
        .count();
    Ok(hits as f64 / preds.len() as f64)
}
