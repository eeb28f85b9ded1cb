//! Normalisations that turn unbounded branch coefficients into a probability mass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PmfKind {
    /// `|w_i| / sum_j |w_j|`
    #[default]
    #[serde(alias = "abs")]
    AbsNormalize,
    Softmax,
    Sigmoid,
}

impl PmfKind {
    pub fn name(self) -> &'static str {
        match self {
            PmfKind::AbsNormalize => "abs",
            PmfKind::Softmax => "softmax",
            PmfKind::Sigmoid => "sigmoid",
        }
    }
}

impl std::str::FromStr for PmfKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abs" | "abs_normalize" => Ok(PmfKind::AbsNormalize),
            "softmax" => Ok(PmfKind::Softmax),
            "sigmoid" => Ok(PmfKind::Sigmoid),
            _ => Err(Error::invalid(format!(
                "unknown pmf kind {s:?} (expected abs, softmax or sigmoid)"
            ))),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Unnormalised non-negative scores and their derivatives with respect to `w_i`.
fn scores(w: &[f64], kind: PmfKind) -> (Vec<f64>, Vec<f64>) {
    match kind {
        PmfKind::AbsNormalize => (
            w.iter().map(|v| v.abs()).collect(),
            // subgradient 0 at the kink
            w.iter()
                .map(|&v| {
                    if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect(),
        ),
        PmfKind::Softmax => {
            let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = w.iter().map(|v| (v - max).exp()).collect();
            (e.clone(), e)
        }
        PmfKind::Sigmoid => {
            let s: Vec<f64> = w.iter().map(|&v| sigmoid(v)).collect();
            let ds = s.iter().map(|v| v * (1.0 - v)).collect();
            (s, ds)
        }
    }
}

/// Probability mass over branches derived from coefficients `w`.
pub fn pmf(w: &[f64], kind: PmfKind) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Err(Error::invalid("coefficient vector is empty"));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("coefficients must be finite"));
    }
    let (s, _) = scores(w, kind);
    let total: f64 = s.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::DegenerateCoefficients);
    }
    Ok(s.iter().map(|v| v / total).collect())
}

/// Pulls a gradient on the PMF back to the coefficients.
///
/// With `alpha_i = s(w_i) / sum_j s(w_j)`:
/// `dL/dw_k = s'(w_k) / sum_j s(w_j) * (g_k - sum_i alpha_i g_i)`.
pub fn pmf_backward(w: &[f64], grad_alpha: &[f64], kind: PmfKind) -> Result<Vec<f64>> {
    if grad_alpha.len() != w.len() {
        return Err(Error::invalid(
            "gradient length differs from coefficient count",
        ));
    }
    let (s, ds) = scores(w, kind);
    let total: f64 = s.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::DegenerateCoefficients);
    }
    let mean: f64 = s.iter().zip(grad_alpha).map(|(si, g)| si / total * g).sum();
    Ok(ds
        .iter()
        .zip(grad_alpha)
        .map(|(d, g)| d / total * (g - mean))
        .collect())
}
