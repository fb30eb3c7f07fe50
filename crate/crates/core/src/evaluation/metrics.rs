//! Absolute-error metrics at the markers.

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    U,
    V,
    /// Sum of both absolute deviations.
    Disp,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::U, Component::V, Component::Disp];

    pub fn label(self) -> &'static str {
        match self {
            Component::U => "u",
            Component::V => "v",
            Component::Disp => "disp",
        }
    }
}

/// `|u_hat - u| + |v_hat - v|`, mm.
pub fn absolute_error(estimate: [f64; 2], measured: [f64; 2]) -> f64 {
    (estimate[0] - measured[0]).abs() + (estimate[1] - measured[1]).abs()
}

/// `Disp` is `MAE(u) + MAE(v)`, equal to the mean per-marker AE up to rounding.
pub fn mean_absolute_error(
    estimates: &[[f64; 2]],
    measured: &[[f64; 2]],
    component: Component,
) -> Result<f64, EvalError> {
    if estimates.len() != measured.len() {
        return Err(EvalError::Metrics(format!("{} estimates for {} measurements", estimates.len(), measured.len())));
    }
    if estimates.is_empty() {
        return Err(EvalError::Metrics("no markers to average over".into()));
    }
    if component == Component::Disp {
        return Ok(mean_absolute_error(estimates, measured, Component::U)?
            + mean_absolute_error(estimates, measured, Component::V)?);
    }
    let axis = if component == Component::U { 0 } else { 1 };
    let sum: f64 = estimates.iter().zip(measured).map(|(e, m)| (e[axis] - m[axis]).abs()).sum();
    Ok(sum / estimates.len() as f64)
}

/// Per-method metrics written to `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub mae_u: f64,
    pub mae_v: f64,
    pub mae_disp: f64,
    pub per_marker_ae: Vec<f64>,
}

impl MetricsReport {
    pub fn compute(method: &str, estimates: &[[f64; 2]], measured: &[[f64; 2]]) -> Result<Self, EvalError> {
        Ok(Self {
            method: method.to_string(),
            mae_u: mean_absolute_error(estimates, measured, Component::U)?,
            mae_v: mean_absolute_error(estimates, measured, Component::V)?,
            mae_disp: mean_absolute_error(estimates, measured, Component::Disp)?,
            per_marker_ae: estimates.iter().zip(measured).map(|(e, m)| absolute_error(*e, *m)).collect(),
        })
    }

    pub fn mae(&self, c: Component) -> f64 {
        match c {
            Component::U => self.mae_u,
            Component::V => self.mae_v,
            Component::Disp => self.mae_disp,
        }
    }
}

/// Rows `u`, `v`, `disp`; one column per method.
pub fn comparison_table(reports: &[MetricsReport]) -> String {
    let width = reports.iter().map(|r| r.method.len()).max().unwrap_or(0).max(10);
    let mut out = format!("{:<6}", "MAE");
    for r in reports {
        out.push_str(&format!(" {:>width$}", r.method));
    }
    out.push('\n');
    for c in Component::ALL {
        out.push_str(&format!("{:<6}", c.label()));
        for r in reports {
            out.push_str(&format!(" {:>width$.3}", r.mae(c)));
        }
        out.push('\n');
    }
    out
}
