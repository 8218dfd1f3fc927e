//! Goodness-of-fit metric: the coefficient of determination.

/// R² evaluation: `ss_tot = Σ(yᵢ − ȳ)²`, `ss_res = Σ(yᵢ − f(x)ᵢ)²`,
/// `r_squared = 1 − ss_res/ss_tot`. When the targets are constant
/// (`ss_tot = 0`) the result is defined as 0 with `degenerate` set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvaluationReport {
    pub ss_tot: f64,
    pub ss_res: f64,
    pub r_squared: f64,
    pub n_test: usize,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricsError {
    LengthMismatch { truth: usize, predictions: usize },
    TooFewSamples(usize),
}

impl core::fmt::Display for MetricsError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            MetricsError::LengthMismatch { truth, predictions } => write!(
                f,
                "y_true has {truth} entries but y_pred has {predictions}"
            ),
            MetricsError::TooFewSamples(n) => write!(f, "need at least 2 samples, got {n}"),
        }
    }
}

/// Compute R² of `y_pred` against `y_true`. R² is at most 1 and may be
/// negative for a predictor worse than the mean.
pub fn evaluate_r_squared(
    y_true: &[f64],
    y_pred: &[f64],
) -> Result<EvaluationReport, MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::LengthMismatch {
            truth: y_true.len(),
            predictions: y_pred.len(),
        });
    }
    if y_true.len() < 2 {
        return Err(MetricsError::TooFewSamples(y_true.len()));
    }
    let n = y_true.len();
    let mean: f64 = y_true.iter().sum::<f64>() / n as f64;
    let mut ss_tot = 0.0;
    let mut ss_res = 0.0;
    for (&y, &f) in y_true.iter().zip(y_pred) {
        ss_tot += (y - mean) * (y - mean);
        ss_res += (y - f) * (y - f);
    }
    if ss_tot == 0.0 {
        return Ok(EvaluationReport {
            ss_tot,
            ss_res,
            r_squared: 0.0,
            n_test: n,
            degenerate: true,
        });
    }
    Ok(EvaluationReport {
        ss_tot,
        ss_res,
        r_squared: 1.0 - ss_res / ss_tot,
        n_test: n,
        degenerate: false,
    })
}
