//! Threshold alert rules over windowed score aggregates. Evaluation here
//! is pure: the caller supplies the window's values, the clock reading and
//! the rule's last-fired time, and gets back the fire decision.

use alloc::string::String;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlertAggregator {
    Avg,
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparator {
    Lt,
    Gt,
    Le,
    Ge,
}

impl Comparator {
    pub fn holds(self, observed: f64, threshold: f64) -> bool {
        match self {
            Comparator::Lt => observed < threshold,
            Comparator::Gt => observed > threshold,
            Comparator::Le => observed <= threshold,
            Comparator::Ge => observed >= threshold,
        }
    }
}

/// A threshold rule over a rolling window of one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct AlertRule {
    pub name: String,
    pub metric: String,
    pub window_ms: i64,
    pub aggregator: AlertAggregator,
    pub comparator: Comparator,
    pub threshold: f64,
    pub cooldown_ms: i64,
    pub min_points: usize,
}

impl AlertRule {
    /// Validate the structural invariants (window positive, cooldown and
    /// min_points non-degenerate).
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.window_ms <= 0 {
            return Err("window_ms must be > 0");
        }
        if self.cooldown_ms < 0 {
            return Err("cooldown_ms must be >= 0");
        }
        if self.min_points == 0 {
            return Err("min_points must be >= 1");
        }
        Ok(())
    }

    /// Decide whether the rule fires at `now_ms` given the values observed
    /// in `[now − window_ms, now)`. Returns the observed aggregate when it
    /// fires. Never fires on fewer than `min_points` values or inside the
    /// cooldown interval after `last_fired_ms`.
    pub fn evaluate(
        &self,
        window_values: &[f64],
        now_ms: i64,
        last_fired_ms: Option<i64>,
    ) -> Option<f64> {
        if window_values.len() < self.min_points {
            return None;
        }
        if let Some(t) = last_fired_ms {
            if now_ms - t < self.cooldown_ms {
                return None;
            }
        }
        let observed = match self.aggregator {
            AlertAggregator::Avg => {
                window_values.iter().sum::<f64>() / window_values.len() as f64
            }
            AlertAggregator::Min => window_values.iter().copied().fold(f64::INFINITY, f64::min),
            AlertAggregator::Max => window_values
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max),
        };
        self.comparator.holds(observed, self.threshold).then_some(observed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn rule() -> AlertRule {
        AlertRule {
            name: "low-sentiment".to_string(),
            metric: "score".to_string(),
            window_ms: 60_000,
            aggregator: AlertAggregator::Avg,
            comparator: Comparator::Lt,
            threshold: 3.0,
            cooldown_ms: 60_000,
            min_points: 1,
        }
    }

    #[test]
    fn fires_on_breach_with_observed_mean() {
        let observed = rule().evaluate(&[2.1, 2.5], 1_000_000, None);
        assert_eq!(observed, Some(2.3));
    }

    #[test]
    fn no_event_when_comparator_fails() {
        assert_eq!(rule().evaluate(&[4.0, 4.5], 1_000_000, None), None);
    }

    #[test]
    fn cooldown_suppresses_second_event() {
        let r = rule();
        let t0 = 1_000_000;
        assert!(r.evaluate(&[2.0], t0, None).is_some());
        assert!(r.evaluate(&[2.0], t0 + 1_000, Some(t0)).is_none());
        assert!(r.evaluate(&[2.0], t0 + 60_000, Some(t0)).is_some());
    }

    #[test]
    fn min_points_gate() {
        let mut r = rule();
        r.min_points = 3;
        assert_eq!(r.evaluate(&[1.0, 1.0], 5_000, None), None);
        assert!(r.evaluate(&[1.0, 1.0, 1.0], 5_000, None).is_some());
    }

    #[test]
    fn min_max_aggregators_and_comparators() {
        let mut r = rule();
        r.aggregator = AlertAggregator::Max;
        r.comparator = Comparator::Ge;
        r.threshold = 4.5;
        assert_eq!(r.evaluate(&[1.0, 4.5], 0, None), Some(4.5));
        r.aggregator = AlertAggregator::Min;
        r.comparator = Comparator::Le;
        r.threshold = 0.5;
        assert_eq!(r.evaluate(&[1.0, 4.5], 0, None), None);
    }

    #[test]
    fn validation_catches_bad_fields() {
        let mut r = rule();
        r.window_ms = 0;
        assert!(r.validate().is_err());
        let mut r = rule();
        r.min_points = 0;
        assert!(r.validate().is_err());
        assert!(rule().validate().is_ok());
    }
}
