//! Cost model of the dispatchable feeder and forecast-quality metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{CostParams, DT_HOURS};

#[derive(Debug, Error, PartialEq)]
pub enum ValuationError {
    #[error("grid power split has the wrong sign: p_g_plus={plus}, p_g_minus={minus}")]
    SignViolation { plus: f64, minus: f64 },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("cannot average an empty set of {0}")]
    Empty(&'static str),
}

/// Schedule cost of one step for the positive (import) and negative (export) grid power.
pub fn ds_cost(p_g_plus: f64, p_g_minus: f64, cost: &CostParams) -> Result<f64, ValuationError> {
    if p_g_plus < 0.0 || p_g_minus > 0.0 {
        return Err(ValuationError::SignViolation {
            plus: p_g_plus,
            minus: p_g_minus,
        });
    }
    let plus = p_g_plus * DT_HOURS;
    let minus = p_g_minus * DT_HOURS;
    Ok(cost.cq_plus * plus * plus
        + cost.cl_plus * plus
        + cost.cq_minus * minus * minus
        + cost.cl_minus * minus)
}

/// Schedule cost of a net grid power, split by sign.
pub fn ds_cost_net(p_g: f64, cost: &CostParams) -> f64 {
    ds_cost(p_g.max(0.0), p_g.min(0.0), cost).expect("sign split is valid by construction")
}

/// Imbalance cost of one step's deviation from the schedule. Even in `delta_p_g`.
pub fn imbalance_cost(delta_p_g: f64, cost: &CostParams) -> f64 {
    let d = (delta_p_g * DT_HOURS).abs();
    cost.cq_delta * d * d + cost.cl_delta * d
}

/// Per-step cost components before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepCost {
    pub ds: f64,
    pub imb: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub c_ds: f64,
    pub c_imb: f64,
    pub c_total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_step: Option<Vec<StepCost>>,
}

/// Sums step costs into a daily breakdown with `c_total = c_ds + alpha * c_imb`.
pub fn total_cost(steps: &[StepCost], alpha: f64) -> CostBreakdown {
    let c_ds: f64 = steps.iter().map(|s| s.ds).sum();
    let c_imb: f64 = steps.iter().map(|s| s.imb).sum();
    CostBreakdown {
        c_ds,
        c_imb,
        c_total: c_ds + alpha * c_imb,
        per_step: Some(steps.to_vec()),
    }
}

/// Mean of daily total costs over all (day, building) pairs.
pub fn average_daily_total_costs(daily_totals: &[f64]) -> Result<f64, ValuationError> {
    if daily_totals.is_empty() {
        return Err(ValuationError::Empty("daily outcomes"));
    }
    Ok(daily_totals.iter().sum::<f64>() / daily_totals.len() as f64)
}

fn check_pair(y: &[f64], y_hat: &[f64]) -> Result<(), ValuationError> {
    if y.len() != y_hat.len() {
        return Err(ValuationError::LengthMismatch {
            left: y.len(),
            right: y_hat.len(),
        });
    }
    if y.is_empty() {
        return Err(ValuationError::Empty("forecast values"));
    }
    Ok(())
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64, ValuationError> {
    check_pair(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64, ValuationError> {
    check_pair(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

/// Mean and sample standard deviation; the deviation is `None` for fewer than two values.
pub fn mean_std(values: &[f64]) -> Option<(f64, Option<f64>)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1.0)).sqrt()
    });
    Some((mean, std))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table() -> CostParams {
        CostParams::default()
    }

    #[test]
    fn ds_cost_examples() {
        assert_eq!(ds_cost(0.0, 0.0, &table()).unwrap(), 0.0);
        assert!((ds_cost(2.0, 0.0, &table()).unwrap() - 0.8).abs() < 1e-12);
        assert!((ds_cost(0.0, -2.0, &table()).unwrap() + 0.1).abs() < 1e-12);
        assert!(matches!(
            ds_cost(-1.0, 0.0, &table()),
            Err(ValuationError::SignViolation { .. })
        ));
        assert!(ds_cost(0.0, 0.5, &table()).is_err());
    }

    #[test]
    fn imbalance_examples() {
        assert_eq!(imbalance_cost(0.0, &table()), 0.0);
        assert!((imbalance_cost(2.0, &table()) - 0.8).abs() < 1e-12);
        assert!((imbalance_cost(-2.0, &table()) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn total_cost_examples() {
        let steps = [StepCost { ds: 1.0, imb: 0.5 }];
        assert_eq!(total_cost(&steps, 10.0).c_total, 6.0);
        let steps = [StepCost { ds: 1.0, imb: 0.0 }];
        assert_eq!(total_cost(&steps, 10.0).c_total, 1.0);
        let steps = [StepCost { ds: 1.0, imb: 3.0 }];
        assert_eq!(total_cost(&steps, 0.0).c_total, 1.0);
    }

    #[test]
    fn averages() {
        assert_eq!(average_daily_total_costs(&[6.0]).unwrap(), 6.0);
        assert_eq!(average_daily_total_costs(&[4.0, 8.0]).unwrap(), 6.0);
        assert!(average_daily_total_costs(&[]).is_err());
    }

    #[test]
    fn metric_examples() {
        let y = [1.0, 2.0];
        assert_eq!(mae(&y, &y).unwrap(), 0.0);
        assert_eq!(mse(&y, &y).unwrap(), 0.0);
        assert_eq!(mae(&y, &[2.0, 4.0]).unwrap(), 1.5);
        assert_eq!(mse(&y, &[2.0, 4.0]).unwrap(), 2.5);
        assert!(matches!(
            mae(&y, &[1.0]),
            Err(ValuationError::LengthMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn imbalance_is_even(d in -20.0f64..20.0) {
            prop_assert_eq!(imbalance_cost(d, &table()), imbalance_cost(-d, &table()));
        }

        #[test]
        fn total_at_least_ds(ds in -5.0f64..5.0, dev in -5.0f64..5.0, alpha in 0.0f64..50.0) {
            let step = StepCost { ds, imb: imbalance_cost(dev, &table()) };
            let b = total_cost(&[step], alpha);
            prop_assert!(b.c_imb >= 0.0);
            prop_assert!(b.c_total >= b.c_ds);
            prop_assert!((b.c_total - (b.c_ds + alpha * b.c_imb)).abs() <= 1e-12 * (1.0 + b.c_total.abs()));
        }

        #[test]
        fn ds_cost_is_convex(
            a in 0.0f64..10.0, b in -10.0f64..0.0,
            c in 0.0f64..10.0, d in -10.0f64..0.0,
        ) {
            let mid = ds_cost((a + c) / 2.0, (b + d) / 2.0, &table()).unwrap();
            let avg = (ds_cost(a, b, &table()).unwrap() + ds_cost(c, d, &table()).unwrap()) / 2.0;
            prop_assert!(mid <= avg + 1e-12);
        }

        #[test]
        fn constant_offset_metrics(c in -5.0f64..5.0, base in proptest::collection::vec(-5.0f64..5.0, 1..50)) {
            let shifted: Vec<f64> = base.iter().map(|v| v + c).collect();
            let mae_v = mae(&base, &shifted).unwrap();
            let mse_v = mse(&base, &shifted).unwrap();
            prop_assert!((mae_v - c.abs()).abs() < 1e-9);
            prop_assert!((mse_v - c * c).abs() < 1e-9);
            prop_assert!(mse_v >= mae_v * mae_v - 1e-9);
        }
    }
}
