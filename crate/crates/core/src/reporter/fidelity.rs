//! How closely one metric trajectory (e.g. on a corpus subset) tracks another
//! (e.g. on the full corpus) across checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::evaluator::MetricSpec;

use super::{read_records, ReportError};

#[derive(Debug, Error)]
pub enum FidelityError {
    #[error("need at least 2 shared steps, found {0}")]
    TooFewSharedSteps(usize),
    #[error("metric {0} needs an explicit cutoff to compare")]
    NoCutoff(String),
    #[error(transparent)]
    Report(#[from] ReportError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FidelityReport {
    pub kendall_tau: f64,
    pub max_abs_diff: f64,
    /// Mean of `b - a` over shared steps.
    pub mean_signed_diff: f64,
    pub argmax_agreement: bool,
    pub shared_steps: usize,
}

/// Kendall's tau-a: (concordant - discordant) / (n choose 2). Tied pairs count
/// as neither.
pub fn kendall_tau_a(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mut net = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let dx = xs[i] - xs[j];
            let dy = ys[i] - ys[j];
            let prod = dx * dy;
            if prod > 0.0 {
                net += 1;
            } else if prod < 0.0 {
                net -= 1;
            }
        }
    }
    net as f64 / (n * (n - 1) / 2) as f64
}

/// Step of the best value; ties go to the later step.
fn argmax(steps: &[u64], values: &[f64]) -> u64 {
    let mut best = 0;
    for i in 1..values.len() {
        if values[i] >= values[best] {
            best = i;
        }
    }
    steps[best]
}

pub fn compare_series(
    series_a: &BTreeMap<u64, f64>,
    series_b: &BTreeMap<u64, f64>,
) -> Result<FidelityReport, FidelityError> {
    let mut steps = Vec::new();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (step, va) in series_a {
        if let Some(vb) = series_b.get(step) {
            steps.push(*step);
            a.push(*va);
            b.push(*vb);
        }
    }
    if steps.len() < 2 {
        return Err(FidelityError::TooFewSharedSteps(steps.len()));
    }
    let n = steps.len() as f64;
    let max_abs_diff = a.iter().zip(&b).map(|(x, y)| (y - x).abs()).fold(0.0, f64::max);
    let mean_signed_diff = a.iter().zip(&b).map(|(x, y)| y - x).sum::<f64>() / n;
    Ok(FidelityReport {
        kendall_tau: kendall_tau_a(&a, &b),
        max_abs_diff,
        mean_signed_diff,
        argmax_agreement: argmax(&steps, &a) == argmax(&steps, &b),
        shared_steps: steps.len(),
    })
}

/// Step -> value for `metric` from the successful records of a JSONL report.
/// Records without a step are skipped; a repeated step keeps the last value.
pub fn load_series(path: &Path, metric: &MetricSpec) -> Result<BTreeMap<u64, f64>, FidelityError> {
    if metric.cutoff.is_none() {
        return Err(FidelityError::NoCutoff(metric.to_string()));
    }
    let key = metric.to_string();
    let mut series = BTreeMap::new();
    for record in read_records(path)? {
        if record.status != "ok" {
            continue;
        }
        let (Some(step), Some(value)) = (record.step, record.metrics.get(&key)) else {
            continue;
        };
        series.insert(step, *value);
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(vals: &[(u64, f64)]) -> BTreeMap<u64, f64> {
        vals.iter().copied().collect()
    }

    /// Independent pair count: fraction of concordant pairs mapped to [-1, 1].
    fn tau_by_pairs(xs: &[f64], ys: &[f64]) -> f64 {
        let mut concordant = 0;
        let mut discordant = 0;
        let mut pairs = 0;
        for i in 0..xs.len() {
            for j in 0..xs.len() {
                if i < j {
                    pairs += 1;
                    let ox = xs[j].partial_cmp(&xs[i]).unwrap();
                    let oy = ys[j].partial_cmp(&ys[i]).unwrap();
                    if ox.is_eq() || oy.is_eq() {
                        continue;
                    }
                    if ox == oy {
                        concordant += 1;
                    } else {
                        discordant += 1;
                    }
                }
            }
        }
        (concordant - discordant) as f64 / pairs as f64
    }

    #[test]
    fn identical_series() {
        let a = series(&[(1, 0.1), (2, 0.3), (3, 0.2)]);
        let r = compare_series(&a, &a).unwrap();
        assert_eq!(r.kendall_tau, 1.0);
        assert_eq!(r.max_abs_diff, 0.0);
        assert!(r.argmax_agreement);
    }

    #[test]
    fn uniform_overestimate() {
        let a = series(&[(1, 0.10), (2, 0.20), (3, 0.25), (4, 0.30)]);
        let b: BTreeMap<u64, f64> = a.iter().map(|(k, v)| (*k, v + 0.02)).collect();
        let r = compare_series(&a, &b).unwrap();
        assert_eq!(r.kendall_tau, 1.0);
        assert!((r.mean_signed_diff - 0.02).abs() < 1e-12);
        assert!(r.argmax_agreement);
        let back = compare_series(&b, &a).unwrap();
        assert!((back.mean_signed_diff + 0.02).abs() < 1e-12);
    }

    #[test]
    fn one_inversion_in_four() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [1.0, 3.0, 2.0, 4.0];
        let expected = tau_by_pairs(&xs, &ys);
        // 6 pairs: 5 concordant, 1 discordant.
        assert!((expected - 4.0 / 6.0).abs() < 1e-12);
        let a = series(&[(1, 1.0), (2, 2.0), (3, 3.0), (4, 4.0)]);
        let b = series(&[(1, 1.0), (2, 3.0), (3, 2.0), (4, 4.0)]);
        let r = compare_series(&a, &b).unwrap();
        assert!((r.kendall_tau - expected).abs() < 1e-12);
    }

    #[test]
    fn only_shared_steps_count() {
        let a = series(&[(1, 0.1), (2, 0.2), (5, 0.9)]);
        let b = series(&[(1, 0.2), (2, 0.1), (7, 0.0)]);
        let r = compare_series(&a, &b).unwrap();
        assert_eq!(r.shared_steps, 2);
        assert_eq!(r.kendall_tau, -1.0);
        assert!(!r.argmax_agreement);
        let c = series(&[(1, 0.3)]);
        assert!(matches!(
            compare_series(&a, &c),
            Err(FidelityError::TooFewSharedSteps(1))
        ));
    }

    #[test]
    fn argmax_ties_prefer_later_step() {
        let a = series(&[(1, 0.5), (2, 0.5)]);
        let b = series(&[(1, 0.1), (2, 0.9)]);
        assert!(compare_series(&a, &b).unwrap().argmax_agreement);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn two_series() -> impl Strategy<Value = (BTreeMap<u64, f64>, BTreeMap<u64, f64>)> {
            proptest::collection::btree_map(0u64..50, (0.0f64..1.0, 0.0f64..1.0), 2..20).prop_map(
                |m| {
                    let a = m.iter().map(|(k, (x, _))| (*k, *x)).collect();
                    let b = m.iter().map(|(k, (_, y))| (*k, *y)).collect();
                    (a, b)
                },
            )
        }

        proptest! {
            #[test]
            fn mean_signed_diff_is_antisymmetric((a, b) in two_series()) {
                let ab = compare_series(&a, &b).unwrap();
                let ba = compare_series(&b, &a).unwrap();
                prop_assert!((ab.mean_signed_diff + ba.mean_signed_diff).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&ab.kendall_tau));
                let xs: Vec<f64> = a.values().copied().collect();
                let ys: Vec<f64> = b.values().copied().collect();
                prop_assert!((ab.kendall_tau - tau_by_pairs(&xs, &ys)).abs() < 1e-12);
                prop_assert!((ab.kendall_tau - ba.kendall_tau).abs() < 1e-12);
            }

            #[test]
            fn argmax_agreement_survives_increasing_transforms((a, b) in two_series()) {
                let base = compare_series(&a, &b).unwrap().argmax_agreement;
                let ta: BTreeMap<u64, f64> = a.iter().map(|(k, v)| (*k, v.exp() * 3.0 + 1.0)).collect();
                let tb: BTreeMap<u64, f64> = b.iter().map(|(k, v)| (*k, v * v * v + 5.0)).collect();
                prop_assert_eq!(compare_series(&ta, &tb).unwrap().argmax_agreement, base);
            }
        }
    }
}
