//! Evaluation statistics and percentile bootstrap intervals.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub value: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n_resamples: usize,
    pub seed: u64,
}

impl MetricResult {
    pub fn point(value: f64) -> Self {
        Self {
            value,
            ci_low: None,
            ci_high: None,
            n_resamples: 0,
            seed: 0,
        }
    }
}

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|l| **l).count();
    (pos, labels.len() - pos)
}

/// Area under the ROC curve in the Mann-Whitney form: the probability that a
/// random positive outranks a random negative, ties counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_dim("auroc scores vs labels", labels.len(), scores.len())?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("auroc scores"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average ranks over tie groups (1-based).
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean of the per-class recalls.
pub fn balanced_accuracy(pred: &[bool], labels: &[bool]) -> Result<f64> {
    check_dim("balanced accuracy predictions vs labels", labels.len(), pred.len())?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let tp = pred.iter().zip(labels).filter(|(p, l)| **p && **l).count();
    let tn = pred.iter().zip(labels).filter(|(p, l)| !**p && !**l).count();
    Ok(0.5 * (tp as f64 / pos as f64 + tn as f64 / neg as f64))
}

pub fn accuracy(pred: &[bool], labels: &[bool]) -> Result<f64> {
    check_dim("accuracy predictions vs labels", labels.len(), pred.len())?;
    if labels.is_empty() {
        return Err(Error::Empty("accuracy labels"));
    }
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Coefficient of determination `1 - SS_res / SS_tot`; negative when the
/// prediction is worse than the mean.
pub fn r2(pred: &[f64], y: &[f64]) -> Result<f64> {
    check_dim("r2 predictions vs targets", y.len(), pred.len())?;
    if y.len() < 2 {
        return Err(Error::Degenerate("r2 needs at least two targets".into()));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot <= 0.0 {
        return Err(Error::ZeroVariance("r2 target"));
    }
    let ss_res: f64 = pred.iter().zip(y).map(|(p, v)| (v - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim("pearson inputs", x.len(), y.len())?;
    if x.len() < 3 {
        return Err(Error::Degenerate("pearson needs at least three points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    let scale = |v: f64, m: f64| v <= 1e-28 * n * m.abs().max(1.0).powi(2);
    if scale(sxx, mx) {
        return Err(Error::ZeroVariance("pearson x"));
    }
    if scale(syy, my) {
        return Err(Error::ZeroVariance("pearson y"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Linear-interpolated quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap over `n_units` resampling units.
///
/// `statistic` receives the (possibly repeated) unit indices of one resample
/// and may return `None` when the statistic is undefined on that resample
/// (for example a single-class AUROC); such resamples are skipped. The point
/// value is the statistic on the identity sample, and the interval is widened
/// to contain it.
pub fn bootstrap_ci<F>(n_units: usize, statistic: F, n_resamples: usize, seed: u64, level: f64) -> Result<MetricResult>
where
    F: Fn(&[usize]) -> Option<f64>,
{
    if n_units == 0 {
        return Err(Error::Empty("bootstrap data"));
    }
    if n_resamples < 100 {
        return Err(Error::InvalidArgument(format!(
            "bootstrap needs at least 100 resamples, got {n_resamples}"
        )));
    }
    if !(0.0..1.0).contains(&level) || level <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "confidence level {level} not in (0, 1)"
        )));
    }
    let identity: Vec<usize> = (0..n_units).collect();
    let value =
        statistic(&identity).ok_or_else(|| Error::Degenerate("statistic undefined on the full sample".into()))?;
    let mut rng = rng::stream(seed, 0xb007);
    let mut draws = Vec::with_capacity(n_resamples);
    let mut idx = vec![0usize; n_units];
    for _ in 0..n_resamples {
        for slot in idx.iter_mut() {
            *slot = rng.random_range(0..n_units);
        }
        if let Some(v) = statistic(&idx) {
            if v.is_finite() {
                draws.push(v);
            }
        }
    }
    if draws.is_empty() {
        return Err(Error::Degenerate("statistic undefined on every resample".into()));
    }
    draws.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let lo = quantile_sorted(&draws, alpha).min(value);
    let hi = quantile_sorted(&draws, 1.0 - alpha).max(value);
    Ok(MetricResult {
        value,
        ci_low: Some(lo),
        ci_high: Some(hi),
        n_resamples,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force pair enumeration.
    fn auroc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, li) in labels.iter().enumerate() {
            for (j, lj) in labels.iter().enumerate() {
                if *li && !*lj {
                    den += 1.0;
                    num += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn auroc_examples() {
        let labels = [false, false, true, true];
        assert_eq!(auroc(&[0.0, 0.0, 1.0, 1.0], &labels).unwrap(), 1.0);
        assert_eq!(auroc(&[3.0; 4], &labels).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &labels).unwrap(), 0.75);
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(Error::SingleClass)));
    }

    #[test]
    fn balanced_accuracy_examples() {
        let labels = [true, true, false, false];
        assert_eq!(balanced_accuracy(&labels, &labels).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&[true; 4], &labels).unwrap(), 0.5);
        assert_eq!(balanced_accuracy(&[true, false, false, false], &labels).unwrap(), 0.75);
        assert!(balanced_accuracy(&[true], &[false]).is_err());
    }

    #[test]
    fn r2_examples() {
        let y = [1.0, 2.0, 4.0, 7.0];
        assert_eq!(r2(&y, &y).unwrap(), 1.0);
        let m = mean(&y);
        assert!(r2(&[m; 4], &y).unwrap().abs() < 1e-15);
        let anti: Vec<f64> = y.iter().map(|v| 2.0 * m - v).collect();
        assert!(r2(&anti, &y).unwrap() < 0.0);
        assert!(matches!(r2(&[1.0, 1.0], &[2.0, 2.0]), Err(Error::ZeroVariance(_))));
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(pearson(&x, &[1.0; 4]), Err(Error::ZeroVariance(_))));
    }

    #[test]
    fn bootstrap_constant_data_is_degenerate() {
        let data = [2.5; 50];
        let r = bootstrap_ci(
            50,
            |idx| Some(idx.iter().map(|&i| data[i]).sum::<f64>() / idx.len() as f64),
            500,
            1,
            0.95,
        )
        .unwrap();
        assert_eq!((r.ci_low.unwrap(), r.value, r.ci_high.unwrap()), (2.5, 2.5, 2.5));
    }

    #[test]
    fn bootstrap_mean_width_matches_normal_theory() {
        let mut g = rng::stream(11, 0);
        let data: Vec<f64> = (0..1000).map(|_| rng::normal(&mut g)).collect();
        let stat = |idx: &[usize]| Some(idx.iter().map(|&i| data[i]).sum::<f64>() / idx.len() as f64);
        let r = bootstrap_ci(1000, stat, 2000, 5, 0.95).unwrap();
        let width = r.ci_high.unwrap() - r.ci_low.unwrap();
        let s = sample_std(&data);
        let analytic = 2.0 * 1.959964 * s / (1000f64).sqrt();
        assert!((width / analytic - 1.0).abs() < 0.2, "width {width} vs {analytic}");
        let again = bootstrap_ci(1000, stat, 2000, 5, 0.95).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn bootstrap_rejects_empty() {
        assert!(bootstrap_ci(0, |_| Some(0.0), 100, 0, 0.95).is_err());
    }

    proptest! {
        #[test]
        fn auroc_matches_pair_enumeration(
            data in proptest::collection::vec((0i32..6, any::<bool>()), 2..40)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64).collect();
            let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|l| *l) && labels.iter().any(|l| !*l));
            let a = auroc(&scores, &labels).unwrap();
            prop_assert!((a - auroc_pairs(&scores, &labels)).abs() < 1e-12);
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            prop_assert!((auroc(&neg, &labels).unwrap() - (1.0 - a)).abs() < 1e-12);
        }

        #[test]
        fn auroc_monotone_invariance(
            data in proptest::collection::vec((-3.0f64..3.0, any::<bool>()), 2..40),
            scale in 0.1f64..10.0, shift in -5.0f64..5.0
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s).collect();
            let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|l| *l) && labels.iter().any(|l| !*l));
            let a = auroc(&scores, &labels).unwrap();
            let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
            let aff: Vec<f64> = scores.iter().map(|s| scale * s + shift).collect();
            prop_assert!((auroc(&exp, &labels).unwrap() - a).abs() < 1e-12);
            prop_assert!((auroc(&aff, &labels).unwrap() - a).abs() < 1e-12);
        }

        #[test]
        fn bootstrap_contains_point(data in proptest::collection::vec(-10.0f64..10.0, 3..30), seed in 0u64..1000) {
            let stat = |idx: &[usize]| Some(idx.iter().map(|&i| data[i]).sum::<f64>() / idx.len() as f64);
            let r = bootstrap_ci(data.len(), stat, 200, seed, 0.95).unwrap();
            prop_assert!(r.ci_low.unwrap() <= r.value && r.value <= r.ci_high.unwrap());
        }
    }
}
