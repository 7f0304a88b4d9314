//! Least polynomial degree whose held-out AUROC clears a threshold.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::polynomial::fit_polynomial;
use super::{FitConfig, Target};
use crate::error::{check_dim, Error, Result};
use crate::estimators::LogisticConfig;
use crate::{linalg, metrics, rng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            seed: 0,
        }
    }
}

/// Stratified train/test split; both parts keep both classes when possible.
pub fn stratified_split(labels: &[bool], cfg: &SplitConfig) -> (Vec<usize>, Vec<usize>) {
    let mut g = rng::stream(cfg.seed, 0x5917);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [false, true] {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let perm = rng::permutation(&mut g, idx.len());
        let cut = ((idx.len() as f64) * cfg.train_fraction).round() as usize;
        let cut = if idx.len() >= 2 {
            cut.clamp(1, idx.len() - 1)
        } else {
            cut
        };
        for (k, &p) in perm.iter().enumerate() {
            if k < cut {
                train.push(idx[p]);
            } else {
                test.push(idx[p]);
            }
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeRecovery {
    /// Least qualifying degree, if any.
    pub min_degree: Option<usize>,
    /// Held-out AUROC per degree `0..=max_degree`.
    pub aurocs: Vec<f64>,
}

/// Fits logistic heads of degree `d = 0..=max_degree` on the score space and
/// returns the least `d` whose held-out AUROC is at least `threshold`. The
/// degree-0 head is the constant classifier with AUROC 0.5.
pub fn recover_min_degree(
    scores: &DMatrix<f64>,
    y: &[bool],
    max_degree: usize,
    threshold: f64,
    split: &SplitConfig,
    cfg: &LogisticConfig,
) -> Result<DegreeRecovery> {
    check_dim("degree recovery labels vs rows", scores.nrows(), y.len())?;
    if !y.iter().any(|v| *v) || y.iter().all(|v| *v) {
        return Err(Error::SingleClass);
    }
    let (train, test) = stratified_split(y, split);
    let xtr = linalg::select_rows(scores, &train);
    let xte = linalg::select_rows(scores, &test);
    let ytr = linalg::select(y, &train);
    let yte = linalg::select(y, &test);
    let mut aurocs = vec![0.5];
    for d in 1..=max_degree {
        let probe = fit_polynomial(&xtr, Target::Classification(&ytr), d, &FitConfig::Logistic(*cfg))?;
        let s = probe.score(&xte)?;
        aurocs.push(metrics::auroc(s.as_slice(), &yte)?);
    }
    let min_degree = aurocs.iter().position(|a| *a >= threshold);
    Ok(DegreeRecovery { min_degree, aurocs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholded_score_is_degree_one() {
        let x = rng::normal_matrix(&mut rng::stream(1, 0), 400, 3);
        let y: Vec<bool> = (0..400).map(|i| x[(i, 1)] > 0.2).collect();
        let r = recover_min_degree(&x, &y, 3, 0.99, &SplitConfig::default(), &LogisticConfig::default()).unwrap();
        assert_eq!(r.min_degree, Some(1));
        assert_eq!(r.aurocs.len(), 4);
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let labels: Vec<bool> = (0..50).map(|i| i % 5 == 0).collect();
        let (tr, te) = stratified_split(&labels, &SplitConfig::default());
        assert_eq!(tr.len() + te.len(), 50);
        assert!(tr.iter().all(|i| !te.contains(i)));
        assert!(te.iter().any(|&i| labels[i]) && tr.iter().any(|&i| labels[i]));
    }

    #[test]
    fn single_class_rejected() {
        let x = DMatrix::zeros(4, 1);
        assert!(recover_min_degree(
            &x,
            &[true; 4],
            2,
            0.99,
            &SplitConfig::default(),
            &LogisticConfig::default()
        )
        .is_err());
    }
}
