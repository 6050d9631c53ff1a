//! Prediction confidence and expected calibration error.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_BINS: usize = 15;

/// Hard labels (0-based argmax, lowest index on ties) and max-probability
/// confidences of every row.
pub fn confidence<T: Scalar>(prob_rows: ArrayView2<T>) -> (Vec<usize>, Vec<T>) {
    prob_rows
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            let mut best_p = row[0];
            for (j, &p) in row.iter().enumerate().skip(1) {
                if p > best_p {
                    best = j;
                    best_p = p;
                }
            }
            (best, best_p)
        })
        .unzip()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean correctness; 0 for an empty bin.
    pub acc: f64,
    /// Mean confidence; 0 for an empty bin.
    pub conf: f64,
}

/// Reliability-diagram bins and the ECE over them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub bins: Vec<CalibrationBin>,
    pub ece: f64,
    pub n: usize,
}

/// Bin of a confidence among `M` equal-width bins `((m-1)/M, m/M]`; zero
/// goes to the first bin.
pub fn bin_index(c: f64, num_bins: usize) -> usize {
    let m = (c * num_bins as f64).ceil();
    if m <= 1.0 {
        0
    } else {
        (m as usize - 1).min(num_bins - 1)
    }
}

impl CalibrationReport {
    pub fn num_bins(&self) -> usize {
        self.bins.len()
    }

    /// ECE from the stored bins alone.
    pub fn recompute_ece(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        self.bins
            .iter()
            .map(|b| b.count as f64 / self.n as f64 * (b.acc - b.conf).abs())
            .sum()
    }

    /// Accuracy over all samples, from the stored bins.
    pub fn accuracy(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        self.bins
            .iter()
            .map(|b| b.acc * b.count as f64)
            .sum::<f64>()
            / self.n as f64
    }

    /// Pools the bins of two reports over the same binning.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.num_bins() != other.num_bins() {
            return Err(Error::LengthMismatch {
                what: "calibration bins",
                left: self.num_bins(),
                right: other.num_bins(),
            });
        }
        let bins = self
            .bins
            .iter()
            .zip(&other.bins)
            .map(|(a, b)| {
                let count = a.count + b.count;
                let pool = |x: f64, y: f64| {
                    if count == 0 {
                        0.0
                    } else {
                        (x * a.count as f64 + y * b.count as f64) / count as f64
                    }
                };
                CalibrationBin {
                    lo: a.lo,
                    hi: a.hi,
                    count,
                    acc: pool(a.acc, b.acc),
                    conf: pool(a.conf, b.conf),
                }
            })
            .collect();
        let mut merged = Self {
            bins,
            ece: 0.0,
            n: self.n + other.n,
        };
        merged.ece = merged.recompute_ece();
        Ok(merged)
    }
}

/// Equal-width-bin expected calibration error.
pub fn ece<T: Scalar>(
    confidences: &[T],
    predictions: &[usize],
    labels: &[usize],
    num_bins: usize,
) -> Result<CalibrationReport> {
    if confidences.len() != predictions.len() || predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "confidences, predictions and labels",
            left: confidences.len(),
            right: predictions.len().min(labels.len()),
        });
    }
    if num_bins == 0 {
        return Err(Error::InvalidConfig("ECE needs at least one bin".into()));
    }
    let mut counts = vec![0usize; num_bins];
    let mut correct = vec![0usize; num_bins];
    let mut conf_sum = vec![0.0f64; num_bins];
    for ((&c, &pred), &label) in confidences.iter().zip(predictions).zip(labels) {
        let c = c.to_f64_lossy();
        let m = bin_index(c, num_bins);
        counts[m] += 1;
        conf_sum[m] += c;
        if pred == label {
            correct[m] += 1;
        }
    }
    let n = confidences.len();
    let bins: Vec<CalibrationBin> = (0..num_bins)
        .map(|m| {
            let count = counts[m];
            let (acc, conf) = if count == 0 {
                (0.0, 0.0)
            } else {
                (correct[m] as f64 / count as f64, conf_sum[m] / count as f64)
            };
            CalibrationBin {
                lo: m as f64 / num_bins as f64,
                hi: (m + 1) as f64 / num_bins as f64,
                count,
                acc,
                conf,
            }
        })
        .collect();
    let mut report = CalibrationReport { bins, ece: 0.0, n };
    report.ece = report.recompute_ece();
    Ok(report)
}

/// Confidence readout and ECE of probability rows against true labels.
pub fn evaluate_probs<T: Scalar>(
    probs: ArrayView2<T>,
    labels: &[usize],
    num_bins: usize,
) -> Result<CalibrationReport> {
    let (pred, conf) = confidence(probs);
    ece(&conf, &pred, labels, num_bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn confidence_readoff_and_ties() {
        let (y, c) = confidence(array![[0.1, 0.7, 0.2], [1.0, 0.0, 0.0]].view());
        assert_eq!(y, vec![1, 0]);
        assert_eq!(c, vec![0.7, 1.0]);
        let (y, c) = confidence(array![[0.25, 0.25, 0.25, 0.25]].view());
        assert_eq!(y, vec![0]);
        assert_eq!(c, vec![0.25]);
    }

    #[test]
    fn binning_edges() {
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.1, 10), 0);
        assert_eq!(bin_index(0.1000001, 10), 1);
        assert_eq!(bin_index(0.9, 10), 8);
        assert_eq!(bin_index(1.0, 10), 9);
        assert_eq!(bin_index(1.0, 1), 0);
    }

    #[test]
    fn hand_computed_single_bin() {
        let r = ece(&[0.9, 0.9, 0.9, 0.9], &[1, 1, 1, 1], &[1, 1, 1, 0], 10).unwrap();
        assert!((r.ece - 0.15).abs() < 1e-12);
        assert_eq!(r.n, 4);
        assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), 4);
    }

    #[test]
    fn perfect_predictions_zero_ece() {
        for m in [1, 2, 7, 15, 100] {
            let r = ece(&[1.0; 5], &[0, 1, 2, 3, 4], &[0, 1, 2, 3, 4], m).unwrap();
            assert_eq!(r.ece, 0.0);
        }
    }

    #[test]
    fn length_mismatch_and_zero_bins() {
        assert!(matches!(
            ece(&[0.5, 0.6], &[0], &[0], 15),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(ece::<f64>(&[], &[], &[], 0).is_err());
        assert_eq!(ece::<f64>(&[], &[], &[], 15).unwrap().ece, 0.0);
    }

    #[test]
    fn bernoulli_calibrated_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let mut conf = Vec::with_capacity(n);
        let mut pred = Vec::with_capacity(n);
        let mut label = Vec::with_capacity(n);
        for _ in 0..n {
            let c: f64 = rng.random_range(0.5..1.0);
            conf.push(c);
            pred.push(1usize);
            label.push(if rng.random::<f64>() < c { 1 } else { 0 });
        }
        let r = ece(&conf, &pred, &label, 15).unwrap();
        assert!(r.ece < 0.01, "ece {}", r.ece);
    }

    #[test]
    fn report_json_shape() {
        let r = ece(&[0.9, 0.3], &[0, 1], &[0, 0], 3).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["n"], 2);
        assert_eq!(v["bins"].as_array().unwrap().len(), 3);
        for key in ["lo", "hi", "count", "acc", "conf"] {
            assert!(v["bins"][0].get(key).is_some());
        }
        assert!(v["ece"].is_number());
    }

    fn stream() -> impl Strategy<Value = Vec<(f64, usize, usize)>> {
        prop::collection::vec((0.0f64..=1.0, 0usize..3, 0usize..3), 0..200)
    }

    proptest! {
        #[test]
        fn ece_bounded_and_recomputable(data in stream(), bins in 1usize..30) {
            let (c, rest): (Vec<_>, Vec<_>) = data.iter().map(|&(c, p, y)| (c, (p, y))).unzip();
            let (p, y): (Vec<_>, Vec<_>) = rest.into_iter().unzip();
            let r = ece(&c, &p, &y, bins).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.ece));
            prop_assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), r.n);
            prop_assert!((r.recompute_ece() - r.ece).abs() < 1e-12);
            for b in r.bins.iter().filter(|b| b.count > 0) {
                prop_assert!((0.0..=1.0).contains(&b.acc) && (0.0..=1.0).contains(&b.conf));
            }
        }

        #[test]
        fn ece_permutation_invariant(data in stream(), seed in any::<u64>()) {
            let mut shuffled = data.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
            let run = |d: &[(f64, usize, usize)]| {
                let c: Vec<f64> = d.iter().map(|t| t.0).collect();
                let p: Vec<usize> = d.iter().map(|t| t.1).collect();
                let y: Vec<usize> = d.iter().map(|t| t.2).collect();
                ece(&c, &p, &y, 15).unwrap().ece
            };
            prop_assert!((run(&data) - run(&shuffled)).abs() < 1e-12);
        }

        #[test]
        fn merged_bins_match_concatenation(a in stream(), b in stream()) {
            let split = |d: &[(f64, usize, usize)]| {
                let c: Vec<f64> = d.iter().map(|t| t.0).collect();
                let p: Vec<usize> = d.iter().map(|t| t.1).collect();
                let y: Vec<usize> = d.iter().map(|t| t.2).collect();
                ece(&c, &p, &y, 15).unwrap()
            };
            let joined: Vec<_> = a.iter().chain(&b).copied().collect();
            let merged = split(&a).merge(&split(&b)).unwrap();
            let whole = split(&joined);
            prop_assert_eq!(merged.n, whole.n);
            prop_assert!((merged.ece - whole.ece).abs() < 1e-12);
        }
    }
}
