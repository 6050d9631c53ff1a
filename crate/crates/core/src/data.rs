//! Seeded 2-D classification datasets, prior-preserving splits and jitter.

use std::f64::consts::PI;
use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Distance of every blob centre from the origin.
pub const BLOB_RADIUS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    TwoMoons,
    GaussianBlobs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub generator: Generator,
    pub n_samples: usize,
    pub noise_sd: f64,
    pub n_classes: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        match self.generator {
            Generator::TwoMoons if self.n_classes != 2 => {
                return Err(Error::InvalidConfig(
                    "two moons has exactly 2 classes".into(),
                ))
            }
            Generator::GaussianBlobs if self.n_classes < 2 => {
                return Err(Error::InvalidConfig("blobs need at least 2 classes".into()))
            }
            _ => {}
        }
        if self.n_samples < self.n_classes {
            return Err(Error::InvalidConfig(format!(
                "{} samples cannot cover {} classes",
                self.n_samples, self.n_classes
            )));
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(Error::InvalidConfig(format!("noise sd {}", self.noise_sd)));
        }
        Ok(())
    }

    /// Default augmentation jitter for this dataset: half its noise level.
    pub fn default_jitter(&self) -> f64 {
        self.noise_sd / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub x: Array2<T>,
    pub y: Vec<usize>,
    pub n_classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &c in &self.y {
            counts[c] += 1;
        }
        counts
    }

    pub fn one_hot(&self) -> Array2<T> {
        one_hot(&self.y, self.n_classes)
    }
}

pub fn one_hot<T: Scalar>(labels: &[usize], n_classes: usize) -> Array2<T> {
    let mut out = Array2::zeros((labels.len(), n_classes));
    for (i, &c) in labels.iter().enumerate() {
        out[[i, c]] = T::one();
    }
    out
}

/// Points on the two canonical half circles: class 0 on
/// `(cos t, sin t)`, class 1 on `(1 - cos t, 0.5 - sin t)`, `t` evenly spaced
/// in `[0, pi]`, plus isotropic Gaussian noise. Row order is shuffled.
pub fn generate<T: Scalar>(spec: &DatasetSpec) -> Result<Dataset<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_samples;
    let c = spec.n_classes;
    let mut points: Vec<([f64; 2], usize)> = Vec::with_capacity(n);
    match spec.generator {
        Generator::TwoMoons => {
            let n_outer = n.div_ceil(2);
            let n_inner = n - n_outer;
            let angle = |i: usize, m: usize| {
                if m <= 1 {
                    0.0
                } else {
                    PI * i as f64 / (m - 1) as f64
                }
            };
            for i in 0..n_outer {
                let t = angle(i, n_outer);
                points.push(([t.cos(), t.sin()], 0));
            }
            for i in 0..n_inner {
                let t = angle(i, n_inner);
                points.push(([1.0 - t.cos(), 0.5 - t.sin()], 1));
            }
        }
        Generator::GaussianBlobs => {
            for i in 0..n {
                let class = i % c;
                let phase = 2.0 * PI * class as f64 / c as f64;
                points.push((
                    [BLOB_RADIUS * phase.cos(), BLOB_RADIUS * phase.sin()],
                    class,
                ));
            }
        }
    }
    for (p, _) in points.iter_mut() {
        for v in p.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += spec.noise_sd * z;
        }
    }
    points.shuffle(&mut rng);
    let x = Array2::from_shape_fn((n, 2), |(i, j)| T::of(points[i].0[j]));
    let y = points.iter().map(|p| p.1).collect();
    Ok(Dataset { x, y, n_classes: c })
}

/// Per-class quotas summing to `n` that track the class proportions of
/// `counts` within one sample (largest remainder, lower class on ties).
pub fn stratified_quotas(counts: &[usize], n: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    let exact: Vec<f64> = counts
        .iter()
        .map(|&k| n as f64 * k as f64 / total as f64)
        .collect();
    let mut quotas: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut missing = n - quotas.iter().sum::<usize>();
    for &class in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        if quotas[class] < counts[class] {
            quotas[class] += 1;
            missing -= 1;
        }
    }
    quotas
}

/// A random, class-prior-preserving choice of `n` indices.
pub fn stratified_indices<R: Rng + ?Sized>(
    labels: &[usize],
    n_classes: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if n > labels.len() {
        return Err(Error::SplitOverflow {
            requested: n,
            available: labels.len(),
        });
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let quotas = stratified_quotas(&counts, n);
    let mut chosen = Vec::with_capacity(n);
    for (members, quota) in by_class.iter_mut().zip(quotas) {
        members.shuffle(rng);
        chosen.extend_from_slice(&members[..quota]);
    }
    chosen.shuffle(rng);
    Ok(chosen)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_labeled: usize,
    pub n_validation: usize,
    pub n_test: usize,
}

/// Unlabeled training data. The true labels are kept only for diagnostics
/// such as pseudo-label corruption rates and never reach training.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSet<T> {
    pub x: Array2<T>,
    hidden_labels: Vec<usize>,
}

impl<T: Scalar> UnlabeledSet<T> {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn hidden_labels(&self) -> &[usize] {
        &self.hidden_labels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub labeled: Dataset<T>,
    pub unlabeled: UnlabeledSet<T>,
    pub validation: Dataset<T>,
    pub test: Dataset<T>,
    /// Dataset row indices of each part, in the same order.
    pub indices: SplitIndices,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// The labeled part is drawn first with class priors preserved; validation
/// and test are then drawn at random from the rest, and whatever remains is
/// unlabeled.
pub fn split<T: Scalar>(dataset: &Dataset<T>, spec: &SplitSpec, seed: u64) -> Result<Split<T>> {
    let requested = spec.n_labeled + spec.n_validation + spec.n_test;
    if requested > dataset.len() {
        return Err(Error::SplitOverflow {
            requested,
            available: dataset.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labeled = stratified_indices(&dataset.y, dataset.n_classes, spec.n_labeled, &mut rng)?;
    let mut taken = vec![false; dataset.len()];
    for &i in &labeled {
        taken[i] = true;
    }
    let mut rest: Vec<usize> = (0..dataset.len()).filter(|&i| !taken[i]).collect();
    rest.shuffle(&mut rng);
    let validation = rest[..spec.n_validation].to_vec();
    let test = rest[spec.n_validation..spec.n_validation + spec.n_test].to_vec();
    let unlabeled = rest[spec.n_validation + spec.n_test..].to_vec();

    let hidden = dataset.subset(&unlabeled);
    Ok(Split {
        labeled: dataset.subset(&labeled),
        unlabeled: UnlabeledSet {
            x: hidden.x,
            hidden_labels: hidden.y,
        },
        validation: dataset.subset(&validation),
        test: dataset.subset(&test),
        indices: SplitIndices {
            labeled,
            unlabeled,
            validation,
            test,
        },
    })
}

impl<T: Scalar> Split<T> {
    /// CSV with columns `x0, x1, ..., label, split`. Unlabeled rows carry
    /// their hidden label for inspection.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let dim = self.labeled.x.ncols().max(self.unlabeled.x.ncols());
        let mut header: Vec<String> = (0..dim).map(|j| format!("x{j}")).collect();
        header.push("label".into());
        header.push("split".into());
        w.write_record(&header)?;
        let parts: [(&str, ArrayView2<T>, &[usize]); 4] = [
            ("labeled", self.labeled.x.view(), &self.labeled.y),
            (
                "unlabeled",
                self.unlabeled.x.view(),
                &self.unlabeled.hidden_labels,
            ),
            ("validation", self.validation.x.view(), &self.validation.y),
            ("test", self.test.x.view(), &self.test.y),
        ];
        for (tag, x, y) in parts {
            for (row, label) in x.rows().into_iter().zip(y) {
                let mut record: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                record.push(label.to_string());
                record.push(tag.to_string());
                w.write_record(&record)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Adds `N(0, magnitude^2)` noise to every coordinate.
pub fn jitter<T: Scalar, R: Rng + ?Sized>(
    x_batch: ArrayView2<T>,
    magnitude: T,
    rng: &mut R,
) -> Array2<T> {
    if magnitude == T::zero() {
        return x_batch.to_owned();
    }
    x_batch.mapv(|v| {
        let z: f64 = rng.sample(StandardNormal);
        v + magnitude * T::of(z)
    })
}
