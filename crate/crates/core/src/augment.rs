//! Pairwise interpolation of training samples.
//!
//! Both augmentors build `x~ = lambda_a x0 + (1 - lambda_a) x1` and
//! `p~ = lambda_b p0 + (1 - lambda_b) p1`. Mixup ties the two ratios and draws
//! them from `Beta(alpha, alpha)`; MixConf draws `lambda_a` from the kernel
//! mixture and sets `lambda_b` to the kernel posterior.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{KernelSpec, LambdaDistribution, LambdaPair};
use crate::scalar::Scalar;

/// A feature vector with a label distribution over `C` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub x: Vec<T>,
    pub p: Vec<T>,
}

impl<T: Scalar> Sample<T> {
    pub fn new(x: Vec<T>, p: Vec<T>) -> Self {
        Self { x, p }
    }

    pub fn one_hot(x: Vec<T>, class: usize, n_classes: usize) -> Self {
        let mut p = vec![T::zero(); n_classes];
        p[class] = T::one();
        Self { x, p }
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.x.len() != other.x.len() {
            return Err(Error::DimensionMismatch {
                what: "sample features",
                expected: self.x.len(),
                got: other.x.len(),
            });
        }
        if self.p.len() != other.p.len() {
            return Err(Error::DimensionMismatch {
                what: "sample label classes",
                expected: self.p.len(),
                got: other.p.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedSample<T> {
    pub x_tilde: Vec<T>,
    pub p_tilde: Vec<T>,
    pub lambda: LambdaPair<T>,
    /// (original, partner) positions in the batches that produced this sample.
    pub source_indices: (usize, usize),
}

impl<T: Scalar> MixedSample<T> {
    pub fn into_sample(self) -> Sample<T> {
        Sample {
            x: self.x_tilde,
            p: self.p_tilde,
        }
    }
}

/// Interpolates two compatible samples with the given ratios.
pub fn interpolate<T: Scalar>(
    s0: &Sample<T>,
    s1: &Sample<T>,
    lambda: LambdaPair<T>,
) -> Result<MixedSample<T>> {
    s0.check_compatible(s1)?;
    let lerp = |a: &[T], b: &[T], t: T| -> Vec<T> {
        a.iter()
            .zip(b)
            .map(|(&u, &v)| t * u + (T::one() - t) * v)
            .collect()
    };
    Ok(MixedSample {
        x_tilde: lerp(&s0.x, &s1.x, lambda.lambda_a),
        p_tilde: lerp(&s0.p, &s1.p, lambda.lambda_b),
        lambda,
        source_indices: (0, 1),
    })
}

/// Which interpolation scheme to apply, in declarative form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugmentorConfig {
    None,
    Mixup {
        alpha: f64,
    },
    #[serde(rename = "mixconf_g")]
    MixConfG {
        width: f64,
    },
    #[serde(rename = "mixconf_t")]
    MixConfT {
        width: f64,
    },
}

impl AugmentorConfig {
    pub fn build<T: Scalar>(&self) -> Result<Augmentor<T>> {
        Ok(match *self {
            AugmentorConfig::None => Augmentor::Identity,
            AugmentorConfig::Mixup { alpha } => Augmentor::mixup(alpha)?,
            AugmentorConfig::MixConfG { width } => {
                Augmentor::mixconf(KernelSpec::gaussian(T::of(width))?)
            }
            AugmentorConfig::MixConfT { width } => {
                Augmentor::mixconf(KernelSpec::triangular(T::of(width))?)
            }
        })
    }

    pub fn label(&self) -> String {
        match self {
            AugmentorConfig::None => "none".into(),
            AugmentorConfig::Mixup { alpha } => format!("mixup(alpha={alpha})"),
            AugmentorConfig::MixConfG { width } => format!("mixconf_g(sigma={width})"),
            AugmentorConfig::MixConfT { width } => format!("mixconf_t(sigma={width})"),
        }
    }
}

/// A ready-to-sample interpolation scheme.
#[derive(Debug, Clone)]
pub enum Augmentor<T> {
    /// Returns the original sample unchanged (`lambda_a = lambda_b = 1`).
    Identity,
    Mixup {
        alpha: f64,
        beta: Beta<f64>,
    },
    MixConf(LambdaDistribution<T>),
}

impl<T: Scalar> Augmentor<T> {
    pub fn mixup(alpha: f64) -> Result<Self> {
        let beta = Beta::new(alpha, alpha)
            .map_err(|e| Error::InvalidConfig(format!("mixup alpha {alpha}: {e}")))?;
        Ok(Augmentor::Mixup { alpha, beta })
    }

    pub fn mixconf(spec: KernelSpec<T>) -> Self {
        Augmentor::MixConf(LambdaDistribution::new(spec))
    }

    /// Draws a ratio pair; `force` pins `lambda_a` and derives `lambda_b`
    /// from it without consuming randomness.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, force: Option<T>) -> Result<LambdaPair<T>> {
        match self {
            Augmentor::Identity => Ok(LambdaPair::tied(T::one())),
            Augmentor::Mixup { beta, .. } => {
                let lambda = match force {
                    Some(l) => l,
                    None => T::of(beta.sample(rng)),
                };
                Ok(LambdaPair::tied(lambda))
            }
            Augmentor::MixConf(dist) => match force {
                Some(l) => dist.pair_at(l),
                None => dist.sample_pair(rng),
            },
        }
    }

    pub fn mix_pair<R: Rng + ?Sized>(
        &self,
        s0: &Sample<T>,
        s1: &Sample<T>,
        rng: &mut R,
        force: Option<T>,
    ) -> Result<MixedSample<T>> {
        s0.check_compatible(s1)?;
        let lambda = self.draw(rng, force)?;
        interpolate(s0, s1, lambda)
    }
}

/// MixConf interpolation of one pair.
pub fn mixconf_pair<T: Scalar, R: Rng + ?Sized>(
    s0: &Sample<T>,
    s1: &Sample<T>,
    dist: &LambdaDistribution<T>,
    rng: &mut R,
    force: Option<T>,
) -> Result<MixedSample<T>> {
    s0.check_compatible(s1)?;
    let lambda = match force {
        Some(l) => dist.pair_at(l)?,
        None => dist.sample_pair(rng)?,
    };
    interpolate(s0, s1, lambda)
}

/// Mixup interpolation of one pair.
pub fn mixup_pair<T: Scalar, R: Rng + ?Sized>(
    s0: &Sample<T>,
    s1: &Sample<T>,
    alpha: f64,
    rng: &mut R,
    force: Option<T>,
) -> Result<MixedSample<T>> {
    Augmentor::<T>::mixup(alpha)?.mix_pair(s0, s1, rng, force)
}

/// Mixes `originals[i]` with `partners[i]` for every `i`, one independent
/// ratio draw per pair, in order.
pub fn mix_batches<T: Scalar, R: Rng + ?Sized>(
    originals: &[Sample<T>],
    partners: &[Sample<T>],
    augmentor: &Augmentor<T>,
    rng: &mut R,
) -> Result<Vec<MixedSample<T>>> {
    if originals.len() != partners.len() {
        return Err(Error::LengthMismatch {
            what: "originals vs partners",
            left: originals.len(),
            right: partners.len(),
        });
    }
    originals
        .iter()
        .zip(partners)
        .enumerate()
        .map(|(i, (s0, s1))| {
            let mut mixed = augmentor.mix_pair(s0, s1, rng, None)?;
            mixed.source_indices = (i, i);
            Ok(mixed)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn g04() -> LambdaDistribution<f64> {
        LambdaDistribution::new(KernelSpec::gaussian(0.4).unwrap())
    }

    #[test]
    fn identical_endpoints_are_fixed_points() {
        let s = Sample::new(vec![0.3, -1.2], vec![0.25, 0.75]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = mixconf_pair(&s, &s, &g04(), &mut rng, None).unwrap();
        for (a, b) in m.x_tilde.iter().zip(&s.x) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in m.p_tilde.iter().zip(&s.p) {
            assert!((a - b).abs() < 1e-15);
        }
        let m = mixup_pair(&s, &s, 0.7, &mut rng, None).unwrap();
        for (a, b) in m.x_tilde.iter().zip(&s.x) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn forced_lambda_one_mixconf() {
        let s0 = Sample::one_hot(vec![1.0, 2.0], 0, 2);
        let s1 = Sample::one_hot(vec![-3.0, 5.0], 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = mixconf_pair(&s0, &s1, &g04(), &mut rng, Some(1.0)).unwrap();
        assert_eq!(m.x_tilde, s0.x);
        assert!((m.p_tilde[0] - 0.9579).abs() < 5e-5);
        assert!((m.p_tilde[1] - 0.0421).abs() < 5e-5);
        let m = mixconf_pair(&s0, &s1, &g04(), &mut rng, Some(0.5)).unwrap();
        assert_eq!(m.p_tilde, vec![0.5, 0.5]);
    }

    #[test]
    fn forced_mixup_ties_ratios() {
        let s0 = Sample::one_hot(vec![0.0], 0, 2);
        let s1 = Sample::one_hot(vec![1.0], 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = mixup_pair(&s0, &s1, 1.0, &mut rng, Some(0.3)).unwrap();
        assert_eq!(m.lambda.lambda_a, 0.3);
        assert_eq!(m.lambda.lambda_b, 0.3);
    }

    #[test]
    fn mixup_alpha_one_is_uniform() {
        let aug = Augmentor::<f64>::mixup(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let mut counts = [0usize; 50];
        for _ in 0..n {
            let l = aug.draw(&mut rng, None).unwrap().lambda_a;
            counts[((l * 50.0) as usize).min(49)] += 1;
        }
        let worst = counts
            .iter()
            .map(|&c| (c as f64 / n as f64 - 0.02).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.005, "max bin deviation {worst}");
    }

    #[test]
    fn rejects_bad_alpha_and_mismatched_dims() {
        assert!(Augmentor::<f64>::mixup(0.0).is_err());
        let s0 = Sample::one_hot(vec![0.0, 1.0], 0, 2);
        let s1 = Sample::one_hot(vec![1.0], 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            mixconf_pair(&s0, &s1, &g04(), &mut rng, None),
            Err(Error::DimensionMismatch { .. })
        ));
        let s2 = Sample::one_hot(vec![1.0, 1.0], 1, 3);
        assert!(mixup_pair(&s0, &s2, 1.0, &mut rng, None).is_err());
    }

    #[test]
    fn batch_mixing_contracts() {
        let batch: Vec<_> = (0..3)
            .map(|i| Sample::one_hot(vec![i as f64, -(i as f64)], i % 2, 2))
            .collect();
        let others: Vec<_> = batch.iter().rev().cloned().collect();
        let aug = Augmentor::mixconf(KernelSpec::gaussian(0.4).unwrap());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let same = mix_batches(&batch, &batch, &aug, &mut rng).unwrap();
        for (m, s) in same.iter().zip(&batch) {
            assert_eq!(m.x_tilde, s.x);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = mix_batches(&batch, &others, &aug, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = mix_batches(&batch, &others, &aug, &mut rng).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a, b);
        assert_ne!(a[0].lambda, a[1].lambda);
        assert_ne!(a[1].lambda, a[2].lambda);
        assert_eq!(a[2].source_indices, (2, 2));

        assert!(matches!(
            mix_batches(&batch, &others[..2], &aug, &mut rng),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn identity_augmentor_returns_original() {
        let s0 = Sample::one_hot(vec![0.5, 0.5], 0, 3);
        let s1 = Sample::one_hot(vec![9.0, 9.0], 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Augmentor::Identity
            .mix_pair(&s0, &s1, &mut rng, None)
            .unwrap();
        assert_eq!(m.into_sample(), s0);
    }

    fn augmentors() -> impl Strategy<Value = AugmentorConfig> {
        prop_oneof![
            (0.1f64..2.0).prop_map(|alpha| AugmentorConfig::Mixup { alpha }),
            (0.05f64..2.0).prop_map(|width| AugmentorConfig::MixConfG { width }),
            (0.6f64..2.0).prop_map(|width| AugmentorConfig::MixConfT { width }),
        ]
    }

    proptest! {
        #[test]
        fn outputs_are_convex_and_mass_preserving(
            cfg in augmentors(),
            dim in 1usize..8,
            classes in 2usize..6,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let aug = cfg.build::<f64>().unwrap();
            let x0: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
            let x1: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
            let y0 = rng.random_range(0..classes);
            let y1 = rng.random_range(0..classes);
            let s0 = Sample::one_hot(x0, y0, classes);
            let s1 = Sample::one_hot(x1, y1, classes);
            let m = aug.mix_pair(&s0, &s1, &mut rng, None).unwrap();
            let la = m.lambda.lambda_a;
            prop_assert!((0.0..=1.0).contains(&la));
            prop_assert!((0.0..=1.0).contains(&m.lambda.lambda_b));
            for ((&xt, &a), &b) in m.x_tilde.iter().zip(&s0.x).zip(&s1.x) {
                prop_assert!(xt >= a.min(b) - 1e-12 && xt <= a.max(b) + 1e-12);
            }
            for (j, ((&pt, &a), &b)) in m.p_tilde.iter().zip(&s0.p).zip(&s1.p).enumerate() {
                prop_assert!(pt >= a.min(b) - 1e-15 && pt <= a.max(b) + 1e-15);
                if j != y0 && j != y1 {
                    prop_assert_eq!(pt, 0.0);
                }
            }
            prop_assert!((m.p_tilde.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
