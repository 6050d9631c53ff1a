//! Kernels over the data-interpolation ratio and the MixConf ratio laws.
//!
//! A [`KernelSpec`] describes the kernel `k'` directly in ratio space. The
//! data ratio `lambda_a` follows the two-component mixture
//! `0.5 k'(lambda - 1) + 0.5 k'(lambda)` truncated to `[0, 1]`, and the label
//! ratio `lambda_b` is the two-point kernel posterior of the first endpoint:
//!
//! ```text
//! lambda_b = k'(lambda_a - 1) / (k'(lambda_a - 1) + k'(lambda_a))
//! ```
//!
//! Kernels are left unnormalized. Every use is either a ratio or goes through
//! [`LambdaDistribution`], which normalizes by quadrature.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Number of intervals of the quadrature and inverse-CDF grid on `[0, 1]`.
pub const GRID_INTERVALS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian,
    Triangular,
}

/// A symmetric, unimodal kernel in ratio space with width `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec<T> {
    family: KernelFamily,
    width: T,
}

impl<T: Scalar> KernelSpec<T> {
    pub fn new(family: KernelFamily, width: T) -> Result<Self> {
        if !(width > T::zero()) || !width.is_finite() {
            return Err(Error::InvalidWidth(width.to_f64_lossy()));
        }
        Ok(Self { family, width })
    }

    pub fn gaussian(width: T) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, width)
    }

    pub fn triangular(width: T) -> Result<Self> {
        Self::new(KernelFamily::Triangular, width)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn width(&self) -> T {
        self.width
    }

    /// Unnormalized kernel value `k'(u)`. Gaussian peaks at 1, triangular
    /// has support `(-width, width)`.
    pub fn eval(&self, u: T) -> T {
        match self.family {
            KernelFamily::Gaussian => {
                let z = u / self.width;
                (-(z * z) / T::of(2.0)).exp()
            }
            KernelFamily::Triangular => (T::one() - u.abs() / self.width).max(T::zero()),
        }
    }

    /// Unnormalized, untruncated mixture `0.5 k'(lambda - 1) + 0.5 k'(lambda)`.
    pub fn mixture(&self, lambda: T) -> T {
        let half = T::of(0.5);
        half * self.eval(lambda - T::one()) + half * self.eval(lambda)
    }

    /// Integral of [`Self::mixture`] over `[0, 1]` by composite Simpson on
    /// `GRID_INTERVALS + 1` nodes.
    pub fn mixture_mass(&self) -> T {
        let n = GRID_INTERVALS;
        let h = T::one() / T::of(n as f64);
        let mut acc = self.mixture(T::zero()) + self.mixture(T::one());
        for i in 1..n {
            let w = if i % 2 == 1 { T::of(4.0) } else { T::of(2.0) };
            acc += w * self.mixture(T::of(i as f64) * h);
        }
        acc * h / T::of(3.0)
    }
}

/// `eval_kernel` as a free function.
pub fn eval_kernel<T: Scalar>(spec: &KernelSpec<T>, u: T) -> T {
    spec.eval(u)
}

/// Interpolation ratios for data (`lambda_a`) and labels (`lambda_b`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaPair<T> {
    pub lambda_a: T,
    pub lambda_b: T,
}

impl<T: Scalar> LambdaPair<T> {
    /// Mixup coupling: both ratios equal.
    pub fn tied(lambda: T) -> Self {
        Self {
            lambda_a: lambda,
            lambda_b: lambda,
        }
    }
}

/// Label ratio for a given data ratio.
///
/// Fails only when both kernel terms vanish, which can happen for a
/// triangular kernel narrower than 0.5 around `lambda_a = 0.5`.
pub fn compute_lambda_b<T: Scalar>(spec: &KernelSpec<T>, lambda_a: T) -> Result<T> {
    let toward_first = spec.eval(lambda_a - T::one());
    let toward_second = spec.eval(lambda_a);
    let denom = toward_first + toward_second;
    if denom == T::zero() {
        return Err(Error::DegenerateKernel {
            lambda_a: lambda_a.to_f64_lossy(),
        });
    }
    Ok(toward_first / denom)
}

/// Normalized density of the truncated mixture. Recomputes the normalizer on
/// every call; use [`LambdaDistribution`] for repeated evaluation.
pub fn lambda_a_pdf<T: Scalar>(spec: &KernelSpec<T>, lambda_a: T) -> T {
    if lambda_a < T::zero() || lambda_a > T::one() {
        return T::zero();
    }
    spec.mixture(lambda_a) / spec.mixture_mass()
}

/// One draw of `lambda_a`. Builds the inverse-CDF table on every call; use
/// [`LambdaDistribution::sample`] inside loops.
pub fn sample_lambda_a<T: Scalar, R: Rng + ?Sized>(spec: &KernelSpec<T>, rng: &mut R) -> T {
    LambdaDistribution::new(*spec).sample(rng)
}

/// The truncated mixture law of `lambda_a` with a cached normalizer and an
/// inverse-CDF table on a uniform grid.
#[derive(Debug, Clone)]
pub struct LambdaDistribution<T> {
    spec: KernelSpec<T>,
    mass: T,
    /// Cumulative probability at `i / GRID_INTERVALS`, `cdf[0] = 0`, `cdf[n] = 1`.
    cdf: Vec<T>,
}

impl<T: Scalar> LambdaDistribution<T> {
    pub fn new(spec: KernelSpec<T>) -> Self {
        let n = GRID_INTERVALS;
        let h = T::one() / T::of(n as f64);
        let sixth = h / T::of(6.0);
        let mut cdf = Vec::with_capacity(n + 1);
        cdf.push(T::zero());
        let mut acc = T::zero();
        let mut left = spec.mixture(T::zero());
        for i in 0..n {
            let lo = T::of(i as f64) * h;
            let mid = lo + h / T::of(2.0);
            let right = spec.mixture(T::of((i + 1) as f64) * h);
            acc += sixth * (left + T::of(4.0) * spec.mixture(mid) + right);
            cdf.push(acc);
            left = right;
        }
        let total = acc;
        for c in cdf.iter_mut() {
            *c /= total;
        }
        cdf[n] = T::one();
        Self {
            spec,
            mass: spec.mixture_mass(),
            cdf,
        }
    }

    pub fn spec(&self) -> &KernelSpec<T> {
        &self.spec
    }

    /// Normalizing constant of the mixture on `[0, 1]`.
    pub fn mass(&self) -> T {
        self.mass
    }

    pub fn pdf(&self, lambda_a: T) -> T {
        if lambda_a < T::zero() || lambda_a > T::one() {
            return T::zero();
        }
        self.spec.mixture(lambda_a) / self.mass
    }

    /// Tabulated CDF with linear interpolation between grid nodes.
    pub fn cdf(&self, lambda_a: T) -> T {
        if lambda_a <= T::zero() {
            return T::zero();
        }
        if lambda_a >= T::one() {
            return T::one();
        }
        let pos = lambda_a * T::of(GRID_INTERVALS as f64);
        let i = pos.floor().to_usize().unwrap_or(0).min(GRID_INTERVALS - 1);
        let frac = pos - T::of(i as f64);
        self.cdf[i] + frac * (self.cdf[i + 1] - self.cdf[i])
    }

    /// Inverse of [`Self::cdf`] for `u` in `[0, 1]`.
    pub fn quantile(&self, u: T) -> T {
        let u = u.max(T::zero()).min(T::one());
        // First node strictly above u; the cell before it has positive mass.
        let upper = self.cdf.partition_point(|&c| c <= u);
        if upper == 0 {
            return T::zero();
        }
        if upper > GRID_INTERVALS {
            return T::one();
        }
        let i = upper - 1;
        let width = self.cdf[upper] - self.cdf[i];
        let frac = (u - self.cdf[i]) / width;
        (T::of(i as f64) + frac) / T::of(GRID_INTERVALS as f64)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let u: f64 = rng.random();
        self.quantile(T::of(u))
    }

    /// Draws `lambda_a` and the matching `lambda_b`.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<LambdaPair<T>> {
        self.pair_at(self.sample(rng))
    }

    pub fn pair_at(&self, lambda_a: T) -> Result<LambdaPair<T>> {
        Ok(LambdaPair {
            lambda_a,
            lambda_b: compute_lambda_b(&self.spec, lambda_a)?,
        })
    }
}
