//! Selective training with confidence-thresholded hard pseudo-labels.
//!
//! One step:
//! 1. predict every unlabeled sample under `K` jittered copies and average
//!    the softmax outputs; argmax is the pseudo-label, max is the confidence;
//! 2. keep samples whose confidence is at least `c_thr`;
//! 3. pool labeled samples with every jittered copy of the kept samples,
//!    shuffle the pool once and interpolate each pool entry with its partner;
//! 4. keep the `n_L` smallest labeled-side losses and, per copy, the `n_U`
//!    smallest unlabeled-side losses, where
//!    `n_L = f B_L`, `n_U = min(B_L, f c_ave R)`, `f = (B_L + c_ave R) / (B_L + R)`
//!    and `R` is the number of kept samples;
//! 5. minimize `(1/B_L) sum l_L + lambda_U (1/B_L) (1/K) sum_k sum l_U`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{mix_batches, Augmentor, AugmentorConfig, Sample};
use crate::data::{jitter, Dataset, UnlabeledSet};
use crate::error::{Error, Result};
use crate::metrics::{confidence, evaluate_probs, CalibrationReport, DEFAULT_BINS};
use crate::net::NetState;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SslConfig {
    /// `B_L`.
    pub batch_labeled: usize,
    pub c_thr: f64,
    pub lambda_u: f64,
    /// Augmented copies per unlabeled sample.
    pub k_aug: usize,
    pub iterations: usize,
    pub augmentor: AugmentorConfig,
    pub learn_rate: f64,
    /// Standard deviation of the pseudo-labeling jitter.
    pub jitter: f64,
    /// When false, the first `n` pool entries are kept instead of the `n`
    /// smallest losses (same counts, no loss ranking).
    pub small_loss_selection: bool,
    /// Evaluate the EMA model every this many iterations (and at the last);
    /// 0 evaluates only at the last iteration.
    pub eval_every: usize,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            batch_labeled: 10,
            c_thr: 0.8,
            lambda_u: 2.0,
            k_aug: 4,
            iterations: 5000,
            augmentor: AugmentorConfig::MixConfG { width: 0.4 },
            learn_rate: 0.01,
            jitter: 0.05,
            small_loss_selection: true,
            eval_every: 500,
        }
    }
}

impl SslConfig {
    /// `B_U = round(B_L / c_thr)`, fixed for the whole run.
    pub fn batch_unlabeled(&self) -> usize {
        (self.batch_labeled as f64 / self.c_thr).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.batch_labeled == 0 {
            return bad("batch_labeled must be positive".into());
        }
        if !(self.c_thr > 0.0 && self.c_thr <= 1.0) {
            return bad(format!("c_thr {} outside (0, 1]", self.c_thr));
        }
        if !(self.lambda_u >= 0.0) || !self.lambda_u.is_finite() {
            return bad(format!("lambda_u {} must be non-negative", self.lambda_u));
        }
        if self.k_aug == 0 {
            return bad("k_aug must be at least 1".into());
        }
        if !(self.learn_rate > 0.0) {
            return bad(format!("learn_rate {} must be positive", self.learn_rate));
        }
        if !(self.jitter >= 0.0) {
            return bad(format!("jitter {} must be non-negative", self.jitter));
        }
        Ok(())
    }
}

/// K-averaged predictions on an unlabeled batch.
#[derive(Debug, Clone)]
pub struct PseudoLabels<T> {
    pub probs: Array2<T>,
    pub labels: Vec<usize>,
    pub confidences: Vec<T>,
    /// The `K` jittered copies the predictions were averaged over.
    pub augmented: Vec<Array2<T>>,
}

pub fn generate_pseudo_labels<T: Scalar, R: Rng + ?Sized>(
    state: &NetState<T>,
    x_unlabeled: ArrayView2<T>,
    k: usize,
    jitter_magnitude: T,
    rng: &mut R,
) -> Result<PseudoLabels<T>> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    let mut augmented = Vec::with_capacity(k);
    let mut sum = Array2::<T>::zeros((x_unlabeled.nrows(), state.n_classes()));
    for _ in 0..k {
        let copy = jitter(x_unlabeled, jitter_magnitude, rng);
        sum += &state.forward(copy.view())?;
        augmented.push(copy);
    }
    let probs = if k == 1 { sum } else { sum / T::of(k as f64) };
    let (labels, confidences) = confidence(probs.view());
    Ok(PseudoLabels {
        probs,
        labels,
        confidences,
        augmented,
    })
}

/// Pseudo-labeled samples that passed the confidence threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoBatch<T> {
    /// Rows of the unlabeled batch that were kept, ascending.
    pub indices: Vec<usize>,
    pub y_hat: Vec<usize>,
    pub c: Vec<T>,
    /// Mean of `c`; 0 when nothing was kept.
    pub c_ave: f64,
}

impl<T: Scalar> PseudoBatch<T> {
    pub fn retained_count(&self) -> usize {
        self.indices.len()
    }

    /// The kept rows of `x`.
    pub fn gather(&self, x: ArrayView2<T>) -> Array2<T> {
        x.select(Axis(0), &self.indices)
    }
}

/// Keeps exactly the samples with `c >= c_thr`.
pub fn threshold_filter<T: Scalar>(
    labels: &[usize],
    confidences: &[T],
    c_thr: f64,
) -> PseudoBatch<T> {
    let indices: Vec<usize> = confidences
        .iter()
        .enumerate()
        .filter(|(_, &c)| c.to_f64_lossy() >= c_thr)
        .map(|(i, _)| i)
        .collect();
    let c: Vec<T> = indices.iter().map(|&i| confidences[i]).collect();
    let c_ave = if c.is_empty() {
        0.0
    } else {
        c.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / c.len() as f64
    };
    PseudoBatch {
        y_hat: indices.iter().map(|&i| labels[i]).collect(),
        indices,
        c,
        c_ave,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionPlan {
    pub n_l: usize,
    pub n_u: usize,
}

/// Absorbs representation error before flooring, so that e.g. 68 computed
/// as 67.99999999999999 still floors to 68.
const FLOOR_SLACK: f64 = 1e-9;

/// Expected counts of mixed samples built from two correct labels, with the
/// kept unlabeled count standing in for `B_U`; both floored.
pub fn selection_counts(batch_labeled: usize, retained_count: usize, c_ave: f64) -> SelectionPlan {
    if retained_count == 0 {
        return SelectionPlan {
            n_l: batch_labeled,
            n_u: 0,
        };
    }
    let b_l = batch_labeled as f64;
    let r = retained_count as f64;
    let expected_correct = c_ave * r;
    let fraction = (b_l + expected_correct) / (b_l + r);
    let n_l = ((fraction * b_l + FLOOR_SLACK).floor() as usize).min(batch_labeled);
    let n_u = ((fraction * expected_correct + FLOOR_SLACK).floor() as usize)
        .min(batch_labeled)
        .min(retained_count);
    SelectionPlan { n_l, n_u }
}

/// Indices of the `n` smallest losses, ascending by loss then index.
pub fn select_small_loss<T: Scalar>(per_sample_losses: &[T], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..per_sample_losses.len()).collect();
    order.sort_by(|&a, &b| {
        per_sample_losses[a]
            .partial_cmp(&per_sample_losses[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(n.min(per_sample_losses.len()));
    order
}

/// Interpolated pool: labeled side first, then one block of `retained` rows
/// per augmented copy.
#[derive(Debug, Clone)]
pub struct MixedPool<T> {
    pub x: Array2<T>,
    pub p: Array2<T>,
    pub n_labeled: usize,
    pub retained: usize,
    pub copies: usize,
    /// `(original, partner)` pool positions of every mixed row.
    pub sources: Vec<(usize, usize)>,
}

impl<T: Scalar> MixedPool<T> {
    /// Row range of the `k`-th unlabeled block.
    pub fn unlabeled_block(&self, k: usize) -> std::ops::Range<usize> {
        let start = self.n_labeled + k * self.retained;
        start..start + self.retained
    }
}

/// Shuffles `labeled ∪ pseudo-labeled copies` once and interpolates every
/// original with the partner at the same position of the shuffled pool.
pub fn build_mixed_pool<T: Scalar, R: Rng + ?Sized>(
    x_labeled: ArrayView2<T>,
    p_labeled: ArrayView2<T>,
    pseudo_copies: &[Array2<T>],
    pseudo_labels: &[usize],
    augmentor: &Augmentor<T>,
    rng: &mut R,
) -> Result<MixedPool<T>> {
    let n_classes = p_labeled.ncols();
    let retained = pseudo_labels.len();
    let mut originals: Vec<Sample<T>> = x_labeled
        .rows()
        .into_iter()
        .zip(p_labeled.rows())
        .map(|(x, p)| Sample::new(x.to_vec(), p.to_vec()))
        .collect();
    for copy in pseudo_copies {
        if copy.nrows() != retained {
            return Err(Error::LengthMismatch {
                what: "pseudo-labeled copy rows vs labels",
                left: copy.nrows(),
                right: retained,
            });
        }
        for (x, &y) in copy.rows().into_iter().zip(pseudo_labels) {
            originals.push(Sample::one_hot(x.to_vec(), y, n_classes));
        }
    }
    let mut perm: Vec<usize> = (0..originals.len()).collect();
    perm.shuffle(rng);
    let partners: Vec<Sample<T>> = perm.iter().map(|&j| originals[j].clone()).collect();
    let mixed = mix_batches(&originals, &partners, augmentor, rng)?;

    let dim = x_labeled.ncols();
    let rows = mixed.len();
    let mut x = Array2::zeros((rows, dim));
    let mut p = Array2::zeros((rows, n_classes));
    let mut sources = Vec::with_capacity(rows);
    for (i, m) in mixed.into_iter().enumerate() {
        x.row_mut(i).assign(&Array1::from(m.x_tilde));
        p.row_mut(i).assign(&Array1::from(m.p_tilde));
        sources.push((i, perm[i]));
    }
    Ok(MixedPool {
        x,
        p,
        n_labeled: x_labeled.nrows(),
        retained,
        copies: pseudo_copies.len(),
        sources,
    })
}

/// Per-iteration log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub iteration: usize,
    pub c_ave: f64,
    pub retained_count: usize,
    #[serde(rename = "n_L")]
    pub n_l: usize,
    #[serde(rename = "n_U")]
    pub n_u: usize,
    pub loss_labeled: f64,
    pub loss_unlabeled: f64,
    pub loss_total: f64,
    pub eval_error: Option<f64>,
    pub eval_ece: Option<f64>,
}

/// Writes the log as CSV with one row per iteration.
pub fn write_step_log<W: std::io::Write>(reports: &[StepReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Top-1 error and calibration of the EMA model on a labeled set.
pub fn evaluate_ema<T: Scalar>(
    state: &NetState<T>,
    dataset: &Dataset<T>,
) -> Result<(f64, CalibrationReport)> {
    let probs = state.ema_forward(dataset.x.view())?;
    let report = evaluate_probs(probs.view(), &dataset.y, DEFAULT_BINS)?;
    Ok((1.0 - report.accuracy(), report))
}

/// Configured training procedure with its augmentor built once.
#[derive(Debug, Clone)]
pub struct SslEngine<T> {
    config: SslConfig,
    augmentor: Augmentor<T>,
}

impl<T: Scalar> SslEngine<T> {
    pub fn new(config: SslConfig) -> Result<Self> {
        config.validate()?;
        let augmentor = config.augmentor.build()?;
        Ok(Self { config, augmentor })
    }

    pub fn config(&self) -> &SslConfig {
        &self.config
    }

    pub fn augmentor(&self) -> &Augmentor<T> {
        &self.augmentor
    }

    fn tolerance() -> f64 {
        1e-12_f64.max(T::epsilon().to_f64_lossy() * 1e3)
    }

    /// One selective update. `x_unlabeled` must hold `B_U` rows unless
    /// `lambda_U = 0`, in which case the unlabeled side is skipped entirely
    /// and the step is plain augmented supervised training.
    pub fn train_step<R: Rng + ?Sized>(
        &self,
        state: &mut NetState<T>,
        x_labeled: ArrayView2<T>,
        p_labeled: ArrayView2<T>,
        x_unlabeled: ArrayView2<T>,
        iteration: usize,
        rng: &mut R,
    ) -> Result<StepReport> {
        let cfg = &self.config;
        let b_l = cfg.batch_labeled;
        if x_labeled.nrows() != b_l || p_labeled.nrows() != b_l {
            return Err(Error::LengthMismatch {
                what: "labeled batch rows vs B_L",
                left: x_labeled.nrows(),
                right: b_l,
            });
        }
        let use_unlabeled = cfg.lambda_u > 0.0;
        if use_unlabeled && x_unlabeled.nrows() != cfg.batch_unlabeled() {
            return Err(Error::LengthMismatch {
                what: "unlabeled batch rows vs B_U",
                left: x_unlabeled.nrows(),
                right: cfg.batch_unlabeled(),
            });
        }
        let violation = |detail: String| Error::Invariant { iteration, detail };

        let (pseudo, copies) = if use_unlabeled {
            let predicted =
                generate_pseudo_labels(state, x_unlabeled, cfg.k_aug, T::of(cfg.jitter), rng)?;
            let kept = threshold_filter(&predicted.labels, &predicted.confidences, cfg.c_thr);
            if let Some(c) = kept.c.iter().find(|c| c.to_f64_lossy() < cfg.c_thr) {
                return Err(violation(format!(
                    "pseudo-label confidence {c} below threshold"
                )));
            }
            let copies: Vec<Array2<T>> = predicted
                .augmented
                .iter()
                .map(|a| kept.gather(a.view()))
                .collect();
            (kept, copies)
        } else {
            (threshold_filter::<T>(&[], &[], cfg.c_thr), Vec::new())
        };
        let retained = pseudo.retained_count();
        let plan = selection_counts(b_l, retained, pseudo.c_ave);
        let copies = if retained == 0 { Vec::new() } else { copies };

        let pool = build_mixed_pool(
            x_labeled,
            p_labeled,
            &copies,
            &pseudo.y_hat,
            &self.augmentor,
            rng,
        )?;
        let losses = state.per_sample_loss(pool.x.view(), pool.p.view())?;
        let losses = losses.as_slice().expect("contiguous loss vector");

        let mut weights = Array1::<T>::zeros(losses.len());
        let labeled_weight = T::one() / T::of(b_l as f64);
        let pick = |block: &[T], n: usize| -> Vec<usize> {
            if cfg.small_loss_selection {
                select_small_loss(block, n)
            } else {
                (0..n.min(block.len())).collect()
            }
        };

        let labeled_losses = &losses[..pool.n_labeled];
        let chosen = pick(labeled_losses, plan.n_l);
        self.check_selection(labeled_losses, &chosen)
            .map_err(violation)?;
        let mut labeled_sum = 0.0;
        for &i in &chosen {
            weights[i] = labeled_weight;
            labeled_sum += labeled_losses[i].to_f64_lossy();
        }

        let mut unlabeled_sum = 0.0;
        if pool.copies > 0 {
            let unlabeled_weight =
                T::of(cfg.lambda_u) / (T::of(b_l as f64) * T::of(pool.copies as f64));
            for k in 0..pool.copies {
                let range = pool.unlabeled_block(k);
                let block = &losses[range.clone()];
                let chosen = pick(block, plan.n_u);
                self.check_selection(block, &chosen).map_err(violation)?;
                for &j in &chosen {
                    weights[range.start + j] = unlabeled_weight;
                    unlabeled_sum += block[j].to_f64_lossy();
                }
            }
        }
        let loss_labeled = labeled_sum / b_l as f64;
        let loss_unlabeled = if pool.copies > 0 {
            unlabeled_sum / (b_l as f64 * pool.copies as f64)
        } else {
            0.0
        };
        let loss_total = loss_labeled + cfg.lambda_u * loss_unlabeled;

        if plan.n_l > b_l || plan.n_u > b_l.min(retained) {
            return Err(violation(format!(
                "selection counts {plan:?} exceed bounds"
            )));
        }
        if selection_counts(b_l, retained, pseudo.c_ave) != plan {
            return Err(violation("selection counts not reproducible".into()));
        }

        let objective = state
            .backward_and_step(
                pool.x.view(),
                pool.p.view(),
                weights.view(),
                T::of(cfg.learn_rate),
            )?
            .to_f64_lossy();
        if (objective - loss_total).abs() > Self::tolerance() * loss_total.abs().max(1.0) {
            return Err(violation(format!(
                "objective {objective} != labeled + lambda_U * unlabeled = {loss_total}"
            )));
        }

        Ok(StepReport {
            iteration,
            c_ave: pseudo.c_ave,
            retained_count: retained,
            n_l: plan.n_l,
            n_u: plan.n_u,
            loss_labeled,
            loss_unlabeled,
            loss_total,
            eval_error: None,
            eval_ece: None,
        })
    }

    fn check_selection(&self, losses: &[T], chosen: &[usize]) -> Result<(), String> {
        if !self.config.small_loss_selection || chosen.is_empty() {
            return Ok(());
        }
        let mut selected = vec![false; losses.len()];
        for &i in chosen {
            selected[i] = true;
        }
        let max_in = chosen
            .iter()
            .map(|&i| losses[i])
            .fold(T::neg_infinity(), T::max);
        let min_out = (0..losses.len())
            .filter(|&i| !selected[i])
            .map(|i| losses[i])
            .fold(T::infinity(), T::min);
        if max_in > min_out {
            return Err(format!(
                "selected loss {max_in} exceeds unselected {min_out}"
            ));
        }
        Ok(())
    }

    /// Runs `iterations` steps over reshuffled epochs (partial batches are
    /// dropped) and evaluates the EMA model on `eval` periodically.
    pub fn train_loop<R: Rng + ?Sized>(
        &self,
        state: &mut NetState<T>,
        labeled: &Dataset<T>,
        unlabeled: &UnlabeledSet<T>,
        eval: Option<&Dataset<T>>,
        rng: &mut R,
    ) -> Result<Vec<StepReport>> {
        let cfg = &self.config;
        if labeled.len() < cfg.batch_labeled {
            return Err(Error::InvalidConfig(format!(
                "{} labeled samples cannot fill a batch of {}",
                labeled.len(),
                cfg.batch_labeled
            )));
        }
        let use_unlabeled = cfg.lambda_u > 0.0;
        let b_u = cfg.batch_unlabeled();
        if use_unlabeled && unlabeled.len() < b_u {
            return Err(Error::InvalidConfig(format!(
                "{} unlabeled samples cannot fill a batch of {}",
                unlabeled.len(),
                b_u
            )));
        }
        let targets = labeled.one_hot();
        let mut labeled_batches = EpochBatcher::new(labeled.len(), cfg.batch_labeled);
        let mut unlabeled_batches = EpochBatcher::new(unlabeled.len(), b_u);
        let empty = Array2::<T>::zeros((0, labeled.dim()));

        let mut log = Vec::with_capacity(cfg.iterations);
        for it in 0..cfg.iterations {
            let li = labeled_batches.next_batch(rng);
            let xl = labeled.x.select(Axis(0), &li);
            let pl = targets.select(Axis(0), &li);
            let xu = if use_unlabeled {
                let ui = unlabeled_batches.next_batch(rng);
                unlabeled.x.select(Axis(0), &ui)
            } else {
                empty.clone()
            };
            let mut report = self.train_step(state, xl.view(), pl.view(), xu.view(), it, rng)?;
            let due =
                it + 1 == cfg.iterations || (cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0);
            if let (Some(eval), true) = (eval, due) {
                let (err, cal) = evaluate_ema(state, eval)?;
                report.eval_error = Some(err);
                report.eval_ece = Some(cal.ece);
            }
            log.push(report);
        }
        Ok(log)
    }
}

/// Plain augmented supervised training: shuffle partners within the batch,
/// interpolate, minimize the mean cross-entropy.
pub fn supervised_step<T: Scalar, R: Rng + ?Sized>(
    state: &mut NetState<T>,
    x: ArrayView2<T>,
    p: ArrayView2<T>,
    augmentor: &Augmentor<T>,
    learn_rate: T,
    rng: &mut R,
) -> Result<T> {
    let pool = build_mixed_pool(x, p, &[], &[], augmentor, rng)?;
    let n = pool.x.nrows();
    let weights = Array1::from_elem(n, T::one() / T::of(n as f64));
    state.backward_and_step(pool.x.view(), pool.p.view(), weights.view(), learn_rate)
}

/// Draws fixed-size batches from reshuffled epochs, dropping the remainder.
#[derive(Debug, Clone)]
pub struct EpochBatcher {
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
}

impl EpochBatcher {
    pub fn new(len: usize, batch: usize) -> Self {
        Self {
            order: (0..len).collect(),
            cursor: len,
            batch,
        }
    }

    pub fn next_batch<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<usize> {
        if self.cursor + self.batch > self.order.len() {
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let out = self.order[self.cursor..self.cursor + self.batch].to_vec();
        self.cursor += self.batch;
        out
    }
}
