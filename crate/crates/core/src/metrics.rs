//! Agreement and classification metrics.
//!
//! Conventions that matter for reproducing published numbers:
//! * any 0/0 ratio inside F1 evaluates to 0;
//! * a class absent from both gold and prediction is left out of the macro mean;
//! * Cohen's kappa with chance agreement of exactly 1 is 1.0 when observed
//!   agreement is also 1 and 0.0 otherwise.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cohen's kappa for two aligned binary annotation vectors.
pub fn cohen_kappa(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Metric(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Metric("kappa needs at least one item".into()));
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let pa = a.iter().filter(|x| **x).count() as f64 / n;
    let pb = b.iter().filter(|x| **x).count() as f64 / n;
    let p_o = agree / n;
    let p_e = pa * pb + (1.0 - pa) * (1.0 - pb);
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(if p_o == 1.0 { 1.0 } else { 0.0 });
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Unweighted mean of per-label kappas.
pub fn average_kappa<K>(per_label: &BTreeMap<K, f64>) -> Result<f64> {
    if per_label.is_empty() {
        return Err(Error::Metric("average of an empty kappa map".into()));
    }
    Ok(per_label.values().sum::<f64>() / per_label.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KappaBand {
    BelowModerate,
    Moderate,
    Substantial,
    AlmostPerfect,
}

impl KappaBand {
    pub fn as_str(self) -> &'static str {
        match self {
            KappaBand::BelowModerate => "below moderate",
            KappaBand::Moderate => "moderate",
            KappaBand::Substantial => "substantial",
            KappaBand::AlmostPerfect => "almost perfect",
        }
    }
}

impl fmt::Display for KappaBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn interpret_kappa(kappa: f64) -> Result<KappaBand> {
    if !(-1.0..=1.0).contains(&kappa) || kappa.is_nan() {
        return Err(Error::Metric(format!("kappa {kappa} outside [-1, 1]")));
    }
    Ok(if kappa > 0.80 {
        KappaBand::AlmostPerfect
    } else if kappa > 0.60 {
        KappaBand::Substantial
    } else if kappa > 0.40 {
        KappaBand::Moderate
    } else {
        KappaBand::BelowModerate
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Tally {
    tp: u64,
    fp: u64,
    fn_: u64,
}

impl Tally {
    fn f1(self) -> f64 {
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    }

    fn present(self) -> bool {
        self.tp + self.fp + self.fn_ > 0
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Macro-averaged F1 of `pred` against `gold` over `class_set`.
pub fn macro_f1<T: Ord + Clone + fmt::Debug>(gold: &[T], pred: &[T], class_set: &[T]) -> Result<f64> {
    if gold.len() != pred.len() {
        return Err(Error::Metric(format!("length mismatch: {} vs {}", gold.len(), pred.len())));
    }
    if gold.is_empty() {
        return Err(Error::Metric("macro F1 needs at least one item".into()));
    }
    let index: BTreeMap<&T, usize> = class_set.iter().enumerate().map(|(i, c)| (c, i)).collect();
    let mut tallies = vec![Tally::default(); class_set.len()];
    for (g, p) in gold.iter().zip(pred) {
        let gi = *index
            .get(g)
            .ok_or_else(|| Error::Metric(format!("gold class {g:?} not in class set")))?;
        let pi = *index
            .get(p)
            .ok_or_else(|| Error::Metric(format!("predicted class {p:?} not in class set")))?;
        if gi == pi {
            tallies[gi].tp += 1;
        } else {
            tallies[pi].fp += 1;
            tallies[gi].fn_ += 1;
        }
    }
    mean_present_f1(&tallies)
}

fn mean_present_f1(tallies: &[Tally]) -> Result<f64> {
    let present: Vec<f64> = tallies.iter().filter(|t| t.present()).map(|t| t.f1()).collect();
    if present.is_empty() {
        return Err(Error::Metric("no class occurs in gold or prediction".into()));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// Binary Macro-F1 (mean of the positive-class and negative-class F1).
pub fn binary_macro_f1(gold: &[bool], pred: &[bool]) -> Result<f64> {
    macro_f1(gold, pred, &[true, false])
}

/// Mean of the two Macro-F1 scores obtained by treating each annotator as gold.
pub fn mutual_upper_bound<T: Ord + Clone + fmt::Debug>(a: &[T], b: &[T], class_set: &[T]) -> Result<f64> {
    let ab = macro_f1(a, b, class_set)?;
    let ba = macro_f1(b, a, class_set)?;
    Ok((ab + ba) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineEstimate {
    pub mean: f64,
    /// Standard error of `mean` (sample std of trial scores / sqrt(trials)).
    pub std_error: f64,
    pub trials: usize,
}

const TRIALS_PER_BLOCK: usize = 1024;

/// Monte-Carlo expected Macro-F1 of a predictor that draws labels i.i.d. from
/// the empirical class distribution, scored against the fixed gold dataset.
///
/// Within each gold class the predictions form a multinomial draw, so a trial
/// is simulated from its confusion matrix directly. Trials are split into
/// fixed-size blocks whose RNG stream is derived from `(seed, block)`; the
/// result does not depend on the thread count.
pub fn distribution_baseline<T: Ord>(counts: &BTreeMap<T, u64>, trials: usize, seed: u64) -> Result<BaselineEstimate> {
    if trials == 0 {
        return Err(Error::Metric("baseline needs at least one trial".into()));
    }
    let sizes: Vec<u64> = counts.values().copied().filter(|c| *c > 0).collect();
    let n: u64 = sizes.iter().sum();
    if n == 0 {
        return Err(Error::Metric("baseline needs a non-empty class distribution".into()));
    }
    let probs: Vec<f64> = sizes.iter().map(|c| *c as f64 / n as f64).collect();
    let blocks = trials.div_ceil(TRIALS_PER_BLOCK);

    let sums: Vec<(f64, f64)> = (0..blocks)
        .into_par_iter()
        .map(|block| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(block as u64);
            let start = block * TRIALS_PER_BLOCK;
            let end = (start + TRIALS_PER_BLOCK).min(trials);
            let mut confusion = vec![0u64; sizes.len() * sizes.len()];
            let mut tallies = vec![Tally::default(); sizes.len()];
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in start..end {
                sample_confusion(&sizes, &probs, &mut rng, &mut confusion);
                let k = sizes.len();
                for (c, t) in tallies.iter_mut().enumerate() {
                    let tp = confusion[c * k + c];
                    let predicted: u64 = (0..k).map(|g| confusion[g * k + c]).sum();
                    *t = Tally { tp, fp: predicted - tp, fn_: sizes[c] - tp };
                }
                let score = mean_present_f1(&tallies).expect("gold classes are non-empty");
                s += score;
                s2 += score * score;
            }
            (s, s2)
        })
        .collect();

    let (s, s2) = sums.iter().fold((0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1));
    let t = trials as f64;
    let mean = s / t;
    let var = if trials > 1 { ((s2 - t * mean * mean) / (t - 1.0)).max(0.0) } else { 0.0 };
    Ok(BaselineEstimate { mean, std_error: (var / t).sqrt(), trials })
}

/// Fills `confusion[gold * k + pred]` with one multinomial draw per gold class.
fn sample_confusion(sizes: &[u64], probs: &[f64], rng: &mut ChaCha8Rng, confusion: &mut [u64]) {
    let k = sizes.len();
    for (g, &size) in sizes.iter().enumerate() {
        let mut remaining = size;
        let mut mass = 1.0;
        for (p_idx, &p) in probs.iter().enumerate() {
            let cell = if p_idx == k - 1 || remaining == 0 {
                remaining
            } else {
                let q = (p / mass).clamp(0.0, 1.0);
                Binomial::new(remaining, q).expect("valid binomial").sample(rng)
            };
            confusion[g * k + p_idx] = cell;
            remaining -= cell;
            mass -= p;
        }
    }
}

/// Distinct classes observed across sequences, in sorted order.
pub fn observed_classes<T: Ord + Clone>(seqs: &[&[T]]) -> Vec<T> {
    seqs.iter()
        .flat_map(|s| s.iter().cloned())
        .collect::<BTreeSet<T>>()
        .into_iter()
        .collect()
}
