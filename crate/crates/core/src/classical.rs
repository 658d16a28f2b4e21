//! Bag-of-words / TF-IDF features and a multinomial logistic regression
//! trained by full-batch gradient descent.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::macro_f1;
use crate::rng;

/// Lowercased alphanumeric runs of length two or more.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    Bow,
    TfIdf,
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bow" => Ok(FeatureMode::Bow),
            "tfidf" | "tf-idf" => Ok(FeatureMode::TfIdf),
            _ => Err(Error::InvalidInput(format!("unknown feature mode `{s}`"))),
        }
    }
}

/// Sparse row: (column, value) pairs sorted by column.
pub type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureModel {
    pub mode: FeatureMode,
    pub vocabulary: BTreeMap<String, usize>,
    /// Indexed by column; empty for BoW.
    pub idf: Vec<f64>,
    pub min_df: usize,
}

pub const DEFAULT_MIN_DF: usize = 2;

impl FeatureModel {
    pub fn fit(corpus: &[String], mode: FeatureMode) -> Result<Self> {
        Self::fit_with_min_df(corpus, mode, DEFAULT_MIN_DF)
    }

    pub fn fit_with_min_df(corpus: &[String], mode: FeatureMode, min_df: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::InvalidInput("cannot fit features on an empty corpus".into()));
        }
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for doc in corpus {
            let unique: BTreeSet<String> = tokenize(doc).into_iter().collect();
            for t in unique {
                *df.entry(t).or_default() += 1;
            }
        }
        let kept: Vec<(String, usize)> = df.into_iter().filter(|(_, d)| *d >= min_df).collect();
        if kept.is_empty() {
            return Err(Error::InvalidInput(format!("vocabulary is empty after min_df={min_df} filtering")));
        }
        let n = corpus.len() as f64;
        let mut vocabulary = BTreeMap::new();
        let mut idf = Vec::new();
        for (i, (tok, d)) in kept.into_iter().enumerate() {
            vocabulary.insert(tok, i);
            if mode == FeatureMode::TfIdf {
                idf.push(((1.0 + n) / (1.0 + d as f64)).ln() + 1.0);
            }
        }
        Ok(FeatureModel { mode, vocabulary, idf, min_df })
    }

    pub fn dim(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn transform(&self, text: &str) -> SparseRow {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in tokenize(text) {
            if let Some(&col) = self.vocabulary.get(&t) {
                *counts.entry(col).or_default() += 1.0;
            }
        }
        let mut row: SparseRow = counts.into_iter().collect();
        if self.mode == FeatureMode::TfIdf {
            for (c, v) in row.iter_mut() {
                *v *= self.idf[*c];
            }
            let norm = row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for (_, v) in row.iter_mut() {
                    *v /= norm;
                }
            }
        }
        row
    }

    /// Token for each column.
    pub fn tokens(&self) -> Vec<&str> {
        let mut out = vec![""; self.dim()];
        for (t, &i) in &self.vocabulary {
            out[i] = t;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub lambda: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { lambda: 1.0, max_iter: 500, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// One row per class, `dim + 1` columns; the last column is the bias.
    pub weights: Vec<Vec<f64>>,
    pub classes: Vec<String>,
    pub iterations: usize,
    pub final_loss: f64,
    pub lambda: f64,
}

/// Regularized mean cross-entropy and its gradient at `w`.
///
/// Loss is `(1/n) Σ -log p(y_i | x_i) + (λ/2)‖W‖²` with the bias column
/// excluded from the penalty.
pub fn loss_and_gradient(x: &[SparseRow], y: &[usize], w: &[Vec<f64>], lambda: f64) -> (f64, Vec<Vec<f64>>) {
    let k = w.len();
    let d = w[0].len() - 1;
    let n = x.len() as f64;
    let mut grad = vec![vec![0.0; d + 1]; k];
    let mut loss = 0.0;
    let mut p = vec![0.0; k];
    for (row, &yi) in x.iter().zip(y) {
        for (c, wc) in w.iter().enumerate() {
            p[c] = wc[d] + row.iter().map(|&(j, v)| wc[j] * v).sum::<f64>();
        }
        let max = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = p.iter().map(|s| (s - max).exp()).sum();
        let log_z = max + z.ln();
        loss += log_z - p[yi];
        for c in 0..k {
            let prob = (p[c] - log_z).exp();
            let delta = prob - if c == yi { 1.0 } else { 0.0 };
            for &(j, v) in row {
                grad[c][j] += delta * v;
            }
            grad[c][d] += delta;
        }
    }
    loss /= n;
    for (gc, wc) in grad.iter_mut().zip(w) {
        for g in gc.iter_mut() {
            *g /= n;
        }
        for j in 0..d {
            gc[j] += lambda * wc[j];
            loss += 0.5 * lambda * wc[j] * wc[j];
        }
    }
    (loss, grad)
}

pub fn train_logreg(x: &[SparseRow], y: &[String], dim: usize, params: TrainParams) -> Result<LinearModel> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::InvalidInput("feature rows and labels must be non-empty and aligned".into()));
    }
    let classes: Vec<String> = y.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(Error::InvalidInput("logistic regression needs at least two classes".into()));
    }
    let yi: Vec<usize> = y.iter().map(|c| classes.binary_search(c).expect("class listed")).collect();
    let mut w = vec![vec![0.0; dim + 1]; classes.len()];
    let (mut loss, mut grad) = loss_and_gradient(x, &yi, &w, params.lambda);
    let mut step = 1.0;
    let mut iterations = 0;
    for it in 0..params.max_iter {
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        let gnorm2: f64 = grad.iter().flatten().map(|g| g * g).sum();
        if gnorm2.sqrt() <= params.tol {
            break;
        }
        iterations = it + 1;
        // Armijo backtracking
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<Vec<f64>> = w
                .iter()
                .zip(&grad)
                .map(|(wc, gc)| wc.iter().zip(gc).map(|(a, g)| a - step * g).collect())
                .collect();
            let (cl, cg) = loss_and_gradient(x, &yi, &cand, params.lambda);
            if cl.is_finite() && cl <= loss - 1e-4 * step * gnorm2 {
                w = cand;
                loss = cl;
                grad = cg;
                accepted = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            debug!("line search stalled at iteration {it}");
            break;
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { iteration: iterations });
    }
    Ok(LinearModel { weights: w, classes, iterations, final_loss: loss, lambda: params.lambda })
}

impl LinearModel {
    pub fn scores(&self, row: &SparseRow) -> Vec<f64> {
        let d = self.weights[0].len() - 1;
        self.weights.iter().map(|wc| wc[d] + row.iter().map(|&(j, v)| wc[j] * v).sum::<f64>()).collect()
    }

    /// Highest-scoring class; ties go to the earlier class.
    pub fn predict(&self, row: &SparseRow) -> &str {
        let s = self.scores(row);
        let mut best = 0;
        for (i, v) in s.iter().enumerate() {
            if *v > s[best] {
                best = i;
            }
        }
        &self.classes[best]
    }

    /// Text format: header line, class line, then one whitespace-separated
    /// weight row per class (bias last), floats in round-trip precision.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "humbench-logreg 1 classes={} columns={} lambda={:?} iterations={} loss={:?}",
            self.classes.len(),
            self.weights[0].len(),
            self.lambda,
            self.iterations,
            self.final_loss
        );
        let _ = writeln!(out, "{}", self.classes.join("\t"));
        for row in &self.weights {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty model file".into()))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("humbench-logreg") || fields.next() != Some("1") {
            return Err(Error::Parse("not a humbench-logreg v1 model".into()));
        }
        let kv: BTreeMap<&str, &str> = fields.filter_map(|f| f.split_once('=')).collect();
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::Parse(format!("model header lacks `{k}`")));
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::Parse(format!("bad `{k}`"))) };
        let classes: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Parse("missing class line".into()))?
            .split('\t')
            .map(str::to_string)
            .collect();
        let columns = num("columns")? as usize;
        let mut weights = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| Error::Parse(format!("bad weight `{v}`"))))
                .collect::<Result<_>>()?;
            if row.len() != columns {
                return Err(Error::Parse(format!("expected {columns} weights, found {}", row.len())));
            }
            weights.push(row);
        }
        if weights.len() != classes.len() {
            return Err(Error::Parse("class count does not match weight rows".into()));
        }
        Ok(LinearModel {
            weights,
            classes,
            iterations: num("iterations")? as usize,
            final_loss: num("loss")?,
            lambda: num("lambda")?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_text()).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_text(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopFeatures {
    pub class: String,
    pub positive: Vec<String>,
    pub negative: Vec<String>,
}

pub fn top_features(model: &LinearModel, features: &FeatureModel, class: &str, k: usize) -> Result<TopFeatures> {
    let row = model
        .classes
        .iter()
        .position(|c| c == class)
        .ok_or_else(|| Error::InvalidInput(format!("class `{class}` not in model")))?;
    let dim = features.dim();
    if k > dim {
        return Err(Error::InvalidInput(format!("k={k} exceeds vocabulary size {dim}")));
    }
    let tokens = features.tokens();
    let w = &model.weights[row];
    let mut idx: Vec<usize> = (0..dim).collect();
    idx.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then_with(|| tokens[a].cmp(tokens[b])));
    let positive = idx[..k].iter().map(|&i| tokens[i].to_string()).collect();
    idx.sort_by(|&a, &b| w[a].total_cmp(&w[b]).then_with(|| tokens[a].cmp(tokens[b])));
    let negative = idx[..k].iter().map(|&i| tokens[i].to_string()).collect();
    Ok(TopFeatures { class: class.to_string(), positive, negative })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub folds: Vec<f64>,
    pub mean: f64,
    pub seed: u64,
}

/// Seeded stratified assignment of row indices to `k` folds.
pub fn stratified_folds(labels: &[String], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 || k > labels.len() {
        return Err(Error::InvalidInput(format!("need 2 <= k <= {} folds, got {k}", labels.len())));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = rng::scoped(seed, "cv-folds");
    let mut fold_of = vec![0; labels.len()];
    let mut offset = 0;
    for (class, mut members) in by_class {
        if members.len() < k {
            return Err(Error::InvalidInput(format!(
                "class `{class}` has {} members, fewer than {k} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for (j, i) in members.into_iter().enumerate() {
            fold_of[i] = (j + offset) % k;
        }
        offset += 1;
    }
    Ok(fold_of)
}

pub fn cross_validate(
    texts: &[String],
    labels: &[String],
    mode: FeatureMode,
    k: usize,
    seed: u64,
    params: TrainParams,
) -> Result<CvResult> {
    if texts.len() != labels.len() {
        return Err(Error::InvalidInput("texts and labels differ in length".into()));
    }
    let fold_of = stratified_folds(labels, k, seed)?;
    let folds: Vec<f64> = (0..k)
        .into_par_iter()
        .map(|f| -> Result<f64> {
            let (train, test): (Vec<usize>, Vec<usize>) = (0..texts.len()).partition(|&i| fold_of[i] != f);
            let train_texts: Vec<String> = train.iter().map(|&i| texts[i].clone()).collect();
            let fm = FeatureModel::fit(&train_texts, mode)?;
            let x: Vec<SparseRow> = train_texts.iter().map(|t| fm.transform(t)).collect();
            let y: Vec<String> = train.iter().map(|&i| labels[i].clone()).collect();
            let model = train_logreg(&x, &y, fm.dim(), params)?;
            let gold: Vec<String> = test.iter().map(|&i| labels[i].clone()).collect();
            let pred: Vec<String> =
                test.iter().map(|&i| model.predict(&fm.transform(&texts[i])).to_string()).collect();
            macro_f1(&gold, &pred, &model.classes)
        })
        .collect::<Result<_>>()?;
    let mean = folds.iter().sum::<f64>() / k as f64;
    if mean < 0.2 {
        warn!("cross-validated macro-F1 is {mean:.3}");
    }
    Ok(CvResult { folds, mean, seed })
}
