//! Random forest of Gini-impurity decision trees for echo-vs-clutter labels.
//!
//! Randomness comes from ChaCha8 seeded with [`ForestConfig::seed`]: one
//! master stream draws a seed per tree, and each tree's stream draws its
//! bootstrap sample and then its candidate features node by node, depth first.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MemgError, Result};
use crate::features::{Feature, FeatureMatrix};

pub const FOREST_SCHEMA_VERSION: u32 = 1;

/// Class index of target echoes.
pub const OBJECT: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    /// Candidate features per split; `None` means `ceil(sqrt(D))`.
    pub features_per_split: Option<usize>,
    pub seed: u64,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 10,
            max_depth: 6,
            min_samples_leaf: 1,
            min_samples_split: 2,
            features_per_split: None,
            seed: 0,
            bootstrap: true,
        }
    }
}

impl ForestConfig {
    pub fn candidates(&self, n_features: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
            .clamp(1, n_features.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(MemgError::InvalidInput("n_trees must be >= 1".into()));
        }
        if self.min_samples_leaf == 0 || self.min_samples_split < 2 {
            return Err(MemgError::InvalidInput(
                "need min_samples_leaf >= 1 and min_samples_split >= 2".into(),
            ));
        }
        if self.features_per_split == Some(0) {
            return Err(MemgError::InvalidInput("features_per_split must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go to `left`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { counts: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

/// Index of the largest count, lowest index on ties.
fn argmax(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, c) in counts.iter().enumerate() {
        if *c > counts[best] {
            best = i;
        }
    }
    best
}

impl Tree {
    pub fn leaf_for(&self, row: &[f64]) -> &[usize] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { counts } => return counts,
            }
        }
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        argmax(self.leaf_for(row))
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|c| (*c as f64 / n).powi(2)).sum::<f64>()
}

/// Best split found for a node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    /// Size-weighted Gini impurity of the two children.
    pub impurity: f64,
}

/// Scans `features` in ascending order and every midpoint between distinct
/// sorted values, keeping the lowest weighted child impurity. Ties go to the
/// lower feature index, then the lower threshold.
pub fn best_split(
    x: &[Vec<f64>],
    y: &[usize],
    rows: &[usize],
    features: &[usize],
    n_classes: usize,
    min_leaf: usize,
) -> Option<SplitChoice> {
    const TIE: f64 = 1e-12;
    let n = rows.len();
    let mut total = vec![0usize; n_classes];
    for r in rows {
        total[y[*r]] += 1;
    }
    let mut best: Option<SplitChoice> = None;
    let mut sorted = rows.to_vec();
    for &f in features {
        sorted.sort_by(|a, b| x[*a][f].total_cmp(&x[*b][f]).then(a.cmp(b)));
        let mut left = vec![0usize; n_classes];
        for i in 0..n.saturating_sub(1) {
            left[y[sorted[i]]] += 1;
            let (lo, hi) = (x[sorted[i]][f], x[sorted[i + 1]][f]);
            let nl = i + 1;
            let nr = n - nl;
            if lo == hi || nl < min_leaf || nr < min_leaf {
                continue;
            }
            let right: Vec<usize> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
            let impurity = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
            if best.is_none_or(|b| impurity < b.impurity - TIE) {
                let mid = lo + 0.5 * (hi - lo);
                let threshold = if mid < hi { mid } else { lo };
                best = Some(SplitChoice {
                    feature: f,
                    threshold,
                    impurity,
                });
            }
        }
    }
    best
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    n_total: usize,
    cfg: &'a ForestConfig,
    m: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    importance: Vec<f64>,
}

impl Grower<'_> {
    fn grow(&mut self, rows: &[usize], depth: usize) -> usize {
        let mut counts = vec![0usize; self.n_classes];
        for r in rows {
            counts[self.y[*r]] += 1;
        }
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            counts: counts.clone(),
        });
        let n = rows.len();
        let impure = counts.iter().filter(|c| **c > 0).count() > 1;
        if depth >= self.cfg.max_depth || n < self.cfg.min_samples_split || !impure {
            return id;
        }
        let d = self.x[0].len();
        let mut features = index::sample(&mut self.rng, d, self.m).into_vec();
        features.sort_unstable();
        let Some(split) = best_split(
            self.x,
            self.y,
            rows,
            &features,
            self.n_classes,
            self.cfg.min_samples_leaf,
        ) else {
            return id;
        };
        let parent = gini(&counts, n);
        self.importance[split.feature] +=
            n as f64 / self.n_total as f64 * (parent - split.impurity).max(0.0);
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|i| self.x[**i][split.feature] <= split.threshold);
        let left = self.grow(&l, depth + 1);
        let right = self.grow(&r, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedForest {
    pub schema_version: u32,
    pub config: ForestConfig,
    pub columns: Vec<Feature>,
    pub n_classes: usize,
    pub trees: Vec<Tree>,
    /// Normalized total impurity decrease per feature.
    pub feature_importances: Vec<f64>,
    /// Accuracy of out-of-bag votes, when any row was out of bag.
    pub oob_accuracy: Option<f64>,
}

pub fn train(features: &FeatureMatrix, cfg: &ForestConfig) -> Result<TrainedForest> {
    cfg.validate()?;
    if features.columns.contains(&Feature::Mu) {
        return Err(MemgError::InvalidInput(
            "positional feature mu must not be used for classification".into(),
        ));
    }
    let x = &features.rows;
    let y = &features.labels;
    let d = features.n_features();
    if d == 0 || x.is_empty() {
        return Err(MemgError::InvalidInput("empty training matrix".into()));
    }
    if x.iter().any(|r| r.len() != d) {
        return Err(MemgError::InvalidInput("ragged training matrix".into()));
    }
    let n_classes = y.iter().max().map_or(0, |m| m + 1);
    let mut present = y.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(MemgError::DegenerateTraining);
    }

    let n = x.len();
    let m = cfg.candidates(d);
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trees = Vec::with_capacity(cfg.n_trees);
    let mut importance = vec![0.0; d];
    let mut oob_votes = vec![vec![0usize; n_classes]; n];
    for _ in 0..cfg.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(master.next_u64());
        let rows: Vec<usize> = if cfg.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        let mut grower = Grower {
            x,
            y,
            n_classes,
            n_total: rows.len(),
            cfg,
            m,
            rng,
            nodes: Vec::new(),
            importance: vec![0.0; d],
        };
        grower.grow(&rows, 0);
        let tree = Tree {
            nodes: grower.nodes,
        };
        let s: f64 = grower.importance.iter().sum();
        if s > 0.0 {
            for (acc, v) in importance.iter_mut().zip(&grower.importance) {
                *acc += v / s;
            }
        }
        if cfg.bootstrap {
            let mut in_bag = vec![false; n];
            for r in &rows {
                in_bag[*r] = true;
            }
            for (i, votes) in oob_votes.iter_mut().enumerate() {
                if !in_bag[i] {
                    votes[tree.predict(&x[i])] += 1;
                }
            }
        }
        trees.push(tree);
    }
    let s: f64 = importance.iter().sum();
    if s > 0.0 {
        importance.iter_mut().for_each(|v| *v /= s);
    }
    let voted: Vec<usize> = (0..n).filter(|i| oob_votes[*i].iter().any(|v| *v > 0)).collect();
    let oob_accuracy = (!voted.is_empty()).then(|| {
        voted.iter().filter(|i| argmax(&oob_votes[**i]) == y[**i]).count() as f64
            / voted.len() as f64
    });
    Ok(TrainedForest {
        schema_version: FOREST_SCHEMA_VERSION,
        config: *cfg,
        columns: features.columns.clone(),
        n_classes,
        trees,
        feature_importances: importance,
        oob_accuracy,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: usize,
    /// Fraction of trees voting for each class.
    pub votes: Vec<f64>,
}

/// Majority vote over trees, ties to the lower class index.
pub fn predict(forest: &TrainedForest, rows: &[Vec<f64>]) -> Result<Vec<Prediction>> {
    let d = forest.columns.len();
    rows.iter()
        .map(|row| {
            if row.len() != d {
                return Err(MemgError::Shape {
                    expected: d,
                    actual: row.len(),
                });
            }
            let mut votes = vec![0usize; forest.n_classes];
            for t in &forest.trees {
                votes[t.predict(row)] += 1;
            }
            Ok(Prediction {
                label: argmax(&votes),
                votes: votes
                    .iter()
                    .map(|v| *v as f64 / forest.trees.len() as f64)
                    .collect(),
            })
        })
        .collect()
}

pub fn predict_labels(forest: &TrainedForest, rows: &[Vec<f64>]) -> Result<Vec<usize>> {
    Ok(predict(forest, rows)?.into_iter().map(|p| p.label).collect())
}

impl TrainedForest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| MemgError::InvalidInput("forest document has no schema_version".into()))?;
        if found != u64::from(FOREST_SCHEMA_VERSION) {
            return Err(MemgError::Version {
                found: u32::try_from(found).unwrap_or(u32::MAX),
                expected: FOREST_SCHEMA_VERSION,
            });
        }
        Ok(serde_json::from_value(value)?)
    }
}

/// Binary scores for the object class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub f1: f64,
    /// `None` when nothing was predicted positive.
    pub precision: Option<f64>,
    /// `None` when the ground truth has no positives.
    pub recall: Option<f64>,
    /// Rows are truth, columns prediction: `[[tn, fp], [fn, tp]]`.
    pub confusion: [[usize; 2]; 2],
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub warning: Option<String>,
}

pub fn evaluate(pred: &[usize], truth: &[usize]) -> Result<Evaluation> {
    if pred.len() != truth.len() {
        return Err(MemgError::Shape {
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    let mut confusion = [[0usize; 2]; 2];
    for (p, t) in pred.iter().zip(truth) {
        confusion[(*t == OBJECT) as usize][(*p == OBJECT) as usize] += 1;
    }
    let tp = confusion[1][1] as f64;
    let predicted = (confusion[0][1] + confusion[1][1]) as f64;
    let actual = (confusion[1][0] + confusion[1][1]) as f64;
    let precision = (predicted > 0.0).then(|| tp / predicted);
    let recall = (actual > 0.0).then(|| tp / actual);
    let f1 = if tp > 0.0 {
        2.0 * tp / (predicted + actual)
    } else {
        0.0
    };
    Ok(Evaluation {
        f1,
        precision,
        recall,
        confusion,
        warning: recall.is_none().then(|| MemgError::UndefinedRecall.to_string()),
    })
}

/// Splits rows by frame, stratified by whether a frame holds an object. The
/// test share is `floor(frames * (1 - train_fraction))`, spread over strata
/// by largest remainder.
pub fn split_frames(
    features: &FeatureMatrix,
    train_fraction: f64,
    seed: u64,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(MemgError::Split(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut has_object: BTreeMap<usize, bool> = BTreeMap::new();
    for (f, l) in features.frames.iter().zip(&features.labels) {
        *has_object.entry(*f).or_default() |= *l == OBJECT;
    }
    let n = has_object.len();
    let n_test = (n as f64 * (1.0 - train_fraction) + 1e-9).floor() as usize;
    if n_test == 0 || n_test >= n {
        return Err(MemgError::Split(format!(
            "{n} frames at train fraction {train_fraction} leave an empty partition"
        )));
    }

    let mut strata: [Vec<usize>; 2] = [vec![], vec![]];
    for (f, o) in &has_object {
        strata[*o as usize].push(*f);
    }
    let exact: Vec<f64> = strata
        .iter()
        .map(|s| s.len() as f64 * n_test as f64 / n as f64)
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order = [0usize, 1];
    order.sort_by(|a, b| (exact[*b] - quota[*b] as f64).total_cmp(&(exact[*a] - quota[*a] as f64)).then(a.cmp(b)));
    let mut left = n_test - quota.iter().sum::<usize>();
    for s in order {
        if left > 0 && quota[s] < strata[s].len() {
            quota[s] += 1;
            left -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_frames = Vec::with_capacity(n_test);
    for (s, q) in strata.iter_mut().zip(&quota) {
        let pick = index::sample(&mut rng, s.len(), *q);
        test_frames.extend(pick.into_iter().map(|i| s[i]));
    }
    test_frames.sort_unstable();
    let (test_rows, train_rows): (Vec<usize>, Vec<usize>) = (0..features.len())
        .partition(|i| test_frames.binary_search(&features.frames[*i]).is_ok());
    if test_rows.is_empty() || train_rows.is_empty() {
        return Err(MemgError::Split("a partition received no rows".into()));
    }
    Ok((features.subset(&train_rows), features.subset(&test_rows)))
}
