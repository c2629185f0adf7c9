use memg_core::classify::{evaluate, predict, predict_labels, split_frames, train, ForestConfig, Node, TrainedForest};
use memg_core::features::{standardize, Feature, FeatureMatrix};
use memg_core::synth::feature_corpus;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn matrix(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> FeatureMatrix {
    let d = rows[0].len();
    let n = rows.len();
    FeatureMatrix {
        columns: Feature::ALL.into_iter().filter(|f| *f != Feature::Mu).take(d).collect(),
        rows,
        labels,
        frames: (0..n).collect(),
        scaling: None,
    }
}

fn gaussian_classes(seed: u64, n: usize, separation: f64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let mut rows = vec![];
    let mut labels = vec![];
    for i in 0..n {
        let y = i % 2;
        let shift = separation * y as f64;
        rows.push(vec![unit.sample(&mut rng) + shift, unit.sample(&mut rng)]);
        labels.push(y);
    }
    matrix(rows, labels)
}

#[test]
fn headline_features_classify_the_corpus_perfectly() {
    for seed in 0..10 {
        let records = feature_corpus(seed, 21);
        for columns in [&Feature::HEADLINE[..], &[Feature::Sigma, Feature::Eta, Feature::Conf, Feature::Alpha]] {
            let all = FeatureMatrix::from_records(&records, columns);
            let (tr, te) = split_frames(&all, 0.7, seed).unwrap();
            let tr = standardize(&tr).unwrap();
            let te = te.scaled_with(tr.scaling.as_ref().unwrap()).unwrap();
            let forest = train(&tr, &ForestConfig { seed, ..ForestConfig::default() }).unwrap();
            let e = evaluate(&predict_labels(&forest, &te.rows).unwrap(), &te.labels).unwrap();
            assert_eq!(e.f1, 1.0, "seed {seed}");
            assert_eq!((e.confusion[0][1], e.confusion[1][0]), (0, 0));
        }
    }
}

#[test]
fn noise_features_give_chance_oob_accuracy() {
    let mut total = 0.0;
    let runs = 20;
    for seed in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let rows = (0..200).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let labels = (0..200).map(|i| i % 2).collect();
        let cfg = ForestConfig {
            max_depth: 1,
            seed,
            ..ForestConfig::default()
        };
        total += train(&matrix(rows, labels), &cfg).unwrap().oob_accuracy.unwrap();
    }
    let mean = total / runs as f64;
    assert!((mean - 0.5).abs() < 0.1, "{mean}");
}

#[test]
fn duplicating_rows_changes_nothing_without_bootstrap() {
    let m = gaussian_classes(3, 60, 1.0);
    let mut twice = m.clone();
    twice.rows.extend(m.rows.clone());
    twice.labels.extend(m.labels.clone());
    twice.frames.extend(m.frames.iter().map(|f| f + 60));
    let cfg = ForestConfig {
        bootstrap: false,
        features_per_split: Some(1),
        ..ForestConfig::default()
    };
    let a = train(&m, &cfg).unwrap();
    let b = train(&twice, &cfg).unwrap();
    assert_eq!(predict(&a, &m.rows).unwrap(), predict(&b, &m.rows).unwrap());
}

#[test]
fn identical_stumps_vote_like_one_stump() {
    let m = gaussian_classes(4, 50, 2.0);
    let cfg = ForestConfig {
        bootstrap: false,
        max_depth: 1,
        features_per_split: Some(2),
        ..ForestConfig::default()
    };
    let forest = train(&m, &cfg).unwrap();
    assert!(forest.trees.windows(2).all(|w| w[0] == w[1]));
    let stump = &forest.trees[0];
    for p in predict(&forest, &m.rows).unwrap().iter().zip(&m.rows) {
        assert_eq!(p.0.label, stump.predict(p.1));
        assert_eq!(p.0.votes.iter().sum::<f64>(), 1.0);
    }
}

#[test]
fn deep_forest_reproduces_training_labels() {
    let m = gaussian_classes(5, 80, 0.5);
    let cfg = ForestConfig {
        bootstrap: false,
        max_depth: 64,
        features_per_split: Some(2),
        ..ForestConfig::default()
    };
    let forest = train(&m, &cfg).unwrap();
    assert_eq!(predict_labels(&forest, &m.rows).unwrap(), m.labels);
}

#[test]
fn constant_feature_has_no_importance() {
    let mut m = gaussian_classes(6, 80, 1.0);
    for r in &mut m.rows {
        r.push(7.0);
    }
    m.columns.push(Feature::Freq);
    for seed in 0..5 {
        let f = train(&m, &ForestConfig { seed, ..ForestConfig::default() }).unwrap();
        assert_eq!(f.feature_importances[2], 0.0);
        assert!(f.feature_importances.iter().all(|v| *v >= 0.0));
        assert!((f.feature_importances.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn training_is_bit_reproducible() {
    let m = FeatureMatrix::from_records(&feature_corpus(9, 21), &Feature::HEADLINE);
    let cfg = ForestConfig { seed: 9, ..ForestConfig::default() };
    let a = train(&m, &cfg).unwrap();
    let b = train(&m, &cfg).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert_eq!(TrainedForest::from_json(&a.to_json().unwrap()).unwrap(), a);
}

#[test]
fn held_out_f1_grows_with_separation() {
    let levels = [0.0, 1.25, 2.5, 3.75, 5.0];
    let mut medians = vec![];
    for sep in levels {
        let mut f1: Vec<f64> = (0..10)
            .map(|seed| {
                let all = gaussian_classes(1000 + seed, 120, sep);
                let (tr, te) = split_frames(&all, 0.7, seed).unwrap();
                let forest = train(&tr, &ForestConfig { seed, ..ForestConfig::default() }).unwrap();
                evaluate(&predict_labels(&forest, &te.rows).unwrap(), &te.labels).unwrap().f1
            })
            .collect();
        f1.sort_by(f64::total_cmp);
        medians.push(0.5 * (f1[4] + f1[5]));
    }
    assert!(medians.windows(2).all(|w| w[1] >= w[0]), "{medians:?}");
}

/// Reference tree: every feature, every midpoint of distinct values, lowest
/// weighted Gini wins, earlier candidates win ties.
enum Brute {
    Leaf(usize),
    Split(usize, f64, Box<Brute>, Box<Brute>),
}

fn majority(labels: &[usize]) -> usize {
    let ones = labels.iter().filter(|l| **l == 1).count();
    usize::from(2 * ones > labels.len())
}

fn gini(labels: &[usize]) -> f64 {
    let p = labels.iter().filter(|l| **l == 1).count() as f64 / labels.len() as f64;
    1.0 - p * p - (1.0 - p) * (1.0 - p)
}

fn brute(rows: &[Vec<f64>], labels: &[usize], depth: usize) -> Brute {
    if depth == 0 || gini(labels) == 0.0 {
        return Brute::Leaf(majority(labels));
    }
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..rows[0].len() {
        let mut values: Vec<f64> = rows.iter().map(|r| r[f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let t = w[0] + 0.5 * (w[1] - w[0]);
            let (l, r): (Vec<usize>, Vec<usize>) = (0..rows.len()).partition(|i| rows[*i][f] <= t);
            let ly: Vec<usize> = l.iter().map(|i| labels[*i]).collect();
            let ry: Vec<usize> = r.iter().map(|i| labels[*i]).collect();
            let score = (ly.len() as f64 * gini(&ly) + ry.len() as f64 * gini(&ry)) / rows.len() as f64;
            if best.is_none_or(|b| score < b.0 - 1e-12) {
                best = Some((score, f, t));
            }
        }
    }
    let Some((_, f, t)) = best else {
        return Brute::Leaf(majority(labels));
    };
    let (l, r): (Vec<usize>, Vec<usize>) = (0..rows.len()).partition(|i| rows[*i][f] <= t);
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<usize>) {
        (idx.iter().map(|i| rows[*i].clone()).collect(), idx.iter().map(|i| labels[*i]).collect())
    };
    let (lr, ly) = pick(&l);
    let (rr, ry) = pick(&r);
    Brute::Split(f, t, Box::new(brute(&lr, &ly, depth - 1)), Box::new(brute(&rr, &ry, depth - 1)))
}

fn brute_predict(tree: &Brute, row: &[f64]) -> usize {
    match tree {
        Brute::Leaf(c) => *c,
        Brute::Split(f, t, l, r) => brute_predict(if row[*f] <= *t { l } else { r }, row),
    }
}

#[test]
fn single_tree_matches_reference_and_ignores_monotone_transforms() {
    let transform = |r: &Vec<f64>| vec![r[0].exp(), r[1].powi(3) + 2.0 * r[1]];
    for seed in 0..10 {
        let m = gaussian_classes(50 + seed, 24, 1.0);
        let test = gaussian_classes(70 + seed, 30, 1.0);
        let cfg = ForestConfig {
            n_trees: 1,
            max_depth: 3,
            bootstrap: false,
            features_per_split: Some(2),
            seed,
            ..ForestConfig::default()
        };
        let forest = train(&m, &cfg).unwrap();
        let reference = brute(&m.rows, &m.labels, 3);
        let got = predict_labels(&forest, &test.rows).unwrap();
        let want: Vec<usize> = test.rows.iter().map(|r| brute_predict(&reference, r)).collect();
        assert_eq!(got, want, "seed {seed}");

        // midpoints move under the transform, so only the induced partition
        // of the training rows is invariant
        let mut moved = m.clone();
        moved.rows = m.rows.iter().map(transform).collect();
        let forest2 = train(&moved, &cfg).unwrap();
        let shape = |f: &TrainedForest| -> Vec<(Option<usize>, Vec<usize>)> {
            f.trees[0]
                .nodes
                .iter()
                .map(|n| match n {
                    Node::Split { feature, .. } => (Some(*feature), vec![]),
                    Node::Leaf { counts } => (None, counts.clone()),
                })
                .collect()
        };
        assert_eq!(shape(&forest2), shape(&forest), "seed {seed}");
        assert_eq!(
            predict_labels(&forest2, &moved.rows).unwrap(),
            predict_labels(&forest, &m.rows).unwrap()
        );
    }
}
