//! Baseline subset selectors: random, herding, and k-center.
//!
//! Herding and k-center operate on per-item embedding vectors — pooled
//! features of one seeded random extractor shared by both methods — with
//! Euclidean distances and lowest-index tie-breaking, so every selection is
//! deterministic. Selected indices are returned in pick order.

use crate::featnet::{extract_pooled, load_weights, NetworkWeights};
use crate::diffgraph::Tape;
use crate::pcdata::LabeledDataset;
use crate::seeds::{rng_for, PURPOSE_INIT};
use crate::{Error, Result};
use ndarray::{Array1, Array2};

/// Per-class selected item indices into the source dataset, in pick order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionResult {
    per_class: Vec<Vec<usize>>,
}

impl SelectionResult {
    /// Selected dataset indices for each class.
    pub fn per_class(&self) -> &[Vec<usize>] {
        &self.per_class
    }

    /// All selected indices in class order.
    pub fn flatten(&self) -> Vec<usize> {
        self.per_class.iter().flatten().copied().collect()
    }
}

/// Pooled-feature embedding of every item (one row per dataset item).
pub fn pooled_embeddings(ds: &LabeledDataset, net: &NetworkWeights) -> Array2<f64> {
    let mut tape = Tape::new();
    let weights = load_weights(&mut tape, net);
    let mut out = Array2::zeros((ds.len(), net.channels()));
    for (i, (cloud, _)) in ds.items().iter().enumerate() {
        let x = tape.leaf(cloud.points().clone());
        let pooled = extract_pooled(&mut tape, &weights, x);
        out.row_mut(i).assign(&tape.data(pooled).row(0));
    }
    out
}

/// Indices of one class, or the error naming the class when it cannot
/// supply `ppc` items.
fn class_items(ds: &LabeledDataset, class: usize, ppc: usize) -> Result<Vec<usize>> {
    let items = ds.indices_of_class(class);
    if items.len() < ppc {
        return Err(Error::Invalid(format!(
            "class {:?} has {} items but {} are required",
            ds.class_names()[class],
            items.len(),
            ppc
        )));
    }
    Ok(items)
}

/// Uniformly selects `ppc` items per class without replacement.
pub fn select_random(ds: &LabeledDataset, ppc: usize, seed: u64) -> Result<SelectionResult> {
    assert!(ppc >= 1, "ppc must be at least 1");
    let mut per_class = Vec::with_capacity(ds.num_classes());
    for c in 0..ds.num_classes() {
        let items = class_items(ds, c, ppc)?;
        let mut rng = rng_for(seed, &[PURPOSE_INIT, c as u64]);
        let picks = rand::seq::index::sample(&mut rng, items.len(), ppc);
        per_class.push(picks.iter().map(|i| items[i]).collect());
    }
    Ok(SelectionResult { per_class })
}

fn squared_distance(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn class_mean(embeddings: &Array2<f64>, items: &[usize]) -> Array1<f64> {
    let mut mean = Array1::zeros(embeddings.ncols());
    for &i in items {
        mean += &embeddings.row(i);
    }
    mean / items.len() as f64
}

/// Greedy herding: each step adds the item whose inclusion brings the mean
/// of the selected set closest to the class mean; ties pick the lowest
/// dataset index. The first pick is therefore the item closest to the mean.
pub fn select_herding(ds: &LabeledDataset, ppc: usize, embeddings: &Array2<f64>) -> Result<SelectionResult> {
    assert!(ppc >= 1, "ppc must be at least 1");
    assert_eq!(embeddings.nrows(), ds.len(), "one embedding row per dataset item");
    let mut per_class = Vec::with_capacity(ds.num_classes());
    for c in 0..ds.num_classes() {
        let items = class_items(ds, c, ppc)?;
        let mean = class_mean(embeddings, &items);
        let mut selected: Vec<usize> = Vec::with_capacity(ppc);
        let mut running_sum: Array1<f64> = Array1::zeros(embeddings.ncols());
        for step in 0..ppc {
            let mut best: Option<(usize, f64)> = None;
            for &i in &items {
                if selected.contains(&i) {
                    continue;
                }
                let candidate_mean = (&running_sum + &embeddings.row(i)) / (step + 1) as f64;
                let score = squared_distance(&mean, &candidate_mean);
                if best.map_or(true, |(_, s)| score < s) {
                    best = Some((i, score));
                }
            }
            let (pick, _) = best.expect("class has enough items");
            running_sum += &embeddings.row(pick);
            selected.push(pick);
        }
        per_class.push(selected);
    }
    Ok(SelectionResult { per_class })
}

/// Greedy k-center: the first center is the herding first pick (closest to
/// the class mean), each later center maximizes the distance to its nearest
/// already-chosen center; ties pick the lowest dataset index.
pub fn select_kcenter(ds: &LabeledDataset, ppc: usize, embeddings: &Array2<f64>) -> Result<SelectionResult> {
    assert!(ppc >= 1, "ppc must be at least 1");
    assert_eq!(embeddings.nrows(), ds.len(), "one embedding row per dataset item");
    let mut per_class = Vec::with_capacity(ds.num_classes());
    for c in 0..ds.num_classes() {
        let items = class_items(ds, c, ppc)?;
        let mean = class_mean(embeddings, &items);
        let mut best: Option<(usize, f64)> = None;
        for &i in &items {
            let score = squared_distance(&mean, &embeddings.row(i).to_owned());
            if best.map_or(true, |(_, s)| score < s) {
                best = Some((i, score));
            }
        }
        let mut selected = vec![best.expect("class has enough items").0];
        // Squared distance of every item to its nearest selected center.
        let mut nearest: Vec<f64> = items
            .iter()
            .map(|&i| squared_distance(&embeddings.row(i).to_owned(), &embeddings.row(selected[0]).to_owned()))
            .collect();
        for _ in 1..ppc {
            let mut far: Option<(usize, f64)> = None;
            for (k, &i) in items.iter().enumerate() {
                if selected.contains(&i) {
                    continue;
                }
                if far.map_or(true, |(_, s)| nearest[k] > s) {
                    far = Some((k, nearest[k]));
                }
            }
            let (slot, _) = far.expect("class has enough items");
            let pick = items[slot];
            selected.push(pick);
            for (k, &i) in items.iter().enumerate() {
                let d = squared_distance(&embeddings.row(i).to_owned(), &embeddings.row(pick).to_owned());
                if d < nearest[k] {
                    nearest[k] = d;
                }
            }
        }
        per_class.push(selected);
    }
    Ok(SelectionResult { per_class })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featnet::{init_weights, ExtractorConfig};
    use crate::pcdata::PointCloud;
    use ndarray::array;
    use rand::Rng;

    /// Dataset of single-point clouds whose labels follow `labels`; the
    /// geometry is irrelevant for selector tests that provide embeddings.
    fn dataset_with_labels(labels: &[usize]) -> LabeledDataset {
        let num_classes = labels.iter().max().unwrap() + 1;
        let names = (0..num_classes).map(|c| format!("class{c}")).collect();
        let items = labels
            .iter()
            .map(|&l| {
                (PointCloud::new(array![[l as f64, 0.0, 0.0]]).unwrap(), l)
            })
            .collect();
        LabeledDataset::new(items, names).unwrap()
    }

    /// Column vector of 1-D embeddings.
    fn embed_1d(values: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap()
    }

    #[test]
    fn random_selection_returns_each_class_exactly_at_full_budget() {
        let ds = dataset_with_labels(&[0, 1, 0, 1, 0]);
        let sel = select_random(&ds, 2, 7).unwrap();
        let mut class1 = sel.per_class()[1].clone();
        class1.sort_unstable();
        assert_eq!(class1, vec![1, 3], "ppc equal to class size selects every item");
        assert_eq!(sel.per_class()[0].len(), 2);
        for &i in &sel.per_class()[0] {
            assert!([0usize, 2, 4].contains(&i));
        }
    }

    #[test]
    fn random_selection_is_deterministic_in_the_seed() {
        let ds = dataset_with_labels(&[0, 0, 0, 0, 0, 0, 1, 1, 1, 1]);
        let a = select_random(&ds, 3, 42).unwrap();
        let b = select_random(&ds, 3, 42).unwrap();
        let c = select_random(&ds, 3, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c, "different seeds should give a different draw");
    }

    #[test]
    fn random_selection_never_repeats_an_index() {
        let ds = dataset_with_labels(&[0; 20]);
        for seed in 0..50 {
            let sel = select_random(&ds, 8, seed).unwrap();
            let mut picks = sel.per_class()[0].clone();
            picks.sort_unstable();
            picks.dedup();
            assert_eq!(picks.len(), 8, "seed {seed} repeated an index");
        }
    }

    #[test]
    fn random_single_draws_pass_a_chi_square_uniformity_check() {
        // 10000 single-item draws from a 10-item class; χ² over the 10
        // cells must land inside the central 99% band for 9 degrees of
        // freedom: [1.734926, 23.589351].
        let ds = dataset_with_labels(&[0; 10]);
        let mut counts = [0usize; 10];
        for seed in 0..10_000 {
            let sel = select_random(&ds, 1, seed).unwrap();
            counts[sel.per_class()[0][0]] += 1;
        }
        let expected = 1000.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(
            (1.734926..=23.589351).contains(&chi2),
            "chi-square {chi2} outside the 99% band; counts {counts:?}"
        );
    }

    #[test]
    fn undersized_class_errors_name_the_class() {
        let ds = LabeledDataset::new(
            vec![
                (PointCloud::new(array![[0.0, 0.0, 0.0]]).unwrap(), 0),
                (PointCloud::new(array![[1.0, 0.0, 0.0]]).unwrap(), 1),
                (PointCloud::new(array![[2.0, 0.0, 0.0]]).unwrap(), 1),
            ],
            vec!["cone".into(), "torus".into()],
        )
        .unwrap();
        let err = select_random(&ds, 2, 0).unwrap_err();
        assert!(err.to_string().contains("cone"), "error should name the class: {err}");
        let embeddings = embed_1d(&[0.0, 1.0, 2.0]);
        assert!(select_herding(&ds, 2, &embeddings).is_err());
        assert!(select_kcenter(&ds, 2, &embeddings).is_err());
    }

    #[test]
    fn herding_follows_the_worked_one_dimensional_example() {
        // Embeddings {0, 1, 10}: the class mean is 11/3 ≈ 3.667, so the
        // first pick is 1 (distance 2.667); extending with 10 gives running
        // mean 5.5 (distance 1.833), beating 0's 0.5 (distance 3.167).
        let ds = dataset_with_labels(&[0, 0, 0]);
        let sel = select_herding(&ds, 2, &embed_1d(&[0.0, 1.0, 10.0])).unwrap();
        assert_eq!(sel.per_class()[0], vec![1, 2]);
    }

    #[test]
    fn identical_embeddings_select_the_lowest_indices() {
        let ds = dataset_with_labels(&[0; 6]);
        let sel = select_herding(&ds, 3, &embed_1d(&[5.0; 6])).unwrap();
        assert_eq!(sel.per_class()[0], vec![0, 1, 2]);
        let sel = select_kcenter(&ds, 3, &embed_1d(&[5.0; 6])).unwrap();
        assert_eq!(sel.per_class()[0], vec![0, 1, 2]);
    }

    #[test]
    fn herding_at_full_budget_recovers_the_class_mean() {
        let mut rng = rng_for(60, &[1]);
        let labels = [0usize; 7];
        let ds = dataset_with_labels(&labels);
        let embeddings = Array2::from_shape_fn((7, 4), |_| rng.gen::<f64>() * 2.0 - 1.0);
        let sel = select_herding(&ds, 7, &embeddings).unwrap();
        let mean = class_mean(&embeddings, &(0..7).collect::<Vec<_>>());
        let sel_mean = class_mean(&embeddings, &sel.per_class()[0]);
        assert!(squared_distance(&mean, &sel_mean).sqrt() <= 1e-12);
    }

    #[test]
    fn herding_matches_an_exhaustive_greedy_oracle() {
        // Oracle recomputes each candidate mean from scratch instead of
        // maintaining a running sum.
        fn oracle(items: &[usize], embeddings: &Array2<f64>, ppc: usize) -> Vec<usize> {
            let mean = class_mean(embeddings, items);
            let mut selected: Vec<usize> = Vec::new();
            for _ in 0..ppc {
                let mut best: Option<(usize, f64)> = None;
                for &i in items {
                    if selected.contains(&i) {
                        continue;
                    }
                    let mut trial = selected.clone();
                    trial.push(i);
                    let d = squared_distance(&mean, &class_mean(embeddings, &trial));
                    if best.map_or(true, |(_, s)| d < s) {
                        best = Some((i, d));
                    }
                }
                selected.push(best.unwrap().0);
            }
            selected
        }

        let mut rng = rng_for(61, &[1]);
        for trial in 0..20 {
            let n = rng.gen_range(4..10);
            let ppc = rng.gen_range(1..=n.min(4));
            let ds = dataset_with_labels(&vec![0usize; n]);
            let embeddings = Array2::from_shape_fn((n, 3), |_| rng.gen::<f64>() * 4.0 - 2.0);
            let sel = select_herding(&ds, ppc, &embeddings).unwrap();
            let items: Vec<usize> = (0..n).collect();
            assert_eq!(sel.per_class()[0], oracle(&items, &embeddings, ppc), "trial {trial}");
        }
    }

    #[test]
    fn kcenter_follows_the_one_dimensional_examples() {
        let ds = dataset_with_labels(&[0, 0, 0]);
        let sel = select_kcenter(&ds, 2, &embed_1d(&[0.0, 1.0, 10.0])).unwrap();
        assert_eq!(sel.per_class()[0], vec![1, 2], "selects the values {{1, 10}}");

        // Five equally spaced collinear points: middle first, then both
        // endpoints (lower tie first).
        let ds = dataset_with_labels(&[0; 5]);
        let sel = select_kcenter(&ds, 3, &embed_1d(&[0.0, 1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(sel.per_class()[0], vec![2, 0, 4]);
        assert!(sel.per_class()[0].contains(&0) && sel.per_class()[0].contains(&4));
    }

    #[test]
    fn single_budget_selections_agree_between_herding_and_kcenter() {
        let mut rng = rng_for(62, &[1]);
        for _ in 0..20 {
            let n = rng.gen_range(3..12);
            let ds = dataset_with_labels(&vec![0usize; n]);
            let embeddings = Array2::from_shape_fn((n, 3), |_| rng.gen::<f64>() * 2.0 - 1.0);
            let h = select_herding(&ds, 1, &embeddings).unwrap();
            let k = select_kcenter(&ds, 1, &embeddings).unwrap();
            assert_eq!(h, k);
        }
    }

    #[test]
    fn kcenter_coverage_stays_within_twice_the_optimal_radius() {
        fn coverage_radius(items: &[usize], centers: &[usize], embeddings: &Array2<f64>) -> f64 {
            items
                .iter()
                .map(|&i| {
                    centers
                        .iter()
                        .map(|&c| squared_distance(&embeddings.row(i).to_owned(), &embeddings.row(c).to_owned()))
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max)
                .sqrt()
        }

        fn optimal_radius(items: &[usize], ppc: usize, embeddings: &Array2<f64>) -> f64 {
            // Brute force over every size-ppc subset.
            fn subsets(items: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
                if cur.len() == k {
                    out.push(cur.clone());
                    return;
                }
                for i in start..items.len() {
                    cur.push(items[i]);
                    subsets(items, k, i + 1, cur, out);
                    cur.pop();
                }
            }
            let mut all = Vec::new();
            subsets(items, ppc, 0, &mut Vec::new(), &mut all);
            all.iter()
                .map(|centers| coverage_radius(items, centers, embeddings))
                .fold(f64::INFINITY, f64::min)
        }

        let mut rng = rng_for(63, &[1]);
        for trial in 0..10 {
            let n = rng.gen_range(6..=12);
            let ppc = rng.gen_range(2..=3);
            let ds = dataset_with_labels(&vec![0usize; n]);
            let embeddings = Array2::from_shape_fn((n, 2), |_| rng.gen::<f64>() * 2.0 - 1.0);
            let sel = select_kcenter(&ds, ppc, &embeddings).unwrap();
            let items: Vec<usize> = (0..n).collect();
            let greedy = coverage_radius(&items, &sel.per_class()[0], &embeddings);
            let optimal = optimal_radius(&items, ppc, &embeddings);
            assert!(
                greedy <= 2.0 * optimal + 1e-12,
                "trial {trial}: greedy radius {greedy} exceeds twice the optimal {optimal}"
            );
        }
    }

    #[test]
    fn selectors_keep_indices_inside_their_class() {
        let mut rng = rng_for(64, &[1]);
        let labels: Vec<usize> = (0..30).map(|_| rng.gen_range(0..3)).collect();
        let ds = dataset_with_labels(&labels);
        let embeddings = Array2::from_shape_fn((30, 4), |_| rng.gen::<f64>() * 2.0 - 1.0);
        for sel in [
            select_random(&ds, 2, 5).unwrap(),
            select_herding(&ds, 2, &embeddings).unwrap(),
            select_kcenter(&ds, 2, &embeddings).unwrap(),
        ] {
            assert_eq!(sel.per_class().len(), 3);
            for (c, picks) in sel.per_class().iter().enumerate() {
                assert_eq!(picks.len(), 2);
                for &i in picks {
                    assert_eq!(ds.items()[i].1, c, "index {i} belongs to the wrong class");
                }
            }
        }
    }

    #[test]
    fn pooled_embeddings_have_one_row_per_item() {
        let mut rng = rng_for(65, &[1]);
        let items: Vec<(PointCloud, usize)> = (0..4)
            .map(|i| {
                let pts = Array2::from_shape_fn((6, 3), |_| rng.gen::<f64>() * 2.0 - 1.0);
                (PointCloud::new(pts).unwrap(), i % 2)
            })
            .collect();
        let ds = LabeledDataset::new(items, vec!["a".into(), "b".into()]).unwrap();
        let net = init_weights(&ExtractorConfig::new(vec![3, 8, 5]).unwrap(), &mut rng);
        let emb = pooled_embeddings(&ds, &net);
        assert_eq!(emb.dim(), (4, 5));
        // Each row must equal the stand-alone pooled extraction.
        for (i, (cloud, _)) in ds.items().iter().enumerate() {
            let one = crate::featnet::extract_pooled_array(&net, cloud.points());
            assert_eq!(emb.row(i), one.row(0), "row {i} differs from direct extraction");
        }
    }
}
