//! Random-forest regression with impurity importance, used to pick input
//! variables.
//!
//! Splits maximise the reduction in summed squared error over thresholds at
//! midpoints of consecutive distinct values. Ties go to the lower feature
//! index, then the lower threshold.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView1};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestHyperparams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Candidate features per split; `None` means ⌈d/3⌉.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestHyperparams {
    fn default() -> Self {
        ForestHyperparams {
            n_trees: 200,
            max_depth: 12,
            min_samples_leaf: 5,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestHyperparams {
    pub fn features_per_split_for(&self, d: usize) -> usize {
        self.features_per_split.unwrap_or(d.div_ceil(3))
    }

    fn validate(&self, d: usize) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(Error::InvalidArgument(
                "n_trees, max_depth and min_samples_leaf must be positive".into(),
            ));
        }
        let m = self.features_per_split_for(d);
        if m == 0 || m > d {
            return Err(Error::InvalidArgument(format!(
                "features_per_split {m} must be in 1..={d}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
        n_samples: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        n_samples: usize,
        /// Drop in summed squared error achieved by this split.
        impurity_decrease: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict_row(&self, row: ArrayView1<f64>) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn is_single_leaf(&self) -> bool {
        self.nodes.len() == 1 && matches!(self.nodes[0], Node::Leaf { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<RegressionTree>,
    pub hyperparams: ForestHyperparams,
    pub feature_ids: Vec<String>,
}

struct Grower<'a> {
    x: &'a Array2<f64>,
    y: &'a [f64],
    hp: &'a ForestHyperparams,
    n_candidates: usize,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Grower<'_> {
    fn grow(&self, rng: &mut ChaCha8Rng, samples: Vec<usize>) -> RegressionTree {
        let mut nodes = Vec::new();
        // (node slot, samples, depth)
        let mut stack = vec![(0usize, samples, 0usize)];
        nodes.push(Node::Leaf {
            value: 0.0,
            n_samples: 0,
        });
        while let Some((slot, idx, depth)) = stack.pop() {
            let n = idx.len();
            let sum: f64 = idx.iter().map(|&i| self.y[i]).sum();
            let mean = sum / n as f64;
            let split = if depth < self.hp.max_depth && n >= 2 * self.hp.min_samples_leaf {
                self.best_split(rng, &idx, sum)
            } else {
                None
            };
            match split {
                None => {
                    nodes[slot] = Node::Leaf {
                        value: mean,
                        n_samples: n,
                    }
                }
                Some(best) => {
                    let (l, r): (Vec<usize>, Vec<usize>) = idx
                        .iter()
                        .partition(|&&i| self.x[[i, best.feature]] <= best.threshold);
                    let left = nodes.len();
                    let right = left + 1;
                    for _ in 0..2 {
                        nodes.push(Node::Leaf {
                            value: 0.0,
                            n_samples: 0,
                        });
                    }
                    nodes[slot] = Node::Split {
                        feature: best.feature,
                        threshold: best.threshold,
                        left,
                        right,
                        n_samples: n,
                        impurity_decrease: best.gain,
                    };
                    // right pushed first so the left subtree is expanded first
                    stack.push((right, r, depth + 1));
                    stack.push((left, l, depth + 1));
                }
            }
        }
        RegressionTree { nodes }
    }

    fn best_split(&self, rng: &mut ChaCha8Rng, idx: &[usize], sum: f64) -> Option<BestSplit> {
        let d = self.x.ncols();
        let mut candidates = index::sample(rng, d, self.n_candidates).into_vec();
        candidates.sort_unstable();

        let (ymin, ymax) = idx
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                (lo.min(self.y[i]), hi.max(self.y[i]))
            });
        if ymin == ymax {
            return None;
        }

        let n = idx.len();
        let min_leaf = self.hp.min_samples_leaf;
        let sse_parent: f64 = {
            let mean = sum / n as f64;
            idx.iter().map(|&i| (self.y[i] - mean).powi(2)).sum()
        };
        let base = sum * sum / n as f64;
        let tol = 1e-12 * sse_parent;
        let mut best: Option<BestSplit> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
        for &f in &candidates {
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (self.x[[i, f]], self.y[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += pairs[k].1;
                let n_left = k + 1;
                let n_right = n - n_left;
                if n_left < min_leaf {
                    continue;
                }
                if n_right < min_leaf {
                    break;
                }
                if pairs[k].0 == pairs[k + 1].0 {
                    continue;
                }
                let right_sum = sum - left_sum;
                let gain = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / n_right as f64
                    - base;
                if gain > tol && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold: 0.5 * (pairs[k].0 + pairs[k + 1].0),
                        gain,
                    });
                }
            }
        }
        best
    }
}

/// Grow a regression forest. Tree `t` draws from a ChaCha8 stream `t` keyed
/// by the hyperparameter seed, so the result is independent of thread count.
pub fn train_forest(
    x: &Array2<f64>,
    y: &[f64],
    feature_ids: &[String],
    hp: &ForestHyperparams,
) -> Result<Forest> {
    let (rows, d) = x.dim();
    if rows != y.len() {
        return Err(Error::DimensionMismatch {
            expected: rows,
            got: y.len(),
        });
    }
    if feature_ids.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: feature_ids.len(),
        });
    }
    hp.validate(d)?;
    if rows < 2 * hp.min_samples_leaf || rows < 2 {
        return Err(Error::InsufficientData(format!(
            "forest needs at least {} rows, got {rows}",
            2 * hp.min_samples_leaf
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("forest training data".into()));
    }
    let grower = Grower {
        x,
        y,
        hp,
        n_candidates: hp.features_per_split_for(d),
    };
    let trees = (0..hp.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
            rng.set_stream(t as u64);
            let samples = if hp.bootstrap {
                (0..rows).map(|_| rng.random_range(0..rows)).collect()
            } else {
                (0..rows).collect()
            };
            grower.grow(&mut rng, samples)
        })
        .collect();
    Ok(Forest {
        trees,
        hyperparams: hp.clone(),
        feature_ids: feature_ids.to_vec(),
    })
}

impl Forest {
    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.feature_ids.len() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_ids.len(),
                got: x.ncols(),
            });
        }
        Ok(x.rows()
            .into_iter()
            .map(|row| {
                self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    pub feature_ids: Vec<String>,
    pub importances: Vec<f64>,
}

impl ImportanceVector {
    pub fn new(feature_ids: Vec<String>, importances: Vec<f64>) -> Result<Self> {
        if feature_ids.len() != importances.len() {
            return Err(Error::DimensionMismatch {
                expected: feature_ids.len(),
                got: importances.len(),
            });
        }
        if importances.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "importances must be finite and >= 0".into(),
            ));
        }
        Ok(ImportanceVector {
            feature_ids,
            importances,
        })
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.feature_ids
            .iter()
            .position(|f| f == id)
            .map(|i| self.importances[i])
    }

    /// (id, importance) sorted by importance descending, then id.
    pub fn ranking(&self) -> Vec<(String, f64)> {
        let mut r: Vec<(String, f64)> = self
            .feature_ids
            .iter()
            .cloned()
            .zip(self.importances.iter().copied())
            .collect();
        r.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        r
    }

    fn normalized(mut self) -> Self {
        let total: f64 = self.importances.iter().sum();
        if total > 0.0 {
            self.importances.iter_mut().for_each(|v| *v /= total);
        }
        self
    }
}

/// Impurity importance: per-feature total SSE decrease, averaged over trees
/// and normalised to sum to one (all zeros when no tree split).
pub fn forest_importance(forest: &Forest) -> ImportanceVector {
    let d = forest.feature_ids.len();
    let mut total = vec![0.0; d];
    for tree in &forest.trees {
        for node in &tree.nodes {
            if let Node::Split {
                feature,
                impurity_decrease,
                ..
            } = node
            {
                total[*feature] += impurity_decrease;
            }
        }
    }
    let n = forest.trees.len() as f64;
    total.iter_mut().for_each(|v| *v /= n);
    ImportanceVector {
        feature_ids: forest.feature_ids.clone(),
        importances: total,
    }
    .normalized()
}

/// Element-wise mean across basins, re-normalised.
pub fn average_importance(per_basin: &[ImportanceVector]) -> Result<ImportanceVector> {
    let first = per_basin
        .first()
        .ok_or_else(|| Error::Empty("importance vectors".into()))?;
    let mut acc = vec![0.0; first.feature_ids.len()];
    for v in per_basin {
        if v.feature_ids != first.feature_ids {
            return Err(Error::InvalidArgument(
                "importance vectors have different feature ids".into(),
            ));
        }
        for (a, b) in acc.iter_mut().zip(&v.importances) {
            *a += b;
        }
    }
    let n = per_basin.len() as f64;
    acc.iter_mut().for_each(|v| *v /= n);
    Ok(ImportanceVector {
        feature_ids: first.feature_ids.clone(),
        importances: acc,
    }
    .normalized())
}

/// Union of the top-`k` features of two importance vectors, ordered by the
/// larger of each feature's two importances (descending), ties by id.
pub fn select_features(
    imp_swe: &ImportanceVector,
    imp_q: &ImportanceVector,
    k: usize,
) -> Result<Vec<String>> {
    let d = imp_swe.feature_ids.len().min(imp_q.feature_ids.len());
    if k == 0 || k > d {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..={d}"
        )));
    }
    let mut chosen: Vec<(String, f64)> = Vec::new();
    for v in [imp_swe, imp_q] {
        for (id, _) in v.ranking().into_iter().take(k) {
            if !chosen.iter().any(|(c, _)| *c == id) {
                let score = imp_swe
                    .get(&id)
                    .unwrap_or(0.0)
                    .max(imp_q.get(&id).unwrap_or(0.0));
                chosen.push((id, score));
            }
        }
    }
    chosen.sort_by(|a, b| match b.1.total_cmp(&a.1) {
        Ordering::Equal => a.0.cmp(&b.0),
        o => o,
    });
    Ok(chosen.into_iter().map(|(id, _)| id).collect())
}

/// Per-target rankings plus the selected union.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub k: usize,
    pub swe: ImportanceVector,
    pub discharge: ImportanceVector,
    pub selected: Vec<String>,
}

impl SelectionReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, v) in [("swe", &self.swe), ("discharge", &self.discharge)] {
            out.push_str(&format!("[{name}]\n"));
            for (rank, (id, imp)) in v.ranking().iter().enumerate() {
                out.push_str(&format!("{:>2} {:<10} {:.6}\n", rank + 1, id, imp));
            }
            out.push('\n');
        }
        out.push_str(&format!("[selected top-{} union]\n", self.k));
        out.push_str(&self.selected.join(","));
        out.push('\n');
        out
    }

    /// Recover the selected list from a report written by [`Self::to_text`].
    pub fn parse_selected(text: &str) -> Result<Vec<String>> {
        let mut lines = text.lines();
        while let Some(l) = lines.next() {
            if l.starts_with("[selected") {
                let sel = lines.next().unwrap_or("").trim();
                if sel.is_empty() {
                    break;
                }
                return Ok(sel.split(',').map(|s| s.trim().to_string()).collect());
            }
        }
        Err(Error::Parse("feature report has no selected set".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn planted(seed: u64, rows: usize, d: usize) -> (Array2<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((rows, d), |_| rng.random_range(-1.0..1.0));
        let y = x.column(0).to_vec();
        (x, y)
    }

    fn r2(y: &[f64], pred: &[f64]) -> f64 {
        let m = y.iter().sum::<f64>() / y.len() as f64;
        let ss_tot: f64 = y.iter().map(|v| (v - m).powi(2)).sum();
        let ss_res: f64 = y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
        1.0 - ss_res / ss_tot
    }

    #[test]
    fn planted_feature_fit_and_importance() {
        let (x, y) = planted(1, 200, 5);
        let hp = ForestHyperparams {
            n_trees: 50,
            seed: 3,
            ..Default::default()
        };
        let f = train_forest(&x, &y, &ids(&["a", "b", "c", "d", "e"]), &hp).unwrap();
        let pred = f.predict(&x).unwrap();
        assert!(r2(&y, &pred) > 0.95);
        let imp = forest_importance(&f);
        assert!(imp.importances[0] > 0.8, "{:?}", imp.importances);
        assert!((imp.importances.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_target_gives_single_leaves() {
        let (x, _) = planted(2, 60, 3);
        let y = vec![3.7; 60];
        let f = train_forest(
            &x,
            &y,
            &ids(&["a", "b", "c"]),
            &ForestHyperparams {
                n_trees: 10,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(f.trees.iter().all(|t| t.is_single_leaf()));
        assert!(forest_importance(&f).importances.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_same_forest() {
        let (x, y) = planted(4, 100, 4);
        let hp = ForestHyperparams {
            n_trees: 20,
            seed: 99,
            ..Default::default()
        };
        let names = ids(&["a", "b", "c", "d"]);
        assert_eq!(
            train_forest(&x, &y, &names, &hp).unwrap(),
            train_forest(&x, &y, &names, &hp).unwrap()
        );
    }

    #[test]
    fn thresholds_within_training_range() {
        let (x, y) = planted(5, 120, 3);
        let f = train_forest(
            &x,
            &y,
            &ids(&["a", "b", "c"]),
            &ForestHyperparams {
                n_trees: 10,
                ..Default::default()
            },
        )
        .unwrap();
        for t in &f.trees {
            for n in &t.nodes {
                if let Node::Split {
                    feature, threshold, ..
                } = n
                {
                    let col = x.column(*feature);
                    let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    assert!(*threshold >= lo && *threshold <= hi);
                }
            }
        }
    }

    #[test]
    fn forest_input_errors() {
        let (x, y) = planted(6, 20, 2);
        let names = ids(&["a", "b"]);
        assert!(matches!(
            train_forest(&x, &y[..19], &names, &ForestHyperparams::default()),
            Err(Error::DimensionMismatch { .. })
        ));
        let (x, y) = planted(6, 8, 2);
        assert!(matches!(
            train_forest(&x, &y, &names, &ForestHyperparams::default()),
            Err(Error::InsufficientData(_))
        ));
        let (x, y) = planted(6, 20, 2);
        let hp = ForestHyperparams {
            features_per_split: Some(3),
            ..Default::default()
        };
        assert!(train_forest(&x, &y, &names, &hp).is_err());
    }

    #[test]
    fn averaging() {
        let a = ImportanceVector::new(ids(&["x", "y"]), vec![1.0, 0.0]).unwrap();
        let b = ImportanceVector::new(ids(&["x", "y"]), vec![0.0, 1.0]).unwrap();
        assert_eq!(
            average_importance(&[a.clone(), b]).unwrap().importances,
            vec![0.5, 0.5]
        );
        assert_eq!(average_importance(&[a.clone(), a.clone()]).unwrap(), a);
        assert!(average_importance(&[]).is_err());
        let c = ImportanceVector::new(ids(&["y", "x"]), vec![1.0, 0.0]).unwrap();
        assert!(average_importance(&[a, c]).is_err());
    }

    #[test]
    fn selection_union_examples() {
        let names = ids(&["A", "B", "C", "D"]);
        let v = ImportanceVector::new(names.clone(), vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        assert_eq!(select_features(&v, &v, 2).unwrap(), ids(&["A", "B"]));
        assert_eq!(select_features(&v, &v, 4).unwrap().len(), 4);
        assert!(select_features(&v, &v, 0).is_err());
        assert!(select_features(&v, &v, 5).is_err());
    }

    #[test]
    fn selection_ties_are_lexicographic() {
        let v = ImportanceVector::new(ids(&["B", "A", "C"]), vec![0.4, 0.4, 0.2]).unwrap();
        assert_eq!(select_features(&v, &v, 1).unwrap(), ids(&["A"]));
    }

    #[test]
    fn report_round_trip() {
        let v = ImportanceVector::new(ids(&["A", "B"]), vec![0.7, 0.3]).unwrap();
        let r = SelectionReport {
            k: 1,
            swe: v.clone(),
            discharge: v,
            selected: ids(&["A"]),
        };
        assert_eq!(
            SelectionReport::parse_selected(&r.to_text()).unwrap(),
            ids(&["A"])
        );
    }
}
