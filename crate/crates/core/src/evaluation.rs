//! Metrics, naive imputation baselines and a synthetic data generator.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::categorical::argmax;
use crate::error::{Error, Result};
use crate::model::{ModelState, ObservationSet, View, ViewData, ViewKind};
use crate::numerics::sigmoid;

/// Area under the ROC curve as the Mann-Whitney statistic, ties counted half.
pub fn auc_binary(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their midrank
        let midrank = 0.5 * ((i + 1) + (j + 1)) as f64;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let np = n_pos as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// `(1/N) Σ_c N_c AUC_c` with one-vs-rest scores taken from column `c`.
/// Classes absent from `labels` carry zero weight.
pub fn auc_multiclass_balanced(scores: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
    if scores.nrows() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} score rows for {} labels",
            scores.nrows(),
            labels.len()
        )));
    }
    if let Some(&c) = labels.iter().find(|&&c| c >= scores.ncols()) {
        return Err(Error::Domain(format!("class {c} has no score column")));
    }
    let mut present = labels.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::SingleClass);
    }
    let n = labels.len() as f64;
    let mut total = 0.0;
    for c in present {
        let is_c: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let n_c = is_c.iter().filter(|&&b| b).count() as f64;
        let col: Vec<f64> = scores.column(c).iter().copied().collect();
        total += n_c * auc_binary(&col, &is_c)?;
    }
    Ok(total / n)
}

/// Per-label AUC weighted by the number of positives of each label. Labels
/// with a single class in `labels` are skipped.
pub fn auc_multilabel_balanced(scores: &DMatrix<f64>, labels: &DMatrix<f64>) -> Result<f64> {
    if scores.shape() != labels.shape() {
        return Err(Error::ShapeMismatch(
            "score and label matrices differ in shape".into(),
        ));
    }
    let mut total = 0.0;
    let mut weight = 0.0;
    for c in 0..labels.ncols() {
        let l: Vec<bool> = labels.column(c).iter().map(|&v| v > 0.5).collect();
        let s: Vec<f64> = scores.column(c).iter().copied().collect();
        match auc_binary(&s, &l) {
            Ok(a) => {
                let n_pos = l.iter().filter(|&&b| b).count() as f64;
                total += n_pos * a;
                weight += n_pos;
            }
            Err(Error::SingleClass) => {}
            Err(e) => return Err(e),
        }
    }
    if weight == 0.0 {
        return Err(Error::SingleClass);
    }
    Ok(total / weight)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImputeStrategy {
    Mean,
    Median,
    MostFrequent,
}

/// Fills every masked cell with a statistic of the observed cells in its column.
pub fn impute_baseline(
    values: &DMatrix<f64>,
    missing: &DMatrix<bool>,
    strategy: ImputeStrategy,
) -> Result<DMatrix<f64>> {
    if values.shape() != missing.shape() {
        return Err(Error::ShapeMismatch(
            "value and mask matrices differ in shape".into(),
        ));
    }
    let mut out = values.clone();
    for c in 0..values.ncols() {
        let mut observed: Vec<f64> = (0..values.nrows())
            .filter(|&r| !missing[(r, c)])
            .map(|r| values[(r, c)])
            .collect();
        if observed.is_empty() {
            return Err(Error::EmptyColumn(c));
        }
        observed.sort_by(f64::total_cmp);
        let fill = match strategy {
            ImputeStrategy::Mean => observed.iter().sum::<f64>() / observed.len() as f64,
            ImputeStrategy::Median => {
                let h = observed.len() / 2;
                if observed.len() % 2 == 1 {
                    observed[h]
                } else {
                    0.5 * (observed[h - 1] + observed[h])
                }
            }
            ImputeStrategy::MostFrequent => most_frequent(&observed),
        };
        for r in 0..values.nrows() {
            if missing[(r, c)] {
                out[(r, c)] = fill;
            }
        }
    }
    Ok(out)
}

/// Mode of a sorted slice; the smallest value wins ties.
fn most_frequent(sorted: &[f64]) -> f64 {
    let mut best = (sorted[0], 0);
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        if j > best.1 {
            best = (sorted[i], j);
        }
        i += j;
    }
    best.0
}

/// Root mean squared difference over the cells where `mask` is true.
pub fn masked_rmse(a: &DMatrix<f64>, b: &DMatrix<f64>, mask: &DMatrix<bool>) -> f64 {
    let (sum, count) = a
        .iter()
        .zip(b.iter())
        .zip(mask.iter())
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), ((x, y), _)| {
            (s + (x - y) * (x - y), n + 1)
        });
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}

/// `‖X - ⟨Z⟩⟨W⟩ᵀ - 1⟨b⟩‖_F / ‖X‖_F` over the observed cells of real view `m`.
pub fn relative_reconstruction_error(
    state: &ModelState,
    data: &ObservationSet,
    m: usize,
) -> Result<f64> {
    let (values, missing) = match &data.view(m).data {
        ViewData::Real { values, missing } => (values, missing),
        _ => return Err(Error::InvalidData(format!("view {m} is not real-valued"))),
    };
    let recon = state.views[m].reconstruction(&state.z.mean);
    let (mut err, mut norm) = (0.0, 0.0);
    for ((x, y), &miss) in values.iter().zip(recon.iter()).zip(missing.iter()) {
        if !miss {
            err += (x - y) * (x - y);
            norm += x * x;
        }
    }
    Ok((err / norm).sqrt())
}

/// Parameters that generated a synthetic data set.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub z: DMatrix<f64>,
    pub w: Vec<DMatrix<f64>>,
    pub b: Vec<DVector<f64>>,
    /// Sorted indices of the zeroed rows of each `W`.
    pub inactive: Vec<Vec<usize>>,
    /// Noisy Gaussian `X` behind every view, before any label link.
    pub x: Vec<DMatrix<f64>>,
}

/// Samples from the generative model: `Z ~ N(0, I)`, `W_dk ~ N(0, 1)`,
/// `b_d ~ N(0, 1)`, `X = ZWᵀ + 1b + ε` with `ε ~ N(0, 1/noise_tau)`.
///
/// `sparsity` zeroes that fraction of the rows of every real view's `W`.
/// Binary labels are Bernoulli draws with probability `σ(X)`. Categorical
/// labels are the argmax of `X` drawn with unit noise. Views are named
/// `view0`, `view1`, ...
pub fn generate_synthetic(
    n: usize,
    views: &[(ViewKind, usize)],
    k_true: usize,
    noise_tau: f64,
    sparsity: Option<f64>,
    seed: u64,
) -> Result<(ObservationSet, SyntheticTruth)> {
    if let Some(&(_, d)) = views.iter().find(|(_, d)| *d < k_true) {
        return Err(Error::InvalidData(format!(
            "k_true {k_true} exceeds view width {d}"
        )));
    }
    if !(noise_tau > 0.0) {
        return Err(Error::InvalidData("noise_tau must be positive".into()));
    }
    if let Some(s) = sparsity {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::InvalidData(format!("sparsity {s} outside [0, 1]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DMatrix::from_fn(n, k_true, |_, _| StandardNormal.sample(&mut rng));
    let mut truth = SyntheticTruth {
        z,
        w: vec![],
        b: vec![],
        inactive: vec![],
        x: vec![],
    };
    let mut out = Vec::with_capacity(views.len());
    for (m, &(kind, d)) in views.iter().enumerate() {
        let mut w = DMatrix::from_fn(d, k_true, |_, _| StandardNormal.sample(&mut rng));
        let b = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let mut inactive = Vec::new();
        if let (Some(s), ViewKind::Real) = (sparsity, kind) {
            let count = (s * d as f64).round() as usize;
            inactive = sample(&mut rng, d, count).into_vec();
            inactive.sort_unstable();
            for &r in &inactive {
                w.row_mut(r).fill(0.0);
            }
        }
        let tau = if kind == ViewKind::Categorical {
            1.0
        } else {
            noise_tau
        };
        let sd = 1.0 / tau.sqrt();
        let mut x = &truth.z * w.transpose();
        for mut row in x.row_iter_mut() {
            row += b.transpose();
        }
        for v in x.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += sd * e;
        }
        let name = format!("view{m}");
        out.push(match kind {
            ViewKind::Real => View::real(name, x.clone()),
            ViewKind::Binary => {
                let t = x.map(|v| {
                    if rng.random::<f64>() < sigmoid(v) {
                        1.0
                    } else {
                        0.0
                    }
                });
                View::binary(name, t)
            }
            ViewKind::Categorical => {
                let labels = x
                    .row_iter()
                    .map(|r| Some(argmax(r.iter().copied())))
                    .collect();
                View::categorical(name, d, labels)
            }
        });
        truth.w.push(w);
        truth.b.push(b);
        truth.inactive.push(inactive);
        truth.x.push(x);
    }
    Ok((ObservationSet::new(out)?, truth))
}

/// Hides each cell of `values` independently with probability `rate`.
pub fn random_mask(rows: usize, cols: usize, rate: f64, seed: u64) -> DMatrix<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>() < rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{any, prop, prop_assert, prop_assume, proptest};

    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    wins += if si > sj {
                        1.0
                    } else if si == sj {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_examples() {
        assert_eq!(
            auc_binary(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(),
            1.0
        );
        assert_eq!(
            auc_binary(&[0.3; 4], &[false, true, false, true]).unwrap(),
            0.5
        );
        assert_eq!(
            auc_binary(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(),
            0.75
        );
        assert!(matches!(
            auc_binary(&[0.1, 0.2], &[true, true]),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn multiclass_examples() {
        let labels = vec![0, 1, 2, 1, 0, 2];
        let onehot = DMatrix::from_fn(6, 3, |r, c| if labels[r] == c { 1.0 } else { 0.0 });
        assert_eq!(auc_multiclass_balanced(&onehot, &labels).unwrap(), 1.0);
        assert!(matches!(
            auc_multiclass_balanced(&onehot, &[1; 6]),
            Err(Error::SingleClass)
        ));

        // two classes: class-size weighted sum of the two one-vs-rest AUCs
        let scores = DMatrix::from_row_slice(4, 2, &[0.9, 0.1, 0.4, 0.6, 0.35, 0.65, 0.2, 0.8]);
        let labels = [0, 0, 1, 1];
        let a0 = auc_binary(&[0.9, 0.4, 0.35, 0.2], &[true, true, false, false]).unwrap();
        let a1 = auc_binary(&[0.1, 0.6, 0.65, 0.8], &[false, false, true, true]).unwrap();
        assert_abs_diff_eq!(
            auc_multiclass_balanced(&scores, &labels).unwrap(),
            0.5 * a0 + 0.5 * a1,
            epsilon = 1e-15
        );
    }

    #[test]
    fn multiclass_matches_pair_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels: Vec<usize> = (0..20)
            .map(|i| if i < 3 { i } else { rng.random_range(0..3) })
            .collect();
        let scores = DMatrix::from_fn(20, 3, |_, _| (rng.random::<f64>() * 10.0).round() / 10.0);
        let mut expected = 0.0;
        for c in 0..3 {
            let l: Vec<bool> = labels.iter().map(|&x| x == c).collect();
            let s: Vec<f64> = scores.column(c).iter().copied().collect();
            expected += l.iter().filter(|&&b| b).count() as f64 * brute_auc(&s, &l);
        }
        expected /= 20.0;
        assert_abs_diff_eq!(
            auc_multiclass_balanced(&scores, &labels).unwrap(),
            expected,
            epsilon = 1e-14
        );
    }

    #[test]
    fn multiclass_random_scores_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let labels: Vec<usize> = (0..2000).map(|_| rng.random_range(0..4)).collect();
        let scores = DMatrix::from_fn(2000, 4, |_, _| rng.random::<f64>());
        let auc = auc_multiclass_balanced(&scores, &labels).unwrap();
        assert!((auc - 0.5).abs() < 0.05, "{auc}");
    }

    #[test]
    fn multilabel_skips_constant_labels() {
        let labels = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let scores = DMatrix::from_row_slice(4, 2, &[0.9, 0.1, 0.1, 0.2, 0.8, 0.3, 0.2, 0.4]);
        assert_eq!(auc_multilabel_balanced(&scores, &labels).unwrap(), 1.0);
    }

    #[test]
    fn imputation_examples() {
        let v = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 3.0]);
        let m = DMatrix::from_column_slice(3, 1, &[false, true, false]);
        assert_eq!(
            impute_baseline(&v, &m, ImputeStrategy::Mean).unwrap()[(1, 0)],
            2.0
        );
        let v = DMatrix::from_column_slice(4, 1, &[1.0, 1.0, 2.0, 0.0]);
        let m = DMatrix::from_column_slice(4, 1, &[false, false, false, true]);
        assert_eq!(
            impute_baseline(&v, &m, ImputeStrategy::MostFrequent).unwrap()[(3, 0)],
            1.0
        );
        let all = DMatrix::from_element(2, 1, true);
        assert!(matches!(
            impute_baseline(&DMatrix::zeros(2, 1), &all, ImputeStrategy::Mean),
            Err(Error::EmptyColumn(0))
        ));
    }

    #[test]
    fn median_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = DMatrix::from_fn(10, 4, |_, _| rng.random::<f64>());
        let m = DMatrix::from_fn(10, 4, |r, c| (r + c) % 3 == 0);
        let out = impute_baseline(&v, &m, ImputeStrategy::Median).unwrap();
        for c in 0..4 {
            let mut obs: Vec<f64> = (0..10).filter(|&r| !m[(r, c)]).map(|r| v[(r, c)]).collect();
            obs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let k = obs.len();
            let med = if k % 2 == 1 {
                obs[k / 2]
            } else {
                (obs[k / 2 - 1] + obs[k / 2]) / 2.0
            };
            for r in 0..10 {
                assert_eq!(out[(r, c)], if m[(r, c)] { med } else { v[(r, c)] });
            }
        }
    }

    #[test]
    fn generator_noiseless_limit_and_sparsity() {
        let (data, truth) =
            generate_synthetic(50, &[(ViewKind::Real, 10)], 3, 1e12, Some(0.5), 4).unwrap();
        let x = match &data.view(0).data {
            ViewData::Real { values, .. } => values.clone(),
            _ => unreachable!(),
        };
        let mut clean = &truth.z * truth.w[0].transpose();
        for mut row in clean.row_iter_mut() {
            row += truth.b[0].transpose();
        }
        assert!((&x - clean).norm() / x.norm() < 1e-5);
        assert_eq!(truth.inactive[0].len(), 5);
        let zero_rows = (0..10)
            .filter(|&r| truth.w[0].row(r).iter().all(|&v| v == 0.0))
            .count();
        assert_eq!(zero_rows, 5);
        assert!(matches!(
            generate_synthetic(5, &[(ViewKind::Real, 2)], 3, 1.0, None, 0),
            Err(Error::InvalidData(_))
        ));
    }

    #[test]
    fn binary_labels_follow_logistic() {
        let (data, truth) =
            generate_synthetic(10_000, &[(ViewKind::Binary, 10)], 2, 1e12, None, 9).unwrap();
        let t = match &data.view(0).data {
            ViewData::Binary { values, .. } => values.clone(),
            _ => unreachable!(),
        };
        let cells = t.len() as f64;
        let expected = truth.x[0].iter().map(|&x| sigmoid(x)).sum::<f64>() / cells;
        assert!((t.sum() / cells - expected).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn auc_invariant_under_monotone_maps(scores in prop::collection::vec(-5.0f64..5.0, 12), flags in prop::collection::vec(any::<bool>(), 12)) {
            prop_assume!(flags.iter().any(|&b| b) && flags.iter().any(|&b| !b));
            let a = auc_binary(&scores, &flags).unwrap();
            let mapped: Vec<f64> = scores.iter().map(|&s| s.exp() * 3.0 + 1.0).collect();
            prop_assert!((auc_binary(&mapped, &flags).unwrap() - a).abs() < 1e-12);
            prop_assert!((a - brute_auc(&scores, &flags)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
