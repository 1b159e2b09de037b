//! Categorical views under a multinomial probit link.
//!
//! With unit noise, `p(t = i | y) = E_u[Π_{j≠i} Φ(u + y_i - y_j)]` for
//! `u ~ N(0, 1)`, and the pseudo-observation posterior given the label is
//! `N(y, I)` truncated to the cone where component `i` is the largest.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::CategoricalViewState;
use crate::numerics::{std_normal_cdf, std_normal_pdf, QuadratureRule};

/// Normalizers below this are treated as numerically zero.
pub const MIN_NORMALIZER: f64 = 1e-12;

/// `p(t = i | y)` by quadrature over `u`.
pub fn probit_class_prob(y: &[f64], i: usize, rule: &QuadratureRule) -> f64 {
    rule.expect(|u| {
        y.iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &yj)| std_normal_cdf(u + y[i] - yj))
            .product()
    })
}

/// Class probabilities for every class, renormalized to an exact simplex.
pub fn class_probabilities(y: &[f64], rule: &QuadratureRule) -> Vec<f64> {
    let mut p: Vec<f64> = (0..y.len())
        .map(|i| probit_class_prob(y, i, rule))
        .collect();
    let total: f64 = p.iter().sum();
    if total > 0.0 {
        p.iter_mut().for_each(|v| *v /= total);
    } else {
        let u = 1.0 / y.len() as f64;
        p.iter_mut().for_each(|v| *v = u);
    }
    p
}

/// Mean of `N(y, I)` truncated to `{x_i > x_j  ∀ j ≠ i}`, together with the
/// normalizer `p(t = i | y)`.
///
/// Components `j ≠ i` come from the ratio of two quadratures sharing the same
/// nodes; component `i` is fixed by the identity
/// `⟨x_i⟩ - y_i = Σ_{j≠i} (y_j - ⟨x_j⟩)`.
pub fn truncated_moments(y: &[f64], i: usize, rule: &QuadratureRule) -> Result<(Vec<f64>, f64)> {
    let d = y.len();
    let others: Vec<usize> = (0..d).filter(|&j| j != i).collect();
    let mut numer = vec![0.0; others.len()];
    let mut normalizer = 0.0;
    let mut cdf = vec![0.0; others.len()];
    let mut prefix = vec![1.0; others.len() + 1];
    let mut suffix = vec![1.0; others.len() + 1];
    for (&u, &w) in rule.nodes().iter().zip(rule.weights()) {
        for (slot, &j) in cdf.iter_mut().zip(&others) {
            *slot = std_normal_cdf(u + y[i] - y[j]);
        }
        for a in 0..others.len() {
            prefix[a + 1] = prefix[a] * cdf[a];
        }
        for a in (0..others.len()).rev() {
            suffix[a] = suffix[a + 1] * cdf[a];
        }
        normalizer += w * prefix[others.len()];
        for (a, &j) in others.iter().enumerate() {
            let rest = prefix[a] * suffix[a + 1];
            numer[a] += w * std_normal_pdf(u + y[i] - y[j]) * rest;
        }
    }
    if !(normalizer >= MIN_NORMALIZER) {
        return Err(Error::DegenerateNormalizer { value: normalizer });
    }
    let mut mean = y.to_vec();
    let mut shift = 0.0;
    for (a, &j) in others.iter().enumerate() {
        mean[j] = y[j] - numer[a] / normalizer;
        shift += y[j] - mean[j];
    }
    mean[i] = y[i] + shift;
    Ok((mean, normalizer))
}

impl CategoricalViewState {
    /// Refreshes `⟨X⟩`, the normalizers and, for unobserved rows, the label
    /// posterior and the mixture mean, given `y = ⟨Z⟩⟨W⟩ᵀ + ⟨b⟩`.
    pub fn update(&mut self, y: &DMatrix<f64>, rule: &QuadratureRule) {
        self.y_mean.copy_from(y);
        let d = y.ncols();
        for n in 0..y.nrows() {
            let yrow: Vec<f64> = y.row(n).iter().copied().collect();
            match self.labels[n] {
                Some(i) => match truncated_moments(&yrow, i, rule) {
                    Ok((mean, norm)) => {
                        self.pseudo_mean.row_mut(n).copy_from_slice(&mean);
                        self.normalizer[n] = norm.min(1.0);
                    }
                    Err(_) => {
                        self.pseudo_mean.row_mut(n).copy_from_slice(&yrow);
                        self.normalizer[n] = MIN_NORMALIZER;
                        self.degenerate_count += 1;
                    }
                },
                None => {
                    let post = class_probabilities(&yrow, rule);
                    let mut mixture = vec![0.0; d];
                    for (c, &q) in post.iter().enumerate() {
                        let component = match truncated_moments(&yrow, c, rule) {
                            Ok((mean, _)) => mean,
                            Err(_) => {
                                if q > 0.0 {
                                    self.degenerate_count += 1;
                                }
                                yrow.clone()
                            }
                        };
                        for (acc, v) in mixture.iter_mut().zip(component) {
                            *acc += q * v;
                        }
                    }
                    self.pseudo_mean.row_mut(n).copy_from_slice(&mixture);
                    self.label_posterior.row_mut(n).copy_from_slice(&post);
                    self.normalizer[n] = 1.0;
                }
            }
        }
    }

    /// Posterior over classes for every row (one-hot where observed).
    pub fn posterior(&self) -> &DMatrix<f64> {
        &self.label_posterior
    }

    pub fn argmax_labels(&self) -> Vec<usize> {
        self.label_posterior
            .row_iter()
            .map(|r| argmax(r.iter().copied()))
            .collect()
    }
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    values
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Posterior over classes for an unobserved row, as a vector.
pub fn impute_row(y: &[f64], rule: &QuadratureRule) -> DVector<f64> {
    DVector::from_vec(class_probabilities(y, rule))
}
