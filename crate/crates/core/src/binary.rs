//! Multi-label binary views under the Jaakkola-Jordan logistic bound.
//!
//! Every label `t_nd` sits on top of a Gaussian pseudo-observation `X_nd`.
//! The logistic likelihood is replaced by a bound that is quadratic in `X_nd`
//! with one variational parameter `ξ_nd` per cell, so `q(X)` stays Gaussian
//! with a diagonal covariance per sample.

use nalgebra::DMatrix;

use crate::model::BinaryViewState;
use crate::numerics::{lambda_jj, log_sigmoid, sigmoid};

/// Lower bound on `ln p(t | x)` for a logistic likelihood, tight at `ξ = |x|`.
pub fn jaakkola_log_bound(x: f64, t: f64, xi: f64) -> f64 {
    x * t + log_sigmoid(xi) - 0.5 * (x + xi) - lambda_jj(xi) * (x * x - xi * xi)
}

/// Exact `ln p(t | x) = x t + ln σ(-x)`.
pub fn logistic_log_likelihood(x: f64, t: f64) -> f64 {
    x * t + log_sigmoid(-x)
}

/// Variance of a Bernoulli label with success probability `σ(x)`.
pub fn label_variance(x: f64) -> f64 {
    let p = sigmoid(x);
    p * (1.0 - p)
}

impl BinaryViewState {
    /// `q(X_n) = N(μ, diag(s))` with `s = 1/(⟨τ⟩ + 2λ(ξ))` and
    /// `μ = (⟨t⟩ - 1/2 + ⟨τ⟩ y) s`, where `y = ⟨Z⟩⟨W⟩ᵀ + ⟨b⟩`.
    pub fn update_pseudo_x(&mut self, y: &DMatrix<f64>, tau: f64) {
        for ((mean, var), ((&xi, &t), &yv)) in self
            .pseudo_mean
            .iter_mut()
            .zip(self.pseudo_var.iter_mut())
            .zip(self.xi.iter().zip(self.label_prob.iter()).zip(y.iter()))
        {
            let s = 1.0 / (tau + 2.0 * lambda_jj(xi));
            *var = s;
            *mean = (t - 0.5 + tau * yv) * s;
        }
    }

    /// `ξ = sqrt(E[X^2])`, the stationary point of the bound.
    pub fn update_xi(&mut self) {
        for ((xi, &m), &v) in self
            .xi
            .iter_mut()
            .zip(self.pseudo_mean.iter())
            .zip(self.pseudo_var.iter())
        {
            *xi = (m * m + v).sqrt();
        }
    }

    /// `q(t̃ = 1) = σ(⟨X̃⟩)` on missing cells; observed cells are untouched.
    pub fn impute_labels(&mut self) {
        for ((p, &m), &missing) in self
            .label_prob
            .iter_mut()
            .zip(self.pseudo_mean.iter())
            .zip(self.missing.iter())
        {
            if missing {
                *p = sigmoid(m);
            }
        }
    }

    /// Label-dependent part of the lower bound: `E[ln h(X, ξ)]`, the entropy of
    /// `q(X)` and the entropy of `q(t̃)` on missing cells.
    pub fn bound_terms(&self) -> f64 {
        let mut total = 0.0;
        for i in 0..self.pseudo_mean.len() {
            let m = self.pseudo_mean[i];
            let v = self.pseudo_var[i];
            let xi = self.xi[i];
            let t = self.label_prob[i];
            total +=
                log_sigmoid(xi) + t * m - 0.5 * (m + xi) - lambda_jj(xi) * (m * m + v - xi * xi);
            total += 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * v).ln();
            if self.missing[i] {
                total += bernoulli_entropy(t);
            }
        }
        total
    }
}

fn bernoulli_entropy(p: f64) -> f64 {
    let h = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
    h(p) + h(1.0 - p)
}
