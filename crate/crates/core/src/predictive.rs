//! Test-time inference for new samples.
//!
//! The global factors are collapsed to their variational means. Observed
//! views enter `q(z*)` through a Gaussian pseudo-observation: real values
//! as-is, binary labels as `2t - 1`, categorical labels one-hot.

use nalgebra::{DMatrix, DVector};

use crate::categorical::{argmax, class_probabilities};
use crate::error::{Error, Result};
use crate::model::{ModelState, ViewKind};
use crate::numerics::{sigmoid, spd_inverse, symmetrize, QuadratureRule};

/// Observed rows of one view for a batch of new samples.
#[derive(Debug, Clone, PartialEq)]
pub enum ViewInput {
    /// `n × D` values.
    Real(DMatrix<f64>),
    /// `n × D` labels in `{0, 1}`.
    Binary(DMatrix<f64>),
    /// One class index per sample.
    Categorical(Vec<usize>),
}

impl ViewInput {
    fn n_rows(&self) -> usize {
        match self {
            ViewInput::Real(x) | ViewInput::Binary(x) => x.nrows(),
            ViewInput::Categorical(l) => l.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRequest {
    pub observed: Vec<(String, ViewInput)>,
    pub targets: Vec<String>,
}

/// `q(z*)` for a batch: one mean row per sample and a covariance shared by all.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPosterior {
    pub mean: DMatrix<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewPrediction {
    pub name: String,
    pub kind: ViewKind,
    /// `n × D` predictive means of the Gaussian pseudo-observation.
    pub mean: DMatrix<f64>,
    /// `D × D`, shared by every sample.
    pub cov: DMatrix<f64>,
    /// Per-label `σ(μ)` for binary views, class simplex for categorical views.
    pub probabilities: Option<DMatrix<f64>>,
    /// Argmax class for categorical views.
    pub labels: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    pub latent: LatentPosterior,
    pub views: Vec<ViewPrediction>,
}

/// `Σ* = (I + Σ_in ⟨τ⟩⟨W⟩ᵀ⟨W⟩)⁻¹` and `⟨z*⟩ = Σ_in ⟨τ⟩(x - ⟨b⟩)⟨W⟩ Σ*`.
pub fn latent_posterior(
    model: &ModelState,
    observed: &[(String, ViewInput)],
) -> Result<LatentPosterior> {
    let k = model.k;
    let n = observed.first().map_or(0, |(_, x)| x.n_rows());
    let mut precision = DMatrix::<f64>::identity(k, k);
    let mut rhs = DMatrix::<f64>::zeros(n, k);
    for (name, input) in observed {
        let m = model
            .view_index(name)
            .ok_or_else(|| Error::UnknownView(name.clone()))?;
        let v = &model.views[m];
        if input.n_rows() != n {
            return Err(Error::ShapeMismatch(format!(
                "view {name} has {} rows, expected {n}",
                input.n_rows()
            )));
        }
        let mut x = encode(input, v.spec.kind, v.spec.dim, name)?;
        for mut row in x.row_iter_mut() {
            row -= v.b.mean.transpose();
        }
        let tau = v.tau_mean();
        precision += v.w.mean.tr_mul(&v.w.mean) * tau;
        rhs += x * &v.w.mean * tau;
    }
    let cov = spd_inverse(&precision)?;
    Ok(LatentPosterior {
        mean: rhs * &cov,
        cov,
    })
}

/// Predictive moments of view `name`: `μ = ⟨z*⟩⟨W⟩ᵀ + ⟨b⟩`,
/// `Σ = ⟨τ⟩⁻¹ I + ⟨W⟩ Σ* ⟨W⟩ᵀ`.
pub fn predict_view(
    model: &ModelState,
    latent: &LatentPosterior,
    name: &str,
) -> Result<ViewPrediction> {
    let m = model
        .view_index(name)
        .ok_or_else(|| Error::UnknownView(name.to_string()))?;
    let v = &model.views[m];
    let w = &v.w.mean;
    let mut mean = &latent.mean * w.transpose();
    for mut row in mean.row_iter_mut() {
        row += v.b.mean.transpose();
    }
    let d = v.spec.dim;
    let cov = symmetrize(DMatrix::identity(d, d) / v.tau_mean() + w * &latent.cov * w.transpose());
    let (probabilities, labels) = match v.spec.kind {
        ViewKind::Real => (None, None),
        ViewKind::Binary => (Some(mean.map(sigmoid)), None),
        ViewKind::Categorical => {
            let rule = QuadratureRule::default();
            let mut probs = DMatrix::zeros(mean.nrows(), d);
            let mut labels = Vec::with_capacity(mean.nrows());
            for (r, row) in mean.row_iter().enumerate() {
                let y: Vec<f64> = row.iter().copied().collect();
                let p = class_probabilities(&y, &rule);
                labels.push(argmax(p.iter().copied()));
                probs
                    .row_mut(r)
                    .copy_from(&DVector::from_vec(p).transpose());
            }
            (Some(probs), Some(labels))
        }
    };
    Ok(ViewPrediction {
        name: name.to_string(),
        kind: v.spec.kind,
        mean,
        cov,
        probabilities,
        labels,
    })
}

/// Latent posterior from the observed views followed by every target view.
pub fn predict(model: &ModelState, request: &PredictionRequest) -> Result<PredictionResult> {
    for t in &request.targets {
        if model.view_index(t).is_none() {
            return Err(Error::UnknownView(t.clone()));
        }
        if request.observed.iter().any(|(o, _)| o == t) {
            return Err(Error::InvalidData(format!(
                "view {t} is both observed and a target"
            )));
        }
    }
    let latent = latent_posterior(model, &request.observed)?;
    let views = request
        .targets
        .iter()
        .map(|t| predict_view(model, &latent, t))
        .collect::<Result<_>>()?;
    Ok(PredictionResult { latent, views })
}

fn encode(input: &ViewInput, kind: ViewKind, dim: usize, name: &str) -> Result<DMatrix<f64>> {
    let mismatch = || {
        Error::ShapeMismatch(format!(
            "input for view {name} does not match its {kind} kind of width {dim}"
        ))
    };
    match (input, kind) {
        (ViewInput::Real(x), ViewKind::Real) => {
            if x.ncols() != dim {
                return Err(mismatch());
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "non-finite input in view {name}"
                )));
            }
            Ok(x.clone())
        }
        (ViewInput::Binary(t), ViewKind::Binary) => {
            if t.ncols() != dim {
                return Err(mismatch());
            }
            if t.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Domain(format!(
                    "binary view {name} holds a label outside {{0, 1}}"
                )));
            }
            Ok(t.map(|v| 2.0 * v - 1.0))
        }
        (ViewInput::Categorical(labels), ViewKind::Categorical) => {
            let mut x = DMatrix::zeros(labels.len(), dim);
            for (r, &c) in labels.iter().enumerate() {
                if c >= dim {
                    return Err(Error::Domain(format!(
                        "class {c} out of range for view {name} with {dim} classes"
                    )));
                }
                x[(r, c)] = 1.0;
            }
            Ok(x)
        }
        _ => Err(mismatch()),
    }
}
