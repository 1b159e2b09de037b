//! Observation sets, priors and the variational state.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::numerics::{self, mat_mul_tr, tr_mat_mul, QuadratureRule};

/// Likelihood attached to a view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewKind {
    Real,
    Binary,
    Categorical,
}

impl ViewKind {
    pub fn code(self) -> u8 {
        match self {
            ViewKind::Real => 0,
            ViewKind::Binary => 1,
            ViewKind::Categorical => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ViewKind::Real),
            1 => Some(ViewKind::Binary),
            2 => Some(ViewKind::Categorical),
            _ => None,
        }
    }
}

impl std::fmt::Display for ViewKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ViewKind::Real => "real",
            ViewKind::Binary => "binary",
            ViewKind::Categorical => "categorical",
        })
    }
}

/// `dim` is the feature count, or the number of classes for categorical views.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewSpec {
    pub name: String,
    pub kind: ViewKind,
    pub dim: usize,
    pub feature_selection: bool,
}

impl ViewSpec {
    pub fn new(name: impl Into<String>, kind: ViewKind, dim: usize) -> Self {
        Self {
            name: name.into(),
            kind,
            dim,
            feature_selection: false,
        }
    }

    pub fn with_feature_selection(mut self, on: bool) -> Self {
        self.feature_selection = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidData(format!(
                "view '{}' has zero dimension",
                self.name
            )));
        }
        if self.kind == ViewKind::Categorical && self.dim < 2 {
            return Err(Error::InvalidData(format!(
                "categorical view '{}' needs at least 2 classes",
                self.name
            )));
        }
        Ok(())
    }
}

/// Raw observations of one view. Missing cells hold `0.0` in `values`.
#[derive(Debug, Clone, PartialEq)]
pub enum ViewData {
    Real {
        values: DMatrix<f64>,
        missing: DMatrix<bool>,
    },
    Binary {
        values: DMatrix<f64>,
        missing: DMatrix<bool>,
    },
    Categorical {
        labels: Vec<Option<usize>>,
    },
}

impl ViewData {
    pub fn n_rows(&self) -> usize {
        match self {
            ViewData::Real { values, .. } | ViewData::Binary { values, .. } => values.nrows(),
            ViewData::Categorical { labels } => labels.len(),
        }
    }

    /// True when the whole row is unobserved.
    pub fn row_missing(&self, n: usize) -> bool {
        match self {
            ViewData::Real { missing, .. } | ViewData::Binary { missing, .. } => {
                missing.row(n).iter().all(|&m| m)
            }
            ViewData::Categorical { labels } => labels[n].is_none(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub spec: ViewSpec,
    pub data: ViewData,
}

impl View {
    pub fn real(name: impl Into<String>, values: DMatrix<f64>) -> Self {
        let missing = DMatrix::from_element(values.nrows(), values.ncols(), false);
        Self::real_with_mask(name, values, missing)
    }

    pub fn real_with_mask(
        name: impl Into<String>,
        mut values: DMatrix<f64>,
        missing: DMatrix<bool>,
    ) -> Self {
        if missing.shape() == values.shape() {
            values.zip_apply(&missing, |v, m| {
                if m {
                    *v = 0.0
                }
            });
        }
        let spec = ViewSpec::new(name, ViewKind::Real, values.ncols()).with_feature_selection(true);
        Self {
            spec,
            data: ViewData::Real { values, missing },
        }
    }

    pub fn binary(name: impl Into<String>, values: DMatrix<f64>) -> Self {
        let missing = DMatrix::from_element(values.nrows(), values.ncols(), false);
        Self::binary_with_mask(name, values, missing)
    }

    pub fn binary_with_mask(
        name: impl Into<String>,
        mut values: DMatrix<f64>,
        missing: DMatrix<bool>,
    ) -> Self {
        if missing.shape() == values.shape() {
            values.zip_apply(&missing, |v, m| {
                if m {
                    *v = 0.0
                }
            });
        }
        let spec = ViewSpec::new(name, ViewKind::Binary, values.ncols());
        Self {
            spec,
            data: ViewData::Binary { values, missing },
        }
    }

    pub fn categorical(
        name: impl Into<String>,
        classes: usize,
        labels: Vec<Option<usize>>,
    ) -> Self {
        let spec = ViewSpec::new(name, ViewKind::Categorical, classes);
        Self {
            spec,
            data: ViewData::Categorical { labels },
        }
    }

    pub fn with_feature_selection(mut self, on: bool) -> Self {
        self.spec.feature_selection = on;
        self
    }
}

/// All views of the same `n_samples` data points.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    n_samples: usize,
    views: Vec<View>,
}

impl ObservationSet {
    pub fn new(views: Vec<View>) -> Result<Self> {
        let n_samples = views
            .first()
            .map(|v| v.data.n_rows())
            .ok_or_else(|| Error::InvalidData("no views".into()))?;
        let set = Self { n_samples, views };
        set.validate()?;
        Ok(set)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn views(&self) -> &[View] {
        &self.views
    }

    pub fn view(&self, m: usize) -> &View {
        &self.views[m]
    }

    pub fn view_index(&self, name: &str) -> Option<usize> {
        self.views.iter().position(|v| v.spec.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        for view in &self.views {
            view.spec.validate()?;
            let name = &view.spec.name;
            if view.data.n_rows() != self.n_samples {
                return Err(Error::InvalidData(format!(
                    "view '{name}' has {} rows, expected {}",
                    view.data.n_rows(),
                    self.n_samples
                )));
            }
            match &view.data {
                ViewData::Real { values, missing } | ViewData::Binary { values, missing } => {
                    if values.ncols() != view.spec.dim || missing.shape() != values.shape() {
                        return Err(Error::InvalidData(format!(
                            "view '{name}' mask or width is not conformal"
                        )));
                    }
                    let binary = view.spec.kind == ViewKind::Binary;
                    let real = view.spec.kind == ViewKind::Real;
                    if !(binary || real) {
                        return Err(Error::InvalidData(format!(
                            "view '{name}' kind does not match its data"
                        )));
                    }
                    for (v, &m) in values.iter().zip(missing.iter()) {
                        if m {
                            continue;
                        }
                        if !v.is_finite() {
                            return Err(Error::InvalidData(format!(
                                "view '{name}' has a non-finite entry"
                            )));
                        }
                        if binary && *v != 0.0 && *v != 1.0 {
                            return Err(Error::InvalidData(format!(
                                "binary view '{name}' has entry {v}"
                            )));
                        }
                    }
                }
                ViewData::Categorical { labels } => {
                    if view.spec.kind != ViewKind::Categorical {
                        return Err(Error::InvalidData(format!(
                            "view '{name}' kind does not match its data"
                        )));
                    }
                    if let Some(bad) = labels.iter().flatten().find(|&&l| l >= view.spec.dim) {
                        return Err(Error::InvalidData(format!(
                            "categorical view '{name}' has label {bad} with {} classes",
                            view.spec.dim
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Shape/rate pairs of the Gamma hyperpriors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub a_alpha: f64,
    pub b_alpha: f64,
    pub a_tau: f64,
    pub b_tau: f64,
    pub a_gamma: f64,
    pub b_gamma: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            a_alpha: 1e-14,
            b_alpha: 1e-14,
            a_tau: 1e-14,
            b_tau: 1e-14,
            a_gamma: 1e-14,
            b_gamma: 1e-14,
        }
    }
}

impl Priors {
    fn as_array(&self) -> [f64; 6] {
        [
            self.a_alpha,
            self.b_alpha,
            self.a_tau,
            self.b_tau,
            self.a_gamma,
            self.b_gamma,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub priors: Priors,
    pub k_init: usize,
    pub prune_threshold: f64,
    pub convergence_rel_tol: f64,
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
    pub quadrature_order: usize,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            priors: Priors::default(),
            k_init: 100,
            prune_threshold: 1e-6,
            convergence_rel_tol: 1e-8,
            max_iters: 50_000,
            restarts: 10,
            seed: 0,
            quadrature_order: QuadratureRule::DEFAULT_ORDER,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        if self
            .priors
            .as_array()
            .iter()
            .any(|&p| !(p > 0.0 && p.is_finite()))
        {
            return Err(Error::InvalidData(
                "prior shapes and rates must be positive".into(),
            ));
        }
        if self.k_init == 0 {
            return Err(Error::InvalidData("k_init must be positive".into()));
        }
        if !(self.prune_threshold > 0.0) {
            return Err(Error::InvalidData(
                "prune_threshold must be positive".into(),
            ));
        }
        if !(self.convergence_rel_tol > 0.0 && self.convergence_rel_tol < 1.0) {
            return Err(Error::InvalidData(
                "convergence_rel_tol must lie in (0, 1)".into(),
            ));
        }
        if self.max_iters == 0 || self.restarts == 0 || self.quadrature_order == 0 {
            return Err(Error::InvalidData(
                "max_iters, restarts and quadrature_order must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Covariance of a Gaussian factor over the rows of a matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// One matrix shared by every row.
    Shared(DMatrix<f64>),
    /// One matrix per row.
    PerRow(Vec<DMatrix<f64>>),
}

/// Row-wise Gaussian factor: row `r` is `N(mean[r, :], cov_r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFactor {
    pub mean: DMatrix<f64>,
    pub cov: Covariance,
}

impl GaussianFactor {
    pub fn row_cov(&self, r: usize) -> &DMatrix<f64> {
        match &self.cov {
            Covariance::Shared(c) => c,
            Covariance::PerRow(cs) => &cs[r],
        }
    }

    /// Sum of row covariances.
    pub fn cov_sum(&self) -> DMatrix<f64> {
        match &self.cov {
            Covariance::Shared(c) => c * self.mean.nrows() as f64,
            Covariance::PerRow(cs) => {
                let k = self.mean.ncols();
                cs.iter().fold(DMatrix::zeros(k, k), |mut acc, c| {
                    acc += c;
                    acc
                })
            }
        }
    }

    /// `E[Mᵀ M] = meanᵀ mean + Σ_r cov_r`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        tr_mat_mul(&self.mean, &self.mean) + self.cov_sum()
    }

    /// Elementwise `E[M_rk^2]`.
    pub fn elementwise_second_moment(&self) -> DMatrix<f64> {
        let mut out = self.mean.map(|v| v * v);
        for r in 0..out.nrows() {
            let c = self.row_cov(r);
            for k in 0..out.ncols() {
                out[(r, k)] += c[(k, k)];
            }
        }
        out
    }

    pub(crate) fn remove_columns(&mut self, cols: &[usize]) {
        self.mean = self.mean.clone().remove_columns_at(cols);
        let shrink = |c: &DMatrix<f64>| c.clone().remove_columns_at(cols).remove_rows_at(cols);
        self.cov = match &self.cov {
            Covariance::Shared(c) => Covariance::Shared(shrink(c)),
            Covariance::PerRow(cs) => Covariance::PerRow(cs.iter().map(shrink).collect()),
        };
    }
}

/// Bias factor `N(mean, var · I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasFactor {
    pub mean: DVector<f64>,
    pub var: f64,
}

impl BiasFactor {
    /// `E[bᵀb]`.
    pub fn second_moment(&self) -> f64 {
        self.mean.norm_squared() + self.var * self.mean.len() as f64
    }
}

/// Independent Gamma factors, elementwise shape and rate.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaFactor {
    pub shape: DVector<f64>,
    pub rate: DVector<f64>,
}

impl GammaFactor {
    pub fn filled(len: usize, shape: f64, rate: f64) -> Self {
        Self {
            shape: DVector::from_element(len, shape),
            rate: DVector::from_element(len, rate),
        }
    }

    pub fn len(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn mean(&self) -> DVector<f64> {
        self.shape.component_div(&self.rate)
    }

    /// `E[ln x] = ψ(a) - ln b`.
    pub fn ln_mean(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.shape
                .iter()
                .zip(self.rate.iter())
                .map(|(&a, &b)| digamma(a) - b.ln()),
        )
    }

    pub fn entropy(&self) -> f64 {
        self.shape
            .iter()
            .zip(self.rate.iter())
            .map(|(&a, &b)| a - b.ln() + ln_gamma(a) + (1.0 - a) * digamma(a))
            .sum()
    }

    /// `Σ E_q[ln Gamma(x | a0, b0)]`.
    pub fn expected_log_prior(&self, a0: f64, b0: f64) -> f64 {
        let norm = a0 * b0.ln() - ln_gamma(a0);
        self.shape
            .iter()
            .zip(self.rate.iter())
            .map(|(&a, &b)| norm + (a0 - 1.0) * (digamma(a) - b.ln()) - b0 * a / b)
            .sum()
    }

    pub(crate) fn remove_rows(&mut self, idx: &[usize]) {
        self.shape = self.shape.clone().remove_rows_at(idx);
        self.rate = self.rate.clone().remove_rows_at(idx);
    }
}

/// Real view: observed cells plus the Gaussian imputation of missing ones.
#[derive(Debug, Clone, PartialEq)]
pub struct RealViewState {
    /// `⟨X⟩`: observed values, imputed means at missing cells.
    pub x_mean: DMatrix<f64>,
    pub missing: DMatrix<bool>,
    /// Number of true entries in `missing`.
    pub n_missing: usize,
    /// Variance `1/⟨τ⟩` of every imputed cell, fixed at its last update.
    pub missing_var: f64,
}

/// Binary view: Jaakkola pseudo-observations and label posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryViewState {
    pub pseudo_mean: DMatrix<f64>,
    /// Diagonal of each per-sample covariance.
    pub pseudo_var: DMatrix<f64>,
    pub xi: DMatrix<f64>,
    /// `⟨t⟩`: observed labels, `q(t=1)` at missing cells.
    pub label_prob: DMatrix<f64>,
    pub missing: DMatrix<bool>,
}

/// Categorical view: truncated-Gaussian pseudo-observations under a probit link.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalViewState {
    pub pseudo_mean: DMatrix<f64>,
    /// `⟨y⟩ = ⟨Z⟩⟨W⟩ᵀ + ⟨b⟩` at the last pseudo-observation update.
    pub y_mean: DMatrix<f64>,
    /// One simplex per row; one-hot for observed rows.
    pub label_posterior: DMatrix<f64>,
    pub labels: Vec<Option<usize>>,
    /// `p(t = observed | ⟨y⟩)` per row (1 for unobserved rows).
    pub normalizer: DVector<f64>,
    /// How many truncated-moment evaluations fell back to `⟨y⟩`.
    pub degenerate_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViewLatent {
    Real(RealViewState),
    Binary(BinaryViewState),
    Categorical(CategoricalViewState),
}

impl ViewLatent {
    /// `⟨X⟩` as seen by the loading, bias and latent updates.
    pub fn x_mean(&self) -> &DMatrix<f64> {
        match self {
            ViewLatent::Real(s) => &s.x_mean,
            ViewLatent::Binary(s) => &s.pseudo_mean,
            ViewLatent::Categorical(s) => &s.pseudo_mean,
        }
    }

    /// `Σ_nd E[X_nd^2]`. Categorical views use the point value `⟨X⟩^2`.
    pub fn sum_sq(&self) -> f64 {
        match self {
            ViewLatent::Real(s) => s.x_mean.norm_squared() + s.n_missing as f64 * s.missing_var,
            ViewLatent::Binary(s) => s.pseudo_mean.norm_squared() + s.pseudo_var.sum(),
            ViewLatent::Categorical(s) => s.pseudo_mean.norm_squared(),
        }
    }

    /// Σ of the variances of `q(X)` (zero for categorical point values).
    pub fn total_variance(&self) -> f64 {
        match self {
            ViewLatent::Real(s) => s.n_missing as f64 * s.missing_var,
            ViewLatent::Binary(s) => s.pseudo_var.sum(),
            ViewLatent::Categorical(_) => 0.0,
        }
    }
}

/// Factors attached to one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewState {
    pub spec: ViewSpec,
    pub w: GaussianFactor,
    pub b: BiasFactor,
    pub alpha: GammaFactor,
    /// Length-1 factor; held at mean 1 for categorical views.
    pub tau: GammaFactor,
    pub gamma: Option<GammaFactor>,
    pub latent: ViewLatent,
}

impl ViewState {
    pub fn tau_mean(&self) -> f64 {
        match self.spec.kind {
            ViewKind::Categorical => 1.0,
            _ => self.tau.shape[0] / self.tau.rate[0],
        }
    }

    /// `⟨γ_d⟩`, or all ones without feature selection.
    pub fn gamma_mean(&self) -> DVector<f64> {
        match &self.gamma {
            Some(g) => g.mean(),
            None => DVector::from_element(self.spec.dim, 1.0),
        }
    }

    /// `⟨Z⟩⟨W⟩ᵀ + 1⟨b⟩ᵀ`.
    pub fn reconstruction(&self, z_mean: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = mat_mul_tr(z_mean, &self.w.mean);
        for (mut col, &b) in y.column_iter_mut().zip(self.b.mean.iter()) {
            col.add_scalar_mut(b);
        }
        y
    }
}

/// The complete variational state for one training set.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub k: usize,
    pub priors: Priors,
    pub z: GaussianFactor,
    pub views: Vec<ViewState>,
    pub elbo_trace: Vec<f64>,
}

/// Seed of the stream that initializes restart `restart_index`.
pub fn restart_seed(seed: u64, restart_index: usize) -> u64 {
    seed ^ restart_index as u64
}

/// Draws a fresh state for one restart.
pub fn init_state(
    data: &ObservationSet,
    hp: &Hyperparameters,
    restart_index: usize,
) -> Result<ModelState> {
    data.validate()?;
    hp.validate()?;
    let n = data.n_samples();
    let k = hp.k_init;
    let p = hp.priors;
    let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(hp.seed, restart_index));
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let z_mean = DMatrix::from_fn(n, k, |_, _| normal());
    let z = GaussianFactor {
        mean: z_mean,
        cov: Covariance::Shared(DMatrix::identity(k, k)),
    };

    let w_scale = 1.0 / (k as f64).sqrt();
    let mut views = Vec::with_capacity(data.views().len());
    for view in data.views() {
        let spec = view.spec.clone();
        let d = spec.dim;
        // Column-major fill keeps the draw order independent of storage details.
        let mut w_mean = DMatrix::zeros(d, k);
        for c in 0..k {
            for r in 0..d {
                w_mean[(r, c)] = normal() * w_scale;
            }
        }
        let w_cov = if spec.feature_selection {
            Covariance::PerRow(vec![DMatrix::identity(k, k); d])
        } else {
            Covariance::Shared(DMatrix::identity(k, k))
        };
        let tau = match spec.kind {
            ViewKind::Categorical => GammaFactor::filled(1, 1.0, 1.0),
            _ => GammaFactor::filled(1, p.a_tau, p.b_tau),
        };
        let gamma = spec
            .feature_selection
            .then(|| GammaFactor::filled(d, p.a_gamma, p.b_gamma));
        let latent = init_latent(&view.data, d, 1.0 / (p.a_tau / p.b_tau))?;
        views.push(ViewState {
            w: GaussianFactor {
                mean: w_mean,
                cov: w_cov,
            },
            b: BiasFactor {
                mean: DVector::zeros(d),
                var: 1.0,
            },
            alpha: GammaFactor::filled(k, p.a_alpha, p.b_alpha),
            tau,
            gamma,
            latent,
            spec,
        });
    }
    let state = ModelState {
        k,
        priors: p,
        z,
        views,
        elbo_trace: Vec::new(),
    };
    state.validate()?;
    Ok(state)
}

fn init_latent(data: &ViewData, d: usize, missing_var: f64) -> Result<ViewLatent> {
    Ok(match data {
        ViewData::Real { values, missing } => {
            let mut x_mean = values.clone();
            for c in 0..d {
                let (sum, count) = (0..values.nrows())
                    .filter(|&r| !missing[(r, c)])
                    .fold((0.0, 0usize), |(s, n), r| (s + values[(r, c)], n + 1));
                let fill = if count > 0 { sum / count as f64 } else { 0.0 };
                for r in 0..values.nrows() {
                    if missing[(r, c)] {
                        x_mean[(r, c)] = fill;
                    }
                }
            }
            let n_missing = missing.iter().filter(|&&m| m).count();
            ViewLatent::Real(RealViewState {
                x_mean,
                missing: missing.clone(),
                n_missing,
                missing_var,
            })
        }
        ViewData::Binary { values, missing } => {
            let label_prob = values.zip_map(missing, |v, m| if m { 0.5 } else { v });
            let pseudo_mean = label_prob.map(|t| 2.0 * t - 1.0);
            let n = values.nrows();
            ViewLatent::Binary(BinaryViewState {
                pseudo_mean,
                pseudo_var: DMatrix::from_element(n, d, 1.0),
                xi: DMatrix::from_element(n, d, 1.0),
                label_prob,
                missing: missing.clone(),
            })
        }
        ViewData::Categorical { labels } => {
            let n = labels.len();
            let mut pseudo_mean = DMatrix::zeros(n, d);
            let mut label_posterior = DMatrix::from_element(n, d, 1.0 / d as f64);
            for (r, label) in labels.iter().enumerate() {
                if let Some(i) = *label {
                    pseudo_mean[(r, i)] = 1.0;
                    label_posterior.row_mut(r).fill(0.0);
                    label_posterior[(r, i)] = 1.0;
                }
            }
            ViewLatent::Categorical(CategoricalViewState {
                pseudo_mean,
                y_mean: DMatrix::zeros(n, d),
                label_posterior,
                labels: labels.clone(),
                normalizer: DVector::from_element(n, 1.0),
                degenerate_count: 0,
            })
        }
    })
}

impl ModelState {
    pub fn n_samples(&self) -> usize {
        self.z.mean.nrows()
    }

    pub fn view_index(&self, name: &str) -> Option<usize> {
        self.views.iter().position(|v| v.spec.name == name)
    }

    /// Checks every structural and distributional invariant of the state.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidData(msg));
        let n = self.n_samples();
        let k = self.k;
        if self.z.mean.ncols() != k {
            return bad(format!("z has {} columns, k = {k}", self.z.mean.ncols()));
        }
        check_factor(&self.z, "z")?;
        if !matches!(self.z.cov, Covariance::Shared(_)) {
            return bad("z covariance must be shared".into());
        }
        for (m, v) in self.views.iter().enumerate() {
            v.spec.validate()?;
            let d = v.spec.dim;
            let ctx = format!("view {m}");
            if v.w.mean.shape() != (d, k) {
                return bad(format!(
                    "{ctx}: W is {:?}, expected ({d}, {k})",
                    v.w.mean.shape()
                ));
            }
            match (&v.w.cov, v.spec.feature_selection) {
                (Covariance::PerRow(cs), true) if cs.len() == d => {}
                (Covariance::Shared(_), false) => {}
                _ => {
                    return bad(format!(
                        "{ctx}: W covariance layout does not match feature selection"
                    ))
                }
            }
            check_factor(&v.w, &format!("{ctx} W"))?;
            if v.b.mean.len() != d || !(v.b.var > 0.0) || v.b.mean.iter().any(|x| !x.is_finite()) {
                return bad(format!("{ctx}: invalid bias factor"));
            }
            check_gamma(&v.alpha, k, &format!("{ctx} alpha"))?;
            check_gamma(&v.tau, 1, &format!("{ctx} tau"))?;
            match (&v.gamma, v.spec.feature_selection) {
                (Some(g), true) => check_gamma(g, d, &format!("{ctx} gamma"))?,
                (None, false) => {}
                _ => {
                    return bad(format!(
                        "{ctx}: gamma presence does not match feature selection"
                    ))
                }
            }
            match (&v.latent, v.spec.kind) {
                (ViewLatent::Real(s), ViewKind::Real) => {
                    if s.x_mean.shape() != (n, d) || s.missing.shape() != (n, d) {
                        return bad(format!("{ctx}: real latent shape"));
                    }
                    if s.missing.iter().filter(|&&m| m).count() != s.n_missing {
                        return bad(format!("{ctx}: missing count"));
                    }
                    if !(s.missing_var > 0.0) || s.x_mean.iter().any(|x| !x.is_finite()) {
                        return bad(format!("{ctx}: real latent values"));
                    }
                }
                (ViewLatent::Binary(s), ViewKind::Binary) => {
                    for mat in [&s.pseudo_mean, &s.pseudo_var, &s.xi, &s.label_prob] {
                        if mat.shape() != (n, d) {
                            return bad(format!("{ctx}: binary latent shape"));
                        }
                    }
                    if s.missing.shape() != (n, d) {
                        return bad(format!("{ctx}: binary mask shape"));
                    }
                    if s.xi.iter().any(|&x| !(x >= 0.0)) {
                        return bad(format!("{ctx}: negative xi"));
                    }
                    if s.pseudo_var.iter().any(|&x| !(x > 0.0)) {
                        return bad(format!("{ctx}: non-positive pseudo variance"));
                    }
                    if s.label_prob.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                        return bad(format!("{ctx}: label probability outside [0, 1]"));
                    }
                    if s.pseudo_mean.iter().any(|x| !x.is_finite()) {
                        return bad(format!("{ctx}: non-finite pseudo mean"));
                    }
                }
                (ViewLatent::Categorical(s), ViewKind::Categorical) => {
                    if s.pseudo_mean.shape() != (n, d)
                        || s.y_mean.shape() != (n, d)
                        || s.label_posterior.shape() != (n, d)
                        || s.labels.len() != n
                        || s.normalizer.len() != n
                    {
                        return bad(format!("{ctx}: categorical latent shape"));
                    }
                    for row in s.label_posterior.row_iter() {
                        if row.iter().any(|&p| !(0.0..=1.0).contains(&p))
                            || (row.sum() - 1.0).abs() > 1e-10
                        {
                            return bad(format!("{ctx}: label posterior is not a simplex"));
                        }
                    }
                    if s.labels.iter().flatten().any(|&l| l >= d) {
                        return bad(format!("{ctx}: label out of range"));
                    }
                    if s.normalizer.iter().any(|&x| !(x > 0.0 && x <= 1.0)) {
                        return bad(format!("{ctx}: normalizer outside (0, 1]"));
                    }
                }
                _ => return bad(format!("{ctx}: latent state does not match view kind")),
            }
        }
        if self.elbo_trace.iter().any(|x| !x.is_finite()) {
            return bad("non-finite ELBO in trace".into());
        }
        Ok(())
    }
}

fn check_factor(f: &GaussianFactor, ctx: &str) -> Result<()> {
    if f.mean.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidData(format!("{ctx}: non-finite mean")));
    }
    let k = f.mean.ncols();
    let check = |c: &DMatrix<f64>| -> Result<()> {
        if c.shape() != (k, k) {
            return Err(Error::InvalidData(format!(
                "{ctx}: covariance shape {:?}",
                c.shape()
            )));
        }
        if k > 0 {
            numerics::SpdMatrix::new(c.clone())
                .map_err(|e| Error::InvalidData(format!("{ctx}: {e}")))?;
        }
        Ok(())
    };
    match &f.cov {
        Covariance::Shared(c) => check(c),
        Covariance::PerRow(cs) => {
            if cs.len() != f.mean.nrows() {
                return Err(Error::InvalidData(format!("{ctx}: covariance count")));
            }
            cs.iter().try_for_each(check)
        }
    }
}

fn check_gamma(g: &GammaFactor, len: usize, ctx: &str) -> Result<()> {
    if g.shape.len() != len || g.rate.len() != len {
        return Err(Error::InvalidData(format!(
            "{ctx}: length {} expected {len}",
            g.shape.len()
        )));
    }
    if g.shape
        .iter()
        .chain(g.rate.iter())
        .any(|&x| !(x > 0.0 && x.is_finite()))
    {
        return Err(Error::InvalidData(format!(
            "{ctx}: shape and rate must be positive"
        )));
    }
    Ok(())
}
