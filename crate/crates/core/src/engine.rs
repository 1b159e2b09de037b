//! Coordinate-ascent mean-field inference.
//!
//! One iteration visits every view (pseudo-observations, then `W`, `b`, `α`,
//! `γ`, `τ`), then the shared latent factor `Z`, prunes dead latent columns
//! and records the lower bound.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    init_state, Covariance, Hyperparameters, ModelState, ObservationSet, ViewKind, ViewLatent,
};
use crate::numerics::{
    column_sums, dot, mat_mul, residual_sq, spd_inverse, spd_logdet, symmetrize, tr_mat_mul,
    QuadratureRule, LN_2PI,
};

/// Columns removed by pruning at a given iteration (1-based).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruneEvent {
    pub iteration: usize,
    pub columns: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub iterations: usize,
    pub final_elbo: f64,
    pub k_init: usize,
    pub k_final: usize,
    pub pruned_at: Vec<PruneEvent>,
    pub converged: bool,
    pub restart_chosen: usize,
    pub restart_elbos: Vec<f64>,
    pub degenerate_normalizers: u64,
}

/// Sufficient statistics of `q(Z)` shared by every per-view update.
#[derive(Debug, Clone)]
struct ZStats {
    /// `⟨ZᵀZ⟩`.
    second_moment: DMatrix<f64>,
    /// `Σ_n ⟨z_n⟩`.
    col_sum: DVector<f64>,
}

impl ZStats {
    fn of(state: &ModelState) -> Self {
        ZStats {
            second_moment: state.z.second_moment(),
            col_sum: column_sums(&state.z.mean),
        }
    }
}

/// Statistics of `⟨X⟩` for one view.
#[derive(Debug, Clone)]
struct XStats {
    /// `‖⟨X⟩‖²_F`.
    sq_norm: f64,
    col_sum: DVector<f64>,
}

impl XStats {
    fn of(x: &DMatrix<f64>) -> Self {
        XStats {
            sq_norm: dot(x.as_slice(), x.as_slice()),
            col_sum: column_sums(x),
        }
    }
}

/// `q(Z)`: `Σ_Z⁻¹ = I + Σ_m ⟨τ⟩⟨WᵀW⟩`, `μ_Z = Σ_m ⟨τ⟩(⟨X⟩ - 1⟨b⟩)⟨W⟩ Σ_Z`.
pub fn update_z(state: &mut ModelState) -> Result<()> {
    update_z_cross(state).map(|_| ())
}

/// Updates `q(Z)` and returns, per view, the columnwise terms of
/// `Tr(⟨W⟩ᵀ⟨X⟩ᵀ⟨Z⟩)` at the new `⟨Z⟩`.
fn update_z_cross(state: &mut ModelState) -> Result<Vec<DVector<f64>>> {
    let k = state.k;
    let n = state.n_samples();
    let mut precision = DMatrix::<f64>::identity(k, k);
    let mut rhs = DMatrix::<f64>::zeros(n, k);
    let mut projections = Vec::with_capacity(state.views.len());
    for v in &state.views {
        let tau = v.tau_mean();
        precision += v.w.second_moment() * tau;
        let bias_proj = v.w.mean.tr_mul(&v.b.mean);
        let xw = mat_mul(v.latent.x_mean(), &v.w.mean);
        rhs.zip_apply(&xw, |r, x| *r += tau * x);
        for (mut col, &c) in rhs.column_iter_mut().zip(bias_proj.iter()) {
            col.add_scalar_mut(-tau * c);
        }
        projections.push(xw);
    }
    let cov = spd_inverse(&precision)?;
    state.z.mean = mat_mul(&rhs, &cov);
    state.z.cov = Covariance::Shared(cov);
    let z = &state.z.mean;
    Ok(projections
        .iter()
        .map(|xw| {
            DVector::from_iterator(
                k,
                (0..k).map(|j| {
                    dot(
                        xw.column(j).data.into_slice(),
                        z.column(j).data.into_slice(),
                    )
                }),
            )
        })
        .collect())
}

/// `q(W)`, one Gaussian per feature row.
///
/// With feature selection every row has its own precision
/// `⟨γ_d⟩ diag(⟨α⟩) + ⟨τ⟩⟨ZᵀZ⟩`. All of them are inverted through one
/// eigendecomposition of `A^{-1/2} B A^{-1/2}` with `A = diag(⟨α⟩)` and
/// `B = ⟨τ⟩⟨ZᵀZ⟩`, after which each row only needs a diagonal shift.
pub fn update_w(state: &mut ModelState, m: usize) -> Result<()> {
    let zs = ZStats::of(state);
    let xz = tr_mat_mul(state.views[m].latent.x_mean(), &state.z.mean);
    update_w_with(state, m, &zs, &xz)
}

/// `xz` is `⟨X⟩ᵀ⟨Z⟩` for view `m`.
fn update_w_with(state: &mut ModelState, m: usize, zs: &ZStats, xz: &DMatrix<f64>) -> Result<()> {
    let zz = &zs.second_moment;
    let v = &mut state.views[m];
    let k = state.k;
    let tau = v.tau_mean();
    let alpha = v.alpha.mean();
    // ⟨τ⟩(⟨X⟩ - 1⟨b⟩)ᵀ⟨Z⟩
    let mut proj = xz.clone();
    proj.ger(-1.0, &v.b.mean, &zs.col_sum, 1.0);
    proj *= tau;
    let gamma = v.gamma.as_ref().map(|g| g.mean());
    match gamma {
        None => {
            let precision = DMatrix::from_diagonal(&alpha) + zz * tau;
            let cov = spd_inverse(&precision)?;
            v.w.mean = &proj * &cov;
            v.w.cov = Covariance::Shared(cov);
        }
        Some(gamma) => {
            let scale = alpha.map(|a| 1.0 / a.sqrt());
            let whitened = DMatrix::from_fn(k, k, |i, j| scale[i] * scale[j] * tau * zz[(i, j)]);
            let eig = SymmetricEigen::new(symmetrize(whitened));
            let basis = DMatrix::from_diagonal(&scale) * &eig.eigenvectors;
            let basis_t = basis.transpose();
            let mut covs = Vec::with_capacity(gamma.len());
            for (d, &g) in gamma.iter().enumerate() {
                let shifted = eig.eigenvalues.map(|l| g + l);
                if shifted.iter().any(|&s| !(s > 0.0)) {
                    return Err(Error::NotPositiveDefinite {
                        context: format!("W row {d} of view {m}"),
                    });
                }
                let mut scaled = basis.clone();
                for (mut col, &s) in scaled.column_iter_mut().zip(shifted.iter()) {
                    col /= s;
                }
                let cov = symmetrize(scaled * &basis_t);
                let row = proj.row(d) * &cov;
                v.w.mean.row_mut(d).copy_from(&row);
                covs.push(cov);
            }
            v.w.cov = Covariance::PerRow(covs);
        }
    }
    Ok(())
}

/// `q(b)`: `Σ_b = (N⟨τ⟩ + 1)⁻¹ I`, `μ_b = ⟨τ⟩ Σ_n (⟨x_n⟩ - ⟨z_n⟩⟨W⟩ᵀ) Σ_b`.
pub fn update_b(state: &mut ModelState, m: usize) {
    let zs = ZStats::of(state);
    let xs = XStats::of(state.views[m].latent.x_mean());
    update_b_with(state, m, &zs, &xs)
}

fn update_b_with(state: &mut ModelState, m: usize, zs: &ZStats, xs: &XStats) {
    let n = state.n_samples() as f64;
    let v = &mut state.views[m];
    let tau = v.tau_mean();
    let var = 1.0 / (n * tau + 1.0);
    let mut col_sums = xs.col_sum.clone();
    col_sums.gemv(-1.0, &v.w.mean, &zs.col_sum, 1.0);
    v.b.mean = col_sums * (tau * var);
    v.b.var = var;
}

/// `q(α_k)`: shape `a + D/2`, rate `b + ½ Σ_d ⟨γ_d⟩⟨W_dk²⟩`.
pub fn update_alpha(state: &mut ModelState, m: usize) {
    let p = state.priors;
    let v = &mut state.views[m];
    let w2 = v.w.elementwise_second_moment();
    let gamma = v.gamma_mean();
    let d = v.spec.dim as f64;
    let k = state.k;
    let weighted = w2.tr_mul(&gamma);
    v.alpha.shape = DVector::from_element(k, p.a_alpha + 0.5 * d);
    v.alpha.rate = weighted.map(|s| p.b_alpha + 0.5 * s);
}

/// `q(γ_d)`: shape `a + K/2`, rate `b + ½ Σ_k ⟨α_k⟩⟨W_dk²⟩`. No-op without
/// feature selection.
pub fn update_gamma(state: &mut ModelState, m: usize) {
    let p = state.priors;
    let k = state.k as f64;
    let v = &mut state.views[m];
    if v.gamma.is_none() {
        return;
    }
    let weighted = v.w.elementwise_second_moment() * v.alpha.mean();
    let g = v.gamma.as_mut().expect("checked above");
    g.shape = DVector::from_element(weighted.len(), p.a_gamma + 0.5 * k);
    g.rate = weighted.map(|s| p.b_gamma + 0.5 * s);
}

/// `q(τ)`: shape `a + ND/2`, rate `b + ½ E‖X - ZWᵀ - 1b‖²`. Categorical views
/// keep `τ = 1`.
pub fn update_tau(state: &mut ModelState, m: usize) -> Result<()> {
    let zs = ZStats::of(state);
    let x = state.views[m].latent.x_mean();
    let (xs, xz) = (XStats::of(x), tr_mat_mul(x, &state.z.mean));
    update_tau_with(state, m, &zs, &xs, &xz)
}

fn update_tau_with(
    state: &mut ModelState,
    m: usize,
    zs: &ZStats,
    xs: &XStats,
    xz: &DMatrix<f64>,
) -> Result<()> {
    if state.views[m].spec.kind == ViewKind::Categorical {
        return Ok(());
    }
    let p = state.priors;
    let n = state.n_samples() as f64;
    let cross = state.views[m].w.mean.dot(xz);
    let s = sq_residual_expanded(state, m, zs, xs, cross);
    let v = &mut state.views[m];
    let rate = p.b_tau + 0.5 * s;
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::NegativeRate { view: m });
    }
    v.tau.shape[0] = p.a_tau + 0.5 * n * v.spec.dim as f64;
    v.tau.rate[0] = rate;
    Ok(())
}

/// `E Σ_n ‖x_n - z_n Wᵀ - b‖²`, accumulated as a sum of non-negative terms.
///
/// The inference loop uses the cheaper expanded form; this direct version is
/// kept as a reference.
pub fn expected_sq_residual(state: &ModelState, m: usize) -> f64 {
    let zs = ZStats::of(state);
    let v = &state.views[m];
    let n = state.n_samples() as f64;
    let resid_sq = residual_sq(
        v.latent.x_mean(),
        &state.z.mean,
        &v.w.mean,
        v.b.mean.as_slice(),
    );
    let z_cov = match &state.z.cov {
        Covariance::Shared(c) => c,
        Covariance::PerRow(_) => unreachable!("q(Z) covariance is shared"),
    };
    let w_spread = v.w.cov_sum().dot(&zs.second_moment);
    let z_spread = v.w.mean.tr_mul(&v.w.mean).dot(z_cov) * n;
    resid_sq + v.latent.total_variance() + w_spread + z_spread + n * v.spec.dim as f64 * v.b.var
}

/// The same expectation in expanded trace form:
/// `⟨X²⟩ - 2 Tr(⟨W⟩ᵀ⟨X⟩ᵀ⟨Z⟩) + Tr(⟨WᵀW⟩⟨ZᵀZ⟩) - 2⟨b⟩ᵀ(Σ_n⟨x_n⟩ - ⟨W⟩Σ_n⟨z_n⟩) + N⟨bᵀb⟩`,
/// where `cross` is the trace term.
fn sq_residual_expanded(state: &ModelState, m: usize, zs: &ZStats, xs: &XStats, cross: f64) -> f64 {
    let v = &state.views[m];
    let n = state.n_samples() as f64;
    let b = &v.b.mean;
    let quad = v.w.second_moment().dot(&zs.second_moment);
    let mut offset = xs.col_sum.clone();
    offset.gemv(-1.0, &v.w.mean, &zs.col_sum, 1.0);
    let bias = -2.0 * b.dot(&offset) + n * v.b.second_moment();
    xs.sq_norm + v.latent.total_variance() - 2.0 * cross + quad + bias
}

/// Refreshes the pseudo-observations of view `m`: imputed cells for real
/// views, `q(X)`, `ξ` and missing labels for binary views, truncated moments
/// and label posteriors for categorical views.
pub fn update_pseudo_observations(state: &mut ModelState, m: usize, rule: &QuadratureRule) {
    if let ViewLatent::Real(r) = &state.views[m].latent {
        if r.n_missing == 0 {
            return;
        }
    }
    let y = state.views[m].reconstruction(&state.z.mean);
    let v = &mut state.views[m];
    let tau = v.tau_mean();
    match &mut v.latent {
        ViewLatent::Real(r) => {
            for ((x, &missing), &yv) in r.x_mean.iter_mut().zip(r.missing.iter()).zip(y.iter()) {
                if missing {
                    *x = yv;
                }
            }
            r.missing_var = 1.0 / tau;
        }
        ViewLatent::Binary(b) => {
            b.update_pseudo_x(&y, tau);
            b.update_xi();
            b.impute_labels();
        }
        ViewLatent::Categorical(c) => c.update(&y, rule),
    }
}

/// Evidence lower bound of the current state.
///
/// Categorical views contribute only their Gaussian pseudo-likelihood at
/// `⟨X⟩`; the probit normalizer is left out, so the value is a surrogate
/// whenever such a view is present.
pub fn compute_elbo(state: &ModelState) -> Result<f64> {
    elbo_with(state, None)
}

/// `cached` holds, per view, the statistics of `⟨X⟩` and the columnwise terms
/// of `Tr(⟨W⟩ᵀ⟨X⟩ᵀ⟨Z⟩)` when the caller already has them.
fn elbo_with(state: &ModelState, cached: Option<&SweepStats>) -> Result<f64> {
    let p = state.priors;
    let n = state.n_samples() as f64;
    let k = state.k as f64;
    let half_ln_2pie = 0.5 * (LN_2PI + 1.0);

    let zs = ZStats::of(state);
    let z_cov = match &state.z.cov {
        Covariance::Shared(c) => c,
        Covariance::PerRow(_) => unreachable!("q(Z) covariance is shared"),
    };
    let mut elbo = -0.5 * n * k * LN_2PI - 0.5 * zs.second_moment.trace();
    if state.k > 0 {
        elbo += n * (k * half_ln_2pie + 0.5 * spd_logdet(z_cov)?);
    }

    for (m, v) in state.views.iter().enumerate() {
        let d = v.spec.dim as f64;
        let categorical = v.spec.kind == ViewKind::Categorical;
        let (tau, ln_tau) = if categorical {
            (1.0, 0.0)
        } else {
            (v.tau_mean(), v.tau.ln_mean()[0])
        };

        let sq = match cached {
            Some(c) => sq_residual_expanded(state, m, &zs, &c.x[m], c.cross[m].sum()),
            None => {
                let x = v.latent.x_mean();
                let trace = v.w.mean.dot(&tr_mat_mul(x, &state.z.mean));
                sq_residual_expanded(state, m, &zs, &XStats::of(x), trace)
            }
        };
        elbo += 0.5 * n * d * (ln_tau - LN_2PI) - 0.5 * tau * sq;

        let ln_alpha = v.alpha.ln_mean();
        let alpha = v.alpha.mean();
        let gamma = v.gamma_mean();
        let w2 = v.w.elementwise_second_moment();
        let ln_gamma_sum = v.gamma.as_ref().map_or(0.0, |g| g.ln_mean().sum());
        elbo += 0.5 * d * ln_alpha.sum() + 0.5 * k * ln_gamma_sum
            - 0.5 * d * k * LN_2PI
            - 0.5 * (gamma.transpose() * &w2 * &alpha)[(0, 0)];
        if state.k > 0 {
            elbo += match &v.w.cov {
                Covariance::Shared(c) => d * (k * half_ln_2pie + 0.5 * spd_logdet(c)?),
                Covariance::PerRow(cs) => {
                    let mut h = 0.0;
                    for c in cs {
                        h += k * half_ln_2pie + 0.5 * spd_logdet(c)?;
                    }
                    h
                }
            };
        }

        elbo += -0.5 * d * LN_2PI - 0.5 * v.b.second_moment();
        elbo += d * half_ln_2pie + 0.5 * d * v.b.var.ln();

        elbo += v.alpha.expected_log_prior(p.a_alpha, p.b_alpha) + v.alpha.entropy();
        if let Some(g) = &v.gamma {
            elbo += g.expected_log_prior(p.a_gamma, p.b_gamma) + g.entropy();
        }
        if !categorical {
            elbo += v.tau.expected_log_prior(p.a_tau, p.b_tau) + v.tau.entropy();
        }

        match &v.latent {
            ViewLatent::Real(r) => {
                if r.n_missing > 0 {
                    elbo += r.n_missing as f64 * (half_ln_2pie + 0.5 * r.missing_var.ln());
                }
            }
            // The Gaussian part of E[ln p(X | ·)] is already inside the residual term.
            ViewLatent::Binary(b) => elbo += b.bound_terms(),
            ViewLatent::Categorical(_) => {}
        }
    }
    if !elbo.is_finite() {
        return Err(Error::NotPositiveDefinite {
            context: "lower bound is not finite".into(),
        });
    }
    Ok(elbo)
}

/// Removes every latent column whose loadings stay below `threshold` in
/// absolute value across all views. Returns the removed column indices.
pub fn prune(state: &mut ModelState, threshold: f64) -> Result<Vec<usize>> {
    let dead: Vec<usize> = (0..state.k)
        .filter(|&c| {
            state
                .views
                .iter()
                .all(|v| v.w.mean.column(c).amax() < threshold)
        })
        .collect();
    if dead.is_empty() {
        return Ok(dead);
    }
    if dead.len() == state.k {
        return Err(Error::AllPruned);
    }
    state.z.remove_columns(&dead);
    for v in &mut state.views {
        v.w.remove_columns(&dead);
        v.alpha.remove_rows(&dead);
    }
    state.k -= dead.len();
    Ok(dead)
}

/// One full coordinate-ascent pass, without pruning or bound evaluation.
pub fn sweep(state: &mut ModelState, rule: &QuadratureRule) -> Result<()> {
    sweep_cross(state, rule).map(|_| ())
}

/// Per-view by-products of a sweep that the lower bound reuses.
struct SweepStats {
    x: Vec<XStats>,
    cross: Vec<DVector<f64>>,
}

/// [`sweep`], returning the statistics left behind for the bound.
fn sweep_cross(state: &mut ModelState, rule: &QuadratureRule) -> Result<SweepStats> {
    let zs = ZStats::of(state);
    let mut x_stats = Vec::with_capacity(state.views.len());
    for m in 0..state.views.len() {
        update_pseudo_observations(state, m, rule);
        let x = state.views[m].latent.x_mean();
        let (xs, xz) = (XStats::of(x), tr_mat_mul(x, &state.z.mean));
        update_w_with(state, m, &zs, &xz)?;
        update_b_with(state, m, &zs, &xs);
        update_alpha(state, m);
        update_gamma(state, m);
        update_tau_with(state, m, &zs, &xs, &xz)?;
        x_stats.push(xs);
    }
    Ok(SweepStats {
        x: x_stats,
        cross: update_z_cross(state)?,
    })
}

/// Stopping rule on the last two bounds: the gain fell below `tol` relative.
pub fn has_converged(previous: f64, current: f64, tol: f64) -> bool {
    current - previous < tol * current.abs()
}

/// Runs a single restart to convergence or `max_iters`.
pub fn fit_restart(
    data: &ObservationSet,
    hp: &Hyperparameters,
    restart_index: usize,
) -> Result<(ModelState, FitReport)> {
    let rule = QuadratureRule::gauss_hermite(hp.quadrature_order)?;
    let mut state = init_state(data, hp, restart_index)?;
    let mut pruned_at = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=hp.max_iters {
        iterations = it;
        let mut stats = sweep_cross(&mut state, &rule)?;
        let removed = prune(&mut state, hp.prune_threshold)?;
        if !removed.is_empty() {
            for c in &mut stats.cross {
                *c = c.clone().remove_rows_at(&removed);
            }
        }
        let elbo = elbo_with(&state, Some(&stats))?;
        let previous = state.elbo_trace.last().copied();
        state.elbo_trace.push(elbo);
        if !removed.is_empty() {
            // The bound of a smaller model is not comparable with the last one.
            pruned_at.push(PruneEvent {
                iteration: it,
                columns: removed,
            });
            continue;
        }
        if let Some(prev) = previous {
            if has_converged(prev, elbo, hp.convergence_rel_tol) {
                converged = true;
                break;
            }
        }
    }
    let degenerate_normalizers = state
        .views
        .iter()
        .map(|v| match &v.latent {
            ViewLatent::Categorical(c) => c.degenerate_count,
            _ => 0,
        })
        .sum();
    let final_elbo = *state.elbo_trace.last().expect("at least one iteration");
    let report = FitReport {
        iterations,
        final_elbo,
        k_init: hp.k_init,
        k_final: state.k,
        pruned_at,
        converged,
        restart_chosen: restart_index,
        restart_elbos: vec![final_elbo],
        degenerate_normalizers,
    };
    Ok((state, report))
}

/// Fits `hp.restarts` independent restarts and keeps the one with the largest
/// final bound (the lowest index wins ties).
pub fn fit(data: &ObservationSet, hp: &Hyperparameters) -> Result<(ModelState, FitReport)> {
    hp.validate()?;
    let runs: Vec<Result<(ModelState, FitReport)>> = (0..hp.restarts)
        .into_par_iter()
        .map(|r| fit_restart(data, hp, r))
        .collect();
    let mut fits = Vec::with_capacity(runs.len());
    for (index, run) in runs.into_iter().enumerate() {
        fits.push(run.map_err(|e| Error::Restart {
            index,
            source: Box::new(e),
        })?);
    }
    let restart_elbos: Vec<f64> = fits.iter().map(|(_, r)| r.final_elbo).collect();
    let best =
        restart_elbos.iter().enumerate().fold(
            0,
            |best, (i, &e)| if e > restart_elbos[best] { i } else { best },
        );
    let (state, mut report) = fits.swap_remove(best);
    report.restart_elbos = restart_elbos;
    Ok((state, report))
}
