//! Special functions, standard-normal quadrature and SPD linear algebra.
//!
//! Everything here is pure and deterministic: identical inputs produce
//! bit-identical outputs, which is what lets the inference engine assert
//! monotone lower bounds.

use libm::erfc;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Logistic function, evaluated branch-wise so neither side overflows.
pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^a)` without overflow.
pub fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

/// `ln σ(a)`.
pub fn log_sigmoid(a: f64) -> f64 {
    -softplus(-a)
}

/// Jaakkola-Jordan curvature `(σ(a) - 1/2) / (2a)`, with the limit 1/8 at zero.
pub fn lambda_jj(a: f64) -> f64 {
    let a = a.abs();
    if a < 1e-4 {
        // tanh(a/2)/(4a) = 1/8 - a^2/96 + O(a^4)
        0.125 - a * a / 96.0
    } else {
        (0.5 * a).tanh() / (4.0 * a)
    }
}

/// Standard normal CDF through the complementary error function.
pub fn std_normal_cdf(a: f64) -> f64 {
    0.5 * erfc(-a / std::f64::consts::SQRT_2)
}

pub fn std_normal_pdf(a: f64) -> f64 {
    (-0.5 * a * a - 0.5 * LN_2PI).exp()
}

/// A fixed-node rule for expectations under `u ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub const DEFAULT_ORDER: usize = 50;

    /// Gauss-Hermite rule for the probabilists' weight `e^{-u^2/2}/sqrt(2π)`.
    ///
    /// Nodes start from the eigenvalues of the Jacobi matrix and are polished
    /// with Newton steps on the orthonormal Hermite polynomial; weights come
    /// from the Christoffel function, then the rule is symmetrized and
    /// normalized to unit mass.
    pub fn gauss_hermite(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidData(
                "quadrature order must be positive".into(),
            ));
        }
        let n = order;
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let off = (k as f64).sqrt();
            jacobi[(k - 1, k)] = off;
            jacobi[(k, k - 1)] = off;
        }
        let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        nodes.sort_by(|a, b| a.total_cmp(b));

        let mut weights = Vec::with_capacity(n);
        for x in nodes.iter_mut() {
            for _ in 0..4 {
                let (pn, pn1, _) = orthonormal_hermite(*x, n);
                let deriv = (n as f64).sqrt() * pn1;
                if deriv == 0.0 {
                    break;
                }
                let step = pn / deriv;
                *x -= step;
                if step.abs() < 1e-15 * x.abs().max(1.0) {
                    break;
                }
            }
            let (_, _, christoffel) = orthonormal_hermite(*x, n);
            weights.push(1.0 / christoffel);
        }

        for i in 0..n / 2 {
            let j = n - 1 - i;
            let x = 0.5 * (nodes[j] - nodes[i]);
            nodes[i] = -x;
            nodes[j] = x;
            let w = 0.5 * (weights[i] + weights[j]);
            weights[i] = w;
            weights[j] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `Σ_i w_i f(u_i)`.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&u, &w)| w * f(u))
            .sum()
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::gauss_hermite(Self::DEFAULT_ORDER).expect("default order is positive")
    }
}

/// Returns `(p_n(x), p_{n-1}(x), Σ_{k<n} p_k(x)^2)` for the Hermite polynomials
/// orthonormal under the standard normal measure.
fn orthonormal_hermite(x: f64, n: usize) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    let mut sum_sq = 0.0;
    for k in 0..n {
        sum_sq += cur * cur;
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (cur, prev, sum_sq)
}

/// `E_{u ~ N(0,1)}[f(u)]` under the given rule.
pub fn expect_std_normal<F: FnMut(f64) -> f64>(f: F, rule: &QuadratureRule) -> f64 {
    rule.expect(f)
}

/// A validated symmetric positive-definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::ShapeMismatch(format!(
                "SPD matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if !is_symmetric(&m, 1e-10) {
            return Err(Error::NotPositiveDefinite {
                context: "matrix is not symmetric".into(),
            });
        }
        if m.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite {
                context: "cholesky failed".into(),
            });
        }
        Ok(Self(m))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        spd_solve(&self.0, b)
    }

    pub fn inverse(&self) -> Result<SpdMatrix> {
        spd_inverse(&self.0).map(SpdMatrix)
    }

    pub fn logdet(&self) -> Result<f64> {
        spd_logdet(&self.0)
    }
}

/// Symmetric within `rel_tol` of the largest absolute entry.
pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

/// Cholesky factorization with a single `1e-10·I` jitter retry.
fn factor(a: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if !a.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "expected square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if let Some(c) = a.clone().cholesky() {
        return Ok(c);
    }
    let jittered = a + DMatrix::identity(a.nrows(), a.ncols()) * 1e-10;
    jittered
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite {
            context: format!(
                "{}x{} factorization failed after jitter",
                a.nrows(),
                a.ncols()
            ),
        })
}

pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "solve: {} rows vs {} rows",
            a.nrows(),
            b.nrows()
        )));
    }
    Ok(factor(a)?.solve(b))
}

pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = factor(a)?.inverse();
    Ok(symmetrize(inv))
}

pub fn spd_logdet(a: &DMatrix<f64>) -> Result<f64> {
    let c = factor(a)?;
    Ok(2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

pub(crate) fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// `Σ_i a_i b_i` with independent partial sums.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (ca, ta) = a[..n].as_chunks::<4>();
    let (cb, tb) = b[..n].as_chunks::<4>();
    let mut acc = [0.0; 4];
    for (x, y) in ca.iter().zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ta.iter().zip(tb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `‖X - Z Wᵀ - 1bᵀ‖²_F` in one pass over the columns of `X`.
pub(crate) fn residual_sq(x: &DMatrix<f64>, z: &DMatrix<f64>, w: &DMatrix<f64>, b: &[f64]) -> f64 {
    let mut r = vec![0.0; x.nrows()];
    let mut total = 0.0;
    for d in 0..x.ncols() {
        for (ri, xi) in r.iter_mut().zip(x.column(d).data.into_slice()) {
            *ri = xi - b[d];
        }
        for k in 0..z.ncols() {
            axpy(-w[(d, k)], z.column(k).data.into_slice(), &mut r);
        }
        total += dot(&r, &r);
    }
    total
}

/// Sum of every column, as a vector.
pub(crate) fn column_sums(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(a.ncols(), columns(a).into_iter().map(sum))
}

/// `Σ_i a_i` with independent partial sums.
fn sum(a: &[f64]) -> f64 {
    let (chunks, tail) = a.as_chunks::<4>();
    let mut acc = [0.0; 4];
    for x in chunks {
        for i in 0..4 {
            acc[i] += x[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail.iter().sum::<f64>()
}

/// `y += Σ_j c_j x_j`, four source columns per pass over `y`.
fn combine_into(y: &mut [f64], coeffs: &[f64], cols: &[&[f64]]) {
    let mut j = 0;
    while j + 4 <= cols.len() {
        let (c0, c1, c2, c3) = (coeffs[j], coeffs[j + 1], coeffs[j + 2], coeffs[j + 3]);
        let (x0, x1, x2, x3) = (cols[j], cols[j + 1], cols[j + 2], cols[j + 3]);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += c0 * x0[i] + c1 * x1[i] + c2 * x2[i] + c3 * x3[i];
        }
        j += 4;
    }
    for (&c, x) in coeffs[j..].iter().zip(&cols[j..]) {
        axpy(c, x, y);
    }
}

fn columns(a: &DMatrix<f64>) -> Vec<&[f64]> {
    let n = a.nrows();
    if n == 0 {
        return vec![&[]; a.ncols()];
    }
    a.as_slice().chunks_exact(n).collect()
}

/// `A B`, built column by column over contiguous storage.
pub(crate) fn mat_mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.nrows());
    let cols = columns(a);
    let mut out = DMatrix::zeros(a.nrows(), b.ncols());
    for j in 0..b.ncols() {
        combine_into(
            out.column_mut(j).data.into_slice_mut(),
            b.column(j).data.into_slice(),
            &cols,
        );
    }
    out
}

/// `A Bᵀ`.
pub(crate) fn mat_mul_tr(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.ncols());
    let cols = columns(a);
    let mut out = DMatrix::zeros(a.nrows(), b.nrows());
    let mut coeffs = vec![0.0; b.ncols()];
    for j in 0..b.nrows() {
        for (c, v) in coeffs.iter_mut().zip(b.row(j).iter()) {
            *c = *v;
        }
        combine_into(out.column_mut(j).data.into_slice_mut(), &coeffs, &cols);
    }
    out
}

/// Four dot products `x·y_t` in one pass over `x`. Even and odd indices go
/// to separate partial sums, in the same order on every target.
fn dot4(x: &[f64], ys: [&[f64]; 4]) -> [f64; 4] {
    let n = x.len();
    let pairs = n / 2;
    let ys = ys.map(|y| &y[..n]);
    let mut acc = [[0.0; 2]; 4];
    #[cfg(target_arch = "x86_64")]
    {
        use std::arch::x86_64::{
            __m128d, _mm_add_pd, _mm_loadu_pd, _mm_mul_pd, _mm_setzero_pd, _mm_storeu_pd,
        };
        // SAFETY: SSE2 is part of the x86_64 baseline and every load reads one
        // two-element chunk.
        let (xc, _) = x.as_chunks::<2>();
        let [y0, y1, y2, y3] = ys.map(|y| y.as_chunks::<2>().0);
        let lanes = xc.iter().zip(y0).zip(y1).zip(y2).zip(y3);
        unsafe {
            let mut v: [__m128d; 4] = [_mm_setzero_pd(); 4];
            for ((((xp, p0), p1), p2), p3) in lanes {
                let xv = _mm_loadu_pd(xp.as_ptr());
                v[0] = _mm_add_pd(v[0], _mm_mul_pd(xv, _mm_loadu_pd(p0.as_ptr())));
                v[1] = _mm_add_pd(v[1], _mm_mul_pd(xv, _mm_loadu_pd(p1.as_ptr())));
                v[2] = _mm_add_pd(v[2], _mm_mul_pd(xv, _mm_loadu_pd(p2.as_ptr())));
                v[3] = _mm_add_pd(v[3], _mm_mul_pd(xv, _mm_loadu_pd(p3.as_ptr())));
            }
            for t in 0..4 {
                _mm_storeu_pd(acc[t].as_mut_ptr(), v[t]);
            }
        }
    }
    #[cfg(not(target_arch = "x86_64"))]
    for p in 0..pairs {
        for t in 0..4 {
            acc[t][0] += x[2 * p] * ys[t][2 * p];
            acc[t][1] += x[2 * p + 1] * ys[t][2 * p + 1];
        }
    }
    let mut out = [0.0; 4];
    for t in 0..4 {
        let tail: f64 = x[2 * pairs..]
            .iter()
            .zip(&ys[t][2 * pairs..])
            .map(|(u, v)| u * v)
            .sum();
        out[t] = acc[t][0] + acc[t][1] + tail;
    }
    out
}

/// `Aᵀ B`, four columns of `B` per pass over a column of `A`.
pub(crate) fn tr_mat_mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows());
    let (ac, bc) = (columns(a), columns(b));
    let mut out = DMatrix::zeros(a.ncols(), b.ncols());
    for (i, x) in ac.iter().enumerate() {
        let mut j = 0;
        while j + 4 <= bc.len() {
            let ys = [bc[j], bc[j + 1], bc[j + 2], bc[j + 3]];
            for (t, v) in dot4(x, ys).into_iter().enumerate() {
                out[(i, j + t)] = v;
            }
            j += 4;
        }
        for (t, y) in bc[j..].iter().enumerate() {
            out[(i, j + t)] = dot(x, y);
        }
    }
    out
}
