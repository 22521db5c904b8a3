//! Univariate partial least squares (PLS1) fitted with NIPALS, on z-scored
//! inputs.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard deviations below this are clamped to 1.
pub const MIN_STD: f64 = 1e-12;
/// A score vector with squared norm below this ends the decomposition.
pub const MIN_SCORE_NORM2: f64 = 1e-12;

/// Per-column means and sample standard deviations of a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

fn mean_std(values: impl ExactSizeIterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    (mean, if std < MIN_STD { 1.0 } else { std })
}

/// Z-scores the columns of `x` and the response `y` (sample std, N − 1).
pub fn standardize_fit(x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<(Array2<f64>, Array1<f64>, Standardizer)> {
    let mut xz = x.as_standard_layout().into_owned();
    let (yz, standardizer) = standardize_in_place(&mut xz, y)?;
    Ok((xz, yz, standardizer))
}

/// [`standardize_fit`] overwriting `x` with its z-scores.
pub fn standardize_in_place(x: &mut Array2<f64>, y: ArrayView1<f64>) -> Result<(Array1<f64>, Standardizer)> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(Error::InsufficientData(format!("standardisation needs 2 rows, got {n}")));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    if !x.is_standard_layout() {
        *x = x.as_standard_layout().into_owned();
    }
    let data = x.as_slice_mut().expect("standard layout");
    let mut means = vec![0.0; d];
    for row in data.chunks_exact(d) {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in means.iter_mut() {
        *m /= n as f64;
    }
    let mut vars = vec![0.0; d];
    for row in data.chunks_exact(d) {
        for ((s, v), m) in vars.iter_mut().zip(row).zip(&means) {
            *s += (v - m) * (v - m);
        }
    }
    let stds: Vec<f64> = vars
        .into_iter()
        .map(|s| {
            let std = (s / (n as f64 - 1.0)).sqrt();
            if std < MIN_STD {
                1.0
            } else {
                std
            }
        })
        .collect();
    for row in data.chunks_exact_mut(d) {
        for ((v, m), s) in row.iter_mut().zip(&means).zip(&stds) {
            *v = (*v - m) / s;
        }
    }
    let (y_mean, y_std) = mean_std(y.iter().copied());
    let yz = y.mapv(|v| (v - y_mean) / y_std);
    Ok((
        yz,
        Standardizer {
            means,
            stds,
            y_mean,
            y_std,
        },
    ))
}

/// Result of a NIPALS run.
#[derive(Debug, Clone)]
pub struct NipalsFit {
    /// Coefficients such that `Xz · beta` predicts `yz`.
    pub beta: Array1<f64>,
    /// Score vectors `t`, one per extracted component.
    pub scores: Vec<Array1<f64>>,
    pub weights: Vec<Array1<f64>>,
}

impl NipalsFit {
    pub fn components(&self) -> usize {
        self.scores.len()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn transposed_product(x: &[f64], d: usize, a: &[f64]) -> Vec<f64> {
    let mut xa = vec![0.0; d];
    for (row, &an) in x.chunks_exact(d).zip(a) {
        axpy(an, row, &mut xa);
    }
    xa
}

/// `(Xᵀ a, Xᵀ b)` in one sweep over the rows of `x`.
fn transposed_products(x: &[f64], d: usize, a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut xa = vec![0.0; d];
    let mut xb = vec![0.0; d];
    for ((row, &an), &bn) in x.chunks_exact(d).zip(a).zip(b) {
        for ((u, v), &xv) in xa.iter_mut().zip(xb.iter_mut()).zip(row) {
            *u += an * xv;
            *v += bn * xv;
        }
    }
    (xa, xb)
}

/// NIPALS for a single response. Extracts up to `n_components` components,
/// stopping early once the deflated data has no covariance left with the
/// response or the score vector vanishes.
///
/// `X` itself is never deflated: with one response, the deflated weights
/// `X_aᵀ y_a` equal `Xᵀ y_a`, and the scores are `X r_a` for the rotated
/// weights `r_a = Π_{j<a} (I − w_j p_jᵀ) w_a`. Each component then costs two
/// read-only sweeps over `X`.
pub fn pls_nipals(xz: ArrayView2<f64>, yz: ArrayView1<f64>, n_components: usize) -> Result<NipalsFit> {
    let (n, d) = xz.dim();
    if yz.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: yz.len(),
        });
    }
    let max = n.saturating_sub(1).min(d);
    if n_components == 0 || n_components > max {
        return Err(Error::InvalidComponents {
            requested: n_components,
            max,
        });
    }

    let x = xz.as_standard_layout();
    let x = x.as_slice().expect("standard layout");
    let mut y = yz.to_vec();
    let mut weights: Vec<Vec<f64>> = Vec::with_capacity(n_components);
    let mut loadings: Vec<Vec<f64>> = Vec::with_capacity(n_components);
    let mut scores: Vec<Vec<f64>> = Vec::with_capacity(n_components);
    let mut beta = vec![0.0; d];

    let w0_scale = dot(x, x).sqrt() * dot(&y, &y).sqrt();
    let mut u = transposed_product(x, d, &y);
    for _ in 0..n_components {
        let w_norm = dot(&u, &u).sqrt();
        if !(w_norm > f64::EPSILON * w0_scale) {
            break;
        }
        let w: Vec<f64> = u.iter().map(|v| v / w_norm).collect();
        let mut r = w.clone();
        for (wj, pj) in weights.iter().zip(&loadings).rev() {
            let c = dot(pj, &r);
            axpy(-c, wj, &mut r);
        }
        let t: Vec<f64> = x.chunks_exact(d).map(|row| dot(row, &r)).collect();
        let tt = dot(&t, &t);
        if tt < MIN_SCORE_NORM2 {
            break;
        }
        let q = dot(&y, &t) / tt;
        axpy(-q, &t, &mut y);
        let (xt, xy) = transposed_products(x, d, &t, &y);
        let p: Vec<f64> = xt.iter().map(|v| v / tt).collect();
        u = xy;
        axpy(q, &r, &mut beta);
        weights.push(w);
        loadings.push(p);
        scores.push(t);
    }
    Ok(NipalsFit {
        beta: Array1::from(beta),
        scores: scores.into_iter().map(Array1::from).collect(),
        weights: weights.into_iter().map(Array1::from).collect(),
    })
}

/// A fitted one-response PLS classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlsModel {
    /// Coefficients in standardised space.
    pub beta: Vec<f64>,
    pub standardizer: Standardizer,
    /// Components actually extracted (may be fewer than requested).
    pub n_components: usize,
}

impl PlsModel {
    /// Standardises `x`, `y` and runs NIPALS.
    pub fn fit(x: ArrayView2<f64>, y: ArrayView1<f64>, n_components: usize) -> Result<Self> {
        Self::fit_owned(x.to_owned(), y, n_components)
    }

    /// [`PlsModel::fit`] reusing `x` as scratch space.
    pub fn fit_owned(mut x: Array2<f64>, y: ArrayView1<f64>, n_components: usize) -> Result<Self> {
        let (yz, standardizer) = standardize_in_place(&mut x, y)?;
        let fit = pls_nipals(x.view(), yz.view(), n_components)?;
        Ok(Self {
            beta: fit.beta.to_vec(),
            n_components: fit.components(),
            standardizer,
        })
    }

    pub fn dimension(&self) -> usize {
        self.beta.len()
    }

    pub fn predict(&self, x_raw: &[f64]) -> Result<f64> {
        pls_predict(self, x_raw)
    }
}

/// Prediction in label units: `((x − means) / stds) · beta · y_std + y_mean`.
pub fn pls_predict(model: &PlsModel, x_raw: &[f64]) -> Result<f64> {
    if x_raw.len() != model.beta.len() {
        return Err(Error::DimensionMismatch {
            expected: model.beta.len(),
            found: x_raw.len(),
        });
    }
    let s = &model.standardizer;
    let z: f64 = x_raw
        .iter()
        .zip(&s.means)
        .zip(&s.stds)
        .zip(&model.beta)
        .map(|(((x, m), sd), b)| (x - m) / sd * b)
        .sum();
    Ok(z * s.y_std + s.y_mean)
}
