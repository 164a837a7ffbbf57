//! Scale-invariant sparseness score of a nonnegative vector and its average
//! over the abundance columns.
//!
//! With `k_q = Σ x_i^q`,
//!
//! ```text
//! S(x) = (f_max − (k4 − σ1·k1²·k2 + σ2·k1·k3)) / (f_max − f_min)
//! f_max = (1/n³ − σ1/n + σ2/n²)·k1⁴,   f_min = (1 − σ1 + σ2)·k1⁴
//! σ2 = (2σ1 − 4)/3
//! ```
//!
//! `S` is 1 for one-hot vectors and 0 for constant ones. Every term is
//! homogeneous of degree 4, so the score is evaluated on `x / k1`.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Result, UnmixError};
use crate::model::AbundanceMatrix;

pub const DEFAULT_SIGMA1: f64 = 2.0;

/// Allowed excursion outside `[0, 1]` before clamping is treated as a bug.
const RANGE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SMeasureParams {
    sigma1: f64,
    sigma2: f64,
}

impl SMeasureParams {
    pub fn new(sigma1: f64) -> Result<Self> {
        if !(sigma1 > 0.0 && sigma1.is_finite()) {
            return Err(UnmixError::Parameter(format!("sigma1 must be > 0, got {sigma1}")));
        }
        Ok(SMeasureParams {
            sigma1,
            sigma2: (2.0 * sigma1 - 4.0) / 3.0,
        })
    }

    pub fn sigma1(&self) -> f64 {
        self.sigma1
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn set_sigma1(&mut self, sigma1: f64) -> Result<()> {
        *self = Self::new(sigma1)?;
        Ok(())
    }

    /// `(c_max, c_max − c_min)` where `f_max = c_max·k1⁴`, `f_min = c_min·k1⁴`.
    fn coefficients(&self, n: usize) -> (f64, f64) {
        let n = n as f64;
        let c_max = 1.0 / (n * n * n) - self.sigma1 / n + self.sigma2 / (n * n);
        let c_min = 1.0 - self.sigma1 + self.sigma2;
        (c_max, c_max - c_min)
    }
}

impl Default for SMeasureParams {
    fn default() -> Self {
        SMeasureParams::new(DEFAULT_SIGMA1).expect("default sigma1 is valid")
    }
}

fn check_vector(x: ArrayView1<'_, f64>) -> Result<f64> {
    if x.len() < 2 {
        return Err(UnmixError::Parameter(format!(
            "S-measure needs a vector of length ≥ 2, got {}",
            x.len()
        )));
    }
    if x.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(UnmixError::Parameter("S-measure input must be finite and nonnegative".into()));
    }
    let k1: f64 = x.sum();
    if k1 <= 0.0 {
        return Err(UnmixError::DegenerateInput(
            "S-measure is undefined for an all-zero vector".into(),
        ));
    }
    Ok(k1)
}

/// Power sums `k2, k3, k4` of `x / k1`.
fn power_sums(x: ArrayView1<'_, f64>, k1: f64) -> (f64, f64, f64) {
    x.iter().fold((0.0, 0.0, 0.0), |(k2, k3, k4), &v| {
        let u = v / k1;
        let u2 = u * u;
        (k2 + u2, k3 + u2 * u, k4 + u2 * u2)
    })
}

pub fn s_measure(x: ArrayView1<'_, f64>, params: &SMeasureParams) -> Result<f64> {
    let k1 = check_vector(x)?;
    let (k2, k3, k4) = power_sums(x, k1);
    let (c_max, denom) = params.coefficients(x.len());
    let raw = (c_max - (k4 - params.sigma1 * k2 + params.sigma2 * k3)) / denom;
    if !(-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&raw) {
        return Err(UnmixError::Consistency(format!(
            "S-measure evaluated to {raw}, outside [0, 1]"
        )));
    }
    Ok(raw.clamp(0.0, 1.0))
}

/// Analytic gradient of [`s_measure`] on the nonnegative orthant.
pub fn s_measure_gradient(x: ArrayView1<'_, f64>, params: &SMeasureParams) -> Result<Vec<f64>> {
    let k1 = check_vector(x)?;
    Ok(gradient_unchecked(x, k1, params))
}

fn gradient_unchecked(x: ArrayView1<'_, f64>, k1: f64, params: &SMeasureParams) -> Vec<f64> {
    let (s1, s2) = (params.sigma1, params.sigma2);
    let (k2, k3, k4) = power_sums(x, k1);
    let (_, denom) = params.coefficients(x.len());
    // At u = x/k1 (so k1(u) = 1): g = k4 − σ1·k2 + σ2·k3 and
    // ∂S/∂u_i = −(∂g/∂u_i − 4g)/denom; ∇S(x) = ∇S(u)/k1 by 0-homogeneity.
    let g = k4 - s1 * k2 + s2 * k3;
    x.iter()
        .map(|&v| {
            let u = v / k1;
            let dg = 4.0 * u * u * u - s1 * (2.0 * k2 + 2.0 * u) + s2 * (k3 + 3.0 * u * u);
            -(dg - 4.0 * g) / (denom * k1)
        })
        .collect()
}

/// Mean S-measure over the columns of `H`. All-zero columns score 0.
pub fn sparseness_cost(h: &AbundanceMatrix, params: &SMeasureParams) -> Result<f64> {
    sparseness_cost_raw(h.fractions().view(), params)
}

pub(crate) fn sparseness_cost_raw(h: ArrayView2<'_, f64>, params: &SMeasureParams) -> Result<f64> {
    check_matrix(h)?;
    let mut total = 0.0;
    for col in h.columns() {
        if col.sum() > 0.0 {
            total += s_measure(col, params)?;
        }
    }
    Ok(total / h.ncols() as f64)
}

/// Gradient of [`sparseness_cost`]: column `t` is `∇S(h_t) / M`.
pub fn sparseness_cost_gradient(h: &AbundanceMatrix, params: &SMeasureParams) -> Result<Array2<f64>> {
    sparseness_cost_gradient_raw(h.fractions().view(), params)
}

pub(crate) fn sparseness_cost_gradient_raw(
    h: ArrayView2<'_, f64>,
    params: &SMeasureParams,
) -> Result<Array2<f64>> {
    check_matrix(h)?;
    let m = h.ncols() as f64;
    let mut out = Array2::zeros(h.raw_dim());
    for (col, mut dst) in h.columns().into_iter().zip(out.columns_mut()) {
        let k1 = col.sum();
        if k1 > 0.0 {
            for (d, g) in dst.iter_mut().zip(gradient_unchecked(col, k1, params)) {
                *d = g / m;
            }
        }
    }
    Ok(out)
}

fn check_matrix(h: ArrayView2<'_, f64>) -> Result<()> {
    if h.ncols() == 0 {
        return Err(UnmixError::Parameter("sparseness cost needs at least one column".into()));
    }
    if h.nrows() < 2 {
        return Err(UnmixError::Parameter(format!(
            "sparseness cost needs at least 2 rows, got {}",
            h.nrows()
        )));
    }
    Ok(())
}
