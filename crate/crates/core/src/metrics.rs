//! Spectral and abundance angle distances, RMS aggregation and
//! permutation-aware matching of estimated to reference endmembers.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView1};
use serde::Serialize;

use crate::error::{Result, UnmixError};
use crate::model::{AbundanceMatrix, EndmemberMatrix};
use crate::unmixing::UnmixResult;

fn angle(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, what: &str) -> Result<f64> {
    if a.len() != b.len() {
        return Err(UnmixError::dims(what, a.len(), b.len()));
    }
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(UnmixError::DegenerateInput(format!("{what}: angle with a zero vector")));
    }
    // Half-angle form: same value as acos of the clamped cosine, but exact
    // near 0 and π where acos loses about half the significant digits.
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        let (u, v) = (x / na, y / nb);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    Ok(2.0 * diff.sqrt().atan2(sum.sqrt()))
}

/// Spectral angle distance in radians.
pub fn sad(m: ArrayView1<'_, f64>, m_hat: ArrayView1<'_, f64>) -> Result<f64> {
    angle(m, m_hat, "spectral angle")
}

/// Abundance angle distance in radians.
pub fn aad(a: ArrayView1<'_, f64>, a_hat: ArrayView1<'_, f64>) -> Result<f64> {
    angle(a, a_hat, "abundance angle")
}

/// Square-root of the mean of squares; zero for an empty slice.
pub fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with row/column potentials). Returns `assignment[row] = col`.
pub fn optimal_assignment(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "assignment cost matrix must be square");
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    assignment
}

/// Pairwise SAD matrix, `cost[[est, true]]`.
pub fn sad_cost_matrix(truth: &EndmemberMatrix, estimate: &EndmemberMatrix) -> Result<Array2<f64>> {
    let (t, e) = (truth.signatures(), estimate.signatures());
    let p = t.ncols();
    let mut cost = Array2::zeros((p, p));
    for i in 0..p {
        for j in 0..p {
            cost[[i, j]] = sad(e.column(i), t.column(j)).map_err(|err| {
                UnmixError::DegenerateInput(format!("estimated endmember {i} / reference {j}: {err}"))
            })?;
        }
    }
    Ok(cost)
}

/// Bijection `matching[estimated] = reference` minimizing the summed SAD.
pub fn match_endmembers(truth: &EndmemberMatrix, estimate: &EndmemberMatrix) -> Result<Vec<usize>> {
    if truth.endmember_count() != estimate.endmember_count() {
        return Err(UnmixError::dims(
            "endmember count",
            truth.endmember_count(),
            estimate.endmember_count(),
        ));
    }
    if truth.band_count() != estimate.band_count() {
        return Err(UnmixError::dims("band count", truth.band_count(), estimate.band_count()));
    }
    Ok(optimal_assignment(&sad_cost_matrix(truth, estimate)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    /// Indexed by reference endmember, radians.
    pub per_endmember_sad: Vec<f64>,
    /// `None` for pixels whose reference abundance column is all zero.
    pub per_pixel_aad: Vec<Option<f64>>,
    pub rms_sad: f64,
    pub rms_aad: f64,
    /// `matching[estimated] = reference`.
    pub matching: Vec<usize>,
    pub excluded_pixels: usize,
    pub degrees: bool,
}

impl EvaluationReport {
    fn unit(&self, radians: f64) -> f64 {
        if self.degrees {
            radians.to_degrees()
        } else {
            radians
        }
    }

    pub fn rms_sad_display(&self) -> f64 {
        self.unit(self.rms_sad)
    }

    pub fn rms_aad_display(&self) -> f64 {
        self.unit(self.rms_aad)
    }

    /// Tab-delimited rendering: summary rows then one row per endmember.
    pub fn render_text(&self) -> String {
        let unit = if self.degrees { "deg" } else { "rad" };
        let mut out = String::new();
        let _ = writeln!(out, "metric\tvalue\tunit");
        let _ = writeln!(out, "rms_sad\t{}\t{unit}", self.rms_sad_display());
        let _ = writeln!(out, "rms_aad\t{}\t{unit}", self.rms_aad_display());
        let _ = writeln!(out, "excluded_pixels\t{}\tcount", self.excluded_pixels);
        for (i, s) in self.per_endmember_sad.iter().enumerate() {
            let _ = writeln!(out, "sad_{i}\t{}\t{unit}", self.unit(*s));
        }
        out
    }

    /// Structured key-value rendering (TOML).
    pub fn render_key_values(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            unit: &'a str,
            rms_sad: f64,
            rms_aad: f64,
            excluded_pixels: usize,
            matching: &'a [usize],
            per_endmember_sad: Vec<f64>,
        }
        let doc = Doc {
            unit: if self.degrees { "degrees" } else { "radians" },
            rms_sad: self.rms_sad_display(),
            rms_aad: self.rms_aad_display(),
            excluded_pixels: self.excluded_pixels,
            matching: &self.matching,
            per_endmember_sad: self.per_endmember_sad.iter().map(|&s| self.unit(s)).collect(),
        };
        toml::to_string(&doc).expect("report serializes")
    }
}

/// Aligns the estimate to the reference and computes every angle and both
/// RMS summaries. Angles are stored in radians; `degrees` only affects rendering.
pub fn evaluate(
    true_endmembers: &EndmemberMatrix,
    true_abundances: &AbundanceMatrix,
    est_endmembers: &EndmemberMatrix,
    est_abundances: &AbundanceMatrix,
) -> Result<EvaluationReport> {
    let p = true_endmembers.endmember_count();
    if true_abundances.endmember_count() != p {
        return Err(UnmixError::dims(
            "reference abundance rows",
            p,
            true_abundances.endmember_count(),
        ));
    }
    if est_abundances.endmember_count() != est_endmembers.endmember_count() {
        return Err(UnmixError::dims(
            "estimated abundance rows",
            est_endmembers.endmember_count(),
            est_abundances.endmember_count(),
        ));
    }
    if est_abundances.pixel_count() != true_abundances.pixel_count() {
        return Err(UnmixError::dims(
            "pixel count",
            true_abundances.pixel_count(),
            est_abundances.pixel_count(),
        ));
    }
    let matching = match_endmembers(true_endmembers, est_endmembers)?;
    let cost = sad_cost_matrix(true_endmembers, est_endmembers)?;

    let mut per_endmember_sad = vec![0.0; p];
    for (est, &reference) in matching.iter().enumerate() {
        per_endmember_sad[reference] = cost[[est, reference]];
    }

    let h_est = est_abundances.fractions();
    let mut aligned = Array2::zeros(h_est.raw_dim());
    for (est, &reference) in matching.iter().enumerate() {
        aligned.row_mut(reference).assign(&h_est.row(est));
    }
    let h_true = true_abundances.fractions();
    let mut per_pixel_aad = Vec::with_capacity(h_true.ncols());
    let mut included = Vec::with_capacity(h_true.ncols());
    for (j, (a, a_hat)) in h_true.columns().into_iter().zip(aligned.columns()).enumerate() {
        if a.iter().all(|&v| v == 0.0) {
            per_pixel_aad.push(None);
            continue;
        }
        let angle = aad(a, a_hat)
            .map_err(|err| UnmixError::DegenerateInput(format!("pixel {j}: {err}")))?;
        per_pixel_aad.push(Some(angle));
        included.push(angle);
    }
    Ok(EvaluationReport {
        rms_sad: rms(&per_endmember_sad),
        rms_aad: rms(&included),
        excluded_pixels: per_pixel_aad.len() - included.len(),
        per_endmember_sad,
        per_pixel_aad,
        matching,
        degrees: true,
    })
}

/// [`evaluate`] against a solver result.
pub fn evaluate_result(
    true_endmembers: &EndmemberMatrix,
    true_abundances: &AbundanceMatrix,
    result: &UnmixResult,
) -> Result<EvaluationReport> {
    evaluate(true_endmembers, true_abundances, &result.endmembers, &result.abundances)
}
