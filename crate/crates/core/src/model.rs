//! Data model shared by every stage of the pipeline.
//!
//! One orientation is used everywhere: the observed scene `Y` is
//! bands × pixels, endmembers `W` are bands × endmembers and abundances `H`
//! are endmembers × pixels, so that `Y ≈ W·H`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Result, UnmixError};

/// Tolerance on abundance column sums for matrices flagged as normalized.
pub const SUM_TO_ONE_EPS: f64 = 1e-6;

/// Observed nonnegative data, one spectrum per column.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperspectralScene {
    data: Array2<f64>,
    spatial_shape: Option<(usize, usize)>,
    wavelengths: Option<Vec<f64>>,
}

impl HyperspectralScene {
    /// Builds a scene, rejecting it if any invariant is violated.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        Self::with_metadata(data, None, None)
    }

    pub fn with_metadata(
        data: Array2<f64>,
        spatial_shape: Option<(usize, usize)>,
        wavelengths: Option<Vec<f64>>,
    ) -> Result<Self> {
        let scene = HyperspectralScene {
            data,
            spatial_shape,
            wavelengths,
        };
        let violations = validate_scene(&scene);
        if let Some(first) = violations.first() {
            return Err(UnmixError::Parameter(format!("invalid scene: {first}")));
        }
        Ok(scene)
    }

    /// Builds a scene without checking invariants. Use [`validate_scene`]
    /// to inspect it afterwards.
    pub fn new_unchecked(
        data: Array2<f64>,
        spatial_shape: Option<(usize, usize)>,
        wavelengths: Option<Vec<f64>>,
    ) -> Self {
        HyperspectralScene {
            data,
            spatial_shape,
            wavelengths,
        }
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn band_count(&self) -> usize {
        self.data.nrows()
    }

    pub fn pixel_count(&self) -> usize {
        self.data.ncols()
    }

    pub fn spatial_shape(&self) -> Option<(usize, usize)> {
        self.spatial_shape
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    pub fn pixel(&self, j: usize) -> ArrayView1<'_, f64> {
        self.data.column(j)
    }
}

/// A single broken scene invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Empty { bands: usize, pixels: usize },
    NonFinite { row: usize, col: usize },
    Negative { row: usize, col: usize, value: f64 },
    ShapeMismatch { rows: usize, cols: usize, pixels: usize },
    WavelengthCount { expected: usize, actual: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty { bands, pixels } => {
                write!(f, "scene must have at least one band and one pixel (got {bands}×{pixels})")
            }
            Violation::NonFinite { row, col } => {
                write!(f, "non-finite entry at row {row}, col {col}")
            }
            Violation::Negative { row, col, value } => {
                write!(f, "negative entry {value} at row {row}, col {col}")
            }
            Violation::ShapeMismatch { rows, cols, pixels } => {
                write!(f, "rows·cols ≠ M: {rows}·{cols} ≠ {pixels}")
            }
            Violation::WavelengthCount { expected, actual } => {
                write!(f, "expected {expected} wavelengths, got {actual}")
            }
        }
    }
}

/// Lists every invariant the scene breaks. Only the first offending entry of
/// each kind is reported.
pub fn validate_scene(scene: &HyperspectralScene) -> Vec<Violation> {
    let mut out = Vec::new();
    let (bands, pixels) = scene.data.dim();
    if bands == 0 || pixels == 0 {
        out.push(Violation::Empty { bands, pixels });
    }
    let mut non_finite = None;
    let mut negative = None;
    for ((row, col), &v) in scene.data.indexed_iter() {
        if !v.is_finite() {
            non_finite.get_or_insert(Violation::NonFinite { row, col });
        } else if v < 0.0 {
            negative.get_or_insert(Violation::Negative { row, col, value: v });
        }
        if non_finite.is_some() && negative.is_some() {
            break;
        }
    }
    out.extend(non_finite);
    out.extend(negative);
    if let Some((rows, cols)) = scene.spatial_shape {
        if rows * cols != pixels {
            out.push(Violation::ShapeMismatch { rows, cols, pixels });
        }
    }
    if let Some(w) = &scene.wavelengths {
        if w.len() != bands {
            out.push(Violation::WavelengthCount {
                expected: bands,
                actual: w.len(),
            });
        }
    }
    out
}

fn check_nonnegative(matrix: &Array2<f64>, what: &str) -> Result<()> {
    for ((row, col), &v) in matrix.indexed_iter() {
        if !v.is_finite() || v < 0.0 {
            return Err(UnmixError::Parameter(format!(
                "{what}: entry ({row}, {col}) = {v} is not a finite nonnegative value"
            )));
        }
    }
    Ok(())
}

/// Endmember signatures, one per column.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberMatrix {
    signatures: Array2<f64>,
    names: Option<Vec<String>>,
}

impl EndmemberMatrix {
    pub fn new(signatures: Array2<f64>) -> Result<Self> {
        Self::with_names(signatures, None)
    }

    pub fn with_names(signatures: Array2<f64>, names: Option<Vec<String>>) -> Result<Self> {
        check_nonnegative(&signatures, "endmember matrix")?;
        for (p, col) in signatures.columns().into_iter().enumerate() {
            if col.iter().all(|&v| v == 0.0) {
                return Err(UnmixError::DegenerateInput(format!(
                    "endmember {p} is an all-zero signature"
                )));
            }
        }
        if let Some(n) = &names {
            if n.len() != signatures.ncols() {
                return Err(UnmixError::dims("endmember names", signatures.ncols(), n.len()));
            }
        }
        Ok(EndmemberMatrix { signatures, names })
    }

    pub fn signatures(&self) -> &Array2<f64> {
        &self.signatures
    }

    pub fn into_signatures(self) -> Array2<f64> {
        self.signatures
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn band_count(&self) -> usize {
        self.signatures.nrows()
    }

    pub fn endmember_count(&self) -> usize {
        self.signatures.ncols()
    }
}

/// Abundance fractions, one column per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceMatrix {
    fractions: Array2<f64>,
    normalized: bool,
}

impl AbundanceMatrix {
    /// Wraps a nonnegative matrix. The `normalized` flag is not set even if
    /// the columns happen to sum to one.
    pub fn new(fractions: Array2<f64>) -> Result<Self> {
        check_nonnegative(&fractions, "abundance matrix")?;
        Ok(AbundanceMatrix {
            fractions,
            normalized: false,
        })
    }

    /// Wraps a matrix whose columns are claimed to sum to one; the claim is
    /// checked against [`SUM_TO_ONE_EPS`].
    pub fn normalized(fractions: Array2<f64>) -> Result<Self> {
        check_nonnegative(&fractions, "abundance matrix")?;
        for (j, col) in fractions.columns().into_iter().enumerate() {
            let s = col.sum();
            if (s - 1.0).abs() > SUM_TO_ONE_EPS {
                return Err(UnmixError::Parameter(format!(
                    "abundance column {j} sums to {s}, expected 1"
                )));
            }
        }
        Ok(AbundanceMatrix {
            fractions,
            normalized: true,
        })
    }

    pub fn fractions(&self) -> &Array2<f64> {
        &self.fractions
    }

    pub fn into_fractions(self) -> Array2<f64> {
        self.fractions
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn endmember_count(&self) -> usize {
        self.fractions.nrows()
    }

    pub fn pixel_count(&self) -> usize {
        self.fractions.ncols()
    }
}

/// Scales every column to unit sum. All-zero columns become uniform `1/P`.
pub fn column_normalize(h: &AbundanceMatrix) -> AbundanceMatrix {
    let mut fractions = h.fractions.clone();
    normalize_columns_in_place(&mut fractions);
    AbundanceMatrix {
        fractions,
        normalized: true,
    }
}

pub(crate) fn normalize_columns_in_place(m: &mut Array2<f64>) {
    let p = m.nrows();
    for mut col in m.columns_mut() {
        let s = col.sum();
        if s > 0.0 {
            col.mapv_inplace(|v| v / s);
        } else {
            col.fill(1.0 / p as f64);
        }
    }
}

/// Which terms of the combined objective are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Nmf,
    Gnmf,
    NmfSmc,
    GnmfSmc,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Nmf, Variant::Gnmf, Variant::NmfSmc, Variant::GnmfSmc];

    pub fn uses_graph(self) -> bool {
        matches!(self, Variant::Gnmf | Variant::GnmfSmc)
    }

    pub fn uses_sparseness(self) -> bool {
        matches!(self, Variant::NmfSmc | Variant::GnmfSmc)
    }

    pub fn key(self) -> &'static str {
        match self {
            Variant::Nmf => "nmf",
            Variant::Gnmf => "gnmf",
            Variant::NmfSmc => "nmf_smc",
            Variant::GnmfSmc => "gnmf_smc",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Nmf => "NMF",
            Variant::Gnmf => "GNMF",
            Variant::NmfSmc => "NMF-SMC",
            Variant::GnmfSmc => "GNMF-SMC",
        })
    }
}

impl FromStr for Variant {
    type Err = UnmixError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "nmf" => Ok(Variant::Nmf),
            "gnmf" => Ok(Variant::Gnmf),
            "nmf_smc" => Ok(Variant::NmfSmc),
            "gnmf_smc" => Ok(Variant::GnmfSmc),
            other => Err(UnmixError::Config(format!("unknown variant `{other}`"))),
        }
    }
}

/// How the abundance sum-to-one constraint is enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SumToOne {
    Off,
    /// Rescale every abundance column after each iteration.
    ColumnNormalize,
    /// Append a constant row `delta` to both `Y` and `W`.
    DeltaAugmentation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    UniformRandom,
    DataColumns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnmixConfig {
    pub endmember_count: usize,
    pub variant: Variant,
    pub alpha: f64,
    pub beta: f64,
    pub sigma1: f64,
    pub neighbors: usize,
    pub max_iterations: usize,
    pub objective_tolerance: f64,
    pub seed: u64,
    pub sum_to_one: SumToOne,
    pub delta: f64,
    pub init: InitStrategy,
}

impl Default for UnmixConfig {
    fn default() -> Self {
        UnmixConfig {
            endmember_count: 4,
            variant: Variant::GnmfSmc,
            alpha: 0.1,
            beta: 0.1,
            sigma1: 2.0,
            neighbors: 5,
            max_iterations: 500,
            objective_tolerance: 1e-6,
            seed: 0,
            sum_to_one: SumToOne::ColumnNormalize,
            delta: 10.0,
            init: InitStrategy::UniformRandom,
        }
    }
}

impl UnmixConfig {
    pub fn for_variant(variant: Variant, endmember_count: usize) -> Self {
        UnmixConfig {
            variant,
            endmember_count,
            ..Default::default()
        }
    }

    /// Graph weight actually applied: zero for variants without the graph term.
    pub fn effective_alpha(&self) -> f64 {
        if self.variant.uses_graph() {
            self.alpha
        } else {
            0.0
        }
    }

    /// Sparseness weight actually applied.
    pub fn effective_beta(&self) -> f64 {
        if self.variant.uses_sparseness() {
            self.beta
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(UnmixError::Parameter(msg));
        if self.endmember_count == 0 {
            return bad("endmember_count must be at least 1".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be finite and ≥ 0, got {}", self.alpha));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be finite and ≥ 0, got {}", self.beta));
        }
        if !(self.sigma1 > 0.0 && self.sigma1.is_finite()) {
            return bad(format!("sigma1 must be finite and > 0, got {}", self.sigma1));
        }
        if self.neighbors == 0 {
            return bad("neighbors must be at least 1".into());
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1".into());
        }
        if !(self.objective_tolerance > 0.0) {
            return bad(format!(
                "objective_tolerance must be > 0, got {}",
                self.objective_tolerance
            ));
        }
        if self.sum_to_one == SumToOne::DeltaAugmentation && !(self.delta > 0.0) {
            return bad(format!("delta must be > 0, got {}", self.delta));
        }
        if self.variant.uses_sparseness() && self.endmember_count < 2 {
            return bad("sparseness variants need at least 2 endmembers".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn ones_scene_is_valid() {
        let scene = HyperspectralScene::new_unchecked(Array2::ones((3, 4)), None, None);
        assert!(validate_scene(&scene).is_empty());
    }

    #[test]
    fn negative_entry_reports_first_position() {
        let mut data = Array2::ones((3, 4));
        data[[1, 2]] = -0.5;
        data[[2, 3]] = -1.0;
        let scene = HyperspectralScene::new_unchecked(data, None, None);
        let v = validate_scene(&scene);
        assert_eq!(
            v,
            vec![Violation::Negative {
                row: 1,
                col: 2,
                value: -0.5
            }]
        );
    }

    #[test]
    fn spatial_shape_mismatch() {
        let scene = HyperspectralScene::new_unchecked(Array2::ones((2, 5)), Some((2, 3)), None);
        let v = validate_scene(&scene);
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().contains("rows·cols ≠ M"));
    }

    #[test]
    fn empty_and_nan_scenes_are_flagged() {
        let scene = HyperspectralScene::new_unchecked(Array2::zeros((0, 3)), None, None);
        assert!(matches!(validate_scene(&scene)[0], Violation::Empty { .. }));
        let mut data = Array2::ones((2, 2));
        data[[0, 1]] = f64::NAN;
        assert!(HyperspectralScene::new(data).is_err());
    }

    #[test]
    fn column_normalize_examples() {
        let h = AbundanceMatrix::new(array![[2.0, 0.0, 1.0], [2.0, 0.0, 3.0]]).unwrap();
        let n = column_normalize(&h);
        assert!(n.is_normalized());
        let f = n.fractions();
        assert_eq!(f.column(0).to_vec(), vec![0.5, 0.5]);
        assert_eq!(f.column(1).to_vec(), vec![0.5, 0.5]);
        assert_eq!(f.column(2).to_vec(), vec![0.25, 0.75]);
    }

    #[test]
    fn zero_signature_rejected() {
        assert!(EndmemberMatrix::new(array![[1.0, 0.0], [2.0, 0.0]]).is_err());
    }

    #[test]
    fn normalized_constructor_checks_sums() {
        assert!(AbundanceMatrix::normalized(array![[0.5], [0.5]]).is_ok());
        assert!(AbundanceMatrix::normalized(array![[0.5], [0.6]]).is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.key().parse::<Variant>().unwrap(), v);
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
    }

    #[test]
    fn ablation_weights() {
        let mut c = UnmixConfig::for_variant(Variant::Nmf, 3);
        assert_eq!((c.effective_alpha(), c.effective_beta()), (0.0, 0.0));
        c.variant = Variant::Gnmf;
        assert_eq!((c.effective_alpha(), c.effective_beta()), (0.1, 0.0));
        c.variant = Variant::NmfSmc;
        assert_eq!((c.effective_alpha(), c.effective_beta()), (0.0, 0.1));
    }

    fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Array2<f64>> {
        (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
            proptest::collection::vec(0.0f64..100.0, r * c)
                .prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(m in matrix(6, 8)) {
            let h = AbundanceMatrix::new(m).unwrap();
            let once = column_normalize(&h);
            let twice = column_normalize(&once);
            for (a, b) in once.fractions().iter().zip(twice.fractions().iter()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn normalize_preserves_argmax(m in matrix(6, 8)) {
            let h = AbundanceMatrix::new(m.clone()).unwrap();
            let n = column_normalize(&h);
            for (orig, norm) in m.columns().into_iter().zip(n.fractions().columns()) {
                if orig.sum() <= 0.0 { continue; }
                let max_o = orig.iter().cloned().fold(f64::MIN, f64::max);
                let max_n = norm.iter().cloned().fold(f64::MIN, f64::max);
                for (a, b) in orig.iter().zip(norm.iter()) {
                    prop_assert_eq!(*a == max_o, *b == max_n);
                }
            }
        }

        #[test]
        fn nonnegative_scenes_validate(m in matrix(6, 8)) {
            let scene = HyperspectralScene::new_unchecked(m, None, None);
            prop_assert!(validate_scene(&scene).is_empty());
        }
    }
}
