//! Synthetic mixed-pixel scenes: label map → class signatures →
//! block downsampling (mixed pixels with exact abundances) → Gaussian noise.

use ndarray::{Array1, Array2};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, UnmixError};
use crate::metrics::sad;
use crate::model::{AbundanceMatrix, EndmemberMatrix, HyperspectralScene};

/// Minimum pairwise spectral angle between synthesized signatures.
pub const MIN_LIBRARY_SEPARATION: f64 = 0.1;
const LIBRARY_RETRIES: usize = 100;
/// Peak value of every synthesized signature (reflectance units).
pub const SYNTHETIC_PEAK: f64 = 1.0;
pub const WAVELENGTH_RANGE_UM: (f64, f64) = (0.4, 2.5);

/// Independent random streams derived from one seed.
#[derive(Clone, Copy)]
enum Stream {
    LabelMap = 1,
    Library = 2,
    Noise = 3,
}

fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthMap {
    rows: usize,
    cols: usize,
    /// Row-major; `None` marks background.
    labels: Vec<Option<usize>>,
    class_count: usize,
    class_names: Option<Vec<String>>,
}

impl GroundTruthMap {
    pub fn new(
        rows: usize,
        cols: usize,
        labels: Vec<Option<usize>>,
        class_count: usize,
        class_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if labels.len() != rows * cols {
            return Err(UnmixError::dims("label map size", rows * cols, labels.len()));
        }
        if let Some(bad) = labels.iter().flatten().find(|&&k| k >= class_count) {
            return Err(UnmixError::Parameter(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        if let Some(names) = &class_names {
            if names.len() != class_count {
                return Err(UnmixError::dims("class names", class_count, names.len()));
            }
        }
        Ok(GroundTruthMap {
            rows,
            cols,
            labels,
            class_count,
            class_names,
        })
    }

    /// Infers the class count as one more than the largest label.
    pub fn from_labels(rows: usize, cols: usize, labels: Vec<Option<usize>>) -> Result<Self> {
        let k = labels.iter().flatten().max().map_or(0, |m| m + 1);
        Self::new(rows, cols, labels, k, None)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, r: usize, c: usize) -> Option<usize> {
        self.labels[r * self.cols + c]
    }

    /// Classes that occur at least once, ascending.
    pub fn used_classes(&self) -> Vec<usize> {
        let mut seen = vec![false; self.class_count];
        for k in self.labels.iter().flatten() {
            seen[*k] = true;
        }
        (0..self.class_count).filter(|&k| seen[k]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapStyle {
    /// Rectangular tiles in a near-square grid.
    Blocks,
    /// Nearest of K seeded sites.
    Voronoi,
}

pub fn generate_label_map(
    rows: usize,
    cols: usize,
    classes: usize,
    seed: u64,
    style: MapStyle,
) -> Result<GroundTruthMap> {
    if classes == 0 || rows == 0 || cols == 0 {
        return Err(UnmixError::Parameter(
            "label map needs rows, cols and classes ≥ 1".into(),
        ));
    }
    let n = rows * cols;
    if classes > n {
        return Err(UnmixError::Parameter(format!(
            "{classes} classes cannot all appear in a {rows}×{cols} map"
        )));
    }
    let labels = match style {
        MapStyle::Blocks => block_labels(rows, cols, classes),
        MapStyle::Voronoi => {
            let mut rng = rng_for(seed, Stream::LabelMap);
            let sites: Vec<(f64, f64)> = index::sample(&mut rng, n, classes)
                .into_iter()
                .map(|p| ((p / cols) as f64, (p % cols) as f64))
                .collect();
            (0..n)
                .map(|p| {
                    let (r, c) = ((p / cols) as f64, (p % cols) as f64);
                    let mut best = (f64::INFINITY, 0);
                    for (k, &(sr, sc)) in sites.iter().enumerate() {
                        let d = (r - sr).powi(2) + (c - sc).powi(2);
                        if d < best.0 {
                            best = (d, k);
                        }
                    }
                    Some(best.1)
                })
                .collect()
        }
    };
    GroundTruthMap::new(rows, cols, labels, classes, None)
}

fn block_labels(rows: usize, cols: usize, classes: usize) -> Vec<Option<usize>> {
    let grid_cols = (classes as f64).sqrt().ceil() as usize;
    let grid_rows = classes.div_ceil(grid_cols);
    if grid_rows <= rows && grid_cols <= cols {
        (0..rows * cols)
            .map(|p| {
                let tr = (p / cols) * grid_rows / rows;
                let tc = (p % cols) * grid_cols / cols;
                Some((tr * grid_cols + tc) % classes)
            })
            .collect()
    } else {
        // Too few pixels for a 2-D tiling: stripe the row-major order.
        let n = rows * cols;
        (0..n).map(|p| Some(p * classes / n)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralLibrary {
    entries: Vec<(String, Vec<f64>)>,
    wavelengths: Option<Vec<f64>>,
}

impl SpectralLibrary {
    pub fn new(entries: Vec<(String, Vec<f64>)>, wavelengths: Option<Vec<f64>>) -> Result<Self> {
        let bands = entries.first().map_or(0, |e| e.1.len());
        for (name, spectrum) in &entries {
            if spectrum.len() != bands {
                return Err(UnmixError::dims(format!("spectrum `{name}`"), bands, spectrum.len()));
            }
            if spectrum.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(UnmixError::Parameter(format!(
                    "spectrum `{name}` has negative or non-finite values"
                )));
            }
        }
        if let Some(w) = &wavelengths {
            if w.len() != bands {
                return Err(UnmixError::dims("library wavelengths", bands, w.len()));
            }
        }
        Ok(SpectralLibrary {
            entries,
            wavelengths,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn band_count(&self) -> usize {
        self.entries.first().map_or(0, |e| e.1.len())
    }

    pub fn entries(&self) -> &[(String, Vec<f64>)] {
        &self.entries
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    /// Signatures of the given entries as the columns of an endmember matrix.
    pub fn endmembers(&self, which: &[usize]) -> Result<EndmemberMatrix> {
        let l = self.band_count();
        let mut m = Array2::zeros((l, which.len()));
        let mut names = Vec::with_capacity(which.len());
        for (col, &k) in which.iter().enumerate() {
            let (name, s) = self.entries.get(k).ok_or_else(|| {
                UnmixError::Parameter(format!("class {k} has no library spectrum"))
            })?;
            m.column_mut(col).assign(&Array1::from(s.clone()));
            names.push(name.clone());
        }
        EndmemberMatrix::with_names(m, Some(names))
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn random_spectrum(rng: &mut ChaCha8Rng, bands: usize) -> Vec<f64> {
    let l = bands as f64;
    let baseline = rng.random_range(0.02..0.1);
    let mut s = vec![baseline; bands];
    for _ in 0..rng.random_range(2..=4) {
        let height = rng.random_range(0.2..1.0);
        let center = rng.random_range(0.0..l);
        let width = rng.random_range(0.05 * l..=0.3 * l).max(0.5);
        for (i, v) in s.iter_mut().enumerate() {
            let z = (i as f64 - center) / width;
            *v += height * (-0.5 * z * z).exp();
        }
    }
    let peak = s.iter().cloned().fold(0.0, f64::max);
    s.iter_mut().for_each(|v| *v *= SYNTHETIC_PEAK / peak);
    s
}

/// `classes` smooth positive spectra, pairwise at least
/// [`MIN_LIBRARY_SEPARATION`] radians apart.
pub fn synthesize_library(classes: usize, bands: usize, seed: u64) -> Result<SpectralLibrary> {
    if classes == 0 || bands == 0 {
        return Err(UnmixError::Parameter("library needs classes and bands ≥ 1".into()));
    }
    let mut rng = rng_for(seed, Stream::Library);
    let mut spectra: Vec<Vec<f64>> = Vec::with_capacity(classes);
    let mut retries = 0;
    while spectra.len() < classes {
        let candidate = random_spectrum(&mut rng, bands);
        let c = Array1::from(candidate.clone());
        let separated = spectra.iter().all(|s| {
            sad(Array1::from(s.clone()).view(), c.view()).is_ok_and(|a| a >= MIN_LIBRARY_SEPARATION)
        });
        if separated {
            spectra.push(candidate);
        } else {
            retries += 1;
            if retries > LIBRARY_RETRIES {
                return Err(UnmixError::Parameter(format!(
                    "could not separate {classes} spectra over {bands} bands by {MIN_LIBRARY_SEPARATION} rad"
                )));
            }
        }
    }
    let entries = spectra
        .into_iter()
        .enumerate()
        .map(|(k, s)| (format!("material_{k}"), s))
        .collect();
    SpectralLibrary::new(
        entries,
        Some(linspace(WAVELENGTH_RANGE_UM.0, WAVELENGTH_RANGE_UM.1, bands)),
    )
}

/// Replaces every labeled pixel with its class signature. Background pixels
/// get a zero spectrum.
pub fn rasterize(map: &GroundTruthMap, library: &SpectralLibrary) -> Result<HyperspectralScene> {
    let l = library.band_count();
    if let Some(&k) = map.used_classes().iter().find(|&&k| k >= library.len()) {
        return Err(UnmixError::Parameter(format!("class {k} has no library spectrum")));
    }
    let mut data = Array2::zeros((l, map.labels.len()));
    for (p, label) in map.labels.iter().enumerate() {
        if let Some(k) = label {
            data.column_mut(p).assign(&Array1::from(library.entries[*k].1.clone()));
        }
    }
    HyperspectralScene::with_metadata(
        data,
        Some((map.rows, map.cols)),
        library.wavelengths.clone(),
    )
}

/// Averages `factor × factor` blocks. Returns the mixed scene and the exact
/// per-class fractions (rows indexed by class). Background pixels do not
/// count; fully background blocks are dropped.
pub fn downsample(
    scene: &HyperspectralScene,
    map: &GroundTruthMap,
    factor: usize,
) -> Result<(HyperspectralScene, AbundanceMatrix)> {
    if factor == 0 {
        return Err(UnmixError::Parameter("downsampling factor must be ≥ 1".into()));
    }
    if scene.pixel_count() != map.rows * map.cols {
        return Err(UnmixError::dims(
            "scene pixels vs label map",
            map.rows * map.cols,
            scene.pixel_count(),
        ));
    }
    let (out_rows, out_cols) = (map.rows.div_ceil(factor), map.cols.div_ceil(factor));
    let l = scene.band_count();
    let k = map.class_count;
    let mut spectra: Vec<Array1<f64>> = Vec::with_capacity(out_rows * out_cols);
    let mut fractions: Vec<Vec<f64>> = Vec::with_capacity(out_rows * out_cols);
    for br in 0..out_rows {
        for bc in 0..out_cols {
            let mut sum = Array1::zeros(l);
            let mut counts = vec![0usize; k];
            let mut members = 0usize;
            for r in br * factor..((br + 1) * factor).min(map.rows) {
                for c in bc * factor..((bc + 1) * factor).min(map.cols) {
                    if let Some(class) = map.label(r, c) {
                        sum += &scene.pixel(r * map.cols + c);
                        counts[class] += 1;
                        members += 1;
                    }
                }
            }
            if members == 0 {
                continue;
            }
            let n = members as f64;
            spectra.push(sum / n);
            fractions.push(counts.iter().map(|&c| c as f64 / n).collect());
        }
    }
    let m = spectra.len();
    let mut data = Array2::zeros((l, m));
    let mut abundances = Array2::zeros((k, m));
    for (j, (s, f)) in spectra.into_iter().zip(fractions).enumerate() {
        data.column_mut(j).assign(&s);
        abundances.column_mut(j).assign(&Array1::from(f));
    }
    let shape = (m == out_rows * out_cols).then_some((out_rows, out_cols));
    let scene = HyperspectralScene::with_metadata(data, shape, scene.wavelengths().map(<[f64]>::to_vec))?;
    Ok((scene, AbundanceMatrix::normalized(abundances)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub snr_db: f64,
    pub sigma: f64,
    pub signal_power: f64,
    /// Entries that went negative and were clamped to zero.
    pub clamped: usize,
    pub clamp_rate: f64,
}

/// Adds i.i.d. Gaussian noise with variance `mean(Y²) / 10^(snr/10)`, then
/// clamps negative values to zero. `snr_db = +∞` leaves the scene unchanged.
pub fn add_noise(
    scene: &HyperspectralScene,
    snr_db: f64,
    seed: u64,
) -> Result<(HyperspectralScene, NoiseReport)> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(UnmixError::Parameter(format!("invalid SNR {snr_db} dB")));
    }
    let data = scene.data();
    let signal_power = data.iter().map(|v| v * v).sum::<f64>() / data.len() as f64;
    if snr_db == f64::INFINITY {
        let report = NoiseReport {
            snr_db,
            sigma: 0.0,
            signal_power,
            clamped: 0,
            clamp_rate: 0.0,
        };
        return Ok((scene.clone(), report));
    }
    let sigma = (signal_power / 10f64.powf(snr_db / 10.0)).sqrt();
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| UnmixError::Parameter(format!("noise distribution: {e}")))?;
    let mut rng = rng_for(seed, Stream::Noise);
    let mut clamped = 0;
    let noisy = data.mapv(|v| {
        let x = v + normal.sample(&mut rng);
        if x < 0.0 {
            clamped += 1;
            0.0
        } else {
            x
        }
    });
    let report = NoiseReport {
        snr_db,
        sigma,
        signal_power,
        clamped,
        clamp_rate: clamped as f64 / data.len() as f64,
    };
    let noisy = HyperspectralScene::with_metadata(
        noisy,
        scene.spatial_shape(),
        scene.wavelengths().map(<[f64]>::to_vec),
    )?;
    Ok((noisy, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub rows: usize,
    pub cols: usize,
    pub classes: usize,
    pub bands: usize,
    pub style: MapStyle,
    pub factor: usize,
    /// `+∞` disables noise.
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            rows: 145,
            cols: 145,
            classes: 4,
            bands: 200,
            style: MapStyle::Voronoi,
            factor: 5,
            snr_db: 30.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedScene {
    pub scene: HyperspectralScene,
    pub true_endmembers: EndmemberMatrix,
    pub true_abundances: AbundanceMatrix,
    pub map: GroundTruthMap,
    pub library: SpectralLibrary,
    pub noise: NoiseReport,
    pub snr_db: f64,
    pub factor: usize,
    pub seed: u64,
}

/// Generates the label map and library from the config, then runs the pipeline.
pub fn simulate(config: &SimConfig) -> Result<SimulatedScene> {
    let map = generate_label_map(config.rows, config.cols, config.classes, config.seed, config.style)?;
    let library = synthesize_library(config.classes, config.bands, config.seed)?;
    simulate_from(config, map, library)
}

/// Runs rasterize → downsample → noise on a given map and library. Only
/// `factor`, `snr_db` and `seed` are read from the config.
pub fn simulate_from(
    config: &SimConfig,
    map: GroundTruthMap,
    library: SpectralLibrary,
) -> Result<SimulatedScene> {
    let highres = rasterize(&map, &library)?;
    let (mixed, fractions) = downsample(&highres, &map, config.factor)?;
    let used = map.used_classes();
    let true_endmembers = library.endmembers(&used)?;
    let rows = fractions.fractions().select(ndarray::Axis(0), &used);
    let true_abundances = AbundanceMatrix::normalized(rows)?;
    let (scene, noise) = add_noise(&mixed, config.snr_db, config.seed)?;
    Ok(SimulatedScene {
        scene,
        true_endmembers,
        true_abundances,
        map,
        library,
        noise,
        snr_db: config.snr_db,
        factor: config.factor,
        seed: config.seed,
    })
}
