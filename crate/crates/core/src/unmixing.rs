//! The four factorization solvers: NMF, GNMF, NMF-SMC and GNMF-SMC.
//!
//! All four minimize
//!
//! ```text
//! f(W, H) = ½‖Y − WH‖²_F + α·R(H) − β·J(H)
//! ```
//!
//! with `R` the graph regularizer and `J` the mean S-measure, and differ only
//! in which weights are zeroed. The fit and graph terms are handled by
//! multiplicative updates (the Laplacian split into its degree and adjacency
//! parts keeps numerator and denominator nonnegative). The sparseness term is
//! a reward with mixed-sign gradient, so it is applied as a projected ascent
//! step on `J` with backtracking that never lets `f` increase.

use std::fmt;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UnmixError};
use crate::graph::{knn_graph, regularizer_raw, PixelGraph, WeightScheme};
use crate::model::{
    normalize_columns_in_place, AbundanceMatrix, EndmemberMatrix, HyperspectralScene, InitStrategy,
    SumToOne, UnmixConfig,
};
use crate::sparseness::{sparseness_cost_gradient_raw, sparseness_cost_raw, SMeasureParams};

/// Lower bound kept on every factor entry and every multiplicative denominator.
pub const FLOOR: f64 = 1e-12;
/// Lower bound of the random initialization interval `(ε, 1]`.
pub const INIT_EPS: f64 = 1e-3;
/// Acceptance slack of the backtracking line search.
const LINE_SEARCH_SLACK: f64 = 1e-12;
const MIN_STEP: f64 = 1e-10;
/// Increase of the total objective that still counts as no increase.
const DESCENT_SLACK: f64 = 1e-9;
const PATIENCE: usize = 3;

/// Objective value broken into its terms. `total = fit + graph_term − sparse_term`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub total: f64,
    pub fit: f64,
    pub graph_term: f64,
    pub sparse_term: f64,
}

impl Objective {
    fn compose(fit: f64, graph_term: f64, sparse_term: f64) -> Self {
        Objective {
            total: fit + graph_term - sparse_term,
            fit,
            graph_term,
            sparse_term,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    /// The objective rose on several consecutive iterations.
    Stalled,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max_iterations",
            Termination::Stalled => "stalled",
        })
    }
}

#[derive(Debug, Clone)]
pub struct UnmixResult {
    pub endmembers: EndmemberMatrix,
    pub abundances: AbundanceMatrix,
    /// Objective at the starting point, before the first update.
    pub initial: Objective,
    /// Objective after each iteration.
    pub trace: Vec<Objective>,
    pub iterations_run: usize,
    pub termination: Termination,
    pub seed: u64,
    pub config: UnmixConfig,
}

/// Evaluates the objective and its pieces for fixed data, graph and weights.
struct Terms<'a> {
    y: ArrayView2<'a, f64>,
    graph: Option<&'a PixelGraph>,
    alpha: f64,
    beta: f64,
    params: SMeasureParams,
}

impl<'a> Terms<'a> {
    fn new(y: ArrayView2<'a, f64>, graph: Option<&'a PixelGraph>, config: &UnmixConfig) -> Result<Self> {
        if config.variant.uses_graph() && graph.is_none() {
            return Err(UnmixError::Parameter(format!(
                "variant {} needs a pixel graph",
                config.variant
            )));
        }
        if let Some(g) = graph {
            if g.node_count() != y.ncols() {
                return Err(UnmixError::dims("graph nodes vs pixels", y.ncols(), g.node_count()));
            }
        }
        Ok(Terms {
            y,
            graph: if config.variant.uses_graph() { graph } else { None },
            alpha: config.effective_alpha(),
            beta: config.effective_beta(),
            params: SMeasureParams::new(config.sigma1)?,
        })
    }

    fn check_dims(&self, w: &Array2<f64>, h: &Array2<f64>) -> Result<()> {
        let (l, m) = self.y.dim();
        if w.nrows() != l {
            return Err(UnmixError::dims("endmember rows vs bands", l, w.nrows()));
        }
        if h.ncols() != m {
            return Err(UnmixError::dims("abundance columns vs pixels", m, h.ncols()));
        }
        if w.ncols() != h.nrows() {
            return Err(UnmixError::dims("endmember count of W vs H", w.ncols(), h.nrows()));
        }
        Ok(())
    }

    fn evaluate(&self, w: &Array2<f64>, h: &Array2<f64>) -> Result<Objective> {
        let residual = &self.y - &w.dot(h);
        let fit = 0.5 * residual.iter().map(|r| r * r).sum::<f64>();
        let graph_term = match self.graph {
            Some(g) if self.alpha > 0.0 => self.alpha * regularizer_raw(h.view(), g),
            _ => 0.0,
        };
        let sparse_term = if self.beta > 0.0 {
            self.beta * sparseness_cost_raw(h.view(), &self.params)?
        } else {
            0.0
        };
        Ok(Objective::compose(fit, graph_term, sparse_term))
    }

    /// `H·A` and `H·D` for the graph split; zero when the graph is inactive.
    fn graph_parts(&self, h: &Array2<f64>) -> Option<(Array2<f64>, Array2<f64>)> {
        let g = self.graph.filter(|_| self.alpha > 0.0)?;
        let ha = g.weights().right_multiply(h.view());
        let mut hd = h.clone();
        for (mut col, &d) in hd.columns_mut().into_iter().zip(g.degrees()) {
            col *= d;
        }
        Some((ha, hd))
    }

    /// Change of the total objective when `H` moves by `delta` with `W` fixed.
    /// `wtw = WᵀW`, `grad_fit = WᵀWH − WᵀY`.
    fn change(
        &self,
        h: &Array2<f64>,
        candidate: &Array2<f64>,
        wtw: &Array2<f64>,
        grad_fit: &Array2<f64>,
        j_before: f64,
    ) -> Result<f64> {
        let delta = candidate - h;
        let d_fit = (grad_fit * &delta).sum() + 0.5 * (&wtw.dot(&delta) * &delta).sum();
        let d_graph = match self.graph {
            Some(g) if self.alpha > 0.0 => {
                self.alpha * (regularizer_raw(candidate.view(), g) - regularizer_raw(h.view(), g))
            }
            _ => 0.0,
        };
        let d_sparse = if self.beta > 0.0 {
            self.beta * (sparseness_cost_raw(candidate.view(), &self.params)? - j_before)
        } else {
            0.0
        };
        Ok(d_fit + d_graph - d_sparse)
    }
}

/// Evaluates the combined objective. A graph is required for graph variants.
pub fn objective(
    y: &Array2<f64>,
    w: &Array2<f64>,
    h: &Array2<f64>,
    graph: Option<&PixelGraph>,
    config: &UnmixConfig,
) -> Result<Objective> {
    let terms = Terms::new(y.view(), graph, config)?;
    terms.check_dims(w, h)?;
    terms.evaluate(w, h)
}

/// Gradient of the combined objective with respect to `H`:
/// `WᵀWH − WᵀY + 2α·H·L − β·∇J(H)`.
pub fn objective_gradient_h(
    y: &Array2<f64>,
    w: &Array2<f64>,
    h: &Array2<f64>,
    graph: Option<&PixelGraph>,
    config: &UnmixConfig,
) -> Result<Array2<f64>> {
    let terms = Terms::new(y.view(), graph, config)?;
    terms.check_dims(w, h)?;
    let mut grad = w.t().dot(w).dot(h) - w.t().dot(y);
    if let Some((ha, hd)) = terms.graph_parts(h) {
        grad.scaled_add(2.0 * terms.alpha, &(hd - ha));
    }
    if terms.beta > 0.0 {
        grad.scaled_add(-terms.beta, &sparseness_cost_gradient_raw(h.view(), &terms.params)?);
    }
    Ok(grad)
}

/// Strictly positive starting factors, deterministic per seed.
pub fn init_factors(
    y: &Array2<f64>,
    endmembers: usize,
    seed: u64,
    strategy: InitStrategy,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let (l, m) = y.dim();
    if endmembers == 0 || endmembers > l.min(m) {
        return Err(UnmixError::Parameter(format!(
            "endmember count {endmembers} must be in 1..={} for a {l}×{m} scene",
            l.min(m)
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // 1 − u maps [0, 1) onto (0, 1].
    let draw = |rng: &mut ChaCha8Rng| INIT_EPS + (1.0 - INIT_EPS) * (1.0 - rng.random::<f64>());
    let w = match strategy {
        InitStrategy::UniformRandom => Array2::from_shape_simple_fn((l, endmembers), || draw(&mut rng)),
        InitStrategy::DataColumns => {
            let picks = index::sample(&mut rng, m, endmembers).into_vec();
            let mut w = Array2::zeros((l, endmembers));
            for (k, &j) in picks.iter().enumerate() {
                w.column_mut(k).assign(&y.column(j).mapv(|v| v + INIT_EPS));
            }
            w
        }
    };
    let h = Array2::from_shape_simple_fn((endmembers, m), || draw(&mut rng));
    Ok((w, h))
}

fn multiplicative(x: &mut Array2<f64>, numer: &Array2<f64>, denom: &Array2<f64>) {
    Zip::from(x).and(numer).and(denom).for_each(|x, &n, &d| {
        *x = (*x * n / d.max(FLOOR)).max(FLOOR);
    });
}

fn check_finite(m: &Array2<f64>, what: &str, iteration: usize) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(UnmixError::Numerical {
            iteration,
            message: format!("non-finite entry in {what}"),
        })
    }
}

/// One iteration: multiplicative `W` update, multiplicative `H` update for
/// the fit and graph terms, then a backtracked sparseness step on `H`.
///
/// If `fixed_last_row` is set, the last row of `W` is pinned to that value
/// (sum-to-one augmentation).
fn step(
    terms: &Terms<'_>,
    w: &Array2<f64>,
    h: &Array2<f64>,
    fixed_last_row: Option<f64>,
    iteration: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let y = terms.y;

    let mut w_next = w.clone();
    let w_denom = w.dot(&h.dot(&h.t()));
    multiplicative(&mut w_next, &y.dot(&h.t()), &w_denom);
    if let Some(delta) = fixed_last_row {
        let last = w_next.nrows() - 1;
        w_next.row_mut(last).fill(delta);
    }
    check_finite(&w_next, "W", iteration)?;

    let wty = w_next.t().dot(&y);
    let wtw = w_next.t().dot(&w_next);
    let mut numer = wty.clone();
    let mut denom = wtw.dot(h);
    if let Some((ha, hd)) = terms.graph_parts(h) {
        let a2 = 2.0 * terms.alpha;
        numer.scaled_add(a2, &ha);
        denom.scaled_add(a2, &hd);
    }
    let mut h_next = h.clone();
    multiplicative(&mut h_next, &numer, &denom);
    check_finite(&h_next, "H", iteration)?;

    if terms.beta > 0.0 {
        // The multiplicative step only guarantees descent of the fit and graph
        // terms; keep the old H if the sparseness reward made the total worse.
        let j_old = sparseness_cost_raw(h.view(), &terms.params)?;
        let grad_fit = wtw.dot(h) - &wty;
        if terms.change(h, &h_next, &wtw, &grad_fit, j_old)? > LINE_SEARCH_SLACK {
            h_next = h.clone();
        }
        h_next = sparseness_step(terms, h_next, &wtw, &wty)?;
        check_finite(&h_next, "H", iteration)?;
    }
    Ok((w_next, h_next))
}

fn sparseness_step(
    terms: &Terms<'_>,
    h: Array2<f64>,
    wtw: &Array2<f64>,
    wty: &Array2<f64>,
) -> Result<Array2<f64>> {
    let direction = sparseness_cost_gradient_raw(h.view(), &terms.params)?;
    let j_before = sparseness_cost_raw(h.view(), &terms.params)?;
    let grad_fit = wtw.dot(&h) - wty;
    let mut eta = 1.0;
    while eta >= MIN_STEP {
        let scale = terms.beta * eta;
        let mut candidate = h.clone();
        Zip::from(&mut candidate)
            .and(&direction)
            .for_each(|c, &g| *c = (*c + scale * g).max(FLOOR));
        if terms.change(&h, &candidate, wtw, &grad_fit, j_before)? <= LINE_SEARCH_SLACK {
            return Ok(candidate);
        }
        eta *= 0.5;
    }
    Ok(h)
}

/// One solver iteration on explicit matrices. `sum_to_one` is not applied
/// here; see [`solve`].
pub fn update_step(
    y: &Array2<f64>,
    w: &Array2<f64>,
    h: &Array2<f64>,
    graph: Option<&PixelGraph>,
    config: &UnmixConfig,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let terms = Terms::new(y.view(), graph, config)?;
    terms.check_dims(w, h)?;
    if w.iter().chain(h.iter()).any(|&v| !(v >= FLOOR)) {
        return Err(UnmixError::Parameter(format!(
            "factors must be ≥ {FLOOR} before an update"
        )));
    }
    step(&terms, w, h, None, 0)
}

/// Builds the pixel graph the configuration asks for, if any.
pub fn build_graph(scene: &HyperspectralScene, config: &UnmixConfig) -> Result<Option<PixelGraph>> {
    if config.variant.uses_graph() {
        knn_graph(scene, config.neighbors, WeightScheme::ZeroOne).map(Some)
    } else {
        Ok(None)
    }
}

/// Runs the configured solver from a seeded initialization.
pub fn solve(scene: &HyperspectralScene, config: &UnmixConfig) -> Result<UnmixResult> {
    config.validate()?;
    let (w0, h0) = init_factors(scene.data(), config.endmember_count, config.seed, config.init)?;
    let graph = build_graph(scene, config)?;
    solve_with(scene, config, graph.as_ref(), w0, h0)
}

/// Runs the solver from explicit starting factors and an explicit graph.
pub fn solve_with(
    scene: &HyperspectralScene,
    config: &UnmixConfig,
    graph: Option<&PixelGraph>,
    w0: Array2<f64>,
    h0: Array2<f64>,
) -> Result<UnmixResult> {
    config.validate()?;
    if scene.pixel_count() == 0 || scene.band_count() == 0 {
        return Err(UnmixError::Parameter("cannot unmix an empty scene".into()));
    }
    let bands = scene.band_count();
    let pixels = scene.pixel_count();
    let (y, mut w, fixed) = match config.sum_to_one {
        SumToOne::DeltaAugmentation => {
            let d = config.delta;
            let y = concatenate![Axis(0), scene.data().view(), Array2::from_elem((1, pixels), d)];
            let w = concatenate![Axis(0), w0.view(), Array2::from_elem((1, w0.ncols()), d)];
            (y, w, Some(d))
        }
        _ => (scene.data().clone(), w0, None),
    };
    let mut h = h0;
    let terms = Terms::new(y.view(), graph, config)?;
    terms.check_dims(&w, &h)?;
    if w.iter().chain(h.iter()).any(|&v| !(v >= FLOOR) || !v.is_finite()) {
        return Err(UnmixError::Parameter(format!(
            "initial factors must be finite and ≥ {FLOOR}"
        )));
    }

    let initial = terms.evaluate(&w, &h)?;
    let mut trace = Vec::with_capacity(config.max_iterations);
    let mut previous = initial.total;
    let mut small_changes = 0;
    let mut increases = 0;
    let mut termination = Termination::MaxIterations;

    for iteration in 1..=config.max_iterations {
        let (w_next, mut h_next) = step(&terms, &w, &h, fixed, iteration)?;
        if config.sum_to_one == SumToOne::ColumnNormalize {
            normalize_columns_in_place(&mut h_next);
            h_next.mapv_inplace(|v| v.max(FLOOR));
        }
        w = w_next;
        h = h_next;
        let current = terms.evaluate(&w, &h)?;
        if !current.total.is_finite() {
            return Err(UnmixError::Numerical {
                iteration,
                message: "objective is not finite".into(),
            });
        }
        trace.push(current);

        let change = (current.total - previous).abs() / previous.abs().max(1e-30);
        small_changes = if change < config.objective_tolerance { small_changes + 1 } else { 0 };
        increases = if current.total > previous + DESCENT_SLACK { increases + 1 } else { 0 };
        previous = current.total;
        if small_changes >= PATIENCE {
            termination = Termination::Converged;
            break;
        }
        if increases >= PATIENCE {
            termination = Termination::Stalled;
            break;
        }
    }

    let w_out = w.slice(s![..bands, ..]).to_owned();
    let abundances = match config.sum_to_one {
        SumToOne::Off => AbundanceMatrix::new(h)?,
        _ => {
            normalize_columns_in_place(&mut h);
            AbundanceMatrix::normalized(h)?
        }
    };
    Ok(UnmixResult {
        endmembers: EndmemberMatrix::new(w_out)?,
        abundances,
        initial,
        iterations_run: trace.len(),
        trace,
        termination,
        seed: config.seed,
        config: config.clone(),
    })
}
