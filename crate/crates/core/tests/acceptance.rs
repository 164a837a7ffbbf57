//! Acceptance gate. Runs every criterion, prints one `PASS` or `FAIL` line
//! each, and exits nonzero if any failed.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use unmix_core::cli::{run_benchmark, RunConfig};
use unmix_core::graph::{graph_regularizer, knn_graph, laplacian, laplacian_trace, WeightScheme};
use unmix_core::metrics::{aad, optimal_assignment, sad, sad_cost_matrix};
use unmix_core::simdata::{simulate, SimConfig};
use unmix_core::sparseness::{s_measure, sparseness_cost, sparseness_cost_gradient, SMeasureParams};
use unmix_core::unmixing::{objective, objective_gradient_h};
use unmix_core::{
    evaluate, solve, AbundanceMatrix, EndmemberMatrix, HyperspectralScene, UnmixConfig, Variant,
};

fn verdict(id: u32, pass: bool, detail: &str) -> bool {
    println!("{} criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn main() {
    let criteria: [(u32, fn() -> bool); 10] = [
        (1, criterion_01_proposed_method_beats_plain_nmf),
        (2, criterion_02_monotone_descent),
        (3, criterion_03_exact_recovery_on_separable_data),
        (4, criterion_04_s_measure_endpoints_and_scale_invariance),
        (5, criterion_05_gradients_match_finite_differences),
        (6, criterion_06_graph_regularizer_is_laplacian_trace),
        (7, criterion_07_metric_correctness),
        (8, criterion_08_simulation_consistency),
        (9, criterion_09_ablation_collapse),
        (10, criterion_10_manifest_reruns_are_bit_identical),
    ];
    let mut failed = 0;
    for (id, run) in criteria {
        let pass = std::panic::catch_unwind(run).unwrap_or_else(|_| verdict(id, false, "panicked"));
        failed += usize::from(!pass);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn criterion_01_proposed_method_beats_plain_nmf() -> bool {
    let cfg = RunConfig {
        seeds: 10,
        ..RunConfig::default()
    };
    let start = Instant::now();
    let report = run_benchmark(&cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    print!("{}", report.render_grid());
    let nmf = report.row(Variant::Nmf).unwrap();
    let prop = report.row(Variant::GnmfSmc).unwrap();
    let sad_gain = 1.0 - prop.sad_mean / nmf.sad_mean;
    let aad_gain = 1.0 - prop.aad_mean / nmf.aad_mean;
    let pass = sad_gain >= 0.10 && aad_gain >= 0.10 && secs <= 900.0;
    verdict(
        1,
        pass,
        &format!(
            "GNMF-SMC vs NMF relative gain SAD {:.1}%, AAD {:.1}% (need ≥ 10% each); {secs:.0}s for 4×10 runs",
            100.0 * sad_gain,
            100.0 * aad_gain
        ),
    )
}

fn criterion_02_monotone_descent() -> bool {
    let mut worst = f64::NEG_INFINITY;
    let mut checked = 0;
    for seed in 0..20 {
        let scene = common::random_scene(seed, 50, 200, 3);
        for variant in Variant::ALL {
            let config = UnmixConfig {
                seed,
                objective_tolerance: 1e-300,
                ..UnmixConfig::for_variant(variant, 3)
            };
            let result = solve(&scene, &config).unwrap();
            let mut prev = result.initial.total;
            for o in &result.trace {
                worst = worst.max(o.total - prev);
                prev = o.total;
                checked += 1;
            }
        }
    }
    verdict(
        2,
        worst <= 1e-9,
        &format!("largest per-step increase {worst:.3e} over {checked} steps (all four variants, 20 scenes)"),
    )
}

fn criterion_03_exact_recovery_on_separable_data() -> bool {
    let mut summary = Vec::new();
    let mut pass = true;
    for p in 2..=4 {
        for variant in Variant::ALL {
            let mut ok = 0;
            for seed in 0..10 {
                let sim = simulate(&SimConfig {
                    rows: 30,
                    cols: 30,
                    classes: p,
                    factor: 1,
                    snr_db: f64::INFINITY,
                    seed,
                    ..SimConfig::default()
                })
                .unwrap();
                let config = UnmixConfig {
                    seed,
                    ..UnmixConfig::for_variant(variant, p)
                };
                let result = solve(&sim.scene, &config).unwrap();
                let r = evaluate(&sim.true_endmembers, &sim.true_abundances, &result.endmembers, &result.abundances)
                    .unwrap();
                let max_sad = r.per_endmember_sad.iter().cloned().fold(0.0, f64::max);
                if max_sad <= 0.05 && r.rms_aad <= 0.05 {
                    ok += 1;
                }
            }
            pass &= ok >= 9;
            summary.push(format!("{variant}/P={p}: {ok}/10"));
        }
    }
    verdict(3, pass, &summary.join(", "))
}

fn criterion_04_s_measure_endpoints_and_scale_invariance() -> bool {
    let mut worst_end: f64 = 0.0;
    for sigma1 in [1.0, 2.0, 4.0] {
        let params = SMeasureParams::new(sigma1).unwrap();
        for n in 2..=50 {
            let mut one_hot = Array1::zeros(n);
            one_hot[n / 2] = 3.5;
            let uniform = Array1::from_elem(n, 0.7);
            worst_end = worst_end
                .max((s_measure(one_hot.view(), &params).unwrap() - 1.0).abs())
                .max(s_measure(uniform.view(), &params).unwrap().abs());
        }
    }
    let params = SMeasureParams::new(2.0).unwrap();
    let mut r = common::rng(4);
    let mut worst_scale: f64 = 0.0;
    for _ in 0..100 {
        let n = r.random_range(2..30);
        let x = Array1::from_shape_simple_fn(n, || r.random_range(0.0..1.0));
        let c = 10f64.powf(r.random_range(-3.0..3.0));
        let a = s_measure(x.view(), &params).unwrap();
        let b = s_measure((&x * c).view(), &params).unwrap();
        worst_scale = worst_scale.max((a - b).abs());
    }
    verdict(
        4,
        worst_end <= 1e-12 && worst_scale <= 1e-12,
        &format!("endpoint error {worst_end:.2e}, scale error {worst_scale:.2e}"),
    )
}

fn relative_error(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    let diff = (analytic - numeric).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    diff / scale
}

fn central_difference(h: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut grad = Array2::zeros(h.dim());
    for idx in ndarray::indices(h.dim()) {
        let step = 1e-6 * h[idx].abs().max(1.0);
        let mut hp = h.clone();
        let mut hm = h.clone();
        hp[idx] += step;
        hm[idx] -= step;
        grad[idx] = (f(&hp) - f(&hm)) / (2.0 * step);
    }
    grad
}

fn criterion_05_gradients_match_finite_differences() -> bool {
    let mut r = common::rng(5);
    let mut worst_sparse: f64 = 0.0;
    let mut worst_total: f64 = 0.0;
    for trial in 0..100 {
        let p = r.random_range(2..=5);
        let m = r.random_range(4..=20);
        let l = r.random_range(p..p + 10);
        let h = common::positive(&mut r, p, m, 0.05, 1.0);
        let params = SMeasureParams::new(r.random_range(1.0..4.0)).unwrap();

        let analytic = sparseness_cost_gradient(&AbundanceMatrix::new(h.clone()).unwrap(), &params).unwrap();
        let numeric = central_difference(&h, |x| {
            sparseness_cost(&AbundanceMatrix::new(x.clone()).unwrap(), &params).unwrap()
        });
        worst_sparse = worst_sparse.max(relative_error(&analytic, &numeric));

        let w = common::positive(&mut r, l, p, 0.05, 1.0);
        let y = common::positive(&mut r, l, m, 0.0, 1.0);
        let scene = HyperspectralScene::new(y.clone()).unwrap();
        let config = UnmixConfig {
            alpha: r.random_range(0.0..1.0),
            beta: r.random_range(0.0..1.0),
            sigma1: params.sigma1(),
            neighbors: 3.min(m - 1),
            seed: trial,
            ..UnmixConfig::for_variant(Variant::GnmfSmc, p)
        };
        let graph = knn_graph(&scene, config.neighbors, WeightScheme::ZeroOne).unwrap();
        let analytic = objective_gradient_h(&y, &w, &h, Some(&graph), &config).unwrap();
        let numeric = central_difference(&h, |x| objective(&y, &w, x, Some(&graph), &config).unwrap().total);
        worst_total = worst_total.max(relative_error(&analytic, &numeric));
    }
    verdict(
        5,
        worst_sparse <= 1e-5 && worst_total <= 1e-5,
        &format!("worst relative error: sparseness {worst_sparse:.2e}, full objective {worst_total:.2e}"),
    )
}

fn criterion_06_graph_regularizer_is_laplacian_trace() -> bool {
    let mut r = common::rng(6);
    let mut worst_rel: f64 = 0.0;
    let mut worst_row: f64 = 0.0;
    let mut min_quad = f64::INFINITY;
    for _ in 0..100 {
        let m = r.random_range(3..40);
        let scene = HyperspectralScene::new(common::positive(&mut r, 6, m, 0.0, 1.0)).unwrap();
        let graph = knn_graph(&scene, r.random_range(1..m.min(6)), WeightScheme::ZeroOne).unwrap();
        let lap = laplacian(&graph);
        let h = AbundanceMatrix::new(common::positive(&mut r, 3, m, 0.0, 1.0)).unwrap();
        let a = graph_regularizer(&h, &graph).unwrap();
        let b = laplacian_trace(&h, &lap).unwrap();
        worst_rel = worst_rel.max((a - b).abs() / b.abs().max(1e-300));
        for i in 0..m {
            worst_row = worst_row.max(lap.row_sum(i).abs());
        }
        let x: Vec<f64> = (0..m).map(|_| r.random_range(-1.0..1.0)).collect();
        min_quad = min_quad.min(lap.quadratic_form(&x));
    }
    verdict(
        6,
        worst_rel <= 1e-10 && worst_row == 0.0 && min_quad >= -1e-12,
        &format!("relative gap {worst_rel:.2e}, largest |row sum| {worst_row:e}, min xᵀLx {min_quad:.3e}"),
    )
}

fn brute_force_cost(cost: &Array2<f64>) -> f64 {
    fn go(cost: &Array2<f64>, row: usize, used: &mut Vec<bool>) -> f64 {
        if row == cost.nrows() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for c in 0..cost.ncols() {
            if !used[c] {
                used[c] = true;
                best = best.min(cost[[row, c]] + go(cost, row + 1, used));
                used[c] = false;
            }
        }
        best
    }
    go(cost, 0, &mut vec![false; cost.ncols()])
}

fn criterion_07_metric_correctness() -> bool {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
    use ndarray::array;
    let hand = [
        (sad(array![1.0, 2.0, 3.0].view(), array![1.0, 2.0, 3.0].view()).unwrap(), 0.0),
        (sad(array![1.0, 0.0].view(), array![0.0, 1.0].view()).unwrap(), FRAC_PI_2),
        (sad(array![1.0, 1.0].view(), array![1.0, 0.0].view()).unwrap(), FRAC_PI_4),
        (aad(array![1.0, 0.0, 0.0].view(), array![0.0, 1.0, 0.0].view()).unwrap(), FRAC_PI_2),
    ];
    let hand_err = hand.iter().fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));

    let mut r = common::rng(7);
    let mut mismatches = 0;
    for trial in 0..50 {
        let p = 1 + trial % 8;
        let truth = EndmemberMatrix::new(common::positive(&mut r, 12, p, 0.0, 1.0)).unwrap();
        let est = EndmemberMatrix::new(common::positive(&mut r, 12, p, 0.0, 1.0)).unwrap();
        let cost = sad_cost_matrix(&truth, &est).unwrap();
        let assignment = optimal_assignment(&cost);
        let found: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
        if (found - brute_force_cost(&cost)).abs() > 1e-12 {
            mismatches += 1;
        }
    }

    let mut invariance_err: f64 = 0.0;
    for _ in 0..10 {
        let w = EndmemberMatrix::new(common::positive(&mut r, 10, 4, 0.0, 1.0)).unwrap();
        let h = AbundanceMatrix::new(common::fractions(&mut r, 4, 30)).unwrap();
        let w_est = common::positive(&mut r, 10, 4, 0.0, 1.0);
        let h_est = common::fractions(&mut r, 4, 30);
        let mut perm: Vec<usize> = (0..4).collect();
        perm.shuffle(&mut r);
        let base = evaluate(
            &w,
            &h,
            &EndmemberMatrix::new(w_est.clone()).unwrap(),
            &AbundanceMatrix::new(h_est.clone()).unwrap(),
        )
        .unwrap();
        let permuted = evaluate(
            &w,
            &h,
            &EndmemberMatrix::new(w_est.select(Axis(1), &perm)).unwrap(),
            &AbundanceMatrix::new(h_est.select(Axis(0), &perm)).unwrap(),
        )
        .unwrap();
        invariance_err = invariance_err
            .max((base.rms_sad - permuted.rms_sad).abs())
            .max((base.rms_aad - permuted.rms_aad).abs());
    }
    verdict(
        7,
        hand_err <= 1e-15 && mismatches == 0 && invariance_err <= 1e-15,
        &format!(
            "hand-value error {hand_err:.1e}, {mismatches}/50 assignment mismatches, permutation drift {invariance_err:.1e}"
        ),
    )
}

fn criterion_08_simulation_consistency() -> bool {
    let mut worst_identity: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    let mut snrs = Vec::new();
    for seed in 0..3 {
        let base = SimConfig {
            seed,
            ..SimConfig::default()
        };
        let clean = simulate(&SimConfig {
            snr_db: f64::INFINITY,
            ..base.clone()
        })
        .unwrap();
        let product = clean.true_endmembers.signatures().dot(clean.true_abundances.fractions());
        worst_identity = worst_identity.max(
            (clean.scene.data() - &product).iter().fold(0.0f64, |m, v| m.max(v.abs())),
        );
        for col in clean.true_abundances.fractions().columns() {
            worst_sum = worst_sum.max((col.sum() - 1.0).abs());
        }
        let noisy = simulate(&base).unwrap();
        let noise = noisy.scene.data() - clean.scene.data();
        let signal_power = clean.scene.data().mapv(|v| v * v).mean().unwrap();
        let noise_power = noise.mapv(|v| v * v).mean().unwrap();
        snrs.push(10.0 * (signal_power / noise_power).log10());
    }
    let snr_ok = snrs.iter().all(|s| (s - 30.0).abs() <= 0.5);
    verdict(
        8,
        worst_identity <= 1e-12 && worst_sum <= 1e-12 && snr_ok,
        &format!(
            "|Y − WH| ≤ {worst_identity:.1e}, |Σa − 1| ≤ {worst_sum:.1e}, measured SNR {:?} dB",
            snrs.iter().map(|s| (s * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    )
}

fn criterion_09_ablation_collapse() -> bool {
    let sim = simulate(&SimConfig {
        rows: 60,
        cols: 60,
        factor: 3,
        seed: 9,
        ..SimConfig::default()
    })
    .unwrap();
    let run = |variant: Variant, alpha: f64, beta: f64| {
        let config = UnmixConfig {
            alpha,
            beta,
            seed: 9,
            ..UnmixConfig::for_variant(variant, 4)
        };
        solve(&sim.scene, &config).unwrap().trace
    };
    let gap = |a: &[unmix_core::Objective], b: &[unmix_core::Objective]| {
        if a.len() != b.len() {
            return f64::INFINITY;
        }
        a.iter().zip(b).fold(0.0f64, |m, (x, y)| {
            m.max((x.total - y.total).abs())
                .max((x.fit - y.fit).abs())
                .max((x.graph_term - y.graph_term).abs())
                .max((x.sparse_term - y.sparse_term).abs())
        })
    };
    let to_nmf = gap(&run(Variant::GnmfSmc, 0.0, 0.0), &run(Variant::Nmf, 0.1, 0.1));
    let to_smc = gap(&run(Variant::GnmfSmc, 0.0, 0.1), &run(Variant::NmfSmc, 0.1, 0.1));
    let to_gnmf = gap(&run(Variant::GnmfSmc, 0.1, 0.0), &run(Variant::Gnmf, 0.1, 0.1));
    verdict(
        9,
        to_nmf <= 1e-12 && to_smc <= 1e-12 && to_gnmf <= 1e-12,
        &format!("trace gaps: α=β=0 {to_nmf:.1e}, α=0 {to_smc:.1e}, β=0 {to_gnmf:.1e}"),
    )
}

fn unmix(args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_unmix")).args(args).status().unwrap();
    assert!(status.success(), "unmix {args:?} failed");
}

fn same_outputs(a: &Path, b: &Path, files: &[&str]) -> bool {
    files.iter().all(|f| fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap())
}

fn criterion_10_manifest_reruns_are_bit_identical() -> bool {
    let tmp = tempfile::tempdir().unwrap();
    let dir = |name: &str| tmp.path().join(name);
    let s = |p: std::path::PathBuf| p.to_str().unwrap().to_string();
    let config = dir("config.toml");
    fs::write(
        &config,
        "rows = 40\ncols = 40\nfactor = 4\nbands = 30\nseed = 3\nmax_iterations = 60\nseeds = 2\nmap_style = \"blocks\"\n",
    )
    .unwrap();

    let mut checks = Vec::new();
    unmix(&["simulate", "--config", &s(config.clone()), "--out", &s(dir("sim"))]);
    unmix(&["simulate", "--config", &s(dir("sim").join("manifest.toml")), "--out", &s(dir("sim2"))]);
    checks.push((
        "simulate",
        same_outputs(&dir("sim"), &dir("sim2"), &["scene.txt", "endmembers.txt", "abundances.txt", "labels.txt", "library.txt"]),
    ));

    unmix(&["unmix", "--config", &s(config.clone()), "--scene", &s(dir("sim")), "--out", &s(dir("fit"))]);
    unmix(&["unmix", "--config", &s(dir("fit").join("manifest.toml")), "--out", &s(dir("fit2"))]);
    checks.push(("unmix", same_outputs(&dir("fit"), &dir("fit2"), &["endmembers.txt", "abundances.txt", "trace.csv"])));

    unmix(&["evaluate", "--truth", &s(dir("sim")), "--result", &s(dir("fit")), "--out", &s(dir("ev"))]);
    unmix(&["evaluate", "--config", &s(dir("ev").join("manifest.toml")), "--out", &s(dir("ev2"))]);
    checks.push(("evaluate", same_outputs(&dir("ev"), &dir("ev2"), &["evaluation.txt", "evaluation.toml"])));

    unmix(&["benchmark", "--config", &s(config), "--out", &s(dir("bench"))]);
    unmix(&["benchmark", "--config", &s(dir("bench").join("manifest.toml")), "--out", &s(dir("bench2"))]);
    checks.push(("benchmark", same_outputs(&dir("bench"), &dir("bench2"), &["benchmark.txt", "runs.csv"])));

    let pass = checks.iter().all(|(_, ok)| *ok);
    let detail: Vec<String> = checks.iter().map(|(c, ok)| format!("{c} {}", if *ok { "identical" } else { "differs" })).collect();
    verdict(10, pass, &detail.join(", "))
}
