//! Embedded property suite run by `bcpnet selftest`.

use bcpnet_core::attention::build_attention;
use bcpnet_core::detector::{stub_detector, total_loss};
use bcpnet_core::laplacian::{bcp_loss, bcp_loss_gradient, build_matting_laplacian};
use bcpnet_core::net::{backward, evaluate_loss, NetworkParams};
use bcpnet_core::prior::{bright_channel, estimate_ambient, initial_illumination_raw};
use bcpnet_core::solver::{cg_solve, refine_illumination_detailed, SolverConfig};
use bcpnet_core::{
    recover, resynthesize, AttentionMap, IlluminationMap, LossBreakdown, PatchSpec, RasterImage,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::oracle::{self, rng};

/// Outcome of one property: a measured quantity and its bound.
#[derive(Debug, Clone)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn(bool) -> Result<String, String>;

const PROPERTIES: &[(&str, Check)] = &[
    ("laplacian_matches_dense_formula", laplacian_matches_dense),
    ("laplacian_symmetric", laplacian_symmetric),
    ("laplacian_zero_row_sums", laplacian_row_sums),
    ("laplacian_positive_semidefinite", laplacian_psd),
    ("loss_gradient_finite_difference", loss_gradient),
    ("cg_matches_dense_solve", cg_matches_dense),
    ("refine_matches_dense_and_lowers_loss", refine_matches_dense),
    ("network_gradient_finite_difference", network_gradient),
    ("stub_detector_gradient_finite_difference", detector_gradient),
    ("recover_resynthesize_inverse_pair", inverse_pair),
    ("prior_exact_recovery", prior_exact_recovery),
    ("bright_channel_matches_brute_force", bright_channel_brute_force),
    ("ambient_matches_sort_oracle", ambient_sort_oracle),
    ("attention_range_identity_monotone", attention_properties),
    ("total_loss_linear", total_loss_linear),
];

pub fn property_names() -> Vec<&'static str> {
    PROPERTIES.iter().map(|(n, _)| *n).collect()
}

/// Runs every property. With `inject_fault`, the loss-gradient check is
/// fed a sign-flipped analytic gradient so that it must fail.
pub fn run(inject_fault: bool) -> Vec<PropertyResult> {
    PROPERTIES
        .iter()
        .map(|&(name, check)| {
            let (passed, detail) = match std::panic::catch_unwind(|| check(inject_fault)) {
                Ok(Ok(d)) => (true, d),
                Ok(Err(d)) => (false, d),
                Err(_) => (false, "panicked".into()),
            };
            PropertyResult { name, passed, detail }
        })
        .collect()
}

pub fn format_table(results: &[PropertyResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for r in results {
        let mark = if r.passed { "PASS" } else { "FAIL" };
        out.push_str(&format!("{mark}  {:<width$}  {}\n", r.name, r.detail));
    }
    let passed = results.iter().filter(|r| r.passed).count();
    out.push_str(&format!("{passed}/{} properties passed\n", results.len()));
    out
}

fn bound(name: &str, value: f64, limit: f64) -> Result<String, String> {
    let detail = format!("{name} = {value:.3e} (limit {limit:.0e})");
    if value <= limit {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn laplacian_cases() -> impl Iterator<Item = (RasterImage, DMatrix<f64>, bcpnet_core::SparseAffinity)> {
    let mut rng = rng(11);
    (0..6).map(move |k| {
        let (w, h) = (5 + k % 3, 5 + (k + 1) % 4);
        let img = oracle::random_image(&mut rng, w, h, 3);
        let dense = oracle::dense_matting_laplacian(&img, 1e-4);
        let sparse = build_matting_laplacian(&img, 1e-4).unwrap();
        (img, dense, sparse)
    })
}

fn laplacian_matches_dense(_: bool) -> Result<String, String> {
    let worst = laplacian_cases()
        .map(|(_, dense, sparse)| oracle::max_abs_diff(&sparse.to_dense(), dense.transpose().as_slice()))
        .fold(0.0, f64::max);
    bound("max entry difference", worst, 1e-10)
}

fn laplacian_symmetric(_: bool) -> Result<String, String> {
    let worst = laplacian_cases().map(|(_, _, s)| s.symmetry_defect()).fold(0.0, f64::max);
    bound("max |L - L^T|", worst, 1e-12)
}

fn laplacian_row_sums(_: bool) -> Result<String, String> {
    let worst = laplacian_cases()
        .flat_map(|(_, _, s)| s.row_sums())
        .fold(0.0, |m: f64, v| m.max(v.abs()));
    bound("max |row sum|", worst, 1e-10)
}

fn laplacian_psd(_: bool) -> Result<String, String> {
    let lowest = laplacian_cases()
        .map(|(_, dense, _)| oracle::min_eigenvalue(&dense))
        .fold(f64::INFINITY, f64::min);
    bound("-(smallest eigenvalue)", -lowest, 1e-8)
}

fn loss_gradient(fault: bool) -> Result<String, String> {
    let mut rng = rng(12);
    let img = oracle::random_image(&mut rng, 8, 8, 3);
    let lap = build_matting_laplacian(&img, 1e-4).unwrap();
    let t = oracle::random_map(&mut rng, 8, 8, 0.1, 1.0);
    let target = oracle::random_map(&mut rng, 8, 8, 0.1, 1.0);
    let att = AttentionMap::new(8, 8, (0..64).map(|_| rng.random_range(0.0..=1.0)).collect(), 1.0).unwrap();
    let mut grad = bcp_loss_gradient(&t, &target, &lap, 0.1, Some(&att)).unwrap();
    if fault {
        grad.iter_mut().for_each(|g| *g = -*g);
    }
    let f = |x: &[f64]| {
        let tx = IlluminationMap::new(8, 8, x.to_vec()).unwrap();
        bcp_loss(&tx, &target, &lap, 0.1, Some(&att)).unwrap().total
    };
    let worst = oracle::gradient_check(f, t.values(), &grad, 0..64, 1e-5);
    bound("max relative error", worst, 1e-4)
}

fn cg_matches_dense(_: bool) -> Result<String, String> {
    let mut rng = rng(13);
    let n = 20;
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let a = &m * m.transpose() / n as f64 + DMatrix::identity(n, n);
    let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let exact = a.clone().lu().solve(&b).unwrap();
    let out = cg_solve(
        |x, y| y.copy_from_slice((&a * DVector::from_column_slice(x)).as_slice()),
        b.as_slice(),
        1e-12,
        200,
    )
    .map_err(|e| e.to_string())?;
    bound("max abs difference", oracle::max_abs_diff(&out.solution, exact.as_slice()), 1e-9)
}

fn refine_matches_dense(_: bool) -> Result<String, String> {
    let mut rng = rng(14);
    let img = oracle::random_image(&mut rng, 8, 8, 3);
    let target = oracle::random_map(&mut rng, 8, 8, 0.2, 0.9);
    let lap = build_matting_laplacian(&img, 1e-4).unwrap();
    let cfg = SolverConfig {
        lambda: 0.5,
        tolerance: 1e-12,
        ..SolverConfig::default()
    };
    let refined = refine_illumination_detailed(&target, &lap, None, &cfg).map_err(|e| e.to_string())?;
    let dense = oracle::dense_refine(
        target.values(),
        &oracle::dense_matting_laplacian(&img, 1e-4),
        &[1.0; 64],
        0.5,
    );
    let err = refined
        .unclamped
        .values()
        .iter()
        .zip(&dense)
        .map(|(a, b)| oracle::rel_err(*a, *b, 1e-12))
        .fold(0.0, f64::max);
    let before = bcp_loss(&target, &target, &lap, 0.5, None).unwrap().total;
    let after = bcp_loss(&refined.illumination, &target, &lap, 0.5, None).unwrap().total;
    if after > before {
        return Err(format!("loss rose from {before:.6e} to {after:.6e}"));
    }
    bound("max relative difference", err, 1e-8)
}

fn network_gradient(_: bool) -> Result<String, String> {
    let mut rng = rng(15);
    let visible = oracle::random_image(&mut rng, 8, 8, 3);
    let att = AttentionMap::new(8, 8, (0..64).map(|_| rng.random_range(0.0..=1.0)).collect(), 1.0).unwrap();
    let target = oracle::random_map(&mut rng, 8, 8, 0.05, 1.0);
    let lap = build_matting_laplacian(&visible, 1e-4).unwrap();
    let params = NetworkParams::init(15);
    let (_, grad) = backward(&params, &visible, &att, &target, &lap, 0.05).map_err(|e| e.to_string())?;
    let analytic = grad.flatten();
    let x0 = params.flatten();
    let mut scratch = params.clone();
    let f = |x: &[f64]| {
        scratch.set_flat(x).unwrap();
        evaluate_loss(&scratch, &visible, &att, &target, &lap, 0.05).unwrap().total
    };
    // every fourth parameter keeps the self-test quick
    let worst = oracle::gradient_check(f, &x0, &analytic, (0..x0.len()).step_by(4), 1e-5);
    bound("max relative error", worst, 1e-4)
}

fn detector_gradient(_: bool) -> Result<String, String> {
    let mut rng = rng(16);
    let enhanced = oracle::random_image(&mut rng, 8, 8, 3);
    let thermal = oracle::random_image(&mut rng, 8, 8, 1);
    let mask = RasterImage::filled(8, 8, 1, 1.0).unwrap();
    let (_, grad) = stub_detector(&enhanced, &thermal, Some(&mask)).map_err(|e| e.to_string())?;
    let f = |x: &[f64]| {
        let img = RasterImage::new(8, 8, 3, x.to_vec()).unwrap();
        stub_detector(&img, &thermal, Some(&mask)).unwrap().0
    };
    let worst = oracle::gradient_check(f, enhanced.data(), &grad, 0..grad.len(), 1e-5);
    bound("max relative error", worst, 1e-4)
}

fn inverse_pair(_: bool) -> Result<String, String> {
    let mut rng = rng(17);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let j = oracle::random_image(&mut rng, 16, 16, 3);
        let t = oracle::random_map(&mut rng, 16, 16, 0.1, 1.0);
        let a = oracle::random_ambient(&mut rng);
        let i = oracle::forward_model(&j, &t, &a);
        let back = resynthesize(&recover(&i, &t, &a, 0.05).unwrap(), &t, &a).unwrap();
        worst = worst.max(oracle::max_abs_diff(back.data(), i.data()));
    }
    bound("max abs error", worst, 1e-9)
}

fn prior_exact_recovery(_: bool) -> Result<String, String> {
    let mut rng = rng(18);
    let mut worst = 0.0f64;
    for k in 2..=9 {
        let t_star = k as f64 / 10.0;
        let j = oracle::unit_channel_scene(&mut rng, 12, 12);
        let a = oracle::random_ambient(&mut rng);
        let i = oracle::forward_model(&j, &IlluminationMap::constant(12, 12, t_star).unwrap(), &a);
        let t = initial_illumination_raw(&i, &a, PatchSpec::new(2)).unwrap();
        worst = worst.max(t.values().iter().map(|v| (v - t_star).abs()).fold(0.0, f64::max));
    }
    bound("max abs error", worst, 1e-6)
}

fn bright_channel_brute_force(_: bool) -> Result<String, String> {
    let mut rng = rng(19);
    let mut worst = 0.0f64;
    for radius in [0, 1, 3] {
        let img = oracle::random_image(&mut rng, 11, 7, 3);
        let fast = bright_channel(&img, PatchSpec::new(radius)).unwrap();
        worst = worst.max(oracle::max_abs_diff(fast.data(), &oracle::bright_channel(&img, radius)));
    }
    bound("max abs difference", worst, 0.0)
}

fn ambient_sort_oracle(_: bool) -> Result<String, String> {
    let mut rng = rng(20);
    for k in 0..5 {
        let img = oracle::random_image(&mut rng, 64, 64, 3);
        let got = estimate_ambient(&img, 0.001).unwrap().value();
        let want = oracle::ambient_by_sort(&img, 0.001, 1e-3);
        if got != want {
            return Err(format!("image {k}: {got:?} != {want:?}"));
        }
    }
    Ok("5 images, exact".into())
}

fn attention_properties(_: bool) -> Result<String, String> {
    let mut rng = rng(21);
    let v: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..=1.0)).collect();
    let thermal = RasterImage::new(200, 1, 1, v.clone()).unwrap();
    let identity = build_attention(&thermal, 1.0).unwrap();
    if identity.values() != v.as_slice() {
        return Err("gamma = 1 is not the identity".into());
    }
    let low = build_attention(&thermal, 1.5).unwrap();
    let high = build_attention(&thermal, 3.0).unwrap();
    for ((l, h), x) in low.values().iter().zip(high.values()).zip(&v) {
        if !(0.0..=1.0).contains(l) || !(0.0..=1.0).contains(h) {
            return Err(format!("value outside [0, 1] for input {x}"));
        }
        if h > l {
            return Err(format!("not monotone in gamma at {x}"));
        }
    }
    Ok("200 values".into())
}

fn total_loss_linear(_: bool) -> Result<String, String> {
    let bcp = |total| LossBreakdown {
        data_term: total,
        smoothness_term: 0.0,
        total,
        lambda: 0.0,
        pixels: 1,
    };
    let cases = [(0.5, 0.2, 1.0, 0.7), (0.3, 0.1, 2.0, 0.5), (0.4, 0.9, 0.0, 0.4)];
    for (b, d, beta, want) in cases {
        let got = total_loss(bcp(b), d, beta).unwrap().total;
        if (got - want).abs() > 4.0 * f64::EPSILON {
            return Err(format!("{b} + {beta}·{d} gave {got}"));
        }
    }
    let base = total_loss(bcp(0.25), 0.0, 0.5).unwrap().total;
    let step = total_loss(bcp(0.25), 1.0, 0.5).unwrap().total;
    if (step - base - 0.5).abs() > 4.0 * f64::EPSILON {
        return Err("slope in detector loss differs from beta".into());
    }
    Ok("exact to machine precision".into())
}
