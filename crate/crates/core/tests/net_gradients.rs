mod common;

use bcpnet_core::laplacian::build_matting_laplacian;
use bcpnet_core::net::{backward, backward_from_output_gradient, evaluate_loss, forward, NetworkParams};
use bcpnet_core::{AttentionMap, IlluminationMap, RasterImage, SparseAffinity};
use common::*;
use rand::Rng;

struct Problem {
    visible: RasterImage,
    attention: AttentionMap,
    target: IlluminationMap,
    lap: SparseAffinity,
}

fn problem(seed: u64, w: usize, h: usize) -> Problem {
    let mut rng = rng(seed);
    let visible = random_image(&mut rng, w, h, 3);
    let attention = random_attention(&mut rng, w, h);
    let target = random_map(&mut rng, w, h, 0.05, 1.0);
    let lap = build_matting_laplacian(&visible, 1e-4).unwrap();
    Problem {
        visible,
        attention,
        target,
        lap,
    }
}

/// Worst relative error between reverse-mode and central differences over
/// every parameter.
fn worst_gradient_error(params: &NetworkParams, p: &Problem, lambda: f64) -> f64 {
    let (_, grad) = backward(params, &p.visible, &p.attention, &p.target, &p.lap, lambda).unwrap();
    let analytic = grad.flatten();
    let x0 = params.flatten();
    let floor = gradient_floor(&analytic);
    let mut scratch = params.clone();
    let mut f = |x: &[f64]| {
        scratch.set_flat(x).unwrap();
        evaluate_loss(&scratch, &p.visible, &p.attention, &p.target, &p.lap, lambda)
            .unwrap()
            .total
    };
    let mut worst = 0.0f64;
    for i in 0..x0.len() {
        let fd = central_difference(&mut f, &x0, i, 1e-5);
        worst = worst.max(rel_err(analytic[i], fd, floor));
    }
    worst
}

#[test]
fn reverse_mode_matches_finite_differences() {
    for (seed, w, h) in [(31, 8, 8), (32, 9, 7), (33, 12, 10)] {
        let p = problem(seed, w, h);
        let params = NetworkParams::init(seed);
        let worst = worst_gradient_error(&params, &p, 0.05);
        assert!(worst < 1e-4, "{w}x{h}: worst relative error {worst}");
    }
}

#[test]
fn zero_weights_with_biases_have_checked_gradients() {
    let p = problem(34, 8, 8);
    let mut params = NetworkParams::zeros();
    let mut rng = rng(35);
    for layer in &mut params.layers {
        for b in &mut layer.bias {
            *b = rng.random_range(0.1..0.5);
        }
    }
    let worst = worst_gradient_error(&params, &p, 0.05);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn ungated_output_gradients_check_out() {
    let p = problem(36, 8, 8);
    let mut params = NetworkParams::init(36);
    params.gate_output = false;
    let worst = worst_gradient_error(&params, &p, 0.05);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn zero_lambda_drops_the_smoothness_contribution() {
    let p = problem(37, 8, 8);
    let params = NetworkParams::init(37);
    let (loss, grad) = backward(&params, &p.visible, &p.attention, &p.target, &p.lap, 0.0).unwrap();
    assert_eq!(loss.total, loss.data_term / 64.0);
    // Data-only gradient via the generic output-gradient path.
    let t = forward(&params, &p.visible, &p.attention).unwrap();
    let dt: Vec<f64> = t
        .values()
        .iter()
        .zip(p.target.values())
        .map(|(a, b)| 2.0 * (a - b) / 64.0)
        .collect();
    let data_only = backward_from_output_gradient(&params, &p.visible, &p.attention, &dt).unwrap();
    for (a, b) in grad.flatten().iter().zip(data_only.flatten()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn zero_attention_zeroes_every_gradient() {
    let mut p = problem(38, 8, 8);
    p.attention = AttentionMap::uniform(8, 8, 0.0).unwrap();
    let params = NetworkParams::init(38);
    let (_, grad) = backward(&params, &p.visible, &p.attention, &p.target, &p.lap, 0.1).unwrap();
    assert!(grad.flatten().iter().all(|&g| g == 0.0));
}

#[test]
fn unit_attention_matches_ungated_network() {
    // With unit gates every multiplication is the identity, so the gated
    // network agrees with a plain reference forward pass.
    let p = problem(39, 10, 6);
    let params = NetworkParams::init(39);
    let ones = AttentionMap::uniform(10, 6, 1.0).unwrap();
    let gated = forward(&params, &p.visible, &ones).unwrap();
    let reference = reference_forward(&params, &p.visible);
    for (a, b) in gated.values().iter().zip(&reference) {
        assert!((a - b).abs() < 1e-12);
    }
}

/// Naive ungated forward pass with explicit padding, written independently
/// of the library's strided kernels.
fn reference_forward(params: &NetworkParams, img: &RasterImage) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let mut x: Vec<Vec<Vec<f64>>> = (0..3)
        .map(|c| (0..h).map(|r| (0..w).map(|col| img.get(r, col, c)).collect()).collect())
        .collect();
    let sizes = bcpnet_core::net::layer_sizes(w, h);
    for (l, layer) in params.layers.iter().enumerate() {
        if layer.spec.upsample_before {
            x = x
                .iter()
                .map(|p| {
                    (0..2 * p.len())
                        .map(|r| (0..2 * p[0].len()).map(|c| p[r / 2][c / 2]).collect())
                        .collect()
                })
                .collect();
        }
        let (ow, oh) = sizes[l];
        let s = layer.spec.stride;
        let at = |p: &Vec<Vec<f64>>, r: isize, c: isize| {
            if r < 0 || c < 0 || r as usize >= p.len() || c as usize >= p[0].len() {
                0.0
            } else {
                p[r as usize][c as usize]
            }
        };
        let mut out = vec![vec![vec![0.0; ow]; oh]; layer.spec.out_channels];
        for (o, plane) in out.iter_mut().enumerate() {
            for r in 0..oh {
                for c in 0..ow {
                    let mut z = layer.bias[o];
                    for (i, src) in x.iter().enumerate() {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let wt = layer.weights[((o * layer.spec.in_channels + i) * 3 + ky) * 3 + kx];
                                z += wt * at(src, (r * s + ky) as isize - 1, (c * s + kx) as isize - 1);
                            }
                        }
                    }
                    plane[r][c] = match layer.spec.activation {
                        bcpnet_core::net::Activation::Relu => z.max(0.0),
                        bcpnet_core::net::Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
                    };
                }
            }
        }
        x = out;
    }
    x[0].iter().flatten().copied().collect()
}
