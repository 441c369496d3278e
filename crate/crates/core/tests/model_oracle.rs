//! The adaptive reconstruction network against a loop-by-loop evaluation.

use adapcsi::autodiff::LayerParams;
use adapcsi::model::{forward_with_params, GeneratedParams, ModelDims, ReconNet};
use ndarray::{Array1, Array2, Array4};
use rand::{Rng, SeedableRng};

fn conv(x: &Array4<f64>, layer: &LayerParams) -> Array4<f64> {
    let w = &layer.weights.data;
    let b = &layer.bias.data;
    let (bs, c, h, wd) = x.dim();
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let p = (k / 2) as isize;
    Array4::from_shape_fn((bs, co, h, wd), |(n, o, i, j)| {
        let mut acc = b[[o]];
        for ci in 0..c {
            for di in 0..k {
                for dj in 0..k {
                    let (si, sj) = (i as isize + di as isize - p, j as isize + dj as isize - p);
                    if si >= 0 && sj >= 0 && (si as usize) < h && (sj as usize) < wd {
                        acc += w[[o, ci, di, dj]] * x[[n, ci, si as usize, sj as usize]];
                    }
                }
            }
        }
        acc
    })
}

fn oracle(net: &ReconNet, gp: &GeneratedParams, s: &Array2<f64>) -> Array2<f64> {
    let d = net.dims;
    let (bs, n) = (s.nrows(), d.n());
    let w = &net.dense_init.weights.data;
    let b = &net.dense_init.bias.data;
    let mut h = Array2::<f64>::zeros((bs, n));
    for r in 0..bs {
        for i in 0..n {
            let mut h1 = b[[i]];
            let mut a = gp.b_h[i];
            for k in 0..d.m {
                h1 += s[[r, k]] * w[[k, i]];
                a += gp.w_h[[i, k]] * s[[r, k]];
            }
            h[[r, i]] = h1 + net.alpha * a.tanh();
        }
    }
    let x = Array4::from_shape_vec((bs, 2, d.nc, d.nt), h.iter().copied().collect()).unwrap();
    let c1 = conv(&x, &net.conv_block[0]).mapv(f64::tanh);
    let c2 = conv(&c1, &net.conv_block[1]).mapv(f64::tanh);
    let r = &x + &conv(&c2, &net.conv_block[2]);
    let out = conv(&r, &net.output_conv);
    Array2::from_shape_vec((bs, n), out.iter().copied().collect()).unwrap()
}

#[test]
fn tiny_network_matches_hand_composition() {
    let dims = ModelDims { nc: 4, nt: 2, m: 4, g: 8 };
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(21);
    for seed in 0..5 {
        let net = ReconNet::new(dims, 0.6, seed).unwrap();
        let gp = GeneratedParams {
            w_h: Array2::from_shape_fn((dims.n(), dims.m), |_| r.random_range(-1.0..1.0)),
            b_h: Array1::from_shape_fn(dims.n(), |_| r.random_range(-1.0..1.0)),
        };
        let s = Array2::from_shape_fn((3, dims.m), |_| r.random_range(-2.0..2.0));
        let got = forward_with_params(&net, &gp, &s).unwrap();
        let want = oracle(&net, &gp, &s);
        let err = (&got - &want).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(err <= 1e-10, "seed {seed}: max error {err:e}");
    }
}
