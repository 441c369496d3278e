//! Acceptance suite: one pass/fail line per criterion.
//!
//! Criteria 8-10 train the desk-profile models (three seeds, CR 1/16) and
//! take most of the runtime; `ADAPCSI_<SECTION>__<KEY>` variables shorten
//! them for a quick look (results then no longer count as acceptance).

use adapcsi::autodiff::{Graph, Tensor, Var};
use adapcsi::channel::{trace_paths, TraceConfig, SPEED_OF_LIGHT};
use adapcsi::config::ExperimentConfig;
use adapcsi::geometry::{Point3, Rect};
use adapcsi::harness::{self, median_db, Method, Runner, Subset};
use adapcsi::model::{
    adaptive_loss, forward_adaptive, forward_with_params, sample_loss, train_step1, GeneratedParams, HyperNet, ModelDims,
    ModelError, ReconNet, TrainConfig,
};
use adapcsi::preprocess::{dft2, idft2};
use adapcsi::scene::Scene;
use ndarray::{Array2, ArrayD, IxDyn};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

type Outcome = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_array(r: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> ArrayD<f64> {
    let n: usize = shape.iter().product();
    ArrayD::from_shape_vec(IxDyn(shape), (0..n).map(|_| r.random_range(-scale..scale)).collect()).unwrap()
}

// ---------------------------------------------------------------- 1

/// A tiny graph: trainable tensors plus a builder returning the scalar loss.
struct Micro {
    params: Vec<Tensor>,
    build: Box<dyn Fn(&mut Graph, &[Var]) -> Var>,
}

fn micro(r: &mut ChaCha8Rng) -> Micro {
    let b = r.random_range(1..4);
    let kind = r.random_range(0..5);
    let t = |r: &mut ChaCha8Rng, shape: &[usize]| Tensor::new(rand_array(r, shape, 1.0), true);
    match kind {
        0 => {
            let (i, o) = (r.random_range(1..6), r.random_range(1..6));
            let target = rand_array(r, &[b, o], 1.0);
            Micro {
                params: vec![t(r, &[b, i]), t(r, &[i, o]), t(r, &[o])],
                build: Box::new(move |g, p| {
                    let y = g.dense(p[0], p[1], p[2]).unwrap();
                    let y = g.tanh(y).unwrap();
                    let tv = g.input(target.clone()).unwrap();
                    g.mse_loss(y, tv).unwrap()
                }),
            }
        }
        1 => {
            let (c, h, w) = (r.random_range(1..3), r.random_range(2..5), r.random_range(2..5));
            let k = [1, 3][r.random_range(0..2)];
            let target = rand_array(r, &[b, c, h, w], 1.0);
            Micro {
                params: vec![t(r, &[b, c, h, w]), t(r, &[c, c, k, k]), t(r, &[c]), t(r, &[c, c, 3, 3]), t(r, &[c])],
                build: Box::new(move |g, p| {
                    let y = g.conv2d(p[0], p[1], p[2]).unwrap();
                    let y = g.tanh(y).unwrap();
                    let y = g.conv2d(y, p[3], p[4]).unwrap();
                    let y = g.add(p[0], y).unwrap();
                    let tv = g.input(target.clone()).unwrap();
                    g.mse_loss(y, tv).unwrap()
                }),
            }
        }
        2 => {
            let (h, w, i) = (r.random_range(1..4), r.random_range(1..4), r.random_range(1..5));
            let o = 2 * h * w;
            let k: f64 = r.random_range(0.2..2.0);
            let target = rand_array(r, &[b, 3, h, w], 1.0);
            Micro {
                params: vec![t(r, &[b, i]), t(r, &[i, o]), t(r, &[o]), t(r, &[3, 2, 3, 3]), t(r, &[3])],
                build: Box::new(move |g, p| {
                    let y = g.dense(p[0], p[1], p[2]).unwrap();
                    let y = g.reshape(y, &[b, 2, h, w]).unwrap();
                    let y = g.conv2d(y, p[3], p[4]).unwrap();
                    let y = g.scale(y, k).unwrap();
                    let tv = g.input(target.clone()).unwrap();
                    g.mse_loss(y, tv).unwrap()
                }),
            }
        }
        3 => {
            let (n, m, s) = (r.random_range(1..5), r.random_range(1..4), r.random_range(1..3));
            let rows: Vec<usize> = (0..b).map(|_| r.random_range(0..s)).collect();
            let target = rand_array(r, &[b, n], 1.0);
            Micro {
                params: vec![t(r, &[s, n * (m + 1)]), t(r, &[b, m]), t(r, &[n])],
                build: Box::new(move |g, p| {
                    let y = g.generated_affine(p[0], p[1], &rows).unwrap();
                    let y = g.add(y, p[2]).unwrap();
                    let y = g.tanh(y).unwrap();
                    let tv = g.input(target.clone()).unwrap();
                    g.mse_loss(y, tv).unwrap()
                }),
            }
        }
        _ => {
            let n = r.random_range(1..6);
            let k: f64 = r.random_range(-1.5..1.5);
            let target = rand_array(r, &[b, n], 1.0);
            Micro {
                params: vec![t(r, &[b, n]), t(r, &[n]), t(r, &[b, n])],
                build: Box::new(move |g, p| {
                    let y = g.add(p[0], p[1]).unwrap();
                    let y = g.tanh(y).unwrap();
                    let y = g.scale(y, k).unwrap();
                    let y = g.add(y, p[2]).unwrap();
                    let y = g.tanh(y).unwrap();
                    let tv = g.input(target.clone()).unwrap();
                    g.mse_loss(y, tv).unwrap()
                }),
            }
        }
    }
}

fn eval_micro(m: &Micro, params: &[Tensor]) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p).unwrap()).collect();
    let loss = (m.build)(&mut g, &vars);
    g.value(loss)[[]]
}

fn criterion_gradients() -> Outcome {
    let mut r = rng(0x6AD);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let m = micro(&mut r);
        let mut g = Graph::new();
        let vars: Vec<Var> = m.params.iter().map(|p| g.param(p).unwrap()).collect();
        let loss = (m.build)(&mut g, &vars);
        let grads = g.backward(loss).map_err(|e| e.to_string())?;
        for (pi, p) in m.params.iter().enumerate() {
            let analytic = grads.get_or_zeros(vars[pi], p.shape());
            for e in 0..p.len() {
                let mut plus = m.params.clone();
                *plus[pi].data.iter_mut().nth(e).unwrap() += h;
                let mut minus = m.params.clone();
                *minus[pi].data.iter_mut().nth(e).unwrap() -= h;
                let fd = (eval_micro(&m, &plus) - eval_micro(&m, &minus)) / (2.0 * h);
                let a = *analytic.iter().nth(e).unwrap();
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
    }
    let msg = format!("100 micro-graphs, max relative error {worst:.2e} (limit 1e-4)");
    if worst <= 1e-4 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------- 2

fn naive_dense(x: &ArrayD<f64>, w: &ArrayD<f64>, b: &ArrayD<f64>) -> ArrayD<f64> {
    let (bs, i, o) = (x.shape()[0], x.shape()[1], w.shape()[1]);
    let mut y = ArrayD::zeros(IxDyn(&[bs, o]));
    for n in 0..bs {
        for j in 0..o {
            let mut acc = b[[j]];
            for k in 0..i {
                acc += x[[n, k]] * w[[k, j]];
            }
            y[[n, j]] = acc;
        }
    }
    y
}

fn naive_conv(x: &ArrayD<f64>, w: &ArrayD<f64>, b: &ArrayD<f64>) -> ArrayD<f64> {
    let (bs, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let p = (k / 2) as isize;
    let mut y = ArrayD::zeros(IxDyn(&[bs, co, h, wd]));
    for n in 0..bs {
        for o in 0..co {
            for i in 0..h {
                for j in 0..wd {
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
                    y[[n, o, i, j]] = acc;
                }
            }
        }
    }
    y
}

fn max_abs_diff(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_layer_oracles() -> Outcome {
    let mut r = rng(0x1A7E);
    let (mut dense_err, mut conv_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..50 {
        let (bs, i, o) = (r.random_range(1..8), r.random_range(1..40), r.random_range(1..40));
        let (x, w, b) = (rand_array(&mut r, &[bs, i], 2.0), rand_array(&mut r, &[i, o], 1.0), rand_array(&mut r, &[o], 1.0));
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.input(x.clone()).unwrap(), g.input(w.clone()).unwrap(), g.input(b.clone()).unwrap());
        let y = g.dense(xv, wv, bv).map_err(|e| e.to_string())?;
        dense_err = dense_err.max(max_abs_diff(g.value(y), &naive_dense(&x, &w, &b)));
    }
    for _ in 0..50 {
        let (bs, c, co) = (r.random_range(1..5), r.random_range(1..5), r.random_range(1..5));
        let (h, wd) = (r.random_range(1..10), r.random_range(1..10));
        let k = [1, 3, 5][r.random_range(0..3)];
        let x = rand_array(&mut r, &[bs, c, h, wd], 2.0);
        let (w, b) = (rand_array(&mut r, &[co, c, k, k], 1.0), rand_array(&mut r, &[co], 1.0));
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.input(x.clone()).unwrap(), g.input(w.clone()).unwrap(), g.input(b.clone()).unwrap());
        let y = g.conv2d(xv, wv, bv).map_err(|e| e.to_string())?;
        conv_err = conv_err.max(max_abs_diff(g.value(y), &naive_conv(&x, &w, &b)));
    }
    let msg = format!("dense max error {dense_err:.1e}, conv2d max error {conv_err:.1e} over 50 cases each (limit 1e-6)");
    if dense_err <= 1e-6 && conv_err <= 1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------- 3

fn naive_dft2(x: &Array2<Complex64>) -> Array2<Complex64> {
    let (n, m) = x.dim();
    let f = |k: usize, j: usize, len: usize| Complex64::from_polar(1.0 / (len as f64).sqrt(), -2.0 * PI * (k * j) as f64 / len as f64);
    Array2::from_shape_fn((n, m), |(p, q)| {
        let mut acc = Complex64::new(0.0, 0.0);
        for a in 0..n {
            for b in 0..m {
                // F_d X F_a^H: F_a^H[b, q] = conj(F_a[q, b])
                acc += f(p, a, n) * x[[a, b]] * f(q, b, m).conj();
            }
        }
        acc
    })
}

fn criterion_dft() -> Outcome {
    let mut r = rng(0xDF7);
    let (mut norm_err, mut trip_err, mut oracle_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let fro = |a: &Array2<Complex64>| a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    for case in 0..1000 {
        let (n, m) = (r.random_range(1..70), r.random_range(1..17));
        let x = Array2::from_shape_fn((n, m), |_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)));
        let y = dft2(&x);
        let base = fro(&x);
        norm_err = norm_err.max((fro(&y) - base).abs() / base);
        trip_err = trip_err.max(fro(&(idft2(&y) - &x)) / base);
        if case % 20 == 0 {
            oracle_err = oracle_err.max(fro(&(naive_dft2(&x) - &y)) / base);
        }
    }
    let msg = format!(
        "1000 matrices: norm error {norm_err:.1e}, round-trip error {trip_err:.1e}, naive-DFT error {oracle_err:.1e} (limit 1e-9)"
    );
    if norm_err <= 1e-9 && trip_err <= 1e-9 && oracle_err <= 1e-9 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------- 4

/// TE reflection coefficient for plywood at 5.8 GHz.
fn oracle_gamma(cos_i: f64, freq: f64) -> Complex64 {
    let eps0 = 8.854_187_812_8e-12;
    let eps = Complex64::new(1.99, -0.012 / (2.0 * PI * freq * eps0));
    let root = (eps - (1.0 - cos_i * cos_i)).sqrt();
    (cos_i - root) / (cos_i + root)
}

/// Unfolds the rectangle into its mirror lattice: every image of the BS
/// within two wall crossings is one path.
fn oracle_paths(w: f64, d: f64, bs: Point3, ue: Point3, freq: f64) -> Vec<(f64, Complex64)> {
    let axis = |v: f64, len: f64| -> Vec<(f64, u32)> {
        let mut out = Vec::new();
        for m in -2i32..=2 {
            let shift = 2.0 * m as f64 * len;
            out.push((shift + v, 2 * m.unsigned_abs()));
            out.push((shift - v, (2 * m - 1).unsigned_abs()));
        }
        out
    };
    let lambda = SPEED_OF_LIGHT / freq;
    let dh = bs.z - ue.z;
    let mut paths = Vec::new();
    for (x, kx) in axis(bs.x, w) {
        for &(y, ky) in &axis(bs.y, d) {
            if kx + ky > 2 {
                continue;
            }
            let (dx, dy) = (x - ue.x, y - ue.y);
            let plan = dx.hypot(dy);
            let len = plan.hypot(dh);
            let shrink = plan / len;
            let mut coeff = Complex64::new(1.0, 0.0);
            for _ in 0..kx {
                coeff *= oracle_gamma(dx.abs() / plan * shrink, freq);
            }
            for _ in 0..ky {
                coeff *= oracle_gamma(dy.abs() / plan * shrink, freq);
            }
            let gain = coeff * (lambda / (4.0 * PI * len)) * Complex64::from_polar(1.0, -2.0 * PI * len / lambda);
            paths.push((len / SPEED_OF_LIGHT, gain));
        }
    }
    paths
}

fn criterion_ray_tracer() -> Outcome {
    let mut r = rng(0x7ACE);
    let cfg = TraceConfig { diffraction: false, cutoff_db: 1e6, max_reflections: 2, ..TraceConfig::default() };
    let mut checked = 0;
    for case in 0..200 {
        let (w, d) = (r.random_range(3.0..15.0), r.random_range(3.0..15.0));
        let inside = |r: &mut ChaCha8Rng, z: f64| Point3::new(r.random_range(0.05 * w..0.95 * w), r.random_range(0.05 * d..0.95 * d), z);
        let (zb, zu) = (r.random_range(2.0..3.0), r.random_range(0.5..1.5));
        let bs = inside(&mut r, zb);
        let ue = inside(&mut r, zu);
        let scene = Scene {
            outer_rect: [w, d],
            height: 3.0,
            walls: vec![],
            bs_position: bs,
            ue_region: Rect::new(0.0, 0.0, w, d).corners().to_vec(),
            ue_height: ue.z,
            scene_id: case,
            rng_seed: 0,
        };
        let traced = trace_paths(&scene, ue, &cfg).map_err(|e| e.to_string())?;
        let mut expected = oracle_paths(w, d, bs, ue, cfg.center_freq);
        if traced.len() != expected.len() {
            return Err(format!("case {case}: {} traced paths, oracle has {}", traced.len(), expected.len()));
        }
        for p in &traced {
            let hit = expected.iter().position(|(t, g)| {
                (t - p.delay).abs() <= 1e-9 * t && (g - p.complex_gain).norm() <= 1e-6 * g.norm()
            });
            match hit {
                Some(i) => {
                    expected.swap_remove(i);
                }
                None => return Err(format!("case {case}: traced path at {:.6e} s has no oracle match", p.delay)),
            }
        }
        checked += traced.len();
    }
    Ok(format!("200 rectangular rooms, {checked} paths matched the mirror-lattice oracle"))
}

// ---------------------------------------------------------------- 5

fn criterion_baseline_equivalence() -> Outcome {
    let mut r = rng(0xB17);
    let dims = ModelDims { nc: 4, nt: 4, m: 6, g: 8 };
    let mut mismatches = 0usize;
    for case in 0..100 {
        let s = Array2::from_shape_fn((3, dims.m), |_| r.random_range(-1.0..1.0));
        let ids = vec![0u32, 1, 0];
        let inputs = [0u32, 1].iter().map(|&i| (i, (0..dims.g * dims.g).map(|_| r.random_range(0.0..1.0)).collect())).collect();
        let net = ReconNet::new(dims, 0.6, case).map_err(|e| e.to_string())?;
        let base = net.forward_baseline(&s).map_err(|e| e.to_string())?;
        let zero = forward_with_params(&net, &GeneratedParams::zeros(dims.n(), dims.m), &s).map_err(|e| e.to_string())?;
        let mut a0 = net.clone();
        a0.alpha = 0.0;
        let mut hn = HyperNet::new(dims, case).map_err(|e| e.to_string())?;
        hn.output_dense.weights.data = rand_array(&mut r, hn.output_dense.weights.shape(), 0.5);
        hn.output_dense.bias.data = rand_array(&mut r, hn.output_dense.bias.shape(), 0.5);
        let alpha0 = forward_adaptive(&a0, &hn, &s, &ids, &inputs).map_err(|e| e.to_string())?;
        let base0 = a0.forward_baseline(&s).map_err(|e| e.to_string())?;
        let same = |a: &Array2<f64>, b: &Array2<f64>| a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
        if !same(&base, &zero) || !same(&base0, &alpha0) {
            mismatches += 1;
        }
    }
    if mismatches == 0 {
        Ok("100 random inputs: alpha = 0 and zero generated parameters are bit-identical to the baseline".into())
    } else {
        Err(format!("{mismatches} of 100 cases differ from the baseline"))
    }
}

// ---------------------------------------------------------------- 7

fn criterion_nmse() -> Outcome {
    let mut r = rng(0x12);
    let h = Array2::from_shape_fn((5, 32), |_| r.random_range(-1.0..1.0));
    let z = Array2::zeros((5, 32));
    let same = harness::nmse(h.view(), h.view()).map_err(|e| e.to_string())?;
    let zero = harness::nmse(z.view(), h.view()).map_err(|e| e.to_string())?;
    if same.0 == 0.0 && same.1 == f64::NEG_INFINITY && zero == (1.0, 0.0) {
        Ok("H^ = H gives 0 (-inf dB); H^ = 0 gives exactly 1.0 / 0 dB".into())
    } else {
        Err(format!("perfect {same:?}, zero {zero:?}"))
    }
}

// ---------------------------------------------------------------- 6, 8-10, 12

struct Desk {
    runner: Runner,
    sweep: Vec<harness::MetricsRecord>,
    online: Vec<harness::MetricsRecord>,
    switch: Vec<harness::MetricsRecord>,
}

fn desk() -> Result<Desk, String> {
    let cfg = ExperimentConfig::resolve(None, None, std::env::vars(), &[]).map_err(|e| e.to_string())?;
    let mut runner = Runner::new(cfg).map_err(|e| e.to_string())?;
    let cr = runner.cfg.training.focus_cr;
    let sweep = runner.run_cr_sweep(&[cr]).map_err(|e| e.to_string())?;
    let online = runner.run_online_sweep().map_err(|e| e.to_string())?;
    let switch = runner.run_switch_comparison().map_err(|e| e.to_string())?;
    Ok(Desk { runner, sweep, online, switch })
}

fn criterion_no_regression(d: &mut Desk) -> Outcome {
    let cr = d.runner.cfg.training.focus_cr;
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in d.runner.cfg.training.seeds.clone() {
        let val = d.runner.cr_data(cr).map_err(|e| e.to_string())?.val.clone();
        let inputs = d.runner.data.inputs.clone();
        let m = d.runner.trained(cr, seed).map_err(|e| e.to_string())?;
        let before = sample_loss(&m.net.forward_baseline(&val.s).map_err(|e| e.to_string())?, &val.h);
        let after = adaptive_loss(&m.net, &m.hn, &val, &inputs).map_err(|e| e.to_string())?;
        ok &= after <= before * 1.01 && (m.step2.initial_val_loss - before).abs() <= 1e-12 * before;
        lines.push(format!("seed {seed}: {before:.5} -> {after:.5}"));
    }
    let msg = format!("validation loss before -> after Step 2: {}", lines.join(", "));
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_adaptive_gain(d: &Desk) -> Outcome {
    let cr = d.runner.cfg.training.focus_cr;
    let g = median_db(&d.sweep, Method::General, cr, Subset::All).ok_or("no general records")?;
    let a = median_db(&d.sweep, Method::AdapCsiNet, cr, Subset::All).ok_or("no adapcsinet records")?;
    let per_seed: Vec<String> = d
        .sweep
        .chunks(2)
        .map(|c| format!("seed {}: {:.2}/{:.2}", c[0].seed, c[0].nmse_db, c[1].nmse_db))
        .collect();
    let gain = g - a;
    let msg = format!(
        "CR {cr}: general {g:.3} dB, AdapCsiNet {a:.3} dB, median gain {gain:.3} dB (need >= 0.5) [{}]",
        per_seed.join("; ")
    );
    if gain >= 0.5 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_online_sweep(d: &Desk) -> Outcome {
    let cr = d.runner.cfg.training.focus_cr;
    let env = Subset::Env(d.runner.data.online_env);
    let a = median_db(&d.online, Method::AdapCsiNet, cr, env).ok_or("no adapcsinet line")?;
    let g = median_db(&d.online, Method::General, cr, env).ok_or("no general line")?;
    let budgets = d.runner.cfg.training.online_budgets.clone();
    let curve: Vec<f64> = budgets.iter().map(|&k| median_db(&d.online, Method::Online(k), cr, env).unwrap_or(f64::NAN)).collect();
    let monotone = curve.windows(2).all(|w| w[1] <= w[0] + 0.3);
    let reach = budgets.iter().zip(&curve).find(|(_, &o)| o <= a + 0.5).map(|(k, _)| *k);
    let k0_exact = d
        .online
        .iter()
        .filter(|r| r.method == Method::Online(0))
        .all(|r| d.online.iter().any(|q| q.method == Method::General && q.seed == r.seed && q.nmse_linear == r.nmse_linear));
    let pts: Vec<String> = budgets.iter().zip(&curve).map(|(k, v)| format!("{k}:{v:.2}")).collect();
    let msg = format!(
        "online [{}] dB, general {g:.2}, AdapCsiNet {a:.2}; monotone {monotone}, within 0.5 dB at k* = {reach:?}, k=0 exact {k0_exact}",
        pts.join(" ")
    );
    if monotone && reach.is_some() && k0_exact {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_switch(d: &Desk) -> Outcome {
    let cr = d.runner.cfg.training.focus_cr;
    let a = median_db(&d.switch, Method::AdapCsiNet, cr, Subset::Los).ok_or("no adapcsinet LOS records")?;
    let s = median_db(&d.switch, Method::SwitchLos, cr, Subset::Los).ok_or("no switch records")?;
    let msg = format!("LOS test samples: AdapCsiNet {a:.3} dB, LOS-specific switch {s:.3} dB");
    if a <= s {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_split_hygiene(d: &mut Desk) -> Outcome {
    d.runner.audit().map_err(|e| e.to_string())?;
    let steps: u64 = d.runner.audit_log.iter().map(|e| e.gradient_steps).sum();
    // The loader itself must refuse a test-environment sample.
    let cr = d.runner.cfg.training.focus_cr;
    let test_env = d.runner.data.split.test_env_ids[0];
    let forbidden: BTreeSet<u32> = d.runner.data.split.test_set();
    let cd = d.runner.cr_data(cr).map_err(|e| e.to_string())?;
    let mut net = ReconNet::new(cd.dims, 0.6, 0).map_err(|e| e.to_string())?;
    let tc = TrainConfig { epochs: 1, ..TrainConfig::default() };
    match train_step1(&mut net, &cd.test, &cd.val, &tc, &forbidden) {
        Err(ModelError::SplitViolation(id)) if forbidden.contains(&id) => {}
        other => return Err(format!("loader accepted test environment data: {other:?}")),
    }
    Ok(format!(
        "{} training runs, {steps} gradient steps audited; no test environment outside the online exception (env {}); loader refuses env {test_env}",
        d.runner.audit_log.len(),
        d.runner.data.online_env
    ))
}

/// Supplementary desk-scale properties that reuse the trained models.
fn check_desk_dataset(d: &Desk) -> Outcome {
    let cfg = &d.runner.cfg;
    let ch = &d.runner.data.channels;
    let expected = cfg.total_envs() * cfg.split.samples_per_env;
    let train = ch.iter().filter(|c| d.runner.data.split.train_env_ids.contains(&c.scene_id)).count();
    let bad = ch.iter().filter(|c| !(c.h_tilde.iter().all(|v| v.re.is_finite() && v.im.is_finite()) && c.frobenius_norm() > 0.0)).count();
    let msg = format!("{} records ({train} in training environments), {bad} non-finite or zero-norm", ch.len());
    if ch.len() == expected && train == cfg.split.train_envs * cfg.split.samples_per_env && bad == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn check_generated_params_differ(d: &mut Desk) -> Outcome {
    let cr = d.runner.cfg.training.focus_cr;
    let seed = d.runner.cfg.training.seeds[0];
    let ids = d.runner.data.split.test_env_ids.clone();
    let inputs = d.runner.data.inputs.clone();
    let hn = d.runner.trained(cr, seed).map_err(|e| e.to_string())?.hn.clone();
    let params: Vec<Vec<f64>> =
        ids.iter().map(|id| hn.generate_params(&inputs[id]).map(|p| p.flatten())).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let mut dist = Vec::new();
    for i in 0..params.len() {
        for j in i + 1..params.len() {
            dist.push(params[i].iter().zip(&params[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt());
        }
    }
    let mean = dist.iter().sum::<f64>() / dist.len().max(1) as f64;
    let msg = format!("mean pairwise L2 distance of generated parameters over {} test scenes: {mean:.4e}", ids.len());
    if mean > 0.0 && dist.iter().all(|&v| v > 0.0) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn check_step1_early_losses(d: &mut Desk) -> Outcome {
    let cr = d.runner.cfg.training.focus_cr;
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in d.runner.cfg.training.seeds.clone() {
        let losses = d.runner.trained(cr, seed).map_err(|e| e.to_string())?.step1.train_loss.clone();
        let head = &losses[..losses.len().min(10)];
        let ups = head.windows(2).filter(|w| w[1] > w[0]).count();
        ok &= ups <= 1;
        lines.push(format!("seed {seed}: {ups} increase(s)"));
    }
    let msg = format!("Step-1 training loss over the first 10 epochs: {}", lines.join(", "));
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------- 11

fn criterion_determinism() -> Outcome {
    let over: Vec<String> = [
        "training.epochs_step1=2",
        "training.epochs_step2=2",
        "training.online_epochs=2",
        "training.seeds=[0]",
        "training.online_budgets=[0,50]",
        "preprocess.crs=[\"1/16\"]",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let cfg = ExperimentConfig::resolve(None, None, Vec::new(), &over).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut hashes = Vec::new();
    for run in 0..2 {
        let mut runner = Runner::new(cfg.clone()).map_err(|e| e.to_string())?;
        let report = harness::run_report(&mut runner).map_err(|e| e.to_string())?;
        let files = report.write(&dir.path().join(format!("run{run}"))).map_err(|e| e.to_string())?;
        let h: Vec<(String, String)> = files
            .iter()
            .map(|p| {
                let name = p.file_name().unwrap().to_string_lossy().into_owned();
                (name, adapcsi::manifest::hash_file(p).unwrap().sha256)
            })
            .collect();
        hashes.push(h);
    }
    if hashes[0] == hashes[1] {
        Ok(format!("{} output files reproduce identical SHA-256 hashes across two runs", hashes[0].len()))
    } else {
        Err(format!("hashes differ: {:?} vs {:?}", hashes[0], hashes[1]))
    }
}

// ----------------------------------------------------------------

fn report(out: &mut impl Write, id: u32, name: &str, started: Instant, outcome: &Outcome) {
    let (tag, msg) = match outcome {
        Ok(m) => ("PASS", m),
        Err(m) => ("FAIL", m),
    };
    let _ = writeln!(out, "[{tag}] criterion {id:>2} {name} ({:.1} s): {msg}", started.elapsed().as_secs_f64());
    let _ = out.flush();
}

fn main() {
    let mut out = std::io::stdout();
    let mut results: Vec<(u32, bool)> = Vec::new();
    let mut run = |id: u32, name: &str, f: &mut dyn FnMut() -> Outcome, out: &mut std::io::Stdout| {
        let t = Instant::now();
        let o = f();
        report(out, id, name, t, &o);
        results.push((id, o.is_ok()));
    };
    let mut extras: Vec<String> = Vec::new();
    let extra = |out: &mut std::io::Stdout, name: &str, f: &mut dyn FnMut() -> Outcome, failed: &mut Vec<String>| {
        let t = Instant::now();
        let o = f();
        let (tag, msg) = match &o {
            Ok(m) => ("ok", m),
            Err(m) => ("FAILED", m),
        };
        let _ = writeln!(out, "  [{tag}] {name} ({:.1} s): {msg}", t.elapsed().as_secs_f64());
        if o.is_err() {
            failed.push(name.to_string());
        }
    };
    run(1, "gradient correctness", &mut criterion_gradients, &mut out);
    run(2, "layer oracles", &mut criterion_layer_oracles, &mut out);
    run(3, "DFT unitarity and round trip", &mut criterion_dft, &mut out);
    run(4, "ray-tracer oracle", &mut criterion_ray_tracer, &mut out);
    run(5, "baseline equivalence", &mut criterion_baseline_equivalence, &mut out);
    run(7, "NMSE definitions", &mut criterion_nmse, &mut out);
    run(11, "determinism", &mut criterion_determinism, &mut out);
    let t = Instant::now();
    match desk() {
        Ok(mut d) => {
            let _ = writeln!(out, "desk experiments trained in {:.1} s", t.elapsed().as_secs_f64());
            run(6, "Step-2 no-regression", &mut || criterion_no_regression(&mut d), &mut out);
            run(8, "adaptive gain at CR 1/16", &mut || criterion_adaptive_gain(&d), &mut out);
            run(9, "online fine-tuning sweep", &mut || criterion_online_sweep(&d), &mut out);
            run(10, "LOS switch comparison", &mut || criterion_switch(&d), &mut out);
            run(12, "split hygiene", &mut || criterion_split_hygiene(&mut d), &mut out);
            extra(&mut out, "desk dataset scan", &mut || check_desk_dataset(&d), &mut extras);
            extra(&mut out, "environment sensitivity", &mut || check_generated_params_differ(&mut d), &mut extras);
            extra(&mut out, "Step-1 early losses", &mut || check_step1_early_losses(&mut d), &mut extras);
        }
        Err(e) => {
            for (id, name) in [(6, "Step-2 no-regression"), (8, "adaptive gain at CR 1/16"), (9, "online fine-tuning sweep"), (10, "LOS switch comparison"), (12, "split hygiene")] {
                run(id, name, &mut || Err(format!("desk experiments failed: {e}")), &mut out);
            }
        }
    }
    results.sort();
    for name in &extras {
        let _ = writeln!(out, "supplementary check failed: {name}");
    }
    let failed: Vec<u32> = results.iter().filter(|(_, ok)| !ok).map(|(id, _)| *id).collect();
    let _ = writeln!(out, "acceptance: {} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() || !extras.is_empty() {
        let _ = writeln!(out, "failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
