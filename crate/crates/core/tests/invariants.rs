use adapcsi::autodiff::{Checkpoint, Graph, Tensor};
use adapcsi::channel::{assemble_channel, is_los, trace_paths, OfdmConfig, PathComponent, TraceConfig, UlaConfig, SPEED_OF_LIGHT};
use adapcsi::model::{ModelDims, ReconNet};
use adapcsi::preprocess::{CompressionRatio, ProjectionMatrix};
use adapcsi::scene::{generate_scene, SceneParams};
use ndarray::{Array2, ArrayD, IxDyn};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn path(delay: f64, gain: Complex64, aod: f64) -> PathComponent {
    PathComponent {
        delay,
        complex_gain: gain,
        aod_azimuth: aod,
        n_reflections: 0,
        n_diffractions: 0,
        is_los: false,
        vertices: vec![],
    }
}

fn arb_path() -> impl Strategy<Value = PathComponent> {
    (1e-9..2e-7f64, -1.0..1.0f64, -1.0..1.0f64, -1.5..1.5f64).prop_map(|(d, re, im, a)| path(d, Complex64::new(re, im), a))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn channel_is_a_superposition_of_paths(a in prop::collection::vec(arb_path(), 1..6), b in prop::collection::vec(arb_path(), 1..6)) {
        let (ula, ofdm) = (UlaConfig::default(), OfdmConfig { n_subcarriers: 16, ..OfdmConfig::default() });
        let ha = assemble_channel(&a, &ula, &ofdm).unwrap().h_tilde;
        let hb = assemble_channel(&b, &ula, &ofdm).unwrap().h_tilde;
        let both: Vec<PathComponent> = a.iter().chain(b.iter()).cloned().collect();
        let hab = assemble_channel(&both, &ula, &ofdm).unwrap().h_tilde;
        let err = (&hab - &(&ha + &hb)).iter().map(|c| c.norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-12);
    }

    #[test]
    fn single_path_channel_has_the_path_magnitude_everywhere(p in arb_path()) {
        let h = assemble_channel(&[p.clone()], &UlaConfig::default(), &OfdmConfig::default()).unwrap().h_tilde;
        for c in h.iter() {
            prop_assert!((c.norm() - p.complex_gain.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn generated_scenes_are_valid_and_reachable(id in 0u32..500, seed in 0u64..1000) {
        let scene = generate_scene(id, seed, &SceneParams::default()).unwrap();
        prop_assert!(scene.check_invariants().is_ok());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let ue = scene.sample_ue(&mut rng, 0.1, 0.5);
        prop_assert!(scene.contains_ue(ue));
        let paths = trace_paths(&scene, ue, &TraceConfig::default()).unwrap();
        let direct = paths.iter().find(|p| p.n_reflections == 0 && p.n_diffractions == 0);
        prop_assert_eq!(direct.is_some(), is_los(&scene, ue));
        if let Some(d) = direct {
            let bs = scene.bs_position;
            let dist = ((bs.x - ue.x).powi(2) + (bs.y - ue.y).powi(2) + (bs.z - ue.z).powi(2)).sqrt();
            prop_assert!((d.delay * SPEED_OF_LIGHT - dist).abs() < 1e-9 * dist);
            prop_assert!(paths.iter().all(|p| p.delay >= d.delay - 1e-15));
        }
    }

    #[test]
    fn compression_is_linear(seed in 0u64..50, k in -3.0..3.0f64) {
        let n = 64;
        let a = ProjectionMatrix::generate(CompressionRatio::new(1, 8), n, seed).unwrap();
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((2, n), |_| r.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((2, n), |_| r.random_range(-1.0..1.0));
        let lhs = a.compress_batch(&(&x + &(&y * k))).unwrap();
        let rhs = a.compress_batch(&x).unwrap() + a.compress_batch(&y).unwrap() * k;
        prop_assert!((lhs - rhs).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn mse_gradient_matches_closed_form(b in 1usize..5, n in 1usize..8, seed in 0u64..1000) {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let p = ArrayD::from_shape_fn(IxDyn(&[b, n]), |_| r.random_range(-1.0..1.0));
        let t = ArrayD::from_shape_fn(IxDyn(&[b, n]), |_| r.random_range(-1.0..1.0));
        let mut g = Graph::new();
        let pv = g.param(&Tensor::new(p.clone(), true)).unwrap();
        let tv = g.input(t.clone()).unwrap();
        let loss = g.mse_loss(pv, tv).unwrap();
        let expected_loss = (&p - &t).mapv(|v| v * v).sum() / b as f64;
        prop_assert!((g.value(loss)[[]] - expected_loss).abs() < 1e-12);
        let grad = g.backward(loss).unwrap().get(pv).unwrap().clone();
        let expected = (&p - &t) * (2.0 / b as f64);
        prop_assert!((grad - expected).iter().all(|v| v.abs() < 1e-12));
    }
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let dims = ModelDims { nc: 4, nt: 4, m: 4, g: 8 };
    let net = ReconNet::new(dims, 0.6, 11).unwrap();
    let header = adapcsi::model::ModelHeader {
        kind: "reconnet".into(),
        dims,
        alpha: 0.6,
        cr: CompressionRatio::new(1, 8),
        seed: 11,
        projection_seed: 3,
    };
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.ck");
    net.to_checkpoint(&header, None).save(&p).unwrap();
    let (back, h) = ReconNet::from_checkpoint(&Checkpoint::load(&p).unwrap()).unwrap();
    assert_eq!(h, header);
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let s = Array2::from_shape_fn((3, 4), |_| r.random_range(-1.0..1.0));
    let (a, b) = (net.forward_baseline(&s).unwrap(), back.forward_baseline(&s).unwrap());
    assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn truncated_checkpoint_is_an_error() {
    let dims = ModelDims { nc: 4, nt: 4, m: 4, g: 8 };
    let net = ReconNet::new(dims, 0.6, 1).unwrap();
    let header = adapcsi::model::ModelHeader {
        kind: "reconnet".into(),
        dims,
        alpha: 0.6,
        cr: CompressionRatio::new(1, 8),
        seed: 1,
        projection_seed: 3,
    };
    let mut buf = Vec::new();
    net.to_checkpoint(&header, None).write(&mut buf).unwrap();
    buf.truncate(buf.len() / 2);
    assert!(Checkpoint::read(&mut buf.as_slice()).is_err());
}
