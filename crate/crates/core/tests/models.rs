use std::f64::consts::PI;

use oplab::models::{Dims, Fno, KoopmanAutoencoder, Model, ModelConfig, ParamStore, SpectralConvLayer, DeepONet};
use oplab::tensor::gradcheck::check_gradients;
use oplab::training::{koopman_loss, mse_loss};
use oplab::{Activation, DatasetKind, Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn set(store: &mut ParamStore<f64>, name: &str, values: &[f64]) {
    let p = store.params.iter_mut().find(|p| p.name == name).unwrap();
    p.value.data_mut().copy_from_slice(values);
}

#[test]
fn deeponet_zero_branch_gives_zero() {
    let mut m = DeepONet::<f64>::new(&[3, 8, 4], &[1, 8, 4], 1, Activation::Tanh, 1).unwrap();
    set(&mut m.store, "branch.1.w", &[0.0; 32]);
    set(&mut m.store, "branch.1.b", &[0.0; 4]);
    for t in [0.0, 0.3, 1.0] {
        assert_eq!(m.eval(&[0.1, 0.2, 0.3], &[t]).unwrap(), vec![0.0]);
    }
}

#[test]
fn deeponet_matches_hand_computation() {
    // single linear layers: branch(u) = u·Wb + bb, trunk(y) = y·Wt + bt
    let mut m = DeepONet::<f64>::new(&[2, 2], &[1, 2], 1, Activation::Relu, 0).unwrap();
    set(&mut m.store, "branch.0.w", &[1.0, 2.0, 3.0, 4.0]);
    set(&mut m.store, "branch.0.b", &[0.5, -1.0]);
    set(&mut m.store, "trunk.0.w", &[2.0, -1.0]);
    set(&mut m.store, "trunk.0.b", &[0.0, 1.0]);
    // u = (1, -1): branch = (1-3+0.5, 2-4-1) = (-1.5, -3)
    // y = 2: trunk = (4, -2+1) = (4, -1); dot = -6 + 3 = -3
    assert_eq!(m.eval(&[1.0, -1.0], &[2.0]).unwrap(), vec![-3.0]);
    assert_eq!(m.eval(&[1.0, -1.0], &[2.0]).unwrap(), m.eval(&[1.0, -1.0], &[2.0]).unwrap());
    assert!(m.eval(&[1.0], &[2.0]).is_err());
}

#[test]
fn deeponet_blocks_split_latent_per_component() {
    let mut m = DeepONet::<f64>::new(&[1, 4], &[1, 4], 2, Activation::Relu, 0).unwrap();
    set(&mut m.store, "branch.0.w", &[1.0, 2.0, 3.0, 4.0]);
    set(&mut m.store, "branch.0.b", &[0.0; 4]);
    set(&mut m.store, "trunk.0.w", &[1.0, 1.0, 1.0, -1.0]);
    set(&mut m.store, "trunk.0.b", &[0.0; 4]);
    // branch = (1,2,3,4), trunk = (1,1,1,-1): blocks (1·1+2·1, 3·1−4·1)
    assert_eq!(m.eval(&[1.0], &[1.0]).unwrap(), vec![3.0, -1.0]);
}

fn layer(c_in: usize, c_out: usize, k_max: usize, act: Activation, seed: u64) -> (ParamStore<f64>, SpectralConvLayer) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = SpectralConvLayer::new(&mut store, "s", c_in, c_out, k_max, act, &mut rng).unwrap();
    (store, l)
}

fn run_layer(store: &ParamStore<f64>, l: &SpectralConvLayer, x: &[f64], n: usize, pre: bool) -> Vec<f64> {
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let xv = g.constant_from(&[1, l.c_in, n], x.to_vec()).unwrap();
    let y = if pre { l.pre_activation(&mut g, &p, xv) } else { l.forward(&mut g, &p, xv) }.unwrap();
    g.value(y).to_vec()
}

#[test]
fn spectral_layer_bypass_only_is_identity_on_positive_input() {
    let (mut store, l) = layer(2, 2, 3, Activation::Relu, 0);
    store.params[0].value.data_mut().fill(0.0);
    set(&mut store, "s.w.w", &[1.0, 0.0, 0.0, 1.0]);
    let x: Vec<f64> = (0..16).map(|i| 0.1 + i as f64 * 0.05).collect();
    let y = run_layer(&store, &l, &x, 8, false);
    for (a, b) in x.iter().zip(&y) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn spectral_layer_passes_a_retained_harmonic() {
    let n = 16;
    let (mut store, l) = layer(1, 1, 4, Activation::Tanh, 0);
    let mut r = vec![0.0; 8];
    for k in 0..4 {
        r[2 * k] = 1.0;
    }
    set(&mut store, "s.r", &r);
    set(&mut store, "s.w.w", &[0.0]);
    let x: Vec<f64> = (0..n).map(|j| 0.7 * (2.0 * PI * 2.0 * j as f64 / n as f64).cos()).collect();
    let y = run_layer(&store, &l, &x, n, false);
    for (a, b) in x.iter().zip(&y) {
        assert!((a.tanh() - b).abs() < 1e-12);
    }
}

/// y[j] = Σ_m κ[m]·x[(j−m) mod N] + w·x[j], with κ the inverse DFT of the
/// Hermitian completion of R (zero beyond k_max, DC/Nyquist taken real).
fn direct_circular_conv(x: &[f64], r: &[f64], k_max: usize, w: f64) -> Vec<f64> {
    let n = x.len();
    let mut kappa = vec![0.0; n];
    for (m, km) in kappa.iter_mut().enumerate() {
        let mut s = 0.0;
        for k in 0..n {
            // spectrum value at k, using conjugate symmetry above n/2
            let (kk, conj) = if k <= n / 2 { (k, false) } else { (n - k, true) };
            if kk >= k_max {
                continue;
            }
            let re = r[2 * kk];
            let mut im = if conj { -r[2 * kk + 1] } else { r[2 * kk + 1] };
            if kk == 0 || 2 * kk == n {
                im = 0.0;
            }
            let th = 2.0 * PI * (k * m) as f64 / n as f64;
            s += re * th.cos() - im * th.sin();
        }
        *km = s / n as f64;
    }
    (0..n)
        .map(|j| (0..n).map(|m| kappa[m] * x[(j + n - m) % n]).sum::<f64>() + w * x[j])
        .collect()
}

/// Largest gap between the spectral layer (pre-activation) and the direct
/// circular convolution on length-`n` signals, over several mode counts.
pub fn spectral_conv_gap(n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst = 0.0f64;
    for k_max in [1, 3, n / 2 + 1] {
        let (mut store, l) = layer(1, 1, k_max, Activation::Gelu, 7);
        let r = random_vec(&mut rng, 2 * k_max);
        set(&mut store, "s.r", &r);
        let w = rng.gen_range(-1.0..1.0);
        set(&mut store, "s.w.w", &[w]);
        let x = random_vec(&mut rng, n);
        let got = run_layer(&store, &l, &x, n, true);
        let want = direct_circular_conv(&x, &r, k_max, w);
        worst = got.iter().zip(&want).fold(worst, |m, (a, b)| m.max((a - b).abs()));
    }
    worst
}

#[test]
fn spectral_layer_equals_direct_circular_convolution() {
    let gap = spectral_conv_gap(8);
    assert!(gap < 1e-10, "{gap:e}");
}

#[test]
fn spectral_layer_rejects_too_many_modes() {
    let (store, l) = layer(1, 1, 6, Activation::Gelu, 0);
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let x = g.constant_from(&[1, 1, 8], vec![0.0; 8]).unwrap();
    assert!(l.forward(&mut g, &p, x).is_err());
}

fn shift(x: &[f64], channels: usize, n: usize, s: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for c in 0..channels {
        for j in 0..n {
            out[c * n + (j + s) % n] = x[c * n + j];
        }
    }
    out
}

#[test]
fn fno_commutes_with_circular_shifts() {
    let n = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k_max in [3, 8, 17] {
        let m = Fno::<f64>::new(2, 1, 6, 2, k_max, Activation::Gelu, k_max as u64).unwrap();
        let x = random_vec(&mut rng, 2 * n);
        let y = m.eval(&x, n).unwrap();
        assert_eq!(y.len(), n);
        assert_eq!(y, m.eval(&x, n).unwrap());
        for s in [1, 5, 16] {
            let ys = m.eval(&shift(&x, 2, n, s), n).unwrap();
            let want = shift(&y, 1, n, s);
            for (a, b) in ys.iter().zip(&want) {
                assert!((a - b).abs() < 1e-8, "k_max {k_max} shift {s}");
            }
        }
    }
}

fn identity_koopman(d: usize) -> KoopmanAutoencoder<f64> {
    let mut m = KoopmanAutoencoder::<f64>::new(d, d, 0, d, Activation::Relu, 0).unwrap();
    let eye = Tensor::<f64>::eye(d);
    set(&mut m.store, "encoder.0.w", eye.data());
    set(&mut m.store, "encoder.0.b", &vec![0.0; d]);
    set(&mut m.store, "decoder.0.w", eye.data());
    set(&mut m.store, "decoder.0.b", &vec![0.0; d]);
    m
}

#[test]
fn koopman_identity_is_a_fixed_point() {
    let m = identity_koopman(3);
    let v0 = [0.3, -0.2, 1.1];
    let out = m.eval_rollout(&v0, 5).unwrap();
    for step in out.chunks(3) {
        assert_eq!(step, v0);
    }
    assert!(m.eval_rollout(&v0, 0).is_err());
}

#[test]
fn koopman_single_step_is_composition() {
    let mut m = KoopmanAutoencoder::<f64>::new(2, 5, 2, 4, Activation::Tanh, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let k = random_vec(&mut rng, 16);
    m.store.get_mut(m.k).data_mut().copy_from_slice(&k);
    m.project_mask();
    let v0 = [0.4, -0.7];
    let mut g = Graph::new();
    let p = m.store.bind_frozen(&mut g);
    let x = g.constant_from(&[1, 2], v0.to_vec()).unwrap();
    let z = m.encode(&mut g, &p, x).unwrap();
    let kt = g.transpose(p[m.k.0]).unwrap();
    let z1 = g.matmul(z, kt).unwrap();
    let manual = m.decode(&mut g, &p, z1).unwrap();
    assert_eq!(g.value(manual), &m.eval_rollout(&v0, 1).unwrap()[..]);
}

#[test]
fn orthogonal_koopman_preserves_latent_norm() {
    // block rotations are orthogonal and tridiagonal
    let e = 6;
    let mut m = KoopmanAutoencoder::<f64>::new(2, 8, 2, e, Activation::Gelu, 2).unwrap();
    let mut k = vec![0.0; e * e];
    for (blk, th) in [0.3f64, 1.1, -0.7].iter().enumerate() {
        let i = 2 * blk;
        k[i * e + i] = th.cos();
        k[i * e + i + 1] = -th.sin();
        k[(i + 1) * e + i] = th.sin();
        k[(i + 1) * e + i + 1] = th.cos();
    }
    m.store.get_mut(m.k).data_mut().copy_from_slice(&k);
    assert_eq!(m.off_band_max(), 0.0);
    assert!(m.unitarity_defect() < 1e-15);
    let mut g = Graph::new();
    let p = m.store.bind_frozen(&mut g);
    let x = g.constant_from(&[1, 2], vec![0.5, -0.3]).unwrap();
    let z0 = m.encode(&mut g, &p, x).unwrap();
    let r0: f64 = g.value(z0).iter().map(|v| v * v).sum::<f64>().sqrt();
    for z in m.latent_rollout(&mut g, &p, x, 50).unwrap() {
        let r: f64 = g.value(z).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((r - r0).abs() < 1e-10);
    }
}

fn params_as_inputs(store: &ParamStore<f64>) -> Vec<Tensor<f64>> {
    store.params.iter().map(|p| p.value.clone().with_requires_grad(true)).collect()
}

/// Worst relative gradient error of each full model, tiny widths, 64-bit.
pub fn model_gradient_errors() -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut out = Vec::new();

    let m = DeepONet::<f64>::new(&[3, 4, 4], &[2, 4, 4], 2, Activation::Tanh, 1).unwrap();
    let sensors = random_vec(&mut rng, 2 * 3);
    let queries = random_vec(&mut rng, 5 * 2);
    let targets = random_vec(&mut rng, 2 * 5 * 2);
    let inputs = params_as_inputs(&m.store);
    let r = check_gradients(&inputs, 1e-6, |g, p| {
        let s = g.constant_from(&[2, 3], sensors.clone())?;
        let q = g.constant_from(&[5, 2], queries.clone())?;
        let outs = m.forward(g, p, s, q)?;
        let t0 = g.constant_from(&[2, 5], targets[..10].to_vec())?;
        let t1 = g.constant_from(&[2, 5], targets[10..].to_vec())?;
        let a = mse_loss(g, outs[0], t0)?;
        let b = mse_loss(g, outs[1], t1)?;
        g.add(a, b)
    })
    .unwrap();
    out.push(("deeponet", r.max_rel_err));

    let m = Fno::<f64>::new(2, 1, 3, 2, 3, Activation::Gelu, 2).unwrap();
    let x = random_vec(&mut rng, 2 * 2 * 8);
    let y = random_vec(&mut rng, 2 * 8);
    let inputs = params_as_inputs(&m.store);
    let r = check_gradients(&inputs, 1e-6, |g, p| {
        let xv = g.constant_from(&[2, 2, 8], x.clone())?;
        let yv = g.constant_from(&[2, 1, 8], y.clone())?;
        let pred = m.forward(g, p, xv)?;
        mse_loss(g, pred, yv)
    })
    .unwrap();
    out.push(("fno", r.max_rel_err));

    let mut m = KoopmanAutoencoder::<f64>::new(2, 4, 1, 3, Activation::Elu, 3).unwrap();
    let k = random_vec(&mut rng, 9).iter().map(|v| 0.3 * v).collect::<Vec<_>>();
    m.store.get_mut(m.k).data_mut().copy_from_slice(&k);
    let trajs = random_vec(&mut rng, 2 * 4 * 2);
    let inputs = params_as_inputs(&m.store);
    let r = check_gradients(&inputs, 1e-6, |g, p| Ok(koopman_loss(g, &m, p, &trajs, 2)?.total)).unwrap();
    out.push(("koopman", r.max_rel_err));
    out
}

#[test]
fn full_models_pass_gradient_checks() {
    for (name, err) in model_gradient_errors() {
        assert!(err < 1e-4, "{name}: {err}");
    }
}

#[test]
fn checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig {
        deeponet_hidden: 5,
        deeponet_depth: 2,
        deeponet_latent: 4,
        fno_width: 4,
        fno_layers: 2,
        fno_k_max: 3,
        koopman_hidden: 5,
        koopman_depth: 1,
        koopman_encoding: 4,
        activation: Activation::Elu,
    };
    let dims = Dims { input: 3, query: 1, output: 3 };
    for kind in DatasetKind::ALL {
        let dims = if kind == DatasetKind::Fno { Dims { input: 2, query: 0, output: 1 } } else { dims };
        let m = Model::<f64>::new(kind, &cfg, dims, 5).unwrap();
        let path = dir.path().join(format!("{kind}.ckpt"));
        m.save(&cfg, dims, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let (back, cfg2, dims2) = Model::<f64>::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!((cfg2.activation, dims2), (cfg.activation, dims));
        back.save(&cfg2, dims2, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
    }
}

#[test]
fn models_are_seeded() {
    let a = Fno::<f64>::new(2, 1, 4, 2, 3, Activation::Gelu, 1).unwrap();
    let b = Fno::<f64>::new(2, 1, 4, 2, 3, Activation::Gelu, 1).unwrap();
    let c = Fno::<f64>::new(2, 1, 4, 2, 3, Activation::Gelu, 2).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}
