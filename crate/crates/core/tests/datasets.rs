use oplab::container::CONVERTED_FROM;
use oplab::datasets::{build, dataset_path, generate, Solutions};
use oplab::dynamics::{generate_trajectories, OdeSettings, OdeSystem};
use oplab::pde::PdeSettings;
use oplab::{DataConfig, DatasetKind, Equation, Error, OperatorDataset, Split, SplitRatios};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_ode() -> DataConfig {
    DataConfig {
        n_trajectories: 20,
        ode: OdeSettings { h: 1e-2, t_final: 0.5, n_store: 10 },
        ..DataConfig::default()
    }
}

fn small_pde() -> DataConfig {
    let mut pde = PdeSettings::defaults(oplab::pde::PdeKind::Burgers);
    pde.n_points = 32;
    pde.n_store = 4;
    pde.t_final = 0.1;
    DataConfig {
        n_trajectories: 10,
        m_sensors: Some(16),
        pde: Some(pde),
        ..DataConfig::default()
    }
}

#[test]
fn koopman_pendulum_rows_hold_whole_trajectories() {
    let ds = generate::<f64>(Equation::Pendulum, DatasetKind::Koopman, &small_ode(), 3).unwrap();
    assert_eq!(ds.targets.shape(), &[20, 11, 2]);
    assert_eq!(ds.inputs.shape(), &[20, 2]);
    assert_eq!(ds.n_examples(), 20);
    for r in 0..20 {
        assert_eq!(&ds.inputs.data()[2 * r..2 * r + 2], &ds.targets.data()[22 * r..22 * r + 2]);
    }
}

#[test]
fn deeponet_example_count_is_rows_times_queries() {
    let ds = generate::<f64>(Equation::Lorenz, DatasetKind::DeepONet, &small_ode(), 3).unwrap();
    assert_eq!(ds.queries.shape(), &[11, 1]);
    assert_eq!(ds.n_examples(), 20 * 11);
    assert_eq!(ds.target_width(), 3);

    let ds = generate::<f64>(Equation::Burgers, DatasetKind::DeepONet, &small_pde(), 3).unwrap();
    assert_eq!(ds.inputs.shape(), &[10, 16]);
    assert_eq!(ds.queries.shape(), &[32 * 5, 2]);
    assert_eq!(ds.n_examples(), 10 * 160);
}

#[test]
fn fno_rows_pair_initial_field_with_every_frame() {
    let ds = generate::<f64>(Equation::Burgers, DatasetKind::Fno, &small_pde(), 3).unwrap();
    assert_eq!(ds.inputs.shape(), &[10, 32]);
    assert_eq!(ds.queries.shape(), &[5]);
    assert_eq!(ds.targets.shape(), &[10, 5, 32]);
    assert_eq!(ds.queries.data()[0], 0.0);
    assert!(generate::<f64>(Equation::Lorenz, DatasetKind::Fno, &small_ode(), 3).is_err());
}

#[test]
fn split_is_by_trajectory_and_seeded() {
    let trs = generate_trajectories::<f64>(OdeSystem::Pendulum, 100, 1, &small_ode().ode).unwrap();
    let ds = build(DatasetKind::Koopman, Solutions::Ode(&trs), None, SplitRatios::default(), 9).unwrap();
    assert_eq!(ds.split.sizes(), [80, 10, 10]);
    let again = build(DatasetKind::Koopman, Solutions::Ode(&trs), None, SplitRatios::default(), 9).unwrap();
    assert_eq!(ds, again);
    let few = &trs[..5];
    assert!(matches!(
        build(DatasetKind::Koopman, Solutions::Ode(few), None, SplitRatios::default(), 9),
        Err(Error::Data(_))
    ));
}

#[test]
fn save_load_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate::<f64>(Equation::Lorenz, DatasetKind::DeepONet, &small_ode(), 5).unwrap();
    let path = dataset_path(dir.path(), Equation::Lorenz, DatasetKind::DeepONet, 5);
    assert!(path.ends_with("data/lorenz/deeponet/5.opds"));
    ds.save(&path).unwrap();
    let back = OperatorDataset::<f64>::load(&path).unwrap();
    assert_eq!(back, ds);
    let first = std::fs::read(&path).unwrap();
    back.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
}

#[test]
fn tiny_dataset_reserializes_identically() {
    let trs = generate_trajectories::<f64>(OdeSystem::Lorenz, 3, 2, &small_ode().ode).unwrap();
    let ratios = SplitRatios { train: 1.0 / 3.0, val: 1.0 / 3.0, test: 1.0 / 3.0 };
    let ds = build(DatasetKind::Koopman, Solutions::Ode(&trs), None, ratios, 0).unwrap();
    assert_eq!(ds.split.sizes(), [1, 1, 1]);
    let bytes = ds.to_container().to_bytes().unwrap();
    let back = OperatorDataset::<f64>::from_container(oplab::Container::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back.to_container().to_bytes().unwrap(), bytes);
}

#[test]
fn corrupted_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.opds");
    let ds = generate::<f64>(Equation::Pendulum, DatasetKind::Koopman, &small_ode(), 5).unwrap();
    ds.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    let mut bad = bytes.clone();
    bad[0] = b'%';
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(OperatorDataset::<f64>::load(&path), Err(Error::Version(_))));

    let mut bad = bytes.clone();
    let n = bad.len();
    bad[n - 10] ^= 0x40;
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(OperatorDataset::<f64>::load(&path), Err(Error::Checksum { .. })));

    std::fs::write(&path, &bytes[..n / 2]).unwrap();
    assert!(matches!(OperatorDataset::<f64>::load(&path), Err(Error::Format(_))));
}

#[test]
fn cross_precision_load_narrows_with_flag() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.opds");
    let ds = generate::<f64>(Equation::Pendulum, DatasetKind::Koopman, &small_ode(), 5).unwrap();
    ds.save(&path).unwrap();
    let narrow = OperatorDataset::<f32>::load(&path).unwrap();
    assert_eq!(narrow.meta.get(CONVERTED_FROM).map(String::as_str), Some("f64"));
    for (a, b) in narrow.targets.data().iter().zip(ds.targets.data()) {
        assert_eq!(*a, *b as f32);
    }
    assert_eq!(narrow.split, ds.split);
}

#[test]
fn stored_rows_match_a_fresh_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (eq, kind, cfg) in [
        (Equation::FluidAttractor, DatasetKind::Koopman, small_ode()),
        (Equation::Lorenz, DatasetKind::DeepONet, small_ode()),
        (Equation::Burgers, DatasetKind::DeepONet, small_pde()),
    ] {
        let ds = generate::<f64>(eq, kind, &cfg, 11).unwrap();
        let rows: Vec<usize> = (0..3).map(|_| rng.gen_range(0..ds.n_rows())).collect();
        ds.verify_rows(&rows).unwrap();
        let mut tampered = ds.clone();
        let w = tampered.targets.len() / tampered.n_rows();
        tampered.targets.data_mut()[rows[0] * w + 1] += 1e-9;
        assert!(tampered.verify_rows(&rows).is_err());
    }
}

#[test]
fn kdv_fno_dataset_regenerates() {
    let mut pde = PdeSettings::defaults(oplab::pde::PdeKind::Kdv);
    pde.n_points = 32;
    pde.n_store = 4;
    pde.t_final = 0.05;
    let cfg = DataConfig { n_trajectories: 10, pde: Some(pde), ..DataConfig::default() };
    let ds = generate::<f64>(Equation::Kdv, DatasetKind::Fno, &cfg, 4).unwrap();
    ds.verify_rows(&[0, 5, 9]).unwrap();
    assert_eq!(ds.grid().unwrap().n_points, 32);
}

proptest! {
    #[test]
    fn splits_partition_rows(n in 10usize..400, seed in any::<u64>()) {
        let s = Split::new(n, SplitRatios::default(), seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(s.val.len() >= 1 && s.test.len() >= 1);
    }
}
