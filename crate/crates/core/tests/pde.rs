use oplab::pde::{
    generate_field_trajectories, high_mode_fraction, random_initial_condition, solve_burgers, solve_kdv,
    solve_kdv_fixed, Boundary, Grid1D, PdeKind, PdeSettings,
};

fn energy(u: &[f64]) -> f64 {
    u.iter().map(|v| v * v).sum()
}

fn sine_grid(n: usize) -> Grid1D {
    Grid1D::new(0.0, 1.0, n, Boundary::DirichletZero).unwrap()
}

#[test]
fn burgers_energy_decreases_and_boundary_is_pinned() {
    let settings = PdeSettings::defaults(PdeKind::Burgers);
    for tr in generate_field_trajectories::<f64>(PdeKind::Burgers, 4, 21, &settings).unwrap() {
        let n = tr.grid.n_points;
        for i in 0..tr.n_times() {
            let f = tr.frame(i);
            assert_eq!(f[0].to_bits(), 0.0f64.to_bits());
            assert_eq!(f[n - 1].to_bits(), 0.0f64.to_bits());
            if i > 0 {
                assert!(energy(f) <= energy(tr.frame(i - 1)) + 1e-10, "frame {i}");
            }
        }
    }
}

#[test]
fn single_sine_mode_decays_monotonically() {
    let g = sine_grid(65);
    let u0: Vec<f64> = g.points().iter().map(|&x| 0.8 * (std::f64::consts::PI * x).sin()).collect();
    let mut u0 = u0;
    u0[0] = 0.0;
    u0[64] = 0.0;
    let tr = solve_burgers(&u0, &g, 0.5, 25).unwrap();
    let norms: Vec<f64> = (0..tr.n_times()).map(|i| energy(tr.frame(i))).collect();
    assert!(norms.windows(2).all(|w| w[1] < w[0]));
    // diffusion dominated: close to exp(-2π² t) on the refined solve
    let fine = solve_burgers(&refine(&u0), &sine_grid(129), 0.5, 25).unwrap();
    let coarse_last = tr.frame(25);
    let fine_last: Vec<f64> = fine.frame(25).iter().step_by(2).copied().collect();
    let gap = coarse_last.iter().zip(&fine_last).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap < 1e-3, "{gap:e}");
}

/// Samples the same analytic sine initial data on a grid with half the spacing.
fn refine(u: &[f64]) -> Vec<f64> {
    let n = 2 * (u.len() - 1) + 1;
    let g = sine_grid(n);
    let mut out: Vec<f64> = g.points().iter().map(|&x| 0.8 * (std::f64::consts::PI * x).sin()).collect();
    out[0] = 0.0;
    out[n - 1] = 0.0;
    out
}

/// Observed spatial order from three nested grids sharing the coarse nodes.
pub fn burgers_spatial_order() -> f64 {
    let settings = PdeSettings::defaults(PdeKind::Burgers);
    let coarse = sine_grid(33);
    let series = oplab::pde::TrigSeries::random(Boundary::DirichletZero, &coarse, 6, 1.0, 4);
    let solve = |n: usize| {
        let g = sine_grid(n);
        let u0 = series.sample::<f64>(&g);
        let tr = solve_burgers(&u0, &g, 0.1, 1).unwrap();
        let stride = (n - 1) / 32;
        tr.frame(1).iter().step_by(stride).copied().collect::<Vec<f64>>()
    };
    let _ = settings;
    let (a, b, c) = (solve(33), solve(65), solve(129));
    let d1 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let d2 = b.iter().zip(&c).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    (d1 / d2).log2()
}

#[test]
fn burgers_is_second_order_in_space() {
    let order = burgers_spatial_order();
    assert!(order >= 1.8, "observed order {order}");
}

#[test]
fn kdv_conserves_mass() {
    let settings = PdeSettings::defaults(PdeKind::Kdv);
    for tr in generate_field_trajectories::<f64>(PdeKind::Kdv, 4, 8, &settings).unwrap() {
        let dx = tr.grid.dx();
        let mass = |i: usize| tr.frame(i).iter().sum::<f64>() * dx;
        let scale = tr.frame(0).iter().map(|v| v.abs()).sum::<f64>() * dx;
        let m0 = mass(0);
        for i in 1..tr.n_times() {
            assert!((mass(i) - m0).abs() / scale < 1e-8, "frame {i}");
        }
    }
}

/// Observed temporal order of the KdV integrator: errors against a
/// 16×-refined reference at m and 2m steps, in the asymptotic range.
pub fn kdv_temporal_order(seed: u64) -> f64 {
    let settings = PdeSettings::defaults(PdeKind::Kdv);
    let g = settings.grid(PdeKind::Kdv).unwrap();
    let u0 = random_initial_condition::<f64>(&g, 6, 1.0, seed);
    let run = |m: usize| solve_kdv_fixed(&u0, &g, 0.2, 1, m).unwrap().frame(1).to_vec();
    let reference = run(10240);
    let err = |m: usize| {
        run(m).iter().zip(&reference).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    };
    (err(640) / err(1280)).log2()
}

#[test]
fn kdv_time_stepping_is_fourth_order() {
    for seed in [3, 12] {
        let order = kdv_temporal_order(seed);
        assert!((3.5..=4.5).contains(&order), "seed {seed}: order {order}");
    }
}

#[test]
fn default_kdv_data_is_resolved() {
    let settings = PdeSettings::defaults(PdeKind::Kdv);
    let trs = generate_field_trajectories::<f64>(PdeKind::Kdv, 32, 100, &settings).unwrap();
    for tr in &trs {
        let last = tr.frame(tr.n_times() - 1);
        assert!(high_mode_fraction(last) < 0.01);
        assert!(tr.fields.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn generation_is_deterministic() {
    let s = PdeSettings::defaults(PdeKind::Kdv);
    let a = generate_field_trajectories::<f64>(PdeKind::Kdv, 3, 1, &s).unwrap();
    let b = generate_field_trajectories::<f64>(PdeKind::Kdv, 3, 1, &s).unwrap();
    assert_eq!(a, b);
    let g = s.grid(PdeKind::Kdv).unwrap();
    let u0 = random_initial_condition::<f32>(&g, 6, 1.0, 3);
    assert_eq!(solve_kdv(&u0, &g, 0.2, 10).unwrap(), solve_kdv(&u0, &g, 0.2, 10).unwrap());
}
