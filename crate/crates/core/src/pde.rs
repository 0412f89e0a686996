//! Viscous Burgers (zero Dirichlet) and KdV (periodic) solvers, plus the
//! random trigonometric initial conditions both are driven with.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::derive_seed;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::fft::RealFft;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    DirichletZero,
    Periodic,
}

impl Boundary {
    pub fn as_str(self) -> &'static str {
        match self {
            Boundary::DirichletZero => "dirichlet_zero",
            Boundary::Periodic => "periodic",
        }
    }
}

/// Uniform 1-D grid. Dirichlet grids include both endpoints; periodic
/// grids omit `x_max`, which is identified with `x_min`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
    pub bc: Boundary,
}

impl Grid1D {
    pub const MIN_POINTS: usize = 16;

    pub fn new(x_min: f64, x_max: f64, n_points: usize, bc: Boundary) -> Result<Self> {
        if n_points < Self::MIN_POINTS {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least {} points, got {n_points}",
                Self::MIN_POINTS
            )));
        }
        if !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::InvalidArgument(format!("empty domain [{x_min}, {x_max}]")));
        }
        Ok(Self {
            x_min,
            x_max,
            n_points,
            bc,
        })
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn dx(&self) -> f64 {
        match self.bc {
            Boundary::DirichletZero => self.length() / (self.n_points - 1) as f64,
            Boundary::Periodic => self.length() / self.n_points as f64,
        }
    }

    pub fn points(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.n_points).map(|j| self.x_min + j as f64 * dx).collect()
    }
}

/// A random trigonometric series compatible with a boundary condition.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigSeries {
    pub bc: Boundary,
    pub x_min: f64,
    pub length: f64,
    /// Sine coefficients for k = 1..=K.
    pub sin: Vec<f64>,
    /// Cosine coefficients for k = 1..=K (periodic only).
    pub cos: Vec<f64>,
}

impl TrigSeries {
    /// Coefficients ~ amplitude · Uniform(−1, 1) / k.
    pub fn random(bc: Boundary, grid: &Grid1D, n_modes: usize, amplitude: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |k: usize| amplitude * rng.gen_range(-1.0..1.0) / k as f64;
        let (sin, cos) = match bc {
            Boundary::DirichletZero => ((1..=n_modes).map(&mut draw).collect(), Vec::new()),
            Boundary::Periodic => {
                let mut s = Vec::with_capacity(n_modes);
                let mut c = Vec::with_capacity(n_modes);
                for k in 1..=n_modes {
                    c.push(draw(k));
                    s.push(draw(k));
                }
                (s, c)
            }
        };
        Self {
            bc,
            x_min: grid.x_min,
            length: grid.length(),
            sin,
            cos,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let xi = (x - self.x_min) / self.length;
        let base = match self.bc {
            Boundary::DirichletZero => std::f64::consts::PI,
            Boundary::Periodic => 2.0 * std::f64::consts::PI,
        };
        let mut u = 0.0;
        for (i, &a) in self.sin.iter().enumerate() {
            u += a * (base * (i + 1) as f64 * xi).sin();
        }
        for (i, &a) in self.cos.iter().enumerate() {
            u += a * (base * (i + 1) as f64 * xi).cos();
        }
        u
    }

    /// Samples on the grid; Dirichlet endpoints are set to exactly zero.
    pub fn sample<T: Scalar>(&self, grid: &Grid1D) -> Vec<T> {
        let mut u: Vec<T> = grid.points().iter().map(|&x| T::lit(self.eval(x))).collect();
        if self.bc == Boundary::DirichletZero {
            u[0] = T::zero();
            *u.last_mut().unwrap() = T::zero();
        }
        u
    }
}

/// Random initial field satisfying the grid's boundary condition.
pub fn random_initial_condition<T: Scalar>(grid: &Grid1D, n_modes: usize, amplitude: f64, seed: u64) -> Vec<T> {
    TrigSeries::random(grid.bc, grid, n_modes, amplitude, seed).sample(grid)
}

/// Stored frames of a 1-D field.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldTrajectory<T> {
    pub grid: Grid1D,
    pub times: Vec<T>,
    /// `times.len() × n_points`, row-major.
    pub fields: Vec<T>,
    pub seed: u64,
}

impl<T: Scalar> FieldTrajectory<T> {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn frame(&self, i: usize) -> &[T] {
        let n = self.grid.n_points;
        &self.fields[i * n..(i + 1) * n]
    }
}

fn check_field<T: Scalar>(u0: &[T], grid: &Grid1D, bc: Boundary, what: &str) -> Result<()> {
    if grid.bc != bc {
        return Err(Error::InvalidArgument(format!("{what} needs a {} grid", bc.as_str())));
    }
    if u0.len() != grid.n_points {
        return Err(Error::shape(
            "initial field",
            format!("{} values for {} grid points", u0.len(), grid.n_points),
        ));
    }
    if u0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "initial field" });
    }
    Ok(())
}

fn stored_times<T: Scalar>(t_final: f64, n_store: usize) -> Vec<T> {
    (0..=n_store)
        .map(|i| T::lit(t_final * i as f64 / n_store as f64))
        .collect()
}

fn check_horizon(t_final: f64, n_store: usize) -> Result<()> {
    if !(t_final > 0.0) || n_store == 0 {
        return Err(Error::InvalidArgument(format!(
            "need t_final > 0 and n_store >= 1, got {t_final} and {n_store}"
        )));
    }
    Ok(())
}

/// Solves u_t = u_xx − u u_x with u = 0 at both ends.
///
/// Method of lines with second-order central differences (advection in
/// the energy-neutral skew-symmetric split) and RK4 in time, step bounded
/// by `dx²/4` and `dx/(4 max|u|)`. Returns `n_store + 1` frames including t = 0.
pub fn solve_burgers<T: Scalar>(u0: &[T], grid: &Grid1D, t_final: f64, n_store: usize) -> Result<FieldTrajectory<T>> {
    check_field(u0, grid, Boundary::DirichletZero, "Burgers")?;
    check_horizon(t_final, n_store)?;
    let n = grid.n_points;
    if u0[0] != T::zero() || u0[n - 1] != T::zero() {
        return Err(Error::InvalidArgument("Burgers initial field must vanish at both ends".into()));
    }
    let dx = grid.dx();
    let umax = u0.iter().fold(0.0f64, |m, v| m.max(v.abs().as_f64()));
    let mut dt_max = dx * dx / 4.0;
    if umax > 0.0 {
        dt_max = dt_max.min(dx / (4.0 * umax));
    }
    let interval = t_final / n_store as f64;
    let substeps = (interval / dt_max).ceil().max(1.0) as usize;
    let dt = T::lit(interval / substeps as f64);

    let inv_dx2 = T::lit(1.0 / (dx * dx));
    let inv_6dx = T::lit(1.0 / (6.0 * dx));
    let rhs = |u: &[T], out: &mut [T]| {
        out[0] = T::zero();
        out[n - 1] = T::zero();
        for j in 1..n - 1 {
            let (l, c, r) = (u[j - 1], u[j], u[j + 1]);
            let diffusion = (r - c - c + l) * inv_dx2;
            // (u u_x + (u²)_x) / 3, both centered
            let advection = (c * (r - l) + (r * r - l * l)) * inv_6dx;
            out[j] = diffusion - advection;
        }
    };

    let mut u = u0.to_vec();
    let mut fields = Vec::with_capacity((n_store + 1) * n);
    fields.extend_from_slice(&u);
    let mut stepper = MolRk4::new(n);
    for frame in 1..=n_store {
        for _ in 0..substeps {
            stepper.step(&rhs, &mut u, dt);
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                system: "burgers".into(),
                step: frame,
            });
        }
        fields.extend_from_slice(&u);
    }
    Ok(FieldTrajectory {
        grid: *grid,
        times: stored_times(t_final, n_store),
        fields,
        seed: 0,
    })
}

struct MolRk4<T> {
    k: [Vec<T>; 4],
    tmp: Vec<T>,
}

impl<T: Scalar> MolRk4<T> {
    fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![T::zero(); n]),
            tmp: vec![T::zero(); n],
        }
    }

    fn step(&mut self, rhs: &impl Fn(&[T], &mut [T]), u: &mut [T], dt: T) {
        let half = dt * T::lit(0.5);
        rhs(u, &mut self.k[0]);
        for ((t, &a), &b) in self.tmp.iter_mut().zip(u.iter()).zip(&self.k[0]) {
            *t = a + half * b;
        }
        rhs(&self.tmp, &mut self.k[1]);
        for ((t, &a), &b) in self.tmp.iter_mut().zip(u.iter()).zip(&self.k[1]) {
            *t = a + half * b;
        }
        rhs(&self.tmp, &mut self.k[2]);
        for ((t, &a), &b) in self.tmp.iter_mut().zip(u.iter()).zip(&self.k[2]) {
            *t = a + dt * b;
        }
        rhs(&self.tmp, &mut self.k[3]);
        let sixth = dt / T::lit(6.0);
        let two = T::lit(2.0);
        for (j, v) in u.iter_mut().enumerate() {
            *v = *v + sixth * (self.k[0][j] + two * (self.k[1][j] + self.k[2][j]) + self.k[3][j]);
        }
    }
}

/// Highest retained wavenumber index under the 2/3 rule.
pub fn dealias_cutoff(n_points: usize) -> usize {
    n_points / 3
}

/// Fraction of non-mean spectral energy in the upper third of the retained band.
pub fn high_mode_fraction<T: Scalar>(u: &[T]) -> f64 {
    let n = u.len();
    let mut fft = RealFft::new(n);
    let mut spec = vec![T::zero(); 2 * fft.modes()];
    fft.forward(u, &mut spec);
    let cut = dealias_cutoff(n);
    let lower = (2 * cut) / 3;
    let (mut total, mut high) = (0.0, 0.0);
    for k in 1..=cut.min(fft.modes() - 1) {
        let e = spec[2 * k].as_f64().powi(2) + spec[2 * k + 1].as_f64().powi(2);
        total += e;
        if k > lower {
            high += e;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        high / total
    }
}

/// Ratio of high-mode energy that marks a run as under-resolved.
pub const KDV_RESOLUTION_LIMIT: f64 = 0.01;

/// Solves u_t = 6 u u_x − u_xxx on a periodic grid with an automatic step.
pub fn solve_kdv<T: Scalar>(u0: &[T], grid: &Grid1D, t_final: f64, n_store: usize) -> Result<FieldTrajectory<T>> {
    check_field(u0, grid, Boundary::Periodic, "KdV")?;
    check_horizon(t_final, n_store)?;
    let umax = u0.iter().fold(0.0f64, |m, v| m.max(v.abs().as_f64())).max(0.1);
    let kappa_cut = 2.0 * std::f64::consts::PI / grid.length() * dealias_cutoff(grid.n_points) as f64;
    let dt_max = 0.5 / (6.0 * umax * kappa_cut);
    let interval = t_final / n_store as f64;
    let substeps = (interval / dt_max).ceil().max(1.0) as usize;
    solve_kdv_fixed(u0, grid, t_final, n_store, substeps)
}

/// KdV with exactly `substeps` integrating-factor RK4 steps per stored frame.
///
/// The dispersive term is integrated exactly in Fourier space; the
/// nonlinear term is evaluated pseudo-spectrally with 2/3-rule dealiasing.
pub fn solve_kdv_fixed<T: Scalar>(
    u0: &[T],
    grid: &Grid1D,
    t_final: f64,
    n_store: usize,
    substeps: usize,
) -> Result<FieldTrajectory<T>> {
    check_field(u0, grid, Boundary::Periodic, "KdV")?;
    check_horizon(t_final, n_store)?;
    if substeps == 0 {
        return Err(Error::InvalidArgument("substeps must be positive".into()));
    }
    let n = grid.n_points;
    let mut fft = RealFft::<T>::new(n);
    let modes = fft.modes();
    let cut = dealias_cutoff(n);
    let dt = t_final / (n_store * substeps) as f64;
    let base = 2.0 * std::f64::consts::PI / grid.length();
    let kappa: Vec<f64> = (0..modes).map(|k| base * k as f64).collect();
    // exp(i κ³ τ) for τ = dt/2 and dt
    let phase = |tau: f64| -> Vec<Complex<T>> {
        kappa
            .iter()
            .map(|&q| {
                let a = q * q * q * tau;
                Complex::new(T::lit(a.cos()), T::lit(a.sin()))
            })
            .collect()
    };
    let e_half = phase(dt / 2.0);
    let e_full = phase(dt);
    let i3k: Vec<Complex<T>> = kappa
        .iter()
        .enumerate()
        .map(|(k, &q)| {
            if k <= cut && 2 * k != n {
                Complex::new(T::zero(), T::lit(3.0 * q))
            } else {
                Complex::new(T::zero(), T::zero())
            }
        })
        .collect();

    let mut spec_buf = vec![T::zero(); 2 * modes];
    let mut phys = vec![T::zero(); n];
    // 6 u u_x = 3 ∂x(u²), dealiased before and after the product
    let mut nonlinear = |v: &[Complex<T>], out: &mut [Complex<T>]| {
        for k in 0..modes {
            let z = if k <= cut && 2 * k != n { v[k] } else { Complex::new(T::zero(), T::zero()) };
            spec_buf[2 * k] = z.re;
            spec_buf[2 * k + 1] = z.im;
        }
        fft.inverse(&spec_buf, &mut phys);
        phys.iter_mut().for_each(|p| *p = *p * *p);
        fft.forward(&phys, &mut spec_buf);
        for k in 0..modes {
            out[k] = i3k[k] * Complex::new(spec_buf[2 * k], spec_buf[2 * k + 1]);
        }
    };

    let mut io_fft = RealFft::<T>::new(n);
    let mut tmp = vec![T::zero(); 2 * modes];
    io_fft.forward(u0, &mut tmp);
    let mut uh: Vec<Complex<T>> = (0..modes).map(|k| Complex::new(tmp[2 * k], tmp[2 * k + 1])).collect();

    let zero = Complex::new(T::zero(), T::zero());
    let (mut k1, mut k2, mut k3, mut k4) = (vec![zero; modes], vec![zero; modes], vec![zero; modes], vec![zero; modes]);
    let mut stage = vec![zero; modes];
    let dtc = T::lit(dt);
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let sixth = T::lit(1.0 / 6.0);

    let mut fields = Vec::with_capacity((n_store + 1) * n);
    fields.extend_from_slice(u0);
    let mut frame = vec![T::zero(); n];
    for f in 1..=n_store {
        for _ in 0..substeps {
            nonlinear(&uh, &mut k1);
            k1.iter_mut().for_each(|z| *z = *z * dtc);
            for k in 0..modes {
                stage[k] = e_half[k] * (uh[k] + k1[k] * half);
            }
            nonlinear(&stage, &mut k2);
            k2.iter_mut().for_each(|z| *z = *z * dtc);
            for k in 0..modes {
                stage[k] = e_half[k] * uh[k] + k2[k] * half;
            }
            nonlinear(&stage, &mut k3);
            k3.iter_mut().for_each(|z| *z = *z * dtc);
            for k in 0..modes {
                stage[k] = e_full[k] * uh[k] + e_half[k] * k3[k];
            }
            nonlinear(&stage, &mut k4);
            k4.iter_mut().for_each(|z| *z = *z * dtc);
            for k in 0..modes {
                uh[k] = e_full[k] * uh[k]
                    + (e_full[k] * k1[k] + e_half[k] * (k2[k] + k3[k]) * two + k4[k]) * sixth;
            }
        }
        for k in 0..modes {
            tmp[2 * k] = uh[k].re;
            tmp[2 * k + 1] = uh[k].im;
        }
        io_fft.inverse(&tmp, &mut frame);
        if frame.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                system: "kdv".into(),
                step: f,
            });
        }
        let ratio = high_mode_fraction(&frame);
        if ratio > KDV_RESOLUTION_LIMIT {
            return Err(Error::Resolution(format!(
                "KdV frame {f}: {:.2}% of spectral energy in the top third of retained modes",
                100.0 * ratio
            )));
        }
        fields.extend_from_slice(&frame);
    }
    Ok(FieldTrajectory {
        grid: *grid,
        times: stored_times(t_final, n_store),
        fields,
        seed: 0,
    })
}

/// The two PDE benchmarks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdeKind {
    Burgers,
    Kdv,
}

impl PdeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PdeKind::Burgers => "burgers",
            PdeKind::Kdv => "kdv",
        }
    }

    pub fn boundary(self) -> Boundary {
        match self {
            PdeKind::Burgers => Boundary::DirichletZero,
            PdeKind::Kdv => Boundary::Periodic,
        }
    }
}

/// Grid, horizon and initial-condition knobs for PDE data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeSettings {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
    pub t_final: f64,
    /// Stored intervals; `n_store + 1` frames are kept.
    pub n_store: usize,
    /// Terms in the random initial series.
    pub n_modes: usize,
    pub amplitude: f64,
}

impl PdeSettings {
    pub fn defaults(kind: PdeKind) -> Self {
        match kind {
            PdeKind::Burgers => Self {
                x_min: 0.0,
                x_max: 1.0,
                n_points: 128,
                t_final: 1.0,
                n_store: 50,
                n_modes: 6,
                amplitude: 1.0,
            },
            PdeKind::Kdv => Self {
                x_min: 0.0,
                x_max: 2.0 * std::f64::consts::PI,
                n_points: 128,
                t_final: 0.2,
                n_store: 50,
                n_modes: 6,
                amplitude: 1.0,
            },
        }
    }

    pub fn grid(&self, kind: PdeKind) -> Result<Grid1D> {
        Grid1D::new(self.x_min, self.x_max, self.n_points, kind.boundary())
    }
}

/// Solves one PDE from the random initial condition of `seed`.
pub fn generate_one<T: Scalar>(kind: PdeKind, settings: &PdeSettings, seed: u64) -> Result<FieldTrajectory<T>> {
    let grid = settings.grid(kind)?;
    let u0 = random_initial_condition::<T>(&grid, settings.n_modes, settings.amplitude, seed);
    let mut tr = match kind {
        PdeKind::Burgers => solve_burgers(&u0, &grid, settings.t_final, settings.n_store)?,
        PdeKind::Kdv => solve_kdv(&u0, &grid, settings.t_final, settings.n_store)?,
    };
    tr.seed = seed;
    Ok(tr)
}

/// `count` trajectories; trajectory `i` uses seed `derive_seed(seed, i)`.
pub fn generate_field_trajectories<T: Scalar>(
    kind: PdeKind,
    count: usize,
    seed: u64,
    settings: &PdeSettings,
) -> Result<Vec<FieldTrajectory<T>>> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be at least 1".into()));
    }
    (0..count)
        .map(|i| generate_one(kind, settings, derive_seed(seed, i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn burgers_grid() -> Grid1D {
        Grid1D::new(0.0, 1.0, 33, Boundary::DirichletZero).unwrap()
    }

    #[test]
    fn grid_spacing() {
        assert_eq!(burgers_grid().dx(), 1.0 / 32.0);
        let p = Grid1D::new(0.0, 1.0, 32, Boundary::Periodic).unwrap();
        assert_eq!(p.dx(), 1.0 / 32.0);
        assert!(Grid1D::new(0.0, 1.0, 8, Boundary::Periodic).is_err());
        assert!(Grid1D::new(1.0, 1.0, 32, Boundary::Periodic).is_err());
    }

    #[test]
    fn dirichlet_initial_condition_vanishes_at_ends() {
        let g = burgers_grid();
        for seed in 0..10 {
            let u = random_initial_condition::<f64>(&g, 6, 1.0, seed);
            assert_eq!(u[0], 0.0);
            assert_eq!(u[g.n_points - 1], 0.0);
        }
    }

    #[test]
    fn periodic_series_wraps() {
        let g = Grid1D::new(0.0, 2.0 * std::f64::consts::PI, 64, Boundary::Periodic).unwrap();
        let s = TrigSeries::random(Boundary::Periodic, &g, 6, 1.0, 3);
        assert!((s.eval(g.x_min) - s.eval(g.x_max)).abs() < 1e-12);
    }

    #[test]
    fn initial_condition_is_seeded() {
        let g = burgers_grid();
        let a = random_initial_condition::<f64>(&g, 6, 1.0, 5);
        assert_eq!(a, random_initial_condition::<f64>(&g, 6, 1.0, 5));
        assert_ne!(a, random_initial_condition::<f64>(&g, 6, 1.0, 6));
    }

    #[test]
    fn zero_field_stays_zero() {
        let g = burgers_grid();
        let tr = solve_burgers(&vec![0.0f64; 33], &g, 0.1, 5).unwrap();
        assert!(tr.fields.iter().all(|&v| v == 0.0));
        assert_eq!(tr.n_times(), 6);
    }

    #[test]
    fn burgers_rejects_bad_boundary() {
        let g = burgers_grid();
        let mut u = vec![0.0f64; 33];
        u[0] = 0.1;
        assert!(solve_burgers(&u, &g, 0.1, 5).is_err());
        let p = Grid1D::new(0.0, 1.0, 32, Boundary::Periodic).unwrap();
        assert!(solve_burgers(&vec![0.0f64; 32], &p, 0.1, 5).is_err());
    }

    #[test]
    fn kdv_constant_field_stays_constant() {
        let g = Grid1D::new(0.0, 2.0 * std::f64::consts::PI, 32, Boundary::Periodic).unwrap();
        let tr = solve_kdv(&vec![0.7f64; 32], &g, 0.1, 4).unwrap();
        for v in &tr.fields {
            assert!((v - 0.7).abs() < 1e-13);
        }
    }

    #[test]
    fn kdv_flags_under_resolved_fields() {
        let g = Grid1D::new(0.0, 2.0 * std::f64::consts::PI, 32, Boundary::Periodic).unwrap();
        let u: Vec<f64> = g.points().iter().map(|&x| (9.0 * x).sin()).collect();
        assert!(matches!(solve_kdv(&u, &g, 0.01, 1), Err(Error::Resolution(_))));
    }
}
