//! ODE right-hand sides and a fixed-step classical Runge-Kutta integrator.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Autonomous first-order system `ds/dt = f(s)`.
pub trait VectorField<T> {
    fn dim(&self) -> usize;
    fn name(&self) -> &str;
    fn eval(&self, state: &[T], out: &mut [T]);
}

/// The three benchmark ODEs, with coefficients exactly as written in the source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdeSystem {
    /// θ'' = −sin θ, as (θ, ω).
    Pendulum,
    /// x' = y − x, y' = x − xz − y, z' = xy − z (unit coefficients).
    Lorenz,
    /// x' = x − y + xz, y' = x + y + yz, z' = x² + y² + z.
    FluidAttractor,
}

impl OdeSystem {
    pub const ALL: [OdeSystem; 3] = [OdeSystem::Pendulum, OdeSystem::Lorenz, OdeSystem::FluidAttractor];

    pub fn as_str(self) -> &'static str {
        match self {
            OdeSystem::Pendulum => "pendulum",
            OdeSystem::Lorenz => "lorenz",
            OdeSystem::FluidAttractor => "fluid_attractor",
        }
    }

    /// Half-widths of the uniform initial-condition box, per component.
    pub fn initial_box(self) -> &'static [f64] {
        match self {
            OdeSystem::Pendulum => &[std::f64::consts::FRAC_PI_2, 1.0],
            OdeSystem::Lorenz => &[0.5, 0.5, 0.5],
            // ±0.5 diverges before t = 1 from the (+,+,+) corner
            OdeSystem::FluidAttractor => &[0.25, 0.25, 0.25],
        }
    }
}

impl<T: Scalar> VectorField<T> for OdeSystem {
    fn dim(&self) -> usize {
        match self {
            OdeSystem::Pendulum => 2,
            OdeSystem::Lorenz | OdeSystem::FluidAttractor => 3,
        }
    }

    fn name(&self) -> &str {
        self.as_str()
    }

    fn eval(&self, s: &[T], out: &mut [T]) {
        match self {
            OdeSystem::Pendulum => {
                out[0] = s[1];
                out[1] = -s[0].sin();
            }
            OdeSystem::Lorenz => {
                let (x, y, z) = (s[0], s[1], s[2]);
                out[0] = y - x;
                out[1] = x - x * z - y;
                out[2] = x * y - z;
            }
            OdeSystem::FluidAttractor => {
                let (x, y, z) = (s[0], s[1], s[2]);
                out[0] = x - y + x * z;
                out[1] = x + y + y * z;
                out[2] = x * x + y * y + z;
            }
        }
    }
}

impl FromStr for OdeSystem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OdeSystem::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| Error::Unknown {
                what: "ODE system",
                name: s.to_string(),
            })
    }
}

impl fmt::Display for OdeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Wraps a closure as a [`VectorField`].
pub struct FnField<F> {
    pub dim: usize,
    pub f: F,
}

impl<T, F: Fn(&[T], &mut [T])> VectorField<T> for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> &str {
        "custom"
    }

    fn eval(&self, state: &[T], out: &mut [T]) {
        (self.f)(state, out)
    }
}

/// Scratch space for repeated RK4 steps.
pub struct Rk4<T> {
    k1: Vec<T>,
    k2: Vec<T>,
    k3: Vec<T>,
    k4: Vec<T>,
    tmp: Vec<T>,
}

impl<T: Scalar> Rk4<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![T::zero(); dim],
            k2: vec![T::zero(); dim],
            k3: vec![T::zero(); dim],
            k4: vec![T::zero(); dim],
            tmp: vec![T::zero(); dim],
        }
    }

    /// Advances `state` in place by one step of size `h`.
    pub fn step<F: VectorField<T> + ?Sized>(&mut self, sys: &F, state: &mut [T], h: T) {
        let half = h * T::lit(0.5);
        sys.eval(state, &mut self.k1);
        axpy(&mut self.tmp, state, half, &self.k1);
        sys.eval(&self.tmp, &mut self.k2);
        axpy(&mut self.tmp, state, half, &self.k2);
        sys.eval(&self.tmp, &mut self.k3);
        axpy(&mut self.tmp, state, h, &self.k3);
        sys.eval(&self.tmp, &mut self.k4);
        let sixth = h / T::lit(6.0);
        let two = T::lit(2.0);
        for i in 0..state.len() {
            state[i] = state[i] + sixth * (self.k1[i] + two * (self.k2[i] + self.k3[i]) + self.k4[i]);
        }
    }
}

fn axpy<T: Scalar>(out: &mut [T], x: &[T], a: T, y: &[T]) {
    for ((o, &xv), &yv) in out.iter_mut().zip(x).zip(y) {
        *o = xv + a * yv;
    }
}

/// One classical RK4 step.
pub fn rk4_step<T: Scalar, F: VectorField<T> + ?Sized>(sys: &F, state: &[T], h: T) -> Result<Vec<T>> {
    if h <= T::zero() {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {h}")));
    }
    check_dim(sys, state)?;
    let mut out = state.to_vec();
    Rk4::new(state.len()).step(sys, &mut out, h);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::BlowUp {
            system: sys.name().to_string(),
            step: 0,
        });
    }
    Ok(out)
}

fn check_dim<T, F: VectorField<T> + ?Sized>(sys: &F, state: &[T]) -> Result<()> {
    if state.len() != sys.dim() {
        return Err(Error::shape(
            "ode state",
            format!("{} needs dimension {}, got {}", sys.name(), sys.dim(), state.len()),
        ));
    }
    Ok(())
}

/// Time-indexed ODE states on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub dim: usize,
    pub times: Vec<T>,
    /// `times.len() × dim`, row-major.
    pub states: Vec<T>,
    pub seed: u64,
}

impl<T: Scalar> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[T] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }
}

/// Integrates `n_steps` steps of size `h` and keeps every state.
pub fn integrate<T: Scalar, F: VectorField<T> + ?Sized>(sys: &F, s0: &[T], h: T, n_steps: usize) -> Result<Trajectory<T>> {
    integrate_sampled(sys, s0, h, n_steps, 1)
}

/// Integrates `n_store × stride` steps, keeping every `stride`-th state.
pub fn integrate_sampled<T: Scalar, F: VectorField<T> + ?Sized>(
    sys: &F,
    s0: &[T],
    h: T,
    n_store: usize,
    stride: usize,
) -> Result<Trajectory<T>> {
    if n_store == 0 || stride == 0 {
        return Err(Error::InvalidArgument("need at least one step".into()));
    }
    if h <= T::zero() {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {h}")));
    }
    check_dim(sys, s0)?;
    let dim = s0.len();
    let mut rk = Rk4::new(dim);
    let mut state = s0.to_vec();
    let mut states = Vec::with_capacity((n_store + 1) * dim);
    states.extend_from_slice(&state);
    let mut step = 0;
    for _ in 0..n_store {
        for _ in 0..stride {
            rk.step(sys, &mut state, h);
            step += 1;
            if state.iter().any(|v| !v.is_finite()) {
                return Err(Error::BlowUp {
                    system: sys.name().to_string(),
                    step,
                });
            }
        }
        states.extend_from_slice(&state);
    }
    let dt = h * T::from_usize_lossy(stride);
    let times = (0..=n_store).map(|i| dt * T::from_usize_lossy(i)).collect();
    Ok(Trajectory {
        dim,
        times,
        states,
        seed: 0,
    })
}

/// Solver settings for trajectory generation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdeSettings {
    /// Solver step.
    pub h: f64,
    pub t_final: f64,
    /// Stored intervals; `n_store + 1` states are kept.
    pub n_store: usize,
}

impl Default for OdeSettings {
    fn default() -> Self {
        Self {
            h: 1e-3,
            t_final: 1.0,
            n_store: 100,
        }
    }
}

impl OdeSettings {
    /// Solver steps between stored states.
    pub fn stride(&self) -> Result<usize> {
        let total = self.t_final / self.h;
        let stride = total / self.n_store as f64;
        let rounded = stride.round();
        if self.h <= 0.0 || self.n_store == 0 || rounded < 1.0 || (stride - rounded).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "t_final {} is not a whole number of {} steps of {} per stored state",
                self.t_final, self.n_store, self.h
            )));
        }
        Ok(rounded as usize)
    }
}

/// Mixes a base seed with an index into an independent per-item seed (splitmix64).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_state<T: Scalar>(sys: OdeSystem, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sys.initial_box()
        .iter()
        .map(|&w| T::lit(rng.gen_range(-w..w)))
        .collect()
}

/// Random initial states; item `i` depends only on `(seed, i)`.
pub fn sample_initial_conditions<T: Scalar>(sys: OdeSystem, count: usize, seed: u64) -> Result<Vec<Vec<T>>> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be at least 1".into()));
    }
    Ok((0..count)
        .map(|i| sample_state(sys, derive_seed(seed, i as u64)))
        .collect())
}

/// One trajectory from the initial state drawn with `item_seed`.
pub fn trajectory_from_seed<T: Scalar>(sys: OdeSystem, item_seed: u64, settings: &OdeSettings) -> Result<Trajectory<T>> {
    let stride = settings.stride()?;
    let s0 = sample_state::<T>(sys, item_seed);
    let mut tr = integrate_sampled(&sys, &s0, T::lit(settings.h), settings.n_store, stride)?;
    tr.seed = item_seed;
    Ok(tr)
}

/// Random initial conditions integrated with the given settings;
/// trajectory `i` uses `derive_seed(seed, i)`.
pub fn generate_trajectories<T: Scalar>(
    sys: OdeSystem,
    count: usize,
    seed: u64,
    settings: &OdeSettings,
) -> Result<Vec<Trajectory<T>>> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be at least 1".into()));
    }
    (0..count)
        .map(|i| trajectory_from_seed(sys, derive_seed(seed, i as u64), settings))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_leaves_state_unchanged() {
        let zero = FnField { dim: 3, f: |_: &[f64], out: &mut [f64]| out.fill(0.0) };
        let s = [0.3, -1.0, 2.0];
        assert_eq!(rk4_step(&zero, &s, 0.1).unwrap(), s.to_vec());
    }

    #[test]
    fn pendulum_equilibrium() {
        let s = rk4_step(&OdeSystem::Pendulum, &[0.0f64, 0.0], 0.01).unwrap();
        assert_eq!(s, vec![0.0, 0.0]);
    }

    #[test]
    fn exponential_growth_to_e() {
        let grow = FnField { dim: 1, f: |s: &[f64], out: &mut [f64]| out[0] = s[0] };
        let tr = integrate(&grow, &[1.0], 1e-3, 1000).unwrap();
        let last = tr.state(1000)[0];
        assert!((last - std::f64::consts::E).abs() < 1e-10, "{last}");
    }

    #[test]
    fn invalid_inputs() {
        assert!(rk4_step(&OdeSystem::Lorenz, &[0.0f64; 3], 0.0).is_err());
        assert!(rk4_step(&OdeSystem::Lorenz, &[0.0f64; 2], 0.1).is_err());
        assert!(integrate(&OdeSystem::Lorenz, &[0.0f64; 3], 0.1, 0).is_err());
        assert!(sample_initial_conditions::<f64>(OdeSystem::Lorenz, 0, 1).is_err());
    }

    #[test]
    fn blow_up_reports_step() {
        let blow = FnField { dim: 1, f: |s: &[f64], out: &mut [f64]| out[0] = s[0] * s[0] };
        match integrate(&blow, &[1.0], 0.01, 1000) {
            Err(Error::BlowUp { step, .. }) => assert!(step > 50 && step < 1000, "{step}"),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn time_grid_is_uniform() {
        let tr = integrate_sampled(&OdeSystem::Lorenz, &[1.0f64, 1.0, 1.0], 1e-3, 100, 10).unwrap();
        assert_eq!(tr.len(), 101);
        assert_eq!(tr.states.len(), 303);
        for w in tr.times.windows(2) {
            assert!((w[1] - w[0] - 0.01).abs() < 1e-12);
        }
    }

    #[test]
    fn settings_stride() {
        assert_eq!(OdeSettings::default().stride().unwrap(), 10);
        let bad = OdeSettings { h: 1e-3, t_final: 1.0, n_store: 3 };
        assert!(bad.stride().is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let a = sample_initial_conditions::<f64>(OdeSystem::Pendulum, 1, 7).unwrap();
        let b = sample_initial_conditions::<f64>(OdeSystem::Pendulum, 1, 7).unwrap();
        let c = sample_initial_conditions::<f64>(OdeSystem::Pendulum, 1, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        // prefix stability: item i does not depend on count
        let many = sample_initial_conditions::<f64>(OdeSystem::Pendulum, 5, 7).unwrap();
        assert_eq!(many[0], a[0]);
    }

    #[test]
    fn names_round_trip() {
        for s in OdeSystem::ALL {
            assert_eq!(s.as_str().parse::<OdeSystem>().unwrap(), s);
        }
        assert!("duffing".parse::<OdeSystem>().is_err());
    }
}
