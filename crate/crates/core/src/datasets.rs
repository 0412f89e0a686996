//! Solver outputs arranged as operator-learning examples.
//!
//! Every dataset keeps one row per trajectory and splits by trajectory, so
//! no trajectory contributes examples to two splits. Layouts (`n` rows):
//!
//! | kind     | inputs        | queries        | targets          |
//! |----------|---------------|----------------|------------------|
//! | deeponet | `[n, m]`      | `[q, 1 or 2]`  | `[n, q, d]`      |
//! | fno      | `[n, N]`      | `[T]` times    | `[n, T, N]`      |
//! | koopman  | `[n, d]`      | `[T]` times    | `[n, T, d]`      |
//!
//! DeepONet queries are every stored time (ODEs) or every (x, t) pair in
//! time-major order (PDEs), so one row holds `q` examples.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::dynamics::{derive_seed, trajectory_from_seed, OdeSettings, OdeSystem, Trajectory};
use crate::error::{Error, Result};
use crate::pde::{generate_one, FieldTrajectory, Grid1D, PdeKind, PdeSettings};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// The five benchmark equations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Equation {
    Pendulum,
    Lorenz,
    FluidAttractor,
    Burgers,
    Kdv,
}

impl Equation {
    pub const ALL: [Equation; 5] = [
        Equation::Pendulum,
        Equation::Lorenz,
        Equation::FluidAttractor,
        Equation::Burgers,
        Equation::Kdv,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Equation::Pendulum => "pendulum",
            Equation::Lorenz => "lorenz",
            Equation::FluidAttractor => "fluid_attractor",
            Equation::Burgers => "burgers",
            Equation::Kdv => "kdv",
        }
    }

    pub fn ode(self) -> Option<OdeSystem> {
        match self {
            Equation::Pendulum => Some(OdeSystem::Pendulum),
            Equation::Lorenz => Some(OdeSystem::Lorenz),
            Equation::FluidAttractor => Some(OdeSystem::FluidAttractor),
            _ => None,
        }
    }

    pub fn pde(self) -> Option<PdeKind> {
        match self {
            Equation::Burgers => Some(PdeKind::Burgers),
            Equation::Kdv => Some(PdeKind::Kdv),
            _ => None,
        }
    }
}

impl fmt::Display for Equation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Equation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Equation::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::Unknown {
                what: "equation",
                name: s.to_string(),
            })
    }
}

/// Example layout, one per architecture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    DeepONet,
    Fno,
    Koopman,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 3] = [DatasetKind::DeepONet, DatasetKind::Fno, DatasetKind::Koopman];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::DeepONet => "deeponet",
            DatasetKind::Fno => "fno",
            DatasetKind::Koopman => "koopman",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DatasetKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Unknown {
                what: "architecture",
                name: s.to_string(),
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

/// Disjoint trajectory-row indices, each list sorted.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Shuffles `0..n` with `seed` and cuts it by `ratios`. Validation and
    /// test sizes round down; training takes the remainder.
    pub fn new(n: usize, ratios: SplitRatios, seed: u64) -> Result<Self> {
        let r = [ratios.train, ratios.val, ratios.test];
        if r.iter().any(|&x| !(x > 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split ratios must be positive and sum to 1, got {}/{}/{}",
                ratios.train, ratios.val, ratios.test
            )));
        }
        let n_val = (ratios.val * n as f64 + 1e-9).floor() as usize;
        let n_test = (ratios.test * n as f64 + 1e-9).floor() as usize;
        if n_val == 0 || n_test == 0 || n_val + n_test >= n {
            return Err(Error::Data(format!(
                "{n} trajectories are too few for a {}/{}/{} split",
                ratios.train, ratios.val, ratios.test
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut test = idx.split_off(n - n_test);
        let mut val = idx.split_off(n - n_test - n_val);
        let mut train = idx;
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        Ok(Self { train, val, test })
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }

    fn encode(list: &[usize]) -> String {
        list.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    }

    fn decode(s: &str) -> Result<Vec<usize>> {
        s.split(',')
            .map(|v| v.parse().map_err(|_| Error::Format(format!("bad split index `{v}`"))))
            .collect()
    }
}

/// Solver output to be arranged into examples.
pub enum Solutions<'a, T> {
    Ode(&'a [Trajectory<T>]),
    Field(&'a [FieldTrajectory<T>]),
}

impl<T> Solutions<'_, T> {
    pub fn len(&self) -> usize {
        match self {
            Solutions::Ode(t) => t.len(),
            Solutions::Field(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Architecture-specific examples with split and provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorDataset<T> {
    pub kind: DatasetKind,
    pub inputs: Tensor<T>,
    pub queries: Tensor<T>,
    pub targets: Tensor<T>,
    pub split: Split,
    pub meta: BTreeMap<String, String>,
}

/// Evenly spaced sensor indices on a grid of `n` points.
pub fn sensor_indices(n: usize, m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!("cannot place {m} sensors on {n} points")));
    }
    Ok((0..m).map(|i| i * n / m).collect())
}

/// One row's input and target values.
fn ode_row<T: Scalar>(kind: DatasetKind, tr: &Trajectory<T>) -> Result<(Vec<T>, Vec<T>)> {
    match kind {
        DatasetKind::DeepONet | DatasetKind::Koopman => Ok((tr.state(0).to_vec(), tr.states.clone())),
        DatasetKind::Fno => Err(Error::InvalidArgument("fno examples need a spatial grid (PDE data)".into())),
    }
}

fn field_row<T: Scalar>(kind: DatasetKind, tr: &FieldTrajectory<T>, sensors: &[usize]) -> (Vec<T>, Vec<T>) {
    let u0 = tr.frame(0);
    match kind {
        DatasetKind::DeepONet => (sensors.iter().map(|&i| u0[i]).collect(), tr.fields.clone()),
        DatasetKind::Fno | DatasetKind::Koopman => (u0.to_vec(), tr.fields.clone()),
    }
}

fn ode_queries<T: Scalar>(kind: DatasetKind, tr: &Trajectory<T>) -> Tensor<T> {
    let n = tr.times.len();
    let shape = if kind == DatasetKind::DeepONet { vec![n, 1] } else { vec![n] };
    Tensor::new(shape, tr.times.clone()).expect("finite times")
}

fn field_queries<T: Scalar>(kind: DatasetKind, tr: &FieldTrajectory<T>) -> Tensor<T> {
    let nt = tr.times.len();
    if kind != DatasetKind::DeepONet {
        return Tensor::new(vec![nt], tr.times.clone()).expect("finite times");
    }
    let xs = tr.grid.points();
    let mut q = Vec::with_capacity(nt * xs.len() * 2);
    for &t in &tr.times {
        for &x in &xs {
            q.push(T::lit(x));
            q.push(t);
        }
    }
    Tensor::new(vec![nt * xs.len(), 2], q).expect("finite grid")
}

/// Arranges `solutions` as `kind` examples and splits rows by `seed`.
///
/// `m_sensors` only applies to DeepONet on PDE data (default: full grid);
/// ODE branch inputs are always the full initial state.
pub fn build<T: Scalar>(
    kind: DatasetKind,
    solutions: Solutions<'_, T>,
    m_sensors: Option<usize>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<OperatorDataset<T>> {
    let n = solutions.len();
    let split = Split::new(n, ratios, seed)?;
    let (queries, rows, m): (Tensor<T>, Vec<(Vec<T>, Vec<T>)>, usize) = match solutions {
        Solutions::Ode(trs) => {
            let first = &trs[0];
            if trs.iter().any(|t| t.dim != first.dim || t.times != first.times) {
                return Err(Error::Data("trajectories differ in dimension or time grid".into()));
            }
            let rows = trs.iter().map(|t| ode_row(kind, t)).collect::<Result<_>>()?;
            (ode_queries(kind, first), rows, first.dim)
        }
        Solutions::Field(trs) => {
            let first = &trs[0];
            if trs.iter().any(|t| t.grid != first.grid || t.times != first.times) {
                return Err(Error::Data("trajectories differ in grid or time axis".into()));
            }
            let n_points = first.grid.n_points;
            let m = match kind {
                DatasetKind::DeepONet => m_sensors.unwrap_or(n_points),
                _ => n_points,
            };
            let sensors = sensor_indices(n_points, m)?;
            let rows = trs.iter().map(|t| field_row(kind, t, &sensors)).collect();
            (field_queries(kind, first), rows, m)
        }
    };
    let row_in = rows[0].0.len();
    let row_out = rows[0].1.len();
    let mut inputs = Vec::with_capacity(n * row_in);
    let mut targets = Vec::with_capacity(n * row_out);
    for (i, t) in rows {
        inputs.extend(i);
        targets.extend(t);
    }
    let nq = queries.shape()[0];
    let target_shape = vec![n, nq, row_out / nq];
    let mut meta = BTreeMap::new();
    meta.insert("kind".into(), kind.to_string());
    meta.insert("n_trajectories".into(), n.to_string());
    meta.insert("m_sensors".into(), m.to_string());
    meta.insert("split_seed".into(), seed.to_string());
    meta.insert(
        "split_ratios".into(),
        format!("{},{},{}", ratios.train, ratios.val, ratios.test),
    );
    let [a, b, c] = split.sizes();
    meta.insert("split_sizes".into(), format!("{a},{b},{c}"));
    meta.insert("precision".into(), T::DTYPE.into());
    Ok(OperatorDataset {
        kind,
        inputs: Tensor::new(vec![n, row_in], inputs)?,
        queries,
        targets: Tensor::new(target_shape, targets)?,
        split,
        meta,
    })
}

/// Everything needed to regenerate a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_trajectories: usize,
    /// DeepONet sensors on PDE grids; `None` uses every grid point.
    pub m_sensors: Option<usize>,
    pub split: SplitRatios,
    pub ode: OdeSettings,
    /// `None` uses the equation's defaults.
    pub pde: Option<PdeSettings>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_trajectories: 1000,
            m_sensors: None,
            split: SplitRatios::default(),
            ode: OdeSettings::default(),
            pde: None,
        }
    }
}

impl DataConfig {
    pub fn pde_settings(&self, kind: PdeKind) -> PdeSettings {
        self.pde.unwrap_or_else(|| PdeSettings::defaults(kind))
    }
}

/// Solves `cfg.n_trajectories` problems and builds the dataset. Row `i`
/// comes from item seed `derive_seed(seed, i)`; the split uses `seed` too.
pub fn generate<T: Scalar>(equation: Equation, kind: DatasetKind, cfg: &DataConfig, seed: u64) -> Result<OperatorDataset<T>> {
    let count = cfg.n_trajectories;
    if count == 0 {
        return Err(Error::InvalidArgument("n_trajectories must be at least 1".into()));
    }
    let item = |i: usize| derive_seed(seed, i as u64);
    let mut ds = if let Some(sys) = equation.ode() {
        let trs = (0..count)
            .map(|i| trajectory_from_seed::<T>(sys, item(i), &cfg.ode).map_err(|e| with_seed(e, item(i))))
            .collect::<Result<Vec<_>>>()?;
        build(kind, Solutions::Ode(&trs), cfg.m_sensors, cfg.split, seed)?
    } else {
        let pk = equation.pde().expect("PDE equation");
        let settings = cfg.pde_settings(pk);
        let trs = (0..count)
            .map(|i| generate_one::<T>(pk, &settings, item(i)).map_err(|e| with_seed(e, item(i))))
            .collect::<Result<Vec<_>>>()?;
        build(kind, Solutions::Field(&trs), cfg.m_sensors, cfg.split, seed)?
    };
    ds.meta.insert("equation".into(), equation.to_string());
    ds.meta.insert("seed".into(), seed.to_string());
    if equation.ode().is_some() {
        let o = &cfg.ode;
        ds.meta.insert("ode.h".into(), o.h.to_string());
        ds.meta.insert("ode.t_final".into(), o.t_final.to_string());
        ds.meta.insert("ode.n_store".into(), o.n_store.to_string());
    } else {
        let p = cfg.pde_settings(equation.pde().expect("PDE equation"));
        ds.meta.insert("pde.x_min".into(), p.x_min.to_string());
        ds.meta.insert("pde.x_max".into(), p.x_max.to_string());
        ds.meta.insert("pde.n_points".into(), p.n_points.to_string());
        ds.meta.insert("pde.t_final".into(), p.t_final.to_string());
        ds.meta.insert("pde.n_store".into(), p.n_store.to_string());
        ds.meta.insert("pde.n_modes".into(), p.n_modes.to_string());
        ds.meta.insert("pde.amplitude".into(), p.amplitude.to_string());
    }
    Ok(ds)
}

fn with_seed(e: Error, seed: u64) -> Error {
    match e {
        Error::BlowUp { system, step } => Error::BlowUp {
            system: format!("{system} (trajectory seed {seed})"),
            step,
        },
        other => other,
    }
}

/// `<root>/data/<equation>/<kind>/<seed>.opds`
pub fn dataset_path(root: &Path, equation: Equation, kind: DatasetKind, seed: u64) -> PathBuf {
    root.join("data")
        .join(equation.as_str())
        .join(kind.as_str())
        .join(format!("{seed}.opds"))
}

impl<T: Scalar> OperatorDataset<T> {
    pub fn n_rows(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn n_queries(&self) -> usize {
        self.queries.shape()[0]
    }

    /// Examples across all splits: rows × queries for DeepONet and FNO,
    /// rows for Koopman.
    pub fn n_examples(&self) -> usize {
        match self.kind {
            DatasetKind::Koopman => self.n_rows(),
            _ => self.n_rows() * self.n_queries(),
        }
    }

    /// Components per target point (`d` for ODE states, `N` for FNO fields).
    pub fn target_width(&self) -> usize {
        self.targets.shape()[2]
    }

    pub fn input_width(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn meta_value<V: FromStr>(&self, key: &str) -> Result<V> {
        let raw = self
            .meta
            .get(key)
            .ok_or_else(|| Error::Data(format!("dataset meta lacks `{key}`")))?;
        raw.parse()
            .map_err(|_| Error::Data(format!("dataset meta `{key}` = `{raw}` does not parse")))
    }

    pub fn equation(&self) -> Result<Equation> {
        self.meta_value("equation")
    }

    pub fn to_container(&self) -> Container<T> {
        let mut c = Container::new();
        c.meta = self.meta.clone();
        c.set("kind", self.kind);
        c.set("split.train", Split::encode(&self.split.train));
        c.set("split.val", Split::encode(&self.split.val));
        c.set("split.test", Split::encode(&self.split.test));
        c.push("inputs", self.inputs.clone());
        c.push("queries", self.queries.clone());
        c.push("targets", self.targets.clone());
        c
    }

    pub fn from_container(mut c: Container<T>) -> Result<Self> {
        let kind: DatasetKind = c.get("kind")?.parse()?;
        let split = Split {
            train: Split::decode(c.get("split.train")?)?,
            val: Split::decode(c.get("split.val")?)?,
            test: Split::decode(c.get("split.test")?)?,
        };
        for key in ["split.train", "split.val", "split.test"] {
            c.meta.remove(key);
        }
        let inputs = c.take("inputs")?;
        let queries = c.take("queries")?;
        let targets = c.take("targets")?;
        let n = inputs.shape()[0];
        if targets.shape()[0] != n || targets.rank() != 3 || targets.shape()[1] != queries.shape()[0] {
            return Err(Error::Format(format!(
                "inconsistent dataset shapes: inputs {:?}, queries {:?}, targets {:?}",
                inputs.shape(),
                queries.shape(),
                targets.shape()
            )));
        }
        let mut all: Vec<usize> = split.train.iter().chain(&split.val).chain(&split.test).copied().collect();
        all.sort_unstable();
        if all != (0..n).collect::<Vec<_>>() {
            return Err(Error::Format("split is not a partition of the rows".into()));
        }
        Ok(Self {
            kind,
            inputs,
            queries,
            targets,
            split,
            meta: c.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    /// Loads at precision `T`; a file stored at the other precision is
    /// converted and flagged under `converted_from` in `meta`.
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }

    /// Config that regenerates this dataset, read back from `meta`.
    pub fn data_config(&self) -> Result<DataConfig> {
        let ratios: Vec<f64> = self
            .meta_value::<String>("split_ratios")?
            .split(',')
            .map(|v| v.parse().map_err(|_| Error::Data(format!("bad ratio `{v}`"))))
            .collect::<Result<_>>()?;
        if ratios.len() != 3 {
            return Err(Error::Data("split_ratios needs three values".into()));
        }
        let mut cfg = DataConfig {
            n_trajectories: self.meta_value("n_trajectories")?,
            m_sensors: None,
            split: SplitRatios {
                train: ratios[0],
                val: ratios[1],
                test: ratios[2],
            },
            ..DataConfig::default()
        };
        let eq = self.equation()?;
        if eq.ode().is_some() {
            cfg.ode = OdeSettings {
                h: self.meta_value("ode.h")?,
                t_final: self.meta_value("ode.t_final")?,
                n_store: self.meta_value("ode.n_store")?,
            };
        } else {
            cfg.m_sensors = Some(self.meta_value("m_sensors")?);
            cfg.pde = Some(PdeSettings {
                x_min: self.meta_value("pde.x_min")?,
                x_max: self.meta_value("pde.x_max")?,
                n_points: self.meta_value("pde.n_points")?,
                t_final: self.meta_value("pde.t_final")?,
                n_store: self.meta_value("pde.n_store")?,
                n_modes: self.meta_value("pde.n_modes")?,
                amplitude: self.meta_value("pde.amplitude")?,
            });
        }
        Ok(cfg)
    }

    /// Re-solves the listed rows from the recorded seed and settings and
    /// checks that inputs and targets match bit for bit.
    pub fn verify_rows(&self, rows: &[usize]) -> Result<()> {
        let eq = self.equation()?;
        let seed: u64 = self.meta_value("seed")?;
        let cfg = self.data_config()?;
        let row_in = self.input_width();
        let row_out = self.targets.len() / self.n_rows();
        for &r in rows {
            if r >= self.n_rows() {
                return Err(Error::InvalidArgument(format!("row {r} out of range")));
            }
            let item = derive_seed(seed, r as u64);
            let (inp, tgt) = if let Some(sys) = eq.ode() {
                ode_row(self.kind, &trajectory_from_seed::<T>(sys, item, &cfg.ode)?)?
            } else {
                let pk = eq.pde().expect("PDE equation");
                let settings = cfg.pde_settings(pk);
                let tr = generate_one::<T>(pk, &settings, item)?;
                let sensors = sensor_indices(settings.n_points, self.meta_value("m_sensors")?)?;
                field_row(self.kind, &tr, &sensors)
            };
            let stored_in = &self.inputs.data()[r * row_in..(r + 1) * row_in];
            let stored_out = &self.targets.data()[r * row_out..(r + 1) * row_out];
            if inp != stored_in || tgt != stored_out {
                return Err(Error::Data(format!("row {r} differs from a fresh solve")));
            }
        }
        Ok(())
    }

    /// Spatial grid of a PDE dataset.
    pub fn grid(&self) -> Result<Grid1D> {
        let eq = self.equation()?;
        let pk = eq
            .pde()
            .ok_or_else(|| Error::Data(format!("{eq} has no spatial grid")))?;
        self.data_config()?.pde_settings(pk).grid(pk)
    }
}

/// Rows `idx` of a row-major tensor whose first axis indexes rows.
pub fn gather_rows<T: Scalar>(t: &Tensor<T>, idx: &[usize]) -> Vec<T> {
    let w = t.len() / t.shape()[0];
    let mut out = Vec::with_capacity(idx.len() * w);
    for &i in idx {
        out.extend_from_slice(&t.data()[i * w..(i + 1) * w]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_and_disjointness() {
        let s = Split::new(100, SplitRatios::default(), 1).unwrap();
        assert_eq!(s.sizes(), [80, 10, 10]);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(s, Split::new(100, SplitRatios::default(), 1).unwrap());
        assert_ne!(s, Split::new(100, SplitRatios::default(), 2).unwrap());
    }

    #[test]
    fn split_rejects_bad_input() {
        assert!(Split::new(5, SplitRatios::default(), 0).is_err());
        let bad = SplitRatios { train: 0.5, val: 0.5, test: 0.5 };
        assert!(Split::new(100, bad, 0).is_err());
        let zero = SplitRatios { train: 0.9, val: 0.1, test: 0.0 };
        assert!(Split::new(100, zero, 0).is_err());
    }

    #[test]
    fn names_round_trip() {
        for e in Equation::ALL {
            assert_eq!(e.as_str().parse::<Equation>().unwrap(), e);
        }
        for k in DatasetKind::ALL {
            assert_eq!(k.as_str().parse::<DatasetKind>().unwrap(), k);
        }
        assert!("heat".parse::<Equation>().is_err());
    }

    #[test]
    fn sensors_spread_over_grid() {
        assert_eq!(sensor_indices(8, 4).unwrap(), vec![0, 2, 4, 6]);
        assert_eq!(sensor_indices(5, 5).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(sensor_indices(4, 5).is_err());
    }
}
