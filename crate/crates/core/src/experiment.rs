//! Config-driven experiments: dataset generation, single runs, paired
//! technique sweeps, the append-only results store and report tables.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::container::{sha256_hex, write_atomic};
use crate::datasets::{self, DataConfig, DatasetKind, Equation, OperatorDataset};
use crate::dynamics::{derive_seed, OdeSettings};
use crate::error::{Error, Result};
use crate::models::{Dims, Model, ModelConfig};
use crate::pde::PdeSettings;
use crate::scalar::{Precision, Scalar};
use crate::tensor::Activation;
use crate::training::{evaluate, lr_finder, train, History, LrSweep, SwaConfig, TrainConfig};

/// Header of the results store.
pub const RESULTS_HEADER: &str = "equation,architecture,variant,seed,test_mse,test_rel_l2,epochs,wall_seconds";
pub const RESULTS_FILE: &str = "results.csv";

/// The (architecture, equation) pairings studied by default.
pub const PAIRINGS: [(DatasetKind, Equation); 6] = [
    (DatasetKind::DeepONet, Equation::Lorenz),
    (DatasetKind::DeepONet, Equation::Burgers),
    (DatasetKind::Fno, Equation::Burgers),
    (DatasetKind::Fno, Equation::Kdv),
    (DatasetKind::Koopman, Equation::Pendulum),
    (DatasetKind::Koopman, Equation::FluidAttractor),
];

pub fn is_paired(kind: DatasetKind, eq: Equation) -> bool {
    PAIRINGS.contains(&(kind, eq))
}

/// Technique axis of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Activation,
    Dropout,
    Swa,
}

impl Axis {
    pub fn variants(self) -> Vec<Variant> {
        match self {
            Axis::Activation => Activation::ALL.iter().map(|&a| Variant::Activation(a)).collect(),
            Axis::Dropout => [0.0, 0.05, 0.1, 0.15].into_iter().map(Variant::Dropout).collect(),
            Axis::Swa => [None, Some(1e-4), Some(1e-3), Some(1e-2), Some(1e-1)]
                .into_iter()
                .map(Variant::Swa)
                .collect(),
        }
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "activation" => Ok(Axis::Activation),
            "dropout" => Ok(Axis::Dropout),
            "swa" | "swa_lr" => Ok(Axis::Swa),
            _ => Err(Error::Unknown { what: "sweep axis", name: s.into() }),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Activation => "activation",
            Axis::Dropout => "dropout",
            Axis::Swa => "swa",
        })
    }
}

/// One setting along an axis. Written as `base`, `activation=relu`,
/// `dropout=0.1`, `swa_lr=none` or `swa_lr=0.001`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variant {
    #[default]
    Base,
    Activation(Activation),
    Dropout(f64),
    Swa(Option<f64>),
}

impl Variant {
    /// Applies the variant on top of a model and training configuration.
    /// SWA variants keep an existing tail fraction or use `swa_tail`.
    pub fn apply(self, model: &mut ModelConfig, train: &mut TrainConfig, swa_tail: f64) {
        match self {
            Variant::Base => {}
            Variant::Activation(a) => model.activation = a,
            Variant::Dropout(p) => train.dropout = p,
            Variant::Swa(None) => train.swa = None,
            Variant::Swa(Some(lr)) => {
                let tail_fraction = train.swa.map(|s| s.tail_fraction).unwrap_or(swa_tail);
                train.swa = Some(SwaConfig { swa_lr: lr, tail_fraction });
            }
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Base => f.write_str("base"),
            Variant::Activation(a) => write!(f, "activation={a}"),
            Variant::Dropout(p) => write!(f, "dropout={p}"),
            Variant::Swa(None) => f.write_str("swa_lr=none"),
            Variant::Swa(Some(lr)) => write!(f, "swa_lr={lr}"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Unknown { what: "variant", name: s.into() };
        if s == "base" {
            return Ok(Variant::Base);
        }
        let (key, value) = s.split_once('=').ok_or_else(bad)?;
        let number = |v: &str| v.parse::<f64>().ok().filter(|x| x.is_finite() && *x >= 0.0).ok_or_else(bad);
        match key {
            "activation" => Ok(Variant::Activation(value.parse()?)),
            "dropout" => Ok(Variant::Dropout(number(value)?)),
            "swa_lr" if value == "none" => Ok(Variant::Swa(None)),
            "swa_lr" => Ok(Variant::Swa(Some(number(value)?))),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.to_string()
    }
}

/// Everything a run needs. Loaded from TOML over the desk preset of the
/// chosen (architecture, equation) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub equation: Equation,
    pub architecture: DatasetKind,
    /// Variant used by `train`.
    #[serde(default)]
    pub variant: Variant,
    /// Axis used by `sweep` when none is given on the command line.
    #[serde(default)]
    pub sweep: Option<Axis>,
    pub seeds: Vec<u64>,
    /// Fraction of epochs averaged by SWA variants.
    #[serde(default = "default_swa_tail")]
    pub swa_tail_fraction: f64,
    #[serde(default)]
    pub precision: Precision,
    /// Permit pairs outside [`PAIRINGS`].
    #[serde(default)]
    pub allow_unpaired: bool,
    /// Generate missing datasets during `train` and `sweep`.
    #[serde(default)]
    pub auto_generate: bool,
    pub data: DataConfig,
    pub model: ModelConfig,
    /// `train.seed` is replaced by each run's seed.
    pub train: TrainConfig,
}

fn default_swa_tail() -> f64 {
    0.1
}

/// Desk-scale settings, small enough for a laptop core.
pub fn preset(architecture: DatasetKind, equation: Equation) -> ExperimentConfig {
    let mut data = DataConfig { n_trajectories: 200, ..DataConfig::default() };
    let mut model = ModelConfig::default();
    let mut train = TrainConfig::default();
    match equation.pde() {
        Some(kind) => {
            let mut p = PdeSettings::defaults(kind);
            p.n_points = 32;
            p.n_store = 10;
            data.pde = Some(p);
            data.m_sensors = Some(16);
        }
        None => data.ode = OdeSettings { h: 1e-3, t_final: 1.0, n_store: 20 },
    }
    match architecture {
        DatasetKind::DeepONet => {
            model.deeponet_hidden = 32;
            model.deeponet_depth = 2;
            model.deeponet_latent = 16;
            train.epochs = 400;
            train.batch_size = 16;
        }
        DatasetKind::Fno => {
            model.fno_width = 8;
            model.fno_layers = 2;
            model.fno_k_max = 6;
            train.epochs = 30;
            train.batch_size = 32;
        }
        DatasetKind::Koopman => {
            model.koopman_hidden = 32;
            model.koopman_depth = 2;
            model.koopman_encoding = 8;
            train.epochs = 150;
            train.batch_size = 16;
        }
    }
    if let Some(p) = data.pde.as_mut() {
        // unit viscosity damps Burgers mode k like exp(-k²π²t); keep the decay resolved
        p.t_final = if equation == Equation::Burgers { 0.02 } else { 0.1 };
        p.n_modes = 3;
    }
    ExperimentConfig {
        equation,
        architecture,
        variant: Variant::Base,
        sweep: None,
        seeds: vec![0, 1, 2],
        swa_tail_fraction: default_swa_tail(),
        precision: Precision::F64,
        allow_unpaired: false,
        auto_generate: false,
        data,
        model,
        train,
    }
}

fn config_error(e: impl fmt::Display) -> Error {
    Error::Config(e.to_string())
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML. `equation` and `architecture` pick the preset that the
    /// remaining keys override; unknown keys are rejected.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(config_error)?;
        let pick = |key: &str, fallback: &str| -> Result<String> {
            match table.get(key) {
                None => Ok(fallback.to_string()),
                Some(toml::Value::String(s)) => Ok(s.clone()),
                Some(other) => Err(Error::Config(format!("field `{key}`: expected a string, found {other}"))),
            }
        };
        let field = |key: &'static str| move |e: Error| Error::Config(format!("field `{key}`: {e}"));
        let equation: Equation = pick("equation", "pendulum")?.parse().map_err(field("equation"))?;
        let architecture: DatasetKind = pick("architecture", "koopman")?.parse().map_err(field("architecture"))?;
        let mut base = toml::Table::try_from(preset(architecture, equation)).map_err(config_error)?;
        merge(&mut base, table);
        let cfg: ExperimentConfig = base.try_into().map_err(config_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(config_error)
    }

    pub fn validate(&self) -> Result<()> {
        let (kind, eq) = (self.architecture, self.equation);
        if !self.allow_unpaired && !is_paired(kind, eq) {
            return Err(Error::Config(format!(
                "{kind} is not studied on {eq}; set allow_unpaired = true to run it anyway"
            )));
        }
        if kind == DatasetKind::Fno && eq.pde().is_none() {
            return Err(Error::Config(format!("fno needs a gridded PDE, not {eq}")));
        }
        if !(self.swa_tail_fraction > 0.0 && self.swa_tail_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "field `swa_tail_fraction`: {} is outside (0, 1]",
                self.swa_tail_fraction
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("field `seeds`: at least one seed is required".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("field `seeds`: duplicate seeds".into()));
        }
        self.train.validate().map_err(|e| Error::Config(format!("train: {e}")))?;
        Ok(())
    }

    /// Model and training settings of one run.
    pub fn run_settings(&self, variant: Variant, seed: u64) -> (ModelConfig, TrainConfig) {
        let (mut model, mut train) = (self.model, self.train);
        variant.apply(&mut model, &mut train, self.swa_tail_fraction);
        train.seed = seed;
        (model, train)
    }

    /// Digest of everything that determines a dataset's bytes.
    pub fn data_digest(&self) -> Result<String> {
        let data = toml::to_string(&self.data).map_err(config_error)?;
        let key = format!("{}|{}|{}|{data}", self.equation, self.architecture, self.precision);
        Ok(sha256_hex(key.as_bytes()))
    }
}

/// One finished run in the results store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub equation: Equation,
    pub architecture: DatasetKind,
    pub variant: Variant,
    pub seed: u64,
    pub test_mse: f64,
    pub test_rel_l2: f64,
    pub epochs: usize,
    pub wall_seconds: f64,
}

impl ResultRow {
    pub fn to_csv_line(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.serialize(self)?;
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
    }
}

/// Appends rows to `path` under an exclusive lock, writing the header
/// first when the file is new.
pub fn append_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut file = OpenOptions::new().create(true).read(true).append(true).open(path)?;
    file.lock()?;
    let mut text = String::new();
    if file.seek(SeekFrom::End(0))? == 0 {
        text.push_str(RESULTS_HEADER);
        text.push('\n');
    }
    for r in rows {
        text.push_str(&r.to_csv_line()?);
    }
    file.write_all(text.as_bytes())?;
    file.sync_data()?;
    file.unlock()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read results store {}: {e}", path.display())))?;
    parse_results(&text)
}

pub fn parse_results(text: &str) -> Result<Vec<ResultRow>> {
    if text.lines().next() != Some(RESULTS_HEADER) {
        return Err(Error::Format(format!("results store must start with `{RESULTS_HEADER}`")));
    }
    let mut rows = Vec::new();
    for r in csv::Reader::from_reader(text.as_bytes()).deserialize() {
        let row: ResultRow = r?;
        if !(row.test_mse.is_finite() && row.test_mse >= 0.0 && row.test_rel_l2.is_finite() && row.test_rel_l2 >= 0.0) {
            return Err(Error::Data(format!("result row with invalid error values: {row:?}")));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Where experiments keep their files.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dataset(&self, cfg: &ExperimentConfig, seed: u64) -> PathBuf {
        let p = datasets::dataset_path(&self.root, cfg.equation, cfg.architecture, seed);
        match cfg.precision {
            Precision::F64 => p,
            Precision::F32 => p.with_extension("f32.opds"),
        }
    }

    fn run_stem(&self, eq: Equation, kind: DatasetKind, variant: Variant, seed: u64, precision: Precision) -> PathBuf {
        let name = match precision {
            Precision::F64 => seed.to_string(),
            Precision::F32 => format!("{seed}.f32"),
        };
        self.root
            .join("runs")
            .join(eq.as_str())
            .join(kind.as_str())
            .join(variant.to_string())
            .join(name)
    }

    pub fn checkpoint(&self, cfg: &ExperimentConfig, variant: Variant, seed: u64) -> PathBuf {
        with_suffix(self.run_stem(cfg.equation, cfg.architecture, variant, seed, cfg.precision), ".ckpt")
    }

    pub fn history(&self, cfg: &ExperimentConfig, variant: Variant, seed: u64) -> PathBuf {
        with_suffix(self.run_stem(cfg.equation, cfg.architecture, variant, seed, cfg.precision), ".history.csv")
    }

    fn history_of(&self, row: &ResultRow, precision: Precision) -> PathBuf {
        with_suffix(
            self.run_stem(row.equation, row.architecture, row.variant, row.seed, precision),
            ".history.csv",
        )
    }

    pub fn results(&self) -> PathBuf {
        self.root.join(RESULTS_FILE)
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

fn with_suffix(p: PathBuf, suffix: &str) -> PathBuf {
    let mut s = p.into_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

const DIGEST_KEY: &str = "config_digest";

fn generate_dataset<T: Scalar>(cfg: &ExperimentConfig, seed: u64) -> Result<OperatorDataset<T>> {
    let mut ds = datasets::generate::<T>(cfg.equation, cfg.architecture, &cfg.data, seed)?;
    ds.meta.insert(DIGEST_KEY.into(), cfg.data_digest()?);
    Ok(ds)
}

/// Writes one dataset per seed and returns the paths. Identical configs
/// produce identical bytes.
pub fn generate<T: Scalar>(cfg: &ExperimentConfig, layout: &Layout) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let mut paths = Vec::new();
    for &seed in &cfg.seeds {
        let ds = generate_dataset::<T>(cfg, seed)?;
        let path = layout.dataset(cfg, seed);
        ds.save(&path)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Loads the dataset for `seed`, generating it if allowed. A file made from
/// different settings is regenerated when `auto_generate` is on and is an
/// error otherwise.
pub fn dataset_for<T: Scalar>(cfg: &ExperimentConfig, layout: &Layout, seed: u64) -> Result<OperatorDataset<T>> {
    let path = layout.dataset(cfg, seed);
    if path.exists() {
        let ds = OperatorDataset::<T>::load(&path)?;
        let digest = cfg.data_digest()?;
        if ds.meta.get(DIGEST_KEY) == Some(&digest) {
            return Ok(ds);
        }
        if !cfg.auto_generate {
            return Err(Error::Data(format!(
                "{} was generated with different settings; rerun `generate`",
                path.display()
            )));
        }
    } else if !cfg.auto_generate {
        return Err(Error::Data(format!(
            "no dataset at {}; run `generate` first or set auto_generate = true",
            path.display()
        )));
    }
    let ds = generate_dataset::<T>(cfg, seed)?;
    ds.save(&path)?;
    Ok(ds)
}

pub fn dims_of<T: Scalar>(kind: DatasetKind, ds: &OperatorDataset<T>) -> Dims {
    match kind {
        DatasetKind::DeepONet => Dims {
            input: ds.input_width(),
            query: ds.queries.shape()[1],
            output: ds.target_width(),
        },
        DatasetKind::Fno => Dims { input: 2, query: 0, output: 1 },
        DatasetKind::Koopman => Dims {
            input: ds.input_width(),
            query: 0,
            output: ds.input_width(),
        },
    }
}

/// Initial-weight seed of a run; shared by every variant of a sweep.
pub fn init_seed(seed: u64) -> u64 {
    derive_seed(seed, 0x1417)
}

/// A finished run.
#[derive(Clone, Debug)]
pub struct RunOutcome<T> {
    pub row: ResultRow,
    pub history: History,
    pub model: Model<T>,
}

/// Trains one (variant, seed) on an already loaded dataset without
/// touching the file system.
pub fn run<T: Scalar>(cfg: &ExperimentConfig, ds: &OperatorDataset<T>, variant: Variant, seed: u64) -> Result<RunOutcome<T>> {
    let started = Instant::now();
    let (model_cfg, train_cfg) = cfg.run_settings(variant, seed);
    let dims = dims_of(cfg.architecture, ds);
    let mut model = Model::<T>::new(cfg.architecture, &model_cfg, dims, init_seed(seed))?;
    model.fit_inputs(ds)?;
    let history = train(&mut model, ds, &train_cfg)?;
    let test = evaluate(&model, ds, &ds.split.test)?;
    if !(test.mse.is_finite() && test.rel_l2.is_finite()) {
        return Err(Error::NonFinite { op: "test evaluation" });
    }
    let row = ResultRow {
        equation: cfg.equation,
        architecture: cfg.architecture,
        variant,
        seed,
        test_mse: test.mse,
        test_rel_l2: test.rel_l2,
        epochs: train_cfg.epochs,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutcome { row, history, model })
}

fn run_and_store<T: Scalar>(
    cfg: &ExperimentConfig,
    layout: &Layout,
    ds: &OperatorDataset<T>,
    variant: Variant,
    seed: u64,
) -> Result<ResultRow> {
    let out = run(cfg, ds, variant, seed)?;
    let (model_cfg, _) = cfg.run_settings(variant, seed);
    out.model
        .save(&model_cfg, dims_of(cfg.architecture, ds), &layout.checkpoint(cfg, variant, seed))?;
    write_atomic(&layout.history(cfg, variant, seed), out.history.to_csv().as_bytes())?;
    append_results(&layout.results(), std::slice::from_ref(&out.row))?;
    Ok(out.row)
}

/// Trains `cfg.variant` once per seed, saving checkpoints and histories and
/// appending to the results store.
pub fn train_runs<T: Scalar>(cfg: &ExperimentConfig, layout: &Layout) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let ds = dataset_for::<T>(cfg, layout, seed)?;
        rows.push(run_and_store(cfg, layout, &ds, cfg.variant, seed)?);
    }
    Ok(rows)
}

/// Every variant of `axis` for every seed. Variants of one seed share the
/// dataset and the initial weights.
pub fn sweep<T: Scalar>(cfg: &ExperimentConfig, layout: &Layout, axis: Axis) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let ds = dataset_for::<T>(cfg, layout, seed)?;
        for v in axis.variants() {
            rows.push(run_and_store(cfg, layout, &ds, v, seed)?);
        }
    }
    Ok(rows)
}

/// Range-test settings for [`lr_find`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrRange {
    pub lr_min: f64,
    pub lr_max: f64,
    pub steps: usize,
}

impl Default for LrRange {
    fn default() -> Self {
        Self { lr_min: 1e-6, lr_max: 1.0, steps: 100 }
    }
}

/// Learning-rate range test per seed, starting from the run's initial
/// weights. Each record goes to `lr/<equation>/<architecture>/<seed>.csv`.
pub fn lr_find<T: Scalar>(cfg: &ExperimentConfig, layout: &Layout, range: LrRange) -> Result<Vec<(u64, LrSweep)>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let ds = dataset_for::<T>(cfg, layout, seed)?;
        let (model_cfg, train_cfg) = cfg.run_settings(cfg.variant, seed);
        let mut model = Model::<T>::new(cfg.architecture, &model_cfg, dims_of(cfg.architecture, &ds), init_seed(seed))?;
        model.fit_inputs(&ds)?;
        let sweep = lr_finder(&model, &ds, train_cfg.batch_size, range.lr_min, range.lr_max, range.steps, seed)?;
        let path = layout
            .root
            .join("lr")
            .join(cfg.equation.as_str())
            .join(cfg.architecture.as_str())
            .join(format!("{seed}.csv"));
        write_atomic(&path, sweep.to_csv().as_bytes())?;
        out.push((seed, sweep));
    }
    Ok(out)
}

/// Median; the mean of the middle pair for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Median-over-seeds summary of one variant.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantSummary {
    pub variant: Variant,
    pub seeds: usize,
    pub median_mse: f64,
    pub median_rel_l2: f64,
}

/// One table per (architecture, equation), variants in first-seen order.
pub fn summarize(rows: &[ResultRow]) -> BTreeMap<(DatasetKind, Equation), Vec<VariantSummary>> {
    let mut groups: BTreeMap<(DatasetKind, Equation), Vec<(Variant, Vec<&ResultRow>)>> = BTreeMap::new();
    for r in rows {
        let g = groups.entry((r.architecture, r.equation)).or_default();
        match g.iter_mut().find(|(v, _)| *v == r.variant) {
            Some((_, members)) => members.push(r),
            None => g.push((r.variant, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(key, vars)| {
            let table = vars
                .into_iter()
                .map(|(variant, members)| {
                    let mse: Vec<f64> = members.iter().map(|r| r.test_mse).collect();
                    let rel: Vec<f64> = members.iter().map(|r| r.test_rel_l2).collect();
                    VariantSummary {
                        variant,
                        seeds: members.len(),
                        median_mse: median(&mse).unwrap_or(f64::NAN),
                        median_rel_l2: median(&rel).unwrap_or(f64::NAN),
                    }
                })
                .collect();
            (key, table)
        })
        .collect()
}

/// Rendered report.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub markdown: String,
    /// Medians, one line per (architecture, equation, variant).
    pub summary_csv: String,
    /// Every raw row, in store order.
    pub rows_csv: String,
    /// Per-epoch losses of every run whose history file is present.
    pub curves_csv: String,
}

pub fn render_report(rows: &[ResultRow], layout: &Layout) -> Result<Report> {
    if rows.is_empty() {
        return Err(Error::Data("results store is empty; nothing to report".into()));
    }
    let tables = summarize(rows);
    let mut md = String::new();
    let mut summary = String::from("architecture,equation,variant,seeds,median_test_mse,median_test_rel_l2\n");
    for ((kind, eq), table) in &tables {
        md.push_str(&format!("## {kind} / {eq}\n\n"));
        md.push_str("| variant | seeds | median test MSE | median relative L2 |\n");
        md.push_str("|---|---|---|---|\n");
        for s in table {
            md.push_str(&format!(
                "| {} | {} | {:.3e} | {:.3e} |\n",
                s.variant, s.seeds, s.median_mse, s.median_rel_l2
            ));
            summary.push_str(&format!(
                "{kind},{eq},{},{},{:e},{:e}\n",
                s.variant, s.seeds, s.median_mse, s.median_rel_l2
            ));
        }
        md.push('\n');
    }
    let mut rows_csv = String::from(RESULTS_HEADER);
    rows_csv.push('\n');
    for r in rows {
        rows_csv.push_str(&r.to_csv_line()?);
    }
    let mut curves = String::from("architecture,equation,variant,seed,precision,epoch,train_loss,val_loss\n");
    let mut seen = std::collections::BTreeSet::new();
    for r in rows {
        for precision in [Precision::F64, Precision::F32] {
            let path = layout.history_of(r, precision);
            if !seen.insert(path.clone()) || !path.exists() {
                continue;
            }
            let text = fs::read_to_string(&path)?;
            for line in text.lines().skip(1) {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() < 3 {
                    return Err(Error::Format(format!("bad history line in {}: {line}", path.display())));
                }
                curves.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    r.architecture, r.equation, r.variant, r.seed, precision, f[0], f[1], f[2]
                ));
            }
        }
    }
    Ok(Report { markdown: md, summary_csv: summary, rows_csv, curves_csv: curves })
}

/// Reads the results store and writes `report/{summary.md, summary.csv,
/// rows.csv, curves.csv}`.
pub fn report(layout: &Layout) -> Result<Report> {
    let path = layout.results();
    if !path.exists() {
        return Err(Error::Data(format!("no results store at {}", path.display())));
    }
    let rows = read_results(&path)?;
    let rep = render_report(&rows, layout)?;
    let dir = layout.report_dir();
    write_atomic(&dir.join("summary.md"), rep.markdown.as_bytes())?;
    write_atomic(&dir.join("summary.csv"), rep.summary_csv.as_bytes())?;
    write_atomic(&dir.join("rows.csv"), rep.rows_csv.as_bytes())?;
    write_atomic(&dir.join("curves.csv"), rep.curves_csv.as_bytes())?;
    Ok(rep)
}

/// Process exit code for a failure.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        return 4;
    }
    match e {
        Error::Config(_) | Error::Unknown { .. } | Error::InvalidArgument(_) => 2,
        Error::Data(_) | Error::Format(_) | Error::Version(_) | Error::Checksum { .. } | Error::Io(_) | Error::Csv(_) => 3,
        _ => 1,
    }
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_labels_round_trip() {
        for axis in [Axis::Activation, Axis::Dropout, Axis::Swa] {
            for v in axis.variants() {
                assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
            }
        }
        assert_eq!(Variant::Swa(Some(1e-4)).to_string(), "swa_lr=0.0001");
        assert!("dropout=-1".parse::<Variant>().is_err());
        assert!("width=3".parse::<Variant>().is_err());
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[4e-3, 1e-3, 2e-3]), Some(2e-3));
        assert_eq!(median(&[1.0, 3.0]), Some(2.0));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn presets_are_valid() {
        for (kind, eq) in PAIRINGS {
            let p = preset(kind, eq);
            p.validate().unwrap();
            let back = ExperimentConfig::from_toml(&p.to_toml().unwrap()).unwrap();
            assert_eq!(back, p);
        }
    }
}
