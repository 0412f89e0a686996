//! DeepONet, Fourier neural operator and Koopman autoencoder.
//!
//! Parameters live in a flat [`ParamStore`]; layers hold [`ParamId`]s. A
//! forward pass binds the store to a graph (see [`ParamStore::bind`]) and
//! receives one [`Var`] per parameter, indexed by `ParamId`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::datasets::{DatasetKind, OperatorDataset};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::fft::mode_count;
use crate::tensor::{Activation, Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Subject to weight-entry dropout (entries of real linear layers).
    pub droppable: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    pub params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, droppable: bool) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            droppable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    /// Total scalar count.
    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Records every parameter as a trainable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params.iter().map(|p| g.param(&p.value)).collect()
    }

    /// Records every parameter as a constant (no gradients).
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params.iter().map(|p| g.constant(&p.value)).collect()
    }

    /// Flattened copy of all parameter values.
    pub fn flatten(&self) -> Vec<T> {
        self.params.iter().flat_map(|p| p.value.data().iter().copied()).collect()
    }

    /// Overwrites all values from a flat slice laid out like [`flatten`](Self::flatten).
    pub fn assign_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.n_scalars() {
            return Err(Error::shape("assign_flat", format!("{} values for {}", flat.len(), self.n_scalars())));
        }
        let mut at = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }
}

/// Uniform Glorot bound ±√(6/(fan_in+fan_out)).
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.gen_range(lo..hi))).collect();
    Tensor::new(shape.to_vec(), data).expect("finite init")
}

/// `y = x·W + b` with `W: [fan_in, fan_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Weights and bias drawn from the Glorot uniform range.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        droppable: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let a = glorot_bound(fan_in, fan_out);
        let w = store.add(format!("{name}.w"), uniform(rng, &[fan_in, fan_out], -a, a), droppable);
        let b = bias.then(|| store.add(format!("{name}.b"), uniform(rng, &[fan_out], -a, a), droppable));
        Self { w, b, fan_in, fan_out }
    }

    /// `x: [rows, fan_in] -> [rows, fan_out]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let y = g.matmul(x, p[self.w.0])?;
        match self.b {
            Some(b) => g.add_bias(y, p[b.0]),
            None => Ok(y),
        }
    }
}

/// Fully connected network; activation between layers, none after the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl Mlp {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        widths: &[usize],
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true, true, rng))
            .collect();
        Ok(Self {
            layers,
            widths: widths.to_vec(),
            activation,
        })
    }

    /// Σ(wᵢ·wᵢ₊₁ + wᵢ₊₁).
    pub fn n_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, p, h)?;
            if i + 1 < self.layers.len() {
                h = g.activation(self.activation, h)?;
            }
        }
        Ok(h)
    }
}

fn hidden_widths(input: usize, hidden: usize, depth: usize, output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend(std::iter::repeat(hidden).take(depth));
    w.push(output);
    w
}

/// Branch/trunk operator network; output is the dot product of encodings.
#[derive(Clone, Debug, PartialEq)]
pub struct DeepONet<T> {
    pub store: ParamStore<T>,
    pub branch: Mlp,
    pub trunk: Mlp,
    pub latent: usize,
    pub out_dim: usize,
    /// Per-coordinate `(lo, hi)` mapped affinely onto [-1, 1] before the
    /// trunk; empty means queries are used as given.
    pub query_range: Vec<(f64, f64)>,
}

impl<T: Scalar> DeepONet<T> {
    /// `branch_widths` and `trunk_widths` include input and latent sizes;
    /// both must end in the same latent size, divisible by `out_dim`.
    pub fn new(branch_widths: &[usize], trunk_widths: &[usize], out_dim: usize, act: Activation, seed: u64) -> Result<Self> {
        let p = *branch_widths.last().unwrap_or(&0);
        if trunk_widths.last() != Some(&p) {
            return Err(Error::InvalidArgument(format!(
                "branch latent {p} and trunk latent {:?} must agree",
                trunk_widths.last()
            )));
        }
        if out_dim == 0 || p % out_dim != 0 {
            return Err(Error::InvalidArgument(format!("latent {p} does not split into {out_dim} blocks")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let branch = Mlp::new(&mut store, "branch", branch_widths, act, &mut rng)?;
        let trunk = Mlp::new(&mut store, "trunk", trunk_widths, act, &mut rng)?;
        Ok(Self {
            store,
            branch,
            trunk,
            latent: p,
            out_dim,
            query_range: Vec::new(),
        })
    }

    pub fn set_query_range(&mut self, range: Vec<(f64, f64)>) -> Result<()> {
        if !range.is_empty() && range.len() != self.query_dim() {
            return Err(Error::InvalidArgument(format!(
                "{} query ranges for {}-dimensional queries",
                range.len(),
                self.query_dim()
            )));
        }
        if let Some(&(lo, hi)) = range.iter().find(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && hi > lo)) {
            return Err(Error::InvalidArgument(format!("query range [{lo}, {hi}] is empty or not finite")));
        }
        self.query_range = range;
        Ok(())
    }

    fn scale_queries(&self, g: &mut Graph<T>, queries: Var) -> Result<Var> {
        if self.query_range.is_empty() {
            return Ok(queries);
        }
        let q = self.query_range.len();
        let mut diag = vec![T::zero(); q * q];
        let mut shift = Vec::with_capacity(q);
        for (i, &(lo, hi)) in self.query_range.iter().enumerate() {
            diag[i * q + i] = T::lit(2.0 / (hi - lo));
            shift.push(T::lit(-(hi + lo) / (hi - lo)));
        }
        let d = g.constant_from(&[q, q], diag)?;
        let c = g.constant_from(&[q], shift)?;
        let scaled = g.matmul(queries, d)?;
        g.add_bias(scaled, c)
    }

    pub fn sensors(&self) -> usize {
        self.branch.widths[0]
    }

    pub fn query_dim(&self) -> usize {
        self.trunk.widths[0]
    }

    /// `sensors: [B, m]`, `queries: [Q, q]` gives one `[B, Q]` output per
    /// target component: block `j` dots latent columns `j·p/d..(j+1)·p/d`.
    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], sensors: Var, queries: Var) -> Result<Vec<Var>> {
        let b = self.branch.forward(g, p, sensors)?;
        let queries = self.scale_queries(g, queries)?;
        let t = self.trunk.forward(g, p, queries)?;
        let block = self.latent / self.out_dim;
        (0..self.out_dim)
            .map(|j| {
                let (bj, tj) = if self.out_dim == 1 {
                    (b, t)
                } else {
                    (g.slice_cols(b, j * block, block)?, g.slice_cols(t, j * block, block)?)
                };
                let tj_t = g.transpose(tj)?;
                g.matmul(bj, tj_t)
            })
            .collect()
    }

    /// Output components at one (sensors, query) pair.
    pub fn eval(&self, sensors: &[T], query: &[T]) -> Result<Vec<T>> {
        if sensors.len() != self.sensors() || query.len() != self.query_dim() {
            return Err(Error::shape(
                "deeponet_forward",
                format!(
                    "got {} sensors and query of {}, model expects {} and {}",
                    sensors.len(),
                    query.len(),
                    self.sensors(),
                    self.query_dim()
                ),
            ));
        }
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let s = g.constant_from(&[1, sensors.len()], sensors.to_vec())?;
        let q = g.constant_from(&[1, query.len()], query.to_vec())?;
        let outs = self.forward(&mut g, &p, s, q)?;
        Ok(outs.iter().map(|&o| g.item(o)).collect())
    }
}

/// FFT, truncation to `k_max` modes, per-mode complex mixing `R`, inverse
/// FFT, plus a pointwise linear bypass `W`, then the activation.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralConvLayer {
    /// `[c_in, c_out, k_max, 2]`
    pub r: ParamId,
    /// `[c_in, c_out]`, no bias.
    pub w: Linear,
    pub k_max: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub activation: Activation,
}

impl SpectralConvLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k_max: usize,
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if k_max == 0 || c_in == 0 || c_out == 0 {
            return Err(Error::InvalidArgument("spectral layer sizes must be positive".into()));
        }
        let scale = 1.0 / (c_in * c_out) as f64;
        let r = store.add(format!("{name}.r"), uniform(rng, &[c_in, c_out, k_max, 2], 0.0, scale), false);
        let w = Linear::new(store, &format!("{name}.w"), c_in, c_out, false, true, rng);
        Ok(Self {
            r,
            w,
            k_max,
            c_in,
            c_out,
            activation,
        })
    }

    /// Sum of the spectral and bypass branches before the activation.
    /// `x: [B, c_in, N] -> [B, c_out, N]`.
    pub fn pre_activation<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let [b, c, n] = *g.shape(x) else {
            return Err(Error::shape("spectral_conv", format!("expected [B, C, N], got {:?}", g.shape(x))));
        };
        if c != self.c_in {
            return Err(Error::shape("spectral_conv", format!("{c} channels, layer takes {}", self.c_in)));
        }
        if self.k_max > mode_count(n) {
            return Err(Error::shape(
                "spectral_conv",
                format!("k_max {} exceeds the {} modes of a {n}-point grid", self.k_max, mode_count(n)),
            ));
        }
        let spec = g.rfft(x)?;
        let mixed = g.spectral_mix(spec, p[self.r.0])?;
        let spectral = g.irfft(mixed, n)?;
        let bypass = pointwise(g, x, |g, rows| self.w.forward(g, p, rows), self.c_out)?;
        debug_assert_eq!(g.shape(bypass), &[b, self.c_out, n]);
        g.add(spectral, bypass)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let pre = self.pre_activation(g, p, x)?;
        g.activation(self.activation, pre)
    }
}

/// Applies a row-wise map at every grid node of `x: [B, C, N]`.
fn pointwise<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    f: impl FnOnce(&mut Graph<T>, Var) -> Result<Var>,
    c_out: usize,
) -> Result<Var> {
    let [b, c, n] = *g.shape(x) else {
        return Err(Error::shape("pointwise", format!("{:?}", g.shape(x))));
    };
    let xt = g.swap_last2(x)?;
    let rows = g.reshape(xt, &[b * n, c])?;
    let y = f(g, rows)?;
    let y = g.reshape(y, &[b, n, c_out])?;
    g.swap_last2(y)
}

/// Lift, spectral layers, projection; lift and projection act pointwise.
#[derive(Clone, Debug, PartialEq)]
pub struct Fno<T> {
    pub store: ParamStore<T>,
    pub lift: Mlp,
    pub layers: Vec<SpectralConvLayer>,
    pub project: Mlp,
}

impl<T: Scalar> Fno<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        width: usize,
        n_layers: usize,
        k_max: usize,
        act: Activation,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let lift = Mlp::new(&mut store, "lift", &[in_channels, width], act, &mut rng)?;
        let layers = (0..n_layers)
            .map(|i| SpectralConvLayer::new(&mut store, &format!("layer{i}"), width, width, k_max, act, &mut rng))
            .collect::<Result<_>>()?;
        let project = Mlp::new(&mut store, "project", &[width, width, out_channels], act, &mut rng)?;
        Ok(Self {
            store,
            lift,
            layers,
            project,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.lift.widths[0]
    }

    pub fn out_channels(&self) -> usize {
        *self.project.widths.last().unwrap()
    }

    /// `x: [B, c_in, N] -> [B, c_out, N]`.
    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let c = g.shape(x).get(1).copied();
        if g.shape(x).len() != 3 || c != Some(self.in_channels()) {
            return Err(Error::shape(
                "fno_forward",
                format!("expected [B, {}, N], got {:?}", self.in_channels(), g.shape(x)),
            ));
        }
        let width = self.lift.widths[1];
        let mut h = pointwise(g, x, |g, rows| self.lift.forward(g, p, rows), width)?;
        for layer in &self.layers {
            h = layer.forward(g, p, h)?;
        }
        pointwise(g, h, |g, rows| self.project.forward(g, p, rows), self.out_channels())
    }

    /// Single-sample convenience: `channels: [c_in × N]` row-major.
    pub fn eval(&self, channels: &[T], n: usize) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let x = g.constant_from(&[1, self.in_channels(), n], channels.to_vec())?;
        let y = self.forward(&mut g, &p, x)?;
        Ok(g.value(y).to_vec())
    }
}

/// Encoder, masked linear latent map `K`, decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct KoopmanAutoencoder<T> {
    pub store: ParamStore<T>,
    pub encoder: Mlp,
    /// `[e, e]`, acting on column vectors: `z' = K z`.
    pub k: ParamId,
    pub decoder: Mlp,
    pub encoding: usize,
}

/// True on the main diagonal and the two neighbouring diagonals.
pub fn in_band(i: usize, j: usize) -> bool {
    i.abs_diff(j) <= 1
}

impl<T: Scalar> KoopmanAutoencoder<T> {
    /// `K` starts at the identity so early rollouts stay bounded.
    pub fn new(state_dim: usize, hidden: usize, depth: usize, encoding: usize, act: Activation, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Mlp::new(&mut store, "encoder", &hidden_widths(state_dim, hidden, depth, encoding), act, &mut rng)?;
        let k = store.add("koopman.k", Tensor::eye(encoding), false);
        let decoder = Mlp::new(&mut store, "decoder", &hidden_widths(encoding, hidden, depth, state_dim), act, &mut rng)?;
        Ok(Self {
            store,
            encoder,
            k,
            decoder,
            encoding,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.encoder.widths[0]
    }

    /// Zeroes every entry of `K` outside the tridiagonal band.
    pub fn project_mask(&mut self) {
        let e = self.encoding;
        let k = self.store.get_mut(self.k).data_mut();
        for i in 0..e {
            for j in 0..e {
                if !in_band(i, j) {
                    k[i * e + j] = T::zero();
                }
            }
        }
    }

    pub fn encode(&self, g: &mut Graph<T>, p: &[Var], v: Var) -> Result<Var> {
        self.encoder.forward(g, p, v)
    }

    pub fn decode(&self, g: &mut Graph<T>, p: &[Var], z: Var) -> Result<Var> {
        self.decoder.forward(g, p, z)
    }

    /// Latent states `K^i·E(v0)` for `i = 1..=n`; each `[B, e]`.
    pub fn latent_rollout(&self, g: &mut Graph<T>, p: &[Var], v0: Var, n: usize) -> Result<Vec<Var>> {
        if n == 0 {
            return Err(Error::InvalidArgument("rollout needs n ≥ 1".into()));
        }
        let kt = g.transpose(p[self.k.0])?;
        let mut z = self.encode(g, p, v0)?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            z = g.matmul(z, kt)?;
            out.push(z);
        }
        Ok(out)
    }

    /// Predictions `R(K^i·E(v0))` for `i = 1..=n`, stacked step-major into
    /// `[n·B, d]` (row `(i-1)·B + b`).
    pub fn rollout(&self, g: &mut Graph<T>, p: &[Var], v0: Var, n: usize) -> Result<Var> {
        let zs = self.latent_rollout(g, p, v0, n)?;
        let stacked = g.concat_rows(&zs)?;
        self.decode(g, p, stacked)
    }

    /// Single-trajectory convenience returning `n × d` values.
    pub fn eval_rollout(&self, v0: &[T], n: usize) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let x = g.constant_from(&[1, v0.len()], v0.to_vec())?;
        let y = self.rollout(&mut g, &p, x, n)?;
        Ok(g.value(y).to_vec())
    }

    /// ‖KKᵀ − I‖_F.
    pub fn unitarity_defect(&self) -> f64 {
        let e = self.encoding;
        let k = self.store.get(self.k).data();
        let mut s = 0.0;
        for i in 0..e {
            for j in 0..e {
                let dot: f64 = (0..e).map(|l| k[i * e + l].as_f64() * k[j * e + l].as_f64()).sum();
                let d = dot - if i == j { 1.0 } else { 0.0 };
                s += d * d;
            }
        }
        s.sqrt()
    }

    /// Largest magnitude outside the band (0 when the mask holds).
    pub fn off_band_max(&self) -> f64 {
        let e = self.encoding;
        let k = self.store.get(self.k).data();
        let mut m = 0.0f64;
        for i in 0..e {
            for j in 0..e {
                if !in_band(i, j) {
                    m = m.max(k[i * e + j].as_f64().abs());
                }
            }
        }
        m
    }
}

/// Architecture sizes; defaults follow the lab's standard configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub activation: Activation,
    /// DeepONet branch/trunk hidden width, hidden layer count and latent size.
    pub deeponet_hidden: usize,
    pub deeponet_depth: usize,
    pub deeponet_latent: usize,
    pub fno_width: usize,
    pub fno_layers: usize,
    pub fno_k_max: usize,
    pub koopman_hidden: usize,
    pub koopman_depth: usize,
    pub koopman_encoding: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            activation: Activation::Gelu,
            deeponet_hidden: 64,
            deeponet_depth: 3,
            deeponet_latent: 64,
            fno_width: 32,
            fno_layers: 4,
            fno_k_max: 16,
            koopman_hidden: 64,
            koopman_depth: 3,
            koopman_encoding: 16,
        }
    }
}

/// Input/output sizes a model must match.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    /// DeepONet sensors, FNO input channels, or Koopman state dimension.
    pub input: usize,
    /// DeepONet query dimension (unused otherwise).
    pub query: usize,
    /// Output components (FNO output channels).
    pub output: usize,
}

/// One of the three architectures.
#[derive(Clone, Debug, PartialEq)]
pub enum Model<T> {
    DeepONet(DeepONet<T>),
    Fno(Fno<T>),
    Koopman(KoopmanAutoencoder<T>),
}

impl<T: Scalar> Model<T> {
    pub fn new(kind: DatasetKind, cfg: &ModelConfig, dims: Dims, seed: u64) -> Result<Self> {
        let act = cfg.activation;
        Ok(match kind {
            DatasetKind::DeepONet => {
                let latent = cfg.deeponet_latent * dims.output;
                let b = hidden_widths(dims.input, cfg.deeponet_hidden, cfg.deeponet_depth, latent);
                let t = hidden_widths(dims.query, cfg.deeponet_hidden, cfg.deeponet_depth, latent);
                Model::DeepONet(DeepONet::new(&b, &t, dims.output, act, seed)?)
            }
            DatasetKind::Fno => Model::Fno(Fno::new(
                dims.input,
                dims.output,
                cfg.fno_width,
                cfg.fno_layers,
                cfg.fno_k_max,
                act,
                seed,
            )?),
            DatasetKind::Koopman => Model::Koopman(KoopmanAutoencoder::new(
                dims.input,
                cfg.koopman_hidden,
                cfg.koopman_depth,
                cfg.koopman_encoding,
                act,
                seed,
            )?),
        })
    }

    /// Adapts input scaling to a dataset; for DeepONet the trunk maps the
    /// dataset's query box onto [-1, 1]. Other architectures are unchanged.
    pub fn fit_inputs(&mut self, ds: &OperatorDataset<T>) -> Result<()> {
        if let Model::DeepONet(m) = self {
            let w = ds.queries.shape().get(1).copied().unwrap_or(1);
            let q = ds.queries.data();
            let range = (0..w)
                .map(|c| {
                    let (lo, hi) = q
                        .iter()
                        .skip(c)
                        .step_by(w)
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                            (lo.min(v.as_f64()), hi.max(v.as_f64()))
                        });
                    if hi > lo { (lo, hi) } else { (lo - 1.0, lo + 1.0) }
                })
                .collect();
            m.set_query_range(range)?;
        }
        Ok(())
    }

    pub fn kind(&self) -> DatasetKind {
        match self {
            Model::DeepONet(_) => DatasetKind::DeepONet,
            Model::Fno(_) => DatasetKind::Fno,
            Model::Koopman(_) => DatasetKind::Koopman,
        }
    }

    pub fn store(&self) -> &ParamStore<T> {
        match self {
            Model::DeepONet(m) => &m.store,
            Model::Fno(m) => &m.store,
            Model::Koopman(m) => &m.store,
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        match self {
            Model::DeepONet(m) => &mut m.store,
            Model::Fno(m) => &mut m.store,
            Model::Koopman(m) => &mut m.store,
        }
    }

    /// Re-establishes structural constraints after parameters change.
    pub fn after_update(&mut self) {
        if let Model::Koopman(m) = self {
            m.project_mask();
        }
    }

    /// Writes a checkpoint: sizes in the header, parameters as arrays.
    pub fn to_container(&self, cfg: &ModelConfig, dims: Dims) -> Container<T> {
        let mut c = Container::new();
        c.set("architecture", self.kind());
        c.set("activation", cfg.activation);
        c.set("precision", T::DTYPE);
        c.set("dims.input", dims.input);
        c.set("dims.query", dims.query);
        c.set("dims.output", dims.output);
        match self {
            Model::DeepONet(m) => {
                c.set("deeponet.hidden", cfg.deeponet_hidden);
                c.set("deeponet.depth", cfg.deeponet_depth);
                c.set("deeponet.latent", cfg.deeponet_latent);
                let ranges: Vec<String> = m.query_range.iter().map(|(lo, hi)| format!("{lo}:{hi}")).collect();
                c.set("deeponet.query_range", ranges.join(","));
            }
            Model::Fno(_) => {
                c.set("fno.width", cfg.fno_width);
                c.set("fno.layers", cfg.fno_layers);
                c.set("fno.k_max", cfg.fno_k_max);
            }
            Model::Koopman(_) => {
                c.set("koopman.hidden", cfg.koopman_hidden);
                c.set("koopman.depth", cfg.koopman_depth);
                c.set("koopman.encoding", cfg.koopman_encoding);
            }
        }
        for p in &self.store().params {
            c.push(p.name.clone(), p.value.clone());
        }
        c
    }

    /// Rebuilds the architecture from a checkpoint header and loads weights.
    pub fn from_container(c: &Container<T>) -> Result<(Self, ModelConfig, Dims)> {
        let kind: DatasetKind = c.get("architecture")?.parse()?;
        let mut cfg = ModelConfig {
            activation: c.get("activation")?.parse()?,
            ..ModelConfig::default()
        };
        let dims = Dims {
            input: c.parse("dims.input")?,
            query: c.parse("dims.query")?,
            output: c.parse("dims.output")?,
        };
        match kind {
            DatasetKind::DeepONet => {
                cfg.deeponet_hidden = c.parse("deeponet.hidden")?;
                cfg.deeponet_depth = c.parse("deeponet.depth")?;
                cfg.deeponet_latent = c.parse("deeponet.latent")?;
            }
            DatasetKind::Fno => {
                cfg.fno_width = c.parse("fno.width")?;
                cfg.fno_layers = c.parse("fno.layers")?;
                cfg.fno_k_max = c.parse("fno.k_max")?;
            }
            DatasetKind::Koopman => {
                cfg.koopman_hidden = c.parse("koopman.hidden")?;
                cfg.koopman_depth = c.parse("koopman.depth")?;
                cfg.koopman_encoding = c.parse("koopman.encoding")?;
            }
        }
        let mut model = Model::new(kind, &cfg, dims, 0)?;
        if let Model::DeepONet(m) = &mut model {
            let text = c.get("deeponet.query_range")?;
            let bad = || Error::Format(format!("bad deeponet.query_range `{text}`"));
            let mut range = Vec::new();
            for part in text.split(',').filter(|p| !p.is_empty()) {
                let (lo, hi) = part.split_once(':').ok_or_else(bad)?;
                range.push((lo.parse().map_err(|_| bad())?, hi.parse().map_err(|_| bad())?));
            }
            m.set_query_range(range)?;
        }
        if c.arrays.len() != model.store().len() {
            return Err(Error::Format(format!(
                "checkpoint has {} arrays, architecture needs {}",
                c.arrays.len(),
                model.store().len()
            )));
        }
        for (p, (name, t)) in model.store_mut().params.iter_mut().zip(&c.arrays) {
            if &p.name != name || p.value.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "checkpoint array `{name}` {:?} does not match `{}` {:?}",
                    t.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok((model, cfg, dims))
    }

    pub fn save(&self, cfg: &ModelConfig, dims: Dims, path: &Path) -> Result<()> {
        self.to_container(cfg, dims).save(path)
    }

    pub fn load(path: &Path) -> Result<(Self, ModelConfig, Dims)> {
        Self::from_container(&Container::load(path)?)
    }
}
