//! Losses, optimizer, and the training techniques under study: weight-entry
//! dropout, stochastic weight averaging, the learning-rate finder and
//! gradient clipping.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{gather_rows, DatasetKind, OperatorDataset};
use crate::dynamics::derive_seed;
use crate::error::{Error, Result};
use crate::models::{KoopmanAutoencoder, Model, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

/// Mean of squared entrywise differences.
pub fn mse_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    if g.shape(pred) != g.shape(target) {
        return Err(Error::shape(
            "mse_loss",
            format!("{:?} vs {:?}", g.shape(pred), g.shape(target)),
        ));
    }
    let d = g.sub(pred, target)?;
    let sq = g.mul(d, d)?;
    g.mean(sq)
}

/// The three terms of the Koopman objective, each a `[1]` node.
#[derive(Clone, Copy, Debug)]
pub struct KoopmanLoss {
    pub total: Var,
    pub prediction: Var,
    pub reconstruction: Var,
    pub unitarity: Var,
    /// Rollout `[n·B, d]` and its step-major target.
    pub rollout: Var,
    pub future: Var,
}

/// `(1/n)Σ_{i=1..n}‖R Kⁱ E(v₀) − vᵢ‖² + (1/n)Σ_{i=0..n}‖R E(vᵢ) − vᵢ‖² + ‖KKᵀ − I‖²`
/// averaged over a batch. `trajs` is `[B, n+1, d]`, row-major.
pub fn koopman_loss<T: Scalar>(
    g: &mut Graph<T>,
    model: &KoopmanAutoencoder<T>,
    p: &[Var],
    trajs: &[T],
    batch: usize,
) -> Result<KoopmanLoss> {
    let d = model.state_dim();
    if batch == 0 || trajs.len() % (batch * d) != 0 {
        return Err(Error::shape("koopman_loss", format!("{} values for {batch} trajectories of dim {d}", trajs.len())));
    }
    let steps = trajs.len() / (batch * d);
    if steps < 2 {
        return Err(Error::InvalidArgument("koopman_loss needs n ≥ 1".into()));
    }
    let n = steps - 1;
    // step-major copies: row i·B + b holds trajectory b at step i
    let mut by_step = Vec::with_capacity(trajs.len());
    for i in 0..steps {
        for b in 0..batch {
            let at = (b * steps + i) * d;
            by_step.extend_from_slice(&trajs[at..at + d]);
        }
    }
    let v0 = g.constant_from(&[batch, d], by_step[..batch * d].to_vec())?;
    let future = g.constant_from(&[n * batch, d], by_step[batch * d..].to_vec())?;
    let all = g.constant_from(&[steps * batch, d], by_step)?;
    let scale = T::one() / (T::from_usize_lossy(n) * T::from_usize_lossy(batch));

    let pred = model.rollout(g, p, v0, n)?;
    let diff = g.sub(pred, future)?;
    let sq = g.sq_norm(diff)?;
    let prediction = g.scale(sq, scale)?;

    let z = model.encode(g, p, all)?;
    let recon = model.decode(g, p, z)?;
    let diff = g.sub(recon, all)?;
    let sq = g.sq_norm(diff)?;
    let reconstruction = g.scale(sq, scale)?;

    let k = p[model.k.0];
    let kt = g.transpose(k)?;
    let kkt = g.matmul(k, kt)?;
    let eye = g.constant(&Tensor::eye(model.encoding));
    let defect = g.sub(kkt, eye)?;
    let unitarity = g.sq_norm(defect)?;

    let s = g.add(prediction, reconstruction)?;
    let total = g.add(s, unitarity)?;
    Ok(KoopmanLoss {
        total,
        prediction,
        reconstruction,
        unitarity,
        rollout: pred,
        future,
    })
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = store.params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Vec<T>], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() || grads.iter().zip(&self.m).any(|(g, m)| g.len() != m.len()) {
            return Err(Error::shape("adam_step", "gradients do not match optimizer state"));
        }
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { op: "adam_step" });
        }
        self.t += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        let (lr, eps) = (T::lit(lr), T::lit(self.eps));
        for (i, p) in store.params.iter_mut().enumerate() {
            let w = p.value.data_mut();
            for j in 0..w.len() {
                let gj = grads[i][j];
                let m = b1 * self.m[i][j] + (T::one() - b1) * gj;
                let v = b2 * self.v[i][j] + (T::one() - b2) * gj * gj;
                self.m[i][j] = m;
                self.v[i][j] = v;
                w[j] = w[j] - lr * (m / c1) / ((v / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Keep-mask for weight-entry dropout: each entry is 0 with probability
/// `p`, else `1/(1-p)`.
pub fn dropout_mask<T: Scalar>(len: usize, p: f64, rng: &mut ChaCha8Rng) -> Result<Vec<T>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("dropout rate {p} must lie in [0, 1)")));
    }
    let keep = T::lit(1.0 / (1.0 - p));
    Ok((0..len)
        .map(|_| if p > 0.0 && rng.gen::<f64>() < p { T::zero() } else { keep })
        .collect())
}

/// A copy of `w` with entries zeroed at rate `p` and survivors rescaled.
pub fn apply_weight_dropout<T: Scalar>(w: &Tensor<T>, p: f64, rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
    if p == 0.0 {
        return Ok(w.clone());
    }
    let mask = dropout_mask::<T>(w.len(), p, rng)?;
    let data = w.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
    Tensor::new(w.shape().to_vec(), data)
}

/// Parameter binding for one training step.
pub struct Bound {
    /// Trainable leaves, one per parameter; gradients are read here.
    pub leaves: Vec<Var>,
    /// What the forward pass uses: the leaf, or the leaf times a dropout mask.
    pub used: Vec<Var>,
}

/// Binds `store`, masking droppable parameters when `p > 0`.
pub fn bind_with_dropout<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, p: f64, rng: &mut ChaCha8Rng) -> Result<Bound> {
    let leaves = store.bind(g);
    let mut used = leaves.clone();
    if p > 0.0 {
        for (i, param) in store.params.iter().enumerate() {
            if param.droppable {
                let mask = dropout_mask::<T>(param.value.len(), p, rng)?;
                let m = g.constant_from(param.value.shape(), mask)?;
                used[i] = g.mul(leaves[i], m)?;
            }
        }
    } else {
        dropout_mask::<T>(0, p, rng)?;
    }
    Ok(Bound { leaves, used })
}

/// Neumaier-compensated running mean of parameter snapshots.
#[derive(Clone, Debug, Default)]
pub struct SwaState {
    sum: Vec<f64>,
    comp: Vec<f64>,
    count: usize,
}

impl SwaState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn update<T: Scalar>(&mut self, snapshot: &[T]) -> Result<()> {
        if self.count == 0 {
            self.sum = vec![0.0; snapshot.len()];
            self.comp = vec![0.0; snapshot.len()];
        } else if snapshot.len() != self.sum.len() {
            return Err(Error::shape("swa_update", format!("{} values, expected {}", snapshot.len(), self.sum.len())));
        }
        for (i, &x) in snapshot.iter().enumerate() {
            let x = x.as_f64();
            let s = self.sum[i];
            let t = s + x;
            if s.abs() >= x.abs() {
                self.comp[i] += (s - t) + x;
            } else {
                self.comp[i] += (x - t) + s;
            }
            self.sum[i] = t;
        }
        self.count += 1;
        Ok(())
    }

    /// The arithmetic mean of all snapshots.
    pub fn finalize<T: Scalar>(&self) -> Result<Vec<T>> {
        if self.count == 0 {
            return Err(Error::InvalidArgument("no snapshots to average".into()));
        }
        let n = self.count as f64;
        Ok(self
            .sum
            .iter()
            .zip(&self.comp)
            .map(|(s, c)| T::lit((s + c) / n))
            .collect())
    }
}

/// Global ℓ² norm of a gradient set.
pub fn grad_norm<T: Scalar>(grads: &[Vec<T>]) -> f64 {
    grads
        .iter()
        .flatten()
        .map(|g| g.as_f64() * g.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their global norm is at most `threshold`; returns
/// the norm before clipping. Norms within rounding of the threshold are left
/// alone, so clipping is idempotent.
pub fn clip_gradients<T: Scalar>(grads: &mut [Vec<T>], threshold: f64) -> Result<f64> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!("clip threshold {threshold} must be positive")));
    }
    let norm = grad_norm(grads);
    if norm > threshold * (1.0 + 64.0 * T::epsilon().as_f64()) {
        let s = T::lit(threshold / norm);
        for g in grads.iter_mut().flatten() {
            *g = *g * s;
        }
    }
    Ok(norm)
}

/// Outcome of a learning-rate range test.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSweep {
    pub lrs: Vec<f64>,
    pub losses: Vec<f64>,
    pub smoothed: Vec<f64>,
    /// Geometric midpoint of the interval with the steepest smoothed descent
    /// per unit `ln(lr)`.
    pub suggestion: f64,
}

impl LrSweep {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,lr,loss,smoothed\n");
        for i in 0..self.lrs.len() {
            s.push_str(&format!("{i},{},{},{}\n", self.lrs[i], self.losses[i], self.smoothed[i]));
        }
        s
    }
}

/// Exponential learning-rate sweep. `step(lr)` performs one update and
/// returns the loss it measured. Losses are smoothed with β = 0.98 (bias
/// corrected); the sweep stops once the smoothed loss exceeds four times its
/// running minimum or a loss is non-finite.
pub fn lr_sweep(lr_min: f64, lr_max: f64, n_steps: usize, mut step: impl FnMut(f64) -> Result<f64>) -> Result<LrSweep> {
    if !(lr_min > 0.0 && lr_max > lr_min) || n_steps < 3 {
        return Err(Error::InvalidArgument(format!(
            "need 0 < lr_min < lr_max and at least 3 steps, got {lr_min}, {lr_max}, {n_steps}"
        )));
    }
    const BETA: f64 = 0.98;
    let ratio = (lr_max / lr_min).ln();
    let (mut lrs, mut losses, mut smoothed) = (Vec::new(), Vec::new(), Vec::new());
    let mut avg = 0.0;
    let mut best = f64::INFINITY;
    for k in 0..n_steps {
        let lr = lr_min * (ratio * k as f64 / (n_steps - 1) as f64).exp();
        let loss = match step(lr) {
            Ok(l) if l.is_finite() => l,
            Ok(_) => break,
            Err(e) if e.is_numeric() => break,
            Err(e) => return Err(e),
        };
        avg = BETA * avg + (1.0 - BETA) * loss;
        let s = avg / (1.0 - BETA.powi(k as i32 + 1));
        lrs.push(lr);
        losses.push(loss);
        smoothed.push(s);
        best = best.min(s);
        if s > 4.0 * best {
            break;
        }
    }
    if lrs.is_empty() {
        return Err(Error::Training {
            epoch: 0,
            batch: 0,
            source: Box::new(Error::NonFinite { op: "lr_finder" }),
        });
    }
    let mut steepest: Option<(usize, f64)> = None;
    for i in 1..lrs.len() {
        let slope = (smoothed[i] - smoothed[i - 1]) / (lrs[i] / lrs[i - 1]).ln();
        if slope < 0.0 && steepest.map_or(true, |(_, s)| slope < s) {
            steepest = Some((i, slope));
        }
    }
    let (i, _) = steepest.ok_or_else(|| Error::InvalidArgument("loss never decreased during the sweep".into()))?;
    Ok(LrSweep {
        suggestion: (lrs[i] * lrs[i - 1]).sqrt(),
        lrs,
        losses,
        smoothed,
    })
}

/// SWA tail: the last `tail_fraction` of epochs run at `swa_lr`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwaConfig {
    pub swa_lr: f64,
    #[serde(default = "default_tail")]
    pub tail_fraction: f64,
}

fn default_tail() -> f64 {
    0.25
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub dropout: f64,
    pub swa: Option<SwaConfig>,
    /// Gradient-norm threshold; Koopman models default to 1.0.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            base_lr: 1e-3,
            dropout: 0.0,
            swa: None,
            clip_norm: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.base_lr > 0.0) {
            return Err(Error::InvalidArgument(format!("base_lr {} must be positive", self.base_lr)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} must lie in [0, 1)", self.dropout)));
        }
        if let Some(s) = self.swa {
            if !(s.swa_lr > 0.0) || !(s.tail_fraction > 0.0 && s.tail_fraction <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "swa needs swa_lr > 0 and tail_fraction in (0, 1], got {} and {}",
                    s.swa_lr, s.tail_fraction
                )));
            }
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument(format!("clip_norm {c} must be positive")));
            }
        }
        Ok(())
    }

    fn clip_for(&self, kind: DatasetKind) -> Option<f64> {
        match (self.clip_norm, kind) {
            (Some(c), _) => Some(c),
            (None, DatasetKind::Koopman) => Some(1.0),
            (None, _) => None,
        }
    }

    /// Epochs run at the SWA learning rate.
    pub fn swa_epochs(&self) -> usize {
        self.swa
            .map(|s| ((s.tail_fraction * self.epochs as f64).round() as usize).clamp(1, self.epochs))
            .unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub swa_active: bool,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    /// `epoch,train_loss,val_loss,lr,swa_active`; wall time is left out so
    /// equal runs give equal files.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,lr,swa_active\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{:e},{:e},{:e},{}\n",
                r.epoch, r.train_loss, r.val_loss, r.lr, r.swa_active
            ));
        }
        s
    }

    pub fn wall_seconds(&self) -> f64 {
        self.records.iter().map(|r| r.wall_seconds).sum()
    }
}

/// Held-out error of a model on some dataset rows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    /// Mean squared prediction error over every predicted value.
    pub mse: f64,
    /// Mean over examples of ‖pred − true‖ / ‖true‖.
    pub rel_l2: f64,
}

/// Training examples drawn from `rows`: rows themselves, or (row, time)
/// pairs encoded as `row·T + t` for FNO.
pub fn examples_of<T: Scalar>(ds: &OperatorDataset<T>, rows: &[usize]) -> Vec<usize> {
    match ds.kind {
        DatasetKind::Fno => {
            let nt = ds.n_queries();
            rows.iter().flat_map(|&r| (0..nt).map(move |t| r * nt + t)).collect()
        }
        _ => rows.to_vec(),
    }
}

/// Predictions and targets for one batch, flattened in matching order.
struct Batch<T> {
    pred: Vec<Var>,
    target: Vec<Var>,
    /// Per-example value count, for relative errors.
    example_len: usize,
    /// Training objective.
    loss: Var,
    _marker: std::marker::PhantomData<T>,
}

fn fno_channels<T: Scalar>(ds: &OperatorDataset<T>, examples: &[usize]) -> (Vec<T>, Vec<T>) {
    let n = ds.input_width();
    let nt = ds.n_queries();
    // time enters as the fraction of the stored horizon
    let horizon = ds.queries.data().iter().fold(T::zero(), |m, &t| m.max(t.abs()));
    let scale = if horizon > T::zero() { T::one() / horizon } else { T::one() };
    let mut x = Vec::with_capacity(examples.len() * 2 * n);
    let mut y = Vec::with_capacity(examples.len() * n);
    for &e in examples {
        let (r, t) = (e / nt, e % nt);
        x.extend_from_slice(&ds.inputs.data()[r * n..(r + 1) * n]);
        x.extend(std::iter::repeat(ds.queries.data()[t] * scale).take(n));
        let at = (r * nt + t) * n;
        y.extend_from_slice(&ds.targets.data()[at..at + n]);
    }
    (x, y)
}

fn forward_batch<T: Scalar>(
    g: &mut Graph<T>,
    model: &Model<T>,
    p: &[Var],
    ds: &OperatorDataset<T>,
    examples: &[usize],
) -> Result<Batch<T>> {
    let b = examples.len();
    match model {
        Model::DeepONet(m) => {
            let sensors = g.constant_from(&[b, ds.input_width()], gather_rows(&ds.inputs, examples))?;
            let queries = g.constant(&ds.queries);
            let outs = m.forward(g, p, sensors, queries)?;
            let q = ds.n_queries();
            let d = ds.target_width();
            let rows = gather_rows(&ds.targets, examples);
            let mut target = Vec::with_capacity(d);
            let mut total: Option<Var> = None;
            for (j, &o) in outs.iter().enumerate() {
                let comp: Vec<T> = rows.iter().skip(j).step_by(d).copied().collect();
                let t = g.constant_from(&[b, q], comp)?;
                let l = mse_loss(g, o, t)?;
                total = Some(match total {
                    Some(acc) => g.add(acc, l)?,
                    None => l,
                });
                target.push(t);
            }
            let loss = g.scale(total.expect("at least one output"), T::one() / T::from_usize_lossy(d))?;
            Ok(Batch {
                pred: outs,
                target,
                example_len: q * d,
                loss,
                _marker: Default::default(),
            })
        }
        Model::Fno(m) => {
            let n = ds.input_width();
            let (x, y) = fno_channels(ds, examples);
            let x = g.constant_from(&[b, 2, n], x)?;
            let t = g.constant_from(&[b, 1, n], y)?;
            let out = m.forward(g, p, x)?;
            let loss = mse_loss(g, out, t)?;
            Ok(Batch {
                pred: vec![out],
                target: vec![t],
                example_len: n,
                loss,
                _marker: Default::default(),
            })
        }
        Model::Koopman(m) => {
            let trajs = gather_rows(&ds.targets, examples);
            let parts = koopman_loss(g, m, p, &trajs, b)?;
            let d = m.state_dim();
            let steps = ds.n_queries();
            Ok(Batch {
                pred: vec![parts.rollout],
                target: vec![parts.future],
                example_len: (steps - 1) * d,
                loss: parts.total,
                _marker: Default::default(),
            })
        }
    }
}

/// Per-example squared error and squared target norm, in example order.
fn per_example<T: Scalar>(g: &Graph<T>, batch: &Batch<T>, model: &Model<T>, b: usize) -> Vec<(f64, f64)> {
    let mut acc = vec![(0.0, 0.0); b];
    for (&p, &t) in batch.pred.iter().zip(&batch.target) {
        let (pv, tv) = (g.value(p), g.value(t));
        let per_row = pv.len() / b;
        for (i, (x, y)) in pv.iter().zip(tv).enumerate() {
            // Koopman rollouts are step-major; everything else is example-major
            let e = match model {
                Model::Koopman(m) => (i / m.state_dim()) % b,
                _ => i / per_row,
            };
            let (x, y) = (x.as_f64(), y.as_f64());
            acc[e].0 += (x - y) * (x - y);
            acc[e].1 += y * y;
        }
    }
    acc
}

/// Test-style error of `model` on dataset `rows`, without dropout.
pub fn evaluate<T: Scalar>(model: &Model<T>, ds: &OperatorDataset<T>, rows: &[usize]) -> Result<Metrics> {
    check_kind(model, ds)?;
    let examples = examples_of(ds, rows);
    if examples.is_empty() {
        return Err(Error::Data("no rows to evaluate".into()));
    }
    let (mut sq, mut count, mut rel, mut n_rel) = (0.0, 0usize, 0.0, 0usize);
    for chunk in examples.chunks(64) {
        let mut g = Graph::new();
        let p = model.store().bind_frozen(&mut g);
        let batch = forward_batch(&mut g, model, &p, ds, chunk)?;
        for (e, t) in per_example(&g, &batch, model, chunk.len()) {
            sq += e;
            count += batch.example_len;
            if t > 0.0 {
                rel += (e / t).sqrt();
                n_rel += 1;
            }
        }
    }
    Ok(Metrics {
        mse: sq / count as f64,
        rel_l2: if n_rel > 0 { rel / n_rel as f64 } else { 0.0 },
    })
}

fn check_kind<T: Scalar>(model: &Model<T>, ds: &OperatorDataset<T>) -> Result<()> {
    if model.kind() != ds.kind {
        return Err(Error::InvalidArgument(format!(
            "{} model cannot train on a {} dataset",
            model.kind(),
            ds.kind
        )));
    }
    Ok(())
}

/// One forward/backward pass; returns the loss and per-parameter gradients.
pub fn loss_and_grads<T: Scalar>(
    model: &Model<T>,
    ds: &OperatorDataset<T>,
    examples: &[usize],
    dropout: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Vec<T>>)> {
    let mut g = Graph::new();
    let bound = bind_with_dropout(&mut g, model.store(), dropout, rng)?;
    let batch = forward_batch(&mut g, model, &bound.used, ds, examples)?;
    let loss = g.item(batch.loss).as_f64();
    g.backward(batch.loss)?;
    let grads = bound
        .leaves
        .iter()
        .zip(&model.store().params)
        .map(|(&v, p)| g.grad(v).map_or_else(|| vec![T::zero(); p.value.len()], <[T]>::to_vec))
        .collect();
    Ok((loss, grads))
}

/// Trains in place and returns the per-epoch history. Deterministic given
/// the model's initial parameters and `cfg.seed`.
pub fn train<T: Scalar>(model: &mut Model<T>, ds: &OperatorDataset<T>, cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    check_kind(model, ds)?;
    let mut examples = examples_of(ds, &ds.split.train);
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0));
    let mut drop_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let mut adam = Adam::new(model.store());
    let clip = cfg.clip_for(model.kind());
    let swa_start = cfg.epochs - cfg.swa_epochs();
    let mut swa = SwaState::new();
    let mut history = History::default();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let swa_active = cfg.swa.is_some() && epoch > swa_start;
        let lr = match cfg.swa {
            Some(s) if swa_active => s.swa_lr,
            _ => cfg.base_lr,
        };
        examples.shuffle(&mut order_rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for (bi, chunk) in examples.chunks(cfg.batch_size).enumerate() {
            let wrap = |e: Error| Error::Training {
                epoch,
                batch: bi,
                source: Box::new(e),
            };
            let (loss, mut grads) = loss_and_grads(model, ds, chunk, cfg.dropout, &mut drop_rng).map_err(wrap)?;
            if let Some(c) = clip {
                clip_gradients(&mut grads, c)?;
            }
            adam.step(model.store_mut(), &grads, lr).map_err(wrap)?;
            model.after_update();
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        if swa_active {
            swa.update(&model.store().flatten())?;
        }
        if epoch == cfg.epochs && swa.count() > 0 {
            let avg = swa.finalize::<T>()?;
            model.store_mut().assign_flat(&avg)?;
            model.after_update();
        }
        let val = evaluate(model, ds, &ds.split.val).map_err(|e| Error::Training {
            epoch,
            batch: 0,
            source: Box::new(e),
        })?;
        history.records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_loss: val.mse,
            lr,
            swa_active,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(history)
}

/// Range test on a copy of `model`: one Adam step per mini-batch at
/// exponentially increasing learning rates.
pub fn lr_finder<T: Scalar>(
    model: &Model<T>,
    ds: &OperatorDataset<T>,
    batch_size: usize,
    lr_min: f64,
    lr_max: f64,
    n_steps: usize,
    seed: u64,
) -> Result<LrSweep> {
    check_kind(model, ds)?;
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    let mut m = model.clone();
    let mut adam = Adam::new(m.store());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = examples_of(ds, &ds.split.train);
    let mut cursor = examples.len();
    lr_sweep(lr_min, lr_max, n_steps, |lr| {
        if cursor + batch_size > examples.len() {
            examples.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + batch_size).min(examples.len());
        let chunk = &examples[cursor..end];
        cursor = end;
        let (loss, grads) = loss_and_grads(&m, ds, chunk, 0.0, &mut rng)?;
        adam.step(m.store_mut(), &grads, lr)?;
        m.after_update();
        Ok(loss)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        let mut g = Graph::<f64>::new();
        let a = g.constant_from(&[2], vec![0.0, 0.0]).unwrap();
        let b = g.constant_from(&[2], vec![3.0, 4.0]).unwrap();
        let l = mse_loss(&mut g, a, b).unwrap();
        assert_eq!(g.item(l), 12.5);
        let l = mse_loss(&mut g, b, b).unwrap();
        assert_eq!(g.item(l), 0.0);
        let c = g.constant_from(&[3], vec![0.0; 3]).unwrap();
        assert!(mse_loss(&mut g, a, c).is_err());
    }

    #[test]
    fn clip_examples() {
        let mut g = vec![vec![3.0f64, 4.0]];
        assert_eq!(clip_gradients(&mut g, 1.0).unwrap(), 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[0][1] - 0.8).abs() < 1e-15);
        let mut small = vec![vec![0.1f64, 0.2]];
        clip_gradients(&mut small, 1.0).unwrap();
        assert_eq!(small, vec![vec![0.1, 0.2]]);
        assert!(clip_gradients(&mut small, 0.0).is_err());
    }

    #[test]
    fn swa_examples() {
        let mut s = SwaState::new();
        assert!(s.finalize::<f64>().is_err());
        s.update(&[1.0f64, -2.0]).unwrap();
        assert_eq!(s.finalize::<f64>().unwrap(), vec![1.0, -2.0]);
        s.update(&[-1.0f64, 2.0]).unwrap();
        assert_eq!(s.finalize::<f64>().unwrap(), vec![0.0, 0.0]);
        let mut s = SwaState::new();
        for v in [[1.0f64, 2.0], [2.0, 4.0], [6.0, 0.0]] {
            s.update(&v).unwrap();
        }
        assert_eq!(s.finalize::<f64>().unwrap(), vec![3.0, 2.0]);
        assert!(s.update(&[1.0f64]).is_err());
    }

    #[test]
    fn dropout_rate_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(dropout_mask::<f64>(4, 1.0, &mut rng).is_err());
        assert!(dropout_mask::<f64>(4, -0.1, &mut rng).is_err());
        let w = Tensor::new(vec![2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(apply_weight_dropout(&w, 0.0, &mut rng).unwrap(), w);
    }

    #[test]
    fn zero_epochs_rejected() {
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { dropout: 1.0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn swa_tail_length() {
        let cfg = TrainConfig {
            epochs: 40,
            swa: Some(SwaConfig { swa_lr: 1e-2, tail_fraction: 0.25 }),
            ..TrainConfig::default()
        };
        assert_eq!(cfg.swa_epochs(), 10);
        assert_eq!(TrainConfig::default().swa_epochs(), 0);
    }
}
