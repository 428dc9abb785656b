//! Adam optimization with inverse-time learning-rate decay, the three
//! explicit regularizers, the minibatch loop, and early stopping at the
//! first validation-loss minimum.

use std::io::Write;

use crate::dataset::{mse, LossScale, SplitDataset};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{
    backward_from_cache, forward_batch, init_glorot, path_norm, predict_batch, zip4_mut,
    Architecture, Block, Params,
};
use crate::rng::Rng;

/// Stream labels keeping initialization and epoch shuffling independent
/// of each other and of data generation.
const INIT_STREAM: u64 = 0x696e_6974; // "init"
const SHUFFLE_STREAM: u64 = 0x7368_7566; // "shuf"

/// Explicit regularization added to the training objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Regularizer {
    None,
    L1(f64),
    L2(f64),
    PathNorm(f64),
}

impl Regularizer {
    pub fn tag(&self) -> &'static str {
        match self {
            Regularizer::None => "none",
            Regularizer::L1(_) => "l1",
            Regularizer::L2(_) => "l2",
            Regularizer::PathNorm(_) => "path",
        }
    }

    pub fn lambda(&self) -> f64 {
        match self {
            Regularizer::None => 0.0,
            Regularizer::L1(l) | Regularizer::L2(l) | Regularizer::PathNorm(l) => *l,
        }
    }

    pub fn from_tag(tag: &str, lambda: f64) -> Result<Self> {
        if lambda < 0.0 {
            return Err(Error::Parameter("lambda must be >= 0".into()));
        }
        match tag {
            "none" => Ok(Regularizer::None),
            "l1" => Ok(Regularizer::L1(lambda)),
            "l2" => Ok(Regularizer::L2(lambda)),
            "path" => Ok(Regularizer::PathNorm(lambda)),
            _ => Err(Error::Parameter(format!("unknown regularizer '{tag}'"))),
        }
    }
}

#[inline]
fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Penalty value and its (sub)gradient.
///
/// L1 and L2 run over weight entries only (biases excluded); the path
/// norm involves no biases by construction. Subgradients take
/// `sign(0) = 0`, so exact zeros stay put.
pub fn penalty_and_grad(params: &Params, arch: &Architecture, reg: Regularizer) -> (f64, Params) {
    let mut grad = Params::zeros(arch);
    match reg {
        Regularizer::None => (0.0, grad),
        Regularizer::L1(lambda) => {
            let mut sum = 0.0;
            params.for_each_weight(|w| sum += w.abs());
            fill_weight_grad(&mut grad, params, |w| lambda * sgn(w));
            (lambda * sum, grad)
        }
        Regularizer::L2(lambda) => {
            let mut sum = 0.0;
            params.for_each_weight(|w| sum += w * w);
            fill_weight_grad(&mut grad, params, |w| 2.0 * lambda * w);
            (lambda * sum, grad)
        }
        Regularizer::PathNorm(lambda) => {
            let value = path_norm(params, arch).expect("checked params");
            path_norm_grad(params, arch, lambda, &mut grad);
            (lambda * value, grad)
        }
    }
}

fn fill_weight_grad(grad: &mut Params, params: &Params, f: impl Fn(f64) -> f64) {
    match (grad, params) {
        (Params::Global(g), Params::Global(p)) => {
            map_into(&mut g.w1, &p.w1, &f);
            map_into_vec(&mut g.w3, &p.w3, &f);
            map_into(&mut g.w2, &p.w2, &f);
        }
        (Params::LocallyConnected(gs), Params::LocallyConnected(ps)) => {
            for (g, p) in gs.iter_mut().zip(ps) {
                map_into_vec(&mut g.w1, &p.w1, &f);
                map_into(&mut g.w2, &p.w2, &f);
                map_into_vec(&mut g.w3, &p.w3, &f);
            }
        }
        (Params::Local(g), Params::Local(p)) => {
            map_into_vec(&mut g.w1, &p.w1, &f);
            map_into(&mut g.w2, &p.w2, &f);
            map_into_vec(&mut g.w3, &p.w3, &f);
        }
        _ => unreachable!("grad allocated from the same architecture"),
    }
}

fn map_into(dst: &mut Matrix, src: &Matrix, f: &impl Fn(f64) -> f64) {
    for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d = f(s);
    }
}

fn map_into_vec(dst: &mut [f64], src: &[f64], f: &impl Fn(f64) -> f64) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = f(s);
    }
}

/// Gradient of `lambda * path_norm` through the product rule, written on
/// the native layout (the dense view is never materialized).
fn path_norm_grad(params: &Params, arch: &Architecture, lambda: f64, grad: &mut Params) {
    let d = arch.d as f64;
    match (params, grad) {
        (Params::Global(p), Params::Global(g)) => {
            let h = p.w3.len();
            // u[j] = Σ_k |w2[k,j]||w3[k]|, r[j] = Σ_i |w1[j,i]|
            let mut u = vec![0.0; h];
            for k in 0..h {
                let wk = p.w3[k].abs();
                for (uv, &w) in u.iter_mut().zip(p.w2.row(k)) {
                    *uv += w.abs() * wk;
                }
            }
            let r: Vec<f64> = (0..h)
                .map(|j| p.w1.row(j).iter().map(|w| w.abs()).sum())
                .collect();
            for j in 0..h {
                let uj = lambda * u[j] / d;
                for (gv, &w) in g.w1.row_mut(j).iter_mut().zip(p.w1.row(j)) {
                    *gv = sgn(w) * uj;
                }
            }
            for k in 0..h {
                let wk = lambda * p.w3[k].abs() / d;
                let grow = g.w2.row_mut(k);
                for (j, (&w, &rj)) in p.w2.row(k).iter().zip(&r).enumerate() {
                    grow[j] = sgn(w) * wk * rj;
                }
                let reach: f64 = p.w2.row(k).iter().zip(&r).map(|(&w, &rj)| w.abs() * rj).sum();
                g.w3[k] = sgn(p.w3[k]) * lambda * reach / d;
            }
        }
        (Params::LocallyConnected(ps), Params::LocallyConnected(gs)) => {
            for (p, g) in ps.iter().zip(gs.iter_mut()) {
                block_path_norm_grad(p, lambda / d, g);
            }
        }
        (Params::Local(p), Params::Local(g)) => {
            // d identical blocks averaged by 1/d: the factors cancel
            block_path_norm_grad(p, lambda, g);
        }
        _ => unreachable!(),
    }
}

fn block_path_norm_grad(block: &Block, scale: f64, grad: &mut Block) {
    let alpha = block.w1.len();
    let mut u = vec![0.0; alpha];
    for k in 0..alpha {
        let wk = block.w3[k].abs();
        for (uv, &w) in u.iter_mut().zip(block.w2.row(k)) {
            *uv += w.abs() * wk;
        }
    }
    for j in 0..alpha {
        grad.w1[j] = sgn(block.w1[j]) * scale * u[j];
    }
    for k in 0..alpha {
        let wk = block.w3[k].abs();
        let grow = grad.w2.row_mut(k);
        for (j, &w) in block.w2.row(k).iter().enumerate() {
            grow[j] = sgn(w) * scale * wk * block.w1[j].abs();
        }
        let reach: f64 = block
            .w2
            .row(k)
            .iter()
            .zip(&block.w1)
            .map(|(&w, &w1)| w.abs() * w1.abs())
            .sum();
        grad.w3[k] = sgn(block.w3[k]) * scale * reach;
    }
}

/// Adam optimizer state with bias-corrected moments and inverse-time
/// learning-rate decay `lr_t = lr / (1 + decay * t)`.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
    pub decay: f64,
}

impl AdamState {
    pub fn new(arch: &Architecture, lr: f64, decay: f64) -> Self {
        AdamState {
            m: Params::zeros(arch),
            v: Params::zeros(arch),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
            decay,
        }
    }
}

/// One Adam update; advances the step counter and mutates parameters and
/// moments in place.
pub fn adam_step(state: &mut AdamState, params: &mut Params, grad: &Params) {
    state.t += 1;
    let t = state.t;
    let lr_t = state.lr / (1.0 + state.decay * t as f64);
    let (b1, b2) = (state.beta1, state.beta2);
    let m_corr = 1.0 - b1.powi(t as i32);
    let v_corr = 1.0 - b2.powi(t as i32);
    let eps = state.eps_hat;
    zip4_mut(params, &mut state.m, &mut state.v, grad, |p, m, v, g| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / m_corr;
        let v_hat = *v / v_corr;
        *p -= lr_t * m_hat / (v_hat.sqrt() + eps);
    });
}

/// How minibatch sizes are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchPolicy {
    /// batch = floor((n_train + n_val) / divisor), at least 1.
    FixedRatio { divisor: usize },
    /// Constant batch size regardless of the sample count.
    FixedSize { size: usize },
}

impl Default for BatchPolicy {
    fn default() -> Self {
        BatchPolicy::FixedRatio { divisor: 100 }
    }
}

impl BatchPolicy {
    pub fn batch_size(&self, n_train: usize, n_val: usize) -> usize {
        match *self {
            BatchPolicy::FixedRatio { divisor } => ((n_train + n_val) / divisor).max(1),
            BatchPolicy::FixedSize { size } => size.max(1),
        }
    }

    pub fn tag(&self) -> String {
        match *self {
            BatchPolicy::FixedRatio { divisor } => format!("ratio:{divisor}"),
            BatchPolicy::FixedSize { size } => format!("size:{size}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let (kind, num) = s
            .split_once(':')
            .ok_or_else(|| Error::Parameter(format!("bad batch policy '{s}'")))?;
        let n: usize = num
            .parse()
            .map_err(|_| Error::Parameter(format!("bad batch policy '{s}'")))?;
        match kind {
            "ratio" => Ok(BatchPolicy::FixedRatio { divisor: n.max(1) }),
            "size" => Ok(BatchPolicy::FixedSize { size: n.max(1) }),
            _ => Err(Error::Parameter(format!("bad batch policy '{s}'"))),
        }
    }
}

/// Everything needed for a deterministic training run.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_policy: BatchPolicy,
    pub regularizer: Regularizer,
    pub lr: f64,
    pub decay: f64,
    pub seed: u64,
    pub record_history: bool,
    pub record_path_norm: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            batch_policy: BatchPolicy::default(),
            regularizer: Regularizer::None,
            lr: 0.01,
            decay: 0.0,
            seed: 0,
            record_history: false,
            record_path_norm: false,
        }
    }
}

/// Per-epoch record (epochs are 0-indexed).
#[derive(Clone, Copy, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the minibatch scaled MSEs seen during the epoch.
    pub train_mse_scaled: f64,
    /// Full-pass scaled MSE on the validation split after the epoch.
    pub val_mse_scaled: f64,
    pub path_norm: Option<f64>,
}

/// Outcome of a training run: the validation-optimal snapshot plus the
/// recorded trajectories.
#[derive(Clone, Debug)]
pub struct TrainResult {
    pub best_params: Params,
    /// Index into `history` of the first validation minimum (0 when the
    /// epoch budget was 0).
    pub best_epoch: usize,
    pub best_val_mse_scaled: f64,
    pub history: Vec<EpochRecord>,
    /// Objective (batch MSE + penalty) per optimizer step; recorded only
    /// with `record_history`.
    pub step_objectives: Vec<f64>,
    /// Path norm of the best snapshot.
    pub final_path_norm: f64,
}

/// Which split to score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

fn split_of(dataset: &SplitDataset, split: Split) -> (&Matrix, &[f64]) {
    match split {
        Split::Train => (&dataset.x_train, &dataset.y_train),
        Split::Val => (&dataset.x_val, &dataset.y_val),
        Split::Test => (&dataset.x_test, &dataset.y_test),
    }
}

/// Full-pass MSE of `params` on one split, in both scales.
pub fn evaluate(
    params: &Params,
    arch: &Architecture,
    dataset: &SplitDataset,
    split: Split,
) -> Result<(f64, f64)> {
    let (xs, ys) = split_of(dataset, split);
    let preds = predict_batch(params, arch, xs)?;
    let scaled = mse(&preds, ys, LossScale::Scaled, arch.d)?;
    let original = mse(&preds, ys, LossScale::Original, arch.d)?;
    Ok((scaled, original))
}

/// Runs minibatch Adam on `MSE_scaled + penalty` for the configured epoch
/// budget and returns the snapshot at the first validation minimum.
///
/// Training rows are reshuffled every epoch from a stream derived from
/// `config.seed`; a fresh initialization (when `init` is `None`) draws
/// from an independent stream of the same seed.
pub fn train(
    dataset: &SplitDataset,
    arch: &Architecture,
    config: &TrainConfig,
    init: Option<Params>,
) -> Result<TrainResult> {
    if dataset.d != arch.d {
        return Err(Error::Dimension(format!(
            "train: dataset dimension {} vs architecture dimension {}",
            dataset.d, arch.d
        )));
    }
    let n_train = dataset.n_train();
    if n_train == 0 || dataset.n_val() == 0 {
        return Err(Error::Parameter("train: empty train or val split".into()));
    }

    let mut params = match init {
        Some(p) => p,
        None => init_glorot(arch, &mut Rng::derive(config.seed, INIT_STREAM)),
    };
    let mut shuffle_rng = Rng::derive(config.seed, SHUFFLE_STREAM);
    let mut adam = AdamState::new(arch, config.lr, config.decay);
    let batch = config.batch_policy.batch_size(n_train, dataset.n_val());

    let mut history = Vec::new();
    let mut step_objectives = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = params.clone();

    let mut indices: Vec<usize> = (0..n_train).collect();
    let d = arch.d;

    for epoch in 0..config.epochs {
        shuffle_rng.shuffle(&mut indices);
        let mut epoch_mse_sum = 0.0;
        let mut n_batches = 0usize;
        for chunk in indices.chunks(batch) {
            let mut xs = Matrix::zeros(chunk.len(), d);
            let mut ys = Vec::with_capacity(chunk.len());
            for (i, &r) in chunk.iter().enumerate() {
                xs.row_mut(i).copy_from_slice(dataset.x_train.row(r));
                ys.push(dataset.y_train[r]);
            }
            let (outs, cache) = forward_batch(&params, arch, &xs)?;
            let batch_mse = mse(&outs, &ys, LossScale::Scaled, d)?;
            let mut grad = backward_from_cache(&params, arch, &xs, &ys, &outs, &cache);
            let penalty = match config.regularizer {
                Regularizer::None => 0.0,
                reg => {
                    let (pen, pen_grad) = penalty_and_grad(&params, arch, reg);
                    grad.add_assign(&pen_grad);
                    pen
                }
            };
            if config.record_history {
                step_objectives.push(batch_mse + penalty);
            }
            adam_step(&mut adam, &mut params, &grad);
            epoch_mse_sum += batch_mse;
            n_batches += 1;
        }

        let (val_mse, _) = evaluate(&params, arch, dataset, Split::Val)?;
        if config.record_history {
            let pn = if config.record_path_norm {
                Some(path_norm(&params, arch)?)
            } else {
                None
            };
            history.push(EpochRecord {
                epoch,
                train_mse_scaled: epoch_mse_sum / n_batches as f64,
                val_mse_scaled: val_mse,
                path_norm: pn,
            });
        }
        if val_mse < best_val {
            best_val = val_mse;
            best_epoch = epoch;
            best_params = params.clone();
        }
    }

    if config.epochs == 0 {
        best_val = evaluate(&best_params, arch, dataset, Split::Val)?.0;
    }
    let final_path_norm = path_norm(&best_params, arch)?;
    Ok(TrainResult {
        best_params,
        best_epoch,
        best_val_mse_scaled: best_val,
        history,
        step_objectives,
        final_path_norm,
    })
}

/// Writes a recorded history as `epoch,train_mse_scaled,val_mse_scaled,path_norm`.
pub fn export_history_csv<W: Write>(history: &[EpochRecord], mut out: W) -> Result<()> {
    writeln!(out, "epoch,train_mse_scaled,val_mse_scaled,path_norm")?;
    for rec in history {
        let pn = rec
            .path_norm
            .map(|p| format!("{p:.16e}"))
            .unwrap_or_default();
        writeln!(
            out,
            "{},{:.16e},{:.16e},{}",
            rec.epoch, rec.train_mse_scaled, rec.val_mse_scaled, pn
        )?;
    }
    Ok(())
}
