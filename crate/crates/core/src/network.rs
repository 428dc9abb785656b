//! The three two-hidden-layer ReLU architectures: a dense global network,
//! a locally connected network with one independent block per input
//! coordinate, and a local network that shares a single block across all
//! coordinates. All three divide the output by `d`, carry no bias on the
//! output layer, and use ReLU with subderivative 0 at 0.
//!
//! Block parameters are stored as blocks rather than masked dense
//! matrices; `embed` materializes the dense view with exact zeros off the
//! blocks, and the forward pass of the embedded network reproduces the
//! block forward pass bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm_nn_acc, gemm_tn_acc, Matrix};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Global,
    #[serde(rename = "lcn")]
    LocallyConnected,
    Local,
}

impl ArchKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "global" | "gn" => Ok(ArchKind::Global),
            "lcn" => Ok(ArchKind::LocallyConnected),
            "local" | "ln" => Ok(ArchKind::Local),
            _ => Err(Error::Parameter(format!("unknown architecture '{s}'"))),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ArchKind::Global => "global",
            ArchKind::LocallyConnected => "lcn",
            ArchKind::Local => "local",
        }
    }
}

impl std::fmt::Display for ArchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Architecture descriptor: kind, input dimension, channels per input node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: ArchKind,
    pub d: usize,
    pub alpha: usize,
}

impl Architecture {
    pub fn new(kind: ArchKind, d: usize, alpha: usize) -> Result<Self> {
        if d == 0 || alpha == 0 {
            return Err(Error::Parameter(format!(
                "architecture needs d >= 1 and alpha >= 1 (got d={d}, alpha={alpha})"
            )));
        }
        Ok(Architecture { kind, d, alpha })
    }

    /// Width of each hidden layer in the dense view.
    pub fn hidden_width(&self) -> usize {
        self.d * self.alpha
    }

    /// The same dimensions with the dense layout.
    pub fn as_global(&self) -> Architecture {
        Architecture {
            kind: ArchKind::Global,
            ..*self
        }
    }
}

/// Parameters of one per-coordinate block: a scalar-input two-hidden-layer
/// ReLU net of width `alpha` with a linear, bias-free output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
}

impl Block {
    pub fn zeros(alpha: usize) -> Self {
        Block {
            w1: vec![0.0; alpha],
            b1: vec![0.0; alpha],
            w2: Matrix::zeros(alpha, alpha),
            b2: vec![0.0; alpha],
            w3: vec![0.0; alpha],
        }
    }
}

/// Dense-layout parameters: `w1` is (d*alpha) x d, `w2` is
/// (d*alpha) x (d*alpha), `w3` has length d*alpha. No output bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalParams {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
}

impl GlobalParams {
    pub fn zeros(d: usize, alpha: usize) -> Self {
        let h = d * alpha;
        GlobalParams {
            w1: Matrix::zeros(h, d),
            b1: vec![0.0; h],
            w2: Matrix::zeros(h, h),
            b2: vec![0.0; h],
            w3: vec![0.0; h],
        }
    }
}

/// The full parameter set of a network, in architecture-specific layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "lowercase")]
pub enum Params {
    Global(GlobalParams),
    #[serde(rename = "lcn")]
    LocallyConnected(Vec<Block>),
    Local(Block),
}

impl Params {
    pub fn zeros(arch: &Architecture) -> Params {
        match arch.kind {
            ArchKind::Global => Params::Global(GlobalParams::zeros(arch.d, arch.alpha)),
            ArchKind::LocallyConnected => {
                Params::LocallyConnected(vec![Block::zeros(arch.alpha); arch.d])
            }
            ArchKind::Local => Params::Local(Block::zeros(arch.alpha)),
        }
    }

    pub fn kind(&self) -> ArchKind {
        match self {
            Params::Global(_) => ArchKind::Global,
            Params::LocallyConnected(_) => ArchKind::LocallyConnected,
            Params::Local(_) => ArchKind::Local,
        }
    }

    /// Applies `f` to every entry, weights and biases alike.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        match self {
            Params::Global(g) => {
                for s in global_tensors_mut(g) {
                    s.iter_mut().for_each(&mut f);
                }
            }
            Params::LocallyConnected(blocks) => {
                for b in blocks {
                    for s in block_tensors_mut(b) {
                        s.iter_mut().for_each(&mut f);
                    }
                }
            }
            Params::Local(b) => {
                for s in block_tensors_mut(b) {
                    s.iter_mut().for_each(&mut f);
                }
            }
        }
    }

    /// Applies `f` to every weight entry (biases excluded).
    pub fn for_each_weight(&self, mut f: impl FnMut(f64)) {
        match self {
            Params::Global(g) => {
                for s in [g.w1.data(), g.w2.data(), g.w3.as_slice()] {
                    s.iter().for_each(|&v| f(v));
                }
            }
            Params::LocallyConnected(blocks) => {
                for b in blocks {
                    for s in [b.w1.as_slice(), b.w2.data(), b.w3.as_slice()] {
                        s.iter().for_each(|&v| f(v));
                    }
                }
            }
            Params::Local(b) => {
                for s in [b.w1.as_slice(), b.w2.data(), b.w3.as_slice()] {
                    s.iter().for_each(|&v| f(v));
                }
            }
        }
    }

    /// Adds `other` entrywise (same layout required).
    pub fn add_assign(&mut self, other: &Params) {
        zip2_mut(self, other, |a, b| *a += b);
    }

    pub fn num_entries(&self) -> usize {
        let mut n = 0;
        let mut clone = self.clone();
        clone.for_each_mut(|_| n += 1);
        n
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        let mut clone = self.clone();
        clone.for_each_mut(|v| ok &= v.is_finite());
        ok
    }

    pub fn max_abs_diff(&self, other: &Params) -> f64 {
        let mut m: f64 = 0.0;
        let mut a = self.clone();
        zip2_mut(&mut a, other, |x, y| m = m.max((*x - y).abs()));
        m
    }
}

fn global_tensors_mut(g: &mut GlobalParams) -> [&mut [f64]; 5] {
    let GlobalParams { w1, b1, w2, b2, w3 } = g;
    [
        w1.data_mut(),
        b1.as_mut_slice(),
        w2.data_mut(),
        b2.as_mut_slice(),
        w3.as_mut_slice(),
    ]
}

fn block_tensors_mut(b: &mut Block) -> [&mut [f64]; 5] {
    let Block { w1, b1, w2, b2, w3 } = b;
    [
        w1.as_mut_slice(),
        b1.as_mut_slice(),
        w2.data_mut(),
        b2.as_mut_slice(),
        w3.as_mut_slice(),
    ]
}

fn global_tensors(g: &GlobalParams) -> [&[f64]; 5] {
    [
        g.w1.data(),
        b1_slice(&g.b1),
        g.w2.data(),
        b1_slice(&g.b2),
        g.w3.as_slice(),
    ]
}

fn block_tensors(b: &Block) -> [&[f64]; 5] {
    [
        b.w1.as_slice(),
        b1_slice(&b.b1),
        b.w2.data(),
        b1_slice(&b.b2),
        b.w3.as_slice(),
    ]
}

fn b1_slice(v: &[f64]) -> &[f64] {
    v
}

fn zip2_mut(a: &mut Params, b: &Params, mut f: impl FnMut(&mut f64, f64)) {
    let apply = |xs: &mut [f64], ys: &[f64], f: &mut dyn FnMut(&mut f64, f64)| {
        debug_assert_eq!(xs.len(), ys.len());
        for (x, &y) in xs.iter_mut().zip(ys) {
            f(x, y);
        }
    };
    match (a, b) {
        (Params::Global(ga), Params::Global(gb)) => {
            let ta = global_tensors_mut(ga);
            let tb = global_tensors(gb);
            for (xs, ys) in ta.into_iter().zip(tb) {
                apply(xs, ys, &mut f);
            }
        }
        (Params::LocallyConnected(ba), Params::LocallyConnected(bb)) => {
            debug_assert_eq!(ba.len(), bb.len());
            for (block_a, block_b) in ba.iter_mut().zip(bb) {
                let ta = block_tensors_mut(block_a);
                let tb = block_tensors(block_b);
                for (xs, ys) in ta.into_iter().zip(tb) {
                    apply(xs, ys, &mut f);
                }
            }
        }
        (Params::Local(block_a), Params::Local(block_b)) => {
            let ta = block_tensors_mut(block_a);
            let tb = block_tensors(block_b);
            for (xs, ys) in ta.into_iter().zip(tb) {
                apply(xs, ys, &mut f);
            }
        }
        _ => panic!("parameter layout mismatch"),
    }
}

/// Four-way aligned traversal used by the optimizer: parameters, two
/// moment accumulators, and the gradient.
pub fn zip4_mut(
    p: &mut Params,
    m: &mut Params,
    v: &mut Params,
    g: &Params,
    mut f: impl FnMut(&mut f64, &mut f64, &mut f64, f64),
) {
    let apply = |ps: &mut [f64],
                 ms: &mut [f64],
                 vs: &mut [f64],
                 gs: &[f64],
                 f: &mut dyn FnMut(&mut f64, &mut f64, &mut f64, f64)| {
        for (((pp, mm), vv), &gg) in ps.iter_mut().zip(ms).zip(vs).zip(gs) {
            f(pp, mm, vv, gg);
        }
    };
    match (p, m, v, g) {
        (Params::Global(pg), Params::Global(mg), Params::Global(vg), Params::Global(gg)) => {
            let tp = global_tensors_mut(pg);
            let tm = global_tensors_mut(mg);
            let tv = global_tensors_mut(vg);
            let tg = global_tensors(gg);
            for (((ps, ms), vs), gs) in tp.into_iter().zip(tm).zip(tv).zip(tg) {
                apply(ps, ms, vs, gs, &mut f);
            }
        }
        (
            Params::LocallyConnected(pb),
            Params::LocallyConnected(mb),
            Params::LocallyConnected(vb),
            Params::LocallyConnected(gb),
        ) => {
            for (((p, m), v), g) in pb.iter_mut().zip(mb).zip(vb).zip(gb) {
                let tp = block_tensors_mut(p);
                let tm = block_tensors_mut(m);
                let tv = block_tensors_mut(v);
                let tg = block_tensors(g);
                for (((ps, ms), vs), gs) in tp.into_iter().zip(tm).zip(tv).zip(tg) {
                    apply(ps, ms, vs, gs, &mut f);
                }
            }
        }
        (Params::Local(pb), Params::Local(mb), Params::Local(vb), Params::Local(gb)) => {
            let tp = block_tensors_mut(pb);
            let tm = block_tensors_mut(mb);
            let tv = block_tensors_mut(vb);
            let tg = block_tensors(gb);
            for (((ps, ms), vs), gs) in tp.into_iter().zip(tm).zip(tv).zip(tg) {
                apply(ps, ms, vs, gs, &mut f);
            }
        }
        _ => panic!("parameter layout mismatch"),
    }
}

fn check_params(params: &Params, arch: &Architecture) -> Result<()> {
    let h = arch.hidden_width();
    let bad = |what: &str| {
        Err(Error::Dimension(format!(
            "params do not match architecture ({what})"
        )))
    };
    match (params, arch.kind) {
        (Params::Global(g), ArchKind::Global) => {
            if g.w1.rows() != h || g.w1.cols() != arch.d {
                return bad("w1 shape");
            }
            if g.w2.rows() != h || g.w2.cols() != h {
                return bad("w2 shape");
            }
            if g.b1.len() != h || g.b2.len() != h || g.w3.len() != h {
                return bad("vector lengths");
            }
            Ok(())
        }
        (Params::LocallyConnected(blocks), ArchKind::LocallyConnected) => {
            if blocks.len() != arch.d {
                return bad("block count");
            }
            for b in blocks {
                check_block(b, arch.alpha)?;
            }
            Ok(())
        }
        (Params::Local(b), ArchKind::Local) => check_block(b, arch.alpha),
        _ => bad("layout kind"),
    }
}

fn check_block(b: &Block, alpha: usize) -> Result<()> {
    if b.w1.len() != alpha
        || b.b1.len() != alpha
        || b.w2.rows() != alpha
        || b.w2.cols() != alpha
        || b.b2.len() != alpha
        || b.w3.len() != alpha
    {
        return Err(Error::Dimension("block shape mismatch".into()));
    }
    Ok(())
}

#[inline]
fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

#[inline]
fn relu_prime(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn fill_uniform(rng: &mut Rng, limit: f64, xs: &mut [f64]) {
    for v in xs.iter_mut() {
        *v = rng.uniform_one(-limit, limit);
    }
}

/// Glorot-uniform initialization: each weight uniform on `[-L, L)` with
/// `L = sqrt(6 / (fan_in + fan_out))` of its layer, biases zero.
///
/// Draw order is fixed (w1, w2, w3 per block or layer; blocks in
/// coordinate order), so a seed pins the full initialization.
pub fn init_glorot(arch: &Architecture, rng: &mut Rng) -> Params {
    match arch.kind {
        ArchKind::Global => {
            let h = arch.hidden_width();
            let mut g = GlobalParams::zeros(arch.d, arch.alpha);
            fill_uniform(rng, glorot_limit(arch.d, h), g.w1.data_mut());
            fill_uniform(rng, glorot_limit(h, h), g.w2.data_mut());
            fill_uniform(rng, glorot_limit(h, 1), &mut g.w3);
            Params::Global(g)
        }
        ArchKind::LocallyConnected => {
            let blocks = (0..arch.d).map(|_| init_block(arch.alpha, rng)).collect();
            Params::LocallyConnected(blocks)
        }
        ArchKind::Local => Params::Local(init_block(arch.alpha, rng)),
    }
}

fn init_block(alpha: usize, rng: &mut Rng) -> Block {
    let mut b = Block::zeros(alpha);
    fill_uniform(rng, glorot_limit(1, alpha), &mut b.w1);
    fill_uniform(rng, glorot_limit(alpha, alpha), b.w2.data_mut());
    fill_uniform(rng, glorot_limit(alpha, 1), &mut b.w3);
    b
}

/// Adds `eps * u`, `u` uniform on `[-1, 1)`, to every entry (weights and
/// biases).
pub fn perturb(params: &Params, eps: f64, rng: &mut Rng) -> Params {
    let mut out = params.clone();
    if eps > 0.0 {
        out.for_each_mut(|v| *v += eps * rng.uniform_one(-1.0, 1.0));
    }
    out
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

/// Stored pre-activations and activations of one forward evaluation; the
/// backward pass consumes these instead of re-running the forward pass.
#[derive(Clone, Debug)]
pub enum Cache {
    Global(LayerCache),
    /// One entry per input coordinate (LCN blocks, or the shared block's
    /// d applications for the local network).
    PerCoordinate(Vec<LayerCache>),
}

#[derive(Clone, Debug)]
pub struct LayerCache {
    pub z1: Vec<f64>,
    pub h1: Vec<f64>,
    pub z2: Vec<f64>,
    pub h2: Vec<f64>,
}

/// Evaluates the shared/LCN block on one scalar input.
pub fn block_scalar(block: &Block, x: f64) -> f64 {
    block_forward_scalar(block, x).0
}

fn block_forward_scalar(block: &Block, x: f64) -> (f64, LayerCache) {
    let alpha = block.w1.len();
    let mut z1 = Vec::with_capacity(alpha);
    let mut h1 = Vec::with_capacity(alpha);
    for j in 0..alpha {
        let z = block.w1[j] * x + block.b1[j];
        z1.push(z);
        h1.push(relu(z));
    }
    let mut z2 = Vec::with_capacity(alpha);
    let mut h2 = Vec::with_capacity(alpha);
    let mut g = 0.0;
    for k in 0..alpha {
        let mut acc = block.b2[k];
        for (w, h) in block.w2.row(k).iter().zip(&h1) {
            acc += w * h;
        }
        z2.push(acc);
        let a = relu(acc);
        h2.push(a);
        g += block.w3[k] * a;
    }
    (
        g,
        LayerCache { z1, h1, z2, h2 },
    )
}

/// Forward pass on one (sorted) input row; returns the scalar output and
/// the activation record.
pub fn forward(params: &Params, arch: &Architecture, x: &[f64]) -> Result<(f64, Cache)> {
    check_params(params, arch)?;
    if x.len() != arch.d {
        return Err(Error::Dimension(format!(
            "forward: input has length {}, expected {}",
            x.len(),
            arch.d
        )));
    }
    let d = arch.d as f64;
    match params {
        Params::Global(g) => {
            let h = arch.hidden_width();
            let mut z1 = Vec::with_capacity(h);
            let mut h1 = Vec::with_capacity(h);
            for r in 0..h {
                let mut acc = g.b1[r];
                for (w, xv) in g.w1.row(r).iter().zip(x) {
                    acc += w * xv;
                }
                z1.push(acc);
                h1.push(relu(acc));
            }
            let mut z2 = Vec::with_capacity(h);
            let mut h2 = Vec::with_capacity(h);
            for r in 0..h {
                let mut acc = g.b2[r];
                for (w, hv) in g.w2.row(r).iter().zip(&h1) {
                    acc += w * hv;
                }
                z2.push(acc);
                h2.push(relu(acc));
            }
            let mut out = 0.0;
            for (w, hv) in g.w3.iter().zip(&h2) {
                out += w * hv;
            }
            Ok((out / d, Cache::Global(LayerCache { z1, h1, z2, h2 })))
        }
        Params::LocallyConnected(blocks) => {
            let mut caches = Vec::with_capacity(arch.d);
            let mut sum = 0.0;
            for (i, block) in blocks.iter().enumerate() {
                let (g, cache) = block_forward_scalar(block, x[i]);
                sum += g;
                caches.push(cache);
            }
            Ok((sum / d, Cache::PerCoordinate(caches)))
        }
        Params::Local(block) => {
            let mut caches = Vec::with_capacity(arch.d);
            let mut sum = 0.0;
            for &xi in x {
                let (g, cache) = block_forward_scalar(block, xi);
                sum += g;
                caches.push(cache);
            }
            Ok((sum / d, Cache::PerCoordinate(caches)))
        }
    }
}

/// Activation record of a batched forward pass.
#[derive(Debug)]
pub enum BatchCache {
    /// Matrices are batch x hidden_width.
    Global(BatchLayers),
    /// Row r = b*d + i is coordinate i of sample b; matrices are
    /// (batch*d) x alpha.
    Shared(BatchLayers),
    /// One batch x alpha cache per coordinate block.
    Blocks(Vec<BatchLayers>),
}

#[derive(Debug)]
pub struct BatchLayers {
    pub z1: Matrix,
    pub h1: Matrix,
    pub z2: Matrix,
    pub h2: Matrix,
}

fn relu_matrix(z: &Matrix) -> Matrix {
    let mut h = z.clone();
    for v in h.data_mut() {
        *v = relu(*v);
    }
    h
}

fn broadcast_rows(bias: &[f64], rows: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, bias.len());
    for r in 0..rows {
        m.row_mut(r).copy_from_slice(bias);
    }
    m
}

/// Batched forward pass over the rows of `xs`; keeps the records the
/// backward pass needs.
pub fn forward_batch(
    params: &Params,
    arch: &Architecture,
    xs: &Matrix,
) -> Result<(Vec<f64>, BatchCache)> {
    check_params(params, arch)?;
    if xs.cols() != arch.d {
        return Err(Error::Dimension(format!(
            "forward_batch: rows have {} columns, expected {}",
            xs.cols(),
            arch.d
        )));
    }
    let b = xs.rows();
    let d = arch.d;
    let df = d as f64;
    match params {
        Params::Global(g) => {
            let h = arch.hidden_width();
            let w1t = g.w1.transpose();
            let w2t = g.w2.transpose();
            let mut z1 = broadcast_rows(&g.b1, b);
            gemm_nn_acc(xs.data(), w1t.data(), z1.data_mut(), b, d, h);
            let h1 = relu_matrix(&z1);
            let mut z2 = broadcast_rows(&g.b2, b);
            gemm_nn_acc(h1.data(), w2t.data(), z2.data_mut(), b, h, h);
            let h2 = relu_matrix(&z2);
            let outs = (0..b)
                .map(|r| {
                    let mut acc = 0.0;
                    for (w, hv) in g.w3.iter().zip(h2.row(r)) {
                        acc += w * hv;
                    }
                    acc / df
                })
                .collect();
            Ok((outs, BatchCache::Global(BatchLayers { z1, h1, z2, h2 })))
        }
        Params::Local(block) => {
            let alpha = arch.alpha;
            let rows = b * d;
            // xs.data() in row-major order is exactly the flattened
            // (sample, coordinate) stream the shared block consumes
            let xflat = xs.data();
            let mut z1 = Matrix::zeros(rows, alpha);
            for (r, &xv) in xflat.iter().enumerate() {
                let row = z1.row_mut(r);
                for (j, z) in row.iter_mut().enumerate() {
                    *z = block.w1[j] * xv + block.b1[j];
                }
            }
            let h1 = relu_matrix(&z1);
            let w2t = block.w2.transpose();
            let mut z2 = broadcast_rows(&block.b2, rows);
            gemm_nn_acc(h1.data(), w2t.data(), z2.data_mut(), rows, alpha, alpha);
            let h2 = relu_matrix(&z2);
            let mut outs = Vec::with_capacity(b);
            for s in 0..b {
                let mut sum = 0.0;
                for i in 0..d {
                    let row = h2.row(s * d + i);
                    let mut g = 0.0;
                    for (w, hv) in block.w3.iter().zip(row) {
                        g += w * hv;
                    }
                    sum += g;
                }
                outs.push(sum / df);
            }
            Ok((outs, BatchCache::Shared(BatchLayers { z1, h1, z2, h2 })))
        }
        Params::LocallyConnected(blocks) => {
            let alpha = arch.alpha;
            let mut caches = Vec::with_capacity(d);
            let mut sums = vec![0.0; b];
            for (i, block) in blocks.iter().enumerate() {
                let mut z1 = Matrix::zeros(b, alpha);
                for r in 0..b {
                    let xv = xs.get(r, i);
                    let row = z1.row_mut(r);
                    for (j, z) in row.iter_mut().enumerate() {
                        *z = block.w1[j] * xv + block.b1[j];
                    }
                }
                let h1 = relu_matrix(&z1);
                let w2t = block.w2.transpose();
                let mut z2 = broadcast_rows(&block.b2, b);
                gemm_nn_acc(h1.data(), w2t.data(), z2.data_mut(), b, alpha, alpha);
                let h2 = relu_matrix(&z2);
                for r in 0..b {
                    let mut g = 0.0;
                    for (w, hv) in block.w3.iter().zip(h2.row(r)) {
                        g += w * hv;
                    }
                    sums[r] += g;
                }
                caches.push(BatchLayers { z1, h1, z2, h2 });
            }
            let outs = sums.into_iter().map(|s| s / df).collect();
            Ok((outs, BatchCache::Blocks(caches)))
        }
    }
}

/// Batched outputs only, evaluated in bounded chunks.
pub fn predict_batch(params: &Params, arch: &Architecture, xs: &Matrix) -> Result<Vec<f64>> {
    const CHUNK: usize = 1024;
    let mut outs = Vec::with_capacity(xs.rows());
    let mut start = 0;
    while start < xs.rows() {
        let end = (start + CHUNK).min(xs.rows());
        let mut chunk = Matrix::zeros(end - start, xs.cols());
        for (i, r) in (start..end).enumerate() {
            chunk.row_mut(i).copy_from_slice(xs.row(r));
        }
        let (mut o, _) = forward_batch(params, arch, &chunk)?;
        outs.append(&mut o);
        start = end;
    }
    Ok(outs)
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut sums = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (s, &v) in sums.iter_mut().zip(m.row(r)) {
            *s += v;
        }
    }
    sums
}

/// Gradient of the batch mean squared error (scaled target) with respect
/// to every parameter, computed from a stored forward record.
///
/// The local network sums gradients over the d shared applications.
pub fn backward_from_cache(
    params: &Params,
    arch: &Architecture,
    xs: &Matrix,
    ys: &[f64],
    outs: &[f64],
    cache: &BatchCache,
) -> Params {
    let b = xs.rows();
    let d = arch.d;
    // d(MSE)/d(out_s) folded with the 1/d output scaling
    let upstream: Vec<f64> = outs
        .iter()
        .zip(ys)
        .map(|(&o, &y)| 2.0 / b as f64 * (o - y) / d as f64)
        .collect();

    match (params, cache) {
        (Params::Global(g), BatchCache::Global(c)) => {
            let h = arch.hidden_width();
            let mut grad = GlobalParams::zeros(d, arch.alpha);

            // output layer
            for (r, &s) in upstream.iter().enumerate() {
                for (gv, &hv) in grad.w3.iter_mut().zip(c.h2.row(r)) {
                    *gv += s * hv;
                }
            }

            // delta2 = s * w3 ⊙ relu'(z2)
            let mut delta2 = Matrix::zeros(b, h);
            for (r, &s) in upstream.iter().enumerate() {
                let zrow = c.z2.row(r);
                let drow = delta2.row_mut(r);
                for k in 0..h {
                    drow[k] = s * g.w3[k] * relu_prime(zrow[k]);
                }
            }
            grad.b2 = column_sums(&delta2);
            gemm_tn_acc(delta2.data(), c.h1.data(), grad.w2.data_mut(), b, h, h);

            // delta1 = (delta2 · w2) ⊙ relu'(z1)
            let mut delta1 = Matrix::zeros(b, h);
            gemm_nn_acc(delta2.data(), g.w2.data(), delta1.data_mut(), b, h, h);
            for r in 0..b {
                let zrow = c.z1.row(r);
                let drow = delta1.row_mut(r);
                for j in 0..h {
                    drow[j] *= relu_prime(zrow[j]);
                }
            }
            grad.b1 = column_sums(&delta1);
            gemm_tn_acc(delta1.data(), xs.data(), grad.w1.data_mut(), b, h, d);

            Params::Global(grad)
        }
        (Params::Local(block), BatchCache::Shared(c)) => {
            let alpha = arch.alpha;
            let rows = b * d;
            let mut grad = Block::zeros(alpha);

            // per-row upstream: coordinate rows of a sample share its value
            let mut srow = Vec::with_capacity(rows);
            for &s in &upstream {
                srow.extend(std::iter::repeat(s).take(d));
            }

            for (r, &s) in srow.iter().enumerate() {
                for (gv, &hv) in grad.w3.iter_mut().zip(c.h2.row(r)) {
                    *gv += s * hv;
                }
            }

            let mut delta2 = Matrix::zeros(rows, alpha);
            for (r, &s) in srow.iter().enumerate() {
                let zrow = c.z2.row(r);
                let drow = delta2.row_mut(r);
                for k in 0..alpha {
                    drow[k] = s * block.w3[k] * relu_prime(zrow[k]);
                }
            }
            grad.b2 = column_sums(&delta2);
            gemm_tn_acc(delta2.data(), c.h1.data(), grad.w2.data_mut(), rows, alpha, alpha);

            let mut delta1 = Matrix::zeros(rows, alpha);
            gemm_nn_acc(delta2.data(), block.w2.data(), delta1.data_mut(), rows, alpha, alpha);
            for r in 0..rows {
                let zrow = c.z1.row(r);
                let drow = delta1.row_mut(r);
                for j in 0..alpha {
                    drow[j] *= relu_prime(zrow[j]);
                }
            }
            grad.b1 = column_sums(&delta1);
            let xflat = xs.data();
            for (r, &xv) in xflat.iter().enumerate() {
                for (gv, &dv) in grad.w1.iter_mut().zip(delta1.row(r)) {
                    *gv += dv * xv;
                }
            }

            Params::Local(grad)
        }
        (Params::LocallyConnected(blocks), BatchCache::Blocks(caches)) => {
            let alpha = arch.alpha;
            let mut grads = Vec::with_capacity(d);
            for (i, (block, c)) in blocks.iter().zip(caches).enumerate() {
                let mut grad = Block::zeros(alpha);
                for (r, &s) in upstream.iter().enumerate() {
                    for (gv, &hv) in grad.w3.iter_mut().zip(c.h2.row(r)) {
                        *gv += s * hv;
                    }
                }
                let mut delta2 = Matrix::zeros(b, alpha);
                for (r, &s) in upstream.iter().enumerate() {
                    let zrow = c.z2.row(r);
                    let drow = delta2.row_mut(r);
                    for k in 0..alpha {
                        drow[k] = s * block.w3[k] * relu_prime(zrow[k]);
                    }
                }
                grad.b2 = column_sums(&delta2);
                gemm_tn_acc(delta2.data(), c.h1.data(), grad.w2.data_mut(), b, alpha, alpha);

                let mut delta1 = Matrix::zeros(b, alpha);
                gemm_nn_acc(delta2.data(), block.w2.data(), delta1.data_mut(), b, alpha, alpha);
                for r in 0..b {
                    let zrow = c.z1.row(r);
                    let drow = delta1.row_mut(r);
                    for j in 0..alpha {
                        drow[j] *= relu_prime(zrow[j]);
                    }
                }
                grad.b1 = column_sums(&delta1);
                for r in 0..b {
                    let xv = xs.get(r, i);
                    for (gv, &dv) in grad.w1.iter_mut().zip(delta1.row(r)) {
                        *gv += dv * xv;
                    }
                }
                grads.push(grad);
            }
            Params::LocallyConnected(grads)
        }
        _ => panic!("cache does not match parameter layout"),
    }
}

/// Gradient of the batch mean squared error; runs the forward pass and
/// feeds the stored record to [`backward_from_cache`].
pub fn backward(
    params: &Params,
    arch: &Architecture,
    batch_x: &Matrix,
    batch_y: &[f64],
) -> Result<Params> {
    if batch_x.rows() == 0 {
        return Err(Error::Parameter("backward: empty batch".into()));
    }
    if batch_x.rows() != batch_y.len() {
        return Err(Error::Dimension(format!(
            "backward: {} rows vs {} targets",
            batch_x.rows(),
            batch_y.len()
        )));
    }
    let (outs, cache) = forward_batch(params, arch, batch_x)?;
    Ok(backward_from_cache(params, arch, batch_x, batch_y, &outs, &cache))
}

// ---------------------------------------------------------------------------
// Embedding and path norm
// ---------------------------------------------------------------------------

/// Places block parameters into the dense layout: block-structured first
/// layer, block-diagonal second layer, concatenated output weights and
/// biases. Every off-block entry is exactly zero.
pub fn embed(params: &Params, arch: &Architecture) -> Result<Params> {
    check_params(params, arch)?;
    let blocks: Vec<&Block> = match params {
        Params::Global(_) => {
            return Err(Error::Parameter(
                "embed: parameters are already in the dense layout".into(),
            ))
        }
        Params::LocallyConnected(blocks) => blocks.iter().collect(),
        Params::Local(block) => std::iter::repeat(block).take(arch.d).collect(),
    };
    let (d, alpha) = (arch.d, arch.alpha);
    let mut g = GlobalParams::zeros(d, alpha);
    for (i, block) in blocks.iter().enumerate() {
        let base = i * alpha;
        for j in 0..alpha {
            g.w1.set(base + j, i, block.w1[j]);
            g.b1[base + j] = block.b1[j];
            g.b2[base + j] = block.b2[j];
            g.w3[base + j] = block.w3[j];
            for k in 0..alpha {
                g.w2.set(base + j, base + k, block.w2.get(j, k));
            }
        }
    }
    Ok(Params::Global(g))
}

fn path_norm_global(g: &GlobalParams, d: usize) -> f64 {
    let h = g.w3.len();
    // u[j] = Σ_k |w2[k,j]| |w3[k]|
    let mut u = vec![0.0; h];
    for k in 0..h {
        let wk = g.w3[k].abs();
        for (uv, &w) in u.iter_mut().zip(g.w2.row(k)) {
            *uv += w.abs() * wk;
        }
    }
    let mut total = 0.0;
    for j in 0..h {
        let row_sum: f64 = g.w1.row(j).iter().map(|w| w.abs()).sum();
        total += u[j] * row_sum;
    }
    total / d as f64
}

/// Path norm of a single block: all input-to-output weight paths of the
/// scalar subnetwork.
pub fn block_path_norm(block: &Block) -> f64 {
    let alpha = block.w1.len();
    let mut u = vec![0.0; alpha];
    for k in 0..alpha {
        let wk = block.w3[k].abs();
        for (uv, &w) in u.iter_mut().zip(block.w2.row(k)) {
            *uv += w.abs() * wk;
        }
    }
    u.iter().zip(&block.w1).map(|(&uv, &w)| uv * w.abs()).sum()
}

/// Path norm: the d-averaged sum over all input-to-output paths of the
/// product of absolute weights. Block layouts are evaluated through their
/// dense embedding so all layouts share one definition.
pub fn path_norm(params: &Params, arch: &Architecture) -> Result<f64> {
    check_params(params, arch)?;
    match params {
        Params::Global(g) => Ok(path_norm_global(g, arch.d)),
        _ => {
            let embedded = embed(params, arch)?;
            match embedded {
                Params::Global(g) => Ok(path_norm_global(&g, arch.d)),
                _ => unreachable!(),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Weight serialization
// ---------------------------------------------------------------------------

/// On-disk weight container; round-trips bit-exactly through JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightsFile {
    pub arch: Architecture,
    pub params: Params,
}

pub fn save_weights(path: &Path, arch: &Architecture, params: &Params) -> Result<()> {
    check_params(params, arch)?;
    let file = WeightsFile {
        arch: *arch,
        params: params.clone(),
    };
    let json = serde_json::to_string(&file)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<(Architecture, Params)> {
    let text = std::fs::read_to_string(path)?;
    let file: WeightsFile = serde_json::from_str(&text)?;
    check_params(&file.params, &file.arch)?;
    Ok((file.arch, file.params))
}
