//! Batched forward and reverse passes of the cross-attention scorer.
//!
//! Row layout: a batch of `B` queries with `j` candidates and `k` neighbor
//! slots each is stored as `B * j` candidate rows and `B * k` neighbor rows,
//! row-major with width `d`. Candidate rows of query `b` only ever attend to
//! neighbor rows of the same query.

use super::config::{ModelConfig, PositionalMode};
use super::params::CraftParams;
use super::ModelError;
use crate::dataprep::QueryBatch;
use crate::numerics::ops::{
    accumulate_column_sums, add_bias_rows, gelu_grad_scalar, gelu_scalar, matmul_slices,
    softmax_backward_row, softmax_in_place, DropoutMask,
};
use crate::numerics::{gemm, DenseArray, MatMut, MatRef, ParamId, ParamStore, Real};
use crate::seeding::{stream_rng, Stream};

/// Forward-pass mode. Training draws dropout masks from a stream keyed by
/// `(seed, epoch, batch)`; evaluation is dropout-free.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64, epoch: u64, batch: u64 },
}

const SITE_SOURCE_EMB: u64 = 0;
const SITE_CANDIDATE_EMB: u64 = 1;
const SITE_HEAD: u64 = 2;

fn site_attention(layer: usize) -> u64 {
    8 + 2 * layer as u64
}

fn site_ffn(layer: usize) -> u64 {
    9 + 2 * layer as u64
}

impl Mode {
    fn mask<T: Real>(
        &self,
        site: u64,
        len: usize,
        rate: f64,
    ) -> Result<DropoutMask<T>, ModelError> {
        match *self {
            Mode::Eval => Ok(DropoutMask::identity()),
            Mode::Train { seed, epoch, batch } => {
                let mut rng = stream_rng(
                    seed,
                    Stream::Dropout,
                    epoch,
                    batch.wrapping_mul(256).wrapping_add(site),
                );
                Ok(DropoutMask::draw(len, rate, &mut rng)?)
            }
        }
    }
}

/// Gradient accumulators, one per parameter group.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<DenseArray<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            grads: store
                .groups()
                .iter()
                .map(|g| DenseArray::zeros(g.value.shape()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &DenseArray<T> {
        &self.grads[id.0]
    }

    fn get_mut(&mut self, id: ParamId) -> &mut DenseArray<T> {
        &mut self.grads[id.0]
    }

    /// Adds these gradients into the store's accumulators.
    pub fn accumulate_into(self, store: &mut ParamStore<T>) {
        for (group, g) in store.groups_mut().iter_mut().zip(self.grads) {
            for (a, b) in group.grad.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
    }
}

struct LayerCache<T> {
    h_in: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    attn_mask: DropoutMask<T>,
    zc: Vec<T>,
    z: Vec<T>,
    u: Vec<T>,
    ffn_mask: DropoutMask<T>,
}

struct HeadCache<T> {
    x: Vec<T>,
    m: Vec<T>,
    mask: DropoutMask<T>,
    log_elapsed: Vec<Option<T>>,
    log_repeat: Vec<T>,
}

struct SourceCache<T> {
    rows: Vec<usize>,
    /// `B * k` inputs to the interval merge projection (time-interval mode).
    interval_x: Option<Vec<T>>,
    log_interval: Vec<T>,
    mask: DropoutMask<T>,
}

/// Output of [`CraftModel::forward`]: scores plus whatever the reverse pass
/// needs.
pub struct ForwardPass<T> {
    /// `B * (1 + q)` scores, positive first within each query.
    pub scores: Vec<T>,
    num_queries: usize,
    num_candidates: usize,
    k: usize,
    neighbor_mask: Vec<bool>,
    candidate_rows: Vec<usize>,
    source: SourceCache<T>,
    s: Vec<T>,
    candidate_mask: DropoutMask<T>,
    layers: Vec<LayerCache<T>>,
    head: HeadCache<T>,
}

impl<T: Real> ForwardPass<T> {
    pub fn num_queries(&self) -> usize {
        self.num_queries
    }

    pub fn num_candidates(&self) -> usize {
        self.num_candidates
    }

    /// Softmax weights of `layer` before dropout, laid out as
    /// `[query][head][candidate][slot]`.
    pub fn attention_weights(&self, layer: usize) -> &[T] {
        &self.layers[layer].probs
    }

    pub fn query_scores(&self, b: usize) -> &[T] {
        &self.scores[b * self.num_candidates..(b + 1) * self.num_candidates]
    }
}

/// `x (rows x in) @ w (in x out)`, optionally plus a row bias.
fn linear<T: Real>(
    x: &[T],
    rows: usize,
    w: &DenseArray<T>,
    bias: Option<&DenseArray<T>>,
) -> Vec<T> {
    let mut out = vec![T::zero(); rows * w.cols()];
    if rows > 0 {
        matmul_slices(x, rows, w, &mut out);
    }
    if let Some(b) = bias {
        add_bias_rows(&mut out, b.data());
    }
    out
}

/// `dw += x^T @ dy`.
fn weight_grad<T: Real>(x: &[T], rows: usize, dy: &[T], dw: &mut DenseArray<T>) {
    let (inp, out) = (dw.rows(), dw.cols());
    if rows == 0 {
        return;
    }
    gemm(
        T::one(),
        MatRef::new(x, rows, inp).t(),
        MatRef::new(dy, rows, out),
        T::one(),
        MatMut::new(dw.data_mut(), inp, out),
    );
}

/// `dx (+)= dy @ w^T`.
fn input_grad<T: Real>(dy: &[T], rows: usize, w: &DenseArray<T>, dx: &mut [T], accumulate: bool) {
    let (inp, out) = (w.rows(), w.cols());
    if rows == 0 {
        return;
    }
    let beta = if accumulate { T::one() } else { T::zero() };
    gemm(
        T::one(),
        MatRef::new(dy, rows, out),
        w.view().t(),
        beta,
        MatMut::new(dx, rows, inp),
    );
}

fn bias_grad<T: Real>(dy: &[T], db: &mut DenseArray<T>) {
    accumulate_column_sums(dy, db.data_mut());
}

fn log1p_count<T: Real>(v: u64) -> T {
    T::lit((v as f64).ln_1p())
}

/// The cross-attention link scorer.
#[derive(Clone, Debug, PartialEq)]
pub struct CraftModel {
    pub config: ModelConfig,
    pub num_nodes: usize,
    pub params: CraftParams,
}

impl CraftModel {
    /// Validates the configuration and initialises a fresh parameter store.
    pub fn init<T: Real>(
        config: ModelConfig,
        num_nodes: usize,
        seed: u64,
    ) -> Result<(Self, ParamStore<T>), ModelError> {
        config.validate()?;
        let (params, store) = CraftParams::init(&config, num_nodes, seed);
        Ok((
            Self {
                config,
                num_nodes,
                params,
            },
            store,
        ))
    }

    /// Binds a model to an existing store (for example a loaded checkpoint).
    pub fn bind<T: Real>(
        config: ModelConfig,
        num_nodes: usize,
        store: &ParamStore<T>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let params = CraftParams::bind(&config, store).ok_or_else(|| {
            ModelError::Config("parameter store does not match the model configuration".into())
        })?;
        if store.value(params.embedding).rows() != num_nodes + 1 {
            return Err(ModelError::Config(format!(
                "embedding table has {} rows, expected {}",
                store.value(params.embedding).rows(),
                num_nodes + 1
            )));
        }
        Ok(Self {
            config,
            num_nodes,
            params,
        })
    }

    fn check_batch(&self, batch: &QueryBatch) -> Result<(), ModelError> {
        let c = &self.config;
        if batch.k != c.neighbors {
            return Err(ModelError::BatchShape(format!(
                "batch carries {} neighbor slots, model expects {}",
                batch.k, c.neighbors
            )));
        }
        if c.use_repeat && batch.repeats.is_none() {
            return Err(ModelError::BatchShape(
                "repeat encoding enabled but batch has no repeat counts".into(),
            ));
        }
        let pad = self.num_nodes as u32;
        if let Some(&bad) = batch.candidates.iter().find(|&&n| n >= pad) {
            return Err(ModelError::BatchShape(format!(
                "candidate {bad} outside node range"
            )));
        }
        if let Some(&bad) = batch.neighbors.iter().find(|&&n| n > pad) {
            return Err(ModelError::BatchShape(format!(
                "neighbor {bad} outside node range"
            )));
        }
        for b in 0..batch.len() {
            if batch.is_cold(b) {
                return Err(ModelError::ColdSource { query: b });
            }
        }
        Ok(())
    }

    /// Evaluation-mode scores, `1 + q` per query with the positive first.
    pub fn score<T: Real>(
        &self,
        store: &ParamStore<T>,
        batch: &QueryBatch,
    ) -> Result<Vec<T>, ModelError> {
        Ok(self.forward(store, batch, Mode::Eval)?.scores)
    }

    pub fn forward<T: Real>(
        &self,
        store: &ParamStore<T>,
        batch: &QueryBatch,
        mode: Mode,
    ) -> Result<ForwardPass<T>, ModelError> {
        self.check_batch(batch)?;
        let c = &self.config;
        let d = c.dim;
        let (bq, j, k) = (
            batch.len(),
            batch.num_candidates,
            batch.neighbors.len() / batch.len().max(1),
        );

        let (mut s, source) = self.source_context(store, batch)?;
        let source_mask = mode.mask::<T>(SITE_SOURCE_EMB, s.len(), c.emb_dropout)?;
        source_mask.apply(&mut s);
        let source = SourceCache {
            mask: source_mask,
            ..source
        };

        let emb = store.value(self.params.embedding);
        let candidate_rows: Vec<usize> = batch.candidates.iter().map(|&n| n as usize).collect();
        let mut h = vec![T::zero(); bq * j * d];
        for (r, &row) in candidate_rows.iter().enumerate() {
            h[r * d..(r + 1) * d].copy_from_slice(emb.row(row));
        }
        let candidate_mask = mode.mask::<T>(SITE_CANDIDATE_EMB, h.len(), c.emb_dropout)?;
        candidate_mask.apply(&mut h);

        let mut layers = Vec::with_capacity(c.layers);
        for l in 0..c.layers {
            let (next, cache) = self.layer_forward(store, l, h, &s, &batch.mask, bq, j, k, mode)?;
            layers.push(cache);
            h = next;
        }

        let (scores, head) = self.head_forward(store, &h, batch, mode)?;
        Ok(ForwardPass {
            scores,
            num_queries: bq,
            num_candidates: j,
            k,
            neighbor_mask: batch.mask.clone(),
            candidate_rows,
            source,
            s,
            candidate_mask,
            layers,
            head,
        })
    }

    /// Source context rows before embedding dropout; padded rows are zero.
    fn source_context<T: Real>(
        &self,
        store: &ParamStore<T>,
        batch: &QueryBatch,
    ) -> Result<(Vec<T>, SourceCache<T>), ModelError> {
        let d = self.config.dim;
        let k = batch.k;
        let n_rows = batch.neighbors.len();
        let emb = store.value(self.params.embedding);
        let rows: Vec<usize> = batch.neighbors.iter().map(|&n| n as usize).collect();
        let mut s = vec![T::zero(); n_rows * d];
        let mut log_interval = Vec::new();
        let mut interval_x = None;
        match self.config.positional_mode {
            PositionalMode::Position => {
                let pos = store.value(self.params.positional.expect("positional table"));
                for r in 0..n_rows {
                    if batch.mask[r] {
                        continue;
                    }
                    let slot = r % k;
                    let out = &mut s[r * d..(r + 1) * d];
                    for ((o, &e), &p) in out
                        .iter_mut()
                        .zip(emb.row(rows[r]))
                        .zip(pos.row(k - 1 - slot))
                    {
                        *o = e + p;
                    }
                }
            }
            PositionalMode::TimeInterval => {
                let ip = self.params.interval.as_ref().expect("interval params");
                let w = store.value(ip.time.weight);
                let bias = store.value(ip.time.bias);
                let mut x = vec![T::zero(); n_rows * 2 * d];
                log_interval = vec![T::zero(); n_rows];
                for r in 0..n_rows {
                    if batch.mask[r] {
                        continue;
                    }
                    let t = batch.times[r / k];
                    let lt = log1p_count::<T>(t.saturating_sub(batch.neighbor_times[r]));
                    log_interval[r] = lt;
                    let xr = &mut x[r * 2 * d..(r + 1) * 2 * d];
                    xr[..d].copy_from_slice(emb.row(rows[r]));
                    for c in 0..d {
                        xr[d + c] = lt * w.data()[c] + bias.data()[c];
                    }
                }
                s = linear(
                    &x,
                    n_rows,
                    store.value(ip.merge),
                    Some(store.value(ip.merge_bias)),
                );
                for r in 0..n_rows {
                    if batch.mask[r] {
                        s[r * d..(r + 1) * d].fill(T::zero());
                    }
                }
                interval_x = Some(x);
            }
        }
        Ok((
            s,
            SourceCache {
                rows,
                interval_x,
                log_interval,
                mask: DropoutMask::identity(),
            },
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_forward<T: Real>(
        &self,
        store: &ParamStore<T>,
        l: usize,
        h: Vec<T>,
        s: &[T],
        mask: &[bool],
        bq: usize,
        j: usize,
        k: usize,
        mode: Mode,
    ) -> Result<(Vec<T>, LayerCache<T>), ModelError> {
        let c = &self.config;
        let lp = &self.params.layers[l];
        let (d, heads, dh) = (c.dim, c.heads, c.head_dim());
        let scale = T::one() / T::lit(dh as f64).sqrt();

        let q = linear(&h, bq * j, store.value(lp.query), None);
        let kk = linear(s, bq * k, store.value(lp.key), None);
        let v = linear(s, bq * k, store.value(lp.value), None);

        let mut probs = vec![T::zero(); bq * heads * j * k];
        for b in 0..bq {
            let row_mask = &mask[b * k..(b + 1) * k];
            for hd in 0..heads {
                let off = (b * heads + hd) * j * k;
                let block = &mut probs[off..off + j * k];
                gemm(
                    scale,
                    MatRef::block(&q, d, b * j, j, hd * dh, dh),
                    MatRef::block(&kk, d, b * k, k, hd * dh, dh).t(),
                    T::zero(),
                    MatMut::new(block, j, k),
                );
                for row in block.chunks_mut(k) {
                    softmax_in_place(row, Some(row_mask))
                        .map_err(|_| ModelError::ColdSource { query: b })?;
                }
            }
        }
        let attn_mask = mode.mask::<T>(site_attention(l), probs.len(), c.attn_dropout)?;
        let mut dropped = probs.clone();
        attn_mask.apply(&mut dropped);

        let mut zc = vec![T::zero(); bq * j * d];
        for b in 0..bq {
            for hd in 0..heads {
                let off = (b * heads + hd) * j * k;
                gemm(
                    T::one(),
                    MatRef::new(&dropped[off..off + j * k], j, k),
                    MatRef::block(&v, d, b * k, k, hd * dh, dh),
                    T::zero(),
                    MatMut::block(&mut zc, d, b * j, j, hd * dh, dh),
                );
            }
        }

        let mut z = linear(&zc, bq * j, store.value(lp.output), None);
        for (zi, &hi) in z.iter_mut().zip(&h) {
            *zi += hi;
        }
        let u = linear(
            &z,
            bq * j,
            store.value(lp.ffn_w1),
            Some(store.value(lp.ffn_b1)),
        );
        let mut g: Vec<T> = u.iter().map(|&x| gelu_scalar(x)).collect();
        let ffn_mask = mode.mask::<T>(site_ffn(l), g.len(), c.hidden_dropout)?;
        ffn_mask.apply(&mut g);
        let mut out = linear(
            &g,
            bq * j,
            store.value(lp.ffn_w2),
            Some(store.value(lp.ffn_b2)),
        );
        for (o, &zi) in out.iter_mut().zip(&z) {
            *o += zi;
        }
        Ok((
            out,
            LayerCache {
                h_in: h,
                q,
                k: kk,
                v,
                probs,
                attn_mask,
                zc,
                z,
                u,
                ffn_mask,
            },
        ))
    }

    fn head_forward<T: Real>(
        &self,
        store: &ParamStore<T>,
        h: &[T],
        batch: &QueryBatch,
        mode: Mode,
    ) -> Result<(Vec<T>, HeadCache<T>), ModelError> {
        let c = &self.config;
        let d = c.dim;
        let width = c.head_input();
        let rows = batch.candidates.len();
        let mut x = vec![T::zero(); rows * width];
        let mut log_elapsed = Vec::new();
        let mut log_repeat = Vec::new();
        for r in 0..rows {
            let xr = &mut x[r * width..(r + 1) * width];
            xr[..d].copy_from_slice(&h[r * d..(r + 1) * d]);
            let mut col = d;
            if let Some(ep) = &self.params.elapsed {
                let le = batch.elapsed[r].map(log1p_count::<T>);
                log_elapsed.push(le);
                let ctx = &mut xr[col..col + d];
                match le {
                    Some(v) => {
                        let (w, b) = (store.value(ep.weight).data(), store.value(ep.bias).data());
                        for i in 0..d {
                            ctx[i] = v * w[i] + b[i];
                        }
                    }
                    None => {
                        let fresh = store.value(self.params.fresh.expect("fresh vector"));
                        ctx.copy_from_slice(fresh.data());
                    }
                }
                col += d;
            }
            if let Some(rp) = &self.params.repeat {
                let count = batch.repeats.as_ref().expect("checked")[r];
                let lr = log1p_count::<T>(count as u64);
                log_repeat.push(lr);
                let (w, b) = (store.value(rp.weight).data(), store.value(rp.bias).data());
                for i in 0..d {
                    xr[col + i] = lr * w[i] + b[i];
                }
            }
        }
        let m = linear(
            &x,
            rows,
            store.value(self.params.head_w1),
            Some(store.value(self.params.head_b1)),
        );
        let mut g: Vec<T> = m.iter().map(|&v| gelu_scalar(v)).collect();
        let mask = mode.mask::<T>(SITE_HEAD, g.len(), c.hidden_dropout)?;
        mask.apply(&mut g);
        let scores = linear(
            &g,
            rows,
            store.value(self.params.head_w2),
            Some(store.value(self.params.head_b2)),
        );
        Ok((
            scores,
            HeadCache {
                x,
                m,
                mask,
                log_elapsed,
                log_repeat,
            },
        ))
    }

    /// Reverse pass: gradients of `sum(d_scores * scores)` with respect to
    /// every parameter.
    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        fwd: &ForwardPass<T>,
        d_scores: &[T],
    ) -> Result<Gradients<T>, ModelError> {
        if d_scores.len() != fwd.scores.len() {
            return Err(ModelError::BatchShape(format!(
                "score gradient has {} entries, expected {}",
                d_scores.len(),
                fwd.scores.len()
            )));
        }
        let c = &self.config;
        let d = c.dim;
        let p = &self.params;
        let mut grads = Gradients::zeros_like(store);
        let rows = fwd.scores.len();
        let (bq, j, k) = (fwd.num_queries, fwd.num_candidates, fwd.k);

        // Prediction head.
        let head = &fwd.head;
        let mut g: Vec<T> = head.m.iter().map(|&v| gelu_scalar(v)).collect();
        head.mask.apply(&mut g);
        bias_grad(d_scores, grads.get_mut(p.head_b2));
        weight_grad(&g, rows, d_scores, grads.get_mut(p.head_w2));
        let mut dm = vec![T::zero(); rows * d];
        input_grad(d_scores, rows, store.value(p.head_w2), &mut dm, false);
        head.mask.apply(&mut dm);
        for (dv, &mv) in dm.iter_mut().zip(&head.m) {
            *dv *= gelu_grad_scalar(mv);
        }
        bias_grad(&dm, grads.get_mut(p.head_b1));
        weight_grad(&head.x, rows, &dm, grads.get_mut(p.head_w1));
        let width = c.head_input();
        let mut dx = vec![T::zero(); rows * width];
        input_grad(&dm, rows, store.value(p.head_w1), &mut dx, false);

        let mut dh = vec![T::zero(); rows * d];
        for r in 0..rows {
            let dxr = &dx[r * width..(r + 1) * width];
            dh[r * d..(r + 1) * d].copy_from_slice(&dxr[..d]);
            let mut col = d;
            if let Some(ep) = &p.elapsed {
                let ctx = &dxr[col..col + d];
                match head.log_elapsed[r] {
                    Some(v) => {
                        let dw = grads.get_mut(ep.weight).data_mut();
                        for i in 0..d {
                            dw[i] += v * ctx[i];
                        }
                        let db = grads.get_mut(ep.bias).data_mut();
                        for i in 0..d {
                            db[i] += ctx[i];
                        }
                    }
                    None => {
                        let df = grads.get_mut(p.fresh.expect("fresh vector")).data_mut();
                        for i in 0..d {
                            df[i] += ctx[i];
                        }
                    }
                }
                col += d;
            }
            if let Some(rp) = &p.repeat {
                let ctx = &dxr[col..col + d];
                let lr = head.log_repeat[r];
                let dw = grads.get_mut(rp.weight).data_mut();
                for i in 0..d {
                    dw[i] += lr * ctx[i];
                }
                let db = grads.get_mut(rp.bias).data_mut();
                for i in 0..d {
                    db[i] += ctx[i];
                }
            }
        }

        // Attention stack, last layer first.
        let mut ds = vec![T::zero(); bq * k * d];
        for l in (0..c.layers).rev() {
            dh = self.layer_backward(
                store,
                l,
                &fwd.layers[l],
                &fwd.s,
                dh,
                &mut ds,
                &mut grads,
                bq,
                j,
                k,
            );
        }

        // Candidate embeddings.
        fwd.candidate_mask.apply(&mut dh);
        {
            let de = grads.get_mut(p.embedding);
            for (r, &row) in fwd.candidate_rows.iter().enumerate() {
                for (a, &b) in de.row_mut(row).iter_mut().zip(&dh[r * d..(r + 1) * d]) {
                    *a += b;
                }
            }
        }

        // Source context.
        fwd.source.mask.apply(&mut ds);
        for (r, &masked) in fwd.neighbor_mask.iter().enumerate() {
            if masked {
                ds[r * d..(r + 1) * d].fill(T::zero());
            }
        }
        let n_rows = bq * k;
        match c.positional_mode {
            PositionalMode::Position => {
                let pos_id = p.positional.expect("positional table");
                for r in 0..n_rows {
                    if fwd.neighbor_mask[r] {
                        continue;
                    }
                    let src = &ds[r * d..(r + 1) * d];
                    for (a, &b) in grads
                        .get_mut(p.embedding)
                        .row_mut(fwd.source.rows[r])
                        .iter_mut()
                        .zip(src)
                    {
                        *a += b;
                    }
                    let slot = r % k;
                    for (a, &b) in grads
                        .get_mut(pos_id)
                        .row_mut(k - 1 - slot)
                        .iter_mut()
                        .zip(src)
                    {
                        *a += b;
                    }
                }
            }
            PositionalMode::TimeInterval => {
                let ip = p.interval.as_ref().expect("interval params");
                let x = fwd.source.interval_x.as_ref().expect("interval cache");
                weight_grad(x, n_rows, &ds, grads.get_mut(ip.merge));
                bias_grad(&ds, grads.get_mut(ip.merge_bias));
                let mut dxs = vec![T::zero(); n_rows * 2 * d];
                input_grad(&ds, n_rows, store.value(ip.merge), &mut dxs, false);
                for r in 0..n_rows {
                    if fwd.neighbor_mask[r] {
                        continue;
                    }
                    let dxr = &dxs[r * 2 * d..(r + 1) * 2 * d];
                    for (a, &b) in grads
                        .get_mut(p.embedding)
                        .row_mut(fwd.source.rows[r])
                        .iter_mut()
                        .zip(&dxr[..d])
                    {
                        *a += b;
                    }
                    let lt = fwd.source.log_interval[r];
                    let dw = grads.get_mut(ip.time.weight).data_mut();
                    for i in 0..d {
                        dw[i] += lt * dxr[d + i];
                    }
                    let db = grads.get_mut(ip.time.bias).data_mut();
                    for i in 0..d {
                        db[i] += dxr[d + i];
                    }
                }
            }
        }
        // Padding row stays frozen at zero.
        grads
            .get_mut(p.embedding)
            .row_mut(self.num_nodes)
            .fill(T::zero());
        Ok(grads)
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        l: usize,
        cache: &LayerCache<T>,
        s: &[T],
        d_out: Vec<T>,
        ds: &mut [T],
        grads: &mut Gradients<T>,
        bq: usize,
        j: usize,
        k: usize,
    ) -> Vec<T> {
        let c = &self.config;
        let lp = &self.params.layers[l];
        let (d, heads, dh) = (c.dim, c.heads, c.head_dim());
        let f = c.ffn();
        let rows = bq * j;
        let scale = T::one() / T::lit(dh as f64).sqrt();

        // H = FFN(Z) + Z
        let mut dz = d_out.clone();
        let mut g: Vec<T> = cache.u.iter().map(|&x| gelu_scalar(x)).collect();
        cache.ffn_mask.apply(&mut g);
        bias_grad(&d_out, grads.get_mut(lp.ffn_b2));
        weight_grad(&g, rows, &d_out, grads.get_mut(lp.ffn_w2));
        let mut du = vec![T::zero(); rows * f];
        input_grad(&d_out, rows, store.value(lp.ffn_w2), &mut du, false);
        cache.ffn_mask.apply(&mut du);
        for (dv, &uv) in du.iter_mut().zip(&cache.u) {
            *dv *= gelu_grad_scalar(uv);
        }
        bias_grad(&du, grads.get_mut(lp.ffn_b1));
        weight_grad(&cache.z, rows, &du, grads.get_mut(lp.ffn_w1));
        input_grad(&du, rows, store.value(lp.ffn_w1), &mut dz, true);

        // Z = concat(heads) W_o + H_prev
        weight_grad(&cache.zc, rows, &dz, grads.get_mut(lp.output));
        let mut dzc = vec![T::zero(); rows * d];
        input_grad(&dz, rows, store.value(lp.output), &mut dzc, false);
        let mut dh_prev = dz;

        // Per-query, per-head attention.
        let mut dropped = cache.probs.clone();
        cache.attn_mask.apply(&mut dropped);
        let mut dprobs = vec![T::zero(); cache.probs.len()];
        let mut dq = vec![T::zero(); rows * d];
        let mut dk = vec![T::zero(); bq * k * d];
        let mut dv = vec![T::zero(); bq * k * d];
        for b in 0..bq {
            for hd in 0..heads {
                let off = (b * heads + hd) * j * k;
                let dzc_b = MatRef::block(&dzc, d, b * j, j, hd * dh, dh);
                gemm(
                    T::one(),
                    dzc_b,
                    MatRef::block(&cache.v, d, b * k, k, hd * dh, dh).t(),
                    T::zero(),
                    MatMut::new(&mut dprobs[off..off + j * k], j, k),
                );
                gemm(
                    T::one(),
                    MatRef::new(&dropped[off..off + j * k], j, k).t(),
                    dzc_b,
                    T::one(),
                    MatMut::block(&mut dv, d, b * k, k, hd * dh, dh),
                );
            }
        }
        cache.attn_mask.apply(&mut dprobs);
        let mut dlogits = vec![T::zero(); cache.probs.len()];
        for ((p_row, dp_row), out) in cache
            .probs
            .chunks(k)
            .zip(dprobs.chunks(k))
            .zip(dlogits.chunks_mut(k))
        {
            softmax_backward_row(p_row, dp_row, out);
        }
        for b in 0..bq {
            for hd in 0..heads {
                let off = (b * heads + hd) * j * k;
                let dl = MatRef::new(&dlogits[off..off + j * k], j, k);
                gemm(
                    scale,
                    dl,
                    MatRef::block(&cache.k, d, b * k, k, hd * dh, dh),
                    T::zero(),
                    MatMut::block(&mut dq, d, b * j, j, hd * dh, dh),
                );
                gemm(
                    scale,
                    dl.t(),
                    MatRef::block(&cache.q, d, b * j, j, hd * dh, dh),
                    T::one(),
                    MatMut::block(&mut dk, d, b * k, k, hd * dh, dh),
                );
            }
        }

        weight_grad(&cache.h_in, rows, &dq, grads.get_mut(lp.query));
        input_grad(&dq, rows, store.value(lp.query), &mut dh_prev, true);
        let n_rows = bq * k;
        weight_grad(s, n_rows, &dk, grads.get_mut(lp.key));
        weight_grad(s, n_rows, &dv, grads.get_mut(lp.value));
        input_grad(&dk, n_rows, store.value(lp.key), ds, true);
        input_grad(&dv, n_rows, store.value(lp.value), ds, true);
        dh_prev
    }

    /// Source context `S` (`k x d`) of query `b`, evaluation mode, with its
    /// padding mask.
    pub fn encode_source_context<T: Real>(
        &self,
        store: &ParamStore<T>,
        batch: &QueryBatch,
        b: usize,
    ) -> Result<(DenseArray<T>, Vec<bool>), ModelError> {
        let (s, _) = self.source_context(store, batch)?;
        let (d, k) = (self.config.dim, batch.k);
        let rows = s[b * k * d..(b + 1) * k * d].to_vec();
        Ok((
            DenseArray::from_vec(&[k, d], rows)?,
            batch.mask[b * k..(b + 1) * k].to_vec(),
        ))
    }

    /// The appendix alternative to positional encoding; only available when
    /// the model is configured with [`PositionalMode::TimeInterval`].
    pub fn time_encoding_variant<T: Real>(
        &self,
        store: &ParamStore<T>,
        batch: &QueryBatch,
        b: usize,
    ) -> Result<(DenseArray<T>, Vec<bool>), ModelError> {
        if self.config.positional_mode != PositionalMode::TimeInterval {
            return Err(ModelError::Config(
                "time encoding requires positional_mode = time-interval".into(),
            ));
        }
        self.encode_source_context(store, batch, b)
    }

    /// Evaluation-mode cross-attention stack for one query: candidates `D`
    /// (`j x d`) attend to the source context `S` (`k x d`).
    pub fn cross_attention<T: Real>(
        &self,
        store: &ParamStore<T>,
        candidates: &DenseArray<T>,
        context: &DenseArray<T>,
        mask: &[bool],
    ) -> Result<DenseArray<T>, ModelError> {
        let d = self.config.dim;
        if candidates.cols() != d || context.cols() != d || mask.len() != context.rows() {
            return Err(ModelError::BatchShape(format!(
                "cross_attention expects D: j x {d}, S: k x {d} and k mask bits, got {:?}, {:?}, {}",
                candidates.shape(),
                context.shape(),
                mask.len()
            )));
        }
        if mask.iter().all(|&m| m) {
            return Err(ModelError::ColdSource { query: 0 });
        }
        let (j, k) = (candidates.rows(), context.rows());
        let mut h = candidates.data().to_vec();
        for l in 0..self.config.layers {
            let (next, _) =
                self.layer_forward(store, l, h, context.data(), mask, 1, j, k, Mode::Eval)?;
            h = next;
        }
        Ok(DenseArray::from_vec(&[j, d], h)?)
    }
}
