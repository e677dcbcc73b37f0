//! High-level policy: a transformer over subregion states with a learnable token
//! (whose output row is the global feature), and an LSTM over the per-step region
//! embeddings that emits the 16-value goal vector and the decoded waiting-time and
//! queue-length targets.
//!
//! Batched evaluation works on a pool of unique snapshots plus windows of indices into
//! that pool, so an episode's sliding histories encode each snapshot once.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{RegionalHistory, HISTORY_LEN, REGION_DIM};
use crate::nn::attention::EncoderLayerCache;
use crate::nn::layers::{sigmoid, softplus};
use crate::nn::lstm::LstmCache;
use crate::nn::{positional_table, Adam, Encoder, Linear, Lstm, Matrix, Param, Parameters};

pub const GOAL_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    pub regions: usize,
    pub history: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub ff_dim: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub goal_dim: usize,
    pub pe_scale: f64,
}

impl Default for MetaConfig {
    fn default() -> MetaConfig {
        MetaConfig {
            regions: 4,
            history: HISTORY_LEN,
            model_dim: REGION_DIM,
            heads: 2,
            encoder_layers: 3,
            ff_dim: 165,
            lstm_hidden: 256,
            lstm_layers: 4,
            goal_dim: GOAL_DIM,
            pe_scale: 10000.0,
        }
    }
}

/// Exponential moving average of magnitudes used to bring raw totals to unit scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmaScale {
    pub value: f64,
    pub initialized: bool,
}

impl Default for EmaScale {
    fn default() -> EmaScale {
        EmaScale { value: 1.0, initialized: false }
    }
}

impl EmaScale {
    pub const DECAY: f64 = 0.99;
    pub const FLOOR: f64 = 1.0;

    pub fn observe(&mut self, x: f64) {
        let a = libm::fabs(x);
        if self.initialized {
            self.value = Self::DECAY * self.value + (1.0 - Self::DECAY) * a;
        } else {
            self.value = a;
            self.initialized = true;
        }
    }

    pub fn scale(&self) -> f64 {
        self.value.max(Self::FLOOR)
    }

    pub fn normalize(&self, x: f64) -> f64 {
        x / self.scale()
    }

    pub fn denormalize(&self, x: f64) -> f64 {
        x * self.scale()
    }
}

/// Scales for the waiting-time and queue-length totals.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GoalScales {
    pub waiting: EmaScale,
    pub queue: EmaScale,
}

impl GoalScales {
    pub fn observe(&mut self, waiting: f64, queue: f64) {
        self.waiting.observe(waiting);
        self.queue.observe(queue);
    }

    pub fn normalize(&self, waiting: f64, queue: f64) -> (f64, f64) {
        (self.waiting.normalize(waiting), self.queue.normalize(queue))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubGoal {
    pub vector: Vec<f64>,
    /// Targets in normalized space, both >= 0.
    pub waiting_norm: f64,
    pub queue_norm: f64,
    /// Targets in raw units (seconds, vehicles).
    pub waiting: f64,
    pub queue: f64,
}

/// Snapshot pool `(K * M, 4)` and windows of `history` pool indices each, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalBatch {
    pub snapshots: Matrix,
    pub windows: Vec<Vec<usize>>,
}

impl GoalBatch {
    pub fn from_history(history: &RegionalHistory) -> GoalBatch {
        let tensor = history.tensor();
        let rows = tensor.len() / REGION_DIM;
        GoalBatch {
            snapshots: Matrix { rows, cols: REGION_DIM, data: tensor },
            windows: alloc::vec![(0..HISTORY_LEN).collect()],
        }
    }

    /// Pool = a zero snapshot followed by `episode` snapshots; window `t` ends at snapshot
    /// `t` and is zero-padded at the front.
    pub fn sliding(episode: &[Vec<f64>], regions: usize, history: usize) -> GoalBatch {
        let width = regions * REGION_DIM;
        let mut data = alloc::vec![0.0; width];
        for s in episode {
            data.extend_from_slice(s);
        }
        let windows = (0..episode.len())
            .map(|t| (0..history).map(|k| (t + 2 + k).saturating_sub(history)).collect())
            .collect();
        GoalBatch { snapshots: Matrix { rows: data.len() / REGION_DIM, cols: REGION_DIM, data }, windows }
    }

    pub fn select(&self, idx: &[usize]) -> GoalBatch {
        GoalBatch { snapshots: self.snapshots.clone(), windows: idx.iter().map(|&i| self.windows[i].clone()).collect() }
    }
}

#[derive(Debug, Clone)]
pub struct GoalCache {
    encoder: Vec<EncoderLayerCache>,
    lstm: LstmCache,
    last: Matrix,
    vector: Matrix,
    raw: Matrix,
    pool: usize,
    batch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalOutput {
    /// `(B, goal_dim)`.
    pub vectors: Matrix,
    /// `(B, 2)` normalized (waiting, queue) targets.
    pub targets: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaPolicy {
    pub config: MetaConfig,
    pub token: Param,
    pub encoder: Encoder,
    pub lstm: Lstm,
    pub goal_proj: Linear,
    pub goal_head: Linear,
    positions: Matrix,
}

impl MetaPolicy {
    pub fn new<R: Rng + ?Sized>(config: MetaConfig, rng: &mut R) -> Result<MetaPolicy> {
        if config.regions == 0 {
            return Err(Error::RegionCount { expected: 1, got: 0 });
        }
        let d = config.model_dim;
        Ok(MetaPolicy {
            config,
            token: Param::uniform("meta.token", 1, d, 1.0, rng),
            encoder: Encoder::new("meta.encoder", config.encoder_layers, d, config.heads, config.ff_dim, rng)?,
            lstm: Lstm::new("meta.lstm", config.regions * d, config.lstm_hidden, config.lstm_layers, rng),
            goal_proj: Linear::new("meta.goal_proj", config.lstm_hidden, config.goal_dim, 1.0, rng),
            goal_head: Linear::new("meta.goal_head", config.goal_dim, 2, 1.0, rng),
            positions: positional_table(config.regions + 1, d, config.pe_scale)?,
        })
    }

    fn seq_len(&self) -> usize {
        self.config.regions + 1
    }

    /// Token-prefixed, position-shifted encoder input for `k` snapshots stored in `pool`.
    fn encoder_input(&self, pool: &Matrix) -> Result<Matrix> {
        let (m, d) = (self.config.regions, self.config.model_dim);
        if pool.cols != d || pool.rows % m != 0 {
            return Err(Error::Shape(format!("snapshot pool {}x{} for {m} regions", pool.rows, pool.cols)));
        }
        let k = pool.rows / m;
        let s = self.seq_len();
        let mut x = Matrix::zeros(k * s, d);
        for j in 0..k {
            for p in 0..s {
                let src = if p == 0 { &self.token.value.data[..] } else { pool.row(j * m + p - 1) };
                for (c, out) in x.row_mut(j * s + p).iter_mut().enumerate() {
                    *out = src[c] + self.positions.get(p, c);
                }
            }
        }
        Ok(x)
    }

    /// Token row and region rows for one `(M, 4)` snapshot.
    pub fn encode_timestep(&self, snapshot: &[f64]) -> Result<(Vec<f64>, Matrix)> {
        let (m, d) = (self.config.regions, self.config.model_dim);
        if snapshot.len() != m * d {
            return Err(Error::RegionCount { expected: m, got: snapshot.len() / d });
        }
        let pool = Matrix { rows: m, cols: d, data: snapshot.to_vec() };
        let (y, _) = self.encoder.forward(&self.encoder_input(&pool)?, self.seq_len())?;
        Ok((y.row(0).to_vec(), y.rows_slice(1, m)))
    }

    /// Global feature: the token embedding of the newest snapshot (a zero snapshot when empty).
    pub fn global_feature(&self, history: &RegionalHistory) -> Result<Vec<f64>> {
        match history.newest() {
            Some(s) => Ok(self.encode_timestep(s)?.0),
            None => Ok(self.encode_timestep(&alloc::vec![0.0; self.config.regions * self.config.model_dim])?.0),
        }
    }

    pub fn forward(&self, batch: &GoalBatch) -> Result<(GoalOutput, GoalCache)> {
        let (m, d, t_len) = (self.config.regions, self.config.model_dim, self.config.history);
        let s = self.seq_len();
        let (enc, encoder) = self.encoder.forward(&self.encoder_input(&batch.snapshots)?, s)?;
        let pool = batch.snapshots.rows / m;
        let b = batch.windows.len();
        if b == 0 {
            return Err(Error::Shape("empty goal batch".into()));
        }
        let mut x = Matrix::zeros(t_len * b, m * d);
        for (w, window) in batch.windows.iter().enumerate() {
            if window.len() != t_len {
                return Err(Error::Shape(format!("window of {} steps, expected {t_len}", window.len())));
            }
            for (t, &j) in window.iter().enumerate() {
                if j >= pool {
                    return Err(Error::Shape(format!("snapshot {j} outside pool of {pool}")));
                }
                let row = x.row_mut(t * b + w);
                for r in 0..m {
                    row[r * d..(r + 1) * d].copy_from_slice(enc.row(j * s + 1 + r));
                }
            }
        }
        let (seq, _, lstm) = self.lstm.forward(&x, t_len)?;
        let last = seq.rows_slice((t_len - 1) * b, b);
        let vector = self.goal_proj.forward(&last)?;
        let raw = self.goal_head.forward(&vector)?;
        let targets = raw.map(softplus);
        Ok((
            GoalOutput { vectors: vector.clone(), targets },
            GoalCache { encoder, lstm, last, vector, raw, pool, batch: b },
        ))
    }

    /// Backpropagate `dL/dtargets` (B, 2) and optionally `dL/dvectors` (B, goal_dim).
    pub fn backward(&mut self, batch: &GoalBatch, cache: &GoalCache, d_targets: &Matrix, d_vectors: Option<&Matrix>) {
        let (m, d, t_len) = (self.config.regions, self.config.model_dim, self.config.history);
        let s = self.seq_len();
        let b = cache.batch;
        let mut d_raw = d_targets.clone();
        for (g, r) in d_raw.data.iter_mut().zip(&cache.raw.data) {
            *g *= sigmoid(*r);
        }
        let mut d_vec = self.goal_head.backward(&cache.vector, &d_raw);
        if let Some(extra) = d_vectors {
            d_vec.add_assign(extra);
        }
        let d_last = self.goal_proj.backward(&cache.last, &d_vec);
        let mut d_seq = Matrix::zeros(t_len * b, self.config.lstm_hidden);
        d_seq.data[(t_len - 1) * b * self.config.lstm_hidden..].copy_from_slice(&d_last.data);
        let dx = self.lstm.backward(&cache.lstm, &d_seq);
        let mut d_enc = Matrix::zeros(cache.pool * s, d);
        for (w, window) in batch.windows.iter().enumerate() {
            for (t, &j) in window.iter().enumerate() {
                let src = dx.row(t * b + w);
                for r in 0..m {
                    for (g, v) in d_enc.row_mut(j * s + 1 + r).iter_mut().zip(&src[r * d..(r + 1) * d]) {
                        *g += v;
                    }
                }
            }
        }
        let d_in = self.encoder.backward(&cache.encoder, &d_enc);
        for j in 0..cache.pool {
            for (g, v) in self.token.grad.data.iter_mut().zip(d_in.row(j * s)) {
                *g += v;
            }
        }
    }

    pub fn generate_subgoal(&self, history: &RegionalHistory, scales: &GoalScales) -> Result<SubGoal> {
        let (out, _) = self.forward(&GoalBatch::from_history(history))?;
        Ok(decode(&out, 0, scales))
    }

    /// One regression step on squared error against normalized `(W, Q)` targets; returns the
    /// batch-mean loss (sum of both squared components per sample).
    pub fn pretrain_step(&mut self, batch: &GoalBatch, observed: &[(f64, f64)], adam: &mut Adam) -> Result<f64> {
        if observed.len() != batch.windows.len() {
            return Err(Error::Shape(format!("{} targets for {} windows", observed.len(), batch.windows.len())));
        }
        let (out, cache) = self.forward(batch)?;
        let n = observed.len() as f64;
        let mut loss = 0.0;
        let mut d = Matrix::zeros(observed.len(), 2);
        for (i, &(w, q)) in observed.iter().enumerate() {
            let (ew, eq) = (out.targets.get(i, 0) - w, out.targets.get(i, 1) - q);
            loss += (ew * ew + eq * eq) / n;
            d.set(i, 0, 2.0 * ew / n);
            d.set(i, 1, 2.0 * eq / n);
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(format!("meta pretraining loss {loss}")));
        }
        self.zero_grad();
        self.backward(batch, &cache, &d, None);
        adam.step(self)?;
        Ok(loss)
    }
}

/// Decode row `i` of a batched output.
pub fn decode(out: &GoalOutput, i: usize, scales: &GoalScales) -> SubGoal {
    let (wn, qn) = (out.targets.get(i, 0), out.targets.get(i, 1));
    SubGoal {
        vector: out.vectors.row(i).to_vec(),
        waiting_norm: wn,
        queue_norm: qn,
        waiting: scales.waiting.denormalize(wn),
        queue: scales.queue.denormalize(qn),
    }
}

impl Parameters for MetaPolicy {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.token);
        self.encoder.visit(f);
        self.lstm.visit(f);
        self.goal_proj.visit(f);
        self.goal_head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.token);
        self.encoder.visit_mut(f);
        self.lstm.visit_mut(f);
        self.goal_proj.visit_mut(f);
        self.goal_head.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check, project, projection};
    use crate::nn::layers::positional_encoding;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(regions: usize) -> MetaConfig {
        MetaConfig { regions, history: 3, ff_dim: 6, lstm_hidden: 3, lstm_layers: 2, goal_dim: 4, ..MetaConfig::default() }
    }

    fn random_snapshot(m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..m * 4).map(|_| rng.gen_range(0.0..1.0)).collect()
    }

    fn zero_outputs(meta: &mut MetaPolicy) {
        for layer in &mut meta.encoder.layers {
            layer.attention.output = Linear::zeros("o", 4, 4);
            layer.ff_out = Linear::zeros("f", meta.config.ff_dim, 4);
        }
    }

    #[test]
    fn timestep_shapes_and_residual_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut meta = MetaPolicy::new(MetaConfig::default(), &mut rng).unwrap();
        let snap = random_snapshot(4, &mut rng);
        let (eg, regions) = meta.encode_timestep(&snap).unwrap();
        assert_eq!((eg.len(), regions.shape()), (4, (4, 4)));
        zero_outputs(&mut meta);
        let (eg, regions) = meta.encode_timestep(&snap).unwrap();
        let pe0 = positional_encoding(0, 4, 10000.0).unwrap();
        for c in 0..4 {
            assert_eq!(eg[c], meta.token.value.data[c] + pe0[c]);
        }
        for r in 0..4 {
            let pe = positional_encoding(r + 1, 4, 10000.0).unwrap();
            for c in 0..4 {
                assert_eq!(regions.get(r, c), snap[r * 4 + c] + pe[c]);
            }
        }
        assert!(meta.encode_timestep(&snap[..8]).is_err());
    }

    #[test]
    fn distinct_snapshots_give_distinct_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let meta = MetaPolicy::new(MetaConfig::default(), &mut rng).unwrap();
        for _ in 0..10 {
            let a = meta.encode_timestep(&random_snapshot(4, &mut rng)).unwrap().0;
            let b = meta.encode_timestep(&random_snapshot(4, &mut rng)).unwrap().0;
            assert_ne!(a, b);
        }
    }

    #[test]
    fn empty_history_feature_is_token_plus_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut meta = MetaPolicy::new(MetaConfig::default(), &mut rng).unwrap();
        zero_outputs(&mut meta);
        meta.token.value.fill(0.0);
        let f = meta.global_feature(&RegionalHistory::new(4)).unwrap();
        assert_eq!(f, alloc::vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn feature_width_independent_of_regions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in [1, 4, 9] {
            let meta = MetaPolicy::new(MetaConfig { regions: m, lstm_hidden: 8, lstm_layers: 1, ..MetaConfig::default() }, &mut rng).unwrap();
            let mut h = RegionalHistory::new(m);
            h.push(&random_snapshot(m, &mut rng)).unwrap();
            assert_eq!(meta.global_feature(&h).unwrap().len(), 4);
            let goal = meta.generate_subgoal(&h, &GoalScales::default()).unwrap();
            assert_eq!(goal.vector.len(), 16);
        }
    }

    #[test]
    fn zero_recurrent_path_gives_bias_goal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut meta = MetaPolicy::new(MetaConfig::default(), &mut rng).unwrap();
        meta.lstm.visit_mut(&mut |p| p.value.fill(0.0));
        meta.goal_proj.weight.value.fill(0.0);
        meta.goal_head.weight.value.fill(0.0);
        let mut h = RegionalHistory::new(4);
        h.push(&random_snapshot(4, &mut rng)).unwrap();
        let goal = meta.generate_subgoal(&h, &GoalScales::default()).unwrap();
        assert_eq!(goal.vector, meta.goal_proj.bias.value.data);
        assert_eq!(goal.waiting_norm, softplus(meta.goal_head.bias.value.data[0]));
        assert_eq!(goal.queue_norm, softplus(meta.goal_head.bias.value.data[1]));
    }

    #[test]
    fn single_layer_single_step_goal_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = MetaConfig { regions: 1, history: 1, lstm_hidden: 2, lstm_layers: 1, goal_dim: 3, ..MetaConfig::default() };
        let meta = MetaPolicy::new(cfg, &mut rng).unwrap();
        let snap = random_snapshot(1, &mut rng);
        let (_, regions) = meta.encode_timestep(&snap).unwrap();
        let x = regions.row(0);
        let layer = &meta.lstm.layers[0];
        let s = |v: f64| 1.0 / (1.0 + libm::exp(-v));
        let mut hidden = [0.0; 2];
        for u in 0..2 {
            let pre = |g: usize| (0..4).map(|c| x[c] * layer.w_input.value.get(c, g * 2 + u)).sum::<f64>() + layer.bias.value.data[g * 2 + u];
            let c = s(pre(0)) * libm::tanh(pre(2));
            hidden[u] = s(pre(3)) * libm::tanh(c);
        }
        let g: Vec<f64> = (0..3)
            .map(|k| meta.goal_proj.bias.value.data[k] + (0..2).map(|u| hidden[u] * meta.goal_proj.weight.value.get(u, k)).sum::<f64>())
            .collect();
        let batch = GoalBatch { snapshots: Matrix { rows: 1, cols: 4, data: snap }, windows: alloc::vec![alloc::vec![0]] };
        let (out, _) = meta.forward(&batch).unwrap();
        for k in 0..3 {
            assert!((out.vectors.data[k] - g[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn targets_nonnegative_for_extreme_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut meta = MetaPolicy::new(small(2), &mut rng).unwrap();
        meta.goal_head.visit_mut(&mut |p| p.value.scale(-1e3));
        let batch = GoalBatch::sliding(&[random_snapshot(2, &mut rng), random_snapshot(2, &mut rng)], 2, 3);
        let (out, _) = meta.forward(&batch).unwrap();
        assert!(out.targets.data.iter().all(|&v| v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn sliding_windows_pad_with_zero_snapshot() {
        let snaps = alloc::vec![alloc::vec![1.0; 4], alloc::vec![2.0; 4], alloc::vec![3.0; 4]];
        let b = GoalBatch::sliding(&snaps, 1, 2);
        assert_eq!(b.windows, alloc::vec![alloc::vec![0, 1], alloc::vec![1, 2], alloc::vec![2, 3]]);
        assert_eq!(b.snapshots.row(0), &[0.0; 4]);
    }

    #[test]
    fn batched_goals_match_history_goals() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let meta = MetaPolicy::new(small(2), &mut rng).unwrap();
        let snaps: Vec<Vec<f64>> = (0..5).map(|_| random_snapshot(2, &mut rng)).collect();
        let (out, _) = meta.forward(&GoalBatch::sliding(&snaps, 2, 3)).unwrap();
        let mut h = RegionalHistory::new(2);
        for (t, s) in snaps.iter().enumerate() {
            h.push(s).unwrap();
            // history buffers are 20 long; compare with a 3-step window built the same way
            let tail: Vec<f64> = h.tensor()[(HISTORY_LEN - 3) * 8..].to_vec();
            let single = GoalBatch { snapshots: Matrix { rows: 6, cols: 4, data: tail }, windows: alloc::vec![alloc::vec![0, 1, 2]] };
            let (one, _) = meta.forward(&single).unwrap();
            assert!((one.targets.row(0)[0] - out.targets.row(t)[0]).abs() < 1e-12);
            assert!((one.vectors.row(0)[3] - out.vectors.row(t)[3]).abs() < 1e-12);
        }
    }

    #[test]
    fn goal_pipeline_gradients() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(50 + seed);
            let m = rng.gen_range(1..3);
            let mut meta = MetaPolicy::new(small(m), &mut rng).unwrap();
            let snaps: Vec<Vec<f64>> = (0..4).map(|_| random_snapshot(m, &mut rng)).collect();
            let batch = GoalBatch::sliding(&snaps, m, 3);
            let wt = projection(4 * 2, &mut rng);
            let wv = projection(4 * 4, &mut rng);
            let loss = |meta: &MetaPolicy, _: &[f64]| {
                let (out, _) = meta.forward(&batch).unwrap();
                project(&out.targets.data, &wt) + project(&out.vectors.data, &wv)
            };
            let r = check(
                &mut meta,
                &[],
                loss,
                |meta, _| {
                    let (_, cache) = meta.forward(&batch).unwrap();
                    let dt = Matrix::from_vec(4, 2, wt.clone()).unwrap();
                    let dv = Matrix::from_vec(4, 4, wv.clone()).unwrap();
                    meta.backward(&batch, &cache, &dt, Some(&dv));
                    Vec::new()
                },
                usize::MAX,
            );
            assert!(r.max_rel_error < 1e-4, "seed {seed}: {}", r.worst);
        }
    }

    #[test]
    fn pretraining_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut meta = MetaPolicy::new(small(1), &mut rng).unwrap();
        let snaps: Vec<Vec<f64>> = (0..6).map(|_| random_snapshot(1, &mut rng)).collect();
        let batch = GoalBatch::sliding(&snaps, 1, 3);
        // Exact hit: loss 0 and no movement.
        let (out, _) = meta.forward(&batch).unwrap();
        let exact: Vec<(f64, f64)> = (0..6).map(|i| (out.targets.get(i, 0), out.targets.get(i, 1))).collect();
        let before = meta.flat_values();
        let loss = meta.pretrain_step(&batch, &exact, &mut Adam::default()).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(meta.flat_values(), before);
        // Regression decreases loss on a fixed batch.
        let targets: Vec<(f64, f64)> = (0..6).map(|i| (0.5 + 0.1 * i as f64, 1.0)).collect();
        let mut adam = Adam::with_lr(1e-2);
        let mut losses = Vec::new();
        for _ in 0..100 {
            losses.push(meta.pretrain_step(&batch, &targets, &mut adam).unwrap());
        }
        assert!(losses[99] < losses[0] * 0.5, "{} -> {}", losses[0], losses[99]);
        assert!(meta.pretrain_step(&batch, &targets[..2], &mut adam).is_err());
    }

    #[test]
    fn ema_scale() {
        let mut s = EmaScale::default();
        assert_eq!(s.scale(), 1.0);
        s.observe(200.0);
        assert_eq!(s.scale(), 200.0);
        s.observe(100.0);
        assert!((s.scale() - 199.0).abs() < 1e-12);
        assert_eq!(s.denormalize(s.normalize(37.0)), 37.0);
        s.value = 0.2;
        assert_eq!(s.scale(), 1.0);
    }
}
