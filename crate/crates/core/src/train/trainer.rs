use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{mix_seed, sim_seed, TrainConfig, Variant};
use super::gae::{gae, normalize};
use super::loss::{meta_loss, ppo_loss, sub_loss, MetaLossOutput, PpoBatch, PpoOutput};
use super::reward::{goal_reward, local_reward, RewardTerms};
use crate::error::{Error, Result};
use crate::features::{all_observations, global_totals, measure, regional_snapshot, GlobalTotals, RegionalHistory, RunningMax, OBS_DIM, REGION_DIM};
use crate::meta::{GoalBatch, GoalScales, MetaConfig, MetaPolicy};
use crate::network::Network;
use crate::nn::layers::{log_softmax, softmax_in_place};
use crate::nn::{Adam, Matrix, Parameters};
use crate::sim::{max_pressure_actions, FixedTime, FlowSpec, Simulation, ROLLOUT_STEPS};
use crate::sub::{argmax_actions, AgentBatch, SubConfig, SubPolicy};

const INIT_TAG: u64 = 0x1111;
const ENV_TAG: u64 = 0x2222;
const SAMPLE_TAG: u64 = 0x3333;
const UPDATE_TAG: u64 = 0x4444;
const PRETRAIN_TAG: u64 = 0x5555;

/// One environment episode collected with frozen parameters. Per-agent arrays are
/// step-major: index `t * agents + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub sim_seed: u64,
    pub steps: usize,
    pub agents: usize,
    pub observations: Matrix,
    pub context: Matrix,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// Bootstrap values of the state after the last step.
    pub final_values: Vec<f64>,
    pub terms: Vec<RewardTerms>,
    pub local_rewards: Vec<f64>,
    /// Network totals after each step.
    pub totals: Vec<GlobalTotals>,
    /// Regional snapshot seen at each decision.
    pub snapshots: Vec<Vec<f64>>,
    pub att: f64,
    pub adt: f64,
    pub departed: usize,
}

impl Rollout {
    pub fn mean_local_reward(&self) -> f64 {
        self.local_rewards.iter().sum::<f64>() / self.local_rewards.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub att: f64,
    pub adt: f64,
    pub mean_reward: f64,
    pub departed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    Ftc,
    MaxPressure,
}

impl Controller {
    pub fn parse(name: &str) -> Result<Controller> {
        match name {
            "ftc" => Ok(Controller::Ftc),
            "maxpressure" | "max_pressure" => Ok(Controller::MaxPressure),
            other => Err(Error::InvalidConfig(format!("unknown controller `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Controller::Ftc => "ftc",
            Controller::MaxPressure => "maxpressure",
        }
    }
}

/// One episode of a classical controller on the simulator seed derived from `run_seed`.
pub fn run_baseline(network: Arc<Network>, flow: &FlowSpec, controller: Controller, run_seed: u64) -> Result<Evaluation> {
    let mut sim = Simulation::new(network.clone(), flow.clone(), sim_seed(flow.seed, run_seed))?;
    let ftc = FixedTime::default();
    let mut reward = 0.0;
    let mut count = 0usize;
    for step in 0..ROLLOUT_STEPS {
        let actions = match controller {
            Controller::Ftc => ftc.actions(&network, step),
            Controller::MaxPressure => max_pressure_actions(&network, &sim.state),
        };
        sim.apply_actions(&actions)?;
        for inter in &network.intersections {
            reward += local_reward(&RewardTerms::from_measures(&measure(&network, &sim.state, inter.id)));
            count += 1;
        }
    }
    Ok(Evaluation { att: sim.att()?, adt: sim.adt()?, mean_reward: reward / count.max(1) as f64, departed: sim.state.departed.len() })
}

/// Per-update quantities derived from a set of rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    /// `r_i + r_g`, per rollout, step-major.
    pub rewards: Vec<Vec<f64>>,
    /// Shared goal reward per rollout step.
    pub goal_rewards: Vec<Vec<f64>>,
    pub advantages: Vec<Vec<f64>>,
    pub returns: Vec<Vec<f64>>,
    /// Normalized (waiting, queue) outcomes each goal is scored against.
    pub outcomes: Vec<Vec<(f64, f64)>>,
    /// Normalized goals, zero when the variant has none.
    pub goals: Vec<Vec<(f64, f64)>>,
    pub goal_batch: GoalBatch,
    /// `(rollout, step)` for each window of `goal_batch`.
    pub window_owner: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: u64,
    pub seed: u64,
    pub variant: Variant,
    /// Mean environment reward per agent-step.
    pub mean_reward: f64,
    /// Mean shared goal reward per step.
    pub mean_goal_reward: f64,
    pub att: f64,
    pub adt: f64,
    pub meta_loss: f64,
    pub sub_loss: f64,
    /// Mean pre-clipping norm of the sub-policy gradient.
    pub grad_norm: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub rolled_back: bool,
}

#[derive(Debug, Clone)]
struct Backup {
    meta: MetaPolicy,
    sub: SubPolicy,
    meta_opt: Adam,
    sub_opt: Adam,
    scales: GoalScales,
}

/// Joint learner: meta-policy, shared sub-policy, their optimizers and goal scales.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub network: Arc<Network>,
    pub flow: FlowSpec,
    pub meta: MetaPolicy,
    pub sub: SubPolicy,
    pub meta_opt: Adam,
    pub sub_opt: Adam,
    pub scales: GoalScales,
    /// Completed updates.
    pub episode: u64,
    pub lr_halved: bool,
    neighbors: Vec<Vec<usize>>,
}

impl Trainer {
    pub fn new(mut config: TrainConfig, network: Arc<Network>, flow: FlowSpec) -> Result<Trainer> {
        config.validate()?;
        flow.validate()?;
        config.meta = MetaConfig { regions: network.regions.count(), ..config.meta };
        config.sub = SubConfig { obs_dim: OBS_DIM, ..config.sub };
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, INIT_TAG]));
        let meta = MetaPolicy::new(config.meta, &mut rng)?;
        let sub = SubPolicy::new(config.sub.clone(), &mut rng)?;
        let adam = Adam { lr: config.lr, max_grad_norm: Some(config.max_grad_norm), ..Adam::default() };
        let neighbors = network.neighbor_table();
        Ok(Trainer { config, network, flow, meta, sub, meta_opt: adam, sub_opt: adam, scales: GoalScales::default(), episode: 0, lr_halved: false, neighbors })
    }

    pub fn agents(&self) -> usize {
        self.network.num_intersections()
    }

    /// Neighbour rows for `steps` stacked blocks of agents; empty lists when GAC is ablated.
    pub fn neighbor_rows(&self, steps: usize) -> Vec<Vec<usize>> {
        if self.config.variant.uses_gac() {
            AgentBatch::tiled_neighbors(&self.neighbors, steps)
        } else {
            alloc::vec![Vec::new(); steps * self.agents()]
        }
    }

    fn context_row(&self, history: &RegionalHistory) -> Result<Vec<f64>> {
        let cfg = &self.sub.config;
        let mut row = if self.config.variant.uses_global_feature() {
            self.meta.global_feature(history)?
        } else {
            alloc::vec![0.0; cfg.global_dim]
        };
        if cfg.include_goal {
            if self.config.variant.uses_meta() {
                row.extend(self.meta.generate_subgoal(history, &self.scales)?.vector);
            } else {
                row.extend(core::iter::repeat(0.0).take(cfg.goal_dim));
            }
        }
        Ok(row)
    }

    fn policy_batch(&self, sim: &Simulation, history: &RegionalHistory) -> Result<AgentBatch> {
        let n = self.agents();
        let obs = all_observations(&self.network, &sim.state);
        let row = self.context_row(history)?;
        let mut context = Matrix::zeros(n, row.len());
        for i in 0..n {
            context.row_mut(i).copy_from_slice(&row);
        }
        Ok(AgentBatch { observations: Matrix { rows: n, cols: OBS_DIM, data: obs }, neighbors: self.neighbor_rows(1), context })
    }

    /// Run one episode. With `sampler` actions are drawn from the policy, otherwise argmax.
    pub fn run_episode_with(&self, seed: u64, mut sampler: Option<&mut ChaCha8Rng>) -> Result<Rollout> {
        let net = self.network.clone();
        let n = self.agents();
        let m = net.regions.count();
        let mut sim = Simulation::new(net.clone(), self.flow.clone(), seed)?;
        let mut history = RegionalHistory::new(m);
        let mut wait_scale = RunningMax::default();
        let ctx_dim = self.sub.config.fused_dim() - self.sub.config.gac_dim();
        let mut r = Rollout {
            sim_seed: seed,
            steps: 0,
            agents: n,
            observations: Matrix::zeros(0, OBS_DIM),
            context: Matrix::zeros(0, ctx_dim),
            actions: Vec::new(),
            log_probs: Vec::new(),
            values: Vec::new(),
            final_values: Vec::new(),
            terms: Vec::new(),
            local_rewards: Vec::new(),
            totals: Vec::new(),
            snapshots: Vec::new(),
            att: 0.0,
            adt: 0.0,
            departed: 0,
        };
        let (mut obs_rows, mut ctx_rows) = (Vec::new(), Vec::new());
        while r.steps < ROLLOUT_STEPS && !sim.done() {
            let snap = regional_snapshot(&net, &sim.state, &mut wait_scale);
            history.push(&snap)?;
            let batch = self.policy_batch(&sim, &history)?;
            let (out, _) = self.sub.forward::<ChaCha8Rng>(&batch, None)?;
            let actions = match sampler.as_deref_mut() {
                Some(rng) => (0..n).map(|i| sample(out.logits.row(i), rng)).collect(),
                None => argmax_actions(&out.logits),
            };
            for (i, &a) in actions.iter().enumerate() {
                r.log_probs.push(log_softmax(out.logits.row(i))[a]);
                r.values.push(out.value.get(i, 0));
            }
            sim.apply_actions(&actions)?;
            for inter in &net.intersections {
                let terms = RewardTerms::from_measures(&measure(&net, &sim.state, inter.id));
                r.local_rewards.push(local_reward(&terms));
                r.terms.push(terms);
            }
            r.totals.push(global_totals(&sim.state));
            r.snapshots.push(snap);
            r.actions.extend(actions);
            obs_rows.push(batch.observations);
            ctx_rows.push(batch.context);
            r.steps += 1;
        }
        let snap = regional_snapshot(&net, &sim.state, &mut wait_scale);
        history.push(&snap)?;
        let (out, _) = self.sub.forward::<ChaCha8Rng>(&self.policy_batch(&sim, &history)?, None)?;
        r.final_values = out.value.data;
        r.observations = Matrix::vcat(&obs_rows.iter().collect::<Vec<_>>());
        r.context = Matrix::vcat(&ctx_rows.iter().collect::<Vec<_>>());
        r.att = sim.att()?;
        r.adt = sim.adt()?;
        r.departed = sim.state.departed.len();
        Ok(r)
    }

    /// Training rollout for environment `env` of the current episode. Read-only, so
    /// callers may run several concurrently.
    pub fn collect(&self, env: usize) -> Result<Rollout> {
        self.collect_tagged(self.episode, env, ENV_TAG)
    }

    fn collect_tagged(&self, episode: u64, env: usize, tag: u64) -> Result<Rollout> {
        let run = mix_seed(&[self.config.seed, episode, env as u64, tag]);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[run, SAMPLE_TAG]));
        self.run_episode_with(sim_seed(self.flow.seed, run), Some(&mut rng))
    }

    /// Greedy evaluation on the simulator seed derived from `run_seed`.
    pub fn evaluate(&self, run_seed: u64) -> Result<Evaluation> {
        let r = self.run_episode_with(sim_seed(self.flow.seed, run_seed), None)?;
        Ok(Evaluation { att: r.att, adt: r.adt, mean_reward: r.mean_local_reward(), departed: r.departed })
    }

    pub fn observe_scales(&mut self, rollouts: &[Rollout]) {
        for r in rollouts {
            for t in &r.totals {
                self.scales.observe(t.waiting_time, t.queue_length);
            }
        }
    }

    fn outcome_at(&self, r: &Rollout, t: usize) -> (f64, f64) {
        let k = (t + self.config.goal_horizon - 1).min(r.totals.len() - 1);
        self.scales.normalize(r.totals[k].waiting_time, r.totals[k].queue_length)
    }

    /// Goal batch pooling every rollout's snapshots, one window per rollout step.
    pub fn goal_batch(&self, rollouts: &[Rollout]) -> (GoalBatch, Vec<(usize, usize)>) {
        let m = self.meta.config.regions;
        let h = self.meta.config.history;
        let mut data = Vec::new();
        let mut windows = Vec::new();
        let mut owner = Vec::new();
        for (ri, r) in rollouts.iter().enumerate() {
            let base = data.len() / (m * REGION_DIM);
            let b = GoalBatch::sliding(&r.snapshots, m, h);
            data.extend_from_slice(&b.snapshots.data);
            for (t, w) in b.windows.into_iter().enumerate() {
                windows.push(w.into_iter().map(|j| j + base).collect());
                owner.push((ri, t));
            }
        }
        (GoalBatch { snapshots: Matrix { rows: data.len() / REGION_DIM, cols: REGION_DIM, data }, windows }, owner)
    }

    pub fn prepare(&self, rollouts: &[Rollout]) -> Result<Prepared> {
        let w = self.config.effective_weights();
        let strict = self.config.strict_paper_mode;
        let (goal_batch, window_owner) = self.goal_batch(rollouts);
        let outcomes: Vec<Vec<(f64, f64)>> = rollouts.iter().map(|r| (0..r.steps).map(|t| self.outcome_at(r, t)).collect()).collect();
        let mut goals: Vec<Vec<(f64, f64)>> = rollouts.iter().map(|r| alloc::vec![(0.0, 0.0); r.steps]).collect();
        let mut goal_rewards: Vec<Vec<f64>> = rollouts.iter().map(|r| alloc::vec![0.0; r.steps]).collect();
        if self.config.variant.uses_subgoal() && !window_owner.is_empty() {
            let (out, _) = self.meta.forward(&goal_batch)?;
            for (k, &(ri, t)) in window_owner.iter().enumerate() {
                let g = (out.targets.get(k, 0), out.targets.get(k, 1));
                goals[ri][t] = g;
                goal_rewards[ri][t] = goal_reward(outcomes[ri][t], g, w.goal(), strict);
            }
        }
        let mut rewards = Vec::with_capacity(rollouts.len());
        let mut advantages = Vec::with_capacity(rollouts.len());
        let mut returns = Vec::with_capacity(rollouts.len());
        for (ri, r) in rollouts.iter().enumerate() {
            let n = r.agents;
            let rew: Vec<f64> = (0..r.steps * n).map(|k| r.local_rewards[k] + goal_rewards[ri][k / n]).collect();
            let mut adv = alloc::vec![0.0; r.steps * n];
            let mut ret = alloc::vec![0.0; r.steps * n];
            for i in 0..n {
                let ri_rew: Vec<f64> = (0..r.steps).map(|t| rew[t * n + i]).collect();
                let mut vals: Vec<f64> = (0..r.steps).map(|t| r.values[t * n + i]).collect();
                vals.push(r.final_values[i]);
                let (a, g) = gae(&ri_rew, &vals, w.gamma, w.lambda);
                for t in 0..r.steps {
                    adv[t * n + i] = a[t];
                    ret[t * n + i] = g[t];
                }
            }
            rewards.push(rew);
            advantages.push(adv);
            returns.push(ret);
        }
        Ok(Prepared { rewards, goal_rewards, advantages, returns, outcomes, goals, goal_batch, window_owner })
    }

    /// Accumulate sub-policy gradients for the `(rollout, step)` items; returns the
    /// actor-critic terms and the reported sub loss.
    pub fn sub_gradients(&mut self, rollouts: &[Rollout], prep: &Prepared, items: &[(usize, usize)], rng: Option<&mut ChaCha8Rng>) -> Result<(PpoOutput, f64)> {
        let n = self.agents();
        let rows = items.len() * n;
        let ctx_dim = rollouts[0].context.cols;
        let mut obs = Matrix::zeros(rows, OBS_DIM);
        let mut ctx = Matrix::zeros(rows, ctx_dim);
        let (mut actions, mut old, mut adv, mut ret) = (Vec::with_capacity(rows), Vec::with_capacity(rows), Vec::with_capacity(rows), Vec::with_capacity(rows));
        let (mut outs, mut goals) = (Vec::with_capacity(items.len()), Vec::with_capacity(items.len()));
        for (k, &(ri, t)) in items.iter().enumerate() {
            let r = &rollouts[ri];
            for i in 0..n {
                let src = t * n + i;
                obs.row_mut(k * n + i).copy_from_slice(r.observations.row(src));
                ctx.row_mut(k * n + i).copy_from_slice(r.context.row(src));
                actions.push(r.actions[src]);
                old.push(r.log_probs[src]);
                adv.push(prep.advantages[ri][src]);
                ret.push(prep.returns[ri][src]);
            }
            outs.push(prep.outcomes[ri][t]);
            goals.push(prep.goals[ri][t]);
        }
        normalize(&mut adv);
        let batch = AgentBatch { observations: obs, neighbors: self.neighbor_rows(items.len()), context: ctx };
        let w = self.config.effective_weights();
        let (out, cache) = self.sub.forward(&batch, rng)?;
        let ppo = ppo_loss(&out.logits, &out.value, &PpoBatch { actions: &actions, old_log_probs: &old, advantages: &adv, returns: &ret }, &w);
        if !ppo.total.is_finite() {
            return Err(Error::NonFiniteLoss(format!("actor-critic loss {}", ppo.total)));
        }
        self.sub.zero_grad();
        self.sub.backward(&cache, &ppo.d_logits, &ppo.d_values, None);
        let total = sub_loss(ppo.total, &outs, &goals, &w, self.config.strict_paper_mode);
        Ok((ppo, total))
    }

    /// Accumulate meta-policy gradients for the selected goal windows.
    pub fn meta_gradients(&mut self, prep: &Prepared, windows: &[usize]) -> Result<MetaLossOutput> {
        let batch = prep.goal_batch.select(windows);
        let outcomes: Vec<(f64, f64)> = windows.iter().map(|&k| {
            let (ri, t) = prep.window_owner[k];
            prep.outcomes[ri][t]
        }).collect();
        let (out, cache) = self.meta.forward(&batch)?;
        let loss = meta_loss(&out.targets, &outcomes, &self.config.effective_weights(), self.config.strict_paper_mode);
        if !loss.loss.is_finite() {
            return Err(Error::NonFiniteLoss(format!("meta loss {}", loss.loss)));
        }
        self.meta.zero_grad();
        self.meta.backward(&batch, &cache, &loss.d_goals, None);
        Ok(loss)
    }

    /// One joint update from collected rollouts, without rollback handling.
    pub fn update(&mut self, rollouts: &[Rollout]) -> Result<EpisodeLog> {
        if rollouts.is_empty() {
            return Err(Error::InvalidConfig("update needs at least one rollout".into()));
        }
        self.observe_scales(rollouts);
        let prep = self.prepare(rollouts)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[self.config.seed, self.episode, UPDATE_TAG]));
        let mut items: Vec<(usize, usize)> = rollouts.iter().enumerate().flat_map(|(ri, r)| (0..r.steps).map(move |t| (ri, t))).collect();
        let (mut sub_total, mut grad_norm, mut batches) = (0.0, 0.0, 0usize);
        let (mut policy, mut value, mut entropy) = (0.0, 0.0, 0.0);
        for _ in 0..self.config.epochs {
            items.shuffle(&mut rng);
            for chunk in items.chunks(self.config.minibatch_steps) {
                let (ppo, loss) = self.sub_gradients(rollouts, &prep, chunk, Some(&mut rng))?;
                let report = self.sub_opt.step(&mut self.sub)?;
                sub_total += loss;
                policy += ppo.policy_loss;
                value += ppo.value_loss;
                entropy += ppo.entropy;
                grad_norm += report.grad_norm;
                batches += 1;
            }
        }
        let mut meta_total = 0.0;
        let mut meta_batches = 0usize;
        if self.config.variant.uses_meta() {
            let mut windows: Vec<usize> = (0..prep.window_owner.len()).collect();
            for _ in 0..self.config.meta_epochs {
                windows.shuffle(&mut rng);
                let take = self.config.meta_batch.min(windows.len());
                let sel = windows[..take].to_vec();
                let loss = self.meta_gradients(&prep, &sel)?;
                self.meta_opt.step(&mut self.meta)?;
                meta_total += loss.loss;
                meta_batches += 1;
            }
        }
        let steps: usize = rollouts.iter().map(|r| r.steps).sum();
        let goal_sum: f64 = prep.goal_rewards.iter().flatten().sum();
        Ok(EpisodeLog {
            episode: self.episode,
            seed: self.config.seed,
            variant: self.config.variant,
            mean_reward: rollouts.iter().map(|r| r.mean_local_reward()).sum::<f64>() / rollouts.len() as f64,
            mean_goal_reward: goal_sum / steps.max(1) as f64,
            att: rollouts.iter().map(|r| r.att).sum::<f64>() / rollouts.len() as f64,
            adt: rollouts.iter().map(|r| r.adt).sum::<f64>() / rollouts.len() as f64,
            meta_loss: if meta_batches > 0 { meta_total / meta_batches as f64 } else { 0.0 },
            sub_loss: sub_total / batches.max(1) as f64,
            grad_norm: grad_norm / batches.max(1) as f64,
            policy_loss: policy / batches.max(1) as f64,
            value_loss: value / batches.max(1) as f64,
            entropy: entropy / batches.max(1) as f64,
            rolled_back: false,
        })
    }

    fn backup(&self) -> Backup {
        Backup { meta: self.meta.clone(), sub: self.sub.clone(), meta_opt: self.meta_opt, sub_opt: self.sub_opt, scales: self.scales }
    }

    fn restore(&mut self, b: Backup) {
        self.meta = b.meta;
        self.sub = b.sub;
        self.meta_opt = b.meta_opt;
        self.sub_opt = b.sub_opt;
        self.scales = b.scales;
    }

    /// Update with rollback: a non-finite loss or gradient restores the pre-update state,
    /// halves the learning rate and retries once; a second failure is returned.
    pub fn train_on(&mut self, rollouts: &[Rollout]) -> Result<EpisodeLog> {
        let backup = self.backup();
        let first = self.update(rollouts);
        let log = match first {
            Err(e @ (Error::NonFiniteLoss(_) | Error::NonFiniteGradient)) => {
                self.restore(backup.clone());
                if self.lr_halved {
                    return Err(e);
                }
                self.lr_halved = true;
                self.meta_opt.lr *= 0.5;
                self.sub_opt.lr *= 0.5;
                match self.update(rollouts) {
                    Ok(mut log) => {
                        log.rolled_back = true;
                        log
                    }
                    Err(e) => {
                        let (meta_lr, sub_lr) = (self.meta_opt.lr, self.sub_opt.lr);
                        self.restore(backup);
                        self.meta_opt.lr = meta_lr;
                        self.sub_opt.lr = sub_lr;
                        return Err(e);
                    }
                }
            }
            other => other?,
        };
        self.episode += 1;
        Ok(log)
    }

    /// Collect `envs` rollouts sequentially and train on them.
    pub fn run_episode(&mut self) -> Result<EpisodeLog> {
        let rollouts = (0..self.config.envs).map(|k| self.collect(k)).collect::<Result<Vec<_>>>()?;
        self.train_on(&rollouts)
    }

    /// Regression-only warm-up of the meta-policy on rollouts of the current sub-policy.
    pub fn pretrain_meta(&mut self) -> Result<Vec<f64>> {
        let mut losses = Vec::new();
        for e in 0..self.config.pretrain_episodes {
            let rollout = self.collect_tagged(e as u64, 0, PRETRAIN_TAG)?;
            let rollouts = [rollout];
            self.observe_scales(&rollouts);
            let (batch, owner) = self.goal_batch(&rollouts);
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[self.config.seed, e as u64, PRETRAIN_TAG]));
            let mut idx: Vec<usize> = (0..owner.len()).collect();
            for _ in 0..self.config.meta_epochs {
                idx.shuffle(&mut rng);
                let sel = &idx[..self.config.meta_batch.min(idx.len())];
                let targets: Vec<(f64, f64)> = sel.iter().map(|&k| self.outcome_at(&rollouts[0], owner[k].1)).collect();
                losses.push(self.meta.pretrain_step(&batch.select(sel), &targets, &mut self.meta_opt)?);
            }
        }
        Ok(losses)
    }
}

fn sample(logits: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, q) in p.iter().enumerate() {
        acc += q;
        if u < acc {
            return k;
        }
    }
    p.len() - 1
}
