//! Step-based PPO baseline: Gaussian actor, state-value critic, GAE and
//! running observation / reward normalization.

use alloc::vec;
use alloc::vec::Vec;

use crate::envs::{Context, StepEnv};
use crate::error::check_len;
use crate::gauss::DiagGaussian;
use crate::math;
use crate::numkit::{Activation, Adam, BatchScratch, BatchTape, MlpParams, RandomStream};
use crate::{Error, Result};

const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    /// Environment steps per iteration (whole episodes, at least this many).
    pub samples_per_iter: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// Clip range on value-prediction changes in the critic loss.
    pub critic_clip: f64,
    pub normalize_observations: bool,
    pub normalize_rewards: bool,
    pub observation_clip: f64,
    pub reward_clip: f64,
    pub hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub activation: Activation,
    pub init_std: f64,
    pub eval_episodes: usize,
}

impl PpoConfig {
    /// Defaults of the reacher experiments.
    pub fn reacher() -> Self {
        Self {
            samples_per_iter: 16000,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            epochs: 10,
            minibatches: 32,
            lr_actor: 3e-4,
            lr_critic: 3e-4,
            critic_clip: 0.2,
            normalize_observations: true,
            normalize_rewards: true,
            observation_clip: 10.0,
            reward_clip: 10.0,
            hidden: vec![32, 32],
            critic_hidden: vec![32, 32],
            activation: Activation::Tanh,
            init_std: 1.0,
            eval_episodes: 10,
        }
    }

    /// Defaults of the ball-throwing experiments.
    pub fn thrower() -> Self {
        Self {
            samples_per_iter: 16384,
            hidden: vec![128, 128],
            critic_hidden: vec![128, 128],
            ..Self::reacher()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Invalid("gamma must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::Invalid("gae_lambda must lie in [0, 1]".into()));
        }
        if !(self.clip > 0.0) || !(self.critic_clip > 0.0) {
            return Err(Error::Invalid("clip ranges must be positive".into()));
        }
        if self.samples_per_iter == 0 || self.epochs == 0 || self.minibatches == 0 {
            return Err(Error::Invalid("samples, epochs and minibatches must be positive".into()));
        }
        if self.minibatches > self.samples_per_iter {
            return Err(Error::Invalid("more minibatches than samples".into()));
        }
        if !(self.observation_clip > 0.0) || !(self.reward_clip > 0.0) {
            return Err(Error::Invalid("normalization clips must be positive".into()));
        }
        if !(self.lr_actor >= 0.0) || !(self.lr_critic >= 0.0) {
            return Err(Error::Invalid("learning rates must be non-negative".into()));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::Invalid("init_std must be positive".into()));
        }
        if self.hidden.iter().chain(&self.critic_hidden).any(|&h| h == 0) {
            return Err(Error::Invalid("hidden layer sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Generalized advantage estimation. `values` carries one extra trailing
/// bootstrap value; `dones[t]` cuts the recursion after step `t`.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    check_len("gae values (with bootstrap)", n + 1, values.len())?;
    check_len("gae done flags", n, dones.len())?;
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        next = delta + gamma * lambda * live * next;
        adv[t] = next;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Running mean and variance over vectors (parallel-merge update).
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            count: NORM_EPS,
        }
    }

    pub fn update(&mut self, x: &[f64]) {
        let total = self.count + 1.0;
        for i in 0..self.mean.len() {
            let delta = x[i] - self.mean[i];
            let m2 = self.var[i] * self.count + delta * delta * self.count / total;
            self.mean[i] += delta / total;
            self.var[i] = m2 / total;
        }
        self.count = total;
    }

    pub fn normalize(&self, x: &[f64], clip: f64) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.var))
            .map(|(x, (m, v))| ((x - m) / math::sqrt(v + NORM_EPS)).clamp(-clip, clip))
            .collect()
    }
}

/// Gaussian actor with a state-independent log-std.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPolicy {
    pub net: MlpParams,
    pub log_std: Vec<f64>,
}

impl StepPolicy {
    pub fn new(obs_dim: usize, act_dim: usize, cfg: &PpoConfig, stream: &mut RandomStream) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(&cfg.hidden);
        sizes.push(act_dim);
        Ok(Self {
            net: MlpParams::init(&sizes, cfg.activation, 0.01, stream)?,
            log_std: vec![math::ln(cfg.init_std); act_dim],
        })
    }

    pub fn distribution(&self, obs: &[f64]) -> Result<DiagGaussian> {
        let mean = self.net.forward(obs)?;
        DiagGaussian::new(mean, self.log_std.iter().map(|l| math::exp(*l)).collect())
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params() + self.log_std.len()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.net.flat().to_vec();
        v.extend_from_slice(&self.log_std);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_len("step policy parameters", self.num_params(), flat.len())?;
        let n = self.net.num_params();
        self.net.flat_mut().copy_from_slice(&flat[..n]);
        self.log_std.copy_from_slice(&flat[n..]);
        Ok(())
    }
}

/// State-value critic.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCritic {
    pub net: MlpParams,
}

impl StepCritic {
    pub fn new(obs_dim: usize, cfg: &PpoConfig, stream: &mut RandomStream) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(&cfg.critic_hidden);
        sizes.push(1);
        Ok(Self {
            net: MlpParams::init(&sizes, cfg.activation, 1.0, stream)?,
        })
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.net.forward(obs)?[0])
    }
}

/// Transitions of one iteration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepBatch {
    pub obs_dim: usize,
    pub act_dim: usize,
    /// Normalized observations, `N x obs_dim`.
    pub observations: Vec<f64>,
    pub actions: Vec<f64>,
    /// Rewards as used for learning (after scaling).
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Critic predictions, with one trailing bootstrap value.
    pub values: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Unscaled returns of the completed episodes.
    pub episode_returns: Vec<f64>,
    pub episode_metrics: Vec<f64>,
    pub episode_successes: usize,
}

impl StepBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn obs(&self, i: usize) -> &[f64] {
        &self.observations[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn action(&self, i: usize) -> &[f64] {
        &self.actions[i * self.act_dim..(i + 1) * self.act_dim]
    }
}

/// Normalization state carried across iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub obs: RunningStats,
    pub ret: RunningStats,
    running_return: f64,
}

impl Normalizer {
    pub fn new(obs_dim: usize) -> Self {
        Self {
            obs: RunningStats::new(obs_dim),
            ret: RunningStats::new(1),
            running_return: 0.0,
        }
    }

    /// Restore a saved normalizer.
    pub fn from_parts(obs: RunningStats, ret: RunningStats, running_return: f64) -> Result<Self> {
        check_len("return statistics", 1, ret.mean.len())?;
        Ok(Self {
            obs,
            ret,
            running_return,
        })
    }

    pub fn running_return(&self) -> f64 {
        self.running_return
    }

    fn observe(&mut self, raw: &[f64], cfg: &PpoConfig, update: bool) -> Vec<f64> {
        if !cfg.normalize_observations {
            return raw.to_vec();
        }
        if update {
            self.obs.update(raw);
        }
        self.obs.normalize(raw, cfg.observation_clip)
    }

    /// Scale by the running std of the discounted return.
    fn reward(&mut self, r: f64, done: bool, cfg: &PpoConfig) -> f64 {
        if !cfg.normalize_rewards {
            return r;
        }
        self.running_return = self.running_return * cfg.gamma + r;
        self.ret.update(&[self.running_return]);
        if done {
            self.running_return = 0.0;
        }
        (r / math::sqrt(self.ret.var[0] + NORM_EPS)).clamp(-cfg.reward_clip, cfg.reward_clip)
    }
}

/// Run whole episodes until at least `n` transitions are collected.
pub fn collect_steps(
    policy: &StepPolicy,
    critic: &StepCritic,
    env: &mut dyn StepEnv,
    norm: &mut Normalizer,
    n: usize,
    cfg: &PpoConfig,
    stream: &mut RandomStream,
) -> Result<StepBatch> {
    if n == 0 {
        return Err(Error::Invalid("collect_steps needs n >= 1".into()));
    }
    let (od, ad) = (env.obs_dim(), env.act_dim());
    let mut b = StepBatch {
        obs_dim: od,
        act_dim: ad,
        ..Default::default()
    };
    while b.len() < n {
        let mut raw = env.reset(stream);
        let mut obs = norm.observe(&raw, cfg, true);
        let mut ep_ret = 0.0;
        loop {
            let dist = policy.distribution(&obs)?;
            let action = dist.sample(stream);
            b.log_probs.push(dist.log_density(&action)?);
            b.values.push(critic.value(&obs)?);
            b.observations.extend_from_slice(&obs);
            b.actions.extend_from_slice(&action);
            let step = env.step(&action)?;
            ep_ret += step.reward;
            b.rewards.push(norm.reward(step.reward, step.done, cfg));
            b.dones.push(step.done);
            raw = step.obs;
            obs = norm.observe(&raw, cfg, !step.done);
            if step.done {
                break;
            }
        }
        b.episode_returns.push(ep_ret);
        b.episode_metrics.push(env.episode_metric());
        b.episode_successes += env.episode_success() as usize;
    }
    // The last transition is terminal, so the bootstrap value is unused.
    b.values.push(0.0);
    let (adv, ret) = gae(&b.rewards, &b.values, &b.dones, cfg.gamma, cfg.gae_lambda)?;
    b.advantages = adv;
    b.returns = ret;
    Ok(b)
}

/// Clipped critic loss `0.5 * max((v - R)^2, (v_old + clip(v - v_old) - R)^2)`
/// and its derivative in `v`.
pub fn clipped_value_loss(v: f64, v_old: f64, target: f64, clip: f64) -> (f64, f64) {
    let vc = v_old + (v - v_old).clamp(-clip, clip);
    let (a, b) = ((v - target) * (v - target), (vc - target) * (vc - target));
    if a >= b {
        (0.5 * a, v - target)
    } else {
        let inside = (v - v_old).abs() < clip;
        (0.5 * b, if inside { vc - target } else { 0.0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub ratio_mean: f64,
}

/// Shuffled minibatch epochs over the clipped objective and the critic loss.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update(
    policy: &mut StepPolicy,
    critic: &mut StepCritic,
    actor_opt: &mut Adam,
    critic_opt: &mut Adam,
    batch: &StepBatch,
    cfg: &PpoConfig,
    stream: &mut RandomStream,
) -> Result<PpoStats> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::Invalid("empty step batch".into()));
    }
    actor_opt.lr = cfg.lr_actor;
    critic_opt.lr = cfg.lr_critic;
    let mb_size = n / cfg.minibatches.min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut pflat = policy.flat();
    let mut cflat = critic.net.flat().to_vec();
    let mut pgrad = vec![0.0; pflat.len()];
    let mut cgrad = vec![0.0; cflat.len()];
    let np = policy.net.num_params();
    let ad = batch.act_dim;
    let (mut xs, mut aout, mut cout) = (Vec::new(), Vec::new(), Vec::new());
    let (mut atape, mut ctape, mut scratch) = (BatchTape::default(), BatchTape::default(), BatchScratch::default());
    let (mut ploss_sum, mut vloss_sum, mut clipped, mut ratio_sum, mut count) = (0.0, 0.0, 0usize, 0.0, 0usize);
    for _ in 0..cfg.epochs {
        // Fisher-Yates with the run's stream keeps the update reproducible.
        for i in (1..n).rev() {
            idx.swap(i, stream.index(i + 1));
        }
        for mb in idx.chunks(mb_size).filter(|c| c.len() == mb_size) {
            let mut adv: Vec<f64> = mb.iter().map(|&i| batch.advantages[i]).collect();
            crate::erl::standardize(&mut adv);
            pgrad.iter_mut().for_each(|g| *g = 0.0);
            cgrad.iter_mut().for_each(|g| *g = 0.0);
            let m = mb.len() as f64;
            let std: Vec<f64> = policy.log_std.iter().map(|l| math::exp(*l)).collect();
            let ln_std: Vec<f64> = std.iter().map(|s| math::ln(*s)).collect();
            xs.clear();
            for &i in mb {
                xs.extend_from_slice(batch.obs(i));
            }
            policy.net.forward_batch(&xs, mb.len(), &mut atape)?;
            critic.net.forward_batch(&xs, mb.len(), &mut ctape)?;
            aout.clear();
            aout.resize(ad * mb.len(), 0.0);
            cout.clear();
            cout.resize(mb.len(), 0.0);
            for (k, &i) in mb.iter().enumerate() {
                let act = batch.action(i);
                // Same expression as DiagGaussian::log_density.
                let mut lp = 0.0;
                for j in 0..ad {
                    let z = (act[j] - atape.output(j)[k]) / std[j];
                    lp += -0.5 * math::LN_2PI - ln_std[j] - 0.5 * z * z;
                }
                let lr = lp - batch.log_probs[i];
                let ratio = math::exp(lr);
                if !ratio.is_finite() {
                    return Err(Error::Ratio { index: i, log_ratio: lr });
                }
                let (term, dterm) = crate::erl::clipped_term(ratio, adv[k], cfg.clip);
                ploss_sum -= term / m;
                ratio_sum += ratio;
                clipped += ((ratio - 1.0).abs() > cfg.clip) as usize;
                count += 1;
                if dterm != 0.0 {
                    let w = -dterm * ratio / m;
                    for j in 0..ad {
                        let z = (act[j] - atape.output(j)[k]) / std[j];
                        aout[j * mb.len() + k] = w * z / std[j];
                        // d log p / d log std = z^2 - 1.
                        pgrad[np + j] += w * (z * z - 1.0);
                    }
                }
                let (vl, dv) = clipped_value_loss(ctape.output(0)[k], batch.values[i], batch.returns[i], cfg.critic_clip);
                vloss_sum += vl / m;
                cout[k] = dv / m;
            }
            policy.net.backward_batch(&atape, &aout, &mut pgrad[..np], &mut scratch)?;
            critic.net.backward_batch(&ctape, &cout, &mut cgrad, &mut scratch)?;
            if !pgrad.iter().chain(&cgrad).all(|g| g.is_finite()) {
                return Err(Error::NonFinite("ppo gradient"));
            }
            actor_opt.step(&mut pflat, &pgrad);
            policy.set_flat(&pflat)?;
            critic_opt.step(&mut cflat, &cgrad);
            critic.net.flat_mut().copy_from_slice(&cflat);
        }
    }
    let steps = (cfg.epochs * (n / mb_size)) as f64;
    let stats = PpoStats {
        policy_loss: ploss_sum / steps,
        value_loss: vloss_sum / steps,
        clip_fraction: clipped as f64 / count.max(1) as f64,
        ratio_mean: ratio_sum / count.max(1) as f64,
    };
    if !stats.policy_loss.is_finite() || !stats.value_loss.is_finite() {
        return Err(Error::NonFinite("ppo loss"));
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepEvalSummary {
    pub mean_return: f64,
    pub mean_metric: f64,
    pub success_rate: f64,
}

/// Mean-action episodes on the given contexts with frozen normalization.
pub fn evaluate_steps(
    policy: &StepPolicy,
    env: &mut dyn StepEnv,
    norm: &Normalizer,
    cfg: &PpoConfig,
    contexts: &[Context],
) -> Result<StepEvalSummary> {
    if contexts.is_empty() {
        return Err(Error::Invalid("evaluation needs at least one episode".into()));
    }
    let mut frozen = norm.clone();
    let (mut ret, mut metric, mut succ) = (0.0, 0.0, 0usize);
    for c in contexts {
        let mut obs = frozen.observe(&env.reset_with(c), cfg, false);
        loop {
            let a = policy.net.forward(&obs)?;
            let s = env.step(&a)?;
            ret += s.reward;
            if s.done {
                break;
            }
            obs = frozen.observe(&s.obs, cfg, false);
        }
        metric += env.episode_metric();
        succ += env.episode_success() as usize;
    }
    let n = contexts.len() as f64;
    Ok(StepEvalSummary {
        mean_return: ret / n,
        mean_metric: metric / n,
        success_rate: succ as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoIterationRecord {
    pub iteration: usize,
    pub env_steps: u64,
    pub batch_return: f64,
    pub batch_metric: f64,
    pub batch_success: f64,
    pub eval: StepEvalSummary,
    pub stats: PpoStats,
}

pub const STREAM_PPO_INIT: u64 = 10;
pub const STREAM_PPO_ROLLOUT: u64 = 11;
pub const STREAM_PPO_EVAL: u64 = 12;
pub const STREAM_PPO_SHUFFLE: u64 = 13;

/// Owns everything one PPO run mutates.
#[derive(Debug, Clone)]
pub struct PpoTrainer {
    pub cfg: PpoConfig,
    pub policy: StepPolicy,
    pub critic: StepCritic,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub norm: Normalizer,
    pub rollout_stream: RandomStream,
    pub eval_stream: RandomStream,
    pub shuffle_stream: RandomStream,
    pub iteration: usize,
    pub env_steps: u64,
}

impl PpoTrainer {
    pub fn new(cfg: PpoConfig, env: &dyn StepEnv, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut init = RandomStream::new(seed, STREAM_PPO_INIT);
        let policy = StepPolicy::new(env.obs_dim(), env.act_dim(), &cfg, &mut init)?;
        let critic = StepCritic::new(env.obs_dim(), &cfg, &mut init)?;
        Ok(Self {
            actor_opt: Adam::new(policy.num_params(), cfg.lr_actor),
            critic_opt: Adam::new(critic.net.num_params(), cfg.lr_critic),
            norm: Normalizer::new(env.obs_dim()),
            policy,
            critic,
            rollout_stream: RandomStream::new(seed, STREAM_PPO_ROLLOUT),
            eval_stream: RandomStream::new(seed, STREAM_PPO_EVAL),
            shuffle_stream: RandomStream::new(seed, STREAM_PPO_SHUFFLE),
            iteration: 0,
            env_steps: 0,
            cfg,
        })
    }

    /// Collect, update and evaluate; `eval_contexts` are sampled by the
    /// caller's environment when `None`.
    pub fn iterate(&mut self, env: &mut dyn StepEnv, sample_context: &dyn Fn(&mut RandomStream) -> Context) -> Result<PpoIterationRecord> {
        let batch = collect_steps(
            &self.policy,
            &self.critic,
            env,
            &mut self.norm,
            self.cfg.samples_per_iter,
            &self.cfg,
            &mut self.rollout_stream,
        )?;
        self.env_steps += batch.len() as u64;
        let stats = ppo_update(
            &mut self.policy,
            &mut self.critic,
            &mut self.actor_opt,
            &mut self.critic_opt,
            &batch,
            &self.cfg,
            &mut self.shuffle_stream,
        )?;
        let contexts: Vec<Context> = (0..self.cfg.eval_episodes).map(|_| sample_context(&mut self.eval_stream)).collect();
        let eval = evaluate_steps(&self.policy, env, &self.norm, &self.cfg, &contexts)?;
        self.iteration += 1;
        let episodes = batch.episode_returns.len() as f64;
        Ok(PpoIterationRecord {
            iteration: self.iteration,
            env_steps: self.env_steps,
            batch_return: math::mean(&batch.episode_returns),
            batch_metric: math::mean(&batch.episode_metrics),
            batch_success: batch.episode_successes as f64 / episodes,
            eval,
            stats,
        })
    }
}
