//! Episodic trainer: contextual Gaussian search over movement-primitive
//! parameters with either exact trust-region projections (BBRL-TRPL) or a
//! clipped importance ratio (BBRL-PPO).

use alloc::vec;
use alloc::vec::Vec;

use crate::envs::{Context, EpisodeRecord, EpisodicEnv, FAULT_RETURN};
use crate::error::check_len;
use crate::gauss::{kl_parts, kl_parts_grad, DiagGaussian, MeanStdGrad};
use crate::math;
use crate::numkit::{Activation, Adam, MlpParams, RandomStream};
use crate::trpl::{project, project_backward, trust_region_penalty, TrustRegion};
use crate::{Error, Result};

/// Gain of the orthogonal init on the policy output layer.
pub const MEAN_OUTPUT_GAIN: f64 = 0.01;
/// Floor on the advantage standard deviation before dividing.
pub const ADV_STD_FLOOR: f64 = 1e-8;
/// Slack allowed on the post-update trust-region check.
pub const BOUND_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErlAlgorithm {
    Trpl,
    Ppo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErlConfig {
    pub algorithm: ErlAlgorithm,
    pub samples_per_iter: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub trust_region: TrustRegion,
    pub clip_ratio: f64,
    pub use_critic: bool,
    pub critic_epochs: usize,
    pub critic_learning_rate: f64,
    pub critic_hidden: Vec<usize>,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub init_std: f64,
    /// Let the network predict the std from the context instead of a free vector.
    pub contextual_std: bool,
    pub iterations: usize,
    pub eval_episodes: usize,
}

impl ErlConfig {
    /// Defaults of the reacher experiments.
    pub fn reacher() -> Self {
        Self {
            algorithm: ErlAlgorithm::Trpl,
            samples_per_iter: 64,
            epochs: 100,
            learning_rate: 3e-4,
            trust_region: TrustRegion {
                eps_mean: 0.05,
                eps_cov: 0.0005,
                penalty_weight: 10.0,
            },
            clip_ratio: 0.2,
            use_critic: false,
            critic_epochs: 100,
            critic_learning_rate: 3e-4,
            critic_hidden: vec![32, 32],
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            init_std: 1.0,
            contextual_std: false,
            iterations: 1000,
            eval_episodes: 10,
        }
    }

    /// Defaults of the ball-throwing experiments.
    pub fn thrower() -> Self {
        Self {
            samples_per_iter: 160,
            learning_rate: 3e-4,
            trust_region: TrustRegion {
                eps_mean: 0.005,
                eps_cov: 0.0005,
                penalty_weight: 25.0,
            },
            ..Self::reacher()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples_per_iter < 2 {
            return Err(Error::Invalid("samples_per_iter must be at least 2".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Invalid("epochs must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.critic_learning_rate >= 0.0) {
            return Err(Error::Invalid("learning rates must be non-negative".into()));
        }
        if !(self.clip_ratio > 0.0) {
            return Err(Error::Invalid("clip_ratio must be positive".into()));
        }
        if !(self.init_std > 0.0) || !self.init_std.is_finite() {
            return Err(Error::Invalid("init_std must be positive".into()));
        }
        if self.hidden.iter().chain(&self.critic_hidden).any(|&h| h == 0) {
            return Err(Error::Invalid("hidden layer sizes must be positive".into()));
        }
        if self.eval_episodes < 1 {
            return Err(Error::Invalid("eval_episodes must be at least 1".into()));
        }
        self.trust_region.validate()
    }
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(input);
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    sizes
}

#[derive(Debug, Clone, PartialEq)]
pub enum StdHead {
    /// Context-independent log-std.
    Free(Vec<f64>),
    /// `std = init_std * exp(net(c))`.
    Contextual { net: MlpParams, init_std: f64 },
}

/// Context-conditioned diagonal Gaussian over parameter vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextualPolicy {
    mean_net: MlpParams,
    std_head: StdHead,
}

/// Values cached by a policy forward pass for the backward pass.
pub struct PolicyTape {
    mean: crate::numkit::Tape,
    std: Option<crate::numkit::Tape>,
}

impl ContextualPolicy {
    pub fn new(context_dim: usize, param_dim: usize, cfg: &ErlConfig, stream: &mut RandomStream) -> Result<Self> {
        let sizes = layer_sizes(context_dim, &cfg.hidden, param_dim);
        let mean_net = MlpParams::init(&sizes, cfg.activation, MEAN_OUTPUT_GAIN, stream)?;
        let std_head = if cfg.contextual_std {
            StdHead::Contextual {
                net: MlpParams::init(&sizes, cfg.activation, MEAN_OUTPUT_GAIN, stream)?,
                init_std: cfg.init_std,
            }
        } else {
            StdHead::Free(vec![math::ln(cfg.init_std); param_dim])
        };
        Ok(Self { mean_net, std_head })
    }

    pub fn from_parts(mean_net: MlpParams, std_head: StdHead) -> Result<Self> {
        let d = mean_net.output_dim();
        match &std_head {
            StdHead::Free(l) => check_len("policy log-std", d, l.len())?,
            StdHead::Contextual { net, .. } => {
                check_len("policy std net output", d, net.output_dim())?;
                check_len("policy std net input", mean_net.input_dim(), net.input_dim())?;
            }
        }
        Ok(Self { mean_net, std_head })
    }

    pub fn mean_net(&self) -> &MlpParams {
        &self.mean_net
    }

    pub fn std_head(&self) -> &StdHead {
        &self.std_head
    }

    pub fn context_dim(&self) -> usize {
        self.mean_net.input_dim()
    }

    pub fn param_dim(&self) -> usize {
        self.mean_net.output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.mean_net.num_params()
            + match &self.std_head {
                StdHead::Free(l) => l.len(),
                StdHead::Contextual { net, .. } => net.num_params(),
            }
    }

    /// All trainable parameters, mean network first.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.mean_net.flat().to_vec();
        match &self.std_head {
            StdHead::Free(l) => v.extend_from_slice(l),
            StdHead::Contextual { net, .. } => v.extend_from_slice(net.flat()),
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_len("policy flat parameters", self.num_params(), flat.len())?;
        let n = self.mean_net.num_params();
        self.mean_net.flat_mut().copy_from_slice(&flat[..n]);
        match &mut self.std_head {
            StdHead::Free(l) => l.copy_from_slice(&flat[n..]),
            StdHead::Contextual { net, .. } => net.flat_mut().copy_from_slice(&flat[n..]),
        }
        Ok(())
    }

    pub fn forward_tape(&self, context: &[f64]) -> Result<(DiagGaussian, PolicyTape)> {
        let mt = self.mean_net.forward_tape(context)?;
        let mean = mt.output().to_vec();
        let (std, st) = match &self.std_head {
            StdHead::Free(l) => (l.iter().map(|x| math::exp(*x)).collect(), None),
            StdHead::Contextual { net, init_std } => {
                let t = net.forward_tape(context)?;
                let s = t.output().iter().map(|o| init_std * math::exp(*o)).collect();
                (s, Some(t))
            }
        };
        Ok((DiagGaussian::new(mean, std)?, PolicyTape { mean: mt, std: st }))
    }

    pub fn distribution(&self, context: &[f64]) -> Result<DiagGaussian> {
        Ok(self.forward_tape(context)?.0)
    }

    /// Accumulate the parameter gradient of a scalar whose gradient with
    /// respect to this context's `(mean, std)` is `g`.
    pub fn backward_accumulate(
        &self,
        tape: &PolicyTape,
        dist: &DiagGaussian,
        g: &MeanStdGrad,
        grads: &mut [f64],
    ) -> Result<()> {
        let n = self.mean_net.num_params();
        self.mean_net.backward_accumulate(&tape.mean, &g.mean, &mut grads[..n])?;
        // d std / d log-std (or net output) = std in both parametrizations.
        let dl: Vec<f64> = g.std.iter().zip(dist.std()).map(|(gs, s)| gs * s).collect();
        match (&self.std_head, &tape.std) {
            (StdHead::Free(_), _) => {
                for (acc, d) in grads[n..].iter_mut().zip(&dl) {
                    *acc += d;
                }
            }
            (StdHead::Contextual { net, .. }, Some(t)) => {
                net.backward_accumulate(t, &dl, &mut grads[n..])?;
            }
            (StdHead::Contextual { .. }, None) => {
                return Err(Error::Invalid("policy tape lacks the std network".into()));
            }
        }
        Ok(())
    }
}

/// Learned context-value baseline `V(c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextValueNet {
    pub net: MlpParams,
    adam: Adam,
}

impl ContextValueNet {
    pub fn new(context_dim: usize, hidden: &[usize], activation: Activation, lr: f64, stream: &mut RandomStream) -> Result<Self> {
        let net = MlpParams::init(&layer_sizes(context_dim, hidden, 1), activation, 1.0, stream)?;
        let adam = Adam::new(net.num_params(), lr);
        Ok(Self { net, adam })
    }

    pub fn from_net(net: MlpParams, lr: f64) -> Result<Self> {
        check_len("value net output", 1, net.output_dim())?;
        let adam = Adam::new(net.num_params(), lr);
        Ok(Self { net, adam })
    }

    pub fn value(&self, context: &[f64]) -> Result<f64> {
        let v = self.net.forward(context)?[0];
        if !v.is_finite() {
            return Err(Error::NonFinite("context value"));
        }
        Ok(v)
    }

    pub fn optimizer(&self) -> &Adam {
        &self.adam
    }

    pub fn optimizer_mut(&mut self) -> &mut Adam {
        &mut self.adam
    }
}

/// Mean squared error of `vnet` on the batch returns.
pub fn value_loss(vnet: &ContextValueNet, batch: &ErlBatch) -> Result<f64> {
    let mut loss = 0.0;
    for r in &batch.records {
        let e = vnet.value(r.context.as_slice())? - r.ret;
        loss += e * e;
    }
    Ok(loss / batch.len() as f64)
}

/// Full-batch regression of `V(c)` on the returns; returns the final loss.
pub fn fit_value(vnet: &mut ContextValueNet, batch: &ErlBatch, epochs: usize, lr: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Invalid("cannot fit a value function on an empty batch".into()));
    }
    vnet.adam.lr = lr;
    let n = batch.len() as f64;
    let mut grads = vec![0.0; vnet.net.num_params()];
    let mut params = vnet.net.flat().to_vec();
    for _ in 0..epochs {
        grads.iter_mut().for_each(|g| *g = 0.0);
        for r in &batch.records {
            let tape = vnet.net.forward_tape(r.context.as_slice())?;
            let e = tape.output()[0] - r.ret;
            vnet.net.backward_accumulate(&tape, &[2.0 * e / n], &mut grads)?;
        }
        vnet.adam.step(&mut params, &grads);
        vnet.net.flat_mut().copy_from_slice(&params);
    }
    value_loss(vnet, batch)
}

/// One iteration's episodes plus the sampling policy's statistics, frozen at
/// collection time.
#[derive(Debug, Clone, PartialEq)]
pub struct ErlBatch {
    pub records: Vec<EpisodeRecord>,
    pub old: Vec<DiagGaussian>,
    pub old_log_density: Vec<f64>,
    pub metrics: Vec<f64>,
    pub faults: usize,
    /// Environment interactions consumed by the batch.
    pub env_steps: u64,
}

impl ErlBatch {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn mean_return(&self) -> f64 {
        let r: Vec<f64> = self.records.iter().map(|r| r.ret).collect();
        math::mean(&r)
    }
}

/// Sample `n` contexts and parameter vectors, roll them out, and freeze the
/// sampling distribution per record.
pub fn collect_rollouts<E: EpisodicEnv + ?Sized>(
    policy: &ContextualPolicy,
    env: &E,
    n: usize,
    stream: &mut RandomStream,
) -> Result<ErlBatch> {
    if n == 0 {
        return Err(Error::Invalid("collect_rollouts needs n >= 1".into()));
    }
    check_len("policy context dim", env.context_dim(), policy.context_dim())?;
    check_len("policy parameter dim", env.param_dim(), policy.param_dim())?;
    let mut batch = ErlBatch {
        records: Vec::with_capacity(n),
        old: Vec::with_capacity(n),
        old_log_density: Vec::with_capacity(n),
        metrics: Vec::with_capacity(n),
        faults: 0,
        env_steps: 0,
    };
    for _ in 0..n {
        let context = env.sample_context(stream);
        let dist = policy.distribution(context.as_slice())?;
        let params = dist.sample(stream);
        let logp = dist.log_density(&params)?;
        let out = env.run(&context, &params, false)?;
        // Faulted episodes stay in the batch with their fault return.
        let ret = if out.fault { FAULT_RETURN } else { out.ret };
        batch.faults += out.fault as usize;
        batch.env_steps += env.horizon() as u64;
        batch.metrics.push(out.metric);
        batch.records.push(EpisodeRecord { context, params, ret });
        batch.old.push(dist);
        batch.old_log_density.push(logp);
    }
    Ok(batch)
}

/// Baseline-subtracted, standardized advantages.
pub fn advantages(batch: &ErlBatch, vnet: Option<&ContextValueNet>) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Invalid("advantages of an empty batch".into()));
    }
    let mut adv: Vec<f64> = match vnet {
        Some(v) => batch
            .records
            .iter()
            .map(|r| Ok(r.ret - v.value(r.context.as_slice())?))
            .collect::<Result<_>>()?,
        None => {
            let m = batch.mean_return();
            batch.records.iter().map(|r| r.ret - m).collect()
        }
    };
    standardize(&mut adv);
    Ok(adv)
}

/// Shift to zero mean and scale to unit (population) variance.
pub fn standardize(xs: &mut [f64]) {
    let m = math::mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    let s = math::sqrt(var).max(ADV_STD_FLOOR);
    xs.iter_mut().for_each(|x| *x = (*x - m) / s);
}

/// Surrogate loss value, its parts and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub loss: f64,
    /// Importance-weighted objective (before negation).
    pub objective: f64,
    pub penalty: f64,
    pub grad: Vec<f64>,
    pub ratios: Vec<f64>,
}

/// Clipped PPO term `min(r A, clip(r, 1-e, 1+e) A)` and its derivative in `r`.
pub fn clipped_term(ratio: f64, adv: f64, clip: f64) -> (f64, f64) {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * adv;
    if unclipped <= clipped {
        (unclipped, adv)
    } else {
        (clipped, 0.0)
    }
}

/// Surrogate of the configured algorithm with its gradient over the policy
/// parameters.
pub fn surrogate_loss(
    policy: &ContextualPolicy,
    batch: &ErlBatch,
    adv: &[f64],
    cfg: &ErlConfig,
) -> Result<Surrogate> {
    check_len("advantages", batch.len(), adv.len())?;
    if batch.is_empty() {
        return Err(Error::Invalid("surrogate of an empty batch".into()));
    }
    let n = batch.len() as f64;
    let tr = &cfg.trust_region;
    let mut grad = vec![0.0; policy.num_params()];
    let mut objective = 0.0;
    let mut penalty = 0.0;
    let mut ratios = Vec::with_capacity(batch.len());
    for (i, rec) in batch.records.iter().enumerate() {
        let old = &batch.old[i];
        let (raw, tape) = policy.forward_tape(rec.context.as_slice())?;
        let g_raw = match cfg.algorithm {
            ErlAlgorithm::Trpl => {
                let proj = project(&raw, old, tr)?;
                let logp = proj.projected.log_density(&rec.params)?;
                let lr = logp - batch.old_log_density[i];
                let ratio = math::exp(lr);
                if !ratio.is_finite() {
                    return Err(Error::Ratio { index: i, log_ratio: lr });
                }
                ratios.push(ratio);
                objective += ratio * adv[i] / n;
                // d(-ratio A / n) / d(projected mean, std).
                let mut g = proj.projected.log_density_grad(&rec.params)?;
                let w = -ratio * adv[i] / n;
                g.mean.iter_mut().chain(g.std.iter_mut()).for_each(|x| *x *= w);
                let mut g = project_backward(&raw, old, &proj, &g)?;
                if tr.penalty_weight > 0.0 {
                    penalty += trust_region_penalty(&raw, &proj.projected, tr.penalty_weight)? / n;
                    let (dm, ds) = kl_parts_grad(&raw, &proj.projected)?;
                    let s = tr.penalty_weight / n;
                    for j in 0..raw.dim() {
                        g.mean[j] += s * dm[j];
                        g.std[j] += s * ds[j];
                    }
                }
                g
            }
            ErlAlgorithm::Ppo => {
                let logp = raw.log_density(&rec.params)?;
                let lr = logp - batch.old_log_density[i];
                let ratio = math::exp(lr);
                if !ratio.is_finite() {
                    return Err(Error::Ratio { index: i, log_ratio: lr });
                }
                ratios.push(ratio);
                let (term, dterm) = clipped_term(ratio, adv[i], cfg.clip_ratio);
                objective += term / n;
                let mut g = raw.log_density_grad(&rec.params)?;
                let w = -dterm * ratio / n;
                g.mean.iter_mut().chain(g.std.iter_mut()).for_each(|x| *x *= w);
                g
            }
        };
        policy.backward_accumulate(&tape, &raw, &g_raw, &mut grad)?;
    }
    if !objective.is_finite() || !penalty.is_finite() {
        return Err(Error::NonFinite("surrogate loss"));
    }
    Ok(Surrogate {
        loss: -objective + penalty,
        objective,
        penalty,
        grad,
        ratios,
    })
}

/// Diagnostics of one policy update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateStats {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub penalty: f64,
    pub ratio_mean: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
    /// Largest mean / covariance KL part against the old policy over the
    /// batch contexts, measured on the policy that will be executed.
    pub max_mean_kl: f64,
    pub max_cov_kl: f64,
}

/// Run `cfg.epochs` full-batch Adam steps on the surrogate, then check the
/// trust region on every batch context.
pub fn update(
    policy: &mut ContextualPolicy,
    adam: &mut Adam,
    batch: &ErlBatch,
    adv: &[f64],
    cfg: &ErlConfig,
) -> Result<UpdateStats> {
    check_len("optimizer state", policy.num_params(), adam.state().1.len())?;
    adam.lr = cfg.learning_rate;
    let mut params = policy.flat();
    let mut initial_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        let s = surrogate_loss(policy, batch, adv, cfg)?;
        if epoch == 0 {
            initial_loss = s.loss;
        }
        adam.step(&mut params, &s.grad);
        policy.set_flat(&params)?;
    }
    let last = surrogate_loss(policy, batch, adv, cfg)?;
    let (mut max_mean_kl, mut max_cov_kl) = (0.0_f64, 0.0_f64);
    for (rec, old) in batch.records.iter().zip(&batch.old) {
        let raw = policy.distribution(rec.context.as_slice())?;
        let executed = match cfg.algorithm {
            ErlAlgorithm::Trpl => project(&raw, old, &cfg.trust_region)?.projected,
            ErlAlgorithm::Ppo => raw,
        };
        let (m, c) = kl_parts(&executed, old)?;
        max_mean_kl = max_mean_kl.max(m);
        max_cov_kl = max_cov_kl.max(c);
    }
    if cfg.algorithm == ErlAlgorithm::Trpl
        && (max_mean_kl > cfg.trust_region.eps_mean + BOUND_TOLERANCE
            || max_cov_kl > cfg.trust_region.eps_cov + BOUND_TOLERANCE)
    {
        return Err(Error::Projection(alloc::format!(
            "trust region violated after update: mean {max_mean_kl}, cov {max_cov_kl}"
        )));
    }
    let ratio_mean = math::mean(&last.ratios);
    let ratio_min = last.ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio_max = last.ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(UpdateStats {
        initial_loss,
        final_loss: last.loss,
        penalty: last.penalty,
        ratio_mean,
        ratio_min,
        ratio_max,
        max_mean_kl,
        max_cov_kl,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub mean_return: f64,
    pub mean_metric: f64,
    pub success_rate: f64,
    pub mean_control_cost: f64,
    pub faults: usize,
}

/// Run the policy mean on `n` fresh contexts.
pub fn evaluate<E: EpisodicEnv + ?Sized>(
    policy: &ContextualPolicy,
    env: &E,
    n: usize,
    stream: &mut RandomStream,
) -> Result<EvalSummary> {
    let contexts: Vec<Context> = (0..n).map(|_| env.sample_context(stream)).collect();
    evaluate_on(policy, env, &contexts)
}

/// Run the policy mean on the given contexts.
pub fn evaluate_on<E: EpisodicEnv + ?Sized>(
    policy: &ContextualPolicy,
    env: &E,
    contexts: &[Context],
) -> Result<EvalSummary> {
    if contexts.is_empty() {
        return Err(Error::Invalid("evaluation needs at least one episode".into()));
    }
    let (mut ret, mut metric, mut succ, mut cost, mut faults) = (0.0, 0.0, 0usize, 0.0, 0usize);
    for c in contexts {
        let dist = policy.distribution(c.as_slice())?;
        let out = env.run(c, dist.mean(), false)?;
        ret += if out.fault { FAULT_RETURN } else { out.ret };
        metric += out.metric;
        succ += out.success as usize;
        cost += out.control_cost;
        faults += out.fault as usize;
    }
    let n = contexts.len() as f64;
    Ok(EvalSummary {
        mean_return: ret / n,
        mean_metric: metric / n,
        success_rate: succ as f64 / n,
        mean_control_cost: cost / n,
        faults,
    })
}

/// Per-iteration record emitted by [`ErlTrainer::iterate`].
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub env_steps: u64,
    pub batch_return: f64,
    pub batch_metric: f64,
    pub batch_faults: usize,
    pub eval: EvalSummary,
    pub value_loss: Option<f64>,
    pub update: UpdateStats,
    pub mean_std: f64,
}

/// Stream ids used by [`ErlTrainer`].
pub const STREAM_INIT: u64 = 0;
pub const STREAM_ROLLOUT: u64 = 1;
pub const STREAM_EVAL: u64 = 2;

/// Owns the policy, optimizer state and random streams of one run.
#[derive(Debug, Clone)]
pub struct ErlTrainer {
    pub cfg: ErlConfig,
    pub policy: ContextualPolicy,
    pub adam: Adam,
    pub vnet: Option<ContextValueNet>,
    pub rollout_stream: RandomStream,
    pub eval_stream: RandomStream,
    pub iteration: usize,
    pub env_steps: u64,
}

impl ErlTrainer {
    pub fn new<E: EpisodicEnv + ?Sized>(cfg: ErlConfig, env: &E, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut init = RandomStream::new(seed, STREAM_INIT);
        let policy = ContextualPolicy::new(env.context_dim(), env.param_dim(), &cfg, &mut init)?;
        let vnet = if cfg.use_critic {
            Some(ContextValueNet::new(
                env.context_dim(),
                &cfg.critic_hidden,
                cfg.activation,
                cfg.critic_learning_rate,
                &mut init,
            )?)
        } else {
            None
        };
        Ok(Self {
            adam: Adam::new(policy.num_params(), cfg.learning_rate),
            policy,
            vnet,
            rollout_stream: RandomStream::new(seed, STREAM_ROLLOUT),
            eval_stream: RandomStream::new(seed, STREAM_EVAL),
            iteration: 0,
            env_steps: 0,
            cfg,
        })
    }

    /// Collect, fit the baseline, update the policy and evaluate.
    pub fn iterate<E: EpisodicEnv + ?Sized>(&mut self, env: &E) -> Result<IterationRecord> {
        let batch = collect_rollouts(&self.policy, env, self.cfg.samples_per_iter, &mut self.rollout_stream)?;
        self.env_steps += batch.env_steps;
        let value_loss = match self.vnet.as_mut() {
            Some(v) => Some(fit_value(v, &batch, self.cfg.critic_epochs, self.cfg.critic_learning_rate)?),
            None => None,
        };
        let adv = advantages(&batch, self.vnet.as_ref())?;
        let update = update(&mut self.policy, &mut self.adam, &batch, &adv, &self.cfg)?;
        let eval = evaluate(&self.policy, env, self.cfg.eval_episodes, &mut self.eval_stream)?;
        self.iteration += 1;
        let probe = self.policy.distribution(batch.records[0].context.as_slice())?;
        Ok(IterationRecord {
            iteration: self.iteration,
            env_steps: self.env_steps,
            batch_return: batch.mean_return(),
            batch_metric: math::mean(&batch.metrics),
            batch_faults: batch.faults,
            eval,
            value_loss,
            update,
            mean_std: math::mean(probe.std()),
        })
    }
}
