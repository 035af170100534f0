//! RL refinement of the edit policy: adversarial imitation learning (steer
//! away from a policy trained on incoherent negatives) and value modeling
//! (classifier-derived rewards on off-policy rollouts), with reward
//! unfolding, importance weighting, a KL trust region, and an entropy bonus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::Vocab;
use crate::policy::{
    backward, forward_sequence, sample, PolicyError, PolicyParams, StepDistribution,
};
use crate::train::Adam;

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("{0}")]
    InvalidArgument(String),
    #[error("non-finite objective at step {step}")]
    NonFinite { step: u64 },
    #[error("importance ratio overflow ({ratio:.3e}) at step {step}; enable the ratio clamp")]
    RatioOverflow { ratio: f64, step: u64 },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Serialize)]
pub struct RefineConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub rollouts: usize,
    pub steps: usize,
    pub seed: u64,
    pub top_k: usize,
    pub max_new: usize,
    pub learning_rate: f64,
    pub ratio_clamp: Option<f64>,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            alpha: 0.2,
            beta: 0.02,
            lambda: 0.6,
            gamma: 0.95,
            rollouts: 8,
            steps: 200,
            seed: 0,
            top_k: 20,
            max_new: 48,
            learning_rate: 3e-4,
            ratio_clamp: None,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(RefineError::InvalidArgument("gamma must be in (0,1)".into()));
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.lambda < 0.0 {
            return Err(RefineError::InvalidArgument(
                "alpha, beta and lambda must be non-negative".into(),
            ));
        }
        if self.rollouts == 0 || self.top_k == 0 || self.max_new == 0 {
            return Err(RefineError::InvalidArgument(
                "rollouts, top_k and max_new must be positive".into(),
            ));
        }
        if let Some(eps) = self.ratio_clamp {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(RefineError::InvalidArgument(
                    "ratio clamp must be in (0,1)".into(),
                ));
            }
        }
        Ok(())
    }
}

/// KL(p || q) in nats over the full vocabulary, log-space inputs.
pub fn kl_step(p: &StepDistribution, q: &StepDistribution) -> f64 {
    p.log_probs()
        .iter()
        .zip(q.log_probs())
        .map(|(&lp, &lq)| {
            let prob = lp.exp();
            if prob == 0.0 {
                0.0
            } else {
                prob * (lp - lq)
            }
        })
        .sum()
}

/// Shannon entropy in nats over the full vocabulary.
pub fn entropy_step(p: &StepDistribution) -> f64 {
    -p.log_probs()
        .iter()
        .map(|&lp| {
            let prob = lp.exp();
            if prob == 0.0 {
                0.0
            } else {
                prob * lp
            }
        })
        .sum::<f64>()
}

/// Anything that maps a demonstration-layout token sequence to a coherence
/// probability in (0, 1).
pub trait RewardModel {
    fn score_tokens(&self, tokens: &[String]) -> f64;
    fn max_len(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardOutcome {
    pub reward: f64,
    pub truncated: bool,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Trajectory reward r = sigmoid(log f(x, y)); since f is in (0,1) the
/// reward lives in (0, 0.5). Over-length inputs are truncated from the left
/// of the context and flagged.
pub fn reward_of(
    f: &dyn RewardModel,
    context_source: &[String],
    coe_and_target: &[String],
) -> RewardOutcome {
    let mut tokens: Vec<String> = Vec::with_capacity(context_source.len() + coe_and_target.len());
    tokens.extend_from_slice(context_source);
    tokens.extend_from_slice(coe_and_target);
    let mut truncated = false;
    let max = f.max_len();
    if tokens.len() > max {
        let drop = tokens.len() - max;
        tokens.drain(..drop);
        truncated = true;
    }
    let score = f.score_tokens(&tokens).clamp(1e-300, 1.0);
    RewardOutcome {
        reward: sigmoid(score.ln()),
        truncated,
    }
}

/// A trajectory reward unfolded into constant per-step rewards satisfying
/// `sum_t gamma^t * r_t == r`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTrace {
    pub total: f64,
    pub gamma: f64,
    pub per_step: Vec<f64>,
}

pub fn unfold_reward(r: f64, len: usize, gamma: f64) -> Result<RewardTrace, RefineError> {
    if len == 0 {
        return Err(RefineError::InvalidArgument(
            "cannot unfold a reward over zero steps".into(),
        ));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(RefineError::InvalidArgument("gamma must be positive".into()));
    }
    let mut geo = 0.0;
    let mut pow = 1.0;
    for _ in 0..len {
        pow *= gamma;
        geo += pow;
    }
    let c = r / geo;
    Ok(RewardTrace {
        total: r,
        gamma,
        per_step: vec![c; len],
    })
}

// ---------------------------------------------------------------------------
// Frozen rollout batches and surrogate objectives
// ---------------------------------------------------------------------------

/// One frozen rollout for the adversarial-imitation surrogate: the sampled
/// token sequence, where its generated region starts, the per-step
/// unlikelihood weights -log pi_adv(a_t|s_t), and the frozen original
/// policy's full log-prob vector at every generated step (for the KL term).
#[derive(Debug, Clone)]
pub struct AilRollout {
    pub ids: Vec<u32>,
    pub gen_from: usize,
    pub unlikelihood: Vec<f64>,
    pub ref_log_probs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SurrogateStats {
    pub mean_kl: f64,
    pub mean_entropy: f64,
    pub mean_ratio: f64,
    pub mean_reward: f64,
    pub mean_len: f64,
}

/// Samples `rollouts` trajectories from the CURRENT refinement policy
/// (on-policy) and freezes the adversarial weights and original-policy
/// distributions along them.
pub fn collect_ail_rollouts(
    params_star: &PolicyParams,
    params_orig: &PolicyParams,
    params_adv: &PolicyParams,
    prompts: &[Vec<u32>],
    config: &RefineConfig,
    update_seed: u64,
) -> Result<Vec<AilRollout>, RefineError> {
    if prompts.is_empty() {
        return Err(RefineError::InvalidArgument("no prompts".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(update_seed);
    let mut out = Vec::with_capacity(config.rollouts);
    for _ in 0..config.rollouts {
        let prompt = &prompts[rng.gen_range(0..prompts.len())];
        let traj = sample(
            params_star,
            prompt,
            rng.gen(),
            config.top_k,
            config.max_new,
            crate::corpus::EOS_ID,
        )?;
        if traj.generated.is_empty() {
            continue;
        }
        let ids = traj.full_ids();
        let gen_from = prompt.len();
        let adv_fwd = forward_sequence(params_adv, &ids)?;
        let orig_fwd = forward_sequence(params_orig, &ids)?;
        let mut unlikelihood = Vec::with_capacity(traj.generated.len());
        let mut ref_log_probs = Vec::with_capacity(traj.generated.len());
        for (idx, &tok) in traj.generated.iter().enumerate() {
            let t = gen_from + idx;
            unlikelihood.push(-adv_fwd.log_prob(t - 1, tok));
            ref_log_probs.push(orig_fwd.log_probs_at(t - 1).to_vec());
        }
        out.push(AilRollout {
            ids,
            gen_from,
            unlikelihood,
            ref_log_probs,
        });
    }
    Ok(out)
}

/// Adversarial-imitation surrogate loss (to minimize) and its exact
/// gradient, averaged over all generated steps in the batch:
///
/// ```text
/// L = mean_t [ -(w_t + alpha) * log pi*(a_t|s_t) + beta * KL(pi_t || pi*_t) ]
/// ```
///
/// with `w_t = -log pi_adv(a_t|s_t)` frozen; the KL is computed per step
/// over the full vocabulary against the frozen original policy.
pub fn ail_surrogate(
    params_star: &PolicyParams,
    batch: &[AilRollout],
    alpha: f64,
    beta: f64,
) -> Result<(f64, Vec<f64>, SurrogateStats), RefineError> {
    let total_steps: usize = batch.iter().map(|r| r.unlikelihood.len()).sum();
    if total_steps == 0 {
        return Err(RefineError::InvalidArgument("empty rollout batch".into()));
    }
    let scale = 1.0 / total_steps as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; params_star.values.len()];
    let mut kl_sum = 0.0;
    for rollout in batch {
        let fwd = forward_sequence(params_star, &rollout.ids)?;
        let v = params_star.arch.vocab_size;
        let mut dlogits = vec![vec![0.0; v]; rollout.ids.len()];
        for (idx, &w) in rollout.unlikelihood.iter().enumerate() {
            let t = rollout.gen_from + idx;
            let action = rollout.ids[t] as usize;
            let star_lp = fwd.log_probs_at(t - 1);
            let star_probs: Vec<f64> = star_lp.iter().map(|lp| lp.exp()).collect();
            let ref_lp = &rollout.ref_log_probs[idx];

            loss -= (w + alpha) * star_lp[action];
            let mut kl = 0.0;
            let row = &mut dlogits[t - 1];
            for a in 0..v {
                let p_ref = ref_lp[a].exp();
                if p_ref > 0.0 {
                    kl += p_ref * (ref_lp[a] - star_lp[a]);
                }
                // -(w+alpha) * dlog pi*(a_t)/dz + beta * d KL / dz
                row[a] += scale * ((w + alpha) * star_probs[a] + beta * (star_probs[a] - p_ref));
            }
            row[action] -= scale * (w + alpha);
            loss += beta * kl;
            kl_sum += kl;
        }
        let part = backward(params_star, &fwd, &dlogits);
        for (g, p) in grad.iter_mut().zip(part) {
            *g += p;
        }
    }
    loss *= scale;
    let stats = SurrogateStats {
        mean_kl: kl_sum / total_steps as f64,
        mean_len: total_steps as f64 / batch.len() as f64,
        ..SurrogateStats::default()
    };
    Ok((loss, grad, stats))
}

/// One frozen off-policy rollout for the value-modeling surrogate: sampled
/// from the frozen original policy, with the behavior log-probs of the
/// chosen actions and the unfolded per-step rewards.
#[derive(Debug, Clone)]
pub struct VmRollout {
    pub ids: Vec<u32>,
    pub gen_from: usize,
    pub behavior_log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub reward_total: f64,
    pub truncated: bool,
}

/// Samples `rollouts` trajectories from the FROZEN original policy
/// (off-policy for the refinement policy) and scores them with the reward
/// model. Depends only on (config.seed-derived) `update_seed`, the original
/// policy, and the reward model, never on the refinement policy.
pub fn collect_vm_rollouts(
    params_orig: &PolicyParams,
    f: &dyn RewardModel,
    vocab: &Vocab,
    prompts: &[Vec<u32>],
    config: &RefineConfig,
    update_seed: u64,
) -> Result<Vec<VmRollout>, RefineError> {
    if prompts.is_empty() {
        return Err(RefineError::InvalidArgument("no prompts".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(update_seed);
    let mut out = Vec::with_capacity(config.rollouts);
    for _ in 0..config.rollouts {
        let prompt = &prompts[rng.gen_range(0..prompts.len())];
        let traj = sample(
            params_orig,
            prompt,
            rng.gen(),
            config.top_k,
            config.max_new,
            crate::corpus::EOS_ID,
        )?;
        if traj.generated.is_empty() {
            continue;
        }
        let prompt_tokens = vocab.decode(prompt);
        let gen_tokens = vocab.decode(&traj.generated);
        let outcome = reward_of(f, &prompt_tokens, &gen_tokens);
        let trace = unfold_reward(outcome.reward, traj.generated.len(), config.gamma)?;
        out.push(VmRollout {
            ids: traj.full_ids(),
            gen_from: prompt.len(),
            behavior_log_probs: traj.logprobs.clone(),
            rewards: trace.per_step,
            reward_total: outcome.reward,
            truncated: outcome.truncated,
        });
    }
    Ok(out)
}

/// Value-modeling surrogate loss (to minimize) and its exact gradient,
/// averaged over all generated steps:
///
/// ```text
/// L = -mean_t [ ratio_t * r_t + lambda * H(pi*(.|s_t)) ]
/// ratio_t = exp(log pi*(a_t|s_t) - log pi(a_t|s_t))
/// ```
///
/// With the clamp enabled, ratios outside [1-eps, 1+eps] are clamped and
/// their reward term contributes no gradient.
pub fn vm_surrogate(
    params_star: &PolicyParams,
    batch: &[VmRollout],
    lambda: f64,
    ratio_clamp: Option<f64>,
    step: u64,
) -> Result<(f64, Vec<f64>, SurrogateStats), RefineError> {
    let total_steps: usize = batch.iter().map(|r| r.rewards.len()).sum();
    if total_steps == 0 {
        return Err(RefineError::InvalidArgument("empty rollout batch".into()));
    }
    let scale = 1.0 / total_steps as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; params_star.values.len()];
    let mut stats = SurrogateStats {
        mean_len: total_steps as f64 / batch.len() as f64,
        ..SurrogateStats::default()
    };
    for rollout in batch {
        let fwd = forward_sequence(params_star, &rollout.ids)?;
        let v = params_star.arch.vocab_size;
        let mut dlogits = vec![vec![0.0; v]; rollout.ids.len()];
        for (idx, (&r_t, &behavior_lp)) in rollout
            .rewards
            .iter()
            .zip(&rollout.behavior_log_probs)
            .enumerate()
        {
            let t = rollout.gen_from + idx;
            let action = rollout.ids[t] as usize;
            let star_lp = fwd.log_probs_at(t - 1);
            let raw_ratio = (star_lp[action] - behavior_lp).exp();
            if raw_ratio > 1e6 {
                return Err(RefineError::RatioOverflow { ratio: raw_ratio, step });
            }
            let (ratio, pass_grad) = match ratio_clamp {
                Some(eps) => {
                    let clamped = raw_ratio.clamp(1.0 - eps, 1.0 + eps);
                    (clamped, clamped == raw_ratio)
                }
                None => (raw_ratio, true),
            };
            let star_probs: Vec<f64> = star_lp.iter().map(|lp| lp.exp()).collect();
            let entropy = -star_lp
                .iter()
                .zip(&star_probs)
                .map(|(lp, p)| if *p == 0.0 { 0.0 } else { p * lp })
                .sum::<f64>();
            loss -= ratio * r_t + lambda * entropy;
            stats.mean_ratio += ratio;
            stats.mean_entropy += entropy;
            stats.mean_reward += r_t;

            let row = &mut dlogits[t - 1];
            for a in 0..v {
                // entropy ascent: dH/dz_a = -p_a (log p_a + H)
                if lambda != 0.0 && star_probs[a] > 0.0 {
                    row[a] += scale * lambda * star_probs[a] * (star_lp[a] + entropy);
                }
                if pass_grad {
                    row[a] += scale * r_t * raw_ratio * star_probs[a];
                }
            }
            if pass_grad {
                row[action] -= scale * r_t * raw_ratio;
            }
        }
        let part = backward(params_star, &fwd, &dlogits);
        for (g, p) in grad.iter_mut().zip(part) {
            *g += p;
        }
    }
    loss *= scale;
    stats.mean_ratio /= total_steps as f64;
    stats.mean_entropy /= total_steps as f64;
    stats.mean_reward /= total_steps as f64;
    Ok((loss, grad, stats))
}

// ---------------------------------------------------------------------------
// Refinement loops
// ---------------------------------------------------------------------------

/// Per-update metrics row; the JSONL schema is the spec'd six fields.
#[derive(Debug, Clone, Serialize)]
pub struct RefineMetrics {
    pub step: u64,
    pub objective: f64,
    pub mean_kl: Option<f64>,
    pub mean_reward: Option<f64>,
    pub mean_entropy: Option<f64>,
    pub mean_ratio: Option<f64>,
    #[serde(skip)]
    pub mean_len: f64,
}

pub struct RefineOutcome {
    pub params: PolicyParams,
    pub metrics: Vec<RefineMetrics>,
}

fn update_seed(seed: u64, step: u64) -> u64 {
    seed ^ (step + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Adversarial imitation learning: on-policy rollouts from the current
/// refinement policy, weighted toward actions the adversarial policy finds
/// unlikely, with a KL trust region against the frozen original policy.
pub fn refine_ail(
    params_star_init: &PolicyParams,
    params_orig: &PolicyParams,
    params_adv: &PolicyParams,
    prompts: &[Vec<u32>],
    config: &RefineConfig,
) -> Result<RefineOutcome, RefineError> {
    config.validate()?;
    let mut params = params_star_init.clone();
    let mut opt = Adam::new(params.values.len(), config.learning_rate);
    let mut metrics = Vec::with_capacity(config.steps);
    for step in 0..config.steps as u64 {
        let batch = collect_ail_rollouts(
            &params,
            params_orig,
            params_adv,
            prompts,
            config,
            update_seed(config.seed, step),
        )?;
        if batch.is_empty() {
            continue;
        }
        let (loss, grad, stats) = ail_surrogate(&params, &batch, config.alpha, config.beta)?;
        if !loss.is_finite() {
            return Err(RefineError::NonFinite { step });
        }
        opt.step(&mut params.values, &grad);
        metrics.push(RefineMetrics {
            step,
            objective: -loss,
            mean_kl: Some(stats.mean_kl),
            mean_reward: None,
            mean_entropy: None,
            mean_ratio: None,
            mean_len: stats.mean_len,
        });
    }
    Ok(RefineOutcome { params, metrics })
}

/// Value modeling: off-policy rollouts from the frozen original policy,
/// importance-weighted by the current/original ratio and rewarded by the
/// value model, plus an entropy bonus.
pub fn refine_vm(
    params_star_init: &PolicyParams,
    params_orig: &PolicyParams,
    f: &dyn RewardModel,
    vocab: &Vocab,
    prompts: &[Vec<u32>],
    config: &RefineConfig,
) -> Result<RefineOutcome, RefineError> {
    config.validate()?;
    let mut params = params_star_init.clone();
    let mut opt = Adam::new(params.values.len(), config.learning_rate);
    let mut metrics = Vec::with_capacity(config.steps);
    for step in 0..config.steps as u64 {
        let batch = collect_vm_rollouts(
            params_orig,
            f,
            vocab,
            prompts,
            config,
            update_seed(config.seed, step),
        )?;
        if batch.is_empty() {
            continue;
        }
        let (loss, grad, stats) =
            vm_surrogate(&params, &batch, config.lambda, config.ratio_clamp, step)?;
        if !loss.is_finite() {
            return Err(RefineError::NonFinite { step });
        }
        opt.step(&mut params.values, &grad);
        metrics.push(RefineMetrics {
            step,
            objective: -loss,
            mean_kl: None,
            mean_reward: Some(stats.mean_reward),
            mean_entropy: Some(stats.mean_entropy),
            mean_ratio: Some(stats.mean_ratio),
            mean_len: stats.mean_len,
        });
    }
    Ok(RefineOutcome { params, metrics })
}
