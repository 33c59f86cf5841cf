//! Synchronized cross-lingual policy optimization.
//!
//! Training is group-relative: each update samples one query, collects a
//! group of `G` rollouts whose thinking modes cycle through the configured
//! language list, and normalizes rewards within the group,
//!
//! ```text
//! Ã_i = (r_i − mean(r)) / (std_pop(r) + ε)     (all zero when std < ε)
//! ```
//!
//! The minimized loss is the negated clipped-ratio objective with an exact
//! KL penalty toward a reference snapshot frozen before the first update:
//!
//! ```text
//! loss = −[ (1/G) Σ_i (1/|T_i|) Σ_{t∈T_i} min(ρ_t Ã_i, clip(ρ_t, 1−δ, 1+δ) Ã_i)
//!           − λ (1/G) Σ_i KL_i ]
//! ρ_t  = exp(log π_current(a_t|s_t) − log π_behavior(a_t|s_t))
//! KL_i = (1/|T_i|) Σ_{t∈T_i} KL(π_current(·|s_t) ‖ π_reference(·|s_t))
//! ```
//!
//! `T_i` is the set of unmasked tokens: environment-inserted observations
//! are recorded in the rollout but excluded from both the surrogate and
//! the KL term. Whenever the min selects the clipped branch the token
//! contributes exactly zero gradient; zero advantages likewise contribute
//! exactly zero, so a zero-variance group with λ=0 leaves the parameters
//! bit-identical. Behavior log-probabilities are recomputed from the
//! behavior parameter snapshot rather than trusted from the rollout
//! records, which keeps the ratio consistent with whatever parameters the
//! caller designates as the sampling policy.
//!
//! The training log reports the maximized objective under its `loss`
//! column, one CSV row per update, rendered with `Display` so identical
//! runs emit identical bytes.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{
    grad_log_prob, kl_and_grad, kl_divergence, log_prob, PolicyGrad, PolicyParameters,
};

/// Reward assigned to a finished episode. The default scores the answer by
/// character-trigram recall against the gold aliases; the exact variant
/// collapses that to the 0/1 containment metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    #[default]
    C3Recall,
    ExactMatch,
}

/// Mode entry that resolves to each query's own language at collection
/// time, turning the cross-lingual group into plain single-language
/// sampling.
pub const NATIVE_MODE: &str = "native";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CLPOConfig {
    pub group_size: usize,
    pub clip_delta: f64,
    pub kl_coefficient: f64,
    pub learning_rate: f64,
    pub advantage_epsilon: f64,
    pub updates: usize,
    pub thinking_modes: Vec<String>,
    pub seed: u64,
    pub reward_kind: RewardKind,
}

impl Default for CLPOConfig {
    fn default() -> Self {
        CLPOConfig {
            group_size: 4,
            clip_delta: 0.2,
            kl_coefficient: 1e-3,
            learning_rate: 0.05,
            advantage_epsilon: 1e-8,
            updates: 100,
            thinking_modes: vec![NATIVE_MODE.to_string()],
            seed: 0,
            reward_kind: RewardKind::C3Recall,
        }
    }
}

impl CLPOConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.group_size < 2 {
            return Err(TrainError::GroupTooSmall(self.group_size));
        }
        if !(self.clip_delta > 0.0 && self.clip_delta < 1.0) {
            return Err(TrainError::InvalidConfig(format!(
                "clip_delta {} must lie in (0, 1)",
                self.clip_delta
            )));
        }
        if self.kl_coefficient < 0.0 {
            return Err(TrainError::InvalidConfig(format!(
                "kl_coefficient {} must be >= 0",
                self.kl_coefficient
            )));
        }
        if self.learning_rate <= 0.0 {
            return Err(TrainError::InvalidConfig(format!(
                "learning_rate {} must be > 0",
                self.learning_rate
            )));
        }
        if self.advantage_epsilon <= 0.0 {
            return Err(TrainError::InvalidConfig(format!(
                "advantage_epsilon {} must be > 0",
                self.advantage_epsilon
            )));
        }
        if self.thinking_modes.is_empty() {
            return Err(TrainError::InvalidConfig(
                "thinking_modes must be non-empty".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("group size {0} is below the minimum of 2")]
    GroupTooSmall(usize),
    #[error("rollout {rollout} has no unmasked tokens")]
    EmptyTokenSet { rollout: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("reward {value} of rollout {rollout} is outside [0, 1]")]
    InvalidReward { rollout: usize, value: f64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at update {update}: {diagnostic}")]
    NonFiniteLoss { update: usize, diagnostic: String },
    #[error("environment: {0}")]
    Env(String),
}

/// One decision the policy made (or one observation the environment
/// inserted, when `masked` is set) during an episode.
#[derive(Debug, Clone)]
pub struct TokenRecord {
    pub state: Array1<f64>,
    pub token: usize,
    pub behavior_log_prob: f64,
    pub masked: bool,
}

/// One sampled trajectory with its episode-level reward.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub mode: String,
    pub records: Vec<TokenRecord>,
    pub reward: f64,
}

/// A group of rollouts for one query together with its group-relative
/// advantages.
#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub query_id: String,
    pub rollouts: Vec<Rollout>,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    pub fn new(
        query_id: &str,
        rollouts: Vec<Rollout>,
        advantage_epsilon: f64,
    ) -> Result<Self, TrainError> {
        for (i, r) in rollouts.iter().enumerate() {
            if !(0.0..=1.0).contains(&r.reward) {
                return Err(TrainError::InvalidReward {
                    rollout: i,
                    value: r.reward,
                });
            }
        }
        let rewards: Vec<f64> = rollouts.iter().map(|r| r.reward).collect();
        let advantages = compute_advantages(&rewards, advantage_epsilon)?;
        Ok(RolloutGroup {
            query_id: query_id.to_string(),
            rollouts,
            advantages,
        })
    }
}

/// Thinking mode for rollout `i`: the configured list, cycled.
pub fn assign_modes(config: &CLPOConfig, i: usize) -> &str {
    &config.thinking_modes[i % config.thinking_modes.len()]
}

/// Group-relative advantages, exactly zero for a (near-)zero-variance
/// group.
pub fn compute_advantages(rewards: &[f64], epsilon: f64) -> Result<Vec<f64>, TrainError> {
    if rewards.len() < 2 {
        return Err(TrainError::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < epsilon {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards
        .iter()
        .map(|r| (r - mean) / (std + epsilon))
        .collect())
}

/// Per-token clipped surrogate: the min-branch value and the coefficient
/// multiplying ∇log π in its gradient. The clipped branch is constant in
/// θ, so its coefficient is exactly zero; ties go to the unclipped branch,
/// whose derivative through ρ = exp(Δ log π) is ρ·Ã.
fn clipped_surrogate(ratio: f64, advantage: f64, delta: f64) -> (f64, f64) {
    let clipped_ratio = ratio.clamp(1.0 - delta, 1.0 + delta);
    let unclipped = ratio * advantage;
    let clipped = clipped_ratio * advantage;
    if unclipped <= clipped {
        (unclipped, ratio * advantage)
    } else {
        (clipped, 0.0)
    }
}

/// Scalars that describe one loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossStats {
    /// The minimized quantity (negated objective).
    pub loss: f64,
    /// Mean over rollouts of the per-rollout mean exact KL to the
    /// reference.
    pub mean_kl: f64,
    /// Fraction of unmasked tokens whose min selected the clipped branch.
    pub clip_fraction: f64,
}

fn check_shapes(
    current: &PolicyParameters,
    other: &PolicyParameters,
    name: &str,
) -> Result<(), TrainError> {
    if current.embedding.raw_dim() != other.embedding.raw_dim()
        || current.output.raw_dim() != other.output.raw_dim()
    {
        return Err(TrainError::DimensionMismatch(format!(
            "{name} parameters have a different shape than the current parameters"
        )));
    }
    Ok(())
}

/// Loss and analytic gradient of the group objective with respect to
/// `current`. `behavior` is the sampling snapshot behind the importance
/// ratios; `reference` anchors the KL penalty.
pub fn clpo_loss_and_grad(
    group: &RolloutGroup,
    current: &PolicyParameters,
    behavior: &PolicyParameters,
    reference: &PolicyParameters,
    config: &CLPOConfig,
) -> Result<(LossStats, PolicyGrad), TrainError> {
    check_shapes(current, behavior, "behavior")?;
    check_shapes(current, reference, "reference")?;
    let g = group.rollouts.len();
    if g < 2 {
        return Err(TrainError::GroupTooSmall(g));
    }
    let inv_g = 1.0 / g as f64;

    let mut grad = PolicyGrad::zeros_like(current);
    let mut surrogate = 0.0;
    let mut kl_total = 0.0;
    let mut tokens_seen = 0usize;
    let mut tokens_clipped = 0usize;

    for (i, rollout) in group.rollouts.iter().enumerate() {
        let advantage = group.advantages[i];
        let unmasked: Vec<&TokenRecord> = rollout.records.iter().filter(|r| !r.masked).collect();
        if unmasked.is_empty() {
            return Err(TrainError::EmptyTokenSet { rollout: i });
        }
        let inv_t = 1.0 / unmasked.len() as f64;
        let mut kl_i = 0.0;
        for record in unmasked {
            if record.state.len() != current.features() {
                return Err(TrainError::DimensionMismatch(format!(
                    "state of length {} does not match feature dimension {}",
                    record.state.len(),
                    current.features()
                )));
            }
            if record.token >= current.vocab() {
                return Err(TrainError::DimensionMismatch(format!(
                    "token {} is outside the vocabulary of size {}",
                    record.token,
                    current.vocab()
                )));
            }
            let lp_current = log_prob(current, &record.state, record.token);
            let lp_behavior = log_prob(behavior, &record.state, record.token);
            let ratio = (lp_current - lp_behavior).exp();
            let (value, coefficient) = clipped_surrogate(ratio, advantage, config.clip_delta);
            surrogate += inv_g * inv_t * value;
            tokens_seen += 1;
            if coefficient == 0.0 && advantage != 0.0 {
                tokens_clipped += 1;
            }
            if coefficient != 0.0 {
                let g_lp = grad_log_prob(current, &record.state, record.token);
                grad.accumulate(&g_lp, -inv_g * inv_t * coefficient);
            }
            if config.kl_coefficient != 0.0 {
                let (kl, g_kl) = kl_and_grad(current, reference, &record.state);
                kl_i += inv_t * kl;
                grad.accumulate(&g_kl, config.kl_coefficient * inv_g * inv_t);
            } else {
                kl_i += inv_t * kl_divergence(current, reference, &record.state);
            }
        }
        kl_total += inv_g * kl_i;
    }

    let loss = -(surrogate - config.kl_coefficient * kl_total);
    let stats = LossStats {
        loss,
        mean_kl: kl_total,
        clip_fraction: tokens_clipped as f64 / tokens_seen as f64,
    };
    Ok((stats, grad))
}

/// Source of rollouts. Implementations resolve the [`NATIVE_MODE`]
/// sentinel to the query's own language and must be deterministic in
/// `seed`.
pub trait RolloutEnv {
    fn num_queries(&self) -> usize;
    fn collect(
        &self,
        query: usize,
        mode: &str,
        policy: &PolicyParameters,
        seed: u64,
        reward_kind: RewardKind,
    ) -> Result<Rollout, TrainError>;
}

/// Stateless per-rollout seed: a splitmix64-style mix of the run seed,
/// the update index and the rollout index, so rollouts are independent
/// yet reproducible.
pub fn derive_seed(base: u64, update: u64, index: u64) -> u64 {
    let mut z = base
        ^ update.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One row of the training log. `objective` is the maximized quantity,
/// i.e. the negative of the minimized loss; the CSV column keeps the
/// conventional `loss` name.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRecord {
    pub update: usize,
    pub mean_reward: f64,
    pub objective: f64,
    pub mean_kl: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<TrainingRecord>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("update,mean_reward,loss,mean_kl,grad_norm\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.update, r.mean_reward, r.objective, r.mean_kl, r.grad_norm
            ));
        }
        out
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: PolicyParameters,
    pub reference: PolicyParameters,
    pub log: TrainingLog,
}

/// Run the update loop: sample a query, collect a mode-cycled group with
/// derived seeds from the pre-update snapshot, take one gradient step.
/// The reference for the KL penalty is frozen at the initial parameters.
pub fn train(
    env: &dyn RolloutEnv,
    initial: PolicyParameters,
    config: &CLPOConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if env.num_queries() == 0 {
        return Err(TrainError::Env("environment has no queries".to_string()));
    }
    let reference = initial.clone();
    let mut params = initial;
    let mut log = TrainingLog::default();
    let mut query_rng = ChaCha8Rng::seed_from_u64(config.seed);

    for update in 0..config.updates {
        let query = query_rng.gen_range(0..env.num_queries());
        let behavior = params.clone();
        let mut rollouts = Vec::with_capacity(config.group_size);
        for i in 0..config.group_size {
            let mode = assign_modes(config, i);
            let seed = derive_seed(config.seed, update as u64, i as u64);
            rollouts.push(env.collect(query, mode, &behavior, seed, config.reward_kind)?);
        }
        let mean_reward = rollouts.iter().map(|r| r.reward).sum::<f64>() / rollouts.len() as f64;
        let group = RolloutGroup::new(&format!("q{query}"), rollouts, config.advantage_epsilon)?;
        let (stats, grad) = clpo_loss_and_grad(&group, &params, &behavior, &reference, config)?;
        let grad_norm = grad.l2_norm();
        if !stats.loss.is_finite() || !grad_norm.is_finite() {
            let rewards: Vec<f64> = group.rollouts.iter().map(|r| r.reward).collect();
            return Err(TrainError::NonFiniteLoss {
                update,
                diagnostic: format!(
                    "loss {}, grad_norm {}, mean_kl {}, rewards {:?}, advantages {:?}",
                    stats.loss, grad_norm, stats.mean_kl, rewards, group.advantages
                ),
            });
        }
        params.step(&grad, config.learning_rate);
        log.records.push(TrainingRecord {
            update,
            mean_reward,
            objective: -stats.loss,
            mean_kl: stats.mean_kl,
            grad_norm,
        });
    }

    Ok(TrainOutcome {
        params,
        reference,
        log,
    })
}
