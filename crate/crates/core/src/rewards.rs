//! Composite reward computation, group-relative advantage normalization, and
//! labeled-trajectory export for external fine-tuning pipelines.
//!
//! Rewards combine a base term for correct accept/continue decisions, a
//! confidence-calibration term, and a faithfulness term gated on format
//! validity: `r = clip_[0,1](r_base + α·r_conf + β·r_faith)`. Advantages are
//! group-normalized with the population standard deviation. Training itself
//! runs elsewhere; this module only labels and exports.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::judge::{Decision, JudgeVerdict};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("advantage normalization needs ≥ 2 responses, got {0}")]
    GroupTooSmall(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Confidence-term coefficient α.
    pub alpha: f64,
    /// Faithfulness-term coefficient β.
    pub beta: f64,
    /// Reserved coefficient slots; the corresponding reward terms are not
    /// defined and these are carried as metadata only.
    pub gamma: f64,
    pub delta: f64,
    /// Overconfidence penalty pivot: incorrect decisions are penalized by
    /// `max(confidence − pivot, 0)`.
    pub confidence_penalty_pivot: f64,
    /// KL regularization strength for the external trainer; exported as
    /// metadata only.
    pub kl_coefficient: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            beta: 0.1,
            gamma: 0.15,
            delta: 0.05,
            confidence_penalty_pivot: 0.5,
            kl_coefficient: 1e-3,
        }
    }
}

/// A composite reward with its pre-clip value and per-term breakdown kept
/// for diagnostics.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub reward: f64,
    pub unclipped: f64,
    pub base: f64,
    pub confidence_term: f64,
    pub faithfulness_term: f64,
}

/// `r = clip_[0,1](r_base + α·r_conf + β·r_faith)` with
/// `r_base = 1[decision = ground truth]`,
/// `r_conf = min(c,1)·1[correct] − max(c−pivot,0)·1[incorrect]`, and
/// `r_faith = max(faith,0)·1[json_valid]`.
pub fn composite_reward(
    verdict: &JudgeVerdict,
    ground_truth: Decision,
    faith: f64,
    json_valid: bool,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let correct = verdict.decision == ground_truth;
    let c = verdict.confidence.clamp(0.0, 1.0);
    let base = if correct { 1.0 } else { 0.0 };
    let confidence_term = if correct {
        c.min(1.0)
    } else {
        -(c - cfg.confidence_penalty_pivot).max(0.0)
    };
    let faithfulness_term = if json_valid { faith.max(0.0) } else { 0.0 };
    let unclipped = base + cfg.alpha * confidence_term + cfg.beta * faithfulness_term;
    RewardBreakdown {
        reward: unclipped.clamp(0.0, 1.0),
        unclipped,
        base,
        confidence_term,
        faithfulness_term,
    }
}

/// Group-relative advantages `(r_i − mean) / (σ + ε)` with the population
/// standard deviation.
pub fn group_advantages(rewards: &[f64], epsilon: f64) -> Result<Vec<f64>, RewardError> {
    let n = rewards.len();
    if n < 2 {
        return Err(RewardError::GroupTooSmall(n));
    }
    let mean = rewards.iter().sum::<f64>() / n as f64;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    Ok(rewards.iter().map(|r| (r - mean) / (std + epsilon)).collect())
}

pub const DEFAULT_ADVANTAGE_EPSILON: f64 = 1e-8;
/// Responses sampled per prompt when building trajectory groups.
pub const DEFAULT_GROUP_SIZE: usize = 4;

/// One candidate response inside a trajectory group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryResponse {
    pub raw_text: String,
    pub decision: Decision,
    pub confidence: f64,
    pub faithfulness: f64,
    pub json_valid: bool,
    pub reward: f64,
    pub advantage: f64,
}

/// A labeled prompt with its sampled response group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub prompt: String,
    pub ground_truth: Decision,
    pub responses: Vec<TrajectoryResponse>,
}

/// Reward and advantage a response group against the ground-truth label.
pub fn label_sample(
    prompt: String,
    ground_truth: Decision,
    candidates: Vec<(JudgeVerdict, String, f64, bool)>,
    cfg: &RewardConfig,
) -> Result<TrajectorySample, RewardError> {
    let rewards: Vec<f64> = candidates
        .iter()
        .map(|(verdict, _, faith, json_valid)| {
            composite_reward(verdict, ground_truth, *faith, *json_valid, cfg).reward
        })
        .collect();
    let advantages = group_advantages(&rewards, DEFAULT_ADVANTAGE_EPSILON)?;
    let responses = candidates
        .into_iter()
        .zip(rewards.iter().zip(&advantages))
        .map(|((verdict, raw_text, faith, json_valid), (reward, advantage))| TrajectoryResponse {
            raw_text,
            decision: verdict.decision,
            confidence: verdict.confidence,
            faithfulness: faith,
            json_valid,
            reward: *reward,
            advantage: *advantage,
        })
        .collect();
    Ok(TrajectorySample {
        prompt,
        ground_truth,
        responses,
    })
}

/// One exported JSONL line: a (prompt, response) pair with its labels.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrajectoryLine {
    pub prompt: String,
    pub response: String,
    pub reward: f64,
    pub advantage: f64,
    pub ground_truth: Decision,
    pub faithfulness: f64,
}

/// Faithfulness-filter threshold: responses must exceed this to survive
/// `filter_faithful` export.
pub const FAITHFULNESS_EXPORT_THRESHOLD: f64 = 0.8;

/// Write one JSONL line per (sample, response). With `filter_faithful`,
/// responses with faithfulness ≤ 0.8 are dropped. Returns the number of
/// lines written.
pub fn export_trajectories(
    samples: &[TrajectorySample],
    path: &Path,
    filter_faithful: bool,
) -> Result<usize, RewardError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut written = 0;
    for sample in samples {
        for response in &sample.responses {
            if filter_faithful && response.faithfulness <= FAITHFULNESS_EXPORT_THRESHOLD {
                continue;
            }
            let line = TrajectoryLine {
                prompt: sample.prompt.clone(),
                response: response.raw_text.clone(),
                reward: response.reward,
                advantage: response.advantage,
                ground_truth: sample.ground_truth,
                faithfulness: response.faithfulness,
            };
            serde_json::to_writer(&mut file, &line)?;
            file.write_all(b"\n")?;
            written += 1;
        }
    }
    file.flush()?;
    Ok(written)
}

/// Parse an exported trajectory file back into lines.
pub fn read_trajectories(path: &Path) -> Result<Vec<TrajectoryLine>, RewardError> {
    let content = std::fs::read_to_string(path)?;
    content
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(RewardError::from))
        .collect()
}
