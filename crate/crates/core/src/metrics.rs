//! QoS sub-metrics, the operational-resilience scalar, and the zero-sum
//! defender/attacker rewards.

use crate::error::{Error, Result};
use crate::model::ClusterState;

/// Reward weights and scenario constants for the resilience computation.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardConfig {
    /// Weights for (sr, pfr, lr, epa, tcr), normalized to sum 1.
    pub weights: [f64; 5],
    /// Latency above this is fully penalized (ms).
    pub max_acceptable_latency: f64,
    /// Target outgoing traffic across the chain (Kbps).
    pub expected_traffic: f64,
    /// Discount factor for future rewards.
    pub gamma: f64,
}

impl RewardConfig {
    pub fn new(
        weights: [f64; 5],
        max_acceptable_latency: f64,
        expected_traffic: f64,
        gamma: f64,
    ) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidConfig(
                "reward weights must be non-negative with positive sum".into(),
            ));
        }
        if !(max_acceptable_latency > 0.0) {
            return Err(Error::InvalidConfig(
                "max_acceptable_latency must be > 0".into(),
            ));
        }
        if !(expected_traffic > 0.0) {
            return Err(Error::InvalidConfig("expected_traffic must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidConfig("gamma must lie in [0, 1]".into()));
        }
        let mut normalized = weights;
        for w in normalized.iter_mut() {
            *w /= sum;
        }
        Ok(Self {
            weights: normalized,
            max_acceptable_latency,
            expected_traffic,
            gamma,
        })
    }
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            weights: [0.2; 5],
            max_acceptable_latency: 500.0,
            expected_traffic: 100.0,
            gamma: 0.99,
        }
    }
}

/// Per-step measurements that are not all derivable from the state alone.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepCounters {
    /// Requests that completed a service hop this step.
    pub successful_requests: u64,
    /// Requests dropped on overflow or lost in crashing pods this step.
    pub failed_requests: u64,
    /// Mean end-to-end latency this step (ms).
    pub measured_latency_ms: f64,
    /// Entry points with at least one healthy pod.
    pub available_entry_points: u64,
    pub total_entry_points: u64,
    /// Total transmitted traffic this step (Kbps).
    pub outgoing_traffic_kbps: f64,
    /// Scale-up grants denied by the node CPU budget.
    pub denied_scale_ups: u64,
    /// Pods that crashed this step.
    pub crashed_pods: u64,
}

impl StepCounters {
    pub fn total_requests(&self) -> u64 {
        self.successful_requests + self.failed_requests
    }

    fn validate(&self) -> Result<()> {
        if self.measured_latency_ms < 0.0 || !self.measured_latency_ms.is_finite() {
            return Err(Error::Numeric("measured latency must be finite and >= 0".into()));
        }
        if self.outgoing_traffic_kbps < 0.0 || !self.outgoing_traffic_kbps.is_finite() {
            return Err(Error::Numeric("outgoing traffic must be finite and >= 0".into()));
        }
        if self.available_entry_points > self.total_entry_points {
            return Err(Error::Numeric(
                "available entry points exceed total entry points".into(),
            ));
        }
        Ok(())
    }
}

/// The five QoS sub-metrics, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResilienceMetrics {
    /// Success rate.
    pub sr: f64,
    /// Pod failure rate.
    pub pfr: f64,
    /// Latency ratio.
    pub lr: f64,
    /// Entry point availability.
    pub epa: f64,
    /// Traffic capacity ratio.
    pub tcr: f64,
}

impl ResilienceMetrics {
    pub fn perfect() -> Self {
        Self {
            sr: 1.0,
            pfr: 0.0,
            lr: 0.0,
            epa: 1.0,
            tcr: 1.0,
        }
    }
}

/// Computes the five sub-metrics for the post-transition state.
///
/// With zero received requests the success rate is 1 (no demand, no
/// failure); with zero deployed pods the failure rate is 0.
pub fn compute_submetrics(
    s: &ClusterState,
    counters: &StepCounters,
    cfg: &RewardConfig,
) -> Result<ResilienceMetrics> {
    counters.validate()?;
    let total = counters.total_requests();
    let sr = if total == 0 {
        1.0
    } else {
        counters.successful_requests as f64 / total as f64
    };
    let deployed = s.total_deployed();
    let pfr = if deployed == 0 {
        0.0
    } else {
        s.total_failed() as f64 / deployed as f64
    };
    let lr = (counters.measured_latency_ms / cfg.max_acceptable_latency).min(1.0);
    let epa = if counters.total_entry_points == 0 {
        1.0
    } else {
        counters.available_entry_points as f64 / counters.total_entry_points as f64
    };
    let tcr = (counters.outgoing_traffic_kbps / cfg.expected_traffic).min(1.0);
    Ok(ResilienceMetrics { sr, pfr, lr, epa, tcr })
}

/// Weighted resilience scalar:
/// `w1*sr + w2*(1-pfr) + w3*(1-lr) + w4*epa + w5*tcr`.
pub fn operational_resilience(m: &ResilienceMetrics, cfg: &RewardConfig) -> f64 {
    let [w1, w2, w3, w4, w5] = cfg.weights;
    w1 * m.sr + w2 * (1.0 - m.pfr) + w3 * (1.0 - m.lr) + w4 * m.epa + w5 * m.tcr
}

/// The zero-sum step rewards: the defender team earns the resilience
/// scalar and the attacker earns its exact negation.
pub fn joint_rewards(m: &ResilienceMetrics, cfg: &RewardConfig) -> (f64, f64) {
    let r_defender = operational_resilience(m, cfg);
    (r_defender, -r_defender)
}
