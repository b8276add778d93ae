//! Domain types for the attacker/defender scaling game: per-deployment
//! metric tuples, scaling and attack actions, and the bit-exact encodings
//! between structured values and flat feature vectors.

use std::fmt;

use crate::error::{Error, Result};

/// Number of metric fields per deployment, in canonical order:
/// `n_id, d_dep, d_des, d_err, d_rem, r_cpu, r_ram, t_in, t_out`.
pub const STATE_FIELDS: usize = 9;

/// Canonical field names, index-aligned with the encoding layout.
pub const FIELD_NAMES: [&str; STATE_FIELDS] = [
    "n_id", "d_dep", "d_des", "d_err", "d_rem", "r_cpu", "r_ram", "t_in", "t_out",
];

/// Flat numeric feature vector used by encoders and the approximator.
pub type FeatureVector = Vec<f64>;

/// Metrics for one micro-service deployment.
#[derive(Debug, Clone, PartialEq)]
pub struct DeploymentState {
    /// Deployment index within the cluster.
    pub n_id: usize,
    /// Deployed pods.
    pub d_dep: u32,
    /// Desired pods (scaling target).
    pub d_des: u32,
    /// Failed pods awaiting restart.
    pub d_err: u32,
    /// Requests pending in the queue.
    pub d_rem: u32,
    /// Aggregated CPU in millicores.
    pub r_cpu: f64,
    /// Aggregated memory in Mi.
    pub r_ram: f64,
    /// Average received traffic in Kbps.
    pub t_in: f64,
    /// Average transmitted traffic in Kbps.
    pub t_out: f64,
}

impl DeploymentState {
    pub fn zeroed(n_id: usize) -> Self {
        Self {
            n_id,
            d_dep: 0,
            d_des: 0,
            d_err: 0,
            d_rem: 0,
            r_cpu: 0.0,
            r_ram: 0.0,
            t_in: 0.0,
            t_out: 0.0,
        }
    }

    /// Field value by canonical index.
    pub fn field(&self, idx: usize) -> f64 {
        match idx {
            0 => self.n_id as f64,
            1 => self.d_dep as f64,
            2 => self.d_des as f64,
            3 => self.d_err as f64,
            4 => self.d_rem as f64,
            5 => self.r_cpu,
            6 => self.r_ram,
            7 => self.t_in,
            8 => self.t_out,
            _ => panic!("field index {idx} out of range"),
        }
    }

    /// Pods currently able to serve requests.
    pub fn healthy(&self) -> u32 {
        self.d_dep.saturating_sub(self.d_err)
    }
}

/// Full cluster state: one tuple per deployment plus a time index.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub deployments: Vec<DeploymentState>,
    pub step: u64,
}

impl ClusterState {
    pub fn zeroed(d: usize) -> Self {
        Self {
            deployments: (0..d).map(DeploymentState::zeroed).collect(),
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.deployments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deployments.is_empty()
    }

    pub fn total_deployed(&self) -> u64 {
        self.deployments.iter().map(|p| u64::from(p.d_dep)).sum()
    }

    pub fn total_failed(&self) -> u64 {
        self.deployments.iter().map(|p| u64::from(p.d_err)).sum()
    }

    pub fn total_pending(&self) -> u64 {
        self.deployments.iter().map(|p| u64::from(p.d_rem)).sum()
    }

    pub fn total_cpu(&self) -> f64 {
        self.deployments.iter().map(|p| p.r_cpu).sum()
    }
}

/// Shared action-space parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionConfig {
    /// Max replica change magnitude per action.
    pub alpha: u32,
    /// Traffic rate step factor.
    pub kappa: f64,
    /// Data-alteration divisor (crash probability changes by `data_change / sigma`).
    pub sigma: f64,
    /// Number of deployments.
    pub d: usize,
    /// Deployment indices accepting external traffic.
    pub entry_points: Vec<usize>,
}

impl ActionConfig {
    pub fn new(d: usize, entry_points: Vec<usize>) -> Result<Self> {
        let cfg = Self {
            alpha: 3,
            kappa: 1.0,
            sigma: 10.0,
            d,
            entry_points,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 1 {
            return Err(Error::InvalidConfig("alpha must be >= 1".into()));
        }
        if !(self.sigma >= 2.0) {
            return Err(Error::InvalidConfig("sigma must be >= 2".into()));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::InvalidConfig("kappa must be > 0".into()));
        }
        if self.entry_points.is_empty() {
            return Err(Error::InvalidConfig("entry_points must be non-empty".into()));
        }
        if let Some(&e) = self.entry_points.iter().find(|&&e| e >= self.d) {
            return Err(Error::InvalidConfig(format!(
                "entry point {e} out of range for d={}",
                self.d
            )));
        }
        Ok(())
    }

    /// Replica deltas available to a defender: `-alpha ..= +alpha`.
    pub fn delta_range(&self) -> std::ops::RangeInclusive<i32> {
        -(self.alpha as i32)..=(self.alpha as i32)
    }

    /// Length of an encoded defender action: service block + delta block.
    pub fn defender_encoding_len(&self) -> usize {
        self.d + (2 * self.alpha as usize + 1)
    }

    /// Length of an encoded attacker action: entry block + rate block + data block.
    pub fn attacker_encoding_len(&self) -> usize {
        self.entry_points.len() + RATE_LEVELS + DATA_LEVELS
    }
}

impl Default for ActionConfig {
    fn default() -> Self {
        Self {
            alpha: 3,
            kappa: 1.0,
            sigma: 10.0,
            d: 4,
            entry_points: vec![0],
        }
    }
}

/// One scaling move: target service and replica delta.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DefenderAction {
    pub service_id: usize,
    pub replica_change: i32,
}

impl DefenderAction {
    pub fn new(service_id: usize, replica_change: i32) -> Self {
        Self {
            service_id,
            replica_change,
        }
    }

    /// The conventional no-op: delta zero on the given service.
    pub fn noop(service_id: usize) -> Self {
        Self::new(service_id, 0)
    }

    pub fn is_noop(&self) -> bool {
        self.replica_change == 0
    }

    pub fn validate(&self, cfg: &ActionConfig) -> Result<()> {
        if self.service_id >= cfg.d {
            return Err(Error::InvalidAction(format!(
                "service_id {} out of range for d={}",
                self.service_id, cfg.d
            )));
        }
        if self.replica_change.unsigned_abs() > cfg.alpha {
            return Err(Error::InvalidAction(format!(
                "replica_change {} exceeds alpha={}",
                self.replica_change, cfg.alpha
            )));
        }
        Ok(())
    }
}

impl fmt::Display for DefenderAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{:+})", self.service_id, self.replica_change)
    }
}

/// Number of traffic rate levels: high_decrease .. high_increase.
pub const RATE_LEVELS: usize = 5;
/// Number of data-alteration levels: none, low, high.
pub const DATA_LEVELS: usize = 3;

/// One attack move: entry point, traffic rate change, data alteration.
///
/// `rate_change` maps `{-2..=+2}` onto `{high_decrease, low_decrease,
/// no_change, low_increase, high_increase}`; `data_change` maps `{0,1,2}`
/// onto `{no, low, high}` alteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AttackerAction {
    /// Index into `ActionConfig::entry_points`.
    pub entry_point_id: usize,
    pub rate_change: i32,
    pub data_change: u8,
}

impl AttackerAction {
    pub fn new(entry_point_id: usize, rate_change: i32, data_change: u8) -> Self {
        Self {
            entry_point_id,
            rate_change,
            data_change,
        }
    }

    pub fn noop() -> Self {
        Self::new(0, 0, 0)
    }

    pub fn is_noop(&self) -> bool {
        self.rate_change == 0 && self.data_change == 0
    }

    pub fn validate(&self, cfg: &ActionConfig) -> Result<()> {
        if self.entry_point_id >= cfg.entry_points.len() {
            return Err(Error::InvalidAction(format!(
                "entry_point_id {} out of range ({} entry points)",
                self.entry_point_id,
                cfg.entry_points.len()
            )));
        }
        if self.rate_change < -2 || self.rate_change > 2 {
            return Err(Error::InvalidAction(format!(
                "rate_change {} outside -2..=2",
                self.rate_change
            )));
        }
        if self.data_change > 2 {
            return Err(Error::InvalidAction(format!(
                "data_change {} outside 0..=2",
                self.data_change
            )));
        }
        Ok(())
    }
}

impl fmt::Display for AttackerAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({},{:+},{})",
            self.entry_point_id, self.rate_change, self.data_change
        )
    }
}

/// The full joint move: one action per defender agent plus the attacker's.
#[derive(Debug, Clone, PartialEq)]
pub struct JointAction {
    pub defenders: Vec<DefenderAction>,
    pub attacker: AttackerAction,
}

impl JointAction {
    pub fn validate(&self, cfg: &ActionConfig, n_defenders: usize) -> Result<()> {
        if self.defenders.len() != n_defenders {
            return Err(Error::InvalidAction(format!(
                "expected {} defender actions, got {}",
                n_defenders,
                self.defenders.len()
            )));
        }
        for a in &self.defenders {
            a.validate(cfg)?;
        }
        self.attacker.validate(cfg)
    }
}

/// Structural check result: the list of violated invariants (empty = valid).
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every structural invariant of a cluster state against the config.
pub fn validate_state(s: &ClusterState, cfg: &ActionConfig) -> ValidationReport {
    let mut report = ValidationReport::default();
    if s.deployments.len() != cfg.d {
        report.violations.push(format!(
            "length mismatch: {} deployments, configured d={}",
            s.deployments.len(),
            cfg.d
        ));
    }
    for (idx, p) in s.deployments.iter().enumerate() {
        if p.n_id != idx {
            report
                .violations
                .push(format!("n_id {} at position {idx} (must be {idx})", p.n_id));
        }
        if p.d_err > p.d_dep {
            report
                .violations
                .push(format!("d_err exceeds d_dep at n_id={}", p.n_id));
        }
        for f in 5..STATE_FIELDS {
            let v = p.field(f);
            if !v.is_finite() || v < 0.0 {
                report.violations.push(format!(
                    "{} = {v} at n_id={} (must be finite and >= 0)",
                    FIELD_NAMES[f], p.n_id
                ));
            }
        }
    }
    report
}

/// Per-field upper bounds for min-max state normalization.
///
/// Lower bounds are zero; every bound is floored at 1 so that
/// normalization never divides by zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationSpec {
    pub d: usize,
    pub bounds: [f64; STATE_FIELDS],
}

impl NormalizationSpec {
    /// Bounds from observed states: per-field max across all deployments,
    /// floored at 1.
    pub fn from_states<'a>(d: usize, states: impl IntoIterator<Item = &'a ClusterState>) -> Self {
        let mut bounds = [1.0_f64; STATE_FIELDS];
        for s in states {
            for p in &s.deployments {
                for f in 0..STATE_FIELDS {
                    let v = p.field(f);
                    if v.is_finite() && v > bounds[f] {
                        bounds[f] = v;
                    }
                }
            }
        }
        Self { d, bounds }
    }

    /// Uniform bound across all fields, mostly for tests.
    pub fn uniform(d: usize, bound: f64) -> Self {
        Self {
            d,
            bounds: [bound.max(1.0); STATE_FIELDS],
        }
    }

    pub fn encoded_len(&self) -> usize {
        STATE_FIELDS * self.d
    }
}

/// A field that exceeded its declared bound during encoding and was clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodeWarning {
    pub deployment: usize,
    pub field: &'static str,
    pub value: f64,
    pub bound: f64,
}

impl fmt::Display for EncodeWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} = {} exceeds bound {} at n_id={}, clamped",
            self.field, self.value, self.bound, self.deployment
        )
    }
}

/// One-hot encoding of a defender action: service block, then delta block
/// with the delta offset by `alpha`.
pub fn encode_defender_action(a: &DefenderAction, cfg: &ActionConfig) -> Result<FeatureVector> {
    a.validate(cfg)?;
    let mut v = vec![0.0; cfg.defender_encoding_len()];
    v[a.service_id] = 1.0;
    v[cfg.d + (a.replica_change + cfg.alpha as i32) as usize] = 1.0;
    Ok(v)
}

/// One-hot encoding of an attacker action: entry block, rate block
/// (offset +2), data block.
pub fn encode_attacker_action(a: &AttackerAction, cfg: &ActionConfig) -> Result<FeatureVector> {
    a.validate(cfg)?;
    let n_entries = cfg.entry_points.len();
    let mut v = vec![0.0; cfg.attacker_encoding_len()];
    v[a.entry_point_id] = 1.0;
    v[n_entries + (a.rate_change + 2) as usize] = 1.0;
    v[n_entries + RATE_LEVELS + a.data_change as usize] = 1.0;
    Ok(v)
}

/// Flattens a state into `9 * d` features, each min-max normalized to
/// `[0, 1]` by the per-field bounds. Values above a bound are clamped and
/// reported on the warnings channel. The episode step index is not part
/// of the encoding.
pub fn encode_state(s: &ClusterState, norm: &NormalizationSpec) -> (FeatureVector, Vec<EncodeWarning>) {
    let mut v = Vec::with_capacity(norm.encoded_len());
    let mut warnings = Vec::new();
    for p in &s.deployments {
        for f in 0..STATE_FIELDS {
            let raw = p.field(f);
            let bound = norm.bounds[f];
            if raw > bound {
                warnings.push(EncodeWarning {
                    deployment: p.n_id,
                    field: FIELD_NAMES[f],
                    value: raw,
                    bound,
                });
            }
            v.push((raw / bound).clamp(0.0, 1.0));
        }
    }
    (v, warnings)
}

/// Inverse of [`encode_state`]. Integer fields are rounded to the nearest
/// non-negative integer; the step index is not encoded and comes back as 0.
pub fn decode_state(v: &[f64], norm: &NormalizationSpec, d: usize) -> Result<ClusterState> {
    let expected = STATE_FIELDS * d;
    if v.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: v.len(),
        });
    }
    let int_field = |x: f64, bound: f64| -> u32 { (x * bound).max(0.0).round() as u32 };
    let real_field = |x: f64, bound: f64| -> f64 { (x * bound).max(0.0) };
    let mut deployments = Vec::with_capacity(d);
    for i in 0..d {
        let base = i * STATE_FIELDS;
        deployments.push(DeploymentState {
            n_id: int_field(v[base], norm.bounds[0]) as usize,
            d_dep: int_field(v[base + 1], norm.bounds[1]),
            d_des: int_field(v[base + 2], norm.bounds[2]),
            d_err: int_field(v[base + 3], norm.bounds[3]),
            d_rem: int_field(v[base + 4], norm.bounds[4]),
            r_cpu: real_field(v[base + 5], norm.bounds[5]),
            r_ram: real_field(v[base + 6], norm.bounds[6]),
            t_in: real_field(v[base + 7], norm.bounds[7]),
            t_out: real_field(v[base + 8], norm.bounds[8]),
        });
    }
    Ok(ClusterState {
        deployments,
        step: 0,
    })
}

/// Enumerates the full valid defender action set under a config.
pub fn all_defender_actions(cfg: &ActionConfig) -> Vec<DefenderAction> {
    let mut out = Vec::with_capacity(cfg.d * (2 * cfg.alpha as usize + 1));
    for service_id in 0..cfg.d {
        for delta in cfg.delta_range() {
            out.push(DefenderAction::new(service_id, delta));
        }
    }
    out
}
