//! The digital twin: an exact transition table over recorded traces, an
//! MLP fallback approximator, and their composition with accuracy
//! evaluation against held-out transitions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::mlp::{mse_loss, train_step, AdamState, MlpModel, TrainOpts};
use crate::model::{
    encode_attacker_action, encode_defender_action, encode_state, decode_state, ActionConfig,
    AttackerAction, ClusterState, DefenderAction, NormalizationSpec, STATE_FIELDS,
};
use crate::trace::{parse_state_tokens, state_tokens, TraceLog};

pub const TABLE_FORMAT_VERSION: u32 = 1;
pub const NORM_FORMAT_VERSION: u32 = 1;
/// Hidden layout of the transition approximator.
pub const TWIN_HIDDEN_DIMS: [usize; 3] = [128, 128, 128];
/// Default per-field normalized tolerance for accuracy evaluation.
pub const DEFAULT_ACCURACY_TOL: f64 = 0.05;

/// Exact-match key over the state tuple and both action encodings. The
/// episode step index is deliberately excluded: the game state is the
/// per-deployment metric tuple.
pub fn canonical_key(
    s: &ClusterState,
    defenders: &[DefenderAction],
    attacker: &AttackerAction,
) -> String {
    let mut key = String::new();
    for p in &s.deployments {
        let _ = write!(
            key,
            "{} {} {} {} {} {} {} {} {} ",
            p.n_id, p.d_dep, p.d_des, p.d_err, p.d_rem, p.r_cpu, p.r_ram, p.t_in, p.t_out
        );
    }
    key.push(';');
    for a in defenders {
        let _ = write!(key, " {}:{}", a.service_id, a.replica_change);
    }
    let _ = write!(
        key,
        " ; {} {} {}",
        attacker.entry_point_id, attacker.rate_change, attacker.data_change
    );
    key
}

/// Partial transition function recorded from traces.
#[derive(Debug, Clone, Default)]
pub struct TransitionTable {
    map: BTreeMap<String, ClusterState>,
    /// Duplicate keys observed with a differing next state.
    pub collisions: u64,
    pub d: usize,
}

impl TransitionTable {
    /// Builds the table from a trace log; on duplicate keys the most
    /// recent record wins.
    pub fn build(traces: &TraceLog) -> Result<Self> {
        if traces.is_empty() {
            return Err(Error::EmptyInput("trace log"));
        }
        let mut table = Self {
            map: BTreeMap::new(),
            collisions: 0,
            d: traces.action.d,
        };
        for r in &traces.records {
            let key = canonical_key(&r.s, &r.defenders, &r.attacker);
            if let Some(prev) = table.map.insert(key, r.s_next.clone()) {
                if prev != r.s_next {
                    table.collisions += 1;
                }
            }
        }
        Ok(table)
    }

    pub fn lookup(
        &self,
        s: &ClusterState,
        defenders: &[DefenderAction],
        attacker: &AttackerAction,
    ) -> Option<&ClusterState> {
        self.map.get(&canonical_key(s, defenders, attacker))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "#karma-table v{} d={} collisions={}",
            TABLE_FORMAT_VERSION, self.d, self.collisions
        );
        for (key, next) in &self.map {
            let _ = writeln!(out, "{key}\t{}", state_tokens(next));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::EmptyInput("table file"))?;
        let mut d = None;
        let mut collisions = 0;
        for tok in header.split_whitespace().skip(1) {
            if tok == format!("v{TABLE_FORMAT_VERSION}") {
                continue;
            }
            if let Some((k, v)) = tok.split_once('=') {
                match k {
                    "d" => d = v.parse().ok(),
                    "collisions" => collisions = v.parse().unwrap_or(0),
                    _ => {}
                }
            }
        }
        let d = d.ok_or(Error::MalformedRecord {
            line: 1,
            reason: "table header missing d".into(),
        })?;
        let mut map = BTreeMap::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (key, value) = line.split_once('\t').ok_or(Error::MalformedRecord {
                line: idx + 1,
                reason: "expected key<TAB>state".into(),
            })?;
            let tokens: Vec<&str> = value.split_whitespace().collect();
            map.insert(key.to_string(), parse_state_tokens(&tokens, d, idx + 1)?);
        }
        Ok(Self { map, collisions, d })
    }
}

/// Per-epoch train/validation losses from approximator fitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub train: f64,
    pub val: f64,
}

/// Builds the supervised dataset `(state ++ joint action) -> next state`
/// in normalized feature space.
fn build_dataset(
    traces: &TraceLog,
    norm: &NormalizationSpec,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let mut data = Vec::with_capacity(traces.len());
    for r in &traces.records {
        let (mut x, _) = encode_state(&r.s, norm);
        for a in &r.defenders {
            x.extend(encode_defender_action(a, &traces.action)?);
        }
        x.extend(encode_attacker_action(&r.attacker, &traces.action)?);
        let (y, _) = encode_state(&r.s_next, norm);
        data.push((x, y));
    }
    Ok(data)
}

/// Trains the MLP approximator on an 80/20 seeded shuffle split and
/// returns the model, per-epoch losses, and the trace-derived
/// normalization bounds.
pub fn fit_approximator(
    traces: &TraceLog,
    opts: &TrainOpts,
) -> Result<(MlpModel, Vec<EpochLoss>, NormalizationSpec)> {
    fit_approximator_with(traces, opts, &TWIN_HIDDEN_DIMS)
}

pub fn fit_approximator_with(
    traces: &TraceLog,
    opts: &TrainOpts,
    hidden_dims: &[usize],
) -> Result<(MlpModel, Vec<EpochLoss>, NormalizationSpec)> {
    if traces.len() < 2 {
        return Err(Error::InvalidConfig(
            "need at least 2 transitions to fit the approximator".into(),
        ));
    }
    opts.validate()?;
    let norm = traces.normalization();
    let data = build_dataset(traces, &norm)?;
    let input_dim = data[0].0.len();
    let output_dim = data[0].1.len();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut indices: Vec<usize> = (0..data.len()).collect();
    indices.shuffle(&mut rng);
    let n_train = ((data.len() as f64 * 0.8).round() as usize)
        .max(1)
        .min(data.len() - 1);
    let (train_idx, val_idx) = indices.split_at(n_train);
    let train_set: Vec<(Vec<f64>, Vec<f64>)> =
        train_idx.iter().map(|&i| data[i].clone()).collect();
    let val_set: Vec<(Vec<f64>, Vec<f64>)> = val_idx.iter().map(|&i| data[i].clone()).collect();

    let mut dims = vec![input_dim];
    dims.extend_from_slice(hidden_dims);
    dims.push(output_dim);
    let mut model = MlpModel::init(&dims, opts.seed)?;
    let mut adam = AdamState::new(&model);

    let mut history = Vec::with_capacity(opts.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(opts.batch_size) {
            let batch: Vec<(Vec<f64>, Vec<f64>)> =
                chunk.iter().map(|&i| train_set[i].clone()).collect();
            epoch_loss += train_step(&mut model, &batch, opts, &mut adam)?;
            batches += 1;
        }
        let val = mse_loss(&model, &val_set)?;
        history.push(EpochLoss {
            train: epoch_loss / batches.max(1) as f64,
            val,
        });
    }
    Ok((model, history, norm))
}

/// What produced a twin prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepSource {
    Table,
    Approximator,
}

/// Fallback model used when a key is not in the table.
#[derive(Debug)]
pub enum TwinFallback {
    Mlp(MlpModel),
    /// Predicts no change: `s' = s`.
    Persistence,
}

/// Composed transition model: exact table first, fallback otherwise.
#[derive(Debug)]
pub struct Twin {
    pub table: TransitionTable,
    pub fallback: TwinFallback,
    pub norm: NormalizationSpec,
    pub action: ActionConfig,
    pub n_defenders: usize,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl Twin {
    pub fn new(
        table: TransitionTable,
        fallback: TwinFallback,
        norm: NormalizationSpec,
        action: ActionConfig,
        n_defenders: usize,
    ) -> Self {
        Self {
            table,
            fallback,
            norm,
            action,
            n_defenders,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// Table + MLP twin fitted from a trace log.
    pub fn fit(traces: &TraceLog, opts: &TrainOpts) -> Result<(Self, Vec<EpochLoss>)> {
        let table = TransitionTable::build(traces)?;
        let (model, history, norm) = fit_approximator(traces, opts)?;
        Ok((
            Self::new(
                table,
                TwinFallback::Mlp(model),
                norm,
                traces.action.clone(),
                traces.n_defenders,
            ),
            history,
        ))
    }

    /// Table-only twin with the persistence fallback.
    pub fn lookup_only(traces: &TraceLog) -> Result<Self> {
        let table = TransitionTable::build(traces)?;
        Ok(Self::new(
            table,
            TwinFallback::Persistence,
            traces.normalization(),
            traces.action.clone(),
            traces.n_defenders,
        ))
    }

    pub fn hit_count(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn miss_count(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    /// Predicts the next state: recorded transitions are returned
    /// bit-exactly, anything else goes through the fallback with a
    /// post-decode sanity clamp.
    pub fn step(
        &self,
        s: &ClusterState,
        defenders: &[DefenderAction],
        attacker: &AttackerAction,
    ) -> Result<(ClusterState, StepSource)> {
        if let Some(next) = self.table.lookup(s, defenders, attacker) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok((next.clone(), StepSource::Table));
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let next = match &self.fallback {
            TwinFallback::Persistence => {
                let mut next = s.clone();
                next.step = s.step + 1;
                next
            }
            TwinFallback::Mlp(model) => {
                let (mut x, _) = encode_state(s, &self.norm);
                for a in defenders {
                    x.extend(encode_defender_action(a, &self.action)?);
                }
                x.extend(encode_attacker_action(attacker, &self.action)?);
                let y = model.forward(&x)?;
                let mut next = decode_state(&y, &self.norm, self.action.d)?;
                next.step = s.step + 1;
                for (i, p) in next.deployments.iter_mut().enumerate() {
                    p.n_id = i;
                    p.d_err = p.d_err.min(p.d_dep);
                }
                next
            }
        };
        Ok((next, StepSource::Approximator))
    }

    /// Fraction of held-out transitions where every normalized field of
    /// the prediction is within `tol` of the recorded next state.
    pub fn evaluate_accuracy(&self, heldout: &TraceLog, tol: f64) -> Result<f64> {
        if heldout.is_empty() {
            return Err(Error::EmptyInput("held-out trace log"));
        }
        let mut matches = 0usize;
        for r in &heldout.records {
            let (pred, _) = self.step(&r.s, &r.defenders, &r.attacker)?;
            let (pv, _) = encode_state(&pred, &self.norm);
            let (tv, _) = encode_state(&r.s_next, &self.norm);
            if pv
                .iter()
                .zip(tv.iter())
                .all(|(a, b)| (a - b).abs() <= tol)
            {
                matches += 1;
            }
        }
        Ok(matches as f64 / heldout.len() as f64)
    }

    /// Persists table, fallback model, and normalization bounds under
    /// `dir`, tied together by a hash manifest.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("table.txt"), self.table.to_text())?;
        std::fs::write(dir.join("norm.txt"), norm_to_text(&self.norm))?;
        let mut manifest = Manifest::new();
        manifest.set("kind", "twin");
        manifest.set("d", self.action.d);
        manifest.set("n", self.n_defenders);
        manifest.set("alpha", self.action.alpha);
        manifest.set("kappa", self.action.kappa);
        manifest.set("sigma", self.action.sigma);
        let entries: Vec<String> = self
            .action
            .entry_points
            .iter()
            .map(|e| e.to_string())
            .collect();
        manifest.set("entry_points", entries.join(","));
        manifest.record_artifact("table", dir, "table.txt")?;
        manifest.record_artifact("norm", dir, "norm.txt")?;
        match &self.fallback {
            TwinFallback::Mlp(model) => {
                model.save(&dir.join("model.bin"))?;
                manifest.set("fallback", "mlp");
                manifest.record_artifact("model", dir, "model.bin")?;
            }
            TwinFallback::Persistence => {
                manifest.set("fallback", "persistence");
            }
        }
        manifest.write(&dir.join("twin-manifest.txt"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = Manifest::read(&dir.join("twin-manifest.txt"))?;
        let d: usize = manifest.require("d")?.parse().map_err(|_| {
            Error::MalformedRecord {
                line: 0,
                reason: "bad d in twin manifest".into(),
            }
        })?;
        let n_defenders: usize = manifest.require("n")?.parse().map_err(|_| {
            Error::MalformedRecord {
                line: 0,
                reason: "bad n in twin manifest".into(),
            }
        })?;
        let parse_f64 = |key: &str| -> Result<f64> {
            manifest.require(key)?.parse().map_err(|_| Error::MalformedRecord {
                line: 0,
                reason: format!("bad {key} in twin manifest"),
            })
        };
        let mut entry_points = Vec::new();
        for tok in manifest.require("entry_points")?.split(',') {
            entry_points.push(tok.parse().map_err(|_| Error::MalformedRecord {
                line: 0,
                reason: "bad entry_points in twin manifest".into(),
            })?);
        }
        let action = ActionConfig {
            alpha: manifest.require("alpha")?.parse().map_err(|_| {
                Error::MalformedRecord {
                    line: 0,
                    reason: "bad alpha in twin manifest".into(),
                }
            })?,
            kappa: parse_f64("kappa")?,
            sigma: parse_f64("sigma")?,
            d,
            entry_points,
        };
        action.validate()?;
        let table_path = manifest.verify_artifact("table", dir)?;
        let table = TransitionTable::from_text(&std::fs::read_to_string(table_path)?)?;
        let norm_path = manifest.verify_artifact("norm", dir)?;
        let norm = norm_from_text(&std::fs::read_to_string(norm_path)?)?;
        let fallback = match manifest.require("fallback")? {
            "mlp" => {
                let model_path = manifest.verify_artifact("model", dir)?;
                TwinFallback::Mlp(MlpModel::load(&model_path)?)
            }
            "persistence" => TwinFallback::Persistence,
            other => {
                return Err(Error::MalformedRecord {
                    line: 0,
                    reason: format!("unknown twin fallback `{other}`"),
                })
            }
        };
        Ok(Self::new(table, fallback, norm, action, n_defenders))
    }
}

pub fn norm_to_text(norm: &NormalizationSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "#karma-norm v{} d={}", NORM_FORMAT_VERSION, norm.d);
    for (name, bound) in crate::model::FIELD_NAMES.iter().zip(norm.bounds.iter()) {
        let _ = writeln!(out, "{name}={bound}");
    }
    out
}

pub fn norm_from_text(text: &str) -> Result<NormalizationSpec> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::EmptyInput("norm file"))?;
    let d = header
        .split_whitespace()
        .find_map(|tok| tok.strip_prefix("d=").and_then(|v| v.parse().ok()))
        .ok_or(Error::MalformedRecord {
            line: 1,
            reason: "norm header missing d".into(),
        })?;
    let mut bounds = [1.0_f64; STATE_FIELDS];
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(Error::MalformedRecord {
            line: idx + 1,
            reason: "expected field=bound".into(),
        })?;
        let pos = crate::model::FIELD_NAMES
            .iter()
            .position(|n| *n == k)
            .ok_or(Error::MalformedRecord {
                line: idx + 1,
                reason: format!("unknown field `{k}`"),
            })?;
        bounds[pos] = v.parse().map_err(|_| Error::MalformedRecord {
            line: idx + 1,
            reason: format!("bad bound `{v}`"),
        })?;
    }
    Ok(NormalizationSpec { d, bounds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DeploymentState;
    use crate::trace::TransitionRecord;
    use rand::Rng;

    fn state(d: usize, fill: u32) -> ClusterState {
        let mut s = ClusterState::zeroed(d);
        for p in s.deployments.iter_mut() {
            p.d_dep = 2;
            p.d_des = 2;
            p.d_rem = fill;
            p.t_in = fill as f64 * 1.5;
        }
        s
    }

    fn record(s: ClusterState, s_next: ClusterState) -> TransitionRecord {
        TransitionRecord {
            episode: 0,
            s,
            defenders: vec![DefenderAction::new(0, 1)],
            attacker: AttackerAction::noop(),
            s_next,
        }
    }

    fn tiny_log(records: Vec<TransitionRecord>) -> TraceLog {
        let action = ActionConfig {
            d: 2,
            entry_points: vec![0],
            ..Default::default()
        };
        TraceLog {
            action,
            n_defenders: 1,
            records,
        }
    }

    #[test]
    fn table_insert_and_lookup() {
        let s = state(2, 3);
        let mut s_next = state(2, 5);
        s_next.step = 1;
        let log = tiny_log(vec![record(s.clone(), s_next.clone())]);
        let table = TransitionTable::build(&log).unwrap();
        let r = &log.records[0];
        assert_eq!(
            table.lookup(&r.s, &r.defenders, &r.attacker),
            Some(&s_next)
        );
        assert_eq!(table.collisions, 0);
    }

    #[test]
    fn table_miss_returns_none() {
        let log = tiny_log(vec![record(state(2, 3), state(2, 5))]);
        let table = TransitionTable::build(&log).unwrap();
        let other = state(2, 9);
        assert!(table
            .lookup(&other, &log.records[0].defenders, &log.records[0].attacker)
            .is_none());
    }

    #[test]
    fn duplicate_key_most_recent_wins() {
        let s = state(2, 3);
        let first = record(s.clone(), state(2, 4));
        let second = record(s.clone(), state(2, 8));
        let log = tiny_log(vec![first.clone(), second.clone()]);
        let table = TransitionTable::build(&log).unwrap();
        assert_eq!(table.collisions, 1);
        assert_eq!(
            table.lookup(&s, &second.defenders, &second.attacker),
            Some(&second.s_next)
        );
    }

    #[test]
    fn step_index_not_part_of_key() {
        let mut a = state(2, 3);
        a.step = 0;
        let mut b = state(2, 3);
        b.step = 17;
        let r = record(a.clone(), state(2, 4));
        assert_eq!(
            canonical_key(&a, &r.defenders, &r.attacker),
            canonical_key(&b, &r.defenders, &r.attacker)
        );
    }

    #[test]
    fn table_text_round_trip() {
        let log = tiny_log(vec![
            record(state(2, 3), state(2, 4)),
            record(state(2, 5), state(2, 6)),
        ]);
        let table = TransitionTable::build(&log).unwrap();
        let text = table.to_text();
        let back = TransitionTable::from_text(&text).unwrap();
        assert_eq!(back.len(), table.len());
        assert_eq!(back.to_text(), text);
    }

    fn constant_env_log(n_records: usize, seed: u64) -> TraceLog {
        // A trivially learnable environment: the state never changes.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let action = ActionConfig {
            d: 2,
            entry_points: vec![0],
            ..Default::default()
        };
        let mut log = TraceLog::new(action.clone(), 1);
        for ep in 0..n_records {
            let mut s = ClusterState::zeroed(2);
            for p in s.deployments.iter_mut() {
                *p = DeploymentState {
                    n_id: p.n_id,
                    d_dep: rng.gen_range(1..8),
                    d_des: rng.gen_range(1..8),
                    d_err: 0,
                    d_rem: rng.gen_range(0..20),
                    r_cpu: rng.gen_range(0.0..200.0),
                    r_ram: rng.gen_range(0.0..100.0),
                    t_in: rng.gen_range(0.0..50.0),
                    t_out: rng.gen_range(0.0..50.0),
                };
            }
            let mut s_next = s.clone();
            s_next.step = 1;
            log.records.push(TransitionRecord {
                episode: ep as u64,
                s,
                defenders: vec![DefenderAction::new(
                    rng.gen_range(0..2),
                    rng.gen_range(-3..=3),
                )],
                attacker: AttackerAction::new(0, rng.gen_range(-2..=2), rng.gen_range(0..=2)),
                s_next,
            });
        }
        log
    }

    fn quick_opts() -> TrainOpts {
        TrainOpts {
            learning_rate: 3e-3,
            batch_size: 32,
            epochs: 120,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn fit_learns_constant_environment() {
        let log = constant_env_log(240, 11);
        let (_, history, _) = fit_approximator_with(&log, &quick_opts(), &[64, 64]).unwrap();
        let last = history.last().unwrap();
        assert!(
            last.val < 1e-3,
            "validation loss too high: {}",
            last.val
        );
        assert!(last.train < history[0].train);
    }

    #[test]
    fn fit_is_deterministic_per_seed() {
        let log = constant_env_log(60, 3);
        let opts = TrainOpts {
            epochs: 5,
            ..quick_opts()
        };
        let (m1, h1, _) = fit_approximator_with(&log, &opts, &[16]).unwrap();
        let (m2, h2, _) = fit_approximator_with(&log, &opts, &[16]).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn fit_rejects_tiny_logs() {
        let log = tiny_log(vec![record(state(2, 1), state(2, 1))]);
        assert!(fit_approximator(&log, &TrainOpts::default()).is_err());
    }

    #[test]
    fn twin_recorded_transition_is_bit_exact() {
        let log = constant_env_log(50, 2);
        let table = TransitionTable::build(&log).unwrap();
        let twin = Twin::new(
            table,
            TwinFallback::Persistence,
            log.normalization(),
            log.action.clone(),
            1,
        );
        let r = &log.records[7];
        let (next, source) = twin.step(&r.s, &r.defenders, &r.attacker).unwrap();
        assert_eq!(source, StepSource::Table);
        assert_eq!(next, r.s_next);
        assert_eq!(twin.hit_count(), 1);
    }

    #[test]
    fn twin_falls_back_on_miss_within_tolerance() {
        let log = constant_env_log(240, 11);
        let (model, _, norm) = fit_approximator_with(&log, &quick_opts(), &[64, 64]).unwrap();
        let table = TransitionTable::build(&log).unwrap();
        let twin = Twin::new(
            table,
            TwinFallback::Mlp(model),
            norm.clone(),
            log.action.clone(),
            1,
        );
        // Fresh states not in the table must route to the approximator and
        // stay close to the identity map the environment follows.
        let fresh = constant_env_log(40, 999);
        let mut approx_count = 0;
        for r in &fresh.records {
            let (pred, source) = twin.step(&r.s, &r.defenders, &r.attacker).unwrap();
            if source == StepSource::Approximator {
                approx_count += 1;
                let (pv, _) = encode_state(&pred, &norm);
                let (tv, _) = encode_state(&r.s_next, &norm);
                for (a, b) in pv.iter().zip(tv.iter()) {
                    assert!((a - b).abs() < 0.05, "field error {} too large", (a - b).abs());
                }
            }
        }
        assert!(approx_count > 30);
    }

    #[test]
    fn accuracy_is_one_on_training_data() {
        let log = constant_env_log(80, 4);
        let twin = Twin::lookup_only(&log).unwrap();
        assert_eq!(twin.evaluate_accuracy(&log, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_counts_fallback_quality() {
        // Persistence fallback on a changing environment scores below 1.
        let mut log = constant_env_log(20, 6);
        for r in log.records.iter_mut() {
            r.s_next.deployments[0].d_rem = r.s.deployments[0].d_rem + 15;
        }
        let twin = Twin::lookup_only(&log).unwrap();
        let mut fresh = log.clone();
        for r in fresh.records.iter_mut() {
            r.s.deployments[1].r_cpu += 0.125; // force table misses
        }
        for r in fresh.records.iter_mut() {
            r.s_next = r.s.clone();
            r.s_next.deployments[0].d_rem = r.s.deployments[0].d_rem + 15;
        }
        let acc = twin.evaluate_accuracy(&fresh, 0.05).unwrap();
        assert_eq!(acc, 0.0);
    }

    #[test]
    fn empty_heldout_rejected() {
        let log = constant_env_log(10, 8);
        let twin = Twin::lookup_only(&log).unwrap();
        let empty = TraceLog::new(log.action.clone(), 1);
        assert!(twin.evaluate_accuracy(&empty, 0.05).is_err());
    }

    #[test]
    fn twin_save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let log = constant_env_log(60, 14);
        let opts = TrainOpts {
            epochs: 3,
            ..quick_opts()
        };
        let (model, _, norm) = fit_approximator_with(&log, &opts, &[16]).unwrap();
        let table = TransitionTable::build(&log).unwrap();
        let twin = Twin::new(table, TwinFallback::Mlp(model), norm, log.action.clone(), 1);
        twin.save(dir.path()).unwrap();
        let loaded = Twin::load(dir.path()).unwrap();
        assert_eq!(loaded.table.to_text(), twin.table.to_text());
        assert_eq!(loaded.norm, twin.norm);
        let r = &log.records[3];
        let a = twin.step(&r.s, &r.defenders, &r.attacker).unwrap();
        let b = loaded.step(&r.s, &r.defenders, &r.attacker).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn twin_load_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let log = constant_env_log(20, 15);
        let twin = Twin::lookup_only(&log).unwrap();
        twin.save(dir.path()).unwrap();
        let table_path = dir.path().join("table.txt");
        let mut text = std::fs::read_to_string(&table_path).unwrap();
        text.push('\n');
        std::fs::write(&table_path, text).unwrap();
        assert!(Twin::load(dir.path()).is_err());
    }

    #[test]
    fn norm_text_round_trip() {
        let log = constant_env_log(20, 16);
        let norm = log.normalization();
        let back = norm_from_text(&norm_to_text(&norm)).unwrap();
        assert_eq!(back, norm);
    }
}
