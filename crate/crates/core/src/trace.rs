//! Line-delimited transition logs: the corpus the twin is fitted from.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{
    ActionConfig, AttackerAction, ClusterState, DefenderAction, DeploymentState, NormalizationSpec,
    STATE_FIELDS,
};

pub const TRACE_FORMAT_VERSION: u32 = 1;

/// One observed transition with episode provenance; the step index lives
/// in the states themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub episode: u64,
    pub s: ClusterState,
    pub defenders: Vec<DefenderAction>,
    pub attacker: AttackerAction,
    pub s_next: ClusterState,
}

/// An ordered collection of transitions under one action configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceLog {
    pub action: ActionConfig,
    pub n_defenders: usize,
    pub records: Vec<TransitionRecord>,
}

impl TraceLog {
    pub fn new(action: ActionConfig, n_defenders: usize) -> Self {
        Self {
            action,
            n_defenders,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Normalization bounds over every state occurring in the log.
    pub fn normalization(&self) -> NormalizationSpec {
        let states = self
            .records
            .iter()
            .flat_map(|r| [&r.s, &r.s_next]);
        NormalizationSpec::from_states(self.action.d, states)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let entries: Vec<String> = self.action.entry_points.iter().map(|e| e.to_string()).collect();
        let _ = writeln!(
            out,
            "#karma-trace v{} d={} n={} alpha={} kappa={} sigma={} entry_points={}",
            TRACE_FORMAT_VERSION,
            self.action.d,
            self.n_defenders,
            self.action.alpha,
            self.action.kappa,
            self.action.sigma,
            entries.join(",")
        );
        for r in &self.records {
            let defenders: Vec<String> = r
                .defenders
                .iter()
                .map(|a| format!("{}:{}", a.service_id, a.replica_change))
                .collect();
            let _ = writeln!(
                out,
                "{} | {} | {} | {} {} {} | {}",
                r.episode,
                state_tokens(&r.s),
                defenders.join(" "),
                r.attacker.entry_point_id,
                r.attacker.rate_change,
                r.attacker.data_change,
                state_tokens(&r.s_next),
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::EmptyInput("trace file"))?;
        let (action, n_defenders) = parse_header(header)?;
        let mut log = TraceLog::new(action, n_defenders);
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            log.records
                .push(parse_record(line, line_no, &log.action, n_defenders)?);
        }
        Ok(log)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }
}

/// Space-separated state serialization: step, then the nine canonical
/// fields per deployment. Floats use the shortest round-trip decimal form.
pub fn state_tokens(s: &ClusterState) -> String {
    let mut out = String::new();
    let _ = write!(out, "{}", s.step);
    for p in &s.deployments {
        let _ = write!(
            out,
            " {} {} {} {} {} {} {} {} {}",
            p.n_id, p.d_dep, p.d_des, p.d_err, p.d_rem, p.r_cpu, p.r_ram, p.t_in, p.t_out
        );
    }
    out
}

/// Inverse of [`state_tokens`].
pub fn parse_state_tokens(tokens: &[&str], d: usize, line: usize) -> Result<ClusterState> {
    let expected = 1 + STATE_FIELDS * d;
    if tokens.len() != expected {
        return Err(Error::MalformedRecord {
            line,
            reason: format!("expected {expected} state tokens, got {}", tokens.len()),
        });
    }
    let step = parse_num::<u64>(tokens[0], line, "step")?;
    let mut deployments = Vec::with_capacity(d);
    for i in 0..d {
        let base = 1 + i * STATE_FIELDS;
        deployments.push(DeploymentState {
            n_id: parse_num::<usize>(tokens[base], line, "n_id")?,
            d_dep: parse_num::<u32>(tokens[base + 1], line, "d_dep")?,
            d_des: parse_num::<u32>(tokens[base + 2], line, "d_des")?,
            d_err: parse_num::<u32>(tokens[base + 3], line, "d_err")?,
            d_rem: parse_num::<u32>(tokens[base + 4], line, "d_rem")?,
            r_cpu: parse_num::<f64>(tokens[base + 5], line, "r_cpu")?,
            r_ram: parse_num::<f64>(tokens[base + 6], line, "r_ram")?,
            t_in: parse_num::<f64>(tokens[base + 7], line, "t_in")?,
            t_out: parse_num::<f64>(tokens[base + 8], line, "t_out")?,
        });
    }
    Ok(ClusterState { deployments, step })
}

fn parse_num<T: std::str::FromStr>(token: &str, line: usize, what: &str) -> Result<T> {
    token.parse().map_err(|_| Error::MalformedRecord {
        line,
        reason: format!("bad {what} token `{token}`"),
    })
}

fn parse_header(header: &str) -> Result<(ActionConfig, usize)> {
    let err = |reason: &str| Error::MalformedRecord {
        line: 1,
        reason: reason.to_string(),
    };
    let mut parts = header.split_whitespace();
    let tag = parts.next().ok_or_else(|| err("empty header"))?;
    if tag != format!("#karma-trace v{TRACE_FORMAT_VERSION}").split(' ').next().unwrap() {
        return Err(err("missing #karma-trace tag"));
    }
    let version = parts.next().ok_or_else(|| err("missing version"))?;
    if version != format!("v{TRACE_FORMAT_VERSION}") {
        return Err(err(&format!("unsupported trace version {version}")));
    }
    let mut d = None;
    let mut n = None;
    let mut alpha = None;
    let mut kappa = None;
    let mut sigma = None;
    let mut entry_points = None;
    for kv in parts {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| err(&format!("bad header token `{kv}`")))?;
        match k {
            "d" => d = Some(parse_num::<usize>(v, 1, "d")?),
            "n" => n = Some(parse_num::<usize>(v, 1, "n")?),
            "alpha" => alpha = Some(parse_num::<u32>(v, 1, "alpha")?),
            "kappa" => kappa = Some(parse_num::<f64>(v, 1, "kappa")?),
            "sigma" => sigma = Some(parse_num::<f64>(v, 1, "sigma")?),
            "entry_points" => {
                let mut eps = Vec::new();
                for t in v.split(',') {
                    eps.push(parse_num::<usize>(t, 1, "entry point")?);
                }
                entry_points = Some(eps);
            }
            _ => return Err(err(&format!("unknown header key `{k}`"))),
        }
    }
    let action = ActionConfig {
        alpha: alpha.ok_or_else(|| err("missing alpha"))?,
        kappa: kappa.ok_or_else(|| err("missing kappa"))?,
        sigma: sigma.ok_or_else(|| err("missing sigma"))?,
        d: d.ok_or_else(|| err("missing d"))?,
        entry_points: entry_points.ok_or_else(|| err("missing entry_points"))?,
    };
    action
        .validate()
        .map_err(|e| err(&format!("invalid action config: {e}")))?;
    Ok((action, n.ok_or_else(|| err("missing n"))?))
}

fn parse_record(
    line: &str,
    line_no: usize,
    action: &ActionConfig,
    n_defenders: usize,
) -> Result<TransitionRecord> {
    let fields: Vec<&str> = line.split('|').map(str::trim).collect();
    if fields.len() != 5 {
        return Err(Error::MalformedRecord {
            line: line_no,
            reason: format!("expected 5 `|`-separated fields, got {}", fields.len()),
        });
    }
    let episode = parse_num::<u64>(fields[0], line_no, "episode")?;
    let s_tokens: Vec<&str> = fields[1].split_whitespace().collect();
    let s = parse_state_tokens(&s_tokens, action.d, line_no)?;
    let mut defenders = Vec::with_capacity(n_defenders);
    for tok in fields[2].split_whitespace() {
        let (svc, delta) = tok.split_once(':').ok_or(Error::MalformedRecord {
            line: line_no,
            reason: format!("bad defender token `{tok}`"),
        })?;
        let a = DefenderAction::new(
            parse_num(svc, line_no, "service_id")?,
            parse_num(delta, line_no, "replica_change")?,
        );
        a.validate(action).map_err(|e| Error::MalformedRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
        defenders.push(a);
    }
    if defenders.len() != n_defenders {
        return Err(Error::MalformedRecord {
            line: line_no,
            reason: format!(
                "expected {n_defenders} defender actions, got {}",
                defenders.len()
            ),
        });
    }
    let atk_tokens: Vec<&str> = fields[3].split_whitespace().collect();
    if atk_tokens.len() != 3 {
        return Err(Error::MalformedRecord {
            line: line_no,
            reason: "attacker field needs 3 tokens".into(),
        });
    }
    let attacker = AttackerAction::new(
        parse_num(atk_tokens[0], line_no, "entry_point_id")?,
        parse_num(atk_tokens[1], line_no, "rate_change")?,
        parse_num(atk_tokens[2], line_no, "data_change")?,
    );
    attacker.validate(action).map_err(|e| Error::MalformedRecord {
        line: line_no,
        reason: e.to_string(),
    })?;
    let next_tokens: Vec<&str> = fields[4].split_whitespace().collect();
    let s_next = parse_state_tokens(&next_tokens, action.d, line_no)?;
    Ok(TransitionRecord {
        episode,
        s,
        defenders,
        attacker,
        s_next,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_log() -> TraceLog {
        let action = ActionConfig::default();
        let mut log = TraceLog::new(action, 2);
        let mut s = ClusterState::zeroed(4);
        for p in s.deployments.iter_mut() {
            p.d_dep = 2;
            p.d_des = 2;
            p.t_in = 12.625;
            p.t_out = 11.03;
        }
        let mut s_next = s.clone();
        s_next.step = 1;
        s_next.deployments[0].d_rem = 7;
        log.records.push(TransitionRecord {
            episode: 0,
            s,
            defenders: vec![DefenderAction::new(0, 1), DefenderAction::new(2, -2)],
            attacker: AttackerAction::new(0, 2, 1),
            s_next,
        });
        log
    }

    #[test]
    fn round_trips_through_text() {
        let log = sample_log();
        let text = log.to_text();
        let back = TraceLog::from_text(&text).unwrap();
        assert_eq!(log, back);
        // Serialization is deterministic.
        assert_eq!(text, back.to_text());
    }

    #[test]
    fn malformed_record_reports_line() {
        let log = sample_log();
        let mut text = log.to_text();
        text.push_str("0 | garbage | 0:0 0:0 | 0 0 0 | garbage\n");
        let e = TraceLog::from_text(&text).unwrap_err();
        match e {
            Error::MalformedRecord { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_wrong_defender_count() {
        let log = sample_log();
        let text = log.to_text().replace("0:1 2:-2", "0:1");
        assert!(TraceLog::from_text(&text).is_err());
    }

    #[test]
    fn normalization_from_log_floors_at_one() {
        let log = sample_log();
        let norm = log.normalization();
        assert_eq!(norm.bounds[4], 7.0); // d_rem max
        assert_eq!(norm.bounds[3], 1.0); // d_err never above floor
        assert_eq!(norm.bounds[7], 12.625);
    }
}
