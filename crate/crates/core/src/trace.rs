//! Commit-log export and offline audit. A trace is JSON lines: a header,
//! then one record per bus broadcast.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::dls::{BusRecord, DlsResult, MessageKind};
use crate::error::{Error, Result};
use crate::objective::TrajId;
use crate::solver::improvement_threshold;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub alpha: f64,
    pub n: usize,
    pub robots: usize,
    /// Final solution of each round, as sorted ids.
    pub round_solutions: Vec<Vec<TrajId>>,
}

pub fn write_trace<W: Write>(mut w: W, alpha: f64, robots: usize, run: &DlsResult) -> Result<()> {
    let header = TraceHeader {
        alpha,
        n: run.n,
        robots,
        round_solutions: run.round_solutions.iter().map(|s| s.key()).collect(),
    };
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w)?;
    for rec in &run.log {
        serde_json::to_writer(&mut w, rec)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_trace<R: BufRead>(r: R) -> Result<(TraceHeader, Vec<BusRecord>)> {
    let mut lines = r
        .lines()
        .enumerate()
        .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()));
    let (_, first) = lines.next().ok_or_else(|| Error::Config {
        field: "trace".into(),
        message: "empty trace".into(),
    })?;
    let header: TraceHeader = serde_json::from_str(&first?).map_err(|e| Error::Config {
        field: "trace line 1".into(),
        message: e.to_string(),
    })?;
    let mut records = Vec::new();
    for (k, line) in lines {
        let rec = serde_json::from_str(&line?).map_err(|e| Error::Config {
            field: format!("trace line {}", k + 1),
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok((header, records))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundAudit {
    pub round: u8,
    pub commits: usize,
    pub g_start: f64,
    pub g_final: f64,
    pub solution: Vec<TrajId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub rounds: Vec<RoundAudit>,
    pub violations: Vec<String>,
}

impl ReplayReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Replays every round from its initial best singleton through the
/// committed records and checks that each commit was admissible, cleared
/// the improvement threshold, continued from the previous value, and that
/// the result matches the recorded round solutions.
pub fn replay(header: &TraceHeader, records: &[BusRecord]) -> ReplayReport {
    let mut violations = Vec::new();
    let mut rounds = Vec::new();
    let mut by_round: BTreeMap<u8, Vec<&BusRecord>> = BTreeMap::new();
    for w in records.windows(2) {
        if w[1].seq <= w[0].seq {
            violations.push(format!("sequence numbers not increasing at seq {}", w[1].seq));
        }
    }
    for rec in records {
        by_round.entry(rec.round).or_default().push(rec);
    }
    for (&round, recs) in &by_round {
        // Initial set: best announced singleton, ties to the lowest id.
        let mut best: Option<(TrajId, usize, f64)> = None;
        let mut g_empty = None;
        for r in recs.iter().filter(|r| r.kind == MessageKind::Init) {
            g_empty.get_or_insert(r.g_before);
            if let (Some(a), Some(robot)) = (r.a, r.a_robot) {
                let better = match best {
                    None => true,
                    Some((bid, _, bg)) => r.g_after > bg || (r.g_after == bg && a < bid),
                };
                if better {
                    best = Some((a, robot, r.g_after));
                }
            }
        }
        let mut slots: BTreeMap<usize, TrajId> = BTreeMap::new();
        let mut g = g_empty.unwrap_or(0.0);
        if let Some((a, robot, g1)) = best {
            slots.insert(robot, a);
            g = g1;
        }
        let g_start = g;
        let mut commits = 0;
        for r in recs.iter().filter(|r| r.committed) {
            let at = format!("round {round} seq {}", r.seq);
            if r.kind == MessageKind::Init || r.kind == MessageKind::Nop {
                violations.push(format!("{at}: {:?} record marked committed", r.kind));
                continue;
            }
            if (r.g_before - g).abs() > 1e-9 * (1.0 + g.abs()) {
                violations.push(format!("{at}: starts from g = {} but the set was at {g}", r.g_before));
            }
            if r.g_after < improvement_threshold(r.g_before, header.alpha, header.n) {
                violations.push(format!(
                    "{at}: g {} -> {} misses the improvement threshold",
                    r.g_before, r.g_after
                ));
            }
            if let Some(d) = r.d {
                let owner = r.d_robot.unwrap_or(usize::MAX);
                if slots.get(&owner) != Some(&d) {
                    violations.push(format!("{at}: deletes {d}, which is not in the set"));
                }
                slots.remove(&owner);
            }
            if let Some(a) = r.a {
                let owner = r.a_robot.unwrap_or(usize::MAX);
                if owner >= header.robots {
                    violations.push(format!("{at}: adds {a} for unknown robot {owner}"));
                }
                if slots.insert(owner, a).is_some() {
                    violations.push(format!("{at}: robot {owner} would hold two trajectories"));
                }
            }
            g = r.g_after;
            commits += 1;
        }
        let mut solution: Vec<TrajId> = slots.values().copied().collect();
        solution.sort_unstable();
        if let Some(expected) = (round as usize)
            .checked_sub(1)
            .and_then(|i| header.round_solutions.get(i))
        {
            if *expected != solution {
                violations.push(format!(
                    "round {round}: replay ends at {solution:?}, trace recorded {expected:?}"
                ));
            }
        }
        rounds.push(RoundAudit {
            round,
            commits,
            g_start,
            g_final: g,
            solution,
        });
    }
    if rounds.len() != header.round_solutions.len() {
        violations.push(format!(
            "trace holds {} rounds, header lists {}",
            rounds.len(),
            header.round_solutions.len()
        ));
    }
    ReplayReport { rounds, violations }
}
