//! Proposal search run by each agent against its copy of the team
//! solution.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::objective::{CountingOracle, PartitionMatroid, SetOracle, SolutionSet, TrajId};
use crate::solver::improvement_threshold;

/// A proposed `(delete, add)` pair. `(None, None)` means the proposer has no
/// sufficiently improving operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub d: Option<TrajId>,
    pub a: Option<TrajId>,
    pub proposer: usize,
    pub round: u8,
    pub seq: u64,
}

impl Proposal {
    pub fn is_nop(&self) -> bool {
        self.d.is_none() && self.a.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchStep {
    Pending,
    Done(Option<TrajId>, Option<TrajId>),
}

#[derive(Debug, Clone)]
struct Scan {
    minus: SolutionSet,
    delta: f64,
    next: usize,
}

/// Resumable search; each [`step`](ProposalSearch::step) performs at most one
/// oracle request so a caller can abandon it between evaluations.
///
/// Deletions are tried in id order with NOP last. For each, a deletion that
/// alone reaches the threshold is returned at once; otherwise, when the
/// reduced set holds nothing of this robot, its own trajectories are scanned
/// in descending standalone order for the first one whose addition reaches
/// the threshold. With `lazy`, the scan stops at the first trajectory whose
/// standalone gain is below the deficiency, which submodularity makes safe.
#[derive(Debug, Clone)]
pub struct ProposalSearch {
    robot: usize,
    base: SolutionSet,
    candidates: Arc<Vec<TrajId>>,
    lazy: bool,
    alpha: f64,
    n: usize,
    g_base: Option<f64>,
    threshold: f64,
    deletions: Vec<(usize, TrajId)>,
    d_idx: usize,
    scan: Option<Scan>,
}

impl ProposalSearch {
    pub fn new(
        robot: usize,
        base: SolutionSet,
        candidates: Arc<Vec<TrajId>>,
        alpha: f64,
        n: usize,
        lazy: bool,
    ) -> Self {
        let mut deletions: Vec<(usize, TrajId)> = base.assigned().collect();
        deletions.sort_by_key(|(_, id)| *id);
        ProposalSearch {
            robot,
            base,
            candidates,
            lazy,
            alpha,
            n,
            g_base: None,
            threshold: f64::INFINITY,
            deletions,
            d_idx: 0,
            scan: None,
        }
    }

    pub fn base(&self) -> &SolutionSet {
        &self.base
    }

    pub fn step<O: SetOracle>(&mut self, oracle: &CountingOracle<O>, matroid: &PartitionMatroid) -> SearchStep {
        let g_base = match self.g_base {
            Some(g) => g,
            None => {
                let g = oracle.g(&self.base);
                self.g_base = Some(g);
                self.threshold = improvement_threshold(g, self.alpha, self.n);
                return SearchStep::Pending;
            }
        };
        loop {
            if let Some(scan) = self.scan.as_mut() {
                let Some(&a) = self.candidates.get(scan.next) else {
                    self.scan = None;
                    self.d_idx += 1;
                    continue;
                };
                // The slack keeps rounding in the bound from skipping a
                // candidate the exhaustive scan would accept.
                let slack = 1e-12 * (1.0 + g_base.abs());
                if self.lazy && matroid.standalone(a) + slack < scan.delta {
                    self.scan = None;
                    self.d_idx += 1;
                    continue;
                }
                scan.next += 1;
                let grown = scan
                    .minus
                    .with_added(self.robot, a)
                    .expect("robot slot checked before scanning");
                if oracle.g(&grown) >= self.threshold {
                    let d = self.deletions.get(self.d_idx).map(|(_, id)| *id);
                    return SearchStep::Done(d, Some(a));
                }
                return SearchStep::Pending;
            }
            if self.d_idx > self.deletions.len() {
                return SearchStep::Done(None, None);
            }
            let (minus, g_minus, evaluated) = match self.deletions.get(self.d_idx) {
                Some(&(r, id)) => {
                    let m = self.base.with_deleted(r, id).expect("deletion drawn from the set");
                    let g = oracle.g(&m);
                    (m, g, true)
                }
                None => (self.base.clone(), g_base, false),
            };
            if g_minus >= self.threshold {
                let d = self.deletions.get(self.d_idx).map(|(_, id)| *id);
                return SearchStep::Done(d, None);
            }
            if minus.slot(self.robot).is_some() {
                self.d_idx += 1;
            } else {
                self.scan = Some(Scan {
                    minus,
                    delta: self.threshold - g_minus,
                    next: 0,
                });
            }
            if evaluated {
                return SearchStep::Pending;
            }
        }
    }

    /// Runs the search to completion.
    pub fn run<O: SetOracle>(
        mut self,
        oracle: &CountingOracle<O>,
        matroid: &PartitionMatroid,
    ) -> (Option<TrajId>, Option<TrajId>) {
        loop {
            if let SearchStep::Done(d, a) = self.step(oracle, matroid) {
                return (d, a);
            }
        }
    }
}

/// One complete proposal search for `robot` against `s`.
#[allow(clippy::too_many_arguments)]
pub fn find_proposal<O: SetOracle>(
    robot: usize,
    sorted_partition: Arc<Vec<TrajId>>,
    s: &SolutionSet,
    alpha: f64,
    n: usize,
    oracle: &CountingOracle<O>,
    matroid: &PartitionMatroid,
    lazy: bool,
) -> (Option<TrajId>, Option<TrajId>) {
    ProposalSearch::new(robot, s.clone(), sorted_partition, alpha, n, lazy).run(oracle, matroid)
}
