//! Types shared by every solver.

use serde::{Deserialize, Serialize};

use crate::objective::{SolutionSet, TrajId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Delete,
    Add,
    Swap,
}

/// One accepted local operation. `None` stands for NOP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalOp {
    pub kind: OpKind,
    pub round: u8,
    pub d: Option<TrajId>,
    pub a: Option<TrajId>,
    pub g_before: f64,
    pub g_after: f64,
}

impl LocalOp {
    /// Classifies a `(d, a)` pair; `(None, None)` is not an operation.
    pub fn from_pair(round: u8, d: Option<TrajId>, a: Option<TrajId>, g_before: f64, g_after: f64) -> Option<Self> {
        let kind = match (d, a) {
            (Some(_), None) => OpKind::Delete,
            (None, Some(_)) => OpKind::Add,
            (Some(_), Some(_)) => OpKind::Swap,
            (None, None) => return None,
        };
        Some(LocalOp {
            kind,
            round,
            d,
            a,
            g_before,
            g_after,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Oracle evaluations that missed the memo cache.
    pub oracle_calls: u64,
    /// All oracle requests, cache hits included.
    pub oracle_requests: u64,
    /// Every broadcast message.
    pub proposal_exchanges: u64,
    pub init_messages: u64,
    pub warm_messages: u64,
    pub proposal_messages: u64,
    pub nop_messages: u64,
    pub commits: u64,
    pub discarded: u64,
    pub rounds: u64,
    pub wall_time_s: f64,
}

impl RunMetrics {
    /// Exchanges without the (NOP, NOP) terminators.
    pub fn exchanges_without_nop(&self) -> u64 {
        self.proposal_exchanges - self.nop_messages
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult {
    pub solution: SolutionSet,
    pub g_value: f64,
    pub j_value: f64,
    pub metrics: RunMetrics,
    pub op_trace: Vec<LocalOp>,
}

/// Smallest value `g(S')` must reach to count as a sufficient improvement
/// over `g`: `(1 + α/N⁴) g`, floored at four ulps above `g` so the test stays
/// meaningful once `α/N⁴` drops below double precision.
pub fn improvement_threshold(g: f64, alpha: f64, n: usize) -> f64 {
    let n4 = (n.max(1) as f64).powi(4);
    let ulp = g.abs().next_up() - g.abs();
    g + (alpha / n4 * g).max(4.0 * ulp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_scales_and_floors() {
        assert_eq!(improvement_threshold(10.0, 1.0, 1), 20.0);
        assert_eq!(improvement_threshold(16.0, 1.0, 2), 17.0);
        let g = 100.0;
        let t = improvement_threshold(g, 1.0, 10_000);
        assert!(t > g);
        assert!(t - g <= 4.0 * (g.next_up() - g) * 1.0000001);
        assert!(improvement_threshold(0.0, 1.0, 3) > 0.0);
    }

    #[test]
    fn op_classification() {
        let d = Some(TrajId(1));
        let a = Some(TrajId(2));
        assert_eq!(LocalOp::from_pair(1, d, None, 0.0, 1.0).unwrap().kind, OpKind::Delete);
        assert_eq!(LocalOp::from_pair(1, None, a, 0.0, 1.0).unwrap().kind, OpKind::Add);
        assert_eq!(LocalOp::from_pair(1, d, a, 0.0, 1.0).unwrap().kind, OpKind::Swap);
        assert!(LocalOp::from_pair(1, None, None, 0.0, 1.0).is_none());
    }
}
