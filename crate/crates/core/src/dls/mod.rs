//! Distributed local search: every robot proposes changes built from its own
//! trajectories, and a broadcast bus makes all robots apply the same
//! accepted proposal.
//!
//! Communication is simulated. Under [`Schedule::RoundRobin`] robots are
//! polled one at a time and each runs its search to completion, which makes
//! a run fully deterministic. Under [`Schedule::Concurrent`] searches are
//! interleaved one oracle evaluation at a time by a seeded scheduler and
//! proposals queue on the bus until delivered; the bus commits the lowest
//! sequence number that still passes validation and every robot restarts its
//! search against the new solution.

pub mod proposal;

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::central::{lazy_greedy_argmax_update, naive_argmax};
use crate::error::{Error, Result};
use crate::objective::{CountingOracle, PartitionMatroid, SetOracle, SolutionSet, TrajId};
use crate::solver::{improvement_threshold, LocalOp, RunMetrics, SolverResult};

pub use proposal::{find_proposal, Proposal, ProposalSearch, SearchStep};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Schedule {
    /// Poll robots in id order, starting after the last committer.
    RoundRobin,
    /// Seeded interleaving of concurrent searches. `delivery` is the chance
    /// per scheduler tick that the bus processes its queue.
    Concurrent { seed: u64, delivery: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DlsOptions {
    pub lazy: bool,
    pub warm_start: bool,
    pub schedule: Schedule,
}

impl Default for DlsOptions {
    fn default() -> Self {
        DlsOptions {
            lazy: true,
            warm_start: true,
            schedule: Schedule::RoundRobin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageKind {
    /// Partition size and best singleton at the start of a round.
    Init,
    /// A robot's best qualifying addition during the warm start.
    Warm,
    Proposal,
    Nop,
}

/// One broadcast on the bus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BusRecord {
    pub seq: u64,
    pub round: u8,
    pub kind: MessageKind,
    pub proposer: usize,
    pub d: Option<TrajId>,
    pub a: Option<TrajId>,
    /// Owner robots of `d` and `a`, for replay without the trajectory set.
    pub d_robot: Option<usize>,
    pub a_robot: Option<usize>,
    pub g_before: f64,
    pub g_after: f64,
    pub committed: bool,
}

/// A robot's local view.
#[derive(Debug, Clone)]
pub struct Agent {
    pub robot: usize,
    /// Own trajectories, standalone score descending.
    pub partition: Arc<Vec<TrajId>>,
    pub solution: SolutionSet,
    pub n: usize,
}

impl Agent {
    pub fn new(robot: usize, matroid: &PartitionMatroid) -> Self {
        Agent {
            robot,
            partition: Arc::new(matroid.sorted_partition(robot)),
            solution: SolutionSet::empty(matroid.n_robots()),
            n: 0,
        }
    }

    fn apply(&mut self, d: Option<(usize, TrajId)>, a: Option<(usize, TrajId)>) -> Result<()> {
        if let Some((r, id)) = d {
            self.solution.delete(r, id)?;
        }
        if let Some((r, id)) = a {
            self.solution.add(r, id)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DlsResult {
    pub result: SolverResult,
    pub log: Vec<BusRecord>,
    /// Solutions at the end of rounds 1 and 2.
    pub round_solutions: Vec<SolutionSet>,
    /// Ground-set size used in the improvement threshold.
    pub n: usize,
}

struct Bus<'a, O> {
    matroid: &'a PartitionMatroid,
    alpha: f64,
    /// Oracle evaluations are charged to the robot that performs them.
    oracles: Vec<CountingOracle<&'a O>>,
    agents: Vec<Agent>,
    solution: SolutionSet,
    round: u8,
    seq: u64,
    log: Vec<BusRecord>,
    trace: Vec<LocalOp>,
    metrics: RunMetrics,
}

impl<'a, O: SetOracle> Bus<'a, O> {
    #[allow(clippy::too_many_arguments)]
    fn broadcast(
        &mut self,
        kind: MessageKind,
        proposer: usize,
        d: Option<TrajId>,
        a: Option<TrajId>,
        g_before: f64,
        g_after: f64,
        committed: bool,
    ) -> u64 {
        let seq = self.seq;
        self.seq += 1;
        self.metrics.proposal_exchanges += 1;
        match kind {
            MessageKind::Init => self.metrics.init_messages += 1,
            MessageKind::Warm => self.metrics.warm_messages += 1,
            MessageKind::Proposal => self.metrics.proposal_messages += 1,
            MessageKind::Nop => self.metrics.nop_messages += 1,
        }
        self.log.push(BusRecord {
            seq,
            round: self.round,
            kind,
            proposer,
            d,
            a,
            d_robot: d.map(|id| self.matroid.owner(id)),
            a_robot: a.map(|id| self.matroid.owner(id)),
            g_before,
            g_after,
            committed,
        });
        seq
    }

    /// `S \ {d} ∪ {a}` if admissible.
    fn apply_to(&self, s: &SolutionSet, d: Option<TrajId>, a: Option<TrajId>) -> Option<SolutionSet> {
        let mut out = s.clone();
        if let Some(d) = d {
            out.delete(self.matroid.owner(d), d).ok()?;
        }
        if let Some(a) = a {
            out.add(self.matroid.owner(a), a).ok()?;
        }
        Some(out)
    }

    /// Re-checks a proposal against the current solution, using the
    /// proposer's oracle. Returns `(g_before, g_after)` when it still
    /// qualifies.
    fn validate(&self, p: &Proposal) -> Option<(f64, f64)> {
        let next = self.apply_to(&self.solution, p.d, p.a)?;
        let oracle = &self.oracles[p.proposer];
        let g = oracle.g(&self.solution);
        let g_next = oracle.g(&next);
        let n = self.agents[p.proposer].n;
        (g_next >= improvement_threshold(g, self.alpha, n)).then_some((g, g_next))
    }

    fn commit(&mut self, p: &Proposal, g_before: f64, g_after: f64) -> Result<()> {
        let d = p.d.map(|id| (self.matroid.owner(id), id));
        let a = p.a.map(|id| (self.matroid.owner(id), id));
        let next = self
            .apply_to(&self.solution, p.d, p.a)
            .ok_or_else(|| Error::Protocol(format!("commit of inadmissible proposal {p:?}")))?;
        self.solution = next;
        for agent in &mut self.agents {
            agent.apply(d, a)?;
        }
        self.check_consistency()?;
        self.metrics.commits += 1;
        self.trace
            .extend(LocalOp::from_pair(self.round, p.d, p.a, g_before, g_after));
        Ok(())
    }

    fn check_consistency(&self) -> Result<()> {
        for agent in &self.agents {
            if agent.solution != self.solution {
                return Err(Error::Protocol(format!(
                    "robot {} holds {:?}, bus holds {:?}",
                    agent.robot,
                    agent.solution.key(),
                    self.solution.key()
                )));
            }
        }
        Ok(())
    }

    /// Round start: every robot announces `|M_i|` and its best trajectory;
    /// all adopt the overall best singleton.
    fn initialize(&mut self, n_fixed: Option<usize>) -> Result<usize> {
        let mut best: Option<(TrajId, f64)> = None;
        let mut total = 0;
        for k in 0..self.agents.len() {
            let part = Arc::clone(&self.agents[k].partition);
            total += part.len();
            let top = part.first().copied();
            if let Some(id) = top {
                let score = self.matroid.standalone(id);
                if best.is_none_or(|(bid, bs)| score > bs || (score == bs && id < bid)) {
                    best = Some((id, score));
                }
            }
            let g0 = self.oracles[k].g(&SolutionSet::empty(self.matroid.n_robots()));
            let g1 = top.map_or(g0, |id| g0 + self.matroid.standalone(id));
            self.broadcast(MessageKind::Init, k, None, top, g0, g1, false);
        }
        let n = n_fixed.unwrap_or(total);
        self.solution = SolutionSet::empty(self.matroid.n_robots());
        if let Some((id, _)) = best {
            self.solution.add(self.matroid.owner(id), id)?;
        }
        for agent in &mut self.agents {
            agent.solution = self.solution.clone();
            agent.n = n;
        }
        Ok(n)
    }

    /// Greedy warm start. Every robot's last announced gain is an upper
    /// bound on its current best addition, since gains only shrink as `S`
    /// grows. The robot with the highest bound re-evaluates against the
    /// current set and broadcasts; its addition commits once it still tops
    /// every other bound. Each commit is the exact global best addition, as
    /// long as it clears the threshold.
    fn warm_start(&mut self, lazy: bool) -> Result<()> {
        let robots = self.agents.len();
        // Per-robot candidate bounds for the lazy argmax inside a robot.
        let mut inner: Vec<Vec<(TrajId, f64)>> = self
            .agents
            .iter()
            .map(|a| {
                a.partition
                    .iter()
                    .map(|&id| (id, self.matroid.standalone(id)))
                    .collect()
            })
            .collect();
        // Team-level bounds: (gain, id, fresh against the current set). The
        // standalone scores announced at round start already bound every
        // later gain, so no robot has to speak before it tops the list.
        let mut bounds: Vec<Option<(f64, TrajId, bool)>> = (0..robots)
            .map(|k| {
                let top = self.agents[k].partition.first().copied();
                match self.solution.slot(k) {
                    Some(_) => None,
                    None => top.map(|id| (self.matroid.standalone(id), id, false)),
                }
            })
            .collect();
        loop {
            let top = (0..robots)
                .filter_map(|k| bounds[k].map(|(g, id, fresh)| (k, g, id, fresh)))
                .reduce(|a, b| if b.1 > a.1 { b } else { a });
            let Some((k, gain, id, fresh)) = top else { break };
            if !fresh {
                bounds[k] = self.warm_refresh(k, lazy, &mut inner[k])?;
                continue;
            }
            let g = self.oracles[k].g(&self.solution);
            let grown = self.solution.with_added(k, id)?;
            if self.oracles[k].g(&grown) < improvement_threshold(g, self.alpha, self.agents[k].n) {
                break;
            }
            let p = Proposal {
                d: None,
                a: Some(id),
                proposer: k,
                round: self.round,
                seq: self.seq,
            };
            let (g0, g1) = self
                .validate(&p)
                .ok_or_else(|| Error::Protocol(format!("warm-start addition {id} failed validation")))?;
            debug_assert!((g1 - g0 - gain).abs() <= 1e-9 * (1.0 + g1.abs()));
            self.commit(&p, g0, g1)?;
            if let Some(rec) = self
                .log
                .iter_mut()
                .rev()
                .find(|r| r.kind == MessageKind::Warm && r.proposer == k)
            {
                rec.committed = true;
            }
            bounds[k] = None;
            for b in bounds.iter_mut().flatten() {
                b.2 = false;
            }
        }
        Ok(())
    }

    /// Robot `k` computes its best addition against its copy of `S` and
    /// broadcasts it.
    fn warm_refresh(
        &mut self,
        k: usize,
        lazy: bool,
        inner: &mut [(TrajId, f64)],
    ) -> Result<Option<(f64, TrajId, bool)>> {
        let oracle = &self.oracles[k];
        let local = &self.agents[k].solution;
        let pick = if lazy {
            lazy_greedy_argmax_update(self.matroid, inner, local, oracle)?
        } else {
            naive_argmax(self.matroid, &self.agents[k].partition, local, oracle)?
        };
        let g = oracle.g(local);
        let (a, g_after) = match pick {
            Some((id, gain)) => (Some(id), g + gain),
            None => (None, g),
        };
        self.broadcast(MessageKind::Warm, k, None, a, g, g_after, false);
        Ok(pick.map(|(id, gain)| (gain, id, true)))
    }

    fn run_round_robin(&mut self, lazy: bool) -> Result<()> {
        let robots = self.agents.len();
        let mut next = 0usize;
        let mut quiet = 0usize;
        while quiet < robots {
            let agent = &self.agents[next];
            let oracle = &self.oracles[next];
            let (d, a) = find_proposal(
                agent.robot,
                Arc::clone(&agent.partition),
                &agent.solution,
                self.alpha,
                agent.n,
                oracle,
                self.matroid,
                lazy,
            );
            let p = Proposal {
                d,
                a,
                proposer: next,
                round: self.round,
                seq: self.seq,
            };
            if p.is_nop() {
                let g = oracle.g(&agent.solution);
                self.broadcast(MessageKind::Nop, next, None, None, g, g, false);
                quiet += 1;
            } else {
                let (g0, g1) = self
                    .validate(&p)
                    .ok_or_else(|| Error::Protocol(format!("fresh proposal {p:?} failed validation")))?;
                self.broadcast(MessageKind::Proposal, next, d, a, g0, g1, true);
                self.commit(&p, g0, g1)?;
                quiet = 0;
            }
            next = (next + 1) % robots;
        }
        Ok(())
    }

    fn run_concurrent(&mut self, lazy: bool, rng: &mut ChaCha8Rng, delivery: f64) -> Result<()> {
        #[derive(Clone, Copy, PartialEq)]
        enum State {
            Searching,
            Waiting,
            Quiet,
        }
        let robots = self.agents.len();
        let fresh = |agent: &Agent, alpha: f64| {
            ProposalSearch::new(
                agent.robot,
                agent.solution.clone(),
                Arc::clone(&agent.partition),
                alpha,
                agent.n,
                lazy,
            )
        };
        let mut searches: Vec<ProposalSearch> = self.agents.iter().map(|a| fresh(a, self.alpha)).collect();
        let mut state = vec![State::Searching; robots];
        let mut queue: Vec<Proposal> = Vec::new();
        loop {
            if state.iter().all(|s| *s == State::Quiet) && queue.is_empty() {
                return Ok(());
            }
            let active: Vec<usize> = (0..robots).filter(|k| state[*k] == State::Searching).collect();
            let deliver = !queue.is_empty() && (active.is_empty() || rng.gen_bool(delivery));
            if deliver {
                queue.sort_by_key(|p| p.seq);
                let mut committed = None;
                let mut keep = Vec::new();
                for p in queue.drain(..) {
                    if committed.is_some() {
                        keep.push(p);
                        continue;
                    }
                    match self.validate(&p) {
                        Some((g0, g1)) => committed = Some((p, g0, g1)),
                        None => {
                            self.metrics.discarded += 1;
                            state[p.proposer] = State::Searching;
                            searches[p.proposer] = fresh(&self.agents[p.proposer], self.alpha);
                        }
                    }
                }
                if let Some((p, g0, g1)) = committed {
                    self.commit(&p, g0, g1)?;
                    if let Some(rec) = self.log.iter_mut().find(|r| r.seq == p.seq) {
                        rec.committed = true;
                        rec.g_before = g0;
                        rec.g_after = g1;
                    }
                    let mut still = Vec::new();
                    for q in keep {
                        if self.validate(&q).is_some() {
                            still.push(q);
                        } else {
                            self.metrics.discarded += 1;
                            state[q.proposer] = State::Searching;
                        }
                    }
                    for k in 0..robots {
                        if still.iter().any(|q| q.proposer == k) {
                            state[k] = State::Waiting;
                        } else {
                            state[k] = State::Searching;
                            searches[k] = fresh(&self.agents[k], self.alpha);
                        }
                    }
                    queue = still;
                } else {
                    queue = keep;
                }
                continue;
            }
            if active.is_empty() {
                return Err(Error::Protocol("no active search and nothing to deliver".into()));
            }
            let k = active[rng.gen_range(0..active.len())];
            match searches[k].step(&self.oracles[k], self.matroid) {
                SearchStep::Pending => {}
                SearchStep::Done(None, None) => {
                    let g = self.oracles[k].g(&self.agents[k].solution);
                    self.broadcast(MessageKind::Nop, k, None, None, g, g, false);
                    state[k] = State::Quiet;
                }
                SearchStep::Done(d, a) => {
                    let base = self.agents[k].solution.clone();
                    let g0 = self.oracles[k].g(&base);
                    let next = self
                        .apply_to(&base, d, a)
                        .ok_or_else(|| Error::Protocol(format!("robot {k} proposed an inadmissible change")))?;
                    let g1 = self.oracles[k].g(&next);
                    let seq = self.broadcast(MessageKind::Proposal, k, d, a, g0, g1, false);
                    queue.push(Proposal {
                        d,
                        a,
                        proposer: k,
                        round: self.round,
                        seq,
                    });
                    state[k] = State::Waiting;
                }
            }
        }
    }
}

/// Distributed local search over the robots' partitions.
///
/// Runs two rounds like the centralized algorithm; after the first, each
/// robot drops its part of `S_1` from its partition. `N` is fixed from the
/// first round's announcements.
pub fn dls_run<O: SetOracle>(
    matroid: &PartitionMatroid,
    alpha: f64,
    oracle: &O,
    opts: DlsOptions,
) -> Result<DlsResult> {
    if !(alpha > 0.0) {
        return Err(Error::Contract(format!("alpha must be positive, got {alpha}")));
    }
    if let Schedule::Concurrent { delivery, .. } = opts.schedule {
        if !(delivery > 0.0 && delivery <= 1.0) {
            return Err(Error::Contract(format!(
                "delivery probability {delivery} not in (0, 1]"
            )));
        }
    }
    let agents: Vec<Agent> = (0..matroid.n_robots()).map(|r| Agent::new(r, matroid)).collect();
    dls_run_with_agents(matroid, agents, alpha, oracle, opts)
}

/// As [`dls_run`] with caller-built agents; their partitions must match the
/// matroid.
pub fn dls_run_with_agents<O: SetOracle>(
    matroid: &PartitionMatroid,
    agents: Vec<Agent>,
    alpha: f64,
    oracle: &O,
    opts: DlsOptions,
) -> Result<DlsResult> {
    if agents.len() != matroid.n_robots() {
        return Err(Error::Protocol(format!(
            "{} agents for {} robots",
            agents.len(),
            matroid.n_robots()
        )));
    }
    for (k, agent) in agents.iter().enumerate() {
        let mut mine = matroid.partition(k).to_vec();
        let mut theirs = agent.partition.as_ref().clone();
        mine.sort_unstable();
        theirs.sort_unstable();
        if agent.robot != k || mine != theirs {
            return Err(Error::Protocol(format!(
                "agent {k} partition disagrees with the ground set"
            )));
        }
    }
    let started = Instant::now();
    let mut rng = match opts.schedule {
        Schedule::Concurrent { seed, .. } => ChaCha8Rng::seed_from_u64(seed),
        Schedule::RoundRobin => ChaCha8Rng::seed_from_u64(0),
    };
    let mut bus = Bus {
        matroid,
        alpha,
        oracles: (0..agents.len()).map(|_| CountingOracle::new(oracle)).collect(),
        agents,
        solution: SolutionSet::empty(matroid.n_robots()),
        round: 0,
        seq: 0,
        log: Vec::new(),
        trace: Vec::new(),
        metrics: RunMetrics::default(),
    };
    let mut n_fixed = None;
    let mut finals: Vec<SolutionSet> = Vec::with_capacity(2);
    for round in 1..=2u8 {
        bus.round = round;
        n_fixed = Some(bus.initialize(n_fixed)?);
        if opts.warm_start {
            bus.warm_start(opts.lazy)?;
        }
        match opts.schedule {
            Schedule::RoundRobin => bus.run_round_robin(opts.lazy)?,
            Schedule::Concurrent { delivery, .. } => bus.run_concurrent(opts.lazy, &mut rng, delivery)?,
        }
        bus.check_consistency()?;
        bus.metrics.rounds += 1;
        let done = bus.solution.clone();
        for agent in &mut bus.agents {
            let mut part = agent.partition.as_ref().clone();
            part.retain(|id| !done.contains(matroid.owner(*id), *id));
            agent.partition = Arc::new(part);
        }
        finals.push(done);
    }
    let (s1, s2) = (&finals[0], &finals[1]);
    let best = if oracle.value(s1) >= oracle.value(s2) {
        s1.clone()
    } else {
        s2.clone()
    };
    let mut metrics = bus.metrics;
    for o in &bus.oracles {
        metrics.oracle_calls += o.calls();
        metrics.oracle_requests += o.requests();
    }
    metrics.wall_time_s = started.elapsed().as_secs_f64();
    let g_value = oracle.value(&best);
    Ok(DlsResult {
        result: SolverResult {
            j_value: g_value - oracle.offset(),
            g_value,
            solution: best,
            metrics,
            op_trace: bus.trace,
        },
        log: bus.log,
        round_solutions: finals,
        n: n_fixed.unwrap_or(0),
    })
}
