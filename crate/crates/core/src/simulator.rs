//! Synchronous multi-agent execution of the observer.
//!
//! Each event interval runs `q` projected-consensus rounds on the interval's
//! neighbor graph, then one estimator update per agent. Rounds are two-phase:
//! every agent reads the previous round's snapshot, so update order never
//! matters.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::design::AgentGain;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::network::{neighbor_sets, Digraph, GraphSchedule};
use crate::plant::Plant;

/// Abort threshold on the true state's norm.
pub const OVERFLOW_GUARD: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub agent: usize,
    /// Current estimate `x_i(tau)`.
    pub x_hat: Vector,
    /// Consensus scratch `z_i(k, tau)`.
    pub z: Vector,
}

impl AgentState {
    pub fn new(agent: usize, x_hat: Vector) -> Self {
        AgentState {
            agent,
            z: x_hat.clone(),
            x_hat,
        }
    }
}

/// One synchronous round in agent order.
pub fn consensus_round(
    states: &[AgentState],
    graph: &Digraph,
    projections: &[Matrix],
) -> Vec<AgentState> {
    let order: Vec<usize> = (0..states.len()).collect();
    consensus_round_in_order(states, graph, projections, &order)
}

/// One synchronous round, computing agents' updates in `order`. The result
/// does not depend on `order`: all reads go to the pre-round snapshot.
pub fn consensus_round_in_order(
    states: &[AgentState],
    graph: &Digraph,
    projections: &[Matrix],
    order: &[usize],
) -> Vec<AgentState> {
    let snapshot: Vec<Vector> = states.iter().map(|s| s.z.clone()).collect();
    let neighbors = neighbor_sets(graph);
    let mut next = states.to_vec();
    for &i in order {
        let p = &projections[i];
        let mut sum = Vector::zeros(snapshot[i].len());
        for &j in &neighbors[i] {
            sum += &snapshot[j];
        }
        let avg = sum / neighbors[i].len() as f64;
        let own = &snapshot[i];
        next[i].z = own - p * own + p * avg;
    }
    next
}

/// Within-interval consensus errors `z_i(k, tau) - x(tau)`, `k = 0..=q`.
pub type RoundErrors = Vec<Vec<Vector>>;

/// Advances every agent and the plant across one event interval: seeds
/// `z_i = x_i`, runs `q` rounds on `graph`, then applies the estimator update
/// to the averaged state. The true state enters only through `y_i = C_i x`.
/// Returns the new agent states, the new true state, and optionally the
/// per-round consensus errors.
#[allow(clippy::too_many_arguments)]
pub fn event_step(
    states: &[AgentState],
    plant: &Plant,
    gains: &[AgentGain],
    projections: &[Matrix],
    graph: &Digraph,
    q: u64,
    x: &Vector,
    record_rounds: bool,
) -> (Vec<AgentState>, Vector, Option<RoundErrors>) {
    let mut current: Vec<AgentState> = states
        .iter()
        .map(|s| AgentState {
            agent: s.agent,
            x_hat: s.x_hat.clone(),
            z: s.x_hat.clone(),
        })
        .collect();
    let mut rounds =
        record_rounds.then(|| vec![current.iter().map(|s| &s.z - x).collect::<Vec<_>>()]);
    for _ in 0..q {
        current = consensus_round(&current, graph, projections);
        if let Some(r) = rounds.as_mut() {
            r.push(current.iter().map(|s| &s.z - x).collect());
        }
    }
    for (state, gain) in current.iter_mut().zip(gains) {
        let c = plant.sensor(gain.agent);
        let y = c * x;
        let averaged = &state.z;
        state.x_hat = gain.closed_loop(plant) * averaged - &gain.k * y;
    }
    (current, plant.a() * x, rounds)
}

/// Everything needed for one simulation run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub plant: Plant,
    pub schedule: GraphSchedule,
    pub gains: Vec<AgentGain>,
    /// Orthogonal projections onto each agent's unobservable space.
    pub projections: Vec<Matrix>,
    pub q: u64,
    pub x0: Vector,
    pub x_hat0: Vec<Vector>,
    pub tau_max: u64,
    /// Record within-interval consensus errors.
    pub verbose: bool,
}

impl Scenario {
    /// Default initial conditions: estimates at zero, true state a random unit
    /// vector drawn from `seed`.
    pub fn default_initial_state(n: usize, m: usize, seed: u64) -> (Vector, Vec<Vector>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x0 = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let norm = x0.norm();
        if norm > 0.0 {
            x0 /= norm;
        } else {
            x0[0] = 1.0;
        }
        (x0, vec![Vector::zeros(n); m])
    }

    pub fn with_q(mut self, q: u64) -> Self {
        self.q = q;
        self
    }

    fn validate(&self) -> Result<()> {
        let n = self.plant.n();
        let m = self.plant.m();
        if self.schedule.m() != m {
            return Err(Error::invalid(format!(
                "schedule has {} agents, plant has {m}",
                self.schedule.m()
            )));
        }
        if self.gains.len() != m || self.projections.len() != m || self.x_hat0.len() != m {
            return Err(Error::invalid(
                "per-agent inputs must have one entry per agent",
            ));
        }
        for (i, g) in self.gains.iter().enumerate() {
            if g.agent != i || g.k.shape() != (n, self.plant.sensor(i).nrows()) {
                return Err(Error::invalid(format!(
                    "gain of agent {} has wrong shape",
                    i + 1
                )));
            }
        }
        if self.projections.iter().any(|p| p.shape() != (n, n)) {
            return Err(Error::invalid("projections must be n x n"));
        }
        if self.x0.len() != n || self.x_hat0.iter().any(|x| x.len() != n) {
            return Err(Error::invalid(format!(
                "initial states must have length {n}"
            )));
        }
        if self.q == 0 {
            return Err(Error::invalid("q must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub tau: u64,
    /// Graph active during the interval starting at `tau`.
    pub graph_id: usize,
    pub x: Vector,
    pub estimates: Vec<Vector>,
    pub agent_err_norms: Vec<f64>,
    pub total_err_norm: f64,
    /// Consensus errors of the interval starting at `tau` (verbose runs only).
    pub round_errors: Option<RoundErrors>,
}

impl TraceRecord {
    pub fn errors(&self) -> Vec<Vector> {
        self.estimates.iter().map(|e| e - &self.x).collect()
    }

    pub fn stacked_error(&self) -> Vector {
        let n = self.x.len();
        let mut out = Vector::zeros(n * self.estimates.len());
        for (i, e) in self.errors().iter().enumerate() {
            out.rows_mut(i * n, n).copy_from(e);
        }
        out
    }

    pub fn max_agent_err(&self) -> f64 {
        self.agent_err_norms.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimTrace {
    pub records: Vec<TraceRecord>,
}

impl SimTrace {
    pub fn m(&self) -> usize {
        self.records.first().map_or(0, |r| r.estimates.len())
    }

    pub fn n(&self) -> usize {
        self.records.first().map_or(0, |r| r.x.len())
    }
}

fn record(tau: u64, graph_id: usize, x: &Vector, states: &[AgentState]) -> TraceRecord {
    let estimates: Vec<Vector> = states.iter().map(|s| s.x_hat.clone()).collect();
    let agent_err_norms: Vec<f64> = estimates.iter().map(|e| (e - x).norm()).collect();
    let total_err_norm = agent_err_norms.iter().map(|v| v * v).sum::<f64>().sqrt();
    TraceRecord {
        tau,
        graph_id,
        x: x.clone(),
        estimates,
        agent_err_norms,
        total_err_norm,
        round_errors: None,
    }
}

/// Runs the scenario over `tau = 0..=tau_max`.
pub fn run(scenario: &Scenario) -> Result<SimTrace> {
    scenario.validate()?;
    let mut states: Vec<AgentState> = scenario
        .x_hat0
        .iter()
        .enumerate()
        .map(|(i, x)| AgentState::new(i, x.clone()))
        .collect();
    let mut x = scenario.x0.clone();
    let mut records = Vec::with_capacity(scenario.tau_max as usize + 1);
    for tau in 0..=scenario.tau_max {
        let norm = x.norm();
        if !(norm <= OVERFLOW_GUARD) {
            return Err(Error::Overflow { tau, norm });
        }
        let graph_id = scenario.schedule.graph_index(tau);
        let mut rec = record(tau, graph_id, &x, &states);
        if tau == scenario.tau_max {
            records.push(rec);
            break;
        }
        let (next, x_next, rounds) = event_step(
            &states,
            &scenario.plant,
            &scenario.gains,
            &scenario.projections,
            scenario.schedule.graph_at(tau),
            scenario.q,
            &x,
            scenario.verbose,
        );
        rec.round_errors = rounds;
        records.push(rec);
        states = next;
        x = x_next;
    }
    Ok(SimTrace { records })
}

/// Geometric-mean per-step ratio of the stacked error norm over
/// `[tau_lo, tau_hi]`; zero when the error vanishes anywhere on the window.
pub fn estimate_rate(trace: &SimTrace, tau_lo: u64, tau_hi: u64) -> Result<f64> {
    if tau_lo < 1 || tau_hi <= tau_lo || tau_hi as usize >= trace.records.len() {
        return Err(Error::invalid(format!(
            "window [{tau_lo}, {tau_hi}] is invalid for a trace of {} events",
            trace.records.len()
        )));
    }
    let lo = trace.records[tau_lo as usize].total_err_norm;
    let hi = trace.records[tau_hi as usize].total_err_norm;
    let window = &trace.records[tau_lo as usize..=tau_hi as usize];
    if window.iter().any(|r| r.total_err_norm == 0.0) {
        return Ok(0.0);
    }
    Ok((hi / lo).powf(1.0 / (tau_hi - tau_lo) as f64))
}

/// Writes the trace as CSV: `tau, graph_id, err_norm_total,
/// err_norm_agent_1..m`, optionally followed by `x_1..n` and
/// `xhat_<i>_<k>` state columns.
pub fn write_csv<W: Write>(
    trace: &SimTrace,
    out: &mut W,
    include_states: bool,
) -> std::io::Result<()> {
    let m = trace.m();
    let n = trace.n();
    let mut header = vec![
        "tau".to_string(),
        "graph_id".into(),
        "err_norm_total".into(),
    ];
    header.extend((1..=m).map(|i| format!("err_norm_agent_{i}")));
    if include_states {
        header.extend((1..=n).map(|k| format!("x_{k}")));
        for i in 1..=m {
            header.extend((1..=n).map(|k| format!("xhat_{i}_{k}")));
        }
    }
    writeln!(out, "{}", header.join(","))?;
    for r in &trace.records {
        let mut row = vec![
            r.tau.to_string(),
            r.graph_id.to_string(),
            fmt_value(r.total_err_norm),
        ];
        row.extend(r.agent_err_norms.iter().map(|&v| fmt_value(v)));
        if include_states {
            row.extend(r.x.iter().map(|&v| fmt_value(v)));
            for e in &r.estimates {
                row.extend(e.iter().map(|&v| fmt_value(v)));
            }
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Within-interval errors as CSV rows `tau, round, agent, err_norm`.
pub fn write_round_csv<W: Write>(trace: &SimTrace, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "tau,round,agent,err_norm")?;
    for r in &trace.records {
        if let Some(rounds) = &r.round_errors {
            for (k, errs) in rounds.iter().enumerate() {
                for (i, e) in errs.iter().enumerate() {
                    writeln!(out, "{},{},{},{}", r.tau, k, i + 1, fmt_value(e.norm()))?;
                }
            }
        }
    }
    Ok(())
}

fn fmt_value(v: f64) -> String {
    format!("{v:.15e}")
}
