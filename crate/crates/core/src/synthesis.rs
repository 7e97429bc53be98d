//! End-to-end synthesis: decompositions, gains, error model and round count.

use crate::design::{
    build_error_model, check_gain_rate, choose_q, design_gains, lift_gain, AgentGain, ErrorModel,
    QMethod, QSelection,
};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::network::GraphSchedule;
use crate::plant::{
    decompose_all, joint_observability, ObservabilityDecomposition, Plant, DEFAULT_TOL,
};
use crate::simulator::Scenario;

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub plant: Plant,
    pub schedule: GraphSchedule,
    pub lambda: f64,
    pub decomps: Vec<ObservabilityDecomposition>,
    pub gains: Vec<AgentGain>,
    pub model: ErrorModel,
    pub selection: QSelection,
}

fn prepare(
    plant: &Plant,
    schedule: &GraphSchedule,
    lambda: f64,
) -> Result<Vec<ObservabilityDecomposition>> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::invalid(format!(
            "lambda must lie in (0, 1), got {lambda}"
        )));
    }
    if schedule.m() != plant.m() {
        return Err(Error::invalid(format!(
            "schedule has {} agents, plant has {}",
            schedule.m(),
            plant.m()
        )));
    }
    if !joint_observability(plant, DEFAULT_TOL)? {
        return Err(Error::invalid("joint observability violated"));
    }
    decompose_all(plant, DEFAULT_TOL)
}

pub fn synthesize(
    plant: &Plant,
    schedule: &GraphSchedule,
    lambda: f64,
    method: QMethod,
) -> Result<Synthesis> {
    let decomps = prepare(plant, schedule, lambda)?;
    let gains = design_gains(plant, &decomps, lambda)?;
    finish(plant, schedule, lambda, method, decomps, gains)
}

/// Synthesis with externally supplied quotient gains. The rate certificate
/// of each gain is not enforced here; see [`crate::certify`].
pub fn synthesize_with_gains(
    plant: &Plant,
    schedule: &GraphSchedule,
    lambda: f64,
    method: QMethod,
    k_bars: Vec<Matrix>,
) -> Result<Synthesis> {
    let decomps = prepare(plant, schedule, lambda)?;
    if k_bars.len() != decomps.len() {
        return Err(Error::invalid(format!(
            "{} gains supplied for {} agents",
            k_bars.len(),
            decomps.len()
        )));
    }
    let gains = decomps
        .iter()
        .zip(k_bars)
        .map(|(d, k)| lift_gain(plant, d, k))
        .collect::<Result<Vec<_>>>()?;
    finish(plant, schedule, lambda, method, decomps, gains)
}

fn finish(
    plant: &Plant,
    schedule: &GraphSchedule,
    lambda: f64,
    method: QMethod,
    decomps: Vec<ObservabilityDecomposition>,
    gains: Vec<AgentGain>,
) -> Result<Synthesis> {
    let model = build_error_model(plant, &decomps, &gains, schedule)?;
    let selection = choose_q(&model, schedule, lambda, method)?;
    Ok(Synthesis {
        plant: plant.clone(),
        schedule: schedule.clone(),
        lambda,
        decomps,
        gains,
        model,
        selection,
    })
}

impl Synthesis {
    pub fn gains_meet_rate(&self) -> Result<()> {
        for (g, d) in self.gains.iter().zip(&self.decomps) {
            check_gain_rate(g, d, self.lambda)?;
        }
        Ok(())
    }

    pub fn projections(&self) -> Vec<Matrix> {
        self.decomps.iter().map(|d| d.p.clone()).collect()
    }

    pub fn scenario(&self, q: u64, x0: Vector, x_hat0: Vec<Vector>, tau_max: u64) -> Scenario {
        Scenario {
            plant: self.plant.clone(),
            schedule: self.schedule.clone(),
            gains: self.gains.clone(),
            projections: self.projections(),
            q,
            x0,
            x_hat0,
            tau_max,
            verbose: false,
        }
    }

    /// Scenario with the selected `q` and default initial conditions.
    pub fn default_scenario(&self, seed: u64, tau_max: u64) -> Scenario {
        let (x0, x_hat0) = Scenario::default_initial_state(self.plant.n(), self.plant.m(), seed);
        self.scenario(self.selection.q, x0, x_hat0, tau_max)
    }
}
