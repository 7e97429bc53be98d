//! Scenario files.

use std::path::{Path, PathBuf};

use distobs::design::QMethod;
use distobs::linalg::Vector;
use distobs::network::{GraphSchedule, ScheduleDoc};
use distobs::plant::{Plant, PlantDoc};
use serde::Deserialize;

use crate::failure::Failure;

pub const SCENARIO_SCHEMA: &str = "distobs/scenario/v1";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: String,
    pub lambda: f64,
    pub tau_max: u64,
    #[serde(default)]
    pub q: RoundCount,
    pub plant: PlantDoc,
    pub schedule: ScheduleDoc,
    #[serde(default)]
    pub initial: Option<InitialState>,
    #[serde(default)]
    pub output: Option<OutputPaths>,
}

/// How the number of consensus rounds per event is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum RoundCount {
    Weighted,
    #[default]
    Mixed,
    /// Fixed `q`; certificates are still computed with the mixed-norm method.
    Explicit {
        value: u64,
    },
}

impl RoundCount {
    pub fn method(self) -> QMethod {
        match self {
            RoundCount::Weighted => QMethod::WeightedTwoNorm,
            RoundCount::Mixed | RoundCount::Explicit { .. } => QMethod::MixedNorm,
        }
    }

    pub fn explicit(self) -> Option<u64> {
        match self {
            RoundCount::Explicit { value } => Some(value),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub x0: Vec<f64>,
    /// One estimate per agent; zero when omitted.
    #[serde(default)]
    pub x_hat: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub dir: Option<PathBuf>,
}

/// A config after validation.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub plant: Plant,
    pub schedule: GraphSchedule,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::invalid("config_read", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, Failure> {
        let config: ScenarioConfig =
            toml::from_str(text).map_err(|e| Failure::invalid("config_parse", e.to_string()))?;
        if config.schema != SCENARIO_SCHEMA {
            return Err(Failure::invalid(
                "config_schema",
                format!(
                    "expected schema \"{SCENARIO_SCHEMA}\", found \"{}\"",
                    config.schema
                ),
            ));
        }
        if !(config.lambda > 0.0 && config.lambda < 1.0) {
            return Err(Failure::invalid(
                "config_lambda",
                format!("lambda must lie in (0, 1), got {}", config.lambda),
            ));
        }
        if config.q.explicit() == Some(0) {
            return Err(Failure::invalid(
                "config_q",
                "explicit q must be at least 1",
            ));
        }
        let plant = config.plant.to_plant()?;
        let schedule = config.schedule.to_schedule()?;
        if schedule.m() != plant.m() {
            return Err(Failure::invalid(
                "config_agents",
                format!(
                    "schedule has {} agents, plant has {}",
                    schedule.m(),
                    plant.m()
                ),
            ));
        }
        if let Some(init) = &config.initial {
            let n = plant.n();
            if init.x0.len() != n {
                return Err(Failure::invalid(
                    "config_initial",
                    format!("x0 needs {n} entries"),
                ));
            }
            if let Some(x_hat) = &init.x_hat {
                if x_hat.len() != plant.m() || x_hat.iter().any(|v| v.len() != n) {
                    return Err(Failure::invalid(
                        "config_initial",
                        format!("x_hat needs {} vectors of length {n}", plant.m()),
                    ));
                }
            }
        }
        Ok(Scenario {
            config,
            plant,
            schedule,
        })
    }

    /// Initial true state and estimates, from the file or drawn from `seed`.
    pub fn initial_state(&self, seed: u64) -> (Vector, Vec<Vector>) {
        let (n, m) = (self.plant.n(), self.plant.m());
        match &self.config.initial {
            Some(init) => {
                let x0 = Vector::from_column_slice(&init.x0);
                let x_hat = match &init.x_hat {
                    Some(v) => v.iter().map(|e| Vector::from_column_slice(e)).collect(),
                    None => vec![Vector::zeros(n); m],
                };
                (x0, x_hat)
            }
            None => distobs::simulator::Scenario::default_initial_state(n, m, seed),
        }
    }

    pub fn output_dir(&self) -> Option<&Path> {
        self.config.output.as_ref().and_then(|o| o.dir.as_deref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema = "distobs/scenario/v1"
lambda = 0.5
tau_max = 10

[q]
method = "explicit"
value = 3

[plant]
n = 2
m = 2
a = [1.1, 0.0, 0.0, 0.9]
sensors = [{ rows = 1, c = [1.0, 0.0] }, { rows = 1, c = [0.0, 1.0] }]

[schedule]
m = 2
graphs = [[[1, 2], [2, 1]]]
signal = { mode = "periodic", sequence = [0] }
"#;

    #[test]
    fn parses_minimal_config() {
        let s = Scenario::parse(MINIMAL).unwrap();
        assert_eq!(s.config.q, RoundCount::Explicit { value: 3 });
        assert_eq!(s.plant.n(), 2);
        assert!(s.schedule.is_constant());
        let (x0, x_hat) = s.initial_state(1);
        assert!((x0.norm() - 1.0).abs() < 1e-12);
        assert!(x_hat.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn rejects_wrong_schema() {
        let text = MINIMAL.replace("distobs/scenario/v1", "other/v9");
        assert_eq!(Scenario::parse(&text).unwrap_err().label, "config_schema");
    }

    #[test]
    fn rejects_lambda_out_of_range() {
        let text = MINIMAL.replace("lambda = 0.5", "lambda = 1.0");
        assert_eq!(Scenario::parse(&text).unwrap_err().code, 2);
    }

    #[test]
    fn rejects_disconnected_graph_at_load() {
        let text = MINIMAL.replace("[[[1, 2], [2, 1]]]", "[[[1, 2]]]");
        let err = Scenario::parse(&text).unwrap_err();
        assert_eq!(err.code, 2);
        assert!(err.message.contains("strongly connected"));
    }

    #[test]
    fn q_defaults_to_mixed() {
        let text = MINIMAL.replace("[q]\nmethod = \"explicit\"\nvalue = 3\n", "");
        assert_eq!(Scenario::parse(&text).unwrap().config.q, RoundCount::Mixed);
    }
}
