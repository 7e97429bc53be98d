//! JSON artifacts written by `synthesize` and read back through `--gains`.

use std::path::Path;

use distobs::certify::CertificateReport;
use distobs::design::QSelection;
use distobs::linalg::{from_row_major, to_row_major, Matrix};
use distobs::synthesis::Synthesis;
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

pub const DESIGN_SCHEMA: &str = "distobs/design/v1";
pub const CERTIFICATE_SCHEMA: &str = "distobs/certificate/v1";

/// Row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDoc {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixDoc {
    pub fn from_matrix(m: &Matrix) -> Self {
        MatrixDoc {
            rows: m.nrows(),
            cols: m.ncols(),
            data: to_row_major(m),
        }
    }

    pub fn to_matrix(&self) -> Result<Matrix, Failure> {
        Ok(from_row_major(self.rows, self.cols, &self.data)?)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AgentDesign {
    /// 1-based agent label.
    pub agent: usize,
    pub unobservable_dim: usize,
    pub unobservable_basis: MatrixDoc,
    pub quotient_map: MatrixDoc,
    pub a_bar: MatrixDoc,
    pub c_bar: MatrixDoc,
    pub k_bar: MatrixDoc,
    pub k: MatrixDoc,
}

#[derive(Debug, Clone, Serialize)]
pub struct DesignDoc {
    pub schema: &'static str,
    pub lambda: f64,
    pub n: usize,
    pub m: usize,
    /// Rounds per event used by `simulate`.
    pub q: u64,
    pub selection: QSelection,
    pub agents: Vec<AgentDesign>,
}

impl DesignDoc {
    pub fn new(synth: &Synthesis, q: u64) -> Self {
        let agents = synth
            .decomps
            .iter()
            .zip(&synth.gains)
            .map(|(d, g)| AgentDesign {
                agent: d.agent + 1,
                unobservable_dim: d.unobservable_dim(),
                unobservable_basis: MatrixDoc::from_matrix(&d.v),
                quotient_map: MatrixDoc::from_matrix(&d.q),
                a_bar: MatrixDoc::from_matrix(&d.a_bar),
                c_bar: MatrixDoc::from_matrix(&d.c_bar),
                k_bar: MatrixDoc::from_matrix(&g.k_bar),
                k: MatrixDoc::from_matrix(&g.k),
            })
            .collect();
        DesignDoc {
            schema: DESIGN_SCHEMA,
            lambda: synth.lambda,
            n: synth.plant.n(),
            m: synth.plant.m(),
            q,
            selection: synth.selection.clone(),
            agents,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateDoc<'a> {
    pub schema: &'static str,
    #[serde(flatten)]
    pub report: &'a CertificateReport,
}

#[derive(Debug, Deserialize)]
struct GainEntry {
    agent: usize,
    k_bar: MatrixDoc,
}

#[derive(Debug, Deserialize)]
struct GainsFile {
    schema: String,
    agents: Vec<GainEntry>,
}

/// Reads the quotient gains from a design file, ordered by agent.
pub fn load_gains(path: &Path, m: usize) -> Result<Vec<Matrix>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::invalid("gains_read", format!("{}: {e}", path.display())))?;
    let file: GainsFile =
        serde_json::from_str(&text).map_err(|e| Failure::invalid("gains_parse", e.to_string()))?;
    if file.schema != DESIGN_SCHEMA {
        return Err(Failure::invalid(
            "gains_schema",
            format!(
                "expected schema \"{DESIGN_SCHEMA}\", found \"{}\"",
                file.schema
            ),
        ));
    }
    let mut gains: Vec<Option<Matrix>> = vec![None; m];
    for entry in file.agents {
        if entry.agent == 0 || entry.agent > m {
            return Err(Failure::invalid(
                "gains_agent",
                format!("agent {} out of range", entry.agent),
            ));
        }
        gains[entry.agent - 1] = Some(entry.k_bar.to_matrix()?);
    }
    gains
        .into_iter()
        .enumerate()
        .map(|(i, g)| {
            g.ok_or_else(|| Failure::invalid("gains_agent", format!("no gain for agent {}", i + 1)))
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::invalid("serialize", e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Failure::io("write_output", e))
}
