//! The input-free plant `x(t+1) = A x(t)`, `y_i = C_i x`, split over `m`
//! agents, and the per-agent observability decompositions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    ensure_finite, from_row_major, induced_two_norm, kernel_basis, orthonormal_row_complement,
    rank, to_row_major, Matrix, RANK_TOL,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    a: Matrix,
    sensors: Vec<Matrix>,
}

impl Plant {
    pub fn new(a: Matrix, sensors: Vec<Matrix>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::invalid("state matrix must be square and non-empty"));
        }
        ensure_finite(&a, "state matrix")?;
        if sensors.len() < 2 {
            return Err(Error::invalid(format!(
                "at least two agents are required, got {}",
                sensors.len()
            )));
        }
        let n = a.nrows();
        for (i, c) in sensors.iter().enumerate() {
            if c.ncols() != n || c.nrows() == 0 {
                return Err(Error::invalid(format!(
                    "output matrix of agent {} is {}x{}, expected s x {n} with s >= 1",
                    i + 1,
                    c.nrows(),
                    c.ncols()
                )));
            }
            ensure_finite(c, "output matrix")?;
        }
        Ok(Plant { a, sensors })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn sensor(&self, agent: usize) -> &Matrix {
        &self.sensors[agent]
    }

    pub fn sensors(&self) -> &[Matrix] {
        &self.sensors
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.sensors.len()
    }

    /// All outputs stacked into one matrix.
    pub fn stacked_output(&self) -> Matrix {
        let rows = self.sensors.iter().map(|c| c.nrows()).sum();
        let mut out = Matrix::zeros(rows, self.n());
        let mut r = 0;
        for c in &self.sensors {
            out.view_mut((r, 0), c.shape()).copy_from(c);
            r += c.nrows();
        }
        out
    }
}

/// Per-agent factorisation around the unobservable space of `(C_i, A)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityDecomposition {
    pub agent: usize,
    /// Orthonormal basis of the unobservable space (`n x n_i`).
    pub v: Matrix,
    /// Orthonormal rows spanning its orthogonal complement.
    pub q: Matrix,
    pub c_bar: Matrix,
    pub a_bar: Matrix,
    /// Orthogonal projection onto the unobservable space.
    pub p: Matrix,
}

impl ObservabilityDecomposition {
    pub fn unobservable_dim(&self) -> usize {
        self.v.ncols()
    }

    pub fn quotient_dim(&self) -> usize {
        self.q.nrows()
    }
}

/// `[C; CA; ...; CA^{n-1}]`.
pub fn observability_matrix(c: &Matrix, a: &Matrix) -> Matrix {
    let n = a.nrows();
    let s = c.nrows();
    let mut out = Matrix::zeros(s * n, n);
    let mut block = c.clone();
    for k in 0..n {
        out.view_mut((k * s, 0), (s, n)).copy_from(&block);
        block = &block * a;
    }
    out
}

fn check_pair(c: &Matrix, a: &Matrix) -> Result<()> {
    if !a.is_square() {
        return Err(Error::invalid("state matrix must be square"));
    }
    if c.ncols() != a.nrows() {
        return Err(Error::invalid(format!(
            "output matrix has {} columns, state dimension is {}",
            c.ncols(),
            a.nrows()
        )));
    }
    Ok(())
}

pub fn is_observable(c: &Matrix, a: &Matrix, tol: f64) -> Result<bool> {
    check_pair(c, a)?;
    if a.nrows() == 0 {
        return Ok(true);
    }
    Ok(rank(&observability_matrix(c, a), tol) == a.nrows())
}

/// Orthonormal basis of the unobservable space of `(C, A)`: the kernel of the
/// full `n`-block observability matrix.
pub fn unobservable_space(c: &Matrix, a: &Matrix, tol: f64) -> Result<Matrix> {
    check_pair(c, a)?;
    ensure_finite(c, "output matrix")?;
    ensure_finite(a, "state matrix")?;
    kernel_basis(&observability_matrix(c, a), tol)
}

fn relative_residual(residual: f64, scale: f64) -> f64 {
    residual / (1.0 + scale)
}

pub fn decompose(plant: &Plant, agent: usize, tol: f64) -> Result<ObservabilityDecomposition> {
    if agent >= plant.m() {
        return Err(Error::invalid(format!(
            "agent index {} out of range for {} agents",
            agent + 1,
            plant.m()
        )));
    }
    let a = plant.a();
    let c = plant.sensor(agent);
    let v = unobservable_space(c, a, tol)?;
    let q = orthonormal_row_complement(&v, tol)?;

    // Q has orthonormal rows, so Q^T is a right inverse.
    let a_bar = &q * a * q.transpose();
    let c_bar = c * q.transpose();

    let a_res = induced_two_norm(&(&q * a - &a_bar * &q));
    if relative_residual(a_res, induced_two_norm(a)) > 1e-8 {
        return Err(Error::consistency(
            "quotient_state_map",
            format!(
                "Q A = A_bar Q has residual {a_res:.3e} for agent {}",
                agent + 1
            ),
        ));
    }
    let c_res = induced_two_norm(&(&c_bar * &q - c));
    if relative_residual(c_res, induced_two_norm(c)) > 1e-8 {
        return Err(Error::consistency(
            "quotient_output_map",
            format!(
                "C_bar Q = C has residual {c_res:.3e} for agent {}",
                agent + 1
            ),
        ));
    }
    if !is_observable(&c_bar, &a_bar, tol)? {
        return Err(Error::consistency(
            "quotient_observability",
            format!("quotient pair of agent {} is not observable", agent + 1),
        ));
    }

    let p = &v * v.transpose();
    Ok(ObservabilityDecomposition {
        agent,
        v,
        q,
        c_bar,
        a_bar,
        p,
    })
}

pub fn decompose_all(plant: &Plant, tol: f64) -> Result<Vec<ObservabilityDecomposition>> {
    (0..plant.m()).map(|i| decompose(plant, i, tol)).collect()
}

/// Joint observability, computed two ways: the rank of the stacked
/// observability matrix, and triviality of the intersection of the agents'
/// unobservable spaces. The two must agree.
pub fn joint_observability(plant: &Plant, tol: f64) -> Result<bool> {
    let stacked = is_observable(&plant.stacked_output(), plant.a(), tol)?;

    let n = plant.n();
    let mut complements = Vec::with_capacity(plant.m());
    for c in plant.sensors() {
        let v = unobservable_space(c, plant.a(), tol)?;
        complements.push(orthonormal_row_complement(&v, tol)?);
    }
    let rows: usize = complements.iter().map(|q| q.nrows()).sum();
    let mut all = Matrix::zeros(rows, n);
    let mut r = 0;
    for q in &complements {
        all.view_mut((r, 0), q.shape()).copy_from(q);
        r += q.nrows();
    }
    let intersection_trivial = kernel_basis(&all, tol)?.ncols() == 0;

    if stacked != intersection_trivial {
        return Err(Error::consistency(
            "joint_observability",
            format!(
                "stacked rank test says {stacked}, subspace intersection test says {intersection_trivial}"
            ),
        ));
    }
    Ok(stacked)
}

/// Solves `M V = V A_V` for an invariant subspace with orthonormal basis `V`.
pub fn restriction_matrix(m: &Matrix, v: &Matrix, tol: f64) -> Result<Matrix> {
    if !m.is_square() || m.nrows() != v.nrows() {
        return Err(Error::invalid(
            "restriction needs square M with rows matching V",
        ));
    }
    let restricted = v.transpose() * m * v;
    let residual = induced_two_norm(&(m * v - v * &restricted));
    let bound = tol * induced_two_norm(m).max(1.0);
    if residual > bound {
        return Err(Error::NotInvariant { residual, bound });
    }
    Ok(restricted)
}

/// Row-major text form of a plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantDoc {
    pub n: usize,
    pub m: usize,
    /// Row-major `n x n` state matrix.
    pub a: Vec<f64>,
    pub sensors: Vec<SensorDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorDoc {
    pub rows: usize,
    /// Row-major `rows x n` output matrix.
    pub c: Vec<f64>,
}

impl PlantDoc {
    pub fn from_plant(plant: &Plant) -> Self {
        PlantDoc {
            n: plant.n(),
            m: plant.m(),
            a: to_row_major(plant.a()),
            sensors: plant
                .sensors()
                .iter()
                .map(|c| SensorDoc {
                    rows: c.nrows(),
                    c: to_row_major(c),
                })
                .collect(),
        }
    }

    pub fn to_plant(&self) -> Result<Plant> {
        if self.sensors.len() != self.m {
            return Err(Error::invalid(format!(
                "plant declares m = {} but lists {} sensors",
                self.m,
                self.sensors.len()
            )));
        }
        let a = from_row_major(self.n, self.n, &self.a)?;
        let sensors = self
            .sensors
            .iter()
            .map(|s| from_row_major(s.rows, self.n, &s.c))
            .collect::<Result<Vec<_>>>()?;
        Plant::new(a, sensors)
    }
}

/// Default tolerance for rank decisions in this module.
pub const DEFAULT_TOL: f64 = RANK_TOL;
