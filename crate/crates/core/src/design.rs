//! Observer synthesis and certification.
//!
//! Each agent gets an output-injection gain placed on its observable quotient.
//! The stacked error model then splits into a quotient part with fixed
//! dynamics `A_bar_V` and a subspace part `A_tilde B(tau)^q`, where
//! `B(tau) = V^T (S(tau) (x) I_n) V`. The number of consensus rounds `q` is
//! chosen so the subspace part contracts at least as fast as `lambda`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    block_diag, eigenvalues, induced_two_norm, kron, mat_pow, mixed_matrix_norm, spectral_radius,
    symmetric_eigenvalues, weighted_two_norm, BlockPartition, Matrix,
};
use crate::network::{perron_vector, FlockingMatrix, GraphSchedule};
use crate::plant::{
    is_observable, observability_matrix, restriction_matrix, ObservabilityDecomposition, Plant,
    DEFAULT_TOL,
};

/// Hard cap on every integer search in this module.
pub const ITERATION_CAP: u64 = 1_000_000;

/// Placement targets sit inside `[0, PLACEMENT_MARGIN * lambda)`.
pub const PLACEMENT_MARGIN: f64 = 0.9;

const PLACEMENT_TOL: f64 = 1e-6;
const STRUCTURE_TOL: f64 = 1e-9;

/// Distinct real targets `PLACEMENT_MARGIN * lambda * j / k`, `j = 0..k`.
pub fn placement_targets(k: usize, lambda: f64) -> Vec<f64> {
    (0..k)
        .map(|j| PLACEMENT_MARGIN * lambda * j as f64 / k as f64)
        .collect()
}

fn placement_residual(closed: &Matrix, targets: &[f64]) -> f64 {
    let achieved = eigenvalues(closed);
    if achieved.len() != targets.len() {
        return f64::INFINITY;
    }
    let mut sorted = targets.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    achieved
        .iter()
        .zip(&sorted)
        .map(|(&(re, im), &t)| (re - t).hypot(im))
        .fold(0.0, f64::max)
}

/// Output-injection gain `K` with `eig(A + K C) = targets`.
///
/// Multi-output pairs are reduced to a single output: a random preliminary
/// injection makes the closed loop cyclic, a random output combination
/// `f^T C` then observes it, and Ackermann's formula places the poles on that
/// scalar channel. Randomness is seeded, so the result is deterministic.
pub fn place_eigenvalues(a: &Matrix, c: &Matrix, targets: &[f64]) -> Result<Matrix> {
    let k = a.nrows();
    let s = c.nrows();
    if !a.is_square() || c.ncols() != k {
        return Err(Error::invalid(
            "placement needs square A and C with matching columns",
        ));
    }
    if targets.len() != k {
        return Err(Error::invalid(format!(
            "{} targets for a {k}-dimensional pair",
            targets.len()
        )));
    }
    if k == 0 {
        return Ok(Matrix::zeros(0, s));
    }
    if !is_observable(c, a, DEFAULT_TOL)? {
        return Err(Error::invalid(
            "pair is not observable; its spectrum is not assignable",
        ));
    }

    let scale = induced_two_norm(a).max(1.0) / induced_two_norm(c).max(f64::MIN_POSITIVE);
    let mut rng = ChaCha8Rng::seed_from_u64(0x0b5e_7e12);
    let mut best = f64::INFINITY;
    for attempt in 0..64 {
        let (pre, f) = if attempt == 0 {
            let mut f = Matrix::zeros(s, 1);
            f[(0, 0)] = 1.0;
            (Matrix::zeros(k, s), f)
        } else {
            let pre_scale = if attempt < 4 { 0.0 } else { scale };
            let pre = Matrix::from_fn(k, s, |_, _| pre_scale * rng.random_range(-1.0..1.0));
            let f = Matrix::from_fn(s, 1, |_, _| rng.random_range(-1.0..1.0));
            (pre, f)
        };
        let a1 = a + &pre * c;
        let row = f.transpose() * c;
        let obs = observability_matrix(&row, &a1);
        let Some(inv) = obs.clone().try_inverse() else {
            continue;
        };
        let last_col = inv.column(k - 1).into_owned();
        let mut phi = Matrix::identity(k, k);
        for &t in targets {
            phi = &phi * (&a1 - Matrix::identity(k, k) * t);
        }
        let l = phi * last_col;
        let gain = pre - &l * f.transpose();
        let closed = a + &gain * c;
        let residual = placement_residual(&closed, targets);
        if residual <= PLACEMENT_TOL {
            return Ok(gain);
        }
        best = best.min(residual);
    }
    Err(Error::NumericalFailure(format!(
        "pole placement missed its targets by {best:.3e}"
    )))
}

/// Gain with `spectral_radius(A + K C) <= lambda`, poles at
/// [`placement_targets`].
pub fn place_spectrum(a_bar: &Matrix, c_bar: &Matrix, lambda: f64) -> Result<Matrix> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::invalid(format!(
            "lambda must lie in (0, 1), got {lambda}"
        )));
    }
    let gain = place_eigenvalues(a_bar, c_bar, &placement_targets(a_bar.nrows(), lambda))?;
    let rho = spectral_radius(&(a_bar + &gain * c_bar));
    if rho > lambda {
        return Err(Error::NumericalFailure(format!(
            "placed spectral radius {rho:.6} exceeds lambda {lambda}"
        )));
    }
    Ok(gain)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentGain {
    pub agent: usize,
    /// Quotient gain, `(n - n_i) x s_i`.
    pub k_bar: Matrix,
    /// Lifted gain `Q_i^T K_bar`, `n x s_i`.
    pub k: Matrix,
    /// Restriction of `A + K C_i` to the unobservable space.
    pub a_restr: Matrix,
}

impl AgentGain {
    pub fn closed_loop(&self, plant: &Plant) -> Matrix {
        plant.a() + &self.k * plant.sensor(self.agent)
    }

    /// `A_bar_i + K_bar_i C_bar_i`.
    pub fn quotient_closed_loop(&self, decomp: &ObservabilityDecomposition) -> Matrix {
        &decomp.a_bar + &self.k_bar * &decomp.c_bar
    }
}

/// Lifts a quotient gain to the state space and restricts the closed loop to
/// the unobservable space. Checks the structural identities, not the rate.
pub fn lift_gain(
    plant: &Plant,
    decomp: &ObservabilityDecomposition,
    k_bar: Matrix,
) -> Result<AgentGain> {
    let agent = decomp.agent;
    let c = plant.sensor(agent);
    if k_bar.shape() != (decomp.quotient_dim(), c.nrows()) {
        return Err(Error::invalid(format!(
            "quotient gain of agent {} is {}x{}, expected {}x{}",
            agent + 1,
            k_bar.nrows(),
            k_bar.ncols(),
            decomp.quotient_dim(),
            c.nrows()
        )));
    }
    let k = decomp.q.transpose() * &k_bar;
    let closed = plant.a() + &k * c;
    let quotient = &decomp.a_bar + &k_bar * &decomp.c_bar;

    let scale = 1.0 + induced_two_norm(plant.a()) + induced_two_norm(&k) * induced_two_norm(c);
    let residual = induced_two_norm(&(&decomp.q * &closed - &quotient * &decomp.q));
    if residual > STRUCTURE_TOL * scale {
        return Err(Error::consistency(
            "lifted_gain_intertwining",
            format!(
                "Q (A + K C) = (A_bar + K_bar C_bar) Q has residual {residual:.3e} for agent {}",
                agent + 1
            ),
        ));
    }
    let a_restr = restriction_matrix(&closed, &decomp.v, STRUCTURE_TOL)?;
    Ok(AgentGain {
        agent,
        k_bar,
        k,
        a_restr,
    })
}

/// Rate certificate for one agent: the quotient closed loop must have
/// spectral radius at most `lambda`.
pub fn check_gain_rate(
    gain: &AgentGain,
    decomp: &ObservabilityDecomposition,
    lambda: f64,
) -> Result<f64> {
    let rho = spectral_radius(&gain.quotient_closed_loop(decomp));
    if rho > lambda + 1e-8 {
        return Err(Error::certificate(
            "quotient_spectral_radius",
            format!(
                "spectral radius of agent {}'s quotient closed loop exceeds lambda {lambda}",
                gain.agent + 1
            ),
            rho,
        ));
    }
    Ok(rho)
}

pub fn design_gains(
    plant: &Plant,
    decomps: &[ObservabilityDecomposition],
    lambda: f64,
) -> Result<Vec<AgentGain>> {
    decomps
        .iter()
        .map(|d| {
            let k_bar = place_spectrum(&d.a_bar, &d.c_bar, lambda)?;
            let gain = lift_gain(plant, d, k_bar)?;
            check_gain_rate(&gain, d, lambda)?;
            Ok(gain)
        })
        .collect()
}

/// Stacked error dynamics of all agents.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorModel {
    pub n: usize,
    pub m: usize,
    /// Block diagonal of `A + K_i C_i`.
    pub a_closed: Matrix,
    /// Block diagonal of the projections `P_i`.
    pub p_stack: Matrix,
    /// Block diagonal of `V_i`, `mn x n_bar`.
    pub v_stack: Matrix,
    /// Block diagonal of `Q_i`, `(mn - n_bar) x mn`.
    pub q_stack: Matrix,
    /// Block diagonal of the restrictions `A_i`.
    pub a_tilde: Matrix,
    /// Block diagonal of `A_bar_i + K_bar_i C_bar_i`.
    pub a_bar_v: Matrix,
    /// Blocks of sizes `n_i` on `n_bar`.
    pub partition: BlockPartition,
}

/// Residual of one structural identity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub label: &'static str,
    pub graph: Option<usize>,
    pub q: Option<u64>,
    pub residual: f64,
    pub bound: f64,
}

impl IdentityCheck {
    pub fn passed(&self) -> bool {
        self.residual <= self.bound
    }
}

/// `A_bar (I - P (I - S_bar))^q` expressed in the coordinates `H = [Q; V^T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTriangularFactor {
    pub h: Matrix,
    pub a_bar_v: Matrix,
    pub a_hat_v: Matrix,
    pub a_v: Matrix,
}

impl BlockTriangularFactor {
    /// `H^{-1} [[A_bar_V, 0], [A_hat_V, A_V]] H`, with `H^{-1} = H^T`.
    pub fn reconstruct(&self) -> Matrix {
        let top = self.a_bar_v.nrows();
        let bottom = self.a_v.nrows();
        let mut t = Matrix::zeros(top + bottom, top + bottom);
        t.view_mut((0, 0), (top, top)).copy_from(&self.a_bar_v);
        t.view_mut((top, 0), (bottom, top)).copy_from(&self.a_hat_v);
        t.view_mut((top, top), (bottom, bottom))
            .copy_from(&self.a_v);
        self.h.transpose() * t * &self.h
    }
}

impl ErrorModel {
    pub fn n_bar(&self) -> usize {
        self.v_stack.ncols()
    }

    pub fn dim(&self) -> usize {
        self.n * self.m
    }

    /// `S (x) I_n`.
    pub fn s_bar(&self, s: &FlockingMatrix) -> Matrix {
        kron(&s.s, &Matrix::identity(self.n, self.n))
    }

    /// One projected-consensus round, `I - P (I - S_bar)`.
    pub fn consensus_matrix(&self, s: &FlockingMatrix) -> Matrix {
        let dim = self.dim();
        let eye = Matrix::identity(dim, dim);
        &eye - &self.p_stack * (&eye - self.s_bar(s))
    }

    /// Error transition across one event interval with `q` rounds.
    pub fn event_factor(&self, s: &FlockingMatrix, q: u64) -> Matrix {
        &self.a_closed * mat_pow(&self.consensus_matrix(s), q)
    }

    pub fn h(&self) -> Matrix {
        let dim = self.dim();
        let top = self.q_stack.nrows();
        let mut h = Matrix::zeros(dim, dim);
        h.view_mut((0, 0), (top, dim)).copy_from(&self.q_stack);
        h.view_mut((top, 0), (self.n_bar(), dim))
            .copy_from(&self.v_stack.transpose());
        h
    }

    pub fn block_triangular(&self, s: &FlockingMatrix, q: u64) -> BlockTriangularFactor {
        let factor = self.event_factor(s, q);
        let b = consensus_block(self, s);
        BlockTriangularFactor {
            h: self.h(),
            a_bar_v: self.a_bar_v.clone(),
            a_hat_v: self.v_stack.transpose() * &factor * self.q_stack.transpose(),
            a_v: &self.a_tilde * mat_pow(&b, q),
        }
    }

    fn closed_scale(&self) -> f64 {
        1.0 + induced_two_norm(&self.a_closed)
    }

    /// Identities that do not involve the graph.
    pub fn static_identities(&self) -> Vec<IdentityCheck> {
        let scale = self.closed_scale();
        vec![
            IdentityCheck {
                label: "quotient_intertwining",
                graph: None,
                q: None,
                residual: induced_two_norm(
                    &(&self.q_stack * &self.a_closed - &self.a_bar_v * &self.q_stack),
                ),
                bound: STRUCTURE_TOL * scale,
            },
            IdentityCheck {
                label: "subspace_restriction",
                graph: None,
                q: None,
                residual: induced_two_norm(
                    &(&self.a_closed * &self.v_stack - &self.v_stack * &self.a_tilde),
                ),
                bound: STRUCTURE_TOL * scale,
            },
            IdentityCheck {
                label: "projection_factorization",
                graph: None,
                q: None,
                residual: induced_two_norm(
                    &(&self.p_stack - &self.v_stack * self.v_stack.transpose()),
                ),
                bound: STRUCTURE_TOL,
            },
        ]
    }

    /// Consensus and event-level identities for one graph and round count.
    pub fn graph_identities(
        &self,
        s: &FlockingMatrix,
        graph: Option<usize>,
        q: u64,
    ) -> Vec<IdentityCheck> {
        let rounds = mat_pow(&self.consensus_matrix(s), q);
        let b_q = mat_pow(&consensus_block(self, s), q);
        let factor = &self.a_closed * &rounds;
        let scale = self.closed_scale();
        let tri = self.block_triangular(s, q);
        let check = |label, residual, bound| IdentityCheck {
            label,
            graph,
            q: Some(q),
            residual,
            bound,
        };
        vec![
            check(
                "consensus_preserves_quotient",
                induced_two_norm(&(&self.q_stack * &rounds - &self.q_stack)),
                STRUCTURE_TOL,
            ),
            check(
                "consensus_on_subspace",
                induced_two_norm(&(&rounds * &self.v_stack - &self.v_stack * &b_q)),
                STRUCTURE_TOL,
            ),
            check(
                "event_quotient_dynamics",
                induced_two_norm(&(&self.q_stack * &factor - &self.a_bar_v * &self.q_stack)),
                STRUCTURE_TOL * scale,
            ),
            check(
                "event_subspace_dynamics",
                induced_two_norm(&(&factor * &self.v_stack - &self.v_stack * &tri.a_v)),
                STRUCTURE_TOL * scale,
            ),
            check(
                "block_triangular_form",
                induced_two_norm(&(&factor - tri.reconstruct())),
                STRUCTURE_TOL * scale,
            ),
        ]
    }
}

fn first_failure(checks: &[IdentityCheck]) -> Option<&IdentityCheck> {
    checks.iter().find(|c| !c.passed())
}

fn identity_error(c: &IdentityCheck) -> Error {
    Error::consistency(
        c.label,
        format!(
            "residual {:.3e} exceeds {:.3e} (graph {:?}, q {:?})",
            c.residual, c.bound, c.graph, c.q
        ),
    )
}

pub fn build_error_model(
    plant: &Plant,
    decomps: &[ObservabilityDecomposition],
    gains: &[AgentGain],
    schedule: &GraphSchedule,
) -> Result<ErrorModel> {
    let m = decomps.len();
    if m < 2 {
        return Err(Error::invalid(format!(
            "error model needs m > 1 agents, got {m}"
        )));
    }
    if gains.len() != m || plant.m() != m || schedule.m() != m {
        return Err(Error::invalid(format!(
            "agent counts disagree: plant {}, decompositions {m}, gains {}, schedule {}",
            plant.m(),
            gains.len(),
            schedule.m()
        )));
    }
    for (i, (d, g)) in decomps.iter().zip(gains).enumerate() {
        if d.agent != i || g.agent != i {
            return Err(Error::invalid(
                "decompositions and gains must be in agent order",
            ));
        }
        if g.a_restr.nrows() != d.unobservable_dim() || g.k_bar.nrows() != d.quotient_dim() {
            return Err(Error::invalid(format!(
                "gain of agent {} has wrong shape",
                i + 1
            )));
        }
    }

    let model = ErrorModel {
        n: plant.n(),
        m,
        a_closed: block_diag(
            &gains
                .iter()
                .map(|g| g.closed_loop(plant))
                .collect::<Vec<_>>(),
        ),
        p_stack: block_diag(&decomps.iter().map(|d| d.p.clone()).collect::<Vec<_>>()),
        v_stack: block_diag(&decomps.iter().map(|d| d.v.clone()).collect::<Vec<_>>()),
        q_stack: block_diag(&decomps.iter().map(|d| d.q.clone()).collect::<Vec<_>>()),
        a_tilde: block_diag(&gains.iter().map(|g| g.a_restr.clone()).collect::<Vec<_>>()),
        a_bar_v: block_diag(
            &gains
                .iter()
                .zip(decomps)
                .map(|(g, d)| g.quotient_closed_loop(d))
                .collect::<Vec<_>>(),
        ),
        partition: BlockPartition::square(decomps.iter().map(|d| d.unobservable_dim()).collect()),
    };

    if let Some(c) = first_failure(&model.static_identities()) {
        return Err(identity_error(c));
    }
    for (gi, s) in schedule.distinct_flocking().iter().enumerate() {
        for q in 1..=3 {
            if let Some(c) = first_failure(&model.graph_identities(s, Some(gi), q)) {
                return Err(identity_error(c));
            }
        }
    }
    Ok(model)
}

/// `B = V^T (S (x) I_n) V`; block `(i, j)` equals `s_ij V_i^T V_j`.
pub fn consensus_block(model: &ErrorModel, s: &FlockingMatrix) -> Matrix {
    model.v_stack.transpose() * model.s_bar(s) * &model.v_stack
}

/// Lyapunov certificate for `w(k+1) = B w(k)` with weight
/// `R = V^T (Pi (x) I_n) V`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovCertificate {
    pub r: Matrix,
    pub r_min_eigenvalue: f64,
    /// Largest eigenvalue of `B^T R B - R`.
    pub decrement_max_eigenvalue: f64,
}

impl LyapunovCertificate {
    /// Distance of the decrement from zero; `None` when the subspace is empty.
    pub fn margin(&self) -> Option<f64> {
        (self.r.nrows() > 0).then_some(-self.decrement_max_eigenvalue)
    }
}

pub fn lyapunov_weight(model: &ErrorModel, s: &FlockingMatrix, tol: f64) -> Result<Matrix> {
    let pi = perron_vector(s, tol)?;
    let weights = kron(
        &Matrix::from_diagonal(&pi),
        &Matrix::identity(model.n, model.n),
    );
    Ok(model.v_stack.transpose() * weights * &model.v_stack)
}

pub fn lyapunov_certificate(
    model: &ErrorModel,
    s: &FlockingMatrix,
    tol: f64,
) -> Result<LyapunovCertificate> {
    if model.n_bar() == 0 {
        return Ok(LyapunovCertificate {
            r: Matrix::zeros(0, 0),
            r_min_eigenvalue: f64::INFINITY,
            decrement_max_eigenvalue: f64::NEG_INFINITY,
        });
    }
    let r = lyapunov_weight(model, s, tol)?;
    let r_min_eigenvalue = symmetric_eigenvalues(&r)[0];
    if !(r_min_eigenvalue > tol) {
        return Err(Error::certificate(
            "lyapunov_weight_positive",
            "R is not positive definite",
            r_min_eigenvalue,
        ));
    }
    let b = consensus_block(model, s);
    let decrement = b.transpose() * &r * &b - &r;
    let decrement_max_eigenvalue = *symmetric_eigenvalues(&decrement).last().expect("non-empty");
    if !(decrement_max_eigenvalue < 0.0) {
        return Err(Error::certificate(
            "lyapunov_decrement",
            "B^T R B - R is not negative definite",
            decrement_max_eigenvalue,
        ));
    }
    Ok(LyapunovCertificate {
        r,
        r_min_eigenvalue,
        decrement_max_eigenvalue,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QMethod {
    WeightedTwoNorm,
    MixedNorm,
}

/// Per-graph quantities behind a round-count choice.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphQReport {
    pub graph: usize,
    /// `|B|_R` (weighted, constant), `|B^p|_2` (weighted, switching) or
    /// `|B^p|` in the mixed norm.
    pub contraction: f64,
    /// Smallest exponent making the graph's own contraction test pass.
    pub own_exponent: u64,
    /// Bound achieved on this graph at the selected `q`.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QSelection {
    pub q: u64,
    pub method: QMethod,
    pub p: u64,
    pub p_bar: u64,
    pub certified_bound: f64,
    /// Norm of `A_tilde` in the method's norm (two-norm for switching
    /// weighted selection).
    pub a_tilde_norm: f64,
    pub per_graph: Vec<GraphQReport>,
}

impl QSelection {
    fn vacuous(method: QMethod, graphs: usize) -> Self {
        QSelection {
            q: 1,
            method,
            p: 1,
            p_bar: 1,
            certified_bound: 0.0,
            a_tilde_norm: 0.0,
            per_graph: (0..graphs)
                .map(|graph| GraphQReport {
                    graph,
                    contraction: 0.0,
                    own_exponent: 1,
                    bound: 0.0,
                })
                .collect(),
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "lambda must lie in (0, 1), got {lambda}"
        )))
    }
}

/// Smallest `k >= 1` with `base * ratio^k <= lambda`.
fn smallest_exponent(base: f64, ratio: f64, lambda: f64, what: &'static str) -> Result<(u64, f64)> {
    let mut bound = base * ratio;
    let mut k = 1;
    while bound > lambda {
        if k >= ITERATION_CAP {
            return Err(Error::NonTermination {
                what,
                cap: ITERATION_CAP,
            });
        }
        bound *= ratio;
        k += 1;
    }
    Ok((k, bound))
}

/// Round count from weighted two-norms. A constant graph uses its own
/// Lyapunov weight; a switching schedule falls back on the plain two-norm,
/// first finding `p` with `|B^p|_2 < 1` on every graph and then `p_bar` with
/// `|A_tilde (B^p)^p_bar|_2 <= lambda` on every graph.
pub fn choose_q_weighted(
    model: &ErrorModel,
    schedule: &GraphSchedule,
    lambda: f64,
) -> Result<QSelection> {
    check_lambda(lambda)?;
    let flocking = schedule.distinct_flocking();
    if model.n_bar() == 0 {
        return Ok(QSelection::vacuous(
            QMethod::WeightedTwoNorm,
            flocking.len(),
        ));
    }

    if schedule.is_constant() {
        let s = &flocking[0];
        let r = lyapunov_weight(model, s, DEFAULT_TOL * 10.0)?;
        let b = consensus_block(model, s);
        let b_norm = weighted_two_norm(&b, &r)?;
        if !(b_norm < 1.0) {
            return Err(Error::certificate(
                "weighted_norm_contraction",
                "|B|_R is not below one",
                b_norm,
            ));
        }
        let a_norm = weighted_two_norm(&model.a_tilde, &r)?;
        let (q, bound) = smallest_exponent(a_norm, b_norm, lambda, "weighted round count")?;
        return Ok(QSelection {
            q,
            method: QMethod::WeightedTwoNorm,
            p: 1,
            p_bar: q,
            certified_bound: bound,
            a_tilde_norm: a_norm,
            per_graph: vec![GraphQReport {
                graph: 0,
                contraction: b_norm,
                own_exponent: q,
                bound,
            }],
        });
    }

    let blocks: Vec<Matrix> = flocking.iter().map(|s| consensus_block(model, s)).collect();
    let mut own = Vec::with_capacity(blocks.len());
    for b in &blocks {
        let mut power = b.clone();
        let mut p1 = 1;
        while !(induced_two_norm(&power) < 1.0) {
            if p1 >= ITERATION_CAP {
                return Err(Error::NonTermination {
                    what: "two-norm contraction exponent",
                    cap: ITERATION_CAP,
                });
            }
            power = &power * b;
            p1 += 1;
        }
        own.push(p1);
    }
    let p = *own.iter().max().expect("schedule has graphs");
    let b_p: Vec<Matrix> = blocks.iter().map(|b| mat_pow(b, p)).collect();

    let mut products: Vec<Matrix> = b_p.iter().map(|bp| &model.a_tilde * bp).collect();
    let mut p_bar = 1;
    loop {
        let worst = products.iter().map(induced_two_norm).fold(0.0, f64::max);
        if worst <= lambda {
            break;
        }
        if p_bar >= ITERATION_CAP {
            return Err(Error::NonTermination {
                what: "two-norm outer exponent",
                cap: ITERATION_CAP,
            });
        }
        for (prod, bp) in products.iter_mut().zip(&b_p) {
            *prod = &*prod * bp;
        }
        p_bar += 1;
    }
    let bounds: Vec<f64> = products.iter().map(induced_two_norm).collect();
    Ok(QSelection {
        q: p * p_bar,
        method: QMethod::WeightedTwoNorm,
        p,
        p_bar,
        certified_bound: bounds.iter().copied().fold(0.0, f64::max),
        a_tilde_norm: induced_two_norm(&model.a_tilde),
        per_graph: b_p
            .iter()
            .enumerate()
            .map(|(graph, bp)| GraphQReport {
                graph,
                contraction: induced_two_norm(bp),
                own_exponent: own[graph],
                bound: bounds[graph],
            })
            .collect(),
    })
}

/// `(m - 1)^2`, floored at one.
pub fn mixed_norm_power(m: usize) -> u64 {
    (((m - 1) * (m - 1)) as u64).max(1)
}

/// Round count from the mixed matrix norm with `p = (m - 1)^2`.
pub fn choose_q_mixed(
    model: &ErrorModel,
    schedule: &GraphSchedule,
    lambda: f64,
) -> Result<QSelection> {
    check_lambda(lambda)?;
    let flocking = schedule.distinct_flocking();
    if model.n_bar() == 0 {
        return Ok(QSelection::vacuous(QMethod::MixedNorm, flocking.len()));
    }
    let p = mixed_norm_power(model.m);
    let a_norm = mixed_matrix_norm(&model.a_tilde, &model.partition)?;

    let mut per_graph = Vec::with_capacity(flocking.len());
    for (graph, s) in flocking.iter().enumerate() {
        let b_p = mat_pow(&consensus_block(model, s), p);
        let contraction = mixed_matrix_norm(&b_p, &model.partition)?;
        if !(contraction < 1.0) {
            return Err(Error::certificate(
                "mixed_norm_contraction",
                format!("|B^p| is not below one on graph {graph} with p = {p}"),
                contraction,
            ));
        }
        let (own_exponent, _) =
            smallest_exponent(a_norm, contraction, lambda, "mixed-norm outer exponent")?;
        per_graph.push(GraphQReport {
            graph,
            contraction,
            own_exponent,
            bound: 0.0,
        });
    }
    let p_bar = per_graph
        .iter()
        .map(|g| g.own_exponent)
        .max()
        .expect("graphs");
    for g in &mut per_graph {
        g.bound = a_norm * g.contraction.powf(p_bar as f64);
    }
    Ok(QSelection {
        q: p * p_bar,
        method: QMethod::MixedNorm,
        p,
        p_bar,
        certified_bound: per_graph.iter().map(|g| g.bound).fold(0.0, f64::max),
        a_tilde_norm: a_norm,
        per_graph,
    })
}

pub fn choose_q(
    model: &ErrorModel,
    schedule: &GraphSchedule,
    lambda: f64,
    method: QMethod,
) -> Result<QSelection> {
    match method {
        QMethod::WeightedTwoNorm => choose_q_weighted(model, schedule, lambda),
        QMethod::MixedNorm => choose_q_mixed(model, schedule, lambda),
    }
}

/// `Phi(tau)` for `tau = 1..=tau_max`, so that `e(tau) = Phi(tau) e(0)`.
/// The factor for the interval starting at event `t` uses the graph active at
/// `t`. Each distinct factor is cross-checked against its block-triangular
/// form.
pub fn transition_product(
    model: &ErrorModel,
    schedule: &GraphSchedule,
    q: u64,
    tau_max: u64,
) -> Result<Vec<Matrix>> {
    if q == 0 {
        return Err(Error::invalid("q must be at least 1"));
    }
    let flocking = schedule.distinct_flocking();
    let mut factors: Vec<Option<Matrix>> = vec![None; flocking.len()];
    let dim = model.dim();
    let mut phi = Matrix::identity(dim, dim);
    let mut out = Vec::with_capacity(tau_max as usize);
    for t in 0..tau_max {
        let gi = schedule.graph_index(t);
        if factors[gi].is_none() {
            let s = &flocking[gi];
            let direct = model.event_factor(s, q);
            let residual =
                induced_two_norm(&(&direct - model.block_triangular(s, q).reconstruct()));
            if residual > 1e-8 * (1.0 + induced_two_norm(&direct)) {
                return Err(Error::consistency(
                    "block_triangular_form",
                    format!(
                        "factor for graph {gi} differs from its triangular form by {residual:.3e}"
                    ),
                ));
            }
            factors[gi] = Some(direct);
        }
        phi = factors[gi].as_ref().expect("just filled") * phi;
        out.push(phi.clone());
    }
    Ok(out)
}
