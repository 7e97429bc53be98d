//! Neighbor graphs, switching schedules, and the row-stochastic flocking
//! matrices they induce.
//!
//! Agents are indexed from 0 in code. Text documents use labels `1..=m`.

use std::collections::{BTreeSet, VecDeque};

use rand::{seq::SliceRandom, Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{kernel_basis, symmetric_eigenvalues, Matrix, Vector};

/// Directed neighbor graph. An arc `(j, i)` means agent `j` is a neighbor of
/// agent `i`, i.e. `i` hears `j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Digraph {
    m: usize,
    arcs: BTreeSet<(usize, usize)>,
}

impl Digraph {
    /// Builds a graph from arcs and adds every self-loop.
    pub fn new(m: usize, arcs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut g = Self::from_arcs_exact(m, arcs)?;
        g.arcs.extend((0..m).map(|i| (i, i)));
        Ok(g)
    }

    /// Builds a graph with exactly the given arcs.
    pub fn from_arcs_exact(
        m: usize,
        arcs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("graph needs at least one vertex"));
        }
        let arcs: BTreeSet<_> = arcs.into_iter().collect();
        if let Some(&(j, i)) = arcs.iter().find(|&&(j, i)| j >= m || i >= m) {
            return Err(Error::invalid(format!(
                "arc {} -> {} out of range for {m} vertices",
                j + 1,
                i + 1
            )));
        }
        Ok(Digraph { m, arcs })
    }

    pub fn complete(m: usize) -> Self {
        let arcs = (0..m).flat_map(|j| (0..m).map(move |i| (j, i)));
        Digraph::new(m, arcs).expect("complete graph is valid")
    }

    /// Directed cycle `0 -> 1 -> ... -> m-1 -> 0` plus self-loops.
    pub fn cycle(m: usize) -> Self {
        Digraph::new(m, (0..m).map(|j| (j, (j + 1) % m))).expect("cycle is valid")
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn arcs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.arcs.iter().copied()
    }

    pub fn has_arc(&self, from: usize, to: usize) -> bool {
        self.arcs.contains(&(from, to))
    }

    pub fn has_all_self_loops(&self) -> bool {
        (0..self.m).all(|i| self.has_arc(i, i))
    }

    fn reaches_all(&self, forward: bool) -> bool {
        let mut seen = vec![false; self.m];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for &(j, i) in &self.arcs {
                let (from, to) = if forward { (j, i) } else { (i, j) };
                if from == v && !seen[to] {
                    seen[to] = true;
                    queue.push_back(to);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Forward and backward reachability from vertex 0.
pub fn is_strongly_connected(g: &Digraph) -> bool {
    g.reaches_all(true) && g.reaches_all(false)
}

/// `N_i = { j : j -> i }`.
pub fn neighbor_sets(g: &Digraph) -> Vec<BTreeSet<usize>> {
    let mut sets = vec![BTreeSet::new(); g.m];
    for (j, i) in g.arcs() {
        sets[i].insert(j);
    }
    sets
}

/// Row-stochastic averaging matrix of one neighbor graph.
#[derive(Debug, Clone, PartialEq)]
pub struct FlockingMatrix {
    pub s: Matrix,
    /// Event index the matrix belongs to, when taken from a schedule.
    pub tau: Option<u64>,
}

impl FlockingMatrix {
    pub fn m(&self) -> usize {
        self.s.nrows()
    }

    /// Graph of `S^T`: arc `j -> i` whenever `s_ij != 0`.
    pub fn neighbor_graph(&self) -> Digraph {
        let m = self.m();
        let arcs = (0..m)
            .flat_map(|i| (0..m).map(move |j| (j, i)))
            .filter(|&(j, i)| self.s[(i, j)] != 0.0);
        Digraph::from_arcs_exact(m, arcs).expect("indices in range")
    }
}

/// `S = D^{-1} A^T`: row `i` puts weight `1/m_i` on each neighbor of `i`,
/// where `m_i` counts the self-loop.
pub fn flocking_matrix(g: &Digraph) -> Result<FlockingMatrix> {
    if let Some(i) = (0..g.m).find(|&i| !g.has_arc(i, i)) {
        return Err(Error::invalid(format!("vertex {} has no self-loop", i + 1)));
    }
    let mut s = Matrix::zeros(g.m, g.m);
    for (i, set) in neighbor_sets(g).iter().enumerate() {
        let w = 1.0 / set.len() as f64;
        for &j in set {
            s[(i, j)] = w;
        }
    }
    Ok(FlockingMatrix { s, tau: None })
}

fn require_irreducible(s: &FlockingMatrix) -> Result<()> {
    let m = s.m();
    if s.s.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::invalid(
            "flocking matrix has negative or non-finite entries",
        ));
    }
    if (0..m).any(|i| s.s[(i, i)] <= 0.0) {
        return Err(Error::invalid(
            "flocking matrix has a non-positive diagonal entry",
        ));
    }
    if !is_strongly_connected(&s.neighbor_graph()) {
        return Err(Error::invalid(
            "graph of the transposed flocking matrix is not strongly connected",
        ));
    }
    Ok(())
}

/// Positive probability vector with `S^T pi = pi`, taken as the null vector
/// of `S^T - I`.
pub fn perron_vector(s: &FlockingMatrix, tol: f64) -> Result<Vector> {
    require_irreducible(s)?;
    let m = s.m();
    let shifted = s.s.transpose() - Matrix::identity(m, m);
    // The kernel is one-dimensional; take the least singular direction even if
    // rounding pushes its singular value above the rank cutoff.
    let svd = shifted.clone().svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::NumericalFailure("SVD failed".into()))?;
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let mut pi: Vector = v_t.row(k).transpose();
    let sum: f64 = pi.sum();
    if sum == 0.0 || !sum.is_finite() {
        return Err(Error::NumericalFailure(
            "Perron vector has zero mass".into(),
        ));
    }
    pi /= sum;
    let residual = (s.s.transpose() * &pi - &pi).amax();
    if residual > tol {
        return Err(Error::NumericalFailure(format!(
            "Perron residual {residual:.3e} exceeds {tol:.3e}"
        )));
    }
    if let Some(min) = pi.iter().copied().reduce(f64::min) {
        if min <= 0.0 {
            return Err(Error::NumericalFailure(format!(
                "Perron vector has non-positive entry {min:.3e}"
            )));
        }
    }
    Ok(pi)
}

/// Certificate for the generalized Laplacian `L = Pi - S^T Pi S`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianCertificate {
    pub pi: Vector,
    pub laplacian: Matrix,
    /// Ascending eigenvalues of `L`.
    pub eigenvalues: Vec<f64>,
    pub ones_residual: f64,
    pub kernel_dim: usize,
}

impl LaplacianCertificate {
    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// Smallest eigenvalue above the kernel; the algebraic connectivity analogue.
    pub fn second_eigenvalue(&self) -> f64 {
        self.eigenvalues.get(1).copied().unwrap_or(f64::INFINITY)
    }
}

pub fn laplacian_certificate(s: &FlockingMatrix, tol: f64) -> Result<LaplacianCertificate> {
    let pi = perron_vector(s, tol)?;
    let pi_mat = Matrix::from_diagonal(&pi);
    let laplacian = &pi_mat - s.s.transpose() * &pi_mat * &s.s;
    let asym = (&laplacian - laplacian.transpose()).amax();
    if asym > tol {
        return Err(Error::certificate(
            "generalized_laplacian_symmetry",
            "L is not symmetric",
            asym,
        ));
    }
    let eigenvalues = symmetric_eigenvalues(&laplacian);
    let ones = Vector::from_element(s.m(), 1.0);
    let ones_residual = (&laplacian * ones).amax();
    let kernel_dim = eigenvalues.iter().filter(|&&l| l < tol).count();
    let cert = LaplacianCertificate {
        pi,
        laplacian,
        eigenvalues,
        ones_residual,
        kernel_dim,
    };
    if cert.min_eigenvalue() < -tol {
        return Err(Error::certificate(
            "generalized_laplacian_psd",
            "L has a negative eigenvalue",
            cert.min_eigenvalue(),
        ));
    }
    if ones_residual > tol {
        return Err(Error::certificate(
            "generalized_laplacian_ones",
            "L 1 is not zero",
            ones_residual,
        ));
    }
    if kernel_dim != 1 {
        return Err(Error::certificate(
            "generalized_laplacian_kernel",
            format!("kernel of L has dimension {kernel_dim}"),
            cert.second_eigenvalue(),
        ));
    }
    Ok(cert)
}

/// Which graph is active at each event index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Signal {
    /// `sequence[tau]` while `tau < sequence.len()`, then `default`.
    Explicit {
        sequence: Vec<usize>,
        default: usize,
    },
    /// `sequence[tau % sequence.len()]`.
    Periodic { sequence: Vec<usize> },
    /// Uniform draw over the graph set, reproducible from `seed`.
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSchedule {
    graphs: Vec<Digraph>,
    signal: Signal,
    /// Real-time event period; metadata only.
    pub period: f64,
}

impl GraphSchedule {
    pub fn new(graphs: Vec<Digraph>, signal: Signal) -> Result<Self> {
        let Some(first) = graphs.first() else {
            return Err(Error::invalid("schedule has no graphs"));
        };
        let m = first.m();
        for (k, g) in graphs.iter().enumerate() {
            if g.m() != m {
                return Err(Error::invalid(format!(
                    "graph {k} has {} vertices, expected {m}",
                    g.m()
                )));
            }
            if !g.has_all_self_loops() {
                return Err(Error::invalid(format!("graph {k} is missing self-loops")));
            }
            if !is_strongly_connected(g) {
                return Err(Error::invalid(format!(
                    "graph {k} is not strongly connected"
                )));
            }
        }
        let bad_index = |idx: &usize| *idx >= graphs.len();
        match &signal {
            Signal::Explicit { sequence, default } => {
                if sequence.iter().any(bad_index) || bad_index(default) {
                    return Err(Error::invalid("explicit signal references a missing graph"));
                }
            }
            Signal::Periodic { sequence } => {
                if sequence.is_empty() {
                    return Err(Error::invalid("periodic signal is empty"));
                }
                if sequence.iter().any(bad_index) {
                    return Err(Error::invalid("periodic signal references a missing graph"));
                }
            }
            Signal::Random { .. } => {}
        }
        Ok(GraphSchedule {
            graphs,
            signal,
            period: 1.0,
        })
    }

    pub fn constant(g: Digraph) -> Result<Self> {
        Self::new(vec![g], Signal::Periodic { sequence: vec![0] })
    }

    /// Cycles through the graphs in order.
    pub fn round_robin(graphs: Vec<Digraph>) -> Result<Self> {
        let sequence = (0..graphs.len()).collect();
        Self::new(graphs, Signal::Periodic { sequence })
    }

    pub fn seeded_random(graphs: Vec<Digraph>, seed: u64) -> Result<Self> {
        Self::new(graphs, Signal::Random { seed })
    }

    pub fn m(&self) -> usize {
        self.graphs[0].m()
    }

    /// The declared set of distinct graphs.
    pub fn graphs(&self) -> &[Digraph] {
        &self.graphs
    }

    pub fn signal(&self) -> &Signal {
        &self.signal
    }

    /// `true` when only one graph is ever active.
    pub fn is_constant(&self) -> bool {
        self.graphs.len() == 1
    }

    pub fn graph_index(&self, tau: u64) -> usize {
        match &self.signal {
            Signal::Explicit { sequence, default } => usize::try_from(tau)
                .ok()
                .and_then(|t| sequence.get(t).copied())
                .unwrap_or(*default),
            Signal::Periodic { sequence } => sequence[(tau % sequence.len() as u64) as usize],
            Signal::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(tau);
                rng.random_range(0..self.graphs.len())
            }
        }
    }

    pub fn graph_at(&self, tau: u64) -> &Digraph {
        &self.graphs[self.graph_index(tau)]
    }

    pub fn flocking_at(&self, tau: u64) -> FlockingMatrix {
        let mut f = flocking_matrix(self.graph_at(tau)).expect("schedule graphs have self-loops");
        f.tau = Some(tau);
        f
    }

    /// Flocking matrices of the declared graph set, in order.
    pub fn distinct_flocking(&self) -> Vec<FlockingMatrix> {
        self.graphs
            .iter()
            .map(|g| flocking_matrix(g).expect("schedule graphs have self-loops"))
            .collect()
    }
}

/// Random strongly connected digraph with self-loops: a random Hamiltonian
/// cycle plus each remaining arc with probability `density`.
pub fn random_strongly_connected<R: RngCore>(m: usize, density: f64, rng: &mut R) -> Digraph {
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let mut arcs: Vec<(usize, usize)> = (0..m).map(|k| (order[k], order[(k + 1) % m])).collect();
    for j in 0..m {
        for i in 0..m {
            if i != j && rng.random_bool(density.clamp(0.0, 1.0)) {
                arcs.push((j, i));
            }
        }
    }
    Digraph::new(m, arcs).expect("indices in range")
}

/// Text form of a schedule; arcs are `[from, to]` with labels `1..=m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDoc {
    pub m: usize,
    #[serde(default = "default_period")]
    pub period: f64,
    pub graphs: Vec<Vec<[usize; 2]>>,
    pub signal: Signal,
}

fn default_period() -> f64 {
    1.0
}

impl ScheduleDoc {
    pub fn from_schedule(schedule: &GraphSchedule) -> Self {
        ScheduleDoc {
            m: schedule.m(),
            period: schedule.period,
            graphs: schedule
                .graphs()
                .iter()
                .map(|g| {
                    g.arcs()
                        .filter(|(j, i)| j != i)
                        .map(|(j, i)| [j + 1, i + 1])
                        .collect()
                })
                .collect(),
            signal: schedule.signal().clone(),
        }
    }

    /// Self-loops are added on load.
    pub fn to_schedule(&self) -> Result<GraphSchedule> {
        let graphs = self
            .graphs
            .iter()
            .map(|arcs| {
                let mut zero_based = Vec::with_capacity(arcs.len());
                for &[j, i] in arcs {
                    if j == 0 || i == 0 {
                        return Err(Error::invalid("agent labels start at 1"));
                    }
                    zero_based.push((j - 1, i - 1));
                }
                Digraph::new(self.m, zero_based)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut schedule = GraphSchedule::new(graphs, self.signal.clone())?;
        schedule.period = self.period;
        Ok(schedule)
    }
}

/// Power iteration on the lazy chain `(I + S^T)/2`; an independent route to
/// the Perron vector.
pub fn perron_by_power_iteration(s: &FlockingMatrix, iters: usize) -> Vector {
    let m = s.m();
    let lazy = (Matrix::identity(m, m) + s.s.transpose()) * 0.5;
    let mut pi = Vector::from_element(m, 1.0 / m as f64);
    for _ in 0..iters {
        pi = &lazy * pi;
        let sum = pi.sum();
        pi /= sum;
    }
    pi
}

/// Dimension of `ker(S^T - I)`; one for irreducible stochastic matrices.
pub fn unit_eigenspace_dim(s: &FlockingMatrix, tol: f64) -> usize {
    let m = s.m();
    kernel_basis(&(s.s.transpose() - Matrix::identity(m, m)), tol)
        .map(|k| k.ncols())
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn strong_connectivity_examples() {
        assert!(is_strongly_connected(&Digraph::complete(3)));
        assert!(is_strongly_connected(&Digraph::cycle(3)));
        assert!(!is_strongly_connected(&Digraph::new(2, []).unwrap()));
        assert!(!is_strongly_connected(
            &Digraph::new(3, [(0, 1), (1, 2)]).unwrap()
        ));
    }

    #[test]
    fn flocking_matrix_examples() {
        let s = flocking_matrix(&Digraph::complete(2)).unwrap();
        assert_abs_diff_eq!(s.s, Matrix::from_element(2, 2, 0.5), epsilon = 0.0);

        let s = flocking_matrix(&Digraph::new(3, []).unwrap()).unwrap();
        assert_eq!(s.s, Matrix::identity(3, 3));

        let s = flocking_matrix(&Digraph::cycle(3)).unwrap();
        for i in 0..3 {
            let halves = s.s.row(i).iter().filter(|&&v| v == 0.5).count();
            assert_eq!(halves, 2);
            // vertex i hears i-1
            assert_eq!(s.s[(i, (i + 2) % 3)], 0.5);
        }
    }

    #[test]
    fn flocking_requires_self_loops() {
        let g = Digraph::from_arcs_exact(2, [(0, 1), (1, 0), (0, 0)]).unwrap();
        assert!(matches!(flocking_matrix(&g), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn flocking_graph_matches_source() {
        let g = Digraph::new(4, [(0, 1), (1, 2), (2, 3), (3, 0), (2, 0)]).unwrap();
        assert_eq!(flocking_matrix(&g).unwrap().neighbor_graph(), g);
    }

    #[test]
    fn neighbor_set_examples() {
        for set in neighbor_sets(&Digraph::complete(3)) {
            assert_eq!(set, BTreeSet::from([0, 1, 2]));
        }
        let sets = neighbor_sets(&Digraph::new(3, []).unwrap());
        assert_eq!(sets[2], BTreeSet::from([2]));
        let sets = neighbor_sets(&Digraph::new(2, [(0, 1)]).unwrap());
        assert_eq!(sets[0], BTreeSet::from([0]));
        assert_eq!(sets[1], BTreeSet::from([0, 1]));
    }

    #[test]
    fn perron_examples() {
        let s = flocking_matrix(&Digraph::complete(4)).unwrap();
        let pi = perron_vector(&s, 1e-12).unwrap();
        assert_abs_diff_eq!(pi, Vector::from_element(4, 0.25), epsilon = 1e-14);

        let s = flocking_matrix(&Digraph::complete(2)).unwrap();
        let pi = perron_vector(&s, 1e-12).unwrap();
        assert_abs_diff_eq!(pi, Vector::from_element(2, 0.5), epsilon = 1e-14);

        let g = Digraph::new(3, [(0, 1), (1, 2), (2, 0), (0, 2)]).unwrap();
        let s = flocking_matrix(&g).unwrap();
        let pi = perron_vector(&s, 1e-12).unwrap();
        assert!((s.s.transpose() * &pi - &pi).amax() <= 1e-12);
        assert_abs_diff_eq!(pi, perron_by_power_iteration(&s, 2000), epsilon = 1e-12);
    }

    #[test]
    fn laplacian_two_vertex_example() {
        let s = flocking_matrix(&Digraph::complete(2)).unwrap();
        let cert = laplacian_certificate(&s, 1e-9).unwrap();
        let expected = Matrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        assert_abs_diff_eq!(cert.laplacian, expected, epsilon = 1e-15);
        assert_eq!(cert.kernel_dim, 1);
        assert_abs_diff_eq!(cert.second_eigenvalue(), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn laplacian_rejects_disconnected() {
        let s = flocking_matrix(&Digraph::new(3, []).unwrap()).unwrap();
        assert!(matches!(
            laplacian_certificate(&s, 1e-9),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn schedule_rejects_disconnected_graph() {
        let bad = Digraph::new(3, [(0, 1), (1, 2)]).unwrap();
        assert!(GraphSchedule::round_robin(vec![Digraph::cycle(3), bad]).is_err());
    }

    #[test]
    fn schedule_signals() {
        let graphs = vec![Digraph::cycle(3), Digraph::complete(3)];
        let rr = GraphSchedule::round_robin(graphs.clone()).unwrap();
        assert_eq!(
            (0..5).map(|t| rr.graph_index(t)).collect::<Vec<_>>(),
            [0, 1, 0, 1, 0]
        );

        let ex = GraphSchedule::new(
            graphs.clone(),
            Signal::Explicit {
                sequence: vec![1, 1, 0],
                default: 1,
            },
        )
        .unwrap();
        assert_eq!(
            (0..5).map(|t| ex.graph_index(t)).collect::<Vec<_>>(),
            [1, 1, 0, 1, 1]
        );

        let r1 = GraphSchedule::seeded_random(graphs.clone(), 42).unwrap();
        let r2 = GraphSchedule::seeded_random(graphs, 42).unwrap();
        let seq: Vec<_> = (0..200).map(|t| r1.graph_index(t)).collect();
        assert_eq!(seq, (0..200).map(|t| r2.graph_index(t)).collect::<Vec<_>>());
        assert!(seq.contains(&0) && seq.contains(&1));
        assert_eq!(r1.flocking_at(7).tau, Some(7));
    }

    #[test]
    fn schedule_doc_roundtrip_adds_self_loops() {
        let doc = ScheduleDoc {
            m: 3,
            period: 0.5,
            graphs: vec![vec![[1, 2], [2, 3], [3, 1]]],
            signal: Signal::Periodic { sequence: vec![0] },
        };
        let schedule = doc.to_schedule().unwrap();
        assert_eq!(schedule.graphs()[0], Digraph::cycle(3));
        assert_eq!(ScheduleDoc::from_schedule(&schedule), doc);

        let zero = ScheduleDoc {
            graphs: vec![vec![[0, 1]]],
            ..doc
        };
        assert!(zero.to_schedule().is_err());
    }

    #[test]
    fn random_graphs_are_strongly_connected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for m in 1..8 {
            for _ in 0..20 {
                let g = random_strongly_connected(m, 0.2, &mut rng);
                assert!(is_strongly_connected(&g));
                assert!(g.has_all_self_loops());
            }
        }
    }
}
