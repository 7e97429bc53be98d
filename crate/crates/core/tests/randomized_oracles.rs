//! Randomized cross-checks against brute-force or independent computations.

use distobs::generate::random_jointly_observable_plant;
use distobs::linalg::{Matrix, RANK_TOL};
use distobs::network::{
    flocking_matrix, is_strongly_connected, laplacian_certificate, perron_by_power_iteration,
    perron_vector, random_strongly_connected, unit_eigenspace_dim, Digraph,
};
use distobs::plant::{decompose_all, joint_observability, Plant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn transitive_closure(m: usize, g: &Digraph) -> Vec<Vec<bool>> {
    let mut reach = vec![vec![false; m]; m];
    for (j, i) in g.arcs() {
        reach[j][i] = true;
    }
    for k in 0..m {
        for a in 0..m {
            for b in 0..m {
                if reach[a][k] && reach[k][b] {
                    reach[a][b] = true;
                }
            }
        }
    }
    reach
}

#[test]
fn strong_connectivity_agrees_with_transitive_closure() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut connected = 0;
    for _ in 0..400 {
        let m = rng.random_range(1..=5);
        let arcs: Vec<(usize, usize)> = (0..m)
            .flat_map(|j| (0..m).map(move |i| (j, i)))
            .filter(|_| rng.random_bool(0.3))
            .collect();
        let g = Digraph::new(m, arcs).unwrap();
        let reach = transitive_closure(m, &g);
        let expected = (0..m).all(|a| (0..m).all(|b| a == b || reach[a][b]));
        connected += expected as usize;
        assert_eq!(is_strongly_connected(&g), expected);
    }
    assert!(
        connected > 20 && connected < 380,
        "unbalanced sample: {connected}"
    );
}

#[test]
fn perron_vector_matches_power_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..60 {
        let m = rng.random_range(2..=8);
        let g = random_strongly_connected(m, 0.25, &mut rng);
        let s = flocking_matrix(&g).unwrap();
        let pi = perron_vector(&s, 1e-9).unwrap();
        let reference = perron_by_power_iteration(&s, 20_000);
        assert!((&pi - &reference).amax() < 1e-8, "{pi} vs {reference}");
        assert!((pi.sum() - 1.0).abs() < 1e-12);
        assert!(pi.iter().all(|&v| v > 0.0));
        assert_eq!(unit_eigenspace_dim(&s, 1e-9), 1);
    }
}

#[test]
fn generalized_laplacian_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..120 {
        let m = rng.random_range(2..=8);
        let g = random_strongly_connected(m, rng.random_range(0.0..0.5), &mut rng);
        let cert = laplacian_certificate(&flocking_matrix(&g).unwrap(), 1e-9).unwrap();
        assert!(cert.min_eigenvalue() >= -1e-9);
        assert!(cert.ones_residual <= 1e-9);
        assert_eq!(cert.eigenvalues.iter().filter(|&&v| v < 1e-9).count(), 1);
        assert_eq!(cert.kernel_dim, 1);
    }
}

#[test]
fn disconnected_graph_has_a_larger_unit_eigenspace() {
    // Two disjoint cycles: each component carries its own stationary vector.
    let g = Digraph::new(4, [(0, 1), (1, 0), (2, 3), (3, 2)]).unwrap();
    let s = flocking_matrix(&g).unwrap();
    assert!(!is_strongly_connected(&g));
    assert_eq!(unit_eigenspace_dim(&s, 1e-9), 2);
    assert!(perron_vector(&s, 1e-9).is_err());
}

#[test]
fn decompositions_of_random_plants_are_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..40 {
        let n = rng.random_range(2..=6);
        let m = rng.random_range(2..=5);
        let plant = random_jointly_observable_plant(n, m, 1.05, &mut rng);
        for d in decompose_all(&plant, RANK_TOL).unwrap() {
            let eye = Matrix::identity(n, n);
            assert!(
                (&d.p * &d.p - &d.p).amax() < 1e-10,
                "projection is not idempotent"
            );
            assert!(((&eye - &d.p) - d.q.transpose() * &d.q).amax() < 1e-10);
            assert_eq!(d.unobservable_dim() + d.quotient_dim(), n);
            if d.unobservable_dim() > 0 {
                let av = plant.a() * &d.v;
                let leak = &av - &d.p * &av;
                assert!(leak.amax() < 1e-9, "unobservable space is not A-invariant");
                assert!((plant.sensor(d.agent) * &d.v).amax() < 1e-9);
            }
            assert!((&d.q * plant.a() * d.q.transpose() - &d.a_bar).amax() < 1e-10);
        }
    }
}

#[test]
fn removing_an_essential_sensor_breaks_joint_observability() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut flipped = 0;
    for _ in 0..30 {
        let plant = random_jointly_observable_plant(4, 3, 1.05, &mut rng);
        assert!(joint_observability(&plant, RANK_TOL).unwrap());
        for agent in 0..3 {
            let mut sensors = plant.sensors().to_vec();
            sensors[agent] = Matrix::zeros(1, 4);
            let blind = Plant::new(plant.a().clone(), sensors).unwrap();
            let others_suffice = joint_observability(&blind, RANK_TOL).unwrap();
            // Blinding an agent never helps, and whenever the remaining
            // agents miss a direction the stacked test must say so.
            let stacked_rank = distobs::linalg::rank(
                &distobs::plant::observability_matrix(&blind.stacked_output(), blind.a()),
                RANK_TOL,
            );
            assert_eq!(others_suffice, stacked_rank == 4);
            flipped += (!others_suffice) as usize;
        }
    }
    assert!(flipped > 0, "no sensor was ever essential");
}
