//! Seeded random plants and schedules for testing and batch verification.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{block_diag, Matrix};
use crate::network::{random_strongly_connected, GraphSchedule};
use crate::plant::Plant;

/// Random orthogonal matrix from the QR factor of a uniform random matrix.
pub fn random_orthogonal<R: RngCore>(n: usize, rng: &mut R) -> Matrix {
    let g = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    g.qr().q()
}

/// Jointly observable plant whose agents each see only part of the state.
///
/// The state splits into real modes and rotating pairs (in a random
/// orthonormal frame) with moduli in `[0.5, max_modulus]`. Each mode is seen
/// by at least one agent; agents see additional modes at random, through one
/// output row each.
pub fn random_jointly_observable_plant<R: RngCore>(
    n: usize,
    m: usize,
    max_modulus: f64,
    rng: &mut R,
) -> Plant {
    assert!(n >= 1 && m >= 2);
    let mut sizes = Vec::new();
    let mut left = n;
    while left > 0 {
        let size = if left >= 2 && rng.random_bool(0.4) {
            2
        } else {
            1
        };
        sizes.push(size);
        left -= size;
    }
    let blocks: Vec<Matrix> = sizes
        .iter()
        .map(|&size| {
            let r = rng.random_range(0.5..max_modulus);
            if size == 1 {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                Matrix::from_element(1, 1, sign * r)
            } else {
                let th: f64 = rng.random_range(0.3..2.8);
                Matrix::from_row_slice(
                    2,
                    2,
                    &[r * th.cos(), -r * th.sin(), r * th.sin(), r * th.cos()],
                )
            }
        })
        .collect();
    let frame = random_orthogonal(n, rng);
    let a = &frame * block_diag(&blocks) * frame.transpose();

    let k = sizes.len();
    let mut sees = vec![vec![false; k]; m];
    for b in 0..k {
        sees[rng.random_range(0..m)][b] = true;
    }
    for row in sees.iter_mut() {
        for s in row.iter_mut() {
            if rng.random_bool(0.3) {
                *s = true;
            }
        }
    }

    let offsets: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, &s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect();
    let sensors = sees
        .iter()
        .map(|row| {
            let mut c = Matrix::zeros(1, n);
            for (b, &seen) in row.iter().enumerate() {
                if seen {
                    for d in 0..sizes[b] {
                        let mag = rng.random_range(0.5..1.5);
                        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                        c[(0, offsets[b] + d)] = sign * mag;
                    }
                }
            }
            c * frame.transpose()
        })
        .collect();
    Plant::new(a, sensors).expect("generated plant is well formed")
}

/// `count` random strongly connected graphs switched by a seeded random
/// signal.
pub fn random_switching_schedule<R: RngCore>(m: usize, count: usize, rng: &mut R) -> GraphSchedule {
    let graphs = (0..count)
        .map(|_| random_strongly_connected(m, 0.2, rng))
        .collect();
    GraphSchedule::seeded_random(graphs, rng.next_u64()).expect("generated graphs are valid")
}

/// One randomized test case.
#[derive(Debug, Clone)]
pub struct RandomCase {
    pub seed: u64,
    pub plant: Plant,
    pub schedule: GraphSchedule,
    pub lambda: f64,
}

/// The first twenty indices cover every `(m, n)` with `m in 2..=5` and
/// `n in 2..=6`; lambda cycles through
/// `{0.6, 0.8, 0.95}`. Everything else is drawn from `seed`.
pub fn random_case(index: usize, seed: u64) -> RandomCase {
    const LAMBDAS: [f64; 3] = [0.6, 0.8, 0.95];
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let m = 2 + index % 4;
    let n = 2 + (index / 4) % 5;
    let lambda = LAMBDAS[index % 3];
    let plant = random_jointly_observable_plant(n, m, 1.05, &mut rng);
    let schedule = random_switching_schedule(m, 3, &mut rng);
    RandomCase {
        seed,
        plant,
        schedule,
        lambda,
    }
}
