use distobs::linalg::{
    block_diag, induced_inf_norm, induced_two_norm, kernel_basis, kron, mixed_matrix_norm, rank,
    spectral_radius, weighted_two_norm, BlockPartition, Matrix, RANK_TOL,
};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |v| Matrix::from_row_slice(rows, cols, &v))
}

fn partition() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=3, 1..=4)
}

fn partitioned_pair() -> impl Strategy<Value = (Vec<usize>, Matrix, Matrix)> {
    partition().prop_flat_map(|sizes| {
        let n: usize = sizes.iter().sum();
        (Just(sizes), matrix(n, n), matrix(n, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(160))]

    #[test]
    fn mixed_norm_is_submultiplicative((sizes, a, b) in partitioned_pair()) {
        let part = BlockPartition::square(sizes);
        let ab = mixed_matrix_norm(&(&a * &b), &part).unwrap();
        let bound = mixed_matrix_norm(&a, &part).unwrap() * mixed_matrix_norm(&b, &part).unwrap();
        prop_assert!(ab <= bound * (1.0 + 1e-12) + 1e-14, "{ab} > {bound}");
    }

    #[test]
    fn spectral_radius_is_below_every_norm((sizes, a, _b) in partitioned_pair()) {
        let rho = spectral_radius(&a);
        let part = BlockPartition::square(sizes);
        let slack = 1e-9 * (1.0 + rho);
        prop_assert!(rho <= induced_two_norm(&a) + slack);
        prop_assert!(rho <= induced_inf_norm(&a) + slack);
        prop_assert!(rho <= mixed_matrix_norm(&a, &part).unwrap() + slack);
    }

    #[test]
    fn identity_weight_gives_the_two_norm(a in matrix(4, 4)) {
        let w = weighted_two_norm(&a, &Matrix::identity(4, 4)).unwrap();
        prop_assert!((w - induced_two_norm(&a)).abs() <= 1e-12 * (1.0 + w));
    }

    #[test]
    fn weighted_norm_matches_similarity(a in matrix(3, 3), d in prop::collection::vec(0.2f64..5.0, 3)) {
        let r = Matrix::from_diagonal(&nalgebra::DVector::from_vec(d.clone()));
        let s = Matrix::from_diagonal(&nalgebra::DVector::from_vec(d.iter().map(|x| x.sqrt()).collect()));
        let s_inv = Matrix::from_diagonal(&nalgebra::DVector::from_vec(d.iter().map(|x| 1.0 / x.sqrt()).collect()));
        let expected = induced_two_norm(&(&s * &a * &s_inv));
        let w = weighted_two_norm(&a, &r).unwrap();
        prop_assert!((w - expected).abs() <= 1e-10 * (1.0 + expected));
    }

    #[test]
    fn kron_mixed_product(a in matrix(2, 3), b in matrix(2, 2), c in matrix(3, 2), d in matrix(2, 3)) {
        let lhs = kron(&a, &b) * kron(&c, &d);
        let rhs = kron(&(&a * &c), &(&b * &d));
        prop_assert!((lhs - rhs).amax() <= 1e-12);
    }

    #[test]
    fn kernel_basis_is_orthonormal_and_annihilated(rows in 1usize..5, cols in 1usize..6, seed in matrix(6, 6)) {
        // Rank-deficient by construction: the product of thin factors.
        let inner = rows.min(cols).saturating_sub(1).max(1);
        let left = seed.view((0, 0), (rows, inner)).into_owned();
        let right = seed.view((0, 0), (inner, cols)).into_owned();
        let m = &left * &right;
        let k = kernel_basis(&m, RANK_TOL).unwrap();
        prop_assert_eq!(k.ncols() + rank(&m, RANK_TOL), cols);
        if k.ncols() > 0 {
            prop_assert!((&m * &k).amax() <= 1e-9 * (1.0 + m.amax()));
            let gram = k.transpose() * &k;
            prop_assert!((gram - Matrix::identity(k.ncols(), k.ncols())).amax() <= 1e-10);
        }
    }

    #[test]
    fn block_diagonal_norms_take_the_worst_block(a in matrix(2, 2), b in matrix(3, 3)) {
        let d = block_diag(&[a.clone(), b.clone()]);
        let part = BlockPartition::square(vec![2, 3]);
        let expected = induced_two_norm(&a).max(induced_two_norm(&b));
        prop_assert!((mixed_matrix_norm(&d, &part).unwrap() - expected).abs() <= 1e-12 * (1.0 + expected));
        prop_assert!((induced_two_norm(&d) - expected).abs() <= 1e-12 * (1.0 + expected));
    }
}
