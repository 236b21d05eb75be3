use prism_core::selftest::{oracle, random_matrix};
use prism_core::{
    center_columns, principal_scores, reshape_to_observations, svd, ObservationMatrix, Shape4,
    Tensor4,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn max_orthonormality_error(get: impl Fn(usize, usize) -> f64, len: usize, k: usize) -> f64 {
    let mut worst = 0.0f64;
    for a in 0..k {
        for b in 0..k {
            let d: f64 = (0..len).map(|i| get(i, a) * get(i, b)).sum();
            let want = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((d - want).abs());
        }
    }
    worst
}

#[test]
fn random_8x5_matches_gram_eigenvalues() {
    let mut rng = ChaCha8Rng::seed_from_u64(85);
    let a = random_matrix(&mut rng, 8, 5);
    let eig = oracle::symmetric_eigenvalues(&oracle::gram(a.data(), 8, 5), 5);
    let got = svd(&a).unwrap();
    for (s, e) in got.singular_values().iter().zip(&eig) {
        assert!((s * s - e).abs() <= 1e-9 * e.max(1.0), "{} vs {e}", s * s);
    }
    let rebuilt = got.reconstruct();
    for (x, y) in rebuilt.iter().zip(a.data()) {
        assert!((x - *y as f64).abs() < 1e-12);
    }
    assert!(max_orthonormality_error(|i, k| got.u(i, k), 8, 5) < 1e-12);
    assert!(max_orthonormality_error(|i, k| got.v(i, k), 5, 5) < 1e-12);
}

#[test]
fn tall_and_wide_paths_agree_on_the_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(86);
    let a = random_matrix(&mut rng, 40, 6);
    let mut t = vec![0.0f32; 240];
    for i in 0..40 {
        for j in 0..6 {
            t[j * 40 + i] = a.get(i, j);
        }
    }
    let at = ObservationMatrix::from_rows(6, 40, t).unwrap();
    let (x, y) = (svd(&a).unwrap(), svd(&at).unwrap());
    for (p, q) in x.singular_values().iter().zip(y.singular_values()) {
        assert!((p - q).abs() < 1e-12 * p.max(1.0));
    }
}

#[test]
fn random_12x6_scores_are_projections() {
    let mut rng = ChaCha8Rng::seed_from_u64(126);
    let (a, _) = center_columns(&random_matrix(&mut rng, 12, 6));
    let decomposition = svd(&a).unwrap();
    let scores = principal_scores(&a, 3).unwrap();
    // from_rows folds the 12 rows into a (12, ·, 1, 1) layout.
    for row in 0..12 {
        for k in 0..3 {
            let projection: f64 = (0..6)
                .map(|j| a.get(row, j) as f64 * decomposition.v(j, k))
                .sum();
            let got = scores.scores.get(row, k, 0, 0) as f64;
            assert!(
                (got - projection).abs() < 1e-5,
                "row {row} k {k}: {got} vs {projection}"
            );
        }
    }
}

#[test]
fn rank_one_batch_has_one_nonzero_component() {
    // Every observation lies on the same line through the mean.
    let t = Tensor4::from_fn(Shape4::new(2, 4, 3, 3), |b, c, y, x| {
        let t = (b * 9 + y * 3 + x) as f32;
        t * [1.0, -2.0, 0.5, 3.0][c]
    })
    .unwrap();
    let (centered, _) = center_columns(&reshape_to_observations(&t));
    let scores = principal_scores(&centered, 3).unwrap();
    assert!(scores.singular_values[0] > 1.0);
    assert!(scores.singular_values[1..].iter().all(|&s| s == 0.0));
    for b in 0..2 {
        assert!(scores.scores.plane(b, 1).iter().all(|&v| v == 0.0));
        assert!(scores.scores.plane(b, 2).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn duplicate_rows_give_bit_identical_scores_on_the_tall_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let base = random_matrix(&mut rng, 30, 5);
    let mut data = base.data().to_vec();
    // Row 0 duplicated at 17 and 29.
    let first = base.row(0).to_vec();
    data[17 * 5..18 * 5].copy_from_slice(&first);
    data[29 * 5..30 * 5].copy_from_slice(&first);
    let (a, _) = center_columns(&ObservationMatrix::from_rows(30, 5, data).unwrap());
    let scores = principal_scores(&a, 3).unwrap().scores;
    for k in 0..3 {
        assert_eq!(
            scores.get(0, k, 0, 0).to_bits(),
            scores.get(17, k, 0, 0).to_bits()
        );
        assert_eq!(
            scores.get(0, k, 0, 0).to_bits(),
            scores.get(29, k, 0, 0).to_bits()
        );
    }
}

fn matrix_strategy() -> impl Strategy<Value = (usize, usize, Vec<f32>)> {
    (1usize..14, 1usize..9).prop_flat_map(|(r, c)| {
        (
            Just(r),
            Just(c),
            prop::collection::vec(-10.0f32..10.0, r * c),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn singular_values_are_sorted_and_orthonormal((r, c, data) in matrix_strategy()) {
        let a = ObservationMatrix::from_rows(r, c, data).unwrap();
        let d = svd(&a).unwrap();
        let s = d.singular_values();
        prop_assert!(s.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(s.iter().all(|&x| x >= 0.0));
        prop_assert!(max_orthonormality_error(|i, k| d.u(i, k), r, d.rank()) < 1e-8);
        prop_assert!(max_orthonormality_error(|i, k| d.v(i, k), c, d.rank()) < 1e-8);
        let norm = a.data().iter().fold(0.0f64, |m, x| m.max(x.abs() as f64));
        for (x, y) in d.reconstruct().iter().zip(a.data()) {
            prop_assert!((x - *y as f64).abs() <= 1e-4 * norm.max(1.0));
        }
    }

    #[test]
    fn v_columns_follow_the_sign_convention((r, c, data) in matrix_strategy()) {
        let a = ObservationMatrix::from_rows(r, c, data).unwrap();
        let d = svd(&a).unwrap();
        for k in 0..d.rank() {
            let col: Vec<f64> = (0..c).map(|i| d.v(i, k)).collect();
            let largest = col.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let pivot = col.iter().position(|x| x.abs() >= largest * (1.0 - 1e-12)).unwrap();
            prop_assert!(col[pivot] >= 0.0);
        }
    }

    #[test]
    fn scores_scale_with_the_data((r, c, data) in matrix_strategy(), factor in 0.1f32..20.0) {
        let a = ObservationMatrix::from_rows(r, c, data.clone()).unwrap();
        let scaled = ObservationMatrix::from_rows(r, c, data.iter().map(|x| x * factor).collect()).unwrap();
        let (a, _) = center_columns(&a);
        let (scaled, _) = center_columns(&scaled);
        let s1 = principal_scores(&a, 3).unwrap();
        let s2 = principal_scores(&scaled, 3).unwrap();
        let top = s1.singular_values.first().copied().unwrap_or(0.0);
        for (k, (x, y)) in s1.singular_values.iter().zip(&s2.singular_values).enumerate() {
            prop_assert!((x * factor as f64 - y).abs() <= 1e-4 * (top * factor as f64).max(1.0), "k {}", k);
        }
        // Only well-separated components have a stable direction.
        let sv = &s1.singular_values;
        for k in 0..sv.len().min(3) {
            let gap = |j: usize| sv.get(j).map_or(f64::INFINITY, |&o| (sv[k] - o).abs());
            let separated = sv[k] > 1e-2 * top && gap(k + 1) > 1e-2 * top && (k == 0 || gap(k - 1) > 1e-2 * top);
            if !separated {
                continue;
            }
            for (x, y) in s1.scores.plane(0, k).iter().zip(s2.scores.plane(0, k)) {
                prop_assert!((x * factor - y).abs() <= 1e-3 * (top * factor as f64) as f32);
            }
        }
    }

    #[test]
    fn row_permutation_permutes_scores((r, c, data) in matrix_strategy(), seed in any::<u64>()) {
        let mut order: Vec<usize> = (0..r).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..r).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let permuted: Vec<f32> = order.iter().flat_map(|&i| data[i * c..(i + 1) * c].to_vec()).collect();
        let (a, _) = center_columns(&ObservationMatrix::from_rows(r, c, data).unwrap());
        let (b, _) = center_columns(&ObservationMatrix::from_rows(r, c, permuted).unwrap());
        let sa = principal_scores(&a, 3).unwrap();
        let sb = principal_scores(&b, 3).unwrap();
        let top = sa.singular_values.first().copied().unwrap_or(0.0);
        for (x, y) in sa.singular_values.iter().zip(&sb.singular_values) {
            prop_assert!((x - y).abs() <= 1e-4 * top.max(1.0));
        }
        // Variance captured by the leading k components is basis-independent.
        for k in 1..=3usize.min(sa.singular_values.len()) {
            let energy = |s: &prism_core::ScoreMaps| -> f64 {
                (0..r).map(|i| (0..k).map(|j| (s.scores.get(i, j, 0, 0) as f64).powi(2)).sum::<f64>()).sum()
            };
            let (ea, eb) = (energy(&sa), energy(&sb));
            prop_assert!((ea - eb).abs() <= 1e-3 * top.powi(2).max(1.0));
        }
        let _ = order;
    }

    #[test]
    fn first_component_captures_the_most_variance((r, c, data) in matrix_strategy()) {
        let (a, _) = center_columns(&ObservationMatrix::from_rows(r, c, data).unwrap());
        let s = principal_scores(&a, 3).unwrap();
        let variance = |k: usize| -> f64 { (0..r).map(|i| (s.scores.get(i, k, 0, 0) as f64).powi(2)).sum() };
        let top = s.singular_values.first().copied().unwrap_or(0.0).powi(2);
        prop_assert!(variance(0) + 1e-4 * top.max(1.0) >= variance(1));
        prop_assert!(variance(1) + 1e-4 * top.max(1.0) >= variance(2));
    }
}
