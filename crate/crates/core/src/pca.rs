//! Thin SVD of an observation matrix and the leading principal-score maps.
//!
//! The decomposition uses one-sided (Hestenes) Jacobi rotations in `f64`:
//! column pairs of the working matrix are rotated until all pairs are
//! numerically orthogonal, at which point the column norms are the singular
//! values and the accumulated rotations form `V`. Tall matrices are first
//! reduced to their triangular QR factor, so a sweep costs `O(cols³)` rather
//! than `O(rows·cols²)`. `U` is then recovered as `A·V·S⁻¹`. The sweep order
//! is fixed, so identical input bytes always produce identical factors.
//!
//! Singular vectors are only defined up to sign. Every returned column of `V`
//! has its largest-magnitude entry non-negative (lowest row wins ties), and
//! the matching column of `U` is flipped with it.

use crate::error::{PrismError, Result};
use crate::tensor::{ObservationMatrix, Shape4, Tensor4};

/// Number of principal components rendered as red, green and blue.
pub const RGB_COMPONENTS: usize = 3;

/// Thin SVD `A = U·diag(S)·Vᵀ` with `r = min(rows, cols)` retained columns.
#[derive(Debug, Clone)]
pub struct SvdResult {
    rows: usize,
    cols: usize,
    rank: usize,
    /// `rows × rank`, row-major.
    u: Vec<f64>,
    s: Vec<f64>,
    /// `cols × rank`, row-major.
    v: Vec<f64>,
}

impl SvdResult {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of retained singular triplets, `min(rows, cols)`.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.s
    }

    pub fn u(&self, row: usize, k: usize) -> f64 {
        self.u[row * self.rank + k]
    }

    pub fn v(&self, row: usize, k: usize) -> f64 {
        self.v[row * self.rank + k]
    }

    /// `U·diag(S)·Vᵀ`, row-major `rows × cols`.
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[i * self.cols + j] = (0..self.rank)
                    .map(|k| self.u(i, k) * self.s[k] * self.v(j, k))
                    .sum();
            }
        }
        out
    }
}

/// Default sweep budget: `100 · min(rows, cols)`.
pub fn default_sweep_budget(rows: usize, cols: usize) -> usize {
    100 * rows.min(cols).max(1)
}

pub fn svd(m: &ObservationMatrix) -> Result<SvdResult> {
    svd_with_budget(m, default_sweep_budget(m.rows(), m.cols()))
}

pub fn svd_with_budget(m: &ObservationMatrix, max_sweeps: usize) -> Result<SvdResult> {
    let (rows, cols) = (m.rows(), m.cols());

    // Column-major working copy; column j lives at work[j*rows..(j+1)*rows].
    let mut work = vec![0.0f64; rows * cols];
    for i in 0..rows {
        for (j, &x) in m.row(i).iter().enumerate() {
            work[j * rows + i] = x as f64;
        }
    }
    // Tall input: rotate the triangular factor of A = QR instead, which has
    // the same singular values and right singular vectors at a fraction of
    // the cost per sweep.
    let (work, height) = if rows > cols {
        (triangular_factor(work, rows, cols), cols)
    } else {
        (work, rows)
    };
    let (norms, vmat) = jacobi_rotations(work, height, cols, max_sweeps)?;

    let mut order: Vec<usize> = (0..cols).collect();
    // Stable: equal norms keep column order.
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));

    let rank = rows.min(cols);
    let largest = norms[order[0]];
    // Singular values at or below the single-precision noise floor are
    // treated as exact zeros, as in a float32 matrix-rank test.
    let zero_tol = largest * f32::EPSILON as f64 * rows.max(cols) as f64;

    let mut u = vec![0.0f64; rows * rank];
    let mut s = vec![0.0f64; rank];
    let mut v = vec![0.0f64; cols * rank];
    let mut completed = Vec::new();
    for (k, &j) in order.iter().take(rank).enumerate() {
        let vcol = &vmat[j * cols..(j + 1) * cols];
        let sign = if vcol[sign_pivot(vcol)] < 0.0 {
            -1.0
        } else {
            1.0
        };
        for (i, &x) in vcol.iter().enumerate() {
            v[i * rank + k] = sign * x;
        }
        let sigma = norms[j];
        if sigma > zero_tol && sigma > 0.0 {
            s[k] = sigma;
            // U = A·V·S⁻¹ row by row, so equal rows of A get equal rows of U.
            for i in 0..rows {
                let projection: f64 = m.row(i).iter().zip(vcol).map(|(&a, &b)| a as f64 * b).sum();
                u[i * rank + k] = sign * projection / sigma;
            }
        } else {
            completed.push(k);
        }
    }
    complete_orthonormal_columns(&mut u, rows, rank, &completed);

    Ok(SvdResult {
        rows,
        cols,
        rank,
        u,
        s,
        v,
    })
}

/// Householder reduction of a column-major `rows × cols` matrix with
/// `rows > cols`; returns the `cols × cols` upper-triangular `R`, column-major.
fn triangular_factor(mut a: Vec<f64>, rows: usize, cols: usize) -> Vec<f64> {
    for k in 0..cols {
        let x = &a[k * rows + k..(k + 1) * rows];
        let norm_sq = dot(x, x);
        if norm_sq == 0.0 {
            continue;
        }
        let x0 = x[0];
        let alpha = -x0.signum() * norm_sq.sqrt();
        let mut reflector = x.to_vec();
        reflector[0] -= alpha;
        let reflector_sq = norm_sq - x0 * x0 + reflector[0] * reflector[0];
        for j in k..cols {
            let col = &mut a[j * rows + k..(j + 1) * rows];
            let f = 2.0 * dot(&reflector, col) / reflector_sq;
            for (c, &r) in col.iter_mut().zip(&reflector) {
                *c -= f * r;
            }
        }
    }
    let mut r = vec![0.0f64; cols * cols];
    for j in 0..cols {
        for i in 0..=j {
            r[j * cols + i] = a[j * rows + i];
        }
    }
    r
}

/// One-sided Jacobi on a column-major `rows × cols` matrix. Returns the final
/// column norms and the accumulated rotations (`cols × cols`, column-major).
fn jacobi_rotations(
    mut work: Vec<f64>,
    rows: usize,
    cols: usize,
    max_sweeps: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut vmat = vec![0.0f64; cols * cols];
    for j in 0..cols {
        vmat[j * cols + j] = 1.0;
    }

    let tol = f64::EPSILON * rows as f64;
    // Columns that have been rotated down to rounding noise (rank-deficient
    // or wide input) are left alone; their pair tests never settle.
    let frobenius_sq: f64 = work.iter().map(|x| x * x).sum();
    let negligible = (f64::EPSILON * rows.max(cols) as f64).powi(2) * frobenius_sq;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let (cp, cq) = column_pair(&mut work, rows, p, q);
                let alpha = dot(cp, cp);
                let beta = dot(cq, cq);
                let gamma = dot(cp, cq);
                if alpha <= negligible
                    || beta <= negligible
                    || gamma.abs() <= tol * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(cp, cq, c, s);
                let (vp, vq) = column_pair(&mut vmat, cols, p, q);
                rotate(vp, vq, c, s);
            }
        }
        if !rotated {
            let norms = work.chunks_exact(rows).map(|c| dot(c, c).sqrt()).collect();
            return Ok((norms, vmat));
        }
    }
    Err(PrismError::NonConvergence { sweeps: max_sweeps })
}

/// Magnitudes this close to the column maximum count as tied with it.
const TIE_RELATIVE: f64 = 1e-12;

/// Index of the entry that fixes a singular vector's sign: the
/// largest-magnitude entry, with rounding-level ties going to the lowest index.
fn sign_pivot(column: &[f64]) -> usize {
    let largest = column.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    column
        .iter()
        .position(|x| x.abs() >= largest * (1.0 - TIE_RELATIVE))
        .unwrap_or(0)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn column_pair(buf: &mut [f64], len: usize, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(p < q);
    let (head, tail) = buf.split_at_mut(q * len);
    (&mut head[p * len..(p + 1) * len], &mut tail[..len])
}

fn rotate(a: &mut [f64], b: &mut [f64], c: f64, s: f64) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xa, yb) = (*x, *y);
        *x = c * xa - s * yb;
        *y = s * xa + c * yb;
    }
}

/// Fills the listed columns of `u` (row-major `rows × rank`) with unit
/// vectors orthogonal to every other column, drawn from the standard basis
/// in index order.
///
/// The squared residuals of all basis vectors against the filled columns sum
/// to the dimension still free, which is at least one, so some candidate
/// always keeps a residual of at least `1/√rows`. Candidates rejected once
/// only shrink as more columns are filled and are not revisited.
fn complete_orthonormal_columns(u: &mut [f64], rows: usize, rank: usize, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let mut filled: Vec<usize> = (0..rank).filter(|k| !missing.contains(k)).collect();
    let accept = 0.5 / (rows as f64).sqrt();
    let mut candidate = 0;
    for &k in missing {
        loop {
            assert!(
                candidate < rows,
                "standard basis exhausted while completing U"
            );
            let mut vec = vec![0.0f64; rows];
            vec[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for &f in &filled {
                    let proj: f64 = (0..rows).map(|i| vec[i] * u[i * rank + f]).sum();
                    for (i, x) in vec.iter_mut().enumerate() {
                        *x -= proj * u[i * rank + f];
                    }
                }
            }
            let norm = dot(&vec, &vec).sqrt();
            if norm >= accept {
                for (i, x) in vec.iter().enumerate() {
                    u[i * rank + k] = x / norm;
                }
                filled.push(k);
                break;
            }
        }
    }
}

/// Leading principal-score channels folded back into image layout.
#[derive(Debug, Clone)]
pub struct ScoreMaps {
    /// `(n, k, h, w)`; channels past the matrix rank are zero.
    pub scores: Tensor4,
    /// All `min(v, c)` singular values, non-increasing.
    pub singular_values: Vec<f64>,
}

/// Projects centered observations onto their `k` leading principal axes.
///
/// Column `j` of the score matrix is `U[:, j]·S[j]`; components beyond the
/// rank of the matrix are zero-filled so the result always has `k` channels.
pub fn principal_scores(centered: &ObservationMatrix, k: usize) -> Result<ScoreMaps> {
    if k == 0 {
        return Err(PrismError::ShapeMismatch(
            "at least one principal component is required".into(),
        ));
    }
    let decomposition = svd(centered)?;
    let origin = centered.origin();
    let plane = origin.h * origin.w;
    let shape = Shape4::new(origin.n, k, origin.h, origin.w);
    let kept = k.min(decomposition.rank());
    let mut data = vec![0.0f32; shape.len()];
    for row in 0..centered.rows() {
        let (b, p) = (row / plane, row % plane);
        for j in 0..kept {
            data[(b * k + j) * plane + p] =
                (decomposition.u(row, j) * decomposition.singular_values()[j]) as f32;
        }
    }
    Ok(ScoreMaps {
        scores: Tensor4::new(shape, data)?,
        singular_values: decomposition.s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{center_columns, reshape_to_observations, Origin};

    #[test]
    fn diagonal_matrix_is_its_own_svd() {
        let m = ObservationMatrix::from_rows(2, 2, vec![3.0, 0.0, 0.0, 2.0]).unwrap();
        let d = svd(&m).unwrap();
        assert_eq!(d.singular_values(), &[3.0, 2.0]);
        for i in 0..2 {
            for k in 0..2 {
                let expected = if i == k { 1.0 } else { 0.0 };
                assert_eq!(d.u(i, k), expected);
                assert_eq!(d.v(i, k), expected);
            }
        }
    }

    #[test]
    fn diagonal_is_reordered_by_magnitude() {
        let m = ObservationMatrix::from_rows(2, 2, vec![-1.0, 0.0, 0.0, 4.0]).unwrap();
        let d = svd(&m).unwrap();
        assert_eq!(d.singular_values(), &[4.0, 1.0]);
        // v columns are +e1 then +e0; u absorbs the sign of -1.
        assert_eq!(d.v(1, 0), 1.0);
        assert_eq!(d.v(0, 1), 1.0);
        assert_eq!(d.u(0, 1), -1.0);
    }

    #[test]
    fn zero_matrix_has_zero_spectrum_and_orthonormal_u() {
        let m = ObservationMatrix::from_rows(4, 3, vec![0.0; 12]).unwrap();
        let d = svd(&m).unwrap();
        assert_eq!(d.singular_values(), &[0.0, 0.0, 0.0]);
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..4).map(|i| d.u(i, a) * d.u(i, b)).sum();
                assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wide_matrix_keeps_min_dimension() {
        let m = ObservationMatrix::from_rows(2, 4, vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 2.0, 0.0])
            .unwrap();
        let d = svd(&m).unwrap();
        assert_eq!(d.rank(), 2);
        let rec = d.reconstruct();
        for (a, b) in rec.iter().zip(m.data()) {
            assert!((a - *b as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn completion_handles_spread_out_complements() {
        // After centering, the free directions of U are spread over all
        // rows, so no single basis vector keeps half its length.
        let mut raw = vec![0.0f32; 40];
        for (i, x) in [
            (15, 7.655119f32),
            (22, -2.0665832),
            (29, -8.916241),
            (36, -2.8148625),
        ] {
            raw[i] = x;
        }
        let (centered, _) =
            crate::tensor::center_columns(&ObservationMatrix::from_rows(5, 8, raw).unwrap());
        let data = centered.data().to_vec();
        let a = ObservationMatrix::from_rows(5, 8, data).unwrap();
        let d = svd(&a).unwrap();
        assert_eq!(d.rank(), 5);
        for p in 0..5 {
            for q in 0..5 {
                let dot: f64 = (0..5).map(|i| d.u(i, p) * d.u(i, q)).sum();
                assert!((dot - if p == q { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sign_pivot_prefers_lowest_index_on_ties() {
        assert_eq!(sign_pivot(&[0.5, -0.5000000000000001, 0.1]), 0);
        assert_eq!(sign_pivot(&[0.1, -0.7, 0.5]), 1);
        assert_eq!(sign_pivot(&[0.0, 0.0]), 0);
    }

    #[test]
    fn exhausted_budget_reports_non_convergence() {
        let m = ObservationMatrix::from_rows(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 7.0]).unwrap();
        assert!(matches!(
            svd_with_budget(&m, 0),
            Err(PrismError::NonConvergence { sweeps: 0 })
        ));
    }

    #[test]
    fn scores_of_a_single_axis_dataset() {
        let m = ObservationMatrix::new(
            3,
            2,
            vec![1.0, 0.0, -1.0, 0.0, 0.0, 0.0],
            Origin { n: 3, h: 1, w: 1 },
        )
        .unwrap();
        let maps = principal_scores(&m, 3).unwrap();
        let s = &maps.scores;
        assert_eq!(s.shape(), Shape4::new(3, 3, 1, 1));
        let first: Vec<f32> = (0..3).map(|b| s.get(b, 0, 0, 0)).collect();
        for (got, want) in first.iter().zip([1.0f32, -1.0, 0.0]) {
            assert!((got - want).abs() < 1e-6, "{first:?}");
        }
        for b in 0..3 {
            assert_eq!(s.get(b, 1, 0, 0), 0.0);
            assert_eq!(s.get(b, 2, 0, 0), 0.0);
        }
        assert!((maps.singular_values[0] - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(maps.singular_values[1], 0.0);
    }

    #[test]
    fn constant_batch_gives_zero_scores() {
        let t = Tensor4::filled(Shape4::new(2, 4, 3, 3), 0.7);
        let (centered, _) = center_columns(&reshape_to_observations(&t));
        let maps = principal_scores(&centered, 3).unwrap();
        assert!(maps.scores.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_rows_get_identical_scores() {
        let data = vec![
            0.3, -1.2, 2.0, 0.1, //
            1.5, 0.4, -0.7, 0.9, //
            0.3, -1.2, 2.0, 0.1, //
            -0.8, 2.2, 0.6, -1.4, //
            0.0, 0.5, 0.5, 1.0,
        ];
        let m = ObservationMatrix::from_rows(5, 4, data).unwrap();
        let (centered, _) = center_columns(&m);
        let maps = principal_scores(&centered, 3).unwrap();
        assert_eq!(maps.scores.image(0), maps.scores.image(2));
    }
}
