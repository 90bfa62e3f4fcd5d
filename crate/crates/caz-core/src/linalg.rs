//! Internal dense linear algebra helpers.
//!
//! The crate needs exactly three nontrivial kernels: the dominant eigenpair
//! of a covariance matrix (power iteration over Gram-matrix products, so the
//! d-by-d covariance is never materialized), a singular value decomposition
//! of small square matrices (one-sided Jacobi), and assorted vector
//! arithmetic. They are written out here rather than pulled from a solver
//! crate so the numeric surface stays small and auditable; the test suites
//! check them against an independent cyclic-Jacobi eigendecomposition.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::rng::SplitMix64;

/// Column means of a row-sample matrix.
pub(crate) fn column_means(rows: &ArrayView2<f64>) -> Array1<f64> {
    let n = rows.nrows().max(1) as f64;
    let mut m = Array1::zeros(rows.ncols());
    for row in rows.rows() {
        m += &row;
    }
    m / n
}

/// Rows minus their column means.
pub(crate) fn center_rows(rows: &ArrayView2<f64>) -> Array2<f64> {
    let means = column_means(rows);
    let mut out = rows.to_owned();
    for mut row in out.rows_mut() {
        row -= &means;
    }
    out
}

/// Sum of squared entries divided by `divisor`: the covariance trace when
/// `x` is centered and `divisor` is the row count.
pub(crate) fn scatter_trace(x: &ArrayView2<f64>, divisor: f64) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / divisor
}

/// Dominant eigenvalue and unit eigenvector of `C = XᵀX / divisor` for a
/// pre-centered sample matrix `x`, by power iteration on the matrix-vector
/// product `Xᵀ(Xv)/divisor`.
///
/// The start vector is a fixed pseudo-random direction, so results are
/// deterministic. Iteration stops on the Rayleigh-quotient residual
/// `‖Cv − λv‖ = sqrt(‖Cv‖² − λ²) ≤ 1e-12·λ`, which certifies the
/// eigenvalue to that precision, or after 10 000 steps. The cap matters
/// only for near-degenerate top pairs, where the eigenvalue estimate is
/// accurate long before the eigenvector settles: the value error is
/// bounded by the (tiny) gap itself.
pub(crate) fn top_eigenpair(x: &ArrayView2<f64>, divisor: f64) -> (f64, Array1<f64>) {
    let d = x.ncols();
    let mut rng = SplitMix64::new(0x5EED_BA5E ^ d as u64);
    let mut v = Array1::from_shape_fn(d, |_| rng.next_f64() - 0.5);
    let n = norm(&v.view());
    if n > 0.0 {
        v /= n;
    } else {
        v[0] = 1.0;
    }

    // For tall sample matrices the d×d Gram matrix makes each step one
    // short product instead of two length-n ones; for very wide inputs
    // (d > 2n) the two-pass form stays cheaper.
    let gram = if d <= 2 * x.nrows() {
        Some(x.t().dot(x))
    } else {
        None
    };

    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let mut w = match &gram {
            Some(g) => g.dot(&v),
            None => x.dot(&v).dot(x),
        };
        w /= divisor;
        lambda = v.dot(&w);
        let wn = norm(&w.view());
        if wn <= f64::MIN_POSITIVE {
            // Zero matrix within floating precision: eigenvalue 0.
            return (0.0, v);
        }
        let residual = (wn * wn - lambda * lambda).max(0.0).sqrt();
        w /= wn;
        v = w;
        if residual <= 1e-12 * lambda.abs() {
            break;
        }
    }
    (lambda, v)
}

/// Euclidean norm.
pub(crate) fn norm(v: &ArrayView1<f64>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Dot product clamped into `[-1, 1]`, for cosines of unit vectors.
pub(crate) fn unit_cosine(a: &ArrayView1<f64>, b: &ArrayView1<f64>) -> f64 {
    a.dot(b).clamp(-1.0, 1.0)
}

/// Singular value decomposition of a square matrix: `m = u * diag(sigma) * vᵀ`
/// with `sigma` descending and `u`, `v` orthogonal.
pub(crate) struct Svd {
    pub u: Array2<f64>,
    pub sigma: Vec<f64>,
    pub v: Array2<f64>,
}

/// One-sided Jacobi SVD for small square matrices (activation dimension,
/// typically well under 1024).
///
/// Right rotations orthogonalize column pairs until every pair's inner
/// product is below 1e-15 of its column-norm scale; singular vectors for
/// numerically zero singular values are completed to an orthonormal basis by
/// Gram-Schmidt against the coordinate axes, so `u` is always orthogonal.
pub(crate) fn jacobi_svd(m: &ArrayView2<f64>) -> Svd {
    let d = m.ncols();
    assert_eq!(m.nrows(), d, "jacobi_svd expects a square matrix");
    let mut a = m.to_owned();
    let mut v = Array2::eye(d);

    let max_sweeps = 60;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..d.saturating_sub(1) {
            for q in (p + 1)..d {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..d {
                    let ap = a[(i, p)];
                    let aq = a[(i, q)];
                    alpha += ap * ap;
                    beta += aq * aq;
                    gamma += ap * aq;
                }
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..d {
                    let ap = a[(i, p)];
                    let aq = a[(i, q)];
                    a[(i, p)] = c * ap - s * aq;
                    a[(i, q)] = s * ap + c * aq;
                }
                for i in 0..d {
                    let vp = v[(i, p)];
                    let vq = v[(i, q)];
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
                rotated = true;
            }
        }
        if !rotated {
            break;
        }
    }

    // Column norms are the singular values; sort descending.
    let mut order: Vec<usize> = (0..d).collect();
    let norms: Vec<f64> = (0..d)
        .map(|j| (0..d).map(|i| a[(i, j)] * a[(i, j)]).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap().then(i.cmp(&j)));

    let mut sigma = Vec::with_capacity(d);
    let mut u = Array2::zeros((d, d));
    let mut v_sorted = Array2::zeros((d, d));
    for (dst, &src) in order.iter().enumerate() {
        sigma.push(norms[src]);
        for i in 0..d {
            v_sorted[(i, dst)] = v[(i, src)];
        }
        if norms[src] > 0.0 {
            for i in 0..d {
                u[(i, dst)] = a[(i, src)] / norms[src];
            }
        }
    }

    // Replace numerically-zero columns of u with an orthonormal completion.
    let sigma_max = sigma.first().copied().unwrap_or(0.0);
    let tiny = sigma_max * 1e-13;
    for j in 0..d {
        if sigma[j] > tiny && sigma[j] > 0.0 {
            continue;
        }
        let mut filled = false;
        for axis in 0..d {
            let mut cand = Array1::zeros(d);
            cand[axis] = 1.0;
            for jj in 0..d {
                if jj == j || (sigma[jj] <= tiny && jj > j) {
                    continue;
                }
                let proj: f64 = (0..d).map(|i| u[(i, jj)] * cand[i]).sum();
                for i in 0..d {
                    cand[i] -= proj * u[(i, jj)];
                }
            }
            let cn = norm(&cand.view());
            if cn > 1e-6 {
                for i in 0..d {
                    u[(i, j)] = cand[i] / cn;
                }
                filled = true;
                break;
            }
        }
        debug_assert!(filled, "failed to complete orthonormal basis");
    }

    Svd {
        u,
        sigma,
        v: v_sorted,
    }
}
