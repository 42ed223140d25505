//! Small dense linear-algebra helpers used throughout the filters.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TrackingError};

/// Symmetrizes a matrix in place: `M <- (M + M^T)/2`.
///
/// Applied after every covariance composition to suppress asymmetry drift.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Returns the symmetrized copy of `m`.
pub fn symmetrized(mut m: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut m);
    m
}

/// Checks that `m` is symmetric positive semidefinite up to roundoff:
/// the minimum eigenvalue must satisfy `lambda_min >= -1e-9 * trace`.
pub fn is_symmetric_psd(m: &DMatrix<f64>) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let scale = m[(i, i)].abs().max(m[(j, j)].abs()).max(1.0);
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-8 * scale {
                return false;
            }
        }
    }
    let sym = symmetrized(m.clone());
    let eig = sym.symmetric_eigenvalues();
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let trace: f64 = (0..n).map(|i| m[(i, i)]).sum();
    min >= -1e-9 * trace.abs().max(1.0)
}

/// Solves `S X = B` for symmetric positive definite `S` via Cholesky.
pub fn spd_solve(s: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| TrackingError::NumericalFailure {
            what: "Cholesky factorization of an innovation/denominator matrix".into(),
            residual: f64::NAN,
        })?;
    Ok(chol.solve(b))
}

/// Log-density of a multivariate Gaussian `N(x; mean, cov)`.
pub fn gaussian_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let n = x.len();
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| TrackingError::NumericalFailure {
            what: "Cholesky factorization of a Gaussian covariance".into(),
            residual: f64::NAN,
        })?;
    let diff = x - mean;
    let sol = chol.solve(&diff);
    let maha = diff.dot(&sol);
    let logdet: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    Ok(-0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + maha))
}

/// Squared Mahalanobis distance `d^T S^{-1} d`.
pub fn mahalanobis_sq(diff: &DVector<f64>, s: &DMatrix<f64>) -> Result<f64> {
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| TrackingError::NumericalFailure {
            what: "Cholesky factorization of a gating covariance".into(),
            residual: f64::NAN,
        })?;
    let sol = chol.solve(diff);
    Ok(diff.dot(&sol))
}

/// `log(sum_i exp(v_i))` without overflow; `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Adaptive Gauss-Kronrod (G7/K15) quadrature of a vector-valued integrand
/// over `[a, b]` to a component-wise relative tolerance.
///
/// Returns the integral estimate, or a numerical-failure error carrying
/// the worst residual if the subdivision budget is exhausted.
pub fn adaptive_quadrature<F>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<DVector<f64>>
where
    F: Fn(f64) -> DVector<f64>,
{
    // 15-point Kronrod nodes/weights on [-1, 1] and the embedded 7-point Gauss weights.
    const XK: [f64; 15] = [
        -0.991455371120813,
        -0.949107912342759,
        -0.864864423359769,
        -0.741531185599394,
        -0.586087235467691,
        -0.405845151377397,
        -0.207784955007898,
        0.0,
        0.207784955007898,
        0.405845151377397,
        0.586087235467691,
        0.741531185599394,
        0.864864423359769,
        0.949107912342759,
        0.991455371120813,
    ];
    const WK: [f64; 15] = [
        0.022935322010529,
        0.063092092629979,
        0.104790010322250,
        0.140653259715525,
        0.169004726639267,
        0.190350578064785,
        0.204432940075298,
        0.209482141084728,
        0.204432940075298,
        0.190350578064785,
        0.169004726639267,
        0.140653259715525,
        0.104790010322250,
        0.063092092629979,
        0.022935322010529,
    ];
    const WG: [f64; 7] = [
        0.129484966168870,
        0.279705391489277,
        0.381830050505119,
        0.417959183673469,
        0.381830050505119,
        0.279705391489277,
        0.129484966168870,
    ];

    struct Segment {
        a: f64,
        b: f64,
        value: DVector<f64>,
        error: DVector<f64>,
    }

    let eval = |lo: f64, hi: f64| -> Segment {
        let h = 0.5 * (hi - lo);
        let c = 0.5 * (hi + lo);
        let mut kronrod: Option<DVector<f64>> = None;
        let mut gauss: Option<DVector<f64>> = None;
        for (idx, (&x, &wk)) in XK.iter().zip(WK.iter()).enumerate() {
            let fx = f(c + h * x);
            match &mut kronrod {
                Some(acc) => *acc += &fx * wk,
                None => kronrod = Some(&fx * wk),
            }
            if idx % 2 == 1 {
                let wg = WG[idx / 2];
                match &mut gauss {
                    Some(acc) => *acc += &fx * wg,
                    None => gauss = Some(&fx * wg),
                }
            }
        }
        let kronrod = kronrod.unwrap() * h;
        let gauss = gauss.unwrap() * h;
        let error = (&kronrod - &gauss).abs();
        Segment {
            a: lo,
            b: hi,
            value: kronrod,
            error,
        }
    };

    if b < a {
        return Err(TrackingError::invalid("quadrature interval reversed"));
    }
    let dim = f(a).len();
    if b == a {
        return Ok(DVector::zeros(dim));
    }

    let mut segments = vec![eval(a, b)];
    const MAX_SEGMENTS: usize = 4096;
    loop {
        let mut total = DVector::zeros(dim);
        let mut err = DVector::zeros(dim);
        for s in &segments {
            total += &s.value;
            err += &s.error;
        }
        let converged = (0..dim).all(|i| err[i] <= rel_tol * total[i].abs().max(1e-300));
        if converged {
            return Ok(total);
        }
        if segments.len() >= MAX_SEGMENTS {
            let worst = (0..dim)
                .map(|i| err[i] / total[i].abs().max(1e-300))
                .fold(0.0, f64::max);
            return Err(TrackingError::NumericalFailure {
                what: "adaptive quadrature did not converge".into(),
                residual: worst,
            });
        }
        // Split the segment with the largest error.
        let (worst_idx, _) = segments
            .iter()
            .enumerate()
            .map(|(i, s)| (i, s.error.iter().cloned().fold(0.0, f64::max)))
            .fold((0, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        let seg = segments.swap_remove(worst_idx);
        let mid = 0.5 * (seg.a + seg.b);
        segments.push(eval(seg.a, mid));
        segments.push(eval(mid, seg.b));
    }
}
