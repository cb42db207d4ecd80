//! Small dense linear algebra used by the chain and spectral modules.

use nalgebra::{DMatrix, DVector};

use crate::tolerances;

/// `exp(A)` by scaling and squaring with a Padé approximant.
pub(crate) fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.exp()
}

/// Largest real part over the spectrum of a square matrix.
///
/// Orders one and two use closed forms; larger matrices go through a real
/// Schur decomposition. Returns `None` if the Schur iteration does not converge.
pub(crate) fn spectral_abscissa(a: &DMatrix<f64>) -> Option<f64> {
    match a.nrows() {
        0 => None,
        1 => Some(a[(0, 0)]),
        2 => Some(abscissa_2x2(a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)])),
        _ => {
            let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, 100_000)?;
            schur
                .complex_eigenvalues()
                .iter()
                .map(|z| z.re)
                .fold(None, |acc: Option<f64>, re| {
                    Some(acc.map_or(re, |m| m.max(re)))
                })
        }
    }
}

fn abscissa_2x2(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let half_trace = 0.5 * (a + d);
    let det = a * d - b * c;
    let half_diff = 0.5 * (a - d);
    let disc = half_diff * half_diff + b * c;
    if disc < 0.0 {
        return half_trace;
    }
    let root = disc.sqrt();
    // Pick the root without cancellation and recover the other from the determinant.
    if half_trace < 0.0 {
        let lo = half_trace - root;
        if lo != 0.0 {
            return det / lo;
        }
        half_trace + root
    } else {
        half_trace + root
    }
}

/// Solve `A x = b` by LU with partial pivoting.
///
/// Returns `None` when a pivot falls below `LU_PIVOT` relative to the largest
/// entry of `A`.
pub(crate) fn lu_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut x = b.clone();
    let scale = m.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..n {
        let (pivot_row, pivot_abs) =
            (col..n)
                .map(|r| (r, m[(r, col)].abs()))
                .fold(
                    (col, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
        if pivot_abs <= tolerances::LU_PIVOT * scale {
            return None;
        }
        if pivot_row != col {
            m.swap_rows(pivot_row, col);
            x.swap_rows(pivot_row, col);
        }
        let pivot = m[(col, col)];
        for r in (col + 1)..n {
            let factor = m[(r, col)] / pivot;
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                m[(r, c)] -= factor * m[(col, c)];
            }
            x[r] -= factor * x[col];
        }
    }
    for r in (0..n).rev() {
        let mut acc = x[r];
        for c in (r + 1)..n {
            acc -= m[(r, c)] * x[c];
        }
        x[r] = acc / m[(r, r)];
    }
    Some(x)
}
