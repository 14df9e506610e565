//! Dense solves for the small normal-equation systems used by the nuisance fits.

/// Solve `A x = b` for square row-major `A` (`dim × dim`) by Gaussian
/// elimination with partial pivoting. Returns `None` when a pivot falls below
/// `tol` times the largest absolute entry of `A`.
pub fn solve(a: &[f64], b: &[f64], dim: usize, tol: f64) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), dim * dim);
    debug_assert_eq!(b.len(), dim);
    let mut m = a.to_vec();
    let mut rhs = b.to_vec();
    let scale = m.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..dim {
        let (piv, piv_abs) = (col..dim)
            .map(|r| (r, m[r * dim + col].abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if piv_abs <= tol * scale {
            return None;
        }
        if piv != col {
            for c in 0..dim {
                m.swap(col * dim + c, piv * dim + c);
            }
            rhs.swap(col, piv);
        }
        let d = m[col * dim + col];
        for r in col + 1..dim {
            let f = m[r * dim + col] / d;
            if f == 0.0 {
                continue;
            }
            for c in col..dim {
                m[r * dim + c] -= f * m[col * dim + c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; dim];
    for r in (0..dim).rev() {
        let mut s = rhs[r];
        for c in r + 1..dim {
            s -= m[r * dim + c] * x[c];
        }
        x[r] = s / m[r * dim + r];
    }
    Some(x)
}
