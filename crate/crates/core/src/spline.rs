//! Cubic B-spline basis on the time axis, used for the smoothly varying
//! climate mean. Knots are placed every `knot_spacing` steps across the
//! series with clamped (repeated) boundary knots.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SplineError {
    #[error("series length {n} too short for knot spacing {spacing}; need n >= {}", 2 * *spacing)]
    TooShort { n: usize, spacing: usize },
    #[error("coefficient vector has length {got}, basis has {expected} functions")]
    DimMismatch { got: usize, expected: usize },
}

const ORDER: usize = 4; // cubic

/// Basis matrix for time points t = 1..n; row t-1 holds B_h(t).
#[derive(Debug, Clone)]
pub struct SplineBasis {
    n: usize,
    knot_spacing: usize,
    h: usize,
    /// Full knot vector including repeated boundary knots.
    knots: Vec<f64>,
    /// Row-major n x h matrix.
    values: Vec<f64>,
    /// First nonzero column per row; at most ORDER nonzeros follow.
    row_start: Vec<usize>,
}

impl SplineBasis {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn basis_count(&self) -> usize {
        self.h
    }

    pub fn knot_spacing(&self) -> usize {
        self.knot_spacing
    }

    /// B_h(t) with t a 1-based time index.
    pub fn value(&self, t: usize, h: usize) -> f64 {
        self.values[(t - 1) * self.h + h]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[(t - 1) * self.h..t * self.h]
    }

    /// Column index of the first potentially nonzero basis function at t.
    pub fn row_support_start(&self, t: usize) -> usize {
        self.row_start[t - 1]
    }

    /// Time points (1-based) where basis function h is nonzero.
    pub fn column_support(&self, h: usize) -> Vec<usize> {
        (1..=self.n)
            .filter(|&t| self.value(t, h) != 0.0)
            .collect()
    }

    /// alpha = B * gamma.
    pub fn evaluate_mean(&self, gamma: &[f64]) -> Result<Vec<f64>, SplineError> {
        if gamma.len() != self.h {
            return Err(SplineError::DimMismatch {
                got: gamma.len(),
                expected: self.h,
            });
        }
        Ok((1..=self.n)
            .map(|t| {
                let start = self.row_start[t - 1];
                let end = (start + ORDER).min(self.h);
                (start..end)
                    .map(|h| self.value(t, h) * gamma[h])
                    .sum()
            })
            .collect())
    }
}

/// Build the clamped cubic basis for a length-n series. Interior knots sit at
/// t = spacing, 2*spacing, ... strictly inside (1, n); a trailing short
/// interval at the series end is permitted.
pub fn build_basis(n: usize, knot_spacing: usize) -> Result<SplineBasis, SplineError> {
    if knot_spacing < 1 || n < 2 * knot_spacing.max(1) {
        return Err(SplineError::TooShort {
            n,
            spacing: knot_spacing,
        });
    }
    let a = 1.0;
    let b = n as f64;
    let mut knots = vec![a; ORDER];
    let mut pos = knot_spacing;
    while (pos as f64) < b {
        if pos > 1 {
            knots.push(pos as f64);
        }
        pos += knot_spacing;
    }
    knots.extend(std::iter::repeat(b).take(ORDER));
    let h = knots.len() - ORDER;

    let mut values = vec![0.0; n * h];
    let mut row_start = vec![0usize; n];
    for t in 1..=n {
        let u = t as f64;
        let span = find_span(&knots, h, u);
        let vals = basis_funs(&knots, span, u);
        let first = span + 1 - ORDER;
        row_start[t - 1] = first;
        for (j, v) in vals.iter().enumerate() {
            values[(t - 1) * h + first + j] = *v;
        }
    }
    Ok(SplineBasis {
        n,
        knot_spacing,
        h,
        knots,
        values,
        row_start,
    })
}

/// Index i with knots[i] <= u < knots[i+1], clamped so the right domain
/// endpoint falls in the last nonempty span.
fn find_span(knots: &[f64], h: usize, u: f64) -> usize {
    if u >= knots[h] {
        // u at or beyond the right endpoint of the domain
        let mut i = h - 1;
        while knots[i] == knots[i + 1] {
            i -= 1;
        }
        return i;
    }
    let mut lo = ORDER - 1;
    let mut hi = h;
    while lo + 1 < hi {
        let mid = (lo + hi) / 2;
        if u < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// Nonzero basis values at u in the given span (Cox-de Boor, order 4).
fn basis_funs(knots: &[f64], span: usize, u: f64) -> [f64; ORDER] {
    let mut left = [0.0; ORDER];
    let mut right = [0.0; ORDER];
    let mut vals = [0.0; ORDER];
    vals[0] = 1.0;
    for j in 1..ORDER {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = vals[r] / (right[r + 1] + left[j - r]);
            vals[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        vals[j] = saved;
    }
    vals
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn knot_count_matches_hand_count() {
        let basis = build_basis(500, 25).unwrap();
        // interior knots at 25, 50, ..., 475
        assert_eq!(basis.knots.len() - 2 * ORDER, 19);
        assert_eq!(basis.basis_count(), 23);
    }

    #[test]
    fn rows_sum_to_one() {
        let basis = build_basis(500, 25).unwrap();
        for t in 1..=500 {
            let sum: f64 = basis.row(t).iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn entries_in_unit_interval() {
        let basis = build_basis(120, 25).unwrap();
        for t in 1..=120 {
            for h in 0..basis.basis_count() {
                let v = basis.value(t, h);
                assert!((-1e-12..=1.0 + 1e-12).contains(&v), "B[{t},{h}] = {v}");
            }
        }
    }

    #[test]
    fn at_most_four_nonzeros_per_row() {
        let basis = build_basis(500, 25).unwrap();
        for t in 1..=500 {
            let nz = basis.row(t).iter().filter(|v| **v != 0.0).count();
            assert!(nz <= 4);
        }
    }

    #[test]
    fn interior_knot_has_at_most_three_nonzeros() {
        let basis = build_basis(500, 25).unwrap();
        // t = 50 is an interior knot; one basis function vanishes there
        let nz = basis.row(50).iter().filter(|v| **v > 1e-12).count();
        assert!(nz <= 3, "expected <= 3 nonzeros at a knot, got {nz}");
    }

    #[test]
    fn constant_coefficients_reproduce_constant() {
        let basis = build_basis(300, 25).unwrap();
        let gamma = vec![2.5; basis.basis_count()];
        let alpha = basis.evaluate_mean(&gamma).unwrap();
        for a in &alpha {
            assert_abs_diff_eq!(*a, 2.5, epsilon = 1e-10);
        }
    }

    #[test]
    fn zero_coefficients_give_zero() {
        let basis = build_basis(300, 25).unwrap();
        let alpha = basis.evaluate_mean(&vec![0.0; basis.basis_count()]).unwrap();
        assert!(alpha.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn linear_reproduction_via_greville() {
        // coefficients at Greville abscissae reproduce a linear function
        let basis = build_basis(400, 25).unwrap();
        let gamma: Vec<f64> = (0..basis.basis_count())
            .map(|h| {
                let g = (basis.knots[h + 1] + basis.knots[h + 2] + basis.knots[h + 3]) / 3.0;
                3.0 * g - 1.0
            })
            .collect();
        let alpha = basis.evaluate_mean(&gamma).unwrap();
        for t in 1..=400 {
            let expect = 3.0 * t as f64 - 1.0;
            assert_abs_diff_eq!(alpha[t - 1], expect, epsilon = 1e-8);
        }
    }

    #[test]
    fn quadratic_fit_via_ols() {
        // least-squares coefficients for a quadratic target reproduce it
        // closely on the interior
        let n = 500;
        let basis = build_basis(n, 25).unwrap();
        let h = basis.basis_count();
        let target: Vec<f64> = (1..=n)
            .map(|t| {
                let u = t as f64 / n as f64;
                1.0 + 2.0 * u - 3.0 * u * u
            })
            .collect();
        // normal equations, solved by Gaussian elimination
        let mut ata = vec![0.0; h * h];
        let mut atb = vec![0.0; h];
        for t in 1..=n {
            let row = basis.row(t);
            for i in 0..h {
                if row[i] == 0.0 {
                    continue;
                }
                atb[i] += row[i] * target[t - 1];
                for j in 0..h {
                    ata[i * h + j] += row[i] * row[j];
                }
            }
        }
        let gamma = solve_dense(&mut ata, &mut atb, h);
        let alpha = basis.evaluate_mean(&gamma).unwrap();
        for t in 50..=(n - 50) {
            assert!(
                (alpha[t - 1] - target[t - 1]).abs() < 1e-6,
                "t={t}: {} vs {}",
                alpha[t - 1],
                target[t - 1]
            );
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let basis = build_basis(100, 25).unwrap();
        assert!(matches!(
            basis.evaluate_mean(&[1.0, 2.0]),
            Err(SplineError::DimMismatch { .. })
        ));
    }

    #[test]
    fn too_short_rejected() {
        assert!(matches!(
            build_basis(30, 25),
            Err(SplineError::TooShort { .. })
        ));
    }

    fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Vec<f64> {
        for col in 0..n {
            let mut piv = col;
            for r in col + 1..n {
                if a[r * n + col].abs() > a[piv * n + col].abs() {
                    piv = r;
                }
            }
            for j in 0..n {
                a.swap(col * n + j, piv * n + j);
            }
            b.swap(col, piv);
            let d = a[col * n + col];
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[r * n + col] / d;
                for j in col..n {
                    a[r * n + j] -= f * a[col * n + j];
                }
                b[r] -= f * b[col];
            }
        }
        (0..n).map(|i| b[i] / a[i * n + i]).collect()
    }
}
