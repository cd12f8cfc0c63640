//! Multi-step standardization: per-tree curve fitting (TS) or a shared
//! age-binned growth curve (RCS), followed by averaging the per-tree indices
//! into a site chronology.

use std::fmt::Write as _;

use thiserror::Error;

use crate::ingest::RingWidthDataset;
use crate::stats;

#[derive(Debug, Error)]
pub enum StandardizeError {
    #[error("tree {tree}: need at least 3 rings to fit a growth curve, have {got}")]
    TooFewRings { tree: String, got: usize },
    #[error("tree {tree}: degenerate fit (all ages equal)")]
    DegenerateAges { tree: String },
    #[error("RCS bin width must be >= 1")]
    BadBinWidth,
    #[error("tree {tree}: fitted growth value is not strictly positive")]
    NonPositiveFit { tree: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Method {
    Ts,
    Rcs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum MeanFn {
    Arithmetic,
    TukeyBiweight,
}

/// Fitted per-tree growth curve for the TS path.
#[derive(Debug, Clone, PartialEq)]
pub enum GrowthCurve {
    /// yhat(age) = exp(c0 + c1 * age), c1 <= 0.
    NegExp { c0: f64, c1: f64 },
    /// Fallback when the log-linear fit slopes upward: yhat = mean width.
    Horizontal { mean: f64 },
}

impl GrowthCurve {
    pub fn value_at(&self, age: u32) -> f64 {
        match self {
            GrowthCurve::NegExp { c0, c1 } => (c0 + c1 * age as f64).exp(),
            GrowthCurve::Horizontal { mean } => *mean,
        }
    }
}

/// Standardized site chronology with per-year sample counts.
#[derive(Debug, Clone)]
pub struct Chronology {
    pub year_min: i32,
    pub method: Method,
    /// z_t; None where no tree contributes.
    pub index: Vec<Option<f64>>,
    pub sample_depth: Vec<u32>,
    /// Per-tree fitted curves (TS) retained for audit.
    pub curves: Vec<GrowthCurve>,
    /// Per-age-bin growth rates (RCS) retained for audit; index j-1 holds bin j.
    pub rcs_curve: Vec<Option<f64>>,
}

impl Chronology {
    pub fn n(&self) -> usize {
        self.index.len()
    }

    pub fn write_csv(&self) -> String {
        let mut out = String::from("year,z,sample_depth\n");
        for (j, z) in self.index.iter().enumerate() {
            let year = self.year_min + j as i32;
            match z {
                Some(z) => {
                    let _ = writeln!(out, "{},{:.5e},{}", year, z, self.sample_depth[j]);
                }
                None => {
                    let _ = writeln!(out, "{},NA,{}", year, self.sample_depth[j]);
                }
            }
        }
        out
    }
}

/// Least-squares fit of log width on age; falls back to the horizontal mean
/// curve when the fitted slope is positive.
pub fn fit_negexp(tree_id: &str, rings: &[(u32, f64)]) -> Result<GrowthCurve, StandardizeError> {
    if rings.len() < 3 {
        return Err(StandardizeError::TooFewRings {
            tree: tree_id.to_string(),
            got: rings.len(),
        });
    }
    let ages: Vec<f64> = rings.iter().map(|(a, _)| *a as f64).collect();
    if ages.iter().all(|a| *a == ages[0]) {
        return Err(StandardizeError::DegenerateAges {
            tree: tree_id.to_string(),
        });
    }
    let logs: Vec<f64> = rings.iter().map(|(_, w)| w.ln()).collect();
    let (c0, c1) = stats::ols(&ages, &logs);
    if c1 > 0.0 {
        let mean = stats::mean(&rings.iter().map(|(_, w)| *w).collect::<Vec<_>>());
        Ok(GrowthCurve::Horizontal { mean })
    } else {
        Ok(GrowthCurve::NegExp { c0, c1 })
    }
}

/// Per-tree indices w_it = y_it / yhat_it under the TS growth curves.
/// Returns (curves, per-tree index rows on the shared year axis).
pub fn ts_index(
    d: &RingWidthDataset,
) -> Result<(Vec<GrowthCurve>, Vec<Vec<Option<f64>>>), StandardizeError> {
    let n = d.n_years();
    let mut curves = Vec::with_capacity(d.tree_count());
    let mut rows = Vec::with_capacity(d.tree_count());
    for tree in d.trees() {
        let rings: Vec<(u32, f64)> = tree
            .widths
            .iter()
            .enumerate()
            .filter_map(|(j, w)| w.map(|w| (j as u32 + 1, w)))
            .collect();
        let curve = fit_negexp(&tree.id, &rings)?;
        let mut row = vec![None; n];
        for (j, w) in tree.widths.iter().enumerate() {
            if let Some(w) = *w {
                let age = j as u32 + 1;
                let yhat = curve.value_at(age);
                if !(yhat > 0.0) {
                    return Err(StandardizeError::NonPositiveFit {
                        tree: tree.id.clone(),
                    });
                }
                let idx = d.year_index(tree.first_year + j as i32).unwrap();
                row[idx] = Some(w / yhat);
            }
        }
        curves.push(curve);
        rows.push(row);
    }
    Ok((curves, rows))
}

/// Regional growth curve: mean raw width per age bin of width `b` over all
/// trees. Index j-1 holds bin j (ages (j-1)*b+1 ..= j*b); unoccupied bins are
/// None.
pub fn rcs_curve(d: &RingWidthDataset, b: u32) -> Result<Vec<Option<f64>>, StandardizeError> {
    if b < 1 {
        return Err(StandardizeError::BadBinWidth);
    }
    let max_age = d
        .trees()
        .iter()
        .map(|t| t.segment_length() as u32)
        .max()
        .unwrap_or(0);
    let n_bins = max_age.div_ceil(b) as usize;
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for tree in d.trees() {
        for (j, w) in tree.widths.iter().enumerate() {
            if let Some(w) = *w {
                let age = j as u32 + 1;
                let bin = (age.div_ceil(b) - 1) as usize;
                sums[bin] += w;
                counts[bin] += 1;
            }
        }
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| if c > 0 { Some(s / c as f64) } else { None })
        .collect())
}

/// Per-tree indices under RCS: w_it = y_it / Ghat_{bin(a_it)}.
pub fn rcs_index(
    d: &RingWidthDataset,
    b: u32,
) -> Result<(Vec<Option<f64>>, Vec<Vec<Option<f64>>>), StandardizeError> {
    let curve = rcs_curve(d, b)?;
    let n = d.n_years();
    let mut rows = Vec::with_capacity(d.tree_count());
    for tree in d.trees() {
        let mut row = vec![None; n];
        for (j, w) in tree.widths.iter().enumerate() {
            if let Some(w) = *w {
                let age = j as u32 + 1;
                let bin = (age.div_ceil(b) - 1) as usize;
                let g = curve[bin].expect("occupied bin has a growth value");
                let idx = d.year_index(tree.first_year + j as i32).unwrap();
                row[idx] = Some(w / g);
            }
        }
        rows.push(row);
    }
    Ok((curve, rows))
}

/// Average per-tree indices into z_t.
pub fn build_chronology(
    year_min: i32,
    method: Method,
    curves: Vec<GrowthCurve>,
    rcs_curve: Vec<Option<f64>>,
    rows: &[Vec<Option<f64>>],
    mean_fn: MeanFn,
) -> Chronology {
    let n = rows.first().map(|r| r.len()).unwrap_or(0);
    let mut index = Vec::with_capacity(n);
    let mut depth = Vec::with_capacity(n);
    for t in 0..n {
        let vals: Vec<f64> = rows.iter().filter_map(|r| r[t]).collect();
        depth.push(vals.len() as u32);
        if vals.is_empty() {
            index.push(None);
        } else {
            let z = match mean_fn {
                MeanFn::Arithmetic => stats::mean(&vals),
                MeanFn::TukeyBiweight => tukey_biweight_mean(&vals, 9.0),
            };
            index.push(Some(z));
        }
    }
    Chronology {
        year_min,
        method,
        index,
        sample_depth: depth,
        curves,
        rcs_curve,
    }
}

/// One-stop standardization.
pub fn standardize(
    d: &RingWidthDataset,
    method: Method,
    bin_width: u32,
    mean_fn: MeanFn,
) -> Result<Chronology, StandardizeError> {
    match method {
        Method::Ts => {
            let (curves, rows) = ts_index(d)?;
            Ok(build_chronology(
                d.year_min(),
                method,
                curves,
                Vec::new(),
                &rows,
                mean_fn,
            ))
        }
        Method::Rcs => {
            let (curve, rows) = rcs_index(d, bin_width)?;
            Ok(build_chronology(
                d.year_min(),
                method,
                Vec::new(),
                curve,
                &rows,
                mean_fn,
            ))
        }
    }
}

/// Tukey biweight robust mean, tuning constant c (9 is customary for
/// tree-ring chronologies). Falls back to the median when the MAD vanishes.
pub fn tukey_biweight_mean(xs: &[f64], c: f64) -> f64 {
    let med = stats::median(xs);
    let abs_dev: Vec<f64> = xs.iter().map(|x| (x - med).abs()).collect();
    let mad = stats::median(&abs_dev);
    if mad == 0.0 {
        return med;
    }
    let mut center = med;
    for _ in 0..100 {
        let mut wsum = 0.0;
        let mut wxsum = 0.0;
        for &x in xs {
            let u = (x - center) / (c * mad);
            if u.abs() < 1.0 {
                let w = (1.0 - u * u) * (1.0 - u * u);
                wsum += w;
                wxsum += w * x;
            }
        }
        if wsum == 0.0 {
            return med;
        }
        let next = wxsum / wsum;
        if (next - center).abs() < 1e-12 {
            return next;
        }
        center = next;
    }
    center
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{RingWidthDataset, TreeSeries};
    use approx::assert_abs_diff_eq;

    fn tree(id: &str, first: i32, widths: Vec<f64>) -> TreeSeries {
        TreeSeries {
            id: id.into(),
            first_year: first,
            widths: widths.into_iter().map(Some).collect(),
        }
    }

    #[test]
    fn negexp_recovers_exact_model() {
        let rings: Vec<(u32, f64)> = (1..=40)
            .map(|a| (a, (1.0 - 0.01 * a as f64).exp()))
            .collect();
        match fit_negexp("A", &rings).unwrap() {
            GrowthCurve::NegExp { c0, c1 } => {
                assert_abs_diff_eq!(c0, 1.0, epsilon = 1e-10);
                assert_abs_diff_eq!(c1, -0.01, epsilon = 1e-10);
            }
            other => panic!("expected NegExp, got {other:?}"),
        }
    }

    #[test]
    fn negexp_constant_widths_flat() {
        let rings: Vec<(u32, f64)> = (1..=10).map(|a| (a, 2.0)).collect();
        let curve = fit_negexp("A", &rings).unwrap();
        for a in 1..=10 {
            assert_abs_diff_eq!(curve.value_at(a), 2.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn negexp_increasing_falls_back_to_mean() {
        let rings: Vec<(u32, f64)> = (1..=20).map(|a| (a, 1.0 + 0.05 * a as f64)).collect();
        match fit_negexp("A", &rings).unwrap() {
            GrowthCurve::Horizontal { mean } => {
                let expect =
                    stats::mean(&rings.iter().map(|(_, w)| *w).collect::<Vec<_>>());
                assert_abs_diff_eq!(mean, expect, epsilon = 1e-12);
            }
            other => panic!("expected Horizontal fallback, got {other:?}"),
        }
    }

    #[test]
    fn negexp_too_few_rings() {
        assert!(matches!(
            fit_negexp("A", &[(1, 1.0), (2, 1.0)]),
            Err(StandardizeError::TooFewRings { .. })
        ));
    }

    #[test]
    fn ts_index_identity_when_fit_exact() {
        // noise-free negative-exponential tree: w deviates from 1 only by
        // the (zero) generating noise
        let d = RingWidthDataset::new(vec![tree(
            "A",
            1900,
            (1..=30).map(|a| (0.5 - 0.02 * a as f64).exp()).collect(),
        )])
        .unwrap();
        let (_, rows) = ts_index(&d).unwrap();
        for w in rows[0].iter().flatten() {
            assert_abs_diff_eq!(*w, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn ts_index_arithmetic() {
        // y = 2.0 against a fitted value of 1.6 gives w = 1.25
        let curve = GrowthCurve::Horizontal { mean: 1.6 };
        assert_abs_diff_eq!(2.0 / curve.value_at(5), 1.25, epsilon = 1e-12);
    }

    #[test]
    fn rcs_bin_boundaries() {
        // age 10 with b=10 is bin 1; age 11 is bin 2
        let b: u32 = 10;
        assert_eq!(10u32.div_ceil(b), 1);
        assert_eq!(11u32.div_ceil(b), 2);
    }

    #[test]
    fn rcs_single_tree_constant() {
        let d = RingWidthDataset::new(vec![tree("A", 1900, vec![3.0; 25])]).unwrap();
        let curve = rcs_curve(&d, 10).unwrap();
        assert_eq!(curve.len(), 3);
        for g in curve.iter().flatten() {
            assert_abs_diff_eq!(*g, 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rcs_two_tree_mean() {
        let d = RingWidthDataset::new(vec![
            tree("A", 1900, vec![2.0; 20]),
            tree("B", 1905, vec![4.0; 20]),
        ])
        .unwrap();
        let curve = rcs_curve(&d, 10).unwrap();
        // both trees occupy bins 1 and 2 with equal counts
        assert_abs_diff_eq!(curve[0].unwrap(), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(curve[1].unwrap(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn rcs_b1_single_tree_exact() {
        // with b=1 and one tree each age class mean is the width itself
        let widths: Vec<f64> = (1..=15).map(|a| 1.0 + 0.1 * a as f64).collect();
        let d = RingWidthDataset::new(vec![tree("A", 1900, widths.clone())]).unwrap();
        let (_, rows) = rcs_index(&d, 1).unwrap();
        for w in rows[0].iter().flatten() {
            assert_abs_diff_eq!(*w, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn chronology_arithmetic_mean() {
        let rows = vec![vec![Some(0.8)], vec![Some(1.2)]];
        let c = build_chronology(2000, Method::Ts, Vec::new(), Vec::new(), &rows, MeanFn::Arithmetic);
        assert_abs_diff_eq!(c.index[0].unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(c.sample_depth[0], 2);
    }

    #[test]
    fn chronology_single_tree_year() {
        let rows = vec![vec![Some(0.7)], vec![None]];
        let c = build_chronology(2000, Method::Ts, Vec::new(), Vec::new(), &rows, MeanFn::Arithmetic);
        assert_abs_diff_eq!(c.index[0].unwrap(), 0.7, epsilon = 1e-12);
        assert_eq!(c.sample_depth[0], 1);
    }

    #[test]
    fn biweight_resists_outlier() {
        let vals = [0.9, 1.0, 1.05, 1.1, 8.0];
        let arith = stats::mean(&vals);
        let biw = tukey_biweight_mean(&vals, 9.0);
        let med = stats::median(&vals);
        assert!((biw - med).abs() < (arith - med).abs());
    }

    #[test]
    fn biweight_constant_input() {
        assert_eq!(tukey_biweight_mean(&[2.0, 2.0, 2.0], 9.0), 2.0);
    }
}
