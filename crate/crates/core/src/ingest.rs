//! Parsing and validation of ring-width and climate files.
//!
//! Two ring-width formats are supported: a long CSV (`tree_id,year,width_mm`)
//! and the Tucson decadal-block format used by most archived tree-ring data.
//! Climate series are a simple `year,temperature_c` CSV with `NA` for years
//! without an instrumental record.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("tree {tree} year {year}: width {width} is not strictly positive")]
    NonPositiveWidth { tree: String, year: i32, width: f64 },
    #[error("tree {tree}: internal gap at year {year} (missing rings must be encoded as NA)")]
    InternalGap { tree: String, year: i32 },
    #[error("tree {tree}: duplicate entry for year {year}")]
    DuplicateTreeYear { tree: String, year: i32 },
    #[error("duplicate climate year {0}")]
    DuplicateYear(i32),
    #[error("climate series has non-contiguous observed block (gap at year {gap_year}); pass --allow-gaps to treat gaps as missing")]
    NonContiguousObserved { gap_year: i32 },
    #[error("tree {tree}: series is empty")]
    EmptyTree { tree: String },
    #[error("no trees in input")]
    Empty,
    #[error("climate years [{cmin}, {cmax}] do not cover dataset years [{dmin}, {dmax}]")]
    ClimateCoverage {
        cmin: i32,
        cmax: i32,
        dmin: i32,
        dmax: i32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum RingWidthFormat {
    CsvLong,
    Tucson,
}

/// One tree's measured series. `widths[j]` is the ring width in year
/// `first_year + j`; `None` marks a locally absent ring inside the span.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeSeries {
    pub id: String,
    pub first_year: i32,
    pub widths: Vec<Option<f64>>,
}

impl TreeSeries {
    pub fn last_year(&self) -> i32 {
        self.first_year + self.widths.len() as i32 - 1
    }

    pub fn segment_length(&self) -> usize {
        self.widths.len()
    }

    /// Width in a calendar year, if the tree spans it and the ring is present.
    pub fn width_in_year(&self, year: i32) -> Option<f64> {
        if year < self.first_year || year > self.last_year() {
            return None;
        }
        self.widths[(year - self.first_year) as usize]
    }

    /// Age in a calendar year: 1 at the innermost measured ring.
    pub fn age_in_year(&self, year: i32) -> Option<u32> {
        if year < self.first_year || year > self.last_year() {
            None
        } else {
            Some((year - self.first_year + 1) as u32)
        }
    }
}

/// Validated collection of crossdated ring-width series.
#[derive(Debug, Clone, PartialEq)]
pub struct RingWidthDataset {
    trees: Vec<TreeSeries>,
    year_min: i32,
    year_max: i32,
}

impl RingWidthDataset {
    pub fn new(trees: Vec<TreeSeries>) -> Result<Self, IngestError> {
        if trees.is_empty() {
            return Err(IngestError::Empty);
        }
        for tree in &trees {
            if tree.widths.is_empty() {
                return Err(IngestError::EmptyTree {
                    tree: tree.id.clone(),
                });
            }
            for (j, w) in tree.widths.iter().enumerate() {
                if let Some(w) = *w {
                    if !(w > 0.0) || !w.is_finite() {
                        return Err(IngestError::NonPositiveWidth {
                            tree: tree.id.clone(),
                            year: tree.first_year + j as i32,
                            width: w,
                        });
                    }
                }
            }
        }
        let year_min = trees.iter().map(|t| t.first_year).min().unwrap();
        let year_max = trees.iter().map(|t| t.last_year()).max().unwrap();
        Ok(Self {
            trees,
            year_min,
            year_max,
        })
    }

    pub fn trees(&self) -> &[TreeSeries] {
        &self.trees
    }

    pub fn tree_count(&self) -> usize {
        self.trees.len()
    }

    pub fn year_min(&self) -> i32 {
        self.year_min
    }

    pub fn year_max(&self) -> i32 {
        self.year_max
    }

    /// Number of years covered, the model's n.
    pub fn n_years(&self) -> usize {
        (self.year_max - self.year_min + 1) as usize
    }

    /// Internal time index of a calendar year (0-based offset from year_min).
    pub fn year_index(&self, year: i32) -> Option<usize> {
        if year < self.year_min || year > self.year_max {
            None
        } else {
            Some((year - self.year_min) as usize)
        }
    }

    /// Trees with at least one ring at or after `year`.
    pub fn trees_reaching(&self, year: i32) -> usize {
        self.trees.iter().filter(|t| t.last_year() >= year).count()
    }

    pub fn summary(&self) -> DatasetSummary {
        let lens: Vec<usize> = self.trees.iter().map(|t| t.segment_length()).collect();
        let min = *lens.iter().min().unwrap();
        let max = *lens.iter().max().unwrap();
        let mean = lens.iter().sum::<usize>() as f64 / lens.len() as f64;
        DatasetSummary {
            tree_count: self.trees.len(),
            n_years: self.n_years(),
            year_min: self.year_min,
            year_max: self.year_max,
            segment_min: min,
            segment_max: max,
            segment_mean: mean,
        }
    }

    pub fn write_csv(&self) -> String {
        let mut out = String::from("tree_id,year,width_mm\n");
        for tree in &self.trees {
            for (j, w) in tree.widths.iter().enumerate() {
                let year = tree.first_year + j as i32;
                match w {
                    Some(w) => {
                        let _ = writeln!(out, "{},{},{:.5e}", tree.id, year, w);
                    }
                    None => {
                        let _ = writeln!(out, "{},{},NA", tree.id, year);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DatasetSummary {
    pub tree_count: usize,
    pub n_years: usize,
    pub year_min: i32,
    pub year_max: i32,
    pub segment_min: usize,
    pub segment_max: usize,
    pub segment_mean: f64,
}

/// Tree ages on the shared year axis, `a[tree][year_index]`.
#[derive(Debug, Clone)]
pub struct AgeMatrix {
    ages: Vec<Vec<Option<u32>>>,
}

impl AgeMatrix {
    pub fn age(&self, tree: usize, year_index: usize) -> Option<u32> {
        self.ages.get(tree)?.get(year_index).copied().flatten()
    }
}

/// Ages from the dataset's first-year convention.
pub fn compute_ages(d: &RingWidthDataset) -> AgeMatrix {
    let n = d.n_years();
    let ages = d
        .trees()
        .iter()
        .map(|tree| {
            let mut row = vec![None; n];
            for j in 0..tree.widths.len() {
                let year = tree.first_year + j as i32;
                let idx = d.year_index(year).unwrap();
                if tree.widths[j].is_some() {
                    row[idx] = Some(j as u32 + 1);
                }
            }
            row
        })
        .collect();
    AgeMatrix { ages }
}

/// Length-n climate vector; `None` marks a year without an instrumental value.
#[derive(Debug, Clone, PartialEq)]
pub struct ClimateSeries {
    year_min: i32,
    values: Vec<Option<f64>>,
}

impl ClimateSeries {
    pub fn new(year_min: i32, values: Vec<Option<f64>>) -> Self {
        Self { year_min, values }
    }

    pub fn year_min(&self) -> i32 {
        self.year_min
    }

    pub fn year_max(&self) -> i32 {
        self.year_min + self.values.len() as i32 - 1
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn value(&self, idx: usize) -> Option<f64> {
        self.values.get(idx).copied().flatten()
    }

    /// Count of missing years, the model's m.
    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    pub fn observed_count(&self) -> usize {
        self.n() - self.missing_count()
    }

    /// Index of the first observed year, if any.
    pub fn first_observed(&self) -> Option<usize> {
        self.values.iter().position(|v| v.is_some())
    }

    /// True when the observed years form one contiguous block ending at the
    /// last year.
    pub fn observed_contiguous_tail(&self) -> bool {
        match self.first_observed() {
            None => true,
            Some(first) => self.values[first..].iter().all(|v| v.is_some()),
        }
    }

    /// Restrict (by copy) to a year range, padding uncovered years as missing.
    pub fn reindexed(&self, year_min: i32, n: usize) -> ClimateSeries {
        let values = (0..n as i32)
            .map(|j| {
                let year = year_min + j;
                let idx = year - self.year_min;
                if idx < 0 || idx >= self.values.len() as i32 {
                    None
                } else {
                    self.values[idx as usize]
                }
            })
            .collect();
        ClimateSeries { year_min, values }
    }

    /// Copy with the given year indices blanked out.
    pub fn with_masked(&self, mask: &[usize]) -> ClimateSeries {
        let mut values = self.values.clone();
        for &idx in mask {
            values[idx] = None;
        }
        ClimateSeries {
            year_min: self.year_min,
            values,
        }
    }
}

fn read_file(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parse ring widths in the declared format.
pub fn parse_ring_widths(
    path: &Path,
    format: RingWidthFormat,
) -> Result<RingWidthDataset, IngestError> {
    let text = read_file(path)?;
    match format {
        RingWidthFormat::CsvLong => parse_ring_widths_csv(&text),
        RingWidthFormat::Tucson => parse_ring_widths_tucson(&text),
    }
}

pub fn parse_ring_widths_csv(text: &str) -> Result<RingWidthDataset, IngestError> {
    let mut per_tree: BTreeMap<String, BTreeMap<i32, Option<f64>>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if lineno == 0 {
            let hdr: Vec<&str> = line.split(',').map(str::trim).collect();
            if hdr != ["tree_id", "year", "width_mm"] {
                return Err(IngestError::Parse {
                    line: 1,
                    msg: format!("expected header tree_id,year,width_mm, got {line:?}"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(IngestError::Parse {
                line: lineno + 1,
                msg: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let id = fields[0].to_string();
        let year: i32 = fields[1].parse().map_err(|_| IngestError::Parse {
            line: lineno + 1,
            msg: format!("bad year {:?}", fields[1]),
        })?;
        let width = if fields[2].eq_ignore_ascii_case("na") {
            None
        } else {
            let w: f64 = fields[2].parse().map_err(|_| IngestError::Parse {
                line: lineno + 1,
                msg: format!("bad width {:?}", fields[2]),
            })?;
            if !(w > 0.0) || !w.is_finite() {
                return Err(IngestError::NonPositiveWidth {
                    tree: id,
                    year,
                    width: w,
                });
            }
            Some(w)
        };
        let entry = per_tree.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            BTreeMap::new()
        });
        if entry.insert(year, width).is_some() {
            return Err(IngestError::DuplicateTreeYear { tree: id, year });
        }
    }
    let mut trees = Vec::with_capacity(order.len());
    for id in order {
        let rows = &per_tree[&id];
        let first = *rows.keys().next().ok_or_else(|| IngestError::EmptyTree {
            tree: id.clone(),
        })?;
        let last = *rows.keys().next_back().unwrap();
        let mut widths = Vec::with_capacity((last - first + 1) as usize);
        for year in first..=last {
            match rows.get(&year) {
                Some(w) => widths.push(*w),
                None => return Err(IngestError::InternalGap { tree: id, year }),
            }
        }
        trees.push(TreeSeries {
            id,
            first_year: first,
            widths,
        });
    }
    RingWidthDataset::new(trees)
}

/// Tucson (rwl) decadal-block reader. Values are hundredths of a millimetre;
/// 999 (or -9999) terminates a series; 0 marks a locally absent ring.
pub fn parse_ring_widths_tucson(text: &str) -> Result<RingWidthDataset, IngestError> {
    let mut per_tree: BTreeMap<String, BTreeMap<i32, Option<f64>>> = BTreeMap::new();
    let mut stopped: BTreeMap<String, bool> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        // fixed columns: 1-8 series id, 9-12 decade year, then values
        if line.len() < 13 {
            return Err(IngestError::Parse {
                line: lineno + 1,
                msg: "line too short for Tucson format".into(),
            });
        }
        let id = line[..8].trim().to_string();
        let year_str = line[8..12].trim();
        let decade: i32 = year_str.parse().map_err(|_| IngestError::Parse {
            line: lineno + 1,
            msg: format!("bad decade year {year_str:?}"),
        })?;
        let values: Vec<&str> = line[12..].split_whitespace().collect();
        if values.len() > 10 {
            return Err(IngestError::Parse {
                line: lineno + 1,
                msg: format!("{} values in decade row (max 10)", values.len()),
            });
        }
        let entry = per_tree.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            BTreeMap::new()
        });
        for (j, v) in values.iter().enumerate() {
            let raw: i64 = v.parse().map_err(|_| IngestError::Parse {
                line: lineno + 1,
                msg: format!("bad value {v:?}"),
            })?;
            if raw == 999 || raw == -9999 {
                stopped.insert(id.clone(), true);
                break;
            }
            if *stopped.get(&id).unwrap_or(&false) {
                return Err(IngestError::Parse {
                    line: lineno + 1,
                    msg: format!("values after stop marker for series {id}"),
                });
            }
            let year = decade + j as i32;
            let width = if raw == 0 {
                None
            } else if raw < 0 {
                return Err(IngestError::NonPositiveWidth {
                    tree: id.clone(),
                    year,
                    width: raw as f64 / 100.0,
                });
            } else {
                Some(raw as f64 / 100.0)
            };
            if entry.insert(year, width).is_some() {
                return Err(IngestError::DuplicateTreeYear {
                    tree: id.clone(),
                    year,
                });
            }
        }
    }
    let mut trees = Vec::with_capacity(order.len());
    for id in order {
        let rows = &per_tree[&id];
        if rows.is_empty() {
            return Err(IngestError::EmptyTree { tree: id });
        }
        let first = *rows.keys().next().unwrap();
        let last = *rows.keys().next_back().unwrap();
        let mut widths = Vec::with_capacity((last - first + 1) as usize);
        for year in first..=last {
            match rows.get(&year) {
                Some(w) => widths.push(*w),
                None => return Err(IngestError::InternalGap { tree: id, year }),
            }
        }
        trees.push(TreeSeries {
            id,
            first_year: first,
            widths,
        });
    }
    RingWidthDataset::new(trees)
}

/// Parse a `year,temperature_c` CSV. Without `allow_gaps`, the observed years
/// must form one contiguous block at the end of the series.
pub fn parse_climate(path: &Path, allow_gaps: bool) -> Result<ClimateSeries, IngestError> {
    let text = read_file(path)?;
    parse_climate_str(&text, allow_gaps)
}

pub fn parse_climate_str(text: &str, allow_gaps: bool) -> Result<ClimateSeries, IngestError> {
    let mut rows: BTreeMap<i32, Option<f64>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if lineno == 0 {
            let hdr: Vec<&str> = line.split(',').map(str::trim).collect();
            if hdr != ["year", "temperature_c"] {
                return Err(IngestError::Parse {
                    line: 1,
                    msg: format!("expected header year,temperature_c, got {line:?}"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(IngestError::Parse {
                line: lineno + 1,
                msg: format!("expected 2 fields, got {}", fields.len()),
            });
        }
        let year: i32 = fields[0].parse().map_err(|_| IngestError::Parse {
            line: lineno + 1,
            msg: format!("bad year {:?}", fields[0]),
        })?;
        let value = if fields[1].eq_ignore_ascii_case("na") {
            None
        } else {
            let v: f64 = fields[1].parse().map_err(|_| IngestError::Parse {
                line: lineno + 1,
                msg: format!("bad temperature {:?}", fields[1]),
            })?;
            if !v.is_finite() {
                return Err(IngestError::Parse {
                    line: lineno + 1,
                    msg: format!("non-finite temperature {v}"),
                });
            }
            Some(v)
        };
        if rows.insert(year, value).is_some() {
            return Err(IngestError::DuplicateYear(year));
        }
    }
    if rows.is_empty() {
        return Err(IngestError::Parse {
            line: 1,
            msg: "climate file has no data rows".into(),
        });
    }
    let year_min = *rows.keys().next().unwrap();
    let year_max = *rows.keys().next_back().unwrap();
    let values: Vec<Option<f64>> = (year_min..=year_max)
        .map(|y| rows.get(&y).copied().flatten())
        .collect();
    let series = ClimateSeries { year_min, values };
    if !allow_gaps && !series.observed_contiguous_tail() {
        let first = series.first_observed().unwrap();
        let gap = series.values[first..]
            .iter()
            .position(|v| v.is_none())
            .unwrap()
            + first;
        return Err(IngestError::NonContiguousObserved {
            gap_year: year_min + gap as i32,
        });
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_readback_small() {
        let text = "tree_id,year,width_mm\nA,1496,1.2\nA,1497,0.9\nA,1498,1.1\n";
        let d = parse_ring_widths_csv(text).unwrap();
        assert_eq!(d.tree_count(), 1);
        assert_eq!(d.trees()[0].segment_length(), 3);
        assert_eq!(d.trees()[0].first_year, 1496);
        assert_eq!(d.trees()[0].width_in_year(1497), Some(0.9));
    }

    #[test]
    fn csv_zero_width_rejected() {
        let text = "tree_id,year,width_mm\nA,1496,0.0\n";
        let err = parse_ring_widths_csv(text).unwrap_err();
        assert!(matches!(err, IngestError::NonPositiveWidth { .. }));
    }

    #[test]
    fn csv_internal_gap_rejected() {
        let text = "tree_id,year,width_mm\nA,1496,1.0\nA,1498,1.0\n";
        let err = parse_ring_widths_csv(text).unwrap_err();
        assert!(matches!(err, IngestError::InternalGap { year: 1497, .. }));
    }

    #[test]
    fn csv_na_sentinel_accepted() {
        let text = "tree_id,year,width_mm\nA,1496,1.0\nA,1497,NA\nA,1498,1.0\n";
        let d = parse_ring_widths_csv(text).unwrap();
        assert_eq!(d.trees()[0].width_in_year(1497), None);
        assert_eq!(d.trees()[0].segment_length(), 3);
    }

    #[test]
    fn csv_round_trip() {
        let text = "tree_id,year,width_mm\nA,1496,1.2\nA,1497,NA\nA,1498,1.1\nB,1400,2.5\n";
        let d = parse_ring_widths_csv(text).unwrap();
        let d2 = parse_ring_widths_csv(&d.write_csv()).unwrap();
        assert_eq!(d, d2);
    }

    #[test]
    fn ages_follow_first_year_convention() {
        let text = "tree_id,year,width_mm\nA,1496,1.2\nA,1497,0.9\nA,1498,1.1\n";
        let d = parse_ring_widths_csv(text).unwrap();
        let ages = compute_ages(&d);
        assert_eq!(ages.age(0, d.year_index(1496).unwrap()), Some(1));
        assert_eq!(ages.age(0, d.year_index(1498).unwrap()), Some(3));
        assert_eq!(d.trees()[0].age_in_year(1495), None);
        assert_eq!(d.trees()[0].age_in_year(1499), None);
    }

    #[test]
    fn max_age_equals_segment_length() {
        let text = "tree_id,year,width_mm\nA,1496,1.2\nA,1497,0.9\nA,1498,1.1\n";
        let d = parse_ring_widths_csv(text).unwrap();
        let t = &d.trees()[0];
        assert_eq!(t.age_in_year(t.last_year()), Some(t.segment_length() as u32));
    }

    #[test]
    fn tucson_basic() {
        let text = "TREE01  1496  120   90  110  999\n";
        let d = parse_ring_widths_tucson(text).unwrap();
        assert_eq!(d.tree_count(), 1);
        assert_eq!(d.trees()[0].widths, vec![Some(1.2), Some(0.9), Some(1.1)]);
    }

    #[test]
    fn tucson_absent_ring_is_none() {
        let text = "TREE01  1496  120    0  110  999\n";
        let d = parse_ring_widths_tucson(text).unwrap();
        assert_eq!(d.trees()[0].widths[1], None);
    }

    #[test]
    fn climate_spans() {
        let mut text = String::from("year,temperature_c\n");
        for y in 1496..=1995 {
            if y < 1913 {
                text.push_str(&format!("{y},NA\n"));
            } else {
                text.push_str(&format!("{y},10.5\n"));
            }
        }
        let c = parse_climate_str(&text, false).unwrap();
        assert_eq!(c.n(), 500);
        assert_eq!(c.missing_count(), 417);
        assert_eq!(c.first_observed(), Some(417));
    }

    #[test]
    fn climate_all_observed() {
        let text = "year,temperature_c\n2000,9.0\n2001,10.0\n";
        let c = parse_climate_str(text, false).unwrap();
        assert_eq!(c.missing_count(), 0);
    }

    #[test]
    fn climate_duplicate_year() {
        let text = "year,temperature_c\n1913,9.0\n1913,10.0\n";
        let err = parse_climate_str(text, false).unwrap_err();
        assert!(matches!(err, IngestError::DuplicateYear(1913)));
    }

    #[test]
    fn climate_gap_needs_flag() {
        let text = "year,temperature_c\n2000,9.0\n2001,NA\n2002,10.0\n";
        assert!(matches!(
            parse_climate_str(text, false),
            Err(IngestError::NonContiguousObserved { gap_year: 2001 })
        ));
        let c = parse_climate_str(text, true).unwrap();
        assert_eq!(c.missing_count(), 1);
    }

    #[test]
    fn trees_reaching_observed_span() {
        let text = "tree_id,year,width_mm\nA,1900,1.0\nA,1901,1.0\nB,1800,1.0\nB,1801,1.0\n";
        let d = parse_ring_widths_csv(text).unwrap();
        assert_eq!(d.trees_reaching(1901), 1);
        assert_eq!(d.trees_reaching(1801), 2);
    }
}
