//! Dataset-bias statistics: where objects sit in their images and how big
//! they are, tested against a uniform distribution with a chi-squared test.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BiasError {
    #[error("chi-squared needs a positive total, got {0}")]
    EmptyCounts(u64),
    #[error("chi-squared needs at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("invalid chi-squared arguments: statistic {chi2}, df {df}")]
    BadArgument { chi2: f64, df: usize },
    #[error("bin counts must be at least 1 (grid {grid}, size bins {size_bins})")]
    BadBins { grid: usize, size_bins: usize },
    #[error("no annotations")]
    NoAnnotations,
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One bounding box in pixel units.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub category: String,
    pub img_w: f64,
    pub img_h: f64,
    pub box_x: f64,
    pub box_y: f64,
    pub box_w: f64,
    pub box_h: f64,
}

impl Annotation {
    /// Positive, finite extents and a box fully inside the image.
    pub fn is_valid(&self) -> bool {
        let vals = [self.img_w, self.img_h, self.box_x, self.box_y, self.box_w, self.box_h];
        vals.iter().all(|v| v.is_finite())
            && self.img_w > 0.0
            && self.img_h > 0.0
            && self.box_w > 0.0
            && self.box_h > 0.0
            && self.box_x >= 0.0
            && self.box_y >= 0.0
            && self.box_x + self.box_w <= self.img_w
            && self.box_y + self.box_h <= self.img_h
    }

    /// Box centre in normalized `[0, 1]²` image coordinates, `(x, y)`.
    pub fn center(&self) -> (f64, f64) {
        (
            (self.box_x + self.box_w / 2.0) / self.img_w,
            (self.box_y + self.box_h / 2.0) / self.img_h,
        )
    }

    /// Box height relative to image height.
    pub fn relative_size(&self) -> f64 {
        self.box_h / self.img_h
    }
}

pub const ANNOTATION_HEADER: [&str; 7] = ["category", "img_w", "img_h", "box_x", "box_y", "box_w", "box_h"];

/// Reads the annotation CSV. The header row is mandatory and must match
/// `ANNOTATION_HEADER`. Rows with well-formed numbers are kept even when the
/// box is invalid; binning skips and counts those.
pub fn parse_annotations(input: impl Read) -> Result<Vec<Annotation>, BiasError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let header = reader.headers()?.clone();
    if header.len() != ANNOTATION_HEADER.len() || header.iter().zip(ANNOTATION_HEADER).any(|(a, b)| a != b) {
        return Err(BiasError::Parse {
            line: 1,
            message: format!("expected header `{}`", ANNOTATION_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let num = |i: usize| -> Result<f64, BiasError> {
            record[i].parse::<f64>().map_err(|e| BiasError::Parse {
                line,
                message: format!("column `{}`: {e}", ANNOTATION_HEADER[i]),
            })
        };
        out.push(Annotation {
            category: record[0].to_string(),
            img_w: num(1)?,
            img_h: num(2)?,
            box_x: num(3)?,
            box_y: num(4)?,
            box_w: num(5)?,
            box_h: num(6)?,
        });
    }
    Ok(out)
}

/// Binning layout: a `grid × grid` position histogram and `size_bins`
/// equal-width bins of relative height.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinSpec {
    pub grid: usize,
    pub size_bins: usize,
}

impl Default for BinSpec {
    fn default() -> Self {
        Self { grid: 5, size_bins: 10 }
    }
}

impl BinSpec {
    fn validate(&self) -> Result<(), BiasError> {
        if self.grid == 0 || self.size_bins == 0 {
            return Err(BiasError::BadBins {
                grid: self.grid,
                size_bins: self.size_bins,
            });
        }
        Ok(())
    }

    /// Smallest category size that gets tested: five samples per bin of the
    /// larger histogram.
    pub fn min_samples(&self) -> u64 {
        5 * (self.grid * self.grid).max(self.size_bins) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinnedCounts {
    pub description: String,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl BinnedCounts {
    pub fn new(description: impl Into<String>, counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        Self {
            description: description.into(),
            counts,
            total,
        }
    }
}

/// Equal-width bin of `v ∈ [0, 1]`: intervals are right-open except the last.
pub fn bin_index(v: f64, bins: usize) -> usize {
    ((v * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryBins {
    pub category: String,
    pub position: BinnedCounts,
    pub size: BinnedCounts,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Binning {
    /// Sorted by category name. Categories whose every box is invalid appear
    /// with zero totals.
    pub categories: Vec<CategoryBins>,
    pub rejects: usize,
}

pub fn bin_annotations(annotations: &[Annotation], spec: &BinSpec) -> Result<Binning, BiasError> {
    spec.validate()?;
    if annotations.is_empty() {
        return Err(BiasError::NoAnnotations);
    }
    let g = spec.grid;
    let mut by_cat: BTreeMap<&str, (Vec<u64>, Vec<u64>)> = BTreeMap::new();
    let mut rejects = 0;
    for a in annotations {
        let entry = by_cat
            .entry(a.category.as_str())
            .or_insert_with(|| (vec![0; g * g], vec![0; spec.size_bins]));
        if !a.is_valid() {
            rejects += 1;
            continue;
        }
        let (cx, cy) = a.center();
        entry.0[bin_index(cy, g) * g + bin_index(cx, g)] += 1;
        entry.1[bin_index(a.relative_size(), spec.size_bins)] += 1;
    }
    let categories = by_cat
        .into_iter()
        .map(|(cat, (pos, size))| CategoryBins {
            category: cat.to_string(),
            position: BinnedCounts::new(format!("position {g}x{g}"), pos),
            size: BinnedCounts::new(format!("size {}", spec.size_bins), size),
        })
        .collect();
    Ok(Binning { categories, rejects })
}

/// Pearson statistic against the uniform expectation `N / k`, with `k - 1`
/// degrees of freedom.
pub fn chi2_statistic(c: &BinnedCounts) -> Result<(f64, usize), BiasError> {
    let k = c.counts.len();
    if k < 2 {
        return Err(BiasError::TooFewBins(k));
    }
    let total: u64 = c.counts.iter().sum();
    if total == 0 {
        return Err(BiasError::EmptyCounts(total));
    }
    let expected = total as f64 / k as f64;
    let chi2 = c.counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    Ok((chi2, k - 1))
}

/// Upper-tail probability of the chi-squared distribution.
pub fn chi2_pvalue(chi2: f64, df: usize) -> Result<f64, BiasError> {
    if !chi2.is_finite() || chi2 < 0.0 || df == 0 {
        return Err(BiasError::BadArgument { chi2, df });
    }
    Ok(gamma_q(df as f64 / 2.0, chi2 / 2.0))
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos approximation, reflection below 1/2).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

const GAMMA_EPS: f64 = 1e-16;
const GAMMA_MAX_ITERS: usize = 100_000;

/// Regularized upper incomplete gamma `Q(a, x)`; the series is used below
/// `x = a + 1`, the continued fraction above.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        gamma_q_series(a, x)
    } else {
        gamma_q_continued_fraction(a, x)
    }
}

/// `1 - P(a, x)` with `P` from its power series.
pub fn gamma_q_series(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut n = a;
    for _ in 0..GAMMA_MAX_ITERS {
        n += 1.0;
        term *= x / n;
        sum += term;
        if term.abs() < sum.abs() * GAMMA_EPS {
            break;
        }
    }
    let p = sum * (-x + a * x.ln() - ln_gamma(a)).exp();
    (1.0 - p).clamp(0.0, 1.0)
}

/// `Q(a, x)` from its continued fraction, evaluated with the modified Lentz method.
pub fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..GAMMA_MAX_ITERS {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < GAMMA_EPS {
            break;
        }
    }
    ((-x + a * x.ln() - ln_gamma(a)).exp() * h).clamp(0.0, 1.0)
}

pub const FLAG_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquaredTest {
    pub chi2: f64,
    pub df: usize,
    pub p: f64,
}

impl ChiSquaredTest {
    pub fn run(c: &BinnedCounts) -> Result<Self, BiasError> {
        let (chi2, df) = chi2_statistic(c)?;
        Ok(Self {
            chi2,
            df,
            p: chi2_pvalue(chi2, df)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CategoryOutcome {
    Tested {
        position: ChiSquaredTest,
        size: ChiSquaredTest,
        flagged: bool,
    },
    InsufficientData,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryRow {
    pub category: String,
    pub n: u64,
    pub outcome: CategoryOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasReport {
    pub bins: BinSpec,
    pub rows: Vec<CategoryRow>,
    pub rejects: usize,
}

impl BiasReport {
    pub fn flagged(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| matches!(r.outcome, CategoryOutcome::Tested { flagged: true, .. }))
            .count()
    }

    pub fn tested(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| matches!(r.outcome, CategoryOutcome::Tested { .. }))
            .count()
    }
}

/// A category is flagged when its position or its size histogram is
/// non-uniform at `p < FLAG_THRESHOLD`.
pub fn category_bias_report(annotations: &[Annotation], bins: &BinSpec) -> Result<BiasReport, BiasError> {
    let binning = bin_annotations(annotations, bins)?;
    let min = bins.min_samples();
    let mut rows = Vec::with_capacity(binning.categories.len());
    for cat in &binning.categories {
        let n = cat.position.total;
        let outcome = if n < min {
            CategoryOutcome::InsufficientData
        } else {
            let position = ChiSquaredTest::run(&cat.position)?;
            let size = ChiSquaredTest::run(&cat.size)?;
            CategoryOutcome::Tested {
                position,
                size,
                flagged: position.p < FLAG_THRESHOLD || size.p < FLAG_THRESHOLD,
            }
        };
        rows.push(CategoryRow {
            category: cat.category.clone(),
            n,
            outcome,
        });
    }
    Ok(BiasReport {
        bins: *bins,
        rows,
        rejects: binning.rejects,
    })
}

/// Writes the per-category table. A leading `#` line records the binning.
pub fn write_bias_report(report: &BiasReport, out: impl Write) -> Result<(), BiasError> {
    let mut out = out;
    writeln!(
        out,
        "#bins,position={g}x{g},size={s},threshold={FLAG_THRESHOLD:e},rejects={r}",
        g = report.bins.grid,
        s = report.bins.size_bins,
        r = report.rejects
    )?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["category", "n", "chi2_pos", "p_pos", "chi2_size", "p_size", "flagged"])?;
    for row in &report.rows {
        let n = row.n.to_string();
        match &row.outcome {
            CategoryOutcome::Tested { position, size, flagged } => w.write_record([
                row.category.as_str(),
                &n,
                &position.chi2.to_string(),
                &format!("{:e}", position.p),
                &size.chi2.to_string(),
                &format!("{:e}", size.p),
                if *flagged { "true" } else { "false" },
            ])?,
            CategoryOutcome::InsufficientData => w.write_record([row.category.as_str(), &n, "", "", "", "", "insufficient"])?,
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn ann(cat: &str, x: f64, y: f64, w: f64, h: f64) -> Annotation {
        Annotation {
            category: cat.into(),
            img_w: 100.0,
            img_h: 100.0,
            box_x: x,
            box_y: y,
            box_w: w,
            box_h: h,
        }
    }

    #[test]
    fn single_center_box() {
        let b = bin_annotations(&[ann("a", 40.0, 40.0, 20.0, 20.0)], &BinSpec { grid: 2, size_bins: 2 }).unwrap();
        let pos = &b.categories[0].position.counts;
        assert_eq!(pos.iter().sum::<u64>(), 1);
        assert_eq!(pos.iter().filter(|&&c| c == 1).count(), 1);
    }

    #[test]
    fn quadrant_centers() {
        let anns = [
            ann("a", 20.0, 20.0, 10.0, 10.0),
            ann("a", 70.0, 20.0, 10.0, 10.0),
            ann("a", 20.0, 70.0, 10.0, 10.0),
            ann("a", 70.0, 70.0, 10.0, 10.0),
        ];
        let b = bin_annotations(&anns, &BinSpec { grid: 2, size_bins: 2 }).unwrap();
        assert_eq!(b.categories[0].position.counts, vec![1, 1, 1, 1]);
        assert_eq!(b.categories[0].position.total, 4);
    }

    #[test]
    fn random_boxes_match_histogram_oracle() {
        let mut g = SplitMix64::new(42);
        let anns: Vec<Annotation> = (0..1000)
            .map(|_| {
                let (w, h) = (g.uniform(1.0, 50.0), g.uniform(1.0, 50.0));
                ann("r", g.uniform(0.0, 100.0 - w), g.uniform(0.0, 100.0 - h), w, h)
            })
            .collect();
        let b = bin_annotations(&anns, &BinSpec::default()).unwrap();
        let mut pos = vec![0u64; 25];
        let mut size = vec![0u64; 10];
        for a in &anns {
            let cx = (a.box_x + a.box_w / 2.0) / 100.0;
            let cy = (a.box_y + a.box_h / 2.0) / 100.0;
            let col = (0..5).find(|&i| cx < (i + 1) as f64 / 5.0).unwrap_or(4);
            let row = (0..5).find(|&i| cy < (i + 1) as f64 / 5.0).unwrap_or(4);
            pos[row * 5 + col] += 1;
            let s = a.box_h / 100.0;
            size[(0..10).find(|&i| s < (i + 1) as f64 / 10.0).unwrap_or(9)] += 1;
        }
        assert_eq!(b.categories[0].position.counts, pos);
        assert_eq!(b.categories[0].size.counts, size);
    }

    #[test]
    fn edges_and_rejects() {
        assert_eq!(bin_index(0.0, 4), 0);
        assert_eq!(bin_index(0.25, 4), 1);
        assert_eq!(bin_index(1.0, 4), 3);
        let anns = [ann("a", 90.0, 0.0, 20.0, 10.0), ann("a", 0.0, 0.0, 0.0, 10.0), ann("a", 0.0, 0.0, 10.0, 10.0)];
        let b = bin_annotations(&anns, &BinSpec::default()).unwrap();
        assert_eq!(b.rejects, 2);
        assert_eq!(b.categories[0].position.total, 1);
        assert!(matches!(bin_annotations(&[], &BinSpec::default()), Err(BiasError::NoAnnotations)));
    }

    #[test]
    fn chi2_examples() {
        assert_eq!(chi2_statistic(&BinnedCounts::new("", vec![7, 7, 7])).unwrap(), (0.0, 2));
        assert_eq!(chi2_statistic(&BinnedCounts::new("", vec![10, 0, 10, 0])).unwrap(), (20.0, 3));
        assert!(matches!(chi2_statistic(&BinnedCounts::new("", vec![5])), Err(BiasError::TooFewBins(1))));
        assert!(matches!(chi2_statistic(&BinnedCounts::new("", vec![0, 0])), Err(BiasError::EmptyCounts(0))));
    }

    #[test]
    fn chi2_matches_naive_formula() {
        let mut g = SplitMix64::new(9);
        for _ in 0..50 {
            let k = 2 + g.below(20) as usize;
            let counts: Vec<u64> = (0..k).map(|_| g.below(100)).collect();
            let n: u64 = counts.iter().sum();
            if n == 0 {
                continue;
            }
            let mut naive = 0.0;
            for &o in &counts {
                let e = n as f64 / k as f64;
                naive += (o as f64 - e) * (o as f64 - e) / e;
            }
            let (chi2, df) = chi2_statistic(&BinnedCounts::new("", counts)).unwrap();
            assert!((chi2 - naive).abs() <= 1e-9 * naive.max(1.0));
            assert_eq!(df, k - 1);
        }
    }

    #[test]
    fn pvalues_against_tables_and_statrs() {
        assert_eq!(chi2_pvalue(0.0, 4).unwrap(), 1.0);
        // Published upper critical values: (df, chi2 at alpha).
        let table = [
            (1, 3.841, 0.05),
            (1, 6.635, 0.01),
            (3, 7.815, 0.05),
            (3, 11.345, 0.01),
            (9, 16.919, 0.05),
            (24, 36.415, 0.05),
            (24, 42.980, 0.01),
            (10, 29.588, 0.001),
        ];
        for (df, x, alpha) in table {
            let p = chi2_pvalue(x, df).unwrap();
            assert!((p - alpha).abs() < alpha * 2e-3, "df {df}: {p} vs {alpha}");
        }
        let p20 = chi2_pvalue(20.0, 3).unwrap();
        assert!(p20 < 1e-3);
        let oracle = |x: f64, df: usize| 1.0 - ChiSquared::new(df as f64).unwrap().cdf(x);
        assert!((p20 - oracle(20.0, 3)).abs() < 1e-12);
        for df in [50, 200, 1000] {
            let p = chi2_pvalue(df as f64, df).unwrap();
            assert!((p - 0.5).abs() < 0.05);
            assert!((p - oracle(df as f64, df)).abs() < 1e-9);
        }
        for df in 1..30 {
            for x in [0.01, 0.5, 1.0, 3.0, 10.0, 25.0, 60.0] {
                assert!((chi2_pvalue(x, df).unwrap() - oracle(x, df)).abs() < 1e-10, "df {df} x {x}");
            }
        }
        assert!(chi2_pvalue(f64::NAN, 3).is_err());
        assert!(chi2_pvalue(-1.0, 3).is_err());
        assert!(chi2_pvalue(1.0, 0).is_err());
    }

    #[test]
    fn ln_gamma_matches_factorials() {
        let mut f = 1.0f64;
        for n in 1..20 {
            assert!((ln_gamma(n as f64) - f.ln()).abs() < 1e-12);
            f *= n as f64;
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn branches_agree_at_crossover() {
        for a in [0.5, 1.0, 1.5, 4.0, 12.5, 40.0, 150.0] {
            let x = a + 1.0;
            let s = gamma_q_series(a, x);
            let c = gamma_q_continued_fraction(a, x);
            assert!((s - c).abs() < 1e-10, "a {a}: {s} vs {c}");
        }
    }

    #[test]
    fn pvalue_decreasing_on_grid() {
        for df in [1, 2, 5, 24] {
            let mut prev = 1.0 + 1e-12;
            for i in 0..400 {
                let p = chi2_pvalue(i as f64 * 0.25, df).unwrap();
                // Strict wherever the tail is representable away from 0 and 1.
                let interior = prev < 1.0 - 1e-12 && p > 1e-290;
                assert!(p <= prev && (!interior || p < prev), "df {df} at {i}");
                prev = p;
            }
        }
    }

    #[test]
    fn concentrated_category_is_flagged() {
        let anns: Vec<Annotation> = (0..500).map(|_| ann("dog", 45.0, 45.0, 10.0, 10.0)).collect();
        let r = category_bias_report(&anns, &BinSpec::default()).unwrap();
        assert_eq!(r.flagged(), 1);
    }

    #[test]
    fn uniform_category_not_flagged() {
        // Centre height uniform on [0, 1]; each box reaches the nearer image
        // edge, which makes its relative height uniform too.
        let mut g = SplitMix64::new(2024);
        let anns: Vec<Annotation> = (0..10_000)
            .map(|_| {
                let cy = g.next_f64();
                let cx = g.uniform(0.005, 0.995);
                let h = 2.0 * cy.min(1.0 - cy);
                ann("u", cx * 100.0 - 0.5, (cy - h / 2.0) * 100.0, 1.0, h * 100.0)
            })
            .collect();
        let r = category_bias_report(&anns, &BinSpec::default()).unwrap();
        assert_eq!(r.rejects + r.rows[0].n as usize, 10_000);
        match r.rows[0].outcome {
            CategoryOutcome::Tested { position, size, flagged } => {
                assert!(!flagged, "p_pos {} p_size {}", position.p, size.p);
            }
            _ => panic!("uniform category should be tested"),
        }
    }

    #[test]
    fn empty_and_small_categories_are_insufficient() {
        let mut anns = vec![ann("ghost", 0.0, 0.0, 0.0, 0.0)];
        anns.extend((0..10).map(|i| ann("few", i as f64, 0.0, 5.0, 5.0)));
        let r = category_bias_report(&anns, &BinSpec::default()).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert!(r.rows.iter().all(|row| row.outcome == CategoryOutcome::InsufficientData));
        assert_eq!(r.rows.iter().find(|row| row.category == "ghost").unwrap().n, 0);
    }

    #[test]
    fn csv_round_trip() {
        let text = "category,img_w,img_h,box_x,box_y,box_w,box_h\ncat,100,80,10,10,20,30\n dog , 50, 50, 0, 0, 50, 50\n";
        let anns = parse_annotations(text.as_bytes()).unwrap();
        assert_eq!(anns.len(), 2);
        assert_eq!(anns[1].category, "dog");
        assert_eq!(anns[0].img_h, 80.0);
        assert!(parse_annotations("cat,1,2\n".as_bytes()).is_err());
        assert!(parse_annotations("category,img_w,img_h,box_x,box_y,box_w,box_h\na,x,1,1,1,1,1\n".as_bytes()).is_err());

        let r = category_bias_report(&anns, &BinSpec::default()).unwrap();
        let mut buf = Vec::new();
        write_bias_report(&r, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert!(lines.next().unwrap().starts_with("#bins,position=5x5,size=10"));
        assert_eq!(lines.next().unwrap(), "category,n,chi2_pos,p_pos,chi2_size,p_size,flagged");
        assert_eq!(lines.next().unwrap(), "cat,1,,,,,insufficient");
    }

    proptest! {
        #[test]
        fn chi2_permutation_invariant(counts in prop::collection::vec(0u64..1000, 2..30), seed in any::<u64>()) {
            prop_assume!(counts.iter().sum::<u64>() > 0);
            let mut shuffled = counts.clone();
            SplitMix64::new(seed).shuffle(&mut shuffled);
            let a = chi2_statistic(&BinnedCounts::new("", counts)).unwrap();
            let b = chi2_statistic(&BinnedCounts::new("", shuffled)).unwrap();
            prop_assert!((a.0 - b.0).abs() <= 1e-9 * a.0.max(1.0));
            prop_assert_eq!(a.1, b.1);
        }

        #[test]
        fn doubling_counts_doubles_chi2(counts in prop::collection::vec(0u64..1000, 2..30)) {
            prop_assume!(counts.iter().sum::<u64>() > 0);
            let a = chi2_statistic(&BinnedCounts::new("", counts.clone())).unwrap().0;
            let b = chi2_statistic(&BinnedCounts::new("", counts.iter().map(|c| 2 * c).collect())).unwrap().0;
            prop_assert!((b - 2.0 * a).abs() <= 1e-9 * b.max(1.0));
        }

        #[test]
        fn pvalue_in_unit_interval(x in 0.0f64..1e4, df in 1usize..500) {
            let p = chi2_pvalue(x, df).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
        }

        #[test]
        fn parser_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
            let _ = parse_annotations(bytes.as_slice());
        }
    }
}
