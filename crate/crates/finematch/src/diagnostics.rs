//! Balance diagnostics for matched designs.
//!
//! For every covariate category and every exposure level, the report
//! compares three distributions: the full level before matching, the matched
//! group, and the template. Differences are reported both as raw counts
//! (whose absolute sum per level is exactly the fine-balance objective) and
//! as standardized mean differences. After-matching differences are divided
//! by the same pre-matching standard deviation as before-matching ones, so
//! matching cannot shrink the yardstick it is judged by.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{category_counts, DataError, Dataset};
use crate::design::{DesignError, MatchedDesign};

/// Pooled standard deviation of an indicator with proportions `p_a`, `p_b`.
pub fn pooled_sd(p_a: f64, p_b: f64) -> f64 {
    ((p_a * (1.0 - p_a) + p_b * (1.0 - p_b)) / 2.0).sqrt()
}

/// Standardized mean difference `(p_a - p_b) / sd` with an explicit
/// denominator. A zero difference is zero even when the denominator
/// degenerates; a nonzero difference with a zero denominator has no
/// meaningful scale and is `None`.
pub fn smd(p_a: f64, p_b: f64, sd: f64) -> Option<f64> {
    let diff = p_a - p_b;
    if sd > 0.0 {
        Some(diff / sd)
    } else if diff == 0.0 {
        Some(0.0)
    } else {
        None
    }
}

/// One (covariate category, exposure level) cell of the balance report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalanceRow {
    pub covariate: String,
    pub category: String,
    pub level: String,
    /// Category count among the template's units.
    pub template_count: u64,
    /// Category count in the full level before matching.
    pub before_count: u64,
    /// Number of units in the full level.
    pub before_total: u64,
    /// Category count in the matched group (out of `template_size` units).
    pub after_count: u64,
    /// `|after_count - template_count|`; these sum to the level's objective.
    pub deviation: u64,
    /// Level vs. population standardized difference before matching.
    pub before_smd: Option<f64>,
    /// Matched group vs. template, standardized by the before-matching
    /// denominator.
    pub after_smd: Option<f64>,
}

/// Balance of a whole design, one row per category and level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalanceReport {
    pub template_size: u64,
    pub rows: Vec<BalanceRow>,
    /// Per-level sums of absolute deviations; each equals the fine-balance
    /// objective reported by the solver for that level.
    pub level_deviations: Vec<(String, u64)>,
}

impl BalanceReport {
    /// Largest absolute after-matching standardized difference, if any
    /// cell has a defined one.
    pub fn worst_after_smd(&self) -> Option<f64> {
        self.rows
            .iter()
            .filter_map(|r| r.after_smd)
            .map(f64::abs)
            .max_by(f64::total_cmp)
    }
}

/// Builds the balance report of a design against the dataset it came from
/// (or any dataset containing the same unit ids).
pub fn balance_report(
    design: &MatchedDesign,
    dataset: &Dataset,
) -> Result<BalanceReport, DesignError> {
    let schema = &dataset.schema;
    let (template_indices, matched) = design.resolve(dataset)?;
    let t = template_indices.len() as u64;
    let n = dataset.units.len() as u64;
    let template_counts = category_counts(dataset, &template_indices);
    let all_indices: Vec<usize> = (0..dataset.units.len()).collect();
    let population_counts = category_counts(dataset, &all_indices);

    let mut rows = Vec::new();
    let mut level_deviations = Vec::new();
    for (lv, matched_indices) in design.levels.iter().zip(&matched) {
        let level_indices = dataset.level_units(&lv.level);
        let level_total = level_indices.len() as u64;
        let before_counts = category_counts(dataset, &level_indices);
        let after_counts = category_counts(dataset, matched_indices);
        let mut deviation_sum = 0u64;
        for (p, cov) in schema.covariates.iter().enumerate() {
            for (k, cat) in cov.categories.iter().enumerate() {
                let template_count = template_counts.get(p, k);
                let before_count = before_counts.get(p, k);
                let after_count = after_counts.get(p, k);
                let deviation = after_count.abs_diff(template_count);
                deviation_sum += deviation;

                let p_level = before_count as f64 / level_total as f64;
                let p_pop = population_counts.get(p, k) as f64 / n as f64;
                let sd = pooled_sd(p_level, p_pop);
                let p_after = after_count as f64 / t as f64;
                let p_template = template_count as f64 / t as f64;
                rows.push(BalanceRow {
                    covariate: cov.name.clone(),
                    category: cat.clone(),
                    level: lv.level.clone(),
                    template_count,
                    before_count,
                    before_total: level_total,
                    after_count,
                    deviation,
                    before_smd: smd(p_level, p_pop, sd),
                    after_smd: smd(p_after, p_template, sd),
                });
            }
        }
        level_deviations.push((lv.level.clone(), deviation_sum));
    }
    Ok(BalanceReport { template_size: t, rows, level_deviations })
}

/// Writes the report as CSV, one row per (covariate category, level), ready
/// for plotting. Undefined standardized differences are left empty.
pub fn write_balance_csv(report: &BalanceReport, writer: impl Write) -> Result<(), DesignError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "covariate",
        "category",
        "level",
        "template_count",
        "before_count",
        "before_total",
        "after_count",
        "deviation",
        "before_smd",
        "after_smd",
    ])
    .map_err(DataError::from)?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in &report.rows {
        w.write_record([
            r.covariate.as_str(),
            r.category.as_str(),
            r.level.as_str(),
            &r.template_count.to_string(),
            &r.before_count.to_string(),
            &r.before_total.to_string(),
            &r.after_count.to_string(),
            &r.deviation.to_string(),
            &fmt(r.before_smd),
            &fmt(r.after_smd),
        ])
        .map_err(DataError::from)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Covariate, CovariateSchema, Unit};
    use crate::design::{build_design, DesignConfig};

    fn dataset() -> Dataset {
        let schema = CovariateSchema {
            covariates: vec![
                Covariate {
                    name: "a".into(),
                    categories: vec!["x".into(), "y".into()],
                    missing_category: None,
                },
                Covariate {
                    name: "b".into(),
                    categories: vec!["0".into(), "1".into(), "2".into()],
                    missing_category: None,
                },
            ],
        };
        let mut units = Vec::new();
        for (g, level) in ["lo", "hi"].iter().enumerate() {
            for i in 0..12 {
                units.push(Unit {
                    id: format!("{level}-{i}"),
                    x: vec![((g + i) % 2) as u16, ((g * i) % 3) as u16],
                    outcomes: vec![Some(i as f64)],
                    exposure: Some(level.to_string()),
                });
            }
        }
        Dataset {
            schema,
            outcome_names: vec!["y".into()],
            exposure_levels: vec!["lo".into(), "hi".into()],
            units,
        }
    }

    #[test]
    fn deviations_sum_to_the_solver_objective() {
        let ds = dataset();
        let mut cfg = DesignConfig::new(6);
        cfg.candidates = 25;
        let design = build_design(&ds, &cfg).unwrap();
        let report = balance_report(&design, &ds).unwrap();
        for (lv, (name, dev)) in design.levels.iter().zip(&report.level_deviations) {
            assert_eq!(&lv.level, name);
            assert_eq!(lv.objective, *dev, "level {name}");
        }
        // Per covariate and level, the after counts sum to the template
        // size.
        for lv in &design.levels {
            for cov in &ds.schema.covariates {
                let total: u64 = report
                    .rows
                    .iter()
                    .filter(|r| r.level == lv.level && r.covariate == cov.name)
                    .map(|r| r.after_count)
                    .sum();
                assert_eq!(total, 6);
            }
        }
    }

    #[test]
    fn smd_handles_degenerate_denominators() {
        assert_eq!(smd(0.25, 0.25, 0.0), Some(0.0));
        assert_eq!(smd(0.5, 0.25, 0.0), None);
        let v = smd(0.75, 0.25, 0.5).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_match_has_exactly_zero_after_smd() {
        let ds = dataset();
        let mut cfg = DesignConfig::new(6);
        cfg.candidates = 25;
        let design = build_design(&ds, &cfg).unwrap();
        let report = balance_report(&design, &ds).unwrap();
        for (row, lv) in report.rows.iter().map(|r| {
            let lv = design.levels.iter().find(|l| l.level == r.level).unwrap();
            (r, lv)
        }) {
            if lv.objective == 0 {
                assert_eq!(row.after_smd, Some(0.0), "{}={} in {}", row.covariate, row.category, row.level);
            }
        }
    }

    #[test]
    fn csv_export_has_one_row_per_cell() {
        let ds = dataset();
        let mut cfg = DesignConfig::new(4);
        cfg.candidates = 10;
        let design = build_design(&ds, &cfg).unwrap();
        let report = balance_report(&design, &ds).unwrap();
        let mut buf = Vec::new();
        write_balance_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        // Header plus (2 + 3) categories x 2 levels.
        assert_eq!(text.lines().count(), 1 + 5 * 2);
        assert!(text.starts_with("covariate,category,level,"));
    }
}
