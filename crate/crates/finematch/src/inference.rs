//! Rank-based inference on matched designs.
//!
//! Matched groups are slot-aligned: the unit in slot `s` of every exposure
//! level belongs to the same matched set, so outcome comparisons are paired.
//! Three procedures are provided, all distribution-free:
//!
//! * [`hodges_lehmann`]: the median of Walsh averages of paired differences,
//!   a robust location estimate for one contrast.
//! * [`simultaneous_contrasts`]: within every matched set the group outcomes
//!   are midranked; each non-reference group's rank sum is compared to the
//!   reference's, and the familywise threshold comes from Monte Carlo
//!   permutation of the ranks within sets. Confidence intervals invert
//!   signed-rank tests at the adjusted per-contrast level, so they match the
//!   simultaneous test's error control.
//! * [`rosenbaum_bounds`]: for one contrast, how strongly an unobserved
//!   binary confounder would have to influence exposure (the odds multiplier
//!   `gamma`) before it could explain away the observed signed-rank
//!   statistic.
//!
//! Permutation draws use one counter-derived random stream per draw, so
//! results are identical for any worker count.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::data::Dataset;
use crate::design::{DesignError, MatchedDesign};
use crate::rng;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error("outcome {name} is not declared by the dataset")]
    UnknownOutcome { name: String },
    #[error("level {name} is not part of the design")]
    UnknownLevel { name: String },
    #[error("inference needs at least two exposure levels, found {found}")]
    NotEnoughGroups { found: usize },
    #[error("no matched set has a complete outcome across all levels")]
    NoCompleteSets,
    #[error("paired differences are empty")]
    EmptyDifferences,
    #[error("alpha must be strictly between 0 and 1, got {alpha}")]
    BadAlpha { alpha: f64 },
    #[error("{got} Monte Carlo draws requested; at least {min} are required")]
    TooFewDraws { got: usize, min: usize },
}

/// Slot-aligned outcomes of every exposure level, with incomplete matched
/// sets dropped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchedGroups {
    /// Level names, in the design's order; the first is the reference.
    pub levels: Vec<String>,
    /// `outcomes[g][s]` is the outcome of level `g`'s unit in kept set `s`.
    pub outcomes: Vec<Vec<f64>>,
    /// Number of matched sets kept.
    pub n_sets: usize,
    /// Sets dropped because some level's unit lacked the outcome.
    pub dropped_sets: usize,
}

impl MatchedGroups {
    /// Paired differences `level_u - level_v` across matched sets.
    pub fn pair_differences(&self, u: usize, v: usize) -> Vec<f64> {
        self.outcomes[u]
            .iter()
            .zip(&self.outcomes[v])
            .map(|(a, b)| a - b)
            .collect()
    }

    pub fn level_index(&self, name: &str) -> Result<usize, InferenceError> {
        self.levels
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| InferenceError::UnknownLevel { name: name.to_string() })
    }
}

/// Collects one outcome across a design's matched groups, slot by slot.
pub fn extract_groups(
    design: &MatchedDesign,
    dataset: &Dataset,
    outcome: &str,
) -> Result<MatchedGroups, InferenceError> {
    let outcome_idx = dataset
        .outcome_index(outcome)
        .ok_or_else(|| InferenceError::UnknownOutcome { name: outcome.to_string() })?;
    if design.levels.len() < 2 {
        return Err(InferenceError::NotEnoughGroups { found: design.levels.len() });
    }
    let (_, per_level) = design.resolve(dataset)?;
    let t = design.template_size;
    let mut outcomes: Vec<Vec<f64>> = vec![Vec::with_capacity(t); per_level.len()];
    let mut dropped = 0usize;
    for slot in 0..t {
        let values: Vec<Option<f64>> = per_level
            .iter()
            .map(|indices| dataset.units[indices[slot]].outcomes[outcome_idx])
            .collect();
        if values.iter().all(Option::is_some) {
            for (g, v) in values.into_iter().enumerate() {
                outcomes[g].push(v.unwrap());
            }
        } else {
            dropped += 1;
        }
    }
    let n_sets = t - dropped;
    if n_sets == 0 {
        return Err(InferenceError::NoCompleteSets);
    }
    Ok(MatchedGroups {
        levels: design.levels.iter().map(|l| l.level.clone()).collect(),
        outcomes,
        n_sets,
        dropped_sets: dropped,
    })
}

/// Walsh averages `(d_i + d_j) / 2` for `i <= j`, ascending.
fn walsh_averages(diffs: &[f64]) -> Vec<f64> {
    let n = diffs.len();
    let mut walsh = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            walsh.push((diffs[i] + diffs[j]) / 2.0);
        }
    }
    walsh.sort_by(f64::total_cmp);
    walsh
}

/// Hodges-Lehmann estimate: the median of the Walsh averages.
pub fn hodges_lehmann(diffs: &[f64]) -> Result<f64, InferenceError> {
    if diffs.is_empty() {
        return Err(InferenceError::EmptyDifferences);
    }
    let walsh = walsh_averages(diffs);
    let m = walsh.len();
    Ok(if m % 2 == 1 { walsh[m / 2] } else { (walsh[m / 2 - 1] + walsh[m / 2]) / 2.0 })
}

/// Midranks of `values`: ties share the average of the ranks they occupy.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) hold ranks i+1..=j+1; ties share the mean.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// One non-reference level's comparison against the reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Contrast {
    pub level: String,
    /// Rank-sum difference `R_level - R_reference` across matched sets.
    pub rank_sum_delta: f64,
    /// Whether `|rank_sum_delta|` reaches the familywise threshold.
    pub significant: bool,
    /// Hodges-Lehmann estimate of the paired shift vs. the reference.
    pub estimate: f64,
    /// Signed-rank confidence interval at the adjusted level.
    pub ci_lower: f64,
    pub ci_upper: f64,
}

/// Result of [`simultaneous_contrasts`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContrastReport {
    pub outcome: String,
    pub reference: String,
    pub alpha: f64,
    pub mc_draws: usize,
    pub seed: u64,
    /// Familywise critical value for `|rank_sum_delta|`.
    pub threshold: f64,
    /// Estimated per-contrast level implied by the familywise threshold;
    /// the confidence intervals invert signed-rank tests at this level.
    pub alpha_adjusted: f64,
    pub n_sets: usize,
    pub dropped_sets: usize,
    pub contrasts: Vec<Contrast>,
}

/// Options for [`simultaneous_contrasts`].
#[derive(Debug, Clone)]
pub struct ContrastConfig {
    pub alpha: f64,
    pub mc_draws: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        ContrastConfig { alpha: 0.05, mc_draws: 20_000, seed: 0, workers: 1 }
    }
}

/// Minimum Monte Carlo draws accepted; below this the tail quantile is too
/// coarse to be meaningful.
pub const MIN_MC_DRAWS: usize = 1000;

/// Tests every level against the reference (the first level) with familywise
/// error control.
///
/// Within each matched set the level outcomes are midranked; the statistic
/// of level `u` is `D_u = R_u - R_1`, the difference in total rank. Under
/// the null hypothesis of no effect the ranks within a set are exchangeable,
/// so the reference distribution of `max_u |D_u|` is sampled by permuting
/// ranks within sets (`mc_draws` times); the threshold is its upper-`alpha`
/// Monte Carlo quantile. The adjusted per-contrast level is the pooled
/// marginal exceedance rate of the threshold, and each contrast's interval
/// inverts the signed-rank test at that level.
pub fn simultaneous_contrasts(
    groups: &MatchedGroups,
    outcome: &str,
    cfg: &ContrastConfig,
) -> Result<ContrastReport, InferenceError> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(InferenceError::BadAlpha { alpha: cfg.alpha });
    }
    if cfg.mc_draws < MIN_MC_DRAWS {
        return Err(InferenceError::TooFewDraws { got: cfg.mc_draws, min: MIN_MC_DRAWS });
    }
    let g = groups.levels.len();
    if g < 2 {
        return Err(InferenceError::NotEnoughGroups { found: g });
    }
    let n = groups.n_sets;

    // ranks[s][u]: midrank of level u's outcome within matched set s.
    let ranks: Vec<Vec<f64>> = (0..n)
        .map(|s| {
            let values: Vec<f64> = (0..g).map(|u| groups.outcomes[u][s]).collect();
            midranks(&values)
        })
        .collect();
    let rank_sums: Vec<f64> =
        (0..g).map(|u| (0..n).map(|s| ranks[s][u]).sum()).collect();
    let observed: Vec<f64> = (1..g).map(|u| rank_sums[u] - rank_sums[0]).collect();

    // Monte Carlo: permute ranks within every set; record each draw's
    // per-contrast statistics. One stream per draw keeps the result
    // independent of how draws are split across workers.
    let draw_stats = |b: usize| -> Vec<f64> {
        let mut stream = rng::stream(cfg.seed, b as u64);
        let mut sums = vec![0.0; g];
        let mut perm: Vec<usize> = (0..g).collect();
        for set_ranks in &ranks {
            for (i, p) in perm.iter_mut().enumerate() {
                *p = i;
            }
            rng::shuffle(&mut stream, &mut perm);
            for (u, &p) in perm.iter().enumerate() {
                sums[u] += set_ranks[p];
            }
        }
        (1..g).map(|u| (sums[u] - sums[0]).abs()).collect()
    };
    let per_draw: Vec<Vec<f64>> = parallel_map_indexed(cfg.mc_draws, cfg.workers, &draw_stats);

    let mut max_stats: Vec<f64> =
        per_draw.iter().map(|d| d.iter().copied().fold(0.0, f64::max)).collect();
    max_stats.sort_by(f64::total_cmp);
    // Smallest value reached by at most an alpha fraction of draws: the
    // ceil((1 - alpha) * mc)-th smallest maximum.
    let pos = ((1.0 - cfg.alpha) * cfg.mc_draws as f64).ceil() as usize;
    let threshold = max_stats[(pos.max(1) - 1).min(cfg.mc_draws - 1)];

    // Pooled marginal exceedance of the familywise threshold.
    let exceed: usize = per_draw
        .iter()
        .flat_map(|d| d.iter())
        .filter(|&&v| v >= threshold)
        .count();
    let alpha_adjusted =
        (exceed as f64 / (cfg.mc_draws * (g - 1)) as f64).clamp(1e-12, cfg.alpha.max(1e-12));

    let mut contrasts = Vec::with_capacity(g - 1);
    for (u, &delta) in observed.iter().enumerate() {
        let diffs = groups.pair_differences(u + 1, 0);
        let estimate = hodges_lehmann(&diffs)?;
        let (ci_lower, ci_upper) = signed_rank_interval(&diffs, alpha_adjusted)?;
        contrasts.push(Contrast {
            level: groups.levels[u + 1].clone(),
            rank_sum_delta: delta,
            significant: delta.abs() >= threshold,
            estimate,
            ci_lower,
            ci_upper,
        });
    }
    Ok(ContrastReport {
        outcome: outcome.to_string(),
        reference: groups.levels[0].clone(),
        alpha: cfg.alpha,
        mc_draws: cfg.mc_draws,
        seed: cfg.seed,
        threshold,
        alpha_adjusted,
        n_sets: n,
        dropped_sets: groups.dropped_sets,
        contrasts,
    })
}

/// Evaluates `f` on `0..count` across up to `workers` threads, preserving
/// index order.
fn parallel_map_indexed<R: Send>(
    count: usize,
    workers: usize,
    f: &(impl Fn(usize) -> R + Sync),
) -> Vec<R> {
    let workers = workers.clamp(1, count.max(1));
    if workers == 1 {
        return (0..count).map(f).collect();
    }
    let chunk = count.div_ceil(workers);
    let mut parts: Vec<Vec<R>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let f = &f;
                scope.spawn(move || {
                    let lo = w * chunk;
                    let hi = ((w + 1) * chunk).min(count);
                    (lo..hi).map(f).collect::<Vec<R>>()
                })
            })
            .collect();
        for h in handles {
            parts.push(h.join().expect("worker panicked"));
        }
    });
    parts.into_iter().flatten().collect()
}

/// Signed-rank confidence interval for a paired shift: the Walsh-average
/// order statistics `[W_(k+1), W_(M-k)]`, with `k` from the normal
/// approximation to the signed-rank distribution at level `alpha`.
pub fn signed_rank_interval(diffs: &[f64], alpha: f64) -> Result<(f64, f64), InferenceError> {
    if diffs.is_empty() {
        return Err(InferenceError::EmptyDifferences);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(InferenceError::BadAlpha { alpha });
    }
    let n = diffs.len() as f64;
    let walsh = walsh_averages(diffs);
    let m_total = walsh.len();
    let mean = n * (n + 1.0) / 4.0;
    let sd = (n * (n + 1.0) * (2.0 * n + 1.0) / 24.0).sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let z = normal.inverse_cdf(alpha / 2.0);
    let k = (mean + sd * z + 0.5).floor().max(0.0) as usize;
    let k = k.min((m_total - 1) / 2);
    Ok((walsh[k], walsh[m_total - 1 - k]))
}

/// Result of a sensitivity analysis for one contrast.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub outcome: String,
    pub level: String,
    pub reference: String,
    pub alpha: f64,
    /// Direction being tested: `1.0` when the effect estimate is positive,
    /// `-1.0` when negative (differences are mirrored internally).
    pub direction: f64,
    /// Largest odds multiplier at which the effect stays significant.
    pub gamma_critical: f64,
    /// True when the search hit its upper cap without losing significance.
    pub capped: bool,
    /// Upper-bound p-values on a grid of gamma values, for plotting.
    pub curve: Vec<GammaPoint>,
    pub n_pairs: usize,
    pub dropped_zero_pairs: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GammaPoint {
    pub gamma: f64,
    pub upper_p: f64,
}

/// Worst-case upper bound on the one-sided signed-rank p-value when an
/// unobserved confounder multiplies exposure odds within a pair by at most
/// `gamma`.
///
/// Zero differences carry no sign information and are dropped; the
/// remaining absolute differences are midranked, the statistic is the rank
/// sum over positive differences, and its worst-case null mean and variance
/// follow from each pair's sign being positive with probability
/// `gamma / (1 + gamma)`. The bound uses a normal approximation with
/// continuity correction. At `gamma = 1` it reduces to the ordinary
/// signed-rank test.
pub fn upper_p_at_gamma(diffs: &[f64], gamma: f64) -> Result<f64, InferenceError> {
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    if nonzero.is_empty() {
        return Err(InferenceError::EmptyDifferences);
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let q = midranks(&abs);
    let statistic: f64 =
        nonzero.iter().zip(&q).filter(|(d, _)| **d > 0.0).map(|(_, &r)| r).sum();
    let kappa = gamma / (1.0 + gamma);
    let q_sum: f64 = q.iter().sum();
    let q_sq: f64 = q.iter().map(|r| r * r).sum();
    let mean = kappa * q_sum;
    let var = kappa * (1.0 - kappa) * q_sq;
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let z = (statistic - mean - 0.5) / var.sqrt();
    Ok(1.0 - normal.cdf(z))
}

/// Options for [`rosenbaum_bounds`].
#[derive(Debug, Clone)]
pub struct SensitivityConfig {
    pub alpha: f64,
    /// Gamma grid step for the reported curve.
    pub grid_step: f64,
    /// Bisection stops when the bracket is narrower than this.
    pub tolerance: f64,
    /// Upper cap on the search; effects this robust are flagged `capped`.
    pub gamma_cap: f64,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig { alpha: 0.05, grid_step: 0.25, tolerance: 0.01, gamma_cap: 1000.0 }
    }
}

/// Finds the critical odds multiplier at which the one-sided signed-rank
/// bound for `diffs` first exceeds `alpha`. The tested direction follows the
/// sign of the Hodges-Lehmann estimate; negative effects are mirrored.
pub fn rosenbaum_bounds(
    outcome: &str,
    level: &str,
    reference: &str,
    diffs: &[f64],
    cfg: &SensitivityConfig,
) -> Result<SensitivityReport, InferenceError> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(InferenceError::BadAlpha { alpha: cfg.alpha });
    }
    let estimate = hodges_lehmann(diffs)?;
    let direction = if estimate < 0.0 { -1.0 } else { 1.0 };
    let oriented: Vec<f64> = diffs.iter().map(|d| d * direction).collect();
    let n_pairs = oriented.len();
    let dropped_zero_pairs = oriented.iter().filter(|&&d| d == 0.0).count();
    if n_pairs == dropped_zero_pairs {
        return Err(InferenceError::EmptyDifferences);
    }

    let p_at = |gamma: f64| upper_p_at_gamma(&oriented, gamma);

    // Bisect for the crossing of the monotone bound with alpha.
    let mut lo = 1.0;
    let mut capped = false;
    let gamma_critical = if p_at(lo)? > cfg.alpha {
        // Not significant even without hidden bias.
        1.0
    } else {
        let mut hi = 2.0;
        while p_at(hi)? <= cfg.alpha {
            if hi >= cfg.gamma_cap {
                capped = true;
                break;
            }
            lo = hi;
            hi = (hi * 2.0).min(cfg.gamma_cap);
        }
        if capped {
            cfg.gamma_cap
        } else {
            while hi - lo > cfg.tolerance {
                let mid = (lo + hi) / 2.0;
                if p_at(mid)? <= cfg.alpha {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        }
    };

    let mut curve = Vec::new();
    let mut gamma = 1.0;
    let top = (gamma_critical + 2.0 * cfg.grid_step).min(cfg.gamma_cap);
    while gamma <= top + 1e-12 {
        curve.push(GammaPoint { gamma, upper_p: p_at(gamma)? });
        gamma += cfg.grid_step;
    }
    Ok(SensitivityReport {
        outcome: outcome.to_string(),
        level: level.to_string(),
        reference: reference.to_string(),
        alpha: cfg.alpha,
        direction,
        gamma_critical,
        capped,
        curve,
        n_pairs,
        dropped_zero_pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hodges_lehmann_matches_direct_enumeration() {
        let diffs = [3.0, -1.0, 2.0, 7.0];
        // Walsh averages, enumerated by hand and sorted.
        let mut walsh = Vec::new();
        for i in 0..4 {
            for j in i..4 {
                walsh.push((diffs[i] + diffs[j]) / 2.0);
            }
        }
        walsh.sort_by(f64::total_cmp);
        let expect = (walsh[4] + walsh[5]) / 2.0;
        assert_abs_diff_eq!(hodges_lehmann(&diffs).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn midranks_average_ties() {
        let r = midranks(&[10.0, 20.0, 20.0, 5.0]);
        assert_eq!(r, vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn contrasts_are_worker_independent_and_detect_a_shift() {
        // Three groups; the third is shifted well away from the reference.
        let n = 40;
        let mut outcomes = vec![Vec::new(), Vec::new(), Vec::new()];
        let mut r = rng::seeded(5);
        for s in 0..n {
            let base = rng::normal_f64(&mut r);
            outcomes[0].push(base + 0.01 * s as f64);
            outcomes[1].push(base + 0.3 * rng::normal_f64(&mut r));
            outcomes[2].push(base + 3.0 + 0.3 * rng::normal_f64(&mut r));
        }
        let groups = MatchedGroups {
            levels: vec!["ref".into(), "near".into(), "far".into()],
            outcomes,
            n_sets: n,
            dropped_sets: 0,
        };
        let mut cfg = ContrastConfig { alpha: 0.05, mc_draws: 2000, seed: 11, workers: 1 };
        let serial = simultaneous_contrasts(&groups, "y", &cfg).unwrap();
        cfg.workers = 4;
        let parallel = simultaneous_contrasts(&groups, "y", &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&serial).unwrap(),
            serde_json::to_string(&parallel).unwrap()
        );
        let far = &serial.contrasts[1];
        assert!(far.significant, "large shift must be detected");
        assert!(far.estimate > 2.0 && far.estimate < 4.0);
        assert!(far.ci_lower > 0.0);
        assert!(far.ci_lower <= far.estimate && far.estimate <= far.ci_upper);
    }

    #[test]
    fn interval_covers_the_estimate_and_narrows_with_alpha() {
        let mut r = rng::seeded(9);
        let diffs: Vec<f64> = (0..30).map(|_| 1.0 + rng::normal_f64(&mut r)).collect();
        let hl = hodges_lehmann(&diffs).unwrap();
        let (lo_90, hi_90) = signed_rank_interval(&diffs, 0.10).unwrap();
        let (lo_99, hi_99) = signed_rank_interval(&diffs, 0.01).unwrap();
        assert!(lo_90 <= hl && hl <= hi_90);
        assert!(lo_99 <= lo_90 && hi_90 <= hi_99, "wider at stricter alpha");
    }

    #[test]
    fn gamma_one_is_the_plain_signed_rank_bound() {
        let diffs = [1.5, 2.0, -0.5, 3.0, 1.0, -0.25, 0.75];
        let p = upper_p_at_gamma(&diffs, 1.0).unwrap();
        // Independent computation of the same normal bound.
        let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
        let q = midranks(&abs);
        let t: f64 = diffs
            .iter()
            .zip(&q)
            .filter(|(d, _)| **d > 0.0)
            .map(|(_, &r)| r)
            .sum();
        let n = diffs.len() as f64;
        let mean = n * (n + 1.0) / 4.0;
        let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
        let normal = Normal::new(0.0, 1.0).unwrap();
        let expect = 1.0 - normal.cdf((t - mean - 0.5) / var.sqrt());
        assert_abs_diff_eq!(p, expect, epsilon = 1e-12);
    }

    #[test]
    fn bounds_rise_with_gamma_and_cross_alpha() {
        let mut r = rng::seeded(3);
        let diffs: Vec<f64> = (0..60).map(|_| 2.0 + rng::normal_f64(&mut r)).collect();
        let report =
            rosenbaum_bounds("y", "hi", "lo", &diffs, &SensitivityConfig::default()).unwrap();
        assert!(report.gamma_critical > 1.0);
        assert!(!report.capped);
        for w in report.curve.windows(2) {
            assert!(w[0].upper_p <= w[1].upper_p + 1e-12, "bound must be monotone in gamma");
        }
        let at_crit = upper_p_at_gamma(&diffs, report.gamma_critical).unwrap();
        assert!(at_crit <= 0.05 + 1e-9);
    }

    #[test]
    fn negative_effects_are_mirrored() {
        let mut r = rng::seeded(4);
        let diffs: Vec<f64> = (0..60).map(|_| -2.0 + rng::normal_f64(&mut r)).collect();
        let report =
            rosenbaum_bounds("y", "hi", "lo", &diffs, &SensitivityConfig::default()).unwrap();
        assert_eq!(report.direction, -1.0);
        assert!(report.gamma_critical > 1.0);
    }

    #[test]
    fn draw_floor_is_enforced() {
        let groups = MatchedGroups {
            levels: vec!["a".into(), "b".into()],
            outcomes: vec![vec![1.0, 2.0], vec![2.0, 3.0]],
            n_sets: 2,
            dropped_sets: 0,
        };
        let cfg = ContrastConfig { mc_draws: 10, ..ContrastConfig::default() };
        assert!(matches!(
            simultaneous_contrasts(&groups, "y", &cfg),
            Err(InferenceError::TooFewDraws { got: 10, min: 1000 })
        ));
    }
}
