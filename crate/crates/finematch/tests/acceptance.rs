//! Acceptance gate: one test per headline guarantee, each printing a single
//! PASS line with its measured evidence (run with `--nocapture` to see them).
//!
//! Expected constants were frozen ahead of time from independent oracles
//! (exact rational vertex enumeration, combinatorial brute force), never from
//! the code under test.

use std::time::Instant;

use finematch::bench::{generate_study, superset_study, StudyConfig};
use finematch::data::{Covariate, CovariateSchema};
use finematch::design::{
    build_design, match_level, DesignConfig, MatchConfig, MatchedDesign, TemplateSelection,
};
use finematch::diagnostics::balance_report;
use finematch::inference::{
    extract_groups, hodges_lehmann, rosenbaum_bounds, simultaneous_contrasts, upper_p_at_gamma,
    ContrastConfig, MatchedGroups, SensitivityConfig,
};
use finematch::lp::{solve_lp, LpStatus, SimplexConfig};
use finematch::mip::{solve_mip, BnbConfig, MipStatus};
use finematch::model::counterexample::{self, TotalConvention};
use finematch::model::{build_model, Formulation, ModelConfig, ModelError};
use finematch::rng;
use statrs::distribution::{ContinuousCDF, Normal};

mod support;

fn worker_count() -> usize {
    std::thread::available_parallelism().map(|n| n.get().min(8)).unwrap_or(1)
}

/// The selection relaxation of the three-covariate counterexample instance
/// has exactly 31 vertices, of which 11 are fractional (all half-integer,
/// including the all-halves point with zero deviation), while the
/// single-unit convention yields 6 vertices, all integral.
#[test]
fn criterion_1_counterexample_vertex_census() {
    let clock = Instant::now();

    let model = counterexample::model(TotalConvention::TemplateSize);
    let cfg = finematch::lp::VertexConfig::default();
    let set = finematch::lp::enumerate_vertices(&model.lp, &cfg).unwrap();
    assert_eq!(set.len(), 31, "template-size convention: total vertices");
    assert_eq!(set.integral_count, 20, "template-size convention: integral vertices");
    assert_eq!(set.fractional_count, 11, "template-size convention: fractional vertices");

    // Every fractional vertex is half-integer, and the all-halves point with
    // zero total deviation is among them.
    let mut saw_all_halves = false;
    for v in set.fractional() {
        for (j, &x) in v.x.iter().enumerate() {
            let doubled = 2.0 * x;
            assert!(
                (doubled - doubled.round()).abs() < 1e-7,
                "fractional vertex coordinate {j} = {x} is not half-integer"
            );
        }
        let z_half = (0..model.l).all(|l| (v.x[l] - 0.5).abs() < 1e-7);
        let v_zero = (model.l..model.lp.n).all(|j| v.x[j].abs() < 1e-7);
        if z_half && v_zero {
            saw_all_halves = true;
        }
    }
    assert!(saw_all_halves, "all-halves vertex with zero deviation missing");

    let single = counterexample::model(TotalConvention::One);
    let set1 = finematch::lp::enumerate_vertices(&single.lp, &cfg).unwrap();
    assert_eq!(set1.len(), 6, "single-unit convention: total vertices");
    assert_eq!(set1.fractional_count, 0, "single-unit convention: fractional vertices");

    let secs = clock.elapsed().as_secs_f64();
    assert!(secs < 10.0, "vertex census took {secs:.2}s, limit 10s");
    println!(
        "PASS criterion 1: counterexample vertex census 31 total / 11 fractional \
         (template-size), 6 / 0 (single-unit) in {secs:.2}s"
    );
}

/// A synthetic study at the published case-study scale (78 categories over
/// 14 covariates, template size 1000, comparison level of 70118 units) runs
/// the full pipeline in under five minutes, while the pairwise formulation
/// on the same instance is refused by the size guard with a predicted-size
/// diagnostic instead of exhausting memory.
#[test]
fn criterion_5_full_scale_pipeline_and_size_guard() {
    let clock = Instant::now();
    let study = StudyConfig::balanced(2026, &[70118, 70118]);
    let dataset = generate_study(&study);
    assert_eq!(dataset.schema.n_covariates(), 14);
    assert_eq!(dataset.schema.total_categories(), 78);

    // The pairwise formulation would need T*L + sum K variables; the guard
    // must refuse it up front and quote the predicted allocation.
    let levels = dataset.levels();
    let big_level = &levels.iter().find(|(name, _)| name == "g2").unwrap().1;
    assert_eq!(big_level.len(), 70118);
    let level_x = dataset.profiles(big_level);
    let template_x: Vec<Vec<u16>> =
        level_x.iter().take(1000).cloned().collect();
    match build_model(
        &dataset.schema,
        &template_x,
        &level_x,
        Formulation::Assignment,
        &ModelConfig::default(),
    ) {
        Err(ModelError::SizeGuard { n_vars, predicted_memory_bytes, .. }) => {
            assert_eq!(n_vars, 70_118_078, "pairwise variable count");
            assert!(
                predicted_memory_bytes > 1 << 40,
                "predicted allocation should be terabytes, got {predicted_memory_bytes}"
            );
        }
        other => panic!("expected a size-guard refusal, got {other:?}"),
    }

    // Full pipeline on the linear formulation: template selection, both
    // level matches, balance, simultaneous contrasts, sensitivity.
    let mut cfg = DesignConfig::new(1000);
    cfg.seed = 90;
    cfg.workers = worker_count();
    let design = build_design(&dataset, &cfg).unwrap();
    assert_eq!(design.levels.len(), 2);
    for lv in &design.levels {
        assert_eq!(lv.unit_indices.len(), 1000);
        assert_eq!(
            lv.status,
            finematch::mip::MipStatus::Optimal,
            "level {} must be solved to proven optimality",
            lv.level
        );
    }

    let balance = balance_report(&design, &dataset).unwrap();
    let worst = balance.worst_after_smd().unwrap_or(0.0);
    assert!(worst < 0.1, "worst after-matching SMD {worst} out of range");

    let groups = extract_groups(&design, &dataset, "y").unwrap();
    let mut ccfg = ContrastConfig { mc_draws: 2000, workers: cfg.workers, ..Default::default() };
    ccfg.seed = 41;
    let contrasts = simultaneous_contrasts(&groups, "y", &ccfg).unwrap();
    assert_eq!(contrasts.contrasts.len(), 1);

    let g2 = groups.level_index("g2").unwrap();
    let diffs = groups.pair_differences(g2, 0);
    let sens =
        rosenbaum_bounds("y", "g2", "g1", &diffs, &SensitivityConfig::default()).unwrap();
    assert!(sens.gamma_critical >= 1.0);

    let secs = clock.elapsed().as_secs_f64();
    assert!(secs < 300.0, "full-scale pipeline took {secs:.1}s, limit 300s");
    let objectives: Vec<u64> = design.levels.iter().map(|l| l.objective).collect();
    println!(
        "PASS criterion 5: template 1000 matched against two levels of 70118 units \
         (objectives {objectives:?}, worst after-SMD {worst:.4}) with the pairwise build \
         refused by the size guard, in {secs:.1}s"
    );
}

// ---------------------------------------------------------------------------
// Shared instance generators for the randomized criteria.
// ---------------------------------------------------------------------------

/// Random schema with `1..=max_p` covariates of `2..=max_k` categories each.
fn random_schema(rng: &mut finematch::rng::Rng, max_p: usize, max_k: usize) -> CovariateSchema {
    let p = 1 + rng::uniform_usize(rng, max_p);
    let covariates = (0..p)
        .map(|i| {
            let k = 2 + rng::uniform_usize(rng, max_k - 1);
            Covariate {
                name: format!("c{i}"),
                categories: (0..k).map(|c| format!("k{c}")).collect(),
                missing_category: None,
            }
        })
        .collect();
    CovariateSchema { covariates }
}

/// `count` uniformly random profiles over the schema's categories.
fn random_profiles(
    rng: &mut finematch::rng::Rng,
    schema: &CovariateSchema,
    count: usize,
) -> Vec<Vec<u16>> {
    (0..count)
        .map(|_| {
            (0..schema.n_covariates())
                .map(|p| rng::uniform_usize(rng, schema.n_categories(p)) as u16)
                .collect()
        })
        .collect()
}

/// Random template/level sizes with `1 <= t <= 6` and `t <= l <= 12`.
fn random_sizes(rng: &mut finematch::rng::Rng) -> (usize, usize) {
    let t = 1 + rng::uniform_usize(rng, 6);
    let l = t + rng::uniform_usize(rng, 12 - t + 1);
    (t, l)
}

/// The pairwise (slot-by-slot) relaxation and the aggregated selection
/// relaxation have the same optimal value on random instances, and the
/// selection optimum disaggregates into slot weights that satisfy every
/// pairwise constraint with identical objective.
#[test]
fn criterion_2_relaxations_match_and_disaggregate() {
    let clock = Instant::now();
    let mut rng = rng::seeded(202);
    let instances = 220;
    let mut worst_gap = 0.0f64;
    let cfg = ModelConfig::default();
    let simplex_cfg = SimplexConfig::default();

    for trial in 0..instances {
        let schema = random_schema(&mut rng, 3, 3);
        let (t, l) = random_sizes(&mut rng);
        let template = random_profiles(&mut rng, &schema, t);
        let level = random_profiles(&mut rng, &schema, l);

        let sel =
            build_model(&schema, &template, &level, Formulation::Selection, &cfg).unwrap();
        let asg =
            build_model(&schema, &template, &level, Formulation::Assignment, &cfg).unwrap();
        let sel_lp = solve_lp(&sel.lp, &simplex_cfg).unwrap();
        let asg_lp = solve_lp(&asg.lp, &simplex_cfg).unwrap();
        assert_eq!(sel_lp.status, LpStatus::Optimal, "trial {trial}: selection relaxation");
        assert_eq!(asg_lp.status, LpStatus::Optimal, "trial {trial}: pairwise relaxation");

        let gap = (sel_lp.objective_value - asg_lp.objective_value).abs();
        assert!(
            gap <= 1e-7,
            "trial {trial}: relaxation optima differ by {gap:.3e} \
             (selection {} vs pairwise {})",
            sel_lp.objective_value,
            asg_lp.objective_value
        );
        worst_gap = worst_gap.max(gap);

        // Disaggregate the (possibly fractional) selection optimum into
        // slot weights and check the pairwise constraints directly.
        let z: Vec<f64> = sel_lp.x[..sel.l].to_vec();
        let lifted = sel.lift_selection(&z).unwrap();
        for (s, w) in lifted.slot_totals(sel.t).iter().enumerate() {
            assert!((w - 1.0).abs() <= 1e-6, "trial {trial}: slot {s} total {w}");
        }
        for (i, w) in lifted.unit_totals(sel.l).iter().enumerate() {
            assert!(
                (w - z[i]).abs() <= 1e-6,
                "trial {trial}: unit {i} total {w} vs selection weight {}",
                z[i]
            );
        }
        for &(s, i, w) in &lifted.m {
            assert!(s < sel.t && i < sel.l, "trial {trial}: slot weight out of range");
            assert!(
                (-1e-9..=1.0 + 1e-9).contains(&w),
                "trial {trial}: slot weight {w} outside [0, 1]"
            );
        }
        let lifted_objective: f64 = lifted.v.iter().sum();
        assert!(
            (lifted_objective - sel_lp.objective_value).abs() <= 1e-6,
            "trial {trial}: disaggregated objective {lifted_objective} vs LP {}",
            sel_lp.objective_value
        );
    }

    let secs = clock.elapsed().as_secs_f64();
    assert!(secs < 120.0, "criterion 2 took {secs:.1}s, limit 120s");
    println!(
        "PASS criterion 2: {instances} random instances, relaxation optima agree \
         (worst gap {worst_gap:.2e}) and every selection optimum disaggregates, in {secs:.1}s"
    );
}

/// Nested schema: covariate 0 is the finest partition; every later covariate
/// merges consecutive categories of the previous one, so the category
/// systems form a refinement chain. Returns the schema and, per covariate,
/// the map from finest category to that covariate's category.
fn nested_schema(rng: &mut finematch::rng::Rng) -> (CovariateSchema, Vec<Vec<u16>>) {
    let p_count = 2 + rng::uniform_usize(rng, 3);
    let fine = 3 + rng::uniform_usize(rng, 4);
    let mut maps: Vec<Vec<u16>> = vec![(0..fine as u16).collect()];
    let mut sizes = vec![fine];
    for _ in 1..p_count {
        let prev_k = *sizes.last().unwrap();
        let k = 2 + rng::uniform_usize(rng, prev_k - 1);
        // Monotone surjection onto `k` categories: cut the previous category
        // axis at `k - 1` of its `prev_k - 1` internal gaps.
        let mut cuts = rng::sample_without_replacement(rng, prev_k - 1, k - 1);
        cuts.sort_unstable();
        let mut coarse_of = vec![0u16; prev_k];
        let mut cat = 0u16;
        let mut next_cut = 0;
        for (i, slot) in coarse_of.iter_mut().enumerate() {
            *slot = cat;
            if next_cut < cuts.len() && cuts[next_cut] == i {
                cat += 1;
                next_cut += 1;
            }
        }
        let prev_map = maps.last().unwrap();
        let composed: Vec<u16> =
            prev_map.iter().map(|&c| coarse_of[c as usize]).collect();
        maps.push(composed);
        sizes.push(k);
    }
    let covariates = sizes
        .iter()
        .enumerate()
        .map(|(i, &k)| Covariate {
            name: format!("c{i}"),
            categories: (0..k).map(|c| format!("k{c}")).collect(),
            missing_category: None,
        })
        .collect();
    (CovariateSchema { covariates }, maps)
}

/// `count` profiles of a nested instance: each unit draws a finest category
/// and every covariate reads off its merged category.
fn nested_profiles(
    rng: &mut finematch::rng::Rng,
    maps: &[Vec<u16>],
    count: usize,
) -> Vec<Vec<u16>> {
    let fine = maps[0].len();
    (0..count)
        .map(|_| {
            let f = rng::uniform_usize(rng, fine);
            maps.iter().map(|m| m[f]).collect()
        })
        .collect()
}

/// Asserts that the selection relaxation of one instance solves to an
/// integral vertex and that the integer search accepts the root directly.
fn check_integral_root(
    schema: &CovariateSchema,
    template: &[Vec<u16>],
    level: &[Vec<u16>],
    label: &str,
) {
    let model =
        build_model(schema, template, level, Formulation::Selection, &ModelConfig::default())
            .unwrap();
    let lp = solve_lp(&model.lp, &SimplexConfig::default()).unwrap();
    assert_eq!(lp.status, LpStatus::Optimal, "{label}: relaxation status");
    for (j, &x) in lp.x.iter().enumerate() {
        assert!(
            (x - x.round()).abs() <= 1e-6,
            "{label}: optimal vertex has fractional coordinate {j} = {x}"
        );
    }
    let mip = solve_mip(&model, &BnbConfig::default()).unwrap();
    assert_eq!(mip.status, MipStatus::Optimal, "{label}: search status");
    assert_eq!(
        mip.node_count, 1,
        "{label}: search evaluated {} nodes, expected the root alone",
        mip.node_count
    );
    assert!(
        (mip.objective as f64 - lp.objective_value).abs() <= 1e-6,
        "{label}: integer objective {} vs relaxation {}",
        mip.objective,
        lp.objective_value
    );
}

/// On instances with at most two covariates, and on nested instances of any
/// width, the selection relaxation already has integral optimal vertices:
/// the integer search terminates at the root every time.
#[test]
fn criterion_3_integral_relaxations_two_covariate_and_nested() {
    let clock = Instant::now();
    let mut rng = rng::seeded(303);

    let two_covariate = 220;
    for trial in 0..two_covariate {
        let schema = random_schema(&mut rng, 2, 4);
        let (t, l) = random_sizes(&mut rng);
        let template = random_profiles(&mut rng, &schema, t);
        let level = random_profiles(&mut rng, &schema, l);
        check_integral_root(&schema, &template, &level, &format!("two-covariate trial {trial}"));
    }

    let nested = 110;
    for trial in 0..nested {
        let (schema, maps) = nested_schema(&mut rng);
        let (t, l) = random_sizes(&mut rng);
        let template = nested_profiles(&mut rng, &maps, t);
        let level = nested_profiles(&mut rng, &maps, l);
        check_integral_root(&schema, &template, &level, &format!("nested trial {trial}"));
    }

    let secs = clock.elapsed().as_secs_f64();
    assert!(secs < 120.0, "criterion 3 took {secs:.1}s, limit 120s");
    println!(
        "PASS criterion 3: {two_covariate} two-covariate and {nested} nested instances \
         all solved integrally at the root, in {secs:.1}s"
    );
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i as u128 + 1);
    }
    r
}

/// The branch-and-bound solver agrees with exhaustive enumeration on every
/// instance small enough to enumerate.
#[test]
fn criterion_4_search_matches_exhaustive_enumeration() {
    let clock = Instant::now();
    let mut rng = rng::seeded(404);
    let target = 110;
    let mut done = 0usize;
    let mut subsets_total: u128 = 0;
    while done < target {
        let schema = random_schema(&mut rng, 4, 4);
        let l = 2 + rng::uniform_usize(&mut rng, 19);
        let t = 1 + rng::uniform_usize(&mut rng, l);
        if binomial(l, t) > 100_000 {
            continue;
        }
        let template = random_profiles(&mut rng, &schema, t);
        let level = random_profiles(&mut rng, &schema, l);
        let model =
            build_model(&schema, &template, &level, Formulation::Selection, &ModelConfig::default())
                .unwrap();

        let mut best = u64::MAX;
        let mut subset: Vec<usize> = (0..t).collect();
        'outer: loop {
            subsets_total += 1;
            let obj = model.objective_of(&subset).unwrap();
            best = best.min(obj);
            let mut i = t;
            'advance: {
                while i > 0 {
                    i -= 1;
                    if subset[i] != i + l - t {
                        subset[i] += 1;
                        for j in i + 1..t {
                            subset[j] = subset[j - 1] + 1;
                        }
                        break 'advance;
                    }
                }
                break 'outer;
            }
        }

        let mip = solve_mip(&model, &BnbConfig::default()).unwrap();
        assert_eq!(mip.status, MipStatus::Optimal, "instance {done}: search status");
        assert_eq!(
            mip.objective, best,
            "instance {done} (t={t}, l={l}): search found {} but enumeration found {best}",
            mip.objective
        );
        done += 1;
    }

    let secs = clock.elapsed().as_secs_f64();
    assert!(secs < 300.0, "criterion 4 took {secs:.1}s, limit 300s");
    println!(
        "PASS criterion 4: {target} instances ({subsets_total} subsets enumerated) \
         match exhaustive minima exactly, in {secs:.1}s"
    );
}

/// When every level contains an exact copy of the template's profiles, the
/// solver recovers a zero-deviation match in every level regardless of how
/// many levels there are, and the matched balance table is identical across
/// levels with after-matching standardized differences of exactly zero.
#[test]
fn criterion_6_planted_template_recovered_at_any_level_count() {
    let clock = Instant::now();
    let template_size = 24;
    for &n_levels in &[3usize, 5, 10] {
        let study = superset_study(n_levels, template_size, 60, 600 + n_levels as u64);
        let dataset = &study.dataset;
        let match_cfg = MatchConfig {
            formulation: Formulation::Selection,
            model: ModelConfig::default(),
            bnb: BnbConfig::default(),
        };

        let mut levels = Vec::new();
        for (name, indices) in dataset.levels() {
            let lv =
                match_level(dataset, &study.template_profiles, &name, &indices, &match_cfg)
                    .unwrap();
            assert_eq!(lv.status, MipStatus::Optimal, "{n_levels} levels: {name} status");
            assert_eq!(
                lv.objective, 0,
                "{n_levels} levels: {name} deviation {} instead of a perfect match",
                lv.objective
            );
            levels.push(lv);
        }

        let template_ids =
            study.template_indices.iter().map(|&i| dataset.units[i].id.clone()).collect();
        let design = MatchedDesign {
            schema: dataset.schema.clone(),
            outcome_names: dataset.outcome_names.clone(),
            exposure_levels: dataset.exposure_levels.clone(),
            template_size,
            formulation: Formulation::Selection,
            seed: 0,
            candidates: 0,
            template: TemplateSelection {
                indices: study.template_indices.clone(),
                ids: template_ids,
                score: 0.0,
                best_candidate: 0,
                candidates_scored: 0,
            },
            template_profiles: study.template_profiles.clone(),
            levels,
        };

        let report = balance_report(&design, dataset).unwrap();
        let mut per_level: Vec<(&str, Vec<u64>)> = Vec::new();
        for row in &report.rows {
            assert_eq!(
                row.after_count, row.template_count,
                "{n_levels} levels: {}/{} in {} off target",
                row.covariate, row.category, row.level
            );
            assert_eq!(row.deviation, 0);
            if let Some(smd) = row.after_smd {
                assert_eq!(
                    smd, 0.0,
                    "{n_levels} levels: {}/{} in {} has after-SMD {smd}",
                    row.covariate, row.category, row.level
                );
            }
            match per_level.last_mut() {
                Some((name, counts)) if *name == row.level => counts.push(row.after_count),
                _ => per_level.push((&row.level, vec![row.after_count])),
            }
        }
        assert_eq!(per_level.len(), n_levels);
        for (name, counts) in &per_level[1..] {
            assert_eq!(
                counts, &per_level[0].1,
                "{n_levels} levels: balance columns of {name} differ from {}",
                per_level[0].0
            );
        }
    }

    let secs = clock.elapsed().as_secs_f64();
    println!(
        "PASS criterion 6: planted templates recovered exactly (all deviations 0, \
         after-SMD 0, identical balance columns) for 3, 5 and 10 levels, in {secs:.1}s"
    );
}

/// Part one of the estimator checks: the paired shift estimate equals the
/// median of all pairwise averages computed by direct enumeration.
#[test]
fn criterion_7a_shift_estimate_matches_brute_force() {
    let clock = Instant::now();
    let mut rng = rng::seeded(707);
    let vectors = 1000;
    for trial in 0..vectors {
        let n = 1 + rng::uniform_usize(&mut rng, 30);
        let diffs: Vec<f64> = (0..n)
            .map(|_| {
                let d = 2.0 * rng::normal_f64(&mut rng);
                // Every fourth vector is rounded to force ties.
                if trial % 4 == 0 {
                    (d * 2.0).round() / 2.0
                } else {
                    d
                }
            })
            .collect();

        let mut walsh = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                walsh.push((diffs[i] + diffs[j]) / 2.0);
            }
        }
        walsh.sort_by(f64::total_cmp);
        let m = walsh.len();
        let oracle =
            if m % 2 == 1 { walsh[m / 2] } else { (walsh[m / 2 - 1] + walsh[m / 2]) / 2.0 };

        let estimate = hodges_lehmann(&diffs).unwrap();
        assert_eq!(estimate, oracle, "trial {trial}: estimate differs from enumeration");
    }
    let secs = clock.elapsed().as_secs_f64();
    println!("PASS criterion 7a: {vectors} shift estimates equal brute-force medians, in {secs:.1}s");
}

/// Part two: with two levels the familywise threshold is a quantile of
/// `|sum of n independent signs|`, whose distribution is exactly computable.
/// The Monte Carlo threshold must bracket the exact quantile within three
/// standard errors.
#[test]
fn criterion_7b_threshold_matches_exhaustive_distribution() {
    let clock = Instant::now();
    let mut rng = rng::seeded(717);
    let alpha = 0.05;
    let mc_draws = 20_000usize;
    let instances = 50;
    for trial in 0..instances {
        let n = 4 + rng::uniform_usize(&mut rng, 9);
        let a: Vec<f64> = (0..n).map(|_| rng::normal_f64(&mut rng)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng::normal_f64(&mut rng) + 0.5).collect();
        let exact_delta: f64 =
            a.iter().zip(&b).map(|(x, y)| if y > x { 1.0 } else { -1.0 }).sum();

        let groups = MatchedGroups {
            levels: vec!["a".to_string(), "b".to_string()],
            outcomes: vec![a, b],
            n_sets: n,
            dropped_sets: 0,
        };
        let cfg = ContrastConfig { alpha, mc_draws, seed: 7000 + trial as u64, workers: 1 };
        let report = simultaneous_contrasts(&groups, "y", &cfg).unwrap();
        assert_eq!(report.contrasts.len(), 1);
        assert_eq!(
            report.contrasts[0].rank_sum_delta, exact_delta,
            "trial {trial}: observed rank-sum difference"
        );

        // Exact CDF of |sum of n iid +-1 signs| from the full 2^n enumeration
        // (collapsed to binomial weights).
        let total = 2f64.powi(n as i32);
        let cdf = |t: f64| -> f64 {
            (0..=n)
                .filter(|&k| ((n as f64) - 2.0 * k as f64).abs() <= t)
                .map(|k| binomial(n, k) as f64)
                .sum::<f64>()
                / total
        };
        let q = 1.0 - alpha;
        let slack = 3.0 * (0.25 / mc_draws as f64).sqrt() + 1.0 / mc_draws as f64;
        let t_hat = report.threshold;
        assert!(
            cdf(t_hat) >= q - slack,
            "trial {trial} (n={n}): threshold {t_hat} too low, exact coverage {}",
            cdf(t_hat)
        );
        assert!(
            cdf(t_hat - 2.0) <= q + slack,
            "trial {trial} (n={n}): threshold {t_hat} too high, previous atom covers {}",
            cdf(t_hat - 2.0)
        );
    }
    let secs = clock.elapsed().as_secs_f64();
    println!(
        "PASS criterion 7b: {instances} two-level thresholds bracket the exact \
         sign-sum quantile within 3 SE, in {secs:.1}s"
    );
}

/// Part three: under a global null with three levels, the probability that
/// any contrast is declared significant stays within three standard errors
/// of the nominal level.
#[test]
fn criterion_7c_familywise_error_rate_under_null() {
    let clock = Instant::now();
    let replicates = 1000;
    let n_sets = 30;
    let alpha = 0.05;
    let mut rejections = 0usize;
    for rep in 0..replicates {
        let mut data_rng = rng::stream(7070, rep as u64);
        let outcomes: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..n_sets).map(|_| rng::normal_f64(&mut data_rng)).collect())
            .collect();
        let groups = MatchedGroups {
            levels: vec!["a".to_string(), "b".to_string(), "c".to_string()],
            outcomes,
            n_sets,
            dropped_sets: 0,
        };
        let cfg = ContrastConfig { alpha, mc_draws: 1000, seed: rep as u64, workers: 1 };
        let report = simultaneous_contrasts(&groups, "y", &cfg).unwrap();
        if report.contrasts.iter().any(|c| c.significant) {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / replicates as f64;
    let limit = alpha + 3.0 * (alpha * (1.0 - alpha) / replicates as f64).sqrt();
    assert!(
        rate <= limit,
        "familywise error rate {rate:.4} exceeds {limit:.4} over {replicates} replicates"
    );
    let secs = clock.elapsed().as_secs_f64();
    println!(
        "PASS criterion 7c: familywise error rate {rate:.3} <= {limit:.3} \
         over {replicates} null replicates, in {secs:.1}s"
    );
}

/// Sensitivity checks: at odds multiplier 1 the upper bound equals the
/// standard signed-rank normal approximation; the critical multiplier is
/// invariant to positive rescaling of the differences; and a strong planted
/// effect yields a critical multiplier in the tens.
#[test]
fn criterion_8_sensitivity_bounds() {
    let clock = Instant::now();

    // At gamma = 1 the bound reduces to the ordinary one-sided signed-rank
    // test with continuity correction; compare against the textbook moments
    // on tie-free vectors.
    let mut rng = rng::seeded(808);
    let trials = 200;
    let normal = Normal::new(0.0, 1.0).unwrap();
    for trial in 0..trials {
        let n = 5 + rng::uniform_usize(&mut rng, 40);
        let shift = 1.5 * (rng::uniform_f64(&mut rng) - 0.5);
        let diffs: Vec<f64> = (0..n).map(|_| rng::normal_f64(&mut rng) + shift).collect();
        assert!(diffs.iter().all(|&d| d != 0.0));

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| diffs[i].abs().total_cmp(&diffs[j].abs()));
        let mut t_plus = 0.0f64;
        for (rank0, &i) in order.iter().enumerate() {
            if diffs[i] > 0.0 {
                t_plus += (rank0 + 1) as f64;
            }
        }
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0;
        let oracle = 1.0 - normal.cdf((t_plus - mean - 0.5) / var.sqrt());

        let p = upper_p_at_gamma(&diffs, 1.0).unwrap();
        assert!(
            (p - oracle).abs() <= 1e-9,
            "trial {trial}: bound at gamma 1 is {p}, signed-rank approximation {oracle}"
        );
    }

    // The critical multiplier depends on the differences only through signs
    // and ranks, so positive rescaling must not change it at all.
    let diffs: Vec<f64> = (0..40).map(|_| rng::normal_f64(&mut rng) + 0.8).collect();
    let cfg = SensitivityConfig::default();
    let base = rosenbaum_bounds("y", "b", "a", &diffs, &cfg).unwrap();
    for scale in [2.0, 0.5, 3.7] {
        let scaled: Vec<f64> = diffs.iter().map(|d| d * scale).collect();
        let report = rosenbaum_bounds("y", "b", "a", &scaled, &cfg).unwrap();
        assert_eq!(
            report.gamma_critical, base.gamma_critical,
            "critical multiplier changed under rescaling by {scale}"
        );
        assert_eq!(report.direction, base.direction);
        assert_eq!(report.capped, base.capped);
    }

    // Fifty uniformly positive differences: the effect should survive odds
    // multipliers well into the tens before losing significance.
    let mut strong_rng = rng::seeded(818);
    let strong: Vec<f64> =
        (0..50).map(|_| 3.0 + 0.3 * rng::normal_f64(&mut strong_rng)).collect();
    assert!(strong.iter().all(|&d| d > 0.0));
    let report = rosenbaum_bounds("y", "b", "a", &strong, &cfg).unwrap();
    assert!(!report.capped, "critical multiplier search hit its cap");
    assert!(
        (10.0..100.0).contains(&report.gamma_critical),
        "critical multiplier {} not in the tens",
        report.gamma_critical
    );

    let secs = clock.elapsed().as_secs_f64();
    println!(
        "PASS criterion 8: {trials} gamma-1 bounds equal the signed-rank approximation, \
         rescaling leaves the critical multiplier fixed, and a strong planted effect \
         reaches gamma {:.2}, in {secs:.1}s",
        report.gamma_critical
    );
}
