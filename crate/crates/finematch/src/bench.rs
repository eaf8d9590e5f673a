//! Synthetic study generation and scaling benchmarks.
//!
//! The generator produces school-cohort style datasets against a fixed
//! fourteen-covariate schema with 78 categories in total, the size regime
//! the linear selection formulation is designed for. Exposure levels can be
//! tilted (their covariate distributions drift apart, creating confounding)
//! and given planted additive outcome effects, so that downstream estimates
//! have a known truth to be checked against.
//!
//! Everything is reproducible: unit ids, covariates, outcomes, and study
//! layout depend only on the configuration and its seed, never on wall
//! clock, thread count, or platform.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Covariate, CovariateSchema, DataError, Dataset, Unit};
use crate::mip::{solve_mip, BnbConfig, MipStatus};
use crate::model::{build_model, Formulation, FormulationStats, ModelConfig, ModelError};
use crate::rng::{self, Rng};

/// The default study schema: fourteen school-cohort covariates with 78
/// categories in total.
pub fn default_schema() -> CovariateSchema {
    fn cov(name: &str, categories: Vec<String>) -> Covariate {
        Covariate { name: name.to_string(), categories, missing_category: None }
    }
    fn levels(prefix: &str, n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("{prefix}{i}")).collect()
    }
    CovariateSchema {
        covariates: vec![
            cov("gender", vec!["female".into(), "male".into()]),
            cov("indigenous", vec!["no".into(), "yes".into()]),
            cov("father_edu", levels("f", 5)),
            cov("mother_edu", levels("m", 5)),
            cov("income", levels("q", 7)),
            cov("books", levels("b", 5)),
            cov("attendance_decile", levels("d", 10)),
            cov("gpa_decile", levels("d", 10)),
            cov("score_decile", levels("d", 10)),
            cov("school_type", vec!["public".into(), "voucher".into(), "private".into()]),
            cov("rural", vec!["no".into(), "yes".into()]),
            cov("catholic", vec!["no".into(), "yes".into()]),
            cov("school_ses", levels("s", 5)),
            cov("school_score_decile", levels("d", 10)),
        ],
    }
}

/// One exposure level of a generated study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelSpec {
    pub name: String,
    pub size: usize,
    /// Additive effect planted on the outcome of this level's units.
    pub effect: f64,
    /// Tilt of the covariate distribution; zero draws every category of a
    /// covariate uniformly, positive values favor higher categories.
    pub tilt: f64,
}

/// Configuration of [`generate_study`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub seed: u64,
    pub levels: Vec<LevelSpec>,
    /// Standard deviation of the outcome noise.
    pub outcome_noise: f64,
    /// Probability that a unit's outcome is missing.
    pub missing_rate: f64,
    /// Number of shared archetype profiles the population clusters around;
    /// zero draws every unit's covariates independently instead, which
    /// spreads the population over a far larger set of distinct profiles
    /// than administrative cohorts exhibit.
    pub archetypes: usize,
    /// Per-covariate probability that a unit deviates from its archetype.
    pub mutation: f64,
}

impl StudyConfig {
    /// A study with the given level sizes, mild confounding, and evenly
    /// spaced planted effects.
    pub fn balanced(seed: u64, sizes: &[usize]) -> Self {
        let total: usize = sizes.iter().sum();
        let levels = sizes
            .iter()
            .enumerate()
            .map(|(g, &size)| LevelSpec {
                name: format!("g{}", g + 1),
                size,
                effect: g as f64,
                tilt: 0.3 * (g as f64 - (sizes.len() as f64 - 1.0) / 2.0),
            })
            .collect();
        StudyConfig {
            seed,
            levels,
            outcome_noise: 1.0,
            missing_rate: 0.0,
            archetypes: (total / 40).clamp(25, 4000),
            mutation: 0.02,
        }
    }
}

/// Centered position of category `k` among `n` categories, in `(-1/2, 1/2)`.
fn category_position(k: usize, n: usize) -> f64 {
    (k as f64 + 1.0) / (n as f64 + 1.0) - 0.5
}

fn draw_category(r: &mut Rng, n: usize, tilt: f64) -> u16 {
    if tilt == 0.0 {
        return rng::uniform_usize(r, n) as u16;
    }
    let weights: Vec<f64> = (0..n).map(|k| (tilt * category_position(k, n)).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng::uniform_f64(r) * total;
    for (k, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return k as u16;
        }
    }
    (n - 1) as u16
}

fn outcome_signal(schema: &CovariateSchema, x: &[u16]) -> f64 {
    // Fixed covariate weights tie the outcome to the confounded covariates,
    // so unmatched comparisons are biased and matched ones are not.
    x.iter()
        .enumerate()
        .map(|(p, &k)| {
            let weight = 2.0 / (1.0 + p as f64);
            weight * category_position(k as usize, schema.n_categories(p))
        })
        .sum()
}

/// Stream index reserved for drawing the shared archetype profiles; level
/// streams use indices `0..levels`.
const ARCHETYPE_STREAM: u64 = 1 << 40;

/// Generates a study dataset. Units cluster around archetype profiles that
/// all levels share; a level's tilt shifts which archetypes it favors, so
/// the levels' covariate distributions drift apart while still overlapping
/// on common profiles. Each level draws from its own seed-derived stream,
/// so adding or reordering levels does not disturb the others.
pub fn generate_study(cfg: &StudyConfig) -> Dataset {
    let schema = default_schema();
    let archetypes: Vec<Vec<u16>> = {
        let mut stream = rng::stream(cfg.seed, ARCHETYPE_STREAM);
        (0..cfg.archetypes)
            .map(|_| {
                (0..schema.n_covariates())
                    .map(|p| draw_category(&mut stream, schema.n_categories(p), 0.0))
                    .collect()
            })
            .collect()
    };
    // An archetype's scalar position drives how strongly a tilted level
    // prefers it.
    let positions: Vec<f64> = archetypes
        .iter()
        .map(|x| {
            x.iter()
                .enumerate()
                .map(|(p, &k)| category_position(k as usize, schema.n_categories(p)))
                .sum::<f64>()
                / schema.n_covariates() as f64
        })
        .collect();

    let mut units = Vec::new();
    for (g, level) in cfg.levels.iter().enumerate() {
        let mut stream = rng::stream(cfg.seed, g as u64);
        let weights: Vec<f64> =
            positions.iter().map(|&s| (4.0 * level.tilt * s).exp()).collect();
        let total_weight: f64 = weights.iter().sum();
        for i in 0..level.size {
            let x: Vec<u16> = if cfg.archetypes == 0 {
                (0..schema.n_covariates())
                    .map(|p| draw_category(&mut stream, schema.n_categories(p), level.tilt))
                    .collect()
            } else {
                let mut u = rng::uniform_f64(&mut stream) * total_weight;
                let mut pick = cfg.archetypes - 1;
                for (a, w) in weights.iter().enumerate() {
                    u -= w;
                    if u <= 0.0 {
                        pick = a;
                        break;
                    }
                }
                archetypes[pick]
                    .iter()
                    .enumerate()
                    .map(|(p, &k)| {
                        if cfg.mutation > 0.0 && rng::uniform_f64(&mut stream) < cfg.mutation {
                            draw_category(&mut stream, schema.n_categories(p), level.tilt)
                        } else {
                            k
                        }
                    })
                    .collect()
            };
            let noise = cfg.outcome_noise * rng::normal_f64(&mut stream);
            let y = outcome_signal(&schema, &x) + level.effect + noise;
            let missing =
                cfg.missing_rate > 0.0 && rng::uniform_f64(&mut stream) < cfg.missing_rate;
            units.push(Unit {
                id: format!("{}-{i:06}", level.name),
                x,
                outcomes: vec![if missing { None } else { Some(y) }],
                exposure: Some(level.name.clone()),
            });
        }
    }
    Dataset {
        schema,
        outcome_names: vec!["y".into()],
        exposure_levels: cfg.levels.iter().map(|l| l.name.clone()).collect(),
        units,
    }
}

/// A study in which every level contains one unit for each template profile,
/// so each level can match the template's category counts exactly.
#[derive(Debug, Clone)]
pub struct SupersetStudy {
    pub dataset: Dataset,
    /// Dataset indices of the planted template units (the first level's
    /// copies), in slot order.
    pub template_indices: Vec<usize>,
    pub template_profiles: Vec<Vec<u16>>,
}

/// Builds a superset study: `template_size` profiles are drawn once, every
/// level gets one unit per profile plus `extras_per_level` tilted extras.
/// Matching any level to the planted template has optimal objective zero.
pub fn superset_study(
    n_levels: usize,
    template_size: usize,
    extras_per_level: usize,
    seed: u64,
) -> SupersetStudy {
    let schema = default_schema();
    // The template stream is separate from every level stream.
    let mut template_stream = rng::stream(seed, u64::MAX / 2);
    let template_profiles: Vec<Vec<u16>> = (0..template_size)
        .map(|_| {
            (0..schema.n_covariates())
                .map(|p| draw_category(&mut template_stream, schema.n_categories(p), 0.0))
                .collect()
        })
        .collect();

    let mut units = Vec::new();
    let mut template_indices = Vec::new();
    let levels: Vec<String> = (1..=n_levels).map(|g| format!("g{g}")).collect();
    for (g, level) in levels.iter().enumerate() {
        let mut stream = rng::stream(seed, g as u64);
        let tilt = 0.3 * (g as f64 - (n_levels as f64 - 1.0) / 2.0);
        for (s, profile) in template_profiles.iter().enumerate() {
            if g == 0 {
                template_indices.push(units.len());
            }
            let noise = rng::normal_f64(&mut stream);
            let y = outcome_signal(&schema, profile) + g as f64 + noise;
            units.push(Unit {
                id: format!("{level}-t{s:04}"),
                x: profile.clone(),
                outcomes: vec![Some(y)],
                exposure: Some(level.clone()),
            });
        }
        for i in 0..extras_per_level {
            let x: Vec<u16> = (0..schema.n_covariates())
                .map(|p| draw_category(&mut stream, schema.n_categories(p), tilt))
                .collect();
            let noise = rng::normal_f64(&mut stream);
            let y = outcome_signal(&schema, &x) + g as f64 + noise;
            units.push(Unit {
                id: format!("{level}-x{i:06}"),
                x,
                outcomes: vec![Some(y)],
                exposure: Some(level.clone()),
            });
        }
    }
    let dataset = Dataset {
        schema,
        outcome_names: vec!["y".into()],
        exposure_levels: levels,
        units,
    };
    SupersetStudy { dataset, template_indices, template_profiles }
}

/// Scales a dataset up `factor` times: each unit keeps its original row and
/// gains `factor - 1` perturbed copies whose category indices move by at
/// most one step. Copy `c` of unit `id` is named `id~r{c}`.
pub fn replicate_and_perturb(dataset: &Dataset, factor: usize, seed: u64) -> Dataset {
    let schema = &dataset.schema;
    let mut out = dataset.clone();
    for (i, unit) in dataset.units.iter().enumerate() {
        let mut stream = rng::stream(seed, i as u64);
        for c in 1..factor {
            let x: Vec<u16> = unit
                .x
                .iter()
                .enumerate()
                .map(|(p, &k)| {
                    let step = rng::uniform_usize(&mut stream, 3) as i32 - 1;
                    let max = schema.n_categories(p) as i32 - 1;
                    (k as i32 + step).clamp(0, max) as u16
                })
                .collect();
            out.units.push(Unit {
                id: format!("{}~r{c}", unit.id),
                x,
                outcomes: unit.outcomes.clone(),
                exposure: unit.exposure.clone(),
            });
        }
    }
    out
}

/// Grid configuration of [`run_scaling`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub seed: u64,
    pub template_sizes: Vec<usize>,
    pub level_sizes: Vec<usize>,
    pub formulations: Vec<Formulation>,
    /// Covariate tilt between the pool and the template source.
    pub tilt: f64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            seed: 7,
            template_sizes: vec![10, 100],
            level_sizes: vec![100, 1000, 10_000],
            formulations: vec![Formulation::Selection, Formulation::Assignment],
            tilt: 0.3,
        }
    }
}

/// One grid point of a scaling run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingRow {
    pub template_size: usize,
    pub level_size: usize,
    pub formulation: Formulation,
    pub n_vars: usize,
    /// Logical constraints (deviation pairs counted once).
    pub n_constraints: usize,
    pub realized_rows: usize,
    pub predicted_memory_bytes: u64,
    /// False when the size guard refused to build the model; the solve
    /// fields are then absent.
    pub built: bool,
    pub status: Option<MipStatus>,
    pub objective: Option<u64>,
    pub node_count: Option<u64>,
    pub seconds: Option<f64>,
}

/// Result of [`run_scaling`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingReport {
    pub config: ScalingConfig,
    pub rows: Vec<ScalingRow>,
}

/// Solves the whole grid. Pool and template profiles are generated per
/// level size from seed-derived streams; grid points that trip the size
/// guard are recorded rather than skipped, so the report shows where the
/// quadratic formulations stop being buildable.
pub fn run_scaling(cfg: &ScalingConfig) -> Result<ScalingReport, ModelError> {
    let schema = default_schema();
    let mut rows = Vec::new();
    for (li, &l) in cfg.level_sizes.iter().enumerate() {
        let mut study = StudyConfig::balanced(cfg.seed.wrapping_add(li as u64), &[l]);
        study.levels[0].tilt = cfg.tilt;
        let pool_data = generate_study(&study);
        let pool: Vec<Vec<u16>> = pool_data.units.into_iter().map(|u| u.x).collect();
        for &t in cfg.template_sizes.iter().filter(|&&t| t <= l) {
            // The template is a random subset of the pool, drawn from its
            // own stream so the grid stays stable under reordering.
            let mut pick_stream = rng::stream(cfg.seed, (1 << 32) + t as u64);
            let mut picked = rng::sample_without_replacement(&mut pick_stream, l, t);
            picked.sort_unstable();
            let template: Vec<Vec<u16>> = picked.iter().map(|&i| pool[i].clone()).collect();
            for &formulation in &cfg.formulations {
                let stats =
                    FormulationStats::compute(formulation, t, l, schema.total_categories());
                match build_model(&schema, &template, &pool, formulation, &ModelConfig::default())
                {
                    Ok(model) => {
                        let clock = Instant::now();
                        let sol = solve_mip(&model, &BnbConfig::default())
                            .expect("scaling instances are feasible");
                        rows.push(ScalingRow {
                            template_size: t,
                            level_size: l,
                            formulation,
                            n_vars: stats.n_vars,
                            n_constraints: stats.n_constraints,
                            realized_rows: stats.realized_rows,
                            predicted_memory_bytes: stats.predicted_memory_bytes,
                            built: true,
                            status: Some(sol.status),
                            objective: Some(sol.objective),
                            node_count: Some(sol.node_count),
                            seconds: Some(clock.elapsed().as_secs_f64()),
                        });
                    }
                    Err(ModelError::SizeGuard { .. }) => {
                        rows.push(ScalingRow {
                            template_size: t,
                            level_size: l,
                            formulation,
                            n_vars: stats.n_vars,
                            n_constraints: stats.n_constraints,
                            realized_rows: stats.realized_rows,
                            predicted_memory_bytes: stats.predicted_memory_bytes,
                            built: false,
                            status: None,
                            objective: None,
                            node_count: None,
                            seconds: None,
                        });
                    }
                    Err(other) => return Err(other),
                }
            }
        }
    }
    Ok(ScalingReport { config: cfg.clone(), rows })
}

/// Writes the grid as CSV. Timing cells are measurements and vary between
/// machines; everything else is deterministic.
pub fn write_scaling_csv(report: &ScalingReport, writer: impl Write) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "template_size",
        "level_size",
        "formulation",
        "n_vars",
        "n_constraints",
        "realized_rows",
        "predicted_memory_bytes",
        "built",
        "status",
        "objective",
        "node_count",
        "seconds",
    ])?;
    for r in &report.rows {
        w.write_record([
            r.template_size.to_string(),
            r.level_size.to_string(),
            format!("{:?}", r.formulation),
            r.n_vars.to_string(),
            r.n_constraints.to_string(),
            r.realized_rows.to_string(),
            r.predicted_memory_bytes.to_string(),
            r.built.to_string(),
            r.status.map(|s| format!("{s:?}")).unwrap_or_default(),
            r.objective.map(|o| o.to_string()).unwrap_or_default(),
            r.node_count.map(|n| n.to_string()).unwrap_or_default(),
            r.seconds.map(|s| format!("{s:.3}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Hex SHA-256 of a serializable value's canonical JSON.
pub fn config_digest<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

/// Environment manifest stored beside benchmark output. Deliberately free
/// of timestamps so that reruns on the same machine and build produce
/// identical files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub os: String,
    pub arch: String,
    pub seed: u64,
    pub config_sha256: String,
    /// Hex SHA-256 per input file, keyed by path as given.
    pub inputs: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new<T: Serialize>(command: &str, seed: u64, config: &T) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            seed,
            config_sha256: config_digest(config),
            inputs: Vec::new(),
        }
    }

    /// Records an input file's digest.
    pub fn add_input(&mut self, path: &str) -> std::io::Result<()> {
        let bytes = std::fs::read(path)?;
        self.inputs.push((path.to_string(), hex::encode(Sha256::digest(&bytes))));
        Ok(())
    }

    pub fn write(&self, writer: impl Write) -> serde_json::Result<()> {
        serde_json::to_writer_pretty(writer, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mip::BnbConfig;

    #[test]
    fn default_schema_has_78_categories_over_14_covariates() {
        let schema = default_schema();
        assert_eq!(schema.n_covariates(), 14);
        assert_eq!(schema.total_categories(), 78);
    }

    #[test]
    fn generation_is_reproducible() {
        let cfg = StudyConfig::balanced(33, &[40, 40, 40]);
        let a = generate_study(&cfg);
        let b = generate_study(&cfg);
        assert_eq!(a.units, b.units);
        assert_eq!(a.units.len(), 120);
        assert_eq!(a.exposure_levels, vec!["g1", "g2", "g3"]);
    }

    #[test]
    fn levels_draw_from_independent_streams() {
        let whole = generate_study(&StudyConfig::balanced(33, &[40, 40]));
        let mut first_only = StudyConfig::balanced(33, &[40, 40]);
        first_only.levels.truncate(1);
        let alone = generate_study(&first_only);
        assert_eq!(&whole.units[..40], &alone.units[..]);
    }

    #[test]
    fn tilt_shifts_the_category_distribution() {
        let mut cfg = StudyConfig::balanced(5, &[3000, 3000]);
        cfg.levels[0].tilt = -1.5;
        cfg.levels[1].tilt = 1.5;
        let ds = generate_study(&cfg);
        // Compare the mean position of the income covariate across levels.
        let p = 4;
        let mean = |level: &str| {
            let idx = ds.level_units(level);
            idx.iter().map(|&i| ds.units[i].x[p] as f64).sum::<f64>() / idx.len() as f64
        };
        assert!(mean("g2") - mean("g1") > 0.4, "tilt must separate the levels");
    }

    #[test]
    fn superset_levels_match_the_template_exactly() {
        let study = superset_study(3, 12, 30, 9);
        for level in study.dataset.levels() {
            let level_x = study.dataset.profiles(&level.1);
            let model = build_model(
                &study.dataset.schema,
                &study.template_profiles,
                &level_x,
                Formulation::Selection,
                &ModelConfig::default(),
            )
            .unwrap();
            let sol = solve_mip(&model, &BnbConfig::default()).unwrap();
            assert_eq!(sol.objective, 0, "level {}", level.0);
        }
    }

    #[test]
    fn replication_perturbs_within_one_step() {
        let cfg = StudyConfig::balanced(8, &[25]);
        let ds = generate_study(&cfg);
        let big = replicate_and_perturb(&ds, 4, 99);
        assert_eq!(big.units.len(), 100);
        assert_eq!(big.units[25].id, format!("{}~r1", ds.units[0].id));
        for (i, unit) in ds.units.iter().enumerate() {
            for c in 1..4 {
                let copy = &big.units[25 + (i * 3) + (c - 1)];
                assert_eq!(copy.id, format!("{}~r{c}", unit.id));
                for (p, (&a, &b)) in unit.x.iter().zip(&copy.x).enumerate() {
                    assert!(
                        (a as i32 - b as i32).abs() <= 1,
                        "covariate {p} moved more than one step"
                    );
                }
            }
        }
    }

    #[test]
    fn scaling_grid_reports_guard_refusals() {
        let cfg = ScalingConfig {
            seed: 3,
            template_sizes: vec![5],
            level_sizes: vec![60],
            formulations: vec![Formulation::Selection, Formulation::Assignment],
            tilt: 0.2,
        };
        let report = run_scaling(&cfg).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert!(report.rows.iter().all(|r| r.built));
        let mut buf = Vec::new();
        write_scaling_csv(&report, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }

    #[test]
    fn manifest_digest_is_stable() {
        let cfg = ScalingConfig::default();
        let a = RunManifest::new("bench", cfg.seed, &cfg);
        let b = RunManifest::new("bench", cfg.seed, &cfg);
        assert_eq!(a.config_sha256, b.config_sha256);
        let mut buf = Vec::new();
        a.write(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("\"command\": \"bench\""));
        assert!(!text.to_lowercase().contains("time"));
    }
}
