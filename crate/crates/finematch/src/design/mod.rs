//! Template selection and matched-design construction.
//!
//! A design is built in three steps:
//!
//! 1. [`select_template`] draws candidate subsets of the pooled study
//!    population and keeps the one whose covariate distribution sits closest
//!    to the population's, under a rank-based Mahalanobis distance that is
//!    insensitive to outliers and to duplicating every unit.
//! 2. [`match_level`] solves the fine-balance program of each exposure level
//!    against the template, producing one matched group per level with the
//!    template's category counts (or as close as integer selection allows).
//! 3. [`rematch_slots`] orders each matched group so that slot `s` holds the
//!    unit most like template unit `s`, aligning matched sets across levels
//!    for paired inference.
//!
//! [`build_design`] runs all three and packages the result; levels solve
//! independently, so they can run on worker threads without changing any
//! output.

pub mod assignment;

pub use assignment::{solve_assignment, AssignmentResult};

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset, CovariateSchema};
use crate::linalg::{dot, LuFactors, Matrix};
use crate::mip::{solve_mip, BnbConfig, MipError, MipStatus};
use crate::model::{build_model, Formulation, ModelConfig, ModelError};
use crate::rng;

#[derive(Debug, Error)]
pub enum DesignError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mip(#[from] MipError),
    #[error("dataset declares no exposure levels")]
    NoExposure,
    #[error("template size must be positive")]
    EmptyTemplate,
    #[error("candidate count must be positive")]
    NoCandidates,
    #[error("template size {template_size} exceeds the population size {n}")]
    TemplateTooLarge { n: usize, template_size: usize },
    #[error("level {level} has {size} units, fewer than the template size {template_size}")]
    LevelTooSmall { level: String, size: usize, template_size: usize },
    #[error("every covariate indicator is constant; the template metric is undefined")]
    DegenerateMetric,
    #[error("design refers to unit id {id} absent from the dataset")]
    UnknownId { id: String },
    #[error("unit id {id} appears more than once in the dataset")]
    DuplicateId { id: String },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Rank-based Mahalanobis distance between covariate distributions.
///
/// Each category indicator column is replaced by its normalized midranks
/// `(rank - 1/2) / n`, the covariance of those columns is rescaled so every
/// diagonal entry is `1/12` (the variance of a uniform rank), and a small
/// ridge makes the matrix invertible. Distances are computed between mean
/// normalized-midrank profiles. Replacing ranks keeps one huge category from
/// dominating, the rescaling keeps rare categories from being ignored, and
/// the construction is exactly invariant to duplicating every unit.
#[derive(Debug)]
pub struct RankMetric {
    /// Flat indicator indices with variation; constant columns are excluded.
    kept: Vec<usize>,
    /// Position of each flat indicator in `kept`, if any.
    kept_pos: Vec<Option<usize>>,
    /// Normalized midrank taken by the zeros of each kept column; the ones
    /// sit exactly one half higher.
    u_zero: Vec<f64>,
    metric: LuFactors,
    population: Vec<f64>,
    n_units: usize,
}

impl RankMetric {
    pub fn fit(dataset: &Dataset) -> Result<RankMetric, DesignError> {
        let schema = &dataset.schema;
        let n = dataset.units.len();
        if n == 0 {
            return Err(DataError::EmptyInput.into());
        }
        let d_all = schema.total_categories();
        let mut ones = vec![0u64; d_all];
        for unit in &dataset.units {
            for (p, &k) in unit.x.iter().enumerate() {
                ones[schema.flat_index(p, k as usize)] += 1;
            }
        }
        let mut kept = Vec::new();
        let mut kept_pos = vec![None; d_all];
        let labels = schema.flat_labels();
        for (f, &m) in ones.iter().enumerate() {
            if m == 0 || m == n as u64 {
                let (cov, cat) = &labels[f];
                log::warn!(
                    "indicator {cov}={cat} is constant across the dataset; \
                     excluded from the template metric"
                );
            } else {
                kept_pos[f] = Some(kept.len());
                kept.push(f);
            }
        }
        if kept.is_empty() {
            return Err(DesignError::DegenerateMetric);
        }
        let d = kept.len();

        // Every derived number is a function of integer ratios only
        // (`m/n`, `c/s`, `co/n`), each computed as one division, so scaling
        // all counts by a common factor reproduces it bit for bit; that is
        // what makes duplication invariance exact rather than approximate.
        let nf = n as f64;
        let prop: Vec<f64> = kept.iter().map(|&f| ones[f] as f64 / nf).collect();

        // Midranks of a binary column: the `m` ones share the top ranks, the
        // `n - m` zeros the bottom ones; normalized by `n`, the zeros sit at
        // `(1 - m/n) / 2` and the ones exactly one half higher.
        let u_zero: Vec<f64> = prop.iter().map(|p| (1.0 - p) / 2.0).collect();

        // Indicator co-occurrence gives the midrank covariance in closed
        // form: the one-zero midrank gap is one half per column, so
        // cov(u_j, u_k) = (p_jk - p_j p_k) / 4, with population (divide by
        // n) moments.
        let mut co = vec![0u64; d * d];
        let mut flats = Vec::with_capacity(schema.n_covariates());
        for unit in &dataset.units {
            flats.clear();
            for (p, &k) in unit.x.iter().enumerate() {
                if let Some(pos) = kept_pos[schema.flat_index(p, k as usize)] {
                    flats.push(pos);
                }
            }
            for &a in &flats {
                for &b in &flats {
                    co[a * d + b] += 1;
                }
            }
        }
        let mut cov = Matrix::zeros(d, d);
        for a in 0..d {
            for b in 0..d {
                let pab = co[a * d + b] as f64 / nf;
                cov.set(a, b, 0.25 * (pab - prop[a] * prop[b]));
            }
        }
        // Rescale so every diagonal entry is the uniform-rank variance 1/12,
        // preserving correlations, then add a small ridge.
        const UNIFORM_VARIANCE: f64 = 1.0 / 12.0;
        const RIDGE: f64 = 1e-8 * UNIFORM_VARIANCE;
        let scale: Vec<f64> =
            (0..d).map(|a| (UNIFORM_VARIANCE / cov.get(a, a)).sqrt()).collect();
        let mut metric = Matrix::zeros(d, d);
        for a in 0..d {
            for b in 0..d {
                let mut v = scale[a] * cov.get(a, b) * scale[b];
                if a == b {
                    v += RIDGE;
                }
                metric.set(a, b, v);
            }
        }
        let metric = LuFactors::factor(&metric, 1e-12).ok_or(DesignError::DegenerateMetric)?;

        // Mean profile = u_zero plus half the share of ones.
        let population: Vec<f64> =
            (0..d).map(|a| u_zero[a] + prop[a] / 2.0).collect();
        Ok(RankMetric { kept, kept_pos, u_zero, metric, population, n_units: n })
    }

    /// Mean normalized-midrank profile of a subset of units.
    pub fn mean_profile(&self, dataset: &Dataset, indices: &[usize]) -> Vec<f64> {
        let schema = &dataset.schema;
        let mut count = vec![0u64; self.kept.len()];
        for &i in indices {
            for (p, &k) in dataset.units[i].x.iter().enumerate() {
                if let Some(pos) = self.kept_pos[schema.flat_index(p, k as usize)] {
                    count[pos] += 1;
                }
            }
        }
        let s = indices.len() as f64;
        count
            .iter()
            .enumerate()
            .map(|(a, &c)| self.u_zero[a] + (c as f64 / s) / 2.0)
            .collect()
    }

    /// Mean profile of the whole population the metric was fitted on.
    pub fn population_mean(&self) -> &[f64] {
        &self.population
    }

    /// Rank-based Mahalanobis distance between two mean profiles.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let y = self.metric.solve(&diff);
        dot(&diff, &y).max(0.0).sqrt()
    }

    /// Distance between a subset's mean profile and the population's.
    pub fn score(&self, dataset: &Dataset, indices: &[usize]) -> f64 {
        self.distance(&self.mean_profile(dataset, indices), &self.population)
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }
}

/// Template search options.
#[derive(Debug, Clone)]
pub struct TemplateConfig {
    pub size: usize,
    /// Number of random candidate subsets to score.
    pub candidates: usize,
    pub seed: u64,
    pub workers: usize,
}

impl TemplateConfig {
    pub fn new(size: usize) -> Self {
        TemplateConfig { size, candidates: 500, seed: 0, workers: 1 }
    }
}

/// The winning template candidate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateSelection {
    /// Dataset indices of the template units, ascending; the position in
    /// this list is the unit's slot.
    pub indices: Vec<usize>,
    pub ids: Vec<String>,
    /// Distance of the winner to the population.
    pub score: f64,
    /// Candidate number that won (draws are reproducible given the seed).
    pub best_candidate: usize,
    pub candidates_scored: usize,
}

/// Scores `cfg.candidates` simple random subsets of the pooled population
/// and returns the one closest to it. Every candidate is drawn from its own
/// seed-derived stream, so the result does not depend on `workers`.
pub fn select_template(
    dataset: &Dataset,
    metric: &RankMetric,
    cfg: &TemplateConfig,
) -> Result<TemplateSelection, DesignError> {
    if cfg.size == 0 {
        return Err(DesignError::EmptyTemplate);
    }
    if cfg.candidates == 0 {
        return Err(DesignError::NoCandidates);
    }
    let n = dataset.units.len();
    if cfg.size > n {
        return Err(DesignError::TemplateTooLarge { n, template_size: cfg.size });
    }

    let score_candidate = |r: usize| -> (f64, usize, Vec<usize>) {
        let mut stream = rng::stream(cfg.seed, r as u64);
        let mut indices = rng::sample_without_replacement(&mut stream, n, cfg.size);
        indices.sort_unstable();
        let score = metric.score(dataset, &indices);
        (score, r, indices)
    };
    let best = parallel_min_by(cfg.candidates, cfg.workers, &score_candidate, |a, b| {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
    });
    let (score, best_candidate, indices) = best.expect("at least one candidate");
    let ids = indices.iter().map(|&i| dataset.units[i].id.clone()).collect();
    Ok(TemplateSelection {
        indices,
        ids,
        score,
        best_candidate,
        candidates_scored: cfg.candidates,
    })
}

/// Evaluates `f` on `0..count` across up to `workers` threads and returns
/// the minimum under `cmp`. Work is split in contiguous chunks; the
/// comparison includes the index, so ties are deterministic.
fn parallel_min_by<T: Send>(
    count: usize,
    workers: usize,
    f: &(impl Fn(usize) -> T + Sync),
    cmp: impl Fn(&T, &T) -> std::cmp::Ordering + Sync,
) -> Option<T> {
    let workers = workers.clamp(1, count.max(1));
    if workers == 1 {
        return (0..count).map(f).min_by(&cmp);
    }
    let chunk = count.div_ceil(workers);
    let mut locals: Vec<Option<T>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let f = &f;
                let cmp = &cmp;
                scope.spawn(move || {
                    let lo = w * chunk;
                    let hi = ((w + 1) * chunk).min(count);
                    (lo..hi).map(f).min_by(cmp)
                })
            })
            .collect();
        for h in handles {
            locals.push(h.join().expect("worker panicked"));
        }
    });
    locals.into_iter().flatten().min_by(&cmp)
}

/// Per-level solve options.
#[derive(Debug, Clone, Default)]
pub struct MatchConfig {
    pub formulation: Formulation,
    pub model: ModelConfig,
    pub bnb: BnbConfig,
}

/// One exposure level matched to the template.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchedLevel {
    pub level: String,
    /// Dataset indices of the matched units, in slot order: the unit at
    /// position `s` is paired with template unit `s`.
    pub unit_indices: Vec<usize>,
    pub unit_ids: Vec<String>,
    /// Total absolute deviation from the template's category counts.
    pub objective: u64,
    pub node_count: u64,
    pub status: MipStatus,
    pub bound: f64,
    pub root_objective: f64,
    pub lp_gap: f64,
}

/// Solves the fine-balance selection of one level against the template.
pub fn match_level(
    dataset: &Dataset,
    template_x: &[Vec<u16>],
    level: &str,
    level_indices: &[usize],
    cfg: &MatchConfig,
) -> Result<MatchedLevel, DesignError> {
    if level_indices.len() < template_x.len() {
        return Err(DesignError::LevelTooSmall {
            level: level.to_string(),
            size: level_indices.len(),
            template_size: template_x.len(),
        });
    }
    let level_x = dataset.profiles(level_indices);
    let model = build_model(&dataset.schema, template_x, &level_x, cfg.formulation, &cfg.model)?;
    let sol = solve_mip(&model, &cfg.bnb)?;

    // The solver reports positions within the level; translate to dataset
    // indices, then order by template slot.
    let selected_x: Vec<Vec<u16>> = sol.selection.iter().map(|&j| level_x[j].clone()).collect();
    let slot_to_pos = rematch_slots(template_x, &selected_x);
    let unit_indices: Vec<usize> =
        slot_to_pos.iter().map(|&j| level_indices[sol.selection[j]]).collect();
    let unit_ids = unit_indices.iter().map(|&i| dataset.units[i].id.clone()).collect();
    Ok(MatchedLevel {
        level: level.to_string(),
        unit_indices,
        unit_ids,
        objective: sol.objective,
        node_count: sol.node_count,
        status: sol.status,
        bound: sol.bound,
        root_objective: sol.root_objective,
        lp_gap: sol.lp_gap,
    })
}

/// Assigns template slots to matched units, minimizing total covariate
/// disagreement (count of differing covariates), with ties broken toward
/// keeping unit `j` in slot `j`. Matching a group to itself therefore
/// returns the identity, and the output is deterministic.
///
/// Returns `slot_to_pos`: slot `s` takes the unit at position
/// `slot_to_pos[s]` of `selected_x`.
pub fn rematch_slots(template_x: &[Vec<u16>], selected_x: &[Vec<u16>]) -> Vec<usize> {
    let t = template_x.len();
    assert_eq!(selected_x.len(), t, "rematch needs one unit per slot");
    // Scale disagreement so one covariate outweighs every possible
    // tie-break term; the +1 off-diagonal term then only separates
    // equal-disagreement assignments.
    let scale = (t as i64) + 1;
    let mut cost = vec![0i64; t * t];
    for (s, tx) in template_x.iter().enumerate() {
        for (j, sx) in selected_x.iter().enumerate() {
            let hamming = tx.iter().zip(sx).filter(|(a, b)| a != b).count() as i64;
            cost[s * t + j] = hamming * scale + if s == j { 0 } else { 1 };
        }
    }
    solve_assignment(t, &cost).row_to_col
}

/// Everything needed to build a design in one call.
#[derive(Debug, Clone)]
pub struct DesignConfig {
    pub template_size: usize,
    pub candidates: usize,
    pub formulation: Formulation,
    pub model: ModelConfig,
    pub bnb: BnbConfig,
    pub seed: u64,
    pub workers: usize,
}

impl DesignConfig {
    pub fn new(template_size: usize) -> Self {
        DesignConfig {
            template_size,
            candidates: 500,
            formulation: Formulation::Selection,
            model: ModelConfig::default(),
            bnb: BnbConfig::default(),
            seed: 0,
            workers: 1,
        }
    }
}

/// A complete matched design: the template and one matched group per
/// exposure level, aligned by slot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchedDesign {
    pub schema: CovariateSchema,
    pub outcome_names: Vec<String>,
    pub exposure_levels: Vec<String>,
    pub template_size: usize,
    pub formulation: Formulation,
    pub seed: u64,
    pub candidates: usize,
    pub template: TemplateSelection,
    pub template_profiles: Vec<Vec<u16>>,
    pub levels: Vec<MatchedLevel>,
}

impl MatchedDesign {
    /// Re-resolves the design's unit ids against a dataset, returning the
    /// template indices and per-level indices in slot order. Ids are the
    /// durable key; the stored indices are only a snapshot of the dataset
    /// the design was built from.
    pub fn resolve(
        &self,
        dataset: &Dataset,
    ) -> Result<(Vec<usize>, Vec<Vec<usize>>), DesignError> {
        let mut by_id: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, unit) in dataset.units.iter().enumerate() {
            if by_id.insert(unit.id.as_str(), i).is_some() {
                return Err(DesignError::DuplicateId { id: unit.id.clone() });
            }
        }
        let lookup = |id: &str| -> Result<usize, DesignError> {
            by_id.get(id).copied().ok_or_else(|| DesignError::UnknownId { id: id.to_string() })
        };
        let template = self.template.ids.iter().map(|id| lookup(id)).collect::<Result<_, _>>()?;
        let levels = self
            .levels
            .iter()
            .map(|lv| lv.unit_ids.iter().map(|id| lookup(id)).collect::<Result<_, _>>())
            .collect::<Result<_, _>>()?;
        Ok((template, levels))
    }
}

/// Builds the full design: template selection, one fine-balance solve per
/// exposure level, and slot alignment. Levels run on up to `cfg.workers`
/// threads; the result is identical for any worker count.
pub fn build_design(dataset: &Dataset, cfg: &DesignConfig) -> Result<MatchedDesign, DesignError> {
    let levels = dataset.levels();
    if levels.is_empty() {
        return Err(DesignError::NoExposure);
    }
    for (name, indices) in &levels {
        if indices.len() < cfg.template_size {
            return Err(DesignError::LevelTooSmall {
                level: name.clone(),
                size: indices.len(),
                template_size: cfg.template_size,
            });
        }
    }
    let metric = RankMetric::fit(dataset)?;
    let template = select_template(
        dataset,
        &metric,
        &TemplateConfig {
            size: cfg.template_size,
            candidates: cfg.candidates,
            seed: cfg.seed,
            workers: cfg.workers,
        },
    )?;
    let template_profiles = dataset.profiles(&template.indices);

    let match_cfg = MatchConfig {
        formulation: cfg.formulation,
        model: cfg.model.clone(),
        bnb: cfg.bnb.clone(),
    };
    let results = parallel_try_map(&levels, cfg.workers, &|(name, indices): &(String, Vec<usize>)| {
        match_level(dataset, &template_profiles, name, indices, &match_cfg)
    })?;

    Ok(MatchedDesign {
        schema: dataset.schema.clone(),
        outcome_names: dataset.outcome_names.clone(),
        exposure_levels: levels.iter().map(|(name, _)| name.clone()).collect(),
        template_size: cfg.template_size,
        formulation: cfg.formulation,
        seed: cfg.seed,
        candidates: cfg.candidates,
        template,
        template_profiles,
        levels: results,
    })
}

/// Maps `f` over `items` across up to `workers` threads, preserving order;
/// on errors, the one belonging to the earliest item wins.
fn parallel_try_map<T: Sync, R: Send, E: Send>(
    items: &[T],
    workers: usize,
    f: &(impl Fn(&T) -> Result<R, E> + Sync),
) -> Result<Vec<R>, E> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let mut slots: Vec<Vec<Result<R, E>>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                scope.spawn(move || part.iter().map(f).collect::<Vec<_>>())
            })
            .collect();
        for h in handles {
            slots.push(h.join().expect("worker panicked"));
        }
    });
    let mut out = Vec::with_capacity(items.len());
    for res in slots.into_iter().flatten() {
        out.push(res?);
    }
    Ok(out)
}

/// Writes a design as pretty JSON.
pub fn save_design(design: &MatchedDesign, writer: impl Write) -> Result<(), DesignError> {
    serde_json::to_writer_pretty(writer, design)?;
    Ok(())
}

pub fn save_design_file(design: &MatchedDesign, path: impl AsRef<Path>) -> Result<(), DesignError> {
    let file = std::fs::File::create(path)?;
    let mut buf = std::io::BufWriter::new(file);
    save_design(design, &mut buf)?;
    use std::io::Write as _;
    buf.write_all(b"\n")?;
    Ok(())
}

pub fn load_design(reader: impl Read) -> Result<MatchedDesign, DesignError> {
    Ok(serde_json::from_reader(reader)?)
}

pub fn load_design_file(path: impl AsRef<Path>) -> Result<MatchedDesign, DesignError> {
    load_design(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Writes the design flat: one row per unit with its role, level (empty for
/// the template), slot, id, and covariate labels.
pub fn write_design_csv(
    design: &MatchedDesign,
    dataset: &Dataset,
    writer: impl Write,
) -> Result<(), DesignError> {
    let schema = &dataset.schema;
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["role".to_string(), "level".to_string(), "slot".to_string(), "id".to_string()];
    header.extend(schema.covariates.iter().map(|c| c.name.clone()));
    w.write_record(&header).map_err(DataError::from)?;
    let (template, levels) = design.resolve(dataset)?;
    let mut write_unit = |role: &str, level: &str, slot: usize, idx: usize| -> Result<(), DesignError> {
        let unit = &dataset.units[idx];
        let mut record = vec![
            role.to_string(),
            level.to_string(),
            slot.to_string(),
            unit.id.clone(),
        ];
        for (p, &k) in unit.x.iter().enumerate() {
            record.push(schema.covariates[p].categories[k as usize].clone());
        }
        w.write_record(&record).map_err(DataError::from)?;
        Ok(())
    };
    for (slot, &idx) in template.iter().enumerate() {
        write_unit("template", "", slot, idx)?;
    }
    for (lv, indices) in design.levels.iter().zip(&levels) {
        for (slot, &idx) in indices.iter().enumerate() {
            write_unit("matched", &lv.level, slot, idx)?;
        }
    }
    w.flush().map_err(DataError::from)?;
    Ok(())
}
