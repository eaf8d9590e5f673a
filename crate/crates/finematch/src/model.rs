//! Fine-balance matching models: three equivalent integer formulations, their
//! size accounting, and the disaggregation map that converts a selection of
//! units into an explicit slot-by-slot assignment.
//!
//! For a template with counts `N(p, k)` and a level (pool) of `L` units, the
//! task is to select exactly `T` units so that the selection's category
//! counts are as close to the template's as possible, in total absolute
//! deviation across all categories of all covariates.
//!
//! * [`Formulation::Assignment`]: binary `m[t, l]` assigns template slot `t`
//!   to pool unit `l`; every slot filled exactly once, every unit used at
//!   most once. `T * L` binaries.
//! * [`Formulation::PooledAssignment`]: same variables, but the per-slot rows
//!   are pooled into one cardinality row; slots become interchangeable.
//! * [`Formulation::Selection`]: binary `z[l]` simply selects units, with one
//!   cardinality row. `L` binaries, and the per-slot structure is recovered
//!   afterwards by [`disaggregate`]. Its relaxation has the same optimal value
//!   as the larger two, and its integer optima are the same selections.
//!
//! All three share the deviation variables `v[p, k] >= |count - N(p, k)|`
//! whose sum is minimized.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CategoryCounts, CovariateSchema};
use crate::lp::{Constraint, LinearProgram, Relation};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("template is empty")]
    EmptyTemplate,
    #[error("template has {t} units but the level only has {l}")]
    TemplateLargerThanLevel { t: usize, l: usize },
    #[error(
        "{kind:?} formulation needs {n_vars} variables for T = {t}, L = {l} \
         (about {predicted_memory_bytes} bytes dense); the guard caps pairing \
         variables at {cap} and dense solver memory at {cap_bytes} bytes -- \
         a smaller instance or the Selection formulation fits"
    )]
    SizeGuard {
        kind: Formulation,
        t: usize,
        l: usize,
        n_vars: usize,
        predicted_memory_bytes: u64,
        cap: usize,
        cap_bytes: u64,
    },
    #[error("{which} unit {unit}: covariate {covariate} has category index {index}, max {max}")]
    BadProfile { which: &'static str, unit: usize, covariate: usize, index: u16, max: usize },
    #[error("selection has {got} units, expected {expected}")]
    SelectionSize { expected: usize, got: usize },
    #[error("selection repeats unit {unit}")]
    SelectionDuplicate { unit: usize },
    #[error("selection names unit {unit}, level has only {l}")]
    SelectionOutOfRange { unit: usize, l: usize },
    #[error("selection weights sum to {sum}, expected {expected}")]
    SumMismatch { sum: f64, expected: f64 },
    #[error("selection weight {index} is {value}, outside [0, 1]")]
    WeightOutOfRange { index: usize, value: f64 },
    #[error("operation needs the {expected:?} formulation, model is {got:?}")]
    WrongKind { expected: Formulation, got: Formulation },
}

/// Which integer formulation a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Formulation {
    /// Slot-to-unit binaries with one row per slot and per unit.
    Assignment,
    /// Slot-to-unit binaries with the slot rows pooled into one.
    PooledAssignment,
    /// Unit-selection binaries; linear size. The default: it solves the
    /// same problem with a fraction of the variables.
    #[default]
    Selection,
}

/// Maps model variables to their meaning.
///
/// Variable order is fixed and documented: pairing or selection variables
/// first (`m[t, l]` row-major, or `z[l]` by unit), then one deviation
/// variable per `(covariate, category)` in flattened order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarMap {
    pub kind: Formulation,
    pub t: usize,
    pub l: usize,
    pub n_cat: usize,
}

impl VarMap {
    pub fn n_vars(&self) -> usize {
        match self.kind {
            Formulation::Assignment | Formulation::PooledAssignment => self.t * self.l + self.n_cat,
            Formulation::Selection => self.l + self.n_cat,
        }
    }

    /// Number of pairing/selection variables (the integer block).
    pub fn n_choice_vars(&self) -> usize {
        match self.kind {
            Formulation::Assignment | Formulation::PooledAssignment => self.t * self.l,
            Formulation::Selection => self.l,
        }
    }

    /// Index of `m[t, l]` (assignment formulations).
    pub fn m_index(&self, t: usize, l: usize) -> usize {
        debug_assert!(matches!(
            self.kind,
            Formulation::Assignment | Formulation::PooledAssignment
        ));
        t * self.l + l
    }

    /// Index of `z[l]` (selection formulation).
    pub fn z_index(&self, l: usize) -> usize {
        debug_assert!(self.kind == Formulation::Selection);
        l
    }

    /// Index of the deviation variable of flattened category `f`.
    pub fn v_index(&self, f: usize) -> usize {
        self.n_choice_vars() + f
    }
}

/// Size accounting for a formulation, before or after building it.
///
/// `n_constraints` counts logical constraints: each absolute-deviation pair
/// counts once, matching the closed-form sizes (`T*L + sum K` variables and
/// `T + L + sum K` constraints for [`Formulation::Assignment`], `L + sum K`
/// and `1 + sum K` for [`Formulation::Selection`]). `realized_rows` counts
/// solver rows, where each deviation splits into two inequalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormulationStats {
    pub kind: Formulation,
    pub t: usize,
    pub l: usize,
    pub total_categories: usize,
    pub n_vars: usize,
    pub n_constraints: usize,
    pub realized_rows: usize,
    pub predicted_memory_bytes: u64,
}

impl FormulationStats {
    /// Closed-form sizes for a formulation on a `(T, L, sum K)` instance.
    pub fn compute(kind: Formulation, t: usize, l: usize, total_categories: usize) -> Self {
        let k = total_categories;
        let (n_vars, n_constraints, realized_rows) = match kind {
            Formulation::Assignment => (t * l + k, t + l + k, 2 * k + l + t),
            Formulation::PooledAssignment => (t * l + k, 1 + l + k, 2 * k + l + 1),
            Formulation::Selection => (l + k, 1 + k, 2 * k + 1),
        };
        // The solver keeps the dense row matrix plus one column-major copy.
        let predicted_memory_bytes = 2 * (realized_rows as u64) * (n_vars as u64) * 8;
        FormulationStats {
            kind,
            t,
            l,
            total_categories,
            n_vars,
            n_constraints,
            realized_rows,
            predicted_memory_bytes,
        }
    }
}

/// Build-time options.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    /// Maximum `T * L` pairing variables the assignment formulations accept.
    pub pair_var_cap: usize,
    /// Maximum predicted dense solver memory, in bytes, for any formulation.
    pub memory_cap_bytes: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { pair_var_cap: 5_000_000, memory_cap_bytes: 1_500_000_000 }
    }
}

/// A built matching model: the LP relaxation plus everything needed to
/// interpret and post-process its solutions.
#[derive(Debug, Clone)]
pub struct MatchModel {
    pub kind: Formulation,
    pub lp: LinearProgram,
    /// Indices of the binary variables.
    pub integer_vars: Vec<usize>,
    pub var_map: VarMap,
    pub t: usize,
    pub l: usize,
    /// Template category counts `N(p, k)`.
    pub targets: CategoryCounts,
    /// Level unit profiles, in model unit order.
    pub level_x: Vec<Vec<u16>>,
    /// Template unit profiles, in slot order.
    pub template_x: Vec<Vec<u16>>,
    pub stats: FormulationStats,
    schema: CovariateSchema,
}

impl MatchModel {
    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    /// The fine-balance objective is a sum of absolute count deviations, so
    /// every integer-feasible point has an integer objective value; branch
    /// and bound uses this to round bounds up.
    pub fn objective_is_integral(&self) -> bool {
        true
    }

    /// Exact integer objective of a selection of level units.
    pub fn objective_of(&self, selection: &[usize]) -> Result<u64, ModelError> {
        self.check_selection(selection)?;
        let profiles: Vec<Vec<u16>> =
            selection.iter().map(|&i| self.level_x[i].clone()).collect();
        let counts = CategoryCounts::from_profiles(&self.schema, &profiles);
        Ok(counts.l1_distance(&self.targets))
    }

    fn check_selection(&self, selection: &[usize]) -> Result<(), ModelError> {
        if selection.len() != self.t {
            return Err(ModelError::SelectionSize { expected: self.t, got: selection.len() });
        }
        let mut seen = vec![false; self.l];
        for &u in selection {
            if u >= self.l {
                return Err(ModelError::SelectionOutOfRange { unit: u, l: self.l });
            }
            if seen[u] {
                return Err(ModelError::SelectionDuplicate { unit: u });
            }
            seen[u] = true;
        }
        Ok(())
    }

    /// Selected unit indices of an integral solution vector.
    pub fn selection_from_x(&self, x: &[f64]) -> Vec<usize> {
        (0..self.l)
            .filter(|&l| {
                let j = match self.kind {
                    Formulation::Selection => self.var_map.z_index(l),
                    _ => return (0..self.t).any(|t| x[self.var_map.m_index(t, l)] > 0.5),
                };
                x[j] > 0.5
            })
            .collect()
    }

    /// Per-unit selection weights `z[l]` implied by a solution vector.
    pub fn z_from_x(&self, x: &[f64]) -> Vec<f64> {
        match self.kind {
            Formulation::Selection => (0..self.l).map(|l| x[self.var_map.z_index(l)]).collect(),
            _ => (0..self.l)
                .map(|l| (0..self.t).map(|t| x[self.var_map.m_index(t, l)]).sum())
                .collect(),
        }
    }

    /// Deviation values `|count - N(p, k)|` induced by selection weights.
    pub fn induced_v(&self, z: &[f64]) -> Vec<f64> {
        let schema = &self.schema;
        let mut sums = vec![0.0; schema.total_categories()];
        for (l, x) in self.level_x.iter().enumerate() {
            let w = z[l];
            if w != 0.0 {
                for (p, &k) in x.iter().enumerate() {
                    sums[schema.flat_index(p, k as usize)] += w;
                }
            }
        }
        let targets = self.targets.flat();
        sums.iter().zip(&targets).map(|(&s, &n)| (s - n as f64).abs()).collect()
    }

    /// A full integer-feasible solution vector realizing `selection`, with
    /// slots assigned to selected units in ascending unit order.
    pub fn x_from_selection(&self, selection: &[usize]) -> Result<Vec<f64>, ModelError> {
        self.check_selection(selection)?;
        let mut ordered: Vec<usize> = selection.to_vec();
        ordered.sort_unstable();
        let mut x = vec![0.0; self.var_map.n_vars()];
        match self.kind {
            Formulation::Selection => {
                for &u in &ordered {
                    x[self.var_map.z_index(u)] = 1.0;
                }
            }
            Formulation::Assignment | Formulation::PooledAssignment => {
                for (slot, &u) in ordered.iter().enumerate() {
                    x[self.var_map.m_index(slot, u)] = 1.0;
                }
            }
        }
        let z: Vec<f64> = {
            let mut z = vec![0.0; self.l];
            for &u in &ordered {
                z[u] = 1.0;
            }
            z
        };
        for (f, v) in self.induced_v(&z).into_iter().enumerate() {
            x[self.var_map.v_index(f)] = v;
        }
        Ok(x)
    }

    /// Lifts fractional selection weights into an explicit slot assignment
    /// with the same objective (see [`disaggregate`]).
    pub fn lift_selection(&self, z: &[f64]) -> Result<Assignment, ModelError> {
        if self.kind != Formulation::Selection {
            return Err(ModelError::WrongKind {
                expected: Formulation::Selection,
                got: self.kind,
            });
        }
        let m = disaggregate(z, self.t)?;
        Ok(Assignment { m, z: z.to_vec(), v: self.induced_v(z) })
    }
}

/// A (possibly fractional) slot assignment: sparse `m[t, l]` entries, the
/// per-unit totals `z`, and the induced category deviations `v`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Assignment {
    /// `(slot, unit, mass)` triples with positive mass, ordered by slot.
    pub m: Vec<(usize, usize, f64)>,
    pub z: Vec<f64>,
    pub v: Vec<f64>,
}

impl Assignment {
    /// Row sums `sum_l m[t, l]` per slot.
    pub fn slot_totals(&self, t: usize) -> Vec<f64> {
        let mut out = vec![0.0; t];
        for &(slot, _, mass) in &self.m {
            out[slot] += mass;
        }
        out
    }

    /// Column sums `sum_t m[t, l]` per unit.
    pub fn unit_totals(&self, l: usize) -> Vec<f64> {
        let mut out = vec![0.0; l];
        for &(_, unit, mass) in &self.m {
            out[unit] += mass;
        }
        out
    }
}

/// Splits selection weights `z` (summing to `t`) across `t` template slots.
///
/// Walking units in index order, each slot is filled to total mass one before
/// the next slot starts; a unit whose weight straddles a slot boundary is
/// split between the two slots. Integral `z` therefore assigns each selected
/// unit wholly to one slot, and any feasible `z` yields row sums of exactly
/// one and column sums equal to `z`.
pub fn disaggregate(z: &[f64], t: usize) -> Result<Vec<(usize, usize, f64)>, ModelError> {
    const MASS_EPS: f64 = 1e-12;
    for (i, &w) in z.iter().enumerate() {
        if !(-1e-7..=1.0 + 1e-7).contains(&w) {
            return Err(ModelError::WeightOutOfRange { index: i, value: w });
        }
    }
    let sum: f64 = z.iter().sum();
    if (sum - t as f64).abs() > 1e-6 {
        return Err(ModelError::SumMismatch { sum, expected: t as f64 });
    }
    let mut m = Vec::new();
    let mut slot = 0usize;
    let mut room = 1.0f64; // remaining capacity of the current slot
    for (unit, &w) in z.iter().enumerate() {
        let mut avail = w.clamp(0.0, 1.0);
        while avail > MASS_EPS && slot < t {
            let take = avail.min(room);
            m.push((slot, unit, take));
            avail -= take;
            room -= take;
            if room <= MASS_EPS {
                slot += 1;
                room = 1.0;
            }
        }
    }
    Ok(m)
}

/// Builds a matching model for `template` against `level`.
pub fn build_model(
    schema: &CovariateSchema,
    template: &[Vec<u16>],
    level: &[Vec<u16>],
    kind: Formulation,
    config: &ModelConfig,
) -> Result<MatchModel, ModelError> {
    if template.is_empty() {
        return Err(ModelError::EmptyTemplate);
    }
    if template.len() > level.len() {
        return Err(ModelError::TemplateLargerThanLevel { t: template.len(), l: level.len() });
    }
    check_profiles(schema, template, "template")?;
    check_profiles(schema, level, "level")?;
    let targets = CategoryCounts::from_profiles(schema, template);
    build_from_parts(schema, targets, template.to_vec(), level.to_vec(), kind, None, config)
}

fn check_profiles(
    schema: &CovariateSchema,
    profiles: &[Vec<u16>],
    which: &'static str,
) -> Result<(), ModelError> {
    for (unit, x) in profiles.iter().enumerate() {
        assert_eq!(
            x.len(),
            schema.n_covariates(),
            "{which} unit {unit} has {} covariates, schema has {}",
            x.len(),
            schema.n_covariates()
        );
        for (p, &k) in x.iter().enumerate() {
            if k as usize >= schema.n_categories(p) {
                return Err(ModelError::BadProfile {
                    which,
                    unit,
                    covariate: p,
                    index: k,
                    max: schema.n_categories(p) - 1,
                });
            }
        }
    }
    Ok(())
}

/// Core builder; `total_override` replaces the cardinality right-hand side of
/// the selection formulation (used by [`counterexample`] to reproduce both
/// published conventions).
fn build_from_parts(
    schema: &CovariateSchema,
    targets: CategoryCounts,
    template_x: Vec<Vec<u16>>,
    level_x: Vec<Vec<u16>>,
    kind: Formulation,
    total_override: Option<f64>,
    config: &ModelConfig,
) -> Result<MatchModel, ModelError> {
    let t = template_x.len();
    let l = level_x.len();
    let n_cat = schema.total_categories();
    let stats = FormulationStats::compute(kind, t, l, n_cat);

    let pair_vars_over = matches!(kind, Formulation::Assignment | Formulation::PooledAssignment)
        && t.saturating_mul(l) > config.pair_var_cap;
    if pair_vars_over || stats.predicted_memory_bytes > config.memory_cap_bytes {
        return Err(ModelError::SizeGuard {
            kind,
            t,
            l,
            n_vars: stats.n_vars,
            predicted_memory_bytes: stats.predicted_memory_bytes,
            cap: config.pair_var_cap,
            cap_bytes: config.memory_cap_bytes,
        });
    }

    let var_map = VarMap { kind, t, l, n_cat };
    let n_vars = var_map.n_vars();
    let n_choice = var_map.n_choice_vars();

    // Category membership lists over level units.
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_cat];
    for (unit, x) in level_x.iter().enumerate() {
        for (p, &k) in x.iter().enumerate() {
            members[schema.flat_index(p, k as usize)].push(unit);
        }
    }

    let mut objective = vec![0.0; n_vars];
    for f in 0..n_cat {
        objective[var_map.v_index(f)] = 1.0;
    }

    let mut lower = vec![0.0; n_vars];
    let mut upper = vec![1.0; n_vars];
    for f in 0..n_cat {
        lower[var_map.v_index(f)] = 0.0;
        upper[var_map.v_index(f)] = f64::INFINITY;
    }

    let flat_labels = schema.flat_labels();
    let targets_flat = targets.flat();
    let mut constraints = Vec::with_capacity(stats.realized_rows);
    for (f, (cov, cat)) in flat_labels.iter().enumerate() {
        // Two rows per category: count - v <= N and count + v >= N.
        let mut base = vec![0.0; n_vars];
        for &unit in &members[f] {
            match kind {
                Formulation::Selection => base[var_map.z_index(unit)] = 1.0,
                _ => {
                    for slot in 0..t {
                        base[var_map.m_index(slot, unit)] = 1.0;
                    }
                }
            }
        }
        let n = targets_flat[f] as f64;
        let mut hi = base.clone();
        hi[var_map.v_index(f)] = -1.0;
        constraints.push(Constraint {
            name: format!("bal_hi[{cov}={cat}]"),
            coeffs: hi,
            rel: Relation::Le,
            rhs: n,
        });
        let mut lo = base;
        lo[var_map.v_index(f)] = 1.0;
        constraints.push(Constraint {
            name: format!("bal_lo[{cov}={cat}]"),
            coeffs: lo,
            rel: Relation::Ge,
            rhs: n,
        });
    }
    match kind {
        Formulation::Selection => {
            let mut row = vec![0.0; n_vars];
            for unit in 0..l {
                row[var_map.z_index(unit)] = 1.0;
            }
            constraints.push(Constraint {
                name: "total".into(),
                coeffs: row,
                rel: Relation::Eq,
                rhs: total_override.unwrap_or(t as f64),
            });
        }
        Formulation::Assignment | Formulation::PooledAssignment => {
            for unit in 0..l {
                let mut row = vec![0.0; n_vars];
                for slot in 0..t {
                    row[var_map.m_index(slot, unit)] = 1.0;
                }
                constraints.push(Constraint {
                    name: format!("unit[{unit}]"),
                    coeffs: row,
                    rel: Relation::Le,
                    rhs: 1.0,
                });
            }
            if kind == Formulation::Assignment {
                for slot in 0..t {
                    let mut row = vec![0.0; n_vars];
                    for unit in 0..l {
                        row[var_map.m_index(slot, unit)] = 1.0;
                    }
                    constraints.push(Constraint {
                        name: format!("slot[{slot}]"),
                        coeffs: row,
                        rel: Relation::Eq,
                        rhs: 1.0,
                    });
                }
            } else {
                let mut row = vec![0.0; n_vars];
                for j in 0..n_choice {
                    row[j] = 1.0;
                }
                constraints.push(Constraint {
                    name: "total".into(),
                    coeffs: row,
                    rel: Relation::Eq,
                    rhs: t as f64,
                });
            }
        }
    }
    debug_assert_eq!(constraints.len(), stats.realized_rows);

    let mut var_names = Vec::with_capacity(n_vars);
    match kind {
        Formulation::Selection => {
            for unit in 0..l {
                var_names.push(format!("z[{unit}]"));
            }
        }
        _ => {
            for slot in 0..t {
                for unit in 0..l {
                    var_names.push(format!("m[{slot},{unit}]"));
                }
            }
        }
    }
    for (cov, cat) in &flat_labels {
        var_names.push(format!("v[{cov}={cat}]"));
    }

    let lp = LinearProgram {
        name: format!("{kind:?}"),
        n: n_vars,
        objective,
        constraints,
        lower,
        upper,
        var_names: Some(var_names),
    };

    Ok(MatchModel {
        kind,
        integer_vars: (0..n_choice).collect(),
        var_map,
        t,
        l,
        targets,
        level_x,
        template_x,
        stats,
        schema: schema.clone(),
        lp,
    })
}

/// The smallest known instance whose selection relaxation has fractional
/// vertices: three covariates of three categories each, six pool units, and a
/// three-unit template with every category count equal to one.
///
/// No two-covariate instance can do this (two-covariate relaxations are
/// integral), which makes this the canonical worst case for checking vertex
/// classification. Two published conventions exist for its cardinality row,
/// selecting either the template size or a single unit;
/// [`counterexample::model`] builds both.
pub mod counterexample {
    use super::*;
    use crate::data::Covariate;

    /// Pool unit profiles (category indices for the three covariates).
    pub const UNITS: [[u16; 3]; 6] =
        [[0, 0, 0], [2, 2, 2], [0, 1, 2], [2, 1, 0], [1, 0, 1], [1, 2, 1]];

    /// Cardinality conventions seen in print for this instance.
    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum TotalConvention {
        /// Select as many units as the template has: `sum z = 3`.
        TemplateSize,
        /// Select a single unit: `sum z = 1`.
        One,
    }

    pub fn schema() -> CovariateSchema {
        CovariateSchema {
            covariates: (1..=3)
                .map(|p| Covariate {
                    name: format!("c{p}"),
                    categories: (1..=3).map(|k| format!("k{k}")).collect(),
                    missing_category: None,
                })
                .collect(),
        }
    }

    /// Template profiles: one unit per category of every covariate.
    pub fn template_profiles() -> Vec<Vec<u16>> {
        vec![vec![0, 0, 0], vec![1, 1, 1], vec![2, 2, 2]]
    }

    pub fn level_profiles() -> Vec<Vec<u16>> {
        UNITS.iter().map(|u| u.to_vec()).collect()
    }

    /// Builds the selection model under the given cardinality convention.
    pub fn model(convention: TotalConvention) -> MatchModel {
        let schema = schema();
        let template = template_profiles();
        let targets = CategoryCounts::from_profiles(&schema, &template);
        let total = match convention {
            TotalConvention::TemplateSize => None,
            TotalConvention::One => Some(1.0),
        };
        build_from_parts(
            &schema,
            targets,
            template,
            level_profiles(),
            Formulation::Selection,
            total,
            &ModelConfig::default(),
        )
        .expect("the counterexample instance always builds")
    }
}
