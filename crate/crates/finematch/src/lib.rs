//! Representative matched samples for multi-valued exposures.
//!
//! This crate builds matched designs in which every exposure group is made
//! comparable to one common template of units, so that groups are also
//! comparable to each other and to the population the template represents.
//! Comparability is enforced through fine balance: for every covariate
//! category, the number of selected units in each group must come as close as
//! possible to the template's count for that category.
//!
//! The selection problem is solved exactly with an internal linear programming
//! and branch-and-bound core. Three equivalent integer formulations are
//! implemented: a quadratic-size assignment model, a pooled variant, and a
//! linear-size selection model whose relaxation is provably tight in common
//! special cases. A small vertex enumerator makes those polytope statements
//! checkable on concrete instances.
//!
//! After matching, rank-based methods estimate exposure effects: pairwise
//! Hodges-Lehmann estimates, simultaneous rank-sum contrasts with familywise
//! error control, and sensitivity bounds for unobserved confounding.
//!
//! Each major capability has a runnable example:
//!
//! ```text
//! cargo run --release --example enumerate_fractional_vertices
//! cargo run --release --example formulation_reduction
//! cargo run --release --example template_matching_pipeline
//! cargo run --release --example balance_report
//! cargo run --release --example outcome_contrasts
//! cargo run --release --example sensitivity_bounds
//! cargo run --release --example scaling_grid
//! ```
//!
//! The `finematch` binary exposes the same pipeline as file-based subcommands
//! (`gen`, `template`, `match`, `balance`, `estimate`, `sensitivity`, `bench`,
//! `polytope`) that compose through CSV and JSON artifacts.

pub mod bench;
pub mod cli;
pub mod data;
pub mod design;
pub mod diagnostics;
pub mod inference;
pub mod linalg;
pub mod lp;
pub mod mip;
pub mod model;
pub mod rng;
