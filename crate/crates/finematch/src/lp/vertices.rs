//! Exhaustive vertex enumeration for small polyhedra.
//!
//! The program is rewritten in standard form (all variables nonnegative,
//! equality rows only; finite upper bounds become rows), a feasible basis is
//! found by a phase-1 simplex, and the graph of lexicographically feasible
//! bases is then traversed breadth-first. Lexicographic ratio tests emulate a
//! perturbation of the right-hand side anchored at the starting basis, which
//! makes the pivot from every basis unique even on heavily degenerate
//! polytopes; every vertex of the original polyhedron carries at least one
//! lex-feasible basis, so the traversal finds them all. Unbounded edge
//! directions are recognized and skipped, so pointed unbounded polyhedra are
//! handled; their vertex set is still finite.

use std::collections::{BTreeSet, VecDeque};

use thiserror::Error;

use crate::linalg::{dot, Matrix};

use super::{LinearProgram, Relation};

const PIVOT_TOL: f64 = 1e-9;

/// Guards and tolerances for [`enumerate_vertices`].
#[derive(Debug, Clone)]
pub struct VertexConfig {
    /// Refuse programs with more structural variables than this.
    pub max_vars: usize,
    /// Abort after visiting this many bases.
    pub basis_budget: u64,
    /// A coordinate within this distance of an integer counts as integral.
    pub integral_tol: f64,
    /// Two vertices within this distance (in every coordinate) are one.
    pub dedupe_tol: f64,
}

impl Default for VertexConfig {
    fn default() -> Self {
        VertexConfig {
            max_vars: 25,
            basis_budget: 10_000_000,
            integral_tol: 1e-7,
            dedupe_tol: 1e-7,
        }
    }
}

/// One vertex in original variable coordinates.
#[derive(Debug, Clone)]
pub struct Vertex {
    pub x: Vec<f64>,
    pub integral: bool,
}

/// All vertices of the feasible region.
#[derive(Debug, Clone)]
pub struct VertexSet {
    pub vertices: Vec<Vertex>,
    pub integral_count: usize,
    pub fractional_count: usize,
    pub bases_visited: u64,
}

impl VertexSet {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Vertices with at least one fractional coordinate.
    pub fn fractional(&self) -> impl Iterator<Item = &Vertex> {
        self.vertices.iter().filter(|v| !v.integral)
    }
}

#[derive(Debug, Error)]
pub enum VertexError {
    #[error("program has {n} structural variables, enumeration is limited to {max}")]
    TooManyVariables { n: usize, max: usize },
    #[error("variable {index} has no finite bound; enumeration needs a pointed region")]
    UnboundedVariable { index: usize },
    #[error("basis budget of {budget} exhausted after finding {found} vertices")]
    BudgetExhausted { budget: u64, found: usize },
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("numerical failure during enumeration: {0}")]
    Numerical(String),
}

/// Standard-form rewrite: `M y = d`, `y >= 0`, with bookkeeping to map
/// standard coordinates back to original ones.
struct StandardForm {
    m: usize,
    n_std: usize,
    n_orig: usize,
    /// Column-major matrix, stride `m`.
    cols: Vec<f64>,
    d: Vec<f64>,
    /// x_orig[j] = sign[j] * y[j] + shift[j] for j < n_orig.
    sign: Vec<f64>,
    shift: Vec<f64>,
}

impl StandardForm {
    fn col(&self, j: usize) -> &[f64] {
        &self.cols[j * self.m..(j + 1) * self.m]
    }

    fn build(lp: &LinearProgram, cfg: &VertexConfig) -> Result<StandardForm, VertexError> {
        lp.check().map_err(|e| VertexError::Malformed(e.to_string()))?;
        if lp.n > cfg.max_vars {
            return Err(VertexError::TooManyVariables { n: lp.n, max: cfg.max_vars });
        }
        let n = lp.n;
        let mut sign = vec![1.0; n];
        let mut shift = vec![0.0; n];
        let mut upper_rows: Vec<(usize, f64)> = Vec::new();
        for j in 0..n {
            if lp.lower[j].is_finite() {
                shift[j] = lp.lower[j];
                if lp.upper[j].is_finite() {
                    upper_rows.push((j, lp.upper[j] - lp.lower[j]));
                }
            } else if lp.upper[j].is_finite() {
                sign[j] = -1.0;
                shift[j] = lp.upper[j];
            } else {
                return Err(VertexError::UnboundedVariable { index: j });
            }
        }

        let n_slack = lp
            .constraints
            .iter()
            .filter(|c| c.rel != Relation::Eq)
            .count()
            + upper_rows.len();
        let m = lp.constraints.len() + upper_rows.len();
        let n_std = n + n_slack;
        let mut rows: Vec<Vec<f64>> = vec![vec![0.0; n_std]; m];
        let mut d = vec![0.0; m];
        let mut slack_at = n;
        for (i, c) in lp.constraints.iter().enumerate() {
            for j in 0..n {
                rows[i][j] = c.coeffs[j] * sign[j];
            }
            d[i] = c.rhs - dot(&c.coeffs, &shift);
            match c.rel {
                Relation::Le => {
                    rows[i][slack_at] = 1.0;
                    slack_at += 1;
                }
                Relation::Ge => {
                    rows[i][slack_at] = -1.0;
                    slack_at += 1;
                }
                Relation::Eq => {}
            }
        }
        for (k, &(j, range)) in upper_rows.iter().enumerate() {
            let i = lp.constraints.len() + k;
            rows[i][j] = 1.0;
            rows[i][slack_at] = 1.0;
            slack_at += 1;
            d[i] = range;
        }
        debug_assert_eq!(slack_at, n_std);

        let mut cols = vec![0.0; m * n_std];
        for (i, row) in rows.iter().enumerate() {
            for (j, &a) in row.iter().enumerate() {
                if a != 0.0 {
                    cols[j * m + i] = a;
                }
            }
        }
        Ok(StandardForm { m, n_std, n_orig: n, cols, d, sign, shift })
    }

    /// Original coordinates of a standard-form point given by a basis and its
    /// basic values.
    fn original_point(&self, basis: &[usize], xb: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_std];
        for (&j, &v) in basis.iter().zip(xb) {
            y[j] = v;
        }
        (0..self.n_orig).map(|j| self.sign[j] * y[j] + self.shift[j]).collect()
    }
}

/// Outcome of the phase-1 search for a feasible basis.
enum Phase1 {
    Infeasible,
    /// Feasible basis (one real column per surviving row) plus the indices of
    /// dependent rows to drop.
    Feasible { basis: Vec<usize>, dropped_rows: Vec<usize>, iterations: u64 },
}

/// Dense tableau phase-1 with Bland's rule. The instances are tiny, so a full
/// tableau is the simplest correct choice.
fn phase1(sf: &StandardForm, budget: u64) -> Result<Phase1, VertexError> {
    let m = sf.m;
    let n = sf.n_std;
    // Tableau rows: [real columns | rhs], with rhs flipped nonnegative.
    let mut t: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let flip = if sf.d[i] < 0.0 { -1.0 } else { 1.0 };
            let mut row: Vec<f64> = (0..n).map(|j| flip * sf.col(j)[i]).collect();
            row.push(flip * sf.d[i]);
            row
        })
        .collect();
    let mut basis: Vec<usize> = (0..m).map(|i| n + i).collect(); // artificials
    // Phase-1 reduced costs for real columns: 0 - sum of rows.
    let mut obj: Vec<f64> = (0..=n)
        .map(|j| -t.iter().map(|row| row[j]).sum::<f64>())
        .collect();

    let mut iterations = 0u64;
    loop {
        if iterations >= budget {
            return Err(VertexError::BudgetExhausted { budget, found: 0 });
        }
        iterations += 1;
        // Bland: lowest improving column.
        let Some(j) = (0..n).find(|&j| obj[j] < -PIVOT_TOL) else {
            break;
        };
        let mut leave: Option<usize> = None;
        let mut best = f64::INFINITY;
        for (i, row) in t.iter().enumerate() {
            if row[j] > PIVOT_TOL {
                let ratio = row[n] / row[j];
                let better = match leave {
                    None => true,
                    Some(r) => {
                        ratio < best - 1e-12
                            || (ratio < best + 1e-12 && basis[i] < basis[r])
                    }
                };
                if better {
                    best = ratio.min(best);
                    leave = Some(i);
                }
            }
        }
        let Some(r) = leave else {
            // A positive phase-1 cost column with no blocking row cannot
            // happen: the objective is bounded below by zero.
            return Err(VertexError::Numerical("phase-1 ratio test found no pivot".into()));
        };
        pivot(&mut t, &mut obj, &mut basis, r, j);
    }

    // Classify remaining artificial rows.
    let mut dropped_rows = Vec::new();
    for i in 0..m {
        if basis[i] < n {
            continue;
        }
        if t[i][n] > 1e-8 {
            return Ok(Phase1::Infeasible);
        }
        match (0..n).find(|&j| t[i][j].abs() > 1e-8) {
            Some(j) => pivot(&mut t, &mut obj, &mut basis, i, j),
            None => dropped_rows.push(i),
        }
    }
    let basis = basis
        .iter()
        .enumerate()
        .filter(|(i, _)| !dropped_rows.contains(i))
        .map(|(_, &b)| b)
        .collect();
    Ok(Phase1::Feasible { basis, dropped_rows, iterations })
}

fn pivot(t: &mut [Vec<f64>], obj: &mut [f64], basis: &mut [usize], r: usize, j: usize) {
    let piv = t[r][j];
    for v in t[r].iter_mut() {
        *v /= piv;
    }
    let prow = t[r].clone();
    for (i, row) in t.iter_mut().enumerate() {
        if i != r && row[j] != 0.0 {
            let f = row[j];
            for (v, &p) in row.iter_mut().zip(&prow) {
                *v -= f * p;
            }
        }
    }
    if obj[j] != 0.0 {
        let f = obj[j];
        for (v, &p) in obj.iter_mut().zip(&prow) {
            *v -= f * p;
        }
    }
    basis[r] = j;
}

/// Enumerates every vertex of the feasible region of `lp`.
///
/// Infeasible programs yield an empty set. The feasible region must be
/// pointed, which is guaranteed here by requiring a finite bound on every
/// variable.
pub fn enumerate_vertices(
    lp: &LinearProgram,
    cfg: &VertexConfig,
) -> Result<VertexSet, VertexError> {
    let sf = StandardForm::build(lp, cfg)?;

    if sf.m == 0 {
        // No rows at all: the only vertex of {y >= 0} is the origin.
        let x: Vec<f64> = sf.shift.clone();
        let integral = is_integral(&x, cfg.integral_tol);
        return Ok(VertexSet {
            integral_count: integral as usize,
            fractional_count: !integral as usize,
            vertices: vec![Vertex { x, integral }],
            bases_visited: 0,
        });
    }

    let (start_basis, dropped, phase1_iters) = match phase1(&sf, cfg.basis_budget)? {
        Phase1::Infeasible => {
            return Ok(VertexSet {
                vertices: Vec::new(),
                integral_count: 0,
                fractional_count: 0,
                bases_visited: 0,
            })
        }
        Phase1::Feasible { basis, dropped_rows, iterations } => (basis, dropped_rows, iterations),
    };

    // Rebuild without dependent rows.
    let sf = if dropped.is_empty() {
        sf
    } else {
        let keep: Vec<usize> = (0..sf.m).filter(|i| !dropped.contains(i)).collect();
        let m = keep.len();
        let mut cols = vec![0.0; m * sf.n_std];
        for j in 0..sf.n_std {
            let old = sf.col(j);
            for (new_i, &old_i) in keep.iter().enumerate() {
                cols[j * m + new_i] = old[old_i];
            }
        }
        StandardForm {
            m,
            n_std: sf.n_std,
            n_orig: sf.n_orig,
            cols,
            d: keep.iter().map(|&i| sf.d[i]).collect(),
            sign: sf.sign,
            shift: sf.shift,
        }
    };
    let m = sf.m;

    let mut start = start_basis;
    start.sort_unstable();
    let b0 = Matrix {
        rows: m,
        cols: m,
        a: {
            let mut a = vec![0.0; m * m];
            for (c, &j) in start.iter().enumerate() {
                let col = sf.col(j);
                for i in 0..m {
                    a[i * m + c] = col[i];
                }
            }
            a
        },
    };

    let mut visited: BTreeSet<Vec<u32>> = BTreeSet::new();
    let mut queue: VecDeque<Vec<usize>> = VecDeque::new();
    let key = |b: &[usize]| b.iter().map(|&v| v as u32).collect::<Vec<u32>>();
    visited.insert(key(&start));
    queue.push_back(start);

    let mut bases_visited = phase1_iters;
    let mut found: Vec<Vec<f64>> = Vec::new();
    let mut wcol = vec![0.0; m];

    while let Some(basis) = queue.pop_front() {
        bases_visited += 1;
        if bases_visited > cfg.basis_budget {
            return Err(VertexError::BudgetExhausted {
                budget: cfg.basis_budget,
                found: found.len(),
            });
        }

        let mut bmat = Matrix::zeros(m, m);
        for (c, &j) in basis.iter().enumerate() {
            let col = sf.col(j);
            for i in 0..m {
                bmat.set(i, c, col[i]);
            }
        }
        let binv = bmat.inverse(1e-10).ok_or_else(|| {
            VertexError::Numerical("visited basis matrix is numerically singular".into())
        })?;
        let xb = binv.mul_vec(&sf.d);
        let point = sf.original_point(&basis, &xb);
        if !found.iter().any(|p| close(p, &point, cfg.dedupe_tol)) {
            found.push(point);
        }

        // Lexicographic carry: rows of [xb | Binv * B0].
        let mut lex = Matrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                let mut s = 0.0;
                for k in 0..m {
                    s += binv.get(i, k) * b0.get(k, j);
                }
                lex.set(i, j, s);
            }
        }

        let in_basis: Vec<bool> = {
            let mut f = vec![false; sf.n_std];
            for &j in &basis {
                f[j] = true;
            }
            f
        };
        for j in 0..sf.n_std {
            if in_basis[j] {
                continue;
            }
            let col = sf.col(j);
            for i in 0..m {
                wcol[i] = dot(binv.row(i), col);
            }
            // Unbounded edge direction: no row blocks.
            if wcol.iter().all(|&w| w <= PIVOT_TOL) {
                continue;
            }
            // Lexicographic ratio test: unique blocking row.
            let mut r: Option<usize> = None;
            for i in 0..m {
                if wcol[i] <= PIVOT_TOL {
                    continue;
                }
                r = Some(match r {
                    None => i,
                    Some(best) => {
                        match lex_cmp(&xb, &lex, i, best, wcol[i], wcol[best]) {
                            std::cmp::Ordering::Less => i,
                            _ => best,
                        }
                    }
                });
            }
            let r = r.unwrap();
            let mut neighbor = basis.clone();
            neighbor[r] = j;
            neighbor.sort_unstable();
            let k = key(&neighbor);
            if !visited.contains(&k) {
                visited.insert(k);
                queue.push_back(neighbor);
            }
        }
    }

    let mut vertices: Vec<Vertex> = found
        .into_iter()
        .map(|x| {
            let integral = is_integral(&x, cfg.integral_tol);
            Vertex { x, integral }
        })
        .collect();
    vertices.sort_by(|a, b| {
        a.x.iter()
            .zip(&b.x)
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let integral_count = vertices.iter().filter(|v| v.integral).count();
    let fractional_count = vertices.len() - integral_count;
    Ok(VertexSet { vertices, integral_count, fractional_count, bases_visited })
}

/// Compares rows `i` and `j` of the perturbed ratio vectors
/// `(xb[.] | lex[., :]) / w[.]` lexicographically.
fn lex_cmp(
    xb: &[f64],
    lex: &Matrix,
    i: usize,
    j: usize,
    wi: f64,
    wj: f64,
) -> std::cmp::Ordering {
    let a0 = xb[i] / wi;
    let b0 = xb[j] / wj;
    if (a0 - b0).abs() > 1e-9 {
        return a0.total_cmp(&b0);
    }
    for k in 0..lex.cols {
        let a = lex.get(i, k) / wi;
        let b = lex.get(j, k) / wj;
        if (a - b).abs() > 1e-9 {
            return a.total_cmp(&b);
        }
    }
    // Numerically indistinguishable rows; fall back to the row index.
    i.cmp(&j)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn is_integral(x: &[f64], tol: f64) -> bool {
    x.iter().all(|&v| (v - v.round()).abs() <= tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{Constraint, LinearProgram};

    fn program(
        n: usize,
        rows: Vec<(Vec<f64>, Relation, f64)>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> LinearProgram {
        LinearProgram {
            name: "vx".into(),
            n,
            objective: vec![0.0; n],
            constraints: rows
                .into_iter()
                .enumerate()
                .map(|(i, (coeffs, rel, rhs))| Constraint {
                    name: format!("r{i}"),
                    coeffs,
                    rel,
                    rhs,
                })
                .collect(),
            lower,
            upper,
            var_names: None,
        }
    }

    #[test]
    fn unit_box_has_four_corners() {
        let p = program(2, vec![], vec![0.0, 0.0], vec![1.0, 1.0]);
        let vs = enumerate_vertices(&p, &VertexConfig::default()).unwrap();
        assert_eq!(vs.len(), 4);
        assert_eq!(vs.integral_count, 4);
        assert_eq!(vs.fractional_count, 0);
    }

    #[test]
    fn probability_simplex_has_unit_vertices() {
        let p = program(
            3,
            vec![(vec![1.0, 1.0, 1.0], Relation::Eq, 1.0)],
            vec![0.0; 3],
            vec![f64::INFINITY; 3],
        );
        let vs = enumerate_vertices(&p, &VertexConfig::default()).unwrap();
        assert_eq!(vs.len(), 3);
        assert_eq!(vs.integral_count, 3);
    }

    #[test]
    fn half_integral_vertex_is_classified_fractional() {
        // x + y <= 1, x + z <= 1, y + z <= 1 over [0,1]^3 has the
        // all-halves vertex.
        let p = program(
            3,
            vec![
                (vec![1.0, 1.0, 0.0], Relation::Le, 1.0),
                (vec![1.0, 0.0, 1.0], Relation::Le, 1.0),
                (vec![0.0, 1.0, 1.0], Relation::Le, 1.0),
            ],
            vec![0.0; 3],
            vec![1.0; 3],
        );
        let vs = enumerate_vertices(&p, &VertexConfig::default()).unwrap();
        assert!(vs
            .fractional()
            .any(|v| v.x.iter().all(|&c| (c - 0.5).abs() < 1e-9)));
        // Corners of the stable-set polytope of a triangle: empty set, three
        // singletons, and the all-halves point.
        assert_eq!(vs.len(), 5);
        assert_eq!(vs.fractional_count, 1);
    }

    #[test]
    fn infeasible_program_has_no_vertices() {
        let p = program(
            1,
            vec![
                (vec![1.0], Relation::Ge, 2.0),
                (vec![1.0], Relation::Le, 1.0),
            ],
            vec![0.0],
            vec![10.0],
        );
        let vs = enumerate_vertices(&p, &VertexConfig::default()).unwrap();
        assert!(vs.is_empty());
    }

    #[test]
    fn unbounded_directions_are_skipped() {
        // v >= |x - 0.5| over x in [0,1], v >= 0: pointed but unbounded in v.
        let p = program(
            2,
            vec![
                (vec![1.0, -1.0], Relation::Le, 0.5),
                (vec![-1.0, -1.0], Relation::Le, -0.5),
            ],
            vec![0.0, 0.0],
            vec![1.0, f64::INFINITY],
        );
        let vs = enumerate_vertices(&p, &VertexConfig::default()).unwrap();
        // Vertices: (0, 0.5), (1, 0.5), (0.5, 0).
        assert_eq!(vs.len(), 3);
        assert_eq!(vs.fractional_count, 3);
    }

    #[test]
    fn redundant_equality_rows_are_dropped() {
        let p = program(
            2,
            vec![
                (vec![1.0, 1.0], Relation::Eq, 1.0),
                (vec![2.0, 2.0], Relation::Eq, 2.0),
            ],
            vec![0.0, 0.0],
            vec![f64::INFINITY, f64::INFINITY],
        );
        let vs = enumerate_vertices(&p, &VertexConfig::default()).unwrap();
        assert_eq!(vs.len(), 2);
    }

    #[test]
    fn variable_guard_refuses_large_programs() {
        let p = program(30, vec![], vec![0.0; 30], vec![1.0; 30]);
        let err = enumerate_vertices(&p, &VertexConfig::default()).unwrap_err();
        assert!(matches!(err, VertexError::TooManyVariables { n: 30, max: 25 }));
    }

    #[test]
    fn free_variable_is_rejected() {
        let p = program(
            1,
            vec![],
            vec![f64::NEG_INFINITY],
            vec![f64::INFINITY],
        );
        let err = enumerate_vertices(&p, &VertexConfig::default()).unwrap_err();
        assert!(matches!(err, VertexError::UnboundedVariable { index: 0 }));
    }
}
