//! Bounded-variable two-phase revised simplex.
//!
//! Works on the equality system `A x + s = b` where every row gets one slack
//! whose bounds encode the row sense. Nonbasic variables sit at a finite
//! bound; the basis inverse is kept explicitly and refreshed by elementary
//! (eta) updates, with periodic refactorization from scratch. Entering
//! variables are chosen by the largest reduced-cost violation; the leaving
//! row by a two-pass ratio test that prefers the largest pivot among rows
//! whose exact limit fits within the tolerance-relaxed smallest step. After
//! a run of degenerate pivots the rule switches to Bland's anti-cycling rule
//! until a nondegenerate step occurs, and a solve that still runs into
//! numerical trouble is retried once in a conservative mode (Bland's rule
//! throughout, frequent refactorization).

use crate::linalg::Matrix;

use super::{LinearProgram, LpError, LpSolution, LpStatus, Relation, SimplexConfig};

const PIVOT_TOL: f64 = 1e-9;
const RESIDUAL_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable, held at zero.
    Free,
}

/// A reusable solver for one program: the column-major constraint copy is
/// built once, and [`Simplex::solve_with_bounds`] may then be called many
/// times with different variable bounds (as branch and bound does).
pub struct Simplex<'a> {
    lp: &'a LinearProgram,
    cfg: SimplexConfig,
    m: usize,
    n: usize,
    /// Structural columns, column-major with stride `m`.
    cols: Vec<f64>,
    /// Slack bounds per row, from the row sense.
    slack_lo: Vec<f64>,
    slack_hi: Vec<f64>,
    b: Vec<f64>,
}

/// Solves `lp` with its own bounds. See [`Simplex`] for the reusable form.
pub fn solve_lp(lp: &LinearProgram, cfg: &SimplexConfig) -> Result<LpSolution, LpError> {
    Simplex::new(lp, cfg.clone())?.solve_with_bounds(&lp.lower, &lp.upper)
}

struct Work {
    /// Column bounds: structural then slack then artificial.
    lo: Vec<f64>,
    hi: Vec<f64>,
    cost: Vec<f64>,
    state: Vec<VarState>,
    basis: Vec<usize>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    /// Artificial columns: `art_sign[k]` is the coefficient of artificial `k`
    /// in its single row `art_row[k]`.
    art_row: Vec<usize>,
    art_sign: Vec<f64>,
    iterations: u64,
    degenerate_run: u64,
    bland: bool,
    /// Keeps Bland's rule on for the whole solve (conservative retries).
    force_bland: bool,
    since_refactor: u64,
    refactor_every: u64,
}

impl<'a> Simplex<'a> {
    pub fn new(lp: &'a LinearProgram, cfg: SimplexConfig) -> Result<Self, LpError> {
        lp.check()?;
        let m = lp.constraints.len();
        let n = lp.n;
        let mut cols = vec![0.0; m * n];
        for (i, c) in lp.constraints.iter().enumerate() {
            for (j, &a) in c.coeffs.iter().enumerate() {
                if a != 0.0 {
                    cols[j * m + i] = a;
                }
            }
        }
        let mut slack_lo = Vec::with_capacity(m);
        let mut slack_hi = Vec::with_capacity(m);
        for c in &lp.constraints {
            let (lo, hi) = match c.rel {
                Relation::Le => (0.0, f64::INFINITY),
                Relation::Ge => (f64::NEG_INFINITY, 0.0),
                Relation::Eq => (0.0, 0.0),
            };
            slack_lo.push(lo);
            slack_hi.push(hi);
        }
        let b = lp.constraints.iter().map(|c| c.rhs).collect();
        Ok(Simplex { lp, cfg, m, n, cols, slack_lo, slack_hi, b })
    }

    #[inline]
    fn col(&self, j: usize) -> &[f64] {
        &self.cols[j * self.m..(j + 1) * self.m]
    }

    /// `y . A_j` for any column (structural, slack, or artificial).
    #[inline]
    fn col_dot(&self, w: &Work, y: &[f64], j: usize) -> f64 {
        if j < self.n {
            crate::linalg::dot(y, self.col(j))
        } else if j < self.n + self.m {
            y[j - self.n]
        } else {
            let k = j - self.n - self.m;
            w.art_sign[k] * y[w.art_row[k]]
        }
    }

    /// `out = Binv . A_j`.
    fn ftran(&self, w: &Work, j: usize, out: &mut [f64]) {
        let m = self.m;
        if j < self.n {
            let col = self.col(j);
            for i in 0..m {
                out[i] = crate::linalg::dot(&w.binv[i * m..(i + 1) * m], col);
            }
        } else if j < self.n + self.m {
            let r = j - self.n;
            for i in 0..m {
                out[i] = w.binv[i * m + r];
            }
        } else {
            let k = j - self.n - self.m;
            let r = w.art_row[k];
            for i in 0..m {
                out[i] = w.art_sign[k] * w.binv[i * m + r];
            }
        }
    }

    fn nonbasic_value(&self, w: &Work, j: usize) -> f64 {
        match w.state[j] {
            VarState::AtLower => w.lo[j],
            VarState::AtUpper => w.hi[j],
            VarState::Free => 0.0,
            VarState::Basic => unreachable!("basic column asked for nonbasic value"),
        }
    }

    /// Solves with the given structural bounds (same length as `lp.n`).
    ///
    /// A solve that runs into numerical trouble is retried once from scratch
    /// in a conservative mode (Bland's rule throughout, frequent
    /// refactorization) before the error is reported.
    pub fn solve_with_bounds(&self, lower: &[f64], upper: &[f64]) -> Result<LpSolution, LpError> {
        match self.solve_attempt(lower, upper, false) {
            Err(LpError::NumericalInstability(_)) => self.solve_attempt(lower, upper, true),
            other => other,
        }
    }

    fn solve_attempt(
        &self,
        lower: &[f64],
        upper: &[f64],
        conservative: bool,
    ) -> Result<LpSolution, LpError> {
        let m = self.m;
        let n = self.n;
        assert_eq!(lower.len(), n);
        assert_eq!(upper.len(), n);
        for j in 0..n {
            if lower[j] > upper[j] || lower[j].is_nan() || upper[j].is_nan() {
                return Err(LpError::Malformed(format!(
                    "variable {j} has invalid bound interval [{}, {}]",
                    lower[j], upper[j]
                )));
            }
        }

        let mut w = Work {
            lo: lower.iter().chain(self.slack_lo.iter()).copied().collect(),
            hi: upper.iter().chain(self.slack_hi.iter()).copied().collect(),
            cost: vec![0.0; n + m],
            state: Vec::with_capacity(n + m),
            basis: Vec::with_capacity(m),
            binv: vec![0.0; m * m],
            xb: vec![0.0; m],
            art_row: Vec::new(),
            art_sign: Vec::new(),
            iterations: 0,
            degenerate_run: 0,
            bland: conservative,
            force_bland: conservative,
            since_refactor: 0,
            refactor_every: if conservative { 25 } else { self.cfg.refactor_every },
        };

        // Every nonbasic column starts at its bound nearest zero.
        for j in 0..n + m {
            let state = if w.lo[j].is_finite() {
                if w.hi[j].is_finite() && w.hi[j].abs() < w.lo[j].abs() {
                    VarState::AtUpper
                } else {
                    VarState::AtLower
                }
            } else if w.hi[j].is_finite() {
                VarState::AtUpper
            } else {
                VarState::Free
            };
            w.state.push(state);
        }

        // Crash basis: the row's slack where that is feasible, an artificial
        // elsewhere. Slack nonbasic values are always zero, so the residual
        // below is exactly the value the slack would take if made basic.
        let mut residual = self.b.clone();
        for j in 0..n + m {
            let v = self.nonbasic_value(&w, j);
            if v != 0.0 {
                if j < n {
                    let col = self.col(j);
                    for i in 0..m {
                        residual[i] -= col[i] * v;
                    }
                } else {
                    residual[j - n] -= v;
                }
            }
        }
        for i in 0..m {
            let s = n + i;
            let r = residual[i];
            if r >= w.lo[s] - self.cfg.feas_tol && r <= w.hi[s] + self.cfg.feas_tol {
                w.state[s] = VarState::Basic;
                w.basis.push(s);
            } else {
                let k = w.art_row.len();
                w.art_row.push(i);
                w.art_sign.push(if r >= 0.0 { 1.0 } else { -1.0 });
                w.lo.push(0.0);
                w.hi.push(f64::INFINITY);
                w.cost.push(0.0);
                w.state.push(VarState::Basic);
                w.basis.push(n + m + k);
            }
        }
        self.refactorize(&mut w)?;

        let n_art = w.art_row.len();
        if n_art > 0 {
            // Phase 1: minimize the total artificial mass.
            for k in 0..n_art {
                w.cost[n + m + k] = 1.0;
            }
            self.run_phase(&mut w)?;
            let infeas: f64 = w
                .basis
                .iter()
                .zip(&w.xb)
                .filter(|(&j, _)| j >= n + m)
                .map(|(_, &v)| v.abs())
                .sum();
            if infeas > 1e-7 {
                return Ok(LpSolution {
                    status: LpStatus::Infeasible,
                    x: Vec::new(),
                    objective_value: 0.0,
                    basis: Vec::new(),
                    is_vertex: false,
                    iterations: w.iterations,
                });
            }
            // Fix artificials at zero for phase 2; basic ones may linger at
            // value zero in degenerate bases.
            for k in 0..n_art {
                let j = n + m + k;
                w.cost[j] = 0.0;
                w.lo[j] = 0.0;
                w.hi[j] = 0.0;
                if w.state[j] != VarState::Basic {
                    w.state[j] = VarState::AtLower;
                }
            }
        }

        // Phase 2.
        w.cost[..n].copy_from_slice(&self.lp.objective);
        let status = self.run_phase(&mut w)?;
        if status == PhaseOutcome::Unbounded {
            return Ok(LpSolution {
                status: LpStatus::Unbounded,
                x: Vec::new(),
                objective_value: 0.0,
                basis: Vec::new(),
                is_vertex: false,
                iterations: w.iterations,
            });
        }

        // Verify the final point honestly before reporting it.
        self.refactorize(&mut w)?;
        self.pivot_out_artificials(&mut w)?;
        let x = self.full_solution(&w);
        let objective_value = crate::linalg::dot(&x[..n], &self.lp.objective);
        let residual = self.lp.row_residual(&x[..n]);
        if residual > RESIDUAL_LIMIT {
            return Err(LpError::NumericalInstability(format!(
                "feasibility residual {residual:.3e} exceeds {RESIDUAL_LIMIT:.1e} at the final basis"
            )));
        }

        let mut basis: Vec<usize> = w.basis.clone();
        basis.sort_unstable();
        Ok(LpSolution {
            status: LpStatus::Optimal,
            x: x[..n].to_vec(),
            objective_value,
            basis,
            is_vertex: true,
            iterations: w.iterations,
        })
    }

    /// Full variable vector (structural + slack + artificial).
    fn full_solution(&self, w: &Work) -> Vec<f64> {
        let mut x = vec![0.0; w.lo.len()];
        for j in 0..w.lo.len() {
            if w.state[j] != VarState::Basic {
                x[j] = self.nonbasic_value(w, j);
            }
        }
        for (i, &j) in w.basis.iter().enumerate() {
            x[j] = w.xb[i];
        }
        x
    }

    /// Rebuilds the basis inverse and basic values from scratch and checks
    /// feasibility of the represented point.
    fn refactorize(&self, w: &mut Work) -> Result<(), LpError> {
        let m = self.m;
        let n = self.n;
        let mut bmat = Matrix::zeros(m, m);
        for (i, &j) in w.basis.iter().enumerate() {
            if j < n {
                let col = self.col(j);
                for r in 0..m {
                    bmat.set(r, i, col[r]);
                }
            } else if j < n + m {
                bmat.set(j - n, i, 1.0);
            } else {
                let k = j - n - m;
                bmat.set(w.art_row[k], i, w.art_sign[k]);
            }
        }
        let inv = bmat
            .inverse(1e-11)
            .ok_or_else(|| LpError::NumericalInstability("singular basis matrix".into()))?;
        w.binv = inv.a;

        let mut rhs = self.b.clone();
        for j in 0..w.lo.len() {
            if w.state[j] == VarState::Basic {
                continue;
            }
            let v = self.nonbasic_value(w, j);
            if v == 0.0 {
                continue;
            }
            if j < n {
                let col = self.col(j);
                for i in 0..m {
                    rhs[i] -= col[i] * v;
                }
            } else if j < n + m {
                rhs[j - n] -= v;
            }
        }
        for i in 0..m {
            w.xb[i] = crate::linalg::dot(&w.binv[i * m..(i + 1) * m], &rhs);
        }
        w.since_refactor = 0;
        Ok(())
    }

    /// Replaces basic artificials at zero by structural or slack columns
    /// where the pivot is numerically sound; rows that admit no such pivot
    /// are dependent and keep their artificial at zero.
    fn pivot_out_artificials(&self, w: &mut Work) -> Result<(), LpError> {
        let nm = self.n + self.m;
        let rows: Vec<usize> =
            (0..self.m).filter(|&i| w.basis[i] >= nm).collect();
        if rows.is_empty() {
            return Ok(());
        }
        let mut wcol = vec![0.0; self.m];
        for r in rows {
            for j in 0..nm {
                if w.state[j] == VarState::Basic {
                    continue;
                }
                self.ftran(w, j, &mut wcol);
                if wcol[r].abs() > 1e-7 {
                    let old = w.basis[r];
                    self.apply_eta(w, r, &wcol);
                    w.state[old] = VarState::AtLower;
                    w.basis[r] = j;
                    w.state[j] = VarState::Basic;
                    // Zero-step basis change; refactorization restores the
                    // basic values at the unchanged point.
                    self.refactorize(w)?;
                    break;
                }
            }
        }
        Ok(())
    }

    fn apply_eta(&self, w: &mut Work, r: usize, wcol: &[f64]) {
        let m = self.m;
        let piv = wcol[r];
        let (before, rest) = w.binv.split_at_mut(r * m);
        let (prow, after) = rest.split_at_mut(m);
        for v in prow.iter_mut() {
            *v /= piv;
        }
        for (i, chunk) in before.chunks_exact_mut(m).enumerate() {
            let f = wcol[i];
            if f != 0.0 {
                for (c, &p) in chunk.iter_mut().zip(prow.iter()) {
                    *c -= f * p;
                }
            }
        }
        for (i, chunk) in after.chunks_exact_mut(m).enumerate() {
            let f = wcol[r + 1 + i];
            if f != 0.0 {
                for (c, &p) in chunk.iter_mut().zip(prow.iter()) {
                    *c -= f * p;
                }
            }
        }
    }

    fn run_phase(&self, w: &mut Work) -> Result<PhaseOutcome, LpError> {
        let m = self.m;
        let mut y = vec![0.0; m];
        let mut wcol = vec![0.0; m];
        loop {
            if w.iterations >= self.cfg.max_iters {
                return Err(LpError::IterationLimit(self.cfg.max_iters));
            }
            w.iterations += 1;
            if w.iterations % 65536 == 0 {
                let mut obj: f64 =
                    w.basis.iter().zip(&w.xb).map(|(&j, &v)| w.cost[j] * v).sum();
                for j in 0..w.lo.len() {
                    if w.state[j] != VarState::Basic {
                        obj += w.cost[j] * self.nonbasic_value(w, j);
                    }
                }
                log::debug!(
                    "simplex	iter={}	obj={obj:.9}	bland={}	stall_run={}",
                    w.iterations,
                    w.bland,
                    w.degenerate_run
                );
            }

            // y = c_B . Binv
            for j in 0..m {
                let mut s = 0.0;
                for i in 0..m {
                    let cb = w.cost[w.basis[i]];
                    if cb != 0.0 {
                        s += cb * w.binv[i * m + j];
                    }
                }
                y[j] = s;
            }

            // Price: most-violating reduced cost, or first violating under
            // Bland's rule. Ties break to the lowest column index.
            let mut entering: Option<(usize, f64, i8)> = None;
            let ncols = w.lo.len();
            for j in 0..ncols {
                let state = w.state[j];
                if state == VarState::Basic || w.lo[j] == w.hi[j] {
                    continue;
                }
                let d = w.cost[j] - self.col_dot(w, &y, j);
                let dir: i8 = match state {
                    VarState::AtLower if d < -self.cfg.cost_tol => 1,
                    VarState::AtUpper if d > self.cfg.cost_tol => -1,
                    VarState::Free if d.abs() > self.cfg.cost_tol => {
                        if d < 0.0 {
                            1
                        } else {
                            -1
                        }
                    }
                    _ => continue,
                };
                if w.bland {
                    entering = Some((j, d, dir));
                    break;
                }
                match entering {
                    Some((_, best, _)) if d.abs() <= best.abs() => {}
                    _ => entering = Some((j, d, dir)),
                }
            }

            let Some((j_in, d_in, dir)) = entering else {
                return Ok(PhaseOutcome::Optimal);
            };
            let dir = dir as f64;

            self.ftran(w, j_in, &mut wcol);

            // Ratio test over basic bounds plus the entering variable's own
            // range, in two passes. The first pass finds the smallest step
            // under bounds relaxed by the feasibility tolerance; the second
            // picks, among rows whose exact limit fits inside that step, the
            // one with the largest pivot magnitude. Preferring a well-scaled
            // pivot keeps the basis inverse sound even when a degenerate row
            // carries a noise-sized coefficient; the bound overshoot this
            // allows is at most the feasibility tolerance. Under Bland's
            // rule the classic smallest-ratio, lowest-index pivot is used
            // instead, keeping its anti-cycling argument intact.
            let range = w.hi[j_in] - w.lo[j_in];
            let mut theta_relaxed = if range.is_finite() { range } else { f64::INFINITY };
            let slack = if w.bland { 0.0 } else { self.cfg.feas_tol };
            for i in 0..m {
                let delta = dir * wcol[i];
                let bi = w.basis[i];
                let relaxed = if delta > PIVOT_TOL {
                    if w.lo[bi].is_finite() {
                        (w.xb[i] - w.lo[bi] + slack) / delta
                    } else {
                        continue;
                    }
                } else if delta < -PIVOT_TOL {
                    if w.hi[bi].is_finite() {
                        (w.hi[bi] - w.xb[i] + slack) / -delta
                    } else {
                        continue;
                    }
                } else {
                    continue;
                };
                theta_relaxed = theta_relaxed.min(relaxed.max(0.0));
            }

            if theta_relaxed.is_infinite() {
                return Ok(PhaseOutcome::Unbounded);
            }

            // (row, hit_lower, exact limit, pivot magnitude)
            let mut leave: Option<(usize, bool, f64, f64)> = None;
            for i in 0..m {
                let delta = dir * wcol[i];
                let bi = w.basis[i];
                let (limit, hits_lower) = if delta > PIVOT_TOL {
                    if w.lo[bi].is_finite() {
                        (((w.xb[i] - w.lo[bi]) / delta).max(0.0), true)
                    } else {
                        continue;
                    }
                } else if delta < -PIVOT_TOL {
                    if w.hi[bi].is_finite() {
                        (((w.hi[bi] - w.xb[i]) / -delta).max(0.0), false)
                    } else {
                        continue;
                    }
                } else {
                    continue;
                };
                if limit > theta_relaxed {
                    continue;
                }
                let mag = delta.abs();
                let better = match leave {
                    None => true,
                    Some((r, _, best_limit, best_mag)) => {
                        if w.bland {
                            limit < best_limit - 1e-12
                                || (limit < best_limit + 1e-12 && bi < w.basis[r])
                        } else {
                            mag > best_mag + 1e-12
                                || ((mag - best_mag).abs() <= 1e-12 && bi < w.basis[r])
                        }
                    }
                };
                if better {
                    leave = Some((i, hits_lower, limit, mag));
                }
            }

            let theta = match leave {
                Some((_, _, limit, _)) => limit,
                None => range,
            };

            if w.degenerate_run >= self.cfg.bland_after {
                w.bland = true;
            }
            // A step counts as stalled when the objective moves less than the
            // degeneracy tolerance: zero-length pivots, but also the tiny
            // tolerance-slack steps the relaxed ratio test allows, which make
            // no real progress and must still engage the anti-cycling rule.
            if d_in.abs() * theta <= self.cfg.degen_tol {
                w.degenerate_run += 1;
            } else {
                w.degenerate_run = 0;
                w.bland = w.force_bland;
            }

            match leave {
                None => {
                    // Bound flip: the entering variable crosses its range.
                    for i in 0..m {
                        w.xb[i] -= dir * theta * wcol[i];
                    }
                    w.state[j_in] = match w.state[j_in] {
                        VarState::AtLower => VarState::AtUpper,
                        VarState::AtUpper => VarState::AtLower,
                        s => s,
                    };
                }
                Some((r, hit_lower, _, _)) => {
                    let entering_value = self.nonbasic_value(w, j_in) + dir * theta;
                    for i in 0..m {
                        w.xb[i] -= dir * theta * wcol[i];
                    }
                    let leaving = w.basis[r];
                    w.state[leaving] =
                        if hit_lower { VarState::AtLower } else { VarState::AtUpper };
                    self.apply_eta(w, r, &wcol);
                    w.basis[r] = j_in;
                    w.state[j_in] = VarState::Basic;
                    w.xb[r] = entering_value;
                    w.since_refactor += 1;
                    if w.since_refactor >= w.refactor_every {
                        self.refactorize(w)?;
                        self.check_residual(w)?;
                    }
                }
            }
        }
    }

    fn check_residual(&self, w: &Work) -> Result<(), LpError> {
        for (i, &j) in w.basis.iter().enumerate() {
            let v = w.xb[i];
            if v < w.lo[j] - RESIDUAL_LIMIT || v > w.hi[j] + RESIDUAL_LIMIT {
                return Err(LpError::NumericalInstability(format!(
                    "basic variable {j} drifted to {v:.6e}, outside [{}, {}]",
                    w.lo[j], w.hi[j]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PhaseOutcome {
    Optimal,
    Unbounded,
}
