//! Dense two-phase primal simplex.
//!
//! Rows are normalized to a nonnegative right-hand side, then given a slack,
//! a surplus plus artificial, or an artificial. Phase one minimizes the sum of
//! artificials; a positive residual is reported with a Farkas certificate.
//! Artificial columns stay in the tableau after phase one so that row
//! multipliers can be read from their reduced costs, but they never re-enter.

use serde::{Deserialize, Serialize};

use super::{LpInstance, LpSolution, LpStatus, Sense};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub max_iterations: usize,
    /// Bland's smallest-index rule; otherwise the most negative reduced cost.
    pub bland: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            feasibility_tol: 1e-8,
            optimality_tol: 1e-8,
            max_iterations: 200_000,
            bland: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintKind {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub kind: ConstraintKind,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(coeffs: Vec<f64>, kind: ConstraintKind, rhs: f64) -> Self {
        Constraint { coeffs, kind, rhs }
    }
}

/// `opt c.x  s.t.  rows,  0 <= x <= upper` (use `f64::INFINITY` for no bound).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub upper: Vec<f64>,
}

/// Row multipliers `m` with `m <= 0` on `<=` rows, `m >= 0` on `>=` rows,
/// `m^T A <= 0` componentwise and `m^T b > 0`; no `x >= 0` can then satisfy
/// the rows. Upper bounds appear as trailing `<=` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarkasCertificate {
    pub multipliers: Vec<f64>,
    pub residual: f64,
}

impl FarkasCertificate {
    /// Checks the certificate against `lp` at tolerance `tol`.
    pub fn verify(&self, lp: &LinearProgram, tol: f64) -> bool {
        let rows = expanded_rows(lp);
        if self.multipliers.len() != rows.len() {
            return false;
        }
        let n = lp.objective.len();
        let mut combo = vec![0.0; n];
        let mut rhs = 0.0;
        for (m, r) in self.multipliers.iter().zip(&rows) {
            let ok = match r.kind {
                ConstraintKind::Le => *m <= tol,
                ConstraintKind::Ge => *m >= -tol,
                ConstraintKind::Eq => true,
            };
            if !ok {
                return false;
            }
            for (c, a) in combo.iter_mut().zip(&r.coeffs) {
                *c += m * a;
            }
            rhs += m * r.rhs;
        }
        combo.iter().all(|c| *c <= tol) && rhs > tol
    }
}

fn expanded_rows(lp: &LinearProgram) -> Vec<Constraint> {
    let n = lp.objective.len();
    let mut rows = lp.constraints.clone();
    for (j, u) in lp.upper.iter().enumerate() {
        if u.is_finite() {
            let mut coeffs = vec![0.0; n];
            coeffs[j] = 1.0;
            rows.push(Constraint::new(coeffs, ConstraintKind::Le, *u));
        }
    }
    rows
}

/// Outcome of [`solve_program`]. Duals follow the expanded row order
/// (constraints, then finite upper bounds).
#[derive(Debug, Clone, PartialEq)]
pub struct ProgramSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub iterations: usize,
    pub duals: Option<Vec<f64>>,
    pub certificate: Option<FarkasCertificate>,
}

struct Tableau {
    m: usize,
    ncols: usize,
    /// `m` constraint rows then the cost row, each `ncols + 1` wide.
    t: Vec<f64>,
    basis: Vec<usize>,
    blocked: Vec<bool>,
}

impl Tableau {
    fn w(&self) -> usize {
        self.ncols + 1
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.w() + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.ncols)
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.w();
        let p = self.t[r * w + c];
        for v in &mut self.t[r * w..(r + 1) * w] {
            *v /= p;
        }
        let prow: Vec<f64> = self.t[r * w..(r + 1) * w].to_vec();
        for i in 0..=self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * w + c];
            if f == 0.0 {
                continue;
            }
            for (v, pv) in self.t[i * w..(i + 1) * w].iter_mut().zip(&prow) {
                *v -= f * pv;
            }
            self.t[i * w + c] = 0.0;
        }
        self.basis[r] = c;
    }

    fn set_costs(&mut self, cost: &[f64]) {
        let w = self.w();
        let m = self.m;
        let mut row = vec![0.0; w];
        row[..self.ncols].copy_from_slice(cost);
        for i in 0..m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for (v, a) in row.iter_mut().zip(&self.t[i * w..(i + 1) * w]) {
                    *v -= cb * a;
                }
            }
        }
        self.t[m * w..].copy_from_slice(&row);
    }

    /// Runs simplex iterations on the current cost row.
    fn iterate(&mut self, cfg: &SolverConfig, iters: &mut usize) -> LpStatus {
        let piv_tol = 1e-9;
        let mut stalled = 0usize;
        loop {
            if *iters >= cfg.max_iterations {
                return LpStatus::NumericalFailure;
            }
            let m = self.m;
            // After a run of degenerate pivots, fall back to strict Bland
            // rules, which cannot cycle, until the objective moves again.
            let strict = stalled > STALL_LIMIT;
            let mut enter = None;
            let mut best = -cfg.optimality_tol;
            for j in 0..self.ncols {
                if self.blocked[j] {
                    continue;
                }
                let d = self.at(m, j);
                if cfg.bland || strict {
                    if d < -cfg.optimality_tol {
                        enter = Some(j);
                        break;
                    }
                } else if d < best {
                    best = d;
                    enter = Some(j);
                }
            }
            let Some(c) = enter else {
                return LpStatus::Optimal;
            };
            let leave = if strict {
                self.strict_ratio(c, piv_tol)
            } else {
                self.stable_ratio(c, piv_tol, cfg.feasibility_tol)
            };
            let Some(r) = leave else {
                return LpStatus::Unbounded;
            };
            let step = self.rhs(r).max(0.0) / self.at(r, c);
            if step > 1e-12 {
                stalled = 0;
            } else {
                stalled += 1;
            }
            self.pivot(r, c);
            *iters += 1;
        }
    }

    /// Two-pass ratio test: the smallest ratio with the feasibility tolerance
    /// relaxed bounds the step, and the largest pivot element within that
    /// bound leaves.
    fn stable_ratio(&self, c: usize, piv_tol: f64, feas_tol: f64) -> Option<usize> {
        let mut bound = f64::INFINITY;
        for i in 0..self.m {
            let a = self.at(i, c);
            if a > piv_tol {
                bound = bound.min((self.rhs(i).max(0.0) + feas_tol) / a);
            }
        }
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..self.m {
            let a = self.at(i, c);
            if a > piv_tol && self.rhs(i).max(0.0) / a <= bound {
                let better = match leave {
                    None => true,
                    Some((li, la)) => {
                        a > la * (1.0 + 1e-9)
                            || (a >= la * (1.0 - 1e-9) && self.basis[i] < self.basis[li])
                    }
                };
                if better {
                    leave = Some((i, a));
                }
            }
        }
        leave.map(|(i, _)| i)
    }

    /// Minimum ratio with ties going to the smallest basic index.
    fn strict_ratio(&self, c: usize, piv_tol: f64) -> Option<usize> {
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..self.m {
            let a = self.at(i, c);
            if a > piv_tol {
                let ratio = self.rhs(i).max(0.0) / a;
                leave = match leave {
                    Some((li, lr))
                        if !(ratio < lr - 1e-12
                            || (ratio <= lr + 1e-12 && self.basis[i] < self.basis[li])) =>
                    {
                        Some((li, lr))
                    }
                    _ => Some((i, ratio)),
                };
            }
        }
        leave.map(|(i, _)| i)
    }
}

/// Degenerate pivots tolerated before switching to strict Bland rules.
const STALL_LIMIT: usize = 50;

/// Solves a generic LP.
pub fn solve_program(lp: &LinearProgram, cfg: &SolverConfig) -> Result<ProgramSolution> {
    let n = lp.objective.len();
    if lp.upper.len() != n {
        return Err(Error::Input("upper bound length mismatch".into()));
    }
    let rows = expanded_rows(lp);
    for r in &rows {
        if r.coeffs.len() != n {
            return Err(Error::Input("constraint width mismatch".into()));
        }
        if !r.rhs.is_finite() || r.coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite constraint data".into()));
        }
    }
    if lp.objective.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite objective".into()));
    }
    let m = rows.len();
    // Each row is divided by its largest coefficient so pivots compare on one scale.
    let scale_of: Vec<f64> = rows
        .iter()
        .map(|r| {
            let big = r.coeffs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if big > 0.0 {
                big
            } else {
                1.0
            }
        })
        .collect();
    let mut sign = vec![1.0; m];
    let mut kinds = Vec::with_capacity(m);
    for (i, r) in rows.iter().enumerate() {
        let mut k = r.kind;
        if r.rhs < 0.0 {
            sign[i] = -1.0;
            k = match k {
                ConstraintKind::Le => ConstraintKind::Ge,
                ConstraintKind::Ge => ConstraintKind::Le,
                ConstraintKind::Eq => ConstraintKind::Eq,
            };
        }
        kinds.push(k);
    }
    // Column layout: originals, one slack/surplus per inequality, one artificial per >= or = row.
    let mut slack_col = vec![usize::MAX; m];
    let mut art_col = vec![usize::MAX; m];
    let mut next = n;
    for i in 0..m {
        if kinds[i] != ConstraintKind::Eq {
            slack_col[i] = next;
            next += 1;
        }
    }
    for i in 0..m {
        if kinds[i] != ConstraintKind::Le {
            art_col[i] = next;
            next += 1;
        }
    }
    let ncols = next;
    let w = ncols + 1;
    let mut t = vec![0.0; (m + 1) * w];
    let mut basis = vec![0; m];
    for (i, r) in rows.iter().enumerate() {
        let row = &mut t[i * w..(i + 1) * w];
        for j in 0..n {
            row[j] = sign[i] * r.coeffs[j] / scale_of[i];
        }
        row[ncols] = sign[i] * r.rhs / scale_of[i];
        match kinds[i] {
            ConstraintKind::Le => {
                row[slack_col[i]] = 1.0;
                basis[i] = slack_col[i];
            }
            ConstraintKind::Ge => {
                row[slack_col[i]] = -1.0;
                row[art_col[i]] = 1.0;
                basis[i] = art_col[i];
            }
            ConstraintKind::Eq => {
                row[art_col[i]] = 1.0;
                basis[i] = art_col[i];
            }
        }
    }
    let mut tab = Tableau {
        m,
        ncols,
        t,
        basis,
        blocked: vec![false; ncols],
    };
    let is_art: Vec<bool> = (0..ncols).map(|j| art_col.contains(&j)).collect();
    let mut iters = 0;

    // Multiplier of normalized row i from its identity column's reduced cost.
    let row_multipliers = |tab: &Tableau, cost: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|i| {
                let col = if kinds[i] == ConstraintKind::Le {
                    slack_col[i]
                } else {
                    art_col[i]
                };
                let y = cost[col] - tab.at(m, col);
                sign[i] * y / scale_of[i]
            })
            .collect()
    };

    if art_col.iter().any(|c| *c != usize::MAX) {
        let phase1: Vec<f64> = (0..ncols)
            .map(|j| if is_art[j] { 1.0 } else { 0.0 })
            .collect();
        tab.set_costs(&phase1);
        let st = tab.iterate(cfg, &mut iters);
        if st != LpStatus::Optimal {
            return Ok(failure(n, iters, LpStatus::NumericalFailure));
        }
        let residual = -tab.rhs(m);
        // The phase-one value is measured on scaled rows; report it on the original scale.
        let residual = if residual > cfg.feasibility_tol {
            residual * scale_of.iter().fold(0.0f64, |a, v| a.max(*v))
        } else {
            residual
        };
        if residual > cfg.feasibility_tol {
            let multipliers = row_multipliers(&tab, &phase1);
            return Ok(ProgramSolution {
                status: LpStatus::Infeasible,
                x: vec![0.0; n],
                objective_value: f64::NAN,
                iterations: iters,
                duals: None,
                certificate: Some(FarkasCertificate {
                    multipliers,
                    residual,
                }),
            });
        }
        // Drive zero-level artificials out of the basis where possible.
        for i in 0..m {
            if is_art[tab.basis[i]] {
                if let Some(j) = (0..ncols).find(|&j| !is_art[j] && tab.at(i, j).abs() > 1e-9) {
                    tab.pivot(i, j);
                }
            }
        }
        for j in 0..ncols {
            tab.blocked[j] = is_art[j];
        }
    }

    let flip = if lp.sense == Sense::Maximize {
        -1.0
    } else {
        1.0
    };
    let mut cost = vec![0.0; ncols];
    for j in 0..n {
        cost[j] = flip * lp.objective[j];
    }
    tab.set_costs(&cost);
    let st = tab.iterate(cfg, &mut iters);
    if st != LpStatus::Optimal {
        return Ok(failure(n, iters, st));
    }
    let mut x = vec![0.0; n];
    for i in 0..m {
        if tab.basis[i] < n {
            x[tab.basis[i]] = tab.rhs(i);
        }
    }
    for (j, v) in x.iter_mut().enumerate() {
        if *v < 0.0 && *v > -1e-11 {
            *v = 0.0;
        }
        if lp.upper[j].is_finite() && *v > lp.upper[j] && *v < lp.upper[j] + 1e-11 {
            *v = lp.upper[j];
        }
    }
    let duals: Vec<f64> = row_multipliers(&tab, &cost)
        .into_iter()
        .map(|y| flip * y)
        .collect();
    let objective_value: f64 = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();

    // Independent checks on the returned point and multipliers.
    let viol = rows
        .iter()
        .map(|r| {
            let lhs: f64 = r.coeffs.iter().zip(&x).map(|(a, b)| a * b).sum();
            match r.kind {
                ConstraintKind::Le => lhs - r.rhs,
                ConstraintKind::Ge => r.rhs - lhs,
                ConstraintKind::Eq => (lhs - r.rhs).abs(),
            }
        })
        .fold(x.iter().map(|v| -v).fold(0.0, f64::max), f64::max);
    let dual_obj: f64 = duals.iter().zip(&rows).map(|(y, r)| y * r.rhs).sum();
    let scale = 1.0 + objective_value.abs();
    let gap = (objective_value - dual_obj).abs();
    let status = if viol > cfg.feasibility_tol || gap > 1e-6 * scale {
        LpStatus::NumericalFailure
    } else {
        LpStatus::Optimal
    };
    Ok(ProgramSolution {
        status,
        x,
        objective_value,
        iterations: iters,
        duals: Some(duals),
        certificate: None,
    })
}

fn failure(n: usize, iterations: usize, status: LpStatus) -> ProgramSolution {
    ProgramSolution {
        status,
        x: vec![0.0; n],
        objective_value: f64::NAN,
        iterations,
        duals: None,
        certificate: None,
    }
}

/// Solves a fairness LP. Infeasibility is a status, not an error.
pub fn solve(instance: &LpInstance, cfg: &SolverConfig) -> Result<LpSolution> {
    let program = instance.to_program();
    let sol = solve_program(&program, cfg)?;
    let accuracy_estimate = if sol.status == LpStatus::Optimal {
        instance.accuracy_of_objective(sol.objective_value)
    } else {
        f64::NAN
    };
    Ok(LpSolution {
        status: sol.status,
        z: sol.x,
        objective_value: sol.objective_value,
        accuracy_estimate,
        iterations: sol.iterations,
        duals: sol.duals,
        certificate: sol.certificate,
    })
}
