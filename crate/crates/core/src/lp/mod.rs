//! Fairness linear programs: parameters, assembly, solving and text dumps.

mod build;
mod dump;
mod simplex;

pub use build::{
    aggregate, aggregate_weighted, build_lp, build_lp_eo, build_lp_eop, build_lp_sp,
    simplex_halfspaces, AggregatedParams, RegionForm, SpParams,
};
pub use dump::to_lp_text;
pub use simplex::{
    solve, solve_program, Constraint, ConstraintKind, FarkasCertificate, LinearProgram,
    ProgramSolution, SolverConfig,
};

use serde::{Deserialize, Serialize};

use crate::spec::Metric;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Minimize,
    Maximize,
}

/// `-bound <= coeffs . z <= bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoSidedRow {
    pub label: String,
    pub coeffs: Vec<f64>,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EqualityRow {
    pub label: String,
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

/// Half-space description `K u <= l` of one (group, client) simplex, acting on
/// the `num_classes` variables starting at `offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionBlock {
    pub group: usize,
    pub client: usize,
    pub offset: usize,
    pub k: Vec<Vec<f64>>,
    pub l: Vec<f64>,
}

impl RegionBlock {
    /// Largest violation `max_i (K u - l)_i`, negative when strictly inside.
    pub fn max_violation(&self, u: &[f64]) -> f64 {
        self.k
            .iter()
            .zip(&self.l)
            .map(|(row, l)| row.iter().zip(u).map(|(a, b)| a * b).sum::<f64>() - l)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// How variables are laid out in `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Layout {
    /// Blocks `z_{0,1}, z_{1,1}, ..., z_{0,K}, z_{1,K}`, each over classes `1..N`.
    TruePositive {
        num_classes: usize,
        num_clients: usize,
    },
    /// The true-positive blocks followed by barycentric weights
    /// `f_0..f_N` per (group, client) in the same block order.
    Barycentric {
        num_classes: usize,
        num_clients: usize,
    },
    /// `z^{yj}_{ac}` ordered by client, group, base prediction `j`, then output `y`.
    SpTable {
        num_classes: usize,
        num_clients: usize,
    },
}

impl Layout {
    pub fn num_classes(&self) -> usize {
        match *self {
            Layout::TruePositive { num_classes, .. }
            | Layout::Barycentric { num_classes, .. }
            | Layout::SpTable { num_classes, .. } => num_classes,
        }
    }

    pub fn num_clients(&self) -> usize {
        match *self {
            Layout::TruePositive { num_clients, .. }
            | Layout::Barycentric { num_clients, .. }
            | Layout::SpTable { num_clients, .. } => num_clients,
        }
    }

    pub fn num_vars(&self) -> usize {
        let (n, k) = (self.num_classes(), self.num_clients());
        match self {
            Layout::TruePositive { .. } => 2 * n * k,
            Layout::Barycentric { .. } => 2 * n * k + 2 * k * (n + 1),
            Layout::SpTable { .. } => 2 * k * n * n,
        }
    }

    /// Start of the true-positive block for (group, client).
    pub fn tp_offset(&self, group: usize, client: usize) -> usize {
        (2 * client + group) * self.num_classes()
    }

    /// Start of the barycentric weights for (group, client).
    pub fn mix_offset(&self, group: usize, client: usize) -> usize {
        let n = self.num_classes();
        2 * n * self.num_clients() + (2 * client + group) * (n + 1)
    }

    /// Index of `z^{yj}_{ac}` in the statistical parity layout.
    pub fn sp_index(&self, group: usize, client: usize, j: usize, y: usize) -> usize {
        let n = self.num_classes();
        ((2 * client + group) * n + j) * n + y
    }
}

/// An assembled fairness LP.
#[derive(Debug, Clone, PartialEq)]
pub struct LpInstance {
    pub metric: Metric,
    pub sense: Sense,
    pub objective: Vec<f64>,
    /// Global rows first, then local rows client by client.
    pub fairness: Vec<TwoSidedRow>,
    pub region: Vec<RegionBlock>,
    pub equalities: Vec<EqualityRow>,
    /// Box `0 <= z <= upper`.
    pub upper: Vec<f64>,
    pub layout: Layout,
    pub warnings: Vec<String>,
}

impl LpInstance {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn a_mat(&self) -> Vec<Vec<f64>> {
        self.fairness.iter().map(|r| r.coeffs.clone()).collect()
    }

    pub fn b_vec(&self) -> Vec<f64> {
        self.fairness.iter().map(|r| r.bound).collect()
    }

    /// Objective value of `z` in the instance's own sense.
    pub fn objective_at(&self, z: &[f64]) -> f64 {
        self.objective.iter().zip(z).map(|(c, v)| c * v).sum()
    }

    /// Accuracy implied by an objective value.
    pub fn accuracy_of_objective(&self, objective: f64) -> f64 {
        match self.sense {
            Sense::Minimize => -objective,
            Sense::Maximize => objective,
        }
    }

    /// Largest constraint violation of `z`, re-derived from the instance alone.
    pub fn max_violation(&self, z: &[f64]) -> f64 {
        let dot = |c: &[f64]| c.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        let mut worst = 0.0f64;
        for r in &self.fairness {
            worst = worst.max(dot(&r.coeffs).abs() - r.bound);
        }
        for e in &self.equalities {
            worst = worst.max((dot(&e.coeffs) - e.rhs).abs());
        }
        for b in &self.region {
            let n = b.k[0].len();
            worst = worst.max(b.max_violation(&z[b.offset..b.offset + n]));
        }
        for (v, u) in z.iter().zip(&self.upper) {
            worst = worst.max(-v).max(v - u);
        }
        worst
    }

    /// True-positive block `z_{ac}` of a solution.
    pub fn tp_block<'a>(&self, z: &'a [f64], group: usize, client: usize) -> &'a [f64] {
        let off = self.layout.tp_offset(group, client);
        &z[off..off + self.layout.num_classes()]
    }

    /// Expands into generic one-sided rows for the solver.
    pub fn to_program(&self) -> LinearProgram {
        let mut rows = Vec::new();
        for r in &self.fairness {
            rows.push(Constraint::new(
                r.coeffs.clone(),
                ConstraintKind::Le,
                r.bound,
            ));
            rows.push(Constraint::new(
                r.coeffs.iter().map(|v| -v).collect(),
                ConstraintKind::Le,
                r.bound,
            ));
        }
        let n = self.num_vars();
        for b in &self.region {
            for (krow, l) in b.k.iter().zip(&b.l) {
                let mut coeffs = vec![0.0; n];
                coeffs[b.offset..b.offset + krow.len()].copy_from_slice(krow);
                rows.push(Constraint::new(coeffs, ConstraintKind::Le, *l));
            }
        }
        for e in &self.equalities {
            rows.push(Constraint::new(e.coeffs.clone(), ConstraintKind::Eq, e.rhs));
        }
        LinearProgram {
            sense: self.sense,
            objective: self.objective.clone(),
            constraints: rows,
            upper: self.upper.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub z: Vec<f64>,
    pub objective_value: f64,
    pub accuracy_estimate: f64,
    pub iterations: usize,
    /// Multipliers of the solver's one-sided rows (see [`LpInstance::to_program`]).
    pub duals: Option<Vec<f64>>,
    pub certificate: Option<FarkasCertificate>,
}

/// Solves with both region forms and returns the two accuracy estimates;
/// errors if they differ by more than `1e-6`.
pub fn cross_check_region_forms(
    params: &AggregatedParams,
    spec: &crate::spec::FairnessSpec,
    cfg: &SolverConfig,
) -> crate::error::Result<(f64, f64)> {
    let half = solve(&build_lp(params, spec, RegionForm::HalfSpace)?, cfg)?;
    let bary = solve(&build_lp(params, spec, RegionForm::Barycentric)?, cfg)?;
    if half.status != bary.status {
        return Err(crate::error::Error::Numerical(format!(
            "region forms disagree on status: {:?} vs {:?}",
            half.status, bary.status
        )));
    }
    if half.status == LpStatus::Optimal
        && (half.accuracy_estimate - bary.accuracy_estimate).abs() > 1e-6
    {
        return Err(crate::error::Error::Numerical(format!(
            "region forms disagree: {} vs {}",
            half.accuracy_estimate, bary.accuracy_estimate
        )));
    }
    Ok((half.accuracy_estimate, bary.accuracy_estimate))
}
