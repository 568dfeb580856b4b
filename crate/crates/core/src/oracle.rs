//! Exhaustive certifiers on tiny discrete populations.
//!
//! Everything here works from an exact joint table over
//! `(x, group, client, class)` and never from samples, so results can be
//! compared with the LP pipeline at tight tolerances.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fair::{FairPredictor, PredictorTables};
use crate::lp::{
    aggregate_weighted, solve_program, AggregatedParams, Constraint, ConstraintKind, LinearProgram,
    LpStatus, Sense, SolverConfig,
};
use crate::rng::RngStream;
use crate::score::{argmax, derived_class, ScoreModel, SharedModel};
use crate::spec::{FairnessSpec, Metric};
use crate::stats::ClientStats;

/// Cap on the number of deterministic maps an enumeration may visit.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// Exact distribution over `(x, a, c, y)` with a small feature alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteInstance {
    pub num_values: usize,
    pub num_classes: usize,
    pub num_clients: usize,
    /// Flat table indexed by [`DiscreteInstance::index`].
    pub joint: Vec<f64>,
}

impl DiscreteInstance {
    pub fn new(
        num_values: usize,
        num_classes: usize,
        num_clients: usize,
        joint: Vec<f64>,
    ) -> Result<Self> {
        if !(1..=8).contains(&num_values)
            || !(2..=3).contains(&num_classes)
            || !(1..=2).contains(&num_clients)
        {
            return Err(Error::Input(format!(
                "discrete instances need 1..=8 values, 2..=3 classes and 1..=2 clients, got {num_values}, {num_classes}, {num_clients}"
            )));
        }
        if joint.len() != num_values * 2 * num_clients * num_classes {
            return Err(Error::Input("joint table has the wrong size".into()));
        }
        if joint.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Input("joint table has a negative entry".into()));
        }
        let total: f64 = joint.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Input(format!("joint table sums to {total}")));
        }
        let inst = DiscreteInstance {
            num_values,
            num_classes,
            num_clients,
            joint,
        };
        for c in 0..num_clients {
            for a in 0..2 {
                if inst.group_client_mass(a, c) <= 0.0 {
                    return Err(Error::Input(format!(
                        "group {a} is absent at client {}",
                        c + 1
                    )));
                }
            }
        }
        Ok(inst)
    }

    /// Random instance; every entry is positive. With `symmetric` both groups
    /// share the same conditional distribution inside each client.
    pub fn random(
        num_values: usize,
        num_classes: usize,
        num_clients: usize,
        symmetric: bool,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let mut joint = vec![0.0; num_values * 2 * num_clients * num_classes];
        let idx = |x: usize, a: usize, c: usize, y: usize| {
            ((x * 2 + a) * num_clients + c) * num_classes + y
        };
        for c in 0..num_clients {
            for a in 0..2 {
                for x in 0..num_values {
                    for y in 0..num_classes {
                        let v = if symmetric && a == 1 {
                            joint[idx(x, 0, c, y)]
                        } else {
                            // Skewed weights give sharp posteriors and non-trivial tradeoffs.
                            let u: f64 = rng.rng().random_range(0.02..1.0);
                            u * u * u
                        };
                        joint[idx(x, a, c, y)] = v;
                    }
                }
            }
        }
        let total: f64 = joint.iter().sum();
        joint.iter_mut().for_each(|v| *v /= total);
        Self::new(num_values, num_classes, num_clients, joint)
    }

    pub fn index(&self, x: usize, a: usize, c: usize, y: usize) -> usize {
        ((x * 2 + a) * self.num_clients + c) * self.num_classes + y
    }

    pub fn prob(&self, x: usize, a: usize, c: usize, y: usize) -> f64 {
        self.joint[self.index(x, a, c, y)]
    }

    /// `Pr(x, a, c)`.
    pub fn mass(&self, x: usize, a: usize, c: usize) -> f64 {
        (0..self.num_classes).map(|y| self.prob(x, a, c, y)).sum()
    }

    pub fn group_client_mass(&self, a: usize, c: usize) -> f64 {
        (0..self.num_values).map(|x| self.mass(x, a, c)).sum()
    }

    pub fn client_weight(&self, c: usize) -> f64 {
        (0..2).map(|a| self.group_client_mass(a, c)).sum()
    }

    /// `Pr(Y = y, A = a | C = c)` restricted to one cell: `Pr(Y = y | a, c)`.
    pub fn class_given_cell(&self, a: usize, c: usize, y: usize) -> f64 {
        (0..self.num_values)
            .map(|x| self.prob(x, a, c, y))
            .sum::<f64>()
            / self.group_client_mass(a, c)
    }

    /// Exact posterior `Pr(Y | x, a, c)`; uniform where `(x, a, c)` has no mass.
    pub fn posterior(&self, x: usize, a: usize, c: usize) -> Vec<f64> {
        let m = self.mass(x, a, c);
        if m <= 0.0 {
            return vec![1.0 / self.num_classes as f64; self.num_classes];
        }
        (0..self.num_classes)
            .map(|y| self.prob(x, a, c, y) / m)
            .collect()
    }

    /// The posterior as a score model; the single feature is `x`.
    pub fn score_model(&self) -> SharedModel {
        Arc::new(DiscreteScore {
            inst: Arc::new(self.clone()),
        })
    }

    /// Argmax of the posterior for every `(x, a, c)`, in [`Self::cell_table_index`] order.
    pub fn argmax_table(&self) -> Vec<usize> {
        let mut t = vec![0; self.num_values * 2 * self.num_clients];
        for x in 0..self.num_values {
            for a in 0..2 {
                for c in 0..self.num_clients {
                    t[self.cell_table_index(x, a, c)] = argmax(&self.posterior(x, a, c));
                }
            }
        }
        t
    }

    pub fn cell_table_index(&self, x: usize, a: usize, c: usize) -> usize {
        (x * 2 + a) * self.num_clients + c
    }

    /// Population statistics of the argmax predictor, one per client.
    pub fn exact_client_stats(&self) -> Vec<ClientStats> {
        let table = self.argmax_table();
        let n = self.num_classes;
        (0..self.num_clients)
            .map(|c| {
                let w = self.client_weight(c);
                let mut s = ClientStats {
                    client: c,
                    num_samples: 1,
                    joint_tp: vec![vec![0.0; 2]; n],
                    base: vec![vec![0.0; 2]; n],
                    sp_joint: vec![vec![vec![0.0; 2]; n]; n],
                    sp_pred: vec![vec![0.0; 2]; n],
                    group_mass: vec![0.0; 2],
                };
                for x in 0..self.num_values {
                    for a in 0..2 {
                        let j = table[self.cell_table_index(x, a, c)];
                        for y in 0..n {
                            let p = self.prob(x, a, c, y) / w;
                            s.base[y][a] += p;
                            if j == y {
                                s.joint_tp[y][a] += p;
                            }
                            s.sp_joint[y][j][a] += p;
                            s.sp_pred[j][a] += p;
                            s.group_mass[a] += p;
                        }
                    }
                }
                s
            })
            .collect()
    }

    /// The parameters the server would see with infinitely many samples.
    pub fn exact_params(&self) -> Result<AggregatedParams> {
        let weights: Vec<f64> = (0..self.num_clients)
            .map(|c| self.client_weight(c))
            .collect();
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        aggregate_weighted(&self.exact_client_stats(), &weights)
    }
}

#[derive(Debug)]
struct DiscreteScore {
    inst: Arc<DiscreteInstance>,
}

impl ScoreModel for DiscreteScore {
    fn num_classes(&self) -> usize {
        self.inst.num_classes
    }

    fn score(&self, features: &[f64], group: usize, client: usize) -> Vec<f64> {
        let x = features
            .first()
            .map_or(0, |v| v.round().max(0.0) as usize)
            .min(self.inst.num_values - 1);
        self.inst.posterior(x, group, client)
    }
}

/// Exact behaviour of a randomized predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactMetrics {
    pub accuracy: f64,
    /// `Pr(out = y | Y = y, a, c)` indexed `[a][c][y]`; `None` without support.
    pub tp: Vec<Vec<Vec<Option<f64>>>>,
    /// `Pr(out = y | a, c)` indexed `[a][c][y]`.
    pub rate: Vec<Vec<Vec<f64>>>,
    /// Global per-class disparity under the chosen metric.
    pub global: Vec<Option<f64>>,
    /// Local per-class disparity, `[c][y]`.
    pub local: Vec<Vec<Option<f64>>>,
}

impl ExactMetrics {
    pub fn max_global(&self) -> f64 {
        self.global.iter().flatten().cloned().fold(0.0, f64::max)
    }

    pub fn max_local(&self, c: usize) -> f64 {
        self.local[c].iter().flatten().cloned().fold(0.0, f64::max)
    }

    /// Largest excess of any disparity over its tolerance.
    pub fn worst_violation(&self, spec: &FairnessSpec) -> f64 {
        let mut worst = self.max_global() - spec.eps_global;
        for (c, e) in spec.eps_local.iter().enumerate() {
            worst = worst.max(self.max_local(c) - e);
        }
        worst
    }
}

/// Metrics of the kernel `kernel(x, a, c)[y] = Pr(out = y | x, a, c)`.
pub fn exact_metrics(
    inst: &DiscreteInstance,
    metric: Metric,
    kernel: impl Fn(usize, usize, usize) -> Vec<f64>,
) -> ExactMetrics {
    let (n, k) = (inst.num_classes, inst.num_clients);
    let mut hit = vec![vec![vec![0.0; n]; k]; 2];
    let mut pos = vec![vec![vec![0.0; n]; k]; 2];
    let mut out = vec![vec![vec![0.0; n]; k]; 2];
    let mut accuracy = 0.0;
    for x in 0..inst.num_values {
        for a in 0..2 {
            for c in 0..k {
                let q = kernel(x, a, c);
                for y in 0..n {
                    let p = inst.prob(x, a, c, y);
                    hit[a][c][y] += p * q[y];
                    pos[a][c][y] += p;
                    accuracy += p * q[y];
                    let m = inst.mass(x, a, c);
                    if y == 0 {
                        for (o, qv) in q.iter().enumerate() {
                            out[a][c][o] += m * qv;
                        }
                    }
                }
            }
        }
    }
    let tp: Vec<Vec<Vec<Option<f64>>>> = (0..2)
        .map(|a| {
            (0..k)
                .map(|c| {
                    (0..n)
                        .map(|y| (pos[a][c][y] > 0.0).then(|| hit[a][c][y] / pos[a][c][y]))
                        .collect()
                })
                .collect()
        })
        .collect();
    let rate: Vec<Vec<Vec<f64>>> = (0..2)
        .map(|a| {
            (0..k)
                .map(|c| {
                    (0..n)
                        .map(|y| out[a][c][y] / inst.group_client_mass(a, c))
                        .collect()
                })
                .collect()
        })
        .collect();
    let constrained = if metric == Metric::EqualOpportunity {
        1
    } else {
        n
    };
    let gap = |clients: &[usize], y: usize| -> Option<f64> {
        let r = |a: usize| -> Option<f64> {
            let (num, den) = clients
                .iter()
                .fold((0.0, 0.0), |(nu, de), &c| match metric {
                    Metric::StatisticalParity => {
                        (nu + out[a][c][y], de + inst.group_client_mass(a, c))
                    }
                    _ => (nu + hit[a][c][y], de + pos[a][c][y]),
                });
            (den > 0.0).then(|| num / den)
        };
        Some((r(0)? - r(1)?).abs())
    };
    let all: Vec<usize> = (0..k).collect();
    ExactMetrics {
        accuracy,
        tp,
        rate,
        global: (0..constrained).map(|y| gap(&all, y)).collect(),
        local: (0..k)
            .map(|c| (0..constrained).map(|y| gap(&[c], y)).collect())
            .collect(),
    }
}

/// Exact metrics of a post-processed predictor built on `inst`'s argmax.
pub fn exact_metrics_of_predictor(
    inst: &DiscreteInstance,
    predictor: &FairPredictor,
) -> Result<ExactMetrics> {
    let table = inst.argmax_table();
    let n = inst.num_classes;
    // Resolve every cell first so missing weights surface as errors.
    let mut kernels = vec![vec![vec![0.0; n]; n]; 2 * inst.num_clients];
    for c in 0..inst.num_clients {
        for a in 0..2 {
            let cell = &mut kernels[2 * c + a];
            match &predictor.bundle().tables {
                PredictorTables::Mix(_) => {
                    let b = &predictor.mix_weights(a, c)?.beta;
                    for (j, row) in cell.iter_mut().enumerate() {
                        for (y, q) in row.iter_mut().enumerate() {
                            *q = b[y + 1] + if y == j { b[0] } else { 0.0 };
                        }
                    }
                }
                PredictorTables::Parity(_) => {
                    let t = predictor.parity_table(a, c)?;
                    for (j, row) in cell.iter_mut().enumerate() {
                        row.copy_from_slice(&t.table[j]);
                    }
                }
            }
        }
    }
    Ok(exact_metrics(inst, predictor.metric(), |x, a, c| {
        kernels[2 * c + a][table[inst.cell_table_index(x, a, c)]].clone()
    }))
}

/// One deterministic map `(x, a, c) -> y` with its exact true positive rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumeratedPredictor {
    pub table: Vec<usize>,
    /// Indexed `[(a * K + c) * N + y]`; 0 for classes without support.
    pub tp: Vec<f64>,
    pub accuracy: f64,
}

impl EnumeratedPredictor {
    pub fn cell_tp<'a>(&'a self, inst: &DiscreteInstance, a: usize, c: usize) -> &'a [f64] {
        let n = inst.num_classes;
        let off = (a * inst.num_clients + c) * n;
        &self.tp[off..off + n]
    }
}

/// True positive vector of the per-cell map `table[x]` at `(a, c)`.
pub fn cell_tp(inst: &DiscreteInstance, a: usize, c: usize, table: &[usize]) -> Vec<f64> {
    let n = inst.num_classes;
    let mut hit = vec![0.0; n];
    let mut pos = vec![0.0; n];
    for (x, &j) in table.iter().enumerate() {
        for y in 0..n {
            let p = inst.prob(x, a, c, y);
            pos[y] += p;
            if j == y {
                hit[y] += p;
            }
        }
    }
    hit.iter()
        .zip(&pos)
        .map(|(h, p)| if *p > 0.0 { h / p } else { 0.0 })
        .collect()
}

/// Every map `X x A x C -> Y` with its exact rates, in lexicographic order.
pub fn enumerate_deterministic_predictors(
    inst: &DiscreteInstance,
) -> Result<Vec<EnumeratedPredictor>> {
    let slots = inst.num_values * 2 * inst.num_clients;
    let n = inst.num_classes;
    let needed = (n as u128).checked_pow(slots as u32).unwrap_or(u128::MAX);
    if needed > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            needed,
            limit: ENUMERATION_LIMIT,
        });
    }
    let total = needed as usize;
    Ok((0..total)
        .into_par_iter()
        .map(|code| {
            let mut table = vec![0; slots];
            let mut rest = code;
            for slot in table.iter_mut().rev() {
                *slot = rest % n;
                rest /= n;
            }
            let mut tp = vec![0.0; 2 * inst.num_clients * n];
            let mut accuracy = 0.0;
            for a in 0..2 {
                for c in 0..inst.num_clients {
                    let cell: Vec<usize> = (0..inst.num_values)
                        .map(|x| table[inst.cell_table_index(x, a, c)])
                        .collect();
                    let t = cell_tp(inst, a, c, &cell);
                    for (x, &j) in cell.iter().enumerate() {
                        accuracy += inst.prob(x, a, c, j);
                    }
                    tp[(a * inst.num_clients + c) * n..(a * inst.num_clients + c + 1) * n]
                        .copy_from_slice(&t);
                }
            }
            EnumeratedPredictor {
                table,
                tp,
                accuracy,
            }
        })
        .collect())
}

/// `count` nonnegative weight vectors: the unit vectors, the all-ones vector,
/// then a low-discrepancy fill of the simplex.
pub fn theta_grid(num_classes: usize, count: usize) -> Vec<Vec<f64>> {
    let n = num_classes;
    let mut out: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    out.push(vec![1.0; n]);
    let alphas: Vec<f64> = (1..n)
        .map(|i| ((i as f64) * std::f64::consts::SQRT_2 + 0.5_f64.sqrt() * i as f64).fract())
        .collect();
    let golden = 0.618_033_988_749_894_9;
    let mut i = 1u64;
    while out.len() < count {
        // Sorted uniforms give uniform points on the simplex.
        let mut u: Vec<f64> = alphas
            .iter()
            .enumerate()
            .map(|(d, a)| ((i as f64) * (golden + a * (d as f64 + 1.0))).fract())
            .collect();
        u.sort_by(|a, b| a.total_cmp(b));
        let mut prev = 0.0;
        let mut theta = Vec::with_capacity(n);
        for v in &u {
            theta.push(v - prev);
            prev = *v;
        }
        theta.push(1.0 - prev);
        out.push(theta);
        i += 1;
    }
    out.truncate(count);
    out
}

/// The derived predictor for `theta` on cell `(a, c)`, as a map over `x`.
pub fn derived_cell_table(
    inst: &DiscreteInstance,
    theta: &[f64],
    a: usize,
    c: usize,
) -> Vec<usize> {
    (0..inst.num_values)
        .map(|x| derived_class(theta, &inst.posterior(x, a, c)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub predictors: usize,
    pub thetas: usize,
    /// Largest `v_theta . TP - v_theta . TP(derived_theta)` seen.
    pub worst_excess: f64,
    pub argmax_most_accurate: bool,
    pub midpoint_pairs: usize,
    pub worst_midpoint_error: f64,
    pub pass: bool,
}

/// Every deterministic predictor's rates lie below each supporting
/// hyperplane `v_theta` touched by the derived predictor for `theta`, and
/// midpoints of rate vectors are reached by the even mixture.
pub fn region_check(
    inst: &DiscreteInstance,
    thetas: &[Vec<f64>],
    midpoint_pairs: usize,
) -> Result<RegionReport> {
    let preds = enumerate_deterministic_predictors(inst)?;
    let (n, k) = (inst.num_classes, inst.num_clients);
    let mut support = Vec::new();
    for a in 0..2 {
        for c in 0..k {
            for theta in thetas {
                let v: Vec<f64> = (0..n)
                    .map(|y| theta[y] * inst.class_given_cell(a, c, y))
                    .collect();
                let best = cell_tp(inst, a, c, &derived_cell_table(inst, theta, a, c));
                let bound: f64 = v.iter().zip(&best).map(|(p, q)| p * q).sum();
                support.push((a, c, v, bound));
            }
        }
    }
    let worst_excess = preds
        .par_iter()
        .map(|p| {
            support
                .iter()
                .map(|(a, c, v, bound)| {
                    let t = p.cell_tp(inst, *a, *c);
                    v.iter().zip(t).map(|(x, y)| x * y).sum::<f64>() - bound
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);

    let argmax = inst.argmax_table();
    let best_acc = preds
        .iter()
        .map(|p| p.accuracy)
        .fold(f64::NEG_INFINITY, f64::max);
    let argmax_most_accurate = preds
        .iter()
        .any(|p| p.table == argmax && (p.accuracy - best_acc).abs() <= 1e-12);

    // Even mixtures of deterministic pairs, evaluated from the joint table.
    let mut rng = RngStream::new(0, "oracle/midpoints");
    let mut worst_midpoint_error = 0.0f64;
    for _ in 0..midpoint_pairs {
        let i = rng.rng().random_range(0..preds.len());
        let j = rng.rng().random_range(0..preds.len());
        let (p, q) = (&preds[i], &preds[j]);
        let mixed = exact_metrics(inst, Metric::EqualizedOdds, |x, a, c| {
            let slot = inst.cell_table_index(x, a, c);
            let mut out = vec![0.0; n];
            out[p.table[slot]] += 0.5;
            out[q.table[slot]] += 0.5;
            out
        });
        for a in 0..2 {
            for c in 0..k {
                for y in 0..n {
                    let mid = 0.5 * (p.cell_tp(inst, a, c)[y] + q.cell_tp(inst, a, c)[y]);
                    let got = mixed.tp[a][c][y].unwrap_or(0.0);
                    worst_midpoint_error = worst_midpoint_error.max((mid - got).abs());
                }
            }
        }
    }
    let pass = worst_excess <= 1e-9 && argmax_most_accurate && worst_midpoint_error <= 1e-12;
    Ok(RegionReport {
        predictors: preds.len(),
        thetas: thetas.len(),
        worst_excess,
        argmax_most_accurate,
        midpoint_pairs,
        worst_midpoint_error,
        pass,
    })
}

/// One probe of the frontier: targets `phi` for the first `N - 1` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierCase {
    pub group: usize,
    pub client: usize,
    pub phi: Vec<f64>,
    /// Best last-class rate over all randomized predictors; `None` if infeasible.
    pub optimum: Option<f64>,
    /// Value reached by a derived predictor or a mixture of two; `None` for
    /// probes expected to be infeasible.
    pub derived: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierReport {
    pub cases: Vec<FrontierCase>,
    pub pass: bool,
}

/// Maximum last-class rate over mixtures of all per-cell deterministic maps
/// with the first `N - 1` rates pinned to `phi`.
fn frontier_optimum(cell_points: &[Vec<f64>], phi: &[f64]) -> Result<Option<f64>> {
    let m = cell_points.len();
    let n = cell_points[0].len();
    let mut rows = Vec::with_capacity(n);
    for (g, target) in phi.iter().enumerate() {
        rows.push(Constraint::new(
            cell_points.iter().map(|p| p[g]).collect(),
            ConstraintKind::Eq,
            *target,
        ));
    }
    rows.push(Constraint::new(vec![1.0; m], ConstraintKind::Eq, 1.0));
    let lp = LinearProgram {
        sense: Sense::Maximize,
        objective: cell_points.iter().map(|p| p[n - 1]).collect(),
        constraints: rows,
        upper: vec![f64::INFINITY; m],
    };
    let sol = solve_program(&lp, &SolverConfig::default())?;
    Ok(match sol.status {
        LpStatus::Optimal => Some(sol.objective_value),
        LpStatus::Infeasible => None,
        _ => return Err(Error::Numerical("frontier LP failed".into())),
    })
}

fn all_cell_maps(inst: &DiscreteInstance, a: usize, c: usize) -> Vec<Vec<f64>> {
    let n = inst.num_classes;
    let total = n.pow(inst.num_values as u32);
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for code in 0..total {
        let mut rest = code;
        let table: Vec<usize> = (0..inst.num_values)
            .map(|_| {
                let v = rest % n;
                rest /= n;
                v
            })
            .collect();
        let tp = cell_tp(inst, a, c, &table);
        let key: Vec<u64> = tp.iter().map(|v| v.to_bits()).collect();
        if seen.insert(key) {
            out.push(tp);
        }
    }
    out
}

/// Checks that the best achievable last-class rate at pinned rates for the
/// other classes is reached by derived predictors (two classes: the upper
/// envelope of derived points; three classes: derived predictors with a
/// positive last weight and even mixtures of neighbours across a switching
/// boundary).
pub fn frontier_check(inst: &DiscreteInstance, thetas: &[Vec<f64>]) -> Result<FrontierReport> {
    let n = inst.num_classes;
    if !(2..=3).contains(&n) {
        return Err(Error::Input(
            "frontier checks need two or three classes".into(),
        ));
    }
    let tol = 1e-6;
    let mut cases = Vec::new();
    for c in 0..inst.num_clients {
        for a in 0..2 {
            let points = all_cell_maps(inst, a, c);
            let tp_of = |theta: &[f64]| cell_tp(inst, a, c, &derived_cell_table(inst, theta, a, c));
            let mut probes: Vec<(Vec<f64>, Option<f64>)> = Vec::new();
            if n == 2 {
                // Switching points of the derived family are the posteriors of class 1.
                let mut ts: Vec<f64> = vec![0.0, 1.0];
                for x in 0..inst.num_values {
                    let r = inst.posterior(x, a, c)[0];
                    ts.extend([r, (r - 1e-9).max(0.0), (r + 1e-9).min(1.0)]);
                }
                let derived: Vec<Vec<f64>> = ts.iter().map(|t| tp_of(&[1.0 - t, *t])).collect();
                let envelope = |phi: f64| -> Option<f64> {
                    let mut best: Option<f64> = None;
                    for p in &derived {
                        for q in &derived {
                            let (lo, hi) = if p[0] <= q[0] { (p, q) } else { (q, p) };
                            if lo[0] - 1e-12 <= phi && phi <= hi[0] + 1e-12 {
                                let w = if hi[0] - lo[0] > 1e-15 {
                                    (phi - lo[0]) / (hi[0] - lo[0])
                                } else {
                                    0.0
                                };
                                let v = lo[1] + w.clamp(0.0, 1.0) * (hi[1] - lo[1]);
                                best = Some(best.map_or(v, |b: f64| b.max(v)));
                            }
                        }
                    }
                    best
                };
                for i in 0..=20 {
                    let phi = i as f64 / 20.0;
                    probes.push((vec![phi], envelope(phi)));
                }
                let first = tp_of(&[1.0, 1.0]);
                probes.push((vec![first[0]], Some(first[1])));
            } else {
                for theta in thetas.iter().filter(|t| t[n - 1] > 1e-6) {
                    let t = tp_of(theta);
                    probes.push((t[..n - 1].to_vec(), Some(t[n - 1])));
                }
                // Neighbours across a switching boundary between consecutive grid points.
                for w in thetas.windows(2) {
                    let (p, q) = (&w[0], &w[1]);
                    let at = |s: f64| -> Vec<f64> {
                        p.iter()
                            .zip(q)
                            .map(|(u, v)| (1.0 - s) * u + s * v)
                            .collect()
                    };
                    let table_at = |s: f64| derived_cell_table(inst, &at(s), a, c);
                    if table_at(0.0) == table_at(1.0) {
                        continue;
                    }
                    let (mut lo, mut hi) = (0.0, 1.0);
                    let left = table_at(0.0);
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        if table_at(mid) == left {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    let theta_star = at(0.5 * (lo + hi));
                    if theta_star[n - 1] <= 1e-6 {
                        continue;
                    }
                    let l = cell_tp(inst, a, c, &table_at(lo));
                    let r = cell_tp(inst, a, c, &table_at(hi));
                    let mid: Vec<f64> = l.iter().zip(&r).map(|(u, v)| 0.5 * (u + v)).collect();
                    probes.push((mid[..n - 1].to_vec(), Some(mid[n - 1])));
                }
                let first = tp_of(&vec![1.0; n]);
                probes.push((first[..n - 1].to_vec(), Some(first[n - 1])));
            }
            // A target outside the unit box can never be met.
            probes.push((vec![1.5; n - 1], None));
            for (phi, derived) in probes {
                let optimum = frontier_optimum(&points, &phi)?;
                let pass = match (optimum, derived) {
                    (None, None) => true,
                    (Some(o), Some(d)) => (o - d).abs() <= tol,
                    _ => false,
                };
                cases.push(FrontierCase {
                    group: a,
                    client: c,
                    phi,
                    optimum,
                    derived,
                    pass,
                });
            }
        }
    }
    let pass = cases.iter().all(|c| c.pass);
    Ok(FrontierReport { cases, pass })
}

/// Best grid point found by [`bruteforce_fair_optimum`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BruteForceResult {
    pub accuracy: f64,
    /// Mixing weights per cell in block order `2 * client + group`.
    pub witness: Vec<Vec<f64>>,
    pub grid_points_per_cell: usize,
}

/// Points of the weight simplex on a grid of the given step.
pub fn simplex_grid(dim: usize, step: f64) -> Result<Vec<Vec<f64>>> {
    let m = (1.0 / step).round() as usize;
    if m == 0 || ((m as f64) * step - 1.0).abs() > 1e-9 {
        return Err(Error::Input(format!("grid step {step} must divide 1")));
    }
    fn rec(prefix: &mut Vec<usize>, left: usize, dim: usize, m: usize, out: &mut Vec<Vec<f64>>) {
        if prefix.len() == dim - 1 {
            prefix.push(left);
            out.push(prefix.iter().map(|v| *v as f64 / m as f64).collect());
            prefix.pop();
            return;
        }
        for v in 0..=left {
            prefix.push(v);
            rec(prefix, left - v, dim, m, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), m, dim, m, &mut out);
    Ok(out)
}

/// Accuracy slack a grid of step `step` may lose against the continuous optimum.
pub fn grid_slack(params: &AggregatedParams, step: f64) -> f64 {
    let mut l = 0.0;
    for y in 0..params.num_classes {
        for a in 0..2 {
            for c in 0..params.num_clients {
                l += params.p[y][a][c] * (1.0 + params.tp1[y][a][c]);
            }
        }
    }
    step * l
}

struct ClientChoice {
    acc: f64,
    g: [f64; 2],
    pick: (u32, u32),
}

/// Grid search over per-cell mixing weights of the base argmax predictor with
/// the constant predictors, keeping combinations whose exact disparities meet
/// `spec`. Supports the true-positive metrics with up to two clients.
pub fn bruteforce_fair_optimum(
    inst: &DiscreteInstance,
    spec: &FairnessSpec,
    step: f64,
) -> Result<Option<BruteForceResult>> {
    if spec.metric == Metric::StatisticalParity {
        return Err(Error::Input(
            "grid search covers the true-positive metrics only".into(),
        ));
    }
    let (n, k) = (inst.num_classes, inst.num_clients);
    if n != 2 && n != 3 {
        return Err(Error::Input(
            "grid search needs two or three classes".into(),
        ));
    }
    spec.validate(k)?;
    let params = inst.exact_params()?;
    let grid = simplex_grid(n + 1, step)?;
    let constrained = if spec.metric == Metric::EqualOpportunity {
        1
    } else {
        n
    };
    if constrained > 2 {
        return Err(Error::Input(
            "grid search supports at most two constrained classes".into(),
        ));
    }
    let tol = 1e-12;
    let op = |beta: &[f64], a: usize, c: usize| -> Vec<f64> {
        (0..n)
            .map(|y| beta[0] * params.tp1[y][a][c] + beta[y + 1])
            .collect()
    };
    let per_client: Vec<Vec<ClientChoice>> = (0..k)
        .map(|c| {
            let ops: Vec<[Vec<f64>; 2]> = grid.iter().map(|b| [op(b, 0, c), op(b, 1, c)]).collect();
            let mut out = Vec::new();
            for (i, oi) in ops.iter().enumerate() {
                for (j, oj) in ops.iter().enumerate() {
                    let (t0, t1) = (&oi[0], &oj[1]);
                    let ok = (0..constrained).all(|y| {
                        params.vacuous[y][0][c]
                            || params.vacuous[y][1][c]
                            || (t0[y] - t1[y]).abs() <= spec.eps_local[c] + tol
                    });
                    if !ok {
                        continue;
                    }
                    let acc: f64 = (0..n)
                        .map(|y| params.p[y][0][c] * t0[y] + params.p[y][1][c] * t1[y])
                        .sum();
                    let mut g = [0.0; 2];
                    for (y, gy) in g.iter_mut().enumerate().take(constrained) {
                        let (a0, a1) = (params.alpha[y][0], params.alpha[y][1]);
                        if a0 > 0.0 && a1 > 0.0 {
                            *gy = params.p[y][0][c] * t0[y] / a0 - params.p[y][1][c] * t1[y] / a1;
                        }
                    }
                    out.push(ClientChoice {
                        acc,
                        g,
                        pick: (i as u32, j as u32),
                    });
                }
            }
            out
        })
        .collect();

    let eps0 = spec.eps_global + tol;
    let result: Option<(f64, Vec<(u32, u32)>)> = match k {
        1 => per_client[0]
            .iter()
            .filter(|ch| ch.g.iter().all(|v| v.abs() <= eps0))
            .max_by(|x, y| x.acc.total_cmp(&y.acc))
            .map(|ch| (ch.acc, vec![ch.pick])),
        2 => join_two_clients(&per_client[0], &per_client[1], eps0),
        _ => {
            return Err(Error::Input(
                "grid search supports at most two clients".into(),
            ))
        }
    };
    Ok(result.map(|(accuracy, picks)| {
        let mut witness = Vec::with_capacity(2 * k);
        for (i, j) in picks {
            witness.push(grid[i as usize].clone());
            witness.push(grid[j as usize].clone());
        }
        BruteForceResult {
            accuracy,
            witness,
            grid_points_per_cell: grid.len(),
        }
    }))
}

/// Best `acc1 + acc2` with `|g1 + g2| <= eps` componentwise, using buckets
/// over the second client's contributions sorted by accuracy.
fn join_two_clients(
    first: &[ClientChoice],
    second: &[ClientChoice],
    eps: f64,
) -> Option<(f64, Vec<(u32, u32)>)> {
    if first.is_empty() || second.is_empty() {
        return None;
    }
    let h = eps.max(1e-3);
    let lo = [0, 1].map(|d| second.iter().map(|c| c.g[d]).fold(f64::INFINITY, f64::min));
    let hi = [0, 1].map(|d| {
        second
            .iter()
            .map(|c| c.g[d])
            .fold(f64::NEG_INFINITY, f64::max)
    });
    let dims = [0, 1].map(|d| ((hi[d] - lo[d]) / h).floor() as usize + 1);
    let bucket_of = |g: [f64; 2]| -> [usize; 2] {
        [0, 1].map(|d| (((g[d] - lo[d]) / h).floor().max(0.0) as usize).min(dims[d] - 1))
    };
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); dims[0] * dims[1]];
    for (i, ch) in second.iter().enumerate() {
        let b = bucket_of(ch.g);
        buckets[b[0] * dims[1] + b[1]].push(i);
    }
    for b in &mut buckets {
        b.sort_by(|x, y| second[*y].acc.total_cmp(&second[*x].acc));
    }
    let mut order: Vec<usize> = (0..first.len()).collect();
    order.sort_by(|x, y| first[*y].acc.total_cmp(&first[*x].acc));
    let best_second = second
        .iter()
        .map(|c| c.acc)
        .fold(f64::NEG_INFINITY, f64::max);

    let mut best: Option<(f64, usize, usize)> = None;
    for &i in &order {
        let f = &first[i];
        if let Some((b, _, _)) = best {
            if f.acc + best_second <= b {
                break;
            }
        }
        let qlo = [0, 1].map(|d| -eps - f.g[d]);
        let qhi = [0, 1].map(|d| eps - f.g[d]);
        if (0..2).any(|d| qhi[d] < lo[d] || qlo[d] > hi[d]) {
            continue;
        }
        let blo = bucket_of(qlo);
        let bhi = bucket_of(qhi);
        for b0 in blo[0]..=bhi[0] {
            for b1 in blo[1]..=bhi[1] {
                for &j in &buckets[b0 * dims[1] + b1] {
                    let s = &second[j];
                    if let Some((b, _, _)) = best {
                        if f.acc + s.acc <= b {
                            break;
                        }
                    }
                    if (0..2).all(|d| (f.g[d] + s.g[d]).abs() <= eps) {
                        best = Some((f.acc + s.acc, i, j));
                        break;
                    }
                }
            }
        }
    }
    best.map(|(acc, i, j)| (acc, vec![first[i].pick, second[j].pick]))
}

/// Outcome of comparing the LP pipeline with the grid search on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpAgreement {
    pub lp_accuracy: f64,
    /// Accuracy of the installed predictor computed from the joint table.
    pub exact_accuracy: f64,
    pub bruteforce_accuracy: Option<f64>,
    pub slack: f64,
    /// Largest excess of an exact disparity over its tolerance.
    pub worst_violation: f64,
    pub pass: bool,
}

/// Solves the fairness LP on exact statistics, installs the predictor, and
/// checks it against the exact disparities and the grid search.
pub fn lp_agreement(
    inst: &DiscreteInstance,
    spec: &FairnessSpec,
    step: f64,
) -> Result<LpAgreement> {
    use crate::fair::FairPredictor;
    use crate::lp::{build_lp, solve, RegionForm};
    use crate::score::ArgmaxPredictor;

    let params = inst.exact_params()?;
    let lp = match build_lp(&params, spec, RegionForm::HalfSpace) {
        Err(Error::DegenerateSimplex { .. }) => build_lp(&params, spec, RegionForm::Barycentric)?,
        other => other?,
    };
    let sol = solve(&lp, &SolverConfig::default())?;
    let predictor =
        FairPredictor::from_solution(ArgmaxPredictor::new(inst.score_model()), &params, &lp, &sol)?;
    let exact = exact_metrics_of_predictor(inst, &predictor)?;
    let bf = bruteforce_fair_optimum(inst, spec, step)?;
    let slack = grid_slack(&params, step);
    let lp_accuracy = sol.accuracy_estimate;
    let worst_violation = exact.worst_violation(spec);
    let agrees = match &bf {
        Some(b) => b.accuracy - 1e-6 <= lp_accuracy && lp_accuracy <= b.accuracy + slack,
        None => true,
    };
    let pass = agrees && worst_violation <= 1e-7 && (exact.accuracy - lp_accuracy).abs() <= 1e-6;
    Ok(LpAgreement {
        lp_accuracy,
        exact_accuracy: exact.accuracy,
        bruteforce_accuracy: bf.map(|b| b.accuracy),
        slack,
        worst_violation,
        pass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Region,
    Frontier,
    Lp,
}

impl Suite {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "region" => Ok(Suite::Region),
            "frontier" => Ok(Suite::Frontier),
            "lp" => Ok(Suite::Lp),
            other => Err(Error::Input(format!(
                "unknown suite `{other}` (expected region, frontier or lp)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// Runs one battery on built-in random instances drawn from `seed`.
pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<SuiteLine>> {
    let mut rng = RngStream::new(seed, "oracle/suite");
    let mut lines = Vec::new();
    match suite {
        Suite::Region => {
            for (i, (values, classes, clients)) in [(3, 2, 2), (4, 2, 1), (3, 3, 1), (2, 3, 2)]
                .into_iter()
                .enumerate()
            {
                let inst = DiscreteInstance::random(values, classes, clients, false, &mut rng)?;
                let r = region_check(&inst, &theta_grid(classes, 200), 200)?;
                lines.push(SuiteLine {
                    name: format!("region #{} (|X|={values}, N={classes}, K={clients})", i + 1),
                    pass: r.pass,
                    detail: format!(
                        "{} predictors, worst excess {:.2e}, worst midpoint error {:.2e}, argmax most accurate: {}",
                        r.predictors, r.worst_excess, r.worst_midpoint_error, r.argmax_most_accurate
                    ),
                });
            }
        }
        Suite::Frontier => {
            for (i, (values, classes)) in [(5, 2), (6, 2), (4, 3), (5, 3)].into_iter().enumerate() {
                let inst = DiscreteInstance::random(values, classes, 1, false, &mut rng)?;
                let r = frontier_check(&inst, &theta_grid(classes, 200))?;
                let worst = r
                    .cases
                    .iter()
                    .filter_map(|c| Some((c.optimum? - c.derived?).abs()))
                    .fold(0.0, f64::max);
                lines.push(SuiteLine {
                    name: format!("frontier #{} (|X|={values}, N={classes})", i + 1),
                    pass: r.pass,
                    detail: format!("{} probes, worst gap {:.2e}", r.cases.len(), worst),
                });
            }
        }
        Suite::Lp => {
            let cases = [
                (Metric::EqualizedOdds, 0.05, 0.05),
                (Metric::EqualizedOdds, 0.02, 0.1),
                (Metric::EqualOpportunity, 0.03, 0.03),
                (Metric::EqualizedOdds, 1.0, 1.0),
            ];
            for (i, (metric, g, l)) in cases.into_iter().enumerate() {
                let inst = DiscreteInstance::random(3, 2, 2, false, &mut rng)?;
                let spec = FairnessSpec::uniform(metric, g, l, 2);
                let r = lp_agreement(&inst, &spec, 0.02)?;
                lines.push(SuiteLine {
                    name: format!("lp #{} ({}, eps {g}/{l})", i + 1, metric.tag()),
                    pass: r.pass,
                    detail: format!(
                        "lp {:.6}, exact {:.6}, grid {}, slack {:.4}, worst violation {:.2e}",
                        r.lp_accuracy,
                        r.exact_accuracy,
                        r.bruteforce_accuracy
                            .map_or("infeasible".into(), |v| format!("{v:.6}")),
                        r.slack,
                        r.worst_violation
                    ),
                });
            }
        }
    }
    Ok(lines)
}
