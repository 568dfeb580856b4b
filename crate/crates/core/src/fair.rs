//! Client-side randomized post-processing.
//!
//! For the true-positive metrics a client turns its target operating point into
//! convex weights over the base argmax predictor and the N constant predictors,
//! then samples among them per query. For statistical parity the target is
//! directly a column-stochastic table `Pr(output y | base prediction j)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{AggregatedParams, Layout, LpInstance, LpSolution, LpStatus};
use crate::rng::RngStream;
use crate::score::ArgmaxPredictor;
use crate::spec::Metric;

/// Negative weights beyond this are a genuine miss of the hull.
pub const HULL_TOL: f64 = 1e-7;
/// Weights this close to 0 or 1 are snapped.
pub const SNAP_TOL: f64 = 1e-9;

/// Weights `(beta_0, beta_1, ..., beta_N)`: `beta_0` on the base predictor,
/// `beta_y` on the constant predictor that always outputs class `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixWeights {
    pub group: usize,
    pub client: usize,
    pub beta: Vec<f64>,
}

impl MixWeights {
    pub fn num_classes(&self) -> usize {
        self.beta.len() - 1
    }

    /// True positive vector reached in expectation: `beta_0 tp1 + beta_{1..}`.
    pub fn operating_point(&self, tp1: &[f64]) -> Vec<f64> {
        tp1.iter()
            .zip(&self.beta[1..])
            .map(|(t, b)| self.beta[0] * t + b)
            .collect()
    }

    /// Output for a uniform draw `s`: the base prediction when `s <= beta_0`,
    /// otherwise the class whose cumulative band contains `s`.
    pub fn select(&self, base_class: usize, s: f64) -> usize {
        if s <= self.beta[0] {
            return base_class;
        }
        let mut acc = self.beta[0];
        for (y, b) in self.beta[1..].iter().enumerate() {
            acc += b;
            if s <= acc {
                return y;
            }
        }
        // Rounding left a sliver above the cumulative total.
        self.beta[1..]
            .iter()
            .rposition(|b| *b > 0.0)
            .unwrap_or(base_class)
    }

    pub fn sample(&self, base_class: usize, rng: &mut RngStream) -> usize {
        self.select(base_class, rng.uniform_open())
    }

    fn validate(&self) -> Result<()> {
        let total: f64 = self.beta.iter().sum();
        if self.beta.iter().any(|b| !(0.0..=1.0).contains(b)) || (total - 1.0).abs() > SNAP_TOL {
            return Err(Error::Input(format!(
                "mixing weights for group {}, client {} are not a distribution",
                self.group,
                self.client + 1
            )));
        }
        Ok(())
    }
}

/// Closed-form solution of `G beta = [1; z]` where the first row of `G` is all
/// ones and row `y + 1` is `[tp1_y, e_y]`. Weights are checked against the
/// hull, snapped and renormalized.
pub fn solve_lae(tp1: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    if tp1.len() != z.len() || tp1.is_empty() {
        return Err(Error::Input(
            "tp1 and target must have the same nonzero length".into(),
        ));
    }
    let st: f64 = tp1.iter().sum();
    if (st - 1.0).abs() < 1e-12 {
        return Err(Error::SingularLae);
    }
    let sz: f64 = z.iter().sum();
    let b0 = (sz - 1.0) / (st - 1.0);
    let mut beta = Vec::with_capacity(z.len() + 1);
    beta.push(b0);
    beta.extend(z.iter().zip(tp1).map(|(zy, ty)| zy - ty * b0));
    sanitize_weights(&mut beta)?;
    Ok(beta)
}

/// Clamps tiny excursions, snaps near-boundary entries and renormalizes.
pub fn sanitize_weights(beta: &mut [f64]) -> Result<()> {
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Numerical("non-finite mixing weight".into()));
    }
    let worst = beta
        .iter()
        .cloned()
        .fold(0.0f64, |m, b| m.max(-b).max(b - 1.0));
    if worst > HULL_TOL {
        return Err(Error::TargetOutsideHull { violation: worst });
    }
    for b in beta.iter_mut() {
        *b = b.clamp(0.0, 1.0);
        if *b < SNAP_TOL {
            *b = 0.0;
        } else if *b > 1.0 - SNAP_TOL {
            *b = 1.0;
        }
    }
    let total: f64 = beta.iter().sum();
    if total <= 0.0 {
        return Err(Error::Numerical("mixing weights vanish".into()));
    }
    beta.iter_mut().for_each(|b| *b /= total);
    Ok(())
}

/// Column-stochastic table `table[j][y] = Pr(output y | base prediction j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpRandomization {
    pub group: usize,
    pub client: usize,
    pub table: Vec<Vec<f64>>,
}

impl SpRandomization {
    /// Output for a uniform draw `s` given the base prediction.
    pub fn select(&self, base_class: usize, s: f64) -> usize {
        let col = &self.table[base_class];
        let mut acc = 0.0;
        for (y, p) in col.iter().enumerate() {
            acc += p;
            if s <= acc {
                return y;
            }
        }
        col.iter().rposition(|p| *p > 0.0).unwrap_or(base_class)
    }

    pub fn sample(&self, base_class: usize, rng: &mut RngStream) -> usize {
        self.select(base_class, rng.uniform_open())
    }

    fn validate(&self) -> Result<()> {
        for (j, col) in self.table.iter().enumerate() {
            let total: f64 = col.iter().sum();
            if col.len() != self.table.len()
                || col.iter().any(|p| !(0.0..=1.0).contains(p))
                || (total - 1.0).abs() > SNAP_TOL
            {
                return Err(Error::Input(format!(
                    "column {} of the parity table for group {}, client {} is not normalized",
                    j + 1,
                    self.group,
                    self.client + 1
                )));
            }
        }
        Ok(())
    }

    /// Clamps and renormalizes each column; columns listed in `unused`
    /// (no base prediction ever lands there) become the identity.
    pub fn sanitize(&mut self, unused: &[bool]) -> Result<()> {
        let n = self.table.len();
        for (j, col) in self.table.iter_mut().enumerate() {
            if unused[j] {
                col.iter_mut()
                    .enumerate()
                    .for_each(|(y, p)| *p = if y == j { 1.0 } else { 0.0 });
                continue;
            }
            let worst = col
                .iter()
                .cloned()
                .fold(0.0f64, |m, p| m.max(-p).max(p - 1.0));
            if worst > HULL_TOL || col.iter().any(|p| !p.is_finite()) {
                return Err(Error::Numerical(format!(
                    "randomization column {j} is not a distribution"
                )));
            }
            col.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
            let total: f64 = col.iter().sum();
            if total <= 0.0 {
                return Err(Error::Numerical(format!(
                    "randomization column {j} vanishes"
                )));
            }
            col.iter_mut().for_each(|p| *p /= total);
            debug_assert_eq!(col.len(), n);
        }
        Ok(())
    }
}

/// Per (group, client) randomization, in block order `2 * client + group`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "cells")]
pub enum PredictorTables {
    Mix(Vec<Option<MixWeights>>),
    Parity(Vec<Option<SpRandomization>>),
}

/// Serialized form of the post-processing step, without the score model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorBundle {
    pub format: String,
    pub version: u32,
    pub metric: Metric,
    pub num_classes: usize,
    pub num_clients: usize,
    /// Path of the score-model checkpoint this bundle post-processes, if saved.
    #[serde(default)]
    pub model_checkpoint: Option<String>,
    pub tables: PredictorTables,
}

pub const BUNDLE_FORMAT: &str = "fedfair-predictor";
pub const BUNDLE_VERSION: u32 = 1;

/// The base argmax predictor followed by per-cell randomization.
#[derive(Debug, Clone)]
pub struct FairPredictor {
    base: ArgmaxPredictor,
    bundle: PredictorBundle,
}

impl FairPredictor {
    pub fn new(base: ArgmaxPredictor, bundle: PredictorBundle) -> Result<Self> {
        if bundle.format != BUNDLE_FORMAT {
            return Err(Error::Input(format!(
                "unexpected bundle format `{}`",
                bundle.format
            )));
        }
        if bundle.version != BUNDLE_VERSION {
            return Err(Error::Version {
                found: bundle.version,
                expected: BUNDLE_VERSION,
            });
        }
        let cells = 2 * bundle.num_clients;
        let len = match &bundle.tables {
            PredictorTables::Mix(v) => v.len(),
            PredictorTables::Parity(v) => v.len(),
        };
        if len != cells {
            return Err(Error::Input(format!(
                "bundle has {len} cells, expected {cells}"
            )));
        }
        if base.num_classes() != bundle.num_classes {
            return Err(Error::Input(format!(
                "score model has {} classes, bundle {}",
                base.num_classes(),
                bundle.num_classes
            )));
        }
        match &bundle.tables {
            PredictorTables::Mix(v) => {
                for w in v.iter().flatten() {
                    if w.beta.len() != bundle.num_classes + 1 {
                        return Err(Error::Input("mixing weights have the wrong length".into()));
                    }
                    w.validate()?;
                }
            }
            PredictorTables::Parity(v) => {
                for t in v.iter().flatten() {
                    if t.table.len() != bundle.num_classes {
                        return Err(Error::Input("parity table has the wrong size".into()));
                    }
                    t.validate()?;
                }
            }
        }
        Ok(FairPredictor { base, bundle })
    }

    /// Builds the predictor from an optimal LP solution. Every client would do
    /// this for its own two cells; doing it for all cells at once is
    /// equivalent because each cell only uses its own statistics.
    pub fn from_solution(
        base: ArgmaxPredictor,
        params: &AggregatedParams,
        lp: &LpInstance,
        solution: &LpSolution,
    ) -> Result<Self> {
        if solution.status != LpStatus::Optimal {
            return Err(Error::Infeasible {
                residual: solution
                    .certificate
                    .as_ref()
                    .map_or(f64::NAN, |c| c.residual),
            });
        }
        let (n, k) = (params.num_classes, params.num_clients);
        let tables = match lp.layout {
            Layout::SpTable { .. } => {
                let mut cells = Vec::with_capacity(2 * k);
                for c in 0..k {
                    for a in 0..2 {
                        let table = (0..n)
                            .map(|j| {
                                (0..n)
                                    .map(|y| solution.z[lp.layout.sp_index(a, c, j, y)])
                                    .collect()
                            })
                            .collect();
                        cells.push(Some(sp_cell(params, a, c, table)?));
                    }
                }
                PredictorTables::Parity(cells)
            }
            Layout::TruePositive { .. } => {
                let mut cells = Vec::with_capacity(2 * k);
                for c in 0..k {
                    for a in 0..2 {
                        let z = lp.tp_block(&solution.z, a, c);
                        let beta = solve_lae(&params.tp1_block(a, c), z)?;
                        cells.push(Some(MixWeights {
                            group: a,
                            client: c,
                            beta,
                        }));
                    }
                }
                PredictorTables::Mix(cells)
            }
            Layout::Barycentric { .. } => {
                let mut cells = Vec::with_capacity(2 * k);
                for c in 0..k {
                    for a in 0..2 {
                        let off = lp.layout.mix_offset(a, c);
                        let mut beta = solution.z[off..off + n + 1].to_vec();
                        sanitize_weights(&mut beta)?;
                        cells.push(Some(MixWeights {
                            group: a,
                            client: c,
                            beta,
                        }));
                    }
                }
                PredictorTables::Mix(cells)
            }
        };
        Self::new(
            base,
            PredictorBundle {
                format: BUNDLE_FORMAT.into(),
                version: BUNDLE_VERSION,
                metric: lp.metric,
                num_classes: n,
                num_clients: k,
                model_checkpoint: None,
                tables,
            },
        )
    }

    pub fn base(&self) -> &ArgmaxPredictor {
        &self.base
    }

    pub fn bundle(&self) -> &PredictorBundle {
        &self.bundle
    }

    pub fn metric(&self) -> Metric {
        self.bundle.metric
    }

    pub fn num_classes(&self) -> usize {
        self.bundle.num_classes
    }

    pub fn num_clients(&self) -> usize {
        self.bundle.num_clients
    }

    pub fn mix_weights(&self, group: usize, client: usize) -> Result<&MixWeights> {
        match &self.bundle.tables {
            PredictorTables::Mix(v) => {
                v.get(2 * client + group)
                    .and_then(|w| w.as_ref())
                    .ok_or(Error::MissingWeights {
                        group,
                        client: client + 1,
                    })
            }
            PredictorTables::Parity(_) => Err(Error::Input("predictor uses parity tables".into())),
        }
    }

    pub fn parity_table(&self, group: usize, client: usize) -> Result<&SpRandomization> {
        match &self.bundle.tables {
            PredictorTables::Parity(v) => {
                v.get(2 * client + group)
                    .and_then(|w| w.as_ref())
                    .ok_or(Error::MissingWeights {
                        group,
                        client: client + 1,
                    })
            }
            PredictorTables::Mix(_) => Err(Error::Input("predictor uses mixing weights".into())),
        }
    }

    /// Randomized prediction for one record.
    pub fn predict(
        &self,
        features: &[f64],
        group: usize,
        client: usize,
        rng: &mut RngStream,
    ) -> Result<usize> {
        let j = self.base.predict(features, group, client);
        self.predict_from_base(j, group, client, rng)
    }

    /// Randomized prediction when the base prediction is already known.
    pub fn predict_from_base(
        &self,
        base_class: usize,
        group: usize,
        client: usize,
        rng: &mut RngStream,
    ) -> Result<usize> {
        match &self.bundle.tables {
            PredictorTables::Mix(_) => Ok(self.mix_weights(group, client)?.sample(base_class, rng)),
            PredictorTables::Parity(_) => {
                Ok(self.parity_table(group, client)?.sample(base_class, rng))
            }
        }
    }

    /// Expected true positive vector of a (group, client) for the mixing form.
    pub fn expected_operating_point(
        &self,
        tp1: &[f64],
        group: usize,
        client: usize,
    ) -> Result<Vec<f64>> {
        Ok(self.mix_weights(group, client)?.operating_point(tp1))
    }

    /// Records which checkpoint the bundle belongs to.
    pub fn set_model_checkpoint(&mut self, path: Option<String>) {
        self.bundle.model_checkpoint = path;
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.bundle)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(base: ArgmaxPredictor, path: impl AsRef<Path>) -> Result<Self> {
        let bundle: PredictorBundle = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::new(base, bundle)
    }
}

/// Randomized prediction for the true-positive metrics.
pub fn predict_eo(
    predictor: &FairPredictor,
    features: &[f64],
    group: usize,
    client: usize,
    rng: &mut RngStream,
) -> Result<usize> {
    let j = predictor.base().predict(features, group, client);
    Ok(predictor.mix_weights(group, client)?.sample(j, rng))
}

/// Randomized prediction for statistical parity.
pub fn predict_sp(
    predictor: &FairPredictor,
    features: &[f64],
    group: usize,
    client: usize,
    rng: &mut RngStream,
) -> Result<usize> {
    let j = predictor.base().predict(features, group, client);
    Ok(predictor.parity_table(group, client)?.sample(j, rng))
}

/// Builds one parity cell, treating base predictions with zero mass as unused.
pub fn sp_cell(
    params: &AggregatedParams,
    group: usize,
    client: usize,
    table: Vec<Vec<f64>>,
) -> Result<SpRandomization> {
    let unused: Vec<bool> = (0..params.num_classes)
        .map(|j| params.sp.pred[j][group][client] <= 0.0)
        .collect();
    let mut cell = SpRandomization {
        group,
        client,
        table,
    };
    cell.sanitize(&unused)?;
    Ok(cell)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lae_two_class_example() {
        let beta = solve_lae(&[0.9, 0.8], &[0.85, 0.75]).unwrap();
        assert!((beta[0] - 0.857_142_857_142_857).abs() < 1e-9);
        assert!((beta[1] - 0.078_571_428_571_428).abs() < 1e-9);
        assert!((beta[2] - 0.064_285_714_285_714).abs() < 1e-9);
    }

    #[test]
    fn lae_singular() {
        assert!(matches!(
            solve_lae(&[0.5, 0.5], &[0.5, 0.5]),
            Err(Error::SingularLae)
        ));
    }

    #[test]
    fn lae_outside_hull() {
        assert!(matches!(
            solve_lae(&[0.9, 0.8], &[0.95, 0.95]),
            Err(Error::TargetOutsideHull { .. })
        ));
    }

    #[test]
    fn tiny_violation_is_clamped() {
        let mut b = vec![1.0 + 5e-8, -5e-8, 0.0];
        sanitize_weights(&mut b).unwrap();
        assert_eq!(b, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn threshold_mechanics() {
        let w = MixWeights {
            group: 0,
            client: 0,
            beta: vec![0.5, 0.3, 0.2],
        };
        assert_eq!(w.select(1, 0.4), 1);
        assert_eq!(w.select(1, 0.6), 0);
        assert_eq!(w.select(0, 0.9), 1);
    }

    #[test]
    fn lae_corner_targets() {
        let t = [0.9, 0.8];
        assert_eq!(solve_lae(&t, &t).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(solve_lae(&t, &[1.0, 0.0]).unwrap(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn sampling_bands() {
        let w = MixWeights {
            group: 0,
            client: 0,
            beta: vec![0.5, 0.25, 0.25],
        };
        let mut rng = RngStream::new(3, "bands");
        let mut counts = [0usize; 2];
        let trials = 40_000;
        for _ in 0..trials {
            counts[w.sample(0, &mut rng)] += 1;
        }
        let f0 = counts[0] as f64 / trials as f64;
        assert!((f0 - 0.75).abs() < 0.01);
    }

    #[test]
    fn unused_parity_column_becomes_identity() {
        let mut cell = SpRandomization {
            group: 0,
            client: 0,
            table: vec![vec![0.3, 0.7], vec![0.2, 0.2]],
        };
        cell.sanitize(&[false, true]).unwrap();
        assert_eq!(cell.table[1], vec![0.0, 1.0]);
    }
}
