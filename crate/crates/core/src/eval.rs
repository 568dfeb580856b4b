//! Accuracy and disparity measurement, epsilon-grid sweeps and heterogeneity
//! experiments.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_dataset, ClientGroupDataset};
use crate::error::{Error, Result};
use crate::fair::FairPredictor;
use crate::lp::{AggregatedParams, RegionForm, SolverConfig};
use crate::protocol::{run_postprocess, run_scoring, ScoreSource, ScoredRound};
use crate::rng::RngStream;
use crate::score::{generate_synthetic, SharedModel, SyntheticSpec};
use crate::spec::{FairnessSpec, Metric};
use crate::stats::DpConfig;

/// Per-class disparities; `None` where a term had no support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDisparity {
    pub per_class: Vec<Option<f64>>,
    pub max: f64,
}

impl ClassDisparity {
    fn from_terms(per_class: Vec<Option<f64>>) -> Self {
        let max = per_class.iter().flatten().cloned().fold(0.0, f64::max);
        ClassDisparity { per_class, max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalDisparity {
    pub per_client: Vec<ClassDisparity>,
    /// Mean over clients of each client's max-over-classes disparity.
    pub mean: f64,
    /// Max over clients of the same quantity.
    pub max: f64,
}

impl LocalDisparity {
    fn from_clients(per_client: Vec<ClassDisparity>) -> Self {
        let k = per_client.len().max(1) as f64;
        let mean = per_client.iter().map(|d| d.max).sum::<f64>() / k;
        let max = per_client.iter().map(|d| d.max).fold(0.0, f64::max);
        LocalDisparity {
            per_client,
            mean,
            max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub metric: Metric,
    pub accuracy: f64,
    pub global_disparity: ClassDisparity,
    pub local_disparity: LocalDisparity,
    pub lp_objective: Option<f64>,
    /// Records per `[client][group][class]`.
    pub cell_counts: Vec<Vec<Vec<usize>>>,
    /// Disparity terms left out for lack of support.
    pub skipped: Vec<String>,
    pub passes: usize,
    pub notes: Vec<String>,
}

/// Confusion counts `[client][group][true][predicted]`.
type Confusion = Vec<Vec<Vec<Vec<f64>>>>;

fn empty_confusion(k: usize, n: usize) -> Confusion {
    vec![vec![vec![vec![0.0; n]; n]; 2]; k]
}

/// Disparities and accuracy from confusion counts. Works on expected counts too.
fn disparities(
    conf: &Confusion,
    metric: Metric,
    skipped: &mut Vec<String>,
) -> (f64, ClassDisparity, LocalDisparity) {
    let k = conf.len();
    let n = conf[0][0].len();
    let constrained = if metric == Metric::EqualOpportunity {
        1
    } else {
        n
    };
    let mut correct = 0.0;
    let mut total = 0.0;
    for cc in conf {
        for g in cc {
            for (y, row) in g.iter().enumerate() {
                correct += row[y];
                total += row.iter().sum::<f64>();
            }
        }
    }
    // rate(a, y) = numerator / denominator within the selected clients
    let rate = |clients: &[usize], a: usize, y: usize| -> Option<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for &c in clients {
            let g = &conf[c][a];
            match metric {
                Metric::StatisticalParity => {
                    for row in g {
                        num += row[y];
                        den += row.iter().sum::<f64>();
                    }
                }
                _ => {
                    num += g[y][y];
                    den += g[y].iter().sum::<f64>();
                }
            }
        }
        (den > 0.0).then(|| num / den)
    };
    let term = |clients: &[usize], y: usize| match (rate(clients, 0, y), rate(clients, 1, y)) {
        (Some(r0), Some(r1)) => Some((r0 - r1).abs()),
        _ => None,
    };
    let all: Vec<usize> = (0..k).collect();
    let global: Vec<Option<f64>> = (0..constrained).map(|y| term(&all, y)).collect();
    for (y, t) in global.iter().enumerate() {
        if t.is_none() {
            skipped.push(format!("global class {}", y + 1));
        }
    }
    let mut per_client = Vec::with_capacity(k);
    for c in 0..k {
        let terms: Vec<Option<f64>> = (0..constrained).map(|y| term(&[c], y)).collect();
        for (y, t) in terms.iter().enumerate() {
            if t.is_none() {
                skipped.push(format!("client {} class {}", c + 1, y + 1));
            }
        }
        per_client.push(ClassDisparity::from_terms(terms));
    }
    let acc = if total > 0.0 { correct / total } else { 0.0 };
    (
        acc,
        ClassDisparity::from_terms(global),
        LocalDisparity::from_clients(per_client),
    )
}

fn cell_counts(test: &ClientGroupDataset) -> Vec<Vec<Vec<usize>>> {
    let mut counts = vec![vec![vec![0usize; test.num_classes()]; 2]; test.num_clients()];
    for i in 0..test.len() {
        counts[test.client(i)][test.group(i)][test.label(i)] += 1;
    }
    counts
}

/// Empirical report of a randomized predictor, averaged over `passes`
/// independently seeded passes over `test`.
pub fn evaluate(
    predictor: &FairPredictor,
    test: &ClientGroupDataset,
    rng: &RngStream,
    passes: usize,
) -> Result<FairnessReport> {
    if test.is_empty() {
        return Err(Error::Input("test data is empty".into()));
    }
    if passes == 0 {
        return Err(Error::Input(
            "at least one evaluation pass is needed".into(),
        ));
    }
    let (k, n) = (predictor.num_clients(), predictor.num_classes());
    if test.num_clients() > k {
        return Err(Error::Input(format!(
            "test data has {} clients, predictor {k}",
            test.num_clients()
        )));
    }
    let base = predictor.base();
    let base_pred: Vec<usize> = (0..test.len())
        .into_par_iter()
        .map(|i| base.predict(test.features(i), test.group(i), test.client(i)))
        .collect();

    let per_pass: Vec<Confusion> = (0..passes)
        .into_par_iter()
        .map(|p| -> Result<Confusion> {
            let pass_rng = rng.derive(format!("pass{p}"));
            let mut conf = empty_confusion(k, n);
            let mut streams: Vec<RngStream> = (0..2 * k)
                .map(|cell| pass_rng.derive(format!("predict/a{}/c{}", cell % 2, cell / 2)))
                .collect();
            for i in 0..test.len() {
                let (a, c) = (test.group(i), test.client(i));
                let out =
                    predictor.predict_from_base(base_pred[i], a, c, &mut streams[2 * c + a])?;
                conf[c][a][test.label(i)][out] += 1.0;
            }
            Ok(conf)
        })
        .collect::<Result<_>>()?;

    let mut skipped = Vec::new();
    let mut global = Vec::new();
    let mut local = Vec::new();
    for (p, conf) in per_pass.iter().enumerate() {
        let mut s = Vec::new();
        let (_, g, l) = disparities(conf, predictor.metric(), &mut s);
        if p == 0 {
            skipped = s;
        }
        global.push(g);
        local.push(l);
    }
    // Pooled integer counts give the mean per-pass accuracy without rounding drift.
    let correct: f64 = per_pass
        .iter()
        .flat_map(|conf| {
            conf.iter()
                .flatten()
                .flat_map(|rows| rows.iter().enumerate().map(|(y, row)| row[y]))
        })
        .sum();
    Ok(FairnessReport {
        metric: predictor.metric(),
        accuracy: correct / (passes * test.len()) as f64,
        global_disparity: average_class(&global),
        local_disparity: LocalDisparity::from_clients(
            (0..k)
                .map(|c| {
                    average_class(
                        &local
                            .iter()
                            .map(|l| l.per_client[c].clone())
                            .collect::<Vec<_>>(),
                    )
                })
                .collect(),
        ),
        lp_objective: None,
        cell_counts: cell_counts(test),
        skipped,
        passes,
        notes: Vec::new(),
    })
}

fn average_class(items: &[ClassDisparity]) -> ClassDisparity {
    let m = items[0].per_class.len();
    let per_class = (0..m)
        .map(|y| {
            let v: Vec<f64> = items.iter().filter_map(|d| d.per_class[y]).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    let max = items.iter().map(|d| d.max).sum::<f64>() / items.len() as f64;
    ClassDisparity { per_class, max }
}

/// Report of the deterministic base predictor on `test`.
pub fn evaluate_base(
    model: &SharedModel,
    test: &ClientGroupDataset,
    metric: Metric,
) -> Result<FairnessReport> {
    let base = crate::score::ArgmaxPredictor::new(model.clone());
    let (k, n) = (
        test.num_clients(),
        model.num_classes().max(test.num_classes()),
    );
    let mut conf = empty_confusion(k, n);
    for i in 0..test.len() {
        let out = base.predict(test.features(i), test.group(i), test.client(i));
        conf[test.client(i)][test.group(i)][test.label(i)][out] += 1.0;
    }
    let mut skipped = Vec::new();
    let (accuracy, global_disparity, local_disparity) = disparities(&conf, metric, &mut skipped);
    Ok(FairnessReport {
        metric,
        accuracy,
        global_disparity,
        local_disparity,
        lp_objective: None,
        cell_counts: cell_counts(test),
        skipped,
        passes: 1,
        notes: Vec::new(),
    })
}

/// Expected accuracy and disparities of the installed predictor computed
/// from the statistics it was built on, without sampling.
pub fn closed_form_report(
    predictor: &FairPredictor,
    params: &AggregatedParams,
) -> Result<FairnessReport> {
    let (k, n) = (params.num_clients, params.num_classes);
    let mut conf = empty_confusion(k, n);
    for c in 0..k {
        for a in 0..2 {
            match predictor.metric() {
                Metric::StatisticalParity => {
                    let t = predictor.parity_table(a, c)?;
                    for y in 0..n {
                        for j in 0..n {
                            for out in 0..n {
                                conf[c][a][y][out] += params.sp.joint[y][j][a][c] * t.table[j][out];
                            }
                        }
                    }
                }
                _ => {
                    let tp1 = params.tp1_block(a, c);
                    let op = predictor.expected_operating_point(&tp1, a, c)?;
                    for y in 0..n {
                        // Only the diagonal matters for accuracy and true-positive rates.
                        let mass = params.p[y][a][c];
                        conf[c][a][y][y] += mass * op[y];
                        let miss = mass * (1.0 - op[y]);
                        if n > 1 {
                            conf[c][a][y][(y + 1) % n] += miss;
                        }
                    }
                }
            }
        }
    }
    let mut skipped = Vec::new();
    let (accuracy, global_disparity, local_disparity) =
        disparities(&conf, predictor.metric(), &mut skipped);
    Ok(FairnessReport {
        metric: predictor.metric(),
        accuracy,
        global_disparity,
        local_disparity,
        lp_objective: None,
        cell_counts: Vec::new(),
        skipped,
        passes: 0,
        notes: vec!["expected values from the statistics".into()],
    })
}

/// Epsilon values along both axes; local values are broadcast to all clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub eps_global: Vec<f64>,
    pub eps_local: Vec<f64>,
}

impl GridSpec {
    /// Parses `G1,G2,...:L1,L2,...`, or a single list used for both axes.
    pub fn parse(text: &str) -> Result<Self> {
        let list = |s: &str| -> Result<Vec<f64>> {
            s.split(',')
                .map(|v| {
                    let x: f64 = v
                        .trim()
                        .parse()
                        .map_err(|_| Error::Input(format!("bad grid value `{v}`")))?;
                    if !(0.0..=1.0).contains(&x) {
                        return Err(Error::Input(format!("grid value {x} is outside [0, 1]")));
                    }
                    Ok(x)
                })
                .collect()
        };
        let (g, l) = match text.split_once(':') {
            Some((g, l)) => (list(g)?, list(l)?),
            None => {
                let v = list(text)?;
                (v.clone(), v)
            }
        };
        Ok(GridSpec {
            eps_global: g,
            eps_local: l,
        })
    }
}

/// One seed's outcome at one grid cell; `None` fields mean the LP was infeasible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed_index: usize,
    pub lp_objective: Option<f64>,
    pub report: Option<FairnessReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub eps_global: f64,
    pub eps_local: f64,
    pub seeds: Vec<SeedOutcome>,
    pub mean_accuracy: Option<f64>,
    pub mean_lp_objective: Option<f64>,
    pub mean_global_disparity: Option<f64>,
    pub mean_local_disparity: Option<f64>,
    pub infeasible: usize,
}

/// `cells[i][j]` is global value `i`, local value `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub grid: GridSpec,
    pub cells: Vec<Vec<SweepCell>>,
    pub seeds_per_cell: usize,
}

/// Inputs of one seed: the shared model and statistics plus held-out data.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub scored: ScoredRound,
    pub test: ClientGroupDataset,
    pub rng: RngStream,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub metric: Metric,
    pub solver: SolverConfig,
    pub region_form: RegionForm,
    pub eval_passes: usize,
}

impl SweepOptions {
    pub fn new(metric: Metric) -> Self {
        SweepOptions {
            metric,
            solver: SolverConfig::default(),
            region_form: RegionForm::HalfSpace,
            eval_passes: 5,
        }
    }
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Re-solves the LP at every grid cell for every seed; infeasible cells are
/// recorded and the sweep continues.
pub fn sweep(runs: &[SeedRun], grid: &GridSpec, opts: &SweepOptions) -> Result<SweepGrid> {
    if runs.is_empty() {
        return Err(Error::Input("sweep needs at least one seed".into()));
    }
    let keys: Vec<(usize, usize, usize)> = (0..grid.eps_global.len())
        .flat_map(|i| {
            (0..grid.eps_local.len()).flat_map(move |j| (0..runs.len()).map(move |s| (i, j, s)))
        })
        .collect();
    let outcomes: Vec<Result<SeedOutcome>> = keys
        .par_iter()
        .map(|&(i, j, s)| {
            let run = &runs[s];
            let k = run.scored.params.num_clients;
            let spec = FairnessSpec::uniform(opts.metric, grid.eps_global[i], grid.eps_local[j], k);
            match run_postprocess(&run.scored, &spec, &opts.solver, opts.region_form) {
                Ok(post) => {
                    let mut report = evaluate(
                        &post.predictor,
                        &run.test,
                        &run.rng.derive(format!("eval/g{i}/l{j}")),
                        opts.eval_passes,
                    )?;
                    report.lp_objective = Some(post.solution.accuracy_estimate);
                    Ok(SeedOutcome {
                        seed_index: s,
                        lp_objective: Some(post.solution.accuracy_estimate),
                        report: Some(report),
                        error: None,
                    })
                }
                Err(
                    e @ (Error::Infeasible { .. }
                    | Error::Numerical(_)
                    | Error::TargetOutsideHull { .. }),
                ) => Ok(SeedOutcome {
                    seed_index: s,
                    lp_objective: None,
                    report: None,
                    error: Some(e.to_string()),
                }),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut it = outcomes.into_iter();
    let mut cells = Vec::with_capacity(grid.eps_global.len());
    for i in 0..grid.eps_global.len() {
        let mut row = Vec::with_capacity(grid.eps_local.len());
        for j in 0..grid.eps_local.len() {
            let seeds: Vec<SeedOutcome> = (0..runs.len())
                .map(|_| it.next().expect("one outcome per key"))
                .collect::<Result<_>>()?;
            let ok: Vec<&FairnessReport> = seeds.iter().filter_map(|s| s.report.as_ref()).collect();
            row.push(SweepCell {
                eps_global: grid.eps_global[i],
                eps_local: grid.eps_local[j],
                mean_accuracy: mean(ok.iter().map(|r| r.accuracy)),
                mean_lp_objective: mean(seeds.iter().filter_map(|s| s.lp_objective)),
                mean_global_disparity: mean(ok.iter().map(|r| r.global_disparity.max)),
                mean_local_disparity: mean(ok.iter().map(|r| r.local_disparity.mean)),
                infeasible: seeds.iter().filter(|s| s.report.is_none()).count(),
                seeds,
            });
        }
        cells.push(row);
    }
    Ok(SweepGrid {
        grid: grid.clone(),
        cells,
        seeds_per_cell: runs.len(),
    })
}

impl SweepGrid {
    pub fn cell(&self, eps_global: f64, eps_local: f64) -> Option<&SweepCell> {
        let i = self.grid.eps_global.iter().position(|v| *v == eps_global)?;
        let j = self.grid.eps_local.iter().position(|v| *v == eps_local)?;
        Some(&self.cells[i][j])
    }

    /// Writes one matrix: rows are global values, columns local values.
    pub fn write_matrix_csv<W: Write>(
        &self,
        out: W,
        value: impl Fn(&SweepCell) -> Option<f64>,
    ) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["eps_global\\eps_local".to_string()];
        header.extend(self.grid.eps_local.iter().map(|v| v.to_string()));
        w.write_record(&header).map_err(csv_err)?;
        for (i, row) in self.cells.iter().enumerate() {
            let mut rec = vec![self.grid.eps_global[i].to_string()];
            rec.extend(
                row.iter().map(|c| {
                    value(c).map_or_else(|| "infeasible".to_string(), |v| format!("{v:.6}"))
                }),
            );
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Long format: one line per cell with all summary columns.
    pub fn write_cells_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "eps_global",
            "eps_local",
            "mean_accuracy",
            "mean_lp_objective",
            "mean_global_disparity",
            "mean_local_disparity",
            "seeds",
            "infeasible",
        ])
        .map_err(csv_err)?;
        let f = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
        for row in &self.cells {
            for c in row {
                w.write_record([
                    c.eps_global.to_string(),
                    c.eps_local.to_string(),
                    f(c.mean_accuracy),
                    f(c.mean_lp_objective),
                    f(c.mean_global_disparity),
                    f(c.mean_local_disparity),
                    c.seeds.len().to_string(),
                    c.infeasible.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Input(e.to_string())
}

/// Source of scores in synthetic experiments.
#[derive(Debug, Clone)]
pub enum ExperimentScores {
    /// The generator's exact posterior.
    Oracle,
    FedAvg(crate::score::FedAvgConfig),
}

#[derive(Debug, Clone)]
pub struct ExperimentOptions {
    pub sweep: SweepOptions,
    pub seeds: Vec<u64>,
    pub scores: ExperimentScores,
    pub split: [f64; 3],
    pub dp: DpConfig,
}

/// Draws one synthetic dataset per seed, runs steps 1 and 2 once, and
/// returns the per-seed inputs for [`sweep`].
pub fn synthetic_seed_runs(
    spec: &SyntheticSpec,
    opts: &ExperimentOptions,
    label: &str,
) -> Result<Vec<SeedRun>> {
    opts.seeds
        .par_iter()
        .map(|&seed| {
            let rng = RngStream::new(seed, label);
            let (data, oracle) = generate_synthetic(spec, &rng.derive("data"))?;
            let (train, val, test) = split_dataset(&data, opts.split, &rng.derive("split"))?;
            let source = match &opts.scores {
                ExperimentScores::Oracle => ScoreSource::Pretrained(std::sync::Arc::new(oracle)),
                ExperimentScores::FedAvg(cfg) => ScoreSource::FedAvg(cfg.clone()),
            };
            let scored = run_scoring(&train, &val, &source, &opts.dp, &rng)?;
            Ok(SeedRun {
                scored,
                test,
                rng: rng.derive("eval"),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneitySummary {
    pub loose: (f64, f64),
    pub tight: (f64, f64),
    /// Mean accuracy at `loose` minus mean accuracy at `tight`, per scenario.
    pub accuracy_loss: Vec<Option<f64>>,
    /// The same using the LP's accuracy estimate.
    pub lp_accuracy_loss: Vec<Option<f64>>,
}

/// One sweep per scenario over the same grid, plus the accuracy lost by
/// tightening both tolerances from `loose` to `tight` (both must be grid points).
pub fn heterogeneity_experiment(
    scenarios: &[SyntheticSpec],
    grid: &GridSpec,
    opts: &ExperimentOptions,
    loose: (f64, f64),
    tight: (f64, f64),
) -> Result<(Vec<SweepGrid>, HeterogeneitySummary)> {
    let mut grids = Vec::with_capacity(scenarios.len());
    for (i, spec) in scenarios.iter().enumerate() {
        let runs = synthetic_seed_runs(spec, opts, &format!("scenario{}", i + 1))?;
        grids.push(sweep(&runs, grid, &opts.sweep)?);
    }
    let loss = |g: &SweepGrid, f: &dyn Fn(&SweepCell) -> Option<f64>| -> Result<Option<f64>> {
        let l = g
            .cell(loose.0, loose.1)
            .ok_or_else(|| Error::Input("loose point is not on the grid".into()))?;
        let t = g
            .cell(tight.0, tight.1)
            .ok_or_else(|| Error::Input("tight point is not on the grid".into()))?;
        Ok(match (f(l), f(t)) {
            (Some(a), Some(b)) => Some(a - b),
            _ => None,
        })
    };
    let accuracy_loss = grids
        .iter()
        .map(|g| loss(g, &|c| c.mean_accuracy))
        .collect::<Result<_>>()?;
    let lp_accuracy_loss = grids
        .iter()
        .map(|g| loss(g, &|c| c.mean_lp_objective))
        .collect::<Result<_>>()?;
    Ok((
        grids,
        HeterogeneitySummary {
            loose,
            tight,
            accuracy_loss,
            lp_accuracy_loss,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conf_from(rows: &[(usize, usize, usize, usize, f64)], k: usize, n: usize) -> Confusion {
        let mut c = empty_confusion(k, n);
        for &(cl, a, y, p, v) in rows {
            c[cl][a][y][p] += v;
        }
        c
    }

    #[test]
    fn hand_built_equal_opportunity_gap() {
        // group 0 recalls 9 of 10 positives, group 1 recalls 7 of 10
        let conf = conf_from(
            &[
                (0, 0, 0, 0, 9.0),
                (0, 0, 0, 1, 1.0),
                (0, 1, 0, 0, 7.0),
                (0, 1, 0, 1, 3.0),
                (0, 0, 1, 1, 5.0),
                (0, 1, 1, 1, 5.0),
            ],
            1,
            2,
        );
        let mut s = Vec::new();
        let (_, g, l) = disparities(&conf, Metric::EqualOpportunity, &mut s);
        assert!((l.per_client[0].per_class[0].unwrap() - 0.2).abs() < 1e-12);
        assert!((g.max - 0.2).abs() < 1e-12);
        assert_eq!(g.per_class.len(), 1);
    }

    #[test]
    fn symmetric_confusion_has_no_disparity() {
        let rows: Vec<_> = (0..2)
            .flat_map(|a| {
                [
                    (0, a, 0, 0, 4.0),
                    (0, a, 0, 1, 1.0),
                    (0, a, 1, 0, 2.0),
                    (0, a, 1, 1, 3.0),
                ]
            })
            .collect();
        let conf = conf_from(&rows, 1, 2);
        for m in [
            Metric::EqualizedOdds,
            Metric::EqualOpportunity,
            Metric::StatisticalParity,
        ] {
            let mut s = Vec::new();
            let (acc, g, l) = disparities(&conf, m, &mut s);
            assert_eq!(g.max, 0.0);
            assert_eq!(l.max, 0.0);
            assert!((acc - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_cell_is_skipped_and_flagged() {
        let conf = conf_from(&[(0, 0, 0, 0, 3.0), (0, 1, 1, 1, 3.0)], 1, 2);
        let mut s = Vec::new();
        let (_, g, _) = disparities(&conf, Metric::EqualizedOdds, &mut s);
        assert!(g.per_class.iter().all(|t| t.is_none()));
        assert_eq!(s.len(), 4);
    }

    #[test]
    fn grid_parsing() {
        let g = GridSpec::parse("0.1,1:0.05,0.5,1").unwrap();
        assert_eq!(g.eps_global, vec![0.1, 1.0]);
        assert_eq!(g.eps_local.len(), 3);
        assert_eq!(
            GridSpec::parse("0.2,0.4").unwrap().eps_local,
            vec![0.2, 0.4]
        );
        assert!(GridSpec::parse("0.1,2").is_err());
    }
}
