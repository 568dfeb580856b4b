use serde::{Deserialize, Serialize};

use super::{EqualityRow, Layout, LpInstance, RegionBlock, Sense, TwoSidedRow};
use crate::error::{Error, Result};
use crate::spec::{FairnessSpec, Metric};
use crate::stats::ClientStats;

/// Below this margin a (group, client) simplex is treated as flat.
const SIMPLEX_MARGIN: f64 = 1e-9;

/// How the attainable true-positive region of each (group, client) enters the LP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionForm {
    /// `K_{ac} z_{ac} <= l_{ac}`; needs the base true positives to sum above 1.
    #[default]
    HalfSpace,
    /// Explicit convex weights over the simplex vertices; always well defined.
    Barycentric,
}

/// Statistical parity parameters; all masses are global (`Pr(C = c)` folded in).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpParams {
    /// `u^{yj}_{ac} = Pr(Y = y, Y1 = j, A = a, C = c)`, indexed `[y][j][a][c]`.
    pub joint: Vec<Vec<Vec<Vec<f64>>>>,
    /// `u^j_{ac} = Pr(Y1 = j, A = a, C = c)`, indexed `[j][a][c]`.
    pub pred: Vec<Vec<Vec<f64>>>,
    /// `u_{ac}`, indexed `[a][c]`.
    pub group_client: Vec<Vec<f64>>,
    /// `u_a`.
    pub group: Vec<f64>,
}

/// Server-side view of all clients' statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedParams {
    pub num_classes: usize,
    pub num_clients: usize,
    /// `p_c`, client share of all records.
    pub client_weight: Vec<f64>,
    /// `p^y_{ac} = Pr(Y = y, A = a, C = c)`, indexed `[y][a][c]`.
    pub p: Vec<Vec<Vec<f64>>>,
    /// `alpha^y_a = Pr(Y = y, A = a)`, indexed `[y][a]`.
    pub alpha: Vec<Vec<f64>>,
    /// Base predictor true positive rates, indexed `[y][a][c]`; 1 where vacuous.
    pub tp1: Vec<Vec<Vec<f64>>>,
    /// Cells with no positive mass for the class.
    pub vacuous: Vec<Vec<Vec<bool>>>,
    pub sp: SpParams,
}

impl AggregatedParams {
    /// `tp1` of one (group, client) over all classes.
    pub fn tp1_block(&self, group: usize, client: usize) -> Vec<f64> {
        (0..self.num_classes)
            .map(|y| self.tp1[y][group][client])
            .collect()
    }

    /// Accuracy of the base predictor implied by the statistics.
    pub fn base_accuracy(&self) -> f64 {
        let mut acc = 0.0;
        for y in 0..self.num_classes {
            for a in 0..2 {
                for c in 0..self.num_clients {
                    acc += self.p[y][a][c] * self.tp1[y][a][c];
                }
            }
        }
        acc
    }
}

/// Combines per-client statistics, weighting each client by its record count.
pub fn aggregate(stats: &[ClientStats]) -> Result<AggregatedParams> {
    if stats.is_empty() {
        return Err(Error::Input("no client statistics".into()));
    }
    let k = stats.iter().map(|s| s.client).max().unwrap_or(0) + 1;
    let mut by_client: Vec<Option<&ClientStats>> = vec![None; k];
    for s in stats {
        if by_client[s.client].is_some() {
            return Err(Error::Input(format!(
                "duplicate statistics for client {}",
                s.client + 1
            )));
        }
        by_client[s.client] = Some(s);
    }
    let ordered: Vec<&ClientStats> = by_client
        .into_iter()
        .enumerate()
        .map(|(c, s)| s.ok_or(Error::MissingClient { client: c + 1 }))
        .collect::<Result<_>>()?;
    let n = ordered[0].num_classes();
    if ordered.iter().any(|s| s.num_classes() != n) {
        return Err(Error::Input(
            "clients disagree on the number of classes".into(),
        ));
    }
    if let Some(s) = ordered.iter().find(|s| s.num_samples == 0) {
        return Err(Error::EmptyClient {
            client: s.client + 1,
        });
    }
    let total: f64 = ordered.iter().map(|s| s.num_samples as f64).sum();
    let weight: Vec<f64> = ordered
        .iter()
        .map(|s| s.num_samples as f64 / total)
        .collect();
    combine(&ordered, weight)
}

/// Like [`aggregate`] but with explicit client weights `Pr(C = c)`, for
/// population-level statistics that have no sample counts.
pub fn aggregate_weighted(stats: &[ClientStats], weights: &[f64]) -> Result<AggregatedParams> {
    if stats.len() != weights.len() || stats.is_empty() {
        return Err(Error::Input("one weight per client is required".into()));
    }
    if stats.iter().enumerate().any(|(c, s)| s.client != c) {
        return Err(Error::Input("statistics must be in client order".into()));
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w > 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Input(
            "client weights must be positive and sum to 1".into(),
        ));
    }
    let ordered: Vec<&ClientStats> = stats.iter().collect();
    if ordered
        .iter()
        .any(|s| s.num_classes() != ordered[0].num_classes())
    {
        return Err(Error::Input(
            "clients disagree on the number of classes".into(),
        ));
    }
    combine(&ordered, weights.to_vec())
}

fn combine(ordered: &[&ClientStats], weight: Vec<f64>) -> Result<AggregatedParams> {
    let k = ordered.len();
    let n = ordered[0].num_classes();

    let mut p = vec![vec![vec![0.0; k]; 2]; n];
    let mut tp1 = vec![vec![vec![1.0; k]; 2]; n];
    let mut vacuous = vec![vec![vec![false; k]; 2]; n];
    let mut alpha = vec![vec![0.0; 2]; n];
    for (c, s) in ordered.iter().enumerate() {
        for y in 0..n {
            for a in 0..2 {
                let base = s.base[y][a];
                p[y][a][c] = base * weight[c];
                alpha[y][a] += p[y][a][c];
                if base > 0.0 {
                    tp1[y][a][c] = (s.joint_tp[y][a] / base).clamp(0.0, 1.0);
                } else {
                    vacuous[y][a][c] = true;
                }
            }
        }
    }

    let mut joint = vec![vec![vec![vec![0.0; k]; 2]; n]; n];
    let mut pred = vec![vec![vec![0.0; k]; 2]; n];
    let mut group_client = vec![vec![0.0; k]; 2];
    let mut group = vec![0.0; 2];
    for (c, s) in ordered.iter().enumerate() {
        for a in 0..2 {
            for j in 0..n {
                pred[j][a][c] = s.sp_pred[j][a] * weight[c];
                group_client[a][c] += pred[j][a][c];
                for y in 0..n {
                    joint[y][j][a][c] = s.sp_joint[y][j][a] * weight[c];
                }
            }
            group[a] += group_client[a][c];
        }
    }

    Ok(AggregatedParams {
        num_classes: n,
        num_clients: k,
        client_weight: weight,
        p,
        alpha,
        tp1,
        vacuous,
        sp: SpParams {
            joint,
            pred,
            group_client,
            group,
        },
    })
}

/// Dispatches on the spec's metric.
pub fn build_lp(
    params: &AggregatedParams,
    spec: &FairnessSpec,
    form: RegionForm,
) -> Result<LpInstance> {
    match spec.metric {
        Metric::EqualizedOdds => build_lp_eo(params, spec, form),
        Metric::EqualOpportunity => build_lp_eop(params, spec, form),
        Metric::StatisticalParity => build_lp_sp(params, spec),
    }
}

pub fn build_lp_eo(
    params: &AggregatedParams,
    spec: &FairnessSpec,
    form: RegionForm,
) -> Result<LpInstance> {
    check_spec(params, spec, Metric::EqualizedOdds)?;
    build_tp(params, spec, form, params.num_classes)
}

/// Equal opportunity constrains only the first class, the positive outcome.
pub fn build_lp_eop(
    params: &AggregatedParams,
    spec: &FairnessSpec,
    form: RegionForm,
) -> Result<LpInstance> {
    check_spec(params, spec, Metric::EqualOpportunity)?;
    build_tp(params, spec, form, 1)
}

fn check_spec(params: &AggregatedParams, spec: &FairnessSpec, metric: Metric) -> Result<()> {
    if spec.metric != metric {
        return Err(Error::Spec(format!(
            "expected metric {}, got {}",
            metric.tag(),
            spec.metric.tag()
        )));
    }
    spec.validate(params.num_clients)
}

fn build_tp(
    params: &AggregatedParams,
    spec: &FairnessSpec,
    form: RegionForm,
    constrained: usize,
) -> Result<LpInstance> {
    let (n, k) = (params.num_classes, params.num_clients);
    let layout = match form {
        RegionForm::HalfSpace => Layout::TruePositive {
            num_classes: n,
            num_clients: k,
        },
        RegionForm::Barycentric => Layout::Barycentric {
            num_classes: n,
            num_clients: k,
        },
    };
    let nv = layout.num_vars();
    let idx = |a: usize, c: usize, y: usize| layout.tp_offset(a, c) + y;
    let mut warnings = Vec::new();

    let mut objective = vec![0.0; nv];
    for c in 0..k {
        for a in 0..2 {
            for y in 0..n {
                objective[idx(a, c, y)] = -params.p[y][a][c];
            }
        }
    }

    let mut fairness = Vec::new();
    for y in 0..constrained {
        let (a0, a1) = (params.alpha[y][0], params.alpha[y][1]);
        if a0 <= 0.0 || a1 <= 0.0 {
            warnings.push(format!(
                "class {} absent from a group; global row dropped",
                y + 1
            ));
            continue;
        }
        let mut coeffs = vec![0.0; nv];
        for c in 0..k {
            coeffs[idx(0, c, y)] = params.p[y][0][c] / a0;
            coeffs[idx(1, c, y)] = -params.p[y][1][c] / a1;
        }
        fairness.push(TwoSidedRow {
            label: format!("global_y{}", y + 1),
            coeffs,
            bound: spec.eps_global,
        });
    }
    for c in 0..k {
        for y in 0..constrained {
            if params.vacuous[y][0][c] || params.vacuous[y][1][c] {
                warnings.push(format!(
                    "class {} absent from a group at client {}; local row dropped",
                    y + 1,
                    c + 1
                ));
                continue;
            }
            let mut coeffs = vec![0.0; nv];
            coeffs[idx(0, c, y)] = 1.0;
            coeffs[idx(1, c, y)] = -1.0;
            fairness.push(TwoSidedRow {
                label: format!("local_c{}_y{}", c + 1, y + 1),
                coeffs,
                bound: spec.eps_local[c],
            });
        }
    }

    let mut region = Vec::new();
    let mut equalities = Vec::new();
    for c in 0..k {
        for a in 0..2 {
            let t = params.tp1_block(a, c);
            match form {
                RegionForm::HalfSpace => {
                    region.push(simplex_halfspaces(&t, a, c, layout.tp_offset(a, c))?);
                }
                RegionForm::Barycentric => {
                    let f = layout.mix_offset(a, c);
                    let mut sum = vec![0.0; nv];
                    sum[f..f + n + 1].iter_mut().for_each(|v| *v = 1.0);
                    equalities.push(EqualityRow {
                        label: format!("mix_a{a}_c{}", c + 1),
                        coeffs: sum,
                        rhs: 1.0,
                    });
                    for y in 0..n {
                        let mut coeffs = vec![0.0; nv];
                        coeffs[idx(a, c, y)] = 1.0;
                        coeffs[f] = -t[y];
                        coeffs[f + 1 + y] = -1.0;
                        equalities.push(EqualityRow {
                            label: format!("hull_a{a}_c{}_y{}", c + 1, y + 1),
                            coeffs,
                            rhs: 0.0,
                        });
                    }
                }
            }
        }
    }

    Ok(LpInstance {
        metric: spec.metric,
        sense: Sense::Minimize,
        objective,
        fairness,
        region,
        equalities,
        upper: vec![1.0; nv],
        layout,
        warnings,
    })
}

/// Facets of `conv{e_1, ..., e_N, t}` as `K u <= l`.
pub fn simplex_halfspaces(
    t: &[f64],
    group: usize,
    client: usize,
    offset: usize,
) -> Result<RegionBlock> {
    let n = t.len();
    let total: f64 = t.iter().sum();
    if total <= 1.0 + SIMPLEX_MARGIN {
        return Err(Error::DegenerateSimplex {
            group,
            client: client + 1,
            sum: total,
        });
    }
    let mut k = vec![vec![-1.0; n]];
    let mut l = vec![-1.0];
    for y in 0..n {
        let diag = 1.0 - (total - t[y]);
        k.push((0..n).map(|i| if i == y { diag } else { t[y] }).collect());
        l.push(t[y]);
    }
    Ok(RegionBlock {
        group,
        client,
        offset,
        k,
        l,
    })
}

pub fn build_lp_sp(params: &AggregatedParams, spec: &FairnessSpec) -> Result<LpInstance> {
    check_spec(params, spec, Metric::StatisticalParity)?;
    let (n, k) = (params.num_classes, params.num_clients);
    let layout = Layout::SpTable {
        num_classes: n,
        num_clients: k,
    };
    let nv = layout.num_vars();
    let sp = &params.sp;
    let mut warnings = Vec::new();

    let mut objective = vec![0.0; nv];
    for c in 0..k {
        for a in 0..2 {
            for j in 0..n {
                for y in 0..n {
                    objective[layout.sp_index(a, c, j, y)] = sp.joint[y][j][a][c];
                }
            }
        }
    }

    let mut fairness = Vec::new();
    if sp.group[0] > 0.0 && sp.group[1] > 0.0 {
        for y in 0..n {
            let mut coeffs = vec![0.0; nv];
            for c in 0..k {
                for j in 0..n {
                    coeffs[layout.sp_index(0, c, j, y)] = sp.pred[j][0][c] / sp.group[0];
                    coeffs[layout.sp_index(1, c, j, y)] = -sp.pred[j][1][c] / sp.group[1];
                }
            }
            fairness.push(TwoSidedRow {
                label: format!("global_y{}", y + 1),
                coeffs,
                bound: spec.eps_global,
            });
        }
    } else {
        warnings.push("a group is absent; global rows dropped".to_string());
    }
    for c in 0..k {
        let (u0, u1) = (sp.group_client[0][c], sp.group_client[1][c]);
        if u0 <= 0.0 || u1 <= 0.0 {
            warnings.push(format!(
                "a group is absent at client {}; local rows dropped",
                c + 1
            ));
            continue;
        }
        for y in 0..n {
            let mut coeffs = vec![0.0; nv];
            for j in 0..n {
                coeffs[layout.sp_index(0, c, j, y)] = sp.pred[j][0][c] / u0;
                coeffs[layout.sp_index(1, c, j, y)] = -sp.pred[j][1][c] / u1;
            }
            fairness.push(TwoSidedRow {
                label: format!("local_c{}_y{}", c + 1, y + 1),
                coeffs,
                bound: spec.eps_local[c],
            });
        }
    }

    let mut equalities = Vec::new();
    for c in 0..k {
        for a in 0..2 {
            for j in 0..n {
                let mut coeffs = vec![0.0; nv];
                for y in 0..n {
                    coeffs[layout.sp_index(a, c, j, y)] = 1.0;
                }
                equalities.push(EqualityRow {
                    label: format!("col_a{a}_c{}_j{}", c + 1, j + 1),
                    coeffs,
                    rhs: 1.0,
                });
            }
        }
    }

    Ok(LpInstance {
        metric: Metric::StatisticalParity,
        sense: Sense::Maximize,
        objective,
        fairness,
        region: Vec::new(),
        equalities,
        upper: vec![1.0; nv],
        layout,
        warnings,
    })
}
