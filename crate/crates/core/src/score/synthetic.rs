//! Synthetic client-group data with a closed-form Bayes posterior.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ScoreModel;
use crate::data::{ClientGroupDataset, Record};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Class-conditional feature distribution, indexed `[class][group]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FeatureModel {
    /// Isotropic Gaussian with mean `means[y][a]` and standard deviation `spreads[y][a]`.
    Gaussian {
        means: Vec<Vec<Vec<f64>>>,
        spreads: Vec<Vec<f64>>,
    },
    /// One categorical feature; `table[y][a][v]` is `Pr(x = v | y, a)`.
    /// The sampled feature is the category index as a real number.
    Discrete { table: Vec<Vec<Vec<f64>>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub num_clients: usize,
    /// `Pr(A = 1 | C = c)` per client.
    pub sensitive_fraction: Vec<f64>,
    /// `Pr(Y = y | A = a, C = c)`, indexed `[client][group][class]`.
    pub class_prior: Vec<Vec<Vec<f64>>>,
    pub features: FeatureModel,
    pub samples_per_client: usize,
}

/// Sensitive proportions of the three heterogeneity scenarios.
pub const SCENARIO_PROPORTIONS: [[f64; 5]; 3] = [
    [0.4, 0.4, 0.4, 0.4, 0.4],
    [0.2, 0.3, 0.4, 0.5, 0.6],
    [0.1, 0.3, 0.5, 0.7, 0.9],
];

impl SyntheticSpec {
    pub fn dim(&self) -> usize {
        match &self.features {
            FeatureModel::Gaussian { means, .. } => means[0][0].len(),
            FeatureModel::Discrete { .. } => 1,
        }
    }

    /// Five clients, three classes, two-dimensional Gaussian features.
    ///
    /// Client class mixes drift from class-1-heavy to class-3-heavy, identically
    /// for both groups, and the protected group has less separated classes. With
    /// these ingredients, uneven sensitive proportions across clients make
    /// local and global equalized odds pull in different directions.
    pub fn five_client_scenario(sensitive_fraction: &[f64], samples_per_client: usize) -> Self {
        let priors = [
            [0.60, 0.30, 0.10],
            [0.45, 0.35, 0.20],
            [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            [0.20, 0.35, 0.45],
            [0.10, 0.30, 0.60],
        ];
        let class_prior = priors
            .iter()
            .map(|p| vec![p.to_vec(), p.to_vec()])
            .collect();
        let centers = [[0.0, 1.6], [-1.4, -0.8], [1.4, -0.8]];
        let means = centers
            .iter()
            .map(|m| vec![m.to_vec(), m.iter().map(|v| 0.7 * v).collect()])
            .collect();
        let spreads = vec![vec![0.9, 1.0]; 3];
        Self {
            num_classes: 3,
            num_clients: 5,
            sensitive_fraction: sensitive_fraction.to_vec(),
            class_prior,
            features: FeatureModel::Gaussian { means, spreads },
            samples_per_client,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_classes;
        let k = self.num_clients;
        if n < 2 || k == 0 || self.samples_per_client == 0 {
            return Err(Error::Input(
                "need N >= 2, K >= 1 and samples per client".into(),
            ));
        }
        if self.sensitive_fraction.len() != k
            || self
                .sensitive_fraction
                .iter()
                .any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::Input(
                "sensitive fractions must be K values in [0, 1]".into(),
            ));
        }
        if self.class_prior.len() != k {
            return Err(Error::Input(
                "class_prior needs one entry per client".into(),
            ));
        }
        for per_client in &self.class_prior {
            if per_client.len() != 2 {
                return Err(Error::Input("class_prior needs one entry per group".into()));
            }
            for p in per_client {
                check_distribution(p, n, "class prior")?;
            }
        }
        match &self.features {
            FeatureModel::Gaussian { means, spreads } => {
                if means.len() != n || spreads.len() != n {
                    return Err(Error::Input(
                        "feature parameters need one entry per class".into(),
                    ));
                }
                let d = means[0].first().map(|m| m.len()).unwrap_or(0);
                if d == 0 {
                    return Err(Error::Input("feature dimension must be positive".into()));
                }
                for (m, s) in means.iter().zip(spreads) {
                    if m.len() != 2 || s.len() != 2 || m.iter().any(|v| v.len() != d) {
                        return Err(Error::Input(
                            "Gaussian means/spreads have the wrong shape".into(),
                        ));
                    }
                    if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                        return Err(Error::Input(format!(
                            "degenerate spread parameter in {s:?}"
                        )));
                    }
                }
            }
            FeatureModel::Discrete { table } => {
                if table.len() != n {
                    return Err(Error::Input(
                        "feature table needs one entry per class".into(),
                    ));
                }
                let size = table[0].first().map(|t| t.len()).unwrap_or(0);
                if size == 0 {
                    return Err(Error::Input("feature alphabet is empty".into()));
                }
                for per_class in table {
                    if per_class.len() != 2 {
                        return Err(Error::Input(
                            "feature table needs one entry per group".into(),
                        ));
                    }
                    for dist in per_class {
                        check_distribution(dist, size, "feature table row")?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_distribution(p: &[f64], len: usize, what: &str) -> Result<()> {
    if p.len() != len || p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Input(format!(
            "{what} must have {len} nonnegative entries"
        )));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Input(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

fn sample_categorical(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|v| *v > 0.0).unwrap_or(p.len() - 1)
}

/// Exact posterior `Pr(Y = y | x, a, c)` of a [`SyntheticSpec`].
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    spec: Arc<SyntheticSpec>,
}

impl SyntheticOracle {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec: Arc::new(spec),
        })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }
}

impl ScoreModel for SyntheticOracle {
    fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    fn score(&self, x: &[f64], group: usize, client: usize) -> Vec<f64> {
        let prior = &self.spec.class_prior[client][group];
        let mut logp: Vec<f64> = match &self.spec.features {
            FeatureModel::Gaussian { means, spreads } => (0..self.spec.num_classes)
                .map(|y| {
                    let mu = &means[y][group];
                    let s = spreads[y][group];
                    let d2: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
                    prior[y].ln() - d2 / (2.0 * s * s) - mu.len() as f64 * s.ln()
                })
                .collect(),
            FeatureModel::Discrete { table } => {
                let v = x[0].round();
                (0..self.spec.num_classes)
                    .map(|y| {
                        let row = &table[y][group];
                        let lik = if v >= 0.0 && (v as usize) < row.len() {
                            row[v as usize]
                        } else {
                            1.0
                        };
                        (prior[y] * lik).ln()
                    })
                    .collect()
            }
        };
        let m = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return prior.clone();
        }
        let mut s = 0.0;
        for v in logp.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        logp.iter().map(|v| v / s).collect()
    }
}

/// Draws `samples_per_client` records per client and returns them together
/// with the exact-posterior oracle.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
    rng: &RngStream,
) -> Result<(ClientGroupDataset, SyntheticOracle)> {
    spec.validate()?;
    let dim = spec.dim();
    let mut data = ClientGroupDataset::empty(dim, spec.num_classes, spec.num_clients)?;
    for c in 0..spec.num_clients {
        let mut r = rng.derive(format!("client{c}"));
        for _ in 0..spec.samples_per_client {
            let a = usize::from(r.rng().random::<f64>() < spec.sensitive_fraction[c]);
            let y = sample_categorical(&spec.class_prior[c][a], r.rng().random());
            let features = match &spec.features {
                FeatureModel::Gaussian { means, spreads } => means[y][a]
                    .iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(r.rng());
                        m + spreads[y][a] * z
                    })
                    .collect(),
                FeatureModel::Discrete { table } => {
                    vec![sample_categorical(&table[y][a], r.rng().random()) as f64]
                }
            };
            data.push(Record {
                features,
                group: a,
                client: c,
                label: y,
            })?;
        }
    }
    Ok((data, SyntheticOracle::new(spec.clone())?))
}
