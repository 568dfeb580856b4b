//! Client-side empirical statistics and their Laplace-noised release.

use serde::{Deserialize, Serialize};

use crate::data::ClientGroupDataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::score::ArgmaxPredictor;

/// Relative frequencies one client sends to the server. Every table is a
/// fraction of the client's `num_samples` records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientStats {
    pub client: usize,
    pub num_samples: usize,
    /// `Pr(Y1 = y, Y = y, A = a | C = c)`, indexed `[y][a]`.
    pub joint_tp: Vec<Vec<f64>>,
    /// `Pr(Y = y, A = a | C = c)`, indexed `[y][a]`.
    pub base: Vec<Vec<f64>>,
    /// `Pr(Y = y, Y1 = j, A = a | C = c)`, indexed `[y][j][a]`.
    pub sp_joint: Vec<Vec<Vec<f64>>>,
    /// `Pr(Y1 = j, A = a | C = c)`, indexed `[j][a]`.
    pub sp_pred: Vec<Vec<f64>>,
    /// `Pr(A = a | C = c)`.
    pub group_mass: Vec<f64>,
}

impl ClientStats {
    pub fn num_classes(&self) -> usize {
        self.base.len()
    }
}

/// Counts over one client's records, divided by the client's sample count.
pub fn compute_client_stats(
    slice: &ClientGroupDataset,
    base: &ArgmaxPredictor,
) -> Result<ClientStats> {
    if slice.is_empty() {
        return Err(Error::Input("client slice is empty".into()));
    }
    let client = slice.client(0);
    if (0..slice.len()).any(|i| slice.client(i) != client) {
        return Err(Error::Input("client slice mixes several clients".into()));
    }
    let n = slice.num_classes().max(base.num_classes());
    let mut joint_tp = vec![vec![0u64; 2]; n];
    let mut count = vec![vec![0u64; 2]; n];
    let mut sp_joint = vec![vec![vec![0u64; 2]; n]; n];
    let mut sp_pred = vec![vec![0u64; 2]; n];
    let mut group = [0u64; 2];
    for i in 0..slice.len() {
        let (a, y) = (slice.group(i), slice.label(i));
        let j = base.predict(slice.features(i), a, client);
        count[y][a] += 1;
        if j == y {
            joint_tp[y][a] += 1;
        }
        sp_joint[y][j][a] += 1;
        sp_pred[j][a] += 1;
        group[a] += 1;
    }
    let total = slice.len() as f64;
    let freq2 = |t: Vec<Vec<u64>>| -> Vec<Vec<f64>> {
        t.into_iter()
            .map(|row| row.into_iter().map(|v| v as f64 / total).collect())
            .collect()
    };
    Ok(ClientStats {
        client,
        num_samples: slice.len(),
        joint_tp: freq2(joint_tp),
        base: freq2(count),
        sp_joint: sp_joint.into_iter().map(freq2).collect(),
        sp_pred: freq2(sp_pred),
        group_mass: group.iter().map(|v| *v as f64 / total).collect(),
    })
}

/// Laplace mechanism settings. `epsilon = inf` adds no noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpConfig {
    #[serde(with = "extended_f64")]
    pub epsilon: f64,
    pub enabled: bool,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self::disabled()
    }
}

impl DpConfig {
    pub fn disabled() -> Self {
        Self {
            epsilon: f64::INFINITY,
            enabled: false,
        }
    }

    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Input(format!(
                "privacy budget must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    pub fn is_noisy(&self) -> bool {
        self.enabled && self.epsilon.is_finite()
    }
}

/// Laplace scale for a client of `num_samples` records: sensitivity `1/n` over epsilon.
pub fn laplace_scale(num_samples: usize, epsilon: f64) -> f64 {
    1.0 / (num_samples as f64 * epsilon)
}

/// One draw from Laplace(0, scale) by inverting the CDF.
pub fn sample_laplace(scale: f64, rng: &mut RngStream) -> f64 {
    let v = rng.uniform_open() - 0.5;
    -scale * v.signum() * (1.0 - 2.0 * v.abs()).ln()
}

/// Adds independent Laplace noise to every transmitted entry, then sanitizes.
///
/// Sanitation clips to [0, 1], renormalizes `base` and `sp_pred` to sum to 1,
/// caps `joint_tp` at `base`, and recomputes `group_mass` from `sp_pred`.
pub fn apply_laplace(stats: &ClientStats, dp: &DpConfig, rng: &RngStream) -> Result<ClientStats> {
    dp.validate()?;
    if !dp.is_noisy() {
        return Ok(stats.clone());
    }
    let scale = laplace_scale(stats.num_samples, dp.epsilon);
    let mut r = rng.derive(format!("laplace/client{}", stats.client));
    let mut noisy = stats.clone();
    let mut perturb = |v: &mut f64| *v += sample_laplace(scale, &mut r);
    noisy.joint_tp.iter_mut().flatten().for_each(&mut perturb);
    noisy.base.iter_mut().flatten().for_each(&mut perturb);
    noisy
        .sp_joint
        .iter_mut()
        .flatten()
        .flatten()
        .for_each(&mut perturb);
    noisy.sp_pred.iter_mut().flatten().for_each(&mut perturb);
    noisy.group_mass.iter_mut().for_each(&mut perturb);

    let clip = |v: &mut f64| *v = v.clamp(0.0, 1.0);
    noisy.joint_tp.iter_mut().flatten().for_each(clip);
    noisy.base.iter_mut().flatten().for_each(clip);
    noisy.sp_joint.iter_mut().flatten().flatten().for_each(clip);
    noisy.sp_pred.iter_mut().flatten().for_each(clip);

    normalize(noisy.base.iter_mut().flatten());
    normalize(noisy.sp_pred.iter_mut().flatten());
    for (tp_row, base_row) in noisy.joint_tp.iter_mut().zip(&noisy.base) {
        for (tp, b) in tp_row.iter_mut().zip(base_row) {
            *tp = tp.min(*b);
        }
    }
    for a in 0..2 {
        noisy.group_mass[a] = noisy.sp_pred.iter().map(|row| row[a]).sum();
    }
    Ok(noisy)
}

fn normalize<'a>(values: impl Iterator<Item = &'a mut f64>) {
    let mut refs: Vec<&mut f64> = values.collect();
    let s: f64 = refs.iter().map(|v| **v).sum();
    if s > 0.0 {
        for v in refs.iter_mut() {
            **v /= s;
        }
    } else {
        let u = 1.0 / refs.len() as f64;
        for v in refs.iter_mut() {
            **v = u;
        }
    }
}

/// Serializes non-finite floats as the strings `"inf"`, `"-inf"`, `"nan"`.
pub(crate) mod extended_f64 {
    use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            Repr::Num(*v).serialize(s)
        } else if v.is_nan() {
            Repr::Text("nan".into()).serialize(s)
        } else if *v > 0.0 {
            Repr::Text("inf".into()).serialize(s)
        } else {
            Repr::Text("-inf".into()).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" | "infinity" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("not a number: `{other}`"))),
            },
        }
    }
}
