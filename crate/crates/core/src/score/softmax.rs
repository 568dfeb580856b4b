//! Softmax regression (optionally with one ReLU hidden layer) trained by
//! federated averaging.

use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ScoreModel;
use crate::data::ClientGroupDataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;

const CHECKPOINT_FORMAT: &str = "fedfair-score-model";
const CHECKPOINT_VERSION: u32 = 1;

/// What the model sees besides the raw features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InputConvention {
    /// `x` followed by the group bit `a`.
    FeaturesAndGroup,
    /// `x`, `a`, then a one-hot encoding of the client.
    FeaturesGroupClient { num_clients: usize },
}

impl InputConvention {
    fn width(self, dim: usize) -> usize {
        match self {
            InputConvention::FeaturesAndGroup => dim + 1,
            InputConvention::FeaturesGroupClient { num_clients } => dim + 1 + num_clients,
        }
    }

    fn encode(self, features: &[f64], group: usize, client: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(features);
        out.push(group as f64);
        if let InputConvention::FeaturesGroupClient { num_clients } = self {
            out.extend((0..num_clients).map(|k| if k == client { 1.0 } else { 0.0 }));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FedAvgConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Width of an optional ReLU hidden layer; `None` is plain softmax regression.
    #[serde(default)]
    pub hidden_units: Option<usize>,
    /// Append a one-hot client encoding to the model input.
    #[serde(default)]
    pub include_client: bool,
}

impl Default for FedAvgConfig {
    fn default() -> Self {
        Self {
            rounds: 50,
            local_epochs: 1,
            batch_size: 64,
            learning_rate: 0.1,
            hidden_units: None,
            include_client: false,
        }
    }
}

impl FedAvgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.local_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Input(
                "rounds, local_epochs and batch_size must all be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Input("learning_rate must be positive".into()));
        }
        if self.hidden_units == Some(0) {
            return Err(Error::Input(
                "hidden_units must be positive when set".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxModel {
    num_classes: usize,
    dim: usize,
    convention: InputConvention,
    hidden: Option<usize>,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: SoftmaxModel,
}

impl SoftmaxModel {
    pub fn zeros(
        num_classes: usize,
        dim: usize,
        convention: InputConvention,
        hidden: Option<usize>,
    ) -> Self {
        let width = convention.width(dim);
        let len = match hidden {
            None => num_classes * width + num_classes,
            Some(h) => h * width + h + num_classes * h + num_classes,
        };
        Self {
            num_classes,
            dim,
            convention,
            hidden,
            params: vec![0.0; len],
        }
    }

    fn initialized(
        num_classes: usize,
        dim: usize,
        convention: InputConvention,
        hidden: Option<usize>,
        rng: &RngStream,
    ) -> Self {
        let mut m = Self::zeros(num_classes, dim, convention, hidden);
        if let Some(h) = hidden {
            // He init for the hidden layer, small values for the output layer.
            let width = convention.width(dim);
            let mut r = rng.derive("init");
            let s1 = (2.0 / width as f64).sqrt();
            let s2 = (1.0 / h as f64).sqrt();
            let (w1, rest) = m.params.split_at_mut(h * width);
            let (_, rest) = rest.split_at_mut(h);
            let (w2, _) = rest.split_at_mut(num_classes * h);
            for w in w1.iter_mut() {
                let z: f64 = StandardNormal.sample(r.rng());
                *w = s1 * z;
            }
            for w in w2.iter_mut() {
                let z: f64 = StandardNormal.sample(r.rng());
                *w = s2 * z;
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn convention(&self) -> InputConvention {
        self.convention
    }

    pub fn hidden(&self) -> Option<usize> {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Input(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    fn width(&self) -> usize {
        self.convention.width(self.dim)
    }

    /// Probabilities plus (for the hidden variant) the hidden activations.
    fn forward(&self, input: &[f64], hidden_out: &mut Vec<f64>) -> Vec<f64> {
        let n = self.num_classes;
        let width = self.width();
        let mut logits = vec![0.0; n];
        match self.hidden {
            None => {
                let (w, b) = self.params.split_at(n * width);
                for k in 0..n {
                    let row = &w[k * width..(k + 1) * width];
                    logits[k] = b[k] + dot(row, input);
                }
            }
            Some(h) => {
                let (w1, rest) = self.params.split_at(h * width);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(n * h);
                hidden_out.clear();
                for j in 0..h {
                    let v = b1[j] + dot(&w1[j * width..(j + 1) * width], input);
                    hidden_out.push(v.max(0.0));
                }
                for k in 0..n {
                    logits[k] = b2[k] + dot(&w2[k * h..(k + 1) * h], hidden_out);
                }
            }
        }
        softmax_in_place(&mut logits);
        logits
    }

    /// Adds the cross-entropy gradient of one example into `grad`; returns its loss.
    fn accumulate_gradient(
        &self,
        input: &[f64],
        label: usize,
        grad: &mut [f64],
        hidden_buf: &mut Vec<f64>,
    ) -> f64 {
        let n = self.num_classes;
        let width = self.width();
        let probs = self.forward(input, hidden_buf);
        let loss = -probs[label].max(1e-300).ln();
        let mut delta = probs;
        delta[label] -= 1.0;
        match self.hidden {
            None => {
                let (gw, gb) = grad.split_at_mut(n * width);
                for k in 0..n {
                    let row = &mut gw[k * width..(k + 1) * width];
                    for (g, x) in row.iter_mut().zip(input) {
                        *g += delta[k] * x;
                    }
                    gb[k] += delta[k];
                }
            }
            Some(h) => {
                let w2 = &self.params[h * width + h..h * width + h + n * h];
                let (gw1, rest) = grad.split_at_mut(h * width);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(n * h);
                for k in 0..n {
                    for j in 0..h {
                        gw2[k * h + j] += delta[k] * hidden_buf[j];
                    }
                    gb2[k] += delta[k];
                }
                for j in 0..h {
                    if hidden_buf[j] <= 0.0 {
                        continue;
                    }
                    let back: f64 = (0..n).map(|k| delta[k] * w2[k * h + j]).sum();
                    for (g, x) in gw1[j * width..(j + 1) * width].iter_mut().zip(input) {
                        *g += back * x;
                    }
                    gb1[j] += back;
                }
            }
        }
        loss
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_checkpoint_string(&self) -> Result<String> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&ck)?)
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Message(format!(
                "not a score model checkpoint: `{}`",
                ck.format
            )));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: ck.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let expected = Self::zeros(
            ck.model.num_classes,
            ck.model.dim,
            ck.model.convention,
            ck.model.hidden,
        )
        .params
        .len();
        if ck.model.params.len() != expected {
            return Err(Error::Message(
                "checkpoint parameter count does not match its shape".into(),
            ));
        }
        Ok(ck.model)
    }
}

impl ScoreModel for SoftmaxModel {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn score(&self, features: &[f64], group: usize, client: usize) -> Vec<f64> {
        let mut input = Vec::with_capacity(self.width());
        self.convention.encode(features, group, client, &mut input);
        self.forward(&input, &mut Vec::new())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

/// Parameters one client sends back after its local epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client: usize,
    pub num_samples: usize,
    pub params: Vec<f64>,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub loss: f64,
}

/// Drives FedAvg one round at a time so callers can observe each exchange.
#[derive(Debug)]
pub struct FedAvgTrainer {
    cfg: FedAvgConfig,
    rng: RngStream,
    clients: Vec<(usize, ClientGroupDataset)>,
    model: SoftmaxModel,
    round: usize,
}

impl FedAvgTrainer {
    pub fn new(train: &ClientGroupDataset, cfg: &FedAvgConfig, rng: &RngStream) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::Input("training data is empty".into()));
        }
        let convention = if cfg.include_client {
            InputConvention::FeaturesGroupClient {
                num_clients: train.num_clients(),
            }
        } else {
            InputConvention::FeaturesAndGroup
        };
        let clients = (0..train.num_clients())
            .map(|c| (c, train.client_slice(c)))
            .filter(|(_, d)| !d.is_empty())
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            rng: rng.clone(),
            clients,
            model: SoftmaxModel::initialized(
                train.num_classes(),
                train.dim(),
                convention,
                cfg.hidden_units,
                rng,
            ),
            round: 0,
        })
    }

    pub fn model(&self) -> &SoftmaxModel {
        &self.model
    }

    pub fn into_model(self) -> SoftmaxModel {
        self.model
    }

    pub fn rounds_done(&self) -> usize {
        self.round
    }

    /// Runs local training on every client, then the sample-weighted average.
    pub fn step(&mut self) -> Result<(Vec<ClientUpdate>, RoundLog)> {
        let round = self.round + 1;
        let global = &self.model;
        let cfg = &self.cfg;
        let rng = &self.rng;
        let updates: Vec<ClientUpdate> = self
            .clients
            .par_iter()
            .map(|(c, data)| local_update(global, data, *c, round, cfg, rng))
            .collect();

        let total: usize = updates.iter().map(|u| u.num_samples).sum();
        let mut avg = vec![0.0; global.params.len()];
        let mut loss = 0.0;
        for u in &updates {
            let w = u.num_samples as f64 / total as f64;
            for (a, p) in avg.iter_mut().zip(&u.params) {
                *a += w * p;
            }
            loss += w * u.mean_loss;
        }
        if !loss.is_finite() || avg.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { round });
        }
        self.model.params = avg;
        self.round = round;
        Ok((updates, RoundLog { round, loss }))
    }
}

fn local_update(
    global: &SoftmaxModel,
    data: &ClientGroupDataset,
    client: usize,
    round: usize,
    cfg: &FedAvgConfig,
    rng: &RngStream,
) -> ClientUpdate {
    let mut model = global.clone();
    let n = data.len();
    let batch = cfg.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; model.params.len()];
    let mut input = Vec::with_capacity(model.width());
    let mut hidden = Vec::new();
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    for epoch in 0..cfg.local_epochs {
        // A single full batch is order-independent up to summation order, so
        // only shuffle when there are several batches.
        if batch < n {
            order = (0..n).collect();
            rng.derive(format!("round{round}/client{client}/epoch{epoch}"))
                .shuffle(&mut order);
        }
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in chunk {
                model.convention.encode(
                    data.features(i),
                    data.group(i),
                    data.client(i),
                    &mut input,
                );
                let l = model.accumulate_gradient(&input, data.label(i), &mut grad, &mut hidden);
                loss_sum += l;
                loss_count += 1;
            }
            let step = cfg.learning_rate / chunk.len() as f64;
            for (p, g) in model.params.iter_mut().zip(&grad) {
                *p -= step * g;
            }
        }
    }
    ClientUpdate {
        client,
        num_samples: n,
        params: model.params,
        mean_loss: loss_sum / loss_count.max(1) as f64,
    }
}

/// Trains a softmax model with `cfg.rounds` FedAvg rounds.
pub fn train_fedavg_softmax(
    train: &ClientGroupDataset,
    cfg: &FedAvgConfig,
    rng: &RngStream,
) -> Result<(SoftmaxModel, Vec<RoundLog>)> {
    let mut trainer = FedAvgTrainer::new(train, cfg, rng)?;
    let mut log = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let (_, entry) = trainer.step()?;
        log.push(entry);
    }
    Ok((trainer.into_model(), log))
}
