//! The four-step client/server exchange and its message transcript.
//!
//! Step 1 trains the score model by FedAvg (or adopts a pretrained one).
//! Step 2 has each client upload its possibly noised statistics. In step 3
//! the server solves the LP and sends each client its target. In step 4 each
//! client turns its target into local randomization. Every message passes through its JSON encoding, so the
//! server works only with what was actually transmitted.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::ClientGroupDataset;
use crate::error::{Error, Result};
use crate::fair::{
    sanitize_weights, solve_lae, FairPredictor, MixWeights, PredictorBundle, PredictorTables,
    SpRandomization, BUNDLE_FORMAT, BUNDLE_VERSION,
};
use crate::lp::{
    aggregate, build_lp, solve, AggregatedParams, Layout, LpInstance, LpSolution, LpStatus,
    RegionForm, SolverConfig,
};
use crate::rng::RngStream;
use crate::score::{ArgmaxPredictor, FedAvgConfig, FedAvgTrainer, RoundLog, SharedModel};
use crate::spec::{FairnessSpec, Metric};
use crate::stats::{apply_laplace, compute_client_stats, ClientStats, DpConfig};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ServerToClient,
    ClientToServer,
}

/// `None` is the server; `Some(c)` is client `c` (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    Server,
    Client(usize),
}

/// Target for one client's two (group) cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "form")]
pub enum ZTarget {
    /// True positive targets `z[a][y]`; `mix[a]` carries explicit weights when
    /// the server solved in barycentric form.
    TruePositive {
        z: Vec<Vec<f64>>,
        mix: Option<Vec<Vec<f64>>>,
    },
    /// `tables[a][j][y] = Pr(output y | base prediction j)`.
    Parity { tables: Vec<Vec<Vec<f64>>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Body {
    ModelBroadcast {
        round: usize,
        params: Vec<f64>,
    },
    ModelUpdate {
        round: usize,
        num_samples: usize,
        params: Vec<f64>,
    },
    Statistics {
        stats: ClientStats,
    },
    Target {
        target: ZTarget,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub version: u32,
    pub seq: u64,
    pub step: u8,
    pub direction: Direction,
    pub sender: Party,
    pub receiver: Party,
    pub body: Body,
}

impl Envelope {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Value = serde_json::from_str(text).map_err(|e| Error::Message(e.to_string()))?;
        let found = raw
            .get("version")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Message("missing version".into()))?;
        if found != PROTOCOL_VERSION as u64 {
            return Err(Error::Version {
                found: found as u32,
                expected: PROTOCOL_VERSION,
            });
        }
        serde_json::from_value(raw).map_err(|e| Error::Message(e.to_string()))
    }
}

/// Encodes and decodes a message; the result equals the input.
pub fn message_roundtrip(msg: &Envelope) -> Result<Envelope> {
    Envelope::from_json(&msg.to_json()?)
}

/// Ordered record of every message.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub messages: Vec<Envelope>,
}

impl Transcript {
    /// Appends a message and returns it as the receiver decodes it.
    fn send(&mut self, step: u8, sender: Party, receiver: Party, body: Body) -> Result<Envelope> {
        let direction = match sender {
            Party::Server => Direction::ServerToClient,
            Party::Client(_) => Direction::ClientToServer,
        };
        let msg = Envelope {
            version: PROTOCOL_VERSION,
            seq: self.messages.len() as u64,
            step,
            direction,
            sender,
            receiver,
            body,
        };
        let received = message_roundtrip(&msg)?;
        self.messages.push(msg);
        Ok(received)
    }

    /// One JSON object per line.
    pub fn write_ndjson<W: Write>(&self, mut out: W) -> Result<()> {
        for m in &self.messages {
            writeln!(out, "{}", m.to_json()?)?;
        }
        Ok(())
    }

    pub fn read_ndjson(text: &str) -> Result<Self> {
        let messages = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(Envelope::from_json)
            .collect::<Result<_>>()?;
        Ok(Transcript { messages })
    }

    pub fn step_messages(&self, step: u8) -> impl Iterator<Item = &Envelope> {
        self.messages.iter().filter(move |m| m.step == step)
    }
}

/// JSON keys a client may send after training.
const ALLOWED_UPLOAD_KEYS: [&str; 16] = [
    "version",
    "seq",
    "step",
    "direction",
    "sender",
    "receiver",
    "body",
    "type",
    "stats",
    "client",
    "num_samples",
    "joint_tp",
    "base",
    "sp_joint",
    "sp_pred",
    "group_mass",
];

fn collect_keys(v: &Value, out: &mut BTreeSet<String>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                out.insert(k.clone());
                collect_keys(child, out);
            }
        }
        Value::Array(items) => items.iter().for_each(|i| collect_keys(i, out)),
        _ => {}
    }
}

/// Checks that after training every client sent exactly one statistics
/// message using only aggregate fields, and received exactly one target.
pub fn audit_transcript(t: &Transcript, num_clients: usize) -> Result<()> {
    let allowed: BTreeSet<&str> = ALLOWED_UPLOAD_KEYS.into_iter().collect();
    let mut uploads = vec![0usize; num_clients];
    let mut targets = vec![0usize; num_clients];
    for m in &t.messages {
        if m.step >= 2 && m.direction == Direction::ClientToServer {
            let Party::Client(c) = m.sender else {
                return Err(Error::Message(format!(
                    "message {} has a server sender",
                    m.seq
                )));
            };
            let mut keys = BTreeSet::new();
            collect_keys(&serde_json::to_value(m)?, &mut keys);
            if let Some(bad) = keys.iter().find(|k| !allowed.contains(k.as_str())) {
                return Err(Error::Message(format!(
                    "client {} sent field `{bad}` after training",
                    c + 1
                )));
            }
            if !matches!(m.body, Body::Statistics { .. }) {
                return Err(Error::Message(format!(
                    "client {} sent a non-statistics message",
                    c + 1
                )));
            }
            *uploads
                .get_mut(c)
                .ok_or_else(|| Error::Message("unknown client".into()))? += 1;
        }
        if let (Body::Target { .. }, Party::Client(c)) = (&m.body, m.receiver) {
            *targets
                .get_mut(c)
                .ok_or_else(|| Error::Message("unknown client".into()))? += 1;
        }
    }
    for c in 0..num_clients {
        if uploads[c] != 1 || targets[c] != 1 {
            return Err(Error::Message(format!(
                "client {} sent {} statistics messages and received {} targets",
                c + 1,
                uploads[c],
                targets[c]
            )));
        }
    }
    Ok(())
}

/// Where the score model comes from.
#[derive(Debug, Clone)]
pub enum ScoreSource {
    FedAvg(FedAvgConfig),
    Pretrained(SharedModel),
}

/// Result of steps 1 and 2, reusable across fairness specifications.
#[derive(Debug, Clone)]
pub struct ScoredRound {
    pub model: SharedModel,
    pub round_logs: Vec<RoundLog>,
    /// Statistics as each client sent them, in client order.
    pub sent_stats: Vec<ClientStats>,
    /// Statistics as the server decoded them.
    pub params: AggregatedParams,
    pub transcript: Transcript,
}

impl ScoredRound {
    pub fn base(&self) -> ArgmaxPredictor {
        ArgmaxPredictor::new(self.model.clone())
    }
}

/// Result of steps 3 and 4.
#[derive(Debug, Clone)]
pub struct PostProcessed {
    pub lp: LpInstance,
    pub solution: LpSolution,
    pub region_form: RegionForm,
    pub predictor: FairPredictor,
    pub transcript: Transcript,
}

/// Steps 1 and 2: train (or adopt) the score model on `train`, then compute
/// statistics on `stats_data` with optional Laplace noise.
pub fn run_scoring(
    train: &ClientGroupDataset,
    stats_data: &ClientGroupDataset,
    source: &ScoreSource,
    dp: &DpConfig,
    rng: &RngStream,
) -> Result<ScoredRound> {
    dp.validate()?;
    let k = stats_data.num_clients();
    let mut transcript = Transcript::default();
    let (model, round_logs): (SharedModel, Vec<RoundLog>) = match source {
        ScoreSource::Pretrained(m) => (m.clone(), Vec::new()),
        ScoreSource::FedAvg(cfg) => {
            let mut trainer = FedAvgTrainer::new(train, cfg, &rng.derive("fedavg"))?;
            let mut logs = Vec::with_capacity(cfg.rounds);
            for round in 1..=cfg.rounds {
                for c in 0..train.num_clients() {
                    transcript.send(
                        1,
                        Party::Server,
                        Party::Client(c),
                        Body::ModelBroadcast {
                            round,
                            params: trainer.model().params().to_vec(),
                        },
                    )?;
                }
                let (updates, log) = trainer.step()?;
                for u in updates {
                    transcript.send(
                        1,
                        Party::Client(u.client),
                        Party::Server,
                        Body::ModelUpdate {
                            round,
                            num_samples: u.num_samples,
                            params: u.params,
                        },
                    )?;
                }
                logs.push(log);
            }
            (Arc::new(trainer.into_model()) as SharedModel, logs)
        }
    };
    let base = ArgmaxPredictor::new(model.clone());

    let mut sent_stats = Vec::with_capacity(k);
    let mut received = Vec::with_capacity(k);
    for c in 0..k {
        let slice = stats_data.client_slice(c);
        if slice.is_empty() {
            return Err(Error::EmptyClient { client: c + 1 });
        }
        let exact = compute_client_stats(&slice, &base)?;
        let noised = apply_laplace(&exact, dp, &rng.derive("dp"))?;
        let msg = transcript.send(
            2,
            Party::Client(c),
            Party::Server,
            Body::Statistics {
                stats: noised.clone(),
            },
        )?;
        sent_stats.push(noised);
        match msg.body {
            Body::Statistics { stats } => received.push(stats),
            _ => unreachable!("statistics message decoded as another type"),
        }
    }
    let params = aggregate(&received)?;
    Ok(ScoredRound {
        model,
        round_logs,
        sent_stats,
        params,
        transcript,
    })
}

/// Steps 3 and 4 for one fairness specification.
///
/// With [`RegionForm::HalfSpace`] the server falls back to the barycentric
/// form when some base true-positive vector sums to at most 1.
pub fn run_postprocess(
    scored: &ScoredRound,
    spec: &FairnessSpec,
    solver: &SolverConfig,
    form: RegionForm,
) -> Result<PostProcessed> {
    let params = &scored.params;
    let (lp, region_form) = match build_lp(params, spec, form) {
        Err(Error::DegenerateSimplex { .. }) if form == RegionForm::HalfSpace => (
            build_lp(params, spec, RegionForm::Barycentric)?,
            RegionForm::Barycentric,
        ),
        other => (other?, form),
    };
    let solution = solve(&lp, solver)?;
    match solution.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Err(Error::Infeasible {
                residual: solution
                    .certificate
                    .as_ref()
                    .map_or(f64::NAN, |c| c.residual),
            })
        }
        LpStatus::Unbounded => return Err(Error::Numerical("LP reported unbounded".into())),
        LpStatus::NumericalFailure => {
            return Err(Error::Numerical(format!(
                "solver failed after {} iterations",
                solution.iterations
            )))
        }
    }

    let mut transcript = Transcript::default();
    let n = params.num_classes;
    let k = params.num_clients;
    let mut cells_mix: Vec<Option<MixWeights>> = Vec::new();
    let mut cells_sp: Vec<Option<SpRandomization>> = Vec::new();
    for c in 0..k {
        let target = match lp.layout {
            Layout::SpTable { .. } => ZTarget::Parity {
                tables: (0..2)
                    .map(|a| {
                        (0..n)
                            .map(|j| {
                                (0..n)
                                    .map(|y| solution.z[lp.layout.sp_index(a, c, j, y)])
                                    .collect()
                            })
                            .collect()
                    })
                    .collect(),
            },
            Layout::TruePositive { .. } => ZTarget::TruePositive {
                z: (0..2)
                    .map(|a| lp.tp_block(&solution.z, a, c).to_vec())
                    .collect(),
                mix: None,
            },
            Layout::Barycentric { .. } => ZTarget::TruePositive {
                z: (0..2)
                    .map(|a| lp.tp_block(&solution.z, a, c).to_vec())
                    .collect(),
                mix: Some(
                    (0..2)
                        .map(|a| {
                            let off = lp.layout.mix_offset(a, c);
                            solution.z[off..off + n + 1].to_vec()
                        })
                        .collect(),
                ),
            },
        };
        let msg = transcript.send(3, Party::Server, Party::Client(c), Body::Target { target })?;
        let Body::Target { target } = msg.body else {
            unreachable!("target message decoded as another type")
        };
        // Step 4, on the client, using only its own statistics and the target.
        let own = &scored.sent_stats[c];
        match target {
            ZTarget::TruePositive { z, mix } => {
                for a in 0..2 {
                    let beta = match &mix {
                        Some(m) => {
                            let mut b = m[a].clone();
                            sanitize_weights(&mut b)?;
                            b
                        }
                        None => solve_lae(&client_tp1(own, a), &z[a])?,
                    };
                    cells_mix.push(Some(MixWeights {
                        group: a,
                        client: c,
                        beta,
                    }));
                }
            }
            ZTarget::Parity { tables } => {
                for (a, table) in tables.into_iter().enumerate() {
                    let unused: Vec<bool> = (0..n).map(|j| own.sp_pred[j][a] <= 0.0).collect();
                    let mut cell = SpRandomization {
                        group: a,
                        client: c,
                        table,
                    };
                    cell.sanitize(&unused)?;
                    cells_sp.push(Some(cell));
                }
            }
        }
    }
    let tables = if spec.metric == Metric::StatisticalParity {
        PredictorTables::Parity(cells_sp)
    } else {
        PredictorTables::Mix(cells_mix)
    };
    let predictor = FairPredictor::new(
        scored.base(),
        PredictorBundle {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION,
            metric: spec.metric,
            num_classes: n,
            num_clients: k,
            model_checkpoint: None,
            tables,
        },
    )?;
    Ok(PostProcessed {
        lp,
        solution,
        region_form,
        predictor,
        transcript,
    })
}

/// Base true positive rates a client derives from its own statistics;
/// classes it never saw in `group` count as fully recalled.
pub fn client_tp1(stats: &ClientStats, group: usize) -> Vec<f64> {
    (0..stats.num_classes())
        .map(|y| {
            let b = stats.base[y][group];
            if b > 0.0 {
                (stats.joint_tp[y][group] / b).clamp(0.0, 1.0)
            } else {
                1.0
            }
        })
        .collect()
}

/// Everything from one full protocol run.
#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub scored: ScoredRound,
    pub post: PostProcessed,
    pub transcript: Transcript,
}

/// Runs all four steps. `stats_data` is the data clients compute statistics on.
#[allow(clippy::too_many_arguments)]
pub fn run_protocol(
    train: &ClientGroupDataset,
    stats_data: &ClientGroupDataset,
    source: &ScoreSource,
    spec: &FairnessSpec,
    dp: &DpConfig,
    solver: &SolverConfig,
    form: RegionForm,
    rng: &RngStream,
) -> Result<ProtocolRun> {
    spec.validate(stats_data.num_clients())?;
    let scored = run_scoring(train, stats_data, source, dp, rng)?;
    let post = run_postprocess(&scored, spec, solver, form)?;
    let mut transcript = scored.transcript.clone();
    for m in &post.transcript.messages {
        let mut m = m.clone();
        m.seq = transcript.messages.len() as u64;
        transcript.messages.push(m);
    }
    Ok(ProtocolRun {
        scored,
        post,
        transcript,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_roundtrip_and_version_check() {
        let msg = Envelope {
            version: PROTOCOL_VERSION,
            seq: 7,
            step: 3,
            direction: Direction::ServerToClient,
            sender: Party::Server,
            receiver: Party::Client(2),
            body: Body::Target {
                target: ZTarget::TruePositive {
                    z: vec![vec![0.1, 0.2]; 2],
                    mix: None,
                },
            },
        };
        assert_eq!(message_roundtrip(&msg).unwrap(), msg);
        let bad = msg
            .to_json()
            .unwrap()
            .replacen("\"version\":1", "\"version\":9", 1);
        assert!(matches!(
            Envelope::from_json(&bad),
            Err(Error::Version { found: 9, .. })
        ));
    }

    #[test]
    fn audit_rejects_raw_features() {
        let mut t = Transcript::default();
        t.send(
            2,
            Party::Client(0),
            Party::Server,
            Body::ModelUpdate {
                round: 1,
                num_samples: 3,
                params: vec![1.0],
            },
        )
        .unwrap();
        assert!(audit_transcript(&t, 1).is_err());
    }
}
