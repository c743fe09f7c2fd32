//! Round orchestration: client selection, local training, cluster-based
//! aggregation, feature synthesis, metrics and persistence.

mod checkpoint;
mod client;
mod config;
mod evaluate;
mod federation;
mod metrics;
mod sim;

use std::path::{Path, PathBuf};

use serde::Serialize;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use client::{client_update, ClientState, ClientUpdate, LocalConfig, LocalPkcf};
pub use config::{
    AcmuConfig, Algorithm, BavdSection, ClusterMode, DataConfig, DataSource, MaskModeName, ModelKind, PkcfConfig,
    RunConfig,
};
pub use evaluate::{evaluate, tail_classes, Accuracy};
pub use federation::Federation;
pub use metrics::{metrics_csv, RoundMetrics, CSV_HEADER};
pub use sim::{select_clients, RoundDetail, Simulation, THREADS_ENV};

use crate::blob::encode_tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Write each round's client similarity matrix as CSV.
    pub dump_similarity: bool,
    /// Write each participant's activation map as a tensor blob.
    pub dump_maps: bool,
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub rounds: usize,
    pub final_global_acc: f64,
    pub final_mean_client_acc: f64,
    pub final_tail_acc: f64,
    pub best_global_acc: f64,
    pub first_train_loss: f64,
    pub final_train_loss: f64,
    pub history: Vec<RoundMetrics>,
}

impl Summary {
    pub fn from_history(cfg: &RunConfig, history: &[RoundMetrics]) -> Self {
        let last = history.last();
        Self {
            algorithm: cfg.algorithm,
            seed: cfg.seed,
            rounds: history.len(),
            final_global_acc: last.map_or(0.0, |m| m.global_acc),
            final_mean_client_acc: last.map_or(0.0, |m| m.mean_client_acc),
            final_tail_acc: last.map_or(0.0, |m| m.tail_acc),
            best_global_acc: history.iter().map(|m| m.global_acc).fold(0.0, f64::max),
            first_train_loss: history.first().map_or(0.0, |m| m.mean_train_loss),
            final_train_loss: last.map_or(0.0, |m| m.mean_train_loss),
            history: history.to_vec(),
        }
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn similarity_csv(detail: &RoundDetail) -> Option<String> {
    let sim = detail.similarity.as_ref()?;
    let mut out = String::from("client");
    for id in &detail.participants {
        out.push_str(&format!(",{id}"));
    }
    out.push('\n');
    for (i, id) in detail.participants.iter().enumerate() {
        out.push_str(&id.to_string());
        for v in sim.row(i) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    Some(out)
}

/// Runs `cfg.rounds` rounds (continuing from a checkpoint if asked) and
/// writes `metrics.csv`, `summary.json` and `checkpoint.bin` to the output
/// directory.
pub fn run_training(cfg: &RunConfig, opts: &RunOptions) -> Result<Summary> {
    let out = &opts.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut sim = match &opts.resume {
        Some(path) => load_checkpoint(path, Some(cfg))?,
        None => Simulation::new(cfg.clone())?,
    };
    if opts.dump_similarity || opts.dump_maps {
        let dir = out.join("dumps");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    while sim.rounds_done() < cfg.rounds {
        let m = sim.run_round()?;
        log::info!(
            "round {}: global {:.4} client {:.4} tail {:.4} kappa {}",
            m.round,
            m.global_acc,
            m.mean_client_acc,
            m.tail_acc,
            m.kappa
        );
        let detail = sim.last_round().expect("round just ran");
        if opts.dump_similarity {
            if let Some(csv) = similarity_csv(detail) {
                write(&out.join(format!("dumps/similarity_round{}.csv", m.round)), csv)?;
            }
        }
        if opts.dump_maps {
            for &i in &detail.participants {
                let map = sim.clients()[i].activation_map.map();
                write(&out.join(format!("dumps/map_round{}_client{i}.bin", m.round)), encode_tensor(map))?;
            }
        }
        if cfg.checkpoint_every > 0 && m.round % cfg.checkpoint_every == 0 {
            save_checkpoint(&sim, &out.join(format!("checkpoint_round{}.bin", m.round)))?;
        }
    }
    write(&out.join("metrics.csv"), metrics_csv(sim.history()))?;
    let summary = Summary::from_history(cfg, sim.history());
    let json = serde_json::to_string_pretty(&summary).expect("summary serialises");
    write(&out.join("summary.json"), json + "\n")?;
    save_checkpoint(&sim, &out.join("checkpoint.bin"))?;
    Ok(summary)
}

/// Per-client class histograms for the configured partition.
pub fn partition_report(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    Ok(Federation::build(cfg)?.report())
}
