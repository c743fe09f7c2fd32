//! Binary run snapshots.
//!
//! ```text
//! MPFC | version: u32 | config: bytes (TOML) | global: f64s
//!      | bank flag: u32 [bank: bytes]
//!      | clients: u64 x { params flag: u32 [f64s] | map: tensor
//!                         | loss flag: u32 | last loss: f64 | iteration: u64 }
//!      | history: bytes (JSON)
//! ```
//!
//! Client shards are rebuilt from the stored config, so they are not saved.

use std::path::Path;

use super::config::RunConfig;
use super::metrics::RoundMetrics;
use super::sim::Simulation;
use crate::bavd::ActivationMap;
use crate::blob::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::pkcf::GlobalFeatureBank;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MPFC";
const VERSION: u32 = 1;

pub fn encode_checkpoint(sim: &Simulation) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.magic(CHECKPOINT_MAGIC);
    w.u32(VERSION);
    w.bytes(sim.config().to_toml_string().as_bytes());
    w.f64s(&sim.global().flatten());
    match sim.bank() {
        Some(b) => {
            w.u32(1);
            w.bytes(&b.to_blob());
        }
        None => w.u32(0),
    }
    w.u64(sim.clients().len() as u64);
    for c in sim.clients() {
        match &c.params {
            Some(p) => {
                w.u32(1);
                w.f64s(&p.flatten());
            }
            None => w.u32(0),
        }
        let m = &c.activation_map;
        w.tensor(m.map());
        w.u32(u32::from(m.last_loss().is_some()));
        w.f64(m.last_loss().unwrap_or(0.0));
        w.u64(m.iteration() as u64);
    }
    let history = serde_json::to_vec(sim.history()).expect("metrics serialise");
    w.bytes(&history);
    w.finish()
}

/// Settings that may differ between the original and the resumed run.
fn comparable(cfg: &RunConfig) -> RunConfig {
    RunConfig {
        rounds: 0,
        checkpoint_every: 0,
        timing: false,
        ..cfg.clone()
    }
}

/// Rebuilds a simulation from a snapshot. `cfg`, when given, must match the
/// stored config except for `rounds`, `checkpoint_every` and `timing`, which
/// are taken from `cfg`.
pub fn decode_checkpoint(bytes: &[u8], cfg: Option<&RunConfig>) -> Result<Simulation> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Malformed(format!("unsupported checkpoint version {version}")));
    }
    let text = std::str::from_utf8(r.bytes()?).map_err(|e| Error::Malformed(format!("config text: {e}")))?;
    let stored = RunConfig::from_toml_str(text)?;
    let cfg = match cfg {
        Some(c) if comparable(c) != comparable(&stored) => {
            return Err(Error::Config("config does not match the checkpoint".into()));
        }
        Some(c) => c.clone(),
        None => stored,
    };
    let mut sim = Simulation::new(cfg)?;
    let arch = sim.arch();
    let global = ModelParams::from_flat(arch, &r.f64s()?)?;
    let bank = match r.u32()? {
        0 => None,
        _ => Some(GlobalFeatureBank::from_blob(r.bytes()?)?),
    };
    let n = r.usize()?;
    if n != sim.clients().len() {
        return Err(Error::Malformed(format!(
            "checkpoint has {n} clients, config has {}",
            sim.clients().len()
        )));
    }
    let mut clients = sim.clients().to_vec();
    for c in &mut clients {
        c.params = match r.u32()? {
            0 => None,
            _ => Some(ModelParams::from_flat(arch, &r.f64s()?)?),
        };
        let map = r.tensor()?;
        let has_loss = r.u32()? != 0;
        let loss = r.f64()?;
        let iteration = r.usize()?;
        c.activation_map = ActivationMap::from_parts(map, has_loss.then_some(loss), iteration)?;
    }
    let history: Vec<RoundMetrics> =
        serde_json::from_slice(r.bytes()?).map_err(|e| Error::Malformed(format!("metrics history: {e}")))?;
    r.finish()?;
    sim.restore(global, bank, clients, history)?;
    Ok(sim)
}

pub fn save_checkpoint(sim: &Simulation, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(sim)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, cfg: Option<&RunConfig>) -> Result<Simulation> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, cfg)
}
