use std::time::Instant;

use rayon::prelude::*;

use super::client::{client_update, ClientState, ClientUpdate, LocalConfig};
use super::config::{Algorithm, ClusterMode, RunConfig};
use super::evaluate::{evaluate, tail_classes};
use super::federation::Federation;
use super::metrics::RoundMetrics;
use crate::acmu::{cluster_aggregate, global_aggregate, pairwise_similarity, select_clusters, ClusterAssignment, DeltaVector, SimilarityMatrix};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Architecture, ModelParams};
use crate::pkcf::{aggregate_class_gradients, synthesize_global_features, GlobalFeatureBank, SynthesisConfig};
use crate::rng::{derive_seed, stream_rng, Stream};

/// Env var capping the client worker pool.
pub const THREADS_ENV: &str = "MUPFL_THREADS";

/// Uniform draw of `ceil(fraction * n)` distinct clients, sorted.
pub fn select_clients(n: usize, fraction: f64, round: usize, seed: u64) -> Vec<usize> {
    let m = ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1));
    if n == 0 {
        return Vec::new();
    }
    let mut rng = stream_rng(seed, Stream::Selection, &[round as u64]);
    let mut ids = rand::seq::index::sample(&mut rng, n, m).into_vec();
    ids.sort_unstable();
    ids
}

fn build_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a non-negative integer, got {v:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Everything produced by one round besides the metrics.
#[derive(Debug, Clone)]
pub struct RoundDetail {
    pub participants: Vec<usize>,
    pub assignment: ClusterAssignment,
    pub similarity: Option<SimilarityMatrix>,
    /// Post-cluster (personalised) models of the participants.
    pub personalized: Vec<ModelParams>,
}

/// A federated run held in memory: client shards, global model and the
/// feature bank carried into the next round.
pub struct Simulation {
    cfg: RunConfig,
    local: LocalConfig,
    arch: Architecture,
    clients: Vec<ClientState>,
    test: Dataset,
    global: ModelParams,
    bank: Option<GlobalFeatureBank>,
    history: Vec<RoundMetrics>,
    pool: rayon::ThreadPool,
    last: Option<RoundDetail>,
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation")
            .field("arch", &self.arch)
            .field("clients", &self.clients.len())
            .field("rounds_done", &self.rounds_done())
            .finish_non_exhaustive()
    }
}

impl Simulation {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let fed = Federation::build(&cfg)?;
        let global = ModelParams::init(fed.arch, &mut stream_rng(cfg.seed, Stream::Init, &[]));
        Self::from_parts(cfg, fed, global)
    }

    /// Starts from an explicit initial model, e.g. to compare algorithms
    /// from identical weights.
    pub fn from_parts(cfg: RunConfig, fed: Federation, global: ModelParams) -> Result<Self> {
        if global.arch != fed.arch {
            return Err(Error::InvalidArgument(format!(
                "initial model {:?} does not match data {:?}",
                global.arch, fed.arch
            )));
        }
        let map_shape = fed.arch.map_shape();
        let clients = fed
            .clients
            .into_iter()
            .enumerate()
            .map(|(id, ds)| ClientState::new(id, ds, map_shape))
            .collect();
        Ok(Self {
            local: LocalConfig::from_run(&cfg),
            cfg,
            arch: fed.arch,
            clients,
            test: fed.test,
            global,
            bank: None,
            history: Vec::new(),
            pool: build_pool()?,
            last: None,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn global(&self) -> &ModelParams {
        &self.global
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test
    }

    pub fn bank(&self) -> Option<&GlobalFeatureBank> {
        self.bank.as_ref()
    }

    pub fn history(&self) -> &[RoundMetrics] {
        &self.history
    }

    pub fn rounds_done(&self) -> usize {
        self.history.len()
    }

    pub fn last_round(&self) -> Option<&RoundDetail> {
        self.last.as_ref()
    }

    pub(crate) fn restore(
        &mut self,
        global: ModelParams,
        bank: Option<GlobalFeatureBank>,
        clients: Vec<ClientState>,
        history: Vec<RoundMetrics>,
    ) -> Result<()> {
        self.global.check_congruent(&global)?;
        if clients.len() != self.clients.len() {
            return Err(Error::Malformed(format!(
                "checkpoint has {} clients, config has {}",
                clients.len(),
                self.clients.len()
            )));
        }
        self.global = global;
        self.bank = bank;
        self.clients = clients;
        self.history = history;
        self.last = None;
        Ok(())
    }

    /// Runs one round and returns its metrics.
    pub fn run_round(&mut self) -> Result<RoundMetrics> {
        let started = Instant::now();
        let round = self.rounds_done() + 1;
        let seed = self.cfg.seed;
        let selected = select_clients(self.clients.len(), self.cfg.fraction, round, seed);
        let participants: Vec<usize> = selected
            .into_iter()
            .filter(|&i| {
                let empty = self.clients[i].dataset.is_empty();
                if empty {
                    log::warn!("round {round}: client {i} has no data, skipped");
                }
                !empty
            })
            .collect();
        if participants.is_empty() {
            return Err(Error::InvalidArgument(format!("round {round}: no selected client has data")));
        }

        let persistent = self.cfg.persistent_clients;
        let broadcasts: Vec<ModelParams> = participants
            .iter()
            .map(|&i| match (&self.clients[i].params, persistent) {
                (Some(p), true) => p.clone(),
                _ => self.global.clone(),
            })
            .collect();
        let updates: Vec<ClientUpdate> = {
            let (clients, bank, local) = (&self.clients, self.bank.as_ref(), &self.local);
            self.pool.install(|| {
                participants
                    .par_iter()
                    .zip(&broadcasts)
                    .map(|(&i, w)| client_update(&clients[i], w, bank, local, seed, round))
                    .collect::<Result<Vec<_>>>()
            })?
        };
        let sizes: Vec<usize> = updates.iter().map(|u| u.samples).collect();

        let (assignment, similarity, personalized, global) = match self.cfg.algorithm {
            Algorithm::Fedavg => {
                let models: Vec<ModelParams> = updates.iter().map(|u| u.params.clone()).collect();
                let global = global_aggregate(&models, &sizes)?;
                (ClusterAssignment::single(models.len()), None, models, global)
            }
            Algorithm::Mupfl => {
                let (assignment, similarity) = self.cluster(&updates, round)?;
                let deltas: Vec<Vec<f64>> = updates.iter().map(|u| u.delta.clone()).collect();
                let personalized = cluster_aggregate(&broadcasts, &deltas, &assignment.labels)?;
                let global = global_aggregate(&personalized, &sizes)?;
                (assignment, similarity, personalized, global)
            }
        };
        if !global.is_finite() {
            return Err(Error::Malformed(format!("round {round}: global model is not finite")));
        }

        let bank = if self.local.pkcf.is_some() {
            let reports: Vec<_> = updates.iter().filter_map(|u| u.class_grads.clone()).collect();
            let z = aggregate_class_gradients(&reports)?;
            if z.is_empty() {
                None
            } else {
                let p = &self.cfg.pkcf;
                let synth = SynthesisConfig {
                    m: p.m,
                    steps: p.steps,
                    lr: p.lr,
                    seed: derive_seed(seed, Stream::Synthesis, &[round as u64]),
                };
                let mut bank = synthesize_global_features(&z, &global.classifier, self.arch.classes(), &synth)?;
                bank.round = round;
                Some(bank)
            }
        } else {
            None
        };

        let (test, pool) = (&self.test, &self.pool);
        let acc = evaluate(&global, test)?;
        let client_acc: Vec<f64> = pool.install(|| {
            personalized
                .par_iter()
                .map(|p| evaluate(p, test).map(|a| a.overall))
                .collect::<Result<Vec<_>>>()
        })?;
        let tail = tail_classes(self.arch.classes(), self.cfg.data.tail_fraction);
        let metrics = RoundMetrics {
            round,
            global_acc: acc.overall,
            mean_client_acc: client_acc.iter().sum::<f64>() / client_acc.len() as f64,
            tail_acc: acc.mean_over(&tail),
            kappa: assignment.kappa,
            silhouette: assignment.silhouette,
            pkcf_loss: bank.as_ref().map_or(0.0, GlobalFeatureBank::final_loss),
            seconds: if self.cfg.timing { started.elapsed().as_secs_f64() } else { 0.0 },
            mean_train_loss: updates.iter().map(|u| u.mean_loss).sum::<f64>() / updates.len() as f64,
            participants: participants.clone(),
            client_acc,
            per_class_acc: acc.per_class,
            pkcf_class_distance: bank.as_ref().map(|b| b.class_distance.clone()).unwrap_or_default(),
        };

        for ((&i, update), model) in participants.iter().zip(updates).zip(&personalized) {
            let state = &mut self.clients[i];
            state.activation_map = update.activation_map;
            if persistent {
                state.params = Some(model.clone());
            }
        }
        self.global = global;
        self.bank = bank;
        self.history.push(metrics.clone());
        self.last = Some(RoundDetail {
            participants,
            assignment,
            similarity,
            personalized,
        });
        Ok(metrics)
    }

    fn cluster(&self, updates: &[ClientUpdate], round: usize) -> Result<(ClusterAssignment, Option<SimilarityMatrix>)> {
        let n = updates.len();
        let a = &self.cfg.acmu;
        match a.mode {
            ClusterMode::Single => return Ok((ClusterAssignment::single(n), None)),
            ClusterMode::Off => return Ok((ClusterAssignment::singletons(n), None)),
            ClusterMode::Adaptive => {}
        }
        if n < 2 {
            return Ok((ClusterAssignment::single(n), None));
        }
        let vectors: Vec<DeltaVector> = updates
            .iter()
            .map(|u| DeltaVector {
                client_id: u.client_id,
                values: u.delta.clone(),
                map_values: u.activation_map.map().data().to_vec(),
            })
            .collect();
        let sim = pairwise_similarity(&vectors, a.sim_mix)?;
        if n < 3 {
            return Ok((ClusterAssignment::single(n), Some(sim)));
        }
        // candidate counts beyond n - 1 cannot be scored
        let hi = a.kappa_max.min(n - 1);
        let lo = a.kappa_min.min(hi);
        let seed = derive_seed(self.cfg.seed, Stream::Clustering, &[round as u64]);
        let assignment = select_clusters(&sim, lo, hi, seed)?;
        Ok((assignment, Some(sim)))
    }
}
