use rand::seq::SliceRandom;

use super::config::{Algorithm, RunConfig};
use crate::acmu::delta_weights;
use crate::bavd::{ActivationMap, BavdConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{backward_masked, sgd_step_in_place, ModelParams};
use crate::pkcf::{class_feature_gradients, fine_tune_classifier, sample_per_class, ClassFeatureGradients, GlobalFeatureBank};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: usize,
    pub dataset: Dataset,
    /// Personalised model carried between rounds in persistent mode.
    pub params: Option<ModelParams>,
    pub activation_map: ActivationMap,
}

impl ClientState {
    pub fn new(id: usize, dataset: Dataset, map_shape: (usize, usize)) -> Self {
        Self {
            id,
            dataset,
            params: None,
            activation_map: ActivationMap::new(map_shape.0, map_shape.1),
        }
    }
}

/// Knobs for one client's local work, extracted from [`RunConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct LocalConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub decay_rate: f64,
    pub decay_every: usize,
    pub bavd: BavdConfig,
    /// Accumulate the activation map even when masking is off.
    pub track_map: bool,
    pub pkcf: Option<LocalPkcf>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalPkcf {
    pub tau: usize,
    pub fine_tune_lr: f64,
    pub sample_cap: usize,
}

impl LocalConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        let mupfl = cfg.algorithm == Algorithm::Mupfl;
        let mut bavd = cfg.bavd.to_config();
        bavd.enabled &= mupfl;
        Self {
            epochs: cfg.local_epochs,
            batch_size: cfg.batch_size,
            lr: cfg.lr,
            decay_rate: cfg.lr_decay_rate,
            decay_every: cfg.lr_decay_every,
            bavd,
            track_map: mupfl,
            pkcf: (mupfl && cfg.pkcf.enabled).then_some(LocalPkcf {
                tau: cfg.pkcf.tau,
                fine_tune_lr: cfg.pkcf.fine_tune_lr.unwrap_or(cfg.lr),
                sample_cap: cfg.pkcf.sample_cap,
            }),
        }
    }

    /// Learning rate for local epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * (1.0 - self.decay_rate).powi((epoch / self.decay_every.max(1)) as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub params: ModelParams,
    /// `flatten(params) - flatten(broadcast)`.
    pub delta: Vec<f64>,
    pub activation_map: ActivationMap,
    pub class_grads: Option<ClassFeatureGradients>,
    /// Mean minibatch loss over the local epochs (0 when no step ran).
    pub mean_loss: f64,
    pub samples: usize,
}

/// One client's round: optional classifier pre-training on the feature bank,
/// `epochs` of shuffled minibatch SGD with activation-map tracking and BAVD
/// masking, then the per-class gradient report.
pub fn client_update(
    state: &ClientState,
    broadcast: &ModelParams,
    bank: Option<&GlobalFeatureBank>,
    cfg: &LocalConfig,
    seed: u64,
    round: usize,
) -> Result<ClientUpdate> {
    let ds = &state.dataset;
    if ds.is_empty() {
        return Err(Error::InvalidArgument(format!("client {} has no local data", state.id)));
    }
    let key = [round as u64, state.id as u64];
    let mut params = broadcast.clone();
    if let (Some(p), Some(bank)) = (&cfg.pkcf, bank) {
        params = fine_tune_classifier(&params, bank, p.tau, p.fine_tune_lr)?;
    }

    let mut map = state.activation_map.clone();
    if cfg.bavd.reset_each_round {
        map.reset();
    }
    let mut rng = stream_rng(seed, Stream::LocalShuffle, &key);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let (mut loss_sum, mut steps) = (0.0, 0usize);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = ds.samples().select_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| ds.labels()[i]).collect();
            let mask = if cfg.bavd.enabled { map.mask(cfg.bavd.mode) } else { None };
            let out = backward_masked(&params, &batch, &labels, mask.as_ref())?;
            if !out.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    round,
                    client: state.id,
                });
            }
            if cfg.track_map {
                map.observe(&out.hidden, out.loss, cfg.bavd.sign_convention)?;
            }
            sgd_step_in_place(&mut params, &out.grads, lr)?;
            loss_sum += out.loss;
            steps += 1;
        }
    }
    if !params.is_finite() {
        return Err(Error::NonFiniteLoss {
            round,
            client: state.id,
        });
    }

    let class_grads = match &cfg.pkcf {
        Some(p) => {
            let mut rng = stream_rng(seed, Stream::PkcfSample, &key);
            let subset = sample_per_class(ds, p.sample_cap, &mut rng);
            Some(class_feature_gradients(&params, &subset, state.id)?)
        }
        None => None,
    };

    Ok(ClientUpdate {
        client_id: state.id,
        delta: delta_weights(&params, broadcast)?,
        params,
        activation_map: map,
        class_grads,
        mean_loss: if steps > 0 { loss_sum / steps as f64 } else { 0.0 },
        samples: ds.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic;
    use crate::nn::Architecture;
    use crate::rng::rng_from_seed;

    fn setup() -> (ClientState, ModelParams, LocalConfig) {
        let arch = Architecture::Mlp { input: 4, hidden: 6, classes: 3 };
        let ds = make_synthetic(3, 4, 6, 0.8, 3).unwrap();
        let state = ClientState::new(2, ds, arch.map_shape());
        let w = ModelParams::init(arch, &mut rng_from_seed(1));
        let cfg = LocalConfig::from_run(&RunConfig {
            local_epochs: 2,
            batch_size: 5,
            lr: 0.1,
            ..RunConfig::default()
        });
        (state, w, cfg)
    }

    #[test]
    fn zero_epochs_is_identity() {
        let (state, w, mut cfg) = setup();
        cfg.epochs = 0;
        let up = client_update(&state, &w, None, &cfg, 0, 1).unwrap();
        assert_eq!(up.params, w);
        assert!(up.delta.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn zero_lr_still_accumulates_map() {
        let (state, w, mut cfg) = setup();
        cfg.lr = 0.0;
        let up = client_update(&state, &w, None, &cfg, 0, 1).unwrap();
        assert!(up.delta.iter().all(|&d| d == 0.0));
        // 18 samples in batches of 5 -> 4 batches per epoch
        assert_eq!(up.activation_map.iteration(), 8);
        assert!(up.activation_map.map().data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn reports_every_local_class() {
        let (state, w, cfg) = setup();
        let up = client_update(&state, &w, None, &cfg, 0, 1).unwrap();
        let g = up.class_grads.unwrap();
        assert_eq!(g.per_class.len(), 3);
        assert_eq!(g.client_id, 2);
    }

    #[test]
    fn empty_dataset_rejected() {
        let (mut state, w, cfg) = setup();
        state.dataset = state.dataset.subset(&[]);
        assert!(client_update(&state, &w, None, &cfg, 0, 1).is_err());
    }

    #[test]
    fn lr_schedule() {
        let (_, _, cfg) = setup();
        assert_eq!(cfg.lr_at(0), 0.1);
        assert_eq!(cfg.lr_at(2), 0.1);
        assert!((cfg.lr_at(3) - 0.1 * 0.995).abs() < 1e-15);
        assert!((cfg.lr_at(6) - 0.1 * 0.995 * 0.995).abs() < 1e-15);
    }
}
