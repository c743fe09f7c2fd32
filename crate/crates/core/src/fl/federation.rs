use std::fmt::Write as _;

use super::config::{DataSource, ModelKind, RunConfig};
use crate::data::{apply_long_tail_with_head, dirichlet_partition, load_idx, make_synthetic, Dataset, PartitionSpec};
use crate::error::{Error, Result};
use crate::nn::Architecture;
use crate::rng::{derive_seed, Stream};

/// Client training shards plus the shared balanced test set.
#[derive(Debug, Clone, PartialEq)]
pub struct Federation {
    pub arch: Architecture,
    pub clients: Vec<Dataset>,
    pub test: Dataset,
    /// Per-class counts of the long-tailed training pool.
    pub train_counts: Vec<usize>,
}

impl Federation {
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        let d = &cfg.data;
        let (train, test) = match d.source {
            DataSource::Synthetic => {
                let train = make_synthetic(
                    d.classes,
                    d.dim,
                    d.train_per_class,
                    d.spread,
                    derive_seed(cfg.seed, Stream::TrainData, &[]),
                )?;
                let test = make_synthetic(
                    d.classes,
                    d.dim,
                    d.test_per_class,
                    d.spread,
                    derive_seed(cfg.seed, Stream::TestData, &[]),
                )?;
                (train, test)
            }
            DataSource::Idx => {
                let path = |p: &Option<std::path::PathBuf>| p.clone().expect("validated");
                let train = load_idx(&path(&d.train_images), &path(&d.train_labels))?;
                let test = load_idx(&path(&d.test_images), &path(&d.test_labels))?;
                (with_classes(train, d.classes)?, balance(&with_classes(test, d.classes)?, d.test_per_class))
            }
        };
        let counts = train.class_counts();
        let head = d.head_count.unwrap_or_else(|| match d.source {
            DataSource::Synthetic => counts.iter().copied().max().unwrap_or(0),
            DataSource::Idx => counts.iter().copied().min().unwrap_or(0),
        });
        let pool = apply_long_tail_with_head(&train, head, d.imbalance_factor, cfg.seed)?;
        let spec = PartitionSpec {
            n_clients: cfg.clients,
            dirichlet_alpha: d.dirichlet_alpha,
            imbalance_factor: d.imbalance_factor,
            seed: cfg.seed,
        };
        let mut clients = dirichlet_partition(&pool, &spec)?;
        let mut test = test;
        if cfg.model == ModelKind::Tinyconv && train_shape_is_flat(&pool) {
            let arch = cfg.architecture(pool.sample_shape())?;
            let (c, h, w) = match arch {
                Architecture::TinyConv { channels, height, width, .. } => (channels, height, width),
                _ => unreachable!(),
            };
            clients = clients
                .into_iter()
                .map(|ds| ds.reshape_samples(&[c, h, w]))
                .collect::<Result<_>>()?;
            test = test.reshape_samples(&[c, h, w])?;
        }
        let arch = cfg.architecture(test.sample_shape())?;
        Ok(Self {
            arch,
            clients,
            test,
            train_counts: pool.class_counts(),
        })
    }

    /// Per-client class histogram table.
    pub fn report(&self) -> String {
        let k = self.test.classes();
        let mut out = String::from("client,total");
        for c in 0..k {
            let _ = write!(out, ",c{c}");
        }
        out.push('\n');
        let mut row = |name: &str, counts: &[usize]| {
            let _ = write!(out, "{name},{}", counts.iter().sum::<usize>());
            for c in counts {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        };
        for (i, ds) in self.clients.iter().enumerate() {
            row(&i.to_string(), &ds.class_counts());
        }
        row("all", &self.train_counts);
        out
    }
}

fn train_shape_is_flat(ds: &Dataset) -> bool {
    ds.sample_shape().len() == 1
}

fn with_classes(ds: Dataset, classes: usize) -> Result<Dataset> {
    if ds.classes() > classes {
        return Err(Error::Config(format!(
            "data has labels up to {} but config declares {classes} classes",
            ds.classes() - 1
        )));
    }
    Dataset::new(ds.samples().clone(), ds.labels().to_vec(), classes)
}

/// First `min(cap, smallest class)` samples of each class.
fn balance(ds: &Dataset, cap: usize) -> Dataset {
    let by_class = ds.indices_by_class();
    let take = by_class.iter().map(Vec::len).filter(|&n| n > 0).min().unwrap_or(0).min(cap);
    let mut keep: Vec<usize> = by_class.iter().flat_map(|idx| idx.iter().take(take).copied()).collect();
    keep.sort_unstable();
    ds.subset(&keep)
}
