//! Dataset generation, IDX ingestion, and client partitioning.
//!
//! Synthetic data is Gaussian blobs with one centroid per class; real
//! image data can be read from IDX files (big-endian magic + dims, raw
//! unsigned bytes). Partitioning supports the iid scheme (every client
//! sees every label uniformly) and the label-restricted scheme where
//! client `i` holds exactly `counts[i]` distinct labels, assigned
//! round-robin first so that every label is covered, then filled from a
//! seeded stream.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LabeledDataset, ModelError};
use crate::seed::{self, Domain};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("{path}: file truncated")]
    Truncated { path: String },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label}: need {needed} samples, only {available} available")]
    InsufficientSamples {
        label: usize,
        needed: usize,
        available: usize,
    },
    #[error("cannot cover {labels} labels with {slots} label slots")]
    CoverageImpossible { labels: usize, slots: usize },
    #[error(transparent)]
    Dataset(#[from] ModelError),
}

/// Gaussian-blob dataset description: one cluster per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    pub cluster_spread: f64,
    pub samples: usize,
    pub seed: u64,
}

/// How samples are dealt to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PartitionScheme {
    Iid,
    LabelsPerClient { counts: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub clients: usize,
    pub samples_per_client: usize,
    pub seed: u64,
}

/// Class centroid on a scaled simplex (axis-aligned unit vectors) when
/// the input dimension allows, otherwise on an integer grid.
fn centroid(class: usize, num_classes: usize, input_dim: usize) -> Vec<f64> {
    let mut point = vec![0.0; input_dim];
    if input_dim >= num_classes {
        point[class] = 1.0;
    } else {
        // Digits of `class` in the smallest base whose input_dim-cube
        // holds all classes; pairwise distinct by construction.
        let mut side = 2usize;
        while side.pow(input_dim as u32) < num_classes {
            side += 1;
        }
        let mut rest = class;
        for slot in point.iter_mut() {
            *slot = (rest % side) as f64;
            rest /= side;
        }
    }
    point
}

/// Deterministic Gaussian clusters, one centroid per class, classes
/// balanced to within one sample.
pub fn generate_blobs(spec: &SyntheticSpec) -> Result<LabeledDataset, DataError> {
    if spec.num_classes < 2 {
        return Err(DataError::InvalidSpec("num_classes must be >= 2".into()));
    }
    if spec.input_dim == 0 {
        return Err(DataError::InvalidSpec("input_dim must be positive".into()));
    }
    if spec.samples == 0 {
        return Err(DataError::InvalidSpec("samples must be positive".into()));
    }
    if !spec.cluster_spread.is_finite() || spec.cluster_spread < 0.0 {
        return Err(DataError::InvalidSpec(
            "cluster_spread must be finite and >= 0".into(),
        ));
    }

    let base = spec.samples / spec.num_classes;
    let extra = spec.samples % spec.num_classes;
    let mut features = Vec::with_capacity(spec.samples * spec.input_dim);
    let mut labels = Vec::with_capacity(spec.samples);

    for class in 0..spec.num_classes {
        let count = base + usize::from(class < extra);
        let center = centroid(class, spec.num_classes, spec.input_dim);
        let mut rng = seed::stream(spec.seed, Domain::DataGen, &[class as u64]);
        for _ in 0..count {
            for &c in &center {
                let noise: f64 = StandardNormal.sample(&mut rng);
                features.push(c + spec.cluster_spread * noise);
            }
            labels.push(class);
        }
    }

    Ok(LabeledDataset::new(features, spec.input_dim, labels)?)
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
    Ok(bytes)
}

fn read_u32(cursor: &mut std::io::Cursor<Vec<u8>>, path: &Path) -> Result<u32, DataError> {
    cursor
        .read_u32::<BigEndian>()
        .map_err(|_| DataError::Truncated {
            path: path.display().to_string(),
        })
}

/// Loads an IDX image/label file pair; pixel bytes are scaled to [0, 1].
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset, DataError> {
    let mut images = std::io::Cursor::new(read_file(images_path)?);
    let magic = read_u32(&mut images, images_path)?;
    if magic != IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            path: images_path.display().to_string(),
            found: magic,
            expected: IMAGES_MAGIC,
        });
    }
    let count = read_u32(&mut images, images_path)? as usize;
    let rows = read_u32(&mut images, images_path)? as usize;
    let cols = read_u32(&mut images, images_path)? as usize;
    let mut pixels = vec![0u8; count * rows * cols];
    images
        .read_exact(&mut pixels)
        .map_err(|_| DataError::Truncated {
            path: images_path.display().to_string(),
        })?;

    let mut labels = std::io::Cursor::new(read_file(labels_path)?);
    let magic = read_u32(&mut labels, labels_path)?;
    if magic != LABELS_MAGIC {
        return Err(DataError::BadMagic {
            path: labels_path.display().to_string(),
            found: magic,
            expected: LABELS_MAGIC,
        });
    }
    let label_count = read_u32(&mut labels, labels_path)? as usize;
    let mut label_bytes = vec![0u8; label_count];
    labels
        .read_exact(&mut label_bytes)
        .map_err(|_| DataError::Truncated {
            path: labels_path.display().to_string(),
        })?;

    if count != label_count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: label_count,
        });
    }

    let features: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    Ok(LabeledDataset::new(features, rows * cols, labels)?)
}

/// Sorted distinct labels and per-label sample index pools, in data order.
fn label_pools(data: &LabeledDataset) -> BTreeMap<usize, Vec<usize>> {
    let mut pools: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (index, &label) in data.labels().iter().enumerate() {
        pools.entry(label).or_default().push(index);
    }
    pools
}

/// Per-client label sets for the label-restricted scheme: round-robin
/// coverage of every label first, then seeded uniform fill.
fn assign_labels(
    labels: &[usize],
    counts: &[usize],
    spec_seed: u64,
) -> Result<Vec<Vec<usize>>, DataError> {
    let total_slots: usize = counts.iter().sum();
    if total_slots < labels.len() {
        return Err(DataError::CoverageImpossible {
            labels: labels.len(),
            slots: total_slots,
        });
    }

    let mut sets: Vec<Vec<usize>> = vec![Vec::new(); counts.len()];
    let mut next_unassigned = 0;
    while next_unassigned < labels.len() {
        let mut progressed = false;
        for (client, set) in sets.iter_mut().enumerate() {
            if next_unassigned >= labels.len() {
                break;
            }
            if set.len() < counts[client] {
                set.push(labels[next_unassigned]);
                next_unassigned += 1;
                progressed = true;
            }
        }
        if !progressed {
            // total_slots >= labels.len() makes this unreachable.
            return Err(DataError::CoverageImpossible {
                labels: labels.len(),
                slots: total_slots,
            });
        }
    }

    // Fill remaining slots uniformly from labels the client does not hold.
    // Stream namespace: part 1 = fill, keyed by client (pool shuffles use
    // part 0, keyed by label).
    for (client, set) in sets.iter_mut().enumerate() {
        if counts[client] > labels.len() {
            return Err(DataError::InvalidSpec(format!(
                "client {client} wants {} labels but only {} exist",
                counts[client],
                labels.len()
            )));
        }
        let mut rng = seed::stream(spec_seed, Domain::Partition, &[1, client as u64]);
        while set.len() < counts[client] {
            let candidates: Vec<usize> = labels
                .iter()
                .copied()
                .filter(|l| !set.contains(l))
                .collect();
            let pick = candidates[rng.random_range(0..candidates.len())];
            set.push(pick);
        }
        set.sort_unstable();
    }
    Ok(sets)
}

/// Quota of samples per held label: equal split of `samples_per_client`,
/// remainder on the lowest labels.
fn per_label_quota(samples_per_client: usize, held: &[usize]) -> Vec<(usize, usize)> {
    let base = samples_per_client / held.len();
    let extra = samples_per_client % held.len();
    held.iter()
        .enumerate()
        .map(|(pos, &label)| (label, base + usize::from(pos < extra)))
        .collect()
}

/// Splits `data` into one disjoint dataset per client.
pub fn partition(
    data: &LabeledDataset,
    spec: &PartitionSpec,
) -> Result<Vec<LabeledDataset>, DataError> {
    if spec.clients == 0 {
        return Err(DataError::InvalidSpec("clients must be positive".into()));
    }
    if spec.samples_per_client == 0 {
        return Err(DataError::InvalidSpec(
            "samples_per_client must be positive".into(),
        ));
    }

    let mut pools = label_pools(data);
    let labels: Vec<usize> = pools.keys().copied().collect();
    if labels.is_empty() {
        return Err(DataError::InvalidSpec("source dataset is empty".into()));
    }
    for (&label, pool) in pools.iter_mut() {
        pool.shuffle(&mut seed::stream(
            spec.seed,
            Domain::Partition,
            &[0, label as u64],
        ));
    }

    let assignments: Vec<Vec<(usize, usize)>> = match &spec.scheme {
        PartitionScheme::Iid => {
            let l = labels.len();
            let base = spec.samples_per_client / l;
            let extra = spec.samples_per_client % l;
            (0..spec.clients)
                .map(|client| {
                    labels
                        .iter()
                        .enumerate()
                        .map(|(pos, &label)| {
                            // Rotate the +1 labels by client so per-label
                            // demand stays balanced.
                            let bonus = usize::from((pos + l - client % l) % l < extra);
                            (label, base + bonus)
                        })
                        .collect()
                })
                .collect()
        }
        PartitionScheme::LabelsPerClient { counts } => {
            if counts.len() != spec.clients {
                return Err(DataError::InvalidSpec(format!(
                    "{} label counts for {} clients",
                    counts.len(),
                    spec.clients
                )));
            }
            if counts.contains(&0) {
                return Err(DataError::InvalidSpec(
                    "label counts must be positive".into(),
                ));
            }
            let sets = assign_labels(&labels, counts, spec.seed)?;
            sets.iter()
                .map(|held| per_label_quota(spec.samples_per_client, held))
                .collect()
        }
    };

    let mut cursors: BTreeMap<usize, usize> = labels.iter().map(|&l| (l, 0)).collect();
    let mut clients = Vec::with_capacity(spec.clients);
    for quotas in &assignments {
        let mut indices = Vec::with_capacity(spec.samples_per_client);
        for &(label, quota) in quotas {
            let pool = &pools[&label];
            let cursor = cursors.get_mut(&label).expect("label exists");
            if *cursor + quota > pool.len() {
                return Err(DataError::InsufficientSamples {
                    label,
                    needed: *cursor + quota,
                    available: pool.len(),
                });
            }
            indices.extend_from_slice(&pool[*cursor..*cursor + quota]);
            *cursor += quota;
        }
        indices.sort_unstable();
        clients.push(data.subset(&indices));
    }
    Ok(clients)
}

/// Number of distinct labels in a dataset; handy for conformance checks.
pub fn distinct_labels(data: &LabeledDataset) -> Vec<usize> {
    let mut labels: Vec<usize> = data.labels().to_vec();
    labels.sort_unstable();
    labels.dedup();
    labels
}
