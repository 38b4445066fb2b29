//! Federation data: the synthetic binary-classification federation, MNIST
//! ingestion (IDX format) with label-swap heterogeneity for the second client
//! group, and per-client train/validation/test splits.

use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A labeled sample matrix. Feature storage is shared so that large test
/// sets can be referenced by many clients without duplication.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientDataset {
    features: Arc<Array2<f64>>,
    labels: Arc<Vec<usize>>,
}

impl ClientDataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows vs {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        Ok(Self { features: Arc::new(features), labels: Arc::new(labels) })
    }

    pub fn from_shared(features: Arc<Array2<f64>>, labels: Arc<Vec<usize>>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows vs {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn empty(dim: usize) -> Self {
        Self { features: Arc::new(Array2::zeros((0, dim))), labels: Arc::new(Vec::new()) }
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// One client's train/validation/test splits and its group identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientData {
    pub group_id: u8,
    pub train: ClientDataset,
    pub val: ClientDataset,
    pub test: ClientDataset,
}

/// The full federation: per-client datasets plus the target importance
/// vector `alpha` (proportional to training-set sizes).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FederationData {
    pub clients: Vec<ClientData>,
    pub target_weights: Vec<f64>,
    pub n_classes: usize,
    pub dim: usize,
}

impl FederationData {
    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn alpha_from_sizes(sizes: &[usize]) -> Vec<f64> {
    let total: usize = sizes.iter().sum();
    sizes.iter().map(|&s| s as f64 / total as f64).collect()
}

/// Generates the synthetic federation:
///
/// 1. group identity sampled Bernoulli(1/2) per client;
/// 2. ground-truth parameters `w* ~ N(0, I_d)`;
/// 3. inputs `x ~ N(0, I_d)`;
/// 4. group-1 labels `~ Bernoulli(sigmoid(<w*, x>))`;
/// 5. group-2 labels `~ Bernoulli(0.8 s + 0.2 (1 - s))` with `s = sigmoid(<w*, x>)`.
///
/// Per client, 80% of the samples form the training pool (of which 20% are
/// held out for validation) and 20% the test set.
pub fn generate_synthetic(
    n_clients: usize,
    d: usize,
    samples_per_client: usize,
    seed: u64,
) -> Result<FederationData> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let groups: Vec<u8> = (0..n_clients).map(|_| if rng.gen::<bool>() { 2 } else { 1 }).collect();
    synthetic_for_group_assignment(&groups, d, samples_per_client, seed.wrapping_add(1), None)
}

/// Same generator, but with the group partition supplied by the caller
/// (e.g. from a [`crate::availability::PopulationSpec`]) instead of sampled.
pub fn generate_synthetic_for_groups(
    groups: &[u8],
    d: usize,
    samples_per_client: usize,
    seed: u64,
) -> Result<FederationData> {
    synthetic_for_group_assignment(groups, d, samples_per_client, seed, None)
}

fn synthetic_for_group_assignment(
    groups: &[u8],
    d: usize,
    samples_per_client: usize,
    seed: u64,
    w_star_override: Option<Array1<f64>>,
) -> Result<FederationData> {
    if groups.is_empty() {
        return Err(Error::Parameter("at least one client required".into()));
    }
    if d == 0 || samples_per_client == 0 {
        return Err(Error::Parameter("d and samples_per_client must be >= 1".into()));
    }
    if groups.iter().any(|&g| g != 1 && g != 2) {
        return Err(Error::Parameter("group ids must be 1 or 2".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let w_star = match w_star_override {
        Some(w) => w,
        None => Array1::from_iter((0..d).map(|_| StandardNormal.sample(&mut rng))),
    };

    let mut clients = Vec::with_capacity(groups.len());
    let mut train_sizes = Vec::with_capacity(groups.len());
    for &group in groups {
        let mut features = Array2::zeros((samples_per_client, d));
        let mut labels = vec![0usize; samples_per_client];
        for j in 0..samples_per_client {
            let mut dot = 0.0;
            for c in 0..d {
                let x: f64 = StandardNormal.sample(&mut rng);
                features[(j, c)] = x;
                dot += w_star[c] * x;
            }
            let s = sigmoid(dot);
            let p = if group == 1 { s } else { 0.8 * s + 0.2 * (1.0 - s) };
            labels[j] = (rng.gen::<f64>() < p) as usize;
        }
        let n_test = samples_per_client / 5;
        let n_pool = samples_per_client - n_test;
        let n_val = n_pool / 5;
        let n_train = n_pool - n_val;
        let slice = |range: std::ops::Range<usize>| -> Result<ClientDataset> {
            ClientDataset::new(
                features.slice(ndarray::s![range.clone(), ..]).to_owned(),
                labels[range].to_vec(),
            )
        };
        train_sizes.push(n_train);
        clients.push(ClientData {
            group_id: group,
            train: slice(0..n_train)?,
            val: slice(n_train..n_pool)?,
            test: slice(n_pool..samples_per_client)?,
        });
    }
    Ok(FederationData {
        clients,
        target_weights: alpha_from_sizes(&train_sizes),
        n_classes: 2,
        dim: d,
    })
}

/// Raw MNIST arrays with the original train/test split preserved.
#[derive(Debug, Clone)]
pub struct MnistData {
    pub train_images: Array2<f64>,
    pub train_labels: Vec<usize>,
    pub test_images: Array2<f64>,
    pub test_labels: Vec<usize>,
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Format { offset, message: "truncated header".into() });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Parses a big-endian IDX image file (`magic 0x00000803`) into an
/// `n x (rows*cols)` matrix with pixels scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Array2<f64>> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("expected image magic {IDX_IMAGES_MAGIC:#010x}, found {magic:#010x}"),
        });
    }
    let count = read_be_u32(bytes, 4)? as usize;
    let rows = read_be_u32(bytes, 8)? as usize;
    let cols = read_be_u32(bytes, 12)? as usize;
    let pixels = count * rows * cols;
    if bytes.len() < 16 + pixels {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!("expected {} pixel bytes, found {}", pixels, bytes.len() - 16),
        });
    }
    let data: Vec<f64> = bytes[16..16 + pixels].iter().map(|&b| b as f64 / 255.0).collect();
    Array2::from_shape_vec((count, rows * cols), data)
        .map_err(|e| Error::Shape(e.to_string()))
}

/// Parses a big-endian IDX label file (`magic 0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("expected label magic {IDX_LABELS_MAGIC:#010x}, found {magic:#010x}"),
        });
    }
    let count = read_be_u32(bytes, 4)? as usize;
    if bytes.len() < 8 + count {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!("expected {} label bytes, found {}", count, bytes.len() - 8),
        });
    }
    Ok(bytes[8..8 + count].iter().map(|&b| b as usize).collect())
}

/// Loads the four canonical MNIST IDX files from `dir`
/// (`train-images-idx3-ubyte`, `train-labels-idx1-ubyte`,
/// `t10k-images-idx3-ubyte`, `t10k-labels-idx1-ubyte`).
pub fn load_mnist(dir: &Path) -> Result<MnistData> {
    let read = |name: &str| -> Result<Vec<u8>> { Ok(std::fs::read(dir.join(name))?) };
    let train_images = parse_idx_images(&read("train-images-idx3-ubyte")?)?;
    let train_labels = parse_idx_labels(&read("train-labels-idx1-ubyte")?)?;
    let test_images = parse_idx_images(&read("t10k-images-idx3-ubyte")?)?;
    let test_labels = parse_idx_labels(&read("t10k-labels-idx1-ubyte")?)?;
    for (images, labels, split) in
        [(&train_images, &train_labels, "train"), (&test_images, &test_labels, "test")]
    {
        if images.nrows() != labels.len() {
            return Err(Error::Format {
                offset: 0,
                message: format!(
                    "{split}: {} images but {} labels",
                    images.nrows(),
                    labels.len()
                ),
            });
        }
    }
    Ok(MnistData { train_images, train_labels, test_images, test_labels })
}

/// Applies the two label-pair swaps in place. Involutive.
pub fn swap_labels(labels: &mut [usize], pairs: [(usize, usize); 2]) {
    for label in labels.iter_mut() {
        for (a, b) in pairs {
            if *label == a {
                *label = b;
                break;
            } else if *label == b {
                *label = a;
                break;
            }
        }
    }
}

fn draw_swap_pairs(rng: &mut ChaCha12Rng, n_classes: usize) -> [(usize, usize); 2] {
    let chosen = rand::seq::index::sample(rng, n_classes, 4).into_vec();
    [(chosen[0], chosen[1]), (chosen[2], chosen[3])]
}

/// Partitions the MNIST training data into disjoint, (almost) equal shards,
/// one per client, with the supplied group assignment. Group-2 clients have
/// the same two randomly chosen label pairs swapped in their training,
/// validation, and (shared) test labels. 20% of each shard is held out for
/// validation.
pub fn make_mnist_federation(
    mnist: &MnistData,
    groups: &[u8],
    seed: u64,
) -> Result<(FederationData, [(usize, usize); 2])> {
    let n_clients = groups.len();
    if n_clients < 2 {
        return Err(Error::Parameter("at least two clients required".into()));
    }
    if n_clients > mnist.train_images.nrows() {
        return Err(Error::Parameter(format!(
            "{n_clients} clients exceed {} training samples",
            mnist.train_images.nrows()
        )));
    }
    if groups.iter().any(|&g| g != 1 && g != 2) {
        return Err(Error::Parameter("group ids must be 1 or 2".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let pairs = draw_swap_pairs(&mut rng, 10);

    let n_train = mnist.train_images.nrows();
    let mut order: Vec<usize> = (0..n_train).collect();
    for i in (1..n_train).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }

    let test_features = Arc::new(mnist.test_images.clone());
    let test_labels_plain = Arc::new(mnist.test_labels.clone());
    let test_labels_swapped = Arc::new({
        let mut l = mnist.test_labels.clone();
        swap_labels(&mut l, pairs);
        l
    });

    // shard sizes differ by at most one
    let base = n_train / n_clients;
    let extra = n_train % n_clients;
    let mut clients = Vec::with_capacity(n_clients);
    let mut train_sizes = Vec::with_capacity(n_clients);
    let mut offset = 0usize;
    for (k, &group) in groups.iter().enumerate() {
        let size = base + (k < extra) as usize;
        let shard = &order[offset..offset + size];
        offset += size;

        let mut features = Array2::zeros((size, mnist.train_images.ncols()));
        let mut labels = Vec::with_capacity(size);
        for (row, &idx) in shard.iter().enumerate() {
            features.row_mut(row).assign(&mnist.train_images.row(idx));
            labels.push(mnist.train_labels[idx]);
        }
        if group == 2 {
            swap_labels(&mut labels, pairs);
        }
        let n_val = size / 5;
        let n_tr = size - n_val;
        let train = ClientDataset::new(
            features.slice(ndarray::s![0..n_tr, ..]).to_owned(),
            labels[0..n_tr].to_vec(),
        )?;
        let val = ClientDataset::new(
            features.slice(ndarray::s![n_tr.., ..]).to_owned(),
            labels[n_tr..].to_vec(),
        )?;
        let test_labels =
            if group == 2 { test_labels_swapped.clone() } else { test_labels_plain.clone() };
        let test = ClientDataset::from_shared(test_features.clone(), test_labels)?;
        train_sizes.push(n_tr);
        clients.push(ClientData { group_id: group, train, val, test });
    }
    let federation = FederationData {
        clients,
        target_weights: alpha_from_sizes(&train_sizes),
        n_classes: 10,
        dim: mnist.train_images.ncols(),
    };
    Ok((federation, pairs))
}
