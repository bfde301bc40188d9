//! Dataset ingestion and the label-noise quality model.
//!
//! Datasets are parsed from their standard binary formats (IDX for MNIST,
//! record files for CIFAR-10), split into N+1 disjoint IID shards (one per
//! participant plus a held-out test shard), and graded in quality by
//! resampling labels: participant n keeps a label with probability
//! 1 − (N−n)/(N−1), so participant 1 holds fully scrambled labels and
//! participant N holds clean ones.

use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::rng::{self, tag};

pub const IDX_MAGIC_LABELS: u32 = 0x0000_0801;
pub const IDX_MAGIC_IMAGES: u32 = 0x0000_0803;

/// Decoded contents of one IDX file.
#[derive(Debug, Clone, PartialEq)]
pub enum IdxContent {
    Labels(Vec<u8>),
    Images {
        count: usize,
        rows: usize,
        cols: usize,
        /// Raw pixel bytes, length `count * rows * cols`.
        pixels: Vec<u8>,
    },
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Truncated {
            expected: end,
            found: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parse an IDX byte stream (big-endian magic, one size per dimension, raw
/// unsigned payload bytes).
pub fn parse_idx(bytes: &[u8]) -> Result<IdxContent> {
    let magic = read_be_u32(bytes, 0)?;
    match magic {
        IDX_MAGIC_LABELS => {
            let count = read_be_u32(bytes, 4)? as usize;
            let expected = 8 + count;
            if bytes.len() < expected {
                return Err(Error::Truncated {
                    expected,
                    found: bytes.len(),
                });
            }
            Ok(IdxContent::Labels(bytes[8..8 + count].to_vec()))
        }
        IDX_MAGIC_IMAGES => {
            let count = read_be_u32(bytes, 4)? as usize;
            let rows = read_be_u32(bytes, 8)? as usize;
            let cols = read_be_u32(bytes, 12)? as usize;
            let payload = count
                .checked_mul(rows)
                .and_then(|v| v.checked_mul(cols))
                .ok_or_else(|| Error::config("image dimensions overflow"))?;
            let expected = 16 + payload;
            if bytes.len() < expected {
                return Err(Error::Truncated {
                    expected,
                    found: bytes.len(),
                });
            }
            Ok(IdxContent::Images {
                count,
                rows,
                cols,
                pixels: bytes[16..16 + payload].to_vec(),
            })
        }
        other => Err(Error::Format {
            expected: format!("IDX magic {IDX_MAGIC_LABELS:#010x} (labels) or {IDX_MAGIC_IMAGES:#010x} (images)"),
            found: format!("{other:#010x}"),
        }),
    }
}

/// Encode labels as an IDX byte stream.
pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_MAGIC_LABELS.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Encode images as an IDX byte stream. `pixels` must hold
/// `count * rows * cols` bytes.
pub fn encode_idx_images(count: usize, rows: usize, cols: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != count * rows * cols {
        return Err(Error::config(format!(
            "pixel payload {} does not match {count}x{rows}x{cols}",
            pixels.len()
        )));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IDX_MAGIC_IMAGES.to_be_bytes());
    out.extend_from_slice(&(count as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    out.extend_from_slice(pixels);
    Ok(out)
}

/// Hand-encoded IDX streams small enough to verify byte by byte. Written by
/// the CLI's `emit-fixtures` subcommand and decoded in tests.
pub mod fixtures {
    use super::*;

    /// One-label stream: magic 0x00000801, count 1, payload `[7]`.
    pub fn label_stream() -> Vec<u8> {
        encode_idx_labels(&[7])
    }

    /// One 2x2 image: magic 0x00000803, dims 1x2x2, payload `[0,255,0,255]`.
    pub fn image_stream() -> Vec<u8> {
        encode_idx_images(1, 2, 2, &[0, 255, 0, 255]).expect("fixture dims")
    }
}

/// A labeled dataset view. Feature rows live in a shared bank so that shards
/// never copy pixels; labels are owned because the quality model rewrites
/// them per shard.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    bank: Arc<Array2<f64>>,
    indices: Vec<u32>,
    labels: Vec<u8>,
    classes: usize,
}

impl LabeledDataset {
    /// Build a dataset owning `features` (rows = examples, already scaled to
    /// `[0,1]`).
    pub fn from_features(features: Array2<f64>, labels: Vec<u8>, classes: usize) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::domain(format!(
                "{} feature rows vs {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if classes == 0 {
            return Err(Error::domain("class count must be positive"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::domain(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let indices = (0..features.nrows() as u32).collect();
        Ok(Self {
            bank: Arc::new(features),
            indices,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.bank.ncols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn feature(&self, i: usize) -> Array1<f64> {
        self.bank.row(self.indices[i] as usize).to_owned()
    }

    /// Copy the examples at `positions` (view-local) into a dense batch.
    pub fn gather(&self, positions: &[usize]) -> (Array2<f64>, Vec<usize>) {
        let dim = self.feature_dim();
        let mut features = Array2::zeros((positions.len(), dim));
        let mut labels = Vec::with_capacity(positions.len());
        for (row, &p) in positions.iter().enumerate() {
            features
                .row_mut(row)
                .assign(&self.bank.row(self.indices[p] as usize));
            labels.push(self.labels[p] as usize);
        }
        (features, labels)
    }

    /// A new view of the same bank restricted to `positions`.
    pub fn subset(&self, positions: &[usize]) -> Self {
        Self {
            bank: Arc::clone(&self.bank),
            indices: positions.iter().map(|&p| self.indices[p]).collect(),
            labels: positions.iter().map(|&p| self.labels[p]).collect(),
            classes: self.classes,
        }
    }

    fn with_labels(&self, labels: Vec<u8>) -> Self {
        debug_assert_eq!(labels.len(), self.indices.len());
        Self {
            bank: Arc::clone(&self.bank),
            indices: self.indices.clone(),
            labels,
            classes: self.classes,
        }
    }
}

/// One participant's (or the test) partition of the dataset.
#[derive(Debug, Clone)]
pub struct Shard {
    /// Participant id in `1..=N`; the test shard carries `N+1`.
    pub owner: usize,
    pub data: LabeledDataset,
    /// Label-resampling probability that produced this shard (0 when the
    /// labels are untouched).
    pub perturb_prob: f64,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Split into N+1 disjoint IID shards after a seeded uniform shuffle. The
/// first N shards have equal size `len / (N+1)`; remainder examples go to
/// the test shard (owner N+1, last in the returned vector).
pub fn split_iid(dataset: &LabeledDataset, participants: usize, seed: u64) -> Result<Vec<Shard>> {
    if participants < 1 {
        return Err(Error::domain("need at least one participant"));
    }
    if dataset.len() < participants + 1 {
        return Err(Error::domain(format!(
            "{} examples cannot fill {} shards",
            dataset.len(),
            participants + 1
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = rng::derive(seed, &[tag::SPLIT]);
    order.shuffle(&mut rng);

    let share = dataset.len() / (participants + 1);
    let mut shards = Vec::with_capacity(participants + 1);
    for owner in 1..=participants {
        let start = (owner - 1) * share;
        shards.push(Shard {
            owner,
            data: dataset.subset(&order[start..start + share]),
            perturb_prob: 0.0,
        });
    }
    shards.push(Shard {
        owner: participants + 1,
        data: dataset.subset(&order[participants * share..]),
        perturb_prob: 0.0,
    });
    Ok(shards)
}

/// Label-resampling probability for participant `n` of `N`: (N−n)/(N−1),
/// linearly decreasing from 1 to 0. Degenerates to 0 for a single
/// participant.
pub fn perturb_probability(participant: usize, participants: usize) -> f64 {
    if participants <= 1 {
        0.0
    } else {
        (participants - participant) as f64 / (participants - 1) as f64
    }
}

/// Resample each label independently with probability (N−n)/(N−1) by a
/// uniform draw over all classes (the draw may repeat the original label).
/// Features are untouched.
pub fn perturb_labels(
    shard: &Shard,
    participant: usize,
    participants: usize,
    rng: &mut ChaCha20Rng,
) -> Result<Shard> {
    if participant < 1 || participant > participants {
        return Err(Error::domain(format!(
            "participant {participant} outside 1..={participants}"
        )));
    }
    let p = perturb_probability(participant, participants);
    let classes = shard.data.classes();
    let labels = shard
        .data
        .labels()
        .iter()
        .map(|&y| {
            if rng.random::<f64>() < p {
                rng.random_range(0..classes) as u8
            } else {
                y
            }
        })
        .collect();
    Ok(Shard {
        owner: shard.owner,
        data: shard.data.with_labels(labels),
        perturb_prob: p,
    })
}

/// Split plus per-participant label perturbation: the standard graded-quality
/// setup. Per-shard RNG streams are derived from `(seed, owner)`, so shards
/// can be materialized in any order.
pub fn quality_split(
    dataset: &LabeledDataset,
    participants: usize,
    seed: u64,
) -> Result<Vec<Shard>> {
    let shards = split_iid(dataset, participants, seed)?;
    shards
        .into_iter()
        .map(|shard| {
            if shard.owner <= participants {
                let mut rng = rng::derive(seed, &[tag::PERTURB, shard.owner as u64]);
                perturb_labels(&shard, shard.owner, participants, &mut rng)
            } else {
                Ok(shard)
            }
        })
        .collect()
}

fn dataset_from_idx(images: IdxContent, labels: IdxContent, classes: usize) -> Result<LabeledDataset> {
    let (count, rows, cols, pixels) = match images {
        IdxContent::Images {
            count,
            rows,
            cols,
            pixels,
        } => (count, rows, cols, pixels),
        IdxContent::Labels(_) => {
            return Err(Error::config("expected an image stream, found labels"))
        }
    };
    let labels = match labels {
        IdxContent::Labels(l) => l,
        IdxContent::Images { .. } => {
            return Err(Error::config("expected a label stream, found images"))
        }
    };
    if labels.len() != count {
        return Err(Error::domain(format!(
            "{count} images vs {} labels",
            labels.len()
        )));
    }
    let dim = rows * cols;
    let features = Array2::from_shape_vec(
        (count, dim),
        pixels.iter().map(|&b| f64::from(b) / 255.0).collect(),
    )
    .expect("shape checked during parse");
    LabeledDataset::from_features(features, labels, classes)
}

/// Load one images/labels IDX file pair as a dataset (pixels scaled to
/// `[0,1]`, 10 classes).
pub fn load_idx_pair(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let images = parse_idx(&std::fs::read(images_path)?)?;
    let labels = parse_idx(&std::fs::read(labels_path)?)?;
    dataset_from_idx(images, labels, 10)
}

const MNIST_FILES: [(&str, &str); 2] = [
    ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
];

/// Load MNIST from a directory holding the four standard IDX files and pool
/// the predefined train/test parts into one 70k-example dataset; the
/// simulator re-splits it per run.
pub fn load_mnist(dir: &Path) -> Result<LabeledDataset> {
    let mut parts = Vec::new();
    for (images, labels) in MNIST_FILES {
        parts.push(load_idx_pair(&dir.join(images), &dir.join(labels))?);
    }
    concat_datasets(&parts)
}

const CIFAR_RECORD: usize = 3073; // 1 label byte + 32*32*3 pixels

/// Parse one CIFAR-10 binary batch (3073-byte records), flattening each
/// image to a 3072-vector.
pub fn parse_cifar_records(bytes: &[u8]) -> Result<LabeledDataset> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::Format {
            expected: format!("a positive multiple of {CIFAR_RECORD} bytes"),
            found: format!("{} bytes", bytes.len()),
        });
    }
    let count = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(count);
    let mut pixels = Vec::with_capacity(count * (CIFAR_RECORD - 1));
    for record in bytes.chunks_exact(CIFAR_RECORD) {
        labels.push(record[0]);
        pixels.extend(record[1..].iter().map(|&b| f64::from(b) / 255.0));
    }
    let features = Array2::from_shape_vec((count, CIFAR_RECORD - 1), pixels)
        .expect("record length is fixed");
    LabeledDataset::from_features(features, labels, 10)
}

/// Load CIFAR-10 from its six standard binary batch files, pooled to 60k
/// examples.
pub fn load_cifar10(dir: &Path) -> Result<LabeledDataset> {
    let mut parts = Vec::new();
    for name in [
        "data_batch_1.bin",
        "data_batch_2.bin",
        "data_batch_3.bin",
        "data_batch_4.bin",
        "data_batch_5.bin",
        "test_batch.bin",
    ] {
        parts.push(parse_cifar_records(&std::fs::read(dir.join(name))?)?);
    }
    concat_datasets(&parts)
}

fn concat_datasets(parts: &[LabeledDataset]) -> Result<LabeledDataset> {
    let first = parts
        .first()
        .ok_or_else(|| Error::domain("no dataset parts"))?;
    let dim = first.feature_dim();
    let total: usize = parts.iter().map(|p| p.len()).sum();
    let mut features = Array2::zeros((total, dim));
    let mut labels = Vec::with_capacity(total);
    let mut row = 0;
    for part in parts {
        if part.feature_dim() != dim {
            return Err(Error::config("feature dimension mismatch between parts"));
        }
        for i in 0..part.len() {
            features.row_mut(row).assign(&part.feature(i));
            labels.push(part.label(i));
            row += 1;
        }
    }
    LabeledDataset::from_features(features, labels, first.classes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive;
    use std::collections::HashSet;

    fn toy_dataset(len: usize, classes: usize) -> LabeledDataset {
        let features = Array2::from_shape_fn((len, 3), |(i, j)| (i * 3 + j) as f64 / 100.0);
        let labels = (0..len).map(|i| (i % classes) as u8).collect();
        LabeledDataset::from_features(features, labels, classes).unwrap()
    }

    #[test]
    fn parse_label_fixture() {
        let decoded = parse_idx(&fixtures::label_stream()).unwrap();
        assert_eq!(decoded, IdxContent::Labels(vec![7]));
    }

    #[test]
    fn parse_image_fixture() {
        let decoded = parse_idx(&fixtures::image_stream()).unwrap();
        match decoded {
            IdxContent::Images {
                count,
                rows,
                cols,
                pixels,
            } => {
                assert_eq!((count, rows, cols), (1, 2, 2));
                assert_eq!(pixels, vec![0, 255, 0, 255]);
            }
            other => panic!("expected images, got {other:?}"),
        }
        // Scaled view: [[0,1],[0,1]].
        let ds = dataset_from_idx(
            parse_idx(&fixtures::image_stream()).unwrap(),
            IdxContent::Labels(vec![3]),
            10,
        )
        .unwrap();
        assert_eq!(ds.feature(0).to_vec(), vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn wrong_magic_names_both_sides() {
        let err = parse_idx(&[0, 0, 9, 9, 0, 0, 0, 0]).unwrap_err();
        match err {
            Error::Format { expected, found } => {
                assert!(expected.contains("0x00000801"));
                assert!(expected.contains("0x00000803"));
                assert_eq!(found, "0x00000909");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_reports_lengths() {
        let mut bytes = fixtures::image_stream();
        bytes.truncate(bytes.len() - 2);
        match parse_idx(&bytes).unwrap_err() {
            Error::Truncated { expected, found } => {
                assert_eq!(expected, 20);
                assert_eq!(found, 18);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn split_is_a_partition() {
        let ds = toy_dataset(12, 3);
        let shards = split_iid(&ds, 2, 99).unwrap();
        assert_eq!(shards.len(), 3);
        assert!(shards.iter().all(|s| s.len() == 4));
        let mut seen = HashSet::new();
        for shard in &shards {
            for i in 0..shard.len() {
                // Feature rows are unique in the toy dataset, so the first
                // coordinate identifies the original example.
                let key = (shard.data.feature(i)[0] * 100.0).round() as i64;
                assert!(seen.insert(key), "example assigned twice");
            }
        }
        assert_eq!(seen.len(), 12);
    }

    #[test]
    fn split_same_seed_identical() {
        let ds = toy_dataset(50, 5);
        let a = split_iid(&ds, 4, 7).unwrap();
        let b = split_iid(&ds, 4, 7).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.owner, y.owner);
            assert_eq!(x.data.labels(), y.data.labels());
            assert_eq!(x.data.indices, y.data.indices);
        }
    }

    #[test]
    fn split_remainder_goes_to_test_shard() {
        let ds = toy_dataset(14, 2);
        let shards = split_iid(&ds, 3, 1).unwrap();
        assert_eq!(shards[0].len(), 3);
        assert_eq!(shards[1].len(), 3);
        assert_eq!(shards[2].len(), 3);
        assert_eq!(shards[3].len(), 5);
        assert_eq!(shards[3].owner, 4);
    }

    #[test]
    fn perturb_probabilities_form_arithmetic_sequence() {
        let n = 7;
        let probs: Vec<f64> = (1..=n).map(|i| perturb_probability(i, n)).collect();
        assert_eq!(probs[0], 1.0);
        assert_eq!(probs[n - 1], 0.0);
        for w in probs.windows(2) {
            assert!((w[0] - w[1] - 1.0 / (n as f64 - 1.0)).abs() < 1e-12);
        }
        assert_eq!(perturb_probability(1, 1), 0.0);
    }

    #[test]
    fn perturb_last_participant_is_identity() {
        let ds = toy_dataset(30, 3);
        let shards = split_iid(&ds, 5, 3).unwrap();
        let mut rng = derive(3, &[tag::PERTURB, 5]);
        let out = perturb_labels(&shards[4], 5, 5, &mut rng).unwrap();
        assert_eq!(out.data.labels(), shards[4].data.labels());
        assert_eq!(out.perturb_prob, 0.0);
    }

    #[test]
    fn perturb_first_participant_resamples_everything() {
        // p = 1: every label resampled uniformly; agreement with the original
        // is only by chance, about 1/C.
        let classes = 10;
        let len = 10_000;
        let features = Array2::zeros((len, 2));
        let labels = vec![4u8; len];
        let ds = LabeledDataset::from_features(features, labels, classes).unwrap();
        let shard = Shard {
            owner: 1,
            data: ds,
            perturb_prob: 0.0,
        };
        let mut rng = derive(11, &[tag::PERTURB, 1]);
        let out = perturb_labels(&shard, 1, 5, &mut rng).unwrap();
        assert_eq!(out.perturb_prob, 1.0);
        let kept = out
            .data
            .labels()
            .iter()
            .filter(|&&l| l == 4)
            .count() as f64;
        let frac = kept / len as f64;
        // 3 sigma around 1/10 for 10k Bernoulli draws is ~0.009.
        assert!((frac - 0.1).abs() < 0.01, "kept fraction {frac}");
    }

    #[test]
    fn perturb_midpoint_binomial_bound() {
        // N=5, n=3: p = 0.5. Count how many labels were actually redrawn by
        // replaying the RNG decisions.
        let len = 10_000;
        let classes = 10;
        let ds = LabeledDataset::from_features(
            Array2::zeros((len, 1)),
            vec![0u8; len],
            classes,
        )
        .unwrap();
        let shard = Shard {
            owner: 3,
            data: ds,
            perturb_prob: 0.0,
        };
        assert_eq!(perturb_probability(3, 5), 0.5);
        let mut rng = derive(21, &[tag::PERTURB, 3]);
        let out = perturb_labels(&shard, 3, 5, &mut rng).unwrap();
        // Replay the exact draw sequence to count resample events.
        let mut replay = derive(21, &[tag::PERTURB, 3]);
        let mut resampled = 0usize;
        for _ in 0..len {
            if replay.random::<f64>() < 0.5 {
                let _ = replay.random_range(0..classes);
                resampled += 1;
            }
        }
        assert!((4800..=5200).contains(&resampled), "resampled {resampled}");
        // Features untouched, size unchanged.
        assert_eq!(out.len(), len);
        assert_eq!(out.data.feature(17), shard.data.feature(17));
    }

    #[test]
    fn quality_split_assigns_probabilities() {
        let ds = toy_dataset(66, 4);
        let shards = quality_split(&ds, 5, 9).unwrap();
        for shard in &shards[..5] {
            assert_eq!(shard.perturb_prob, perturb_probability(shard.owner, 5));
        }
        assert_eq!(shards[5].perturb_prob, 0.0);
    }

    #[test]
    fn shard_class_frequencies_stay_near_global() {
        // 70k examples, 10 classes, N=99: each shard of 700 draws without
        // replacement, so per-class counts are hypergeometric with
        // sigma = sqrt(m p (1-p) (M-m)/(M-1)). Expect at least 95% of
        // (shard, class) cells within 3 sigma.
        let total = 70_000;
        let classes = 10;
        let mut labels = Vec::with_capacity(total);
        for i in 0..total {
            labels.push((i % classes) as u8);
        }
        let ds =
            LabeledDataset::from_features(Array2::zeros((total, 1)), labels, classes).unwrap();
        let shards = split_iid(&ds, 99, 123).unwrap();
        let global = 1.0 / classes as f64;
        let mut within = 0usize;
        let mut cells = 0usize;
        for shard in &shards[..99] {
            let m = shard.len() as f64;
            let fpc = (total as f64 - m) / (total as f64 - 1.0);
            let sigma = (m * global * (1.0 - global) * fpc).sqrt();
            let mut counts = vec![0usize; classes];
            for &l in shard.data.labels() {
                counts[l as usize] += 1;
            }
            for &c in &counts {
                cells += 1;
                if (c as f64 - m * global).abs() <= 3.0 * sigma {
                    within += 1;
                }
            }
        }
        let frac = within as f64 / cells as f64;
        assert!(frac >= 0.95, "only {frac:.3} of cells within 3 sigma");
    }

    #[test]
    fn cifar_records_parse_and_scale() {
        let mut bytes = vec![3u8];
        bytes.extend(std::iter::repeat_n(255u8, 3072));
        bytes.push(7);
        bytes.extend(std::iter::repeat_n(0u8, 3072));
        let ds = parse_cifar_records(&bytes).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels(), &[3, 7]);
        assert_eq!(ds.feature_dim(), 3072);
        assert_eq!(ds.feature(0)[0], 1.0);
        assert_eq!(ds.feature(1)[0], 0.0);
    }

    #[test]
    fn cifar_rejects_partial_records() {
        let err = parse_cifar_records(&[0u8; 3072]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        assert!(parse_cifar_records(&[]).is_err());
    }

    #[test]
    fn gather_returns_matching_rows_and_labels() {
        let ds = toy_dataset(10, 2);
        let (features, labels) = ds.gather(&[3, 7]);
        assert_eq!(features.nrows(), 2);
        assert_eq!(features.row(0), ds.feature(3));
        assert_eq!(labels, vec![1, 1]);
    }

    proptest::proptest! {
        #[test]
        fn split_partitions_for_every_seed(seed in 0u64..1000, participants in 1usize..6) {
            let ds = toy_dataset(23, 4);
            let shards = split_iid(&ds, participants, seed).unwrap();
            let mut seen = HashSet::new();
            for shard in &shards {
                for &idx in &shard.data.indices {
                    proptest::prop_assert!(seen.insert(idx), "bank row {idx} in two shards");
                }
            }
            proptest::prop_assert_eq!(seen.len(), 23);
        }
    }
}
