//! Data ingestion: IDX image/label files, a deterministic Gaussian-blobs
//! generator, and seeded batching.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::l2_norm;
use crate::rng::Rng;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Salt mixed into the blobs seed for the train/test permutation so the
/// split draw is independent of the sample draw.
const SPLIT_SEED_SALT: u64 = 0x5b1d_5eed_0000_0001;

/// One labeled feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Immutable labeled dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub feature_dim: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Content hash over features (little-endian f64 bytes) and labels, in
    /// sample order.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update((self.num_classes as u64).to_le_bytes());
        hasher.update((self.feature_dim as u64).to_le_bytes());
        for s in &self.samples {
            for v in &s.features {
                hasher.update(v.to_le_bytes());
            }
            hasher.update((s.label as u64).to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

/// Train/test pair.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: Dataset,
    pub test: Dataset,
}

/// Deterministic Gaussian-blobs specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub samples_per_class: usize,
    pub separation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        BlobSpec {
            num_classes: 3,
            feature_dim: 16,
            samples_per_class: 500,
            separation: 4.0,
            noise_sigma: 1.0,
            seed: 7,
        }
    }
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.feature_dim == 0 || self.samples_per_class == 0 {
            return Err(Error::Config(
                "blob spec counts must all be positive".to_string(),
            ));
        }
        if !(self.separation > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::Config(
                "blob spec needs separation > 0 and noise_sigma >= 0".to_string(),
            ));
        }
        Ok(())
    }
}

/// Generates the blobs dataset: class centers are seeded unit directions
/// scaled to the separation radius, samples add isotropic Gaussian noise.
/// Identical specs produce bit-identical datasets.
pub fn generate_blobs(spec: &BlobSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = Rng::from_seed(spec.seed);

    let mut centers = Vec::with_capacity(spec.num_classes);
    for _ in 0..spec.num_classes {
        let raw: Vec<f64> = (0..spec.feature_dim).map(|_| rng.normal()).collect();
        let norm = l2_norm(&raw);
        let center: Vec<f64> = if norm <= 1e-12 {
            // vanishing draw; fall back to the first axis
            let mut c = vec![0.0; spec.feature_dim];
            c[0] = spec.separation;
            c
        } else {
            raw.iter().map(|v| v / norm * spec.separation).collect()
        };
        centers.push(center);
    }

    let mut samples = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    for (label, center) in centers.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            let features: Vec<f64> = center
                .iter()
                .map(|&c| c + spec.noise_sigma * rng.normal())
                .collect();
            samples.push(Sample { features, label });
        }
    }

    Ok(Dataset {
        samples,
        num_classes: spec.num_classes,
        feature_dim: spec.feature_dim,
    })
}

/// Deterministic 80/20 split by a seeded permutation.
pub fn split_blobs(spec: &BlobSpec) -> Result<SplitDataset> {
    let ds = generate_blobs(spec)?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut rng = Rng::from_seed(spec.seed ^ SPLIT_SEED_SALT);
    rng.shuffle(&mut order);
    let train_len = (ds.len() * 8) / 10;
    let make = |idx: &[usize]| Dataset {
        samples: idx.iter().map(|&i| ds.samples[i].clone()).collect(),
        num_classes: ds.num_classes,
        feature_dim: ds.feature_dim,
    };
    Ok(SplitDataset {
        train: make(&order[..train_len]),
        test: make(&order[train_len..]),
    })
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::IdxTruncated {
            needed: end,
            available: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parses an IDX image file: pixels come back as rows*cols reals in [0,1].
/// Returns (per-image flat pixels, rows, cols).
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Vec<Vec<f64>>, usize, usize)> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::IdxBadMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = read_be_u32(bytes, 4)? as usize;
    let rows = read_be_u32(bytes, 8)? as usize;
    let cols = read_be_u32(bytes, 12)? as usize;
    let needed = 16 + count * rows * cols;
    if bytes.len() < needed {
        return Err(Error::IdxTruncated {
            needed,
            available: bytes.len(),
        });
    }
    let mut images = Vec::with_capacity(count);
    let mut offset = 16;
    for _ in 0..count {
        let pixels: Vec<f64> = bytes[offset..offset + rows * cols]
            .iter()
            .map(|&b| f64::from(b) / 255.0)
            .collect();
        images.push(pixels);
        offset += rows * cols;
    }
    Ok((images, rows, cols))
}

/// Parses an IDX label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::IdxBadMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let count = read_be_u32(bytes, 4)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(Error::IdxTruncated {
            needed,
            available: bytes.len(),
        });
    }
    Ok(bytes[8..8 + count].iter().map(|&b| b as usize).collect())
}

/// Serializes images (byte pixels) into the IDX format.
pub fn write_idx_images(images: &[Vec<u8>], rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    for img in images {
        debug_assert_eq!(img.len(), rows * cols);
        out.extend_from_slice(img);
    }
    out
}

/// Serializes labels into the IDX format.
pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Builds a dataset from a paired IDX image/label byte buffer.
pub fn dataset_from_idx_pair(image_bytes: &[u8], label_bytes: &[u8]) -> Result<Dataset> {
    let (images, rows, cols) = parse_idx_images(image_bytes)?;
    let labels = parse_idx_labels(label_bytes)?;
    if images.len() != labels.len() {
        return Err(Error::IdxCountMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let samples = images
        .into_iter()
        .zip(labels)
        .map(|(features, label)| Sample { features, label })
        .collect();
    Ok(Dataset {
        samples,
        num_classes,
        feature_dim: rows * cols,
    })
}

/// One epoch of batches: a seeded shuffle of the sample indices, chunked
/// to `batch_size` with the final partial batch kept.
pub fn batches(len: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut order);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_images_hand_case() {
        let bytes = write_idx_images(&[vec![0, 255, 128, 64]], 2, 2);
        let (images, rows, cols) = parse_idx_images(&bytes).unwrap();
        assert_eq!((rows, cols), (2, 2));
        assert_eq!(images.len(), 1);
        assert_eq!(images[0][0], 0.0);
        assert_eq!(images[0][1], 1.0);
        assert!((images[0][2] - 128.0 / 255.0).abs() < 1e-15);
        assert!((images[0][3] - 64.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn idx_labels_hand_case() {
        let bytes = write_idx_labels(&[0, 1, 2]);
        assert_eq!(parse_idx_labels(&bytes).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn idx_wrong_magic() {
        let bytes = write_idx_images(&[vec![0; 4]], 2, 2);
        match parse_idx_labels(&bytes) {
            Err(Error::IdxBadMagic { found, .. }) => assert_eq!(found, 0x0000_0803),
            other => panic!("expected magic error, got {other:?}"),
        }
    }

    #[test]
    fn idx_truncated_payload() {
        let mut bytes = write_idx_images(&[vec![7; 4]], 2, 2);
        bytes.truncate(17);
        assert!(matches!(
            parse_idx_images(&bytes),
            Err(Error::IdxTruncated { .. })
        ));
    }

    #[test]
    fn idx_count_mismatch() {
        let imgs = write_idx_images(&[vec![1; 4], vec![2; 4]], 2, 2);
        let labels = write_idx_labels(&[0]);
        assert!(matches!(
            dataset_from_idx_pair(&imgs, &labels),
            Err(Error::IdxCountMismatch { images: 2, labels: 1 })
        ));
    }

    #[test]
    fn idx_round_trip_byte_identical() {
        let images = vec![vec![0u8, 9, 250, 128], vec![3, 4, 5, 6]];
        let labels = vec![1u8, 0];
        let ib = write_idx_images(&images, 2, 2);
        let lb = write_idx_labels(&labels);

        let (parsed, rows, cols) = parse_idx_images(&ib).unwrap();
        let back: Vec<Vec<u8>> = parsed
            .iter()
            .map(|img| img.iter().map(|&v| (v * 255.0).round() as u8).collect())
            .collect();
        assert_eq!(write_idx_images(&back, rows, cols), ib);

        let lparsed = parse_idx_labels(&lb).unwrap();
        let lback: Vec<u8> = lparsed.iter().map(|&l| l as u8).collect();
        assert_eq!(write_idx_labels(&lback), lb);
    }

    #[test]
    fn blobs_noiseless_equals_centers() {
        let spec = BlobSpec {
            noise_sigma: 0.0,
            samples_per_class: 3,
            ..Default::default()
        };
        let ds = generate_blobs(&spec).unwrap();
        for chunk in ds.samples.chunks(3) {
            assert_eq!(chunk[0].features, chunk[1].features);
            assert_eq!(chunk[1].features, chunk[2].features);
            assert!((l2_norm(&chunk[0].features) - spec.separation).abs() < 1e-9);
        }
    }

    #[test]
    fn blobs_deterministic() {
        let spec = BlobSpec::default();
        let a = generate_blobs(&spec).unwrap();
        let b = generate_blobs(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn split_is_partition() {
        let spec = BlobSpec {
            samples_per_class: 10,
            ..Default::default()
        };
        let split = split_blobs(&spec).unwrap();
        assert_eq!(split.train.len(), 24);
        assert_eq!(split.test.len(), 6);
    }

    #[test]
    fn batches_partition_and_determinism() {
        let mut rng = Rng::from_seed(3);
        let b = batches(10, 4, &mut rng);
        assert_eq!(b.iter().map(Vec::len).sum::<usize>(), 10);
        assert_eq!(b.last().unwrap().len(), 2);
        let mut all: Vec<usize> = b.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        let mut r1 = Rng::from_seed(9);
        let mut r2 = Rng::from_seed(9);
        assert_eq!(batches(23, 5, &mut r1), batches(23, 5, &mut r2));
    }

    #[test]
    fn single_batch_when_batch_size_exceeds_len() {
        let mut rng = Rng::from_seed(4);
        let b = batches(5, 100, &mut rng);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].len(), 5);
    }
}
