//! Datasets and their non-IID split into per-node label pools.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Dense feature matrix with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub classes: usize,
    /// Row-major, `len() * dim` values.
    pub features: Vec<f32>,
    pub labels: Vec<u16>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn class_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    fn append(&mut self, other: &Dataset) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::Contract(format!(
                "feature dimension mismatch: {} vs {}",
                self.dim, other.dim
            )));
        }
        self.features.extend_from_slice(&other.features);
        self.labels.extend_from_slice(&other.labels);
        self.classes = self.classes.max(other.classes);
        Ok(())
    }
}

/// Isotropic unit-variance Gaussian clusters, one per class.
///
/// With `dim >= classes` the centers sit on scaled unit axes, so every pair
/// is exactly `separation` apart. Otherwise they are spread on a circle in
/// the first two coordinates with neighbours `separation` apart.
pub fn generate_blobs<R: Rng + ?Sized>(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::invalid("dataset.classes", "need at least 2 classes"));
    }
    if dim == 0 {
        return Err(Error::invalid("dataset.dim", "must be positive"));
    }
    if classes > dim && dim < 2 {
        return Err(Error::invalid("dataset.dim", "need dim >= 2 when classes > dim"));
    }
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            let mut center = vec![0.0; dim];
            if dim >= classes {
                center[c] = separation / std::f64::consts::SQRT_2;
            } else {
                let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
                let radius = separation / (2.0 * (std::f64::consts::PI / classes as f64).sin());
                center[0] = radius * angle.cos();
                center[1] = radius * angle.sin();
            }
            center
        })
        .collect();

    let mut features = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            for mu in center {
                let z: f64 = rng.sample(StandardNormal);
                features.push((mu + z) as f32);
            }
            labels.push(c as u16);
        }
    }
    Ok(Dataset {
        dim,
        classes,
        features,
        labels,
    })
}

fn read_u32(bytes: &[u8], offset: usize, file: &str, field: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            file: file.to_string(),
            message: format!("truncated header: missing {field}"),
        })
}

/// Parses an IDX image file (`u8` tensor, count × rows × cols), scaling pixels to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8], file: &str) -> Result<(usize, usize, Vec<f32>)> {
    let magic = read_u32(bytes, 0, file, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            file: file.to_string(),
            message: format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = read_u32(bytes, 4, file, "image count")? as usize;
    let rows = read_u32(bytes, 8, file, "row count")? as usize;
    let cols = read_u32(bytes, 12, file, "column count")? as usize;
    let body = &bytes[16..];
    let expected = count * rows * cols;
    if body.len() != expected {
        return Err(Error::Format {
            file: file.to_string(),
            message: format!(
                "image count mismatch: header promises {count} images of {rows}x{cols} ({expected} bytes), found {} bytes",
                body.len()
            ),
        });
    }
    Ok((count, rows * cols, body.iter().map(|&p| p as f32 / 255.0).collect()))
}

pub fn parse_idx_labels(bytes: &[u8], file: &str) -> Result<Vec<u16>> {
    let magic = read_u32(bytes, 0, file, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            file: file.to_string(),
            message: format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let count = read_u32(bytes, 4, file, "label count")? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::Format {
            file: file.to_string(),
            message: format!(
                "label count mismatch: header promises {count}, found {}",
                body.len()
            ),
        });
    }
    Ok(body.iter().map(|&l| l as u16).collect())
}

/// Loads an images/labels IDX pair.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let (count, dim, features) = parse_idx_images(&images, &images_path.display().to_string())?;
    let labels = parse_idx_labels(&labels, &labels_path.display().to_string())?;
    if labels.len() != count {
        return Err(Error::Format {
            file: labels_path.display().to_string(),
            message: format!(
                "image/label count disagreement: {count} images vs {} labels",
                labels.len()
            ),
        });
    }
    let classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    Ok(Dataset {
        dim,
        classes,
        features,
        labels,
    })
}

/// Standard MNIST file names inside `dir`: (train, test).
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )?;
    let test = load_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    )?;
    Ok((train, test))
}

/// Samples split into per-node, per-label pools plus a held-out test set.
#[derive(Debug, Clone)]
pub struct PartitionedDataset {
    pub data: Dataset,
    /// `pools[node][label]` holds row indices into `data`.
    pub pools: Vec<Vec<Vec<usize>>>,
    pub test: Vec<usize>,
}

impl PartitionedDataset {
    pub fn label_counts(&self) -> Vec<Vec<u64>> {
        self.pools
            .iter()
            .map(|labels| labels.iter().map(|p| p.len() as u64).collect())
            .collect()
    }

    pub fn classes(&self) -> usize {
        self.data.classes
    }
}

/// Assigns samples to nodes according to `table[node][label]`.
///
/// Within each label the samples are shuffled once, then carved off in node
/// order. With `shared_pools` every node holding a label draws from the same
/// prefix, so the demand per label is the largest single request instead of
/// the sum. Anything left over is appended to the test set.
pub fn partition<R: Rng + ?Sized>(
    raw: &Dataset,
    table: &[Vec<u64>],
    test: Option<&Dataset>,
    shared_pools: bool,
    rng: &mut R,
) -> Result<PartitionedDataset> {
    let classes = table.first().map_or(0, |r| r.len());
    if classes != raw.classes {
        return Err(Error::invalid(
            "nodes.label_counts",
            format!("table has {classes} labels but the dataset has {}", raw.classes),
        ));
    }
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in raw.labels.iter().enumerate() {
        by_label[l as usize].push(i);
    }

    let mut shortfalls = Vec::new();
    for (c, supply) in by_label.iter().enumerate() {
        let demand: u64 = if shared_pools {
            table.iter().map(|row| row[c]).max().unwrap_or(0)
        } else {
            table.iter().map(|row| row[c]).sum()
        };
        if demand > supply.len() as u64 {
            shortfalls.push(format!("label {c}: demand {demand}, supply {}", supply.len()));
        }
    }
    if !shortfalls.is_empty() {
        return Err(Error::invalid("nodes.label_counts", shortfalls.join("; ")));
    }

    let mut pools = vec![vec![Vec::new(); classes]; table.len()];
    let mut leftovers = Vec::new();
    for (c, indices) in by_label.iter_mut().enumerate() {
        indices.shuffle(rng);
        let mut next = 0usize;
        for (node, row) in table.iter().enumerate() {
            let want = row[c] as usize;
            let start = if shared_pools { 0 } else { next };
            pools[node][c] = indices[start..start + want].to_vec();
            next = next.max(start + want);
        }
        leftovers.extend_from_slice(&indices[next..]);
    }
    leftovers.sort_unstable();

    let mut data = raw.clone();
    let mut test_rows = Vec::new();
    if let Some(t) = test {
        let offset = data.len();
        data.append(t)?;
        test_rows.extend(offset..offset + t.len());
    }
    test_rows.extend(leftovers);
    if test_rows.is_empty() {
        return Err(Error::invalid("dataset", "no samples left for the test set"));
    }
    Ok(PartitionedDataset {
        data,
        pools,
        test: test_rows,
    })
}
