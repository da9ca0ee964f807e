//! MNIST ingestion (big-endian IDX files, gzip accepted), 28x28 -> 7x7
//! average-pool downsampling with [0,1] scaling, and per-task pixel
//! permutations applied identically to train and test splits.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use sha2::{Digest, Sha256};

use super::TaskError;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

pub const DEFAULT_MIRROR: &str = "https://ossci-datasets.s3.amazonaws.com/mnist";

/// Raw 28x28 dataset, already split.
#[derive(Clone, Debug)]
pub struct MnistData {
    pub train_images: Vec<u8>,
    pub train_labels: Vec<u8>,
    pub test_images: Vec<u8>,
    pub test_labels: Vec<u8>,
}

impl MnistData {
    pub fn train_count(&self) -> usize {
        self.train_labels.len()
    }

    pub fn test_count(&self) -> usize {
        self.test_labels.len()
    }
}

fn parse_err(file: &str, reason: impl Into<String>) -> TaskError {
    TaskError::Parse {
        file: file.to_string(),
        reason: reason.into(),
    }
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Option<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
}

/// Transparently gunzip when the stream carries the gzip magic.
pub fn maybe_gunzip(bytes: Vec<u8>) -> Result<Vec<u8>, std::io::Error> {
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&bytes[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

/// Parse an IDX image file: magic 0x00000803, then count/rows/cols, then
/// unsigned bytes row-major.
pub fn parse_idx_images(name: &str, bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>), TaskError> {
    let magic = read_be_u32(bytes, 0).ok_or_else(|| parse_err(name, "truncated header"))?;
    if magic != IMAGES_MAGIC {
        return Err(parse_err(
            name,
            format!("bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        ));
    }
    let count = read_be_u32(bytes, 4).ok_or_else(|| parse_err(name, "truncated header"))? as usize;
    let rows = read_be_u32(bytes, 8).ok_or_else(|| parse_err(name, "truncated header"))? as usize;
    let cols = read_be_u32(bytes, 12).ok_or_else(|| parse_err(name, "truncated header"))? as usize;
    let expected = count
        .checked_mul(rows * cols)
        .ok_or_else(|| parse_err(name, "dimension overflow"))?;
    let data = &bytes[16..];
    if data.len() != expected {
        return Err(parse_err(
            name,
            format!(
                "payload holds {} bytes, header promises {count} x {rows} x {cols} = {expected}",
                data.len()
            ),
        ));
    }
    Ok((count, rows, cols, data.to_vec()))
}

/// Parse an IDX label file: magic 0x00000801, then count, then bytes.
pub fn parse_idx_labels(name: &str, bytes: &[u8]) -> Result<Vec<u8>, TaskError> {
    let magic = read_be_u32(bytes, 0).ok_or_else(|| parse_err(name, "truncated header"))?;
    if magic != LABELS_MAGIC {
        return Err(parse_err(
            name,
            format!("bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        ));
    }
    let count = read_be_u32(bytes, 4).ok_or_else(|| parse_err(name, "truncated header"))? as usize;
    let data = &bytes[8..];
    if data.len() != count {
        return Err(parse_err(
            name,
            format!("payload holds {} labels, header promises {count}", data.len()),
        ));
    }
    if let Some(bad) = data.iter().find(|&&l| l > 9) {
        return Err(parse_err(name, format!("label {bad} out of range 0-9")));
    }
    Ok(data.to_vec())
}

pub fn write_idx_images(count: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), count * rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(count as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    out.extend_from_slice(pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read_file_auto(dir: &Path, name: &str) -> Result<Vec<u8>, TaskError> {
    let plain = dir.join(name);
    let gz = dir.join(format!("{name}.gz"));
    let path = if plain.exists() {
        plain
    } else if gz.exists() {
        gz
    } else {
        return Err(parse_err(
            name,
            format!("not found in {} (looked for {name} and {name}.gz)", dir.display()),
        ));
    };
    let bytes = fs::read(&path)?;
    maybe_gunzip(bytes).map_err(|e| parse_err(name, format!("gzip error: {e}")))
}

fn load_split(
    dir: &Path,
    images_name: &str,
    labels_name: &str,
    expected_count: usize,
) -> Result<(Vec<u8>, Vec<u8>), TaskError> {
    let (count, rows, cols, images) =
        parse_idx_images(images_name, &read_file_auto(dir, images_name)?)?;
    if (rows, cols) != (28, 28) {
        return Err(parse_err(
            images_name,
            format!("expected 28x28 images, got {rows}x{cols}"),
        ));
    }
    if count != expected_count {
        return Err(parse_err(
            images_name,
            format!("expected {expected_count} images, got {count}"),
        ));
    }
    let labels = parse_idx_labels(labels_name, &read_file_auto(dir, labels_name)?)?;
    if labels.len() != count {
        return Err(parse_err(
            labels_name,
            format!("{} labels for {count} images", labels.len()),
        ));
    }
    Ok((images, labels))
}

/// Load the canonical 60k/10k split from `dir` (IDX, gzip accepted).
pub fn mnist_load(dir: &Path) -> Result<MnistData, TaskError> {
    let (train_images, train_labels) = load_split(dir, TRAIN_IMAGES, TRAIN_LABELS, 60_000)?;
    let (test_images, test_labels) = load_split(dir, TEST_IMAGES, TEST_LABELS, 10_000)?;
    Ok(MnistData {
        train_images,
        train_labels,
        test_images,
        test_labels,
    })
}

/// Non-overlapping 4x4 average pooling of one 28x28 image; raw pixel scale.
pub fn downsample_pool(img: &[u8]) -> [f32; 49] {
    assert_eq!(img.len(), 784);
    let mut out = [0.0f32; 49];
    for by in 0..7 {
        for bx in 0..7 {
            let mut sum = 0u32;
            for dy in 0..4 {
                let row = (by * 4 + dy) * 28 + bx * 4;
                for dx in 0..4 {
                    sum += img[row + dx] as u32;
                }
            }
            out[by * 7 + bx] = sum as f32 / 16.0;
        }
    }
    out
}

/// Pooled then scaled to [0, 1].
pub fn downsample(img: &[u8]) -> [f32; 49] {
    let mut out = downsample_pool(img);
    for v in &mut out {
        *v /= 255.0;
    }
    out
}

/// The 7x7 dataset the learners actually consume; images flattened row-wise.
#[derive(Clone, Debug)]
pub struct DownsampledMnist {
    pub train_x: Vec<f32>,
    pub train_labels: Vec<u8>,
    pub test_x: Vec<f32>,
    pub test_labels: Vec<u8>,
}

impl DownsampledMnist {
    pub fn prepare(raw: &MnistData) -> Self {
        let pool = |images: &[u8]| -> Vec<f32> {
            images
                .chunks_exact(784)
                .flat_map(|img| downsample(img))
                .collect()
        };
        Self {
            train_x: pool(&raw.train_images),
            train_labels: raw.train_labels.clone(),
            test_x: pool(&raw.test_images),
            test_labels: raw.test_labels.clone(),
        }
    }

    pub fn train_count(&self) -> usize {
        self.train_labels.len()
    }

    pub fn test_count(&self) -> usize {
        self.test_labels.len()
    }

    pub fn train_image(&self, i: usize) -> &[f32] {
        &self.train_x[i * 49..(i + 1) * 49]
    }

    pub fn test_image(&self, i: usize) -> &[f32] {
        &self.test_x[i * 49..(i + 1) * 49]
    }
}

/// One task: a pixel permutation shared by all 70,000 images; labels
/// untouched.
#[derive(Clone, Debug)]
pub struct PermutedMnistTask {
    pub permutation: Vec<usize>,
    data: Arc<DownsampledMnist>,
}

impl PermutedMnistTask {
    pub fn generate(data: Arc<DownsampledMnist>, rng: &mut impl Rng) -> Self {
        let mut permutation: Vec<usize> = (0..49).collect();
        permutation.shuffle(rng);
        Self { permutation, data }
    }

    /// Test constructor with a fixed permutation.
    pub fn with_permutation(data: Arc<DownsampledMnist>, permutation: Vec<usize>) -> Self {
        assert_eq!(permutation.len(), 49);
        Self { permutation, data }
    }

    pub fn data(&self) -> &DownsampledMnist {
        &self.data
    }

    fn permute_into(&self, src: &[f32], out: &mut [f32]) {
        for (dst, &from) in out.iter_mut().zip(&self.permutation) {
            *dst = src[from];
        }
    }

    pub fn train_example(&self, i: usize, out: &mut [f32]) -> u8 {
        self.permute_into(self.data.train_image(i), out);
        self.data.train_labels[i]
    }

    pub fn test_example(&self, i: usize, out: &mut [f32]) -> u8 {
        self.permute_into(self.data.test_image(i), out);
        self.data.test_labels[i]
    }
}

/// Download, decompress, validate, and cache the four canonical files.
/// Verification is structural (magic, dims, counts); pass `expected_sha256`
/// (in file order: train images, train labels, test images, test labels) to
/// additionally pin digests. Computed digests are written next to the data.
pub fn fetch_mnist(
    dir: &Path,
    base_url: &str,
    expected_sha256: Option<&[String]>,
) -> Result<Vec<(String, String)>, TaskError> {
    fs::create_dir_all(dir)?;
    let names = [TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS];
    if let Some(hashes) = expected_sha256 {
        if hashes.len() != names.len() {
            return Err(TaskError::Config(format!(
                "expected {} sha256 digests, got {}",
                names.len(),
                hashes.len()
            )));
        }
    }
    let client = reqwest::blocking::Client::builder()
        .timeout(std::time::Duration::from_secs(120))
        .build()
        .map_err(|e| TaskError::Fetch(e.to_string()))?;

    let mut digests = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let target: PathBuf = dir.join(name);
        let bytes = if target.exists() {
            fs::read(&target)?
        } else {
            let url = format!("{}/{}.gz", base_url.trim_end_matches('/'), name);
            let resp = client
                .get(&url)
                .send()
                .and_then(|r| r.error_for_status())
                .map_err(|e| TaskError::Fetch(format!("{url}: {e}")))?;
            let body = resp
                .bytes()
                .map_err(|e| TaskError::Fetch(format!("{url}: {e}")))?
                .to_vec();
            let decompressed = maybe_gunzip(body)
                .map_err(|e| parse_err(name, format!("gzip error: {e}")))?;
            fs::write(&target, &decompressed)?;
            decompressed
        };

        // structural validation
        if name.contains("images") {
            let (_, rows, cols, _) = parse_idx_images(name, &bytes)?;
            if (rows, cols) != (28, 28) {
                return Err(parse_err(name, format!("expected 28x28, got {rows}x{cols}")));
            }
        } else {
            parse_idx_labels(name, &bytes)?;
        }

        let digest = hex_digest(&bytes);
        if let Some(hashes) = expected_sha256 {
            if !hashes[i].eq_ignore_ascii_case(&digest) {
                return Err(TaskError::Fetch(format!(
                    "{name}: sha256 {digest} does not match expected {}",
                    hashes[i]
                )));
            }
        }
        digests.push((name.to_string(), digest));
    }
    // validate the full split once everything parses
    mnist_load(dir)?;

    let manifest: String = digests
        .iter()
        .map(|(n, d)| format!("{d}  {n}\n"))
        .collect();
    fs::write(dir.join("SHA256SUMS"), manifest)?;
    Ok(digests)
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
pub(crate) mod test_fixtures {
    use super::*;
    use rand::Rng;

    /// Synthetic dataset with class-dependent pixel statistics so that a
    /// small learner can actually separate the classes.
    pub fn synthetic_raw(rng: &mut impl Rng, train: usize, test: usize) -> MnistData {
        let mut gen_split = |count: usize| {
            let mut images = Vec::with_capacity(count * 784);
            let mut labels = Vec::with_capacity(count);
            for i in 0..count {
                let label = (i % 10) as u8;
                labels.push(label);
                for p in 0..784usize {
                    // bright band whose position tracks the label + noise
                    let band = (p / 78) as u8;
                    let base: u8 = if band == label { 200 } else { 30 };
                    let noise: u8 = rng.gen_range(0..40);
                    images.push(base.saturating_add(noise));
                }
            }
            (images, labels)
        };
        let (train_images, train_labels) = gen_split(train);
        let (test_images, test_labels) = gen_split(test);
        MnistData {
            train_images,
            train_labels,
            test_images,
            test_labels,
        }
    }
}
