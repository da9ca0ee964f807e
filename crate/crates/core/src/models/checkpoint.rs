//! Versioned parameter snapshots: an 8-byte magic, a JSON manifest with the
//! shapes, then all values row-major as little-endian f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::grad::{Matrix, Scalar};

const MAGIC: &[u8; 8] = b"PLSTCKP1";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: not a parameter checkpoint")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("bad manifest: {0}")]
    BadManifest(#[from] serde_json::Error),
    #[error("data length mismatch: manifest expects {expected} values, file holds {got}")]
    DataLength { expected: usize, got: usize },
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    model: String,
    matrices: Vec<MatrixEntry>,
}

#[derive(Serialize, Deserialize)]
struct MatrixEntry {
    name: String,
    rows: usize,
    cols: usize,
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    model: &str,
    entries: &[(String, &Matrix<T>)],
) -> Result<(), CheckpointError> {
    let manifest = Manifest {
        version: VERSION,
        model: model.to_string(),
        matrices: entries
            .iter()
            .map(|(name, m)| MatrixEntry {
                name: name.clone(),
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect(),
    };
    let manifest_bytes = serde_json::to_vec(&manifest)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(manifest_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&manifest_bytes)?;
    for (_, m) in entries {
        for &v in m.data() {
            w.write_all(&v.to_f64().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(String, Vec<(String, Matrix<f64>)>), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    r.read_exact(&mut u32buf)?;
    let mlen = u32::from_le_bytes(u32buf) as usize;
    let mut mbytes = vec![0u8; mlen];
    r.read_exact(&mut mbytes)?;
    let manifest: Manifest = serde_json::from_slice(&mbytes)?;

    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    let expected: usize = manifest.matrices.iter().map(|e| e.rows * e.cols).sum();
    if rest.len() != expected * 8 {
        return Err(CheckpointError::DataLength {
            expected,
            got: rest.len() / 8,
        });
    }

    let mut out = Vec::with_capacity(manifest.matrices.len());
    let mut offset = 0usize;
    for e in &manifest.matrices {
        let n = e.rows * e.cols;
        let data: Vec<f64> = (0..n)
            .map(|i| {
                let s = offset + i * 8;
                f64::from_le_bytes(rest[s..s + 8].try_into().expect("8 bytes"))
            })
            .collect();
        offset += n * 8;
        out.push((
            e.name.clone(),
            Matrix::from_vec(e.rows, e.cols, data).expect("manifest shape"),
        ));
    }
    Ok((manifest.model, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::Activation;
    use crate::models::{MlpParams, ModelParams};
    use rand::SeedableRng;

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let model =
            ModelParams::<f32>::Mlp(MlpParams::init(&mut rng, &[3, 4, 2], Activation::Tanh));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");

        let named = model.named_params();
        save_checkpoint(&path, "mlp", &named).unwrap();
        let (kind, loaded) = load_checkpoint(&path).unwrap();
        assert_eq!(kind, "mlp");
        assert_eq!(loaded.len(), named.len());
        for ((name, orig), (lname, lm)) in named.iter().zip(&loaded) {
            assert_eq!(name, lname);
            assert_eq!(orig.shape(), lm.shape());
            // f32 -> f64 -> f32 is lossless
            assert_eq!(orig.cast::<f64>(), *lm);
        }
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::BadMagic)
        ));
    }
}
