//! On-disk checkpoints: `manifest.json` plus one raw little-endian `f64`
//! file per layer, row-major.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelParams, ModelSpec};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub file: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dtype: String,
    pub endianness: String,
    pub seed: u64,
    pub spec: ModelSpec,
    pub layers: Vec<LayerEntry>,
}

pub fn save(dir: &Path, spec: &ModelSpec, params: &ModelParams, seed: u64) -> Result<()> {
    params.check_against(spec)?;
    fs::create_dir_all(dir)?;
    let mut layers = Vec::with_capacity(params.num_layers());
    for (l, w) in params.weights.iter().enumerate() {
        let file = format!("layer_{l:03}.bin");
        let bytes: Vec<u8> = w.as_slice().iter().flat_map(|x| x.to_le_bytes()).collect();
        fs::write(dir.join(&file), bytes)?;
        layers.push(LayerEntry {
            file,
            rows: w.rows(),
            cols: w.cols(),
        });
    }
    let manifest = Manifest {
        format_version: 1,
        dtype: "f64".into(),
        endianness: "little".into(),
        seed,
        spec: spec.clone(),
        layers,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<(Manifest, ModelParams)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
    if manifest.dtype != "f64" || manifest.endianness != "little" {
        return Err(Error::Data(format!(
            "unsupported checkpoint encoding {}/{}",
            manifest.dtype, manifest.endianness
        )));
    }
    manifest.spec.validate()?;
    let mut weights = Vec::with_capacity(manifest.layers.len());
    for entry in &manifest.layers {
        let bytes = fs::read(dir.join(&entry.file))?;
        if bytes.len() != entry.rows * entry.cols * 8 {
            return Err(Error::Data(format!(
                "{} holds {} bytes, expected {}",
                entry.file,
                bytes.len(),
                entry.rows * entry.cols * 8
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        weights.push(DenseMatrix::from_vec(entry.rows, entry.cols, data)?);
    }
    let params = ModelParams { weights };
    params.check_against(&manifest.spec)?;
    Ok((manifest, params))
}
