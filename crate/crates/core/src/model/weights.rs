//! Pretrained weight resolution: local cache, optional download, checksum.

use std::collections::HashMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use sha2::{Digest, Sha256};

use super::backbone::BackboneSpec;
use crate::error::WeightsError;

pub const CACHE_ENV: &str = "PIPELINE_CACHE_DIR";

pub fn cache_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os(CACHE_ENV) {
        return PathBuf::from(dir);
    }
    std::env::var_os("HOME")
        .map(|h| PathBuf::from(h).join(".cache").join("sonoclass"))
        .unwrap_or_else(|| PathBuf::from(".cache/sonoclass"))
}

pub fn weights_file(spec: &BackboneSpec) -> PathBuf {
    spec.weights_path.clone().unwrap_or_else(|| {
        cache_dir().join(format!("{}-{}.safetensors", spec.name, spec.weights_source.as_str()))
    })
}

pub fn sha256_hex(path: &Path) -> std::io::Result<String> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn download(url: &str, dest: &Path) -> Result<(), WeightsError> {
    let network = |reason: String| WeightsError::Network { url: url.to_string(), reason };
    log::info!("fetching backbone weights from {url}");
    let response = ureq::get(url).call().map_err(|e| network(e.to_string()))?;
    if let Some(parent) = dest.parent() {
        fs::create_dir_all(parent).map_err(|e| network(format!("cannot create cache dir: {e}")))?;
    }
    let partial = dest.with_extension("partial");
    let mut file = fs::File::create(&partial).map_err(|e| network(e.to_string()))?;
    std::io::copy(&mut response.into_reader(), &mut file).map_err(|e| network(e.to_string()))?;
    fs::rename(&partial, dest).map_err(|e| network(e.to_string()))?;
    Ok(())
}

/// Locates (downloading if needed), verifies and loads the weights for `spec`.
pub fn resolve(spec: &BackboneSpec, device: &Device) -> Result<HashMap<String, Tensor>, WeightsError> {
    let path = weights_file(spec);
    if !path.exists() {
        match &spec.weights_url {
            Some(url) => download(url, &path)?,
            None => return Err(WeightsError::Missing(path)),
        }
    }
    if let Some(expected) = &spec.weights_sha256 {
        let actual = sha256_hex(&path).map_err(|e| WeightsError::Format {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        if !actual.eq_ignore_ascii_case(expected) {
            return Err(WeightsError::Checksum { path, expected: expected.clone(), actual });
        }
    }
    candle_core::safetensors::load(&path, device).map_err(|e| WeightsError::Format {
        path,
        reason: e.to_string(),
    })
}
