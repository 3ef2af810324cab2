//! On-disk datasets: mixture WAVs plus a JSON manifest that records every
//! mixing parameter.
//!
//! Layout of a dataset directory:
//! `noisy_NNNN.wav` (all channels), `clean_NNNN.wav` (clean speech image on
//! the reference channel), `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, write_wav, AudioBuffer, WavEncoding};
use crate::error::{invalid, Result};
use crate::mixer::{DatasetConfig, MixSpec, Mixture};
use crate::trainer::Utterance;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "nbdf-manifest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub spec: MixSpec,
    /// Paths relative to the manifest's directory.
    pub noisy: String,
    pub clean: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config: DatasetConfig,
    pub clean_sources: Vec<String>,
    pub noise_sources: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

/// A mixture read back from disk.
#[derive(Debug, Clone)]
pub struct StoredMixture {
    pub name: String,
    pub spec: MixSpec,
    pub noisy: AudioBuffer,
    pub clean_ref: Vec<f64>,
}

impl StoredMixture {
    pub fn utterance(&self) -> Utterance<'_> {
        Utterance { noisy: &self.noisy, clean_ref: &self.clean_ref }
    }
}

/// Accept either a dataset directory or the manifest file itself.
pub fn manifest_path(path: impl AsRef<Path>) -> PathBuf {
    let p = path.as_ref();
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

/// All `.wav` files of a directory in name order.
pub fn read_wav_dir(dir: impl AsRef<Path>) -> Result<Vec<(String, AudioBuffer)>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return invalid(format!("no .wav files in {}", dir.display()));
    }
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, read_wav(&p)?))
        })
        .collect()
}

pub fn write_dataset(
    dir: impl AsRef<Path>,
    mixtures: &[Mixture],
    config: &DatasetConfig,
    clean_sources: Vec<String>,
    noise_sources: Vec<String>,
) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(mixtures.len());
    for m in mixtures {
        let noisy = format!("noisy_{:04}.wav", m.spec.id);
        let clean = format!("clean_{:04}.wav", m.spec.id);
        write_wav(dir.join(&noisy), &m.noisy, WavEncoding::Float32)?;
        write_wav(dir.join(&clean), &m.clean.select(m.spec.ref_channel)?, WavEncoding::Float32)?;
        entries.push(ManifestEntry { spec: m.spec.clone(), noisy, clean });
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        config: config.clone(),
        clean_sources,
        noise_sources,
        entries,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = manifest_path(path);
    let m: Manifest = serde_json::from_str(&fs::read_to_string(&path)?)?;
    if m.format != MANIFEST_FORMAT {
        return invalid(format!("{}: not a dataset manifest", path.display()));
    }
    Ok(m)
}

/// Manifest plus every mixture it lists.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<(Manifest, Vec<StoredMixture>)> {
    let path = manifest_path(path);
    let manifest = read_manifest(&path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let noisy = read_wav(base.join(&e.noisy))?;
        let clean = read_wav(base.join(&e.clean))?;
        if clean.num_channels() != 1 || clean.len() != noisy.len() {
            return invalid(format!("{}: clean reference does not match {}", e.clean, e.noisy));
        }
        out.push(StoredMixture {
            name: e.noisy.trim_end_matches(".wav").to_string(),
            spec: e.spec.clone(),
            noisy,
            clean_ref: clean.into_channels().remove(0),
        });
    }
    Ok((manifest, out))
}
