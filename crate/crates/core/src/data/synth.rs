use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::degrade::{degrade, procedural_image};
use crate::data::image::{load_image, save_image};
use crate::data::manifest::{DatasetManifest, ImagePair, Partition, Split};
use crate::data::metrics::psnr;
use crate::error::{Error, Result};
use crate::rng;
use rand::Rng;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const DATASET_META_FILE: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub size: usize,
    pub seed: u64,
    /// Severity bands `[lo, hi]`; pair `i` draws its severity uniformly from
    /// band `i mod bands.len()`.
    pub bands: Vec<[f64; 2]>,
}

impl SynthConfig {
    pub fn new(n: usize, size: usize, seed: u64) -> Self {
        Self {
            n,
            size,
            seed,
            bands: vec![[0.1, 0.3], [0.4, 0.6], [0.7, 0.95]],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::config(format!(
                "need at least 3 pairs, got {}",
                self.n
            )));
        }
        if self.size == 0 || !self.size.is_multiple_of(32) {
            return Err(Error::config(format!(
                "image size {} must be a positive multiple of 32",
                self.size
            )));
        }
        if self.bands.is_empty() {
            return Err(Error::config("at least one severity band is required"));
        }
        for &[lo, hi] in &self.bands {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(Error::config(format!("invalid severity band [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Sidecar written next to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub split: Split,
    pub seed: Option<u64>,
    pub synth: Option<SynthConfig>,
}

/// Writes `clean/NNNNN.png`, `degraded/NNNNN.png`, `manifest.jsonl` and
/// `dataset.json` under `out_dir`. Each pair depends only on `(seed, i)`.
pub fn synth_dataset(config: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    for sub in ["clean", "degraded"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let records = (0..config.n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(config.seed, &format!("synth/pair/{i}"));
            let clean = procedural_image(config.size, &mut r);
            let [lo, hi] = config.bands[i % config.bands.len()];
            let severity = if hi > lo { r.gen_range(lo..=hi) } else { lo };
            let noise_seed: u64 = r.gen();
            let degraded = degrade(&clean, severity, noise_seed)?;
            let target = format!("clean/{i:05}.png");
            let input = format!("degraded/{i:05}.png");
            save_image(&clean, out_dir.join(&target))?;
            save_image(&degraded, out_dir.join(&input))?;
            Ok(ImagePair {
                input,
                target,
                psnr_db: psnr(&degraded, &clean)?,
                partition: Partition::Unassigned,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest::new(records, Split::All, Some(config.seed), out_dir)?;
    manifest.write(out_dir.join(MANIFEST_FILE))?;
    write_meta(
        &DatasetMeta {
            split: Split::All,
            seed: Some(config.seed),
            synth: Some(config.clone()),
        },
        out_dir,
    )?;
    Ok(manifest)
}

pub fn write_meta(meta: &DatasetMeta, dir: &Path) -> Result<()> {
    let path = dir.join(DATASET_META_FILE);
    let text = serde_json::to_string_pretty(meta)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Recomputes the PSNR of every record from the files on disk and returns
/// the largest absolute deviation from the stored value.
pub fn verify_psnr(manifest: &DatasetManifest) -> Result<f64> {
    let mut worst = 0.0f64;
    for r in manifest.records() {
        let x = load_image(manifest.resolve(&r.input))?;
        let y = load_image(manifest.resolve(&r.target))?;
        let p = psnr(&x, &y)?;
        let d = if p == r.psnr_db {
            0.0
        } else {
            (p - r.psnr_db).abs()
        };
        worst = worst.max(d);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_dataset_has_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_dataset(&SynthConfig::new(6, 32, 3), dir.path()).unwrap();
        assert_eq!(m.len(), 6);
        for r in m.records() {
            assert!(m.resolve(&r.input).is_file());
            assert!(m.resolve(&r.target).is_file());
        }
        let back = DatasetManifest::read(dir.path().join(MANIFEST_FILE), Split::All).unwrap();
        assert_eq!(back.records(), m.records());
        assert!(dir.path().join(DATASET_META_FILE).is_file());
    }

    #[test]
    fn regeneration_is_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        synth_dataset(&SynthConfig::new(6, 32, 8), a.path()).unwrap();
        synth_dataset(&SynthConfig::new(6, 32, 8), b.path()).unwrap();
        let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
        assert_eq!(read(a.path(), MANIFEST_FILE), read(b.path(), MANIFEST_FILE));
        assert_eq!(
            read(a.path(), "degraded/00004.png"),
            read(b.path(), "degraded/00004.png")
        );
    }

    #[test]
    fn stored_psnr_recomputes() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_dataset(&SynthConfig::new(9, 32, 5), dir.path()).unwrap();
        assert!(verify_psnr(&m).unwrap() <= 1e-6);
    }

    #[test]
    fn band_medians_are_ordered() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_dataset(&SynthConfig::new(45, 32, 11), dir.path()).unwrap();
        let medians: Vec<f64> = (0..3)
            .map(|b| {
                let mut v: Vec<f64> = m
                    .records()
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i % 3 == b)
                    .map(|(_, r)| r.psnr_db)
                    .collect();
                v.sort_by(f64::total_cmp);
                v[v.len() / 2]
            })
            .collect();
        assert!(
            medians[0] > medians[1] && medians[1] > medians[2],
            "{medians:?}"
        );
    }

    #[test]
    fn rejects_bad_config() {
        let dir = tempfile::tempdir().unwrap();
        assert!(synth_dataset(&SynthConfig::new(2, 32, 0), dir.path()).is_err());
        assert!(synth_dataset(&SynthConfig::new(6, 30, 0), dir.path()).is_err());
    }
}
