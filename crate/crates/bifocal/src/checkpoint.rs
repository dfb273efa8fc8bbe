//! Versioned model checkpoints: the effective config travels with the
//! weights so an artifact is self-describing. Weights round-trip bit-exact
//! through the structured-text encoding.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::numerics::Scalar;
use crate::transducer::TransducerModel;

pub const CHECKPOINT_FORMAT: &str = "bifocal-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint<F> {
    pub format: String,
    pub version: u32,
    /// Effective (defaults-resolved) config the model was built under.
    pub config: ExperimentConfig,
    pub model: TransducerModel<F>,
}

impl<F: Scalar> Checkpoint<F> {
    pub fn new(config: ExperimentConfig, model: TransducerModel<F>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config,
            model,
        }
    }
}

pub fn save<F: Scalar>(
    path: impl AsRef<Path>,
    config: &ExperimentConfig,
    model: &TransducerModel<F>,
) -> Result<()> {
    let path = path.as_ref();
    let ckpt = Checkpoint::new(config.clone(), model.clone());
    let file = std::fs::File::create(path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    serde_json::to_writer(std::io::BufWriter::new(file), &ckpt)?;
    Ok(())
}

pub fn load<F: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<F>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let ckpt: Checkpoint<F> = serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if ckpt.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!(
            "{}: format {:?}, expected {CHECKPOINT_FORMAT:?}",
            path.display(),
            ckpt.format
        )));
    }
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: version {}, expected {CHECKPOINT_VERSION}",
            path.display(),
            ckpt.version
        )));
    }
    ckpt.model.validate()?;
    ckpt.config.validate()?;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip_path() -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        (dir, path)
    }

    #[test]
    fn weights_round_trip_bit_exactly() {
        let config = ExperimentConfig::toy_bifocal();
        let model = config.build_model::<f32>(5).unwrap();
        let (_dir, path) = roundtrip_path();
        save(&path, &config, &model).unwrap();
        let back = load::<f32>(&path).unwrap();
        assert_eq!(back.config, config);
        let a = model.flat();
        let b = back.model.flat();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            for (u, v) in x.iter().zip(y.iter()) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn wrong_format_and_version_are_refused() {
        let config = ExperimentConfig::toy_monolithic();
        let model = config.build_model::<f32>(1).unwrap();
        let (_dir, path) = roundtrip_path();

        let mut ckpt = Checkpoint::new(config.clone(), model.clone());
        ckpt.format = "other".into();
        std::fs::write(&path, serde_json::to_string(&ckpt).unwrap()).unwrap();
        assert!(load::<f32>(&path).is_err());

        let mut ckpt = Checkpoint::new(config, model);
        ckpt.version = 99;
        std::fs::write(&path, serde_json::to_string(&ckpt).unwrap()).unwrap();
        assert!(load::<f32>(&path).is_err());
    }

    #[test]
    fn truncated_file_reports_the_path() {
        let (_dir, path) = roundtrip_path();
        std::fs::write(&path, "{\"format\": \"bifocal-checkpoint\"").unwrap();
        let err = load::<f32>(&path).unwrap_err().to_string();
        assert!(err.contains("model.ckpt"), "got: {err}");
    }
}
