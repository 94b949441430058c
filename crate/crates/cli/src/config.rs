use std::path::Path;

use serde::{Deserialize, Serialize};
use thermobnn_core::pruning::PruneConfig;
use thermobnn_core::topology::NetConfig;
use thermobnn_core::train::TrainConfig;

use crate::error::{data_err, CliResult};
use crate::fsutil;

/// Contents of a run configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Used when `--seed` is not given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub net: NetConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub prune: PruneConfig,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| data_err!("{origin}: {e}"))?;
        cfg.validate().map_err(|e| data_err!("{origin}: {e}"))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = fsutil::read(path)?;
        let text = String::from_utf8(bytes).map_err(|_| data_err!("{}: not UTF-8", path.display()))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> thermobnn_core::Result<()> {
        self.net.infer_shapes()?;
        self.train.validate()?;
        self.prune.train.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs serialize to TOML")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use thermobnn_core::encoders::EncodingKind;
    use thermobnn_core::topology::{reference, EncodingSpec};

    fn toy() -> RunConfig {
        RunConfig {
            seed: Some(3),
            net: reference::toy(
                EncodingSpec {
                    kind: EncodingKind::Glt,
                    planes: 8,
                    bits: 8,
                },
                10,
            ),
            train: TrainConfig::default(),
            prune: PruneConfig::default(),
        }
    }

    #[test]
    fn toml_round_trip() {
        let cfg = toy();
        let again = RunConfig::parse(&cfg.to_toml(), "mem").unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_toml(), cfg.to_toml());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let text = toy().to_toml().replacen("seed = 3", "seed = 3\nsede = 4", 1);
        assert!(RunConfig::parse(&text, "mem").is_err());
        let text = toy().to_toml().replacen("batch_size = 32", "batch_size = 0", 1);
        assert!(RunConfig::parse(&text, "mem").is_err());
    }
}
