#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use thermobnn_cli::config::RunConfig;
use thermobnn_cli::dataset::save_dataset;
use thermobnn_core::data::{make_synthetic, Dataset, SyntheticSpec};
use thermobnn_core::encoders::EncodingKind;
use thermobnn_core::pruning::PruneConfig;
use thermobnn_core::topology::{
    BlockBody, BlockSpec, ClassifierSpec, ConvSpec, EncodingSpec, InputSpec, NetConfig, CONFIG_VERSION,
};
use thermobnn_core::train::TrainConfig;

fn block(name: &str, ch: usize, groups: usize) -> BlockSpec {
    BlockSpec {
        name: name.into(),
        prunable: true,
        lwc_groups: groups,
        body: BlockBody::Layers {
            layers: vec![ConvSpec::new(ch, 2), ConvSpec::new(ch, 1)],
        },
    }
}

/// 3x8x8 input, stem to 4 channels, three two-layer blocks, 3 classes.
pub fn small_net(kind: EncodingKind) -> NetConfig {
    NetConfig {
        version: CONFIG_VERSION,
        name: "small".into(),
        input: InputSpec {
            channels: 3,
            height: 8,
            width: 8,
            encoding: EncodingSpec {
                kind,
                planes: 4,
                bits: 8,
            },
        },
        stem: vec![ConvSpec::new(4, 1)],
        blocks: vec![block("b1", 8, 1), block("b2", 16, 2), block("b3", 32, 4)],
        classifier: ClassifierSpec {
            classes: 3,
            logit_scale: None,
        },
    }
}

pub fn small_config(kind: EncodingKind) -> RunConfig {
    let mut train = TrainConfig {
        batch_size: 16,
        pretrain_epochs: 1,
        binary_epochs: 1,
        gamma: 2.2,
        ..Default::default()
    };
    train.optimizer.initial_lr = 5e-3;
    let mut prune = PruneConfig {
        target_block: 2,
        stage_epochs: 1,
        train,
    };
    prune.train.optimizer.final_lr = 1e-10;
    RunConfig {
        seed: Some(7),
        net: small_net(kind),
        train,
        prune,
    }
}

pub fn small_data() -> Dataset {
    make_synthetic(&SyntheticSpec {
        classes: 3,
        train: 48,
        test: 30,
        height: 8,
        width: 8,
        seed: 3,
        ..Default::default()
    })
    .unwrap()
}

pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn write_config(&self, name: &str, cfg: &RunConfig) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, cfg.to_toml()).unwrap();
        p
    }

    pub fn write_data(&self, name: &str, data: &Dataset) -> PathBuf {
        let p = self.path(name);
        save_dataset(&p, data).unwrap();
        p
    }

    /// A 3-channel 8x8 PNG of odd grey levels, none on an even ADC code.
    pub fn write_image(&self, name: &str) -> PathBuf {
        let p = self.path(name);
        image::RgbImage::from_fn(8, 8, |x, y| {
            let v = (y * 8 + x) * 4;
            image::Rgb([(v | 1) as u8, ((255 - v) | 1) as u8, ((v * 3 % 256) | 1) as u8])
        })
        .save(&p)
        .unwrap();
        p
    }
}

pub fn thermobnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thermobnn"))
        .args(args)
        .output()
        .unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn sha256(path: &Path) -> String {
    Sha256::digest(std::fs::read(path).unwrap())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
