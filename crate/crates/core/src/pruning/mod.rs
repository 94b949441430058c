//! Gradual back-to-front block pruning with distillation, and the two
//! competitor schedules used to judge it.
//!
//! Stage `b` (from the last prunable block down to the target block) swaps
//! block `b` for a freshly initialized LWC block, carries every other
//! parameter over from the previous stage, and retrains the whole network
//! (first layers and classifier included) under
//! `(1 - lambda) * ce + lambda * distr` against a frozen, unpruned teacher.
//! The teacher is usually the real-valued pretrained model of the baseline;
//! the baseline itself works too.
//!
//! Every pruned model, gradual stage or competitor, gets the same retraining
//! budget of `stage_epochs` epochs.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::bail;
use crate::topology::{count_model_size, NetConfig};
use crate::train::{
    evaluate, pretrain_then_binarize, EpochRecord, LossConfig, Mode, Network, Stage, TrainConfig, TrainState,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneConfig {
    /// Lowest block (1-based) that gets replaced.
    pub target_block: usize,
    /// Retraining epochs per gradual stage.
    pub stage_epochs: usize,
    /// Batch size, loss, optimizer and augmentation of the retraining runs.
    pub train: TrainConfig,
}

impl Default for PruneConfig {
    fn default() -> Self {
        let mut train = TrainConfig::default();
        train.optimizer.final_lr = 1e-10;
        Self {
            target_block: 1,
            stage_epochs: 2,
            train,
        }
    }
}

impl PruneConfig {
    /// Blocks replaced by the gradual schedule, in stage order.
    pub fn schedule(&self, config: &NetConfig) -> Result<Vec<usize>> {
        let n = config.blocks.len();
        if self.target_block == 0 || self.target_block > n {
            bail!(Config, "target block {} outside 1..={}", self.target_block, n);
        }
        let blocks: Vec<usize> = (self.target_block..=n).rev().collect();
        for &b in &blocks {
            if !config.blocks[b - 1].prunable {
                bail!(
                    Replacement,
                    "block {} ({}) is not prunable",
                    b,
                    config.blocks[b - 1].name
                );
            }
        }
        Ok(blocks)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneKind {
    Baseline,
    Gradual,
    OneShot,
    Scratch,
}

impl PruneKind {
    pub fn label(self) -> &'static str {
        match self {
            PruneKind::Baseline => "baseline",
            PruneKind::Gradual => "gradual",
            PruneKind::OneShot => "oneshot",
            PruneKind::Scratch => "scratch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    /// Test accuracy in percent.
    pub accuracy: f64,
    pub size_bits: u64,
    pub binary_bits: u64,
    pub real_bits: u64,
    pub bops: u64,
}

/// Snapshot after one pruning stage.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneStage {
    pub kind: PruneKind,
    /// Block replaced in this stage (gradual), or the lowest replaced block.
    pub block: usize,
    /// Blocks that are LWC blocks in this network, ascending.
    pub replaced: Vec<usize>,
    pub network: Network,
    pub metrics: StageMetrics,
}

/// Test accuracy, model size and BOPs of a network.
pub fn stage_metrics(net: &Network, data: &Dataset, gamma: f64) -> Result<StageMetrics> {
    let size = count_model_size(&net.config)?;
    Ok(StageMetrics {
        accuracy: evaluate(net, data, Split::Test, gamma)?,
        size_bits: size.total_bits,
        binary_bits: size.binary_bits,
        real_bits: size.real_bits,
        bops: size.bops,
    })
}

/// LWC blocks of a configuration, ascending.
pub fn lwc_blocks(config: &NetConfig) -> Vec<usize> {
    (1..=config.blocks.len())
        .filter(|b| config.blocks[b - 1].is_lwc())
        .collect()
}

/// Evaluates `network` into a stage row.
pub fn snapshot(kind: PruneKind, block: usize, network: Network, data: &Dataset, gamma: f64) -> Result<PruneStage> {
    Ok(PruneStage {
        kind,
        block,
        replaced: lwc_blocks(&network.config),
        metrics: stage_metrics(&network, data, gamma)?,
        network,
    })
}

fn in_stage<T>(block: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Stage { .. } => e,
        other => Error::Stage {
            stage: block,
            source: Box::new(other),
        },
    })
}

/// Metrics row of the unpruned baseline.
pub fn baseline_stage(baseline: &Network, data: &Dataset, gamma: f64) -> Result<PruneStage> {
    if baseline.mode != Mode::Binary {
        bail!(Config, "the pruned baseline must be a binarized network");
    }
    snapshot(PruneKind::Baseline, 0, baseline.clone(), data, gamma)
}

/// Training state of gradual stage `block`: `prev` with block `block`
/// swapped for a fresh LWC block of its configured group count.
pub fn start_stage(prev: &Network, block: usize, data: &Dataset, cfg: &PruneConfig, seed: u64) -> Result<TrainState> {
    in_stage(
        block,
        (|| {
            let groups = prev
                .config
                .blocks
                .get(block.wrapping_sub(1))
                .map(|b| b.lwc_groups)
                .ok_or_else(|| Error::Replacement(format!("block {block} does not exist")))?;
            let net = prev.with_replaced_block(block, groups, seed)?;
            TrainState::new(net, Stage::Prune(block), cfg.stage_epochs, data, &cfg.train)
        })(),
    )
}

/// Retrains a stage state against the teacher and snapshots the result.
pub fn finish_stage(
    mut state: TrainState,
    teacher: &Network,
    data: &Dataset,
    cfg: &PruneConfig,
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochRecord, &TrainState) -> Result<()>,
) -> Result<PruneStage> {
    let block = match state.stage {
        Stage::Prune(b) => b,
        other => bail!(Config, "state of stage {:?} is not a pruning stage", other),
    };
    in_stage(block, state.run(data, &cfg.train, seed, Some(teacher), on_epoch))?;
    in_stage(
        block,
        snapshot(PruneKind::Gradual, block, state.network, data, cfg.train.gamma),
    )
}

/// Gradual pruning of the binarized `baseline`: one stage per block from the
/// last down to `cfg.target_block`, each initialized from the previous stage.
pub fn prune_gradual(
    baseline: &Network,
    teacher: &Network,
    data: &Dataset,
    cfg: &PruneConfig,
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochRecord, &TrainState) -> Result<()>,
) -> Result<Vec<PruneStage>> {
    if baseline.mode != Mode::Binary {
        bail!(Config, "the pruned baseline must be a binarized network");
    }
    let mut stages: Vec<PruneStage> = Vec::new();
    for block in cfg.schedule(&baseline.config)? {
        let prev = stages.last().map_or(baseline, |s| &s.network);
        let state = start_stage(prev, block, data, cfg, seed)?;
        stages.push(finish_stage(state, teacher, data, cfg, seed, on_epoch)?);
    }
    Ok(stages)
}

/// Configuration with every scheduled block replaced by its LWC block.
pub fn pruned_config(config: &NetConfig, cfg: &PruneConfig) -> Result<NetConfig> {
    let mut out = config.clone();
    for b in cfg.schedule(config)? {
        out = out.replace_block(b, config.blocks[b - 1].lwc_groups)?;
    }
    Ok(out)
}

/// Starting state and training settings of the one-shot competitor: every
/// scheduled block of the baseline replaced at once, cross-entropy only.
pub fn oneshot_state(
    baseline: &Network,
    data: &Dataset,
    cfg: &PruneConfig,
    seed: u64,
) -> Result<(TrainState, TrainConfig)> {
    if baseline.mode != Mode::Binary {
        bail!(Config, "the pruned baseline must be a binarized network");
    }
    let mut net = baseline.clone();
    for b in cfg.schedule(&baseline.config)? {
        net = net.with_replaced_block(b, baseline.config.blocks[b - 1].lwc_groups, seed)?;
    }
    let mut train = cfg.train;
    train.loss = LossConfig {
        lambda: 0.0,
        ..train.loss
    };
    let state = TrainState::new(net, Stage::OneShot, cfg.stage_epochs, data, &train)?;
    Ok((state, train))
}

/// One-shot depth pruning, trained to completion.
pub fn prune_oneshot_depth(
    baseline: &Network,
    data: &Dataset,
    cfg: &PruneConfig,
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochRecord, &TrainState) -> Result<()>,
) -> Result<PruneStage> {
    let (mut state, train) = oneshot_state(baseline, data, cfg, seed)?;
    state.run(data, &train, seed, None, on_epoch)?;
    snapshot(PruneKind::OneShot, cfg.target_block, state.network, data, train.gamma)
}

/// Trains a pruned topology from random weights with the usual two-stage
/// protocol and cross-entropy only.
pub fn train_from_scratch(
    config: NetConfig,
    data: &Dataset,
    train: &TrainConfig,
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochRecord, &TrainState) -> Result<()>,
) -> Result<PruneStage> {
    let block = lwc_blocks(&config).first().copied().unwrap_or(0);
    let state = pretrain_then_binarize(config, data, train, seed, on_epoch)?;
    snapshot(PruneKind::Scratch, block, state.network, data, train.gamma)
}

/// Trade-off table: the baseline row, then one row per stage.
pub fn emit_tradeoff(baseline: &PruneStage, stages: &[PruneStage]) -> String {
    let mut out = String::from("stage,kind,block,replaced,size_bits,binary_bits,real_bits,bops,accuracy\n");
    for (i, s) in core::iter::once(baseline).chain(stages).enumerate() {
        let replaced: Vec<String> = s.replaced.iter().map(|b| format!("{b}")).collect();
        let m = &s.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:.4}",
            i,
            s.kind.label(),
            s.block,
            replaced.join(" "),
            m.size_bits,
            m.binary_bits,
            m.real_bits,
            m.bops,
            m.accuracy
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, SyntheticSpec};
    use crate::encoders::EncodingKind;
    use crate::topology::{reference, EncodingSpec};

    fn setup() -> (Network, Dataset, PruneConfig) {
        let data = make_synthetic(&SyntheticSpec {
            classes: 3,
            train: 64,
            test: 30,
            seed: 5,
            ..Default::default()
        })
        .unwrap();
        let cfg = reference::toy(
            EncodingSpec {
                kind: EncodingKind::Glt,
                planes: 8,
                bits: 8,
            },
            3,
        );
        let teacher = Network::new(cfg, Mode::Binary, 2).unwrap();
        let prune = PruneConfig {
            target_block: 1,
            stage_epochs: 1,
            train: TrainConfig {
                batch_size: 16,
                ..PruneConfig::default().train
            },
        };
        (teacher, data, prune)
    }

    #[test]
    fn gradual_stages_shrink_and_follow_schedule() {
        let (baseline, data, cfg) = setup();
        let teacher = baseline.to_mode(Mode::Real);
        let before = (baseline.clone(), teacher.clone());
        let stages = prune_gradual(&baseline, &teacher, &data, &cfg, 1, &mut |_, _| Ok(())).unwrap();
        assert_eq!((baseline.clone(), teacher.clone()), before);
        assert_eq!(stages.len(), 3);
        assert_eq!(stages.iter().map(|s| s.block).collect::<Vec<_>>(), vec![3, 2, 1]);
        assert_eq!(stages[0].replaced, vec![3]);
        assert_eq!(stages[1].replaced, vec![2, 3]);
        assert_eq!(stages[2].replaced, vec![1, 2, 3]);
        let base = baseline_stage(&baseline, &data, 1.0).unwrap();
        let mut prev = base.metrics;
        for s in &stages {
            assert!(s.metrics.size_bits < prev.size_bits);
            assert!(s.metrics.bops < prev.bops);
            prev = s.metrics;
        }
        let csv = emit_tradeoff(&base, &stages);
        assert_eq!(csv.lines().count(), 5);
        assert_eq!(csv, emit_tradeoff(&base, &stages));

        let oneshot = prune_oneshot_depth(&baseline, &data, &cfg, 1, &mut |_, _| Ok(())).unwrap();
        assert_eq!(oneshot.network.config, stages[2].network.config);
        assert_eq!(pruned_config(&baseline.config, &cfg).unwrap(), stages[2].network.config);
        let (state, train) = oneshot_state(&baseline, &data, &cfg, 1).unwrap();
        assert_eq!(
            (state.total_epochs, state.stage, train.loss.lambda),
            (cfg.stage_epochs, Stage::OneShot, 0.0)
        );
        assert!(oneshot_state(&baseline.to_mode(Mode::Real), &data, &cfg, 1).is_err());
    }

    #[test]
    fn stage_starts_from_previous_weights() {
        let (teacher, data, cfg) = setup();
        let s = start_stage(&teacher, 3, &data, &cfg, 4).unwrap();
        let r = teacher.unit_range(3);
        assert_eq!(&s.network.units[..r.start], &teacher.units[..r.start]);
        assert_eq!(s.network.classifier, teacher.classifier);
        assert_eq!(s.network.encoder, teacher.encoder);
        assert_eq!(s.network.unit_range(3).len(), 1);
    }

    #[test]
    fn target_equal_to_last_block_is_single_stage() {
        let (teacher, data, mut cfg) = setup();
        cfg.target_block = 3;
        assert_eq!(cfg.schedule(&teacher.config).unwrap(), vec![3]);
        cfg.target_block = 4;
        assert!(cfg.schedule(&teacher.config).is_err());
        let mut c = teacher.config.clone();
        c.blocks[1].prunable = false;
        cfg.target_block = 1;
        assert!(matches!(cfg.schedule(&c), Err(Error::Replacement(_))));
        let _ = data;
    }
}
