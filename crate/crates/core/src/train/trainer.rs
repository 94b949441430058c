use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{cross_entropy, distributional_loss_grad, total_loss, LossConfig};
use super::network::{argmax_rows, ForwardPass, Grads, Mode, Network};
use super::optim::{Optimizer, OptimizerConfig};
use crate::data::{AugmentConfig, Dataset, Split};
use crate::encoders::SurrogateConfig;
use crate::error::bail;
use crate::rng::{rng_for, stream};
use crate::topology::NetConfig;
use crate::Result;

/// Which part of the protocol produced a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Binarized,
    /// Gradual pruning stage for the given block (1-based).
    Prune(usize),
    /// Competitor runs of the pruning experiment.
    OneShot,
    Scratch,
}

impl Stage {
    pub fn word(self) -> u64 {
        match self {
            Stage::Pretrain => 0,
            Stage::Binarized => 1,
            Stage::OneShot => 2,
            Stage::Scratch => 3,
            Stage::Prune(b) => 100 + b as u64,
        }
    }

    pub fn label(self) -> alloc::string::String {
        match self {
            Stage::Pretrain => "pretrain".into(),
            Stage::Binarized => "binarized".into(),
            Stage::OneShot => "oneshot".into(),
            Stage::Scratch => "scratch".into(),
            Stage::Prune(b) => format!("prune-{b}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub binary_epochs: usize,
    /// Pixels are normalized to `[0, 1]` and raised to this power.
    pub gamma: f64,
    pub optimizer: OptimizerConfig,
    pub loss: LossConfig,
    pub surrogate: SurrogateConfig,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            pretrain_epochs: 2,
            binary_epochs: 2,
            gamma: 1.0,
            optimizer: OptimizerConfig::default(),
            loss: LossConfig::default(),
            surrogate: SurrogateConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            bail!(Config, "batch size must be at least 2");
        }
        if !(self.gamma > 0.0) {
            bail!(Config, "gamma must be positive");
        }
        self.optimizer.validate()?;
        self.loss.validate()?;
        self.surrogate.validate()
    }

    /// Batches per epoch; a trailing batch smaller than 2 is dropped.
    pub fn batches_per_epoch(&self, samples: usize) -> usize {
        let full = samples / self.batch_size;
        if samples % self.batch_size >= 2 {
            full + 1
        } else {
            full
        }
    }
}

/// Summary of one training epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: Stage,
    pub epoch: usize,
    /// Optimizer steps taken in this stage so far.
    pub step: u64,
    /// Learning rate of the epoch's last update.
    pub lr: f64,
    pub loss: f64,
    pub ce: f64,
    pub distr: f64,
    pub train_accuracy: f64,
}

/// Everything needed to continue training: network, optimizer, position.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub network: Network,
    pub optimizer: Optimizer,
    pub stage: Stage,
    pub epochs_done: usize,
    pub total_epochs: usize,
}

/// Result of one forward/backward pass over a batch.
pub struct StepOutcome {
    pub loss: f64,
    pub ce: f64,
    pub distr: f64,
    pub correct: usize,
    pub grads: Grads,
    pub pass: ForwardPass,
}

/// Normalized (and optionally augmented) images of `idx`.
pub fn batch_images(
    data: &Dataset,
    idx: &[usize],
    gamma: f64,
    augment: Option<(&AugmentConfig, u64, Stage, usize)>,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(idx.len() * data.dims.len());
    for &i in idx {
        match augment {
            Some((cfg, seed, stage, epoch)) if !cfg.is_identity() => {
                let mut rng = rng_for(seed, &[stream::AUGMENT, stage.word(), epoch as u64, i as u64]);
                let img = cfg.augment(data.image(i), data.dims, &mut rng)?;
                data.normalize_into(&img, gamma, &mut out);
            }
            _ => data.normalize_into(data.image(i), gamma, &mut out),
        }
    }
    Ok(out)
}

/// Loss and gradients of one batch. With a teacher, the loss is
/// `(1 - lambda) * ce + lambda * distr` against the teacher's logits.
pub fn forward_backward(
    net: &Network,
    images: &[f64],
    labels: &[u16],
    teacher_logits: Option<&[f32]>,
    loss: &LossConfig,
    surrogate: &SurrogateConfig,
) -> Result<StepOutcome> {
    let n = labels.len();
    let pass = net.forward(images, n, true)?;
    let classes = net.classifier.classes;
    let (ce, mut dlogits) = cross_entropy(&pass.logits, labels, classes)?;
    let (distr, total) = match teacher_logits {
        Some(t) => {
            let (distr, dd) = distributional_loss_grad(t, &pass.logits, classes, loss.temperature)?;
            for (g, d) in dlogits.iter_mut().zip(dd) {
                *g = (1.0 - loss.lambda) * *g + loss.lambda * d;
            }
            (distr, total_loss(ce, distr, loss.lambda))
        }
        None => (0.0, ce),
    };
    if !total.is_finite() {
        let bad = pass.logits.iter().filter(|v| !v.is_finite()).count();
        bail!(
            Numeric,
            "loss is {} (ce {}, distr {}, {} non-finite logits)",
            total,
            ce,
            distr,
            bad
        );
    }
    let grads = net.backward(&pass, &dlogits, surrogate)?;
    let correct = argmax_rows(&pass.logits, classes)
        .iter()
        .zip(labels)
        .filter(|(p, l)| **p == usize::from(**l))
        .count();
    Ok(StepOutcome {
        loss: total,
        ce,
        distr,
        correct,
        grads,
        pass,
    })
}

impl TrainState {
    /// Fresh optimizer over `epochs` epochs of `data`'s train split.
    pub fn new(network: Network, stage: Stage, epochs: usize, data: &Dataset, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let steps = (epochs * cfg.batches_per_epoch(data.indices(Split::Train).len())) as u64;
        let optimizer = Optimizer::new(cfg.optimizer, &network.param_sizes(), steps)?;
        Ok(Self {
            network,
            optimizer,
            stage,
            epochs_done: 0,
            total_epochs: epochs,
        })
    }

    pub fn finished(&self) -> bool {
        self.epochs_done >= self.total_epochs
    }

    /// One pass over the shuffled train split.
    pub fn train_epoch(
        &mut self,
        data: &Dataset,
        cfg: &TrainConfig,
        seed: u64,
        teacher: Option<&Network>,
    ) -> Result<EpochRecord> {
        if self.network.shapes.classes != data.classes {
            bail!(
                Config,
                "network has {} classes, data {}",
                self.network.shapes.classes,
                data.classes
            );
        }
        let epoch = self.epochs_done;
        let mut order = data.indices(Split::Train);
        order.shuffle(&mut rng_for(seed, &[stream::SHUFFLE, self.stage.word(), epoch as u64]));
        let (mut loss, mut ce, mut distr, mut correct, mut seen) = (0.0, 0.0, 0.0, 0usize, 0usize);
        let mut lr = self.optimizer.current_lr();
        let loss_cfg = match teacher {
            Some(_) => cfg.loss,
            None => LossConfig {
                lambda: 0.0,
                ..cfg.loss
            },
        };
        for batch in order.chunks(cfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let images = batch_images(data, batch, cfg.gamma, Some((&cfg.augment, seed, self.stage, epoch)))?;
            let labels: Vec<u16> = batch.iter().map(|i| data.labels[*i]).collect();
            let teacher_logits = match teacher {
                Some(t) => Some(t.predict(&images, batch.len())?),
                None => None,
            };
            let out = forward_backward(
                &self.network,
                &images,
                &labels,
                teacher_logits.as_deref(),
                &loss_cfg,
                &cfg.surrogate,
            )?;
            self.network.update_running_stats(&out.pass);
            lr = self.optimizer.current_lr();
            self.optimizer.step(&mut self.network, &out.grads)?;
            let b = batch.len() as f64;
            loss += out.loss * b;
            ce += out.ce * b;
            distr += out.distr * b;
            correct += out.correct;
            seen += batch.len();
        }
        if seen == 0 {
            bail!(Config, "train split has fewer than 2 samples");
        }
        self.epochs_done += 1;
        let s = seen as f64;
        Ok(EpochRecord {
            stage: self.stage,
            epoch: self.epochs_done,
            step: self.optimizer.step,
            lr,
            loss: loss / s,
            ce: ce / s,
            distr: distr / s,
            train_accuracy: 100.0 * correct as f64 / s,
        })
    }

    /// Trains until the epoch budget is used, reporting every epoch.
    pub fn run(
        &mut self,
        data: &Dataset,
        cfg: &TrainConfig,
        seed: u64,
        teacher: Option<&Network>,
        on_epoch: &mut dyn FnMut(&EpochRecord, &TrainState) -> Result<()>,
    ) -> Result<()> {
        while !self.finished() {
            let rec = self.train_epoch(data, cfg, seed, teacher)?;
            on_epoch(&rec, self)?;
        }
        Ok(())
    }
}

/// Accuracy in percent of `net` (evaluation mode) on one split.
pub fn evaluate(net: &Network, data: &Dataset, split: Split, gamma: f64) -> Result<f64> {
    let idx = data.indices(split);
    if idx.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for batch in idx.chunks(256) {
        let images = batch_images(data, batch, gamma, None)?;
        let logits = net.predict(&images, batch.len())?;
        correct += argmax_rows(&logits, net.classifier.classes)
            .iter()
            .zip(batch)
            .filter(|(p, i)| **p == usize::from(data.labels[**i]))
            .count();
    }
    Ok(100.0 * correct as f64 / idx.len() as f64)
}

/// Starting state of the two-stage protocol for a random network.
pub fn initial_state(config: NetConfig, data: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<TrainState> {
    let net = Network::new(config, Mode::Real, seed)?;
    TrainState::new(net, Stage::Pretrain, cfg.pretrain_epochs, data, cfg)
}

/// Moves a finished pretraining state into the binarized stage: trained
/// real weights become latent weights, normalization statistics and
/// thresholds carry over, and the optimizer restarts.
pub fn binarize(state: &TrainState, data: &Dataset, cfg: &TrainConfig) -> Result<TrainState> {
    if state.stage != Stage::Pretrain {
        bail!(Config, "only a pretraining state can be binarized");
    }
    let mut net = state.network.to_mode(Mode::Binary);
    net.enforce_constraints();
    TrainState::new(net, Stage::Binarized, cfg.binary_epochs, data, cfg)
}

/// Continues the two-stage protocol from any point of it.
pub fn resume_protocol(
    mut state: TrainState,
    data: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochRecord, &TrainState) -> Result<()>,
) -> Result<TrainState> {
    if state.stage == Stage::Pretrain {
        state.run(data, cfg, seed, None, on_epoch)?;
        state = binarize(&state, data, cfg)?;
    }
    if state.stage != Stage::Binarized {
        bail!(
            Config,
            "state of stage {:?} is not part of the two-stage protocol",
            state.stage
        );
    }
    state.run(data, cfg, seed, None, on_epoch)?;
    Ok(state)
}

/// Real-valued pretraining followed by fully-binarized training.
pub fn pretrain_then_binarize(
    config: NetConfig,
    data: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochRecord, &TrainState) -> Result<()>,
) -> Result<TrainState> {
    let state = initial_state(config, data, cfg, seed)?;
    resume_protocol(state, data, cfg, seed, on_epoch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, SyntheticSpec};
    use crate::encoders::EncodingKind;
    use crate::topology::{ClassifierSpec, EncodingSpec, InputSpec, CONFIG_VERSION};
    use crate::train::network::tests::tiny_config;
    use crate::train::IntegerNetwork;

    fn tiny_data(seed: u64) -> Dataset {
        make_synthetic(&SyntheticSpec {
            classes: 3,
            train: 96,
            test: 30,
            height: 8,
            width: 8,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            pretrain_epochs: 2,
            binary_epochs: 2,
            ..Default::default()
        }
    }

    #[test]
    fn linear_layer_loss_decreases() {
        // encoder planes straight into the classifier
        let cfg = NetConfig {
            version: CONFIG_VERSION,
            name: "linear".into(),
            input: InputSpec {
                channels: 1,
                height: 2,
                width: 2,
                encoding: EncodingSpec {
                    kind: EncodingKind::Fixed,
                    planes: 2,
                    bits: 8,
                },
            },
            stem: Vec::new(),
            blocks: Vec::new(),
            classifier: ClassifierSpec {
                classes: 4,
                logit_scale: Some(1.0),
            },
        };
        // class k lights pixel k
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for k in 0..4 {
            let mut px = [0.1; 4];
            px[k] = 0.9;
            images.extend(px);
            labels.push(k as u16);
        }
        let mut net = Network::new(cfg, Mode::Real, 1).unwrap();
        let mut opt = Optimizer::new(
            OptimizerConfig {
                initial_lr: 5e-2,
                ..Default::default()
            },
            &net.param_sizes(),
            100,
        )
        .unwrap();
        let loss = LossConfig::default();
        let first = forward_backward(&net, &images, &labels, None, &loss, &SurrogateConfig::default()).unwrap();
        let mut last = first.loss;
        for _ in 0..100 {
            let out = forward_backward(&net, &images, &labels, None, &loss, &SurrogateConfig::default()).unwrap();
            opt.step(&mut net, &out.grads).unwrap();
            last = out.loss;
        }
        assert!(last < 0.5 * first.loss, "{} -> {}", first.loss, last);
    }

    #[test]
    fn training_is_reproducible() {
        let data = tiny_data(1);
        let run = || {
            let mut log = Vec::new();
            let s = pretrain_then_binarize(tiny_config(EncodingKind::Glt), &data, &quick(), 7, &mut |r, _| {
                log.push(r.clone());
                Ok(())
            })
            .unwrap();
            (s, log)
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert_eq!(la.len(), 4);
        assert_eq!(a.stage, Stage::Binarized);
        assert_eq!(a.network.mode, Mode::Binary);
        // thresholds stay valid under training
        if let crate::train::InputEncoder::Learned(p) = &a.network.encoder {
            assert!(p.latent().iter().all(|v| *v >= 0.05));
        } else {
            panic!("encoder kind changed");
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let data = tiny_data(2);
        let cfg = quick();
        let full = pretrain_then_binarize(tiny_config(EncodingKind::Glt), &data, &cfg, 3, &mut |_, _| Ok(())).unwrap();
        let mut snapshot = None;
        let _ = pretrain_then_binarize(tiny_config(EncodingKind::Glt), &data, &cfg, 3, &mut |r, s| {
            if r.stage == Stage::Pretrain && r.epoch == 1 {
                snapshot = Some(s.clone());
            }
            Ok(())
        });
        let resumed = resume_protocol(snapshot.unwrap(), &data, &cfg, 3, &mut |_, _| Ok(())).unwrap();
        assert_eq!(resumed, full);
    }

    #[test]
    fn folded_network_matches_float_evaluation() {
        let data = tiny_data(3);
        let s = pretrain_then_binarize(tiny_config(EncodingKind::Glt), &data, &quick(), 5, &mut |_, _| Ok(())).unwrap();
        let mut net = s.network.clone();
        // include negative batch-norm scales so channel flips are exercised
        net.units[1].bn.gamma[0] = -0.7;
        net.units[2].bn.gamma[3] = -1.3;
        net.units[0].bn.gamma[2] = 0.0;
        let idx = data.indices(Split::Test);
        let images = batch_images(&data, &idx, 1.0, None).unwrap();
        let logits = net.predict(&images, idx.len()).unwrap();
        let folded = IntegerNetwork::fold(&net, None).unwrap();
        let dims = data.dims;
        for (i, row) in logits.chunks(3).enumerate() {
            let view = crate::encoders::ImageView::new(dims, &images[i * dims.len()..(i + 1) * dims.len()]).unwrap();
            let scores = folded.scores(view).unwrap();
            for (l, s) in row.iter().zip(&scores) {
                assert_eq!(*l, net.classifier.scale * *s as f32);
            }
        }
        assert_eq!(folded.predict(&images, idx.len()).unwrap(), argmax_rows(&logits, 3));
    }

    #[test]
    fn pretraining_initialization_helps_binary_stage() {
        let data = make_synthetic(&SyntheticSpec {
            classes: 4,
            train: 192,
            test: 96,
            height: 8,
            width: 8,
            seed: 4,
            ..Default::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            batch_size: 16,
            pretrain_epochs: 6,
            binary_epochs: 6,
            ..Default::default()
        };
        let mut c = tiny_config(EncodingKind::Fixed);
        c.classifier.classes = 4;
        let staged = pretrain_then_binarize(c.clone(), &data, &cfg, 1, &mut |_, _| Ok(())).unwrap();
        let random = Network::new(c, Mode::Binary, 1).unwrap();
        let mut direct = TrainState::new(random, Stage::Binarized, cfg.binary_epochs, &data, &cfg).unwrap();
        direct.run(&data, &cfg, 1, None, &mut |_, _| Ok(())).unwrap();
        let a = evaluate(&staged.network, &data, Split::Test, 1.0).unwrap();
        let b = evaluate(&direct.network, &data, Split::Test, 1.0).unwrap();
        assert!(a >= b, "two-stage {a} vs binary-only {b}");
    }
}
