//! Versioned training checkpoints.
//!
//! File layout (little-endian):
//!
//! ```text
//! 0   magic        "TBNNCKPT"
//! 8   version      u32 (1)
//! 12  flags        u32 (0)
//! 16  payload len  u64
//! 24  sha256 of the payload, 32 bytes
//! 56  payload
//! ```
//!
//! The payload holds, in order: network config (TOML), training config
//! (TOML), seed, stage, epoch position, steps of earlier stages, mode,
//! conventions string, input encoder, every conv unit (latent weights,
//! packed sign snapshot, batch-norm affine and running statistics), the
//! classifier, and the optimizer (config, step counters, moments).
//! Vectors are `u64` length-prefixed; floats are stored as raw bits.
//! Packed snapshots store `sign(w)` with `sign(0) = +1` as bit 1, element
//! `k` in byte `k / 8`, bit `k % 8`; binary convolutions pad with -1.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thermobnn_core::bitcore::BitTensor;
use thermobnn_core::encoders::ThermoParams;
use thermobnn_core::topology::{count_model_size, NetConfig};
use thermobnn_core::train::{InputEncoder, Mode, Network, Optimizer, OptimizerConfig, Stage, TrainConfig, TrainState};

use crate::error::{data_err, CliResult};
use crate::fsutil::{self, Reader, Writer};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TBNNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_HEADER_LEN: usize = 56;
pub const CONVENTIONS: &str = "planes=channel-major;bit-order=lsb-first;sign0=+1;binary-padding=-1;comparator=ge";

/// Training state plus everything needed to continue it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: TrainState,
    pub train: TrainConfig,
    pub seed: u64,
    /// Optimizer steps taken in the stages before `state.stage`.
    pub steps_before: u64,
}

impl Checkpoint {
    pub fn new(state: TrainState, train: TrainConfig, seed: u64) -> Self {
        Self {
            state,
            train,
            seed,
            steps_before: 0,
        }
    }

    pub fn network(&self) -> &Network {
        &self.state.network
    }

    /// Optimizer steps since the start of the run.
    pub fn global_step(&self) -> u64 {
        self.steps_before + self.state.optimizer.step
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = self.payload();
        let mut w = Writer::default();
        w.buf.extend_from_slice(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.u32(0);
        w.u64(payload.len() as u64);
        w.buf.extend_from_slice(&Sha256::digest(&payload));
        w.buf.extend_from_slice(&payload);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> CliResult<Self> {
        let mut r = Reader::new(bytes, origin);
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(r.error(0, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.error(8, format!("unsupported checkpoint version {version}")));
        }
        let flags = r.u32()?;
        if flags != 0 {
            return Err(r.error(12, format!("unknown flags {flags:#x}")));
        }
        let len = r.u64()?;
        let hash = r.take(32)?;
        if len != r.remaining() as u64 {
            return Err(r.error(
                16,
                format!(
                    "payload length {len}, file has {} bytes after the header",
                    r.remaining()
                ),
            ));
        }
        let payload = r.take(len as usize)?;
        if Sha256::digest(payload).as_slice() != hash {
            return Err(r.error(24, "payload hash mismatch (corrupt checkpoint)"));
        }
        parse_payload(payload, origin)
    }

    /// Writes the checkpoint and its JSON sidecar (`<path>.json`), each atomically.
    pub fn save(&self, path: &Path) -> CliResult<()> {
        let bytes = self.to_bytes();
        fsutil::write_atomic(path, &bytes)?;
        let manifest = serde_json::to_string_pretty(&self.manifest(&bytes)).expect("manifest serializes") + "\n";
        fsutil::write_atomic(&sidecar_path(path), manifest.as_bytes())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        Self::from_bytes(&fsutil::read(path)?, &path.display().to_string())
    }

    fn manifest(&self, file: &[u8]) -> Manifest {
        let net = self.network();
        let size = count_model_size(&net.config).ok();
        Manifest {
            format: "thermobnn-checkpoint",
            version: CHECKPOINT_VERSION,
            payload_sha256: hex(&file[24..56]),
            file_sha256: hex(&Sha256::digest(file)),
            network: net.config.name.clone(),
            mode: match net.mode {
                Mode::Real => "real",
                Mode::Binary => "binary",
            },
            stage: self.state.stage.label(),
            epochs_done: self.state.epochs_done,
            total_epochs: self.state.total_epochs,
            global_step: self.global_step(),
            seed: self.seed,
            encoding: format!("{:?}", net.encoder.kind()).to_lowercase(),
            planes_per_channel: net.config.input.encoding.planes_per_channel(),
            conv_units: net.units.len(),
            size_bits: size.as_ref().map(|s| s.total_bits),
            bops: size.as_ref().map(|s| s.bops),
            conventions: CONVENTIONS,
        }
    }

    fn payload(&self) -> Vec<u8> {
        let net = self.network();
        let mut w = Writer::default();
        w.string(&toml::to_string(&net.config).expect("net config serializes"));
        w.string(&toml::to_string(&self.train).expect("train config serializes"));
        w.u64(self.seed);
        let (code, block) = stage_code(self.state.stage);
        w.u8(code);
        w.u64(block);
        w.u64(self.state.epochs_done as u64);
        w.u64(self.state.total_epochs as u64);
        w.u64(self.steps_before);
        w.u8(match net.mode {
            Mode::Real => 0,
            Mode::Binary => 1,
        });
        w.string(CONVENTIONS);
        match &net.encoder {
            InputEncoder::Learned(p) => {
                w.u8(0);
                w.u64(p.channels() as u64);
                w.u64(p.planes() as u64);
                w.u32(p.bits());
                w.f64(p.epsilon_min());
                w.f64s(p.latent());
            }
            InputEncoder::Fixed { planes, bits } => {
                w.u8(1);
                w.u64(*planes as u64);
                w.u32(*bits);
            }
            InputEncoder::Base2 { bits } => {
                w.u8(2);
                w.u32(*bits);
            }
        }
        w.u64(net.units.len() as u64);
        for u in &net.units {
            w.f32s(&u.weight);
            w.bytes(&u.binary_weights().to_bytes());
            w.f32s(&u.bn.gamma);
            w.f32s(&u.bn.beta);
            w.f32s(&u.bn.running_mean);
            w.f32s(&u.bn.running_var);
        }
        let cls = &net.classifier;
        w.f32(cls.scale);
        w.f32s(&cls.weight);
        w.bytes(&cls.binary_weights().to_bytes());
        let opt = &self.state.optimizer;
        let c = &opt.config;
        for v in [c.initial_lr, c.final_lr, c.beta1, c.beta2, c.eps] {
            w.f64(v);
        }
        w.u8(u8::from(c.rectify));
        w.u64(opt.total_steps);
        w.u64(opt.step);
        for moments in [&opt.m, &opt.v] {
            w.u64(moments.len() as u64);
            moments.iter().for_each(|b| w.f64s(b));
        }
        w.buf
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".json");
    path.with_file_name(name)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct Manifest {
    format: &'static str,
    version: u32,
    payload_sha256: String,
    file_sha256: String,
    network: String,
    mode: &'static str,
    stage: String,
    epochs_done: usize,
    total_epochs: usize,
    global_step: u64,
    seed: u64,
    encoding: String,
    planes_per_channel: usize,
    conv_units: usize,
    size_bits: Option<u64>,
    bops: Option<u64>,
    conventions: &'static str,
}

fn stage_code(stage: Stage) -> (u8, u64) {
    match stage {
        Stage::Pretrain => (0, 0),
        Stage::Binarized => (1, 0),
        Stage::Prune(b) => (2, b as u64),
        Stage::OneShot => (3, 0),
        Stage::Scratch => (4, 0),
    }
}

fn parse_payload(payload: &[u8], origin: &str) -> CliResult<Checkpoint> {
    let base = CHECKPOINT_HEADER_LEN;
    let mut r = Reader::new(payload, origin);
    let at = |r: &Reader| base + r.pos();
    let err = |pos: usize, msg: String| data_err!("{origin}: byte {pos}: {msg}");

    let pos = at(&r);
    let config: NetConfig = toml::from_str(&r.string()?).map_err(|e| err(pos, format!("network config: {e}")))?;
    let pos = at(&r);
    let train: TrainConfig = toml::from_str(&r.string()?).map_err(|e| err(pos, format!("training config: {e}")))?;
    let seed = r.u64()?;
    let pos = at(&r);
    let (code, block) = (r.u8()?, r.u64()? as usize);
    let stage = match code {
        0 => Stage::Pretrain,
        1 => Stage::Binarized,
        2 => Stage::Prune(block),
        3 => Stage::OneShot,
        4 => Stage::Scratch,
        other => return Err(err(pos, format!("unknown stage code {other}"))),
    };
    let epochs_done = r.u64()? as usize;
    let total_epochs = r.u64()? as usize;
    let steps_before = r.u64()?;
    let pos = at(&r);
    let mode = match r.u8()? {
        0 => Mode::Real,
        1 => Mode::Binary,
        other => return Err(err(pos, format!("unknown mode {other}"))),
    };
    let pos = at(&r);
    let conventions = r.string()?;
    if conventions != CONVENTIONS {
        return Err(err(pos, format!("unsupported conventions `{conventions}`")));
    }

    let mut net = Network::new(config, mode, 0).map_err(|e| err(base, format!("network config: {e}")))?;
    let pos = at(&r);
    net.encoder = match r.u8()? {
        0 => {
            let (c, m, bits, eps) = (r.u64()? as usize, r.u64()? as usize, r.u32()?, r.f64()?);
            let latent = r.f64s()?;
            InputEncoder::Learned(
                ThermoParams::from_latent(c, m, bits, eps, latent).map_err(|e| err(pos, e.to_string()))?,
            )
        }
        1 => InputEncoder::Fixed {
            planes: r.u64()? as usize,
            bits: r.u32()?,
        },
        2 => InputEncoder::Base2 { bits: r.u32()? },
        other => return Err(err(pos, format!("unknown encoder {other}"))),
    };
    if net.encoder.kind() != net.config.input.encoding.kind {
        return Err(err(pos, "encoder does not match the network config".into()));
    }

    let pos = at(&r);
    let units = r.u64()? as usize;
    if units != net.units.len() {
        return Err(err(pos, format!("{units} conv units, config has {}", net.units.len())));
    }
    let sized = |r: &mut Reader, n: usize, what: &str| -> CliResult<Vec<f32>> {
        let pos = at(r);
        let v = r.f32s()?;
        if v.len() != n {
            return Err(err(pos, format!("{what}: {} values, {n} expected", v.len())));
        }
        Ok(v)
    };
    let packed = |r: &mut Reader, expect: &BitTensor, what: &str| -> CliResult<()> {
        let pos = at(r);
        if r.bytes()? != expect.to_bytes().as_slice() {
            return Err(err(
                pos,
                format!("{what}: packed snapshot disagrees with the latent weights"),
            ));
        }
        Ok(())
    };
    for (k, u) in net.units.iter_mut().enumerate() {
        let co = u.shape.out_channels;
        u.weight = sized(&mut r, u.weight.len(), &format!("unit {k} weights"))?;
        packed(&mut r, &u.binary_weights(), &format!("unit {k}"))?;
        u.bn.gamma = sized(&mut r, co, "bn gamma")?;
        u.bn.beta = sized(&mut r, co, "bn beta")?;
        u.bn.running_mean = sized(&mut r, co, "bn mean")?;
        u.bn.running_var = sized(&mut r, co, "bn variance")?;
    }
    net.classifier.scale = r.f32()?;
    net.classifier.weight = sized(&mut r, net.classifier.weight.len(), "classifier weights")?;
    packed(&mut r, &net.classifier.binary_weights(), "classifier")?;

    let mut c = [0.0; 5];
    for v in c.iter_mut() {
        *v = r.f64()?;
    }
    let rectify = r.u8()? != 0;
    let config = OptimizerConfig {
        initial_lr: c[0],
        final_lr: c[1],
        beta1: c[2],
        beta2: c[3],
        eps: c[4],
        rectify,
    };
    let total_steps = r.u64()?;
    let step = r.u64()?;
    let sizes = net.param_sizes();
    let mut moments = Vec::new();
    for _ in 0..2 {
        let pos = at(&r);
        let n = r.u64()? as usize;
        if n != sizes.len() {
            return Err(err(
                pos,
                format!("{n} moment buffers, network has {} parameters", sizes.len()),
            ));
        }
        let mut bufs = Vec::with_capacity(n);
        for &len in &sizes {
            let pos = at(&r);
            let b = r.f64s()?;
            if b.len() != len {
                return Err(err(pos, format!("moment buffer of {} values, {len} expected", b.len())));
            }
            bufs.push(b);
        }
        moments.push(bufs);
    }
    if r.remaining() != 0 {
        return Err(err(at(&r), format!("{} trailing bytes", r.remaining())));
    }
    let v = moments.pop().expect("two moment sets");
    let m = moments.pop().expect("two moment sets");
    let optimizer = Optimizer {
        config,
        total_steps,
        step,
        m,
        v,
    };
    Ok(Checkpoint {
        state: TrainState {
            network: net,
            optimizer,
            stage,
            epochs_done,
            total_epochs,
        },
        train,
        seed,
        steps_before,
    })
}
