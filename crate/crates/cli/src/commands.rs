use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thermobnn_core::adcsim::AdcNoise;
use thermobnn_core::data::{make_synthetic, Dataset, Split, SyntheticSpec};
use thermobnn_core::encoders::{encode_base2, encode_fixed_thermometer, ImageDims, ImageView};
use thermobnn_core::pruning::{
    baseline_stage, lwc_blocks, oneshot_state, pruned_config, snapshot, stage_metrics, start_stage, PruneKind,
    PruneStage,
};
use thermobnn_core::topology::count_model_size;
use thermobnn_core::train::{binarize, initial_state, EpochRecord, Mode, Network, Stage};

use crate::args::*;
use crate::checkpoint::{sidecar_path, Checkpoint};
use crate::config::RunConfig;
use crate::dataset::{load_dataset, load_image, save_dataset};
use crate::error::{data_err, io_err, CliError, CliResult};
use crate::fsutil::write_atomic;
use crate::planes::{dump_planes, encode_planes, ThresholdTable};

/// Whether a training command used its whole epoch budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Finished,
    Stopped,
}

/// One line of the epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct LogRecord {
    pub stage: String,
    pub epoch: usize,
    pub step: u64,
    pub global_step: u64,
    pub lr: f64,
    pub loss: f64,
    pub ce: f64,
    pub distr: f64,
    pub train_accuracy: f64,
}

fn load_config(g: &Globals) -> CliResult<RunConfig> {
    let path = g
        .config
        .as_deref()
        .ok_or_else(|| CliError::Usage("this command needs --config <file>".into()))?;
    RunConfig::load(path)
}

fn resolve_seed(g: &Globals, cfg: Option<&RunConfig>) -> u64 {
    g.seed.or(cfg.and_then(|c| c.seed)).unwrap_or(0)
}

/// `dir/stem.tag.ext` for `dir/stem.ext`.
pub fn tagged_path(path: &Path, tag: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match path.extension() {
        Some(ext) => path.with_file_name(format!("{stem}.{tag}.{}", ext.to_string_lossy())),
        None => path.with_file_name(format!("{stem}.{tag}")),
    }
}

fn default_log(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".log.jsonl");
    out.with_file_name(name)
}

struct Log {
    path: PathBuf,
}

impl Log {
    fn open(path: PathBuf, append: bool) -> CliResult<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        if !append {
            fs::write(&path, b"").map_err(io_err(&path))?;
        }
        Ok(Self { path })
    }

    fn write(&self, rec: &EpochRecord, global_step: u64) -> CliResult<()> {
        let line = LogRecord {
            stage: rec.stage.label(),
            epoch: rec.epoch,
            step: rec.step,
            global_step,
            lr: rec.lr,
            loss: rec.loss,
            ce: rec.ce,
            distr: rec.distr,
            train_accuracy: rec.train_accuracy,
        };
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(io_err(&self.path))?;
        let text = serde_json::to_string(&line).expect("log records serialize") + "\n";
        f.write_all(text.as_bytes()).map_err(io_err(&self.path))
    }
}

/// Runs epochs of a checkpointed state, saving after each one, until the
/// state is finished or the invocation's epoch budget runs out. A finished
/// pretraining stage moves on to binary training when `two_stage` is set.
struct Driver<'a> {
    data: &'a Dataset,
    log: Log,
    budget: Option<usize>,
    /// Where a finished pretraining stage is kept.
    pretrain_out: Option<PathBuf>,
}

impl Driver<'_> {
    fn drive(
        &mut self,
        ck: &mut Checkpoint,
        path: &Path,
        teacher: Option<&Network>,
        two_stage: bool,
    ) -> CliResult<Outcome> {
        loop {
            if ck.state.finished() {
                if two_stage && ck.state.stage == Stage::Pretrain {
                    if let Some(p) = &self.pretrain_out {
                        ck.save(p)?;
                    }
                    ck.steps_before += ck.state.optimizer.step;
                    ck.state = binarize(&ck.state, self.data, &ck.train)?;
                    ck.save(path)?;
                    continue;
                }
                return Ok(Outcome::Finished);
            }
            if self.budget == Some(0) {
                return Ok(Outcome::Stopped);
            }
            let train = ck.train;
            let rec = ck.state.train_epoch(self.data, &train, ck.seed, teacher)?;
            ck.save(path)?;
            self.log.write(&rec, ck.global_step())?;
            println!(
                "{} epoch {}/{}: loss {:.4} train accuracy {:.2}% lr {:.3e}",
                rec.stage.label(),
                rec.epoch,
                ck.state.total_epochs,
                rec.loss,
                rec.train_accuracy,
                rec.lr
            );
            if let Some(b) = self.budget.as_mut() {
                *b -= 1;
            }
        }
    }
}

fn check_data(net: &Network, data: &Dataset) -> CliResult<()> {
    let want = net.input_dims();
    if data.dims != want && net.config.input.channels != data.dims.channels {
        return Err(data_err!(
            "data images are {:?}, the network expects {:?}",
            data.dims,
            want
        ));
    }
    if data.classes != net.shapes.classes {
        return Err(data_err!(
            "data has {} classes, the network {}",
            data.classes,
            net.shapes.classes
        ));
    }
    Ok(())
}

pub fn cmd_train(args: &TrainArgs, g: &Globals) -> CliResult<Outcome> {
    let cfg = load_config(g)?;
    let seed = resolve_seed(g, Some(&cfg));
    let data = load_dataset(&args.data)?;
    let resume = args.resume && args.out.exists();
    let mut ck = if resume {
        let ck = Checkpoint::load(&args.out)?;
        if ck.seed != seed {
            return Err(data_err!(
                "checkpoint was trained with seed {}, this run uses {}",
                ck.seed,
                seed
            ));
        }
        if ck.network().config != cfg.net || ck.train != cfg.train {
            return Err(data_err!(
                "{} was written with a different configuration",
                args.out.display()
            ));
        }
        if !matches!(ck.state.stage, Stage::Pretrain | Stage::Binarized) {
            return Err(data_err!(
                "{} is a {} checkpoint",
                args.out.display(),
                ck.state.stage.label()
            ));
        }
        ck
    } else {
        Checkpoint::new(
            initial_state(cfg.net.clone(), &data, &cfg.train, seed)?,
            cfg.train,
            seed,
        )
    };
    check_data(ck.network(), &data)?;
    let log = Log::open(args.log.clone().unwrap_or_else(|| default_log(&args.out)), resume)?;
    let mut driver = Driver {
        data: &data,
        log,
        budget: args.max_epochs,
        pretrain_out: Some(tagged_path(&args.out, "pretrain")),
    };
    if !resume {
        ck.save(&args.out)?;
    }
    let outcome = driver.drive(&mut ck, &args.out, None, true)?;
    report_outcome(outcome, &args.out);
    Ok(outcome)
}

fn report_outcome(outcome: Outcome, path: &Path) {
    match outcome {
        Outcome::Finished => println!("wrote {}", path.display()),
        Outcome::Stopped => println!("stopped early; {} can be resumed with --resume", path.display()),
    }
}

fn remove_checkpoint(path: &Path) -> CliResult<()> {
    for p in [path.to_path_buf(), sidecar_path(path)] {
        if p.exists() {
            fs::remove_file(&p).map_err(io_err(&p))?;
        }
    }
    Ok(())
}

/// Finished checkpoint at `done`, continuing or starting one at `partial`.
#[allow(clippy::too_many_arguments)]
fn run_stage(
    driver: &mut Driver<'_>,
    done: &Path,
    partial: &Path,
    resume: bool,
    teacher: Option<&Network>,
    two_stage: bool,
    start: impl FnOnce() -> CliResult<Checkpoint>,
) -> CliResult<Option<Checkpoint>> {
    if resume && done.exists() {
        let ck = Checkpoint::load(done)?;
        if !ck.state.finished() {
            return Err(data_err!("{} is not a finished stage", done.display()));
        }
        return Ok(Some(ck));
    }
    let mut ck = if resume && partial.exists() {
        Checkpoint::load(partial)?
    } else {
        let ck = start()?;
        ck.save(partial)?;
        ck
    };
    match driver.drive(&mut ck, partial, teacher, two_stage)? {
        Outcome::Stopped => Ok(None),
        Outcome::Finished => {
            ck.save(done)?;
            remove_checkpoint(partial)?;
            Ok(Some(ck))
        }
    }
}

pub fn cmd_prune(args: &PruneArgs, g: &Globals) -> CliResult<Outcome> {
    let cfg = load_config(g)?;
    let seed = resolve_seed(g, Some(&cfg));
    let data = load_dataset(&args.data)?;
    let baseline_ck = Checkpoint::load(&args.baseline)?;
    let baseline = baseline_ck.network();
    if baseline.mode != Mode::Binary {
        return Err(data_err!("{} is not a binarized model", args.baseline.display()));
    }
    check_data(baseline, &data)?;
    let teacher_ck = match &args.teacher {
        Some(p) => Some(Checkpoint::load(p)?),
        None => None,
    };
    let teacher = teacher_ck.as_ref().map_or(baseline, Checkpoint::network);
    check_data(teacher, &data)?;
    let schedule = cfg.prune.schedule(&baseline.config)?;
    let dir = &args.out_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let log = Log::open(dir.join("prune.log.jsonl"), args.resume)?;
    let mut driver = Driver {
        data: &data,
        log,
        budget: args.max_epochs,
        pretrain_out: None,
    };
    let gamma = cfg.prune.train.gamma;
    let mut rows: Vec<PruneStage> = Vec::new();
    let stopped = || {
        println!("stopped early; resume with --resume");
        Ok(Outcome::Stopped)
    };

    if matches!(args.mode, PruneMode::Gradual | PruneMode::All) {
        let mut prev = baseline_ck.clone();
        let mut steps = 0;
        for &block in &schedule {
            let done = dir.join(format!("stage-{block}.tbnn"));
            let partial = dir.join(format!("stage-{block}.partial.tbnn"));
            let start = || -> CliResult<Checkpoint> {
                let state = start_stage(prev.network(), block, &data, &cfg.prune, seed)?;
                let mut ck = Checkpoint::new(state, cfg.prune.train, seed);
                ck.steps_before = steps;
                Ok(ck)
            };
            let Some(ck) = run_stage(&mut driver, &done, &partial, args.resume, Some(teacher), false, start)? else {
                return stopped();
            };
            steps = ck.global_step();
            rows.push(snapshot(PruneKind::Gradual, block, ck.network().clone(), &data, gamma)?);
            prev = ck;
        }
    }
    if matches!(args.mode, PruneMode::Oneshot | PruneMode::All) {
        let start = || -> CliResult<Checkpoint> {
            let (state, train) = oneshot_state(baseline, &data, &cfg.prune, seed)?;
            Ok(Checkpoint::new(state, train, seed))
        };
        let (done, partial) = (dir.join("oneshot.tbnn"), dir.join("oneshot.partial.tbnn"));
        let Some(ck) = run_stage(&mut driver, &done, &partial, args.resume, None, false, start)? else {
            return stopped();
        };
        rows.push(snapshot(
            PruneKind::OneShot,
            cfg.prune.target_block,
            ck.network().clone(),
            &data,
            gamma,
        )?);
    }
    if matches!(args.mode, PruneMode::Scratch | PruneMode::All) {
        let config = pruned_config(&baseline.config, &cfg.prune)?;
        let start = || -> CliResult<Checkpoint> {
            Ok(Checkpoint::new(
                initial_state(config.clone(), &data, &cfg.train, seed)?,
                cfg.train,
                seed,
            ))
        };
        let (done, partial) = (dir.join("scratch.tbnn"), dir.join("scratch.partial.tbnn"));
        let Some(ck) = run_stage(&mut driver, &done, &partial, args.resume, None, true, start)? else {
            return stopped();
        };
        let block = lwc_blocks(&config).first().copied().unwrap_or(0);
        rows.push(snapshot(
            PruneKind::Scratch,
            block,
            ck.network().clone(),
            &data,
            cfg.train.gamma,
        )?);
    }

    let csv = thermobnn_core::pruning::emit_tradeoff(&baseline_stage(baseline, &data, gamma)?, &rows);
    let csv_path = dir.join("tradeoff.csv");
    write_atomic(&csv_path, csv.as_bytes())?;
    print!("{csv}");
    println!("wrote {}", csv_path.display());
    Ok(Outcome::Finished)
}

fn normalized(px: &[u8], max: f64, gamma: f64) -> CliResult<Vec<f64>> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(CliError::Usage(format!("gamma must be positive, got {gamma}")));
    }
    Ok(px
        .iter()
        .map(|p| {
            let x = f64::from(*p) / max;
            if gamma == 1.0 {
                x
            } else {
                x.powf(gamma)
            }
        })
        .collect())
}

pub fn cmd_encode(args: &EncodeArgs, _g: &Globals) -> CliResult<()> {
    let (dims, px) = load_image(&args.image)?;
    let planes = if args.base2 {
        if !(1..=8).contains(&args.bits) {
            return Err(CliError::Usage("--bits must be 1..=8 for 8-bit images".into()));
        }
        let shift = 8 - args.bits;
        let codes: Vec<u32> = px.iter().map(|p| u32::from(*p >> shift)).collect();
        encode_base2(&codes, dims, args.bits)?
    } else {
        let x = normalized(&px, 255.0, args.gamma)?;
        let view = ImageView::new(dims, &x)?;
        match (&args.checkpoint, args.ft) {
            (Some(path), _) => {
                let ck = Checkpoint::load(path)?;
                let want = ck.network().config.input.channels;
                if want != dims.channels {
                    return Err(data_err!(
                        "image has {} channels, the model expects {want}",
                        dims.channels
                    ));
                }
                ck.network().encoder.encode(view)?
            }
            (None, Some(m)) => encode_fixed_thermometer(view, m, args.bits)?,
            (None, None) => unreachable!("clap requires an encoder"),
        }
    };
    write_atomic(&args.out, &encode_planes(&planes))?;
    if let Some(dump) = &args.dump {
        write_atomic(dump, dump_planes(&planes).as_bytes())?;
    }
    println!(
        "{} planes ({} per channel) of {}x{} written to {}",
        planes.channels * planes.planes_per_channel,
        planes.planes_per_channel,
        planes.height(),
        planes.width(),
        args.out.display()
    );
    Ok(())
}

fn thermometer_thresholds(ck: &Checkpoint) -> CliResult<Vec<Vec<f64>>> {
    let net = ck.network();
    net.encoder
        .thresholds(net.config.input.channels)
        .ok_or_else(|| data_err!("the model's {:?} encoder has no thresholds", net.encoder.kind()))
}

pub fn cmd_export_thresholds(args: &ExportArgs, _g: &Globals) -> CliResult<ThresholdTable> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let bits = args.bits.unwrap_or(ck.network().config.input.encoding.bits);
    let table = ThresholdTable::from_thresholds(&thermometer_thresholds(&ck)?, bits)?;
    let collisions = table.collisions();
    if collisions > 0 {
        eprintln!("warning: {collisions} adjacent threshold pairs share a {bits}-bit code");
    }
    let bytes = match args.format {
        TableFormat::Text => table.to_text().into_bytes(),
        TableFormat::Binary => table.to_binary(),
    };
    write_atomic(&args.out, &bytes)?;
    println!("wrote {}", args.out.display());
    Ok(table)
}

/// `channel,level,threshold` rows, level `i` for the `i`-th threshold.
pub fn curves_csv(thresholds: &[Vec<f64>]) -> String {
    let mut out = String::from("channel,level,threshold\n");
    for (c, t) in thresholds.iter().enumerate() {
        for (i, v) in t.iter().enumerate() {
            let _ = writeln!(out, "{},{},{:.9}", c, i + 1, v);
        }
    }
    out
}

pub fn cmd_curves(args: &CurvesArgs, _g: &Globals) -> CliResult<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    write_atomic(&args.out, curves_csv(&thermometer_thresholds(&ck)?).as_bytes())?;
    println!("wrote {}", args.out.display());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub network: String,
    pub stage: String,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub size_bits: u64,
    pub binary_bits: u64,
    pub real_bits: u64,
    pub bops: u64,
}

pub fn cmd_eval(args: &EvalArgs, _g: &Globals) -> CliResult<EvalReport> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let data = load_dataset(&args.data)?;
    let net = ck.network();
    check_data(net, &data)?;
    let gamma = args.gamma.unwrap_or(ck.train.gamma);
    let test = stage_metrics(net, &data, gamma)?;
    let size = count_model_size(&net.config)?;
    let report = EvalReport {
        network: net.config.name.clone(),
        stage: ck.state.stage.label(),
        train_accuracy: thermobnn_core::train::evaluate(net, &data, Split::Train, gamma)?,
        test_accuracy: test.accuracy,
        size_bits: size.total_bits,
        binary_bits: size.binary_bits,
        real_bits: size.real_bits,
        bops: size.bops,
    };
    if args.json {
        println!("{}", serde_json::to_string(&report).expect("report serializes"));
    } else {
        println!("network        {} ({})", report.network, report.stage);
        println!("train accuracy {:.2}%", report.train_accuracy);
        println!("test accuracy  {:.2}%", report.test_accuracy);
        println!(
            "model size     {} bits ({} binary, {} real)",
            report.size_bits, report.binary_bits, report.real_bits
        );
        println!("BOPs           {}", report.bops);
    }
    Ok(report)
}

pub fn cmd_synth(args: &SynthArgs, g: &Globals) -> CliResult<Dataset> {
    let spec = SyntheticSpec {
        classes: args.classes,
        train: args.train,
        test: args.test,
        channels: args.channels,
        height: args.size,
        width: args.size,
        seed: resolve_seed(g, None),
    };
    let data = make_synthetic(&spec)?;
    save_dataset(&args.out, &data)?;
    println!("{} images written to {}", data.len(), args.out.display());
    Ok(data)
}

pub fn cmd_simulate(args: &SimulateArgs, g: &Globals) -> CliResult<()> {
    let table = ThresholdTable::parse(&crate::fsutil::read(&args.table)?, &args.table.display().to_string())?;
    let (dims, px) = load_image(&args.image)?;
    if dims.channels != table.codes.len() {
        return Err(data_err!(
            "image has {} channels, the table {}",
            dims.channels,
            table.codes.len()
        ));
    }
    let x = normalized(&px, 255.0, args.gamma)?;
    let adc = table.to_adc()?.with_noise(AdcNoise {
        sigma: args.sigma,
        flip_prob: args.flip_prob,
        seed: resolve_seed(g, None),
    })?;
    let (planes, report) = adc.convert_frame(ImageView::new(
        ImageDims::new(dims.channels, dims.height, dims.width),
        &x,
    )?)?;
    write_atomic(&args.out, &encode_planes(&planes))?;
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    Ok(())
}

/// Runs one parsed command line.
pub fn run(cli: &Cli) -> CliResult<()> {
    let g = &cli.globals;
    if let Some(n) = g.threads {
        set_threads(n)?;
    }
    match &cli.command {
        Command::Train(a) => cmd_train(a, g).map(drop),
        Command::Prune(a) => cmd_prune(a, g).map(drop),
        Command::Encode(a) => cmd_encode(a, g),
        Command::ExportThresholds(a) => cmd_export_thresholds(a, g).map(drop),
        Command::Curves(a) => cmd_curves(a, g),
        Command::Eval(a) => cmd_eval(a, g).map(drop),
        Command::Synth(a) => cmd_synth(a, g).map(drop),
        Command::Simulate(a) => cmd_simulate(a, g),
    }
}

fn set_threads(n: usize) -> CliResult<()> {
    if n == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use thermobnn_core::encoders::linear_ramp;

    #[test]
    fn curves_have_m_rows_per_channel() {
        let csv = curves_csv(&vec![linear_ramp(8, 8); 3]);
        assert_eq!(csv.lines().count(), 1 + 24);
        assert_eq!(csv.lines().nth(1).unwrap(), format!("0,1,{:.9}", 0.5 / 255.0 * 32.0));
    }

    #[test]
    fn gamma_is_applied_after_normalization() {
        let x = normalized(&[0, 51, 255], 255.0, 2.0).unwrap();
        assert_eq!(x, vec![0.0, 0.04000000000000001, 1.0]);
        assert!(normalized(&[1], 255.0, 0.0).is_err());
    }
}
