//! Command-line driver: `gen-data`, `train`, `probe`, `diagnose`, `export`.
//!
//! A JSON config file is the source of truth; flags only name paths and
//! override seeds.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use config::{ConfigFile, DataConfig, TrainSection};

use crate::distill::DistillState;
use crate::encoder::upcast_tensors;
use crate::error::{Error, Result};
use crate::pointcore::PointCloud;
use crate::probe::{
    decoder_probe, linear_probe, pca_export, shortcut_diagnostic, write_heatmaps, ProbeMode,
};
use crate::synthgen::{generate_scene, read_dataset, scene_spec_for, write_dataset};
use crate::trainer::{load_checkpoint, resume, train, Checkpoint};

pub const TRAIN_FILE: &str = "train.ptc";
pub const TEST_FILE: &str = "test.ptc";
pub const CONFIG_ECHO: &str = "config.json";
pub const RUN_INFO: &str = "run_info.json";
/// Environment variable bounding the worker pool.
pub const THREADS_ENV: &str = "SONATA_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "sonata",
    version,
    about = "Point cloud self-distillation at desk scale"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Linear,
    Decoder,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic train/test split as PTC1 files.
    GenData {
        /// Config file; only its `data` section is used.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pretrain an encoder and write checkpoints and a metrics log.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Dataset directory; defaults to `data.dir`, else scenes are generated.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Fit a probe on frozen teacher features and print the report as JSON.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "linear")]
        mode: ModeArg,
        #[arg(long)]
        data: PathBuf,
        /// Config file whose `probe` section overrides the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Probe a freshly initialized encoder of the same shape instead.
        #[arg(long)]
        random_init: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regress height and normals from features and write similarity heatmaps.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated query point rows.
        #[arg(long, value_delimiter = ',', required = true)]
        queries: Vec<usize>,
        /// Test-scene index to analyze.
        #[arg(long, default_value_t = 0)]
        scene: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Color a scene by the first principal components of its features.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        /// PTC1 file; the first record is used unless `--index` is given.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        pca: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    path.map_or_else(|| Ok(ConfigFile::default()), ConfigFile::load)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct RunInfo<'a> {
    version: &'a str,
    command: &'a str,
}

/// Echoes the effective config and the program version into `dir`.
fn echo(dir: &Path, cfg: &ConfigFile, command: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join(CONFIG_ECHO), &cfg.to_json())?;
    let info = RunInfo {
        version: env!("CARGO_PKG_VERSION"),
        command,
    };
    write_file(
        &dir.join(RUN_INFO),
        &serde_json::to_string_pretty(&info).expect("serializes"),
    )
}

/// Scenes `first..first + n` of the dataset described by `data`.
pub fn synth_scenes(data: &DataConfig, first: usize, n: usize) -> Result<Vec<PointCloud>> {
    use rayon::prelude::*;
    (first..first + n)
        .into_par_iter()
        .map(|i| generate_scene(&scene_spec_for(&data.scene, data.seed, i)))
        .collect()
}

/// Writes `train.ptc` (scenes `0..n_train`) and `test.ptc` (the next
/// `n_test`) into `dir`.
pub fn gen_data(data: &DataConfig, dir: &Path) -> Result<()> {
    data.scene.validate()?;
    if data.n_train == 0 || data.n_test == 0 {
        return Err(Error::Config(
            "n_train and n_test must be at least 1".into(),
        ));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_dataset(&synth_scenes(data, 0, data.n_train)?, dir.join(TRAIN_FILE))?;
    write_dataset(
        &synth_scenes(data, data.n_train, data.n_test)?,
        dir.join(TEST_FILE),
    )
}

fn emit(value: &impl Serialize, out: Option<&Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("report serializes");
    if let Some(path) = out {
        write_file(path, &json)?;
    }
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{json}").map_err(|e| Error::io("<stdout>", e))
}

/// Frozen encoder parameters of a checkpoint: the teacher, or a fresh
/// initialization of the same architecture.
fn frozen(ck: &Checkpoint, random_init: bool) -> Result<DistillState> {
    if random_init {
        DistillState::init(&ck.config.encoder, &ck.config.head, ck.config.seed)
    } else {
        Ok(ck.state.clone())
    }
}

fn full_features(state: &DistillState, scene: &PointCloud) -> Result<crate::diffcore::Tensor> {
    let (features, st) = state.encoder.encode_frozen(&state.teacher, scene)?;
    upcast_tensors(&features, &st.maps, features.len() - 1)
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { spec, out, seed } => {
            let mut cfg = load_config(spec.as_deref())?;
            if let Some(s) = seed {
                cfg.data.seed = s;
            }
            cfg.data.dir = Some(out.clone());
            gen_data(&cfg.data, &out)?;
            echo(&out, &cfg, "gen-data")
        }
        Command::Train {
            config,
            out,
            data,
            seed,
            resume: from,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if data.is_some() {
                cfg.data.dir = data;
            }
            let tc = cfg.train_config();
            tc.validate()?;
            let scenes = match &cfg.data.dir {
                Some(dir) => read_dataset(dir.join(TRAIN_FILE))?,
                None => {
                    log::info!(
                        "no dataset directory given; generating {} scenes",
                        cfg.data.n_train
                    );
                    synth_scenes(&cfg.data, 0, cfg.data.n_train)?
                }
            };
            echo(&out, &cfg, "train")?;
            let scenes: Arc<[PointCloud]> = scenes.into();
            let outcome = match from {
                Some(ck) => resume(&ck, &tc, scenes, Some(&out))?,
                None => train(&tc, scenes, Some(&out))?,
            };
            let last = outcome.metrics.last();
            log::info!(
                "finished at step {} with loss {:?}",
                outcome.checkpoint.step(),
                last.map(|m| m.loss)
            );
            Ok(())
        }
        Command::Probe {
            checkpoint,
            mode,
            data,
            config,
            random_init,
            out,
        } => {
            let probe_cfg = load_config(config.as_deref())?.probe;
            let ck = load_checkpoint(&checkpoint)?;
            let state = frozen(&ck, random_init)?;
            let train_set = read_dataset(data.join(TRAIN_FILE))?;
            let test_set = read_dataset(data.join(TEST_FILE))?;
            let run = match mode {
                ModeArg::Linear => linear_probe,
                ModeArg::Decoder => decoder_probe,
            };
            let report = run(
                &state.encoder,
                &state.teacher,
                &train_set,
                &test_set,
                &probe_cfg,
            )?;
            debug_assert_eq!(
                report.mode,
                if mode == ModeArg::Linear {
                    ProbeMode::Linear
                } else {
                    ProbeMode::Decoder
                }
            );
            emit(&report, out.as_deref())
        }
        Command::Diagnose {
            checkpoint,
            data,
            queries,
            scene,
            out,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            let scenes = read_dataset(data.join(TEST_FILE))?;
            let cloud = scenes.get(scene).ok_or_else(|| {
                Error::invalid(format!(
                    "scene {scene} out of range for {} test scenes",
                    scenes.len()
                ))
            })?;
            let features = full_features(&ck.state, cloud)?;
            let report = shortcut_diagnostic(&features, cloud, &queries)?;
            let dir = out.unwrap_or_else(|| checkpoint.with_extension("diagnose"));
            let paths = write_heatmaps(&report, cloud, &dir)?;
            for p in &paths {
                log::info!("wrote {}", p.display());
            }
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            write_file(&dir.join("shortcut_report.json"), &json)?;
            // Heatmaps stay in the report file; stdout gets the scores.
            let summary = serde_json::json!({
                "r2_height": report.r2_height,
                "r2_normal": report.r2_normal,
                "lambda": report.lambda,
                "queries": report.queries,
                "report": dir.join("shortcut_report.json"),
            });
            emit(&summary, None)
        }
        Command::Export {
            checkpoint,
            scene,
            index,
            pca,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            let scenes = read_dataset(&scene)?;
            let cloud = scenes.get(index).ok_or_else(|| {
                Error::invalid(format!(
                    "record {index} out of range for {} records",
                    scenes.len()
                ))
            })?;
            let features = full_features(&ck.state, cloud)?;
            pca_export(&features, cloud, &pca)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::Config(format!(
            "{THREADS_ENV} must be a positive integer, got {v:?}"
        ))
    })?;
    // A pool may already exist when the driver is embedded; keep it.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

/// Parses `args` and runs the command. Returns the process exit code:
/// 0 on success, 1 for user errors, 2 for internal failures.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = configure_threads().and_then(|()| execute(cli));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                1
            } else {
                2
            }
        }
    }
}
