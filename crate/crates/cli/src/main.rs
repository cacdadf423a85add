use std::net::ToSocketAddrs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use scait_core::dataset::{build_dataset, write_pgm_dir};
use scait_core::harness::{
    emit_plots, load_split, row_seed, run_sweep, train_models, Evaluator, ExperimentConfig, Models, Point, Report,
    Scheme,
};
use scait_core::kb::{build_kb, load_kb, save_kb, sync_kb, SyncReport};
use scait_core::link::{run_transmitter, Receiver, ReceiverConfig, TransmitterConfig, TxMode};
use scait_core::nn::{load_checkpoint, save_checkpoint};
use scait_core::{ChannelConfig, CompressionRatio, Error, Fec};

/// Task-oriented semantic communication simulator.
#[derive(Parser)]
#[command(name = "scait", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Text config of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sets one config key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset as a PGM tree.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the clean and semantic models and build the knowledge base.
    Train,
    /// Rebuild the knowledge base from the semantic checkpoint.
    BuildKb {
        /// Destination (defaults to the `kb` key).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Copy the knowledge base to another location if it differs.
    SyncKb {
        #[arg(long)]
        dest: PathBuf,
    },
    /// Evaluate one scheme at one point over the test split.
    Evaluate(EvaluateArgs),
    /// Run the configured sweep and write the CSV report.
    Sweep,
    /// Receive and classify frames (edge-server side).
    Serve(ServeArgs),
    /// Transmit test images (sensor side).
    Send(SendArgs),
    /// Render the charts of a sweep report.
    Plot {
        /// Report CSV (defaults to `<output_dir>/report.csv`).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Output directory (defaults to `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, default_value = "sc_ait")]
    scheme: Scheme,
    /// Compression ratio for the semantic schemes.
    #[arg(long, default_value_t = 0.0)]
    cr: f64,
    /// Quality for the baseline codec.
    #[arg(long, default_value_t = 75)]
    quality: u8,
    /// Channel SNR in dB; omit for a noiseless channel.
    #[arg(long)]
    snr: Option<f64>,
    /// FEC (defaults to the `fec` key).
    #[arg(long)]
    fec: Option<Fec>,
    /// Seed value combined with the master seed.
    #[arg(long = "seed-value", default_value_t = 1)]
    seed_value: u64,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:9400")]
    listen: String,
    /// Stop after this many classified frames.
    #[arg(long)]
    max_frames: Option<usize>,
    /// Stop after this many idle seconds.
    #[arg(long)]
    idle_secs: Option<f64>,
    /// Append-only CSV log of classified frames.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Where synchronized knowledge bases are written (defaults to the `kb` key).
    #[arg(long)]
    kb_out: Option<PathBuf>,
}

#[derive(Args)]
struct SendArgs {
    #[arg(long, default_value = "127.0.0.1:9400")]
    to: String,
    #[arg(long, default_value = "sc_ait")]
    scheme: Scheme,
    #[arg(long, default_value_t = 0.5)]
    cr: f64,
    #[arg(long, default_value_t = 75)]
    quality: u8,
    /// Impair payloads in-process at this SNR before sending.
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long)]
    fec: Option<Fec>,
    #[arg(long = "seed-value", default_value_t = 1)]
    seed_value: u64,
    /// Number of test images to send.
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 500)]
    ack_timeout_ms: u64,
    #[arg(long, default_value_t = 3)]
    retries: u32,
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for o in &g.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {o:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(s) = g.seed {
        cfg.master_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn load_models(cfg: &ExperimentConfig) -> Result<Models> {
    let (models, warnings) = Models::load(cfg)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(models)
}

fn point_for(scheme: Scheme, cr: f64, quality: u8) -> Result<Point> {
    Ok(if scheme.is_semantic() {
        Point::Cr(CompressionRatio::new(cr)?)
    } else {
        Point::Quality(quality)
    })
}

fn channel_for(cfg: &ExperimentConfig, snr: Option<f64>, fec: Option<Fec>, seed_value: u64) -> ChannelConfig {
    ChannelConfig {
        snr_db: snr.unwrap_or(f64::INFINITY),
        fec: fec.unwrap_or(cfg.fec),
        seed: row_seed(cfg.master_seed, seed_value),
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    match cli.command {
        Command::GenData { out } => {
            let n = write_pgm_dir(&build_dataset(&cfg.dataset)?, &out)?;
            println!("wrote {n} images to {}", out.display());
        }
        Command::Train => {
            let split = load_split(&cfg)?;
            let trained = train_models(&cfg, &split)?;
            for m in &trained.clean_metrics {
                println!("clean    epoch {:>2} loss {:.4} test {:.3}", m.epoch + 1, m.loss, m.test_accuracy);
            }
            for m in &trained.semantic_metrics {
                println!("semantic epoch {:>2} loss {:.4} test {:.3}", m.epoch + 1, m.loss, m.test_accuracy);
            }
            for p in [&cfg.checkpoint, &cfg.baseline_checkpoint, &cfg.kb] {
                ensure_parent(p)?;
            }
            save_checkpoint(&trained.models.semantic, &cfg.checkpoint)?;
            save_checkpoint(&trained.models.baseline, &cfg.baseline_checkpoint)?;
            save_kb(&trained.models.kb, &cfg.kb)?;
            println!(
                "saved {}, {} and {}",
                cfg.checkpoint.display(),
                cfg.baseline_checkpoint.display(),
                cfg.kb.display()
            );
        }
        Command::BuildKb { out } => {
            let model = load_checkpoint(&cfg.checkpoint)?;
            let kb = build_kb(&model, &load_split(&cfg)?)?;
            let out = out.unwrap_or(cfg.kb.clone());
            ensure_parent(&out)?;
            save_kb(&kb, &out)?;
            println!("ranking {:?}", kb.ranking().order());
            println!("saved {}", out.display());
        }
        Command::SyncKb { dest } => {
            let kb = load_kb(&cfg.kb)?;
            if let Some(w) = load_checkpoint(&cfg.checkpoint).ok().and_then(|m| kb.fingerprint_warning(&m)) {
                eprintln!("warning: {w}");
            }
            ensure_parent(&dest)?;
            match sync_kb(&kb, &dest)? {
                SyncReport::Updated => println!("updated {}", dest.display()),
                SyncReport::AlreadyIdentical => println!("{} already identical", dest.display()),
            }
        }
        Command::Evaluate(a) => {
            let models = load_models(&cfg)?;
            let split = load_split(&cfg)?;
            let point = point_for(a.scheme, a.cr, a.quality)?;
            let channel = channel_for(&cfg, a.snr, a.fec, a.seed_value);
            let r = Evaluator::new(&models, &split.test)?.evaluate(a.scheme, point, &channel)?;
            println!(
                "{} {:?} snr {} fec {}: accuracy {:.4}, bpp source {:.4}, bpp air {:.4}, raw ber {:.3e}",
                a.scheme,
                point,
                channel.snr_db,
                channel.fec.name(),
                r.accuracy,
                r.bpp.source,
                r.bpp.air,
                r.ber
            );
        }
        Command::Sweep => {
            let models = load_models(&cfg)?;
            let split = load_split(&cfg)?;
            let report = run_sweep(&cfg, &models, &split.test)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            let path = cfg.output_dir.join("report.csv");
            report.write_csv(&path)?;
            println!("wrote {} rows to {}", report.rows.len(), path.display());
        }
        Command::Serve(a) => {
            let model = load_checkpoint(&cfg.checkpoint)?;
            let baseline_model = match load_checkpoint(&cfg.baseline_checkpoint) {
                Ok(m) => Some(m),
                Err(e) => {
                    eprintln!("warning: image frames will be ignored ({e})");
                    None
                }
            };
            let kb_path = a.kb_out.unwrap_or(cfg.kb.clone());
            ensure_parent(&kb_path)?;
            if let Some(log) = &a.log {
                ensure_parent(log)?;
            }
            let rx = ReceiverConfig {
                kb_path: Some(kb_path),
                baseline_model,
                max_frames: a.max_frames,
                idle_timeout: a.idle_secs.map(Duration::from_secs_f64),
                log_path: a.log,
            };
            let receiver = Receiver::bind(&a.listen)?;
            eprintln!("listening on {}", receiver.local_addr()?);
            let records = receiver.run(&model, &rx)?;
            for r in &records {
                match r.predicted_class {
                    Some(c) => println!("{} seq {} ({} bytes): class {c}", r.frame_type, r.seq, r.bytes),
                    None => println!("{} ({} bytes)", r.frame_type, r.bytes),
                }
            }
        }
        Command::Send(a) => {
            if a.to.to_socket_addrs().is_err() {
                bail!(Error::Setup(format!("cannot resolve {}", a.to)));
            }
            let models = load_models(&cfg)?;
            let split = load_split(&cfg)?;
            let mode = match point_for(a.scheme, a.cr, a.quality)? {
                Point::Cr(cr) if a.scheme == Scheme::ScAit => TxMode::Semantic(cr),
                Point::Quality(quality) => TxMode::Baseline { quality },
                Point::Cr(_) => bail!(Error::InvalidArgument("send supports sc_ait and baseline_codec".into())),
            };
            let channel = a.snr.map(|snr| channel_for(&cfg, Some(snr), a.fec, a.seed_value));
            let tx = TransmitterConfig {
                ack_timeout: Duration::from_millis(a.ack_timeout_ms),
                retries: a.retries,
                ..TransmitterConfig::new(mode, channel)
            };
            let images = split.test.iter().take(a.count).map(|e| &e.image);
            let log = run_transmitter(&a.to, &models.semantic, &models.kb, images, &tx)?;
            for r in &log.records {
                println!(
                    "{} seq {} {} bytes, {} attempt(s){}",
                    r.frame_type.name(),
                    r.seq,
                    r.bytes,
                    r.attempts,
                    if r.acked { "" } else { ", dropped" }
                );
            }
            println!("sent {} frames, {} dropped", log.records.len(), log.dropped());
        }
        Command::Plot { report, out } => {
            let path = report.unwrap_or(cfg.output_dir.join("report.csv"));
            let report = Report::read_csv(&path)?;
            let out = out.unwrap_or(cfg.output_dir.clone());
            for f in emit_plots(&report, &out)? {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(e) if e.is_setup() => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
