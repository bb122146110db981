//! Command-line front end. Every subcommand that mutates a session loads it,
//! applies the change and saves it back.

use std::ffi::OsString;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::api::{self, AppState};
use crate::dataset::{generate_synthetic, ingest_csv, read_dir, SyntheticConfig};
use crate::embedding::{mds_layout, pca_2d, Layout2D};
use crate::error::Result;
use crate::feedback::AnchorMode;
use crate::metrics::{class_heatmap, DEFAULT_GRID};
use crate::session::{
    load_session, read_edit_script, save_session, OracleOptions, OraclePolicy, RetrainConfig, Session,
    SessionConfig,
};
use crate::train::EpochReport;

#[derive(Debug, Parser)]
#[command(name = "latentedit", version, about = "Edit a classifier's latent space by moving points in 2D")]
pub struct Cli {
    /// Log more (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct SessionArg {
    /// Session directory.
    #[arg(long)]
    pub session: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LayoutMethod {
    Isomap,
    Pca,
    Mds,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Policy {
    ToTrueCentroid,
    SeparateMixed,
    AggregateWithinClass,
}

impl From<Policy> for OraclePolicy {
    fn from(p: Policy) -> Self {
        match p {
            Policy::ToTrueCentroid => OraclePolicy::ToTrueCentroid,
            Policy::SeparateMixed => OraclePolicy::SeparateMixed,
            Policy::AggregateWithinClass => OraclePolicy::AggregateWithinClass,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AnchorArg {
    Live,
    Frozen,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum HeatmapFormat {
    Json,
    Pgm,
}

#[derive(Debug, Args)]
pub struct RetrainArgs {
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub w_cls: f64,
    #[arg(long, default_value_t = 0.1)]
    pub w_dis: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value_t = AnchorArg::Live)]
    pub anchor_mode: AnchorArg,
    /// Retrain even when no edits are pending.
    #[arg(long)]
    pub allow_empty: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl RetrainArgs {
    fn config(&self) -> RetrainConfig {
        RetrainConfig {
            epochs: self.epochs,
            learning_rate: self.lr,
            batch_size: self.batch_size,
            k: self.k,
            delta: self.delta,
            w_cls: self.w_cls,
            w_dis: self.w_dis,
            anchor_mode: match self.anchor_mode {
                AnchorArg::Live => AnchorMode::Live,
                AnchorArg::Frozen => AnchorMode::Frozen,
            },
            seed: self.seed,
            allow_empty: self.allow_empty,
            ..RetrainConfig::default()
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (features.csv, labels.csv, split.csv).
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 700)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 16)]
        input_dim: usize,
        #[arg(long, default_value_t = 0.6)]
        overlap: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Validate CSV inputs and write them as a dataset directory.
    Ingest {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Seeds the split when no split file is given.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a classifier on a dataset directory and create a session.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        session: SessionArg,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        /// Hidden layer widths; the last one is the latent layer.
        #[arg(long, value_delimiter = ',', default_value = "64,32")]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        k_graph: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve the HTTP API for a session.
    Serve {
        #[command(flatten)]
        session: SessionArg,
        #[arg(long, default_value = "127.0.0.1")]
        addr: IpAddr,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Do not write the session back after retrains or on shutdown.
        #[arg(long)]
        no_persist: bool,
    },
    /// Apply an edit script (JSON lines). By default the session is first
    /// rewound to its pretrained state, reproducing a recorded history.
    EditReplay {
        file: PathBuf,
        #[command(flatten)]
        session: SessionArg,
        /// Apply on top of the current state instead of rewinding.
        #[arg(long)]
        append: bool,
        /// Write the result here instead of back into the session.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate and apply a scripted edit.
    Oracle {
        #[arg(value_enum)]
        policy: Policy,
        #[command(flatten)]
        session: SessionArg,
        /// Jitter radius as a fraction of the class radius.
        #[arg(long, default_value_t = 0.05)]
        jitter: f64,
        /// Print the transaction without applying it.
        #[arg(long)]
        dry_run: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Retrain on the pending edits.
    Retrain {
        #[command(flatten)]
        session: SessionArg,
        #[command(flatten)]
        args: RetrainArgs,
    },
    /// Print the metrics report as JSON.
    Metrics {
        #[command(flatten)]
        session: SessionArg,
    },
    /// Write the layout as JSON `[{id, x, y, method, epoch}]`.
    ExportLayout {
        #[command(flatten)]
        session: SessionArg,
        #[arg(long, value_enum, default_value_t = LayoutMethod::Isomap)]
        method: LayoutMethod,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one class's density grid.
    ExportHeatmap {
        #[command(flatten)]
        session: SessionArg,
        #[arg(long)]
        class: usize,
        #[arg(long, default_value_t = DEFAULT_GRID)]
        grid: usize,
        #[arg(long, value_enum, default_value_t = HeatmapFormat::Json)]
        format: HeatmapFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Step back one history entry.
    Undo {
        #[command(flatten)]
        session: SessionArg,
    },
    /// Re-apply the next undone history entry.
    Redo {
        #[command(flatten)]
        session: SessionArg,
    },
    /// Apply exactly the first INDEX history entries.
    Restore {
        index: usize,
        #[command(flatten)]
        session: SessionArg,
    },
    /// Drop pending edits.
    Reset {
        #[command(flatten)]
        session: SessionArg,
    },
}

fn log_epoch(r: &EpochReport) -> ControlFlow<()> {
    log::info!(
        "epoch {}: loss {:.4} (cls {:.4}, dis {:.4}) val micro-F1 {}",
        r.epoch,
        r.loss.total,
        r.loss.loss_cls,
        r.loss_dis,
        r.val_micro_f1.map_or("n/a".to_string(), |v| format!("{v:.4}"))
    );
    ControlFlow::Continue(())
}

fn with_session(dir: &Path, f: impl FnOnce(&mut Session) -> Result<()>) -> Result<()> {
    let mut s = load_session(dir)?;
    f(&mut s)?;
    save_session(&s, dir)
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{text}") {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                other => other?,
            }
        }
    }
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenData {
            out,
            n,
            classes,
            input_dim,
            overlap,
            seed,
        } => {
            let bundle = generate_synthetic(&SyntheticConfig {
                n,
                classes,
                input_dim,
                overlap,
                seed,
            })?;
            bundle.write_csv(&out)
        }
        Command::Ingest {
            features,
            labels,
            split,
            out,
            seed,
        } => ingest_csv(&features, &labels, split.as_deref(), seed)?.write_csv(&out),
        Command::Pretrain {
            data,
            session,
            epochs,
            hidden,
            k_graph,
            lr,
            batch_size,
            seed,
        } => {
            let bundle = read_dir(&data, seed)?;
            let mut cfg = SessionConfig::new(bundle.input_dim(), bundle.num_classes(), epochs, seed);
            cfg.model.hidden_dims = hidden;
            cfg.k_graph = k_graph;
            cfg.pretrain.adam.learning_rate = lr;
            cfg.pretrain.batch_size = batch_size;
            let (s, _) = Session::pretrain(bundle, cfg, log_epoch)?;
            save_session(&s, &session.session)
        }
        Command::Serve {
            session,
            addr,
            port,
            no_persist,
        } => {
            let s = load_session(&session.session)?;
            let state = AppState::new(s, (!no_persist).then(|| session.session.clone()));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(api::serve(state, SocketAddr::new(addr, port)))
        }
        Command::EditReplay {
            file,
            session,
            append,
            out,
        } => {
            let script = read_edit_script(&file)?;
            let mut s = load_session(&session.session)?;
            if !append {
                s.rewind_to_base();
            }
            s.replay_script(&script)?;
            save_session(&s, out.as_deref().unwrap_or(&session.session))
        }
        Command::Oracle {
            policy,
            session,
            jitter,
            dry_run,
            seed,
        } => {
            let mut s = load_session(&session.session)?;
            let tx = s.oracle_edit(policy.into(), &OracleOptions { seed, jitter })?;
            write_output(None, &serde_json::to_string(&crate::session::ScriptLine::edit(&tx))?)?;
            if !dry_run {
                s.apply_edits(tx)?;
                save_session(&s, &session.session)?;
            }
            Ok(())
        }
        Command::Retrain { session, args } => with_session(&session.session, |s| {
            s.retrain(&args.config(), log_epoch).map(drop)
        }),
        Command::Metrics { session } => {
            let s = load_session(&session.session)?;
            write_output(None, &serde_json::to_string_pretty(s.metrics())?)
        }
        Command::ExportLayout { session, method, out } => {
            let s = load_session(&session.session)?;
            let epoch = s.checkpoint_id();
            let layout: Layout2D = match method {
                LayoutMethod::Isomap => s.layout().clone(),
                LayoutMethod::Pca => pca_2d(&s.latents()?, epoch)?,
                LayoutMethod::Mds => mds_layout(&s.latents()?, epoch)?,
            };
            write_output(out.as_deref(), &layout.to_json()?)
        }
        Command::ExportHeatmap {
            session,
            class,
            grid,
            format,
            out,
        } => {
            let s = load_session(&session.session)?;
            let h = class_heatmap(s.layout(), &s.dataset().labels, class, grid, None)?;
            match format {
                HeatmapFormat::Json => std::fs::write(&out, serde_json::to_vec(&h)?)?,
                HeatmapFormat::Pgm => {
                    let mut f = std::io::BufWriter::new(std::fs::File::create(&out)?);
                    h.write_pgm(&mut f)?;
                    f.flush()?;
                }
            }
            Ok(())
        }
        Command::Undo { session } => with_session(&session.session, Session::undo),
        Command::Redo { session } => with_session(&session.session, Session::redo),
        Command::Restore { index, session } => with_session(&session.session, |s| s.restore(index)),
        Command::Reset { session } => with_session(&session.session, Session::reset),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code: 0 on success, 2 on usage errors, 1 otherwise.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
