//! `signcast`: synthetic data, training and evaluation of the clip
//! classifiers, the caption broadcast server, the capture client and a
//! headless caption subscriber.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use signcast_core::dataset::{generate_synthetic_dataset, synthetic_sequence, LabeledDataset};
use signcast_core::model::{ModelConfig, SignModel};
use signcast_core::pca_svm::{PcaSvmConfig, PcaSvmPipeline, SvmConfig};
use signcast_core::train::{evaluate, train, EvalReport, TrainConfig};
use signcast_core::video;
use signcast_net::capture::{run_capture_loop, transcript_line, CaptureConfig};
use signcast_net::protocol::{Message, Role};
use signcast_net::{Client, Server, ServerConfig};
use tracing::info;

const BIND_ENV: &str = "SIGNCAST_BIND";

#[derive(Parser)]
#[command(name = "signcast", version, about = "Live sign-language captions")]
struct Cli {
    /// trace, debug, info, warn or error. RUST_LOG takes precedence.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the caption broadcast server.
    Server {
        /// Overridden by SIGNCAST_BIND when set.
        #[arg(long, default_value = "127.0.0.1:8765")]
        bind: String,
        #[arg(long, default_value_t = 64)]
        max_room: usize,
        #[arg(long, default_value_t = 15)]
        heartbeat_secs: u64,
        #[arg(long, default_value_t = 45)]
        timeout_secs: u64,
    },
    /// Play a frame directory through a model and publish captions.
    Capture {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        server: String,
        #[arg(long)]
        room: String,
        #[arg(long)]
        name: String,
        #[arg(long, default_value_t = 6)]
        stride: usize,
        #[arg(long, default_value_t = 0.6)]
        min_confidence: f64,
        #[arg(long, default_value_t = 3)]
        repeat_gap: u64,
        /// Zero plays frames as fast as they can be classified.
        #[arg(long, default_value_t = 24.0)]
        fps: f64,
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Join a room as a viewer and print captions as they arrive.
    Watch {
        #[arg(long)]
        server: String,
        #[arg(long)]
        room: String,
        #[arg(long, default_value = "watcher")]
        name: String,
        /// Exit after this many captions.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Write a synthetic labelled clip dataset.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 50)]
        clips_per_class: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Write one continuous frame stream of synthetic clips, for capture.
    Sequence {
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated class indices, one clip each.
        #[arg(long, value_delimiter = ',', required = true)]
        classes: Vec<usize>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train a classifier on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Kind::Cnn)]
        kind: Kind,
        #[arg(long, default_value_t = 0.2)]
        val_fraction: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 0.05)]
        learning_rate: f32,
        /// SVM regularisation constant.
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long, default_value_t = 64)]
        components: usize,
    },
    /// Report clip accuracy and the confusion matrix of a saved model.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Kind::Cnn)]
        kind: Kind,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Cnn,
    Baseline,
}

fn init_logging(level: &str) {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

#[tokio::main]
async fn main() -> Result<()> {
    let cli = Cli::parse();
    init_logging(&cli.log_level);
    match cli.command {
        Command::Server {
            bind,
            max_room,
            heartbeat_secs,
            timeout_secs,
        } => {
            let bind = std::env::var(BIND_ENV).unwrap_or(bind);
            let config = ServerConfig {
                bind,
                max_room,
                heartbeat: Duration::from_secs(heartbeat_secs),
                timeout: Duration::from_secs(timeout_secs),
                ..ServerConfig::default()
            };
            let server = Server::bind(config).await?;
            println!("{}", server.url());
            tokio::signal::ctrl_c().await?;
            info!("shutting down");
            server.shutdown().await;
        }
        Command::Capture {
            source,
            model,
            server,
            room,
            name,
            stride,
            min_confidence,
            repeat_gap,
            fps,
            transcript,
        } => {
            let config = CaptureConfig {
                stride,
                min_confidence,
                repeat_gap,
                fps,
                transcript,
                ..CaptureConfig::new(source, model, server, room, name)
            };
            let report = run_capture_loop(&config).await?;
            for e in &report.published {
                print!("{}", transcript_line(e));
            }
            info!(
                frames = report.frames,
                windows = report.windows.len(),
                published = report.published.len(),
                dropped = report.dropped.len(),
                "capture finished"
            );
        }
        Command::Watch {
            server,
            room,
            name,
            count,
        } => watch(&server, &room, &name, count).await?,
        Command::Generate {
            out,
            classes,
            clips_per_class,
            seed,
        } => {
            let data = generate_synthetic_dataset(classes, clips_per_class, seed)?;
            data.save(&out)?;
            println!("wrote {} clips to {}", data.len(), out.display());
        }
        Command::Sequence { out, classes, seed } => {
            let frames = synthetic_sequence(&classes, seed);
            video::save_frames(&out, &frames)?;
            println!("wrote {} frames to {}", frames.len(), out.display());
        }
        Command::Train {
            data,
            out,
            kind,
            val_fraction,
            seed,
            epochs,
            learning_rate,
            c,
            components,
        } => {
            let data = LabeledDataset::load(&data)
                .with_context(|| format!("loading {}", data.display()))?;
            let (train_set, val_set) = data.split(val_fraction, seed);
            let val = (!val_set.is_empty()).then_some(&val_set);
            let started = Instant::now();
            match kind {
                Kind::Cnn => {
                    let mut model = SignModel::build(ModelConfig::new(data.num_classes()))?
                        .with_labels(data.vocabulary().to_vec())?;
                    let cfg = TrainConfig {
                        epochs,
                        learning_rate,
                        seed,
                        ..TrainConfig::default()
                    };
                    let report = train(&mut model, &train_set, val, &cfg)?;
                    for e in &report.epochs {
                        info!(
                            epoch = e.epoch,
                            loss = e.loss,
                            frame_accuracy = e.train_accuracy,
                            val_accuracy = e.val_accuracy,
                        );
                    }
                    model.save(&out)?;
                    print_accuracy("train", &evaluate(&model, &train_set)?);
                    if let Some(v) = val {
                        print_accuracy("val", &evaluate(&model, v)?);
                    }
                }
                Kind::Baseline => {
                    let config = PcaSvmConfig {
                        components,
                        svm: SvmConfig {
                            c,
                            seed,
                            ..SvmConfig::default()
                        },
                        ..PcaSvmConfig::default()
                    };
                    let (pipeline, _) = PcaSvmPipeline::fit(&train_set, &config)?;
                    pipeline.save(&out)?;
                    print_accuracy("train", &evaluate(&pipeline, &train_set)?);
                    if let Some(v) = val {
                        print_accuracy("val", &evaluate(&pipeline, v)?);
                    }
                }
            }
            println!(
                "saved {} ({:.1}s)",
                out.display(),
                started.elapsed().as_secs_f64()
            );
        }
        Command::Evaluate { model, data, kind } => {
            let data = LabeledDataset::load(&data)
                .with_context(|| format!("loading {}", data.display()))?;
            let report = match kind {
                Kind::Cnn => evaluate(&SignModel::load(&model)?, &data)?,
                Kind::Baseline => evaluate(&PcaSvmPipeline::load(&model)?, &data)?,
            };
            print_accuracy("accuracy", &report);
            for (i, row) in report.confusion.iter().enumerate() {
                let word = data.vocabulary().get(i).map_or("?", String::as_str);
                let cells: Vec<String> = row.iter().map(usize::to_string).collect();
                println!("{word:>12} {}", cells.join(" "));
            }
        }
    }
    Ok(())
}

fn print_accuracy(label: &str, report: &EvalReport) {
    println!("{label}: {:.3} ({} clips)", report.accuracy, report.total());
}

async fn watch(server: &str, room: &str, name: &str, count: Option<usize>) -> Result<()> {
    let mut client = Client::join(server, room, Role::Viewer, name).await?;
    info!(
        peer = client.peer_id(),
        members = client.members().len(),
        "joined"
    );
    let mut seen = 0;
    while count.is_none_or(|n| seen < n) {
        match client.recv().await? {
            Some(Message::CaptionBroadcast { name, caption, .. }) => {
                println!("{name}\t{}", transcript_line(&caption).trim_end());
                seen += 1;
            }
            Some(Message::PeerJoined { name, role, .. }) => {
                info!(%name, role = role.as_str(), "peer joined")
            }
            Some(Message::PeerLeft { peer_id }) => info!(peer_id, "peer left"),
            Some(_) => {}
            None => bail!("server closed the connection"),
        }
    }
    client.close().await?;
    Ok(())
}
