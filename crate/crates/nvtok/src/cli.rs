//! `nvtok` subcommands. Exit status: 0 ok, 2 usage, 3 validation, 4 I/O.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nvtok_core::metrics::{MetricOptions, ReportScale, VertexMap};
use nvtok_core::motion::{MotionSequence, StreamKind};
use nvtok_core::savgol;
use nvtok_core::sequence::{Role, TimedWord};
use nvtok_core::synth::{smooth_corpus, SynthConfig};
use nvtok_core::trainer::{fit, FitEvent, Objective};
use serde_json::json;

use crate::annotation::{read_annotation, Word};
use crate::api::{self, Handle, MetricJson, TokenizeOptions};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::formats::{self, Checkpoint};

#[derive(Debug, Parser)]
#[command(name = "nvtok", version, about = "Tokenize face and body motion into discrete codes")]
pub struct Cli {
    /// Print a single JSON object on stdout instead of a summary line.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stream {
    Face,
    Body,
}

impl From<Stream> for StreamKind {
    fn from(s: Stream) -> Self {
        match s {
            Stream::Face => StreamKind::Face,
            Stream::Body => StreamKind::Body,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ChatRole {
    User,
    Assistant,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus of smooth motion sequences as MSEQ1 files.
    Synth {
        /// Number of sequences.
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// Padded length in frames; valid lengths are drawn from [3W/4, W].
        #[arg(long = "W", default_value_t = 512)]
        window: usize,
        /// Frame width.
        #[arg(long, default_value_t = 53)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 25.0)]
        fps: f32,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a codec; progress is printed as JSON lines.
    Train {
        #[arg(long, value_enum, default_value_t = Stream::Face)]
        stream: Stream,
        /// TOML run configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory of MSEQ1 files.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path (written atomically).
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Print only epoch records, not every step.
        #[arg(long)]
        epochs_only: bool,
    },
    /// Encode an MSEQ1 file into code indices, one per line.
    Encode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Encode every window of a long sequence instead of only the first.
        #[arg(long)]
        split: bool,
    },
    /// Decode code indices back into an MSEQ1 file.
    Decode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 25.0)]
        fps: f32,
    },
    /// Interleave timed words with face and body codes as chat JSON lines.
    Tokenize {
        /// JSON array of {word, t_start, t_end}.
        #[arg(long)]
        words: PathBuf,
        /// Face code file.
        #[arg(long)]
        face: PathBuf,
        /// Body code file.
        #[arg(long)]
        body: PathBuf,
        #[arg(long, default_value_t = 25.0)]
        fps: f32,
        /// Frames per code.
        #[arg(long, default_value_t = 8)]
        ratio: usize,
        /// Time of the first motion frame, in seconds.
        #[arg(long, default_value_t = 0.0)]
        clip_start: f64,
        #[arg(long, value_enum, default_value_t = ChatRole::User)]
        role: ChatRole,
        #[arg(long, default_value = "")]
        name: String,
        /// Prepend the system prompt line.
        #[arg(long)]
        system: bool,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare predicted sequences with ground truth and print metrics as JSON.
    Eval {
        /// MSEQ1 file or directory.
        #[arg(long)]
        gt: PathBuf,
        /// MSEQ1 file or directory with the same file names as --gt.
        #[arg(long)]
        pred: PathBuf,
        /// Report in the conventional table units of the stream.
        #[arg(long = "scale-paper")]
        table_units: bool,
        #[arg(long, value_enum, default_value_t = Stream::Face)]
        stream: Stream,
        /// VMAP1 linear vertex map; identity when omitted.
        #[arg(long)]
        vmap: Option<PathBuf>,
        #[arg(long, default_value_t = nvtok_core::metrics::DEFAULT_WVL2_WINDOW)]
        window: usize,
        /// Window stride; defaults to the window.
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long, default_value_t = nvtok_core::metrics::DEFAULT_DIVERSITY_PAIRS)]
        pairs: usize,
        #[arg(long, default_value_t = nvtok_core::metrics::DEFAULT_DIVERSITY_REPEATS)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write one MSEQ1 file (and a word list) per utterance of an annotation.
    Ingest {
        #[arg(long)]
        annotation: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Stream::Face)]
        stream: Stream,
        /// Skip Savitzky–Golay smoothing.
        #[arg(long)]
        no_smooth: bool,
    },
}

/// Parses `std::env::args`, runs the command and returns the exit status.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn report(json_mode: bool, value: serde_json::Value, human: String) {
    if json_mode {
        println!("{value}");
    } else {
        println!("{human}");
    }
}

/// A single file, or every `*.mseq` in a directory.
fn load_set(path: &Path) -> Result<Vec<(String, MotionSequence)>> {
    let files = if path.is_dir() { formats::list_mseq(path)? } else { vec![path.to_path_buf()] };
    files
        .iter()
        .map(|f| {
            let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, formats::read_mseq(f)?))
        })
        .collect()
}

fn safe_name(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' }).collect()
}

pub fn run(cli: Cli) -> Result<()> {
    let json_mode = cli.json;
    match cli.command {
        Command::Synth { n, window, d, seed, fps, out } => {
            if window == 0 {
                return Err(Error::Usage("--W must be positive".into()));
            }
            let cfg = SynthConfig {
                min_len: (window * 3 / 4).max(1),
                max_len: window,
                pad_to: window,
                fps,
                ..SynthConfig::new(d)
            };
            let corpus = smooth_corpus(n, &cfg, seed)?;
            create_dir(&out)?;
            for (i, seq) in corpus.iter().enumerate() {
                formats::write_mseq(&out.join(format!("seq_{i:05}.mseq")), seq)?;
            }
            report(
                json_mode,
                json!({"written": n, "dir": out, "frames": window, "width": d}),
                format!("wrote {n} sequences of {window}x{d} to {}", out.display()),
            );
        }

        Command::Train { stream, config, data, out, seed, epochs, epochs_only } => {
            let kind = StreamKind::from(stream);
            let mut run_cfg = match &config {
                Some(p) => RunConfig::read(p)?,
                None => RunConfig::default(),
            };
            if let Some(s) = seed {
                run_cfg.train.seed = s;
            }
            if let Some(e) = epochs {
                run_cfg.train.epochs = e;
            }
            let codec_cfg = run_cfg.codec_config(kind);
            let weights = run_cfg.loss_weights();
            weights.validate()?;
            let objective = Objective::for_stream(kind, &weights);
            let train_cfg = run_cfg.train_config();
            let mut corpus = Vec::new();
            for (name, seq) in load_set(&data)? {
                if seq.width() != codec_cfg.width {
                    return Err(nvtok_core::Error::Validation(format!(
                        "{name}: width {} does not match the {:?} stream ({})",
                        seq.width(),
                        kind,
                        codec_cfg.width
                    ))
                    .into());
                }
                corpus.push(if run_cfg.train.smooth {
                    seq.smooth(savgol::DEFAULT_WINDOW, savgol::DEFAULT_POLYORDER)?
                } else {
                    seq
                });
            }
            let res = fit::<f32>(&corpus, codec_cfg, objective, train_cfg.clone(), |ev| match ev {
                FitEvent::Step(s) if !epochs_only => println!(
                    "{}",
                    json!({"event": "step", "epoch": s.epoch, "step": s.step, "update": s.update, "lr": s.lr,
                           "loss": s.loss, "vq": s.vq, "recon": s.recon, "vel": s.vel, "grad_norm": s.grad_norm})
                ),
                FitEvent::Epoch(e) => println!(
                    "{}",
                    json!({"event": "epoch", "epoch": e.epoch, "train_loss": e.train_loss,
                           "val_vq": e.val.vq, "val_recon": e.val.recon, "val_vel": e.val.vel, "val_loss": e.val.total,
                           "active_codes": e.active_codes, "reseeded": e.reseeded})
                ),
                _ => {}
            })?;
            let mut ckpt = Checkpoint::new(res.best, Some(kind));
            ckpt.meta.insert("best_epoch".into(), json!(res.best_epoch));
            ckpt.meta.insert("best_val_recon".into(), json!(res.best_val_recon));
            ckpt.meta.insert("step0_val_recon".into(), json!(res.step0_val.recon));
            ckpt.meta.insert("seed".into(), json!(train_cfg.seed));
            formats::write_checkpoint(&out, &ckpt)?;
            println!(
                "{}",
                json!({"event": "done", "out": out, "best_epoch": res.best_epoch,
                       "best_val_recon": res.best_val_recon, "step0_val_recon": res.step0_val.recon})
            );
        }

        Command::Encode { ckpt, input, out, split } => {
            let handle = Handle::open(&ckpt)?;
            let seq = formats::read_mseq(&input)?;
            let codes = handle.encode_sequence(&seq, split)?;
            write_text(out.as_deref(), &formats::render_codes(&codes))?;
        }

        Command::Decode { ckpt, codes, out, fps } => {
            let handle = Handle::open(&ckpt)?;
            let idx = formats::read_codes(&codes)?;
            let seq = handle.decode_sequence(&idx, fps)?;
            formats::write_mseq(&out, &seq)?;
            report(
                json_mode,
                json!({"out": out, "frames": seq.len(), "width": seq.width()}),
                format!("wrote {}x{} frames to {}", seq.len(), seq.width(), out.display()),
            );
        }

        Command::Tokenize { words, face, body, fps, ratio, clip_start, role, name, system, out } => {
            let text = fs::read_to_string(&words).map_err(|e| Error::io(&words, e))?;
            let list: Vec<Word> = serde_json::from_str(&text).map_err(|e| Error::from(e).in_file(&words))?;
            let timed: Vec<TimedWord> = list.into_iter().map(|w| TimedWord::new(w.word, w.t_start, w.t_end)).collect();
            let opts = TokenizeOptions {
                fps,
                ratio,
                clip_start,
                role: match role {
                    ChatRole::User => Role::User,
                    ChatRole::Assistant => Role::Assistant,
                },
                name,
                system,
            };
            let lines = api::tokenize(&timed, &formats::read_codes(&face)?, &formats::read_codes(&body)?, &opts)?;
            write_text(out.as_deref(), &lines)?;
        }

        Command::Eval { gt, pred, table_units, stream, vmap, window, stride, pairs, repeats, seed } => {
            let g = load_set(&gt)?;
            let p = load_set(&pred)?;
            if gt.is_dir() {
                let gn: Vec<&String> = g.iter().map(|x| &x.0).collect();
                let pn: Vec<&String> = p.iter().map(|x| &x.0).collect();
                if gn != pn {
                    return Err(
                        nvtok_core::Error::Validation("--gt and --pred hold different file names".into()).into()
                    );
                }
            }
            let opts = MetricOptions {
                map: match &vmap {
                    Some(path) => formats::read_vmap(path)?,
                    None => VertexMap::Identity,
                },
                window,
                stride: stride.unwrap_or(window),
                pairs,
                repeats,
                seed,
            };
            let gs: Vec<MotionSequence> = g.into_iter().map(|x| x.1).collect();
            let ps: Vec<MotionSequence> = p.into_iter().map(|x| x.1).collect();
            let mut r = api::metrics(&gs, &ps, &opts)?;
            if table_units {
                r = r.scaled(&ReportScale::for_stream(stream.into()));
            }
            let mut value = serde_json::to_value(MetricJson::from(r))?;
            value["sequences"] = json!(gs.len());
            value["units"] = json!(if table_units { "table" } else { "raw" });
            println!("{value}");
        }

        Command::Ingest { annotation, out, stream, no_smooth } => {
            let ann = read_annotation(&annotation)?;
            let kind = StreamKind::from(stream);
            create_dir(&out)?;
            let mut written = Vec::new();
            let mut missing = Vec::new();
            for u in &ann.conversation {
                let Some(seq) = ann.utterance_motion(&u.id, kind, !no_smooth)? else {
                    missing.push(u.id.clone());
                    continue;
                };
                let stem = safe_name(&u.id);
                formats::write_mseq(&out.join(format!("{stem}.mseq")), &seq)?;
                let words = serde_json::to_string(&u.words)?;
                let wpath = out.join(format!("{stem}.words.json"));
                fs::write(&wpath, words).map_err(|e| Error::io(&wpath, e))?;
                written.push(json!({"id": u.id, "file": format!("{stem}.mseq"), "frames": seq.len(),
                                    "clip_start": ann.clip_start(&u.id, kind)}));
            }
            report(
                json_mode,
                json!({"written": written, "missing": missing}),
                format!("wrote {} utterances to {} ({} without features)", written.len(), out.display(), missing.len()),
            );
        }
    }
    Ok(())
}
