//! Trains a face-stream codec on a synthetic corpus and prints the curve.
//!
//! `cargo run --release --example desk_train -- [epochs] [hidden] [lr] [batch] [accum]`

use std::time::Instant;

use nvtok_core::codec::CodecConfig;
use nvtok_core::losses::LossWeights;
use nvtok_core::motion::StreamKind;
use nvtok_core::synth::{smooth_corpus, SynthConfig};
use nvtok_core::trainer::{codebook_utilization, fit, FitEvent, Objective, TrainConfig};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = arg(1, 100);
    let hidden = arg(2, 64);
    let lr = arg(3, 1e-4);
    let batch = arg(4, 4);
    let accum = arg(5, 4);

    let corpus = smooth_corpus(200, &SynthConfig::new(53), 1)?;
    let codec = CodecConfig { hidden, ..CodecConfig::face() };
    let objective = Objective::for_stream(StreamKind::Face, &LossWeights::default());
    let mut cfg = TrainConfig { epochs, batch_size: batch, grad_accum_steps: accum, seed: 1, ..TrainConfig::default() };
    cfg.schedule.base_lr = lr;

    let start = Instant::now();
    let res = fit::<f32>(&corpus, codec, objective, cfg, |ev| {
        if let FitEvent::Epoch(e) = ev {
            println!(
                "epoch {:3} train {:.4} val_recon {:.4} active {:3} reseeded {:3} t={:.0}s",
                e.epoch,
                e.train_loss,
                e.val.recon,
                e.active_codes,
                e.reseeded,
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    let usage = codebook_utilization(&res.best, &corpus)?;
    println!(
        "step0 {:.4} best {:.4} (epoch {}) ratio {:.3} usage {:.3} elapsed {:.0}s",
        res.step0_val.recon,
        res.best_val_recon,
        res.best_epoch,
        res.best_val_recon / res.step0_val.recon,
        usage,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
