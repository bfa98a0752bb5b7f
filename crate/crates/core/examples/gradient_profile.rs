//! How much of the final loss's gradient reaches the first time steps, for a
//! plain LSTM and a dynamic-skip LSTM on the double-skip task (T=21).
//!
//!     cargo run --release --example gradient_profile -- [train_size] [epochs]

use dynskip::analysis::{grad_norm_probe, write_csv, ProbeTarget};
use dynskip::data::{generate, DatasetSpec, Variant};
use dynskip::model::{Checkpoint, ModelKind, ModelParams, SkipConfig};
use dynskip::train::{train, TrainConfig};

fn main() -> dynskip::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let train_size: usize = args.first().map_or(3_000, |s| s.parse().expect("train size"));
    let epochs: usize = args.get(1).map_or(2, |s| s.parse().expect("epochs"));

    let spec = DatasetSpec {
        train: train_size,
        dev: 1_000,
        test: 500,
        ..DatasetSpec::reference(Variant::Double, 0)
    };
    let ds = generate(&spec)?;
    let cfg = TrainConfig {
        epochs,
        patience: usize::MAX,
        ..TrainConfig::default()
    };
    let skip = SkipConfig {
        max_skip: 10,
        lambda: 0.5,
        hidden_size: 64,
        input_size: 10,
        num_classes: 10,
    };
    let mut profiles = Vec::new();
    for (tag, config) in [("plain", SkipConfig::plain_lstm(64, 10, 10)), ("dynskip", skip)] {
        let initial = Checkpoint::new(ModelKind::Dynskip, ModelParams::init(config, 0)?);
        let trained = train(initial, &ds.train, &ds.dev, &cfg, &mut |_| Ok(()))?.best;
        profiles.push(grad_norm_probe(&trained, &ds.test, 20, ProbeTarget::Hidden, tag, 100)?);
    }
    write_csv(&mut std::io::stdout(), &profiles).map_err(|e| dynskip::Error::io("<stdout>", e))?;
    let (plain, dynskip) = (profiles[0].early_mean(5), profiles[1].early_mean(5));
    println!("mean normalized norm over t=1..5: plain {plain:.3e}, dynskip {dynskip:.3e}, ratio {:.2}", dynskip / plain);
    Ok(())
}
