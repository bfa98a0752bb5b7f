//! Sampled skips against the expected-state attention baseline and a plain
//! LSTM, trained briefly on the same data.
//!
//!     cargo run --release --example attention_vs_skip -- [train_size] [epochs]

use dynskip::data::{generate, DatasetSpec, Variant};
use dynskip::model::{Checkpoint, ModelKind, ModelParams, SkipConfig};
use dynskip::train::{evaluate, train, EvalMode, TrainConfig};

fn main() -> dynskip::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let train_size: usize = args.first().map_or(5_000, |s| s.parse().expect("train size"));
    let epochs: usize = args.get(1).map_or(3, |s| s.parse().expect("epochs"));

    let spec = DatasetSpec {
        train: train_size,
        dev: 2_000,
        test: 2_000,
        ..DatasetSpec::reference(Variant::Single, 0)
    };
    let ds = generate(&spec)?;
    let skip = SkipConfig {
        max_skip: 10,
        lambda: 0.5,
        hidden_size: 100,
        input_size: 10,
        num_classes: 10,
    };
    let arms = [
        ("dynamic skip", ModelKind::Dynskip, skip),
        ("attention", ModelKind::Attention, skip),
        ("plain LSTM", ModelKind::Dynskip, SkipConfig::plain_lstm(100, 10, 10)),
    ];
    let cfg = TrainConfig {
        epochs,
        patience: usize::MAX,
        ..TrainConfig::default()
    };
    println!("{:<14} {:>9} {:>14}", "model", "test acc", "skip entropy");
    for (name, kind, skip) in arms {
        let initial = Checkpoint::new(kind, ModelParams::init(skip, 0)?);
        let outcome = train(initial, &ds.train, &ds.dev, &cfg, &mut |_| Ok(()))?;
        let test = evaluate(&outcome.best, &ds.test, EvalMode::Greedy, 100)?;
        println!("{name:<14} {:>9.4} {:>14.3}", test.accuracy, test.policy_entropy);
    }
    Ok(())
}
