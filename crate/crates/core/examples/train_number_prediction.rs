//! Generate data, train a dynamic-skip LSTM and evaluate the best checkpoint,
//! using the same code paths as the `dynskip` command.
//!
//!     cargo run --release --example train_number_prediction -- [single|double] [model] [train_size] [epochs]
//!
//! `model` is dynskip, attention or plain_lstm. The defaults (5,000 examples,
//! 3 epochs, hidden size 100) finish in a few minutes; the desk preset uses
//! 30,000 examples, 15 epochs and hidden size 200.

use dynskip::data::{DatasetSpec, Variant};
use dynskip::harness::{cmd_eval, cmd_generate, cmd_train, ConfigLayer, ModelChoice, PathsLayer};

fn main() -> dynskip::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let task: Variant = args.first().map_or(Ok(Variant::Single), |s| s.parse())?;
    let model = match args.get(1).map(String::as_str) {
        None | Some("dynskip") => ModelChoice::Dynskip,
        Some("attention") => ModelChoice::Attention,
        Some("plain_lstm") => ModelChoice::PlainLstm,
        Some(other) => return Err(dynskip::Error::Config(format!("unknown model {other}"))),
    };
    let train_size: usize = args.get(2).map_or(5_000, |s| s.parse().expect("train size"));
    let epochs: usize = args.get(3).map_or(3, |s| s.parse().expect("epochs"));

    let root = std::env::temp_dir().join("dynskip-train-example");
    let data = root.join(task.name());
    let spec = DatasetSpec {
        train: train_size,
        dev: 2_000,
        test: 2_000,
        ..DatasetSpec::reference(task, 0)
    };
    let mut stdout = std::io::stdout();
    cmd_generate(&spec, &data, &mut stdout)?;

    let cfg = ConfigLayer {
        task: Some(task),
        model: Some(model),
        hidden_size: Some(100),
        epochs: Some(epochs),
        paths: Some(PathsLayer {
            data: Some(data.clone()),
            checkpoint: Some(root.join("model.json")),
            log: Some(root.join("train.ndjson")),
        }),
        ..ConfigLayer::default()
    }
    .resolve()?;
    let report = cmd_train(&cfg, &mut stdout)?;
    for r in report.outcome.records.iter().filter(|r| r.split == "dev") {
        println!("  epoch {:>2}  dev accuracy {:.4}  skip entropy {:.3}", r.epoch, r.accuracy, r.policy_entropy);
    }
    cmd_eval(&cfg.paths.checkpoint, &data, 3, 0, &mut stdout)?;
    Ok(())
}
