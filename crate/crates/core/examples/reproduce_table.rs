//! Train every model of the number-prediction comparison over several seeds
//! and print a table of test accuracies. Runs whose log already ends with a
//! test record are reused, so an interrupted table can be resumed.
//!
//!     cargo run --release --example reproduce_table -- [desk|full] [seeds] [out_dir]
//!
//! At the desk preset a T=11 run takes roughly 10 minutes on one core and a
//! T=21 run about twice that.

use std::path::Path;

use dynskip::data::{generate, read_dataset, write_dataset, DatasetSpec, Variant};
use dynskip::harness::{cmd_train, ConfigLayer, ModelChoice, PathsLayer, Preset};
use dynskip::train::mean_std;

const ARMS: [(&str, ModelChoice, usize, f64); 4] = [
    ("LSTM", ModelChoice::PlainLstm, 1, 0.0),
    ("attention, K=10", ModelChoice::Attention, 10, 0.5),
    ("dynamic skip, lambda=1, K=10", ModelChoice::Dynskip, 10, 1.0),
    ("dynamic skip, lambda=0.5, K=10", ModelChoice::Dynskip, 10, 0.5),
];

fn logged_test_accuracy(log: &Path) -> Option<f64> {
    let text = std::fs::read_to_string(log).ok()?;
    let last: serde_json::Value = serde_json::from_str(text.lines().last()?).ok()?;
    (last["split"] == "test").then(|| last["accuracy"].as_f64())?
}

fn main() -> dynskip::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let preset = match args.first().map(String::as_str) {
        None | Some("desk") => Preset::Desk,
        Some("full") => Preset::Full,
        Some(other) => return Err(dynskip::Error::Config(format!("unknown preset {other}"))),
    };
    let seeds: u64 = args.get(1).map_or(3, |s| s.parse().expect("seed count"));
    let root = args.get(2).map_or_else(|| std::env::temp_dir().join("dynskip-table"), Into::into);

    let mut rows = Vec::new();
    for task in [Variant::Single, Variant::Double] {
        let data = root.join("data").join(task.name());
        let spec = DatasetSpec::reference(task, 0);
        if read_dataset(&data).map_or(true, |d| d.spec != spec) {
            std::fs::create_dir_all(&data).map_err(|e| dynskip::Error::io(&data, e))?;
            write_dataset(&data, &generate(&spec)?)?;
        }
        for (label, model, k, lambda) in ARMS {
            let mut accs = Vec::new();
            for seed in 0..seeds {
                let name = format!("{}-{}-K{k}-l{lambda}-seed{seed}", task.name(), model.name());
                let runs = root.join("runs");
                let flags = ConfigLayer {
                    task: Some(task),
                    model: Some(model),
                    k: Some(k),
                    lambda: Some(lambda),
                    seed: Some(seed),
                    paths: Some(PathsLayer {
                        data: Some(data.clone()),
                        checkpoint: Some(runs.join(format!("{name}.json"))),
                        log: Some(runs.join(format!("{name}.ndjson"))),
                    }),
                    ..ConfigLayer::default()
                };
                let cfg = ConfigLayer::preset(preset).overlay(&flags).resolve()?;
                let acc = match logged_test_accuracy(&cfg.paths.log) {
                    Some(acc) => acc,
                    None => cmd_train(&cfg, &mut std::io::stdout())?.test.accuracy,
                };
                accs.push(100.0 * acc);
            }
            rows.push((task, label, mean_std(&accs)));
        }
    }
    println!("| task | model | test accuracy (mean ± std over {seeds} seeds) |");
    println!("|---|---|---|");
    for (task, label, (mean, std)) in rows {
        println!("| T={} | {label} | {mean:.1} ± {std:.1} |", task.default_len());
    }
    Ok(())
}
