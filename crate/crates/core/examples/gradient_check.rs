//! Check every autodiff operation and the full model against central finite
//! differences, then show that a broken backward rule is caught.
//!
//!     cargo run --release --example gradient_check

use dynskip::analysis::{model_gradient_check, op_checks, plain_equivalence, FdOptions};
use dynskip::autodiff::Fault;
use dynskip::data::{generate, DatasetSpec, Example, Variant};
use dynskip::model::{Checkpoint, ModelKind, ModelParams, SkipConfig};

fn main() -> dynskip::Result<()> {
    for (name, report) in op_checks(1, None)? {
        println!("{name:<12} max rel. error {:.2e}", report.max_rel_error);
    }

    let spec = DatasetSpec {
        seq_len: 6,
        allow_custom_len: true,
        train: 4,
        dev: 1,
        test: 1,
        ..DatasetSpec::reference(Variant::Single, 3)
    };
    let batch = generate(&spec)?.train;
    let refs: Vec<&Example> = batch.iter().collect();
    // one forced skip per step and row, each within 1..=K
    let actions: Vec<Vec<usize>> = (0..6).map(|t| (0..4).map(|r| 1 + (t + r) % 3).collect()).collect();
    let cfg = SkipConfig {
        max_skip: 3,
        lambda: 0.5,
        hidden_size: 6,
        input_size: 10,
        num_classes: 10,
    };
    let ck = Checkpoint::new(ModelKind::Dynskip, ModelParams::init(cfg, 3)?);
    let opts = FdOptions::default();
    let clean = model_gradient_check(&ck, &refs, &actions, None, &opts)?;
    let broken = model_gradient_check(&ck, &refs, &actions, Some(Fault::SigmoidBackward), &opts)?;
    println!("model, correct backward: {:.2e}", clean.max_rel_error);
    println!("model, sigmoid backward broken: {:.2e}", broken.max_rel_error);

    let eq = plain_equivalence(0, 100, 4, 16)?;
    println!("K=1, lambda=0 vs plain LSTM reference: {} of {} values differ", eq.mismatches, eq.compared);
    Ok(())
}
