//! A K=1, λ=0 model trained through the tape follows the hand-written LSTM
//! reference step for step: same losses, same parameters, bit for bit.

use dynskip::analysis::{PlainLstm, Reduction};
use dynskip::data::{encode_batch, generate, DatasetSpec, Example, Variant};
use dynskip::model::{Checkpoint, ModelKind, ModelParams, SkipConfig};
use dynskip::rng;
use dynskip::train::{train_step, Optimizer};
use dynskip::Tape;

fn batches() -> Vec<Vec<Example>> {
    let spec = DatasetSpec {
        train: 20 * 8,
        dev: 1,
        test: 1,
        ..DatasetSpec::reference(Variant::Single, 21)
    };
    generate(&spec).unwrap().train.chunks(8).map(<[Example]>::to_vec).collect()
}

#[test]
fn plain_training_matches_the_reference_bitwise() {
    let params = ModelParams::init(SkipConfig::plain_lstm(12, 10, 10), 4).unwrap();
    let mut tape_model = Checkpoint::new(ModelKind::Dynskip, params.clone());
    let mut reference_params = params;
    let mut tape_opt = Optimizer::adam(0.01);
    let mut reference_opt = Optimizer::adam(0.01);
    let mut actions = rng::stream(0, "actions");
    let mut tape = Tape::new();

    for (step, batch) in batches().iter().enumerate() {
        let refs: Vec<&Example> = batch.iter().collect();
        let stats = train_step(&mut tape, &mut tape_model, &refs, &mut actions, &mut tape_opt, step).unwrap();

        let reference = PlainLstm::new(&reference_params);
        let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
        let fwd = reference.forward(&encode_batch(&refs).unwrap()).unwrap();
        let losses = fwd.losses(&labels);
        let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let mut grads = reference.backward(&fwd, &labels, Reduction::Mean).grads;
        reference_opt.step(reference_params.tensors_mut(), &mut grads);

        assert_eq!(stats.cross_entropy, mean_loss, "loss differs at step {step}");
        assert_eq!(tape_model.params.tensors(), reference_params.tensors(), "parameters differ after step {step}");
    }
}
