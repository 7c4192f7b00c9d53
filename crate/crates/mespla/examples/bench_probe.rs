use std::time::Instant;

use mespla::engine::Tape;
use mespla::harness::train::prepare;
use mespla::mfef::{init_model, BatchInput, Mode, ModelConfig};
use mespla::preprocess::{ModalityMask, PreprocessConfig};
use mespla::sensors::load_dataset;

fn main() {
    let ds = load_dataset("/tmp/ds400").unwrap();
    let t0 = Instant::now();
    let data = prepare(&ds, &PreprocessConfig::default()).unwrap();
    eprintln!("prepare: {:.2} s", t0.elapsed().as_secs_f64());

    let cfg = ModelConfig {
        width_mult: 0.25,
        seed: 5,
        gps_window: ds.meta.gps_window,
        ..Default::default()
    };
    let model = init_model(&cfg).unwrap();
    let refs: Vec<_> = (0..32).map(|i| &data.inputs[i]).collect();
    let batch = BatchInput::stack(&refs, ModalityMask::ALL).unwrap();

    for _ in 0..2 {
        let t1 = Instant::now();
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, &batch, Mode::Train).unwrap();
        let fwd_t = t1.elapsed().as_secs_f64();
        let t2 = Instant::now();
        let target = tape.constant(mespla::engine::Tensor::zeros(vec![32, 1]));
        let loss = tape.mse_loss(fwd.pred, target).unwrap();
        tape.backward(loss).unwrap();
        eprintln!(
            "forward: {:.3} s, backward: {:.3} s, nodes: {}",
            fwd_t,
            t2.elapsed().as_secs_f64(),
            tape.len()
        );
    }

    // Single-modality timings
    for (name, mask) in [
        ("img", ModalityMask::new(true, false, false)),
        ("pc", ModalityMask::new(false, true, false)),
        ("gps", ModalityMask::new(false, false, true)),
    ] {
        let mut c2 = cfg.clone();
        c2.modalities = mask;
        let m2 = init_model(&c2).unwrap();
        let b2 = BatchInput::stack(&refs, mask).unwrap();
        let t1 = Instant::now();
        let mut tape = Tape::new();
        let fwd = m2.forward(&mut tape, &b2, Mode::Train).unwrap();
        let target = tape.constant(mespla::engine::Tensor::zeros(vec![32, 1]));
        let loss = tape.mse_loss(fwd.pred, target).unwrap();
        tape.backward(loss).unwrap();
        eprintln!("{name}: fwd+bwd {:.3} s", t1.elapsed().as_secs_f64());
    }
}
