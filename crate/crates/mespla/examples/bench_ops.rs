use std::time::Instant;
use mespla::engine::{Tape, Tensor};

fn t(name: &str, mut f: impl FnMut()) {
    let start = Instant::now();
    let mut n = 0;
    while start.elapsed().as_secs_f64() < 0.3 {
        f();
        n += 1;
    }
    eprintln!("{name}: {:.2} ms", start.elapsed().as_secs_f64() * 1e3 / n as f64);
}

fn main() {
    // Stage-1-sized conv: x [32,4,64,64], w [4,4,3,3]
    let x = Tensor::full(vec![32, 4, 64, 64], 0.5);
    let w = Tensor::full(vec![4, 4, 3, 3], 0.1);
    t("conv2d 32x4x64x64 (4->4)", || {
        let mut tape = Tape::new();
        let xi = tape.constant(x.clone());
        let wi = tape.constant(w.clone());
        tape.conv2d(xi, wi, None, 1, 1).unwrap();
    });
    // Same but forward+backward
    t("conv2d fwd+bwd", || {
        let mut tape = Tape::new();
        let xi = tape.leaf(x.clone());
        let wi = tape.leaf(w.clone());
        let y = tape.conv2d(xi, wi, None, 1, 1).unwrap();
        let l = tape.sum_all(y).unwrap();
        tape.backward(l).unwrap();
    });
    // BN on the same shape
    t("batchnorm train 32x4x64x64", || {
        let mut tape = Tape::new();
        let xi = tape.constant(x.clone());
        let g = tape.constant(Tensor::full(vec![4], 1.0));
        let b = tape.constant(Tensor::zeros(vec![4]));
        tape.batchnorm(xi, g, b, 1e-5, true, &[0.0; 4], &[1.0; 4], 0.1)
            .unwrap();
    });
    t("relu 32x4x64x64", || {
        let mut tape = Tape::new();
        let xi = tape.constant(x.clone());
        tape.relu(xi).unwrap();
    });
    t("add 32x4x64x64", || {
        let mut tape = Tape::new();
        let xi = tape.constant(x.clone());
        let yi = tape.constant(x.clone());
        tape.add(xi, yi).unwrap();
    });
    // pc conv3 shape: [32, 32, 512] -> 256 channels
    let pc = Tensor::full(vec![32, 32, 512], 0.5);
    let wpc = Tensor::full(vec![256, 32], 0.1);
    t("pointwise 32ch->256 N=512 fwd", || {
        let mut tape = Tape::new();
        let xi = tape.constant(pc.clone());
        let wi = tape.constant(wpc.clone());
        tape.pointwise_conv1d(xi, wi, None).unwrap();
    });
    t("pointwise fwd+bwd", || {
        let mut tape = Tape::new();
        let xi = tape.leaf(pc.clone());
        let wi = tape.leaf(wpc.clone());
        let y = tape.pointwise_conv1d(xi, wi, None).unwrap();
        let l = tape.sum_all(y).unwrap();
        tape.backward(l).unwrap();
    });
    t("bn train 32x256x512", || {
        let big = Tensor::full(vec![32, 256, 512], 0.5);
        let mut tape = Tape::new();
        let xi = tape.constant(big.clone());
        let g = tape.constant(Tensor::full(vec![256], 1.0));
        let b = tape.constant(Tensor::zeros(vec![256]));
        tape.batchnorm(xi, g, b, 1e-5, true, &vec![0.0; 256], &vec![1.0; 256], 0.1)
            .unwrap();
    });
}
