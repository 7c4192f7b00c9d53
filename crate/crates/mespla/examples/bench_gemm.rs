use std::time::Instant;
use mespla::engine::kernels::{gemm_nn, gemm_nt, gemm_tn};

fn bench(name: &str, flops: usize, mut f: impl FnMut()) {
    let t = Instant::now();
    let mut n = 0;
    while t.elapsed().as_secs_f64() < 0.5 {
        f();
        n += 1;
    }
    let per = t.elapsed().as_secs_f64() / n as f64;
    eprintln!("{name}: {:.1} ms, {:.2} GFLOP/s", per * 1e3, flops as f64 / per / 1e9);
}

fn main() {
    // stage-1 conv fwd: cols [131072 x 27] * w [4 x 27]^T
    let m = 131072;
    let a = vec![1.0f64; m * 27];
    let b = vec![1.0f64; 4 * 27];
    let mut out = vec![0.0f64; m * 4];
    bench("nt 131072x27x4", 2 * m * 27 * 4, || {
        gemm_nt(&a, &b, m, 27, 4, &mut out, false)
    });

    // stage-2 conv fwd: cols [32768 x 72] * w [8 x 72]^T
    let m2 = 32768;
    let a2 = vec![1.0f64; m2 * 72];
    let b2 = vec![1.0f64; 8 * 72];
    let mut out2 = vec![0.0f64; m2 * 8];
    bench("nt 32768x72x8", 2 * m2 * 72 * 8, || {
        gemm_nt(&a2, &b2, m2, 72, 8, &mut out2, false)
    });

    // pc conv3: per-batch nn w [256 x 32] * x [32 x 512], 32 batches
    let w = vec![1.0f64; 256 * 32];
    let x = vec![1.0f64; 32 * 512];
    let mut y = vec![0.0f64; 256 * 512];
    bench("nn 256x32x512 x32", 2 * 256 * 32 * 512 * 32, || {
        for _ in 0..32 {
            gemm_nn(&w, &x, 256, 32, 512, &mut y, false)
        }
    });

    // dW stage2: tn dy [32768 x 8], cols [32768 x 72]
    let dy = vec![1.0f64; m2 * 8];
    let mut dw = vec![0.0f64; 8 * 72];
    bench("tn 32768x8x72", 2 * m2 * 8 * 72, || {
        gemm_tn(&dy, &a2, m2, 8, 72, &mut dw, false)
    });

    // square-ish: 512x512x512
    let s = 512;
    let sa = vec![1.0f64; s * s];
    let sb = vec![1.0f64; s * s];
    let mut sc = vec![0.0f64; s * s];
    bench("nn 512^3", 2 * s * s * s, || {
        gemm_nn(&sa, &sb, s, s, s, &mut sc, false)
    });
}
