use super::*;
use crate::engine::checkpoint::write_entries;
use rand::Rng;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        width_mult: 0.125,
        seed: 3,
        gps_window: 4,
        ..Default::default()
    }
}

fn random_input(seed: u64, h: usize, w: usize, n: usize, t: usize) -> ModelInput {
    let mut rng = seeds::rng(seed, stream::GRADCHECK, 500);
    let mut mk = |shape: Vec<usize>, scale: f64| {
        let numel = shape.iter().product();
        Tensor::new(
            shape,
            (0..numel)
                .map(|_| rng.random::<f64>() * scale)
                .collect::<Vec<_>>(),
        )
        .unwrap()
    };
    ModelInput {
        image_tensor: mk(vec![3, h, w], 1.0),
        point_tensor: mk(vec![n, 3], 20.0),
        gps_tensor: mk(vec![t, 3], 1.0),
        mask: ModalityMask::ALL,
    }
}

#[test]
fn same_config_yields_identical_checkpoints() {
    let a = init_model(&tiny_config()).unwrap();
    let b = init_model(&tiny_config()).unwrap();
    assert_eq!(
        write_entries(&a.to_entries()).unwrap(),
        write_entries(&b.to_entries()).unwrap()
    );
    let c = init_model(&ModelConfig {
        seed: 4,
        ..tiny_config()
    })
    .unwrap();
    assert_ne!(
        write_entries(&a.to_entries()).unwrap(),
        write_entries(&c.to_entries()).unwrap()
    );
}

#[test]
fn disabling_stn_removes_its_parameters() {
    let with = init_model(&tiny_config()).unwrap();
    assert!(with.param_names().iter().any(|n| n.starts_with("stn.")));
    let without = init_model(&ModelConfig {
        use_stn: false,
        ..tiny_config()
    })
    .unwrap();
    assert!(!without.param_names().iter().any(|n| n.starts_with("stn.")));
    assert!(with.param_count() > without.param_count());
}

#[test]
fn fresh_stn_is_exactly_identity() {
    let model = init_model(&tiny_config()).unwrap();
    let mut rng = seeds::rng(9, stream::GRADCHECK, 501);
    let cloud = Tensor::new(
        vec![17, 3],
        (0..51).map(|_| rng.random::<f64>() * 30.0).collect::<Vec<_>>(),
    )
    .unwrap();
    let t = model.stn_transform(&cloud).unwrap();
    let identity = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    assert_eq!(t.data(), &identity);
}

#[test]
fn width_scaling_rule() {
    let cfg = ModelConfig {
        width_mult: 0.25,
        ..Default::default()
    };
    let dims = cfg.scaled();
    assert_eq!(dims.d_img, 128);
    assert_eq!(dims.d_pc, 256);
    assert_eq!(dims.d_gps, 32);
    assert_eq!(dims.d_fused, 128); // not scaled
    assert_eq!(dims.stages, [4, 8, 16, 32]);
    assert_eq!(dims.pc, [16, 32, 256]);
}

#[test]
fn default_gps_feature_width_is_128() {
    let cfg = ModelConfig {
        modalities: ModalityMask::new(false, false, true),
        ..Default::default()
    };
    let model = init_model(&cfg).unwrap();
    let input = random_input(1, 32, 32, 16, 8);
    let batch = BatchInput::stack(&[&input], ModalityMask::new(false, false, true)).unwrap();
    let mut tape = Tape::new();
    let mut ctx = encoders::ForwardCtx::new(&model, &mut tape, Mode::Eval, false);
    let feat = encoders::gps_feature(&mut ctx, &mut tape, batch.gps.as_ref().unwrap()).unwrap();
    assert_eq!(tape.value(feat).shape(), &[1, 128]);
}

#[test]
fn zero_image_through_fresh_model_is_finite_with_default_width() {
    let cfg = ModelConfig {
        modalities: ModalityMask::new(true, false, false),
        ..Default::default()
    };
    let model = init_model(&cfg).unwrap();
    let mut tape = Tape::new();
    let mut ctx = encoders::ForwardCtx::new(&model, &mut tape, Mode::Eval, false);
    let x = tape.constant(Tensor::zeros(vec![1, 3, 32, 32]));
    let feat = encoders::image_feature(&mut ctx, &mut tape, x).unwrap();
    assert_eq!(tape.value(feat).shape(), &[1, 512]);
    assert!(tape.value(feat).all_finite());
}

#[test]
fn undersized_image_rejected() {
    let model = init_model(&tiny_config()).unwrap();
    let mut tape = Tape::new();
    let mut ctx = encoders::ForwardCtx::new(&model, &mut tape, Mode::Eval, false);
    let x = tape.constant(Tensor::zeros(vec![1, 3, 16, 16]));
    assert!(matches!(
        encoders::image_feature(&mut ctx, &mut tape, x),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn point_encoder_is_permutation_and_padding_invariant() {
    let model = init_model(&tiny_config()).unwrap();
    let n = 24;
    let input = random_input(7, 32, 32, n, 4);
    let run = |pts: &Tensor| -> Vec<f64> {
        let mut tape = Tape::new();
        let mut ctx = encoders::ForwardCtx::new(&model, &mut tape, Mode::Eval, false);
        let x = tape.constant(pts.clone());
        let feat = encoders::point_feature(&mut ctx, &mut tape, x).unwrap();
        tape.value(feat).data().to_vec()
    };
    let base = Tensor::new(
        vec![1, n, 3],
        input.point_tensor.data().to_vec(),
    )
    .unwrap();
    let a = run(&base);

    // Permute points.
    let mut rng = seeds::rng(8, stream::GRADCHECK, 502);
    let mut perm: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    perm.shuffle(&mut rng);
    let mut permuted = vec![0.0; n * 3];
    for (to, &from) in perm.iter().enumerate() {
        permuted[to * 3..to * 3 + 3]
            .copy_from_slice(&input.point_tensor.data()[from * 3..from * 3 + 3]);
    }
    let b = run(&Tensor::new(vec![1, n, 3], permuted).unwrap());
    for (x, y) in a.iter().zip(b.iter()) {
        assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
    }

    // Pad by repeating the final point.
    let mut padded = input.point_tensor.data().to_vec();
    let last = padded[(n - 1) * 3..].to_vec();
    for _ in 0..5 {
        padded.extend_from_slice(&last);
    }
    let c = run(&Tensor::new(vec![1, n + 5, 3], padded).unwrap());
    for (x, y) in a.iter().zip(c.iter()) {
        assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
    }
}

#[test]
fn gps_encoder_matches_hand_unrolled_recurrence() {
    let cfg = ModelConfig {
        width_mult: 0.125,
        seed: 5,
        gps_window: 6,
        ..Default::default()
    };
    let model = init_model(&cfg).unwrap();
    let dh = cfg.scaled().d_gps;
    // Constant track repeated T times.
    let step = [0.3, -0.2, 0.02];
    let t_len = 6;
    let gps = Tensor::new(
        vec![t_len, 3],
        (0..t_len).flat_map(|_| step).collect::<Vec<_>>(),
    )
    .unwrap();
    let input = ModelInput {
        image_tensor: Tensor::zeros(vec![3, 32, 32]),
        point_tensor: Tensor::zeros(vec![8, 3]),
        gps_tensor: gps,
        mask: ModalityMask::new(false, false, true),
    };
    let batch = BatchInput::stack(&[&input], input.mask).unwrap();
    let mut tape = Tape::new();
    let mut ctx = encoders::ForwardCtx::new(&model, &mut tape, Mode::Eval, false);
    let feat = encoders::gps_feature(&mut ctx, &mut tape, batch.gps.as_ref().unwrap()).unwrap();
    let got = tape.value(feat).data().to_vec();

    // Hand recurrence from the same parameters.
    let g = |n: &str| model.param(n).unwrap();
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut h = vec![0.0f64; dh];
    for _ in 0..t_len {
        let mut z = vec![0.0; dh];
        let mut r = vec![0.0; dh];
        for j in 0..dh {
            let mut zj = g("gps.bz").data()[j];
            let mut rj = g("gps.br").data()[j];
            for (i, &xi) in step.iter().enumerate() {
                zj += xi * g("gps.wz").at2(i, j);
                rj += xi * g("gps.wr").at2(i, j);
            }
            for (i, &hi) in h.iter().enumerate() {
                zj += hi * g("gps.uz").at2(i, j);
                rj += hi * g("gps.ur").at2(i, j);
            }
            z[j] = sig(zj);
            r[j] = sig(rj);
        }
        let mut cand = vec![0.0; dh];
        for j in 0..dh {
            let mut cj = g("gps.bh").data()[j];
            for (i, &xi) in step.iter().enumerate() {
                cj += xi * g("gps.wh").at2(i, j);
            }
            for (i, &hi) in h.iter().enumerate() {
                cj += r[i] * hi * g("gps.uh").at2(i, j);
            }
            cand[j] = cj.tanh();
        }
        for j in 0..dh {
            h[j] = (1.0 - z[j]) * h[j] + z[j] * cand[j];
        }
    }
    for (a, b) in got.iter().zip(h.iter()) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn gps_window_of_one_is_supported() {
    let model = init_model(&tiny_config()).unwrap();
    let input = ModelInput {
        image_tensor: Tensor::zeros(vec![3, 32, 32]),
        point_tensor: Tensor::zeros(vec![8, 3]),
        gps_tensor: Tensor::new(vec![1, 3], vec![0.5, 0.5, 0.02]).unwrap(),
        mask: ModalityMask::new(false, false, true),
    };
    let (pl, trace) = model.predict_pl(&input).unwrap();
    assert!(pl.is_finite());
    assert_eq!(trace.attention_weights[2], 1.0);
}

#[test]
fn single_modality_takes_all_attention() {
    let model = init_model(&tiny_config()).unwrap();
    let input = random_input(11, 32, 32, 16, 4);
    for (i, mask) in [
        ModalityMask::new(true, false, false),
        ModalityMask::new(false, true, false),
        ModalityMask::new(false, false, true),
    ]
    .iter()
    .enumerate()
    {
        let masked = ModelInput {
            mask: *mask,
            ..input.clone()
        };
        let (_, trace) = model.predict_pl(&masked).unwrap();
        for j in 0..3 {
            if j == i {
                assert_eq!(trace.attention_weights[j], 1.0);
            } else {
                assert_eq!(trace.attention_weights[j], 0.0);
                assert!(trace.projected[j].is_empty());
            }
        }
    }
}

#[test]
fn symmetric_features_and_scorer_give_equal_thirds() {
    // Equal per-modality dims so identical features project identically.
    let cfg = ModelConfig {
        width_mult: 1.0,
        d_img: 8,
        d_pc: 8,
        d_gps: 8,
        d_fused: 6,
        pc_channels: [4, 6, 8],
        image_stage_channels: [2, 2, 2, 2],
        seed: 13,
        ..Default::default()
    };
    let mut model = init_model(&cfg).unwrap();
    let proj_w = model.param("fuse.proj_img.w").unwrap().clone();
    let proj_b = model.param("fuse.proj_img.b").unwrap().clone();
    model.set_param("fuse.proj_pc.w", proj_w.clone()).unwrap();
    model.set_param("fuse.proj_gps.w", proj_w).unwrap();
    model.set_param("fuse.proj_pc.b", proj_b.clone()).unwrap();
    model.set_param("fuse.proj_gps.b", proj_b).unwrap();
    // Identical scorer logits for all three slots: make the three output
    // columns of the scorer equal.
    let sw = model.param("fuse.score.w").unwrap().clone();
    let mut sw_data = sw.data().to_vec();
    for row in 0..3 * cfg.d_fused {
        let v = sw_data[row * 3];
        sw_data[row * 3 + 1] = v;
        sw_data[row * 3 + 2] = v;
    }
    model
        .set_param("fuse.score.w", Tensor::new(vec![3 * cfg.d_fused, 3], sw_data).unwrap())
        .unwrap();
    model
        .set_param("fuse.score.b", Tensor::new(vec![3], vec![0.1, 0.1, 0.1]).unwrap())
        .unwrap();

    let feat = Tensor::new(vec![8], vec![0.3, -0.1, 0.7, 0.2, 0.0, -0.5, 0.9, 0.4]).unwrap();
    let (fused, trace) = model
        .attention_fuse([Some(&feat), Some(&feat), Some(&feat)], ModalityMask::ALL)
        .unwrap();
    for w in trace.attention_weights {
        assert!((w - 1.0 / 3.0).abs() < 1e-12, "weight {w}");
    }
    // Fused equals the common projection (up to summation rounding).
    for (a, b) in fused.data().iter().zip(trace.projected[0].iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn random_fusion_matches_scalar_oracle() {
    let cfg = ModelConfig {
        width_mult: 0.125,
        seed: 21,
        ..Default::default()
    };
    let model = init_model(&cfg).unwrap();
    let dims = cfg.scaled();
    let mut rng = seeds::rng(33, stream::GRADCHECK, 503);
    let mut mk = |d: usize| {
        Tensor::new(
            vec![d],
            (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect::<Vec<_>>(),
        )
        .unwrap()
    };
    let f_img = mk(dims.d_img);
    let f_pc = mk(dims.d_pc);
    let f_gps = mk(dims.d_gps);
    let (fused, trace) = model
        .attention_fuse(
            [Some(&f_img), Some(&f_pc), Some(&f_gps)],
            ModalityMask::ALL,
        )
        .unwrap();

    // Scalar oracle: projections, logits, softmax, weighted sum.
    let project = |feat: &Tensor, w: &str, b: &str| -> Vec<f64> {
        let wt = model.param(w).unwrap();
        let bt = model.param(b).unwrap();
        let (din, dout) = (wt.shape()[0], wt.shape()[1]);
        let mut out = bt.data().to_vec();
        for o in 0..dout {
            for i in 0..din {
                out[o] += feat.data()[i] * wt.at2(i, o);
            }
        }
        out
    };
    let p_img = project(&f_img, "fuse.proj_img.w", "fuse.proj_img.b");
    let p_pc = project(&f_pc, "fuse.proj_pc.w", "fuse.proj_pc.b");
    let p_gps = project(&f_gps, "fuse.proj_gps.w", "fuse.proj_gps.b");
    let concat: Vec<f64> = p_img
        .iter()
        .chain(&p_pc)
        .chain(&p_gps)
        .copied()
        .collect();
    let sw = model.param("fuse.score.w").unwrap();
    let sb = model.param("fuse.score.b").unwrap();
    let mut logits = sb.data().to_vec();
    for k in 0..3 {
        for i in 0..concat.len() {
            logits[k] += concat[i] * sw.at2(i, k);
        }
    }
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let denom: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.iter().map(|e| e / denom).collect();
    for (a, b) in trace.attention_weights.iter().zip(weights.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
    let mut expect = vec![0.0; cfg.d_fused];
    for (k, p) in [&p_img, &p_pc, &p_gps].iter().enumerate() {
        for (e, v) in expect.iter_mut().zip(p.iter()) {
            *e += weights[k] * v;
        }
    }
    for (a, b) in fused.data().iter().zip(expect.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
    // Weights sum to one.
    let total: f64 = trace.attention_weights.iter().sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn predictions_are_bit_deterministic() {
    let model = init_model(&tiny_config()).unwrap();
    let input = random_input(17, 32, 32, 16, 4);
    let (a, _) = model.predict_pl(&input).unwrap();
    let (b, _) = model.predict_pl(&input).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn masked_modality_never_influences_the_output() {
    let model = init_model(&tiny_config()).unwrap();
    let input = random_input(19, 32, 32, 16, 4);
    let mask = ModalityMask::new(true, true, false);
    let masked = ModelInput {
        mask,
        ..input.clone()
    };
    let (a, trace) = model.predict_pl(&masked).unwrap();
    assert_eq!(trace.attention_weights[2], 0.0);
    // Perturb the masked tensor wildly.
    let mut perturbed = masked.clone();
    perturbed.gps_tensor = Tensor::full(vec![4, 3], 1e6);
    let (b, _) = model.predict_pl(&perturbed).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn mask_for_missing_encoder_is_rejected() {
    let cfg = ModelConfig {
        modalities: ModalityMask::new(true, false, true),
        ..tiny_config()
    };
    let model = init_model(&cfg).unwrap();
    let input = random_input(23, 32, 32, 16, 4);
    assert!(matches!(
        model.predict_pl(&input),
        Err(Error::Contract(_))
    ));
}

#[test]
fn checkpoint_round_trip_preserves_the_model() {
    let mut model = init_model(&tiny_config()).unwrap();
    model.label_mean = 88.25;
    model.label_std = 12.5;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    model.save(&path).unwrap();
    let back = Model::load(&path).unwrap();
    assert_eq!(model, back);
    // Identical predictions after the round trip.
    let input = random_input(29, 32, 32, 16, 4);
    assert_eq!(
        model.predict_pl(&input).unwrap().0.to_bits(),
        back.predict_pl(&input).unwrap().0.to_bits()
    );
}

#[test]
fn enabling_stn_changes_nothing_at_initialization() {
    // Zero-initialized transform output means the fresh encoders agree.
    let with = init_model(&tiny_config()).unwrap();
    let without = init_model(&ModelConfig {
        use_stn: false,
        ..tiny_config()
    })
    .unwrap();
    let input = random_input(31, 32, 32, 16, 4);
    let mask = ModalityMask::new(false, true, false);
    let masked = ModelInput {
        mask,
        ..input
    };
    let run = |model: &Model| -> Vec<f64> {
        let batch = BatchInput::stack(&[&masked], mask).unwrap();
        let mut tape = Tape::new();
        let mut ctx = encoders::ForwardCtx::new(model, &mut tape, Mode::Eval, false);
        let x = tape.constant(batch.points.clone().unwrap());
        let feat = encoders::point_feature(&mut ctx, &mut tape, x).unwrap();
        tape.value(feat).data().to_vec()
    };
    // The two models draw different parameters (different registration
    // order), so align the point-encoder weights first.
    let mut without = without;
    for name in [
        "pc.conv1.w",
        "pc.bn1.gamma",
        "pc.bn1.beta",
        "pc.conv2.w",
        "pc.bn2.gamma",
        "pc.bn2.beta",
        "pc.conv3.w",
        "pc.bn3.gamma",
        "pc.bn3.beta",
    ] {
        without
            .set_param(name, with.param(name).unwrap().clone())
            .unwrap();
    }
    let a = run(&with);
    let b = run(&without);
    for (x, y) in a.iter().zip(b.iter()) {
        assert!((x - y).abs() < 1e-12);
    }
}
