//! Forward-pass contracts: shapes across every task/core/variant, frozen
//! hand values, stage identities and a sampled whole-model gradient check
//! against finite differences.

use mstn_core::model::{
    param_count, AblationVariant, CoreKind, Mstn, MstnConfig, Output, TaskKind,
};
use mstn_core::tensor::{fd, Rng, Tape, Tensor};

fn small_cfg(core: CoreKind, task: TaskKind) -> MstnConfig {
    let mut cfg = MstnConfig::new(2, 6, task);
    cfg.core = core;
    cfg.conv_channels = (5, 4);
    cfg.conv_kernels = (3, 3);
    cfg.transformer.layers = 1;
    cfg.transformer.heads = 2;
    cfg.transformer.model_dim = 4;
    cfg.transformer.ffn_dim = 6;
    cfg.bilstm.layers = 2;
    cfg.bilstm.hidden_per_dir = 3;
    cfg.se_reduction = 2;
    cfg.mhta_heads = 2;
    cfg.validate().unwrap();
    cfg
}

fn random_input(cfg: &MstnConfig, batch: usize, seed: u64) -> Tensor<f64> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut x = Tensor::zeros(vec![batch, cfg.seq_len, cfg.input_dim]);
    for v in x.data_mut() {
        *v = rng.uniform(-1.0, 1.0);
    }
    x
}

/// Every fourth cell masked, deterministic.
fn stripe_mask(shape: &[usize]) -> Tensor<f64> {
    let mut m = Tensor::zeros(shape.to_vec());
    for (i, v) in m.data_mut().iter_mut().enumerate() {
        if i % 4 == 0 {
            *v = 1.0;
        }
    }
    m
}

#[test]
fn shape_grid_covers_cores_tasks_variants() {
    let b = 3;
    for core in [CoreKind::Transformer, CoreKind::Bilstm] {
        for task in [TaskKind::Classify(3), TaskKind::Forecast(5), TaskKind::Impute] {
            for variant in AblationVariant::ALL {
                let cfg = small_cfg(core, task).make_ablated(variant).unwrap();
                let d = cfg.fused_width();
                let t = cfg.seq_len;
                let model = Mstn::<f64>::new(cfg.clone()).unwrap();
                let x = random_input(&cfg, b, 7);
                let mask = stripe_mask(x.shape());
                let mask_arg = matches!(task, TaskKind::Impute).then_some(&mask);

                let mut tape = Tape::new();
                let (out, trace) = model.forward_eval(&mut tape, &x, mask_arg).unwrap();
                let label = format!("{core:?}/{task:?}/{variant:?}");

                assert_eq!(trace.get("z_cnn").is_some(), cfg.has_cnn(), "{label}");
                assert_eq!(trace.get("z_core").is_some(), cfg.has_core(), "{label}");
                if let Some(z) = trace.get("z_cnn") {
                    assert_eq!(tape.shape(z), [b, cfg.conv_channels.1], "{label}");
                }
                if let Some(z) = trace.get("z_core") {
                    assert_eq!(tape.shape(z), [b, cfg.core_width()], "{label}");
                }
                for name in ["z_concat", "z_fused", "z_final"] {
                    let v = trace.get(name).unwrap();
                    assert_eq!(tape.shape(v), [b, d], "{label} {name}");
                }
                for name in ["z_seq", "z_se"] {
                    let v = trace.get(name).unwrap();
                    assert_eq!(tape.shape(v), [b, t, d], "{label} {name}");
                }
                // removed stages collapse to the identity on the same node
                if !cfg.has_gate() {
                    assert_eq!(trace.get("z_fused"), trace.get("z_concat"), "{label}");
                }
                if !cfg.has_se() {
                    assert_eq!(trace.get("z_se"), trace.get("z_seq"), "{label}");
                }

                match (task, out) {
                    (TaskKind::Classify(c), Output::Classify(v)) => {
                        assert_eq!(tape.shape(v), [b, c], "{label}")
                    }
                    (TaskKind::Forecast(h), Output::Forecast(v)) => {
                        assert_eq!(tape.shape(v), [b, h, cfg.input_dim], "{label}")
                    }
                    (TaskKind::Impute, Output::Impute(v)) => {
                        assert_eq!(tape.shape(v), [b, t, cfg.input_dim], "{label}")
                    }
                    _ => panic!("{label}: output kind does not match task"),
                }
                assert!(tape.value(out.var()).all_finite(), "{label}");
                assert_eq!(param_count(&cfg), model.params.scalar_count(), "{label}");
            }
        }
    }
}

#[test]
fn lstm_cell_matches_hand_value() {
    // One unit, one step, scalar input 1, all weights 1, zero bias:
    //   c = sigmoid(1)*tanh(1), h = sigmoid(1)*tanh(c) = 0.36960635293570576
    let mut cfg = small_cfg(CoreKind::Bilstm, TaskKind::Impute);
    cfg.input_dim = 1;
    cfg.seq_len = 1;
    cfg.bilstm.layers = 1;
    cfg.bilstm.hidden_per_dir = 1;
    cfg.variant = AblationVariant::NoCnn; // d = 2, keeps divisibility
    cfg.validate().unwrap();

    let mut model = Mstn::<f64>::new(cfg).unwrap();
    for dir in ["fwd", "bwd"] {
        for name in ["w_ih", "w_hh"] {
            model.params.tensor_mut(&format!("core.lstm.l0.{dir}.{name}")).data_mut().fill(1.0);
        }
        model.params.tensor_mut(&format!("core.lstm.l0.{dir}.bias")).data_mut().fill(0.0);
    }

    let x = Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
    let mut tape = Tape::new();
    let (_, trace) = model.forward_eval(&mut tape, &x, Some(&stripe_mask(&[1, 1, 1]))).unwrap();
    let z_core = trace.get("z_core").unwrap();
    let got = tape.value(z_core).data().to_vec();
    assert_eq!(got.len(), 2);
    for h in got {
        assert!((h - 0.36960635293570576).abs() < 1e-12, "h = {h}");
    }
}

#[test]
fn zeroed_transformer_core_outputs_zero() {
    let cfg = small_cfg(CoreKind::Transformer, TaskKind::Classify(3));
    let mut model = Mstn::<f64>::new(cfg.clone()).unwrap();
    let zero_paths: Vec<String> = model
        .params
        .iter()
        .map(|(p, _)| p.to_string())
        .filter(|p| {
            p.starts_with("core.")
                && (p.ends_with(".weight") || p.ends_with(".bias") || p == "core.pos_encoding")
        })
        .collect();
    for p in zero_paths {
        model.params.tensor_mut(&p).data_mut().fill(0.0);
    }

    let x = random_input(&cfg, 2, 11);
    let mut tape = Tape::new();
    let (_, trace) = model.forward_eval(&mut tape, &x, None).unwrap();
    let z_core = tape.value(trace.get("z_core").unwrap());
    assert!(z_core.data().iter().all(|&v| v == 0.0), "{:?}", z_core.data());
}

#[test]
fn no_se_variant_equals_unit_gate() {
    // Saturating the SE gate to exactly 1.0 must reproduce the no_se
    // variant bit for bit (shared parameters are already identical by
    // construction of the per-path init streams).
    let cfg = small_cfg(CoreKind::Transformer, TaskKind::Classify(3));
    let mut full = Mstn::<f32>::new(cfg.clone()).unwrap();
    full.params.tensor_mut("se.w1.weight").data_mut().fill(0.0);
    full.params.tensor_mut("se.w1.bias").data_mut().fill(0.0);
    full.params.tensor_mut("se.w2.weight").data_mut().fill(0.0);
    full.params.tensor_mut("se.w2.bias").data_mut().fill(100.0); // sigmoid(100) == 1.0 exactly

    let ablated = Mstn::<f32>::new(cfg.make_ablated(AblationVariant::NoSe).unwrap()).unwrap();

    let x = random_input(&cfg, 3, 5).cast::<f32>();
    let mut tape_a = Tape::new();
    let (out_a, _) = full.forward_eval(&mut tape_a, &x, None).unwrap();
    let mut tape_b = Tape::new();
    let (out_b, _) = ablated.forward_eval(&mut tape_b, &x, None).unwrap();

    assert_eq!(
        tape_a.value(out_a.var()).data(),
        tape_b.value(out_b.var()).data(),
        "unit-gate full model must equal no_se bitwise"
    );
}

#[test]
fn fused_features_are_constant_over_time() {
    // z_seq repeats the fused vector and the SE gate scales whole channels,
    // so both stay time-constant by construction.
    let cfg = small_cfg(CoreKind::Transformer, TaskKind::Impute);
    let model = Mstn::<f64>::new(cfg.clone()).unwrap();
    let x = random_input(&cfg, 2, 3);
    let mut tape = Tape::new();
    let (_, trace) = model.forward_eval(&mut tape, &x, Some(&stripe_mask(x.shape()))).unwrap();
    let z_se = tape.value(trace.get("z_se").unwrap());
    let (b, t, d) = (z_se.shape()[0], z_se.shape()[1], z_se.shape()[2]);
    for bi in 0..b {
        for ti in 1..t {
            for di in 0..d {
                assert_eq!(z_se.at(&[bi, ti, di]), z_se.at(&[bi, 0, di]));
            }
        }
    }
}

#[test]
fn batch_norm_running_stats_follow_momentum() {
    let cfg = small_cfg(CoreKind::Transformer, TaskKind::Classify(3));
    let mut model = Mstn::<f64>::new(cfg.clone()).unwrap();
    let x = random_input(&cfg, 4, 17);
    let (b, t) = (4usize, cfg.seq_len);

    // conv1 pre-norm activations, computed independently of forward_train
    let probe = Mstn::<f64>::new(cfg.clone()).unwrap();
    let mut tape = Tape::new();
    let bound = mstn_core::model::bind_params(&mut tape, &probe.params, false);
    let xv = tape.constant(x.clone());
    let xt = tape.swap12(xv).unwrap();
    let pre = tape.conv1d(xt, bound.var("conv1.weight"), bound.var("conv1.bias")).unwrap();
    let pre = tape.value(pre);
    let c1 = cfg.conv_channels.0;
    let n = b * t;
    let mut mean = vec![0.0f64; c1];
    let mut var = vec![0.0f64; c1];
    for c in 0..c1 {
        for bi in 0..b {
            for ti in 0..t {
                mean[c] += pre.at(&[bi, c, ti]);
            }
        }
        mean[c] /= n as f64;
        for bi in 0..b {
            for ti in 0..t {
                let d = pre.at(&[bi, c, ti]) - mean[c];
                var[c] += d * d;
            }
        }
        var[c] /= n as f64; // biased, as used for normalization
    }

    let mut rng = Rng::seed_from_u64(1);
    let mut tape = Tape::new();
    model.forward_train(&mut tape, &x, None, &mut rng).unwrap();

    let rm = model.params.tensor("conv1.bn.running_mean");
    let rv = model.params.tensor("conv1.bn.running_var");
    let unbias = n as f64 / (n as f64 - 1.0);
    for c in 0..c1 {
        let want_mean = 0.9 * 0.0 + 0.1 * mean[c];
        let want_var = 0.9 * 1.0 + 0.1 * var[c] * unbias;
        assert!((rm.data()[c] - want_mean).abs() < 1e-12, "mean[{c}]");
        assert!((rv.data()[c] - want_var).abs() < 1e-12, "var[{c}]");
    }

    // second pass over the same batch folds the same statistics again
    let mut tape = Tape::new();
    model.forward_train(&mut tape, &x, None, &mut rng).unwrap();
    let rm2 = model.params.tensor("conv1.bn.running_mean");
    for (c, (&got, &m)) in rm2.data().iter().zip(mean.iter()).enumerate() {
        let want = 0.9 * (0.1 * m) + 0.1 * m;
        assert!((got - want).abs() < 1e-12, "second update mean[{c}]");
    }
}

#[test]
fn save_load_round_trip_preserves_forward_bitwise() {
    let cfg = small_cfg(CoreKind::Bilstm, TaskKind::Forecast(5));
    let model = Mstn::<f32>::new(cfg.clone()).unwrap();
    let mut buf = Vec::new();
    model.save(&mut buf).unwrap();
    let loaded = Mstn::<f32>::load(cfg.clone(), &mut buf.as_slice()).unwrap();

    let x = random_input(&cfg, 2, 23).cast::<f32>();
    let mut tape_a = Tape::new();
    let (a, _) = model.forward_eval(&mut tape_a, &x, None).unwrap();
    let mut tape_b = Tape::new();
    let (b, _) = loaded.forward_eval(&mut tape_b, &x, None).unwrap();
    assert_eq!(tape_a.value(a.var()).data(), tape_b.value(b.var()).data());
}

#[test]
fn impute_passes_observed_cells_through() {
    let cfg = small_cfg(CoreKind::Transformer, TaskKind::Impute);
    let model = Mstn::<f64>::new(cfg.clone()).unwrap();
    let x = random_input(&cfg, 2, 29);
    let mask = stripe_mask(x.shape());
    let mut tape = Tape::new();
    let (out, _) = model.forward_eval(&mut tape, &x, Some(&mask)).unwrap();
    let y = tape.value(out.var());
    let mut masked_diff = 0usize;
    for i in 0..x.len() {
        if mask.data()[i] == 0.0 {
            assert_eq!(y.data()[i], x.data()[i], "observed cell {i} must pass through");
        } else if y.data()[i] != x.data()[i] {
            masked_diff += 1;
        }
    }
    assert!(masked_diff > 0, "reconstruction should differ from the truth somewhere");
}

#[test]
fn forecast_temporal_map_has_documented_orientation() {
    let cfg = small_cfg(CoreKind::Transformer, TaskKind::Forecast(4));
    let mut model = Mstn::<f64>::new(cfg.clone()).unwrap();
    let d_in = cfg.input_dim;
    let t = cfg.seq_len;
    model.params.tensor_mut("head.step.weight").data_mut().fill(0.0);
    for (i, v) in model.params.tensor_mut("head.step.bias").data_mut().iter_mut().enumerate() {
        *v = (i + 1) as f64; // per-feature constant steps
    }
    // temporal weight [T,H]: only horizon 0 listens, to every time step
    {
        let w = model.params.tensor_mut("head.temporal.weight");
        w.data_mut().fill(0.0);
        for ti in 0..t {
            w.set(&[ti, 0], 1.0);
        }
    }
    model.params.tensor_mut("head.temporal.bias").data_mut().fill(0.0);

    let x = random_input(&cfg, 2, 31);
    let mut tape = Tape::new();
    let (out, _) = model.forward_eval(&mut tape, &x, None).unwrap();
    let y = tape.value(out.var());
    assert_eq!(y.shape(), &[2, 4, d_in]);
    for b in 0..2 {
        for h in 0..4 {
            for f in 0..d_in {
                let want = if h == 0 { t as f64 * (f + 1) as f64 } else { 0.0 };
                assert_eq!(y.at(&[b, h, f]), want, "b={b} h={h} f={f}");
            }
        }
    }
}

/// Sampled whole-model gradient check: analytic gradients from one backward
/// pass against central differences on the loss, a few coordinates per
/// parameter tensor. Eval-mode graph so the loss is deterministic.
fn check_model_grads(core: CoreKind, task: TaskKind) {
    let mut cfg = small_cfg(core, task);
    cfg.transformer.layers = 1;
    cfg.bilstm.layers = 1;
    cfg.seed = 9;
    let model = Mstn::<f64>::new(cfg.clone()).unwrap();
    let x = random_input(&cfg, 2, 41);
    let mask = stripe_mask(x.shape());
    let targets = [0usize, 2];

    let loss_of = |m: &Mstn<f64>| -> f64 {
        let mut tape = Tape::new();
        let (out, _, _) = m
            .forward_diff(&mut tape, &x, matches!(task, TaskKind::Impute).then_some(&mask))
            .unwrap();
        let loss = match task {
            TaskKind::Classify(_) => tape.focal_loss(out.var(), &targets, 2.0, 0.25).unwrap(),
            TaskKind::Forecast(_) => {
                let target = Tensor::full(tape.shape(out.var()).to_vec(), 0.25);
                tape.mse_loss(out.var(), &target).unwrap()
            }
            TaskKind::Impute => tape.masked_mse_loss(out.var(), &x, &mask).unwrap(),
        };
        tape.value(loss).item()
    };

    // analytic pass
    let mut tape = Tape::new();
    let (out, bound, _) = model
        .forward_diff(&mut tape, &x, matches!(task, TaskKind::Impute).then_some(&mask))
        .unwrap();
    let loss = match task {
        TaskKind::Classify(_) => tape.focal_loss(out.var(), &targets, 2.0, 0.25).unwrap(),
        TaskKind::Forecast(_) => {
            let target = Tensor::full(tape.shape(out.var()).to_vec(), 0.25);
            tape.mse_loss(out.var(), &target).unwrap()
        }
        TaskKind::Impute => tape.masked_mse_loss(out.var(), &x, &mask).unwrap(),
    };
    tape.backward(loss).unwrap();

    let mut rng = Rng::seed_from_u64(4242);
    let mut checked = 0usize;
    for (path, p) in model.params.iter() {
        if !p.trainable {
            continue;
        }
        let len = p.tensor.len();
        let mut coords = vec![0usize, len - 1];
        while coords.len() < 4.min(len) {
            coords.push(rng.below(len));
        }
        coords.sort_unstable();
        coords.dedup();

        // Forecast and impute heads read z_se, so the final attention block
        // sits off the loss path: its gradient is legitimately absent and the
        // finite-difference oracle must agree it is zero.
        let analytic: Vec<f64> =
            tape.grad(bound.var(path)).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; len]);
        let f = |cand: &Tensor<f64>| {
            let mut m = Mstn { cfg: cfg.clone(), params: model.params.clone() };
            *m.params.tensor_mut(path) = cand.clone();
            loss_of(&m)
        };
        let numeric = fd::finite_diff_at(f, &p.tensor, &coords, 1e-5);
        for &i in &coords {
            let (a, n) = (analytic[i], numeric.data()[i]);
            let scale = 1.0f64.max(a.abs()).max(n.abs());
            assert!((a - n).abs() <= 1e-5 * scale, "{path}[{i}]: analytic {a} vs numeric {n}");
            checked += 1;
        }
    }
    assert!(checked > 50, "only {checked} coordinates checked");
}

#[test]
fn whole_model_grads_classify_transformer() {
    check_model_grads(CoreKind::Transformer, TaskKind::Classify(3));
}

#[test]
fn whole_model_grads_impute_bilstm() {
    check_model_grads(CoreKind::Bilstm, TaskKind::Impute);
}

#[test]
fn whole_model_grads_forecast_transformer() {
    check_model_grads(CoreKind::Transformer, TaskKind::Forecast(3));
}
