use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::backbone::count_params;
use crate::frontend::FrontendKind;
use crate::gradcheck::{check_gradients, GradCheckOptions};
use LayerKind::{Attention as A, Mamba as M};

fn tiny(variant: Variant, frontend: FrontendKind) -> ModelConfig {
    ModelConfig {
        n_layers: 4,
        d_model: 16,
        variant,
        frontend,
        n_classes: 3,
        d_state: 4,
        ..ModelConfig::default()
    }
}

fn reference_config(variant: Variant, frontend: FrontendKind) -> ModelConfig {
    ModelConfig {
        variant,
        frontend,
        ..ModelConfig::default()
    }
}

fn random_tokens(l: usize, d: usize, seed: u64) -> Tensor<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(vec![l, d], |_| r.random_range(-1.0..1.0))
}

fn tokens(t: Tensor<f64>) -> TokenSequence<f64> {
    TokenSequence {
        tokens: t,
        kind: FrontendKind::Raw,
    }
}

#[test]
fn layouts() {
    let kinds = |v, n| {
        let cfg = ModelConfig {
            n_layers: n,
            ..tiny(v, FrontendKind::Raw)
        };
        Model::<f32>::build(&cfg, 0).unwrap().layout()
    };
    assert_eq!(kinds(Variant::Hybrid, 6), [M, M, M, A, M, M]);
    assert_eq!(kinds(Variant::Hybrid, 4), [M, M, A, M]);
    assert_eq!(kinds(Variant::PureMamba, 6), [M; 6]);
    assert_eq!(kinds(Variant::PureAttention, 6), [A; 6]);
}

#[test]
fn invalid_configs() {
    let mut cfg = reference_config(Variant::Hybrid, FrontendKind::Raw);
    cfg.attention_index = Some(6);
    assert!(Model::<f32>::build(&cfg, 0).is_err());
    cfg.variant = Variant::PureMamba;
    cfg.attention_index = Some(2);
    assert!(Model::<f32>::build(&cfg, 0).is_err());
    assert!("bimamba".parse::<Variant>().is_err());
    assert_eq!("helix".parse::<Variant>().unwrap(), Variant::Hybrid);
    assert_eq!(
        "pure_attention".parse::<Variant>().unwrap(),
        Variant::PureAttention
    );
    assert_eq!("100".parse::<PoolK>().unwrap(), PoolK::FirstK(100));
    assert!("0".parse::<PoolK>().is_err());
}

#[test]
fn full_size_parameter_totals() {
    let mut totals = Vec::new();
    for frontend in FrontendKind::ALL {
        for variant in Variant::ALL {
            let m = Model::<f32>::build(&reference_config(variant, frontend), 1).unwrap();
            let p_mamba = bimamba_params(&m.cfg.ssm());
            for (layer, n) in m.layers.iter().zip(m.layer_params()) {
                assert_eq!(n, count_params(&m.store, layer));
                assert!((p_mamba as i64 - n as i64).abs() < 769);
            }
            if variant == Variant::PureMamba {
                assert!(6 * p_mamba < m.total_params());
            }
            totals.push((frontend, variant, m.total_params(), m.frontend_params()));
        }
    }
    // Golden values at d=256, N=6, 50 classes.
    let golden = [
        6_392_626, 6_392_377, 6_391_132, 6_417_202, 6_416_953, 6_415_708,
    ];
    let got: Vec<usize> = totals.iter().map(|t| t.2).collect();
    assert_eq!(got, golden);
    let (lo, hi) = (
        *got.iter().min().unwrap() as f64,
        *got.iter().max().unwrap() as f64,
    );
    assert!((hi - lo) / lo < 0.02);
    for v in 0..3 {
        let (raw, spec) = (&totals[v], &totals[v + 3]);
        assert_eq!(spec.2 - raw.2, spec.3 - raw.3);
        assert_eq!(spec.3 - raw.3, 16 * 16 * 256 - 160 * 256);
    }
}

#[test]
fn single_token_head_is_affine_in_the_normalized_token() {
    let m = Model::<f64>::build(&tiny(Variant::PureMamba, FrontendKind::Raw), 2).unwrap();
    let x = random_tokens(1, 16, 3);
    let mut tape = Tape::new();
    let bind = m.store.bind(&mut tape);
    let h = tape.constant(x.clone()).unwrap();
    let y = m.head(&mut tape, &bind, h).unwrap();
    let row = x.row(0);
    let mean = row.iter().sum::<f64>() / 16.0;
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
    let xn: Vec<f64> = row
        .iter()
        .map(|v| (v - mean) / (var + LN_EPS).sqrt())
        .collect();
    let w = m.store.get(m.w_cls);
    for c in 0..3 {
        let expect = m.store.get(m.b_cls).data()[c]
            + w.row(c).iter().zip(&xn).map(|(a, b)| a * b).sum::<f64>();
        assert!((tape.value(y).data()[c] - expect).abs() < 1e-12);
    }
}

#[test]
fn pooling_ignores_tokens_past_k() {
    let cfg = ModelConfig {
        pool: PoolK::FirstK(100),
        ..tiny(Variant::Hybrid, FrontendKind::Raw)
    };
    let m = Model::<f64>::build(&cfg, 4).unwrap();
    let run = |hidden: Tensor<f64>| {
        let mut tape = Tape::new();
        let bind = m.store.bind(&mut tape);
        let h = tape.constant(hidden).unwrap();
        let y = m.head(&mut tape, &bind, h).unwrap();
        tape.value(y).clone()
    };
    let hidden = random_tokens(1000, 16, 5);
    let base = run(hidden.clone());
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let mut perturbed = hidden.clone();
    for v in &mut perturbed.data_mut()[100 * 16..] {
        *v += r.random_range(-10.0..10.0);
    }
    assert_eq!(run(perturbed), base);
    let mut inside = hidden;
    inside.data_mut()[99 * 16] += 1.0;
    assert_ne!(run(inside), base);

    let short = m.logits(&tokens(random_tokens(50, 16, 7)));
    assert!(matches!(short, Err(Error::Pooling { k: 100, len: 50 })));
}

#[test]
fn permutation_behaviour() {
    let x = random_tokens(9, 16, 8);
    let perm = [3usize, 0, 8, 1, 5, 2, 7, 4, 6];
    let px = Tensor::from_fn(vec![9, 16], |i| x.at2(perm[i / 16], i % 16));

    let attn = Model::<f64>::build(&tiny(Variant::PureAttention, FrontendKind::Raw), 9).unwrap();
    let a = attn.logits(&tokens(x.clone())).unwrap();
    let b = attn.logits(&tokens(px.clone())).unwrap();
    for (u, v) in a.data().iter().zip(b.data()) {
        assert!((u - v).abs() < 1e-8);
    }

    let mut with_pe = attn.clone();
    with_pe.cfg.positional_encoding = true;
    let a = with_pe.logits(&tokens(x.clone())).unwrap();
    let b = with_pe.logits(&tokens(px.clone())).unwrap();
    assert!(a
        .data()
        .iter()
        .zip(b.data())
        .any(|(u, v)| (u - v).abs() > 1e-6));

    let mamba = Model::<f64>::build(&tiny(Variant::PureMamba, FrontendKind::Raw), 9).unwrap();
    let a = mamba.logits(&tokens(x)).unwrap();
    let b = mamba.logits(&tokens(px)).unwrap();
    assert!(a
        .data()
        .iter()
        .zip(b.data())
        .any(|(u, v)| (u - v).abs() > 1e-6));
}

#[test]
fn gradient_reaches_every_parameter() {
    for variant in Variant::ALL {
        for frontend in FrontendKind::ALL {
            for seed in 0..3 {
                let m = Model::<f64>::build(&tiny(variant, frontend), seed).unwrap();
                let mut r = ChaCha8Rng::seed_from_u64(seed + 100);
                let w = crate::frontend::Waveform::new(
                    (0..16_000).map(|_| r.random_range(-0.5..0.5)).collect(),
                    16_000,
                )
                .unwrap();
                let input = m.prepare(&w).unwrap();
                let mut tape = Tape::new();
                let bind = m.store.bind(&mut tape);
                let y = m.forward(&mut tape, &bind, &input).unwrap();
                let loss = tape.soft_cross_entropy(y, &[0.0, 1.0, 0.0]).unwrap();
                let grads = bind.collect(&m.store, tape.backward(loss).unwrap());
                for (id, name, _) in m.store.iter() {
                    assert!(
                        grads[id.index()].data().iter().any(|g| g.abs() > 0.0),
                        "{variant} {frontend} seed {seed}: {name} has zero gradient"
                    );
                }
            }
        }
    }
}

#[test]
fn hybrid_model_gradients_sampled() {
    let mut m = Model::<f64>::build(&tiny(Variant::Hybrid, FrontendKind::Raw), 10).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let input = FrontendInput::Raw((0..8 * 160).map(|_| r.random_range(-0.5f32..0.5)).collect());
    let arch = m.clone();
    let report = check_gradients(
        &mut m.store,
        |tape, bind| {
            let y = arch.forward(tape, bind, &input)?;
            tape.soft_cross_entropy(y, &[0.0, 0.0, 1.0])
        },
        &GradCheckOptions {
            max_per_tensor: Some(8),
            ..Default::default()
        },
    )
    .unwrap();
    assert!(report.max_rel_error() < 1e-4, "{:?}", report.worst());
}

#[test]
fn forward_is_deterministic() {
    let cfg = tiny(Variant::Hybrid, FrontendKind::Spectrogram);
    let a = Model::<f32>::build(&cfg, 12).unwrap();
    let b = Model::<f32>::build(&cfg, 12).unwrap();
    let input = FrontendInput::Mel(crate::frontend::MelSpectrogram {
        n_mels: 128,
        frames: 40,
        data: (0..128 * 40)
            .map(|i| ((i * 7919) % 97) as f64 / 10.0 - 5.0)
            .collect(),
    });
    assert_eq!(a.predict(&input).unwrap(), b.predict(&input).unwrap());
    assert_eq!(a.predict(&input).unwrap().shape(), [1, 3]);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig {
        pool: PoolK::FirstK(5),
        positional_encoding: true,
        ..tiny(Variant::Hybrid, FrontendKind::Spectrogram)
    };
    let m = Model::<f32>::build(&cfg, 13).unwrap();
    save_checkpoint(&m, dir.path()).unwrap();
    let back = load_checkpoint::<f32>(dir.path()).unwrap();
    assert_eq!(back.cfg, m.cfg);
    for ((_, n1, t1), (_, n2, t2)) in m.store.iter().zip(back.store.iter()) {
        assert_eq!(n1, n2);
        assert_eq!(t1.shape(), t2.shape());
        assert!(t1
            .data()
            .iter()
            .zip(t2.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
    let m64 = Model::<f64>::build(&tiny(Variant::PureMamba, FrontendKind::Raw), 14).unwrap();
    let dir64 = tempfile::tempdir().unwrap();
    save_checkpoint(&m64, dir64.path()).unwrap();
    let back64 = load_checkpoint::<f64>(dir64.path()).unwrap();
    assert!(m64.store.iter().zip(back64.store.iter()).all(|(a, b)| a
        .2
        .data()
        .iter()
        .zip(b.2.data())
        .all(|(x, y)| x.to_bits() == y.to_bits())));
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = Model::<f32>::build(&tiny(Variant::PureMamba, FrontendKind::Raw), 15).unwrap();
    save_checkpoint(&m, dir.path()).unwrap();
    let bin = dir.path().join("params.bin");
    let bytes = std::fs::read(&bin).unwrap();
    std::fs::write(&bin, &bytes[..bytes.len() - 4]).unwrap();
    let err = load_checkpoint::<f32>(dir.path()).unwrap_err();
    assert!(err.to_string().contains("past the end"), "{err}");

    let cfg_path = dir.path().join("config.txt");
    let text = std::fs::read_to_string(&cfg_path)
        .unwrap()
        .replace("d_model = 16", "d_model = 32");
    std::fs::write(&cfg_path, text).unwrap();
    std::fs::write(&bin, &bytes).unwrap();
    assert!(matches!(
        load_checkpoint::<f32>(dir.path()),
        Err(Error::Checkpoint(_))
    ));
    assert!(matches!(
        load_checkpoint::<f32>(&dir.path().join("missing")),
        Err(Error::Io { .. })
    ));
}
