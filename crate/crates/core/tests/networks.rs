use chipheat::nn::{
    chebyshev_t, chebyshev_u, read_blobs, write_blobs, Activation, AdamConfig, AdamState,
    ChebKanLayer, FourierSpec, Jets, KanNet, KanSpec, LinearLayer, Mlp, MlpSpec,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn layer_1x1(a: [f64; 4]) -> ChebKanLayer {
    ChebKanLayer::new(1, 1, 3, a.to_vec()).unwrap()
}

#[test]
fn identity_and_second_polynomial() {
    let id = layer_1x1([0.0, 1.0, 0.0, 0.0]);
    for y in [-0.9, -0.2, 0.0, 0.6] {
        assert!((id.forward(&[y]).unwrap()[0] - y).abs() < 1e-15);
    }
    let c2 = layer_1x1([0.0, 0.0, 1.0, 0.0]);
    assert!((c2.forward(&[0.5]).unwrap()[0] + 0.5).abs() < 1e-15);
}

#[test]
fn out_of_domain_inputs_rejected() {
    let l = layer_1x1([0.0, 1.0, 0.0, 0.0]);
    assert!(matches!(l.forward(&[1.0]), Err(chipheat::Error::Domain(_))));
    assert!(l.forward(&[-1.2]).is_err());
    assert!(l.input_jacobian(&[1.0]).is_err());
}

#[test]
fn random_layer_matches_trigonometric_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let layer = ChebKanLayer::init(4, 3, 5, &mut rng);
    for _ in 0..50 {
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-0.999..0.999)).collect();
        let y = layer.forward(&x).unwrap();
        for (j, yj) in y.iter().enumerate() {
            let mut direct = 0.0;
            for (i, xi) in x.iter().enumerate() {
                for k in 0..=5 {
                    direct += layer.coeff(i, j, k) * (k as f64 * xi.acos()).cos();
                }
            }
            assert!((yj - direct).abs() < 1e-12);
        }
    }
}

#[test]
fn input_derivatives_of_low_orders() {
    let c1 = layer_1x1([0.0, 1.0, 0.0, 0.0]);
    for y in [-0.7, 0.0, 0.3] {
        assert!((c1.input_jacobian(&[y]).unwrap()[0] - 1.0).abs() < 1e-15);
    }
    let c2 = layer_1x1([0.0, 0.0, 1.0, 0.0]);
    assert!((c2.input_jacobian(&[0.25]).unwrap()[0] - 1.0).abs() < 1e-15);
}

#[test]
fn layer_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let layer = ChebKanLayer::init(3, 2, 4, &mut rng);
    let x = vec![0.2, -0.5, 0.7];
    let jac = layer.input_jacobian(&x).unwrap();
    let h = 1e-6;
    for i in 0..3 {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let (yp, ym) = (layer.forward(&xp).unwrap(), layer.forward(&xm).unwrap());
        for j in 0..2 {
            let fd = (yp[j] - ym[j]) / (2.0 * h);
            assert!((fd - jac[j * 3 + i]).abs() < 1e-8 * jac[j * 3 + i].abs().max(1.0));
        }
    }
}

#[test]
fn chebyshev_orthogonality_under_gauss_chebyshev_quadrature() {
    let n = 64;
    let nodes: Vec<f64> = (0..n)
        .map(|m| ((2 * m + 1) as f64 * std::f64::consts::PI / (2 * n) as f64).cos())
        .collect();
    let w = std::f64::consts::PI / n as f64;
    for i in 0..10 {
        for j in 0..10 {
            let integral: f64 = nodes
                .iter()
                .map(|&y| w * chebyshev_t(y, i)[i] * chebyshev_t(y, j)[j])
                .sum();
            let expect = match (i, j) {
                (0, 0) => std::f64::consts::PI,
                _ if i == j => std::f64::consts::FRAC_PI_2,
                _ => 0.0,
            };
            assert!((integral - expect).abs() < 1e-10, "({i},{j}) {integral}");
        }
    }
}

fn trunk(seed: u64) -> KanNet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    KanNet::init(
        &KanSpec {
            widths: vec![1, 12, 12, 5],
            order: 3,
        },
        &mut rng,
    )
    .unwrap()
}

/// Makes a randomly initialised network less degenerate so derivatives are O(1).
fn scale_params(net: &mut KanNet, factor: f64) {
    for p in net.param_slices_mut() {
        p.iter_mut().for_each(|v| *v *= factor);
    }
}

/// Five-point central differences of value and first-derivative blocks.
fn stencil(eval: impl Fn(f64) -> Jets, h: f64, dir: usize) -> (Vec<f64>, Vec<f64>) {
    let j: Vec<Jets> = [2.0, 1.0, -1.0, -2.0].iter().map(|k| eval(k * h)).collect();
    let d = |f: &dyn Fn(&Jets) -> &[f64]| -> Vec<f64> {
        (0..f(&j[0]).len())
            .map(|e| {
                (-f(&j[0])[e] + 8.0 * f(&j[1])[e] - 8.0 * f(&j[2])[e] + f(&j[3])[e]) / (12.0 * h)
            })
            .collect()
    };
    (d(&|x: &Jets| x.value()), d(&|x: &Jets| x.first(dir)))
}

fn close(fd: f64, exact: f64) -> bool {
    (fd - exact).abs() <= 1e-6 * exact.abs().max(1.0)
}

#[test]
fn trunk_tangents_match_finite_differences() {
    let mut net = trunk(5);
    scale_params(&mut net, 5.0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let s: Vec<f64> = (0..40).map(|_| rng.random_range(-0.9..0.9)).collect();
    let out = net.forward(&Jets::seed_scalar(&s));
    let (fd1, fd2) = stencil(
        |dh| {
            net.forward(&Jets::seed_scalar(
                &s.iter().map(|v| v + dh).collect::<Vec<_>>(),
            ))
        },
        1e-4,
        0,
    );
    for e in 0..s.len() * 5 {
        assert!(
            close(fd1[e], out.first(0)[e]),
            "{} {}",
            fd1[e],
            out.first(0)[e]
        );
        assert!(
            close(fd2[e], out.second(0)[e]),
            "{} {}",
            fd2[e],
            out.second(0)[e]
        );
    }
}

#[test]
fn multi_direction_tangents_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut net = KanNet::init(
        &KanSpec {
            widths: vec![3, 8, 4],
            order: 4,
        },
        &mut rng,
    )
    .unwrap();
    scale_params(&mut net, 5.0);
    let pts: Vec<f64> = (0..30).map(|_| rng.random_range(-0.9..0.9)).collect();
    let out = net.forward(&Jets::seed_coordinates(&pts, 3));
    for d in 0..3 {
        let shifted = |dh: f64| {
            let mut p = pts.clone();
            for q in 0..10 {
                p[q * 3 + d] += dh;
            }
            net.forward(&Jets::seed_coordinates(&p, 3))
        };
        let (fd1, fd2) = stencil(shifted, 1e-4, d);
        for e in 0..40 {
            assert!(close(fd1[e], out.first(d)[e]));
            assert!(close(fd2[e], out.second(d)[e]));
        }
    }
}

fn weighted_sum(j: &Jets, w: &[f64]) -> f64 {
    j.data.iter().zip(w).map(|(a, b)| a * b).sum()
}

fn nudge(slices: Vec<&mut [f64]>, mut flat: usize, delta: f64) {
    for s in slices {
        if flat < s.len() {
            s[flat] += delta;
            return;
        }
        flat -= s.len();
    }
    panic!("parameter index out of range");
}

#[test]
fn kan_parameter_gradient_matches_finite_differences() {
    let mut net = trunk(11);
    scale_params(&mut net, 10.0);
    let x = Jets::seed_scalar(&[-0.8, -0.1, 0.35, 0.7]);
    let (out, cache) = net.forward_cached(&x);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w: Vec<f64> = (0..out.data.len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let grad = net.backward(
        &cache,
        &Jets {
            data: w.clone(),
            ..out.clone()
        },
    );
    assert_eq!(grad.len(), net.param_count());
    let h = 1e-6;
    for _ in 0..40 {
        let p = rng.random_range(0..net.param_count());
        nudge(net.param_slices_mut(), p, h);
        let fp = weighted_sum(&net.forward(&x), &w);
        nudge(net.param_slices_mut(), p, -2.0 * h);
        let fm = weighted_sum(&net.forward(&x), &w);
        nudge(net.param_slices_mut(), p, h);
        let fd = (fp - fm) / (2.0 * h);
        assert!(
            (fd - grad[p]).abs() <= 1e-6 * grad[p].abs().max(1.0),
            "param {p}: {fd} vs {}",
            grad[p]
        );
    }
}

#[test]
fn mlp_parameter_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = MlpSpec {
        widths: vec![1, 10, 10, 3],
        fourier: Some(FourierSpec {
            n_freq: 4,
            mean: 0.0,
            std: 3.0,
        }),
    };
    let mut net = Mlp::init(&spec, &mut rng).unwrap();
    for l in &mut net.layers {
        l.bias
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-0.5..0.5));
    }
    let x = Jets::seed_scalar(&[-0.6, 0.1, 0.8]);
    let (out, cache) = net.forward_cached(&x);
    let w: Vec<f64> = (0..out.data.len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let grad = net.backward(
        &cache,
        &Jets {
            data: w.clone(),
            ..out.clone()
        },
    );
    assert_eq!(grad.len(), net.param_count());
    let h = 1e-6;
    for p in (0..net.param_count()).step_by(3) {
        nudge(net.param_slices_mut(), p, h);
        let fp = weighted_sum(&net.forward(&x), &w);
        nudge(net.param_slices_mut(), p, -2.0 * h);
        let fm = weighted_sum(&net.forward(&x), &w);
        nudge(net.param_slices_mut(), p, h);
        let fd = (fp - fm) / (2.0 * h);
        assert!(
            (fd - grad[p]).abs() <= 1e-6 * grad[p].abs().max(1.0),
            "param {p}: {fd} vs {}",
            grad[p]
        );
    }
}

#[test]
fn mlp_trivial_cases() {
    let zero = Mlp::from_layers(
        vec![LinearLayer {
            n_in: 3,
            n_out: 2,
            weights: vec![0.0; 6],
            bias: vec![0.0; 2],
        }],
        None,
    )
    .unwrap();
    assert_eq!(zero.forward_vec(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    let mut eye = vec![0.0; 9];
    for i in 0..3 {
        eye[i * 3 + i] = 1.0;
    }
    let id = Mlp::from_layers(
        vec![LinearLayer {
            n_in: 3,
            n_out: 3,
            weights: eye,
            bias: vec![0.0; 3],
        }],
        None,
    )
    .unwrap();
    assert_eq!(
        id.forward_vec(&[1.5, -2.0, 0.25]).unwrap(),
        vec![1.5, -2.0, 0.25]
    );
    assert!(id.forward_vec(&[1.0]).is_err());
}

#[test]
fn wide_branch_produces_rank_vector() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut widths = vec![441];
    widths.extend([256; 9]);
    widths.push(64);
    let net = Mlp::init(
        &MlpSpec {
            widths,
            fourier: None,
        },
        &mut rng,
    )
    .unwrap();
    let input: Vec<f64> = (0..441).map(|i| (i as f64 * 0.01).sin()).collect();
    let beta = net.forward_vec(&input).unwrap();
    assert_eq!(beta.len(), 64);
    assert!(beta.iter().all(|b| b.is_finite()));
}

#[test]
fn init_is_deterministic_per_seed() {
    let spec = KanSpec {
        widths: vec![1, 16, 4],
        order: 3,
    };
    let a = KanNet::init(&spec, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
    let b = KanNet::init(&spec, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
    let c = KanNet::init(&spec, &mut ChaCha8Rng::seed_from_u64(43)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let mspec = MlpSpec {
        widths: vec![5, 7, 2],
        fourier: None,
    };
    let m1 = Mlp::init(&mspec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let m2 = Mlp::init(&mspec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(m1, m2);
    let limit = (6.0f64 / 12.0).sqrt();
    assert!(m1.layers[0].weights.iter().all(|w| w.abs() <= limit));
    assert!(m1.layers.iter().all(|l| l.bias.iter().all(|b| *b == 0.0)));
}

#[test]
fn kan_init_standard_deviation() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    // 25 × 1000 × 4 = 10⁵ coefficients, target std 1/(25·4).
    let layer = ChebKanLayer::init(25, 1000, 3, &mut rng);
    let n = layer.coeffs.len() as f64;
    let mean = layer.coeffs.iter().sum::<f64>() / n;
    let var = layer.coeffs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let target = 1.0 / 100.0;
    assert!((var.sqrt() - target).abs() <= 0.05 * target);
}

#[test]
fn adam_rejects_shape_mismatch() {
    let mut st = AdamState::new(AdamConfig::default(), 2);
    let mut p = vec![0.0; 3];
    assert!(st.step(&mut [&mut p], &[0.0; 3]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn layer_is_linear_in_coefficients(seed in 0u64..10_000, alpha in -3.0f64..3.0, x in -0.99f64..0.99) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = ChebKanLayer::init(2, 3, 3, &mut rng);
        let b = ChebKanLayer::init(2, 3, 3, &mut rng);
        let combo: Vec<f64> = a.coeffs.iter().zip(&b.coeffs).map(|(p, q)| p + alpha * q).collect();
        let c = ChebKanLayer::new(2, 3, 3, combo).unwrap();
        let input = [x, -0.5 * x];
        let (ya, yb, yc) = (a.forward(&input).unwrap(), b.forward(&input).unwrap(), c.forward(&input).unwrap());
        for j in 0..3 {
            prop_assert!((yc[j] - ya[j] - alpha * yb[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn tangents_agree_with_finite_differences(seed in 0u64..1000, s in -0.9f64..0.9) {
        let mut net = trunk(seed);
        scale_params(&mut net, 5.0);
        let out = net.forward(&Jets::seed_scalar(&[s]));
        let (fd1, fd2) = stencil(|dh| net.forward(&Jets::seed_scalar(&[s + dh])), 1e-4, 0);
        for e in 0..5 {
            prop_assert!(close(fd1[e], out.first(0)[e]));
            prop_assert!(close(fd2[e], out.second(0)[e]));
        }
    }
}

#[test]
fn fourier_widths_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = MlpSpec {
        widths: vec![1, 16, 4],
        fourier: Some(FourierSpec {
            n_freq: 8,
            mean: 0.0,
            std: 6.0,
        }),
    };
    let net = Mlp::init(&spec, &mut rng).unwrap();
    assert_eq!(net.layers[0].n_in, 16);
    assert_eq!(net.forward_vec(&[0.3]).unwrap().len(), 4);
    assert!(net.forward_vec(&[0.3, 0.1]).is_err());
}

#[test]
fn zero_gradient_is_a_no_op() {
    let mut st = AdamState::new(AdamConfig::default(), 3);
    let mut p = vec![1.0, -2.0, 3.0];
    st.step(&mut [&mut p], &[0.0; 3]).unwrap();
    assert_eq!(p, vec![1.0, -2.0, 3.0]);
}

#[test]
fn first_step_matches_hand_evaluation() {
    let mut st = AdamState::new(AdamConfig::default(), 1);
    let mut p = vec![0.0];
    st.step(&mut [&mut p], &[1.0]).unwrap();
    let expect =
        -1e-3 * ((1.0 - 0.9) / (1.0 - 0.9)) / (((1.0 - 0.999) / (1.0 - 0.999f64)).sqrt() + 1e-8);
    assert!((p[0] - expect).abs() < 1e-18);
}

#[test]
fn schedule_decays_after_interval() {
    let mut st = AdamState::new(AdamConfig::default(), 1);
    let mut p = vec![0.0];
    for _ in 0..499 {
        st.step(&mut [&mut p], &[0.1]).unwrap();
    }
    assert_eq!(st.current_lr(), 1e-3);
    st.step(&mut [&mut p], &[0.1]).unwrap();
    assert!((st.current_lr() - 0.9e-3).abs() < 1e-18);
}

#[test]
fn nan_gradient_names_step() {
    let mut st = AdamState::new(AdamConfig::default(), 2);
    let mut p = vec![0.0, 0.0];
    st.step(&mut [&mut p], &[0.1, 0.2]).unwrap();
    let err = st
        .step(&mut [&mut p], &[f64::NAN, 0.0])
        .unwrap_err()
        .to_string();
    assert!(err.contains("step 2"), "{err}");
}

#[test]
fn round_trip() {
    let a = vec![1.0, -0.0, f64::MIN_POSITIVE];
    let b = vec![3.5];
    let meta = serde_json::json!({"seed": 7});
    let mut buf = Vec::new();
    write_blobs(&mut buf, &meta, &[("a".into(), &a), ("b".into(), &b)]).unwrap();
    let back = read_blobs(&buf[..]).unwrap();
    assert_eq!(back.meta, meta);
    assert_eq!(back.get("a").unwrap(), a.as_slice());
    assert_eq!(back.get("b").unwrap(), b.as_slice());
    assert!(back.get("c").is_err());
}

#[test]
fn activation_derivatives_match_finite_differences() {
    let h = 1e-4;
    for act in [
        Activation::Tanh,
        Activation::Swish,
        Activation::Cos,
        Activation::Sin,
    ] {
        for &x in &[-1.7, -0.3, 0.0, 0.4, 2.1] {
            let d = act.derivs(x);
            for k in 0..3 {
                let fd = (act.derivs(x + h)[k] - act.derivs(x - h)[k]) / (2.0 * h);
                assert!(
                    (fd - d[k + 1]).abs() < 1e-6,
                    "{act:?} order {} at {x}",
                    k + 1
                );
            }
        }
    }
}

#[test]
fn chebyshev_families_match_trigonometric_forms() {
    for u in [-0.95, -0.4, 0.0, 0.37, 0.8] {
        let theta: f64 = f64::acos(u);
        let t = chebyshev_t(u, 7);
        let s = chebyshev_u(u, 7);
        for k in 0..=7 {
            assert!((t[k] - (k as f64 * theta).cos()).abs() < 1e-13);
            assert!((s[k] - ((k + 1) as f64 * theta).sin() / theta.sin()).abs() < 1e-12);
        }
    }
}
