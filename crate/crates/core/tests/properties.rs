use flowad_core::eval::{auroc, ScoreKind, ScoredSet};
use flowad_core::flow::{nll_per_item, FlowConfig, FlowModel, KernelSchedule, LN_2PI};
use flowad_core::pipeline::train_scales;
use flowad_core::scoring::{anomaly_map, fuse_scales, image_score, loglik_map, AnomalyMap, ScoreAggregation};
use flowad_core::tensor::{conv2d, ChannelPerm, ConvKernel};
use flowad_core::train::{fit, TensorDataset, TrainConfig};
use flowad_core::{Shape4, Tensor4};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn shape(max_n: usize, max_c: usize, max_hw: usize) -> impl Strategy<Value = Shape4> {
    (1..=max_n, 1..=max_c, 1..=max_hw, 1..=max_hw).prop_map(|(n, c, h, w)| Shape4::new(n, c, h, w))
}

fn filled(shape: Shape4, seed: u64) -> Tensor4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::from_fn(shape, |_, _, _, _| rng.random_range(-2.0..2.0))
}

fn random_model(c: usize, k: usize, schedule: KernelSchedule, seed: u64, gain: f64) -> FlowModel<f64> {
    let mut model = FlowModel::<f64>::init(FlowConfig {
        channels: c,
        steps: k,
        schedule,
        hidden_ratio: 1.0,
        clamp: 2.0,
        seed,
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for p in model.params_mut() {
        let v = Tensor4::from_fn(p.value().shape(), |_, _, _, _| rng.random_range(-gain..gain));
        p.set_value(v).unwrap();
    }
    model
}

fn reference_conv(x: &Tensor4<f64>, w: &Tensor4<f64>, b: &[f64]) -> Tensor4<f64> {
    let (sx, sw) = (x.shape(), w.shape());
    let pad = sw.h as isize / 2;
    Tensor4::from_fn(Shape4::new(sx.n, sw.n, sx.h, sx.w), |n, o, y, xx| {
        let mut acc = b[o];
        for ci in 0..sx.c {
            for ky in 0..sw.h {
                for kx in 0..sw.w {
                    let iy = y as isize + ky as isize - pad;
                    let ix = xx as isize + kx as isize - pad;
                    if iy >= 0 && ix >= 0 && (iy as usize) < sx.h && (ix as usize) < sx.w {
                        acc += w.get(o, ci, ky, kx) * x.get(n, ci, iy as usize, ix as usize);
                    }
                }
            }
        }
        acc
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_concat_is_exact(s in shape(3, 6, 5), at in 1usize..6, seed in any::<u64>()) {
        let x = filled(s, seed);
        if s.c % 2 == 0 {
            let (a, b) = x.split_channels().unwrap();
            prop_assert_eq!(Tensor4::concat_channels(&a, &b).unwrap(), x.clone());
        }
        if s.c > 1 {
            let at = at.min(s.c - 1);
            let a = x.narrow_channels(0, at).unwrap();
            let b = x.narrow_channels(at, s.c - at).unwrap();
            prop_assert_eq!(Tensor4::concat_channels(&a, &b).unwrap(), x);
        }
    }

    #[test]
    fn permute_inverse_is_exact(s in shape(2, 8, 4), seed in any::<u64>()) {
        let x = filled(s, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p: Vec<usize> = (0..s.c).collect();
        p.shuffle(&mut rng);
        let perm = ChannelPerm::new(p).unwrap();
        let there = x.permute_channels(&perm).unwrap();
        prop_assert_eq!(there.permute_channels(&perm.inverse()).unwrap(), x);
    }

    #[test]
    fn conv_matches_reference(s in shape(2, 4, 6), co in 1usize..5, k in prop::sample::select(vec![1usize, 3]), seed in any::<u64>()) {
        let x = filled(s, seed);
        let w = filled(Shape4::new(co, s.c, k, k), seed.wrapping_add(1));
        let b: Vec<f64> = filled(Shape4::new(1, co, 1, 1), seed.wrapping_add(2)).into_vec();
        let out = conv2d(&x, &ConvKernel::new(w.clone(), b.clone()).unwrap()).unwrap();
        let r = reference_conv(&x, &w, &b);
        prop_assert!(out.max_abs_diff(&r).unwrap() < 1e-12);
        prop_assert!(out.is_finite());
    }

    #[test]
    fn bilinear_constant_and_identity(s in shape(1, 2, 6), oh in 1usize..12, ow in 1usize..12, v in -5.0f64..5.0, seed in any::<u64>()) {
        let c = Tensor4::full(s, v);
        let r = c.bilinear_resize(oh, ow).unwrap();
        prop_assert!(r.data().iter().all(|&x| (x - v).abs() <= 1e-12 * v.abs().max(1.0)));
        let x = filled(s, seed);
        prop_assert_eq!(x.bilinear_resize(s.h, s.w).unwrap(), x);
    }

    #[test]
    fn logdet_volume_bound(c in prop::sample::select(vec![2usize, 4, 6]), k in 1usize..6, seed in any::<u64>()) {
        // large weights drive the soft clamp into saturation
        let m = random_model(c, k, KernelSchedule::AllThree, seed, 4.0);
        let x = filled(Shape4::new(1, c, 3, 3), seed).map(|v| v * 10.0);
        let r = m.forward(&x).unwrap();
        let bound = (k * (c / 2)) as f64 * 2.0;
        prop_assert!(r.logdet_map.is_finite());
        prop_assert!(r.logdet_map.data().iter().all(|v| v.abs() <= bound + 1e-9));
    }

    #[test]
    fn loglik_sums_to_negative_nll(c in prop::sample::select(vec![2usize, 4]), seed in any::<u64>()) {
        let m = random_model(c, 2, KernelSchedule::Alternating, seed, 0.3);
        let x = filled(Shape4::new(2, c, 3, 4), seed);
        let r = m.forward(&x).unwrap();
        let ll = loglik_map(&r, true);
        for (i, nll) in nll_per_item(&r).into_iter().enumerate() {
            let total: f64 = ll.plane(i, 0).iter().sum();
            prop_assert!((total + nll).abs() < 1e-9 * nll.abs().max(1.0));
        }
        let no_ld = loglik_map(&r, false);
        let sq: f64 = (0..c).map(|ch| r.z.get(0, ch, 0, 0).powi(2)).sum();
        let expected = -0.5 * sq - 0.5 * c as f64 * LN_2PI;
        prop_assert!((no_ld.get(0, 0, 0, 0) - expected).abs() < 1e-12);
    }

    #[test]
    fn anomaly_map_is_antitone(h in 1usize..5, w in 1usize..5, up in 1usize..3, idx in any::<prop::sample::Index>(), bump in 0.0f64..3.0, seed in any::<u64>()) {
        let ll = filled(Shape4::new(1, 1, h, w), seed);
        let mut raised = ll.clone();
        raised.data_mut()[idx.index(h * w)] += bump;
        let a = &anomaly_map(&ll, h * up, w * up, ScoreAggregation::Max).unwrap()[0];
        let b = &anomaly_map(&raised, h * up, w * up, ScoreAggregation::Max).unwrap()[0];
        prop_assert!(a.values().iter().zip(b.values()).all(|(x, y)| y <= x));
    }

    #[test]
    fn fuse_is_order_free_and_idempotent(n in 1usize..4, seed in any::<u64>()) {
        let agg = ScoreAggregation::Max;
        let maps: Vec<AnomalyMap> = (0..n)
            .map(|i| AnomalyMap::new(3, 2, filled(Shape4::new(1, 1, 3, 2), seed + i as u64).into_vec(), agg).unwrap())
            .collect();
        let mut reversed = maps.clone();
        reversed.reverse();
        let a = fuse_scales(&maps, agg).unwrap();
        let b = fuse_scales(&reversed, agg).unwrap();
        prop_assert!(a.values().iter().zip(b.values()).all(|(x, y)| (x - y).abs() < 1e-12));
        let same = fuse_scales(&vec![maps[0].clone(); 3], agg).unwrap();
        prop_assert!(same.values().iter().zip(maps[0].values()).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn max_score_commutes_with_increasing_maps(seed in any::<u64>()) {
        let v = filled(Shape4::new(1, 1, 4, 4), seed).into_vec();
        let s = image_score(&v, ScoreAggregation::Max);
        let f = |x: f64| 3.0 * x.exp() + 1.0;
        let mapped: Vec<f64> = v.iter().map(|&x| f(x)).collect();
        prop_assert_eq!(image_score(&mapped, ScoreAggregation::Max), f(s));
    }

    #[test]
    fn auroc_rank_invariance(n in 4usize..60, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 * 0.25).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let base = auroc(&ScoredSet::new(scores.clone(), labels.clone(), ScoreKind::Image).unwrap()).unwrap();
        for f in [|x: f64| x.exp(), |x: f64| 2.5 * x - 7.0] {
            let t: Vec<f64> = scores.iter().map(|&x| f(x)).collect();
            prop_assert_eq!(auroc(&ScoredSet::new(t, labels.clone(), ScoreKind::Image).unwrap()).unwrap(), base);
        }
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let other = auroc(&ScoredSet::new(scores, flipped, ScoreKind::Image).unwrap()).unwrap();
        prop_assert!((base + other - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coupling_preserves_identity_half(c in prop::sample::select(vec![2usize, 4, 8]), seed in any::<u64>()) {
        let m = random_model(c, 1, KernelSchedule::AllThree, seed, 0.5);
        let x = filled(Shape4::new(1, c, 3, 3), seed);
        let step = &m.steps()[0];
        let permuted = x.permute_channels(step.perm()).unwrap();
        let (y, _) = step.forward(&x).unwrap();
        prop_assert_eq!(y.narrow_channels(0, c / 2).unwrap(), permuted.narrow_channels(0, c / 2).unwrap());
    }
}

#[test]
fn scales_train_independently_of_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut items = |c, hw| -> Vec<Tensor4<f32>> {
        (0..6)
            .map(|_| Tensor4::from_fn(Shape4::new(1, c, hw, hw), |_, _, _, _| rng.random_range(-1.0..1.0)))
            .collect()
    };
    let scale0 = items(4, 4);
    let scale1 = items(2, 2);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 3,
        steps: 2,
        ..Default::default()
    };
    let joint = train_scales(vec![scale0.clone(), scale1.clone()], &cfg, &mut |_, _| {}).unwrap();

    // train scale 1 first, then scale 0, each on its own
    let mut solo = Vec::new();
    for (k, data) in [(1usize, scale1), (0, scale0)] {
        let c = data[0].shape().c;
        let mut m = FlowModel::<f32>::init(cfg.flow_config_for_scale(c, k)).unwrap();
        fit(&mut m, &TensorDataset::new(data, Default::default()).unwrap(), &cfg).unwrap();
        m.zero_grad();
        solo.push((k, m));
    }
    for (k, mut m) in solo {
        let mut j = joint[k].model.clone();
        j.zero_grad();
        m.zero_grad();
        assert_eq!(j, m, "scale {k}");
    }
}
