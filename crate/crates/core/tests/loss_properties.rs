//! Loss terms against scalar per-pixel references, finite differences and
//! algebraic properties.

use duoseg_core::losses::*;
use duoseg_core::nn::PROB_EPS;
use duoseg_core::MapBatch;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---- scalar references: one pixel at a time, no shared helpers with the crate ----

fn c(p: f64) -> f64 {
    if p < PROB_EPS {
        PROB_EPS
    } else if p > 1.0 - PROB_EPS {
        1.0 - PROB_EPS
    } else {
        p
    }
}

fn ref_ce(p: &[f64], y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..p.len() {
        let pi = c(p[i]);
        acc -= if y[i] == 1.0 {
            pi.ln()
        } else if y[i] == 0.0 {
            (1.0 - pi).ln()
        } else {
            y[i] * pi.ln() + (1.0 - y[i]) * (1.0 - pi).ln()
        };
    }
    acc / p.len() as f64
}

fn ref_dice(p: &[f64], y: &[f64]) -> f64 {
    let mut inter = 0.0;
    let mut sp = 0.0;
    let mut sy = 0.0;
    for i in 0..p.len() {
        inter += p[i] * y[i];
        sp += p[i];
        sy += y[i];
    }
    1.0 - (2.0 * inter + 1.0) / (sp + sy + 1.0)
}

fn ref_cross(q: f64, p: f64) -> f64 {
    -(q * c(p).ln() + (1.0 - q) * (1.0 - c(p)).ln())
}

fn ref_agreement(p1: &[f64], p2: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..p1.len() {
        acc += ref_cross(p1[i], p2[i]) + ref_cross(p2[i], p1[i]);
    }
    acc / (2.0 * p1.len() as f64)
}

fn ref_critic(real: &[f64], fake: &[f64]) -> f64 {
    let r: f64 = real.iter().map(|&v| -c(v).ln()).sum::<f64>() / real.len() as f64;
    let f: f64 = fake.iter().map(|&v| -(1.0 - c(v)).ln()).sum::<f64>() / fake.len() as f64;
    r + f
}

fn ref_adv_seg(conf: &[f64]) -> f64 {
    conf.iter().map(|&v| -c(v).ln()).sum::<f64>() / conf.len() as f64
}

fn map(v: &[f64], side: usize) -> MapBatch<f64> {
    MapBatch::new(v.len() / (side * side), side, side, v.to_vec()).unwrap()
}

fn random_probs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
}

fn random_mask(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect()
}

#[test]
fn every_loss_matches_its_scalar_reference_on_random_3x3_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let tol = 1e-6;
    for _ in 0..200 {
        let p = random_probs(&mut rng, 9);
        let q = random_probs(&mut rng, 9);
        let y = random_mask(&mut rng, 9);
        let (pm, qm, ym) = (map(&p, 3), map(&q, 3), map(&y, 3));

        assert!((ce_loss(&pm, &ym).unwrap().value - ref_ce(&p, &y)).abs() < tol);
        assert!((dice_loss(&pm, &ym).unwrap().value - ref_dice(&p, &y)).abs() < tol);
        let (sup, _) = supervised_loss(&pm, &ym, SupervisedWeights::default()).unwrap();
        assert!((sup.total - ref_ce(&p, &y) - ref_dice(&p, &y)).abs() < tol);
        let agree = agreement_loss(&pm, &qm, AgreementOptions::default()).unwrap();
        assert!((agree.value - ref_agreement(&p, &q)).abs() < tol);
        assert!((adv_loss_labeled_for_critic(&pm, &qm).unwrap().value - ref_critic(&p, &q)).abs() < tol);
        assert!((adv_loss_for_seg(&pm).unwrap().value - ref_adv_seg(&p)).abs() < tol);
    }
}

#[test]
fn agreement_is_exactly_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let (p, q) = (map(&random_probs(&mut rng, 9), 3), map(&random_probs(&mut rng, 9), 3));
        let a = agreement_loss(&p, &q, AgreementOptions::default()).unwrap();
        let b = agreement_loss(&q, &p, AgreementOptions::default()).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.grad1.data(), b.grad2.data());
    }
}

/// Central difference of `f` at every pixel of `x`.
fn numeric_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-6;
    (0..x.len())
        .map(|i| {
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[i] += h;
            dn[i] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

fn assert_close(analytic: &[f64], numeric: &[f64], rel: f64) {
    for (a, n) in analytic.iter().zip(numeric) {
        let scale = a.abs().max(n.abs()).max(1e-4);
        assert!((a - n).abs() / scale < rel, "analytic {a} vs numeric {n}");
    }
}

#[test]
fn loss_gradients_match_finite_differences_on_2x2_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..10 {
        // keep away from the clamp so the loss is smooth around the point
        let p: Vec<f64> = (0..4).map(|_| rng.random_range(0.05..0.95)).collect();
        let q: Vec<f64> = (0..4).map(|_| rng.random_range(0.05..0.95)).collect();
        let y = random_mask(&mut rng, 4);
        let ym = map(&y, 2);

        let g = ce_loss(&map(&p, 2), &ym).unwrap().grad;
        assert_close(g.data(), &numeric_grad(&p, |x| ref_ce(x, &y)), 1e-3);
        let g = dice_loss(&map(&p, 2), &ym).unwrap().grad;
        assert_close(g.data(), &numeric_grad(&p, |x| ref_dice(x, &y)), 1e-3);
        let (_, g) = supervised_loss(&map(&p, 2), &ym, SupervisedWeights::default()).unwrap();
        assert_close(g.data(), &numeric_grad(&p, |x| ref_ce(x, &y) + ref_dice(x, &y)), 1e-3);

        let a = agreement_loss(&map(&p, 2), &map(&q, 2), AgreementOptions::default()).unwrap();
        assert_close(a.grad1.data(), &numeric_grad(&p, |x| ref_agreement(x, &q)), 1e-3);
        assert_close(a.grad2.data(), &numeric_grad(&q, |x| ref_agreement(&p, x)), 1e-3);

        let cl = adv_loss_labeled_for_critic(&map(&p, 2), &map(&q, 2)).unwrap();
        assert_close(cl.grad_real.data(), &numeric_grad(&p, |x| ref_critic(x, &q)), 1e-3);
        assert_close(cl.grad_fake.data(), &numeric_grad(&q, |x| ref_critic(&p, x)), 1e-3);

        let g = adv_loss_for_seg(&map(&p, 2)).unwrap().grad;
        assert_close(g.data(), &numeric_grad(&p, ref_adv_seg), 1e-3);
    }
}

#[test]
fn ce_and_dice_are_minimized_at_the_target() {
    for y in [0.0, 1.0] {
        let ym = map(&[y], 1);
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        for f in [ce_loss::<f64>, dice_loss::<f64>] {
            let best = grid
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    let la = f(&map(&[a], 1), &ym).unwrap().value;
                    let lb = f(&map(&[b], 1), &ym).unwrap().value;
                    la.total_cmp(&lb)
                })
                .unwrap();
            assert_eq!(best, y);
        }
    }
}

#[test]
fn batch_value_is_the_mean_of_sample_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = random_probs(&mut rng, 36);
    let q = random_probs(&mut rng, 36);
    let y = random_mask(&mut rng, 36);
    let whole = |f: &dyn Fn(&[f64], &[f64], &[f64]) -> f64| f(&p, &q, &y);
    let per_sample = |f: &dyn Fn(&[f64], &[f64], &[f64]) -> f64| {
        (0..4).map(|i| f(&p[i * 9..][..9], &q[i * 9..][..9], &y[i * 9..][..9])).sum::<f64>() / 4.0
    };
    let losses: Vec<Box<dyn Fn(&[f64], &[f64], &[f64]) -> f64>> = vec![
        Box::new(|p, _, y| ce_loss(&map(p, 3), &map(y, 3)).unwrap().value),
        Box::new(|p, _, y| dice_loss(&map(p, 3), &map(y, 3)).unwrap().value),
        Box::new(|p, q, _| agreement_loss(&map(p, 3), &map(q, 3), AgreementOptions::default()).unwrap().value),
        Box::new(|p, q, _| adv_loss_labeled_for_critic(&map(p, 3), &map(q, 3)).unwrap().value),
        Box::new(|p, _, _| adv_loss_for_seg(&map(p, 3)).unwrap().value),
        Box::new(|p, q, _| mse_consistency(&map(p, 3), &map(q, 3)).unwrap().value),
    ];
    for f in &losses {
        assert!((whole(f.as_ref()) - per_sample(f.as_ref())).abs() < 1e-6);
    }
}

proptest! {
    #[test]
    fn losses_are_non_negative(
        p in prop::collection::vec(0.0f64..=1.0, 9),
        q in prop::collection::vec(0.0f64..=1.0, 9),
        y in prop::collection::vec(prop::bool::ANY, 9),
    ) {
        let y: Vec<f64> = y.into_iter().map(|b| b as u8 as f64).collect();
        let (pm, qm, ym) = (map(&p, 3), map(&q, 3), map(&y, 3));
        prop_assert!(ce_loss(&pm, &ym).unwrap().value >= 0.0);
        let d = dice_loss(&pm, &ym).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!(agreement_loss(&pm, &qm, AgreementOptions::default()).unwrap().value >= 0.0);
        prop_assert!(adv_loss_labeled_for_critic(&pm, &qm).unwrap().value >= 0.0);
        prop_assert!(adv_loss_for_seg(&pm).unwrap().value >= 0.0);
    }

    #[test]
    fn zero_unsupervised_weight_ignores_agreement(a in 0.0f64..10.0, b in 0.0f64..10.0) {
        let w = LossWeights { lambda_u: 0.0, ..Default::default() };
        let sup = SupervisedValue { total: 1.0, ce: 0.5, dice: 0.5 };
        prop_assert_eq!(total_seg_loss(&w, sup, a, 0.5, 0.5).total, total_seg_loss(&w, sup, b, 0.5, 0.5).total);
    }
}
