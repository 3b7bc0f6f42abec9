use dcdcsr::data::RatingScale;
use dcdcsr::mf::{self, objective, MfConfig, MfKind, Schedule};
use dcdcsr::{EntityKind, RatingDataset, RatingTriple};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dataset(triples: Vec<RatingTriple>, scale: RatingScale) -> RatingDataset {
    RatingDataset::from_triples(triples, scale).unwrap()
}

fn planted(users: &[Vec<f64>], items: &[Vec<f64>], scale: RatingScale) -> RatingDataset {
    let mut t = Vec::new();
    for (i, u) in users.iter().enumerate() {
        for (j, v) in items.iter().enumerate() {
            let r: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
            t.push(RatingTriple::new(format!("u{i}"), format!("i{j}"), r, (i * items.len() + j) as i64));
        }
    }
    dataset(t, scale)
}

fn train_rmse(m: &dcdcsr::MfModel, d: &RatingDataset) -> f64 {
    dcdcsr::eval::score(m, d).unwrap().rmse
}

#[test]
fn rank_one_recovery() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pick = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { 1.0 } else { 2.0 };
    let users: Vec<Vec<f64>> = (0..20).map(|_| vec![pick(&mut rng)]).collect();
    let items: Vec<Vec<f64>> = (0..20).map(|_| vec![pick(&mut rng)]).collect();
    let d = planted(&users, &items, RatingScale::new(1.0, 4.0).unwrap());
    let cfg = MfConfig {
        dim: 2,
        regularization: 0.0,
        epochs: 400,
        ..MfConfig::new(MfKind::Pmf)
    };
    let m = mf::train(&d, &cfg).unwrap();
    assert!(train_rmse(&m, &d) < 0.05, "rmse {}", train_rmse(&m, &d));
}

#[test]
fn rank_two_recovery() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let users: Vec<Vec<f64>> = (0..20)
        .map(|_| vec![rng.random_range(1.0..1.5), rng.random_range(-0.5..0.5)])
        .collect();
    let items: Vec<Vec<f64>> = (0..20)
        .map(|_| vec![rng.random_range(1.5..2.5), rng.random_range(-1.0..1.0)])
        .collect();
    let d = planted(&users, &items, RatingScale::new(0.0, 5.0).unwrap());
    let cfg = MfConfig {
        dim: 2,
        regularization: 0.0,
        epochs: 1000,
        ..MfConfig::new(MfKind::Pmf)
    };
    let m = mf::train(&d, &cfg).unwrap();
    assert!(train_rmse(&m, &d) < 0.05, "rmse {}", train_rmse(&m, &d));
}

#[test]
fn bpr_single_pair_ordered() {
    let d = dataset(
        vec![RatingTriple::new("u", "i", 5.0, 0), RatingTriple::new("u", "j", 1.0, 1)],
        RatingScale::default(),
    );
    let cfg = MfConfig {
        dim: 2,
        epochs: 200,
        learning_rate: 0.05,
        ..MfConfig::new(MfKind::Bpr)
    };
    let m = mf::train(&d, &cfg).unwrap();
    assert!(m.score("u", "i").unwrap() > m.score("u", "j").unwrap());
}

/// Ratings from planted rank-3 preferences for 100 users over 40 items.
fn preference_instance() -> RatingDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let vec3 = |rng: &mut ChaCha8Rng| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let users: Vec<Vec<f64>> = (0..100).map(|_| vec3(&mut rng)).collect();
    let items: Vec<Vec<f64>> = (0..40).map(|_| vec3(&mut rng)).collect();
    let mut t = Vec::new();
    for (i, u) in users.iter().enumerate() {
        for j in rand::seq::index::sample(&mut rng, items.len(), 15) {
            let z: f64 = u.iter().zip(&items[j]).map(|(a, b)| a * b).sum();
            t.push(RatingTriple::new(format!("u{i}"), format!("i{j}"), 3.0 + 1.5 * z, t.len() as i64));
        }
    }
    dataset(t, RatingScale::new(-10.0, 10.0).unwrap())
}

#[test]
fn bpr_orders_training_pairs() {
    let d = preference_instance();
    let cfg = MfConfig {
        dim: 5,
        epochs: 300,
        learning_rate: 0.05,
        regularization: 0.001,
        ..MfConfig::new(MfKind::Bpr)
    };
    let m = mf::train(&d, &cfg).unwrap();
    let acc = m.pair_accuracy(&d).unwrap();
    assert!(acc >= 0.95, "pair accuracy {acc}");
}

#[test]
fn bpr_auc_not_below_initial() {
    let d = preference_instance();
    for seed in 0..3 {
        let cfg = MfConfig {
            dim: 4,
            epochs: 30,
            seed,
            ..MfConfig::new(MfKind::Bpr)
        };
        // same init stream, but a step too small to move anything
        let start = mf::train(&d, &MfConfig { epochs: 1, learning_rate: 1e-300, ..cfg.clone() }).unwrap();
        let trained = mf::train(&d, &cfg).unwrap();
        assert!(trained.pair_accuracy(&d).unwrap() >= start.pair_accuracy(&d).unwrap());
    }
}

#[test]
fn heavy_regularization_shrinks_to_zero() {
    let d = preference_instance();
    let cfg = MfConfig {
        dim: 3,
        regularization: 1e4,
        learning_rate: 1e-5,
        epochs: 50,
        ..MfConfig::new(MfKind::Pmf)
    };
    let m = mf::train(&d, &cfg).unwrap();
    let max = m.users().as_slice().iter().chain(m.items().as_slice()).fold(0f64, |a, x| a.max(x.abs()));
    assert!(max < 1e-6, "largest factor {max}");
    assert!(m.score("u0", "i0").unwrap().abs() < 1e-10);
}

#[test]
fn training_is_bit_deterministic() {
    let d = preference_instance();
    for kind in MfKind::ALL {
        let cfg = MfConfig {
            dim: 3,
            epochs: 5,
            seed: 9,
            ..MfConfig::new(kind)
        };
        let a = mf::train(&d, &cfg).unwrap();
        let b = mf::train(&d, &cfg).unwrap();
        assert!(a.users().bitwise_eq(b.users()) && a.items().bitwise_eq(b.items()), "{kind}");
        assert_eq!(a.thresholds(), b.thresholds());
    }
}

#[test]
fn full_batch_objective_is_monotone() {
    let d = preference_instance();
    for kind in MfKind::ALL {
        let cfg = MfConfig {
            dim: 3,
            schedule: Schedule::FullBatch,
            learning_rate: 1e-4,
            ..MfConfig::new(kind)
        };
        let mut prev = f64::INFINITY;
        for epochs in 1..=20 {
            let m = mf::train(&d, &MfConfig { epochs, ..cfg.clone() }).unwrap();
            let now = m.objective(&d).unwrap();
            assert!(now <= prev, "{kind} epoch {epochs}: {now} > {prev}");
            prev = now;
        }
    }
}

#[test]
fn phase3_keeps_fixed_side_and_lowers_objective() {
    let d = preference_instance();
    let base = mf::train(
        &d,
        &MfConfig {
            dim: 3,
            epochs: 3,
            ..MfConfig::new(MfKind::Pmf)
        },
    )
    .unwrap();
    let cfg = MfConfig {
        dim: 3,
        epochs: 50,
        learning_rate: 1e-4,
        schedule: Schedule::FullBatch,
        ..MfConfig::new(MfKind::Pmf)
    };
    for fixed in [EntityKind::User, EntityKind::Item] {
        let out = mf::retrain_one_side(&base, &d, fixed, &cfg).unwrap();
        assert!(out.factors(fixed).bitwise_eq(base.factors(fixed)));
        assert!(out.objective(&d).unwrap() <= base.objective(&d).unwrap());
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + 1e-8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pmf_gradient_matches_differences(
        u in prop::collection::vec(-2.0f64..2.0, 4),
        v in prop::collection::vec(-2.0f64..2.0, 4),
        r in 1.0f64..5.0,
        lambda in 0.0f64..0.5,
    ) {
        let (gu, gv) = objective::pmf_sample_grad(&u, &v, r, lambda);
        let h = 1e-5;
        for c in 0..4 {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[c] += h;
            dn[c] -= h;
            let num = (objective::pmf_sample_loss(&up, &v, r, lambda) - objective::pmf_sample_loss(&dn, &v, r, lambda)) / (2.0 * h);
            prop_assert!(rel_err(gu[c], num) < 1e-4, "u[{}]: {} vs {}", c, gu[c], num);
            let mut vp = v.clone();
            let mut vn = v.clone();
            vp[c] += h;
            vn[c] -= h;
            let num = (objective::pmf_sample_loss(&u, &vp, r, lambda) - objective::pmf_sample_loss(&u, &vn, r, lambda)) / (2.0 * h);
            prop_assert!(rel_err(gv[c], num) < 1e-4, "v[{}]: {} vs {}", c, gv[c], num);
        }
    }
}
