mod common;

use adexposure::env::{merge_and_rank, reward_of, Env, ExposureOutcome, PositionModel};
use common::{brute_force, request};
use proptest::prelude::*;

fn ids(o: &ExposureOutcome) -> Vec<(u64, bool)> {
    o.exposed.iter().map(|e| (e.item.id, e.item.is_ad())).collect()
}

fn instance() -> impl Strategy<Value = (Vec<(f64, f64)>, Vec<f64>, Vec<f64>)> {
    // Coarse grids make ties common.
    let score = prop_oneof![(0u32..8).prop_map(|k| k as f64 * 0.25), 0.0f64..2.0];
    (
        prop::collection::vec((score.clone(), 0.0f64..10.0), 15),
        prop::collection::vec(score, 15),
        prop::collection::vec((0u32..13).prop_map(|k| k as f64 * 0.25), 15),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn expose_matches_brute_force((ads, recs, eta) in instance()) {
        let req = request(&ads, &recs, 10);
        let adjusted = Env::default().adjust_scores(&req, &eta).unwrap();
        let out = merge_and_rank(&req, &adjusted).unwrap();
        prop_assert_eq!(ids(&out), brute_force(&req, &adjusted));
        prop_assert_eq!(out.exposed.len(), 10);
        for (k, e) in out.exposed.iter().enumerate() {
            prop_assert_eq!(e.position, k);
        }
        prop_assert_eq!(out.n_ads, out.exposed.iter().filter(|e| e.item.is_ad()).count());
        prop_assert!((out.pvr - out.n_ads as f64 / 10.0).abs() < 1e-15);
    }

    #[test]
    fn candidate_order_is_irrelevant((ads, recs, eta) in instance(), rot in 0usize..15) {
        let req = request(&ads, &recs, 10);
        let env = Env::default();
        let base = env.apply(&req, &eta).unwrap();
        let mut shuffled = req.clone();
        shuffled.ads.rotate_left(rot);
        shuffled.ads.reverse();
        shuffled.recs.rotate_right(rot);
        let mut eta2 = eta.clone();
        eta2.rotate_left(rot);
        eta2.reverse();
        let other = env.apply(&shuffled, &eta2).unwrap();
        prop_assert_eq!(base, other);
    }

    #[test]
    fn uniform_scaling_keeps_order((ads, recs, eta) in instance(), p in -3i32..4) {
        let c = 2f64.powi(p);
        let req = request(&ads, &recs, 10);
        let adjusted = Env::default().adjust_scores(&req, &eta).unwrap();
        let base = merge_and_rank(&req, &adjusted).unwrap();
        let mut scaled = req.clone();
        for r in &mut scaled.recs {
            r.score *= c;
        }
        let adj2: Vec<f64> = adjusted.iter().map(|s| s * c).collect();
        prop_assert_eq!(ids(&base), ids(&merge_and_rank(&scaled, &adj2).unwrap()));
    }

    #[test]
    fn raising_one_coefficient_never_hurts_that_ad((ads, recs, eta) in instance(), j in 0usize..15, bump in 0.0f64..3.0) {
        let req = request(&ads, &recs, 10);
        let env = Env::default();
        let before = env.apply(&req, &eta).unwrap();
        let mut raised = eta.clone();
        raised[j] = (raised[j] + bump).min(3.0);
        let after = env.apply(&req, &raised).unwrap();
        prop_assert!(after.n_ads >= before.n_ads);
        let pos = |o: &ExposureOutcome| o.exposed.iter().position(|e| e.item.is_ad() && e.item.id == j as u64);
        if let Some(p) = pos(&before) {
            let q = pos(&after);
            prop_assert!(q.is_some_and(|q| q <= p));
        }
    }

    #[test]
    fn reward_is_additive_over_exposed_ads((ads, recs, eta) in instance()) {
        let req = request(&ads, &recs, 10);
        let pm = PositionModel::default();
        let out = Env::default().apply(&req, &eta).unwrap();
        let mut sum = 0.0;
        for e in out.exposed.iter().filter(|e| e.item.is_ad()) {
            sum += (1.0 + e.position as f64).powf(-0.3) * e.item.ecpm;
        }
        prop_assert!((reward_of(&out, &pm) - sum).abs() <= 1e-12 * (1.0 + sum));
        prop_assert!((out.revenue - sum).abs() <= 1e-12 * (1.0 + sum));
        if out.n_ads == 0 {
            prop_assert_eq!(out.revenue, 0.0);
        }
    }
}

#[test]
fn zero_coefficients_expose_no_ads() {
    let req = request(&[(5.0, 1.0); 15], &[0.1; 15], 10);
    let out = Env::default().apply(&req, &[0.0; 15]).unwrap();
    assert_eq!(out.n_ads, 0);
    assert_eq!(out.revenue, 0.0);
}

#[test]
fn out_of_bounds_coefficient_rejected() {
    let req = request(&[(1.0, 1.0); 15], &[1.0; 15], 10);
    let mut eta = [1.0; 15];
    eta[3] = 3.5;
    assert!(Env::default().apply(&req, &eta).is_err());
}
