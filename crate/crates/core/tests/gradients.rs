mod common;

use adexposure::neural::{dueling_combine, gradient_check, Activation, Cache, NetSpec, Params};
use common::{fd_max_rel_error, random_net, ACTS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn fifty_random_nets_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut seen = std::collections::HashSet::new();
    for k in 0..50 {
        let p = random_net(k, &mut rng);
        let x: Vec<f64> = (0..p.input_len()).map(|_| rng.random_range(-1.5..1.5)).collect();
        let w: Vec<f64> = (0..p.output_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let err = fd_max_rel_error(&p, &x, &w, 1e-4);
        assert!(err <= 1e-3, "net {k}: relative error {err:e}");
        let lib = gradient_check(&p, &x, &w, 1e-4).unwrap();
        assert!((lib - err).abs() < 1e-12);
        let l = &p.spec.layers;
        seen.insert((format!("{:?}", l[0].activation), format!("{:?}", l[l.len() - 1].activation), p.spec.dueling));
    }
    for h in ACTS {
        for o in ACTS {
            assert!(seen.contains(&(format!("{h:?}"), format!("{o:?}"), false)));
        }
        assert!(seen.contains(&(format!("{h:?}"), "Identity".to_string(), true)));
    }
}

#[test]
fn input_gradient_matches_finite_differences() {
    let p = Params::init(NetSpec::mlp(6, &[20, 20], 1, Activation::Identity), 5).unwrap();
    let x = [0.3, -0.2, 0.9, 0.1, -0.7, 0.45];
    let mut cache = Cache::default();
    p.forward_cached(&x, &mut cache).unwrap();
    let g = p.backward_input(&cache, &[1.0]).unwrap();
    for i in 0..x.len() {
        let mut a = x;
        let mut b = x;
        a[i] += 1e-5;
        b[i] -= 1e-5;
        let n = (p.forward(&a).unwrap()[0] - p.forward(&b).unwrap()[0]) / 2e-5;
        assert!((g[i] - n).abs() <= 1e-6 * (1.0 + n.abs()), "input {i}: {} vs {n}", g[i]);
    }
}

#[test]
fn dueling_mean_recovers_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let v = rng.random_range(-10.0..10.0);
        let adv: Vec<f64> = (0..rng.random_range(1..12)).map(|_| rng.random_range(-5.0..5.0)).collect();
        let q = dueling_combine(v, &adv);
        let mean = q.iter().sum::<f64>() / q.len() as f64;
        assert!((mean - v).abs() <= 8.0 * f64::EPSILON * (1.0 + v.abs() + adv.iter().map(|a| a.abs()).sum::<f64>()));
    }
}
