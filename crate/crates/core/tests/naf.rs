use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sto_core::agents::naf::naf_specs;
use sto_core::agents::naf_decompose;
use sto_core::neural::Mlp;

#[test]
fn advantage_hand_value() {
    let v = naf_decompose(&[0.0, 2.0, 0.0], 1.0);
    assert_eq!(v.mu, 0.0);
    assert_eq!(v.p, 1.0);
    assert_eq!(v.advantage, -0.5);
    assert_eq!(v.q, 1.5);
}

#[test]
fn greedy_action_attains_the_value_and_bounds_q() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut nets = Vec::new();
    for i in 0..100 {
        let width = rng.gen_range(2..12);
        let mut net = Mlp::init_seeded(&naf_specs(2, &[width, width]), i).unwrap();
        // Spread the heads so P and μ cover a wide range.
        let last = net.layers().len() - 1;
        net.scale_layer(last, rng.gen_range(0.5..6.0));
        nets.push(net);
    }
    for _ in 0..10_000 {
        let net = &nets[rng.gen_range(0..nets.len())];
        let x = [rng.gen_range(0.0..1.1), rng.gen_range(0.0..1.1)];
        let a = rng.gen_range(-1.0..=1.0);
        let heads = net.predict_one(&x).unwrap();
        let at_mu = naf_decompose(&heads, naf_decompose(&heads, 0.0).mu);
        assert!((at_mu.q - at_mu.v).abs() <= 1e-12);
        let vals = naf_decompose(&heads, a);
        assert!(vals.q <= vals.v);
        assert!(vals.p > 0.0 && vals.mu.abs() <= 1.0);
    }
}
