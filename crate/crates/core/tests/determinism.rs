mod common;

use common::{env_for, shipped_line};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sto_core::agents::train::{train, write_log};
use sto_core::agents::{AgentConfig, Algo, Preset, TrainOptions};
use sto_core::env::rollout;

fn short(algo: Algo) -> AgentConfig {
    AgentConfig {
        episodes: 4,
        warmup: 64,
        eval_every: 2,
        ..AgentConfig::preset(algo, Preset::Desk)
    }
}

fn run(algo: Algo, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let env = env_for(shipped_line());
    let out = train(&env, &short(algo), seed, &TrainOptions::default(), |_| {}).unwrap();
    let mut log = Vec::new();
    write_log(&mut log, &out.log).unwrap();
    let (traj, _) = out.final_policy.run(&env).unwrap();
    let mut csv = Vec::new();
    traj.write_csv(&mut csv).unwrap();
    (log, csv)
}

#[test]
fn training_is_reproducible_for_every_algorithm() {
    for algo in Algo::ALL {
        let a = run(algo, 3);
        let b = run(algo, 3);
        assert_eq!(a.0, b.0, "{algo} logs differ");
        assert_eq!(a.1, b.1, "{algo} trajectories differ");
    }
}

#[test]
fn different_seeds_differ() {
    assert_ne!(run(Algo::Stod, 1).0, run(Algo::Stod, 2).0);
}

#[test]
fn rollouts_repeat_bit_for_bit() {
    let actions: Vec<f64> = {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        (0..400).map(|_| rng.gen_range(-1.0..=1.0)).collect()
    };
    let replay = || {
        let mut env = env_for(shipped_line());
        let mut i = 0;
        rollout(&mut env, |_, _| {
            i += 1;
            actions[i - 1]
        })
        .unwrap()
    };
    let (a, ra) = replay();
    let (b, rb) = replay();
    assert_eq!(a, b);
    assert_eq!(ra.to_bits(), rb.to_bits());
}
