//! The threshold cascade checked against scalar re-derivations.

use chaos_bandit::decision::{
    EstimatorConfig, OmegaStrategy, RewardEstimates, ThresholdTree,
};
use chaos_bandit::environment::SwitchingBernoulliEnv;
use chaos_bandit::signal::{
    CalibrationStats, Generator, SignalSource, SourceSpec, Trace, WrapPolicy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_trace(rng: &mut ChaCha8Rng, n: usize) -> SignalSource {
    let bytes: Vec<u8> = (0..n).map(|_| rng.random()).collect();
    let trace = Trace::from_bytes(bytes, 10).unwrap();
    SignalSource::from_trace(&trace, 1, WrapPolicy::Error).unwrap()
}

/// Level index written out by hand: nearest integer with halves away from zero.
fn oracle_level(th: f64) -> usize {
    let r = if th >= 0.0 { (th + 0.5).floor() } else { (th - 0.5).ceil() };
    (r.clamp(-2.0, 2.0) + 2.0) as usize
}

#[test]
fn depth_two_matches_direct_comparisons() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let levels = CalibrationStats::new([10.0, 70.0, 128.0, 190.0, 240.0], 1000).unwrap();
    let mut tree = ThresholdTree::new(2, 0.9, levels).unwrap();
    let mut source = random_trace(&mut rng, 2000);
    for round in 0..1000 {
        let th: Vec<f64> = (0..3).map(|_| rng.random_range(-3.5..3.5)).collect();
        for (node, &value) in th.iter().enumerate() {
            tree.set_threshold(node, value);
        }
        let decision = tree.decide(&mut source).unwrap();
        let q = levels.quantiles();
        let s: Vec<f64> = decision.samples().iter().map(|s| f64::from(s.raw())).collect();
        let b1 = usize::from(s[0] > q[oracle_level(th[0])]);
        let b2 = usize::from(s[1] > q[oracle_level(th[1 + b1])]);
        assert_eq!(decision.arm(), 2 * b1 + b2, "round {round}, thresholds {th:?}, samples {s:?}");
    }
}

#[test]
fn mirrored_signal_and_thresholds_mirror_the_arm() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let levels = CalibrationStats::new([0.0, 64.0, 127.5, 191.0, 255.0], 1000).unwrap();
    let depth = 3;
    let mut tree = ThresholdTree::new(depth, 0.9, levels).unwrap();
    let mut mirror = tree.clone();
    let mut checked = 0;
    for _ in 0..2000 {
        for level in 0..depth {
            for prefix in 0..1 << level {
                let v = rng.random_range(-3.0..3.0);
                let complement = (1 << level) - 1 - prefix;
                tree.set_threshold(ThresholdTree::node_index(level, prefix), v);
                mirror.set_threshold(ThresholdTree::node_index(level, complement), -v);
            }
        }
        let bytes: Vec<u8> = (0..depth).map(|_| rng.random()).collect();
        let flipped: Vec<u8> = bytes.iter().map(|b| 255 - b).collect();
        let ties = bytes
            .iter()
            .any(|&b| levels.quantiles().contains(&f64::from(b)));
        if ties {
            continue;
        }
        let mut a = SignalSource::from_trace(&Trace::from_bytes(bytes, 10).unwrap(), 1, WrapPolicy::Error).unwrap();
        let mut b = SignalSource::from_trace(&Trace::from_bytes(flipped, 10).unwrap(), 1, WrapPolicy::Error).unwrap();
        let arm = tree.decide(&mut a).unwrap().arm();
        let mirrored = mirror.decide(&mut b).unwrap().arm();
        assert_eq!(mirrored, (1 << depth) - 1 - arm);
        checked += 1;
    }
    assert!(checked > 1500);
}

#[test]
fn flexible_equals_fixed_when_estimates_sum_to_one() {
    for pair in [[0.25, 0.75], [0.5, 0.5], [0.9, 0.1]] {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let levels = CalibrationStats::new([0.0, 64.0, 128.0, 192.0, 255.0], 1000).unwrap();
        let estimates = RewardEstimates::from_values(pair.to_vec(), 0.05).unwrap();
        let mut fixed = ThresholdTree::new(1, 0.9, levels).unwrap();
        let mut flexible = fixed.clone();
        let mut source = random_trace(&mut rng, 5000);
        for _ in 0..5000 {
            let decision = fixed.decide(&mut source).unwrap();
            let rewarded = rng.random_bool(0.4);
            fixed.update(&decision, rewarded, &OmegaStrategy::fixed(), &estimates).unwrap();
            flexible.update(&decision, rewarded, &OmegaStrategy::flexible(), &estimates).unwrap();
            assert!((fixed.thresholds()[0] - flexible.thresholds()[0]).abs() < 1e-12);
        }
    }
}

#[test]
fn frozen_median_thresholds_give_coin_flip_csr() {
    let spec = SourceSpec::new(Generator::Uniform {});
    let mut source = spec.open(21).unwrap();
    let levels = source.calibrate(100_000).unwrap();
    assert_eq!(levels.quantiles()[0], 0.0);
    assert_eq!(levels.quantiles()[4], 255.0);
    let tree = ThresholdTree::new(1, 0.9, levels).unwrap();
    let env = SwitchingBernoulliEnv::new([0.1, 0.9], 2500).unwrap();
    let cycles = 200_000u64;
    let mut hits = 0u64;
    for t in 0..cycles {
        let arm = tree.decide(&mut source).unwrap().arm();
        hits += u64::from(env.best_arm_at(t) == Some(arm));
    }
    let csr = hits as f64 / cycles as f64;
    assert!((csr - 0.5).abs() <= 0.01, "csr {csr}");
}

#[test]
fn estimator_config_builds_requested_arity() {
    let estimates = EstimatorConfig::default().build(4).unwrap();
    assert_eq!(estimates.arms(), 4);
    assert!(estimates.p_hat().iter().all(|&p| p == 0.5));
}
