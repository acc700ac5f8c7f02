use super::*;
use crate::approximator::{finite_diff_check, PolicyShape};
use crate::seeds::rng_from;
use proptest::prelude::*;
use rand::Rng;

/// Direct double loop: A_t = sum_l (γλ)^l δ_{t+l}, stopping after a terminal.
pub(crate) fn brute_force_gae(r: &[f64], v: &[f64], d: &[bool], boot: f64, g: f64, l: f64) -> Vec<f64> {
    let n = r.len();
    let delta: Vec<f64> = (0..n)
        .map(|t| {
            let next = if t + 1 < n { v[t + 1] } else { boot };
            r[t] + g * next * if d[t] { 0.0 } else { 1.0 } - v[t]
        })
        .collect();
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            for k in t..n {
                sum += (g * l).powi((k - t) as i32) * delta[k];
                if d[k] {
                    break;
                }
            }
            sum
        })
        .collect()
}

#[test]
fn gae_single_terminal_step() {
    let (a, r) = compute_gae(&[1.0], &[0.5], &[true], 0.0, 0.99, 0.95);
    assert!((a[0] - 0.5).abs() < 1e-12);
    assert!((r[0] - 1.0).abs() < 1e-12);
}

#[test]
fn gae_lambda_zero_is_td_error() {
    let r = [1.0, -0.5, 2.0];
    let v = [0.1, 0.2, 0.3];
    let (a, _) = compute_gae(&r, &v, &[false, false, false], 0.7, 0.9, 0.0);
    assert!((a[0] - (1.0 + 0.9 * 0.2 - 0.1)).abs() < 1e-12);
    assert!((a[1] - (-0.5 + 0.9 * 0.3 - 0.2)).abs() < 1e-12);
    assert!((a[2] - (2.0 + 0.9 * 0.7 - 0.3)).abs() < 1e-12);
}

proptest! {
    #[test]
    fn gae_matches_brute_force(
        seq in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, prop::bool::weighted(0.1)), 1..60),
        boot in -1.0f64..1.0,
    ) {
        let r: Vec<f64> = seq.iter().map(|x| x.0).collect();
        let v: Vec<f64> = seq.iter().map(|x| x.1).collect();
        let d: Vec<bool> = seq.iter().map(|x| x.2).collect();
        let (a, ret) = compute_gae(&r, &v, &d, boot, 0.99, 0.95);
        let oracle = brute_force_gae(&r, &v, &d, boot, 0.99, 0.95);
        for t in 0..r.len() {
            prop_assert!((a[t] - oracle[t]).abs() < 1e-6);
            prop_assert!((ret[t] - a[t] - v[t]).abs() < 1e-12);
        }
    }
}

fn tiny_shape() -> PolicyShape {
    PolicyShape { obs_dim: 5, latent_dim: 2, hidden: 4, recurrent: 3, actions: 4, heads: 1, shared_recurrent: true }
}

fn random_samples(params: &PolicyParams, n: usize, seed: u64, ratio_spread: f64) -> Vec<Sample> {
    let mut rng = rng_from(seed);
    let s = params.shape;
    (0..n)
        .map(|_| {
            let obs: Vec<f64> = (0..s.obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let hidden: Vec<f64> = (0..s.recurrent).map(|_| rng.random_range(-0.5..0.5)).collect();
            let latent = (s.latent_dim > 0).then(|| rng.random_range(0..s.latent_dim));
            let action = rng.random_range(0..s.actions);
            let out = params.forward(&obs, latent, 0, &hidden).unwrap();
            let (logp, _) = logprob_entropy(&out.logits, action);
            Sample {
                obs,
                latent,
                member: 0,
                hidden,
                action,
                logprob_old: logp + ratio_spread * rng.random_range(-1.0..1.0),
                value_old: out.value,
                advantage: rng.random_range(-2.0..2.0),
                ret: rng.random_range(-1.0..1.0),
            }
        })
        .collect()
}

#[test]
fn loss_matches_hand_computation() {
    let params = PolicyParams::init(tiny_shape(), &mut rng_from(1));
    let mut samples = random_samples(&params, 3, 2, 0.0);
    // Ratios 1.5 (clipped for A>0), 0.5 (clipped for A<0), 1.1 (inside).
    let log_ratios = [1.5f64.ln(), 0.5f64.ln(), 1.1f64.ln()];
    let advantages = [1.0, -2.0, 0.5];
    let cfg = PpoConfig::default();
    let mut expected = 0.0;
    for (i, s) in samples.iter_mut().enumerate() {
        let out = params.forward(&s.obs, s.latent, 0, &s.hidden).unwrap();
        let m = out.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = out.logits.iter().map(|l| (l - m).exp()).sum();
        let logp = out.logits[s.action] - m - z.ln();
        let probs: Vec<f64> = out.logits.iter().map(|l| (l - m).exp() / z).collect();
        let h: f64 = -probs.iter().map(|p| p * p.ln()).sum::<f64>();
        s.logprob_old = logp - log_ratios[i];
        s.advantage = advantages[i];
        let ratio = log_ratios[i].exp();
        let clipped = ratio.clamp(0.8, 1.2);
        let surr = (ratio * advantages[i]).min(clipped * advantages[i]);
        expected += (-surr + 0.5 * (out.value - s.ret).powi(2) - 0.001 * h) / 3.0;
    }
    let refs: Vec<&Sample> = samples.iter().collect();
    let (loss, _, parts) = ppo_loss(&params, &refs, &cfg).unwrap();
    assert!((loss - expected).abs() < 1e-6, "{loss} vs {expected}");
    // Ratios 1.5 and 0.5 both lie outside [0.8, 1.2].
    assert!((parts.clip_frac - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn fresh_batch_has_no_clipping() {
    let params = PolicyParams::init(tiny_shape(), &mut rng_from(3));
    let samples = random_samples(&params, 16, 4, 0.0);
    let refs: Vec<&Sample> = samples.iter().collect();
    let (_, _, parts) = ppo_loss(&params, &refs, &PpoConfig::default()).unwrap();
    assert_eq!(parts.clip_frac, 0.0);
}

#[test]
fn equal_advantages_give_no_policy_gradient() {
    let params = PolicyParams::init(tiny_shape(), &mut rng_from(5));
    let mut samples = random_samples(&params, 8, 6, 0.1);
    for s in &mut samples {
        s.advantage = 3.0;
    }
    normalize_advantages(&mut samples);
    assert!(samples.iter().all(|s| s.advantage == 0.0));
    let cfg = PpoConfig { value_coef: 0.0, entropy_coef: 0.0, ..PpoConfig::default() };
    let refs: Vec<&Sample> = samples.iter().collect();
    let (_, grad, _) = ppo_loss(&params, &refs, &cfg).unwrap();
    assert!(grad.iter().all(|g| *g == 0.0));
}

#[test]
fn loss_gradient_matches_finite_differences() {
    for trial in 0..5 {
        let params = PolicyParams::init(tiny_shape(), &mut rng_from(10 + trial));
        let samples = random_samples(&params, 6, 20 + trial, 0.1);
        let cfg = PpoConfig::default();
        let shape = params.shape;
        let err = finite_diff_check(
            &params.data,
            |p| {
                let net = PolicyParams::from_data(shape, p.to_vec()).unwrap();
                let refs: Vec<&Sample> = samples.iter().collect();
                let (l, g, _) = ppo_loss(&net, &refs, &cfg).unwrap();
                (l, g)
            },
            1e-5,
        );
        assert!(err < 1e-4, "trial {trial}: {err}");
    }
}

#[test]
fn unclipped_surrogate_equals_vanilla_policy_gradient() {
    let params = PolicyParams::init(tiny_shape(), &mut rng_from(7));
    let samples = random_samples(&params, 10, 8, 0.0);
    let cfg = PpoConfig { clip: 1e9, value_coef: 0.0, entropy_coef: 0.0, ..PpoConfig::default() };
    let refs: Vec<&Sample> = samples.iter().collect();
    let (_, grad, _) = ppo_loss(&params, &refs, &cfg).unwrap();
    // -mean A ∇log π(a|s), accumulated independently.
    let mut pg = vec![0.0; params.data.len()];
    for s in &samples {
        let (out, cache) = params.forward_cached(&s.obs, s.latent, 0, &s.hidden).unwrap();
        let p = softmax(&out.logits);
        let dl: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(j, pj)| -s.advantage * ((j == s.action) as u8 as f64 - pj) / samples.len() as f64)
            .collect();
        params.backward(&cache, &dl, 0.0, &mut pg);
    }
    for (a, b) in grad.iter().zip(&pg) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn update_rejects_empty_batch() {
    let mut params = PolicyParams::init(tiny_shape(), &mut rng_from(1));
    let mut adam = Adam::new(params.data.len(), PpoConfig::default().adam());
    let r = ppo_update(&mut params, &mut adam, Vec::new(), &PpoConfig::default(), &mut rng_from(2));
    assert!(matches!(r, Err(Error::Empty(_))));
}

#[test]
fn update_is_deterministic_and_moves_params() {
    let init = PolicyParams::init(tiny_shape(), &mut rng_from(1));
    let samples = random_samples(&init, 40, 9, 0.05);
    let run = || {
        let mut p = init.clone();
        let mut adam = Adam::new(p.data.len(), PpoConfig::default().adam());
        let stats = ppo_update(&mut p, &mut adam, samples.clone(), &PpoConfig::default(), &mut rng_from(3)).unwrap();
        (p, stats)
    };
    let (a, sa) = run();
    let (b, sb) = run();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    assert_ne!(a.data, init.data);
}

#[test]
fn config_validation() {
    assert!(PpoConfig::default().validate().is_ok());
    assert!(PpoConfig { clip: 1.0, ..PpoConfig::default() }.validate().is_err());
    assert!(PpoConfig { epochs: 0, ..PpoConfig::default() }.validate().is_err());
    assert_eq!(PpoConfig::default().ticks_per_batch(), 2048);
}

