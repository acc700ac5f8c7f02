use super::*;
use crate::seeds::rng_from;

fn tiny(latent_dim: usize) -> PolicyShape {
    PolicyShape { obs_dim: 5, latent_dim, hidden: 4, recurrent: 3, actions: 4, heads: 1, shared_recurrent: true }
}

fn random_vec(n: usize, seed: u64, scale: f64) -> Vec<f64> {
    let mut rng = rng_from(seed);
    (0..n).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale).collect()
}

#[test]
fn zero_params_give_zero_logits_and_value() {
    let p = PolicyParams::zeros(PolicyShape::new(21, 4, 20));
    let out = p.forward(&[0.5; 21], Some(2), 0, &p.zero_hidden()).unwrap();
    assert!(out.logits.iter().all(|&l| l == 0.0));
    assert_eq!(out.value, 0.0);
}

#[test]
fn forward_is_deterministic() {
    let p = PolicyParams::init(tiny(2), &mut rng_from(1));
    let obs = random_vec(5, 2, 1.0);
    let h = random_vec(3, 3, 0.5);
    assert_eq!(p.forward(&obs, Some(1), 0, &h).unwrap(), p.forward(&obs, Some(1), 0, &h).unwrap());
}

#[test]
fn latent_changes_logits() {
    let mut p = PolicyParams::init(tiny(2), &mut rng_from(1));
    let w1 = p.layers[0].clone();
    // distinct latent columns
    for i in 0..w1.rows {
        p.data[w1.offset + i * w1.cols + 5] = 0.8;
        p.data[w1.offset + i * w1.cols + 6] = -0.8;
    }
    for l in p.layers.clone() {
        if l.name.contains("pi_w") {
            p.data[l.range()].iter_mut().enumerate().for_each(|(k, x)| *x = 0.3 * (k as f64 - 5.0));
        }
    }
    let obs = random_vec(5, 2, 1.0);
    let h = p.zero_hidden();
    let a = p.forward(&obs, Some(0), 0, &h).unwrap();
    let b = p.forward(&obs, Some(1), 0, &h).unwrap();
    assert!(a.logits.iter().zip(&b.logits).any(|(x, y)| (x - y).abs() > 1e-6));
}

#[test]
fn input_errors() {
    let p = PolicyParams::zeros(tiny(2));
    let h = p.zero_hidden();
    assert!(matches!(p.forward(&[0.0; 5], Some(2), 0, &h), Err(Error::LatentOutOfRange { .. })));
    assert!(matches!(p.forward(&[0.0; 5], None, 0, &h), Err(Error::LatentOutOfRange { .. })));
    assert!(matches!(p.forward(&[0.0; 4], Some(0), 0, &h), Err(Error::InputLength { .. })));
    let q = PolicyParams::zeros(tiny(0));
    assert!(q.forward(&[0.0; 5], None, 0, &h).is_ok());
}

#[test]
fn output_depends_on_history() {
    let p = PolicyParams::init(tiny(0), &mut rng_from(9));
    let obs_a = [vec![1.0, 0.0, 0.0, 0.0, 0.0], vec![0.0; 5], vec![0.0; 5]];
    let obs_b = [vec![-1.0, 0.0, 0.0, 0.0, 0.0], vec![0.0; 5], vec![0.0; 5]];
    let run = |seq: &[Vec<f64>; 3]| {
        let mut h = p.zero_hidden();
        let mut last = None;
        for o in seq {
            let out = p.forward(o, None, 0, &h).unwrap();
            h = out.next_hidden.clone();
            last = Some(out);
        }
        last.unwrap()
    };
    let (a, b) = (run(&obs_a), run(&obs_b));
    assert!(a.next_hidden.iter().zip(&b.next_hidden).any(|(x, y)| (x - y).abs() > 1e-9));
    assert!((a.value - b.value).abs() > 0.0 || a.logits != b.logits);
}

#[test]
fn param_count_matches_layers() {
    for shape in [
        PolicyShape::new(21, 0, 20),
        PolicyShape::new(21, 8, 20),
        PolicyShape { heads: 4, shared_recurrent: false, ..PolicyShape::new(21, 0, 20) },
        PolicyShape { heads: 4, shared_recurrent: true, ..PolicyShape::new(59, 0, 20) },
    ] {
        let layers = shape.layers();
        let last = layers.last().unwrap();
        assert_eq!(last.offset + last.len(), shape.param_count());
    }
    // Latent dimension only adds trunk input columns.
    let base = PolicyShape::new(21, 0, 20).param_count();
    assert_eq!(PolicyShape::new(21, 8, 20).param_count(), base + 8 * 64);
}

/// L = Σ c_i logits_i + c_v · value, checked against central differences.
fn linear_head_loss(shape: PolicyShape, member: usize, seed: u64) -> f64 {
    let base = PolicyParams::init(shape, &mut rng_from(seed));
    let mut base = base;
    base.data = random_vec(base.data.len(), seed + 1, 0.6);
    let obs = random_vec(shape.obs_dim, seed + 2, 1.0);
    let h = random_vec(shape.recurrent, seed + 3, 0.8);
    let c = random_vec(shape.actions, seed + 4, 1.0);
    let cv = 0.7;
    let latent = (shape.latent_dim > 0).then_some(1);
    let f = |theta: &[f64]| {
        let p = PolicyParams::from_data(shape, theta.to_vec()).unwrap();
        let (out, cache) = p.forward_cached(&obs, latent, member, &h).unwrap();
        let loss = out.logits.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() + cv * out.value;
        let mut g = vec![0.0; theta.len()];
        p.backward(&cache, &c, cv, &mut g);
        (loss, g)
    };
    finite_diff_check(&base.data, f, 1e-4)
}

#[test]
fn backward_matches_finite_differences() {
    assert!(linear_head_loss(tiny(0), 0, 10) < 1e-6);
    assert!(linear_head_loss(tiny(3), 0, 20) < 1e-6);
    let multi = PolicyShape { heads: 3, shared_recurrent: false, ..tiny(0) };
    assert!(linear_head_loss(multi, 2, 30) < 1e-6);
    let shared = PolicyShape { heads: 3, shared_recurrent: true, ..tiny(2) };
    assert!(linear_head_loss(shared, 1, 40) < 1e-6);
}

#[test]
fn init_is_f32_exact_and_heads_are_small() {
    let p = PolicyParams::init(PolicyShape::new(21, 4, 20), &mut rng_from(5));
    assert!(p.data.iter().all(|&x| x == x as f32 as f64));
    let head = p.layers.iter().find(|l| l.name == "head0.pi_w").unwrap();
    let max = p.data[head.range()].iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(max < 0.01);
}

#[test]
fn batch_matches_per_sample_path() {
    for (shape, member) in [
        (tiny(3), 0),
        (PolicyShape { heads: 3, shared_recurrent: false, ..tiny(0) }, 2),
        (PolicyShape { heads: 2, shared_recurrent: true, ..tiny(2) }, 1),
    ] {
        let mut p = PolicyParams::init(shape, &mut rng_from(5));
        p.data = random_vec(p.data.len(), 6, 0.6);
        let rows = 7;
        let obs: Vec<Vec<f64>> = (0..rows).map(|b| random_vec(shape.obs_dim, 100 + b as u64, 1.0)).collect();
        let hid: Vec<Vec<f64>> = (0..rows).map(|b| random_vec(shape.recurrent, 200 + b as u64, 0.8)).collect();
        let lat = |b: usize| (shape.latent_dim > 0).then(|| b % shape.latent_dim);
        let inputs: Vec<BatchInput> =
            (0..rows).map(|b| BatchInput { obs: &obs[b], latent: lat(b), hidden: &hid[b] }).collect();
        let dl = random_vec(rows * shape.actions, 7, 1.0);
        let dv = random_vec(rows, 8, 1.0);

        let (out, cache) = p.forward_batch(member, &inputs).unwrap();
        let mut g_batch = vec![0.0; p.data.len()];
        p.backward_batch(&cache, &dl, &dv, &mut g_batch);

        let mut g_single = vec![0.0; p.data.len()];
        for b in 0..rows {
            let (o, c) = p.forward_cached(&obs[b], lat(b), member, &hid[b]).unwrap();
            let na = shape.actions;
            for (x, y) in o.logits.iter().zip(&out.logits[b * na..(b + 1) * na]) {
                assert!((x - y).abs() < 1e-12);
            }
            assert!((o.value - out.values[b]).abs() < 1e-12);
            p.backward(&c, &dl[b * na..(b + 1) * na], dv[b], &mut g_single);
        }
        for (x, y) in g_single.iter().zip(&g_batch) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }
}
