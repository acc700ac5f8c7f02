use crate::{Error, Result};

fn shannon(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

/// Generalized Jensen-Shannon divergence of K distributions with uniform
/// weights: `H(mean_k p_k) - mean_k H(p_k)`, in nats. Bounded by `ln K`.
pub fn trajedi_jsd(dists: &[Vec<f64>]) -> Result<f64> {
    let k = dists.len();
    if k == 0 {
        return Err(Error::Empty("distribution list"));
    }
    let n = dists[0].len();
    for d in dists {
        if d.len() != n {
            return Err(Error::InputLength { expected: n, got: d.len() });
        }
        let s: f64 = d.iter().sum();
        if (s - 1.0).abs() > 1e-6 || d.iter().any(|&x| x < 0.0) {
            return Err(Error::NotNormalized(s));
        }
    }
    let mut mean = vec![0.0; n];
    for d in dists {
        for (m, x) in mean.iter_mut().zip(d) {
            *m += x / k as f64;
        }
    }
    let mean_h = dists.iter().map(|d| shannon(d)).sum::<f64>() / k as f64;
    Ok((shannon(&mean) - mean_h).clamp(0.0, (k as f64).ln()))
}
