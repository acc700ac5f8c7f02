/// Compares the analytic gradient returned by `loss_and_grad` at `params`
/// against central differences, one parameter at a time.
///
/// Returns `max_i |fd_i - g_i| / max(|g_i|, 1e-8)`.
pub fn finite_diff_check<F>(params: &[f64], loss_and_grad: F, epsilon: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, grad) = loss_and_grad(params);
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + epsilon;
        let (plus, _) = loss_and_grad(&p);
        p[i] = orig - epsilon;
        let (minus, _) = loss_and_grad(&p);
        p[i] = orig;
        let fd = (plus - minus) / (2.0 * epsilon);
        worst = worst.max((fd - grad[i]).abs() / grad[i].abs().max(1e-8));
    }
    worst
}
