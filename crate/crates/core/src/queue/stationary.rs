use super::{QueueError, TransitionMatrix};

/// Largest chain (in states) solved directly; bigger chains use power iteration.
pub const DENSE_SOLVE_LIMIT: usize = 2001;

const RESIDUAL_TOL: f64 = 1e-10;
const MAX_ITERATIONS: usize = 1_000_000;

/// `‖xP − x‖₁`.
pub fn stationary_residual(p: &TransitionMatrix, x: &[f64]) -> f64 {
    p.left_multiply(x).iter().zip(x).map(|(a, b)| (a - b).abs()).sum()
}

/// Stationary vector `π = πP`, `Σπ = 1`.
///
/// Chains up to [`DENSE_SOLVE_LIMIT`] states use Grassmann–Taksar–Heyman state
/// reduction, which has no subtractions and stays accurate for nearly
/// decomposable chains. It falls back to power iteration when a reduction
/// pivot vanishes, which happens for reducible chains.
pub fn solve_departure_distribution(p: &TransitionMatrix) -> Result<Vec<f64>, QueueError> {
    if p.dim() <= DENSE_SOLVE_LIMIT {
        if let Some(pi) = state_reduction(p) {
            let residual = stationary_residual(p, &pi);
            if residual <= RESIDUAL_TOL {
                return Ok(pi);
            }
            log::debug!("state reduction residual {residual:e}, refining by power iteration");
            return power_iteration(p, pi);
        }
    }
    let n = p.dim();
    power_iteration(p, vec![1.0 / n as f64; n])
}

fn state_reduction(p: &TransitionMatrix) -> Option<Vec<f64>> {
    let n = p.dim();
    let mut a = p.dense().to_vec();
    // lower bound on the non-zero columns of each reduced row; eliminating a
    // later state only touches columns at or after its own bound
    let mut lo: Vec<usize> = (0..n).map(|i| p.first_nonzero(i).min(i)).collect();
    for k in (0..n.saturating_sub(1)).rev() {
        lo[k] = lo[k].min(lo[k + 1]);
    }
    let mut pivots = vec![0.0; n];
    for k in (1..n).rev() {
        let lo_k = lo[k];
        let s: f64 = a[k * n + lo_k..k * n + k].iter().sum();
        if !(s > 0.0) {
            return None;
        }
        pivots[k] = s;
        let (head, tail) = a.split_at_mut(k * n);
        let row_k = &mut tail[..k];
        for v in &mut row_k[lo_k..] {
            *v /= s;
        }
        for i in 0..k {
            let f = head[i * n + k];
            if f == 0.0 {
                continue;
            }
            let row_i = &mut head[i * n + lo_k..i * n + k];
            for (dst, src) in row_i.iter_mut().zip(&row_k[lo_k..]) {
                *dst += f * src;
            }
        }
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for k in 1..n {
        let mut acc = 0.0;
        for i in 0..k {
            acc += pi[i] * a[i * n + k];
        }
        pi[k] = acc / pivots[k];
    }
    let total: f64 = pi.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return None;
    }
    pi.iter_mut().for_each(|x| *x /= total);
    Some(pi)
}

fn power_iteration(p: &TransitionMatrix, mut pi: Vec<f64>) -> Result<Vec<f64>, QueueError> {
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_ITERATIONS {
        let mut next = p.left_multiply(&pi);
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        residual = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if residual <= RESIDUAL_TOL * 0.1 {
            return Ok(pi);
        }
    }
    Err(QueueError::NotConverged { iterations: MAX_ITERATIONS, residual })
}
