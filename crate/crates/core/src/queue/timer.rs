use super::QueueParams;

/// `ln P(Poisson(mean) = n)` for every `n < len`.
fn poisson_ln_pmf(mean: f64, len: usize) -> Vec<f64> {
    let ln_mean = mean.ln();
    let mut out = Vec::with_capacity(len);
    let mut ln_fact = 0.0;
    for n in 0..len {
        if n > 0 {
            ln_fact += (n as f64).ln();
        }
        out.push(-mean + n as f64 * ln_mean - ln_fact);
    }
    out
}

/// `P(Erlang(k, rate) > t)`, i.e. fewer than `k` Poisson arrivals within `t`.
pub fn erlang_survival(k: usize, rate: f64, t: f64) -> f64 {
    if k == 0 || t.is_infinite() {
        return 0.0;
    }
    if t <= 0.0 {
        return 1.0;
    }
    poisson_ln_pmf(rate * t, k).into_iter().map(f64::exp).sum::<f64>().min(1.0)
}

/// `E[min(Erlang(k, rate), t)] = (1/rate) Σ_{n<k} P(Poisson(rate·t) > n)`.
pub fn expected_truncated_erlang(k: usize, rate: f64, t: f64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    if t.is_infinite() {
        return k as f64 / rate;
    }
    let mut cdf = 0.0;
    let mut acc = 0.0;
    for ln_p in poisson_ln_pmf(rate * t, k) {
        cdf += ln_p.exp();
        acc += (1.0 - cdf).max(0.0);
    }
    acc / rate
}

/// Probability that the fill timer expires before a block fills from residue `i`.
///
/// Zero for `i ≥ S_B` and for an infinite timer.
pub fn timer_expiry_prob(i: usize, q: &QueueParams) -> f64 {
    if i >= q.batch_size {
        return 0.0;
    }
    erlang_survival(q.batch_size - i, q.arrival_rate, q.timeout)
}

/// Poisson(`mean`) conditioned on `n < len`, normalised in log space.
pub fn truncated_poisson(mean: f64, len: usize) -> Vec<f64> {
    if len == 0 {
        return Vec::new();
    }
    let ln_p = poisson_ln_pmf(mean, len);
    let top = ln_p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = ln_p.iter().map(|x| (x - top).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp};

    fn q(batch: usize, nu: f64, tau: f64) -> QueueParams {
        QueueParams::new(100, batch, 1.0, nu, tau).unwrap()
    }

    #[test]
    fn full_residue_never_waits() {
        assert_eq!(timer_expiry_prob(5, &q(5, 1.0, 1.0)), 0.0);
        assert_eq!(timer_expiry_prob(9, &q(5, 1.0, 1.0)), 0.0);
    }

    #[test]
    fn infinite_timer_never_expires() {
        for i in 0..5 {
            assert_eq!(timer_expiry_prob(i, &q(5, 0.01, f64::INFINITY)), 0.0);
        }
    }

    #[test]
    fn single_missing_arrival_is_exponential_tail() {
        let p = timer_expiry_prob(4, &q(5, 1.0, 1.0));
        assert!((p - (-1.0f64).exp()).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gap = Exp::new(1.0).unwrap();
        let trials = 200_000;
        let late = (0..trials).filter(|_| gap.sample(&mut rng) > 1.0).count();
        assert!((late as f64 / trials as f64 - 0.3679).abs() < 0.005);
    }

    #[test]
    fn erlang_tail_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gap = Exp::new(2.0).unwrap();
        let (k, t) = (4, 1.5);
        let trials = 200_000;
        let mut late = 0;
        let mut truncated = 0.0;
        for _ in 0..trials {
            let fill: f64 = (0..k).map(|_| gap.sample(&mut rng)).sum();
            if fill > t {
                late += 1;
            }
            truncated += fill.min(t);
        }
        assert!((erlang_survival(k, 2.0, t) - late as f64 / trials as f64).abs() < 0.005);
        let mean = truncated / trials as f64;
        assert!((expected_truncated_erlang(k, 2.0, t) - mean).abs() < 0.01);
    }

    #[test]
    fn huge_mean_underflows_cleanly() {
        assert_eq!(erlang_survival(50, 20.0, 1000.0), 0.0);
        assert!((expected_truncated_erlang(50, 20.0, 1000.0) - 2.5).abs() < 1e-12);
        let w = truncated_poisson(20_000.0, 50);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // conditioned on fewer than 50 arrivals the top of the support dominates
        assert!(w[49] > 0.99);
    }
}
